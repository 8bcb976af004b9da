//! Blob localization: threshold a probability map, label connected
//! components, keep the ones whose area falls inside `[min_area, max_area]`
//! and report their centroids as singular points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{GrayImage, Mask};
use crate::label::{PointType, SingularPoint};

/// Which neighbours count as connected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    /// N, S, E and W neighbours.
    Four,
    /// All eight surrounding pixels.
    Eight,
}

impl TryFrom<u8> for Connectivity {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, Self::Error> {
        match v {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(format!("connectivity must be 4 or 8, got {other}")),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlobParams {
    /// Pixels with probability `>= threshold` are foreground.
    pub threshold: f64,
    /// Smallest accepted blob area in pixels, inclusive.
    pub min_area: usize,
    /// Largest accepted blob area in pixels, inclusive.
    pub max_area: usize,
    pub connectivity: Connectivity,
    /// More surviving blobs than this for one type means none are reported.
    pub max_points_per_type: usize,
}

impl Default for BlobParams {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            min_area: 100,
            max_area: 800,
            connectivity: Connectivity::Eight,
            max_points_per_type: 2,
        }
    }
}

impl BlobParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidParam(format!(
                "blob threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        if self.min_area == 0 || self.min_area > self.max_area {
            return Err(Error::InvalidParam(format!(
                "blob areas need 0 < min_area <= max_area, got {} and {}",
                self.min_area, self.max_area
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    pub label_id: u32,
    pub area: usize,
    /// Mean member coordinate `(x, y)`.
    pub centroid: (f64, f64),
    /// Inclusive `(x0, y0, x1, y1)`.
    pub bounding_box: (usize, usize, usize, usize),
}

#[derive(Clone, Debug)]
pub struct Labeling {
    pub width: usize,
    pub height: usize,
    /// 0 for background, otherwise the 1-based id of the component. Ids are
    /// assigned in raster order of each component's first pixel.
    pub labels: Vec<u32>,
    pub blobs: Vec<Blob>,
}

pub fn binarize(map: &GrayImage, threshold: f64) -> Mask {
    let data = map.data().iter().map(|&v| f64::from(v) >= threshold).collect();
    Mask::from_vec(map.width(), map.height(), data).expect("same dims")
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

/// Two-pass union-find labeling.
pub fn connected_components(mask: &Mask, connectivity: Connectivity) -> Labeling {
    let (w, h) = (mask.width(), mask.height());
    let mut provisional = vec![0u32; w * h];
    // parent[0] is the background sentinel
    let mut parent: Vec<u32> = vec![0];

    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let mut neighbours = [0u32; 4];
            let mut n = 0;
            let mut look = |nx: usize, ny: usize| {
                let l = provisional[ny * w + nx];
                if l != 0 {
                    neighbours[n] = l;
                    n += 1;
                }
            };
            if x > 0 {
                look(x - 1, y);
            }
            if y > 0 {
                look(x, y - 1);
                if connectivity == Connectivity::Eight {
                    if x > 0 {
                        look(x - 1, y - 1);
                    }
                    if x + 1 < w {
                        look(x + 1, y - 1);
                    }
                }
            }
            let label = if n == 0 {
                let l = parent.len() as u32;
                parent.push(l);
                l
            } else {
                let first = neighbours[0];
                for &other in &neighbours[1..n] {
                    union(&mut parent, first, other);
                }
                first
            };
            provisional[y * w + x] = label;
        }
    }

    // Resolve roots and renumber in raster order of first appearance.
    let mut remap = vec![0u32; parent.len()];
    let mut labels = vec![0u32; w * h];
    let mut acc: Vec<(usize, f64, f64, usize, usize, usize, usize)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let p = provisional[y * w + x];
            if p == 0 {
                continue;
            }
            let root = find(&mut parent, p) as usize;
            if remap[root] == 0 {
                acc.push((0, 0.0, 0.0, x, y, x, y));
                remap[root] = acc.len() as u32;
            }
            let id = remap[root];
            labels[y * w + x] = id;
            let a = &mut acc[id as usize - 1];
            a.0 += 1;
            a.1 += x as f64;
            a.2 += y as f64;
            a.3 = a.3.min(x);
            a.4 = a.4.min(y);
            a.5 = a.5.max(x);
            a.6 = a.6.max(y);
        }
    }

    let blobs = acc
        .into_iter()
        .enumerate()
        .map(|(i, (area, sx, sy, x0, y0, x1, y1))| Blob {
            label_id: i as u32 + 1,
            area,
            centroid: (sx / area as f64, sy / area as f64),
            bounding_box: (x0, y0, x1, y1),
        })
        .collect();
    Labeling {
        width: w,
        height: h,
        labels,
        blobs,
    }
}

/// Blobs of the thresholded map whose area lies inside the inclusive window.
pub fn filtered_blobs(map: &GrayImage, params: &BlobParams) -> Vec<Blob> {
    let mask = binarize(map, params.threshold);
    connected_components(&mask, params.connectivity)
        .blobs
        .into_iter()
        .filter(|b| b.area >= params.min_area && b.area <= params.max_area)
        .collect()
}

/// Centroids of the surviving blobs, rounded half away from zero.
///
/// If more than `max_points_per_type` blobs survive, the map is considered
/// unreliable and no points are returned for this type.
pub fn detect_points(map: &GrayImage, params: &BlobParams, ptype: PointType) -> Vec<SingularPoint> {
    let blobs = filtered_blobs(map, params);
    if blobs.len() > params.max_points_per_type {
        return Vec::new();
    }
    blobs
        .iter()
        .map(|b| SingularPoint {
            x: b.centroid.0.round() as i32,
            y: b.centroid.1.round() as i32,
            ptype,
        })
        .collect()
}

/// Core points from `core_map` followed by delta points from `delta_map`.
pub fn detect_both(core_map: &GrayImage, delta_map: &GrayImage, params: &BlobParams) -> Vec<SingularPoint> {
    let mut points = detect_points(core_map, params, PointType::Core);
    points.extend(detect_points(delta_map, params, PointType::Delta));
    points
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map_from_mask(mask: &Mask) -> GrayImage {
        GrayImage::from_vec(
            mask.width(),
            mask.height(),
            mask.data().iter().map(|&b| if b { 0.9 } else { 0.1 }).collect(),
        )
        .unwrap()
    }

    fn fill_rect(mask: &mut Mask, x0: usize, y0: usize, w: usize, h: usize) {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                mask.set(x, y, true);
            }
        }
    }

    #[test]
    fn binarize_boundary() {
        let map = GrayImage::from_vec(3, 1, vec![0.49, 0.5, 0.51]).unwrap();
        assert_eq!(binarize(&map, 0.5).data(), &[false, true, true]);
        assert_eq!(binarize(&GrayImage::new(4, 4), 0.5).count(), 0);
    }

    #[test]
    fn square_blob_centroid() {
        let mut m = Mask::new(64, 64);
        fill_rect(&mut m, 20, 30, 12, 12);
        let lab = connected_components(&m, Connectivity::Eight);
        assert_eq!(lab.blobs.len(), 1);
        let b = &lab.blobs[0];
        assert_eq!(b.area, 144);
        assert_eq!(b.centroid, (25.5, 35.5));
        assert_eq!(b.bounding_box, (20, 30, 31, 41));
    }

    #[test]
    fn diagonal_pixels_and_connectivity() {
        let mut m = Mask::new(4, 4);
        m.set(1, 1, true);
        m.set(2, 2, true);
        assert_eq!(connected_components(&m, Connectivity::Eight).blobs.len(), 1);
        assert_eq!(connected_components(&m, Connectivity::Four).blobs.len(), 2);
    }

    #[test]
    fn u_shape_merges_provisional_labels() {
        let m = Mask::from_fn(5, 3, |x, y| x == 0 || x == 4 || y == 2);
        let lab = connected_components(&m, Connectivity::Four);
        assert_eq!(lab.blobs.len(), 1);
        assert_eq!(lab.blobs[0].area, 9);
        assert!(lab.labels.iter().all(|&l| l <= 1));
    }

    #[test]
    fn area_window_is_inclusive() {
        let p = BlobParams::default();
        for (w, h, keep) in [(10, 5, false), (10, 10, true), (20, 40, true), (30, 30, false), (9, 11, false), (801, 1, false)] {
            let mut m = Mask::new(900, 60);
            fill_rect(&mut m, 3, 3, w, h);
            let pts = detect_points(&map_from_mask(&m), &p, PointType::Core);
            assert_eq!(!pts.is_empty(), keep, "{w}x{h}");
        }
    }

    #[test]
    fn three_blobs_are_dropped_two_are_kept() {
        let p = BlobParams::default();
        let mut m = Mask::new(120, 40);
        fill_rect(&mut m, 2, 2, 20, 20);
        fill_rect(&mut m, 40, 2, 20, 20);
        let two = detect_points(&map_from_mask(&m), &p, PointType::Delta);
        assert_eq!(two.len(), 2);
        fill_rect(&mut m, 80, 2, 20, 20);
        assert!(detect_points(&map_from_mask(&m), &p, PointType::Delta).is_empty());
    }

    #[test]
    fn centroids_round_half_away_from_zero() {
        let p = BlobParams::default();
        let mut m = Mask::new(64, 64);
        // 10x15 block: centroid (14.5, 17.0)
        fill_rect(&mut m, 10, 10, 10, 15);
        let pts = detect_points(&map_from_mask(&m), &p, PointType::Core);
        assert_eq!(pts, vec![SingularPoint::core(15, 17)]);
    }

    #[test]
    fn params_validation() {
        assert!(BlobParams::default().validate().is_ok());
        let bad = BlobParams {
            min_area: 900,
            ..BlobParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = BlobParams {
            threshold: 1.0,
            ..BlobParams::default()
        };
        assert!(bad.validate().is_err());
        assert!(Connectivity::try_from(6).is_err());
    }
}
