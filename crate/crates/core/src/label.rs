//! Ground-truth singular points and their rasterized label masks.
//!
//! Each annotated point becomes a filled disk in the mask of its type. A pixel
//! belongs to the disk when its squared distance to the point is strictly
//! below [`LABEL_RADIUS`]², the same region inside which a detection counts as
//! correct during scoring.
//!
//! # Annotation format
//!
//! Plain text, one point per line: `<x> <y> <core|delta>`, with `x` the
//! column and `y` the row, both 0-indexed from the top-left pixel. Blank lines
//! and anything after `#` are ignored.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::image::Mask;

pub const LABEL_RADIUS: i64 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PointType {
    Core,
    Delta,
}

impl PointType {
    pub const ALL: [PointType; 2] = [PointType::Core, PointType::Delta];

    pub fn as_str(self) -> &'static str {
        match self {
            PointType::Core => "core",
            PointType::Delta => "delta",
        }
    }
}

impl fmt::Display for PointType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PointType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "core" => Ok(PointType::Core),
            "delta" => Ok(PointType::Delta),
            other => Err(format!("unknown point type `{other}` (expected `core` or `delta`)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SingularPoint {
    pub x: i32,
    pub y: i32,
    pub ptype: PointType,
}

impl SingularPoint {
    pub const fn new(x: i32, y: i32, ptype: PointType) -> Self {
        Self { x, y, ptype }
    }

    pub const fn core(x: i32, y: i32) -> Self {
        Self::new(x, y, PointType::Core)
    }

    pub const fn delta(x: i32, y: i32) -> Self {
        Self::new(x, y, PointType::Delta)
    }

    pub fn in_bounds(&self, width: usize, height: usize) -> bool {
        self.x >= 0 && self.y >= 0 && (self.x as usize) < width && (self.y as usize) < height
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMaskPair {
    pub core: Mask,
    pub delta: Mask,
}

impl LabelMaskPair {
    pub fn get(&self, ptype: PointType) -> &Mask {
        match ptype {
            PointType::Core => &self.core,
            PointType::Delta => &self.delta,
        }
    }
}

/// Draws one disk per point into the mask of its type.
pub fn rasterize(points: &[SingularPoint], width: usize, height: usize) -> Result<LabelMaskPair> {
    let mut pair = LabelMaskPair {
        core: Mask::new(width, height),
        delta: Mask::new(width, height),
    };
    let r = LABEL_RADIUS;
    for p in points {
        if !p.in_bounds(width, height) {
            return Err(Error::PointOutOfBounds {
                x: p.x,
                y: p.y,
                width,
                height,
            });
        }
        let mask = match p.ptype {
            PointType::Core => &mut pair.core,
            PointType::Delta => &mut pair.delta,
        };
        let (cx, cy) = (i64::from(p.x), i64::from(p.y));
        let y0 = (cy - r).max(0);
        let y1 = (cy + r).min(height as i64 - 1);
        let x0 = (cx - r).max(0);
        let x1 = (cx + r).min(width as i64 - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dx, dy) = (x - cx, y - cy);
                if dx * dx + dy * dy < r * r {
                    mask.set(x as usize, y as usize, true);
                }
            }
        }
    }
    Ok(pair)
}

/// Parses the annotation text format. `origin` names the source in errors.
pub fn parse_annotations(text: &str, origin: &Path) -> Result<Vec<SingularPoint>> {
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |reason: String| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            reason,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(err(format!("expected `<x> <y> <core|delta>`, got `{line}`")));
        }
        let x = fields[0]
            .parse::<i32>()
            .map_err(|e| err(format!("bad x coordinate `{}`: {e}", fields[0])))?;
        let y = fields[1]
            .parse::<i32>()
            .map_err(|e| err(format!("bad y coordinate `{}`: {e}", fields[1])))?;
        let ptype = fields[2].parse::<PointType>().map_err(err)?;
        points.push(SingularPoint { x, y, ptype });
    }
    Ok(points)
}

pub fn format_annotations(points: &[SingularPoint]) -> String {
    let mut s = String::new();
    for p in points {
        s.push_str(&format!("{} {} {}\n", p.x, p.y, p.ptype));
    }
    s
}

pub fn load_annotations(path: &Path) -> Result<Vec<SingularPoint>> {
    let text = std::fs::read_to_string(path)?;
    parse_annotations(&text, path)
}

pub fn save_annotations(points: &[SingularPoint], path: &Path) -> Result<()> {
    write_atomic(path, format_annotations(points).as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lattice_count(cx: i64, cy: i64, w: i64, h: i64) -> usize {
        let mut n = 0;
        for y in 0..h {
            for x in 0..w {
                if (x - cx).pow(2) + (y - cy).pow(2) < 100 {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn empty_list_gives_empty_masks() {
        let m = rasterize(&[], 40, 30).unwrap();
        assert_eq!(m.core.count(), 0);
        assert_eq!(m.delta.count(), 0);
        assert_eq!((m.core.width(), m.core.height()), (40, 30));
    }

    #[test]
    fn centered_core_disk_matches_lattice_count() {
        let m = rasterize(&[SingularPoint::core(50, 50)], 100, 100).unwrap();
        let expected = lattice_count(50, 50, 100, 100);
        assert_eq!(m.core.count(), expected);
        assert_eq!(expected, 305);
        assert_eq!(m.delta.count(), 0);
    }

    #[test]
    fn corner_core_is_quarter_disk() {
        let m = rasterize(&[SingularPoint::core(0, 0)], 100, 100).unwrap();
        assert_eq!(m.core.count(), lattice_count(0, 0, 100, 100));
        assert_eq!(m.core.count(), 86);
    }

    #[test]
    fn out_of_bounds_point_is_rejected() {
        assert!(matches!(
            rasterize(&[SingularPoint::delta(100, 5)], 100, 100),
            Err(Error::PointOutOfBounds { x: 100, .. })
        ));
        assert!(rasterize(&[SingularPoint::delta(-1, 5)], 100, 100).is_err());
    }

    #[test]
    fn parse_basic_line() {
        let pts = parse_annotations("12 34 core\n", Path::new("a.txt")).unwrap();
        assert_eq!(pts, vec![SingularPoint::core(12, 34)]);
    }

    #[test]
    fn parse_skips_comments_and_blanks() {
        let text = "# header\n\n  5 6 delta  # trailing\n7 8 core\n";
        let pts = parse_annotations(text, Path::new("a.txt")).unwrap();
        assert_eq!(pts, vec![SingularPoint::delta(5, 6), SingularPoint::core(7, 8)]);
        assert!(parse_annotations("", Path::new("a.txt")).unwrap().is_empty());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_annotations("1 2 core\n3 4 whorl\n", Path::new("f.txt")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(err.to_string().contains("whorl"));
        let err = parse_annotations("1 2\n", Path::new("f.txt")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = parse_annotations("\n\nx 2 core\n", Path::new("f.txt")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pts.txt");
        let pts = vec![SingularPoint::core(1, 2), SingularPoint::delta(30, 40), SingularPoint::core(0, 0)];
        save_annotations(&pts, &path).unwrap();
        assert_eq!(load_annotations(&path).unwrap(), pts);
    }

    fn arb_point(w: i32, h: i32) -> impl Strategy<Value = SingularPoint> {
        (0..w, 0..h, any::<bool>()).prop_map(|(x, y, c)| SingularPoint {
            x,
            y,
            ptype: if c { PointType::Core } else { PointType::Delta },
        })
    }

    proptest! {
        #[test]
        fn permutation_and_duplication_invariant(
            pts in prop::collection::vec(arb_point(48, 40), 0..6),
            seed in any::<u64>(),
        ) {
            let base = rasterize(&pts, 48, 40).unwrap();
            let mut shuffled = pts.clone();
            let n = shuffled.len();
            if n > 1 {
                shuffled.rotate_left((seed as usize) % n);
                shuffled.reverse();
            }
            prop_assert_eq!(&rasterize(&shuffled, 48, 40).unwrap(), &base);
            let mut doubled = pts.clone();
            doubled.extend_from_slice(&pts);
            prop_assert_eq!(&rasterize(&doubled, 48, 40).unwrap(), &base);
        }

        #[test]
        fn annotation_text_round_trips(pts in prop::collection::vec(arb_point(400, 400), 0..10)) {
            let text = format_annotations(&pts);
            prop_assert_eq!(parse_annotations(&text, Path::new("p")).unwrap(), pts);
        }
    }
}
