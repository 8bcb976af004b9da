//! Synthetic ridge-pattern images with known singular points.
//!
//! These are not realistic fingerprints. A core is drawn as concentric or
//! single-arm spiral ridges around its center, a delta as the three-sector
//! level sets of `r^1.5 cos(1.5 θ)`, and the remainder as straight stripes.
//! The three patterns are blended with Gaussian weights around each point and
//! seeded noise is added. Output is fully determined by `(seed, index, size)`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::image::GrayImage;
use crate::label::{SingularPoint, LABEL_RADIUS};

/// Ridge period in pixels.
const PERIOD: f64 = 7.0;
/// Width of the Gaussian blend around each singular point.
const BLEND_SIGMA: f64 = 13.0;
const BACKGROUND_WEIGHT: f64 = 0.25;
const NOISE_STD: f64 = 0.05;
/// Minimum distance between the core and the delta.
const MIN_SEPARATION: f64 = 36.0;
/// Probability that an image also contains a delta.
const DELTA_PROBABILITY: f64 = 0.75;

#[derive(Clone, Debug)]
pub struct SynthSample {
    pub image: GrayImage,
    pub points: Vec<SingularPoint>,
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Renders image `index` of the corpus identified by `seed`.
pub fn generate_one(seed: u64, index: usize, size: usize) -> SynthSample {
    let mut rng = sample_rng(seed, index);
    let margin = (LABEL_RADIUS + 4) as f64;
    let span = (size as f64 - 2.0 * margin).max(1.0);
    let pick = |rng: &mut ChaCha8Rng| (margin + rng.gen::<f64>() * span).floor();

    let core = (pick(&mut rng), pick(&mut rng));
    let mut delta = None;
    if rng.gen::<f64>() < DELTA_PROBABILITY {
        for _ in 0..64 {
            let d = (pick(&mut rng), pick(&mut rng));
            if ((d.0 - core.0).powi(2) + (d.1 - core.1).powi(2)).sqrt() >= MIN_SEPARATION {
                delta = Some(d);
                break;
            }
        }
    }
    let spiral_arms = f64::from(rng.gen_range(0..2u8));
    let core_rot = rng.gen::<f64>() * 2.0 * PI;
    let delta_rot = rng.gen::<f64>() * 2.0 * PI;
    let stripe_angle = rng.gen::<f64>() * PI;
    let stripe_phase = rng.gen::<f64>() * 2.0 * PI;
    let noise = Normal::new(0.0, NOISE_STD).expect("finite std");

    let omega = 2.0 * PI / PERIOD;
    // delta phase scale so the ridge spacing is PERIOD at the label radius
    let delta_scale = omega / (1.5 * (LABEL_RADIUS as f64).sqrt());
    let (sa, ca) = stripe_angle.sin_cos();

    let mut image = GrayImage::new(size, size);
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64, y as f64);
            let stripes = (omega * (fx * ca + fy * sa) + stripe_phase).cos();
            let mut num = BACKGROUND_WEIGHT * stripes;
            let mut den = BACKGROUND_WEIGHT;

            let (dx, dy) = (fx - core.0, fy - core.1);
            let r2 = dx * dx + dy * dy;
            let wc = (-r2 / (2.0 * BLEND_SIGMA * BLEND_SIGMA)).exp();
            let theta = dy.atan2(dx) + core_rot;
            num += wc * (omega * r2.sqrt() + spiral_arms * theta).cos();
            den += wc;

            if let Some(d) = delta {
                let (dx, dy) = (fx - d.0, fy - d.1);
                let r2 = dx * dx + dy * dy;
                let wd = (-r2 / (2.0 * BLEND_SIGMA * BLEND_SIGMA)).exp();
                // wrap into (-π, π] so the three-fold pattern stays continuous
                let mut theta = dy.atan2(dx) + delta_rot;
                while theta > PI {
                    theta -= 2.0 * PI;
                }
                let level = r2.powf(0.75) * (1.5 * theta).cos();
                num += wd * (delta_scale * level).cos();
                den += wd;
            }

            let v = 0.5 + 0.35 * num / den + noise.sample(&mut rng);
            image.set(x, y, v.clamp(0.0, 1.0) as f32);
        }
    }

    let mut points = vec![SingularPoint::core(core.0 as i32, core.1 as i32)];
    if let Some(d) = delta {
        points.push(SingularPoint::delta(d.0 as i32, d.1 as i32));
    }
    SynthSample { image, points }
}

pub fn generate(count: usize, seed: u64, size: usize) -> Vec<SynthSample> {
    (0..count).map(|i| generate_one(seed, i, size)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::{rasterize, PointType};

    #[test]
    fn deterministic_per_seed() {
        let a = generate(3, 7, 64);
        let b = generate(3, 7, 64);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image, y.image);
            assert_eq!(x.points, y.points);
        }
        let c = generate(1, 8, 64);
        assert_ne!(c[0].image, a[0].image);
    }

    #[test]
    fn points_in_bounds_and_labels_are_full_disks() {
        for s in generate(12, 3, 96) {
            assert!(s.points.iter().all(|p| p.in_bounds(96, 96)));
            assert_eq!(s.points.iter().filter(|p| p.ptype == PointType::Core).count(), 1);
            let masks = rasterize(&s.points, 96, 96).unwrap();
            assert_eq!(masks.core.count(), 305);
            let deltas = s.points.iter().filter(|p| p.ptype == PointType::Delta).count();
            assert_eq!(masks.delta.count(), 305 * deltas);
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
