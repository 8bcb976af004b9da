//! Draws ground truth and detections on top of a fingerprint image.
//!
//! Ground-truth points get a `+` marker and a circle of the acceptance radius;
//! detections get an `x` marker. A detection inside the circle of a
//! same-type ground-truth point counts as correct.

use image::{ImageBuffer, Rgb, RgbImage};
use sinnet_core::label::LABEL_RADIUS;
use sinnet_core::{GrayImage, SingularPoint};

use crate::{CliError, Result};

const MARKER_ARM: i64 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OverlayStyle {
    pub truth: [u8; 3],
    pub detection: [u8; 3],
}

impl Default for OverlayStyle {
    fn default() -> Self {
        Self {
            truth: [255, 0, 0],
            detection: [0, 255, 0],
        }
    }
}

/// Parses `rrggbb`, with or without a leading `#`.
pub fn parse_color(s: &str) -> Result<[u8; 3]> {
    let hex = s.strip_prefix('#').unwrap_or(s);
    let bad = || CliError::Usage(format!("bad color `{s}`; expected rrggbb"));
    if hex.len() != 6 || !hex.is_ascii() {
        return Err(bad());
    }
    let mut out = [0u8; 3];
    for (i, c) in out.iter_mut().enumerate() {
        *c = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
    }
    Ok(out)
}

pub struct Overlay {
    pub image: RgbImage,
    /// Points lying outside the image; whatever part of their marker falls
    /// inside is still drawn.
    pub clipped: Vec<SingularPoint>,
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, Rgb(color));
    }
}

/// Pixels whose distance to the center rounds to the acceptance radius.
fn circle(img: &mut RgbImage, cx: i64, cy: i64, color: [u8; 3]) {
    let r = LABEL_RADIUS;
    for dy in -r - 1..=r + 1 {
        for dx in -r - 1..=r + 1 {
            let d = ((dx * dx + dy * dy) as f64).sqrt();
            if (d - r as f64).abs() < 0.5 {
                put(img, cx + dx, cy + dy, color);
            }
        }
    }
}

pub fn render(base: &GrayImage, detections: &[SingularPoint], truth: &[SingularPoint], style: &OverlayStyle) -> Overlay {
    let (w, h) = (base.width(), base.height());
    let gray = base.to_u8();
    let mut image: RgbImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let v = gray[y as usize * w + x as usize];
        Rgb([v, v, v])
    });
    let mut clipped = Vec::new();
    for p in truth.iter().chain(detections) {
        if !p.in_bounds(w, h) {
            clipped.push(*p);
        }
    }
    for p in truth {
        let (x, y) = (i64::from(p.x), i64::from(p.y));
        circle(&mut image, x, y, style.truth);
        for k in -MARKER_ARM..=MARKER_ARM {
            put(&mut image, x + k, y, style.truth);
            put(&mut image, x, y + k, style.truth);
        }
    }
    for p in detections {
        let (x, y) = (i64::from(p.x), i64::from(p.y));
        for k in -MARKER_ARM..=MARKER_ARM {
            put(&mut image, x + k, y + k, style.detection);
            put(&mut image, x + k, y - k, style.detection);
        }
    }
    Overlay { image, clipped }
}
