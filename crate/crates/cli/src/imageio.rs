//! Reading and writing 8-bit images. PGM/PPM and PNG are supported; the
//! format is chosen from the file extension.

use std::io::Cursor;
use std::path::Path;

use image::codecs::pnm::{PnmSubtype, SampleEncoding};
use image::{DynamicImage, ImageBuffer, ImageOutputFormat, Luma, Rgb};
use sinnet_core::fsutil::write_atomic;
use sinnet_core::{GrayImage, Mask};

use crate::{io_err, CliError, Result};

/// Loads any supported image as grayscale with values in `[0, 1]`.
pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|source| CliError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let luma = img.to_luma8();
    let (w, h) = luma.dimensions();
    Ok(GrayImage::from_u8(w as usize, h as usize, luma.as_raw())?)
}

fn output_format(path: &Path, color: bool) -> Result<ImageOutputFormat> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "png" => Ok(ImageOutputFormat::Png),
        "pgm" if !color => Ok(ImageOutputFormat::Pnm(PnmSubtype::Graymap(SampleEncoding::Binary))),
        "ppm" if color => Ok(ImageOutputFormat::Pnm(PnmSubtype::Pixmap(SampleEncoding::Binary))),
        _ => Err(CliError::Usage(format!(
            "{}: unsupported output extension (use .png or .{})",
            path.display(),
            if color { "ppm" } else { "pgm" }
        ))),
    }
}

fn save(img: DynamicImage, path: &Path, color: bool) -> Result<()> {
    let format = output_format(path, color)?;
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, format).map_err(|source| CliError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    write_atomic(path, buf.get_ref()).map_err(io_err(path))
}

fn gray_buffer(width: usize, height: usize, bytes: Vec<u8>) -> DynamicImage {
    let buf = ImageBuffer::<Luma<u8>, _>::from_raw(width as u32, height as u32, bytes).expect("buffer size");
    DynamicImage::ImageLuma8(buf)
}

pub fn save_gray(img: &GrayImage, path: &Path) -> Result<()> {
    save(gray_buffer(img.width(), img.height(), img.to_u8()), path, false)
}

/// Writes a mask as black background with white foreground.
pub fn save_mask(mask: &Mask, path: &Path) -> Result<()> {
    save(gray_buffer(mask.width(), mask.height(), mask.to_u8()), path, false)
}

pub fn save_rgb(img: &ImageBuffer<Rgb<u8>, Vec<u8>>, path: &Path) -> Result<()> {
    save(DynamicImage::ImageRgb8(img.clone()), path, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_round_trip_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let bytes: Vec<u8> = (0..20 * 17).map(|i| (i * 7 % 256) as u8).collect();
        let img = GrayImage::from_u8(20, 17, &bytes).unwrap();
        for name in ["a.pgm", "a.png"] {
            let p = dir.path().join(name);
            save_gray(&img, &p).unwrap();
            let back = load_gray(&p).unwrap();
            assert_eq!(back.to_u8(), bytes, "{name}");
        }
    }

    #[test]
    fn unknown_extension_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::new(4, 4);
        assert!(save_gray(&img, &dir.path().join("a.jpg")).is_err());
        assert!(save_gray(&img, &dir.path().join("a.ppm")).is_err());
        assert!(!dir.path().join("a.jpg").exists());
    }
}
