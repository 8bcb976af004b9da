use super::sinnet::SIZE_MULTIPLE;
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::tensor::{Scalar, Shape, Tensor};

/// Original image dimensions before zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PadRecord {
    pub width: usize,
    pub height: usize,
}

pub fn padded_dim(n: usize) -> usize {
    n.div_ceil(SIZE_MULTIPLE) * SIZE_MULTIPLE
}

/// Zero-pads on the right and bottom up to the next multiples of 16 and
/// returns a (1, 1, H', W') tensor. Pixel coordinates are unchanged.
pub fn pad_image<S: Scalar>(image: &GrayImage) -> Result<(Tensor<S>, PadRecord)> {
    let (w, h) = (image.width(), image.height());
    if w < SIZE_MULTIPLE || h < SIZE_MULTIPLE {
        return Err(Error::InvalidParam(format!(
            "image is {w}x{h}; both sides must be at least {SIZE_MULTIPLE} pixels"
        )));
    }
    let (pw, ph) = (padded_dim(w), padded_dim(h));
    let mut t = Tensor::zeros(Shape::new(1, 1, ph, pw));
    let plane = t.plane_mut(0, 0);
    for y in 0..h {
        for x in 0..w {
            plane[y * pw + x] = S::narrow(f64::from(image.get(x, y)));
        }
    }
    Ok((t, PadRecord { width: w, height: h }))
}

/// Keeps the top-left `record.height x record.width` region of every plane.
pub fn crop_output<S: Scalar>(map: &Tensor<S>, record: PadRecord) -> Result<Tensor<S>> {
    let s = map.shape();
    if record.width > s.width || record.height > s.height {
        return Err(Error::CropTooLarge {
            record_height: record.height,
            record_width: record.width,
            height: s.height,
            width: s.width,
        });
    }
    let out_shape = Shape::new(s.batch, s.channels, record.height, record.width);
    let mut out = Tensor::zeros(out_shape);
    for b in 0..s.batch {
        for c in 0..s.channels {
            let src = map.plane(b, c);
            let dst = out.plane_mut(b, c);
            for y in 0..record.height {
                dst[y * record.width..(y + 1) * record.width]
                    .copy_from_slice(&src[y * s.width..y * s.width + record.width]);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pads_to_multiples_of_16() {
        let img = GrayImage::new(355, 390);
        let (t, rec) = pad_image::<f32>(&img).unwrap();
        assert_eq!(t.shape(), Shape::new(1, 1, 400, 368));
        assert_eq!(rec, PadRecord { width: 355, height: 390 });
    }

    #[test]
    fn aligned_image_unchanged() {
        let img = GrayImage::from_vec(352, 384, (0..352 * 384).map(|i| (i % 7) as f32 / 7.0).collect()).unwrap();
        let (t, _) = pad_image::<f32>(&img).unwrap();
        assert_eq!(t.shape(), Shape::new(1, 1, 384, 352));
        assert_eq!(t.data(), img.data());
    }

    #[test]
    fn crop_round_trips() {
        let img = GrayImage::from_vec(20, 17, (0..340).map(|i| i as f32 / 340.0).collect()).unwrap();
        let (t, rec) = pad_image::<f32>(&img).unwrap();
        assert_eq!(t.shape(), Shape::new(1, 1, 32, 32));
        assert_eq!(t.at(0, 0, 16, 19), img.get(19, 16));
        assert_eq!(t.at(0, 0, 20, 25), 0.0);
        let back = crop_output(&t, rec).unwrap();
        assert_eq!(GrayImage::from_tensor(&back, 0).unwrap(), img);
    }

    #[test]
    fn crop_of_constant_is_constant() {
        let t = Tensor::<f32>::full(Shape::new(2, 1, 32, 48), 0.3);
        let c = crop_output(&t, PadRecord { width: 40, height: 17 }).unwrap();
        assert_eq!(c, Tensor::full(Shape::new(2, 1, 17, 40), 0.3));
    }

    #[test]
    fn crop_larger_than_map_fails() {
        let t = Tensor::<f32>::zeros(Shape::new(1, 1, 16, 16));
        assert!(matches!(
            crop_output(&t, PadRecord { width: 17, height: 16 }),
            Err(Error::CropTooLarge { .. })
        ));
    }

    #[test]
    fn tiny_image_rejected() {
        assert!(pad_image::<f32>(&GrayImage::new(15, 40)).is_err());
    }
}
