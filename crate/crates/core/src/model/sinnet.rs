use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::inception::{ConvLayer, Inception, InceptionSpec};
use super::pad::{crop_output, pad_image};
use crate::autograd::{Eager, Exec, ParamSet};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::label::PointType;
use crate::tensor::{Scalar, Tensor};

/// Encoder stage widths; the first four stages are followed by 2x2 pooling.
pub const ENCODER_FILTERS: [usize; 5] = [64, 128, 256, 512, 1024];
/// Decoder stage widths, each stage preceded by 2x2 upsampling.
pub const DECODER_FILTERS: [usize; 4] = [512, 256, 128, 64];
/// Filters of the 3x3 convolution ahead of the single-channel output.
pub const HEAD_FILTERS: usize = 2;
/// Spatial dims must be divisible by this (four pooling stages).
pub const SIZE_MULTIPLE: usize = 16;
pub const DEFAULT_DROPOUT: f64 = 0.5;

/// Stochastic regularization applied after the bottleneck while training.
pub struct Dropout<'r> {
    pub rate: f64,
    pub rng: &'r mut dyn RngCore,
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub stages: Vec<Inception>,
    pub head: ConvLayer,
    pub output: ConvLayer,
}

/// Shared inception encoder with one decoder for cores and one for deltas.
///
/// Decoder stage `k` upsamples the previous output and concatenates the
/// pre-pooling output of encoder stage `5 - k` behind it before running its
/// inception block.
#[derive(Clone, Debug)]
pub struct SinNet<S = f32> {
    width_divisor: usize,
    params: ParamSet<S>,
    encoder: Vec<Inception>,
    core: Decoder,
    delta: Decoder,
}

fn scaled(base: usize, divisor: usize) -> Result<usize> {
    if divisor == 0 || !base.is_multiple_of(divisor) || !(base / divisor).is_multiple_of(4) {
        return Err(Error::WidthDivisor { divisor, base });
    }
    Ok(base / divisor)
}

fn build_decoder<S: Scalar>(params: &mut ParamSet<S>, branch: &str, encoder: &[Inception], divisor: usize) -> Result<Decoder> {
    let mut stages = Vec::with_capacity(DECODER_FILTERS.len());
    let mut prev = encoder.last().expect("encoder stages").out_channels();
    for (k, &base) in DECODER_FILTERS.iter().enumerate() {
        let skip = encoder[encoder.len() - 2 - k].out_channels();
        let spec = InceptionSpec::new(scaled(base, divisor)?)?;
        let block = Inception::new(params, &format!("{branch}.dec{}", k + 1), prev + skip, spec);
        prev = block.out_channels();
        stages.push(block);
    }
    let head = ConvLayer::new(params, &format!("{branch}.head"), prev, HEAD_FILTERS, 3);
    let output = ConvLayer::new(params, &format!("{branch}.out"), HEAD_FILTERS, 1, 1);
    Ok(Decoder { stages, head, output })
}

/// Parameter name with the branch prefix removed, so that both decoders draw
/// the same initial values.
fn init_key(name: &str) -> &str {
    name.strip_prefix("core.")
        .or_else(|| name.strip_prefix("delta."))
        .unwrap_or(name)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

impl<S: Scalar> SinNet<S> {
    /// Builds the architecture with zeroed parameters. Every filter count is
    /// divided by `width_divisor`; the 2- and 1-filter output convolutions are
    /// not scaled.
    pub fn new(width_divisor: usize) -> Result<Self> {
        let mut params = ParamSet::new();
        let mut encoder = Vec::with_capacity(ENCODER_FILTERS.len());
        let mut in_ch = 1;
        for (i, &base) in ENCODER_FILTERS.iter().enumerate() {
            let spec = InceptionSpec::new(scaled(base, width_divisor)?)?;
            let block = Inception::new(&mut params, &format!("enc{}", i + 1), in_ch, spec);
            in_ch = block.out_channels();
            encoder.push(block);
        }
        let core = build_decoder(&mut params, "core", &encoder, width_divisor)?;
        let delta = build_decoder(&mut params, "delta", &encoder, width_divisor)?;
        let net = Self {
            width_divisor,
            params,
            encoder,
            core,
            delta,
        };
        net.check_channel_accounting()?;
        Ok(net)
    }

    fn check_channel_accounting(&self) -> Result<()> {
        for dec in [&self.core, &self.delta] {
            let mut prev = self.encoder[4].out_channels();
            for (k, stage) in dec.stages.iter().enumerate() {
                let expected = prev + self.encoder[3 - k].out_channels();
                if stage.in_channels != expected {
                    return Err(Error::DimMismatch {
                        op: "SinNet",
                        dim: "decoder input channels",
                        expected,
                        actual: stage.in_channels,
                    });
                }
                prev = stage.out_channels();
            }
        }
        Ok(())
    }

    pub fn width_divisor(&self) -> usize {
        self.width_divisor
    }

    pub fn params(&self) -> &ParamSet<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<S> {
        &mut self.params
    }

    pub fn encoder(&self) -> &[Inception] {
        &self.encoder
    }

    pub fn decoder(&self, branch: PointType) -> &Decoder {
        match branch {
            PointType::Core => &self.core,
            PointType::Delta => &self.delta,
        }
    }

    /// Fills convolution weights from a zero-mean normal with standard
    /// deviation `sqrt(2 / fan_in)` and zeroes every bias. Each tensor gets its
    /// own stream keyed by `seed` and its branch-independent name.
    pub fn init_weights(&mut self, seed: u64) {
        for p in self.params.iter_mut() {
            let shape = p.value.shape();
            if p.name.ends_with(".bias") {
                p.value.fill(S::ZERO);
                continue;
            }
            let fan_in = shape.channels * shape.height * shape.width;
            let std = (2.0 / fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(init_key(&p.name)));
            for v in p.value.data_mut() {
                *v = S::narrow(normal.sample(&mut rng));
            }
        }
    }

    pub fn check_input(&self, shape: crate::tensor::Shape) -> Result<()> {
        if shape.channels != 1 {
            return Err(Error::DimMismatch {
                op: "SinNet",
                dim: "input channels",
                expected: 1,
                actual: shape.channels,
            });
        }
        if !shape.height.is_multiple_of(SIZE_MULTIPLE) || !shape.width.is_multiple_of(SIZE_MULTIPLE) || shape.height == 0 || shape.width == 0 {
            return Err(Error::NotPadded {
                height: shape.height,
                width: shape.width,
            });
        }
        Ok(())
    }

    /// Runs the network on a (B, 1, H, W) image batch and returns the core and
    /// delta probability maps, each (B, 1, H, W).
    pub fn forward<E: Exec<S>>(&self, exec: &mut E, image: &E::Value, dropout: Option<Dropout<'_>>) -> Result<(E::Value, E::Value)> {
        self.check_input(exec.shape(image))?;

        let mut skips = Vec::with_capacity(4);
        let mut x = self.encoder[0].forward(exec, image)?;
        for stage in &self.encoder[1..] {
            let pooled = exec.maxpool2(&x)?;
            skips.push(x);
            x = stage.forward(exec, &pooled)?;
        }
        let bottleneck = match dropout {
            Some(d) => exec.dropout(&x, d.rate, true, d.rng)?,
            None => x,
        };

        let core = self.decode(exec, &self.core, &bottleneck, &skips)?;
        let delta = self.decode(exec, &self.delta, &bottleneck, &skips)?;
        Ok((core, delta))
    }

    fn decode<E: Exec<S>>(&self, exec: &mut E, dec: &Decoder, bottleneck: &E::Value, skips: &[E::Value]) -> Result<E::Value> {
        let mut x = None;
        for (k, stage) in dec.stages.iter().enumerate() {
            let up = exec.upsample2(x.as_ref().unwrap_or(bottleneck));
            let cat = exec.concat_channels(&[&up, &skips[skips.len() - 1 - k]])?;
            x = Some(stage.forward(exec, &cat)?);
        }
        let x = x.expect("decoder stages");
        let h = dec.head.forward_relu(exec, &x)?;
        let logits = dec.output.forward(exec, &h)?;
        Ok(exec.sigmoid(&logits))
    }

    /// Inference-mode forward pass without gradient bookkeeping.
    pub fn predict(&self, image: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
        let mut exec = Eager::new(&self.params);
        let x = exec.input(image.clone());
        let (c, d) = self.forward(&mut exec, &x, None)?;
        Ok((c.into_owned(), d.into_owned()))
    }

    /// Pads `image`, runs inference and crops the core and delta probability
    /// maps back to the image's size.
    pub fn probability_maps(&self, image: &GrayImage) -> Result<(GrayImage, GrayImage)> {
        let (x, record) = pad_image::<S>(image)?;
        let (c, d) = self.predict(&x)?;
        let c = crop_output(&c, record)?;
        let d = crop_output(&d, record)?;
        Ok((GrayImage::from_tensor(&c, 0)?, GrayImage::from_tensor(&d, 0)?))
    }

    /// Copy of the model with another element type.
    pub fn cast<T: Scalar>(&self) -> SinNet<T> {
        SinNet {
            width_divisor: self.width_divisor,
            params: self.params.cast(),
            encoder: self.encoder.clone(),
            core: self.core.clone(),
            delta: self.delta.clone(),
        }
    }
}
