use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sinnet::{Dropout, SinNet, DEFAULT_DROPOUT};
use crate::autograd::{Exec, Gradients, Tape};
use crate::error::{Error, Result};
use crate::image::{GrayImage, Mask};
use crate::optim::Sgd;
use crate::tensor::{Scalar, Tensor};

/// How per-pixel cross-entropy terms are combined into the objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossReduction {
    /// Sum over every pixel of the mini-batch.
    #[default]
    Sum,
    /// Sum divided by the pixel count of one map: the per-image mean,
    /// still summed over the images of the mini-batch.
    ImageMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout_rate: f64,
    pub loss_reduction: LossReduction,
    /// Divides every filter count; 1 is the full-width network.
    pub width_divisor: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            momentum: 0.9,
            batch_size: 16,
            epochs: 100,
            dropout_rate: DEFAULT_DROPOUT,
            loss_reduction: LossReduction::Sum,
            width_divisor: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParam("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::DropoutRate(self.dropout_rate));
        }
        if !(self.learning_rate >= 0.0) || !(self.momentum >= 0.0) {
            return Err(Error::InvalidParam("learning_rate and momentum must be non-negative".into()));
        }
        SinNet::<f32>::new(self.width_divisor).map(|_| ())
    }
}

/// One training example: a padded image with its two label masks, all
/// (1, 1, H, W) with H and W multiples of 16.
#[derive(Clone, Debug)]
pub struct Sample<S = f32> {
    pub image: Tensor<S>,
    pub core: Tensor<S>,
    pub delta: Tensor<S>,
}

impl<S: Scalar> Sample<S> {
    /// Pads an image and its masks to the network's size multiple.
    pub fn from_image(image: &GrayImage, core: &Mask, delta: &Mask) -> Result<Self> {
        for (name, m) in [("core", core), ("delta", delta)] {
            if m.width() != image.width() || m.height() != image.height() {
                return Err(Error::InvalidParam(format!(
                    "{name} mask is {}x{}, image is {}x{}",
                    m.width(),
                    m.height(),
                    image.width(),
                    image.height()
                )));
            }
        }
        let (t, _) = super::pad::pad_image::<S>(image)?;
        let s = t.shape();
        Ok(Self {
            image: t,
            core: core.padded(s.width, s.height).to_tensor(),
            delta: delta.padded(s.width, s.height).to_tensor(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean over the epoch's steps of the summed core + delta loss.
    pub mean_loss: f64,
    /// Epoch loss divided by the number of predicted pixels (both maps).
    pub mean_pixel_bce: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// Summed (unreduced) loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
}

/// Factor applied to each branch's summed loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub core: f64,
    pub delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { core: 1.0, delta: 1.0 }
    }
}

fn validate_dataset<S: Scalar>(dataset: &[Sample<S>]) -> Result<()> {
    let first = dataset.first().ok_or(Error::EmptyDataset)?;
    let shape = first.image.shape();
    for (i, s) in dataset.iter().enumerate() {
        let bad = |reason: String| Error::BadSample { index: i, reason };
        if s.image.shape() != shape {
            return Err(bad(format!("image shape {} differs from {}", s.image.shape(), shape)));
        }
        if shape.batch != 1 || shape.channels != 1 {
            return Err(bad(format!("expected a (1, 1, H, W) image, got {shape}")));
        }
        for (name, m) in [("core", &s.core), ("delta", &s.delta)] {
            if m.shape() != shape {
                return Err(bad(format!("{name} mask shape {} differs from image {}", m.shape(), shape)));
            }
            if let Some(v) = m.data().iter().find(|&&v| v != S::ZERO && v != S::ONE) {
                return Err(bad(format!("{name} mask has non-binary value {v}")));
            }
        }
    }
    Ok(())
}

/// Forward and backward on one mini-batch; returns the summed loss and the
/// parameter gradients.
pub fn batch_gradients<S: Scalar>(
    model: &SinNet<S>,
    images: Tensor<S>,
    core: Tensor<S>,
    delta: Tensor<S>,
    weights: LossWeights,
    dropout: Option<Dropout<'_>>,
) -> Result<(f64, Gradients<S>)> {
    let mut tape = Tape::with_params(model.params());
    let x = tape.input(images);
    let (pc, pd) = model.forward(&mut tape, &x, dropout)?;
    let lc = tape.bce_loss(pc, core)?;
    let ld = tape.bce_loss(pd, delta)?;
    let lc = if weights.core == 1.0 { lc } else { tape.scale(lc, weights.core) };
    let ld = if weights.delta == 1.0 { ld } else { tape.scale(ld, weights.delta) };
    let total = tape.add(lc, ld)?;
    let loss = tape.get(total).data()[0].widen();
    Ok((loss, tape.backward(total)?))
}

/// Summed inference-mode loss over a dataset.
pub fn evaluate_loss<S: Scalar>(model: &SinNet<S>, dataset: &[Sample<S>]) -> Result<f64> {
    let mut total = 0.0;
    for s in dataset {
        let (pc, pd) = model.predict(&s.image)?;
        total += crate::ops::bce_loss(&pc, &s.core)? + crate::ops::bce_loss(&pd, &s.delta)?;
    }
    Ok(total)
}

/// Mini-batch SGD with momentum on the sum of both branch losses, each
/// reduced according to `config.loss_reduction`.
///
/// Batches are drawn from a seeded shuffle each epoch; the final batch of an
/// epoch may be smaller. Dropout masks come from the same seeded stream, so a
/// run is fully determined by the initial weights and `config`.
pub fn train<S: Scalar>(model: &mut SinNet<S>, dataset: &[Sample<S>], config: &TrainConfig) -> Result<TrainLog> {
    train_with(model, dataset, config, |_, _| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with<S: Scalar>(
    model: &mut SinNet<S>,
    dataset: &[Sample<S>],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, &SinNet<S>),
) -> Result<TrainLog> {
    config.validate()?;
    validate_dataset(dataset)?;
    if model.width_divisor() != config.width_divisor {
        return Err(Error::InvalidParam(format!(
            "model width divisor {} does not match config {}",
            model.width_divisor(),
            config.width_divisor
        )));
    }
    let pixels_per_sample = dataset[0].image.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Sgd::new(model.params(), config.learning_rate, config.momentum);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut log = TrainLog::default();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_pixels = 0.0;
        let mut steps = 0;
        for batch in order.chunks(config.batch_size) {
            let images: Vec<&Tensor<S>> = batch.iter().map(|&i| &dataset[i].image).collect();
            let cores: Vec<&Tensor<S>> = batch.iter().map(|&i| &dataset[i].core).collect();
            let deltas: Vec<&Tensor<S>> = batch.iter().map(|&i| &dataset[i].delta).collect();
            let dropout = (config.dropout_rate > 0.0).then_some(Dropout {
                rate: config.dropout_rate,
                rng: &mut rng,
            });
            let scale = match config.loss_reduction {
                LossReduction::Sum => 1.0,
                LossReduction::ImageMean => 1.0 / pixels_per_sample as f64,
            };
            let (objective, grads) = batch_gradients(
                model,
                Tensor::stack(&images)?,
                Tensor::stack(&cores)?,
                Tensor::stack(&deltas)?,
                LossWeights { core: scale, delta: scale },
                dropout,
            )?;
            let loss = objective / scale;
            let params = model.params_mut();
            params.zero_grad();
            params.accumulate(&grads);
            opt.step(params);

            log.step_losses.push(loss);
            epoch_loss += loss;
            epoch_pixels += (2 * batch.len() * pixels_per_sample) as f64;
            steps += 1;
        }
        let entry = EpochLog {
            epoch: epoch + 1,
            mean_loss: epoch_loss / steps as f64,
            mean_pixel_bce: epoch_loss / epoch_pixels,
        };
        on_epoch(&entry, model);
        log.epochs.push(entry);
    }
    Ok(log)
}
