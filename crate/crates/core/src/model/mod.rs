//! The dual-branch segmentation network: architecture, input padding,
//! serialization and training.

mod inception;
mod io;
mod pad;
mod sinnet;
mod train;

pub use inception::{ConvLayer, Inception, InceptionSpec};
pub use io::{from_bytes, load_model, save_model, to_bytes, FORMAT_VERSION, MAGIC};
pub use pad::{crop_output, pad_image, padded_dim, PadRecord};
pub use sinnet::{Decoder, Dropout, SinNet, DECODER_FILTERS, DEFAULT_DROPOUT, ENCODER_FILTERS, HEAD_FILTERS, SIZE_MULTIPLE};
pub use train::{
    batch_gradients, evaluate_loss, train, train_with, EpochLog, LossReduction, LossWeights, Sample, TrainConfig, TrainLog,
};
