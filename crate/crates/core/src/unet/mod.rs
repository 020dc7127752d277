//! 3D U-Net segmentation on a small tape-based autodiff engine. All math is
//! in f64.

pub mod checkpoint;
pub mod model;
pub mod optim;
pub mod tape;
pub mod tensor;
pub mod train;

pub use checkpoint::Checkpoint;
pub use model::{unet_forward, unet_forward_on, UNetConfig, UNetParams};
pub use optim::Adam;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
pub use train::{lr_at, train, EpochLog, TrainConfig, TrainOutput};
