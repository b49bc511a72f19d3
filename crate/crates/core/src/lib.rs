//! Context-encoder image inpainting on the CPU.
//!
//! An encoder-decoder network looks at an image with a region hidden and
//! predicts the hidden pixels, trained with a masked reconstruction loss
//! and optionally an adversarial loss. Everything here is plain `f64` math
//! with hand-written backward passes.

pub mod dataio;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod masking;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use layers::{LayerParams, Mode};
pub use masking::{MaskKind, RegionMask};
pub use model::{GeneratorConfig, MaskConfig, Network};
pub use rng::RngState;
pub use tensor::{Shape, Tensor};
pub use train::{LossMode, StepMetrics, TrainConfig, Trainer};
