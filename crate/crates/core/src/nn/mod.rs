//! Convolutional building blocks and the architecture builder.

pub mod arch;
pub mod conv;
pub mod model;
pub mod norm;
pub mod pool;

pub use arch::{preset, ArchSpec, LayerSpec, PRESETS};
pub use conv::conv2d;
pub use model::{build_model, BuildOptions, Forward, Layer, Mode, ModelState};
pub use norm::{batch_norm, RunningStats};
pub use pool::{global_avg_pool, max_pool2d, softmax};
