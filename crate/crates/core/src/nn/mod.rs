//! Dense tensors with a tape-based reverse-mode autodiff, an optimizer and
//! a weight file format.

pub mod checkpoint;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use checkpoint::{assign, load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use optim::Sgd;
pub use params::{he_uniform, Param, ParamId, ParamStore};
pub use tape::{BatchStats, Gradients, Tape, Var};
pub use tensor::Tensor;
