//! Dense-tensor numeric core with reverse-mode differentiation, recurrent
//! cells, and the optimizer the trainable node programs use.

pub mod cells;
pub mod check;
pub mod params;
pub mod tape;
pub mod tensor;

pub use params::{load_checkpoint, save_checkpoint, ParamId, ParameterStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
