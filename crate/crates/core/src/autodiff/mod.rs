//! Dense-tensor reverse-mode automatic differentiation and the Adam optimizer.

mod optim;
mod tape;
mod tensor;

pub use optim::{Adam, AdamState, ParamSet};
pub use tape::{elu, Gradients, Tape, Var};
pub(crate) use tape::check_dropout;
pub use tensor::Tensor;
