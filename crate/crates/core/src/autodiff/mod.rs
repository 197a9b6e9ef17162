//! Dense reverse-mode automatic differentiation, just large enough for the
//! allocation model: matrix products, row broadcasts, ReLU/sigmoid/softmax,
//! gathers and segment sums, plus MLPs and Adam.

mod adam;
mod mlp;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use mlp::{mlp_forward, Activation, Linear, MlpParams, MlpVars};
pub use tape::{sigmoid, softmax_in_place, CustomOp, Gradients, Tape, Var};
pub use tensor::Tensor;
