//! Dense reverse-mode gradient engine, MLP building blocks, and Adam.

mod adam;
mod gradcheck;
mod nn;
mod tape;
mod tensor;

pub use adam::{AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use gradcheck::{finite_diff_check, relative_error, GradCheck, REL_ERROR_FLOOR};
pub use nn::{Activation, EncodedVars, Linear, MlpDecoder, MlpEncoder, Module, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
