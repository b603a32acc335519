pub mod data;
pub mod diffusion;
pub mod eval;
pub mod nn;
pub mod pipeline;
pub mod text;
pub mod util;
pub mod vae;
pub mod tensor;

pub use tensor::{Grads, Graph, ParameterStore, Scalar, Tensor, TensorError, Var};
