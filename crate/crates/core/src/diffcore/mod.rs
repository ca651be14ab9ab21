//! Dense tensors, a reverse-mode tape, neural building blocks and Adam.

mod graph;
mod nn;
mod param;
mod tensor;

pub use graph::{Axis, Gradients, Graph, Var};
pub use nn::{cross_entropy, hinge_pair, mse, BiLstm, Linear, Lstm};
pub use param::{Adam, Init, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
