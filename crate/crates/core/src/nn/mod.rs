//! Minimal dense-network engine: forward passes, backprop, softmax
//! cross-entropy, momentum SGD and a binary checkpoint format.

pub mod checkpoint;
mod layer;
mod loss;
mod matrix;
mod optim;

pub use layer::{
    softmax_in_place, softmax_rows, Activation, Activations, Dense, LayerSpec, Mlp, OutputGrad,
    ParamTensor,
};
pub use loss::{
    check_simplex_rows, cross_entropy, softmax_cross_entropy_grad, PROB_FLOOR, SIMPLEX_TOL,
};
pub use matrix::{argmax, Matrix};
pub use optim::{Sgd, SgdConfig};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("state error: {0}")]
    State(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

/// Mean softmax cross-entropy of a network on `(x, targets)`, backpropagated
/// into the network's gradients. Gradients are zeroed first.
pub fn loss_and_backward(net: &mut Mlp, x: &Matrix, targets: &Matrix) -> Result<f64, NnError> {
    let acts = net.forward(x)?;
    let probs = acts.output().expect("non-empty network");
    let loss = cross_entropy(probs, targets)?;
    let g = softmax_cross_entropy_grad(probs, targets, 1.0);
    net.zero_grad();
    net.backward(&acts, OutputGrad::Logits(&g))?;
    Ok(loss)
}
