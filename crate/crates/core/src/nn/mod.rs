//! Dense tensors, reverse-mode autodiff, losses, and the Adam optimizer.
//!
//! Everything runs in `f64`: gradient checks, training, and metrics share
//! one precision. Checkpoints store parameters as `f32`.

mod graph;
pub(crate) mod kernels;
mod linear;
pub mod loss;
pub mod ops;
mod optim;
mod tensor;

pub use graph::{EmdForm, Gradients, Graph, Var};
pub(crate) use linear::push_linear;
pub use linear::{Linear, LinearVars, ParamSet};
pub use loss::{binary_cross_entropy, cross_entropy, emd_loss};
pub use ops::{l2_normalize, l2_normalize_or_zero, linear_forward, relu, softmax};
pub use optim::{Adam, AdamConfig, StepDecay};
pub use tensor::Tensor;

use crate::error::Result;

/// Evaluates a scalar loss and the gradients of the returned parameter
/// vars. `build` records the forward pass on a fresh graph.
pub fn loss_and_grads<'a, F>(build: F) -> Result<(f64, Vec<Tensor>)>
where
    F: FnOnce(&mut Graph<'a>) -> Result<(Var, Vec<Var>)>,
{
    let mut g = Graph::new();
    let (loss, params) = build(&mut g)?;
    let value = g.value(loss).data()[0];
    let mut grads = g.backward(loss)?;
    Ok((
        value,
        params.iter().map(|v| grads.take_or_zeros(*v, g.value(*v))).collect(),
    ))
}

/// Applies `grads` (in [`ParamSet::named_params`] order) to `params`.
pub fn apply_grads<P: ParamSet>(params: &mut P, opt: &mut Adam, grads: &[Tensor]) -> Result<()> {
    let names = params.param_names();
    opt.step(&mut params.params_mut(), grads, &names)
}
