use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig<S> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    pub weight_decay: S,
}

impl<S: Scalar> Default for AdamWConfig<S> {
    fn default() -> Self {
        AdamWConfig {
            lr: S::lit(1e-4),
            beta1: S::lit(0.9),
            beta2: S::lit(0.999),
            eps: S::lit(1e-8),
            weight_decay: S::lit(1e-4),
        }
    }
}

/// Moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<S> {
    pub first: Vec<Tensor<S>>,
    pub second: Vec<Tensor<S>>,
    pub step: u64,
    pub hyper: AdamWConfig<S>,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(params: &ParamSet<S>, hyper: AdamWConfig<S>) -> Self {
        let zeros: Vec<Tensor<S>> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        OptimizerState {
            first: zeros.clone(),
            second: zeros,
            step: 0,
            hyper,
        }
    }
}

/// One AdamW update with bias correction and decoupled weight decay.
pub fn adamw_step<S: Scalar>(
    params: &mut ParamSet<S>,
    grads: &[Tensor<S>],
    state: &mut OptimizerState<S>,
) -> Result<()> {
    if grads.len() != params.len() || state.first.len() != params.len() {
        return Err(Error::dim("adamw_step", &[params.len()], &[grads.len(), state.first.len()]));
    }
    for (i, (p, g)) in params.tensors().iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.first[i].shape() {
            return Err(Error::dim("adamw_step", p.shape(), g.shape()));
        }
    }
    let h = state.hyper;
    state.step += 1;
    let t = state.step as i32;
    let c1 = S::one() - h.beta1.powi(t);
    let c2 = S::one() - h.beta2.powi(t);
    let decay = S::one() - h.lr * h.weight_decay;
    let ids: Vec<_> = params.iter().map(|(id, _, _)| id).collect();
    for (i, id) in ids.into_iter().enumerate() {
        let p = params.get_mut(id).data_mut();
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        for (k, &gk) in grads[i].data().iter().enumerate() {
            m[k] = h.beta1 * m[k] + (S::one() - h.beta1) * gk;
            v[k] = h.beta2 * v[k] + (S::one() - h.beta2) * gk * gk;
            let update = (m[k] / c1) / ((v[k] / c2).sqrt() + h.eps);
            p[k] = p[k] * decay - h.lr * update;
        }
    }
    Ok(())
}
