//! Central finite-difference checking of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{Binding, ParamId, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};

/// A deterministic scalar function of a parameter set with an analytic gradient.
pub trait Objective<S: Scalar> {
    fn value(&self, params: &ParamSet<S>) -> Result<S>;

    /// Gradient in parameter order.
    fn gradient(&self, params: &ParamSet<S>) -> Result<Vec<Tensor<S>>>;
}

/// Objective defined by a closure that records the loss on a fresh graph.
pub struct GraphObjective<F>(pub F);

impl<S, F> Objective<S> for GraphObjective<F>
where
    S: Scalar,
    F: Fn(&mut Graph<S>, &Binding) -> Result<Var>,
{
    fn value(&self, params: &ParamSet<S>) -> Result<S> {
        let mut g = Graph::new();
        let b = params.bind_frozen(&mut g);
        let loss = (self.0)(&mut g, &b)?;
        Ok(g.value(loss).item())
    }

    fn gradient(&self, params: &ParamSet<S>) -> Result<Vec<Tensor<S>>> {
        let mut g = Graph::new();
        let b = params.bind(&mut g);
        let loss = (self.0)(&mut g, &b)?;
        let grads = g.backward(loss)?;
        Ok(b.gradients(params, &grads))
    }
}

/// Which coordinates of each parameter tensor are perturbed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coverage {
    All,
    /// At most `per_param` distinct coordinates per tensor, drawn from `seed`.
    Sample { per_param: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub coordinates: usize,
    /// Coordinates re-differenced in the wider type.
    pub refined: usize,
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub eps: f64,
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn coordinates(&self) -> usize {
        self.params.iter().map(|p| p.coordinates).sum()
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed)
    }
}

/// `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-12);
    (analytic - numeric).abs() / denom
}

/// Compares the analytic gradient of `f` against central differences
/// `(f(p + eps e) - f(p - eps e)) / (2 eps)` coordinate by coordinate.
pub fn finite_diff_check<S: Scalar>(
    f: &impl Objective<S>,
    params: &ParamSet<S>,
    eps: S,
    tolerance: f64,
    coverage: Coverage,
) -> Result<GradCheckReport> {
    run(f, None::<&Unrefined>, params, eps.to_f64_lossy(), tolerance, coverage)
}

/// Like [`finite_diff_check`], but a coordinate whose difference quotient
/// misses the tolerance is re-differenced with `precise`, the same function
/// evaluated in the wider type `E`, before it is judged.
///
/// In `f64` the quotient carries a roundoff of about `ulp(f) / eps`, which
/// swamps gradients near `1e-7` and below; the wider evaluation removes that
/// floor without changing the step.
pub fn finite_diff_check_refined<S: Scalar, E: Scalar>(
    f: &impl Objective<S>,
    precise: &impl Objective<E>,
    params: &ParamSet<S>,
    eps: f64,
    tolerance: f64,
    coverage: Coverage,
) -> Result<GradCheckReport> {
    run(f, Some(precise), params, eps, tolerance, coverage)
}

/// Placeholder refinement type for the unrefined check.
struct Unrefined;

impl Objective<f64> for Unrefined {
    fn value(&self, _: &ParamSet<f64>) -> Result<f64> {
        unreachable!("never refined")
    }

    fn gradient(&self, _: &ParamSet<f64>) -> Result<Vec<Tensor<f64>>> {
        unreachable!("never refined")
    }
}

fn base_value<S: Scalar>(f: &impl Objective<S>, params: &ParamSet<S>) -> Result<S> {
    let first = f.value(params)?;
    let second = f.value(params)?;
    if first.to_f64_lossy().to_bits() != second.to_f64_lossy().to_bits() {
        return Err(Error::Determinism {
            param: "<base point>".into(),
            index: 0,
            first: first.to_f64_lossy(),
            second: second.to_f64_lossy(),
        });
    }
    Ok(first)
}

fn central<S: Scalar>(
    f: &impl Objective<S>,
    work: &mut ParamSet<S>,
    id: ParamId,
    i: usize,
    eps: S,
) -> Result<f64> {
    let orig = work.get(id).data()[i];
    work.get_mut(id).data_mut()[i] = orig + eps;
    let up = f.value(work)?;
    work.get_mut(id).data_mut()[i] = orig - eps;
    let down = f.value(work)?;
    work.get_mut(id).data_mut()[i] = orig;
    Ok(((up - down) / (eps + eps)).to_f64_lossy())
}

fn run<S: Scalar, E: Scalar>(
    f: &impl Objective<S>,
    precise: Option<&impl Objective<E>>,
    params: &ParamSet<S>,
    eps: f64,
    tolerance: f64,
    coverage: Coverage,
) -> Result<GradCheckReport> {
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::Parameter(format!("eps must lie in (0, 1e-2], got {eps}")));
    }
    base_value(f, params)?;
    let analytic = f.gradient(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(match coverage {
        Coverage::All => 0,
        Coverage::Sample { seed, .. } => seed,
    });
    let mut work = params.clone();
    let mut wide: Option<ParamSet<E>> = None;
    let mut out = Vec::with_capacity(params.len());
    for (id, name, tensor) in params.iter() {
        let n = tensor.len();
        let coords: Vec<usize> = match coverage {
            Coverage::All => (0..n).collect(),
            Coverage::Sample { per_param, .. } if per_param >= n => (0..n).collect(),
            Coverage::Sample { per_param, .. } => {
                let mut v = sample(&mut rng, n, per_param).into_vec();
                v.sort_unstable();
                v
            }
        };
        let mut check = ParamCheck {
            name: name.to_string(),
            coordinates: coords.len(),
            refined: 0,
            max_rel_error: 0.0,
            worst_index: coords.first().copied().unwrap_or(0),
            analytic: 0.0,
            numeric: 0.0,
            passed: true,
        };
        for &i in &coords {
            let a = analytic[id.0].data()[i].to_f64_lossy();
            let mut numeric = central(f, &mut work, id, i, S::lit(eps))?;
            let mut err = relative_error(a, numeric);
            if let (Some(p), true) = (precise, err.is_nan() || err > tolerance) {
                let w = match wide.as_mut() {
                    Some(w) => w,
                    None => {
                        let w = params.cast::<E>();
                        base_value(p, &w)?;
                        wide.insert(w)
                    }
                };
                numeric = central(p, w, id, i, E::lit(eps))?;
                err = relative_error(a, numeric);
                check.refined += 1;
            }
            if err > check.max_rel_error || !err.is_finite() {
                check.max_rel_error = err;
                check.worst_index = i;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        check.passed = check.max_rel_error <= tolerance;
        out.push(check);
    }
    Ok(GradCheckReport {
        eps,
        tolerance,
        params: out,
    })
}
