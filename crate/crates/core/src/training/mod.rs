//! Set matching, losses, and the optimizer loop.

mod loss;
mod matching;
mod optim;

pub use loss::{
    compute_losses, cost_matrix, match_cost, GroundTruthTriplet, LossBreakdown, LossVars, LossWeights,
};
pub use matching::{hungarian_match, MatchAssignment};
pub use optim::{adamw_step, AdamWConfig, OptimizerState};

use crate::data::SceneSample;
use crate::error::{Error, Result};
use crate::gradcheck::{finite_diff_check_refined, Coverage, GradCheckReport, GraphObjective};
use crate::model::{hodn_forward, read_predictions, ForwardOptions, GradientRoute, HodnForward, HodnParams};
use crate::params::Binding;
use crate::scalar::{DoubleDouble, Scalar};
use crate::tensor::{Graph, Tensor, Var};

/// Forward pass, matching, and losses of one scene recorded on `g`.
#[derive(Clone, Debug)]
pub struct SceneRecord<S> {
    pub forward: HodnForward,
    pub assignment: MatchAssignment<S>,
    pub losses: LossVars,
}

/// Records one scene. When `assignment` is given it is used instead of
/// matching the current predictions.
pub fn record_scene<S: Scalar>(
    g: &mut Graph<S>,
    b: &Binding,
    params: &HodnParams<S>,
    sample: &SceneSample<S>,
    weights: &LossWeights<S>,
    options: &ForwardOptions<S>,
    assignment: Option<&MatchAssignment<S>>,
) -> Result<SceneRecord<S>> {
    let forward = hodn_forward(g, b, params, &sample.grid, options)?;
    let assignment = match assignment {
        Some(a) => a.clone(),
        None => {
            let preds = read_predictions(g, &forward.heads);
            hungarian_match(&cost_matrix(&preds, &sample.triplets, weights)?)?
        }
    };
    let losses = compute_losses(g, &forward.heads, &sample.triplets, &assignment, weights)?;
    Ok(SceneRecord {
        forward,
        assignment,
        losses,
    })
}

/// Loss values and parameter gradients of one scene.
#[derive(Clone, Debug)]
pub struct SceneGradients<S> {
    pub breakdown: LossBreakdown<S>,
    pub assignment: MatchAssignment<S>,
    pub grads: Vec<Tensor<S>>,
}

pub fn scene_gradients<S: Scalar>(
    params: &HodnParams<S>,
    sample: &SceneSample<S>,
    weights: &LossWeights<S>,
    route: GradientRoute,
) -> Result<SceneGradients<S>> {
    let mut g = Graph::new();
    let b = params.store.bind(&mut g);
    let rec = record_scene(&mut g, &b, params, sample, weights, &ForwardOptions::route(route), None)?;
    let breakdown = rec.losses.breakdown(&g, *weights);
    let grads = g.backward(rec.losses.total)?;
    Ok(SceneGradients {
        breakdown,
        assignment: rec.assignment,
        grads: b.gradients(&params.store, &grads),
    })
}

/// The discrete choices of one scene at a base point: the matching and the
/// value of the stopped feature set.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenPoint<S> {
    pub route: GradientRoute,
    pub assignment: MatchAssignment<S>,
    pub features: Option<Tensor<S>>,
}

impl<S: Scalar> FrozenPoint<S> {
    pub fn at(
        params: &HodnParams<S>,
        sample: &SceneSample<S>,
        weights: &LossWeights<S>,
        route: GradientRoute,
    ) -> Result<Self> {
        let mut g = Graph::new();
        let b = params.store.bind_frozen(&mut g);
        let base = record_scene(&mut g, &b, params, sample, weights, &ForwardOptions::default(), None)?;
        let features = match route {
            GradientRoute::Open => None,
            GradientRoute::StopObject => Some(g.value(base.forward.detection.object_out).clone()),
            GradientRoute::StopHuman => Some(g.value(base.forward.detection.human_out).clone()),
        };
        Ok(FrozenPoint {
            route,
            assignment: base.assignment,
            features,
        })
    }

    pub fn cast<T: Scalar>(&self) -> FrozenPoint<T> {
        FrozenPoint {
            route: self.route,
            assignment: self.assignment.cast(),
            features: self.features.as_ref().map(Tensor::cast),
        }
    }
}

/// Total loss of one scene as a function of the weights, with the matching
/// and the stopped feature set held at `point`.
///
/// Holding both fixed makes the loss smooth around the base point, so it can
/// be compared against finite differences.
pub fn frozen_objective_at<'a, S: Scalar>(
    params: &'a HodnParams<S>,
    sample: &'a SceneSample<S>,
    weights: LossWeights<S>,
    point: FrozenPoint<S>,
) -> GraphObjective<impl Fn(&mut Graph<S>, &Binding) -> Result<Var> + 'a> {
    let options = ForwardOptions {
        route: point.route,
        frozen_features: point.features,
    };
    let assignment = point.assignment;
    GraphObjective(move |g: &mut Graph<S>, b: &Binding| {
        let rec = record_scene(g, b, params, sample, &weights, &options, Some(&assignment))?;
        Ok(rec.losses.total)
    })
}

/// [`frozen_objective_at`] with the point taken under `params.store`.
pub fn frozen_scene_objective<'a, S: Scalar>(
    params: &'a HodnParams<S>,
    sample: &'a SceneSample<S>,
    weights: LossWeights<S>,
    route: GradientRoute,
) -> Result<GraphObjective<impl Fn(&mut Graph<S>, &Binding) -> Result<Var> + 'a>> {
    let point = FrozenPoint::at(params, sample, &weights, route)?;
    Ok(frozen_objective_at(params, sample, weights, point))
}

/// Finite-difference check of the full scene loss around `params.store`.
/// Coordinates that miss `tolerance` are re-differenced in double-double
/// arithmetic at the same step.
pub fn scene_gradcheck<S: Scalar>(
    params: &HodnParams<S>,
    sample: &SceneSample<S>,
    weights: LossWeights<S>,
    route: GradientRoute,
    eps: f64,
    tolerance: f64,
    coverage: Coverage,
) -> Result<GradCheckReport> {
    let point = FrozenPoint::at(params, sample, &weights, route)?;
    let (wide_params, wide_sample) = (params.cast::<DoubleDouble>(), sample.cast::<DoubleDouble>());
    let precise = frozen_objective_at(&wide_params, &wide_sample, weights.cast(), point.cast());
    let f = frozen_objective_at(params, sample, weights, point);
    finite_diff_check_refined(&f, &precise, &params.store, eps, tolerance, coverage)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig<S> {
    pub weights: LossWeights<S>,
    pub optimizer: AdamWConfig<S>,
    pub epochs: usize,
    pub batch_size: usize,
    pub route: GradientRoute,
}

impl<S: Scalar> Default for TrainConfig<S> {
    fn default() -> Self {
        TrainConfig {
            weights: LossWeights::default(),
            optimizer: AdamWConfig::default(),
            epochs: 1,
            batch_size: 1,
            route: GradientRoute::StopObject,
        }
    }
}

/// Batch-averaged losses of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog<S> {
    /// 1-based.
    pub step: u64,
    pub breakdown: LossBreakdown<S>,
}

/// Rounds to 9 significant digits and prints the shortest decimal form.
pub fn format_sig9<S: Scalar>(x: S) -> String {
    let x = x.to_f64_lossy();
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    let mag = rounded.abs();
    if mag != 0.0 && !(1e-4..1e9).contains(&mag) {
        format!("{rounded:e}")
    } else {
        format!("{rounded}")
    }
}

impl<S: Scalar> StepLog<S> {
    pub const HEADER: &'static str = "step\tl_loc_h\tl_loc_o\tl_o\tl_a\ttotal";

    pub fn line(&self) -> String {
        let mut s = self.step.to_string();
        for t in self.breakdown.terms() {
            s.push('\t');
            s.push_str(&format_sig9(t));
        }
        s
    }
}

/// Runs `epochs` passes over `data` in order, one AdamW step per batch.
///
/// Gradients are averaged over the batch; `on_step` sees every step as it is
/// taken. A non-finite loss or gradient aborts before the update is applied.
pub fn train_loop<S: Scalar>(
    params: &mut HodnParams<S>,
    state: &mut OptimizerState<S>,
    data: &[SceneSample<S>],
    config: &TrainConfig<S>,
    mut on_step: impl FnMut(&StepLog<S>),
) -> Result<Vec<StepLog<S>>> {
    if data.is_empty() {
        return Err(Error::Config("training needs at least one scene".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut log = Vec::new();
    for _ in 0..config.epochs {
        for batch in data.chunks(config.batch_size) {
            let step = state.step + 1;
            let mut sum: Option<Vec<Tensor<S>>> = None;
            let mut parts = Vec::with_capacity(batch.len());
            for sample in batch {
                let sg = scene_gradients(params, sample, &config.weights, config.route)?;
                if !sg.breakdown.is_finite() {
                    let b = sg.breakdown;
                    return Err(Error::NonFinite {
                        step,
                        detail: format!(
                            "scene {}: l_loc_h={} l_loc_o={} l_o={} l_a={} total={}",
                            sample.scene_id, b.l_loc_h, b.l_loc_o, b.l_o, b.l_a, b.total
                        ),
                    });
                }
                match sum.as_mut() {
                    None => sum = Some(sg.grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&sg.grads) {
                            a.data_mut().iter_mut().zip(g.data()).for_each(|(x, &y)| *x += y);
                        }
                    }
                }
                parts.push(sg.breakdown);
            }
            let k = S::one() / S::from_usize_lossy(batch.len());
            let mut grads = sum.expect("non-empty batch");
            for (i, t) in grads.iter_mut().enumerate() {
                t.data_mut().iter_mut().for_each(|x| *x *= k);
                if !t.is_finite() {
                    return Err(Error::NonFinite {
                        step,
                        detail: format!("gradient of {} is not finite", params.store.names()[i]),
                    });
                }
            }
            adamw_step(&mut params.store, &grads, state)?;
            let entry = StepLog {
                step,
                breakdown: LossBreakdown::mean(&parts).expect("non-empty batch"),
            };
            on_step(&entry);
            log.push(entry);
        }
    }
    Ok(log)
}
