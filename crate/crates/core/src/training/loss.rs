use crate::error::{Error, Result};
use crate::geometry::{giou, Cxcywh};
use crate::model::{HeadOutputs, HoiPrediction};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};

use super::matching::MatchAssignment;

/// One annotated ⟨human, object, interaction⟩ instance.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthTriplet<S> {
    pub human_box: Cxcywh<S>,
    pub object_box: Cxcywh<S>,
    pub object_class: usize,
    /// Multi-label action targets, one flag per action.
    pub interaction_labels: Vec<bool>,
}

impl<S: Scalar> GroundTruthTriplet<S> {
    pub fn cast<T: Scalar>(&self) -> GroundTruthTriplet<T> {
        let c = |b: Cxcywh<S>| Cxcywh(b.0.map(|v| T::lit(v.to_f64_lossy())));
        GroundTruthTriplet {
            human_box: c(self.human_box),
            object_box: c(self.object_box),
            object_class: self.object_class,
            interaction_labels: self.interaction_labels.clone(),
        }
    }

    pub fn validate(&self, object_classes: usize, actions: usize) -> Result<()> {
        if self.object_class >= object_classes {
            return Err(Error::Parameter(format!(
                "object class {} out of range 0..{object_classes}",
                self.object_class
            )));
        }
        if self.interaction_labels.len() != actions {
            return Err(Error::dim(
                "interaction_labels",
                &[self.interaction_labels.len()],
                &[actions],
            ));
        }
        if !self.interaction_labels.iter().any(|&a| a) {
            return Err(Error::Parameter("triplet has no true interaction label".into()));
        }
        for b in [self.human_box, self.object_box] {
            let [x1, y1, x2, y2] = b.to_xyxy().0;
            let inside = |v: S| v >= S::zero() && v <= S::one();
            if !(x1 < x2 && y1 < y2 && [x1, y1, x2, y2].into_iter().all(inside)) {
                return Err(Error::Degenerate(format!("box {:?} outside the unit square", b.0)));
            }
        }
        Ok(())
    }
}

/// `(λ_reg, λ_giou, λ_o, λ_a)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights<S> {
    pub reg: S,
    pub giou: S,
    pub object: S,
    pub action: S,
}

impl<S: Scalar> LossWeights<S> {
    pub fn cast<T: Scalar>(&self) -> LossWeights<T> {
        let c = |v: S| T::lit(v.to_f64_lossy());
        LossWeights {
            reg: c(self.reg),
            giou: c(self.giou),
            object: c(self.object),
            action: c(self.action),
        }
    }
}

impl<S: Scalar> Default for LossWeights<S> {
    fn default() -> Self {
        LossWeights {
            reg: S::one(),
            giou: S::lit(2.5),
            object: S::one(),
            action: S::one(),
        }
    }
}

fn softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let m = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let e: Vec<S> = logits.iter().map(|&x| (x - m).exp()).collect();
    let z: S = e.iter().copied().sum();
    e.into_iter().map(|x| x / z).collect()
}

fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

/// Matching cost of assigning `gt` to the slot that produced `pred`.
pub fn match_cost<S: Scalar>(
    pred: &HoiPrediction<S>,
    gt: &GroundTruthTriplet<S>,
    w: &LossWeights<S>,
) -> Result<S> {
    let l1 = pred.human_box.l1(gt.human_box) + pred.object_box.l1(gt.object_box);
    let g = (S::one() - giou(pred.human_box.to_xyxy(), gt.human_box.to_xyxy())?)
        + (S::one() - giou(pred.object_box.to_xyxy(), gt.object_box.to_xyxy())?);
    let p = softmax(&pred.object_class_logits);
    let p_obj = *p
        .get(gt.object_class)
        .ok_or_else(|| Error::dim("match_cost", &[p.len()], &[gt.object_class + 1]))?;
    let truths: Vec<S> = gt
        .interaction_labels
        .iter()
        .zip(&pred.interaction_logits)
        .filter(|(t, _)| **t)
        .map(|(_, &x)| S::one() - sigmoid(x))
        .collect();
    let action = if truths.is_empty() {
        S::zero()
    } else {
        truths.iter().copied().sum::<S>() / S::from_usize_lossy(truths.len())
    };
    Ok(w.reg * l1 + w.giou * g + w.object * (S::one() - p_obj) + w.action * action)
}

/// `G × N` matching costs.
pub fn cost_matrix<S: Scalar>(
    preds: &[HoiPrediction<S>],
    gts: &[GroundTruthTriplet<S>],
    w: &LossWeights<S>,
) -> Result<Vec<Vec<S>>> {
    gts.iter()
        .map(|gt| preds.iter().map(|p| match_cost(p, gt, w)).collect())
        .collect()
}

/// Loss terms recorded on a graph.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    /// Mean L1 over matched pairs, unweighted.
    pub l1_h: Var,
    pub l1_o: Var,
    /// Mean `1 - giou` over matched pairs, unweighted.
    pub giou_h: Var,
    pub giou_o: Var,
    pub l_loc_h: Var,
    pub l_loc_o: Var,
    pub l_o: Var,
    pub l_a: Var,
    pub total: Var,
}

/// Values of the loss terms together with the weights that combined them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown<S> {
    pub l1_h: S,
    pub l1_o: S,
    pub giou_h: S,
    pub giou_o: S,
    pub l_loc_h: S,
    pub l_loc_o: S,
    pub l_o: S,
    pub l_a: S,
    pub total: S,
    pub weights: LossWeights<S>,
}

impl<S: Scalar> LossBreakdown<S> {
    /// `|total - (l_loc_h + l_loc_o + λ_o l_o + λ_a l_a)|`.
    pub fn identity_residual(&self) -> S {
        let w = &self.weights;
        (self.total - (self.l_loc_h + self.l_loc_o + w.object * self.l_o + w.action * self.l_a)).abs()
    }

    pub fn terms(&self) -> [S; 5] {
        [self.l_loc_h, self.l_loc_o, self.l_o, self.l_a, self.total]
    }

    pub fn is_finite(&self) -> bool {
        self.terms().iter().all(|t| t.is_finite())
    }

    /// Elementwise mean of several breakdowns sharing the same weights.
    pub fn mean(items: &[Self]) -> Option<Self> {
        let first = items.first()?;
        let k = S::from_usize_lossy(items.len());
        let avg = |f: fn(&Self) -> S| items.iter().map(f).sum::<S>() / k;
        Some(LossBreakdown {
            l1_h: avg(|b| b.l1_h),
            l1_o: avg(|b| b.l1_o),
            giou_h: avg(|b| b.giou_h),
            giou_o: avg(|b| b.giou_o),
            l_loc_h: avg(|b| b.l_loc_h),
            l_loc_o: avg(|b| b.l_loc_o),
            l_o: avg(|b| b.l_o),
            l_a: avg(|b| b.l_a),
            total: avg(|b| b.total),
            weights: first.weights,
        })
    }
}

impl LossVars {
    pub fn breakdown<S: Scalar>(&self, g: &Graph<S>, weights: LossWeights<S>) -> LossBreakdown<S> {
        let v = |x: Var| g.value(x).item();
        LossBreakdown {
            l1_h: v(self.l1_h),
            l1_o: v(self.l1_o),
            giou_h: v(self.giou_h),
            giou_o: v(self.giou_o),
            l_loc_h: v(self.l_loc_h),
            l_loc_o: v(self.l_loc_o),
            l_o: v(self.l_o),
            l_a: v(self.l_a),
            total: v(self.total),
            weights,
        }
    }
}

fn corners<S: Scalar>(g: &mut Graph<S>, b: Var) -> Result<[Var; 4]> {
    let cx = g.slice_cols(b, 0, 1)?;
    let cy = g.slice_cols(b, 1, 2)?;
    let w = g.slice_cols(b, 2, 3)?;
    let h = g.slice_cols(b, 3, 4)?;
    let hw = g.scale(w, S::lit(0.5));
    let hh = g.scale(h, S::lit(0.5));
    Ok([g.sub(cx, hw)?, g.sub(cy, hh)?, g.add(cx, hw)?, g.add(cy, hh)?])
}

fn area<S: Scalar>(g: &mut Graph<S>, c: &[Var; 4]) -> Result<Var> {
    let w = g.sub(c[2], c[0])?;
    let h = g.sub(c[3], c[1])?;
    g.mul(w, h)
}

/// Mean L1 and mean `1 - giou` between predicted rows and fixed targets.
fn box_terms<S: Scalar>(g: &mut Graph<S>, pred: Var, target: &Tensor<S>) -> Result<(Var, Var)> {
    let m = S::from_usize_lossy(target.rows());
    let t = g.constant(target.clone());
    let diff = g.sub(pred, t)?;
    let abs = g.abs(diff);
    let l1 = g.sum(abs);
    let l1 = g.scale(l1, S::one() / m);

    let a = corners(g, pred)?;
    let b = corners(g, t)?;
    let mut inter_side = Vec::with_capacity(2);
    let mut hull_side = Vec::with_capacity(2);
    for k in 0..2 {
        let lo = g.max(a[k], b[k])?;
        let hi = g.min(a[k + 2], b[k + 2])?;
        let span = g.sub(hi, lo)?;
        inter_side.push(g.relu(span));
        let lo = g.min(a[k], b[k])?;
        let hi = g.max(a[k + 2], b[k + 2])?;
        hull_side.push(g.sub(hi, lo)?);
    }
    let inter = g.mul(inter_side[0], inter_side[1])?;
    let hull = g.mul(hull_side[0], hull_side[1])?;
    let (aa, ab) = (area(g, &a)?, area(g, &b)?);
    let sum = g.add(aa, ab)?;
    let union = g.sub(sum, inter)?;
    let iou = g.div(inter, union)?;
    let empty = g.sub(hull, union)?;
    let penalty = g.div(empty, hull)?;
    let gi = g.sub(iou, penalty)?;
    let loss = g.rsub_scalar(S::one(), gi);
    let loss = g.sum(loss);
    Ok((l1, g.scale(loss, S::one() / m)))
}

fn boxes_tensor<S: Scalar>(boxes: impl Iterator<Item = Cxcywh<S>>) -> Result<Tensor<S>> {
    let rows: Vec<Vec<S>> = boxes.map(|b| b.0.to_vec()).collect();
    Tensor::from_rows(&rows)
}

/// Records the set-prediction losses of one scene on `g`.
///
/// Matched slots supervise boxes, object class and actions; unmatched slots
/// supervise the background class and all-zero action targets.
pub fn compute_losses<S: Scalar>(
    g: &mut Graph<S>,
    heads: &HeadOutputs,
    gts: &[GroundTruthTriplet<S>],
    assignment: &MatchAssignment<S>,
    w: &LossWeights<S>,
) -> Result<LossVars> {
    let logits_shape = g.value(heads.object_logits).shape().to_vec();
    let (slots, classes) = (logits_shape[0], logits_shape[1]);
    let actions = g.value(heads.interaction_logits).cols();
    if assignment.pairs.len() != gts.len() {
        return Err(Error::Parameter(format!(
            "assignment covers {} of {} ground-truth triplets",
            assignment.pairs.len(),
            gts.len()
        )));
    }
    for gt in gts {
        gt.validate(classes - 1, actions)?;
    }
    let targets = assignment.slot_targets(slots);

    let (l1_h, giou_h, l1_o, giou_o) = if gts.is_empty() {
        let z = g.constant(Tensor::scalar(S::zero()));
        (z, z, z, z)
    } else {
        let queries = assignment.queries();
        let order = assignment.pairs.iter().map(|&(gi, _)| &gts[gi]);
        let ph = g.gather_rows(heads.human_boxes, &queries)?;
        let po = g.gather_rows(heads.object_boxes, &queries)?;
        let th = boxes_tensor(order.clone().map(|t| t.human_box))?;
        let to = boxes_tensor(order.map(|t| t.object_box))?;
        let (l1_h, giou_h) = box_terms(g, ph, &th)?;
        let (l1_o, giou_o) = box_terms(g, po, &to)?;
        (l1_h, giou_h, l1_o, giou_o)
    };
    let loc = |g: &mut Graph<S>, l1: Var, gi: Var| -> Result<Var> {
        let a = g.scale(l1, w.reg);
        let b = g.scale(gi, w.giou);
        g.add(a, b)
    };
    let l_loc_h = loc(g, l1_h, giou_h)?;
    let l_loc_o = loc(g, l1_o, giou_o)?;

    let n = S::from_usize_lossy(slots);
    let mut onehot = Tensor::zeros(&[slots, classes]);
    let mut labels = Tensor::zeros(&[slots, actions]);
    for (slot, target) in targets.iter().enumerate() {
        match target {
            Some(gi) => {
                let gt = &gts[*gi];
                onehot.data_mut()[slot * classes + gt.object_class] = S::one();
                for (a, &on) in gt.interaction_labels.iter().enumerate() {
                    if on {
                        labels.data_mut()[slot * actions + a] = S::one();
                    }
                }
            }
            None => onehot.data_mut()[slot * classes + classes - 1] = S::one(),
        }
    }
    let ls = g.log_softmax(heads.object_logits)?;
    let oh = g.constant(onehot);
    let picked = g.mul(ls, oh)?;
    let picked = g.sum(picked);
    let l_o = g.scale(picked, -S::one() / n);

    let bce = g.bce_with_logits(heads.interaction_logits, &labels)?;
    let bce = g.sum(bce);
    let l_a = g.scale(bce, S::one() / n);

    let wo = g.scale(l_o, w.object);
    let wa = g.scale(l_a, w.action);
    let loc_sum = g.add(l_loc_h, l_loc_o)?;
    let total = g.add(loc_sum, wo)?;
    let total = g.add(total, wa)?;
    Ok(LossVars {
        l1_h,
        l1_o,
        giou_h,
        giou_o,
        l_loc_h,
        l_loc_o,
        l_o,
        l_a,
        total,
    })
}
