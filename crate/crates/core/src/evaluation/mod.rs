//! Role mAP, box detection metrics, pair-wise NMS and the masking probe.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::SceneSample;
use crate::error::{Error, Result};
use crate::geometry::Xyxy;
use crate::model::{predict, HodnParams, HoiPrediction};
use crate::scalar::Scalar;
use crate::training::format_sig9;

pub use crate::geometry::iou;

/// One ⟨human, object, action⟩ detection.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredTriplet<S> {
    pub scene_id: u64,
    pub human_box: Xyxy<S>,
    pub object_box: Xyxy<S>,
    pub object_class: usize,
    pub action: usize,
    pub score: S,
}

impl<S: Scalar> ScoredTriplet<S> {
    fn validate(&self) -> Result<()> {
        for b in [self.human_box, self.object_box] {
            let [x1, y1, x2, y2] = b.0;
            if !(x1 < x2 && y1 < y2) {
                return Err(Error::Degenerate(format!("box {:?} has no area", b.0)));
            }
        }
        if !self.score.is_finite() {
            return Err(Error::Parameter(format!("non-finite score in scene {}", self.scene_id)));
        }
        Ok(())
    }
}

/// A ground-truth pair with its scene, in corner form.
#[derive(Clone, Debug, PartialEq)]
pub struct GtInstance<S> {
    pub scene_id: u64,
    pub human_box: Xyxy<S>,
    pub object_box: Xyxy<S>,
    pub object_class: usize,
    pub actions: Vec<bool>,
}

pub fn ground_truth<S: Scalar>(data: &[SceneSample<S>]) -> Vec<GtInstance<S>> {
    data.iter()
        .flat_map(|s| {
            s.triplets.iter().map(|t| GtInstance {
                scene_id: s.scene_id,
                human_box: t.human_box.to_xyxy(),
                object_box: t.object_box.to_xyxy(),
                object_class: t.object_class,
                actions: t.interaction_labels.clone(),
            })
        })
        .collect()
}

fn clamp_unit<S: Scalar>(b: Xyxy<S>) -> Xyxy<S> {
    Xyxy(b.0.map(|v| v.max(S::zero()).min(S::one())))
}

/// Expands slot predictions into one triplet per slot and action.
///
/// The object class is the most probable real class; the score is its
/// softmax probability times the action's sigmoid probability.
pub fn score_predictions<S: Scalar>(scene_id: u64, preds: &[HoiPrediction<S>]) -> Vec<ScoredTriplet<S>> {
    let mut out = Vec::new();
    for p in preds {
        let logits = &p.object_class_logits;
        let m = logits.iter().copied().fold(S::neg_infinity(), S::max);
        let z: S = logits.iter().map(|&x| (x - m).exp()).sum();
        let real = &logits[..logits.len() - 1];
        let (class, best) = real
            .iter()
            .enumerate()
            .fold((0, S::neg_infinity()), |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc });
        let p_obj = (best - m).exp() / z;
        for (action, &a) in p.interaction_logits.iter().enumerate() {
            out.push(ScoredTriplet {
                scene_id,
                human_box: clamp_unit(p.human_box.to_xyxy()),
                object_box: clamp_unit(p.object_box.to_xyxy()),
                object_class: class,
                action,
                score: p_obj / (S::one() + (-a).exp()),
            });
        }
    }
    out
}

fn check_threshold(name: &str, t: f64, closed_above: bool) -> Result<()> {
    let ok = t > 0.0 && (t < 1.0 || (closed_above && t == 1.0));
    if ok {
        Ok(())
    } else {
        Err(Error::Parameter(format!("{name} {t} out of range")))
    }
}

/// Indices in descending score order; equal scores keep input order.
fn by_score<S: Scalar>(scores: impl Iterator<Item = S>) -> Vec<usize> {
    let s: Vec<S> = scores.collect();
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap_or(Ordering::Equal));
    idx
}

/// Greedy pair-wise NMS. A triplet is dropped when a kept one from the same
/// scene with the same class and action overlaps it above `threshold` on
/// both the human and the object box. Survivors come out in score order.
pub fn pairwise_nms<S: Scalar>(triplets: &[ScoredTriplet<S>], threshold: f64) -> Result<Vec<ScoredTriplet<S>>> {
    check_threshold("nms threshold", threshold, true)?;
    triplets.iter().try_for_each(ScoredTriplet::validate)?;
    let t = S::lit(threshold);
    let mut kept: Vec<&ScoredTriplet<S>> = Vec::new();
    for i in by_score(triplets.iter().map(|x| x.score)) {
        let c = &triplets[i];
        let mut suppressed = false;
        for k in &kept {
            if k.scene_id == c.scene_id
                && k.object_class == c.object_class
                && k.action == c.action
                && iou(k.human_box, c.human_box)? > t
                && iou(k.object_box, c.object_box)? > t
            {
                suppressed = true;
                break;
            }
        }
        if !suppressed {
            kept.push(c);
        }
    }
    Ok(kept.into_iter().cloned().collect())
}

/// Area under the precision envelope of a ranked hit list: each hit adds
/// `1 / positives` of recall at the best precision reached at or after it.
fn average_precision(hits: &[bool], positives: usize) -> f64 {
    let mut tp = 0usize;
    let precision: Vec<f64> = hits
        .iter()
        .enumerate()
        .map(|(k, &hit)| {
            tp += usize::from(hit);
            tp as f64 / (k + 1) as f64
        })
        .collect();
    let mut best = 0.0_f64;
    let mut ap = 0.0;
    for k in (0..hits.len()).rev() {
        best = best.max(precision[k]);
        if hits[k] {
            ap += best;
        }
    }
    ap / positives as f64
}

/// Per-action role AP; `None` marks actions without ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct RoleReport {
    pub per_action: Vec<Option<f64>>,
    /// Mean over actions with ground truth; `None` when there is none at all.
    pub mean_ap: Option<f64>,
}

/// Greedy score-ordered matching of `preds` to unclaimed ground truth,
/// returning one hit flag per prediction in ranked order.
fn greedy_hits<P, G>(
    ranked: &[&P],
    gts: &[&G],
    overlap: impl Fn(&P, &G) -> Result<Option<f64>>,
) -> Result<Vec<bool>> {
    let mut claimed = vec![false; gts.len()];
    let mut hits = Vec::with_capacity(ranked.len());
    for p in ranked {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if claimed[j] {
                continue;
            }
            if let Some(o) = overlap(p, g)? {
                if best.is_none_or(|(_, b)| o > b) {
                    best = Some((j, o));
                }
            }
        }
        if let Some((j, _)) = best {
            claimed[j] = true;
        }
        hits.push(best.is_some());
    }
    Ok(hits)
}

/// Role mAP over `actions` HOI categories. A prediction is a true positive
/// when it claims an unclaimed ground-truth pair of its scene with the same
/// object class, the action labelled, and both IoUs above `iou_threshold`;
/// among several candidates it takes the one whose smaller IoU is largest.
pub fn role_map<S: Scalar>(
    preds: &[ScoredTriplet<S>],
    gts: &[GtInstance<S>],
    actions: usize,
    iou_threshold: f64,
) -> Result<RoleReport> {
    check_threshold("iou threshold", iou_threshold, false)?;
    preds.iter().try_for_each(ScoredTriplet::validate)?;
    if let Some(p) = preds.iter().find(|p| p.action >= actions) {
        return Err(Error::Parameter(format!("action {} out of range 0..{actions}", p.action)));
    }
    let t = S::lit(iou_threshold);
    let mut per_action = Vec::with_capacity(actions);
    for a in 0..actions {
        let positives: Vec<&GtInstance<S>> = gts.iter().filter(|g| g.actions.get(a) == Some(&true)).collect();
        if positives.is_empty() {
            per_action.push(None);
            continue;
        }
        let mine: Vec<&ScoredTriplet<S>> = preds.iter().filter(|p| p.action == a).collect();
        let ranked: Vec<&ScoredTriplet<S>> = by_score(mine.iter().map(|p| p.score)).into_iter().map(|i| mine[i]).collect();
        let hits = greedy_hits(&ranked, &positives, |p, g| {
            if p.scene_id != g.scene_id || p.object_class != g.object_class {
                return Ok(None);
            }
            let (h, o) = (iou(p.human_box, g.human_box)?, iou(p.object_box, g.object_box)?);
            Ok((h > t && o > t).then(|| h.min(o).to_f64_lossy()))
        })?;
        per_action.push(Some(average_precision(&hits, positives.len())));
    }
    let present: Vec<f64> = per_action.iter().flatten().copied().collect();
    let mean_ap = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
    Ok(RoleReport { per_action, mean_ap })
}

/// Box-only metrics for one kind of box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectionReport {
    /// `None` without ground truth.
    pub recall: Option<f64>,
    /// 0 without predictions.
    pub precision: f64,
    /// Mean AP over classes with ground truth.
    pub map: Option<f64>,
}

struct Detection<S> {
    scene_id: u64,
    bbox: Xyxy<S>,
    class: usize,
    score: S,
}

/// Distinct boxes of one kind, each scored by its best triplet.
fn distinct<S: Scalar>(items: impl Iterator<Item = Detection<S>>) -> Vec<Detection<S>> {
    let mut out: Vec<Detection<S>> = Vec::new();
    for d in items {
        let key = |x: &Detection<S>| (x.scene_id, x.class, x.bbox.0.map(|v| v.to_f64_lossy().to_bits()));
        match out.iter_mut().find(|o| key(o) == key(&d)) {
            Some(o) => {
                if d.score > o.score {
                    o.score = d.score;
                }
            }
            None => out.push(d),
        }
    }
    out
}

fn detection_report<S: Scalar>(preds: &[Detection<S>], gts: &[Detection<S>], t: S) -> Result<DetectionReport> {
    let mut classes: Vec<usize> = gts.iter().map(|g| g.class).collect();
    classes.sort_unstable();
    classes.dedup();
    let ranked_all = by_score(preds.iter().map(|d| d.score));
    let mut tp = 0usize;
    let mut aps = Vec::new();
    for &c in &classes {
        let ranked: Vec<&Detection<S>> = ranked_all.iter().map(|&i| &preds[i]).filter(|d| d.class == c).collect();
        let positives: Vec<&Detection<S>> = gts.iter().filter(|g| g.class == c).collect();
        let hits = greedy_hits(&ranked, &positives, |p, g| {
            if p.scene_id != g.scene_id {
                return Ok(None);
            }
            let v = iou(p.bbox, g.bbox)?;
            Ok((v > t).then(|| v.to_f64_lossy()))
        })?;
        tp += hits.iter().filter(|&&h| h).count();
        aps.push(average_precision(&hits, positives.len()));
    }
    Ok(DetectionReport {
        recall: (!gts.is_empty()).then(|| tp as f64 / gts.len() as f64),
        precision: if preds.is_empty() { 0.0 } else { tp as f64 / preds.len() as f64 },
        map: (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64),
    })
}

/// Human boxes as one class and object boxes per class, ignoring actions.
/// Triplets sharing a box count as one detection scored by the best of them.
pub fn detection_metrics<S: Scalar>(
    preds: &[ScoredTriplet<S>],
    gts: &[GtInstance<S>],
    iou_threshold: f64,
) -> Result<(DetectionReport, DetectionReport)> {
    check_threshold("iou threshold", iou_threshold, false)?;
    preds.iter().try_for_each(ScoredTriplet::validate)?;
    let t = S::lit(iou_threshold);
    let pred = |objects: bool| {
        move |p: &ScoredTriplet<S>| Detection {
            scene_id: p.scene_id,
            bbox: if objects { p.object_box } else { p.human_box },
            class: if objects { p.object_class } else { 0 },
            score: p.score,
        }
    };
    let truth = |objects: bool| {
        move |g: &GtInstance<S>| Detection {
            scene_id: g.scene_id,
            bbox: if objects { g.object_box } else { g.human_box },
            class: if objects { g.object_class } else { 0 },
            score: S::one(),
        }
    };
    let report = |objects: bool| {
        detection_report(
            &distinct(preds.iter().map(pred(objects))),
            &distinct(gts.iter().map(truth(objects))),
            t,
        )
    };
    let (human, object) = (report(false)?, report(true)?);
    Ok((human, object))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub role: RoleReport,
    pub human: DetectionReport,
    pub object: DetectionReport,
}

impl EvalReport {
    /// Empty report used when there is no ground truth at all.
    pub fn empty(actions: usize) -> Self {
        let none = DetectionReport {
            recall: None,
            precision: 0.0,
            map: None,
        };
        EvalReport {
            role: RoleReport {
                per_action: vec![None; actions],
                mean_ap: None,
            },
            human: none,
            object: none,
        }
    }

    /// Two-column table; `-` marks undefined values.
    pub fn table(&self) -> String {
        let v = |x: Option<f64>| x.map_or_else(|| "-".to_string(), format_sig9);
        let mut s = String::from("metric\tvalue\n");
        for (a, ap) in self.role.per_action.iter().enumerate() {
            writeln!(s, "role_ap.{a}\t{}", v(*ap)).expect("write to string");
        }
        let rows = [
            ("role_map", self.role.mean_ap),
            ("human_recall", self.human.recall),
            ("human_precision", Some(self.human.precision)),
            ("human_ap", self.human.map),
            ("object_recall", self.object.recall),
            ("object_precision", Some(self.object.precision)),
            ("object_map", self.object.map),
        ];
        for (name, x) in rows {
            writeln!(s, "{name}\t{}", v(x)).expect("write to string");
        }
        s
    }
}

pub fn evaluate_triplets<S: Scalar>(
    preds: &[ScoredTriplet<S>],
    gts: &[GtInstance<S>],
    actions: usize,
    iou_threshold: f64,
) -> Result<EvalReport> {
    if gts.is_empty() {
        check_threshold("iou threshold", iou_threshold, false)?;
        return Ok(EvalReport::empty(actions));
    }
    let role = role_map(preds, gts, actions, iou_threshold)?;
    let (human, object) = detection_metrics(preds, gts, iou_threshold)?;
    Ok(EvalReport { role, human, object })
}

/// Scored, NMS-filtered triplets for every scene, in scene order.
pub fn infer<S: Scalar>(
    params: &HodnParams<S>,
    data: &[SceneSample<S>],
    nms_threshold: f64,
) -> Result<Vec<ScoredTriplet<S>>> {
    let mut out = Vec::new();
    for s in data {
        let preds = predict(params, &s.grid)?;
        out.extend(pairwise_nms(&score_predictions(s.scene_id, &preds), nms_threshold)?);
    }
    Ok(out)
}

pub fn evaluate<S: Scalar>(
    params: &HodnParams<S>,
    data: &[SceneSample<S>],
    nms_threshold: f64,
    iou_threshold: f64,
) -> Result<(EvalReport, Vec<ScoredTriplet<S>>)> {
    let preds = infer(params, data, nms_threshold)?;
    let report = evaluate_triplets(&preds, &ground_truth(data), params.config.actions, iou_threshold)?;
    Ok((report, preds))
}

/// One line per triplet: scene, human corners, object corners, class,
/// action, score, tab-separated.
pub fn write_dump<S: Scalar>(mut out: impl Write, triplets: &[ScoredTriplet<S>]) -> Result<()> {
    for t in triplets {
        let mut line = t.scene_id.to_string();
        for v in t.human_box.0.iter().chain(&t.object_box.0) {
            write!(line, "\t{:.16e}", v.to_f64_lossy()).expect("write to string");
        }
        write!(line, "\t{}\t{}\t{:.16e}", t.object_class, t.action, t.score.to_f64_lossy()).expect("write to string");
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Which ground-truth boxes the probe blanks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskTarget {
    Human,
    Object,
}

impl std::str::FromStr for MaskTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "human" => Ok(MaskTarget::Human),
            "object" => Ok(MaskTarget::Object),
            other => Err(Error::Config(format!("unknown mask target {other:?}"))),
        }
    }
}

impl std::fmt::Display for MaskTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MaskTarget::Human => "human",
            MaskTarget::Object => "object",
        })
    }
}

/// Zeroes, in every channel, the cells whose centers fall inside each
/// selected box. Each triplet's box is selected with probability `prob`.
/// Returns the masked scene and the number of distinct cells zeroed.
pub fn mask_scene<S: Scalar>(
    scene: &SceneSample<S>,
    targets: &[MaskTarget],
    prob: f64,
    rng: &mut impl Rng,
) -> Result<(SceneSample<S>, usize)> {
    if !(0.0..=1.0).contains(&prob) {
        return Err(Error::Parameter(format!("mask probability {prob} outside [0, 1]")));
    }
    let shape = scene.grid.shape().to_vec();
    if shape.len() != 3 {
        return Err(Error::Shape(format!("scene grid must be [C x H x W], got {shape:?}")));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let mut hit = vec![false; h * w];
    for t in &scene.triplets {
        for &target in targets {
            if !rng.gen_bool(prob) {
                continue;
            }
            let [x1, y1, x2, y2] = match target {
                MaskTarget::Human => t.human_box,
                MaskTarget::Object => t.object_box,
            }
            .to_xyxy()
            .0
            .map(|v| v.to_f64_lossy());
            for r in 0..h {
                let cy = (r as f64 + 0.5) / h as f64;
                for col in 0..w {
                    let cx = (col as f64 + 0.5) / w as f64;
                    if x1 < cx && cx < x2 && y1 < cy && cy < y2 {
                        hit[r * w + col] = true;
                    }
                }
            }
        }
    }
    let mut out = scene.clone();
    let data = out.grid.data_mut();
    for ch in 0..c {
        for (cell, _) in hit.iter().enumerate().filter(|(_, &m)| m) {
            data[ch * h * w + cell] = S::zero();
        }
    }
    Ok((out, hit.iter().filter(|&&m| m).count()))
}

/// Outcome of one masking level.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeResult {
    pub prob: f64,
    pub map: Option<f64>,
    pub masked_cells: usize,
}

/// Masks the selected ground-truth boxes of every scene with probability
/// `prob` and evaluates role mAP with fixed weights.
pub fn masking_probe<S: Scalar>(
    data: &[SceneSample<S>],
    params: &HodnParams<S>,
    targets: &[MaskTarget],
    prob: f64,
    seed: u64,
    nms_threshold: f64,
    iou_threshold: f64,
) -> Result<ProbeResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masked = Vec::with_capacity(data.len());
    let mut cells = 0;
    for s in data {
        let (m, n) = mask_scene(s, targets, prob, &mut rng)?;
        masked.push(m);
        cells += n;
    }
    let (report, _) = evaluate(params, &masked, nms_threshold, iou_threshold)?;
    Ok(ProbeResult {
        prob,
        map: report.role.mean_ap,
        masked_cells: cells,
    })
}

#[cfg(test)]
mod tests;
