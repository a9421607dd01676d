//! Brute-force reference implementations shared by the integration tests.

#![allow(dead_code)]

use hodn::evaluation::{iou, GtInstance, ScoredTriplet};
use hodn::geometry::Xyxy;
use rand::seq::SliceRandom;
use rand::Rng;

/// Cheapest injective assignment of rows to columns, by enumeration.
pub fn brute_force_min_cost(cost: &[Vec<f64>]) -> f64 {
    fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == cost.len() {
            *best = best.min(acc);
            return;
        }
        for c in 0..cost[row].len() {
            if !used[c] {
                used[c] = true;
                go(cost, row + 1, used, acc + cost[row][c], best);
                used[c] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    let cols = cost.first().map_or(0, Vec::len);
    go(cost, 0, &mut vec![false; cols], 0.0, &mut best);
    if cost.is_empty() {
        0.0
    } else {
        best
    }
}

/// Greedy independent set: take the best remaining triplet, delete everything
/// it suppresses, repeat.
pub fn nms_oracle(ts: &[ScoredTriplet<f64>], thr: f64) -> Vec<ScoredTriplet<f64>> {
    let mut left = ts.to_vec();
    let mut out = Vec::new();
    while !left.is_empty() {
        let top = (0..left.len()).fold(0, |b, i| if left[i].score > left[b].score { i } else { b });
        let k = left.remove(top);
        left.retain(|c| {
            !(c.scene_id == k.scene_id
                && c.object_class == k.object_class
                && c.action == k.action
                && iou(c.human_box, k.human_box).unwrap() > thr
                && iou(c.object_box, k.object_box).unwrap() > thr)
        });
        out.push(k);
    }
    out
}

/// Recounts true positives from scratch for every prefix of the ranking and
/// integrates the precision envelope over recall.
pub fn ap_oracle<P>(ranked: &[P], positives: usize, tp_of_prefix: impl Fn(&[P]) -> usize) -> f64 {
    let pts: Vec<(f64, f64)> = (1..=ranked.len())
        .map(|k| {
            let tp = tp_of_prefix(&ranked[..k]) as f64;
            (tp / positives as f64, tp / k as f64)
        })
        .collect();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (k, &(r, _)) in pts.iter().enumerate() {
        let envelope = pts[k..].iter().map(|p| p.1).fold(0.0, f64::max);
        ap += (r - prev) * envelope;
        prev = r;
    }
    ap
}

/// True positives of a greedy pass: each prediction claims the free truth
/// with the largest overlap score.
pub fn greedy_tp<P, G>(preds: &[P], gts: &[G], overlap: impl Fn(&P, &G) -> Option<f64>) -> usize {
    let mut free = vec![true; gts.len()];
    let mut tp = 0;
    for p in preds {
        let mut pick: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if let (true, Some(o)) = (free[j], overlap(p, g)) {
                if pick.is_none_or(|(_, b)| o > b) {
                    pick = Some((j, o));
                }
            }
        }
        if let Some((j, _)) = pick {
            free[j] = false;
            tp += 1;
        }
    }
    tp
}

fn sorted_desc<T: Clone>(items: &[T], score: impl Fn(&T) -> f64) -> Vec<T> {
    let mut v = items.to_vec();
    v.sort_by(|a, b| score(b).partial_cmp(&score(a)).unwrap());
    v
}

fn mean(xs: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = xs.iter().flatten().copied().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

/// Per-action AP and their mean.
pub fn role_oracle(
    preds: &[ScoredTriplet<f64>],
    gts: &[GtInstance<f64>],
    actions: usize,
    thr: f64,
) -> (Vec<Option<f64>>, Option<f64>) {
    let per: Vec<Option<f64>> = (0..actions)
        .map(|a| {
            let pos = gts.iter().filter(|g| g.actions[a]).count();
            (pos > 0).then(|| {
                let mine: Vec<ScoredTriplet<f64>> = preds.iter().filter(|p| p.action == a).cloned().collect();
                let ranked = sorted_desc(&mine, |p| p.score);
                ap_oracle(&ranked, pos, |prefix| {
                    greedy_tp(prefix, gts, |p, g| {
                        let h = iou(p.human_box, g.human_box).unwrap();
                        let o = iou(p.object_box, g.object_box).unwrap();
                        (p.scene_id == g.scene_id
                            && p.object_class == g.object_class
                            && g.actions[p.action]
                            && h > thr
                            && o > thr)
                            .then(|| h.min(o))
                    })
                })
            })
        })
        .collect();
    let m = mean(&per);
    (per, m)
}

#[derive(Clone, Debug)]
struct Det {
    scene: u64,
    bbox: Xyxy<f64>,
    class: usize,
    score: f64,
}

fn dedupe(ds: Vec<Det>) -> Vec<Det> {
    let mut out: Vec<Det> = Vec::new();
    for d in ds {
        match out.iter_mut().find(|o| o.scene == d.scene && o.class == d.class && o.bbox == d.bbox) {
            Some(o) => o.score = o.score.max(d.score),
            None => out.push(d),
        }
    }
    out
}

/// `(recall, precision, mAP)` for human boxes (`objects = false`) or object
/// boxes.
pub fn detection_oracle(
    preds: &[ScoredTriplet<f64>],
    gts: &[GtInstance<f64>],
    thr: f64,
    objects: bool,
) -> (Option<f64>, f64, Option<f64>) {
    let dets = dedupe(
        preds
            .iter()
            .map(|p| Det {
                scene: p.scene_id,
                bbox: if objects { p.object_box } else { p.human_box },
                class: if objects { p.object_class } else { 0 },
                score: p.score,
            })
            .collect(),
    );
    let truth = dedupe(
        gts.iter()
            .map(|g| Det {
                scene: g.scene_id,
                bbox: if objects { g.object_box } else { g.human_box },
                class: if objects { g.object_class } else { 0 },
                score: 1.0,
            })
            .collect(),
    );
    let overlap = |p: &Det, g: &Det| {
        let v = iou(p.bbox, g.bbox).unwrap();
        (p.scene == g.scene && p.class == g.class && v > thr).then_some(v)
    };
    let mut classes: Vec<usize> = truth.iter().map(|t| t.class).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut aps = Vec::new();
    let mut tp = 0;
    for c in classes {
        let mine: Vec<Det> = dets.iter().filter(|d| d.class == c).cloned().collect();
        let ranked = sorted_desc(&mine, |d| d.score);
        let pos: Vec<Det> = truth.iter().filter(|t| t.class == c).cloned().collect();
        tp += greedy_tp(&ranked, &pos, overlap);
        aps.push(Some(ap_oracle(&ranked, pos.len(), |prefix| greedy_tp(prefix, &pos, overlap))));
    }
    let recall = (!truth.is_empty()).then(|| tp as f64 / truth.len() as f64);
    let precision = if dets.is_empty() { 0.0 } else { tp as f64 / dets.len() as f64 };
    (recall, precision, mean(&aps))
}

const POOL: [[f64; 4]; 5] = [
    [0.1, 0.1, 0.4, 0.5],
    [0.12, 0.1, 0.42, 0.5],
    [0.1, 0.15, 0.4, 0.55],
    [0.5, 0.5, 0.8, 0.9],
    [0.55, 0.5, 0.85, 0.9],
];

/// Up to 6 predictions and 1 to 3 ground-truth pairs over two scenes, two
/// classes and two actions. Boxes come from a small pool so that matches,
/// near misses and duplicates all occur. Scores are distinct.
pub fn random_case(rng: &mut impl Rng) -> (Vec<ScoredTriplet<f64>>, Vec<GtInstance<f64>>) {
    let pick = |rng: &mut dyn rand::RngCore| Xyxy(POOL[rng.gen_range(0..POOL.len())]);
    let n_gt = rng.gen_range(1..=3);
    let gts = (0..n_gt)
        .map(|_| {
            let mut actions = vec![rng.gen_bool(0.6), rng.gen_bool(0.6)];
            if !actions.iter().any(|&a| a) {
                actions[rng.gen_range(0..2)] = true;
            }
            GtInstance {
                scene_id: rng.gen_range(0..2),
                human_box: pick(rng),
                object_box: pick(rng),
                object_class: rng.gen_range(0..2),
                actions,
            }
        })
        .collect();
    let n = rng.gen_range(0..=6);
    let mut ranks: Vec<usize> = (0..n).collect();
    ranks.shuffle(rng);
    let preds = ranks
        .into_iter()
        .map(|r| ScoredTriplet {
            scene_id: rng.gen_range(0..2),
            human_box: pick(rng),
            object_box: pick(rng),
            object_class: rng.gen_range(0..2),
            action: rng.gen_range(0..2),
            score: 0.9 - 0.1 * r as f64,
        })
        .collect();
    (preds, gts)
}

pub fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= 1e-12,
        (None, None) => true,
        _ => false,
    }
}
