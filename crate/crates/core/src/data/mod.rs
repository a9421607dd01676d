//! Synthetic scenes and the dataset text format.
//!
//! A scene is a `[C × H × W]` feature grid with grid-aligned boxes. Cells of
//! a human box carry the pair's action bits in channels `0..K_act`; cells of
//! an object box carry a one-hot class in channels `K_act..K_act + K_obj`;
//! every other cell holds uniform noise in `±NOISE`. Each object sits flush
//! against its human, so pairing is recoverable from the grid alone.

mod dataset;

pub use dataset::{check_dataset, load_dataset, parse_dataset, save_dataset, write_dataset};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::Cxcywh;
use crate::model::ModelConfig;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::training::GroundTruthTriplet;

/// Amplitude of background noise.
pub const NOISE: f64 = 0.05;
/// Most pairs placed in one scene.
pub const MAX_PAIRS: usize = 4;
const MIN_SIDE: usize = 2;
const MAX_SIDE: usize = 3;
const ATTEMPTS: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample<S> {
    pub scene_id: u64,
    /// `[C × H × W]`.
    pub grid: Tensor<S>,
    pub triplets: Vec<GroundTruthTriplet<S>>,
}

impl<S: Scalar> SceneSample<S> {
    pub fn cast<T: Scalar>(&self) -> SceneSample<T> {
        SceneSample {
            scene_id: self.scene_id,
            grid: self.grid.cast(),
            triplets: self.triplets.iter().map(GroundTruthTriplet::cast).collect(),
        }
    }
}

/// Box in whole cells: column, row, width, height.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct CellBox {
    x: usize,
    y: usize,
    w: usize,
    h: usize,
}

impl CellBox {
    fn overlaps(&self, o: &CellBox) -> bool {
        self.x < o.x + o.w && o.x < self.x + self.w && self.y < o.y + o.h && o.y < self.y + self.h
    }

    fn normalized<S: Scalar>(&self, cfg: &ModelConfig) -> Cxcywh<S> {
        let (gw, gh) = (cfg.grid_w as f64, cfg.grid_h as f64);
        Cxcywh([
            S::lit((self.x as f64 + self.w as f64 / 2.0) / gw),
            S::lit((self.y as f64 + self.h as f64 / 2.0) / gh),
            S::lit(self.w as f64 / gw),
            S::lit(self.h as f64 / gh),
        ])
    }

    fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.y..self.y + self.h).flat_map(move |r| (self.x..self.x + self.w).map(move |c| (r, c)))
    }
}

fn side(rng: &mut ChaCha8Rng) -> usize {
    rng.gen_range(MIN_SIDE..=MAX_SIDE)
}

/// Human box plus an object touching one of its sides, both inside the grid.
fn place_pair(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Option<(CellBox, CellBox)> {
    let (hw, hh, ow, oh) = (side(rng), side(rng), side(rng), side(rng));
    if hw > cfg.grid_w || hh > cfg.grid_h {
        return None;
    }
    let human = CellBox {
        x: rng.gen_range(0..=cfg.grid_w - hw),
        y: rng.gen_range(0..=cfg.grid_h - hh),
        w: hw,
        h: hh,
    };
    let slide = |rng: &mut ChaCha8Rng, start: usize, len: usize, other: usize, limit: usize| {
        let lo = (start + 1).saturating_sub(other);
        let hi = (start + len - 1).min(limit.checked_sub(other)?);
        (lo <= hi).then(|| rng.gen_range(lo..=hi))
    };
    let object = match rng.gen_range(0..4) {
        0 => CellBox {
            x: human.x + hw,
            y: slide(rng, human.y, hh, oh, cfg.grid_h)?,
            w: ow,
            h: oh,
        },
        1 => CellBox {
            x: human.x.checked_sub(ow)?,
            y: slide(rng, human.y, hh, oh, cfg.grid_h)?,
            w: ow,
            h: oh,
        },
        2 => CellBox {
            x: slide(rng, human.x, hw, ow, cfg.grid_w)?,
            y: human.y + hh,
            w: ow,
            h: oh,
        },
        _ => CellBox {
            x: slide(rng, human.x, hw, ow, cfg.grid_w)?,
            y: human.y.checked_sub(oh)?,
            w: ow,
            h: oh,
        },
    };
    (object.x + object.w <= cfg.grid_w && object.y + object.h <= cfg.grid_h).then_some((human, object))
}

/// Deterministic synthetic scene; `scene_id` is the seed.
pub fn generate_scene<S: Scalar>(seed: u64, cfg: &ModelConfig) -> Result<SceneSample<S>> {
    cfg.validate()?;
    let (ka, ko) = (cfg.actions, cfg.object_classes);
    if cfg.channels < ka + ko {
        return Err(Error::Config(format!(
            "scene generation needs channels >= actions + object_classes ({}), got {}",
            ka + ko,
            cfg.channels
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wanted = rng.gen_range(1..=MAX_PAIRS.min(cfg.queries));
    let mut taken: Vec<CellBox> = Vec::new();
    let mut pairs = Vec::new();
    for _ in 0..wanted {
        let placed = (0..ATTEMPTS).find_map(|_| {
            place_pair(&mut rng, cfg).filter(|(h, o)| !taken.iter().any(|t| t.overlaps(h) || t.overlaps(o)))
        });
        let Some((human, object)) = placed else { break };
        taken.extend([human, object]);
        let class = rng.gen_range(0..ko);
        let mut labels: Vec<bool> = (0..ka).map(|_| rng.gen_bool(0.5)).collect();
        if !labels.iter().any(|&a| a) {
            labels[rng.gen_range(0..ka)] = true;
        }
        pairs.push((human, object, class, labels));
    }
    if pairs.is_empty() {
        return Err(Error::Config(format!(
            "a {}x{} grid cannot hold a pair of {MIN_SIDE}..{MAX_SIDE}-cell boxes",
            cfg.grid_h, cfg.grid_w
        )));
    }

    let (h, w) = (cfg.grid_h, cfg.grid_w);
    let mut data = vec![S::zero(); cfg.channels * h * w];
    let mut covered = vec![false; h * w];
    for t in &taken {
        t.cells().for_each(|(r, c)| covered[r * w + c] = true);
    }
    for (cell, &inside) in covered.iter().enumerate() {
        if !inside {
            for ch in 0..cfg.channels {
                data[ch * h * w + cell] = S::lit(rng.gen_range(-NOISE..NOISE));
            }
        }
    }
    let mut triplets = Vec::with_capacity(pairs.len());
    for (human, object, class, labels) in pairs {
        for (r, c) in human.cells() {
            for (a, &on) in labels.iter().enumerate() {
                if on {
                    data[a * h * w + r * w + c] = S::one();
                }
            }
        }
        for (r, c) in object.cells() {
            data[(ka + class) * h * w + r * w + c] = S::one();
        }
        triplets.push(GroundTruthTriplet {
            human_box: human.normalized(cfg),
            object_box: object.normalized(cfg),
            object_class: class,
            interaction_labels: labels,
        });
    }
    Ok(SceneSample {
        scene_id: seed,
        grid: Tensor::new(vec![cfg.channels, h, w], data)?,
        triplets,
    })
}

/// `count` scenes seeded `seed, seed + 1, ...`.
pub fn generate_dataset<S: Scalar>(seed: u64, count: usize, cfg: &ModelConfig) -> Result<Vec<SceneSample<S>>> {
    (0..count as u64)
        .map(|i| generate_scene(seed.wrapping_add(i), cfg))
        .collect()
}
