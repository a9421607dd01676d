//! Checkpoint directories.
//!
//! `manifest.tsv` lists one tensor per line after a short header:
//!
//! ```text
//! hodn-checkpoint  1
//! link_mode        human_guide
//! step             120                      (only with optimizer moments)
//! param            encoder.0.norm1.gain  32  0
//! moment1          encoder.0.norm1.gain  32  4817
//! ```
//!
//! Fields are tab-separated; shapes are `x`-joined; offsets count `f64`
//! values into `tensors.bin`, which holds every tensor back to back in
//! little-endian order.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::{HodnParams, LinkMode};
use crate::params::ParamSet;
use crate::tensor::Tensor;
use crate::training::OptimizerState;

pub const MANIFEST: &str = "manifest.tsv";
pub const BLOB: &str = "tensors.bin";
const MAGIC: &str = "hodn-checkpoint";
const VERSION: &str = "1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: HodnParams<f64>,
    pub optimizer: Option<OptimizerState<f64>>,
}

pub fn save_checkpoint(dir: &Path, params: &HodnParams<f64>, optimizer: Option<&OptimizerState<f64>>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = format!("{MAGIC}\t{VERSION}\nlink_mode\t{}\n", params.mode);
    if let Some(o) = optimizer {
        writeln!(manifest, "step\t{}", o.step).expect("write to string");
    }
    let mut blob = Vec::with_capacity(8 * params.store.numel() * if optimizer.is_some() { 3 } else { 1 });
    let mut sections: Vec<(&str, &[Tensor<f64>])> = vec![("param", params.store.tensors())];
    if let Some(o) = optimizer {
        sections.push(("moment1", &o.first));
        sections.push(("moment2", &o.second));
    }
    let mut offset = 0;
    for (kind, tensors) in sections {
        for (name, t) in params.store.names().iter().zip(tensors) {
            let shape: Vec<String> = t.shape().iter().map(ToString::to_string).collect();
            writeln!(manifest, "{kind}\t{name}\t{}\t{offset}", shape.join("x")).expect("write to string");
            blob.extend(t.data().iter().flat_map(|v| v.to_le_bytes()));
            offset += t.len();
        }
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    fs::write(dir.join(BLOB), blob)?;
    Ok(())
}

struct Entry {
    kind: String,
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Corruption(msg.into())
}

fn parse_entry(line: &str) -> Result<Entry> {
    let f: Vec<&str> = line.split('\t').collect();
    let [kind, name, shape, offset] = f[..] else {
        return Err(corrupt(format!("malformed manifest line {line:?}")));
    };
    let shape = shape
        .split('x')
        .map(|d| d.parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| corrupt(format!("bad shape in {line:?}")))?;
    let offset = offset.parse().map_err(|_| corrupt(format!("bad offset in {line:?}")))?;
    Ok(Entry {
        kind: kind.to_string(),
        name: name.to_string(),
        shape,
        offset,
    })
}

/// Loads a checkpoint and checks it against the model `config` describes.
pub fn load_checkpoint(dir: &Path, config: &RunConfig) -> Result<Checkpoint> {
    let manifest = fs::read_to_string(dir.join(MANIFEST))?;
    let blob = fs::read(dir.join(BLOB))?;
    let mut lines = manifest.lines();
    if lines.next() != Some(&format!("{MAGIC}\t{VERSION}")) {
        return Err(corrupt("missing or unsupported manifest header"));
    }
    let mode: LinkMode = match lines.next().and_then(|l| l.strip_prefix("link_mode\t")) {
        Some(m) => m.parse().map_err(|_| corrupt(format!("unknown link mode {m:?}")))?,
        None => return Err(corrupt("manifest lacks link_mode")),
    };
    let mut step = None;
    let mut entries = Vec::new();
    for line in lines {
        if let Some(s) = line.strip_prefix("step\t") {
            step = Some(s.parse::<u64>().map_err(|_| corrupt(format!("bad step {s:?}")))?);
        } else {
            entries.push(parse_entry(line)?);
        }
    }
    if blob.len() % 8 != 0 {
        return Err(corrupt(format!("blob length {} is not a multiple of 8", blob.len())));
    }
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut next = 0;
    let mut sets: [ParamSet<f64>; 3] = [ParamSet::new(), ParamSet::new(), ParamSet::new()];
    for e in entries {
        let n: usize = e.shape.iter().product();
        if e.offset != next || next + n > values.len() {
            return Err(corrupt(format!(
                "tensor {} at offset {} does not fit the {}-value blob",
                e.name,
                e.offset,
                values.len()
            )));
        }
        let slot = match e.kind.as_str() {
            "param" => 0,
            "moment1" => 1,
            "moment2" => 2,
            other => return Err(corrupt(format!("unknown entry kind {other:?}"))),
        };
        let t = Tensor::new(e.shape, values[next..next + n].to_vec()).map_err(|err| corrupt(err.to_string()))?;
        sets[slot].push(e.name, t);
        next += n;
    }
    if next != values.len() {
        return Err(corrupt(format!("blob holds {} values, manifest accounts for {next}", values.len())));
    }
    let [store, first, second] = sets;
    if mode != config.link_mode {
        return Err(Error::Compatibility {
            names: vec![format!("link_mode ({mode} in checkpoint, {} in config)", config.link_mode)],
        });
    }
    let params = HodnParams::init(&config.model, config.link_mode, 0)?.with_store(store)?;
    let optimizer = match step {
        None if first.is_empty() && second.is_empty() => None,
        Some(step) => {
            let same = |m: &ParamSet<f64>| {
                m.len() == params.store.len()
                    && m.iter().zip(params.store.iter()).all(|(a, b)| a.1 == b.1 && a.2.shape() == b.2.shape())
            };
            if !(same(&first) && same(&second)) {
                return Err(corrupt("optimizer moments do not mirror the parameters"));
            }
            Some(OptimizerState {
                first: first.tensors().to_vec(),
                second: second.tensors().to_vec(),
                step,
                hyper: config.optimizer,
            })
        }
        None => return Err(corrupt("optimizer moments without a step")),
    };
    Ok(Checkpoint { params, optimizer })
}
