//! One scene per line, four tab-separated fields:
//!
//! ```text
//! <scene_id> \t <C> <H> <W> \t <C·H·W grid values> \t <triplet>;<triplet>;...
//! ```
//!
//! A triplet is `hcx hcy hw hh ocx ocy ow oh class bits`, where `bits` holds
//! one `0`/`1` per action. Floats are written with 17 significant digits so
//! that a save/load cycle is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::SceneSample;
use crate::error::{Error, Result};
use crate::geometry::Cxcywh;
use crate::model::ModelConfig;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::training::GroundTruthTriplet;

fn float<S: Scalar>(out: &mut String, x: S) {
    write!(out, "{:.16e}", x.to_f64_lossy()).expect("write to string");
}

fn scene_line<S: Scalar>(s: &SceneSample<S>) -> String {
    let mut line = format!("{}\t", s.scene_id);
    let dims: Vec<String> = s.grid.shape().iter().map(ToString::to_string).collect();
    line.push_str(&dims.join(" "));
    line.push('\t');
    for (i, &v) in s.grid.data().iter().enumerate() {
        if i > 0 {
            line.push(' ');
        }
        float(&mut line, v);
    }
    line.push('\t');
    for (i, t) in s.triplets.iter().enumerate() {
        if i > 0 {
            line.push(';');
        }
        for v in t.human_box.0.iter().chain(&t.object_box.0) {
            float(&mut line, *v);
            line.push(' ');
        }
        write!(line, "{} ", t.object_class).expect("write to string");
        line.extend(t.interaction_labels.iter().map(|&b| if b { '1' } else { '0' }));
    }
    line
}

pub fn write_dataset<S: Scalar>(mut out: impl Write, data: &[SceneSample<S>]) -> Result<()> {
    for s in data {
        writeln!(out, "{}", scene_line(s))?;
    }
    Ok(())
}

pub fn save_dataset<S: Scalar>(path: &Path, data: &[SceneSample<S>]) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset(&mut buf, data)?;
    fs::write(path, buf)?;
    Ok(())
}

struct LineParser<'a> {
    path: &'a Path,
    line: usize,
}

impl LineParser<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            msg: msg.into(),
        }
    }

    fn num<T: std::str::FromStr>(&self, tok: Option<&str>, what: &str) -> Result<T> {
        let tok = tok.ok_or_else(|| self.err(format!("missing {what}")))?;
        tok.parse().map_err(|_| self.err(format!("bad {what} {tok:?}")))
    }

    fn finite<S: Scalar>(&self, tok: Option<&str>, what: &str) -> Result<S> {
        let v: f64 = self.num(tok, what)?;
        if !v.is_finite() {
            return Err(self.err(format!("non-finite {what}")));
        }
        Ok(S::lit(v))
    }

    fn triplet<S: Scalar>(&self, text: &str) -> Result<GroundTruthTriplet<S>> {
        let mut toks = text.split_whitespace();
        let mut b = [S::zero(); 8];
        for v in b.iter_mut() {
            *v = self.finite(toks.next(), "box coordinate")?;
        }
        let object_class = self.num(toks.next(), "object class")?;
        let bits = toks.next().ok_or_else(|| self.err("missing action bits"))?;
        let interaction_labels = bits
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(self.err(format!("bad action bit {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        if toks.next().is_some() {
            return Err(self.err("trailing tokens in triplet"));
        }
        Ok(GroundTruthTriplet {
            human_box: Cxcywh([b[0], b[1], b[2], b[3]]),
            object_box: Cxcywh([b[4], b[5], b[6], b[7]]),
            object_class,
            interaction_labels,
        })
    }

    fn scene<S: Scalar>(&self, text: &str) -> Result<SceneSample<S>> {
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() != 4 {
            return Err(self.err(format!("expected 4 tab-separated fields, found {}", fields.len())));
        }
        let scene_id = self.num(Some(fields[0].trim()), "scene id")?;
        let mut dims = fields[1].split_whitespace();
        let shape: Vec<usize> = (0..3)
            .map(|_| self.num(dims.next(), "grid dimension"))
            .collect::<Result<_>>()?;
        if dims.next().is_some() || shape.contains(&0) {
            return Err(self.err("grid dimensions must be three positive integers"));
        }
        let values = fields[2]
            .split_whitespace()
            .map(|t| self.finite(Some(t), "grid value"))
            .collect::<Result<Vec<S>>>()?;
        let expected: usize = shape.iter().product();
        if values.len() != expected {
            return Err(self.err(format!(
                "grid {shape:?} needs {expected} values, found {}",
                values.len()
            )));
        }
        let triplets = fields[3]
            .split(';')
            .filter(|t| !t.trim().is_empty())
            .map(|t| self.triplet(t))
            .collect::<Result<_>>()?;
        Ok(SceneSample {
            scene_id,
            grid: Tensor::new(shape, values)?,
            triplets,
        })
    }
}

/// Parses dataset text; `path` only labels errors.
pub fn parse_dataset<S: Scalar>(text: &str, path: &Path) -> Result<Vec<SceneSample<S>>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| LineParser { path, line: i + 1 }.scene(l))
        .collect()
}

pub fn load_dataset<S: Scalar>(path: &Path) -> Result<Vec<SceneSample<S>>> {
    let text = fs::read_to_string(path)?;
    parse_dataset(&text, &PathBuf::from(path))
}

/// Checks every scene against the model's grid and label sizes.
pub fn check_dataset<S: Scalar>(data: &[SceneSample<S>], cfg: &ModelConfig) -> Result<()> {
    let want = [cfg.channels, cfg.grid_h, cfg.grid_w];
    for s in data {
        if s.grid.shape() != want {
            return Err(Error::Format(format!(
                "scene {} has grid {:?}, config expects {want:?}",
                s.scene_id,
                s.grid.shape()
            )));
        }
        if s.triplets.is_empty() {
            return Err(Error::Format(format!("scene {} has no triplets", s.scene_id)));
        }
        if s.triplets.len() > cfg.queries {
            return Err(Error::Format(format!(
                "scene {} has {} triplets but only {} query slots",
                s.scene_id,
                s.triplets.len(),
                cfg.queries
            )));
        }
        for t in &s.triplets {
            t.validate(cfg.object_classes, cfg.actions)
                .map_err(|e| Error::Format(format!("scene {}: {e}", s.scene_id)))?;
        }
    }
    Ok(())
}
