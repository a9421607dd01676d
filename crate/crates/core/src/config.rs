//! Run configuration files: one `key = value` per line, `#` starts a
//! comment, unknown or repeated keys are rejected, missing keys keep their
//! defaults.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{GradientRoute, LinkMode, ModelConfig};
use crate::training::{AdamWConfig, LossWeights, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub weights: LossWeights<f64>,
    pub optimizer: AdamWConfig<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub link_mode: LinkMode,
    pub sg_enabled: bool,
    pub nms_threshold: f64,
    pub iou_threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            weights: LossWeights::default(),
            optimizer: AdamWConfig::default(),
            epochs: 1,
            batch_size: 1,
            seed: 0,
            link_mode: LinkMode::HumanGuide,
            sg_enabled: true,
            nms_threshold: 0.7,
            iou_threshold: 0.5,
        }
    }
}

pub const KEYS: [&str; 23] = [
    "d",
    "heads",
    "encoder_layers",
    "decoder_layers",
    "N",
    "K_obj",
    "K_act",
    "C",
    "grid_h",
    "grid_w",
    "lambda_reg",
    "lambda_giou",
    "lambda_o",
    "lambda_a",
    "lr",
    "weight_decay",
    "epochs",
    "batch_size",
    "seed",
    "link_mode",
    "sg_enabled",
    "nms_threshold",
    "iou_threshold",
];

fn value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
}

impl RunConfig {
    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        match key {
            "d" => m.dim = value(key, v)?,
            "heads" => m.heads = value(key, v)?,
            "encoder_layers" => m.encoder_layers = value(key, v)?,
            "decoder_layers" => m.decoder_layers = value(key, v)?,
            "N" => m.queries = value(key, v)?,
            "K_obj" => m.object_classes = value(key, v)?,
            "K_act" => m.actions = value(key, v)?,
            "C" => m.channels = value(key, v)?,
            "grid_h" => m.grid_h = value(key, v)?,
            "grid_w" => m.grid_w = value(key, v)?,
            "lambda_reg" => self.weights.reg = value(key, v)?,
            "lambda_giou" => self.weights.giou = value(key, v)?,
            "lambda_o" => self.weights.object = value(key, v)?,
            "lambda_a" => self.weights.action = value(key, v)?,
            "lr" => self.optimizer.lr = value(key, v)?,
            "weight_decay" => self.optimizer.weight_decay = value(key, v)?,
            "epochs" => self.epochs = value(key, v)?,
            "batch_size" => self.batch_size = value(key, v)?,
            "seed" => self.seed = value(key, v)?,
            "link_mode" => self.link_mode = v.parse()?,
            "sg_enabled" => self.sg_enabled = value(key, v)?,
            "nms_threshold" => self.nms_threshold = value(key, v)?,
            "iou_threshold" => self.iou_threshold = value(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parses config text; `path` only labels errors.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, found {line:?}")))?;
            let (key, v) = (key.trim(), v.trim());
            if seen.iter().any(|k| k == key) {
                return Err(err(format!("duplicate key {key:?}")));
            }
            cfg.set(key, v).map_err(|e| err(e.to_string()))?;
            seen.push(key.to_string());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let w = &self.weights;
        for (name, x) in [
            ("lambda_reg", w.reg),
            ("lambda_giou", w.giou),
            ("lambda_o", w.object),
            ("lambda_a", w.action),
            ("weight_decay", self.optimizer.weight_decay),
        ] {
            if !(x.is_finite() && x >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {x}")));
            }
        }
        if !(self.optimizer.lr.is_finite() && self.optimizer.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.optimizer.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.nms_threshold > 0.0 && self.nms_threshold <= 1.0) {
            return Err(Error::Config(format!("nms_threshold {} outside (0, 1]", self.nms_threshold)));
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(Error::Config(format!("iou_threshold {} outside (0, 1)", self.iou_threshold)));
        }
        Ok(())
    }

    /// Every key in canonical order; parsing the result gives back `self`.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let values: [String; 23] = [
            m.dim.to_string(),
            m.heads.to_string(),
            m.encoder_layers.to_string(),
            m.decoder_layers.to_string(),
            m.queries.to_string(),
            m.object_classes.to_string(),
            m.actions.to_string(),
            m.channels.to_string(),
            m.grid_h.to_string(),
            m.grid_w.to_string(),
            self.weights.reg.to_string(),
            self.weights.giou.to_string(),
            self.weights.object.to_string(),
            self.weights.action.to_string(),
            self.optimizer.lr.to_string(),
            self.optimizer.weight_decay.to_string(),
            self.epochs.to_string(),
            self.batch_size.to_string(),
            self.seed.to_string(),
            self.link_mode.to_string(),
            self.sg_enabled.to_string(),
            self.nms_threshold.to_string(),
            self.iou_threshold.to_string(),
        ];
        let mut s = String::new();
        for (k, v) in KEYS.iter().zip(values) {
            writeln!(s, "{k} = {v}").expect("write to string");
        }
        s
    }

    pub fn train_config(&self) -> TrainConfig<f64> {
        TrainConfig {
            weights: self.weights,
            optimizer: self.optimizer,
            epochs: self.epochs,
            batch_size: self.batch_size,
            route: GradientRoute::from_sg(self.sg_enabled),
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        RunConfig::parse(text, Path::new("run.cfg"))
    }

    #[test]
    fn empty_text_gives_defaults() {
        let c = parse("# nothing\n\n").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.weights, LossWeights { reg: 1.0, giou: 2.5, object: 1.0, action: 1.0 });
        assert_eq!((c.nms_threshold, c.iou_threshold), (0.7, 0.5));
    }

    #[test]
    fn keys_and_comments() {
        let c = parse("d = 16 # narrower\nN=4\nlink_mode = object_guide\nsg_enabled = false\nlr = 3e-3\n").unwrap();
        assert_eq!((c.model.dim, c.model.queries), (16, 4));
        assert_eq!(c.link_mode, LinkMode::ObjectGuide);
        assert!(!c.sg_enabled);
        assert_eq!(c.optimizer.lr, 3e-3);
    }

    #[test]
    fn rejects_bad_input() {
        for (text, line) in [
            ("dim = 32", 1),
            ("d = 32\nd = 16", 2),
            ("\nd 32", 2),
            ("heads = two", 1),
            ("link_mode = sideways", 1),
        ] {
            match parse(text) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        for text in ["d = 30", "batch_size = 0", "iou_threshold = 1", "lr = 0", "lambda_a = -1"] {
            assert!(matches!(parse(text), Err(Error::Config(_))), "{text}");
        }
    }

    proptest! {
        #[test]
        fn text_round_trips(
            d in 1usize..8,
            lr in 1e-6..1.0f64,
            wd in 0.0..1e-2f64,
            giou in 0.0..5.0f64,
            seed in any::<u64>(),
            mode in 0usize..4,
            sg in any::<bool>(),
            nms in 0.01..=1.0f64,
        ) {
            let mut c = RunConfig::default();
            c.model.dim = 4 * d;
            c.model.heads = 1;
            c.optimizer.lr = lr;
            c.optimizer.weight_decay = wd;
            c.weights.giou = giou;
            c.seed = seed;
            c.link_mode = LinkMode::ALL[mode];
            c.sg_enabled = sg;
            c.nms_threshold = nms;
            prop_assert_eq!(parse(&c.to_text()).unwrap(), c);
        }
    }
}
