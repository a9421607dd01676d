//! Command-line entry points.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::data::{check_dataset, generate_dataset, load_dataset, save_dataset, SceneSample};
use crate::error::Result;
use crate::evaluation::{evaluate, masking_probe, write_dump, MaskTarget};
use crate::gradcheck::{Coverage, GradCheckReport};
use crate::model::{GradientRoute, HodnParams, LinkMode};
use crate::training::{format_sig9, scene_gradcheck, train_loop, OptimizerState, StepLog};

pub const GRADCHECK_EPS: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_PER_PARAM: usize = 16;

#[derive(Parser, Debug)]
#[command(name = "hodn", version, about = "Train and evaluate a human/object disentangling HOI detector")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProbeTarget {
    Human,
    Object,
    Both,
}

impl ProbeTarget {
    fn masks(self) -> &'static [MaskTarget] {
        match self {
            ProbeTarget::Human => &[MaskTarget::Human],
            ProbeTarget::Object => &[MaskTarget::Object],
            ProbeTarget::Both => &[MaskTarget::Human, MaskTarget::Object],
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            ProbeTarget::Human => "human",
            ProbeTarget::Object => "object",
            ProbeTarget::Both => "both",
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic dataset.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from a fresh initialization; writes a checkpoint, the loss log
    /// and the effective config into the output directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print role mAP and detection metrics for a checkpoint.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also write every scored triplet after NMS to this file.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Compare the full loss gradient with central differences.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Coordinates sampled per parameter tensor.
        #[arg(long, default_value_t = GRADCHECK_PER_PARAM)]
        per_param: usize,
        /// Check every coordinate instead of a sample.
        #[arg(long)]
        all: bool,
    },
    /// Role mAP as ground-truth boxes are blanked out of the input.
    Probe {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        target: ProbeTarget,
        /// Comma-separated masking probabilities.
        #[arg(long, value_delimiter = ',', required = true)]
        probs: Vec<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train every link mode and gradient route variant from the same seed
    /// and tabulate the results.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// One row of the ablation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Variant {
    pub name: &'static str,
    pub mode: LinkMode,
    pub route: GradientRoute,
}

pub const VARIANTS: [Variant; 6] = [
    Variant {
        name: "hodn",
        mode: LinkMode::HumanGuide,
        route: GradientRoute::StopObject,
    },
    Variant {
        name: "addition_guide",
        mode: LinkMode::AdditionGuide,
        route: GradientRoute::StopObject,
    },
    Variant {
        name: "random_guide",
        mode: LinkMode::RandomGuide,
        route: GradientRoute::StopObject,
    },
    Variant {
        name: "object_guide",
        mode: LinkMode::ObjectGuide,
        route: GradientRoute::StopObject,
    },
    Variant {
        name: "no_sg",
        mode: LinkMode::HumanGuide,
        route: GradientRoute::Open,
    },
    Variant {
        name: "sg_human",
        mode: LinkMode::HumanGuide,
        route: GradientRoute::StopHuman,
    },
];

fn load_data(path: &Path, cfg: &RunConfig) -> Result<Vec<SceneSample<f64>>> {
    let data = load_dataset(path)?;
    check_dataset(&data, &cfg.model)?;
    Ok(data)
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), format_sig9)
}

/// Result of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub params: HodnParams<f64>,
    pub optimizer: OptimizerState<f64>,
    pub log: Vec<StepLog<f64>>,
}

/// Trains from `cfg.seed` and writes `config.cfg`, `train_log.tsv` and
/// `checkpoint/` under `out`.
pub fn train_to_dir(
    cfg: &RunConfig,
    route: GradientRoute,
    data: &[SceneSample<f64>],
    out: &Path,
) -> Result<TrainOutcome> {
    fs::create_dir_all(out)?;
    fs::write(out.join("config.cfg"), cfg.to_text())?;
    let mut params = HodnParams::init(&cfg.model, cfg.link_mode, cfg.seed)?;
    let mut optimizer = OptimizerState::new(&params.store, cfg.optimizer);
    let train = crate::training::TrainConfig {
        route,
        ..cfg.train_config()
    };
    let log = train_loop(&mut params, &mut optimizer, data, &train, |_| {})?;
    let mut text = format!("{}\n", StepLog::<f64>::HEADER);
    for l in &log {
        text.push_str(&l.line());
        text.push('\n');
    }
    fs::write(out.join("train_log.tsv"), text)?;
    save_checkpoint(&out.join("checkpoint"), &params, Some(&optimizer))?;
    Ok(TrainOutcome {
        params,
        optimizer,
        log,
    })
}

pub fn gradcheck_table(report: &GradCheckReport) -> String {
    let mut s = String::from("param\tcoordinates\trefined\tmax_rel_error\tpassed\n");
    for c in &report.params {
        s.push_str(&format!(
            "{}\t{}\t{}\t{:e}\t{}\n",
            c.name, c.coordinates, c.refined, c.max_rel_error, c.passed
        ));
    }
    s.push_str(&format!(
        "all\t{}\t{}\t{:e}\t{}\n",
        report.coordinates(),
        report.params.iter().map(|c| c.refined).sum::<usize>(),
        report.max_rel_error(),
        report.passed()
    ));
    s
}

/// Full-loss gradient check of a fresh model on a generated scene, both
/// seeded by `seed`.
pub fn run_gradcheck(cfg: &RunConfig, seed: u64, coverage: Coverage) -> Result<GradCheckReport> {
    let params = HodnParams::<f64>::init(&cfg.model, cfg.link_mode, seed)?;
    let scene = crate::data::generate_scene(seed, &cfg.model)?;
    scene_gradcheck(
        &params,
        &scene,
        cfg.weights,
        GradientRoute::from_sg(cfg.sg_enabled),
        GRADCHECK_EPS,
        GRADCHECK_TOLERANCE,
        coverage,
    )
}

fn execute(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<bool> {
    match cmd {
        Command::Gen {
            config,
            count,
            seed,
            out: path,
        } => {
            let cfg = RunConfig::load(&config)?;
            save_dataset(&path, &generate_dataset::<f64>(seed, count, &cfg.model)?)?;
            writeln!(out, "scenes\tpath\n{count}\t{}", path.display())?;
        }
        Command::Train {
            config,
            data,
            out: dir,
            seed,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let data = load_data(&data, &cfg)?;
            let run = train_to_dir(&cfg, GradientRoute::from_sg(cfg.sg_enabled), &data, &dir)?;
            writeln!(out, "{}", StepLog::<f64>::HEADER)?;
            if let Some(last) = run.log.last() {
                writeln!(out, "{}", last.line())?;
            }
        }
        Command::Eval {
            config,
            data,
            checkpoint,
            dump,
        } => {
            let cfg = RunConfig::load(&config)?;
            let data = load_data(&data, &cfg)?;
            let ckpt = load_checkpoint(&checkpoint, &cfg)?;
            let (report, preds) = evaluate(&ckpt.params, &data, cfg.nms_threshold, cfg.iou_threshold)?;
            if let Some(path) = dump {
                let mut buf = Vec::new();
                write_dump(&mut buf, &preds)?;
                fs::write(path, buf)?;
            }
            out.write_all(report.table().as_bytes())?;
        }
        Command::Gradcheck {
            config,
            seed,
            per_param,
            all,
        } => {
            let cfg = RunConfig::load(&config)?;
            let seed = seed.unwrap_or(cfg.seed);
            let coverage = if all {
                Coverage::All
            } else {
                Coverage::Sample { per_param, seed }
            };
            let report = run_gradcheck(&cfg, seed, coverage)?;
            out.write_all(gradcheck_table(&report).as_bytes())?;
            if !report.passed() {
                let names: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
                writeln!(err, "gradient check failed for: {}", names.join(", "))?;
                return Ok(false);
            }
        }
        Command::Probe {
            config,
            data,
            checkpoint,
            target,
            probs,
            seed,
        } => {
            let cfg = RunConfig::load(&config)?;
            let data = load_data(&data, &cfg)?;
            let ckpt = load_checkpoint(&checkpoint, &cfg)?;
            let seed = seed.unwrap_or(cfg.seed);
            writeln!(out, "target\tprob\tmap\tmasked_cells")?;
            for p in probs {
                let r = masking_probe(
                    &data,
                    &ckpt.params,
                    target.masks(),
                    p,
                    seed,
                    cfg.nms_threshold,
                    cfg.iou_threshold,
                )?;
                writeln!(out, "{}\t{}\t{}\t{}", target.as_str(), p, opt(r.map), r.masked_cells)?;
            }
        }
        Command::Ablate {
            config,
            data,
            out: dir,
        } => {
            let base = RunConfig::load(&config)?;
            let data = load_data(&data, &base)?;
            let mut table =
                String::from("variant\tlink_mode\troute\tfinal_loss\trole_map\thuman_ap\tobject_map\n");
            for v in VARIANTS {
                let cfg = RunConfig {
                    link_mode: v.mode,
                    sg_enabled: v.route != GradientRoute::Open,
                    ..base.clone()
                };
                let run = train_to_dir(&cfg, v.route, &data, &dir.join(v.name))?;
                let (report, _) = evaluate(&run.params, &data, cfg.nms_threshold, cfg.iou_threshold)?;
                let loss = run.log.last().map(|l| l.breakdown.total);
                table.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                    v.name,
                    v.mode,
                    v.route.as_str(),
                    opt(loss),
                    opt(report.role.mean_ap),
                    opt(report.human.map),
                    opt(report.object.map)
                ));
            }
            fs::write(dir.join("ablation.tsv"), &table)?;
            out.write_all(table.as_bytes())?;
        }
    }
    Ok(true)
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code: 0 on success, 1 on failure, 2 on a usage error.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(cli.command, out, err) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}
