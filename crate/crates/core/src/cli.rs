//! Command-line surface: run configuration and the `generate`, `train`,
//! `quantize`, `evaluate` and `perf` commands.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::closed_loop::{evaluate, OfdmContext, Predistorter};
use crate::dataset::{split_ranges, Dataset};
use crate::dpd::DpdModel;
use crate::error::{Error, Result};
use crate::fxp::FxpFormat;
use crate::io::{self, ModelFile};
use crate::metrics::{MetricConfig, MetricReport};
use crate::nonlin::ActivationPair;
use crate::ofdm::{generate_ofdm, OfdmConfig};
use crate::pa::{make_default_pa, PaModel};
use crate::perf::{self, Mapping, OpBreakdown, PeArrayConfig, PerfReport};
use crate::quant::{quantize_model, QuantConfig};
use crate::signal::Waveform;
use crate::train::{train, TrainConfig};

/// Reference op count the perf report compares against.
pub const REFERENCE_OPS: usize = 1026;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    #[default]
    Hard,
    Reference,
    Lut,
}

impl ActivationKind {
    pub fn pair(self) -> ActivationPair {
        match self {
            ActivationKind::Hard => ActivationPair::hard(),
            ActivationKind::Reference => ActivationPair::reference(),
            ActivationKind::Lut => ActivationPair::lut(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub activations: ActivationKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let (train, val, test) = crate::dataset::DEFAULT_SPLIT;
        Self { train, val, test }
    }
}

/// Input and output files referenced by a run. Relative paths are resolved
/// against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Dataset CSV; when absent the OFDM signal is generated from `[ofdm]`.
    pub dataset: Option<PathBuf>,
    /// Weight file to quantize or evaluate.
    pub model: Option<PathBuf>,
    /// Float weights to start training from instead of a random init.
    pub init_model: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// When set, seeds the OFDM generator, the weight init and the trainer.
    pub seed: Option<u64>,
    pub ofdm: OfdmConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub quant: QuantConfig,
    pub metrics: MetricConfig,
    pub split: SplitConfig,
    pub perf: PeArrayConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string().trim().to_string()))?;
        Ok(cfg)
    }

    /// Parse, resolve relative paths against the file's directory, validate.
    pub fn load(path: &Path) -> Result<Self> {
        let at = |e: Error| {
            let msg = match e {
                Error::InvalidConfig(m) => m,
                other => other.to_string(),
            };
            Error::InvalidConfig(format!("{}: {msg}", path.display()))
        };
        let text = std::fs::read_to_string(path).map_err(|e| at(e.into()))?;
        let mut cfg = Self::from_toml(&text).map_err(at)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.paths.dataset, &mut cfg.paths.model, &mut cfg.paths.init_model]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate().map_err(at)?;
        Ok(cfg)
    }

    /// Apply a seed to every seeded component.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed.or(self.seed) {
            self.seed = Some(s);
            self.ofdm.seed = s;
            self.train.seed = s;
        }
        self
    }

    /// Seed of the random weight init.
    pub fn init_seed(&self) -> u64 {
        self.seed.unwrap_or(self.train.seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.ofdm.validate()?;
        self.train.validate()?;
        for (name, f) in [("quant.weight_fmt", self.quant.weight_fmt), ("quant.activation_fmt", self.quant.activation_fmt)] {
            FxpFormat::new(f.total_bits(), f.frac_bits()).map_err(|e| Error::InvalidConfig(format!("{name}: {e}")))?;
        }
        self.quant.validate()?;
        self.perf.validate()?;
        let m = &self.metrics;
        if m.segment_len == 0 || !(0.0..1.0).contains(&m.overlap) {
            return Err(Error::InvalidConfig(
                "metrics.segment_len must be positive and metrics.overlap in [0, 1)".into(),
            ));
        }
        let s = &self.split;
        split_ranges(self.ofdm.total_len(), (s.train, s.val, s.test))
            .map_err(|e| Error::InvalidConfig(format!("split: {e}")))?;
        Ok(())
    }

    fn fractions(&self) -> (f64, f64, f64) {
        (self.split.train, self.split.val, self.split.test)
    }
}

#[derive(Debug, Parser)]
#[command(name = "dpd", version, about = "Fixed-point GRU digital pre-distortion toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the OFDM waveform and the PA dataset.
    Generate(CommonArgs),
    /// Train a GRU pre-distorter through the PA model.
    Train(CommonArgs),
    /// Quantize float weights to fixed point.
    Quantize(CommonArgs),
    /// Closed-loop metrics with and without pre-distortion.
    Evaluate(CommonArgs),
    /// Op count, schedule and throughput of the accelerator model.
    Perf(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML run configuration; defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Generate(_) => "generate",
            Command::Train(_) => "train",
            Command::Quantize(_) => "quantize",
            Command::Evaluate(_) => "evaluate",
            Command::Perf(_) => "perf",
        }
    }

    pub fn args(&self) -> &CommonArgs {
        match self {
            Command::Generate(a) | Command::Train(a) | Command::Quantize(a) | Command::Evaluate(a) | Command::Perf(a) => a,
        }
    }
}

/// Run one command; returns a one-line summary.
pub fn run(cmd: &Command) -> Result<String> {
    let a = cmd.args();
    let cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => {
            let c = RunConfig::default();
            c.validate()?;
            c
        }
    }
    .with_seed(a.seed);
    std::fs::create_dir_all(&a.out).map_err(|e| Error::Format(format!("{}: {e}", a.out.display())))?;
    match cmd {
        Command::Generate(_) => cmd_generate(&cfg, &a.out).map(|m| {
            format!("generated {} samples, PAPR {:.2} dB", m.num_samples, m.papr_db)
        }),
        Command::Train(_) => cmd_train(&cfg, &a.out).map(|r| {
            format!("trained {} epochs, best val loss {:.3e}", r.epochs_run, r.best_val_loss.unwrap_or(f64::NAN))
        }),
        Command::Quantize(_) => cmd_quantize(&cfg, &a.out).map(|r| {
            format!("quantized {} parameters, {} saturated", r.parameters, r.saturated)
        }),
        Command::Evaluate(_) => cmd_evaluate(&cfg, &a.out).map(|r| {
            format!(
                "ACPR {:.2} dBc (no DPD {:.2}), NMSE {:.2} dB (no DPD {:.2})",
                r.with_dpd.acpr_db, r.without_dpd.acpr_db, r.with_dpd.nmse_db, r.without_dpd.nmse_db
            )
        }),
        Command::Perf(_) => cmd_perf(&cfg, &a.out).map(|r| {
            format!(
                "{} ops/sample, latency {} cycles ({} ns), II {} ({} MSps), {} GOPS",
                r.report.ops_per_sample,
                r.report.latency_cycles,
                r.report.latency_ns,
                r.report.initiation_interval_cycles,
                r.report.max_sample_rate_msps,
                r.report.throughput_gops
            )
        }),
    }
}

fn write(out: &Path, name: &str, text: &str) -> Result<()> {
    let p = out.join(name);
    std::fs::write(&p, text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub scale: f64,
    pub papr_db: f64,
    pub sample_rate_hz: f64,
    pub num_samples: usize,
    pub clip_iterations: usize,
    pub ofdm: OfdmConfig,
    pub pa: PaModel,
}

/// Writes `waveform.csv`, `dataset.csv`, `reference_symbols.csv` and
/// `manifest.json`.
pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    let sig = generate_ofdm(&cfg.ofdm)?;
    let pa = make_default_pa();
    let ds = Dataset::from_pa(sig.waveform.clone(), &pa)?;
    write(out, "waveform.csv", &io::iq_csv(&sig.waveform.samples))?;
    write(out, "dataset.csv", &io::dataset_csv(&ds))?;
    write(out, "reference_symbols.csv", &io::iq_csv(&sig.reference_symbols))?;
    let m = Manifest {
        seed: cfg.ofdm.seed,
        scale: sig.waveform.scale,
        papr_db: sig.papr_db,
        sample_rate_hz: sig.waveform.sample_rate_hz,
        num_samples: sig.waveform.len(),
        clip_iterations: sig.clip_iterations,
        ofdm: cfg.ofdm.clone(),
        pa,
    };
    write(out, "manifest.json", &io::to_json(&m)?)?;
    Ok(m)
}

/// PA input waveform of the run: the configured dataset, or a freshly
/// generated OFDM signal together with its reference symbols.
fn input_signal(cfg: &RunConfig) -> Result<(Waveform, Option<Vec<num_complex::Complex64>>)> {
    match &cfg.paths.dataset {
        Some(p) => Ok((io::read_dataset_csv(p, cfg.ofdm.sample_rate_hz())?.input, None)),
        None => {
            let s = generate_ofdm(&cfg.ofdm)?;
            Ok((s.waveform, Some(s.reference_symbols)))
        }
    }
}

fn require<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::InvalidConfig(format!("paths.{key} is required for this command")))
}

fn load_float(p: &Path) -> Result<DpdModel> {
    match io::load_model(p)? {
        ModelFile::Float(m) => Ok(m),
        ModelFile::Fixed(_) => Err(Error::Format(format!("{}: expected float weights", p.display()))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub final_lr: Option<f64>,
    pub qat: bool,
    pub parameters: usize,
}

/// Writes `model.json` (float weights), `history.csv` and
/// `train_report.json`.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<TrainReport> {
    let (x, _) = input_signal(cfg)?;
    let [tr, va, _] = split_ranges(x.len(), cfg.fractions())?;
    let activations = cfg.model.activations.pair();
    let init = match &cfg.paths.init_model {
        Some(p) => DpdModel {
            activations,
            ..load_float(p)?
        },
        None => DpdModel::random(&mut ChaCha8Rng::seed_from_u64(cfg.init_seed()), activations),
    };
    let (model, history) = train(&init, &x.slice(tr), &x.slice(va), &make_default_pa(), &cfg.train)?;
    io::save_model(&out.join("model.json"), &ModelFile::Float(model.clone()))?;
    write(out, "history.csv", &io::history_csv(&history))?;
    let best = history.best_epoch.and_then(|b| history.epochs.iter().find(|e| e.epoch == b));
    let r = TrainReport {
        seed: cfg.train.seed,
        epochs_run: history.epochs.len(),
        best_epoch: history.best_epoch,
        best_val_loss: best.map(|e| e.val_loss),
        final_lr: history.epochs.last().map(|e| e.lr),
        qat: cfg.train.qat.is_some(),
        parameters: model.param_count(),
    };
    write(out, "train_report.json", &io::to_json(&r)?)?;
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantReport {
    pub weight_fmt: FxpFormat,
    pub activation_fmt: FxpFormat,
    pub parameters: usize,
    pub saturated: usize,
    pub saturated_fraction: f64,
    pub weight_buffer_bits: usize,
}

/// Writes `model_fixed.json` and `quant_report.json`.
pub fn cmd_quantize(cfg: &RunConfig, out: &Path) -> Result<QuantReport> {
    let m = load_float(require(&cfg.paths.model, "model")?)?;
    let (fx, saturated) = quantize_model(&m, &cfg.quant)?;
    io::save_model(&out.join("model_fixed.json"), &ModelFile::Fixed(fx))?;
    let parameters = m.param_count();
    let r = QuantReport {
        weight_fmt: cfg.quant.weight_fmt,
        activation_fmt: cfg.quant.activation_fmt,
        parameters,
        saturated,
        saturated_fraction: saturated as f64 / parameters as f64,
        weight_buffer_bits: perf::weight_buffer_bits(&m, cfg.quant.weight_fmt),
    };
    write(out, "quant_report.json", &io::to_json(&r)?)?;
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// `"none"`, `"float"` or `"fixed"`.
    pub predistorter: String,
    pub window_start: usize,
    pub window_end: usize,
    pub with_dpd: MetricReport,
    pub without_dpd: MetricReport,
    pub acpr_improvement_db: f64,
    pub nmse_improvement_db: f64,
}

/// Runs DPD → PA on the test split. Writes `metrics.json`,
/// `psd_with_dpd.csv` and `psd_without_dpd.csv`. Without `paths.model` the
/// pre-distorter is the identity.
pub fn cmd_evaluate(cfg: &RunConfig, out: &Path) -> Result<EvaluationReport> {
    let (x, refs) = input_signal(cfg)?;
    let [_, _, te] = split_ranges(x.len(), cfg.fractions())?;
    let (name, pre) = match &cfg.paths.model {
        None => ("none", Predistorter::Identity),
        Some(p) => match io::load_model(p)? {
            ModelFile::Float(m) => ("float", Predistorter::Float(m)),
            ModelFile::Fixed(m) => ("fixed", Predistorter::Fixed(m)),
        },
    };
    let pa = make_default_pa();
    let ctx = refs.as_deref().map(|r| OfdmContext {
        config: &cfg.ofdm,
        reference_symbols: r,
    });
    let run = |p: &Predistorter| evaluate(&x, &pa, p, te.clone(), cfg.ofdm.channel_bw_hz, &cfg.metrics, ctx);
    let with = run(&pre)?;
    let without = run(&Predistorter::Identity)?;
    write(out, "psd_with_dpd.csv", &io::psd_csv(&with.psd.to_db_rows()))?;
    write(out, "psd_without_dpd.csv", &io::psd_csv(&without.psd.to_db_rows()))?;
    let r = EvaluationReport {
        predistorter: name.into(),
        window_start: te.start,
        window_end: te.end,
        acpr_improvement_db: without.report.acpr_db - with.report.acpr_db,
        nmse_improvement_db: without.report.nmse_db - with.report.nmse_db,
        with_dpd: with.report,
        without_dpd: without.report,
    };
    write(out, "metrics.json", &io::to_json(&r)?)?;
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfOutput {
    #[serde(flatten)]
    pub report: PerfReport,
    pub reference_ops_per_sample: usize,
    pub ops_deviation_percent: f64,
    pub mapping: Mapping,
    pub config: PeArrayConfig,
    pub weight_buffer_bits: usize,
    pub op_breakdown: OpBreakdown,
}

/// Writes `perf_report.json`, `schedule_trace.csv` and `op_breakdown.md`.
pub fn cmd_perf(cfg: &RunConfig, out: &Path) -> Result<PerfOutput> {
    let model = DpdModel::zeros(cfg.model.activations.pair());
    let s = perf::schedule_detailed(&model, &cfg.perf)?;
    s.check_legal()?;
    let ops = s.report.ops_per_sample;
    let r = PerfOutput {
        reference_ops_per_sample: REFERENCE_OPS,
        ops_deviation_percent: (ops as f64 - REFERENCE_OPS as f64) / REFERENCE_OPS as f64 * 100.0,
        mapping: s.mapping,
        config: cfg.perf,
        weight_buffer_bits: perf::weight_buffer_bits(&model, cfg.quant.weight_fmt),
        op_breakdown: perf::op_breakdown(&model),
        report: s.report.clone(),
    };
    write(out, "perf_report.json", &io::to_json(&r)?)?;
    write(out, "schedule_trace.csv", &s.trace_csv())?;
    write(out, "op_breakdown.md", &r.op_breakdown.to_markdown())?;
    Ok(r)
}

/// One-line JSON error record for standard error.
pub fn error_line(command: &str, err: &Error) -> String {
    serde_json::json!({ "status": "error", "command": command, "message": err.to_string() }).to_string()
}
