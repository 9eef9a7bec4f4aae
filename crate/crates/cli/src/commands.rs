//! Subcommands of the `bsat` binary.
//!
//! Commands print to the supplied writer and write files atomically. No
//! output contains timestamps or wall-clock values, so identical arguments
//! and inputs produce identical bytes.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bsat::baseline::uds_reconstruct;
use bsat::baseline::uds_tokens;
use bsat::cache::write_atomic;
use bsat::data::{chronological_split, windows, Split};
use bsat::eval::{bca_ci, l2_second_diff, mean, parse_records, permutation_entropy, total_variation};
use bsat::posenc::{apply_rotary, rope_frequencies, PosEncMode};
use bsat::spline::{basis_matrix, linspace, KnotVector};
use bsat::tokenizer::{clip_grid, fit_window_full, tune_clip_factor, CacheStatus, TokenizerConfig};
use bsat_forecast::checkpoint::{self, Checkpoint};
use bsat_forecast::gradcheck::{grad_check, DEFAULT_STEP};
use bsat_forecast::{Model, ModelConfig, TokenWindow};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::pipeline::{self, split_name, SPLITS};
use crate::svg;

#[derive(Debug, Parser)]
#[command(name = "bsat", version, about = "B-spline adaptive tokenization for time-series forecasting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Run settings from a config file plus the common overrides.
#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Token budget per window (45, 90 or 180 in the benchmarks).
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub lookback: Option<usize>,
    /// lpe, f-rope, l-rope, f-rope-lpe or l-rope-lpe.
    #[arg(long)]
    pub mode: Option<PosEncMode>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        RunConfig::load(&self.config)?.with_overrides(self.budget, self.lookback, self.mode, self.seed)
    }
}

/// A series given either by a config file or directly by path and column.
#[derive(Debug, Args)]
pub struct SourceArgs {
    #[arg(long, conflicts_with = "data")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "OT")]
    pub column: String,
    /// Block-mean factor.
    #[arg(long, default_value_t = 1)]
    pub aggregate: usize,
    /// Keep only the first samples after aggregation; 0 keeps all.
    #[arg(long, default_value_t = 0)]
    pub truncate: usize,
}

impl SourceArgs {
    /// Raw series in original units and the dataset name used for length checks.
    fn load(&self) -> Result<(Vec<f64>, String, Option<RunConfig>)> {
        match (&self.config, &self.data) {
            (Some(path), _) => {
                let cfg = RunConfig::load(path)?;
                let (raw, _) = pipeline::load_series(&cfg.data, &cfg.column, cfg.aggregate, cfg.truncate)?;
                Ok((raw, cfg.name.clone(), Some(cfg)))
            }
            (None, Some(data)) => {
                let (raw, _) = pipeline::load_series(data, &self.column, self.aggregate, self.truncate)?;
                let name = data
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                Ok((raw, name, None))
            }
            (None, None) => Err(CliError::Usage("either --config or --data is required".into())),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit spline tokens for every split and fill the token cache.
    Tokenize(RunArgs),
    /// Grid-search the clip factor on the train split.
    TuneClip {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 0.10)]
        lo: f64,
        #[arg(long, default_value_t = 1.25)]
        hi: f64,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        /// Stride between tuning windows.
        #[arg(long, default_value_t = 100)]
        stride: usize,
    },
    /// Train a forecaster and write the checkpoint and epoch history.
    Train(RunArgs),
    /// Test-split metrics with bootstrap intervals over window errors.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Defaults to `model.ckpt` in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Total variation, curvature norm and permutation entropy of a series.
    Analyze {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, default_value_t = 3)]
        order: usize,
        #[arg(long, default_value_t = 1)]
        delay: usize,
    },
    /// Reconstruction error of each tokenizer at a matched budget, or a table of metric files.
    Compare {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, default_value_t = 45)]
        budget: usize,
        #[arg(long, default_value_t = 720)]
        lookback: usize,
        #[arg(long, default_value_t = 100)]
        stride: usize,
        /// Metric files written by `evaluate`; when given, no series is read.
        #[arg(long, num_args = 1..)]
        records: Vec<PathBuf>,
    },
    /// SVG of one window's decomposition.
    Plot {
        #[command(flatten)]
        source: SourceArgs,
        /// First sample of the window within the train split.
        #[arg(long, default_value_t = 0)]
        start: usize,
        #[arg(long, default_value_t = 45)]
        budget: usize,
        #[arg(long, default_value_t = 720)]
        lookback: usize,
        #[arg(long, default_value_t = 1.0)]
        clip: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a two-tone sine CSV with a `value` column.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        length: usize,
        #[arg(long, default_value_t = 60.0)]
        period_a: f64,
        #[arg(long, default_value_t = 200.0)]
        period_b: f64,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Quick property checks of the numerical core.
    Selftest,
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| CliError::Usage(e.to_string().trim().to_string()))?;
    execute(cli.command, out)
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    let text = match command {
        Command::Tokenize(run) => tokenize(&run.resolve()?)?,
        Command::TuneClip {
            run,
            lo,
            hi,
            step,
            stride,
        } => tune_clip(&run.resolve()?, lo, hi, step, stride)?,
        Command::Train(run) => train(&run.resolve()?)?,
        Command::Evaluate { run, checkpoint } => evaluate(&run.resolve()?, checkpoint.as_deref())?,
        Command::Analyze { source, order, delay } => analyze(&source, order, delay)?,
        Command::Compare {
            source,
            budget,
            lookback,
            stride,
            records,
        } => {
            if records.is_empty() {
                compare(&source, budget, lookback, stride)?
            } else {
                compare_records(&records)?
            }
        }
        Command::Plot {
            source,
            start,
            budget,
            lookback,
            clip,
            out,
        } => plot(&source, start, budget, lookback, clip, &out)?,
        Command::Synth {
            out,
            length,
            period_a,
            period_b,
            noise,
            seed,
        } => synth(&out, length, (period_a, period_b), noise, seed)?,
        Command::Selftest => selftest()?,
    };
    out.write_all(text.as_bytes())?;
    Ok(())
}

fn warn(warnings: &[String]) {
    for w in warnings {
        eprintln!("{w}");
    }
}

fn cache_label(status: &CacheStatus) -> String {
    match status {
        CacheStatus::Disabled => "cache off".into(),
        CacheStatus::Hit => "cache hit".into(),
        CacheStatus::Miss => "cache miss".into(),
        CacheStatus::Rejected(why) => format!("cache rejected ({why})"),
    }
}

pub fn tokenize(cfg: &RunConfig) -> Result<String> {
    if cfg.tokenizer != bsat_forecast::input::TokenizerKind::Bsat {
        return Err(CliError::Usage(format!(
            "tokenize builds spline caches; config selects tokenizer {}",
            cfg.tokenizer
        )));
    }
    let loaded = pipeline::load_dataset(cfg)?;
    warn(&loaded.warnings);
    let mut s = String::new();
    for split in SPLITS {
        let inputs = pipeline::split_inputs(cfg, &loaded.dataset, split)?;
        let _ = write!(
            s,
            "{}: {} windows, {}, {} fits",
            split_name(split),
            inputs.windows.len(),
            cache_label(&inputs.cache),
            inputs.fits
        );
        if inputs.fits > 0 {
            let _ = write!(
                s,
                ", ridge fallback {}, clipped coefficients {}",
                inputs.ridge, inputs.clipped
            );
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn tune_clip(cfg: &RunConfig, lo: f64, hi: f64, step: f64, stride: usize) -> Result<String> {
    let loaded = pipeline::load_dataset(cfg)?;
    warn(&loaded.warnings);
    let grid = clip_grid(lo, hi, step)?;
    let train = loaded.dataset.split_values(Split::Train);
    let tuning = tune_clip_factor(train, cfg.tokens.lookback, cfg.tokens.budget, &grid, stride)?;
    let mut s = String::from("g max_window_rmse\n");
    for (g, e) in &tuning.curve {
        let _ = writeln!(s, "{g} {e}");
    }
    let _ = writeln!(s, "g*={}", tuning.best);
    Ok(s)
}

pub fn train(cfg: &RunConfig) -> Result<String> {
    let loaded = pipeline::load_dataset(cfg)?;
    warn(&loaded.warnings);
    let ds = &loaded.dataset;
    let outcome = pipeline::train_run(cfg, ds)?;
    let mut state = outcome.state;
    state.model = outcome.best;
    let bases = state.model.layer_bases();
    let ckpt = Checkpoint {
        state,
        norm_mean: ds.mean,
        norm_std: ds.std,
    };
    std::fs::create_dir_all(&cfg.out_dir)?;
    checkpoint::save(&cfg.out_dir.join("model.ckpt"), &ckpt)?;
    write_atomic(
        &cfg.out_dir.join("history.txt"),
        pipeline::history_text(&outcome.history).as_bytes(),
    )?;
    let best_val = ckpt.state.best_val_rmse;
    let mut s = String::new();
    let _ = writeln!(s, "epochs={}", outcome.history.len());
    let _ = writeln!(s, "best_epoch={}", outcome.best_epoch);
    let _ = writeln!(s, "best_val_rmse={best_val}");
    let _ = writeln!(s, "stopped_early={}", outcome.stopped_early);
    let b: Vec<String> = bases.iter().map(|b| b.to_string()).collect();
    let _ = writeln!(s, "rope_bases={}", b.join(","));
    let _ = writeln!(s, "base_spread={}", pipeline::base_spread(&bases));
    let _ = writeln!(s, "checkpoint={}", cfg.out_dir.join("model.ckpt").display());
    Ok(s)
}

fn same_architecture(a: &ModelConfig, b: &ModelConfig) -> bool {
    (a.layers, a.d_model, a.heads, a.ff_factor, a.horizon, a.mode, a.tokens, a.value_dim, a.lookback)
        == (b.layers, b.d_model, b.heads, b.ff_factor, b.horizon, b.mode, b.tokens, b.value_dim, b.lookback)
}

pub fn evaluate(cfg: &RunConfig, ckpt_path: Option<&Path>) -> Result<String> {
    let path = ckpt_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_dir.join("model.ckpt"));
    let ckpt = checkpoint::load(&path)?;
    let model: &Model = &ckpt.state.model;
    if !same_architecture(&model.config, &cfg.model) {
        return Err(CliError::Usage(format!(
            "checkpoint {} does not match the configured model",
            path.display()
        )));
    }
    let loaded = pipeline::load_dataset(cfg)?;
    warn(&loaded.warnings);
    let ds = &loaded.dataset;
    if ckpt.norm_mean != ds.mean || ckpt.norm_std != ds.std {
        return Err(CliError::Usage(
            "checkpoint normalization differs from the train split of this dataset".into(),
        ));
    }
    let eval = pipeline::evaluate(cfg, ds, model)?;
    let records = eval.to_records(cfg);
    std::fs::create_dir_all(&cfg.out_dir)?;
    write_atomic(&cfg.out_dir.join("metrics.txt"), records.as_bytes())?;
    Ok(records)
}

pub fn analyze(source: &SourceArgs, order: usize, delay: usize) -> Result<String> {
    let (raw, name, _) = source.load()?;
    if let Some(expected) = pipeline::known_length(&name) {
        if expected != raw.len() {
            eprintln!("warning: {name} has {} samples, expected {expected}", raw.len());
        }
    }
    let ds = chronological_split(&name, "", &raw)?;
    let mut s = String::new();
    let _ = writeln!(s, "samples={}", raw.len());
    let _ = writeln!(s, "split={}/{}/{}", ds.train.len(), ds.val.len(), ds.test.len());
    let _ = writeln!(s, "total_variation={}", total_variation(&raw)?);
    let _ = writeln!(s, "l2_second_diff={}", l2_second_diff(&raw)?);
    let _ = writeln!(
        s,
        "permutation_entropy={} (order {order}, delay {delay})",
        permutation_entropy(&raw, order, delay)?
    );
    Ok(s)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-window reconstruction RMSE of spline tokens and of linearly interpolated
/// downsampled tokens.
pub fn reconstruction_errors(
    windows: &[&[f64]],
    config: &TokenizerConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut bsat = Vec::with_capacity(windows.len());
    let mut uds = Vec::with_capacity(windows.len());
    for w in windows {
        bsat.push(fit_window_full(w, config)?.diagnostics().fit_rmse);
        let rec = uds_reconstruct(&uds_tokens(w, config.budget)?, w.len())?;
        let se: f64 = rec.iter().zip(w.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        uds.push((se / w.len() as f64).sqrt());
    }
    Ok((bsat, uds))
}

pub fn compare(source: &SourceArgs, budget: usize, lookback: usize, stride: usize) -> Result<String> {
    let (raw, name, cfg) = source.load()?;
    let ds = chronological_split(&name, "", &raw)?;
    let config = match cfg {
        Some(c) => TokenizerConfig {
            budget,
            lookback,
            ..c.tokens
        },
        None => TokenizerConfig {
            budget,
            lookback,
            ..TokenizerConfig::default()
        },
    };
    let train = ds.split_values(Split::Train);
    let pairs = windows(train, lookback, 1, stride)?;
    let lookbacks: Vec<&[f64]> = pairs.iter().map(|p| p.lookback).collect();
    let (b, u) = reconstruction_errors(&lookbacks, &config)?;
    let mut s = String::new();
    let _ = writeln!(s, "train windows={}, lookback {lookback}, budget {budget}", lookbacks.len());
    let _ = writeln!(s, "tokenizer median_rmse mean_rmse");
    let _ = writeln!(s, "bsat {} {}", median(b.clone()), mean(&b));
    let _ = writeln!(s, "uds {} {}", median(u.clone()), mean(&u));
    let _ = writeln!(s, "patch 0 0 (lossless: patches carry every sample)");
    Ok(s)
}

pub fn compare_records(paths: &[PathBuf]) -> Result<String> {
    let columns = [
        "dataset",
        "tokenizer",
        "mode",
        "budget",
        "model.rmse",
        "model.mae",
        "model.window_rmse_lower",
        "model.window_rmse_upper",
        "baseline.rmse",
    ];
    let mut s = columns.join(" ");
    s.push('\n');
    for path in paths {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        let map = parse_records(&text)?;
        let row: Vec<String> = columns
            .iter()
            .map(|c| {
                map.get(*c).cloned().ok_or_else(|| {
                    CliError::Usage(format!("{} lacks record {c}", path.display()))
                })
            })
            .collect::<Result<_>>()?;
        s += &row.join(" ");
        s.push('\n');
    }
    Ok(s)
}

pub fn plot(
    source: &SourceArgs,
    start: usize,
    budget: usize,
    lookback: usize,
    clip: f64,
    out: &Path,
) -> Result<String> {
    let (raw, name, cfg) = source.load()?;
    let ds = chronological_split(&name, "", &raw)?;
    let train = ds.split_values(Split::Train);
    if start + lookback > train.len() {
        return Err(CliError::Usage(format!(
            "window {start}..{} exceeds the train split ({} samples)",
            start + lookback,
            train.len()
        )));
    }
    let base = cfg.map(|c| c.tokens).unwrap_or_default();
    let config = TokenizerConfig {
        budget,
        lookback,
        clip_factor: clip,
        ..base
    };
    let doc = svg::decomposition(&train[start..start + lookback], &config)?;
    write_atomic(out, doc.as_bytes())?;
    Ok(format!("wrote {}\n", out.display()))
}

pub fn synth(out: &Path, length: usize, periods: (f64, f64), noise: f64, seed: u64) -> Result<String> {
    if length < 5 || !(periods.0 > 0.0 && periods.1 > 0.0) || !(noise >= 0.0) {
        return Err(CliError::Usage("length >= 5, positive periods and noise >= 0 required".into()));
    }
    let series = pipeline::two_tone(length, periods, noise, seed);
    let mut text = String::from("step,value\n");
    for (i, v) in series.iter().enumerate() {
        let _ = writeln!(text, "{i},{v}");
    }
    write_atomic(out, text.as_bytes())?;
    Ok(format!("wrote {length} samples to {}\n", out.display()))
}

type Check = (&'static str, fn() -> Result<bool>);

fn check_partition_of_unity() -> Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let p = rng.random_range(1..=6);
        let k: usize = rng.random_range(0..12);
        let mut interior: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..0.99)).collect();
        interior.sort_by(f64::total_cmp);
        let knots = KnotVector::clamped(0.0, 1.0, &interior, p)?;
        let b = basis_matrix(&linspace(0.0, 1.0, 500), &knots)?;
        for r in 0..b.rows() {
            let sum: f64 = b.row(r).1.iter().sum();
            if (sum - 1.0).abs() >= 1e-10 {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn check_polynomial_reproduction() -> Result<bool> {
    for p in 1..=4 {
        let x = linspace(0.0, 1.0, 300);
        let y: Vec<f64> = x.iter().map(|t| (0..=p).map(|j| (j as f64 + 1.0) * t.powi(j as i32)).sum()).collect();
        let cfg = TokenizerConfig {
            lookback: 300,
            budget: 12,
            degree: p,
            coeff_cap: 1e6,
            ..TokenizerConfig::default()
        };
        let fit = fit_window_full(&y, &cfg)?;
        let max = fit
            .reconstruction
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if max >= 1e-8 {
            return Ok(false);
        }
    }
    Ok(true)
}

fn check_rotary() -> Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f = rope_frequencies(8, 10_000.0)?;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    for _ in 0..50 {
        let q: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (a, b) = (rng.random_range(0.0..700.0), rng.random_range(0.0..700.0));
        let rq = apply_rotary(&q, a, &f)?;
        let lhs = dot(&rq, &apply_rotary(&k, b, &f)?);
        let rhs = dot(&apply_rotary(&q, a - b, &f)?, &k);
        if (dot(&rq, &rq).sqrt() - dot(&q, &q).sqrt()).abs() >= 1e-12 || (lhs - rhs).abs() >= 1e-10 {
            return Ok(false);
        }
    }
    Ok(true)
}

fn check_gradients() -> Result<bool> {
    let config = ModelConfig {
        layers: 2,
        d_model: 16,
        heads: 4,
        dropout: 0.0,
        fc_dropout: 0.0,
        attn_dropout: 0.0,
        horizon: 4,
        tokens: 8,
        lookback: 64,
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = Model::new(config, &mut rng)?;
    let batch: Vec<TokenWindow> = (0..3)
        .map(|_| TokenWindow {
            values: (0..8).map(|_| rng.random_range(-2.0..2.0)).collect(),
            centers: (0..8).map(|i| 8.0 * i as f64 + rng.random_range(0.0..7.0)).collect(),
            target: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
        })
        .collect();
    let refs: Vec<&TokenWindow> = batch.iter().collect();
    Ok(grad_check(&model, &refs, DEFAULT_STEP, 10, 4)?.max_rel_error < 1e-4)
}

fn check_bootstrap() -> Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Vec<f64> = (0..100).map(|_| rng.random_range(0.0..1.0)).collect();
    let ci = bca_ci(&x, mean, 2000, 0.95, 6)?;
    Ok(ci.lower < ci.estimate && ci.estimate < ci.upper && ci.lower > 0.4 && ci.upper < 0.6)
}

pub fn selftest() -> Result<String> {
    let checks: [Check; 5] = [
        ("partition of unity", check_partition_of_unity),
        ("polynomial reproduction", check_polynomial_reproduction),
        ("rotary identities", check_rotary),
        ("gradient check", check_gradients),
        ("bootstrap interval", check_bootstrap),
    ];
    let mut s = String::new();
    let mut failed = Vec::new();
    for (name, check) in checks {
        let ok = check()?;
        let _ = writeln!(s, "[{}] {name}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failed.push(name);
        }
    }
    if failed.is_empty() {
        Ok(s)
    } else {
        print!("{s}");
        Err(CliError::Usage(format!("self-test failed: {}", failed.join(", "))))
    }
}
