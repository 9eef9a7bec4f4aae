//! Dataset loading, per-split tokenization, training and evaluation.
//!
//! Everything applied to validation or test data (normalization, caches,
//! model weights) is derived from the train range alone.

use std::fmt::Write as _;
use std::path::PathBuf;

use bsat::data::{aggregate, chronological_split, load_csv, window_count, windows, SeriesDataset, Split};
use bsat::eval::{bca_ci, forecast_metrics, mean, BcaInterval, MetricReport};
use bsat::tokenizer::{tokenize_dataset, CacheStatus};
use bsat_forecast::input::{self, TokenizerKind};
use bsat_forecast::train::{last_value_forecast, predict_all, EpochRecord};
use bsat_forecast::{train, Model, TokenWindow, TrainOutcome, TrainState};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

/// Lengths of the public benchmark series after aggregation and truncation.
pub const KNOWN_LENGTHS: &[(&str, usize)] = &[("etth1", 17_420), ("alabama", 35_040), ("ecl", 70_176)];

/// Confidence level of the reported bootstrap intervals.
pub const CI_LEVEL: f64 = 0.95;

pub fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    }
}

pub const SPLITS: [Split; 3] = [Split::Train, Split::Val, Split::Test];

/// Expected length for a dataset name, matched case-insensitively by prefix.
pub fn known_length(name: &str) -> Option<usize> {
    let lower = name.to_ascii_lowercase();
    KNOWN_LENGTHS
        .iter()
        .find(|(k, _)| lower.starts_with(k))
        .map(|&(_, n)| n)
}

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub dataset: SeriesDataset,
    /// Raw series after aggregation and truncation, in original units.
    pub raw: Vec<f64>,
    /// Samples dropped by aggregation.
    pub dropped: usize,
    pub warnings: Vec<String>,
}

/// Loads, aggregates and truncates a series before splitting it.
pub fn load_series(
    data: &std::path::Path,
    column: &str,
    factor: usize,
    truncate: usize,
) -> Result<(Vec<f64>, usize)> {
    let raw = load_csv(data, column)?;
    let (mut series, dropped) = aggregate(&raw, factor)?;
    if truncate > 0 && truncate < series.len() {
        series.truncate(truncate);
    }
    Ok((series, dropped))
}

pub fn load_dataset(cfg: &RunConfig) -> Result<LoadedData> {
    let (raw, dropped) = load_series(&cfg.data, &cfg.column, cfg.aggregate, cfg.truncate)?;
    let mut warnings = Vec::new();
    if let Some(expected) = known_length(&cfg.name) {
        if raw.len() != expected {
            warnings.push(format!(
                "warning: {} has {} samples, expected {expected}",
                cfg.name,
                raw.len()
            ));
        }
    }
    if dropped > 0 {
        warnings.push(format!("warning: aggregation dropped {dropped} trailing samples"));
    }
    let dataset = chronological_split(&cfg.name, &cfg.cadence, &raw)?;
    Ok(LoadedData {
        dataset,
        raw,
        dropped,
        warnings,
    })
}

/// Model inputs for one split plus what the naive baseline needs.
#[derive(Debug, Clone)]
pub struct SplitInputs {
    pub split: Split,
    pub starts: Vec<usize>,
    pub windows: Vec<TokenWindow>,
    /// Last lookback value of every window.
    pub last_values: Vec<f64>,
    pub fits: usize,
    pub cache: CacheStatus,
    pub ridge: usize,
    pub clipped: usize,
}

pub fn stride_for(cfg: &RunConfig, split: Split) -> usize {
    match split {
        Split::Train => cfg.window_stride,
        _ => cfg.eval_stride,
    }
}

pub fn cache_path(cfg: &RunConfig, split: Split) -> PathBuf {
    let t = &cfg.tokens;
    cfg.cache_dir.join(format!(
        "{}-{}-L{}-n{}-p{}-g{}-s{}.bsat",
        cfg.name,
        split_name(split),
        t.lookback,
        t.budget,
        t.degree,
        t.clip_factor,
        stride_for(cfg, split)
    ))
}

/// Tokenizes every window of `split`. Spline tokens go through the cache.
pub fn split_inputs(cfg: &RunConfig, ds: &SeriesDataset, split: Split) -> Result<SplitInputs> {
    let values = ds.split_values(split);
    let (l, h) = (cfg.tokens.lookback, cfg.model.horizon);
    let stride = stride_for(cfg, split);
    window_count(values.len(), l, h, stride).map_err(|e| {
        CliError::Usage(format!("{} split too short for lookback + horizon: {e}", split_name(split)))
    })?;
    let target = |s: usize| &values[s + l..s + l + h];
    if cfg.tokenizer == TokenizerKind::Bsat {
        std::fs::create_dir_all(&cfg.cache_dir)?;
        let path = cache_path(cfg, split);
        let tok = tokenize_dataset(&values[..values.len() - h], &cfg.tokens, stride, Some(&path))?;
        let (ridge, clipped) = (tok.ridge_count(), tok.clipped_count());
        let windows = tok
            .starts
            .iter()
            .zip(&tok.tokens)
            .map(|(&s, t)| input::from_tokens(t, target(s)))
            .collect();
        return Ok(SplitInputs {
            split,
            last_values: tok.starts.iter().map(|&s| values[s + l - 1]).collect(),
            starts: tok.starts,
            windows,
            fits: tok.fits_performed,
            cache: tok.cache,
            ridge,
            clipped,
        });
    }
    let pairs = windows(values, l, h, stride)?;
    let windows = pairs
        .iter()
        .map(|p| input::tokenize(cfg.tokenizer, p.lookback, p.target, &cfg.tokens))
        .collect::<bsat_forecast::Result<Vec<_>>>()?;
    Ok(SplitInputs {
        split,
        starts: pairs.iter().map(|p| p.start).collect(),
        last_values: pairs.iter().map(|p| p.lookback[l - 1]).collect(),
        windows,
        fits: 0,
        cache: CacheStatus::Disabled,
        ridge: 0,
        clipped: 0,
    })
}

pub fn train_run(cfg: &RunConfig, ds: &SeriesDataset) -> Result<TrainOutcome> {
    let train_set = split_inputs(cfg, ds, Split::Train)?;
    let val_set = split_inputs(cfg, ds, Split::Val)?;
    let state = TrainState::new(cfg.model.clone())?;
    Ok(train(state, &train_set.windows, &val_set.windows, &cfg.train)?)
}

pub fn history_text(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch lr train_loss val_rmse bases\n");
    for r in history {
        let bases: Vec<String> = r.bases.iter().map(|b| b.to_string()).collect();
        let _ = writeln!(
            s,
            "{} {} {} {} {}",
            r.epoch,
            r.lr,
            r.train_loss,
            r.val_rmse,
            bases.join(",")
        );
    }
    s
}

/// Test-split metrics in original units for the model and the last-value baseline.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub windows: usize,
    pub model: MetricReport,
    pub baseline: MetricReport,
    /// Per-window RMSE, original units.
    pub model_window_rmse: Vec<f64>,
    pub baseline_window_rmse: Vec<f64>,
    pub model_ci: BcaInterval,
    pub baseline_ci: BcaInterval,
    pub bases: Vec<f64>,
}

fn rmse(a: &[f64], b: &[f64]) -> f64 {
    let se: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (se / a.len() as f64).sqrt()
}

pub fn evaluate(cfg: &RunConfig, ds: &SeriesDataset, model: &Model) -> Result<Evaluation> {
    let test = split_inputs(cfg, ds, Split::Test)?;
    let preds = predict_all(model, &test.windows, cfg.train.batch_size)?;
    let h = cfg.model.horizon;
    let (mut p_all, mut b_all, mut t_all) = (Vec::new(), Vec::new(), Vec::new());
    let (mut model_w, mut base_w) = (Vec::new(), Vec::new());
    for ((pred, w), &last) in preds.iter().zip(&test.windows).zip(&test.last_values) {
        let p: Vec<f64> = pred.iter().map(|&z| ds.denormalize(z)).collect();
        let t: Vec<f64> = w.target.iter().map(|&z| ds.denormalize(z)).collect();
        let b: Vec<f64> = last_value_forecast(&[ds.denormalize(last)], h);
        model_w.push(rmse(&p, &t));
        base_w.push(rmse(&b, &t));
        p_all.extend(p);
        b_all.extend(b);
        t_all.extend(t);
    }
    let seed = cfg.model.seed;
    let b = cfg.bootstrap_resamples;
    Ok(Evaluation {
        windows: test.windows.len(),
        model: forecast_metrics(&p_all, &t_all)?,
        baseline: forecast_metrics(&b_all, &t_all)?,
        model_ci: bca_ci(&model_w, mean, b, CI_LEVEL, seed)?,
        baseline_ci: bca_ci(&base_w, mean, b, CI_LEVEL, seed)?,
        model_window_rmse: model_w,
        baseline_window_rmse: base_w,
        bases: model.layer_bases(),
    })
}

fn prefixed(prefix: &str, report: &MetricReport) -> String {
    report
        .to_records()
        .lines()
        .map(|l| format!("{prefix}.{l}\n"))
        .collect()
}

fn ci_records(prefix: &str, ci: &BcaInterval) -> String {
    format!(
        "{prefix}.window_rmse_mean={}\n{prefix}.window_rmse_lower={}\n{prefix}.window_rmse_upper={}\n",
        ci.estimate, ci.lower, ci.upper
    )
}

impl Evaluation {
    /// Line-oriented `key=value` records.
    pub fn to_records(&self, cfg: &RunConfig) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "dataset={}", cfg.name);
        let _ = writeln!(s, "tokenizer={}", cfg.tokenizer);
        let _ = writeln!(s, "mode={}", cfg.model.mode);
        let _ = writeln!(s, "budget={}", cfg.tokens.budget);
        let _ = writeln!(s, "lookback={}", cfg.tokens.lookback);
        let _ = writeln!(s, "horizon={}", cfg.model.horizon);
        let _ = writeln!(s, "seed={}", cfg.model.seed);
        let _ = writeln!(s, "windows={}", self.windows);
        s += &prefixed("model", &self.model);
        s += &ci_records("model", &self.model_ci);
        s += &prefixed("baseline", &self.baseline);
        s += &ci_records("baseline", &self.baseline_ci);
        let bases: Vec<String> = self.bases.iter().map(|b| b.to_string()).collect();
        let _ = writeln!(s, "rope_bases={}", bases.join(","));
        let _ = writeln!(s, "base_spread={}", base_spread(&self.bases));
        s
    }
}

/// Largest minus smallest per-layer rotary base.
pub fn base_spread(bases: &[f64]) -> f64 {
    let max = bases.iter().copied().fold(f64::MIN, f64::max);
    let min = bases.iter().copied().fold(f64::MAX, f64::min);
    if bases.is_empty() { 0.0 } else { max - min }
}

/// Two-tone sine with Gaussian noise, periods in samples.
pub fn two_tone(len: usize, periods: (f64, f64), noise: f64, seed: u64) -> Vec<f64> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let tau = std::f64::consts::TAU;
    (0..len)
        .map(|t| {
            let t = t as f64;
            (tau * t / periods.0).sin() + 0.5 * (tau * t / periods.1).sin() + noise * normal.sample(&mut rng)
        })
        .collect()
}
