//! Run configuration: flat `key = value` lines with `#` comments.
//!
//! Every key is required and unknown or repeated keys are rejected, so a
//! config file fully determines a run. Relative paths resolve against the
//! directory of the config file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use bsat::posenc::PosEncMode;
use bsat::tokenizer::TokenizerConfig;
use bsat_forecast::input::TokenizerKind;
use bsat_forecast::{ModelConfig, TrainConfig};

use crate::error::{CliError, Result};

/// Every recognized key, in canonical order.
pub const KEYS: &[&str] = &[
    "data",
    "column",
    "name",
    "cadence",
    "aggregate",
    "truncate",
    "tokenizer",
    "lookback",
    "budget",
    "degree",
    "clip_factor",
    "coeff_cap",
    "ridge_threshold",
    "ridge_scale",
    "window_stride",
    "eval_stride",
    "horizon",
    "mode",
    "layers",
    "d_model",
    "heads",
    "ff_factor",
    "dropout",
    "fc_dropout",
    "attn_dropout",
    "learning_rate",
    "weight_decay",
    "batch_size",
    "max_epochs",
    "patience",
    "grace",
    "seed",
    "bootstrap_resamples",
    "pe_order",
    "cache_dir",
    "out_dir",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: PathBuf,
    pub column: String,
    pub name: String,
    pub cadence: String,
    /// Block-mean factor applied after loading; 1 keeps the series.
    pub aggregate: usize,
    /// Keep only the first `truncate` samples after aggregation; 0 keeps all.
    pub truncate: usize,
    pub tokenizer: TokenizerKind,
    pub tokens: TokenizerConfig,
    /// Stride between training windows.
    pub window_stride: usize,
    /// Stride between validation and test windows.
    pub eval_stride: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub bootstrap_resamples: usize,
    pub pe_order: usize,
    pub cache_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let tokens = TokenizerConfig::default();
        Self {
            data: PathBuf::from("data.csv"),
            column: "OT".into(),
            name: "series".into(),
            cadence: "1h".into(),
            aggregate: 1,
            truncate: 0,
            tokenizer: TokenizerKind::Bsat,
            tokens,
            window_stride: 1,
            eval_stride: 1,
            model: ModelConfig {
                tokens: tokens.budget,
                lookback: tokens.lookback,
                ..ModelConfig::default()
            },
            train: TrainConfig::default(),
            bootstrap_resamples: 10_000,
            pe_order: 3,
            cache_dir: PathBuf::from("cache"),
            out_dir: PathBuf::from("out"),
        }
    }
}

fn parse_value<T: FromStr>(map: &BTreeMap<String, (usize, String)>, key: &str) -> Result<T> {
    let (line, raw) = map.get(key).ok_or_else(|| CliError::MissingKey(key.to_string()))?;
    raw.parse().map_err(|_| CliError::Config {
        line: *line,
        msg: format!("invalid value {raw:?} for {key}"),
    })
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut map: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| CliError::Config {
                line: i + 1,
                msg: format!("expected key = value, got {line:?}"),
            })?;
            let k = k.trim();
            if !KEYS.contains(&k) {
                return Err(CliError::Config {
                    line: i + 1,
                    msg: format!("unknown key {k:?}"),
                });
            }
            if map.insert(k.to_string(), (i + 1, v.trim().to_string())).is_some() {
                return Err(CliError::Config {
                    line: i + 1,
                    msg: format!("duplicate key {k:?}"),
                });
            }
        }
        if let Some(missing) = KEYS.iter().find(|k| !map.contains_key(**k)) {
            return Err(CliError::MissingKey(missing.to_string()));
        }
        let path = |key: &str| -> Result<PathBuf> {
            let p: String = parse_value(&map, key)?;
            let p = PathBuf::from(p);
            Ok(if p.is_relative() { base_dir.join(p) } else { p })
        };
        let tokens = TokenizerConfig {
            lookback: parse_value(&map, "lookback")?,
            budget: parse_value(&map, "budget")?,
            degree: parse_value(&map, "degree")?,
            clip_factor: parse_value(&map, "clip_factor")?,
            coeff_cap: parse_value(&map, "coeff_cap")?,
            ridge_threshold: parse_value(&map, "ridge_threshold")?,
            ridge_scale: parse_value(&map, "ridge_scale")?,
        };
        let tokenizer: TokenizerKind = parse_value::<String>(&map, "tokenizer")?
            .parse()
            .map_err(|e: bsat_forecast::Error| CliError::Usage(e.to_string()))?;
        let mode: PosEncMode = parse_value::<String>(&map, "mode")?.parse()?;
        let model = ModelConfig {
            layers: parse_value(&map, "layers")?,
            d_model: parse_value(&map, "d_model")?,
            heads: parse_value(&map, "heads")?,
            ff_factor: parse_value(&map, "ff_factor")?,
            dropout: parse_value(&map, "dropout")?,
            fc_dropout: parse_value(&map, "fc_dropout")?,
            attn_dropout: parse_value(&map, "attn_dropout")?,
            learning_rate: parse_value(&map, "learning_rate")?,
            weight_decay: parse_value(&map, "weight_decay")?,
            seed: parse_value(&map, "seed")?,
            horizon: parse_value(&map, "horizon")?,
            mode,
            tokens: tokens.budget,
            value_dim: 1,
            lookback: tokens.lookback,
        };
        let train = TrainConfig {
            max_epochs: parse_value(&map, "max_epochs")?,
            batch_size: parse_value(&map, "batch_size")?,
            patience: parse_value(&map, "patience")?,
            grace: parse_value(&map, "grace")?,
            clip_norm: 1.0,
        };
        let cfg = Self {
            data: path("data")?,
            column: parse_value(&map, "column")?,
            name: parse_value(&map, "name")?,
            cadence: parse_value(&map, "cadence")?,
            aggregate: parse_value(&map, "aggregate")?,
            truncate: parse_value(&map, "truncate")?,
            tokenizer,
            tokens,
            window_stride: parse_value(&map, "window_stride")?,
            eval_stride: parse_value(&map, "eval_stride")?,
            model,
            train,
            bootstrap_resamples: parse_value(&map, "bootstrap_resamples")?,
            pe_order: parse_value(&map, "pe_order")?,
            cache_dir: path("cache_dir")?,
            out_dir: path("out_dir")?,
        };
        cfg.finalize()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Derives model shapes from the tokenizer settings and validates everything.
    pub fn finalize(mut self) -> Result<Self> {
        self.model.tokens = self.tokens.budget;
        self.model.lookback = self.tokens.lookback;
        self.model.value_dim = self.tokenizer.value_dim(self.tokens.lookback, self.tokens.budget)?;
        if self.tokenizer == TokenizerKind::Bsat {
            self.tokens.validate()?;
        }
        self.model.validate()?;
        let positive = [
            ("aggregate", self.aggregate),
            ("window_stride", self.window_stride),
            ("eval_stride", self.eval_stride),
            ("batch_size", self.train.batch_size),
            ("bootstrap_resamples", self.bootstrap_resamples),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(CliError::Usage(format!("{k} must be >= 1")));
        }
        if self.pe_order < 2 {
            return Err(CliError::Usage("pe_order must be >= 2".into()));
        }
        Ok(self)
    }

    /// Applies command-line overrides and re-derives dependent settings.
    pub fn with_overrides(
        mut self,
        budget: Option<usize>,
        lookback: Option<usize>,
        mode: Option<PosEncMode>,
        seed: Option<u64>,
    ) -> Result<Self> {
        if let Some(b) = budget {
            self.tokens.budget = b;
        }
        if let Some(l) = lookback {
            self.tokens.lookback = l;
        }
        if let Some(m) = mode {
            self.model.mode = m;
        }
        if let Some(s) = seed {
            self.model.seed = s;
        }
        self.finalize()
    }

    /// Canonical text form; parsing it yields the same configuration.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.tokens;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("data", self.data.display().to_string());
        kv("column", self.column.clone());
        kv("name", self.name.clone());
        kv("cadence", self.cadence.clone());
        kv("aggregate", self.aggregate.to_string());
        kv("truncate", self.truncate.to_string());
        kv("tokenizer", self.tokenizer.to_string());
        kv("lookback", t.lookback.to_string());
        kv("budget", t.budget.to_string());
        kv("degree", t.degree.to_string());
        kv("clip_factor", t.clip_factor.to_string());
        kv("coeff_cap", t.coeff_cap.to_string());
        kv("ridge_threshold", t.ridge_threshold.to_string());
        kv("ridge_scale", t.ridge_scale.to_string());
        kv("window_stride", self.window_stride.to_string());
        kv("eval_stride", self.eval_stride.to_string());
        kv("horizon", m.horizon.to_string());
        kv("mode", m.mode.to_string());
        kv("layers", m.layers.to_string());
        kv("d_model", m.d_model.to_string());
        kv("heads", m.heads.to_string());
        kv("ff_factor", m.ff_factor.to_string());
        kv("dropout", m.dropout.to_string());
        kv("fc_dropout", m.fc_dropout.to_string());
        kv("attn_dropout", m.attn_dropout.to_string());
        kv("learning_rate", m.learning_rate.to_string());
        kv("weight_decay", m.weight_decay.to_string());
        kv("batch_size", self.train.batch_size.to_string());
        kv("max_epochs", self.train.max_epochs.to_string());
        kv("patience", self.train.patience.to_string());
        kv("grace", self.train.grace.to_string());
        kv("seed", m.seed.to_string());
        kv("bootstrap_resamples", self.bootstrap_resamples.to_string());
        kv("pe_order", self.pe_order.to_string());
        kv("cache_dir", self.cache_dir.display().to_string());
        kv("out_dir", self.out_dir.display().to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_roundtrips() {
        let cfg = RunConfig {
            data: PathBuf::from("/tmp/x.csv"),
            cache_dir: PathBuf::from("/tmp/c"),
            out_dir: PathBuf::from("/tmp/o"),
            ..RunConfig::default()
        }
        .finalize()
        .unwrap();
        let text = cfg.to_text();
        assert_eq!(text.lines().count(), KEYS.len());
        assert_eq!(RunConfig::parse(&text, Path::new("/")).unwrap(), cfg);
    }

    #[test]
    fn every_missing_key_is_named() {
        let text = RunConfig::default().to_text();
        for key in KEYS {
            let without: String = text
                .lines()
                .filter(|l| !l.starts_with(&format!("{key} =")))
                .map(|l| format!("{l}\n"))
                .collect();
            match RunConfig::parse(&without, Path::new(".")) {
                Err(CliError::MissingKey(k)) => assert_eq!(&k, key),
                other => panic!("{key}: {other:?}"),
            }
        }
    }

    #[test]
    fn rejects_unknown_duplicate_and_bad_values() {
        let text = RunConfig::default().to_text();
        assert!(RunConfig::parse(&format!("{text}bogus = 1\n"), Path::new(".")).is_err());
        assert!(RunConfig::parse(&format!("{text}seed = 2\n"), Path::new(".")).is_err());
        let bad = text.replace("layers = 2", "layers = two");
        match RunConfig::parse(&bad, Path::new(".")) {
            Err(CliError::Config { msg, .. }) => assert!(msg.contains("layers")),
            other => panic!("{other:?}"),
        }
        let commented = format!("# run settings\n{}", text.replace("seed = 0", "seed = 0  # fixed"));
        assert!(RunConfig::parse(&commented, Path::new(".")).is_ok());
    }

    #[test]
    fn relative_paths_and_overrides() {
        let text = RunConfig::default().to_text();
        let cfg = RunConfig::parse(&text, Path::new("/base")).unwrap();
        assert_eq!(cfg.data, PathBuf::from("/base/data.csv"));
        let cfg = cfg
            .with_overrides(Some(90), None, Some(PosEncMode::Lpe), Some(3))
            .unwrap();
        assert_eq!((cfg.tokens.budget, cfg.model.tokens, cfg.model.seed), (90, 90, 3));
        let patch = RunConfig {
            tokenizer: TokenizerKind::Patch,
            ..RunConfig::default()
        }
        .finalize()
        .unwrap();
        assert_eq!(patch.model.value_dim, 32);
    }
}
