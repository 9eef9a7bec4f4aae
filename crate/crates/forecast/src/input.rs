//! Turns lookback windows into model inputs for each tokenizer.

use std::fmt;
use std::str::FromStr;

use bsat::baseline::{patch_tokens, uds_positions, uds_tokens, PatchConfig};
use bsat::tokenizer::{fit_window, TokenSequence, TokenizerConfig};

use crate::error::{Error, Result};
use crate::model::TokenWindow;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenizerKind {
    Bsat,
    Uds,
    Patch,
}

impl TokenizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Bsat => "bsat",
            Self::Uds => "uds",
            Self::Patch => "patch",
        }
    }

    /// Value channels per token for a budget of `budget` tokens over `lookback` samples.
    pub fn value_dim(self, lookback: usize, budget: usize) -> Result<usize> {
        Ok(match self {
            Self::Patch => PatchConfig::new(lookback, budget)?.patch_len,
            _ => 1,
        })
    }
}

impl fmt::Display for TokenizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TokenizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bsat" => Ok(Self::Bsat),
            "uds" => Ok(Self::Uds),
            "patch" => Ok(Self::Patch),
            _ => Err(Error::InvalidConfig(format!("unknown tokenizer {s:?}"))),
        }
    }
}

/// Model input from already-fitted spline tokens.
pub fn from_tokens(tokens: &TokenSequence, target: &[f64]) -> TokenWindow {
    TokenWindow {
        values: tokens.coeffs.clone(),
        centers: tokens.centers.clone(),
        target: target.to_vec(),
    }
}

/// Tokenizes `lookback` with `kind` and pairs it with `target`.
pub fn tokenize(
    kind: TokenizerKind,
    lookback: &[f64],
    target: &[f64],
    config: &TokenizerConfig,
) -> Result<TokenWindow> {
    let budget = config.budget;
    Ok(match kind {
        TokenizerKind::Bsat => from_tokens(&fit_window(lookback, config)?, target),
        TokenizerKind::Uds => TokenWindow {
            values: uds_tokens(lookback, budget)?,
            centers: uds_positions(lookback.len(), budget)?,
            target: target.to_vec(),
        },
        TokenizerKind::Patch => {
            let pc = PatchConfig::new(lookback.len(), budget)?;
            TokenWindow {
                values: patch_tokens(lookback, &pc)?.concat(),
                centers: pc.positions(),
                target: target.to_vec(),
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_per_tokenizer() {
        let y: Vec<f64> = (0..720).map(|i| (i as f64 * 0.05).sin()).collect();
        let cfg = TokenizerConfig::default();
        for kind in [TokenizerKind::Bsat, TokenizerKind::Uds, TokenizerKind::Patch] {
            let w = tokenize(kind, &y, &[0.0; 4], &cfg).unwrap();
            let vd = kind.value_dim(720, 45).unwrap();
            assert_eq!(w.centers.len(), 45);
            assert_eq!(w.values.len(), 45 * vd);
            assert!(w.centers.iter().all(|&c| (0.0..=719.0).contains(&c)));
            assert_eq!(kind.as_str().parse::<TokenizerKind>().unwrap(), kind);
        }
        assert_eq!(TokenizerKind::Patch.value_dim(720, 45).unwrap(), 32);
        assert!("x".parse::<TokenizerKind>().is_err());
    }
}
