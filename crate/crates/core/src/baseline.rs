//! Fixed-budget comparison tokenizers: uniform downsampling and overlapping patches.

use crate::error::{Error, Result};

fn stride_for(lookback: usize, budget: usize) -> Result<usize> {
    if budget == 0 || budget > lookback || !lookback.is_multiple_of(budget) {
        return Err(Error::InvalidConfig(format!(
            "lookback {lookback} is not divisible by budget {budget}"
        )));
    }
    Ok(lookback / budget)
}

/// Every `(L/T)`-th sample starting at offset 0.
pub fn uds_tokens(y: &[f64], budget: usize) -> Result<Vec<f64>> {
    let stride = stride_for(y.len(), budget)?;
    Ok(y.iter().step_by(stride).copied().collect())
}

/// Sample index of each UDS token.
pub fn uds_positions(lookback: usize, budget: usize) -> Result<Vec<f64>> {
    let stride = stride_for(lookback, budget)?;
    Ok((0..budget).map(|i| (i * stride) as f64).collect())
}

/// Linear interpolation of UDS tokens back onto all `L` samples.
///
/// Samples after the last token hold its value.
pub fn uds_reconstruct(tokens: &[f64], lookback: usize) -> Result<Vec<f64>> {
    let stride = stride_for(lookback, tokens.len())?;
    let last = tokens.len() - 1;
    Ok((0..lookback)
        .map(|t| {
            let j = t / stride;
            if j >= last {
                return tokens[last];
            }
            let frac = (t - j * stride) as f64 / stride as f64;
            tokens[j] + frac * (tokens[j + 1] - tokens[j])
        })
        .collect())
}

/// Overlapping patching with `stride = L/T` and `patch_len = 2·stride`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchConfig {
    pub lookback: usize,
    pub budget: usize,
    pub stride: usize,
    pub patch_len: usize,
}

impl PatchConfig {
    pub fn new(lookback: usize, budget: usize) -> Result<Self> {
        let stride = stride_for(lookback, budget)?;
        Self::with_lengths(lookback, budget, stride, 2 * stride)
    }

    /// Explicit stride and patch length, e.g. non-overlapping patches.
    pub fn with_lengths(
        lookback: usize,
        budget: usize,
        stride: usize,
        patch_len: usize,
    ) -> Result<Self> {
        if stride == 0 || budget == 0 {
            return Err(Error::InvalidConfig("stride and budget must be >= 1".into()));
        }
        if patch_len > lookback {
            return Err(Error::InvalidConfig(format!(
                "patch length {patch_len} exceeds lookback {lookback}"
            )));
        }
        if (budget - 1) * stride >= lookback {
            return Err(Error::InvalidConfig(format!(
                "{budget} patches at stride {stride} overrun lookback {lookback}"
            )));
        }
        Ok(Self {
            lookback,
            budget,
            stride,
            patch_len,
        })
    }

    pub fn positions(&self) -> Vec<f64> {
        (0..self.budget).map(|i| (i * self.stride) as f64).collect()
    }
}

/// `T` patches starting every `stride` samples; the tail is padded by repeating the last sample.
pub fn patch_tokens(y: &[f64], config: &PatchConfig) -> Result<Vec<Vec<f64>>> {
    if y.len() != config.lookback {
        return Err(Error::LengthMismatch {
            expected: config.lookback,
            got: y.len(),
        });
    }
    let last = *y.last().ok_or(Error::TooShort { need: 1, got: 0 })?;
    Ok((0..config.budget)
        .map(|i| {
            let start = i * config.stride;
            (start..start + config.patch_len)
                .map(|t| y.get(t).copied().unwrap_or(last))
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64).collect()
    }

    #[test]
    fn uds_budgets() {
        let y = ramp(720);
        for t in [45, 90, 180] {
            assert_eq!(uds_tokens(&y, t).unwrap().len(), t);
        }
        let tok = uds_tokens(&y, 45).unwrap();
        let expected: Vec<f64> = (0..45).map(|i| (16 * i) as f64).collect();
        assert_eq!(tok, expected);
        assert_eq!(uds_tokens(&y, 720).unwrap(), y);
        assert!(uds_tokens(&y, 7).is_err());
    }

    #[test]
    fn uds_reconstruction_of_a_ramp() {
        let y = ramp(720);
        let rec = uds_reconstruct(&uds_tokens(&y, 45).unwrap(), 720).unwrap();
        assert_eq!(&rec[..705], &y[..705]);
        assert!(rec[705..].iter().all(|&v| v == 704.0));
    }

    #[test]
    fn patch_enumeration() {
        let y = ramp(720);
        let cfg = PatchConfig::new(720, 45).unwrap();
        assert_eq!((cfg.stride, cfg.patch_len), (16, 32));
        let patches = patch_tokens(&y, &cfg).unwrap();
        assert_eq!(patches.len(), 45);
        // (720 − 32)/16 + 1 = 44 patches fit; the 45th starts at 704 and is padded
        let full = (0..).take_while(|i| i * 16 + 32 <= 720).count();
        assert_eq!(full, 44);
        for (i, p) in patches.iter().enumerate().take(full) {
            assert_eq!(p, &y[i * 16..i * 16 + 32]);
        }
        let tail = &patches[44];
        assert_eq!(&tail[..16], &y[704..720]);
        assert!(tail[16..].iter().all(|&v| v == 719.0));
    }

    #[test]
    fn constant_and_partition() {
        let cfg = PatchConfig::new(96, 12).unwrap();
        assert!(patch_tokens(&[3.0; 96], &cfg)
            .unwrap()
            .iter()
            .all(|p| p.iter().all(|&v| v == 3.0)));
        let y = ramp(96);
        let cfg = PatchConfig::with_lengths(96, 12, 8, 8).unwrap();
        let flat: Vec<f64> = patch_tokens(&y, &cfg).unwrap().concat();
        assert_eq!(flat, y);
        assert!(PatchConfig::with_lengths(10, 2, 5, 11).is_err());
    }
}
