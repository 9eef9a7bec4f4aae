//! Reversible instance normalization and center scaling.

use bsat::Error as CoreError;

use crate::error::{Error, Result};

/// Smallest standard deviation used for a window.
pub const REVIN_STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RevinState {
    pub mean: f64,
    pub std: f64,
}

/// Standardizes a window with its own mean and population standard deviation.
pub fn revin_forward(x: &[f64]) -> Result<(Vec<f64>, RevinState)> {
    if x.len() < 2 {
        return Err(CoreError::TooShort { need: 2, got: x.len() }.into());
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite(i).into());
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(REVIN_STD_FLOOR);
    let state = RevinState { mean, std };
    Ok((x.iter().map(|v| (v - mean) / std).collect(), state))
}

pub fn revin_inverse(z: &[f64], state: &RevinState) -> Vec<f64> {
    z.iter().map(|v| v * state.std + state.mean).collect()
}

/// `μ / (L − 1)`.
pub fn normalize_centers(centers: &[f64], lookback: usize) -> Result<Vec<f64>> {
    if lookback < 2 {
        return Err(Error::InvalidConfig(format!("lookback must be >= 2, got {lookback}")));
    }
    let hi = (lookback - 1) as f64;
    centers
        .iter()
        .map(|&c| {
            if (0.0..=hi).contains(&c) {
                Ok(c / hi)
            } else {
                Err(CoreError::OutsideDomain { xi: c, lo: 0.0, hi }.into())
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_points_and_constant() {
        let (z, s) = revin_forward(&[2.0, 4.0]).unwrap();
        assert_eq!(z, vec![-1.0, 1.0]);
        assert_eq!((s.mean, s.std), (3.0, 1.0));
        let (z, s) = revin_forward(&[5.0; 4]).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
        assert_eq!(s.std, REVIN_STD_FLOOR);
        assert!(revin_forward(&[1.0]).is_err());
        assert!(revin_forward(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn centers() {
        assert_eq!(normalize_centers(&[0.0, 719.0, 359.5], 720).unwrap(), vec![0.0, 1.0, 0.5]);
        assert!(normalize_centers(&[720.0], 720).is_err());
        assert!(normalize_centers(&[-0.1], 720).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(x in prop::collection::vec(-1e3f64..1e3, 2..50)) {
            let spread = x.iter().cloned().fold(f64::MIN, f64::max) - x.iter().cloned().fold(f64::MAX, f64::min);
            prop_assume!(spread > 1e-3);
            let (z, s) = revin_forward(&x).unwrap();
            for (a, b) in revin_inverse(&z, &s).iter().zip(&x) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }
}
