//! B-spline adaptive tokenization of lookback windows.
//!
//! Each window of `L` samples is fitted on the shared grid `linspace(0, 1, L)`
//! by a degree-`p` spline with `n` basis functions whose knots come from
//! [`crate::knots::place_knots`]. Every basis function becomes one token
//! `(c_i, μ_i)`: its least-squares coefficient and the center of its support
//! in sample units.

use std::path::Path;

use nalgebra::DMatrix;

use crate::cache::{self, CacheHeader, CacheRecord, TokenCache};
use crate::error::{Error, Result};
use crate::knots::place_knots;
use crate::lsq::{banded_qr_solve, condition_number, ridge_solve};
use crate::spline::{basis_matrix, linspace, BasisMatrix, KnotVector};

/// Parameters of the tokenizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenizerConfig {
    pub lookback: usize,
    pub budget: usize,
    pub degree: usize,
    pub clip_factor: f64,
    pub coeff_cap: f64,
    pub ridge_threshold: f64,
    pub ridge_scale: f64,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            lookback: 720,
            budget: 45,
            degree: 3,
            clip_factor: 1.0,
            coeff_cap: 10.0,
            ridge_threshold: 1e8,
            ridge_scale: 1e-6,
        }
    }
}

impl TokenizerConfig {
    pub fn validate(&self) -> Result<()> {
        let (l, n, p) = (self.lookback, self.budget, self.degree);
        if p == 0 {
            return Err(Error::InvalidConfig("degree must be >= 1".into()));
        }
        if !(p + 1 < n && n < l) {
            return Err(Error::InvalidConfig(format!(
                "budget {n} must satisfy {} < n < {l}",
                p + 1
            )));
        }
        if !(self.clip_factor > 0.0 && self.clip_factor.is_finite()) {
            return Err(Error::InvalidConfig("clip factor must be > 0".into()));
        }
        if !(self.coeff_cap > 0.0) {
            return Err(Error::InvalidConfig("coefficient cap must be > 0".into()));
        }
        if !(self.ridge_threshold > 1.0) {
            return Err(Error::InvalidConfig("ridge threshold must be > 1".into()));
        }
        if !(self.ridge_scale > 0.0 && self.ridge_scale.is_finite()) {
            return Err(Error::InvalidConfig("ridge scale must be > 0".into()));
        }
        Ok(())
    }
}

/// How a window was fitted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitDiagnostics {
    pub used_ridge: bool,
    /// `λ` of the ridge system when the fallback ran.
    pub ridge_lambda: Option<f64>,
    pub condition_number: f64,
    pub clipped_count: usize,
    /// RMSE of the clipped spline against the window.
    pub fit_rmse: f64,
}

/// Tokens of one window. Diagnostics are absent for tokens read from a cache.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub coeffs: Vec<f64>,
    pub centers: Vec<f64>,
    pub diagnostics: Option<FitDiagnostics>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }
}

/// Everything produced while fitting a window.
#[derive(Debug, Clone)]
pub struct WindowFit {
    pub tokens: TokenSequence,
    pub knots: KnotVector,
    pub unclipped: Vec<f64>,
    /// Reconstruction of the window from the clipped coefficients.
    pub reconstruction: Vec<f64>,
}

impl WindowFit {
    pub fn diagnostics(&self) -> FitDiagnostics {
        self.tokens
            .diagnostics
            .expect("fresh fits always carry diagnostics")
    }
}

/// Result of an unclipped least-squares solve.
#[derive(Debug, Clone)]
pub struct SplineSolve {
    pub coeffs: Vec<f64>,
    pub used_ridge: bool,
    pub ridge_lambda: Option<f64>,
    pub condition_number: f64,
}

/// Least-squares spline coefficients for `y` sampled on the rows of `basis`.
///
/// Uses banded Givens QR unless `κ(BᵀB) > ridge_threshold` or the direct solve
/// fails; then solves `(G + λI)c = Bᵀy` with `λ = ridge_scale · tr(G)/n`.
pub fn solve_spline(
    basis: &BasisMatrix,
    y: &[f64],
    ridge_threshold: f64,
    ridge_scale: f64,
) -> Result<SplineSolve> {
    let n = basis.cols();
    let gram = DMatrix::from_row_slice(n, n, &basis.gram());
    let kappa = condition_number(&gram)?;
    let direct = if kappa > ridge_threshold {
        None
    } else {
        banded_qr_solve(basis, y)
    };
    if let Some(coeffs) = direct {
        return Ok(SplineSolve {
            coeffs,
            used_ridge: false,
            ridge_lambda: None,
            condition_number: kappa,
        });
    }
    let lambda = ridge_scale * gram.trace() / n as f64;
    let coeffs = ridge_solve(&gram, &basis.transpose_apply(y), lambda)
        .map_err(|e| Error::FitFailed(format!("direct and ridge solves both failed: {e}")))?;
    Ok(SplineSolve {
        coeffs,
        used_ridge: true,
        ridge_lambda: Some(lambda),
        condition_number: kappa,
    })
}

/// Support centers `½(τ_i + τ_{i+p+1})·(L−1)` in sample units.
pub fn token_centers(knots: &KnotVector, lookback: usize) -> Vec<f64> {
    let p = knots.degree();
    let tau = knots.tau();
    let scale = (lookback - 1) as f64;
    (0..knots.basis_count())
        .map(|i| 0.5 * (tau[i] + tau[i + p + 1]) * scale)
        .collect()
}

pub(crate) fn rmse(a: &[f64], b: &[f64]) -> f64 {
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (ss / a.len() as f64).sqrt()
}

fn check_window(y: &[f64], lookback: usize) -> Result<()> {
    if y.len() != lookback {
        return Err(Error::LengthMismatch {
            expected: lookback,
            got: y.len(),
        });
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    Ok(())
}

/// Fits one window and keeps the knots and reconstruction alongside the tokens.
pub fn fit_window_full(y: &[f64], config: &TokenizerConfig) -> Result<WindowFit> {
    config.validate()?;
    check_window(y, config.lookback)?;
    let grid = linspace(0.0, 1.0, config.lookback);
    let knots = place_knots(
        &grid,
        y,
        config.degree,
        config.budget,
        config.clip_factor,
    )?;
    let basis = basis_matrix(&grid, &knots)?;
    let solve = solve_spline(&basis, y, config.ridge_threshold, config.ridge_scale)?;

    let cap = config.coeff_cap;
    let mut clipped_count = 0;
    let coeffs: Vec<f64> = solve
        .coeffs
        .iter()
        .map(|&c| {
            if c.abs() > cap {
                clipped_count += 1;
                c.clamp(-cap, cap)
            } else {
                c
            }
        })
        .collect();
    let reconstruction = basis.apply(&coeffs);
    let fit_rmse = rmse(&reconstruction, y);
    if !fit_rmse.is_finite() {
        return Err(Error::FitFailed("non-finite residual".into()));
    }
    let centers = token_centers(&knots, config.lookback);
    Ok(WindowFit {
        tokens: TokenSequence {
            coeffs,
            centers,
            diagnostics: Some(FitDiagnostics {
                used_ridge: solve.used_ridge,
                ridge_lambda: solve.ridge_lambda,
                condition_number: solve.condition_number,
                clipped_count,
                fit_rmse,
            }),
        },
        knots,
        unclipped: solve.coeffs,
        reconstruction,
    })
}

/// Tokenizes one lookback window into `n` tokens.
pub fn fit_window(y: &[f64], config: &TokenizerConfig) -> Result<TokenSequence> {
    Ok(fit_window_full(y, config)?.tokens)
}

/// Start indices of all full windows of length `lookback` taken every `stride` samples.
pub fn window_starts(len: usize, lookback: usize, stride: usize) -> Vec<usize> {
    if len < lookback || stride == 0 {
        return Vec::new();
    }
    (0..=len - lookback).step_by(stride).collect()
}

/// Outcome of a clip-factor grid search.
#[derive(Debug, Clone)]
pub struct ClipTuning {
    pub best: f64,
    /// `(g, max window RMSE)` for every grid point.
    pub curve: Vec<(f64, f64)>,
}

/// Grid of clip factors `lo, lo+step, …, hi`, rounded to the step's decimals.
pub fn clip_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(lo > 0.0) || hi < lo {
        return Err(Error::InvalidConfig(format!(
            "empty clip-factor grid [{lo}, {hi}] step {step}"
        )));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..count)
        .map(|i| {
            let g = lo + step * i as f64;
            (g * 1e9).round() / 1e9
        })
        .collect())
}

/// Picks `g* = argmin_g max_s RMSE(s, g)` over degree-1 fits of sliding windows.
///
/// Window RMSE uses the unclipped coefficients. Ties go to the larger `g`.
pub fn tune_clip_factor(
    train: &[f64],
    lookback: usize,
    budget: usize,
    grid: &[f64],
    stride: usize,
) -> Result<ClipTuning> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty clip-factor grid".into()));
    }
    if train.len() < lookback {
        return Err(Error::TooShort {
            need: lookback,
            got: train.len(),
        });
    }
    let starts = window_starts(train.len(), lookback, stride.max(1));
    let xi = linspace(0.0, 1.0, lookback);
    let mut curve = Vec::with_capacity(grid.len());
    for &g in grid {
        let cfg = TokenizerConfig {
            lookback,
            budget,
            degree: 1,
            clip_factor: g,
            ..TokenizerConfig::default()
        };
        cfg.validate()?;
        let mut worst: f64 = 0.0;
        for &s in &starts {
            let y = &train[s..s + lookback];
            check_window(y, lookback)?;
            let knots = place_knots(&xi, y, 1, budget, g)?;
            let basis = basis_matrix(&xi, &knots)?;
            let solve = solve_spline(&basis, y, cfg.ridge_threshold, cfg.ridge_scale)?;
            worst = worst.max(rmse(&basis.apply(&solve.coeffs), y));
        }
        curve.push((g, worst));
    }
    let mut best = curve[0];
    for &(g, e) in &curve[1..] {
        if e <= best.1 {
            best = (g, e);
        }
    }
    Ok(ClipTuning { best: best.0, curve })
}

/// Whether the cache served the request.
#[derive(Debug, Clone, PartialEq)]
pub enum CacheStatus {
    Disabled,
    Hit,
    Miss,
    /// A cache existed but did not match; it was refitted and replaced.
    Rejected(String),
}

#[derive(Debug, Clone)]
pub struct TokenizedDataset {
    pub starts: Vec<usize>,
    pub tokens: Vec<TokenSequence>,
    pub fits_performed: usize,
    pub cache: CacheStatus,
}

impl TokenizedDataset {
    pub fn ridge_count(&self) -> usize {
        self.tokens
            .iter()
            .filter(|t| t.diagnostics.is_some_and(|d| d.used_ridge))
            .count()
    }

    pub fn clipped_count(&self) -> usize {
        self.tokens
            .iter()
            .filter_map(|t| t.diagnostics.map(|d| d.clipped_count))
            .sum()
    }
}

/// Tokenizes every window of `series`, reading and writing a token cache when a path is given.
pub fn tokenize_dataset(
    series: &[f64],
    config: &TokenizerConfig,
    window_stride: usize,
    cache_path: Option<&Path>,
) -> Result<TokenizedDataset> {
    config.validate()?;
    if window_stride == 0 {
        return Err(Error::InvalidConfig("window stride must be >= 1".into()));
    }
    if series.len() < config.lookback {
        return Err(Error::TooShort {
            need: config.lookback,
            got: series.len(),
        });
    }
    let starts = window_starts(series.len(), config.lookback, window_stride);
    let header = CacheHeader::for_series(series, config, window_stride);

    let mut status = CacheStatus::Disabled;
    if let Some(path) = cache_path {
        status = CacheStatus::Miss;
        if path.exists() {
            match cache::read_cache(path).and_then(|c| c.validate(&header, &starts).map(|_| c)) {
                Ok(c) => {
                    let tokens = c
                        .records
                        .into_iter()
                        .map(|r| TokenSequence {
                            coeffs: r.coeffs,
                            centers: r.centers,
                            diagnostics: None,
                        })
                        .collect();
                    return Ok(TokenizedDataset {
                        starts,
                        tokens,
                        fits_performed: 0,
                        cache: CacheStatus::Hit,
                    });
                }
                Err(e) => status = CacheStatus::Rejected(e.to_string()),
            }
        }
    }

    let tokens = starts
        .iter()
        .map(|&s| fit_window(&series[s..s + config.lookback], config))
        .collect::<Result<Vec<_>>>()?;

    if let Some(path) = cache_path {
        let records = starts
            .iter()
            .zip(&tokens)
            .map(|(&s, t)| CacheRecord {
                start: s as u64,
                coeffs: t.coeffs.clone(),
                centers: t.centers.clone(),
            })
            .collect();
        cache::write_cache_atomic(path, &TokenCache { header, records })?;
    }
    Ok(TokenizedDataset {
        fits_performed: tokens.len(),
        starts,
        tokens,
        cache: status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(l: usize, n: usize, p: usize) -> TokenizerConfig {
        TokenizerConfig {
            lookback: l,
            budget: n,
            degree: p,
            ..TokenizerConfig::default()
        }
    }

    #[test]
    fn constant_window_reproduced() {
        for p in 1..=4 {
            let t = fit_window(&[4.2; 200], &cfg(200, 20, p)).unwrap();
            let d = t.diagnostics.unwrap();
            assert!(t.coeffs.iter().all(|c| (c - 4.2).abs() < 1e-9));
            assert!(!d.used_ridge);
            assert_eq!(d.clipped_count, 0);
        }
    }

    #[test]
    fn polynomial_reproduction() {
        let l = 300;
        let xs = linspace(0.0, 1.0, l);
        for p in 1..=4 {
            // degree-p polynomial with roots spread over the window
            let y: Vec<f64> = xs
                .iter()
                .map(|&x| (0..p).fold(1.5, |acc, r| acc * (x - 0.2 * r as f64 - 0.1)))
                .collect();
            let fit = fit_window_full(&y, &cfg(l, 18, p)).unwrap();
            let d = fit.diagnostics();
            assert!(d.fit_rmse < 1e-8, "p={p} rmse={}", d.fit_rmse);
            let max = fit
                .reconstruction
                .iter()
                .zip(&y)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(max < 1e-8);
        }
    }

    #[test]
    fn spike_is_clipped() {
        let mut y = vec![0.0; 200];
        y[100] = 1e6;
        let t = fit_window(&y, &cfg(200, 20, 2)).unwrap();
        let d = t.diagnostics.unwrap();
        assert!(d.clipped_count >= 1);
        assert!(t.coeffs.iter().all(|c| c.abs() <= 10.0));
        assert!(t.coeffs.iter().any(|c| c.abs() == 10.0));
    }

    #[test]
    fn centers_are_ordered_and_in_range() {
        let y: Vec<f64> = (0..720).map(|i| (i as f64 * 0.05).sin()).collect();
        let t = fit_window(&y, &TokenizerConfig::default()).unwrap();
        assert_eq!(t.len(), 45);
        assert!(t.centers[0] >= 0.0 && *t.centers.last().unwrap() <= 719.0);
        assert!(t.centers.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn rejects_bad_windows() {
        let c = cfg(100, 10, 2);
        assert!(matches!(fit_window(&[0.0; 99], &c), Err(Error::LengthMismatch { .. })));
        let mut y = vec![0.0; 100];
        y[3] = f64::NAN;
        assert!(matches!(fit_window(&y, &c), Err(Error::NonFinite(3))));
        assert!(fit_window(&[0.0; 100], &cfg(100, 3, 2)).is_err());
        assert!(fit_window(&[0.0; 100], &cfg(100, 100, 2)).is_err());
    }

    #[test]
    fn window_arithmetic() {
        assert_eq!(window_starts(1000, 720, 100), vec![0, 100, 200]);
        assert_eq!(window_starts(720, 720, 1), vec![0]);
        assert!(window_starts(719, 720, 1).is_empty());
    }

    #[test]
    fn grid_construction() {
        let g = clip_grid(0.10, 1.25, 0.01).unwrap();
        assert_eq!(g.len(), 116);
        assert_eq!(g[0], 0.10);
        assert_eq!(*g.last().unwrap(), 1.25);
        assert!(clip_grid(0.5, 0.1, 0.01).is_err());
    }

    #[test]
    fn tuning_is_deterministic_and_in_range() {
        let series: Vec<f64> = (0..900).map(|i| (i as f64 * 0.07).sin()).collect();
        let grid = clip_grid(0.10, 1.25, 0.05).unwrap();
        let a = tune_clip_factor(&series, 200, 20, &grid, 100).unwrap();
        let b = tune_clip_factor(&series, 200, 20, &grid, 100).unwrap();
        assert_eq!(a.best, b.best);
        assert!((0.10..=1.25).contains(&a.best));
        assert!(tune_clip_factor(&series[..100], 200, 20, &grid, 100).is_err());
        assert!(tune_clip_factor(&series, 200, 20, &[], 100).is_err());
    }
}
