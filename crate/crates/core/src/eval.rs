//! Forecast metrics, series-complexity diagnostics and BCa bootstrap intervals.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Point-forecast error summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub rmse: f64,
    pub mae: f64,
    pub mse: f64,
    /// Two-sided SMAPE in percent, bounded by 200.
    pub smape: f64,
    pub count: usize,
}

impl MetricReport {
    /// One `metric=value` per line, in a fixed order.
    pub fn to_records(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "count={}", self.count);
        let _ = writeln!(s, "rmse={}", self.rmse);
        let _ = writeln!(s, "mae={}", self.mae);
        let _ = writeln!(s, "mse={}", self.mse);
        let _ = writeln!(s, "smape={}", self.smape);
        s
    }

    pub fn from_records(text: &str) -> Result<Self> {
        let map = parse_records(text)?;
        let get = |k: &str| -> Result<&str> {
            map.get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::InvalidConfig(format!("missing metric {k}")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("metric {k} is not a number")))
        };
        Ok(Self {
            rmse: num("rmse")?,
            mae: num("mae")?,
            mse: num("mse")?,
            smape: num("smape")?,
            count: get("count")?
                .parse()
                .map_err(|_| Error::InvalidConfig("metric count is not an integer".into()))?,
        })
    }
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_records(text: &str) -> Result<HashMap<String, String>> {
    let mut map = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: format!("expected key=value, got {line:?}"),
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

pub fn forecast_metrics(predictions: &[f64], targets: &[f64]) -> Result<MetricReport> {
    if predictions.len() != targets.len() {
        return Err(Error::LengthMismatch {
            expected: targets.len(),
            got: predictions.len(),
        });
    }
    if targets.is_empty() {
        return Err(Error::TooShort { need: 1, got: 0 });
    }
    let n = targets.len() as f64;
    let (mut se, mut ae, mut sm) = (0.0, 0.0, 0.0);
    for (&p, &t) in predictions.iter().zip(targets) {
        let e = p - t;
        se += e * e;
        ae += e.abs();
        let denom = p.abs() + t.abs();
        if denom > 0.0 {
            sm += 2.0 * e.abs() / denom;
        }
    }
    let mse = se / n;
    Ok(MetricReport {
        rmse: mse.sqrt(),
        mae: ae / n,
        mse,
        smape: 100.0 * sm / n,
        count: targets.len(),
    })
}

/// `Σ |x_{i+1} − x_i|`.
pub fn total_variation(series: &[f64]) -> Result<f64> {
    if series.len() < 2 {
        return Err(Error::TooShort {
            need: 2,
            got: series.len(),
        });
    }
    Ok(series.windows(2).map(|w| (w[1] - w[0]).abs()).sum())
}

/// L2 norm of the second differences.
pub fn l2_second_diff(series: &[f64]) -> Result<f64> {
    if series.len() < 3 {
        return Err(Error::TooShort {
            need: 3,
            got: series.len(),
        });
    }
    Ok(series
        .windows(3)
        .map(|w| {
            let d = w[2] - 2.0 * w[1] + w[0];
            d * d
        })
        .sum::<f64>()
        .sqrt())
}

/// Normalized Shannon entropy of ordinal patterns of order `m`.
///
/// Ties inside a tuple are ranked by position.
pub fn permutation_entropy(series: &[f64], order: usize, delay: usize) -> Result<f64> {
    if order < 2 || delay < 1 {
        return Err(Error::InvalidConfig(format!(
            "permutation entropy needs order >= 2 and delay >= 1, got {order}, {delay}"
        )));
    }
    let need = order * delay + 1;
    if series.len() < need {
        return Err(Error::TooShort {
            need,
            got: series.len(),
        });
    }
    let span = (order - 1) * delay;
    let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    let mut idx: Vec<usize> = Vec::with_capacity(order);
    for s in 0..series.len() - span {
        idx.clear();
        idx.extend(0..order);
        idx.sort_by(|&a, &b| series[s + a * delay].total_cmp(&series[s + b * delay]));
        *counts.entry(idx.clone()).or_default() += 1;
    }
    let total = (series.len() - span) as f64;
    let h: f64 = counts
        .values()
        .map(|&c| {
            let p = c as f64 / total;
            // p·ln(1/p) rather than −p·ln p, so a single pattern gives +0
            p * (total / c as f64).ln()
        })
        .sum();
    let log_fact: f64 = (2..=order).map(|k| (k as f64).ln()).sum();
    Ok((h / log_fact).clamp(0.0, 1.0))
}

/// Bias-corrected and accelerated bootstrap interval.
#[derive(Debug, Clone, PartialEq)]
pub struct BcaInterval {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub resamples: usize,
    pub z0: f64,
    pub acceleration: f64,
    /// Every resampled statistic was identical; the interval is the point.
    pub degenerate: bool,
}

impl BcaInterval {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains_estimate(&self) -> bool {
        self.lower <= self.estimate && self.estimate <= self.upper
    }
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Statistics of `resamples` bootstrap draws, sorted ascending.
pub fn bootstrap_statistics<F>(samples: &[f64], statistic: F, resamples: usize, seed: u64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = samples.len();
    let mut buf = vec![0.0; n];
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = samples[rng.random_range(0..n)];
            }
            statistic(&buf)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    stats
}

pub fn bca_ci<F>(samples: &[f64], statistic: F, resamples: usize, level: f64, seed: u64) -> Result<BcaInterval>
where
    F: Fn(&[f64]) -> f64,
{
    if samples.len() < 3 {
        return Err(Error::TooShort {
            need: 3,
            got: samples.len(),
        });
    }
    if !(level > 0.0 && level < 1.0) || resamples < 2 {
        return Err(Error::InvalidConfig(format!(
            "bootstrap needs 0 < level < 1 and at least 2 resamples, got {level}, {resamples}"
        )));
    }
    let estimate = statistic(samples);
    let stats = bootstrap_statistics(samples, &statistic, resamples, seed);
    if stats[0] == stats[stats.len() - 1] {
        return Ok(BcaInterval {
            estimate,
            lower: estimate,
            upper: estimate,
            resamples,
            z0: 0.0,
            acceleration: 0.0,
            degenerate: true,
        });
    }
    let normal = Normal::standard();
    let b = resamples as f64;
    let below = stats.iter().filter(|&&s| s < estimate).count() as f64;
    let frac = below.clamp(0.5, b - 0.5) / b;
    let z0 = normal.inverse_cdf(frac);

    let n = samples.len();
    let mut jack = Vec::with_capacity(n);
    let mut buf = Vec::with_capacity(n - 1);
    for i in 0..n {
        buf.clear();
        buf.extend_from_slice(&samples[..i]);
        buf.extend_from_slice(&samples[i + 1..]);
        jack.push(statistic(&buf));
    }
    let mean = jack.iter().sum::<f64>() / n as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for &t in &jack {
        let d = mean - t;
        num += d * d * d;
        den += d * d;
    }
    let acceleration = if den > 0.0 {
        num / (6.0 * den.powf(1.5))
    } else {
        0.0
    };

    let z = normal.inverse_cdf(0.5 + level / 2.0);
    let adjust = |zz: f64| {
        let t = z0 + zz;
        normal.cdf(z0 + t / (1.0 - acceleration * t))
    };
    let lower = quantile_sorted(&stats, adjust(-z));
    let upper = quantile_sorted(&stats, adjust(z));
    Ok(BcaInterval {
        estimate,
        lower,
        upper,
        resamples,
        z0,
        acceleration,
        degenerate: false,
    })
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Exp, StandardNormal};

    #[test]
    fn metric_basics() {
        let y = [1.0, -2.0, 3.5];
        let r = forecast_metrics(&y, &y).unwrap();
        assert_eq!((r.rmse, r.mae, r.mse, r.smape), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(forecast_metrics(&[2.0], &[0.0]).unwrap().smape, 200.0);
        assert_eq!(forecast_metrics(&[0.0], &[0.0]).unwrap().smape, 0.0);
        let r = forecast_metrics(&[1.0, 3.0], &[0.0, 0.0]).unwrap();
        assert_eq!((r.mse, r.mae), (5.0, 2.0));
        assert!(forecast_metrics(&[1.0], &[1.0, 2.0]).is_err());
        assert!(forecast_metrics(&[], &[]).is_err());
    }

    #[test]
    fn rmse_dominates_mae() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let n = rng.random_range(1..30);
            let p: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let t: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let r = forecast_metrics(&p, &t).unwrap();
            assert!(r.rmse >= r.mae - 1e-12);
            assert!((r.rmse * r.rmse - r.mse).abs() <= 1e-9 * r.mse.max(1e-300));
            assert!((0.0..=200.0).contains(&r.smape));
        }
    }

    #[test]
    fn records_roundtrip() {
        let r = forecast_metrics(&[1.1, 2.0, 0.3], &[1.0, 2.5, -0.2]).unwrap();
        assert_eq!(MetricReport::from_records(&r.to_records()).unwrap(), r);
        assert!(MetricReport::from_records("rmse=1\n").is_err());
    }

    #[test]
    fn variation_and_curvature() {
        let ramp: Vec<f64> = (0..=10).map(|i| i as f64).collect();
        assert_eq!(total_variation(&ramp).unwrap(), 10.0);
        assert_eq!(total_variation(&[4.0; 5]).unwrap(), 0.0);
        assert_eq!(l2_second_diff(&ramp).unwrap(), 0.0);
        assert_eq!(l2_second_diff(&[0.0, 1.0, 0.0]).unwrap(), 2.0);
        assert!(total_variation(&[1.0]).is_err());
        assert!(l2_second_diff(&[1.0, 2.0]).is_err());
        let a = [0.0, 2.0, 1.0];
        let b = [5.0, 3.0];
        let ab = [0.0, 2.0, 1.0, 5.0, 3.0];
        let lhs = total_variation(&ab).unwrap();
        let rhs = total_variation(&a).unwrap() + total_variation(&b).unwrap() + 4.0;
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn entropy() {
        let inc: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let flat = permutation_entropy(&inc, 3, 1).unwrap();
        assert!(flat == 0.0 && flat.is_sign_positive());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
        let pe = permutation_entropy(&noise, 3, 1).unwrap();
        assert!((pe - 1.0).abs() < 0.01, "{pe}");
        let scaled: Vec<f64> = noise[..2000].iter().map(|v| 3.5 * v - 7.0).collect();
        assert_eq!(
            permutation_entropy(&noise[..2000], 4, 2).unwrap(),
            permutation_entropy(&scaled, 4, 2).unwrap()
        );
        assert!(permutation_entropy(&[1.0, 2.0, 3.0], 3, 1).is_err());
        assert!(permutation_entropy(&inc, 1, 1).is_err());
    }

    #[test]
    fn bca_degenerate_and_errors() {
        let ci = bca_ci(&[2.0; 10], mean, 500, 0.95, 1).unwrap();
        assert!(ci.degenerate);
        assert_eq!((ci.lower, ci.upper), (2.0, 2.0));
        assert!(bca_ci(&[1.0, 2.0], mean, 100, 0.95, 1).is_err());
    }

    #[test]
    fn bca_symmetric_and_skewed() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let normal: Vec<f64> = (0..200).map(|_| StandardNormal.sample(&mut rng)).collect();
        let ci = bca_ci(&normal, mean, 4000, 0.95, 3).unwrap();
        let stats = bootstrap_statistics(&normal, mean, 4000, 99);
        let pw = quantile_sorted(&stats, 0.975) - quantile_sorted(&stats, 0.025);
        assert!((ci.width() - pw).abs() / pw < 0.05);
        assert!(ci.contains_estimate());

        let exp = Exp::new(1.0).unwrap();
        let skewed: Vec<f64> = (0..200).map(|_| exp.sample(&mut rng)).collect();
        let ci = bca_ci(&skewed, mean, 4000, 0.95, 3).unwrap();
        assert!(ci.acceleration > 0.0);
        let a = bca_ci(&skewed, mean, 4000, 0.95, 3).unwrap();
        assert_eq!(a, ci);
        let wide = bca_ci(&skewed, mean, 4000, 0.99, 3).unwrap();
        assert!(wide.lower <= ci.lower && wide.upper >= ci.upper);
    }
}
