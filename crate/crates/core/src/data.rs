//! Series ingestion, chronological splitting, normalization and windowing.

use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};

/// Reads one numeric column from a CSV file with a header row.
pub fn load_csv(path: &Path, column: &str) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(csv_error)?;
    let headers = reader.headers().map_err(csv_error)?.clone();
    if headers.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "empty file".into(),
        });
    }
    let col = headers
        .iter()
        .position(|h| h.trim() == column)
        .ok_or_else(|| Error::Parse {
            line: 1,
            msg: format!("column {column:?} not found in header"),
        })?;
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(csv_error)?;
        let line = i + 2;
        let cell = record.get(col).ok_or_else(|| Error::Parse {
            line,
            msg: "row has too few fields".into(),
        })?;
        let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
            line,
            msg: format!("cannot parse {cell:?} in column {column:?}"),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                line,
                msg: format!("non-finite value {cell:?}"),
            });
        }
        values.push(v);
    }
    if values.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "file has no data rows".into(),
        });
    }
    Ok(values)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse {
            line,
            msg: format!("{kind:?}"),
        },
    }
}

/// Block means over non-overlapping groups of `factor`; returns the series and
/// the number of trailing samples dropped.
pub fn aggregate(series: &[f64], factor: usize) -> Result<(Vec<f64>, usize)> {
    if factor < 1 {
        return Err(Error::InvalidConfig("aggregation factor must be >= 1".into()));
    }
    let out = series
        .chunks_exact(factor)
        .map(|c| c.iter().sum::<f64>() / factor as f64)
        .collect();
    Ok((out, series.len() % factor))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Series split chronologically, stored normalized by train statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesDataset {
    pub name: String,
    pub cadence: String,
    pub values: Vec<f64>,
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
    pub mean: f64,
    pub std: f64,
}

/// Validation and test each take `floor(0.2·len)` samples; train keeps the rest.
pub fn split_bounds(len: usize) -> Result<(Range<usize>, Range<usize>, Range<usize>)> {
    if len < 5 {
        return Err(Error::TooShort { need: 5, got: len });
    }
    let fifth = len / 5;
    let train_end = len - 2 * fifth;
    Ok((0..train_end, train_end..train_end + fifth, train_end + fifth..len))
}

/// Mean and population standard deviation; a zero spread is replaced by 1.
pub fn fit_stats(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 0.0 { std } else { 1.0 })
}

pub fn chronological_split(name: &str, cadence: &str, series: &[f64]) -> Result<SeriesDataset> {
    let (train, val, test) = split_bounds(series.len())?;
    if let Some(i) = series.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let (mean, std) = fit_stats(&series[train.clone()]);
    Ok(SeriesDataset {
        name: name.to_string(),
        cadence: cadence.to_string(),
        values: series.iter().map(|v| (v - mean) / std).collect(),
        train,
        val,
        test,
        mean,
        std,
    })
}

/// A lookback window and its forecast target, both borrowed from one split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowPair<'a> {
    pub start: usize,
    pub lookback: &'a [f64],
    pub target: &'a [f64],
}

/// Number of windows of `L + H` samples at `stride` inside `len` samples.
pub fn window_count(len: usize, lookback: usize, horizon: usize, stride: usize) -> Result<usize> {
    if stride == 0 || lookback == 0 || horizon == 0 {
        return Err(Error::InvalidConfig("lookback, horizon and stride must be >= 1".into()));
    }
    if lookback + horizon > len {
        return Err(Error::TooShort {
            need: lookback + horizon,
            got: len,
        });
    }
    Ok((len - lookback - horizon) / stride + 1)
}

impl SeriesDataset {
    pub fn range(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.train.clone(),
            Split::Val => self.val.clone(),
            Split::Test => self.test.clone(),
        }
    }

    pub fn split_values(&self, split: Split) -> &[f64] {
        &self.values[self.range(split)]
    }

    /// Windows fully inside `split`; `start` is relative to the split.
    pub fn windows(
        &self,
        split: Split,
        lookback: usize,
        horizon: usize,
        stride: usize,
    ) -> Result<Vec<WindowPair<'_>>> {
        windows(self.split_values(split), lookback, horizon, stride)
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

pub fn windows(
    values: &[f64],
    lookback: usize,
    horizon: usize,
    stride: usize,
) -> Result<Vec<WindowPair<'_>>> {
    let count = window_count(values.len(), lookback, horizon, stride)?;
    Ok((0..count)
        .map(|k| {
            let s = k * stride;
            WindowPair {
                start: s,
                lookback: &values[s..s + lookback],
                target: &values[s + lookback..s + lookback + horizon],
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::io::Write;

    #[test]
    fn csv_loading() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("toy.csv");
        std::fs::write(&p, "date,OT,x\n2020-01-01,1.5,0\n2020-01-02,-2,0\n2020-01-03,3e1,0\n").unwrap();
        assert_eq!(load_csv(&p, "OT").unwrap(), vec![1.5, -2.0, 30.0]);
        assert!(load_csv(&p, "missing").is_err());

        let bad = dir.path().join("bad.csv");
        let mut f = std::fs::File::create(&bad).unwrap();
        writeln!(f, "a,b\n1,2\n3,oops").unwrap();
        match load_csv(&bad, "b") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let empty = dir.path().join("empty.csv");
        std::fs::write(&empty, "").unwrap();
        assert!(load_csv(&empty, "a").is_err());
        assert!(load_csv(&dir.path().join("nope.csv"), "a").is_err());
    }

    #[test]
    fn aggregation() {
        assert_eq!(aggregate(&[1.0, 2.0, 3.0, 4.0], 2).unwrap(), (vec![1.5, 3.5], 0));
        assert_eq!(aggregate(&[1.0, 2.0, 3.0], 1).unwrap(), (vec![1.0, 2.0, 3.0], 0));
        assert_eq!(aggregate(&[1.0, 2.0, 3.0], 2).unwrap(), (vec![1.5], 1));
        assert_eq!(aggregate(&vec![0.0; 105_120], 3).unwrap().0.len(), 35_040);
        assert!(aggregate(&[1.0], 0).is_err());
    }

    #[test]
    fn split_sizes() {
        let sizes = |n| {
            let (a, b, c) = split_bounds(n).unwrap();
            (a.len(), b.len(), c.len())
        };
        assert_eq!(sizes(10), (6, 2, 2));
        assert_eq!(sizes(17_420), (10_452, 3_484, 3_484));
        assert_eq!(sizes(35_040), (21_024, 7_008, 7_008));
        assert_eq!(sizes(70_176), (42_106, 14_035, 14_035));
        assert!(split_bounds(4).is_err());
    }

    #[test]
    fn train_statistics_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut x: Vec<f64> = (0..50_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let d = chronological_split("n", "1h", &x).unwrap();
        assert!(d.mean.abs() < 0.03 && (d.std - 1.0).abs() < 0.03);
        for v in &mut x[d.val.start..] {
            *v = 1e6;
        }
        let e = chronological_split("n", "1h", &x).unwrap();
        assert_eq!((d.mean, d.std), (e.mean, e.std));
        assert_eq!(d.split_values(Split::Train), e.split_values(Split::Train));
        assert!((d.denormalize(d.normalize(3.25)) - 3.25).abs() < 1e-12);
    }

    #[test]
    fn window_arithmetic() {
        let v: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let w = windows(&v, 50, 10, 10).unwrap();
        assert_eq!(w.len(), 5);
        for p in &w {
            assert_eq!(p.target[0], p.lookback[49] + 1.0);
            assert_eq!(p.lookback.len() + p.target.len(), 60);
        }
        assert_eq!(windows(&v, 50, 10, 100).unwrap().len(), 1);
        assert!(windows(&v, 95, 10, 1).is_err());
        let d = chronological_split("r", "1h", &v).unwrap();
        for split in [Split::Train, Split::Val, Split::Test] {
            let r = d.range(split);
            for p in d.windows(split, 5, 3, 2).unwrap() {
                assert!(r.start + p.start + 8 <= r.end);
            }
        }
    }
}
