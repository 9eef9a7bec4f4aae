//! Positional-encoding kernels for non-uniform tokens.
//!
//! Rotary embeddings rotate interleaved pairs `(2i, 2i+1)` of a head vector
//! by `position · f_i` with `f_i = base^{-2i/d_head}` (zero-based `i`), so
//! `f_0 = 1`. Positions may be any real number. With a layer-wise base the
//! base is parameterized as `exp(φ)` which keeps it positive.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};

/// Conventional RoPE base.
pub const DEFAULT_ROPE_BASE: f64 = 10_000.0;

/// Positional-encoding variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PosEncMode {
    Lpe,
    FRope,
    LRope,
    FRopeLpe,
    LRopeLpe,
}

impl PosEncMode {
    pub const ALL: [PosEncMode; 5] = [
        PosEncMode::Lpe,
        PosEncMode::FRope,
        PosEncMode::LRope,
        PosEncMode::FRopeLpe,
        PosEncMode::LRopeLpe,
    ];

    pub fn uses_lpe(self) -> bool {
        matches!(self, Self::Lpe | Self::FRopeLpe | Self::LRopeLpe)
    }

    pub fn uses_rope(self) -> bool {
        !matches!(self, Self::Lpe)
    }

    pub fn learnable_base(self) -> bool {
        matches!(self, Self::LRope | Self::LRopeLpe)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Lpe => "lpe",
            Self::FRope => "f-rope",
            Self::LRope => "l-rope",
            Self::FRopeLpe => "f-rope-lpe",
            Self::LRopeLpe => "l-rope-lpe",
        }
    }
}

impl fmt::Display for PosEncMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PosEncMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown positional encoding mode {s:?}")))
    }
}

/// Per-pair rotation frequencies of one head.
#[derive(Debug, Clone, PartialEq)]
pub struct RotaryFrequencies {
    pub base: f64,
    pub head_dim: usize,
    pub freqs: Vec<f64>,
}

/// `f_i = base^{-2i/d_head}` for `i = 0 … d_head/2 − 1`.
pub fn rope_frequencies(head_dim: usize, base: f64) -> Result<RotaryFrequencies> {
    if head_dim == 0 || !head_dim.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!(
            "head dimension must be even and positive, got {head_dim}"
        )));
    }
    if !(base > 0.0) || !base.is_finite() {
        return Err(Error::InvalidConfig(format!("rotary base must be > 0, got {base}")));
    }
    let freqs = (0..head_dim / 2)
        .map(|i| {
            if i == 0 {
                1.0
            } else {
                base.powf(-2.0 * i as f64 / head_dim as f64)
            }
        })
        .collect();
    Ok(RotaryFrequencies {
        base,
        head_dim,
        freqs,
    })
}

/// Rotates each pair `(v[2i], v[2i+1])` by `position · f_i`.
pub fn apply_rotary(v: &[f64], position: f64, freqs: &RotaryFrequencies) -> Result<Vec<f64>> {
    if v.len() != freqs.head_dim {
        return Err(Error::LengthMismatch {
            expected: freqs.head_dim,
            got: v.len(),
        });
    }
    let mut out = vec![0.0; v.len()];
    for (i, f) in freqs.freqs.iter().enumerate() {
        let (s, c) = (position * f).sin_cos();
        let (x, y) = (v[2 * i], v[2 * i + 1]);
        out[2 * i] = x * c - y * s;
        out[2 * i + 1] = x * s + y * c;
    }
    Ok(out)
}

/// `θ_base = exp(φ)`.
pub fn layer_base(phi: f64) -> f64 {
    phi.exp()
}

/// `max_l exp(φ_l) − min_l exp(φ_l)`.
pub fn base_spread(phis: &[f64]) -> Result<f64> {
    if phis.is_empty() {
        return Err(Error::TooShort { need: 1, got: 0 });
    }
    let bases: Vec<f64> = phis.iter().map(|&p| layer_base(p)).collect();
    let max = bases.iter().cloned().fold(f64::MIN, f64::max);
    let min = bases.iter().cloned().fold(f64::MAX, f64::min);
    Ok(max - min)
}

/// Learned positional state: the rank-indexed table and one log-base per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PosEncState {
    pub mode: PosEncMode,
    pub d_model: usize,
    /// Row-major `table_rows × d_model`.
    pub lpe_table: Vec<f64>,
    pub phi: Vec<f64>,
    pub fixed_base: f64,
}

impl PosEncState {
    /// Zero table, every `φ` at `log(10000)`.
    pub fn new(mode: PosEncMode, table_rows: usize, d_model: usize, layers: usize) -> Self {
        Self {
            mode,
            d_model,
            lpe_table: vec![0.0; table_rows * d_model],
            phi: vec![DEFAULT_ROPE_BASE.ln(); layers],
            fixed_base: DEFAULT_ROPE_BASE,
        }
    }

    /// Table drawn uniformly from `[-scale, scale]`.
    pub fn with_random_table<R: Rng>(
        mode: PosEncMode,
        table_rows: usize,
        d_model: usize,
        layers: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut s = Self::new(mode, table_rows, d_model, layers);
        for v in s.lpe_table.iter_mut() {
            *v = rng.random_range(-scale..=scale);
        }
        s
    }

    pub fn table_rows(&self) -> usize {
        self.lpe_table.len() / self.d_model.max(1)
    }

    /// Rotary base used by `layer`.
    pub fn base(&self, layer: usize) -> f64 {
        if self.mode.learnable_base() {
            layer_base(self.phi[layer])
        } else {
            self.fixed_base
        }
    }

    /// Spread of the learnable per-layer bases.
    pub fn spread(&self) -> Result<f64> {
        base_spread(&self.phi)
    }
}

/// `embedding + table[rank]`.
pub fn lpe_add(embedding: &[f64], rank: usize, state: &PosEncState) -> Result<Vec<f64>> {
    if embedding.len() != state.d_model {
        return Err(Error::LengthMismatch {
            expected: state.d_model,
            got: embedding.len(),
        });
    }
    if rank >= state.table_rows() {
        return Err(Error::IndexOutOfRange {
            index: rank,
            count: state.table_rows(),
        });
    }
    let row = &state.lpe_table[rank * state.d_model..(rank + 1) * state.d_model];
    Ok(embedding.iter().zip(row).map(|(a, b)| a + b).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn frequencies() {
        assert_eq!(rope_frequencies(2, 123.0).unwrap().freqs, vec![1.0]);
        let f = rope_frequencies(4, 10_000.0).unwrap().freqs;
        assert_eq!(f[0], 1.0);
        assert!((f[1] - 0.01).abs() < 1e-15);
        assert!(rope_frequencies(8, 1.0).unwrap().freqs.iter().all(|&v| v == 1.0));
        let f = rope_frequencies(16, 500.0).unwrap().freqs;
        assert!(f.windows(2).all(|w| w[1] < w[0]));
        assert!(rope_frequencies(3, 10.0).is_err());
        assert!(rope_frequencies(0, 10.0).is_err());
        assert!(rope_frequencies(4, 0.0).is_err());
    }

    #[test]
    fn rotation_basics() {
        let f = rope_frequencies(2, 10_000.0).unwrap();
        let r = apply_rotary(&[1.0, 0.0], std::f64::consts::FRAC_PI_2, &f).unwrap();
        assert!((r[0]).abs() < 1e-12 && (r[1] - 1.0).abs() < 1e-12);
        let f = rope_frequencies(6, 10_000.0).unwrap();
        let v = [0.3, -1.0, 2.0, 0.5, 0.1, 0.7];
        assert_eq!(apply_rotary(&v, 0.0, &f).unwrap(), v.to_vec());
        assert!(apply_rotary(&v[..4], 1.0, &f).is_err());
    }

    #[test]
    fn relative_identity_and_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = rope_frequencies(8, 10_000.0).unwrap();
        for _ in 0..100 {
            let q: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let k: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = rng.random_range(-50.0..50.0);
            let b = rng.random_range(-50.0..50.0);
            let rq = apply_rotary(&q, a, &f).unwrap();
            let rk = apply_rotary(&k, b, &f).unwrap();
            let lhs = dot(&rq, &rk);
            let rhs = dot(&apply_rotary(&q, a - b, &f).unwrap(), &k);
            assert!((lhs - rhs).abs() < 1e-10);
            assert!((dot(&rq, &rq).sqrt() - dot(&q, &q).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn lpe_table_lookup() {
        let mut state = PosEncState::new(PosEncMode::Lpe, 4, 3, 2);
        let e = [1.0, 2.0, 3.0];
        assert_eq!(lpe_add(&e, 2, &state).unwrap(), e.to_vec());
        state.lpe_table[6..9].copy_from_slice(&[0.5, 0.25, -1.0]);
        assert_eq!(lpe_add(&[0.0; 3], 2, &state).unwrap(), vec![0.5, 0.25, -1.0]);
        assert!(lpe_add(&e, 4, &state).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = PosEncState::with_random_table(PosEncMode::Lpe, 16, 8, 2, 0.02, &mut rng);
        for i in 0..16 {
            for j in i + 1..16 {
                assert_ne!(lpe_add(&[0.0; 8], i, &s).unwrap(), lpe_add(&[0.0; 8], j, &s).unwrap());
            }
        }
    }

    #[test]
    fn bases() {
        assert!((layer_base(10_000f64.ln()) - 10_000.0).abs() < 1e-9);
        assert_eq!(layer_base(0.0), 1.0);
        let h = 1e-5;
        let phi = 9.21;
        let fd = (layer_base(phi + h) - layer_base(phi - h)) / (2.0 * h);
        assert!((fd - layer_base(phi)).abs() / layer_base(phi) < 1e-6);
        let state = PosEncState::new(PosEncMode::LRope, 8, 4, 3);
        assert_eq!(state.spread().unwrap(), 0.0);
        assert_eq!(state.phi[0], 10_000f64.ln());
        let s = base_spread(&[9000f64.ln(), 11000f64.ln()]).unwrap();
        assert!((s - 2000.0).abs() < 1e-8);
        assert!(base_spread(&[]).is_err());
        assert_eq!(PosEncState::new(PosEncMode::FRope, 1, 2, 1).base(0), 10_000.0);
    }

    #[test]
    fn mode_strings() {
        for m in PosEncMode::ALL {
            assert_eq!(m.as_str().parse::<PosEncMode>().unwrap(), m);
        }
        assert!("rope".parse::<PosEncMode>().is_err());
    }
}
