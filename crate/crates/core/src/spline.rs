//! B-spline basis evaluation over clamped knot vectors.
//!
//! Basis functions follow the Cox–de Boor recursion with the usual 0/0 = 0
//! convention. Batched evaluation uses the local span algorithm: locate the
//! knot span containing ξ, then build the p+1 active functions in O(p²).
//! The support of `N_{i,p}` is the half-open interval `[τ_i, τ_{i+p+1})`,
//! closed at the right end of the domain so the last basis function is 1
//! there.

use crate::error::{Error, Result};

/// Clamped, non-decreasing knot sequence of a degree-`p` spline space.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    tau: Vec<f64>,
    degree: usize,
}

impl KnotVector {
    /// Validates monotonicity and clamping (p+1 equal knots at each end).
    pub fn new(tau: Vec<f64>, degree: usize) -> Result<Self> {
        if tau.len() < 2 * (degree + 1) {
            return Err(Error::InvalidKnots(format!(
                "{} knots cannot clamp degree {degree}",
                tau.len()
            )));
        }
        if let Some(i) = tau.iter().position(|t| !t.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        if tau.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidKnots("knots must be non-decreasing".into()));
        }
        let k = tau.len();
        let left_clamped = tau[..=degree].iter().all(|&t| t == tau[0]);
        let right_clamped = tau[k - degree - 1..].iter().all(|&t| t == tau[k - 1]);
        if !left_clamped || !right_clamped {
            return Err(Error::InvalidKnots(format!(
                "boundary knots must be repeated {} times",
                degree + 1
            )));
        }
        if tau[0] == tau[k - 1] {
            return Err(Error::InvalidKnots("empty parameter domain".into()));
        }
        Ok(Self { tau, degree })
    }

    /// Builds the clamped vector `lo×(p+1) ‖ interior ‖ hi×(p+1)`.
    pub fn clamped(lo: f64, hi: f64, interior: &[f64], degree: usize) -> Result<Self> {
        let mut tau = Vec::with_capacity(interior.len() + 2 * (degree + 1));
        tau.extend(std::iter::repeat_n(lo, degree + 1));
        tau.extend_from_slice(interior);
        tau.extend(std::iter::repeat_n(hi, degree + 1));
        Self::new(tau, degree)
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of basis functions, `n = k − (p+1)`.
    pub fn basis_count(&self) -> usize {
        self.tau.len() - self.degree - 1
    }

    /// Knots strictly between the clamped boundary blocks.
    pub fn interior(&self) -> &[f64] {
        &self.tau[self.degree + 1..self.tau.len() - self.degree - 1]
    }

    /// The evaluation domain `[τ_p, τ_n]`.
    pub fn domain(&self) -> (f64, f64) {
        (self.tau[self.degree], self.tau[self.basis_count()])
    }

    fn check_index(&self, i: usize) -> Result<()> {
        let n = self.basis_count();
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, count: n });
        }
        Ok(())
    }

    fn check_domain(&self, xi: f64) -> Result<()> {
        let (lo, hi) = self.domain();
        if !(lo..=hi).contains(&xi) {
            return Err(Error::OutsideDomain { xi, lo, hi });
        }
        Ok(())
    }

    /// Index `s` of the non-empty span `[τ_s, τ_{s+1})` containing `xi`.
    ///
    /// The right domain end maps to the last non-empty span.
    pub fn find_span(&self, xi: f64) -> Result<usize> {
        self.check_domain(xi)?;
        let p = self.degree;
        let n = self.basis_count();
        let (_, hi) = self.domain();
        if xi >= hi {
            let mut s = n - 1;
            while s > p && self.tau[s] >= self.tau[s + 1] {
                s -= 1;
            }
            return Ok(s);
        }
        let count = self.tau[p..n].partition_point(|&t| t <= xi);
        Ok(p + count - 1)
    }

    /// Values of the p+1 basis functions active on span `s` at `xi`,
    /// i.e. `N_{s-p,p}(xi) … N_{s,p}(xi)`.
    fn active_basis(&self, s: usize, xi: f64, out: &mut [f64]) {
        let p = self.degree;
        let tau = &self.tau;
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        out[0] = 1.0;
        for j in 1..=p {
            left[j] = xi - tau[s + 1 - j];
            right[j] = tau[s + j] - xi;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = out[r] / (right[r + 1] + left[j - r]);
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
    }

    /// Returns the first active basis index and the p+1 active values at `xi`.
    pub fn nonzero_basis(&self, xi: f64) -> Result<(usize, Vec<f64>)> {
        let s = self.find_span(xi)?;
        let mut vals = vec![0.0; self.degree + 1];
        self.active_basis(s, xi, &mut vals);
        Ok((s - self.degree, vals))
    }

    /// `N_{i,p}(xi)` for a point of the domain.
    pub fn basis_value(&self, i: usize, xi: f64) -> Result<f64> {
        self.check_index(i)?;
        let (first, vals) = self.nonzero_basis(xi)?;
        Ok(if (first..first + vals.len()).contains(&i) {
            vals[i - first]
        } else {
            0.0
        })
    }

    /// `(τ_i, τ_{i+p+1})`.
    pub fn support_interval(&self, i: usize) -> Result<(f64, f64)> {
        self.check_index(i)?;
        Ok((self.tau[i], self.tau[i + self.degree + 1]))
    }

    /// `C(xi) = Σ c_i N_{i,p}(xi)`, touching only the p+1 active terms.
    pub fn eval_curve(&self, coeffs: &[f64], xi: f64) -> Result<f64> {
        let n = self.basis_count();
        if coeffs.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: coeffs.len(),
            });
        }
        let (first, vals) = self.nonzero_basis(xi)?;
        Ok(vals
            .iter()
            .zip(&coeffs[first..])
            .map(|(b, c)| b * c)
            .sum())
    }

    /// Greville abscissae `(τ_{i+1} + … + τ_{i+p}) / p`; for p = 0 the span midpoints.
    pub fn greville(&self) -> Vec<f64> {
        let p = self.degree;
        (0..self.basis_count())
            .map(|i| {
                if p == 0 {
                    0.5 * (self.tau[i] + self.tau[i + 1])
                } else {
                    self.tau[i + 1..=i + p].iter().sum::<f64>() / p as f64
                }
            })
            .collect()
    }
}

/// Basis functions evaluated on a grid, stored in banded form.
///
/// Row `ℓ` holds the p+1 values `N_{first[ℓ]+j,p}(ξ_ℓ)`; every other entry
/// of the row is zero.
#[derive(Debug, Clone)]
pub struct BasisMatrix {
    eval_points: Vec<f64>,
    first: Vec<usize>,
    band: Vec<f64>,
    width: usize,
    cols: usize,
}

impl BasisMatrix {
    pub fn rows(&self) -> usize {
        self.eval_points.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn eval_points(&self) -> &[f64] {
        &self.eval_points
    }

    /// First non-zero column and the band values of row `l`.
    pub fn row(&self, l: usize) -> (usize, &[f64]) {
        (self.first[l], &self.band[l * self.width..(l + 1) * self.width])
    }

    pub fn get(&self, l: usize, i: usize) -> f64 {
        let (first, vals) = self.row(l);
        if i >= first && i < first + self.width {
            vals[i - first]
        } else {
            0.0
        }
    }

    /// Dense row-major copy, shape `rows × cols`.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows() * self.cols];
        for l in 0..self.rows() {
            let (first, vals) = self.row(l);
            out[l * self.cols + first..l * self.cols + first + self.width].copy_from_slice(vals);
        }
        out
    }

    /// `B c` evaluated at every grid point.
    pub fn apply(&self, coeffs: &[f64]) -> Vec<f64> {
        (0..self.rows())
            .map(|l| {
                let (first, vals) = self.row(l);
                vals.iter().zip(&coeffs[first..]).map(|(b, c)| b * c).sum()
            })
            .collect()
    }

    /// Gram matrix `BᵀB` (dense, row-major `cols × cols`).
    pub fn gram(&self) -> Vec<f64> {
        let n = self.cols;
        let mut g = vec![0.0; n * n];
        for l in 0..self.rows() {
            let (first, vals) = self.row(l);
            for (a, va) in vals.iter().enumerate() {
                for (b, vb) in vals.iter().enumerate() {
                    g[(first + a) * n + first + b] += va * vb;
                }
            }
        }
        g
    }

    /// `Bᵀ y`.
    pub fn transpose_apply(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (l, yl) in y.iter().enumerate() {
            let (first, vals) = self.row(l);
            for (j, v) in vals.iter().enumerate() {
                out[first + j] += v * yl;
            }
        }
        out
    }
}

/// Evaluates every basis function of `knots` on `grid`.
pub fn basis_matrix(grid: &[f64], knots: &KnotVector) -> Result<BasisMatrix> {
    if grid.is_empty() {
        return Err(Error::TooShort { need: 1, got: 0 });
    }
    let p = knots.degree();
    let n = knots.basis_count();
    let width = p + 1;
    let mut first = Vec::with_capacity(grid.len());
    let mut band = vec![0.0; grid.len() * width];
    for (l, &xi) in grid.iter().enumerate() {
        let s = knots.find_span(xi)?;
        knots.active_basis(s, xi, &mut band[l * width..(l + 1) * width]);
        first.push(s - p);
    }
    Ok(BasisMatrix {
        eval_points: grid.to_vec(),
        first,
        band,
        width,
        cols: n,
    })
}

/// Naive Cox–de Boor recursion on a raw knot slice.
///
/// Works for any non-decreasing `tau` (clamped or not); terms with a zero
/// denominator contribute 0, and `xi` equal to the last knot is assigned to
/// the last non-empty interval.
pub fn cox_de_boor(tau: &[f64], i: usize, p: usize, xi: f64) -> f64 {
    if p == 0 {
        let (a, b) = (tau[i], tau[i + 1]);
        let last = tau[tau.len() - 1];
        if (a <= xi && xi < b) || (xi == last && b == last && a < b) {
            return 1.0;
        }
        return 0.0;
    }
    let mut v = 0.0;
    let d1 = tau[i + p] - tau[i];
    if d1 > 0.0 {
        v += (xi - tau[i]) / d1 * cox_de_boor(tau, i, p - 1, xi);
    }
    let d2 = tau[i + p + 1] - tau[i + 1];
    if d2 > 0.0 {
        v += (tau[i + p + 1] - xi) / d2 * cox_de_boor(tau, i + 1, p - 1, xi);
    }
    v
}

/// `n` evenly spaced points covering `[lo, hi]` with exact endpoints.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            let mut v: Vec<f64> = (0..n).map(|i| lo + step * i as f64).collect();
            v[n - 1] = hi;
            v
        }
    }
}
