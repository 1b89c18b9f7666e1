//! Truncated power series in one variable `t` with matrix or scalar
//! coefficients. Every operation keeps terms up to and including `t^order`.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, FullPivLU};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `c_0 + c_1 t + ... + c_h t^h` with square matrix coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedMatrixSeries {
    coeffs: Vec<DMatrix<f64>>,
}

/// Factorisation of a constant term: Cholesky when it is symmetric positive
/// definite, full-pivot LU otherwise.
enum ConstantFactor {
    Cholesky(Cholesky<f64, Dyn>),
    Lu(FullPivLU<f64, Dyn, Dyn>),
}

impl ConstantFactor {
    fn new(c: &DMatrix<f64>) -> Result<Self> {
        let symmetric = (c - c.transpose()).amax() <= 1e-14 * c.amax();
        if symmetric {
            if let Some(ch) = Cholesky::new(c.clone()) {
                return Ok(Self::Cholesky(ch));
            }
        }
        let lu = FullPivLU::new(c.clone());
        if !lu.is_invertible() {
            return Err(Error::SeriesDegenerate(
                "constant term of the series is singular".into(),
            ));
        }
        Ok(Self::Lu(lu))
    }

    /// `L^{-1} b L^{-T}` for a Cholesky factor (symmetric, same spectrum as
    /// `C^{-1} b`); a plain solve otherwise.
    fn whiten(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Self::Cholesky(ch) => {
                let l = ch.l();
                let half = l.solve_lower_triangular(b).expect("nonsingular factor");
                let w = l
                    .solve_lower_triangular(&half.transpose())
                    .expect("nonsingular factor");
                (&w + w.transpose()) * 0.5
            }
            Self::Lu(_) => self.solve(b),
        }
    }

    fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Self::Cholesky(ch) => ch.solve(b),
            Self::Lu(lu) => lu.solve(b).expect("invertible"),
        }
    }
}

impl TruncatedMatrixSeries {
    pub fn new(coeffs: Vec<DMatrix<f64>>) -> Self {
        assert!(!coeffs.is_empty(), "a series needs at least one coefficient");
        let dim = coeffs[0].nrows();
        assert!(
            coeffs.iter().all(|c| c.nrows() == dim && c.ncols() == dim),
            "coefficients must be square and of equal size"
        );
        Self { coeffs }
    }

    pub fn zero(dim: usize, order: usize) -> Self {
        Self {
            coeffs: vec![DMatrix::zeros(dim, dim); order + 1],
        }
    }

    pub fn identity(dim: usize, order: usize) -> Self {
        let mut s = Self::zero(dim, order);
        s.coeffs[0] = DMatrix::identity(dim, dim);
        s
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.coeffs[0].nrows()
    }

    pub fn coeff(&self, i: usize) -> &DMatrix<f64> {
        &self.coeffs[i]
    }

    pub fn coeffs(&self) -> &[DMatrix<f64>] {
        &self.coeffs
    }

    pub fn truncate(&self, order: usize) -> Self {
        let mut coeffs = self.coeffs.clone();
        coeffs.resize(order + 1, DMatrix::zeros(self.dim(), self.dim()));
        Self { coeffs }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| c.transpose()).collect(),
        }
    }

    /// Left-multiplies every coefficient by a constant matrix.
    pub fn premul(&self, m: &DMatrix<f64>) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| m * c).collect(),
        }
    }

    /// Multiplicative inverse; requires an invertible constant term.
    ///
    /// When `C_0` has a positive diagonal the series is first congruence
    /// scaled to unit diagonal, and each step is a solve against a factor of
    /// `C_0` rather than a product with its inverse.
    pub fn inverse(&self) -> Result<Self> {
        let d = self.equilibration();
        let scaled = self.congruence(&d);
        let c0 = ConstantFactor::new(&scaled.coeffs[0])?;
        let n = self.dim();
        let mut out: Vec<DMatrix<f64>> = Vec::with_capacity(self.coeffs.len());
        out.push(c0.solve(&DMatrix::identity(n, n)));
        for j in 1..self.coeffs.len() {
            let mut acc = DMatrix::zeros(n, n);
            for i in 1..=j {
                acc += &scaled.coeffs[i] * &out[j - i];
            }
            out.push(-c0.solve(&acc));
        }
        Ok(Self { coeffs: out }.congruence(&d))
    }

    /// `diag(C_0)^{-1/2}` when the diagonal is positive, otherwise ones.
    fn equilibration(&self) -> DVector<f64> {
        let diag = self.coeffs[0].diagonal();
        if diag.iter().all(|&v| v > 0.0 && v.is_finite()) {
            diag.map(|v| 1.0 / v.sqrt())
        } else {
            DVector::from_element(self.dim(), 1.0)
        }
    }

    /// `D C_i D` for every coefficient, with `D = diag(d)`.
    fn congruence(&self, d: &DVector<f64>) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .map(|c| DMatrix::from_fn(c.nrows(), c.ncols(), |i, j| d[i] * c[(i, j)] * d[j]))
            .collect();
        Self { coeffs }
    }

    /// Term-by-term derivative; the result has order one less (at least 0).
    pub fn derivative(&self) -> Self {
        if self.coeffs.len() == 1 {
            return Self::zero(self.dim(), 0);
        }
        Self {
            coeffs: self
                .coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(i, c)| c * i as f64)
                .collect(),
        }
    }

    pub fn trace(&self) -> ScalarSeries {
        ScalarSeries::new(self.coeffs.iter().map(|c| c.trace()).collect())
    }

    /// Series of `log det(C_0^{-1} S(t))`, i.e. `tr log(I + C_0^{-1}(S - C_0))`.
    pub fn log_det_ratio(&self) -> Result<ScalarSeries> {
        let scaled = self.congruence(&self.equilibration());
        let c0 = ConstantFactor::new(&scaled.coeffs[0])?;
        let h = self.order();
        let mut nilp = Self {
            coeffs: scaled.coeffs.iter().map(|c| c0.whiten(c)).collect(),
        };
        nilp.coeffs[0] = DMatrix::zeros(self.dim(), self.dim());
        let mut out = ScalarSeries::zero(h);
        let mut power = nilp.clone();
        for j in 1..=h {
            let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
            let tr = power.trace();
            for (o, v) in out.coeffs.iter_mut().zip(tr.coeffs.iter()) {
                *o += sign * v / j as f64;
            }
            power = &power * &nilp;
        }
        Ok(out)
    }

    pub fn evaluate(&self, t: f64) -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(self.dim(), self.dim());
        for c in self.coeffs.iter().rev() {
            acc = acc * t + c;
        }
        acc
    }

    pub fn max_asymmetry(&self) -> f64 {
        self.coeffs
            .iter()
            .map(|c| (c - c.transpose()).amax())
            .fold(0.0, f64::max)
    }
}

impl Add for &TruncatedMatrixSeries {
    type Output = TruncatedMatrixSeries;
    fn add(self, rhs: Self) -> TruncatedMatrixSeries {
        let h = self.order().min(rhs.order());
        TruncatedMatrixSeries {
            coeffs: (0..=h).map(|i| &self.coeffs[i] + &rhs.coeffs[i]).collect(),
        }
    }
}

impl Sub for &TruncatedMatrixSeries {
    type Output = TruncatedMatrixSeries;
    fn sub(self, rhs: Self) -> TruncatedMatrixSeries {
        let h = self.order().min(rhs.order());
        TruncatedMatrixSeries {
            coeffs: (0..=h).map(|i| &self.coeffs[i] - &rhs.coeffs[i]).collect(),
        }
    }
}

impl Mul for &TruncatedMatrixSeries {
    type Output = TruncatedMatrixSeries;
    fn mul(self, rhs: Self) -> TruncatedMatrixSeries {
        let h = self.order().min(rhs.order());
        let dim = self.dim();
        let coeffs = (0..=h)
            .map(|k| {
                let mut acc = DMatrix::zeros(dim, dim);
                for i in 0..=k {
                    acc += &self.coeffs[i] * &rhs.coeffs[k - i];
                }
                acc
            })
            .collect();
        TruncatedMatrixSeries { coeffs }
    }
}

impl Neg for &TruncatedMatrixSeries {
    type Output = TruncatedMatrixSeries;
    fn neg(self) -> TruncatedMatrixSeries {
        self.scale(-1.0)
    }
}

/// Scalar truncated power series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarSeries {
    coeffs: Vec<f64>,
}

impl ScalarSeries {
    pub fn new(coeffs: Vec<f64>) -> Self {
        assert!(!coeffs.is_empty(), "a series needs at least one coefficient");
        Self { coeffs }
    }

    pub fn zero(order: usize) -> Self {
        Self {
            coeffs: vec![0.0; order + 1],
        }
    }

    pub fn one(order: usize) -> Self {
        let mut s = Self::zero(order);
        s.coeffs[0] = 1.0;
        s
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeff(&self, i: usize) -> f64 {
        self.coeffs.get(i).copied().unwrap_or(0.0)
    }

    pub fn truncate(&self, order: usize) -> Self {
        let mut coeffs = self.coeffs.clone();
        coeffs.resize(order + 1, 0.0);
        Self { coeffs }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    pub fn mul(&self, rhs: &Self) -> Self {
        let h = self.order().min(rhs.order());
        Self {
            coeffs: (0..=h)
                .map(|k| (0..=k).map(|i| self.coeffs[i] * rhs.coeffs[k - i]).sum())
                .collect(),
        }
    }

    pub fn add(&self, rhs: &Self) -> Self {
        let h = self.order().min(rhs.order());
        Self {
            coeffs: (0..=h).map(|k| self.coeffs[k] + rhs.coeffs[k]).collect(),
        }
    }

    /// `exp(f)` via `g' = f' g`.
    pub fn exp(&self) -> Self {
        let h = self.order();
        let mut g = vec![0.0; h + 1];
        g[0] = self.coeffs[0].exp();
        for n in 1..=h {
            let s: f64 = (1..=n)
                .map(|k| k as f64 * self.coeffs[k] * g[n - k])
                .sum();
            g[n] = s / n as f64;
        }
        Self { coeffs: g }
    }

    /// `log(f)` for `f_0 > 0`.
    pub fn ln(&self) -> Result<Self> {
        let f0 = self.coeffs[0];
        if f0 <= 0.0 {
            return Err(Error::InvalidArgument(
                "log of a series needs a positive constant term".into(),
            ));
        }
        let h = self.order();
        let mut g = vec![0.0; h + 1];
        g[0] = f0.ln();
        for n in 1..=h {
            let s: f64 = (1..n)
                .map(|k| k as f64 * g[k] * self.coeffs[n - k])
                .sum();
            g[n] = (self.coeffs[n] - s / n as f64) / f0;
        }
        Ok(Self { coeffs: g })
    }

    /// `f^r` for `f_0 > 0`, by Miller's recurrence.
    pub fn powf(&self, r: f64) -> Result<Self> {
        let f0 = self.coeffs[0];
        if f0 <= 0.0 {
            return Err(Error::InvalidArgument(
                "real power of a series needs a positive constant term".into(),
            ));
        }
        let h = self.order();
        let mut g = vec![0.0; h + 1];
        g[0] = f0.powf(r);
        for n in 1..=h {
            let s: f64 = (1..=n)
                .map(|k| ((r + 1.0) * k as f64 - n as f64) * self.coeffs[k] * g[n - k])
                .sum();
            g[n] = s / (n as f64 * f0);
        }
        Ok(Self { coeffs: g })
    }

    pub fn evaluate(&self, t: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }
}
