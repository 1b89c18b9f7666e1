//! The family `Q(t) = -d/dt (B^T Γ_t^{-1} B)` and its Laurent invariants
//! `Q(t) = I / t^2 + Σ_{i=0}^h Q^(i) t^i + O(t^{h+1})`.

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{Error, Result};
use crate::expm::matrix_exponential;
use crate::gramian::{series_from_frame, SolveRoute};
use crate::extrapolate::log_spaced;
use crate::model::Model;

pub const DEFAULT_CURVATURE_ORDER: usize = 4;

/// `I` and `Q^(0..=h)`, symmetric `k x k` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureExpansion {
    pub order: usize,
    pub leading: DMatrix<f64>,
    pub q: Vec<DMatrix<f64>>,
}

impl CurvatureExpansion {
    pub fn trace_leading(&self) -> f64 {
        self.leading.trace()
    }

    pub fn q_traces(&self) -> Vec<f64> {
        self.q.iter().map(|m| m.trace()).collect()
    }

    /// Largest `|M - M^T|` entry relative to the largest `|M|` entry, over
    /// `I` and every `Q^(i)`.
    pub fn max_asymmetry(&self) -> f64 {
        std::iter::once(&self.leading)
            .chain(self.q.iter())
            .map(|m| (m - m.transpose()).amax() / m.amax().max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max)
    }

    /// `I / t^2 + Σ Q^(i) t^i`.
    pub fn evaluate(&self, t: f64) -> DMatrix<f64> {
        let mut out = &self.leading / (t * t);
        for (i, qi) in self.q.iter().enumerate() {
            out += qi * t.powi(i as i32);
        }
        out
    }
}

/// `Q(t)` at a single time.
///
/// For `t` below the small-time threshold, `Q(t) = t^{-2} b^T M^{-1} W W^T M^{-1} b`
/// with the rescaled Gramian `M(t)` and rescaled velocity `W(t)`; otherwise
/// `B^T Γ^{-1} V V^T Γ^{-1} B` with `V = e^{-tA} B`.
pub fn q_of_t(model: &Model, t: f64) -> Result<DMatrix<f64>> {
    let factored = model.factor(t)?;
    let frame = model.frame();
    let b = frame.b();
    let k = b.ncols();
    let solve_cols = |m: &DMatrix<f64>, f: &dyn Fn(&DVector<f64>) -> DVector<f64>| {
        let cols: Vec<DVector<f64>> = m.column_iter().map(|c| f(&c.into_owned())).collect();
        DMatrix::from_columns(&cols)
    };
    let q = match factored.route {
        SolveRoute::SmallTimeSeries => {
            let inv = factored.rescaled_inverse();
            let w = frame.rescaled_velocity_at(t);
            let z = (&inv * b).transpose() * w;
            &z * z.transpose() / (t * t)
        }
        SolveRoute::Direct => {
            let v = frame.basis().transpose()
                * matrix_exponential(&(model.system().a() * -t))?
                * model.system().b();
            let z = solve_cols(b, &|c| factored.solve_adapted(c));
            let s = z.transpose() * v;
            &s * s.transpose()
        }
    };
    debug_assert_eq!(q.nrows(), k);
    Ok((&q + q.transpose()) * 0.5)
}

/// Laurent invariants by series arithmetic on the rescaled Gramian.
///
/// In adapted coordinates `B^T Γ_t^{-1} B = t^{-1} b^T M(t)^{-1} b`, so with
/// `R_q = b^T [M^{-1}]_q b` the derivative gives `I = R_0` and
/// `Q^(i) = -(i + 1) R_{i+2}`.
pub fn laurent_expansion(model: &Model, order: usize) -> Result<CurvatureExpansion> {
    let series = series_from_frame(model.frame(), order + 2)?;
    let inv = series.series.inverse()?;
    let b = model.frame().b();
    let r: Vec<DMatrix<f64>> = inv
        .coeffs()
        .iter()
        .map(|c| b.transpose() * c * b)
        .collect();
    let leading = r[0].clone();
    let q = (0..=order)
        .map(|i| &r[i + 2] * -((i + 1) as f64))
        .collect();
    Ok(CurvatureExpansion {
        order,
        leading,
        q,
    })
}

/// Least-squares estimate of the Laurent invariants from samples of `Q(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleFit {
    pub expansion: CurvatureExpansion,
    /// Fitted `1/t` coefficient, which should vanish.
    pub inverse_t_coefficient: DMatrix<f64>,
    /// Largest absolute residual of `t^2 Q(t)` over the grid.
    pub max_residual: f64,
    /// Unreported tail terms fitted beyond `t^{h+2}`.
    pub extra_terms: usize,
    /// Change in `Q^(0)`, `Q^(1)` when one more tail term is fitted.
    pub stability: f64,
}

/// Largest number of tail terms tried by [`finite_difference_oracle`].
pub const ORACLE_MAX_EXTRA_TERMS: usize = 8;

/// Relative departure of `t^2 Q(t)` from its small-time value that bounds
/// the top of [`oracle_grid`].
pub const ORACLE_GRID_DEPARTURE: f64 = 1e-2;

/// Geometric grid of `count` points spanning two decades below the time at
/// which `t^2 Q(t)` has moved by [`ORACLE_GRID_DEPARTURE`] from its value at
/// `1e-4`, capped at `0.2`.
pub fn oracle_grid(model: &Model, count: usize) -> Result<Vec<f64>> {
    let t0 = 1e-4;
    let base = q_of_t(model, t0)? * (t0 * t0);
    let scale = base.amax().max(f64::MIN_POSITIVE);
    let mut hi = 0.2;
    while hi > 1e-3 {
        let d = (q_of_t(model, hi)? * (hi * hi) - &base).amax() / scale;
        if d <= ORACLE_GRID_DEPARTURE {
            break;
        }
        hi /= 1.25;
    }
    Ok(log_spaced(hi / 100.0, hi, count))
}

/// Fits `t^2 Q(t)` entrywise by a polynomial on `t_grid` and reads off the
/// coefficients of `1, t^2, ..., t^{h+2}`.
///
/// The number of unreported tail terms is chosen where adding one more
/// changes `Q^(0)` and `Q^(1)` the least.
pub fn finite_difference_oracle(model: &Model, order: usize, t_grid: &[f64]) -> Result<OracleFit> {
    let samples = oracle_samples(model, order, t_grid)?;
    let fits: Vec<OracleFit> = (0..=ORACLE_MAX_EXTRA_TERMS)
        .map_while(|extra| fit_samples(order, t_grid, &samples, extra).ok())
        .collect();
    if fits.is_empty() {
        return fit_samples(order, t_grid, &samples, 0);
    }
    if fits.len() == 1 {
        return Ok(fits.into_iter().next().unwrap());
    }
    let mut best = 0;
    let mut best_change = f64::INFINITY;
    for i in 0..fits.len() - 1 {
        let (a, b) = (&fits[i].expansion, &fits[i + 1].expansion);
        let change = (0..a.q.len().min(2))
            .map(|j| (&a.q[j] - &b.q[j]).amax())
            .fold(0.0, f64::max);
        if change < best_change {
            best = i;
            best_change = change;
        }
    }
    let mut fit = fits.into_iter().nth(best).unwrap();
    fit.stability = best_change;
    Ok(fit)
}

/// [`finite_difference_oracle`] with a fixed number of tail terms.
pub fn finite_difference_oracle_with(
    model: &Model,
    order: usize,
    t_grid: &[f64],
    extra: usize,
) -> Result<OracleFit> {
    let samples = oracle_samples(model, order, t_grid)?;
    fit_samples(order, t_grid, &samples, extra)
}

fn oracle_samples(model: &Model, order: usize, t_grid: &[f64]) -> Result<Vec<DMatrix<f64>>> {
    let needed = order + 3;
    if t_grid.len() < needed {
        return Err(Error::InvalidArgument(format!(
            "oracle needs at least {needed} grid points, got {}",
            t_grid.len()
        )));
    }
    t_grid
        .iter()
        .map(|&t| q_of_t(model, t).map(|q| q * (t * t)))
        .collect()
}

fn fit_samples(
    order: usize,
    t_grid: &[f64],
    samples: &[DMatrix<f64>],
    extra: usize,
) -> Result<OracleFit> {
    let unknowns = order + 3 + extra;
    if unknowns > t_grid.len() {
        return Err(Error::FitIllConditioned(format!(
            "{unknowns} unknowns for {} samples",
            t_grid.len()
        )));
    }
    let k = samples[0].nrows();
    let t_scale = t_grid.iter().copied().fold(0.0, f64::max);
    let mut vander = DMatrix::zeros(t_grid.len(), unknowns);
    for (r, &t) in t_grid.iter().enumerate() {
        let s = t / t_scale;
        for c in 0..unknowns {
            vander[(r, c)] = s.powi(c as i32);
        }
    }
    let svd = SVD::new(vander.clone(), true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-14 * smax) {
        return Err(Error::FitIllConditioned(format!(
            "Vandermonde singular values span [{smin:e}, {smax:e}]"
        )));
    }
    let mut rhs = DMatrix::zeros(t_grid.len(), k * k);
    for (r, s) in samples.iter().enumerate() {
        for i in 0..k {
            for j in 0..k {
                rhs[(r, i * k + j)] = s[(i, j)];
            }
        }
    }
    let coef = svd
        .solve(&rhs, 0.0)
        .map_err(|e| Error::FitIllConditioned(e.to_string()))?;
    let max_residual = (&vander * &coef - &rhs).amax();
    let unpack = |c: usize| {
        let scale = t_scale.powi(-(c as i32));
        DMatrix::from_fn(k, k, |i, j| coef[(c, i * k + j)] * scale)
    };
    Ok(OracleFit {
        expansion: CurvatureExpansion {
            order,
            leading: unpack(0),
            q: (0..=order).map(|i| unpack(i + 2)).collect(),
        },
        inverse_t_coefficient: unpack(1),
        max_residual,
        extra_terms: extra,
        stability: f64::NAN,
    })
}
