//! Exact transition density of `dξ = (Aξ + α) dt + B dw` and its small-time
//! asymptotics on and off the diagonal.
//!
//! Densities are carried in log space: at `t = 1e-3` the deep-drift kernel is
//! of order `e^{-6000}`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};

use crate::curvature::laurent_expansion;
use crate::error::{Error, Result};
use crate::expm::matrix_exponential;
use crate::extrapolate::{geometric_grid, richardson};
use crate::gramian::{det_covariance_expansion, series_from_frame, FactoredGramian, SolveRoute};
use crate::model::Model;
use crate::series::ScalarSeries;
use crate::system::{drift_at, LinearSystem, Regime};

/// First grid time for pole-coefficient extrapolation.
const RATE_T0: f64 = 0.04;
const RATE_POINTS: usize = 8;
/// Largest relative disagreement allowed between the last two extrapolants.
const RATE_REL_TOL: f64 = 1e-3;

fn check_point(sys: &LinearSystem, v: &DVector<f64>) -> Result<()> {
    if v.len() != sys.dim() {
        return Err(Error::DimensionMismatch(format!(
            "point has {} entries, system dimension is {}",
            v.len(),
            sys.dim()
        )));
    }
    Ok(())
}

/// `∫_0^t e^{-sA} ds v` from the exponential of `t [[-A, v], [0, 0]]`.
pub fn flow_integral(a: &DMatrix<f64>, v: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    let n = a.nrows();
    let mut big = DMatrix::zeros(n + 1, n + 1);
    big.view_mut((0, 0), (n, n)).copy_from(&(-a));
    big.view_mut((0, n), (n, 1)).copy_from(v);
    let e = matrix_exponential(&(big * t))?;
    Ok(e.view((0, n), (n, 1)).column(0).into_owned())
}

/// `∫_0^t e^{-sA} ds α` (zero when the system has no offset).
pub fn drift_integral(sys: &LinearSystem, t: f64) -> Result<DVector<f64>> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::NonPositiveTime(t));
    }
    flow_integral(sys.a(), &sys.alpha_or_zero(), t)
}

/// `E[ξ_t | ξ_0 = x] = e^{tA}(x + ∫_0^t e^{-sA} ds α)`.
pub fn transition_mean(sys: &LinearSystem, x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    check_point(sys, x)?;
    Ok(matrix_exponential(&(sys.a() * t))? * (x + drift_integral(sys, t)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelValue {
    pub t: f64,
    pub log_density: f64,
    /// `S_t(x, y) = ½ r^T Γ_t^{-1} r`, minus the exponent of the Gaussian.
    pub action: f64,
    pub log_det_covariance: f64,
    /// `-n/2 log 2π - ½ log det D_t`, so that `log p = log_normalizer - action`.
    pub log_normalizer: f64,
    pub route: SolveRoute,
}

impl KernelValue {
    pub fn density(&self) -> f64 {
        self.log_density.exp()
    }
}

/// `r = e^{-tA}(y - x) - ∫_0^t e^{-sA} ds (Ax + α)` in adapted coordinates,
/// so that `y - mean = e^{tA} r`.
fn pulled_back_residual(
    model: &Model,
    factored: &FactoredGramian,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<DVector<f64>> {
    let sys = model.system();
    let frame = model.frame();
    let t = factored.t;
    let v = drift_at(sys, x);
    match factored.route {
        SolveRoute::SmallTimeSeries => {
            let dv = frame.snap(&frame.to_adapted(&v));
            Ok(frame.flow_back(&frame.to_adapted(&(y - x)), t) - frame.flow_back_integral(&dv, t))
        }
        SolveRoute::Direct => {
            let back = matrix_exponential(&(sys.a() * -t))? * (y - x);
            Ok(frame.to_adapted(&(back - flow_integral(sys.a(), &v, t)?)))
        }
    }
}

/// Log of the Gaussian transition density `p(t, x, y)` with its pieces.
pub fn log_kernel(model: &Model, t: f64, x: &DVector<f64>, y: &DVector<f64>) -> Result<KernelValue> {
    let sys = model.system();
    check_point(sys, x)?;
    check_point(sys, y)?;
    let factored = model.factor(t)?;
    let r = pulled_back_residual(model, &factored, x, y)?;
    let action = 0.5 * factored.quad_form_adapted(&r);
    let log_det_covariance = 2.0 * t * sys.trace_a() + factored.log_det_gramian();
    let n = sys.dim() as f64;
    let log_normalizer = -0.5 * n * (2.0 * PI).ln() - 0.5 * log_det_covariance;
    Ok(KernelValue {
        t,
        log_density: log_normalizer - action,
        action,
        log_det_covariance,
        log_normalizer,
        route: factored.route,
    })
}

pub fn exact_kernel(model: &Model, t: f64, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    Ok(log_kernel(model, t, x, y)?.density())
}

/// `-n/2 log 2π - ½ log c0 - N/2 log t`.
fn log_prefactor(dim: usize, exponent: usize, c0: f64, t: f64) -> f64 {
    -0.5 * dim as f64 * (2.0 * PI).ln() - 0.5 * c0.ln() - 0.5 * exponent as f64 * t.ln()
}

/// The point-independent coefficients `a_1..a_h` of the diagonal expansion,
/// computed two ways.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumCoefficients {
    /// From `exp(-½[tr A t + Σ (-1)^{i+1} tr Q^(i) t^{i+2} / ((i+1)(i+2))])`.
    pub from_invariants: Vec<f64>,
    /// From `(det D_t / (c0 t^N))^{-1/2}`.
    pub from_determinant: Vec<f64>,
    pub trace_q: Vec<f64>,
}

impl EquilibriumCoefficients {
    /// Largest `|a - b| / max(1, |a|)` between the two routes.
    pub fn max_disagreement(&self) -> f64 {
        self.from_invariants
            .iter()
            .zip(&self.from_determinant)
            .map(|(a, b)| (a - b).abs() / a.abs().max(1.0))
            .fold(0.0, f64::max)
    }
}

pub fn equilibrium_coefficients(model: &Model, order: usize) -> Result<EquilibriumCoefficients> {
    let tr_a = model.system().trace_a();
    let q_order = order.saturating_sub(2);
    let trace_q = laurent_expansion(model, q_order)?.q_traces();
    if order == 0 {
        return Ok(EquilibriumCoefficients {
            from_invariants: vec![],
            from_determinant: vec![],
            trace_q,
        });
    }
    let mut log = vec![0.0; order + 1];
    log[1] = tr_a;
    for i in 0..=q_order {
        if i + 2 > order {
            break;
        }
        let sign = if i % 2 == 0 { -1.0 } else { 1.0 };
        log[i + 2] = sign * trace_q[i] / ((i + 1) * (i + 2)) as f64;
    }
    let inv = ScalarSeries::new(log).scale(-0.5).exp();

    let series = series_from_frame(model.frame(), order.max(2))?;
    let det = det_covariance_expansion(&series, tr_a, order)?.powf(-0.5)?;
    Ok(EquilibriumCoefficients {
        from_invariants: inv.coeffs()[1..].to_vec(),
        from_determinant: det.coeffs()[1..].to_vec(),
        trace_q,
    })
}

/// Extrapolated pole coefficient `C` of the deep-drift regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub rate: f64,
    /// Coefficient `C_1` in `t^{2i-3} S_t = C + C_1 t + ...`.
    pub correction: f64,
    pub error_estimate: f64,
    pub grid: Vec<f64>,
    pub samples: Vec<f64>,
}

/// `C = lim t^{2i-3} S_t(x0, x0)` by Richardson extrapolation on a halving grid.
pub fn pole_rate(model: &Model, x0: &DVector<f64>, level: usize) -> Result<RateEstimate> {
    if level < 2 {
        return Err(Error::InvalidArgument(format!(
            "pole rate needs a drift level >= 2, got {level}"
        )));
    }
    let grid = geometric_grid(RATE_T0, 2.0, RATE_POINTS);
    let power = (2 * level - 3) as i32;
    let samples: Vec<f64> = grid
        .iter()
        .map(|&t| log_kernel(model, t, x0, x0).map(|k| k.action * t.powi(power)))
        .collect::<Result<_>>()?;
    let ex = richardson(&grid, &samples);
    let rate = ex.estimate;
    let n = ex.diagonal.len();
    let rel = (ex.diagonal[n - 1] - ex.diagonal[n - 2]).abs() / rate.abs();
    if !(rate > 0.0) || !(rel <= RATE_REL_TOL) {
        return Err(Error::ExtrapolationUnstable(format!(
            "pole coefficient estimates {:?}",
            ex.diagonal
        )));
    }
    let shifted: Vec<f64> = grid
        .iter()
        .zip(&samples)
        .map(|(t, s)| (s - rate) / t)
        .collect();
    let correction = richardson(&grid[..n - 2], &shifted[..n - 2]).estimate;
    Ok(RateEstimate {
        rate,
        correction,
        error_estimate: ex.error_estimate,
        grid,
        samples,
    })
}

/// `|y|^2` for the minimum-norm `y` with `By = v`, i.e. `v^T (BB^T)^+ v`.
pub fn min_norm_control_sq(sys: &LinearSystem, v: &DVector<f64>) -> f64 {
    let svd = SVD::new(sys.b().clone(), true, true);
    let y = svd
        .solve(v, 0.0)
        .expect("SVD was computed with both factors");
    y.norm_squared()
}

/// Small-time behaviour of `p(t, x0, x0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelAsymptotics {
    pub regime: Regime,
    pub dim: usize,
    pub exponent: usize,
    pub c0: f64,
    /// `a_1..a_h` (equilibrium regime only).
    pub a: Vec<f64>,
    /// Same coefficients from the determinant expansion.
    pub a_from_determinant: Vec<f64>,
    /// `tr A / 2 + |y|^2 / 2` (drift in `E_1`).
    pub first_order: Option<f64>,
    /// Exponential rate `C` (drift in `E_i`, `i >= 2`).
    pub rate: Option<RateEstimate>,
}

impl KernelAsymptotics {
    pub fn log_prefactor(&self, t: f64) -> f64 {
        log_prefactor(self.dim, self.exponent, self.c0, t)
    }

    /// Log of the leading-order asymptotic density.
    pub fn log_density(&self, t: f64) -> f64 {
        let rest = match self.regime {
            Regime::Equilibrium => {
                let mut s = 1.0;
                for (i, ai) in self.a.iter().enumerate() {
                    s += ai * t.powi(i as i32 + 1);
                }
                s.ln()
            }
            Regime::Level(1) => (1.0 - self.first_order.unwrap_or(0.0) * t).ln(),
            Regime::Level(i) => {
                let c = self.rate.as_ref().map_or(0.0, |r| r.rate);
                -c / t.powi(2 * i as i32 - 3)
            }
        };
        self.log_prefactor(t) + rest
    }

    /// `p · (2π)^{n/2} √c0 · t^{N/2}` from a log density.
    pub fn normalized(&self, log_density: f64, t: f64) -> f64 {
        (log_density - self.log_prefactor(t)).exp()
    }
}

pub fn diagonal_asymptotics(model: &Model, x0: &DVector<f64>, order: usize) -> Result<KernelAsymptotics> {
    let sys = model.system();
    let regime = model.classify(x0)?;
    let series = series_from_frame(model.frame(), 2)?;
    let mut out = KernelAsymptotics {
        regime,
        dim: sys.dim(),
        exponent: model.exponent(),
        c0: series.c0,
        a: vec![],
        a_from_determinant: vec![],
        first_order: None,
        rate: None,
    };
    match regime {
        Regime::Equilibrium => {
            let coeffs = equilibrium_coefficients(model, order)?;
            out.a = coeffs.from_invariants;
            out.a_from_determinant = coeffs.from_determinant;
        }
        Regime::Level(1) => {
            let v = drift_at(sys, x0);
            out.first_order = Some(0.5 * sys.trace_a() + 0.5 * min_norm_control_sq(sys, &v));
        }
        Regime::Level(i) => out.rate = Some(pole_rate(model, x0, i)?),
    }
    Ok(out)
}

/// `p(t,x,y) ~ t^{-N/2} (2π)^{-n/2} c0^{-1/2} e^{-S_t(x,y)} Σ a_i t^i`.
#[derive(Debug, Clone)]
pub struct OffDiagonalAsymptotics {
    model: Model,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub exponent: usize,
    pub c0: f64,
    /// `a_0 = 1, a_1, ..., a_h`.
    pub a: Vec<f64>,
}

impl OffDiagonalAsymptotics {
    pub fn action(&self, t: f64) -> Result<f64> {
        Ok(log_kernel(&self.model, t, &self.x, &self.y)?.action)
    }

    pub fn series(&self, t: f64) -> f64 {
        self.a.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }

    pub fn log_density(&self, t: f64) -> Result<f64> {
        let lp = log_prefactor(self.model.dim(), self.exponent, self.c0, t);
        Ok(lp - self.action(t)? + self.series(t).ln())
    }

    /// `p e^{S_t} (2π)^{n/2} √c0 t^{N/2} - Σ a_i t^i`.
    ///
    /// `log p + S_t` is taken as the Gaussian normaliser rather than formed by
    /// adding back `S_t`, which would cancel `O(t^{-(2m-1)})` digits.
    pub fn normalized_residual(&self, t: f64) -> Result<f64> {
        let k = log_kernel(&self.model, t, &self.x, &self.y)?;
        let lp = log_prefactor(self.model.dim(), self.exponent, self.c0, t);
        Ok((k.log_normalizer - lp).exp() - self.series(t))
    }
}

pub fn offdiagonal_asymptotics(
    model: &Model,
    x: &DVector<f64>,
    y: &DVector<f64>,
    order: usize,
) -> Result<OffDiagonalAsymptotics> {
    check_point(model.system(), x)?;
    check_point(model.system(), y)?;
    let coeffs = equilibrium_coefficients(model, order)?;
    let series = series_from_frame(model.frame(), 2)?;
    let mut a = vec![1.0];
    a.extend(coeffs.from_invariants);
    Ok(OffDiagonalAsymptotics {
        model: model.clone(),
        x: x.clone(),
        y: y.clone(),
        exponent: model.exponent(),
        c0: series.c0,
        a,
    })
}
