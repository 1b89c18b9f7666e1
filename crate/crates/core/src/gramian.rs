//! Controllability Gramian `Γ_t = ∫_0^t e^{-τA} B B^T e^{-τA^T} dτ`, the
//! covariance `D_t = e^{tA} Γ_t e^{tA^T}`, and the rescaled series
//! `Γ_t = J_√t (X + tY + t^2 M_2 + ...) J_√t` in adapted coordinates.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::expm::{matrix_exponential, one_norm};
use crate::frame::AdaptedFrame;
use crate::quadrature::integrate_matrix;
use crate::series::{ScalarSeries, TruncatedMatrixSeries};
use crate::system::{Filtration, LinearSystem};

/// Below this time every inverse of `Γ_t` goes through the rescaled series.
pub const SMALL_TIME: f64 = 0.05;

/// The series route is also used above `SMALL_TIME` while `t ||Ã||_1` stays
/// below this, where the Taylor sum has no significant cancellation and the
/// dense Gramian of a long chain is still too ill-conditioned to rescale.
pub const SERIES_REACH: f64 = 1.0;

/// Default truncation depth of the rescaled series.
pub const DEFAULT_SERIES_ORDER: usize = 8;

fn check_time(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveTime(t))
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// `Γ_t` for any real `t` (the integral with a possibly negative upper limit).
///
/// Uses the block exponential of `t [[A, BB^T], [0, -A^T]]`, whose upper
/// right block is `e^{tA} Γ_t`.
pub fn gramian_signed(sys: &LinearSystem, t: f64) -> Result<DMatrix<f64>> {
    let n = sys.dim();
    let bbt = sys.b() * sys.b().transpose();
    let mut big = DMatrix::zeros(2 * n, 2 * n);
    big.view_mut((0, 0), (n, n)).copy_from(sys.a());
    big.view_mut((0, n), (n, n)).copy_from(&bbt);
    big.view_mut((n, n), (n, n)).copy_from(&(-sys.a().transpose()));
    let e = matrix_exponential(&(big * t))?;
    let upper = e.view((0, n), (n, n)).into_owned();
    let lower = e.view((n, n), (n, n)).into_owned();
    Ok(symmetrize(lower.transpose() * upper))
}

pub fn gramian(sys: &LinearSystem, t: f64) -> Result<DMatrix<f64>> {
    check_time(t)?;
    gramian_signed(sys, t)
}

/// `Γ_{-t}`, so that `covariance(t) = -gramian_with_negated_time(t)`.
pub fn gramian_with_negated_time(sys: &LinearSystem, t: f64) -> Result<DMatrix<f64>> {
    check_time(t)?;
    gramian_signed(sys, -t)
}

/// `Γ_t` by adaptive Gauss–Kronrod quadrature of the integrand.
pub fn gramian_quadrature(sys: &LinearSystem, t: f64, rel_tol: f64) -> Result<DMatrix<f64>> {
    check_time(t)?;
    let neg_a = -sys.a();
    let b = sys.b().clone();
    let g = integrate_matrix(
        |tau| {
            let v = matrix_exponential(&(&neg_a * tau)).expect("finite input") * &b;
            &v * v.transpose()
        },
        0.0,
        t,
        rel_tol,
    );
    Ok(symmetrize(g))
}

pub fn covariance(sys: &LinearSystem, t: f64) -> Result<DMatrix<f64>> {
    check_time(t)?;
    let e = matrix_exponential(&(sys.a() * t))?;
    let g = gramian_signed(sys, t)?;
    Ok(symmetrize(&e * g * e.transpose()))
}

/// Rescaled Taylor coefficients of `Γ_t` in adapted coordinates.
#[derive(Debug, Clone)]
pub struct GramianSeries {
    pub order: usize,
    /// `M(t) = M_0 + t M_1 + ...`, with `M_0 = X` and `M_1 = Y`.
    pub series: TruncatedMatrixSeries,
    /// `det X`.
    pub c0: f64,
    /// Entry `j` of `J_√t` is `√t^{e_j}` with `e_j = 2i - 1` on level `i`.
    pub scaling_exponents: Vec<usize>,
}

impl GramianSeries {
    pub fn x(&self) -> &DMatrix<f64> {
        self.series.coeff(0)
    }

    pub fn y(&self) -> &DMatrix<f64> {
        self.series.coeff(1)
    }

    /// `tr(X^{-1} Y)`, which equals `-tr A`.
    pub fn trace_xinv_y(&self) -> Result<f64> {
        let chol = Cholesky::new(self.x().clone()).ok_or_else(|| {
            Error::SeriesDegenerate("X is not positive definite".into())
        })?;
        Ok(chol.solve(self.y()).trace())
    }

    /// Reconstructs `Γ_t` (original coordinates) from the truncated series.
    pub fn reconstruct(&self, basis: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
        let mut m = self.series.evaluate(t);
        for (i, &ei) in self.scaling_exponents.iter().enumerate() {
            for (j, &ej) in self.scaling_exponents.iter().enumerate() {
                m[(i, j)] *= t.powf((ei + ej) as f64 / 2.0);
            }
        }
        basis * m * basis.transpose()
    }
}

pub fn rescaled_series(
    sys: &LinearSystem,
    filtration: &Filtration,
    order: usize,
) -> Result<GramianSeries> {
    let frame = AdaptedFrame::new(sys, filtration);
    series_from_frame(&frame, order)
}

pub(crate) fn series_from_frame(frame: &AdaptedFrame, order: usize) -> Result<GramianSeries> {
    if order < 2 {
        return Err(Error::InvalidArgument(format!(
            "rescaled series needs order >= 2, got {order}"
        )));
    }
    let g = frame.gramian_taylor(order + 2 * frame.step() - 1);
    let coeffs: Vec<DMatrix<f64>> = (0..=order)
        .map(|q| symmetrize(frame.rescaled_coefficient(&g, q)))
        .collect();
    let x = coeffs[0].clone();
    let chol = Cholesky::new(x).ok_or_else(|| {
        Error::SeriesDegenerate("leading coefficient X is not positive definite".into())
    })?;
    let c0 = chol.determinant();
    if !(c0 > 0.0) {
        return Err(Error::SeriesDegenerate(format!("det X = {c0}")));
    }
    Ok(GramianSeries {
        order,
        series: TruncatedMatrixSeries::new(coeffs),
        c0,
        scaling_exponents: frame.levels().iter().map(|l| 2 * l - 1).collect(),
    })
}

/// Coefficients `[1, e_1, ..., e_h]` of `det D_t = c_0 t^N (1 + e_1 t + ...)`.
///
/// `det D_t = e^{2t tr A} t^N det M(t)`, and `log det(X^{-1} M(t))` comes from
/// the trace of the logarithm series.
pub fn det_covariance_expansion(
    series: &GramianSeries,
    tr_a: f64,
    order: usize,
) -> Result<ScalarSeries> {
    if order > series.order {
        return Err(Error::InvalidArgument(format!(
            "expansion order {order} exceeds series order {}",
            series.order
        )));
    }
    let mut log = series.series.truncate(order).log_det_ratio()?;
    let mut c = log.coeffs().to_vec();
    if order >= 1 {
        c[1] += 2.0 * tr_a;
    }
    log = ScalarSeries::new(c);
    Ok(log.exp())
}

/// Which evaluation path produced a factored Gramian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveRoute {
    /// `M(t)` summed from the structured Taylor coefficients; used for
    /// `t < SMALL_TIME` and while `t ||Ã||_1 <= SERIES_REACH`.
    SmallTimeSeries,
    /// Block exponential, then rescaled before factorisation.
    Direct,
}

pub fn preferred_route(frame: &AdaptedFrame, t: f64) -> SolveRoute {
    if t < SMALL_TIME || t * one_norm(frame.a()) <= SERIES_REACH {
        SolveRoute::SmallTimeSeries
    } else {
        SolveRoute::Direct
    }
}

/// Cholesky factorisation of the rescaled Gramian `M(t) = J^{-1} P^T Γ_t P J^{-1}`.
#[derive(Debug, Clone)]
pub struct FactoredGramian {
    pub t: f64,
    pub route: SolveRoute,
    levels: Vec<usize>,
    chol: Cholesky<f64, Dyn>,
    exponent: usize,
}

impl FactoredGramian {
    pub fn new(sys: &LinearSystem, frame: &AdaptedFrame, t: f64) -> Result<Self> {
        Self::with_route(sys, frame, t, preferred_route(frame, t))
    }

    pub fn with_route(
        sys: &LinearSystem,
        frame: &AdaptedFrame,
        t: f64,
        route: SolveRoute,
    ) -> Result<Self> {
        check_time(t)?;
        let levels = frame.levels().to_vec();
        let (m, route) = if route == SolveRoute::SmallTimeSeries {
            (frame.rescaled_gramian_at(t), SolveRoute::SmallTimeSeries)
        } else {
            let g = gramian(sys, t)?;
            let mut m = frame.basis().transpose() * g * frame.basis();
            for (i, &li) in levels.iter().enumerate() {
                for (j, &lj) in levels.iter().enumerate() {
                    m[(i, j)] *= t.powi(1 - (li + lj) as i32);
                }
            }
            (symmetrize(m), SolveRoute::Direct)
        };
        let chol = Cholesky::new(m).ok_or(Error::NotPositiveDefinite)?;
        let exponent = levels.iter().map(|l| 2 * l - 1).sum();
        Ok(Self {
            t,
            route,
            levels,
            chol,
            exponent,
        })
    }

    fn scale_inv(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v.clone();
        for (i, l) in self.levels.iter().enumerate() {
            out[i] *= self.t.powf(-(2.0 * *l as f64 - 1.0) / 2.0);
        }
        out
    }

    /// `Γ̃_t^{-1} r` for an adapted-coordinate vector `r`.
    pub fn solve_adapted(&self, r: &DVector<f64>) -> DVector<f64> {
        self.scale_inv(&self.chol.solve(&self.scale_inv(r)))
    }

    /// `r^T Γ̃_t^{-1} r` for an adapted-coordinate vector `r`.
    pub fn quad_form_adapted(&self, r: &DVector<f64>) -> f64 {
        let z = self.scale_inv(r);
        let l = self.chol.l();
        let w = l
            .solve_lower_triangular(&z)
            .expect("Cholesky factor is nonsingular");
        w.norm_squared()
    }

    /// `log det M(t)`.
    pub fn log_det_rescaled(&self) -> f64 {
        2.0 * self.chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// `log det Γ_t = N log t + log det M(t)`.
    pub fn log_det_gramian(&self) -> f64 {
        self.exponent as f64 * self.t.ln() + self.log_det_rescaled()
    }

    pub fn rescaled_inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{build_filtration, validate_system};
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    fn double_integrator() -> LinearSystem {
        validate_system(dmatrix![0.0, 0.0; 1.0, 0.0], dmatrix![1.0; 0.0], None).unwrap()
    }

    fn ou() -> LinearSystem {
        validate_system(dmatrix![1.0], dmatrix![1.0], None).unwrap()
    }

    #[test]
    fn double_integrator_gramian_at_one() {
        // e^{-τA}B = (1, -τ): ∫ [[1, -τ], [-τ, τ^2]] dτ
        let g = gramian(&double_integrator(), 1.0).unwrap();
        assert_relative_eq!(g, dmatrix![1.0, -0.5; -0.5, 1.0 / 3.0], epsilon = 1e-15);
    }

    #[test]
    fn elliptic_gramian_is_t_identity() {
        let sys = validate_system(DMatrix::zeros(3, 3), DMatrix::identity(3, 3), None).unwrap();
        assert_relative_eq!(gramian(&sys, 0.7).unwrap(), DMatrix::identity(3, 3) * 0.7, epsilon = 1e-15);
        assert_relative_eq!(covariance(&sys, 0.7).unwrap(), DMatrix::identity(3, 3) * 0.7, epsilon = 1e-15);
    }

    #[test]
    fn scalar_gramian() {
        let g = gramian(&ou(), 1.0).unwrap();
        assert_relative_eq!(g[(0, 0)], (1.0 - (-2.0f64).exp()) / 2.0, max_relative = 1e-15);
    }

    #[test]
    fn double_integrator_covariance() {
        for t in [0.1, 0.5, 2.0] {
            let d = covariance(&double_integrator(), t).unwrap();
            let want = dmatrix![t, t * t / 2.0; t * t / 2.0, t * t * t / 3.0];
            assert_relative_eq!(d, want, max_relative = 1e-13);
        }
    }

    #[test]
    fn covariance_is_minus_reversed_gramian() {
        let sys = validate_system(
            dmatrix![0.2, -1.0, 0.4; 0.9, -0.3, 0.0; 0.1, 0.8, 0.5],
            dmatrix![1.0; 0.0; 0.3],
            None,
        )
        .unwrap();
        let d = covariance(&sys, 0.37).unwrap();
        let g = gramian_with_negated_time(&sys, 0.37).unwrap();
        assert!((&d + &g).amax() <= 1e-12 * d.amax());
    }

    #[test]
    fn quadrature_agrees_with_block_exponential() {
        let sys = validate_system(
            dmatrix![0.2, -1.0, 0.4; 0.9, -0.3, 0.0; 0.1, 0.8, 0.5],
            dmatrix![1.0; 0.0; 0.3],
            None,
        )
        .unwrap();
        for t in [1e-3, 0.3, 4.0] {
            let a = gramian(&sys, t).unwrap();
            let b = gramian_quadrature(&sys, t, 1e-13).unwrap();
            assert!((&a - &b).amax() <= 1e-9 * a.amax(), "t = {t}");
        }
    }

    #[test]
    fn non_positive_time_is_rejected() {
        assert_eq!(gramian(&ou(), 0.0), Err(Error::NonPositiveTime(0.0)));
        assert_eq!(covariance(&ou(), -1.0), Err(Error::NonPositiveTime(-1.0)));
    }

    #[test]
    fn rescaled_series_examples() {
        let sys = double_integrator();
        let s = rescaled_series(&sys, &build_filtration(&sys), 4).unwrap();
        assert_relative_eq!(s.x(), &dmatrix![1.0, -0.5; -0.5, 1.0 / 3.0], epsilon = 1e-15);
        assert_relative_eq!(s.c0, 1.0 / 12.0, max_relative = 1e-14);
        for q in 1..=4 {
            assert_eq!(s.series.coeff(q).amax(), 0.0);
        }

        let sys = ou();
        let s = rescaled_series(&sys, &build_filtration(&sys), 4).unwrap();
        // (1 - e^{-2t}) / 2 = t - t^2 + 2t^3/3 - t^4/3 + 2t^5/15
        let want = [1.0, -1.0, 2.0 / 3.0, -1.0 / 3.0, 2.0 / 15.0];
        for (q, w) in want.iter().enumerate() {
            assert_relative_eq!(s.series.coeff(q)[(0, 0)], *w, max_relative = 1e-14);
        }
        assert_relative_eq!(s.trace_xinv_y().unwrap(), -1.0, max_relative = 1e-14);

        let sys = validate_system(DMatrix::zeros(2, 2), DMatrix::identity(2, 2), None).unwrap();
        let s = rescaled_series(&sys, &build_filtration(&sys), 3).unwrap();
        assert_eq!(s.x(), &DMatrix::identity(2, 2));
        assert_eq!(s.c0, 1.0);
        assert_eq!(s.series.coeff(1).amax(), 0.0);
    }

    #[test]
    fn det_expansion_examples() {
        let sys = double_integrator();
        let s = rescaled_series(&sys, &build_filtration(&sys), 5).unwrap();
        let e = det_covariance_expansion(&s, sys.trace_a(), 5).unwrap();
        assert_eq!(e.coeff(0), 1.0);
        for i in 1..=5 {
            assert!(e.coeff(i).abs() < 1e-15);
        }

        // (e^{2t} - 1)/(2t) = 1 + t + 2t^2/3 + t^3/3 + 2t^4/15
        let sys = ou();
        let s = rescaled_series(&sys, &build_filtration(&sys), 5).unwrap();
        let e = det_covariance_expansion(&s, sys.trace_a(), 4).unwrap();
        let want = [1.0, 1.0, 2.0 / 3.0, 1.0 / 3.0, 2.0 / 15.0];
        for (i, w) in want.iter().enumerate() {
            assert_relative_eq!(e.coeff(i), *w, max_relative = 1e-13);
        }

        let sys = validate_system(DMatrix::zeros(3, 3), DMatrix::identity(3, 3), None).unwrap();
        let s = rescaled_series(&sys, &build_filtration(&sys), 4).unwrap();
        let e = det_covariance_expansion(&s, 0.0, 4).unwrap();
        assert_eq!(e.coeffs(), &[1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn order_below_two_is_rejected() {
        let sys = ou();
        assert!(matches!(
            rescaled_series(&sys, &build_filtration(&sys), 1),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn factored_routes_agree_near_threshold() {
        let sys = validate_system(
            dmatrix![0.0, 0.0, 0.0; 1.0, 0.3, 0.0; 0.2, 1.0, -0.4],
            dmatrix![1.0; 0.0; 0.0],
            None,
        )
        .unwrap();
        let f = build_filtration(&sys);
        let frame = AdaptedFrame::new(&sys, &f);
        let small = FactoredGramian::new(&sys, &frame, SMALL_TIME * 0.999).unwrap();
        assert_eq!(small.route, SolveRoute::SmallTimeSeries);
        for t in [SMALL_TIME, 0.4, 2.0] {
            let a = FactoredGramian::with_route(&sys, &frame, t, SolveRoute::SmallTimeSeries).unwrap();
            let b = FactoredGramian::with_route(&sys, &frame, t, SolveRoute::Direct).unwrap();
            assert_relative_eq!(a.log_det_rescaled(), b.log_det_rescaled(), epsilon = 1e-9);
        }
        let far = FactoredGramian::new(&sys, &frame, 3.0).unwrap();
        assert_eq!(far.route, SolveRoute::Direct);
    }
}
