//! Minimum-energy steering of `ẋ = Ax + Bu` with cost `½∫|u|^2`.
//!
//! The offset `alpha` of the system plays no role here: the control problem
//! is the linear one.

use nalgebra::{Cholesky, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expm::matrix_exponential;
use crate::gramian::{covariance, gramian, gramian_signed, preferred_route, SolveRoute};
use crate::model::Model;
use crate::system::LinearSystem;

fn check_dims(sys: &LinearSystem, vs: &[&DVector<f64>]) -> Result<()> {
    for v in vs {
        if v.len() != sys.dim() {
            return Err(Error::DimensionMismatch(format!(
                "vector has {} entries, system dimension is {}",
                v.len(),
                sys.dim()
            )));
        }
    }
    Ok(())
}

/// Initial covector of the extremal joining `x1` to `x2` in time `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectingCovector {
    pub p0: DVector<f64>,
    /// `SmallTimeSeries` at small `T`, where the dense Gramian is badly
    /// conditioned.
    pub route: SolveRoute,
}

/// Solves `Γ_T p0 = e^{-TA} x2 - x1`.
pub fn connecting_covector(
    model: &Model,
    x1: &DVector<f64>,
    x2: &DVector<f64>,
    t: f64,
) -> Result<ConnectingCovector> {
    check_dims(model.system(), &[x1, x2])?;
    let factored = model.factor(t)?;
    let r = matrix_exponential(&(model.system().a() * -t))? * x2 - x1;
    let frame = model.frame();
    let p0 = frame.from_adapted(&factored.solve_adapted(&frame.to_adapted(&r)));
    Ok(ConnectingCovector {
        p0,
        route: factored.route,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    /// `½ r^T Γ_T^{-1} r` with `r = e^{-TA} x2 - x1`.
    pub value: f64,
    /// `½ s^T D_T^{-1} s` with `s = x2 - e^{TA} x1`.
    pub covariance_form: f64,
    pub route: SolveRoute,
}

impl ValueFunction {
    pub fn discrepancy(&self) -> f64 {
        (self.value - self.covariance_form).abs() / self.value.abs().max(f64::MIN_POSITIVE)
    }
}

/// `S_T(x1, x2)`, computed in both the `Γ` and `D` forms.
pub fn value_function(
    model: &Model,
    x1: &DVector<f64>,
    x2: &DVector<f64>,
    t: f64,
) -> Result<ValueFunction> {
    check_dims(model.system(), &[x1, x2])?;
    let sys = model.system();
    let factored = model.factor(t)?;
    let r = matrix_exponential(&(sys.a() * -t))? * x2 - x1;
    let value = 0.5 * factored.quad_form_adapted(&model.frame().to_adapted(&r));

    let s = x2 - matrix_exponential(&(sys.a() * t))? * x1;
    let d = covariance(sys, t)?;
    let covariance_form = match Cholesky::new(d) {
        Some(c) => 0.5 * s.dot(&c.solve(&s)),
        None => f64::NAN,
    };
    Ok(ValueFunction {
        value,
        covariance_form,
        route: factored.route,
    })
}

/// `c_t(x) = -½ p0^T Γ_t p0 + p0^T (x - x0) - ½ (x - x0)^T Γ_t^{-1} (x - x0)`.
pub fn geodesic_cost(
    model: &Model,
    p0: &DVector<f64>,
    x0: &DVector<f64>,
    t: f64,
    x: &DVector<f64>,
) -> Result<f64> {
    check_dims(model.system(), &[p0, x0, x])?;
    let g = gramian(model.system(), t)?;
    let factored = model.factor(t)?;
    let dx = x - x0;
    let quad = factored.quad_form_adapted(&model.frame().to_adapted(&dx));
    Ok(-0.5 * p0.dot(&(&g * p0)) + p0.dot(&dx) - 0.5 * quad)
}

/// `(p(t), x(t))` with `p(t) = e^{-tA^T} p0`, `x(t) = e^{tA}(x0 + Γ_t p0)`.
pub fn extremal_flow(
    sys: &LinearSystem,
    p0: &DVector<f64>,
    x0: &DVector<f64>,
    t: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_dims(sys, &[p0, x0])?;
    let p = matrix_exponential(&(sys.a().transpose() * -t))? * p0;
    let x = matrix_exponential(&(sys.a() * t))? * (x0 + gramian_signed(sys, t)? * p0);
    Ok((p, x))
}

/// `x(t)` of the extremal, with `Γ_t p0` formed as `P J M(t) J P^T p0` at
/// small times. There `p0` grows like `t^{1-2m}` and the dense product loses
/// that many digits.
pub fn extremal_endpoint(
    model: &Model,
    p0: &DVector<f64>,
    x0: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>> {
    let sys = model.system();
    if !(t > 0.0) || preferred_route(model.frame(), t) == SolveRoute::Direct {
        return Ok(extremal_flow(sys, p0, x0, t)?.1);
    }
    check_dims(sys, &[p0, x0])?;
    let frame = model.frame();
    // scale_inv at 1/t multiplies level i by t^{(2i-1)/2}, i.e. applies J
    let jp = frame.scale_inv(&frame.to_adapted(p0), 1.0 / t);
    let g = frame.scale_inv(&(frame.rescaled_gramian_at(t) * jp), 1.0 / t);
    Ok(matrix_exponential(&(sys.a() * t))? * (x0 + frame.from_adapted(&g)))
}

/// `H(p, x) = p^T A x + ½ p^T B B^T p`.
pub fn hamiltonian(sys: &LinearSystem, p: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let bp = sys.b().transpose() * p;
    p.dot(&(sys.a() * x)) + 0.5 * bp.norm_squared()
}

/// An extremal trajectory, fixed by its initial state and covector.
#[derive(Debug, Clone)]
pub struct Extremal {
    sys: LinearSystem,
    pub p0: DVector<f64>,
    pub x0: DVector<f64>,
}

impl Extremal {
    pub fn new(sys: &LinearSystem, p0: DVector<f64>, x0: DVector<f64>) -> Result<Self> {
        check_dims(sys, &[&p0, &x0])?;
        Ok(Self {
            sys: sys.clone(),
            p0,
            x0,
        })
    }

    pub fn at(&self, t: f64) -> Result<(DVector<f64>, DVector<f64>)> {
        extremal_flow(&self.sys, &self.p0, &self.x0, t)
    }

    /// `u(t) = B^T p(t)`.
    pub fn control(&self, t: f64) -> Result<DVector<f64>> {
        Ok(self.sys.b().transpose() * self.at(t)?.0)
    }

    pub fn hamiltonian(&self) -> f64 {
        hamiltonian(&self.sys, &self.p0, &self.x0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::validate_system;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector, DMatrix};
    use proptest::prelude::*;

    fn di() -> Model {
        Model::new(validate_system(dmatrix![0.0, 0.0; 1.0, 0.0], dmatrix![1.0; 0.0], None).unwrap())
    }

    fn scalar(a: f64) -> Model {
        Model::new(validate_system(dmatrix![a], dmatrix![1.0], None).unwrap())
    }

    fn rk4(sys: &LinearSystem, p0: &DVector<f64>, x0: &DVector<f64>, t: f64, steps: usize)
        -> (DVector<f64>, DVector<f64>) {
        let bbt = sys.b() * sys.b().transpose();
        let a = sys.a();
        let f = |p: &DVector<f64>, x: &DVector<f64>| (-(a.transpose() * p), a * x + &bbt * p);
        let h = t / steps as f64;
        let (mut p, mut x) = (p0.clone(), x0.clone());
        for _ in 0..steps {
            let (k1p, k1x) = f(&p, &x);
            let (k2p, k2x) = f(&(&p + &k1p * (h / 2.0)), &(&x + &k1x * (h / 2.0)));
            let (k3p, k3x) = f(&(&p + &k2p * (h / 2.0)), &(&x + &k2x * (h / 2.0)));
            let (k4p, k4x) = f(&(&p + &k3p * h), &(&x + &k3x * h));
            p += (k1p + k2p * 2.0 + k3p * 2.0 + k4p) * (h / 6.0);
            x += (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (h / 6.0);
        }
        (p, x)
    }

    #[test]
    fn covector_examples() {
        let m = di();
        let z = dvector![0.0, 0.0];
        let c = connecting_covector(&m, &z, &dvector![0.0, 1.0], 1.0).unwrap();
        assert_relative_eq!(c.p0, dvector![6.0, 12.0], max_relative = 1e-12);
        assert_eq!(c.route, SolveRoute::SmallTimeSeries);
        let c = connecting_covector(&m, &z, &z, 0.7).unwrap();
        assert!(c.p0.amax() == 0.0);
        let s = Model::new(validate_system(dmatrix![0.0], dmatrix![1.0], None).unwrap());
        let c = connecting_covector(&s, &dvector![0.0], &dvector![1.0], 1.0).unwrap();
        assert_relative_eq!(c.p0[0], 1.0, max_relative = 1e-14);
        assert_eq!(
            connecting_covector(&m, &z, &z, 0.0),
            Err(Error::NonPositiveTime(0.0))
        );
    }

    #[test]
    fn value_function_examples() {
        let m = di();
        let v = value_function(&m, &dvector![0.0, 0.0], &dvector![0.0, 1.0], 1.0).unwrap();
        assert!((v.value - 6.0).abs() < 1e-10);
        assert!(v.discrepancy() < 1e-10);
        let s = Model::new(validate_system(dmatrix![0.0], dmatrix![1.0], None).unwrap());
        let v = value_function(&s, &dvector![0.0], &dvector![1.0], 2.0).unwrap();
        assert_relative_eq!(v.value, 0.25, max_relative = 1e-14);
        let x1 = dvector![0.3, -1.0];
        let x2 = matrix_exponential(&(m.system().a() * 0.8)).unwrap() * &x1;
        let v = value_function(&m, &x1, &x2, 0.8).unwrap();
        assert!(v.value.abs() < 1e-20);
    }

    #[test]
    fn small_time_covector_reaches_target() {
        let m = Model::new(
            validate_system(
                dmatrix![0.2, -0.1, 0.0; 1.0, 0.3, 0.0; 0.4, 1.0, -0.5],
                dmatrix![1.0; 0.0; 0.0],
                None,
            )
            .unwrap(),
        );
        let x1 = dvector![0.1, 0.2, -0.3];
        let x2 = dvector![0.5, -0.1, 0.2];
        for t in [0.01, 0.049, 0.2] {
            let c = connecting_covector(&m, &x1, &x2, t).unwrap();
            let xt = extremal_endpoint(&m, &c.p0, &x1, t).unwrap();
            assert!((&xt - &x2).norm() < 1e-8 * x2.norm(), "t = {t}");
            let (_, dense) = extremal_flow(m.system(), &c.p0, &x1, t).unwrap();
            assert!((&xt - dense).norm() < 1e-6 * x2.norm());
        }
    }

    #[test]
    fn geodesic_cost_examples() {
        let m = di();
        let c = geodesic_cost(&m, &dvector![1.0, 0.0], &dvector![0.0, 0.0], 1.0, &dvector![1.0, 0.0])
            .unwrap();
        assert_relative_eq!(c, -1.5, max_relative = 1e-12);
        let x0 = dvector![0.2, 0.1];
        let p0 = dvector![0.7, -0.4];
        let c = geodesic_cost(&m, &p0, &x0, 0.6, &x0).unwrap();
        let g = gramian(m.system(), 0.6).unwrap();
        assert_relative_eq!(c, -0.5 * p0.dot(&(&g * &p0)), max_relative = 1e-12);
    }

    #[test]
    fn geodesic_cost_is_minus_value_to_endpoint() {
        let m = scalar(0.7);
        let m2 = di();
        for (m, p0, x0, x) in [
            (&m, dvector![0.4], dvector![1.0], dvector![-0.3]),
            (&m2, dvector![0.5, -1.0], dvector![0.3, 0.2], dvector![-0.1, 0.4]),
        ] {
            for t in [0.02, 0.5, 1.3] {
                let (_, xt) = extremal_flow(m.system(), &p0, &x0, t).unwrap();
                let c = geodesic_cost(m, &p0, &x0, t, &x).unwrap();
                let s = value_function(m, &x, &xt, t).unwrap().value;
                assert_relative_eq!(c, -s, max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn extremal_examples_and_ode_oracle() {
        let sys = di().system().clone();
        // p stays (1, 0), so u = 1, x_1 = t, x_2 = t^2 / 2
        let (p, x) = extremal_flow(&sys, &dvector![1.0, 0.0], &dvector![0.0, 0.0], 1.0).unwrap();
        assert_relative_eq!(p, dvector![1.0, 0.0], epsilon = 1e-14);
        assert_relative_eq!(x, dvector![1.0, 0.5], epsilon = 1e-14);
        let x0 = dvector![0.3, 0.4];
        let (p, x) = extremal_flow(&sys, &dvector![0.0, 0.0], &x0, 0.9).unwrap();
        assert!(p.amax() == 0.0);
        assert_relative_eq!(x, dvector![0.3, 0.4 + 0.9 * 0.3], epsilon = 1e-14);
        let (p, x) = extremal_flow(&sys, &dvector![2.0, 1.0], &x0, 0.0).unwrap();
        assert_eq!((p, x), (dvector![2.0, 1.0], x0.clone()));

        let sys = validate_system(
            dmatrix![0.1, 0.5, 0.0; -0.3, 0.2, 0.7; 0.0, 1.0, -0.4],
            dmatrix![1.0, 0.0; 0.0, 0.0; 0.0, 1.0],
            None,
        )
        .unwrap();
        let p0 = dvector![0.3, -0.2, 0.8];
        let x0 = dvector![1.0, 0.0, -0.5];
        for t in [-0.7, 0.4, 1.0] {
            let (p, x) = extremal_flow(&sys, &p0, &x0, t).unwrap();
            let (po, xo) = rk4(&sys, &p0, &x0, t, 2000);
            assert!((&p - po).amax() < 1e-8);
            assert!((&x - xo).amax() < 1e-8);
        }
    }

    #[test]
    fn hamiltonian_is_conserved() {
        let sys = validate_system(
            dmatrix![0.3, -0.8; 1.0, 0.2],
            dmatrix![1.0; 0.5],
            None,
        )
        .unwrap();
        let e = Extremal::new(&sys, dvector![0.9, -0.3], dvector![0.2, 1.1]).unwrap();
        let h0 = e.hamiltonian();
        for i in 0..=20 {
            let (p, x) = e.at(i as f64 / 20.0).unwrap();
            assert_relative_eq!(hamiltonian(&sys, &p, &x), h0, max_relative = 1e-9);
        }
    }

    #[test]
    fn recovered_control_steers_the_dynamics() {
        let sys = di().system().clone();
        let e = Extremal::new(&sys, dvector![1.5, -2.0], dvector![0.1, 0.3]).unwrap();
        let h = 1e-5;
        for t in [0.2, 0.5, 0.9] {
            let (_, xp) = e.at(t + h).unwrap();
            let (_, xm) = e.at(t - h).unwrap();
            let (_, x) = e.at(t).unwrap();
            let dx = (xp - xm) / (2.0 * h);
            let resid = dx - (sys.a() * x + sys.b() * e.control(t).unwrap());
            assert!(resid.amax() < 1e-8);
        }
    }

    /// Piecewise-constant controls on `m` cells: the reachable endpoint is
    /// `Σ G_j u_j`, and the least-energy `u` has cost `½ r^T W^{-1} r`.
    fn qp_cost(sys: &LinearSystem, x1: &DVector<f64>, x2: &DVector<f64>, t: f64, cells: usize) -> f64 {
        let n = sys.dim();
        let dt = t / cells as f64;
        let r = x2 - matrix_exponential(&(sys.a() * t)).unwrap() * x1;
        let mut w = DMatrix::zeros(n, n);
        for j in 0..cells {
            let mid = (j as f64 + 0.5) * dt;
            // exact cell integral of e^{(t-s)A} B over [j dt, (j+1) dt]
            let gj = crate::quadrature::integrate_matrix(
                |s| matrix_exponential(&(sys.a() * (t - s))).unwrap() * sys.b(),
                mid - dt / 2.0,
                mid + dt / 2.0,
                1e-13,
            );
            w += &gj * gj.transpose() / dt;
        }
        0.5 * r.dot(&Cholesky::new(w).unwrap().solve(&r))
    }

    #[test]
    fn qp_oracle_matches_value_function() {
        let m = di();
        let x1 = dvector![0.0, 0.0];
        let x2 = dvector![0.0, 1.0];
        let qp = qp_cost(m.system(), &x1, &x2, 1.0, 64);
        let s = value_function(&m, &x1, &x2, 1.0).unwrap().value;
        assert!(qp >= s - 1e-9);
        assert!((qp - s).abs() < 0.01 * s);
    }

    proptest! {
        #[test]
        fn value_is_quadratic_in_displacement(
            lambda in 0.1f64..3.0,
            d0 in -1.0f64..1.0,
            d1 in -1.0f64..1.0,
            t in 0.06f64..2.0,
        ) {
            let m = di();
            let x1 = dvector![0.3, -0.2];
            let free = matrix_exponential(&(m.system().a() * t)).unwrap() * &x1;
            let d = dvector![d0, d1];
            let s1 = value_function(&m, &x1, &(&free + &d), t).unwrap();
            let s2 = value_function(&m, &x1, &(&free + &d * lambda), t).unwrap();
            prop_assert!((s2.value - lambda * lambda * s1.value).abs() <= 1e-9 * s2.value.max(1e-12));
            prop_assert!(s1.discrepancy() < 1e-8);
        }
    }
}
