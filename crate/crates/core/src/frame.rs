//! The system written in the orthonormal basis adapted to its flag.
//!
//! In these coordinates `A` is block upper Hessenberg (`A E_i ⊂ E_{i+1}`) and
//! `B` lives in the first block. Those zero blocks are stored as exact zeros,
//! so Taylor sums built from them keep the `t^{i-1}` vanishing orders of
//! `e^{-tA}B` exactly and the `J_{1/√t}` rescalings can be applied without
//! amplifying round-off.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::system::{Filtration, LinearSystem};

/// Relative size under which trailing blocks of a vector are treated as
/// round-off and cleared before structured Taylor sums.
const SNAP_REL: f64 = 1e-13;

/// Cap on Taylor terms for small-time sums.
const MAX_TERMS: usize = 400;

#[derive(Debug, Clone)]
pub struct AdaptedFrame {
    basis: DMatrix<f64>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    blocks: Vec<Range<usize>>,
    levels: Vec<usize>,
    step: usize,
}

impl AdaptedFrame {
    pub fn new(sys: &LinearSystem, filtration: &Filtration) -> Self {
        let p = filtration.adapted_basis.clone();
        let levels = filtration.coordinate_levels();
        let mut a = p.transpose() * sys.a() * &p;
        for (i, &li) in levels.iter().enumerate() {
            for (j, &lj) in levels.iter().enumerate() {
                if li > lj + 1 {
                    a[(i, j)] = 0.0;
                }
            }
        }
        let mut b = p.transpose() * sys.b();
        let k = filtration.dims[0];
        for i in k..b.nrows() {
            for j in 0..b.ncols() {
                b[(i, j)] = 0.0;
            }
        }
        Self {
            basis: p,
            a,
            b,
            blocks: filtration.block_ranges(),
            levels,
            step: filtration.step,
        }
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// `P^T A P` with its structural zeros.
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// `P^T B`, zero below the first block.
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn blocks(&self) -> &[Range<usize>] {
        &self.blocks
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn to_adapted(&self, x: &DVector<f64>) -> DVector<f64> {
        self.basis.tr_mul(x)
    }

    pub fn from_adapted(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.basis * x
    }

    /// Clears trailing blocks that are round-off relative to the vector norm.
    pub fn snap(&self, v: &DVector<f64>) -> DVector<f64> {
        let norm = v.norm();
        let mut out = v.clone();
        for r in self.blocks.iter().rev() {
            let tail = out.rows(r.start, self.dim() - r.start).norm();
            if tail <= SNAP_REL * norm {
                out.rows_mut(r.start, r.len()).fill(0.0);
            } else {
                break;
            }
        }
        out
    }

    /// `J_{1/√t} v`: block `i` multiplied by `t^{-(2i-1)/2}`.
    pub fn scale_inv(&self, v: &DVector<f64>, t: f64) -> DVector<f64> {
        let mut out = v.clone();
        for (i, l) in self.levels.iter().enumerate() {
            out[i] *= t.powf(-(2.0 * *l as f64 - 1.0) / 2.0);
        }
        out
    }

    /// `U_a = Ã^a B̃ / a!` for `a = 0..count`.
    pub fn krylov_terms(&self, count: usize) -> Vec<DMatrix<f64>> {
        let mut out = Vec::with_capacity(count);
        let mut u = self.b.clone();
        for a in 0..count {
            if a > 0 {
                u = &self.a * u / a as f64;
            }
            out.push(u.clone());
        }
        out
    }

    /// Taylor coefficients `G_1..G_pmax` of `Γ̃_t = Σ G_p t^p` (index 0 is zero):
    /// `G_p = (-1)^{p-1}/p Σ_{a+b=p-1} U_a U_b^T`.
    pub fn gramian_taylor(&self, pmax: usize) -> Vec<DMatrix<f64>> {
        let n = self.dim();
        let u = self.krylov_terms(pmax.max(1));
        let mut out = vec![DMatrix::zeros(n, n)];
        for p in 1..=pmax {
            let mut g = DMatrix::zeros(n, n);
            for a in 0..p {
                g += &u[a] * u[p - 1 - a].transpose();
            }
            let sign = if (p - 1) % 2 == 0 { 1.0 } else { -1.0 };
            out.push(g * (sign / p as f64));
        }
        out
    }

    /// Coefficient `M_q` of the rescaled Gramian `M(t) = J^{-1} Γ̃_t J^{-1}`,
    /// whose block `(i, j)` is block `(i, j)` of `G_{q+i+j-1}`.
    pub fn rescaled_coefficient(&self, g: &[DMatrix<f64>], q: usize) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for (r, &li) in self.levels.iter().enumerate() {
            for (c, &lj) in self.levels.iter().enumerate() {
                m[(r, c)] = g[q + li + lj - 1][(r, c)];
            }
        }
        m
    }

    /// `M(t)` summed until the terms drop below machine precision.
    pub fn rescaled_gramian_at(&self, t: f64) -> DMatrix<f64> {
        let n = self.dim();
        let offset = 2 * self.step - 1;
        let u = self.krylov_terms(MAX_TERMS + offset);
        let mut g: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, n)];
        let mut sum = DMatrix::zeros(n, n);
        let mut small_run = 0;
        let mut tq = 1.0;
        for q in 0..MAX_TERMS {
            while g.len() <= q + offset {
                let p = g.len();
                let mut gp = DMatrix::zeros(n, n);
                for a in 0..p {
                    gp += &u[a] * u[p - 1 - a].transpose();
                }
                let sign = if (p - 1).is_multiple_of(2) { 1.0 } else { -1.0 };
                g.push(gp * (sign / p as f64));
            }
            let term = self.rescaled_coefficient(&g, q) * tq;
            sum += &term;
            if term.amax() <= 1e-18 * sum.amax() {
                small_run += 1;
                if small_run >= 3 {
                    break;
                }
            } else {
                small_run = 0;
            }
            tq *= t;
        }
        (&sum + sum.transpose()) * 0.5
    }

    /// `W(t)` with block `i` equal to `t^{-(i-1)}` times block `i` of `e^{-tÃ}B̃`.
    pub fn rescaled_velocity_at(&self, t: f64) -> DMatrix<f64> {
        let n = self.dim();
        let k = self.b.ncols();
        let mut out = DMatrix::zeros(n, k);
        let u = self.krylov_terms(MAX_TERMS);
        for (row, &l) in self.levels.iter().enumerate() {
            let start = l - 1;
            let mut small_run = 0;
            let mut tp = 1.0;
            for a in start..MAX_TERMS {
                let sign = if a % 2 == 0 { 1.0 } else { -1.0 };
                let mut largest: f64 = 0.0;
                for c in 0..k {
                    let term = sign * tp * u[a][(row, c)];
                    out[(row, c)] += term;
                    largest = largest.max(term.abs());
                }
                let scale = out.row(row).amax();
                if largest <= 1e-18 * scale {
                    small_run += 1;
                    if small_run >= 3 {
                        break;
                    }
                } else {
                    small_run = 0;
                }
                tp *= t;
            }
        }
        out
    }

    /// `e^{-tÃ} v` by a Taylor sum; exact zero blocks of `v` propagate.
    pub fn flow_back(&self, v: &DVector<f64>, t: f64) -> DVector<f64> {
        self.taylor_apply(v, |a| {
            let mut f = 1.0;
            for i in 1..=a {
                f *= i as f64;
            }
            (-t).powi(a as i32) / f
        })
    }

    /// `∫_0^t e^{-sÃ} ds v` by a Taylor sum.
    pub fn flow_back_integral(&self, v: &DVector<f64>, t: f64) -> DVector<f64> {
        self.taylor_apply(v, |a| {
            let mut f = 1.0;
            for i in 1..=a + 1 {
                f *= i as f64;
            }
            (-1.0f64).powi(a as i32) * t.powi(a as i32 + 1) / f
        })
    }

    fn taylor_apply<C: Fn(usize) -> f64>(&self, v: &DVector<f64>, coef: C) -> DVector<f64> {
        let mut power = v.clone();
        let mut sum = DVector::zeros(v.len());
        let mut small_run = 0;
        for a in 0..MAX_TERMS {
            if a > 0 {
                power = &self.a * power;
            }
            let term = &power * coef(a);
            sum += &term;
            let scale = sum.amax();
            if term.amax() <= 1e-18 * scale || scale == 0.0 {
                small_run += 1;
                if small_run >= 3 {
                    break;
                }
            } else {
                small_run = 0;
            }
        }
        sum
    }
}
