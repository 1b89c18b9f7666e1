//! Linear control systems `dx = (Ax + alpha) dt + B dw`, the Kalman rank
//! test, and the flag `E_1 ⊂ E_2 ⊂ ... ⊂ E_m = R^n` with
//! `E_i = span{B, AB, ..., A^{i-1}B}`.

use std::ops::Range;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numerical thresholds shared by every analysis of a system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Singular values below `rank_rel * sigma_max` count as zero.
    pub rank_rel: f64,
    /// `|Ax0 + alpha| <= equilibrium * (1 + |A||x0| + |alpha|)` means equilibrium.
    pub equilibrium: f64,
    /// Relative projection residual under which a vector belongs to `E_i`.
    pub level_rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rank_rel: 1e-10,
            equilibrium: 1e-12,
            level_rel: 1e-9,
        }
    }
}

/// A validated controllable system.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    alpha: Option<DVector<f64>>,
    kalman_ranks: Vec<usize>,
    tol: Tolerances,
}

/// Numerical rank from the singular values, relative to the largest one.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// Builds `[B, AB, ..., A^{blocks-1} B]`.
pub fn kalman_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>, blocks: usize) -> DMatrix<f64> {
    let (n, k) = b.shape();
    let mut out = DMatrix::zeros(n, k * blocks);
    let mut power = b.clone();
    for i in 0..blocks {
        out.columns_mut(i * k, k).copy_from(&power);
        power = a * power;
    }
    out
}

/// Validates `(A, B, alpha)` with default tolerances.
pub fn validate_system(
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    alpha: Option<DVector<f64>>,
) -> Result<LinearSystem> {
    LinearSystem::with_tolerances(a, b, alpha, Tolerances::default())
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, alpha: Option<DVector<f64>>) -> Result<Self> {
        validate_system(a, b, alpha)
    }

    pub fn with_tolerances(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        alpha: Option<DVector<f64>>,
        tol: Tolerances,
    ) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "A must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "B must have {n} rows, got {}",
                b.nrows()
            )));
        }
        let k = b.ncols();
        if k == 0 || k > n {
            return Err(Error::DimensionMismatch(format!(
                "B must have between 1 and {n} columns, got {k}"
            )));
        }
        if let Some(al) = &alpha {
            if al.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "alpha must have {n} entries, got {}",
                    al.len()
                )));
            }
        }
        let finite = a.iter().chain(b.iter()).all(|v| v.is_finite())
            && alpha.iter().flat_map(|v| v.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite);
        }

        let rank_b = numerical_rank(&b, tol.rank_rel);
        if rank_b < k {
            return Err(Error::RankDeficientB { rank: rank_b, cols: k });
        }

        let mut kalman_ranks = Vec::new();
        let mut last = 0;
        for blocks in 1..=n {
            let r = numerical_rank(&kalman_matrix(&a, &b, blocks), tol.rank_rel);
            kalman_ranks.push(r);
            if r == n {
                break;
            }
            // once the rank stalls the flag has stabilised below n
            if r == last {
                break;
            }
            last = r;
        }
        let reached = *kalman_ranks.last().unwrap_or(&0);
        if reached < n {
            return Err(Error::NotControllable { rank: reached, n });
        }
        Ok(Self {
            a,
            b,
            alpha,
            kalman_ranks,
            tol,
        })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn alpha(&self) -> Option<&DVector<f64>> {
        self.alpha.as_ref()
    }

    /// The drift offset, zero when absent.
    pub fn alpha_or_zero(&self) -> DVector<f64> {
        self.alpha
            .clone()
            .unwrap_or_else(|| DVector::zeros(self.dim()))
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn controls(&self) -> usize {
        self.b.ncols()
    }

    /// Step `m`: the number of blocks needed for the Kalman matrix to reach rank n.
    pub fn step(&self) -> usize {
        self.kalman_ranks.len()
    }

    pub fn kalman_ranks(&self) -> &[usize] {
        &self.kalman_ranks
    }

    pub fn tolerances(&self) -> &Tolerances {
        &self.tol
    }

    pub fn trace_a(&self) -> f64 {
        self.a.trace()
    }

    /// Same system with a different drift offset.
    pub fn with_alpha(&self, alpha: Option<DVector<f64>>) -> Self {
        Self {
            alpha,
            ..self.clone()
        }
    }

    /// Linear change of coordinates `y = Cx`: `(CAC^{-1}, CB, C alpha)`.
    pub fn transformed(&self, c: &DMatrix<f64>) -> Result<Self> {
        let c_inv = c
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidArgument("change of coordinates is singular".into()))?;
        Self::with_tolerances(
            c * &self.a * c_inv,
            c * &self.b,
            self.alpha.as_ref().map(|al| c * al),
            self.tol,
        )
    }
}

/// The flag of a controllable system and its combinatorics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Filtration {
    /// `k_i = dim E_i`, ending at n.
    pub dims: Vec<usize>,
    /// `d_i = k_i - k_{i-1}`.
    pub increments: Vec<usize>,
    pub step: usize,
    /// Young diagram row lengths `n_1 >= ... >= n_k`.
    pub rows: Vec<usize>,
    /// `sum (2i - 1) d_i`, the order of the on-diagonal decay `t^{-N/2}`.
    pub exponent: usize,
    /// Orthonormal basis whose first `k_i` columns span `E_i`.
    #[serde(skip)]
    pub adapted_basis: DMatrix<f64>,
}

impl Filtration {
    /// Coordinate ranges of the blocks `E_i ⊖ E_{i-1}` in the adapted basis.
    pub fn block_ranges(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.dims
            .iter()
            .map(|&end| {
                let r = start..end;
                start = end;
                r
            })
            .collect()
    }

    /// Level (1-based) of each adapted coordinate.
    pub fn coordinate_levels(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.dims.last().copied().unwrap_or(0));
        for (i, r) in self.block_ranges().into_iter().enumerate() {
            out.extend(std::iter::repeat_n(i + 1, r.len()));
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.adapted_basis.nrows()
    }

    /// Sum of squared Young rows; equals the exponent.
    pub fn rows_square_sum(&self) -> usize {
        self.rows.iter().map(|r| r * r).sum()
    }
}

/// Computes the flag, growth vector, Young diagram and adapted basis.
///
/// The basis is built block by block with column-pivoted Gram–Schmidt over
/// `B, AB, A^2B, ...`, so every block is orthogonal to the previous levels.
pub fn build_filtration(sys: &LinearSystem) -> Filtration {
    let n = sys.dim();
    let dims: Vec<usize> = sys.kalman_ranks().to_vec();
    let step = dims.len();
    let increments: Vec<usize> = dims
        .iter()
        .scan(0, |prev, &k| {
            let d = k - *prev;
            *prev = k;
            Some(d)
        })
        .collect();
    let exponent = increments
        .iter()
        .enumerate()
        .map(|(i, d)| (2 * i + 1) * d)
        .sum();
    let k = sys.controls();
    let rows = (1..=k)
        .map(|j| increments.iter().filter(|&&d| d >= j).count())
        .collect();

    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut block = sys.b().clone();
    for &d in &increments {
        let mut cols: Vec<DVector<f64>> = block.column_iter().map(|c| c.into_owned()).collect();
        for c in cols.iter_mut() {
            project_out(c, &basis);
            project_out(c, &basis);
        }
        for _ in 0..d {
            let (best, _) = cols
                .iter()
                .enumerate()
                .map(|(i, c)| (i, c.norm()))
                .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            let q = cols[best].normalize();
            for c in cols.iter_mut() {
                let p = q.dot(c);
                c.axpy(-p, &q, 1.0);
            }
            basis.push(q);
        }
        block = sys.a() * block;
    }
    let adapted_basis = DMatrix::from_columns(&basis);

    Filtration {
        dims,
        increments,
        step,
        rows,
        exponent,
        adapted_basis,
    }
}

fn project_out(v: &mut DVector<f64>, basis: &[DVector<f64>]) {
    for q in basis {
        let p = q.dot(v);
        v.axpy(-p, q, 1.0);
    }
}

/// Local behaviour of the drift `v = Ax0 + alpha` at a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "level", rename_all = "snake_case")]
pub enum Regime {
    /// `v = 0`.
    Equilibrium,
    /// Smallest `i` with `v ∈ E_i`.
    Level(usize),
}

/// Smallest flag level containing `v`, or `None` when `v` is (numerically) zero.
pub fn flag_level(filtration: &Filtration, v: &DVector<f64>, level_rel: f64) -> Option<usize> {
    let norm = v.norm();
    if norm == 0.0 {
        return None;
    }
    let coords = filtration.adapted_basis.tr_mul(v);
    let n = coords.len();
    for (i, &k) in filtration.dims.iter().enumerate() {
        let residual = coords.rows(k, n - k).norm();
        if residual <= level_rel * norm {
            return Some(i + 1);
        }
    }
    Some(filtration.step)
}

/// Drift value `Ax0 + alpha` at `x0`.
pub fn drift_at(sys: &LinearSystem, x0: &DVector<f64>) -> DVector<f64> {
    let mut v = sys.a() * x0;
    if let Some(al) = sys.alpha() {
        v += al;
    }
    v
}

pub fn classify_point(
    sys: &LinearSystem,
    filtration: &Filtration,
    x0: &DVector<f64>,
) -> Result<Regime> {
    if x0.len() != sys.dim() {
        return Err(Error::DimensionMismatch(format!(
            "point has {} entries, system dimension is {}",
            x0.len(),
            sys.dim()
        )));
    }
    let v = drift_at(sys, x0);
    let alpha_norm = sys.alpha().map_or(0.0, |a| a.norm());
    let scale = 1.0 + sys.a().norm() * x0.norm() + alpha_norm;
    if v.norm() <= sys.tolerances().equilibrium * scale {
        return Ok(Regime::Equilibrium);
    }
    let level = flag_level(filtration, &v, sys.tolerances().level_rel)
        .expect("nonzero drift has a level");
    Ok(Regime::Level(level))
}

/// On-disk JSON form `{"A": [[..]], "B": [[..]], "alpha": [..]}` (row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemFile {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
}

fn rows_to_matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch(format!("{name} has ragged rows")));
    }
    Ok(DMatrix::from_row_iterator(
        nrows,
        ncols,
        rows.iter().flatten().copied(),
    ))
}

impl SystemFile {
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn read(path: &Path) -> std::result::Result<Self, Box<dyn std::error::Error>> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::from_json(&text)?)
    }

    pub fn into_system(self, tol: Tolerances) -> Result<LinearSystem> {
        let a = rows_to_matrix("A", &self.a)?;
        let b = rows_to_matrix("B", &self.b)?;
        let alpha = self.alpha.map(DVector::from_vec);
        LinearSystem::with_tolerances(a, b, alpha, tol)
    }

    pub fn from_system(sys: &LinearSystem) -> Self {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            m.row_iter().map(|r| r.iter().copied().collect()).collect()
        };
        Self {
            a: rows(sys.a()),
            b: rows(sys.b()),
            alpha: sys.alpha().map(|a| a.iter().copied().collect()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use nalgebra::dvector;

    fn double_integrator() -> LinearSystem {
        validate_system(dmatrix![0.0, 0.0; 1.0, 0.0], dmatrix![1.0; 0.0], None).unwrap()
    }

    // Oracle: Gaussian elimination rank with exact small-integer inputs.
    fn brute_rank(m: &DMatrix<f64>) -> usize {
        let mut m = m.clone();
        let (r, c) = m.shape();
        let mut rank = 0;
        for col in 0..c {
            let piv = (rank..r).find(|&i| m[(i, col)].abs() > 1e-12);
            if let Some(p) = piv {
                m.swap_rows(rank, p);
                for i in 0..r {
                    if i != rank {
                        let f = m[(i, col)] / m[(rank, col)];
                        for j in 0..c {
                            m[(i, j)] -= f * m[(rank, j)];
                        }
                    }
                }
                rank += 1;
            }
        }
        rank
    }

    #[test]
    fn double_integrator_is_step_two() {
        let sys = double_integrator();
        assert_eq!(brute_rank(&kalman_matrix(sys.a(), sys.b(), 1)), 1);
        assert_eq!(brute_rank(&kalman_matrix(sys.a(), sys.b(), 2)), 2);
        assert_eq!(sys.step(), 2);
    }

    #[test]
    fn elliptic_case_is_step_one() {
        let sys = validate_system(DMatrix::zeros(3, 3), DMatrix::identity(3, 3), None).unwrap();
        assert_eq!(sys.step(), 1);
        let f = build_filtration(&sys);
        assert_eq!(f.dims, vec![3]);
        assert_eq!(f.increments, vec![3]);
        assert_eq!(f.rows, vec![1, 1, 1]);
        assert_eq!(f.exponent, 3);
    }

    #[test]
    fn uncontrollable_pair_is_refused() {
        let err = validate_system(DMatrix::zeros(2, 2), dmatrix![1.0; 0.0], None).unwrap_err();
        assert_eq!(err, Error::NotControllable { rank: 1, n: 2 });
    }

    #[test]
    fn dimension_and_rank_errors() {
        assert!(matches!(
            validate_system(DMatrix::zeros(2, 3), dmatrix![1.0; 0.0], None),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            validate_system(DMatrix::zeros(2, 2), dmatrix![1.0; 0.0; 0.0], None),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            validate_system(
                dmatrix![0.0, 0.0; 1.0, 0.0],
                dmatrix![1.0; 0.0],
                Some(dvector![1.0])
            ),
            Err(Error::DimensionMismatch(_))
        ));
        assert_eq!(
            validate_system(DMatrix::zeros(2, 2), dmatrix![1.0, 2.0; 2.0, 4.0], None),
            Err(Error::RankDeficientB { rank: 1, cols: 2 })
        );
        assert_eq!(
            validate_system(dmatrix![f64::NAN], dmatrix![1.0], None),
            Err(Error::NonFinite)
        );
    }

    #[test]
    fn filtration_of_double_integrator() {
        let f = build_filtration(&double_integrator());
        assert_eq!(f.dims, vec![1, 2]);
        assert_eq!(f.increments, vec![1, 1]);
        assert_eq!(f.step, 2);
        assert_eq!(f.rows, vec![2]);
        assert_eq!(f.exponent, 4);
    }

    #[test]
    fn filtration_of_three_chain() {
        let sys = validate_system(
            dmatrix![0.0, 0.0, 0.0; 1.0, 0.0, 0.0; 0.0, 1.0, 0.0],
            dmatrix![1.0; 0.0; 0.0],
            None,
        )
        .unwrap();
        for blocks in 1..=3 {
            assert_eq!(brute_rank(&kalman_matrix(sys.a(), sys.b(), blocks)), blocks);
        }
        let f = build_filtration(&sys);
        assert_eq!(f.dims, vec![1, 2, 3]);
        assert_eq!(f.increments, vec![1, 1, 1]);
        assert_eq!(f.exponent, 9);
        assert_eq!(f.rows_square_sum(), 9);
    }

    #[test]
    fn young_rows_for_mixed_increments() {
        // B spans e1,e2; A maps e1 -> e3: d = (2, 1), rows (2, 1), N = 2 + 3 = 5
        let a = dmatrix![
            0.0, 0.0, 0.0;
            0.0, 0.0, 0.0;
            1.0, 0.0, 0.0
        ];
        let b = dmatrix![1.0, 0.0; 0.0, 1.0; 0.0, 0.0];
        let f = build_filtration(&validate_system(a, b, None).unwrap());
        assert_eq!(f.increments, vec![2, 1]);
        assert_eq!(f.rows, vec![2, 1]);
        assert_eq!(f.exponent, 5);
        assert_eq!(f.rows_square_sum(), 5);
    }

    #[test]
    fn adapted_basis_is_orthonormal_and_nested() {
        let a = dmatrix![0.3, -0.2, 0.5; 0.9, 0.1, -0.4; 0.2, 0.7, 0.0];
        let b = dmatrix![1.0; 0.5; -0.3];
        let sys = validate_system(a, b, None).unwrap();
        let f = build_filtration(&sys);
        let p = &f.adapted_basis;
        assert!((p.transpose() * p - DMatrix::identity(3, 3)).amax() < 1e-13);
        // A^{i-1}B has no component beyond the first k_i basis vectors
        let mut v = sys.b().clone();
        for &k in &f.dims {
            let c = p.transpose() * &v;
            assert!(c.rows(k, 3 - k).amax() < 1e-12);
            v = sys.a() * v;
        }
    }

    #[test]
    fn classify_examples() {
        let sys = double_integrator();
        let f = build_filtration(&sys);
        assert_eq!(
            classify_point(&sys, &f, &dvector![0.0, 0.0]).unwrap(),
            Regime::Equilibrium
        );
        assert_eq!(
            classify_point(&sys, &f, &dvector![1.0, 0.0]).unwrap(),
            Regime::Level(2)
        );
        assert_eq!(
            classify_point(&sys, &f, &dvector![0.0, 3.0]).unwrap(),
            Regime::Equilibrium
        );
        let ou = validate_system(dmatrix![1.0], dmatrix![1.0], None).unwrap();
        let fo = build_filtration(&ou);
        assert_eq!(
            classify_point(&ou, &fo, &dvector![1.0]).unwrap(),
            Regime::Level(1)
        );
    }

    #[test]
    fn alpha_shifts_the_equilibrium() {
        let sys = double_integrator().with_alpha(Some(dvector![0.0, -1.0]));
        let f = build_filtration(&sys);
        assert_eq!(
            classify_point(&sys, &f, &dvector![1.0, 0.0]).unwrap(),
            Regime::Equilibrium
        );
        assert_eq!(
            classify_point(&sys, &f, &dvector![0.0, 0.0]).unwrap(),
            Regime::Level(2)
        );
    }

    #[test]
    fn system_file_round_trip() {
        let text = r#"{"A": [[0, 0], [1, 0]], "B": [[1], [0]], "alpha": [0.5, 0]}"#;
        let file = SystemFile::from_json(text).unwrap();
        let sys = file.clone().into_system(Tolerances::default()).unwrap();
        assert_eq!(sys.a(), &dmatrix![0.0, 0.0; 1.0, 0.0]);
        assert_eq!(sys.alpha().unwrap(), &dvector![0.5, 0.0]);
        assert_eq!(SystemFile::from_system(&sys), file);
    }
}
