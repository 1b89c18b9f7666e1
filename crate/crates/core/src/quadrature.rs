//! Quadrature rules: adaptive Gauss–Kronrod for matrix-valued integrands on
//! an interval and tensor Gauss–Hermite for Gaussian expectations.

#![allow(clippy::excessive_precision)] // tabulated nodes and weights kept verbatim

use nalgebra::{DMatrix, DVector, SymmetricEigen};

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15<F>(f: &F, a: f64, b: f64) -> (DMatrix<f64>, f64)
where
    F: Fn(f64) -> DMatrix<f64>,
{
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = &fc * WGK[7];
    let mut gauss = &fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let sum = f(c - x) + f(c + x);
        kron += &sum * WGK[j];
        if j % 2 == 1 {
            gauss += &sum * WG[j / 2];
        }
    }
    let err = ((&kron - &gauss) * h).amax();
    (kron * h, err)
}

/// Integrates `f` over `[a, b]` by recursive bisection until each panel's
/// Kronrod–Gauss difference is below `rel_tol` of the panel estimate.
pub fn integrate_matrix<F>(f: F, a: f64, b: f64, rel_tol: f64) -> DMatrix<f64>
where
    F: Fn(f64) -> DMatrix<f64>,
{
    fn recurse<F: Fn(f64) -> DMatrix<f64>>(
        f: &F,
        a: f64,
        b: f64,
        rel_tol: f64,
        depth: u32,
    ) -> DMatrix<f64> {
        let (est, err) = gk15(f, a, b);
        let scale = est.amax().max(f64::MIN_POSITIVE);
        if err <= rel_tol * scale || depth >= 40 {
            return est;
        }
        let mid = 0.5 * (a + b);
        recurse(f, a, mid, rel_tol, depth + 1) + recurse(f, mid, b, rel_tol, depth + 1)
    }
    recurse(&f, a, b, rel_tol, 0)
}

/// Vector-valued variant of [`integrate_matrix`].
pub fn integrate_vector<F>(f: F, a: f64, b: f64, rel_tol: f64) -> DVector<f64>
where
    F: Fn(f64) -> DVector<f64>,
{
    let m = integrate_matrix(
        |s| {
            let v = f(s);
            DMatrix::from_column_slice(v.len(), 1, v.as_slice())
        },
        a,
        b,
        rel_tol,
    );
    m.column(0).into_owned()
}

/// Gauss–Hermite nodes and weights for the weight `exp(-x^2)` (Golub–Welsch).
pub fn gauss_hermite(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1);
    let mut jacobi = DMatrix::zeros(order, order);
    for i in 1..order {
        let off = (i as f64 / 2.0).sqrt();
        jacobi[(i, i - 1)] = off;
        jacobi[(i - 1, i)] = off;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..order)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// `E[g(Y)]` for `Y ~ N(mean, cov)` with a tensor Gauss–Hermite rule in the
/// eigenbasis of `cov`.
pub fn gaussian_expectation<G>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    nodes_per_dim: usize,
    g: G,
) -> f64
where
    G: Fn(&DVector<f64>) -> f64,
{
    let n = mean.len();
    let eig = SymmetricEigen::new(cov.clone());
    let (nodes, weights) = gauss_hermite(nodes_per_dim);
    let norm = std::f64::consts::PI.powf(-(n as f64) / 2.0);
    let scales: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&l| (2.0 * l.max(0.0)).sqrt())
        .collect();
    let mut idx = vec![0usize; n];
    let mut total = 0.0;
    loop {
        let mut y = mean.clone();
        let mut w = norm;
        for d in 0..n {
            y.axpy(nodes[idx[d]] * scales[d], &eig.eigenvectors.column(d), 1.0);
            w *= weights[idx[d]];
        }
        total += w * g(&y);
        let mut d = 0;
        loop {
            if d == n {
                return total;
            }
            idx[d] += 1;
            if idx[d] < nodes_per_dim {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}
