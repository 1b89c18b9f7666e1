//! Matrix exponential by scaling and squaring with diagonal Padé approximants.
//!
//! Follows Higham, "The scaling and squaring method for the matrix exponential
//! revisited" (SIAM J. Matrix Anal. Appl. 26, 2005): pick the lowest Padé
//! degree in {3, 5, 7, 9, 13} whose backward-error bound covers the 1-norm,
//! otherwise scale to the degree-13 threshold and square back.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[allow(clippy::excessive_precision)]
const THETA: [(usize, f64); 5] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068),
    (13, 5.371920351148152),
];

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

pub(crate) fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Computes `e^M` for a square matrix `M`.
pub fn matrix_exponential(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "matrix exponential needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let norm = one_norm(m);
    for &(degree, theta) in &THETA[..4] {
        if norm <= theta {
            let (u, v) = match degree {
                3 => pade_low(m, &PADE3),
                5 => pade_low(m, &PADE5),
                7 => pade_low(m, &PADE7),
                _ => pade_low(m, &PADE9),
            };
            return solve_pade(u, v);
        }
    }
    let theta13 = THETA[4].1;
    let squarings = if norm > theta13 {
        (norm / theta13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let scaled = m * 2f64.powi(-squarings);
    let (u, v) = pade13(&scaled);
    let mut result = solve_pade(u, v)?;
    for _ in 0..squarings {
        result = &result * &result;
    }
    Ok(result)
}

fn pade_low(a: &DMatrix<f64>, b: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let a2 = a * a;
    let mut even = DMatrix::identity(n, n);
    let mut u_acc = DMatrix::identity(n, n) * b[1];
    let mut v_acc = DMatrix::identity(n, n) * b[0];
    let mut k = 2;
    while k < b.len() {
        even = &even * &a2;
        v_acc += &even * b[k];
        if k + 1 < b.len() {
            u_acc += &even * b[k + 1];
        }
        k += 2;
    }
    (a * u_acc, v_acc)
}

fn pade13(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let b = &PADE13;
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * b[13] + &a4 * b[11] + &a2 * b[9];
    let u = a * (&a6 * inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1]);
    let inner_v = &a6 * b[12] + &a4 * b[10] + &a2 * b[8];
    let v = &a6 * inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];
    (u, v)
}

// r = (V - U)^{-1} (V + U)
fn solve_pade(u: DMatrix<f64>, v: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let numer = &v + &u;
    let denom = v - u;
    denom
        .lu()
        .solve(&numer)
        .ok_or_else(|| Error::SeriesDegenerate("Padé denominator is singular".into()))
}
