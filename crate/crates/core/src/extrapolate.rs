//! Polynomial (Richardson) extrapolation to `t = 0` for quantities with an
//! expansion in integer powers of `t`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extrapolation {
    pub estimate: f64,
    /// Difference between the last two diagonal entries of the Neville table.
    pub error_estimate: f64,
    /// Successive extrapolants `P_{0..i}(0)`.
    pub diagonal: Vec<f64>,
}

/// Neville's scheme evaluated at zero over the samples `(ts[i], values[i])`.
pub fn richardson(ts: &[f64], values: &[f64]) -> Extrapolation {
    assert_eq!(ts.len(), values.len());
    assert!(!ts.is_empty());
    let n = ts.len();
    let mut table = values.to_vec();
    let mut diagonal = vec![values[0]];
    // table[i] holds the interpolant through points i-j..=i after pass j
    for j in 1..n {
        for i in (j..n).rev() {
            let (tl, tr) = (ts[i - j], ts[i]);
            table[i] = (tl * table[i] - tr * table[i - 1]) / (tl - tr);
        }
        diagonal.push(table[j]);
    }
    let estimate = *diagonal.last().unwrap();
    let error_estimate = if n > 1 {
        (diagonal[n - 1] - diagonal[n - 2]).abs()
    } else {
        f64::INFINITY
    };
    Extrapolation {
        estimate,
        error_estimate,
        diagonal,
    }
}

/// Geometric grid `t0, t0 / ratio, t0 / ratio^2, ...` with `count` points.
pub fn geometric_grid(t0: f64, ratio: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| t0 / ratio.powi(i as i32)).collect()
}

/// Geometric grid from `lo` to `hi` inclusive.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (llo + (lhi - llo) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
