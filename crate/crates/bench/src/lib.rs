//! Fixtures shared by the benchmarks.

use hypoheat::{validate_system, LinearSystem};
use nalgebra::{DMatrix, DVector};

/// Single-input chain of length `n`: `x_i' = x_{i+1}`, control on the last.
pub fn chain(n: usize) -> LinearSystem {
    let a = DMatrix::from_fn(n, n, |i, j| if j == i + 1 { 1.0 } else { 0.0 });
    let mut b = DMatrix::zeros(n, 1);
    b[(n - 1, 0)] = 1.0;
    validate_system(a, b, None).expect("chains are controllable")
}

/// Two stacked chains of lengths 3 and 2 with a weak coupling and drift.
pub fn coupled() -> LinearSystem {
    let mut a = DMatrix::zeros(5, 5);
    a[(0, 1)] = 1.0;
    a[(1, 2)] = 1.0;
    a[(3, 4)] = 1.0;
    a[(2, 3)] = 0.3;
    a[(4, 0)] = -0.2;
    let mut b = DMatrix::zeros(5, 2);
    b[(2, 0)] = 1.0;
    b[(4, 1)] = 1.0;
    let alpha = DVector::from_vec(vec![0.0, 0.0, 0.1, 0.0, -0.1]);
    validate_system(a, b, Some(alpha)).expect("controllable")
}
