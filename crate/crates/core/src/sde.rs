//! Monte Carlo check of the transition law of `dξ = (α + Aξ) dt + B dw`.
//!
//! Path `i` draws from its own ChaCha20 stream `(seed, i)`, and normals come
//! from the inverse CDF, so an ensemble is reproducible bit for bit whatever
//! the thread count.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::expm::matrix_exponential;
use crate::gramian::covariance;
use crate::kernel::transition_mean;
use crate::system::LinearSystem;

pub const MIN_SAMPLES: usize = 1000;
pub const Z_LIMIT: f64 = 4.0;
/// Caps the worker threads used by [`simulate`].
pub const THREADS_ENV: &str = "HYPOHEAT_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    EulerMaruyama,
    ExactGaussianStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub t_final: f64,
    pub seed: u64,
    pub scheme: Scheme,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 2 {
            return Err(Error::InvalidConfig(format!("n_paths = {} < 2", self.n_paths)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) || !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "dt = {} and t_final = {} must be positive",
                self.dt, self.t_final
            )));
        }
        if self.dt > self.t_final * (1.0 + 1e-12) {
            return Err(Error::InvalidConfig(format!(
                "dt = {} exceeds t_final = {}",
                self.dt, self.t_final
            )));
        }
        Ok(())
    }

    /// Number of steps; the step is shrunk so they tile `[0, t_final]` exactly.
    pub fn steps(&self) -> usize {
        ((self.t_final / self.dt) - 1e-9).ceil().max(1.0) as usize
    }
}

/// Endpoint samples, one row per path.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub t_final: f64,
    pub samples: DMatrix<f64>,
}

impl Ensemble {
    pub fn n_paths(&self) -> usize {
        self.samples.nrows()
    }

    /// Writes a header `x1,...,xn` and one row per path.
    pub fn write_csv<W: Write>(&self, out: W) -> std::result::Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        let n = self.samples.ncols();
        w.write_record((1..=n).map(|i| format!("x{i}")))?;
        for row in self.samples.row_iter() {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

struct NormalStream {
    rng: ChaCha20Rng,
    normal: Normal,
}

impl NormalStream {
    fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            rng,
            normal: Normal::standard(),
        }
    }

    fn next(&mut self) -> f64 {
        // midpoint of one of 2^53 equal cells, never 0 or 1
        let u = ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
        self.normal.inverse_cdf(u)
    }

    fn fill(&mut self, z: &mut DVector<f64>) {
        for v in z.iter_mut() {
            *v = self.next();
        }
    }
}

fn thread_pool() -> Option<rayon::ThreadPool> {
    let cap: usize = std::env::var(THREADS_ENV).ok()?.trim().parse().ok()?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cap.max(1))
        .build()
        .ok()
}

pub fn simulate(sys: &LinearSystem, x0: &DVector<f64>, config: &SimulationConfig) -> Result<Ensemble> {
    config.validate()?;
    if x0.len() != sys.dim() {
        return Err(Error::DimensionMismatch(format!(
            "point has {} entries, system dimension is {}",
            x0.len(),
            sys.dim()
        )));
    }
    let n = sys.dim();
    let steps = config.steps();
    let h = config.t_final / steps as f64;
    let alpha = sys.alpha_or_zero();

    // x_{j+1} = F x_j + c + L z_j, with z_j of length `noise`
    let (f, c, l) = match config.scheme {
        Scheme::EulerMaruyama => (
            DMatrix::identity(n, n) + sys.a() * h,
            &alpha * h,
            sys.b() * h.sqrt(),
        ),
        Scheme::ExactGaussianStep => {
            let chol = Cholesky::new(covariance(sys, h)?).ok_or(Error::NotPositiveDefinite)?;
            (
                matrix_exponential(&(sys.a() * h))?,
                transition_mean(sys, &DVector::zeros(n), h)?,
                chol.l(),
            )
        }
    };
    let noise = l.ncols();
    let run = |i: usize| {
        let mut stream = NormalStream::new(config.seed, i as u64);
        let mut z = DVector::zeros(noise);
        let mut x = x0.clone();
        for _ in 0..steps {
            stream.fill(&mut z);
            x = &f * &x + &c + &l * &z;
        }
        x
    };
    let paths: Vec<DVector<f64>> = match thread_pool() {
        Some(pool) => pool.install(|| (0..config.n_paths).into_par_iter().map(run).collect()),
        None => (0..config.n_paths).into_par_iter().map(run).collect(),
    };
    let mut samples = DMatrix::zeros(config.n_paths, n);
    for (i, p) in paths.iter().enumerate() {
        samples.row_mut(i).copy_from(&p.transpose());
    }
    Ok(Ensemble {
        t_final: config.t_final,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub n_samples: usize,
    pub sample_mean: Vec<f64>,
    pub sample_cov: Vec<Vec<f64>>,
    pub reference_mean: Vec<f64>,
    pub reference_cov: Vec<Vec<f64>>,
    pub mean_z: Vec<f64>,
    /// Upper triangle, row by row.
    pub cov_z: Vec<f64>,
    pub max_abs_z: f64,
    pub passed: bool,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Sample moments against `(mean, cov)`, with z-scores from the Gaussian
/// standard errors `√(D_jj / N)` and `√((D_jj D_hh + D_jh^2) / N)`.
pub fn moment_check_against(
    samples: &DMatrix<f64>,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> Result<MomentReport> {
    let big_n = samples.nrows();
    let n = samples.ncols();
    if big_n < MIN_SAMPLES {
        return Err(Error::TooFewSamples {
            got: big_n,
            min: MIN_SAMPLES,
        });
    }
    if mean.len() != n || cov.nrows() != n || cov.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "samples have {n} columns, reference has {} entries",
            mean.len()
        )));
    }
    let mut m = DVector::zeros(n);
    for row in samples.row_iter() {
        m += row.transpose();
    }
    m /= big_n as f64;
    let mut s = DMatrix::zeros(n, n);
    for row in samples.row_iter() {
        let d = row.transpose() - &m;
        s += &d * d.transpose();
    }
    s /= (big_n - 1) as f64;

    let nf = big_n as f64;
    let mean_z: Vec<f64> = (0..n)
        .map(|j| (m[j] - mean[j]) / (cov[(j, j)] / nf).sqrt())
        .collect();
    let mut cov_z = vec![];
    for j in 0..n {
        for h in j..n {
            let se = ((cov[(j, j)] * cov[(h, h)] + cov[(j, h)] * cov[(j, h)]) / nf).sqrt();
            cov_z.push((s[(j, h)] - cov[(j, h)]) / se);
        }
    }
    let max_abs_z = mean_z
        .iter()
        .chain(&cov_z)
        .map(|z| z.abs())
        .fold(0.0, f64::max);
    Ok(MomentReport {
        n_samples: big_n,
        sample_mean: m.iter().copied().collect(),
        sample_cov: rows(&s),
        reference_mean: mean.iter().copied().collect(),
        reference_cov: rows(cov),
        mean_z,
        cov_z,
        max_abs_z,
        passed: max_abs_z <= Z_LIMIT,
    })
}

/// Sample moments against `m(t) = e^{tA}(x0 + ∫e^{-sA}ds α)` and `D_t`.
pub fn moment_check(
    samples: &DMatrix<f64>,
    sys: &LinearSystem,
    x0: &DVector<f64>,
    t: f64,
) -> Result<MomentReport> {
    if samples.nrows() < MIN_SAMPLES {
        return Err(Error::TooFewSamples {
            got: samples.nrows(),
            min: MIN_SAMPLES,
        });
    }
    moment_check_against(samples, &transition_mean(sys, x0, t)?, &covariance(sys, t)?)
}
