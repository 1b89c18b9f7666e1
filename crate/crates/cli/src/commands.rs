//! The subcommands, each producing a JSON-shaped report.

use std::io::Write;
use std::path::Path;

use hypoheat::curvature::{finite_difference_oracle, oracle_grid};
use hypoheat::extrapolate::log_spaced;
use hypoheat::gramian::gramian_with_negated_time;
use hypoheat::kernel::{equilibrium_coefficients, log_kernel};
use hypoheat::{
    connecting_covector, covariance, diagonal_asymptotics, laurent_expansion, moment_check,
    rescaled_series, simulate as run_simulation, value_function, Error, LinearSystem, Model,
    Regime, SimulationConfig, SystemFile,
};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::{json, Value};

use crate::tolerance::Settings;
use crate::{CliError, Outcome};

pub const DEFAULT_SEED: u64 = 20240601;

pub struct Context {
    pub file: SystemFile,
    pub model: Model,
    pub settings: Settings,
}

impl Context {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let settings = Settings::from_overrides(overrides)?;
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let file = SystemFile::from_json(&text).map_err(|source| CliError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        let sys = file.clone().into_system(settings.system)?;
        Ok(Self {
            file,
            model: Model::new(sys),
            settings,
        })
    }

    fn sys(&self) -> &LinearSystem {
        self.model.system()
    }

    fn vector(&self, name: &str, v: &[f64]) -> Result<DVector<f64>, CliError> {
        let n = self.sys().dim();
        if v.len() != n {
            return Err(CliError::Usage(format!(
                "{name} has {} coordinates, the system has n = {n}",
                v.len()
            )));
        }
        Ok(DVector::from_column_slice(v))
    }
}

/// A cross-check with its residual and tolerance.
#[derive(Debug, Clone, Serialize)]
pub struct Verification {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Verification {
    fn new(name: impl Into<String>, residual: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            residual,
            tolerance,
            passed: residual <= tolerance,
        }
    }

    fn failed(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            residual: f64::NAN,
            tolerance: 0.0,
            passed: false,
        }
    }
}

/// Column-oriented table for CSV output.
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn write_csv(&self, out: impl Write) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|&v| number(v)))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest round-trip decimal form, as in the JSON output.
fn number(v: f64) -> String {
    serde_json::Number::from_f64(v).map_or_else(|| v.to_string(), |n| n.to_string())
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Drops the sign of zeros so that exact zeros print as `0.0`.
fn unsigned_zeros(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x + 0.0).collect()
}

fn to_value(v: impl Serialize) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn regime_label(r: Regime) -> String {
    match r {
        Regime::Equilibrium => "equilibrium".into(),
        Regime::Level(i) => format!("level {i}"),
    }
}

fn point_report(ctx: &Context, x0: &DVector<f64>, order: usize, checks: &mut Vec<Verification>) -> Value {
    let label = format!("{:?}", x0.as_slice());
    let asym = match diagonal_asymptotics(&ctx.model, x0, order) {
        Ok(a) => a,
        Err(e) => {
            checks.push(Verification::failed(format!("asymptotics at {label}")));
            return json!({"point": x0.as_slice(), "error": e.to_string()});
        }
    };
    let mut out = json!({
        "point": x0.as_slice(),
        "regime": regime_label(asym.regime),
        "c0": asym.c0,
        "exponent": asym.exponent,
    });
    match asym.regime {
        Regime::Equilibrium => {
            out["a"] = to_value(unsigned_zeros(&asym.a));
        }
        Regime::Level(1) => {
            out["first_order"] = to_value(asym.first_order);
        }
        Regime::Level(i) => {
            if let Some(rate) = &asym.rate {
                out["level"] = json!(i);
                out["rate"] = json!(rate.rate);
                out["rate_correction"] = json!(rate.correction);
                out["rate_error_estimate"] = json!(rate.error_estimate);
                checks.push(Verification::new(
                    format!("pole extrapolation at {label}"),
                    rate.error_estimate.abs() / rate.rate.abs(),
                    ctx.settings.check("rate"),
                ));
            }
        }
    }
    out
}

pub fn analyze(ctx: &Context, order: usize, points: &[crate::Point]) -> Result<Outcome, CliError> {
    let sys = ctx.sys();
    let f = ctx.model.filtration();
    let curv = laurent_expansion(&ctx.model, order)?;
    let coeffs = equilibrium_coefficients(&ctx.model, order.max(1))?;
    let series = rescaled_series(sys, f, order.max(2))?;
    let tr_a = sys.trace_a();

    let mut checks = vec![
        Verification::new(
            "tr I = N",
            (curv.trace_leading() - f.exponent as f64).abs(),
            ctx.settings.check("trace_identity"),
        ),
        Verification::new(
            "a1 = -tr A / 2",
            (coeffs.from_invariants[0] + 0.5 * tr_a).abs(),
            ctx.settings.check("a1"),
        ),
        Verification::new(
            "a_i from invariants = a_i from det D_t",
            coeffs.max_disagreement(),
            ctx.settings.check("routes"),
        ),
        Verification::new(
            "tr X^-1 Y + tr A = 0",
            (series.trace_xinv_y()? + tr_a).abs(),
            ctx.settings.check("xinv_y"),
        ),
    ];
    for t in [0.1, 1.0] {
        let d = covariance(sys, t)?;
        let g = gramian_with_negated_time(sys, t)?;
        checks.push(Verification::new(
            format!("D_t + Gamma_-t = 0 at t = {t}"),
            (&d + g).amax() / d.amax().max(1.0),
            ctx.settings.check("covariance"),
        ));
    }
    let mut point_values = Vec::new();
    for p in points {
        let x0 = ctx.vector("--point", &p.0)?;
        point_values.push(point_report(ctx, &x0, order, &mut checks));
    }
    let passed = checks.iter().all(|c| c.passed);
    let value = json!({
        "system": ctx.file,
        "filtration": {
            "dims": f.dims,
            "increments": f.increments,
            "step": f.step,
            "young_rows": f.rows,
            "exponent": f.exponent,
        },
        "curvature": curvature_value(&curv),
        "coefficients": {
            "a": unsigned_zeros(&coeffs.from_invariants),
            "a_from_determinant": unsigned_zeros(&coeffs.from_determinant),
        },
        "c0": series.c0,
        "points": point_values,
        "verifications": checks,
        "passed": passed,
    });
    Ok(Outcome {
        value,
        table: None,
        passed,
    })
}

fn curvature_value(c: &hypoheat::CurvatureExpansion) -> Value {
    json!({
        "order": c.order,
        "leading": rows(&c.leading),
        "trace_leading": c.trace_leading(),
        "q": c.q.iter().map(rows).collect::<Vec<_>>(),
        "q_traces": c.q_traces(),
    })
}

fn check_time(t: f64) -> Result<(), CliError> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveTime(t).into())
    }
}

pub fn kernel(ctx: &Context, t: f64, x: &[f64], y: &[f64]) -> Result<Outcome, CliError> {
    check_time(t)?;
    let (x, y) = (ctx.vector("--x", x)?, ctx.vector("--y", y)?);
    let k = log_kernel(&ctx.model, t, &x, &y)?;
    let value = json!({
        "t": t,
        "x": x.as_slice(),
        "y": y.as_slice(),
        "density": k.density(),
        "log_density": k.log_density,
        "action": k.action,
        "det_covariance": k.log_det_covariance.exp(),
        "log_det_covariance": k.log_det_covariance,
        "route": k.route,
    });
    Ok(Outcome {
        value,
        table: None,
        passed: true,
    })
}

pub fn cost(ctx: &Context, t: f64, x1: &[f64], x2: &[f64]) -> Result<Outcome, CliError> {
    check_time(t)?;
    let (x1, x2) = (ctx.vector("--x1", x1)?, ctx.vector("--x2", x2)?);
    let v = value_function(&ctx.model, &x1, &x2, t)?;
    let p = connecting_covector(&ctx.model, &x1, &x2, t)?;
    let value = json!({
        "t": t,
        "x1": x1.as_slice(),
        "x2": x2.as_slice(),
        "value": v.value,
        "covariance_form": v.covariance_form,
        "relative_discrepancy": v.discrepancy(),
        "p0": p.p0.as_slice(),
        "route": v.route,
    });
    Ok(Outcome {
        value,
        table: None,
        passed: true,
    })
}

pub fn curvature(ctx: &Context, order: usize, oracle: bool) -> Result<Outcome, CliError> {
    let curv = laurent_expansion(&ctx.model, order)?;
    let mut value = json!({
        "exponent": ctx.model.exponent(),
        "curvature": curvature_value(&curv),
    });
    let mut passed = true;
    if oracle {
        let grid = oracle_grid(&ctx.model, 48)?;
        let fit = finite_difference_oracle(&ctx.model, order.max(1), &grid)?;
        let rel_i = (&curv.leading - &fit.expansion.leading).amax() / curv.leading.amax();
        let mut worst_q: f64 = 0.0;
        for i in 0..curv.q.len().min(2) {
            worst_q = worst_q.max((&curv.q[i] - &fit.expansion.q[i]).amax());
        }
        let tol = ctx.settings.check("oracle");
        let checks = vec![
            Verification::new("I against least squares (relative)", rel_i, 0.1 * tol),
            Verification::new("Q0, Q1 against least squares", worst_q, tol),
        ];
        passed = checks.iter().all(|c| c.passed);
        value["oracle"] = json!({
            "grid": [grid[0], grid[grid.len() - 1], grid.len()],
            "leading": rows(&fit.expansion.leading),
            "q": fit.expansion.q.iter().take(2).map(rows).collect::<Vec<_>>(),
            "extra_terms": fit.extra_terms,
            "max_residual": fit.max_residual,
        });
        value["verifications"] = to_value(checks);
        value["passed"] = json!(passed);
    }
    Ok(Outcome {
        value,
        table: None,
        passed,
    })
}

pub fn sweep(
    ctx: &Context,
    order: usize,
    point: &[f64],
    t_min: f64,
    t_max: f64,
    n_points: usize,
) -> Result<Outcome, CliError> {
    if !(t_min > 0.0 && t_min < t_max && t_max.is_finite()) {
        return Err(CliError::Usage(format!(
            "need 0 < t_min < t_max, got [{t_min}, {t_max}]"
        )));
    }
    if n_points < 2 {
        return Err(CliError::Usage(format!("need n_points >= 2, got {n_points}")));
    }
    let x0 = ctx.vector("--point", point)?;
    let asym = diagonal_asymptotics(&ctx.model, &x0, order)?;
    let mut table = Table {
        header: vec!["t", "p_exact", "p_asym", "normalized_residual", "action"],
        rows: vec![],
    };
    for t in log_spaced(t_min, t_max, n_points) {
        let k = log_kernel(&ctx.model, t, &x0, &x0)?;
        let log_asym = asym.log_density(t);
        let residual = (k.log_density - log_asym).exp_m1();
        table
            .rows
            .push(vec![t, k.density(), log_asym.exp(), residual, k.action]);
    }
    let value = json!({
        "point": x0.as_slice(),
        "regime": regime_label(asym.regime),
        "columns": table.header,
        "rows": table.rows,
    });
    Ok(Outcome {
        value,
        table: Some(table),
        passed: true,
    })
}

pub fn simulate(
    ctx: &Context,
    point: &[f64],
    config: &SimulationConfig,
    samples_path: Option<&Path>,
) -> Result<Outcome, CliError> {
    let x0 = ctx.vector("--point", point)?;
    let ens = run_simulation(ctx.sys(), &x0, config)?;
    if let Some(path) = samples_path {
        let file = std::fs::File::create(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        ens.write_csv(std::io::BufWriter::new(file))
            .map_err(|e| CliError::Output(e.to_string()))?;
    }
    let report = moment_check(&ens.samples, ctx.sys(), &x0, ens.t_final)?;
    let z_limit = ctx.settings.check("z_limit");
    let passed = report.max_abs_z <= z_limit;
    let value = json!({
        "config": config,
        "point": x0.as_slice(),
        "report": report,
        "z_limit": z_limit,
        "passed": passed,
    });
    Ok(Outcome {
        value,
        table: None,
        passed,
    })
}
