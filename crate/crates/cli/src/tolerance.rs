//! `--tol name=value` overrides.

use std::collections::BTreeMap;

use hypoheat::Tolerances;

use crate::CliError;

/// Thresholds for the cross-checks in the reports.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub system: Tolerances,
    /// Named verification tolerances.
    pub checks: BTreeMap<&'static str, f64>,
}

pub const CHECKS: [(&str, f64); 8] = [
    ("trace_identity", 1e-8),
    ("a1", 1e-9),
    ("routes", 1e-8),
    ("covariance", 1e-9),
    ("xinv_y", 1e-8),
    ("rate", 1e-4),
    ("oracle", 1e-4),
    ("z_limit", 4.0),
];

impl Default for Settings {
    fn default() -> Self {
        Self {
            system: Tolerances::default(),
            checks: CHECKS.into_iter().collect(),
        }
    }
}

impl Settings {
    pub fn from_overrides(overrides: &[String]) -> Result<Self, CliError> {
        let mut s = Self::default();
        for item in overrides {
            let (name, value) = item
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--tol expects name=value, got '{item}'")))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("--tol {name}: '{value}' is not a number")))?;
            if !(value > 0.0 && value.is_finite()) {
                return Err(CliError::Usage(format!("--tol {name} must be positive")));
            }
            match name.trim() {
                "rank_rel" => s.system.rank_rel = value,
                "equilibrium" => s.system.equilibrium = value,
                "level_rel" => s.system.level_rel = value,
                other => match s.checks.iter_mut().find(|(k, _)| **k == other) {
                    Some((_, v)) => *v = value,
                    None => {
                        let known: Vec<&str> = ["rank_rel", "equilibrium", "level_rel"]
                            .into_iter()
                            .chain(CHECKS.iter().map(|(k, _)| *k))
                            .collect();
                        return Err(CliError::Usage(format!(
                            "unknown tolerance '{other}' (known: {})",
                            known.join(", ")
                        )));
                    }
                },
            }
        }
        Ok(s)
    }

    pub fn check(&self, name: &str) -> f64 {
        self.checks[name]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides() {
        let s = Settings::from_overrides(&["rank_rel=1e-8".into(), "a1 = 1e-6".into()]).unwrap();
        assert_eq!(s.system.rank_rel, 1e-8);
        assert_eq!(s.check("a1"), 1e-6);
        assert_eq!(s.check("routes"), 1e-8);
        assert!(Settings::from_overrides(&["bogus=1".into()]).is_err());
        assert!(Settings::from_overrides(&["a1".into()]).is_err());
        assert!(Settings::from_overrides(&["a1=-1".into()]).is_err());
    }
}
