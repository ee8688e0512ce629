//! Experiment configuration: a TOML file with nested sections, overridden
//! field-by-field by command-line flags, with the output directory also
//! overridable through `EXPOCOL_OUT_DIR`.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use expocol_core::problems::ProblemParams;
use serde::Deserialize;

use crate::error::{HarnessError, Result};

/// Environment variable overriding the output directory.
pub const OUT_DIR_ENV: &str = "EXPOCOL_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodKind {
    Ecr,
    Tcr,
    Rkn,
    BaselineRk4,
}

impl MethodKind {
    pub fn name(&self) -> &'static str {
        match self {
            MethodKind::Ecr => "ecr",
            MethodKind::Tcr => "tcr",
            MethodKind::Rkn => "rkn",
            MethodKind::BaselineRk4 => "baseline-rk4",
        }
    }
}

impl FromStr for MethodKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ecr" => Ok(MethodKind::Ecr),
            "tcr" => Ok(MethodKind::Tcr),
            "rkn" => Ok(MethodKind::Rkn),
            "baseline-rk4" => Ok(MethodKind::BaselineRk4),
            other => Err(HarnessError::Config(format!(
                "unknown method '{other}' (expected ecr, tcr, rkn or baseline-rk4)"
            ))),
        }
    }
}

/// Flag-level overrides collected by the CLI; every field is optional and
/// wins over the config file when present.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub problem: Option<String>,
    pub method: Option<String>,
    pub r: Option<usize>,
    pub stepsizes: Vec<f64>,
    pub t_end: Option<f64>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub dense: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    problem: Option<ProblemSection>,
    method: Option<MethodSection>,
    grid: Option<GridSection>,
    output: Option<OutputSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemSection {
    name: Option<String>,
    omega: Option<f64>,
    k: Option<f64>,
    theta: Option<f64>,
    rho: Option<f64>,
    n: Option<usize>,
    spectrum: Option<Vec<f64>>,
    quartic: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct MethodSection {
    kind: Option<String>,
    r: Option<usize>,
    tolerance: Option<f64>,
    max_iterations: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSection {
    h: Option<Vec<f64>>,
    t_end: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    dir: Option<String>,
    dense: Option<bool>,
    seed: Option<u64>,
}

/// Fully resolved experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub problem: String,
    pub params: ProblemParams,
    pub method: MethodKind,
    pub r: usize,
    /// Positive, strictly descending stepsizes; single-entry for `run`.
    pub stepsizes: Vec<f64>,
    pub t_end: f64,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub dense: bool,
    pub tolerance: f64,
    pub max_iterations: u32,
}

impl ExperimentConfig {
    /// Resolves file < environment < flags, then validates.
    pub fn resolve(file: Option<&Path>, flags: &Overrides) -> Result<Self> {
        let file_cfg: FileConfig = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| HarnessError::Config(format!("cannot read {path:?}: {e}")))?;
                toml::from_str(&text)
                    .map_err(|e| HarnessError::Config(format!("bad config {path:?}: {e}")))?
            }
            None => FileConfig::default(),
        };

        let psec = file_cfg.problem.unwrap_or_default();
        let msec = file_cfg.method.unwrap_or_default();
        let gsec = file_cfg.grid.unwrap_or_default();
        let osec = file_cfg.output.unwrap_or_default();

        let problem = flags
            .problem
            .clone()
            .or(psec.name)
            .ok_or_else(|| HarnessError::Config("no problem selected (--problem)".into()))?;

        let defaults = ProblemParams::default();
        let params = ProblemParams {
            omega: psec.omega.unwrap_or(defaults.omega),
            k: psec.k.unwrap_or(defaults.k),
            theta: psec.theta.unwrap_or(defaults.theta),
            rho: psec.rho.unwrap_or(defaults.rho),
            grid: psec.n.unwrap_or(defaults.grid),
            spectrum: psec.spectrum.unwrap_or(defaults.spectrum),
            quartic: psec.quartic.unwrap_or(defaults.quartic),
        };

        let method: MethodKind = flags
            .method
            .clone()
            .or(msec.kind)
            .unwrap_or_else(|| "ecr".into())
            .parse()?;

        let stepsizes = if !flags.stepsizes.is_empty() {
            flags.stepsizes.clone()
        } else {
            gsec.h.unwrap_or_else(|| vec![0.01])
        };
        if stepsizes.is_empty() {
            return Err(HarnessError::Config("empty stepsize list".into()));
        }
        if stepsizes.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
            return Err(HarnessError::Config(format!(
                "stepsizes must be positive and finite: {stepsizes:?}"
            )));
        }
        if stepsizes.windows(2).any(|w| w[1] >= w[0]) {
            return Err(HarnessError::Config(format!(
                "stepsizes must be strictly descending: {stepsizes:?}"
            )));
        }

        let t_end = flags.t_end.or(gsec.t_end).unwrap_or(10.0);
        if !(t_end > 0.0) || !t_end.is_finite() {
            return Err(HarnessError::Config(format!("t_end={t_end} must be positive")));
        }

        let out_dir = flags
            .out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .or_else(|| osec.dir.map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"));

        Ok(Self {
            problem,
            params,
            method,
            r: flags.r.or(msec.r).unwrap_or(2),
            stepsizes,
            t_end,
            out_dir,
            seed: flags.seed.or(osec.seed).unwrap_or(0),
            dense: flags.dense || osec.dense.unwrap_or(false),
            tolerance: msec.tolerance.unwrap_or(1.0e-16),
            max_iterations: msec.max_iterations.unwrap_or(5),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(
            &path,
            r#"
[problem]
name = "duffing"
omega = 10.0

[method]
kind = "tcr"
r = 3

[grid]
h = [0.1, 0.05]
t_end = 5.0
"#,
        )
        .unwrap();
        let flags = Overrides {
            method: Some("ecr".into()),
            t_end: Some(7.0),
            ..Default::default()
        };
        let cfg = ExperimentConfig::resolve(Some(&path), &flags).unwrap();
        assert_eq!(cfg.problem, "duffing");
        assert_eq!(cfg.params.omega, 10.0);
        assert_eq!(cfg.method, MethodKind::Ecr);
        assert_eq!(cfg.r, 3);
        assert_eq!(cfg.t_end, 7.0);
        assert_eq!(cfg.stepsizes, vec![0.1, 0.05]);
    }

    #[test]
    fn rejects_bad_grids() {
        let flags = Overrides {
            problem: Some("duffing".into()),
            stepsizes: vec![0.05, 0.1],
            ..Default::default()
        };
        assert!(ExperimentConfig::resolve(None, &flags).is_err());
        let flags = Overrides {
            problem: Some("duffing".into()),
            stepsizes: vec![-0.1],
            ..Default::default()
        };
        assert!(ExperimentConfig::resolve(None, &flags).is_err());
    }

    #[test]
    fn unknown_method_is_config_error() {
        let flags = Overrides {
            problem: Some("duffing".into()),
            method: Some("foo".into()),
            ..Default::default()
        };
        let err = ExperimentConfig::resolve(None, &flags).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
