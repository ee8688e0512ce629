//! Drives integrations and studies over the problem catalog and emits the
//! CSV/JSON artifacts.


use expocol_core::ecr::{
    advisory_summary, build_coefficients, dense_output, step, stepsize_guard, Classification,
    CollocationScheme,
};
use expocol_core::oscillatory::{
    build_rkn_coefficients, build_tcr_coefficients, rkn_step, tcr_step, SecondOrderSystem,
};
use expocol_core::problems::{by_name, ProblemInstance};
use expocol_core::reference::rk4_step;
use nalgebra::DVector;
use serde::Serialize;

use crate::config::{ExperimentConfig, MethodKind};
use crate::csvio;
use crate::error::{HarnessError, Result};
use crate::fit::{fit_order, SlopeFit};

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Completed,
    /// Non-finite state detected; the record holds everything up to the
    /// failing step.
    Blowup { step: usize },
}

/// In-memory trajectory of one run, the harness-side view of a
/// [`expocol_core::ecr::RunResult`] that can also end in a flagged blowup.
pub struct RunRecord {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub energies: Option<Vec<f64>>,
    pub iterations: Vec<u32>,
    pub residuals: Vec<f64>,
    pub converged: Vec<bool>,
    /// Dense-output samples `(t, state)` when requested (ECr only).
    pub dense: Vec<(f64, DVector<f64>)>,
    pub outcome: Outcome,
}

impl RunRecord {
    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("at least the initial state")
    }

    pub fn max_energy_defect(&self) -> Option<f64> {
        let e = self.energies.as_ref()?;
        let h0 = *e.first()?;
        Some(e.iter().fold(0.0f64, |m, x| m.max((x - h0).abs())))
    }
}

fn steps_for(t_end: f64, h: f64) -> usize {
    (t_end / h - 1.0e-9).ceil() as usize
}

/// Integrates `problem` with the configured method at stepsize `h`.
///
/// Numeric blowups are recorded in the outcome, not returned as errors, so
/// callers can flush partial output before deciding the exit code.
pub fn execute_run(
    problem: &ProblemInstance,
    cfg: &ExperimentConfig,
    h: f64,
    dense_taus: &[f64],
) -> Result<RunRecord> {
    let scheme = CollocationScheme::new(cfg.r, h)
        .map_err(|e| HarnessError::Config(e.to_string()))?
        .with_tolerance(cfg.tolerance)
        .with_max_iterations(cfg.max_iterations);
    let n_steps = steps_for(cfg.t_end, h);
    let system = &problem.system;

    let mut record = RunRecord {
        times: Vec::with_capacity(n_steps + 1),
        states: Vec::with_capacity(n_steps + 1),
        energies: system.has_energy().then(Vec::new),
        iterations: Vec::with_capacity(n_steps),
        residuals: Vec::with_capacity(n_steps),
        converged: Vec::with_capacity(n_steps),
        dense: Vec::new(),
        outcome: Outcome::Completed,
    };

    match cfg.method {
        MethodKind::Ecr => {
            let table = build_coefficients(system, &scheme)?;
            let mut y = problem.initial_state.clone();
            push(&mut record, system, 0, h, &y);
            for n in 0..n_steps {
                match step(system, &scheme, &table, &y) {
                    Ok(out) => {
                        for &tau in dense_taus {
                            let u = dense_output(system, &scheme, &y, &out, tau)
                                .map_err(|e| HarnessError::Config(e.to_string()))?;
                            record.dense.push((n as f64 * h + tau * h, u));
                        }
                        y = out.y1;
                        push(&mut record, system, n + 1, h, &y);
                        record.iterations.push(out.diagnostics.iterations);
                        record.residuals.push(out.diagnostics.residual);
                        record.converged.push(out.diagnostics.converged);
                    }
                    Err(expocol_core::Error::Numeric(_)) => {
                        record.outcome = Outcome::Blowup { step: n };
                        break;
                    }
                    Err(e) => return Err(HarnessError::Config(e.to_string())),
                }
            }
        }
        MethodKind::Tcr | MethodKind::Rkn => {
            let base = problem.second_order.as_ref().ok_or_else(|| {
                HarnessError::Config(format!(
                    "method {} needs a second-order form; problem '{}' has none",
                    cfg.method.name(),
                    problem.name
                ))
            })?;
            let absorbed;
            let so: &SecondOrderSystem = if cfg.method == MethodKind::Rkn {
                absorbed = base.absorb_omega();
                &absorbed
            } else {
                base
            };
            let d = so.dim();
            enum Tables {
                Tcr(expocol_core::oscillatory::TcrCoefficients),
                Rkn(expocol_core::oscillatory::RknCoefficients),
            }
            let tables = if cfg.method == MethodKind::Tcr {
                Tables::Tcr(build_tcr_coefficients(so, &scheme)?)
            } else {
                Tables::Rkn(build_rkn_coefficients(&scheme))
            };
            let mut q = problem.initial_state.rows(0, d).into_owned();
            let mut p = problem.initial_state.rows(d, d).into_owned();
            let stack = |q: &DVector<f64>, p: &DVector<f64>| {
                DVector::from_iterator(2 * d, q.iter().chain(p.iter()).copied())
            };
            record.times.push(0.0);
            record.states.push(stack(&q, &p));
            if let Some(e) = record.energies.as_mut() {
                e.push(so.energy(&q, &p));
            }
            for n in 0..n_steps {
                let out = match &tables {
                    Tables::Tcr(t) => tcr_step(so, &scheme, t, &q, &p),
                    Tables::Rkn(t) => rkn_step(so, &scheme, t, &q, &p),
                };
                match out {
                    Ok(out) => {
                        q = out.q1;
                        p = out.p1;
                        record.times.push((n + 1) as f64 * h);
                        record.states.push(stack(&q, &p));
                        if let Some(e) = record.energies.as_mut() {
                            e.push(so.energy(&q, &p));
                        }
                        record.iterations.push(out.diagnostics.iterations);
                        record.residuals.push(out.diagnostics.residual);
                        record.converged.push(out.diagnostics.converged);
                    }
                    Err(expocol_core::Error::Numeric(_)) => {
                        record.outcome = Outcome::Blowup { step: n };
                        break;
                    }
                    Err(e) => return Err(HarnessError::Config(e.to_string())),
                }
            }
        }
        MethodKind::BaselineRk4 => {
            let a = system.a().clone();
            let g = system.g().clone();
            let f = move |_: f64, y: &DVector<f64>| &a * y + g(y);
            let mut y = problem.initial_state.clone();
            push(&mut record, system, 0, h, &y);
            for n in 0..n_steps {
                let next = rk4_step(&f, n as f64 * h, &y, h);
                if next.iter().any(|x| !x.is_finite()) {
                    record.outcome = Outcome::Blowup { step: n };
                    break;
                }
                y = next;
                push(&mut record, system, n + 1, h, &y);
                record.iterations.push(0);
                record.residuals.push(0.0);
                record.converged.push(true);
            }
        }
    }
    Ok(record)
}

fn push(
    record: &mut RunRecord,
    system: &expocol_core::ecr::SemilinearSystem,
    n: usize,
    h: f64,
    y: &DVector<f64>,
) {
    record.times.push(n as f64 * h);
    if let Some(e) = record.energies.as_mut() {
        e.push(system.energy(y).expect("energy present"));
    }
    record.states.push(y.clone());
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub problem: String,
    pub method: &'static str,
    pub r: usize,
    pub h: f64,
    pub t_end: f64,
    pub seed: u64,
    pub steps_completed: usize,
    pub outcome: String,
    pub max_energy_defect: Option<f64>,
    pub nonconverged_steps: usize,
    pub stepsize_advisory: Option<String>,
}

/// `run` subcommand: one integration, three CSVs and a summary.
///
/// On blowup the partial CSVs are flushed before the error (exit 3)
/// propagates.
pub fn run_command(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let problem = by_name(&cfg.problem, &cfg.params)?;
    let h = cfg.stepsizes[0];
    let dense_taus: &[f64] = if cfg.dense && cfg.method == MethodKind::Ecr {
        &[0.25, 0.5, 0.75]
    } else {
        &[]
    };
    let record = execute_run(&problem, cfg, h, dense_taus)?;

    let dir = &cfg.out_dir;
    csvio::write_trajectory(&dir.join("trajectory.csv"), &record.times, &record.states)?;
    if let Some(energies) = &record.energies {
        csvio::write_energy(&dir.join("energy.csv"), &record.times, energies)?;
    }
    csvio::write_diagnostics(
        &dir.join("diagnostics.csv"),
        &record.iterations,
        &record.residuals,
        &record.converged,
    )?;
    if !record.dense.is_empty() {
        let times: Vec<f64> = record.dense.iter().map(|(t, _)| *t).collect();
        let states: Vec<DVector<f64>> = record.dense.iter().map(|(_, y)| y.clone()).collect();
        csvio::write_trajectory(&dir.join("dense.csv"), &times, &states)?;
    }

    let advisory = if cfg.method == MethodKind::Ecr {
        let scheme = CollocationScheme::new(cfg.r, h)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        stepsize_guard(&problem.system, &scheme, &problem.initial_state)
            .ok()
            .map(|a| advisory_summary(&a))
    } else {
        None
    };

    let summary = RunSummary {
        problem: cfg.problem.clone(),
        method: cfg.method.name(),
        r: cfg.r,
        h,
        t_end: cfg.t_end,
        seed: cfg.seed,
        steps_completed: record.iterations.len(),
        outcome: match record.outcome {
            Outcome::Completed => "completed".into(),
            Outcome::Blowup { step } => format!("blowup at step {step}"),
        },
        max_energy_defect: record.max_energy_defect(),
        nonconverged_steps: record.converged.iter().filter(|c| !**c).count(),
        stepsize_advisory: advisory,
    };
    csvio::write_json(&dir.join("summary.json"), &summary)?;

    if let Outcome::Blowup { step } = record.outcome {
        return Err(HarnessError::Numeric {
            step,
            message: "state became non-finite (partial output flushed)".into(),
        });
    }
    Ok(summary)
}

#[derive(Debug, Serialize)]
pub struct ConvergenceRow {
    pub h: f64,
    pub steps: usize,
    pub endpoint_error: f64,
    pub max_energy_defect: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct ConvergenceReport {
    pub problem: String,
    pub method: &'static str,
    pub r: usize,
    pub t_end: f64,
    pub seed: u64,
    /// Where the exact endpoint came from.
    pub reference: String,
    /// Error metric: max norm at the endpoint.
    pub error_norm: &'static str,
    pub rows: Vec<ConvergenceRow>,
    pub fit: SlopeFit,
}

/// `converge` subcommand: endpoint errors across the stepsize list and a
/// fitted order.
pub fn converge_command(cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    if cfg.stepsizes.len() < 3 {
        return Err(HarnessError::Config(format!(
            "a convergence study needs at least 3 stepsizes, got {:?}",
            cfg.stepsizes
        )));
    }
    let problem = by_name(&cfg.problem, &cfg.params)?;

    let (reference_state, reference_label) = match problem.reference_state(cfg.t_end)? {
        Some(y) => (y, problem.reference_kind().to_string()),
        None => {
            let h_ref = cfg.stepsizes.last().unwrap() / 8.0;
            let record = run_to_end(&problem, cfg, h_ref)?;
            (
                record.final_state().clone(),
                format!("self-convergence (same method, h = {h_ref:.6e})"),
            )
        }
    };

    let mut rows = Vec::new();
    let mut defect_series: Vec<(f64, Vec<f64>, Vec<f64>)> = Vec::new();
    for &h in &cfg.stepsizes {
        let record = run_to_end(&problem, cfg, h)?;
        let error = (record.final_state() - &reference_state).amax();
        rows.push(ConvergenceRow {
            h,
            steps: record.iterations.len(),
            endpoint_error: error,
            max_energy_defect: record.max_energy_defect(),
        });
        if let Some(e) = &record.energies {
            let h0 = e[0];
            defect_series.push((
                h,
                record.times.clone(),
                e.iter().map(|x| x - h0).collect(),
            ));
        }
    }

    let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let errs: Vec<f64> = rows.iter().map(|r| r.endpoint_error).collect();
    let fit = fit_order(&hs, &errs, cfg.t_end);

    let report = ConvergenceReport {
        problem: cfg.problem.clone(),
        method: cfg.method.name(),
        r: cfg.r,
        t_end: cfg.t_end,
        seed: cfg.seed,
        reference: reference_label,
        error_norm: "max-norm at endpoint",
        rows,
        fit,
    };

    let dir = &cfg.out_dir;
    let mut w = csvio::CsvWriter::create(
        &dir.join("convergence.csv"),
        &["h", "steps", "endpoint_error", "max_energy_defect"],
    )?;
    for row in &report.rows {
        w.row(&[
            csvio::fmt(row.h),
            row.steps.to_string(),
            csvio::fmt(row.endpoint_error),
            row.max_energy_defect.map_or_else(String::new, csvio::fmt),
        ])?;
    }
    w.finish()?;
    if !defect_series.is_empty() {
        let mut w = csvio::CsvWriter::create(&dir.join("defects.csv"), &["h", "t", "H_minus_H0"])?;
        for (h, times, defects) in &defect_series {
            for (t, d) in times.iter().zip(defects) {
                w.row(&[csvio::fmt(*h), csvio::fmt(*t), csvio::fmt(*d)])?;
            }
        }
        w.finish()?;
    }
    csvio::write_json(&dir.join("summary.json"), &report)?;
    Ok(report)
}

fn run_to_end(problem: &ProblemInstance, cfg: &ExperimentConfig, h: f64) -> Result<RunRecord> {
    let record = execute_run(problem, cfg, h, &[])?;
    if let Outcome::Blowup { step } = record.outcome {
        return Err(HarnessError::Numeric {
            step,
            message: format!("blowup at h={h}"),
        });
    }
    Ok(record)
}

#[derive(Debug, Serialize)]
pub struct EnergyReport {
    pub problem: String,
    pub method: &'static str,
    pub r: usize,
    pub h: f64,
    pub t_end: f64,
    pub classification: String,
    pub initial_energy: f64,
    pub max_defect: f64,
    /// Steps where the energy increased beyond the 1e-10 slack; only
    /// counted for dissipative/gradient systems.
    pub monotonicity_violations: Option<usize>,
    /// Ratio of summed one-step defect magnitudes over sampled interior
    /// states, `sum |dH(h)| / sum |dH(h/2)|`: the observed defect-order
    /// indicator (2^(2r+1) for conservative systems).
    pub defect_halving_ratio: Option<f64>,
}

/// `energy` subcommand: defect series, monotonicity accounting and a
/// halving-ratio estimate of the defect order.
pub fn energy_command(cfg: &ExperimentConfig) -> Result<EnergyReport> {
    let problem = by_name(&cfg.problem, &cfg.params)?;
    if !problem.system.has_energy() {
        return Err(HarnessError::Config(format!(
            "problem '{}' carries no energy function",
            cfg.problem
        )));
    }
    let h = cfg.stepsizes[0];
    let record = run_to_end(&problem, cfg, h)?;
    let energies = record.energies.as_ref().expect("energy checked above");
    let h0 = energies[0];
    let max_defect = record.max_energy_defect().unwrap_or(0.0);

    let classification = problem.system.classification();
    let monotone_expected = matches!(
        classification,
        Classification::Dissipative | Classification::Gradient
    );
    let violations = monotone_expected.then(|| {
        energies
            .windows(2)
            .filter(|w| w[1] - w[0] > 1.0e-10)
            .count()
    });

    // One-step defect halving ratio, measured at interior states of the
    // run. Individual phases can sit on symmetry points where the leading
    // defect term degenerates (the Duffing initial state is one), so the
    // estimate aggregates defect magnitudes over several phases.
    let defect_halving_ratio = defect_ratio_aggregate(&problem, cfg, &record, h)?;

    let report = EnergyReport {
        problem: cfg.problem.clone(),
        method: cfg.method.name(),
        r: cfg.r,
        h,
        t_end: cfg.t_end,
        classification: format!("{classification:?}"),
        initial_energy: h0,
        max_defect,
        monotonicity_violations: violations,
        defect_halving_ratio,
    };

    let dir = &cfg.out_dir;
    csvio::write_energy(&dir.join("energy.csv"), &record.times, energies)?;
    csvio::write_json(&dir.join("energy_summary.json"), &report)?;
    Ok(report)
}

fn defect_ratio_aggregate(
    problem: &ProblemInstance,
    cfg: &ExperimentConfig,
    record: &RunRecord,
    h: f64,
) -> Result<Option<f64>> {
    let n = record.states.len();
    if n < 10 {
        return Ok(None);
    }
    let mut coarse_sum = 0.0;
    let mut fine_sum = 0.0;
    for k in 1..=8usize {
        let state = &record.states[k * (n - 1) / 9];
        coarse_sum += one_step_defect(problem, cfg, state, h)?.abs();
        fine_sum += one_step_defect(problem, cfg, state, 0.5 * h)?.abs();
    }
    if fine_sum <= 1.0e-14 * (1.0 + record.energies.as_ref().unwrap()[0].abs()) {
        return Ok(None);
    }
    Ok(Some(coarse_sum / fine_sum))
}

/// Signed one-step energy change of the configured method from `state`.
fn one_step_defect(
    problem: &ProblemInstance,
    cfg: &ExperimentConfig,
    state: &DVector<f64>,
    h: f64,
) -> Result<f64> {
    let scheme = CollocationScheme::new(cfg.r, h)
        .map_err(|e| HarnessError::Config(e.to_string()))?
        .with_tolerance(cfg.tolerance)
        .with_max_iterations(cfg.max_iterations);
    let system = &problem.system;
    match cfg.method {
        MethodKind::Ecr | MethodKind::BaselineRk4 => {
            let y1 = if cfg.method == MethodKind::Ecr {
                let table = build_coefficients(system, &scheme)?;
                step(system, &scheme, &table, state)?.y1
            } else {
                let a = system.a().clone();
                let g = system.g().clone();
                let f = move |_: f64, y: &DVector<f64>| &a * y + g(y);
                rk4_step(&f, 0.0, state, h)
            };
            Ok(system.energy(&y1).unwrap() - system.energy(state).unwrap())
        }
        MethodKind::Tcr | MethodKind::Rkn => {
            let base = problem
                .second_order
                .as_ref()
                .ok_or_else(|| HarnessError::Config("no second-order form".into()))?;
            let absorbed;
            let so: &SecondOrderSystem = if cfg.method == MethodKind::Rkn {
                absorbed = base.absorb_omega();
                &absorbed
            } else {
                base
            };
            let d = so.dim();
            let q = state.rows(0, d).into_owned();
            let p = state.rows(d, d).into_owned();
            let out = if cfg.method == MethodKind::Tcr {
                let tables = build_tcr_coefficients(so, &scheme)?;
                tcr_step(so, &scheme, &tables, &q, &p)?
            } else {
                let tables = build_rkn_coefficients(&scheme);
                rkn_step(so, &scheme, &tables, &q, &p)?
            };
            Ok(so.energy(&out.q1, &out.p1) - so.energy(&q, &p))
        }
    }
}
