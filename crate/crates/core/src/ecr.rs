//! First-order exponential collocation (ECr) integrator for
//! `y' = A y + g(y)`.
//!
//! One step of size `h` solves the stage fixed point
//!
//! ```text
//! y_ci = e^(ci h A) y0 + ci h sum_j bj Abar(ci, cj) g(y_cj),
//! y1   = e^(h A)    y0 +    h sum_j bj Abar(1,  cj) g(y_cj),
//! ```
//!
//! where `(cj, bj)` is the r-point Gauss rule on [0,1] and the stage
//! coefficient is
//!
//! ```text
//! Abar(t, s)(A) = int_0^1 e^((1-xi) t h A) P(xi t, s) d xi
//!               = sum_i sqrt(2i+1) sum_k (-1)^(i+k) (i+k)!/(k!(i-k)!)
//!                 t^k phibar_(k+1)(t h A) p_i(s).
//! ```
//!
//! The `t^k` factor inside the double sum comes out of the defining
//! integral (`int_0^1 e^((1-xi) t h A) (-xi t)^k d xi = (-t)^k k!
//! phibar_(k+1)(t h A)`); every table can be validated against direct
//! quadrature of the integral form, which this module exposes as
//! [`coefficient_quadrature`].

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::basis::{
    gauss_rule, legendre_basis, projection_kernel, OrthonormalBasis, QuadratureRule,
};
use crate::error::{Error, Result};
use crate::matfun::{inf_norm, is_symmetric, max_abs, phi_table};
use crate::rng::SplitMix64;
use crate::{ScalarFn, StateFn};

/// Geometric class of the system, fixed by the structure of `Q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    /// `Q` skew-symmetric: `H` is a first integral.
    Conservative,
    /// `Q` negative semidefinite: `H` is a Lyapunov function.
    Dissipative,
    /// `Q = -I`: gradient flow `y' = -grad U(y)`.
    Gradient,
    /// No structural claim.
    Generic,
}

/// Structural factorization `A = Q M`, `g = Q grad V`, `H = y'My/2 + V`.
pub struct Structure {
    pub q: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub grad_v: StateFn,
    pub v: ScalarFn,
}

/// The semilinear system `y' = A y + g(y)` with optional energy structure.
pub struct SemilinearSystem {
    dim: usize,
    a: DMatrix<f64>,
    g: StateFn,
    structure: Option<Structure>,
    energy_fn: Option<ScalarFn>,
    classification: Classification,
}

impl SemilinearSystem {
    /// A generic system without structural claims.
    pub fn new(a: DMatrix<f64>, g: StateFn) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Dimension {
                expected: a.nrows(),
                found: a.ncols(),
            });
        }
        if a.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(
                "system matrix has non-finite entries".into(),
            ));
        }
        let d = a.nrows();
        let probe = g(&DVector::zeros(d));
        if probe.len() != d {
            return Err(Error::Dimension {
                expected: d,
                found: probe.len(),
            });
        }
        Ok(Self {
            dim: d,
            a,
            g,
            structure: None,
            energy_fn: None,
            classification: Classification::Generic,
        })
    }

    /// A homogeneous linear system `y' = A y`.
    pub fn linear(a: DMatrix<f64>) -> Result<Self> {
        Self::new(a, Arc::new(|y: &DVector<f64>| DVector::zeros(y.len())))
    }

    /// Attaches a user-supplied energy function `H`.
    pub fn with_energy(mut self, energy: ScalarFn) -> Self {
        self.energy_fn = Some(energy);
        self
    }

    /// Attaches the `(Q, M, V)` factorization and checks it for
    /// consistency at the probe states (or at internal samples when none
    /// are given): `A = QM`, `g = Q grad V`, `grad V` against finite
    /// differences of `V`, the energy composition, and the matrix shape
    /// implied by the classification.
    pub fn with_structure(
        mut self,
        structure: Structure,
        classification: Classification,
        probes: &[DVector<f64>],
    ) -> Result<Self> {
        let d = self.dim;
        if structure.q.nrows() != d || structure.q.ncols() != d {
            return Err(Error::Dimension {
                expected: d,
                found: structure.q.nrows(),
            });
        }
        if structure.m.nrows() != d || structure.m.ncols() != d {
            return Err(Error::Dimension {
                expected: d,
                found: structure.m.nrows(),
            });
        }

        let scale = 1.0 + max_abs(&self.a);
        let qm = &structure.q * &structure.m;
        if max_abs(&(&qm - &self.a)) > 1.0e-12 * scale {
            return Err(Error::InvalidInput("structure check failed: A != Q M".into()));
        }
        if !is_symmetric(&structure.m, 1.0e-12) {
            return Err(Error::InvalidInput(
                "structure check failed: M not symmetric".into(),
            ));
        }

        match classification {
            Classification::Conservative => {
                let skew = &structure.q + structure.q.transpose();
                if max_abs(&skew) > 1.0e-12 * (1.0 + max_abs(&structure.q)) {
                    return Err(Error::InvalidInput(
                        "conservative classification requires skew-symmetric Q".into(),
                    ));
                }
            }
            Classification::Dissipative => {
                let sym = (&structure.q + structure.q.transpose()) * 0.5;
                let eig = nalgebra::linalg::SymmetricEigen::new(sym);
                let tol = 1.0e-10 * (1.0 + max_abs(&structure.q));
                if eig.eigenvalues.iter().any(|l| *l > tol) {
                    return Err(Error::InvalidInput(
                        "dissipative classification requires negative semidefinite Q".into(),
                    ));
                }
            }
            Classification::Gradient => {
                let diff = &structure.q + DMatrix::<f64>::identity(d, d);
                if max_abs(&diff) > 1.0e-12 {
                    return Err(Error::InvalidInput(
                        "gradient classification requires Q = -I".into(),
                    ));
                }
            }
            Classification::Generic => {}
        }

        let own_probes;
        let probes = if probes.is_empty() {
            let mut rng = SplitMix64::new(0x5eed_517e);
            own_probes = rng.vectors(5, d, 1.0);
            &own_probes
        } else {
            probes
        };
        for y in probes {
            if y.len() != d {
                return Err(Error::Dimension {
                    expected: d,
                    found: y.len(),
                });
            }
            let gv = (structure.grad_v)(y);
            let gy = (self.g)(y);
            let qgv = &structure.q * &gv;
            let gtol = 1.0e-10 * (1.0 + gy.amax());
            if (&qgv - &gy).amax() > gtol {
                return Err(Error::InvalidInput(
                    "structure check failed: g != Q grad V at a probe state".into(),
                ));
            }
            if let Some(h) = &self.energy_fn {
                let composed =
                    0.5 * (y.transpose() * &structure.m * y)[(0, 0)] + (structure.v)(y);
                let hv = h(y);
                if libm::fabs(hv - composed) > 1.0e-10 * (1.0 + libm::fabs(hv)) {
                    return Err(Error::InvalidInput(
                        "structure check failed: H != y'My/2 + V at a probe state".into(),
                    ));
                }
            }
            check_gradient(&structure.v, &gv, y, "V")?;
        }

        self.structure = Some(structure);
        self.classification = classification;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn classification(&self) -> Classification {
        self.classification
    }

    pub fn structure(&self) -> Option<&Structure> {
        self.structure.as_ref()
    }

    pub fn apply_g(&self, y: &DVector<f64>) -> DVector<f64> {
        (self.g)(y)
    }

    pub fn g(&self) -> &StateFn {
        &self.g
    }

    pub fn has_energy(&self) -> bool {
        self.energy_fn.is_some() || self.structure.is_some()
    }

    /// Evaluates the energy: the user-supplied `H` when present, else
    /// `y'My/2 + V(y)` from the structure.
    pub fn energy(&self, y: &DVector<f64>) -> Option<f64> {
        if let Some(h) = &self.energy_fn {
            return Some(h(y));
        }
        self.structure
            .as_ref()
            .map(|s| 0.5 * (y.transpose() * &s.m * y)[(0, 0)] + (s.v)(y))
    }
}

/// Central-difference check of an analytic gradient, 1e-6 relative.
pub(crate) fn check_gradient(
    v: &ScalarFn,
    grad: &DVector<f64>,
    y: &DVector<f64>,
    name: &str,
) -> Result<()> {
    let scale = 1.0 + grad.amax();
    for i in 0..y.len() {
        let eps = 1.0e-6 * (1.0 + libm::fabs(y[i]));
        let mut yp = y.clone();
        let mut ym = y.clone();
        yp[i] += eps;
        ym[i] -= eps;
        let fd = (v(&yp) - v(&ym)) / (2.0 * eps);
        if libm::fabs(fd - grad[i]) > 1.0e-6 * scale {
            return Err(Error::InvalidInput(format!(
                "gradient of {name} disagrees with finite differences (component {i})"
            )));
        }
    }
    Ok(())
}

/// Order, stepsize and fixed-point controls of a collocation run.
#[derive(Debug, Clone)]
pub struct CollocationScheme {
    r: usize,
    h: f64,
    basis: OrthonormalBasis,
    quadrature: QuadratureRule,
    tolerance: f64,
    max_iterations: u32,
}

impl CollocationScheme {
    /// `r` collocation stages with stepsize `h`. Defaults follow the
    /// reference experiments: tolerance 1e-16 (i.e. iterate to roundoff)
    /// and at most 5 fixed-point sweeps.
    pub fn new(r: usize, h: f64) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidInput(format!("stepsize h={h} must be positive")));
        }
        Ok(Self {
            r,
            h,
            basis: legendre_basis(r)?,
            quadrature: gauss_rule(r)?,
            tolerance: 1.0e-16,
            max_iterations: 5,
        })
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_max_iterations(mut self, max_iterations: u32) -> Self {
        self.max_iterations = max_iterations;
        self
    }

    pub fn with_stepsize(mut self, h: f64) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidInput(format!("stepsize h={h} must be positive")));
        }
        self.h = h;
        Ok(self)
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn basis(&self) -> &OrthonormalBasis {
        &self.basis
    }

    pub fn quadrature(&self) -> &QuadratureRule {
        &self.quadrature
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn max_iterations(&self) -> u32 {
        self.max_iterations
    }
}

/// `(i+k)! / (k! (i-k)!)`, evaluated multiplicatively.
fn factorial_ratio(i: usize, k: usize) -> f64 {
    let mut num = 1.0f64;
    for m in (k + 1)..=(i + k) {
        num *= m as f64;
    }
    let mut den = 1.0f64;
    for m in 1..=(i - k) {
        den *= m as f64;
    }
    num / den
}

/// Scalar weights `w_k(s) = sum_(i>=k) sqrt(2i+1) (-1)^(i+k)
/// (i+k)!/(k!(i-k)!) p_i(s)` of the closed-form coefficient.
fn phi_weights(basis: &OrthonormalBasis, s: f64) -> Vec<f64> {
    let r = basis.r();
    let p = basis.eval_all(s);
    (0..r)
        .map(|k| {
            (k..r)
                .map(|i| {
                    let sign = if (i + k) % 2 == 0 { 1.0 } else { -1.0 };
                    libm::sqrt(2.0 * i as f64 + 1.0) * sign * factorial_ratio(i, k) * p[i]
                })
                .sum()
        })
        .collect()
}

/// Closed-form stage coefficient `Abar(tau, sigma)(A)` for stepsize `h`.
pub fn coefficient_closed_form(
    a: &DMatrix<f64>,
    h: f64,
    basis: &OrthonormalBasis,
    tau: f64,
    sigma: f64,
) -> Result<DMatrix<f64>> {
    let r = basis.r();
    let table = phi_table(&(a * (tau * h)), r)?;
    let w = phi_weights(basis, sigma);
    let d = a.nrows();
    let mut acc = DMatrix::<f64>::zeros(d, d);
    let mut tau_pow = 1.0;
    for (k, wk) in w.iter().enumerate() {
        acc += table.value(k + 1) * (tau_pow * wk);
        tau_pow *= tau;
    }
    Ok(acc)
}

/// Direct composite-Gauss quadrature of the defining integral
/// `int_0^1 e^((1-xi) tau h A) P(xi tau, sigma) d xi`.
///
/// This is the verification path for the closed form above; the two must
/// agree to 1e-10 on well-scaled arguments.
pub fn coefficient_quadrature(
    a: &DMatrix<f64>,
    h: f64,
    basis: &OrthonormalBasis,
    tau: f64,
    sigma: f64,
    panels: usize,
) -> Result<DMatrix<f64>> {
    let rule = gauss_rule(10)?;
    let d = a.nrows();
    let mut acc = DMatrix::<f64>::zeros(d, d);
    let width = 1.0 / panels as f64;
    for p in 0..panels {
        let left = p as f64 * width;
        for (c, b) in rule.nodes().iter().zip(rule.weights()) {
            let xi = left + c * width;
            let kernel = projection_kernel(basis, xi * tau, sigma);
            let e = crate::matfun::expm(&(a * ((1.0 - xi) * tau * h)))?;
            acc += e * (b * width * kernel);
        }
    }
    Ok(acc)
}

/// Precomputed propagators and stage coefficients for one `(A, h, r)`.
///
/// Tables depend only on that triple and are reused across every step of a
/// constant-stepsize run.
pub struct CoefficientTable {
    r: usize,
    h: f64,
    stage_propagators: Vec<DMatrix<f64>>,
    end_propagator: DMatrix<f64>,
    stage_coeffs: Vec<Vec<DMatrix<f64>>>,
    end_coeffs: Vec<DMatrix<f64>>,
}

impl CoefficientTable {
    pub fn r(&self) -> usize {
        self.r
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// `e^(ci h A)`.
    pub fn stage_propagator(&self, i: usize) -> &DMatrix<f64> {
        &self.stage_propagators[i]
    }

    /// `e^(h A)`.
    pub fn end_propagator(&self) -> &DMatrix<f64> {
        &self.end_propagator
    }

    /// `Abar(ci, cj)`.
    pub fn stage_coefficient(&self, i: usize, j: usize) -> &DMatrix<f64> {
        &self.stage_coeffs[i][j]
    }

    /// `Abar(1, cj)`.
    pub fn end_coefficient(&self, j: usize) -> &DMatrix<f64> {
        &self.end_coeffs[j]
    }

    /// Largest infinity norm over all stored stage coefficients.
    pub fn coefficient_bound(&self) -> f64 {
        let mut best = 0.0f64;
        for row in &self.stage_coeffs {
            for m in row {
                best = best.max(inf_norm(m));
            }
        }
        for m in &self.end_coeffs {
            best = best.max(inf_norm(m));
        }
        best
    }
}

/// One row of the table: propagator and coefficients at abscissa `tau`.
fn coefficient_row(
    a: &DMatrix<f64>,
    h: f64,
    basis: &OrthonormalBasis,
    rule: &QuadratureRule,
    tau: f64,
) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
    let r = basis.r();
    let table = phi_table(&(a * (tau * h)), r)?;
    if (0..=r).any(|k| table.value(k).iter().any(|x| !x.is_finite())) {
        return Err(Error::Numeric(format!(
            "phi-bar table is non-finite at tau={tau}"
        )));
    }
    let propagator = table.value(0).clone();
    let d = a.nrows();
    let mut coeffs = Vec::with_capacity(rule.r());
    for &sigma in rule.nodes() {
        let w = phi_weights(basis, sigma);
        let mut acc = DMatrix::<f64>::zeros(d, d);
        let mut tau_pow = 1.0;
        for (k, wk) in w.iter().enumerate() {
            acc += table.value(k + 1) * (tau_pow * wk);
            tau_pow *= tau;
        }
        coeffs.push(acc);
    }
    Ok((propagator, coeffs))
}

/// Builds the full coefficient table of the scheme for this system.
pub fn build_coefficients(
    system: &SemilinearSystem,
    scheme: &CollocationScheme,
) -> Result<CoefficientTable> {
    build_coefficients_for(system.a(), scheme)
}

pub(crate) fn build_coefficients_for(
    a: &DMatrix<f64>,
    scheme: &CollocationScheme,
) -> Result<CoefficientTable> {
    let rule = scheme.quadrature();
    let mut stage_propagators = Vec::with_capacity(rule.r());
    let mut stage_coeffs = Vec::with_capacity(rule.r());
    for &ci in rule.nodes() {
        let (prop, coeffs) = coefficient_row(a, scheme.h(), scheme.basis(), rule, ci)?;
        stage_propagators.push(prop);
        stage_coeffs.push(coeffs);
    }
    let (end_propagator, end_coeffs) = coefficient_row(a, scheme.h(), scheme.basis(), rule, 1.0)?;
    Ok(CoefficientTable {
        r: scheme.r(),
        h: scheme.h(),
        stage_propagators,
        end_propagator,
        stage_coeffs,
        end_coeffs,
    })
}

/// Fixed-point iteration record for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    /// Sweeps performed.
    pub iterations: u32,
    /// Max-norm of the last stage update.
    pub residual: f64,
    /// Whether the update reached the tolerance (or the roundoff floor)
    /// within the iteration budget.
    pub converged: bool,
}

/// Output of one collocation step.
pub struct StepResult {
    pub y1: DVector<f64>,
    /// Converged stage values at the quadrature nodes.
    pub stages: Vec<DVector<f64>>,
    /// `g` evaluated at the converged stages (reused by dense output).
    pub g_stages: Vec<DVector<f64>>,
    pub diagnostics: StepDiagnostics,
}

/// Advances the system one step of size `scheme.h()` from `y0`.
///
/// Stages are iterated jointly from the free-flight seed `e^(ci h A) y0`;
/// a step that exhausts its sweep budget is still returned, flagged via
/// [`StepDiagnostics::converged`].
pub fn step(
    system: &SemilinearSystem,
    scheme: &CollocationScheme,
    table: &CoefficientTable,
    y0: &DVector<f64>,
) -> Result<StepResult> {
    if y0.len() != system.dim() {
        return Err(Error::Dimension {
            expected: system.dim(),
            found: y0.len(),
        });
    }
    let r = scheme.r();
    let h = scheme.h();
    let rule = scheme.quadrature();
    let nodes = rule.nodes();
    let weights = rule.weights();

    let seeds: Vec<DVector<f64>> = (0..r).map(|i| table.stage_propagator(i) * y0).collect();
    let mut stages = seeds.clone();
    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0u32;

    while iterations < scheme.max_iterations() {
        iterations += 1;
        let g_now: Vec<DVector<f64>> = stages.iter().map(|y| system.apply_g(y)).collect();
        if g_now.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
            return Err(Error::Numeric("g evaluated non-finite at a stage".into()));
        }
        let mut delta = 0.0f64;
        let mut scale = 0.0f64;
        let mut next = Vec::with_capacity(r);
        for i in 0..r {
            let mut y = seeds[i].clone();
            for j in 0..r {
                y += table.stage_coefficient(i, j) * &g_now[j] * (nodes[i] * h * weights[j]);
            }
            delta = delta.max((&y - &stages[i]).amax());
            scale = scale.max(y.amax());
            next.push(y);
        }
        stages = next;
        residual = delta;
        let floor = 64.0 * f64::EPSILON * (1.0 + scale);
        if delta <= scheme.tolerance().max(floor) {
            converged = true;
            break;
        }
    }

    let g_stages: Vec<DVector<f64>> = stages.iter().map(|y| system.apply_g(y)).collect();
    let mut y1 = table.end_propagator() * y0;
    for j in 0..r {
        y1 += table.end_coefficient(j) * &g_stages[j] * (h * weights[j]);
    }
    if y1.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("step produced a non-finite state".into()));
    }
    Ok(StepResult {
        y1,
        stages,
        g_stages,
        diagnostics: StepDiagnostics {
            iterations,
            residual,
            converged,
        },
    })
}

/// Evaluates the stage function `u(tau)` of a completed step,
/// `tau in [0, 1]`; `u(0) = y0` and `u(1) = y1`.
///
/// Coefficients at the requested `tau` are built on demand from the same
/// closed form as the stage table.
pub fn dense_output(
    system: &SemilinearSystem,
    scheme: &CollocationScheme,
    y0: &DVector<f64>,
    result: &StepResult,
    tau: f64,
) -> Result<DVector<f64>> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidInput(format!("tau={tau} outside [0, 1]")));
    }
    let (propagator, coeffs) = coefficient_row(
        system.a(),
        scheme.h(),
        scheme.basis(),
        scheme.quadrature(),
        tau,
    )?;
    let mut u = propagator * y0;
    let weights = scheme.quadrature().weights();
    for (j, coeff) in coeffs.iter().enumerate() {
        u += coeff * &result.g_stages[j] * (tau * scheme.h() * weights[j]);
    }
    Ok(u)
}

/// Trajectory record of a constant-stepsize run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    /// Grid `t_n = n h`, including `t_0 = 0`.
    pub times: Vec<f64>,
    /// States at the grid points, `y_0` first.
    pub states: Vec<DVector<f64>>,
    /// `H(y_n)` when the system has an energy, one value per grid point.
    pub energies: Option<Vec<f64>>,
    /// Fixed-point sweeps per step.
    pub iterations: Vec<u32>,
    /// Final stage residual per step.
    pub residuals: Vec<f64>,
    /// Indices of steps whose fixed point did not converge in budget.
    pub nonconverged: Vec<usize>,
}

impl RunResult {
    pub fn final_state(&self) -> &DVector<f64> {
        self.states
            .last()
            .expect("run holds at least the initial state")
    }
}

/// Integrates over `[0, t_end]` with `ceil(t_end / h)` steps of the
/// scheme, reusing one coefficient table.
pub fn integrate(
    system: &SemilinearSystem,
    scheme: &CollocationScheme,
    y0: &DVector<f64>,
    t_end: f64,
) -> Result<RunResult> {
    if !(t_end > 0.0) {
        return Err(Error::InvalidInput(format!("t_end={t_end} must be positive")));
    }
    let table = build_coefficients(system, scheme)?;
    let steps = libm::ceil(t_end / scheme.h() - 1.0e-9) as usize;
    let mut result = RunResult {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        energies: system.has_energy().then(|| Vec::with_capacity(steps + 1)),
        iterations: Vec::with_capacity(steps),
        residuals: Vec::with_capacity(steps),
        nonconverged: Vec::new(),
    };
    let mut y = y0.clone();
    push_state(system, scheme.h(), &mut result, 0, &y);
    for n in 0..steps {
        let out = step(system, scheme, &table, &y)?;
        y = out.y1;
        push_state(system, scheme.h(), &mut result, n + 1, &y);
        result.iterations.push(out.diagnostics.iterations);
        result.residuals.push(out.diagnostics.residual);
        if !out.diagnostics.converged {
            result.nonconverged.push(n);
        }
    }
    Ok(result)
}

fn push_state(
    system: &SemilinearSystem,
    h: f64,
    result: &mut RunResult,
    n: usize,
    y: &DVector<f64>,
) {
    result.times.push(n as f64 * h);
    if let Some(energies) = result.energies.as_mut() {
        energies.push(system.energy(y).expect("energy present"));
    }
    result.states.push(y.clone());
}

/// Diagnostic estimate of the contraction condition for the stage fixed
/// point: `h < min(1/(M0 D1), R/(M0 D0), 1)` with `M0` a bound on the
/// stage coefficients and `D0`, `D1` local bounds on `g` and its Jacobian.
///
/// Purely advisory; the estimates come from the built table and finite
/// differences near the trajectory seeds, never certified bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepsizeAdvisory {
    /// `g` vanished at every probe: any stepsize contracts.
    pub unconditional: bool,
    /// `M0`: max infinity-norm over the stage coefficient table.
    pub coefficient_bound: f64,
    /// `D0`: max `||g||` over the probe states.
    pub gradient_bound: f64,
    /// `D1`: finite-difference estimate of the local Lipschitz constant.
    pub lipschitz: f64,
    /// Radius of the probe ball around the free-flight seeds.
    pub radius: f64,
    /// Estimated stepsize threshold `min(1/(M0 D1), R/(M0 D0), 1)`.
    pub stepsize_limit: f64,
    /// Estimated contraction factor `beta = h M0 D1` at the scheme's `h`.
    pub contraction_factor: f64,
}

impl StepsizeAdvisory {
    /// True when the estimated fixed-point iteration may fail to contract.
    pub fn warns(&self) -> bool {
        !self.unconditional && self.contraction_factor >= 1.0
    }
}

pub fn stepsize_guard(
    system: &SemilinearSystem,
    scheme: &CollocationScheme,
    y0: &DVector<f64>,
) -> Result<StepsizeAdvisory> {
    let table = build_coefficients(system, scheme)?;
    let m0 = table.coefficient_bound();
    let radius = 1.0f64.max(y0.amax());

    let mut centers: Vec<DVector<f64>> = (0..scheme.r())
        .map(|i| table.stage_propagator(i) * y0)
        .collect();
    centers.push(y0.clone());

    let mut rng = SplitMix64::new(0xd1a6_0000);
    let mut d0 = 0.0f64;
    let mut d1 = 0.0f64;
    for center in &centers {
        let gc = system.apply_g(center);
        d0 = d0.max(gc.amax());
        for _ in 0..4 {
            let dir = rng.vector(center.len(), 1.0);
            let norm = dir.amax().max(1.0e-300);
            let eps = 1.0e-4 * radius;
            let probe = center + &dir * (eps / norm);
            let gp = system.apply_g(&probe);
            d0 = d0.max(gp.amax());
            d1 = d1.max((&gp - &gc).amax() / eps);
        }
    }

    let tiny = 1.0e-14;
    let unconditional = d0 <= tiny && d1 <= tiny;
    let lip_limit = if m0 * d1 > 0.0 {
        1.0 / (m0 * d1)
    } else {
        f64::INFINITY
    };
    let ball_limit = if m0 * d0 > 0.0 {
        radius / (m0 * d0)
    } else {
        f64::INFINITY
    };
    let stepsize_limit = lip_limit.min(ball_limit).min(1.0);
    Ok(StepsizeAdvisory {
        unconditional,
        coefficient_bound: m0,
        gradient_bound: d0,
        lipschitz: d1,
        radius,
        stepsize_limit,
        contraction_factor: scheme.h() * m0 * d1,
    })
}

/// Formats the advisory in one line for report headers.
pub fn advisory_summary(a: &StepsizeAdvisory) -> String {
    if a.unconditional {
        "fixed point contracts unconditionally (g vanishes near the trajectory)".into()
    } else {
        format!(
            "estimated stepsize threshold {:.3e}, contraction factor {:.3e}{}",
            a.stepsize_limit,
            a.contraction_factor,
            if a.warns() { " (WARNING: >= 1)" } else { "" }
        )
    }
}
