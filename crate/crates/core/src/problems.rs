//! Benchmark problems: the Duffing oscillator, the averaged wind-induced
//! oscillation system, the pseudospectral semidiscretization of a cubic
//! Schrodinger equation, and diagonal stiff gradient flows.
//!
//! Each constructor returns a [`ProblemInstance`] whose structural claims
//! (`A = QM`, `g = Q grad V`, gradient consistency) are verified at
//! build time, together with a reference-solution handle.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::ecr::{Classification, SemilinearSystem, Structure};
use crate::elliptic::jacobi_elliptic;
use crate::error::{Error, Result};
use crate::oscillatory::SecondOrderSystem;
use crate::reference::{dopri5, AdaptiveOptions};
use crate::{ScalarFn, StateFn};

/// How exact states are obtained for error measurements.
pub enum ReferenceSolution {
    /// Closed-form solution (possibly via special functions).
    ClosedForm(Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>),
    /// Fine-tolerance adaptive integration of the same right-hand side.
    FineIntegration { rtol: f64, atol: f64 },
    /// No independent solution: studies compare against the same method
    /// at a much smaller stepsize.
    SelfConvergence,
}

/// A named benchmark system with initial state and reference handle.
pub struct ProblemInstance {
    pub name: String,
    pub params: Vec<(String, f64)>,
    pub system: SemilinearSystem,
    /// Second-order form where one exists (feeds the TCr/RKN methods).
    pub second_order: Option<SecondOrderSystem>,
    pub initial_state: DVector<f64>,
    pub reference: ReferenceSolution,
}

impl ProblemInstance {
    /// Exact (or fine-tolerance) state at time `t`, `None` for
    /// self-convergence problems.
    pub fn reference_state(&self, t: f64) -> Result<Option<DVector<f64>>> {
        match &self.reference {
            ReferenceSolution::ClosedForm(f) => Ok(Some(f(t))),
            ReferenceSolution::FineIntegration { rtol, atol } => {
                if t == 0.0 {
                    return Ok(Some(self.initial_state.clone()));
                }
                let opts = AdaptiveOptions {
                    rtol: *rtol,
                    atol: *atol,
                    ..Default::default()
                };
                let a = self.system.a().clone();
                let g = self.system.g().clone();
                let y = dopri5(
                    move |_, y: &DVector<f64>| &a * y + g(y),
                    0.0,
                    &self.initial_state,
                    t,
                    &opts,
                )?;
                Ok(Some(y))
            }
            ReferenceSolution::SelfConvergence => Ok(None),
        }
    }

    pub fn reference_kind(&self) -> &'static str {
        match &self.reference {
            ReferenceSolution::ClosedForm(_) => "closed-form",
            ReferenceSolution::FineIntegration { .. } => "fine-integration",
            ReferenceSolution::SelfConvergence => "self-convergence",
        }
    }
}

/// Duffing oscillator `q'' + (omega^2 + k^2) q = 2 k^2 q^3` in first-order
/// form, started at `(0, omega)`; exact solution `q(t) = sn(omega t |
/// (k/omega)^2)`.
pub fn duffing(omega: f64, k: f64) -> Result<ProblemInstance> {
    if !(omega > 0.0) {
        return Err(Error::InvalidInput(format!("duffing requires omega > 0, got {omega}")));
    }
    if !(0.0..omega).contains(&k) {
        return Err(Error::InvalidInput(format!(
            "duffing requires 0 <= k < omega (elliptic modulus below 1), got k={k}"
        )));
    }
    let w2k2 = omega * omega + k * k;
    let k2 = k * k;
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -w2k2, 0.0]);
    let g: StateFn = Arc::new(move |y: &DVector<f64>| {
        DVector::from_vec(vec![0.0, 2.0 * k2 * y[0].powi(3)])
    });
    let energy: ScalarFn = Arc::new(move |y: &DVector<f64>| {
        0.5 * y[1] * y[1] + 0.5 * w2k2 * y[0] * y[0] - 0.5 * k2 * y[0].powi(4)
    });
    let structure = Structure {
        q: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
        m: DMatrix::from_row_slice(2, 2, &[w2k2, 0.0, 0.0, 1.0]),
        grad_v: Arc::new(move |y: &DVector<f64>| {
            DVector::from_vec(vec![-2.0 * k2 * y[0].powi(3), 0.0])
        }),
        v: Arc::new(move |y: &DVector<f64>| -0.5 * k2 * y[0].powi(4)),
    };
    let probes = probe_states(2, omega);
    let system = SemilinearSystem::new(a, g)?
        .with_energy(energy)
        .with_structure(structure, Classification::Conservative, &probes)?;

    let second_order = SecondOrderSystem::new(
        DMatrix::from_element(1, 1, w2k2),
        Arc::new(move |q: &DVector<f64>| DVector::from_vec(vec![-2.0 * k2 * q[0].powi(3)])),
        Arc::new(move |q: &DVector<f64>| -0.5 * k2 * q[0].powi(4)),
        &probe_states(1, 1.0),
    )?;

    let m_ell = (k / omega) * (k / omega);
    let reference: Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync> = Arc::new(move |t: f64| {
        let j = jacobi_elliptic(omega * t, m_ell).expect("valid elliptic parameter");
        DVector::from_vec(vec![j.sn, omega * j.cn * j.dn])
    });
    Ok(ProblemInstance {
        name: "duffing".into(),
        params: vec![("omega".into(), omega), ("k".into(), k)],
        system,
        second_order: Some(second_order),
        initial_state: DVector::from_vec(vec![0.0, omega]),
        reference: ReferenceSolution::ClosedForm(reference),
    })
}

/// Averaged wind-induced oscillation system with
/// `Q = [[-cos t, -sin t], [sin t, -cos t]]`, `M = rho I`; conservative at
/// `theta = pi/2`, dissipative below. (The original parameter `r` is
/// exposed as `rho` to avoid clashing with the collocation order.)
pub fn wind(theta: f64, rho: f64) -> Result<ProblemInstance> {
    let half_pi = 0.5 * core::f64::consts::PI;
    if !(0.0..=half_pi).contains(&theta) {
        return Err(Error::InvalidInput(format!(
            "wind requires 0 <= theta <= pi/2, got {theta}"
        )));
    }
    if !(rho >= 0.0) {
        return Err(Error::InvalidInput(format!("wind requires rho >= 0, got {rho}")));
    }
    let (s, c) = (libm::sin(theta), libm::cos(theta));
    let q_mat = DMatrix::from_row_slice(2, 2, &[-c, -s, s, -c]);
    let m_mat = DMatrix::from_row_slice(2, 2, &[rho, 0.0, 0.0, rho]);
    let a = &q_mat * &m_mat;
    // Q grad V collapses to a theta-independent quadratic vector field.
    let g: StateFn = Arc::new(move |x: &DVector<f64>| {
        DVector::from_vec(vec![x[0] * x[1], 0.5 * (x[0] * x[0] - x[1] * x[1])])
    });
    let v: ScalarFn = Arc::new(move |x: &DVector<f64>| {
        -0.5 * s * (x[0] * x[1] * x[1] - x[0].powi(3) / 3.0)
            + 0.5 * c * (-x[0] * x[0] * x[1] + x[1].powi(3) / 3.0)
    });
    let grad_v: StateFn = Arc::new(move |x: &DVector<f64>| {
        DVector::from_vec(vec![
            -0.5 * s * (x[1] * x[1] - x[0] * x[0]) - c * x[0] * x[1],
            -s * x[0] * x[1] + 0.5 * c * (x[1] * x[1] - x[0] * x[0]),
        ])
    });
    let v_for_h = v.clone();
    let energy: ScalarFn = Arc::new(move |x: &DVector<f64>| {
        0.5 * rho * (x[0] * x[0] + x[1] * x[1]) + v_for_h(x)
    });
    let classification = if theta == half_pi {
        Classification::Conservative
    } else {
        Classification::Dissipative
    };
    let structure = Structure {
        q: q_mat,
        m: m_mat,
        grad_v,
        v,
    };
    let probes = probe_states(2, 1.0);
    let system = SemilinearSystem::new(a, g)?
        .with_energy(energy)
        .with_structure(structure, classification, &probes)?;
    Ok(ProblemInstance {
        name: "wind".into(),
        params: vec![("theta".into(), theta), ("rho".into(), rho)],
        system,
        second_order: None,
        initial_state: DVector::from_vec(vec![0.0, 1.0]),
        reference: ReferenceSolution::FineIntegration {
            rtol: 1.0e-13,
            atol: 1.0e-13,
        },
    })
}

/// Pseudospectral second-derivative matrix on the periodic grid
/// `x_j = j L / N` with `mu = 2 pi / L`.
pub fn pseudospectral_d2(n: usize) -> DMatrix<f64> {
    let length = 4.0 * libm::sqrt(2.0) * core::f64::consts::PI;
    let mu = 2.0 * core::f64::consts::PI / length;
    let mut d2 = DMatrix::<f64>::zeros(n, n);
    let half = (n / 2) as f64;
    for j in 0..n {
        for k in 0..n {
            if j == k {
                d2[(j, k)] = -mu * mu * (2.0 * half * half + 1.0) / 6.0;
            } else {
                let sign = if (j + k) % 2 == 0 { -1.0 } else { 1.0 };
                let arg = core::f64::consts::PI * (j as f64 - k as f64) / n as f64;
                d2[(j, k)] = 0.5 * mu * mu * sign / libm::pow(libm::sin(arg), 2.0);
            }
        }
    }
    d2
}

/// Cubic Schrodinger equation `i psi_t + psi_xx + 2 |psi|^2 psi = 0` on a
/// periodic grid of `n` points, realified as `y = (p, q)` with
/// `psi = p + i q` and `psi(x, 0) = 0.5 + 0.025 cos(mu x)`.
pub fn nls_semidiscrete(n: usize) -> Result<ProblemInstance> {
    if n % 2 != 0 || n < 8 {
        return Err(Error::InvalidInput(format!(
            "nls grid size must be even and >= 8, got {n}"
        )));
    }
    let d2 = pseudospectral_d2(n);
    let dim = 2 * n;
    let mut a = DMatrix::<f64>::zeros(dim, dim);
    let mut q_mat = DMatrix::<f64>::zeros(dim, dim);
    let mut m_mat = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..n {
        q_mat[(i, n + i)] = -1.0;
        q_mat[(n + i, i)] = 1.0;
        for j in 0..n {
            a[(i, n + j)] = -d2[(i, j)];
            a[(n + i, j)] = d2[(i, j)];
            m_mat[(i, j)] = d2[(i, j)];
            m_mat[(n + i, n + j)] = d2[(i, j)];
        }
    }

    let g: StateFn = Arc::new(move |y: &DVector<f64>| {
        let n = y.len() / 2;
        let mut out = DVector::zeros(2 * n);
        for i in 0..n {
            let (p, q) = (y[i], y[n + i]);
            let norm2 = p * p + q * q;
            out[i] = -2.0 * norm2 * q;
            out[n + i] = 2.0 * norm2 * p;
        }
        out
    });
    let v: ScalarFn = Arc::new(move |y: &DVector<f64>| {
        let n = y.len() / 2;
        0.5 * (0..n)
            .map(|i| {
                let norm2 = y[i] * y[i] + y[n + i] * y[n + i];
                norm2 * norm2
            })
            .sum::<f64>()
    });
    let grad_v: StateFn = Arc::new(move |y: &DVector<f64>| {
        let n = y.len() / 2;
        let mut out = DVector::zeros(2 * n);
        for i in 0..n {
            let (p, q) = (y[i], y[n + i]);
            let norm2 = p * p + q * q;
            out[i] = 2.0 * norm2 * p;
            out[n + i] = 2.0 * norm2 * q;
        }
        out
    });
    let d2_for_h = d2.clone();
    let energy: ScalarFn = Arc::new(move |y: &DVector<f64>| {
        let n = y.len() / 2;
        let p = y.rows(0, n).into_owned();
        let q = y.rows(n, n).into_owned();
        let quartic: f64 = (0..n)
            .map(|i| {
                let norm2 = p[i] * p[i] + q[i] * q[i];
                norm2 * norm2
            })
            .sum();
        0.5 * (p.transpose() * &d2_for_h * &p)[(0, 0)]
            + 0.5 * (q.transpose() * &d2_for_h * &q)[(0, 0)]
            + 0.5 * quartic
    });

    let structure = Structure {
        q: q_mat,
        m: m_mat,
        grad_v,
        v,
    };
    let probes = probe_states(dim, 0.5);
    let system = SemilinearSystem::new(a, g)?
        .with_energy(energy)
        .with_structure(structure, Classification::Conservative, &probes)?;

    let length = 4.0 * libm::sqrt(2.0) * core::f64::consts::PI;
    let mu = 2.0 * core::f64::consts::PI / length;
    let mut y0 = DVector::<f64>::zeros(dim);
    for j in 0..n {
        let x = j as f64 * length / n as f64;
        y0[j] = 0.5 + 0.025 * libm::cos(mu * x);
    }
    Ok(ProblemInstance {
        name: "nls".into(),
        params: vec![("n".into(), n as f64)],
        system,
        second_order: None,
        initial_state: y0,
        reference: ReferenceSolution::SelfConvergence,
    })
}

/// Potential choices for the stiff gradient testbed.
pub enum Potential {
    /// `V = 0`: the flow is `y1 = e^(-t M) y0` exactly.
    Zero,
    /// Quartic double well `V(y) = sum (y_i^2 - 1)^2 / 4`.
    QuarticDoubleWell,
    Custom {
        v: ScalarFn,
        grad_v: StateFn,
    },
}

/// Stiff gradient system `y' = -grad U(y)`, `U = y'My/2 + V(y)` with
/// `M = diag(spectrum)`, classified as a gradient flow (`Q = -I`).
pub fn stiff_gradient(spectrum: &[f64], potential: Potential) -> Result<ProblemInstance> {
    if spectrum.is_empty() {
        return Err(Error::InvalidInput("spectrum must be nonempty".into()));
    }
    if spectrum.iter().any(|l| *l < 0.0 || !l.is_finite()) {
        return Err(Error::InvalidInput(
            "spectrum entries must be finite and nonnegative".into(),
        ));
    }
    let d = spectrum.len();
    let m_mat = DMatrix::from_diagonal(&DVector::from_row_slice(spectrum));
    let a = -m_mat.clone();
    let linear_flow = matches!(potential, Potential::Zero);
    let (v, grad_v): (ScalarFn, StateFn) = match potential {
        Potential::Zero => (
            Arc::new(|_: &DVector<f64>| 0.0),
            Arc::new(|y: &DVector<f64>| DVector::zeros(y.len())),
        ),
        Potential::QuarticDoubleWell => (
            Arc::new(|y: &DVector<f64>| {
                0.25 * y.iter().map(|x| (x * x - 1.0) * (x * x - 1.0)).sum::<f64>()
            }),
            Arc::new(|y: &DVector<f64>| y.map(|x| (x * x - 1.0) * x)),
        ),
        Potential::Custom { v, grad_v } => (v, grad_v),
    };

    let grad_v_for_g = grad_v.clone();
    let g: StateFn = Arc::new(move |y: &DVector<f64>| -grad_v_for_g(y));
    let structure = Structure {
        q: -DMatrix::<f64>::identity(d, d),
        m: m_mat.clone(),
        grad_v,
        v: v.clone(),
    };
    let probes = probe_states(d, 1.0);
    let system = SemilinearSystem::new(a, g)?
        .with_structure(structure, Classification::Gradient, &probes)?;

    let reference = if linear_flow {
        let spectrum: Vec<f64> = spectrum.to_vec();
        let y0 = default_gradient_state(d);
        ReferenceSolution::ClosedForm(Arc::new(move |t: f64| {
            DVector::from_iterator(
                spectrum.len(),
                spectrum
                    .iter()
                    .zip(y0.iter())
                    .map(|(l, y)| libm::exp(-l * t) * y),
            )
        }))
    } else {
        ReferenceSolution::SelfConvergence
    };
    Ok(ProblemInstance {
        name: "stiff-gradient".into(),
        params: spectrum
            .iter()
            .enumerate()
            .map(|(i, l)| (format!("lambda{i}"), *l))
            .collect(),
        system,
        second_order: None,
        initial_state: default_gradient_state(d),
        reference,
    })
}

fn default_gradient_state(d: usize) -> DVector<f64> {
    DVector::from_iterator(d, (0..d).map(|i| 1.0 + 0.5 * libm::sin(1.0 + i as f64)))
}

fn probe_states(dim: usize, scale: f64) -> Vec<DVector<f64>> {
    let mut rng = crate::rng::SplitMix64::new(0x9b0b_e500 + dim as u64);
    rng.vectors(4, dim, scale)
}

/// Keyed parameters for the catalog; every problem reads the fields it
/// needs and ignores the rest.
#[derive(Debug, Clone)]
pub struct ProblemParams {
    pub omega: f64,
    pub k: f64,
    pub theta: f64,
    pub rho: f64,
    pub grid: usize,
    pub spectrum: Vec<f64>,
    pub quartic: bool,
}

impl Default for ProblemParams {
    fn default() -> Self {
        Self {
            omega: 5.0,
            k: 0.07,
            theta: 0.5 * core::f64::consts::PI - 1.0e-4,
            rho: 20.0,
            grid: 32,
            spectrum: vec![1.0, 1.0e2, 1.0e4, 1.0e6],
            quartic: false,
        }
    }
}

pub const PROBLEM_NAMES: [&str; 4] = ["duffing", "wind", "nls", "stiff-gradient"];

/// Catalog lookup by name: `duffing`, `wind`, `nls`, `stiff-gradient`.
pub fn by_name(name: &str, params: &ProblemParams) -> Result<ProblemInstance> {
    match name {
        "duffing" => duffing(params.omega, params.k),
        "wind" => wind(params.theta, params.rho),
        "nls" => nls_semidiscrete(params.grid),
        "stiff-gradient" => stiff_gradient(
            &params.spectrum,
            if params.quartic {
                Potential::QuarticDoubleWell
            } else {
                Potential::Zero
            },
        ),
        other => Err(Error::InvalidInput(format!(
            "unknown problem '{other}' (catalog: {PROBLEM_NAMES:?})"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duffing_energy_at_start() {
        let p = duffing(5.0, 0.07).unwrap();
        let h0 = p.system.energy(&p.initial_state).unwrap();
        assert!((h0 - 12.5 - 0.5 * 0.07 * 0.07 * 0.0).abs() < 1e-12);
        assert_eq!(h0, 12.5);
    }

    #[test]
    fn duffing_zero_k_reference_is_sine() {
        let p = duffing(5.0, 0.0).unwrap();
        for t in [0.0, 0.3, 1.7] {
            let y = p.reference_state(t).unwrap().unwrap();
            assert!((y[0] - libm::sin(5.0 * t)).abs() < 1e-12);
            assert!((y[1] - 5.0 * libm::cos(5.0 * t)).abs() < 1e-12);
        }
    }

    #[test]
    fn duffing_rejects_large_modulus() {
        assert!(duffing(5.0, 5.0).is_err());
        assert!(duffing(5.0, 6.0).is_err());
        assert!(duffing(-1.0, 0.0).is_err());
    }

    #[test]
    fn duffing_reference_reproduces_initial_state() {
        let p = duffing(10.0, 0.07).unwrap();
        let y = p.reference_state(0.0).unwrap().unwrap();
        assert!((y - &p.initial_state).amax() < 1e-14);
    }

    #[test]
    fn wind_conservative_case() {
        let half_pi = 0.5 * core::f64::consts::PI;
        let p = wind(half_pi, 20.0).unwrap();
        assert_eq!(p.system.classification(), Classification::Conservative);
        let q = &p.system.structure().unwrap().q;
        assert!((q[(0, 1)] + 1.0).abs() < 1e-12);
        assert!((q[(1, 0)] - 1.0).abs() < 1e-12);
        assert!(q[(0, 0)].abs() < 1e-12);
        // H(x0) = rho/2 + cos(pi/2)/6 = 10 exactly at theta = pi/2.
        let h0 = p.system.energy(&p.initial_state).unwrap();
        assert!((h0 - 10.0).abs() < 1e-12);
    }

    #[test]
    fn wind_dissipative_case() {
        let theta = 0.5 * core::f64::consts::PI - 1.0e-4;
        let p = wind(theta, 20.0).unwrap();
        assert_eq!(p.system.classification(), Classification::Dissipative);
        // Q + Q' = -2 cos(theta) I is negative definite.
        let q = &p.system.structure().unwrap().q;
        let sym = q + q.transpose();
        assert!(sym[(0, 0)] < 0.0);
        assert!((sym[(0, 0)] + 2.0 * libm::cos(theta)).abs() < 1e-14);
        assert!(sym[(0, 1)].abs() < 1e-14);
    }

    #[test]
    fn wind_rejects_out_of_range_angle() {
        assert!(wind(2.0, 20.0).is_err());
        assert!(wind(-0.1, 20.0).is_err());
        assert!(wind(1.0, -1.0).is_err());
    }

    #[test]
    fn nls_diagonal_matches_formula() {
        let n = 16;
        let d2 = pseudospectral_d2(n);
        let length = 4.0 * libm::sqrt(2.0) * core::f64::consts::PI;
        let mu = 2.0 * core::f64::consts::PI / length;
        let expect = -mu * mu * (2.0 * (n as f64 / 2.0).powi(2) + 1.0) / 6.0;
        for j in 0..n {
            assert_eq!(d2[(j, j)], expect);
        }
    }

    #[test]
    fn nls_d2_annihilates_constants_and_is_symmetric() {
        let n = 32;
        let d2 = pseudospectral_d2(n);
        let ones = DVector::from_element(n, 1.0);
        assert!((&d2 * ones).amax() < 1e-10);
        for j in 0..n {
            for k in 0..n {
                assert!((d2[(j, k)] - d2[(k, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nls_rejects_odd_or_tiny_grid() {
        assert!(nls_semidiscrete(7).is_err());
        assert!(nls_semidiscrete(31).is_err());
        assert!(nls_semidiscrete(4).is_err());
    }

    #[test]
    fn nls_energy_translation_invariance() {
        let n = 16;
        let p = nls_semidiscrete(n).unwrap();
        let y = &p.initial_state;
        let h = p.system.energy(y).unwrap();
        // Cyclic grid shift: (p, q)_j -> (p, q)_(j+1 mod n).
        let mut shifted = DVector::<f64>::zeros(2 * n);
        for i in 0..n {
            shifted[(i + 1) % n] = y[i];
            shifted[n + (i + 1) % n] = y[n + i];
        }
        let hs = p.system.energy(&shifted).unwrap();
        assert!((h - hs).abs() < 1e-10 * (1.0 + h.abs()));
    }

    #[test]
    fn stiff_gradient_rejects_negative_spectrum() {
        assert!(stiff_gradient(&[1.0, -2.0], Potential::Zero).is_err());
        assert!(stiff_gradient(&[], Potential::Zero).is_err());
    }

    #[test]
    fn stiff_gradient_closed_form_reference() {
        let p = stiff_gradient(&[1.0, 100.0], Potential::Zero).unwrap();
        let y = p.reference_state(0.5).unwrap().unwrap();
        let y0 = &p.initial_state;
        assert!((y[0] - y0[0] * libm::exp(-0.5)).abs() < 1e-14);
        assert!((y[1] - y0[1] * libm::exp(-50.0)).abs() < 1e-14);
    }

    #[test]
    fn catalog_covers_all_names() {
        let params = ProblemParams {
            grid: 16,
            ..Default::default()
        };
        for name in PROBLEM_NAMES {
            let p = by_name(name, &params).unwrap();
            assert_eq!(p.name, name);
            // Reference handle reproduces the initial state at t = 0.
            if let Some(y) = p.reference_state(0.0).unwrap() {
                assert!((y - &p.initial_state).amax() < 1e-12, "{name}");
            }
        }
        assert!(by_name("foo", &params).is_err());
    }
}
