//! Reference integrators for oracle solutions: an adaptive embedded
//! Dormand-Prince 5(4) pair for fine-tolerance endpoints, and the
//! classical fixed-step RK4 used as the comparison baseline.
//!
//! Both operate on the whole right-hand side `f(t, y)` and are
//! independent of the collocation machinery.

use alloc::format;
use nalgebra::DVector;

use crate::error::{Error, Result};

/// Controls for [`dopri5`].
#[derive(Debug, Clone, Copy)]
pub struct AdaptiveOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Initial trial step; a heuristic fraction of the interval if `None`.
    pub h_initial: Option<f64>,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        Self {
            rtol: 1.0e-12,
            atol: 1.0e-12,
            max_steps: 10_000_000,
            h_initial: None,
        }
    }
}

impl AdaptiveOptions {
    pub fn with_tolerance(tol: f64) -> Self {
        Self {
            rtol: tol,
            atol: tol,
            ..Self::default()
        }
    }
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 6] = [
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates `y' = f(t, y)` from `(t0, y0)` to `t_end` with the embedded
/// Dormand-Prince 5(4) pair and returns the endpoint state.
pub fn dopri5<F>(
    f: F,
    t0: f64,
    y0: &DVector<f64>,
    t_end: f64,
    opts: &AdaptiveOptions,
) -> Result<DVector<f64>>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    if !(t_end > t0) {
        return Err(Error::InvalidInput(format!(
            "t_end={t_end} must exceed t0={t0}"
        )));
    }
    let span = t_end - t0;
    let mut h = opts.h_initial.unwrap_or(1.0e-3 * span).min(span);
    let mut t = t0;
    let mut y = y0.clone();
    let dim = y0.len();
    let mut steps = 0usize;

    while t < t_end {
        if steps >= opts.max_steps {
            return Err(Error::Numeric(format!(
                "dopri5 exceeded {} steps (stiff problem or tolerance too tight)",
                opts.max_steps
            )));
        }
        steps += 1;
        if t + h > t_end {
            h = t_end - t;
        }

        let mut k: [Option<DVector<f64>>; 7] = Default::default();
        k[0] = Some(f(t, &y));
        for s in 1..7 {
            let mut ys = y.clone();
            for (j, kj) in k.iter().take(s).enumerate() {
                let a = A[s - 1][j];
                if a != 0.0 {
                    ys += kj.as_ref().unwrap() * (a * h);
                }
            }
            k[s] = Some(f(t + C[s] * h, &ys));
        }

        let mut y5 = y.clone();
        let mut err_vec = DVector::<f64>::zeros(dim);
        for (s, ks) in k.iter().enumerate() {
            let ks = ks.as_ref().unwrap();
            if B5[s] != 0.0 {
                y5 += ks * (B5[s] * h);
            }
            let db = B5[s] - B4[s];
            if db != 0.0 {
                err_vec += ks * (db * h);
            }
        }
        if y5.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("dopri5 produced a non-finite state".into()));
        }

        let mut err = 0.0f64;
        for i in 0..dim {
            let scale = opts.atol + opts.rtol * libm::fabs(y[i]).max(libm::fabs(y5[i]));
            let e = err_vec[i] / scale;
            err += e * e;
        }
        err = libm::sqrt(err / dim as f64);

        if err <= 1.0 {
            t += h;
            y = y5;
        }
        let factor = if err > 0.0 {
            0.9 * libm::pow(err, -0.2)
        } else {
            5.0
        };
        h *= factor.clamp(0.2, 5.0);
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::Numeric("dopri5 stepsize collapsed".into()));
        }
    }
    Ok(y)
}

/// One classical fourth-order Runge-Kutta step.
pub fn rk4_step<F>(f: &F, t: f64, y: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * h, &(y + &k1 * (0.5 * h)));
    let k3 = f(t + 0.5 * h, &(y + &k2 * (0.5 * h)));
    let k4 = f(t + h, &(y + &k3 * h));
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_to_tolerance() {
        let y0 = DVector::from_vec(vec![1.0]);
        let y = dopri5(
            |_, y: &DVector<f64>| -y,
            0.0,
            &y0,
            3.0,
            &AdaptiveOptions::with_tolerance(1e-12),
        )
        .unwrap();
        assert!((y[0] - (-3.0f64).exp()).abs() < 1e-11);
    }

    #[test]
    fn harmonic_oscillator_endpoint() {
        let y0 = DVector::from_vec(vec![1.0, 0.0]);
        let y = dopri5(
            |_, y: &DVector<f64>| DVector::from_vec(vec![y[1], -y[0]]),
            0.0,
            &y0,
            10.0,
            &AdaptiveOptions::with_tolerance(1e-12),
        )
        .unwrap();
        assert!((y[0] - libm::cos(10.0)).abs() < 5e-11);
        assert!((y[1] + libm::sin(10.0)).abs() < 5e-11);
    }

    #[test]
    fn rk4_is_exact_for_cubic_time_polynomials() {
        // y' = 3 t^2: RK4 integrates polynomials of degree <= 3 exactly.
        let y0 = DVector::from_vec(vec![0.0]);
        let f = |t: f64, _: &DVector<f64>| DVector::from_vec(vec![3.0 * t * t]);
        let y = rk4_step(&f, 0.0, &y0, 2.0);
        assert!((y[0] - 8.0).abs() < 1e-13);
    }

    #[test]
    fn rejects_reversed_interval() {
        let y0 = DVector::from_vec(vec![1.0]);
        assert!(dopri5(|_, y: &DVector<f64>| -y, 1.0, &y0, 0.5, &Default::default()).is_err());
    }
}
