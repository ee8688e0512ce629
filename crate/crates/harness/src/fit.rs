//! Least-squares order fitting on log-log axes.

use serde::Serialize;

/// Result of fitting `ln(error)` against `ln(T/h)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SlopeFit {
    /// Slope on the `ln(error)` vs `ln(T/h)` axes (negative for a
    /// convergent method).
    pub slope_vs_steps: f64,
    /// Observed order of convergence, `-slope_vs_steps`.
    pub order: f64,
    pub r_squared: f64,
    /// False when the errors sit at roundoff or do not spread enough for
    /// the fit to mean anything.
    pub meaningful: bool,
}

/// Fits the observed convergence order from per-stepsize endpoint errors.
///
/// The fit runs on `ln(error)` against `ln(t_end / h)`; errors below
/// 100 machine epsilons or spreading by less than a factor 4 flag the fit
/// as not meaningful (the slope is still reported).
pub fn fit_order(stepsizes: &[f64], errors: &[f64], t_end: f64) -> SlopeFit {
    assert_eq!(stepsizes.len(), errors.len());
    assert!(stepsizes.len() >= 2, "order fit needs at least two stepsizes");
    let floor = 100.0 * f64::EPSILON;
    let positive = errors.iter().all(|e| *e > 0.0);
    let spread = if positive {
        let max = errors.iter().cloned().fold(f64::MIN, f64::max);
        let min = errors.iter().cloned().fold(f64::MAX, f64::min);
        max / min
    } else {
        1.0
    };
    let meaningful = positive && errors.iter().all(|e| *e > floor) && spread >= 4.0;

    let xs: Vec<f64> = stepsizes.iter().map(|h| (t_end / h).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.max(f64::MIN_POSITIVE).ln()).collect();
    let n = xs.len() as f64;
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    let syy: f64 = ys.iter().map(|y| (y - ym) * (y - ym)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    SlopeFit {
        slope_vs_steps: slope,
        order: -slope,
        r_squared,
        meaningful,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_power_law() {
        let hs = [0.1, 0.05, 0.025, 0.0125];
        let errs: Vec<f64> = hs.iter().map(|h: &f64| 3.0 * h.powi(4)).collect();
        let fit = fit_order(&hs, &errs, 10.0);
        assert!((fit.order - 4.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!(fit.meaningful);
    }

    #[test]
    fn flags_roundoff_floor() {
        let hs = [0.1, 0.05, 0.025];
        let errs = [3.0e-15, 2.5e-15, 3.1e-15];
        let fit = fit_order(&hs, &errs, 10.0);
        assert!(!fit.meaningful);
    }

    #[test]
    fn flags_flat_errors() {
        let hs = [0.1, 0.05, 0.025];
        let errs = [1.0e-6, 1.1e-6, 0.9e-6];
        assert!(!fit_order(&hs, &errs, 10.0).meaningful);
    }
}
