//! Jacobi elliptic functions sn, cn, dn by the arithmetic-geometric mean
//! with the descending Landen transformation.
//!
//! Convention: the second argument is the parameter `m = modulus^2`, so
//! the Duffing reference `q(t) = sn(omega t; k/omega)` is evaluated as
//! `jacobi_elliptic(omega * t, (k/omega)^2)`.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobiElliptic {
    pub sn: f64,
    pub cn: f64,
    pub dn: f64,
}

/// Evaluates `(sn(u|m), cn(u|m), dn(u|m))` for parameter `0 <= m < 1`.
///
/// Accuracy is limited by the argument reduction of the final sines,
/// about `|u| * eps` absolute; for the desk-scale horizons used here that
/// stays below 1e-12.
pub fn jacobi_elliptic(u: f64, m: f64) -> Result<JacobiElliptic> {
    if !(0.0..1.0).contains(&m) {
        return Err(Error::InvalidInput(format!(
            "elliptic parameter m={m} outside [0, 1)"
        )));
    }
    if !u.is_finite() {
        return Err(Error::InvalidInput("elliptic argument must be finite".into()));
    }
    if m == 0.0 {
        return Ok(JacobiElliptic {
            sn: libm::sin(u),
            cn: libm::cos(u),
            dn: 1.0,
        });
    }

    // AGM ladder: a_(n+1) = (a_n + b_n)/2, b_(n+1) = sqrt(a_n b_n).
    let mut a = 1.0f64;
    let mut b = libm::sqrt(1.0 - m);
    let mut scale_a: Vec<f64> = Vec::with_capacity(16);
    let mut scale_c: Vec<f64> = Vec::with_capacity(16);
    scale_a.push(a);
    scale_c.push(libm::sqrt(m));
    let mut n = 0usize;
    while libm::fabs(scale_c[n]) > f64::EPSILON * libm::fabs(a) && n < 60 {
        let an = 0.5 * (a + b);
        let cn = 0.5 * (a - b);
        b = libm::sqrt(a * b);
        a = an;
        n += 1;
        scale_a.push(a);
        scale_c.push(cn);
    }

    // Descending Landen recursion on the amplitude.
    let mut phi = libm::exp2(n as f64) * a * u;
    for i in (1..=n).rev() {
        let s = libm::sin(phi);
        phi = 0.5 * (phi + libm::asin((scale_c[i] / scale_a[i]) * s));
    }
    let sn = libm::sin(phi);
    let cn = libm::cos(phi);
    let dn = libm::sqrt(1.0 - m * sn * sn);
    Ok(JacobiElliptic { sn, cn, dn })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_parameter_reduces_to_trig() {
        for u in [-2.0, 0.0, 0.4, 3.9] {
            let j = jacobi_elliptic(u, 0.0).unwrap();
            assert_eq!(j.sn, libm::sin(u));
            assert_eq!(j.cn, libm::cos(u));
            assert_eq!(j.dn, 1.0);
        }
    }

    #[test]
    fn fundamental_identities() {
        for &m in &[1.0e-4, 0.25, 0.81, 0.999] {
            for i in 0..40 {
                let u = -5.0 + 0.25 * i as f64;
                let j = jacobi_elliptic(u, m).unwrap();
                assert!((j.sn * j.sn + j.cn * j.cn - 1.0).abs() < 1e-13, "m={m} u={u}");
                assert!(
                    (m * j.sn * j.sn + j.dn * j.dn - 1.0).abs() < 1e-13,
                    "m={m} u={u}"
                );
            }
        }
    }

    #[test]
    fn derivative_is_cn_dn() {
        // d/du sn(u|m) = cn(u|m) dn(u|m), via central differences.
        let m = 0.3;
        for &u in &[0.2, 1.1, 2.7] {
            let eps = 1e-6;
            let plus = jacobi_elliptic(u + eps, m).unwrap().sn;
            let minus = jacobi_elliptic(u - eps, m).unwrap().sn;
            let j = jacobi_elliptic(u, m).unwrap();
            assert!(((plus - minus) / (2.0 * eps) - j.cn * j.dn).abs() < 1e-9);
        }
    }

    #[test]
    fn small_parameter_perturbation_of_sine() {
        // For m -> 0: sn(u|m) = sin u - (m/4)(u - sin u cos u) cos u + O(m^2).
        let m = 1e-6;
        for &u in &[0.7, 2.0] {
            let j = jacobi_elliptic(u, m).unwrap();
            let correction = -(m / 4.0) * (u - libm::sin(u) * libm::cos(u)) * libm::cos(u);
            assert!((j.sn - (libm::sin(u) + correction)).abs() < 1e-11);
        }
    }

    #[test]
    fn rejects_bad_parameter() {
        assert!(jacobi_elliptic(1.0, 1.0).is_err());
        assert!(jacobi_elliptic(1.0, -0.1).is_err());
        assert!(jacobi_elliptic(f64::NAN, 0.5).is_err());
    }
}
