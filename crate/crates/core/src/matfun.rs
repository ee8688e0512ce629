//! Dense matrix exponential and phi-bar functions.
//!
//! The phi-bar family is the usual exponential-integrator ladder
//!
//! ```text
//! phibar_0(z) = e^z,
//! phibar_k(z) = int_0^1 e^((1-s) z) s^(k-1) / (k-1)! ds,   k >= 1,
//! ```
//!
//! so `phibar_k(0) = 1/k!` and `z phibar_(k+1)(z) = phibar_k(z) - 1/k!`.
//! All coefficient formulas of the collocation methods reduce to these.
//!
//! Evaluation strategy: one scaling-and-squaring Pade exponential of an
//! augmented block matrix yields the whole table `phibar_0..phibar_kmax`
//! at once; symmetric arguments instead go through an eigendecomposition
//! with scalar phi-bar on the spectrum, which stays accurate for the very
//! stiff negative spectra of gradient systems. Target accuracy is 1e-13
//! relative in norm for `||Z|| <= 50` (not configurable per call).

use alloc::format;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Pade order-13 thresholds from the scaling-and-squaring method.
const THETA: [(usize, f64); 5] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
    (13, 5.371920351148152e0),
];

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];

const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];

const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];

pub(crate) fn one_norm(m: &DMatrix<f64>) -> f64 {
    let mut best = 0.0f64;
    for j in 0..m.ncols() {
        let s: f64 = m.column(j).iter().map(|x| libm::fabs(*x)).sum();
        best = best.max(s);
    }
    best
}

pub(crate) fn inf_norm(m: &DMatrix<f64>) -> f64 {
    let mut best = 0.0f64;
    for i in 0..m.nrows() {
        let s: f64 = m.row(i).iter().map(|x| libm::fabs(*x)).sum();
        best = best.max(s);
    }
    best
}

pub(crate) fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, x| a.max(libm::fabs(*x)))
}

pub(crate) fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    let scale = 1.0 + max_abs(m);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if libm::fabs(m[(i, j)] - m[(j, i)]) > tol * scale {
                return false;
            }
        }
    }
    true
}

fn check_square_finite(z: &DMatrix<f64>, who: &str) -> Result<usize> {
    if z.nrows() != z.ncols() {
        return Err(Error::Dimension {
            expected: z.nrows(),
            found: z.ncols(),
        });
    }
    if z.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!("{who}: non-finite entries")));
    }
    Ok(z.nrows())
}

/// Matrix exponential `e^Z` by scaling and squaring with Pade approximants
/// (order chosen from the 1-norm), or by spectral decomposition when `Z`
/// is symmetric.
pub fn expm(z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square_finite(z, "expm")?;
    if is_symmetric(z, 1.0e-14) {
        return Ok(symmetric_fun(z, libm::exp));
    }
    Ok(expm_pade(z))
}

/// Spectral evaluation `f(Z) = V diag(f(lambda)) V^T` for symmetric `Z`.
fn symmetric_fun(z: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = nalgebra::linalg::SymmetricEigen::new(z.clone());
    let d = z.nrows();
    let mut scaled = eig.eigenvectors.clone();
    for j in 0..d {
        let fj = f(eig.eigenvalues[j]);
        scaled.column_mut(j).scale_mut(fj);
    }
    &scaled * eig.eigenvectors.transpose()
}

fn expm_pade(a: &DMatrix<f64>) -> DMatrix<f64> {
    let d = a.nrows();
    let id = DMatrix::<f64>::identity(d, d);
    let norm = one_norm(a);

    for &(m, theta) in THETA.iter().take(4) {
        if norm <= theta {
            let (u, v) = pade_uv(a, m);
            return pade_solve(&u, &v);
        }
    }

    // Pade 13 with scaling by 2^s.
    let theta13 = THETA[4].1;
    let mut s = 0u32;
    if norm > theta13 {
        s = libm::ceil(libm::log2(norm / theta13)) as u32;
    }
    let scaled = a * libm::exp2(-(s as f64));
    let a2 = &scaled * &scaled;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &PADE13;
    let u_inner = &a6 * (b[13] * &a6 + b[11] * &a4 + b[9] * &a2)
        + b[7] * &a6
        + b[5] * &a4
        + b[3] * &a2
        + b[1] * &id;
    let u = &scaled * u_inner;
    let v = &a6 * (b[12] * &a6 + b[10] * &a4 + b[8] * &a2)
        + b[6] * &a6
        + b[4] * &a4
        + b[2] * &a2
        + b[0] * &id;
    let mut r = pade_solve(&u, &v);
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

fn pade_uv(a: &DMatrix<f64>, m: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = a.nrows();
    let id = DMatrix::<f64>::identity(d, d);
    let b: &[f64] = match m {
        3 => &PADE3,
        5 => &PADE5,
        7 => &PADE7,
        _ => &PADE9,
    };
    // Even powers a^0, a^2, a^4, ...
    let a2 = a * a;
    let mut powers = Vec::with_capacity(m / 2 + 1);
    powers.push(id);
    powers.push(a2.clone());
    for _ in 2..=(m / 2) {
        let next = powers.last().unwrap() * &a2;
        powers.push(next);
    }
    let d0 = a.nrows();
    let mut u_inner = DMatrix::<f64>::zeros(d0, d0);
    let mut v = DMatrix::<f64>::zeros(d0, d0);
    for (p, pw) in powers.iter().enumerate() {
        u_inner += b[2 * p + 1] * pw;
        v += b[2 * p] * pw;
    }
    (a * u_inner, v)
}

fn pade_solve(u: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    let lhs = v - u;
    let rhs = v + u;
    lhs.lu().solve(&rhs).expect("Pade denominator is singular")
}

/// Scalar phi-bar: Taylor series near zero, upward recurrence otherwise.
pub(crate) fn phi_scalar(k: usize, z: f64) -> f64 {
    if k == 0 {
        return libm::exp(z);
    }
    if libm::fabs(z) < 0.5 {
        // phibar_k(z) = sum_j z^j / (j + k)!
        let mut term = 1.0 / factorial(k);
        let mut acc = term;
        let mut j = 0usize;
        loop {
            j += 1;
            term *= z / (j + k) as f64;
            acc += term;
            if libm::fabs(term) <= 1.0e-20 * libm::fabs(acc) || j > 60 {
                return acc;
            }
        }
    }
    let mut phi = libm::exp(z);
    let mut fact = 1.0;
    for j in 1..=k {
        phi = (phi - 1.0 / fact) / z;
        fact *= j as f64;
    }
    phi
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, m| acc * m as f64)
}

/// Table of `phibar_0(Z) ... phibar_kmax(Z)` for one argument matrix.
#[derive(Debug, Clone)]
pub struct PhiTable {
    argument: DMatrix<f64>,
    values: Vec<DMatrix<f64>>,
}

impl PhiTable {
    pub fn argument(&self) -> &DMatrix<f64> {
        &self.argument
    }

    pub fn kmax(&self) -> usize {
        self.values.len() - 1
    }

    /// `phibar_k(Z)`; panics if `k` exceeds the table order.
    pub fn value(&self, k: usize) -> &DMatrix<f64> {
        &self.values[k]
    }

    pub fn apply(&self, k: usize, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.argument.nrows() {
            return Err(Error::Dimension {
                expected: self.argument.nrows(),
                found: v.len(),
            });
        }
        Ok(self.value(k) * v)
    }
}

/// Builds `phibar_0..phibar_kmax` of `Z`.
///
/// Symmetric arguments use the spectral route; general ones embed `Z` in a
/// `(kmax+1) d` block companion matrix whose exponential carries the whole
/// ladder in its top block row.
pub fn phi_table(z: &DMatrix<f64>, kmax: usize) -> Result<PhiTable> {
    let d = check_square_finite(z, "phi_table")?;

    if is_symmetric(z, 1.0e-14) {
        let eig = nalgebra::linalg::SymmetricEigen::new(z.clone());
        let vt = eig.eigenvectors.transpose();
        let values = (0..=kmax)
            .map(|k| {
                let mut scaled = eig.eigenvectors.clone();
                for j in 0..d {
                    let f = phi_scalar(k, eig.eigenvalues[j]);
                    scaled.column_mut(j).scale_mut(f);
                }
                &scaled * &vt
            })
            .collect();
        return Ok(PhiTable {
            argument: z.clone(),
            values,
        });
    }

    if kmax == 0 {
        return Ok(PhiTable {
            argument: z.clone(),
            values: alloc::vec![expm_pade(z)],
        });
    }

    // W = [ Z E ; 0 N ] with E = [I 0 ... 0] and N the block upward shift:
    // the top block row of e^W is [ e^Z, phibar_1(Z), ..., phibar_kmax(Z) ].
    let n = d * (kmax + 1);
    let mut w = DMatrix::<f64>::zeros(n, n);
    w.view_mut((0, 0), (d, d)).copy_from(z);
    for block in 0..kmax {
        let col0 = d * (block + 1);
        let row0 = d * block;
        for i in 0..d {
            w[(row0 + i, col0 + i)] = 1.0;
        }
    }
    let ew = expm_pade(&w);
    let values = (0..=kmax)
        .map(|k| ew.view((0, d * k), (d, d)).into_owned())
        .collect();
    Ok(PhiTable {
        argument: z.clone(),
        values,
    })
}

/// `phibar_k(Z) v` without keeping the table.
pub fn phi_apply(z: &DMatrix<f64>, k: usize, v: &DVector<f64>) -> Result<DVector<f64>> {
    let table = phi_table(z, k)?;
    table.apply(k, v)
}
