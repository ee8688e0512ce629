//! Collocation methods for second-order systems
//! `q'' + Omega q = -grad U(q)`: the trigonometric TCr method and its
//! `Omega = 0` specialization RKNCr.
//!
//! TCr propagates with the even phi family
//!
//! ```text
//! phi_i(K) = sum_l (-1)^l K^l / (2l + i)!,    K = tau^2 h^2 Omega,
//! ```
//!
//! (`phi_0 = cos sqrt(K)`, `phi_1 = sinc sqrt(K)`) and stage coefficients
//!
//! ```text
//! A(tau,s)(K) = int_0^1 (1-xi) phi_1((1-xi)^2 K) P(xi tau, s) d xi,
//! B(1,  s)(K) = int_0^1        phi_0((1-xi)^2 K) P(xi,     s) d xi,
//! ```
//!
//! evaluated through hypergeometric series in `K` (2F1 for A, products of
//! 0F1 for B) and validated against direct quadrature of the integrals.
//! Damped systems (`N != 0`) have no trigonometric tables of their own and
//! are integrated through [`SecondOrderSystem::first_order_form`].

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::basis::{gauss_rule, projection_kernel, OrthonormalBasis};
use crate::ecr::{
    check_gradient, Classification, CollocationScheme, RunResult, SemilinearSystem,
    StepDiagnostics, Structure,
};
use crate::error::{Error, Result};
use crate::matfun::{is_symmetric, max_abs, one_norm};
use crate::rng::SplitMix64;
use crate::{ScalarFn, StateFn};

/// Above this 1-norm of `K` the alternating series degrade and the
/// coefficient integrals are evaluated spectrally instead.
const SERIES_NORM_LIMIT: f64 = 100.0;

/// Hard cap on series terms; exceeding it is a numeric error.
const SERIES_TERM_CAP: usize = 60;

/// Relative size at which a series term counts as converged.
const SERIES_EPS: f64 = 1.0e-16;

/// Second-order system `q'' - N q' + Omega q = -grad U(q)` with energy
/// `H(q, p) = p'p/2 + q'Omega q/2 + U(q)`.
pub struct SecondOrderSystem {
    dim: usize,
    omega: DMatrix<f64>,
    damping: Option<DMatrix<f64>>,
    grad_u: StateFn,
    u: ScalarFn,
    /// Set by the multi-frequency constructor: symmetry of Omega was not
    /// enforced, so symmetric fast paths are skipped.
    omega_symmetric: bool,
}

impl SecondOrderSystem {
    /// Undamped system; `omega` must be symmetric (1e-12) and `grad_u`
    /// must match finite differences of `u` at the probe states.
    pub fn new(
        omega: DMatrix<f64>,
        grad_u: StateFn,
        u: ScalarFn,
        probes: &[DVector<f64>],
    ) -> Result<Self> {
        if omega.nrows() != omega.ncols() {
            return Err(Error::Dimension {
                expected: omega.nrows(),
                found: omega.ncols(),
            });
        }
        if !is_symmetric(&omega, 1.0e-12) {
            return Err(Error::InvalidInput(
                "Omega must be symmetric (use new_multifrequency for premultiplied forms)".into(),
            ));
        }
        let sys = Self {
            dim: omega.nrows(),
            omega,
            damping: None,
            grad_u,
            u,
            omega_symmetric: true,
        };
        sys.check_probes(probes)?;
        Ok(sys)
    }

    /// Multi-frequency form `Omega = Mbar^-1 Kbar`: the premultiplication
    /// may break symmetry, so the symmetry requirement is downgraded to an
    /// advisory and series evaluation is always used for the coefficients.
    pub fn new_multifrequency(
        omega: DMatrix<f64>,
        grad_u: StateFn,
        u: ScalarFn,
        probes: &[DVector<f64>],
    ) -> Result<Self> {
        if omega.nrows() != omega.ncols() {
            return Err(Error::Dimension {
                expected: omega.nrows(),
                found: omega.ncols(),
            });
        }
        let symmetric = is_symmetric(&omega, 1.0e-12);
        let sys = Self {
            dim: omega.nrows(),
            omega,
            damping: None,
            grad_u,
            u,
            omega_symmetric: symmetric,
        };
        sys.check_probes(probes)?;
        Ok(sys)
    }

    fn check_probes(&self, probes: &[DVector<f64>]) -> Result<()> {
        let own_probes;
        let probes = if probes.is_empty() {
            let mut rng = SplitMix64::new(0x05c1_11a7);
            own_probes = rng.vectors(4, self.dim, 1.0);
            &own_probes
        } else {
            probes
        };
        for q in probes {
            if q.len() != self.dim {
                return Err(Error::Dimension {
                    expected: self.dim,
                    found: q.len(),
                });
            }
            let grad = (self.grad_u)(q);
            if grad.len() != self.dim {
                return Err(Error::Dimension {
                    expected: self.dim,
                    found: grad.len(),
                });
            }
            check_gradient(&self.u, &grad, q, "U")?;
        }
        Ok(())
    }

    /// Adds symmetric negative semidefinite damping `N`.
    pub fn with_damping(mut self, n: DMatrix<f64>) -> Result<Self> {
        if n.nrows() != self.dim || n.ncols() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                found: n.nrows(),
            });
        }
        if !is_symmetric(&n, 1.0e-12) {
            return Err(Error::InvalidInput("damping N must be symmetric".into()));
        }
        let eig = nalgebra::linalg::SymmetricEigen::new(n.clone());
        if eig.eigenvalues.iter().any(|l| *l > 1.0e-10 * (1.0 + max_abs(&n))) {
            return Err(Error::InvalidInput(
                "damping N must be negative semidefinite".into(),
            ));
        }
        self.damping = Some(n);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn damping(&self) -> Option<&DMatrix<f64>> {
        self.damping.as_ref()
    }

    pub fn omega_symmetric(&self) -> bool {
        self.omega_symmetric
    }

    pub fn grad_u(&self, q: &DVector<f64>) -> DVector<f64> {
        (self.grad_u)(q)
    }

    pub fn potential(&self, q: &DVector<f64>) -> f64 {
        (self.u)(q)
    }

    /// `H(q, p) = p'p/2 + q'Omega q/2 + U(q)`.
    pub fn energy(&self, q: &DVector<f64>, p: &DVector<f64>) -> f64 {
        0.5 * p.dot(p) + 0.5 * (q.transpose() * &self.omega * q)[(0, 0)] + (self.u)(q)
    }

    /// Moves the linear restoring force into the gradient:
    /// `q'' = -grad U(q) - Omega q` with `Omega = 0` afterwards. This is
    /// how RKNCr applies to oscillatory problems.
    pub fn absorb_omega(&self) -> SecondOrderSystem {
        let omega = self.omega.clone();
        let omega2 = self.omega.clone();
        let grad_u = self.grad_u.clone();
        let u = self.u.clone();
        let d = self.dim;
        SecondOrderSystem {
            dim: d,
            omega: DMatrix::zeros(d, d),
            damping: self.damping.clone(),
            grad_u: Arc::new(move |q: &DVector<f64>| grad_u(q) + &omega * q),
            u: Arc::new(move |q: &DVector<f64>| {
                u(q) + 0.5 * (q.transpose() * &omega2 * q)[(0, 0)]
            }),
            omega_symmetric: true,
        }
    }

    /// Block first-order form `(q, p)' = [[0, I], [-I, N]] grad H(q, p)`,
    /// i.e. `y' = A y + g(y)` with `A = [[0, I], [-Omega, N]]` and
    /// `g = (0, -grad U(q))`, carrying the full `(Q, M, V)` structure.
    ///
    /// This is both the route for damped systems and the cross-check that
    /// TCr coincides with ECr applied here.
    pub fn first_order_form(&self) -> Result<SemilinearSystem> {
        let d = self.dim;
        let n = 2 * d;
        let mut a = DMatrix::<f64>::zeros(n, n);
        let mut q_mat = DMatrix::<f64>::zeros(n, n);
        let mut m_mat = DMatrix::<f64>::zeros(n, n);
        for i in 0..d {
            a[(i, d + i)] = 1.0;
            q_mat[(i, d + i)] = 1.0;
            q_mat[(d + i, i)] = -1.0;
            m_mat[(d + i, d + i)] = 1.0;
        }
        for i in 0..d {
            for j in 0..d {
                a[(d + i, j)] = -self.omega[(i, j)];
                m_mat[(i, j)] = self.omega[(i, j)];
            }
        }
        if let Some(nd) = &self.damping {
            for i in 0..d {
                for j in 0..d {
                    a[(d + i, d + j)] = nd[(i, j)];
                    q_mat[(d + i, d + j)] = nd[(i, j)];
                }
            }
        }

        let grad_u = self.grad_u.clone();
        let g: StateFn = Arc::new(move |y: &DVector<f64>| {
            let q = y.rows(0, d).into_owned();
            let mut out = DVector::zeros(2 * d);
            let f = grad_u(&q);
            for i in 0..d {
                out[d + i] = -f[i];
            }
            out
        });
        let u = self.u.clone();
        let grad_u2 = self.grad_u.clone();
        let v: ScalarFn = Arc::new(move |y: &DVector<f64>| u(&y.rows(0, d).into_owned()));
        let grad_v: StateFn = Arc::new(move |y: &DVector<f64>| {
            let q = y.rows(0, d).into_owned();
            let f = grad_u2(&q);
            let mut out = DVector::zeros(2 * d);
            for i in 0..d {
                out[i] = f[i];
            }
            out
        });

        let u3 = self.u.clone();
        let omega = self.omega.clone();
        let energy: ScalarFn = Arc::new(move |y: &DVector<f64>| {
            let q = y.rows(0, d).into_owned();
            let p = y.rows(d, d).into_owned();
            0.5 * p.dot(&p) + 0.5 * (q.transpose() * &omega * &q)[(0, 0)] + u3(&q)
        });

        let classification = if self.damping.is_some() {
            Classification::Dissipative
        } else {
            Classification::Conservative
        };
        let structure = Structure {
            q: q_mat,
            m: m_mat,
            grad_v,
            v,
        };
        let mut rng = SplitMix64::new(0x2f0c_0de5);
        let probes = rng.vectors(3, n, 1.0);
        SemilinearSystem::new(a, g)?
            .with_energy(energy)
            .with_structure(structure, classification, &probes)
    }
}

/// `(phi_0(K), phi_1(K))` evaluated together: argument reduction
/// `K -> K/4^s`, truncated series, then the doubling identities
/// `phi_0(4Z) = 2 phi_0(Z)^2 - I`, `phi_1(4Z) = phi_0(Z) phi_1(Z)`.
pub(crate) fn phi_pair(k: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = k.nrows();
    let id = DMatrix::<f64>::identity(d, d);
    let norm = one_norm(k);
    let mut s = 0u32;
    if norm > 1.0 {
        s = (libm::ceil(libm::log2(norm) / 2.0) as u32).max(1);
    }
    let scaled = k * libm::exp2(-2.0 * s as f64);

    let mut phi0 = id.clone();
    let mut phi1 = id.clone();
    let mut power = id;
    let mut fact0 = 1.0f64; // (2l)!
    let mut fact1 = 1.0f64; // (2l+1)!
    for l in 1..=30 {
        power = &power * (-&scaled);
        let tl = 2 * l;
        fact0 *= ((tl - 1) * tl) as f64;
        fact1 *= (tl * (tl + 1)) as f64;
        phi0 += &power / fact0;
        phi1 += &power / fact1;
        if max_abs(&power) / fact0 < 1.0e-18 {
            break;
        }
    }
    for _ in 0..s {
        let new_phi1 = &phi0 * &phi1;
        phi0 = 2.0 * (&phi0 * &phi0) - DMatrix::<f64>::identity(d, d);
        phi1 = new_phi1;
    }
    (phi0, phi1)
}

/// `phi_i(K)` for `i in {0, 1}`; `K` must be symmetric positive
/// semidefinite (within roundoff).
pub fn phi_even(k: &DMatrix<f64>, i: usize) -> Result<DMatrix<f64>> {
    if k.nrows() != k.ncols() {
        return Err(Error::Dimension {
            expected: k.nrows(),
            found: k.ncols(),
        });
    }
    if i > 1 {
        return Err(Error::InvalidInput(format!(
            "phi_even index i={i} not supported (only 0 and 1 appear in the methods)"
        )));
    }
    if !is_symmetric(k, 1.0e-12) {
        return Err(Error::InvalidInput("phi_even requires symmetric K".into()));
    }
    let (phi0, phi1) = phi_pair(k);
    Ok(if i == 0 { phi0 } else { phi1 })
}

/// Terminating 2F1(-j, j+1; c; x), a degree-j polynomial in x.
fn hyp2f1_terminating(j: usize, c: f64, x: f64) -> f64 {
    let mut term = 1.0;
    let mut acc = 1.0;
    for m in 0..j {
        let mf = m as f64;
        term *= (mf - j as f64) * (j as f64 + 1.0 + mf) / ((c + mf) * (mf + 1.0)) * x;
        acc += term;
    }
    acc
}

/// 0F1(; b; Z) for matrix `Z`, truncated series.
fn hyp0f1(b: f64, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = z.nrows();
    let mut acc = DMatrix::<f64>::identity(d, d);
    let mut term = DMatrix::<f64>::identity(d, d);
    for l in 0..SERIES_TERM_CAP {
        let lf = l as f64;
        term = (&term * z) / ((b + lf) * (lf + 1.0));
        acc += &term;
        if max_abs(&term) <= SERIES_EPS * (1.0 + max_abs(&acc)) {
            return Ok(acc);
        }
    }
    Err(Error::Numeric(format!(
        "0F1(;{b};.) did not converge within {SERIES_TERM_CAP} terms; argument norm {}",
        one_norm(z)
    )))
}

/// Stage coefficient `A(tau, sigma)(K)` of TCr via the hypergeometric
/// series; switches to spectral evaluation of the defining integral when
/// `||K|| > 100` (symmetric arguments only).
pub fn tcr_a(
    k: &DMatrix<f64>,
    basis: &OrthonormalBasis,
    tau: f64,
    sigma: f64,
) -> Result<DMatrix<f64>> {
    if k.nrows() != k.ncols() {
        return Err(Error::Dimension {
            expected: k.nrows(),
            found: k.ncols(),
        });
    }
    if one_norm(k) > SERIES_NORM_LIMIT && is_symmetric(k, 1.0e-12) {
        return spectral_xi_integral(k, basis, tau, sigma, XiKind::A);
    }
    let r = basis.r();
    let p = basis.eval_all(sigma);
    let d = k.nrows();
    let mut acc = DMatrix::<f64>::zeros(d, d);
    let mut power = DMatrix::<f64>::identity(d, d);
    let mut fact = 2.0f64; // (2l+2)! at l = 0
    let mut small_run = 0usize;
    for l in 0..SERIES_TERM_CAP {
        let mut coeff = 0.0;
        for (j, pj) in p.iter().enumerate().take(r) {
            let sign = if (j + l) % 2 == 0 { 1.0 } else { -1.0 };
            coeff += libm::sqrt(2.0 * j as f64 + 1.0)
                * sign
                * pj
                * hyp2f1_terminating(j, 2.0 * l as f64 + 3.0, tau)
                / fact;
        }
        let term = &power * coeff;
        acc += &term;
        if max_abs(&term) <= SERIES_EPS * (1.0 + max_abs(&acc)) {
            small_run += 1;
            if small_run >= 2 {
                return Ok(acc);
            }
        } else {
            small_run = 0;
        }
        power = &power * k;
        let lf = (l + 1) as f64;
        fact *= (2.0 * lf + 1.0) * (2.0 * lf + 2.0);
    }
    Err(Error::Numeric(format!(
        "TCr A series did not converge within {SERIES_TERM_CAP} terms; ||K|| = {}",
        one_norm(k)
    )))
}

/// `S_j(K)` of the endpoint coefficient: products of 0F1 values.
fn s_j(k: &DMatrix<f64>, j: usize) -> Result<DMatrix<f64>> {
    let d = k.nrows();
    let z = k * (-1.0 / 16.0);
    let (m, k_power_order, front_num, b1, b2) = if j % 2 == 0 {
        let m = j / 2;
        // (2m)! / (4m+1)!
        (m, m, ratio_factorial(2 * m, 4 * m + 1), 0.5, 2.0 * m as f64 + 1.5)
    } else {
        let m = (j - 1) / 2;
        // (2m+2)! / (4m+4)!
        (
            m,
            m + 1,
            ratio_factorial(2 * m + 2, 4 * m + 4),
            1.5,
            2.0 * m as f64 + 2.5,
        )
    };
    let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
    let mut front = DMatrix::<f64>::identity(d, d) * (sign * front_num);
    for _ in 0..k_power_order {
        front = &front * k;
    }
    let f1 = hyp0f1(b1, &z)?;
    let f2 = hyp0f1(b2, &z)?;
    Ok(&front * &f1 * &f2)
}

/// `a! / b!` for `a <= b`, evaluated multiplicatively.
fn ratio_factorial(a: usize, b: usize) -> f64 {
    let mut acc = 1.0f64;
    for m in (a + 1)..=b {
        acc /= m as f64;
    }
    acc
}

/// Endpoint coefficient `B(1, sigma)(K)` of TCr.
pub fn tcr_b(k: &DMatrix<f64>, basis: &OrthonormalBasis, sigma: f64) -> Result<DMatrix<f64>> {
    if k.nrows() != k.ncols() {
        return Err(Error::Dimension {
            expected: k.nrows(),
            found: k.ncols(),
        });
    }
    if one_norm(k) > SERIES_NORM_LIMIT && is_symmetric(k, 1.0e-12) {
        return spectral_xi_integral(k, basis, 1.0, sigma, XiKind::B);
    }
    let d = k.nrows();
    let mut acc = DMatrix::<f64>::zeros(d, d);
    for j in 0..basis.r() {
        let sj = s_j(k, j)?;
        acc += sj * (libm::sqrt(2.0 * j as f64 + 1.0) * basis.eval(j, sigma));
    }
    Ok(acc)
}

enum XiKind {
    /// `(1-xi) phi_1((1-xi)^2 K)` kernel.
    A,
    /// `phi_0((1-xi)^2 K)` kernel.
    B,
}

/// Spectral evaluation of the defining xi-integrals for symmetric `K`:
/// eigendecompose, integrate the scalar kernels, recompose.
fn spectral_xi_integral(
    k: &DMatrix<f64>,
    basis: &OrthonormalBasis,
    tau: f64,
    sigma: f64,
    kind: XiKind,
) -> Result<DMatrix<f64>> {
    let eig = nalgebra::linalg::SymmetricEigen::new(k.clone());
    let d = k.nrows();
    let max_freq = eig
        .eigenvalues
        .iter()
        .fold(0.0f64, |a, l| a.max(libm::sqrt(l.max(0.0))));
    let panels = 16usize.max(libm::ceil(max_freq) as usize);
    let rule = gauss_rule(10)?;
    let mut scaled = eig.eigenvectors.clone();
    for idx in 0..d {
        let lambda = eig.eigenvalues[idx].max(0.0);
        let mut integral = 0.0;
        let width = 1.0 / panels as f64;
        for panel in 0..panels {
            let left = panel as f64 * width;
            for (c, b) in rule.nodes().iter().zip(rule.weights()) {
                let xi = left + c * width;
                let w = (1.0 - xi) * libm::sqrt(lambda);
                let kernel = match kind {
                    XiKind::A => (1.0 - xi) * sinc(w),
                    XiKind::B => libm::cos(w),
                };
                integral += b * width * kernel * projection_kernel(basis, xi * tau, sigma);
            }
        }
        scaled.column_mut(idx).scale_mut(integral);
    }
    Ok(&scaled * eig.eigenvectors.transpose())
}

fn sinc(w: f64) -> f64 {
    if libm::fabs(w) < 1.0e-8 {
        1.0 - w * w / 6.0
    } else {
        libm::sin(w) / w
    }
}

/// Verification path for [`tcr_a`]: composite matrix quadrature of
/// `int_0^1 (1-xi) phi_1((1-xi)^2 K) P(xi tau, sigma) d xi`.
pub fn tcr_a_quadrature(
    k: &DMatrix<f64>,
    basis: &OrthonormalBasis,
    tau: f64,
    sigma: f64,
    panels: usize,
) -> Result<DMatrix<f64>> {
    xi_quadrature(k, basis, tau, sigma, panels, XiKind::A)
}

/// Verification path for [`tcr_b`]: composite matrix quadrature of
/// `int_0^1 phi_0((1-xi)^2 K) P(xi, sigma) d xi`.
pub fn tcr_b_quadrature(
    k: &DMatrix<f64>,
    basis: &OrthonormalBasis,
    sigma: f64,
    panels: usize,
) -> Result<DMatrix<f64>> {
    xi_quadrature(k, basis, 1.0, sigma, panels, XiKind::B)
}

fn xi_quadrature(
    k: &DMatrix<f64>,
    basis: &OrthonormalBasis,
    tau: f64,
    sigma: f64,
    panels: usize,
    kind: XiKind,
) -> Result<DMatrix<f64>> {
    let rule = gauss_rule(10)?;
    let d = k.nrows();
    let mut acc = DMatrix::<f64>::zeros(d, d);
    let width = 1.0 / panels as f64;
    for panel in 0..panels {
        let left = panel as f64 * width;
        for (c, b) in rule.nodes().iter().zip(rule.weights()) {
            let xi = left + c * width;
            let arg = k * ((1.0 - xi) * (1.0 - xi));
            let (phi0, phi1) = phi_pair(&arg);
            let kernel = projection_kernel(basis, xi * tau, sigma);
            let factor = match kind {
                XiKind::A => (1.0 - xi) * kernel,
                XiKind::B => kernel,
            };
            acc += match kind {
                XiKind::A => phi1 * (b * width * factor),
                XiKind::B => phi0 * (b * width * factor),
            };
        }
    }
    Ok(acc)
}

/// How the coefficient series were truncated when a table was built.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesTruncation {
    /// Terms stop once they fall below this fraction of the running sum.
    pub relative_tolerance: f64,
    /// Hard cap on series terms.
    pub term_cap: usize,
    /// 1-norm of `K` beyond which the defining integrals are evaluated
    /// spectrally instead.
    pub spectral_threshold: f64,
    /// Whether any table entry took the spectral route.
    pub spectral_path: bool,
}

/// Precomputed TCr tables for one `(Omega, h, r)`: per stage node the pair
/// `phi_0/phi_1` at `K(ci)` and the row `A(ci, cj)`, plus the endpoint
/// propagators and the `A`/`B` rows at `tau = 1`.
pub struct TcrCoefficients {
    stage_phi0: Vec<DMatrix<f64>>,
    stage_phi1: Vec<DMatrix<f64>>,
    stage_a: Vec<Vec<DMatrix<f64>>>,
    end_phi0: DMatrix<f64>,
    end_phi1: DMatrix<f64>,
    end_a: Vec<DMatrix<f64>>,
    end_b: Vec<DMatrix<f64>>,
    /// `Omega phi_1(K(1))`, the momentum-update propagator block.
    omega_phi1_end: DMatrix<f64>,
    truncation: SeriesTruncation,
}

impl TcrCoefficients {
    pub fn end_b(&self, j: usize) -> &DMatrix<f64> {
        &self.end_b[j]
    }

    pub fn end_a(&self, j: usize) -> &DMatrix<f64> {
        &self.end_a[j]
    }

    pub fn stage_a(&self, i: usize, j: usize) -> &DMatrix<f64> {
        &self.stage_a[i][j]
    }

    pub fn truncation(&self) -> SeriesTruncation {
        self.truncation
    }
}

/// Builds the TCr tables; requires an undamped system.
pub fn build_tcr_coefficients(
    system: &SecondOrderSystem,
    scheme: &CollocationScheme,
) -> Result<TcrCoefficients> {
    if system.damping.is_some() {
        return Err(Error::InvalidInput(
            "TCr covers N = 0 only; integrate damped systems via first_order_form".into(),
        ));
    }
    let h = scheme.h();
    let basis = scheme.basis();
    let rule = scheme.quadrature();
    let r = scheme.r();

    let mut stage_phi0 = Vec::with_capacity(r);
    let mut stage_phi1 = Vec::with_capacity(r);
    let mut stage_a = Vec::with_capacity(r);
    for &ci in rule.nodes() {
        let k = system.omega() * (ci * ci * h * h);
        let (phi0, phi1) = phi_pair(&k);
        stage_phi0.push(phi0);
        stage_phi1.push(phi1);
        let mut row = Vec::with_capacity(r);
        for &cj in rule.nodes() {
            row.push(tcr_a(&k, basis, ci, cj)?);
        }
        stage_a.push(row);
    }

    let k_end = system.omega() * (h * h);
    let (end_phi0, end_phi1) = phi_pair(&k_end);
    let mut end_a = Vec::with_capacity(r);
    let mut end_b = Vec::with_capacity(r);
    for &cj in rule.nodes() {
        end_a.push(tcr_a(&k_end, basis, 1.0, cj)?);
        end_b.push(tcr_b(&k_end, basis, cj)?);
    }
    let omega_phi1_end = system.omega() * &end_phi1;
    let max_k_norm = one_norm(&k_end).max(
        rule.nodes()
            .iter()
            .map(|c| one_norm(system.omega()) * c * c * h * h)
            .fold(0.0, f64::max),
    );
    Ok(TcrCoefficients {
        stage_phi0,
        stage_phi1,
        stage_a,
        end_phi0,
        end_phi1,
        end_a,
        end_b,
        omega_phi1_end,
        truncation: SeriesTruncation {
            relative_tolerance: SERIES_EPS,
            term_cap: SERIES_TERM_CAP,
            spectral_threshold: SERIES_NORM_LIMIT,
            spectral_path: max_k_norm > SERIES_NORM_LIMIT && system.omega_symmetric(),
        },
    })
}

/// Output of one second-order step.
pub struct SecondOrderStepResult {
    pub q1: DVector<f64>,
    pub p1: DVector<f64>,
    /// Converged position stages at the quadrature nodes.
    pub stages: Vec<DVector<f64>>,
    /// `grad U` at the converged stages.
    pub f_stages: Vec<DVector<f64>>,
    pub diagnostics: StepDiagnostics,
}

/// One TCr step from `(q0, p0)`; same fixed-point protocol as the
/// first-order integrator (and the same iterates, by construction).
pub fn tcr_step(
    system: &SecondOrderSystem,
    scheme: &CollocationScheme,
    coeffs: &TcrCoefficients,
    q0: &DVector<f64>,
    p0: &DVector<f64>,
) -> Result<SecondOrderStepResult> {
    if q0.len() != system.dim() || p0.len() != system.dim() {
        return Err(Error::Dimension {
            expected: system.dim(),
            found: q0.len(),
        });
    }
    let h = scheme.h();
    let r = scheme.r();
    let rule = scheme.quadrature();
    let nodes = rule.nodes();
    let weights = rule.weights();

    let seeds: Vec<DVector<f64>> = (0..r)
        .map(|i| &coeffs.stage_phi0[i] * q0 + &coeffs.stage_phi1[i] * p0 * (nodes[i] * h))
        .collect();
    let mut stages = seeds.clone();
    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0u32;
    while iterations < scheme.max_iterations() {
        iterations += 1;
        let f_now: Vec<DVector<f64>> = stages.iter().map(|q| system.grad_u(q)).collect();
        if f_now.iter().any(|f| f.iter().any(|x| !x.is_finite())) {
            return Err(Error::Numeric("grad U evaluated non-finite at a stage".into()));
        }
        let mut delta = 0.0f64;
        let mut scale = 0.0f64;
        let mut next = Vec::with_capacity(r);
        for i in 0..r {
            let mut q = seeds[i].clone();
            let factor = nodes[i] * nodes[i] * h * h;
            for j in 0..r {
                q -= coeffs.stage_a(i, j) * &f_now[j] * (factor * weights[j]);
            }
            delta = delta.max((&q - &stages[i]).amax());
            scale = scale.max(q.amax());
            next.push(q);
        }
        stages = next;
        residual = delta;
        let floor = 64.0 * f64::EPSILON * (1.0 + scale);
        if delta <= scheme.tolerance().max(floor) {
            converged = true;
            break;
        }
    }

    let f_stages: Vec<DVector<f64>> = stages.iter().map(|q| system.grad_u(q)).collect();
    let mut q1 = &coeffs.end_phi0 * q0 + &coeffs.end_phi1 * p0 * h;
    let mut p1 = -(&coeffs.omega_phi1_end * q0) * h + &coeffs.end_phi0 * p0;
    for j in 0..r {
        q1 -= coeffs.end_a(j) * &f_stages[j] * (h * h * weights[j]);
        p1 -= coeffs.end_b(j) * &f_stages[j] * (h * weights[j]);
    }
    if q1.iter().chain(p1.iter()).any(|x| !x.is_finite()) {
        return Err(Error::Numeric("TCr step produced a non-finite state".into()));
    }
    Ok(SecondOrderStepResult {
        q1,
        p1,
        stages,
        f_stages,
        diagnostics: StepDiagnostics {
            iterations,
            residual,
            converged,
        },
    })
}

/// RKNCr tables: with `K = 0` the coefficients are scalars, computed by
/// exact integration of the basis polynomials,
/// `Abar(t,s) = sum_i int_0^1 (1-xi) p_i(xi t) d xi p_i(s)` and
/// `Bbar(1,s) = sum_i int_0^1 p_i(xi) d xi p_i(s)`.
pub struct RknCoefficients {
    stage_a: Vec<Vec<f64>>,
    end_a: Vec<f64>,
    end_b: Vec<f64>,
}

impl RknCoefficients {
    pub fn stage_a(&self, i: usize, j: usize) -> f64 {
        self.stage_a[i][j]
    }

    pub fn end_a(&self, j: usize) -> f64 {
        self.end_a[j]
    }

    pub fn end_b(&self, j: usize) -> f64 {
        self.end_b[j]
    }
}

fn rkn_abar(basis: &OrthonormalBasis, tau: f64, sigma: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..basis.r() {
        let coeffs = basis.coefficients(i);
        let mut integral = 0.0;
        let mut tau_pow = 1.0;
        for (k, ck) in coeffs.iter().enumerate() {
            let kf = k as f64;
            integral += ck * tau_pow / ((kf + 1.0) * (kf + 2.0));
            tau_pow *= tau;
        }
        acc += integral * basis.eval(i, sigma);
    }
    acc
}

fn rkn_bbar(basis: &OrthonormalBasis, sigma: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..basis.r() {
        let coeffs = basis.coefficients(i);
        let mut integral = 0.0;
        for (k, ck) in coeffs.iter().enumerate() {
            integral += ck / (k as f64 + 1.0);
        }
        acc += integral * basis.eval(i, sigma);
    }
    acc
}

pub fn build_rkn_coefficients(scheme: &CollocationScheme) -> RknCoefficients {
    let basis = scheme.basis();
    let nodes = scheme.quadrature().nodes();
    let stage_a = nodes
        .iter()
        .map(|&ci| nodes.iter().map(|&cj| rkn_abar(basis, ci, cj)).collect())
        .collect();
    let end_a = nodes.iter().map(|&cj| rkn_abar(basis, 1.0, cj)).collect();
    let end_b = nodes.iter().map(|&cj| rkn_bbar(basis, cj)).collect();
    RknCoefficients {
        stage_a,
        end_a,
        end_b,
    }
}

/// One RKNCr step; requires `Omega = 0` and no damping. Stage values are
/// carried at the quadrature nodes (the Lagrange representation of the
/// stage polynomial is the identity there).
pub fn rkn_step(
    system: &SecondOrderSystem,
    scheme: &CollocationScheme,
    coeffs: &RknCoefficients,
    q0: &DVector<f64>,
    p0: &DVector<f64>,
) -> Result<SecondOrderStepResult> {
    if max_abs(system.omega()) != 0.0 {
        return Err(Error::InvalidInput(
            "RKNCr requires Omega = 0; call absorb_omega() first".into(),
        ));
    }
    if system.damping.is_some() {
        return Err(Error::InvalidInput("RKNCr requires N = 0".into()));
    }
    if q0.len() != system.dim() || p0.len() != system.dim() {
        return Err(Error::Dimension {
            expected: system.dim(),
            found: q0.len(),
        });
    }
    let h = scheme.h();
    let r = scheme.r();
    let rule = scheme.quadrature();
    let nodes = rule.nodes();
    let weights = rule.weights();

    let seeds: Vec<DVector<f64>> = (0..r).map(|i| q0 + p0 * (nodes[i] * h)).collect();
    let mut stages = seeds.clone();
    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0u32;
    while iterations < scheme.max_iterations() {
        iterations += 1;
        let f_now: Vec<DVector<f64>> = stages.iter().map(|q| system.grad_u(q)).collect();
        if f_now.iter().any(|f| f.iter().any(|x| !x.is_finite())) {
            return Err(Error::Numeric("grad U evaluated non-finite at a stage".into()));
        }
        let mut delta = 0.0f64;
        let mut scale = 0.0f64;
        let mut next = Vec::with_capacity(r);
        for i in 0..r {
            let mut q = seeds[i].clone();
            let factor = nodes[i] * nodes[i] * h * h;
            for j in 0..r {
                q -= &f_now[j] * (coeffs.stage_a(i, j) * factor * weights[j]);
            }
            delta = delta.max((&q - &stages[i]).amax());
            scale = scale.max(q.amax());
            next.push(q);
        }
        stages = next;
        residual = delta;
        let floor = 64.0 * f64::EPSILON * (1.0 + scale);
        if delta <= scheme.tolerance().max(floor) {
            converged = true;
            break;
        }
    }

    let f_stages: Vec<DVector<f64>> = stages.iter().map(|q| system.grad_u(q)).collect();
    let mut q1 = q0 + p0 * h;
    let mut p1 = p0.clone();
    for j in 0..r {
        q1 -= &f_stages[j] * (coeffs.end_a(j) * h * h * weights[j]);
        p1 -= &f_stages[j] * (coeffs.end_b(j) * h * weights[j]);
    }
    if q1.iter().chain(p1.iter()).any(|x| !x.is_finite()) {
        return Err(Error::Numeric("RKNCr step produced a non-finite state".into()));
    }
    Ok(SecondOrderStepResult {
        q1,
        p1,
        stages,
        f_stages,
        diagnostics: StepDiagnostics {
            iterations,
            residual,
            converged,
        },
    })
}

/// Which second-order stepper a run should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SecondOrderMethod {
    Tcr,
    Rkn,
}

/// Integrates the second-order system over `[0, t_end]`, recording the
/// stacked state `(q, p)` and the energy at every grid point.
pub fn integrate_second_order(
    system: &SecondOrderSystem,
    scheme: &CollocationScheme,
    method: SecondOrderMethod,
    q0: &DVector<f64>,
    p0: &DVector<f64>,
    t_end: f64,
) -> Result<RunResult> {
    if !(t_end > 0.0) {
        return Err(Error::InvalidInput(format!("t_end={t_end} must be positive")));
    }
    enum Tables {
        Tcr(TcrCoefficients),
        Rkn(RknCoefficients),
    }
    let tables = match method {
        SecondOrderMethod::Tcr => Tables::Tcr(build_tcr_coefficients(system, scheme)?),
        SecondOrderMethod::Rkn => Tables::Rkn(build_rkn_coefficients(scheme)),
    };
    let steps = libm::ceil(t_end / scheme.h() - 1.0e-9) as usize;
    let d = system.dim();
    let stack = |q: &DVector<f64>, p: &DVector<f64>| {
        DVector::from_iterator(2 * d, q.iter().chain(p.iter()).copied())
    };
    let mut result = RunResult {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        energies: Some(Vec::with_capacity(steps + 1)),
        iterations: Vec::with_capacity(steps),
        residuals: Vec::with_capacity(steps),
        nonconverged: Vec::new(),
    };
    let mut q = q0.clone();
    let mut p = p0.clone();
    result.times.push(0.0);
    result.states.push(stack(&q, &p));
    result.energies.as_mut().unwrap().push(system.energy(&q, &p));
    for n in 0..steps {
        let out = match &tables {
            Tables::Tcr(t) => tcr_step(system, scheme, t, &q, &p)?,
            Tables::Rkn(t) => rkn_step(system, scheme, t, &q, &p)?,
        };
        q = out.q1;
        p = out.p1;
        result.times.push((n + 1) as f64 * scheme.h());
        result.states.push(stack(&q, &p));
        result.energies.as_mut().unwrap().push(system.energy(&q, &p));
        result.iterations.push(out.diagnostics.iterations);
        result.residuals.push(out.diagnostics.residual);
        if !out.diagnostics.converged {
            result.nonconverged.push(n);
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::legendre_basis;
    use crate::rng::SplitMix64;

    fn free_system(dim: usize) -> SecondOrderSystem {
        SecondOrderSystem::new(
            DMatrix::zeros(dim, dim),
            Arc::new(|q: &DVector<f64>| DVector::zeros(q.len())),
            Arc::new(|_: &DVector<f64>| 0.0),
            &[],
        )
        .unwrap()
    }

    fn oscillator(omega2: f64) -> SecondOrderSystem {
        SecondOrderSystem::new(
            DMatrix::from_element(1, 1, omega2),
            Arc::new(|q: &DVector<f64>| DVector::zeros(q.len())),
            Arc::new(|_: &DVector<f64>| 0.0),
            &[],
        )
        .unwrap()
    }

    #[test]
    fn phi_even_at_zero() {
        let z = DMatrix::<f64>::zeros(3, 3);
        let id = DMatrix::<f64>::identity(3, 3);
        assert_eq!(phi_even(&z, 0).unwrap(), id);
        assert_eq!(phi_even(&z, 1).unwrap(), id);
    }

    #[test]
    fn phi_even_scalar_pi_squared() {
        let pi = core::f64::consts::PI;
        let k = DMatrix::from_element(1, 1, pi * pi);
        let phi0 = phi_even(&k, 0).unwrap()[(0, 0)];
        let phi1 = phi_even(&k, 1).unwrap()[(0, 0)];
        assert!((phi0 + 1.0).abs() < 1e-13);
        assert!(phi1.abs() < 1e-13);
    }

    #[test]
    fn phi_even_matches_spectral_oracle() {
        let mut rng = SplitMix64::new(23);
        for _ in 0..4 {
            let d = 3;
            let mut b = DMatrix::<f64>::zeros(d, d);
            for i in 0..d {
                for j in 0..d {
                    b[(i, j)] = rng.next_unit() * 2.0;
                }
            }
            let k = &b * b.transpose();
            let eig = nalgebra::linalg::SymmetricEigen::new(k.clone());
            let oracle = |f: &dyn Fn(f64) -> f64| {
                let mut scaled = eig.eigenvectors.clone();
                for j in 0..d {
                    scaled.column_mut(j).scale_mut(f(eig.eigenvalues[j].max(0.0)));
                }
                &scaled * eig.eigenvectors.transpose()
            };
            let cos_oracle = oracle(&|l: f64| libm::cos(libm::sqrt(l)));
            let sinc_oracle = oracle(&|l: f64| sinc(libm::sqrt(l)));
            assert!(max_abs(&(phi_even(&k, 0).unwrap() - cos_oracle)) < 1e-12);
            assert!(max_abs(&(phi_even(&k, 1).unwrap() - sinc_oracle)) < 1e-12);
        }
    }

    #[test]
    fn phi_even_rejects_bad_input() {
        let ns = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]);
        assert!(phi_even(&ns, 0).is_err());
        let k = DMatrix::<f64>::identity(2, 2);
        assert!(phi_even(&k, 2).is_err());
    }

    #[test]
    fn tcr_a_constant_case() {
        // K = 0, r = 1: A = 1/2 everywhere.
        let basis = legendre_basis(1).unwrap();
        let k = DMatrix::<f64>::zeros(1, 1);
        for (tau, sigma) in [(0.2, 0.9), (1.0, 0.1), (0.6, 0.6)] {
            let a = tcr_a(&k, &basis, tau, sigma).unwrap();
            assert!((a[(0, 0)] - 0.5).abs() < 1e-14, "tau={tau}");
        }
    }

    #[test]
    fn tcr_a_at_zero_equals_rkn_table() {
        let k = DMatrix::<f64>::zeros(2, 2);
        for r in 1..=4 {
            let basis = legendre_basis(r).unwrap();
            for (tau, sigma) in [(0.3, 0.8), (1.0, 0.25), (0.7, 0.05)] {
                let series = tcr_a(&k, &basis, tau, sigma).unwrap();
                let poly = rkn_abar(&basis, tau, sigma);
                assert!((series[(0, 0)] - poly).abs() < 1e-12, "r={r}");
                assert!(series[(0, 1)].abs() < 1e-14);
            }
        }
    }

    #[test]
    fn tcr_a_matches_xi_quadrature() {
        let basis = legendre_basis(2).unwrap();
        let k = DMatrix::from_element(1, 1, 4.0);
        let series = tcr_a(&k, &basis, 1.0, 0.3).unwrap();
        let oracle = tcr_a_quadrature(&k, &basis, 1.0, 0.3, 16).unwrap();
        assert!((series[(0, 0)] - oracle[(0, 0)]).abs() < 1e-10);
    }

    #[test]
    fn tcr_b_reduces_to_phi1_for_r1() {
        let basis = legendre_basis(1).unwrap();
        for kval in [0.0, 1.7, 9.0] {
            let k = DMatrix::from_element(1, 1, kval);
            let b = tcr_b(&k, &basis, 0.37).unwrap()[(0, 0)];
            let expect = if kval == 0.0 {
                1.0
            } else {
                libm::sin(libm::sqrt(kval)) / libm::sqrt(kval)
            };
            assert!((b - expect).abs() < 1e-13, "K={kval}");
        }
        // S_0(pi^2) = sin(pi)/pi = 0
        let k = DMatrix::from_element(1, 1, core::f64::consts::PI.powi(2));
        assert!(tcr_b(&k, &basis, 0.8).unwrap()[(0, 0)].abs() < 1e-13);
    }

    #[test]
    fn tcr_b_at_zero_is_one_for_any_r() {
        // S_j(0) = 0 for j >= 1, so B(1, s)(0) = p_0(s) = 1.
        let k = DMatrix::<f64>::zeros(1, 1);
        for r in 1..=4 {
            let basis = legendre_basis(r).unwrap();
            for sigma in [0.1, 0.5, 0.9] {
                let b = tcr_b(&k, &basis, sigma).unwrap()[(0, 0)];
                assert!((b - 1.0).abs() < 1e-13, "r={r}");
                let poly = rkn_bbar(&basis, sigma);
                assert!((poly - 1.0).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn tcr_b_matches_xi_quadrature() {
        let basis = legendre_basis(3).unwrap();
        let k = DMatrix::from_element(1, 1, 4.0);
        for sigma in [0.2, 0.66] {
            let series = tcr_b(&k, &basis, sigma).unwrap();
            let oracle = tcr_b_quadrature(&k, &basis, sigma, 16).unwrap();
            assert!((series[(0, 0)] - oracle[(0, 0)]).abs() < 1e-10);
        }
    }

    #[test]
    fn spectral_path_agrees_with_series_near_threshold() {
        // ||K|| just below the switch (series) vs. just above (spectral).
        let basis = legendre_basis(2).unwrap();
        let k_lo = DMatrix::from_element(1, 1, 99.0);
        let k_hi = DMatrix::from_element(1, 1, 101.0);
        for (tau, sigma) in [(1.0, 0.3), (0.5, 0.7)] {
            let lo = tcr_a(&k_lo, &basis, tau, sigma).unwrap()[(0, 0)];
            let lo_oracle = tcr_a_quadrature(&k_lo, &basis, tau, sigma, 24).unwrap()[(0, 0)];
            let hi = tcr_a(&k_hi, &basis, tau, sigma).unwrap()[(0, 0)];
            let hi_oracle = tcr_a_quadrature(&k_hi, &basis, tau, sigma, 24).unwrap()[(0, 0)];
            assert!((lo - lo_oracle).abs() < 1e-10);
            assert!((hi - hi_oracle).abs() < 1e-10);
        }
    }

    #[test]
    fn tcr_step_exact_on_linear_oscillator() {
        let omega = 5.0;
        let system = oscillator(omega * omega);
        let scheme = CollocationScheme::new(2, 0.07).unwrap();
        let coeffs = build_tcr_coefficients(&system, &scheme).unwrap();
        let q0 = DVector::from_vec(vec![0.3]);
        let p0 = DVector::from_vec(vec![-1.2]);
        let out = tcr_step(&system, &scheme, &coeffs, &q0, &p0).unwrap();
        let wh = omega * 0.07;
        let q_exact = libm::cos(wh) * q0[0] + libm::sin(wh) / omega * p0[0];
        let p_exact = -omega * libm::sin(wh) * q0[0] + libm::cos(wh) * p0[0];
        assert!((out.q1[0] - q_exact).abs() < 1e-13);
        assert!((out.p1[0] - p_exact).abs() < 1e-13);
    }

    #[test]
    fn tcr_step_free_flight() {
        let system = free_system(2);
        let scheme = CollocationScheme::new(3, 0.4).unwrap();
        let coeffs = build_tcr_coefficients(&system, &scheme).unwrap();
        let q0 = DVector::from_vec(vec![1.0, -2.0]);
        let p0 = DVector::from_vec(vec![0.5, 0.25]);
        let out = tcr_step(&system, &scheme, &coeffs, &q0, &p0).unwrap();
        assert!((&out.q1 - (&q0 + &p0 * 0.4)).amax() < 1e-14);
        assert!((&out.p1 - &p0).amax() < 1e-14);
    }

    #[test]
    fn linear_oscillator_exact_over_many_steps() {
        let omega = 10.0;
        let system = oscillator(omega * omega);
        let scheme = CollocationScheme::new(2, 0.05).unwrap();
        let q0 = DVector::from_vec(vec![1.0]);
        let p0 = DVector::from_vec(vec![0.0]);
        let run = integrate_second_order(
            &system,
            &scheme,
            SecondOrderMethod::Tcr,
            &q0,
            &p0,
            1000.0 * 0.05,
        )
        .unwrap();
        assert_eq!(run.states.len(), 1001);
        for (n, y) in run.states.iter().enumerate() {
            let t = n as f64 * 0.05;
            let q = libm::cos(omega * t);
            let p = -omega * libm::sin(omega * t);
            let err = (y[0] - q).abs().max((y[1] - p).abs() / omega);
            assert!(err < 1e-10, "n={n} err={err:e}");
        }
    }

    #[test]
    fn rkn_step_free_flight_and_harmonic() {
        let system = free_system(1);
        let scheme = CollocationScheme::new(2, 0.3).unwrap();
        let coeffs = build_rkn_coefficients(&scheme);
        let q0 = DVector::from_vec(vec![2.0]);
        let p0 = DVector::from_vec(vec![-1.0]);
        let out = rkn_step(&system, &scheme, &coeffs, &q0, &p0).unwrap();
        assert!((out.q1[0] - (2.0 - 0.3)).abs() < 1e-15);
        assert!((out.p1[0] + 1.0).abs() < 1e-15);

        // gradU(q) = q: q'' = -q, integrated with Omega absorbed.
        let harmonic = SecondOrderSystem::new(
            DMatrix::zeros(1, 1),
            Arc::new(|q: &DVector<f64>| q.clone()),
            Arc::new(|q: &DVector<f64>| 0.5 * q[0] * q[0]),
            &[],
        )
        .unwrap();
        let scheme = CollocationScheme::new(2, 0.1).unwrap();
        let coeffs = build_rkn_coefficients(&scheme);
        let out = rkn_step(&harmonic, &scheme, &coeffs, &q0, &p0).unwrap();

        // Same flow through the first-order ECr route.
        let first = harmonic.first_order_form().unwrap();
        let table = crate::ecr::build_coefficients(&first, &scheme).unwrap();
        let y0 = DVector::from_vec(vec![2.0, -1.0]);
        let ecr_out = crate::ecr::step(&first, &scheme, &table, &y0).unwrap();
        assert!((out.q1[0] - ecr_out.y1[0]).abs() < 1e-10);
        assert!((out.p1[0] - ecr_out.y1[1]).abs() < 1e-10);
    }

    #[test]
    fn rkn_rejects_nonzero_omega() {
        let system = oscillator(4.0);
        let scheme = CollocationScheme::new(2, 0.1).unwrap();
        let coeffs = build_rkn_coefficients(&scheme);
        let q0 = DVector::from_vec(vec![1.0]);
        let p0 = DVector::from_vec(vec![0.0]);
        assert!(rkn_step(&system, &scheme, &coeffs, &q0, &p0).is_err());
        // absorb_omega turns it into a legal RKN system with the same flow.
        let absorbed = system.absorb_omega();
        assert!(rkn_step(&absorbed, &scheme, &coeffs, &q0, &p0).is_ok());
    }

    #[test]
    fn rkn_equals_tcr_at_zero_omega() {
        let k2: f64 = 0.0049; // Duffing-like quartic nonlinearity
        let system = SecondOrderSystem::new(
            DMatrix::zeros(1, 1),
            Arc::new(move |q: &DVector<f64>| {
                DVector::from_vec(vec![-2.0 * k2 * q[0].powi(3)])
            }),
            Arc::new(move |q: &DVector<f64>| -0.5 * k2 * q[0].powi(4)),
            &[],
        )
        .unwrap();
        let scheme = CollocationScheme::new(3, 0.05).unwrap();
        let tcr = build_tcr_coefficients(&system, &scheme).unwrap();
        let rkn = build_rkn_coefficients(&scheme);
        let q0 = DVector::from_vec(vec![0.4]);
        let p0 = DVector::from_vec(vec![1.1]);
        let a = tcr_step(&system, &scheme, &tcr, &q0, &p0).unwrap();
        let b = rkn_step(&system, &scheme, &rkn, &q0, &p0).unwrap();
        assert!((a.q1[0] - b.q1[0]).abs() < 1e-12);
        assert!((a.p1[0] - b.p1[0]).abs() < 1e-12);
    }

    #[test]
    fn damped_systems_route_through_first_order_form() {
        let system = oscillator(4.0)
            .with_damping(DMatrix::from_element(1, 1, -0.5))
            .unwrap();
        let scheme = CollocationScheme::new(2, 0.1).unwrap();
        assert!(build_tcr_coefficients(&system, &scheme).is_err());
        let first = system.first_order_form().unwrap();
        assert_eq!(first.classification(), Classification::Dissipative);
        // Dissipation: H decreases along a step.
        let table = crate::ecr::build_coefficients(&first, &scheme).unwrap();
        let y0 = DVector::from_vec(vec![1.0, 0.5]);
        let h0 = first.energy(&y0).unwrap();
        let out = crate::ecr::step(&first, &scheme, &table, &y0).unwrap();
        assert!(first.energy(&out.y1).unwrap() <= h0);
    }

    #[test]
    fn multifrequency_constructor_tolerates_asymmetry() {
        let omega = DMatrix::from_row_slice(2, 2, &[4.0, 0.3, 0.1, 9.0]);
        let sys = SecondOrderSystem::new_multifrequency(
            omega.clone(),
            Arc::new(|q: &DVector<f64>| DVector::zeros(q.len())),
            Arc::new(|_: &DVector<f64>| 0.0),
            &[],
        )
        .unwrap();
        assert!(!sys.omega_symmetric());
        assert!(SecondOrderSystem::new(
            omega,
            Arc::new(|q: &DVector<f64>| DVector::zeros(q.len())),
            Arc::new(|_: &DVector<f64>| 0.0),
            &[],
        )
        .is_err());
    }
}
