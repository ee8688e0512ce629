//! Shifted Legendre basis on [0,1], its reproducing kernel, and
//! Gauss-Legendre quadrature.
//!
//! The orthonormal basis is
//!
//! ```text
//! p_j(t) = (-1)^j sqrt(2j+1) sum_k C(j,k) C(j+k,k) (-t)^k,
//! ```
//!
//! stored by monomial coefficients. That representation is exact in f64 up
//! to r = 12 and hits a conditioning cliff beyond, which is why builders
//! reject larger orders.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 12;

/// Orthonormal polynomial basis `p_0 .. p_(r-1)` of degrees `0 .. r-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalBasis {
    /// coeffs[j][k] multiplies t^k in p_j.
    coeffs: Vec<Vec<f64>>,
}

impl OrthonormalBasis {
    pub fn r(&self) -> usize {
        self.coeffs.len()
    }

    /// Monomial coefficients of `p_j`, constant term first.
    pub fn coefficients(&self, j: usize) -> &[f64] {
        &self.coeffs[j]
    }

    /// Evaluates `p_j(t)`.
    ///
    /// Uses the Legendre three-term recurrence rather than the monomial
    /// coefficients; the recurrence keeps full precision where the
    /// alternating coefficients would cancel.
    pub fn eval(&self, j: usize, t: f64) -> f64 {
        let x = 2.0 * t - 1.0;
        let (p, _) = legendre_value_derivative(j, x);
        libm::sqrt(2.0 * j as f64 + 1.0) * p
    }

    /// `(p_0(t), ..., p_(r-1)(t))`.
    pub fn eval_all(&self, t: f64) -> Vec<f64> {
        (0..self.r()).map(|j| self.eval(j, t)).collect()
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k.min(n));
    let mut num = 1.0f64;
    let mut den = 1.0f64;
    for i in 0..k {
        num *= (n - i) as f64;
        den *= (i + 1) as f64;
    }
    num / den
}

/// Builds the shifted Legendre basis with `r` functions, `1 <= r <= 12`.
pub fn legendre_basis(r: usize) -> Result<OrthonormalBasis> {
    if !(1..=MAX_ORDER).contains(&r) {
        return Err(Error::InvalidInput(format!(
            "basis order r={r} outside 1..={MAX_ORDER}"
        )));
    }
    Ok(legendre_unchecked(r))
}

fn legendre_unchecked(r: usize) -> OrthonormalBasis {
    let mut coeffs = Vec::with_capacity(r);
    for j in 0..r {
        let norm = libm::sqrt(2.0 * j as f64 + 1.0);
        let sign_j = if j % 2 == 0 { 1.0 } else { -1.0 };
        let mut c = vec![0.0; j + 1];
        for (k, ck) in c.iter_mut().enumerate() {
            let sign_k = if k % 2 == 0 { 1.0 } else { -1.0 };
            *ck = sign_j * norm * binomial(j, k) * binomial(j + k, k) * sign_k;
        }
        coeffs.push(c);
    }
    OrthonormalBasis { coeffs }
}

/// Reproducing kernel `P(t, s) = sum_i p_i(t) p_i(s)` of the basis span.
pub fn projection_kernel(basis: &OrthonormalBasis, t: f64, s: f64) -> f64 {
    (0..basis.r()).map(|i| basis.eval(i, t) * basis.eval(i, s)).sum()
}

/// Gauss-Legendre rule on [0,1]: `r` nodes in (0,1) and positive weights
/// summing to one, exact through degree `2r - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    /// Wraps externally supplied nodes and weights (e.g. hand-built rules
    /// in tests); entries must be finite, nodes in [0, 1].
    pub fn new(nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if nodes.len() != weights.len() || nodes.is_empty() {
            return Err(Error::InvalidInput(format!(
                "rule needs matching nonempty nodes/weights, got {}/{}",
                nodes.len(),
                weights.len()
            )));
        }
        if nodes.iter().any(|c| !(0.0..=1.0).contains(c)) || weights.iter().any(|b| !b.is_finite())
        {
            return Err(Error::InvalidInput(
                "rule nodes must lie in [0, 1] with finite weights".into(),
            ));
        }
        Ok(Self { nodes, weights })
    }

    pub fn r(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `sum_j b_j f(c_j)`.
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(c, b)| b * f(*c))
            .sum()
    }
}

/// Legendre P_r(x) and P_r'(x) on [-1,1] by the three-term recurrence,
/// which stays well conditioned at every order.
fn legendre_value_derivative(r: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 1.0;
    let mut p = x;
    if r == 0 {
        return (1.0, 0.0);
    }
    for k in 1..r {
        let kf = k as f64;
        let p_next = ((2.0 * kf + 1.0) * x * p - kf * p_prev) / (kf + 1.0);
        p_prev = p;
        p = p_next;
    }
    let dp = r as f64 * (x * p - p_prev) / (x * x - 1.0);
    (p, dp)
}

/// Builds the `r`-point Gauss-Legendre rule on [0,1].
///
/// Nodes are the roots of the degree-`r` shifted Legendre polynomial,
/// located by Newton iteration from Chebyshev starting values; weights are
/// the Christoffel numbers `1 / sum_i p_i(c_j)^2` of the orthonormal basis.
pub fn gauss_rule(r: usize) -> Result<QuadratureRule> {
    if !(1..=MAX_ORDER).contains(&r) {
        return Err(Error::InvalidInput(format!(
            "quadrature order r={r} outside 1..={MAX_ORDER}"
        )));
    }
    let pi = core::f64::consts::PI;
    let mut nodes = Vec::with_capacity(r);
    let mut weights = Vec::with_capacity(r);
    // Roots come out in descending order on [-1,1]; iterate i downwards so
    // the mapped nodes on [0,1] are ascending.
    for i in (1..=r).rev() {
        let mut x = libm::cos(pi * (i as f64 - 0.25) / (r as f64 + 0.5));
        let mut converged = false;
        for _ in 0..100 {
            let (p, dp) = legendre_value_derivative(r, x);
            let dx = p / dp;
            x -= dx;
            if libm::fabs(dx) < 1.0e-15 {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Numeric(format!(
                "Newton failed to converge on node {i} of the degree-{r} rule"
            )));
        }
        let (_, dp) = legendre_value_derivative(r, x);
        nodes.push(0.5 * (1.0 + x));
        // Classical Gauss-Legendre weight 2/((1-x^2) P'^2), halved by the
        // change of interval to [0,1].
        weights.push(1.0 / ((1.0 - x * x) * dp * dp));
    }
    Ok(QuadratureRule { nodes, weights })
}

/// Cardinal Lagrange weights `(l_1(s), ..., l_r(s))` on the rule's nodes,
/// with `l_m(c_j) = delta_mj`.
pub fn lagrange_weights(rule: &QuadratureRule, s: f64) -> Result<Vec<f64>> {
    let c = &rule.nodes;
    let r = c.len();
    for i in 0..r {
        for j in (i + 1)..r {
            if c[i] == c[j] {
                return Err(Error::InvalidInput(format!(
                    "coincident nodes at indices {i} and {j}"
                )));
            }
        }
    }
    let mut out = Vec::with_capacity(r);
    for m in 0..r {
        let mut l = 1.0;
        for j in 0..r {
            if j != m {
                l *= (s - c[j]) / (c[m] - c[j]);
            }
        }
        out.push(l);
    }
    Ok(out)
}
