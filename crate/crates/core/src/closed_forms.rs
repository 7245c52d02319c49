//! Exact and quadrature-evaluated probabilities of the tree loop model.
//!
//! Notation: `p_j` is the Poisson(β) mass at `j`, `p_{≥j}` its tail,
//! `q = p_{≥3}`. A root child edge with at most one link is traversed by a
//! monolink, so blocking at such a child is a fresh depth-`(m-1)` event.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::configuration::ModelParams;
use crate::error::{invalid, Result};

/// `1 − u(1−u) − (1−u)²/6`, the second-order coefficient of the critical curve.
pub fn alpha_bar(u: f64) -> f64 {
    1.0 - u * (1.0 - u) - (1.0 - u) * (1.0 - u) / 6.0
}

pub fn beta_of_alpha(alpha: f64, d: u32) -> f64 {
    let d = f64::from(d);
    1.0 / d + alpha / (d * d)
}

pub fn alpha_of_beta(beta: f64, d: u32) -> f64 {
    let d = f64::from(d);
    (beta - 1.0 / d) * d * d
}

/// `base^n`, through logarithms once `n` exceeds 200.
pub fn pow_d(base: f64, n: u32) -> f64 {
    if n > 200 {
        if base <= 0.0 {
            return 0.0;
        }
        (f64::from(n) * base.ln()).exp()
    } else {
        base.powi(n as i32)
    }
}

pub fn poisson_pmf(j: u32, beta: f64) -> f64 {
    if beta == 0.0 {
        return if j == 0 { 1.0 } else { 0.0 };
    }
    let log = -beta + f64::from(j) * beta.ln() - ln_factorial(j);
    log.exp()
}

fn ln_factorial(j: u32) -> f64 {
    (2..=j).map(|k| f64::from(k).ln()).sum()
}

/// `P(Poisson(β) ≥ j_min)`. Small intensities sum the tail directly to avoid
/// cancellation in `1 − Σ_{j<j_min} p_j`.
pub fn poisson_tail(j_min: u32, beta: f64) -> f64 {
    if j_min == 0 {
        return 1.0;
    }
    if beta == 0.0 {
        return 0.0;
    }
    if beta < f64::from(j_min) {
        let mut term = poisson_pmf(j_min, beta);
        let mut sum = 0.0;
        let mut j = j_min;
        while term > sum * 1e-18 && j < j_min + 400 {
            sum += term;
            j += 1;
            term *= beta / f64::from(j);
        }
        sum
    } else {
        let head: f64 = (0..j_min).map(|j| poisson_pmf(j, beta)).sum();
        (1.0 - head).max(0.0)
    }
}

/// `P(A₁)`: every root edge carries at most one link.
pub fn prob_a1(d: u32, beta: f64) -> f64 {
    pow_d((-beta).exp() * (1.0 + beta), d)
}

/// `P(A₂)`: one root edge with exactly two links, its siblings and the edges
/// below its child with at most one.
pub fn prob_a2(d: u32, beta: f64) -> f64 {
    let df = f64::from(d);
    0.5 * df * beta * beta * (-beta).exp() * pow_d((-beta).exp() * (1.0 + beta), 2 * d - 1)
}

/// `P(B^m ∩ A₁) = (e^{−β}(1 + βζ_{m−1}))^d`.
pub fn prob_b_given_a1(d: u32, beta: f64, zeta_prev: f64) -> f64 {
    pow_d((-beta).exp() * (1.0 + beta * zeta_prev), d)
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Newton iteration from the Chebyshev-like initial guess.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp;
        loop {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = 0.5 * (1.0 - z);
        nodes[n - 1 - i] = 0.5 * (1.0 + z);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

/// Order of the quadrature used for the two-link expectations.
pub const QUADRATURE_ORDER: usize = 64;

fn quadrature() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(QUADRATURE_ORDER))
}

/// `E[h(X)]` for `X` with density `2x` on `[0, 1]`.
pub fn expect_x<F: Fn(f64) -> f64>(h: F) -> f64 {
    let (nodes, weights) = quadrature();
    nodes
        .iter()
        .zip(weights)
        .map(|(&x, &w)| w * 2.0 * x * h(x))
        .sum()
}

/// `P(B^m ∩ A₂)`, averaging over the covered lengths `(|Λ_ρ|, |Λ_x|)`:
/// `(X, 1−X)` for two crosses, `(X, X)` for two double bars and `(1, 1)` for
/// one of each. `zeta1 = ζ_{m−1}`, `zeta2 = ζ_{m−2}`.
pub fn prob_b_and_a2(d: u32, beta: f64, zeta1: f64, zeta2: f64, u: f64) -> f64 {
    let e = (-beta).exp();
    let at_root = |len: f64| pow_d(e * (1.0 + beta * zeta1 * len + beta * (1.0 - len)), d - 1);
    let at_child = |len: f64| pow_d(e * (1.0 + beta * zeta2 * len + beta * (1.0 - len)), d);
    let two_crosses = expect_x(|x| at_root(x) * at_child(1.0 - x));
    let two_bars = expect_x(|x| at_root(x) * at_child(x));
    let mixed = at_root(1.0) * at_child(1.0);
    let expectation = u * u * two_crosses + (1.0 - u) * (1.0 - u) * two_bars + 2.0 * u * (1.0 - u) * mixed;
    0.5 * f64::from(d) * beta * beta * e * expectation
}

/// Survival history `σ₀, …, σ_{m−1}` for the recursion bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecursionState {
    pub sigma_history: Vec<f64>,
    pub params: ModelParams,
}

impl RecursionState {
    pub fn new(sigma_history: Vec<f64>, params: ModelParams) -> Self {
        RecursionState { sigma_history, params }
    }

    /// The generation `m` whose survival the history bounds.
    pub fn m(&self) -> usize {
        self.sigma_history.len()
    }

    /// `σ̃_{m−1} = min(σ_{m−1}, ε/d)`.
    pub fn sigma_tilde(&self) -> Option<f64> {
        let last = *self.sigma_history.last()?;
        Some(last.min(self.params.epsilon / f64::from(self.params.d)))
    }

    /// `σ̌_{m−1} = Σ_{ℓ=3}^{m} (dq)^{ℓ−3} σ_{m−ℓ}`.
    pub fn sigma_check(&self) -> Result<f64> {
        let m = self.m();
        if m < 3 {
            return Err(invalid("m", format!("the upper recursion needs m >= 3, got {m}")));
        }
        let dq = f64::from(self.params.d) * poisson_tail(3, self.params.beta);
        let mut weight = 1.0;
        let mut sum = 0.0;
        for l in 3..=m {
            sum += weight * self.sigma_history[m - l];
            weight *= dq;
        }
        Ok(sum)
    }
}

/// Scale of the unknown remainders in the recursion bounds, `c/d³` and `c/d²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlackScale {
    pub constant: f64,
}

impl Default for SlackScale {
    fn default() -> Self {
        SlackScale { constant: 10.0 }
    }
}

impl SlackScale {
    pub fn lower(&self, d: u32) -> f64 {
        self.constant / f64::from(d).powi(3)
    }

    /// Relative slack of the upper bound; it multiplies `σ̌_{m−1}`.
    pub fn upper(&self, d: u32) -> f64 {
        self.constant / f64::from(d).powi(2)
    }
}

/// `σ̃ + (σ̃/d)(α − ᾱ(u)) − σ̃²/2` with `σ̃ = min(σ_{m−1}, ε/d)`, without the
/// `O(d⁻³)` remainder.
pub fn recursion_lower_rhs(state: &RecursionState) -> Result<f64> {
    let s = state
        .sigma_tilde()
        .ok_or_else(|| invalid("sigma_history", "needs at least σ₀"))?;
    let p = &state.params;
    let d = f64::from(p.d);
    Ok(s + (s / d) * (p.alpha() - alpha_bar(p.u)) - 0.5 * s * s)
}

/// `σ̌_{m−1}(1 + (α − ᾱ(u))/d)`, without the `O(d⁻²)` relative remainder.
pub fn recursion_upper_rhs(state: &RecursionState) -> Result<f64> {
    let check = state.sigma_check()?;
    let p = &state.params;
    Ok(check * (1.0 + (p.alpha() - alpha_bar(p.u)) / f64::from(p.d)))
}

/// The four sums over the events `A′_k` and `A″_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma4Sums {
    /// `Σ k P(A′_k)`
    pub k_weighted_prime: f64,
    /// `Σ P(A′_k)`
    pub prime: f64,
    /// `Σ k P(A″_k)`
    pub k_weighted_double_prime: f64,
    /// `Σ P(A″_k)`
    pub double_prime: f64,
}

impl Lemma4Sums {
    pub fn prime_ratio(&self) -> f64 {
        self.k_weighted_prime / self.prime
    }
}

/// `1 − (1−x)^n`.
fn one_minus_pow(x: f64, n: u32) -> f64 {
    -(f64::from(n) * (-x).ln_1p()).exp_m1()
}

/// `P(Bin(n, x) ≥ 2) = 1 − (1−x)^n − n x (1−x)^{n−1}`.
fn binomial_tail_ge2(n: u32, x: f64) -> f64 {
    if n < 2 || x == 0.0 {
        return 0.0;
    }
    if f64::from(n) * x < 0.1 {
        let ratio = x / (1.0 - x);
        let mut term = 0.5 * f64::from(n) * f64::from(n - 1) * x * x * pow_d(1.0 - x, n - 2);
        let mut sum = 0.0;
        let mut j = 2;
        while j <= n && term > sum * 1e-18 {
            sum += term;
            term *= f64::from(n - j) / f64::from(j + 1) * ratio;
            j += 1;
        }
        sum
    } else {
        1.0 - pow_d(1.0 - x, n) - f64::from(n) * x * pow_d(1.0 - x, n - 1)
    }
}

/// Sums of `P(A′_k)` and `P(A″_k)`, plain and `k`-weighted:
///
/// * `Σ k P(A′_k) = d p_{≥2} − d p₂ (1 − p_{≥2})^{d−1}`
/// * `Σ P(A′_k) = 1 − (1 − p_{≥2})^d − d p₂ (1 − p_{≥2})^{d−1}`
/// * `Σ k P(A″_k) = P(A″₀) d p_{≥2}`
/// * `Σ P(A″_k) = P(A″₀)(1 − (1 − p_{≥2})^d)`
///
/// with `P(A″₀) = d p₂ (e^{−β}(1+β))^{d−1}`. The first two are evaluated in
/// rearranged form to avoid cancellation at small β.
pub fn lemma4_sums(d: u32, beta: f64) -> Lemma4Sums {
    let df = f64::from(d);
    let p2 = poisson_pmf(2, beta);
    let p_ge2 = poisson_tail(2, beta);
    let q = poisson_tail(3, beta);
    let none_ge2 = pow_d(1.0 - p_ge2, d - 1);
    // d p≥2 − d p₂ (1−p≥2)^{d−1} = d q + d p₂ (1 − (1−p≥2)^{d−1})
    let k_weighted_prime = df * q + df * p2 * one_minus_pow(p_ge2, d - 1);
    // 1 − (1−p≥2)^d − d p₂ (1−p≥2)^{d−1} = P(Bin(d, p≥2) ≥ 2) + d q (1−p≥2)^{d−1}
    let prime = binomial_tail_ge2(d, p_ge2) + df * q * none_ge2;
    let a2_zero = df * p2 * prob_a1(d - 1, beta);
    Lemma4Sums {
        k_weighted_prime,
        prime,
        k_weighted_double_prime: a2_zero * df * p_ge2,
        double_prime: a2_zero * one_minus_pow(p_ge2, d),
    }
}

/// Survival to generation `m` of the root cluster of the percolation in which
/// an edge is open when it carries at least one link.
pub fn percolation_survival(d: u32, beta: f64, m: usize) -> f64 {
    let p = -(-beta).exp_m1();
    let mut s = 1.0;
    for _ in 0..m {
        s = 1.0 - pow_d(1.0 - p * s, d);
    }
    s
}

/// The intensity at which the percolation comparison is critical, `d(1 − e^{−β}) = 1`.
pub fn percolation_critical_beta(d: u32) -> f64 {
    -(-1.0 / f64::from(d)).ln_1p()
}

/// `σ₁ = 1 − e^{−dβ}`: the loop of `(ρ, 0)` jumps at the first root link
/// above time 0, so it reaches generation 1 exactly when a root link exists.
pub fn sigma1_exact(d: u32, beta: f64) -> f64 {
    -(-f64::from(d) * beta).exp_m1()
}

/// `dσ₁/dβ = d e^{−dβ}`.
pub fn sigma1_derivative(d: u32, beta: f64) -> f64 {
    f64::from(d) * (-f64::from(d) * beta).exp()
}
