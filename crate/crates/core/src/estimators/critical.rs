use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::estimate::Estimate;
use super::pool::default_workers;
use super::sigma::{reach_counts, ReachCounts};
use crate::closed_forms::{beta_of_alpha, percolation_critical_beta, percolation_survival};
use crate::configuration::ModelParams;
use crate::error::{invalid, Result};
use crate::loops::TraceBudget;

/// Level that `σ̂_m` is compared against to call a probe super- or subcritical.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ThresholdRule {
    /// `s_m` of edge percolation (an edge is open when it carries a link) at
    /// its own critical point `d(1 − e^{−β}) = 1`: the survival profile of a
    /// critical branching process with Poisson(1)-like offspring, which the
    /// loop exploration shares at leading order.
    CriticalPercolation,
    /// `ε/(2d)`.
    EpsilonOverTwoD,
    Fixed(f64),
}

impl Default for ThresholdRule {
    fn default() -> Self {
        ThresholdRule::CriticalPercolation
    }
}

impl ThresholdRule {
    pub fn threshold(&self, d: u32, m: usize, epsilon: f64) -> f64 {
        match *self {
            ThresholdRule::CriticalPercolation => percolation_survival(d, percolation_critical_beta(d), m),
            ThresholdRule::EpsilonOverTwoD => epsilon / (2.0 * f64::from(d)),
            ThresholdRule::Fixed(t) => t,
        }
    }
}

impl std::str::FromStr for ThresholdRule {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "percolation" => Ok(ThresholdRule::CriticalPercolation),
            "epsilon" => Ok(ThresholdRule::EpsilonOverTwoD),
            other => other
                .parse::<f64>()
                .ok()
                .filter(|t| *t > 0.0 && *t < 1.0)
                .map(ThresholdRule::Fixed)
                .ok_or_else(|| invalid("threshold", format!("expected `percolation`, `epsilon` or a number in (0, 1), got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Supercritical,
    Subcritical,
    Inconclusive,
}

/// Settings of the critical-point bisection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalSearch {
    pub m: usize,
    pub initial_samples: u64,
    /// Samples at which an inconclusive probe is given up.
    pub max_samples: u64,
    pub target_width: f64,
    pub gate_se: f64,
    pub threshold: ThresholdRule,
    pub epsilon: f64,
    pub alpha_bound: f64,
    pub seed: u64,
    pub workers: usize,
    pub budget: TraceBudget,
}

impl CriticalSearch {
    pub fn new(m: usize, initial_samples: u64, seed: u64) -> Self {
        CriticalSearch {
            m,
            initial_samples,
            max_samples: initial_samples.saturating_mul(16),
            target_width: 0.2,
            gate_se: 4.0,
            threshold: ThresholdRule::default(),
            epsilon: 0.1,
            alpha_bound: 2.0,
            seed,
            workers: default_workers(),
            budget: TraceBudget::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(invalid("m", "the search needs m >= 1"));
        }
        if self.initial_samples == 0 || self.max_samples < self.initial_samples {
            return Err(invalid("n", "need 0 < initial samples <= max samples"));
        }
        if !(self.target_width > 0.0) {
            return Err(invalid("target_width", "must be positive"));
        }
        if !(self.alpha_bound > 0.0 && self.alpha_bound <= 2.0) {
            return Err(invalid("alpha_bound", "must lie in (0, 2]"));
        }
        if self.workers == 0 {
            return Err(invalid("workers", "at least one worker is required"));
        }
        Ok(())
    }
}

/// One evaluation of `σ̂_m` at a fixed `α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub alpha: f64,
    pub beta: f64,
    pub sigma: Estimate,
    pub threshold: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BracketStatus {
    /// Bracket no wider than the target.
    Confident,
    /// Inconclusive probes stopped the bisection early.
    LowConfidence,
    /// The crossing lies outside `[0, A]`.
    NotBracketed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalEstimate {
    pub d: u32,
    pub u: f64,
    pub m: usize,
    pub alpha_hat: f64,
    pub bracket: (f64, f64),
    pub status: BracketStatus,
    pub threshold: f64,
    /// Every probe made, in the order made.
    pub probes: Vec<Probe>,
}

impl CriticalEstimate {
    pub fn width(&self) -> f64 {
        self.bracket.1 - self.bracket.0
    }

    pub fn beta_hat(&self) -> f64 {
        beta_of_alpha(self.alpha_hat, self.d)
    }
}

fn verdict(sigma: &Estimate, threshold: f64, gate: f64) -> Verdict {
    let se = sigma.std_error();
    if sigma.mean - gate * se > threshold {
        Verdict::Supercritical
    } else if sigma.mean + gate * se < threshold {
        Verdict::Subcritical
    } else {
        Verdict::Inconclusive
    }
}

/// Estimates `σ_m` at `alpha`, doubling the sample until the verdict is
/// conclusive or the cap is reached. The doubled runs extend the replica
/// range, so earlier samples are reused.
pub fn probe_alpha(d: u32, u: f64, alpha: f64, search: &CriticalSearch) -> Result<Probe> {
    search.validate()?;
    let params = ModelParams::from_alpha(d, u, alpha)?;
    let threshold = search.threshold.threshold(d, search.m, search.epsilon);
    let run = |range| reach_counts(&params, search.m, search.seed, range, search.workers, search.budget);
    let mut counts: ReachCounts = run(0..search.initial_samples)?;
    loop {
        let sigma = counts.estimate(search.m, search.seed);
        let v = verdict(&sigma, threshold, search.gate_se);
        if v != Verdict::Inconclusive || counts.n >= search.max_samples {
            return Ok(Probe {
                alpha,
                beta: params.beta,
                sigma,
                threshold,
                verdict: v,
            });
        }
        let next = (2 * counts.n).min(search.max_samples);
        counts.absorb(run(counts.n..next)?);
    }
}

/// Bisection for the `α` at which `σ̂_m` crosses the threshold, on `[0, A]`.
///
/// An inconclusive midpoint is replaced by the two quarter points of the
/// current bracket; the search stops when the bracket reaches the target
/// width or when neither quarter point is conclusive.
pub fn estimate_alpha_c(d: u32, u: f64, search: &CriticalSearch) -> Result<CriticalEstimate> {
    search.validate()?;
    ModelParams::new(d, u, 1.0 / f64::from(d))?;
    let mut cache: BTreeMap<u64, Probe> = BTreeMap::new();
    let mut probes = Vec::new();
    let mut probe = |alpha: f64| -> Result<Verdict> {
        let alpha = alpha.clamp(0.0, search.alpha_bound);
        if let Some(p) = cache.get(&alpha.to_bits()) {
            return Ok(p.verdict);
        }
        let p = probe_alpha(d, u, alpha, search)?;
        cache.insert(alpha.to_bits(), p);
        probes.push(p);
        Ok(p.verdict)
    };
    let (mut lo, mut hi) = (0.0, search.alpha_bound);
    let mut status = None;
    if probe(lo)? == Verdict::Supercritical {
        hi = lo;
        status = Some(BracketStatus::NotBracketed);
    } else if probe(hi)? == Verdict::Subcritical {
        lo = hi;
        status = Some(BracketStatus::NotBracketed);
    }
    if status.is_none() {
        while hi - lo > search.target_width {
            let mid = 0.5 * (lo + hi);
            match probe(mid)? {
                Verdict::Supercritical => hi = mid,
                Verdict::Subcritical => lo = mid,
                Verdict::Inconclusive => {
                    let (q1, q2) = (0.5 * (lo + mid), 0.5 * (mid + hi));
                    let mut moved = false;
                    match probe(q1)? {
                        Verdict::Supercritical => {
                            hi = q1;
                            continue;
                        }
                        Verdict::Subcritical => {
                            lo = q1;
                            moved = true;
                        }
                        Verdict::Inconclusive => {}
                    }
                    match probe(q2)? {
                        Verdict::Subcritical => {
                            lo = q2;
                            moved = true;
                        }
                        Verdict::Supercritical => {
                            hi = q2;
                            moved = true;
                        }
                        Verdict::Inconclusive => {}
                    }
                    if !moved {
                        break;
                    }
                }
            }
        }
        status = Some(if hi - lo <= search.target_width {
            BracketStatus::Confident
        } else {
            BracketStatus::LowConfidence
        });
    }
    Ok(CriticalEstimate {
        d,
        u,
        m: search.m,
        alpha_hat: 0.5 * (lo + hi),
        bracket: (lo, hi),
        status: status.expect("set above"),
        threshold: search.threshold.threshold(d, search.m, search.epsilon),
        probes,
    })
}
