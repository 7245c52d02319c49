use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::estimate::Estimate;
use super::pool::{add_counts, run, Sampling, Tally};
use crate::configuration::{Diagnostics, LazyTree, ModelParams};
use crate::error::Result;
use crate::loops::{max_generation_reached, TraceBudget};
use crate::stream::replica_seed;

/// Integer tallies of a survival run over a range of replicas.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReachCounts {
    pub n: u64,
    /// `reached[k]`: replicas whose loop of `(root, 0)` reached generation `k`.
    pub reached: Vec<u64>,
    /// Vertices materialized, summed over replicas blocked before the deepest generation.
    pub blocked_visited: u64,
    pub max_visited: u64,
    pub diagnostics: Diagnostics,
}

impl Tally for ReachCounts {
    fn merge(&mut self, other: Self) {
        self.n += other.n;
        add_counts(&mut self.reached, &other.reached);
        self.blocked_visited += other.blocked_visited;
        self.max_visited = self.max_visited.max(other.max_visited);
        self.diagnostics += other.diagnostics;
    }
}

impl ReachCounts {
    /// Folds in the counts of a disjoint replica range.
    pub fn absorb(&mut self, other: ReachCounts) {
        self.merge(other);
    }

    pub fn m_max(&self) -> usize {
        self.reached.len().saturating_sub(1)
    }

    pub fn blocked(&self) -> u64 {
        self.n - self.reached.last().copied().unwrap_or(self.n)
    }

    /// `σ̂_k`.
    pub fn estimate(&self, k: usize, seed: u64) -> Estimate {
        Estimate::proportion(self.reached[k], self.n, seed)
    }

    pub fn estimates(&self, seed: u64) -> Vec<Estimate> {
        (0..self.reached.len()).map(|k| self.estimate(k, seed)).collect()
    }

    /// Mean number of materialized vertices per blocked replica.
    pub fn mean_visited_blocked(&self) -> Option<f64> {
        let blocked = self.blocked();
        (blocked > 0).then(|| self.blocked_visited as f64 / blocked as f64)
    }
}

/// Traces the loop of `(root, 0)` in every replica of `replicas` on the
/// depth-`m_max` tree and records the deepest generation reached.
///
/// The trace of a replica stops at its first contact with generation
/// `m_max`. Up to that point it coincides with the trace in any shallower
/// truncation `T^(k)`, so one run yields `σ̂_k` for every `k ≤ m_max`.
pub fn reach_counts(
    params: &ModelParams,
    m_max: usize,
    seed: u64,
    replicas: Range<u64>,
    workers: usize,
    budget: TraceBudget,
) -> Result<ReachCounts> {
    params.validate()?;
    run(
        replicas,
        workers,
        || LazyTree::new(*params, m_max, 0),
        |tree, i, tally: &mut ReachCounts| {
            let rseed = replica_seed(seed, i);
            tree.reset(rseed);
            let reached = max_generation_reached(tree, m_max, budget, rseed)?;
            if tally.reached.len() < m_max + 1 {
                tally.reached.resize(m_max + 1, 0);
            }
            for count in &mut tally.reached[..=reached] {
                *count += 1;
            }
            tally.n += 1;
            let visited = tree.visited_vertices() as u64;
            if reached < m_max {
                tally.blocked_visited += visited;
            }
            tally.max_visited = tally.max_visited.max(visited);
            tally.diagnostics += tree.take_diagnostics();
            Ok(())
        },
    )
}

/// `σ̂_0, …, σ̂_{m_max}` from one run, with the run's tallies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaProfile {
    pub estimates: Vec<Estimate>,
    pub counts: ReachCounts,
}

pub fn estimate_sigma_profile(params: &ModelParams, m_max: usize, sampling: &Sampling) -> Result<SigmaProfile> {
    sampling.validate()?;
    let counts = reach_counts(params, m_max, sampling.seed, 0..sampling.n, sampling.workers, sampling.budget)?;
    Ok(SigmaProfile {
        estimates: counts.estimates(sampling.seed),
        counts,
    })
}

/// Fraction of replicas whose loop of `(root, 0)` reaches generation `m`.
pub fn estimate_sigma(params: &ModelParams, m: usize, sampling: &Sampling) -> Result<Estimate> {
    if m == 0 {
        sampling.validate()?;
        params.validate()?;
        return Ok(Estimate::exact(1.0, sampling.n, sampling.seed));
    }
    Ok(estimate_sigma_profile(params, m, sampling)?.estimates[m])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_forms::{percolation_survival, sigma1_exact};

    #[test]
    fn sigma_zero_is_one() {
        let params = ModelParams::new(4, 0.5, 0.3).unwrap();
        let e = estimate_sigma(&params, 0, &Sampling::new(10, 3)).unwrap();
        assert_eq!((e.mean, e.half_width, e.n), (1.0, 0.0, 10));
    }

    #[test]
    fn sigma_one_matches_exact() {
        let params = ModelParams::new(5, 0.5, 0.2).unwrap();
        let e = estimate_sigma(&params, 1, &Sampling::new(20_000, 11)).unwrap();
        assert!(e.within(sigma1_exact(5, 0.2), 4.0), "{e:?}");
    }

    #[test]
    fn zero_intensity_never_leaves_the_root() {
        let params = ModelParams::new(3, 0.5, 0.0).unwrap();
        let p = estimate_sigma_profile(&params, 4, &Sampling::new(100, 1)).unwrap();
        assert_eq!(p.counts.reached, vec![100, 0, 0, 0, 0]);
        assert_eq!(p.counts.mean_visited_blocked(), Some(1.0));
    }

    #[test]
    fn profile_is_non_increasing_and_dominated() {
        let params = ModelParams::new(4, 0.3, 0.3).unwrap();
        let p = estimate_sigma_profile(&params, 6, &Sampling::new(4000, 5)).unwrap();
        assert!(p.counts.reached.windows(2).all(|w| w[0] >= w[1]));
        for (m, e) in p.estimates.iter().enumerate() {
            assert!(e.mean <= percolation_survival(4, 0.3, m) + 4.0 * e.std_error());
        }
    }

    #[test]
    fn profile_prefix_matches_a_shallower_run() {
        let params = ModelParams::new(3, 0.7, 0.4).unwrap();
        let deep = estimate_sigma_profile(&params, 6, &Sampling::new(500, 9)).unwrap();
        let shallow = estimate_sigma_profile(&params, 3, &Sampling::new(500, 9)).unwrap();
        assert_eq!(&deep.counts.reached[..4], &shallow.counts.reached[..]);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let params = ModelParams::new(3, 0.5, 0.4).unwrap();
        let one = estimate_sigma_profile(&params, 5, &Sampling::new(3000, 2).with_workers(1)).unwrap();
        let four = estimate_sigma_profile(&params, 5, &Sampling::new(3000, 2).with_workers(4)).unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn ranges_add_up() {
        let params = ModelParams::new(3, 0.5, 0.4).unwrap();
        let budget = TraceBudget::default();
        let whole = reach_counts(&params, 4, 8, 0..1000, 2, budget).unwrap();
        let mut parts = reach_counts(&params, 4, 8, 0..400, 2, budget).unwrap();
        parts.absorb(reach_counts(&params, 4, 8, 400..1000, 2, budget).unwrap());
        assert_eq!(whole, parts);
    }

    #[test]
    fn budget_errors_carry_the_replica_seed() {
        let params = ModelParams::new(3, 0.5, 2.0).unwrap();
        let tiny = TraceBudget { max_jumps: 1 };
        let err = reach_counts(&params, 5, 8, 0..100, 1, tiny).unwrap_err();
        match err {
            crate::Error::BudgetExhausted { seed, .. } => {
                assert!((0..100).any(|i| replica_seed(8, i) == seed));
            }
            other => panic!("{other:?}"),
        }
    }
}
