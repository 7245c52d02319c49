use rand::Rng;
use serde::{Deserialize, Serialize};

use super::estimate::Estimate;
use super::pool::{run, Sampling, Tally};
use crate::configuration::{LazyTree, Link, LinkKind, ModelParams, WithExtraLink};
use crate::error::{invalid, Result};
use crate::loops::{max_generation_reached, TraceBudget};
use crate::stream::{auxiliary, replica_seed};
use crate::topology::{edge_at_index, edge_count, EdgeId};

const PIVOTAL_TAG: u64 = 1;

/// One replica of the pivotality experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct PivotalSample {
    /// The loop of `(root, 0)` reaches level `n` in `ω`.
    pub before: bool,
    /// The same in `ω ∪ {𝔞}`.
    pub after: bool,
    pub edge: EdgeId,
    pub link: Link,
    /// Times the added link's time was redrawn after a collision.
    pub redraws: u32,
}

impl PivotalSample {
    /// `P⁺`: the added link creates the connection.
    pub fn on_pivotal(&self) -> bool {
        !self.before && self.after
    }

    /// `P⁻`: the added link breaks the connection.
    pub fn off_pivotal(&self) -> bool {
        self.before && !self.after
    }
}

/// Draws `𝔞` uniformly over the edges of `T^(n)` and `[0, 1)`, then traces
/// the loop of `(root, 0)` with and without it on the same materialized
/// configuration. `tree` must have depth `n_level`; its seed drives `𝔞`.
pub fn pivotal_sample(tree: &mut LazyTree, n_level: usize, budget: TraceBudget) -> Result<PivotalSample> {
    let params = *tree.params();
    let total = edge_count(params.d, n_level as u32)?;
    let mut rng = auxiliary(tree.seed(), PIVOTAL_TAG);
    let edge = edge_at_index(params.d, n_level as u32, rng.random_range(0..total))?;
    let kind = if rng.random::<f64>() < params.u {
        LinkKind::Cross
    } else {
        LinkKind::DoubleBar
    };
    let ends = tree.edge_ends(&edge)?;
    let child = ends[1].0;
    let mut redraws = 0;
    let mut time: f64 = rng.random();
    while tree.parent_edge_links(child).iter().any(|l| l.time == time) {
        redraws += 1;
        time = rng.random();
    }
    let link = Link { time, kind };
    let seed = tree.seed();
    let before = max_generation_reached(tree, n_level, budget, seed)? >= n_level;
    let mut with = WithExtraLink::new(tree, ends, link);
    let after = max_generation_reached(&mut with, n_level, budget, seed)? >= n_level;
    Ok(PivotalSample {
        before,
        after,
        edge,
        link,
        redraws,
    })
}

#[derive(Debug, Clone, Copy, Default)]
struct PivotalTally {
    n: u64,
    plus: u64,
    minus: u64,
    redraws: u64,
}

impl Tally for PivotalTally {
    fn merge(&mut self, other: Self) {
        self.n += other.n;
        self.plus += other.plus;
        self.minus += other.minus;
        self.redraws += other.redraws;
    }
}

/// Estimates of `P(P⁺)`, `P(P⁻)` and of `dσ_n/dβ = |E_n|(P(P⁺) − P(P⁻))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PivotalEstimate {
    pub plus: Estimate,
    pub minus: Estimate,
    pub derivative: Estimate,
    pub edge_count: u64,
    /// Added-link times redrawn after colliding with an existing link.
    pub redraws: u64,
}

pub fn estimate_pivotal(params: &ModelParams, n_level: usize, sampling: &Sampling) -> Result<PivotalEstimate> {
    params.validate()?;
    sampling.validate()?;
    if n_level < 1 {
        return Err(invalid("n_level", "the level must be at least 1"));
    }
    let edges = edge_count(params.d, n_level as u32)?;
    let (seed, budget) = (sampling.seed, sampling.budget);
    let t = run(
        0..sampling.n,
        sampling.workers,
        || LazyTree::new(*params, n_level, 0),
        |tree, i, tally: &mut PivotalTally| {
            tree.reset(replica_seed(seed, i));
            let s = pivotal_sample(tree, n_level, budget)?;
            tally.n += 1;
            tally.plus += u64::from(s.on_pivotal());
            tally.minus += u64::from(s.off_pivotal());
            tally.redraws += u64::from(s.redraws);
            Ok(())
        },
    )?;
    // per replica the difference takes values +1, -1, 0
    let diff = Estimate::from_moments(t.plus as f64 - t.minus as f64, (t.plus + t.minus) as f64, t.n, seed);
    Ok(PivotalEstimate {
        plus: Estimate::proportion(t.plus, t.n, seed),
        minus: Estimate::proportion(t.minus, t.n, seed),
        derivative: diff.scaled(edges as f64),
        edge_count: edges,
        redraws: t.redraws,
    })
}
