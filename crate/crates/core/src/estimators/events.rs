use serde::{Deserialize, Serialize};

use super::estimate::Estimate;
use super::pool::{add_counts, run, Sampling, Tally};
use crate::configuration::{EagerConfiguration, LazyTree, ModelParams, NodeId};
use crate::error::{invalid, Result};
use crate::loops::max_generation_reached;
use crate::stream::replica_seed;
use crate::topology::{EdgeId, VertexAddress};

/// Classification of the link multiplicities around the root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RootEventClass {
    /// Every root edge carries at most one link.
    A1,
    /// One root edge carries exactly two links, the other root edges and the
    /// edges below that child at most one.
    A2,
    /// `k ≥ 2` root edges carry two or more links, or (`k = 1`) one root edge
    /// carries three or more and the others at most one.
    APrime(u32),
    /// One root edge carries exactly two links, the others at most one, and
    /// `k ≥ 1` edges below that child carry two or more.
    ADoublePrime(u32),
}

/// Classifies from link counts: `root[i]` on root edge `i`, and `below(i)`
/// the counts on the child edges of root child `i`, asked for only when needed.
pub fn classify_counts<F: FnOnce(usize) -> Vec<usize>>(root: &[usize], below: F) -> RootEventClass {
    let heavy: Vec<usize> = (0..root.len()).filter(|&i| root[i] >= 2).collect();
    match heavy.len() {
        0 => RootEventClass::A1,
        1 => {
            let x = heavy[0];
            if root[x] >= 3 {
                return RootEventClass::APrime(1);
            }
            let k = below(x).iter().filter(|&&c| c >= 2).count() as u32;
            if k == 0 {
                RootEventClass::A2
            } else {
                RootEventClass::ADoublePrime(k)
            }
        }
        k => RootEventClass::APrime(k as u32),
    }
}

/// Classifies the root neighbourhood of a lazy tree of depth at least 2,
/// materializing the root's children and, if needed, one set of grandchildren.
pub fn classify_root_event(tree: &mut LazyTree) -> Result<RootEventClass> {
    if tree.depth() < 2 {
        return Err(invalid("m", "classification needs a tree of depth at least 2"));
    }
    let d = tree.params().d;
    let children: Vec<NodeId> = (0..d).map(|i| tree.child(NodeId::ROOT, i).expect("depth >= 2")).collect();
    let root: Vec<usize> = children.iter().map(|&c| tree.parent_edge_links(c).len()).collect();
    Ok(classify_counts(&root, |x| {
        (0..d)
            .map(|i| {
                let g = tree.child(children[x], i).expect("depth >= 2");
                tree.parent_edge_links(g).len()
            })
            .collect()
    }))
}

/// Classifies an eager tree configuration of depth at least 2.
pub fn classify_eager(config: &EagerConfiguration, d: u32) -> Result<RootEventClass> {
    let count = |path: Vec<u32>| -> Result<usize> {
        let edge = EdgeId::new(VertexAddress::new(path, d)?)?;
        Ok(config.edge(&edge).map_or(0, |e| e.len()))
    };
    let root = (0..d).map(|i| count(vec![i])).collect::<Result<Vec<_>>>()?;
    let mut failure = None;
    let class = classify_counts(&root, |x| {
        (0..d)
            .map(|i| {
                count(vec![x as u32, i]).unwrap_or_else(|e| {
                    failure = Some(e);
                    0
                })
            })
            .collect()
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(class),
    }
}

/// Counts of each class over a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RootEventTally {
    pub n: u64,
    pub a1: u64,
    pub a2: u64,
    /// `a_prime[k]` counts `A′_k`; index 0 is unused.
    pub a_prime: Vec<u64>,
    /// `a_double_prime[k]` counts `A″_k`; index 0 is unused.
    pub a_double_prime: Vec<u64>,
    pub seed: u64,
}

impl Tally for RootEventTally {
    fn merge(&mut self, other: Self) {
        self.n += other.n;
        self.a1 += other.a1;
        self.a2 += other.a2;
        add_counts(&mut self.a_prime, &other.a_prime);
        add_counts(&mut self.a_double_prime, &other.a_double_prime);
    }
}

impl RootEventTally {
    pub fn record(&mut self, class: RootEventClass) {
        self.n += 1;
        let bump = |v: &mut Vec<u64>, k: u32| {
            let k = k as usize;
            if v.len() <= k {
                v.resize(k + 1, 0);
            }
            v[k] += 1;
        };
        match class {
            RootEventClass::A1 => self.a1 += 1,
            RootEventClass::A2 => self.a2 += 1,
            RootEventClass::APrime(k) => bump(&mut self.a_prime, k),
            RootEventClass::ADoublePrime(k) => bump(&mut self.a_double_prime, k),
        }
    }

    /// Sum of all class counts; equals `n` because the classes partition.
    pub fn total(&self) -> u64 {
        self.a1 + self.a2 + self.a_prime.iter().sum::<u64>() + self.a_double_prime.iter().sum::<u64>()
    }

    pub fn a1(&self) -> Estimate {
        Estimate::proportion(self.a1, self.n, self.seed)
    }

    pub fn a2(&self) -> Estimate {
        Estimate::proportion(self.a2, self.n, self.seed)
    }

    fn weighted(&self, counts: &[u64]) -> Estimate {
        let (mut s1, mut s2) = (0.0, 0.0);
        for (k, &c) in counts.iter().enumerate() {
            let k = k as f64;
            s1 += k * c as f64;
            s2 += k * k * c as f64;
        }
        Estimate::from_moments(s1, s2, self.n, self.seed)
    }

    /// Estimate of `Σ k P(A′_k)`.
    pub fn k_weighted_prime(&self) -> Estimate {
        self.weighted(&self.a_prime)
    }

    /// Estimate of `Σ P(A′_k)`.
    pub fn prime(&self) -> Estimate {
        Estimate::proportion(self.a_prime.iter().sum(), self.n, self.seed)
    }

    /// Estimate of `Σ k P(A″_k)`.
    pub fn k_weighted_double_prime(&self) -> Estimate {
        self.weighted(&self.a_double_prime)
    }

    /// Estimate of `Σ P(A″_k)`.
    pub fn double_prime(&self) -> Estimate {
        Estimate::proportion(self.a_double_prime.iter().sum(), self.n, self.seed)
    }
}

/// Classifies the root neighbourhood of independent configurations.
pub fn estimate_root_events(params: &ModelParams, sampling: &Sampling) -> Result<RootEventTally> {
    params.validate()?;
    sampling.validate()?;
    let seed = sampling.seed;
    let mut tally = run(
        0..sampling.n,
        sampling.workers,
        || LazyTree::new(*params, 2, 0),
        |tree, i, tally: &mut RootEventTally| {
            tree.reset(replica_seed(seed, i));
            tally.record(classify_root_event(tree)?);
            Ok(())
        },
    )?;
    tally.seed = seed;
    Ok(tally)
}

#[derive(Debug, Clone, Copy, Default)]
struct JointTally {
    n: u64,
    blocked_a1: u64,
    blocked_a2: u64,
}

impl Tally for JointTally {
    fn merge(&mut self, other: Self) {
        self.n += other.n;
        self.blocked_a1 += other.blocked_a1;
        self.blocked_a2 += other.blocked_a2;
    }
}

/// Frequencies of `B^m ∩ A₁` and `B^m ∩ A₂`, where `B^m` is the event that
/// the loop of `(root, 0)` does not reach generation `m`.
pub fn estimate_blocked_joint(params: &ModelParams, m: usize, sampling: &Sampling) -> Result<(Estimate, Estimate)> {
    params.validate()?;
    sampling.validate()?;
    if m < 2 {
        return Err(invalid("m", format!("the joint events need m >= 2, got {m}")));
    }
    let (seed, budget) = (sampling.seed, sampling.budget);
    let tally = run(
        0..sampling.n,
        sampling.workers,
        || LazyTree::new(*params, m, 0),
        |tree, i, tally: &mut JointTally| {
            let rseed = replica_seed(seed, i);
            tree.reset(rseed);
            let class = classify_root_event(tree)?;
            tally.n += 1;
            if matches!(class, RootEventClass::A1 | RootEventClass::A2) {
                let blocked = max_generation_reached(tree, m, budget, rseed)? < m;
                if blocked {
                    match class {
                        RootEventClass::A1 => tally.blocked_a1 += 1,
                        _ => tally.blocked_a2 += 1,
                    }
                }
            }
            Ok(())
        },
    )?;
    Ok((
        Estimate::proportion(tally.blocked_a1, tally.n, seed),
        Estimate::proportion(tally.blocked_a2, tally.n, seed),
    ))
}
