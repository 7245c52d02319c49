//! Monte Carlo estimators.
//!
//! Every replica gets its own seed derived from the run seed and the replica
//! index, and results are reduced from integer counts, so an estimate depends
//! only on `(parameters, n, seed)` and not on the number of workers.

mod critical;
mod estimate;
mod events;
mod pivotal;
mod pool;
mod recursion;
mod sigma;

pub use critical::{
    estimate_alpha_c, probe_alpha, BracketStatus, CriticalEstimate, CriticalSearch, Probe, ThresholdRule, Verdict,
};
pub use estimate::{wilson_interval, Estimate, WILSON_CUTOFF, Z95};
pub use events::{
    classify_counts, classify_eager, classify_root_event, estimate_blocked_joint, estimate_root_events,
    RootEventClass, RootEventTally,
};
pub use pivotal::{estimate_pivotal, pivotal_sample, PivotalEstimate, PivotalSample};
pub use pool::{default_workers, Sampling};
pub use recursion::{
    geometric_decay_fit, recursion_consistency_report, recursion_rows, DecayFit, RecursionRow, RECURSION_GATE_SE,
};
pub use sigma::{estimate_sigma, estimate_sigma_profile, reach_counts, ReachCounts, SigmaProfile};
