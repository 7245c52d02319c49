use std::ops::Range;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::loops::TraceBudget;

/// Replica count, seed and execution settings of a Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sampling {
    pub n: u64,
    pub seed: u64,
    pub workers: usize,
    pub budget: TraceBudget,
}

impl Sampling {
    pub fn new(n: u64, seed: u64) -> Self {
        Sampling {
            n,
            seed,
            workers: default_workers(),
            budget: TraceBudget::default(),
        }
    }

    pub fn with_workers(self, workers: usize) -> Self {
        Sampling { workers, ..self }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Sampling { seed, ..self }
    }

    pub fn with_n(self, n: u64) -> Self {
        Sampling { n, ..self }
    }

    pub fn with_budget(self, budget: TraceBudget) -> Self {
        Sampling { budget, ..self }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("n", "at least one sample is required"));
        }
        if self.workers == 0 {
            return Err(invalid("workers", "at least one worker is required"));
        }
        if self.budget.max_jumps == 0 {
            return Err(invalid("budget", "max_jumps must be positive"));
        }
        Ok(())
    }
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Integer tallies merged across workers.
pub(crate) trait Tally: Default + Send {
    fn merge(&mut self, other: Self);
}

/// Runs `body` for every replica index in `range` on a pool of `workers`
/// threads and merges the tallies. Integer tallies make the result
/// independent of the schedule. On failure the error of the lowest failing
/// index is returned.
pub(crate) fn run<T, S, I, F>(range: Range<u64>, workers: usize, init: I, body: F) -> Result<T>
where
    T: Tally,
    S: Send,
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, u64, &mut T) -> Result<()> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| invalid("workers", e.to_string()))?;
    let (tally, error) = pool.install(|| {
        range
            .into_par_iter()
            .fold(
                || (init(), T::default(), None::<(u64, Error)>),
                |(mut state, mut tally, mut error), i| {
                    if error.is_none() {
                        if let Err(e) = body(&mut state, i, &mut tally) {
                            error = Some((i, e));
                        }
                    }
                    (state, tally, error)
                },
            )
            .map(|(_, tally, error)| (tally, error))
            .reduce(
                || (T::default(), None),
                |(mut a, ea), (b, eb)| {
                    a.merge(b);
                    let error = match (ea, eb) {
                        (Some(x), Some(y)) => Some(if x.0 <= y.0 { x } else { y }),
                        (x, y) => x.or(y),
                    };
                    (a, error)
                },
            )
    });
    match error {
        Some((_, e)) => Err(e),
        None => Ok(tally),
    }
}

/// Adds `other` into `into` elementwise, growing `into` as needed.
pub(crate) fn add_counts(into: &mut Vec<u64>, other: &[u64]) {
    if into.len() < other.len() {
        into.resize(other.len(), 0);
    }
    for (a, b) in into.iter_mut().zip(other) {
        *a += b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Default)]
    struct Sum(u64, Vec<u64>);

    impl Tally for Sum {
        fn merge(&mut self, other: Self) {
            self.0 += other.0;
            add_counts(&mut self.1, &other.1);
        }
    }

    #[test]
    fn tallies_do_not_depend_on_workers() {
        let go = |w| {
            run(0..10_000, w, || (), |_, i, t: &mut Sum| {
                t.0 += i * i;
                add_counts(&mut t.1, &[1, i % 3]);
                Ok(())
            })
            .unwrap()
        };
        let (a, b) = (go(1), go(4));
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.1[0], 10_000);
    }

    #[test]
    fn lowest_failing_index_wins() {
        let err = run(0..1000, 3, || (), |_, i, _: &mut Sum| {
            if i % 100 == 37 {
                Err(Error::BudgetExhausted { max_jumps: 1, seed: i })
            } else {
                Ok(())
            }
        })
        .err()
        .unwrap();
        assert_eq!(err, Error::BudgetExhausted { max_jumps: 1, seed: 37 });
    }
}
