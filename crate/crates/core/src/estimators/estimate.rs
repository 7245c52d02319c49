use serde::{Deserialize, Serialize};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Below this many successes (or failures) a proportion gets a Wilson interval.
pub const WILSON_CUTOFF: u64 = 20;

/// A Monte Carlo estimate with its 95% confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub half_width: f64,
    pub n: u64,
    pub seed: u64,
}

impl Estimate {
    /// A value known without error.
    pub fn exact(value: f64, n: u64, seed: u64) -> Self {
        Estimate {
            mean: value,
            half_width: 0.0,
            n,
            seed,
        }
    }

    /// Proportion `successes / n`. Rare outcomes (fewer than
    /// [`WILSON_CUTOFF`] successes or failures) use the Wilson interval, made
    /// symmetric about the observed frequency by taking its larger side.
    pub fn proportion(successes: u64, n: u64, seed: u64) -> Self {
        assert!(n > 0 && successes <= n);
        let p = successes as f64 / n as f64;
        let half_width = if successes < WILSON_CUTOFF || n - successes < WILSON_CUTOFF {
            let (lo, hi) = wilson_interval(successes, n, Z95);
            (p - lo).max(hi - p)
        } else {
            Z95 * (p * (1.0 - p) / n as f64).sqrt()
        };
        Estimate {
            mean: p,
            half_width,
            n,
            seed,
        }
    }

    /// Sample mean of a per-replica quantity from its first two moment sums.
    pub fn from_moments(sum: f64, sum_sq: f64, n: u64, seed: u64) -> Self {
        let nf = n as f64;
        let mean = sum / nf;
        let var = (sum_sq / nf - mean * mean).max(0.0);
        Self::from_mean_se(mean, (var / nf).sqrt(), n, seed)
    }

    pub fn from_mean_se(mean: f64, se: f64, n: u64, seed: u64) -> Self {
        Estimate {
            mean,
            half_width: Z95 * se,
            n,
            seed,
        }
    }

    pub fn std_error(&self) -> f64 {
        self.half_width / Z95
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.half_width
    }

    pub fn scaled(self, factor: f64) -> Self {
        Estimate {
            mean: self.mean * factor,
            half_width: self.half_width * factor.abs(),
            ..self
        }
    }

    /// Distance to `target` in standard errors.
    pub fn z_score(&self, target: f64) -> f64 {
        let se = self.std_error();
        if se == 0.0 {
            if self.mean == target {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.mean - target).abs() / se
        }
    }

    /// `|mean − target| ≤ k·SE`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.std_error()
    }

    /// `|mean − other.mean| ≤ k·sqrt(SE² + SE_other²)`.
    pub fn agrees_with(&self, other: &Estimate, k: f64) -> bool {
        let se = self.std_error().hypot(other.std_error());
        (self.mean - other.mean).abs() <= k * se
    }
}

/// Wilson score interval for `successes` out of `n`.
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> (f64, f64) {
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let spread = z / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    ((center - spread).max(0.0), (center + spread).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_interval() {
        let e = Estimate::proportion(5000, 10_000, 1);
        assert_eq!(e.mean, 0.5);
        assert!((e.half_width - Z95 * 0.005).abs() < 1e-15);
        assert!((e.std_error() - 0.005).abs() < 1e-15);
        assert!(e.within(0.519, 4.0));
        assert!(!e.within(0.53, 4.0));
    }

    #[test]
    fn wilson_for_rare_events() {
        let zero = Estimate::proportion(0, 1000, 1);
        assert_eq!(zero.mean, 0.0);
        let (lo, hi) = wilson_interval(0, 1000, Z95);
        assert!(lo < 1e-15);
        assert!((zero.half_width - hi).abs() < 1e-15);
        assert!(zero.half_width > 0.0);
        let all = Estimate::proportion(1000, 1000, 1);
        assert!(all.half_width > 0.0);
        // symmetric in successes and failures
        let a = Estimate::proportion(3, 500, 1);
        let b = Estimate::proportion(497, 500, 1);
        assert!((a.half_width - b.half_width).abs() < 1e-12);
    }

    #[test]
    fn wilson_matches_reference_values() {
        // 2 of 50 at 95%: (0.01104, 0.13460)
        let (lo, hi) = wilson_interval(2, 50, Z95);
        assert!((lo - 0.011_04).abs() < 1e-4);
        assert!((hi - 0.134_6).abs() < 1e-4);
    }

    #[test]
    fn moments() {
        // values 1, -1, 0, 0
        let e = Estimate::from_moments(0.0, 2.0, 4, 0);
        assert_eq!(e.mean, 0.0);
        assert!((e.std_error() - (0.5f64 / 4.0).sqrt()).abs() < 1e-15);
        let s = e.scaled(-3.0);
        assert!((s.std_error() - 3.0 * e.std_error()).abs() < 1e-15);
    }

    #[test]
    fn agreement() {
        let a = Estimate::from_mean_se(1.0, 0.3, 10, 0);
        let b = Estimate::from_mean_se(2.9, 0.4, 10, 0);
        assert!(a.agrees_with(&b, 4.0));
        assert!(!a.agrees_with(&b, 3.0));
        assert_eq!(Estimate::exact(0.5, 1, 0).z_score(0.5), 0.0);
    }
}
