use serde::{Deserialize, Serialize};

use super::estimate::Estimate;
use super::pool::Sampling;
use super::sigma::estimate_sigma_profile;
use crate::closed_forms::{recursion_lower_rhs, recursion_upper_rhs, RecursionState, SlackScale};
use crate::configuration::ModelParams;
use crate::error::{invalid, Result};

/// Gate width, in standard errors, of the recursion checks.
pub const RECURSION_GATE_SE: f64 = 4.0;

/// One generation of a recursion consistency report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecursionRow {
    pub m: usize,
    pub sigma: Estimate,
    pub lower_rhs: f64,
    /// `None` for `m < 3`, where the upper recursion is undefined.
    pub upper_rhs: Option<f64>,
    pub lower_slack: f64,
    pub upper_slack: Option<f64>,
    /// `σ̂_m ≥ lower − slack − 4 SE`.
    pub lower_ok: bool,
    /// `σ̂_m ≤ upper + slack + 4 SE`.
    pub upper_ok: Option<bool>,
}

/// Checks a survival profile `σ̂_0, …, σ̂_{m_max}` against both recursions,
/// feeding each bound with the estimated history.
pub fn recursion_rows(params: &ModelParams, profile: &[Estimate], slack: SlackScale) -> Result<Vec<RecursionRow>> {
    let history: Vec<f64> = profile.iter().map(|e| e.mean).collect();
    let mut rows = Vec::new();
    for m in 1..profile.len() {
        let state = RecursionState::new(history[..m].to_vec(), *params);
        let sigma = profile[m];
        let margin = RECURSION_GATE_SE * sigma.std_error();
        let lower_rhs = recursion_lower_rhs(&state)?;
        let lower_slack = slack.lower(params.d);
        let (upper_rhs, upper_slack) = if m >= 3 {
            let rhs = recursion_upper_rhs(&state)?;
            (Some(rhs), Some(state.sigma_check()? * slack.upper(params.d)))
        } else {
            (None, None)
        };
        rows.push(RecursionRow {
            m,
            sigma,
            lower_rhs,
            upper_rhs,
            lower_slack,
            upper_slack,
            lower_ok: sigma.mean >= lower_rhs - lower_slack - margin,
            upper_ok: upper_rhs.zip(upper_slack).map(|(rhs, s)| sigma.mean <= rhs + s + margin),
        });
    }
    Ok(rows)
}

/// Estimates `σ̂_m` for `m ≤ m_max` in one run and checks both recursions.
pub fn recursion_consistency_report(
    params: &ModelParams,
    m_max: usize,
    sampling: &Sampling,
    slack: SlackScale,
) -> Result<Vec<RecursionRow>> {
    if m_max < 4 {
        return Err(invalid("m", format!("the report needs m_max >= 4, got {m_max}")));
    }
    let profile = estimate_sigma_profile(params, m_max, sampling)?;
    recursion_rows(params, &profile.estimates, slack)
}

/// Least-squares line through `(m, ln σ̂_m)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

impl DecayFit {
    /// Negative slope with `R²` above `min_r_squared`.
    pub fn is_geometric(&self, min_r_squared: f64) -> bool {
        self.slope < 0.0 && self.r_squared > min_r_squared
    }
}

/// Fits `ln σ̂_m` against `m` over the given generations, skipping zero means.
pub fn geometric_decay_fit(profile: &[Estimate], generations: std::ops::RangeInclusive<usize>) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = generations
        .filter_map(|m| profile.get(m).filter(|e| e.mean > 0.0).map(|e| (m as f64, e.mean.ln())))
        .collect();
    if pts.len() < 3 {
        return Err(invalid("profile", "need at least three positive estimates to fit"));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(DecayFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
        points: pts.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exact_profile(values: &[f64]) -> Vec<Estimate> {
        values.iter().map(|&v| Estimate::exact(v, 1, 0)).collect()
    }

    #[test]
    fn zero_history_passes_trivially() {
        let params = ModelParams::from_alpha(40, 1.0, 1.0).unwrap();
        let rows = recursion_rows(&params, &exact_profile(&[0.0; 5]), SlackScale::default()).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.lower_ok && r.upper_ok != Some(false)));
        assert_eq!(rows[0].upper_rhs, None);
        assert!(rows[2].upper_rhs.is_some());
    }

    #[test]
    fn violations_are_detected() {
        let params = ModelParams::from_alpha(40, 1.0, 1.0).unwrap();
        // a survival probability that jumps up violates the upper bound
        let rows = recursion_rows(&params, &exact_profile(&[1.0, 0.1, 0.05, 0.02, 0.9]), SlackScale::default()).unwrap();
        assert_eq!(rows[3].upper_ok, Some(false));
        // one that collapses to zero violates the lower bound
        let rows = recursion_rows(&params, &exact_profile(&[1.0, 0.1, 0.0]), SlackScale::default()).unwrap();
        assert!(!rows[1].lower_ok);
    }

    #[test]
    fn decay_fit() {
        let profile = exact_profile(&(0..10).map(|m| 0.5f64.powi(m)).collect::<Vec<_>>());
        let fit = geometric_decay_fit(&profile, 1..=9).unwrap();
        assert!((fit.slope - 0.5f64.ln()).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!(fit.is_geometric(0.9));
        assert!(geometric_decay_fit(&profile, 1..=2).is_err());
    }

    #[test]
    fn report_requires_depth() {
        let params = ModelParams::from_alpha(10, 1.0, 1.0).unwrap();
        assert!(recursion_consistency_report(&params, 3, &Sampling::new(10, 1), SlackScale::default()).is_err());
        let rows = recursion_consistency_report(&params, 5, &Sampling::new(2000, 1), SlackScale::default()).unwrap();
        assert_eq!(rows.len(), 5);
    }
}
