use std::fmt;
use std::io;

use treeloops_core::closed_forms::{
    alpha_bar, beta_of_alpha, expect_x, lemma4_sums, percolation_survival, prob_a1, prob_a2, prob_b_and_a2,
    prob_b_given_a1, sigma1_derivative, sigma1_exact,
};
use treeloops_core::estimators::{
    estimate_alpha_c, estimate_blocked_joint, estimate_pivotal, estimate_root_events, estimate_sigma_profile,
    geometric_decay_fit, recursion_consistency_report, BracketStatus, CriticalEstimate, CriticalSearch, Estimate,
    Sampling,
};
use treeloops_core::loops::{label_tree_loop, loop_decomposition};
use treeloops_core::stream::replica_seed;
use treeloops_core::{EagerConfiguration, Error, ModelParams};

use crate::output::{curve_csv, CurveRow, Sink};
use crate::settings::{Command, Settings, UsageError};

const GATE: f64 = 4.0;
const FD_DELTA: f64 = 0.02;

#[derive(Debug)]
pub enum RunError {
    Usage(UsageError),
    Model(Error),
    Io(io::Error),
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Usage(e) => write!(f, "{e}"),
            RunError::Model(e) => write!(f, "{e}"),
            RunError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter { .. } => RunError::Usage(e.into()),
            other => RunError::Model(other),
        }
    }
}

impl From<io::Error> for RunError {
    fn from(e: io::Error) -> Self {
        RunError::Io(e)
    }
}

/// Runs the command and reports whether all of its gates passed.
pub fn execute(s: &Settings) -> Result<bool, RunError> {
    let mut sink = Sink::new(s.out.clone(), s.seed);
    let passed = match s.command {
        Command::Verify => verify(s, &mut sink)?,
        Command::Sigma => sigma(s, &mut sink)?,
        Command::Betac => betac(s, &mut sink)?,
        Command::Curve => curve(s, &mut sink)?,
        Command::Pivotal => pivotal(s, &mut sink)?,
        Command::Decompose => decompose(s)?,
        Command::Recursion => recursion(s, &mut sink)?,
    };
    sink.flush()?;
    Ok(passed)
}

fn sampling(s: &Settings, stream: u64) -> Sampling {
    Sampling::new(s.n, replica_seed(s.seed, stream)).with_workers(s.workers)
}

struct VerifyRow {
    quantity: String,
    formula: f64,
    estimate: Estimate,
    z: f64,
    pass: bool,
}

impl VerifyRow {
    fn two_sided(quantity: impl Into<String>, formula: f64, formula_se: f64, estimate: Estimate) -> Self {
        let se = estimate.std_error().hypot(formula_se);
        let z = if se > 0.0 {
            (estimate.mean - formula).abs() / se
        } else {
            estimate.z_score(formula)
        };
        VerifyRow {
            quantity: quantity.into(),
            formula,
            estimate,
            z,
            pass: z <= GATE,
        }
    }
}

/// Central-difference standard error of `f` in one argument.
fn propagated_se<F: Fn(f64) -> f64>(f: F, x: f64, se: f64) -> f64 {
    let h = 1e-6;
    (f(x + h) - f(x - h)).abs() / (2.0 * h) * se
}

fn verify(s: &Settings, sink: &mut Sink) -> Result<bool, RunError> {
    let p = &s.params;
    let (d, beta, u, m) = (p.d, p.beta, p.u, s.m);
    let mut rows = Vec::new();

    sink.start();
    let tally = estimate_root_events(p, &sampling(s, 0))?;
    rows.push(VerifyRow::two_sided("P(A1)", prob_a1(d, beta), 0.0, tally.a1()));
    rows.push(VerifyRow::two_sided("P(A2)", prob_a2(d, beta), 0.0, tally.a2()));
    let l4 = lemma4_sums(d, beta);
    rows.push(VerifyRow::two_sided("sum k P(A'_k)", l4.k_weighted_prime, 0.0, tally.k_weighted_prime()));
    rows.push(VerifyRow::two_sided("sum P(A'_k)", l4.prime, 0.0, tally.prime()));
    rows.push(VerifyRow::two_sided("sum k P(A''_k)", l4.k_weighted_double_prime, 0.0, tally.k_weighted_double_prime()));
    rows.push(VerifyRow::two_sided("sum P(A''_k)", l4.double_prime, 0.0, tally.double_prime()));

    let profile = estimate_sigma_profile(p, m, &sampling(s, 1))?.estimates;
    rows.push(VerifyRow::two_sided("sigma_1", sigma1_exact(d, beta), 0.0, profile[1]));

    let (b1, b2) = estimate_blocked_joint(p, m, &sampling(s, 2))?;
    let (z1, z2) = (1.0 - profile[m - 1].mean, 1.0 - profile[m - 2].mean);
    let (se1, se2) = (profile[m - 1].std_error(), profile[m - 2].std_error());
    let f1 = prob_b_given_a1(d, beta, z1);
    let f1_se = propagated_se(|z| prob_b_given_a1(d, beta, z), z1, se1);
    rows.push(VerifyRow::two_sided(format!("P(B^{m} and A1)"), f1, f1_se, b1));
    let f2 = prob_b_and_a2(d, beta, z1, z2, u);
    let f2_se = propagated_se(|z| prob_b_and_a2(d, beta, z, z2, u), z1, se1)
        + propagated_se(|z| prob_b_and_a2(d, beta, z1, z, u), z2, se2);
    rows.push(VerifyRow::two_sided(format!("P(B^{m} and A2)"), f2, f2_se, b2));

    let ex = expect_x(|x| x);
    rows.push(VerifyRow {
        quantity: "E[X]".into(),
        formula: 2.0 / 3.0,
        estimate: Estimate::exact(ex, 0, 0),
        z: 0.0,
        pass: (ex - 2.0 / 3.0).abs() < 1e-12,
    });

    let piv = estimate_pivotal(p, 1, &sampling(s, 3))?;
    rows.push(VerifyRow::two_sided("dsigma_1/dbeta", sigma1_derivative(d, beta), 0.0, piv.derivative));

    for (k, e) in profile.iter().enumerate().skip(1) {
        let bound = percolation_survival(d, beta, k);
        let z = (e.mean - bound) / e.std_error().max(f64::MIN_POSITIVE);
        rows.push(VerifyRow {
            quantity: format!("sigma_{k} <= percolation"),
            formula: bound,
            estimate: *e,
            z,
            pass: z <= GATE,
        });
    }

    println!("quantity,formula,estimate,std_error,z,pass");
    for r in &rows {
        println!(
            "{},{:.6},{:.6},{:.6},{:.2},{}",
            r.quantity,
            r.formula,
            r.estimate.mean,
            r.estimate.std_error(),
            r.z,
            if r.pass { "pass" } else { "FAIL" }
        );
        sink.push(format!("verify:{}", r.quantity), p, m, &r.estimate);
    }
    Ok(rows.iter().all(|r| r.pass))
}

fn sigma(s: &Settings, sink: &mut Sink) -> Result<bool, RunError> {
    let p = &s.params;
    sink.start();
    let profile = estimate_sigma_profile(p, s.m, &sampling(s, 0))?;
    let mut ok = true;
    println!("m,sigma,half_width,percolation");
    for (k, e) in profile.estimates.iter().enumerate() {
        let bound = percolation_survival(p.d, p.beta, k);
        ok &= e.mean <= bound + GATE * e.std_error();
        println!("{k},{:.6},{:.6},{:.6}", e.mean, e.half_width, bound);
        if k > 0 {
            sink.push("sigma", p, k, e);
        }
    }
    if let Some(v) = profile.counts.mean_visited_blocked() {
        println!("# mean vertices per blocked replica: {v:.2}; max in one replica: {}", profile.counts.max_visited);
    }
    let diag = profile.counts.diagnostics;
    if diag != Default::default() {
        println!("# diagnostics: {diag:?}");
    }
    Ok(ok)
}

fn critical_search(s: &Settings) -> CriticalSearch {
    let mut search = CriticalSearch::new(s.m, s.n, s.seed);
    search.max_samples = s.max_n;
    search.target_width = s.width;
    search.threshold = s.threshold;
    search.epsilon = s.params.epsilon;
    search.alpha_bound = s.params.alpha_bound;
    search.workers = s.workers;
    search
}

fn samples_used(e: &CriticalEstimate) -> u64 {
    e.probes.iter().map(|p| p.sigma.n).sum()
}

fn critical_record(sink: &mut Sink, op: &str, e: &CriticalEstimate, seed: u64) -> Result<(), RunError> {
    let params = ModelParams::from_alpha(e.d, e.u, e.alpha_hat)?;
    let est = Estimate {
        mean: e.alpha_hat,
        half_width: 0.5 * e.width(),
        n: samples_used(e),
        seed,
    };
    sink.push(op, &params, e.m, &est);
    Ok(())
}

fn betac(s: &Settings, sink: &mut Sink) -> Result<bool, RunError> {
    let p = &s.params;
    sink.start();
    let e = estimate_alpha_c(p.d, p.u, &critical_search(s))?;
    println!("alpha,beta,sigma,half_width,n,verdict");
    for probe in &e.probes {
        println!(
            "{},{:.8},{:.6},{:.6},{},{:?}",
            probe.alpha, probe.beta, probe.sigma.mean, probe.sigma.half_width, probe.sigma.n, probe.verdict
        );
    }
    println!(
        "# threshold {:.6}; bracket [{}, {}]; alpha_hat {} (alpha_bar {:.6}); beta_hat {:.8}; {:?}",
        e.threshold,
        e.bracket.0,
        e.bracket.1,
        e.alpha_hat,
        alpha_bar(p.u),
        e.beta_hat(),
        e.status
    );
    critical_record(sink, "betac", &e, s.seed)?;
    Ok(e.status == BracketStatus::Confident)
}

fn curve(s: &Settings, sink: &mut Sink) -> Result<bool, RunError> {
    let d = s.params.d;
    let search = critical_search(s);
    let mut rows = Vec::new();
    let mut ok = true;
    for &u in &s.u_grid {
        sink.start();
        let e = estimate_alpha_c(d, u, &search)?;
        ok &= e.status == BracketStatus::Confident;
        rows.push(CurveRow::new(&e, beta_of_alpha(alpha_bar(u), d)));
        critical_record(sink, "curve", &e, s.seed)?;
    }
    let csv = curve_csv(&rows);
    print!("{csv}");
    if let Some(dir) = sink.dir() {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("curve.csv"), &csv)?;
    }
    Ok(ok)
}

fn pivotal(s: &Settings, sink: &mut Sink) -> Result<bool, RunError> {
    let p = &s.params;
    let level = s.m;
    sink.start();
    let e = estimate_pivotal(p, level, &sampling(s, 0))?;
    sink.push("pivotal_plus", p, level, &e.plus);
    sink.push("pivotal_minus", p, level, &e.minus);
    sink.push("pivotal_derivative", p, level, &e.derivative);
    println!("quantity,estimate,half_width");
    println!("P+,{:.6},{:.6}", e.plus.mean, e.plus.half_width);
    println!("P-,{:.6},{:.6}", e.minus.mean, e.minus.half_width);
    println!("derivative,{:.6},{:.6}", e.derivative.mean, e.derivative.half_width);
    println!("# |E_n| = {}; redrawn link times: {}", e.edge_count, e.redraws);
    if level == 1 {
        let exact = sigma1_derivative(p.d, p.beta);
        let ok = e.derivative.within(exact, GATE);
        println!("# exact d e^(-d beta) = {exact:.6}: {}", if ok { "pass" } else { "FAIL" });
        return Ok(ok);
    }
    if p.beta < FD_DELTA {
        println!("# beta below the difference step; no reference check");
        return Ok(true);
    }
    let sigma_at = |b: f64| -> Result<Estimate, RunError> {
        Ok(estimate_sigma_profile(&p.with_beta(b)?, level, &sampling(s, 1))?.estimates[level])
    };
    let (hi, lo) = (sigma_at(p.beta + FD_DELTA)?, sigma_at(p.beta - FD_DELTA)?);
    let fd = Estimate::from_mean_se(
        (hi.mean - lo.mean) / (2.0 * FD_DELTA),
        hi.std_error().hypot(lo.std_error()) / (2.0 * FD_DELTA),
        s.n,
        hi.seed,
    );
    sink.push("sigma_difference_quotient", p, level, &fd);
    let ok = e.derivative.agrees_with(&fd, GATE);
    println!(
        "# difference quotient of sigma_{level} (step {FD_DELTA}) = {:.6} +- {:.6}: {}",
        fd.mean,
        fd.half_width,
        if ok { "pass" } else { "FAIL" }
    );
    Ok(ok)
}

fn decompose(s: &Settings) -> Result<bool, RunError> {
    let path = s.file.as_ref().expect("validated");
    let text = std::fs::read_to_string(path)
        .map_err(|e| RunError::Usage(UsageError(format!("invalid `file`: cannot read {}: {e}", path.display()))))?;
    let config = EagerConfiguration::from_text(&text)
        .map_err(|e| RunError::Usage(UsageError(format!("invalid `file`: {e}"))))?;
    let loops = loop_decomposition(&config)?;
    println!("loops: {}", loops.len());
    for (i, l) in loops.iter().enumerate() {
        let labelled = label_tree_loop(&config, l);
        let mut vertices: Vec<String> = labelled.point_set().keys().map(ToString::to_string).collect();
        vertices.dedup();
        println!("loop {i}: length {:.6}, jumps {}, vertices {}", l.length, l.jumps, vertices.join(" "));
        if s.dump_loops {
            print!("{}", labelled.to_text());
        }
    }
    Ok(true)
}

fn recursion(s: &Settings, sink: &mut Sink) -> Result<bool, RunError> {
    let p = &s.params;
    sink.start();
    let rows = recursion_consistency_report(p, s.m, &sampling(s, 0), s.slack)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
    let flag = |b: bool| if b { "pass" } else { "FAIL" };
    println!("m,sigma,std_error,lower_rhs,lower_slack,lower,upper_rhs,upper_slack,upper");
    let mut ok = true;
    for r in &rows {
        ok &= r.lower_ok && r.upper_ok != Some(false);
        println!(
            "{},{:.6},{:.6},{:.6},{:.2e},{},{},{},{}",
            r.m,
            r.sigma.mean,
            r.sigma.std_error(),
            r.lower_rhs,
            r.lower_slack,
            flag(r.lower_ok),
            opt(r.upper_rhs),
            opt(r.upper_slack),
            r.upper_ok.map_or("", flag)
        );
        sink.push("recursion", p, r.m, &r.sigma);
    }
    let mut profile = vec![Estimate::exact(1.0, s.n, s.seed)];
    profile.extend(rows.iter().map(|r| r.sigma));
    if let Ok(fit) = geometric_decay_fit(&profile, 1..=s.m) {
        println!("# log-linear fit over m = 1..{}: slope {:.5}, R^2 {:.4}", s.m, fit.slope, fit.r_squared);
    }
    Ok(ok)
}
