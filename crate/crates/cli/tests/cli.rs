use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn treeloops(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_treeloops")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name).display().to_string()
}

fn payload(jsonl: &str) -> Vec<serde_json::Value> {
    jsonl
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("wall_ms");
            v
        })
        .collect()
}

fn curve_rows(csv: &str) -> Vec<Vec<f64>> {
    csv.lines().skip(1).map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect()
}

#[test]
fn decompose_two_crosses() {
    let o = treeloops(&["decompose", "--file", &data("two_crosses.txt")]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("loops: 2\n"));
    let dumped = treeloops(&["decompose", "--file", &data("two_crosses.txt"), "--dump-loops"]);
    assert_eq!(stdout(&dumped).lines().filter(|l| l.starts_with("v=")).count(), 4);
}

#[test]
fn decompose_needs_a_readable_file() {
    assert_eq!(treeloops(&["decompose"]).status.code(), Some(2));
    let o = treeloops(&["decompose", "--file", "/nonexistent/config.txt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`file`"));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "edge=0 links=0.5:q\n").unwrap();
    assert_eq!(treeloops(&["decompose", "--file", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn verify_passes_at_the_reference_point() {
    let o = treeloops(&["verify", "--d", "5", "--beta", "0.228", "--n", "40000"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let out = stdout(&o);
    assert!(out.lines().skip(1).all(|l| l.ends_with(",pass")), "{out}");
    assert!(out.contains("P(A1),0.893"));
    assert!(out.contains("P(A2),0.084"));
}

#[test]
fn usage_errors_exit_with_two() {
    for args in [
        &["sigma", "--u", "2"][..],
        &["sigma", "--beta", "0.1", "--alpha", "1"],
        &["sigma", "--n", "0"],
        &["sigma", "--bogus"],
        &["sigma", "--seed", "soon"],
        &["recursion", "--m", "3"],
        &["frobnicate"],
    ] {
        let o = treeloops(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
    let o = treeloops(&["sigma", "--d", "1"]);
    assert!(stderr(&o).contains("`d`"));
}

#[test]
fn gate_failure_exits_with_one() {
    let o = treeloops(&["betac", "--d", "10", "--m", "3", "--n", "500", "--threshold", "0.999"]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stdout(&o).contains("NotBracketed"));
}

#[test]
fn empty_grid_gives_header_only_curve() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = treeloops(&["curve", "--u-grid", "", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(out.join("curve.csv")).unwrap(),
        "u,d,alpha_hat_lo,alpha_hat_hi,beta_hat,beta_formula\n"
    );
}

#[test]
fn curve_formula_column() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let common = ["--d", "5", "--m", "2", "--n", "300", "--max-n", "300", "--out", out.to_str().unwrap()];

    let mut args = vec!["curve", "--u-grid", "1"];
    args.extend(common);
    let o = treeloops(&args);
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", stderr(&o));
    let rows = curve_rows(&fs::read_to_string(out.join("curve.csv")).unwrap());
    assert_eq!(rows.len(), 1);
    assert!((rows[0][5] - (0.2 + 0.04)).abs() < 1e-15);

    let mut args = vec!["curve", "--u-grid", "1,0.8,0.6,0.4,0.2,0"];
    args.extend(common);
    treeloops(&args);
    let rows = curve_rows(&fs::read_to_string(out.join("curve.csv")).unwrap());
    let us: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    assert_eq!(us, [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]);
    let formula: Vec<f64> = rows.iter().map(|r| r[5]).collect();
    assert!(formula[0] < formula[5]);
    let min = (0..6).min_by(|&i, &j| formula[i].total_cmp(&formula[j])).unwrap();
    assert_eq!(us[min], 0.4);
    // equally spaced grid: convex iff second differences are non-negative
    assert!(formula.windows(3).all(|w| w[0] + w[2] - 2.0 * w[1] > 0.0));
    for r in &rows {
        assert!(r[2] <= r[3]);
    }
}

#[test]
fn reruns_are_reproducible_and_worker_independent() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, workers: &str| {
        let out = dir.path().join(name);
        let o = treeloops(&[
            "sigma", "--d", "6", "--alpha", "0.5", "--m", "5", "--n", "20000", "--workers", workers, "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        (payload(&fs::read_to_string(out.join("results.jsonl")).unwrap()), stdout(&o))
    };
    let (a, out_a) = run("a", "1");
    let (b, out_b) = run("b", "1");
    let (c, out_c) = run("c", "3");
    assert_eq!(a.len(), 5);
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_eq!(out_a, out_b);
    assert_eq!(out_a, out_c);
    assert_eq!(a[0]["op"], "sigma");
    assert_eq!(a[0]["seed"], 0x5EED_2024u64);
    let csv = fs::read_to_string(dir.path().join("a").join("results.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "op,d,u,beta,alpha,m,n,mean,half_width,seed,wall_ms");
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn random_seed_opts_out_of_the_default() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let o = treeloops(&["sigma", "--d", "4", "--m", "2", "--n", "100", "--seed", "random", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let records = payload(&fs::read_to_string(out.join("results.jsonl")).unwrap());
    assert_ne!(records[0]["seed"], 0x5EED_2024u64);
}

#[test]
fn manifest_runs_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("sigma.manifest");
    let out = dir.path().join("out");
    fs::write(
        &manifest,
        format!(
            "# survival at small depth\ncommand = sigma\nd = 4\nbeta = 0.3\nm = 3\nn = 2000\nseed = 7\nout = {}\n",
            out.display()
        ),
    )
    .unwrap();
    let o = treeloops(&["run", "--manifest", manifest.to_str().unwrap(), "--m", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let records = payload(&fs::read_to_string(out.join("results.jsonl")).unwrap());
    assert_eq!(records.len(), 2);
    assert_eq!(records[0]["params"]["d"], 4);
    assert_eq!(records[0]["seed"], 7);
    assert_eq!(records[1]["n"], 2000);

    let o = treeloops(&["betac", "--manifest", manifest.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    fs::write(&manifest, "command = sigma\nlevel = 3\n").unwrap();
    let o = treeloops(&["run", "--manifest", manifest.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("level"));
}

#[test]
fn pivotal_and_recursion_report() {
    let o = treeloops(&["pivotal", "--d", "3", "--beta", "0.3", "--m", "1", "--n", "20000"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("pass"));
    let o = treeloops(&["pivotal", "--d", "3", "--beta", "0.3", "--m", "2", "--n", "20000"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let o = treeloops(&["recursion", "--d", "20", "--u", "1", "--m", "6", "--n", "20000"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert_eq!(stdout(&o).lines().filter(|l| !l.starts_with('#')).count(), 7);
}
