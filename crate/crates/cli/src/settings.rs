use std::collections::BTreeMap;
use std::fmt;
use std::hash::{BuildHasher, Hasher};
use std::path::PathBuf;
use std::str::FromStr;

use clap::Args;
use treeloops_core::closed_forms::{alpha_bar, beta_of_alpha, SlackScale};
use treeloops_core::estimators::{default_workers, ThresholdRule};
use treeloops_core::{Error, ModelParams};

/// Seed used when neither `--seed` nor the manifest sets one.
pub const DEFAULT_SEED: u64 = 0x5EED_2024;

const KNOWN_KEYS: &[&str] = &[
    "command", "d", "u", "beta", "alpha", "m", "n", "seed", "workers", "out", "u_grid", "threshold", "max_n", "width",
    "slack", "file", "dump_loops",
];

/// A problem with the command line or the manifest; exits with status 2.
#[derive(Debug, Clone, PartialEq)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<Error> for UsageError {
    fn from(e: Error) -> Self {
        UsageError(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Verify,
    Sigma,
    Betac,
    Curve,
    Pivotal,
    Decompose,
    Recursion,
}

impl FromStr for Command {
    type Err = UsageError;

    fn from_str(s: &str) -> Result<Self, UsageError> {
        Ok(match s {
            "verify" => Command::Verify,
            "sigma" => Command::Sigma,
            "betac" => Command::Betac,
            "curve" => Command::Curve,
            "pivotal" => Command::Pivotal,
            "decompose" => Command::Decompose,
            "recursion" => Command::Recursion,
            other => return Err(UsageError(format!("invalid `command`: unknown command `{other}`"))),
        })
    }
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Verify => "verify",
            Command::Sigma => "sigma",
            Command::Betac => "betac",
            Command::Curve => "curve",
            Command::Pivotal => "pivotal",
            Command::Decompose => "decompose",
            Command::Recursion => "recursion",
        }
    }

    fn min_m(self) -> usize {
        match self {
            Command::Verify => 2,
            Command::Recursion => 4,
            Command::Decompose => 0,
            _ => 1,
        }
    }
}

/// Flags shared by every subcommand. Each has a manifest key of the same
/// name with `-` written as `_`.
#[derive(Args, Debug, Clone, Default)]
pub struct Flags {
    /// Branching degree of the tree.
    #[arg(long)]
    pub d: Option<u32>,
    /// Probability that a link is a cross.
    #[arg(long)]
    pub u: Option<f64>,
    /// Link intensity per edge.
    #[arg(long, conflicts_with = "alpha", allow_negative_numbers = true)]
    pub beta: Option<f64>,
    /// Second-order coefficient: beta = 1/d + alpha/d^2.
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    /// Depth, generation or pivotal level.
    #[arg(long)]
    pub m: Option<usize>,
    /// Number of replicas (initial sample for the critical-point search).
    #[arg(long)]
    pub n: Option<u64>,
    /// Run seed, or `random`.
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Directory for results.jsonl, results.csv and curve.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `key = value` file; flags override its values.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Comma-separated u values for `curve`.
    #[arg(long, allow_hyphen_values = true)]
    pub u_grid: Option<String>,
    /// `percolation`, `epsilon` or a fixed level.
    #[arg(long)]
    pub threshold: Option<String>,
    /// Sample cap of one probe in the critical-point search.
    #[arg(long)]
    pub max_n: Option<u64>,
    /// Target bracket width of the critical-point search.
    #[arg(long)]
    pub width: Option<f64>,
    /// Constant of the recursion slack scale.
    #[arg(long)]
    pub slack: Option<f64>,
    /// Configuration file for `decompose`.
    #[arg(long)]
    pub file: Option<PathBuf>,
    /// Print every segment of every loop.
    #[arg(long)]
    pub dump_loops: bool,
}

/// Fully resolved and validated run settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub command: Command,
    pub params: ModelParams,
    pub m: usize,
    pub n: u64,
    pub seed: u64,
    pub workers: usize,
    pub out: Option<PathBuf>,
    pub u_grid: Vec<f64>,
    pub threshold: ThresholdRule,
    pub max_n: u64,
    pub width: f64,
    pub slack: SlackScale,
    pub file: Option<PathBuf>,
    pub dump_loops: bool,
}

/// Parses the flat manifest format: `key = value` lines, `#` comments.
pub fn parse_manifest(text: &str) -> Result<BTreeMap<String, String>, UsageError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| UsageError(format!("manifest line {}: expected `key = value`", i + 1)))?;
        let key = key.trim().replace('-', "_");
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(UsageError(format!("manifest line {}: unknown key `{key}`", i + 1)));
        }
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(UsageError(format!("manifest line {}: `{key}` set twice", i + 1)));
        }
    }
    Ok(map)
}

fn random_seed() -> u64 {
    std::collections::hash_map::RandomState::new().build_hasher().finish()
}

fn parse_seed(s: &str) -> Result<u64, UsageError> {
    let bad = |e: std::num::ParseIntError| UsageError(format!("invalid `seed`: `{s}` ({e})"));
    match s {
        "random" => Ok(random_seed()),
        hex if hex.starts_with("0x") => u64::from_str_radix(&hex[2..], 16).map_err(bad),
        dec => dec.parse().map_err(bad),
    }
}

fn parse_grid(s: &str) -> Result<Vec<f64>, UsageError> {
    let mut grid = s
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| {
            v.parse::<f64>()
                .ok()
                .filter(|u| (0.0..=1.0).contains(u))
                .ok_or_else(|| UsageError(format!("invalid `u_grid`: `{v}` is not a number in [0, 1]")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    Ok(grid)
}

struct Source<'a> {
    manifest: &'a BTreeMap<String, String>,
}

impl Source<'_> {
    fn get<T: FromStr>(&self, key: &str, flag: Option<T>) -> Result<Option<T>, UsageError>
    where
        T::Err: fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.manifest
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| UsageError(format!("invalid `{key}`: `{v}` ({e})"))))
            .transpose()
    }
}

impl Settings {
    /// Merges flags over the manifest over the per-command defaults and
    /// validates the result. `command` is `None` for `run`, which takes the
    /// command from the manifest.
    pub fn resolve(command: Option<Command>, flags: &Flags) -> Result<Settings, UsageError> {
        let manifest = match &flags.manifest {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| UsageError(format!("invalid `manifest`: cannot read {}: {e}", path.display())))?;
                parse_manifest(&text)?
            }
            None => BTreeMap::new(),
        };
        let src = Source { manifest: &manifest };
        let from_file: Option<Command> = src.get("command", None)?;
        let command = match (command, from_file) {
            (Some(c), Some(f)) if c != f => {
                return Err(UsageError(format!(
                    "invalid `command`: manifest says `{}` but `{}` was requested",
                    f.name(),
                    c.name()
                )))
            }
            (Some(c), _) | (None, Some(c)) => c,
            (None, None) => return Err(UsageError("invalid `command`: the manifest sets no command".into())),
        };

        let (d_default, u_default, m_default) = match command {
            Command::Verify => (5, 0.5, 4),
            Command::Pivotal => (3, 0.5, 1),
            Command::Recursion => (40, 1.0, 12),
            _ => (40, 0.5, 20),
        };
        let d = src.get("d", flags.d)?.unwrap_or(d_default);
        if d < 2 {
            return Err(UsageError("invalid `d`: branching degree must be at least 2".into()));
        }
        let u = src.get("u", flags.u)?.unwrap_or(u_default);
        if !(0.0..=1.0).contains(&u) {
            return Err(UsageError(format!("invalid `u`: {u} is outside [0, 1]")));
        }
        let beta = match (flags.beta, flags.alpha) {
            (Some(b), _) => b,
            (None, Some(a)) => beta_of_alpha(a, d),
            (None, None) => match (src.get::<f64>("beta", None)?, src.get::<f64>("alpha", None)?) {
                (Some(_), Some(_)) => {
                    return Err(UsageError("invalid `beta`: the manifest sets both `beta` and `alpha`".into()))
                }
                (Some(b), None) => b,
                (None, Some(a)) => beta_of_alpha(a, d),
                (None, None) => match command {
                    Command::Verify => 0.228,
                    Command::Pivotal => 0.3,
                    Command::Recursion => beta_of_alpha(alpha_bar(u) - 0.3, d),
                    _ => beta_of_alpha(alpha_bar(u), d),
                },
            },
        };
        let params = ModelParams::new(d, u, beta).map_err(|e| match e {
            Error::InvalidParameter { name, reason } => UsageError(format!("invalid `{name}`: {reason}")),
            other => other.into(),
        })?;

        let m = src.get("m", flags.m)?.unwrap_or(m_default);
        if m < command.min_m() {
            return Err(UsageError(format!("invalid `m`: `{}` needs m >= {}", command.name(), command.min_m())));
        }
        let n = src.get("n", flags.n)?.unwrap_or(100_000);
        if n == 0 {
            return Err(UsageError("invalid `n`: at least one sample is required".into()));
        }
        let seed = match src.get::<String>("seed", flags.seed.clone())? {
            Some(s) => parse_seed(&s)?,
            None => DEFAULT_SEED,
        };
        let workers = src.get("workers", flags.workers)?.unwrap_or_else(default_workers);
        if workers == 0 {
            return Err(UsageError("invalid `workers`: at least one worker is required".into()));
        }
        let out = src.get("out", flags.out.clone())?;
        let u_grid = match src.get::<String>("u_grid", flags.u_grid.clone())? {
            Some(s) => parse_grid(&s)?,
            None => vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
        };
        let threshold = match src.get::<String>("threshold", flags.threshold.clone())? {
            Some(s) => s.parse::<ThresholdRule>().map_err(|e| UsageError(e.to_string()))?,
            None => ThresholdRule::default(),
        };
        let max_n = src.get("max_n", flags.max_n)?.unwrap_or(n.saturating_mul(16));
        if max_n < n {
            return Err(UsageError("invalid `max_n`: must be at least `n`".into()));
        }
        let width = src.get("width", flags.width)?.unwrap_or(0.2);
        if !(width > 0.0) {
            return Err(UsageError("invalid `width`: must be positive".into()));
        }
        let slack = src.get("slack", flags.slack)?.unwrap_or(SlackScale::default().constant);
        if !(slack >= 0.0) {
            return Err(UsageError("invalid `slack`: must be non-negative".into()));
        }
        let file = src.get("file", flags.file.clone())?;
        if command == Command::Decompose && file.is_none() {
            return Err(UsageError("invalid `file`: `decompose` needs a configuration file".into()));
        }
        let dump_loops = flags.dump_loops || src.get::<bool>("dump_loops", None)?.unwrap_or(false);
        Ok(Settings {
            command,
            params,
            m,
            n,
            seed,
            workers,
            out,
            u_grid,
            threshold,
            max_n,
            width,
            slack: SlackScale { constant: slack },
            file,
            dump_loops,
        })
    }
}
