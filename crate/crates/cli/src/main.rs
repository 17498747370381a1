//! `finv`: batch runner for f-invariant computations, exact count checks and
//! Monte Carlo experiments.
//!
//! Data files (`--out`) depend only on the flags and inputs, so repeated runs
//! are byte-identical. Timing and provenance go to the separate `--record`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use finvariant::counting::{check_count_formula, rate_curve, DEFAULT_BRUTE_FORCE_BUDGET, DEFAULT_LATTICE_BUDGET};
use finvariant::exact::parse_rational;
use finvariant::montecarlo::{estimate_h_rate, Region, RunConfig, DEFAULT_PSI_BUDGET};
use finvariant::systems::{automorphism_deltas, f_estimate, LevelOptions, DEFAULT_LABELING_CAP};
use finvariant::{Automorphism, Error, System, Word};

const AUTO_TOLERANCE: f64 = 1e-9;

#[derive(Parser, Debug)]
#[command(name = "finv", version, about = "f-invariant and sofic entropy experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Output {
    /// Machine-readable results file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Experiment record (config echo, input hashes, wall time).
    #[arg(long)]
    record: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// F(T, phi^{B(e,m)}) for m = 0..=levels and their minimum.
    F {
        system: PathBuf,
        #[arg(long, default_value_t = 2)]
        levels: usize,
        /// Cap on labelings per enumerated joint law.
        #[arg(long, default_value_t = DEFAULT_LABELING_CAP)]
        budget: u64,
        #[command(flatten)]
        output: Output,
    },
    /// Count formula against brute force on every lattice weight.
    VerifyCount {
        #[arg(long)]
        n_max: usize,
        #[arg(long, default_value_t = 1)]
        r: usize,
        /// Alphabet size.
        #[arg(long, default_value_t = 2)]
        alphabet: usize,
        #[arg(long, default_value_t = DEFAULT_BRUTE_FORCE_BUDGET)]
        budget: u64,
        #[command(flatten)]
        output: Output,
    },
    /// Exact rate curve (1/n) log E[#{psi : d_* <= eps}].
    Rate {
        system: PathBuf,
        #[arg(long)]
        epsilon: String,
        /// `a..b..step`, `a..b` or `a`; bounds inclusive.
        #[arg(long)]
        n_range: String,
        #[arg(long, default_value_t = DEFAULT_LATTICE_BUDGET)]
        budget: u64,
        #[command(flatten)]
        output: Output,
    },
    /// Monte Carlo estimate of the eps-count over random homomorphisms.
    Mc {
        system: PathBuf,
        #[arg(long)]
        epsilon: String,
        #[arg(long)]
        n_range: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        /// `star` for d_*, or a comma-separated word list such as `e,s1,s2`.
        #[arg(long, default_value = "star")]
        region: String,
        /// Cap on |A|^n labelings scanned per draw.
        #[arg(long, default_value_t = DEFAULT_PSI_BUDGET)]
        budget: u64,
        /// JSON manifest echoing the run configuration.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
    /// F levels before and after an automorphism of the acting group.
    Auto {
        system: PathBuf,
        omega: PathBuf,
        #[arg(long, default_value_t = 2)]
        levels: usize,
        #[arg(long, default_value_t = DEFAULT_LABELING_CAP)]
        budget: u64,
        #[command(flatten)]
        output: Output,
    },
}

/// A failure with its exit code: 1 verification, 2 input, 3 budget.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }

    fn verification(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Budget { .. } => 3,
            Error::Inconsistent(_) => 1,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

type CmdResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

/// What a command produced: data for `--out`, plus what the record needs.
struct Outcome {
    name: &'static str,
    config: Value,
    inputs: Vec<PathBuf>,
    csv_header: Vec<&'static str>,
    csv_rows: Vec<Vec<String>>,
    json: Value,
    failure: Option<Failure>,
}

fn run(command: Command) -> CmdResult {
    let started = Instant::now();
    let argv: Vec<String> = std::env::args().collect();
    let (outcome, output) = match command {
        Command::F { system, levels, budget, output } => (cmd_f(&system, levels, budget)?, output),
        Command::VerifyCount { n_max, r, alphabet, budget, output } => (cmd_verify_count(n_max, r, alphabet, budget)?, output),
        Command::Rate { system, epsilon, n_range, budget, output } => (cmd_rate(&system, &epsilon, &n_range, budget)?, output),
        Command::Mc { system, epsilon, n_range, seed, samples, region, budget, manifest, output } => {
            let o = cmd_mc(&system, &epsilon, &n_range, seed, samples, &region, budget)?;
            if let Some(path) = manifest {
                let m = json!({ "command": o.name, "config": o.config, "inputs": input_hashes(&o.inputs)? });
                write_text(&path, &pretty(&m))?;
            }
            (o, output)
        }
        Command::Auto { system, omega, levels, budget, output } => (cmd_auto(&system, &omega, levels, budget)?, output),
    };
    if let Some(path) = &output.out {
        let text = match output.format {
            Format::Csv => to_csv(&outcome.csv_header, &outcome.csv_rows)?,
            Format::Json => pretty(&outcome.json),
        };
        write_text(path, &text)?;
    }
    if let Some(path) = &output.record {
        let record = json!({
            "command": outcome.name,
            "argv": argv,
            "config": outcome.config,
            "inputs": input_hashes(&outcome.inputs)?,
            "outputs": outcome.json,
            "version": env!("CARGO_PKG_VERSION"),
            "wall_time_seconds": started.elapsed().as_secs_f64(),
        });
        write_text(path, &pretty(&record))?;
    }
    match outcome.failure {
        Some(f) => Err(f),
        None => Ok(()),
    }
}

fn read_system(path: &Path) -> CmdResult<System> {
    let text = fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    System::from_json(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    fs::write(path, text).map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    s
}

fn to_csv(header: &[&str], rows: &[Vec<String>]) -> CmdResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| Failure::input(format!("csv: {e}"));
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(row).map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::input(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// sha256 of each input file's bytes.
fn input_hashes(paths: &[PathBuf]) -> CmdResult<Value> {
    let mut out = serde_json::Map::new();
    for p in paths {
        let bytes = fs::read(p).map_err(|e| Failure::input(format!("{}: {e}", p.display())))?;
        out.insert(p.display().to_string(), Value::String(hex::encode(Sha256::digest(&bytes))));
    }
    Ok(Value::Object(out))
}

/// `p/q` only, so thresholds are exact.
fn parse_epsilon(s: &str) -> CmdResult<num_rational::BigRational> {
    if !s.contains('/') {
        return Err(Failure::input(format!("epsilon must be an exact fraction p/q, got {s:?}")));
    }
    let eps = parse_rational(s)?;
    if eps < finvariant::exact::ratio(0, 1) {
        return Err(Failure::input("epsilon must be nonnegative"));
    }
    Ok(eps)
}

/// `a..b..step`, `a..b` or `a`, inclusive.
fn parse_n_range(s: &str) -> CmdResult<Vec<usize>> {
    let bad = || Failure::input(format!("bad --n-range {s:?}, expected a..b..step"));
    let parts: Vec<usize> = s.split("..").map(|p| p.trim().parse().map_err(|_| bad())).collect::<CmdResult<_>>()?;
    let (a, b, step) = match parts.as_slice() {
        [a] => (*a, *a, 1),
        [a, b] => (*a, *b, 1),
        [a, b, st] => (*a, *b, *st),
        _ => return Err(bad()),
    };
    if a == 0 || step == 0 || b < a {
        return Err(bad());
    }
    Ok((a..=b).step_by(step).collect())
}

fn parse_region(s: &str) -> CmdResult<Region> {
    if s.trim() == "star" {
        return Ok(Region::Star);
    }
    let words = s.split(',').map(|w| w.trim().parse::<Word>()).collect::<Result<Vec<_>, _>>()?;
    if words.is_empty() {
        return Err(Failure::input("empty region"));
    }
    Ok(Region::Words(words))
}

fn fmt_f(x: f64) -> String {
    format!("{x:.12}")
}

fn cmd_f(path: &Path, levels: usize, cap: u64) -> CmdResult<Outcome> {
    let sys = read_system(path)?;
    let opts = LevelOptions { cap, ..LevelOptions::default() };
    let est = f_estimate(&sys, levels, &opts)?;
    println!("level  F");
    for (m, f) in est.levels.iter().enumerate() {
        println!("{m:>5}  {f:.6}");
    }
    println!("min    {:.6} (level {})", est.min, est.argmin);
    let rows = est.levels.iter().enumerate().map(|(m, f)| vec![m.to_string(), fmt_f(*f)]).collect();
    Ok(Outcome {
        name: "f",
        config: json!({ "system": path, "levels": levels, "budget": cap }),
        inputs: vec![path.to_path_buf()],
        csv_header: vec!["level", "f_value"],
        csv_rows: rows,
        json: json!({ "levels": est.levels, "min": est.min, "argmin": est.argmin }),
        failure: None,
    })
}

fn cmd_verify_count(n_max: usize, r: usize, k: usize, budget: u64) -> CmdResult<Outcome> {
    if n_max == 0 || r == 0 || k == 0 {
        return Err(Failure::input("--n-max, --r and --alphabet must be at least 1"));
    }
    println!("    n  weights  result");
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    let mut failure = None;
    for n in 1..=n_max {
        let check = check_count_formula(k, r, n, budget)?;
        let status = if check.passed() { "pass" } else { "FAIL" };
        println!("{n:>5}  {:>7}  {status}", check.checked);
        rows.push(vec![n.to_string(), check.checked.to_string(), check.mismatches.len().to_string(), status.to_string()]);
        if let Some(m) = check.mismatches.first() {
            println!(
                "       witness: vertex {:?} edges {:?}: formula {} vs brute force {}",
                m.weight.vertex, m.weight.edges, m.formula, m.brute_force
            );
            failure.get_or_insert_with(|| Failure::verification(format!("count formula mismatch at n = {n}")));
        }
        reports.push(json!({
            "n": n,
            "checked": check.checked,
            "mismatches": check.mismatches.iter().map(|m| json!({
                "vertex": m.weight.vertex,
                "edges": m.weight.edges,
                "formula": m.formula.to_string(),
                "brute_force": m.brute_force.to_string(),
            })).collect::<Vec<_>>(),
        }));
    }
    Ok(Outcome {
        name: "verify-count",
        config: json!({ "n_max": n_max, "r": r, "alphabet": k, "budget": budget }),
        inputs: vec![],
        csv_header: vec!["n", "checked", "mismatches", "result"],
        csv_rows: rows,
        json: json!({ "alphabet": k, "r": r, "levels": reports }),
        failure,
    })
}

fn cmd_rate(path: &Path, epsilon: &str, n_range: &str, budget: u64) -> CmdResult<Outcome> {
    let sys = read_system(path)?;
    let eps = parse_epsilon(epsilon)?;
    let ns = parse_n_range(n_range)?;
    let curve = rate_curve(&sys, &eps, &ns, budget)?;
    let (num, den) = (eps.numer().to_string(), eps.denom().to_string());
    println!("F(T, phi) = {:.6}, epsilon = {num}/{den}", curve.f_target);
    println!("    n  log_count      rate");
    let mut rows = Vec::new();
    for p in &curve.points {
        println!("{:>5}  {:>9.4}  {:>8.5}", p.n, p.log_count, p.rate);
        rows.push(vec![p.n.to_string(), fmt_f(p.log_count), fmt_f(p.rate), fmt_f(curve.f_target), num.clone(), den.clone()]);
    }
    Ok(Outcome {
        name: "rate",
        config: json!({ "system": path, "epsilon": format!("{num}/{den}"), "n_range": n_range, "budget": budget }),
        inputs: vec![path.to_path_buf()],
        csv_header: vec!["n", "log_count", "rate", "F_target", "epsilon_num", "epsilon_den"],
        csv_rows: rows,
        json: json!({
            "f_target": curve.f_target,
            "epsilon": format!("{num}/{den}"),
            "points": curve.points,
        }),
        failure: None,
    })
}

fn cmd_mc(path: &Path, epsilon: &str, n_range: &str, seed: u64, samples: usize, region: &str, budget: u64) -> CmdResult<Outcome> {
    let sys = read_system(path)?;
    let eps = parse_epsilon(epsilon)?;
    let ns = parse_n_range(n_range)?;
    let region = parse_region(region)?;
    if samples == 0 {
        return Err(Failure::input("--samples must be at least 1"));
    }
    let mut cfg = RunConfig::new(seed, samples, ns[0], eps, region);
    cfg.psi_budget = budget;
    let curve = estimate_h_rate(&sys, &ns, &cfg)?;
    println!("region {}, epsilon {}, seed {seed}; slice rates, not h itself", curve.region, cfg.epsilon);
    println!("    n  samples          mean      stderr      rate");
    let mut rows = Vec::new();
    for p in &curve.points {
        println!("{:>5}  {:>7}  {:>12.4}  {:>10.4}  {:>8.5}", p.n, p.samples, p.mean, p.stderr, p.rate);
        rows.push(vec![p.n.to_string(), p.samples.to_string(), fmt_f(p.mean), fmt_f(p.stderr), fmt_f(p.rate), seed.to_string()]);
    }
    println!("F(T, phi) = {:.6}", curve.f_target);
    if let Some((m, f)) = curve.f_level {
        println!("F(T, phi^B(e,{m})) = {f:.6}");
    }
    Ok(Outcome {
        name: "mc",
        config: json!({ "system": path, "run_config": cfg, "n_range": ns }),
        inputs: vec![path.to_path_buf()],
        csv_header: vec!["n", "samples", "mean", "stderr", "rate", "seed"],
        csv_rows: rows,
        json: serde_json::to_value(&curve).map_err(|e| Failure::input(e.to_string()))?,
        failure: None,
    })
}

fn cmd_auto(path: &Path, omega_path: &Path, levels: usize, cap: u64) -> CmdResult<Outcome> {
    let sys = read_system(path)?;
    let text = fs::read_to_string(omega_path).map_err(|e| Failure::input(format!("{}: {e}", omega_path.display())))?;
    let omega: Automorphism = serde_json::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", omega_path.display())))?;
    omega.validate(sys.spec())?;
    let opts = LevelOptions { cap, ..LevelOptions::default() };
    let deltas = automorphism_deltas(&sys, omega, levels, &opts)?;
    println!("level  F(T)         F(T^omega)   delta");
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for (m, (a, b)) in deltas.iter().enumerate() {
        let d = b - a;
        worst = worst.max(d.abs());
        println!("{m:>5}  {a:>11.6}  {b:>11.6}  {d:.3e}");
        rows.push(vec![m.to_string(), fmt_f(*a), fmt_f(*b), format!("{d:e}")]);
    }
    let failure = (worst > AUTO_TOLERANCE).then(|| Failure::verification(format!("largest per-level difference {worst:e} exceeds {AUTO_TOLERANCE:e}")));
    Ok(Outcome {
        name: "auto",
        config: json!({ "system": path, "omega": omega_path, "levels": levels, "budget": cap }),
        inputs: vec![path.to_path_buf(), omega_path.to_path_buf()],
        csv_header: vec!["level", "f_value", "f_transformed", "delta"],
        csv_rows: rows,
        json: json!({
            "levels": deltas.iter().map(|(a, b)| json!({ "f_value": a, "f_transformed": b, "delta": b - a })).collect::<Vec<_>>(),
            "max_abs_delta": worst,
        }),
        failure,
    })
}
