//! `rwde`: analysis, simulation and verification from the command line.
//!
//! Exit codes: 0 success, 1 invalid input, 2 verification failure,
//! 3 timeout or uncertified result under `--require-certified`.

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rwde::kappa::{self, Kappa0Result, KappaError, SearchOptions, Strategy};
use rwde::verify::{self, Suite, SuiteConfig};
use rwde::walk::{self, StatsQuery, VelocityMethod};
use rwde::DirichletParams;
use serde_json::{json, Value};

/// Largest diameter searched by default when the certified bound is larger.
const DEFAULT_DIAMETER_CAP: i64 = 2000;
const SIGNIFICANT_DIGITS: usize = 12;

#[derive(Parser, Debug)]
#[command(
    name = "rwde",
    version,
    about = "Random walks in Dirichlet environments on Z"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// Weights as `offset:weight,...`, e.g. "-1:1,1:2".
    #[arg(long, global = true, allow_hyphen_values = true)]
    alphas: Option<String>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true)]
    steps: Option<usize>,
    #[arg(long, global = true)]
    replicas: Option<usize>,
    #[arg(long, global = true)]
    window: Option<i64>,
    #[arg(long, global = true)]
    max_diameter: Option<i64>,
    #[arg(long, global = true, default_value = "branch_and_bound")]
    strategy: String,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Exit with code 3 when the kappa0 search is not certified.
    #[arg(long, global = true)]
    require_certified: bool,
    /// Worker threads, 0 for one per core.
    #[arg(long, global = true, env = "RWDE_THREADS", default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Derived parameters, kappa0 and regime.
    Analyze,
    /// One walk from 0 in a fresh environment.
    Simulate,
    /// Limiting velocity estimate.
    Speed {
        #[arg(long, default_value = "endpoint")]
        method: String,
    },
    /// Minimal trap exit weight.
    Kappa0,
    /// Run a statistical verification suite.
    Verify { suite: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

/// A failed run: exit code and a machine-readable error.
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl Failure {
    fn invalid(kind: &'static str, message: impl ToString) -> Self {
        Failure {
            code: 1,
            kind,
            message: message.to_string(),
        }
    }
}

/// A successful run: text to emit and its exit code.
struct Report {
    body: String,
    code: u8,
}

fn round_significant(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
        .parse()
        .unwrap_or(x)
}

/// Rounds every float in `v` to 12 significant digits.
fn rounded(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => n
            .as_f64()
            .and_then(|x| serde_json::Number::from_f64(round_significant(x)))
            .map_or(Value::Null, Value::Number),
        Value::Array(items) => Value::Array(items.into_iter().map(rounded).collect()),
        Value::Object(map) => {
            Value::Object(map.into_iter().map(|(k, v)| (k, rounded(v))).collect())
        }
        other => other,
    }
}

fn to_json(v: Value) -> String {
    let mut s = serde_json::to_string_pretty(&rounded(v)).expect("json serializes");
    s.push('\n');
    s
}

fn params(common: &Common) -> Result<DirichletParams, Failure> {
    let text = common
        .alphas
        .as_deref()
        .ok_or_else(|| Failure::invalid("MissingArgument", "--alphas is required"))?;
    text.parse()
        .map_err(|e: rwde::ModelError| Failure::invalid(e.kind(), e))
}

fn default_diameter(p: &DirichletParams) -> i64 {
    kappa::diameter_bound(p)
        .min(DEFAULT_DIAMETER_CAP)
        .max(p.derive().m0 as i64)
}

/// Runs the search; a timeout yields its partial result and `timed_out`.
fn search(p: &DirichletParams, common: &Common) -> Result<(Kappa0Result, bool), Failure> {
    let strategy: Strategy = common
        .strategy
        .parse()
        .map_err(|e| Failure::invalid("InvalidStrategy", e))?;
    let d = common.max_diameter.unwrap_or_else(|| default_diameter(p));
    match kappa::kappa0_search(p, d, SearchOptions::with_strategy(strategy)) {
        Ok(r) => Ok((r, false)),
        Err(KappaError::Timeout { partial }) => Ok((*partial, true)),
        Err(e) => Err(Failure::invalid(e.kind(), e)),
    }
}

fn certification_code(common: &Common, k0: &Kappa0Result) -> u8 {
    if common.require_certified && !k0.certified {
        3
    } else {
        0
    }
}

fn analyze(common: &Common) -> Result<Report, Failure> {
    let p = params(common)?;
    let d = p.derive();
    let (k0, timed_out) = search(&p, common)?;
    let regime = kappa::classify_regime(&p, &k0);
    let body = json!({
        "L": p.left(),
        "R": p.right(),
        "d_plus": d.d_plus,
        "d_minus": d.d_minus,
        "c_plus": d.c_plus,
        "c_minus": d.c_minus,
        "kappa1": d.kappa1,
        "m0": d.m0,
        "kappa0": {
            "value": k0.value,
            "witness": k0.witness.offsets,
            "certified": k0.certified,
            "diameter_searched": k0.diameter_searched,
            "certified_bound": k0.certified_bound,
            "timed_out": timed_out,
        },
        "regime": regime.tag.to_string(),
        "ballistic": regime.ballistic,
        "warning": regime.warning,
    });
    Ok(Report {
        body: to_json(body),
        code: certification_code(common, &k0),
    })
}

fn kappa0(common: &Common) -> Result<Report, Failure> {
    let p = params(common)?;
    let (k0, timed_out) = search(&p, common)?;
    let mut body = serde_json::to_value(&k0).expect("result serializes");
    body["timed_out"] = json!(timed_out);
    Ok(Report {
        body: to_json(body),
        code: certification_code(common, &k0),
    })
}

fn simulate(common: &Common) -> Result<Report, Failure> {
    let p = params(common)?;
    let steps = common.steps.unwrap_or(1000);
    let traj = walk::simulate_lattice(&p, steps, common.seed, 0);
    let body = match common.format.unwrap_or(Format::Csv) {
        Format::Csv => traj.to_csv(),
        Format::Json => {
            let stats = walk::trajectory_stats(
                &traj,
                &StatsQuery {
                    sites: vec![0],
                    pairs: vec![(-1, 1)],
                    tail_buffer: walk::default_tail_buffer(&p),
                    ..StatsQuery::default()
                },
            );
            to_json(json!({ "trajectory": traj, "stats": stats }))
        }
    };
    Ok(Report { body, code: 0 })
}

fn speed(common: &Common, method: &str) -> Result<Report, Failure> {
    let p = params(common)?;
    let method: VelocityMethod = method
        .parse()
        .map_err(|e| Failure::invalid("InvalidMethod", e))?;
    let est = walk::estimate_velocity(
        &p,
        common.steps.unwrap_or(100_000),
        common.replicas.unwrap_or(200),
        method,
        common.seed,
    );
    Ok(Report {
        body: to_json(serde_json::to_value(&est).expect("estimate serializes")),
        code: 0,
    })
}

fn run_verify(common: &Common, suite: &str) -> Result<Report, Failure> {
    let suite: Suite = suite
        .parse()
        .map_err(|e: verify::VerifyError| Failure::invalid("UnknownSuite", e))?;
    let params = common.alphas.as_ref().map(|_| params(common)).transpose()?;
    let cfg = SuiteConfig {
        params,
        replicas: common.replicas,
        window: common.window,
        seed: common.seed,
    };
    let report =
        verify::run_suite(suite, &cfg).map_err(|e| Failure::invalid("InvalidSuiteInput", e))?;
    Ok(Report {
        code: if report.passed { 0 } else { 2 },
        body: to_json(serde_json::to_value(&report).expect("report serializes")),
    })
}

fn run(cli: &Cli) -> Result<Report, Failure> {
    if cli.common.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.common.threads)
            .build_global()
            .map_err(|e| Failure::invalid("ThreadPool", e))?;
    }
    if cli.common.format == Some(Format::Csv) && !matches!(cli.command, Command::Simulate) {
        return Err(Failure::invalid(
            "InvalidFormat",
            "csv output is only available for simulate",
        ));
    }
    match &cli.command {
        Command::Analyze => analyze(&cli.common),
        Command::Simulate => simulate(&cli.common),
        Command::Speed { method } => speed(&cli.common, method),
        Command::Kappa0 => kappa0(&cli.common),
        Command::Verify { suite } => run_verify(&cli.common, suite),
    }
}

fn emit(out: Option<&PathBuf>, body: &str) -> io::Result<()> {
    match out {
        Some(path) => fs::write(path, body),
        None => io::stdout().write_all(body.as_bytes()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let (body, code) = match run(&cli) {
        Ok(r) => (r.body, r.code),
        Err(f) => {
            let body = to_json(json!({ "error": { "kind": f.kind, "message": f.message } }));
            (body, f.code)
        }
    };
    if let Err(e) = emit(cli.common.out.as_ref(), &body) {
        eprintln!("rwde: cannot write output: {e}");
        return ExitCode::from(1);
    }
    ExitCode::from(code)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_keeps_twelve_digits() {
        assert_eq!(round_significant(1.0 / 3.0), 0.333333333333);
        assert_eq!(round_significant(-2.0 / 3.0e-5), -66666.6666667);
        assert_eq!(round_significant(0.0), 0.0);
        let v = rounded(json!({ "a": [0.1 + 0.2, 3], "b": "x" }));
        assert_eq!(v, json!({ "a": [0.3, 3], "b": "x" }));
    }

    #[test]
    fn cli_parses() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
