//! `certcirc` command line.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use certcirc::circuit::CircuitFile;
use certcirc::discover::{discover, Algorithm, Ordering};
use certcirc::experiment::{
    build_model, run_experiment, ExperimentConfig, ModelParams, RunReport, BUILDERS,
};
use certcirc::hitting::{algorithm4, Alg4Options};
use certcirc::oracle::{check_monotone, classify_minimality, enumerate_exact_range};
use certcirc::predicate::{is_monotone_certificate, Predicate, PredicateKind};
use certcirc::train::{train, TrainConfig};
use certcirc::verify::{verify, Budget, InputBox, Status};
use certcirc::{Circuit, ComponentId, Network, PatchingScheme};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

const TIMEOUT_VAR: &str = "CERTCIRC_TIMEOUT";
const THREADS_VAR: &str = "CERTCIRC_THREADS";

#[derive(Parser)]
#[command(
    name = "certcirc",
    version,
    about = "Circuit discovery with provable faithfulness guarantees"
)]
#[command(
    after_help = "Environment:\n  CERTCIRC_TIMEOUT  per-verification timeout in seconds (overrides config files)\n  CERTCIRC_THREADS  worker threads; 1 disables parallel batches and tests"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build a named model and write it as JSON.
    BuildModel(BuildModelArgs),
    /// Train an MLP on synthetic two-moons data.
    Train(TrainArgs),
    /// Greedy, exhaustive or binary-search discovery under a predicate.
    Discover(DiscoverArgs),
    /// Blocking-set / minimum-hitting-set discovery (Algorithm 4).
    MhsDiscover(MhsArgs),
    /// Certify a saved circuit against a robust predicate.
    Verify(VerifyArgs),
    /// Run an experiment config: discovery plus certified evaluation per batch.
    Evaluate(EvaluateArgs),
    /// Re-render the tables of a finished run.
    Report(ReportArgs),
    /// Brute-force ground truth on small instances.
    #[command(subcommand)]
    Oracle(OracleCmd),
}

#[derive(Args)]
struct Out {
    /// Write the result here instead of stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BuildModelArgs {
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(BUILDERS))]
    builder: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pair count for the counterexample family.
    #[arg(long)]
    m: Option<usize>,
    /// Layer widths, e.g. 2,16,2.
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[command(flatten)]
    out: Out,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_delimiter = ',', default_value = "2,16,2")]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 0.02)]
    lr: f64,
    #[arg(long, default_value_t = 400)]
    n_train: usize,
    #[arg(long, default_value_t = 0.15)]
    noise: f64,
    #[command(flatten)]
    out: Out,
}

/// Network, predicate and budget shared by the predicate-driven commands.
#[derive(Args)]
struct PredicateArgs {
    /// Network JSON (not needed for synthetic predicates).
    #[arg(long)]
    net: Option<PathBuf>,
    /// Predicate description, JSON or TOML (by extension).
    #[arg(long)]
    predicate: PathBuf,
    /// Seconds per verification call; overrides CERTCIRC_TIMEOUT.
    #[arg(long)]
    timeout: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Greedy,
    Exhaustive,
    BinarySearch,
}

#[derive(Args)]
struct DiscoverArgs {
    #[command(flatten)]
    pred: PredicateArgs,
    #[arg(long, value_enum, default_value = "greedy")]
    algorithm: AlgorithmArg,
    /// Explicit removal order, e.g. L1.3,L1.0,... (default: later layers
    /// first, units ascending).
    #[arg(long, value_delimiter = ',')]
    order: Option<Vec<ComponentId>>,
    #[command(flatten)]
    out: Out,
}

#[derive(Args)]
struct MhsArgs {
    #[command(flatten)]
    pred: PredicateArgs,
    #[arg(long, default_value_t = 3)]
    t_max: usize,
    #[command(flatten)]
    out: Out,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    pred: PredicateArgs,
    /// Circuit file written by `discover` or `mhs-discover`.
    #[arg(long)]
    circuit: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    timeout: Option<f64>,
    /// Print the full report as JSON instead of tables.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding report.json.
    #[arg(long)]
    dir: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand)]
enum OracleCmd {
    /// Exact minimality flags of a circuit.
    Classify {
        #[command(flatten)]
        pred: PredicateArgs,
        #[arg(long)]
        circuit: PathBuf,
    },
    /// Exact output range over a box.
    Range {
        #[arg(long)]
        net: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        lo: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        hi: Vec<f64>,
    },
    /// Exhaustive monotonicity check.
    Monotone {
        #[command(flatten)]
        pred: PredicateArgs,
    },
}

/// Timeout and thread count from the environment.
#[derive(Clone, Copy, Debug, Default)]
struct Env {
    timeout: Option<f64>,
    threads: Option<usize>,
}

impl Env {
    fn read() -> Result<Self> {
        let timeout = match std::env::var(TIMEOUT_VAR) {
            Ok(v) => {
                let t: f64 = v
                    .trim()
                    .parse()
                    .with_context(|| format!("{TIMEOUT_VAR}={v:?} is not a number"))?;
                if !(t.is_finite() && t > 0.0) {
                    bail!("{TIMEOUT_VAR} must be a positive number of seconds");
                }
                Some(t)
            }
            Err(_) => None,
        };
        let threads = match std::env::var(THREADS_VAR) {
            Ok(v) => {
                let n: usize = v
                    .trim()
                    .parse()
                    .with_context(|| format!("{THREADS_VAR}={v:?} is not a count"))?;
                if n == 0 {
                    bail!("{THREADS_VAR} must be at least 1");
                }
                Some(n)
            }
            Err(_) => None,
        };
        Ok(Self { timeout, threads })
    }

    fn budget(&self, flag: Option<f64>) -> Budget {
        match flag.or(self.timeout) {
            Some(t) => Budget {
                timeout_secs: Some(t),
                max_subproblems: None,
            },
            None => Budget::default(),
        }
    }

    fn parallel(&self) -> bool {
        self.threads != Some(1)
    }
}

fn emit(value: &impl Serialize, out: &Out) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match &out.output {
        Some(p) => {
            std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))
        }
        None => say(&text),
    }
}

/// Prints a line to stdout; a closed pipe (e.g. `| head`) is not an error.
fn say(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_net(path: &Path) -> Result<Network> {
    Network::from_json(&read(path)?).with_context(|| format!("loading network {}", path.display()))
}

fn load_kind(path: &Path) -> Result<PredicateKind> {
    let text = read(path)?;
    let kind = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(anyhow::Error::from)
    } else {
        serde_json::from_str(&text).map_err(anyhow::Error::from)
    };
    kind.with_context(|| format!("parsing predicate {}", path.display()))
}

fn load_predicate(args: &PredicateArgs, env: &Env) -> Result<Predicate> {
    let net = args.net.as_deref().map(load_net).transpose()?;
    let kind = load_kind(&args.predicate)?;
    Ok(Predicate::new(
        net.map(Into::into),
        kind,
        env.budget(args.timeout),
    )?)
}

/// The patching a circuit is meant to be read with under `pred`.
fn patching_of(pred: &Predicate) -> PatchingScheme {
    match pred.kind() {
        PredicateKind::Sampling { patch, .. } | PredicateKind::InputRobust { patch, .. } => {
            patch.clone()
        }
        PredicateKind::PatchingRobust { .. } | PredicateKind::Combined { .. } => {
            PatchingScheme::Transplant
        }
        _ => PatchingScheme::Zero,
    }
}

fn circuit_file(pred: &Predicate, c: &Circuit) -> CircuitFile {
    match pred.network() {
        Some(net) => CircuitFile::new(net, c, patching_of(pred)),
        None => CircuitFile {
            network: "synthetic".into(),
            members: c.members().iter().copied().collect(),
            patching: PatchingScheme::Zero,
        },
    }
}

fn load_circuit(path: &Path, pred: &Predicate) -> Result<Circuit> {
    let file: CircuitFile = serde_json::from_str(&read(path)?)
        .with_context(|| format!("parsing circuit {}", path.display()))?;
    Ok(match pred.network() {
        Some(net) => file.circuit_for(net)?,
        None => file.circuit(),
    })
}

fn save_circuit(out: &Out, file: &CircuitFile) -> Result<()> {
    if let Some(p) = &out.output {
        std::fs::write(p, serde_json::to_string_pretty(file)? + "\n")
            .with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    let env = Env::read()?;
    if let Some(n) = env.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    match cli.cmd {
        Cmd::BuildModel(a) => {
            let params = ModelParams {
                m: a.m,
                dims: a.dims,
                epochs: a.epochs,
            };
            let net = build_model(&a.builder, &params, a.seed)?;
            let value: serde_json::Value = serde_json::from_str(&net.to_json())?;
            emit(&value, &a.out)?;
        }
        Cmd::Train(a) => {
            let cfg = TrainConfig {
                dims: a.dims,
                data_seed: a.seed,
                init_seed: a.seed,
                epochs: a.epochs,
                learning_rate: a.lr,
                n_train: a.n_train,
                noise: a.noise,
                ..TrainConfig::default()
            };
            let t = train(&cfg)?;
            let stats = json!({
                "final_loss": t.final_loss,
                "train_accuracy": t.train_accuracy,
                "test_accuracy": t.test_accuracy,
            });
            match &a.out.output {
                Some(p) => {
                    std::fs::write(p, t.net.to_json())?;
                    say(&serde_json::to_string_pretty(&stats)?)?;
                }
                None => {
                    eprintln!("{stats}");
                    say(&t.net.to_json())?;
                }
            }
        }
        Cmd::Discover(a) => {
            let pred = load_predicate(&a.pred, &env)?;
            let alg = match a.algorithm {
                AlgorithmArg::Greedy => Algorithm::Greedy,
                AlgorithmArg::Exhaustive => Algorithm::Exhaustive,
                AlgorithmArg::BinarySearch => Algorithm::BinarySearch,
            };
            let ordering = a.order.map_or(Ordering::ReverseTopoLex, Ordering::Explicit);
            let d = discover(&pred, alg, &ordering)?;
            let file = circuit_file(&pred, &d.circuit);
            save_circuit(&a.out, &file)?;
            say(&serde_json::to_string_pretty(&json!({
                "size": d.circuit.len(),
                "members": file.members,
                "evals": d.trace.evals,
                "trace": d.trace,
            }))?)?;
        }
        Cmd::MhsDiscover(a) => {
            let pred = load_predicate(&a.pred, &env)?;
            let cert = is_monotone_certificate(&pred);
            let r = algorithm4(
                &pred,
                Alg4Options {
                    t_max: a.t_max,
                    parallel: env.parallel(),
                },
                cert,
            )?;
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            let file = circuit_file(&pred, &r.circuit);
            save_circuit(&a.out, &file)?;
            say(&serde_json::to_string_pretty(&json!({
                "size": r.circuit.len(),
                "members": file.members,
                "status": r.status,
                "monotonicity": r.monotonicity,
                "evals": r.evals,
                "blocking_sets": r.store.len(),
                "rounds": r.rounds,
                "warnings": r.warnings,
            }))?)?;
        }
        Cmd::Verify(a) => {
            let pred = load_predicate(&a.pred, &env)?;
            let c = load_circuit(&a.circuit, &pred)?;
            if let PredicateKind::Sampling { .. } = pred.kind() {
                // nothing to certify: report the sampled outcome
                let outcome = certcirc::predicate::Faithfulness::eval(&pred, &c)?;
                say(&serde_json::to_string_pretty(
                    &json!({ "outcome": outcome }),
                )?)?;
                return Ok(if outcome.is_true() {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(2)
                });
            }
            let budget = env.budget(a.pred.timeout);
            let mut verdicts = Vec::new();
            for q in pred.queries(&c)? {
                verdicts.push(verify(&q, &budget)?);
            }
            say(&serde_json::to_string_pretty(&verdicts)?)?;
            // 0 certified, 2 falsified, 3 inconclusive
            if verdicts.iter().any(|v| v.is_falsified()) {
                return Ok(ExitCode::from(2));
            }
            if verdicts
                .iter()
                .any(|v| matches!(v.status, Status::Unknown { .. }))
            {
                return Ok(ExitCode::from(3));
            }
        }
        Cmd::Evaluate(a) => {
            let mut cfg = ExperimentConfig::load(&a.config)?;
            if let Some(t) = a.timeout.or(env.timeout) {
                cfg.timeout_secs = t;
            }
            if !env.parallel() {
                cfg.parallel = false;
            }
            if let Some(d) = a.out_dir {
                cfg.output_dir = Some(d);
            }
            let report = run_experiment(&cfg)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            print_report(&report, a.json)?;
        }
        Cmd::Report(a) => {
            let path = a.dir.join("report.json");
            let report: RunReport = serde_json::from_str(&read(&path)?)
                .with_context(|| format!("parsing {}", path.display()))?;
            print_report(&report, a.json)?;
        }
        Cmd::Oracle(OracleCmd::Classify { pred, circuit }) => {
            let p = load_predicate(&pred, &env)?;
            let c = load_circuit(&circuit, &p)?;
            say(&serde_json::to_string_pretty(&classify_minimality(
                &p, &c,
            )?)?)?;
        }
        Cmd::Oracle(OracleCmd::Range { net, lo, hi }) => {
            let net = load_net(&net)?;
            let r = enumerate_exact_range(&net, &InputBox::new(lo, hi)?)?;
            say(&serde_json::to_string_pretty(&r)?)?;
        }
        Cmd::Oracle(OracleCmd::Monotone { pred }) => {
            let p = load_predicate(&pred, &env)?;
            say(&serde_json::to_string_pretty(&check_monotone(&p)?)?)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn print_report(report: &RunReport, as_json: bool) -> Result<()> {
    if as_json {
        say(&serde_json::to_string_pretty(report)?)?;
        return Ok(());
    }
    let mut text = report.render_table();
    if !report.mhs_pairs.is_empty() {
        text.push('\n');
        text.push_str(&report.mhs_table());
    }
    say(text.trim_end())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
