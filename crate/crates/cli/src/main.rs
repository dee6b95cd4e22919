use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mrv_core::comparator::Verdict;
use mrv_core::experiment::{
    loglog_slope, run_experiment, scaling_bench, Fault, RunMetrics, RunOptions, RunOutcome,
};
use mrv_core::exporter::{EventLog, RunConfig};
use mrv_core::scenario::{targeted_scenario, CATALOG};
use mrv_core::simulator::{generate, parse_assignment, SimPlan};

const EXIT_VIOLATION: u8 = 2;
const EXIT_INPUT: u8 = 3;

#[derive(Parser)]
#[command(
    name = "mrv",
    version,
    about = "Multi-round visibility ordering: simulate, order, verify"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded committed-DAG log.
    Simulate(SimulateArgs),
    /// Replay a log through the ordering engine and check run invariants.
    Order(OrderArgs),
    /// Order a log and diff every decision against the brute-force oracle.
    Verify(VerifyArgs),
    /// Time the engine on single-slice logs of growing size.
    Bench(BenchArgs),
    /// Write and verify one of the hand-built boundary-case logs.
    Scenario(ScenarioArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    n: u32,
    /// Defaults to floor((n-1)/3).
    #[arg(long)]
    f: Option<u32>,
    #[arg(long)]
    rounds: u64,
    #[arg(long, default_value_t = 2)]
    wave: u64,
    #[arg(long = "w-max")]
    w_max: u64,
    /// Overridden by MRV_SEED when that is set.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `<creator>=<strategy>`, e.g. `3=withhold:0.5`, `3=selective:0/1`, `3=conflict:0,1`.
    #[arg(long = "strategy")]
    strategies: Vec<String>,
    /// Honest creators reference exactly 2f+1 random parents.
    #[arg(long)]
    thin: bool,
    #[arg(long)]
    log: PathBuf,
}

#[derive(Args)]
struct LogInput {
    #[arg(long)]
    log: PathBuf,
    /// Parameters for a log without a config header.
    #[arg(long)]
    n: Option<u32>,
    #[arg(long)]
    f: Option<u32>,
    #[arg(long = "w-max")]
    w_max: Option<u64>,
}

#[derive(Args)]
struct Outputs {
    /// Write the engine's output log here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Append the canonical metrics record here.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Append a tab-separated metrics row here (header written when the file is new).
    #[arg(long)]
    tsv: Option<PathBuf>,
}

#[derive(Args)]
struct OrderArgs {
    #[command(flatten)]
    input: LogInput,
    #[command(flatten)]
    outputs: Outputs,
}

#[derive(Clone, Copy, ValueEnum)]
enum InjectedFault {
    ThresholdF,
    CoexistenceRound,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    input: LogInput,
    #[command(flatten)]
    outputs: Outputs,
    #[arg(long, hide = true, value_enum)]
    inject_fault: Option<InjectedFault>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = vec![32, 64, 128, 256, 512])]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario name; omit to list the catalog.
    name: Option<String>,
    #[arg(long)]
    log: Option<PathBuf>,
}

enum Failure {
    Input(String),
    Violation(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Failure {
        Failure::Input(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Order(a) => order(a),
        Command::Verify(a) => verify(a),
        Command::Bench(a) => bench(a),
        Command::Scenario(a) => scenario(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_INPUT)
        }
        Err(Failure::Violation(msg)) => {
            eprintln!("invariant violation: {msg}");
            ExitCode::from(EXIT_VIOLATION)
        }
    }
}

fn simulate(a: SimulateArgs) -> Result<(), Failure> {
    let f = a.f.unwrap_or_else(|| RunConfig::max_faults(a.n));
    let seed = match std::env::var("MRV_SEED") {
        Ok(s) => s
            .trim()
            .parse::<u64>()
            .map_err(|_| Failure::Input(format!("MRV_SEED={s:?} is not an integer")))?,
        Err(_) => a.seed,
    };
    let config = RunConfig::new(a.n, f, a.w_max, seed)?;
    let mut strategies = BTreeMap::new();
    for spec in &a.strategies {
        let (c, s) = parse_assignment(spec)?;
        strategies.insert(c, s);
    }
    let plan = SimPlan {
        config,
        rounds: a.rounds,
        wave_length: a.wave,
        strategies,
        seed,
        thin_honest: a.thin,
    };
    let log = generate(&plan)?;
    log.save(&a.log)?;
    eprintln!(
        "wrote {} events ({} bytes) to {} [n={} f={} w_max={} seed={}]",
        log.events().len(),
        log.bytes().len(),
        a.log.display(),
        config.n,
        config.f,
        config.w_max,
        seed
    );
    Ok(())
}

fn load(input: &LogInput) -> Result<(EventLog, RunConfig), Failure> {
    let log = EventLog::load(&input.log)?;
    let config = match (log.config(), input.n, input.f, input.w_max) {
        (Some(c), None, None, None) => *c,
        (Some(_), ..) => {
            return Err(Failure::Input(
                "log carries a config header; drop --n/--f/--w-max".into(),
            ))
        }
        (None, Some(n), f, Some(w)) => {
            RunConfig::new(n, f.unwrap_or_else(|| RunConfig::max_faults(n)), w, 0)?
        }
        (None, ..) => {
            return Err(Failure::Input(
                "log has no config header; pass --n and --w-max".into(),
            ))
        }
    };
    Ok((log, config))
}

fn append(path: &Path, header: Option<&str>, line: &str) -> Result<(), Failure> {
    let fresh = !path.exists();
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    if fresh {
        if let Some(h) = header {
            writeln!(file, "{h}")?;
        }
    }
    writeln!(file, "{line}")?;
    Ok(())
}

fn report(outcome: &RunOutcome, label: &str, outputs: &Outputs) -> Result<(), Failure> {
    if let Some(out) = &outputs.out {
        fs::write(out, &outcome.output_log)?;
    }
    let record = outcome.metrics.canonical_record();
    println!("{record}");
    if let Some(path) = &outputs.metrics {
        append(path, None, &record)?;
    }
    if let Some(path) = &outputs.tsv {
        append(
            path,
            Some(RunMetrics::tsv_header()),
            &outcome.metrics.tsv_row(label),
        )?;
    }
    let t = &outcome.metrics.timings;
    eprintln!(
        "order {:.3} ms, checks {:.3} ms, verify {:.3} ms",
        t.order.as_secs_f64() * 1e3,
        t.checks.as_secs_f64() * 1e3,
        t.verify.as_secs_f64() * 1e3
    );
    if outcome.passed() {
        return Ok(());
    }
    for v in outcome.violations.iter().take(20) {
        eprintln!("  {v}");
    }
    Err(Failure::Violation(format!(
        "{} violation(s)",
        outcome.violations.len()
    )))
}

fn order(a: OrderArgs) -> Result<(), Failure> {
    let (log, config) = load(&a.input)?;
    let outcome = run_experiment(log.events(), &config, RunOptions::default())?;
    report(&outcome, &a.input.log.display().to_string(), &a.outputs)
}

fn verify(a: VerifyArgs) -> Result<(), Failure> {
    let (log, config) = load(&a.input)?;
    let fault = match a.inject_fault {
        None => Fault::None,
        Some(InjectedFault::ThresholdF) => Fault::ThresholdF,
        Some(InjectedFault::CoexistenceRound) => Fault::CoexistenceRound,
    };
    let outcome = run_experiment(
        log.events(),
        &config,
        RunOptions {
            verify: true,
            fault,
        },
    )?;
    report(&outcome, &a.input.log.display().to_string(), &a.outputs)
}

fn bench(a: BenchArgs) -> Result<(), Failure> {
    if a.sizes.windows(2).any(|w| w[0] > w[1]) {
        return Err(Failure::Input("sizes must be ascending".into()));
    }
    let rows = scaling_bench(&a.sizes, a.repeats)?;
    println!("size\tpair_evaluations\twall_ms");
    for r in &rows {
        println!(
            "{}\t{}\t{:.3}",
            r.size,
            r.pair_evaluations,
            r.wall.as_secs_f64() * 1e3
        );
    }
    if rows.len() >= 2 {
        let wall: Vec<(f64, f64)> = rows
            .iter()
            .map(|r| (r.size as f64, r.wall.as_secs_f64()))
            .collect();
        let pairs: Vec<(f64, f64)> = rows
            .iter()
            .map(|r| (r.size as f64, r.pair_evaluations.max(1) as f64))
            .collect();
        println!("# slope wall_clock {:.3}", loglog_slope(&wall));
        println!("# slope pair_evaluations {:.3}", loglog_slope(&pairs));
    }
    Ok(())
}

fn scenario(a: ScenarioArgs) -> Result<(), Failure> {
    let Some(name) = a.name else {
        for name in CATALOG {
            let s = targeted_scenario(name)?;
            println!("{name}\t{}", s.summary);
        }
        return Ok(());
    };
    let s = targeted_scenario(&name)?;
    if let Some(path) = &a.log {
        s.log.save(path)?;
    }
    let outcome = run_experiment(
        s.log.events(),
        &s.config,
        RunOptions {
            verify: true,
            ..Default::default()
        },
    )?;
    let cfg = s.config;
    println!(
        "# {} (n={} f={} w_max={}): {}",
        s.name, cfg.n, cfg.f, cfg.w_max, s.summary
    );
    let verdicts = verdicts_by_label(&s, &outcome);
    for (pair, v) in verdicts {
        println!("{pair}\t{v:?}");
    }
    if let Some(seal) = outcome.sealed.first() {
        let names: Vec<&str> = seal
            .order
            .ordered
            .iter()
            .map(|d| {
                s.labels
                    .iter()
                    .find(|(_, x)| x == d)
                    .map_or("?", |(l, _)| *l)
            })
            .collect();
        println!("order\t{}", names.join(" "));
        println!("enforceable\t{}", seal.order.enforceable_svp.len());
    }
    if outcome.passed() {
        Ok(())
    } else {
        for v in &outcome.violations {
            eprintln!("  {v}");
        }
        Err(Failure::Violation(format!(
            "scenario {name} failed verification"
        )))
    }
}

fn verdicts_by_label(
    s: &mrv_core::scenario::Scenario,
    outcome: &RunOutcome,
) -> Vec<(String, Verdict)> {
    let mut out = Vec::new();
    for (i, (la, da)) in s.labels.iter().enumerate() {
        for (lb, db) in &s.labels[i + 1..] {
            let v = match outcome.verdicts.get(&(*da, *db)) {
                Some(v) => Some(*v),
                None => outcome.verdicts.get(&(*db, *da)).map(|v| v.reversed()),
            };
            if let Some(v) = v {
                out.push((format!("{la}-{lb}"), v));
            }
        }
    }
    out
}
