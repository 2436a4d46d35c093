//! `knnrag` command-line front end.
//!
//! Exit codes: 0 success, 2 bad input or configuration, 3 runtime failure.

mod plot;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use knnrag::config::{run_config, RunConfig};
use knnrag::discordance::{classify_regime, delta_h, realized_delta_h, Regime};
use knnrag::experiments::{reports_to_csv, reports_to_json};
use knnrag::gating::{soft_gate, GateInputs, GateMode};
use knnrag::memory::MemoryStore;
use knnrag::retrieval::RetrievalView;
use knnrag::scenario::{Scenario, ScenarioSpec};
use knnrag::simplex::{modal_label, ExtReal, ProbVec};

#[derive(Parser)]
#[command(name = "knnrag", version, about = "k-NN retrieval gating and Monte Carlo checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Gate one query against a memory file and print the decision as JSON.
    Gate(GateArgs),
    /// Run the sweeps in a config (or a previous run's manifest.json).
    Simulate(SimulateArgs),
    /// Draw one report metric against n as an SVG line chart.
    Plot(plot::PlotArgs),
    /// Sample a memory file from a scenario.
    Sample(SampleArgs),
}

#[derive(Args)]
struct GateArgs {
    /// Memory file written by `knnrag sample` or `MemoryStore::save`.
    #[arg(long)]
    memory: PathBuf,
    /// Query coordinates, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    query: Vec<f64>,
    /// True conditional at the query, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "scenario")]
    p_true: Option<Vec<f64>>,
    /// Scenario TOML supplying the true conditional and, unless `--q0` is given, q0.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Base predictor probabilities, comma separated.
    #[arg(long, value_delimiter = ',')]
    q0: Option<Vec<f64>>,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 0.0)]
    zeta: f64,
    #[arg(long, default_value_t = knnrag::retrieval::DEFAULT_BANDWIDTH)]
    bandwidth: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Hard)]
    mode: ModeArg,
    /// Derivative tolerance for the soft gate.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Hard,
    Soft,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: one per core). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Write only this report format (default: both).
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn input(message: impl std::fmt::Display) -> Self {
        Self { code: 2, message: message.to_string() }
    }

    pub fn runtime(message: impl std::fmt::Display) -> Self {
        Self { code: 3, message: message.to_string() }
    }
}

type CliResult<T> = Result<T, CliError>;

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &[u8]) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn load_scenario(path: &Path) -> CliResult<Scenario> {
    let spec: ScenarioSpec =
        toml::from_str(&read_text(path)?).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    Scenario::new(spec).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct GateOutput {
    mode: GateMode,
    n: usize,
    k: usize,
    w_fact: f64,
    radius: f64,
    p_true: ProbVec,
    q0: ProbVec,
    rhat: ProbVec,
    lambda: f64,
    ell0: ExtReal,
    ellr: ExtReal,
    penalty: f64,
    objective: ExtReal,
    mixed: ProbVec,
    /// 1-based.
    y_r: usize,
    h_q0: f64,
    h_mixed: f64,
    delta_h: f64,
    delta_x: f64,
    regime: Regime,
}

fn cmd_gate(args: GateArgs) -> CliResult<()> {
    let store = MemoryStore::load(&args.memory).map_err(|e| CliError::input(format!("{}: {e}", args.memory.display())))?;
    if args.k == 0 || args.k > store.len() {
        return Err(CliError::input(format!("k = {} must satisfy 1 <= k <= n = {}", args.k, store.len())));
    }
    let scenario = args.scenario.as_deref().map(load_scenario).transpose()?;
    let probs = |name: &str, v: Vec<f64>| ProbVec::new(v).map_err(|e| CliError::input(format!("--{name}: {e}")));
    let p_true = match (args.p_true, &scenario) {
        (Some(p), _) => probs("p-true", p)?,
        (None, Some(s)) => s.conditional_at(&args.query).map_err(CliError::input)?,
        (None, None) => return Err(CliError::input("one of --p-true or --scenario is required")),
    };
    let q0 = match (args.q0, &scenario) {
        (Some(q), _) => probs("q0", q)?,
        (None, Some(s)) => s.q0_at(&args.query).map_err(CliError::input)?,
        (None, None) => return Err(CliError::input("one of --q0 or --scenario is required")),
    };
    let view = RetrievalView::query(&store, &args.query, args.k, args.bandwidth).map_err(CliError::input)?;
    let inputs =
        GateInputs::new(p_true.clone(), q0.clone(), view.rhat.clone(), view.w_fact, args.zeta).map_err(CliError::input)?;

    let (gate, y_r, h_q0, h_mixed, dh, delta_x, regime) = match args.mode {
        ModeArg::Hard => {
            let rec = realized_delta_h(&inputs);
            (rec.gate, rec.y_r, rec.h_q0, rec.h_mixed, rec.delta_h, rec.delta_x, rec.regime)
        }
        ModeArg::Soft => {
            let gate = soft_gate(&inputs, args.tol).map_err(CliError::runtime)?;
            let y_r = modal_label(&view.rhat);
            let (r, q, w) = (view.rhat[y_r], q0[y_r], view.w_fact);
            let regime = classify_regime(gate.ell0, gate.ellr, gate.penalty, r, q);
            let h_mixed = w * (1.0 - gate.mixed[y_r]);
            (gate.clone(), y_r, w * (1.0 - q), h_mixed, delta_h(gate.lambda, w, r, q), r - q, regime)
        }
    };
    let out = GateOutput {
        mode: gate.mode,
        n: store.len(),
        k: view.k,
        w_fact: view.w_fact,
        radius: view.radius,
        p_true,
        q0,
        rhat: view.rhat,
        lambda: gate.lambda,
        ell0: gate.ell0,
        ellr: gate.ellr,
        penalty: gate.penalty,
        objective: gate.objective,
        mixed: gate.mixed,
        y_r: y_r + 1,
        h_q0,
        h_mixed,
        delta_h: dh,
        delta_x,
        regime,
    };
    let text = serde_json::to_string_pretty(&out).expect("gate output serializes");
    match writeln!(std::io::stdout(), "{text}") {
        // A closed pipe (e.g. `| head`) is not a failure of the gate.
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::runtime(e)),
        _ => Ok(()),
    }
}

/// Everything needed to reproduce a `simulate` run.
#[derive(Serialize, Deserialize)]
struct RunManifest {
    tool: String,
    version: String,
    config_path: String,
    config: RunConfig,
    outputs: Vec<String>,
    threads: Option<usize>,
    started_unix_seconds: u64,
    wall_seconds: f64,
}

fn load_run_config(path: &Path) -> CliResult<RunConfig> {
    let text = read_text(path)?;
    let located = |e: knnrag::Error| CliError::input(format!("{}: {e}", path.display()));
    if text.trim_start().starts_with('{') {
        let manifest: RunManifest =
            serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let value = serde_json::to_value(&manifest.config).expect("configs serialize");
        RunConfig::from_json_value(value).map_err(located)
    } else {
        RunConfig::from_toml_str(&text).map_err(located)
    }
}

fn cmd_simulate(args: SimulateArgs) -> CliResult<()> {
    let mut config = load_run_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    if args.threads == Some(0) {
        return Err(CliError::input("--threads must be >= 1"));
    }
    fs::create_dir_all(&args.out).map_err(|e| CliError::runtime(format!("{}: {e}", args.out.display())))?;

    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let clock = Instant::now();
    let reports = run_config(&config, args.threads).map_err(|e| match e {
        knnrag::Error::InvalidConfig(_) | knnrag::Error::InvalidQuery { .. } => CliError::input(e),
        e => CliError::runtime(e),
    })?;

    let mut outputs = vec![];
    if args.format != Some(Format::Json) {
        write_file(&args.out.join("report.csv"), reports_to_csv(&reports).as_bytes())?;
        outputs.push(args.out.join("report.csv").display().to_string());
    }
    if args.format != Some(Format::Csv) {
        let json = serde_json::to_string_pretty(&reports_to_json(&reports)).expect("reports serialize");
        write_file(&args.out.join("report.json"), json.as_bytes())?;
        outputs.push(args.out.join("report.json").display().to_string());
    }
    outputs.push(args.out.join("manifest.json").display().to_string());
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_path: args.config.display().to_string(),
        config,
        outputs,
        threads: args.threads,
        started_unix_seconds: started,
        wall_seconds: clock.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&args.out.join("manifest.json"), json.as_bytes())
}

fn cmd_sample(args: SampleArgs) -> CliResult<()> {
    let scenario = load_scenario(&args.scenario)?;
    let store = scenario.sample_memory(args.n, args.seed).map_err(CliError::input)?;
    store.save(&args.out).map_err(|e| CliError::runtime(format!("{}: {e}", args.out.display())))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gate(a) => cmd_gate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Plot(a) => plot::cmd_plot(a),
        Command::Sample(a) => cmd_sample(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
