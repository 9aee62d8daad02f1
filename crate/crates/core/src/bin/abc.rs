use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use abc_core::abc::{validate, AssumptionMode};
use abc_core::analysis::{self, RateMode};
use abc_core::experiments::{self, build_network, build_problem, preset_on, ExperimentConfig, ExperimentKind, GammaPolicy, GossipKind, Seeds};
use abc_core::problem::Dataset;
use abc_core::{Error, GossipMatrix, Graph, Preset};

const EXIT_VALIDATION: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "abc", version, about = "Simulator for ABC-family distributed proximal methods")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print stepsize, contraction factor and consensus-round predictions.
    Rates {
        #[arg(long)]
        preset: Preset,
        /// Edge list file (`i j` per line).
        #[arg(long)]
        graph: PathBuf,
        /// Condition number `L/μ`; predictions use `μ = 1`, `L = κ`.
        #[arg(long)]
        kappa: f64,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, value_enum, default_value_t = Mode::G)]
        mode: Mode,
        #[arg(long)]
        lazy: bool,
    },
    /// Check a config and the assumptions of every preset it names.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run one of the built-in experiments with default settings.
    Experiment {
        #[arg(value_enum)]
        which: Figure,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Start from this config instead of the defaults; `--seed` still applies.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Dataset utilities.
    Data {
        #[command(subcommand)]
        what: DataCmd,
    },
}

#[derive(Subcommand)]
enum DataCmd {
    /// Check a local copy of the Ionosphere data; writes the bundled copy if
    /// the file does not exist.
    Ionosphere {
        #[arg(long)]
        path: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Figure {
    Fig1,
    Fig2,
    Fig3,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    G0,
    G,
}

enum Failure {
    Validation(String),
    Diverged(String),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_)
            | Error::Disconnected
            | Error::Shape { .. }
            | Error::Spectral(_)
            | Error::Parse(_)
            | Error::Json(_)
            | Error::ExactConsensus
            | Error::Singular(_) => Failure::Validation(e.to_string()),
            Error::Diverged { .. } => Failure::Diverged(e.to_string()),
            Error::Io(_) | Error::Oracle(_) => Failure::Other(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("validation failed: {msg}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Diverged(msg)) => {
            eprintln!("diverged: {msg}");
            ExitCode::from(EXIT_DIVERGED)
        }
        Err(Failure::Other(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Run { config, out } => {
            let cfg = load_config(&config)?;
            let dir = out
                .or_else(|| cfg.output_dir.clone())
                .ok_or_else(|| Failure::Validation("no output directory: pass --out or set output_dir".into()))?;
            execute(&cfg, &dir)
        }
        Cmd::Experiment { which, seed, out, config } => {
            let kind = match which {
                Figure::Fig1 => ExperimentKind::Fig1,
                Figure::Fig2 => ExperimentKind::Fig2,
                Figure::Fig3 => ExperimentKind::Fig3,
            };
            let cfg = match config {
                Some(p) => {
                    let c = load_config(&p)?;
                    if c.experiment != kind {
                        return Err(Failure::Validation("config experiment does not match the subcommand".into()));
                    }
                    ExperimentConfig { seed, ..c }
                }
                None => ExperimentConfig::preset(kind, seed),
            };
            execute(&cfg, &out)
        }
        Cmd::Validate { config } => validate_config(&config),
        Cmd::Rates {
            preset,
            graph,
            kappa,
            gamma,
            mode,
            lazy,
        } => rates(&preset, &graph, kappa, gamma, mode, lazy),
        Cmd::Data {
            what: DataCmd::Ionosphere { path },
        } => ionosphere(&path),
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = fs::read_to_string(path)?;
    Ok(ExperimentConfig::from_json(&text)?)
}

fn execute(cfg: &ExperimentConfig, dir: &Path) -> Result<(), Failure> {
    let artifacts = experiments::run_experiment(cfg)?;
    for p in artifacts.write(dir)? {
        println!("{}", p.display());
    }
    if artifacts.diverged {
        return Err(Failure::Diverged(format!("a run diverged; see {}", dir.join("manifest.json").display())));
    }
    Ok(())
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json"));
}

fn rates(preset: &Preset, graph: &Path, kappa: f64, gamma: Option<f64>, mode: Mode, lazy: bool) -> Result<(), Failure> {
    if !(kappa >= 1.0) {
        return Err(Failure::Validation(format!("kappa = {kappa} must be at least 1")));
    }
    let g = Graph::from_edge_list(&fs::read_to_string(graph)?)?;
    let mut w = GossipMatrix::metropolis(&g)?;
    if lazy {
        w = w.lazy();
    }
    let (l, mu) = (kappa, 1.0);
    let (mats, lazy_base) = preset_on(preset, &w, gamma)?;
    let gamma = match gamma {
        Some(v) => v,
        None => analysis::gamma_star(mats.lambda_min_d()?, l, mu)?,
    };
    let mats = if preset.needs_gamma() {
        preset_on(preset, &w, Some(gamma))?.0
    } else {
        mats
    };
    let rate_mode = match mode {
        Mode::G0 => RateMode::G0,
        Mode::G => RateMode::G,
    };
    let report = analysis::delta_linear(&mats, gamma, l, mu, rate_mode)?;
    let spec = w.spectral_summary()?;
    let lazy_spec = w.lazy().spectral_summary()?;
    let l2c = analysis::lambda2(&mats.c)?;
    let tradeoff = analysis::tradeoff(lazy_spec.mixing_radius, kappa)?;
    let marker = if kappa > 1.0 {
        Some(analysis::predicted_marker(kappa, spec.second_largest())?)
    } else {
        None
    };
    print_json(&json!({
        "preset": preset.name(),
        "m": g.m(),
        "lazy_base": lazy_base,
        "l": l,
        "mu": mu,
        "rate": report,
        "delta_star": analysis::delta_star(kappa, l2c),
        "rho_com": spec.rho_com,
        "lambda_second_w": spec.second_largest(),
        "tradeoff_lazy_w": tradeoff,
        "predicted_marker": marker,
    }));
    if !report.feasible {
        return Err(Failure::Validation(format!("assumptions fail: {:?}", report.failed_clauses)));
    }
    Ok(())
}

fn mode_for(mu: f64, g_zero: bool) -> AssumptionMode {
    match (mu > 0.0, g_zero) {
        (true, true) => AssumptionMode::LinearG0,
        (true, false) => AssumptionMode::LinearG,
        (false, true) => AssumptionMode::SublinearG0,
        (false, false) => AssumptionMode::SublinearProx,
    }
}

fn validate_config(path: &Path) -> Result<(), Failure> {
    let cfg = load_config(path)?;
    let seeds = Seeds::derive(cfg.seed);
    let net = build_network(&cfg.graph, cfg.gossip, seeds.graph)?;
    let problem = build_problem(&cfg.problem, seeds.problem, cfg.omegas.first().copied(), cfg.alphas.first().copied())?;
    if problem.m() != net.graph.m() {
        return Err(Failure::Validation("problem agent count differs from graph size".into()));
    }
    let (l, mu) = (problem.smooth.l(), problem.smooth.mu());
    let presets: Vec<Preset> = if cfg.presets.is_empty() {
        Preset::CLASSIC.to_vec()
    } else {
        cfg.presets.clone()
    };
    let mut reports = Vec::new();
    let mut ok = true;
    for p in &presets {
        let (mats, lazy_base) = preset_on(p, &net.w, None)?;
        let gamma = match cfg.gamma {
            GammaPolicy::Value { value } => value,
            GammaPolicy::Optimal if mu > 0.0 => analysis::gamma_star(mats.lambda_min_d()?, l, mu)?,
            GammaPolicy::Optimal => mats.lambda_min_d()? / l,
        };
        let mats = if p.needs_gamma() { preset_on(p, &net.w, Some(gamma))?.0 } else { mats };
        let mode = mode_for(mu, problem.reg.is_zero());
        let report = validate(&mats, gamma, l, mu, mode);
        ok &= report.passed();
        reports.push(json!({
            "preset": p.name(),
            "lazy_base": lazy_base,
            "gamma": gamma,
            "report": report,
        }));
    }
    print_json(&json!({
        "config": path.display().to_string(),
        "m": net.graph.m(),
        "gossip": match cfg.gossip { GossipKind::Metropolis => "metropolis", GossipKind::LazyMetropolis => "lazy_metropolis" },
        "l": l,
        "mu": mu,
        "graph_retries": net.retries,
        "presets": reports,
    }));
    if ok {
        Ok(())
    } else {
        Err(Failure::Validation("one or more assumption clauses failed".into()))
    }
}

fn ionosphere(path: &Path) -> Result<(), Failure> {
    let created = if path.exists() {
        false
    } else {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, include_str!("../../data/ionosphere.data"))?;
        true
    };
    let data = Dataset::load_ionosphere(path)?;
    let positives = data.labels.iter().filter(|&&y| y > 0.0).count();
    print_json(&json!({
        "path": path.display().to_string(),
        "written": created,
        "samples": data.n(),
        "features": data.features.ncols(),
        "positive": positives,
        "negative": data.n() - positives,
    }));
    Ok(())
}
