//! Config-driven experiment runner: the three figure sweeps plus a custom
//! single-instance run. Every experiment returns its CSV tables and a JSON
//! manifest as [`Artifacts`]; nothing touches the filesystem until
//! [`Artifacts::write`].

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::abc::{self, AbcMatrices, Outcome, Preset, RunConfig, StopMetric, StopRule, Tracking, Variant};
use crate::analysis::{self, MeritMode, RateMode, Reference, SublinearMode};
use crate::error::{invalid, Error, Result};
use crate::gossip::GossipMatrix;
use crate::graph::{Graph, NamedGraph};
use crate::linalg::Mat;
use crate::oracle::{self, OracleSolution};
use crate::problem::{elastic_net_instance, logistic_instance, Dataset, ElasticNetParams, ProblemInstance, Regularizer};
use crate::rng::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Fig1,
    Fig2,
    Fig3,
    Custom,
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig1" => Ok(Self::Fig1),
            "fig2" => Ok(Self::Fig2),
            "fig3" => Ok(Self::Fig3),
            "custom" => Ok(Self::Custom),
            other => Err(invalid(format!("unknown experiment {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSpec {
    /// Resampled until connected.
    ErdosRenyi {
        m: usize,
        p: f64,
        #[serde(default = "default_retries")]
        max_retries: usize,
    },
    Named {
        shape: NamedGraph,
        m: usize,
    },
    /// Whitespace-separated `i j` pairs, `#` comments; see [`Graph::from_edge_list`].
    EdgeList {
        path: PathBuf,
    },
}

fn default_retries() -> usize {
    100_000
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GossipKind {
    #[default]
    Metropolis,
    LazyMetropolis,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    /// `seed` and `omega` are overridden by the experiment seed and the
    /// `omegas` list where the experiment sweeps them.
    ElasticNet(ElasticNetParams),
    Logistic {
        #[serde(default = "one")]
        alpha: f64,
        #[serde(default = "fifty")]
        agents: usize,
        #[serde(default = "seven")]
        per_agent: usize,
        /// Regularizer weight `λ` of a network-wide `λ‖x‖₁`; 0 for smooth.
        #[serde(default)]
        lambda: f64,
        /// Defaults to the bundled copy.
        #[serde(default)]
        path: Option<PathBuf>,
    },
}

fn one() -> f64 {
    1.0
}
fn fifty() -> usize {
    50
}
fn seven() -> usize {
    7
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum GammaPolicy {
    /// `γ*(D)` for strongly convex runs, the oracle-based sublinear rule
    /// otherwise.
    Optimal,
    Value {
        value: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub graph: GraphSpec,
    #[serde(default)]
    pub gossip: GossipKind,
    pub problem: ProblemSpec,
    #[serde(default)]
    pub presets: Vec<Preset>,
    #[serde(default = "optimal")]
    pub gamma: GammaPolicy,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default = "one_usize")]
    pub k_min: usize,
    /// Upper end of the K sweep; `None` picks `max(marker) + 5` (fig1) or
    /// `k_cap` (fig3).
    #[serde(default)]
    pub k_max: Option<usize>,
    #[serde(default = "sixty")]
    pub k_cap: usize,
    /// Accuracy defining the iteration counts.
    pub target: f64,
    /// fig2/custom keep iterating down to this error to expose the tail.
    #[serde(default)]
    pub trace_tol: Option<f64>,
    pub max_iters: usize,
    #[serde(default)]
    pub omegas: Vec<f64>,
    #[serde(default)]
    pub alphas: Vec<f64>,
    #[serde(default = "merit_last")]
    pub fig3_metric: StopMetric,
    /// Window of the per-iteration error ratio average.
    #[serde(default = "fifty")]
    pub tail_window: usize,
    /// Relative band defining a plateau in iteration counts.
    #[serde(default = "plateau_band")]
    pub plateau_band: f64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub oracle_cache: Option<PathBuf>,
}

fn optimal() -> GammaPolicy {
    GammaPolicy::Optimal
}
fn one_usize() -> usize {
    1
}
fn sixty() -> usize {
    60
}
fn merit_last() -> StopMetric {
    StopMetric::MeritLast
}
fn plateau_band() -> f64 {
    0.01
}

impl ExperimentConfig {
    /// Default settings for each experiment kind.
    pub fn preset(kind: ExperimentKind, seed: u64) -> Self {
        let base = Self {
            experiment: kind,
            seed,
            graph: GraphSpec::ErdosRenyi {
                m: 50,
                p: 0.05,
                max_retries: default_retries(),
            },
            gossip: GossipKind::Metropolis,
            problem: ProblemSpec::ElasticNet(ElasticNetParams::default()),
            presets: Vec::new(),
            gamma: GammaPolicy::Optimal,
            variant: Variant::Abc,
            k_min: 1,
            k_max: None,
            k_cap: 60,
            target: 1e-8,
            trace_tol: None,
            max_iters: 20_000,
            omegas: Vec::new(),
            alphas: Vec::new(),
            fig3_metric: StopMetric::MeritLast,
            tail_window: 50,
            plateau_band: 0.01,
            output_dir: None,
            oracle_cache: None,
        };
        match kind {
            ExperimentKind::Fig1 => Self {
                omegas: vec![0.5, 0.7, 0.8, 0.9],
                ..base
            },
            ExperimentKind::Fig2 => Self {
                graph: GraphSpec::ErdosRenyi {
                    m: 50,
                    p: 0.25,
                    max_retries: default_retries(),
                },
                presets: vec![
                    Preset::Extra,
                    Preset::DigingHarnessing,
                    Preset::NextAugdgm,
                    Preset::NidsExactDiffusion,
                    Preset::Alghunaim { alpha: 1.0 },
                ],
                omegas: vec![0.8],
                target: 1e-6,
                trace_tol: Some(1e-10),
                ..base
            },
            ExperimentKind::Fig3 => Self {
                gossip: GossipKind::LazyMetropolis,
                problem: ProblemSpec::Logistic {
                    alpha: 1.0,
                    agents: 50,
                    per_agent: 7,
                    lambda: 0.0,
                    path: None,
                },
                k_max: Some(10),
                target: 1e-4,
                max_iters: 40_000,
                alphas: vec![1.0, 0.5, 0.25],
                ..base
            },
            ExperimentKind::Custom => Self {
                graph: GraphSpec::ErdosRenyi {
                    m: 10,
                    p: 0.3,
                    max_retries: default_retries(),
                },
                problem: ProblemSpec::ElasticNet(ElasticNetParams { m: 10, ..Default::default() }),
                presets: vec![Preset::NidsExactDiffusion],
                ..base
            },
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn check(&self) -> Result<()> {
        if !(self.target > 0.0) {
            return Err(invalid("target must be positive"));
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters must be positive"));
        }
        if self.k_min == 0 || self.k_max.is_some_and(|k| k < self.k_min) {
            return Err(invalid("need 1 ≤ k_min ≤ k_max"));
        }
        if !(self.plateau_band >= 0.0) {
            return Err(invalid("plateau_band must be nonnegative"));
        }
        if let GammaPolicy::Value { value } = self.gamma {
            if !(value > 0.0 && value.is_finite()) {
                return Err(invalid("explicit stepsize must be positive"));
            }
        }
        match self.experiment {
            ExperimentKind::Fig1 if self.omegas.is_empty() => Err(invalid("fig1 needs at least one omega")),
            ExperimentKind::Fig2 | ExperimentKind::Custom if self.presets.is_empty() => Err(invalid("no presets to run")),
            ExperimentKind::Fig3 if self.alphas.is_empty() => Err(invalid("fig3 needs at least one alpha")),
            ExperimentKind::Fig1 | ExperimentKind::Fig2 if !matches!(self.problem, ProblemSpec::ElasticNet(_)) => {
                Err(invalid("fig1/fig2 use the elastic-net problem"))
            }
            ExperimentKind::Fig3 if !matches!(self.problem, ProblemSpec::Logistic { .. }) => Err(invalid("fig3 uses the logistic problem")),
            _ => Ok(()),
        }
    }
}

/// Graph and problem streams derived from the experiment seed.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Seeds {
    pub graph: u64,
    pub problem: u64,
}

impl Seeds {
    pub fn derive(seed: u64) -> Self {
        let mut rng = SeededRng::new(seed);
        Self {
            graph: rng.next_u64(),
            problem: rng.next_u64(),
        }
    }
}

/// Built network: graph, gossip matrix and resampling count.
pub struct Network {
    pub graph: Graph,
    pub w: GossipMatrix,
    pub retries: usize,
}

pub fn build_network(spec: &GraphSpec, kind: GossipKind, seed: u64) -> Result<Network> {
    let (graph, retries) = match spec {
        GraphSpec::ErdosRenyi { m, p, max_retries } => Graph::erdos_renyi_connected(*m, *p, seed, *max_retries)?,
        GraphSpec::Named { shape, m } => (Graph::named(*shape, *m)?, 0),
        GraphSpec::EdgeList { path } => (Graph::from_edge_list(&fs::read_to_string(path)?)?, 0),
    };
    let w = GossipMatrix::metropolis(&graph)?;
    let w = match kind {
        GossipKind::Metropolis => w,
        GossipKind::LazyMetropolis => w.lazy(),
    };
    Ok(Network { graph, w, retries })
}

fn load_dataset(path: &Option<PathBuf>) -> Result<Dataset> {
    match path {
        Some(p) => Dataset::load_ionosphere(p),
        None => Ok(Dataset::bundled_ionosphere()),
    }
}

/// Instantiates the configured problem; `omega`/`alpha` override the configured values.
pub fn build_problem(spec: &ProblemSpec, seed: u64, omega: Option<f64>, alpha: Option<f64>) -> Result<ProblemInstance> {
    match spec {
        ProblemSpec::ElasticNet(p) => elastic_net_instance(&ElasticNetParams {
            seed,
            omega: omega.unwrap_or(p.omega),
            ..p.clone()
        }),
        ProblemSpec::Logistic {
            alpha: a,
            agents,
            per_agent,
            lambda,
            path,
        } => {
            let data = load_dataset(path)?;
            let p = logistic_instance(&data, alpha.unwrap_or(*a), *agents, *per_agent)?;
            if *lambda == 0.0 {
                Ok(p)
            } else {
                ProblemInstance::new(p.smooth, Regularizer::ScaledL1 { lambda: *lambda, m: *agents })
            }
        }
    }
}

fn problem_agents(spec: &ProblemSpec) -> usize {
    match spec {
        ProblemSpec::ElasticNet(p) => p.m,
        ProblemSpec::Logistic { agents, .. } => *agents,
    }
}

fn solve(problem: &ProblemInstance, cache: &Option<PathBuf>) -> Result<OracleSolution> {
    const TOL: f64 = 1e-12;
    const ITERS: usize = 200_000;
    match cache {
        Some(dir) => oracle::cached_solve(problem, dir, TOL, ITERS),
        None => oracle::solve_centralized(problem, TOL, ITERS),
    }
}

/// Output of an experiment: named CSV tables plus the manifest.
#[derive(Clone, Debug)]
pub struct Artifacts {
    pub files: BTreeMap<String, String>,
    pub manifest: Value,
    /// Some run diverged (numbers beyond the divergence limit or NaN).
    pub diverged: bool,
}

impl Artifacts {
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for (name, body) in &self.files {
            let p = dir.join(name);
            fs::write(&p, body)?;
            written.push(p);
        }
        let p = dir.join("manifest.json");
        fs::write(&p, serde_json::to_string_pretty(&self.manifest)? + "\n")?;
        written.push(p);
        Ok(written)
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Artifacts> {
    cfg.check()?;
    match cfg.experiment {
        ExperimentKind::Fig1 => Ok(fig1(cfg)?.artifacts(cfg)),
        ExperimentKind::Fig2 => Ok(fig2(cfg)?.artifacts(cfg)),
        ExperimentKind::Fig3 => Ok(fig3(cfg)?.artifacts(cfg)),
        ExperimentKind::Custom => custom(cfg),
    }
}

fn fmt_opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Smallest `K` after which every count stays within `(1 + band)` of the
/// count at the largest `K`. `None` when the last cell is censored.
pub fn plateau_onset(ks: &[usize], iters: &[Option<usize>], band: f64) -> Option<usize> {
    let plateau = (*iters.last()?)? as f64;
    let limit = plateau * (1.0 + band);
    let mut onset = *ks.last()?;
    for (k, it) in ks.iter().zip(iters).rev() {
        match it {
            Some(n) if *n as f64 <= limit => onset = *k,
            _ => break,
        }
    }
    Some(onset)
}

/// Mean of `e_{k+1}/e_k` over the last `window` ratios with positive errors.
pub fn tail_ratio(errs: &[f64], window: usize) -> Option<f64> {
    let ratios: Vec<f64> = errs.windows(2).filter(|w| w[0] > 0.0).map(|w| w[1] / w[0]).collect();
    if ratios.is_empty() {
        return None;
    }
    let tail = &ratios[ratios.len().saturating_sub(window)..];
    Some(tail.iter().sum::<f64>() / tail.len() as f64)
}

fn count_to(trace: &abc::RunTrace) -> Option<usize> {
    trace.hit.map(|k| trace.rows[k].grad_evals)
}

// ---------------------------------------------------------------- fig1

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Consensus {
    Power,
    Chebyshev,
}

impl Consensus {
    fn label(self) -> &'static str {
        match self {
            Consensus::Power => "power",
            Consensus::Chebyshev => "chebyshev",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Fig1Row {
    pub k: usize,
    pub omega: f64,
    pub kappa: f64,
    pub variant: Consensus,
    /// Gradient evaluations to the target; `None` when censored.
    pub iterations: Option<usize>,
    pub predicted_marker: usize,
    pub delta: Option<f64>,
    /// The Chebyshev filter fell back to the lazy matrix.
    pub lazy_fallback: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Fig1Curve {
    pub omega: f64,
    pub kappa: f64,
    pub variant: Consensus,
    pub predicted_marker: usize,
    pub plateau_onset: Option<usize>,
    pub plateau_iterations: Option<usize>,
}

pub struct Fig1Result {
    pub rows: Vec<Fig1Row>,
    pub curves: Vec<Fig1Curve>,
    pub ks: Vec<usize>,
    pub lambda_second: f64,
    pub seeds: Seeds,
    pub retries: usize,
    pub instances: Vec<Value>,
}

pub const FIG1_HEADER: &str = "k,omega,kappa,variant,iterations,censored,predicted_marker,delta,lazy_fallback";

impl Fig1Result {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{FIG1_HEADER}\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.k,
                r.omega,
                r.kappa,
                r.variant.label(),
                fmt_opt(r.iterations),
                r.iterations.is_none(),
                r.predicted_marker,
                fmt_opt(r.delta),
                r.lazy_fallback
            ));
        }
        s
    }

    pub fn curve(&self, omega: f64, variant: Consensus) -> Vec<Option<usize>> {
        self.rows
            .iter()
            .filter(|r| r.omega == omega && r.variant == variant)
            .map(|r| r.iterations)
            .collect()
    }

    fn artifacts(&self, cfg: &ExperimentConfig) -> Artifacts {
        let mut summary = String::from("omega,kappa,variant,predicted_marker,plateau_onset,plateau_iterations\n");
        for c in &self.curves {
            summary.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.omega,
                c.kappa,
                c.variant.label(),
                c.predicted_marker,
                fmt_opt(c.plateau_onset),
                fmt_opt(c.plateau_iterations)
            ));
        }
        let fallbacks: Vec<usize> = self.rows.iter().filter(|r| r.lazy_fallback).map(|r| r.k).collect();
        Artifacts {
            files: BTreeMap::from([("fig1.csv".into(), self.to_csv()), ("fig1_summary.csv".into(), summary)]),
            manifest: json!({
                "experiment": "fig1",
                "config": cfg,
                "seeds": self.seeds,
                "graph_retries": self.retries,
                "lambda_second_w": self.lambda_second,
                "k_sweep": self.ks,
                "chebyshev_base": if fallbacks.is_empty() { "metropolis" } else { "metropolis with lazy fallback" },
                "chebyshev_lazy_fallback_k": fallbacks,
                "instances": self.instances,
                "curves": self.curves,
                "censored_cells": self.rows.iter().filter(|r| r.iterations.is_none()).count(),
            }),
            diverged: false,
        }
    }
}

struct Instance {
    omega: f64,
    problem: ProblemInstance,
    reference: Reference,
    l: f64,
    mu: f64,
    kappa: f64,
    marker: usize,
    oracle: OracleSolution,
}

pub fn fig1(cfg: &ExperimentConfig) -> Result<Fig1Result> {
    let seeds = Seeds::derive(cfg.seed);
    let net = build_network(&cfg.graph, cfg.gossip, seeds.graph)?;
    if problem_agents(&cfg.problem) != net.graph.m() {
        return Err(invalid("problem agent count differs from graph size"));
    }
    let w = &net.w;
    let lambda_second = w.spectral_summary()?.second_largest();

    let instances: Vec<Instance> = cfg
        .omegas
        .par_iter()
        .map(|&omega| -> Result<Instance> {
            let problem = build_problem(&cfg.problem, seeds.problem, Some(omega), None)?;
            let oracle = solve(&problem, &cfg.oracle_cache)?;
            let reference = Reference::new(&problem, oracle.x_star.clone(), MeritMode::G)?;
            let (l, mu) = (problem.smooth.l(), problem.smooth.mu());
            let kappa = l / mu;
            Ok(Instance {
                omega,
                marker: analysis::predicted_marker(kappa, lambda_second)?,
                problem,
                reference,
                l,
                mu,
                kappa,
                oracle,
            })
        })
        .collect::<Result<_>>()?;

    let k_max = cfg
        .k_max
        .unwrap_or_else(|| instances.iter().map(|i| i.marker).max().unwrap_or(1) + 5)
        .min(cfg.k_cap)
        .max(cfg.k_min);
    let ks: Vec<usize> = (cfg.k_min..=k_max).collect();

    let lazy = w.lazy();
    let mut filters: BTreeMap<(usize, Consensus), (GossipMatrix, bool)> = BTreeMap::new();
    for &k in &ks {
        filters.insert((k, Consensus::Power), (lazy.matrix_power(k)?, false));
        let cheb = match w.chebyshev_matrix(k) {
            Ok(p) => (p.lazy(), false),
            Err(Error::Singular(_)) => (lazy.chebyshev_matrix(k)?.lazy(), true),
            // Nothing to accelerate: the plain filter is already optimal.
            Err(Error::ExactConsensus) => (lazy.matrix_power(k)?, false),
            Err(e) => return Err(e),
        };
        filters.insert((k, Consensus::Chebyshev), cheb);
    }

    let cells: Vec<(usize, usize, Consensus)> = (0..instances.len())
        .flat_map(|i| ks.iter().flat_map(move |&k| [Consensus::Power, Consensus::Chebyshev].map(|v| (i, k, v))))
        .collect();
    let rows: Vec<Fig1Row> = cells
        .par_iter()
        .map(|&(i, k, variant)| -> Result<Fig1Row> {
            let inst = &instances[i];
            let (b, fallback) = &filters[&(k, variant)];
            let mats = AbcMatrices::from_polynomial(b, format!("{}-K{k}", variant.label()))?;
            let gamma = match cfg.gamma {
                GammaPolicy::Optimal => 2.0 / (inst.l + inst.mu),
                GammaPolicy::Value { value } => value,
            };
            let delta = analysis::delta_linear(&mats, gamma, inst.l, inst.mu, RateMode::G).ok().map(|r| r.delta);
            let trace = abc::run(RunConfig {
                variant: cfg.variant,
                stop: StopRule {
                    max_iters: cfg.max_iters,
                    tol: cfg.target,
                    metric: Some(StopMetric::ErrOpt),
                    run_to_cap: false,
                },
                reference: Some(&inst.reference),
                tracking: Tracking {
                    objective: false,
                    merit: false,
                },
                ..RunConfig::new(&mats, &inst.problem, gamma)
            })?;
            Ok(Fig1Row {
                k,
                omega: inst.omega,
                kappa: inst.kappa,
                variant,
                iterations: count_to(&trace),
                predicted_marker: inst.marker,
                delta,
                lazy_fallback: *fallback,
            })
        })
        .collect::<Result<_>>()?;

    let mut curves = Vec::new();
    for inst in &instances {
        for variant in [Consensus::Power, Consensus::Chebyshev] {
            let its: Vec<Option<usize>> = rows
                .iter()
                .filter(|r| r.omega == inst.omega && r.variant == variant)
                .map(|r| r.iterations)
                .collect();
            curves.push(Fig1Curve {
                omega: inst.omega,
                kappa: inst.kappa,
                variant,
                predicted_marker: inst.marker,
                plateau_onset: plateau_onset(&ks, &its, cfg.plateau_band),
                plateau_iterations: *its.last().unwrap_or(&None),
            });
        }
    }
    let instances_json = instances
        .iter()
        .map(|i| {
            json!({
                "omega": i.omega,
                "kappa": i.kappa,
                "l": i.l,
                "mu": i.mu,
                "predicted_marker": i.marker,
                "rho_opt_sq": analysis::rho_opt_sq(i.kappa),
                "oracle_residual": i.oracle.residual,
                "problem_hash": i.problem.content_hash(),
            })
        })
        .collect();
    Ok(Fig1Result {
        rows,
        curves,
        ks,
        lambda_second,
        seeds,
        retries: net.retries,
        instances: instances_json,
    })
}

// ---------------------------------------------------------------- fig2

#[derive(Clone, Debug, Serialize)]
pub struct Fig2Summary {
    pub algorithm: String,
    pub atc: bool,
    pub gamma: f64,
    pub delta: Option<f64>,
    pub delta_star: f64,
    pub evals_to_target: Option<usize>,
    pub tail_ratio: Option<f64>,
    pub lazy_base: bool,
    pub outcome: Outcome,
    pub consensus_row_error: f64,
}

pub struct Fig2Result {
    pub summaries: Vec<Fig2Summary>,
    /// Per algorithm: `(grad_evals, err_opt)`.
    pub traces: Vec<Vec<(usize, f64)>>,
    pub seeds: Seeds,
    pub retries: usize,
    pub kappa: f64,
    pub oracle_residual: f64,
}

pub const FIG2_HEADER: &str = "algorithm,grad_evals,err_opt";

impl Fig2Result {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{FIG2_HEADER}\n");
        for (sum, tr) in self.summaries.iter().zip(&self.traces) {
            for (g, e) in tr {
                s.push_str(&format!("{},{g},{e:e}\n", sum.algorithm));
            }
        }
        s
    }

    pub fn summary(&self, algorithm: &str) -> Option<&Fig2Summary> {
        self.summaries.iter().find(|s| s.algorithm == algorithm)
    }

    fn artifacts(&self, cfg: &ExperimentConfig) -> Artifacts {
        let mut summary = String::from("algorithm,atc,gamma,delta,delta_star,evals_to_target,tail_ratio,lazy_base,outcome\n");
        for s in &self.summaries {
            summary.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                s.algorithm,
                s.atc,
                s.gamma,
                fmt_opt(s.delta),
                s.delta_star,
                fmt_opt(s.evals_to_target),
                fmt_opt(s.tail_ratio),
                s.lazy_base,
                outcome_label(&s.outcome)
            ));
        }
        Artifacts {
            files: BTreeMap::from([("fig2.csv".into(), self.to_csv()), ("fig2_summary.csv".into(), summary)]),
            manifest: json!({
                "experiment": "fig2",
                "config": cfg,
                "seeds": self.seeds,
                "graph_retries": self.retries,
                "kappa": self.kappa,
                "oracle_residual": self.oracle_residual,
                "algorithms": self.summaries,
            }),
            diverged: self.summaries.iter().any(|s| matches!(s.outcome, Outcome::Diverged { .. })),
        }
    }
}

fn outcome_label(o: &Outcome) -> &'static str {
    match o {
        Outcome::Converged => "converged",
        Outcome::MaxIters => "max_iters",
        Outcome::Diverged { .. } => "diverged",
    }
}

/// Builds a preset on `w`, retrying on the lazy matrix when the preset's
/// spectral precondition rejects `w`.
pub fn preset_on(p: &Preset, w: &GossipMatrix, gamma: Option<f64>) -> Result<(AbcMatrices, bool)> {
    match AbcMatrices::preset(p, w, gamma) {
        Ok(m) => Ok((m, false)),
        Err(Error::Spectral(_)) => Ok((AbcMatrices::preset(p, &w.lazy(), gamma)?, true)),
        Err(e) => Err(e),
    }
}

fn max_row_error(x: &Mat, x_star: &[f64]) -> f64 {
    (0..x.nrows())
        .map(|i| x_star.iter().enumerate().map(|(j, v)| (x[(i, j)] - v).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

pub fn fig2(cfg: &ExperimentConfig) -> Result<Fig2Result> {
    let seeds = Seeds::derive(cfg.seed);
    let net = build_network(&cfg.graph, cfg.gossip, seeds.graph)?;
    if problem_agents(&cfg.problem) != net.graph.m() {
        return Err(invalid("problem agent count differs from graph size"));
    }
    let omega = cfg.omegas.first().copied();
    let problem = build_problem(&cfg.problem, seeds.problem, omega, None)?;
    let sol = solve(&problem, &cfg.oracle_cache)?;
    let reference = Reference::new(&problem, sol.x_star.clone(), MeritMode::G)?;
    let (l, mu) = (problem.smooth.l(), problem.smooth.mu());
    let kappa = l / mu;
    let tol = cfg.trace_tol.unwrap_or(cfg.target).min(cfg.target);

    let results: Vec<(Fig2Summary, Vec<(usize, f64)>)> = cfg
        .presets
        .par_iter()
        .map(|p| -> Result<_> {
            let (mats, lazy_base) = preset_on(p, &net.w, None)?;
            let gamma = match cfg.gamma {
                GammaPolicy::Optimal => analysis::gamma_star(mats.lambda_min_d()?, l, mu)?,
                GammaPolicy::Value { value } => value,
            };
            // A preset built around γ needs it before the matrices exist.
            let (mats, lazy_base) = if p.needs_gamma() {
                preset_on(p, &net.w, Some(gamma))?
            } else {
                (mats, lazy_base)
            };
            let rate = analysis::delta_linear(&mats, gamma, l, mu, RateMode::G).ok();
            let trace = abc::run(RunConfig {
                variant: cfg.variant,
                stop: StopRule {
                    max_iters: cfg.max_iters,
                    tol,
                    metric: Some(StopMetric::ErrOpt),
                    run_to_cap: false,
                },
                reference: Some(&reference),
                tracking: Tracking {
                    objective: false,
                    merit: false,
                },
                ..RunConfig::new(&mats, &problem, gamma)
            })?;
            let series: Vec<(usize, f64)> = trace.rows.iter().map(|r| (r.grad_evals, r.err_opt.unwrap_or(f64::NAN))).collect();
            let errs: Vec<f64> = series.iter().map(|s| s.1).collect();
            let evals_to_target = trace
                .rows
                .iter()
                .find(|r| r.err_opt.is_some_and(|e| e <= cfg.target))
                .map(|r| r.grad_evals);
            let l2_c = if mats.m() > 1 { analysis::lambda2(&mats.c)? } else { 1.0 };
            Ok((
                Fig2Summary {
                    algorithm: p.name(),
                    atc: mats.is_atc(),
                    gamma,
                    delta: rate.map(|r| r.delta),
                    delta_star: analysis::delta_star(kappa, l2_c),
                    evals_to_target,
                    tail_ratio: tail_ratio(&errs, cfg.tail_window),
                    lazy_base,
                    consensus_row_error: max_row_error(&trace.final_state.x, &sol.x_star),
                    outcome: trace.outcome.clone(),
                },
                series,
            ))
        })
        .collect::<Result<_>>()?;
    let (summaries, traces) = results.into_iter().unzip();
    Ok(Fig2Result {
        summaries,
        traces,
        seeds,
        retries: net.retries,
        kappa,
        oracle_residual: sol.residual,
    })
}

// ---------------------------------------------------------------- fig3

#[derive(Clone, Debug, Serialize)]
pub struct Fig3Row {
    pub k: usize,
    pub alpha: f64,
    pub l: f64,
    pub gamma: f64,
    pub iterations: Option<usize>,
    /// Largest `k · M(X̂^k)` along the run.
    pub max_k_merit: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Fig3Curve {
    pub alpha: f64,
    pub l: f64,
    pub turning_point: Option<usize>,
    pub min_iterations: Option<usize>,
}

pub struct Fig3Result {
    pub rows: Vec<Fig3Row>,
    pub curves: Vec<Fig3Curve>,
    pub ks: Vec<usize>,
    pub seeds: Seeds,
    pub retries: usize,
    pub oracle_residuals: Vec<f64>,
}

pub const FIG3_HEADER: &str = "k,alpha,l,gamma,iterations,censored,max_k_merit";

impl Fig3Result {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{FIG3_HEADER}\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{:e}\n",
                r.k,
                r.alpha,
                r.l,
                r.gamma,
                fmt_opt(r.iterations),
                r.iterations.is_none(),
                r.max_k_merit
            ));
        }
        s
    }

    pub fn curve(&self, alpha: f64) -> Vec<Option<usize>> {
        self.rows.iter().filter(|r| r.alpha == alpha).map(|r| r.iterations).collect()
    }

    fn artifacts(&self, cfg: &ExperimentConfig) -> Artifacts {
        Artifacts {
            files: BTreeMap::from([("fig3.csv".into(), self.to_csv())]),
            manifest: json!({
                "experiment": "fig3",
                "config": cfg,
                "seeds": self.seeds,
                "graph_retries": self.retries,
                "k_sweep": self.ks,
                "curves": self.curves,
                "oracle_residuals": self.oracle_residuals,
                "censored_cells": self.rows.iter().filter(|r| r.iterations.is_none()).count(),
            }),
            diverged: false,
        }
    }
}

pub fn fig3(cfg: &ExperimentConfig) -> Result<Fig3Result> {
    let seeds = Seeds::derive(cfg.seed);
    let net = build_network(&cfg.graph, cfg.gossip, seeds.graph)?;
    if problem_agents(&cfg.problem) != net.graph.m() {
        return Err(invalid("problem agent count differs from graph size"));
    }
    let k_max = cfg.k_max.unwrap_or(cfg.k_cap).min(cfg.k_cap).max(cfg.k_min);
    let ks: Vec<usize> = (cfg.k_min..=k_max).collect();
    let mode = if matches!(cfg.problem, ProblemSpec::Logistic { lambda, .. } if lambda != 0.0) {
        MeritMode::G
    } else {
        MeritMode::G0
    };

    let instances: Vec<(f64, ProblemInstance, Reference, f64)> = cfg
        .alphas
        .par_iter()
        .map(|&alpha| -> Result<_> {
            let problem = build_problem(&cfg.problem, seeds.problem, None, Some(alpha))?;
            let sol = solve(&problem, &cfg.oracle_cache)?;
            let reference = Reference::new(&problem, sol.x_star, mode)?;
            Ok((alpha, problem, reference, sol.residual))
        })
        .collect::<Result<_>>()?;

    let mats: Vec<AbcMatrices> = ks
        .iter()
        .map(|&k| AbcMatrices::from_polynomial(&net.w.matrix_power(k)?, format!("power-K{k}")))
        .collect::<Result<_>>()?;
    let sub_mode = if mode == MeritMode::G { SublinearMode::Prox } else { SublinearMode::G0 };

    let cells: Vec<(usize, usize)> = (0..instances.len()).flat_map(|i| (0..ks.len()).map(move |j| (i, j))).collect();
    let rows: Vec<Fig3Row> = cells
        .par_iter()
        .map(|&(i, j)| -> Result<Fig3Row> {
            let (alpha, problem, reference, _) = &instances[i];
            let mats = &mats[j];
            let x0 = Mat::zeros(problem.m(), problem.d());
            let gamma = match cfg.gamma {
                GammaPolicy::Optimal => analysis::sublinear_stepsize(mats, problem, &x0, &reference.x_star, sub_mode)?,
                GammaPolicy::Value { value } => value,
            };
            let variant = if mode == MeritMode::G { Variant::SublinearProx } else { cfg.variant };
            let trace = abc::run(RunConfig {
                variant,
                stop: StopRule {
                    max_iters: cfg.max_iters,
                    tol: cfg.target,
                    metric: Some(cfg.fig3_metric),
                    run_to_cap: false,
                },
                reference: Some(reference),
                tracking: Tracking {
                    objective: false,
                    merit: true,
                },
                ..RunConfig::new(mats, problem, gamma)
            })?;
            let max_k_merit = trace
                .rows
                .iter()
                .skip(1)
                .filter_map(|r| r.merit.map(|m| m * r.k as f64))
                .fold(0.0, f64::max);
            Ok(Fig3Row {
                k: ks[j],
                alpha: *alpha,
                l: problem.smooth.l(),
                gamma,
                iterations: count_to(&trace),
                max_k_merit,
            })
        })
        .collect::<Result<_>>()?;

    let curves = instances
        .iter()
        .map(|(alpha, problem, _, _)| {
            let its: Vec<Option<usize>> = rows.iter().filter(|r| r.alpha == *alpha).map(|r| r.iterations).collect();
            Fig3Curve {
                alpha: *alpha,
                l: problem.smooth.l(),
                turning_point: plateau_onset(&ks, &its, cfg.plateau_band),
                min_iterations: its.iter().flatten().min().copied(),
            }
        })
        .collect();
    Ok(Fig3Result {
        rows,
        curves,
        ks,
        seeds,
        retries: net.retries,
        oracle_residuals: instances.iter().map(|i| i.3).collect(),
    })
}

// ---------------------------------------------------------------- custom

/// One run per preset on the configured instance, full traces.
fn custom(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let seeds = Seeds::derive(cfg.seed);
    let net = build_network(&cfg.graph, cfg.gossip, seeds.graph)?;
    if problem_agents(&cfg.problem) != net.graph.m() {
        return Err(invalid("problem agent count differs from graph size"));
    }
    let problem = build_problem(&cfg.problem, seeds.problem, cfg.omegas.first().copied(), cfg.alphas.first().copied())?;
    let sol = solve(&problem, &cfg.oracle_cache)?;
    let strongly_convex = problem.smooth.mu() > 0.0;
    let mode = if problem.reg.is_zero() { MeritMode::G0 } else { MeritMode::G };
    let reference = Reference::new(&problem, sol.x_star.clone(), mode)?;
    let (l, mu) = (problem.smooth.l(), problem.smooth.mu());

    let mut files = BTreeMap::new();
    let mut runs = Vec::new();
    let mut diverged = false;
    for p in &cfg.presets {
        let (mats, lazy_base) = preset_on(p, &net.w, None)?;
        let x0 = Mat::zeros(problem.m(), problem.d());
        let gamma = match cfg.gamma {
            GammaPolicy::Value { value } => value,
            GammaPolicy::Optimal if strongly_convex => analysis::gamma_star(mats.lambda_min_d()?, l, mu)?,
            GammaPolicy::Optimal => {
                let sm = if mode == MeritMode::G { SublinearMode::Prox } else { SublinearMode::G0 };
                analysis::sublinear_stepsize(&mats, &problem, &x0, &sol.x_star, sm)?
            }
        };
        let (mats, lazy_base) = if p.needs_gamma() {
            preset_on(p, &net.w, Some(gamma))?
        } else {
            (mats, lazy_base)
        };
        let rate = if strongly_convex {
            analysis::delta_linear(&mats, gamma, l, mu, if mode == MeritMode::G { RateMode::G } else { RateMode::G0 }).ok()
        } else {
            None
        };
        let metric = if strongly_convex { StopMetric::ErrOpt } else { cfg.fig3_metric };
        let trace = abc::run(RunConfig {
            variant: cfg.variant,
            stop: StopRule {
                max_iters: cfg.max_iters,
                tol: cfg.trace_tol.unwrap_or(cfg.target).min(cfg.target),
                metric: Some(metric),
                run_to_cap: false,
            },
            reference: Some(&reference),
            ..RunConfig::new(&mats, &problem, gamma)
        })?;
        diverged |= matches!(trace.outcome, Outcome::Diverged { .. });
        files.insert(format!("trace_{}.csv", p.name().replace(':', "_")), trace.to_csv());
        runs.push(json!({
            "preset": p.name(),
            "gamma": gamma,
            "lazy_base": lazy_base,
            "rate": rate,
            "outcome": trace.outcome,
            "hit": trace.hit,
            "iterations": trace.last().k,
            "consensus_row_error": max_row_error(&trace.final_state.x, &sol.x_star),
        }));
    }
    Ok(Artifacts {
        files,
        manifest: json!({
            "experiment": "custom",
            "config": cfg,
            "seeds": seeds,
            "graph_retries": net.retries,
            "l": l,
            "mu": mu,
            "kappa": if mu > 0.0 { l / mu } else { f64::INFINITY },
            "oracle_residual": sol.residual,
            "problem_hash": problem.content_hash(),
            "runs": runs,
        }),
        diverged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_json_round_trip() {
        for kind in [ExperimentKind::Fig1, ExperimentKind::Fig2, ExperimentKind::Fig3, ExperimentKind::Custom] {
            let mut cfg = ExperimentConfig::preset(kind, 17);
            cfg.target = 0.1 + 0.2;
            cfg.omegas.push(1.0 / 3.0);
            let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
            assert_eq!(cfg, back);
        }
    }

    #[test]
    fn config_rejects_unknown_fields_and_bad_values() {
        let mut v: Value = serde_json::from_str(&ExperimentConfig::preset(ExperimentKind::Fig1, 1).to_json()).unwrap();
        v["bogus"] = json!(1);
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
        let mut cfg = ExperimentConfig::preset(ExperimentKind::Fig1, 1);
        cfg.target = 0.0;
        assert!(cfg.check().is_err());
        let mut cfg = ExperimentConfig::preset(ExperimentKind::Fig2, 1);
        cfg.presets.clear();
        assert!(cfg.check().is_err());
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let text = r#"{
            "experiment": "custom", "seed": 3,
            "graph": {"kind": "named", "shape": "ring", "m": 4},
            "problem": {"kind": "elastic_net", "m": 4, "r": 5, "d": 3},
            "presets": [{"name": "nids_exact_diffusion"}],
            "target": 1e-8, "max_iters": 5000
        }"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(cfg.gamma, GammaPolicy::Optimal);
        assert_eq!(cfg.fig3_metric, StopMetric::MeritLast);
        let a = run_experiment(&cfg).unwrap();
        assert!(a.files.contains_key("trace_nids_exact_diffusion.csv"));
        assert_eq!(a.manifest["runs"][0]["outcome"]["status"], "converged");
    }

    #[test]
    fn plateau_onset_examples() {
        let ks = [1, 2, 3, 4, 5];
        assert_eq!(plateau_onset(&ks, &[Some(100), Some(50), Some(30), Some(30), Some(30)], 0.0), Some(3));
        assert_eq!(plateau_onset(&ks, &[Some(100), Some(50), Some(30), Some(31), Some(30)], 0.01), Some(5));
        assert_eq!(plateau_onset(&ks, &[Some(100), Some(50), Some(30), Some(31), Some(30)], 0.05), Some(3));
        assert_eq!(plateau_onset(&ks, &[Some(9), None, Some(3), Some(3), None], 0.0), None);
        assert_eq!(plateau_onset(&ks, &[Some(9), None, Some(3), Some(3), Some(3)], 0.0), Some(3));
    }

    #[test]
    fn tail_ratio_of_geometric_sequence() {
        let errs: Vec<f64> = (0..100).map(|k| 0.9f64.powi(k)).collect();
        assert!((tail_ratio(&errs, 50).unwrap() - 0.9).abs() < 1e-12);
        assert!(tail_ratio(&[1.0], 5).is_none());
    }

    #[test]
    fn seeds_are_stable() {
        let a = Seeds::derive(5);
        let b = Seeds::derive(5);
        assert_eq!((a.graph, a.problem), (b.graph, b.problem));
        assert_ne!(a.graph, a.problem);
    }

    #[test]
    fn small_fig1_is_reproducible_and_censors() {
        let mut cfg = ExperimentConfig::preset(ExperimentKind::Fig1, 2);
        cfg.graph = GraphSpec::ErdosRenyi {
            m: 8,
            p: 0.4,
            max_retries: 1000,
        };
        cfg.problem = ProblemSpec::ElasticNet(ElasticNetParams {
            m: 8,
            r: 6,
            d: 5,
            ..Default::default()
        });
        cfg.omegas = vec![0.5, 0.9];
        cfg.k_max = Some(4);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.files, b.files);
        assert_eq!(a.manifest, b.manifest);
        let csv = &a.files["fig1.csv"];
        assert_eq!(csv.lines().count(), 1 + 2 * 4 * 2);

        cfg.max_iters = 3;
        let c = fig1(&cfg).unwrap();
        assert!(c.rows.iter().all(|r| r.iterations.is_none()));
        assert!(c.to_csv().lines().skip(1).all(|l| l.contains(",,true,")));
    }
}
