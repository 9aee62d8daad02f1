//! C ABI over `abc_core`.
//!
//! Objects cross the boundary as opaque handles created by `abc_*_new`-style
//! constructors and released with the matching `abc_*_free`. Every fallible
//! call returns an [`AbcStatus`]; on failure [`abc_last_error_message`]
//! describes the error for the calling thread. Matrices are exchanged as
//! row-major `double` buffers whose length the caller passes explicitly.
//!
//! Enum arguments must hold one of the declared values.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;

use abc_core::abc::{self, AssumptionMode, Outcome, StopMetric, StopRule, Tracking};
use abc_core::analysis::{self, Binding, MeritMode, RateMode, Reference};
use abc_core::experiments::{self, ExperimentConfig};
use abc_core::graph::NamedGraph;
use abc_core::linalg::Mat;
use abc_core::oracle;
use abc_core::problem::{self, Dataset, ElasticNetParams};
use abc_core::{Error, GossipMatrix, Graph, Preset, ProblemInstance, Regularizer, RunConfig, RunTrace, Variant};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AbcStatus {
    Ok = 0,
    InvalidArgument = 1,
    Disconnected = 2,
    Shape = 3,
    Spectral = 4,
    ExactConsensus = 5,
    Diverged = 6,
    Singular = 7,
    Oracle = 8,
    Parse = 9,
    Io = 10,
    Json = 11,
    NullPointer = 12,
    /// A Rust panic was caught at the boundary.
    Panic = 13,
}

pub struct AbcGraph(Graph);
pub struct AbcGossip(GossipMatrix);
pub struct AbcProblem(ProblemInstance);
/// A weight-matrix triple `(A, B, C)`.
pub struct AbcWeights(abc_core::AbcMatrices);
pub struct AbcRun(RunTrace);

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AbcVariant {
    Abc = 0,
    Eliminated = 1,
    SublinearProx = 2,
    Underline = 3,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AbcStopMetric {
    /// Distance to the oracle solution; needs `x_star`.
    ErrOpt = 0,
    MeritAvg = 1,
    MeritLast = 2,
    /// `‖Z^{k+1} − Z^k‖`; needs no oracle.
    FixedPoint = 3,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AbcRateMode {
    G0 = 0,
    G = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AbcAssumption {
    LinearG0 = 0,
    LinearG = 1,
    SublinearG0 = 2,
    SublinearProx = 3,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AbcWhich {
    A = 0,
    B = 1,
    C = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AbcOutcome {
    Converged = 0,
    MaxIters = 1,
    Diverged = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct AbcElasticNetParams {
    pub seed: u64,
    pub omega: f64,
    pub m: usize,
    pub r: usize,
    pub d: usize,
    pub rho: f64,
    pub lambda: f64,
    pub sparsity: f64,
    pub noise_var: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct AbcSpectral {
    /// `λ_max(W − J)`.
    pub rho_com: f64,
    /// `max |λ(W − J)|`.
    pub mixing_radius: f64,
    pub lambda_second: f64,
    pub lambda_min: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct AbcRate {
    pub gamma: f64,
    pub gamma_star: f64,
    pub q_sq: f64,
    pub lambda_term: f64,
    pub optimization_term: f64,
    pub consensus_term: f64,
    pub delta: f64,
    pub network_bound: bool,
    pub feasible: bool,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct AbcTradeoff {
    pub rho_com: f64,
    pub rho_opt: f64,
    pub k_plain: usize,
    pub k_chebyshev: usize,
    pub theta: f64,
    pub c: f64,
    pub rho_c: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct AbcStop {
    pub max_iters: usize,
    pub tol: f64,
    pub metric: AbcStopMetric,
    pub run_to_cap: bool,
}

/// Optional columns are NaN when not recorded.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct AbcTraceRow {
    pub k: usize,
    pub grad_evals: usize,
    pub comm_rounds: usize,
    pub err_opt: f64,
    pub err_consensus: f64,
    pub merit: f64,
    pub objective: f64,
}

// ------------------------------------------------------------ errors

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure {
    status: AbcStatus,
    msg: String,
}

impl Failure {
    fn new(status: AbcStatus, msg: impl Into<String>) -> Self {
        Self { status, msg: msg.into() }
    }

    fn invalid(msg: impl Into<String>) -> Self {
        Self::new(AbcStatus::InvalidArgument, msg)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidArgument(_) => AbcStatus::InvalidArgument,
            Error::Disconnected => AbcStatus::Disconnected,
            Error::Shape { .. } => AbcStatus::Shape,
            Error::Spectral(_) => AbcStatus::Spectral,
            Error::ExactConsensus => AbcStatus::ExactConsensus,
            Error::Diverged { .. } => AbcStatus::Diverged,
            Error::Singular(_) => AbcStatus::Singular,
            Error::Oracle(_) => AbcStatus::Oracle,
            Error::Parse(_) => AbcStatus::Parse,
            Error::Io(_) => AbcStatus::Io,
            Error::Json(_) => AbcStatus::Json,
        };
        Self::new(status, e.to_string())
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AbcStatus {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            AbcStatus::Ok
        }
        Ok(Err(e)) => {
            set_error(&e.msg);
            e.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("panic: {msg}"));
            AbcStatus::Panic
        }
    }
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn abc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn abc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ------------------------------------------------------------ pointer helpers

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::new(AbcStatus::NullPointer, format!("{what} is NULL")))
}

unsafe fn put<T>(out: *mut T, v: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(AbcStatus::NullPointer, format!("{what} is NULL")));
    }
    out.write(v);
    Ok(())
}

fn check_out<T>(out: *mut T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        Err(Failure::new(AbcStatus::NullPointer, format!("{what} is NULL")))
    } else {
        Ok(())
    }
}

unsafe fn boxed<T>(out: *mut *mut T, v: T) -> Result<(), Failure> {
    put(out, Box::into_raw(Box::new(v)), "out")
}

unsafe fn text<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(Failure::new(AbcStatus::NullPointer, format!("{what} is NULL")));
    }
    CStr::from_ptr(s).to_str().map_err(|_| Failure::invalid(format!("{what} is not UTF-8")))
}

unsafe fn copy_matrix(a: &Mat, buf: *mut f64, len: usize) -> Result<(), Failure> {
    check_out(buf, "buffer")?;
    let need = a.nrows() * a.ncols();
    if len != need {
        return Err(Failure::new(AbcStatus::Shape, format!("buffer holds {len} values, {need} needed")));
    }
    let out = std::slice::from_raw_parts_mut(buf, len);
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            out[i * a.ncols() + j] = a[(i, j)];
        }
    }
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

// ------------------------------------------------------------ graphs

/// Connected G(m, p) graph; resamples with seeds `seed, seed+1, …`.
/// `retries` may be NULL.
///
/// # Safety
/// `out` must be writable; `retries` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn abc_graph_erdos_renyi(
    m: usize,
    p: f64,
    seed: u64,
    max_retries: usize,
    out: *mut *mut AbcGraph,
    retries: *mut usize,
) -> AbcStatus {
    guard(|| {
        check_out(out, "out")?;
        let (g, n) = Graph::erdos_renyi_connected(m, p, seed, max_retries)?;
        if !retries.is_null() {
            retries.write(n);
        }
        boxed(out, AbcGraph(g))
    })
}

/// `shape` is one of `path`, `ring`, `complete`, `star`.
///
/// # Safety
/// `shape` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn abc_graph_named(shape: *const c_char, m: usize, out: *mut *mut AbcGraph) -> AbcStatus {
    guard(|| {
        check_out(out, "out")?;
        let kind: NamedGraph = text(shape, "shape")?.parse()?;
        boxed(out, AbcGraph(Graph::named(kind, m)?))
    })
}

/// Parses edge-list text: the node count on the first line, then one
/// 0-based `i j` pair per line.
///
/// # Safety
/// `edges` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn abc_graph_from_edge_list(edges: *const c_char, out: *mut *mut AbcGraph) -> AbcStatus {
    guard(|| {
        check_out(out, "out")?;
        boxed(out, AbcGraph(Graph::from_edge_list(text(edges, "edges")?)?))
    })
}

/// Number of agents, or 0 for NULL.
///
/// # Safety
/// `g` must be NULL or a live graph handle.
#[no_mangle]
pub unsafe extern "C" fn abc_graph_num_agents(g: *const AbcGraph) -> usize {
    g.as_ref().map_or(0, |g| g.0.m())
}

/// Number of undirected edges, or 0 for NULL.
///
/// # Safety
/// `g` must be NULL or a live graph handle.
#[no_mangle]
pub unsafe extern "C" fn abc_graph_num_edges(g: *const AbcGraph) -> usize {
    g.as_ref().map_or(0, |g| g.0.edge_count())
}

/// # Safety
/// `g` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn abc_graph_free(g: *mut AbcGraph) {
    free(g)
}

// ------------------------------------------------------------ gossip

/// Metropolis–Hastings weights; `lazy` returns `(I + W)/2`.
///
/// # Safety
/// `g` must be a live graph handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn abc_gossip_metropolis(g: *const AbcGraph, lazy: bool, out: *mut *mut AbcGossip) -> AbcStatus {
    guard(|| {
        check_out(out, "out")?;
        let w = GossipMatrix::metropolis(&get(g, "graph")?.0)?;
        boxed(out, AbcGossip(if lazy { w.lazy() } else { w }))
    })
}

/// `W^k` (`chebyshev = false`) or the Chebyshev filter `P_k(W)`.
///
/// # Safety
/// `w` must be a live gossip handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn abc_gossip_filter(w: *const AbcGossip, k: usize, chebyshev: bool, out: *mut *mut AbcGossip) -> AbcStatus {
    guard(|| {
        check_out(out, "out")?;
        let w = &get(w, "gossip")?.0;
        let f = if chebyshev { w.chebyshev_matrix(k)? } else { w.matrix_power(k)? };
        boxed(out, AbcGossip(f))
    })
}

/// # Safety
/// `w` must be a live gossip handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn abc_gossip_spectral(w: *const AbcGossip, out: *mut AbcSpectral) -> AbcStatus {
    guard(|| {
        check_out(out, "out")?;
        let s = get(w, "gossip")?.0.spectral_summary()?;
        put(
            out,
            AbcSpectral {
                rho_com: s.rho_com,
                mixing_radius: s.mixing_radius,
                lambda_second: s.second_largest(),
                lambda_min: s.lambda_min(),
            },
            "out",
        )
    })
}

/// Copies `W` row-major into `buf` (`len` must be `m·m`).
///
/// # Safety
/// `w` must be a live gossip handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn abc_gossip_entries(w: *const AbcGossip, buf: *mut f64, len: usize) -> AbcStatus {
    guard(|| copy_matrix(get(w, "gossip")?.0.entries(), buf, len))
}

/// # Safety
/// `w` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn abc_gossip_free(w: *mut AbcGossip) {
    free(w)
}

// ------------------------------------------------------------ problems

/// Default elastic-net generator settings (`m = 50`, `d = 40`, …).
#[no_mangle]
pub extern "C" fn abc_elastic_net_default_params() -> AbcElasticNetParams {
    let p = ElasticNetParams::default();
    AbcElasticNetParams {
        seed: p.seed,
        omega: p.omega,
        m: p.m,
        r: p.r,
        d: p.d,
        rho: p.rho,
        lambda: p.lambda,
        sparsity: p.sparsity,
        noise_var: p.noise_var,
    }
}

/// # Safety
/// `params` must point to a valid struct; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn abc_problem_elastic_net(params: *const AbcElasticNetParams, out: *mut *mut AbcProblem) -> AbcStatus {
    guard(|| {
        check_out(out, "out")?;
        let p = get(params, "params")?;
        let inst = problem::elastic_net_instance(&ElasticNetParams {
            seed: p.seed,
            omega: p.omega,
            m: p.m,
            r: p.r,
            d: p.d,
            rho: p.rho,
            lambda: p.lambda,
            sparsity: p.sparsity,
            noise_var: p.noise_var,
        })?;
        boxed(out, AbcProblem(inst))
    })
}

/// Logistic regression on Ionosphere; `path` NULL uses the bundled copy.
/// `lambda > 0` adds a network-wide `λ‖x‖₁`.
///
/// # Safety
/// `path` must be NULL or a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn abc_problem_logistic(
    path: *const c_char,
    alpha: f64,
    agents: usize,
    per_agent: usize,
    lambda: f64,
    out: *mut *mut AbcProblem,
) -> AbcStatus {
    guard(|| {
        check_out(out, "out")?;
        let data = if path.is_null() {
            Dataset::bundled_ionosphere()
        } else {
            Dataset::load_ionosphere(Path::new(text(path, "path")?))?
        };
        let mut inst = problem::logistic_instance(&data, alpha, agents, per_agent)?;
        if lambda != 0.0 {
            inst = ProblemInstance::new(inst.smooth, Regularizer::ScaledL1 { lambda, m: agents })?;
        }
        boxed(out, AbcProblem(inst))
    })
}

/// # Safety
/// `p` must be a live problem handle; `m` and `d` must be writable.
#[no_mangle]
pub unsafe extern "C" fn abc_problem_dims(p: *const AbcProblem, m: *mut usize, d: *mut usize) -> AbcStatus {
    guard(|| {
        let p = &get(p, "problem")?.0;
        check_out(d, "d")?;
        put(m, p.m(), "m")?;
        put(d, p.d(), "d")
    })
}

/// `L = max_i L_i`, `μ = min_i μ_i`.
///
/// # Safety
/// `p` must be a live problem handle; `l` and `mu` must be writable.
#[no_mangle]
pub unsafe extern "C" fn abc_problem_constants(p: *const AbcProblem, l: *mut f64, mu: *mut f64) -> AbcStatus {
    guard(|| {
        let p = &get(p, "problem")?.0;
        check_out(mu, "mu")?;
        put(l, p.smooth.l(), "l")?;
        put(mu, p.smooth.mu(), "mu")
    })
}

/// # Safety
/// `p` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn abc_problem_free(p: *mut AbcProblem) {
    free(p)
}

/// Centralized solution; `x_star` receives `d` values. `residual` may be NULL.
///
/// # Safety
/// `p` must be a live problem handle; `x_star` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn abc_oracle_solve(
    p: *const AbcProblem,
    tol: f64,
    max_iters: usize,
    x_star: *mut f64,
    len: usize,
    residual: *mut f64,
) -> AbcStatus {
    guard(|| {
        let p = &get(p, "problem")?.0;
        check_out(x_star, "x_star")?;
        if len != p.d() {
            return Err(Failure::new(AbcStatus::Shape, format!("x_star holds {len} values, {} needed", p.d())));
        }
        let sol = oracle::solve_centralized(p, tol, max_iters)?;
        std::slice::from_raw_parts_mut(x_star, len).copy_from_slice(&sol.x_star);
        if !residual.is_null() {
            residual.write(sol.residual);
        }
        Ok(())
    })
}

// ------------------------------------------------------------ weights

/// Builds a preset by name (`extra`, `nids`, `augdgm`, `diging`,
/// `jakovetic_b0[:b]`, `jakovetic_bw[:b]`, `mansoori:K`, `alghunaim:α`).
/// `gamma` is read only by presets that depend on it; pass NaN otherwise.
///
/// # Safety
/// `name` must be a NUL-terminated string; `w` a live gossip handle; `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn abc_weights_preset(name: *const c_char, w: *const AbcGossip, gamma: f64, out: *mut *mut AbcWeights) -> AbcStatus {
    guard(|| {
        check_out(out, "out")?;
        let preset: Preset = text(name, "name")?.parse()?;
        let gamma = (!gamma.is_nan()).then_some(gamma);
        let mats = abc_core::AbcMatrices::preset(&preset, &get(w, "gossip")?.0, gamma)?;
        boxed(out, AbcWeights(mats))
    })
}

/// `A = B = F`, `C = I − F`, `D = I` for a filtered gossip matrix `F`.
///
/// # Safety
/// `f` must be a live gossip handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn abc_weights_from_filter(f: *const AbcGossip, out: *mut *mut AbcWeights) -> AbcStatus {
    guard(|| {
        check_out(out, "out")?;
        let f = &get(f, "filter")?.0;
        boxed(
            out,
            AbcWeights(abc_core::AbcMatrices::from_polynomial(f, format!("filter-K{}", f.hops()))?),
        )
    })
}

/// Copies `A`, `B` or `C` row-major (`len` must be `m·m`).
///
/// # Safety
/// `wts` must be a live weights handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn abc_weights_matrix(wts: *const AbcWeights, which: AbcWhich, buf: *mut f64, len: usize) -> AbcStatus {
    guard(|| {
        let w = &get(wts, "weights")?.0;
        let a = match which {
            AbcWhich::A => &w.a,
            AbcWhich::B => &w.b,
            AbcWhich::C => &w.c,
        };
        copy_matrix(a, buf, len)
    })
}

/// Checks an assumption set; `passed` receives the verdict. The clause-level
/// report is returned as JSON by [`abc_weights_validate_json`].
///
/// # Safety
/// `wts` must be a live weights handle; `passed` must be writable.
#[no_mangle]
pub unsafe extern "C" fn abc_weights_validate(
    wts: *const AbcWeights,
    gamma: f64,
    l: f64,
    mu: f64,
    mode: AbcAssumption,
    passed: *mut bool,
) -> AbcStatus {
    guard(|| {
        let w = &get(wts, "weights")?.0;
        put(passed, abc::validate(w, gamma, l, mu, assumption(mode)).passed(), "passed")
    })
}

/// Clause-level validation report as a newly allocated JSON string; free it
/// with [`abc_string_free`].
///
/// # Safety
/// `wts` must be a live weights handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn abc_weights_validate_json(
    wts: *const AbcWeights,
    gamma: f64,
    l: f64,
    mu: f64,
    mode: AbcAssumption,
    out: *mut *mut c_char,
) -> AbcStatus {
    guard(|| {
        check_out(out, "out")?;
        let w = &get(wts, "weights")?.0;
        let report = abc::validate(w, gamma, l, mu, assumption(mode));
        let json = serde_json::to_string(&report).map_err(Error::from)?;
        put(out, CString::new(json).map_err(|e| Failure::invalid(e.to_string()))?.into_raw(), "out")
    })
}

fn assumption(mode: AbcAssumption) -> AssumptionMode {
    match mode {
        AbcAssumption::LinearG0 => AssumptionMode::LinearG0,
        AbcAssumption::LinearG => AssumptionMode::LinearG,
        AbcAssumption::SublinearG0 => AssumptionMode::SublinearG0,
        AbcAssumption::SublinearProx => AssumptionMode::SublinearProx,
    }
}

/// # Safety
/// `wts` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn abc_weights_free(wts: *mut AbcWeights) {
    free(wts)
}

/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn abc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ------------------------------------------------------------ rates

/// `γ*(D) = 2λ_min(D)/(L + μλ_min(D))`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn abc_gamma_star(lambda_min_d: f64, l: f64, mu: f64, out: *mut f64) -> AbcStatus {
    guard(|| put(out, analysis::gamma_star(lambda_min_d, l, mu)?, "out"))
}

/// Linear-rate certificate for the given weights and stepsize.
///
/// # Safety
/// `wts` must be a live weights handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn abc_rate(wts: *const AbcWeights, gamma: f64, l: f64, mu: f64, mode: AbcRateMode, out: *mut AbcRate) -> AbcStatus {
    guard(|| {
        check_out(out, "out")?;
        let mode = match mode {
            AbcRateMode::G0 => RateMode::G0,
            AbcRateMode::G => RateMode::G,
        };
        let r = analysis::delta_linear(&get(wts, "weights")?.0, gamma, l, mu, mode)?;
        put(
            out,
            AbcRate {
                gamma: r.gamma,
                gamma_star: r.gamma_star,
                q_sq: r.q_sq,
                lambda_term: r.lambda_term,
                optimization_term: r.optimization_term,
                consensus_term: r.consensus_term,
                delta: r.delta,
                network_bound: r.binding == Binding::Network,
                feasible: r.feasible,
            },
            "out",
        )
    })
}

/// Round counts for plain and Chebyshev-accelerated consensus.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn abc_tradeoff(rho_com: f64, kappa: f64, out: *mut AbcTradeoff) -> AbcStatus {
    guard(|| {
        check_out(out, "out")?;
        let t = analysis::tradeoff(rho_com, kappa)?;
        put(
            out,
            AbcTradeoff {
                rho_com: t.rho_com,
                rho_opt: t.rho_opt,
                k_plain: t.k_plain,
                k_chebyshev: t.k_chebyshev,
                theta: t.theta,
                c: t.c,
                rho_c: t.rho_c,
            },
            "out",
        )
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn abc_predicted_marker(kappa: f64, lambda_second: f64, out: *mut usize) -> AbcStatus {
    guard(|| put(out, analysis::predicted_marker(kappa, lambda_second)?, "out"))
}

// ------------------------------------------------------------ runs

/// Runs the iteration from `Z⁰ = 0`. `x_star` (length `d`) may be NULL when
/// the stop metric is `FIXED_POINT`; with it, the error and merit columns
/// are recorded. A diverged run still returns a handle with `ABC_STATUS_OK`;
/// query [`abc_run_outcome`].
///
/// # Safety
/// Handles must be live; `stop` must point to a valid struct; `x_star` must
/// be NULL or hold `x_star_len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn abc_run(
    wts: *const AbcWeights,
    p: *const AbcProblem,
    gamma: f64,
    variant: AbcVariant,
    stop: *const AbcStop,
    x_star: *const f64,
    x_star_len: usize,
    out: *mut *mut AbcRun,
) -> AbcStatus {
    guard(|| {
        check_out(out, "out")?;
        let mats = &get(wts, "weights")?.0;
        let problem = &get(p, "problem")?.0;
        let stop = get(stop, "stop")?;
        let reference = if x_star.is_null() {
            None
        } else {
            if x_star_len != problem.d() {
                return Err(Failure::new(
                    AbcStatus::Shape,
                    format!("x_star holds {x_star_len} values, {} needed", problem.d()),
                ));
            }
            let xs = std::slice::from_raw_parts(x_star, x_star_len).to_vec();
            let mode = if problem.reg.is_zero() { MeritMode::G0 } else { MeritMode::G };
            Some(Reference::new(problem, xs, mode)?)
        };
        let trace = abc::run(RunConfig {
            variant: match variant {
                AbcVariant::Abc => Variant::Abc,
                AbcVariant::Eliminated => Variant::Eliminated,
                AbcVariant::SublinearProx => Variant::SublinearProx,
                AbcVariant::Underline => Variant::Underline,
            },
            stop: StopRule {
                max_iters: stop.max_iters,
                tol: stop.tol,
                metric: Some(match stop.metric {
                    AbcStopMetric::ErrOpt => StopMetric::ErrOpt,
                    AbcStopMetric::MeritAvg => StopMetric::MeritAvg,
                    AbcStopMetric::MeritLast => StopMetric::MeritLast,
                    AbcStopMetric::FixedPoint => StopMetric::FixedPoint,
                }),
                run_to_cap: stop.run_to_cap,
            },
            reference: reference.as_ref(),
            tracking: Tracking {
                objective: true,
                merit: reference.is_some(),
            },
            ..RunConfig::new(mats, problem, gamma)
        })?;
        boxed(out, AbcRun(trace))
    })
}

/// # Safety
/// `run` must be a live run handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn abc_run_outcome(run: *const AbcRun, out: *mut AbcOutcome) -> AbcStatus {
    guard(|| {
        let o = match get(run, "run")?.0.outcome {
            Outcome::Converged => AbcOutcome::Converged,
            Outcome::MaxIters => AbcOutcome::MaxIters,
            Outcome::Diverged { .. } => AbcOutcome::Diverged,
        };
        put(out, o, "out")
    })
}

/// Iteration at which the tolerance was first met, or -1.
///
/// # Safety
/// `run` must be NULL or a live run handle.
#[no_mangle]
pub unsafe extern "C" fn abc_run_hit(run: *const AbcRun) -> i64 {
    run.as_ref().and_then(|r| r.0.hit).map_or(-1, |k| k as i64)
}

/// Number of recorded rows (iteration 0 included), or 0 for NULL.
///
/// # Safety
/// `run` must be NULL or a live run handle.
#[no_mangle]
pub unsafe extern "C" fn abc_run_num_rows(run: *const AbcRun) -> usize {
    run.as_ref().map_or(0, |r| r.0.rows.len())
}

/// # Safety
/// `run` must be a live run handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn abc_run_row(run: *const AbcRun, i: usize, out: *mut AbcTraceRow) -> AbcStatus {
    guard(|| {
        let rows = &get(run, "run")?.0.rows;
        let r = rows
            .get(i)
            .ok_or_else(|| Failure::invalid(format!("row {i} out of range (0..{})", rows.len())))?;
        put(
            out,
            AbcTraceRow {
                k: r.k,
                grad_evals: r.grad_evals,
                comm_rounds: r.comm_rounds,
                err_opt: r.err_opt.unwrap_or(f64::NAN),
                err_consensus: r.err_consensus,
                merit: r.merit.unwrap_or(f64::NAN),
                objective: r.objective.unwrap_or(f64::NAN),
            },
            "out",
        )
    })
}

/// Final `X` row-major (`len` must be `m·d`).
///
/// # Safety
/// `run` must be a live run handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn abc_run_final_x(run: *const AbcRun, buf: *mut f64, len: usize) -> AbcStatus {
    guard(|| copy_matrix(&get(run, "run")?.0.final_state.x, buf, len))
}

/// # Safety
/// `run` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn abc_run_free(run: *mut AbcRun) {
    free(run)
}

// ------------------------------------------------------------ experiments

/// Runs an experiment from a JSON config and writes its CSVs and manifest to
/// `out_dir`. `diverged` may be NULL.
///
/// # Safety
/// Strings must be NUL-terminated; `diverged` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn abc_experiment_run(config_json: *const c_char, out_dir: *const c_char, diverged: *mut bool) -> AbcStatus {
    guard(|| {
        let cfg = ExperimentConfig::from_json(text(config_json, "config_json")?)?;
        let dir = text(out_dir, "out_dir")?;
        let artifacts = experiments::run_experiment(&cfg)?;
        artifacts.write(Path::new(dir))?;
        if !diverged.is_null() {
            diverged.write(artifacts.diverged);
        }
        Ok(())
    })
}
