//! Centralized reference solver for `min_x Σ_i f_i(x) + m·G(x)`, used to
//! measure distances to the solution.
//!
//! Accelerated proximal gradient with function-value restart gets close;
//! a Newton polish on the active coordinates then drives the optimality
//! residual to round-off.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::problem::ProblemInstance;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleSolution {
    pub x_star: Vec<f64>,
    /// `Σ_i f_i(x*) + m·G(x*)`.
    pub objective: f64,
    /// Distance from `0` to `Σ∇f_i(x*) + m·∂G(x*)`.
    pub residual: f64,
    pub iterations: usize,
}

/// Polish rounds alternating proximal-gradient refinement with Newton.
const POLISH_ROUNDS: usize = 6;
const REFINE_STEPS: usize = 500;
const NEWTON_STEPS: usize = 60;

struct Ctx<'a> {
    p: &'a ProblemInstance,
    step: f64,
    scale: f64,
}

impl Ctx<'_> {
    fn objective(&self, x: &[f64]) -> f64 {
        self.p.objective_value(x)
    }

    fn residual(&self, x: &[f64]) -> f64 {
        let g = self.p.centralized_gradient(x);
        self.p.reg.subgradient_residual(x, &g, self.scale)
    }

    /// `prox_{t·m·G}(x − t∇F(x))`.
    fn prox_grad(&self, x: &[f64], out: &mut [f64]) {
        let g = self.p.centralized_gradient(x);
        for j in 0..x.len() {
            out[j] = self.p.reg.prox_scalar(self.step * self.scale, x[j] - self.step * g[j]);
        }
    }
}

fn fista(ctx: &Ctx, x0: Vec<f64>, tol: f64, max_iters: usize) -> (Vec<f64>, usize) {
    let d = x0.len();
    let mut x = x0;
    let mut y = x.clone();
    let mut next = vec![0.0; d];
    let mut t = 1.0f64;
    let mut f_prev = ctx.objective(&x);
    for k in 1..=max_iters {
        ctx.prox_grad(&y, &mut next);
        let f = ctx.objective(&next);
        if f > f_prev {
            // Restart: drop the momentum and take a plain step from x.
            t = 1.0;
            ctx.prox_grad(&x, &mut next);
            y.copy_from_slice(&next);
            f_prev = ctx.objective(&next);
            std::mem::swap(&mut x, &mut next);
        } else {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            for j in 0..d {
                y[j] = next[j] + beta * (next[j] - x[j]);
            }
            t = t_next;
            f_prev = f;
            std::mem::swap(&mut x, &mut next);
        }
        if k % 50 == 0 && ctx.residual(&x) <= tol {
            return (x, k);
        }
    }
    (x, max_iters)
}

/// Newton steps on the coordinates that are free: all of them for a smooth
/// problem, the nonzeros otherwise. Signs of the free coordinates are kept
/// fixed, which makes the objective smooth on that face.
fn newton_polish(ctx: &Ctx, mut x: Vec<f64>) -> Vec<f64> {
    let w = ctx.scale * ctx.p.reg.weight();
    let mut best = ctx.residual(&x);
    for _ in 0..NEWTON_STEPS {
        let free: Vec<usize> = (0..x.len()).filter(|&j| w == 0.0 || x[j] != 0.0).collect();
        if free.is_empty() {
            break;
        }
        let g = ctx.p.centralized_gradient(&x);
        let h = ctx.p.centralized_hessian(&x);
        let n = free.len();
        let hs = Mat::from_fn(n, n, |a, b| h[(free[a], free[b])]);
        let gs = DVector::from_fn(n, |a, _| g[free[a]] + w * x[free[a]].signum());
        let svd = hs.svd(true, true);
        let cut = svd.singular_values.max() * 1e-13;
        let Ok(dir) = svd.solve(&gs, cut) else { break };
        let f0 = ctx.objective(&x);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let mut cand = x.clone();
            let mut flips = false;
            for (a, &j) in free.iter().enumerate() {
                cand[j] = x[j] - alpha * dir[a];
                if w != 0.0 && cand[j].signum() != x[j].signum() {
                    flips = true;
                }
            }
            if !flips && ctx.objective(&cand) <= f0 + 1e-14 * f0.abs().max(1.0) {
                accepted = Some(cand);
                break;
            }
            alpha *= 0.5;
        }
        let Some(cand) = accepted else { break };
        let r = ctx.residual(&cand);
        if r < best {
            best = r;
            x = cand;
        } else {
            break;
        }
    }
    x
}

pub fn solve_centralized(problem: &ProblemInstance, tol: f64, max_iters: usize) -> Result<OracleSolution> {
    let d = problem.d();
    let l_bar = problem.centralized_smoothness()?;
    if !(l_bar > 0.0 && l_bar.is_finite()) {
        return Err(Error::Oracle(format!("smoothness constant {l_bar} is unusable")));
    }
    let ctx = Ctx {
        p: problem,
        step: 1.0 / l_bar,
        scale: problem.m() as f64,
    };
    let zero = vec![0.0; d];
    let grad_scale = linalg_norm(&problem.centralized_gradient(&zero)).max(1.0);
    let target = tol * grad_scale;

    let (mut x, mut iterations) = fista(&ctx, zero, target, max_iters);
    for _ in 0..POLISH_ROUNDS {
        x = newton_polish(&ctx, x);
        if ctx.residual(&x) <= target {
            break;
        }
        let mut next = vec![0.0; d];
        for _ in 0..REFINE_STEPS {
            ctx.prox_grad(&x, &mut next);
            std::mem::swap(&mut x, &mut next);
        }
        iterations += REFINE_STEPS;
    }
    let residual = ctx.residual(&x);
    if !(residual <= 100.0 * target.max(1e-14)) {
        return Err(Error::Oracle(format!(
            "reference solver stalled at residual {residual:.3e} (target {target:.3e}) after {iterations} iterations"
        )));
    }
    log::debug!("oracle: residual {residual:.3e} after {iterations} iterations");
    Ok(OracleSolution {
        objective: ctx.objective(&x),
        x_star: x,
        residual,
        iterations,
    })
}

fn linalg_norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    hash: String,
    tol: f64,
    solution: OracleSolution,
}

pub fn cache_path(dir: &Path, problem: &ProblemInstance) -> PathBuf {
    dir.join(format!("oracle-{}.json", problem.content_hash()))
}

/// [`solve_centralized`] memoized on disk by the instance's content hash.
pub fn cached_solve(problem: &ProblemInstance, dir: &Path, tol: f64, max_iters: usize) -> Result<OracleSolution> {
    let path = cache_path(dir, problem);
    let hash = problem.content_hash();
    if let Ok(text) = fs::read_to_string(&path) {
        match serde_json::from_str::<CacheEntry>(&text) {
            Ok(e) if e.hash == hash && e.tol <= tol && e.solution.x_star.len() == problem.d() => {
                log::debug!("oracle cache hit {}", path.display());
                return Ok(e.solution);
            }
            _ => log::warn!("ignoring stale oracle cache {}", path.display()),
        }
    }
    let solution = solve_centralized(problem, tol, max_iters)?;
    fs::create_dir_all(dir)?;
    let entry = CacheEntry { hash, tol, solution };
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_string(&entry)?)?;
    fs::rename(&tmp, &path)?;
    Ok(entry.solution)
}

/// Hessian-free check used by tests: `‖Σ∇f_i(x)‖` at a consensual point.
pub fn stacked_residual(problem: &ProblemInstance, x: &Mat) -> Result<f64> {
    let g = problem.stacked_gradient(x)?;
    let m = x.nrows();
    Ok((linalg::consensus_projector(m) * g).norm())
}
