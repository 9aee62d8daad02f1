//! Rate predictors, stepsize rules, consensus-round tradeoffs, merit
//! functions and the operator-splitting checks.

use serde::Serialize;

use crate::abc::{self, AbcMatrices, AssumptionMode};
use crate::error::{invalid, Error, Result};
use crate::linalg::{self, Mat};
use crate::problem::ProblemInstance;

/// `γ*(D) = 2λ_min(D) / (L + μ λ_min(D))`.
pub fn gamma_star(d_lambda_min: f64, l: f64, mu: f64) -> Result<f64> {
    if !(d_lambda_min > 0.0 && d_lambda_min <= 1.0 + abc::SPECTRAL_TOL) {
        return Err(invalid(format!("λ_min(D) = {d_lambda_min} must lie in (0, 1]")));
    }
    if mu <= 0.0 {
        return Err(invalid("μ = 0: use the sublinear stepsize instead"));
    }
    if l < mu {
        return Err(invalid(format!("L = {l} must be at least μ = {mu}")));
    }
    Ok(2.0 * d_lambda_min / (l + mu * d_lambda_min))
}

/// Squared contraction factor of `D − γ∇f`: `1 − 2γL/(κ + λ_min(D))`.
pub fn q_sq(d_lambda_min: f64, gamma: f64, l: f64, mu: f64) -> Result<f64> {
    let gs = gamma_star(d_lambda_min, l, mu)?;
    if !(gamma > 0.0 && gamma <= gs * (1.0 + 1e-12)) {
        return Err(invalid(format!("stepsize {gamma} outside (0, γ* = {gs}]")));
    }
    let kappa = l / mu;
    Ok((1.0 - 2.0 * gamma * l / (kappa + d_lambda_min)).max(0.0))
}

/// `((κ−1)/(κ+1))²`, the best squared factor of the optimization part.
pub fn rho_opt_sq(kappa: f64) -> f64 {
    ((kappa - 1.0) / (kappa + 1.0)).powi(2)
}

/// `max(((κ−1)/(κ+1))², 1 − λ₂(C))`.
pub fn delta_star(kappa: f64, lambda2_c: f64) -> f64 {
    rho_opt_sq(kappa).max(1.0 - lambda2_c)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RateMode {
    /// `G = 0`: uses `λ_max(AB(I−C)^{−1})`.
    G0,
    /// General `G`: uses `λ_max(B²(I−C)^{−1})`.
    G,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Binding {
    Network,
    Optimization,
}

#[derive(Clone, Debug, Serialize)]
pub struct RateReport {
    pub gamma: f64,
    pub gamma_star: f64,
    pub q_sq: f64,
    /// `λ_max((I−C)^{−1/2} M (I−C)^{−1/2})`.
    pub lambda_term: f64,
    pub optimization_term: f64,
    /// `1 − λ₂(C)`.
    pub consensus_term: f64,
    pub delta: f64,
    pub binding: Binding,
    /// The assumption set validated and `δ < 1`.
    pub feasible: bool,
    pub failed_clauses: Vec<&'static str>,
}

/// Second-smallest eigenvalue of a symmetric matrix.
pub fn lambda2(c: &Mat) -> Result<f64> {
    linalg::lambda_2(&((c + c.transpose()) * 0.5))
}

/// `λ_max((I−C)^{−1/2} M (I−C)^{−1/2})` with `M = AB` or `B²`.
pub fn congruence_lambda_max(mats: &AbcMatrices, mode: RateMode) -> Result<f64> {
    let m = mats.m();
    let i_c = Mat::identity(m, m) - &mats.c;
    let inv_sqrt = linalg::inv_sqrt(&((&i_c + i_c.transpose()) * 0.5))?;
    let mm = match mode {
        RateMode::G0 => &mats.a * &mats.b,
        RateMode::G => &mats.b * &mats.b,
    };
    let mm = (&mm + mm.transpose()) * 0.5;
    linalg::lambda_max(&(&inv_sqrt * mm * &inv_sqrt))
}

pub fn delta_linear(mats: &AbcMatrices, gamma: f64, l: f64, mu: f64, mode: RateMode) -> Result<RateReport> {
    let dmin = mats.lambda_min_d()?;
    let gs = gamma_star(dmin, l, mu)?;
    let q = q_sq(dmin, gamma, l, mu)?;
    let lambda_term = congruence_lambda_max(mats, mode)?;
    let consensus_term = if mats.m() == 1 { 0.0 } else { 1.0 - lambda2(&mats.c)? };
    let optimization_term = q * lambda_term;
    let delta = optimization_term.max(consensus_term);
    let report = abc::validate(
        mats,
        gamma,
        l,
        mu,
        match mode {
            RateMode::G0 => AssumptionMode::LinearG0,
            RateMode::G => AssumptionMode::LinearG,
        },
    );
    Ok(RateReport {
        gamma,
        gamma_star: gs,
        q_sq: q,
        lambda_term,
        optimization_term,
        consensus_term,
        delta,
        binding: if consensus_term >= optimization_term {
            Binding::Network
        } else {
            Binding::Optimization
        },
        feasible: report.passed() && delta < 1.0,
        failed_clauses: report.failures(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TradeoffReport {
    /// The per-round mixing factor the counts are computed for.
    pub rho_com: f64,
    pub rho_opt: f64,
    pub k_plain: usize,
    pub k_chebyshev: usize,
    pub theta: f64,
    pub c: f64,
    /// Chebyshev mixing factor at `k_chebyshev`.
    pub rho_c: f64,
    /// Set for degenerate inputs where the counts carry no information.
    pub note: Option<String>,
}

/// `2c^K / (1 + c^{2K})`.
pub fn rho_c(c: f64, k: usize) -> f64 {
    let ck = c.powi(k as i32);
    2.0 * ck / (1.0 + ck * ck)
}

/// `θ = (1+ρ)/(1−ρ)` and `c = (√θ − 1)/(√θ + 1)`.
pub fn chebyshev_constants(rho: f64) -> (f64, f64) {
    let theta = (1.0 + rho) / (1.0 - rho);
    let s = theta.sqrt();
    (theta, (s - 1.0) / (s + 1.0))
}

/// Smallest `K` with `ρ^K ≤ ρ_opt²` (plain powers) and with
/// `2c^K/(1+c^{2K}) ≤ ρ_opt²` (Chebyshev), i.e.
/// `K ≥ ln(1/s + √(1/s² − 1)) / ln(1/c)` for `s = ρ_opt²`.
pub fn tradeoff(rho_com: f64, kappa: f64) -> Result<TradeoffReport> {
    if !(0.0..1.0).contains(&rho_com) {
        return Err(invalid(format!("ρ_com = {rho_com} must lie in [0, 1)")));
    }
    if !(kappa >= 1.0) {
        return Err(invalid(format!("κ = {kappa} must be at least 1")));
    }
    let rho_opt = (kappa - 1.0) / (kappa + 1.0);
    let s = rho_opt * rho_opt;
    let (theta, c) = chebyshev_constants(rho_com);
    let base = TradeoffReport {
        rho_com,
        rho_opt,
        k_plain: 1,
        k_chebyshev: 1,
        theta,
        c,
        rho_c: rho_c(c, 1),
        note: None,
    };
    if rho_com == 0.0 {
        return Ok(TradeoffReport {
            rho_c: 0.0,
            note: Some("exact consensus in one round".into()),
            ..base
        });
    }
    if s == 0.0 {
        return Ok(TradeoffReport {
            note: Some("κ = 1: the optimization term vanishes and no finite K balances it; any K works".into()),
            ..base
        });
    }
    let k_plain = (s.ln() / rho_com.ln()).ceil().max(1.0) as usize;
    let k_chebyshev = ((1.0 / s + (1.0 / (s * s) - 1.0).sqrt()).ln() / (1.0 / c).ln()).ceil().max(1.0) as usize;
    Ok(TradeoffReport {
        k_plain,
        k_chebyshev,
        rho_c: rho_c(c, k_chebyshev),
        ..base
    })
}

/// `⌈2 ln((κ−1)/(κ+1)) / ln((1 + λ_{m−1}(W))/2)⌉`: the round count at which
/// the network term of the rate stops binding for `A = B = ((I+W)/2)^K`.
pub fn predicted_marker(kappa: f64, lambda_second: f64) -> Result<usize> {
    if !(kappa > 1.0) {
        return Err(invalid("the marker needs κ > 1"));
    }
    if !(lambda_second > -1.0 && lambda_second < 1.0) {
        return Err(invalid(format!("λ_(m−1)(W) = {lambda_second} must lie in (−1, 1)")));
    }
    let v = 2.0 * ((kappa - 1.0) / (kappa + 1.0)).ln() / ((1.0 + lambda_second) / 2.0).ln();
    Ok(v.ceil().max(1.0) as usize)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeritMode {
    /// `max{‖(I−J)X‖‖∇f(X*)‖, |f(X) − f(X*)|}`.
    G0,
    /// `max{‖(I−J)X‖‖Y*‖, |(f+g)(X) − (f+g)(X*)|}`, `Y* = −(∇f(X*) + 1ξ*ᵀ)`.
    G,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeritValue {
    pub consensus: f64,
    pub objective: f64,
    pub value: f64,
}

/// Everything the error metrics need about the solution.
#[derive(Clone, Debug, Serialize)]
pub struct Reference {
    pub x_star: Vec<f64>,
    pub mode: MeritMode,
    pub y_star_norm: f64,
    /// `‖∇f(X*)‖`.
    pub grad_star_norm: f64,
    /// `f(X*)` in mode `G0`, `(f+g)(X*)` in mode `G`.
    pub objective_star: f64,
    pub xi_star: Vec<f64>,
}

/// Slack for `ξ* ∈ ∂G(x*)`.
pub const SUBGRADIENT_SLACK: f64 = 1e-6;

impl Reference {
    pub fn new(problem: &ProblemInstance, x_star: Vec<f64>, mode: MeritMode) -> Result<Self> {
        let (m, d) = (problem.m(), problem.d());
        if x_star.len() != d {
            return Err(invalid("oracle dimension mismatch"));
        }
        let xs = Mat::from_fn(m, d, |_, j| x_star[j]);
        let grad = problem.stacked_gradient(&xs)?;
        let grad_star_norm = grad.norm();
        let mf = m as f64;
        let xi: Vec<f64> = (0..d).map(|j| -grad.column(j).sum() / mf).collect();
        let (y_star_norm, objective_star) = match mode {
            MeritMode::G0 => (grad_star_norm, problem.smooth_value(&x_star)),
            MeritMode::G => {
                let w = problem.reg.weight();
                for (j, (&x, &g)) in x_star.iter().zip(&xi).enumerate() {
                    let ok = if x != 0.0 {
                        (g - w * x.signum()).abs() <= SUBGRADIENT_SLACK
                    } else {
                        g.abs() <= w + SUBGRADIENT_SLACK
                    };
                    if !ok {
                        return Err(Error::Oracle(format!(
                            "ξ*_{j} = {g} is not a subgradient of G at x*_{j} = {x}; the oracle is inaccurate"
                        )));
                    }
                }
                let y = Mat::from_fn(m, d, |i, j| -(grad[(i, j)] + xi[j]));
                (y.norm(), problem.objective_value(&x_star))
            }
        };
        Ok(Self {
            x_star,
            mode,
            y_star_norm,
            grad_star_norm,
            objective_star,
            xi_star: xi,
        })
    }

    pub fn x_star_matrix(&self, m: usize) -> Mat {
        Mat::from_fn(m, self.x_star.len(), |_, j| self.x_star[j])
    }

    pub fn merit(&self, problem: &ProblemInstance, x: &Mat) -> MeritValue {
        let m = x.nrows();
        let centered = x - linalg::consensus_projector(m) * x;
        let consensus = centered.norm() * self.y_star_norm;
        let value_x = match self.mode {
            MeritMode::G0 => {
                let d = problem.d();
                let mut row = vec![0.0; d];
                let mut total = 0.0;
                for (i, a) in problem.smooth.agents().iter().enumerate() {
                    for j in 0..d {
                        row[j] = x[(i, j)];
                    }
                    total += a.value(&row);
                }
                total
            }
            MeritMode::G => problem.stacked_objective(x).unwrap_or(f64::NAN),
        };
        let objective = (value_x - self.objective_star).abs();
        MeritValue {
            consensus,
            objective,
            value: consensus.max(objective),
        }
    }
}

pub fn merit(x: &Mat, problem: &ProblemInstance, x_star: &[f64], mode: MeritMode) -> Result<MeritValue> {
    Ok(Reference::new(problem, x_star.to_vec(), mode)?.merit(problem, x))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SublinearMode {
    /// Three-line iteration with `G = 0`; network factor `ρ(B−J)/λ₂(C)`.
    G0,
    /// Prox-before-gradient variant; network factor `1/λ₂(C)`.
    Prox,
}

struct SublinearTerms {
    lmin_d: f64,
    dist_d: f64,
    grad_norm: f64,
    net: f64,
}

fn sublinear_terms(mats: &AbcMatrices, problem: &ProblemInstance, x0: &Mat, x_star: &[f64], mode: SublinearMode) -> Result<SublinearTerms> {
    let d = mats.d_or_err()?;
    let m = problem.m();
    let xs = Mat::from_fn(m, problem.d(), |_, j| x_star[j]);
    let diff = x0 - &xs;
    let dist_d = linalg::weighted_sq_norm(&diff, d).max(0.0).sqrt();
    let grad_norm = problem.stacked_gradient(&xs)?.norm();
    let l2 = if m == 1 { f64::INFINITY } else { lambda2(&mats.c)? };
    let net = match mode {
        SublinearMode::G0 => {
            let rb = linalg::spectral_radius(&(&mats.b - linalg::consensus_projector(m)))?;
            rb / l2
        }
        SublinearMode::Prox => 1.0 / l2,
    };
    Ok(SublinearTerms {
        lmin_d: linalg::lambda_min(d)?,
        dist_d,
        grad_norm,
        net,
    })
}

/// `min(λ_min(D)/L, ½ √(1/net) ‖X⁰−X*‖_D / ‖∇f(X*)‖)`.
pub fn sublinear_stepsize(mats: &AbcMatrices, problem: &ProblemInstance, x0: &Mat, x_star: &[f64], mode: SublinearMode) -> Result<f64> {
    let t = sublinear_terms(mats, problem, x0, x_star, mode)?;
    let first = t.lmin_d / problem.smooth.l();
    if t.grad_norm == 0.0 || t.net == 0.0 {
        return Ok(first);
    }
    let second = 0.5 * (1.0 / t.net).sqrt() * t.dist_d / t.grad_norm;
    Ok(first.min(second))
}

/// `(1/k)((1/2γ)‖X⁰−X*‖²_D + 2γ·net·‖∇f(X*)‖²)`.
pub fn sublinear_bound(
    mats: &AbcMatrices,
    problem: &ProblemInstance,
    x0: &Mat,
    x_star: &[f64],
    gamma: f64,
    k: usize,
    mode: SublinearMode,
) -> Result<f64> {
    if k == 0 {
        return Err(invalid("the bound starts at k = 1"));
    }
    let t = sublinear_terms(mats, problem, x0, x_star, mode)?;
    let cap = t.lmin_d / problem.smooth.l();
    if !(gamma > 0.0 && gamma <= cap * (1.0 + 1e-12)) {
        return Err(invalid(format!("stepsize {gamma} outside (0, λ_min(D)/L = {cap}]")));
    }
    let net_term = if t.grad_norm == 0.0 {
        0.0
    } else {
        2.0 * gamma * t.net * t.grad_norm.powi(2)
    };
    Ok((t.dist_d.powi(2) / (2.0 * gamma) + net_term) / k as f64)
}

/// Runs the three-line iteration and the transformed dynamics
/// `Z̃⁺ = T(Z̃) − √C V`, `V⁺ = √C T(Z̃) + (I−C)V` with
/// `T = (D − γ∇f)∘prox∘B`, `Z̃¹ = (D − γ∇f)(X⁰)`, `V¹ = √C Z̃¹`, and returns
/// the largest deviation of `Z^k − BZ̃^k` and `Y^k − B√C V^k` over
/// `k = 1..=iters`.
pub fn verify_splitting(mats: &AbcMatrices, problem: &ProblemInstance, gamma: f64, iters: usize) -> Result<f64> {
    let d = mats.d_or_err()?.clone();
    let m = mats.m();
    if linalg::sym_eigen(&((&mats.b + mats.b.transpose()) * 0.5))?
        .values
        .iter()
        .any(|v| v.abs() < abc::SPECTRAL_TOL)
    {
        return Err(Error::Singular("B must be invertible".into()));
    }
    let sqrt_c = linalg::psd_sqrt(&((&mats.c + mats.c.transpose()) * 0.5), abc::SPECTRAL_TOL)?;
    let i_c = Mat::identity(m, m) - &mats.c;

    let mut state = abc::AbcState::new(mats, problem, gamma, abc::Variant::Abc, None)?;
    let forward = |x: &Mat| -> Result<Mat> { Ok(&d * x - problem.stacked_gradient(x)? * gamma) };
    let t_op = |zt: &Mat| -> Result<Mat> { forward(&problem.reg.prox_rows(gamma, &(&mats.b * zt))) };

    let mut zt = forward(&state.x)?;
    let mut v = &sqrt_c * &zt;
    let mut worst: f64 = 0.0;
    for k in 1..=iters {
        abc::step(&mut state, mats, problem, gamma)?;
        let dz = (&state.z - &mats.b * &zt).amax();
        let dy = (&state.y - &mats.b * &sqrt_c * &v).amax();
        worst = worst.max(dz).max(dy);
        if k < iters {
            let tz = t_op(&zt)?;
            let next_z = &tz - &sqrt_c * &v;
            v = &sqrt_c * &tz + &i_c * &v;
            zt = next_z;
        }
    }
    Ok(worst)
}

/// `|‖T_C U − T_C U'‖²_Λ − ‖U − U'‖²_V|` with `T_C = [[I, −√C], [√C, I−C]]`,
/// `Λ = diag(I−C, I)`, `V = diag(I, I−C)`. Each block is `m×d`.
pub fn isometry_gap(c: &Mat, u: (&Mat, &Mat), w: (&Mat, &Mat)) -> Result<f64> {
    let m = c.nrows();
    let s = linalg::psd_sqrt(&((c + c.transpose()) * 0.5), abc::SPECTRAL_TOL)?;
    let i_c = Mat::identity(m, m) - c;
    let a = u.0 - w.0;
    let b = u.1 - w.1;
    let top = &a - &s * &b;
    let bottom = &s * &a + &i_c * &b;
    let lhs = linalg::weighted_sq_norm(&top, &i_c) + bottom.norm_squared();
    let rhs = a.norm_squared() + linalg::weighted_sq_norm(&b, &i_c);
    Ok((lhs - rhs).abs() / rhs.max(1.0))
}

/// Returns `(‖(D−γ∇f)X − (D−γ∇f)Y‖², q_sq ‖X−Y‖²_D)`.
pub fn forward_contraction(problem: &ProblemInstance, d: &Mat, gamma: f64, x: &Mat, y: &Mat) -> Result<(f64, f64)> {
    let l = problem.smooth.l();
    let mu = problem.smooth.mu();
    let q = q_sq(linalg::lambda_min(d)?, gamma, l, mu)?;
    let fx = d * x - problem.stacked_gradient(x)? * gamma;
    let fy = d * y - problem.stacked_gradient(y)? * gamma;
    let diff = x - y;
    Ok(((fx - fy).norm_squared(), q * linalg::weighted_sq_norm(&diff, d)))
}

#[derive(Clone, Debug, Serialize)]
pub struct KappaComparison {
    /// `max_i L_i / min_i μ_i`.
    pub kappa_local: f64,
    /// Condition number of the Hessian of `Σ f_i` at `x`.
    pub kappa_global: f64,
}

pub fn kappa_comparison(problem: &ProblemInstance, x: &[f64]) -> Result<KappaComparison> {
    let e = linalg::sym_eigen(&problem.centralized_hessian(x))?;
    Ok(KappaComparison {
        kappa_local: problem.smooth.kappa(),
        kappa_global: if e.min() > 0.0 { e.max() / e.min() } else { f64::INFINITY },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abc::Preset;
    use crate::gossip::GossipMatrix;
    use crate::graph::{Graph, NamedGraph};
    use crate::problem::{Regularizer, SmoothLoss, SmoothSum};
    use crate::rng::SeededRng;
    use nalgebra::DVector;
    use proptest::prelude::*;

    fn quad_problem(m: usize, d: usize, seed: u64, reg: Regularizer) -> ProblemInstance {
        let mut rng = SeededRng::new(seed);
        let agents = (0..m)
            .map(|_| {
                let r = Mat::from_fn(d, d, |_, _| rng.normal());
                let q = r.transpose() * &r / d as f64 + Mat::identity(d, d) * 0.3;
                SmoothLoss::Quadratic {
                    q,
                    b: DVector::from_fn(d, |_, _| rng.normal()),
                    c: 0.0,
                }
            })
            .collect();
        ProblemInstance::new(SmoothSum::new(agents).unwrap(), reg).unwrap()
    }

    fn ring(m: usize) -> GossipMatrix {
        GossipMatrix::metropolis(&Graph::named(NamedGraph::Ring, m).unwrap()).unwrap()
    }

    #[test]
    fn gamma_star_examples() {
        assert!((gamma_star(1.0, 3.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((gamma_star(1.0, 2.0, 2.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((gamma_star(1.0, 7.0, 0.5).unwrap() - 2.0 / 7.5).abs() < 1e-15);
        assert!(gamma_star(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn q_sq_examples() {
        let g = gamma_star(1.0, 10.0, 1.0).unwrap();
        assert!((q_sq(1.0, g, 10.0, 1.0).unwrap() - (9.0f64 / 11.0).powi(2)).abs() < 1e-12);
        assert!(q_sq(1.0, 1.0, 1.0, 1.0).unwrap().abs() < 1e-15);
        assert!(q_sq(1.0, 2.0 * g, 10.0, 1.0).is_err());
    }

    #[test]
    fn tradeoff_examples() {
        let t = tradeoff(0.5, 10.0).unwrap();
        assert!((t.rho_opt.powi(2) - 81.0 / 121.0).abs() < 1e-15);
        assert_eq!(t.k_plain, 1);
        let t = tradeoff(0.9, 10.0).unwrap();
        assert!((t.theta - 19.0).abs() < 1e-12);
        assert!((t.c - (19f64.sqrt() - 1.0) / (19f64.sqrt() + 1.0)).abs() < 1e-15);
        assert!((t.c - 0.6268).abs() < 1e-4);
        let t = tradeoff(0.0, 10.0).unwrap();
        assert_eq!(t.k_plain, 1);
        assert_eq!(t.rho_c, 0.0);
        assert!(tradeoff(0.5, 1.0).unwrap().note.is_some());
        assert!(tradeoff(1.0, 10.0).is_err());
    }

    #[test]
    fn marker_examples() {
        // 2 ln(9/11) / ln(0.75) = 1.395…
        assert_eq!(predicted_marker(10.0, 0.5).unwrap(), 2);
        assert_eq!(predicted_marker(10.0, 1e-9).unwrap(), 1);
        assert!(predicted_marker(1.0, 0.5).is_err());
        // Small κ pushes the marker up.
        assert!(predicted_marker(1.01, 0.9).unwrap() > 100);
    }

    #[test]
    fn nids_delta_is_delta_star() {
        let p = quad_problem(6, 3, 2, Regularizer::Zero);
        let mats = AbcMatrices::preset(&Preset::NidsExactDiffusion, &ring(6), None).unwrap();
        let (l, mu) = (p.smooth.l(), p.smooth.mu());
        let r = delta_linear(&mats, 2.0 / (l + mu), l, mu, RateMode::G).unwrap();
        let expect = delta_star(l / mu, lambda2(&mats.c).unwrap());
        assert!((r.delta - expect).abs() < 1e-10, "{} vs {expect}", r.delta);
        assert!(r.feasible);
        // B² = W̃² ⪯ W̃ = I − C so the congruence term equals 1.
        assert!((r.lambda_term - 1.0).abs() < 1e-10);
    }

    #[test]
    fn single_agent_delta() {
        let one = Mat::identity(1, 1);
        let mats = AbcMatrices::new(one.clone(), one.clone(), Mat::zeros(1, 1), Some(one), 0, "single").unwrap();
        let r = delta_linear(&mats, 2.0 / 11.0, 10.0, 1.0, RateMode::G).unwrap();
        assert!((r.delta - (9.0f64 / 11.0).powi(2)).abs() < 1e-12);
        assert_eq!(r.binding, Binding::Optimization);
    }

    /// Largest eigenvalue of a symmetric matrix by power iteration on the
    /// shifted matrix `S + σI` (positive definite for σ large enough).
    fn power_iteration_lmax(s: &Mat) -> f64 {
        let n = s.nrows();
        let shift = s.abs().row_sum().max() + 1.0;
        let shifted = s + Mat::identity(n, n) * shift;
        let mut v = DVector::from_fn(n, |i, _| 1.0 + i as f64 * 0.1);
        let mut lambda = 0.0;
        for _ in 0..200_000 {
            let w = &shifted * &v;
            let nl = w.norm();
            v = w / nl;
            if (nl - lambda).abs() < 1e-15 * nl {
                lambda = nl;
                break;
            }
            lambda = nl;
        }
        lambda - shift
    }

    #[test]
    fn extra_congruence_matches_power_iteration() {
        let mats = AbcMatrices::preset(&Preset::Extra, &ring(7), None).unwrap();
        let m = 7;
        // (I−C)^{-1/2} AB (I−C)^{-1/2} built through an independent route:
        // nalgebra's eigendecomposition for the inverse square root.
        let i_c = Mat::identity(m, m) - &mats.c;
        let e = nalgebra::SymmetricEigen::new(i_c);
        let inv_sqrt = &e.eigenvectors * Mat::from_diagonal(&e.eigenvalues.map(|v| 1.0 / v.sqrt())) * e.eigenvectors.transpose();
        let ab = &mats.a * &mats.b;
        let s = &inv_sqrt * ab * &inv_sqrt;
        let s = (&s + s.transpose()) * 0.5;
        let oracle = power_iteration_lmax(&s);
        let ours = congruence_lambda_max(&mats, RateMode::G0).unwrap();
        assert!((ours - oracle).abs() < 1e-10, "{ours} vs {oracle}");
    }

    #[test]
    fn merit_zero_at_solution_and_matches_definition() {
        let p = quad_problem(5, 3, 4, Regularizer::L1 { lambda: 0.05 });
        let sol = crate::oracle::solve_centralized(&p, 1e-12, 100_000).unwrap();
        let r = Reference::new(&p, sol.x_star.clone(), MeritMode::G).unwrap();
        let xs = r.x_star_matrix(5);
        assert!(r.merit(&p, &xs).value < 1e-12);

        let mut rng = SeededRng::new(77);
        let x = Mat::from_fn(5, 3, |_, _| rng.normal());
        // Second implementation from the definitions.
        let mean: Vec<f64> = (0..3).map(|j| (0..5).map(|i| x[(i, j)]).sum::<f64>() / 5.0).collect();
        let cons: f64 = (0..5)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .map(|(i, j)| (x[(i, j)] - mean[j]).powi(2))
            .sum::<f64>()
            .sqrt();
        let g: Vec<Vec<f64>> = p.smooth.agents().iter().map(|a| a.gradient(&sol.x_star)).collect();
        let xi: Vec<f64> = (0..3).map(|j| -g.iter().map(|gi| gi[j]).sum::<f64>() / 5.0).collect();
        let ys: f64 = g
            .iter()
            .flat_map(|gi| gi.iter().zip(&xi).map(|(a, b)| (a + b).powi(2)))
            .sum::<f64>()
            .sqrt();
        let fx: f64 = (0..5)
            .map(|i| {
                let row: Vec<f64> = (0..3).map(|j| x[(i, j)]).collect();
                p.smooth.agents()[i].value(&row) + p.reg.value(&row)
            })
            .sum();
        let fs = p.objective_value(&sol.x_star);
        let expect = (cons * ys).max((fx - fs).abs());
        assert!((r.merit(&p, &x).value - expect).abs() < 1e-10 * expect.max(1.0));
    }

    #[test]
    fn merit_rejects_wrong_solution() {
        let p = quad_problem(4, 2, 4, Regularizer::L1 { lambda: 0.01 });
        assert!(Reference::new(&p, vec![5.0, -5.0], MeritMode::G).is_err());
    }

    #[test]
    fn sublinear_stepsize_branches() {
        // Identical agents share the minimizer: ∇f(X*) = 0.
        let agents = (0..4)
            .map(|_| SmoothLoss::Quadratic {
                q: Mat::identity(2, 2) * 2.0,
                b: DVector::from_element(2, 2.0),
                c: 0.0,
            })
            .collect();
        let p = ProblemInstance::new(SmoothSum::new(agents).unwrap(), Regularizer::Zero).unwrap();
        let mats = AbcMatrices::preset(&Preset::NidsExactDiffusion, &ring(4), None).unwrap();
        let x0 = Mat::zeros(4, 2);
        let g = sublinear_stepsize(&mats, &p, &x0, &[1.0, 1.0], SublinearMode::G0).unwrap();
        assert!((g - 0.5).abs() < 1e-15);
        assert_eq!(
            sublinear_bound(&mats, &p, &Mat::from_element(4, 2, 1.0), &[1.0, 1.0], 0.5, 3, SublinearMode::G0).unwrap(),
            0.0
        );
    }

    #[test]
    fn sublinear_bound_scales_as_one_over_k() {
        let p = quad_problem(5, 2, 8, Regularizer::Zero);
        let mats = AbcMatrices::preset(&Preset::NidsExactDiffusion, &ring(5), None).unwrap();
        let x0 = Mat::zeros(5, 2);
        let xs = [0.3, -0.2];
        let g = sublinear_stepsize(&mats, &p, &x0, &xs, SublinearMode::G0).unwrap();
        let b1 = sublinear_bound(&mats, &p, &x0, &xs, g, 10, SublinearMode::G0).unwrap();
        let b2 = sublinear_bound(&mats, &p, &x0, &xs, g, 20, SublinearMode::G0).unwrap();
        assert!((b1 - 2.0 * b2).abs() < 1e-12 * b1);
        assert!(sublinear_bound(&mats, &p, &x0, &xs, 10.0 * g + 1.0, 1, SublinearMode::G0).is_err());
    }

    #[test]
    fn well_connected_sublinear_step_is_one_over_l() {
        // B = J: ρ(B − J) = 0 and the network term disappears.
        let m = 4;
        let j = linalg::consensus_projector(m);
        let i = Mat::identity(m, m);
        let mats = AbcMatrices::new(j.clone(), j.clone(), &i - &j, Some(i), 1, "avg").unwrap();
        let p = quad_problem(m, 2, 3, Regularizer::Zero);
        let g = sublinear_stepsize(&mats, &p, &Mat::zeros(m, 2), &[0.1, 0.2], SublinearMode::G0).unwrap();
        assert!((g - 1.0 / p.smooth.l()).abs() < 1e-15);
    }

    #[test]
    fn splitting_identity_for_smooth_b_identity() {
        let p = quad_problem(5, 2, 1, Regularizer::Zero);
        let mats = AbcMatrices::preset(&Preset::Extra, &ring(5), None).unwrap();
        assert!(verify_splitting(&mats, &p, 0.1, 30).unwrap() < 1e-10);
    }

    #[test]
    fn splitting_nids_with_prox() {
        let p = quad_problem(6, 3, 5, Regularizer::L1 { lambda: 0.2 });
        let mats = AbcMatrices::preset(&Preset::NidsExactDiffusion, &ring(6), None).unwrap();
        let gamma = 2.0 / (p.smooth.l() + p.smooth.mu());
        assert!(verify_splitting(&mats, &p, gamma, 50).unwrap() <= 1e-9);
    }

    #[test]
    fn splitting_rejects_singular_b() {
        let p = quad_problem(4, 2, 5, Regularizer::Zero);
        let w = GossipMatrix::metropolis(&Graph::named(NamedGraph::Complete, 4).unwrap()).unwrap();
        // Complete-graph Metropolis W = J has eigenvalue 0, so (I+W)/2 is
        // invertible but W itself as B is not.
        let j = w.entries().clone();
        let i = Mat::identity(4, 4);
        let mats = AbcMatrices::new(j.clone(), j, &i - w.entries(), Some(i), 1, "j").unwrap();
        assert!(matches!(verify_splitting(&mats, &p, 0.1, 5), Err(Error::Singular(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn q_sq_identity_at_gamma_star(kappa in 1.0f64..1e4, lmin in 1e-3f64..1.0) {
            let mu = 1.0;
            let l = kappa;
            let g = gamma_star(lmin, l, mu).unwrap();
            let lhs = 1.0 - 2.0 * g * l / (kappa + lmin);
            let rhs = ((kappa - lmin) / (kappa + lmin)).powi(2);
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn delta_non_increasing_in_gamma(seed in any::<u64>(), t1 in 0.05f64..1.0, t2 in 0.05f64..1.0) {
            let p = quad_problem(5, 2, seed, Regularizer::Zero);
            let mats = AbcMatrices::preset(&Preset::Extra, &ring(5), None).unwrap();
            let (l, mu) = (p.smooth.l(), p.smooth.mu());
            let gs = gamma_star(mats.lambda_min_d().unwrap(), l, mu).unwrap();
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            let a = delta_linear(&mats, lo * gs, l, mu, RateMode::G0).unwrap().delta;
            let b = delta_linear(&mats, hi * gs, l, mu, RateMode::G0).unwrap().delta;
            prop_assert!(b <= a + 1e-12);
        }

        #[test]
        fn tradeoff_counts_are_sufficient(m in 3usize..=12, seed in any::<u64>(), kappa in 1.5f64..200.0) {
            let (g, _) = Graph::erdos_renyi_connected(m, 0.4, seed, 10_000).unwrap();
            let w = GossipMatrix::metropolis(&g).unwrap().lazy();
            let s = w.spectral_summary().unwrap();
            prop_assume!(s.rho_com > 1e-6);
            let t = tradeoff(s.rho_com, kappa).unwrap();
            prop_assert!(t.k_chebyshev <= t.k_plain);
            let target = t.rho_opt.powi(2);
            let pw = w.matrix_power(t.k_plain).unwrap().spectral_summary().unwrap().rho_com;
            prop_assert!(pw <= target + 1e-10);
            let ch = w.chebyshev_matrix(t.k_chebyshev).unwrap().spectral_summary().unwrap().rho_com;
            prop_assert!(ch <= target + 1e-10);
        }

        #[test]
        fn forward_step_contracts(seed in any::<u64>(), frac in 0.01f64..=1.0) {
            let p = quad_problem(4, 3, seed, Regularizer::Zero);
            let lazy = ring(4).lazy();
            let d = lazy.entries();
            let gamma = frac * gamma_star(linalg::lambda_min(d).unwrap(), p.smooth.l(), p.smooth.mu()).unwrap();
            let mut rng = SeededRng::new(seed ^ 0x9e37);
            let x = Mat::from_fn(4, 3, |_, _| rng.normal());
            let y = Mat::from_fn(4, 3, |_, _| rng.normal());
            let (lhs, rhs) = forward_contraction(&p, d, gamma, &x, &y).unwrap();
            prop_assert!(lhs <= rhs + 1e-10);
        }

        #[test]
        fn isometry_holds(seed in any::<u64>()) {
            let mats = AbcMatrices::preset(&Preset::NidsExactDiffusion, &ring(6), None).unwrap();
            let mut rng = SeededRng::new(seed);
            let mut draw = || Mat::from_fn(6, 2, |_, _| rng.normal());
            let (a, b, c, d) = (draw(), draw(), draw(), draw());
            prop_assert!(isometry_gap(&mats.c, (&a, &b), (&c, &d)).unwrap() < 1e-10);
        }

        #[test]
        fn prox_and_b_are_nonexpansive(seed in any::<u64>(), lambda in 0.0f64..1.0, gamma in 0.01f64..2.0) {
            let reg = Regularizer::L1 { lambda };
            let mut rng = SeededRng::new(seed);
            let x = Mat::from_fn(5, 3, |_, _| rng.normal());
            let y = Mat::from_fn(5, 3, |_, _| rng.normal());
            prop_assert!((reg.prox_rows(gamma, &x) - reg.prox_rows(gamma, &y)).norm() <= (&x - &y).norm() + 1e-12);
            let b = AbcMatrices::preset(&Preset::NidsExactDiffusion, &ring(5), None).unwrap().b;
            prop_assert!((&b * (&x - &y)).norm() <= (&x - &y).norm() + 1e-12);
        }
    }
}
