//! Composite problem instances: per-agent smooth losses, the shared
//! regularizer with its prox, and the synthetic/real data generators.
//!
//! Convention: each `f_i` carries its own `1/m` factor, so the stacked sum
//! `f(X) = Σ f_i(x_i)` is what the iteration differentiates.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, Mat};
use crate::rng::SeededRng;

/// One agent's smooth loss.
#[derive(Clone, Debug)]
pub enum SmoothLoss {
    /// `½ xᵀQx − bᵀx + c`.
    Quadratic { q: Mat, b: DVector<f64>, c: f64 },
    /// `weight · Σ_k log(1 + exp(−y_k a_kᵀx))`, rows of `features` are `a_k`.
    Logistic { features: Mat, labels: Vec<f64>, weight: f64 },
}

fn log1p_exp_neg(t: f64) -> f64 {
    if t > 0.0 {
        (-t).exp().ln_1p()
    } else {
        -t + t.exp().ln_1p()
    }
}

/// `1 / (1 + exp(t))`.
fn sigmoid_neg(t: f64) -> f64 {
    if t >= 0.0 {
        let e = (-t).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + t.exp())
    }
}

impl SmoothLoss {
    pub fn dim(&self) -> usize {
        match self {
            SmoothLoss::Quadratic { b, .. } => b.len(),
            SmoothLoss::Logistic { features, .. } => features.ncols(),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            SmoothLoss::Quadratic { q, b, c } => {
                let d = b.len();
                let mut quad = 0.0;
                for j in 0..d {
                    let col = q.column(j);
                    let qx: f64 = (0..d).map(|l| col[l] * x[l]).sum();
                    quad += x[j] * qx;
                }
                0.5 * quad - (0..d).map(|j| b[j] * x[j]).sum::<f64>() + c
            }
            SmoothLoss::Logistic { features, labels, weight } => {
                let mut s = 0.0;
                for (k, &y) in labels.iter().enumerate() {
                    let t: f64 = features.row(k).iter().zip(x).map(|(a, v)| a * v).sum();
                    s += log1p_exp_neg(y * t);
                }
                weight * s
            }
        }
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            SmoothLoss::Quadratic { q, b, .. } => {
                let d = b.len();
                for j in 0..d {
                    // Q is symmetric, so column j is row j and contiguous.
                    let col = q.column(j);
                    out[j] = (0..d).map(|l| col[l] * x[l]).sum::<f64>() - b[j];
                }
            }
            SmoothLoss::Logistic { features, labels, weight } => {
                out.iter_mut().for_each(|v| *v = 0.0);
                for (k, &y) in labels.iter().enumerate() {
                    let row = features.row(k);
                    let t: f64 = row.iter().zip(x).map(|(a, v)| a * v).sum();
                    let coef = -weight * y * sigmoid_neg(y * t);
                    for (o, a) in out.iter_mut().zip(row.iter()) {
                        *o += coef * a;
                    }
                }
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.gradient_into(x, &mut g);
        g
    }

    pub fn hessian(&self, x: &[f64]) -> Mat {
        match self {
            SmoothLoss::Quadratic { q, .. } => q.clone(),
            SmoothLoss::Logistic { features, labels, weight } => {
                let d = features.ncols();
                let mut h = Mat::zeros(d, d);
                for (k, &y) in labels.iter().enumerate() {
                    let row = features.row(k);
                    let t: f64 = row.iter().zip(x).map(|(a, v)| a * v).sum();
                    let s = sigmoid_neg(y * t);
                    let w = weight * s * (1.0 - s);
                    h += row.transpose() * row * w;
                }
                h
            }
        }
    }

    /// A fixed PSD matrix dominating every Hessian of the loss.
    pub fn curvature_bound(&self) -> Mat {
        match self {
            SmoothLoss::Quadratic { q, .. } => q.clone(),
            SmoothLoss::Logistic { features, weight, .. } => features.transpose() * features * (0.25 * weight),
        }
    }

    /// `(L_i, μ_i)`.
    pub fn constants(&self) -> Result<(f64, f64)> {
        match self {
            SmoothLoss::Quadratic { q, .. } => {
                let e = linalg::sym_eigen(q)?;
                Ok((e.max(), e.min().max(0.0)))
            }
            SmoothLoss::Logistic { .. } => Ok((linalg::lambda_max(&self.curvature_bound())?, 0.0)),
        }
    }

    fn hash_into(&self, h: &mut Sha256) {
        let put = |h: &mut Sha256, v: f64| h.update(v.to_le_bytes());
        match self {
            SmoothLoss::Quadratic { q, b, c } => {
                h.update(b"quadratic");
                q.iter().for_each(|&v| put(h, v));
                b.iter().for_each(|&v| put(h, v));
                put(h, *c);
            }
            SmoothLoss::Logistic { features, labels, weight } => {
                h.update(b"logistic");
                h.update((features.nrows() as u64).to_le_bytes());
                features.iter().for_each(|&v| put(h, v));
                labels.iter().for_each(|&v| put(h, v));
                put(h, *weight);
            }
        }
    }
}

/// Stacked smooth part `f(X) = Σ f_i(x_i)` with per-agent constants.
#[derive(Clone, Debug)]
pub struct SmoothSum {
    d: usize,
    agents: Vec<SmoothLoss>,
    l: Vec<f64>,
    mu: Vec<f64>,
}

impl SmoothSum {
    pub fn new(agents: Vec<SmoothLoss>) -> Result<Self> {
        let first = agents.first().ok_or_else(|| invalid("at least one agent required"))?;
        let d = first.dim();
        if d == 0 {
            return Err(invalid("dimension must be positive"));
        }
        let mut l = Vec::with_capacity(agents.len());
        let mut mu = Vec::with_capacity(agents.len());
        for a in &agents {
            if a.dim() != d {
                return Err(Error::Shape {
                    expected: format!("dimension {d}"),
                    got: format!("dimension {}", a.dim()),
                });
            }
            let (li, mi) = a.constants()?;
            l.push(li);
            mu.push(mi);
        }
        Ok(Self { d, agents, l, mu })
    }

    pub fn m(&self) -> usize {
        self.agents.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn agents(&self) -> &[SmoothLoss] {
        &self.agents
    }

    pub fn local_l(&self) -> &[f64] {
        &self.l
    }

    pub fn local_mu(&self) -> &[f64] {
        &self.mu
    }

    /// `max_i L_i`.
    pub fn l(&self) -> f64 {
        self.l.iter().copied().fold(0.0, f64::max)
    }

    /// `min_i μ_i`.
    pub fn mu(&self) -> f64 {
        self.mu.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `L/μ`, infinite when not strongly convex.
    pub fn kappa(&self) -> f64 {
        let mu = self.mu();
        if mu > 0.0 {
            self.l() / mu
        } else {
            f64::INFINITY
        }
    }
}

/// The shared nonsmooth term `G`, applied row-wise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regularizer {
    Zero,
    /// `λ‖x‖₁`.
    L1 {
        lambda: f64,
    },
    /// `(λ/m)‖x‖₁`, the per-agent share of a network-wide `λ‖x‖₁`.
    ScaledL1 {
        lambda: f64,
        m: usize,
    },
}

impl Regularizer {
    /// Coefficient of `‖x‖₁`.
    pub fn weight(&self) -> f64 {
        match *self {
            Regularizer::Zero => 0.0,
            Regularizer::L1 { lambda } => lambda,
            Regularizer::ScaledL1 { lambda, m } => lambda / m as f64,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.weight() == 0.0
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let w = self.weight();
        if w == 0.0 {
            0.0
        } else {
            w * x.iter().map(|v| v.abs()).sum::<f64>()
        }
    }

    pub fn prox_scalar(&self, gamma: f64, z: f64) -> f64 {
        soft_threshold(z, gamma * self.weight())
    }

    pub fn check(&self) -> Result<()> {
        match *self {
            Regularizer::Zero => Ok(()),
            Regularizer::L1 { lambda } | Regularizer::ScaledL1 { lambda, .. } if !(lambda >= 0.0 && lambda.is_finite()) => {
                Err(invalid(format!("regularizer weight {lambda} must be finite and nonnegative")))
            }
            Regularizer::ScaledL1 { m: 0, .. } => Err(invalid("scaled_l1 needs m ≥ 1")),
            _ => Ok(()),
        }
    }

    /// Row-wise `prox_{γG}`.
    pub fn prox_rows(&self, gamma: f64, z: &Mat) -> Mat {
        let t = gamma * self.weight();
        if t == 0.0 {
            z.clone()
        } else {
            z.map(|v| soft_threshold(v, t))
        }
    }

    pub fn prox_rows_in_place(&self, gamma: f64, z: &mut Mat) {
        let t = gamma * self.weight();
        if t != 0.0 {
            z.apply(|v| *v = soft_threshold(*v, t));
        }
    }

    /// Distance from `−g` to `scale·∂G(x)`: the optimality residual of
    /// `0 ∈ g + scale·∂G(x)`.
    pub fn subgradient_residual(&self, x: &[f64], g: &[f64], scale: f64) -> f64 {
        let w = scale * self.weight();
        x.iter()
            .zip(g)
            .map(|(&xj, &gj)| {
                let r = if xj != 0.0 { gj + w * xj.signum() } else { (gj.abs() - w).max(0.0) };
                r * r
            })
            .sum::<f64>()
            .sqrt()
    }

    /// The element of `scale·∂G(x)` closest to `−g`.
    pub fn attributed_subgradient(&self, x: &[f64], g: &[f64], scale: f64) -> Vec<f64> {
        let w = scale * self.weight();
        x.iter()
            .zip(g)
            .map(|(&xj, &gj)| if xj != 0.0 { w * xj.signum() } else { (-gj).clamp(-w, w) })
            .collect()
    }
}

pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Data behind an instance, kept for reporting and hashing.
#[derive(Clone, Debug)]
pub struct RawData {
    pub features: Vec<Mat>,
    pub labels: Vec<DVector<f64>>,
}

#[derive(Clone, Debug)]
pub struct ProblemInstance {
    pub smooth: SmoothSum,
    pub reg: Regularizer,
    pub data: Option<RawData>,
}

impl ProblemInstance {
    pub fn new(smooth: SmoothSum, reg: Regularizer) -> Result<Self> {
        reg.check()?;
        Ok(Self { smooth, reg, data: None })
    }

    pub fn m(&self) -> usize {
        self.smooth.m()
    }

    pub fn d(&self) -> usize {
        self.smooth.d()
    }

    fn check_shape(&self, x: &Mat) -> Result<()> {
        if x.nrows() != self.m() || x.ncols() != self.d() {
            return Err(Error::Shape {
                expected: format!("{}x{}", self.m(), self.d()),
                got: format!("{}x{}", x.nrows(), x.ncols()),
            });
        }
        Ok(())
    }

    /// Row `i` is `∇f_i(x_i)`.
    pub fn stacked_gradient(&self, x: &Mat) -> Result<Mat> {
        self.check_shape(x)?;
        let mut out = Mat::zeros(self.m(), self.d());
        self.stacked_gradient_into(x, &mut out);
        Ok(out)
    }

    /// Unchecked variant for the hot loop; shapes must already agree.
    pub fn stacked_gradient_into(&self, x: &Mat, out: &mut Mat) {
        let d = self.d();
        let mut row = vec![0.0; d];
        let mut g = vec![0.0; d];
        for (i, agent) in self.smooth.agents().iter().enumerate() {
            for j in 0..d {
                row[j] = x[(i, j)];
            }
            agent.gradient_into(&row, &mut g);
            for j in 0..d {
                out[(i, j)] = g[j];
            }
        }
    }

    /// `f(X) + g(X) = Σ_i f_i(x_i) + G(x_i)`.
    pub fn stacked_objective(&self, x: &Mat) -> Result<f64> {
        self.check_shape(x)?;
        let d = self.d();
        let mut row = vec![0.0; d];
        let mut total = 0.0;
        for (i, agent) in self.smooth.agents().iter().enumerate() {
            for j in 0..d {
                row[j] = x[(i, j)];
            }
            total += agent.value(&row) + self.reg.value(&row);
        }
        Ok(total)
    }

    /// `Σ_i f_i(x) + m·G(x)`: the stacked objective at the consensual `1xᵀ`.
    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.smooth_value(x) + self.m() as f64 * self.reg.value(x)
    }

    /// `objective_value / m`, the per-agent-averaged form.
    pub fn objective_normalized(&self, x: &[f64]) -> f64 {
        self.objective_value(x) / self.m() as f64
    }

    /// `Σ_i f_i(x)`.
    pub fn smooth_value(&self, x: &[f64]) -> f64 {
        self.smooth.agents().iter().map(|a| a.value(x)).sum()
    }

    /// `Σ_i ∇f_i(x)`.
    pub fn centralized_gradient(&self, x: &[f64]) -> Vec<f64> {
        let d = self.d();
        let mut total = vec![0.0; d];
        let mut g = vec![0.0; d];
        for a in self.smooth.agents() {
            a.gradient_into(x, &mut g);
            for j in 0..d {
                total[j] += g[j];
            }
        }
        total
    }

    pub fn centralized_hessian(&self, x: &[f64]) -> Mat {
        let d = self.d();
        self.smooth.agents().iter().fold(Mat::zeros(d, d), |acc, a| acc + a.hessian(x))
    }

    /// Smoothness constant of `Σ_i f_i`.
    pub fn centralized_smoothness(&self) -> Result<f64> {
        let d = self.d();
        let h = self.smooth.agents().iter().fold(Mat::zeros(d, d), |acc, a| acc + a.curvature_bound());
        linalg::lambda_max(&h)
    }

    /// SHA-256 over every number defining the instance.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.m() as u64).to_le_bytes());
        h.update((self.d() as u64).to_le_bytes());
        for a in self.smooth.agents() {
            a.hash_into(&mut h);
        }
        h.update(serde_json::to_vec(&self.reg).expect("regularizer serializes"));
        hex::encode(h.finalize())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ElasticNetParams {
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

impl Default for ElasticNetParams {
    fn default() -> Self {
        Self {
            seed: 0,
            omega: 0.5,
            m: 50,
            r: 20,
            d: 40,
            rho: 20.0,
            lambda: 1.0,
            sparsity: 0.3,
            noise_var: 0.04,
        }
    }
}

/// Correlated Gaussian design: `U_{:,1} = Z_{:,1}/√(1−ω²)`,
/// `U_{:,i} = ωU_{:,i−1} + Z_{:,i}`. `Z` is drawn row-major.
pub fn correlated_design(rng: &mut SeededRng, rows: usize, d: usize, omega: f64) -> Mat {
    let z = Mat::from_row_iterator(rows, d, (0..rows * d).map(|_| rng.normal()));
    let mut u = Mat::zeros(rows, d);
    let scale = 1.0 / (1.0 - omega * omega).sqrt();
    for i in 0..rows {
        u[(i, 0)] = z[(i, 0)] * scale;
        for j in 1..d {
            u[(i, j)] = omega * u[(i, j - 1)] + z[(i, j)];
        }
    }
    u
}

/// Sparse ground truth with `round(sparsity·d)` Gaussian nonzeros.
pub fn sparse_truth(rng: &mut SeededRng, d: usize, sparsity: f64) -> Vec<f64> {
    let nnz = ((sparsity * d as f64).round() as usize).min(d);
    let mut idx: Vec<usize> = (0..d).collect();
    for i in 0..nnz {
        let j = i + (rng.next_u64() % (d - i) as u64) as usize;
        idx.swap(i, j);
    }
    let mut x = vec![0.0; d];
    for &j in &idx[..nnz] {
        x[j] = rng.normal();
    }
    x
}

/// `f_i(x) = (1/m)‖U_i x − v_i‖² + (ρ/m)‖x‖²`, `G = (λ/m)‖x‖₁`.
pub fn elastic_net_instance(p: &ElasticNetParams) -> Result<ProblemInstance> {
    if !(0.0..1.0).contains(&p.omega) {
        return Err(invalid(format!("omega {} must lie in [0, 1)", p.omega)));
    }
    if p.m == 0 || p.r == 0 || p.d == 0 {
        return Err(invalid("m, r and d must be positive"));
    }
    if p.rho < 0.0 || p.lambda < 0.0 || p.noise_var < 0.0 || !(0.0..=1.0).contains(&p.sparsity) {
        return Err(invalid("rho, lambda, noise variance must be nonnegative and sparsity in [0, 1]"));
    }
    let mut rng = SeededRng::new(p.seed);
    let rows = p.m * p.r;
    let u = correlated_design(&mut rng, rows, p.d, p.omega);
    let x0 = DVector::from_vec(sparse_truth(&mut rng, p.d, p.sparsity));
    let noise_sd = p.noise_var.sqrt();
    let v = &u * &x0 + DVector::from_iterator(rows, (0..rows).map(|_| noise_sd * rng.normal()));

    let mf = p.m as f64;
    let mut agents = Vec::with_capacity(p.m);
    let mut features = Vec::with_capacity(p.m);
    let mut labels = Vec::with_capacity(p.m);
    for i in 0..p.m {
        let ui = u.rows(i * p.r, p.r).into_owned();
        let vi = v.rows(i * p.r, p.r).into_owned();
        let mut q = ui.transpose() * &ui;
        for j in 0..p.d {
            q[(j, j)] += p.rho;
        }
        q *= 2.0 / mf;
        let b = ui.transpose() * &vi * (2.0 / mf);
        let c = vi.norm_squared() / mf;
        agents.push(SmoothLoss::Quadratic { q, b, c });
        features.push(ui);
        labels.push(vi);
    }
    let mut inst = ProblemInstance::new(SmoothSum::new(agents)?, Regularizer::ScaledL1 { lambda: p.lambda, m: p.m })?;
    inst.data = Some(RawData { features, labels });
    Ok(inst)
}

/// Feature/label table with labels in `{−1, +1}`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub features: Mat,
    pub labels: Vec<f64>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    /// Parses the UCI comma-separated layout: numeric columns then a label
    /// (`g`/`b` or `±1`).
    pub fn parse_csv(text: &str, n_features: usize) -> Result<Self> {
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != n_features + 1 {
                return Err(Error::Parse(format!(
                    "line {}: expected {} columns, found {}",
                    ln + 1,
                    n_features + 1,
                    cells.len()
                )));
            }
            for c in &cells[..n_features] {
                feats.push(c.parse::<f64>().map_err(|e| Error::Parse(format!("line {}: {c}: {e}", ln + 1)))?);
            }
            let y = match cells[n_features] {
                "g" | "1" | "+1" | "1.0" => 1.0,
                "b" | "-1" | "-1.0" => -1.0,
                other => return Err(Error::Parse(format!("line {}: label {other:?} is not ±1", ln + 1))),
            };
            labels.push(y);
        }
        if labels.is_empty() {
            return Err(Error::Parse("empty table".into()));
        }
        Ok(Self {
            features: Mat::from_row_slice(labels.len(), n_features, &feats),
            labels,
        })
    }

    pub fn load_ionosphere(path: &Path) -> Result<Self> {
        Self::parse_csv(&std::fs::read_to_string(path)?, IONOSPHERE_FEATURES)
    }

    /// The copy shipped with the crate.
    pub fn bundled_ionosphere() -> Self {
        Self::parse_csv(IONOSPHERE_CSV, IONOSPHERE_FEATURES).expect("bundled data parses")
    }
}

pub const IONOSPHERE_FEATURES: usize = 34;
const IONOSPHERE_CSV: &str = include_str!("../data/ionosphere.data");

/// Agent `i` owns samples `per_agent·i .. per_agent·(i+1)`; features scaled
/// by `alpha`; `f_i = (1/m) Σ_k log(1 + exp(−v_k α u_kᵀx))`, `G = 0`.
pub fn logistic_instance(data: &Dataset, alpha: f64, agents: usize, per_agent: usize) -> Result<ProblemInstance> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid(format!("scale {alpha} must lie in (0, 1]")));
    }
    if agents == 0 || per_agent == 0 {
        return Err(invalid("agents and per_agent must be positive"));
    }
    let need = agents * per_agent;
    if data.n() < need {
        return Err(invalid(format!("table has {} rows, {need} needed", data.n())));
    }
    if data.labels.iter().any(|&y| y != 1.0 && y != -1.0) {
        return Err(invalid("labels must be ±1"));
    }
    let w = 1.0 / agents as f64;
    let mut losses = Vec::with_capacity(agents);
    let mut features = Vec::with_capacity(agents);
    let mut labels = Vec::with_capacity(agents);
    for i in 0..agents {
        let a = data.features.rows(i * per_agent, per_agent) * alpha;
        let y: Vec<f64> = data.labels[i * per_agent..(i + 1) * per_agent].to_vec();
        losses.push(SmoothLoss::Logistic {
            features: a.clone(),
            labels: y.clone(),
            weight: w,
        });
        features.push(a);
        labels.push(DVector::from_vec(y));
    }
    let mut inst = ProblemInstance::new(SmoothSum::new(losses)?, Regularizer::Zero)?;
    inst.data = Some(RawData { features, labels });
    Ok(inst)
}
