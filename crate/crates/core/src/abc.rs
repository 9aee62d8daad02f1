//! The ABC iteration
//!
//! ```text
//! X^k     = prox_{γg}(Z^k)
//! Z^{k+1} = A X^k − γ B ∇f(X^k) − Y^k
//! Y^{k+1} = Y^k + C Z^{k+1}
//! ```
//!
//! together with its eliminated two-step form, the averaged-primal
//! ("underline") form used in the convex analysis, the prox-before-gradient
//! variant, the preset factory and the assumption validator.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::{self, Reference};
use crate::error::{invalid, Error, Result};
use crate::gossip::GossipMatrix;
use crate::linalg::{self, Mat};
use crate::problem::ProblemInstance;

/// Tolerance for the linear identities the presets must satisfy.
pub const IDENTITY_TOL: f64 = 1e-10;
/// Tolerance for treating an eigenvalue as zero or a PSD margin as met.
pub const SPECTRAL_TOL: f64 = 1e-10;
/// Errors beyond this abort a run.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Preset {
    Extra,
    NidsExactDiffusion,
    NextAugdgm,
    DigingHarnessing,
    /// `B' = bI`: `A = W² + γb(I − W)`, `B = I`, `C = (I − W)² + γb(I − W)`.
    /// `b` defaults to `0`, which leaves `A = W²`, `C = (I − W)²`.
    JakoveticB0 {
        #[serde(default)]
        b: Option<f64>,
    },
    /// `B' = bW`: `A = W² + γb(I − W)W`, `C = (I − W)² + γb(I − W)W`.
    /// `b` defaults to `1/γ`, which gives `A = W`, `C = I − W`.
    JakoveticBw {
        #[serde(default)]
        b: Option<f64>,
    },
    Mansoori {
        k: usize,
    },
    Alghunaim {
        alpha: f64,
    },
}

impl Preset {
    /// The four single-gossip-matrix presets compared in most experiments.
    pub const CLASSIC: [Preset; 4] = [Preset::Extra, Preset::NidsExactDiffusion, Preset::NextAugdgm, Preset::DigingHarnessing];

    pub fn name(&self) -> String {
        match self {
            Preset::Extra => "extra".into(),
            Preset::NidsExactDiffusion => "nids_exact_diffusion".into(),
            Preset::NextAugdgm => "next_augdgm".into(),
            Preset::DigingHarnessing => "diging_harnessing".into(),
            Preset::JakoveticB0 { b: None } => "jakovetic_b0".into(),
            Preset::JakoveticB0 { b: Some(b) } => format!("jakovetic_b0:{b}"),
            Preset::JakoveticBw { b: None } => "jakovetic_bw".into(),
            Preset::JakoveticBw { b: Some(b) } => format!("jakovetic_bw:{b}"),
            Preset::Mansoori { k } => format!("mansoori:{k}"),
            Preset::Alghunaim { alpha } => format!("alghunaim:{alpha}"),
        }
    }

    /// Adapt-then-combine presets apply the mixing after the gradient step
    /// (`A = B`).
    pub fn is_atc(&self) -> bool {
        matches!(self, Preset::NidsExactDiffusion | Preset::NextAugdgm)
    }

    pub fn needs_gamma(&self) -> bool {
        match self {
            Preset::JakoveticBw { .. } => true,
            Preset::JakoveticB0 { b } => b.is_some_and(|b| b != 0.0),
            _ => false,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    /// Accepts `name` or `name:param`, e.g. `mansoori:3`, `alghunaim:0.5`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, param) = match s.split_once(':') {
            Some((n, p)) => (n, Some(p)),
            None => (s, None),
        };
        let num = |what: &str| -> Result<f64> {
            param
                .ok_or_else(|| invalid(format!("{name} needs a parameter ({what}), e.g. {name}:2")))?
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("{what}: {e}")))
        };
        let no_param = |p: Preset| {
            if param.is_some() {
                Err(invalid(format!("{name} takes no parameter")))
            } else {
                Ok(p)
            }
        };
        match name.to_ascii_lowercase().replace('-', "_").as_str() {
            "extra" => no_param(Preset::Extra),
            "nids" | "exact_diffusion" | "nids_exact_diffusion" => no_param(Preset::NidsExactDiffusion),
            "next" | "augdgm" | "next_augdgm" => no_param(Preset::NextAugdgm),
            "diging" | "harnessing" | "diging_harnessing" => no_param(Preset::DigingHarnessing),
            "jakovetic_b0" => Ok(Preset::JakoveticB0 {
                b: param.map(|_| num("b")).transpose()?,
            }),
            "jakovetic_bw" => Ok(Preset::JakoveticBw {
                b: param.map(|_| num("b")).transpose()?,
            }),
            "mansoori" => {
                let k = num("K")?;
                if k < 1.0 || k.fract() != 0.0 {
                    return Err(invalid(format!("mansoori K must be a positive integer, got {k}")));
                }
                Ok(Preset::Mansoori { k: k as usize })
            }
            "alghunaim" => Ok(Preset::Alghunaim { alpha: num("alpha")? }),
            other => Err(invalid(format!("unknown preset {other:?}"))),
        }
    }
}

/// One framework instance. `d` is the factor in `A = BD` when declared.
#[derive(Clone, Debug)]
pub struct AbcMatrices {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Option<Mat>,
    pub hops_per_iter: usize,
    pub label: String,
}

impl AbcMatrices {
    pub fn new(a: Mat, b: Mat, c: Mat, d: Option<Mat>, hops_per_iter: usize, label: impl Into<String>) -> Result<Self> {
        let m = a.nrows();
        let square = |x: &Mat| x.nrows() == m && x.ncols() == m;
        if m == 0 || !square(&a) || !square(&b) || !square(&c) || d.as_ref().is_some_and(|d| !square(d)) {
            return Err(Error::Shape {
                expected: format!("{m}x{m} for A, B, C, D"),
                got: "mismatched matrices".into(),
            });
        }
        Ok(Self {
            a,
            b,
            c,
            d,
            hops_per_iter,
            label: label.into(),
        })
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    /// `A = B`, `C = I − B`, `D = I` with `B` a K-hop gossip matrix.
    pub fn from_polynomial(b: &GossipMatrix, label: impl Into<String>) -> Result<Self> {
        let m = b.m();
        let i = Mat::identity(m, m);
        let bm = b.entries().clone();
        Self::new(bm.clone(), bm.clone(), &i - &bm, Some(i), b.hops(), label)
    }

    /// Builds a preset from a base gossip matrix. `gamma` is only read by
    /// presets whose matrices depend on the stepsize.
    pub fn preset(p: &Preset, w: &GossipMatrix, gamma: Option<f64>) -> Result<Self> {
        let m = w.m();
        let i = Mat::identity(m, m);
        let wm = w.entries();
        let lazy = (&i + wm) * 0.5;
        let half_lap = (&i - wm) * 0.5;
        let base_hops = w.hops();
        let label = p.name();
        let w_eig = || linalg::sym_eigen(wm);
        match *p {
            Preset::Extra => Self::new(lazy.clone(), i.clone(), half_lap, Some(lazy), base_hops, label),
            Preset::NidsExactDiffusion => Self::new(lazy.clone(), lazy, half_lap, Some(i), base_hops, label),
            Preset::NextAugdgm => {
                let l2 = &lazy * &lazy;
                Self::new(l2.clone(), l2, &half_lap * &half_lap, Some(i), 2 * base_hops, label)
            }
            Preset::DigingHarnessing => {
                let l2 = &lazy * &lazy;
                Self::new(l2.clone(), i, &half_lap * &half_lap, Some(l2), 2 * base_hops, label)
            }
            Preset::JakoveticB0 { b } => {
                let b = b.unwrap_or(0.0);
                if !(b >= 0.0 && b.is_finite()) {
                    return Err(invalid(format!("jakovetic_b0 b = {b} must be nonnegative")));
                }
                let gb = if b == 0.0 {
                    0.0
                } else {
                    let gamma = gamma.ok_or_else(|| invalid("jakovetic_b0 with b > 0 needs the stepsize"))?;
                    if !(gamma > 0.0) {
                        return Err(invalid("stepsize must be positive"));
                    }
                    gamma * b
                };
                let lap = &i - wm;
                let a = wm * wm + &lap * gb;
                let c = &lap * &lap + &lap * gb;
                Self::new(a.clone(), i, c, Some(a), 2 * base_hops, label)
            }
            Preset::JakoveticBw { b } => {
                let gamma = gamma.ok_or_else(|| invalid("jakovetic_bw needs the stepsize"))?;
                if !(gamma > 0.0) {
                    return Err(invalid("stepsize must be positive"));
                }
                if w_eig()?.min() <= SPECTRAL_TOL {
                    return Err(Error::Spectral("jakovetic_bw requires W ≻ 0".into()));
                }
                let gb = gamma * b.unwrap_or(1.0 / gamma);
                let lap = &i - wm;
                let cross = &lap * wm * gb;
                let a = wm * wm + &cross;
                let c = &lap * &lap + &cross;
                Self::new(a.clone(), i, c, Some(a), 2 * base_hops, label)
            }
            Preset::Mansoori { k } => {
                if k == 0 {
                    return Err(invalid("mansoori K must be at least 1"));
                }
                if w_eig()?.min() <= SPECTRAL_TOL {
                    return Err(Error::Spectral("mansoori requires W ≻ 0".into()));
                }
                let mut b = Mat::zeros(m, m);
                let mut pow = i.clone();
                for _ in 0..k {
                    b += &pow;
                    pow = &pow * wm;
                }
                let a = pow;
                let b_inv = b.clone().try_inverse().ok_or_else(|| Error::Singular("sum of powers of W".into()))?;
                let d = &b_inv * &a;
                let d = (&d + d.transpose()) * 0.5;
                Self::new(a.clone(), b, &i - &a, Some(d), k * base_hops, label)
            }
            Preset::Alghunaim { alpha } => {
                let e = w_eig()?;
                if e.min() <= SPECTRAL_TOL || e.max() > 1.0 + SPECTRAL_TOL {
                    return Err(Error::Spectral("alghunaim requires 0 ≺ W ⪯ I".into()));
                }
                if !(alpha > 0.0 && alpha <= 1.0) {
                    return Err(invalid(format!("alghunaim alpha {alpha} must lie in (0, 1]")));
                }
                Self::new(wm.clone(), i.clone(), (&i - wm) * alpha, Some(wm.clone()), base_hops, label)
            }
        }
    }

    /// `A = B` exactly; enables the single-product update `B(X − γ∇f)`.
    pub fn is_atc(&self) -> bool {
        self.a == self.b
    }

    fn b_is_identity(&self) -> bool {
        let m = self.m();
        self.b == Mat::identity(m, m)
    }

    pub fn d_or_err(&self) -> Result<&Mat> {
        self.d.as_ref().ok_or_else(|| invalid("this operation needs the factor D with A = BD"))
    }

    pub fn lambda_min_d(&self) -> Result<f64> {
        linalg::lambda_min(self.d_or_err()?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssumptionMode {
    /// Strongly convex, `G = 0`: `q² AB ≺ I − C`.
    LinearG0,
    /// Strongly convex, general `G`: `q² B² ≺ I − C`.
    LinearG,
    /// Convex, `G = 0`: `I − C/2 − √B D √B ⪰ 0`.
    SublinearG0,
    /// Convex, prox variant: `B = I`, `0 ≺ D ⪯ I − C/2`.
    SublinearProx,
}

impl FromStr for AssumptionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear_g0" => Ok(Self::LinearG0),
            "linear_g" => Ok(Self::LinearG),
            "sublinear_g0" => Ok(Self::SublinearG0),
            "sublinear_prox" => Ok(Self::SublinearProx),
            other => Err(invalid(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Clause {
    pub name: &'static str,
    pub passed: bool,
    /// Positive when satisfied; the amount of slack.
    pub margin: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub mode: AssumptionMode,
    pub clauses: Vec<Clause>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.clauses.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&'static str> {
        self.clauses.iter().filter(|c| !c.passed).map(|c| c.name).collect()
    }

    pub fn clause(&self, name: &str) -> Option<&Clause> {
        self.clauses.iter().find(|c| c.name == name)
    }

    fn push(&mut self, name: &'static str, margin: f64) {
        self.clauses.push(Clause {
            name,
            passed: margin >= 0.0,
            margin,
        });
    }

    fn push_err(&mut self, name: &'static str, err: f64, tol: f64) {
        self.push(name, tol - err);
    }
}

fn sym(a: &Mat) -> Mat {
    (a + a.transpose()) * 0.5
}

/// Smallest eigenvalue, `-inf` when the decomposition fails.
fn lmin(a: &Mat) -> f64 {
    linalg::lambda_min(&sym(a)).unwrap_or(f64::NEG_INFINITY)
}

fn lmax(a: &Mat) -> f64 {
    linalg::lambda_max(&sym(a)).unwrap_or(f64::INFINITY)
}

/// Checks every clause of the selected assumption set numerically. Never
/// fails: problems show up as failed clauses.
pub fn validate(mats: &AbcMatrices, gamma: f64, l: f64, mu: f64, mode: AssumptionMode) -> ValidationReport {
    let m = mats.m();
    let i = Mat::identity(m, m);
    let ones = Mat::from_element(m, 1, 1.0);
    let mf = m as f64;
    let mut r = ValidationReport { mode, clauses: Vec::new() };

    // Weight conditions shared by every mode.
    r.push_err("c_symmetric", linalg::asymmetry(&mats.c), IDENTITY_TOL);
    r.push("c_psd", lmin(&mats.c) + SPECTRAL_TOL);
    r.push_err("c_kernel_contains_ones", (&mats.c * &ones).norm(), IDENTITY_TOL);
    let lambda2_c = linalg::eigenvalues(&sym(&mats.c))
        .map(|e| if m > 1 { e[1] } else { f64::INFINITY })
        .unwrap_or(0.0);
    r.push("c_kernel_is_consensus", lambda2_c - SPECTRAL_TOL);
    r.push_err(
        "ones_a_ones_equals_m",
        ((ones.transpose() * &mats.a * &ones)[(0, 0)] - mf).abs(),
        IDENTITY_TOL,
    );
    r.push_err("ones_b_equals_ones", (ones.transpose() * &mats.b - ones.transpose()).norm(), IDENTITY_TOL);
    r.push_err("b_symmetric", linalg::asymmetry(&mats.b), IDENTITY_TOL);

    let Some(d) = mats.d.as_ref() else {
        r.push("d_declared", -1.0);
        return r;
    };
    r.push("d_declared", 0.0);
    r.push_err("a_equals_bd", (&mats.a - &mats.b * d).norm(), IDENTITY_TOL);
    r.push_err("d_symmetric", linalg::asymmetry(d), IDENTITY_TOL);
    let dmin = lmin(d);
    r.push("d_positive_definite", dmin - SPECTRAL_TOL);

    match mode {
        AssumptionMode::LinearG0 | AssumptionMode::LinearG => {
            r.push("d_at_most_identity", 1.0 + SPECTRAL_TOL - lmax(d));
            r.push_err("ones_d_ones_equals_m", ((ones.transpose() * d * &ones)[(0, 0)] - mf).abs(), IDENTITY_TOL);
            r.push("c_below_identity", 1.0 - lmax(&mats.c));
            r.push_err("b_c_commute", (&mats.b * &mats.c - &mats.c * &mats.b).norm(), IDENTITY_TOL);
            let gstar = if mu > 0.0 && dmin > 0.0 {
                analysis::gamma_star(dmin, l, mu).ok()
            } else {
                None
            };
            match gstar {
                Some(gs) => {
                    r.push("stepsize_positive", gamma);
                    // Relative slack so γ = γ*(D) computed elsewhere passes.
                    r.push("stepsize_at_most_gamma_star", gs * (1.0 + 1e-12) - gamma);
                    let q = analysis::q_sq(dmin, gamma, l, mu).unwrap_or(f64::NAN);
                    let mm = match mode {
                        AssumptionMode::LinearG0 => &mats.a * &mats.b,
                        _ => &mats.b * &mats.b,
                    };
                    let gap = lmax(&(sym(&mm) * q - (&i - &mats.c)));
                    r.push(
                        if mode == AssumptionMode::LinearG0 {
                            "q_sq_ab_below_i_minus_c"
                        } else {
                            "q_sq_b2_below_i_minus_c"
                        },
                        if gap.is_finite() { -gap } else { -1.0 },
                    );
                }
                None => r.push("strongly_convex", -1.0),
            }
        }
        AssumptionMode::SublinearG0 => {
            r.push("b_psd", lmin(&mats.b) + SPECTRAL_TOL);
            r.push_err("d_ones_equals_ones", (d * &ones - &ones).norm(), IDENTITY_TOL);
            r.push_err("b_c_commute", (&mats.b * &mats.c - &mats.c * &mats.b).norm(), IDENTITY_TOL);
            let sqrt_b = linalg::psd_sqrt(&sym(&mats.b), SPECTRAL_TOL);
            let margin = match sqrt_b {
                Ok(sb) => lmin(&(&i - &mats.c * 0.5 - &sb * d * &sb)) + SPECTRAL_TOL,
                Err(_) => -1.0,
            };
            r.push("i_minus_half_c_minus_sqrtb_d_sqrtb_psd", margin);
            r.push("stepsize_positive", gamma);
            r.push("stepsize_at_most_lmin_d_over_l", dmin / l * (1.0 + 1e-12) - gamma);
        }
        AssumptionMode::SublinearProx => {
            r.push_err("b_is_identity", (&mats.b - &i).norm(), IDENTITY_TOL);
            r.push_err("ones_d_ones_equals_m", ((ones.transpose() * d * &ones)[(0, 0)] - mf).abs(), IDENTITY_TOL);
            r.push("d_at_most_i_minus_half_c", lmin(&(&i - &mats.c * 0.5 - d)) + SPECTRAL_TOL);
            r.push("stepsize_positive", gamma);
            r.push("stepsize_at_most_lmin_d_over_l", dmin / l * (1.0 + 1e-12) - gamma);
        }
    }
    r
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// The three-line iteration.
    #[default]
    Abc,
    /// The two-step recursion in `Z` alone.
    Eliminated,
    /// Prox applied before the gradient step; dual driven by `X`.
    SublinearProx,
    /// `X = B X̲`, `X̲⁺ = DX − γ(∇f(X) + Y̲)`, `Y̲⁺ = Y̲ + C X̲⁺/γ` (`G = 0`).
    Underline,
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "abc" => Ok(Self::Abc),
            "eliminated" => Ok(Self::Eliminated),
            "sublinear_prox" => Ok(Self::SublinearProx),
            "underline" => Ok(Self::Underline),
            other => Err(invalid(format!("unknown variant {other:?}"))),
        }
    }
}

/// Iterates and counters.
///
/// Meaning of `z` and `y` per variant: for [`Variant::Abc`] and
/// [`Variant::Eliminated`] they are `Z^k` and `Y^k` (the eliminated form does
/// not maintain `y`); for [`Variant::SublinearProx`] and
/// [`Variant::Underline`] they hold `X̲^k` and `Y̲^k`.
#[derive(Clone, Debug)]
pub struct AbcState {
    pub z: Mat,
    pub x: Mat,
    pub y: Mat,
    pub k: usize,
    pub grad_evals: usize,
    pub comm_rounds: usize,
    /// `Σ_{t=1}^{k} X^t`.
    pub x_sum: Mat,
    /// `‖Z^k − Z^{k−1}‖` (or the `X̲` analogue) after the latest step.
    pub residual: f64,
    prev: Option<(Mat, Mat)>,
    grad: Mat,
    tmp: Mat,
}

impl AbcState {
    /// `Z⁰ = z0` (zero by default), `X⁰ = prox(Z⁰)`, `Y⁰ = 0`. For the
    /// underline-form variants `X̲⁰ = z0` and `X⁰ = prox(B X̲⁰)`.
    pub fn new(mats: &AbcMatrices, problem: &ProblemInstance, gamma: f64, variant: Variant, z0: Option<Mat>) -> Result<Self> {
        let (m, d) = (problem.m(), problem.d());
        if mats.m() != m {
            return Err(Error::Shape {
                expected: format!("{m}x{m} weight matrices"),
                got: format!("{0}x{0}", mats.m()),
            });
        }
        let z = match z0 {
            Some(z) if z.nrows() == m && z.ncols() == d => z,
            Some(z) => {
                return Err(Error::Shape {
                    expected: format!("{m}x{d}"),
                    got: format!("{}x{}", z.nrows(), z.ncols()),
                })
            }
            None => Mat::zeros(m, d),
        };
        let x = match variant {
            Variant::Abc | Variant::Eliminated => problem.reg.prox_rows(gamma, &z),
            Variant::SublinearProx => problem.reg.prox_rows(gamma, &(&mats.b * &z)),
            Variant::Underline => &mats.b * &z,
        };
        Ok(Self {
            z,
            x,
            y: Mat::zeros(m, d),
            k: 0,
            grad_evals: 0,
            comm_rounds: 0,
            x_sum: Mat::zeros(m, d),
            residual: f64::NAN,
            prev: None,
            grad: Mat::zeros(m, d),
            tmp: Mat::zeros(m, d),
        })
    }

    /// `X̂^k = (1/k) Σ_{t=1}^{k} X^t`; `X⁰` before the first step.
    pub fn averaged_x(&self) -> Mat {
        if self.k == 0 {
            self.x.clone()
        } else {
            &self.x_sum / self.k as f64
        }
    }

    fn finish(&mut self, mats: &AbcMatrices) -> Result<()> {
        self.k += 1;
        self.grad_evals += 1;
        self.comm_rounds += mats.hops_per_iter;
        self.x_sum += &self.x;
        if self.x.iter().any(|v| !v.is_finite()) || self.z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                iteration: self.k,
                reason: "non-finite iterate".into(),
            });
        }
        Ok(())
    }
}

/// `self = B(X − γG)` for ATC, `A X − γ G` for `B = I`, else `AX − γBG`.
fn mix_gradient(out: &mut Mat, tmp: &mut Mat, mats: &AbcMatrices, x: &Mat, g: &Mat, gamma: f64) {
    if mats.is_atc() {
        for ((t, &xv), &gv) in tmp.as_mut_slice().iter_mut().zip(x.as_slice()).zip(g.as_slice()) {
            *t = xv - gamma * gv;
        }
        out.gemm(1.0, &mats.b, tmp, 0.0);
    } else if mats.b_is_identity() {
        out.copy_from(g);
        out.gemm(1.0, &mats.a, x, -gamma);
    } else {
        out.gemm(1.0, &mats.a, x, 0.0);
        out.gemm(-gamma, &mats.b, g, 1.0);
    }
}

/// One step of the three-line iteration.
pub fn step(state: &mut AbcState, mats: &AbcMatrices, problem: &ProblemInstance, gamma: f64) -> Result<()> {
    let s = state;
    problem.stacked_gradient_into(&s.x, &mut s.grad);
    let prev_z = s.z.clone();
    mix_gradient(&mut s.z, &mut s.tmp, mats, &s.x, &s.grad, gamma);
    s.z -= &s.y;
    s.y.gemm(1.0, &mats.c, &s.z, 1.0);
    s.residual = (&s.z - &prev_z).norm();
    s.x.copy_from(&s.z);
    problem.reg.prox_rows_in_place(gamma, &mut s.x);
    s.finish(mats)
}

/// One step of the recursion
/// `Z^{k+1} = (I − C)Z^k + A(X^k − X^{k−1}) − γB(∇f^k − ∇f^{k−1})`.
/// The first call from `k = 0` falls back to the three-line step (with
/// `Y⁰ = 0`).
pub fn step_eliminated(state: &mut AbcState, mats: &AbcMatrices, problem: &ProblemInstance, gamma: f64) -> Result<()> {
    let s = state;
    problem.stacked_gradient_into(&s.x, &mut s.grad);
    let prev_z = s.z.clone();
    match s.prev.take() {
        None => {
            mix_gradient(&mut s.z, &mut s.tmp, mats, &s.x, &s.grad, gamma);
            s.z -= &s.y;
        }
        Some((x_prev, g_prev)) => {
            let dx = &s.x - &x_prev;
            let dg = &s.grad - &g_prev;
            let mut next = &prev_z - &mats.c * &prev_z;
            let mut mixed = Mat::zeros(s.z.nrows(), s.z.ncols());
            mix_gradient(&mut mixed, &mut s.tmp, mats, &dx, &dg, gamma);
            next += mixed;
            s.z = next;
        }
    }
    s.prev = Some((s.x.clone(), s.grad.clone()));
    s.residual = (&s.z - &prev_z).norm();
    s.x.copy_from(&s.z);
    problem.reg.prox_rows_in_place(gamma, &mut s.x);
    s.finish(mats)
}

/// `X̲⁺ = DX − γ(∇f(X) + Y̲)`, `X⁺ = prox(B X̲⁺)`, `Y̲⁺ = Y̲ + C X⁺/γ`.
pub fn step_sublinear_prox(state: &mut AbcState, mats: &AbcMatrices, problem: &ProblemInstance, gamma: f64) -> Result<()> {
    let d = mats.d_or_err()?;
    let s = state;
    problem.stacked_gradient_into(&s.x, &mut s.grad);
    let prev_z = s.z.clone();
    s.tmp.copy_from(&s.grad);
    s.tmp += &s.y;
    s.z.copy_from(&s.tmp);
    s.z.gemm(1.0, d, &s.x, -gamma);
    s.x.gemm(1.0, &mats.b, &s.z, 0.0);
    problem.reg.prox_rows_in_place(gamma, &mut s.x);
    s.y.gemm(1.0 / gamma, &mats.c, &s.x, 1.0);
    s.residual = (&s.z - &prev_z).norm();
    s.finish(mats)
}

/// `X̲⁺ = DX − γ(∇f(X) + Y̲)`, `Y̲⁺ = Y̲ + C X̲⁺/γ`, `X⁺ = B X̲⁺`. Equivalent
/// to the three-line iteration when `G = 0`, with `Y = γ B Y̲`.
pub fn step_underline(state: &mut AbcState, mats: &AbcMatrices, problem: &ProblemInstance, gamma: f64) -> Result<()> {
    let d = mats.d_or_err()?;
    let s = state;
    problem.stacked_gradient_into(&s.x, &mut s.grad);
    let prev_z = s.z.clone();
    s.tmp.copy_from(&s.grad);
    s.tmp += &s.y;
    s.z.copy_from(&s.tmp);
    s.z.gemm(1.0, d, &s.x, -gamma);
    s.y.gemm(1.0 / gamma, &mats.c, &s.z, 1.0);
    s.x.gemm(1.0, &mats.b, &s.z, 0.0);
    s.residual = (&s.z - &prev_z).norm();
    s.finish(mats)
}

pub fn step_variant(variant: Variant, state: &mut AbcState, mats: &AbcMatrices, problem: &ProblemInstance, gamma: f64) -> Result<()> {
    match variant {
        Variant::Abc => step(state, mats, problem, gamma),
        Variant::Eliminated => step_eliminated(state, mats, problem, gamma),
        Variant::SublinearProx => step_sublinear_prox(state, mats, problem, gamma),
        Variant::Underline => step_underline(state, mats, problem, gamma),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopMetric {
    /// `‖X^k − 1x*ᵀ‖`.
    ErrOpt,
    /// Merit of the running average `X̂^k`.
    MeritAvg,
    /// Merit of the current iterate `X^k`.
    MeritLast,
    /// `‖Z^{k+1} − Z^k‖`.
    FixedPoint,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct StopRule {
    pub max_iters: usize,
    pub tol: f64,
    /// Defaults to `err_opt` with an oracle, `fixed_point` without.
    pub metric: Option<StopMetric>,
    /// Keep iterating after the tolerance is met (the hit is still recorded).
    pub run_to_cap: bool,
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            max_iters: 10_000,
            tol: 1e-8,
            metric: None,
            run_to_cap: false,
        }
    }
}

/// What a run records per iteration beyond the always-present columns.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct Tracking {
    pub objective: bool,
    pub merit: bool,
}

impl Default for Tracking {
    fn default() -> Self {
        Self {
            objective: true,
            merit: true,
        }
    }
}

pub struct RunConfig<'a> {
    pub mats: &'a AbcMatrices,
    pub problem: &'a ProblemInstance,
    pub gamma: f64,
    pub variant: Variant,
    pub stop: StopRule,
    pub reference: Option<&'a Reference>,
    pub z0: Option<Mat>,
    pub tracking: Tracking,
}

impl<'a> RunConfig<'a> {
    pub fn new(mats: &'a AbcMatrices, problem: &'a ProblemInstance, gamma: f64) -> Self {
        Self {
            mats,
            problem,
            gamma,
            variant: Variant::Abc,
            stop: StopRule::default(),
            reference: None,
            z0: None,
            tracking: Tracking::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub grad_evals: usize,
    pub comm_rounds: usize,
    pub err_opt: Option<f64>,
    pub err_consensus: f64,
    pub merit: Option<f64>,
    pub objective: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Converged,
    MaxIters,
    Diverged { iteration: usize, reason: String },
}

#[derive(Clone, Debug)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    pub outcome: Outcome,
    /// First iteration at which the stop metric met the tolerance.
    pub hit: Option<usize>,
    pub final_state: AbcState,
}

pub const TRACE_HEADER: &str = "k,grad_evals,comm_rounds,err_opt,err_consensus,merit,objective";

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

impl RunTrace {
    pub fn last(&self) -> &TraceRow {
        self.rows.last().expect("trace holds the initial row")
    }

    pub fn err_opt(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.err_opt).collect()
    }

    pub fn to_csv(&self) -> String {
        rows_to_csv(&self.rows)
    }
}

pub fn rows_to_csv(rows: &[TraceRow]) -> String {
    let mut s = String::from(TRACE_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{:e},{},{}\n",
            r.k,
            r.grad_evals,
            r.comm_rounds,
            opt_cell(r.err_opt),
            r.err_consensus,
            opt_cell(r.merit),
            opt_cell(r.objective)
        ));
    }
    s
}

pub fn rows_from_csv(text: &str) -> Result<Vec<TraceRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == TRACE_HEADER => {}
        other => return Err(Error::Parse(format!("unexpected trace header {other:?}"))),
    }
    let parse_opt = |c: &str| -> Result<Option<f64>> {
        if c.is_empty() {
            Ok(None)
        } else {
            c.parse().map(Some).map_err(|e| Error::Parse(format!("{c}: {e}")))
        }
    };
    let parse_usize = |c: &str| c.parse::<usize>().map_err(|e| Error::Parse(format!("{c}: {e}")));
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            if c.len() != 7 {
                return Err(Error::Parse(format!("expected 7 columns: {l}")));
            }
            Ok(TraceRow {
                k: parse_usize(c[0])?,
                grad_evals: parse_usize(c[1])?,
                comm_rounds: parse_usize(c[2])?,
                err_opt: parse_opt(c[3])?,
                err_consensus: c[4].parse().map_err(|e| Error::Parse(format!("{}: {e}", c[4])))?,
                merit: parse_opt(c[5])?,
                objective: parse_opt(c[6])?,
            })
        })
        .collect()
}

fn consensus_error(x: &Mat) -> f64 {
    let m = x.nrows() as f64;
    let mean = x.row_sum() / m;
    let mut s = 0.0;
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            s += (x[(i, j)] - mean[j]).powi(2);
        }
    }
    s.sqrt()
}

fn err_to(x: &Mat, x_star: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..x.nrows() {
        for (j, xs) in x_star.iter().enumerate() {
            s += (x[(i, j)] - xs).powi(2);
        }
    }
    s.sqrt()
}

fn record(state: &AbcState, cfg: &RunConfig<'_>) -> TraceRow {
    let objective = cfg
        .tracking
        .objective
        .then(|| cfg.problem.stacked_objective(&state.x).unwrap_or(f64::NAN));
    TraceRow {
        k: state.k,
        grad_evals: state.grad_evals,
        comm_rounds: state.comm_rounds,
        err_opt: cfg.reference.map(|r| err_to(&state.x, &r.x_star)),
        err_consensus: consensus_error(&state.x),
        merit: match (cfg.reference, cfg.tracking.merit) {
            (Some(r), true) => Some(r.merit(cfg.problem, &state.averaged_x()).value),
            _ => None,
        },
        objective,
    }
}

/// Runs until the stop metric meets the tolerance, the iteration cap, or
/// divergence. Divergence is reported in [`RunTrace::outcome`] with the
/// partial trace; only malformed inputs return `Err`.
pub fn run(cfg: RunConfig<'_>) -> Result<RunTrace> {
    if !(cfg.gamma > 0.0 && cfg.gamma.is_finite()) {
        return Err(invalid(format!("stepsize {} must be positive", cfg.gamma)));
    }
    if matches!(cfg.variant, Variant::SublinearProx | Variant::Underline) {
        cfg.mats.d_or_err()?;
    }
    let metric = cfg.stop.metric.unwrap_or(if cfg.reference.is_some() {
        StopMetric::ErrOpt
    } else {
        StopMetric::FixedPoint
    });
    if cfg.reference.is_none() && metric != StopMetric::FixedPoint {
        return Err(invalid("the stop metric needs an oracle solution"));
    }
    if let Some(r) = cfg.reference {
        if r.x_star.len() != cfg.problem.d() {
            return Err(invalid("oracle dimension mismatch"));
        }
    }
    let mut state = AbcState::new(cfg.mats, cfg.problem, cfg.gamma, cfg.variant, cfg.z0.clone())?;
    let mut rows = vec![record(&state, &cfg)];
    let metric_value = |state: &AbcState, row: &TraceRow| -> f64 {
        match metric {
            StopMetric::ErrOpt => row.err_opt.unwrap_or(f64::NAN),
            StopMetric::MeritAvg => row
                .merit
                .unwrap_or_else(|| cfg.reference.map(|r| r.merit(cfg.problem, &state.averaged_x()).value).unwrap_or(f64::NAN)),
            StopMetric::MeritLast => cfg.reference.map(|r| r.merit(cfg.problem, &state.x).value).unwrap_or(f64::NAN),
            StopMetric::FixedPoint => state.residual,
        }
    };
    let mut hit = None;
    if metric_value(&state, &rows[0]) <= cfg.stop.tol {
        hit = Some(0);
    }
    let mut outcome = Outcome::MaxIters;
    if hit.is_some() && !cfg.stop.run_to_cap {
        outcome = Outcome::Converged;
    } else {
        while state.k < cfg.stop.max_iters {
            if let Err(e) = step_variant(cfg.variant, &mut state, cfg.mats, cfg.problem, cfg.gamma) {
                outcome = Outcome::Diverged {
                    iteration: state.k,
                    reason: e.to_string(),
                };
                break;
            }
            let row = record(&state, &cfg);
            let v = metric_value(&state, &row);
            let err_check = row.err_opt.unwrap_or(0.0).max(if metric == StopMetric::FixedPoint { v } else { 0.0 });
            rows.push(row);
            if !v.is_finite() || err_check > DIVERGENCE_LIMIT {
                outcome = Outcome::Diverged {
                    iteration: state.k,
                    reason: format!("error {v:e} beyond limit"),
                };
                break;
            }
            if hit.is_none() && v <= cfg.stop.tol {
                hit = Some(state.k);
                if !cfg.stop.run_to_cap {
                    outcome = Outcome::Converged;
                    break;
                }
            }
        }
        if hit.is_some() && outcome == Outcome::MaxIters {
            outcome = Outcome::Converged;
        }
    }
    Ok(RunTrace {
        rows,
        outcome,
        hit,
        final_state: state,
    })
}
