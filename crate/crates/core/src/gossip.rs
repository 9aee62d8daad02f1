//! Gossip matrices compliant with a communication graph, their K-hop
//! polynomial variants, and the spectral quantities that drive the rates.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::{self, Mat};

pub const SYMMETRY_TOL: f64 = 1e-12;
pub const ROW_SUM_TOL: f64 = 1e-10;
pub const EIGEN_MARGIN: f64 = 1e-12;
/// Eigenvalues closer to zero than this make a matrix "singular" for the
/// purpose of Chebyshev filtering.
pub const SINGULAR_TOL: f64 = 1e-10;

/// Symmetric doubly-stochastic mixing matrix. One application costs `hops`
/// communication rounds.
#[derive(Clone, Debug)]
pub struct GossipMatrix {
    entries: Mat,
    graph: Graph,
    hops: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectralSummary {
    /// `λ_1 ≤ … ≤ λ_m`.
    pub eigenvalues: Vec<f64>,
    /// `λ_max(W − J)`.
    pub rho_com: f64,
    /// `‖W − J‖₂ = max_{i<m} |λ_i|`; equals `rho_com` for positive
    /// semidefinite `W`. This is the half-width of the interval a Chebyshev
    /// filter must damp.
    pub mixing_radius: f64,
}

impl SpectralSummary {
    /// `λ_{m−1}(W)`, the second-largest eigenvalue.
    pub fn second_largest(&self) -> f64 {
        let n = self.eigenvalues.len();
        if n < 2 {
            self.eigenvalues[0]
        } else {
            self.eigenvalues[n - 2]
        }
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues[0]
    }
}

impl GossipMatrix {
    /// Wraps raw entries after checking every invariant.
    pub fn from_entries(entries: Mat, graph: Graph, hops: usize) -> Result<Self> {
        let w = Self { entries, graph, hops };
        w.check()?;
        Ok(w)
    }

    /// Metropolis–Hastings weights `W_ij = 1 / (1 + max(deg_i, deg_j))`.
    pub fn metropolis(graph: &Graph) -> Result<Self> {
        if !graph.is_connected() {
            return Err(Error::Disconnected);
        }
        let m = graph.m();
        let deg = graph.degrees();
        let mut w = Mat::zeros(m, m);
        for (i, j) in graph.edges() {
            let v = 1.0 / (1.0 + deg[i].max(deg[j]) as f64);
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
        for i in 0..m {
            let off: f64 = (0..m).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
            w[(i, i)] = 1.0 - off;
        }
        Self::from_entries(w, graph.clone(), 1)
    }

    /// `(I + W) / 2`; shifts the spectrum into `(0, 1]`.
    pub fn lazy(&self) -> Self {
        let m = self.m();
        Self {
            entries: (Mat::identity(m, m) + &self.entries) * 0.5,
            graph: self.graph.clone(),
            hops: self.hops,
        }
    }

    /// `W^K`, costing `K` times the rounds of `W`.
    pub fn matrix_power(&self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("K must be at least 1"));
        }
        Ok(Self {
            entries: symmetrize(linalg::mat_pow(&self.entries, k)),
            graph: self.graph.clone(),
            hops: self.hops * k,
        })
    }

    /// Chebyshev-accelerated K-hop matrix `P_K(W) = T_K(W/ρ) / T_K(1/ρ)`,
    /// with `ρ` the mixing radius.
    ///
    /// The three-term recurrence is run on normalized iterates
    /// `P_k = T_k(W/ρ) / T_k(1/ρ)` so that large `K` never overflows:
    /// with `s_k = T_k(1/ρ) / T_{k+1}(1/ρ)` and `ω_k = s_{k−1}`,
    /// `P_{k+1} = 2 s_k (W/ρ) P_k − ω_k s_k P_{k−1}`.
    pub fn chebyshev_matrix(&self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("K must be at least 1"));
        }
        let summary = self.spectral_summary()?;
        if summary.eigenvalues.iter().any(|l| l.abs() < SINGULAR_TOL) {
            return Err(Error::Singular("Chebyshev filtering needs an invertible gossip matrix".into()));
        }
        let radius = summary.mixing_radius;
        if radius <= SINGULAR_TOL {
            return Err(Error::ExactConsensus);
        }
        if radius >= 1.0 {
            return Err(Error::Spectral(format!("mixing radius {radius} is not below 1")));
        }
        let m = self.m();
        let scaled = &self.entries / radius;
        let inv = 1.0 / radius;
        // P_0 = I, P_1 = W (T_1(ξ) = ξ).
        let mut prev = Mat::identity(m, m);
        let mut cur = self.entries.clone();
        // omega = T_{k-1}(1/ρ) / T_k(1/ρ) for k = 1.
        let mut omega = radius;
        for _ in 1..k {
            let s = 1.0 / (2.0 * inv - omega);
            let next = (&scaled * &cur) * (2.0 * s) - &prev * (omega * s);
            prev = cur;
            cur = next;
            omega = s;
        }
        Ok(Self {
            entries: symmetrize(cur),
            graph: self.graph.clone(),
            hops: self.hops * k,
        })
    }

    pub fn spectral_summary(&self) -> Result<SpectralSummary> {
        let m = self.m();
        let eigenvalues = linalg::eigenvalues(&self.entries)?;
        let centered = &self.entries - linalg::consensus_projector(m);
        let centered_eig = linalg::eigenvalues(&centered)?;
        let rho_com = *centered_eig.last().expect("non-empty");
        let mixing_radius = centered_eig[0].abs().max(rho_com.abs());
        Ok(SpectralSummary {
            eigenvalues,
            rho_com,
            mixing_radius,
        })
    }

    /// Checks symmetry, stochasticity, graph compliance (1-hop only) and the
    /// spectrum lying in `(−1, 1]`.
    pub fn check(&self) -> Result<()> {
        let m = self.graph.m();
        if self.entries.nrows() != m || self.entries.ncols() != m {
            return Err(Error::Shape {
                expected: format!("{m}x{m}"),
                got: format!("{}x{}", self.entries.nrows(), self.entries.ncols()),
            });
        }
        if self.hops == 0 {
            return Err(Error::invalid("hops must be positive"));
        }
        let asym = linalg::asymmetry(&self.entries);
        if asym > SYMMETRY_TOL {
            return Err(Error::Spectral(format!("gossip matrix asymmetric by {asym:e}")));
        }
        for (i, s) in linalg::row_sums(&self.entries).into_iter().enumerate() {
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Spectral(format!("row {i} sums to {s}")));
            }
        }
        if self.hops == 1 {
            for i in 0..m {
                for j in 0..m {
                    if i != j && self.entries[(i, j)] != 0.0 && !self.graph.has_edge(i, j) {
                        return Err(Error::Spectral(format!("nonzero weight on non-edge ({i}, {j})")));
                    }
                }
            }
        }
        let eig = linalg::sym_eigen(&self.entries)?;
        if eig.min() <= -1.0 + EIGEN_MARGIN || eig.max() > 1.0 + EIGEN_MARGIN {
            return Err(Error::Spectral(format!("eigenvalues [{}, {}] outside (-1, 1]", eig.min(), eig.max())));
        }
        Ok(())
    }

    pub fn entries(&self) -> &Mat {
        &self.entries
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn hops(&self) -> usize {
        self.hops
    }

    pub fn m(&self) -> usize {
        self.graph.m()
    }

    /// Row-major CSV with shortest round-trip decimal formatting.
    pub fn to_csv(&self) -> String {
        matrix_to_csv(&self.entries)
    }
}

fn symmetrize(a: Mat) -> Mat {
    (&a + a.transpose()) * 0.5
}

pub fn matrix_to_csv(a: &Mat) -> String {
    let mut out = String::new();
    for row in a.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

pub fn matrix_from_csv(text: &str) -> Result<Mat> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|c| c.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{c}: {e}"))))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(Error::Parse("ragged or empty matrix".into()));
    }
    let cols = rows[0].len();
    Ok(Mat::from_fn(n, cols, |i, j| rows[i][j]))
}

/// Chebyshev polynomial of the first kind by the three-term recurrence.
pub fn chebyshev_t(k: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if k == 0 {
        return prev;
    }
    for _ in 1..k {
        let next = 2.0 * x * cur - prev;
        prev = cur;
        cur = next;
    }
    cur
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NamedGraph;
    use proptest::prelude::*;

    fn path3() -> GossipMatrix {
        GossipMatrix::metropolis(&Graph::named(NamedGraph::Path, 3).unwrap()).unwrap()
    }

    #[test]
    fn metropolis_path3() {
        // Degrees (1, 2, 1): every edge touches the middle node, weight 1/3.
        let w = path3();
        let expect = [
            [2.0 / 3.0, 1.0 / 3.0, 0.0],
            [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            [0.0, 1.0 / 3.0, 2.0 / 3.0],
        ];
        for i in 0..3 {
            for j in 0..3 {
                assert!((w.entries()[(i, j)] - expect[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn metropolis_two_nodes() {
        let w = GossipMatrix::metropolis(&Graph::named(NamedGraph::Complete, 2).unwrap()).unwrap();
        for v in w.entries().iter() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn metropolis_rejects_disconnected() {
        let g = Graph::from_edges(3, [(0, 1)]).unwrap();
        assert!(matches!(GossipMatrix::metropolis(&g), Err(Error::Disconnected)));
    }

    #[test]
    fn path3_spectrum() {
        let s = path3().spectral_summary().unwrap();
        let expect = [0.0, 2.0 / 3.0, 1.0];
        for (a, b) in s.eigenvalues.iter().zip(expect) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!((s.rho_com - 2.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn lazy_path3_spectrum() {
        let s = path3().lazy().spectral_summary().unwrap();
        let expect = [0.5, 5.0 / 6.0, 1.0];
        for (a, b) in s.eigenvalues.iter().zip(expect) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(s.lambda_min() > 0.0);
    }

    #[test]
    fn lazy_identity_is_identity() {
        let g = Graph::named(NamedGraph::Path, 2).unwrap();
        let w = GossipMatrix::from_entries(Mat::identity(2, 2), g, 1).unwrap();
        assert_eq!(w.lazy().entries(), &Mat::identity(2, 2));
        // The identity does not mix: rho_com = 1.
        assert!((w.spectral_summary().unwrap().rho_com - 1.0).abs() < 1e-12);
    }

    #[test]
    fn averaging_matrix_has_zero_rho() {
        let g = Graph::named(NamedGraph::Complete, 3).unwrap();
        let j = GossipMatrix::from_entries(linalg::consensus_projector(3), g, 1).unwrap();
        assert!(j.spectral_summary().unwrap().rho_com.abs() < 1e-12);
        let j5 = j.matrix_power(5).unwrap();
        assert!((j5.entries() - j.entries()).norm() < 1e-14);
        assert_eq!(j5.hops(), 5);
        assert!(matches!(j.chebyshev_matrix(2), Err(Error::Singular(_)) | Err(Error::ExactConsensus)));
    }

    #[test]
    fn power_one_is_identity_operation() {
        let w = path3();
        assert_eq!(w.matrix_power(1).unwrap().entries(), w.entries());
        assert!(w.matrix_power(0).is_err());
    }

    #[test]
    fn chebyshev_k1_is_w() {
        let w = path3().lazy();
        let p1 = w.chebyshev_matrix(1).unwrap();
        assert!((p1.entries() - w.entries()).norm() < 1e-15);
    }

    #[test]
    fn chebyshev_k2_scalar_formula() {
        // Eigenvalues of P_2(W) must be P_2(λ) = (2(λ/ρ)² − 1)/(2/ρ² − 1).
        let w = path3().lazy();
        let s = w.spectral_summary().unwrap();
        let rho = s.mixing_radius;
        let p2 = w.chebyshev_matrix(2).unwrap().spectral_summary().unwrap();
        let mut expect: Vec<f64> = s
            .eigenvalues
            .iter()
            .map(|&x| (2.0 * (x / rho).powi(2) - 1.0) / (2.0 / (rho * rho) - 1.0))
            .collect();
        expect.sort_by(f64::total_cmp);
        for (a, b) in p2.eigenvalues.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn chebyshev_large_k_is_finite() {
        let w = path3().lazy();
        let p = w.chebyshev_matrix(400).unwrap();
        assert!(p.entries().iter().all(|v| v.is_finite()));
        p.check().unwrap();
    }

    #[test]
    fn chebyshev_rejects_singular() {
        // Path-3 Metropolis has a zero eigenvalue.
        assert!(matches!(path3().chebyshev_matrix(3), Err(Error::Singular(_))));
    }

    #[test]
    fn chebyshev_t_values() {
        assert_eq!(chebyshev_t(0, 0.3), 1.0);
        assert_eq!(chebyshev_t(1, 0.3), 0.3);
        for k in 0..10 {
            let x: f64 = 0.37;
            assert!((chebyshev_t(k, x) - (k as f64 * x.acos()).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_round_trip() {
        let w = path3();
        let back = matrix_from_csv(&w.to_csv()).unwrap();
        assert_eq!(&back, w.entries());
    }

    /// Eigenvalues from the characteristic polynomial: bisection on sign
    /// changes of det(A − tI), computed by Gaussian elimination with
    /// partial pivoting.
    fn char_poly_roots(a: &Mat) -> Vec<f64> {
        let n = a.nrows();
        let det = |t: f64| {
            let mut b = a - Mat::identity(n, n) * t;
            let mut d = 1.0;
            for c in 0..n {
                let p = (c..n).max_by(|&x, &y| b[(x, c)].abs().total_cmp(&b[(y, c)].abs())).unwrap();
                if b[(p, c)] == 0.0 {
                    return 0.0;
                }
                if p != c {
                    b.swap_rows(p, c);
                    d = -d;
                }
                d *= b[(c, c)];
                for r in (c + 1)..n {
                    let f = b[(r, c)] / b[(c, c)];
                    for k in c..n {
                        b[(r, k)] -= f * b[(c, k)];
                    }
                }
            }
            d
        };
        let grid = 40_000;
        let (lo, hi) = (-1.5, 1.5);
        let mut roots = Vec::new();
        let mut prev_t = lo;
        let mut prev_v = det(lo);
        for s in 1..=grid {
            let t = lo + (hi - lo) * s as f64 / grid as f64;
            let v = det(t);
            if v == 0.0 {
                roots.push(t);
            } else if prev_v != 0.0 && prev_v.signum() != v.signum() {
                let (mut a0, mut b0, mut fa) = (prev_t, t, prev_v);
                for _ in 0..100 {
                    let mid = 0.5 * (a0 + b0);
                    let fm = det(mid);
                    if fm.signum() == fa.signum() {
                        a0 = mid;
                        fa = fm;
                    } else {
                        b0 = mid;
                    }
                }
                roots.push(0.5 * (a0 + b0));
            }
            prev_t = t;
            prev_v = v;
        }
        roots
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn constructors_satisfy_invariants(m in 2usize..12, seed in any::<u64>(), k in 1usize..6) {
            let (g, _) = Graph::erdos_renyi_connected(m, 0.5, seed, 10_000).unwrap();
            let w = GossipMatrix::metropolis(&g).unwrap();
            w.check().unwrap();
            w.lazy().check().unwrap();
            w.matrix_power(k).unwrap().check().unwrap();
            let lazy = w.lazy();
            if lazy.spectral_summary().unwrap().mixing_radius > SINGULAR_TOL {
                lazy.chebyshev_matrix(k).unwrap().check().unwrap();
            }
        }

        #[test]
        fn chebyshev_never_worse_than_power_on_psd(m in 2usize..=12, seed in any::<u64>(), k in 1usize..8) {
            let (g, _) = Graph::erdos_renyi_connected(m, 0.4, seed, 10_000).unwrap();
            let w = GossipMatrix::metropolis(&g).unwrap().lazy();
            prop_assume!(w.spectral_summary().unwrap().mixing_radius > 1e-6);
            let cheb = w.chebyshev_matrix(k).unwrap().spectral_summary().unwrap().rho_com;
            let pow = w.matrix_power(k).unwrap().spectral_summary().unwrap().rho_com;
            prop_assert!(cheb <= pow + 1e-12, "cheb {} > pow {}", cheb, pow);
        }

        #[test]
        fn power_rho_is_rho_to_the_k(m in 2usize..10, seed in any::<u64>(), k in 1usize..6) {
            let (g, _) = Graph::erdos_renyi_connected(m, 0.5, seed, 10_000).unwrap();
            let w = GossipMatrix::metropolis(&g).unwrap().lazy();
            let rho = w.spectral_summary().unwrap().rho_com;
            let rho_k = w.matrix_power(k).unwrap().spectral_summary().unwrap().rho_com;
            prop_assert!((rho_k - rho.powi(k as i32)).abs() < 1e-10);
        }

        #[test]
        fn eigenvalues_match_characteristic_polynomial(m in 2usize..=4, seed in any::<u64>()) {
            let (g, _) = Graph::erdos_renyi_connected(m, 0.6, seed, 10_000).unwrap();
            let w = GossipMatrix::metropolis(&g).unwrap();
            let ours = w.spectral_summary().unwrap().eigenvalues;
            let roots = char_poly_roots(w.entries());
            // Repeated roots do not change sign; every simple root must match.
            for r in &roots {
                prop_assert!(ours.iter().any(|l| (l - r).abs() < 1e-8), "root {} not in {:?}", r, ours);
            }
            // Multiplicities hide roots, so the converse only holds when all are simple.
            if roots.len() == m {
                for l in &ours {
                    prop_assert!(roots.iter().any(|r| (l - r).abs() < 1e-8));
                }
            }
        }
    }
}
