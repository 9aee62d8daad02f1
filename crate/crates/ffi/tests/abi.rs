use std::ffi::{CStr, CString};
use std::ptr;

use abc_core::experiments::{ExperimentConfig, ExperimentKind};
use abc_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(abc_last_error_message()) }.to_string_lossy().into_owned()
}

fn ring_gossip(m: usize) -> *mut AbcGossip {
    let shape = CString::new("ring").unwrap();
    let mut g = ptr::null_mut();
    let mut w = ptr::null_mut();
    unsafe {
        assert_eq!(abc_graph_named(shape.as_ptr(), m, &mut g), AbcStatus::Ok);
        assert_eq!(abc_gossip_metropolis(g, false, &mut w), AbcStatus::Ok);
        abc_graph_free(g);
    }
    w
}

fn small_problem(m: usize) -> *mut AbcProblem {
    let params = AbcElasticNetParams {
        m,
        r: 5,
        d: 6,
        ..abc_elastic_net_default_params()
    };
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { abc_problem_elastic_net(&params, &mut p) }, AbcStatus::Ok);
    p
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(abc_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_arguments_are_reported() {
    let mut g = ptr::null_mut();
    let s = unsafe { abc_graph_named(ptr::null(), 4, &mut g) };
    assert_eq!(s, AbcStatus::NullPointer);
    assert!(last_error().contains("shape"));
    assert!(g.is_null());
    unsafe { abc_graph_free(ptr::null_mut()) };
    assert_eq!(unsafe { abc_graph_num_agents(ptr::null()) }, 0);
}

#[test]
fn core_errors_keep_their_kind() {
    let shape = CString::new("hexagon").unwrap();
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { abc_graph_named(shape.as_ptr(), 4, &mut g) }, AbcStatus::InvalidArgument);
    assert!(!last_error().is_empty());

    let edges = CString::new("4\n0 1\n2 3\n").unwrap();
    assert_eq!(unsafe { abc_graph_from_edge_list(edges.as_ptr(), &mut g) }, AbcStatus::Ok);
    let mut w = ptr::null_mut();
    assert_eq!(unsafe { abc_gossip_metropolis(g, false, &mut w) }, AbcStatus::Disconnected);
    unsafe { abc_graph_free(g) };

    let mut gamma = 0.0;
    assert_eq!(unsafe { abc_gamma_star(1.0, -1.0, 1.0, &mut gamma) }, AbcStatus::InvalidArgument);
}

#[test]
fn gossip_entries_are_doubly_stochastic() {
    let w = ring_gossip(6);
    let mut buf = vec![0.0; 36];
    assert_eq!(unsafe { abc_gossip_entries(w, buf.as_mut_ptr(), buf.len()) }, AbcStatus::Ok);
    for i in 0..6 {
        let row: f64 = buf[i * 6..i * 6 + 6].iter().sum();
        let col: f64 = (0..6).map(|r| buf[r * 6 + i]).sum();
        assert!((row - 1.0).abs() < 1e-12 && (col - 1.0).abs() < 1e-12);
    }
    let mut short = vec![0.0; 35];
    assert_eq!(unsafe { abc_gossip_entries(w, short.as_mut_ptr(), short.len()) }, AbcStatus::Shape);

    let mut s = AbcSpectral::default();
    assert_eq!(unsafe { abc_gossip_spectral(w, &mut s) }, AbcStatus::Ok);
    // Ring of 6 with weight 1/3: eigenvalues (1 + 2cos(2πj/6))/3.
    assert!((s.lambda_second - 2.0 / 3.0).abs() < 1e-12);
    assert!((s.lambda_min + 1.0 / 3.0).abs() < 1e-12);
    unsafe { abc_gossip_free(w) };
}

#[test]
fn weights_rates_and_run_round_trip() {
    let m = 8;
    let w = ring_gossip(m);
    let p = small_problem(m);
    let (mut l, mut mu) = (0.0, 0.0);
    let (mut pm, mut pd) = (0, 0);
    unsafe {
        assert_eq!(abc_problem_constants(p, &mut l, &mut mu), AbcStatus::Ok);
        assert_eq!(abc_problem_dims(p, &mut pm, &mut pd), AbcStatus::Ok);
    }
    assert_eq!((pm, pd), (m, 6));
    assert!(l >= mu && mu > 0.0);

    let name = CString::new("nids").unwrap();
    let mut wts = ptr::null_mut();
    assert_eq!(unsafe { abc_weights_preset(name.as_ptr(), w, f64::NAN, &mut wts) }, AbcStatus::Ok);
    let mut c = vec![0.0; m * m];
    assert_eq!(unsafe { abc_weights_matrix(wts, AbcWhich::C, c.as_mut_ptr(), c.len()) }, AbcStatus::Ok);
    assert!(c.chunks(m).all(|r| r.iter().sum::<f64>().abs() < 1e-12));

    let gamma = 2.0 / (l + mu);
    let mut passed = false;
    assert_eq!(
        unsafe { abc_weights_validate(wts, gamma, l, mu, AbcAssumption::LinearG, &mut passed) },
        AbcStatus::Ok
    );
    assert!(passed, "nids fails its assumptions");
    let mut json = ptr::null_mut();
    assert_eq!(
        unsafe { abc_weights_validate_json(wts, gamma, l, mu, AbcAssumption::LinearG, &mut json) },
        AbcStatus::Ok
    );
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    unsafe { abc_string_free(json) };
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(v["clauses"].as_array().is_some_and(|c| !c.is_empty()));

    let mut rate = AbcRate::default();
    assert_eq!(unsafe { abc_rate(wts, gamma, l, mu, AbcRateMode::G, &mut rate) }, AbcStatus::Ok);
    assert!(rate.feasible && rate.delta < 1.0);

    let mut x_star = vec![0.0; pd];
    let mut residual = f64::NAN;
    assert_eq!(
        unsafe { abc_oracle_solve(p, 1e-12, 100_000, x_star.as_mut_ptr(), pd, &mut residual) },
        AbcStatus::Ok
    );
    assert!(residual <= 1e-10);

    let stop = AbcStop {
        max_iters: 20_000,
        tol: 1e-8,
        metric: AbcStopMetric::ErrOpt,
        run_to_cap: false,
    };
    let mut run = ptr::null_mut();
    let s = unsafe { abc_run(wts, p, gamma, AbcVariant::Abc, &stop, x_star.as_ptr(), pd, &mut run) };
    assert_eq!(s, AbcStatus::Ok, "{}", last_error());
    let mut outcome = AbcOutcome::Diverged;
    assert_eq!(unsafe { abc_run_outcome(run, &mut outcome) }, AbcStatus::Ok);
    assert_eq!(outcome, AbcOutcome::Converged);
    let n = unsafe { abc_run_num_rows(run) };
    assert_eq!(unsafe { abc_run_hit(run) }, n as i64 - 1);
    let mut first = AbcTraceRow::default();
    let mut last = AbcTraceRow::default();
    unsafe {
        assert_eq!(abc_run_row(run, 0, &mut first), AbcStatus::Ok);
        assert_eq!(abc_run_row(run, n - 1, &mut last), AbcStatus::Ok);
        assert_eq!(abc_run_row(run, n, &mut last), AbcStatus::InvalidArgument);
    }
    assert_eq!(first.k, 0);
    assert!(last.err_opt <= 1e-8);
    assert!(!last.merit.is_nan());

    let mut x = vec![0.0; m * pd];
    assert_eq!(unsafe { abc_run_final_x(run, x.as_mut_ptr(), x.len()) }, AbcStatus::Ok);
    for row in x.chunks(pd) {
        let dist: f64 = row.iter().zip(&x_star).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(dist < 1e-6);
    }

    unsafe {
        abc_run_free(run);
        abc_weights_free(wts);
        abc_problem_free(p);
        abc_gossip_free(w);
    }
}

#[test]
fn run_without_oracle_uses_fixed_point() {
    let m = 5;
    let w = ring_gossip(m);
    let p = small_problem(m);
    let name = CString::new("extra").unwrap();
    let mut wts = ptr::null_mut();
    assert_eq!(unsafe { abc_weights_preset(name.as_ptr(), w, f64::NAN, &mut wts) }, AbcStatus::Ok);
    let (mut l, mut mu) = (0.0, 0.0);
    unsafe { abc_problem_constants(p, &mut l, &mut mu) };
    let stop = AbcStop {
        max_iters: 50_000,
        tol: 1e-10,
        metric: AbcStopMetric::FixedPoint,
        run_to_cap: false,
    };
    let mut run = ptr::null_mut();
    assert_eq!(
        unsafe { abc_run(wts, p, 1.0 / l, AbcVariant::Eliminated, &stop, ptr::null(), 0, &mut run) },
        AbcStatus::Ok
    );
    let mut row = AbcTraceRow::default();
    unsafe { abc_run_row(run, 0, &mut row) };
    assert!(row.err_opt.is_nan() && row.merit.is_nan());
    assert!(unsafe { abc_run_hit(run) } > 0);
    unsafe {
        abc_run_free(run);
        abc_weights_free(wts);
        abc_problem_free(p);
        abc_gossip_free(w);
    }
}

#[test]
fn tradeoff_and_marker() {
    let mut t = AbcTradeoff::default();
    assert_eq!(unsafe { abc_tradeoff(0.9, 10.0, &mut t) }, AbcStatus::Ok);
    assert!(t.k_chebyshev <= t.k_plain);
    assert!(t.rho_c <= t.rho_opt * t.rho_opt + 1e-12);
    let mut marker = 0;
    assert_eq!(unsafe { abc_predicted_marker(10.0, 0.9, &mut marker) }, AbcStatus::Ok);
    // ⌈2 ln(9/11) / ln(0.95)⌉
    assert_eq!(marker, 8);
}

#[test]
fn experiment_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::preset(ExperimentKind::Fig2, 3);
    let cfg = CString::new(cfg.to_json()).unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut diverged = true;
    let s = unsafe { abc_experiment_run(cfg.as_ptr(), out.as_ptr(), &mut diverged) };
    assert_eq!(s, AbcStatus::Ok, "{}", last_error());
    assert!(!diverged);
    assert!(dir.path().join("manifest.json").exists());

    let bad = CString::new("{not json").unwrap();
    assert_eq!(
        unsafe { abc_experiment_run(bad.as_ptr(), out.as_ptr(), ptr::null_mut()) },
        AbcStatus::Json
    );
}
