use proptest::prelude::*;

use abc_core::abc::{rows_from_csv, rows_to_csv, TraceRow};
use abc_core::experiments::{ExperimentConfig, ExperimentKind};
use abc_core::gossip::{matrix_from_csv, matrix_to_csv};
use abc_core::{GossipMatrix, Graph};

fn opt(v: f64, some: bool) -> Option<f64> {
    some.then_some(v)
}

proptest! {
    #[test]
    fn edge_list_round_trips(m in 2usize..25, p in 0.1f64..0.9, seed in 0u64..1000) {
        let g = Graph::erdos_renyi(m, p, seed).unwrap();
        let back = Graph::from_edge_list(&g.to_edge_list()).unwrap();
        prop_assert_eq!(back.m(), g.m());
        prop_assert_eq!(back.edges().collect::<Vec<_>>(), g.edges().collect::<Vec<_>>());
    }

    #[test]
    fn gossip_csv_is_exact(m in 3usize..15, seed in 0u64..500) {
        let (g, _) = Graph::erdos_renyi_connected(m, 0.5, seed, 100).unwrap();
        let w = GossipMatrix::metropolis(&g).unwrap();
        let back = matrix_from_csv(&w.to_csv()).unwrap();
        prop_assert_eq!(&back, w.entries());
    }

    #[test]
    fn trace_csv_round_trips(
        vals in prop::collection::vec((any::<u16>(), 1e-300f64..1e300, any::<bool>(), any::<bool>()), 1..20)
    ) {
        let rows: Vec<TraceRow> = vals
            .iter()
            .enumerate()
            .map(|(k, &(n, v, a, b))| TraceRow {
                k,
                grad_evals: k,
                comm_rounds: n as usize,
                err_opt: opt(v, a),
                err_consensus: v / 3.0,
                merit: opt(v * 7.0, b),
                objective: opt(-v, a && b),
            })
            .collect();
        let back = rows_from_csv(&rows_to_csv(&rows)).unwrap();
        prop_assert_eq!(back.len(), rows.len());
        for (x, y) in rows.iter().zip(&back) {
            prop_assert_eq!((x.k, x.grad_evals, x.comm_rounds), (y.k, y.grad_evals, y.comm_rounds));
            prop_assert_eq!((x.err_opt, x.merit, x.objective), (y.err_opt, y.merit, y.objective));
            prop_assert_eq!(x.err_consensus, y.err_consensus);
        }
    }
}

#[test]
fn configs_round_trip_through_json() {
    for kind in [ExperimentKind::Fig1, ExperimentKind::Fig2, ExperimentKind::Fig3, ExperimentKind::Custom] {
        let cfg = ExperimentConfig::preset(kind, 17);
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }
}

#[test]
fn unknown_config_fields_are_rejected() {
    let mut v: serde_json::Value = serde_json::from_str(&ExperimentConfig::preset(ExperimentKind::Custom, 1).to_json()).unwrap();
    v["learning_rate"] = 0.1.into();
    assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
}

#[test]
fn ragged_matrix_csv_is_rejected() {
    assert!(matrix_from_csv("1,2\n3\n").is_err());
    assert!(matrix_from_csv("").is_err());
    assert!(matrix_from_csv("1,x\n").is_err());
    let a = matrix_from_csv("0.1,0.2\n0.3,0.4\n").unwrap();
    assert_eq!(matrix_to_csv(&a), "0.1,0.2\n0.3,0.4\n");
}
