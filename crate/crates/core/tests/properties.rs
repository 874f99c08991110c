use dumbbell_core::asymptotics::{fit_rate, RatePoint};
use dumbbell_core::cli::output::fmt_g17;
use dumbbell_core::cli::{parse_config, ExperimentConfig, ExperimentKind};
use dumbbell_core::discretize::graded_nodes;
use dumbbell_core::harmonic::richardson;
use proptest::prelude::*;

proptest! {
    #[test]
    fn g17_round_trips(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        prop_assert_eq!(fmt_g17(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn power_law_fit_is_exact(c in 1e-4f64..10.0, p in 1.0f64..4.0) {
        let pts: Vec<RatePoint> = [0.3, 0.2, 0.12, 0.07]
            .iter()
            .map(|&e: &f64| RatePoint { eps: e, value: c * e.powf(p) })
            .collect();
        let f = fit_rate(&pts, p, None).unwrap();
        prop_assert!((f.slope - p).abs() < 1e-9);
        prop_assert!((f.prefactor - c).abs() < 1e-9 * c);
    }

    #[test]
    fn richardson_removes_power_error(a in -5.0f64..5.0, b in -50.0f64..50.0, r in 4.0f64..40.0, p in 1.0f64..4.0) {
        let at = |rr: f64| a + b * rr.powf(-p);
        let ex = richardson(at(r), at(2.0 * r), p);
        prop_assert!((ex - a).abs() < 1e-10 * (1.0 + b.abs()));
    }

    #[test]
    fn graded_nodes_are_increasing_and_hit_anchors(
        h0 in 0.01f64..0.2,
        growth in 0.0f64..0.3,
        anchor in -3.0f64..3.0,
    ) {
        let size = |x: f64| (h0 + growth * x.abs()).min(1.0);
        let nodes = graded_nodes(-4.0, 4.0, &[anchor, 0.0], &size);
        prop_assert!(nodes.windows(2).all(|w| w[1] > w[0]));
        prop_assert_eq!(nodes[0], -4.0);
        prop_assert_eq!(*nodes.last().unwrap(), 4.0);
        prop_assert!(nodes.iter().any(|x| (x - anchor).abs() < 1e-12));
        prop_assert!(nodes.iter().any(|x| x.abs() < 1e-12));
        for w in nodes.windows(2) {
            // at most one cell per local spacing, up to the quadrature of ∫dx/size
            prop_assert!(w[1] - w[0] <= 1.05 * size(w[0]).max(size(w[1])));
        }
    }

    #[test]
    fn sweep_eps_round_trips(mut eps in prop::collection::btree_set(1u32..999, 3..6)) {
        let list: Vec<f64> = std::mem::take(&mut eps).into_iter().rev().map(|k| k as f64 / 1000.0).collect();
        let text = format!(
            "kind = \"rate\"\nsweep.eps = [{}]\n",
            list.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(", ")
        );
        let cfg = parse_config(&text, &|_| None).unwrap();
        prop_assert_eq!(&cfg.sweep.eps, &list);
        let again = parse_config(&cfg.to_flat_text(), &|_| None).unwrap();
        prop_assert_eq!(again, cfg);
    }
}

#[test]
fn every_kind_has_resolvable_defaults() {
    for k in ExperimentKind::ALL {
        let d = ExperimentConfig::defaults(k).unwrap();
        assert_eq!(d.kind, k);
        assert_eq!(ExperimentKind::parse(k.as_str()), Some(k));
    }
}
