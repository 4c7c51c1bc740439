use lagreg_core::catalog::{cyclic_free_particle, degenerate_metric_particle, load_scenario};
use lagreg_core::config::RunConfig;
use lagreg_core::constraints::detect_complete_lift;
use lagreg_core::dynamics::{integrate, monitor_invariants};
use lagreg_core::forms::omega_matrix;
use lagreg_core::par;
use lagreg_core::regularizer::{build_regularized_lagrangian, restriction_check, verify_regularity, Hypothesis};
use proptest::prelude::*;

#[test]
fn config_to_regularized_trajectory() {
    let cfg = RunConfig::from_json(r#"{"scenario": "cyclic_free_particle", "simulation": {"t1": 2.0}}"#).unwrap();
    let s = cfg.resolve().unwrap();
    let pts = s.sampling.sample(s.chart()).unwrap();
    let report = detect_complete_lift(&s.system, &pts, 1e-6).unwrap();
    assert!(report.is_complete_lift);

    let reg = build_regularized_lagrangian(&s.system, &s.almost_product, &s.connection, Hypothesis::Detected(&report)).unwrap();
    let embedded: Vec<Vec<f64>> = pts.iter().map(|p| reg.thickened.embed(p).unwrap()).collect();
    restriction_check(&reg, &embedded).unwrap();
    let regularity = verify_regularity(&reg, &embedded, 1e-9, &[0.1, 1.0]).unwrap();
    assert!(regularity.sigma_min.iter().all(|&s| s > 1e-9));

    let sim = s.simulation.as_ref().unwrap();
    let start = reg.thickened.embed(&sim.initial).unwrap();
    let traj = integrate(&reg.system, &start, sim.t_span, &sim.options).unwrap();
    assert_eq!(traj.times.last().copied(), Some(2.0));
    let inv = monitor_invariants(&reg.system, &traj, &[]).unwrap();
    assert!(inv.max_energy_drift < 1e-9);
    assert!(traj.states.iter().all(|p| reg.thickened.thickening_norm(p) < 1e-9));
}

#[test]
fn every_catalog_name_loads() {
    for name in lagreg_core::catalog::SCENARIO_NAMES {
        let s = load_scenario(name).unwrap();
        assert_eq!(s.name, *name);
    }
    assert!(load_scenario("torus").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn regularized_lagrangian_restricts_to_original(p in proptest::collection::vec(-2.0f64..2.0, 4)) {
        let s = degenerate_metric_particle();
        let reg = build_regularized_lagrangian(&s.system, &s.almost_product, &s.connection, Hypothesis::Declared).unwrap();
        let q = reg.thickened.embed(&p).unwrap();
        let l = s.system.lagrangian.eval(&p).unwrap();
        let lt = reg.system.lagrangian.eval(&q).unwrap();
        prop_assert!((l - lt).abs() <= 1e-12);
    }

    #[test]
    fn parallel_map_matches_sequential(seed in 0u64..1000) {
        let s = cyclic_free_particle();
        let pts = s.sampling.clone().with_seed(seed).with_count(16).sample(s.chart()).unwrap();
        let a = par::map(&pts, |_, p| omega_matrix(&s.system, p).unwrap());
        let b = par::map_sequential(&pts, |_, p| omega_matrix(&s.system, p).unwrap());
        prop_assert_eq!(a, b);
    }
}
