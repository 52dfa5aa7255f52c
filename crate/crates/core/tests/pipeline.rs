use comdf_core::analysis::{
    block_traces, build_error_system, gap_sweep, propagate_covariance, shared_initial_covariance, steady_state,
};
use comdf_core::graph::DiGraph;
use comdf_core::linalg::{spectral_norm, spectral_radius};
use comdf_core::model::{PlantModel, Sensor, SensorSuite};
use comdf_core::sim::{run_monte_carlo, ScenarioConfig, SimContext};
use comdf_core::{Matrix, Vector};

fn undirected_tracking() -> ScenarioConfig {
    let mut cfg = ScenarioConfig::tracking();
    cfg.graph = DiGraph::tracking_network().undirected();
    cfg
}

fn scalar_pair() -> ScenarioConfig {
    let s = Sensor::new(Matrix::identity(1, 1), Matrix::identity(1, 1)).unwrap();
    ScenarioConfig {
        plant: PlantModel::new(Matrix::from_element(1, 1, 0.9), Matrix::identity(1, 1)).unwrap(),
        suite: SensorSuite::new(vec![s.clone(), s]).unwrap(),
        graph: DiGraph::complete(2).unwrap(),
        fusion_steps: 2,
        horizon: 60,
        trials: 4000,
        seed: 5,
        x0: Vector::zeros(1),
        p0: Matrix::identity(1, 1),
        ..ScenarioConfig::tracking()
    }
}

#[test]
fn deep_fusion_follows_centralized_filter_on_every_trial() {
    let mut cfg = undirected_tracking();
    cfg.fusion_steps = 200;
    cfg.horizon = 40;
    let ctx = SimContext::new(&cfg).unwrap();
    for t in 0..3 {
        let errs = ctx.trial_errors(t).unwrap();
        for (row, central) in errs.distributed.iter().zip(&errs.central) {
            for e in row {
                assert!((e - central).abs().max() < 1e-5);
            }
        }
    }
}

#[test]
fn scalar_pair_mse_matches_analytic_trace() {
    let cfg = scalar_pair();
    let series = run_monte_carlo(&cfg).unwrap();
    let (mse, central) = series.steady(30, 61).unwrap();
    let ctx = SimContext::new(&cfg).unwrap();
    let sys = build_error_system(&cfg.plant, &cfg.suite, &ctx.gains, &ctx.design, cfg.fusion_steps).unwrap();
    let st = steady_state(&sys).unwrap();
    let traces = block_traces(&st.p_l, 2, 1);
    for (m, t) in mse.iter().zip(&traces) {
        assert!((m - t).abs() / t < 0.05, "mse {m} vs {t}");
    }
    let c = st.central_block.trace();
    assert!((central - c).abs() / c < 0.05, "central {central} vs {c}");
}

#[test]
fn transient_mse_tracks_covariance_recursion() {
    let cfg = scalar_pair();
    let series = run_monte_carlo(&cfg).unwrap();
    let ctx = SimContext::new(&cfg).unwrap();
    let sys = build_error_system(&cfg.plant, &cfg.suite, &ctx.gains, &ctx.design, cfg.fusion_steps).unwrap();
    let mut p = shared_initial_covariance(&cfg.p0, 2);
    for k in 1..=10 {
        p = propagate_covariance(&sys, &p);
        let predicted = p[(0, 0)];
        let got = series.sensors[k][0];
        assert!((got - predicted).abs() / predicted < 0.08, "k={k}: {got} vs {predicted}");
    }
}

#[test]
fn undirected_gap_decays_with_depth() {
    let cfg = undirected_tracking();
    let ctx = SimContext::new(&cfg).unwrap();
    assert!(ctx.design.norm_g() < 1.0);
    let ls: Vec<usize> = (1..=40).collect();
    let report = gap_sweep(&cfg.plant, &cfg.suite, &ctx.gains, &ctx.design, &ls).unwrap();
    assert!(report.gap(40).unwrap() / report.gap(10).unwrap() < 1e-2);
    assert!(report.summary.log_slope.unwrap() <= ctx.design.norm_g().ln() + 0.05);
    for row in &report.rows {
        let gap = row.gap.unwrap();
        assert!(gap <= row.bound_norm.unwrap() * (1.0 + 1e-12));
        assert!(row.series_residual.unwrap() < 1e-6, "l={} residual {:?}", row.l, row.series_residual);
    }
}

#[test]
fn error_dynamics_stable_for_every_positive_depth_on_tracking() {
    let cfg = ScenarioConfig::tracking();
    let ctx = SimContext::new(&cfg).unwrap();
    let rho0 = spectral_radius(&build_error_system(&cfg.plant, &cfg.suite, &ctx.gains, &ctx.design, 0).unwrap().a_l)
        .unwrap();
    assert!((rho0 - 1.0).abs() < 1e-9);
    for l in 1..=30 {
        let sys = build_error_system(&cfg.plant, &cfg.suite, &ctx.gains, &ctx.design, l).unwrap();
        assert!(spectral_radius(&sys.a_l).unwrap() < 1.0, "l = {l}");
    }
}

#[test]
fn steady_covariances_are_symmetric_psd() {
    let cfg = ScenarioConfig::tracking();
    let ctx = SimContext::new(&cfg).unwrap();
    for l in [1, 5, 20] {
        let sys = build_error_system(&cfg.plant, &cfg.suite, &ctx.gains, &ctx.design, l).unwrap();
        let st = steady_state(&sys).unwrap();
        for p in [&st.p_l, &st.p_cc] {
            assert!(spectral_norm(&(p - p.transpose())) < 1e-12);
            assert!(p.clone().symmetric_eigenvalues().min() > -1e-9);
        }
    }
}
