use qfeedback::dynamics::{integrate_deterministic, run_ensemble, Generator, SchemeSpec, TrajectoryConfig};
use qfeedback::fit::{fit_exponential, fit_relaxation};
use qfeedback::predictor::{build_dataset, fit_predictor, predict_next, HomodyneRecord, Hyperparams, MlpModel};
use qfeedback::quantum::DensityMatrix;
use qfeedback::rates;

const GAMMA: f64 = 0.02;

#[test]
fn lossy_ancilla_approaches_purcell_rate() {
    // An undriven ancilla that damps faster than it couples is a Markovian
    // channel for the system: the decay rate tends to γ + 4g²/κ = γ(1 + C).
    let c = 1.84;
    let purcell = GAMMA * (1.0 + c);
    let mut devs = Vec::new();
    for ratio in [10.0, 30.0, 100.0] {
        let g = c * ratio * GAMMA / 4.0;
        let spec = SchemeSpec::ancilla(GAMMA, g, ratio * g);
        let config = TrajectoryConfig::new(0.01 / spec.fastest_rate(), 150.0);
        let trace = integrate_deterministic(Generator::AncillaRelaxation, &spec, &config).unwrap();
        let fit = fit_exponential(&trace).unwrap();
        devs.push(((fit.gamma_eff - purcell) / purcell).abs());
    }
    assert!(devs.windows(2).all(|w| w[1] < w[0]), "{devs:?}");
    assert!(devs[2] < 0.01, "{devs:?}");
}

#[test]
fn feedback_trace_relaxes_at_closed_form_rate() {
    for (eta, k) in [(0.5, 7.0), (1.0, 10.0), (1.0, 20.0)] {
        let lambda = rates::optimal_lambda(GAMMA, eta) * k / 10.0;
        let spec = SchemeSpec::wiseman_milburn(GAMMA, eta, lambda);
        let p_ss = lambda * lambda / rates::gamma_wm(GAMMA, eta, lambda);
        let start = if p_ss < 0.5 { DensityMatrix::excited() } else { DensityMatrix::ground() };
        let config = TrajectoryConfig::new(0.1, 300.0).with_initial_state(start);
        let trace = integrate_deterministic(Generator::WisemanMilburn, &spec, &config).unwrap();
        let fit = fit_relaxation(&trace).unwrap();
        let closed = rates::gamma_wm(GAMMA, eta, lambda);
        assert!(((fit.gamma_eff - closed) / closed).abs() < 1e-6);
        assert!((fit.steady_state - p_ss).abs() < 1e-6);
    }
}

#[test]
fn homodyne_records_train_a_predictor_and_survive_persistence() {
    let spec = SchemeSpec::no_feedback(GAMMA);
    let config = TrajectoryConfig::new(0.01, 60.0).with_seed(3).with_trajectories(2);
    let ens = run_ensemble(&spec, &config, 0.1).unwrap();
    assert_eq!(ens.records.len(), 2);
    let record: &HomodyneRecord = &ens.records[0];
    assert_eq!(record.len(), 600);

    let dataset = build_dataset(record).unwrap();
    let hp = Hyperparams {
        max_epochs: 30,
        ..Default::default()
    };
    let model = fit_predictor(&dataset, &hp).unwrap();
    assert!(model.metadata.test_mse.unwrap().is_finite());

    let path = std::env::temp_dir().join(format!("qfeedback-model-{}.json", std::process::id()));
    std::fs::write(&path, model.to_json()).unwrap();
    let loaded = MlpModel::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
    std::fs::remove_file(&path).ok();
    let window = [0.1, -0.2, 0.05, 0.3, 0.0];
    assert_eq!(predict_next(&model, &window).to_bits(), predict_next(&loaded, &window).to_bits());
}
