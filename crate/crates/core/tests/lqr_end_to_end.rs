use hjb_core::backward::{generate_backward, BackwardConfig};
use hjb_core::bvp::{solve_tpbvp, BvpOptions};
use hjb_core::dataset::{read_jsonl, write_jsonl};
use hjb_core::hj::{char_min_value, CharMinConfig};
use hjb_core::marching::MarchSettings;
use hjb_core::net::{train, AdamStage, LbfgsStage, TrainConfig};
use hjb_core::pipeline::{
    closed_loop_sim, generate_seed, network_for, validate, warmstart_guess, Feedback, HalfSquaredNorm, SeedConfig,
    ValueModel,
};
use hjb_core::problem::Lqr;
use hjb_core::spectral::{interpolate_solution, solve_ps, PsConfig};
use hjb_core::ValueNet;

#[test]
fn every_method_recovers_half_x_squared() {
    let p = Lqr::new(1.0);
    for x0 in [-1.5, -0.3, 0.0, 0.7, 2.0] {
        let exact = 0.5 * x0 * x0;
        let tp = MarchSettings::default().solve(&p, 0.0, &[x0]).unwrap();
        assert!((tp.value() - exact).abs() < 1e-6, "tpbvp at {x0}");
        assert!((tp.costate0()[0] - x0).abs() < 1e-6);

        let cm = char_min_value(&p, 0.0, &[x0], &CharMinConfig { starts: 4, ..Default::default() }).unwrap();
        assert!((cm.value - exact).abs() < 1e-4, "char-min at {x0}: {}", cm.value);

        let ps = solve_ps(&p, 0.0, &[x0], &PsConfig::default()).unwrap();
        assert!((ps.value - exact).abs() < 1e-4, "pseudospectral at {x0}: {}", ps.value);
        let (x_half, _) = interpolate_solution(&ps, 0.5).unwrap();
        assert!((x_half[0] - Lqr::trajectory(0.0, x0, 0.5)).abs() < 1e-4);

        let guess = warmstart_guess(&HalfSquaredNorm, &p, 0.0, &[x0]).unwrap();
        let warm = solve_tpbvp(&p, 0.0, &[x0], &guess, &BvpOptions::default()).unwrap();
        assert!((warm.value() - exact).abs() < 1e-6);
    }
}

#[test]
fn backward_samples_lie_on_the_value_function() {
    let p = Lqr::new(1.0);
    let nominal = MarchSettings::default().solve(&p, 0.0, &[0.8]).unwrap();
    let data = generate_backward(&p, &nominal, &BackwardConfig { count: 10, radius: 0.2, seed: 4, ..Default::default() }).unwrap();
    assert_eq!(data.report.kept, 10);
    for s in &data.samples {
        assert!((s.v - 0.5 * s.x[0] * s.x[0]).abs() < 1e-7);
        assert!((s.lambda[0] - s.x[0]).abs() < 1e-7);
    }
}

#[test]
fn seed_train_persist_validate_simulate() {
    let p = Lqr::new(1.0);
    let data = generate_seed(&p, &SeedConfig { count: 32, seed: 5, ..Default::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("seed.jsonl");
    write_jsonl(&file, &data.samples).unwrap();
    let samples = read_jsonl(&file).unwrap();
    assert_eq!(samples, data.samples);

    let cfg = TrainConfig {
        adam: AdamStage { learning_rate: 1e-2, steps: 300 },
        lbfgs: LbfgsStage { memory: 10, max_iter: 1000, gtol: 1e-9 },
        ..Default::default()
    };
    let (model, history) = train(&network_for(&p, &[16, 16], 1).unwrap(), &samples, &cfg).unwrap();
    assert!(history.last().unwrap().loss <= history[0].loss);
    assert!((model.value(0.0, &[1.0]) - 0.5).abs() < 0.05);

    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let loaded = ValueNet::load(&path).unwrap();
    for x in [-1.0, 0.1, 0.9] {
        assert_eq!(loaded.forward(0.3, &[x]).to_bits(), model.forward(0.3, &[x]).to_bits());
    }

    let report = validate(&loaded, &p, 20, 9, &MarchSettings::default(), 2).unwrap();
    assert!(report.rel_l2_value < 1e-2, "{report:?}");
    assert_eq!(report.convergence_rate, 1.0);

    for x0 in [-1.0, 0.4, 1.0] {
        let v = 0.5 * x0 * x0;
        for feedback in [Feedback::TimeVarying, Feedback::Frozen] {
            let run = closed_loop_sim(&loaded, &p, 0.0, &[x0], feedback).unwrap();
            assert!(run.cost >= v - 1e-6, "feedback beat the value function");
            assert!(run.cost <= 1.05 * v + 1e-6, "{feedback:?} at {x0}: {} vs {v}", run.cost);
        }
    }
}
