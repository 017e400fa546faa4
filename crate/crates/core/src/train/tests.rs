use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::forward::{loss_with, Normalizers};
use crate::network::Interaction;
use crate::params::initialize;
use crate::testkit::{random_model, random_obs, random_params, toy_model};

fn fd_weights() -> LossWeights {
    LossWeights {
        flow: 1.0,
        time: 0.8,
        equilibrium: 0.7,
        generation: 1e-3,
        od: 2e-3,
    }
}

#[test]
fn gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let spec = ParamSpec::default();
    let weights = fd_weights();
    for case in 0..4 {
        let model = random_model(&mut rng, 3, 3, 6, 3);
        let obs = random_obs(&mut rng, &model, 2, 3, 2, case % 2, 0.3);
        let params = random_params(&mut rng, &model, &obs, 1 + case % 3);
        let sample = &obs.samples[case % obs.len()];
        let norms = Normalizers::for_sample(sample, obs.flow_std_fallback);
        let (_, grad) = gradients(&model, &params, &obs, sample, &weights, &spec).unwrap();
        let f = |p: &ModelParams| {
            let out = forward_pass(&model, p, sample).unwrap();
            loss_with(&out, p, &obs, &weights, sample, &norms).total
        };
        for group in ParamGroup::ALL {
            for i in 0..params.values(group).len() {
                let base = params.values(group)[i];
                let h = 1e-5 * base.abs().max(1.0);
                let mut plus = params.clone();
                plus.values_mut(group)[i] = base + h;
                let mut minus = params.clone();
                minus.values_mut(group)[i] = base - h;
                let fd = (f(&plus) - f(&minus)) / (2.0 * h);
                let an = grad.values(group)[i];
                assert!(
                    (fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()) + 1e-6,
                    "case {case}, {} [{i}]: analytic {an}, numeric {fd}",
                    group.name()
                );
            }
        }
    }
}

#[test]
fn frozen_groups_get_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = random_model(&mut rng, 3, 3, 4, 2);
    let obs = random_obs(&mut rng, &model, 1, 1, 1, 0, 0.0);
    let params = random_params(&mut rng, &model, &obs, 2);
    let spec = ParamSpec::default().only(&[ParamGroup::Theta]);
    let (_, grad) = gradients(&model, &params, &obs, &obs.samples[0], &fd_weights(), &spec).unwrap();
    for g in ParamGroup::ALL {
        if g != ParamGroup::Theta {
            assert_eq!(grad.max_abs(g), 0.0, "{}", g.name());
        }
    }
    assert!(grad.max_abs(ParamGroup::Theta) > 0.0);
}

fn toy_setup() -> (NetworkModel, ObservationSet, ParamSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let model = toy_model(Interaction::SharedNode);
    let mut obs = random_obs(&mut rng, &model, 2, 6, 1, 0, 0.2);
    for r in obs.reference_generation.iter_mut().flatten() {
        r.iter_mut().for_each(|g| *g = 0.0);
        r[model.network.node_index(1).unwrap()] = 800.0;
    }
    // samples of a period share their features
    let shared: Vec<_> = obs
        .period_representatives()
        .iter()
        .map(|s| s.unwrap().link_features.clone())
        .collect();
    for s in &mut obs.samples {
        s.link_features = shared[s.period].clone();
    }
    (model, obs, ParamSpec::default())
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let (model, obs, spec) = toy_setup();
    let p0 = initialize(&spec, &model, &obs).unwrap();
    let config = TrainConfig {
        epochs: 15,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let initial = evaluate(&model, &p0, &obs, &config.weights).unwrap();
    let (p1, trace1) = fit(&model, p0.clone(), &obs, &spec, &config).unwrap();
    let (p2, trace2) = fit(&model, p0.clone(), &obs, &spec, &config).unwrap();
    assert_eq!(p1, p2);
    assert_eq!(trace1.records.len(), 15);
    for (a, b) in trace1.records.iter().zip(&trace2.records) {
        assert_eq!(
            EpochRecord {
                seconds: 0.0,
                ..a.clone()
            },
            EpochRecord {
                seconds: 0.0,
                ..b.clone()
            }
        );
    }
    assert!(trace1.last().unwrap().loss_total < initial.loss_total);
    let other = fit(&model, p0, &obs, &spec, &TrainConfig { seed: 1, ..config })
        .unwrap()
        .0;
    assert_ne!(other, p1);
}

#[test]
fn zero_epochs_return_initial_parameters() {
    let (model, obs, spec) = toy_setup();
    let p0 = initialize(&spec, &model, &obs).unwrap();
    let config = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let (p, trace) = fit(&model, p0.clone(), &obs, &spec, &config).unwrap();
    assert_eq!(p, p0);
    assert!(trace.records.is_empty());
    let mut csv = Vec::new();
    trace.write_csv_to(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().trim(), TrainTrace::CSV_HEADER);
}

#[test]
fn mismatched_inputs_are_rejected() {
    let (model, obs, spec) = toy_setup();
    let mut p = initialize(&spec, &model, &obs).unwrap();
    p.periods.reverse();
    assert!(matches!(
        fit(&model, p, &obs, &spec, &TrainConfig::default()),
        Err(MateError::Config(_))
    ));
    let p = initialize(&spec, &model, &obs).unwrap();
    let bad = TrainConfig {
        batch_size: 0,
        ..TrainConfig::default()
    };
    assert!(fit(&model, p, &obs, &spec, &bad).is_err());
}

#[test]
fn equilibrium_solver_reaches_target_on_toy_network() {
    let (model, obs, spec) = toy_setup();
    let mut p0 = initialize(&spec, &model, &obs).unwrap();
    p0.poly = vec![0.5, 2.0];
    let config = TrainConfig {
        epochs: 200,
        gap_target: Some(1e-4),
        ..TrainConfig::default()
    };
    let run = solve_equilibrium(&model, p0.clone(), &obs, &spec, &config).unwrap();
    assert!(run.converged, "gap {:?}", run.gap);
    assert!(run.gap.unwrap() <= 1e-4);
    // only x̂ moved
    for g in ParamGroup::ALL {
        if g != ParamGroup::LinkFlows {
            assert_eq!(run.params.values(g), p0.values(g), "{}", g.name());
        }
    }
    // restarting from the solution takes zero epochs
    let again = solve_equilibrium(&model, run.params.clone(), &obs, &spec, &config).unwrap();
    assert_eq!(again.epochs, 0);
    assert!(again.converged);
}

#[test]
fn zero_demand_is_already_at_equilibrium() {
    let (model, mut obs, spec) = toy_setup();
    for r in obs.reference_generation.iter_mut().flatten() {
        r.iter_mut().for_each(|g| *g = 0.0);
    }
    let p0 = initialize(&spec, &model, &obs).unwrap();
    let run = solve_equilibrium(&model, p0, &obs, &spec, &TrainConfig::default()).unwrap();
    assert!(run.converged);
    assert_eq!(run.epochs, 0);
}

#[test]
fn inference_ignores_measurements_and_maps_periods() {
    let (model, obs, spec) = toy_setup();
    let mut p0 = initialize(&spec, &model, &obs).unwrap();
    p0.poly = vec![0.5, 2.0];
    let config = TrainConfig {
        epochs: 200,
        gap_target: Some(1e-3),
        ..TrainConfig::default()
    };
    let options = InferOptions {
        gap_target: 1e-3,
        flow_std: Some(150.0),
        ..InferOptions::default()
    };
    // periods listed in the other order, measurements scrambled
    let mut new = obs.clone();
    new.periods.reverse();
    new.reference_generation.reverse();
    new.reference_od.reverse();
    for s in &mut new.samples {
        s.period = 1 - s.period;
        s.flows.iter_mut().for_each(|v| *v = Some(1e6));
    }
    let a = infer(&model, &p0, &obs, &spec, &config, &options).unwrap();
    let b = infer(&model, &p0, &new, &spec, &config, &options).unwrap();
    assert!(a.run.converged);
    assert_eq!(a.run.params, b.run.params);
    assert!(a.run.gap.unwrap() <= 1.2e-3);
    assert_eq!(a.outputs.len(), obs.len());

    let again = infer(&model, &a.run.params, &obs, &spec, &config, &options).unwrap();
    assert_eq!(again.run.epochs, 0);

    let mut unknown = obs.clone();
    unknown.periods[0] = "night".into();
    assert!(matches!(
        infer(&model, &p0, &unknown, &spec, &config, &options),
        Err(MateError::Config(_))
    ));
}

/// Damped fixed-point iteration x̂ ← (1 − α) x̂ + α x(x̂) run to 1e-10.
fn fixed_point_oracle(model: &NetworkModel, params: &ModelParams, sample: &crate::observations::Sample) -> Vec<f64> {
    let mut p = params.clone();
    for _ in 0..100_000 {
        let x = forward_pass(model, &p, sample).unwrap().link_flows;
        let row = p.link_flows.row_mut(sample.period);
        let diff: f64 = x.iter().zip(row.iter()).map(|(a, b)| (a - b).abs()).sum();
        let norm: f64 = x.iter().map(|a| a.abs()).sum();
        if diff <= 1e-10 * norm {
            return x;
        }
        for (r, xa) in row.iter_mut().zip(&x) {
            *r = 0.5 * *r + 0.5 * xa;
        }
    }
    panic!("oracle did not converge");
}

fn single_od_setup() -> (NetworkModel, ObservationSet, ModelParams) {
    let (model, mut obs, spec) = toy_setup();
    obs.samples.retain(|s| s.period == 0);
    obs.samples.truncate(1);
    let mut p = initialize(&spec, &model, &obs).unwrap();
    // essentially all trips to node 4
    p.omega.row_mut(0).copy_from_slice(&[0.0, -60.0]);
    p.poly = vec![0.3, 0.0, 0.0, 1.5];
    (model, obs, p)
}

#[test]
fn equilibrium_matches_damped_fixed_point_oracle() {
    let (model, obs, p0) = single_od_setup();
    let oracle = fixed_point_oracle(&model, &p0, &obs.samples[0]);
    let config = TrainConfig {
        epochs: 5000,
        gap_target: Some(1e-8),
        ..TrainConfig::default()
    };
    let run = solve_equilibrium(&model, p0, &obs, &ParamSpec::default(), &config).unwrap();
    assert!(run.converged, "gap {:?}", run.gap);
    let x = forward_pass(&model, &run.params, &obs.samples[0]).unwrap().link_flows;
    for (a, b) in x.iter().zip(&oracle) {
        assert!(
            (a - b).abs() <= 1e-6 * oracle.iter().cloned().fold(0.0, f64::max),
            "{a} vs {b}"
        );
    }
}

#[test]
fn equilibrium_gradient_vanishes_at_fixed_point() {
    let (model, obs, mut p) = single_od_setup();
    let x = fixed_point_oracle(&model, &p, &obs.samples[0]);
    p.link_flows.row_mut(0).copy_from_slice(&x);
    let spec = ParamSpec::equilibrium();
    let (_, grad) = gradients(
        &model,
        &p,
        &obs,
        &obs.samples[0],
        &LossWeights::equilibrium_only(),
        &spec,
    )
    .unwrap();
    assert!(
        grad.max_abs(ParamGroup::LinkFlows) < 1e-9,
        "{}",
        grad.max_abs(ParamGroup::LinkFlows)
    );
}

#[test]
fn zero_weights_give_zero_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let model = random_model(&mut rng, 3, 3, 5, 2);
    let obs = random_obs(&mut rng, &model, 1, 2, 1, 1, 0.2);
    let params = random_params(&mut rng, &model, &obs, 2);
    let weights = LossWeights {
        flow: 0.0,
        time: 0.0,
        equilibrium: 0.0,
        generation: 0.0,
        od: 0.0,
    };
    let (report, grad) = gradients(&model, &params, &obs, &obs.samples[0], &weights, &ParamSpec::default()).unwrap();
    assert_eq!(report.total, 0.0);
    for g in ParamGroup::ALL {
        assert_eq!(grad.max_abs(g), 0.0, "{}", g.name());
    }
}

#[test]
fn inference_on_training_samples_reproduces_training_outputs() {
    let (model, obs, spec) = toy_setup();
    let p0 = initialize(&spec, &model, &obs).unwrap();
    let config = TrainConfig {
        epochs: 10,
        ..TrainConfig::default()
    };
    let (trained, trace) = fit(&model, p0, &obs, &spec, &config).unwrap();
    let options = InferOptions {
        gap_target: trace.last().unwrap().rel_gap.unwrap(),
        flow_std: obs.mean_flow_std(),
        ..InferOptions::default()
    };
    let inferred = infer(&model, &trained, &obs, &spec, &config, &options).unwrap();
    let training = predict(&model, &trained, &obs).unwrap();
    for (a, b) in inferred.outputs.iter().zip(&training) {
        let m = crate::eval::metrics(
            &a.link_flows,
            &b.link_flows.iter().map(|v| Some(*v)).collect::<Vec<_>>(),
        );
        assert!(m.mape.unwrap() <= 1.0);
        let m = crate::eval::metrics(&a.times, &b.times.iter().map(|v| Some(*v)).collect::<Vec<_>>());
        assert!(m.mape.unwrap() <= 1.0);
    }
}
