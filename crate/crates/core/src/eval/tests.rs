use std::collections::BTreeSet;
use std::sync::Arc;

use approx::assert_relative_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::observations::{FeatureMatrix, ObservationSet, Sample, Source};
use crate::params::ParamSpec;
use crate::testkit::{random_model, random_obs};
use crate::train::{EpochRecord, TrainConfig};

fn bare_set(flows: Vec<Vec<Option<f64>>>, periods: Vec<usize>) -> ObservationSet {
    let n = flows[0].len();
    let np = periods.iter().max().unwrap() + 1;
    ObservationSet {
        periods: (0..np).map(|p| format!("p{p}")).collect(),
        link_feature_names: vec![],
        node_feature_names: vec![],
        samples: flows
            .into_iter()
            .zip(periods)
            .enumerate()
            .map(|(i, (f, period))| Sample {
                id: i.to_string(),
                period,
                times: f.clone(),
                flows: f,
                link_features: Arc::new(FeatureMatrix::zeros(n, 0)),
                node_features: Arc::new(FeatureMatrix::zeros(1, 0)),
            })
            .collect(),
        reference_generation: vec![None; np],
        reference_od: vec![None; np],
        flow_std_fallback: None,
    }
}

#[test]
fn folds_are_a_balanced_disjoint_cover() {
    let set = bare_set(vec![vec![Some(1.0); 76]], vec![0]);
    let plan = FoldPlan::new(&set, 5, 3).unwrap();
    for source in Source::ALL {
        let folds = plan.folds(source);
        let mut sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![15, 15, 15, 15, 16]);
        let all: BTreeSet<usize> = folds.iter().flatten().copied().collect();
        assert_eq!(all.len(), 76);
        assert_eq!(all, (0..76).collect());
    }
    assert_ne!(plan.flow, plan.time);
    assert_eq!(plan, FoldPlan::new(&set, 5, 3).unwrap());
    assert_ne!(plan, FoldPlan::new(&set, 5, 4).unwrap());
}

#[test]
fn folds_cover_only_observed_links() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let flows: Vec<Vec<Option<f64>>> = (0..4)
        .map(|_| (0..30).map(|_| rng.random_bool(0.3).then_some(2.0)).collect())
        .collect();
    let set = bare_set(flows, vec![0, 0, 1, 1]);
    let plan = FoldPlan::new(&set, 3, 0).unwrap();
    let covered: Vec<usize> = {
        let mut v: Vec<usize> = plan.flow.iter().flatten().copied().collect();
        v.sort_unstable();
        v
    };
    assert_eq!(covered, set.observed_links(Source::Flow));
    let sizes: Vec<usize> = plan.flow.iter().map(Vec::len).collect();
    assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    for f in 0..3 {
        let train = plan.training_set(&set, f);
        let val = plan.validation_set(&set, f);
        assert_eq!(
            train.count(Source::Flow) + val.count(Source::Flow),
            set.count(Source::Flow)
        );
        for &a in plan.held_out(f, Source::Flow) {
            assert!(train.samples.iter().all(|s| s.flows[a].is_none()));
        }
    }
}

#[test]
fn too_few_links_or_folds_are_rejected() {
    let set = bare_set(vec![vec![Some(1.0), Some(2.0), None]], vec![0]);
    assert!(FoldPlan::new(&set, 3, 0).is_err());
    assert!(FoldPlan::new(&set, 1, 0).is_err());
    assert!(FoldPlan::new(&set, 2, 0).is_ok());
}

#[test]
fn historical_mean_simple_cases() {
    let set = bare_set(vec![vec![Some(10.0), Some(20.0), None]], vec![0]);
    let hm = HistoricalMean::fit(&set, Source::Flow).unwrap();
    assert_eq!(hm.estimate(0, 2), 15.0);
    assert_eq!(hm.estimate(0, 0), 10.0);

    let constant = bare_set(vec![vec![Some(7.0), Some(7.0)], vec![Some(7.0), None]], vec![0, 0]);
    let hm = HistoricalMean::fit(&constant, Source::Flow).unwrap();
    let est = hm.predict(&constant);
    for (s, e) in constant.samples.iter().zip(&est) {
        assert_eq!(metrics(e, &s.flows).mse, Some(0.0));
    }

    // the empty period falls back to the global mean
    let gap = ObservationSet {
        periods: vec!["a".into(), "b".into()],
        reference_generation: vec![None, None],
        reference_od: vec![None, None],
        ..bare_set(vec![vec![Some(4.0), Some(8.0)]], vec![0])
    };
    let hm = HistoricalMean::fit(&gap, Source::Flow).unwrap();
    assert_eq!(hm.fallback_periods, vec![1]);
    assert_eq!(hm.estimate(1, 0), 6.0);
    assert!(HistoricalMean::fit(&bare_set(vec![vec![None]], vec![0]), Source::Flow).is_err());
}

#[test]
fn historical_mean_matches_group_by_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let flows: Vec<Vec<Option<f64>>> = (0..12)
        .map(|_| {
            (0..9)
                .map(|_| rng.random_bool(0.6).then(|| rng.random_range(0.0..100.0)))
                .collect()
        })
        .collect();
    let periods: Vec<usize> = (0..12).map(|i| i % 3).collect();
    let set = bare_set(flows.clone(), periods.clone());
    let hm = HistoricalMean::fit(&set, Source::Flow).unwrap();
    for p in 0..3 {
        let rows: Vec<&Vec<Option<f64>>> = flows
            .iter()
            .zip(&periods)
            .filter(|(_, q)| **q == p)
            .map(|(f, _)| f)
            .collect();
        let all: Vec<f64> = rows.iter().flat_map(|r| r.iter().flatten().copied()).collect();
        let period_mean = all.iter().sum::<f64>() / all.len() as f64;
        for a in 0..9 {
            let own: Vec<f64> = rows.iter().filter_map(|r| r[a]).collect();
            let expect = if own.is_empty() {
                period_mean
            } else {
                own.iter().sum::<f64>() / own.len() as f64
            };
            assert_relative_eq!(hm.estimate(p, a), expect, max_relative = 1e-12);
        }
    }
}

// Gaussian elimination with partial pivoting on the normal equations.
fn normal_equations_oracle(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = x[0].len();
    let mut m = vec![vec![0.0; p + 1]; p];
    for (row, &yi) in x.iter().zip(y) {
        for i in 0..p {
            for j in 0..p {
                m[i][j] += row[i] * row[j];
            }
            m[i][p] += row[i] * yi;
        }
    }
    for c in 0..p {
        let piv = (c..p).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs())).unwrap();
        m.swap(c, piv);
        for r in 0..p {
            if r != c {
                let f = m[r][c] / m[c][c];
                for k in c..=p {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
    }
    (0..p).map(|i| m[i][p] / m[i][i]).collect()
}

#[test]
fn least_squares_cases() {
    // exact linear target
    let x: Vec<Vec<f64>> = (0..6).map(|i| vec![1.0, i as f64, (i * i) as f64]).collect();
    let y: Vec<f64> = x.iter().map(|r| 2.0 - 3.0 * r[1] + 0.5 * r[2]).collect();
    let (b, ridge) = least_squares(&x, &y).unwrap();
    assert!(!ridge);
    for (bi, e) in b.iter().zip([2.0, -3.0, 0.5]) {
        assert!((bi - e).abs() < 1e-9);
    }
    // intercept only gives the mean
    let ones = vec![vec![1.0]; 4];
    let (b, _) = least_squares(&ones, &[1.0, 2.0, 3.0, 6.0]).unwrap();
    assert_relative_eq!(b[0], 3.0, max_relative = 1e-12);
    // duplicated column takes the ridge path and still fits
    let dup: Vec<Vec<f64>> = (0..5).map(|i| vec![1.0, i as f64, i as f64]).collect();
    let y: Vec<f64> = (0..5).map(|i| 1.0 + 2.0 * i as f64).collect();
    let (b, ridge) = least_squares(&dup, &y).unwrap();
    assert!(ridge);
    for (r, yi) in dup.iter().zip(&y) {
        let fit: f64 = r.iter().zip(&b).map(|(a, b)| a * b).sum();
        assert!((fit - yi).abs() < 1e-4);
    }
    assert!(least_squares(&[vec![1.0, 2.0]], &[1.0]).is_err());
}

#[test]
fn least_squares_matches_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..30 {
        let p = rng.random_range(1..6);
        let n = rng.random_range(p + 2..40);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let mut r = vec![1.0];
                r.extend((1..p).map(|_| rng.random_range(-5.0..5.0)));
                r
            })
            .collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let (b, ridge) = least_squares(&x, &y).unwrap();
        assert!(!ridge);
        for (bi, oi) in b.iter().zip(normal_equations_oracle(&x, &y)) {
            assert!((bi - oi).abs() <= 1e-8 * oi.abs().max(1.0), "{bi} vs {oi}");
        }
    }
}

fn kfold_setup() -> (crate::model::NetworkModel, ObservationSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let model = random_model(&mut rng, 3, 3, 5, 2);
    let mut obs = random_obs(&mut rng, &model, 2, 6, 1, 1, 0.1);
    let shared: Vec<_> = obs
        .period_representatives()
        .iter()
        .map(|s| s.unwrap().link_features.clone())
        .collect();
    for s in &mut obs.samples {
        s.link_features = shared[s.period].clone();
    }
    (model, obs)
}

fn short() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn held_out_values_never_influence_training() {
    let (model, obs) = kfold_setup();
    let spec = ParamSpec::default();
    let plan = FoldPlan::new(&obs, 3, 5).unwrap();
    let report = kfold(&model, &obs, &spec, &short(), &plan).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for f in 0..plan.k {
        let mut scrambled = obs.clone();
        for source in Source::ALL {
            for &a in plan.held_out(f, source) {
                for s in &mut scrambled.samples {
                    if let Some(v) = s.values_mut(source)[a].as_mut() {
                        *v = rng.random_range(0.0..1e5);
                    }
                }
            }
        }
        let other = kfold(&model, &scrambled, &spec, &short(), &plan).unwrap();
        let (a, b) = (&report.folds[f], &other.folds[f]);
        assert_eq!(a.params, b.params);
        assert_eq!(
            EpochRecord {
                seconds: 0.0,
                ..a.train.clone()
            },
            EpochRecord {
                seconds: 0.0,
                ..b.train.clone()
            }
        );
        assert_ne!(a.validation.flow, b.validation.flow);
    }
}

#[test]
fn kfold_rows_have_expected_shape_and_counts() {
    let (model, obs) = kfold_setup();
    let plan = FoldPlan::new(&obs, 3, 1).unwrap();
    let report = kfold(&model, &obs, &ParamSpec::default(), &short(), &plan).unwrap();
    let rows = report.rows();
    assert_eq!(rows.len(), 3 * 2 * 2);
    for r in &rows {
        let held = plan.held_out(r.fold, r.source);
        let expect: usize = obs
            .samples
            .iter()
            .map(|s| {
                s.values(r.source)
                    .iter()
                    .enumerate()
                    .filter(|(a, v)| v.is_some() && (held.contains(a) == (r.scope == Scope::Out)))
                    .count()
            })
            .sum();
        assert_eq!(r.metrics.n, expect);
        assert!(r.metrics.mape.unwrap() >= 0.0 && r.metrics.mdape.unwrap() >= 0.0);
    }
    let mut csv = Vec::new();
    write_metrics_csv(&rows, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("fold,source,scope,mape,mdape,mse,r2,n\n"));
    assert_eq!(text.lines().count(), 13);

    for base in [
        historical_mean_rows(&obs, &plan).unwrap(),
        linear_regression_rows(&model, &obs, &plan).unwrap(),
    ] {
        assert_eq!(base.len(), rows.len());
        for (b, m) in base.iter().zip(&rows) {
            assert_eq!(
                (b.fold, b.source, b.scope, b.metrics.n),
                (m.fold, m.source, m.scope, m.metrics.n)
            );
        }
    }
}

#[test]
fn single_point_sweep_equals_kfold() {
    let (model, obs) = kfold_setup();
    let plan = FoldPlan::new(&obs, 2, 9).unwrap();
    let config = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    let spec = ParamSpec::default();
    let points = lambda_sweep(&model, &obs, &spec, &config, &plan, &[config.weights.equilibrium]).unwrap();
    let direct = kfold(&model, &obs, &spec, &config, &plan).unwrap();
    assert_eq!(points.len(), 1);
    for (a, b) in points[0].report.folds.iter().zip(&direct.folds) {
        assert_eq!(a.params, b.params);
    }
    assert!(lambda_sweep(&model, &obs, &spec, &config, &plan, &[]).is_err());
    let mut csv = Vec::new();
    write_sweep_csv(&points, &mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 3);
}
