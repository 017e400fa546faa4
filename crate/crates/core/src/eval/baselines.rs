use nalgebra::{DMatrix, DVector};

use crate::error::{MateError, Result};
use crate::model::NetworkModel;
use crate::observations::{ObservationSet, Sample, Source};

use super::folds::{score_rows, FoldPlan, MetricsRow};

/// Ridge penalty used when the normal equations are singular.
pub const RIDGE_FALLBACK: f64 = 1e-6;

/// Historical means of one source in a training set.
///
/// Links observed in a period get their own mean; other links get the mean
/// over every observation of that period, or the global mean when the
/// period has none.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoricalMean {
    per_link: Vec<Vec<Option<f64>>>,
    per_period: Vec<Option<f64>>,
    global: f64,
    /// Periods answered with the global mean.
    pub fallback_periods: Vec<usize>,
}

fn mean(sum: f64, n: usize) -> Option<f64> {
    (n > 0).then(|| sum / n as f64)
}

impl HistoricalMean {
    pub fn fit(train: &ObservationSet, source: Source) -> Result<Self> {
        let periods = train.num_periods();
        let links = train.samples.first().map_or(0, |s| s.flows.len());
        let mut link_acc = vec![vec![(0.0, 0usize); links]; periods];
        let mut period_acc = vec![(0.0, 0usize); periods];
        for s in &train.samples {
            for (a, v) in s.values(source).iter().enumerate() {
                if let Some(v) = v {
                    link_acc[s.period][a].0 += v;
                    link_acc[s.period][a].1 += 1;
                    period_acc[s.period].0 += v;
                    period_acc[s.period].1 += 1;
                }
            }
        }
        let (sum, n) = period_acc.iter().fold((0.0, 0), |(s, n), (ps, pn)| (s + ps, n + pn));
        let global =
            mean(sum, n).ok_or_else(|| MateError::Data(format!("no {} observations to average", source.name())))?;
        let per_period: Vec<Option<f64>> = period_acc.iter().map(|&(s, n)| mean(s, n)).collect();
        let fallback_periods: Vec<usize> = (0..periods).filter(|&p| per_period[p].is_none()).collect();
        if !fallback_periods.is_empty() {
            log::warn!(
                "historical mean of {}: periods {fallback_periods:?} have no observations, using the global mean",
                source.name()
            );
        }
        Ok(HistoricalMean {
            per_link: link_acc
                .iter()
                .map(|row| row.iter().map(|&(s, n)| mean(s, n)).collect())
                .collect(),
            per_period,
            global,
            fallback_periods,
        })
    }

    pub fn estimate(&self, period: usize, link: usize) -> f64 {
        self.per_link[period][link]
            .or(self.per_period[period])
            .unwrap_or(self.global)
    }

    /// Estimates for every link of every sample.
    pub fn predict(&self, obs: &ObservationSet) -> Vec<Vec<f64>> {
        obs.samples
            .iter()
            .map(|s| (0..s.flows.len()).map(|a| self.estimate(s.period, a)).collect())
            .collect()
    }
}

/// Least-squares coefficients for `y ≈ X b`; the flag marks the ridge fallback.
///
/// Columns are scaled to unit max-norm before solving.
pub fn least_squares(x: &[Vec<f64>], y: &[f64]) -> Result<(Vec<f64>, bool)> {
    let p = x.first().map_or(0, Vec::len);
    if x.len() != y.len() || x.iter().any(|r| r.len() != p) {
        return Err(MateError::Data("regression design is ragged".into()));
    }
    if x.len() < p || p == 0 {
        return Err(MateError::Data(format!(
            "regression needs at least {p} rows, got {}",
            x.len()
        )));
    }
    let mut scale = vec![0.0f64; p];
    for row in x {
        for (s, v) in scale.iter_mut().zip(row) {
            *s = s.max(v.abs());
        }
    }
    scale.iter_mut().filter(|s| **s == 0.0).for_each(|s| *s = 1.0);
    let xm = DMatrix::from_fn(x.len(), p, |i, j| x[i][j] / scale[j]);
    let xtx = xm.transpose() * &xm;
    let xty = xm.transpose() * DVector::from_column_slice(y);
    let eig = xtx.clone().symmetric_eigen().eigenvalues;
    let (lo, hi) = eig
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    let mut ridge = !(lo > 1e-12 * hi);
    let mut solution = None;
    if !ridge {
        solution = xtx.clone().cholesky().map(|c| c.solve(&xty));
        ridge = solution.is_none();
    }
    if ridge {
        let reg = xtx + DMatrix::identity(p, p) * RIDGE_FALLBACK;
        solution = reg.cholesky().map(|c| c.solve(&xty));
    }
    let b = solution.ok_or_else(|| MateError::Numeric {
        location: "least squares".into(),
    })?;
    Ok((b.iter().zip(&scale).map(|(b, s)| b / s).collect(), ridge))
}

/// Regressors of link `a` in `sample`: intercept, capacity, free-flow time
/// and the exogenous link features.
pub fn link_design(model: &NetworkModel, sample: &Sample, a: usize) -> Vec<f64> {
    let mut row = vec![1.0, model.capacities()[a], model.free_flow_times()[a]];
    row.extend_from_slice(sample.link_features.row(a));
    row
}

/// Per-period ordinary least squares of one source on link attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRegression {
    pub coefficients: Vec<Vec<f64>>,
    /// Periods solved with the ridge fallback.
    pub ridge: Vec<bool>,
}

impl LinearRegression {
    pub fn fit(model: &NetworkModel, train: &ObservationSet, source: Source) -> Result<Self> {
        let periods = train.num_periods();
        let mut designs = vec![(Vec::new(), Vec::new()); periods];
        for s in &train.samples {
            for (a, v) in s.values(source).iter().enumerate() {
                if let Some(v) = v {
                    designs[s.period].0.push(link_design(model, s, a));
                    designs[s.period].1.push(*v);
                }
            }
        }
        let mut coefficients = Vec::with_capacity(periods);
        let mut ridge = Vec::with_capacity(periods);
        for (p, (x, y)) in designs.iter().enumerate() {
            let (b, r) = least_squares(x, y)
                .map_err(|e| e.in_context(&format!("{} regression, period {}", source.name(), train.periods[p])))?;
            if r {
                log::warn!(
                    "{} regression for period {}: singular design, ridge fallback",
                    source.name(),
                    train.periods[p]
                );
            }
            coefficients.push(b);
            ridge.push(r);
        }
        Ok(LinearRegression { coefficients, ridge })
    }

    pub fn predict(&self, model: &NetworkModel, obs: &ObservationSet) -> Vec<Vec<f64>> {
        obs.samples
            .iter()
            .map(|s| {
                let b = &self.coefficients[s.period];
                (0..s.flows.len())
                    .map(|a| link_design(model, s, a).iter().zip(b).map(|(x, b)| x * b).sum())
                    .collect()
            })
            .collect()
    }
}

/// Cross-validated metrics of the historical-mean baseline.
pub fn historical_mean_rows(obs: &ObservationSet, plan: &FoldPlan) -> Result<Vec<MetricsRow>> {
    score_rows(obs, plan, |fold, source| {
        Ok(HistoricalMean::fit(&plan.training_set(obs, fold), source)?.predict(obs))
    })
}

/// Cross-validated metrics of the linear-regression baseline.
pub fn linear_regression_rows(model: &NetworkModel, obs: &ObservationSet, plan: &FoldPlan) -> Result<Vec<MetricsRow>> {
    score_rows(obs, plan, |fold, source| {
        Ok(LinearRegression::fit(model, &plan.training_set(obs, fold), source)?.predict(model, obs))
    })
}
