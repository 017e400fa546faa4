use serde::{Deserialize, Serialize};

/// Goodness of fit of estimates against non-missing observations.
///
/// MAPE and MDAPE skip zero observations (counted in `zero_excluded`);
/// MSE and R² use every non-missing pair. `None` marks an undefined value.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub mape: Option<f64>,
    pub mdape: Option<f64>,
    pub mse: Option<f64>,
    pub r2: Option<f64>,
    pub n: usize,
    pub zero_excluded: usize,
}

/// Median of `values`, reordering them.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Metrics over (estimate, observation) pairs.
pub fn metrics_pairs(pairs: &[(f64, f64)]) -> Metrics {
    let n = pairs.len();
    if n == 0 {
        return Metrics::default();
    }
    let mut ape: Vec<f64> = pairs
        .iter()
        .filter(|(_, o)| *o != 0.0)
        .map(|(e, o)| (e - o).abs() / o.abs() * 100.0)
        .collect();
    let zero_excluded = n - ape.len();
    let mape = (!ape.is_empty()).then(|| ape.iter().sum::<f64>() / ape.len() as f64);
    let mdape = median(&mut ape);
    let ss_res: f64 = pairs.iter().map(|(e, o)| (e - o).powi(2)).sum();
    let mean = pairs.iter().map(|(_, o)| o).sum::<f64>() / n as f64;
    let ss_tot: f64 = pairs.iter().map(|(_, o)| (o - mean).powi(2)).sum();
    let r2 = if ss_tot > 0.0 {
        Some(1.0 - ss_res / ss_tot)
    } else if ss_res == 0.0 {
        Some(1.0)
    } else {
        None
    };
    Metrics {
        mape,
        mdape,
        mse: Some(ss_res / n as f64),
        r2,
        n,
        zero_excluded,
    }
}

/// Metrics of `est` against the present entries of `obs`.
pub fn metrics(est: &[f64], obs: &[Option<f64>]) -> Metrics {
    let pairs: Vec<(f64, f64)> = est.iter().zip(obs).filter_map(|(e, o)| o.map(|o| (*e, o))).collect();
    metrics_pairs(&pairs)
}
