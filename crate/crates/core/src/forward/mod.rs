//! The computational graph from parameters to link flows and travel times.

use crate::error::{MateError, Result};
use crate::model::NetworkModel;
use crate::observations::{FeatureMatrix, Sample};
use crate::params::ModelParams;
use crate::sparse::CsrMatrix;

mod loss;

pub use loss::{loss, loss_with, relative_gap, LossFlags, LossReport, LossWeights, Normalizers};

/// Every intermediate of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutputs {
    pub period: usize,
    /// y: kernel of the link-flow parameters.
    pub kernel_hat: Vec<f64>,
    /// t̃: travel times induced by x̂.
    pub times_hat: Vec<f64>,
    /// Link utilities.
    pub link_utilities: Vec<f64>,
    /// v
    pub path_utilities: Vec<f64>,
    /// p
    pub path_probs: Vec<f64>,
    /// Oκ + δ before the non-negativity clamp.
    pub generation_raw: Vec<f64>,
    /// g
    pub generation: Vec<f64>,
    /// φ
    pub dest_probs: Vec<f64>,
    /// q
    pub od_flows: Vec<f64>,
    /// f
    pub path_flows: Vec<f64>,
    /// x
    pub link_flows: Vec<f64>,
    /// ỹ: kernel of the assigned link flows.
    pub kernel: Vec<f64>,
    /// t
    pub times: Vec<f64>,
}

/// Σ_k β_k (x / capacity)^k, per link.
pub fn polynomial_kernel(x: &[f64], beta: &[f64], capacity: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(capacity)
        .map(|(&xa, &cap)| {
            let u = xa / cap;
            // Horner: u(β₁ + u(β₂ + ...))
            u * beta.iter().rev().fold(0.0, |acc, &b| acc * u + b)
        })
        .collect()
}

/// t_min ∘ (1 + (E ∘ W) y), with W given as values on E's pattern.
pub fn performance_times(y: &[f64], kernel: &[f64], mask: &CsrMatrix, free_flow: &[f64]) -> Vec<f64> {
    let mut wy = vec![0.0; mask.rows()];
    mask.mul_vec_with(kernel, y, &mut wy);
    wy.iter().zip(free_flow).map(|(s, tmin)| tmin * (1.0 + s)).collect()
}

/// θ₀ t + Z θ₁.. + γ, per link.
pub fn link_utilities(times: &[f64], features: &FeatureMatrix, theta: &[f64], gamma: &[f64]) -> Vec<f64> {
    let (theta_t, theta_z) = theta.split_first().expect("θ has a travel-time column");
    times
        .iter()
        .enumerate()
        .map(|(a, &t)| {
            let z: f64 = features.row(a).iter().zip(theta_z).map(|(z, w)| z * w).sum();
            theta_t * t + z + gamma[a]
        })
        .collect()
}

/// v = Dᵀ μ, given the path-link incidence `dt` = Dᵀ.
pub fn path_utilities(link_utilities: &[f64], dt: &CsrMatrix) -> Vec<f64> {
    let mut v = vec![0.0; dt.rows()];
    dt.mul_vec(link_utilities, &mut v);
    v
}

/// Softmax of `values` within each row of `blocks`, with max subtraction.
pub fn block_softmax(values: &[f64], blocks: &CsrMatrix) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for r in 0..blocks.rows() {
        let members = blocks.row_indices(r);
        if members.is_empty() {
            continue;
        }
        let max = members.iter().map(|&i| values[i]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for &i in members {
            let e = (values[i] - max).exp();
            out[i] = e;
            total += e;
        }
        for &i in members {
            out[i] /= total;
        }
    }
    out
}

/// Path choice probabilities, normalized within each O-D pair (rows of M).
pub fn path_probabilities(v: &[f64], m: &CsrMatrix) -> Vec<f64> {
    block_softmax(v, m)
}

/// Returns (Oκ + δ, max(0, Oκ + δ)).
pub fn trip_generation(node_features: &FeatureMatrix, kappa: &[f64], delta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let raw: Vec<f64> = if kappa.is_empty() {
        delta.to_vec()
    } else {
        node_features
            .mul_vec(kappa)
            .iter()
            .zip(delta)
            .map(|(a, d)| a + d)
            .collect()
    };
    let g = raw.iter().map(|&v| v.max(0.0)).collect();
    (raw, g)
}

/// Destination choice probabilities, normalized within each origin (rows of L).
pub fn destination_probabilities(omega: &[f64], l: &CsrMatrix) -> Vec<f64> {
    block_softmax(omega, l)
}

/// q = (Lᵀ g) ∘ φ
pub fn od_flows(g: &[f64], phi: &[f64], l: &CsrMatrix) -> Vec<f64> {
    let mut q = vec![0.0; l.cols()];
    l.tr_mul_vec(g, &mut q);
    q.iter_mut().zip(phi).for_each(|(q, p)| *q *= p);
    q
}

/// f = (Mᵀ q) ∘ p
pub fn path_flows(q: &[f64], p: &[f64], m: &CsrMatrix) -> Vec<f64> {
    let mut f = vec![0.0; m.cols()];
    m.tr_mul_vec(q, &mut f);
    f.iter_mut().zip(p).for_each(|(f, p)| *f *= p);
    f
}

/// x = D f
pub fn link_flows(f: &[f64], d: &CsrMatrix) -> Vec<f64> {
    let mut x = vec![0.0; d.rows()];
    d.mul_vec(f, &mut x);
    x
}

/// Result of loading O-D flows onto paths with logit route choice.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub link_utilities: Vec<f64>,
    pub path_utilities: Vec<f64>,
    pub path_probs: Vec<f64>,
    pub path_flows: Vec<f64>,
    pub link_flows: Vec<f64>,
}

/// Logit-based stochastic traffic assignment of `q` under link travel times `times`.
pub fn assign_stalogit(
    model: &NetworkModel,
    times: &[f64],
    features: &FeatureMatrix,
    theta: &[f64],
    gamma: &[f64],
    q: &[f64],
) -> Assignment {
    let inc = &model.incidences;
    let link_utilities = link_utilities(times, features, theta, gamma);
    let path_utilities = path_utilities(&link_utilities, &inc.dt);
    let path_probs = path_probabilities(&path_utilities, &inc.m);
    let path_flows = path_flows(q, &path_probs, &inc.m);
    let link_flows = link_flows(&path_flows, &inc.d);
    Assignment {
        link_utilities,
        path_utilities,
        path_probs,
        path_flows,
        link_flows,
    }
}

fn finite(layer: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(MateError::numeric(format!("forward layer `{layer}`")))
    }
}

/// Runs the full chain for one sample, using its period's parameter rows.
pub fn forward_pass(model: &NetworkModel, params: &ModelParams, sample: &Sample) -> Result<ForwardOutputs> {
    let inc = &model.incidences;
    let period = sample.period;
    if period >= params.num_periods() {
        return Err(MateError::Data(format!("sample {} has no parameter period", sample.id)));
    }
    let caps = model.capacities();
    let tmin = model.free_flow_times();

    let x_hat = params.link_flows.row(period);
    let kernel_hat = polynomial_kernel(x_hat, &params.poly, caps);
    finite("kernel of link-flow parameters", &kernel_hat)?;
    let times_hat = performance_times(&kernel_hat, &params.kernel, &inc.e, tmin);
    finite("travel times from link-flow parameters", &times_hat)?;

    let theta = params.theta.row(period);
    let link_utilities = link_utilities(&times_hat, &sample.link_features, theta, &params.gamma);
    finite("link utilities", &link_utilities)?;
    let path_utilities = path_utilities(&link_utilities, &inc.dt);
    let path_probs = path_probabilities(&path_utilities, &inc.m);
    finite("path probabilities", &path_probs)?;

    let (generation_raw, generation) = trip_generation(
        &sample.node_features,
        params.kappa.row(period),
        params.delta.row(period),
    );
    finite("trip generation", &generation)?;
    let dest_probs = destination_probabilities(params.omega.row(period), &inc.l);
    finite("destination probabilities", &dest_probs)?;
    let od_flows = od_flows(&generation, &dest_probs, &inc.l);
    let path_flows = path_flows(&od_flows, &path_probs, &inc.m);
    let link_flows = link_flows(&path_flows, &inc.d);
    finite("link flows", &link_flows)?;

    let kernel = polynomial_kernel(&link_flows, &params.poly, caps);
    finite("kernel of link flows", &kernel)?;
    let times = performance_times(&kernel, &params.kernel, &inc.e, tmin);
    finite("travel times", &times)?;

    let out = ForwardOutputs {
        period,
        kernel_hat,
        times_hat,
        link_utilities,
        path_utilities,
        path_probs,
        generation_raw,
        generation,
        dest_probs,
        od_flows,
        path_flows,
        link_flows,
        kernel,
        times,
    };
    if cfg!(debug_assertions) {
        if let Err(msg) = check_stalogit(model, &out) {
            panic!("forward pass violated assignment structure: {msg}");
        }
    }
    Ok(out)
}

/// Relative agreement within `tol`, with an absolute floor scaled to the magnitude.
fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn check_blocks(name: &str, probs: &[f64], blocks: &CsrMatrix) -> std::result::Result<(), String> {
    for r in 0..blocks.rows() {
        let members = blocks.row_indices(r);
        if members.is_empty() {
            continue;
        }
        let mut sum = 0.0;
        for &i in members {
            if !(probs[i] >= 0.0) {
                return Err(format!("{name}[{i}] = {} is negative", probs[i]));
            }
            sum += probs[i];
        }
        if (sum - 1.0).abs() > 1e-12 {
            return Err(format!("{name} block {r} sums to {sum}"));
        }
    }
    Ok(())
}

/// Structural checks of a logit assignment: blockwise probabilities, non-negative
/// flows and conservation x = Df, Mf = q, Lq = g.
pub fn check_stalogit(model: &NetworkModel, out: &ForwardOutputs) -> std::result::Result<(), String> {
    let inc = &model.incidences;
    check_blocks("p", &out.path_probs, &inc.m)?;
    check_blocks("φ", &out.dest_probs, &inc.l)?;
    for (name, v) in [
        ("g", &out.generation),
        ("q", &out.od_flows),
        ("f", &out.path_flows),
        ("x", &out.link_flows),
    ] {
        if let Some(i) = v.iter().position(|&x| !(x >= 0.0)) {
            return Err(format!("{name}[{i}] = {} is negative", v[i]));
        }
    }
    let tol = 1e-9;
    let x = link_flows(&out.path_flows, &inc.d);
    let mut mf = vec![0.0; inc.m.rows()];
    inc.m.mul_vec(&out.path_flows, &mut mf);
    let mut lq = vec![0.0; inc.l.rows()];
    inc.l.mul_vec(&out.od_flows, &mut lq);
    for (a, (x1, x2)) in x.iter().zip(&out.link_flows).enumerate() {
        if !close(*x1, *x2, tol) {
            return Err(format!("x[{a}] = {x2} but (Df)[{a}] = {x1}"));
        }
    }
    for (w, (q1, q2)) in mf.iter().zip(&out.od_flows).enumerate() {
        if !close(*q1, *q2, tol) {
            return Err(format!("q[{w}] = {q2} but (Mf)[{w}] = {q1}"));
        }
    }
    for (v, lqv) in lq.iter().enumerate() {
        // origins without destinations carry no O-D flow
        if inc.l.row_indices(v).is_empty() {
            continue;
        }
        if !close(*lqv, out.generation[v], tol) {
            return Err(format!("g[{v}] = {} but (Lq)[{v}] = {lqv}", out.generation[v]));
        }
    }
    Ok(())
}
