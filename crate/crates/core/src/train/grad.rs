//! Reverse-mode pass through the forward chain, one layer adjoint at a time.

use crate::error::{MateError, Result};
use crate::forward::{forward_pass, loss_with, ForwardOutputs, LossReport, LossWeights, Normalizers};
use crate::model::NetworkModel;
use crate::observations::{ObservationSet, Sample};
use crate::params::{ModelParams, ParamGroup, ParamSpec, PeriodTable};
use crate::sparse::CsrMatrix;

/// Loss gradients with the shapes of [`ModelParams`]. `touched[t]` marks
/// periods whose rows received a contribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub link_flows: PeriodTable,
    pub theta: PeriodTable,
    pub gamma: Vec<f64>,
    pub kernel: Vec<f64>,
    pub poly: Vec<f64>,
    pub kappa: PeriodTable,
    pub delta: PeriodTable,
    pub omega: PeriodTable,
    pub touched: Vec<bool>,
}

impl Gradients {
    pub fn zeros_like(p: &ModelParams) -> Self {
        let t = p.num_periods();
        let table = |tab: &PeriodTable| PeriodTable::filled(t, tab.width(), 0.0);
        Gradients {
            link_flows: table(&p.link_flows),
            theta: table(&p.theta),
            gamma: vec![0.0; p.gamma.len()],
            kernel: vec![0.0; p.kernel.len()],
            poly: vec![0.0; p.poly.len()],
            kappa: table(&p.kappa),
            delta: table(&p.delta),
            omega: table(&p.omega),
            touched: vec![false; t],
        }
    }

    pub fn values(&self, group: ParamGroup) -> &[f64] {
        match group {
            ParamGroup::LinkFlows => self.link_flows.data(),
            ParamGroup::Theta => self.theta.data(),
            ParamGroup::Gamma => &self.gamma,
            ParamGroup::Kernel => &self.kernel,
            ParamGroup::Poly => &self.poly,
            ParamGroup::Kappa => self.kappa.data(),
            ParamGroup::Delta => self.delta.data(),
            ParamGroup::Omega => self.omega.data(),
        }
    }

    pub fn values_mut(&mut self, group: ParamGroup) -> &mut [f64] {
        match group {
            ParamGroup::LinkFlows => self.link_flows.data_mut(),
            ParamGroup::Theta => self.theta.data_mut(),
            ParamGroup::Gamma => &mut self.gamma,
            ParamGroup::Kernel => &mut self.kernel,
            ParamGroup::Poly => &mut self.poly,
            ParamGroup::Kappa => self.kappa.data_mut(),
            ParamGroup::Delta => self.delta.data_mut(),
            ParamGroup::Omega => self.omega.data_mut(),
        }
    }

    /// `self += scale · other`
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for g in ParamGroup::ALL {
            for (a, b) in self.values_mut(g).iter_mut().zip(other.values(g)) {
                *a += scale * b;
            }
        }
        for (a, b) in self.touched.iter_mut().zip(&other.touched) {
            *a |= b;
        }
    }

    pub fn max_abs(&self, group: ParamGroup) -> f64 {
        self.values(group).iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Adjoint of t = t_min ∘ (1 + (E∘W) y): accumulates into dW and returns dy.
fn performance_adjoint(
    dt: &[f64],
    y: &[f64],
    tmin: &[f64],
    kernel: &[f64],
    e: &CsrMatrix,
    dkernel: &mut [f64],
) -> Vec<f64> {
    let s: Vec<f64> = dt.iter().zip(tmin).map(|(d, t)| d * t).collect();
    for (k, &sk) in s.iter().enumerate() {
        if sk == 0.0 {
            continue;
        }
        for pos in e.row_range(k) {
            dkernel[pos] += sk * y[e.indices()[pos]];
        }
    }
    let mut dy = vec![0.0; y.len()];
    e.tr_mul_vec_with(kernel, &s, &mut dy);
    dy
}

/// Adjoint of y = Σ_j β_j (x/cap)^j: accumulates into dβ and returns dx.
fn kernel_adjoint(dy: &[f64], x: &[f64], caps: &[f64], beta: &[f64], dbeta: &mut [f64]) -> Vec<f64> {
    let mut dx = vec![0.0; x.len()];
    for a in 0..x.len() {
        if dy[a] == 0.0 {
            continue;
        }
        let u = x[a] / caps[a];
        let mut pow = 1.0; // u^(j-1)
        let mut deriv = 0.0;
        for (j, b) in beta.iter().enumerate() {
            deriv += (j as f64 + 1.0) * b * pow;
            pow *= u;
            dbeta[j] += dy[a] * pow;
        }
        dx[a] = dy[a] * deriv / caps[a];
    }
    dx
}

/// Adjoint of a blockwise softmax.
fn softmax_adjoint(dp: &[f64], p: &[f64], blocks: &CsrMatrix) -> Vec<f64> {
    let mut dv = vec![0.0; p.len()];
    for r in 0..blocks.rows() {
        let members = blocks.row_indices(r);
        let inner: f64 = members.iter().map(|&i| p[i] * dp[i]).sum();
        for &i in members {
            dv[i] = p[i] * (dp[i] - inner);
        }
    }
    dv
}

/// Gradient of the sample loss given a completed forward pass.
pub fn backward(
    model: &NetworkModel,
    params: &ModelParams,
    obs: &ObservationSet,
    sample: &Sample,
    out: &ForwardOutputs,
    weights: &LossWeights,
    norms: &Normalizers,
) -> Gradients {
    let inc = &model.incidences;
    let caps = model.capacities();
    let tmin = model.free_flow_times();
    let t = out.period;
    let x_hat = params.link_flows.row(t);
    let mut grad = Gradients::zeros_like(params);
    grad.touched[t] = true;

    // loss seeds
    let mut dx = vec![0.0; out.link_flows.len()];
    let mut dt = vec![0.0; out.times.len()];
    let mut dxhat = vec![0.0; x_hat.len()];
    for a in 0..dx.len() {
        if let Some(o) = sample.flows[a] {
            dx[a] += 2.0 * weights.flow * (out.link_flows[a] - o) / norms.flow;
        }
        if let Some(o) = sample.times[a] {
            dt[a] += 2.0 * weights.time * (out.times[a] - o) / norms.time;
        }
        let r = 2.0 * weights.equilibrium * (out.link_flows[a] - x_hat[a]) / norms.equilibrium;
        dx[a] += r;
        dxhat[a] -= r;
    }
    let mut dg = vec![0.0; out.generation.len()];
    if let (Some(g_ref), true) = (&obs.reference_generation[t], weights.generation > 0.0) {
        for (d, (g, r)) in dg.iter_mut().zip(out.generation.iter().zip(g_ref)) {
            *d += 2.0 * weights.generation * (g - r);
        }
    }
    let mut dq = vec![0.0; out.od_flows.len()];
    if let (Some(q_ref), true) = (&obs.reference_od[t], weights.od > 0.0) {
        for (d, (q, r)) in dq.iter_mut().zip(out.od_flows.iter().zip(q_ref)) {
            *d += 2.0 * weights.od * (q - r);
        }
    }

    // t → ỹ → x
    let dy_tilde = performance_adjoint(&dt, &out.kernel, tmin, &params.kernel, &inc.e, &mut grad.kernel);
    let dx_kernel = kernel_adjoint(&dy_tilde, &out.link_flows, caps, &params.poly, &mut grad.poly);
    dx.iter_mut().zip(&dx_kernel).for_each(|(a, b)| *a += b);

    // x = D f
    let mut df = vec![0.0; out.path_flows.len()];
    inc.dt.mul_vec(&dx, &mut df);

    // f = (Mᵀ q) ∘ p
    let path_od = &inc.path_od;
    let mut dp = vec![0.0; df.len()];
    for h in 0..df.len() {
        dq[path_od[h]] += df[h] * out.path_probs[h];
        dp[h] = df[h] * out.od_flows[path_od[h]];
    }

    // p = softmax(v) → v = Dᵀ μ
    let dv = softmax_adjoint(&dp, &out.path_probs, &inc.m);
    let mut dmu = vec![0.0; out.link_utilities.len()];
    inc.d.mul_vec(&dv, &mut dmu);

    // μ = θ₀ t̃ + Z θ_z + γ
    let theta = params.theta.row(t);
    let dtheta = grad.theta.row_mut(t);
    dtheta[0] = dmu.iter().zip(&out.times_hat).map(|(a, b)| a * b).sum();
    let dz = sample.link_features.tr_mul_vec(&dmu);
    dtheta[1..].copy_from_slice(&dz);
    grad.gamma.copy_from_slice(&dmu);
    let dtimes_hat: Vec<f64> = dmu.iter().map(|d| theta[0] * d).collect();

    // t̃ → y → x̂
    let dy = performance_adjoint(
        &dtimes_hat,
        &out.kernel_hat,
        tmin,
        &params.kernel,
        &inc.e,
        &mut grad.kernel,
    );
    let dxhat_kernel = kernel_adjoint(&dy, x_hat, caps, &params.poly, &mut grad.poly);
    for (g, (a, b)) in grad
        .link_flows
        .row_mut(t)
        .iter_mut()
        .zip(dxhat.iter().zip(&dxhat_kernel))
    {
        *g = a + b;
    }

    // q = (Lᵀ g) ∘ φ
    let od_origin = &inc.od_origin;
    let mut dphi = vec![0.0; dq.len()];
    for w in 0..dq.len() {
        let o = od_origin[w];
        dg[o] += dq[w] * out.dest_probs[w];
        dphi[w] = dq[w] * out.generation[o];
    }
    let domega = softmax_adjoint(&dphi, &out.dest_probs, &inc.l);
    grad.omega.row_mut(t).copy_from_slice(&domega);

    // g = max(0, Oκ + δ)
    let draw: Vec<f64> = dg
        .iter()
        .zip(&out.generation_raw)
        .map(|(d, &r)| if r > 0.0 { *d } else { 0.0 })
        .collect();
    grad.delta.row_mut(t).copy_from_slice(&draw);
    if grad.kappa.width() > 0 {
        let dk = sample.node_features.tr_mul_vec(&draw);
        grad.kappa.row_mut(t).copy_from_slice(&dk);
    }
    grad
}

/// Forward pass, loss and gradient of one sample. Frozen groups get zero.
pub fn gradients(
    model: &NetworkModel,
    params: &ModelParams,
    obs: &ObservationSet,
    sample: &Sample,
    weights: &LossWeights,
    spec: &ParamSpec,
) -> Result<(LossReport, Gradients)> {
    let out = forward_pass(model, params, sample)?;
    let norms = Normalizers::for_sample(sample, obs.flow_std_fallback);
    let report = loss_with(&out, params, obs, weights, sample, &norms);
    let mut grad = backward(model, params, obs, sample, &out, weights, &norms);
    for g in ParamGroup::ALL {
        if !spec.group(g).trainable {
            grad.values_mut(g).fill(0.0);
        } else if grad.values(g).iter().any(|v| !v.is_finite()) {
            return Err(MateError::numeric(format!("gradient of group `{}`", g.name())));
        }
    }
    Ok((report, grad))
}
