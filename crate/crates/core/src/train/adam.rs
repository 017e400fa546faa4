use serde::{Deserialize, Serialize};

use super::grad::Gradients;
use crate::params::{FlowStep, ModelParams, ParamGroup, ParamSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    /// Step count per period row (one counter for shared groups).
    steps: Vec<u64>,
}

/// Adam over every parameter group. Periodic groups are updated row by row:
/// only periods present in the gradient advance their moments and counters.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    config: AdamConfig,
    learning_rate: f64,
    moments: Vec<Moments>,
}

impl Adam {
    pub fn new(params: &ModelParams, learning_rate: f64, config: AdamConfig) -> Self {
        let moments = ParamGroup::ALL
            .iter()
            .map(|&g| {
                let n = params.values(g).len();
                let rows = if g.is_periodic() { params.num_periods() } else { 1 };
                Moments {
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                    steps: vec![0; rows],
                }
            })
            .collect();
        Adam {
            config,
            learning_rate,
            moments,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.learning_rate = lr;
    }

    /// One update of every trainable group, followed by projection.
    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients, spec: &ParamSpec, capacities: &[f64]) {
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        for (gi, &group) in ParamGroup::ALL.iter().enumerate() {
            let gspec = spec.group(group);
            if !gspec.trainable || gspec.lr_multiplier == 0.0 {
                continue;
            }
            let lr = self.learning_rate * gspec.lr_multiplier;
            let width = params.width(group);
            let scaled = group == ParamGroup::LinkFlows && spec.link_flow_step == FlowStep::Capacity;
            let state = &mut self.moments[gi];
            let rows: Vec<usize> = if group.is_periodic() {
                (0..params.num_periods()).filter(|&t| grads.touched[t]).collect()
            } else {
                vec![0]
            };
            let values = params.values_mut(group);
            let g_all = grads.values(group);
            for row in rows {
                state.steps[row] += 1;
                let step = state.steps[row] as i32;
                let bc1 = 1.0 - beta1.powi(step);
                let bc2 = 1.0 - beta2.powi(step);
                for i in row * width..(row + 1) * width {
                    let scale = if scaled { capacities[i - row * width] } else { 1.0 };
                    let g = g_all[i] * scale;
                    let m = beta1 * state.m[i] + (1.0 - beta1) * g;
                    let v = beta2 * state.v[i] + (1.0 - beta2) * g * g;
                    state.m[i] = m;
                    state.v[i] = v;
                    let m_hat = m / bc1;
                    let v_hat = v / bc2;
                    values[i] -= lr * scale * m_hat / (v_hat.sqrt() + epsilon);
                }
            }
            params.project_group(group, spec);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::SignConstraint;
    use crate::sparse::CsrMatrix;

    fn setup() -> (ModelParams, Gradients, ParamSpec) {
        let e = CsrMatrix::identity(2);
        let mut p = ModelParams::zeros(vec!["a".into(), "b".into()], &e, 0, 0, 2, 1, 2);
        p.poly = vec![0.5, 0.05];
        p.theta.data_mut().fill(-1.0);
        p.kernel.fill(1.0);
        let g = Gradients::zeros_like(&p);
        let mut spec = ParamSpec::default();
        spec.link_flow_step = FlowStep::Absolute;
        (p, g, spec)
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut p, mut g, spec) = setup();
        g.touched = vec![true, true];
        let before = p.clone();
        let mut adam = Adam::new(&p, 0.1, AdamConfig::default());
        adam.step(&mut p, &g, &spec, &[1.0, 1.0]);
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_matches_reference_formula() {
        let (mut p, mut g, spec) = setup();
        g.poly[0] = 1.0;
        let mut adam = Adam::new(&p, 0.1, AdamConfig::default());
        adam.step(&mut p, &g, &spec, &[1.0, 1.0]);
        // m̂ = g, v̂ = g², step = lr · g / (|g| + ε)
        let expected = 0.5 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert_eq!(p.poly[0], expected);
        assert!((p.poly[0] - 0.4).abs() < 1e-8);
    }

    #[test]
    fn projection_after_step() {
        let (mut p, mut g, mut spec) = setup();
        g.poly[1] = 1.0;
        g.touched = vec![true, false];
        g.theta.data_mut().fill(-1.0);
        spec.theta_signs = vec![SignConstraint::NonPositive];
        let mut adam = Adam::new(&p, 0.1, AdamConfig::default());
        adam.step(&mut p, &g, &spec, &[1.0, 1.0]);
        assert_eq!(p.poly[1], 0.0);
        // only the touched period's θ row moves
        assert!(p.theta.row(0)[0] > -1.0);
        assert_eq!(p.theta.row(1)[0], -1.0);
    }

    #[test]
    fn capacity_scaled_flow_step() {
        let (mut p, mut g, mut spec) = setup();
        spec.link_flow_step = FlowStep::Capacity;
        p.link_flows.data_mut().fill(1000.0);
        g.link_flows.data_mut().fill(1.0);
        g.touched = vec![true, false];
        let mut adam = Adam::new(&p, 0.05, AdamConfig::default());
        adam.step(&mut p, &g, &spec, &[1000.0, 4000.0]);
        let row = p.link_flows.row(0);
        assert!((row[0] - (1000.0 - 50.0)).abs() < 1e-6);
        assert!((row[1] - (1000.0 - 200.0)).abs() < 1e-6);
        assert_eq!(p.link_flows.row(1), &[1000.0, 1000.0]);
    }
}
