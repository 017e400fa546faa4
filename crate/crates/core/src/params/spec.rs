use serde::{Deserialize, Deserializer, Serialize};

use super::ParamGroup;
use crate::error::{MateError, Result};

/// Trainability, box bounds and step size of one parameter group.
/// Missing bounds are unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupSpec {
    pub trainable: bool,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub lr_multiplier: f64,
}

impl Default for GroupSpec {
    fn default() -> Self {
        GroupSpec {
            trainable: true,
            lower: None,
            upper: None,
            lr_multiplier: 1.0,
        }
    }
}

impl GroupSpec {
    pub fn bounded(lower: Option<f64>, upper: Option<f64>) -> Self {
        GroupSpec {
            lower,
            upper,
            ..GroupSpec::default()
        }
    }

    pub fn clamp(&self, v: f64) -> f64 {
        let v = self.lower.map_or(v, |lo| v.max(lo));
        self.upper.map_or(v, |hi| v.min(hi))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignConstraint {
    #[default]
    Free,
    NonPositive,
    NonNegative,
}

impl SignConstraint {
    /// Violating values go to zero.
    pub fn apply(self, v: f64) -> f64 {
        match self {
            SignConstraint::Free => v,
            SignConstraint::NonPositive => v.min(0.0),
            SignConstraint::NonNegative => v.max(0.0),
        }
    }
}

/// Scale of the x̂ update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowStep {
    /// Steps in veh/h.
    Absolute,
    /// Steps in units of link capacity (Adam on x̂ / capacity).
    #[default]
    Capacity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaInit {
    /// Copy the period's reference generation ḡ.
    Reference,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitSpec {
    /// Fill value for θ when `theta_values` is absent.
    pub theta: f64,
    pub theta_values: Option<Vec<f64>>,
    pub gamma: f64,
    pub kernel_diagonal: f64,
    pub kernel_off_diagonal: f64,
    /// β; its length sets the polynomial degree b.
    pub poly: Vec<f64>,
    pub kappa: f64,
    pub delta: DeltaInit,
    pub omega: f64,
    /// Start x̂ from one assignment at free-flow times (otherwise zero).
    pub link_flows_from_assignment: bool,
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec {
            theta: -1.0,
            theta_values: None,
            gamma: 0.0,
            kernel_diagonal: 1.0,
            kernel_off_diagonal: 1.0,
            poly: vec![1.0; 3],
            kappa: 0.0,
            delta: DeltaInit::Reference,
            omega: 0.0,
            link_flows_from_assignment: true,
        }
    }
}

/// Groups given in part keep the per-group defaults of the keys they omit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "SpecPatch")]
pub struct ParamSpec {
    pub link_flows: GroupSpec,
    pub theta: GroupSpec,
    pub gamma: GroupSpec,
    pub kernel: GroupSpec,
    pub poly: GroupSpec,
    pub kappa: GroupSpec,
    pub delta: GroupSpec,
    pub omega: GroupSpec,
    /// Per θ column; missing columns are free.
    pub theta_signs: Vec<SignConstraint>,
    /// Lower bound of diag(W).
    pub kernel_diagonal_floor: f64,
    pub link_flow_step: FlowStep,
    pub init: InitSpec,
}

impl Default for ParamSpec {
    fn default() -> Self {
        ParamSpec {
            link_flows: GroupSpec::bounded(Some(0.0), None),
            theta: GroupSpec::default(),
            gamma: GroupSpec::default(),
            kernel: GroupSpec::bounded(Some(0.0), Some(10.0)),
            poly: GroupSpec::bounded(Some(0.0), Some(10.0)),
            kappa: GroupSpec::default(),
            delta: GroupSpec::bounded(Some(0.0), None),
            omega: GroupSpec::default(),
            theta_signs: Vec::new(),
            kernel_diagonal_floor: 1e-6,
            link_flow_step: FlowStep::Capacity,
            init: InitSpec::default(),
        }
    }
}

fn present<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<Option<f64>>, D::Error> {
    Option::<f64>::deserialize(d).map(Some)
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GroupPatch {
    trainable: Option<bool>,
    #[serde(deserialize_with = "present")]
    lower: Option<Option<f64>>,
    #[serde(deserialize_with = "present")]
    upper: Option<Option<f64>>,
    lr_multiplier: Option<f64>,
}

impl GroupPatch {
    fn apply(self, g: &mut GroupSpec) {
        g.trainable = self.trainable.unwrap_or(g.trainable);
        g.lower = self.lower.unwrap_or(g.lower);
        g.upper = self.upper.unwrap_or(g.upper);
        g.lr_multiplier = self.lr_multiplier.unwrap_or(g.lr_multiplier);
    }
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SpecPatch {
    link_flows: GroupPatch,
    theta: GroupPatch,
    gamma: GroupPatch,
    kernel: GroupPatch,
    poly: GroupPatch,
    kappa: GroupPatch,
    delta: GroupPatch,
    omega: GroupPatch,
    theta_signs: Option<Vec<SignConstraint>>,
    kernel_diagonal_floor: Option<f64>,
    link_flow_step: Option<FlowStep>,
    init: Option<InitSpec>,
}

impl From<SpecPatch> for ParamSpec {
    fn from(p: SpecPatch) -> Self {
        let mut s = ParamSpec::default();
        p.link_flows.apply(&mut s.link_flows);
        p.theta.apply(&mut s.theta);
        p.gamma.apply(&mut s.gamma);
        p.kernel.apply(&mut s.kernel);
        p.poly.apply(&mut s.poly);
        p.kappa.apply(&mut s.kappa);
        p.delta.apply(&mut s.delta);
        p.omega.apply(&mut s.omega);
        s.theta_signs = p.theta_signs.unwrap_or(s.theta_signs);
        s.kernel_diagonal_floor = p.kernel_diagonal_floor.unwrap_or(s.kernel_diagonal_floor);
        s.link_flow_step = p.link_flow_step.unwrap_or(s.link_flow_step);
        s.init = p.init.unwrap_or(s.init);
        s
    }
}

impl ParamSpec {
    pub fn group(&self, g: ParamGroup) -> &GroupSpec {
        match g {
            ParamGroup::LinkFlows => &self.link_flows,
            ParamGroup::Theta => &self.theta,
            ParamGroup::Gamma => &self.gamma,
            ParamGroup::Kernel => &self.kernel,
            ParamGroup::Poly => &self.poly,
            ParamGroup::Kappa => &self.kappa,
            ParamGroup::Delta => &self.delta,
            ParamGroup::Omega => &self.omega,
        }
    }

    pub fn group_mut(&mut self, g: ParamGroup) -> &mut GroupSpec {
        match g {
            ParamGroup::LinkFlows => &mut self.link_flows,
            ParamGroup::Theta => &mut self.theta,
            ParamGroup::Gamma => &mut self.gamma,
            ParamGroup::Kernel => &mut self.kernel,
            ParamGroup::Poly => &mut self.poly,
            ParamGroup::Kappa => &mut self.kappa,
            ParamGroup::Delta => &mut self.delta,
            ParamGroup::Omega => &mut self.omega,
        }
    }

    /// Same bounds, only the listed groups trainable.
    pub fn only(mut self, groups: &[ParamGroup]) -> Self {
        for g in ParamGroup::ALL {
            self.group_mut(g).trainable = groups.contains(&g);
        }
        self
    }

    /// Only x̂ trainable.
    pub fn equilibrium() -> Self {
        ParamSpec::default().only(&[ParamGroup::LinkFlows])
    }

    pub fn trainable_groups(&self) -> Vec<ParamGroup> {
        ParamGroup::ALL
            .into_iter()
            .filter(|&g| self.group(g).trainable)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        for g in ParamGroup::ALL {
            let s = self.group(g);
            if let (Some(lo), Some(hi)) = (s.lower, s.upper) {
                if lo > hi {
                    return Err(MateError::Config(format!(
                        "{}: lower bound {lo} exceeds upper {hi}",
                        g.name()
                    )));
                }
            }
            if !(s.lr_multiplier.is_finite() && s.lr_multiplier >= 0.0) {
                return Err(MateError::Config(format!(
                    "{}: invalid learning-rate multiplier",
                    g.name()
                )));
            }
        }
        if self.init.poly.is_empty() {
            return Err(MateError::Config("polynomial degree must be at least 1".into()));
        }
        if !(self.kernel_diagonal_floor > 0.0) {
            return Err(MateError::Config("kernel diagonal floor must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_json_round_trip_and_strictness() {
        let mut spec = ParamSpec::equilibrium();
        spec.theta_signs = vec![SignConstraint::NonPositive, SignConstraint::Free];
        spec.init.delta = DeltaInit::Value(3.5);
        let json = serde_json::to_string(&spec).unwrap();
        let back: ParamSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        assert!(serde_json::from_str::<ParamSpec>(r#"{"thetta": {}}"#).is_err());
        let partial: ParamSpec = serde_json::from_str(r#"{"kappa": {"trainable": false}}"#).unwrap();
        assert!(!partial.kappa.trainable);
        assert_eq!(partial.poly, ParamSpec::default().poly);
        assert_eq!(partial.kappa.lr_multiplier, 1.0);

        let partial: ParamSpec =
            serde_json::from_str(r#"{"kernel": {"lr_multiplier": 0.5}, "poly": {"upper": null}}"#).unwrap();
        assert_eq!(partial.kernel.lr_multiplier, 0.5);
        assert_eq!(partial.kernel.lower, Some(0.0));
        assert_eq!(partial.kernel.upper, Some(10.0));
        assert_eq!(partial.poly.lower, Some(0.0));
        assert_eq!(partial.poly.upper, None);
        assert!(serde_json::from_str::<ParamSpec>(r#"{"kernel": {"lr": 0.5}}"#).is_err());
    }

    #[test]
    fn validation() {
        let mut spec = ParamSpec::default();
        spec.validate().unwrap();
        spec.theta.lower = Some(1.0);
        spec.theta.upper = Some(0.0);
        assert!(spec.validate().is_err());
        assert_eq!(ParamSpec::equilibrium().trainable_groups(), vec![ParamGroup::LinkFlows]);
    }
}
