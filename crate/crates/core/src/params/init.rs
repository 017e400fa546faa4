use super::{DeltaInit, ModelParams, ParamSpec};
use crate::error::{MateError, Result};
use crate::forward::forward_pass;
use crate::model::NetworkModel;
use crate::observations::ObservationSet;

/// Builds starting parameters for every period of `obs`.
///
/// x̂ starts from one logit assignment at free-flow travel times (x̂ = 0
/// makes the kernel vanish), evaluated on the first sample of each period.
pub fn initialize(spec: &ParamSpec, model: &NetworkModel, obs: &ObservationSet) -> Result<ModelParams> {
    spec.validate()?;
    obs.validate(model.num_links(), model.num_nodes(), model.num_od_pairs())?;
    let init = &spec.init;
    let mut p = ModelParams::zeros(
        obs.periods.clone(),
        &model.incidences.e,
        obs.num_link_features(),
        obs.num_node_features(),
        model.num_nodes(),
        model.num_od_pairs(),
        init.poly.len(),
    );

    let width = p.theta.width();
    match &init.theta_values {
        Some(values) if values.len() != width => {
            return Err(MateError::Config(format!(
                "init.theta_values has {} entries, expected {width} (travel time plus {} features)",
                values.len(),
                width - 1
            )))
        }
        Some(values) => {
            for t in 0..p.num_periods() {
                p.theta.row_mut(t).copy_from_slice(values);
            }
        }
        None => p.theta.data_mut().fill(init.theta),
    }
    p.gamma.fill(init.gamma);
    for (w, &(r, c)) in p.kernel.iter_mut().zip(&p.kernel_index) {
        *w = if r == c {
            init.kernel_diagonal
        } else {
            init.kernel_off_diagonal
        };
    }
    p.poly.copy_from_slice(&init.poly);
    p.kappa.data_mut().fill(init.kappa);
    p.omega.data_mut().fill(init.omega);
    match init.delta {
        DeltaInit::Value(v) => p.delta.data_mut().fill(v),
        DeltaInit::Reference => {
            for (t, reference) in obs.reference_generation.iter().enumerate() {
                let g = reference.as_ref().ok_or_else(|| {
                    MateError::Config(format!(
                        "period {:?} has no reference generation to initialize δ from",
                        obs.periods[t]
                    ))
                })?;
                p.delta.row_mut(t).copy_from_slice(g);
            }
        }
    }
    p.project(spec);

    if init.link_flows_from_assignment {
        for (t, rep) in obs.period_representatives().into_iter().enumerate() {
            if let Some(sample) = rep {
                let out = forward_pass(model, &p, sample)?;
                p.link_flows.row_mut(t).copy_from_slice(&out.link_flows);
            }
        }
        p.project(spec);
    }
    Ok(p)
}
