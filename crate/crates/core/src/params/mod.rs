//! Learnable parameters, their constraints and checkpoints.

use serde::{Deserialize, Serialize};

use crate::error::{MateError, Result};
use crate::sparse::CsrMatrix;

mod checkpoint;
mod init;
mod spec;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use init::initialize;
pub use spec::{DeltaInit, FlowStep, GroupSpec, InitSpec, ParamSpec, SignConstraint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    /// x̂, |T| × |A|.
    LinkFlows,
    /// θ, |T| × (1 + |K_Z|); column 0 weights travel time.
    Theta,
    /// γ, |A|.
    Gamma,
    /// W on the nonzero pattern of E.
    Kernel,
    /// β, b.
    Poly,
    /// κ, |T| × |K_O|.
    Kappa,
    /// δ, |T| × |V|.
    Delta,
    /// ω, |T| × |W|.
    Omega,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 8] = [
        ParamGroup::LinkFlows,
        ParamGroup::Theta,
        ParamGroup::Gamma,
        ParamGroup::Kernel,
        ParamGroup::Poly,
        ParamGroup::Kappa,
        ParamGroup::Delta,
        ParamGroup::Omega,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::LinkFlows => "link_flows",
            ParamGroup::Theta => "theta",
            ParamGroup::Gamma => "gamma",
            ParamGroup::Kernel => "kernel",
            ParamGroup::Poly => "poly",
            ParamGroup::Kappa => "kappa",
            ParamGroup::Delta => "delta",
            ParamGroup::Omega => "omega",
        }
    }

    pub fn from_name(name: &str) -> Option<ParamGroup> {
        ParamGroup::ALL.into_iter().find(|g| g.name() == name)
    }

    /// Whether the group has one row per period.
    pub fn is_periodic(self) -> bool {
        !matches!(self, ParamGroup::Gamma | ParamGroup::Kernel | ParamGroup::Poly)
    }
}

/// A |T| × width table, one row per period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodTable {
    width: usize,
    data: Vec<f64>,
}

impl PeriodTable {
    pub fn filled(periods: usize, width: usize, value: f64) -> Self {
        PeriodTable {
            width,
            data: vec![value; periods * width],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(MateError::Config("ragged period table".into()));
        }
        Ok(PeriodTable {
            width,
            data: rows.concat(),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn periods(&self) -> usize {
        if self.width == 0 {
            0
        } else {
            self.data.len() / self.width
        }
    }

    pub fn row(&self, p: usize) -> &[f64] {
        &self.data[p * self.width..(p + 1) * self.width]
    }

    pub fn row_mut(&mut self, p: usize) -> &mut [f64] {
        &mut self.data[p * self.width..(p + 1) * self.width]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub periods: Vec<String>,
    pub link_flows: PeriodTable,
    pub theta: PeriodTable,
    pub gamma: Vec<f64>,
    /// W values, aligned with `kernel_index` (the CSR order of E).
    pub kernel: Vec<f64>,
    /// (row, column) of every W value.
    pub kernel_index: Vec<(usize, usize)>,
    pub poly: Vec<f64>,
    pub kappa: PeriodTable,
    pub delta: PeriodTable,
    pub omega: PeriodTable,
}

impl ModelParams {
    /// All-zero parameters for `periods`, with W laid out on the pattern of `e`.
    pub fn zeros(
        periods: Vec<String>,
        e: &CsrMatrix,
        num_link_features: usize,
        num_node_features: usize,
        num_nodes: usize,
        num_od: usize,
        degree: usize,
    ) -> Self {
        let t = periods.len();
        let a = e.rows();
        ModelParams {
            link_flows: PeriodTable::filled(t, a, 0.0),
            theta: PeriodTable::filled(t, 1 + num_link_features, 0.0),
            gamma: vec![0.0; a],
            kernel: vec![0.0; e.nnz()],
            kernel_index: e.entries().collect(),
            poly: vec![0.0; degree],
            kappa: PeriodTable::filled(t, num_node_features, 0.0),
            delta: PeriodTable::filled(t, num_nodes, 0.0),
            omega: PeriodTable::filled(t, num_od, 0.0),
            periods,
        }
    }

    pub fn num_periods(&self) -> usize {
        self.periods.len()
    }

    pub fn degree(&self) -> usize {
        self.poly.len()
    }

    pub fn period_index(&self, label: &str) -> Option<usize> {
        self.periods.iter().position(|p| p == label)
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

    /// Row width for periodic groups, full length otherwise.
    pub fn width(&self, group: ParamGroup) -> usize {
        match group {
            ParamGroup::LinkFlows => self.link_flows.width(),
            ParamGroup::Theta => self.theta.width(),
            ParamGroup::Kappa => self.kappa.width(),
            ParamGroup::Delta => self.delta.width(),
            ParamGroup::Omega => self.omega.width(),
            g => self.values(g).len(),
        }
    }

    /// The W values as a matrix with E's pattern.
    pub fn kernel_matrix(&self, e: &CsrMatrix) -> Result<CsrMatrix> {
        self.check_kernel(e)?;
        let triplets: Vec<_> = self
            .kernel_index
            .iter()
            .zip(&self.kernel)
            .map(|(&(r, c), &v)| (r, c, v))
            .collect();
        Ok(CsrMatrix::from_triplets(e.rows(), e.cols(), &triplets))
    }

    /// Verifies that W is laid out on E's pattern.
    pub fn check_kernel(&self, e: &CsrMatrix) -> Result<()> {
        let same = self.kernel_index.len() == e.nnz() && e.entries().zip(&self.kernel_index).all(|(rc, ij)| rc == *ij);
        if same {
            Ok(())
        } else {
            Err(MateError::Config(
                "kernel parameters do not match the interaction mask".into(),
            ))
        }
    }

    /// Clamps every group into its feasible box.
    pub fn project(&mut self, spec: &ParamSpec) {
        for group in ParamGroup::ALL {
            self.project_group(group, spec);
        }
    }

    pub fn project_group(&mut self, group: ParamGroup, spec: &ParamSpec) {
        let bounds = spec.group(group);
        match group {
            ParamGroup::Kernel => {
                let floor = spec.kernel_diagonal_floor;
                for (w, &(r, c)) in self.kernel.iter_mut().zip(&self.kernel_index) {
                    *w = bounds.clamp(*w);
                    if r == c {
                        *w = w.max(floor);
                    }
                }
            }
            ParamGroup::Theta => {
                let width = self.theta.width();
                for (i, v) in self.theta.data_mut().iter_mut().enumerate() {
                    *v = bounds.clamp(*v);
                    if let Some(sign) = spec.theta_signs.get(i % width) {
                        *v = sign.apply(*v);
                    }
                }
            }
            g => {
                for v in self.values_mut(g) {
                    *v = bounds.clamp(*v);
                }
            }
        }
    }
}
