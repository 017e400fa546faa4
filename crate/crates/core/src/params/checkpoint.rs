use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{ModelParams, ParamGroup, PeriodTable};
use crate::error::{MateError, Result};

const FORMAT: &str = "mate-params/1";

/// One parameter group on disk. `rows`/`cols` are present for the sparse kernel only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupData {
    pub shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cols: Option<Vec<usize>>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    /// Period labels in row order of every periodic group.
    pub periods: Vec<String>,
    pub groups: BTreeMap<String, GroupData>,
}

impl Checkpoint {
    pub fn from_params(p: &ModelParams) -> Self {
        let mut groups = BTreeMap::new();
        for g in ParamGroup::ALL {
            let values = p.values(g).to_vec();
            let data = match g {
                ParamGroup::Kernel => {
                    let n = p.gamma.len();
                    GroupData {
                        shape: vec![n, n],
                        rows: Some(p.kernel_index.iter().map(|&(r, _)| r).collect()),
                        cols: Some(p.kernel_index.iter().map(|&(_, c)| c).collect()),
                        values,
                    }
                }
                g if g.is_periodic() => GroupData {
                    shape: vec![p.num_periods(), p.width(g)],
                    rows: None,
                    cols: None,
                    values,
                },
                _ => GroupData {
                    shape: vec![values.len()],
                    rows: None,
                    cols: None,
                    values,
                },
            };
            groups.insert(g.name().to_string(), data);
        }
        Checkpoint {
            format: FORMAT.to_string(),
            periods: p.periods.clone(),
            groups,
        }
    }

    pub fn into_params(self) -> Result<ModelParams> {
        let bad = |m: String| MateError::Data(format!("checkpoint: {m}"));
        if self.format != FORMAT {
            return Err(bad(format!("unsupported format {:?}", self.format)));
        }
        let mut groups = self.groups;
        let t = self.periods.len();
        let mut take = |g: ParamGroup| -> Result<GroupData> {
            let data = groups
                .remove(g.name())
                .ok_or_else(|| bad(format!("missing group {}", g.name())))?;
            let expected: usize = data.shape.iter().product();
            let sparse = g == ParamGroup::Kernel;
            let periodic_ok = !g.is_periodic() || (data.shape.len() == 2 && data.shape[0] == t);
            if (!sparse && expected != data.values.len()) || !periodic_ok {
                return Err(bad(format!("group {} has inconsistent shape", g.name())));
            }
            Ok(data)
        };
        let table = |d: GroupData| PeriodTable {
            width: d.shape[1],
            data: d.values,
        };
        let link_flows = table(take(ParamGroup::LinkFlows)?);
        let theta = table(take(ParamGroup::Theta)?);
        let gamma = take(ParamGroup::Gamma)?.values;
        let kernel = take(ParamGroup::Kernel)?;
        let poly = take(ParamGroup::Poly)?.values;
        let kappa = table(take(ParamGroup::Kappa)?);
        let delta = table(take(ParamGroup::Delta)?);
        let omega = table(take(ParamGroup::Omega)?);
        if let Some(extra) = groups.keys().next() {
            return Err(bad(format!("unknown group {extra}")));
        }
        let (Some(rows), Some(cols)) = (kernel.rows, kernel.cols) else {
            return Err(bad("kernel needs rows and cols".into()));
        };
        if rows.len() != kernel.values.len() || cols.len() != kernel.values.len() {
            return Err(bad("kernel index length mismatch".into()));
        }
        Ok(ModelParams {
            periods: self.periods,
            link_flows,
            theta,
            gamma,
            kernel: kernel.values,
            kernel_index: rows.into_iter().zip(cols).collect(),
            poly,
            kappa,
            delta,
            omega,
        })
    }
}

pub fn write_checkpoint<W: Write>(params: &ModelParams, writer: W) -> Result<()> {
    serde_json::to_writer_pretty(writer, &Checkpoint::from_params(params))?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(reader: R) -> Result<ModelParams> {
    let ckpt: Checkpoint = serde_json::from_reader(reader)?;
    ckpt.into_params()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::CsrMatrix;
    use proptest::prelude::*;

    fn params(seed_values: &[f64]) -> ModelParams {
        let e = CsrMatrix::from_rows(3, &[vec![0, 2], vec![1], vec![0, 2]]);
        let mut p = ModelParams::zeros(vec!["am".into(), "pm".into()], &e, 2, 1, 4, 5, 3);
        for g in ParamGroup::ALL {
            for (i, v) in p.values_mut(g).iter_mut().enumerate() {
                *v = seed_values[i % seed_values.len()] * (i as f64 + 1.0);
            }
        }
        p
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(vals in prop::collection::vec(-1e12f64..1e12, 1..8)) {
            let p = params(&vals);
            let mut buf = Vec::new();
            write_checkpoint(&p, &mut buf).unwrap();
            let back = read_checkpoint(buf.as_slice()).unwrap();
            for g in ParamGroup::ALL {
                let a: Vec<u64> = p.values(g).iter().map(|v| v.to_bits()).collect();
                let b: Vec<u64> = back.values(g).iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(a, b);
            }
            prop_assert_eq!(back, p);
        }
    }

    #[test]
    fn awkward_values_survive() {
        let p = params(&[0.1 + 0.2, 1.0 / 3.0, 5e-324, -0.0, 1.7976931348623157e308 / 100.0]);
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        assert_eq!(read_checkpoint(buf.as_slice()).unwrap(), p);
    }

    #[test]
    fn rejects_corrupt_files() {
        let p = params(&[1.0]);
        let mut ckpt = Checkpoint::from_params(&p);
        ckpt.groups.get_mut("theta").unwrap().values.pop();
        assert!(ckpt.into_params().is_err());
        assert!(read_checkpoint(r#"{"format":"x","periods":[],"groups":{}}"#.as_bytes()).is_err());
    }
}
