use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use mate_core::datagen::SyntheticSpec;
use mate_core::eval::FoldPlan;
use mate_core::eval::DEFAULT_LAMBDA_GRID;
use mate_core::network::Interaction;
use mate_core::params::ParamSpec;
use mate_core::train::TrainConfig;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// TNTP network file; the bundled Sioux Falls network when absent.
    pub net: Option<PathBuf>,
    /// TNTP trips file, required together with `net`.
    pub trips: Option<PathBuf>,
    pub k_paths: usize,
    pub interaction: Interaction,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            net: None,
            trips: None,
            k_paths: 3,
            interaction: Interaction::SharedNode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferSettings {
    /// Gap to stop at; the training run's final gap when absent.
    pub gap_target: Option<f64>,
    pub tolerance: Option<f64>,
    /// Flow σ for the equilibrium normalizer; the training set's when absent.
    pub flow_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoldSettings {
    pub k: usize,
}

impl Default for FoldSettings {
    fn default() -> Self {
        FoldSettings { k: FoldPlan::DEFAULT_K }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    pub grid: Vec<f64>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            grid: DEFAULT_LAMBDA_GRID.to_vec(),
        }
    }
}

/// Everything a command needs. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds data generation, sample order and fold draws.
    pub seed: u64,
    pub network: NetworkConfig,
    /// Dataset directory read by every command except `generate`.
    pub data: Option<PathBuf>,
    pub output: PathBuf,
    pub synthetic: SyntheticSpec,
    pub train: TrainConfig,
    pub params: ParamSpec,
    /// Starting parameters (`infer` requires them).
    pub checkpoint: Option<PathBuf>,
    /// Write a checkpoint every this many epochs during `train`.
    pub checkpoint_every: Option<usize>,
    pub infer: InferSettings,
    pub folds: FoldSettings,
    pub sweep: SweepSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            network: NetworkConfig::default(),
            data: None,
            output: PathBuf::from("mate-run"),
            synthetic: SyntheticSpec::default(),
            train: TrainConfig::default(),
            params: ParamSpec::default(),
            checkpoint: None,
            checkpoint_every: None,
            infer: InferSettings::default(),
            folds: FoldSettings::default(),
            sweep: SweepSettings::default(),
        }
    }
}

/// Overlays `patch` onto `base`, recursing into objects and replacing
/// everything else.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Sets `path` (dot-separated) in a JSON tree, creating objects as needed.
/// The value is parsed as JSON, falling back to a plain string.
pub fn set_key(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {assignment:?}")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Usage(format!("invalid key {path:?}")));
    }
    let mut node = root;
    for key in &keys[..keys.len() - 1] {
        let map = node
            .as_object_mut()
            .ok_or_else(|| CliError::Usage(format!("{path}: {key} is not inside an object")))?;
        node = map
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    node.as_object_mut()
        .ok_or_else(|| CliError::Usage(format!("{path}: parent is not an object")))?
        .insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Loads `file` over the defaults, then applies the `--set` assignments.
    /// Partial sections keep the default values of the keys they omit.
    pub fn load(file: Option<&Path>, sets: &[String]) -> Result<RunConfig, CliError> {
        let mut tree = serde_json::to_value(RunConfig::default())?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            let patch =
                serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
            merge(&mut tree, patch);
        }
        for s in sets {
            set_key(&mut tree, s)?;
        }
        serde_json::from_value(tree).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
    }

    /// Copies the top-level seed into every seeded component.
    pub fn resolve(&mut self) {
        self.synthetic.seed = self.seed;
        self.train.seed = self.seed;
    }

    /// Checks that referenced inputs exist and settings are coherent.
    pub fn validate(&self, needs_data: bool) -> Result<(), CliError> {
        let exists = |p: &Path, what: &str| {
            if p.exists() {
                Ok(())
            } else {
                Err(CliError::Usage(format!("{what} {} does not exist", p.display())))
            }
        };
        match (&self.network.net, &self.network.trips) {
            (Some(n), Some(t)) => {
                exists(n, "network file")?;
                exists(t, "trips file")?;
            }
            (None, None) => {}
            _ => return Err(CliError::Usage("network.net and network.trips go together".into())),
        }
        if self.network.k_paths == 0 {
            return Err(CliError::Usage("network.k_paths must be at least 1".into()));
        }
        if needs_data {
            let dir = self
                .data
                .as_deref()
                .ok_or_else(|| CliError::Usage("a dataset directory is required (data / --data)".into()))?;
            exists(&dir.join("observations.csv"), "observations file")?;
        }
        if let Some(c) = &self.checkpoint {
            exists(c, "checkpoint")?;
        }
        if self.checkpoint_every == Some(0) {
            return Err(CliError::Usage("checkpoint_every must be at least 1".into()));
        }
        self.train.validate()?;
        self.params.validate()?;
        self.synthetic.validate()?;
        Ok(())
    }
}
