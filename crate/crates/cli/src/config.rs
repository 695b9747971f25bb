use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::{Path, PathBuf};
use yieldnet::raster::Cutoff;
use yieldnet::synth::WorldParams;
use yieldnet::train::TrainConfig;

/// Marks errors that should exit with the usage status.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(UsageError(msg.into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    Yieldnet,
    YieldnetCorn,
    YieldnetSoy,
    Ridge,
    Lasso,
    Tree,
    Forest,
    Dfnn,
}

impl ModelChoice {
    pub fn name(self) -> &'static str {
        match self {
            ModelChoice::Yieldnet => "yieldnet",
            ModelChoice::YieldnetCorn => "yieldnet_corn",
            ModelChoice::YieldnetSoy => "yieldnet_soy",
            ModelChoice::Ridge => "ridge",
            ModelChoice::Lasso => "lasso",
            ModelChoice::Tree => "tree",
            ModelChoice::Forest => "forest",
            ModelChoice::Dfnn => "dfnn",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Raw rasters, masks and `index.json`.
    pub raw_dir: PathBuf,
    /// Histogram cubes and `dataset.json`.
    pub cube_dir: PathBuf,
    /// Reports, plots and baseline model files.
    pub out_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub bins: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            raw_dir: "data/raw".into(),
            cube_dir: "data/cubes".into(),
            out_dir: "out".into(),
            checkpoint: "out/model.ynm".into(),
            bins: "data/bins.json".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSettings {
    pub lasso_lambda: f64,
    pub ridge_lambda: f64,
    pub tree_depth: usize,
    pub forest_trees: usize,
    pub forest_depth: usize,
    pub dfnn_iterations: usize,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        Self {
            lasso_lambda: 0.05,
            ridge_lambda: 0.05,
            tree_depth: 12,
            forest_trees: 150,
            forest_depth: 20,
            dfnn_iterations: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub train: TrainConfig,
    pub model: ModelChoice,
    pub test_years: Vec<u32>,
    pub cutoffs: Vec<Cutoff>,
    pub bins: usize,
    /// Drives world generation, initialization and batching.
    pub seed: u64,
    pub world: WorldParams,
    pub baselines: BaselineSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            train: TrainConfig::default(),
            model: ModelChoice::Yieldnet,
            test_years: vec![2016, 2017, 2018],
            cutoffs: Cutoff::ALL.to_vec(),
            bins: 32,
            seed: 0,
            world: WorldParams::default(),
            baselines: BaselineSettings::default(),
        }
    }
}

/// Sets `path` (dotted) inside a JSON tree, creating objects as needed.
fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            bail!(UsageError(format!("bad key '{path}'")));
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| usage(format!("'{}' is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

/// Values parse as JSON when possible, else as plain strings.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

impl RunConfig {
    /// Defaults, then the config file, then `--set` overrides, then
    /// `--seed`.
    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let mut tree = serde_json::to_value(RunConfig::default())?;
        if let Some(p) = path {
            let raw = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            let file: Value =
                serde_json::from_str(&raw).map_err(|e| usage(format!("config {}: {e}", p.display())))?;
            merge(&mut tree, file);
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| usage(format!("--set expects key=value, got '{o}'")))?;
            set_path(&mut tree, k.trim(), parse_value(v.trim()))?;
        }
        let mut cfg: RunConfig = serde_json::from_value(tree).map_err(|e| usage(format!("invalid config: {e}")))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.train.seed = cfg.seed;
        cfg.world.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        self.train.validate().map_err(|e| usage(e.to_string()))?;
        self.world.validate().map_err(|e| usage(e.to_string()))?;
        if self.test_years.is_empty() {
            bail!(UsageError("test_years must not be empty".into()));
        }
        if self.cutoffs.is_empty() {
            bail!(UsageError("cutoffs must not be empty".into()));
        }
        if self.bins < 2 {
            bail!(UsageError(format!("bins must be at least 2, got {}", self.bins)));
        }
        Ok(())
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}
