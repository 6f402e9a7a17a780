//! Run configuration: a TOML file with nested sections, plus dotted-key
//! overrides such as `policy=fixmatch` or `model.hidden=[32,32]`.
//!
//! Unknown keys are rejected everywhere. The effective configuration is
//! rendered canonically with [`RunConfig::to_toml`]; its digest tags every
//! artifact of the run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{AugmentationSpec, DataConfig};
use crate::error::{Error, Result};
use crate::policy::PolicyKind;
use crate::seeds::{content_hash, SubSeeds};
use crate::selection::SelectionConfig;

/// Environment variable that relocates relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "MARGINMATCH_OUTPUT_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnlabeledReduction {
    /// Divide the masked sum by the nominal unlabeled batch size.
    MeanOverBatch,
    Sum,
}

/// How threshold samples are fed to the supervised loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdSchedule {
    /// Each threshold sample appears in exactly one batch per pass.
    OncePerPass,
    /// Threshold samples join the labeled set and are drawn with it.
    WithLabeled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdSampleConfig {
    pub fraction: f64,
    pub min_count: usize,
    pub schedule: ThresholdSchedule,
}

impl Default for ThresholdSampleConfig {
    fn default() -> Self {
        Self {
            fraction: 0.01,
            min_count: 10,
            schedule: ThresholdSchedule::OncePerPass,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            learning_rate: 0.03,
            momentum: 0.9,
            weight_decay: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub write_decisions: bool,
    pub record_trace: bool,
    /// Checkpoint every this many passes; 0 writes only the final one.
    pub checkpoint_every: u32,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
            write_decisions: true,
            record_trace: false,
            checkpoint_every: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub policy: PolicyKind,
    pub tau: f64,
    pub lambda: f64,
    pub nu: usize,
    pub batch_size: usize,
    pub delta: f64,
    pub percentile: f64,
    /// Optimizer step budget K; the run trains as many full passes as fit.
    pub steps: u64,
    pub seed: u64,
    pub fixed_confidence: bool,
    pub fixed_gamma: Option<f64>,
    pub gamma_freeze_after: Option<u32>,
    pub aum_warmup_passes: u32,
    pub renormalize_confidence: bool,
    pub unlabeled_loss_reduction: UnlabeledReduction,
    pub data: DataConfig,
    pub threshold_samples: ThresholdSampleConfig,
    pub augment: AugmentationSpec,
    pub model: ModelConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            policy: PolicyKind::MarginMatch,
            tau: 0.95,
            lambda: 1.0,
            nu: 7,
            batch_size: 64,
            delta: 0.997,
            percentile: 95.0,
            steps: 20_000,
            seed: 0,
            fixed_confidence: false,
            fixed_gamma: None,
            gamma_freeze_after: None,
            aum_warmup_passes: 1,
            renormalize_confidence: false,
            unlabeled_loss_reduction: UnlabeledReduction::MeanOverBatch,
            data: DataConfig::default(),
            threshold_samples: ThresholdSampleConfig::default(),
            augment: AugmentationSpec::default(),
            model: ModelConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn selection(&self) -> SelectionConfig {
        SelectionConfig {
            policy: self.policy,
            tau: self.tau,
            delta: self.delta,
            percentile: self.percentile,
            fixed_confidence: self.fixed_confidence,
            fixed_gamma: self.fixed_gamma,
            gamma_freeze_after: self.gamma_freeze_after,
            aum_warmup_passes: self.aum_warmup_passes,
            renormalize_confidence: self.renormalize_confidence,
        }
    }

    pub fn sub_seeds(&self) -> SubSeeds {
        SubSeeds::expand(self.seed)
    }

    pub fn unlabeled_batch(&self) -> usize {
        self.nu * self.batch_size
    }

    pub fn validate(&self) -> Result<()> {
        self.selection().validate()?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.nu < 1 {
            return Err(Error::config("nu must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.steps == 0 {
            return Err(Error::config("steps must be positive"));
        }
        self.data.validate()?;
        self.augment.validate()?;
        let ts = &self.threshold_samples;
        if !(ts.fraction > 0.0 && ts.fraction < 1.0) {
            return Err(Error::config(format!(
                "threshold_samples.fraction must lie in (0, 1), got {}",
                ts.fraction
            )));
        }
        let m = &self.model;
        if m.hidden.contains(&0) {
            return Err(Error::config("hidden widths must be positive"));
        }
        if !(m.learning_rate > 0.0 && m.learning_rate.is_finite()) {
            return Err(Error::config("model.learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&m.momentum) {
            return Err(Error::config("model.momentum must lie in [0, 1)"));
        }
        if !(m.weight_decay >= 0.0 && m.weight_decay.is_finite()) {
            return Err(Error::config("model.weight_decay must be >= 0"));
        }
        Ok(())
    }

    /// Canonical TOML rendering.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    pub fn hash(&self) -> String {
        content_hash(&self.to_toml())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config {
            key: "<file>".into(),
            message: e.to_string(),
        })?;
        Self::from_table(table)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: RunConfig =
            serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| Error::Config {
                key: e.path().to_string(),
                message: e.inner().to_string(),
            })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (or starts from defaults) and applies `key=value`
    /// overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse::<toml::Table>().map_err(|e| Error::Config {
                    key: p.display().to_string(),
                    message: e.to_string(),
                })?
            }
            None => toml::Table::new(),
        };
        for ov in overrides {
            apply_override(&mut table, ov)?;
        }
        Self::from_table(table)
    }

    /// Output directory, relocated under `$MARGINMATCH_OUTPUT_ROOT` when
    /// that is set and the configured path is relative.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output.dir.is_relative() => PathBuf::from(root).join(&self.output.dir),
            _ => self.output.dir.clone(),
        }
    }
}

/// Applies one `dotted.key=value` override. Values parse as TOML literals
/// and fall back to bare strings.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| Error::Config {
        key: assignment.into(),
        message: "override must look like key=value".into(),
    })?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config {
            key: key.into(),
            message: "empty key segment".into(),
        });
    }
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));

    let mut parts: Vec<&str> = key.split('.').collect();
    let leaf = parts.pop().unwrap();
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| Error::Config {
            key: key.into(),
            message: format!("`{p}` is not a section"),
        })?;
    }
    cur.insert(leaf.to_string(), value);
    Ok(())
}
