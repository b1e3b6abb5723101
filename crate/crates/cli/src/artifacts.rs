//! Machine-readable artifacts: the run manifest and the privacy report.
//! Everything written here is deterministic for a fixed config and seed;
//! wall-clock time never enters these files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use privkd_core::privacy::accountant::AccountantState;
use privkd_core::privacy::DpConfig;
use privkd_core::trainer::{RunOutput, TrainConfig};
use privkd_core::{Error, Result};

use crate::config::Config;

pub const TOOL: &str = "privkd";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Summary statistics for the manifest's `run` block.
#[derive(Debug, Clone, Serialize)]
pub struct RunBlock {
    pub acc_teacher: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acc_student: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub order: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sanitize_calls: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accountant_steps: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub floor_hits_total: Option<u64>,
}

/// What a command did: the full config it resolved, where it wrote its
/// artifacts, and headline numbers. One manifest per command invocation.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<serde_json::Value>,
    pub artifacts: BTreeMap<String, PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run: Option<RunBlock>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, cfg: &Config) -> Result<Self> {
        Ok(Manifest {
            tool: TOOL,
            version: VERSION,
            command: command.to_string(),
            seed,
            config: serde_json::to_value(cfg)
                .map_err(|e| Error::format(format!("cannot encode config: {e}")))?,
            train: None,
            artifacts: BTreeMap::new(),
            run: None,
        })
    }

    pub fn with_train(mut self, tc: &TrainConfig) -> Result<Self> {
        self.train = Some(
            serde_json::to_value(tc)
                .map_err(|e| Error::format(format!("cannot encode training config: {e}")))?,
        );
        Ok(self)
    }

    pub fn artifact(&mut self, name: &str, path: &Path) {
        self.artifacts.insert(name.to_string(), path.to_path_buf());
    }

    /// Verifies every referenced artifact exists, then writes the manifest
    /// itself. Call after all other files are on disk.
    pub fn write(&self, path: &Path) -> Result<()> {
        for (name, p) in &self.artifacts {
            if !p.exists() {
                return Err(Error::format(format!(
                    "manifest references {name} at {} but nothing was written there",
                    p.display()
                )));
            }
        }
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::format(format!("cannot encode manifest: {e}")))?;
        fs::write(path, text)?;
        Ok(())
    }
}

/// The privacy accounting report for one transfer run: the converted spend,
/// the full per-order state behind it, and the standing caveats about what
/// the accounting does and does not cover.
#[derive(Debug, Clone, Serialize)]
pub struct PrivacyReport {
    pub epsilon: f64,
    pub delta: f64,
    pub order: u32,
    pub steps: u64,
    pub sample_rate: f64,
    pub noise_multiplier: f64,
    pub clip: f64,
    pub orders: Vec<u32>,
    pub eps_rdp: Vec<f64>,
    pub notes: Vec<&'static str>,
}

impl PrivacyReport {
    pub fn new(dp: &DpConfig, accountant: &AccountantState, out: &RunOutput) -> Self {
        PrivacyReport {
            epsilon: out.spend.epsilon,
            delta: out.spend.delta,
            order: out.spend.order,
            steps: accountant.steps(),
            sample_rate: dp.sample_rate,
            noise_multiplier: dp.noise_multiplier,
            clip: dp.clip,
            orders: accountant.orders().to_vec(),
            eps_rdp: accountant.eps_rdp().to_vec(),
            notes: vec![
                "The accountant analyzes Poisson subsampling at rate q; training samples \
                 fixed-size batches by shuffling, so the reported bound is the customary \
                 approximation, not an exact guarantee for the shuffled loader.",
                "A final short batch is accounted at the full rate q, which can only \
                 overstate its contribution.",
                "Discriminator updates consume no budget: they see public inputs and \
                 relaxed samples from the two model distributions, never the private data. \
                 The sanitized distillation release is the only accounted mechanism.",
            ],
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::format(format!("cannot encode privacy report: {e}")))?;
        fs::write(path, text)?;
        Ok(())
    }
}
