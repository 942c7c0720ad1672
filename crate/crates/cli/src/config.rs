//! Run configuration: a flat JSON object, one file per run, with CLI flags
//! overriding file keys. Every output embeds the resolved config so results
//! are self-describing.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use walkphase_core::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// RNG seed; identical seed and config give byte-identical outputs.
    pub seed: u64,
    /// Output directory.
    pub out: PathBuf,
    /// Periodic site count N.
    pub n_sites: usize,
    /// Stored trajectory length J.
    pub steps: usize,
    /// Correlation half-window M_t.
    pub window: usize,
    /// Random-field trials in the identity suite.
    pub trials: usize,
    /// Coin angle for fixed-angle runs.
    pub theta: f64,
    /// Physical mass for scaling families.
    pub mass: f64,
    pub eps_list: Vec<f64>,
    pub box_len: f64,
    pub t_final: f64,
    /// Packet center momentum (lattice units).
    pub k0: f64,
    /// Packet bandwidth (lattice units); 0 selects 8 grid spacings.
    pub sigma_k: f64,
    /// Packet center momentum and bandwidth in physical units, for
    /// convergence families.
    pub k0_physical: f64,
    pub sigma_physical: f64,
    /// Constant-spinor mix (see core docs); angle < 0 requests a pure
    /// positive-branch packet instead.
    pub spin_mix_angle: f64,
    pub spin_mix_phase: f64,
    /// Overall state amplitude; 0 produces the zero state.
    pub amplitude: f64,
    /// Wigner dump source: "packet" or "plane-wave".
    pub source: String,
    /// Commensurate eigenmode indices for plane-wave sources and the grid
    /// transport audit: omega = pi q_time / (2 window), k = 2 pi q_space / N.
    pub q_time: usize,
    pub q_space: i64,
    /// Base instant j0; 0 selects window + 1.
    pub base_time: usize,
    /// Which flag set "selected" columns use: "ledger" (audited) or "printed".
    pub variant: String,
    /// Fault-injection hook for the identity suite ("d2-double").
    pub fault: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out: PathBuf::from("out"),
            n_sites: 64,
            steps: 64,
            window: 8,
            trials: 100,
            theta: 0.3,
            mass: 1.0,
            eps_list: vec![1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0],
            box_len: 16.0,
            t_final: 4.0,
            k0: 0.5,
            sigma_k: 0.0,
            k0_physical: 2.0 * std::f64::consts::PI * 3.0 / 16.0,
            sigma_physical: 0.4,
            spin_mix_angle: 0.7,
            spin_mix_phase: 0.4,
            amplitude: 1.0,
            source: "packet".into(),
            q_time: 3,
            q_space: 2,
            base_time: 0,
            variant: "ledger".into(),
            fault: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{path:?}: {e}")))
    }

    pub fn effective_sigma_k(&self) -> f64 {
        if self.sigma_k > 0.0 {
            self.sigma_k
        } else {
            8.0 * 2.0 * std::f64::consts::PI / self.n_sites as f64
        }
    }

    pub fn effective_base_time(&self) -> usize {
        if self.base_time > 0 {
            self.base_time
        } else {
            self.window + 1
        }
    }

    pub fn validate_variant(&self) -> Result<()> {
        match self.variant.as_str() {
            "ledger" | "printed" => Ok(()),
            other => Err(Error::Config(format!(
                "variant must be 'ledger' or 'printed', got '{other}'"
            ))),
        }
    }
}
