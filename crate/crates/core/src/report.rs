//! Serializable run reports: stage artifacts, endpoints, volumes,
//! counts and timings, written next to the paving files.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BoxCounts {
    pub ndef: usize,
    pub niset: usize,
    pub proj: usize,
    pub doa: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TimingsMs {
    pub ndef: f64,
    pub refine: f64,
    pub total: f64,
}

/// Result document for the estimation pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DoaReport {
    pub alpha: f64,
    pub eps: f64,
    pub degenerate: bool,
    pub iterations: usize,
    /// Connected components of the projection (1-D state spaces only).
    pub proj_components: Option<Vec<[f64; 2]>>,
    pub proj_volume: f64,
    pub x0: Option<Vec<[f64; 2]>>,
    pub doa_components: Option<Vec<[f64; 2]>>,
    pub volume: f64,
    pub box_counts: BoxCounts,
    pub timings_ms: TimingsMs,
    /// Gain actually used for the origin neighborhood.
    pub gain: Option<Vec<Vec<f64>>>,
    pub spectral_radius: Option<f64>,
}

/// Closed-loop verification summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub controller: String,
    pub trajectories: usize,
    pub converged: usize,
    pub max_steps: usize,
    pub conv_tol: f64,
    pub seed: u64,
    /// States observed strictly inside a forbidden gap of the estimate.
    pub gap_violations: usize,
    pub gap_avoided: bool,
    /// Simulated steps where the Lyapunov value failed to decrease while
    /// the state was under table or sampled control.
    pub lyapunov_increase_steps: usize,
    pub total_steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineReport {
    pub level: f64,
    pub eps: f64,
    pub set_components: Option<Vec<[f64; 2]>>,
    pub set_volume: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizeReport {
    pub swarm: usize,
    pub iterations: usize,
    pub seed: u64,
    pub best_objective: f64,
    pub best_p: Vec<Vec<f64>>,
    pub history_len: usize,
}

impl DoaReport {
    pub fn save(&self, path: &std::path::Path) -> crate::Result<()> {
        save_json(self, path)
    }
}

pub fn save_json<T: Serialize>(value: &T, path: &std::path::Path) -> crate::Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| crate::Error::Io(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &std::path::Path) -> crate::Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| crate::Error::Io(format!("{}: {e}", path.display())))
}
