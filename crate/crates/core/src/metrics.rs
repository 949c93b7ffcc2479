//! Safety-centric evaluation metrics.
//!
//! - SR: fraction of successful episodes.
//! - ACR: mean cumulative reward over all episodes.
//! - ACR-F: mean cumulative reward over failed episodes only.
//! - AM-J: over failed episodes, the time-averaged distance between each
//!   logged action and its nearest demonstration action, averaged over
//!   episodes.
//! - AM-E: the same over end-effector positions.
//! - TDL: fraction of failed-episode joint states outside the demonstration
//!   band `mean +/- c * std`, computed per timestep and joint.
//!
//! Failure metrics are absent, not zero, when no episode failed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{DemoDataset, ReferenceScope, Trajectory};
use crate::error::{Error, Result};
use crate::sim::{JointGroup, NoiseConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Band multiplier for TDL.
    pub tdl_c: f64,
    pub reference_scope: ReferenceScope,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            tdl_c: 2.0,
            reference_scope: ReferenceScope::Timestep,
        }
    }
}

fn failures(trajs: &[Trajectory]) -> impl Iterator<Item = &Trajectory> {
    trajs.iter().filter(|t| !t.success)
}

pub fn success_rate(trajs: &[Trajectory]) -> f64 {
    if trajs.is_empty() {
        return 0.0;
    }
    trajs.iter().filter(|t| t.success).count() as f64 / trajs.len() as f64
}

pub fn acr(trajs: &[Trajectory]) -> f64 {
    if trajs.is_empty() {
        return 0.0;
    }
    trajs.iter().map(Trajectory::total_reward).sum::<f64>() / trajs.len() as f64
}

pub fn acr_f(trajs: &[Trajectory]) -> Option<f64> {
    mean(failures(trajs).map(Trajectory::total_reward))
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn norm_over(a: &[f64], b: &[f64], idx: Option<&[usize]>) -> f64 {
    match idx {
        Some(idx) => idx.iter().map(|&j| (a[j] - b[j]).powi(2)).sum::<f64>().sqrt(),
        None => a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt(),
    }
}

fn am_j_restricted(
    trajs: &[Trajectory],
    ds: &DemoDataset,
    scope: ReferenceScope,
    idx: Option<&[usize]>,
) -> Option<f64> {
    mean(failures(trajs).map(|traj| {
        let total: f64 = traj
            .actions
            .iter()
            .enumerate()
            .map(|(t, a)| norm_over(a, ds.nearest_action(a, t, scope), idx))
            .sum();
        total / traj.len() as f64
    }))
}

pub fn am_j(trajs: &[Trajectory], ds: &DemoDataset, scope: ReferenceScope) -> Option<f64> {
    am_j_restricted(trajs, ds, scope, None)
}

/// AM-J with the distance restricted to each joint group's coordinates
/// (reference actions are still matched on the full vector).
pub fn am_j_by_group(
    trajs: &[Trajectory],
    ds: &DemoDataset,
    scope: ReferenceScope,
) -> BTreeMap<JointGroup, f64> {
    JointGroup::ALL
        .iter()
        .filter_map(|&g| {
            let idx = ds.arm().joints_in(g);
            if idx.is_empty() {
                return None;
            }
            am_j_restricted(trajs, ds, scope, Some(&idx)).map(|v| (g, v))
        })
        .collect()
}

pub fn am_e(trajs: &[Trajectory], ds: &DemoDataset, scope: ReferenceScope) -> Option<f64> {
    mean(failures(trajs).map(|traj| {
        let total: f64 = traj
            .ee_positions
            .iter()
            .enumerate()
            .map(|(t, p)| norm_over(p, &ds.nearest_ee(*p, t, scope), None))
            .sum();
        total / traj.len() as f64
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdlSummary {
    pub c: f64,
    /// `band_center[t][j]`: demonstration mean of joint `j` after step `t`.
    pub band_center: Vec<Vec<f64>>,
    /// `band_halfwidth[t][j]`: `c` times the sample standard deviation.
    pub band_halfwidth: Vec<Vec<f64>>,
    /// Absent when no episode failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_of_band_fraction: Option<f64>,
}

impl TdlSummary {
    pub fn label(&self) -> String {
        format!("tdl.out_of_band_fraction(c={})", self.c)
    }
}

/// Demonstration bands over `horizon` timesteps; past a demo's end its final
/// joint angles stand in.
pub fn tdl_bands(ds: &DemoDataset, c: f64, horizon: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let demos = ds.trajectories();
    let n = demos.len() as f64;
    let dim = ds.arm().n_joints;
    let mut center = Vec::with_capacity(horizon);
    let mut half = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let mut mu = vec![0.0; dim];
        for d in demos {
            for (m, a) in mu.iter_mut().zip(d.angles_at(t)) {
                *m += a / n;
            }
        }
        let mut var = vec![0.0; dim];
        for d in demos {
            for ((v, a), m) in var.iter_mut().zip(d.angles_at(t)).zip(&mu) {
                *v += (a - m).powi(2) / (n - 1.0);
            }
        }
        half.push(var.iter().map(|v| c * v.sqrt()).collect());
        center.push(mu);
    }
    (center, half)
}

pub fn tdl(trajs: &[Trajectory], ds: &DemoDataset, c: f64) -> Result<TdlSummary> {
    if ds.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "TDL bands need at least 2 demonstrations, dataset has {}",
            ds.len()
        )));
    }
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!("band multiplier must be > 0, got {c}")));
    }
    let horizon = failures(trajs)
        .map(Trajectory::len)
        .chain(std::iter::once(ds.max_len()))
        .max()
        .unwrap_or(0);
    let (center, half) = tdl_bands(ds, c, horizon);
    let mut outside = 0usize;
    let mut total = 0usize;
    for traj in failures(trajs) {
        for (t, angles) in traj.joint_angles.iter().enumerate() {
            for (j, &a) in angles.iter().enumerate() {
                total += 1;
                if (a - center[t][j]).abs() > half[t][j] {
                    outside += 1;
                }
            }
        }
    }
    Ok(TdlSummary {
        c,
        band_center: center,
        band_halfwidth: half,
        out_of_band_fraction: (total > 0).then(|| outside as f64 / total as f64),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyReport {
    pub n_episodes: usize,
    pub n_failures: usize,
    pub sr: f64,
    pub acr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acr_f: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub am_j: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub am_e: Option<f64>,
    pub am_j_by_group: BTreeMap<JointGroup, f64>,
    pub tdl: TdlSummary,
    pub noise_level: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseConfig>,
    /// Free-form run identification (variant, seed, checkpoint, log path).
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl SafetyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("bad report: {e}")))
    }
}

pub fn build_report(trajs: &[Trajectory], ds: &DemoDataset, cfg: &MetricsConfig) -> Result<SafetyReport> {
    if trajs.is_empty() {
        return Err(Error::InvalidArgument("cannot report on zero episodes".into()));
    }
    let noise_level = trajs[0].noise_level.clone();
    let scope = cfg.reference_scope;
    Ok(SafetyReport {
        n_episodes: trajs.len(),
        n_failures: failures(trajs).count(),
        sr: success_rate(trajs),
        acr: acr(trajs),
        acr_f: acr_f(trajs),
        am_j: am_j(trajs, ds, scope),
        am_e: am_e(trajs, ds, scope),
        am_j_by_group: am_j_by_group(trajs, ds, scope),
        tdl: tdl(trajs, ds, cfg.tdl_c)?,
        noise_level,
        noise: None,
        meta: BTreeMap::new(),
    })
}
