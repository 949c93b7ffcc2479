//! Demonstrations, trajectory logs, chunk sampling and reference lookup.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::sim::{self, ArmConfig, Expert, NoiseConfig, Point};
use crate::textfmt::{check_finite, Floats, Rows};

pub const SCHEMA_VERSION: u32 = 1;

/// Attempts per demonstration before generation gives up.
pub const DEMO_RETRIES: usize = 20;

/// One episode. `actions` are the policy outputs before any noise;
/// `joint_angles` and `ee_positions` are the states reached after each
/// executed step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub actions: Vec<Vec<f64>>,
    pub joint_angles: Vec<Vec<f64>>,
    pub ee_positions: Vec<Point>,
    pub rewards: Vec<f64>,
    pub success: bool,
    pub seed: u64,
    pub noise_level: String,
}

impl Trajectory {
    pub fn empty(seed: u64, noise_level: impl Into<String>) -> Self {
        Self {
            actions: Vec::new(),
            joint_angles: Vec::new(),
            ee_positions: Vec::new(),
            rewards: Vec::new(),
            success: false,
            seed,
            noise_level: noise_level.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.rewards.len();
        if t == 0 {
            return Err(Error::InvalidArgument("trajectory has no steps".into()));
        }
        if self.actions.len() != t || self.joint_angles.len() != t || self.ee_positions.len() != t {
            return Err(Error::InvalidArgument(format!(
                "per-step arrays disagree in length: actions {}, joint_angles {}, ee_positions {}, rewards {t}",
                self.actions.len(),
                self.joint_angles.len(),
                self.ee_positions.len()
            )));
        }
        Ok(())
    }

    /// Action at `t`, or the final action past the end.
    pub fn action_at(&self, t: usize) -> &[f64] {
        &self.actions[t.min(self.len() - 1)]
    }

    pub fn ee_at(&self, t: usize) -> Point {
        self.ee_positions[t.min(self.len() - 1)]
    }

    pub fn angles_at(&self, t: usize) -> &[f64] {
        &self.joint_angles[t.min(self.len() - 1)]
    }

    fn to_line(&self) -> Result<String> {
        self.validate()?;
        check_finite("rewards", &self.rewards)?;
        check_finite("actions", self.actions.iter().flatten())?;
        check_finite("joint_angles", self.joint_angles.iter().flatten())?;
        check_finite("ee_positions", self.ee_positions.iter().flatten())?;
        let mut line = String::new();
        write!(
            line,
            "{{\"schema_version\":{SCHEMA_VERSION},\"seed\":{},\"noise_level\":{},\"success\":{},\"actions\":{},\"joint_angles\":{},\"ee_positions\":{},\"rewards\":{}}}",
            self.seed,
            serde_json::to_string(&self.noise_level).expect("string serializes"),
            self.success,
            Rows(&self.actions),
            Rows(&self.joint_angles),
            Rows(&self.ee_positions),
            Floats(&self.rewards),
        )
        .expect("writing to a String");
        Ok(line)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryRecord {
    schema_version: u32,
    seed: u64,
    noise_level: String,
    success: bool,
    actions: Vec<Vec<f64>>,
    joint_angles: Vec<Vec<f64>>,
    ee_positions: Vec<Point>,
    rewards: Vec<f64>,
}

impl TrajectoryRecord {
    fn into_trajectory(self) -> std::result::Result<Trajectory, String> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(format!("unsupported schema_version {}", self.schema_version));
        }
        let t = Trajectory {
            actions: self.actions,
            joint_angles: self.joint_angles,
            ee_positions: self.ee_positions,
            rewards: self.rewards,
            success: self.success,
            seed: self.seed,
            noise_level: self.noise_level,
        };
        t.validate().map_err(|e| e.to_string())?;
        Ok(t)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetHeader {
    kind: String,
    schema_version: u32,
    env_hash: String,
    count: usize,
}

const DATASET_KIND: &str = "demo_dataset";

pub(crate) fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Splits into newline-terminated lines. A final line without its newline
/// means the file was cut short.
pub(crate) fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Vec::new();
    for (i, piece) in text.split_inclusive('\n').enumerate() {
        match piece.strip_suffix('\n') {
            Some(line) => lines.push(line.to_string()),
            None => {
                return Err(Error::Parse {
                    path: path.into(),
                    line: i + 1,
                    message: "truncated record (missing line terminator)".into(),
                })
            }
        }
    }
    Ok(lines)
}

fn parse_trajectory(path: &Path, line_no: usize, line: &str) -> Result<Trajectory> {
    let parse_err = |message: String| Error::Parse {
        path: path.into(),
        line: line_no,
        message,
    };
    let rec: TrajectoryRecord = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
    rec.into_trajectory().map_err(parse_err)
}

pub fn save_log(trajs: &[Trajectory], path: impl AsRef<Path>) -> Result<()> {
    let mut body = String::new();
    for t in trajs {
        body.push_str(&t.to_line()?);
        body.push('\n');
    }
    write_file(path.as_ref(), &body)
}

pub fn load_log(path: impl AsRef<Path>) -> Result<Vec<Trajectory>> {
    let path = path.as_ref();
    read_lines(path)?
        .iter()
        .enumerate()
        .map(|(i, line)| parse_trajectory(path, i + 1, line))
        .collect()
}

/// Identity of an arm configuration, used to refuse mixing demonstrations
/// from different environments.
pub fn env_hash(arm: &ArmConfig) -> String {
    let canonical = serde_json::to_string(arm).expect("arm config serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceScope {
    /// Candidates are the demonstrations' entries at the same timestep.
    #[default]
    Timestep,
    /// Candidates are every entry of every demonstration.
    Global,
}

/// Successful expert trajectories from a single arm configuration: the
/// reference set for the deviation metrics and the training corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoDataset {
    trajectories: Vec<Trajectory>,
    goals: Vec<Point>,
    arm: ArmConfig,
    env_hash: String,
}

impl DemoDataset {
    pub fn new(trajectories: Vec<Trajectory>, arm: &ArmConfig) -> Result<Self> {
        arm.validate()?;
        if trajectories.is_empty() {
            return Err(Error::InvalidArgument("demo dataset must be non-empty".into()));
        }
        for (i, t) in trajectories.iter().enumerate() {
            t.validate()?;
            if !t.success {
                return Err(Error::InvalidArgument(format!("demo {i} did not succeed")));
            }
            let bad_dims = t.actions.iter().chain(&t.joint_angles).any(|v| v.len() != arm.n_joints);
            if bad_dims {
                return Err(Error::InvalidArgument(format!(
                    "demo {i} does not match the {}-joint arm",
                    arm.n_joints
                )));
            }
        }
        let goals = trajectories
            .iter()
            .map(|t| sim::episode_goal(arm, t.seed))
            .collect();
        Ok(Self {
            trajectories,
            goals,
            arm: arm.clone(),
            env_hash: env_hash(arm),
        })
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn arm(&self) -> &ArmConfig {
        &self.arm
    }

    pub fn env_hash(&self) -> &str {
        &self.env_hash
    }

    pub fn max_len(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).max().unwrap_or(0)
    }

    pub fn action_dim(&self) -> usize {
        self.arm.n_joints
    }

    /// Observation the expert saw before taking step `t` of demo `i`.
    pub fn observation(&self, i: usize, t: usize) -> Vec<f64> {
        let traj = &self.trajectories[i];
        let angles = if t == 0 {
            &self.arm.home_angles
        } else {
            &traj.joint_angles[(t - 1).min(traj.len() - 1)]
        };
        sim::observation(angles, self.goals[i])
    }

    pub fn nearest_action(&self, a: &[f64], t: usize, scope: ReferenceScope) -> &[f64] {
        let candidates: Box<dyn Iterator<Item = &[f64]>> = match scope {
            ReferenceScope::Timestep => Box::new(self.trajectories.iter().map(|d| d.action_at(t))),
            ReferenceScope::Global => Box::new(
                self.trajectories
                    .iter()
                    .flat_map(|d| d.actions.iter().map(Vec::as_slice)),
            ),
        };
        argmin_by(candidates, |c| sq_dist(a, c)).expect("dataset is non-empty")
    }

    pub fn nearest_ee(&self, p: Point, t: usize, scope: ReferenceScope) -> Point {
        let candidates: Box<dyn Iterator<Item = Point>> = match scope {
            ReferenceScope::Timestep => Box::new(self.trajectories.iter().map(|d| d.ee_at(t))),
            ReferenceScope::Global => Box::new(
                self.trajectories
                    .iter()
                    .flat_map(|d| d.ee_positions.iter().copied()),
            ),
        };
        argmin_by(candidates, |c| sq_dist(&p, c)).expect("dataset is non-empty")
    }
}

/// First minimiser wins ties.
fn argmin_by<T>(items: impl Iterator<Item = T>, key: impl Fn(&T) -> f64) -> Option<T> {
    let mut best: Option<(f64, T)> = None;
    for item in items {
        let k = key(&item);
        if best.as_ref().is_none_or(|(bk, _)| k < *bk) {
            best = Some((k, item));
        }
    }
    best.map(|(_, t)| t)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest same-timestep demo action (final action past a demo's end).
pub fn nearest_reference_action<'a>(a: &[f64], t: usize, ds: &'a DemoDataset) -> &'a [f64] {
    ds.nearest_action(a, t, ReferenceScope::Timestep)
}

pub fn nearest_reference_ee(p: Point, t: usize, ds: &DemoDataset) -> Point {
    ds.nearest_ee(p, t, ReferenceScope::Timestep)
}

/// Runs `n` noise-free expert episodes with seeded random goals. A failed
/// rollout is replaced by one with a fresh goal, up to [`DEMO_RETRIES`]
/// attempts per demonstration.
pub fn generate_demonstrations(arm: &ArmConfig, n: usize, seed: u64) -> Result<DemoDataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one demonstration".into()));
    }
    arm.validate()?;
    let mut trajs = Vec::with_capacity(n);
    let mut counter = 0u64;
    for i in 0..n {
        let mut found = None;
        for _ in 0..DEMO_RETRIES {
            let ep_seed = derive_seed(seed, counter);
            counter += 1;
            let t = sim::run_episode(&Expert, arm, &NoiseConfig::NONE, ep_seed, None)?;
            if t.success {
                found = Some(t);
                break;
            }
        }
        match found {
            Some(t) => trajs.push(t),
            None => {
                return Err(Error::Generation(format!(
                    "demo {i}: expert failed {DEMO_RETRIES} consecutive goals"
                )))
            }
        }
    }
    DemoDataset::new(trajs, arm)
}

pub fn save_dataset(ds: &DemoDataset, path: impl AsRef<Path>) -> Result<()> {
    let header = DatasetHeader {
        kind: DATASET_KIND.into(),
        schema_version: SCHEMA_VERSION,
        env_hash: ds.env_hash.clone(),
        count: ds.len(),
    };
    let mut body = serde_json::to_string(&header).expect("header serializes");
    body.push('\n');
    for t in &ds.trajectories {
        body.push_str(&t.to_line()?);
        body.push('\n');
    }
    write_file(path.as_ref(), &body)
}

/// Loads a dataset file, checking it was generated for `arm`.
pub fn load_dataset(path: impl AsRef<Path>, arm: &ArmConfig) -> Result<DemoDataset> {
    let path = path.as_ref();
    let lines = read_lines(path)?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.into(),
        line,
        message,
    };
    let first = lines
        .first()
        .ok_or_else(|| parse_err(1, "empty dataset file (missing header)".into()))?;
    let header: DatasetHeader =
        serde_json::from_str(first).map_err(|e| parse_err(1, format!("bad header: {e}")))?;
    if header.kind != DATASET_KIND || header.schema_version != SCHEMA_VERSION {
        return Err(parse_err(1, "not a demo dataset file of a supported version".into()));
    }
    if header.count != lines.len() - 1 {
        return Err(parse_err(
            lines.len(),
            format!("header declares {} demos, file holds {}", header.count, lines.len() - 1),
        ));
    }
    let expected = env_hash(arm);
    if header.env_hash != expected {
        return Err(Error::InvalidConfig(format!(
            "{} was generated for a different arm configuration",
            path.display()
        )));
    }
    let trajs = lines[1..]
        .iter()
        .enumerate()
        .map(|(i, l)| parse_trajectory(path, i + 2, l))
        .collect::<Result<Vec<_>>>()?;
    DemoDataset::new(trajs, arm)
}

/// Training minibatch of observation / action-chunk pairs. Chunks are
/// flattened step-major (`k * action_dim`) and zero-padded past the episode
/// end; `mask[b][s]` is false for padded steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkBatch {
    pub observations: Vec<Vec<f64>>,
    pub target_chunks: Vec<Vec<f64>>,
    pub mask: Vec<Vec<bool>>,
    /// (demo index, start timestep) of each element.
    pub origins: Vec<(usize, usize)>,
    pub chunk_k: usize,
    pub action_dim: usize,
}

impl ChunkBatch {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Mask expanded to one flag per chunk entry.
    pub fn entry_mask(&self, b: usize) -> Vec<bool> {
        self.mask[b]
            .iter()
            .flat_map(|&m| std::iter::repeat_n(m, self.action_dim))
            .collect()
    }
}

/// Builds the chunk starting at `start` of demo `i`.
pub fn chunk_at(ds: &DemoDataset, i: usize, start: usize, k: usize) -> (Vec<f64>, Vec<bool>) {
    let traj = &ds.trajectories[i];
    let dim = ds.action_dim();
    let mut chunk = vec![0.0; k * dim];
    let mut mask = vec![false; k];
    for s in 0..k {
        if let Some(a) = traj.actions.get(start + s) {
            chunk[s * dim..(s + 1) * dim].copy_from_slice(a);
            mask[s] = true;
        }
    }
    (chunk, mask)
}

/// Samples `batch` (demo, start) pairs: demo uniformly, then start uniformly
/// within that demo.
pub fn sample_batch<R: Rng + ?Sized>(
    ds: &DemoDataset,
    batch: usize,
    k: usize,
    rng: &mut R,
) -> Result<ChunkBatch> {
    if k == 0 {
        return Err(Error::InvalidArgument("chunk length must be >= 1".into()));
    }
    let mut out = ChunkBatch {
        observations: Vec::with_capacity(batch),
        target_chunks: Vec::with_capacity(batch),
        mask: Vec::with_capacity(batch),
        origins: Vec::with_capacity(batch),
        chunk_k: k,
        action_dim: ds.action_dim(),
    };
    for _ in 0..batch {
        let i = rng.random_range(0..ds.len());
        let start = rng.random_range(0..ds.trajectories[i].len());
        let (chunk, mask) = chunk_at(ds, i, start, k);
        out.observations.push(ds.observation(i, start));
        out.target_chunks.push(chunk);
        out.mask.push(mask);
        out.origins.push((i, start));
    }
    Ok(out)
}
