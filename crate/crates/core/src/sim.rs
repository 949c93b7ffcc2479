//! Planar N-joint arm with a reach-and-hold task.
//!
//! The arm is purely kinematic: an action is a vector of joint-angle deltas,
//! applied and clamped to the joint limits. Each step pays a dense
//! distance-shaped reward plus a one-time bonus the first time the end
//! effector enters the goal tolerance; the episode succeeds once the end
//! effector has stayed inside the tolerance for `hold_steps` consecutive
//! steps.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Trajectory;
use crate::error::{ensure, Error, Result};
use crate::rng::{self, Stream};

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointGroup {
    HighPriority,
    Secondary,
}

impl JointGroup {
    pub const ALL: [JointGroup; 2] = [JointGroup::HighPriority, JointGroup::Secondary];

    pub fn as_str(self) -> &'static str {
        match self {
            JointGroup::HighPriority => "high_priority",
            JointGroup::Secondary => "secondary",
        }
    }
}

impl fmt::Display for JointGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Polar sector goals are drawn from, centred on the arm base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalRegion {
    pub radius: [f64; 2],
    pub angle: [f64; 2],
}

impl Default for GoalRegion {
    fn default() -> Self {
        Self {
            radius: [2.5, 4.0],
            angle: [0.4, 1.2],
        }
    }
}

impl GoalRegion {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let r = self.radius[0] + (self.radius[1] - self.radius[0]) * rng.random::<f64>();
        let a = self.angle[0] + (self.angle[1] - self.angle[0]) * rng.random::<f64>();
        [r * a.cos(), r * a.sin()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArmConfig {
    pub n_joints: usize,
    pub link_lengths: Vec<f64>,
    pub joint_limits: Vec<[f64; 2]>,
    pub dt: f64,
    pub max_steps: usize,
    pub joint_groups: Vec<JointGroup>,
    pub home_angles: Vec<f64>,
    pub goal_region: GoalRegion,
    pub action_cap: f64,
    pub ik_damping: f64,
    pub ik_gain: f64,
    pub success_tolerance: f64,
    pub hold_steps: usize,
    /// Distance at which the per-step reward saturates to zero; defaults to
    /// the total link length.
    pub reach_radius: Option<f64>,
    pub success_bonus: f64,
}

impl Default for ArmConfig {
    fn default() -> Self {
        Self::with_joints(6)
    }
}

impl ArmConfig {
    /// Default arm with `n` unit links. Joints 2..=4 (1-based) form the
    /// high-priority group, the rest are secondary.
    pub fn with_joints(n: usize) -> Self {
        let joint_groups = (0..n)
            .map(|j| {
                if (1..=3).contains(&j) {
                    JointGroup::HighPriority
                } else {
                    JointGroup::Secondary
                }
            })
            .collect();
        let mut home_angles = vec![0.3; n];
        if n > 0 {
            home_angles[0] = 0.0;
        }
        Self {
            n_joints: n,
            link_lengths: vec![1.0; n],
            joint_limits: vec![[-PI, PI]; n],
            dt: 0.02,
            max_steps: 300,
            joint_groups,
            home_angles,
            goal_region: GoalRegion::default(),
            action_cap: 0.1,
            ik_damping: 1e-2,
            ik_gain: 0.5,
            success_tolerance: 0.05,
            hold_steps: 5,
            reach_radius: None,
            success_bonus: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_joints;
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if n < 2 {
            return bad(format!("n_joints must be >= 2, got {n}"));
        }
        for (name, len) in [
            ("link_lengths", self.link_lengths.len()),
            ("joint_limits", self.joint_limits.len()),
            ("joint_groups", self.joint_groups.len()),
            ("home_angles", self.home_angles.len()),
        ] {
            if len != n {
                return bad(format!("{name} has {len} entries, expected {n}"));
            }
        }
        if self.link_lengths.iter().any(|&l| !(l > 0.0)) {
            return bad("link lengths must all be > 0".into());
        }
        for (j, lim) in self.joint_limits.iter().enumerate() {
            if !(lim[0] < lim[1]) {
                return bad(format!("joint {j} limits must satisfy min < max"));
            }
            if !(lim[0] <= self.home_angles[j] && self.home_angles[j] <= lim[1]) {
                return bad(format!("home angle of joint {j} is outside its limits"));
            }
        }
        if self.max_steps < 1 {
            return bad("max_steps must be >= 1".into());
        }
        if !(self.action_cap > 0.0) || !(self.ik_damping >= 0.0) || !(self.ik_gain > 0.0) {
            return bad("action_cap and ik_gain must be > 0, ik_damping >= 0".into());
        }
        if !(self.success_tolerance > 0.0) || self.hold_steps < 1 {
            return bad("success_tolerance must be > 0 and hold_steps >= 1".into());
        }
        if let Some(r) = self.reach_radius {
            if !(r > 0.0) {
                return bad("reach_radius must be > 0".into());
            }
        }
        let g = &self.goal_region;
        if !(0.0 <= g.radius[0] && g.radius[0] <= g.radius[1]) || !(g.angle[0] <= g.angle[1]) {
            return bad("goal_region bounds must be ordered and non-negative".into());
        }
        Ok(())
    }

    pub fn reach_radius(&self) -> f64 {
        self.reach_radius
            .unwrap_or_else(|| self.link_lengths.iter().sum())
    }

    pub fn joints_in(&self, group: JointGroup) -> Vec<usize> {
        (0..self.n_joints)
            .filter(|&j| self.joint_groups[j] == group)
            .collect()
    }

    /// Observation dimension: joint angles followed by the goal point.
    pub fn obs_dim(&self) -> usize {
        self.n_joints + 2
    }

    pub fn reset(&self, goal: Point) -> EnvState {
        EnvState {
            joint_angles: self.home_angles.clone(),
            goal_position: goal,
            step_index: 0,
            hold_count: 0,
            bonus_paid: false,
        }
    }

    pub fn ee_position(&self, state: &EnvState) -> Point {
        chain_position(&state.joint_angles, &self.link_lengths)
    }

    pub fn observation(&self, state: &EnvState) -> Vec<f64> {
        observation(&state.joint_angles, state.goal_position)
    }

    /// Per-step distance reward, before any success bonus.
    pub fn distance_reward(&self, ee: Point, goal: Point) -> f64 {
        1.0 - (dist(ee, goal) / self.reach_radius()).min(1.0)
    }

    pub fn step(&self, state: &EnvState, action: &[f64]) -> Result<Step> {
        ensure(action.len() == self.n_joints, || {
            format!(
                "action has {} entries, arm has {} joints",
                action.len(),
                self.n_joints
            )
        })?;
        ensure(state.step_index < self.max_steps, || {
            "step called on a finished episode".into()
        })?;
        let joint_angles: Vec<f64> = state
            .joint_angles
            .iter()
            .zip(action)
            .zip(&self.joint_limits)
            .map(|((&q, &dq), lim)| (q + dq).clamp(lim[0], lim[1]))
            .collect();
        let ee = chain_position(&joint_angles, &self.link_lengths);
        let mut reward = self.distance_reward(ee, state.goal_position);
        let inside = dist(ee, state.goal_position) <= self.success_tolerance;
        let mut bonus_paid = state.bonus_paid;
        if inside && !bonus_paid {
            reward += self.success_bonus;
            bonus_paid = true;
        }
        let hold_count = if inside { state.hold_count + 1 } else { 0 };
        let success = hold_count >= self.hold_steps;
        let step_index = state.step_index + 1;
        Ok(Step {
            state: EnvState {
                joint_angles,
                goal_position: state.goal_position,
                step_index,
                hold_count,
                bonus_paid,
            },
            reward,
            done: success || step_index >= self.max_steps,
            success,
            ee,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub joint_angles: Vec<f64>,
    pub goal_position: Point,
    pub step_index: usize,
    /// Consecutive steps spent inside the success tolerance.
    pub hold_count: usize,
    pub bonus_paid: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: EnvState,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
    pub ee: Point,
}

pub fn observation(joint_angles: &[f64], goal: Point) -> Vec<f64> {
    let mut obs = Vec::with_capacity(joint_angles.len() + 2);
    obs.extend_from_slice(joint_angles);
    obs.extend_from_slice(&goal);
    obs
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn chain_position(angles: &[f64], links: &[f64]) -> Point {
    let mut phi = 0.0;
    let mut p = [0.0, 0.0];
    for (&q, &l) in angles.iter().zip(links) {
        phi += q;
        p[0] += l * phi.cos();
        p[1] += l * phi.sin();
    }
    p
}

pub fn forward_kinematics(joint_angles: &[f64], link_lengths: &[f64]) -> Result<Point> {
    ensure(joint_angles.len() == link_lengths.len(), || {
        format!(
            "{} joint angles vs {} link lengths",
            joint_angles.len(),
            link_lengths.len()
        )
    })?;
    ensure(joint_angles.len() >= 2, || "chain needs at least 2 joints".into())?;
    Ok(chain_position(joint_angles, link_lengths))
}

/// 2 x n positional Jacobian, returned as (d x / d q, d y / d q).
pub fn jacobian(joint_angles: &[f64], link_lengths: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = joint_angles.len();
    let mut phi = 0.0;
    let mut seg = Vec::with_capacity(n);
    for (&q, &l) in joint_angles.iter().zip(link_lengths) {
        phi += q;
        seg.push([l * phi.cos(), l * phi.sin()]);
    }
    let mut jx = vec![0.0; n];
    let mut jy = vec![0.0; n];
    let (mut sx, mut sy) = (0.0, 0.0);
    for j in (0..n).rev() {
        sx += seg[j][0];
        sy += seg[j][1];
        jx[j] = -sy;
        jy[j] = sx;
    }
    (jx, jy)
}

/// Damped-least-squares resolved-rate step toward the goal, scaled so that
/// no joint moves more than `action_cap`.
pub fn expert_action(arm: &ArmConfig, state: &EnvState) -> Vec<f64> {
    let ee = arm.ee_position(state);
    let err = [
        arm.ik_gain * (state.goal_position[0] - ee[0]),
        arm.ik_gain * (state.goal_position[1] - ee[1]),
    ];
    let (jx, jy) = jacobian(&state.joint_angles, &arm.link_lengths);
    let lambda2 = arm.ik_damping * arm.ik_damping;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    // (J J^T + lambda^2 I) y = err, solved in closed form.
    let a = dot(&jx, &jx) + lambda2;
    let b = dot(&jx, &jy);
    let d = dot(&jy, &jy) + lambda2;
    let det = a * d - b * b;
    if !(det.abs() > f64::MIN_POSITIVE) {
        return vec![0.0; arm.n_joints];
    }
    let y0 = (d * err[0] - b * err[1]) / det;
    let y1 = (a * err[1] - b * err[0]) / det;
    let mut action: Vec<f64> = jx.iter().zip(&jy).map(|(x, y)| x * y0 + y * y1).collect();
    let peak = action.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if peak > arm.action_cap {
        let s = arm.action_cap / peak;
        action.iter_mut().for_each(|v| *v *= s);
    }
    action
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub p: f64,
    pub sigma: f64,
}

impl NoiseConfig {
    pub const NONE: NoiseConfig = NoiseConfig { p: 0.0, sigma: 0.0 };
    pub const LIGHT: NoiseConfig = NoiseConfig { p: 0.1, sigma: 0.04 };
    pub const NORMAL: NoiseConfig = NoiseConfig { p: 0.2, sigma: 0.06 };
    pub const HEAVY: NoiseConfig = NoiseConfig { p: 0.3, sigma: 0.08 };

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) || !(self.sigma >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise needs p in [0, 1] and sigma >= 0, got p={} sigma={}",
                self.p, self.sigma
            )));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        NoiseLevel::ALL
            .iter()
            .find(|l| l.config() == *self)
            .map(|l| l.to_string())
            .unwrap_or_else(|| format!("custom(p={},sigma={})", self.p, self.sigma))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseLevel {
    None,
    Light,
    Normal,
    Heavy,
}

impl NoiseLevel {
    pub const ALL: [NoiseLevel; 4] = [
        NoiseLevel::None,
        NoiseLevel::Light,
        NoiseLevel::Normal,
        NoiseLevel::Heavy,
    ];

    pub fn config(self) -> NoiseConfig {
        match self {
            NoiseLevel::None => NoiseConfig::NONE,
            NoiseLevel::Light => NoiseConfig::LIGHT,
            NoiseLevel::Normal => NoiseConfig::NORMAL,
            NoiseLevel::Heavy => NoiseConfig::HEAVY,
        }
    }
}

impl fmt::Display for NoiseLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseLevel::None => "none",
            NoiseLevel::Light => "light",
            NoiseLevel::Normal => "normal",
            NoiseLevel::Heavy => "heavy",
        })
    }
}

impl FromStr for NoiseLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(NoiseLevel::None),
            "light" => Ok(NoiseLevel::Light),
            "normal" => Ok(NoiseLevel::Normal),
            "heavy" => Ok(NoiseLevel::Heavy),
            other => Err(Error::InvalidArgument(format!(
                "unknown noise level '{other}' (expected none|light|normal|heavy)"
            ))),
        }
    }
}

/// Multiplicative action noise. With probability `p` the whole action is
/// scaled by a single `1 + eta * sigma`, `eta ~ N(0, 1)`.
pub fn inject_noise<R: Rng + ?Sized>(action: &[f64], cfg: &NoiseConfig, rng: &mut R) -> Vec<f64> {
    inject_noise_traced(action, cfg, rng).0
}

/// As [`inject_noise`], also returning the multiplier when noise fired.
/// Draws one uniform, plus one normal only when activated.
pub fn inject_noise_traced<R: Rng + ?Sized>(
    action: &[f64],
    cfg: &NoiseConfig,
    rng: &mut R,
) -> (Vec<f64>, Option<f64>) {
    let u: f64 = rng.random();
    if u < cfg.p {
        let eta: f64 = StandardNormal.sample(rng);
        let m = 1.0 + eta * cfg.sigma;
        (action.iter().map(|a| m * a).collect(), Some(m))
    } else {
        (action.to_vec(), None)
    }
}

/// Anything that can be asked for the next chunk of actions.
pub trait ActionSource {
    /// Returns at least one action for the current state.
    fn plan(&self, arm: &ArmConfig, state: &EnvState) -> Vec<Vec<f64>>;
}

/// The scripted damped-least-squares controller.
#[derive(Debug, Clone, Copy, Default)]
pub struct Expert;

impl ActionSource for Expert {
    fn plan(&self, arm: &ArmConfig, state: &EnvState) -> Vec<Vec<f64>> {
        vec![expert_action(arm, state)]
    }
}

impl<T: ActionSource + ?Sized> ActionSource for &T {
    fn plan(&self, arm: &ArmConfig, state: &EnvState) -> Vec<Vec<f64>> {
        (**self).plan(arm, state)
    }
}

/// Goal drawn for an episode seed; the first draws of the episode stream.
pub fn episode_goal(arm: &ArmConfig, seed: u64) -> Point {
    arm.goal_region.sample(&mut rng::stream(seed))
}

/// Rolls out one episode. The goal and every noise draw come from the
/// stream seeded by `seed`. At most `replan_every` actions of each planned
/// chunk are executed before the source is queried again (`None` executes
/// whole chunks).
pub fn run_episode<P: ActionSource + ?Sized>(
    policy: &P,
    arm: &ArmConfig,
    noise: &NoiseConfig,
    seed: u64,
    replan_every: Option<usize>,
) -> Result<Trajectory> {
    arm.validate()?;
    noise.validate()?;
    let mut rng: Stream = rng::stream(seed);
    let goal = arm.goal_region.sample(&mut rng);
    let mut state = arm.reset(goal);
    let mut traj = Trajectory::empty(seed, noise.label());
    loop {
        let chunk = policy.plan(arm, &state);
        ensure(!chunk.is_empty(), || "action source returned an empty chunk".into())?;
        let n_exec = replan_every.map_or(chunk.len(), |r| r.max(1).min(chunk.len()));
        for action in &chunk[..n_exec] {
            let executed = inject_noise(action, noise, &mut rng);
            let step = arm.step(&state, &executed)?;
            traj.actions.push(action.clone());
            traj.joint_angles.push(step.state.joint_angles.clone());
            traj.ee_positions.push(step.ee);
            traj.rewards.push(step.reward);
            state = step.state;
            if step.done {
                traj.success = step.success;
                return Ok(traj);
            }
        }
    }
}
