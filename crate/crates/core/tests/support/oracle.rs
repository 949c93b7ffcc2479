//! Nested-loop recomputation of the evaluation metrics on random fixtures.
#![allow(dead_code)]

use acorn_core::data::{DemoDataset, Trajectory};
use acorn_core::rng;
use acorn_core::sim::{ArmConfig, JointGroup};
use rand::Rng;

pub const DIM: usize = 6;

pub fn random_traj(r: &mut rng::Stream, success: bool, seed: u64) -> Trajectory {
    let len = r.random_range(1..=10);
    let v = |r: &mut rng::Stream, n: usize| -> Vec<f64> { (0..n).map(|_| r.random_range(-1.0..1.0)).collect() };
    Trajectory {
        actions: (0..len).map(|_| v(r, DIM)).collect(),
        joint_angles: (0..len).map(|_| v(r, DIM)).collect(),
        ee_positions: (0..len).map(|_| [r.random_range(-3.0..3.0), r.random_range(-3.0..3.0)]).collect(),
        rewards: (0..len).map(|_| r.random_range(0.0..1.0)).collect(),
        success,
        seed,
        noise_level: "normal".into(),
    }
}

pub fn fixture(seed: u64) -> (Vec<Trajectory>, DemoDataset) {
    let mut r = rng::stream(seed);
    let n_demos = r.random_range(2..=4);
    let demos = (0..n_demos).map(|i| random_traj(&mut r, true, i)).collect();
    let ds = DemoDataset::new(demos, &ArmConfig::default()).unwrap();
    let n_eps = r.random_range(1..=5);
    let eps = (0..n_eps)
        .map(|i| {
            let ok = r.random_bool(0.4);
            random_traj(&mut r, ok, 100 + i)
        })
        .collect();
    (eps, ds)
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s.sqrt()
}

/// Same-timestep candidate from demo `d`, falling back to its last entry.
pub fn at<T: Clone>(xs: &[T], t: usize) -> T {
    if t < xs.len() {
        xs[t].clone()
    } else {
        xs[xs.len() - 1].clone()
    }
}

pub fn nearest(a: &[f64], cands: &[Vec<f64>]) -> Vec<f64> {
    let mut best = 0;
    for i in 1..cands.len() {
        if dist(a, &cands[i]) < dist(a, &cands[best]) {
            best = i;
        }
    }
    cands[best].clone()
}

pub struct Oracle {
    pub sr: f64,
    pub acr: f64,
    pub acr_f: Option<f64>,
    pub am_j: Option<f64>,
    pub am_e: Option<f64>,
    pub am_j_groups: Vec<(JointGroup, Option<f64>)>,
    pub tdl: Option<f64>,
}

pub fn oracle(eps: &[Trajectory], ds: &DemoDataset, c: f64) -> Oracle {
    let demos = ds.trajectories();
    let arm = ds.arm();
    let mut successes = 0.0;
    let mut total = 0.0;
    for e in eps {
        if e.success {
            successes += 1.0;
        }
        let mut s = 0.0;
        for r in &e.rewards {
            s += r;
        }
        total += s;
    }
    let failed: Vec<&Trajectory> = eps.iter().filter(|e| !e.success).collect();
    let nf = failed.len() as f64;
    let mean_over_failed = |per_episode: &dyn Fn(&Trajectory) -> f64| -> Option<f64> {
        if failed.is_empty() {
            return None;
        }
        let mut s = 0.0;
        for e in &failed {
            s += per_episode(e);
        }
        Some(s / nf)
    };
    let acr_f = mean_over_failed(&|e| e.rewards.iter().sum());
    let am_j_on = |idx: &[usize]| {
        mean_over_failed(&|e| {
            let mut s = 0.0;
            for t in 0..e.len() {
                let cands: Vec<Vec<f64>> = demos.iter().map(|d| at(&d.actions, t)).collect();
                let r = nearest(&e.actions[t], &cands);
                let mut q = 0.0;
                for &j in idx {
                    q += (e.actions[t][j] - r[j]).powi(2);
                }
                s += q.sqrt();
            }
            s / e.len() as f64
        })
    };
    let all: Vec<usize> = (0..DIM).collect();
    let am_e = mean_over_failed(&|e| {
        let mut s = 0.0;
        for t in 0..e.len() {
            let cands: Vec<Vec<f64>> = demos.iter().map(|d| at(&d.ee_positions, t).to_vec()).collect();
            s += dist(&e.ee_positions[t], &nearest(&e.ee_positions[t], &cands));
        }
        s / e.len() as f64
    });
    let mut outside = 0.0;
    let mut count = 0.0;
    for e in &failed {
        for t in 0..e.len() {
            for j in 0..DIM {
                let vals: Vec<f64> = demos.iter().map(|d| at(&d.joint_angles, t)[j]).collect();
                let m = vals.iter().sum::<f64>() / vals.len() as f64;
                let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
                count += 1.0;
                if (e.joint_angles[t][j] - m).abs() > c * var.sqrt() {
                    outside += 1.0;
                }
            }
        }
    }
    Oracle {
        sr: successes / eps.len() as f64,
        acr: total / eps.len() as f64,
        acr_f,
        am_j: am_j_on(&all),
        am_e,
        am_j_groups: JointGroup::ALL.iter().map(|&g| (g, am_j_on(&arm.joints_in(g)))).collect(),
        tdl: (count > 0.0).then(|| outside / count),
    }
}

pub fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => (x - y).abs() <= 1e-12,
        _ => false,
    }
}
