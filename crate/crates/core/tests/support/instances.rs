//! Random small policy/batch instances for finite-difference checks.
#![allow(dead_code)]

use acorn_core::data::ChunkBatch;
use acorn_core::loss::{self, LossConfig};
use acorn_core::nn::Activation;
use acorn_core::policy::{self, Policy, PolicyConfig};
use acorn_core::rng;
use acorn_core::train::{draw_batch, BatchDraws};
use rand::Rng;

/// Large enough that cancellation error stays below the tolerance on
/// parameters whose gradient is ~1e-6 against a loss of order 10.
pub const FD_STEP: f64 = 1e-4;

pub struct Instance {
    pub policy: Policy,
    pub batch: ChunkBatch,
    pub draws: BatchDraws,
    pub cfg: LossConfig,
    pub lambda_c: f64,
}

pub fn instance(seed: u64) -> Instance {
    let mut r = rng::stream(seed);
    let width = |r: &mut rng::Stream| r.random_range(2..=8);
    let config = PolicyConfig {
        chunk_k: r.random_range(1..=3),
        latent_dim: r.random_range(1..=3),
        obs_dim: r.random_range(1..=4),
        action_dim: r.random_range(1..=3),
        encoder_hidden: (0..r.random_range(1..=2)).map(|_| width(&mut r)).collect(),
        decoder_hidden: (0..r.random_range(1..=2)).map(|_| width(&mut r)).collect(),
        activation: Activation::Tanh,
        replan_every: None,
    };
    let mut policy = Policy::init(config.clone(), seed).unwrap();
    // move biases off zero so every parameter carries gradient
    for v in policy.encoder.values.iter_mut().chain(policy.decoder.values.iter_mut()) {
        *v += r.random_range(-0.2..0.2);
    }
    let n = r.random_range(1..=4);
    let mut batch = ChunkBatch {
        observations: Vec::new(),
        target_chunks: Vec::new(),
        mask: Vec::new(),
        origins: Vec::new(),
        chunk_k: config.chunk_k,
        action_dim: config.action_dim,
    };
    for b in 0..n {
        let valid = r.random_range(1..=config.chunk_k);
        let mask: Vec<bool> = (0..config.chunk_k).map(|s| s < valid).collect();
        let chunk: Vec<f64> = (0..config.chunk_len())
            .map(|i| if mask[i / config.action_dim] { r.random_range(-1.5..1.5) } else { 0.0 })
            .collect();
        batch.observations.push((0..config.obs_dim).map(|_| r.random_range(-1.0..1.0)).collect());
        batch.target_chunks.push(chunk);
        batch.mask.push(mask);
        batch.origins.push((b, 0));
    }
    let cfg = LossConfig {
        negatives_per_sample: r.random_range(1..=2),
        ..LossConfig::default()
    };
    let mut draws = draw_batch(&batch, config.latent_dim, &cfg, &mut r);
    // larger perturbations keep the hinge away from its kink at this scale
    for (b, negs) in draws.negatives.iter_mut().enumerate() {
        for neg in negs.iter_mut() {
            let sigma = r.random_range(0.3..0.8);
            let eps: Vec<f64> = policy::standard_normals(neg.len(), &mut r).iter().map(|e| 0.05 * e).collect();
            let eta: f64 = policy::standard_normals(1, &mut r)[0];
            *neg = loss::negative_from_draws(&batch.target_chunks[b], sigma, eta, &eps);
        }
    }
    Instance {
        policy,
        batch,
        draws,
        cfg,
        lambda_c: r.random_range(0.0..1.0),
    }
}
