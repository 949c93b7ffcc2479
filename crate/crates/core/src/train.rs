//! Training loop: sample chunks, draw latent noise and negatives, evaluate
//! the objective through encoder, reparameterization and decoder, back-
//! propagate, and take an Adam step on each network.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{self, ChunkBatch, DemoDataset};
use crate::error::{Error, Result};
use crate::loss::{self, BaselineTracker, LossBreakdown, LossConfig, SampleTerms};
use crate::nn::{self, AdamConfig, AdamState};
use crate::policy::{self, Policy};
use crate::rng::{self, derive_seed, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Baseline: contrastive weight pinned to zero.
    Act,
    /// Curriculum-weighted contrastive term enabled.
    Acorn,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Act => "act",
            Variant::Acorn => "acorn",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "act" => Ok(Variant::Act),
            "acorn" => Ok(Variant::Acorn),
            other => Err(Error::InvalidArgument(format!(
                "unknown variant '{other}' (expected act|acorn)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch_size: 32,
            seed: 0,
            optimizer: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let o = &self.optimizer;
        if self.batch_size == 0
            || !(o.lr > 0.0)
            || !(0.0..1.0).contains(&o.beta1)
            || !(0.0..1.0).contains(&o.beta2)
            || !(o.eps > 0.0)
        {
            return Err(Error::InvalidConfig(format!("invalid train config: {self:?}")));
        }
        Ok(())
    }
}

/// Random draws consumed by one objective evaluation, kept separate so the
/// objective itself is a deterministic function of the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchDraws {
    pub latent_noise: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<Vec<f64>>>,
}

/// Per element: latent noise, one sigma picked uniformly from the configured
/// levels, then `negatives_per_sample` dual-perturbation negatives.
pub fn draw_batch<R: Rng + ?Sized>(
    batch: &ChunkBatch,
    latent_dim: usize,
    cfg: &LossConfig,
    rng: &mut R,
) -> BatchDraws {
    let mut latent_noise = Vec::with_capacity(batch.len());
    let mut negatives = Vec::with_capacity(batch.len());
    for b in 0..batch.len() {
        latent_noise.push(policy::standard_normals(latent_dim, rng));
        let sigma = cfg.neg_sigma_levels[rng.random_range(0..cfg.neg_sigma_levels.len())];
        let negs = (0..cfg.negatives_per_sample)
            .map(|_| loss::generate_negative(&batch.target_chunks[b], sigma, cfg.neg_eps_std, rng))
            .collect();
        negatives.push(negs);
    }
    BatchDraws {
        latent_noise,
        negatives,
    }
}

#[derive(Debug, Clone)]
pub struct ObjectiveOutcome {
    pub breakdown: LossBreakdown,
    pub encoder_grad: Vec<f64>,
    pub decoder_grad: Vec<f64>,
}

/// Evaluates the objective and its exact gradient with respect to both
/// networks. `batch` and `draws` are in network units. `weight` maps the batch baseline loss to the contrastive weight;
/// the weight is treated as a constant when differentiating.
pub fn objective(
    policy: &Policy,
    batch: &ChunkBatch,
    draws: &BatchDraws,
    cfg: &LossConfig,
    weight: impl FnOnce(f64) -> f64,
) -> Result<ObjectiveOutcome> {
    let pc = &policy.config;
    let enc_spec = pc.encoder_spec();
    let dec_spec = pc.decoder_spec();
    let n = batch.len();
    let mut masks = Vec::with_capacity(n);
    let mut encodes = Vec::with_capacity(n);
    let mut decodes = Vec::with_capacity(n);
    for b in 0..n {
        let mask = batch.entry_mask(b);
        let chunk: Vec<f64> = batch.target_chunks[b]
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| if m { v } else { 0.0 })
            .collect();
        let enc = policy.encode_traced(&batch.observations[b], &chunk)?;
        let z = policy::reparameterize_with(&enc.stats, &draws.latent_noise[b]);
        decodes.push(policy.decode_traced(&batch.observations[b], &z)?);
        encodes.push(enc);
        masks.push(mask);
    }
    let terms: Vec<SampleTerms<'_>> = (0..n)
        .map(|b| SampleTerms {
            pred: &decodes[b].0,
            target: &batch.target_chunks[b],
            negatives: &draws.negatives[b],
            stats: &encodes[b].stats,
            mask: &masks[b],
        })
        .collect();
    let parts = loss::batch_parts(&terms, cfg)?;
    let lambda_c = weight(parts.baseline(cfg));
    let (breakdown, grads) = parts.combine(cfg, lambda_c);

    let mut encoder_grad = vec![0.0; policy.encoder.len()];
    let mut decoder_grad = vec![0.0; policy.decoder.len()];
    let obs_dim = pc.obs_dim;
    for b in 0..n {
        let g = &grads[b];
        let dec = nn::backward(&policy.decoder, &dec_spec, &decodes[b].1, &g.d_pred)?;
        add_into(&mut decoder_grad, &dec.params);
        let dz = &dec.input[obs_dim..];
        let stats = &encodes[b].stats;
        let noise = &draws.latent_noise[b];
        let mut d_enc_out = Vec::with_capacity(2 * pc.latent_dim);
        for j in 0..pc.latent_dim {
            d_enc_out.push(dz[j] + g.d_mu[j]);
        }
        for j in 0..pc.latent_dim {
            let std = (0.5 * stats.logvar[j]).exp();
            d_enc_out.push(dz[j] * noise[j] * 0.5 * std + g.d_logvar[j]);
        }
        let enc = nn::backward(&policy.encoder, &enc_spec, &encodes[b].tape, &d_enc_out)?;
        add_into(&mut encoder_grad, &enc.params);
    }
    Ok(ObjectiveOutcome {
        breakdown,
        encoder_grad,
        decoder_grad,
    })
}

/// Worst relative error between the objective's analytic gradient (both
/// networks, encoder first) and central differences, with the contrastive
/// weight held at `lambda_c`.
pub fn check_objective_gradient(
    policy: &Policy,
    batch: &ChunkBatch,
    draws: &BatchDraws,
    cfg: &LossConfig,
    lambda_c: f64,
    eps: f64,
) -> Result<f64> {
    let n_enc = policy.encoder.len();
    let mut flat = policy.encoder.values.clone();
    flat.extend_from_slice(&policy.decoder.values);
    let mut probe = policy.clone();
    let mut failure = None;
    let worst = nn::grad_check(
        |x| {
            probe.encoder.values.copy_from_slice(&x[..n_enc]);
            probe.decoder.values.copy_from_slice(&x[n_enc..]);
            match objective(&probe, batch, draws, cfg, |_| lambda_c) {
                Ok(out) => {
                    let mut g = out.encoder_grad;
                    g.extend_from_slice(&out.decoder_grad);
                    (out.breakdown.total, g)
                }
                Err(e) => {
                    failure.get_or_insert(e);
                    (f64::NAN, vec![0.0; x.len()])
                }
            }
        },
        &flat,
        eps,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(worst),
    }
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
}

/// Stateful single-threaded trainer.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub policy: Policy,
    pub variant: Variant,
    pub loss: LossConfig,
    pub train: TrainConfig,
    encoder_opt: AdamState,
    decoder_opt: AdamState,
    tracker: BaselineTracker,
    rng: Stream,
    step: usize,
}

impl Trainer {
    pub fn new(policy: Policy, variant: Variant, loss: LossConfig, train: TrainConfig) -> Result<Self> {
        loss.validate()?;
        train.validate()?;
        Ok(Self {
            encoder_opt: AdamState::new(policy.encoder.len()),
            decoder_opt: AdamState::new(policy.decoder.len()),
            tracker: BaselineTracker::new(loss.lb_smoothing),
            rng: rng::stream(derive_seed(train.seed, 2)),
            step: 0,
            policy,
            variant,
            loss,
            train,
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn step(&mut self, ds: &DemoDataset) -> Result<LossBreakdown> {
        let raw = data::sample_batch(ds, self.train.batch_size, self.policy.config.chunk_k, &mut self.rng)?;
        let batch = self.policy.norm.batch_to_net(&raw);
        let draws = draw_batch(&batch, self.policy.config.latent_dim, &self.loss, &mut self.rng);
        let variant = self.variant;
        let k = self.loss.curriculum_k;
        let tracker = &mut self.tracker;
        let out = objective(&self.policy, &batch, &draws, &self.loss, |lb| match variant {
            Variant::Act => 0.0,
            Variant::Acorn => loss::curriculum_weight(tracker.update(lb), k),
        })
        .map_err(|e| match e {
            Error::Numeric(m) => Error::Numeric(format!("step {}: {m}", self.step + 1)),
            other => other,
        })?;
        self.step += 1;
        let b = out.breakdown;
        let finite = [b.huber, b.kl, b.contrastive, b.total].iter().all(|v| v.is_finite())
            && out.encoder_grad.iter().chain(&out.decoder_grad).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Numeric(format!("non-finite loss at step {}", self.step)));
        }
        let hyper = self.train.optimizer;
        nn::adam_step(&mut self.policy.encoder.values, &out.encoder_grad, &mut self.encoder_opt, &hyper);
        nn::adam_step(&mut self.policy.decoder.values, &out.decoder_grad, &mut self.decoder_opt, &hyper);
        Ok(b)
    }

    /// Runs `train.steps` steps, returning one breakdown per step.
    pub fn run(&mut self, ds: &DemoDataset) -> Result<Vec<LossBreakdown>> {
        (0..self.train.steps).map(|_| self.step(ds)).collect()
    }
}
