//! Chunked CVAE policy.
//!
//! The encoder maps an observation and the expert action chunk to a Gaussian
//! posterior over a latent code; the decoder maps observation and latent to
//! a chunk of `chunk_k` actions. At inference the latent is the prior mean.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ChunkBatch, DemoDataset};
use crate::error::{ensure, Error, Result};
use crate::nn::{self, Activation, MlpSpec, ParamVector, Tape};
use crate::rng::derive_seed;
use crate::sim::{ActionSource, ArmConfig, EnvState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub chunk_k: usize,
    pub latent_dim: usize,
    /// Filled in from the arm when zero.
    pub obs_dim: usize,
    /// Filled in from the arm when zero.
    pub action_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub activation: Activation,
    /// Actions executed from each chunk before re-planning; `None` runs the
    /// whole chunk.
    pub replan_every: Option<usize>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            chunk_k: 8,
            latent_dim: 4,
            obs_dim: 0,
            action_dim: 0,
            encoder_hidden: vec![64],
            decoder_hidden: vec![128, 128],
            activation: Activation::Tanh,
            replan_every: None,
        }
    }
}

impl PolicyConfig {
    /// Resolves unset dimensions from the arm and checks set ones agree.
    pub fn for_arm(mut self, arm: &ArmConfig) -> Result<Self> {
        for (name, field, want) in [
            ("obs_dim", &mut self.obs_dim, arm.obs_dim()),
            ("action_dim", &mut self.action_dim, arm.n_joints),
        ] {
            if *field == 0 {
                *field = want;
            } else if *field != want {
                return Err(Error::InvalidConfig(format!(
                    "policy {name} = {field} but the arm needs {want}"
                )));
            }
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.chunk_k == 0 || self.latent_dim == 0 || self.obs_dim == 0 || self.action_dim == 0 {
            return Err(Error::InvalidConfig(
                "chunk_k, latent_dim, obs_dim and action_dim must all be >= 1".into(),
            ));
        }
        if let Some(r) = self.replan_every {
            if r == 0 || r > self.chunk_k {
                return Err(Error::InvalidConfig(format!(
                    "replan_every must be in [1, {}], got {r}",
                    self.chunk_k
                )));
            }
        }
        self.encoder_spec().validate()?;
        self.decoder_spec().validate()
    }

    pub fn chunk_len(&self) -> usize {
        self.chunk_k * self.action_dim
    }

    pub fn encoder_spec(&self) -> MlpSpec {
        let mut w = vec![self.obs_dim + self.chunk_len()];
        w.extend_from_slice(&self.encoder_hidden);
        w.push(2 * self.latent_dim);
        MlpSpec::new(w, self.activation)
    }

    pub fn decoder_spec(&self) -> MlpSpec {
        let mut w = vec![self.obs_dim + self.latent_dim];
        w.extend_from_slice(&self.decoder_hidden);
        w.push(self.chunk_len());
        MlpSpec::new(w, self.activation)
    }
}

/// Diagonal Gaussian posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentStats {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

impl LatentStats {
    pub fn standard(dim: usize) -> Self {
        Self {
            mu: vec![0.0; dim],
            logvar: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// `z = mu + exp(logvar / 2) * noise`.
pub fn reparameterize_with(stats: &LatentStats, noise: &[f64]) -> Vec<f64> {
    stats
        .mu
        .iter()
        .zip(&stats.logvar)
        .zip(noise)
        .map(|((m, lv), n)| m + (0.5 * lv).exp() * n)
        .collect()
}

pub fn reparameterize<R: Rng + ?Sized>(stats: &LatentStats, rng: &mut R) -> Vec<f64> {
    let noise = standard_normals(stats.dim(), rng);
    reparameterize_with(stats, &noise)
}

pub fn standard_normals<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Per-coordinate affine map between raw and network units,
/// `net = (raw - shift) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Affine {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Affine {
    pub fn identity(dim: usize) -> Self {
        Self {
            shift: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Mean and population standard deviation of `rows`; coordinates with
    /// no spread keep unit scale.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Self {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for r in rows {
            n += 1;
            for ((s, q), v) in sum.iter_mut().zip(&mut sq).zip(r) {
                *s += v;
                *q += v * v;
            }
        }
        if n == 0 {
            return Self::identity(dim);
        }
        let nf = n as f64;
        let shift: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let scale = sq
            .iter()
            .zip(&shift)
            .map(|(q, m)| {
                let sd = (q / nf - m * m).max(0.0).sqrt();
                if sd > 1e-8 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { shift, scale }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    /// Maps a flat vector whose coordinate `i` corresponds to `i % dim`.
    pub fn to_net(&self, raw: &[f64]) -> Vec<f64> {
        let d = self.dim();
        raw.iter()
            .enumerate()
            .map(|(i, v)| (v - self.shift[i % d]) / self.scale[i % d])
            .collect()
    }

    pub fn to_raw(&self, net: &[f64]) -> Vec<f64> {
        let d = self.dim();
        net.iter()
            .enumerate()
            .map(|(i, v)| v * self.scale[i % d] + self.shift[i % d])
            .collect()
    }

    fn check(&self, dim: usize, what: &str) -> Result<()> {
        let ok = self.shift.len() == dim
            && self.scale.len() == dim
            && self.shift.iter().all(|v| v.is_finite())
            && self.scale.iter().all(|v| v.is_finite() && *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "{what} normalizer must have {dim} finite entries with positive scale"
            )))
        }
    }
}

/// Observation and action normalization. The networks see and produce
/// normalized values; `encode`, `decode` and `act` speak raw units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalizer {
    pub observation: Affine,
    pub action: Affine,
}

impl Normalizer {
    pub fn identity(config: &PolicyConfig) -> Self {
        Self {
            observation: Affine::identity(config.obs_dim),
            action: Affine::identity(config.action_dim),
        }
    }

    /// Statistics over every (observation, action) pair of the demonstrations.
    pub fn fit(ds: &DemoDataset) -> Self {
        let obs: Vec<Vec<f64>> = ds
            .trajectories()
            .iter()
            .enumerate()
            .flat_map(|(i, d)| (0..d.len()).map(move |t| (i, t)))
            .map(|(i, t)| ds.observation(i, t))
            .collect();
        let obs_dim = obs.first().map_or(0, Vec::len);
        Self {
            observation: Affine::fit(obs.iter().map(Vec::as_slice), obs_dim),
            action: Affine::fit(
                ds.trajectories().iter().flat_map(|d| d.actions.iter().map(Vec::as_slice)),
                ds.action_dim(),
            ),
        }
    }

    pub fn validate(&self, config: &PolicyConfig) -> Result<()> {
        self.observation.check(config.obs_dim, "observation")?;
        self.action.check(config.action_dim, "action")
    }

    /// Batch in network units; padded entries stay zero.
    pub fn batch_to_net(&self, batch: &ChunkBatch) -> ChunkBatch {
        let mut out = batch.clone();
        for b in 0..batch.len() {
            out.observations[b] = self.observation.to_net(&batch.observations[b]);
            let net = self.action.to_net(&batch.target_chunks[b]);
            out.target_chunks[b] = net
                .into_iter()
                .zip(batch.entry_mask(b))
                .map(|(v, m)| if m { v } else { 0.0 })
                .collect();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub config: PolicyConfig,
    pub encoder: ParamVector,
    pub decoder: ParamVector,
    pub norm: Normalizer,
}

/// Forward intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncodeTrace {
    pub stats: LatentStats,
    pub tape: Tape,
}

impl Policy {
    pub fn init(config: PolicyConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let encoder = nn::init_params(&config.encoder_spec(), derive_seed(seed, 0))?;
        let decoder = nn::init_params(&config.decoder_spec(), derive_seed(seed, 1))?;
        Ok(Self {
            norm: Normalizer::identity(&config),
            config,
            encoder,
            decoder,
        })
    }

    pub fn with_normalizer(mut self, norm: Normalizer) -> Result<Self> {
        norm.validate(&self.config)?;
        self.norm = norm;
        Ok(self)
    }

    pub fn zeros(config: PolicyConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            encoder: ParamVector::zeros(&config.encoder_spec())?,
            decoder: ParamVector::zeros(&config.decoder_spec())?,
            norm: Normalizer::identity(&config),
            config,
        })
    }

    /// Encoder pass in network units.
    pub fn encode_traced(&self, obs: &[f64], chunk: &[f64]) -> Result<EncodeTrace> {
        let c = &self.config;
        ensure(obs.len() == c.obs_dim, || {
            format!("observation has {} entries, expected {}", obs.len(), c.obs_dim)
        })?;
        ensure(chunk.len() == c.chunk_len(), || {
            format!("chunk has {} entries, expected {}", chunk.len(), c.chunk_len())
        })?;
        let mut input = Vec::with_capacity(obs.len() + chunk.len());
        input.extend_from_slice(obs);
        input.extend_from_slice(chunk);
        let (out, tape) = nn::forward(&self.encoder, &c.encoder_spec(), &input)?;
        let (mu, logvar) = out.split_at(c.latent_dim);
        Ok(EncodeTrace {
            stats: LatentStats {
                mu: mu.to_vec(),
                logvar: logvar.to_vec(),
            },
            tape,
        })
    }

    pub fn encode(&self, obs: &[f64], chunk: &[f64]) -> Result<LatentStats> {
        self.check_obs(obs)?;
        let obs = self.norm.observation.to_net(obs);
        Ok(self.encode_traced(&obs, &self.norm.action.to_net(chunk))?.stats)
    }

    fn check_obs(&self, obs: &[f64]) -> Result<()> {
        ensure(obs.len() == self.config.obs_dim, || {
            format!("observation has {} entries, expected {}", obs.len(), self.config.obs_dim)
        })
    }

    /// Decoder pass in network units: flat `chunk_k * action_dim` output plus
    /// the decoder tape.
    pub fn decode_traced(&self, obs: &[f64], z: &[f64]) -> Result<(Vec<f64>, Tape)> {
        let c = &self.config;
        ensure(obs.len() == c.obs_dim, || {
            format!("observation has {} entries, expected {}", obs.len(), c.obs_dim)
        })?;
        ensure(z.len() == c.latent_dim, || {
            format!("latent has {} entries, expected {}", z.len(), c.latent_dim)
        })?;
        let mut input = Vec::with_capacity(obs.len() + z.len());
        input.extend_from_slice(obs);
        input.extend_from_slice(z);
        nn::forward(&self.decoder, &c.decoder_spec(), &input)
    }

    /// Decoded chunk as `chunk_k` rows of `action_dim`.
    pub fn decode(&self, obs: &[f64], z: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_obs(obs)?;
        let (flat, _) = self.decode_traced(&self.norm.observation.to_net(obs), z)?;
        Ok(self
            .norm
            .action
            .to_raw(&flat)
            .chunks(self.config.action_dim)
            .map(<[f64]>::to_vec)
            .collect())
    }

    /// Inference: decode with the latent at the prior mean.
    pub fn act(&self, obs: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.decode(obs, &vec![0.0; self.config.latent_dim])
    }
}

/// Contents of the checkpoint header file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub kind: String,
    pub config: PolicyConfig,
    pub norm: Normalizer,
    pub seed: u64,
    pub step: u64,
    /// Free-form run identification.
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

const CHECKPOINT_KIND: &str = "policy_checkpoint";
pub const CHECKPOINT_HEADER: &str = "policy.json";
pub const ENCODER_FILE: &str = "encoder.params";
pub const DECODER_FILE: &str = "decoder.params";

impl Policy {
    /// Writes `policy.json`, `encoder.params` and `decoder.params` into `dir`.
    pub fn save(
        &self,
        dir: impl AsRef<Path>,
        seed: u64,
        step: u64,
        meta: BTreeMap<String, String>,
    ) -> Result<()> {
        let dir = dir.as_ref();
        let header = CheckpointHeader {
            kind: CHECKPOINT_KIND.into(),
            config: self.config.clone(),
            norm: self.norm.clone(),
            seed,
            step,
            meta,
        };
        let text = serde_json::to_string_pretty(&header).expect("header serializes") + "\n";
        crate::data::write_file(&dir.join(CHECKPOINT_HEADER), &text)?;
        nn::save_params(dir.join(ENCODER_FILE), &self.encoder, &self.config.encoder_spec(), seed, step)?;
        nn::save_params(dir.join(DECODER_FILE), &self.decoder, &self.config.decoder_spec(), seed, step)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<(Self, CheckpointHeader)> {
        let dir = dir.as_ref();
        let path = dir.join(CHECKPOINT_HEADER);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let header: CheckpointHeader = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.clone(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if header.kind != CHECKPOINT_KIND {
            return Err(Error::InvalidConfig(format!(
                "{} is not a policy checkpoint (kind {:?})",
                path.display(),
                header.kind
            )));
        }
        header.config.validate()?;
        let mut nets = Vec::with_capacity(2);
        for (file, spec) in [
            (ENCODER_FILE, header.config.encoder_spec()),
            (DECODER_FILE, header.config.decoder_spec()),
        ] {
            let (h, params) = nn::load_params(dir.join(file))?;
            if h.spec != spec {
                return Err(Error::InvalidConfig(format!(
                    "{} does not match the network shape in {CHECKPOINT_HEADER}",
                    dir.join(file).display()
                )));
            }
            nets.push(params);
        }
        let decoder = nets.pop().expect("two networks");
        let encoder = nets.pop().expect("two networks");
        let policy = Self {
            config: header.config.clone(),
            encoder,
            decoder,
            norm: Normalizer::identity(&header.config),
        }
        .with_normalizer(header.norm.clone())?;
        Ok((policy, header))
    }
}

impl ActionSource for Policy {
    fn plan(&self, arm: &ArmConfig, state: &EnvState) -> Vec<Vec<f64>> {
        self.act(&arm.observation(state))
            .expect("policy dimensions were checked against the arm")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn tiny_config() -> PolicyConfig {
        PolicyConfig {
            chunk_k: 3,
            latent_dim: 2,
            obs_dim: 4,
            action_dim: 2,
            encoder_hidden: vec![5],
            decoder_hidden: vec![6],
            ..PolicyConfig::default()
        }
    }

    fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut r = rng::stream(seed);
        (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn config_shapes() {
        let c = tiny_config();
        assert_eq!(c.encoder_spec().widths, vec![4 + 6, 5, 4]);
        assert_eq!(c.decoder_spec().widths, vec![4 + 2, 6, 6]);
        let arm = ArmConfig::default();
        let resolved = PolicyConfig::default().for_arm(&arm).unwrap();
        assert_eq!((resolved.obs_dim, resolved.action_dim), (8, 6));
        let wrong = PolicyConfig {
            action_dim: 5,
            ..PolicyConfig::default()
        };
        assert!(wrong.for_arm(&arm).is_err());
        let bad_replan = PolicyConfig {
            replan_every: Some(9),
            ..PolicyConfig::default()
        };
        assert!(bad_replan.for_arm(&arm).is_err());
    }

    #[test]
    fn zero_policy() {
        let p = Policy::zeros(tiny_config()).unwrap();
        let s = p.encode(&rand_vec(4, 1), &rand_vec(6, 2)).unwrap();
        assert_eq!(s, LatentStats::standard(2));
        let chunk = p.decode(&rand_vec(4, 3), &rand_vec(2, 4)).unwrap();
        assert_eq!(chunk, vec![vec![0.0; 2]; 3]);
    }

    #[test]
    fn encode_and_decode_match_network_forward() {
        let p = Policy::init(tiny_config(), 7).unwrap();
        let (obs, chunk, z) = (rand_vec(4, 1), rand_vec(6, 2), rand_vec(2, 3));
        let mut enc_in = obs.clone();
        enc_in.extend_from_slice(&chunk);
        let (e, _) = nn::forward(&p.encoder, &p.config.encoder_spec(), &enc_in).unwrap();
        let s = p.encode(&obs, &chunk).unwrap();
        assert_eq!(s.mu, e[..2].to_vec());
        assert_eq!(s.logvar, e[2..].to_vec());

        let mut dec_in = obs.clone();
        dec_in.extend_from_slice(&z);
        let (d, _) = nn::forward(&p.decoder, &p.config.decoder_spec(), &dec_in).unwrap();
        let out = p.decode(&obs, &z).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|r| r.len() == 2));
        assert_eq!(out.concat(), d);
    }

    #[test]
    fn encode_is_stateless() {
        let p = Policy::init(tiny_config(), 7).unwrap();
        let a = (rand_vec(4, 1), rand_vec(6, 2));
        let b = (rand_vec(4, 3), rand_vec(6, 4));
        let fwd = [p.encode(&a.0, &a.1).unwrap(), p.encode(&b.0, &b.1).unwrap()];
        let rev = [p.encode(&b.0, &b.1).unwrap(), p.encode(&a.0, &a.1).unwrap()];
        assert_eq!(fwd[0], rev[1]);
        assert_eq!(fwd[1], rev[0]);
    }

    #[test]
    fn shape_errors() {
        let p = Policy::init(tiny_config(), 7).unwrap();
        assert!(matches!(p.encode(&[0.0; 3], &[0.0; 6]), Err(Error::InvalidArgument(_))));
        assert!(p.encode(&[0.0; 4], &[0.0; 5]).is_err());
        assert!(p.decode(&[0.0; 4], &[0.0; 3]).is_err());
    }

    #[test]
    fn vanishing_variance_returns_mean() {
        let s = LatentStats {
            mu: vec![0.3, -1.2],
            logvar: vec![-40.0, -40.0],
        };
        let mut r = rng::stream(1);
        let z = reparameterize(&s, &mut r);
        for (a, b) in z.iter().zip(&s.mu) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn standard_latent_moments() {
        let s = LatentStats::standard(1);
        let mut r = rng::stream(2);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| reparameterize(&s, &mut r)[0]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se_mean = (1.0 / n as f64).sqrt();
        let se_var = (2.0 / (n - 1) as f64).sqrt();
        assert!(mean.abs() <= 3.0 * se_mean);
        assert!((var - 1.0).abs() <= 3.0 * se_var);
    }

    #[test]
    fn reparameterize_seeded() {
        let s = LatentStats {
            mu: vec![0.1, 0.2],
            logvar: vec![0.5, -0.5],
        };
        assert_eq!(
            reparameterize(&s, &mut rng::stream(5)),
            reparameterize(&s, &mut rng::stream(5))
        );
    }

    #[test]
    fn act_is_decode_at_zero_and_deterministic() {
        let p = Policy::init(tiny_config(), 9).unwrap();
        let obs = rand_vec(4, 11);
        let a = p.act(&obs).unwrap();
        assert_eq!(a, p.decode(&obs, &[0.0, 0.0]).unwrap());
        assert_eq!(a, p.act(&obs).unwrap());
    }

    #[test]
    fn affine_fit_and_round_trip() {
        let rows = [vec![1.0, 5.0], vec![3.0, 5.0]];
        let a = Affine::fit(rows.iter().map(Vec::as_slice), 2);
        assert_eq!(a.shift, vec![2.0, 5.0]);
        // constant coordinate keeps unit scale
        assert_eq!(a.scale, vec![1.0, 1.0]);
        let x = [0.5, -2.0, 7.0, 1.0];
        let back = a.to_raw(&a.to_net(&x));
        for (u, v) in back.iter().zip(&x) {
            assert!((u - v).abs() < 1e-15);
        }
        assert_eq!(a.to_net(&[2.0, 5.0, 2.0, 5.0]), vec![0.0; 4]);
    }

    #[test]
    fn normalized_policy_speaks_raw_units() {
        let cfg = tiny_config();
        let norm = Normalizer {
            observation: Affine { shift: vec![1.0; 4], scale: vec![2.0; 4] },
            action: Affine { shift: vec![0.5, -0.5], scale: vec![0.1, 0.2] },
        };
        let p = Policy::init(cfg.clone(), 3).unwrap().with_normalizer(norm.clone()).unwrap();
        let obs = rand_vec(4, 5);
        let (net, _) = p.decode_traced(&norm.observation.to_net(&obs), &[0.0, 0.0]).unwrap();
        assert_eq!(p.act(&obs).unwrap().concat(), norm.action.to_raw(&net));

        let zero = Policy::zeros(cfg.clone()).unwrap().with_normalizer(norm).unwrap();
        assert_eq!(zero.act(&obs).unwrap(), vec![vec![0.5, -0.5]; 3]);

        let bad = Normalizer::identity(&PolicyConfig { obs_dim: 3, ..cfg.clone() });
        assert!(Policy::zeros(cfg).unwrap().with_normalizer(bad).is_err());
    }

    #[test]
    fn fitted_normalizer_centers_demonstrations() {
        let arm = ArmConfig::default();
        let ds = crate::data::generate_demonstrations(&arm, 4, 2).unwrap();
        let n = Normalizer::fit(&ds);
        let acts: Vec<Vec<f64>> =
            ds.trajectories().iter().flat_map(|d| d.actions.iter().map(|a| n.action.to_net(a))).collect();
        for j in 0..6 {
            let m = acts.iter().map(|a| a[j]).sum::<f64>() / acts.len() as f64;
            let v = acts.iter().map(|a| a[j] * a[j]).sum::<f64>() / acts.len() as f64;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-9, "{j}: {m} {v}");
        }

        let mut r = rng::stream(4);
        let batch = crate::data::sample_batch(&ds, 16, 8, &mut r).unwrap();
        let net = n.batch_to_net(&batch);
        for b in 0..batch.len() {
            for (v, m) in net.target_chunks[b].iter().zip(batch.entry_mask(b)) {
                if !m {
                    assert_eq!(*v, 0.0);
                }
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = Policy::init(tiny_config(), 4)
            .unwrap()
            .with_normalizer(Normalizer {
                observation: Affine { shift: vec![0.1; 4], scale: vec![3.0; 4] },
                action: Affine { shift: vec![0.2, 0.3], scale: vec![0.7, 0.9] },
            })
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        p.save(dir.path(), 4, 17, BTreeMap::new()).unwrap();
        let (back, h) = Policy::load(dir.path()).unwrap();
        assert_eq!(back, p);
        assert_eq!((h.seed, h.step), (4, 17));

        let other = Policy::init(PolicyConfig { decoder_hidden: vec![3], ..tiny_config() }, 1).unwrap();
        other.save(dir.path().join("x"), 1, 0, BTreeMap::new()).unwrap();
        std::fs::copy(dir.path().join("x").join(DECODER_FILE), dir.path().join(DECODER_FILE)).unwrap();
        assert!(Policy::load(dir.path()).is_err());
    }
}
