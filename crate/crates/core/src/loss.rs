//! Training objective.
//!
//! `total = regression + lambda_kl * kl + lambda_c(baseline) * contrastive`
//!
//! where `baseline = regression + lambda_kl * kl`, the regression term is a
//! Huber loss on the action chunk, and the contrastive term is a hinge that
//! asks the prediction to be closer to the expert chunk than to a perturbed
//! copy of it by at least `alpha`. The weight `lambda_c` follows a curriculum
//! driven by the baseline loss and is held constant for differentiation.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::LatentStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regression {
    #[default]
    Huber,
    L1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub huber_delta: f64,
    pub lambda_kl: f64,
    pub alpha: f64,
    pub curriculum_k: f64,
    pub neg_sigma_levels: Vec<f64>,
    /// Standard deviation of the additive per-entry noise on negatives.
    pub neg_eps_std: f64,
    /// EMA decay applied to the baseline loss fed to the curriculum (0 = raw).
    pub lb_smoothing: f64,
    pub negatives_per_sample: usize,
    pub regression: Regression,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            huber_delta: 0.124,
            lambda_kl: 10.0,
            alpha: 0.01,
            curriculum_k: 15.0,
            neg_sigma_levels: vec![0.04, 0.06, 0.08],
            neg_eps_std: 1e-5,
            lb_smoothing: 0.0,
            negatives_per_sample: 1,
            regression: Regression::Huber,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.huber_delta > 0.0
            && self.lambda_kl >= 0.0
            && self.alpha >= 0.0
            && self.curriculum_k > 0.0
            && self.neg_eps_std > 0.0
            && !self.neg_sigma_levels.is_empty()
            && self.neg_sigma_levels.iter().all(|&s| s > 0.0)
            && (0.0..1.0).contains(&self.lb_smoothing)
            && self.negatives_per_sample >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid loss config: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Regression term (Huber, or L1 for the L1 baseline).
    pub huber: f64,
    pub kl: f64,
    pub contrastive: f64,
    pub lambda_c: f64,
    pub baseline: f64,
    pub total: f64,
}

fn huber_elem(r: f64, delta: f64) -> (f64, f64) {
    if r.abs() <= delta {
        (0.5 * r * r, r)
    } else {
        (delta * r.abs() - 0.5 * delta * delta, delta * r.signum())
    }
}

fn l1_elem(r: f64) -> (f64, f64) {
    let g = if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    };
    (r.abs(), g)
}

/// Sum of elementwise penalties over unmasked entries and the count of
/// those entries; the gradient is written into `grad` (unnormalized).
fn regression_sum(
    pred: &[f64],
    target: &[f64],
    mask: &[bool],
    kind: Regression,
    delta: f64,
    grad: &mut [f64],
) -> (f64, usize) {
    let mut sum = 0.0;
    let mut count = 0;
    for i in 0..pred.len() {
        if !mask[i] {
            grad[i] = 0.0;
            continue;
        }
        let r = pred[i] - target[i];
        let (v, g) = match kind {
            Regression::Huber => huber_elem(r, delta),
            Regression::L1 => l1_elem(r),
        };
        sum += v;
        grad[i] = g;
        count += 1;
    }
    (sum, count)
}

/// Mean Huber penalty over unmasked entries (0 when everything is masked).
pub fn huber(pred: &[f64], target: &[f64], mask: &[bool], delta: f64) -> f64 {
    huber_with_grad(pred, target, mask, delta).0
}

pub fn huber_with_grad(pred: &[f64], target: &[f64], mask: &[bool], delta: f64) -> (f64, Vec<f64>) {
    assert_eq!(pred.len(), target.len());
    assert_eq!(pred.len(), mask.len());
    let mut grad = vec![0.0; pred.len()];
    let (sum, count) = regression_sum(pred, target, mask, Regression::Huber, delta, &mut grad);
    if count == 0 {
        return (0.0, grad);
    }
    let n = count as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    (sum / n, grad)
}

/// KL divergence of a diagonal Gaussian from the standard normal.
pub fn kl_divergence(stats: &LatentStats) -> f64 {
    kl_with_grad(stats).0
}

/// Value and gradients with respect to `mu` and `logvar`.
pub fn kl_with_grad(stats: &LatentStats) -> (f64, Vec<f64>, Vec<f64>) {
    let mut value = 0.0;
    let mut d_mu = Vec::with_capacity(stats.dim());
    let mut d_lv = Vec::with_capacity(stats.dim());
    for (&m, &lv) in stats.mu.iter().zip(&stats.logvar) {
        let e = lv.exp();
        value += 0.5 * (e + m * m - 1.0 - lv);
        d_mu.push(m);
        d_lv.push(0.5 * (e - 1.0));
    }
    (value, d_mu, d_lv)
}

/// Negative sample from explicit draws: `(1 + eta * sigma) * gt + eps`.
pub fn negative_from_draws(chunk_gt: &[f64], sigma: f64, eta: f64, eps: &[f64]) -> Vec<f64> {
    let scale = 1.0 + eta * sigma;
    chunk_gt.iter().zip(eps).map(|(a, e)| scale * a + e).collect()
}

/// Dual-perturbation negative: one scaling draw shared by the whole chunk,
/// plus independent additive noise per entry.
pub fn generate_negative<R: Rng + ?Sized>(
    chunk_gt: &[f64],
    sigma: f64,
    eps_std: f64,
    rng: &mut R,
) -> Vec<f64> {
    let eta: f64 = StandardNormal.sample(rng);
    let eps: Vec<f64> = (0..chunk_gt.len())
        .map(|_| {
            let n: f64 = StandardNormal.sample(rng);
            eps_std * n
        })
        .collect();
    negative_from_draws(chunk_gt, sigma, eta, &eps)
}

fn masked_dist(a: &[f64], b: &[f64], mask: &[bool]) -> f64 {
    a.iter()
        .zip(b)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((x, y), _)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `max(0, |pos - pred| - |neg - pred| + alpha)`, norms over unmasked entries.
pub fn contrastive(pred: &[f64], pos: &[f64], neg: &[f64], mask: &[bool], alpha: f64) -> f64 {
    contrastive_with_grad(pred, pos, neg, mask, alpha).0
}

/// Value and gradient with respect to `pred`. A zero-length difference
/// contributes a zero subgradient.
pub fn contrastive_with_grad(
    pred: &[f64],
    pos: &[f64],
    neg: &[f64],
    mask: &[bool],
    alpha: f64,
) -> (f64, Vec<f64>) {
    let d_pos = masked_dist(pos, pred, mask);
    let d_neg = masked_dist(neg, pred, mask);
    let h = d_pos - d_neg + alpha;
    let mut grad = vec![0.0; pred.len()];
    if h <= 0.0 {
        return (0.0, grad);
    }
    for i in 0..pred.len() {
        if !mask[i] {
            continue;
        }
        if d_pos > 0.0 {
            grad[i] += (pred[i] - pos[i]) / d_pos;
        }
        if d_neg > 0.0 {
            grad[i] -= (pred[i] - neg[i]) / d_neg;
        }
    }
    (h, grad)
}

pub const CURRICULUM_FLOOR: f64 = 1e-3;
pub const CURRICULUM_KNOT: f64 = 1e-3;

/// Contrastive weight as a function of the baseline loss: `1e-3` above 1,
/// `1` below `1e-3`, and `1 - 0.999 (1 - exp(-k (L_b - 1e-3)))` in between.
pub fn curriculum_weight(baseline: f64, k: f64) -> f64 {
    if baseline > 1.0 {
        CURRICULUM_FLOOR
    } else if baseline < CURRICULUM_KNOT {
        1.0
    } else {
        1.0 - 0.999 * (1.0 - (-k * (baseline - CURRICULUM_KNOT)).exp())
    }
}

/// Baseline-loss signal for the curriculum, optionally EMA-smoothed.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineTracker {
    decay: f64,
    ema: Option<f64>,
}

impl BaselineTracker {
    pub fn new(decay: f64) -> Self {
        Self { decay, ema: None }
    }

    pub fn update(&mut self, baseline: f64) -> f64 {
        let next = match self.ema {
            Some(prev) if self.decay > 0.0 => self.decay * prev + (1.0 - self.decay) * baseline,
            _ => baseline,
        };
        self.ema = Some(next);
        next
    }
}

/// One batch element's view for the objective. `mask` has one flag per
/// chunk entry.
#[derive(Debug, Clone, Copy)]
pub struct SampleTerms<'a> {
    pub pred: &'a [f64],
    pub target: &'a [f64],
    pub negatives: &'a [Vec<f64>],
    pub stats: &'a LatentStats,
    pub mask: &'a [bool],
}

/// Batch-averaged loss terms and their gradients, before weighting.
///
/// The regression term averages over every unmasked entry in the batch;
/// KL and contrastive terms average over batch elements (contrastive also
/// over each element's negatives).
#[derive(Debug, Clone)]
pub struct BatchParts {
    pub regression: f64,
    pub kl: f64,
    pub contrastive: f64,
    d_pred_regression: Vec<Vec<f64>>,
    d_pred_contrastive: Vec<Vec<f64>>,
    d_mu_kl: Vec<Vec<f64>>,
    d_logvar_kl: Vec<Vec<f64>>,
}

/// Gradients of the weighted total with respect to each element's
/// prediction and posterior parameters.
#[derive(Debug, Clone)]
pub struct SampleGrads {
    pub d_pred: Vec<f64>,
    pub d_mu: Vec<f64>,
    pub d_logvar: Vec<f64>,
}

pub fn batch_parts(samples: &[SampleTerms<'_>], cfg: &LossConfig) -> Result<BatchParts> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    for (b, s) in samples.iter().enumerate() {
        let n = s.pred.len();
        if s.target.len() != n || s.mask.len() != n || s.negatives.iter().any(|g| g.len() != n) {
            return Err(Error::InvalidArgument(format!("sample {b}: shape mismatch")));
        }
        if s.negatives.is_empty() {
            return Err(Error::InvalidArgument(format!("sample {b}: no negatives")));
        }
        let finite = s
            .pred
            .iter()
            .chain(s.target)
            .chain(s.negatives.iter().flatten())
            .chain(&s.stats.mu)
            .chain(&s.stats.logvar)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Numeric(format!("sample {b}: non-finite input")));
        }
    }

    let bsz = samples.len() as f64;
    let mut reg_sum = 0.0;
    let mut reg_count = 0usize;
    let mut d_pred_regression = Vec::with_capacity(samples.len());
    let mut kl = 0.0;
    let mut d_mu_kl = Vec::with_capacity(samples.len());
    let mut d_logvar_kl = Vec::with_capacity(samples.len());
    let mut con = 0.0;
    let mut d_pred_contrastive = Vec::with_capacity(samples.len());

    for s in samples {
        let mut g = vec![0.0; s.pred.len()];
        let (sum, count) =
            regression_sum(s.pred, s.target, s.mask, cfg.regression, cfg.huber_delta, &mut g);
        reg_sum += sum;
        reg_count += count;
        d_pred_regression.push(g);

        let (k, dm, dl) = kl_with_grad(s.stats);
        kl += k / bsz;
        d_mu_kl.push(dm.into_iter().map(|v| v / bsz).collect());
        d_logvar_kl.push(dl.into_iter().map(|v| v / bsz).collect());

        let n_neg = s.negatives.len() as f64;
        let mut gc = vec![0.0; s.pred.len()];
        for neg in s.negatives {
            let (v, g) = contrastive_with_grad(s.pred, s.target, neg, s.mask, cfg.alpha);
            con += v / (bsz * n_neg);
            for (acc, gi) in gc.iter_mut().zip(g) {
                *acc += gi / (bsz * n_neg);
            }
        }
        d_pred_contrastive.push(gc);
    }

    let regression = if reg_count > 0 {
        let n = reg_count as f64;
        d_pred_regression
            .iter_mut()
            .flatten()
            .for_each(|g| *g /= n);
        reg_sum / n
    } else {
        0.0
    };

    Ok(BatchParts {
        regression,
        kl,
        contrastive: con,
        d_pred_regression,
        d_pred_contrastive,
        d_mu_kl,
        d_logvar_kl,
    })
}

impl BatchParts {
    pub fn baseline(&self, cfg: &LossConfig) -> f64 {
        self.regression + cfg.lambda_kl * self.kl
    }

    /// Weighted total with `lambda_c` held fixed, and its gradients.
    pub fn combine(&self, cfg: &LossConfig, lambda_c: f64) -> (LossBreakdown, Vec<SampleGrads>) {
        let baseline = self.baseline(cfg);
        let breakdown = LossBreakdown {
            huber: self.regression,
            kl: self.kl,
            contrastive: self.contrastive,
            lambda_c,
            baseline,
            total: baseline + lambda_c * self.contrastive,
        };
        let grads = (0..self.d_pred_regression.len())
            .map(|b| SampleGrads {
                d_pred: self.d_pred_regression[b]
                    .iter()
                    .zip(&self.d_pred_contrastive[b])
                    .map(|(r, c)| r + lambda_c * c)
                    .collect(),
                d_mu: self.d_mu_kl[b].iter().map(|g| cfg.lambda_kl * g).collect(),
                d_logvar: self.d_logvar_kl[b].iter().map(|g| cfg.lambda_kl * g).collect(),
            })
            .collect();
        (breakdown, grads)
    }
}

/// Full objective for one sample with the curriculum applied to its raw
/// baseline loss. The expert chunk is the positive.
pub fn composite_loss(
    pred: &[f64],
    chunk_gt: &[f64],
    neg: &[f64],
    stats: &LatentStats,
    mask: &[bool],
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    let negatives = [neg.to_vec()];
    let terms = SampleTerms {
        pred,
        target: chunk_gt,
        negatives: &negatives,
        stats,
        mask,
    };
    let parts = batch_parts(&[terms], cfg)?;
    let lambda_c = curriculum_weight(parts.baseline(cfg), cfg.curriculum_k);
    Ok(parts.combine(cfg, lambda_c).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use crate::rng;

    fn all(n: usize) -> Vec<bool> {
        vec![true; n]
    }

    #[test]
    fn huber_values() {
        let t = [0.3, -0.2, 0.0];
        assert_eq!(huber(&t, &t, &all(3), 0.124), 0.0);
        assert!((huber(&[0.124], &[0.0], &all(1), 0.124) - 0.007688).abs() < 1e-12);
        assert!((huber(&[1.0], &[0.0], &all(1), 0.124) - 0.116312).abs() < 1e-12);
        // masked entries ignored
        assert_eq!(huber(&[1.0, 0.5], &[1.0, 0.0], &[true, false], 0.124), 0.0);
        assert_eq!(huber(&[1.0], &[0.0], &[false], 0.124), 0.0);
    }

    #[test]
    fn huber_branches_meet_at_threshold() {
        let d = 0.124;
        let quad = |r: f64| 0.5 * r * r;
        let lin = |r: f64| d * r.abs() - 0.5 * d * d;
        assert!((quad(d) - lin(d)).abs() < 1e-15);
        let (_, gi) = huber_elem(d, d);
        let (_, go) = huber_elem(d + 1e-12, d);
        assert!((gi - go).abs() < 1e-10);
    }

    #[test]
    fn kl_values() {
        assert_eq!(kl_divergence(&LatentStats::standard(3)), 0.0);
        let s = LatentStats {
            mu: vec![1.0, 0.0],
            logvar: vec![0.0, 0.0],
        };
        assert_eq!(kl_divergence(&s), 0.5);
        let mut r = rng::stream(4);
        for _ in 0..1000 {
            let s = LatentStats {
                mu: (0..3).map(|_| r.random_range(-3.0..3.0)).collect(),
                logvar: (0..3).map(|_| r.random_range(-5.0..5.0)).collect(),
            };
            assert!(kl_divergence(&s) >= 0.0);
        }
    }

    #[test]
    fn contrastive_values() {
        let pred = [0.0, 0.0];
        let m = all(2);
        let p = [0.3, 0.4];
        assert!((contrastive(&pred, &p, &p, &m, 0.01) - 0.01).abs() < 1e-15);
        assert_eq!(contrastive(&pred, &pred, &[1.0, 0.0], &m, 0.01), 0.0);
        let got = contrastive(&pred, &[0.3, 0.4], &[0.0, 0.1], &m, 0.01);
        assert!((got - 0.41).abs() < 1e-12);
    }

    #[test]
    fn contrastive_respects_mask() {
        let m = [true, false];
        let got = contrastive(&[0.0, 0.0], &[0.5, 9.0], &[0.1, -9.0], &m, 0.01);
        assert!((got - 0.41).abs() < 1e-12);
    }

    #[test]
    fn curriculum_values() {
        assert_eq!(curriculum_weight(2.0, 15.0), 0.001);
        assert_eq!(curriculum_weight(1e-3, 15.0), 1.0);
        assert_eq!(curriculum_weight(1e-4, 15.0), 1.0);
        let v = curriculum_weight(0.5, 15.0);
        assert!((v - 0.001_560_881_726_801_850_2).abs() < 1e-15, "{v}");
        let top = curriculum_weight(1.0, 15.0);
        assert!((top - 0.001_000_310_214_916_595_6).abs() < 1e-15);
    }

    #[test]
    fn negative_identity_and_zero_gt() {
        let gt = [0.1, -0.2, 0.3];
        assert_eq!(negative_from_draws(&gt, 0.06, 0.0, &[0.0; 3]), gt.to_vec());
        let mut r = rng::stream(8);
        let zeros = vec![0.0; 1000];
        let mut sq = 0.0;
        let mut n = 0;
        for _ in 0..1000 {
            for v in generate_negative(&zeros, 0.08, 1e-5, &mut r) {
                sq += v * v;
                n += 1;
            }
        }
        let std = (sq / n as f64).sqrt();
        // sample std of 1e6 normals: relative SE ~ 1/sqrt(2n)
        assert!((std / 1e-5 - 1.0).abs() < 3.0 / (2.0 * n as f64).sqrt());
    }

    #[test]
    fn negative_scales_whole_chunk_together() {
        let gt = [1.0, 2.0, -3.0, 4.0];
        let mut r = rng::stream(3);
        let neg = generate_negative(&gt, 0.5, 1e-12, &mut r);
        let ratio = neg[0] / gt[0];
        for (a, b) in neg.iter().zip(&gt) {
            assert!((a / b - ratio).abs() < 1e-9);
        }
    }

    #[test]
    fn composite_perfect_fit_corner() {
        let gt = [0.1, 0.2, -0.1, 0.05];
        let neg = [5.0, 5.0, 5.0, 5.0];
        let cfg = LossConfig::default();
        let b = composite_loss(&gt, &gt, &neg, &LatentStats::standard(2), &all(4), &cfg).unwrap();
        assert_eq!(b.baseline, 0.0);
        assert_eq!(b.lambda_c, 1.0);
        assert_eq!(b.contrastive, 0.0);
        assert_eq!(b.total, 0.0);

        let near = [0.1, 0.2, -0.1, 0.0501];
        let b = composite_loss(&gt, &gt, &near, &LatentStats::standard(2), &all(4), &cfg).unwrap();
        let d_neg = 0.0001f64;
        assert!((b.total - (cfg.alpha - d_neg)).abs() < 1e-12);
    }

    #[test]
    fn composite_rejects_non_finite() {
        let cfg = LossConfig::default();
        let r = composite_loss(
            &[f64::NAN],
            &[0.0],
            &[0.0],
            &LatentStats::standard(1),
            &all(1),
            &cfg,
        );
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn zero_weight_reproduces_baseline() {
        let mut r = rng::stream(12);
        let v = |r: &mut rng::Stream, n: usize| -> Vec<f64> { (0..n).map(|_| r.random_range(-0.5..0.5)).collect() };
        let (pred, tgt, neg) = (v(&mut r, 6), v(&mut r, 6), vec![v(&mut r, 6)]);
        let stats = LatentStats { mu: v(&mut r, 2), logvar: v(&mut r, 2) };
        let cfg = LossConfig::default();
        let mask = all(6);
        let terms = SampleTerms { pred: &pred, target: &tgt, negatives: &neg, stats: &stats, mask: &mask };
        let parts = batch_parts(&[terms], &cfg).unwrap();
        let (b, g) = parts.combine(&cfg, 0.0);
        assert_eq!(b.total, huber(&pred, &tgt, &mask, cfg.huber_delta) + cfg.lambda_kl * kl_divergence(&stats));
        let (_, hg) = huber_with_grad(&pred, &tgt, &mask, cfg.huber_delta);
        assert_eq!(g[0].d_pred, hg);
    }

    #[test]
    fn per_term_gradients_match_finite_differences() {
        let mut r = rng::stream(21);
        for trial in 0..100 {
            // with one active entry the hinge is locally flat or kinked; keep two
            let n = r.random_range(2..10);
            let mask: Vec<bool> = (0..n).map(|i| i < 2 || r.random_bool(0.8)).collect();
            let tgt: Vec<f64> = (0..n).map(|_| r.random_range(-0.3..0.3)).collect();
            let neg: Vec<f64> = (0..n).map(|_| r.random_range(-0.3..0.3)).collect();
            let pred: Vec<f64> = (0..n).map(|_| r.random_range(-0.3..0.3)).collect();
            let e1 = grad_check(|p| huber_with_grad(p, &tgt, &mask, 0.124), &pred, 1e-5);
            let e2 = grad_check(|p| contrastive_with_grad(p, &tgt, &neg, &mask, 0.2), &pred, 1e-5);
            let lat = r.random_range(1..4);
            let mu: Vec<f64> = (0..lat).map(|_| r.random_range(-1.0..1.0)).collect();
            let lv: Vec<f64> = (0..lat).map(|_| r.random_range(-1.0..1.0)).collect();
            let mut packed = mu.clone();
            packed.extend_from_slice(&lv);
            let e3 = grad_check(
                |x| {
                    let s = LatentStats { mu: x[..lat].to_vec(), logvar: x[lat..].to_vec() };
                    let (v, dm, dl) = kl_with_grad(&s);
                    (v, [dm, dl].concat())
                },
                &packed,
                1e-5,
            );
            assert!(e1 < 1e-4 && e2 < 1e-4 && e3 < 1e-4, "trial {trial}: {e1} {e2} {e3}");
        }
    }

    #[test]
    fn huber_gradient_bounded_by_delta() {
        let mut r = rng::stream(2);
        for _ in 0..10_000 {
            let x: f64 = r.random_range(-10.0..10.0);
            let (_, g) = huber_elem(x, 0.124);
            assert!(g.abs() <= 0.124);
        }
    }

    #[test]
    fn tracker_smoothing() {
        let mut raw = BaselineTracker::new(0.0);
        assert_eq!(raw.update(3.0), 3.0);
        assert_eq!(raw.update(1.0), 1.0);
        let mut ema = BaselineTracker::new(0.5);
        assert_eq!(ema.update(4.0), 4.0);
        assert_eq!(ema.update(2.0), 3.0);
    }

    #[test]
    fn config_validation() {
        LossConfig::default().validate().unwrap();
        let bad = LossConfig { huber_delta: 0.0, ..LossConfig::default() };
        assert!(bad.validate().is_err());
        let bad = LossConfig { neg_sigma_levels: vec![0.04, -1.0], ..LossConfig::default() };
        assert!(bad.validate().is_err());
    }
}
