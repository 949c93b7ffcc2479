//! Dense multilayer perceptrons over a flat parameter vector.
//!
//! Each layer stores its weight matrix row-major (`fan_out x fan_in`)
//! followed by its bias, so every parameter is addressable by a single index.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::{data, rng, textfmt};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    /// One activation per hidden layer; the output layer is linear.
    pub activations: Vec<Activation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub weight_offset: usize,
    pub bias_offset: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, hidden: Activation) -> Self {
        let activations = vec![hidden; widths.len().saturating_sub(2)];
        Self { widths, activations }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "mlp needs >= 2 widths, all >= 1; got {:?}",
                self.widths
            )));
        }
        if self.activations.len() != self.widths.len() - 2 {
            return Err(Error::InvalidConfig(format!(
                "{} hidden layers but {} activations",
                self.widths.len() - 2,
                self.activations.len()
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated spec")
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    pub fn layout(&self) -> Vec<LayerLayout> {
        let mut offset = 0;
        self.widths
            .windows(2)
            .map(|w| {
                let l = LayerLayout {
                    weight_offset: offset,
                    bias_offset: offset + w[0] * w[1],
                    fan_in: w[0],
                    fan_out: w[1],
                };
                offset += (w[0] + 1) * w[1];
                l
            })
            .collect()
    }

    fn activation(&self, layer: usize) -> Activation {
        self.activations
            .get(layer)
            .copied()
            .unwrap_or(Activation::Identity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    layout: Vec<LayerLayout>,
}

impl ParamVector {
    pub fn zeros(spec: &MlpSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            values: vec![0.0; spec.n_params()],
            layout: spec.layout(),
        })
    }

    pub fn from_values(spec: &MlpSpec, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        ensure(values.len() == spec.n_params(), || {
            format!("{} values for a spec with {} parameters", values.len(), spec.n_params())
        })?;
        Ok(Self {
            values,
            layout: spec.layout(),
        })
    }

    pub fn layout(&self) -> &[LayerLayout] {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn weight(&self, layer: usize, out: usize, inp: usize) -> f64 {
        let l = &self.layout[layer];
        self.values[l.weight_offset + out * l.fan_in + inp]
    }

    pub fn bias(&self, layer: usize, out: usize) -> f64 {
        self.values[self.layout[layer].bias_offset + out]
    }

    fn matches(&self, spec: &MlpSpec) -> bool {
        self.values.len() == spec.n_params() && self.layout == spec.layout()
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(spec: &MlpSpec, seed: u64) -> Result<ParamVector> {
    let mut params = ParamVector::zeros(spec)?;
    let mut rng = rng::stream(seed);
    for l in params.layout.clone() {
        let bound = (6.0 / (l.fan_in + l.fan_out) as f64).sqrt();
        for w in &mut params.values[l.weight_offset..l.bias_offset] {
            *w = rng.random_range(-bound..bound);
        }
    }
    Ok(params)
}

/// Activation cache of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Tape {
    /// `activations[0]` is the input, `activations[l + 1]` the output of layer `l`.
    activations: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
}

impl Tape {
    pub fn input(&self) -> &[f64] {
        &self.activations[0]
    }

    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("tape has an input")
    }
}

pub fn forward(params: &ParamVector, spec: &MlpSpec, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
    spec.validate()?;
    ensure(params.matches(spec), || "parameters do not match the network shape".into())?;
    ensure(input.len() == spec.input_dim(), || {
        format!("input has {} entries, network expects {}", input.len(), spec.input_dim())
    })?;
    let mut activations = Vec::with_capacity(spec.n_layers() + 1);
    let mut pre_activations = Vec::with_capacity(spec.n_layers());
    activations.push(input.to_vec());
    for (li, l) in params.layout.iter().enumerate() {
        let act = spec.activation(li);
        let a = &activations[li];
        let w = &params.values[l.weight_offset..l.bias_offset];
        let b = &params.values[l.bias_offset..l.bias_offset + l.fan_out];
        let z: Vec<f64> = (0..l.fan_out)
            .map(|o| {
                let row = &w[o * l.fan_in..(o + 1) * l.fan_in];
                b[o] + row.iter().zip(a).map(|(wi, ai)| wi * ai).sum::<f64>()
            })
            .collect();
        let out = z.iter().map(|&v| act.apply(v)).collect();
        pre_activations.push(z);
        activations.push(out);
    }
    let output = activations.last().expect("at least one layer").clone();
    Ok((
        output,
        Tape {
            activations,
            pre_activations,
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

/// Reverse-mode gradient of `output . grad_output` with respect to the
/// parameters and the input.
pub fn backward(
    params: &ParamVector,
    spec: &MlpSpec,
    tape: &Tape,
    grad_output: &[f64],
) -> Result<Gradients> {
    spec.validate()?;
    ensure(params.matches(spec), || "parameters do not match the network shape".into())?;
    ensure(
        tape.activations.len() == spec.widths.len()
            && tape
                .activations
                .iter()
                .zip(&spec.widths)
                .all(|(a, &w)| a.len() == w),
        || "tape was not produced by this spec".into(),
    )?;
    ensure(grad_output.len() == spec.output_dim(), || {
        format!(
            "grad_output has {} entries, network output has {}",
            grad_output.len(),
            spec.output_dim()
        )
    })?;
    let mut grads = vec![0.0; params.values.len()];
    let mut upstream = grad_output.to_vec();
    for (li, l) in params.layout.iter().enumerate().rev() {
        let act = spec.activation(li);
        let z = &tape.pre_activations[li];
        let out = &tape.activations[li + 1];
        let a_in = &tape.activations[li];
        let delta: Vec<f64> = (0..l.fan_out)
            .map(|o| upstream[o] * act.derivative(z[o], out[o]))
            .collect();
        let w = &params.values[l.weight_offset..l.bias_offset];
        let mut next = vec![0.0; l.fan_in];
        for (o, &d) in delta.iter().enumerate() {
            let row = o * l.fan_in;
            grads[l.bias_offset + o] += d;
            for i in 0..l.fan_in {
                grads[l.weight_offset + row + i] += d * a_in[i];
                next[i] += d * w[row + i];
            }
        }
        upstream = next;
    }
    Ok(Gradients {
        params: grads,
        input: upstream,
    })
}

/// Largest elementwise relative error between the analytic gradient
/// reported by `loss_fn` at `params` and central differences of its value.
/// Relative error uses the denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(mut loss_fn: F, params: &[f64], eps: f64) -> f64
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = loss_fn(params);
    assert_eq!(analytic.len(), params.len(), "gradient length mismatch");
    let mut probe = params.to_vec();
    let mut worst = 0.0_f64;
    for i in 0..params.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let up = loss_fn(&probe).0;
        probe[i] = orig - eps;
        let down = loss_fn(&probe).0;
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, hyper: &AdamConfig) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
        state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
    }
}

/// Header line of a parameter file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamHeader {
    pub kind: String,
    pub spec: MlpSpec,
    pub seed: u64,
    pub step: u64,
}

const PARAMS_KIND: &str = "mlp_params";

/// Writes a header line and the flat parameter array, floats at 17
/// significant digits.
pub fn save_params(
    path: impl AsRef<Path>,
    params: &ParamVector,
    spec: &MlpSpec,
    seed: u64,
    step: u64,
) -> Result<()> {
    ensure(params.matches(spec), || "parameters do not match the network shape".into())?;
    textfmt::check_finite("parameters", &params.values)?;
    let header = ParamHeader {
        kind: PARAMS_KIND.into(),
        spec: spec.clone(),
        seed,
        step,
    };
    let body = format!(
        "{}\n{}\n",
        serde_json::to_string(&header).expect("header serializes"),
        textfmt::Floats(&params.values)
    );
    data::write_file(path.as_ref(), &body)
}

pub fn load_params(path: impl AsRef<Path>) -> Result<(ParamHeader, ParamVector)> {
    let path = path.as_ref();
    let lines = data::read_lines(path)?;
    let err = |line: usize, message: String| Error::Parse {
        path: path.into(),
        line,
        message,
    };
    if lines.len() != 2 {
        return Err(err(lines.len().min(2) + 1, format!("expected 2 lines, found {}", lines.len())));
    }
    let header: ParamHeader = serde_json::from_str(&lines[0]).map_err(|e| err(1, e.to_string()))?;
    if header.kind != PARAMS_KIND {
        return Err(err(1, format!("expected kind {PARAMS_KIND:?}, found {:?}", header.kind)));
    }
    let values: Vec<f64> = serde_json::from_str(&lines[1]).map_err(|e| err(2, e.to_string()))?;
    let params = ParamVector::from_values(&header.spec, values).map_err(|e| err(2, e.to_string()))?;
    Ok((header, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(widths: &[usize]) -> MlpSpec {
        MlpSpec::new(widths.to_vec(), Activation::Tanh)
    }

    #[test]
    fn layout_counts() {
        let s = spec(&[3, 4, 2]);
        assert_eq!(s.n_params(), 4 * 4 + 5 * 2);
        let l = s.layout();
        assert_eq!(l[1].weight_offset, 16);
        assert_eq!(l[1].bias_offset, 24);
        assert!(MlpSpec::new(vec![3], Activation::Tanh).validate().is_err());
        assert!(MlpSpec::new(vec![3, 0, 1], Activation::Tanh).validate().is_err());
    }

    #[test]
    fn init_is_seeded_with_zero_bias() {
        let s = spec(&[5, 7, 3]);
        let a = init_params(&s, 4).unwrap();
        assert_eq!(a, init_params(&s, 4).unwrap());
        assert_ne!(a, init_params(&s, 5).unwrap());
        for l in a.layout() {
            assert!(a.values[l.bias_offset..l.bias_offset + l.fan_out]
                .iter()
                .all(|&b| b == 0.0));
        }
    }

    #[test]
    fn init_weights_centred() {
        let s = spec(&[100, 100, 2]);
        let p = init_params(&s, 1).unwrap();
        let l = p.layout()[0];
        let w = &p.values[l.weight_offset..l.bias_offset];
        assert_eq!(w.len(), 10_000);
        let bound = (6.0f64 / 200.0).sqrt();
        assert!(w.iter().all(|x| x.abs() <= bound));
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let se = bound / 3f64.sqrt() / (w.len() as f64).sqrt();
        assert!(mean.abs() <= 3.0 * se);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let s = spec(&[3, 4, 2]);
        let p = ParamVector::zeros(&s).unwrap();
        assert_eq!(forward(&p, &s, &[1.0, -2.0, 3.0]).unwrap().0, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer() {
        let s = MlpSpec::new(vec![3, 3], Activation::Tanh);
        let mut p = ParamVector::zeros(&s).unwrap();
        for i in 0..3 {
            p.values[i * 3 + i] = 1.0;
        }
        let x = [0.5, -1.5, 2.0];
        assert_eq!(forward(&p, &s, &x).unwrap().0, x.to_vec());
    }

    #[test]
    fn matches_hand_matrix_algebra() {
        let s = spec(&[3, 4, 2]);
        let p = init_params(&s, 9).unwrap();
        let mut params = p.clone();
        for (i, v) in params.values.iter_mut().enumerate() {
            if p.layout().iter().any(|l| i >= l.bias_offset && i < l.bias_offset + l.fan_out) {
                *v = 0.1 * (i as f64).sin();
            }
        }
        let x = [0.3, -0.8, 1.7];
        let mut h = [0.0; 4];
        for (o, hv) in h.iter_mut().enumerate() {
            let mut acc = params.bias(0, o);
            for (i, xi) in x.iter().enumerate() {
                acc += params.weight(0, o, i) * xi;
            }
            *hv = acc.tanh();
        }
        let mut y = [0.0; 2];
        for (o, yv) in y.iter_mut().enumerate() {
            let mut acc = params.bias(1, o);
            for (i, hi) in h.iter().enumerate() {
                acc += params.weight(1, o, i) * hi;
            }
            *yv = acc;
        }
        let out = forward(&params, &s, &x).unwrap().0;
        for (a, b) in out.iter().zip(&y) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn forward_rejects_bad_input() {
        let s = spec(&[3, 2]);
        let p = ParamVector::zeros(&s).unwrap();
        assert!(matches!(forward(&p, &s, &[1.0]), Err(Error::InvalidArgument(_))));
        let other = spec(&[3, 3]);
        assert!(forward(&p, &other, &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn backward_zero_upstream() {
        let s = spec(&[3, 4, 2]);
        let p = init_params(&s, 2).unwrap();
        let (_, tape) = forward(&p, &s, &[0.1, 0.2, 0.3]).unwrap();
        let g = backward(&p, &s, &tape, &[0.0, 0.0]).unwrap();
        assert!(g.params.iter().chain(&g.input).all(|&v| v == 0.0));
        assert!(backward(&p, &s, &tape, &[0.0]).is_err());
        let (_, small_tape) = forward(&ParamVector::zeros(&spec(&[2, 2])).unwrap(), &spec(&[2, 2]), &[0.0, 0.0]).unwrap();
        assert!(backward(&p, &s, &small_tape, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn linear_weight_gradient_is_outer_product() {
        let s = MlpSpec::new(vec![3, 2], Activation::Tanh);
        let p = init_params(&s, 3).unwrap();
        let x = [0.4, -1.0, 2.5];
        let up = [1.5, -0.5];
        let (_, tape) = forward(&p, &s, &x).unwrap();
        let g = backward(&p, &s, &tape, &up).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(g.params[o * 3 + i], up[o] * x[i]);
            }
            assert_eq!(g.params[6 + o], up[o]);
        }
    }

    fn fd_check(s: &MlpSpec, seed: u64) -> f64 {
        let mut r = rng::stream(seed);
        let p = init_params(s, seed).unwrap();
        let x: Vec<f64> = (0..s.input_dim()).map(|_| r.random_range(-1.0..1.0)).collect();
        let up: Vec<f64> = (0..s.output_dim()).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut values = p.values.clone();
        for v in values.iter_mut() {
            *v += r.random_range(-0.2..0.2);
        }
        let f = |theta: &[f64]| {
            let pv = ParamVector::from_values(s, theta.to_vec()).unwrap();
            let (y, tape) = forward(&pv, s, &x).unwrap();
            let val = y.iter().zip(&up).map(|(a, b)| a * b).sum();
            (val, backward(&pv, s, &tape, &up).unwrap().params)
        };
        let err_params = grad_check(f, &values, 1e-5);
        let pv = ParamVector::from_values(s, values).unwrap();
        let g_in = |xin: &[f64]| {
            let (y, tape) = forward(&pv, s, xin).unwrap();
            let val = y.iter().zip(&up).map(|(a, b)| a * b).sum();
            (val, backward(&pv, s, &tape, &up).unwrap().input)
        };
        err_params.max(grad_check(g_in, &x, 1e-5))
    }

    #[test]
    fn backward_matches_finite_differences_on_random_specs() {
        let mut r = rng::stream(100);
        for trial in 0..100 {
            let depth = r.random_range(1..=3);
            let mut widths: Vec<usize> = (0..=depth).map(|_| r.random_range(1..=8)).collect();
            widths[0] = widths[0].max(1);
            let act = if trial % 2 == 0 { Activation::Tanh } else { Activation::Relu };
            let s = MlpSpec::new(widths, act);
            let err = fd_check(&s, trial);
            assert!(err < 1e-4, "trial {trial} spec {:?}: {err}", s.widths);
        }
    }

    #[test]
    fn grad_check_quadratic_and_corruption() {
        let p = [0.5, -1.25, 3.0, 0.01];
        let quad = |x: &[f64]| (x.iter().map(|v| v * v).sum::<f64>() / 2.0, x.to_vec());
        assert!(grad_check(quad, &p, 1e-5) < 1e-8);
        let corrupt = |x: &[f64]| {
            let mut g = x.to_vec();
            g[2] += 1.0;
            (x.iter().map(|v| v * v).sum::<f64>() / 2.0, g)
        };
        assert!(grad_check(corrupt, &p, 1e-5) > 0.1);
    }

    #[test]
    fn adam_zero_gradient() {
        let hyper = AdamConfig::default();
        let mut p = vec![1.0, -2.0];
        let mut st = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut st, &hyper);
        assert_eq!(p, vec![1.0, -2.0]);

        let mut st = AdamState {
            m: vec![0.5, -0.5],
            v: vec![0.25, 0.25],
            t: 3,
        };
        let mut q = vec![0.0, 0.0];
        adam_step(&mut q, &[0.0, 0.0], &mut st, &hyper);
        assert_eq!(st.m, vec![0.9 * 0.5, -0.9 * 0.5]);
        assert_eq!(st.v, vec![0.999 * 0.25, 0.999 * 0.25]);
    }

    #[test]
    fn adam_first_step_is_lr_sign() {
        let hyper = AdamConfig::default();
        let g = [3.0, -0.002, 40.0];
        let mut p = vec![0.0; 3];
        let mut st = AdamState::new(3);
        adam_step(&mut p, &g, &mut st, &hyper);
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
        for (pi, gi) in p.iter().zip(&g) {
            let expect = -hyper.lr * gi / (gi.abs() + hyper.eps);
            assert!((pi - expect).abs() < 1e-15);
            assert!((pi.abs() - hyper.lr).abs() < 1e-8);
        }
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let hyper = AdamConfig::default();
            let mut p = vec![0.3, -0.7, 1.1];
            let mut st = AdamState::new(3);
            let mut trace = Vec::new();
            for k in 0..50 {
                let g: Vec<f64> = p.iter().map(|x| 2.0 * x + (k as f64).cos()).collect();
                adam_step(&mut p, &g, &mut st, &hyper);
                trace.extend_from_slice(&p);
            }
            trace
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn param_file_round_trip() {
        let s = spec(&[3, 5, 2]);
        let p = init_params(&s, 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.params");
        save_params(&path, &p, &s, 8, 42).unwrap();
        let (h, back) = load_params(&path).unwrap();
        assert_eq!((h.seed, h.step, &h.spec), (8, 42, &s));
        assert_eq!(back, p);

        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.trim_end()).unwrap();
        assert!(matches!(load_params(&path), Err(Error::Parse { line: 2, .. })));
        assert!(save_params(&path, &p, &spec(&[3, 4, 2]), 0, 0).is_err());
    }
}
