//! The score-predicting MLP `D_h -> H -> 1`, its exact parameter gradient,
//! and full-batch Adam training on MSE plus an explicit L2 term.
//!
//! Flat parameter layout (length `p = D_h*H + H + H + 1`):
//!
//! | range                     | block                                  |
//! |---------------------------|----------------------------------------|
//! | `0 .. H*D_h`              | hidden weights, row `j` = hidden unit `j` |
//! | `H*D_h .. H*D_h + H`      | hidden biases                          |
//! | `H*D_h + H .. H*D_h + 2H` | output weights                         |
//! | `p - 1`                   | output bias                            |

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::io::{read_f64s, read_magic, read_u64, write_f64s, write_u64};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Relu => a.max(0.0),
            Activation::Tanh => a.tanh(),
        }
    }

    /// Derivative given the pre-activation `a` and the activation `h`.
    #[inline]
    fn derivative(self, a: f64, h: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - h * h,
        }
    }

    fn code(self) -> u64 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    fn from_code(code: u64) -> Result<Self> {
        match code {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Tanh),
            other => Err(Error::Format(format!("unknown activation id {other}"))),
        }
    }
}

/// How squared residuals are combined in the training loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossReduction {
    /// `mean((m(x)-y)^2)`.
    #[default]
    Mean,
    /// `sum((m(x)-y)^2)`, the form matching `V = Σ ∇m ∇mᵀ + λI`.
    Sum,
}

impl LossReduction {
    fn weight(self, n: usize) -> f64 {
        match self {
            LossReduction::Mean => 1.0 / n as f64,
            LossReduction::Sum => 1.0,
        }
    }
}

/// Parameters of the surrogate, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateParams {
    input: usize,
    hidden: usize,
    activation: Activation,
    seed: u64,
    flat: Vec<f64>,
}

pub fn param_count(input: usize, hidden: usize) -> usize {
    input * hidden + 2 * hidden + 1
}

impl SurrogateParams {
    /// He-uniform weights, zero biases.
    pub fn init(input: usize, hidden: usize, activation: Activation, seed: u64) -> Result<Self> {
        if input == 0 || hidden == 0 {
            return Err(Error::Config("surrogate input and hidden widths must be positive".into()));
        }
        let mut rng = seed::rng(seed);
        let mut flat = vec![0.0; param_count(input, hidden)];
        let r1 = (6.0 / input as f64).sqrt();
        for w in &mut flat[..input * hidden] {
            *w = rng.random_range(-r1..=r1);
        }
        let r2 = (6.0 / hidden as f64).sqrt();
        let out = input * hidden + hidden;
        for w in &mut flat[out..out + hidden] {
            *w = rng.random_range(-r2..=r2);
        }
        Ok(SurrogateParams { input, hidden, activation, seed, flat })
    }

    pub fn zeros(input: usize, hidden: usize, activation: Activation) -> Self {
        SurrogateParams { input, hidden, activation, seed: 0, flat: vec![0.0; param_count(input, hidden)] }
    }

    pub fn from_flat(input: usize, hidden: usize, activation: Activation, flat: Vec<f64>) -> Result<Self> {
        ensure(flat.len() == param_count(input, hidden), || {
            format!("flat parameter vector has {} entries, expected {}", flat.len(), param_count(input, hidden))
        })?;
        if !flat.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericInput("surrogate parameters must be finite".into()));
        }
        Ok(SurrogateParams { input, hidden, activation, seed: 0, flat })
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.flat
    }

    pub fn hidden_weights(&self) -> &[f64] {
        &self.flat[..self.input * self.hidden]
    }

    pub fn hidden_biases(&self) -> &[f64] {
        let o = self.input * self.hidden;
        &self.flat[o..o + self.hidden]
    }

    pub fn output_weights(&self) -> &[f64] {
        let o = self.input * self.hidden + self.hidden;
        &self.flat[o..o + self.hidden]
    }

    pub fn output_bias(&self) -> f64 {
        self.flat[self.flat.len() - 1]
    }

    pub fn norm(&self) -> f64 {
        self.flat.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        ensure(x.len() == self.input, || format!("surrogate expects {} features, got {}", self.input, x.len()))?;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericInput("feature vector contains non-finite values".into()));
        }
        Ok(())
    }

    /// Pre-activations and activations of the hidden layer.
    fn hidden_layer(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let w = self.hidden_weights();
        let pre: Vec<f64> = self
            .hidden_biases()
            .iter()
            .enumerate()
            .map(|(j, b)| dot(&w[j * self.input..(j + 1) * self.input], x) + b)
            .collect();
        let act = pre.iter().map(|&a| self.activation.apply(a)).collect();
        (pre, act)
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        let (_, h) = self.hidden_layer(x);
        Ok(dot(self.output_weights(), &h) + self.output_bias())
    }

    /// Exact gradient of `forward` with respect to every parameter.
    pub fn param_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_and_gradient(x)?.1)
    }

    pub fn forward_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_input(x)?;
        let (pre, h) = self.hidden_layer(x);
        let w2 = self.output_weights();
        let out = dot(w2, &h) + self.output_bias();
        let (d, hd) = (self.input, self.hidden);
        let mut g = vec![0.0; self.flat.len()];
        for j in 0..hd {
            let delta = w2[j] * self.activation.derivative(pre[j], h[j]);
            if delta != 0.0 {
                for (gk, xk) in g[j * d..(j + 1) * d].iter_mut().zip(x) {
                    *gk = delta * xk;
                }
            }
            g[d * hd + j] = delta;
            g[d * hd + hd + j] = h[j];
        }
        g[d * hd + 2 * hd] = 1.0;
        Ok((out, g))
    }

    /// Checkpoint: header (D_h, H, activation id, seed) + flat payload.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        write_u64(&mut w, self.input as u64)?;
        write_u64(&mut w, self.hidden as u64)?;
        write_u64(&mut w, self.activation.code())?;
        write_u64(&mut w, self.seed)?;
        write_f64s(&mut w, &self.flat)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        read_magic(&mut r, CHECKPOINT_MAGIC, "surrogate checkpoint")?;
        let input = read_u64(&mut r)? as usize;
        let hidden = read_u64(&mut r)? as usize;
        let activation = Activation::from_code(read_u64(&mut r)?)?;
        let seed = read_u64(&mut r)?;
        let flat = read_f64s(&mut r, param_count(input, hidden))?;
        let mut p = SurrogateParams::from_flat(input, hidden, activation, flat)?;
        p.seed = seed;
        Ok(p)
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"INSTCK01";

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators let the compiler vectorize
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub hidden: usize,
    pub activation: Activation,
    pub learning_rate: f64,
    pub iterations: usize,
    pub l2_lambda: f64,
    pub reduction: LossReduction,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: 100,
            activation: Activation::Relu,
            learning_rate: 0.001,
            iterations: 1000,
            l2_lambda: 0.1,
            reduction: LossReduction::Mean,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.l2_lambda >= 0.0
            && self.hidden > 0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(
                "train config needs learning_rate > 0, l2_lambda >= 0, hidden > 0, betas in [0,1), epsilon > 0".into(),
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: SurrogateParams,
    /// Objective before each step, then once more after the last step.
    pub loss_trace: Vec<f64>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> f64 {
        *self.loss_trace.last().expect("trace has at least one entry")
    }
}

/// Full-batch Adam on `mean((m(x)-y)^2) + l2_lambda * ||θ||^2 / 2` (or the
/// summed residuals, per `cfg.reduction`).
pub fn train(theta0: &SurrogateParams, xs: &[&[f64]], ys: &[f64], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if xs.is_empty() {
        return Err(Error::InsufficientData("cannot train on an empty history".into()));
    }
    ensure(xs.len() == ys.len(), || format!("{} inputs but {} targets", xs.len(), ys.len()))?;
    for x in xs {
        theta0.check_input(x)?;
    }
    if !ys.iter().all(|y| y.is_finite()) {
        return Err(Error::NumericInput("training targets must be finite".into()));
    }

    let mut theta = theta0.clone();
    let p = theta.flat.len();
    let mut m = vec![0.0; p];
    let mut v = vec![0.0; p];
    let mut grad = vec![0.0; p];
    let mut trace = Vec::with_capacity(cfg.iterations + 1);

    for step in 0..cfg.iterations {
        let loss = loss_and_gradient(&theta, xs, ys, cfg, &mut grad);
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        trace.push(loss);
        let t = (step + 1) as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..p {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            theta.flat[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    let final_loss = objective(&theta, xs, ys, cfg);
    if !final_loss.is_finite() {
        return Err(Error::Divergence { step: cfg.iterations, loss: final_loss });
    }
    trace.push(final_loss);
    Ok(TrainOutcome { params: theta, loss_trace: trace })
}

/// Training objective at `theta`.
pub fn objective(theta: &SurrogateParams, xs: &[&[f64]], ys: &[f64], cfg: &TrainConfig) -> f64 {
    let data = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let (_, h) = theta.hidden_layer(x);
            let r = dot(theta.output_weights(), &h) + theta.output_bias() - y;
            r * r
        })
        .sum::<f64>()
        * cfg.reduction.weight(xs.len());
    data + 0.5 * cfg.l2_lambda * theta.flat.iter().map(|v| v * v).sum::<f64>()
}

fn loss_and_gradient(theta: &SurrogateParams, xs: &[&[f64]], ys: &[f64], cfg: &TrainConfig, grad: &mut [f64]) -> f64 {
    let (d, hd) = (theta.input, theta.hidden);
    let weight = cfg.reduction.weight(xs.len());
    for (g, w) in grad.iter_mut().zip(&theta.flat) {
        *g = cfg.l2_lambda * w;
    }
    let w1 = theta.hidden_weights();
    let b1 = theta.hidden_biases();
    let w2 = theta.output_weights().to_vec();
    let b2 = theta.output_bias();
    let mut pre = vec![0.0; hd];
    let mut h = vec![0.0; hd];
    let mut sse = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        for j in 0..hd {
            pre[j] = dot(&w1[j * d..(j + 1) * d], x) + b1[j];
            h[j] = theta.activation.apply(pre[j]);
        }
        let r = dot(&w2, &h) + b2 - y;
        sse += r * r;
        let scale = 2.0 * r * weight;
        for j in 0..hd {
            let delta = scale * w2[j] * theta.activation.derivative(pre[j], h[j]);
            if delta != 0.0 {
                for (gk, xk) in grad[j * d..(j + 1) * d].iter_mut().zip(x.iter()) {
                    *gk += delta * xk;
                }
            }
            grad[d * hd + j] += delta;
            grad[d * hd + hd + j] += scale * h[j];
        }
        grad[d * hd + 2 * hd] += scale;
    }
    sse * weight + 0.5 * cfg.l2_lambda * theta.flat.iter().map(|v| v * v).sum::<f64>()
}
