//! Fully connected ReLU regression network.
//!
//! Outputs are de-standardized: the last affine layer produces `z` and the
//! network value is `out_std * z + out_mean`. Training fits `z` to
//! standardized targets, so `out_mean` / `out_std` are the target statistics.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learn::Dataset;
use crate::rng;

/// One affine layer, `n_out x n_in` weights stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    n_in: usize,
    n_out: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

impl Layer {
    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn biases(&self) -> &[f64] {
        &self.b
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.w[r * self.n_in..(r + 1) * self.n_in]
    }

    fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.n_out {
            let mut acc = self.b[r];
            for (w, x) in self.row(r).iter().zip(input) {
                acc += w * x;
            }
            out.push(acc);
        }
    }

    /// Induced infinity norm (max absolute row sum).
    fn inf_norm(&self) -> f64 {
        (0..self.n_out)
            .map(|r| self.row(r).iter().map(|w| w.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    layers: Vec<Layer>,
    out_mean: f64,
    out_std: f64,
    seed: u64,
}

/// On-disk model layout.
///
/// Floats are written as shortest round-trip decimals (at most 17 significant
/// digits) and parsed with correct rounding, so save/load is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub dims: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub out_mean: f64,
    pub out_std: f64,
    pub seed: u64,
}

/// Hyper-parameters for [`Mlp::train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch: 32,
            lr: 1e-3,
            seed: 0,
            l2: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 || !(self.lr > 0.0) || !(self.l2 >= 0.0) {
            return Err(Error::Config(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: Mlp,
    /// Mean squared error on standardized targets before the first epoch.
    pub initial_loss: f64,
    /// Loss of the returned parameters (the best epoch).
    pub final_loss: f64,
    /// Loss after every epoch.
    pub history: Vec<f64>,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Mlp {
    /// Random initialization: weights uniform in `±sqrt(6 / fan_in)`, zero
    /// biases, identity output scaling.
    pub fn new(dims: &[usize], seed: u64) -> Result<Self> {
        check_dims(dims)?;
        let mut rng = rng::seeded(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let limit = (6.0 / n_in as f64).sqrt();
                Layer {
                    n_in,
                    n_out,
                    w: (0..n_in * n_out)
                        .map(|_| rng.gen_range(-limit..limit))
                        .collect(),
                    b: vec![0.0; n_out],
                }
            })
            .collect();
        Ok(Self {
            dims: dims.to_vec(),
            layers,
            out_mean: 0.0,
            out_std: 1.0,
            seed,
        })
    }

    pub fn from_parts(
        dims: &[usize],
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
        out_mean: f64,
        out_std: f64,
        seed: u64,
    ) -> Result<Self> {
        check_dims(dims)?;
        let n = dims.len() - 1;
        if weights.len() != n || biases.len() != n {
            return Err(Error::InvalidModel(format!(
                "expected {n} weight and bias blocks, got {} and {}",
                weights.len(),
                biases.len()
            )));
        }
        let mut layers = Vec::with_capacity(n);
        for (k, (w, b)) in weights.into_iter().zip(biases).enumerate() {
            let (n_in, n_out) = (dims[k], dims[k + 1]);
            if w.len() != n_in * n_out || b.len() != n_out {
                return Err(Error::InvalidModel(format!(
                    "layer {k}: expected {n_out}x{n_in} weights and {n_out} biases"
                )));
            }
            if w.iter().chain(&b).any(|v| !v.is_finite()) {
                return Err(Error::InvalidModel(format!("layer {k} has non-finite entries")));
            }
            layers.push(Layer { n_in, n_out, w, b });
        }
        if !(out_std > 0.0 && out_std.is_finite() && out_mean.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "need finite out_mean and out_std > 0, got {out_mean}, {out_std}"
            )));
        }
        Ok(Self {
            dims: dims.to_vec(),
            layers,
            out_mean,
            out_std,
            seed,
        })
    }

    /// Single affine layer `w . x + b`.
    pub fn affine(w: &[f64], b: f64) -> Self {
        Self::from_parts(&[w.len(), 1], vec![w.to_vec()], vec![vec![b]], 0.0, 1.0, 0)
            .expect("finite affine map")
    }

    /// Network whose output is `c` everywhere.
    pub fn constant(dims: &[usize], c: f64) -> Result<Self> {
        check_dims(dims)?;
        let weights = dims.windows(2).map(|w| vec![0.0; w[0] * w[1]]).collect();
        let biases = dims.windows(2).map(|w| vec![0.0; w[1]]).collect();
        Self::from_parts(dims, weights, biases, c, 1.0, 0)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn out_mean(&self) -> f64 {
        self.out_mean
    }

    pub fn out_std(&self) -> f64 {
        self.out_std
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// `out_std * prod ||W||_inf`: a Lipschitz constant w.r.t. the infinity norm.
    pub fn lipschitz_bound(&self) -> f64 {
        self.out_std * self.layers.iter().map(Layer::inf_norm).product::<f64>()
    }

    pub fn forward(&self, theta: &[f64]) -> Result<f64> {
        self.check_input(theta)?;
        Ok(self.value(theta))
    }

    /// Network value without the dimension check (panics on mismatch).
    pub fn value(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.input_dim(), "input dimension");
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if k < last {
                relu_in_place(&mut next);
            }
            std::mem::swap(&mut cur, &mut next);
        }
        self.out_std * cur[0] + self.out_mean
    }

    /// Reverse-mode gradient of [`forward`](Self::forward) w.r.t. the input.
    pub fn grad_input(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_input(theta)?;
        Ok(self.value_and_grad(theta).1)
    }

    pub(crate) fn value_and_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let pre = self.pre_activations(x);
        let z_out = pre.last().expect("at least one layer")[0];
        let mut delta = vec![self.out_std];
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let mut prev = vec![0.0; layer.n_in];
            for (r, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                for (p, w) in prev.iter_mut().zip(layer.row(r)) {
                    *p += w * d;
                }
            }
            if k > 0 {
                for (p, z) in prev.iter_mut().zip(&pre[k - 1]) {
                    if *z <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            delta = prev;
        }
        (self.out_std * z_out + self.out_mean, delta)
    }

    /// Pre-activation vectors of every layer.
    fn pre_activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.n_out);
            layer.apply(&cur, &mut z);
            if k < last {
                cur = z.clone();
                relu_in_place(&mut cur);
            }
            pre.push(z);
        }
        pre
    }

    fn check_input(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: theta.len(),
            });
        }
        Ok(())
    }

    /// Fit to `data` with Adam on standardized targets, starting from the
    /// current weights. The parameters of the epoch with the lowest full-data
    /// loss are returned, so the final loss never exceeds the initial one.
    pub fn train(&self, data: &Dataset, cfg: &TrainConfig) -> Result<Trained> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::Config("cannot train on an empty dataset".into()));
        }
        if data.dim() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: data.dim(),
            });
        }

        let n = data.len();
        let mean = data.rhos().iter().sum::<f64>() / n as f64;
        let var = data.rhos().iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n as f64;
        // A (near-)constant target gets a tiny output scale, so whatever the
        // hidden layers compute barely moves the prediction off the mean.
        let std = var.sqrt().max(1e-9 * mean.abs().max(1.0));
        let targets: Vec<f64> = data.rhos().iter().map(|r| (r - mean) / std).collect();

        let mut model = self.clone();
        model.out_mean = mean;
        model.out_std = std;

        let mut ws = Workspace::new(&model);
        let mut adam = Adam::new(&model);
        let mut rng = rng::seeded(cfg.seed);
        let mut order: Vec<usize> = (0..n).collect();

        let initial_loss = model.std_loss(data, &targets);
        check_loss(0, initial_loss)?;
        let mut best = (initial_loss, model.clone());
        let mut history = Vec::with_capacity(cfg.epochs);

        for epoch in 1..=cfg.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.batch) {
                ws.zero_grads();
                for &i in batch {
                    model.accumulate(&data.thetas()[i], targets[i], &mut ws);
                }
                adam.step(&mut model, &ws, batch.len(), cfg);
            }
            let loss = model.std_loss(data, &targets);
            check_loss(epoch, loss)?;
            history.push(loss);
            if loss < best.0 {
                best = (loss, model.clone());
            }
        }

        let (final_loss, model) = best;
        Ok(Trained {
            model,
            initial_loss,
            final_loss,
            history,
        })
    }

    /// MSE between the raw output `z` and standardized targets.
    fn std_loss(&self, data: &Dataset, targets: &[f64]) -> f64 {
        let mut sum = 0.0;
        for (theta, t) in data.thetas().iter().zip(targets) {
            let z = (self.value(theta) - self.out_mean) / self.out_std;
            sum += (z - t) * (z - t);
        }
        sum / targets.len() as f64
    }

    /// Add the gradient of `(z - target)^2` for one sample into `ws`.
    fn accumulate(&self, x: &[f64], target: f64, ws: &mut Workspace) {
        let last = self.layers.len() - 1;
        ws.acts[0].clear();
        ws.acts[0].extend_from_slice(x);
        for (k, layer) in self.layers.iter().enumerate() {
            let (head, tail) = ws.acts.split_at_mut(k + 1);
            layer.apply(&head[k], &mut ws.pre[k]);
            tail[0].clear();
            tail[0].extend_from_slice(&ws.pre[k]);
            if k < last {
                relu_in_place(&mut tail[0]);
            }
        }
        let z = ws.pre[last][0];
        ws.delta.clear();
        ws.delta.push(2.0 * (z - target));

        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let input = &ws.acts[k];
            let gw = &mut ws.grad_w[k];
            let gb = &mut ws.grad_b[k];
            ws.delta_prev.clear();
            ws.delta_prev.resize(layer.n_in, 0.0);
            for (r, &d) in ws.delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[r] += d;
                let row = r * layer.n_in;
                for c in 0..layer.n_in {
                    gw[row + c] += d * input[c];
                    ws.delta_prev[c] += layer.w[row + c] * d;
                }
            }
            if k > 0 {
                for (p, z) in ws.delta_prev.iter_mut().zip(&ws.pre[k - 1]) {
                    if *z <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
        }
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            dims: self.dims.clone(),
            weights: self.layers.iter().map(|l| l.w.clone()).collect(),
            biases: self.layers.iter().map(|l| l.b.clone()).collect(),
            out_mean: self.out_mean,
            out_std: self.out_std,
            seed: self.seed,
        }
    }

    pub fn from_file(file: ModelFile) -> Result<Self> {
        Self::from_parts(
            &file.dims,
            file.weights,
            file.biases,
            file.out_mean,
            file.out_std,
            file.seed,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::InvalidModel(format!(
            "need at least input and output dims, got {dims:?}"
        )));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidModel(format!("zero-width layer in {dims:?}")));
    }
    if *dims.last().unwrap() != 1 {
        return Err(Error::InvalidModel(format!(
            "output dimension must be 1, got {dims:?}"
        )));
    }
    Ok(())
}

fn check_loss(epoch: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::TrainingDiverged { epoch, loss })
    }
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

struct Workspace {
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    grad_w: Vec<Vec<f64>>,
    grad_b: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Workspace {
    fn new(m: &Mlp) -> Self {
        Self {
            acts: m.dims.iter().map(|&d| Vec::with_capacity(d)).collect(),
            pre: m.layers.iter().map(|l| Vec::with_capacity(l.n_out)).collect(),
            grad_w: m.layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
            grad_b: m.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
            delta: Vec::new(),
            delta_prev: Vec::new(),
        }
    }

    fn zero_grads(&mut self) {
        for g in self.grad_w.iter_mut().chain(self.grad_b.iter_mut()) {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

struct Adam {
    m_w: Vec<Vec<f64>>,
    v_w: Vec<Vec<f64>>,
    m_b: Vec<Vec<f64>>,
    v_b: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(m: &Mlp) -> Self {
        let zw = || m.layers.iter().map(|l| vec![0.0; l.w.len()]).collect();
        let zb = || m.layers.iter().map(|l| vec![0.0; l.b.len()]).collect();
        Self {
            m_w: zw(),
            v_w: zw(),
            m_b: zb(),
            v_b: zb(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut Mlp, ws: &Workspace, batch: usize, cfg: &TrainConfig) {
        self.t += 1;
        let scale = 1.0 / batch as f64;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for (k, layer) in model.layers.iter_mut().enumerate() {
            for (i, w) in layer.w.iter_mut().enumerate() {
                let g = ws.grad_w[k][i] * scale + cfg.l2 * *w;
                adam_update(w, g, &mut self.m_w[k][i], &mut self.v_w[k][i], c1, c2, cfg.lr);
            }
            for (i, b) in layer.b.iter_mut().enumerate() {
                let g = ws.grad_b[k][i] * scale;
                adam_update(b, g, &mut self.m_b[k][i], &mut self.v_b[k][i], c1, c2, cfg.lr);
            }
        }
    }
}

#[inline]
fn adam_update(p: &mut f64, g: f64, m: &mut f64, v: &mut f64, c1: f64, c2: f64, lr: f64) {
    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
}
