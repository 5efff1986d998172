//! Fully connected network (one or two ReLU hidden layers) trained with
//! Adam, inverted dropout, and early stopping on a validation metric.
//!
//! L1/L2 penalties apply to kernel weights only; biases are unregularized.
//! Binary networks train on the logistic loss over raw logits, continuous
//! ones on mean squared error.

use super::LearnerError;
use crate::data::{Dataset, Task};
use crate::metrics::{compute_metric, MetricKind};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpParams {
    pub layer1: usize,
    /// Second hidden layer width; 0 means absent.
    pub layer2: usize,
    /// Adam step size.
    pub lr_rate: f64,
    pub batch_size: usize,
    pub l1: f64,
    pub l2: f64,
    /// Dropout rate on hidden activations, in [0, 1).
    pub dropout: f64,
    pub max_epochs: usize,
    /// Early-stopping patience in epochs.
    pub patience: usize,
    pub seed: u64,
}

impl MlpParams {
    pub fn new(layer1: usize, layer2: usize, lr_rate: f64, batch_size: usize, seed: u64) -> Self {
        Self {
            layer1,
            layer2,
            lr_rate,
            batch_size,
            l1: 0.0,
            l2: 0.0,
            dropout: 0.0,
            max_epochs: 1000,
            patience: 20,
            seed,
        }
    }
}

/// Dense network stored as one flat parameter vector plus layer shapes.
/// Layout per layer: kernel (out x in, row-major) then bias.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Net {
    dims: Vec<usize>,
    params: Vec<f64>,
}

struct LayerView {
    w_off: usize,
    b_off: usize,
    n_in: usize,
    n_out: usize,
}

impl Net {
    pub fn new(dims: &[usize], seed: u64) -> Net {
        assert!(dims.len() >= 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for l in 1..dims.len() {
            let (n_in, n_out) = (dims[l - 1], dims[l]);
            let scale = (2.0 / n_in as f64).sqrt();
            for _ in 0..n_in * n_out {
                params.push(rng.gen_range(-1.0..1.0) * scale);
            }
            params.extend(std::iter::repeat(0.0).take(n_out));
        }
        Net {
            dims: dims.to_vec(),
            params,
        }
    }

    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    fn layer(&self, l: usize) -> LayerView {
        let mut off = 0;
        for k in 1..=l {
            off += self.dims[k - 1] * self.dims[k] + self.dims[k];
        }
        LayerView {
            w_off: off,
            b_off: off + self.dims[l] * self.dims[l + 1],
            n_in: self.dims[l],
            n_out: self.dims[l + 1],
        }
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params.clone()
    }

    pub fn set_flat_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.params.len());
        self.params.copy_from_slice(p);
    }

    /// Maximum absolute kernel weight (biases excluded).
    pub fn max_abs_kernel_weight(&self) -> f64 {
        let mut m: f64 = 0.0;
        for l in 0..self.n_layers() {
            let v = self.layer(l);
            for i in 0..v.n_in * v.n_out {
                m = m.max(self.params[v.w_off + i].abs());
            }
        }
        m
    }

    /// Raw output (logit / regression value) for one input row.
    pub fn forward_row(&self, row: &[f64]) -> f64 {
        let mut act = row.to_vec();
        for l in 0..self.n_layers() {
            let v = self.layer(l);
            let mut next = vec![0.0; v.n_out];
            for o in 0..v.n_out {
                let mut z = self.params[v.b_off + o];
                let w = &self.params[v.w_off + o * v.n_in..v.w_off + (o + 1) * v.n_in];
                for (wi, ai) in w.iter().zip(&act) {
                    z += wi * ai;
                }
                next[o] = if l + 1 < self.n_layers() { z.max(0.0) } else { z };
            }
            act = next;
        }
        act[0]
    }

    /// Batch loss and flat gradient. `masks`, when present, holds one
    /// inverted-dropout mask per hidden layer, laid out [row * width + unit].
    pub fn loss_and_grad(
        &self,
        data: &Dataset,
        rows: &[usize],
        task: Task,
        l1: f64,
        l2: f64,
        masks: Option<&[Vec<f64>]>,
    ) -> (f64, Vec<f64>) {
        let n_layers = self.n_layers();
        let batch = rows.len() as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut data_loss = 0.0;

        for (ri, &r) in rows.iter().enumerate() {
            // forward, keeping activations
            let mut acts: Vec<Vec<f64>> = vec![data.row(r).to_vec()];
            for l in 0..n_layers {
                let v = self.layer(l);
                let prev = &acts[l];
                let mut next = vec![0.0; v.n_out];
                for o in 0..v.n_out {
                    let mut z = self.params[v.b_off + o];
                    let w = &self.params[v.w_off + o * v.n_in..v.w_off + (o + 1) * v.n_in];
                    for (wi, ai) in w.iter().zip(prev) {
                        z += wi * ai;
                    }
                    if l + 1 < n_layers {
                        let mut a = z.max(0.0);
                        if let Some(m) = masks {
                            a *= m[l][ri * v.n_out + o];
                        }
                        next[o] = a;
                    } else {
                        next[o] = z;
                    }
                }
                acts.push(next);
            }
            let out = acts[n_layers][0];
            let y = data.target[r];
            let dout = match task {
                Task::Continuous => {
                    data_loss += (out - y) * (out - y) / batch;
                    2.0 * (out - y) / batch
                }
                Task::Binary => {
                    // softplus(z) - y z, numerically stable
                    data_loss += (out.max(0.0) + (-out.abs()).exp().ln_1p() - y * out) / batch;
                    (sigmoid(out) - y) / batch
                }
            };

            // backward
            let mut delta = vec![dout];
            for l in (0..n_layers).rev() {
                let v = self.layer(l);
                let prev = &acts[l];
                let mut dprev = vec![0.0; v.n_in];
                for o in 0..v.n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    grad[v.b_off + o] += d;
                    let w_row = v.w_off + o * v.n_in;
                    for i in 0..v.n_in {
                        grad[w_row + i] += d * prev[i];
                        dprev[i] += d * self.params[w_row + i];
                    }
                }
                if l > 0 {
                    // acts[l] holds mask * relu(z); it is positive exactly
                    // when the unit is both active and kept.
                    let width = self.dims[l];
                    for i in 0..width {
                        if acts[l][i] <= 0.0 {
                            dprev[i] = 0.0;
                        } else if let Some(m) = masks {
                            dprev[i] *= m[l - 1][ri * width + i];
                        }
                    }
                    delta = dprev;
                }
            }
        }

        // kernel penalties
        let mut penalty = 0.0;
        for l in 0..n_layers {
            let v = self.layer(l);
            for i in 0..v.n_in * v.n_out {
                let w = self.params[v.w_off + i];
                penalty += l1 * w.abs() + l2 * w * w;
                grad[v.w_off + i] += l1 * w.signum() + 2.0 * l2 * w;
            }
        }
        (data_loss + penalty, grad)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// A trained network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub net: Net,
    pub task: Task,
    pub epochs_used: usize,
}

impl Mlp {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let z = self.net.forward_row(row);
        match self.task {
            Task::Continuous => z,
            Task::Binary => sigmoid(z),
        }
    }
}

pub fn fit_mlp(
    train: &Dataset,
    valid: &Dataset,
    params: &MlpParams,
) -> Result<Mlp, LearnerError> {
    if train.n_rows == 0 {
        return Err(LearnerError::EmptyData);
    }
    if params.batch_size == 0 || params.batch_size > train.n_rows {
        return Err(LearnerError::BatchTooLarge {
            batch: params.batch_size,
            n: train.n_rows,
        });
    }
    if !(0.0..1.0).contains(&params.dropout) {
        return Err(LearnerError::BadParam("dropout must be in [0, 1)".to_string()));
    }
    if params.layer1 == 0 {
        return Err(LearnerError::BadParam("layer1 must be at least 1".to_string()));
    }

    let mut dims = vec![train.n_cols, params.layer1];
    if params.layer2 > 0 {
        dims.push(params.layer2);
    }
    dims.push(1);
    let mut net = Net::new(&dims, params.seed);
    let n_hidden = dims.len() - 2;

    let valid_metric = match train.task {
        Task::Continuous => MetricKind::Mse,
        Task::Binary => MetricKind::Logloss,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed.wrapping_add(1));
    let mut adam_m = vec![0.0; net.params.len()];
    let mut adam_v = vec![0.0; net.params.len()];
    let mut step = 0u32;

    let mut order: Vec<usize> = (0..train.n_rows).collect();
    let keep = 1.0 - params.dropout;
    let mut best_params: Vec<f64> = net.flat_params();
    let mut best_metric = f64::INFINITY;
    let mut best_epoch = 0usize;

    for epoch in 1..=params.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(params.batch_size) {
            let masks: Option<Vec<Vec<f64>>> = if params.dropout > 0.0 {
                let mut ms = Vec::with_capacity(n_hidden);
                for h in 0..n_hidden {
                    let width = dims[h + 1];
                    let m: Vec<f64> = (0..chunk.len() * width)
                        .map(|_| {
                            if rng.gen::<f64>() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    ms.push(m);
                }
                Some(ms)
            } else {
                None
            };
            let (loss, grad) = net.loss_and_grad(
                train,
                chunk,
                train.task,
                params.l1,
                params.l2,
                masks.as_deref(),
            );
            if !loss.is_finite() {
                return Err(LearnerError::Diverged { epoch });
            }
            step += 1;
            let bc1 = 1.0 - ADAM_BETA1.powi(step as i32);
            let bc2 = 1.0 - ADAM_BETA2.powi(step as i32);
            for i in 0..net.params.len() {
                adam_m[i] = ADAM_BETA1 * adam_m[i] + (1.0 - ADAM_BETA1) * grad[i];
                adam_v[i] = ADAM_BETA2 * adam_v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
                let m_hat = adam_m[i] / bc1;
                let v_hat = adam_v[i] / bc2;
                net.params[i] -= params.lr_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }

        // validation metric drives early stopping, best weights kept
        let preds: Vec<f64> = (0..valid.n_rows)
            .map(|i| {
                let z = net.forward_row(valid.row(i));
                match train.task {
                    Task::Continuous => z,
                    Task::Binary => sigmoid(z),
                }
            })
            .collect();
        let metric = compute_metric(valid_metric, &valid.target, &preds)?;
        if !metric.is_finite() {
            return Err(LearnerError::Diverged { epoch });
        }
        if metric < best_metric {
            best_metric = metric;
            best_epoch = epoch;
            best_params = net.flat_params();
        } else if epoch - best_epoch >= params.patience {
            break;
        }
    }
    net.set_flat_params(&best_params);
    Ok(Mlp {
        net,
        task: train.task,
        epochs_used: best_epoch,
    })
}
