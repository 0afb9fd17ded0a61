//! Multinomial logistic regression on fixed embeddings, trained with
//! mini-batch SGD (Nesterov momentum, L2 weight decay, cosine schedule).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Cosine,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearProbeConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// `None` means `min(100, n)`.
    pub batch_size: Option<usize>,
    pub schedule: Schedule,
    /// Train on per-dimension standardized features; the transform is folded
    /// back into the returned weights.
    pub standardize: bool,
    pub seed: u64,
}

impl Default for LinearProbeConfig {
    fn default() -> Self {
        LinearProbeConfig {
            epochs: 500,
            base_lr: 0.025,
            momentum: 0.9,
            weight_decay: 3e-4,
            batch_size: None,
            schedule: Schedule::Cosine,
            standardize: true,
            seed: 0,
        }
    }
}

impl LinearProbeConfig {
    /// Recipe used for the linear evaluation model: 500 epochs.
    pub fn evaluation() -> Self {
        Self::default()
    }

    /// Early-stopped recipe used by the AUM-style filters: 40 epochs.
    pub fn filtering() -> Self {
        LinearProbeConfig {
            epochs: 40,
            ..Self::default()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        LinearProbeConfig { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("probe.epochs", "must be >= 1"));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::config("probe.base_lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("probe.momentum", "must be in [0, 1)"));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::config("probe.weight_decay", "must be non-negative"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::config("probe.batch_size", "must be positive"));
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.base_lr,
            Schedule::Cosine => {
                let t = epoch as f64 / self.epochs as f64;
                0.5 * self.base_lr * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    /// C×D.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    /// Full-data objective after each epoch.
    pub training_log: Vec<f64>,
}

impl LinearProbe {
    pub fn zeros(class_count: usize, dim: usize) -> Self {
        LinearProbe {
            weights: Array2::zeros((class_count, dim)),
            bias: Array1::zeros(class_count),
            training_log: Vec::new(),
        }
    }

    pub fn class_count(&self) -> usize {
        self.weights.nrows()
    }

    pub fn logits(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        self.weights.dot(&x) + &self.bias
    }

    /// Logits for every row, n×C.
    pub fn logits_batch(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weights.t()) + &self.bias
    }

    pub fn predict(&self, x: ArrayView1<'_, f64>) -> usize {
        argmax(self.logits(x).view())
    }

    pub fn predict_batch(&self, x: ArrayView2<'_, f64>) -> Vec<usize> {
        self.logits_batch(x).axis_iter(Axis(0)).map(argmax).collect()
    }

    pub fn accuracy(&self, x: ArrayView2<'_, f64>, y: &[usize]) -> f64 {
        if y.is_empty() {
            return 0.0;
        }
        let hits = self.predict_batch(x).iter().zip(y).filter(|(p, t)| p == t).count();
        hits as f64 / y.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }

    /// Mean cross-entropy plus `weight_decay / 2 · (‖W‖² + ‖b‖²)`, and its
    /// gradient with respect to W and b.
    pub fn loss_and_grad(
        &self,
        x: ArrayView2<'_, f64>,
        y: &[usize],
        weight_decay: f64,
    ) -> (f64, Array2<f64>, Array1<f64>) {
        let n = x.nrows() as f64;
        let mut probs = self.logits_batch(x);
        let mut loss = 0.0;
        for (mut row, &label) in probs.axis_iter_mut(Axis(0)).zip(y) {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            row.mapv_inplace(|v| (v - max).exp());
            let z: f64 = row.sum();
            loss += z.ln() - row[label].ln();
            row /= z;
            row[label] -= 1.0;
        }
        // probs now holds dL/dlogits per sample
        probs /= n;
        let mut grad_w = probs.t().dot(&x);
        let mut grad_b = probs.sum_axis(Axis(0));
        grad_w.scaled_add(weight_decay, &self.weights);
        grad_b.scaled_add(weight_decay, &self.bias);
        let reg = 0.5
            * weight_decay
            * (self.weights.iter().map(|v| v * v).sum::<f64>() + self.bias.iter().map(|v| v * v).sum::<f64>());
        (loss / n + reg, grad_w, grad_b)
    }

    pub fn loss(&self, x: ArrayView2<'_, f64>, y: &[usize], weight_decay: f64) -> f64 {
        self.loss_and_grad(x, y, weight_decay).0
    }
}

pub(crate) fn argmax(v: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Trains a probe with `class_count` outputs.
pub fn train_linear_probe(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    class_count: usize,
    config: &LinearProbeConfig,
) -> Result<LinearProbe> {
    train_linear_probe_with(x, y, class_count, config, |_, _| {})
}

/// Like [`train_linear_probe`], calling `on_epoch(epoch, probe)` after every
/// epoch (epochs are numbered from 1).
pub fn train_linear_probe_with<F>(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    class_count: usize,
    config: &LinearProbeConfig,
    mut on_epoch: F,
) -> Result<LinearProbe>
where
    F: FnMut(usize, &LinearProbe),
{
    config.validate()?;
    let (n, d) = x.dim();
    if n == 0 {
        return Err(Error::invalid("cannot train a probe on an empty sample set"));
    }
    if y.len() != n {
        return Err(Error::Alignment(format!("{n} rows but {} labels", y.len())));
    }
    if let Some(bad) = y.iter().find(|&&l| l >= class_count) {
        return Err(Error::invalid(format!("label {bad} >= class count {class_count}")));
    }

    let (center, scale) = if config.standardize {
        standardization(x)
    } else {
        (Array1::zeros(d), Array1::ones(d))
    };
    let xs = (&x - &center) / &scale;

    // Uniform(-1/sqrt(D), 1/sqrt(D)) init, as for a default dense layer.
    let bound = 1.0 / (d as f64).sqrt();
    let mut init = rng::stream(config.seed, rng::PROBE_INIT);
    let mut probe = LinearProbe::zeros(class_count, d);
    probe.weights.mapv_inplace(|_| init.random_range(-bound..bound));
    probe.bias.mapv_inplace(|_| init.random_range(-bound..bound));

    let batch = config.batch_size.unwrap_or(100).min(n);
    let mut vel_w = Array2::<f64>::zeros((class_count, d));
    let mut vel_b = Array1::<f64>::zeros(class_count);
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle = rng::stream(config.seed, rng::PROBE_SHUFFLE);
    let mu = config.momentum;

    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        order.shuffle(&mut shuffle);
        for chunk in order.chunks(batch) {
            let xb = xs.select(Axis(0), chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            let (_, gw, gb) = probe.loss_and_grad(xb.view(), &yb, config.weight_decay);
            // Nesterov: v <- mu v + g ; p <- p - lr (g + mu v)
            vel_w *= mu;
            vel_w += &gw;
            vel_b *= mu;
            vel_b += &gb;
            probe.weights.scaled_add(-lr, &gw);
            probe.weights.scaled_add(-lr * mu, &vel_w);
            probe.bias.scaled_add(-lr, &gb);
            probe.bias.scaled_add(-lr * mu, &vel_b);
        }
        let full = probe.loss(xs.view(), y, config.weight_decay);
        probe.training_log.push(full);
        on_epoch(epoch + 1, &fold(&probe, &center, &scale));
    }
    let probe = fold(&probe, &center, &scale);
    if !probe.is_finite() {
        return Err(Error::invalid("probe training diverged (non-finite parameters)"));
    }
    Ok(probe)
}

/// Per-column mean and standard deviation; constant columns get scale 1.
fn standardization(x: ArrayView2<'_, f64>) -> (Array1<f64>, Array1<f64>) {
    let center = x.mean_axis(Axis(0)).expect("non-empty");
    let scale = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
    (center, scale)
}

/// Rewrites a probe on standardized inputs as a probe on raw inputs.
fn fold(probe: &LinearProbe, center: &Array1<f64>, scale: &Array1<f64>) -> LinearProbe {
    let weights = &probe.weights / scale;
    let bias = &probe.bias - &weights.dot(center);
    LinearProbe {
        weights,
        bias,
        training_log: probe.training_log.clone(),
    }
}
