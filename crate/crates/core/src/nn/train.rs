//! Mini-batch MSE training with seeded shuffling and early stopping.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::Network;
use crate::dataset::{Batch, ExampleSet};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Share of examples held out for early stopping; 0 disables it.
    pub validation_fraction: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            optimizer: OptimizerKind::default(),
            batch_size: 128,
            epochs: 100,
            seed: 0,
            validation_fraction: 0.1,
            patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be >= 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.patience == 0 {
            return bad("batch size, epochs and patience must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!(
                "validation fraction must be in [0, 1), got {}",
                self.validation_fraction
            ));
        }
        if let OptimizerKind::Adam { beta1, beta2, epsilon } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(epsilon > 0.0) {
                return bad(format!("invalid Adam parameters {beta1}, {beta2}, {epsilon}"));
            }
        }
        Ok(())
    }
}

/// Random-access example source.
pub trait Examples: Sync {
    fn len(&self) -> usize;
    fn gather(&self, indices: &[usize]) -> Batch;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Examples for ExampleSet {
    fn len(&self) -> usize {
        ExampleSet::len(self)
    }

    fn gather(&self, indices: &[usize]) -> Batch {
        ExampleSet::gather(self, indices)
    }
}

/// Examples held as dense matrices, one row each.
#[derive(Clone, Debug)]
pub struct MemoryExamples {
    pub amp: Option<Array2<f64>>,
    pub phase: Option<Array2<f64>>,
    pub target: Array2<f64>,
}

impl Examples for MemoryExamples {
    fn len(&self) -> usize {
        self.target.nrows()
    }

    fn gather(&self, indices: &[usize]) -> Batch {
        let pick = |a: &Array2<f64>| a.select(ndarray::Axis(0), indices);
        Batch {
            amp: self.amp.as_ref().map(pick),
            phase: self.phase.as_ref().map(pick),
            target: pick(&self.target),
        }
    }
}

/// Per-epoch losses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_mse: Vec<f64>,
    /// `None` when no validation split was held out.
    pub val_mse: Vec<Option<f64>>,
    /// Epoch whose weights were kept (0-based).
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn final_train_mse(&self) -> f64 {
        *self.train_mse.last().expect("at least one epoch")
    }

    /// `epoch,train_mse,val_mse`, epochs counted from 1; empty `val_mse`
    /// without a validation split.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_mse,val_mse\n");
        for (e, (t, v)) in self.train_mse.iter().zip(&self.val_mse).enumerate() {
            let v = v.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{t},{v}\n", e + 1));
        }
        s
    }
}

pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, net: &mut Network) {
        let lr = self.lr;
        let pairs = net.params_and_grads();
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in pairs {
                    p.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
                }
            }
            OptimizerKind::Adam { beta1, beta2, epsilon } => {
                if self.m.is_empty() {
                    self.m = pairs.iter().map(|(p, _)| vec![0.0; p.len()]).collect();
                    self.v = self.m.clone();
                }
                self.step += 1;
                let c1 = 1.0 - beta1.powi(self.step);
                let c2 = 1.0 - beta2.powi(self.step);
                for (((p, g), m), v) in pairs.into_iter().zip(&mut self.m).zip(&mut self.v) {
                    for i in 0..p.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + epsilon);
                    }
                }
            }
        }
    }
}

/// Mean squared error of `net` over the given examples.
pub fn evaluate_mse(net: &Network, data: &dyn Examples, indices: &[usize], batch_size: usize) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Empty("no examples to evaluate".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for chunk in indices.chunks(batch_size.max(1)) {
        let batch = data.gather(chunk);
        let inputs = net.inputs(&batch)?;
        let views: Vec<_> = inputs.iter().map(|x| x.view()).collect();
        let y = net.predict(&views)?;
        sum += (&y - &batch.target).mapv(|d| d * d).sum();
        count += y.len();
    }
    Ok(sum / count as f64)
}

/// Minimizes per-element MSE. With a validation split, training stops after
/// `patience` epochs without improvement and the best weights are restored.
pub fn train(net: &mut Network, data: &dyn Examples, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let n = data.len();
    if n == 0 {
        return Err(Error::Empty("training needs at least one example".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = (n as f64 * cfg.validation_fraction).floor() as usize;
    if n_val >= n {
        return Err(Error::Config("validation split leaves no training examples".into()));
    }
    let val: Vec<usize> = order[..n_val].to_vec();
    let mut train_idx: Vec<usize> = order[n_val..].to_vec();

    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut report = TrainReport {
        train_mse: Vec::new(),
        val_mse: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    let mut best: Option<(f64, Network)> = None;

    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut sum = 0.0;
        for (b, chunk) in train_idx.chunks(cfg.batch_size).enumerate() {
            let batch = data.gather(chunk);
            let inputs = net.inputs(&batch)?;
            let y = net.forward(inputs)?;
            let diff = y - &batch.target;
            let loss = diff.iter().map(|d| d * d).sum::<f64>() / diff.len() as f64;
            if !loss.is_finite() {
                net.clear_cache();
                return Err(Error::NanLoss {
                    epoch,
                    batch: b,
                    layer_norms: net.layer_norms(),
                });
            }
            let scale = 2.0 / diff.len() as f64;
            net.backward(diff * scale, false)?;
            opt.step(net);
            sum += loss * chunk.len() as f64;
        }
        report.train_mse.push(sum / train_idx.len() as f64);

        if val.is_empty() {
            report.val_mse.push(None);
            report.best_epoch = epoch;
            continue;
        }
        let v = evaluate_mse(net, data, &val, cfg.batch_size)?;
        report.val_mse.push(Some(v));
        if best.as_ref().is_none_or(|(b, _)| v < *b) {
            report.best_epoch = epoch;
            best = Some((v, net.clone()));
        } else if epoch - report.best_epoch >= cfg.patience {
            report.stopped_early = true;
            break;
        }
    }
    if let Some((_, snapshot)) = best {
        net.load_params_from(&snapshot)?;
    }
    net.clear_cache();
    Ok(report)
}
