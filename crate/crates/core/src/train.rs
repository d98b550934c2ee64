//! Training loop, optimizer and evaluation.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{GateMode, GraphInputs, Model, ModelConfig};
use crate::rng::SplitRng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub init_lr: f64,
    pub lr_decay_step: usize,
    pub lr_decay_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub seed: u64,
    /// Stop after this many epochs without a new best validation accuracy.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            init_lr: 1e-2,
            lr_decay_step: 10,
            lr_decay_rate: 0.95,
            weight_decay: 5e-4,
            max_epochs: 500,
            seed: 0,
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.init_lr > 0.0 && self.init_lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.lr_decay_step == 0 {
            return bad("lr decay step must be >= 1");
        }
        if !(self.lr_decay_rate > 0.0 && self.lr_decay_rate <= 1.0) {
            return bad("lr decay rate must lie in (0, 1]");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight decay must be non-negative");
        }
        if self.max_epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.patience == Some(0) {
            return bad("patience must be >= 1");
        }
        Ok(())
    }
}

/// `init_lr * rate^floor(epoch / step)`.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    let steps = (epoch / cfg.lr_decay_step.max(1)) as i32;
    cfg.init_lr * cfg.lr_decay_rate.powi(steps)
}

/// Bias-corrected Adam with L2 weight decay folded into the gradient.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl Adam {
    pub fn new(shapes: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let m: Vec<Tensor> = shapes.into_iter().map(|(r, c)| Tensor::zeros(r, c)).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            v: m.clone(),
            m,
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor], lr: f64, weight_decay: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            p.check_same_shape(g, "adam")?;
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                let g = g + weight_decay * *w;
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Fraction of `mask` whose argmax prediction equals the label.
pub fn accuracy(logits: &Tensor, labels: &[Option<usize>], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let correct = mask
        .iter()
        .filter(|&&i| labels.get(i).copied().flatten() == Some(logits.argmax_row(i)))
        .count();
    Ok(correct as f64 / mask.len() as f64)
}

pub fn evaluate(model: &Model, inputs: &GraphInputs, dataset: &Dataset, mask: &[usize]) -> Result<f64> {
    let logits = model.logits(inputs)?;
    accuracy(&logits, dataset.labels(), mask)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_clock_seconds: f64,
}

/// Summary of one run. Top-level `epoch`, `train_loss`, `val_acc`, `lr`
/// describe the selected snapshot; `test_acc` is that snapshot's accuracy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub seed: u64,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub lr: f64,
    pub epochs_run: usize,
    pub config: serde_json::Value,
    pub timing: Timing,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the best-validation epoch.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub report: MetricsReport,
}

/// Effective configuration echoed into reports.
pub fn config_echo(model: &ModelConfig, train: &TrainConfig) -> serde_json::Value {
    serde_json::json!({ "model": model, "train": train })
}

pub fn train(dataset: &Dataset, model_cfg: &ModelConfig, train_cfg: &TrainConfig) -> Result<TrainOutcome> {
    let inputs = GraphInputs::new(dataset, model_cfg)?;
    train_with_inputs(dataset, &inputs, model_cfg, train_cfg)
}

/// Same as [`train`] with precomputed graph inputs (reused across seeds).
pub fn train_with_inputs(
    dataset: &Dataset,
    inputs: &GraphInputs,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_cfg.validate()?;
    let start = Instant::now();
    let masks = dataset.masks();
    if masks.train.is_empty() || masks.val.is_empty() || masks.test.is_empty() {
        return Err(Error::EmptyMask);
    }
    let root = SplitRng::new(train_cfg.seed);
    let mut model = Model::init(model_cfg.clone(), inputs, &mut root.split("init"))?;
    let mut dropout_rng = root.split("dropout");
    let mut adam = Adam::new(model.params.tensors().iter().map(|t| t.shape()));

    let mut history = Vec::with_capacity(train_cfg.max_epochs);
    let mut best: Option<(usize, Model)> = None;
    let mut since_best = 0;
    for epoch in 0..train_cfg.max_epochs {
        let lr = lr_at_epoch(train_cfg, epoch);
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, inputs, true, &mut dropout_rng, GateMode::Learned)?;
        let loss = tape.softmax_cross_entropy(fwd.logits, dataset.labels(), &masks.train)?;
        let train_loss = tape.value(loss).get(0, 0);
        if !train_loss.is_finite() {
            return Err(Error::Diverged { epoch, loss: train_loss });
        }
        let grads = tape.backward(loss)?.into_vec();
        drop(tape);
        adam.step(model.params.tensors_mut(), &grads, lr, train_cfg.weight_decay)?;

        let logits = model.logits(inputs)?;
        let val_acc = accuracy(&logits, dataset.labels(), &masks.val)?;
        let test_acc = accuracy(&logits, dataset.labels(), &masks.test)?;
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_acc,
            test_acc,
            lr,
        });
        let improved = best.as_ref().is_none_or(|(e, _)| val_acc > history[*e].val_acc);
        if improved {
            best = Some((epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if train_cfg.patience.is_some_and(|p| since_best >= p) {
                break;
            }
        }
    }

    let (best_epoch, best_model) = best.expect("at least one epoch ran");
    let rec = &history[best_epoch];
    let report = MetricsReport {
        dataset: dataset.name().to_string(),
        seed: train_cfg.seed,
        epoch: best_epoch,
        train_loss: rec.train_loss,
        val_acc: rec.val_acc,
        test_acc: rec.test_acc,
        lr: rec.lr,
        epochs_run: history.len(),
        config: config_echo(model_cfg, train_cfg),
        timing: Timing {
            wall_clock_seconds: start.elapsed().as_secs_f64(),
        },
    };
    Ok(TrainOutcome {
        model: best_model,
        history,
        report,
    })
}
