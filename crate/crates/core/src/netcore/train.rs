use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{loss, Mlp, NetError, ParamGrads};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn state(self, net: &Mlp) -> OptimizerState {
        let n = net.param_count();
        OptimizerState {
            kind: self,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// Per-parameter optimizer memory (Adam moments).
#[derive(Clone, Debug)]
pub struct OptimizerState {
    kind: Optimizer,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptimizerState {
    /// Applies one update with already-averaged gradients.
    pub fn apply(&mut self, net: &mut Mlp, grads: &ParamGrads, lr: f64) {
        match self.kind {
            Optimizer::Sgd => net.apply_update(grads, lr),
            Optimizer::Adam { beta1, beta2, eps } => {
                self.step += 1;
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let flat = grads
                    .weights
                    .iter()
                    .zip(&grads.bias)
                    .flat_map(|(w, b)| w.iter().chain(b));
                for (((p, g), m), v) in net
                    .params_mut()
                    .zip(flat)
                    .zip(self.m.iter_mut())
                    .zip(self.v.iter_mut())
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Clamped to the dataset size.
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 200,
            batch_size: 32,
            optimizer: Optimizer::adam(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(NetError::BadConfig(format!(
                "learning rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(NetError::BadConfig("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainOutcome {
    /// Mean per-sample loss of each epoch.
    pub loss_history: Vec<f64>,
}

/// Mini-batch training of a classifier on integer labels with
/// cross-entropy loss. Rows are reshuffled every epoch from `cfg.seed`.
pub fn train(
    net: &mut Mlp,
    rows: &[Vec<f64>],
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, NetError> {
    cfg.validate()?;
    if rows.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    if rows.len() != labels.len() {
        return Err(NetError::LengthMismatch {
            pred: rows.len(),
            target: labels.len(),
        });
    }
    let classes = net.output_dim();
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(NetError::BadLabel { label, classes });
    }
    if let Some(r) = rows.iter().find(|r| r.len() != net.input_dim()) {
        return Err(NetError::DimensionMismatch {
            expected: net.input_dim(),
            got: r.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let batch = cfg.batch_size.min(rows.len());
    let mut opt = cfg.optimizer.state(net);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut target = vec![0.0; classes];

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let mut acc = ParamGrads::zeros_like(net);
            for &i in chunk {
                target.iter_mut().for_each(|t| *t = 0.0);
                target[labels[i]] = 1.0;
                let (l, g) = net.param_gradient(&rows[i], &target)?;
                total += l;
                acc.add_assign(&g);
            }
            acc.scale(1.0 / chunk.len() as f64);
            opt.apply(net, &acc, cfg.learning_rate);
        }
        let mean = total / rows.len() as f64;
        if !mean.is_finite() || !net.all_finite() {
            return Err(NetError::NonFiniteLoss { epoch });
        }
        history.push(mean);
    }
    Ok(TrainOutcome {
        loss_history: history,
    })
}

/// Mean cross-entropy of a classifier over labelled rows.
pub fn mean_loss(net: &Mlp, rows: &[Vec<f64>], labels: &[usize]) -> Result<f64, NetError> {
    let mut target = vec![0.0; net.output_dim()];
    let mut total = 0.0;
    for (r, &l) in rows.iter().zip(labels) {
        target.iter_mut().for_each(|t| *t = 0.0);
        target[l] = 1.0;
        total += loss(&net.forward(r)?, &target)?;
    }
    Ok(total / rows.len().max(1) as f64)
}
