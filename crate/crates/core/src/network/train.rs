//! Mini-batch training with AdaGrad, dropout, and best-validation model selection.

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dropout, FeatureMap, Network, NetworkSpec, Parameters};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalTable, Evaluation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub dropout_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            dropout_rate: 0.5,
            epochs: 100,
            seed: 0,
            batch_size: 16,
        }
    }
}

impl TrainConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            v.push(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            v.push(format!("dropout_rate must be in [0, 1), got {}", self.dropout_rate));
        }
        if self.batch_size == 0 {
            v.push("batch_size must be >= 1".into());
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub input: FeatureMap,
    pub labels: Vec<f64>,
}

/// Per-parameter step `lr * g / sqrt(G + eps)` with `G` the running sum of
/// squared gradients.
#[derive(Debug, Clone)]
pub struct AdaGrad {
    learning_rate: f64,
    accum: Vec<f64>,
}

impl AdaGrad {
    pub const EPS: f64 = 1e-8;

    pub fn new(learning_rate: f64, num_params: usize) -> Self {
        AdaGrad {
            learning_rate,
            accum: vec![0.0; num_params],
        }
    }

    pub fn step(&mut self, params: &mut Parameters, grads: &Parameters) {
        for ((p, g), acc) in params.iter_mut().zip(grads.iter()).zip(self.accum.iter_mut()) {
            *acc += g * g;
            *p -= self.learning_rate * g / (*acc + Self::EPS).sqrt();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_perclass_auc: f64,
    pub val_perclip_auc: f64,
}

pub fn epochs_csv(records: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_perclass_auc,val_perclip_auc\n");
    for r in records {
        s.push_str(&format!(
            "{},{},{},{}\n",
            r.epoch, r.train_loss, r.val_perclass_auc, r.val_perclip_auc
        ));
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Snapshot from the epoch with the best validation per-class AUC.
    pub best: Network,
    pub best_epoch: usize,
    pub last: Network,
    pub history: Vec<EpochRecord>,
}

/// Predicts every example and evaluates against its labels.
pub fn evaluate_examples(net: &Network, examples: &[LabeledExample]) -> Result<Evaluation> {
    let scores: Vec<Vec<f64>> = examples
        .par_iter()
        .map(|e| net.predict(&e.input))
        .collect::<Result<_>>()?;
    let labels: Vec<Vec<bool>> = examples
        .iter()
        .map(|e| e.labels.iter().map(|&y| y > 0.5).collect())
        .collect();
    evaluate(&EvalTable::from_rows(&scores, &labels)?)
}

fn check_examples(spec: &NetworkSpec, examples: &[LabeledExample], what: &str) -> Result<()> {
    for (i, e) in examples.iter().enumerate() {
        if e.labels.len() != spec.num_tags {
            return Err(Error::invalid(format!(
                "{what} example {i} has {} labels, network has {} tags",
                e.labels.len(),
                spec.num_tags
            )));
        }
        if let Some(bad) = e.labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::invalid(format!("{what} example {i} has non-binary label {bad}")));
        }
    }
    Ok(())
}

/// Trains a freshly initialized network. When `valid` is empty the
/// training set itself is used for model selection.
pub fn train(
    spec: NetworkSpec,
    train_set: &[LabeledExample],
    valid: &[LabeledExample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let v = cfg.violations();
    if !v.is_empty() {
        return Err(Error::InvalidConfig(v));
    }
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    check_examples(&spec, train_set, "training")?;
    check_examples(&spec, valid, "validation")?;
    let selection = if valid.is_empty() {
        info!("no validation split; selecting on the training set");
        train_set
    } else {
        valid
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init_seed = rng.random::<u64>();
    let mut net = Network::initialize(spec, init_seed)?;
    let mut opt = AdaGrad::new(cfg.learning_rate, net.params().len());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Network)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            // Seeds are drawn in order so results do not depend on thread count.
            let seeds: Vec<u64> = batch.iter().map(|_| rng.random()).collect();
            let results: Vec<(f64, Parameters)> = batch
                .par_iter()
                .zip(seeds.par_iter())
                .map(|(&i, &seed)| {
                    let mut dropout = Dropout::new(cfg.dropout_rate, seed);
                    let ex = &train_set[i];
                    net.loss_and_gradient(&ex.input, &ex.labels, Some(&mut dropout))
                })
                .collect::<Result<_>>()?;
            let mut grad = Parameters::zeros(net.spec());
            for (loss, g) in &results {
                loss_sum += loss;
                grad.add_assign(g);
            }
            grad.scale(1.0 / batch.len() as f64);
            opt.step(net.params_mut(), &grad);
        }

        let eval = evaluate_examples(&net, selection)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_perclass_auc: eval.perclass_auc.value(),
            val_perclip_auc: eval.perclip_auc.value(),
        };
        debug!(
            "epoch {epoch}: loss {:.5} val per-class AUC {:.4} per-clip AUC {:.4}",
            record.train_loss, record.val_perclass_auc, record.val_perclip_auc
        );
        let score = eval.perclass_auc.mean.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, epoch, net.clone()));
        }
        history.push(record);
    }

    let (best_net, best_epoch) = match best {
        Some((_, e, n)) => (n, e),
        None => (net.clone(), 0),
    };
    info!("best validation per-class AUC at epoch {best_epoch}");
    Ok(TrainOutcome {
        best: best_net,
        best_epoch,
        last: net,
        history,
    })
}
