//! Mini-batch Adam training, evaluation, checkpoints, the config file and the
//! complexity calculator.

pub mod checkpoint;
pub mod complexity;
pub mod config;
pub mod metrics;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::loss_and_grad;
use crate::data::{make_batches, Instance};
use crate::error::{FgcnnError, Result};
use crate::model::Model;
use crate::nn::adam::{AdamHyper, AdamState};
use crate::nn::batchnorm::BnMode;
use crate::nn::init::named_rng;
use crate::tensor::{Real, Tensor};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use complexity::{complexity_report, ComplexityReport};
pub use config::RunConfig;
pub use metrics::{compute_metrics, Metrics};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

fn default_batch_size() -> usize {
    256
}

fn default_lr() -> f64 {
    1e-3
}

fn default_epochs() -> usize {
    10
}

fn default_eval_every() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Coefficient of the squared-norm penalty on the embedding tables.
    #[serde(default)]
    pub l2_embedding: f64,
    /// Evaluate every this many epochs (and after the last); 0 disables.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub precision: Precision,
    /// Parameters whose names start with any of these receive no updates.
    #[serde(default)]
    pub frozen_prefixes: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: default_batch_size(),
            learning_rate: default_lr(),
            epochs: default_epochs(),
            seed: 0,
            l2_embedding: 0.0,
            eval_every: default_eval_every(),
            precision: Precision::F32,
            frozen_prefixes: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, batch_norm: bool) -> Result<()> {
        if self.epochs < 1 {
            return Err(FgcnnError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 || (batch_norm && self.batch_size < 2) {
            return Err(FgcnnError::Config(format!(
                "batch_size {} too small{}",
                self.batch_size,
                if batch_norm { " for batch normalization (need >= 2)" } else { "" }
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(FgcnnError::Config("learning_rate must be finite and non-negative".into()));
        }
        if !(self.l2_embedding >= 0.0 && self.l2_embedding.is_finite()) {
            return Err(FgcnnError::Config("l2_embedding must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean cross entropy over the epoch's training rows, before the penalty.
    pub train_loss: f64,
    /// Predictions clamped inside the loss during this epoch.
    pub clamped: usize,
    pub eval: Option<Metrics>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub history: Vec<EpochRecord>,
    pub optimizer: AdamState<T>,
}

fn uses_batch_norm<T: Real>(model: &Model<T>) -> bool {
    let c = model.config();
    let featgen_bn = c.feature_generation.batch_norm && model.n_generated() > 0;
    c.classifier.batch_norm || featgen_bn
}

fn frozen_mask<T: Real>(model: &Model<T>, prefixes: &[String]) -> Vec<bool> {
    model
        .params()
        .names()
        .iter()
        .map(|n| prefixes.iter().any(|p| n.starts_with(p.as_str())))
        .collect()
}

fn epoch_shuffle_seed(seed: u64, epoch: usize) -> u64 {
    named_rng(seed, &format!("shuffle.epoch{epoch}")).gen()
}

/// Trains in place. On a non-finite loss, gradient or parameter the model is
/// restored to its state at the start of the failing epoch and
/// [`FgcnnError::Diverged`] is returned.
pub fn train<T: Real>(
    model: &mut Model<T>,
    train_set: &[Instance],
    eval_set: Option<&[Instance]>,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    let bn = uses_batch_norm(model);
    config.validate(bn)?;
    if train_set.is_empty() {
        return Err(FgcnnError::Empty("training set"));
    }
    let mut optimizer = AdamState::new(AdamHyper::with_lr(config.learning_rate), model.params().tensors());
    let frozen = frozen_mask(model, &config.frozen_prefixes);
    let tables = model.embedding_tables();
    let l2 = T::lit(2.0 * config.l2_embedding);
    let mut dropout_rng = named_rng(config.seed, "dropout");
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let last_good = (model.params().clone(), model.state().clone());
        let batches = make_batches(train_set, config.batch_size, Some(epoch_shuffle_seed(config.seed, epoch)))?;
        let (mut loss_sum, mut rows, mut clamped) = (0.0, 0usize, 0usize);
        for (bi, batch) in batches.iter().enumerate() {
            // batch statistics of a single row are degenerate
            if bn && batch.size < 2 {
                continue;
            }
            let step = (|| -> Result<f64> {
                let pass = model.forward(batch, BnMode::Train, Some(&mut dropout_rng))?;
                let (loss, dlogits, c) = loss_and_grad(&pass.probs, &batch.labels)?;
                if !loss.is_finite() {
                    return Err(FgcnnError::NonFinite {
                        context: "loss".into(),
                        index: 0,
                    });
                }
                clamped += c;
                let mut grads = model.backward(batch, &pass, &dlogits)?;
                if config.l2_embedding > 0.0 {
                    for &h in &tables {
                        let w = model.params().get(h);
                        for (g, &v) in grads.get_mut(h).data_mut().iter_mut().zip(w.data()) {
                            *g += l2 * v;
                        }
                    }
                }
                grads.check_finite()?;
                let mut params: Vec<&mut Tensor<T>> = model.params_mut().tensors_mut().iter_mut().collect();
                let grad_refs: Vec<&Tensor<T>> = grads.tensors().iter().collect();
                optimizer.step(&mut params, &grad_refs, &frozen)?;
                model.params().check_finite()?;
                model.commit_bn(&pass);
                Ok(loss)
            })();
            match step {
                Ok(loss) => {
                    loss_sum += loss * batch.size as f64;
                    rows += batch.size;
                }
                Err(FgcnnError::NonFinite { .. }) => {
                    *model.params_mut() = last_good.0;
                    *model.state_mut() = last_good.1;
                    return Err(FgcnnError::Diverged { epoch, batch: bi });
                }
                Err(e) => return Err(e),
            }
        }
        let due = config.eval_every > 0 && ((epoch + 1) % config.eval_every == 0 || epoch + 1 == config.epochs);
        let eval = match eval_set {
            Some(set) if due => Some(evaluate(model, set, config.batch_size)?),
            _ => None,
        };
        history.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: if rows > 0 { loss_sum / rows as f64 } else { f64::NAN },
            clamped,
            eval,
        });
    }
    Ok(TrainOutcome { history, optimizer })
}

/// Inference-mode click probabilities in input order. Batches are scored
/// in parallel; each row's score does not depend on the split.
pub fn predict<T: Real>(model: &Model<T>, instances: &[Instance], batch_size: usize) -> Result<Vec<f64>> {
    let batches = make_batches(instances, batch_size.max(1), None)?;
    let parts: Vec<Vec<f64>> = batches
        .par_iter()
        .map(|b| model.predict(std::slice::from_ref(b)))
        .collect::<Result<_>>()?;
    Ok(parts.concat())
}

pub fn evaluate<T: Real>(model: &Model<T>, instances: &[Instance], batch_size: usize) -> Result<Metrics> {
    if instances.is_empty() {
        return Err(FgcnnError::Empty("evaluation set"));
    }
    let probs = predict(model, instances, batch_size)?;
    let labels: Vec<u8> = instances.iter().map(|i| i.label).collect();
    Ok(compute_metrics(&probs, &labels))
}
