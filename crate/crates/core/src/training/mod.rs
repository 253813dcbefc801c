//! Losses, gradients, optimizers, and the fit loop for the joint objective
//! `ce + lambda * reg` under the softmax simplex parameterization.

mod backward;
mod gradcheck;
mod loss;
mod optimizer;

pub use backward::{backward, AffineGrads, Gradients};
pub use gradcheck::{grad_check, GroupCheck};
pub use loss::{ce_loss, total_loss, PROB_CLAMP};
pub use optimizer::{adam_update, sgd_momentum_update, Optimizer, OptimizerB};

pub(crate) use backward::backward_full;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{InitVariant, ModelDims, PrismModel};
use crate::numerics::{Inversion, DEFAULT_NEUMANN_ORDER};
use crate::rng::SplitMix64;

/// Training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Regularization weight.
    pub lambda: f64,
    /// Number of pseudo labels `M`.
    pub pseudo_labels: usize,
    /// Number of classes `K`.
    pub classes: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Learning rate for encoder, projection head, and mixture head.
    pub lr_theta: f64,
    /// Learning rate for confusion and mixture logits.
    pub lr_b: f64,
    pub momentum: f64,
    pub weight_decay_theta: f64,
    pub weight_decay_b: f64,
    pub optimizer_b: OptimizerB,
    pub inversion: Inversion,
    pub seed: u64,
    pub init_variant: InitVariant,
    /// Drop the regularization path into the confusion logits (ablation).
    pub freeze_b_in_reg: bool,
    /// Encoder hidden layer widths.
    pub hidden: Vec<usize>,
    /// Penultimate feature dimension `L`.
    pub penultimate: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.05,
            pseudo_labels: 3,
            classes: 4,
            epochs: 50,
            batch_size: 64,
            lr_theta: 0.05,
            lr_b: 0.05,
            momentum: 0.9,
            weight_decay_theta: 1e-4,
            weight_decay_b: 1e-6,
            optimizer_b: OptimizerB::Adam,
            inversion: Inversion::Neumann(DEFAULT_NEUMANN_ORDER),
            seed: 7,
            init_variant: InitVariant::IdentityBUniformD,
            freeze_b_in_reg: false,
            hidden: vec![64, 64],
            penultimate: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.pseudo_labels < 1 {
            return Err(Error::Config("pseudo_labels (M) must be >= 1".to_string()));
        }
        if self.classes < 2 {
            return Err(Error::Config("classes (K) must be >= 2".to_string()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".to_string()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.penultimate == 0 {
            return Err(Error::Config("penultimate dimension must be >= 1".to_string()));
        }
        Ok(())
    }

    pub fn model_dims(&self, input: usize) -> ModelDims {
        ModelDims {
            input,
            hidden: self.hidden.clone(),
            penultimate: self.penultimate,
            pseudo_labels: self.pseudo_labels,
            classes: self.classes,
        }
    }
}

/// One epoch's entry in the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub ce: f64,
    pub reg: f64,
    pub total: f64,
    pub accuracy: f64,
}

/// Per-epoch training history.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    /// CSV rendering (`epoch,ce,reg,total,acc`) with 9 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,ce,reg,total,acc\n");
        for (epoch, rec) in self.records.iter().enumerate() {
            out.push_str(&format!(
                "{},{:.8e},{:.8e},{:.8e},{:.8e}\n",
                epoch, rec.ce, rec.reg, rec.total, rec.accuracy
            ));
        }
        out
    }
}

/// Trains a model on the dataset. Deterministic given `(seed, config, data)`:
/// initialization, shuffling, and every arithmetic step are fixed.
pub fn fit(dataset: &Dataset, config: &TrainConfig) -> Result<(PrismModel, TrainLog)> {
    config.validate()?;
    let n = dataset.len();
    if n == 0 {
        return Err(Error::EmptyInput("training dataset"));
    }
    let mut labels = Vec::with_capacity(n);
    for &y in dataset.labels() {
        if y < 0 || y as usize >= config.classes {
            return Err(Error::LabelOutOfRange {
                label: y,
                classes: config.classes,
            });
        }
        labels.push(y as usize);
    }

    let mut model = PrismModel::new(
        config.model_dims(dataset.feature_dim()),
        config.init_variant,
        config.seed,
    );
    let mut optimizer = Optimizer::new(&model, config);
    // Shuffling draws from its own stream, offset from the init seed.
    let mut shuffle_rng = SplitMix64::new(config.seed.wrapping_add(1));
    let mut log = TrainLog::default();

    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..config.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut ce_sum = 0.0;
        let mut reg_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let xs: Vec<&[f64]> = batch.iter().map(|&i| dataset.sample(i)).collect();
            let ys: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            // Exploded parameters surface as non-finite activations before
            // the loss itself can: both are divergence at this level.
            let (grads, total, ce, reg) = match backward_full(&model, &xs, &ys, config) {
                Ok(out) => out,
                Err(Error::NonFinite { .. }) => return Err(Error::Diverged { epoch }),
                Err(err) => return Err(err),
            };
            if !total.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            grads.check_finite()?;
            optimizer.step(&mut model, &grads, config);
            ce_sum += ce * batch.len() as f64;
            reg_sum += reg * batch.len() as f64;
        }
        let mut correct = 0usize;
        for (i, &label) in labels.iter().enumerate() {
            let predicted = match model.predict(dataset.sample(i)) {
                Ok(class) => class,
                Err(Error::NonFinite { .. }) => return Err(Error::Diverged { epoch }),
                Err(err) => return Err(err),
            };
            if predicted == label {
                correct += 1;
            }
        }
        let ce = ce_sum / n as f64;
        let reg = reg_sum / n as f64;
        log.records.push(EpochRecord {
            ce,
            reg,
            total: ce + config.lambda * reg,
            accuracy: correct as f64 / n as f64,
        });
    }
    Ok((model, log))
}
