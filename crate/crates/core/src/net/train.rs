use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::optim::{AdamSettings, AdamW};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// How the per-epoch training loss is reported.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrainLossMode {
    /// Sample-weighted mean of the mini-batch losses seen during the epoch.
    #[default]
    Running,
    /// Evaluation-mode loss on the whole training set after the epoch.
    Evaluated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Tikhonov factor, applied as decoupled decay of the weight matrices.
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub train_loss: TrainLossMode,
    /// Fit the input standardization to the training set before training.
    pub fit_normalization: bool,
    /// Set the fixed output scale to the RMS of the training targets.
    pub scale_output: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
            batch_size: 1024,
            max_epochs: 1000,
            seed: 0,
            train_loss: TrainLossMode::Running,
            fit_normalization: true,
            scale_output: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| {
            Err(Error::Config {
                key: key.into(),
                message: message.into(),
            })
        };
        if !(self.lr > 0.0) {
            return bad("lr", "must be positive");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs", "must be at least 1");
        }
        if self.batch_size < 2 {
            return bad("batch_size", "batch normalization needs at least 2 rows");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas", "must lie in [0, 1)");
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay", "must be non-negative");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamSettings {
        AdamSettings {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// Paired feature and target rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples<T> {
    pub inputs: Array2<T>,
    pub targets: Array2<T>,
}

impl<T: Real> Samples<T> {
    pub fn new(inputs: Array2<T>, targets: Array2<T>) -> Result<Self> {
        if inputs.nrows() != targets.nrows() {
            return Err(Error::DimensionMismatch {
                context: "sample count of inputs and targets",
                expected: inputs.nrows(),
                got: targets.nrows(),
            });
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Zero-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

/// Evaluation-mode mean squared ℓ² loss over a whole sample set.
pub fn evaluate_loss<T: Real>(model: &Mlp<T>, inputs: ArrayView2<T>, targets: ArrayView2<T>) -> Result<f64> {
    const CHUNK: usize = 4096;
    let n = inputs.nrows();
    let mut total = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        let out = model.predict(inputs.slice(s![start..end, ..]))?;
        total += (&out - &targets.slice(s![start..end, ..]))
            .iter()
            .map(|v| v.f64() * v.f64())
            .sum::<f64>();
        start = end;
    }
    Ok(total / n.max(1) as f64)
}

/// Trains `model` in place with AdamW and shuffled mini-batches, keeping
/// the parameters with the lowest validation loss.
pub fn train<T: Real>(model: &mut Mlp<T>, train: &Samples<T>, val: &Samples<T>, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidInput("training and validation sets must be nonempty".into()));
    }
    for set in [train, val] {
        if set.inputs.ncols() != model.arch.n_in || set.targets.ncols() != model.arch.n_out {
            return Err(Error::ModelIncompatible(format!(
                "samples have {}→{} columns, network expects {}→{}",
                set.inputs.ncols(),
                set.targets.ncols(),
                model.arch.n_in,
                model.arch.n_out
            )));
        }
    }
    if cfg.fit_normalization {
        model.fit_input_normalization(train.inputs.view());
    }
    if cfg.scale_output {
        let ms = train.targets.iter().map(|v| v.f64() * v.f64()).sum::<f64>()
            / (train.targets.len().max(1)) as f64;
        model.output_scale = T::c(if ms.sqrt() > 1e-30 { ms.sqrt() } else { 1.0 });
    }

    let mut opt = AdamW::new(cfg.adam());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = TrainReport {
        best_val_loss: f64::INFINITY,
        lr: cfg.lr,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        ..Default::default()
    };
    let mut best = model.clone();

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        model.train_mode();
        let mut running = 0.0;
        let mut seen = 0usize;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            if idx.len() < 2 {
                continue;
            }
            let x = train.inputs.select(Axis(0), idx);
            let t = train.targets.select(Axis(0), idx);
            let (loss, grads) = model.loss_and_grad(x.view(), t.view())?;
            let loss = loss.f64();
            if !loss.is_finite() {
                return Err(Error::NanLoss {
                    epoch,
                    batch,
                    lr: cfg.lr,
                });
            }
            running += loss * idx.len() as f64;
            seen += idx.len();
            opt.step(model, &grads);
        }
        model.eval_mode();
        let train_loss = match cfg.train_loss {
            TrainLossMode::Running => running / seen.max(1) as f64,
            TrainLossMode::Evaluated => evaluate_loss(model, train.inputs.view(), train.targets.view())?,
        };
        let val_loss = evaluate_loss(model, val.inputs.view(), val.targets.view())?;
        if !val_loss.is_finite() {
            return Err(Error::NanLoss {
                epoch,
                batch: usize::MAX,
                lr: cfg.lr,
            });
        }
        report.train_loss.push(train_loss);
        report.val_loss.push(val_loss);
        if val_loss < report.best_val_loss {
            report.best_val_loss = val_loss;
            report.best_epoch = epoch;
            best = model.clone();
        }
    }
    *model = best;
    model.eval_mode();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::mlp::{Activation, Arch};
    use rand::Rng;

    fn linear_map(n: usize, seed: u64) -> Samples<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Array2::from_shape_fn((3, 4), |_| rng.gen_range(-1.0..1.0));
        let x = Array2::from_shape_fn((n, 4), |_| rng.gen_range(-1.0..1.0));
        let y = x.dot(&a.t());
        Samples::new(x, y).unwrap()
    }

    fn cfg(epochs: usize, mode: TrainLossMode) -> TrainConfig {
        TrainConfig {
            lr: 1e-2,
            batch_size: 32,
            max_epochs: epochs,
            seed: 5,
            weight_decay: 0.0,
            train_loss: mode,
            ..Default::default()
        }
    }

    #[test]
    fn overfits_small_linear_map() {
        let data = linear_map(32, 1);
        let mut m = Mlp::new(Arch::new(4, 32, 2, 3), Activation::Relu, 7);
        let r = train(&mut m, &data, &data, &cfg(200, TrainLossMode::Running)).unwrap();
        let first = r.train_loss[0];
        let best = r.train_loss.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(best < 1e-3 * first, "first {first} best {best}");
    }

    #[test]
    fn same_set_selects_train_minimizer() {
        let data = linear_map(32, 2);
        let mut m = Mlp::new(Arch::new(4, 16, 2, 3), Activation::Tanh, 3);
        let r = train(&mut m, &data, &data, &cfg(40, TrainLossMode::Evaluated)).unwrap();
        let argmin = r
            .train_loss
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmin, r.best_epoch);
        let kept = evaluate_loss(&m, data.inputs.view(), data.targets.view()).unwrap();
        assert_eq!(kept, r.best_val_loss);
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let data = linear_map(40, 3);
        let base = Mlp::new(Arch::new(4, 8, 2, 3), Activation::Relu, 1);
        let c = TrainConfig {
            batch_size: 8,
            ..cfg(5, TrainLossMode::Running)
        };
        let (mut a, mut b) = (base.clone(), base);
        let ra = train(&mut a, &data, &data, &c).unwrap();
        let rb = train(&mut b, &data, &data, &c).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a, b);
    }

    #[test]
    fn nan_loss_aborts_with_context() {
        let mut data = linear_map(8, 4);
        data.targets[[3, 1]] = f64::NAN;
        let mut m = Mlp::new(Arch::new(4, 8, 2, 3), Activation::Relu, 1);
        let c = TrainConfig {
            scale_output: false,
            ..cfg(3, TrainLossMode::Running)
        };
        match train(&mut m, &data, &data, &c) {
            Err(Error::NanLoss { epoch: 0, batch: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(TrainConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { max_epochs: 0, ..Default::default() }.validate().is_err());
    }
}
