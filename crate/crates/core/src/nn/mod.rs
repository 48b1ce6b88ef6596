//! The learned reconstructor.
//!
//! A 1-D convolutional network reads the `6^d` measurement vector in
//! canonical order and predicts the `4^d` tau vector:
//!
//! ```text
//! conv(k, same) -> ReLU -> max-pool -> conv(k, same) -> ReLU -> flatten
//!   -> dense -> ReLU -> dropout -> dense -> ReLU -> dropout -> dense (tau)
//!   -> tau-to-density head (no parameters, evaluation only)
//! ```
//!
//! Training minimizes the MSE against target tau vectors with Adagrad.

mod dataset;
mod network;

use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use dataset::{generate_dataset, Dataset, Provenance, Sample, PROVENANCE_GRAMMAR};
pub use network::{
    adagrad_step, backward, Gradients, ModelParams, Tensor, ADAGRAD_EPS, PARAMETER_NAMES,
};

use crate::measurement::MeasurementRecord;
use crate::qstate::{density_from_tau, fidelity, DensityMatrix, TauVector};
use crate::rng::{seeded, task_seed};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub qubits: usize,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub kernel_size: usize,
    pub pool_size: usize,
    pub dense1_units: usize,
    pub dense2_units: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl NetworkConfig {
    /// Per-size defaults; layer widths grow with the qubit count.
    pub fn defaults(qubits: usize) -> Self {
        let (conv1, conv2, dense1, dense2) = match qubits {
            0 | 1 => (8, 16, 64, 32),
            2 => (16, 32, 128, 64),
            3 => (16, 32, 256, 128),
            _ => (32, 64, 512, 256),
        };
        Self {
            qubits,
            conv1_filters: conv1,
            conv2_filters: conv2,
            kernel_size: 3,
            pool_size: 2,
            dense1_units: dense1,
            dense2_units: dense2,
            dropout_rate: 0.2,
            learning_rate: 0.01,
            batch_size: 4,
            epochs: 60,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.qubits < 1 {
            return Err(Error::InvalidDimension(self.qubits));
        }
        let sizes = [
            ("conv1_filters", self.conv1_filters),
            ("conv2_filters", self.conv2_filters),
            ("kernel_size", self.kernel_size),
            ("pool_size", self.pool_size),
            ("dense1_units", self.dense1_units),
            ("dense2_units", self.dense2_units),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v < 1) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// One stage of the network, with its output shape.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv1d {
        in_channels: usize,
        filters: usize,
        kernel: usize,
        length: usize,
    },
    MaxPool {
        channels: usize,
        pool: usize,
        length: usize,
    },
    Flatten {
        size: usize,
    },
    Dense {
        inputs: usize,
        units: usize,
        relu: bool,
    },
    Dropout {
        rate: f64,
        size: usize,
    },
    DensityHead {
        tau_len: usize,
        dim: usize,
    },
}

impl Layer {
    pub fn trainable_parameters(&self) -> usize {
        match *self {
            Layer::Conv1d {
                in_channels,
                filters,
                kernel,
                ..
            } => filters * in_channels * kernel + filters,
            Layer::Dense { inputs, units, .. } => inputs * units + units,
            _ => 0,
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Layer::Conv1d {
                filters,
                kernel,
                length,
                ..
            } => write!(
                f,
                "conv1d(filters={filters}, kernel={kernel}, relu) -> {filters}x{length}"
            ),
            Layer::MaxPool {
                channels,
                pool,
                length,
            } => write!(f, "maxpool({pool}) -> {channels}x{length}"),
            Layer::Flatten { size } => write!(f, "flatten -> {size}"),
            Layer::Dense { units, relu, .. } => {
                write!(
                    f,
                    "dense({units}{}) -> {units}",
                    if *relu { ", relu" } else { "" }
                )
            }
            Layer::Dropout { rate, size } => write!(f, "dropout({rate}) -> {size}"),
            Layer::DensityHead { dim, .. } => write!(f, "tau->rho head -> {dim}x{dim}"),
        }
    }
}

/// The layer sequence for `config`, from the `6^d` input to the density head.
pub fn architecture(config: &NetworkConfig) -> Result<Vec<Layer>> {
    config.validate()?;
    let input = 6usize.pow(config.qubits as u32);
    let pooled = input / config.pool_size;
    if pooled < config.kernel_size {
        return Err(Error::Config(format!(
            "pooled length {pooled} is shorter than kernel size {}",
            config.kernel_size
        )));
    }
    let out = 4usize.pow(config.qubits as u32);
    let flat = config.conv2_filters * pooled;
    Ok(vec![
        Layer::Conv1d {
            in_channels: 1,
            filters: config.conv1_filters,
            kernel: config.kernel_size,
            length: input,
        },
        Layer::MaxPool {
            channels: config.conv1_filters,
            pool: config.pool_size,
            length: pooled,
        },
        Layer::Conv1d {
            in_channels: config.conv1_filters,
            filters: config.conv2_filters,
            kernel: config.kernel_size,
            length: pooled,
        },
        Layer::Flatten { size: flat },
        Layer::Dense {
            inputs: flat,
            units: config.dense1_units,
            relu: true,
        },
        Layer::Dropout {
            rate: config.dropout_rate,
            size: config.dense1_units,
        },
        Layer::Dense {
            inputs: config.dense1_units,
            units: config.dense2_units,
            relu: true,
        },
        Layer::Dropout {
            rate: config.dropout_rate,
            size: config.dense2_units,
        },
        Layer::Dense {
            inputs: config.dense2_units,
            units: out,
            relu: false,
        },
        Layer::DensityHead {
            tau_len: out,
            dim: 1 << config.qubits,
        },
    ])
}

/// Mean of squared componentwise differences.
pub fn loss_mse(predicted: &[f64], target: &[f64]) -> Result<f64> {
    if predicted.len() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: target.len(),
            actual: predicted.len(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::InvalidArgument("empty vectors".into()));
    }
    let sum: f64 = predicted
        .iter()
        .zip(target)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / predicted.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_fidelity: f64,
    pub seconds: f64,
}

pub type TrainingHistory = Vec<EpochStats>;

/// Trains a freshly initialized network on `dataset`.
///
/// Each epoch shuffles the samples, steps Adagrad once per minibatch, and
/// records the mean training loss and the mean validation fidelity through
/// the density head. With `epochs = 0` the initialized model is returned.
pub fn train(
    dataset: &Dataset,
    validation: &Dataset,
    config: &NetworkConfig,
) -> Result<(ModelParams, TrainingHistory)> {
    let mut model = ModelParams::init(config)?;
    let history = train_from(&mut model, dataset, validation, |_| {})?;
    Ok((model, history))
}

/// Continues training `model` for `model.config.epochs` epochs, calling
/// `on_epoch` after each one.
pub fn train_from(
    model: &mut ModelParams,
    dataset: &Dataset,
    validation: &Dataset,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainingHistory> {
    let config = model.config.clone();
    config.validate()?;
    if dataset.samples.is_empty() || validation.samples.is_empty() {
        return Err(Error::InvalidArgument(
            "training and validation sets must be non-empty".into(),
        ));
    }
    for (name, d) in [
        ("training", dataset.qubits),
        ("validation", validation.qubits),
    ] {
        if d != config.qubits {
            return Err(Error::InvalidArgument(format!(
                "{name} set has {d} qubits but the network expects {}",
                config.qubits
            )));
        }
    }

    let val_targets = validation.target_states()?;
    let mut rng = seeded(task_seed(config.seed, 1));
    let mut order: Vec<usize> = (0..dataset.samples.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&[f64], &[f64])> = chunk
                .iter()
                .map(|&i| {
                    let s = &dataset.samples[i];
                    (s.measurements.as_slice(), s.target_tau.as_slice())
                })
                .collect();
            let (loss, grads) = backward(model, &batch, Some(&mut rng))
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}: training diverged ({e})")))?;
            loss_sum += loss * chunk.len() as f64;
            adagrad_step(model, &grads, config.learning_rate)?;
        }
        let train_loss = loss_sum / dataset.samples.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::NonFinite(format!("epoch {epoch}: training loss")));
        }
        let seconds = start.elapsed().as_secs_f64();
        let val_fidelity = mean_fidelity(model, validation, &val_targets)?;
        let stats = EpochStats {
            epoch,
            train_loss,
            val_fidelity,
            seconds,
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(history)
}

fn mean_fidelity(model: &ModelParams, data: &Dataset, targets: &[DensityMatrix]) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot evaluate on an empty dataset".into(),
        ));
    }
    let mut total = 0.0;
    for (sample, target) in data.samples.iter().zip(targets) {
        let rho = predict_from_values(model, &sample.measurements)?;
        total += fidelity(target, &rho)?;
    }
    Ok(total / targets.len() as f64)
}

/// Mean fidelity of the network's predictions against the dataset targets.
pub fn evaluate(model: &ModelParams, data: &Dataset) -> Result<f64> {
    mean_fidelity(model, data, &data.target_states()?)
}

/// Inference-mode tau prediction.
pub fn predict_tau(model: &ModelParams, record: &MeasurementRecord) -> Result<Vec<f64>> {
    check_record(model, record)?;
    model.forward(record.values(), None)
}

/// Inference-mode forward pass followed by the tau-to-density head.
pub fn predict_density(model: &ModelParams, record: &MeasurementRecord) -> Result<DensityMatrix> {
    check_record(model, record)?;
    predict_from_values(model, record.values())
}

fn check_record(model: &ModelParams, record: &MeasurementRecord) -> Result<()> {
    if record.qubits() != model.qubits() {
        return Err(Error::DimensionMismatch {
            expected: model.qubits(),
            actual: record.qubits(),
        });
    }
    Ok(())
}

fn predict_from_values(model: &ModelParams, values: &[f64]) -> Result<DensityMatrix> {
    let tau = model.forward(values, None)?;
    density_head(tau)
}

/// The parameter-free tau-to-density head. An all-zero prediction maps to
/// the maximally mixed state.
fn density_head(tau: Vec<f64>) -> Result<DensityMatrix> {
    let tau = TauVector::new(tau)?;
    match density_from_tau(&tau) {
        Err(Error::DegenerateParameter) => DensityMatrix::maximally_mixed(tau.qubits()),
        other => other,
    }
}
