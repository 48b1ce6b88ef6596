//! Experiment drivers behind the benchmark subcommands.
//!
//! Every random draw is derived from the master seed through
//! [`task_seed`], one stream per purpose, so reconstruction methods compared
//! in one run see exactly the same test states and the same sampled records.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use qtomo_core::dataio::{ResultRow, ResultsTable};
use qtomo_core::measurement::{
    build_projectors, depolarize, ideal_probabilities, sample_record, squared_difference,
    ProjectorSet,
};
use qtomo_core::mle::{reconstruct_mle, MleConfig};
use qtomo_core::nn::{
    generate_dataset, predict_density, train_from, EpochStats, ModelParams, NetworkConfig,
    Provenance, TrainingHistory,
};
use qtomo_core::qstate::{fidelity, haar_random_pure, DensityMatrix};
use qtomo_core::rng::{task_rng, task_seed};
use qtomo_core::{Error, MeasurementRecord, Result, Shots};
use serde::Serialize;

/// Stream indices under the master seed.
pub mod streams {
    pub const TRAIN_SET: u64 = 1;
    pub const VALIDATION_SET: u64 = 2;
    pub const TEST_STATES: u64 = 3;
    pub const TEST_RECORDS: u64 = 4;
    pub const MLE_STARTS: u64 = 5;
    pub const NOISE_CURVE: u64 = 6;
}

/// A reconstruction method as named on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Network trained on noiseless records.
    NnIdeal,
    /// Network trained on records sampled with this many shots.
    NnShots(u32),
    Mle,
}

pub const METHOD_GRAMMAR: &str = "nn-ideal | nn-shots:N | mle";

impl Method {
    /// Provenance of the training data for network methods.
    pub fn provenance(self) -> Option<Provenance> {
        match self {
            Method::NnIdeal => Some(Provenance::Ideal),
            Method::NnShots(n) => Some(Provenance::Shots(n)),
            Method::Mle => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::NnIdeal => f.write_str("nn-ideal"),
            Method::NnShots(n) => write!(f, "nn-shots:{n}"),
            Method::Mle => f.write_str("mle"),
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let bad = || format!("invalid method {s:?}; expected {METHOD_GRAMMAR}");
        match s {
            "nn-ideal" => Ok(Method::NnIdeal),
            "mle" => Ok(Method::Mle),
            _ => match s.strip_prefix("nn-shots:").map(str::parse::<u32>) {
                Some(Ok(n)) if n > 0 => Ok(Method::NnShots(n)),
                _ => Err(bad()),
            },
        }
    }
}

/// How one test condition reconstructs a record.
pub enum Reconstructor<'a> {
    Network(&'a ModelParams),
    Mle(&'a MleConfig),
}

/// Haar-random pure test states, state `i` drawn from its own stream.
pub fn test_states(qubits: usize, count: usize, seed: u64) -> Result<Vec<DensityMatrix>> {
    let master = task_seed(seed, streams::TEST_STATES);
    (0..count)
        .map(|i| Ok(haar_random_pure(qubits, &mut task_rng(master, i as u64))?.to_density()))
        .collect()
}

/// The noiseless record of each state and the record actually observed:
/// depolarized by `noise_p`, then sampled at `shots` per setting.
///
/// The sampling stream depends on the shots level and state index only, so
/// every method sees the same records.
pub fn test_records(
    states: &[DensityMatrix],
    proj: &ProjectorSet,
    shots: Shots,
    noise_p: f64,
    seed: u64,
) -> Result<Vec<(MeasurementRecord, MeasurementRecord)>> {
    let level = match shots {
        Shots::Ideal => 0,
        Shots::Finite(n) => u64::from(n),
    };
    let master = task_seed(task_seed(seed, streams::TEST_RECORDS), level);
    states
        .iter()
        .enumerate()
        .map(|(i, rho)| {
            let clean = ideal_probabilities(rho, proj)?;
            let noisy = if noise_p > 0.0 {
                ideal_probabilities(&depolarize(rho, noise_p)?, proj)?
            } else {
                clean.clone()
            };
            let observed = match shots {
                Shots::Ideal => noisy,
                Shots::Finite(n) => sample_record(&noisy, n, &mut task_rng(master, i as u64))?,
            };
            Ok((clean, observed))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSpec {
    pub train_count: usize,
    pub val_count: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            train_count: 4000,
            val_count: 200,
            epochs: NetworkConfig::defaults(1).epochs,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: ModelParams,
    pub history: TrainingHistory,
    /// Mean wall time per epoch, excluding validation.
    pub seconds_per_epoch: f64,
}

/// Generates training and validation sets with `provenance` and trains the
/// default network for `qubits` on them.
pub fn train_inline(
    qubits: usize,
    provenance: Provenance,
    spec: &TrainSpec,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainedModel> {
    let train = generate_dataset(
        spec.train_count,
        qubits,
        provenance,
        task_seed(spec.seed, streams::TRAIN_SET),
    )?;
    let val = generate_dataset(
        spec.val_count,
        qubits,
        provenance,
        task_seed(spec.seed, streams::VALIDATION_SET),
    )?;
    let config = NetworkConfig {
        epochs: spec.epochs,
        seed: spec.seed,
        ..NetworkConfig::defaults(qubits)
    };
    let mut model = ModelParams::init(&config)?;
    let history = train_from(&mut model, &train, &val, on_epoch)?;
    let seconds_per_epoch = if history.is_empty() {
        0.0
    } else {
        history.iter().map(|s| s.seconds).sum::<f64>() / history.len() as f64
    };
    Ok(TrainedModel {
        model,
        history,
        seconds_per_epoch,
    })
}

/// Squared difference between a sampled record and its noiseless record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SquaredDifferenceRow {
    pub d: usize,
    pub shots: String,
    pub noise_p: f64,
    pub state_index: usize,
    pub squared_difference: f64,
    pub seed: u64,
}

/// One test condition: a qubit count, a shots level and a noise strength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Condition {
    pub qubits: usize,
    pub shots: Shots,
    pub noise_p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub states: usize,
    pub seed: u64,
    /// When false, wall times are written as zero so outputs are
    /// byte-reproducible.
    pub timing: bool,
    pub mle: MleConfig,
}

/// Reconstructs the test set under `condition` with each method, appending
/// one row per (method, state) to `table` and one squared-difference row per
/// state to `sqdiff`.
pub fn run_condition(
    condition: Condition,
    methods: &[(String, Reconstructor<'_>)],
    options: &BenchOptions,
    table: &mut ResultsTable,
    sqdiff: &mut Vec<SquaredDifferenceRow>,
) -> Result<()> {
    let Condition {
        qubits,
        shots,
        noise_p,
    } = condition;
    let proj = build_projectors(qubits)?;
    let states = test_states(qubits, options.states, options.seed)?;
    let records = test_records(&states, &proj, shots, noise_p, options.seed)?;
    for (i, (clean, observed)) in records.iter().enumerate() {
        sqdiff.push(SquaredDifferenceRow {
            d: qubits,
            shots: shots.to_string(),
            noise_p,
            state_index: i,
            squared_difference: squared_difference(observed, clean)?,
            seed: options.seed,
        });
    }

    let mle_master = task_seed(options.seed, streams::MLE_STARTS);
    for (name, method) in methods {
        for (i, ((_, observed), target)) in records.iter().zip(&states).enumerate() {
            let start = Instant::now();
            let rho = match method {
                Reconstructor::Network(model) => predict_density(model, observed)?,
                Reconstructor::Mle(config) => {
                    reconstruct_mle(observed, &proj, config, &mut task_rng(mle_master, i as u64))?
                        .rho
                }
            };
            let elapsed = start.elapsed().as_secs_f64();
            table.rows.push(ResultRow {
                method: name.clone(),
                d: qubits,
                shots,
                noise_p,
                state_index: i,
                fidelity: fidelity(target, &rho)?.clamp(0.0, 1.0),
                wall_time_s: if options.timing { elapsed } else { 0.0 },
                seed: options.seed,
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseCurvePoint {
    pub shots: u32,
    pub mean_squared_difference: f64,
    pub samples: usize,
}

/// Mean squared difference between sampled and ideal records for each shots
/// level, averaged over `states` Haar states times `repeats` sampling seeds.
pub fn noise_curve(
    qubits: usize,
    shots: &[u32],
    states: usize,
    repeats: usize,
    seed: u64,
) -> Result<Vec<NoiseCurvePoint>> {
    if states == 0 || repeats == 0 {
        return Err(Error::InvalidArgument(
            "noise curve needs at least one state and one repeat".into(),
        ));
    }
    let proj = build_projectors(qubits)?;
    let ideal: Vec<MeasurementRecord> = test_states(qubits, states, seed)?
        .iter()
        .map(|rho| ideal_probabilities(rho, &proj))
        .collect::<Result<_>>()?;
    let base = task_seed(seed, streams::NOISE_CURVE);
    shots
        .iter()
        .map(|&n| {
            let master = task_seed(base, u64::from(n));
            let mut total = 0.0;
            for (i, rec) in ideal.iter().enumerate() {
                for r in 0..repeats {
                    let mut rng = task_rng(master, (i * repeats + r) as u64);
                    total += squared_difference(&sample_record(rec, n, &mut rng)?, rec)?;
                }
            }
            let samples = states * repeats;
            Ok(NoiseCurvePoint {
                shots: n,
                mean_squared_difference: total / samples as f64,
                samples,
            })
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = logs.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Mean fidelity and mean wall time per (method, d, shots, noise) group, in
/// table order.
pub fn summarize(table: &ResultsTable) -> Vec<(String, usize, Shots, f64, f64, f64)> {
    let mut groups: Vec<(String, usize, Shots, f64, f64, f64, usize)> = Vec::new();
    for r in &table.rows {
        match groups
            .iter_mut()
            .find(|g| g.0 == r.method && g.1 == r.d && g.2 == r.shots && g.3 == r.noise_p)
        {
            Some(g) => {
                g.4 += r.fidelity;
                g.5 += r.wall_time_s;
                g.6 += 1;
            }
            None => groups.push((
                r.method.clone(),
                r.d,
                r.shots,
                r.noise_p,
                r.fidelity,
                r.wall_time_s,
                1,
            )),
        }
    }
    groups
        .into_iter()
        .map(|(m, d, s, p, f, t, n)| (m, d, s, p, f / n as f64, t / n as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in [Method::NnIdeal, Method::NnShots(15), Method::Mle] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("nn-shots:0".parse::<Method>().is_err());
        assert!("nn".parse::<Method>().is_err());
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [1.0, 10.0, 100.0].iter().map(|&x| (x, 3.0 / x)).collect();
        assert!((loglog_slope(&pts) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn records_are_shared_across_calls() {
        let proj = build_projectors(1).unwrap();
        let states = test_states(1, 3, 9).unwrap();
        let a = test_records(&states, &proj, Shots::Finite(15), 0.0, 9).unwrap();
        let b = test_records(&states, &proj, Shots::Finite(15), 0.0, 9).unwrap();
        assert_eq!(a, b);
        let c = test_records(&states, &proj, Shots::Finite(16), 0.0, 9).unwrap();
        assert_ne!(a[0].1, c[0].1);
    }

    #[test]
    fn ideal_condition_has_zero_squared_difference() {
        let proj = build_projectors(2).unwrap();
        let states = test_states(2, 2, 1).unwrap();
        for (clean, observed) in test_records(&states, &proj, Shots::Ideal, 0.0, 1).unwrap() {
            assert_eq!(squared_difference(&clean, &observed).unwrap(), 0.0);
        }
    }
}
