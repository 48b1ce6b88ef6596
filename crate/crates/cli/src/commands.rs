use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use qtomo_core::dataio::{
    csv_text, load_dataset, load_density, load_model, load_record, save_dataset, save_density,
    save_model, save_record, write_atomic, write_results, ResultsTable,
};
use qtomo_core::measurement::{
    build_projectors, default_depolarizing, depolarize, ideal_probabilities, sample_record,
};
use qtomo_core::mle::{reconstruct_mle, MleConfig};
use qtomo_core::nn::{
    generate_dataset, predict_density, train_from, ModelParams, NetworkConfig, Provenance,
};
use qtomo_core::qstate::{fidelity, haar_random_pure, DensityMatrix, PureState};
use qtomo_core::rng::seeded;
use qtomo_core::{Error, MeasurementRecord, Shots};
use serde::Serialize;

use crate::args::*;
use crate::harness::{
    loglog_slope, noise_curve, run_condition, summarize, train_inline, BenchOptions, Condition,
    Method, Reconstructor, TrainSpec, TrainedModel,
};
use crate::CliError;

type Out<'a> = &'a mut dyn Write;
type CmdResult = Result<(), CliError>;

/// `results.csv` -> `results.<tag>.csv` in the same directory.
pub fn companion_path(path: &Path, tag: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{tag}.csv"))
}

fn write_csv<T: Serialize>(rows: &[T], header: &str, path: &Path) -> Result<(), Error> {
    let text = if rows.is_empty() {
        format!("{header}\n")
    } else {
        csv_text(rows)?
    };
    write_atomic(path, text.as_bytes())
}

fn shots_of(provenance: Provenance) -> Shots {
    match provenance {
        Provenance::Ideal => Shots::Ideal,
        Provenance::Shots(n) | Provenance::Depolarized { shots: n, .. } => Shots::Finite(n),
    }
}

pub fn gen_data(args: &GenDataArgs, out: Out) -> CmdResult {
    writeln!(out, "seed: {}", args.seed)?;
    let data = generate_dataset(args.count, args.qubits, args.provenance, args.seed)?;
    save_dataset(&data, &args.out)?;
    writeln!(
        out,
        "wrote {} samples (d = {}, provenance {}) to {}",
        data.len(),
        args.qubits,
        args.provenance,
        args.out.display()
    )?;
    Ok(())
}

pub fn gen_record(args: &GenRecordArgs, out: Out) -> CmdResult {
    writeln!(out, "seed: {}", args.seed)?;
    let mut rng = seeded(args.seed);
    let rho = match args.state {
        StateSpec::Haar => haar_random_pure(args.qubits, &mut rng)?.to_density(),
        StateSpec::Mixed => DensityMatrix::maximally_mixed(args.qubits)?,
        StateSpec::Basis(k) => PureState::basis(args.qubits, k)?.to_density(),
    };
    let proj = build_projectors(args.qubits)?;
    let ideal = ideal_probabilities(&depolarize(&rho, args.noise)?, &proj)?;
    let record = match args.shots {
        Shots::Ideal => ideal,
        Shots::Finite(n) => sample_record(&ideal, n, &mut rng)?,
    };
    save_record(&record, &args.out)?;
    writeln!(
        out,
        "wrote record (d = {}, shots {}) to {}",
        args.qubits,
        args.shots,
        args.out.display()
    )?;
    if let Some(path) = &args.state_out {
        save_density(&rho, path)?;
        writeln!(out, "wrote state to {}", path.display())?;
    }
    Ok(())
}

pub fn train(args: &TrainArgs, out: Out) -> CmdResult {
    writeln!(out, "seed: {}", args.seed)?;
    let train = load_dataset(&args.train)?;
    let val = load_dataset(&args.val)?;
    if train.qubits != val.qubits {
        return Err(Error::InvalidArgument(format!(
            "training set {} has d = {} but validation set {} has d = {}",
            args.train.display(),
            train.qubits,
            args.val.display(),
            val.qubits
        ))
        .into());
    }
    let defaults = NetworkConfig::defaults(train.qubits);
    let config = NetworkConfig {
        epochs: args.epochs.unwrap_or(defaults.epochs),
        seed: args.seed,
        learning_rate: args.learning_rate.unwrap_or(defaults.learning_rate),
        batch_size: args.batch_size.unwrap_or(defaults.batch_size),
        dropout_rate: args.dropout.unwrap_or(defaults.dropout_rate),
        conv1_filters: args.conv1_filters.unwrap_or(defaults.conv1_filters),
        conv2_filters: args.conv2_filters.unwrap_or(defaults.conv2_filters),
        kernel_size: args.kernel_size.unwrap_or(defaults.kernel_size),
        pool_size: args.pool_size.unwrap_or(defaults.pool_size),
        dense1_units: args.dense1_units.unwrap_or(defaults.dense1_units),
        dense2_units: args.dense2_units.unwrap_or(defaults.dense2_units),
        ..defaults
    };
    let mut model = ModelParams::init(&config)?;
    writeln!(
        out,
        "training d = {} network ({} parameters) on {} samples for {} epochs",
        config.qubits,
        model.parameter_count(),
        train.len(),
        config.epochs
    )?;
    writeln!(out, "epoch,loss,val_fidelity")?;
    let mut io_result = Ok(());
    let history = train_from(&mut model, &train, &val, |s| {
        if io_result.is_ok() {
            io_result = writeln!(
                out,
                "{},{:.6e},{:.6}",
                s.epoch, s.train_loss, s.val_fidelity
            );
        }
    })?;
    io_result?;
    save_model(&model, &history, &args.out)?;
    writeln!(out, "wrote checkpoint to {}", args.out.display())?;
    Ok(())
}

fn bench_options(output: &BenchOutputArgs) -> BenchOptions {
    BenchOptions {
        states: output.states,
        seed: output.seed,
        timing: !output.no_timing,
        mle: MleConfig {
            restarts: output.restarts,
            ..MleConfig::default()
        },
    }
}

fn train_for_bench(
    qubits: usize,
    method: Method,
    training: &InlineTrainingArgs,
    seed: u64,
    out: Out,
) -> Result<TrainedModel, CliError> {
    let provenance = method.provenance().expect("network method");
    let spec = TrainSpec {
        train_count: training.train_count,
        val_count: training.val_count,
        epochs: training
            .epochs
            .unwrap_or(NetworkConfig::defaults(qubits).epochs),
        seed,
    };
    writeln!(
        out,
        "training {method} for d = {qubits}: {} samples ({provenance}), {} epochs",
        spec.train_count, spec.epochs
    )?;
    let trained = train_inline(qubits, provenance, &spec, |_| {})?;
    let final_fid = trained.history.last().map_or(f64::NAN, |s| s.val_fidelity);
    writeln!(
        out,
        "  {:.4} s/epoch, final val_fidelity {final_fid:.4}",
        trained.seconds_per_epoch
    )?;
    Ok(trained)
}

#[derive(Serialize)]
struct TrainingTimeRow {
    d: usize,
    method: String,
    train_count: usize,
    epochs: usize,
    seconds_per_epoch: f64,
    final_val_fidelity: f64,
}

const TRAINING_HEADER: &str = "d,method,train_count,epochs,seconds_per_epoch,final_val_fidelity";
const SQDIFF_HEADER: &str = "d,shots,noise_p,state_index,squared_difference,seed";

fn print_summary(table: &ResultsTable, out: Out) -> CmdResult {
    writeln!(out, "method,d,shots,noise_p,mean_fidelity,mean_wall_time_s")?;
    for (method, d, shots, p, fid, time) in summarize(table) {
        writeln!(out, "{method},{d},{shots},{p},{fid:.6},{time:.3e}")?;
    }
    Ok(())
}

pub fn bench_scaling(args: &BenchScalingArgs, out: Out) -> CmdResult {
    let options = bench_options(&args.output);
    writeln!(out, "seed: {}", options.seed)?;

    let mut models = BTreeMap::new();
    let mut training_rows = Vec::new();
    if args.training.train_inline {
        for &d in &args.qubits {
            let trained = train_for_bench(d, Method::NnIdeal, &args.training, options.seed, out)?;
            training_rows.push(TrainingTimeRow {
                d,
                method: Method::NnIdeal.to_string(),
                train_count: args.training.train_count,
                epochs: trained.history.len(),
                seconds_per_epoch: if options.timing {
                    trained.seconds_per_epoch
                } else {
                    0.0
                },
                final_val_fidelity: trained.history.last().map_or(0.0, |s| s.val_fidelity),
            });
            models.insert(d, trained.model);
        }
    } else {
        for path in &args.checkpoints {
            let model = load_model(path)?.model;
            models.insert(model.qubits(), model);
        }
        let missing: Vec<String> = args
            .qubits
            .iter()
            .filter(|d| !models.contains_key(d))
            .map(|d| d.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no checkpoint for d = {}; pass --checkpoint for each or use --train-inline",
                missing.join(", ")
            ))
            .into());
        }
    }

    let mut table = ResultsTable::new("bench-scaling");
    let mut sqdiff = Vec::new();
    for &d in &args.qubits {
        let methods = [(
            Method::NnIdeal.to_string(),
            Reconstructor::Network(&models[&d]),
        )];
        for scenario in &args.scenarios {
            let condition = match scenario {
                Scenario::Ideal => Condition {
                    qubits: d,
                    shots: Shots::Ideal,
                    noise_p: 0.0,
                },
                Scenario::Depol => Condition {
                    qubits: d,
                    shots: Shots::Finite(args.shots),
                    noise_p: args.noise.unwrap_or_else(|| default_depolarizing(d)),
                },
            };
            run_condition(condition, &methods, &options, &mut table, &mut sqdiff)?;
        }
    }
    write_results(&table, &args.output.out)?;
    writeln!(
        out,
        "wrote {} rows to {}",
        table.rows.len(),
        args.output.out.display()
    )?;
    if !training_rows.is_empty() {
        let path = companion_path(&args.output.out, "training");
        write_csv(&training_rows, TRAINING_HEADER, &path)?;
        writeln!(out, "wrote training times to {}", path.display())?;
    }
    print_summary(&table, out)
}

pub fn bench_shots(args: &BenchShotsArgs, out: Out) -> CmdResult {
    let options = bench_options(&args.output);
    writeln!(out, "seed: {}", options.seed)?;

    let mut models: BTreeMap<Method, ModelParams> = BTreeMap::new();
    for (method, path) in &args.models {
        if args.methods.contains(method) {
            models.insert(*method, load_model(path)?.model);
        }
    }
    for &method in &args.methods {
        if method == Method::Mle || models.contains_key(&method) {
            continue;
        }
        if !args.training.train_inline {
            return Err(Error::InvalidArgument(format!(
                "method {method} unavailable: pass --model {method}=PATH or --train-inline"
            ))
            .into());
        }
        let trained = train_for_bench(args.qubits, method, &args.training, options.seed, out)?;
        models.insert(method, trained.model);
    }
    for (method, model) in &models {
        if model.qubits() != args.qubits {
            return Err(Error::InvalidArgument(format!(
                "model for {method} expects d = {}, benchmark uses d = {}",
                model.qubits(),
                args.qubits
            ))
            .into());
        }
    }

    let methods: Vec<(String, Reconstructor)> = args
        .methods
        .iter()
        .map(|m| {
            let r = match m {
                Method::Mle => Reconstructor::Mle(&options.mle),
                nn => Reconstructor::Network(&models[nn]),
            };
            (m.to_string(), r)
        })
        .collect();

    let mut table = ResultsTable::new("bench-shots");
    let mut sqdiff = Vec::new();
    for &shots in &args.shots {
        let condition = Condition {
            qubits: args.qubits,
            shots,
            noise_p: args.noise,
        };
        run_condition(condition, &methods, &options, &mut table, &mut sqdiff)?;
    }
    write_results(&table, &args.output.out)?;
    let sq_path = args
        .sqdiff_out
        .clone()
        .unwrap_or_else(|| companion_path(&args.output.out, "sqdiff"));
    write_csv(&sqdiff, SQDIFF_HEADER, &sq_path)?;
    writeln!(
        out,
        "wrote {} rows to {}",
        table.rows.len(),
        args.output.out.display()
    )?;
    writeln!(out, "wrote squared differences to {}", sq_path.display())?;
    print_summary(&table, out)?;
    writeln!(out, "shots,mean_squared_difference")?;
    for &shots in &args.shots {
        let level = shots.to_string();
        let vals: Vec<f64> = sqdiff
            .iter()
            .filter(|r| r.shots == level)
            .map(|r| r.squared_difference)
            .collect();
        if !vals.is_empty() {
            writeln!(
                out,
                "{shots},{:.6e}",
                vals.iter().sum::<f64>() / vals.len() as f64
            )?;
        }
    }
    Ok(())
}

pub fn noise_curve_cmd(args: &NoiseCurveArgs, out: Out) -> CmdResult {
    writeln!(out, "seed: {}", args.seed)?;
    if args.shots.contains(&0) {
        return Err(CliError::Usage("--shots values must be positive".into()));
    }
    let points = noise_curve(
        args.qubits,
        &args.shots,
        args.states,
        args.repeats,
        args.seed,
    )?;
    write_csv(&points, "shots,mean_squared_difference,samples", &args.out)?;
    writeln!(out, "shots,mean_squared_difference")?;
    for p in &points {
        writeln!(out, "{},{:.6e}", p.shots, p.mean_squared_difference)?;
    }
    if points.len() >= 2 {
        let xy: Vec<(f64, f64)> = points
            .iter()
            .map(|p| (f64::from(p.shots), p.mean_squared_difference))
            .collect();
        writeln!(out, "log-log slope: {:.4}", loglog_slope(&xy))?;
    }
    writeln!(out, "wrote {}", args.out.display())?;
    Ok(())
}

pub fn reconstruct(args: &ReconstructArgs, out: Out) -> CmdResult {
    writeln!(out, "seed: {}", args.seed)?;
    let (record, stored_state) = match (&args.record, &args.dataset) {
        (Some(path), _) => (load_record(path)?, None),
        (None, Some(path)) => {
            let data = load_dataset(path)?;
            let sample = data.samples.get(args.index).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "index {} out of range: {} has {} samples",
                    args.index,
                    path.display(),
                    data.len()
                ))
            })?;
            let record =
                MeasurementRecord::new(shots_of(data.provenance), sample.measurements.clone())
                    .map_err(|e| Error::Parse {
                        path: path.clone(),
                        line: args.index + 2,
                        message: e.to_string(),
                    })?;
            (record, sample.rho.clone())
        }
        (None, None) => return Err(CliError::Usage("pass --record or --dataset".into())),
    };

    let proj = build_projectors(record.qubits())?;
    let rho = match args.method {
        ReconstructMethod::Mle => {
            let config = MleConfig {
                restarts: args.restarts,
                ..MleConfig::default()
            };
            let result = reconstruct_mle(&record, &proj, &config, &mut seeded(args.seed))?;
            writeln!(
                out,
                "mle: nll {:.6e}, {} iterations, converged {}",
                result.nll, result.iterations, result.converged
            )?;
            result.rho
        }
        ReconstructMethod::Nn => {
            let path = args
                .model
                .as_ref()
                .ok_or_else(|| CliError::Usage("--method nn needs --model".into()))?;
            predict_density(&load_model(path)?.model, &record)?
        }
    };

    let m = rho.matrix();
    for (label, part) in [("re", 0), ("im", 1)] {
        writeln!(out, "{label}:")?;
        for r in 0..m.nrows() {
            let row: Vec<String> = (0..m.ncols())
                .map(|c| {
                    let z = m[(r, c)];
                    format!("{:>12.8}", if part == 0 { z.re } else { z.im })
                })
                .collect();
            writeln!(out, "{}", row.join(" "))?;
        }
    }
    let target = match &args.target {
        Some(path) => Some(load_density(path)?),
        None => stored_state,
    };
    if let Some(target) = target {
        writeln!(out, "fidelity: {:.8}", fidelity(&target, &rho)?)?;
    }
    if let Some(path) = &args.out {
        save_density(&rho, path)?;
        writeln!(out, "wrote state to {}", path.display())?;
    }
    Ok(())
}
