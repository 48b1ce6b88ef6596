use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qtomo_core::nn::{Provenance, PROVENANCE_GRAMMAR};
use qtomo_core::Shots;

use crate::harness::Method;

pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug, Parser)]
#[command(
    name = "qtomo",
    version,
    about = "Simulated quantum state tomography: datasets, training, and reconstruction benchmarks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate random states and write a JSON-lines dataset.
    GenData(GenDataArgs),
    /// Simulate one state and write its measurement record.
    GenRecord(GenRecordArgs),
    /// Train a network on a dataset and write a checkpoint.
    Train(TrainArgs),
    /// Network fidelity and inference time across qubit counts.
    BenchScaling(BenchScalingArgs),
    /// Fidelity of each method across shot counts.
    BenchShots(BenchShotsArgs),
    /// Mean squared difference between sampled and ideal records vs shots.
    NoiseCurve(NoiseCurveArgs),
    /// Reconstruct a single record and print the density matrix.
    Reconstruct(ReconstructArgs),
}

fn qubits_arg() -> clap::builder::RangedU64ValueParser<usize> {
    clap::builder::RangedU64ValueParser::<usize>::new().range(1..=6)
}

fn parse_provenance(s: &str) -> Result<Provenance, String> {
    s.parse()
        .map_err(|_| format!("expected {PROVENANCE_GRAMMAR}"))
}

pub(crate) fn parse_shots(s: &str) -> Result<Shots, String> {
    match s {
        "ideal" => Ok(Shots::Ideal),
        _ => match s.parse::<u32>() {
            Ok(n) if n > 0 => Ok(Shots::Finite(n)),
            _ => Err(format!(
                "invalid shots {s:?}; expected a positive integer or \"ideal\""
            )),
        },
    }
}

fn parse_noise(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(p) if (0.0..=1.0).contains(&p) => Ok(p),
        _ => Err(format!(
            "invalid noise parameter {s:?}; expected a number in [0, 1]"
        )),
    }
}

/// Accepts `A..B` (inclusive), a comma list, or a single count.
fn parse_qubit_range(s: &str) -> Result<Vec<usize>, String> {
    let one = |t: &str| match t.trim().parse::<usize>() {
        Ok(d) if (1..=6).contains(&d) => Ok(d),
        _ => Err(format!("invalid qubit count {t:?}; expected 1 to 6")),
    };
    let qubits: Vec<usize> = match s.split_once("..") {
        Some((a, b)) => {
            let (a, b) = (one(a)?, one(b.trim_start_matches('='))?);
            if a > b {
                return Err(format!("empty qubit range {s:?}"));
            }
            (a..=b).collect()
        }
        None => s.split(',').map(one).collect::<Result<_, _>>()?,
    };
    Ok(qubits)
}

fn parse_model_entry(s: &str) -> Result<(Method, PathBuf), String> {
    let (method, path) = s
        .split_once('=')
        .ok_or_else(|| format!("expected METHOD=PATH, got {s:?}"))?;
    let method: Method = method.parse()?;
    if method == Method::Mle {
        return Err("mle does not take a model".into());
    }
    Ok((method, PathBuf::from(path)))
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, value_parser = qubits_arg())]
    pub qubits: usize,
    #[arg(long)]
    pub count: usize,
    /// ideal | shots:K | depol:P+shots:K
    #[arg(long, value_parser = parse_provenance)]
    pub provenance: Provenance,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StateSpec {
    Haar,
    Mixed,
    Basis(usize),
}

fn parse_state(s: &str) -> Result<StateSpec, String> {
    match s {
        "haar" => Ok(StateSpec::Haar),
        "mixed" => Ok(StateSpec::Mixed),
        _ => s
            .strip_prefix("basis:")
            .and_then(|k| k.parse().ok())
            .map(StateSpec::Basis)
            .ok_or_else(|| format!("invalid state {s:?}; expected haar | mixed | basis:K")),
    }
}

#[derive(Debug, Args)]
pub struct GenRecordArgs {
    #[arg(long, value_parser = qubits_arg())]
    pub qubits: usize,
    /// haar | mixed | basis:K
    #[arg(long, value_parser = parse_state, default_value = "haar")]
    pub state: StateSpec,
    /// Shots per setting, or "ideal".
    #[arg(long, value_parser = parse_shots, default_value = "ideal")]
    pub shots: Shots,
    /// Depolarizing strength applied before sampling.
    #[arg(long, value_parser = parse_noise, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the generating state, usable as `reconstruct --target`.
    #[arg(long)]
    pub state_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub conv1_filters: Option<usize>,
    #[arg(long)]
    pub conv2_filters: Option<usize>,
    #[arg(long)]
    pub kernel_size: Option<usize>,
    #[arg(long)]
    pub pool_size: Option<usize>,
    #[arg(long)]
    pub dense1_units: Option<usize>,
    #[arg(long)]
    pub dense2_units: Option<usize>,
}

/// Options for networks trained on the fly by a benchmark.
#[derive(Debug, Args)]
pub struct InlineTrainingArgs {
    /// Train the needed networks instead of loading checkpoints.
    #[arg(long)]
    pub train_inline: bool,
    #[arg(long, default_value_t = 4000)]
    pub train_count: usize,
    #[arg(long, default_value_t = 200)]
    pub val_count: usize,
    /// Training epochs (default: the network default).
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BenchOutputArgs {
    /// Number of random test states.
    #[arg(long, default_value_t = 20)]
    pub states: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Write zero wall times so repeated runs give identical files.
    #[arg(long)]
    pub no_timing: bool,
    /// MLE random restarts.
    #[arg(long, default_value_t = 3)]
    pub restarts: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scenario {
    /// Noiseless records.
    Ideal,
    /// Depolarized states sampled with finite shots.
    Depol,
}

#[derive(Debug, Args)]
pub struct BenchScalingArgs {
    /// Qubit counts: `1..3`, `1,2` or `2`.
    #[arg(long, value_parser = parse_qubit_range, default_value = "1..3")]
    pub qubits: ::std::vec::Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "ideal,depol")]
    pub scenarios: Vec<Scenario>,
    /// Shots per setting in the depol scenario.
    #[arg(long, default_value_t = 2192)]
    pub shots: u32,
    /// Depolarizing strength in the depol scenario (default: per qubit count).
    #[arg(long, value_parser = parse_noise)]
    pub noise: Option<f64>,
    /// Checkpoints of ideal-trained networks, one per qubit count.
    #[arg(long = "checkpoint")]
    pub checkpoints: Vec<PathBuf>,
    #[command(flatten)]
    pub training: InlineTrainingArgs,
    #[command(flatten)]
    pub output: BenchOutputArgs,
}

#[derive(Debug, Args)]
pub struct BenchShotsArgs {
    #[arg(long, value_parser = qubits_arg(), default_value_t = 2)]
    pub qubits: usize,
    /// Shots per setting; "ideal" is also accepted.
    #[arg(long, value_parser = parse_shots, value_delimiter = ',', default_value = "5,15,128,1024,8192")]
    pub shots: Vec<Shots>,
    /// nn-ideal | nn-shots:N | mle
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "nn-ideal,nn-shots:15,mle"
    )]
    pub methods: Vec<Method>,
    /// Depolarizing strength applied to test states before sampling.
    #[arg(long, value_parser = parse_noise, default_value_t = 0.0)]
    pub noise: f64,
    /// Checkpoint for a network method, as METHOD=PATH.
    #[arg(long = "model", value_parser = parse_model_entry)]
    pub models: Vec<(Method, PathBuf)>,
    /// Squared-difference output (default: next to --out).
    #[arg(long)]
    pub sqdiff_out: Option<PathBuf>,
    #[command(flatten)]
    pub training: InlineTrainingArgs,
    #[command(flatten)]
    pub output: BenchOutputArgs,
}

#[derive(Debug, Args)]
pub struct NoiseCurveArgs {
    #[arg(long, value_parser = qubits_arg(), default_value_t = 2)]
    pub qubits: usize,
    #[arg(long, value_delimiter = ',', default_value = "16,64,256,1024,4096")]
    pub shots: Vec<u32>,
    #[arg(long, default_value_t = 50)]
    pub states: usize,
    /// Sampling repeats per state.
    #[arg(long, default_value_t = 20)]
    pub repeats: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReconstructMethod {
    Mle,
    Nn,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Record file written by gen-record.
    #[arg(long, required_unless_present = "dataset", conflicts_with = "dataset")]
    pub record: Option<PathBuf>,
    /// Dataset file; reconstructs the sample at --index.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 0, requires = "dataset")]
    pub index: usize,
    #[arg(long, value_enum)]
    pub method: ReconstructMethod,
    /// Checkpoint, required for --method nn.
    #[arg(long, required_if_eq("method", "nn"))]
    pub model: Option<PathBuf>,
    /// State file to compare against; prints the fidelity.
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub restarts: usize,
    /// Also write the reconstruction as a state file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn qubit_ranges() {
        assert_eq!(parse_qubit_range("1..3").unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_qubit_range("1..=2").unwrap(), vec![1, 2]);
        assert_eq!(parse_qubit_range("2,1").unwrap(), vec![2, 1]);
        assert!(parse_qubit_range("0..2").is_err());
        assert!(parse_qubit_range("3..1").is_err());
    }

    #[test]
    fn shots_values() {
        assert_eq!(parse_shots("ideal").unwrap(), Shots::Ideal);
        assert_eq!(parse_shots("15").unwrap(), Shots::Finite(15));
        assert!(parse_shots("0").is_err());
    }
}
