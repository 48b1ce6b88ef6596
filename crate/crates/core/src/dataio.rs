//! On-disk formats: JSON-lines datasets, JSON records and states, JSON model
//! checkpoints, and results CSVs.
//!
//! Every file carries a format version and loaders reject versions they do
//! not know. Floats in text formats are written with 17 significant digits so
//! every double survives a round trip. Writes go to a temporary file in the
//! destination directory and are renamed into place.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::measurement::{projector_count, MeasurementRecord, Shots};
use crate::nn::{
    Dataset, EpochStats, ModelParams, NetworkConfig, Sample, Tensor, TrainingHistory,
    PARAMETER_NAMES,
};
use crate::qstate::{hilbert_dim, DensityMatrix};
use crate::{Error, Result};

pub const FORMAT_VERSION: i64 = 1;

/// Header of the CSV written by [`write_results`].
pub const RESULTS_HEADER: &str = "method,d,shots,noise_p,state_index,fidelity,wall_time_s,seed";

/// Writes `contents` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(contents).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

// 17 significant digits: one before the point, sixteen after.
fn push_float(out: &mut String, x: f64) {
    write!(out, "{x:.16e}").unwrap();
}

fn push_array(out: &mut String, xs: &[f64]) {
    out.push('[');
    for (i, &x) in xs.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        push_float(out, x);
    }
    out.push(']');
}

fn push_matrix(out: &mut String, rho: &DensityMatrix, part: fn(&Complex64) -> f64) {
    let m = rho.matrix();
    out.push('[');
    for r in 0..m.nrows() {
        if r > 0 {
            out.push(',');
        }
        let row: Vec<f64> = (0..m.ncols()).map(|c| part(&m[(r, c)])).collect();
        push_array(out, &row);
    }
    out.push(']');
}

fn push_density(out: &mut String, rho: &DensityMatrix) {
    out.push_str("{\"re\":");
    push_matrix(out, rho, |z| z.re);
    out.push_str(",\"im\":");
    push_matrix(out, rho, |z| z.im);
    out.push('}');
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixJson {
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

impl MatrixJson {
    fn into_density(self, qubits: usize) -> std::result::Result<DensityMatrix, String> {
        let n = hilbert_dim(qubits);
        let square = |m: &Vec<Vec<f64>>| m.len() == n && m.iter().all(|r| r.len() == n);
        if !square(&self.re) || !square(&self.im) {
            return Err(format!(
                "density matrix must be {n}x{n} for {qubits} qubits"
            ));
        }
        let m = DMatrix::from_fn(n, n, |r, c| Complex64::new(self.re[r][c], self.im[r][c]));
        DensityMatrix::new(m).map_err(|e| e.to_string())
    }
}

fn check_version(v: &Value) -> std::result::Result<(), Error> {
    match v.get("version").and_then(Value::as_i64) {
        Some(FORMAT_VERSION) => Ok(()),
        Some(other) => Err(Error::UnsupportedFormat(other)),
        None => Err(Error::UnsupportedFormat(-1)),
    }
}

fn qubits_field(v: &Value) -> std::result::Result<usize, String> {
    match v.get("d").and_then(Value::as_u64) {
        Some(d) if (1..=8).contains(&d) => Ok(d as usize),
        Some(d) => Err(format!("unsupported qubit count {d}")),
        None => Err("missing integer field \"d\"".into()),
    }
}

// ---------------------------------------------------------------- datasets

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleJson {
    m: Vec<f64>,
    tau: Vec<f64>,
    #[serde(default)]
    rho: Option<MatrixJson>,
}

/// Encodes a dataset as JSON lines: a header, then one sample per line.
pub fn encode_dataset(data: &Dataset) -> Result<String> {
    data.validate()?;
    let mut out = String::new();
    writeln!(
        out,
        "{{\"version\":{FORMAT_VERSION},\"d\":{},\"provenance\":\"{}\",\"count\":{}}}",
        data.qubits,
        data.provenance,
        data.len()
    )
    .unwrap();
    for s in &data.samples {
        out.push_str("{\"m\":");
        push_array(&mut out, &s.measurements);
        out.push_str(",\"tau\":");
        push_array(&mut out, &s.target_tau);
        if let Some(rho) = &s.rho {
            out.push_str(",\"rho\":");
            push_density(&mut out, rho);
        }
        out.push_str("}\n");
    }
    Ok(out)
}

pub fn save_dataset(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), encode_dataset(data)?.as_bytes())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let parse = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut lines = BufReader::new(file)
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l));
    let header = match lines.next() {
        Some((_, line)) => line.map_err(|e| Error::io(path, e))?,
        None => return Err(parse(1, "missing header line".into())),
    };
    let header: Value = serde_json::from_str(&header).map_err(|e| parse(1, e.to_string()))?;
    check_version(&header)?;
    let qubits = qubits_field(&header).map_err(|m| parse(1, m))?;
    let provenance = header
        .get("provenance")
        .and_then(Value::as_str)
        .ok_or_else(|| parse(1, "missing string field \"provenance\"".into()))?
        .parse()
        .map_err(|e: Error| parse(1, e.to_string()))?;
    let count = header
        .get("count")
        .and_then(Value::as_u64)
        .ok_or_else(|| parse(1, "missing integer field \"count\"".into()))?
        as usize;

    let (m_len, t_len) = (projector_count(qubits), hilbert_dim(qubits).pow(2));
    let mut samples = Vec::with_capacity(count);
    for (n, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: SampleJson = serde_json::from_str(&line).map_err(|e| parse(n, e.to_string()))?;
        if s.m.len() != m_len || s.tau.len() != t_len {
            return Err(parse(
                n,
                format!(
                    "vector lengths ({}, {}) do not match d = {qubits} ({m_len}, {t_len})",
                    s.m.len(),
                    s.tau.len()
                ),
            ));
        }
        let rho = s
            .rho
            .map(|m| m.into_density(qubits))
            .transpose()
            .map_err(|m| parse(n, m))?;
        samples.push(Sample {
            measurements: s.m,
            target_tau: s.tau,
            rho,
        });
    }
    if samples.len() != count {
        return Err(parse(
            1,
            format!(
                "header declares {count} samples, file has {}",
                samples.len()
            ),
        ));
    }
    Ok(Dataset {
        qubits,
        provenance,
        samples,
    })
}

// ------------------------------------------------- single records and states

/// Writes one measurement record as a JSON object.
pub fn save_record(record: &MeasurementRecord, path: impl AsRef<Path>) -> Result<()> {
    let mut out = format!(
        "{{\"version\":{FORMAT_VERSION},\"d\":{},\"shots\":\"{}\",\"m\":",
        record.qubits(),
        record.shots()
    );
    push_array(&mut out, record.values());
    out.push_str("}\n");
    write_atomic(path.as_ref(), out.as_bytes())
}

/// Reads a record written by [`save_record`]. Length and normalization are
/// validated; failures are parse errors on line 1.
pub fn load_record(path: impl AsRef<Path>) -> Result<MeasurementRecord> {
    let path = path.as_ref();
    let parse = |message: String| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message,
    };
    let v: Value =
        serde_json::from_str(&read_to_string(path)?).map_err(|e| parse(e.to_string()))?;
    check_version(&v)?;
    let qubits = qubits_field(&v).map_err(parse)?;
    let shots = match v.get("shots").and_then(Value::as_str) {
        Some("ideal") => Shots::Ideal,
        Some(s) => Shots::Finite(
            s.parse()
                .map_err(|_| parse(format!("invalid shots {s:?}")))?,
        ),
        None => return Err(parse("missing string field \"shots\"".into())),
    };
    let values: Vec<f64> = serde_json::from_value(v.get("m").cloned().unwrap_or(Value::Null))
        .map_err(|e| parse(format!("field \"m\": {e}")))?;
    if values.len() != projector_count(qubits) {
        return Err(parse(format!(
            "record has {} values, expected {} for d = {qubits}",
            values.len(),
            projector_count(qubits)
        )));
    }
    MeasurementRecord::new(shots, values).map_err(|e| parse(e.to_string()))
}

/// Writes a density matrix as `{"version", "d", "re", "im"}`.
pub fn save_density(rho: &DensityMatrix, path: impl AsRef<Path>) -> Result<()> {
    let mut out = format!(
        "{{\"version\":{FORMAT_VERSION},\"d\":{},\"rho\":",
        rho.qubits()
    );
    push_density(&mut out, rho);
    out.push_str("}\n");
    write_atomic(path.as_ref(), out.as_bytes())
}

pub fn load_density(path: impl AsRef<Path>) -> Result<DensityMatrix> {
    let path = path.as_ref();
    let parse = |message: String| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message,
    };
    let v: Value =
        serde_json::from_str(&read_to_string(path)?).map_err(|e| parse(e.to_string()))?;
    check_version(&v)?;
    let qubits = qubits_field(&v).map_err(parse)?;
    let m: MatrixJson = serde_json::from_value(v.get("rho").cloned().unwrap_or(Value::Null))
        .map_err(|e| parse(format!("field \"rho\": {e}")))?;
    m.into_density(qubits).map_err(parse)
}

// ------------------------------------------------------------- checkpoints

#[derive(Serialize, Deserialize)]
struct TensorJson {
    name: String,
    shape: Vec<usize>,
    /// Little-endian f64 values, base64 encoded.
    data: String,
}

#[derive(Serialize, Deserialize)]
struct CheckpointJson {
    version: i64,
    config: NetworkConfig,
    params: Vec<TensorJson>,
    accumulators: Vec<TensorJson>,
    history: Vec<EpochStats>,
}

fn encode_tensor(name: &str, t: &Tensor) -> TensorJson {
    let bytes: Vec<u8> = t.data.iter().flat_map(|x| x.to_le_bytes()).collect();
    TensorJson {
        name: name.to_string(),
        shape: t.shape.clone(),
        data: BASE64.encode(bytes),
    }
}

fn decode_tensor(t: &TensorJson) -> std::result::Result<Tensor, String> {
    let bytes = BASE64
        .decode(&t.data)
        .map_err(|e| format!("{}: bad base64 payload: {e}", t.name))?;
    let expected = t.shape.iter().product::<usize>() * 8;
    if bytes.len() != expected {
        return Err(format!(
            "{}: payload has {} bytes, shape {:?} needs {expected}",
            t.name,
            bytes.len(),
            t.shape
        ));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Tensor {
        shape: t.shape.clone(),
        data,
    })
}

/// A trained network together with its training curve.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ModelParams,
    pub history: TrainingHistory,
}

pub fn save_model(
    model: &ModelParams,
    history: &[EpochStats],
    path: impl AsRef<Path>,
) -> Result<()> {
    model.validate()?;
    let encode = |ts: &[Tensor]| -> Vec<TensorJson> {
        ts.iter()
            .zip(PARAMETER_NAMES)
            .map(|(t, name)| encode_tensor(name, t))
            .collect()
    };
    let json = CheckpointJson {
        version: FORMAT_VERSION,
        config: model.config.clone(),
        params: encode(&model.params),
        accumulators: encode(&model.accumulators),
        history: history.to_vec(),
    };
    let mut text = serde_json::to_string_pretty(&json).expect("checkpoint serializes");
    text.push('\n');
    write_atomic(path.as_ref(), text.as_bytes())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let corrupt = |message: String| Error::CorruptCheckpoint {
        path: path.to_path_buf(),
        message,
    };
    let v: Value =
        serde_json::from_str(&read_to_string(path)?).map_err(|e| corrupt(e.to_string()))?;
    check_version(&v)?;
    let json: CheckpointJson = serde_json::from_value(v).map_err(|e| corrupt(e.to_string()))?;
    let decode = |ts: &[TensorJson]| -> std::result::Result<Vec<Tensor>, String> {
        ts.iter().map(decode_tensor).collect()
    };
    let model = ModelParams {
        config: json.config,
        params: decode(&json.params).map_err(corrupt)?,
        accumulators: decode(&json.accumulators).map_err(corrupt)?,
    };
    model.validate().map_err(|e| corrupt(e.to_string()))?;
    Ok(Checkpoint {
        model,
        history: json.history,
    })
}

// ----------------------------------------------------------------- results

/// One reconstruction outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub d: usize,
    #[serde(with = "shots_text")]
    pub shots: Shots,
    pub noise_p: f64,
    pub state_index: usize,
    pub fidelity: f64,
    /// Wall time of the reconstruction call alone, in seconds.
    pub wall_time_s: f64,
    pub seed: u64,
}

mod shots_text {
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    use crate::Shots;

    pub fn serialize<S: Serializer>(shots: &Shots, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(shots)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Shots, D::Error> {
        let text = String::deserialize(d)?;
        match text.as_str() {
            "ideal" => Ok(Shots::Ideal),
            n => n
                .parse()
                .map(Shots::Finite)
                .map_err(|_| D::Error::custom(format!("invalid shots {n:?}"))),
        }
    }
}

impl ResultRow {
    fn key(&self) -> (&str, usize, Shots, u64, usize) {
        (
            &self.method,
            self.d,
            self.shots,
            self.noise_p.to_bits(),
            self.state_index,
        )
    }

    fn cmp_key(&self, other: &Self) -> std::cmp::Ordering {
        (&self.method, self.d, self.shots)
            .cmp(&(&other.method, other.d, other.shots))
            .then(self.noise_p.total_cmp(&other.noise_p))
            .then(self.state_index.cmp(&other.state_index))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultsTable {
    pub experiment: String,
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    pub fn new(experiment: impl Into<String>) -> Self {
        Self {
            experiment: experiment.into(),
            rows: Vec::new(),
        }
    }

    /// Rejects duplicate keys, fidelities outside `[0, 1]`, and negative or
    /// non-finite times.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.rows {
            if r.method.is_empty() {
                return Err(Error::InvalidArgument("empty method name".into()));
            }
            if !(0.0..=1.0).contains(&r.fidelity) {
                return Err(Error::InvalidArgument(format!(
                    "fidelity {} outside [0, 1] ({} state {})",
                    r.fidelity, r.method, r.state_index
                )));
            }
            if !(r.wall_time_s >= 0.0 && r.wall_time_s.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "invalid wall time {}",
                    r.wall_time_s
                )));
            }
            if !(0.0..=1.0).contains(&r.noise_p) {
                return Err(Error::InvalidArgument(format!(
                    "noise parameter {} outside [0, 1]",
                    r.noise_p
                )));
            }
            if !seen.insert(r.key()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate row (method {}, d {}, shots {}, noise {}, state {})",
                    r.method, r.d, r.shots, r.noise_p, r.state_index
                )));
            }
        }
        Ok(())
    }

    /// Validated CSV text with rows sorted by key.
    pub fn to_csv(&self) -> Result<String> {
        self.validate()?;
        let mut rows: Vec<&ResultRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| a.cmp_key(b));
        if rows.is_empty() {
            return Ok(format!("{RESULTS_HEADER}\n"));
        }
        csv_text(rows)
    }
}

/// Serializes `rows` as CSV with a header taken from the field names.
pub fn csv_text<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)
            .map_err(|e| Error::InvalidArgument(format!("CSV encoding failed: {e}")))?;
    }
    let bytes = w.into_inner().expect("writing to memory cannot fail");
    Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
}

pub fn write_results(table: &ResultsTable, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), table.to_csv()?.as_bytes())
}

/// Parses a CSV written by [`write_results`]. The experiment id is taken
/// from the file stem.
pub fn read_results(path: impl AsRef<Path>) -> Result<ResultsTable> {
    let path = path.as_ref();
    let parse = |line: usize, message: String| Error::Parse {
        path: PathBuf::from(path),
        line,
        message,
    };
    let text = read_to_string(path)?;
    if text.lines().next() != Some(RESULTS_HEADER) {
        return Err(parse(1, format!("expected header {RESULTS_HEADER:?}")));
    }
    let mut table = ResultsTable::new(
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
    );
    for (i, row) in csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .enumerate()
    {
        table
            .rows
            .push(row.map_err(|e: csv::Error| parse(i + 2, e.to_string()))?);
    }
    table.validate().map_err(|e| parse(0, e.to_string()))?;
    Ok(table)
}
