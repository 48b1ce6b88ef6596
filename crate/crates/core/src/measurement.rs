//! Overcomplete projective tomography: the `6^d` product projectors, Born-rule
//! probabilities, per-setting shot sampling and a depolarizing channel.
//!
//! Canonical ordering: each qubit is measured in one of the bases Z, X, Y
//! with eigenstate pairs (H, V), (D, A), (R, L) where
//! `|R> = (|0> + i|1>)/sqrt(2)`. A setting is a base-3 word over the qubits
//! and an outcome a base-2 word, qubit 0 most significant in both. The flat
//! projector index is `setting * 2^d + outcome`, so the `2^d` outcomes of a
//! setting are contiguous.

use std::fmt;
use std::ops::Range;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::qstate::{hilbert_dim, qubits_from_len, CMatrix, CVector, DensityMatrix};
use crate::{Error, Result};

/// Tolerance on per-setting probability sums.
pub const SUM_TOLERANCE: f64 = 1e-10;

/// Default depolarizing weight standing in for device noise: 0.05 up to two
/// qubits, 0.1 beyond.
pub fn default_depolarizing(qubits: usize) -> f64 {
    if qubits <= 2 {
        0.05
    } else {
        0.1
    }
}

/// Number of projectors, `6^d`.
pub fn projector_count(qubits: usize) -> usize {
    6usize.pow(qubits as u32)
}

/// Number of measurement settings, `3^d`.
pub fn setting_count(qubits: usize) -> usize {
    3usize.pow(qubits as u32)
}

/// Single-qubit eigenstates in the order H, V, D, A, R, L.
fn single_qubit_kets() -> [[Complex64; 2]; 6] {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let c = Complex64::new;
    [
        [c(1.0, 0.0), c(0.0, 0.0)],
        [c(0.0, 0.0), c(1.0, 0.0)],
        [c(h, 0.0), c(h, 0.0)],
        [c(h, 0.0), c(-h, 0.0)],
        [c(h, 0.0), c(0.0, h)],
        [c(h, 0.0), c(0.0, -h)],
    ]
}

/// Number of shots per setting, or the noiseless limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Shots {
    Ideal,
    Finite(u32),
}

impl fmt::Display for Shots {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shots::Ideal => f.write_str("ideal"),
            Shots::Finite(n) => write!(f, "{n}"),
        }
    }
}

/// The `6^d` rank-1 tomography projectors, grouped into `3^d` settings.
#[derive(Debug, Clone)]
pub struct ProjectorSet {
    qubits: usize,
    kets: Vec<CVector>,
}

impl ProjectorSet {
    pub fn new(qubits: usize) -> Result<Self> {
        build_projectors(qubits)
    }

    pub fn qubits(&self) -> usize {
        self.qubits
    }

    pub fn len(&self) -> usize {
        self.kets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kets.is_empty()
    }

    pub fn setting_count(&self) -> usize {
        setting_count(self.qubits)
    }

    pub fn outcomes_per_setting(&self) -> usize {
        hilbert_dim(self.qubits)
    }

    /// Flat index range of one setting's outcomes.
    pub fn setting(&self, s: usize) -> Range<usize> {
        let n = self.outcomes_per_setting();
        s * n..(s + 1) * n
    }

    /// The ket `|v_i>` with `P_i = |v_i><v_i|`.
    pub fn ket(&self, i: usize) -> &CVector {
        &self.kets[i]
    }

    pub fn kets(&self) -> &[CVector] {
        &self.kets
    }

    pub fn projector(&self, i: usize) -> CMatrix {
        &self.kets[i] * self.kets[i].adjoint()
    }
}

/// Tensor products of the six single-qubit projectors in canonical order.
pub fn build_projectors(qubits: usize) -> Result<ProjectorSet> {
    if qubits < 1 {
        return Err(Error::InvalidDimension(qubits));
    }
    let single = single_qubit_kets();
    let dim = hilbert_dim(qubits);
    let mut kets = Vec::with_capacity(projector_count(qubits));
    for setting in 0..setting_count(qubits) {
        for outcome in 0..dim {
            let mut ket = vec![Complex64::new(1.0, 0.0)];
            for q in 0..qubits {
                let basis = (setting / 3usize.pow((qubits - 1 - q) as u32)) % 3;
                let bit = (outcome >> (qubits - 1 - q)) & 1;
                let factor = &single[2 * basis + bit];
                ket = ket
                    .iter()
                    .flat_map(|a| factor.iter().map(move |b| a * b))
                    .collect();
            }
            kets.push(CVector::from_vec(ket));
        }
    }
    Ok(ProjectorSet { qubits, kets })
}

/// One state's tomography values in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    qubits: usize,
    shots: Shots,
    values: Vec<f64>,
}

impl MeasurementRecord {
    /// Validates length `6^d`, values in `[0, 1]` and per-setting sums of 1.
    pub fn new(shots: Shots, values: Vec<f64>) -> Result<Self> {
        let qubits = qubits_from_len(values.len(), 6).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "record length {} is not a power of six >= 6",
                values.len()
            ))
        })?;
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "record value {v} outside [0, 1]"
            )));
        }
        let n = hilbert_dim(qubits);
        for (s, chunk) in values.chunks(n).enumerate() {
            let sum: f64 = chunk.iter().sum();
            if (sum - 1.0).abs() > SUM_TOLERANCE {
                return Err(Error::InvalidArgument(format!(
                    "setting {s} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(Self {
            qubits,
            shots,
            values,
        })
    }

    /// The record of the maximally mixed state: every value `1/2^d`.
    pub fn uniform(qubits: usize) -> Self {
        let v = 1.0 / hilbert_dim(qubits) as f64;
        Self {
            qubits,
            shots: Shots::Ideal,
            values: vec![v; projector_count(qubits)],
        }
    }

    pub fn qubits(&self) -> usize {
        self.qubits
    }

    pub fn shots(&self) -> Shots {
        self.shots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn setting(&self, s: usize) -> &[f64] {
        let n = hilbert_dim(self.qubits);
        &self.values[s * n..(s + 1) * n]
    }
}

fn check_same(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// Born-rule values `Re Tr(rho P_i)`.
pub fn ideal_probabilities(rho: &DensityMatrix, proj: &ProjectorSet) -> Result<MeasurementRecord> {
    check_same(proj.qubits(), rho.qubits())?;
    let m = rho.matrix();
    let values = proj
        .kets()
        .iter()
        .map(|v| {
            let p = v.dotc(&(m * v)).re;
            p.clamp(0.0, 1.0)
        })
        .collect();
    Ok(MeasurementRecord {
        qubits: rho.qubits(),
        shots: Shots::Ideal,
        values,
    })
}

/// Draws `shots` samples per setting, independently, and stores frequencies.
pub fn sample_record<R: Rng + ?Sized>(
    ideal: &MeasurementRecord,
    shots: u32,
    rng: &mut R,
) -> Result<MeasurementRecord> {
    if shots == 0 {
        return Err(Error::InvalidArgument("shots must be at least 1".into()));
    }
    if ideal.shots != Shots::Ideal {
        return Err(Error::InvalidArgument(
            "can only sample from an ideal record".into(),
        ));
    }
    let n = hilbert_dim(ideal.qubits);
    let mut values = Vec::with_capacity(ideal.values.len());
    for probs in ideal.values.chunks(n) {
        let counts = multinomial(probs, shots as u64, rng)?;
        values.extend(counts.into_iter().map(|c| c as f64 / shots as f64));
    }
    Ok(MeasurementRecord {
        qubits: ideal.qubits,
        shots: Shots::Finite(shots),
        values,
    })
}

/// Multinomial draw as a chain of conditional binomials. The last outcome
/// takes whatever is left, so the counts always partition `trials`.
fn multinomial<R: Rng + ?Sized>(probs: &[f64], trials: u64, rng: &mut R) -> Result<Vec<u64>> {
    let mut counts = vec![0; probs.len()];
    let mut remaining = trials;
    let mut mass: f64 = probs.iter().sum();
    let last = probs.len() - 1;
    for (k, &p) in probs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if k == last {
            counts[k] = remaining;
            break;
        }
        let q = if mass > 0.0 {
            (p / mass).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let draw = Binomial::new(remaining, q)
            .map_err(|e| Error::InvalidArgument(format!("binomial({remaining}, {q}): {e}")))?
            .sample(rng);
        counts[k] = draw;
        remaining -= draw;
        mass -= p;
    }
    Ok(counts)
}

/// `(1 - p) rho + p I / 2^d`.
pub fn depolarize(rho: &DensityMatrix, p: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "depolarizing weight {p} outside [0, 1]"
        )));
    }
    let n = rho.dim();
    let m = rho.matrix().scale(1.0 - p) + CMatrix::identity(n, n).scale(p / n as f64);
    Ok(DensityMatrix::from_hermitian_unchecked(rho.qubits(), m))
}

/// `sum_i (a_i - b_i)^2` over all `6^d` entries.
pub fn squared_difference(a: &MeasurementRecord, b: &MeasurementRecord) -> Result<f64> {
    check_same(a.qubits, b.qubits)?;
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum())
}
