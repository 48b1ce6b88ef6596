//! Simulated training and test data.

use std::fmt;
use std::str::FromStr;

use crate::measurement::{
    build_projectors, depolarize, ideal_probabilities, projector_count, sample_record,
};
use crate::qstate::{
    density_from_tau, haar_random_pure, tau_from_density, DensityMatrix, TauVector, DEFAULT_EPSILON,
};
use crate::rng::task_rng;
use crate::{Error, Result};

/// How the measurement inputs of a dataset were produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Provenance {
    Ideal,
    Shots(u32),
    Depolarized { p: f64, shots: u32 },
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Ideal => f.write_str("ideal"),
            Provenance::Shots(n) => write!(f, "shots:{n}"),
            Provenance::Depolarized { p, shots } => write!(f, "depol:{p}+shots:{shots}"),
        }
    }
}

pub const PROVENANCE_GRAMMAR: &str = "ideal | shots:K | depol:P+shots:K (K >= 1, 0 <= P <= 1)";

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::InvalidArgument(format!(
                "invalid provenance {s:?}; expected {PROVENANCE_GRAMMAR}"
            ))
        };
        let shots = |t: &str| -> Result<u32> {
            let n: u32 = t
                .strip_prefix("shots:")
                .ok_or_else(bad)?
                .parse()
                .map_err(|_| bad())?;
            if n == 0 {
                return Err(bad());
            }
            Ok(n)
        };
        if s == "ideal" {
            return Ok(Provenance::Ideal);
        }
        if s.starts_with("shots:") {
            return Ok(Provenance::Shots(shots(s)?));
        }
        let rest = s.strip_prefix("depol:").ok_or_else(bad)?;
        let (p, k) = rest.split_once('+').ok_or_else(bad)?;
        let p: f64 = p.parse().map_err(|_| bad())?;
        if !(0.0..=1.0).contains(&p) {
            return Err(bad());
        }
        Ok(Provenance::Depolarized {
            p,
            shots: shots(k)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub measurements: Vec<f64>,
    pub target_tau: Vec<f64>,
    /// The generating state, when it is kept alongside the tau vector.
    pub rho: Option<DensityMatrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub qubits: usize,
    pub provenance: Provenance,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Checks vector lengths against the qubit count.
    pub fn validate(&self) -> Result<()> {
        let m_len = projector_count(self.qubits);
        let t_len = 4usize.pow(self.qubits as u32);
        for (i, s) in self.samples.iter().enumerate() {
            if s.measurements.len() != m_len || s.target_tau.len() != t_len {
                return Err(Error::InvalidArgument(format!(
                    "sample {i}: lengths ({}, {}) do not match {} qubits ({m_len}, {t_len})",
                    s.measurements.len(),
                    s.target_tau.len(),
                    self.qubits
                )));
            }
        }
        Ok(())
    }

    /// The state each sample should reconstruct: the stored `rho` when
    /// present, otherwise the density matrix of the target tau.
    pub fn target_states(&self) -> Result<Vec<DensityMatrix>> {
        self.samples
            .iter()
            .map(|s| match &s.rho {
                Some(rho) => Ok(rho.clone()),
                None => density_from_tau(&TauVector::new(s.target_tau.clone())?),
            })
            .collect()
    }
}

/// Simulates `count` Haar-random states and their tomography records.
///
/// Sample `i` draws from its own stream, seeded by the task-splitting rule
/// on `master_seed`. Inputs pass through the optional depolarizing channel
/// and shot sampling; targets always come from the noiseless state.
pub fn generate_dataset(
    count: usize,
    qubits: usize,
    provenance: Provenance,
    master_seed: u64,
) -> Result<Dataset> {
    let proj = build_projectors(qubits)?;
    let samples = (0..count)
        .map(|i| {
            let mut rng = task_rng(master_seed, i as u64);
            let rho = haar_random_pure(qubits, &mut rng)?.to_density();
            let target_tau = tau_from_density(&rho, DEFAULT_EPSILON)?.into_values();
            let record = match provenance {
                Provenance::Ideal => ideal_probabilities(&rho, &proj)?,
                Provenance::Shots(n) => {
                    sample_record(&ideal_probabilities(&rho, &proj)?, n, &mut rng)?
                }
                Provenance::Depolarized { p, shots } => {
                    let noisy = depolarize(&rho, p)?;
                    sample_record(&ideal_probabilities(&noisy, &proj)?, shots, &mut rng)?
                }
            };
            Ok(Sample {
                measurements: record.into_values(),
                target_tau,
                rho: Some(rho),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        qubits,
        provenance,
        samples,
    })
}
