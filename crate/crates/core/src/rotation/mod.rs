//! Rotation learners applied after projection: random Haar rotations, ITQ,
//! IsoHash gradient descent and UnifDiag Givens sequences.

mod isohash;
mod itq;
mod random;
mod unifdiag;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceState;
use crate::error::{HqhError, Result};
use crate::model::OrthogonalTransform;

pub use isohash::{isohash_fit, isohash_objective, IsoHashConfig, IsoHashFit};
pub use itq::{itq_fit, itq_fit_from, procrustes_rotation, quantization_loss, sign_matrix, ItqState};
pub use random::random_rotation;
pub use unifdiag::{apply_givens_similarity, unifdiag_fit, write_steps_csv, GivensStep, UnifDiagFit};

/// Which rotation to learn after the projection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RotationMethod {
    None,
    Random,
    Itq,
    IsoHash,
    UnifDiag,
}

impl RotationMethod {
    pub const ALL: [RotationMethod; 5] = [
        RotationMethod::None,
        RotationMethod::Random,
        RotationMethod::Itq,
        RotationMethod::IsoHash,
        RotationMethod::UnifDiag,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RotationMethod::None => "none",
            RotationMethod::Random => "random",
            RotationMethod::Itq => "itq",
            RotationMethod::IsoHash => "isohash",
            RotationMethod::UnifDiag => "unifdiag",
        }
    }

    /// Whether the method learns from a covariance alone (and so can run on
    /// a stream).
    pub fn is_streamable(self) -> bool {
        !matches!(self, RotationMethod::Itq)
    }
}

impl fmt::Display for RotationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RotationMethod {
    type Err = HqhError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "pca" | "identity" => Ok(RotationMethod::None),
            "random" | "randrot" => Ok(RotationMethod::Random),
            "itq" => Ok(RotationMethod::Itq),
            "isohash" => Ok(RotationMethod::IsoHash),
            "unifdiag" => Ok(RotationMethod::UnifDiag),
            other => Err(HqhError::invalid(format!("unknown rotation method `{other}`"))),
        }
    }
}

/// Learns the rotation for `method` from the projected sample `v` (needed by
/// ITQ only) and its covariance.
pub fn fit_rotation(
    method: RotationMethod,
    v: Option<&DMatrix<f64>>,
    cov: &CovarianceState,
    itq_iters: usize,
    isohash: &IsoHashConfig,
    seed: u64,
) -> Result<OrthogonalTransform> {
    let c = cov.dim();
    match method {
        RotationMethod::None => Ok(OrthogonalTransform::identity(c)),
        RotationMethod::Random => random_rotation(c, seed),
        RotationMethod::Itq => {
            let v = v.ok_or_else(|| {
                HqhError::Unsupported("ITQ needs the projected training sample".into())
            })?;
            Ok(itq_fit(v, itq_iters, seed)?.transform)
        }
        RotationMethod::IsoHash => Ok(isohash_fit(cov, isohash)?.transform),
        RotationMethod::UnifDiag => Ok(unifdiag_fit(cov)?.transform),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in RotationMethod::ALL {
            assert_eq!(m.name().parse::<RotationMethod>().unwrap(), m);
        }
        assert_eq!("PCA".parse::<RotationMethod>().unwrap(), RotationMethod::None);
        assert!("osh".parse::<RotationMethod>().is_err());
    }
}
