//! Batch and streaming pipelines composing centering, projection and
//! rotation, plus bulk encoding and model persistence.

mod persist;
mod stream;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::code::BinaryCode;
use crate::covariance::covariance_of;
use crate::error::{ensure_dim, HqhError, Result};
use crate::matrix::{CenteringState, DataMatrix};
use crate::model::HashModel;
use crate::rotation::{fit_rotation, IsoHashConfig, RotationMethod};
use crate::seed;
use crate::subspace::PrincipalComponents;

pub use persist::{
    load_model, load_model_with_meta, model_from_bytes, model_to_bytes, read_codes, save_model,
    write_codes, codes_from_bytes, codes_to_bytes,
};
pub use stream::{StreamPipeline, StreamPipelineConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchPipelineConfig {
    pub c: usize,
    pub rotation_method: RotationMethod,
    pub itq_iters: usize,
    pub isohash: IsoHashConfig,
    pub seed: u64,
}

impl BatchPipelineConfig {
    pub fn new(c: usize, rotation_method: RotationMethod, seed: u64) -> Self {
        BatchPipelineConfig {
            c,
            rotation_method,
            itq_iters: 50,
            isohash: IsoHashConfig::default(),
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.c == 0 {
            return Err(HqhError::invalid("code length must be at least 1"));
        }
        Ok(())
    }
}

/// Centered training sample and its principal decomposition, shared by
/// every batch fit on the same data regardless of code length or method.
#[derive(Clone, Debug)]
pub struct BatchFitter {
    centering: CenteringState,
    centered: DataMatrix,
    pca: PrincipalComponents,
}

impl BatchFitter {
    pub fn new(x: &DataMatrix) -> Result<Self> {
        if x.is_empty() {
            return Err(HqhError::invalid("cannot fit a model on an empty dataset"));
        }
        let centering = CenteringState::fit(x);
        let centered = x.centered(centering.mean())?;
        let pca = PrincipalComponents::fit(&centered)?;
        Ok(BatchFitter {
            centering,
            centered,
            pca,
        })
    }

    pub fn principal_components(&self) -> &PrincipalComponents {
        &self.pca
    }

    pub fn fit(&self, config: &BatchPipelineConfig) -> Result<HashModel> {
        config.validate()?;
        let n = self.centered.len();
        if n <= config.c {
            return Err(HqhError::invalid(format!(
                "batch fit needs more than c = {} points, got {n}",
                config.c
            )));
        }
        let basis = self.pca.basis(config.c)?;
        let v = basis.matrix() * self.centered.values();
        let cov = covariance_of(&v, true)?;
        let rotation_seed = seed::derive_u64(config.seed, "batch-rotation", config.c as u64);
        let transform = fit_rotation(
            config.rotation_method,
            Some(&v),
            &cov,
            config.itq_iters,
            &IsoHashConfig {
                seed: rotation_seed,
                ..config.isohash.clone()
            },
            rotation_seed,
        )?;
        HashModel::new(self.centering.clone(), basis, transform, cov)
    }
}

/// Fits centering, PCA basis, and rotation on `x` (one column per point).
pub fn fit_batch(x: &DataMatrix, config: &BatchPipelineConfig) -> Result<HashModel> {
    config.validate()?;
    BatchFitter::new(x)?.fit(config)
}

/// Points per parallel work unit in [`encode_all`].
const ENCODE_CHUNK: usize = 256;

/// Encodes every column of `x`, in order. Parallel over chunks of columns;
/// the output does not depend on the worker count.
pub fn encode_all(model: &HashModel, x: &DataMatrix) -> Result<Vec<BinaryCode>> {
    if x.is_empty() {
        return Ok(Vec::new());
    }
    ensure_dim("encode_all input", model.dim(), x.dim())?;
    let d = x.dim();
    let data = x.values().as_slice();
    let chunks: Vec<Result<Vec<BinaryCode>>> = data
        .par_chunks(d * ENCODE_CHUNK)
        .map_init(
            || vec![0.0; d],
            |scratch, block| {
                block
                    .chunks_exact(d)
                    .map(|point| model.encode_with_scratch(point, scratch))
                    .collect()
            },
        )
        .collect();
    let mut out = Vec::with_capacity(x.len());
    for chunk in chunks {
        out.extend(chunk?);
    }
    Ok(out)
}

/// `R W (x − μ)` for every column of `x`, as a `c × n` matrix.
pub fn project_all(model: &HashModel, x: &DataMatrix) -> Result<DMatrix<f64>> {
    ensure_dim("project_all input", model.dim(), x.dim())?;
    let mut out = DMatrix::zeros(model.code_len(), x.len());
    for (t, point) in x.points().enumerate() {
        out.set_column(t, &nalgebra::DVector::from_vec(model.project(point)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code::sign_quantize;
    use crate::linalg;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_data(d: usize, n: usize, seed: u64) -> DataMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let scales: Vec<f64> = (0..d).map(|i| 1.0 + (d - i) as f64).collect();
        let values = DMatrix::from_fn(d, n, |i, _| {
            3.0 + scales[i] * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        });
        DataMatrix::new(values).unwrap()
    }

    #[test]
    fn pca_only_model_is_sign_of_projection() {
        let x = gaussian_data(6, 200, 1);
        let model = fit_batch(&x, &BatchPipelineConfig::new(3, RotationMethod::None, 0)).unwrap();
        assert_eq!(model.transform().matrix(), &DMatrix::<f64>::identity(3, 3));
        let mean = x.mean();
        for point in x.points().take(20) {
            let centered: Vec<f64> = point.iter().zip(mean.iter()).map(|(a, m)| a - m).collect();
            let y = model.basis().matrix() * nalgebra::DVector::from_vec(centered);
            assert_eq!(model.encode(point).unwrap(), sign_quantize(y.as_slice()).unwrap());
        }
    }

    #[test]
    fn every_method_yields_orthonormal_model() {
        let x = gaussian_data(10, 300, 2);
        for method in RotationMethod::ALL {
            let model = fit_batch(&x, &BatchPipelineConfig::new(4, method, 7)).unwrap();
            assert!(model.basis().orthonormality_residual() <= 1e-6);
            assert!(model.transform().orthonormality_residual() <= 1e-8);
            assert_eq!(model.transform().provenance().to_string(), match method {
                RotationMethod::None => "identity",
                other => other.name(),
            });
        }
    }

    #[test]
    fn unifdiag_model_covariance_is_uniform() {
        let x = gaussian_data(12, 400, 3);
        let model = fit_batch(&x, &BatchPipelineConfig::new(5, RotationMethod::UnifDiag, 0)).unwrap();
        let cov = model.covariance();
        let rotated = cov.rotated(model.transform().matrix()).unwrap();
        assert!(rotated.diagonal_residual() <= 1e-8 * cov.tau());
    }

    #[test]
    fn distances_contract_through_the_pipeline() {
        let x = gaussian_data(8, 100, 4);
        let model = fit_batch(&x, &BatchPipelineConfig::new(3, RotationMethod::Random, 5)).unwrap();
        let w = model.basis().matrix();
        let rw = model.combined();
        for a in 0..20 {
            for b in a + 1..20 {
                let diff = nalgebra::DVector::from_iterator(
                    8,
                    x.point(a).iter().zip(x.point(b)).map(|(p, q)| p - q),
                );
                let full = diff.norm();
                let projected = (w * &diff).norm();
                let rotated = (&rw * &diff).norm();
                assert!(projected <= full + 1e-9);
                assert!(rotated <= projected + 1e-9);
            }
        }
    }

    #[test]
    fn fit_needs_more_points_than_bits() {
        let x = gaussian_data(6, 4, 5);
        assert!(fit_batch(&x, &BatchPipelineConfig::new(4, RotationMethod::None, 0)).is_err());
        assert!(fit_batch(&x, &BatchPipelineConfig::new(0, RotationMethod::None, 0)).is_err());
    }

    #[test]
    fn encode_all_matches_sequential() {
        let x = gaussian_data(20, 1000, 6);
        let model = fit_batch(&x, &BatchPipelineConfig::new(8, RotationMethod::Itq, 1)).unwrap();
        let bulk = encode_all(&model, &x).unwrap();
        assert_eq!(bulk.len(), 1000);
        for (t, code) in bulk.iter().enumerate() {
            assert_eq!(code, &model.encode(x.point(t)).unwrap());
        }
        assert!(encode_all(&model, &DataMatrix::empty()).unwrap().is_empty());
        assert_eq!(encode_all(&model, &x.select(&[3])).unwrap(), vec![model.encode(x.point(3)).unwrap()]);
        assert!(encode_all(&model, &gaussian_data(5, 3, 0)).is_err());
    }

    #[test]
    fn projection_norm_is_bounded_by_centered_norm() {
        let x = gaussian_data(7, 50, 8);
        let model = fit_batch(&x, &BatchPipelineConfig::new(3, RotationMethod::UnifDiag, 0)).unwrap();
        let y = project_all(&model, &x).unwrap();
        let mean = x.mean();
        for t in 0..50 {
            let centered: f64 = x.point(t).iter().zip(mean.iter()).map(|(a, m)| (a - m) * (a - m)).sum();
            assert!(linalg::dot(y.column(t).as_slice(), y.column(t).as_slice()) <= centered + 1e-9);
        }
    }
}
