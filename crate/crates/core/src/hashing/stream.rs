use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::code::BinaryCode;
use crate::covariance::{symmetrize, CovarianceState};
use crate::error::{ensure_dim, ensure_finite, HqhError, Result};
use crate::matrix::CenteringState;
use crate::model::{HashModel, OrthogonalTransform};
use crate::rotation::{fit_rotation, IsoHashConfig, RotationMethod};
use crate::seed;
use crate::subspace::OpastTracker;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamPipelineConfig {
    pub c: usize,
    pub rotation_method: RotationMethod,
    /// Forgetting factor shared by the tracker and the covariance average.
    pub beta: f64,
    /// Samples between rotation refits.
    pub refit_every: usize,
    pub isohash: IsoHashConfig,
    pub seed: u64,
}

impl StreamPipelineConfig {
    pub fn new(c: usize, rotation_method: RotationMethod, seed: u64) -> Self {
        StreamPipelineConfig {
            c,
            rotation_method,
            beta: 0.99,
            refit_every: 5,
            isohash: IsoHashConfig::default(),
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.c == 0 {
            return Err(HqhError::invalid("code length must be at least 1"));
        }
        if self.refit_every == 0 {
            return Err(HqhError::invalid("refit_every must be at least 1"));
        }
        if !self.rotation_method.is_streamable() {
            return Err(HqhError::Unsupported(format!(
                "{} needs the whole training sample and cannot run on a stream",
                self.rotation_method
            )));
        }
        Ok(())
    }
}

/// Online hashing: running mean, OPAST-tracked basis, exponentially
/// weighted projection covariance and a periodically refit rotation.
///
/// Centering and basis in [`StreamPipeline::model`] follow every sample;
/// the rotation changes only at refit points.
#[derive(Clone, Debug)]
pub struct StreamPipeline {
    config: StreamPipelineConfig,
    centering: CenteringState,
    tracker: OpastTracker,
    sigma: DMatrix<f64>,
    transform: OrthogonalTransform,
    model: HashModel,
    samples_seen: u64,
    refits: u64,
}

impl StreamPipeline {
    pub fn new(d: usize, config: StreamPipelineConfig) -> Result<Self> {
        config.validate()?;
        let tracker = OpastTracker::new(d, config.c, config.beta)?;
        let centering = CenteringState::zero(d);
        let sigma = DMatrix::zeros(config.c, config.c);
        let transform = OrthogonalTransform::identity(config.c);
        let model = HashModel::new(
            centering.clone(),
            tracker.basis()?,
            transform.clone(),
            CovarianceState::new(sigma.clone(), true)?,
        )?;
        Ok(StreamPipeline {
            config,
            centering,
            tracker,
            sigma,
            transform,
            model,
            samples_seen: 0,
            refits: 0,
        })
    }

    pub fn config(&self) -> &StreamPipelineConfig {
        &self.config
    }

    pub fn model(&self) -> &HashModel {
        &self.model
    }

    pub fn tracker(&self) -> &OpastTracker {
        &self.tracker
    }

    pub fn samples_seen(&self) -> u64 {
        self.samples_seen
    }

    pub fn refits(&self) -> u64 {
        self.refits
    }

    /// Folds one raw sample into the pipeline.
    pub fn ingest(&mut self, x: &[f64]) -> Result<()> {
        ensure_dim("stream sample", self.tracker.dim(), x.len())?;
        ensure_finite(x, "stream sample")?;

        self.centering.update(x)?;
        let mut centered = vec![0.0; x.len()];
        self.centering.center_into(x, &mut centered);

        let w_old = self.tracker.columns().clone();
        self.tracker.update(&centered)?;
        let w_new = self.tracker.columns();

        // keep Σ in the coordinates of the current basis
        let change = w_new.tr_mul(&w_old);
        let beta = self.config.beta;
        let v = w_new.tr_mul(&DVector::from_column_slice(&centered));
        self.sigma = symmetrize(&change * &self.sigma * change.transpose() * beta + &v * v.transpose() * (1.0 - beta));
        self.samples_seen += 1;

        let cov = CovarianceState::new(self.sigma.clone(), true)?;
        let refit = self.samples_seen == 1 || self.samples_seen.is_multiple_of(self.config.refit_every as u64);
        if refit {
            let rotation_seed = seed::derive_u64(self.config.seed, "stream-rotation", self.refits);
            self.transform = fit_rotation(
                self.config.rotation_method,
                None,
                &cov,
                0,
                &IsoHashConfig {
                    seed: rotation_seed,
                    ..self.config.isohash.clone()
                },
                rotation_seed,
            )?;
            self.refits += 1;
        }
        self.model = HashModel::new(self.centering.clone(), self.tracker.basis()?, self.transform.clone(), cov)?;
        Ok(())
    }

    /// Ingests `x`, then encodes it with the refreshed model.
    pub fn ingest_and_encode(&mut self, x: &[f64]) -> Result<BinaryCode> {
        self.ingest(x)?;
        self.model.encode(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn stream(d: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                (0..d)
                    .map(|i| {
                        let s = if i < 4 { 6.0 - i as f64 } else { 0.5 };
                        1.0 + s * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn cold_start_code_is_all_ones() {
        let mut p = StreamPipeline::new(5, StreamPipelineConfig::new(3, RotationMethod::UnifDiag, 0)).unwrap();
        let x = [1.5, -2.0, 0.3, 4.0, -1.0];
        let code = p.ingest_and_encode(&x).unwrap();
        assert_eq!(p.model().centering().mean().as_slice(), &x);
        assert_eq!(code.to_signs(), vec![1, 1, 1]);
    }

    #[test]
    fn refit_points_have_uniform_diagonal() {
        let mut p = StreamPipeline::new(12, StreamPipelineConfig::new(8, RotationMethod::UnifDiag, 1)).unwrap();
        for (t, x) in stream(12, 3000, 2).iter().enumerate() {
            p.ingest(x).unwrap();
            if (t + 1) % 5 == 0 {
                let cov = p.model().covariance();
                let rotated = cov.rotated(p.model().transform().matrix()).unwrap();
                assert!(rotated.diagonal_residual() <= 1e-6 * cov.tau(), "t = {t}");
                assert!(p.model().basis().orthonormality_residual() <= 1e-6);
            }
        }
        assert_eq!(p.samples_seen(), 3000);
        assert_eq!(p.refits(), 1 + 3000 / 5);
    }

    #[test]
    fn identical_streams_give_identical_models() {
        let data = stream(9, 400, 3);
        for method in [RotationMethod::Random, RotationMethod::IsoHash, RotationMethod::UnifDiag] {
            let config = StreamPipelineConfig::new(4, method, 11);
            let mut a = StreamPipeline::new(9, config.clone()).unwrap();
            let mut b = StreamPipeline::new(9, config).unwrap();
            for x in &data {
                let ca = a.ingest_and_encode(x).unwrap();
                let cb = b.ingest_and_encode(x).unwrap();
                assert_eq!(ca, cb);
                assert_eq!(a.model(), b.model());
            }
        }
    }

    #[test]
    fn rejects_itq_and_bad_input() {
        assert!(StreamPipeline::new(5, StreamPipelineConfig::new(2, RotationMethod::Itq, 0)).is_err());
        let mut cfg = StreamPipelineConfig::new(2, RotationMethod::None, 0);
        cfg.refit_every = 0;
        assert!(StreamPipeline::new(5, cfg).is_err());
        let mut p = StreamPipeline::new(5, StreamPipelineConfig::new(2, RotationMethod::None, 0)).unwrap();
        assert!(p.ingest(&[1.0; 4]).is_err());
        assert!(p.ingest(&[1.0, f64::NAN, 0.0, 0.0, 0.0]).is_err());
        assert_eq!(p.samples_seen(), 0);
    }

    #[test]
    fn tracked_covariance_matches_projected_sample_scale() {
        let mut p = StreamPipeline::new(10, StreamPipelineConfig::new(2, RotationMethod::None, 0)).unwrap();
        for x in stream(10, 2000, 4) {
            p.ingest(&x).unwrap();
        }
        // top two variances are 36 and 25
        let diag = p.model().covariance().diagonal();
        assert!((diag[0] + diag[1] - 61.0).abs() < 61.0 * 0.35, "{diag:?}");
    }
}
