use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_dim, ensure_finite, HqhError, Result};

/// A `d × n` collection of descriptors, one point per column.
#[derive(Clone, Debug, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
}

impl DataMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        ensure_finite(values.as_slice(), "data matrix")?;
        if values.nrows() == 0 && values.ncols() > 0 {
            return Err(HqhError::invalid("data matrix needs dimension d >= 1"));
        }
        Ok(DataMatrix { values })
    }

    /// Builds a matrix from points given as rows of equal length.
    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let d = points.first().map_or(0, |p| p.len());
        for p in points {
            ensure_dim("point dimension", d, p.len())?;
        }
        let values = DMatrix::from_fn(d, points.len(), |i, j| points[j][i]);
        Self::new(values)
    }

    /// Column-major buffer of length `d * n`, each point contiguous.
    pub fn from_column_major(d: usize, n: usize, data: Vec<f64>) -> Result<Self> {
        ensure_dim("column-major buffer", d * n, data.len())?;
        Self::new(DMatrix::from_vec(d, n, data))
    }

    pub fn empty() -> Self {
        DataMatrix {
            values: DMatrix::zeros(0, 0),
        }
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.ncols() == 0
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    /// Point `t` as a contiguous slice.
    pub fn point(&self, t: usize) -> &[f64] {
        let d = self.dim();
        &self.values.as_slice()[t * d..(t + 1) * d]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.len()).map(move |t| self.point(t))
    }

    pub fn select(&self, indices: &[usize]) -> DataMatrix {
        let d = self.dim();
        let mut data = Vec::with_capacity(d * indices.len());
        for &t in indices {
            data.extend_from_slice(self.point(t));
        }
        DataMatrix {
            values: DMatrix::from_vec(d, indices.len(), data),
        }
    }

    pub fn mean(&self) -> DVector<f64> {
        let n = self.len().max(1) as f64;
        self.values.column_sum() / n
    }

    /// Copy with `mean` subtracted from every column.
    pub fn centered(&self, mean: &DVector<f64>) -> Result<DataMatrix> {
        ensure_dim("centering mean", self.dim(), mean.len())?;
        let mut values = self.values.clone();
        for mut col in values.column_iter_mut() {
            col -= mean;
        }
        Ok(DataMatrix { values })
    }
}

/// Mean estimate used to center inputs before projection.
#[derive(Clone, Debug, PartialEq)]
pub struct CenteringState {
    mean: DVector<f64>,
    count: u64,
}

impl CenteringState {
    pub fn zero(d: usize) -> Self {
        CenteringState {
            mean: DVector::zeros(d),
            count: 0,
        }
    }

    pub fn from_parts(mean: DVector<f64>, count: u64) -> Result<Self> {
        ensure_finite(mean.as_slice(), "centering mean")?;
        if count == 0 && mean.iter().any(|&m| m != 0.0) {
            return Err(HqhError::invalid("an empty centering state must have a zero mean"));
        }
        Ok(CenteringState { mean, count })
    }

    /// Batch column mean of `x`.
    pub fn fit(x: &DataMatrix) -> Self {
        if x.is_empty() {
            return Self::zero(x.dim());
        }
        CenteringState {
            mean: x.mean(),
            count: x.len() as u64,
        }
    }

    /// Folds one point into the running mean.
    pub fn update(&mut self, x: &[f64]) -> Result<()> {
        ensure_dim("running mean update", self.mean.len(), x.len())?;
        ensure_finite(x, "running mean update")?;
        self.count += 1;
        let w = 1.0 / self.count as f64;
        for (m, &v) in self.mean.iter_mut().zip(x) {
            *m += (v - *m) * w;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn center_into(&self, x: &[f64], out: &mut [f64]) {
        for ((o, &v), &m) in out.iter_mut().zip(x).zip(self.mean.iter()) {
            *o = v - m;
        }
    }
}
