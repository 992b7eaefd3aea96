use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

pub const LINEAR_RIDGE: f64 = 1e-6;

/// Ridge regression of `y` on `[phi, z * phi, z]`, refit from running
/// sufficient statistics so that every fit uses all data seen so far.
#[derive(Debug, Clone)]
pub struct LinearSLearner {
    dim: usize,
    ridge: f64,
    xtx: Array2<f64>,
    xty: Array1<f64>,
    arm_counts: [usize; 2],
    coef: Option<Array1<f64>>,
}

impl LinearSLearner {
    pub fn new(feature_dim: usize) -> Self {
        Self::with_ridge(feature_dim, LINEAR_RIDGE)
    }

    pub fn with_ridge(feature_dim: usize, ridge: f64) -> Self {
        let d = 2 * feature_dim + 1;
        Self {
            dim: feature_dim,
            ridge,
            xtx: Array2::zeros((d, d)),
            xty: Array1::zeros(d),
            arm_counts: [0, 0],
            coef: None,
        }
    }

    pub fn rows_seen(&self) -> usize {
        self.arm_counts[0] + self.arm_counts[1]
    }

    pub fn observe(&mut self, phi: ArrayView2<'_, f64>, z: &[bool], y: &[f64]) -> Result<()> {
        let n = phi.nrows();
        crate::error::ensure_len("cate feature width", self.dim, phi.ncols())?;
        crate::error::ensure_len("cate treatments", n, z.len())?;
        crate::error::ensure_len("cate outcomes", n, y.len())?;
        let p = self.dim;
        let mut design = Array2::zeros((n, 2 * p + 1));
        for i in 0..n {
            let zi = z[i] as u8 as f64;
            let mut row = design.row_mut(i);
            for j in 0..p {
                row[j] = phi[[i, j]];
                row[p + j] = zi * phi[[i, j]];
            }
            row[2 * p] = zi;
            self.arm_counts[z[i] as usize] += 1;
        }
        self.xtx += &design.t().dot(&design);
        self.xty += &design.t().dot(&ArrayView1::from(y));
        Ok(())
    }

    pub fn refit(&mut self) -> Result<()> {
        for (arm, &count) in self.arm_counts.iter().enumerate() {
            if count == 0 {
                return Err(Error::Fit(format!(
                    "no rows with z = {arm}; both arms are needed, so the policy must keep exploring"
                )));
            }
        }
        let d = self.xty.len();
        let mut a = DMatrix::from_fn(d, d, |r, c| self.xtx[[r, c]]);
        for k in 0..d {
            a[(k, k)] += self.ridge;
        }
        let chol = a
            .cholesky()
            .ok_or_else(|| Error::Fit("ridge system is not positive definite".into()))?;
        let beta = chol.solve(&DVector::from_iterator(d, self.xty.iter().copied()));
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite {
                context: "linear CATE coefficients".into(),
            });
        }
        self.coef = Some(Array1::from_iter(beta.iter().copied()));
        Ok(())
    }

    fn coef(&self) -> Result<&Array1<f64>> {
        self.coef
            .as_ref()
            .ok_or_else(|| Error::State("linear CATE model has not been fitted".into()))
    }

    pub fn predict_outcome(&self, phi: ArrayView2<'_, f64>, z: bool) -> Result<Vec<f64>> {
        let beta = self.coef()?;
        crate::error::ensure_len("cate feature width", self.dim, phi.ncols())?;
        let p = self.dim;
        let base = phi.dot(&beta.slice(ndarray::s![..p]));
        if !z {
            return Ok(base.to_vec());
        }
        let lift = phi.dot(&beta.slice(ndarray::s![p..2 * p])) + beta[2 * p];
        Ok((base + lift).to_vec())
    }

    pub fn predict_cate(&self, phi: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let beta = self.coef()?;
        crate::error::ensure_len("cate feature width", self.dim, phi.ncols())?;
        let p = self.dim;
        Ok((phi.dot(&beta.slice(ndarray::s![p..2 * p])) + beta[2 * p]).to_vec())
    }
}
