use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

const RIDGE: f64 = 1e-10;

/// `f(z) = sum_i a_i k(z, c_i)` with the Gaussian kernel
/// `k(z, z') = exp(-|z - z'|^2 / (2 sigma^2))`.
#[derive(Debug, Clone, PartialEq)]
pub struct RkhsFunction {
    pub centers: Vec<Vec<f64>>,
    pub coefficients: Vec<f64>,
    pub sigma: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl RkhsFunction {
    pub fn new(centers: Vec<Vec<f64>>, coefficients: Vec<f64>, sigma: f64) -> Result<Self> {
        if centers.len() != coefficients.len() {
            return Err(Error::Config("one coefficient per center".into()));
        }
        if !(sigma > 0.0) {
            return Err(Error::Config("kernel bandwidth must be positive".into()));
        }
        if let Some(d) = centers.first().map(Vec::len) {
            if centers.iter().any(|c| c.len() != d) {
                return Err(Error::Config("centers differ in dimension".into()));
            }
        }
        Ok(Self {
            centers,
            coefficients,
            sigma,
        })
    }

    /// Up to `max_centers` centers uniform in `[0, 1]^dim`, coefficients uniform in `[-1, 1]`.
    pub fn random<R: Rng + ?Sized>(dim: usize, max_centers: usize, sigma: f64, rng: &mut R) -> Self {
        let m = rng.random_range(1..=max_centers);
        let centers = (0..m).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect();
        let coefficients = (0..m).map(|_| rng.random_range(-1.0..=1.0)).collect();
        Self {
            centers,
            coefficients,
            sigma,
        }
    }

    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        (-sq_dist(a, b) / (2.0 * self.sigma * self.sigma)).exp()
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        self.centers.iter().zip(&self.coefficients).map(|(c, a)| a * self.kernel(z, c)).sum()
    }

    pub fn gradient(&self, z: &[f64]) -> Vec<f64> {
        let s2 = self.sigma * self.sigma;
        let mut g = vec![0.0; z.len()];
        for (c, a) in self.centers.iter().zip(&self.coefficients) {
            let k = a * self.kernel(z, c);
            for (gi, (zi, ci)) in g.iter_mut().zip(z.iter().zip(c)) {
                *gi -= k * (zi - ci) / s2;
            }
        }
        g
    }

    /// `f - g` as a single expansion over the union of centers. Shared
    /// centers are merged.
    pub fn difference(&self, other: &Self) -> Result<Self> {
        if self.sigma != other.sigma {
            return Err(Error::Config("functions use different kernels".into()));
        }
        let mut centers = self.centers.clone();
        let mut coefficients = self.coefficients.clone();
        for (c, a) in other.centers.iter().zip(&other.coefficients) {
            match centers.iter().position(|x| x == c) {
                Some(k) => coefficients[k] -= a,
                None => {
                    centers.push(c.clone());
                    coefficients.push(-a);
                }
            }
        }
        Self::new(centers, coefficients, self.sigma)
    }

    pub fn gram(&self) -> DMatrix<f64> {
        let m = self.centers.len();
        DMatrix::from_fn(m, m, |i, j| self.kernel(&self.centers[i], &self.centers[j]))
    }

    /// `sqrt(a' G a)`. A negative quadratic form (round-off on a nearly
    /// singular Gram) is recomputed with a small ridge.
    pub fn norm(&self) -> f64 {
        let a = DVector::from_column_slice(&self.coefficients);
        let g = self.gram();
        let q = a.dot(&(&g * &a));
        if q >= 0.0 {
            return q.sqrt();
        }
        log::warn!("Gram quadratic form {q:e} is negative; adding a {RIDGE:e} ridge");
        let ridged = g + DMatrix::identity(a.len(), a.len()) * RIDGE;
        a.dot(&(&ridged * &a)).max(0.0).sqrt()
    }

    /// `|| d/dz_i k(z, .) ||_H`, the square root of the mixed second
    /// derivative of the kernel at coincident points. Constant for the
    /// Gaussian kernel.
    pub fn kernel_gradient_norm(&self) -> f64 {
        1.0 / self.sigma
    }
}

/// Largest ratio of `|grad f(z) - grad g(z)|` to
/// `|f - g|_H * |(|d_i k(z, .)|_H)_i|` over `points`. Zero when the bound is zero.
pub fn lemma1_ratio(f: &RkhsFunction, g: &RkhsFunction, points: &[Vec<f64>]) -> Result<f64> {
    let diff = f.difference(g)?;
    let norm = diff.norm();
    let mut worst: f64 = 0.0;
    for z in points {
        let (gf, gg) = (f.gradient(z), g.gradient(z));
        let gap = gf.iter().zip(&gg).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let per_coord = f.kernel_gradient_norm();
        let bound = norm * per_coord * (z.len() as f64).sqrt();
        let ratio = if bound > 0.0 {
            gap / bound
        } else if gap > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        worst = worst.max(ratio);
    }
    Ok(worst)
}

/// Random pairs in `[0, 1]^dim` with at most 20 centers each.
pub fn lemma1_trials<R: Rng + ?Sized>(trials: usize, dim: usize, points_per_trial: usize, rng: &mut R) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let sigma = rng.random_range(0.1..1.5);
        let f = RkhsFunction::random(dim, 20, sigma, rng);
        let g = RkhsFunction::random(dim, 20, sigma, rng);
        let points: Vec<Vec<f64>> = (0..points_per_trial)
            .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
            .collect();
        worst = worst.max(lemma1_ratio(&f, &g, &points)?);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::theorychecks::finite_difference;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_functions_have_zero_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = RkhsFunction::random(5, 20, 0.5, &mut rng);
        assert_eq!(lemma1_ratio(&f, &f, &[vec![0.3; 5]]).unwrap(), 0.0);
        assert_eq!(f.difference(&f).unwrap().norm(), 0.0);
    }

    #[test]
    fn kernel_gradient_norm_from_mixed_derivative() {
        // d^2 k / dz_i dz'_i at z = z' by finite differences on both arguments.
        let f = RkhsFunction::new(vec![], vec![], 0.37).unwrap();
        let z = [0.2, 0.7, 0.4];
        let h = 1e-4;
        for i in 0..3 {
            let shift = |x: &[f64], d: f64| {
                let mut y = x.to_vec();
                y[i] += d;
                y
            };
            let mixed = (f.kernel(&shift(&z, h), &shift(&z, h)) - f.kernel(&shift(&z, h), &shift(&z, -h))
                - f.kernel(&shift(&z, -h), &shift(&z, h))
                + f.kernel(&shift(&z, -h), &shift(&z, -h)))
                / (4.0 * h * h);
            assert!((mixed.sqrt() - f.kernel_gradient_norm()).abs() < 1e-5, "{mixed}");
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = RkhsFunction::random(4, 20, 0.6, &mut rng);
        let z = vec![0.1, 0.5, 0.9, 0.3];
        let fd = finite_difference(|x| Ok(f.value(x)), &z, 1e-6).unwrap();
        for (a, b) in f.gradient(&z).iter().zip(&fd) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn norm_is_symmetric_and_vanishes_on_equal_functions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = RkhsFunction::random(5, 20, 0.8, &mut rng);
        let g = RkhsFunction::random(5, 20, 0.8, &mut rng);
        let (a, b) = (f.difference(&g).unwrap().norm(), g.difference(&f).unwrap().norm());
        assert!((a - b).abs() < 1e-12 && a > 0.0);
        // Same function written with a split coefficient.
        let mut h = f.clone();
        h.centers.push(f.centers[0].clone());
        h.coefficients[0] *= 0.5;
        h.coefficients.push(f.coefficients[0] * 0.5);
        assert!(f.difference(&h).unwrap().norm() < 1e-7);
        for k in 0..50 {
            let z = vec![k as f64 / 49.0; 5];
            assert!((f.value(&z) - h.value(&z)).abs() < 1e-12);
        }
    }

    #[test]
    fn lemma1_holds_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(lemma1_trials(200, 5, 10, &mut rng).unwrap() <= 1.0 + 1e-8);
    }
}
