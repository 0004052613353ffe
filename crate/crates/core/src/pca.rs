//! Differentially private PCA: the frozen encoder mean `f` and its
//! reconstruction map `g`.
//!
//! The column mean is released with the Gaussian mechanism (sensitivity
//! `2/N` for unit-norm rows), the centered second-moment matrix
//! `A = Σ (x − m)(x − m)ᵀ` is perturbed with a symmetric Gaussian matrix of
//! scale `σ_p`, and the top eigenvectors of the noisy matrix become the
//! projection. Both releases are accounted as Gaussian releases at `σ_p`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, Matrix};
use crate::privacy::{add_gaussian_noise, Mechanism};
use crate::rng::Rng;

/// Number of Gaussian releases one [`fit`] makes.
pub const PCA_RELEASES: u64 = 2;

const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `d_prime × d`, row-major, rows orthonormal.
    pub components: Vec<f64>,
    /// Eigenvalues of the noisy second-moment matrix, nonincreasing.
    pub eigenvalues: Vec<f64>,
    pub d: usize,
    pub d_prime: usize,
}

impl PcaModel {
    pub fn component(&self, k: usize) -> &[f64] {
        &self.components[k * self.d..(k + 1) * self.d]
    }

    /// `f(x) = components · (x − mean)`.
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                actual: x.len(),
            });
        }
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok((0..self.d_prime)
            .map(|k| dot(self.component(k), &centered))
            .collect())
    }

    /// `g(z) = componentsᵀ · z + mean`.
    pub fn inverse_transform(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.d_prime {
            return Err(Error::DimensionMismatch {
                expected: self.d_prime,
                actual: z.len(),
            });
        }
        let mut x = self.mean.clone();
        for (k, &zk) in z.iter().enumerate() {
            for (xi, ci) in x.iter_mut().zip(self.component(k)) {
                *xi += zk * ci;
            }
        }
        Ok(x)
    }

    pub fn transform_all(&self, data: &Matrix) -> Result<Matrix> {
        let mut out = Matrix::zeros(0, self.d_prime);
        for r in data.iter_rows() {
            out.push_row(&self.transform(r)?)?;
        }
        Ok(out)
    }

    pub fn mechanism(sigma: f64) -> Mechanism {
        Mechanism::GaussianRelease {
            sigma,
            releases: PCA_RELEASES,
        }
    }
}

/// `Σ (x − mean)(x − mean)ᵀ`, accumulated in row order.
pub fn second_moment(data: &Matrix, mean: &[f64]) -> DMatrix<f64> {
    let d = data.cols();
    let mut a = DMatrix::<f64>::zeros(d, d);
    let mut c = vec![0.0; d];
    for r in data.iter_rows() {
        for (ci, (x, m)) in c.iter_mut().zip(r.iter().zip(mean)) {
            *ci = x - m;
        }
        for i in 0..d {
            let ci = c[i];
            if ci == 0.0 {
                continue;
            }
            for j in i..d {
                a[(i, j)] += ci * c[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            a[(i, j)] = a[(j, i)];
        }
    }
    a
}

/// Symmetric matrix with i.i.d. `N(0, σ²)` upper-triangle (and diagonal)
/// entries mirrored below.
pub fn symmetric_noise(d: usize, sigma: f64, rng: &mut Rng) -> DMatrix<f64> {
    let mut e = DMatrix::<f64>::zeros(d, d);
    if sigma == 0.0 {
        return e;
    }
    for i in 0..d {
        for j in i..d {
            let v = sigma * rng.sample::<f64, _>(StandardNormal);
            e[(i, j)] = v;
            e[(j, i)] = v;
        }
    }
    e
}

/// Fits DP-PCA at noise scale `σ_p` on rows of L2 norm at most 1.
pub fn fit(data: &Matrix, d_prime: usize, sigma: f64, rng: &mut Rng) -> Result<PcaModel> {
    let n = data.rows();
    let d = data.cols();
    if n < 2 {
        return Err(Error::DegenerateData(format!("PCA needs N >= 2 rows, got {n}")));
    }
    if d_prime == 0 || d_prime > d {
        return Err(Error::Domain(format!(
            "reduced dimension {d_prime} must lie in 1..={d}"
        )));
    }
    if !(sigma >= 0.0) {
        return Err(Error::Domain(format!("PCA noise scale {sigma} must be >= 0")));
    }
    if let Some((i, r)) = data
        .iter_rows()
        .enumerate()
        .find(|(_, r)| norm2(r) > 1.0 + NORM_TOLERANCE)
    {
        return Err(Error::Domain(format!(
            "row {i} has L2 norm {} > 1; clip before PCA",
            norm2(r)
        )));
    }

    let mut mean = vec![0.0; d];
    for r in data.iter_rows() {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    add_gaussian_noise(&mut mean, sigma * 2.0 / n as f64, rng);

    let noisy = second_moment(data, &mean) + symmetric_noise(d, sigma, rng);
    let eig = SymmetricEigen::new(noisy);

    let mut order: Vec<usize> = (0..d).collect();
    // Stable sort: equal eigenvalues keep their original index order.
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut components: Vec<Vec<f64>> = order[..d_prime]
        .iter()
        .map(|&k| eig.eigenvectors.column(k).iter().copied().collect())
        .collect();
    gram_schmidt(&mut components);
    for c in components.iter_mut() {
        orient(c);
    }
    Ok(PcaModel {
        mean,
        components: components.concat(),
        eigenvalues: order[..d_prime]
            .iter()
            .map(|&k| eig.eigenvalues[k])
            .collect(),
        d,
        d_prime,
    })
}

/// Modified Gram–Schmidt over the rows, in order.
fn gram_schmidt(rows: &mut [Vec<f64>]) {
    for i in 0..rows.len() {
        let (done, rest) = rows.split_at_mut(i);
        let v = &mut rest[0];
        for u in done.iter() {
            let p = dot(u, v);
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi -= p * ui;
            }
        }
        let n = norm2(v);
        if n > 0.0 {
            v.iter_mut().for_each(|x| *x /= n);
        }
    }
}

/// Fixes the sign so the largest-magnitude entry is positive.
fn orient(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}
