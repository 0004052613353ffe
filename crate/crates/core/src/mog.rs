//! Mixture-of-Gaussians prior over the reduced space: density, sampling,
//! the Gaussian-to-mixture KL approximation, and DP-EM estimation.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, norm2, Matrix};
use crate::privacy::{add_gaussian_noise, Mechanism};
use crate::rng::Rng;

pub const VARIANCE_FLOOR: f64 = 1e-6;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Initial per-coordinate variance of every component.
const INIT_VARIANCE: f64 = 0.25;
/// Weight given back to a component whose noisy count collapsed.
const REVIVED_WEIGHT: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        if mean.len() != variance.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                actual: variance.len(),
            });
        }
        if variance.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Domain("Gaussian variances must be > 0".into()));
        }
        Ok(DiagGaussian { mean, variance })
    }

    pub fn standard(dim: usize) -> Self {
        DiagGaussian {
            mean: vec![0.0; dim],
            variance: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_density(&self, z: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((x, m), v) in z.iter().zip(&self.mean).zip(&self.variance) {
            acc += -0.5 * (LN_2PI + v.ln() + (x - m) * (x - m) / v);
        }
        acc
    }
}

/// `KL(a ‖ b)` between diagonal Gaussians.
pub fn kl_diag_gaussians(a: &DiagGaussian, b: &DiagGaussian) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.dim() {
        let (va, vb) = (a.variance[i], b.variance[i]);
        let dm = a.mean[i] - b.mean[i];
        acc += (vb / va).ln() + va / vb + dm * dm / vb - 1.0;
    }
    0.5 * acc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoG {
    pub weights: Vec<f64>,
    pub components: Vec<DiagGaussian>,
}

impl MoG {
    pub fn new(weights: Vec<f64>, components: Vec<DiagGaussian>) -> Result<Self> {
        if weights.is_empty() || weights.len() != components.len() {
            return Err(Error::Domain("mixture needs one weight per component".into()));
        }
        let dim = components[0].dim();
        if components.iter().any(|c| c.dim() != dim) {
            return Err(Error::Domain("mixture components differ in dimension".into()));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!(
                "mixture weights must lie on the simplex (sum {total})"
            )));
        }
        Ok(MoG {
            weights,
            components,
        })
    }

    pub fn single(component: DiagGaussian) -> Self {
        MoG {
            weights: vec![1.0],
            components: vec![component],
        }
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    /// `log Σ_k π_k N(z; μ_k, Σ_k)`.
    pub fn log_density(&self, z: &[f64]) -> f64 {
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| w.ln() + c.log_density(z))
            .collect();
        log_sum_exp(&terms)
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.k() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let c = &self.components[k];
        c.mean
            .iter()
            .zip(&c.variance)
            .map(|(m, v)| m + v.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    fn check_invariants(&self) -> bool {
        let total: f64 = self.weights.iter().sum();
        (total - 1.0).abs() <= 1e-12
            && self.weights.iter().all(|w| *w >= 0.0)
            && self
                .components
                .iter()
                .all(|c| c.variance.iter().all(|v| *v >= VARIANCE_FLOOR))
    }
}

/// Variational approximation of `KL(q ‖ prior)` for a single Gaussian `q`:
/// `−log Σ_b π_b exp(−KL(q ‖ N_b))`.
///
/// It is exact for a one-component prior and an upper bound on the true
/// divergence otherwise.
pub fn kl_gauss_to_mog(q: &DiagGaussian, prior: &MoG) -> f64 {
    kl_gauss_to_mog_parts(q, prior).0
}

/// The KL approximation and the softmax weights `w_b ∝ π_b exp(−KL_b)`.
fn kl_gauss_to_mog_parts(q: &DiagGaussian, prior: &MoG) -> (f64, Vec<f64>) {
    let logits: Vec<f64> = prior
        .weights
        .iter()
        .zip(&prior.components)
        .map(|(w, c)| w.ln() - kl_diag_gaussians(q, c))
        .collect();
    let lse = log_sum_exp(&logits);
    let weights = logits.iter().map(|l| (l - lse).exp()).collect();
    (-lse, weights)
}

/// Value of [`kl_gauss_to_mog`] with its gradients with respect to the mean
/// and the variance of `q`.
pub fn kl_gauss_to_mog_grad(q: &DiagGaussian, prior: &MoG) -> (f64, Vec<f64>, Vec<f64>) {
    let (value, w) = kl_gauss_to_mog_parts(q, prior);
    let d = q.dim();
    let mut d_mean = vec![0.0; d];
    let mut d_var = vec![0.0; d];
    for (wb, c) in w.iter().zip(&prior.components) {
        if *wb == 0.0 {
            continue;
        }
        for i in 0..d {
            d_mean[i] += wb * (q.mean[i] - c.mean[i]) / c.variance[i];
            d_var[i] += wb * 0.5 * (1.0 / c.variance[i] - 1.0 / q.variance[i]);
        }
    }
    (value, d_mean, d_var)
}

/// Deterministic, data-independent starting means: the first `k` points of
/// a Halton sequence mapped to `[−1, 1]^d` and scaled by 0.5.
pub fn lattice_means(k: usize, dim: usize) -> Vec<Vec<f64>> {
    const PRIMES: [u64; 24] = [
        2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
    ];
    (0..k)
        .map(|i| {
            (0..dim)
                .map(|j| {
                    let base = PRIMES[j % PRIMES.len()] + 97 * (j / PRIMES.len()) as u64;
                    0.5 * (2.0 * radical_inverse(i as u64 + 1, base) - 1.0)
                })
                .collect()
        })
        .collect()
}

fn radical_inverse(mut n: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while n > 0 {
        out += (n % base) as f64 * inv;
        n /= base;
        inv /= base as f64;
    }
    out
}

pub fn initial_mixture(k: usize, dim: usize) -> MoG {
    MoG {
        weights: vec![1.0 / k as f64; k],
        components: lattice_means(k, dim)
            .into_iter()
            .map(|mean| DiagGaussian {
                mean,
                variance: vec![INIT_VARIANCE; dim],
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmTrace {
    /// Mean log-likelihood of the data under the parameters entering each iteration.
    pub log_likelihood: Vec<f64>,
    /// Components revived after their noisy count collapsed, per iteration.
    pub revived: Vec<usize>,
}

pub fn em_mechanism(sigma: f64, components: usize, iterations: u64) -> Mechanism {
    Mechanism::DpEm {
        sigma,
        components,
        iterations,
    }
}

/// DP-EM on rows with L2 norm at most 1.
///
/// Each M-step releases the sensitivity-1 sufficient statistics (the
/// component counts, the per-component first moments and the per-component
/// diagonal second moments; `2K + 1` releases) with `N(0, σ_e²)` noise and
/// derives `π`, `μ_k`, `Σ_k` from them. Weights are projected onto the
/// simplex by clamping and renormalizing; variances are floored.
pub fn dp_em_fit(
    data: &Matrix,
    k: usize,
    iterations: usize,
    sigma: f64,
    rng: &mut Rng,
) -> Result<(MoG, EmTrace)> {
    dp_em_fit_from(data, initial_mixture(k, data.cols()), iterations, sigma, rng)
}

pub fn dp_em_fit_from(
    data: &Matrix,
    init: MoG,
    iterations: usize,
    sigma: f64,
    rng: &mut Rng,
) -> Result<(MoG, EmTrace)> {
    let n = data.rows();
    let d = data.cols();
    let k = init.k();
    if iterations == 0 {
        return Err(Error::Domain("DP-EM needs at least one iteration".into()));
    }
    if n < k {
        return Err(Error::DegenerateData(format!("DP-EM needs N >= K, got {n} < {k}")));
    }
    if init.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: init.dim(),
        });
    }
    if !(sigma >= 0.0) {
        return Err(Error::Domain(format!("EM noise scale {sigma} must be >= 0")));
    }
    if data.iter_rows().any(|r| norm2(r) > 1.0 + 1e-9) {
        return Err(Error::Domain("DP-EM rows must have L2 norm <= 1".into()));
    }

    let init_means = lattice_means(k, d);
    let mut mog = init;
    let mut trace = EmTrace {
        log_likelihood: Vec::with_capacity(iterations),
        revived: Vec::with_capacity(iterations),
    };
    let mut resp = vec![0.0; k];
    for _ in 0..iterations {
        let mut counts = vec![0.0; k];
        let mut first = vec![vec![0.0; d]; k];
        let mut second = vec![vec![0.0; d]; k];
        let mut ll = 0.0;
        for z in data.iter_rows() {
            for (j, r) in resp.iter_mut().enumerate() {
                *r = mog.weights[j].ln() + mog.components[j].log_density(z);
            }
            let lse = log_sum_exp(&resp);
            ll += lse;
            for j in 0..k {
                let r = (resp[j] - lse).exp();
                counts[j] += r;
                for i in 0..d {
                    first[j][i] += r * z[i];
                    second[j][i] += r * z[i] * z[i];
                }
            }
        }
        trace.log_likelihood.push(ll / n as f64);

        add_gaussian_noise(&mut counts, sigma, rng);
        for j in 0..k {
            add_gaussian_noise(&mut first[j], sigma, rng);
            add_gaussian_noise(&mut second[j], sigma, rng);
        }

        let mut weights: Vec<f64> = counts.iter().map(|c| c.max(0.0)).collect();
        let mut revived = 0;
        let mut components = Vec::with_capacity(k);
        for j in 0..k {
            if counts[j] <= 1.0 {
                // Collapsed component: restart it at its lattice point.
                revived += 1;
                weights[j] = 0.0;
                components.push(DiagGaussian {
                    mean: init_means[j].clone(),
                    variance: vec![INIT_VARIANCE; d],
                });
                continue;
            }
            let mean: Vec<f64> = first[j].iter().map(|s| s / counts[j]).collect();
            let variance = second[j]
                .iter()
                .zip(&mean)
                .map(|(q, m)| (q / counts[j] - m * m).max(VARIANCE_FLOOR))
                .collect();
            components.push(DiagGaussian { mean, variance });
        }
        let live: f64 = weights.iter().sum();
        if live <= 0.0 {
            weights = vec![1.0 / k as f64; k];
        } else {
            weights.iter_mut().for_each(|w| *w /= live);
            if revived > 0 {
                for w in weights.iter_mut() {
                    if *w == 0.0 {
                        *w = REVIVED_WEIGHT;
                    }
                }
            }
        }
        normalize(&mut weights);
        mog = MoG {
            weights,
            components,
        };
        trace.revived.push(revived);
        debug_assert!(mog.check_invariants());
    }
    Ok((mog, trace))
}

fn normalize(w: &mut [f64]) {
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    // Fold the rounding residue into the largest weight so Σπ = 1 to ~1 ulp.
    let residue = 1.0 - w.iter().sum::<f64>();
    let big = crate::data::argmax(w);
    w[big] += residue;
}
