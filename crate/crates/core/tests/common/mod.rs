//! Oracles shared by the integration suites.
//!
//! The accountant tables are produced by `tests/oracles/accountant_oracle.py`
//! (mpmath, 60 digits) and frozen here.

#![allow(dead_code)]

use dpsynth_core::linalg::{norm2, Matrix};
use dpsynth_core::mog::{DiagGaussian, MoG};
use dpsynth_core::neural::{elbo_with_noise, DecoderHead, Networks, VarianceMode};
use dpsynth_core::pca::PcaModel;
use dpsynth_core::rng::{seeded, Rng};
use dpsynth_core::trainer::{batch_indices, example_eps, TrainConfig};
use rand::Rng as _;
use rand_distr::StandardNormal;

/// `(α, s, σ_s, moment)` for the DP-SGD moment bound.
pub const DPSGD_GRID: [(u32, f64, f64, f64); 20] = [
    (1, 0.001, 1.0, 0.0),
    (1, 0.01, 1.4, 0.0),
    (1, 0.05, 2.0, 0.0),
    (1, 0.1, 4.0, 0.0),
    (2, 0.001, 1.0, 4.3456101587982083067e-6),
    (2, 0.01, 1.4, 0.00018755614627710758536),
    (2, 0.05, 2.0, 0.0022445823979318030529),
    (2, 0.1, 4.0, 0.0017689567255473933971),
    (4, 0.001, 1.0, 0.000016302632883396289833),
    (4, 0.01, 1.4, 0.00076487958632273778581),
    (4, 0.05, 2.0, 0.0093933160417514244237),
    (4, 0.1, 4.0, 0.0087580343759508373616),
    (8, 0.001, 1.0, 0.43428582558218008927),
    (8, 0.01, 1.4, 0.028882524375088016917),
    (8, 0.05, 2.0, 0.050360083064344122612),
    (8, 0.1, 4.0, 0.039315113711822766984),
    (16, 0.001, 1.0, 6.3843085147172381797e+33),
    (16, 0.01, 1.4, 93450654059792033.328),
    (16, 0.05, 2.0, 324227676.04761846375),
    (16, 0.1, 4.0, 0.16709306676171233199),
];

/// `(α, K, σ_e, moment)` for the DP-EM moment bound.
pub const DPEM_GRID: [(f64, usize, f64, f64); 12] = [
    (1.0, 1, 1.0, 3.0),
    (1.0, 3, 20.0, 0.0175),
    (1.0, 5, 123.4, 0.00072237443162266305216),
    (3.0, 1, 1.0, 18.0),
    (3.0, 3, 20.0, 0.105),
    (3.0, 5, 123.4, 0.004334246589735978313),
    (10.0, 1, 1.0, 165.0),
    (10.0, 3, 20.0, 0.9625),
    (10.0, 5, 123.4, 0.039730593739246467869),
    (50.0, 1, 1.0, 3825.0),
    (50.0, 3, 20.0, 22.3125),
    (50.0, 5, 123.4, 0.92102740031889539151),
];

/// `(σ, α, rdp)` for one Gaussian release.
pub const GAUSSIAN_GRID: [(f64, f64, f64); 9] = [
    (0.5, 2.0, 4.0),
    (0.5, 7.5, 15.0),
    (0.5, 128.0, 256.0),
    (3.0, 2.0, 0.11111111111111111111),
    (3.0, 7.5, 0.41666666666666666667),
    (3.0, 128.0, 7.1111111111111111111),
    (117.0, 2.0, 0.000073051355102637153919),
    (117.0, 7.5, 0.0002739425816348893272),
    (117.0, 128.0, 0.0046752867265687778508),
];

/// (ε, optimal order) at δ = 1e-5 over orders 2..=128.
pub const GAUSS_SIGMA5_TO_DP: (f64, f64) = (0.97970522770709284743, 25.0);
pub const ZERO_CURVE_TO_DP: (f64, f64) = (0.090652956417088412112, 128.0);
/// Two Gaussian releases at σ = 3 plus 20 DP-EM steps with K = 3, σ_e = 20.
pub const COMPOSITE_TO_DP: (f64, f64) = (3.9215986886061491675, 7.0);
/// 840 DP-SGD steps at s = 300/63000, σ_s = 1.4, alone.
pub const MNIST_SGD_TO_DP: (f64, f64) = (1.3950989846657614216, 10.0);

pub fn rel_err(got: f64, want: f64) -> f64 {
    if want == 0.0 {
        got.abs()
    } else {
        ((got - want) / want).abs()
    }
}

/// Cyclic Jacobi eigensolver for a dense symmetric matrix (row-major).
/// Returns eigenvalues and eigenvectors as columns of `v`, unsorted.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut a = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

/// Top-`k` principal directions of the exactly centered data, via Jacobi.
pub fn dense_pca_basis(data: &Matrix, k: usize) -> Vec<Vec<f64>> {
    let (n, d) = (data.rows(), data.cols());
    let mean: Vec<f64> = (0..d).map(|j| data.iter_rows().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut a = vec![vec![0.0; d]; d];
    for r in data.iter_rows() {
        for i in 0..d {
            for j in 0..d {
                a[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    let (vals, vecs) = jacobi_eigen(&a);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&x, &y| vals[y].total_cmp(&vals[x]));
    order[..k].iter().map(|&c| (0..d).map(|r| vecs[r][c]).collect()).collect()
}

/// Sine of the largest principal angle between two orthonormal row bases,
/// bounded above by the Frobenius norm of the residual projection.
pub fn subspace_sine(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for u in b {
        let mut r = u.clone();
        for w in a {
            let p: f64 = w.iter().zip(u).map(|(x, y)| x * y).sum();
            for (ri, wi) in r.iter_mut().zip(w) {
                *ri -= p * wi;
            }
        }
        total += r.iter().map(|x| x * x).sum::<f64>();
    }
    total.sqrt()
}

pub fn pca_basis(m: &PcaModel) -> Vec<Vec<f64>> {
    (0..m.d_prime).map(|k| m.component(k).to_vec()).collect()
}

/// Rows with distinct per-axis spreads, scaled into the unit ball.
pub fn anisotropic_rows(n: usize, d: usize, rng: &mut Rng) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let r: Vec<f64> = (0..d)
                .map(|j| 0.3 / (1.0 + j as f64) * rng.sample::<f64, _>(StandardNormal) + 0.05)
                .collect();
            let s = norm2(&r).max(1.0);
            r.into_iter().map(|x| x / s).collect()
        })
        .collect();
    Matrix::from_rows(&rows).unwrap()
}

/// Two clusters centered at `±0.8 u` with `u = (1, …, 1)/√d` and spread
/// 0.05, clipped to the unit ball. Returns the rows and the true centers.
pub fn two_clusters(n: usize, d: usize, rng: &mut Rng) -> (Matrix, [Vec<f64>; 2]) {
    let c = 0.8 / (d as f64).sqrt();
    let centers = [vec![c; d], vec![-c; d]];
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let r: Vec<f64> = centers[i % 2]
                .iter()
                .map(|m| m + 0.05 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let s = norm2(&r).max(1.0);
            r.into_iter().map(|x| x / s).collect()
        })
        .collect();
    (Matrix::from_rows(&rows).unwrap(), centers)
}

/// Plain minibatch SGD on the ELBO with the trainer's batches and draws:
/// no clipping, no noise, sequential summation, `θ ← θ − lr · Σg / B`.
pub fn plain_sgd_reference(data: &Matrix, pca: &PcaModel, prior: &MoG, nets: &mut Networks, cfg: &TrainConfig) {
    let n = data.rows();
    let dp = nets.latent_dim();
    for step in 0..cfg.steps(n) {
        let idx = batch_indices(cfg, n, step);
        if idx.is_empty() {
            continue;
        }
        let mut sum = vec![0.0; nets.num_params()];
        for &i in &idx {
            let x = data.row(i);
            let z = pca.transform(x).unwrap();
            let eps = example_eps(cfg, step, i, dp);
            let (_, g) = elbo_with_noise(nets, prior, x, &z, &eps).unwrap();
            for (s, gi) in sum.iter_mut().zip(&g) {
                *s += gi;
            }
        }
        let mut p = nets.params();
        for (pi, si) in p.iter_mut().zip(&sum) {
            *pi += -cfg.learning_rate * (si / cfg.batch_size as f64);
        }
        nets.set_params(&p);
    }
}

/// Bit patterns of a parameter vector.
pub fn bits(p: &[f64]) -> Vec<u64> {
    p.iter().map(|x| x.to_bits()).collect()
}

/// One random gradient-check instance: `d = 6`, `d′ = 2`, hidden 5, a
/// random two-component prior, `L = 2` fixed draws. Returns the relative
/// error `‖g − g_fd‖ / max(‖g‖, ‖g_fd‖)` against central differences.
pub fn gradient_check(seed: u64, head: DecoderHead) -> f64 {
    let mut rng = seeded(seed);
    let (d, dp) = (6, 2);
    let nets = Networks::new(d, dp, 5, head, VarianceMode::Learned, &mut rng);
    let x: Vec<f64> = match head {
        DecoderHead::Bernoulli => (0..d).map(|_| f64::from(u8::from(rng.random::<bool>()))).collect(),
        DecoderHead::Gaussian => (0..d).map(|_| rng.random::<f64>() - 0.5).collect(),
    };
    let z: Vec<f64> = (0..dp).map(|_| rng.random::<f64>() - 0.5).collect();
    let comp = |rng: &mut Rng| {
        DiagGaussian::new(
            (0..dp).map(|_| rng.random::<f64>() - 0.5).collect(),
            (0..dp).map(|_| 0.2 + rng.random::<f64>()).collect(),
        )
        .unwrap()
    };
    let w = 0.2 + 0.6 * rng.random::<f64>();
    let prior = MoG::new(vec![w, 1.0 - w], vec![comp(&mut rng), comp(&mut rng)]).unwrap();
    let eps: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..dp).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();

    let (_, g) = elbo_with_noise(&nets, &prior, &x, &z, &eps).unwrap();
    let p0 = nets.params();
    let h = 1e-4;
    let mut probe = nets.clone();
    let mut fd = vec![0.0; p0.len()];
    for i in 0..p0.len() {
        let mut p = p0.clone();
        p[i] = p0[i] + h;
        probe.set_params(&p);
        let up = elbo_with_noise(&probe, &prior, &x, &z, &eps).unwrap().0.total;
        p[i] = p0[i] - h;
        probe.set_params(&p);
        let down = elbo_with_noise(&probe, &prior, &x, &z, &eps).unwrap().0.total;
        fd[i] = (up - down) / (2.0 * h);
    }
    let diff = norm2(&g.iter().zip(&fd).map(|(a, b)| a - b).collect::<Vec<_>>());
    diff / norm2(&g).max(norm2(&fd))
}
