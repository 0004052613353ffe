//! DP-SGD over the ELBO with the encoder mean and the prior held fixed.
//!
//! Each step draws a Poisson batch (every record joins independently with
//! probability `B/N`), clips per-example gradients to `C`, adds
//! `N(0, σ_s²C²I)` to their sum and divides by the constant `B`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::mog::MoG;
use crate::neural::{elbo_with_noise, per_example_gradients, standard_normal_vec, ElboTerms, Example, Networks};
use crate::pca::PcaModel;
use crate::privacy::{add_gaussian_noise, clip_l2_in_place, Mechanism, RdpCurve};
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Per-example gradient bound; `f64::INFINITY` disables clipping.
    #[serde(with = "crate::privacy::inf_scalar")]
    pub clip_norm: f64,
    pub noise_multiplier: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Monte-Carlo samples `L` per example.
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 200,
            clip_norm: 1.0,
            noise_multiplier: 1.4,
            learning_rate: 0.1,
            epochs: 5,
            mc_samples: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Domain("batch size must be >= 1".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Domain(format!("clip norm {} must be > 0", self.clip_norm)));
        }
        if !(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite()) {
            return Err(Error::Domain(format!(
                "noise multiplier {} must be finite and >= 0",
                self.noise_multiplier
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Domain(format!("learning rate {} must be > 0", self.learning_rate)));
        }
        if self.mc_samples == 0 {
            return Err(Error::Domain("need at least one Monte-Carlo sample".into()));
        }
        Ok(())
    }

    /// `T_s = epochs · ⌊N / B⌋`.
    pub fn steps(&self, n: usize) -> u64 {
        (self.epochs as u64) * (n / self.batch_size.max(1)) as u64
    }

    pub fn sampling_rate(&self, n: usize) -> f64 {
        self.batch_size as f64 / n as f64
    }
}

/// One logged step; `terms` is `None` when the sampled batch was empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub batch_size: usize,
    pub terms: Option<ElboTerms>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
    pub steps: u64,
    pub consumed: RdpCurve,
}

impl TrainLog {
    /// CSV with header `step,batch_size,recon,kl,total`; skipped steps leave
    /// the loss fields empty.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,batch_size,recon,kl,total\n");
        for r in &self.records {
            match r.terms {
                Some(t) => s.push_str(&format!("{},{},{},{},{}\n", r.step, r.batch_size, t.recon, t.kl, t.total)),
                None => s.push_str(&format!("{},{},,,\n", r.step, r.batch_size)),
            }
        }
        s
    }
}

/// Privacy cost of the whole run: `T_s` subsampled-Gaussian steps.
///
/// Zero steps cost nothing; `σ_s = 0` has no finite guarantee and yields an
/// all-infinite curve.
pub fn make_step_curve(cfg: &TrainConfig, n: usize, orders: &[f64]) -> Result<RdpCurve> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::DegenerateData("no training rows".into()));
    }
    let steps = cfg.steps(n);
    if steps == 0 {
        return RdpCurve::zeros(orders);
    }
    if cfg.noise_multiplier == 0.0 {
        return RdpCurve::new(orders.to_vec(), vec![f64::INFINITY; orders.len()]);
    }
    Mechanism::SubsampledSgd {
        noise_multiplier: cfg.noise_multiplier,
        sampling_rate: cfg.sampling_rate(n),
        steps,
    }
    .curve(orders)
}

fn streams(cfg: &TrainConfig) -> (SeedStream, SeedStream, SeedStream) {
    let root = SeedStream::from_master(cfg.seed).substream("sgd");
    (root.substream("batch"), root.substream("latent"), root.substream("noise"))
}

/// Indices in the Poisson batch of `step`, ascending.
pub fn batch_indices(cfg: &TrainConfig, n: usize, step: u64) -> Vec<usize> {
    let q = cfg.sampling_rate(n);
    let mut rng = streams(cfg).0.child(step).rng();
    (0..n).filter(|_| rng.random::<f64>() < q).collect()
}

/// Reparametrization draws for record `index` at `step`: `L` rows of `d′`.
pub fn example_eps(cfg: &TrainConfig, step: u64, index: usize, latent_dim: usize) -> Vec<Vec<f64>> {
    let mut rng = streams(cfg).1.child(step).child(index as u64).rng();
    (0..cfg.mc_samples)
        .map(|_| standard_normal_vec(latent_dim, &mut rng))
        .collect()
}

fn with_step(e: Error, step: u64) -> Error {
    match e {
        Error::NonFinite { what, .. } => Error::NonFinite {
            step: step as usize,
            what,
        },
        other => other,
    }
}

/// Runs DP-SGD in place on `nets`. `pca` and `prior` are read only.
pub fn train(
    data: &Matrix,
    pca: &PcaModel,
    prior: &MoG,
    nets: &mut Networks,
    cfg: &TrainConfig,
    orders: &[f64],
) -> Result<TrainLog> {
    cfg.validate()?;
    let n = data.rows();
    if n == 0 {
        return Err(Error::DegenerateData("no training rows".into()));
    }
    if pca.d_prime != nets.latent_dim() || prior.dim() != nets.latent_dim() {
        return Err(Error::DimensionMismatch {
            expected: nets.latent_dim(),
            actual: pca.d_prime,
        });
    }
    let consumed = make_step_curve(cfg, n, orders)?;
    let steps = cfg.steps(n);
    let z_means = pca.transform_all(data)?;
    let dp = nets.latent_dim();
    let noise_std = if cfg.noise_multiplier == 0.0 {
        0.0
    } else {
        cfg.noise_multiplier * cfg.clip_norm
    };
    if !noise_std.is_finite() {
        return Err(Error::Domain("noise needs a finite clip norm".into()));
    }
    let noise_root = streams(cfg).2;
    let mut records = Vec::with_capacity(steps as usize);

    for step in 0..steps {
        let idx = batch_indices(cfg, n, step);
        if idx.is_empty() {
            records.push(StepRecord {
                step,
                batch_size: 0,
                terms: None,
            });
            continue;
        }
        let batch: Vec<Example> = idx
            .iter()
            .map(|&i| Example {
                x: data.row(i),
                z_mean: z_means.row(i),
                eps: example_eps(cfg, step, i, dp),
            })
            .collect();
        let per = per_example_gradients(nets, prior, &batch).map_err(|e| with_step(e, step))?;

        let mut sum = vec![0.0; nets.num_params()];
        let mut terms = ElboTerms::default();
        for (t, mut g) in per {
            clip_l2_in_place(&mut g, cfg.clip_norm);
            for (s, gi) in sum.iter_mut().zip(&g) {
                *s += gi;
            }
            terms.recon += t.recon;
            terms.kl += t.kl;
            terms.total += t.total;
        }
        let m = idx.len() as f64;
        terms.recon /= m;
        terms.kl /= m;
        terms.total /= m;

        add_gaussian_noise(&mut sum, noise_std, &mut noise_root.child(step).rng());
        let b = cfg.batch_size as f64;
        for s in sum.iter_mut() {
            *s /= b;
        }
        if sum.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step: step as usize,
                what: "noisy gradient".into(),
            });
        }
        nets.descend(&sum, cfg.learning_rate);
        records.push(StepRecord {
            step,
            batch_size: idx.len(),
            terms: Some(terms),
        });
    }
    Ok(TrainLog {
        records,
        steps,
        consumed,
    })
}

/// Average ELBO terms over `data` with draws from `stream`; a diagnostic
/// that spends no privacy only when `data` is public.
pub fn mean_elbo(
    nets: &Networks,
    pca: &PcaModel,
    prior: &MoG,
    data: &Matrix,
    mc_samples: usize,
    stream: &SeedStream,
) -> Result<ElboTerms> {
    let mut acc = ElboTerms::default();
    for (i, x) in data.iter_rows().enumerate() {
        let z = pca.transform(x)?;
        let mut rng = stream.child(i as u64).rng();
        let eps: Vec<Vec<f64>> = (0..mc_samples)
            .map(|_| standard_normal_vec(nets.latent_dim(), &mut rng))
            .collect();
        let (t, _) = elbo_with_noise(nets, prior, x, &z, &eps)?;
        acc.recon += t.recon;
        acc.kl += t.kl;
        acc.total += t.total;
    }
    let n = data.rows().max(1) as f64;
    Ok(ElboTerms {
        recon: acc.recon / n,
        kl: acc.kl / n,
        total: acc.total / n,
    })
}
