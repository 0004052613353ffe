//! End-to-end fitting and synthesis.
//!
//! [`fit`] calibrates the three noise scales, then runs DP-PCA, DP-EM over
//! the projected rows, and DP-SGD on the decoder. The returned
//! [`GenerativeModel`] holds only released quantities; [`synthesize`] reads
//! nothing else.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{argmax, ColumnSchema, DatasetTable};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::mog::{self, EmTrace, MoG};
use crate::neural::{DecoderHead, LatentNorm, Networks, VarianceMode};
use crate::pca::{self, PcaModel, PCA_RELEASES};
use crate::privacy::{calibrate, clip_l2_in_place, compose, total_privacy, BudgetReport, MechanismPlan, PrivacySpec};
use crate::rng::{Rng, SeedStream};
use crate::trainer::{self, TrainConfig, TrainLog};

/// Everything [`fit`] needs besides the data and the privacy target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub d_prime: usize,
    pub components: usize,
    pub em_iterations: usize,
    pub hidden: usize,
    /// DP-SGD settings; `noise_multiplier` and `seed` are overwritten by
    /// calibration and the master seed.
    pub train: TrainConfig,
    /// Pins σ_s instead of calibrating it against the budget.
    pub fixed_sgd_noise: Option<f64>,
    pub head: DecoderHead,
    pub variance_mode: VarianceMode,
    /// Standardize decoder inputs by the released prior's moments.
    pub normalize_latent: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            d_prime: 10,
            components: 3,
            em_iterations: 20,
            hidden: 1000,
            train: TrainConfig::default(),
            fixed_sgd_noise: None,
            head: DecoderHead::Bernoulli,
            variance_mode: VarianceMode::Learned,
            normalize_latent: false,
        }
    }
}

impl HyperParams {
    pub fn plan(&self, n: usize) -> MechanismPlan {
        MechanismPlan {
            pca_releases: PCA_RELEASES,
            em_components: self.components,
            em_iterations: self.em_iterations as u64,
            sgd_sampling_rate: self.train.sampling_rate(n),
            sgd_steps: self.train.steps(n),
            sgd_noise: self.fixed_sgd_noise,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseScales {
    pub pca: f64,
    pub em: f64,
    pub sgd: f64,
}

/// The released model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeModel {
    pub schema: ColumnSchema,
    pub pca: PcaModel,
    pub prior: MoG,
    pub networks: Networks,
    pub privacy: PrivacySpec,
    pub budget: BudgetReport,
    pub noise: NoiseScales,
    pub hyper: HyperParams,
    pub master_seed: u64,
}

/// A fitted model with the diagnostics produced on the way.
#[derive(Debug, Clone)]
pub struct FitOutput {
    pub model: GenerativeModel,
    pub em_trace: EmTrace,
    pub train_log: TrainLog,
}

/// Fits the model under `privacy`. Rows must already be encoded to L2 norm
/// at most 1 (as [`DatasetTable`] guarantees).
pub fn fit(data: &DatasetTable, privacy: &PrivacySpec, hyper: &HyperParams, master_seed: u64) -> Result<FitOutput> {
    privacy.validate()?;
    let x = data.matrix();
    let n = x.rows();
    if hyper.components == 0 {
        return Err(Error::Domain("need at least one mixture component".into()));
    }
    if n < 10 * hyper.components {
        return Err(Error::DegenerateData(format!(
            "need N >= 10 K = {} rows, got {n}",
            10 * hyper.components
        )));
    }
    if hyper.train.batch_size >= n {
        return Err(Error::Domain(format!(
            "batch size {} must be below N = {n}",
            hyper.train.batch_size
        )));
    }
    if hyper.hidden == 0 {
        return Err(Error::Domain("hidden width must be >= 1".into()));
    }
    hyper.train.validate()?;

    let plan = hyper.plan(n);
    let cal = calibrate(privacy, &plan)?;
    let seeds = SeedStream::from_master(master_seed);

    let pca = pca::fit(x, hyper.d_prime, cal.pca_sigma, &mut seeds.substream("pca").rng())?;
    let mut latents = pca.transform_all(x)?;
    for i in 0..latents.rows() {
        clip_l2_in_place(latents.row_mut(i), 1.0);
    }
    let (prior, em_trace) = mog::dp_em_fit(
        &latents,
        hyper.components,
        hyper.em_iterations,
        cal.em_sigma,
        &mut seeds.substream("em").rng(),
    )?;

    let mut networks = Networks::new(
        x.cols(),
        hyper.d_prime,
        hyper.hidden,
        hyper.head,
        hyper.variance_mode,
        &mut seeds.substream("init").rng(),
    );
    if hyper.normalize_latent {
        networks.latent_norm = LatentNorm::from_prior(&prior);
    }
    let train_cfg = TrainConfig {
        noise_multiplier: cal.sgd_sigma,
        seed: master_seed,
        ..hyper.train
    };
    let train_log = trainer::train(x, &pca, &prior, &mut networks, &train_cfg, &privacy.orders)?;

    let mechanisms = plan.mechanisms(cal.pca_sigma, cal.em_sigma, cal.sgd_sigma);
    let budget = total_privacy(&mechanisms, privacy.delta, &privacy.orders)?;
    cross_check(&budget, &train_log, privacy)?;

    Ok(FitOutput {
        model: GenerativeModel {
            schema: data.schema().clone(),
            pca,
            prior,
            networks,
            privacy: privacy.clone(),
            budget,
            noise: NoiseScales {
                pca: cal.pca_sigma,
                em: cal.em_sigma,
                sgd: cal.sgd_sigma,
            },
            hyper: HyperParams {
                train: train_cfg,
                ..hyper.clone()
            },
            master_seed,
        },
        em_trace,
        train_log,
    })
}

/// The report's total must equal the composition of what was actually
/// spent, and stay within the target.
fn cross_check(budget: &BudgetReport, log: &TrainLog, privacy: &PrivacySpec) -> Result<()> {
    let encoder: Vec<_> = budget
        .parts
        .iter()
        .filter(|p| !matches!(p.mechanism, crate::privacy::Mechanism::SubsampledSgd { .. }))
        .map(|p| p.curve.clone())
        .collect();
    let mut curves = encoder;
    curves.push(log.consumed.clone());
    let spent = compose(&curves)?;
    for (a, b) in spent.values().iter().zip(budget.total.values()) {
        let same = a == b || (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
        if !same {
            return Err(Error::Corrupt(format!(
                "accounting mismatch: spent {a} vs reported {b}"
            )));
        }
    }
    if budget.epsilon > privacy.epsilon_target {
        return Err(Error::InfeasibleBudget(format!(
            "realized epsilon {} exceeds target {}",
            budget.epsilon, privacy.epsilon_target
        )));
    }
    Ok(())
}

/// Draws one encoded row from the model.
fn draw_row(model: &GenerativeModel, sample_output: bool, rng: &mut Rng) -> Result<Vec<f64>> {
    let z = model.prior.sample(rng);
    let t = model.networks.decode(&z)?;
    let mut row = if sample_output {
        model.networks.head.sample(t.output(), rng)
    } else {
        model.networks.head.mean(t.output())
    };
    model.schema.canonicalize(&mut row);
    Ok(row)
}

/// Largest-remainder apportionment of `n` over `fractions`.
pub fn quotas(n: usize, fractions: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut q: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = q.iter().sum();
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())));
    for &i in order.iter().cycle().take(n.saturating_sub(assigned)) {
        q[i] += 1;
    }
    q
}

fn ratio_fractions(schema: &ColumnSchema, ratio: &BTreeMap<String, f64>) -> Result<Vec<f64>> {
    let classes = schema
        .label_classes()
        .ok_or_else(|| Error::Schema("label ratio given but the schema has no label column".into()))?;
    for k in ratio.keys() {
        if !classes.contains(k) {
            return Err(Error::Schema(format!("unknown class `{k}` in label ratio")));
        }
    }
    let fr: Vec<f64> = classes.iter().map(|c| ratio.get(c).copied().unwrap_or(0.0)).collect();
    if fr.iter().any(|f| !(*f >= 0.0 && f.is_finite())) {
        return Err(Error::Domain("label ratio fractions must be finite and >= 0".into()));
    }
    let s: f64 = fr.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("label ratio fractions sum to {s}, not 1")));
    }
    Ok(fr)
}

/// Generates `n` rows. With `label_ratio`, rows are rejection-sampled until
/// each class meets its quota, giving up after `100 n` draws.
pub fn synthesize(
    model: &GenerativeModel,
    n: usize,
    label_ratio: Option<&BTreeMap<String, f64>>,
    sample_output: bool,
    rng: &mut Rng,
) -> Result<DatasetTable> {
    if n == 0 {
        return Err(Error::Domain("cannot synthesize zero rows".into()));
    }
    let schema = &model.schema;
    let mut out = Matrix::zeros(0, schema.width());
    match label_ratio {
        None => {
            for _ in 0..n {
                out.push_row(&draw_row(model, sample_output, rng)?)?;
            }
        }
        Some(ratio) => {
            let fr = ratio_fractions(schema, ratio)?;
            let mut need = quotas(n, &fr);
            let li = schema.label_index().expect("checked by ratio_fractions");
            let off = schema.offset(li);
            let w = fr.len();
            let cap = 100 * n;
            let mut draws = 0;
            while out.rows() < n {
                if draws == cap {
                    let missing: Vec<String> = schema
                        .label_classes()
                        .unwrap_or_default()
                        .iter()
                        .zip(&need)
                        .filter(|(_, k)| **k > 0)
                        .map(|(c, k)| format!("{c}: {k}"))
                        .collect();
                    return Err(Error::QuotaUnreachable {
                        draws,
                        detail: format!("still missing {}", missing.join(", ")),
                    });
                }
                draws += 1;
                let row = draw_row(model, sample_output, rng)?;
                let c = argmax(&row[off..off + w]);
                if need[c] > 0 {
                    need[c] -= 1;
                    out.push_row(&row)?;
                }
            }
        }
    }
    DatasetTable::new(schema.clone(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn largest_remainder() {
        assert_eq!(quotas(10, &[0.5, 0.5]), vec![5, 5]);
        assert_eq!(quotas(10, &[1.0 / 3.0; 3]), vec![4, 3, 3]);
        assert_eq!(quotas(7, &[0.0, 1.0]), vec![0, 7]);
        assert_eq!(quotas(3, &[0.25, 0.25, 0.5]).iter().sum::<usize>(), 3);
    }
}
