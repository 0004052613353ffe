//! Utility metrics: 2-way marginal TVD, logistic regression with
//! AUROC/AUPRC/accuracy, the two-Gaussian benchmark and budget sweeps.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Column, ColumnSchema, DatasetTable, Value};
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::neural::VarianceMode;
use crate::pipeline::{fit, synthesize, HyperParams};
use crate::privacy::PrivacySpec;
use crate::rng::{Rng, SeedStream};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinRange {
    /// Bin edges span the real data's range.
    Real,
    /// Bin edges span the union of both ranges.
    Union,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinSpec {
    pub bins: usize,
    pub range: BinRange,
}

impl Default for BinSpec {
    fn default() -> Self {
        BinSpec {
            bins: 10,
            range: BinRange::Real,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTvd {
    pub first: String,
    pub second: String,
    pub tvd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalReport {
    pub pairs: Vec<PairTvd>,
    pub average: f64,
    pub bins: BinSpec,
}

/// Discrete code of every cell, column-major, plus each column's arity.
fn discretize(records: &[Vec<Value>], schema: &ColumnSchema, ranges: &[(f64, f64)], bins: usize) -> Vec<Vec<usize>> {
    schema
        .columns()
        .iter()
        .enumerate()
        .map(|(j, _)| {
            records
                .iter()
                .map(|r| match r[j] {
                    Value::Cat(k) => k,
                    Value::Num(x) => {
                        let (lo, hi) = ranges[j];
                        if hi <= lo {
                            0
                        } else {
                            let b = ((x - lo) / (hi - lo) * bins as f64).floor();
                            b.clamp(0.0, (bins - 1) as f64) as usize
                        }
                    }
                })
                .collect()
        })
        .collect()
}

fn numeric_range(records: &[Vec<Value>], j: usize) -> (f64, f64) {
    records.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| match r[j] {
        Value::Num(x) => (lo.min(x), hi.max(x)),
        Value::Cat(_) => (lo, hi),
    })
}

/// Average total variation distance over all unordered column pairs.
pub fn two_way_tvd(real: &DatasetTable, synth: &DatasetTable, spec: BinSpec) -> Result<MarginalReport> {
    if real.schema() != synth.schema() {
        return Err(Error::Schema("real and synthetic schemas differ".into()));
    }
    if spec.bins < 2 {
        return Err(Error::Domain(format!("need at least 2 bins, got {}", spec.bins)));
    }
    let schema = real.schema();
    let cols = schema.columns();
    if cols.len() < 2 {
        return Err(Error::Schema("2-way marginals need at least two columns".into()));
    }
    if real.n_rows() == 0 || synth.n_rows() == 0 {
        return Err(Error::DegenerateData("TVD needs nonempty tables".into()));
    }
    let (rr, sr) = (real.records(), synth.records());
    let ranges: Vec<(f64, f64)> = (0..cols.len())
        .map(|j| {
            let a = numeric_range(&rr, j);
            match spec.range {
                BinRange::Real => a,
                BinRange::Union => {
                    let b = numeric_range(&sr, j);
                    (a.0.min(b.0), a.1.max(b.1))
                }
            }
        })
        .collect();
    let arity: Vec<usize> = cols
        .iter()
        .map(|c| match c {
            Column::Continuous { .. } => spec.bins,
            other => other.width(),
        })
        .collect();
    let rc = discretize(&rr, schema, &ranges, spec.bins);
    let sc = discretize(&sr, schema, &ranges, spec.bins);
    let index: Vec<(usize, usize)> = (0..cols.len())
        .flat_map(|a| (a + 1..cols.len()).map(move |b| (a, b)))
        .collect();
    let (nr, ns) = (real.n_rows() as f64, synth.n_rows() as f64);
    let pairs: Vec<PairTvd> = index
        .par_iter()
        .map(|&(a, b)| {
            let cells = arity[a] * arity[b];
            let mut p = vec![0.0; cells];
            let mut q = vec![0.0; cells];
            for (x, y) in rc[a].iter().zip(&rc[b]) {
                p[x * arity[b] + y] += 1.0 / nr;
            }
            for (x, y) in sc[a].iter().zip(&sc[b]) {
                q[x * arity[b] + y] += 1.0 / ns;
            }
            let tvd = 0.5 * p.iter().zip(&q).map(|(p, q)| (p - q).abs()).sum::<f64>();
            PairTvd {
                first: cols[a].name().to_string(),
                second: cols[b].name().to_string(),
                tvd: tvd.clamp(0.0, 1.0),
            }
        })
        .collect();
    let average = pairs.iter().map(|p| p.tvd).sum::<f64>() / pairs.len() as f64;
    Ok(MarginalReport {
        pairs,
        average,
        bins: spec,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMetrics {
    /// `None` when the test labels contain a single class.
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub accuracy: f64,
}

/// Area under the ROC curve by the Mann–Whitney statistic with average
/// ranks for ties. `None` without both classes.
pub fn auroc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positive.len());
    let np = positive.iter().filter(|p| **p).count();
    let nn = positive.len() - np;
    if np == 0 || nn == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| positive[k]).count() as f64 * avg;
        i = j + 1;
    }
    let np = np as f64;
    Some((rank_sum - np * (np + 1.0) / 2.0) / (np * nn as f64))
}

/// Area under the precision-recall curve with step interpolation: the sum
/// of precision times recall increment at each distinct threshold.
pub fn auprc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positive.len());
    let np = positive.iter().filter(|p| **p).count();
    if np == 0 || np == positive.len() {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut prev_recall, mut area) = (0usize, 0usize, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        tp += order[i..=j].iter().filter(|&&k| positive[k]).count();
        seen += j - i + 1;
        let recall = tp as f64 / np as f64;
        area += (recall - prev_recall) * tp as f64 / seen as f64;
        prev_recall = recall;
        i = j + 1;
    }
    Some(area)
}

/// L2-regularized logistic regression on standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub classes: usize,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// One `(weights, bias)` per class for one-vs-rest, or a single pair
    /// scoring class 1 when binary.
    pub heads: Vec<(Vec<f64>, f64)>,
}

pub const LOGREG_L2: f64 = 1e-4;
const LOGREG_TOL: f64 = 1e-6;
const LOGREG_MAX_ITERS: usize = 5000;

fn sigmoid(x: f64) -> f64 {
    crate::neural::sigmoid(x)
}

fn standardize(x: &Matrix, mean: &[f64], scale: &[f64]) -> Matrix {
    let mut out = x.clone();
    for i in 0..out.rows() {
        for (v, (m, s)) in out.row_mut(i).iter_mut().zip(mean.iter().zip(scale)) {
            *v = (*v - m) / s;
        }
    }
    out
}

/// Largest eigenvalue of `[X 1]ᵀ[X 1] / n` by power iteration.
fn gram_spectral_bound(x: &Matrix) -> f64 {
    let d = x.cols() + 1;
    let n = x.rows() as f64;
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut lambda = 0.0;
    for _ in 0..100 {
        let mut w = vec![0.0; d];
        for r in x.iter_rows() {
            let s = dot(r, &v[..d - 1]) + v[d - 1];
            for (wi, ri) in w.iter_mut().zip(r) {
                *wi += s * ri;
            }
            w[d - 1] += s;
        }
        w.iter_mut().for_each(|x| *x /= n);
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        v = w.into_iter().map(|x| x / norm).collect();
    }
    lambda
}

fn fit_binary(x: &Matrix, y: &[bool], l2: f64, lipschitz: f64) -> (Vec<f64>, f64) {
    let d = x.cols();
    let n = x.rows() as f64;
    let step = 1.0 / lipschitz;
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    for _ in 0..LOGREG_MAX_ITERS {
        let mut gw: Vec<f64> = w.iter().map(|wi| l2 * wi).collect();
        let mut gb = 0.0;
        for (r, &yi) in x.iter_rows().zip(y) {
            let e = (sigmoid(dot(r, &w) + b) - f64::from(u8::from(yi))) / n;
            for (g, ri) in gw.iter_mut().zip(r) {
                *g += e * ri;
            }
            gb += e;
        }
        let gmax = gw.iter().fold(gb.abs(), |m, g| m.max(g.abs()));
        if gmax < LOGREG_TOL {
            break;
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= step * g;
        }
        b -= step * gb;
    }
    (w, b)
}

pub fn logreg_fit(x: &Matrix, y: &[usize], classes: usize) -> Result<LogisticModel> {
    logreg_fit_with(x, y, classes, LOGREG_L2)
}

pub fn logreg_fit_with(x: &Matrix, y: &[usize], classes: usize, l2: f64) -> Result<LogisticModel> {
    if x.rows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.rows(),
            actual: y.len(),
        });
    }
    if x.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("features must be finite".into()));
    }
    if y.iter().any(|&c| c >= classes) {
        return Err(Error::Domain("label index out of range".into()));
    }
    let mut present = vec![false; classes];
    y.iter().for_each(|&c| present[c] = true);
    if present.iter().filter(|p| **p).count() < 2 {
        return Err(Error::DegenerateData("training labels contain a single class".into()));
    }
    let n = x.rows() as f64;
    let d = x.cols();
    let mut mean = vec![0.0; d];
    for r in x.iter_rows() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut scale = vec![0.0; d];
    for r in x.iter_rows() {
        for ((s, v), m) in scale.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    scale.iter_mut().for_each(|s| *s = if *s > 0.0 { s.sqrt() } else { 1.0 });
    let xs = standardize(x, &mean, &scale);
    let lipschitz = gram_spectral_bound(&xs) / 4.0 + l2;
    let heads = if classes == 2 {
        let yb: Vec<bool> = y.iter().map(|&c| c == 1).collect();
        vec![fit_binary(&xs, &yb, l2, lipschitz)]
    } else {
        (0..classes)
            .into_par_iter()
            .map(|k| {
                let yb: Vec<bool> = y.iter().map(|&c| c == k).collect();
                fit_binary(&xs, &yb, l2, lipschitz)
            })
            .collect()
    };
    Ok(LogisticModel {
        classes,
        mean,
        scale,
        heads,
    })
}

impl LogisticModel {
    /// Per-row scores: the probability of class 1 when binary, else one
    /// one-vs-rest probability per class.
    pub fn scores(&self, x: &Matrix) -> Vec<Vec<f64>> {
        let xs = standardize(x, &self.mean, &self.scale);
        xs.iter_rows()
            .map(|r| self.heads.iter().map(|(w, b)| sigmoid(dot(r, w) + b)).collect())
            .collect()
    }

    pub fn predict(&self, x: &Matrix) -> Vec<usize> {
        self.scores(x)
            .iter()
            .map(|s| {
                if self.classes == 2 {
                    usize::from(s[0] >= 0.5)
                } else {
                    crate::data::argmax(s)
                }
            })
            .collect()
    }
}

/// Accuracy, and AUROC/AUPRC (macro-averaged one-vs-rest when multiclass).
pub fn logreg_metrics(model: &LogisticModel, x: &Matrix, y: &[usize]) -> Result<ClassifierMetrics> {
    if x.rows() != y.len() || x.rows() == 0 {
        return Err(Error::DimensionMismatch {
            expected: x.rows(),
            actual: y.len(),
        });
    }
    let scores = model.scores(x);
    let pred = model.predict(x);
    let accuracy = pred.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64;
    let per_class = |k: usize| -> (Option<f64>, Option<f64>) {
        let col = if model.classes == 2 { 0 } else { k };
        let s: Vec<f64> = scores.iter().map(|r| r[col]).collect();
        let pos: Vec<bool> = y.iter().map(|&c| c == k).collect();
        (auroc(&s, &pos), auprc(&s, &pos))
    };
    let (auroc, auprc) = if model.classes == 2 {
        per_class(1)
    } else {
        let parts: Vec<_> = (0..model.classes).map(per_class).collect();
        let avg = |v: Vec<Option<f64>>| {
            let got: Vec<f64> = v.into_iter().flatten().collect();
            (!got.is_empty()).then(|| got.iter().sum::<f64>() / got.len() as f64)
        };
        (
            avg(parts.iter().map(|p| p.0).collect()),
            avg(parts.iter().map(|p| p.1).collect()),
        )
    };
    Ok(ClassifierMetrics {
        auroc,
        auprc,
        accuracy,
    })
}

/// Fits on `train` and scores `test`; both must carry a label column.
pub fn classifier_utility(train: &DatasetTable, test: &DatasetTable) -> Result<ClassifierMetrics> {
    let classes = train
        .schema()
        .label_classes()
        .ok_or_else(|| Error::Schema("classifier utility needs a label column".into()))?
        .len();
    let ytr = train.labels().expect("label column present");
    let yte = test
        .labels()
        .ok_or_else(|| Error::Schema("test table has no label column".into()))?;
    let model = logreg_fit(&train.features(), &ytr, classes)?;
    logreg_metrics(&model, &test.features(), &yte)
}

pub const BENCHMARK_BOUND: f64 = 5.0;

pub fn two_gaussian_schema(d: usize) -> Result<ColumnSchema> {
    let mut cols: Vec<Column> = (0..d)
        .map(|i| Column::Continuous {
            name: format!("x{i}"),
            min: -BENCHMARK_BOUND,
            max: BENCHMARK_BOUND,
        })
        .collect();
    cols.push(Column::Label {
        name: "y".into(),
        classes: vec!["0".into(), "1".into()],
    });
    ColumnSchema::new(cols)
}

/// `⌈N/2⌉` rows from `N(1, I)` labeled 1 and `⌊N/2⌋` from `N(−1, I)`
/// labeled 0, shuffled, then encoded with the schema above.
pub fn two_gaussian_benchmark(d: usize, n: usize, rng: &mut Rng) -> Result<DatasetTable> {
    if d == 0 {
        return Err(Error::Domain("benchmark dimension must be >= 1".into()));
    }
    let schema = two_gaussian_schema(d)?;
    let mut records: Vec<Vec<Value>> = (0..n)
        .map(|i| {
            let label = usize::from(i < n.div_ceil(2));
            let mu = if label == 1 { 1.0 } else { -1.0 };
            let mut r: Vec<Value> = (0..d)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    Value::Num(mu + z)
                })
                .collect();
            r.push(Value::Cat(label));
            r
        })
        .collect();
    records.shuffle(rng);
    Ok(DatasetTable::from_records(schema, &records)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub d: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub privacy: PrivacySpec,
    pub hyper: HyperParams,
    pub bins: BinSpec,
}

impl BenchmarkConfig {
    /// The desk-scale two-Gaussian setup: N = 20000 training rows, 5000
    /// held-out rows, δ = 1e-5, d′ = 10, K = 3, T_e = 20, and a small
    /// frozen-variance decoder trained for 5 epochs.
    pub fn desk_scale(d: usize, epsilon: f64) -> Self {
        BenchmarkConfig {
            d,
            n_train: 20_000,
            n_test: 5_000,
            privacy: PrivacySpec::new(epsilon, 1e-5),
            hyper: HyperParams {
                d_prime: HyperParams::default().d_prime.min(d),
                hidden: 64,
                train: TrainConfig {
                    batch_size: 200,
                    clip_norm: 1.0,
                    noise_multiplier: 0.0,
                    learning_rate: 0.1,
                    epochs: 5,
                    mc_samples: 1,
                    seed: 0,
                },
                variance_mode: VarianceMode::Frozen,
                ..HyperParams::default()
            },
            bins: BinSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub seed: u64,
    pub epsilon: f64,
    pub synthetic: ClassifierMetrics,
    /// Logistic regression trained on the real training rows instead.
    pub real: ClassifierMetrics,
    pub marginals: MarginalReport,
}

/// Generates the task, fits a model, synthesizes a balanced table of the
/// training size and scores it against held-out real rows. Class balance
/// is a public property of the task, so it is requested directly.
pub fn run_benchmark(cfg: &BenchmarkConfig, seed: u64) -> Result<BenchmarkResult> {
    let seeds = SeedStream::from_master(seed).substream("benchmark");
    let train = two_gaussian_benchmark(cfg.d, cfg.n_train, &mut seeds.substream("train").rng())?;
    let test = two_gaussian_benchmark(cfg.d, cfg.n_test, &mut seeds.substream("test").rng())?;
    let out = fit(&train, &cfg.privacy, &cfg.hyper, seed)?;
    let ratio: BTreeMap<String, f64> = [("0".to_string(), 0.5), ("1".to_string(), 0.5)].into();
    let synth = synthesize(
        &out.model,
        cfg.n_train,
        Some(&ratio),
        false,
        &mut SeedStream::from_master(seed).substream("synth").rng(),
    )?;
    Ok(BenchmarkResult {
        seed,
        epsilon: out.model.budget.epsilon,
        synthetic: classifier_utility(&synth, &test)?,
        real: classifier_utility(&train, &test)?,
        marginals: two_way_tvd(&train, &synth, cfg.bins)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub encoder_fraction: f64,
    pub epsilon: f64,
    pub metrics: ClassifierMetrics,
    pub average_tvd: f64,
}

/// One model per encoder share of the budget at a fixed total ε; the PCA
/// share keeps its proportion of the encoder share.
pub fn budget_sweep(
    train: &DatasetTable,
    test: &DatasetTable,
    privacy: &PrivacySpec,
    hyper: &HyperParams,
    ratios: &[f64],
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if ratios.is_empty() {
        return Err(Error::Domain("no ratios to sweep".into()));
    }
    let pca_share = privacy.pca_fraction / privacy.encoder_fraction;
    ratios
        .iter()
        .map(|&r| {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::Domain(format!("ratio {r} outside (0, 1)")));
            }
            let p = PrivacySpec {
                encoder_fraction: r,
                pca_fraction: r * pca_share,
                ..privacy.clone()
            };
            let out = fit(train, &p, hyper, seed)?;
            let synth = synthesize(
                &out.model,
                train.n_rows(),
                None,
                false,
                &mut SeedStream::from_master(seed).substream("synth").rng(),
            )?;
            Ok(SweepRow {
                encoder_fraction: r,
                epsilon: out.model.budget.epsilon,
                metrics: classifier_utility(&synth, test)?,
                average_tvd: two_way_tvd(train, &synth, BinSpec::default())?.average,
            })
        })
        .collect()
}
