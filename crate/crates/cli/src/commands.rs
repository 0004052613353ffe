use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use dpsynth_core::data::{load_csv, write_csv, ColumnSchema, DatasetTable};
use dpsynth_core::eval::{
    classifier_utility, run_benchmark, two_way_tvd, BenchmarkConfig, BinRange, BinSpec, ClassifierMetrics,
    MarginalReport,
};
use dpsynth_core::persist;
use dpsynth_core::pipeline::{fit, synthesize};
use dpsynth_core::privacy::{calibrate_encoder, total_privacy, BudgetReport, PrivacySpec};
use dpsynth_core::rng::SeedStream;
use dpsynth_core::trainer::TrainConfig;
use dpsynth_core::HyperParams;
use serde::Serialize;

use crate::config::{AccountConfig, RunConfig};

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_table(path: &Path, schema: &ColumnSchema) -> Result<DatasetTable> {
    let (table, log) = load_csv(path, schema).with_context(|| format!("loading {}", path.display()))?;
    if !log.clipped.is_empty() {
        eprintln!("{}: {} of {} rows clipped to unit norm", path.display(), log.clipped.len(), log.rows);
    }
    Ok(table)
}

pub fn fit_cmd(cfg: &RunConfig) -> Result<()> {
    let data = cfg.data.as_deref().context("no training data given (--data)")?;
    let schema_path = cfg.schema.as_deref().context("no schema given (--schema)")?;
    let out = cfg.out.as_deref().context("no model path given (--out)")?;
    let schema = ColumnSchema::from_json_file(schema_path)?;
    let table = load_table(data, &schema)?;
    let result = fit(&table, &cfg.privacy(), &cfg.hyper(), cfg.seed)?;
    persist::save(&result.model, out).with_context(|| format!("saving {}", out.display()))?;

    let report = cfg.report.clone().unwrap_or_else(|| with_suffix(out, ".budget.json"));
    write_json(&report, &result.model.budget)?;
    let log = cfg.train_log.clone().unwrap_or_else(|| with_suffix(out, ".train.csv"));
    fs::write(&log, result.train_log.to_csv()).with_context(|| format!("writing {}", log.display()))?;

    let noise = result.model.noise;
    print!("{}", result.model.budget.to_text());
    println!(
        "noise scales: pca {:.4}, em {:.4}, sgd {:.4}",
        noise.pca, noise.em, noise.sgd
    );
    println!("model: {}\nbudget report: {}\ntraining log: {}", out.display(), report.display(), log.display());
    Ok(())
}

fn parse_ratio(text: &str) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for part in text.split(',').filter(|p| !p.trim().is_empty()) {
        let (k, v) = part
            .split_once('=')
            .with_context(|| format!("label ratio entry `{part}` is not CLASS=FRACTION"))?;
        let v: f64 = v.trim().parse().with_context(|| format!("bad fraction in `{part}`"))?;
        ensure!(out.insert(k.trim().to_string(), v).is_none(), "class `{}` listed twice", k.trim());
    }
    ensure!(!out.is_empty(), "empty label ratio");
    Ok(out)
}

pub struct SynthArgs<'a> {
    pub model: &'a Path,
    pub n: usize,
    pub seed: u64,
    pub out: Option<&'a Path>,
    pub label_ratio: Option<&'a str>,
    pub sample_output: bool,
}

pub fn synth_cmd(a: &SynthArgs) -> Result<()> {
    let model = persist::load(a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let ratio = a.label_ratio.map(parse_ratio).transpose()?;
    let mut rng = SeedStream::from_master(a.seed).substream("synth").rng();
    let table = synthesize(&model, a.n, ratio.as_ref(), a.sample_output, &mut rng)?;
    match a.out {
        Some(p) => {
            let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            write_csv(&table, BufWriter::new(f))?;
        }
        None => write_csv(&table, io::stdout().lock())?,
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalReport {
    real_rows: usize,
    synthetic_rows: usize,
    marginals: MarginalReport,
    /// Trained on the synthetic rows, scored on the test rows.
    utility: Option<ClassifierMetrics>,
}

pub struct EvalArgs<'a> {
    pub schema: &'a Path,
    pub real: &'a Path,
    pub synth: &'a Path,
    pub test: Option<&'a Path>,
    pub bins: usize,
    pub union_range: bool,
    pub out: Option<&'a Path>,
    pub pairs_csv: Option<&'a Path>,
}

pub fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let schema = ColumnSchema::from_json_file(a.schema)?;
    let real = load_table(a.real, &schema)?;
    let synth = load_table(a.synth, &schema)?;
    let spec = BinSpec {
        bins: a.bins,
        range: if a.union_range { BinRange::Union } else { BinRange::Real },
    };
    let marginals = two_way_tvd(&real, &synth, spec)?;
    let utility = match a.test {
        Some(p) => Some(classifier_utility(&synth, &load_table(p, &schema)?)?),
        None => None,
    };
    let report = EvalReport {
        real_rows: real.n_rows(),
        synthetic_rows: synth.n_rows(),
        marginals,
        utility,
    };
    if let Some(p) = a.pairs_csv {
        let mut w = BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?);
        writeln!(w, "first,second,tvd")?;
        for pair in &report.marginals.pairs {
            writeln!(w, "{},{},{}", pair.first, pair.second, pair.tvd)?;
        }
        w.flush()?;
    }
    match a.out {
        Some(p) => write_json(p, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

/// The MNIST-scale plan: N = 63000, B = 300, 4 epochs, d′ = 10, K = 3,
/// T_e = 20, with a fixed DP-SGD noise multiplier.
fn mnist_preset(sgd_noise: f64) -> (usize, HyperParams) {
    let hyper = HyperParams {
        d_prime: 10,
        components: 3,
        em_iterations: 20,
        train: TrainConfig {
            batch_size: 300,
            epochs: 4,
            ..TrainConfig::default()
        },
        fixed_sgd_noise: Some(sgd_noise),
        ..HyperParams::default()
    };
    (63_000, hyper)
}

pub struct AccountArgs<'a> {
    pub config: Option<&'a Path>,
    pub preset: Option<&'a str>,
    pub sgd_noise: f64,
    pub eps: f64,
    pub delta: f64,
    pub out: Option<&'a Path>,
}

pub fn account_cmd(a: &AccountArgs) -> Result<()> {
    let report: BudgetReport = match (a.config, a.preset) {
        (Some(path), None) => {
            let cfg = AccountConfig::load(path)?;
            total_privacy(&cfg.mechanisms, cfg.delta, &cfg.orders)?
        }
        (None, Some("mnist")) => {
            let (n, hyper) = mnist_preset(a.sgd_noise);
            let privacy = PrivacySpec::new(a.eps, a.delta);
            let plan = hyper.plan(n);
            let (sp, se) = calibrate_encoder(&privacy, &plan)?;
            println!("calibrated encoder noise: pca {sp:.4}, em {se:.4}");
            total_privacy(&plan.mechanisms(sp, se, a.sgd_noise), privacy.delta, &privacy.orders)?
        }
        (None, Some(other)) => bail!("unknown preset `{other}` (known: mnist)"),
        (Some(_), Some(_)) => bail!("give either --config or --preset, not both"),
        (None, None) => bail!("nothing to account: give --config or --preset"),
    };
    print!("{}", report.to_text());
    if let Some(p) = a.out {
        write_json(p, &report)?;
    }
    Ok(())
}

pub struct BenchArgs<'a> {
    pub d: usize,
    pub eps: f64,
    pub seed: u64,
    pub n_train: Option<usize>,
    pub n_test: Option<usize>,
    pub out: Option<&'a Path>,
}

pub fn bench_cmd(a: &BenchArgs) -> Result<()> {
    let mut cfg = BenchmarkConfig::desk_scale(a.d, a.eps);
    if let Some(n) = a.n_train {
        cfg.n_train = n;
    }
    if let Some(n) = a.n_test {
        cfg.n_test = n;
    }
    let result = run_benchmark(&cfg, a.seed)?;
    let fmt = |m: &ClassifierMetrics| {
        format!(
            "auroc {} auprc {} accuracy {:.4}",
            m.auroc.map_or("n/a".into(), |v| format!("{v:.4}")),
            m.auprc.map_or("n/a".into(), |v| format!("{v:.4}")),
            m.accuracy
        )
    };
    println!("eps {:.4} (target {})", result.epsilon, a.eps);
    println!("synthetic: {}", fmt(&result.synthetic));
    println!("real:      {}", fmt(&result.real));
    println!("average 2-way TVD: {:.4}", result.marginals.average);
    if let Some(p) = a.out {
        write_json(p, &serde_json::json!({ "config": cfg, "result": result }))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_parsing() {
        let r = parse_ratio("A=0.25, B=0.75").unwrap();
        assert_eq!(r["A"], 0.25);
        assert_eq!(r["B"], 0.75);
        assert!(parse_ratio("A").is_err());
        assert!(parse_ratio("A=x").is_err());
        assert!(parse_ratio("A=0.5,A=0.5").is_err());
        assert!(parse_ratio("").is_err());
    }

    #[test]
    fn suffix_appends() {
        assert_eq!(with_suffix(Path::new("m.dps"), ".budget.json"), PathBuf::from("m.dps.budget.json"));
    }
}
