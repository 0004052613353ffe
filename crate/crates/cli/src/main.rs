//! `dpsynth`: fit a differentially private generative model to a CSV table,
//! synthesize rows from it, evaluate synthetic data, and account budgets.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use dpsynth_core::neural::{DecoderHead, VarianceMode};

use commands::{AccountArgs, BenchArgs, EvalArgs, SynthArgs};
use config::RunConfig;

#[derive(Parser)]
#[command(name = "dpsynth", version, about = "Differentially private tabular data synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model; writes the model file, a budget report and a training log.
    Fit(FitArgs),
    /// Generate rows from a saved model.
    Synth {
        #[arg(long)]
        model: PathBuf,
        #[arg(short = 'n', long = "rows")]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV output; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Requested class mix, e.g. `yes=0.3,no=0.7`.
        #[arg(long)]
        label_ratio: Option<String>,
        /// Sample from the decoder distribution instead of taking its mean.
        #[arg(long)]
        sample_output: bool,
    },
    /// Compare synthetic rows with real rows; writes a JSON report.
    Eval {
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        synth: PathBuf,
        /// Held-out real rows for train-on-synthetic classifier scores.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        /// Bin continuous columns over the union of both ranges.
        #[arg(long)]
        union_range: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-pair TVD series as CSV.
        #[arg(long)]
        pairs_csv: Option<PathBuf>,
    },
    /// Budget-only dry run over a mechanism list or a preset.
    Account {
        /// TOML file with `delta`, optional `orders` and `[[mechanisms]]`.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        /// Fixed DP-SGD noise multiplier for presets.
        #[arg(long, default_value_t = 1.4)]
        sgd_noise: f64,
        /// Target used to calibrate the encoder shares of a preset.
        #[arg(long, default_value_t = 1.0)]
        eps: f64,
        #[arg(long, default_value_t = 1e-5)]
        delta: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Two-Gaussian end-to-end benchmark.
    Bench {
        #[arg(long, default_value_t = 20)]
        d: usize,
        #[arg(long, default_value_t = 1.0)]
        eps: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum HeadArg {
    Bernoulli,
    Gaussian,
}

#[derive(Clone, Copy, ValueEnum)]
enum VarianceArg {
    Learned,
    Frozen,
}

#[derive(Args)]
struct FitArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// JSON column schema.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Model file to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Budget report JSON; defaults to `<out>.budget.json`.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Training log CSV; defaults to `<out>.train.csv`.
    #[arg(long)]
    train_log: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// Latent dimension d′.
    #[arg(long)]
    dim_reduce: Option<usize>,
    /// Mixture components K.
    #[arg(long)]
    components: Option<usize>,
    #[arg(long)]
    em_iterations: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    /// Pin the DP-SGD noise multiplier instead of calibrating it.
    #[arg(long)]
    sgd_noise: Option<f64>,
    #[arg(long, value_enum)]
    head: Option<HeadArg>,
    #[arg(long, value_enum)]
    variance: Option<VarianceArg>,
    /// Standardize decoder inputs by the released prior's moments.
    #[arg(long)]
    normalize_latent: bool,
}

impl FitArgs {
    fn resolve(self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! take {
            ($($flag:ident => $field:ident),* $(,)?) => {
                $(if let Some(v) = self.$flag { c.$field = v.into(); })*
            };
        }
        take!(
            data => data, schema => schema, out => out, report => report, train_log => train_log,
            seed => seed, eps => eps, delta => delta, dim_reduce => dim_reduce,
            components => components, em_iterations => em_iterations, hidden => hidden,
            epochs => epochs, batch => batch, clip => clip, lr => learning_rate,
        );
        if self.sgd_noise.is_some() {
            c.sgd_noise = self.sgd_noise;
        }
        if let Some(h) = self.head {
            c.head = match h {
                HeadArg::Bernoulli => DecoderHead::Bernoulli,
                HeadArg::Gaussian => DecoderHead::Gaussian,
            };
        }
        if let Some(v) = self.variance {
            c.variance = match v {
                VarianceArg::Learned => VarianceMode::Learned,
                VarianceArg::Frozen => VarianceMode::Frozen,
            };
        }
        c.normalize_latent |= self.normalize_latent;
        Ok(c)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(args) => commands::fit_cmd(&args.resolve()?),
        Command::Synth {
            model,
            n,
            seed,
            out,
            label_ratio,
            sample_output,
        } => commands::synth_cmd(&SynthArgs {
            model: &model,
            n,
            seed,
            out: out.as_deref(),
            label_ratio: label_ratio.as_deref(),
            sample_output,
        }),
        Command::Eval {
            schema,
            real,
            synth,
            test,
            bins,
            union_range,
            out,
            pairs_csv,
        } => commands::eval_cmd(&EvalArgs {
            schema: &schema,
            real: &real,
            synth: &synth,
            test: test.as_deref(),
            bins,
            union_range,
            out: out.as_deref(),
            pairs_csv: pairs_csv.as_deref(),
        }),
        Command::Account {
            config,
            preset,
            sgd_noise,
            eps,
            delta,
            out,
        } => commands::account_cmd(&AccountArgs {
            config: config.as_deref(),
            preset: preset.as_deref(),
            sgd_noise,
            eps,
            delta,
            out: out.as_deref(),
        }),
        Command::Bench {
            d,
            eps,
            seed,
            n_train,
            n_test,
            out,
        } => commands::bench_cmd(&BenchArgs {
            d,
            eps,
            seed,
            n_train,
            n_test,
            out: out.as_deref(),
        }),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
