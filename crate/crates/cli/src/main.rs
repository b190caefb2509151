use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use saliency_forge::ensembles::{EnsembleMethod, FlipPolicy};
use saliency_forge::metrics::{Baseline, MetricKind, ScoreMode};
use saliency_forge::oracle::server::{OracleServer, ServeOptions};
use saliency_forge::oracle::{make_stub, OracleEndpoint, StubParams};
use saliency_forge_cli::config::{Preset, RunConfig, DEFAULT_NOISE_MAPS};
use saliency_forge_cli::{cmd_aggregate, cmd_evaluate, cmd_flip_compare, cmd_gen_noise, exit_code, InvalidInput};

/// Attribution-map ensembles and perturbation metrics.
#[derive(Parser)]
#[command(name = "saliency-forge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Aggregate every stack with the mean, variance and/or RBM ensembles.
    Aggregate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        ensemble: EnsembleArgs,
        #[command(flatten)]
        metric: MetricArgs,
        #[command(flatten)]
        oracle: OracleArgs,
    },
    /// Score every map of every stack with insertion, deletion and IROF.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        metric: MetricArgs,
        #[command(flatten)]
        oracle: OracleArgs,
    },
    /// Compare the two RBM flip policies image by image.
    FlipCompare {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        ensemble: EnsembleArgs,
        #[command(flatten)]
        metric: MetricArgs,
        #[command(flatten)]
        oracle: OracleArgs,
    },
    /// Write a copy of the dataset with standard-normal maps appended.
    GenNoise {
        #[command(flatten)]
        common: CommonArgs,
        /// Noise maps per stack.
        #[arg(long, default_value_t = DEFAULT_NOISE_MAPS)]
        count: usize,
    },
    /// Serve an analytic stub classifier over HTTP until interrupted.
    StubOracle {
        /// constant | fraction_remaining | segment_critical
        #[arg(long)]
        kind: String,
        /// Score returned by the constant stub.
        #[arg(long)]
        value: Option<f64>,
        /// H×W NPY mask; nonzero entries form the designated set.
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Pixel value that marks a position as removed.
        #[arg(long)]
        baseline: Option<f64>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: String,
        #[arg(long, default_value = "stub")]
        model_name: String,
        /// Answer the first N predict calls with HTTP 503.
        #[arg(long, default_value_t = 0)]
        fail_first: usize,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset manifest listing stack manifests.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Falls back to the config file, then SALIENCY_FORGE_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct EnsembleArgs {
    /// Comma-separated: mean, variance, rbm.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<EnsembleMethod>>,
    /// RBM training preset.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    /// flip_detection | metric_optimization | none
    #[arg(long)]
    flip_policy: Option<FlipPolicy>,
    /// Metric optimized by the metric_optimization policy.
    #[arg(long)]
    flip_metric: Option<MetricKind>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Append K standard-normal maps to every stack (15 when K is omitted).
    #[arg(long, num_args = 0..=1, default_missing_value = "15", value_name = "K")]
    add_noise: Option<usize>,
    /// Add the channel-reduced input image as one more map.
    #[arg(long)]
    include_original_image: bool,
}

#[derive(Args)]
struct MetricArgs {
    /// Comma-separated: insertion, deletion, irof.
    #[arg(long, value_delimiter = ',')]
    metrics: Option<Vec<MetricKind>>,
    #[arg(long)]
    step_fraction: Option<f64>,
    /// black | dataset_mean | uniform_noise
    #[arg(long)]
    baseline: Option<Baseline>,
    /// probability | normalized_probability
    #[arg(long)]
    score_mode: Option<ScoreMode>,
    #[arg(long)]
    irof_segments: Option<usize>,
    /// Write every perturbation curve to curves.json.
    #[arg(long)]
    dump_curves: bool,
    /// Write SVG charts under plots/.
    #[arg(long)]
    plots: bool,
}

#[derive(Args)]
struct OracleArgs {
    /// Classifier service root, e.g. http://127.0.0.1:8080.
    #[arg(long)]
    oracle: Option<String>,
    #[arg(long)]
    oracle_timeout: Option<f64>,
    #[arg(long)]
    oracle_max_batch: Option<usize>,
}

impl CommonArgs {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(d) = &self.dataset {
            config.dataset = Some(d.clone());
        }
        if let Some(o) = &self.output_dir {
            config.output_dir = Some(o.clone());
        }
        config.seed = self.seed.or(config.seed);
        config.workers = self.workers.or(config.workers);
        Ok(config)
    }
}

impl EnsembleArgs {
    fn apply(&self, config: &mut RunConfig) {
        let a = &mut config.aggregate;
        if let Some(m) = &self.methods {
            a.methods = m.clone();
        }
        a.preset = self.preset.unwrap_or(a.preset);
        a.rbm.learning_rate = self.learning_rate.or(a.rbm.learning_rate);
        a.rbm.batch_size = self.batch_size.or(a.rbm.batch_size);
        a.rbm.n_iterations = self.iterations.or(a.rbm.n_iterations);
        a.flip_policy = self.flip_policy.unwrap_or(a.flip_policy);
        a.flip_metric = self.flip_metric.unwrap_or(a.flip_metric);
        a.epsilon = self.epsilon.unwrap_or(a.epsilon);
        a.add_noise = self.add_noise.unwrap_or(a.add_noise);
        a.include_original_image |= self.include_original_image;
    }
}

impl MetricArgs {
    fn apply(&self, config: &mut RunConfig) {
        let e = &mut config.evaluate;
        if let Some(m) = &self.metrics {
            e.metrics = m.clone();
        }
        e.step_fraction = self.step_fraction.unwrap_or(e.step_fraction);
        e.baseline = self.baseline.unwrap_or(e.baseline);
        e.score_mode = self.score_mode.unwrap_or(e.score_mode);
        e.irof_segments = self.irof_segments.unwrap_or(e.irof_segments);
        e.dump_curves |= self.dump_curves;
        e.plots |= self.plots;
    }
}

impl OracleArgs {
    fn apply(&self, config: &mut RunConfig) {
        if let Some(address) = &self.oracle {
            let (timeout, batch) = match &config.oracle {
                Some(OracleEndpoint::Network {
                    timeout_secs,
                    max_batch,
                    ..
                }) => (*timeout_secs, *max_batch),
                _ => (30.0, 64),
            };
            config.oracle = Some(OracleEndpoint::Network {
                address: address.clone(),
                timeout_secs: timeout,
                max_batch: batch,
            });
        }
        match &mut config.oracle {
            Some(OracleEndpoint::Network {
                timeout_secs,
                max_batch,
                ..
            }) => {
                *timeout_secs = self.oracle_timeout.unwrap_or(*timeout_secs);
                *max_batch = self.oracle_max_batch.unwrap_or(*max_batch);
            }
            Some(OracleEndpoint::Stub { max_batch, .. }) => {
                *max_batch = self.oracle_max_batch.unwrap_or(*max_batch);
            }
            None => {}
        }
    }
}

fn serve_stub(
    kind: &str,
    params: StubParams,
    listen: &str,
    options: ServeOptions,
) -> anyhow::Result<()> {
    let stub = make_stub(kind, &params).map_err(|e| InvalidInput(e.to_string()))?;
    let server = OracleServer::start(listen, Arc::new(stub), options).context("starting stub oracle")?;
    println!("stub oracle listening on {}", server.url());
    server.wait();
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Aggregate {
            common,
            ensemble,
            metric,
            oracle,
        } => {
            let mut config = common.load()?;
            ensemble.apply(&mut config);
            metric.apply(&mut config);
            oracle.apply(&mut config);
            let summary = cmd_aggregate(config)?;
            println!(
                "aggregated {} images into {}",
                summary.images,
                summary.maps_manifest.display()
            );
        }
        Command::Evaluate { common, metric, oracle } => {
            let mut config = common.load()?;
            metric.apply(&mut config);
            oracle.apply(&mut config);
            let summary = cmd_evaluate(config)?;
            print!("{}", summary.report.to_table());
            println!("report written to {}", summary.output_dir.display());
        }
        Command::FlipCompare {
            common,
            ensemble,
            metric,
            oracle,
        } => {
            let mut config = common.load()?;
            ensemble.apply(&mut config);
            metric.apply(&mut config);
            oracle.apply(&mut config);
            let summary = cmd_flip_compare(config)?;
            print!("{}", summary.to_table());
            println!("paired rows written to {}", summary.output_dir.display());
        }
        Command::GenNoise { common, count } => {
            let manifest = cmd_gen_noise(common.load()?, count)?;
            println!("wrote {}", manifest.display());
        }
        Command::StubOracle {
            kind,
            value,
            mask,
            baseline,
            listen,
            model_name,
            fail_first,
        } => serve_stub(
            &kind,
            StubParams { value, mask, baseline },
            &listen,
            ServeOptions { model_name, fail_first },
        )?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
