use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use mg1nn::case_study::{self, load_service_sample};
use mg1nn::dataset::{self, Dataset, GenerateConfig, Split, TailPolicy};
use mg1nn::metrics::{EvalReport, STANDARD_PERCENTILES};
use mg1nn::mlp::{self, MlpModel, TrainConfig};
use mg1nn::qbd::{self, QbdSolution, QueueInstance};
use mg1nn::random::{seeded, stream};
use mg1nn::sampler::{sample_ph, SamplerConfig};
use mg1nn::simulate::{draw_service_sample, simulate_mph1, SimConfig};
use mg1nn::{Error, PhaseType, Result};

/// Learn M/G/1 queue-length distributions from service-time moments.
#[derive(Parser)]
#[command(name = "mg1nn", version)]
struct Cli {
    /// Master seed used when a subcommand's --seed is omitted.
    #[arg(long, global = true, env = "MG1_SEED", default_value_t = 42)]
    master_seed: u64,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw random phase-type distributions, one JSON record per line.
    SamplePh(SamplePhArgs),
    /// Generate a dataset split of (features, exact queue-length law) pairs.
    GenDataset(GenDatasetArgs),
    /// Exact queue-length distribution of an M/PH/1 queue.
    Solve(SolveArgs),
    /// Empirical queue-length distribution by discrete-event simulation.
    Simulate(SimulateArgs),
    /// Draw i.i.d. service times from a PH distribution, one per line.
    DrawSample(DrawSampleArgs),
    /// Train the network on a training split, selecting on a validation split.
    Train(TrainArgs),
    /// Predict the queue-length distribution from lambda and raw moments.
    Predict(PredictArgs),
    /// Evaluate a model on a test split.
    Evaluate(EvaluateArgs),
    /// Validation Metric1 as a function of the number of moments.
    MomentSweep(MomentSweepArgs),
    /// Predict from raw service-time data and optionally compare with a known PH.
    CaseStudy(CaseStudyArgs),
}

#[derive(Args)]
struct SamplerFlags {
    #[arg(long, default_value_t = 20)]
    max_ph: usize,
    #[arg(long, default_value_t = 0.95)]
    rho_max: f64,
    #[arg(long, default_value_t = 1.0)]
    rate_lo: f64,
    #[arg(long, default_value_t = 1000.0)]
    rate_hi: f64,
}

impl SamplerFlags {
    fn config(&self, seed: u64) -> SamplerConfig {
        SamplerConfig {
            max_ph: self.max_ph,
            rho_max: self.rho_max,
            rate_lo: self.rate_lo,
            rate_hi: self.rate_hi,
            seed,
            ..SamplerConfig::default()
        }
    }
}

#[derive(Args)]
struct SamplePhArgs {
    #[command(flatten)]
    sampler: SamplerFlags,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Rescale each draw to unit mean.
    #[arg(long)]
    unit_mean: bool,
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenDatasetArgs {
    #[command(flatten)]
    sampler: SamplerFlags,
    #[arg(long, default_value_t = 50_000)]
    count: usize,
    #[arg(long, default_value_t = 5)]
    n_moments: usize,
    #[arg(long, value_enum, default_value_t = Split::Train)]
    split: Split,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = qbd::DEFAULT_LEVELS)]
    l: usize,
    #[arg(long, default_value_t = qbd::DEFAULT_EPSILON)]
    eps: f64,
    /// Store draws whose tail beyond level l exceeds eps instead of redrawing.
    #[arg(long)]
    keep_heavy_tails: bool,
    /// Worker threads (0 = all cores). The output does not depend on it.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    lambda: f64,
    /// File holding a PH record.
    #[arg(long)]
    ph: PathBuf,
    #[arg(long, default_value_t = qbd::DEFAULT_LEVELS)]
    l: usize,
    /// Fail when the mass beyond level l exceeds this (no check when omitted).
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    lambda: f64,
    #[arg(long)]
    ph: PathBuf,
    /// Total events simulated (arrivals plus departures); accepts 1e6.
    #[arg(long, default_value_t = 1e6)]
    events: f64,
    #[arg(long, default_value_t = 10_000)]
    warmup: u64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = qbd::DEFAULT_LEVELS)]
    l: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DrawSampleArgs {
    #[arg(long)]
    ph: PathBuf,
    #[arg(long, default_value_t = 50_000)]
    count: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0.97)]
    decay: f64,
    #[arg(long, default_value_t = 1e-5)]
    wd: f64,
    /// Stop after this many epochs without validation improvement.
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl TrainFlags {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch,
            epochs: self.epochs,
            lr0: self.lr,
            lr_decay: self.decay,
            weight_decay: self.wd,
            seed,
            patience: self.patience,
            ..TrainConfig::default()
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[command(flatten)]
    flags: TrainFlags,
    /// Per-epoch log as CSV.
    #[arg(long)]
    log_csv: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    lambda: f64,
    /// Raw moments m2,m3,... of a unit-mean service time (or of any scale
    /// when --mean is given).
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    moments: Vec<f64>,
    /// Mean service time m1 of the given moments.
    #[arg(long, default_value_t = 1.0)]
    mean: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Histogram bins for the per-sample Metric1 CSV.
    #[arg(long, default_value_t = 50)]
    bins: usize,
    /// Per-sample Metric1 histogram CSV.
    #[arg(long)]
    histogram: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MomentSweepArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    /// Moment counts to try; each must not exceed the datasets' count.
    #[arg(long, value_delimiter = ',', default_value = "2,3,4,5,6,7,8")]
    counts: Vec<usize>,
    #[command(flatten)]
    flags: TrainFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CaseStudyArgs {
    /// Service times, one positive number per line.
    #[arg(long)]
    sample: PathBuf,
    #[arg(long)]
    lambda: f64,
    #[arg(long)]
    model: PathBuf,
    /// Ground-truth PH record for comparison with the exact law.
    #[arg(long)]
    ph: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_ph(path: &Path) -> Result<PhaseType> {
    let text = fs::read_to_string(path)?;
    let first = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| Error::Parse(format!("{}: no PH record", path.display())))?;
    Ok(serde_json::from_str(first)?)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn vector_text(probs: &[f64], tail: f64) -> String {
    let mut s = String::new();
    for p in probs {
        let _ = writeln!(s, "{p}");
    }
    let _ = writeln!(s, "# tail_mass {tail}");
    s
}

fn run(cli: Cli) -> Result<()> {
    let master = cli.master_seed;
    match cli.command {
        Command::SamplePh(a) => {
            let seed = a.seed.unwrap_or(master);
            let cfg = a.sampler.config(seed);
            let mut text = String::new();
            for i in 0..a.count {
                let mut ph = sample_ph(&cfg, &mut stream(seed, i as u64))?;
                if a.unit_mean {
                    ph = ph.scale_to_unit_mean()?;
                }
                text.push_str(&serde_json::to_string(&ph)?);
                text.push('\n');
            }
            emit(a.out.as_deref(), &text)
        }
        Command::GenDataset(a) => {
            let seed = a.split.derive_seed(a.seed.unwrap_or(master));
            let cfg = GenerateConfig {
                count: a.count,
                n_moments: a.n_moments,
                levels: a.l,
                epsilon: a.eps,
                tail_policy: if a.keep_heavy_tails {
                    TailPolicy::Keep
                } else {
                    TailPolicy::Reject
                },
                sampler: a.sampler.config(seed),
                workers: a.workers,
            };
            let ds = dataset::generate(&cfg, seed)?;
            info!("generated {} samples with seed {seed}", ds.len());
            ds.save(&a.out)
        }
        Command::Solve(a) => {
            let inst = QueueInstance::new(a.lambda, read_ph(&a.ph)?)?;
            let dist = match a.eps {
                Some(eps) => qbd::solve(&inst, a.l, eps)?,
                None => QbdSolution::solve(&inst)?.distribution(a.l)?,
            };
            emit(a.out.as_deref(), &vector_text(&dist.probs, dist.tail_mass))
        }
        Command::Simulate(a) => {
            if !(a.events >= 1.0 && a.events.fract() == 0.0) {
                return Err(Error::InvalidConfig(format!("--events must be a positive integer, got {}", a.events)));
            }
            let cfg = SimConfig {
                warmup_events: a.warmup,
                horizon_events: a.events as u64,
                seed: a.seed.unwrap_or(master),
                levels: a.l,
            };
            if cfg.warmup_events >= cfg.horizon_events {
                return Err(Error::InvalidConfig("--warmup must be below --events".into()));
            }
            let ph = read_ph(&a.ph)?;
            if a.lambda < 0.0 || a.lambda * ph.mean() >= 1.0 {
                return Err(Error::Unstable {
                    rho: a.lambda * ph.mean(),
                });
            }
            let r = simulate_mph1(a.lambda, &ph, &cfg);
            emit(a.out.as_deref(), &vector_text(&r.distribution.probs, r.distribution.tail_mass))
        }
        Command::DrawSample(a) => {
            let ph = read_ph(&a.ph)?;
            let xs = draw_service_sample(&ph, a.count, &mut seeded(a.seed.unwrap_or(master)));
            let mut text = String::with_capacity(xs.len() * 20);
            for x in xs {
                let _ = writeln!(text, "{x}");
            }
            emit(a.out.as_deref(), &text)
        }
        Command::Train(a) => {
            let train = Dataset::load(&a.train)?;
            let val = Dataset::load(&a.val)?;
            let cfg = a.flags.config(a.flags.seed.unwrap_or(master));
            let outcome = mlp::train(&train, &val, &cfg)?;
            info!(
                "best epoch {} with validation metric1 {:.6e}",
                outcome.best_epoch, outcome.best_val_metric1
            );
            if let Some(p) = &a.log_csv {
                let mut s = String::from("epoch,learning_rate,train_loss,val_metric1\n");
                for e in &outcome.log {
                    let _ = writeln!(s, "{},{},{},{}", e.epoch, e.learning_rate, e.train_loss, e.val_metric1);
                }
                fs::write(p, s)?;
            }
            outcome.model.save(&a.out)
        }
        Command::Predict(a) => {
            let model = MlpModel::load(&a.model)?;
            if a.mean <= 0.0 {
                return Err(Error::InvalidConfig("--mean must be positive".into()));
            }
            let raw: Vec<f64> = std::iter::once(a.mean).chain(a.moments.iter().copied()).collect();
            let probs = case_study::predict_from_moments(&model, a.lambda, &raw)?;
            let mut s = String::new();
            for p in probs {
                let _ = writeln!(s, "{p}");
            }
            emit(a.out.as_deref(), &s)
        }
        Command::Evaluate(a) => {
            let model = MlpModel::load(&a.model)?;
            let test = Dataset::load(&a.test)?;
            if test.n_moments != model.n_moments || test.levels != model.output_dim() {
                return Err(Error::DatasetMismatch(format!(
                    "model expects n={} l={}, test set has n={} l={}",
                    model.n_moments,
                    model.output_dim(),
                    test.n_moments,
                    test.levels
                )));
            }
            let inputs = model.feature_stats.apply_all(&test.features())?;
            let pred = mlp::predict_all(&model, &inputs)?;
            let report = EvalReport::build(&test.targets(), &pred, &STANDARD_PERCENTILES)?;
            if let Some(p) = &a.histogram {
                fs::write(p, report.histogram_csv(a.bins.max(1)))?;
            }
            emit(a.out.as_deref(), &report.render())
        }
        Command::MomentSweep(a) => {
            let train = Dataset::load(&a.train)?;
            let val = Dataset::load(&a.val)?;
            let cfg = a.flags.config(a.flags.seed.unwrap_or(master));
            let table = mlp::moment_sweep(&train, &val, &a.counts, &cfg)?;
            let mut s = String::from("n_moments,val_metric1\n");
            for (n, m) in &table {
                let _ = writeln!(s, "{n},{m}");
            }
            emit(a.out.as_deref(), &s)
        }
        Command::CaseStudy(a) => {
            let model = MlpModel::load(&a.model)?;
            let sample = load_service_sample(&a.sample)?;
            let truth = a.ph.as_deref().map(read_ph).transpose()?;
            let r = case_study::case_study(&sample, a.lambda, &model, truth.as_ref())?;
            let mut s = String::new();
            let _ = writeln!(s, "samples {}", sample.len());
            let moments: Vec<String> = r.estimated_moments.iter().map(|m| format!("{m:e}")).collect();
            let _ = writeln!(s, "estimated_moments {}", moments.join(","));
            let _ = writeln!(s, "scaled_lambda {}", r.scaled_lambda);
            if let Some(t) = &r.truth {
                let _ = writeln!(s, "metric1 {:.6e}", t.metric1);
                let _ = writeln!(s, "exact_tail_mass {:e}", t.exact_tail_mass);
                for (p, e) in &t.metric2 {
                    match e {
                        Some(e) => writeln!(s, "metric2 {p} {e:.6e}"),
                        None => writeln!(s, "metric2 {p} beyond-truncation"),
                    }
                    .expect("writing to a String");
                }
            }
            s.push_str("level,predicted");
            if r.truth.is_some() {
                s.push_str(",exact");
            }
            s.push('\n');
            for (k, p) in r.prediction.iter().enumerate() {
                let _ = write!(s, "{k},{p}");
                if let Some(t) = &r.truth {
                    let _ = write!(s, ",{}", t.exact[k]);
                }
                s.push('\n');
            }
            emit(a.out.as_deref(), &s)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = run(cli);
    let _ = io::stdout().flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut err = BufWriter::new(io::stderr().lock());
            let _ = writeln!(err, "error: {}: {e}", e.category());
            ExitCode::from(1)
        }
    }
}
