//! Command-line front end. `run_cli` takes the full argv (program name
//! first) and returns the process exit code: 0 on success, 1 on a usage
//! error, 2 when the run itself fails.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::decomp::LossKind;
use crate::error::Result;
use crate::harness::{
    early_stop_report, ensemble_trace, gen_blobs, load_dataset_dir, train_with_trace, width_sweep, write_atomic, write_dataset_dir,
    write_trace_csv, Dataset, EarlyStopConfig, NoiseSpec, OptimizerConfig, RunConfig, StopMode,
};
use crate::nn::MlpSpec;
use crate::rng::derive_seed;

const TAG_NOISE: u64 = 100;

#[derive(Debug, Parser)]
#[command(
    name = "ovlab",
    version,
    about = "Optimization-variance and bias-variance experiments on small MLPs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a Gaussian-blobs dataset (train.csv, test.csv) to a directory.
    GenData(GenDataArgs),
    /// Train one model and write its per-epoch trace.
    Train(TrainArgs),
    /// Train an ensemble on subsampled training sets and trace bias/variance.
    Decompose(DecomposeArgs),
    /// Train one model and pick a stopping epoch from OV alone.
    Earlystop(EarlystopArgs),
    /// Train one model per hidden width and correlate final OV with test accuracy.
    Widthsweep(WidthsweepArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 20)]
    dim: usize,
    #[arg(long, default_value_t = 3000)]
    n_train: usize,
    #[arg(long, default_value_t = 1000)]
    n_test: usize,
    /// Standard deviation of each blob around its unit-norm center.
    #[arg(long, default_value_t = 0.3)]
    spread: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "data")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OptName {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LossName {
    Mse,
    Ce,
    Zo,
}

impl From<LossName> for LossKind {
    fn from(l: LossName) -> Self {
        match l {
            LossName::Mse => LossKind::Mse,
            LossName::Ce => LossKind::Ce,
            LossName::Zo => LossKind::Zo,
        }
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Dataset directory: train.csv [+ test.csv], or MNIST-named IDX files.
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated layer sizes [default: <dim>,32,32,<classes>].
    #[arg(long, value_parser = parse_usize_list)]
    arch: Option<UsizeList>,
    #[arg(long, value_enum, default_value_t = OptName::Adam)]
    opt: OptName,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    /// SGD momentum (ignored for Adam).
    #[arg(long, default_value_t = 0.0)]
    momentum: f64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    /// Fraction of training labels shuffled before training.
    #[arg(long, default_value_t = 0.0)]
    label_noise: f64,
    /// Training batches per OV measurement.
    #[arg(long, default_value_t = 10)]
    ov_batches: usize,
    /// Rows per OV batch [default: --batch-size].
    #[arg(long)]
    ov_batch_size: Option<usize>,
    /// Training inputs OV is averaged over.
    #[arg(long, default_value_t = 1000)]
    ov_samples: usize,
    /// Plain-SGD probe learning rate for OV [default: none, use the training optimizer].
    #[arg(long)]
    ov_probe_lr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value = "trace.csv")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DecomposeArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Ensemble size.
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Fraction of the training set each member sees.
    #[arg(long, default_value_t = 0.5)]
    frac: f64,
    #[arg(long, value_enum, default_value_t = LossName::Zo)]
    loss: LossName,
    #[arg(long, default_value = "decompose.csv")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EarlystopArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Moving-average window applied to OV.
    #[arg(long, default_value_t = 10)]
    window: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value = "earlystop.csv")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct WidthsweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Hidden widths to sweep.
    #[arg(long, value_parser = parse_usize_list, default_value = "4,8,16,32,64")]
    widths: UsizeList,
    #[arg(long, default_value = "widthsweep.csv")]
    out: PathBuf,
}

#[derive(Debug, Clone)]
struct UsizeList(Vec<usize>);

fn parse_usize_list(s: &str) -> std::result::Result<UsizeList, String> {
    let v = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("'{p}': {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if v.is_empty() || v.contains(&0) {
        return Err("entries must be positive integers".into());
    }
    Ok(UsizeList(v))
}

pub fn run_cli(argv: &[String]) -> i32 {
    run_cli_with(argv, &mut std::io::stdout(), &mut std::io::stderr())
}

/// Like [`run_cli`] with explicit output streams.
pub fn run_cli_with(argv: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{}", e.render());
                return 0;
            }
            let text = e.render().to_string();
            let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("usage error");
            let _ = writeln!(err, "{line}");
            return 1;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

fn execute(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::GenData(a) => {
            let data = gen_blobs(a.classes, a.dim, a.n_train, a.n_test, a.spread, a.seed)?;
            write_dataset_dir(&a.out, &data)?;
            writeln!(out, "wrote {} train / {} test rows to {}", a.n_train, a.n_test, a.out.display())?;
        }
        Command::Train(a) => {
            let (data, cfg) = prepare(&a.run)?;
            let trace = train_with_trace(&data, &cfg)?;
            write_trace_csv(&trace, &a.out)?;
            let last = trace.rows.last().expect("epochs >= 1");
            writeln!(
                out,
                "epochs={} final_train_ce={} final_test_zo={} final_ov={}",
                trace.len(),
                last.train_ce,
                last.test_zo,
                last.ov
            )?;
            writeln!(out, "trace: {}", a.out.display())?;
        }
        Command::Decompose(a) => {
            let (data, cfg) = prepare(&a.run)?;
            let trace = ensemble_trace(&data, &cfg, a.k, a.frac, a.loss.into())?;
            write_trace_csv(&trace, &a.out)?;
            let last = trace.rows.last().expect("epochs >= 1");
            writeln!(
                out,
                "loss={} k={} frac={} final_bias={} final_variance={}",
                LossKind::from(a.loss),
                a.k,
                a.frac,
                last.bias.unwrap_or(f64::NAN),
                last.variance.unwrap_or(f64::NAN)
            )?;
            writeln!(out, "trace: {}", a.out.display())?;
        }
        Command::Earlystop(a) => {
            let (data, cfg) = prepare(&a.run)?;
            let trace = train_with_trace(&data, &cfg)?;
            write_trace_csv(&trace, &a.out)?;
            let es = EarlyStopConfig {
                window: a.window,
                patience: a.patience,
                mode: StopMode::Minimize,
            };
            let rep = early_stop_report(&trace, &es)?;
            writeln!(out, "window={} patience={}", es.window, es.patience)?;
            writeln!(out, "best_epoch={}", rep.best_epoch)?;
            writeln!(out, "stop_epoch={}", rep.stop_epoch)?;
            if let (Some(e), Some((best, stop)), Some(ref_e)) = (rep.test_error_at_best, rep.reference, rep.reference_test_error) {
                // verification only; the stopping point above never looks at test data
                writeln!(out, "test_error_at_best={e}")?;
                writeln!(
                    out,
                    "groundtruth_best_epoch={best} groundtruth_stop_epoch={stop} groundtruth_test_error={ref_e}"
                )?;
                writeln!(out, "test_error_gap={}", (e - ref_e).abs())?;
            }
            writeln!(out, "trace: {}", a.out.display())?;
        }
        Command::Widthsweep(a) => {
            let (data, cfg) = prepare(&a.run)?;
            let res = width_sweep(&data, &cfg, &a.widths.0)?;
            let mut csv = String::from("width,final_test_acc,final_ov\n");
            for r in &res.rows {
                csv.push_str(&format!("{},{},{}\n", r.width, r.final_test_acc, r.final_ov));
            }
            write_atomic(&a.out, csv.as_bytes())?;
            for r in &res.rows {
                writeln!(out, "width={} final_test_acc={} final_ov={}", r.width, r.final_test_acc, r.final_ov)?;
            }
            writeln!(out, "r={}", res.r)?;
            writeln!(out, "table: {}", a.out.display())?;
        }
    }
    Ok(())
}

fn prepare(a: &RunArgs) -> Result<(Dataset, RunConfig)> {
    let data = load_dataset_dir(&a.data)?;
    let arch = match &a.arch {
        Some(list) => MlpSpec::new(list.0.clone())?,
        None => MlpSpec::new(vec![data.input_dim(), 32, 32, data.class_count])?,
    };
    let optimizer = match a.opt {
        OptName::Sgd => OptimizerConfig::sgd(a.lr, a.momentum),
        OptName::Adam => OptimizerConfig::adam(a.lr),
    };
    let mut cfg = RunConfig::new(arch, optimizer, a.epochs, a.seed);
    cfg.batch_size = a.batch_size;
    cfg.label_noise = NoiseSpec::new(a.label_noise, derive_seed(a.seed, &[TAG_NOISE]))?;
    cfg.ov_batches = a.ov_batches;
    cfg.ov_batch_size = a.ov_batch_size;
    cfg.ov_samples = a.ov_samples;
    cfg.ov_probe_lr = a.ov_probe_lr;
    Ok((data, cfg))
}
