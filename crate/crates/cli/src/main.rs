use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use whitband_cli::alloc_track::CountingAllocator;
use whitband_cli::commands::{
    self, BenchArgs, CmdError, FitArgs, LambdaSource, SmoothArgs, SynthArgs,
};
use whitband_cli::series_io;

#[global_allocator]
static ALLOC: CountingAllocator = CountingAllocator;

/// Whittaker smoothing for irregular, masked, multivariate time series on a
/// banded Cholesky core.
#[derive(Parser)]
#[command(name = "whitband", version, about)]
struct Cli {
    /// Worker threads (1 guarantees bitwise-deterministic fits).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Smooth a series file and write the reconstruction.
    Smooth(SmoothCli),
    /// Fit a smoothing-weight model by gradient descent on the masked loss.
    Fit(FitCli),
    /// Compare the banded solver against a dense baseline.
    Bench(BenchCli),
    /// Emit a synthetic heteroscedastic series with both fits, for plotting.
    Synth(SynthCli),
}

#[derive(Args)]
struct SmoothCli {
    /// Input series CSV (series_id,channel,time_days,value,valid_flag).
    #[arg(short, long)]
    input: PathBuf,
    /// Output series CSV.
    #[arg(short, long)]
    output: PathBuf,
    /// Difference order of the penalty.
    #[arg(long, default_value_t = 2)]
    order: usize,
    /// Constant smoothing weight for all series.
    #[arg(long, conflicts_with_all = ["lambda_file", "checkpoint"])]
    lambda: Option<f64>,
    /// Per-stencil weights from a series_id,index,lambda CSV.
    #[arg(long, conflicts_with = "checkpoint")]
    lambda_file: Option<PathBuf>,
    /// Fitted regularizer checkpoint emitting the weights.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Resample the reconstruction on a regular grid with this day step.
    #[arg(long)]
    grid_step: Option<f64>,
}

#[derive(Args)]
struct FitCli {
    #[arg(short, long)]
    input: PathBuf,
    /// Model kind: scalar, vector or network.
    #[arg(long, default_value = "scalar")]
    kind: String,
    #[arg(long, default_value_t = 2)]
    order: usize,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of observed points hidden per series during fitting.
    #[arg(long, default_value_t = 0.1)]
    mask_fraction: f64,
    #[arg(long)]
    checkpoint_out: PathBuf,
    /// Loss trace CSV (step,loss).
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Evaluation report CSV (model_kind,order,mse,maxe,seed).
    #[arg(long)]
    report_out: Option<PathBuf>,
    /// Optimizer: sgd, momentum or adam.
    #[arg(long, default_value = "adam")]
    optimizer: String,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    /// Scalar/vector kinds: share one parameter set across all series
    /// instead of fitting each series independently.
    #[arg(long)]
    shared: bool,
    /// Smoothing weight the model starts from.
    #[arg(long, default_value_t = 1.0)]
    init_lambda: f64,
    /// Redraw the hidden positions every step.
    #[arg(long)]
    resample_masks: bool,
    /// Network kind: window radius in samples.
    #[arg(long, default_value_t = 5)]
    window_radius: usize,
    /// Network kind: hidden layer width.
    #[arg(long, default_value_t = 16)]
    hidden: usize,
}

#[derive(Args)]
struct BenchCli {
    /// Series length.
    #[arg(long, default_value_t = 350)]
    t: usize,
    #[arg(long, default_value_t = 10)]
    channels: usize,
    /// Difference orders, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = vec![2, 3, 4])]
    orders: Vec<usize>,
    /// Batch sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = vec![16, 64, 256, 1024])]
    batch_sizes: Vec<usize>,
    /// Timed runs per cell, averaged.
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Dense cells above this working-set cap are recorded as out of memory.
    #[arg(long, default_value_t = 512)]
    memory_cap_mb: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Also write the report as CSV.
    #[arg(long)]
    csv_out: Option<PathBuf>,
    /// Skip the single-series memory-growth ladders.
    #[arg(long)]
    no_memory_ladder: bool,
}

#[derive(Args)]
struct SynthCli {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 80)]
    t: usize,
    #[arg(long, default_value_t = 0.05)]
    sigma_low: f64,
    #[arg(long, default_value_t = 0.5)]
    sigma_high: f64,
    /// High-noise window start, in days.
    #[arg(long, default_value_t = 6.0)]
    window_start: f64,
    /// High-noise window end, in days.
    #[arg(long, default_value_t = 10.0)]
    window_end: f64,
    #[arg(long, default_value_t = 2)]
    order: usize,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = 0.25)]
    lr: f64,
    #[arg(long, default_value_t = 0.2)]
    mask_fraction: f64,
    /// Output prefix; writes <prefix>_values.csv and <prefix>_reg.csv.
    #[arg(long, default_value = "synth")]
    out_prefix: PathBuf,
}

fn run() -> Result<(), CmdError> {
    let cli = Cli::try_parse().map_err(|e| {
        // clap already formats help/version nicely; pass those through
        if e.use_stderr() {
            CmdError::Usage(e.to_string())
        } else {
            print!("{e}");
            std::process::exit(0);
        }
    })?;

    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CmdError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CmdError::Usage(format!("cannot configure thread pool: {e}")))?;
    }

    match cli.command {
        Command::Smooth(a) => {
            let lambda = match (a.lambda, a.lambda_file, a.checkpoint) {
                (Some(v), None, None) => LambdaSource::Scalar(v),
                (None, Some(p), None) => LambdaSource::File(p),
                (None, None, Some(p)) => LambdaSource::Checkpoint(p),
                _ => {
                    return Err(CmdError::Usage(
                        "exactly one of --lambda, --lambda-file, --checkpoint is required".into(),
                    ))
                }
            };
            commands::cmd_smooth(&SmoothArgs {
                input: a.input,
                output: a.output,
                order: a.order,
                lambda,
                grid_step: a.grid_step,
            })
        }
        Command::Fit(a) => {
            let kind = a.kind.parse().map_err(|e: whitband::Error| {
                CmdError::Usage(e.to_string())
            })?;
            let outcome = commands::cmd_fit(&FitArgs {
                input: a.input,
                kind,
                order: a.order,
                steps: a.steps,
                lr: a.lr,
                seed: a.seed,
                mask_fraction: a.mask_fraction,
                checkpoint_out: a.checkpoint_out,
                trace_out: a.trace_out,
                report_out: a.report_out,
                optimizer: a.optimizer,
                momentum: a.momentum,
                shared: a.shared,
                init_lambda: a.init_lambda,
                resample_masks: a.resample_masks,
                window_radius: a.window_radius,
                hidden: a.hidden,
            })?;
            println!(
                "fit done: loss {} -> {} over {} recorded steps",
                outcome.losses.first().unwrap(),
                outcome.losses.last().unwrap(),
                outcome.losses.len()
            );
            print!("{}", outcome.report.to_csv());
            Ok(())
        }
        Command::Bench(a) => {
            let report = commands::cmd_bench(&BenchArgs {
                t: a.t,
                channels: a.channels,
                orders: a.orders,
                batch_sizes: a.batch_sizes,
                repeats: a.repeats,
                memory_cap_mb: a.memory_cap_mb,
                seed: a.seed,
                csv_out: a.csv_out,
                memory_ladder: !a.no_memory_ladder,
            })?;
            print!("{}", report.to_table());
            Ok(())
        }
        Command::Synth(a) => commands::cmd_synth(&SynthArgs {
            seed: a.seed,
            t: a.t,
            sigma_low: a.sigma_low,
            sigma_high: a.sigma_high,
            window: (a.window_start, a.window_end),
            order: a.order,
            steps: a.steps,
            lr: a.lr,
            mask_fraction: a.mask_fraction,
            out_prefix: a.out_prefix,
        }),
    }
}

fn main() -> ExitCode {
    // keep the allocator linked in even before the first command allocates
    let _ = series_io::HEADER;
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
