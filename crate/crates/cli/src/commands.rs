//! Subcommand implementations shared by the binary and the test suites.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, Axis};
use whitband::harness::{self, EvalReport, EvalRow};
use whitband::regfit::{self, FitSpec, ModelKind, OptVariant, OptimizerSpec, RegularizerModel};
use whitband::{smoother, Error, TimeSeriesBatch};

use crate::bench::{self, BenchReport, CellSpec, Solver};
use crate::series_io::{self, SeriesFile};

/// Command failures sorted by exit code: usage 1, data 2, numerical 3.
#[derive(Debug)]
pub enum CmdError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CmdError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CmdError::Usage(_) => 1,
            CmdError::Data(_) => 2,
            CmdError::Numerical(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CmdError::Usage(m) | CmdError::Data(m) | CmdError::Numerical(m) => m,
        }
    }
}

impl From<Error> for CmdError {
    fn from(e: Error) -> Self {
        match e {
            Error::NotPositiveDefinite { .. }
            | Error::Diverged { .. }
            | Error::NonFiniteGradient { .. } => CmdError::Numerical(e.to_string()),
            Error::Structure(_) | Error::Domain(_) | Error::Data(_) | Error::ZeroVariance(_) => {
                CmdError::Data(e.to_string())
            }
        }
    }
}

pub type CmdResult<T> = std::result::Result<T, CmdError>;

/// Where the smoothing weights come from in `smooth`.
#[derive(Debug, Clone)]
pub enum LambdaSource {
    Scalar(f64),
    File(PathBuf),
    Checkpoint(PathBuf),
}

#[derive(Debug, Clone)]
pub struct SmoothArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    pub order: usize,
    pub lambda: LambdaSource,
    pub grid_step: Option<f64>,
}

/// Heteroscedastic weights from a `series_id,index,lambda` table; every
/// series needs all T - order entries.
fn load_lambda_file(
    path: &Path,
    series_ids: &[String],
    n_weights: usize,
) -> CmdResult<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CmdError::Data(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CmdError::Data(e.to_string()))?
        .clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols != ["series_id", "index", "lambda"] {
        return Err(CmdError::Data(format!(
            "lambda file needs header series_id,index,lambda, got {:?}",
            cols.join(",")
        )));
    }
    let mut map: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (idx, rec) in reader.records().enumerate() {
        let line = idx + 2;
        let rec = rec.map_err(|e| CmdError::Data(format!("row {line}: {e}")))?;
        let sid = &rec[0];
        let s = series_ids
            .iter()
            .position(|x| x == sid)
            .ok_or_else(|| CmdError::Data(format!("row {line}: unknown series '{sid}'")))?;
        let r: usize = rec[1]
            .parse()
            .map_err(|_| CmdError::Data(format!("row {line}: bad index '{}'", &rec[1])))?;
        if r >= n_weights {
            return Err(CmdError::Data(format!(
                "row {line}: index {r} out of range (need 0..{n_weights})"
            )));
        }
        let v: f64 = rec[2]
            .parse()
            .map_err(|_| CmdError::Data(format!("row {line}: bad lambda '{}'", &rec[2])))?;
        if map.insert((s, r), v).is_some() {
            return Err(CmdError::Data(format!(
                "row {line}: duplicate weight for series '{sid}' index {r}"
            )));
        }
    }
    let mut lam = Array2::<f64>::zeros((series_ids.len(), n_weights));
    for s in 0..series_ids.len() {
        for r in 0..n_weights {
            lam[(s, r)] = *map.get(&(s, r)).ok_or_else(|| {
                CmdError::Data(format!(
                    "lambda file is missing series '{}' index {r}",
                    series_ids[s]
                ))
            })?;
        }
    }
    Ok(lam)
}

/// Query grid covering the series span with the given step: t0, t0+step, …
/// up to ceil(span/step)+1 points.
pub fn grid_times(t0: f64, t_last: f64, step: f64) -> Vec<f64> {
    let span = t_last - t0;
    let n = (span / step).ceil() as usize + 1;
    (0..n).map(|i| t0 + step * i as f64).collect()
}

pub fn cmd_smooth(args: &SmoothArgs) -> CmdResult<()> {
    if args.order == 0 {
        return Err(CmdError::Usage("--order must be at least 1".into()));
    }
    if let Some(step) = args.grid_step {
        if !(step > 0.0) {
            return Err(CmdError::Usage("--grid-step must be positive".into()));
        }
    }
    let file = series_io::load_series(&args.input)?;
    let (std_batch, standardizer) = harness::standardize(&file.batch)?;

    let n_weights = std_batch.len() - args.order;
    let lam = match &args.lambda {
        LambdaSource::Scalar(v) => Array2::from_elem((std_batch.n_series(), n_weights), *v),
        LambdaSource::File(path) => load_lambda_file(path, &file.series_ids, n_weights)?,
        LambdaSource::Checkpoint(path) => {
            let model = regfit::load_checkpoint(path)?;
            model.emit_lambda_batch(&std_batch, args.order)?
        }
    };

    let ctx = smoother::smooth_hetero(&std_batch, args.order, &lam)?;
    if ctx.clamp_count > 0 {
        eprintln!(
            "warning: {} smoothing weights clamped into [{:.0e}, {:.0e}]",
            ctx.clamp_count,
            smoother::LAMBDA_MIN,
            smoother::LAMBDA_MAX
        );
    }

    let out = match args.grid_step {
        None => {
            let mut smoothed = file.batch.clone();
            smoothed.values = ctx.z.clone();
            let mut s = smoothed;
            // back to raw units
            let (b, c, t) = s.values.dim();
            for series in 0..b {
                for ch in 0..c {
                    for i in 0..t {
                        s.values[(series, ch, i)] = s.values[(series, ch, i)]
                            * standardizer.scale[ch]
                            + standardizer.mean[ch];
                    }
                }
            }
            SeriesFile {
                batch: s,
                series_ids: file.series_ids.clone(),
                channels: file.channels.clone(),
            }
        }
        Some(step) => {
            let b = std_batch.n_series();
            let c = std_batch.n_channels();
            // per-series 5-day-style grid; pad to the longest query grid
            let mut queries: Vec<Vec<f64>> = Vec::with_capacity(b);
            for s in 0..b {
                let times = std_batch.times.row(s);
                queries.push(grid_times(times[0], times[times.len() - 1], step));
            }
            let q_max = queries.iter().map(Vec::len).max().unwrap();
            let mut times = Array2::<f64>::zeros((b, q_max));
            let mut values = Array3::<f64>::zeros((b, c, q_max));
            let mut mask = Array2::<f64>::zeros((b, q_max));
            for s in 0..b {
                let mut vals = ctx.interpolate(s, &queries[s])?;
                standardizer.invert_values(&mut vals);
                let orig_times = std_batch.times.row(s);
                for (qi, &qt) in queries[s].iter().enumerate() {
                    times[(s, qi)] = qt;
                    // flag grid points that land on an originally observed time
                    let observed = orig_times
                        .iter()
                        .zip(std_batch.mask.row(s).iter())
                        .any(|(t, m)| *t == qt && *m == 1.0);
                    mask[(s, qi)] = if observed { 1.0 } else { 0.0 };
                    for ch in 0..c {
                        values[(s, ch, qi)] = vals[(ch, qi)];
                    }
                }
                // pad tail with increasing times, mask 0
                let mut last = *queries[s].last().unwrap();
                for qi in queries[s].len()..q_max {
                    last += step;
                    times[(s, qi)] = last;
                }
            }
            SeriesFile {
                batch: TimeSeriesBatch::new(times, values, mask)?,
                series_ids: file.series_ids.clone(),
                channels: file.channels.clone(),
            }
        }
    };
    series_io::save_series(&args.output, &out)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct FitArgs {
    pub input: PathBuf,
    pub kind: ModelKind,
    pub order: usize,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    pub mask_fraction: f64,
    pub checkpoint_out: PathBuf,
    pub trace_out: Option<PathBuf>,
    pub report_out: Option<PathBuf>,
    pub optimizer: String,
    pub momentum: f64,
    pub shared: bool,
    pub init_lambda: f64,
    pub resample_masks: bool,
    pub window_radius: usize,
    pub hidden: usize,
}

impl Default for FitArgs {
    fn default() -> Self {
        FitArgs {
            input: PathBuf::new(),
            kind: ModelKind::Scalar,
            order: 2,
            steps: 100,
            lr: 0.1,
            seed: 0,
            mask_fraction: 0.1,
            checkpoint_out: PathBuf::new(),
            trace_out: None,
            report_out: None,
            optimizer: "adam".into(),
            momentum: 0.9,
            shared: false,
            init_lambda: 1.0,
            resample_masks: false,
            window_radius: 5,
            hidden: 16,
        }
    }
}

fn parse_optimizer(name: &str, momentum: f64) -> CmdResult<OptVariant> {
    match name {
        "sgd" => Ok(OptVariant::Sgd { momentum: 0.0 }),
        "momentum" => Ok(OptVariant::Sgd { momentum }),
        "adam" => Ok(OptVariant::adam()),
        other => Err(CmdError::Usage(format!(
            "unknown optimizer '{other}' (expected sgd, momentum or adam)"
        ))),
    }
}

/// Loss trace CSV: one `step,loss` row per recorded loss.
pub fn trace_to_csv(losses: &[f64]) -> String {
    let mut out = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        out.push_str(&format!("{i},{l}\n"));
    }
    out
}

/// Reconstruction metrics of a forward solve at the held-out positions of
/// an evaluation plan, averaged over series.
fn eval_masked_metrics(
    batch: &TimeSeriesBatch,
    order: usize,
    lam: &Array2<f64>,
    plan: &harness::MaskingPlan,
) -> CmdResult<(f64, f64)> {
    let masked = plan.apply(batch);
    let ctx = smoother::smooth_hetero(&masked, order, lam)?;
    let (b, _, t) = batch.values.dim();
    let mut mse_sum = 0.0;
    let mut maxe_sum = 0.0;
    for s in 0..b {
        let mut w = vec![0.0; t];
        for &i in &plan.masked[s] {
            w[i] = 1.0;
        }
        let m = harness::metrics(
            ctx.z.index_axis(Axis(0), s),
            batch.values.index_axis(Axis(0), s),
            ndarray::ArrayView1::from(&w),
        )?;
        mse_sum += m.mse;
        maxe_sum += m.maxe;
    }
    Ok((mse_sum / b as f64, maxe_sum / b as f64))
}

pub struct FitOutcome {
    pub losses: Vec<f64>,
    pub report: EvalReport,
}

pub fn cmd_fit(args: &FitArgs) -> CmdResult<FitOutcome> {
    let file = series_io::load_series(&args.input)?;
    let (batch, _) = harness::standardize(&file.batch)?;
    let n_weights = batch.len() - args.order;

    let mut model = match args.kind {
        ModelKind::Scalar => {
            RegularizerModel::scalar(batch.n_series(), args.init_lambda, args.shared)
        }
        ModelKind::Vector => {
            if args.shared {
                RegularizerModel::vector_shared(n_weights, args.init_lambda)
            } else {
                RegularizerModel::vector(batch.n_series(), n_weights, args.init_lambda)
            }
        }
        ModelKind::Network => RegularizerModel::network(
            batch.n_channels(),
            args.window_radius,
            args.hidden,
            args.seed,
            args.init_lambda,
        ),
    };

    let spec = FitSpec {
        order: args.order,
        mask_fraction: args.mask_fraction,
        seed: args.seed,
        resample_masks: args.resample_masks,
    };
    let opt = OptimizerSpec {
        variant: parse_optimizer(&args.optimizer, args.momentum)?,
        lr: args.lr,
        steps: args.steps,
    };

    // held-out evaluation plan, disjoint seed stream from the fit plans
    let eval_plan = harness::make_masking(
        &batch,
        args.mask_fraction.max(0.05),
        args.order + 1,
        args.seed ^ 0x5eed_0f0f_dead_beef,
    )?;
    let baseline = model.emit_lambda_batch(&batch, args.order)?;
    let (mse0, maxe0) = eval_masked_metrics(&batch, args.order, &baseline, &eval_plan)?;

    let trace = regfit::fit(&mut model, &batch, &spec, &opt)?;
    regfit::save_checkpoint(&model, &args.checkpoint_out)?;

    let fitted = model.emit_lambda_batch(&batch, args.order)?;
    let (mse1, maxe1) = eval_masked_metrics(&batch, args.order, &fitted, &eval_plan)?;

    let mut report = EvalReport::default();
    report.push(EvalRow {
        model_kind: "initial".into(),
        order: args.order,
        mse: mse0,
        maxe: maxe0,
        seed: args.seed,
    });
    report.push(EvalRow {
        model_kind: args.kind.to_string(),
        order: args.order,
        mse: mse1,
        maxe: maxe1,
        seed: args.seed,
    });

    if let Some(path) = &args.trace_out {
        std::fs::write(path, trace_to_csv(&trace.losses))
            .map_err(|e| CmdError::Data(format!("cannot write {}: {e}", path.display())))?;
    }
    if let Some(path) = &args.report_out {
        std::fs::write(path, report.to_csv())
            .map_err(|e| CmdError::Data(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(FitOutcome {
        losses: trace.losses,
        report,
    })
}

#[derive(Debug, Clone)]
pub struct BenchArgs {
    pub t: usize,
    pub channels: usize,
    pub orders: Vec<usize>,
    pub batch_sizes: Vec<usize>,
    pub repeats: usize,
    pub memory_cap_mb: usize,
    pub seed: u64,
    pub csv_out: Option<PathBuf>,
    pub memory_ladder: bool,
}

impl Default for BenchArgs {
    fn default() -> Self {
        BenchArgs {
            t: 350,
            channels: 10,
            orders: vec![2, 3, 4],
            batch_sizes: vec![16, 64, 256, 1024],
            repeats: 5,
            memory_cap_mb: 512,
            seed: 42,
            csv_out: None,
            memory_ladder: true,
        }
    }
}

pub fn cmd_bench(args: &BenchArgs) -> CmdResult<BenchReport> {
    let cap = args.memory_cap_mb * 1024 * 1024;
    let mut report = BenchReport {
        rows: Vec::new(),
        threads: rayon::current_num_threads(),
    };
    for &order in &args.orders {
        for &batch in &args.batch_sizes {
            let spec = CellSpec {
                t: args.t,
                channels: args.channels,
                order,
                batch,
                repeats: args.repeats,
                seed: args.seed,
                memory_cap_bytes: cap,
            };
            report.rows.push(bench::run_cell(Solver::Banded, &spec)?);
            report.rows.push(bench::run_cell(Solver::Dense, &spec)?);
        }
    }
    if args.memory_ladder {
        // single-series ladders exposing the memory growth laws; the dense
        // ladder stops earlier because its cost grows cubically
        for &t in &[512usize, 2048, 8192] {
            let spec = CellSpec {
                t,
                channels: args.channels,
                order: 2,
                batch: 1,
                repeats: 1,
                seed: args.seed,
                memory_cap_bytes: cap,
            };
            report.rows.push(bench::run_cell(Solver::Banded, &spec)?);
        }
        for &t in &[512usize, 1024, 2048] {
            let spec = CellSpec {
                t,
                channels: args.channels,
                order: 2,
                batch: 1,
                repeats: 1,
                seed: args.seed,
                memory_cap_bytes: cap,
            };
            report.rows.push(bench::run_cell(Solver::Dense, &spec)?);
        }
    }
    if let Some(path) = &args.csv_out {
        std::fs::write(path, report.to_csv())
            .map_err(|e| CmdError::Data(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct SynthArgs {
    pub seed: u64,
    pub t: usize,
    pub sigma_low: f64,
    pub sigma_high: f64,
    pub window: (f64, f64),
    pub order: usize,
    pub steps: usize,
    pub lr: f64,
    pub mask_fraction: f64,
    pub out_prefix: PathBuf,
}

impl Default for SynthArgs {
    fn default() -> Self {
        SynthArgs {
            seed: 1,
            t: 80,
            sigma_low: 0.05,
            sigma_high: 0.5,
            window: (6.0, 10.0),
            order: 2,
            steps: 200,
            lr: 0.25,
            mask_fraction: 0.2,
            out_prefix: PathBuf::from("synth"),
        }
    }
}

/// Generate one heteroscedastic series, fit a scalar and a vector
/// regularizer on it, and emit plottable CSVs: `<prefix>_values.csv` with
/// the data and both reconstructions, `<prefix>_reg.csv` with both weight
/// profiles over time.
pub fn cmd_synth(args: &SynthArgs) -> CmdResult<()> {
    let (batch, truth) = harness::synth_hetero_batch(
        args.seed,
        1,
        args.t,
        args.window,
        args.sigma_low,
        args.sigma_high,
    )?;
    let (std_batch, standardizer) = harness::standardize(&batch)?;

    let spec = FitSpec {
        order: args.order,
        mask_fraction: args.mask_fraction,
        seed: args.seed,
        resample_masks: true,
    };
    let opt = OptimizerSpec {
        variant: OptVariant::adam(),
        lr: args.lr,
        steps: args.steps,
    };

    let mut homo = RegularizerModel::scalar(1, 1.0, false);
    regfit::fit(&mut homo, &std_batch, &spec, &opt)?;
    let mut hetero = RegularizerModel::vector(1, args.t - args.order, 1.0);
    regfit::fit(&mut hetero, &std_batch, &spec, &opt)?;

    let lam_homo = homo.emit_lambda_batch(&std_batch, args.order)?;
    let lam_hetero = hetero.emit_lambda_batch(&std_batch, args.order)?;
    let z_homo = {
        let ctx = smoother::smooth_hetero(&std_batch, args.order, &lam_homo)?;
        let mut z = ctx.z.index_axis(Axis(0), 0).to_owned();
        standardizer.invert_values(&mut z);
        z
    };
    let z_hetero = {
        let ctx = smoother::smooth_hetero(&std_batch, args.order, &lam_hetero)?;
        let mut z = ctx.z.index_axis(Axis(0), 0).to_owned();
        standardizer.invert_values(&mut z);
        z
    };

    let values_path = args.out_prefix.with_extension("").with_file_name(format!(
        "{}_values.csv",
        args.out_prefix.file_name().unwrap_or_default().to_string_lossy()
    ));
    let reg_path = args.out_prefix.with_extension("").with_file_name(format!(
        "{}_reg.csv",
        args.out_prefix.file_name().unwrap_or_default().to_string_lossy()
    ));

    let mut values_csv = String::from("time_days,truth,noisy,z_homo,z_hetero\n");
    for i in 0..args.t {
        values_csv.push_str(&format!(
            "{},{},{},{},{}\n",
            std_batch.times[(0, i)],
            truth[(0, 0, i)],
            batch.values[(0, 0, i)],
            z_homo[(0, i)],
            z_hetero[(0, i)]
        ));
    }
    std::fs::write(&values_path, values_csv)
        .map_err(|e| CmdError::Data(format!("cannot write {}: {e}", values_path.display())))?;

    // weights indexed by the leftmost time of each stencil
    let mut reg_csv = String::from("time_days,lambda_homo,lambda_hetero\n");
    for r in 0..(args.t - args.order) {
        reg_csv.push_str(&format!(
            "{},{},{}\n",
            std_batch.times[(0, r)],
            lam_homo[(0, r)],
            lam_hetero[(0, r)]
        ));
    }
    std::fs::write(&reg_path, reg_csv)
        .map_err(|e| CmdError::Data(format!("cannot write {}: {e}", reg_path.display())))?;
    Ok(())
}
