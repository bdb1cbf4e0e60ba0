//! Banded-vs-dense solver benchmark.
//!
//! Both solvers are handed the same assembled systems and their outputs are
//! cross-checked before any timing is accepted. The dense baseline expands
//! the band-assembled system to full storage and runs an unblocked dense
//! Cholesky, the desk equivalent of a general dense solve of the same
//! equations. Dense cells whose matrices would not fit the memory cap are
//! recorded as out-of-memory instead of run.

use std::time::Instant;

use ndarray::{Array2, Array3, Axis};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use whitband::{dense, smoother, DifferenceOperator, Error, Result, TimeSeriesBatch};

use crate::alloc_track;

/// Agreement required between the two solvers on every instance.
pub const CROSS_CHECK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    Banded,
    Dense,
}

impl Solver {
    pub fn name(self) -> &'static str {
        match self {
            Solver::Banded => "banded",
            Solver::Dense => "dense",
        }
    }
}

/// One benchmark cell: a (solver, order, T, batch size) combination.
#[derive(Debug, Clone, Copy)]
pub struct CellSpec {
    pub t: usize,
    pub channels: usize,
    pub order: usize,
    pub batch: usize,
    pub repeats: usize,
    pub seed: u64,
    pub memory_cap_bytes: usize,
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub solver: &'static str,
    pub order: usize,
    pub t: usize,
    pub batch_size: usize,
    pub wall_time_s: Option<f64>,
    pub peak_bytes: Option<usize>,
    pub status: &'static str,
}

#[derive(Debug, Clone, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub threads: usize,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("solver,order,t,batch_size,wall_time_s,peak_bytes,status\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.solver,
                r.order,
                r.t,
                r.batch_size,
                r.wall_time_s.map_or(String::new(), |v| format!("{v}")),
                r.peak_bytes.map_or(String::new(), |v| format!("{v}")),
                r.status
            ));
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<8} {:>5} {:>6} {:>10} {:>14} {:>14} {:>14}\n",
            "solver", "order", "T", "batch", "time_s", "peak_bytes", "status"
        );
        out.push_str(&format!("threads: {}\n", self.threads));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<8} {:>5} {:>6} {:>10} {:>14} {:>14} {:>14}\n",
                r.solver,
                r.order,
                r.t,
                r.batch_size,
                r.wall_time_s.map_or("-".into(), |v| format!("{v:.6}")),
                r.peak_bytes.map_or("-".into(), |v| format!("{v}")),
                r.status
            ));
        }
        out
    }
}

/// Deterministic batch of smooth-ish multivariate series on a shared daily
/// grid, with random gaps and log-uniform penalty weights.
pub fn make_instances(
    t: usize,
    channels: usize,
    batch: usize,
    order: usize,
    seed: u64,
) -> (DifferenceOperator, TimeSeriesBatch, Array2<f64>) {
    let mut rng = StdRng::seed_from_u64(seed);
    let times_row: Vec<f64> = (0..t).map(|i| i as f64 * 5.0).collect();
    let op = DifferenceOperator::build(&times_row, order).expect("valid bench grid");
    let mut times = Array2::<f64>::zeros((batch, t));
    let mut mask = Array2::<f64>::zeros((batch, t));
    let mut values = Array3::<f64>::zeros((batch, channels, t));
    for s in 0..batch {
        for i in 0..t {
            times[(s, i)] = times_row[i];
            mask[(s, i)] = if rng.random::<f64>() < 0.85 { 1.0 } else { 0.0 };
        }
        let mut obs = (0..t).filter(|i| mask[(s, *i)] == 1.0).count();
        let mut i = 0;
        while obs < order + 1 {
            if mask[(s, i)] == 0.0 {
                mask[(s, i)] = 1.0;
                obs += 1;
            }
            i += 1;
        }
        for ch in 0..channels {
            let mut v = rng.random::<f64>() - 0.5;
            for i in 0..t {
                v += 0.1 * (rng.random::<f64>() - 0.5);
                values[(s, ch, i)] = v;
            }
        }
    }
    let lam = Array2::from_shape_fn((batch, t - order), |_| {
        10f64.powf(rng.random::<f64>() * 4.0 - 1.0)
    });
    let batch = TimeSeriesBatch::new(times, values, mask).expect("valid bench batch");
    (op, batch, lam)
}

/// Banded path: band assembly, banded factorization, banded substitution.
pub fn banded_pass(
    op: &DifferenceOperator,
    batch: &TimeSeriesBatch,
    lam: &Array2<f64>,
) -> Result<Array3<f64>> {
    let (b, c, t) = batch.values.dim();
    let per_series: Vec<Array2<f64>> = (0..b)
        .into_par_iter()
        .map(|s| {
            let mask = batch.mask.row(s);
            let lam_row = lam.row(s);
            smoother::solve_single(
                op,
                mask.as_slice().expect("contiguous"),
                lam_row.as_slice().expect("contiguous"),
                batch.values.index_axis(Axis(0), s),
            )
            .map(|(_, z)| z)
            .map_err(|e| e.with_series(s))
        })
        .collect::<Result<_>>()?;
    let mut z = Array3::<f64>::zeros((b, c, t));
    for (s, zs) in per_series.into_iter().enumerate() {
        z.index_axis_mut(Axis(0), s).assign(&zs);
    }
    Ok(z)
}

/// Dense path: the same assembled system expanded to full storage, then a
/// dense Cholesky factorization and dense substitutions.
pub fn dense_pass(
    op: &DifferenceOperator,
    batch: &TimeSeriesBatch,
    lam: &Array2<f64>,
) -> Result<Array3<f64>> {
    let (b, c, t) = batch.values.dim();
    let per_series: Vec<Array2<f64>> = (0..b)
        .into_par_iter()
        .map(|s| -> Result<Array2<f64>> {
            let mask = batch.mask.row(s);
            let mask = mask.as_slice().expect("contiguous");
            let lam_row = lam.row(s);
            let omega = smoother::build_omega(mask, op, lam_row.as_slice().expect("contiguous"))?;
            let full = omega.to_dense();
            let l = dense::cholesky(full.view()).map_err(|column| {
                Error::NotPositiveDefinite {
                    column,
                    series: Some(s),
                }
            })?;
            let mut z = Array2::<f64>::zeros((c, t));
            for ch in 0..c {
                let rhs: Vec<f64> = (0..t)
                    .map(|i| {
                        if mask[i] == 0.0 {
                            0.0
                        } else {
                            mask[i] * batch.values[(s, ch, i)]
                        }
                    })
                    .collect();
                let x = dense::solve_cholesky(&l, &rhs);
                for (i, v) in x.into_iter().enumerate() {
                    z[(ch, i)] = v;
                }
            }
            Ok(z)
        })
        .collect::<Result<_>>()?;
    let mut z = Array3::<f64>::zeros((b, c, t));
    for (s, zs) in per_series.into_iter().enumerate() {
        z.index_axis_mut(Axis(0), s).assign(&zs);
    }
    Ok(z)
}

/// Dense working set: one full T x T matrix per series in the batch.
pub fn dense_estimated_bytes(t: usize, batch: usize) -> usize {
    batch.saturating_mul(t).saturating_mul(t).saturating_mul(8)
}

fn max_abs_diff(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn time_solver(
    solver: Solver,
    op: &DifferenceOperator,
    batch: &TimeSeriesBatch,
    lam: &Array2<f64>,
    repeats: usize,
) -> Result<(f64, usize)> {
    let run = || -> Result<Array3<f64>> {
        match solver {
            Solver::Banded => banded_pass(op, batch, lam),
            Solver::Dense => dense_pass(op, batch, lam),
        }
    };
    let (first, peak) = alloc_track::measure_peak(run);
    first?;
    let start = Instant::now();
    for _ in 0..repeats {
        std::hint::black_box(run()?);
    }
    let avg = start.elapsed().as_secs_f64() / repeats.max(1) as f64;
    Ok((avg, peak))
}

/// Run one solver on one cell. Dense cells over the memory cap become
/// out-of-memory rows without timing; when the dense side does run, it is
/// cross-checked against the banded result first.
pub fn run_cell(solver: Solver, spec: &CellSpec) -> Result<BenchRow> {
    let (op, batch, lam) = make_instances(spec.t, spec.channels, spec.batch, spec.order, spec.seed);
    if solver == Solver::Dense
        && dense_estimated_bytes(spec.t, spec.batch) > spec.memory_cap_bytes
    {
        return Ok(BenchRow {
            solver: solver.name(),
            order: spec.order,
            t: spec.t,
            batch_size: spec.batch,
            wall_time_s: None,
            peak_bytes: None,
            status: "out_of_memory",
        });
    }
    if solver == Solver::Dense {
        let zb = banded_pass(&op, &batch, &lam)?;
        let zd = dense_pass(&op, &batch, &lam)?;
        let scale = zd.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let diff = max_abs_diff(&zb, &zd);
        if diff > CROSS_CHECK_TOL * scale {
            return Err(Error::structure(format!(
                "benchmark invalidated: solvers disagree by {diff:.3e} (scale {scale:.3e}) \
                 at order {}, T {}, batch {}",
                spec.order, spec.t, spec.batch
            )));
        }
    }
    let (avg, peak) = time_solver(solver, &op, &batch, &lam, spec.repeats)?;
    Ok(BenchRow {
        solver: solver.name(),
        order: spec.order,
        t: spec.t,
        batch_size: spec.batch,
        wall_time_s: Some(avg),
        peak_bytes: Some(peak),
        status: "ok",
    })
}

/// Least-squares slope of log(y) against log(x).
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let xm = lx.iter().sum::<f64>() / lx.len() as f64;
    let ym = ly.iter().sum::<f64>() / ly.len() as f64;
    lx.iter()
        .zip(&ly)
        .map(|(x, y)| (x - xm) * (y - ym))
        .sum::<f64>()
        / lx.iter().map(|x| (x - xm) * (x - xm)).sum::<f64>()
}
