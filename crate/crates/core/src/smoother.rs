//! Assembly and solution of the penalized smoothing systems.
//!
//! For a series x observed at times t with 0/1 observation weights W and
//! per-stencil penalty weights Λ, the smoothed series solves
//! (W + Dᵀ Λ D) z = W x with D the order-m difference operator. The system
//! matrix Ω is symmetric positive definite with bandwidth m, so each series
//! costs one banded Cholesky factorization plus one banded solve per
//! channel. The factorization and D z are retained for the backward pass.

use std::sync::Arc;

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};
use rayon::prelude::*;

use crate::bandmat::BandMatrix;
use crate::diffop::DifferenceOperator;
use crate::error::{Error, Result};

/// Smoothing weights below this are clamped up at the smoother boundary.
pub const LAMBDA_MIN: f64 = 1e-6;
/// Smoothing weights above this are clamped down at the smoother boundary.
pub const LAMBDA_MAX: f64 = 1e10;

/// Batch of series padded to a common length. Padded tail slots carry
/// mask 0 and synthetic strictly increasing times.
#[derive(Debug, Clone)]
pub struct TimeSeriesBatch {
    /// B x T acquisition times in days, strictly increasing per series.
    pub times: Array2<f64>,
    /// B x C x T values; entries at mask-0 slots are never read.
    pub values: Array3<f64>,
    /// B x T observation mask, entries in {0, 1}.
    pub mask: Array2<f64>,
}

impl TimeSeriesBatch {
    pub fn new(times: Array2<f64>, values: Array3<f64>, mask: Array2<f64>) -> Result<Self> {
        let (b, t) = times.dim();
        if values.dim().0 != b || values.dim().2 != t {
            return Err(Error::structure(format!(
                "values shape {:?} does not match times {:?}",
                values.dim(),
                times.dim()
            )));
        }
        if mask.dim() != (b, t) {
            return Err(Error::structure(format!(
                "mask shape {:?} does not match times {:?}",
                mask.dim(),
                times.dim()
            )));
        }
        for s in 0..b {
            let row = times.row(s);
            for w in row.as_slice().expect("contiguous").windows(2) {
                if !(w[1] > w[0]) {
                    return Err(Error::data(format!(
                        "series {s}: times must be strictly increasing ({} then {})",
                        w[0], w[1]
                    )));
                }
            }
        }
        if let Some(v) = mask.iter().find(|v| **v != 0.0 && **v != 1.0) {
            return Err(Error::domain(format!("mask entries must be 0 or 1, got {v}")));
        }
        Ok(TimeSeriesBatch { times, values, mask })
    }

    /// Single-series batch from plain vectors.
    pub fn single(times: Vec<f64>, values: Array2<f64>, mask: Vec<f64>) -> Result<Self> {
        let t = times.len();
        let c = values.nrows();
        let times = Array2::from_shape_vec((1, t), times).expect("shape");
        let values3 = values
            .into_shape_with_order((1, c, t))
            .map_err(|e| Error::structure(e.to_string()))?;
        let mask = Array2::from_shape_vec((1, t), mask).expect("shape");
        TimeSeriesBatch::new(times, values3, mask)
    }

    pub fn n_series(&self) -> usize {
        self.times.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.values.dim().1
    }

    pub fn len(&self) -> usize {
        self.times.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn observed_count(&self, series: usize) -> usize {
        self.mask.row(series).iter().filter(|v| **v == 1.0).count()
    }
}

/// Everything the backward pass needs from a forward solve: the per-series
/// Cholesky factors, the solution z, the cached D z, and the inputs the
/// system was assembled from.
#[derive(Debug)]
pub struct SmootherContext {
    pub order: usize,
    batch: TimeSeriesBatch,
    ops: Vec<Arc<DifferenceOperator>>,
    factors: Vec<BandMatrix>,
    /// Penalty weights actually used (after clamping), B x (T - order).
    lam: Array2<f64>,
    /// B x C x T solution.
    pub z: Array3<f64>,
    /// B x C x (T - order) cached difference of the solution.
    dz: Array3<f64>,
    /// Number of Λ entries clamped into [LAMBDA_MIN, LAMBDA_MAX].
    pub clamp_count: usize,
}

impl SmootherContext {
    pub fn batch(&self) -> &TimeSeriesBatch {
        &self.batch
    }

    pub fn op(&self, series: usize) -> &DifferenceOperator {
        &self.ops[series]
    }

    pub fn factor(&self, series: usize) -> &BandMatrix {
        &self.factors[series]
    }

    pub fn lam(&self) -> &Array2<f64> {
        &self.lam
    }

    pub fn dz(&self) -> &Array3<f64> {
        &self.dz
    }

    pub fn mask(&self) -> &Array2<f64> {
        &self.batch.mask
    }

    /// Values of the smoothed series at arbitrary query times for one series.
    ///
    /// The series' grid is augmented with the query times as mask-0 slots and
    /// the system is re-solved on the merged grid; the smoother itself does
    /// the interpolation, no post-hoc polynomial evaluation is involved.
    /// Penalty weights transfer to the merged grid by nearest stencil start.
    pub fn interpolate(&self, series: usize, query: &[f64]) -> Result<Array2<f64>> {
        for w in query.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::data(format!(
                    "query times must be strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        let t = self.batch.len();
        let c = self.batch.n_channels();
        let times = self.batch.times.row(series);
        let times = times.as_slice().expect("contiguous");

        // Merge grids; query points that hit an existing slot collapse.
        let mut merged = Vec::with_capacity(t + query.len());
        let mut query_pos = Vec::with_capacity(query.len());
        let mut orig_pos = Vec::with_capacity(t);
        let (mut i, mut j) = (0, 0);
        while i < t || j < query.len() {
            if j >= query.len() || (i < t && times[i] < query[j]) {
                orig_pos.push(merged.len());
                merged.push(times[i]);
                i += 1;
            } else if i >= t || query[j] < times[i] {
                query_pos.push(merged.len());
                merged.push(query[j]);
                j += 1;
            } else {
                orig_pos.push(merged.len());
                query_pos.push(merged.len());
                merged.push(times[i]);
                i += 1;
                j += 1;
            }
        }

        let tm = merged.len();
        let mut values = Array2::<f64>::zeros((c, tm));
        let mut mask = vec![0.0; tm];
        for (src, &dst) in orig_pos.iter().enumerate() {
            mask[dst] = self.batch.mask[(series, src)];
            for ch in 0..c {
                values[(ch, dst)] = self.batch.values[(series, ch, src)];
            }
        }

        let op = DifferenceOperator::build(&merged, self.order)?;
        // Nearest original stencil start supplies the penalty weight.
        let starts = &times[..t - self.order];
        let lam_row = self.lam.row(series);
        let lam: Vec<f64> = (0..tm - self.order)
            .map(|r| lam_row[nearest_index(starts, merged[r])])
            .collect();

        let (_, z) = solve_single(&op, &mask, &lam, values.view())?;
        let mut out = Array2::<f64>::zeros((c, query.len()));
        for (qi, &pos) in query_pos.iter().enumerate() {
            for ch in 0..c {
                out[(ch, qi)] = z[(ch, pos)];
            }
        }
        Ok(out)
    }
}

fn nearest_index(sorted: &[f64], x: f64) -> usize {
    match sorted.binary_search_by(|v| v.partial_cmp(&x).expect("finite times")) {
        Ok(i) => i,
        Err(0) => 0,
        Err(i) if i == sorted.len() => sorted.len() - 1,
        Err(i) => {
            if x - sorted[i - 1] <= sorted[i] - x {
                i - 1
            } else {
                i
            }
        }
    }
}

/// Assemble Ω = W + Dᵀ Λ D in band storage (bandwidth = order of D).
pub fn build_omega(mask: &[f64], op: &DifferenceOperator, lam: &[f64]) -> Result<BandMatrix> {
    if mask.len() != op.input_len() {
        return Err(Error::structure(format!(
            "mask length {} does not match grid length {}",
            mask.len(),
            op.input_len()
        )));
    }
    let mut omega = op.gram_banded(lam)?;
    for (t, &w) in mask.iter().enumerate() {
        *omega.band_entry_mut(0, t) += w;
    }
    Ok(omega)
}

/// Factor and solve one series for all channels against a single factor.
/// Returns the factored system and the C x T solution.
pub fn solve_single(
    op: &DifferenceOperator,
    mask: &[f64],
    lam: &[f64],
    values: ArrayView2<'_, f64>,
) -> Result<(BandMatrix, Array2<f64>)> {
    let t = op.input_len();
    let c = values.nrows();
    if values.ncols() != t {
        return Err(Error::structure(format!(
            "values have {} columns, expected {t}",
            values.ncols()
        )));
    }
    let mut omega = build_omega(mask, op, lam)?;
    omega.cholesky_inplace()?;
    let mut z = Array2::<f64>::zeros((c, t));
    for ch in 0..c {
        let mut rhs: Vec<f64> = (0..t)
            .map(|i| if mask[i] == 0.0 { 0.0 } else { mask[i] * values[(ch, i)] })
            .collect();
        omega.solve_factored_into(&mut rhs)?;
        z.row_mut(ch).assign(&Array1::from(rhs));
    }
    Ok((omega, z))
}

fn clamp_lambda(lam: &Array2<f64>) -> (Array2<f64>, usize) {
    let mut count = 0;
    let clamped = lam.mapv(|v| {
        if (LAMBDA_MIN..=LAMBDA_MAX).contains(&v) {
            v
        } else {
            count += 1;
            v.clamp(LAMBDA_MIN, LAMBDA_MAX)
        }
    });
    (clamped, count)
}

/// Solve the heteroscedastic smoothing system for every series in the batch.
///
/// `lam` is B x (T - order), one weight per difference stencil. Weights are
/// clamped into [LAMBDA_MIN, LAMBDA_MAX]; the clamp count is surfaced on the
/// context. Channels of one series share a single factorization.
pub fn smooth_hetero(
    batch: &TimeSeriesBatch,
    order: usize,
    lam: &Array2<f64>,
) -> Result<SmootherContext> {
    let b = batch.n_series();
    let c = batch.n_channels();
    let t = batch.len();
    if t < order + 1 {
        return Err(Error::domain(format!(
            "series length {t} too short for order {order}"
        )));
    }
    if lam.dim() != (b, t - order) {
        return Err(Error::structure(format!(
            "lam shape {:?}, expected ({b}, {})",
            lam.dim(),
            t - order
        )));
    }
    let (lam, clamp_count) = clamp_lambda(lam);

    // A nonzero polynomial in the penalty null space (degree < order) has at
    // most order-1 roots, so `order` observed points pin the solution down.
    for s in 0..b {
        let obs = batch.observed_count(s);
        if obs < order {
            return Err(Error::domain(format!(
                "series {s} has {obs} observed points, need at least {order} for order {order}"
            )));
        }
    }

    // One operator per series, shared when the whole batch sits on one grid.
    let first = batch.times.row(0);
    let shared = (1..b).all(|s| batch.times.row(s) == first);
    let ops: Vec<Arc<DifferenceOperator>> = if shared {
        let op = Arc::new(DifferenceOperator::build(
            first.as_slice().expect("contiguous"),
            order,
        )?);
        vec![op; b]
    } else {
        (0..b)
            .map(|s| {
                DifferenceOperator::build(
                    batch.times.row(s).as_slice().expect("contiguous"),
                    order,
                )
                .map(Arc::new)
            })
            .collect::<Result<_>>()?
    };

    let per_series: Vec<(BandMatrix, Array2<f64>)> = (0..b)
        .into_par_iter()
        .map(|s| {
            let mask = batch.mask.row(s);
            let lam_row = lam.row(s);
            solve_single(
                &ops[s],
                mask.as_slice().expect("contiguous"),
                lam_row.as_slice().expect("contiguous"),
                batch.values.index_axis(Axis(0), s),
            )
            .map_err(|e| e.with_series(s))
        })
        .collect::<Result<_>>()?;

    let mut z = Array3::<f64>::zeros((b, c, t));
    let mut dz = Array3::<f64>::zeros((b, c, t - order));
    let mut factors = Vec::with_capacity(b);
    for (s, (factor, zs)) in per_series.into_iter().enumerate() {
        for ch in 0..c {
            let zrow = zs.row(ch);
            let d = ops[s].apply(zrow.as_slice().expect("contiguous"))?;
            dz.index_axis_mut(Axis(0), s)
                .row_mut(ch)
                .assign(&Array1::from(d));
        }
        z.index_axis_mut(Axis(0), s).assign(&zs);
        factors.push(factor);
    }

    #[cfg(debug_assertions)]
    verify_normal_equations(batch, &lam, &ops, &z)?;

    Ok(SmootherContext {
        order,
        batch: batch.clone(),
        ops,
        factors,
        lam,
        z,
        dz,
        clamp_count,
    })
}

/// Homoscedastic path: one scalar weight per series, expanded to a constant
/// vector and delegated to [`smooth_hetero`] so the two agree bit for bit.
pub fn smooth_homo(
    batch: &TimeSeriesBatch,
    order: usize,
    lam_scalar: &[f64],
) -> Result<SmootherContext> {
    let b = batch.n_series();
    let t = batch.len();
    if lam_scalar.len() != b {
        return Err(Error::structure(format!(
            "expected {b} scalar weights, got {}",
            lam_scalar.len()
        )));
    }
    if t < order + 1 {
        return Err(Error::domain(format!(
            "series length {t} too short for order {order}"
        )));
    }
    let lam = Array2::from_shape_fn((b, t - order), |(s, _)| lam_scalar[s]);
    smooth_hetero(batch, order, &lam)
}

/// Value of the smoothing objective Σ w (x - z)² + Σ λ (D z)² for one
/// series channel.
pub fn objective(
    op: &DifferenceOperator,
    x: &[f64],
    z: &[f64],
    mask: &[f64],
    lam: &[f64],
) -> Result<f64> {
    let misfit: f64 = mask
        .iter()
        .zip(x.iter().zip(z))
        .map(|(w, (xv, zv))| if *w == 0.0 { 0.0 } else { w * (xv - zv) * (xv - zv) })
        .sum();
    let d = op.apply(z)?;
    let penalty: f64 = d.iter().zip(lam).map(|(dv, l)| l * dv * dv).sum();
    Ok(misfit + penalty)
}

#[cfg(debug_assertions)]
fn verify_normal_equations(
    batch: &TimeSeriesBatch,
    lam: &Array2<f64>,
    ops: &[Arc<DifferenceOperator>],
    z: &Array3<f64>,
) -> Result<()> {
    for s in 0..batch.n_series() {
        let mask = batch.mask.row(s);
        let mask = mask.as_slice().expect("contiguous");
        let lam_row = lam.row(s);
        let omega = build_omega(mask, &ops[s], lam_row.as_slice().expect("contiguous"))?;
        // max row sum of Ω, from the bands
        let n = batch.len();
        let mut row_sums = vec![0.0f64; n];
        for j in 0..=omega.bandwidth() {
            for t in 0..(n - j) {
                let a = omega.band_entry(j, t).abs();
                row_sums[t + j] += a;
                if j > 0 {
                    row_sums[t] += a;
                }
            }
        }
        let omega_norm = row_sums.iter().fold(0.0f64, |m, v| m.max(*v));
        for ch in 0..batch.n_channels() {
            let zslab = z.index_axis(Axis(0), s);
            let zrow = zslab.row(ch);
            let oz = omega.matvec(zrow.as_slice().expect("contiguous"))?;
            let xslab = batch.values.index_axis(Axis(0), s);
            let xrow = xslab.row(ch);
            let xscale = xrow.iter().fold(1e-30f64, |m, v| m.max(v.abs()));
            let zscale = zrow.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            // residual of a backward-stable solve scales with ‖Ω‖·‖z‖
            let tol = (1e-9 * xscale.max(1.0)).max(1e4 * f64::EPSILON * omega_norm * zscale);
            for (t, lhs) in oz.iter().enumerate() {
                let rhs = if mask[t] == 0.0 { 0.0 } else { mask[t] * xrow[t] };
                // non-finite data is caught later by the loss/gradient path
                debug_assert!(
                    !(lhs.is_finite() && rhs.is_finite()) || (lhs - rhs).abs() <= tol,
                    "normal equations violated at series {s} channel {ch} slot {t}"
                );
            }
        }
    }
    Ok(())
}
