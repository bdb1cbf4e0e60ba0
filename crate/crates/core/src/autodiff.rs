//! Reverse-mode gradients through the smoothing solve.
//!
//! With z = Ω⁻¹ W x and Ω = W + Dᵀ Λ D, the derivative of z in one penalty
//! weight is -Ω⁻¹ d_r d_rᵀ z and the Jacobian in x is Ω⁻¹ W. Materializing
//! those per weight would mean T extra solves per series; contracting them
//! against the upstream gradient first collapses the whole backward pass to
//! a single banded solve u = Ω⁻¹ ḡ per channel, reusing the forward factor:
//!
//!   x̄ = W ⊙ u          λ̄_r = -Σ_channels (D u)_r (D z)_r
//!
//! so forward plus backward costs one factorization and two solves per
//! series channel, all O(T (k+1)).

use ndarray::{Array2, Array3, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::smoother::{self, SmootherContext, TimeSeriesBatch};

/// Gradients of a scalar loss with respect to the smoother inputs.
#[derive(Debug, Clone)]
pub struct Cotangents {
    /// B x C x T gradient with respect to the observed values.
    pub x_bar: Array3<f64>,
    /// B x (T - order) gradient with respect to the penalty weights,
    /// summed over channels.
    pub lam_bar: Array2<f64>,
}

/// Vector-Jacobian product of the forward solve against `g_bar` = ∂L/∂z.
///
/// Never refactorizes: each series reuses the Cholesky factor held by the
/// context, one extra banded solve per channel.
pub fn vjp(ctx: &SmootherContext, g_bar: &Array3<f64>) -> Result<Cotangents> {
    let batch = ctx.batch();
    let (b, c, t) = batch.values.dim();
    if g_bar.dim() != (b, c, t) {
        return Err(Error::structure(format!(
            "cotangent shape {:?} does not match solution shape {:?}",
            g_bar.dim(),
            (b, c, t)
        )));
    }
    let m = ctx.order;

    let per_series: Vec<(Array2<f64>, Vec<f64>)> = (0..b)
        .into_par_iter()
        .map(|s| -> Result<(Array2<f64>, Vec<f64>)> {
            let factor = ctx.factor(s);
            let op = ctx.op(s);
            let mask = batch.mask.row(s);
            let dz = ctx.dz().index_axis(Axis(0), s);
            let mut x_bar = Array2::<f64>::zeros((c, t));
            let mut lam_bar = vec![0.0; t - m];
            for ch in 0..c {
                let g = g_bar.index_axis(Axis(0), s);
                let g = g.row(ch);
                let u = factor.solve_factored(g.as_slice().expect("contiguous"))?;
                for i in 0..t {
                    x_bar[(ch, i)] = mask[i] * u[i];
                }
                let du = op.apply(&u)?;
                let dz_row = dz.row(ch);
                for r in 0..(t - m) {
                    lam_bar[r] -= du[r] * dz_row[r];
                }
            }
            Ok((x_bar, lam_bar))
        })
        .collect::<Result<_>>()?;

    let mut x_bar = Array3::<f64>::zeros((b, c, t));
    let mut lam_bar = Array2::<f64>::zeros((b, t - m));
    for (s, (xs, ls)) in per_series.into_iter().enumerate() {
        x_bar.index_axis_mut(Axis(0), s).assign(&xs);
        for (r, v) in ls.into_iter().enumerate() {
            lam_bar[(s, r)] = v;
        }
    }
    Ok(Cotangents { x_bar, lam_bar })
}

/// Scalar loss of the smoothed output, with its exact gradient. The gradient
/// feeds [`vjp`]; the value feeds the finite-difference cross-check.
pub trait ScalarLoss: Sync {
    fn eval(&self, z: &Array3<f64>) -> f64;
    fn grad(&self, z: &Array3<f64>) -> Array3<f64>;
}

/// Outcome of a finite-difference check of the analytic gradients.
#[derive(Debug, Clone)]
pub struct FiniteDiffReport {
    /// One (step, max deviation over x entries, max deviation over λ
    /// entries) triple per requested step.
    pub per_step: Vec<(f64, f64, f64)>,
    /// Deviations at the first (primary) step.
    pub max_rel_dev_x: f64,
    pub max_rel_dev_lam: f64,
    pub passed: bool,
    /// Raised when shrinking the step fails to shrink the deviation,
    /// the signature of cancellation noise.
    pub warnings: Vec<String>,
}

/// Relative deviation between a finite difference and the analytic value.
///
/// A central difference of a loss of magnitude L at step h carries rounding
/// noise of order eps·L/(2h); entries whose magnitude sits within four
/// decades of that noise cannot be resolved to fine relative accuracy by
/// any quotient oracle and are skipped (the duality identity still pins
/// them exactly).
fn rel_dev(fd: f64, an: f64, loss_scale: f64, h: f64) -> f64 {
    let noise_gate = 1e4 * f64::EPSILON * loss_scale / (2.0 * h);
    let denom = fd.abs().max(an.abs());
    if denom <= noise_gate.max(1e-12) {
        0.0
    } else {
        (fd - an).abs() / denom
    }
}

/// Central-difference verification of [`vjp`] on a concrete instance.
///
/// Every λ entry and every x entry is perturbed with a relative step; the
/// first step in `steps` decides `passed` against `tolerance`, later steps
/// feed the non-monotonicity detector.
pub fn finite_diff_check(
    batch: &TimeSeriesBatch,
    order: usize,
    lam: &Array2<f64>,
    loss: &dyn ScalarLoss,
    steps: &[f64],
    tolerance: f64,
) -> Result<FiniteDiffReport> {
    if steps.is_empty() {
        return Err(Error::domain("finite_diff_check needs at least one step"));
    }
    let ctx = smoother::smooth_hetero(batch, order, lam)?;
    // differentiate the clamped weights the forward pass actually used
    let lam = ctx.lam().clone();
    let g = loss.grad(&ctx.z);
    let cot = vjp(&ctx, &g)?;
    let (b, c, t) = batch.values.dim();

    let mut per_step = Vec::with_capacity(steps.len());
    for &step in steps {
        let mut dev_lam = 0.0f64;
        for s in 0..b {
            for r in 0..(t - order) {
                // pure relative step: the weights span many decades and are
                // clamped to at least LAMBDA_MIN, never zero
                let h = step * lam[(s, r)].abs();
                let mut lp = lam.clone();
                lp[(s, r)] += h;
                let mut lm = lam.clone();
                lm[(s, r)] -= h;
                let zp = smoother::smooth_hetero(batch, order, &lp)?.z;
                let zm = smoother::smooth_hetero(batch, order, &lm)?.z;
                let (vp, vm) = (loss.eval(&zp), loss.eval(&zm));
                let fd = (vp - vm) / (2.0 * h);
                let scale = vp.abs().max(vm.abs());
                dev_lam = dev_lam.max(rel_dev(fd, cot.lam_bar[(s, r)], scale, h));
            }
        }
        let mut dev_x = 0.0f64;
        for s in 0..b {
            for ch in 0..c {
                for i in 0..t {
                    let h = step * batch.values[(s, ch, i)].abs().max(1.0);
                    let mut bp = batch.clone();
                    bp.values[(s, ch, i)] += h;
                    let mut bm = batch.clone();
                    bm.values[(s, ch, i)] -= h;
                    let zp = smoother::smooth_hetero(&bp, order, &lam)?.z;
                    let zm = smoother::smooth_hetero(&bm, order, &lam)?.z;
                    let (vp, vm) = (loss.eval(&zp), loss.eval(&zm));
                    let fd = (vp - vm) / (2.0 * h);
                    let scale = vp.abs().max(vm.abs());
                    dev_x = dev_x.max(rel_dev(fd, cot.x_bar[(s, ch, i)], scale, h));
                }
            }
        }
        per_step.push((step, dev_x, dev_lam));
    }

    let mut warnings = Vec::new();
    for w in per_step.windows(2) {
        let (h0, x0, l0) = w[0];
        let (h1, x1, l1) = w[1];
        if x1 > x0 || l1 > l0 {
            warnings.push(format!(
                "deviation grew when step shrank from {h0:e} to {h1:e} \
                 (x: {x0:.3e} -> {x1:.3e}, lam: {l0:.3e} -> {l1:.3e}); \
                 step likely too small for f64 cancellation"
            ));
        }
    }

    let (_, max_rel_dev_x, max_rel_dev_lam) = per_step[0];
    Ok(FiniteDiffReport {
        per_step,
        max_rel_dev_x,
        max_rel_dev_lam,
        passed: max_rel_dev_x <= tolerance && max_rel_dev_lam <= tolerance,
        warnings,
    })
}
