//! Fitting of smoothing weights by gradient descent on the masked
//! reconstruction loss.
//!
//! Three parameterizations emit the per-stencil weights Λ: a scalar per
//! series (or one shared across the batch), a free vector per series, and a
//! windowed feed-forward network amortized across series. All raw parameters
//! are unconstrained reals; emitted weights pass through a bounded squashing
//! map so they always land strictly inside (λ_min, λ_max).

mod network;
mod optimizer;

pub use optimizer::{optimizer_step, OptState, OptVariant, OptimizerSpec};

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::autodiff;
use crate::error::{Error, Result};
use crate::harness::{make_masking, masked_loss, MaskingPlan};
use crate::smoother::{self, TimeSeriesBatch, LAMBDA_MAX, LAMBDA_MIN};
use network::WindowNet;

/// Default emission bounds, matching the smoother's clamp range.
pub const DEFAULT_BOUNDS: (f64, f64) = (LAMBDA_MIN, LAMBDA_MAX);

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Bounded squashing map λ = λ_min + (λ_max - λ_min) σ(raw), nudged off the
/// endpoints so the emitted weight is strictly inside the open interval even
/// where σ saturates in f64.
pub fn squash(raw: f64, bounds: (f64, f64)) -> f64 {
    let (lo, hi) = bounds;
    let v = lo + (hi - lo) * sigmoid(raw);
    v.clamp(lo * (1.0 + 1e-12), hi * (1.0 - 1e-12))
}

/// Derivative of [`squash`] in the raw parameter.
pub fn squash_grad(raw: f64, bounds: (f64, f64)) -> f64 {
    let (lo, hi) = bounds;
    let s = sigmoid(raw);
    (hi - lo) * s * (1.0 - s)
}

/// Raw parameter whose squash is (approximately) the given weight.
pub fn inverse_squash(lambda: f64, bounds: (f64, f64)) -> f64 {
    let (lo, hi) = bounds;
    let s = ((lambda - lo) / (hi - lo)).clamp(1e-15, 1.0 - 1e-15);
    (s / (1.0 - s)).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Scalar,
    Vector,
    Network,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "scalar" => Ok(ModelKind::Scalar),
            "vector" => Ok(ModelKind::Vector),
            "network" => Ok(ModelKind::Network),
            other => Err(Error::domain(format!("unknown model kind '{other}'"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ModelKind::Scalar => "scalar",
            ModelKind::Vector => "vector",
            ModelKind::Network => "network",
        };
        f.write_str(s)
    }
}

/// Regularizer with unconstrained parameters and bounded emission.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegularizerModel {
    pub kind: ModelKind,
    pub bounds: (f64, f64),
    /// Scalar and vector kinds: share one parameter set across all series
    /// instead of fitting each series independently.
    pub shared: bool,
    /// Network kind only.
    pub window_radius: usize,
    pub hidden: usize,
    pub channels: usize,
    pub seed: u64,
    raw: Vec<f64>,
}

impl RegularizerModel {
    /// One scalar weight per series (or shared), starting at `init_lambda`.
    pub fn scalar(n_series: usize, init_lambda: f64, shared: bool) -> Self {
        let raw0 = inverse_squash(init_lambda, DEFAULT_BOUNDS);
        RegularizerModel {
            kind: ModelKind::Scalar,
            bounds: DEFAULT_BOUNDS,
            shared,
            window_radius: 0,
            hidden: 0,
            channels: 0,
            seed: 0,
            raw: vec![raw0; if shared { 1 } else { n_series }],
        }
    }

    /// Free weight vector per series, `n_weights` stencils each.
    pub fn vector(n_series: usize, n_weights: usize, init_lambda: f64) -> Self {
        let raw0 = inverse_squash(init_lambda, DEFAULT_BOUNDS);
        RegularizerModel {
            kind: ModelKind::Vector,
            bounds: DEFAULT_BOUNDS,
            shared: false,
            window_radius: 0,
            hidden: 0,
            channels: 0,
            seed: 0,
            raw: vec![raw0; n_series * n_weights],
        }
    }

    /// One weight profile shared by every series in the batch; the series
    /// must sit on a common grid for the stencils to line up.
    pub fn vector_shared(n_weights: usize, init_lambda: f64) -> Self {
        let raw0 = inverse_squash(init_lambda, DEFAULT_BOUNDS);
        RegularizerModel {
            kind: ModelKind::Vector,
            bounds: DEFAULT_BOUNDS,
            shared: true,
            window_radius: 0,
            hidden: 0,
            channels: 0,
            seed: 0,
            raw: vec![raw0; n_weights],
        }
    }

    /// Windowed feed-forward regularizer shared across series.
    pub fn network(
        channels: usize,
        window_radius: usize,
        hidden: usize,
        seed: u64,
        init_lambda: f64,
    ) -> Self {
        let net = WindowNet {
            channels,
            radius: window_radius,
            hidden,
        };
        let raw = net.init_params(seed, inverse_squash(init_lambda, DEFAULT_BOUNDS));
        RegularizerModel {
            kind: ModelKind::Network,
            bounds: DEFAULT_BOUNDS,
            shared: false,
            window_radius,
            hidden,
            channels,
            seed,
            raw,
        }
    }

    pub fn params(&self) -> &[f64] {
        &self.raw
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.raw
    }

    fn net(&self) -> WindowNet {
        WindowNet {
            channels: self.channels,
            radius: self.window_radius,
            hidden: self.hidden,
        }
    }

    fn check_compatible(&self, n_series: usize, n_weights: usize, channels: usize) -> Result<()> {
        match self.kind {
            ModelKind::Scalar => {
                let want = if self.shared { 1 } else { n_series };
                if self.raw.len() != want {
                    return Err(Error::structure(format!(
                        "scalar model has {} parameters, batch needs {want}",
                        self.raw.len()
                    )));
                }
            }
            ModelKind::Vector => {
                let want = if self.shared {
                    n_weights
                } else {
                    n_series * n_weights
                };
                if self.raw.len() != want {
                    return Err(Error::structure(format!(
                        "vector model has {} parameters, batch needs {want}",
                        self.raw.len()
                    )));
                }
            }
            ModelKind::Network => {
                if self.channels != channels {
                    return Err(Error::structure(format!(
                        "network expects {} channels, batch has {channels}",
                        self.channels
                    )));
                }
                if self.raw.len() != self.net().param_count() {
                    return Err(Error::structure("network parameter count mismatch"));
                }
            }
        }
        Ok(())
    }

    /// Emit the penalty weights for one series. The network kind reads only
    /// the series' own (masked) values and times.
    pub fn emit_lambda(
        &self,
        series: usize,
        times: &[f64],
        values: ArrayView2<'_, f64>,
        mask: &[f64],
        n_weights: usize,
    ) -> Result<Vec<f64>> {
        match self.kind {
            ModelKind::Scalar => {
                let idx = if self.shared { 0 } else { series };
                let raw = *self.raw.get(idx).ok_or_else(|| {
                    Error::structure(format!("scalar model has no parameter for series {series}"))
                })?;
                Ok(vec![squash(raw, self.bounds); n_weights])
            }
            ModelKind::Vector => {
                let start = if self.shared { 0 } else { series * n_weights };
                if start + n_weights > self.raw.len() {
                    return Err(Error::structure(format!(
                        "vector model too small for series {series} with {n_weights} weights"
                    )));
                }
                Ok(self.raw[start..start + n_weights]
                    .iter()
                    .map(|r| squash(*r, self.bounds))
                    .collect())
            }
            ModelKind::Network => {
                let net = self.net();
                let mut feat = Vec::new();
                let mut post = Vec::new();
                let mut out = Vec::with_capacity(n_weights);
                for r in 0..n_weights {
                    net.features(times, values, mask, r, &mut feat);
                    let raw = net.forward(&self.raw, &feat, &mut post);
                    out.push(squash(raw, self.bounds));
                }
                Ok(out)
            }
        }
    }

    /// Emit the full B x (T - order) weight array for a batch.
    pub fn emit_lambda_batch(&self, batch: &TimeSeriesBatch, order: usize) -> Result<Array2<f64>> {
        let b = batch.n_series();
        let t = batch.len();
        let n_weights = t - order;
        self.check_compatible(b, n_weights, batch.n_channels())?;
        let mut lam = Array2::<f64>::zeros((b, n_weights));
        for s in 0..b {
            let times = batch.times.row(s);
            let mask = batch.mask.row(s);
            let row = self.emit_lambda(
                s,
                times.as_slice().expect("contiguous"),
                batch.values.index_axis(Axis(0), s),
                mask.as_slice().expect("contiguous"),
                n_weights,
            )?;
            for (r, v) in row.into_iter().enumerate() {
                lam[(s, r)] = v;
            }
        }
        Ok(lam)
    }

    /// Chain the loss gradient in Λ back to the raw parameters.
    fn param_grads(
        &self,
        batch: &TimeSeriesBatch,
        order: usize,
        lam_bar: &Array2<f64>,
    ) -> Result<Vec<f64>> {
        let b = batch.n_series();
        let t = batch.len();
        let n_weights = t - order;
        let mut grads = vec![0.0; self.raw.len()];
        match self.kind {
            ModelKind::Scalar => {
                for s in 0..b {
                    let idx = if self.shared { 0 } else { s };
                    let sg = squash_grad(self.raw[idx], self.bounds);
                    for r in 0..n_weights {
                        grads[idx] += lam_bar[(s, r)] * sg;
                    }
                }
            }
            ModelKind::Vector => {
                for s in 0..b {
                    for r in 0..n_weights {
                        let idx = if self.shared { r } else { s * n_weights + r };
                        grads[idx] += lam_bar[(s, r)] * squash_grad(self.raw[idx], self.bounds);
                    }
                }
            }
            ModelKind::Network => {
                let net = self.net();
                let mut feat = Vec::new();
                let mut post = Vec::new();
                for s in 0..b {
                    let times = batch.times.row(s);
                    let times = times.as_slice().expect("contiguous");
                    let mask = batch.mask.row(s);
                    let mask = mask.as_slice().expect("contiguous");
                    let values = batch.values.index_axis(Axis(0), s);
                    for r in 0..n_weights {
                        net.features(times, values, mask, r, &mut feat);
                        let raw = net.forward(&self.raw, &feat, &mut post);
                        let d_raw = lam_bar[(s, r)] * squash_grad(raw, self.bounds);
                        net.backward(&self.raw, &feat, &post, d_raw, &mut grads);
                    }
                }
            }
        }
        Ok(grads)
    }
}

/// Loss protocol for a fit: how much to hide, and whether to redraw the
/// hidden positions every step.
#[derive(Debug, Clone)]
pub struct FitSpec {
    pub order: usize,
    pub mask_fraction: f64,
    pub seed: u64,
    /// Redraw the masking plan each step (stochastic objective) instead of
    /// fitting against one fixed plan.
    pub resample_masks: bool,
}

impl Default for FitSpec {
    fn default() -> Self {
        FitSpec {
            order: 2,
            mask_fraction: 0.1,
            seed: 0,
            resample_masks: false,
        }
    }
}

/// Loss values recorded over a fit: entry i is the loss before update i,
/// the last entry is the loss after the final update.
#[derive(Debug, Clone)]
pub struct FitTrace {
    pub losses: Vec<f64>,
}

impl FitTrace {
    pub fn initial(&self) -> f64 {
        *self.losses.first().expect("trace never empty")
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("trace never empty")
    }
}

/// Consecutive steps above 10x the initial loss before aborting.
const DIVERGENCE_PATIENCE: usize = 50;

/// Watches the loss sequence and aborts a run whose loss has stayed above
/// ten times its initial value for [`DIVERGENCE_PATIENCE`] consecutive steps.
#[derive(Debug, Clone)]
pub struct DivergenceGuard {
    initial: Option<f64>,
    streak: usize,
}

impl DivergenceGuard {
    pub fn new() -> Self {
        DivergenceGuard {
            initial: None,
            streak: 0,
        }
    }

    /// Feed one loss value; errs once the high-loss streak is exhausted.
    pub fn observe(&mut self, step: usize, loss: f64) -> Result<()> {
        let initial = *self.initial.get_or_insert(loss);
        if loss > 10.0 * initial.max(1e-12) {
            self.streak += 1;
            if self.streak >= DIVERGENCE_PATIENCE {
                return Err(Error::Diverged {
                    step,
                    details: format!(
                        "loss {loss:.6e} above 10x initial {initial:.6e} for {} consecutive steps",
                        self.streak
                    ),
                });
            }
        } else {
            self.streak = 0;
        }
        Ok(())
    }
}

impl Default for DivergenceGuard {
    fn default() -> Self {
        Self::new()
    }
}

fn masking_for_step(
    batch: &TimeSeriesBatch,
    spec: &FitSpec,
    step: usize,
) -> Result<MaskingPlan> {
    let seed = if spec.resample_masks {
        spec.seed.wrapping_add(step as u64)
    } else {
        spec.seed
    };
    make_masking(batch, spec.mask_fraction, spec.order + 1, seed)
}

/// One forward evaluation of the fit objective for the current parameters.
fn forward_loss(
    model: &RegularizerModel,
    batch: &TimeSeriesBatch,
    spec: &FitSpec,
    step: usize,
) -> Result<(f64, MaskingPlan, smoother::SmootherContext)> {
    let plan = masking_for_step(batch, spec, step)?;
    let masked = plan.apply(batch);
    let lam = model.emit_lambda_batch(&masked, spec.order)?;
    let ctx = smoother::smooth_hetero(&masked, spec.order, &lam)?;
    let (loss, _) = masked_loss(&ctx.z, batch, &plan)?;
    Ok((loss, plan, ctx))
}

/// Gradient descent on the masked reconstruction loss.
///
/// Each step: emit Λ from the masked series, solve, score the held-out
/// positions, pull the gradient back through the solve and the squashing
/// map (and the network, for that kind), update. Aborts when the loss has
/// stayed above 10x its initial value for [`DIVERGENCE_PATIENCE`] steps or
/// a gradient goes non-finite.
pub fn fit(
    model: &mut RegularizerModel,
    batch: &TimeSeriesBatch,
    spec: &FitSpec,
    opt: &OptimizerSpec,
) -> Result<FitTrace> {
    let n_weights = batch.len() - spec.order;
    model.check_compatible(batch.n_series(), n_weights, batch.n_channels())?;

    let mut losses = Vec::with_capacity(opt.steps + 1);
    let mut state = OptState::new(model.raw.len());
    let mut guard = DivergenceGuard::new();

    for step in 0..opt.steps {
        let plan = masking_for_step(batch, spec, step)?;
        let masked = plan.apply(batch);
        let lam = model.emit_lambda_batch(&masked, spec.order)?;
        let ctx = smoother::smooth_hetero(&masked, spec.order, &lam)?;
        let (loss, g_bar) = masked_loss(&ctx.z, batch, &plan)?;
        losses.push(loss);
        guard.observe(step, loss)?;

        let cot = autodiff::vjp(&ctx, &g_bar)?;
        let grads = model.param_grads(&masked, spec.order, &cot.lam_bar)?;
        optimizer_step(&mut model.raw, &grads, &mut state, opt)?;
    }

    let (final_loss, _, _) = forward_loss(model, batch, spec, opt.steps)?;
    losses.push(final_loss);
    Ok(FitTrace { losses })
}

/// Versioned checkpoint wrapper around the model.
#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    model: RegularizerModel,
}

const CHECKPOINT_VERSION: u32 = 1;

pub fn to_checkpoint_json(model: &RegularizerModel) -> String {
    serde_json::to_string_pretty(&Checkpoint {
        version: CHECKPOINT_VERSION,
        model: model.clone(),
    })
    .expect("checkpoint serialization cannot fail")
}

pub fn from_checkpoint_json(text: &str) -> Result<RegularizerModel> {
    let ck: Checkpoint = serde_json::from_str(text)
        .map_err(|e| Error::data(format!("bad checkpoint: {e}")))?;
    if ck.version != CHECKPOINT_VERSION {
        return Err(Error::data(format!(
            "checkpoint version {} not supported (expected {CHECKPOINT_VERSION})",
            ck.version
        )));
    }
    Ok(ck.model)
}

pub fn save_checkpoint(model: &RegularizerModel, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, to_checkpoint_json(model))
        .map_err(|e| Error::data(format!("cannot write checkpoint {}: {e}", path.display())))
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<RegularizerModel> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read checkpoint {}: {e}", path.display())))?;
    from_checkpoint_json(&text)
}
