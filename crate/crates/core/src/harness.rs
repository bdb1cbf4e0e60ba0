//! Training and evaluation protocol: standardization, random time masking,
//! masked reconstruction loss, accuracy metrics, and the synthetic
//! heteroscedastic generator used throughout the tests.

use ndarray::{Array2, Array3, ArrayView1, ArrayView2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::smoother::TimeSeriesBatch;

/// Per-channel affine transform fitted on observed positions only.
#[derive(Debug, Clone)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Map a batch into standardized units (observed-position statistics).
    pub fn apply(&self, batch: &TimeSeriesBatch) -> TimeSeriesBatch {
        let mut out = batch.clone();
        let (b, c, t) = out.values.dim();
        for s in 0..b {
            for ch in 0..c {
                for i in 0..t {
                    out.values[(s, ch, i)] =
                        (out.values[(s, ch, i)] - self.mean[ch]) / self.scale[ch];
                }
            }
        }
        out
    }

    /// Inverse transform, back to raw units.
    pub fn invert(&self, batch: &TimeSeriesBatch) -> TimeSeriesBatch {
        let mut out = batch.clone();
        let (b, c, t) = out.values.dim();
        for s in 0..b {
            for ch in 0..c {
                for i in 0..t {
                    out.values[(s, ch, i)] =
                        out.values[(s, ch, i)] * self.scale[ch] + self.mean[ch];
                }
            }
        }
        out
    }

    /// Inverse transform for a single series' channel-major value block.
    pub fn invert_values(&self, values: &mut Array2<f64>) {
        for ((ch, _), v) in values.indexed_iter_mut() {
            *v = *v * self.scale[ch] + self.mean[ch];
        }
    }
}

/// Zero-mean unit-variance standardization per channel over observed
/// positions. Returns the transformed batch and the fitted transform.
pub fn standardize(batch: &TimeSeriesBatch) -> Result<(TimeSeriesBatch, Standardizer)> {
    let (b, c, t) = batch.values.dim();
    let mut mean = vec![0.0; c];
    let mut scale = vec![0.0; c];
    for ch in 0..c {
        let mut sum = 0.0;
        let mut count = 0.0;
        for s in 0..b {
            for i in 0..t {
                if batch.mask[(s, i)] == 1.0 {
                    sum += batch.values[(s, ch, i)];
                    count += 1.0;
                }
            }
        }
        if count == 0.0 {
            return Err(Error::domain(format!("channel {ch} has no observed values")));
        }
        let mu = sum / count;
        let mut var = 0.0;
        for s in 0..b {
            for i in 0..t {
                if batch.mask[(s, i)] == 1.0 {
                    let d = batch.values[(s, ch, i)] - mu;
                    var += d * d;
                }
            }
        }
        var /= count;
        if var <= 0.0 {
            return Err(Error::ZeroVariance(ch));
        }
        mean[ch] = mu;
        scale[ch] = var.sqrt();
    }
    let st = Standardizer { mean, scale };
    Ok((st.apply(batch), st))
}

/// Reproducible plan of extra time indices to hide from the smoother.
/// Indices are always drawn from originally observed positions.
#[derive(Debug, Clone)]
pub struct MaskingPlan {
    pub seed: u64,
    pub fraction: f64,
    /// Per series, sorted indices newly masked by this plan.
    pub masked: Vec<Vec<usize>>,
}

impl MaskingPlan {
    /// Batch with the plan's positions switched to mask 0.
    pub fn apply(&self, batch: &TimeSeriesBatch) -> TimeSeriesBatch {
        let mut out = batch.clone();
        for (s, idxs) in self.masked.iter().enumerate() {
            for &i in idxs {
                out.mask[(s, i)] = 0.0;
            }
        }
        out
    }

    pub fn total_masked(&self) -> usize {
        self.masked.iter().map(Vec::len).sum()
    }
}

/// Draw a masking plan hiding `fraction` of each series' observed points,
/// leaving at least `min_keep` observed. Deterministic in `seed`, with an
/// independent substream per series.
pub fn make_masking(
    batch: &TimeSeriesBatch,
    fraction: f64,
    min_keep: usize,
    seed: u64,
) -> Result<MaskingPlan> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::domain(format!(
            "mask fraction must be in [0, 1), got {fraction}"
        )));
    }
    let b = batch.n_series();
    let t = batch.len();
    let mut masked = Vec::with_capacity(b);
    for s in 0..b {
        let observed: Vec<usize> = (0..t).filter(|i| batch.mask[(s, *i)] == 1.0).collect();
        let n_mask = (fraction * observed.len() as f64).floor() as usize;
        if observed.len() - n_mask < min_keep {
            return Err(Error::domain(format!(
                "series {s}: masking {n_mask} of {} observed points leaves fewer than {min_keep}",
                observed.len()
            )));
        }
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (s as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut picks: Vec<usize> = sample(&mut rng, observed.len(), n_mask)
            .into_iter()
            .map(|k| observed[k])
            .collect();
        picks.sort_unstable();
        masked.push(picks);
    }
    Ok(MaskingPlan {
        seed,
        fraction,
        masked,
    })
}

/// Index of the observed position nearest by day to slot `i`.
fn nearest_observed(times: ArrayView1<'_, f64>, mask: ArrayView1<'_, f64>, i: usize) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (j, &w) in mask.iter().enumerate() {
        if w == 1.0 {
            let d = (times[j] - times[i]).abs();
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, j));
            }
        }
    }
    best.map(|(_, j)| j)
}

/// Mean squared reconstruction error at the plan's held-out positions, and
/// its exact gradient with respect to z.
///
/// Targets at artificially masked positions are the held-out true values.
/// When `score_original_gaps` is set, positions that were invalid in the
/// original batch are scored too, against the nearest observed value by day.
pub fn masked_loss_with_gaps(
    z: &Array3<f64>,
    batch: &TimeSeriesBatch,
    plan: &MaskingPlan,
    score_original_gaps: bool,
) -> Result<(f64, Array3<f64>)> {
    let (b, c, t) = batch.values.dim();
    if z.dim() != (b, c, t) {
        return Err(Error::structure(format!(
            "z shape {:?} does not match batch {:?}",
            z.dim(),
            (b, c, t)
        )));
    }
    // (series, slot, reference slot) triples to score
    let mut scored: Vec<(usize, usize, usize)> = Vec::new();
    for s in 0..b {
        for &i in &plan.masked[s] {
            scored.push((s, i, i));
        }
        if score_original_gaps {
            for i in 0..t {
                if batch.mask[(s, i)] == 0.0 {
                    if let Some(j) = nearest_observed(batch.times.row(s), batch.mask.row(s), i) {
                        scored.push((s, i, j));
                    }
                }
            }
        }
    }
    if scored.is_empty() {
        return Err(Error::domain("masked loss needs at least one scored position"));
    }
    let m = (scored.len() * c) as f64;
    let mut loss = 0.0;
    let mut grad = Array3::<f64>::zeros((b, c, t));
    for &(s, i, j) in &scored {
        for ch in 0..c {
            let e = z[(s, ch, i)] - batch.values[(s, ch, j)];
            loss += e * e;
            grad[(s, ch, i)] += 2.0 * e / m;
        }
    }
    Ok((loss / m, grad))
}

/// Masked loss over artificially hidden positions only.
pub fn masked_loss(
    z: &Array3<f64>,
    batch: &TimeSeriesBatch,
    plan: &MaskingPlan,
) -> Result<(f64, Array3<f64>)> {
    masked_loss_with_gaps(z, batch, plan, false)
}

/// How the squared-error sum is turned into a mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Divide by the full series length T, observed or not.
    ByLength,
    /// Divide by the number of observed positions.
    ByObserved,
}

/// Accuracy of a reconstruction for one series (all channels).
#[derive(Debug, Clone, Copy)]
pub struct Metrics {
    /// Mean over channels of the per-channel masked mean squared error.
    pub mse: f64,
    /// Largest masked absolute error over all channels and slots.
    pub maxe: f64,
    /// Set when the weight vector was all zero; both metrics are then an
    /// empty sum and read 0 by construction.
    pub all_masked: bool,
}

/// MSE and MaxE of z against x under observation weights w, normalized by
/// the series length.
pub fn metrics(z: ArrayView2<'_, f64>, x: ArrayView2<'_, f64>, w: ArrayView1<'_, f64>) -> Result<Metrics> {
    metrics_with(z, x, w, Normalization::ByLength)
}

/// Metrics with an explicit normalization choice.
pub fn metrics_with(
    z: ArrayView2<'_, f64>,
    x: ArrayView2<'_, f64>,
    w: ArrayView1<'_, f64>,
    norm: Normalization,
) -> Result<Metrics> {
    let (c, t) = z.dim();
    if x.dim() != (c, t) || w.len() != t {
        return Err(Error::structure(format!(
            "metrics shapes differ: z {:?}, x {:?}, w {}",
            z.dim(),
            x.dim(),
            w.len()
        )));
    }
    let denom = match norm {
        Normalization::ByLength => t as f64,
        Normalization::ByObserved => w.iter().sum::<f64>(),
    };
    let all_masked = w.iter().all(|v| *v == 0.0);
    let mut mse = 0.0;
    let mut maxe = 0.0f64;
    for ch in 0..c {
        let mut acc = 0.0;
        for i in 0..t {
            let e = w[i] * (z[(ch, i)] - x[(ch, i)]).abs();
            maxe = maxe.max(e);
            acc += w[i] * (z[(ch, i)] - x[(ch, i)]).powi(2);
        }
        mse += if denom > 0.0 { acc / denom } else { 0.0 };
    }
    Ok(Metrics {
        mse: mse / c as f64,
        maxe,
        all_masked,
    })
}

/// One evaluation row in the reconstruction-accuracy layout.
#[derive(Debug, Clone)]
pub struct EvalRow {
    pub model_kind: String,
    pub order: usize,
    pub mse: f64,
    pub maxe: f64,
    pub seed: u64,
}

/// Accuracy rows averaged over series, serialized in a fixed CSV layout.
#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn push(&mut self, row: EvalRow) {
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model_kind,order,mse,maxe,seed\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.model_kind, r.order, r.mse, r.maxe, r.seed
            ));
        }
        out
    }
}

/// One synthetic series with known ground truth.
#[derive(Debug, Clone)]
pub struct SynthSeries {
    pub times: Vec<f64>,
    pub truth: Vec<f64>,
    pub noisy: Vec<f64>,
    pub noise_window: (f64, f64),
}

/// Ground-truth curve of the synthetic generator: a slow and a faster
/// sinusoid, sin(2πt/15) + 0.6 sin(4πt/15 + 0.5), fixed so expected
/// numbers stay stable.
pub fn synth_truth(t: f64) -> f64 {
    use std::f64::consts::PI;
    (2.0 * PI * t / 15.0).sin() + 0.6 * (4.0 * PI * t / 15.0 + 0.5).sin()
}

/// Synthetic series over t ∈ [0, 15] with Gaussian noise of deviation
/// `sigma_high` inside `noise_window` and `sigma_low` outside.
pub fn synth_hetero(
    seed: u64,
    t_count: usize,
    noise_window: (f64, f64),
    sigma_low: f64,
    sigma_high: f64,
) -> Result<SynthSeries> {
    if !(sigma_high > sigma_low && sigma_low > 0.0) {
        return Err(Error::domain(format!(
            "need sigma_high > sigma_low > 0, got {sigma_high} and {sigma_low}"
        )));
    }
    if !(noise_window.0 < noise_window.1) {
        return Err(Error::domain(format!(
            "invalid noise window [{}, {}]",
            noise_window.0, noise_window.1
        )));
    }
    if t_count < 2 {
        return Err(Error::domain("need at least two samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = 15.0;
    let times: Vec<f64> = (0..t_count)
        .map(|i| span * i as f64 / (t_count - 1) as f64)
        .collect();
    let truth: Vec<f64> = times.iter().map(|&t| synth_truth(t)).collect();
    let noisy: Vec<f64> = times
        .iter()
        .zip(&truth)
        .map(|(&t, &f)| {
            let sigma = if t >= noise_window.0 && t <= noise_window.1 {
                sigma_high
            } else {
                sigma_low
            };
            let n: f64 = StandardNormal.sample(&mut rng);
            f + sigma * n
        })
        .collect();
    Ok(SynthSeries {
        times,
        truth,
        noisy,
        noise_window,
    })
}

/// Special case with a single noise level everywhere.
pub fn synth_homo(seed: u64, t_count: usize, sigma: f64) -> Result<SynthSeries> {
    let mut s = synth_hetero(seed, t_count, (0.0, 15.0), sigma, sigma * (1.0 + 1e-9))?;
    s.noise_window = (0.0, 15.0);
    Ok(s)
}

/// Batch of single-channel synthetic series (independent noise per series)
/// together with the ground truth in the same layout.
pub fn synth_hetero_batch(
    seed: u64,
    n_series: usize,
    t_count: usize,
    noise_window: (f64, f64),
    sigma_low: f64,
    sigma_high: f64,
) -> Result<(TimeSeriesBatch, Array3<f64>)> {
    let mut times = Array2::<f64>::zeros((n_series, t_count));
    let mut values = Array3::<f64>::zeros((n_series, 1, t_count));
    let mut truth = Array3::<f64>::zeros((n_series, 1, t_count));
    for s in 0..n_series {
        let series = synth_hetero(
            seed.wrapping_add(1 + s as u64),
            t_count,
            noise_window,
            sigma_low,
            sigma_high,
        )?;
        for i in 0..t_count {
            times[(s, i)] = series.times[i];
            values[(s, 0, i)] = series.noisy[i];
            truth[(s, 0, i)] = series.truth[i];
        }
    }
    let mask = Array2::from_elem((n_series, t_count), 1.0);
    let batch = TimeSeriesBatch::new(times, values, mask)?;
    Ok((batch, truth))
}
