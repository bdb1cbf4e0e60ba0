//! Windowed feed-forward regularizer: a small tanh MLP over a sliding
//! window of masked values and sinusoidal time encodings, one evaluation
//! per penalty stencil. Stands in for a heavier sequence model behind the
//! same interface.

use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Encoding periods in days for the sinusoidal time features.
pub(crate) const ENCODING_PERIODS: [f64; 2] = [10.0, 100.0];

/// Features per window slot: one per channel, a validity flag, then
/// sin/cos at each encoding period.
pub(crate) fn slot_width(channels: usize) -> usize {
    channels + 1 + 2 * ENCODING_PERIODS.len()
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct WindowNet {
    pub channels: usize,
    pub radius: usize,
    pub hidden: usize,
}

impl WindowNet {
    pub fn in_dim(&self) -> usize {
        (2 * self.radius + 1) * slot_width(self.channels)
    }

    /// Flat parameter layout: w1 (hidden x in), b1, w2, b2.
    pub fn param_count(&self) -> usize {
        let d = self.in_dim();
        self.hidden * d + self.hidden + self.hidden + 1
    }

    pub fn init_params(&self, seed: u64, out_bias: f64) -> Vec<f64> {
        let d = self.in_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = vec![0.0; self.param_count()];
        let a = (6.0 / (d + self.hidden) as f64).sqrt();
        for w in p[..self.hidden * d].iter_mut() {
            *w = (rng.random::<f64>() * 2.0 - 1.0) * a;
        }
        // w2 small so the initial output sits near the bias
        let b = 0.1 * (6.0 / (self.hidden + 1) as f64).sqrt();
        let w2_start = self.hidden * d + self.hidden;
        for w in p[w2_start..w2_start + self.hidden].iter_mut() {
            *w = (rng.random::<f64>() * 2.0 - 1.0) * b;
        }
        p[self.hidden * d + 2 * self.hidden] = out_bias;
        p
    }

    /// Window features for the stencil starting at sample `r`. Values are
    /// zeroed wherever the mask is zero (the net never sees hidden values)
    /// and out-of-range slots carry validity 0.
    pub fn features(
        &self,
        times: &[f64],
        values: ArrayView2<'_, f64>,
        mask: &[f64],
        r: usize,
        out: &mut Vec<f64>,
    ) {
        let t = times.len();
        let c = self.channels;
        out.clear();
        for off in -(self.radius as isize)..=(self.radius as isize) {
            let j = r as isize + off;
            if j < 0 || j >= t as isize {
                out.extend(std::iter::repeat(0.0).take(slot_width(c)));
                continue;
            }
            let j = j as usize;
            let m = mask[j];
            for ch in 0..c {
                out.push(if m == 0.0 { 0.0 } else { values[(ch, j)] });
            }
            out.push(m);
            let dt = times[j] - times[r];
            for period in ENCODING_PERIODS {
                let phase = 2.0 * std::f64::consts::PI * dt / period;
                out.push(phase.sin());
                out.push(phase.cos());
            }
        }
    }

    /// Forward pass; fills `hidden_post` with tanh activations for reuse in
    /// the backward pass.
    pub fn forward(&self, params: &[f64], feat: &[f64], hidden_post: &mut Vec<f64>) -> f64 {
        let d = self.in_dim();
        let h = self.hidden;
        hidden_post.clear();
        for k in 0..h {
            let row = &params[k * d..(k + 1) * d];
            let mut s = params[h * d + k];
            for (w, f) in row.iter().zip(feat) {
                s += w * f;
            }
            hidden_post.push(s.tanh());
        }
        let w2 = &params[h * d + h..h * d + 2 * h];
        let mut out = params[h * d + 2 * h];
        for (w, a) in w2.iter().zip(hidden_post.iter()) {
            out += w * a;
        }
        out
    }

    /// Accumulate parameter gradients for one window given d(loss)/d(output).
    pub fn backward(
        &self,
        params: &[f64],
        feat: &[f64],
        hidden_post: &[f64],
        d_out: f64,
        grad: &mut [f64],
    ) {
        let d = self.in_dim();
        let h = self.hidden;
        let w2 = &params[h * d + h..h * d + 2 * h];
        grad[h * d + 2 * h] += d_out;
        for k in 0..h {
            let post = hidden_post[k];
            grad[h * d + h + k] += post * d_out;
            let d_pre = w2[k] * d_out * (1.0 - post * post);
            grad[h * d + k] += d_pre;
            let row = &mut grad[k * d..(k + 1) * d];
            for (g, f) in row.iter_mut().zip(feat) {
                *g += d_pre * f;
            }
        }
    }
}
