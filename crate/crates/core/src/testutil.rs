//! Shared generators for in-crate tests.

use ndarray::{Array2, Array3};
use rand::rngs::StdRng;
use rand::Rng;

use crate::smoother::TimeSeriesBatch;

/// Random batch on uneven day-scale grids with ~25% of slots masked out,
/// topped up so every series stays well posed for the given order.
pub(crate) fn random_batch(
    b: usize,
    c: usize,
    t: usize,
    order: usize,
    rng: &mut StdRng,
) -> TimeSeriesBatch {
    let mut times = Array2::<f64>::zeros((b, t));
    let mut mask = Array2::<f64>::zeros((b, t));
    let mut values = Array3::<f64>::zeros((b, c, t));
    for s in 0..b {
        let mut cur = rng.random::<f64>();
        for i in 0..t {
            times[(s, i)] = cur;
            cur += 0.5 + rng.random::<f64>() * 6.0;
            mask[(s, i)] = if rng.random::<f64>() < 0.75 { 1.0 } else { 0.0 };
            for ch in 0..c {
                values[(s, ch, i)] = rng.random::<f64>() * 2.0 - 1.0;
            }
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
    }
    TimeSeriesBatch::new(times, values, mask).unwrap()
}
