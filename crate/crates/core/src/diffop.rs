//! Discrete difference operator for unevenly spaced samples.
//!
//! The operator of order m maps a length-T sample vector to its T-m divided
//! m-th differences. It is built recursively: the order-1 operator takes
//! plain forward differences (rows of -1, +1), and each higher order first
//! rescales row i by m / (t_{i+m} - t_i) and then takes plain differences of
//! adjacent rows. On a unit uniform grid this reduces exactly to the
//! classical repeated-difference matrix (rows of binomial coefficients with
//! alternating signs); on uneven grids the rows annihilate samples of any
//! polynomial of degree below m. Each row has m+1 contiguous coefficients,
//! so the operator and the Gram matrix built from it stay banded.

use crate::bandmat::BandMatrix;
use crate::error::{Error, Result};

/// Highest supported difference order.
pub const MAX_ORDER: usize = 5;

/// Order-m divided-difference operator on a fixed time grid, stored as
/// banded rows: row r holds m+1 coefficients for columns r..=r+m.
#[derive(Debug, Clone)]
pub struct DifferenceOperator {
    times: Vec<f64>,
    order: usize,
    /// Row-major (T - order) x (order + 1) coefficient block.
    coeffs: Vec<f64>,
}

impl DifferenceOperator {
    /// Build the order-m operator for a strictly increasing time grid.
    pub fn build(times: &[f64], order: usize) -> Result<Self> {
        if order == 0 || order > MAX_ORDER {
            return Err(Error::domain(format!(
                "difference order must be in 1..={MAX_ORDER}, got {order}"
            )));
        }
        let t = times.len();
        if t < order + 1 {
            return Err(Error::domain(format!(
                "need at least {} time samples for order {order}, got {t}",
                order + 1
            )));
        }
        for w in times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::domain(format!(
                    "times must be strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
        }

        // Order 1: plain forward differences.
        let mut rows: Vec<Vec<f64>> = (0..t - 1).map(|_| vec![-1.0, 1.0]).collect();
        // Each recursion step widens every row by one and drops the last row.
        for m in 1..order {
            let scaled: Vec<Vec<f64>> = rows
                .iter()
                .enumerate()
                .map(|(i, row)| {
                    let scale = m as f64 / (times[i + m] - times[i]);
                    row.iter().map(|c| c * scale).collect()
                })
                .collect();
            let width = m + 2;
            let mut next = Vec::with_capacity(scaled.len() - 1);
            for i in 0..scaled.len() - 1 {
                let mut row = vec![0.0; width];
                for (j, c) in scaled[i + 1].iter().enumerate() {
                    row[j + 1] += c;
                }
                for (j, c) in scaled[i].iter().enumerate() {
                    row[j] -= c;
                }
                next.push(row);
            }
            rows = next;
        }

        let mut coeffs = Vec::with_capacity(rows.len() * (order + 1));
        for row in &rows {
            coeffs.extend_from_slice(row);
        }
        Ok(DifferenceOperator {
            times: times.to_vec(),
            order,
            coeffs,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of input samples T.
    pub fn input_len(&self) -> usize {
        self.times.len()
    }

    /// Number of rows, T - order.
    pub fn output_len(&self) -> usize {
        self.times.len() - self.order
    }

    /// Coefficients of row r (columns r..=r+order).
    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.order + 1;
        &self.coeffs[r * w..(r + 1) * w]
    }

    /// Apply the operator: banded row dot products, O(T (order+1)).
    pub fn apply(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.input_len() {
            return Err(Error::structure(format!(
                "apply expects length {}, got {}",
                self.input_len(),
                z.len()
            )));
        }
        let w = self.order + 1;
        let out = (0..self.output_len())
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(&z[r..r + w])
                    .map(|(c, v)| c * v)
                    .sum()
            })
            .collect();
        Ok(out)
    }

    /// Apply the adjoint: scatter each row back onto its column window.
    pub fn apply_transpose(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.output_len() {
            return Err(Error::structure(format!(
                "apply_transpose expects length {}, got {}",
                self.output_len(),
                v.len()
            )));
        }
        let mut out = vec![0.0; self.input_len()];
        for (r, &vr) in v.iter().enumerate() {
            for (j, c) in self.row(r).iter().enumerate() {
                out[r + j] += c * vr;
            }
        }
        Ok(out)
    }

    /// Assemble Dᵀ diag(weights) D in lower band storage (bandwidth = order).
    pub fn gram_banded(&self, weights: &[f64]) -> Result<BandMatrix> {
        if weights.len() != self.output_len() {
            return Err(Error::structure(format!(
                "gram expects {} weights, got {}",
                self.output_len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0)) {
            return Err(Error::domain(format!(
                "penalty weights must be strictly positive, got {w}"
            )));
        }
        let n = self.input_len();
        let p = self.order;
        let mut gram = BandMatrix::zeros(n, p)?;
        for (r, &w) in weights.iter().enumerate() {
            let row = self.row(r);
            for a in 0..=p {
                let wa = w * row[a];
                for b in 0..=a {
                    // entry (r+a, r+b) lands in sub-diagonal a-b, column r+b
                    *gram.band_entry_mut(a - b, r + b) += wa * row[b];
                }
            }
        }
        Ok(gram)
    }

    /// Dense (T - order) x T expansion, for oracles and baselines.
    pub fn to_dense(&self) -> ndarray::Array2<f64> {
        let mut d = ndarray::Array2::<f64>::zeros((self.output_len(), self.input_len()));
        for r in 0..self.output_len() {
            for (j, c) in self.row(r).iter().enumerate() {
                d[(r, r + j)] = *c;
            }
        }
        d
    }
}
