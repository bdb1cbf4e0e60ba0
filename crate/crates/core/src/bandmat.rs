//! Lower band storage for symmetric positive-definite matrices.
//!
//! A matrix with bandwidth `p` (sub-diagonals below the main diagonal) is held
//! as a `(p+1) x n` array: row 0 is the main diagonal, row `j` holds the j-th
//! sub-diagonal left-aligned, so slot `(j, t)` stores the full-matrix entry
//! `(t+j, t)`. The trailing `j` slots of row `j` are zero fill. Only the lower
//! triangle is stored; the matrix is symmetric by construction. The same
//! layout holds the Cholesky factor after the in-place factorization, which
//! costs O(n (p+1)^2); each triangular solve costs O(n (p+1)).

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Absolute tolerance for symmetry and round-trip checks on unit-scaled data.
pub const SYMMETRY_TOL: f64 = 1e-12;

static FACTORIZATION_COUNT: AtomicU64 = AtomicU64::new(0);

/// Process-wide count of banded Cholesky factorizations. Used by tests to
/// prove the backward pass reuses the forward factor instead of refactorizing.
pub fn factorization_count() -> u64 {
    FACTORIZATION_COUNT.load(Ordering::Relaxed)
}

/// Whether `bands` currently holds the raw matrix or its Cholesky factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandState {
    Raw,
    Factored,
}

/// Symmetric positive-definite matrix in lower band storage. The buffer is
/// reused in place to hold the Cholesky factor once factorized.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    bandwidth: usize,
    /// Row-major `(bandwidth+1) x n`; row `j` starts at `j * n`.
    bands: Vec<f64>,
    state: BandState,
}

impl BandMatrix {
    /// All-zero raw matrix with the given dimension and sub-diagonal count.
    pub fn zeros(n: usize, bandwidth: usize) -> Result<Self> {
        if bandwidth + 1 > n {
            return Err(Error::structure(format!(
                "bandwidth {bandwidth} too large for dimension {n} (need bandwidth + 1 <= n)"
            )));
        }
        Ok(BandMatrix {
            n,
            bandwidth,
            bands: vec![0.0; (bandwidth + 1) * n],
            state: BandState::Raw,
        })
    }

    /// Wrap an already-assembled band buffer. `bands` is row-major
    /// `(bandwidth+1) x n` and must have zero tails.
    pub fn from_bands(n: usize, bandwidth: usize, bands: Vec<f64>) -> Result<Self> {
        if bandwidth + 1 > n {
            return Err(Error::structure(format!(
                "bandwidth {bandwidth} too large for dimension {n}"
            )));
        }
        if bands.len() != (bandwidth + 1) * n {
            return Err(Error::structure(format!(
                "band buffer has {} entries, expected {}",
                bands.len(),
                (bandwidth + 1) * n
            )));
        }
        for j in 1..=bandwidth {
            for t in (n - j)..n {
                if bands[j * n + t] != 0.0 {
                    return Err(Error::structure(format!(
                        "band row {j} has nonzero tail fill at column {t}"
                    )));
                }
            }
        }
        Ok(BandMatrix {
            n,
            bandwidth,
            bands,
            state: BandState::Raw,
        })
    }

    /// Compress a dense symmetric matrix into band storage.
    ///
    /// Fails if any entry outside the declared band is nonzero or if the
    /// matrix is asymmetric beyond [`SYMMETRY_TOL`].
    pub fn from_dense(dense: ArrayView2<'_, f64>, bandwidth: usize) -> Result<Self> {
        let n = dense.nrows();
        if dense.ncols() != n {
            return Err(Error::structure(format!(
                "dense matrix is {}x{}, expected square",
                n,
                dense.ncols()
            )));
        }
        let mut m = BandMatrix::zeros(n, bandwidth)?;
        for i in 0..n {
            for j in 0..n {
                let v = dense[(i, j)];
                if i < j {
                    if (v - dense[(j, i)]).abs() > SYMMETRY_TOL {
                        return Err(Error::structure(format!(
                            "asymmetry at ({i},{j}): {} vs {}",
                            v,
                            dense[(j, i)]
                        )));
                    }
                    continue;
                }
                let d = i - j;
                if d > bandwidth {
                    if v != 0.0 {
                        return Err(Error::structure(format!(
                            "nonzero entry at ({i},{j}) outside declared bandwidth {bandwidth}"
                        )));
                    }
                    continue;
                }
                m.bands[d * n + j] = v;
            }
        }
        Ok(m)
    }

    /// Expand to dense storage. A raw matrix expands symmetrically; a
    /// factored one expands to the lower-triangular factor L.
    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.n;
        let mut out = Array2::<f64>::zeros((n, n));
        for j in 0..=self.bandwidth {
            for t in 0..(n - j) {
                let v = self.bands[j * n + t];
                out[(t + j, t)] = v;
                if self.state == BandState::Raw {
                    out[(t, t + j)] = v;
                }
            }
        }
        out
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn state(&self) -> BandState {
        self.state
    }

    /// View of the band buffer as a `(bandwidth+1) x n` array.
    pub fn band_array(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.bandwidth + 1, self.n), &self.bands)
            .expect("band buffer has the declared shape")
    }

    /// Entry of the stored band: sub-diagonal `j`, column `t`.
    pub fn band_entry(&self, j: usize, t: usize) -> f64 {
        self.bands[j * self.n + t]
    }

    pub(crate) fn band_entry_mut(&mut self, j: usize, t: usize) -> &mut f64 {
        &mut self.bands[j * self.n + t]
    }

    /// In-place Cholesky factorization in band storage.
    ///
    /// Outer loop runs over the n columns; the inner update touches at most
    /// min(bandwidth, n-t-1) trailing columns, so the cost is O(n (p+1)^2).
    /// The buffer is overwritten with L in the same layout and the state
    /// flips to `Factored`; factoring twice is rejected.
    pub fn cholesky_inplace(&mut self) -> Result<()> {
        if self.state != BandState::Raw {
            return Err(Error::structure(
                "matrix is already factored; refusing to factor again",
            ));
        }
        let n = self.n;
        let p = self.bandwidth;
        let mut v = vec![0.0; p];
        for t in 0..n {
            let omega = self.bands[t];
            if !(omega > 0.0) {
                return Err(Error::NotPositiveDefinite {
                    column: t,
                    series: None,
                });
            }
            for j in 0..p {
                v[j] = self.bands[(j + 1) * n + t];
            }
            let sqrt_omega = omega.sqrt();
            self.bands[t] = sqrt_omega;
            for j in 0..p {
                self.bands[(j + 1) * n + t] = v[j] / sqrt_omega;
            }
            let reach = p.min(n - t - 1);
            for u in 0..reach {
                let scale = v[u] / omega;
                let col = t + 1 + u;
                // rows 0..p-u of column t+1+u, i.e. v[u..p] against v[u]
                for (row, &vj) in v[u..p].iter().enumerate() {
                    self.bands[row * n + col] -= vj * scale;
                }
            }
        }
        self.state = BandState::Factored;
        FACTORIZATION_COUNT.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    /// Solve `L Lᵀ x = b` in place on `b`, using the stored factor.
    pub fn solve_factored_into(&self, b: &mut [f64]) -> Result<()> {
        if self.state != BandState::Factored {
            return Err(Error::structure("solve_factored requires a factored matrix"));
        }
        if b.len() != self.n {
            return Err(Error::structure(format!(
                "rhs length {} does not match dimension {}",
                b.len(),
                self.n
            )));
        }
        let n = self.n;
        let p = self.bandwidth;
        // Forward: L y = b, column-oriented over the band layout.
        for t in 0..n {
            let y = b[t] / self.bands[t];
            b[t] = y;
            let reach = p.min(n - t - 1);
            for j in 1..=reach {
                b[t + j] -= self.bands[j * n + t] * y;
            }
        }
        // Backward: Lᵀ x = y.
        for t in (0..n).rev() {
            let mut s = b[t];
            let reach = p.min(n - t - 1);
            for j in 1..=reach {
                s -= self.bands[j * n + t] * b[t + j];
            }
            b[t] = s / self.bands[t];
        }
        Ok(())
    }

    /// Solve for one right-hand side.
    pub fn solve_factored(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = b.to_vec();
        self.solve_factored_into(&mut x)?;
        Ok(x)
    }

    /// Solve a batch of right-hand sides independently against one factor.
    pub fn solve_factored_batch(&self, rhs: &mut [Vec<f64>]) -> Result<()> {
        for b in rhs.iter_mut() {
            self.solve_factored_into(b)?;
        }
        Ok(())
    }

    /// Multiply the stored (raw) matrix by a vector using only the bands.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.state != BandState::Raw {
            return Err(Error::structure("matvec requires a raw matrix"));
        }
        if v.len() != self.n {
            return Err(Error::structure(format!(
                "vector length {} does not match dimension {}",
                v.len(),
                self.n
            )));
        }
        let n = self.n;
        let mut out = vec![0.0; n];
        for t in 0..n {
            out[t] += self.bands[t] * v[t];
        }
        for j in 1..=self.bandwidth {
            let row = &self.bands[j * n..j * n + (n - j)];
            for (t, &a) in row.iter().enumerate() {
                out[t + j] += a * v[t];
                out[t] += a * v[t + j];
            }
        }
        Ok(out)
    }
}
