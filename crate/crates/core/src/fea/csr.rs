//! Compressed sparse row matrices with the few kernels the solvers need.

use rayon::prelude::*;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

/// Rows per rayon task in the matrix kernels.
const ROW_CHUNK: usize = 4096;

impl CsrMatrix {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[a..b], &self.values[a..b])
    }

    /// Position of entry `(i, j)` in `values`, if stored.
    pub fn find(&self, i: usize, j: usize) -> Option<usize> {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col_idx[a..b].binary_search(&j).ok().map(|p| a + p)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.find(i, j).map_or(0.0, |p| self.values[p])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows).map(|i| self.get(i, i)).collect()
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        y.par_chunks_mut(ROW_CHUNK).enumerate().for_each(|(c, ys)| {
            let base = c * ROW_CHUNK;
            for (k, yi) in ys.iter_mut().enumerate() {
                let i = base + k;
                let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
                let mut acc = 0.0;
                for p in a..b {
                    acc += self.values[p] * x[self.col_idx[p]];
                }
                *yi = acc;
            }
        });
    }

    /// `r = b - A x`.
    pub fn residual(&self, x: &[f64], b: &[f64], r: &mut [f64]) {
        r.par_chunks_mut(ROW_CHUNK).enumerate().for_each(|(c, rs)| {
            let base = c * ROW_CHUNK;
            for (k, ri) in rs.iter_mut().enumerate() {
                let i = base + k;
                let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
                let mut acc = b[i];
                for p in s..e {
                    acc -= self.values[p] * x[self.col_idx[p]];
                }
                *ri = acc;
            }
        });
    }

    /// `r = b - A x` accumulated in double-double (error-free products and
    /// sums), rounded once at the end. Accurate even when `A x` nearly
    /// cancels `b`, which is what iterative refinement needs.
    pub fn residual_extended(&self, x: &[f64], b: &[f64], r: &mut [f64]) {
        r.par_chunks_mut(ROW_CHUNK).enumerate().for_each(|(c, rs)| {
            let base = c * ROW_CHUNK;
            for (k, ri) in rs.iter_mut().enumerate() {
                let i = base + k;
                let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
                let (mut hi, mut lo) = (b[i], 0.0);
                for p in s..e {
                    let (a, xv) = (self.values[p], x[self.col_idx[p]]);
                    let prod = a * xv;
                    let prod_err = a.mul_add(xv, -prod);
                    let (sum, sum_err) = two_sum(hi, -prod);
                    hi = sum;
                    lo += sum_err - prod_err;
                }
                *ri = hi + lo;
            }
        });
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.ncols + 1];
        for &j in &self.col_idx {
            counts[j + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col_idx = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.nrows {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[p];
                let q = next[j];
                next[j] += 1;
                col_idx[q] = i;
                values[q] = self.values[p];
            }
        }
        CsrMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Sparse product `A B` (row-by-row accumulation, sorted columns).
    pub fn mul_mat(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.ncols, other.nrows);
        let ncols = other.ncols;
        let rows: Vec<(Vec<usize>, Vec<f64>)> = (0..self.nrows)
            .into_par_iter()
            .with_min_len(ROW_CHUNK / 4)
            .map_init(
                || (vec![0.0f64; ncols], vec![false; ncols], Vec::new()),
                |(acc, seen, cols), i| {
                    cols.clear();
                    for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                        let k = self.col_idx[p];
                        let a = self.values[p];
                        for q in other.row_ptr[k]..other.row_ptr[k + 1] {
                            let j = other.col_idx[q];
                            if !seen[j] {
                                seen[j] = true;
                                cols.push(j);
                            }
                            acc[j] += a * other.values[q];
                        }
                    }
                    cols.sort_unstable();
                    let vals: Vec<f64> = cols
                        .iter()
                        .map(|&j| {
                            seen[j] = false;
                            std::mem::take(&mut acc[j])
                        })
                        .collect();
                    (cols.clone(), vals)
                },
            )
            .collect();
        let mut row_ptr = Vec::with_capacity(self.nrows + 1);
        row_ptr.push(0);
        let total: usize = rows.iter().map(|r| r.0.len()).sum();
        let mut col_idx = Vec::with_capacity(total);
        let mut values = Vec::with_capacity(total);
        for (c, v) in rows {
            col_idx.extend(c);
            values.extend(v);
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    #[cfg(test)]
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, row) in d.iter_mut().enumerate() {
            let (c, v) = self.row(i);
            for (&j, &x) in c.iter().zip(v) {
                row[j] += x;
            }
        }
        d
    }
}

/// Knuth's error-free sum: `a + b = s + e` exactly.
#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CsrMatrix {
        // [[1 0 2], [0 3 0]]
        CsrMatrix {
            nrows: 2,
            ncols: 3,
            row_ptr: vec![0, 2, 3],
            col_idx: vec![0, 2, 1],
            values: vec![1.0, 2.0, 3.0],
        }
    }

    #[test]
    fn transpose_and_product() {
        let a = sample();
        let at = a.transpose();
        assert_eq!(at.to_dense(), vec![vec![1.0, 0.0], vec![0.0, 3.0], vec![2.0, 0.0]]);
        let aat = a.mul_mat(&at);
        assert_eq!(aat.to_dense(), vec![vec![5.0, 0.0], vec![0.0, 9.0]]);
        assert_eq!(aat.col_idx, vec![0, 1]);
    }

    #[test]
    fn extended_residual_survives_cancellation() {
        // the middle term vanishes below the rounding of the first in plain doubles
        let a = CsrMatrix {
            nrows: 1,
            ncols: 3,
            row_ptr: vec![0, 3],
            col_idx: vec![0, 1, 2],
            values: vec![1e16, 1.0, -1e16],
        };
        let x = [1.0; 3];
        let mut r = [0.0];
        a.residual(&x, &[0.0], &mut r);
        assert_eq!(r[0], 0.0);
        a.residual_extended(&x, &[0.0], &mut r);
        assert_eq!(r[0], -1.0);
    }

    #[test]
    fn mat_vec() {
        let a = sample();
        let mut y = vec![0.0; 2];
        a.mul_vec(&[1.0, 1.0, 1.0], &mut y);
        assert_eq!(y, vec![3.0, 3.0]);
        let mut r = vec![0.0; 2];
        a.residual(&[1.0, 1.0, 1.0], &[3.0, 4.0], &mut r);
        assert_eq!(r, vec![0.0, 1.0]);
        assert_eq!(a.get(0, 2), 2.0);
        assert_eq!(a.get(1, 0), 0.0);
    }
}
