//! Compressed sparse row matrices for the incidence structures.
//!
//! Every matrix in the model is either a 0/1 incidence matrix or a masked
//! weight matrix whose sparsity pattern is fixed by an incidence mask, so a
//! single CSR type with explicit values covers both.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicate entries are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &sorted {
            assert!(r < rows && c < cols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        CsrMatrix {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    /// 0/1 matrix from row-wise column lists.
    pub fn from_rows(cols: usize, row_entries: &[Vec<usize>]) -> Self {
        let triplets: Vec<(usize, usize, f64)> = row_entries
            .iter()
            .enumerate()
            .flat_map(|(r, cs)| cs.iter().map(move |&c| (r, c, 1.0)))
            .collect();
        Self::from_triplets(row_entries.len(), cols, &triplets)
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            rows: n,
            cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices of row `r`.
    pub fn row_indices(&self, r: usize) -> &[usize] {
        &self.indices[self.indptr[r]..self.indptr[r + 1]]
    }

    /// Position range of row `r` inside `indices()`/`values()`.
    pub fn row_range(&self, r: usize) -> std::ops::Range<usize> {
        self.indptr[r]..self.indptr[r + 1]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.row_range(r);
        match self.indices[range.clone()].binary_search(&c) {
            Ok(pos) => self.values[range.start + pos],
            Err(_) => 0.0,
        }
    }

    /// Position of entry `(r, c)` in the value array, if structurally present.
    pub fn position(&self, r: usize, c: usize) -> Option<usize> {
        let range = self.row_range(r);
        self.indices[range.clone()]
            .binary_search(&c)
            .ok()
            .map(|p| range.start + p)
    }

    /// `out = A x`
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        self.mul_vec_with(&self.values, x, out);
    }

    /// `out = A' x` where `A'` shares this pattern but carries `values`.
    pub fn mul_vec_with(&self, values: &[f64], x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        debug_assert_eq!(values.len(), self.nnz());
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += values[k] * x[self.indices[k]];
            }
            *o = acc;
        }
    }

    /// `out = Aᵀ x`
    pub fn tr_mul_vec(&self, x: &[f64], out: &mut [f64]) {
        self.tr_mul_vec_with(&self.values, x, out);
    }

    /// `out = A'ᵀ x` where `A'` shares this pattern but carries `values`.
    pub fn tr_mul_vec_with(&self, values: &[f64], x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            for k in self.indptr[r]..self.indptr[r + 1] {
                out[self.indices[k]] += values[k] * xr;
            }
        }
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            for k in self.row_range(r) {
                triplets.push((self.indices[k], r, self.values[k]));
            }
        }
        CsrMatrix::from_triplets(self.cols, self.rows, &triplets)
    }

    /// Row sums `A 1`.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|r| self.values[self.row_range(r)].iter().sum())
            .collect()
    }

    /// Column sums `1ᵀ A`.
    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        self.tr_mul_vec(&vec![1.0; self.rows], &mut out);
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.cols]; self.rows];
        for (r, row) in dense.iter_mut().enumerate() {
            for k in self.row_range(r) {
                row[self.indices[k]] = self.values[k];
            }
        }
        dense
    }

    /// `(row, col)` of every stored entry in storage order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.rows).flat_map(move |r| self.row_range(r).map(move |k| (r, self.indices[k])))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_merge_duplicates_and_sort() {
        let m = CsrMatrix::from_triplets(2, 3, &[(1, 2, 1.0), (0, 1, 2.0), (1, 2, 3.0)]);
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(1, 2), 4.0);
        assert_eq!(m.get(0, 1), 2.0);
        assert_eq!(m.get(0, 0), 0.0);
    }

    #[test]
    fn products_match_dense() {
        let m = CsrMatrix::from_triplets(3, 2, &[(0, 0, 1.0), (1, 1, 2.0), (2, 0, -1.0), (2, 1, 0.5)]);
        let mut out = vec![0.0; 3];
        m.mul_vec(&[2.0, 4.0], &mut out);
        assert_eq!(out, vec![2.0, 8.0, 0.0]);
        let mut out_t = vec![0.0; 2];
        m.tr_mul_vec(&[1.0, 1.0, 1.0], &mut out_t);
        assert_eq!(out_t, vec![0.0, 2.5]);
        assert_eq!(m.transpose().transpose(), m);
        assert_eq!(m.col_sums(), out_t);
    }
}
