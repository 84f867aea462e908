use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

/// Compressed sparse row matrix. Column indices are sorted within each row
/// and no explicit zeros are stored.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix<T> {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            indptr: vec![0; rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![T::one(); n],
        }
    }

    /// Builds from `(row, col, value)` triplets. Duplicates are summed and
    /// entries that end up zero are dropped.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, T)]) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, T)> = Vec::with_capacity(triplets.len());
        for &(i, j, v) in triplets {
            if i >= rows || j >= cols {
                return Err(Error::OutOfRange(i, j, rows.max(cols)));
            }
            sorted.push((i, j, v));
        }
        sorted.sort_by_key(|a| (a.0, a.1));

        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<T> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in sorted {
            if last == Some((i, j)) {
                *values.last_mut().expect("previous entry") += v;
                continue;
            }
            if let Some(prev) = values.last() {
                if *prev == T::zero() {
                    let (pi, _) = last.expect("previous entry");
                    indices.pop();
                    values.pop();
                    indptr[pi + 1] -= 1;
                }
            }
            indices.push(j);
            values.push(v);
            indptr[i + 1] += 1;
            last = Some((i, j));
        }
        if let (Some(&prev), Some((pi, _))) = (values.last(), last) {
            if prev == T::zero() {
                indices.pop();
                values.pop();
                indptr[pi + 1] -= 1;
            }
        }
        for i in 0..rows {
            indptr[i + 1] += indptr[i];
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn from_dense(dense: &Tensor<T>) -> Self {
        let mut triplets = Vec::new();
        for i in 0..dense.rows() {
            for (j, &v) in dense.row(i).iter().enumerate() {
                if v != T::zero() {
                    triplets.push((i, j, v));
                }
            }
        }
        Self::from_triplets(dense.rows(), dense.cols(), &triplets).expect("indices in range")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Number of stored (nonzero) entries.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(col, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.indptr[i + 1] - self.indptr[i]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let span = self.indptr[i]..self.indptr[i + 1];
        match self.indices[span.clone()].binary_search(&j) {
            Ok(p) => self.values[span.start + p],
            Err(_) => T::zero(),
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.rows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn to_dense(&self) -> Tensor<T> {
        let mut out = Tensor::zeros(self.rows, self.cols);
        for (i, j, v) in self.triplets() {
            out[(i, j)] = v;
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let t: Vec<_> = self.triplets().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.cols, self.rows, &t).expect("transpose stays in range")
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && self.triplets().all(|(i, j, v)| self.get(j, i) == v)
    }

    /// `self · x`.
    pub fn matmul_dense(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if self.cols != x.rows() {
            return Err(Error::dim(
                "sparse_dense_matmul",
                format!("{:?} x {:?}", self.shape(), x.shape()),
            ));
        }
        let mut out = Tensor::zeros(self.rows, x.cols());
        for i in 0..self.rows {
            let o = out.row_mut(i);
            for (j, v) in self.row(i) {
                for (o, &xj) in o.iter_mut().zip(x.row(j)) {
                    *o += v * xj;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · g` by scattering rows; used for the backward pass of
    /// [`CsrMatrix::matmul_dense`].
    pub fn t_matmul_dense(&self, g: &Tensor<T>) -> Result<Tensor<T>> {
        if self.rows != g.rows() {
            return Err(Error::dim(
                "sparse_t_dense_matmul",
                format!("{:?}ᵀ x {:?}", self.shape(), g.shape()),
            ));
        }
        let mut out = Tensor::zeros(self.cols, g.cols());
        for i in 0..self.rows {
            let gi = g.row(i);
            for (j, v) in self.row(i) {
                for (o, &gv) in out.row_mut(j).iter_mut().zip(gi) {
                    *o += v * gv;
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates_and_drop_zeros() {
        let m = CsrMatrix::<f64>::from_triplets(
            2,
            3,
            &[
                (1, 2, 1.0),
                (0, 1, 2.0),
                (1, 2, 3.0),
                (0, 0, 1.0),
                (0, 0, -1.0),
            ],
        )
        .unwrap();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(1, 2), 4.0);
        assert_eq!(m.get(0, 0), 0.0);
        assert_eq!(m.row(0).collect::<Vec<_>>(), vec![(1, 2.0)]);
    }

    #[test]
    fn out_of_range_triplet_rejected() {
        assert!(CsrMatrix::<f64>::from_triplets(2, 2, &[(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn identity_and_zero_products() {
        let x = Tensor::<f64>::from_fn(4, 3, |i, j| (i * 3 + j) as f64);
        assert_eq!(CsrMatrix::identity(4).matmul_dense(&x).unwrap(), x);
        assert_eq!(
            CsrMatrix::zeros(4, 4).matmul_dense(&x).unwrap(),
            Tensor::zeros(4, 3)
        );
        assert!(CsrMatrix::<f64>::identity(3).matmul_dense(&x).is_err());
    }

    #[test]
    fn zero_matrix_has_no_nonzeros() {
        assert_eq!(CsrMatrix::<f64>::zeros(5, 7).nnz(), 0);
    }
}
