//! Compressed sparse row operator.

use crate::error::{Error, Result};

/// Square sparse matrix in CSR layout. Column indices are sorted within each
/// row and every row stores its diagonal entry.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    n: usize,
    row_offsets: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
    diag_pos: Vec<usize>,
}

impl SparseOperator {
    /// Builds from per-row `(column, value)` lists. Duplicate columns are
    /// summed; a missing diagonal is stored as an explicit zero.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let n = rows.len();
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut values = Vec::new();
        let mut diag_pos = Vec::with_capacity(n);
        row_offsets.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.push((i, 0.0));
            row.sort_by_key(|&(c, _)| c);
            let start = cols.len();
            for (c, v) in row {
                if c >= n {
                    return Err(Error::Usage(format!("column {c} out of range in row {i}")));
                }
                if cols.len() > start && *cols.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    values.push(v);
                }
            }
            let d = start + cols[start..].binary_search(&i).unwrap();
            diag_pos.push(d);
            row_offsets.push(cols.len());
        }
        Ok(Self {
            n,
            row_offsets,
            cols,
            values,
            diag_pos,
        })
    }

    /// Builds from raw CSR arrays that are already sorted, duplicate-free and
    /// contain every diagonal.
    pub(crate) fn from_csr_unchecked(
        row_offsets: Vec<usize>,
        cols: Vec<usize>,
        values: Vec<f64>,
    ) -> Self {
        let n = row_offsets.len() - 1;
        let diag_pos = (0..n)
            .map(|i| {
                let (s, e) = (row_offsets[i], row_offsets[i + 1]);
                s + cols[s..e].binary_search(&i).expect("missing diagonal")
            })
            .collect();
        Self {
            n,
            row_offsets,
            cols,
            values,
            diag_pos,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let n = d.len();
        Self {
            n,
            row_offsets: (0..=n).collect(),
            cols: (0..n).collect(),
            values: d.to_vec(),
            diag_pos: (0..n).collect(),
        }
    }

    pub fn from_dense(a: &[Vec<f64>]) -> Self {
        let rows = a
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(j, v)| (j, *v))
                    .collect()
            })
            .collect();
        Self::from_rows(rows).expect("dense input is square")
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.row_offsets[i], self.row_offsets[i + 1]);
        (&self.cols[s..e], &self.values[s..e])
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.values[self.diag_pos[i]]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.diag_pos.iter().map(|&p| self.values[p]).collect()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (c, v) = self.row(i);
        c.binary_search(&j).map_or(0.0, |k| v[k])
    }

    pub(crate) fn add_to_diagonal(&mut self, extra: &[f64]) {
        for (&p, e) in self.diag_pos.iter().zip(extra) {
            self.values[p] += e;
        }
    }

    /// `y = A x`
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for (i, yi) in y.iter_mut().enumerate() {
            let (s, e) = (self.row_offsets[i], self.row_offsets[i + 1]);
            let mut acc = 0.0;
            for k in s..e {
                acc += self.values[k] * x[self.cols[k]];
            }
            *yi = acc;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    /// `r = b - A x`
    pub fn residual(&self, b: &[f64], x: &[f64], r: &mut [f64]) {
        for (i, ri) in r.iter_mut().enumerate() {
            let (s, e) = (self.row_offsets[i], self.row_offsets[i + 1]);
            let mut acc = b[i];
            for k in s..e {
                acc -= self.values[k] * x[self.cols[k]];
            }
            *ri = acc;
        }
    }

    /// Maximum absolute row sum.
    pub fn inf_norm(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row(i).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Largest `|a_ij - a_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut worst = 0.0f64;
        for i in 0..self.n {
            let (c, v) = self.row(i);
            for (&j, &aij) in c.iter().zip(v) {
                worst = worst.max((aij - self.get(j, i)).abs());
            }
        }
        if scale > 0.0 {
            worst / scale
        } else {
            0.0
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; self.n]; self.n];
        for (i, row) in a.iter_mut().enumerate() {
            let (c, v) = self.row(i);
            for (&j, &x) in c.iter().zip(v) {
                row[j] = x;
            }
        }
        a
    }
}
