use nalgebra::DMatrix;

use super::StratGraph;
use crate::block::ParamBlock;

/// Weighted graph Laplacian in compressed sparse row layout.
///
/// Every row stores its diagonal entry `sum_k W_ik` followed by the
/// off-diagonal entries `-W_ij`, with column indices sorted.
#[derive(Clone, Debug, PartialEq)]
pub struct LaplacianMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    diag: Vec<f64>,
}

impl LaplacianMatrix {
    pub fn from_graph(g: &StratGraph) -> Self {
        let k = g.num_nodes();
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); k];
        let mut diag = vec![0.0; k];
        for e in g.edges() {
            rows[e.i].push((e.j, -e.weight));
            rows[e.j].push((e.i, -e.weight));
            diag[e.i] += e.weight;
            diag[e.j] += e.weight;
        }
        let mut row_ptr = Vec::with_capacity(k + 1);
        let mut col_idx = Vec::with_capacity(k + 2 * g.num_edges());
        let mut values = Vec::with_capacity(k + 2 * g.num_edges());
        row_ptr.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.push((i, diag[i]));
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        LaplacianMatrix {
            dim: k,
            row_ptr,
            col_idx,
            values,
            diag,
        }
    }

    /// Laplacian of the edgeless graph on `k` nodes.
    pub fn zeros(k: usize) -> Self {
        LaplacianMatrix {
            dim: k,
            row_ptr: (0..=k).collect(),
            col_idx: (0..k).collect(),
            values: vec![0.0; k],
            diag: vec![0.0; k],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn diagonal(&self, i: usize) -> f64 {
        self.diag[i]
    }

    pub fn diagonal_slice(&self) -> &[f64] {
        &self.diag
    }

    /// Column indices and values of row `i`, diagonal included.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    /// `out = (L + shift * I) x`
    pub fn apply_shifted(&self, shift: f64, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.dim);
        for (i, o) in out.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            let mut acc = shift * x[i];
            for (&c, &v) in cols.iter().zip(vals) {
                acc += v * x[c];
            }
            *o = acc;
        }
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.apply_shifted(0.0, x, out)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                m[(i, c)] = v;
            }
        }
        m
    }

    /// `(1/2) theta^T (I (x) L) theta` for a `K x n` block, column by column.
    pub fn quadratic_form(&self, theta: &ParamBlock) -> f64 {
        assert_eq!(theta.rows(), self.dim, "parameter rows must match Laplacian dimension");
        let mut col = vec![0.0; self.dim];
        let mut lx = vec![0.0; self.dim];
        let mut total = 0.0;
        for j in 0..theta.cols() {
            theta.column_into(j, &mut col);
            self.apply(&col, &mut lx);
            total += col.iter().zip(&lx).map(|(a, b)| a * b).sum::<f64>();
        }
        0.5 * total
    }
}
