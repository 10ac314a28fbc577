use serde::{Deserialize, Serialize};

/// `K x n` block of per-node parameters, stored row-major so that node `k`'s
/// parameter vector is the contiguous slice `row(k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ParamBlock {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        ParamBlock {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "block data length must be rows * cols");
        ParamBlock { rows, cols, data }
    }

    /// Builds a block from equal-length rows. Returns `None` on ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Option<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return None;
        }
        Some(ParamBlock {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.cols..(k + 1) * self.cols]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.cols..(k + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols.max(1)).take(self.rows).map(<[f64]>::to_vec).collect()
    }

    pub fn column_into(&self, j: usize, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate().take(self.rows) {
            *o = self.data[k * self.cols + j];
        }
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.column_into(j, &mut out);
        out
    }

    pub fn set_column(&mut self, j: usize, values: &[f64]) {
        for (k, &v) in values.iter().enumerate().take(self.rows) {
            self.data[k * self.cols + j] = v;
        }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    /// Euclidean distance between two blocks of equal shape.
    pub fn distance(&self, other: &ParamBlock) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Mean row `(1/K) sum_k theta_k`.
    pub fn mean_row(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.cols];
        for k in 0..self.rows {
            for (acc, v) in m.iter_mut().zip(self.row(k)) {
                *acc += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= self.rows.max(1) as f64);
        m
    }

    /// `max_k ||theta_k - mean||_2`
    pub fn spread(&self) -> f64 {
        let mean = self.mean_row();
        (0..self.rows)
            .map(|k| {
                self.row(k)
                    .iter()
                    .zip(&mean)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_and_column_access() {
        let mut b = ParamBlock::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(b.row(1), &[3.0, 4.0]);
        assert_eq!(b.column(1), vec![2.0, 4.0, 6.0]);
        b.set_column(0, &[0.0, 0.0, 0.0]);
        assert_eq!(b.as_slice(), &[0.0, 2.0, 0.0, 4.0, 0.0, 6.0]);
        assert_eq!(b.mean_row(), vec![0.0, 4.0]);
        assert!((b.spread() - 2.0).abs() < 1e-15);
        assert!(ParamBlock::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_none());
    }
}
