/// Residual vector with its Jacobian in compressed sparse row form.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResidualBlock {
    pub cols: usize,
    pub residuals: Vec<f64>,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl ResidualBlock {
    pub fn new(cols: usize) -> Self {
        ResidualBlock {
            cols,
            residuals: Vec::new(),
            row_ptr: vec![0],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.residuals.len()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn push_row(&mut self, residual: f64, entries: impl IntoIterator<Item = (usize, f64)>) {
        for (c, v) in entries {
            debug_assert!(c < self.cols);
            self.col_idx.push(c);
            self.values.push(v);
        }
        self.residuals.push(residual);
        self.row_ptr.push(self.col_idx.len());
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (s, e) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.col_idx[s..e].iter().copied().zip(self.values[s..e].iter().copied())
    }

    pub fn sum_squares(&self) -> f64 {
        self.residuals.iter().map(|r| r * r).sum()
    }

    /// Appends the rows of `other` (same column count).
    pub fn append(&mut self, other: &ResidualBlock) {
        assert_eq!(self.cols, other.cols);
        let offset = self.col_idx.len();
        self.residuals.extend_from_slice(&other.residuals);
        self.col_idx.extend_from_slice(&other.col_idx);
        self.values.extend_from_slice(&other.values);
        self.row_ptr.extend(other.row_ptr[1..].iter().map(|p| p + offset));
    }

    /// `J v`
    pub fn mul(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows()).map(|r| self.row(r).map(|(c, x)| x * v[c]).sum()).collect()
    }

    /// `Jᵀ u`
    pub fn tmul(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (r, &ur) in u.iter().enumerate() {
            for (c, x) in self.row(r) {
                out[c] += x * ur;
            }
        }
        out
    }

    /// Diagonal of `JᵀJ`.
    pub fn normal_diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.cols];
        for (c, x) in self.col_idx.iter().zip(&self.values) {
            d[*c] += x * x;
        }
        d
    }

    /// Gradient of half the sum of squares, `Jᵀ r`.
    pub fn gradient(&self) -> Vec<f64> {
        self.tmul(&self.residuals)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.rows(), self.cols);
        for r in 0..self.rows() {
            for (c, v) in self.row(r) {
                m[(r, c)] += v;
            }
        }
        m
    }
}
