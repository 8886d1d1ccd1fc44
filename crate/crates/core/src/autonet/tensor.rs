use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
///
/// Every tensor handed out by a public constructor holds only finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::dims(format!("extents must be positive, got {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dims(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("value at flat index {pos} is {}", data[pos])));
        }
        Ok(Self { shape, data })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::Empty("tensor needs at least one row".into()));
        };
        let cols = first.len();
        if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
            return Err(Error::dims(format!(
                "row {bad} has width {}, expected {cols}",
                rows[bad].len()
            )));
        }
        Self::matrix(rows.len(), cols, rows.concat())
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(vec![1, 1], vec![value])
    }

    /// Internal constructor for values produced by the tape, which checks
    /// finiteness at its own boundaries.
    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Self {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading extent. For a matrix, the row count.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Product of all trailing extents. For a matrix, the column count.
    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let c = self.cols();
        &self.data[row * c..(row + 1) * c]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols() != other.rows() {
            return Err(Error::dims(format!("matmul {:?} x {:?}", self.shape, other.shape)));
        }
        let out = matmul(&self.data, self.rows(), self.cols(), &other.data, other.cols());
        Tensor::new(vec![self.rows(), other.cols()], out)
    }
}

/// `a[n×m] · b[m×p]`, i-k-j loop order.
pub(crate) fn matmul(a: &[f64], n: usize, m: usize, b: &[f64], p: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * p];
    for i in 0..n {
        let out_row = &mut out[i * p..(i + 1) * p];
        for k in 0..m {
            let aik = a[i * m + k];
            if aik == 0.0 {
                continue;
            }
            let b_row = &b[k * p..(k + 1) * p];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    }
    out
}

/// `a[n×m] · b[p×m]ᵀ`.
pub(crate) fn matmul_bt(a: &[f64], n: usize, m: usize, b: &[f64], p: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * p];
    for i in 0..n {
        let a_row = &a[i * m..(i + 1) * m];
        for j in 0..p {
            let b_row = &b[j * m..(j + 1) * m];
            out[i * p + j] = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `a[n×m]ᵀ · b[n×p]`.
pub(crate) fn matmul_at(a: &[f64], n: usize, m: usize, b: &[f64], p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    for i in 0..n {
        let b_row = &b[i * p..(i + 1) * p];
        for k in 0..m {
            let aik = a[i * m + k];
            if aik == 0.0 {
                continue;
            }
            let out_row = &mut out[k * p..(k + 1) * p];
            for (o, &bij) in out_row.iter_mut().zip(b_row) {
                *o += aik * bij;
            }
        }
    }
    out
}
