//! Dense row-major tensors and the raw kernels behind every tape op.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidTensor(format!(
                "shape {shape:?} has a zero extent"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidTensor(format!(
                "shape {shape:?} needs {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
        }
    }

    /// Builds a matrix from nested rows; all rows must share one length.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::InvalidTensor("ragged rows".into()));
        }
        Self::new(vec![r, c], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    /// Number of rows when viewed as a matrix (all leading axes folded).
    pub fn rows(&self) -> usize {
        self.numel() / self.cols()
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().expect("tensor has at least one axis")
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols() + j]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|x| U::from_f64_lossy(x.to_f64_lossless()))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn ensure_finite(&self, op: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { op: op.to_string() })
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64_lossless() - b.to_f64_lossless()).abs())
            .fold(0.0, f64::max)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    fn expect_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.rank() != 2 {
            return Err(Error::shape(op, &self.shape, &[]));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    /// `self · other` for matrices.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.expect_matrix("matmul")?;
        let (k2, n) = other.expect_matrix("matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", &self.shape, &other.shape));
        }
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let out_row = &mut out[i * n..(i + 1) * n];
            for (p, &a) in self.data[i * k..(i + 1) * k].iter().enumerate() {
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    /// `self · otherᵀ`; `other` is `n × k`.
    pub fn matmul_t(&self, other: &Self) -> Result<Self> {
        let (_, k) = self.expect_matrix("matmul_t")?;
        let (_, k2) = other.expect_matrix("matmul_t")?;
        if k != k2 {
            return Err(Error::shape("matmul_t", &self.shape, &other.shape));
        }
        self.matmul(&other.transpose()?)
    }

    /// `selfᵀ · other`; `self` is `k × m`, `other` is `k × n`.
    pub fn t_matmul(&self, other: &Self) -> Result<Self> {
        let (k, m) = self.expect_matrix("t_matmul")?;
        let (k2, n) = other.expect_matrix("t_matmul")?;
        if k != k2 {
            return Err(Error::shape("t_matmul", &self.shape, &other.shape));
        }
        let mut out = vec![T::zero(); m * n];
        for p in 0..k {
            let b_row = &other.data[p * n..(p + 1) * n];
            for (i, &a) in self.data[p * m..(p + 1) * m].iter().enumerate() {
                let out_row = &mut out[i * n..(i + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    pub fn transpose(&self) -> Result<Self> {
        let (m, n) = self.expect_matrix("transpose")?;
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor {
            shape: vec![n, m],
            data: out,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape("add", &self.shape, &other.shape));
        }
        Ok(self.zip_map(other, |a, b| a + b))
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&a| f(a)).collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|a| a * s)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape("add_assign", &self.shape, &other.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Softmax along `axis`, subtracting the slice maximum first.
    pub fn softmax(&self, axis: usize) -> Result<Self> {
        if axis >= self.rank() {
            return Err(Error::InvalidTensor(format!(
                "softmax axis {axis} out of range for shape {:?}",
                self.shape
            )));
        }
        let extent = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let outer: usize = self.shape[..axis].iter().product();
        let mut out = self.data.clone();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * extent * inner + i;
                let idx = |e: usize| base + e * inner;
                let max = (0..extent)
                    .map(|e| self.data[idx(e)])
                    .fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for e in 0..extent {
                    let v = (self.data[idx(e)] - max).exp();
                    out[idx(e)] = v;
                    total += v;
                }
                for e in 0..extent {
                    out[idx(e)] /= total;
                }
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: out,
        })
    }

    /// Row softmax of a matrix where `mask` marks the admissible entries.
    /// Masked entries get probability exactly zero; a fully masked row is all zeros.
    pub fn softmax_rows_masked(&self, mask: Option<&Mask>) -> Result<Self> {
        let (m, n) = self.expect_matrix("softmax")?;
        if let Some(mask) = mask {
            if mask.rows != m || mask.cols != n {
                return Err(Error::shape("softmax mask", &self.shape, &[mask.rows, mask.cols]));
            }
        }
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &self.data[i * n..(i + 1) * n];
            let allowed = |j: usize| mask.is_none_or(|mk| mk.allowed(i, j));
            let mut max = T::neg_infinity();
            for (j, &v) in row.iter().enumerate() {
                if allowed(j) && v > max {
                    max = v;
                }
            }
            if max == T::neg_infinity() {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            let mut total = T::zero();
            for (j, &v) in row.iter().enumerate() {
                if allowed(j) {
                    let e = (v - max).exp();
                    out_row[j] = e;
                    total += e;
                }
            }
            for o in out_row.iter_mut() {
                *o /= total;
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: out,
        })
    }

    /// Per-row layer normalization. Returns the output plus per-row mean and
    /// reciprocal standard deviation (population variance).
    pub fn layer_norm(&self, gain: &Self, bias: &Self, eps: T) -> Result<(Self, Vec<T>, Vec<T>)> {
        let c = self.cols();
        if gain.numel() != c || bias.numel() != c {
            return Err(Error::shape("layer_norm", &self.shape, gain.shape()));
        }
        let r = self.rows();
        let n = T::from_usize(c).expect("extent fits scalar");
        let mut out = vec![T::zero(); self.numel()];
        let mut means = Vec::with_capacity(r);
        let mut rstds = Vec::with_capacity(r);
        for i in 0..r {
            let row = &self.data[i * c..(i + 1) * c];
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
            let rstd = T::one() / (var + eps).sqrt();
            for j in 0..c {
                out[i * c + j] = (row[j] - mean) * rstd * gain.data[j] + bias.data[j];
            }
            means.push(mean);
            rstds.push(rstd);
        }
        Ok((
            Tensor {
                shape: self.shape.clone(),
                data: out,
            },
            means,
            rstds,
        ))
    }
}

/// Boolean admissibility matrix for attention scores.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl Mask {
    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut allowed = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                allowed.push(f(i, j));
            }
        }
        Mask {
            rows,
            cols,
            allowed,
        }
    }

    /// Lower-triangular mask: query `i` sees keys `0..=i`.
    pub fn causal(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| j <= i)
    }

    /// Every query sees exactly the keys flagged as valid.
    pub fn key_padding(rows: usize, key_valid: &[bool]) -> Self {
        Self::from_fn(rows, key_valid.len(), |_, j| key_valid[j])
    }

    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.cols + j]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.at(i, p) * b.at(p, j);
                }
                out[i * n + j] = s;
            }
        }
        out
    }

    #[test]
    fn identity_matmul() {
        let eye = Tensor::<f64>::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let m = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(eye.matmul(&m).unwrap(), m);
    }

    #[test]
    fn basis_selection() {
        let a = Tensor::<f64>::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![5.0], vec![7.0]]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[5.0]);
    }

    #[test]
    fn random_matmul_matches_triple_loop() {
        let a = Tensor::<f64>::from_fn(&[3, 4], |i| ((i * 7 + 3) % 11) as f64 / 3.0 - 1.5);
        let b = Tensor::<f64>::from_fn(&[4, 2], |i| ((i * 5 + 1) % 13) as f64 / 4.0 - 1.0);
        let c = a.matmul(&b).unwrap();
        for (x, y) in c.data().iter().zip(naive_matmul(&a, &b)) {
            assert!((x - y).abs() < 1e-12);
        }
        let ct = a.matmul_t(&b.transpose().unwrap()).unwrap();
        assert_eq!(c, ct);
        let tm = a.transpose().unwrap().t_matmul(&b).unwrap();
        assert_eq!(c, tm);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[2, 3]);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let x = Tensor::<f64>::new(vec![3], vec![0.0; 3]).unwrap();
        for v in x.softmax(0).unwrap().data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let y = Tensor::<f32>::new(vec![2], vec![1000.0, 0.0]).unwrap().softmax(0).unwrap();
        assert_eq!(y.data()[0], 1.0);
        assert_eq!(y.data()[1], 0.0);
    }

    #[test]
    fn softmax_matches_direct_exponentials() {
        let x = Tensor::<f64>::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let total: f64 = (1..=3).map(|i| (i as f64).exp()).sum();
        for (i, v) in x.softmax(0).unwrap().data().iter().enumerate() {
            assert!((v - ((i + 1) as f64).exp() / total).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_along_first_axis() {
        let x = Tensor::<f64>::from_rows(&[vec![0.0, 5.0], vec![0.0, -5.0]]).unwrap();
        let s = x.softmax(0).unwrap();
        assert!((s.at(0, 0) - 0.5).abs() < 1e-15);
        assert!((s.at(0, 1) + s.at(1, 1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn masked_softmax_zeroes_masked_entries() {
        let x = Tensor::<f64>::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let s = x.softmax_rows_masked(Some(&Mask::causal(2).extend_cols(3))).unwrap();
        assert_eq!(s.at(0, 0), 1.0);
        assert_eq!(s.at(0, 1), 0.0);
        assert!((s.at(1, 0) + s.at(1, 1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn layer_norm_examples() {
        let x = Tensor::<f64>::from_rows(&[vec![1.0, 3.0], vec![2.0, 2.0]]).unwrap();
        let g = Tensor::ones(&[2]);
        let b = Tensor::new(vec![2], vec![0.5, -0.5]).unwrap();
        let (y, _, _) = x.layer_norm(&g, &Tensor::zeros(&[2]), 1e-5).unwrap();
        // population variance of [1,3] is 1
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y.at(0, 0) + expect).abs() < 1e-12);
        assert!((y.at(0, 1) - expect).abs() < 1e-12);
        let (z, _, _) = x.layer_norm(&g, &b, 1e-5).unwrap();
        assert_eq!(z.row(1), &[0.5, -0.5]);
        assert!((z.row(0).iter().sum::<f64>() / 2.0).abs() < 1e-12);
    }

    impl Mask {
        fn extend_cols(&self, cols: usize) -> Mask {
            Mask::from_fn(self.rows, cols, |i, j| j < self.cols && self.allowed(i, j))
        }
    }
}
