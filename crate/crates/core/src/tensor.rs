//! Dense row-major `f64` tensors and the raw kernels shared by the autodiff
//! graph and the eager inference path.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} holds {} values, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; numel] }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; numel] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![], data: vec![value] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    /// Builds a matrix from nested rows; panics on ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let data = rows.iter().flatten().copied().collect();
        Tensor { shape: vec![rows.len(), cols], data }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Number of rows when viewed as a matrix over the last axis.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            _ => self.data.len() / self.cols().max(1),
        }
    }

    /// Size of the last axis (1 for scalars).
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn get2(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on a tensor with {} values", self.data.len());
        self.data[0]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::Shape(format!("cannot reshape {:?} to {:?}", self.shape, shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies rows `start..start + len` into a new matrix.
    pub fn slice_rows(&self, start: usize, len: usize) -> Tensor {
        let c = self.cols();
        Tensor {
            shape: vec![len, c],
            data: self.data[start * c..(start + len) * c].to_vec(),
        }
    }

    /// Stacks matrices with the same column count vertically.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
        let cols = parts.first().map_or(0, |t| t.cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols() != cols {
                return Err(Error::Shape(format!("concat of {} and {} columns", cols, p.cols())));
            }
            rows += p.rows();
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor { shape: vec![rows, cols], data })
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on different shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `c = a · b` for row-major `a: m×k`, `b: k×n`. `c` is overwritten.
pub fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    gemm_strided(m, k, n, a, (k as isize, 1), b, (n as isize, 1), 0.0, c);
}

/// `c = a · bᵀ` for `a: m×k`, `b: n×k`, accumulated into `c` with factor `beta`.
pub fn gemm_a_bt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
    gemm_strided(m, k, n, a, (k as isize, 1), b, (1, k as isize), beta, c);
}

/// `c = aᵀ · b` for `a: k×m`, `b: k×n`, accumulated into `c` with factor `beta`.
pub fn gemm_at_b(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
    gemm_strided(m, k, n, a, (1, m as isize), b, (n as isize, 1), beta, c);
}

#[allow(clippy::too_many_arguments)]
fn gemm_strided(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // SAFETY: the slices are at least as long as the strided views describe.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::Shape(format!("matmul {:?} x {:?}", a.shape, b.shape)));
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, &a.data, &b.data, &mut out);
    Ok(Tensor { shape: vec![m, n], data: out })
}

/// Numerically stable softmax of one slice, written into `out`.
pub fn softmax_into(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        sum += *o;
    }
    let inv = 1.0 / sum;
    out.iter_mut().for_each(|o| *o *= inv);
}

/// Log-softmax of one slice, written into `out`.
pub fn log_softmax_into(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v - lse;
    }
}

/// Softmax along the last axis.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(&x.shape);
    let c = x.cols();
    if c == 0 {
        return out;
    }
    for (src, dst) in x.data.chunks(c).zip(out.data.chunks_mut(c)) {
        softmax_into(src, dst);
    }
    out
}

pub fn log_softmax_rows(x: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(&x.shape);
    let c = x.cols();
    if c == 0 {
        return out;
    }
    for (src, dst) in x.data.chunks(c).zip(out.data.chunks_mut(c)) {
        log_softmax_into(src, dst);
    }
    out
}

/// Softmax along `axis` of an arbitrary-rank tensor.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.rank() {
        return Err(Error::Shape(format!("softmax axis {} on rank {}", axis, x.rank())));
    }
    if axis + 1 == x.rank() {
        return Ok(softmax_rows(x));
    }
    let len = x.shape[axis];
    let inner: usize = x.shape[axis + 1..].iter().product();
    let outer: usize = x.shape[..axis].iter().product();
    let mut out = Tensor::zeros(&x.shape);
    let mut buf_in = vec![0.0; len];
    let mut buf_out = vec![0.0; len];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            for j in 0..len {
                buf_in[j] = x.data[base + j * inner];
            }
            softmax_into(&buf_in, &mut buf_out);
            for j in 0..len {
                out.data[base + j * inner] = buf_out[j];
            }
        }
    }
    Ok(out)
}

/// Row-wise layer normalization. Returns the output together with the
/// normalized activations and per-row inverse standard deviations that the
/// backward pass needs.
pub fn layer_norm_rows(
    x: &Tensor,
    gain: &[f64],
    bias: &[f64],
    eps: f64,
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let c = x.cols();
    if gain.len() != c || bias.len() != c {
        return Err(Error::Shape(format!(
            "layer_norm over {} features with gain {} / bias {}",
            c,
            gain.len(),
            bias.len()
        )));
    }
    let rows = x.rows();
    let mut out = Tensor::zeros(&x.shape);
    let mut xhat = vec![0.0; x.numel()];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let src = &x.data[r * c..(r + 1) * c];
        let mean = src.iter().sum::<f64>() / c as f64;
        let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let denom = (var + eps).sqrt();
        let inv = if denom > 0.0 { 1.0 / denom } else { 0.0 };
        inv_std[r] = inv;
        for j in 0..c {
            let h = (src[j] - mean) * inv;
            xhat[r * c + j] = h;
            out.data[r * c + j] = h * gain[j] + bias[j];
        }
    }
    Ok((out, xhat, inv_std))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity_and_zero() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(matmul(&Tensor::eye(2), &a).unwrap(), a);
        let z = matmul(&Tensor::zeros(&[2, 3]), &Tensor::filled(&[3, 2], 7.5)).unwrap();
        assert_eq!(z, Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn matmul_hand_product() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0]]);
        let b = Tensor::from_rows(&[vec![3.0], vec![4.0]]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn transposed_gemms_agree_with_plain() {
        let a = Tensor::from_rows(&[vec![1.0, -2.0, 0.5], vec![3.0, 4.0, -1.0]]);
        let b = Tensor::from_rows(&[vec![2.0, 1.0, 0.0], vec![-1.0, 3.0, 2.0]]);
        // a · bᵀ
        let mut c = vec![0.0; 4];
        gemm_a_bt(2, 3, 2, a.data(), b.data(), 0.0, &mut c);
        for i in 0..2 {
            for j in 0..2 {
                let want: f64 = (0..3).map(|t| a.get2(i, t) * b.get2(j, t)).sum();
                assert_eq!(c[i * 2 + j], want);
            }
        }
        // aᵀ · b
        let mut d = vec![0.0; 9];
        gemm_at_b(3, 2, 3, a.data(), b.data(), 0.0, &mut d);
        for i in 0..3 {
            for j in 0..3 {
                let want: f64 = (0..2).map(|t| a.get2(t, i) * b.get2(t, j)).sum();
                assert_eq!(d[i * 3 + j], want);
            }
        }
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&Tensor::vector(vec![0.0, 0.0]));
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax_rows(&Tensor::vector(vec![1000.0, 1000.0]));
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax_rows(&Tensor::vector(vec![1f64.ln(), 3f64.ln()]));
        assert!((s.data()[0] - 0.25).abs() < 1e-15);
        assert!((s.data()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_inner_axis() {
        let x = Tensor::from_rows(&[vec![0.0, 1.0], vec![0.0, 1.0]]);
        let s = softmax(&x, 0).unwrap();
        assert!(s.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        assert!(softmax(&x, 2).is_err());
    }

    #[test]
    fn layer_norm_examples() {
        let x = Tensor::from_rows(&[vec![1.0, 3.0]]);
        let (y, _, _) = layer_norm_rows(&x, &[1.0, 1.0], &[0.0, 0.0], 0.0).unwrap();
        assert_eq!(y.data(), &[-1.0, 1.0]);

        let c = Tensor::from_rows(&[vec![4.0, 4.0, 4.0]]);
        let (y, _, _) = layer_norm_rows(&c, &[1.0; 3], &[0.0; 3], 1e-5).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.0]);

        let (y, _, _) = layer_norm_rows(&x, &[0.0, 0.0], &[0.25, -2.0], 1e-5).unwrap();
        assert_eq!(y.data(), &[0.25, -2.0]);
    }
}
