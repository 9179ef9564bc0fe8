//! Dense row-major `f64` tensors and the forward kernels used by the tape.

use std::fmt;

use crate::error::{MtmdError, Result};

/// Guard used for every norm or denominator that could vanish.
pub const EPS: f64 = 1e-12;

/// Negative slope of the leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Row-major dense tensor of `f64`.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl Tensor {
    /// Builds a tensor from external input, rejecting inconsistent shapes and
    /// non-finite entries.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(MtmdError::shape("Tensor::new", &shape, &[data.len()]));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(MtmdError::Domain(format!(
                "non-finite entry {} at flat index {pos}",
                data[pos]
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// Internal constructor for kernel outputs; shape consistency is asserted.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor::from_parts(shape.to_vec(), vec![0.0; n])
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::from_parts(vec![], vec![value])
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![data.len()], data)
    }

    /// Matrix from row slices. All rows must share one length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(MtmdError::shape("Tensor::from_rows", &[cols], &[bad.len()]));
        }
        let data = rows.iter().flatten().copied().collect();
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(MtmdError::shape("dims2", other, &[0, 0])),
        }
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn get2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(MtmdError::shape("reshape", &self.shape, &shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert_eq!(self.shape, other.shape);
        Tensor::from_parts(
            self.shape.clone(),
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute elementwise difference; shapes must agree.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor::from_parts(vec![c, r], out))
    }
}

/// Standard matrix product of `[m×k]` by `[k×n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2().map_err(|_| MtmdError::shape("matmul", a.shape(), b.shape()))?;
    let (k2, n) = b.dims2().map_err(|_| MtmdError::shape("matmul", a.shape(), b.shape()))?;
    if k != k2 {
        return Err(MtmdError::shape("matmul", a.shape(), b.shape()));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a.data[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `a·b / (max(‖a‖,eps)·max(‖b‖,eps))`.
pub fn cosine_similarity(a: &[f64], b: &[f64], eps: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(MtmdError::shape("cosine_similarity", &[a.len()], &[b.len()]));
    }
    Ok(dot(a, b) / (norm(a).max(eps) * norm(b).max(eps)))
}

/// Pairwise row cosine similarities of `[n×l]` and `[m×l]`, giving `[n×m]`.
pub fn cosine_matrix(a: &Tensor, b: &Tensor, eps: f64) -> Result<Tensor> {
    let (n, l) = a.dims2()?;
    let (m, l2) = b.dims2()?;
    if l != l2 {
        return Err(MtmdError::shape("cosine_matrix", a.shape(), b.shape()));
    }
    let na: Vec<f64> = (0..n).map(|i| norm(a.row(i)).max(eps)).collect();
    let nb: Vec<f64> = (0..m).map(|j| norm(b.row(j)).max(eps)).collect();
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[i * m + j] = dot(a.row(i), b.row(j)) / (na[i] * nb[j]);
        }
    }
    Ok(Tensor::from_parts(vec![n, m], out))
}

/// Max-subtracted softmax along `axis` of a rank-1 or rank-2 tensor.
pub fn softmax_over_axis(x: &Tensor, axis: usize) -> Result<Tensor> {
    let (rows, cols) = match x.shape() {
        [n] => (1, *n),
        [r, c] => (*r, *c),
        other => return Err(MtmdError::shape("softmax_over_axis", other, &[0, 0])),
    };
    if axis >= x.rank().max(1) {
        return Err(MtmdError::Contract(format!(
            "softmax axis {axis} out of range for shape {:?}",
            x.shape()
        )));
    }
    let along_cols = x.rank() == 1 || axis == 1;
    let mut out = x.data.clone();
    let (outer, inner, stride_outer, stride_inner) = if along_cols {
        (rows, cols, cols, 1)
    } else {
        (cols, rows, 1, cols)
    };
    for o in 0..outer {
        let idx = |i: usize| o * stride_outer + i * stride_inner;
        let max = (0..inner).map(|i| out[idx(i)]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for i in 0..inner {
            let e = (out[idx(i)] - max).exp();
            out[idx(i)] = e;
            total += e;
        }
        for i in 0..inner {
            out[idx(i)] /= total;
        }
    }
    Ok(Tensor::from_parts(x.shape.clone(), out))
}

/// Row-wise softmax restricted to entries where `mask` is set; others are 0.
pub fn masked_softmax_rows(x: &Tensor, mask: &[bool]) -> Result<Tensor> {
    let (rows, cols) = x.dims2()?;
    if mask.len() != rows * cols {
        return Err(MtmdError::shape("masked_softmax_rows", x.shape(), &[mask.len()]));
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let slots: Vec<usize> = (0..cols).filter(|&c| mask[r * cols + c]).collect();
        if slots.is_empty() {
            return Err(MtmdError::Contract(format!("row {r} has an empty support set")));
        }
        let max = slots
            .iter()
            .map(|&c| x.data[r * cols + c])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for &c in &slots {
            let e = (x.data[r * cols + c] - max).exp();
            out[r * cols + c] = e;
            total += e;
        }
        for &c in &slots {
            out[r * cols + c] /= total;
        }
    }
    Ok(Tensor::from_parts(x.shape.clone(), out))
}

pub fn leaky_relu_scalar(v: f64, slope: f64) -> f64 {
    if v >= 0.0 {
        v
    } else {
        slope * v
    }
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    x.map(|v| leaky_relu_scalar(v, slope))
}

/// Divides each row by `max(‖row‖, eps)`.
pub fn l2_normalize_rows(m: &Tensor, eps: f64) -> Result<Tensor> {
    let (rows, _) = m.dims2()?;
    let mut out = m.clone();
    for r in 0..rows {
        let row = out.row_mut(r);
        let n = norm(row).max(eps);
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    Ok(out)
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_cases() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matmul(&Tensor::identity(2), &a).unwrap(), a);
        let z = matmul(&m(&[&[1.0, 0.0]]), &m(&[&[0.0], &[5.0]])).unwrap();
        assert_eq!(z.data(), &[0.0]);
        let p = matmul(&a, &m(&[&[5.0], &[6.0]])).unwrap();
        assert_eq!(p.shape(), &[2, 1]);
        assert_eq!(p.data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn rejects_non_finite_input() {
        assert!(Tensor::new(vec![2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(vec![3], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn cosine_cases() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0], EPS).unwrap(), 0.0);
        assert!((cosine_similarity(&[2.0, 2.0], &[1.0, 1.0], EPS).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine_similarity(&[1.0, 2.0], &[2.0, 1.0], EPS).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 1.0], EPS).unwrap(), 0.0);
    }

    #[test]
    fn softmax_cases() {
        let s = softmax_over_axis(&Tensor::vector(vec![0.0, 0.0]).unwrap(), 0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax_over_axis(&Tensor::vector(vec![2f64.ln(), 0.0]).unwrap(), 0).unwrap();
        assert!((s.data()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.data()[1] - 1.0 / 3.0).abs() < 1e-15);

        let x = m(&[&[0.3, -1.2, 4.0], &[2.0, 0.1, -0.5]]);
        let shifted = x.map(|v| v + 17.5);
        for axis in 0..2 {
            let a = softmax_over_axis(&x, axis).unwrap();
            let b = softmax_over_axis(&shifted, axis).unwrap();
            assert!(a.max_abs_diff(&b) < 1e-15);
        }
        let cols = softmax_over_axis(&x, 0).unwrap();
        for c in 0..3 {
            assert!((cols.get2(0, c) + cols.get2(1, c) - 1.0).abs() < 1e-12);
        }
        assert!(softmax_over_axis(&x, 2).is_err());
    }

    #[test]
    fn leaky_relu_cases() {
        assert_eq!(leaky_relu_scalar(1.0, LEAKY_SLOPE), 1.0);
        assert_eq!(leaky_relu_scalar(0.0, LEAKY_SLOPE), 0.0);
        assert_eq!(leaky_relu_scalar(-1.0, LEAKY_SLOPE), -0.01);
    }

    #[test]
    fn l2_cases() {
        let out = l2_normalize_rows(&m(&[&[3.0, 4.0], &[1.0, 0.0], &[0.0, 0.0]]), EPS).unwrap();
        assert!((out.get2(0, 0) - 0.6).abs() < 1e-15);
        assert!((out.get2(0, 1) - 0.8).abs() < 1e-15);
        assert_eq!(out.row(1), &[1.0, 0.0]);
        assert_eq!(out.row(2), &[0.0, 0.0]);
    }

    #[test]
    fn masked_softmax_empty_row_is_contract_error() {
        let x = m(&[&[1.0, 2.0]]);
        assert!(masked_softmax_rows(&x, &[false, false]).is_err());
        let y = masked_softmax_rows(&x, &[true, false]).unwrap();
        assert_eq!(y.data(), &[1.0, 0.0]);
    }
}
