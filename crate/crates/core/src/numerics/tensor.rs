use serde::{Deserialize, Serialize};

use super::{NumericsError, Result};

/// Row-major dense array of `f64`.
///
/// A shape of `[]` denotes a scalar. Binary operations broadcast only between
/// identical shapes, a scalar and anything, or a shape and one of its trailing
/// suffixes (a `[cols]` bias against a `[rows, cols]` matrix).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    LeftScalar,
    RightScalar,
    /// Right operand repeats over the leading axes of the left one.
    RightTrailing,
    LeftTrailing,
}

fn broadcast_kind(left: &[usize], right: &[usize]) -> Option<Broadcast> {
    let numel = |s: &[usize]| s.iter().product::<usize>();
    if left == right {
        Some(Broadcast::Same)
    } else if right.len() <= 1 && numel(right) == 1 {
        Some(Broadcast::RightScalar)
    } else if left.len() <= 1 && numel(left) == 1 {
        Some(Broadcast::LeftScalar)
    } else if right.len() < left.len() && left.ends_with(right) {
        Some(Broadcast::RightTrailing)
    } else if left.len() < right.len() && right.ends_with(left) {
        Some(Broadcast::LeftTrailing)
    } else {
        None
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(NumericsError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// One-dimensional tensor.
    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self::zeros(&other.shape)
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

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(
            self.data.len(),
            1,
            "item() on tensor of shape {:?}",
            self.shape
        );
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Trailing extent for a 2-D tensor; 1 for vectors and scalars.
    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[self.shape.len() - 1]
        } else {
            1
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "reshape",
                left: self.shape,
                right: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Elementwise binary map with the broadcasting rules described on the type.
    pub fn zip_map(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let kind = broadcast_kind(&self.shape, &other.shape).ok_or_else(|| {
            NumericsError::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            }
        })?;
        let (shape, data) = match kind {
            Broadcast::Same => (
                self.shape.clone(),
                self.data
                    .iter()
                    .zip(&other.data)
                    .map(|(&a, &b)| f(a, b))
                    .collect(),
            ),
            Broadcast::RightScalar => {
                let b = other.data[0];
                (
                    self.shape.clone(),
                    self.data.iter().map(|&a| f(a, b)).collect(),
                )
            }
            Broadcast::LeftScalar => {
                let a = self.data[0];
                (
                    other.shape.clone(),
                    other.data.iter().map(|&b| f(a, b)).collect(),
                )
            }
            Broadcast::RightTrailing => {
                let m = other.data.len();
                (
                    self.shape.clone(),
                    self.data
                        .iter()
                        .enumerate()
                        .map(|(i, &a)| f(a, other.data[i % m]))
                        .collect(),
                )
            }
            Broadcast::LeftTrailing => {
                let m = self.data.len();
                (
                    other.shape.clone(),
                    other
                        .data
                        .iter()
                        .enumerate()
                        .map(|(i, &b)| f(self.data[i % m], b))
                        .collect(),
                )
            }
        };
        Ok(Tensor { shape, data })
    }

    /// Sums a broadcast result back down to `shape` (the adjoint of broadcasting).
    pub(crate) fn reduce_to(&self, shape: &[usize]) -> Tensor {
        if self.shape == shape {
            return self.clone();
        }
        let target: usize = shape.iter().product();
        if target == 1 {
            return Tensor {
                shape: shape.to_vec(),
                data: vec![self.sum()],
            };
        }
        let mut data = vec![0.0; target];
        for (i, &v) in self.data.iter().enumerate() {
            data[i % target] += v;
        }
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    fn matrix_dims(&self, op: &'static str, other: &Tensor) -> Result<(usize, usize)> {
        if self.shape.len() != 2 || other.shape.len() != 2 {
            return Err(NumericsError::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok((self.shape[0], self.shape[1]))
    }

    /// `self (m×k) · other (k×n)`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.matrix_dims("matmul", other)?;
        if other.shape[0] != k {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let n = other.shape[1];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let out_row = &mut out[i * n..(i + 1) * n];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
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

    /// `self (m×k) · otherᵀ` where `other` is `n×k`.
    pub(crate) fn matmul_nt(&self, other: &Tensor) -> Tensor {
        let (m, k) = (self.shape[0], self.shape[1]);
        let n = other.shape[0];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let b_row = &other.data[j * k..(j + 1) * k];
                out[i * n + j] = a_row.iter().zip(b_row).map(|(a, b)| a * b).sum();
            }
        }
        Tensor {
            shape: vec![m, n],
            data: out,
        }
    }

    /// `selfᵀ · other` where `self` is `k×m` and `other` is `k×n`.
    pub(crate) fn matmul_tn(&self, other: &Tensor) -> Tensor {
        let (k, m) = (self.shape[0], self.shape[1]);
        let n = other.shape[1];
        let mut out = vec![0.0; m * n];
        for p in 0..k {
            let a_row = &self.data[p * m..(p + 1) * m];
            let b_row = &other.data[p * n..(p + 1) * n];
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out[i * n..(i + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Tensor {
            shape: vec![m, n],
            data: out,
        }
    }

    pub fn transpose(&self) -> Result<Tensor> {
        if self.shape.len() != 2 {
            return Err(NumericsError::ShapeMismatch {
                op: "transpose",
                left: self.shape.clone(),
                right: vec![],
            });
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor {
            shape: vec![c, r],
            data,
        })
    }

    /// Columns `start..start + len` of a 2-D tensor.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor> {
        if self.shape.len() != 2 || start + len > self.shape[1] {
            return Err(NumericsError::ShapeMismatch {
                op: "slice_cols",
                left: self.shape.clone(),
                right: vec![start, len],
            });
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&self.data[i * c + start..i * c + start + len]);
        }
        Ok(Tensor {
            shape: vec![r, len],
            data,
        })
    }

    /// Concatenates 2-D tensors with equal row counts along the column axis.
    pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or(NumericsError::Parameter {
            op: "concat",
            message: "no inputs".into(),
        })?;
        let rows = first.rows();
        for p in parts {
            if p.shape.len() != 2 || p.shape[0] != rows {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat",
                    left: first.shape.clone(),
                    right: p.shape.clone(),
                });
            }
        }
        let cols: usize = parts.iter().map(|p| p.shape[1]).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(r));
            }
        }
        Ok(Tensor {
            shape: vec![rows, cols],
            data,
        })
    }

    /// Row sums of a 2-D tensor as a `[rows, 1]` column.
    pub fn sum_cols(&self) -> Result<Tensor> {
        if self.shape.len() != 2 {
            return Err(NumericsError::ShapeMismatch {
                op: "sum_cols",
                left: self.shape.clone(),
                right: vec![],
            });
        }
        let r = self.shape[0];
        let data = (0..r).map(|i| self.row(i).iter().sum()).collect();
        Ok(Tensor {
            shape: vec![r, 1],
            data,
        })
    }

    /// Rows selected by index, for 2-D tensors.
    pub fn select_rows(&self, idx: &[usize]) -> Tensor {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Tensor {
            shape: vec![idx.len(), c],
            data,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_shapes() {
        let a = Tensor::matrix(2, 3, (0..6).map(f64::from).collect()).unwrap();
        let b = Tensor::matrix(3, 4, (0..12).map(f64::from).collect()).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 4]);
        // row 0 = [0,1,2] · B
        assert_eq!(c.row(0), &[20.0, 23.0, 26.0, 29.0]);
        assert!(matches!(
            b.matmul(&a),
            Err(NumericsError::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn transposed_products_agree_with_explicit_transpose() {
        let a = Tensor::matrix(3, 2, vec![1.0, -2.0, 0.5, 4.0, 3.0, 0.0]).unwrap();
        let b = Tensor::matrix(4, 2, vec![2.0, 1.0, 0.0, -1.0, 5.0, 2.5, 1.0, 1.0]).unwrap();
        let nt = a.matmul_nt(&b);
        assert_eq!(nt, a.matmul(&b.transpose().unwrap()).unwrap());
        let c = Tensor::matrix(3, 4, (0..12).map(|v| v as f64 * 0.5).collect()).unwrap();
        let tn = a.matmul_tn(&c);
        assert_eq!(tn, a.transpose().unwrap().matmul(&c).unwrap());
    }

    #[test]
    fn broadcasting_rules() {
        let m = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bias = Tensor::vector(vec![10.0, 20.0]);
        let s = m.zip_map(&bias, "add", |a, b| a + b).unwrap();
        assert_eq!(s.data(), &[11.0, 22.0, 13.0, 24.0]);
        let t = Tensor::scalar(2.0)
            .zip_map(&m, "mul", |a, b| a * b)
            .unwrap();
        assert_eq!(t.data(), &[2.0, 4.0, 6.0, 8.0]);
        let bad = Tensor::vector(vec![1.0, 2.0, 3.0]);
        assert!(m.zip_map(&bad, "add", |a, b| a + b).is_err());
        assert_eq!(s.reduce_to(&[2]).data(), &[24.0, 46.0]);
    }

    #[test]
    fn construction_checks_length() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert_eq!(Tensor::scalar(3.0).item(), 3.0);
    }
}
