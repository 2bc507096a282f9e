//! Dense row-major `f64` tensors.
//!
//! Every op checks shapes at the boundary and reports the op name together
//! with both offending shapes. Only bias-add broadcasts.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from external data, rejecting zero dims, length
    /// mismatches and non-finite entries.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::contract(format!("tensor shape {shape:?} has a zero dimension")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        if let Some((position, &value)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { position, value });
        }
        Ok(Self { shape, data })
    }

    /// Internal constructor for values produced by our own arithmetic.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(Vec::new(), vec![value])
    }

    /// Convenience constructor for small matrices in tests and examples.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::contract("ragged rows"));
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(vec![rows.len(), cols], data)
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

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::contract(format!("item() on tensor of shape {:?}", self.shape)))
        }
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn get2(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols() + col]
    }

    fn require_matrix(&self, op: &'static str) -> Result<()> {
        if self.shape.len() == 2 {
            Ok(())
        } else {
            Err(Error::Shape {
                op,
                left: self.shape.clone(),
                right: vec![],
            })
        }
    }

    fn require_same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape == other.shape {
            Ok(())
        } else {
            Err(Error::Shape {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            })
        }
    }

    /// `self · other` for `[m×k] · [k×n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let mismatch = || Error::Shape {
            op: "matmul",
            left: self.shape.clone(),
            right: other.shape.clone(),
        };
        if self.shape.len() != 2 || other.shape.len() != 2 || self.shape[1] != other.shape[0] {
            return Err(mismatch());
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
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
        Ok(Tensor::from_parts(vec![m, n], out))
    }

    /// `self · otherᵀ` for `[m×k] · [n×k]ᵀ`.
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape.len() != 2 || other.shape.len() != 2 || self.shape[1] != other.shape[1] {
            return Err(Error::Shape {
                op: "matmul_nt",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[0]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let b_row = &other.data[j * k..(j + 1) * k];
                out[i * n + j] = a_row.iter().zip(b_row).map(|(a, b)| a * b).sum();
            }
        }
        Ok(Tensor::from_parts(vec![m, n], out))
    }

    /// `selfᵀ · other` for `[k×m]ᵀ · [k×n]`.
    pub fn matmul_tn(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape.len() != 2 || other.shape.len() != 2 || self.shape[0] != other.shape[0] {
            return Err(Error::Shape {
                op: "matmul_tn",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let (k, m, n) = (self.shape[0], self.shape[1], other.shape[1]);
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
        Ok(Tensor::from_parts(vec![m, n], out))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.require_same_shape(other, op)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }

    /// Row-broadcast add of a bias vector of length `cols`.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        self.require_matrix("add_bias")?;
        let n = self.shape[1];
        if bias.len() != n {
            return Err(Error::Shape {
                op: "add_bias",
                left: self.shape.clone(),
                right: bias.shape.clone(),
            });
        }
        let mut data = self.data.clone();
        for row in data.chunks_exact_mut(n) {
            for (x, b) in row.iter_mut().zip(&bias.data) {
                *x += b;
            }
        }
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&x| f(x)).collect())
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.require_same_shape(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for x in &mut self.data {
            *x *= factor;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    /// Column sums of a matrix, returned with shape `[cols]`.
    pub fn sum_rows(&self) -> Result<Tensor> {
        self.require_matrix("sum_rows")?;
        let n = self.shape[1];
        let mut out = vec![0.0; n];
        for row in self.data.chunks_exact(n) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        Ok(Tensor::from_parts(vec![n], out))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.len() {
            return Err(Error::Shape {
                op: "reshape",
                left: self.shape.clone(),
                right: shape.to_vec(),
            });
        }
        Ok(Tensor::from_parts(shape.to_vec(), self.data.clone()))
    }

    /// Row-wise softmax of a matrix, max-subtracted.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        self.require_matrix("softmax_rows")?;
        let n = self.shape[1];
        let mut data = self.data.clone();
        for row in data.chunks_exact_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }

    /// Index of the largest entry of each row; ties resolve to the lowest index.
    pub fn argmax_rows(&self) -> Result<Vec<usize>> {
        self.require_matrix("argmax_rows")?;
        let n = self.shape[1];
        Ok(self
            .data
            .chunks_exact(n)
            .map(|row| {
                let mut best = 0;
                for (j, &x) in row.iter().enumerate() {
                    if x > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }

    /// Bitwise equality of shape and every entry.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Per-row `-log softmax(logits)[target]`, stabilised by max-subtraction.
pub fn cross_entropy_rows(logits: &Tensor, targets: &[usize]) -> Result<Vec<f64>> {
    logits.require_matrix("softmax_cross_entropy")?;
    let (rows, classes) = (logits.shape[0], logits.shape[1]);
    if targets.len() != rows {
        return Err(Error::Shape {
            op: "softmax_cross_entropy",
            left: logits.shape.clone(),
            right: vec![targets.len()],
        });
    }
    let mut out = Vec::with_capacity(rows);
    for (row, &t) in logits.data.chunks_exact(classes).zip(targets) {
        if t >= classes {
            return Err(Error::Index {
                op: "softmax_cross_entropy",
                index: t,
                bound: classes,
            });
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        out.push(lse - row[t]);
    }
    Ok(out)
}

/// Mean over the batch of `-log softmax(logits)[target]`.
pub fn softmax_cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<f64> {
    let per_row = cross_entropy_rows(logits, targets)?;
    Ok(per_row.iter().sum::<f64>() / per_row.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_construction() {
        assert!(matches!(Tensor::new(vec![2, 2], vec![1.0; 3]), Err(Error::Shape { .. })));
        assert!(matches!(
            Tensor::new(vec![2], vec![1.0, f64::NAN]),
            Err(Error::NonFinite { position: 1, .. })
        ));
        assert!(Tensor::new(vec![0, 2], vec![]).is_err());
    }

    #[test]
    fn matmul_identity_and_dot() {
        let eye = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        let b = Tensor::from_rows(&[&[3.0, 4.0], &[5.0, 6.0]]).unwrap();
        assert_eq!(eye.matmul(&b).unwrap(), b);

        let row = Tensor::from_rows(&[&[1.0, 2.0]]).unwrap();
        let col = Tensor::from_rows(&[&[3.0], &[4.0]]).unwrap();
        assert_eq!(row.matmul(&col).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_error_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn transposed_products_agree_with_plain() {
        let a = Tensor::new(vec![3, 2], vec![1.0, -2.0, 0.5, 3.0, 4.0, -1.0]).unwrap();
        let b = Tensor::new(vec![3, 4], (0..12).map(|x| x as f64 * 0.25 - 1.0).collect()).unwrap();
        let at = Tensor::new(vec![2, 3], vec![1.0, 0.5, 4.0, -2.0, 3.0, -1.0]).unwrap();
        assert_eq!(a.matmul_tn(&b).unwrap(), at.matmul(&b).unwrap());
        let bt = Tensor::new(vec![4, 3], {
            let mut v = vec![0.0; 12];
            for i in 0..3 {
                for j in 0..4 {
                    v[j * 3 + i] = b.get2(i, j);
                }
            }
            v
        })
        .unwrap();
        assert_eq!(at.matmul_nt(&bt).unwrap(), at.matmul(&b).unwrap());
    }

    #[test]
    fn cross_entropy_uniform_and_stable() {
        let l = Tensor::from_rows(&[&[0.0, 0.0]]).unwrap();
        assert!((softmax_cross_entropy(&l, &[0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let l = Tensor::from_rows(&[&[1000.0, 0.0]]).unwrap();
        let loss = softmax_cross_entropy(&l, &[0]).unwrap();
        assert!(loss.is_finite() && loss.abs() < 1e-300);
        assert!(matches!(
            softmax_cross_entropy(&l, &[2]),
            Err(Error::Index { index: 2, bound: 2, .. })
        ));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let l = Tensor::new(vec![3, 4], (0..12).map(|x| (x as f64).sin() * 7.0).collect()).unwrap();
        let p = l.softmax_rows().unwrap();
        for row in p.data().chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
