//! Dense f64 linear algebra and the differentiable kernels the model is
//! built from. Every kernel has a hand-written backward pass; there is no
//! autodiff graph.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norm below which cosine similarity refuses to divide.
pub const COSINE_EPS: f64 = 1e-12;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data, rejecting bad lengths and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::config(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::config(format!("non-finite matrix entry {v}")));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::config("ragged rows"));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    /// A column vector, the storage shape used for biases.
    pub fn column(values: Vec<f64>) -> Self {
        DenseMatrix {
            rows: values.len(),
            cols: 1,
            data: values,
        }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.rows, self.cols)
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &DenseMatrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    /// `W x`
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.data
            .chunks_exact(self.cols.max(1))
            .take(self.rows)
            .map(|row| dot(row, x))
            .collect()
    }

    /// `Wᵀ v`
    pub fn matvec_t(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (row, &vi) in self.data.chunks_exact(self.cols.max(1)).zip(v) {
            if vi != 0.0 {
                for (o, w) in out.iter_mut().zip(row) {
                    *o += vi * w;
                }
            }
        }
        out
    }

    /// `self += u vᵀ`
    pub fn add_outer(&mut self, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (row, &ui) in self.data.chunks_exact_mut(self.cols.max(1)).zip(u) {
            if ui != 0.0 {
                for (r, vj) in row.iter_mut().zip(v) {
                    *r += ui * vj;
                }
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Gradients of an affine layer with respect to its three inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineGrads {
    pub dx: Vec<f64>,
    pub dw: DenseMatrix,
    pub db: Vec<f64>,
}

fn check_affine(x: &[f64], w: &DenseMatrix, b: &[f64]) -> Result<()> {
    if w.cols() != x.len() || w.rows() != b.len() {
        return Err(Error::config(format!(
            "affine dims: W is {}x{}, x has {}, b has {}",
            w.rows(),
            w.cols(),
            x.len(),
            b.len()
        )));
    }
    Ok(())
}

/// `W x + b`
pub fn affine(x: &[f64], w: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    check_affine(x, w, b)?;
    let mut out = w.matvec(x);
    for (o, bi) in out.iter_mut().zip(b) {
        *o += bi;
    }
    Ok(out)
}

pub fn affine_backward(x: &[f64], w: &DenseMatrix, d_out: &[f64]) -> Result<AffineGrads> {
    if w.cols() != x.len() || w.rows() != d_out.len() {
        return Err(Error::config("affine backward dims"));
    }
    let mut dw = w.zeros_like();
    dw.add_outer(d_out, x);
    Ok(AffineGrads {
        dx: w.matvec_t(d_out),
        dw,
        db: d_out.to_vec(),
    })
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Passes `d_out` where `x > 0`; the subgradient at exactly zero is zero.
pub fn relu_backward(x: &[f64], d_out: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(d_out)
        .map(|(&v, &d)| if v > 0.0 { d } else { 0.0 })
        .collect()
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(v);
    v.iter().map(|x| (x - lse).exp()).collect()
}

/// Returns `-log softmax(logits)[label]` and its gradient
/// `softmax(logits) - onehot(label)`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::config(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let (top, max) = logits
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, x)| if x > acc.1 { (i, x) } else { acc });
    // ln(1 + rest) keeps full precision when the label dominates.
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != top)
        .map(|(_, x)| (x - max).exp())
        .sum();
    let tail = rest.ln_1p();
    let loss = (max - logits[label]) + tail;
    let lse = max + tail;
    let mut grad: Vec<f64> = logits.iter().map(|x| (x - lse).exp()).collect();
    grad[label] -= 1.0;
    Ok((loss.max(0.0), grad))
}

fn cosine_parts(a: &[f64], b: &[f64]) -> Result<(f64, f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::config(format!(
            "cosine similarity of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = norm(a);
    let nb = norm(b);
    if na <= COSINE_EPS || nb <= COSINE_EPS {
        return Err(Error::degenerate(format!(
            "cosine similarity with near-zero norm ({na:e}, {nb:e})"
        )));
    }
    Ok((dot(a, b), na, nb))
}

/// `a·b / (‖a‖‖b‖)`, clamped to [-1, 1].
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    let (ab, na, nb) = cosine_parts(a, b)?;
    Ok((ab / (na * nb)).clamp(-1.0, 1.0))
}

/// Gradients of `d_out * cos(a, b)` with respect to `a` and `b`.
pub fn cosine_similarity_backward(
    a: &[f64],
    b: &[f64],
    d_out: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (ab, na, nb) = cosine_parts(a, b)?;
    let inv = 1.0 / (na * nb);
    let c = ab * inv;
    let ca = c / (na * na);
    let cb = c / (nb * nb);
    let da = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| d_out * (y * inv - ca * x))
        .collect();
    let db = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| d_out * (x * inv - cb * y))
        .collect();
    Ok((da, db))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_identity_and_scalar_chain_rule() {
        let out = affine(&[1.0, 2.0], &DenseMatrix::identity(2), &[0.0, 0.0]).unwrap();
        assert_eq!(out, vec![1.0, 2.0]);

        let w = DenseMatrix::from_rows(&[vec![3.0]]).unwrap();
        assert_eq!(affine(&[1.0], &w, &[4.0]).unwrap(), vec![7.0]);
        let g = affine_backward(&[1.0], &w, &[1.0]).unwrap();
        assert_eq!(g.dw.data(), &[1.0]);
        assert_eq!(g.db, vec![1.0]);
        assert_eq!(g.dx, vec![3.0]);
    }

    #[test]
    fn affine_rejects_mismatched_dims() {
        let w = DenseMatrix::zeros(2, 3);
        assert!(matches!(
            affine(&[1.0, 2.0], &w, &[0.0, 0.0]),
            Err(Error::Config(_))
        ));
        assert!(affine(&[1.0, 2.0, 3.0], &w, &[0.0]).is_err());
    }

    #[test]
    fn relu_forward_and_zero_subgradient() {
        assert_eq!(relu(&[-1.0, 0.0, 2.0]), vec![0.0, 0.0, 2.0]);
        assert_eq!(
            relu_backward(&[-1.0, 0.0, 2.0], &[5.0, 5.0, 5.0]),
            vec![0.0, 0.0, 5.0]
        );
    }

    #[test]
    fn cross_entropy_reference_values() {
        let (loss, grad) = softmax_cross_entropy(&[0.0, 0.0], 0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(grad, vec![-0.5, 0.5]);

        // log(1 + e^-20)
        let (loss, _) = softmax_cross_entropy(&[10.0, -10.0], 0).unwrap();
        let expected = (-20.0f64).exp().ln_1p();
        assert!((loss - expected).abs() < 1e-20, "{loss} vs {expected}");
        assert!((loss - 2.061e-9).abs() < 1e-12);

        let uniform = vec![0.7; 5];
        let (loss, _) = softmax_cross_entropy(&uniform, 3).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-15);

        assert!(softmax_cross_entropy(&[0.0, 0.0], 2).is_err());
    }

    #[test]
    fn cross_entropy_is_stable_for_huge_logits() {
        let (loss, grad) = softmax_cross_entropy(&[1000.0, -1000.0, 0.0], 1).unwrap();
        assert!((loss - 2000.0).abs() < 1e-9);
        assert!(grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn cosine_reference_values() {
        let e1 = [1.0, 0.0];
        let e2 = [0.0, 1.0];
        assert_eq!(cosine_similarity(&e1, &e1).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&e1, &e2).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&[1.0, 1.0], &[1.0, -1.0]).unwrap(), 0.0);
        assert!((cosine_similarity(&[2.0, 2.0], &[-3.0, -3.0]).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_rejects_zero_norm() {
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::Degenerate(_))
        ));
        assert!(cosine_similarity_backward(&[1.0], &[1e-13], 1.0).is_err());
    }

    #[test]
    fn matvec_transpose_and_outer_agree_with_loops() {
        let w = DenseMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(w.matvec(&[1.0, 0.0, -1.0]), vec![-2.0, -2.0]);
        assert_eq!(w.matvec_t(&[1.0, 1.0]), vec![5.0, 7.0, 9.0]);
        let mut m = DenseMatrix::zeros(2, 3);
        m.add_outer(&[1.0, 2.0], &[1.0, 0.0, 3.0]);
        assert_eq!(m.data(), &[1.0, 0.0, 3.0, 2.0, 0.0, 6.0]);
    }

    #[test]
    fn from_vec_rejects_non_finite() {
        assert!(DenseMatrix::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(DenseMatrix::from_vec(1, 2, vec![1.0]).is_err());
    }
}
