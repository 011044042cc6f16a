//! Dense row-major `f64` tensors and the handful of kernels the graph needs.
//!
//! Shapes are limited to what the models use: vectors and matrices (an
//! attention stack is expressed as separate per-head matrices rather than a
//! rank-3 tensor). Data lives in a flat `Vec<f64>`; all kernels index
//! row-major with the innermost loop contiguous so the compiler can
//! vectorize them — the reconstruction sweeps push billions of flops through
//! these three functions.

use crate::error::{Error, Result};

/// A row-major tensor. `shape` is `[len]` for vectors, `[rows, cols]` for
/// matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "from_vec",
                format!("shape {shape:?} wants {numel} elements, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Rows of a matrix, or 1 for a vector.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            2 => self.shape[0],
            _ => panic!("rows() on rank-{} tensor", self.shape.len()),
        }
    }

    /// Columns of a matrix, or the length of a vector.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            1 => self.shape[0],
            2 => self.shape[1],
            _ => panic!("cols() on rank-{} tensor", self.shape.len()),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }
}

/// `out += a · b` for row-major `a: m×k`, `b: k×n`, `out: m×n`.
///
/// ikj loop order: the inner axis walks contiguous rows of both `b` and
/// `out`.
pub fn matmul_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for j in 0..n {
                out_row[j] += a_ip * b_row[j];
            }
        }
    }
}

/// `da += dc · bᵀ` — the left-operand adjoint of `c = a·b`.
/// `dc: m×n`, `b: k×n`, `da: m×k`. Inner loop is a dot product of two
/// contiguous rows.
pub fn matmul_acc_bt(dc: &[f64], b: &[f64], m: usize, k: usize, n: usize, da: &mut [f64]) {
    debug_assert_eq!(dc.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(da.len(), m * k);
    for i in 0..m {
        let dc_row = &dc[i * n..(i + 1) * n];
        let da_row = &mut da[i * k..(i + 1) * k];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += dc_row[j] * b_row[j];
            }
            da_row[p] += acc;
        }
    }
}

/// `db += aᵀ · dc` — the right-operand adjoint of `c = a·b`.
/// `a: m×k`, `dc: m×n`, `db: k×n`.
pub fn matmul_acc_at(a: &[f64], dc: &[f64], m: usize, k: usize, n: usize, db: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(dc.len(), m * n);
    debug_assert_eq!(db.len(), k * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let dc_row = &dc[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let db_row = &mut db[p * n..(p + 1) * n];
            for j in 0..n {
                db_row[j] += a_ip * dc_row[j];
            }
        }
    }
}

/// Dot product of equal-length slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

/// `out += scale * src`, elementwise.
pub fn axpy(scale: f64, src: &[f64], out: &mut [f64]) {
    debug_assert_eq!(src.len(), out.len());
    for i in 0..src.len() {
        out[i] += scale * src[i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        out
    }

    #[test]
    fn matmul_matches_naive() {
        let mut rng = crate::rng::Rng::new(1);
        for &(m, k, n) in &[(1, 1, 1), (2, 3, 4), (5, 7, 3), (1, 64, 115)] {
            let a: Vec<f64> = (0..m * k).map(|_| rng.next_normal()).collect();
            let b: Vec<f64> = (0..k * n).map(|_| rng.next_normal()).collect();
            let mut out = vec![0.0; m * n];
            matmul_acc(&a, &b, m, k, n, &mut out);
            let want = naive_matmul(&a, &b, m, k, n);
            for (x, y) in out.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transposed_variants_match_explicit_transposes() {
        let mut rng = crate::rng::Rng::new(2);
        let (m, k, n) = (3, 5, 4);
        let a: Vec<f64> = (0..m * k).map(|_| rng.next_normal()).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.next_normal()).collect();
        let dc: Vec<f64> = (0..m * n).map(|_| rng.next_normal()).collect();

        // da = dc · bᵀ
        let mut bt = vec![0.0; n * k];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        let want_da = naive_matmul(&dc, &bt, m, n, k);
        let mut da = vec![0.0; m * k];
        matmul_acc_bt(&dc, &b, m, k, n, &mut da);
        for (x, y) in da.iter().zip(&want_da) {
            assert!((x - y).abs() < 1e-12);
        }

        // db = aᵀ · dc
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let want_db = naive_matmul(&at, &dc, k, m, n);
        let mut db = vec![0.0; k * n];
        matmul_acc_at(&a, &dc, m, k, n, &mut db);
        for (x, y) in db.iter().zip(&want_db) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn from_vec_rejects_bad_shape() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
    }
}
