//! Dense row-major matrices and the handful of kernels the recurrent encoder needs.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
        Self { rows, cols, data }
    }

    /// Random matrix with orthonormal rows or columns (whichever is fewer), built by
    /// Gram-Schmidt over Gaussian draws.
    pub fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let (n, k) = if rows >= cols { (rows, cols) } else { (cols, rows) };
        // k orthonormal vectors of length n
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
        while basis.len() < k {
            let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
            for b in &basis {
                let proj = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
            }
            let norm = dot(&v, &v).sqrt();
            if norm < 1e-8 {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
        let mut m = Matrix::zeros(rows, cols);
        for (j, b) in basis.iter().enumerate() {
            for (i, &x) in b.iter().enumerate() {
                if rows >= cols {
                    m.data[i * cols + j] = x;
                } else {
                    m.data[j * cols + i] = x;
                }
            }
        }
        m
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out += self * x`
    pub fn matvec_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            *o += dot(self.row(r), x);
        }
    }

    /// `out += self^T * z`
    pub fn matvec_t_acc(&self, z: &[f64], out: &mut [f64]) {
        debug_assert_eq!(z.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (r, &zr) in z.iter().enumerate() {
            if zr == 0.0 {
                continue;
            }
            axpy(zr, self.row(r), out);
        }
    }

    /// `self += z ⊗ x`
    pub fn outer_acc(&mut self, z: &[f64], x: &[f64]) {
        debug_assert_eq!(z.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        for (r, &zr) in z.iter().enumerate() {
            if zr == 0.0 {
                continue;
            }
            axpy(zr, x, self.row_mut(r));
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthogonal_columns_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (rows, cols) in [(6, 4), (4, 6), (5, 5)] {
            let m = Matrix::orthogonal(rows, cols, &mut rng);
            // Gram of the smaller side is the identity
            let (k, get): (usize, Box<dyn Fn(usize, usize) -> f64>) = if rows >= cols {
                (cols, Box::new(|i, j| m.data[i * cols + j]))
            } else {
                (rows, Box::new(|i, j| m.data[j * cols + i]))
            };
            let n = rows.max(cols);
            for a in 0..k {
                for b in 0..k {
                    let g: f64 = (0..n).map(|i| get(i, a) * get(i, b)).sum();
                    let want = if a == b { 1.0 } else { 0.0 };
                    assert!((g - want).abs() < 1e-10, "{rows}x{cols} gram[{a},{b}]={g}");
                }
            }
        }
    }

    #[test]
    fn matvec_kernels_agree_with_naive() {
        let m = Matrix {
            rows: 2,
            cols: 3,
            data: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        };
        let mut out = vec![0.5, 0.0];
        m.matvec_acc(&[1.0, 0.0, -1.0], &mut out);
        assert_eq!(out, vec![-1.5, -2.0]);

        let mut back = vec![0.0; 3];
        m.matvec_t_acc(&[1.0, 2.0], &mut back);
        assert_eq!(back, vec![9.0, 12.0, 15.0]);

        let mut g = Matrix::zeros(2, 3);
        g.outer_acc(&[1.0, -1.0], &[1.0, 2.0, 3.0]);
        assert_eq!(g.data, vec![1.0, 2.0, 3.0, -1.0, -2.0, -3.0]);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }
}
