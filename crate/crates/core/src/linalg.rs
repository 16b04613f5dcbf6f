//! Dense solvers for the small `K x K` systems that appear in calibration
//! and propensity fitting.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        SquareMatrix { n, data: vec![0.0; n * n] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    /// `self += weight * v v^T`
    pub fn add_outer(&mut self, v: &[f64], weight: f64) {
        for i in 0..self.n {
            let wi = weight * v[i];
            if wi == 0.0 {
                continue;
            }
            for j in 0..self.n {
                self.data[i * self.n + j] += wi * v[j];
            }
        }
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j) * v[j]).sum())
            .collect()
    }
}

/// Relative pivot threshold below which a component is declared dependent.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Solves `G x = b` for a symmetric positive semi-definite Gram matrix.
///
/// Cholesky factorisation is carried out in natural order; component `k` is
/// reported dependent when its residual pivot falls below
/// `RANK_TOLERANCE * G[k][k]` (or `G[k][k]` is itself negligible).
pub fn solve_gram(g: &SquareMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = g.dim();
    let scale = (0..n).map(|i| g.get(i, i).abs()).fold(0.0, f64::max);
    let mut l = SquareMatrix::zeros(n);
    let mut dependent = Vec::new();
    for j in 0..n {
        let mut d = g.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        let gjj = g.get(j, j).abs();
        if !(d > RANK_TOLERANCE * gjj) || gjj <= RANK_TOLERANCE * scale || scale == 0.0 {
            dependent.push(j);
            continue;
        }
        let ljj = libm::sqrt(d);
        l.set(j, j, ljj);
        for i in (j + 1)..n {
            let mut s = g.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / ljj);
        }
    }
    if !dependent.is_empty() {
        return Err(Error::RankDeficient { dependent });
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l.get(i, k) * y[k];
        }
        y[i] = s / l.get(i, i);
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l.get(k, i) * x[k];
        }
        x[i] = s / l.get(i, i);
    }
    Ok(x)
}

/// General solve by LU with partial pivoting.
pub fn solve_general(a: &SquareMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.dim();
    let mut m = a.clone();
    let mut rhs = b.to_vec();
    let scale = m.data.iter().map(|v| v.abs()).fold(0.0, f64::max);
    for col in 0..n {
        let (piv, best) = (col..n)
            .map(|r| (r, m.get(r, col).abs()))
            .fold((col, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if !(best > RANK_TOLERANCE * scale) {
            return Err(Error::RankDeficient { dependent: vec![col] });
        }
        if piv != col {
            for j in 0..n {
                let t = m.get(col, j);
                m.set(col, j, m.get(piv, j));
                m.set(piv, j, t);
            }
            rhs.swap(col, piv);
        }
        let p = m.get(col, col);
        for r in (col + 1)..n {
            let f = m.get(r, col) / p;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                let v = m.get(r, j) - f * m.get(col, j);
                m.set(r, j, v);
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = rhs[i];
        for j in (i + 1)..n {
            s -= m.get(i, j) * x[j];
        }
        x[i] = s / m.get(i, i);
    }
    Ok(x)
}
