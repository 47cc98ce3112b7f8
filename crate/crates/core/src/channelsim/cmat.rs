//! Small dense complex matrix used for channel math outside the autodiff
//! engine. Row-major, `Complex64` entries.

use crate::error::{Error, Result};
use num_complex::Complex64;

#[derive(Clone, Debug, PartialEq)]
pub struct CMat {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMat {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(CMat { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn hermitian(&self) -> CMat {
        let mut out = CMat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j).conj());
            }
        }
        out
    }

    pub fn matmul(&self, other: &CMat) -> Result<CMat> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = CMat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for p in 0..self.cols {
                let a = self.get(i, p);
                if a.norm_sqr() == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    let v = out.get(i, j) + a * other.get(p, j);
                    out.set(i, j, v);
                }
            }
        }
        Ok(out)
    }

    /// `self * v` for a column vector.
    pub fn matvec(&self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        if v.len() != self.cols {
            return Err(Error::Shape(format!(
                "matvec {}x{} by vector of {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        let mut out = vec![Complex64::new(0.0, 0.0); self.rows];
        for i in 0..self.rows {
            let mut s = Complex64::new(0.0, 0.0);
            for j in 0..self.cols {
                s += self.get(i, j) * v[j];
            }
            out[i] = s;
        }
        Ok(out)
    }

    pub fn scale(&self, c: Complex64) -> CMat {
        CMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &CMat) {
        debug_assert_eq!(self.rows, other.rows);
        debug_assert_eq!(self.cols, other.cols);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Rank-one outer product `g * a * b^H`.
    pub fn outer(g: Complex64, a: &[Complex64], b: &[Complex64]) -> CMat {
        let mut out = CMat::zeros(a.len(), b.len());
        for (i, &ai) in a.iter().enumerate() {
            for (j, &bj) in b.iter().enumerate() {
                out.set(i, j, g * ai * bj.conj());
            }
        }
        out
    }

    /// Flatten to the paired-real layout `[2, rows, cols]` (real block then
    /// imaginary block, each row-major).
    pub fn to_real_vec(&self) -> Vec<f64> {
        let n = self.data.len();
        let mut out = Vec::with_capacity(2 * n);
        out.extend(self.data.iter().map(|v| v.re));
        out.extend(self.data.iter().map(|v| v.im));
        out
    }

    pub fn from_real_vec(rows: usize, cols: usize, v: &[f64]) -> Result<Self> {
        let n = rows * cols;
        if v.len() != 2 * n {
            return Err(Error::Shape(format!(
                "paired-real {rows}x{cols} needs {} reals, got {}",
                2 * n,
                v.len()
            )));
        }
        let data = (0..n)
            .map(|i| Complex64::new(v[i], v[n + i]))
            .collect();
        Ok(CMat { rows, cols, data })
    }
}

/// Inner product `a^H b`.
pub fn vdot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| x.conj() * y)
        .sum()
}

pub fn vec_norm(a: &[Complex64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}
