//! Small dense linear algebra for the bandit estimator.
//!
//! Dimensions are a run-time value bounded by [`MAX_DIM`]. Matrices are stored
//! row-major in a flat `Vec<f64>`.

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 16;

/// Pivots at or below this value are treated as a loss of definiteness.
pub const PIVOT_FLOOR: f64 = 1e-14;

/// Square `dim x dim` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    dim: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(dim: usize) -> Self {
        assert!(
            (1..=MAX_DIM).contains(&dim),
            "matrix dimension {dim} outside 1..={MAX_DIM}"
        );
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn diag(entries: &[f64]) -> Self {
        let mut m = Self::zeros(entries.len());
        for (i, &v) in entries.iter().enumerate() {
            m.data[i * entries.len() + i] = v;
        }
        m
    }

    /// Builds a matrix from row slices. Panics if the rows are ragged.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let dim = rows.len();
        let mut m = Self::zeros(dim);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), dim, "row {i} has wrong length");
            m.data[i * dim..(i + 1) * dim].copy_from_slice(row);
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.dim);
        self.data
            .chunks_exact(self.dim)
            .map(|row| dot(row, x))
            .collect()
    }

    pub fn mul(&self, other: &Mat) -> Mat {
        assert_eq!(self.dim, other.dim);
        let d = self.dim;
        let mut out = Mat::zeros(d);
        for i in 0..d {
            for k in 0..d {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..d {
                    out.data[i * d + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Mat {
        let d = self.dim;
        let mut out = Mat::zeros(d);
        for i in 0..d {
            for j in 0..d {
                out.data[j * d + i] = self.get(i, j);
            }
        }
        out
    }

    /// `x^T M x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        self.data
            .chunks_exact(self.dim)
            .zip(x)
            .map(|(row, &xi)| xi * dot(row, x))
            .sum()
    }

    /// In-place `M += x x^T`.
    pub fn add_outer(&mut self, x: &[f64]) {
        let d = self.dim;
        for i in 0..d {
            for j in 0..d {
                self.data[i * d + j] += x[i] * x[j];
            }
        }
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sherman–Morrison: given `A^{-1}`, returns `(A + x x^T)^{-1}`.
pub fn rank_one_update(a_inv: &Mat, x: &[f64]) -> Result<Mat> {
    check_len(a_inv.dim(), x.len())?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("rank-one update vector"));
    }
    let d = a_inv.dim();
    let u = a_inv.mul_vec(x);
    // 1 + x^T A^{-1} x > 1 for SPD A^{-1} and nonzero x.
    let denom = 1.0 + dot(x, &u);
    let mut out = a_inv.clone();
    for i in 0..d {
        for j in 0..d {
            out.data[i * d + j] -= u[i] * u[j] / denom;
        }
    }
    symmetrize(&mut out);
    Ok(out)
}

/// Lower-triangular `L` with `L L^T = A`.
pub fn cholesky_lower(a: &Mat) -> Result<Mat> {
    let d = a.dim();
    let mut l = Mat::zeros(d);
    for j in 0..d {
        let mut diag = a.get(j, j);
        for k in 0..j {
            diag -= l.get(j, k) * l.get(j, k);
        }
        if diag.is_nan() || diag <= PIVOT_FLOOR {
            return Err(Error::NotPositiveDefinite {
                row: j,
                pivot: diag,
            });
        }
        let ljj = diag.sqrt();
        l.set(j, j, ljj);
        for i in (j + 1)..d {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / ljj);
        }
    }
    Ok(l)
}

/// Inverse of an SPD matrix through its Cholesky factor.
pub fn spd_inverse(a: &Mat) -> Result<Mat> {
    let l = cholesky_lower(a)?;
    let d = a.dim();
    // Invert L by forward substitution, then A^{-1} = L^{-T} L^{-1}.
    let mut l_inv = Mat::zeros(d);
    for col in 0..d {
        for i in col..d {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for k in col..i {
                s -= l.get(i, k) * l_inv.get(k, col);
            }
            l_inv.set(i, col, s / l.get(i, i));
        }
    }
    let mut inv = l_inv.transpose().mul(&l_inv);
    symmetrize(&mut inv);
    Ok(inv)
}

/// `theta = A^{-1} b`.
pub fn solve_theta(a_inv: &Mat, b: &[f64]) -> Vec<f64> {
    a_inv.mul_vec(b)
}

fn symmetrize(m: &mut Mat) {
    let d = m.dim;
    for i in 0..d {
        for j in (i + 1)..d {
            let avg = 0.5 * (m.data[i * d + j] + m.data[j * d + i]);
            m.data[i * d + j] = avg;
            m.data[j * d + i] = avg;
        }
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
