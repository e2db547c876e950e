//! Small dense matrices (dimension 1 to 3) with a linear solver and
//! characteristic-polynomial eigenvalues.

use std::ops::{Index, IndexMut};

use num_complex::Complex64;
use serde::{Serialize, Serializer};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Matrix { n, data: vec![0.0; n * n] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut m = Matrix::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), n, "matrix must be square");
            m.data[i * n..(i + 1) * n].copy_from_slice(row);
        }
        m
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut m = Matrix::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n.max(1)).map(<[f64]>::to_vec).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self[(i, i)]).sum()
    }

    pub fn det(&self) -> f64 {
        let a = |i, j| self[(i, j)];
        match self.n {
            0 => 1.0,
            1 => a(0, 0),
            2 => a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0),
            3 => {
                a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1))
                    - a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0))
                    + a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0))
            }
            _ => unimplemented!("determinant only for dimension <= 3"),
        }
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.n, other.n);
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    fn is_triangular(&self) -> bool {
        let n = self.n;
        let lower_zero = (0..n).all(|i| (0..i).all(|j| self[(i, j)] == 0.0));
        let upper_zero = (0..n).all(|i| (i + 1..n).all(|j| self[(i, j)] == 0.0));
        lower_zero || upper_zero
    }

    /// Solves `self * x = b` by Gaussian elimination with partial pivoting.
    /// Returns `None` when a pivot vanishes.
    pub fn solve(&self, b: &[f64]) -> Option<Vec<f64>> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut a = self.data.clone();
        let mut x = b.to_vec();
        let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return None;
        }
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
                .unwrap();
            if a[pivot * n + col].abs() <= scale * 1e-14 {
                return None;
            }
            if pivot != col {
                for k in 0..n {
                    a.swap(pivot * n + k, col * n + k);
                }
                x.swap(pivot, col);
            }
            for row in col + 1..n {
                let f = a[row * n + col] / a[col * n + col];
                for k in col..n {
                    a[row * n + k] -= f * a[col * n + k];
                }
                x[row] -= f * x[col];
            }
        }
        for row in (0..n).rev() {
            let s: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
            x[row] = (x[row] - s) / a[row * n + row];
        }
        Some(x)
    }

    /// Eigenvalues from the characteristic polynomial. Triangular matrices
    /// return their diagonal unchanged.
    pub fn eigenvalues(&self) -> Vec<Complex64> {
        if self.is_triangular() {
            return (0..self.n).map(|i| Complex64::new(self[(i, i)], 0.0)).collect();
        }
        match self.n {
            1 => vec![Complex64::new(self[(0, 0)], 0.0)],
            2 => {
                let (r1, r2) = quadratic_roots(1.0, -self.trace(), self.det());
                vec![r1, r2]
            }
            3 => {
                let a = |i, j| self[(i, j)];
                let minors = a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0) + a(0, 0) * a(2, 2)
                    - a(0, 2) * a(2, 0)
                    + a(1, 1) * a(2, 2)
                    - a(1, 2) * a(2, 1);
                cubic_roots(-self.trace(), minors, -self.det())
            }
            _ => unimplemented!("eigenvalues only for dimension <= 3"),
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

impl Serialize for Matrix {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

/// Roots of `a z^2 + b z + c` without cancellation in the real case.
fn quadratic_roots(a: f64, b: f64, c: f64) -> (Complex64, Complex64) {
    let disc = b * b - 4.0 * a * c;
    if disc >= 0.0 {
        let sq = disc.sqrt();
        let q = -0.5 * (b + b.signum() * sq);
        if q == 0.0 {
            // b == 0 and c == 0
            return (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
        }
        let (r1, r2) = (q / a, c / q);
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        (Complex64::new(lo, 0.0), Complex64::new(hi, 0.0))
    } else {
        let re = -b / (2.0 * a);
        let im = (-disc).sqrt() / (2.0 * a.abs());
        (Complex64::new(re, -im), Complex64::new(re, im))
    }
}

/// Roots of the monic cubic `z^3 + a2 z^2 + a1 z + a0`: one real root by
/// Cardano's formula polished with Newton steps, then deflation.
fn cubic_roots(a2: f64, a1: f64, a0: f64) -> Vec<Complex64> {
    let p = a1 - a2 * a2 / 3.0;
    let q = 2.0 * a2 * a2 * a2 / 27.0 - a2 * a1 / 3.0 + a0;
    let shift = -a2 / 3.0;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    let y = if disc > 0.0 {
        let s = disc.sqrt();
        (-q / 2.0 + s).cbrt() + (-q / 2.0 - s).cbrt()
    } else if p == 0.0 {
        0.0
    } else {
        // three real roots; take the one of largest magnitude for a stable deflation
        let m = 2.0 * (-p / 3.0).sqrt();
        let arg = ((3.0 * q) / (p * m)).clamp(-1.0, 1.0);
        let theta = arg.acos() / 3.0;
        let ys = [0.0, 1.0, 2.0].map(|k| m * (theta - 2.0 * std::f64::consts::PI * k / 3.0).cos());
        ys.into_iter().map(|y| (y + shift, y)).max_by(|a, b| a.0.abs().total_cmp(&b.0.abs())).unwrap().1
    };
    let mut z = y + shift;
    let poly = |z: f64| ((z + a2) * z + a1) * z + a0;
    let dpoly = |z: f64| (3.0 * z + 2.0 * a2) * z + a1;
    for _ in 0..4 {
        let d = dpoly(z);
        if d == 0.0 {
            break;
        }
        let next = z - poly(z) / d;
        if poly(next).abs() >= poly(z).abs() {
            break;
        }
        z = next;
    }
    // z^3 + a2 z^2 + a1 z + a0 = (z - root)(z^2 + b z + c)
    let b = a2 + z;
    let c = a1 + z * b;
    let (r1, r2) = quadratic_roots(1.0, b, c);
    let mut roots = vec![Complex64::new(z, 0.0), r1, r2];
    roots.sort_by(|u, v| u.re.total_cmp(&v.re).then(u.im.total_cmp(&v.im)));
    roots
}
