//! Small dense complex Hermitian solves for the adaptive beamformer.

use num_complex::Complex64;

/// Lower-triangular Cholesky factor of a Hermitian positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    l: Vec<Complex64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CholeskyError {
    /// Pivot `index` was not strictly positive.
    NotPositiveDefinite { index: usize },
}

impl Cholesky {
    /// Factor a row-major `n x n` Hermitian matrix. Only the lower triangle is read.
    pub fn factor(a: &[Complex64], n: usize) -> Result<Self, CholeskyError> {
        assert_eq!(a.len(), n * n);
        let mut l = vec![Complex64::new(0.0, 0.0); n * n];
        for j in 0..n {
            let mut d = a[j * n + j].re;
            for k in 0..j {
                d -= l[j * n + k].norm_sqr();
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(CholeskyError::NotPositiveDefinite { index: j });
            }
            let ljj = d.sqrt();
            l[j * n + j] = Complex64::new(ljj, 0.0);
            for i in (j + 1)..n {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k].conj();
                }
                l[i * n + j] = s / ljj;
            }
        }
        Ok(Self { n, l })
    }

    /// Squared ratio of the largest to smallest pivot: a cheap lower bound
    /// on the 2-norm condition number.
    pub fn condition_estimate(&self) -> f64 {
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..self.n {
            let d = self.l[i * self.n + i].re;
            lo = lo.min(d);
            hi = hi.max(d);
        }
        (hi / lo).powi(2)
    }

    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[i * n + k] * y[k];
            }
            y[i] = s / self.l[i * n + i].re;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[k * n + i].conj() * y[k];
            }
            y[i] = s / self.l[i * n + i].re;
        }
        y
    }
}

/// `x^H y`
pub fn inner(x: &[Complex64], y: &[Complex64]) -> Complex64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

/// `w^H A w` for row-major Hermitian `A`.
pub fn quadratic_form(a: &[Complex64], w: &[Complex64]) -> f64 {
    let n = w.len();
    let mut s = Complex64::new(0.0, 0.0);
    for i in 0..n {
        let mut row = Complex64::new(0.0, 0.0);
        for j in 0..n {
            row += a[i * n + j] * w[j];
        }
        s += w[i].conj() * row;
    }
    s.re
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn solves_hermitian_system() {
        let a = vec![c(4.0, 0.0), c(1.0, -2.0), c(1.0, 2.0), c(6.0, 0.0)];
        let ch = Cholesky::factor(&a, 2).unwrap();
        let b = vec![c(1.0, 1.0), c(-2.0, 0.5)];
        let x = ch.solve(&b);
        for i in 0..2 {
            let r: Complex64 = (0..2).map(|j| a[i * 2 + j] * x[j]).sum();
            assert!((r - b[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn rejects_indefinite() {
        let a = vec![c(1.0, 0.0), c(2.0, 0.0), c(2.0, 0.0), c(1.0, 0.0)];
        assert_eq!(
            Cholesky::factor(&a, 2).unwrap_err(),
            CholeskyError::NotPositiveDefinite { index: 1 }
        );
    }
}
