//! Square band matrices with an in-place LU factorization (no pivoting).
//!
//! The Newton systems `I + dt·J` of the implicit scheme are strictly diagonally
//! dominant or symmetric positive definite for the supported coefficients, so
//! pivoting is not needed; a vanishing pivot is reported as an error.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct BandMatrix {
    n: usize,
    bw: usize,
    // row-major, row i holds columns i-bw ..= i+bw
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (2 * bw + 1)],
        }
    }

    pub fn identity(n: usize, bw: usize) -> Self {
        let mut m = Self::zeros(n, bw);
        for i in 0..n {
            m.add(i, i, 1.0);
        }
        m
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(i.abs_diff(j) <= self.bw, "entry ({i},{j}) outside band {}", self.bw);
        i * (2 * self.bw + 1) + (j + self.bw - i)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i.abs_diff(j) > self.bw {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    /// `self ← α·self + β·I`.
    pub fn scale_add_identity(&mut self, alpha: f64, beta: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
        for i in 0..self.n {
            self.add(i, i, beta);
        }
    }

    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let hi = (i + self.bw).min(self.n - 1);
            out[i] = (lo..=hi).map(|j| self.data[self.slot(i, j)] * x[j]).sum();
        }
    }

    /// Factorizes in place into unit-lower `L` and upper `U` sharing the band.
    pub fn factorize(&mut self) -> Result<()> {
        let (n, bw) = (self.n, self.bw);
        for k in 0..n {
            let pivot = self.data[self.slot(k, k)];
            if pivot == 0.0 || !pivot.is_finite() {
                return Err(Error::SingularPivot(k));
            }
            let hi = (k + bw).min(n - 1);
            for i in k + 1..=hi {
                let s = self.slot(i, k);
                let factor = self.data[s] / pivot;
                self.data[s] = factor;
                if factor == 0.0 {
                    continue;
                }
                for j in k + 1..=hi {
                    let kj = self.data[self.slot(k, j)];
                    let ij = self.slot(i, j);
                    self.data[ij] -= factor * kj;
                }
            }
        }
        Ok(())
    }

    /// Solves `LU x = b` in place after [`BandMatrix::factorize`].
    pub fn solve_factored(&self, b: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let s: f64 = (lo..i).map(|j| self.data[self.slot(i, j)] * b[j]).sum();
            b[i] -= s;
        }
        for i in (0..n).rev() {
            let hi = (i + bw).min(n - 1);
            let s: f64 = (i + 1..=hi).map(|j| self.data[self.slot(i, j)] * b[j]).sum();
            b[i] = (b[i] - s) / self.data[self.slot(i, i)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_tridiagonal_system() {
        let n = 6;
        let mut a = BandMatrix::zeros(n, 1);
        for i in 0..n {
            a.add(i, i, 4.0);
            if i > 0 {
                a.add(i, i - 1, -1.0);
            }
            if i + 1 < n {
                a.add(i, i + 1, -2.0);
            }
        }
        let x: Vec<f64> = (0..n).map(|i| i as f64 - 2.5).collect();
        let mut b = vec![0.0; n];
        a.matvec(&x, &mut b);
        let mut lu = a.clone();
        lu.factorize().unwrap();
        lu.solve_factored(&mut b);
        for (u, v) in b.iter().zip(&x) {
            assert!((u - v).abs() < 1e-13);
        }
    }

    #[test]
    fn solves_wider_band() {
        let n = 12;
        let bw = 3;
        let mut a = BandMatrix::zeros(n, bw);
        for i in 0..n {
            for j in i.saturating_sub(bw)..=(i + bw).min(n - 1) {
                let v = if i == j { 10.0 } else { 1.0 / (1.0 + (i + 2 * j) as f64) };
                a.add(i, j, v);
            }
        }
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut b = vec![0.0; n];
        a.matvec(&x, &mut b);
        a.factorize().unwrap();
        a.solve_factored(&mut b);
        for (u, v) in b.iter().zip(&x) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_pivot_is_reported() {
        let mut a = BandMatrix::zeros(3, 1);
        a.add(0, 0, 1.0);
        assert!(matches!(a.factorize(), Err(Error::SingularPivot(1))));
    }
}
