//! Small linear-algebra kernels: dense Gaussian elimination and a banded LU
//! with partial pivoting for the collocation Newton systems.

use crate::error::{HjbError, Result};
use crate::scalar::Real;

/// Solves `A x = b` in place (`b` becomes `x`) for a row-major `n × n` matrix.
pub fn solve_dense<T: Real>(a: &mut [T], b: &mut [T], n: usize) -> Result<()> {
    let scale = a.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    if scale == T::zero() || !scale.is_finite() {
        return Err(HjbError::SingularJacobian);
    }
    let tiny = scale * T::epsilon() * T::from_f64(1e-3).unwrap();
    for k in 0..n {
        let mut p = k;
        for i in k + 1..n {
            if a[i * n + k].abs() > a[p * n + k].abs() {
                p = i;
            }
        }
        if a[p * n + k].abs() <= tiny {
            return Err(HjbError::SingularJacobian);
        }
        if p != k {
            for j in 0..n {
                a.swap(k * n + j, p * n + j);
            }
            b.swap(k, p);
        }
        let piv = a[k * n + k];
        for i in k + 1..n {
            let l = a[i * n + k] / piv;
            if l != T::zero() {
                for j in k + 1..n {
                    let akj = a[k * n + j];
                    a[i * n + j] -= l * akj;
                }
                let bk = b[k];
                b[i] -= l * bk;
            }
        }
    }
    for k in (0..n).rev() {
        let mut s = b[k];
        for j in k + 1..n {
            s -= a[k * n + j] * b[j];
        }
        b[k] = s / a[k * n + k];
    }
    Ok(())
}

/// Inverse of a row-major `n × n` matrix.
/// Solves `A x = b` in place for symmetric positive definite `A` by
/// Cholesky; `SingularJacobian` when `A` is not numerically positive definite.
pub fn cholesky_solve(a: &[f64], b: &mut [f64], n: usize) -> Result<()> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > 0.0) {
            return Err(HjbError::SingularJacobian);
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    Ok(())
}

pub fn invert_dense<T: Real>(a: &[T], n: usize) -> Result<Vec<T>> {
    let mut inv = vec![T::zero(); n * n];
    for c in 0..n {
        let mut m = a.to_vec();
        let mut e = vec![T::zero(); n];
        e[c] = T::one();
        solve_dense(&mut m, &mut e, n)?;
        for r in 0..n {
            inv[r * n + c] = e[r];
        }
    }
    Ok(inv)
}

/// One-norm condition number; infinite for singular matrices.
pub fn condition_number<T: Real>(a: &[T], n: usize) -> T {
    let norm1 = |m: &[T]| {
        (0..n)
            .map(|c| (0..n).fold(T::zero(), |s, r| s + m[r * n + c].abs()))
            .fold(T::zero(), |x, y| x.max(y))
    };
    match invert_dense(a, n) {
        Ok(inv) => norm1(a) * norm1(&inv),
        Err(_) => T::infinity(),
    }
}

/// Square band matrix with `kl` sub- and `ku` super-diagonals, stored with
/// room for the extra `kl` super-diagonals created by row pivoting.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
    pivots: Vec<usize>,
    factored: bool,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        BandMatrix {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
            pivots: Vec::new(),
            factored: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline(always)]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.ku + self.kl, "({i},{j}) outside band");
        i * self.width + (j + self.kl - i)
    }

    #[inline(always)]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.ku + self.kl {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// Adds `v` to entry `(i, j)`; the entry must lie inside the band.
    #[inline(always)]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(j + self.kl >= i && j <= i + self.ku, "({i},{j}) outside band");
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    /// In-place LU factorization with partial pivoting.
    pub fn factor(&mut self) -> Result<()> {
        let n = self.n;
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 || !scale.is_finite() {
            return Err(HjbError::SingularJacobian);
        }
        let tiny = scale * f64::EPSILON * 1e-3;
        self.pivots = vec![0; n];
        for k in 0..n {
            let last_row = (k + self.kl).min(n - 1);
            let last_col = (k + self.ku + self.kl).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for i in k + 1..=last_row {
                let v = self.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= tiny {
                return Err(HjbError::SingularJacobian);
            }
            self.pivots[k] = p;
            if p != k {
                for j in k..=last_col {
                    let a = self.idx(k, j);
                    let b = self.idx(p, j);
                    self.data.swap(a, b);
                }
            }
            let piv = self.data[self.idx(k, k)];
            for i in k + 1..=last_row {
                let ik = self.idx(i, k);
                let l = self.data[ik] / piv;
                self.data[ik] = l;
                if l != 0.0 {
                    for j in k + 1..=last_col {
                        let kj = self.data[self.idx(k, j)];
                        let ij = self.idx(i, j);
                        self.data[ij] -= l * kj;
                    }
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    /// Solves `A x = b` in place using the stored factorization.
    pub fn solve(&self, b: &mut [f64]) {
        assert!(self.factored, "BandMatrix::solve before factor");
        let n = self.n;
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            for i in k + 1..=(k + self.kl).min(n - 1) {
                b[i] -= self.data[self.idx(i, k)] * bk;
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for j in k + 1..=(k + self.ku + self.kl).min(n - 1) {
                s -= self.data[self.idx(k, j)] * b[j];
            }
            b[k] = s / self.data[self.idx(k, k)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_matches_dense() {
        let a = [4.0, 1.0, 0.5, 1.0, 3.0, -0.2, 0.5, -0.2, 2.0];
        let mut b1 = vec![1.0, -2.0, 0.5];
        let mut b2 = b1.clone();
        cholesky_solve(&a, &mut b1, 3).unwrap();
        solve_dense(&mut a.clone(), &mut b2, 3).unwrap();
        for (x, y) in b1.iter().zip(&b2) {
            assert!((x - y).abs() < 1e-14);
        }
        assert!(cholesky_solve(&[1.0, 2.0, 2.0, 1.0], &mut [1.0, 1.0], 2).is_err());
    }
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_solve_with_pivoting() {
        let mut a = vec![0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 3.0, 0.0, 1.0];
        let x = [1.0, -2.0, 0.5];
        let mut b: Vec<f64> = (0..3).map(|i| (0..3).map(|j| a[i * 3 + j] * x[j]).sum()).collect();
        solve_dense(&mut a, &mut b, 3).unwrap();
        for (u, v) in b.iter().zip(x) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn dense_singular() {
        let mut a = vec![1.0, 2.0, 2.0, 4.0];
        let mut b = vec![1.0, 1.0];
        assert_eq!(solve_dense(&mut a, &mut b, 2), Err(HjbError::SingularJacobian));
        assert!(condition_number::<f64>(&[1.0, 2.0, 2.0, 4.0], 2).is_infinite());
        assert!((condition_number::<f64>(&[2.0, 0.0, 0.0, 1.0], 2) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn banded_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(n, kl, ku) in &[(12usize, 2usize, 3usize), (30, 5, 4), (7, 0, 2), (9, 3, 0)] {
            let mut band = BandMatrix::zeros(n, kl, ku);
            let mut dense = vec![0.0; n * n];
            for i in 0..n {
                for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                    // small diagonal forces pivoting
                    let v = if i == j { 0.05 + 0.1 * rng.gen::<f64>() } else { rng.gen_range(-1.0..1.0) };
                    band.add(i, j, v);
                    dense[i * n + j] = v;
                }
            }
            let rhs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut xb = rhs.clone();
            let mut xd = rhs.clone();
            band.factor().unwrap();
            band.solve(&mut xb);
            solve_dense(&mut dense, &mut xd, n).unwrap();
            for (a, b) in xb.iter().zip(&xd) {
                assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn banded_singular() {
        let mut band = BandMatrix::zeros(3, 1, 1);
        band.add(0, 0, 1.0);
        band.add(1, 1, 0.0);
        band.add(2, 2, 1.0);
        assert_eq!(band.factor(), Err(HjbError::SingularJacobian));
    }
}
