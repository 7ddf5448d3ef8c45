//! Symmetric banded matrices with a small dense border.
//!
//! Everything in the lab is a symmetric pencil (F, M).  On the mesh side both
//! matrices are tridiagonal; extension operators add a handful of dense
//! columns for the deficiency directions.  Storing that structure explicitly
//! keeps factorizations O(n) and sidesteps sparse-solver dependencies.

use nalgebra::DMatrix;

use crate::error::KreinError;

/// Symmetric banded matrix, lower storage: `bands[k][i] = A[i+k][i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SymBand {
    n: usize,
    p: usize,
    bands: Vec<Vec<f64>>,
}

impl SymBand {
    pub fn zeros(n: usize, p: usize) -> Self {
        let p = p.min(n.saturating_sub(1));
        SymBand {
            n,
            p,
            bands: (0..=p).map(|_| vec![0.0; n]).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.p
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        if hi - lo > self.p {
            0.0
        } else {
            self.bands[hi - lo][lo]
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        assert!(hi - lo <= self.p, "entry outside band");
        self.bands[hi - lo][lo] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        assert!(hi - lo <= self.p, "entry outside band");
        self.bands[hi - lo][lo] += v;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            y[i] += self.bands[0][i] * x[i];
        }
        for k in 1..=self.p {
            for i in 0..self.n.saturating_sub(k) {
                let a = self.bands[k][i];
                if a != 0.0 {
                    y[i + k] += a * x[i];
                    y[i] += a * x[i + k];
                }
            }
        }
        y
    }

    /// `ca * a + cb * b`, bandwidth is the max of the two.
    pub fn scaled_sum(ca: f64, a: &SymBand, cb: f64, b: &SymBand) -> SymBand {
        assert_eq!(a.n, b.n);
        let p = a.p.max(b.p);
        let mut out = SymBand::zeros(a.n, p);
        for k in 0..=p {
            for i in 0..a.n {
                let mut v = 0.0;
                if k <= a.p {
                    v += ca * a.bands[k][i];
                }
                if k <= b.p {
                    v += cb * b.bands[k][i];
                }
                out.bands[k][i] = v;
            }
        }
        out
    }

    pub fn scale(&self, c: f64) -> SymBand {
        let mut out = self.clone();
        for band in &mut out.bands {
            for v in band.iter_mut() {
                *v *= c;
            }
        }
        out
    }

    /// Restriction to a sorted subset of indices.  All dropped couplings that
    /// would fall back inside the band must be zero, which holds for mesh
    /// restrictions (removed trace DOFs only touch their direct neighbours).
    pub fn restrict(&self, keep: &[usize]) -> SymBand {
        let mut out = SymBand::zeros(keep.len(), self.p.min(keep.len().saturating_sub(1)));
        for (ii, &i) in keep.iter().enumerate() {
            for (jj, &j) in keep.iter().enumerate().skip(ii) {
                let v = self.get(i, j);
                if v != 0.0 {
                    out.set(ii, jj, v);
                }
                if jj - ii >= out.p.max(1) + 1 {
                    break;
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for j in i..(i + self.p + 1).min(self.n) {
                let v = self.get(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    pub fn from_dense(m: &DMatrix<f64>) -> SymBand {
        let n = m.nrows();
        let mut p = 0;
        for i in 0..n {
            for j in i..n {
                if m[(i, j)] != 0.0 {
                    p = p.max(j - i);
                }
            }
        }
        let mut out = SymBand::zeros(n, p);
        for i in 0..n {
            for j in i..(i + p + 1).min(n) {
                out.set(i, j, 0.5 * (m[(i, j)] + m[(j, i)]));
            }
        }
        out
    }

    pub fn max_abs_diag(&self) -> f64 {
        self.bands[0].iter().fold(0.0f64, |a, &v| a.max(v.abs()))
    }

    /// Banded Cholesky; `None` when the matrix is not positive definite.
    pub fn cholesky(&self) -> Option<BandCholesky> {
        let n = self.n;
        let p = self.p;
        let mut l = self.clone();
        for j in 0..n {
            let start = j.saturating_sub(p);
            let mut d = l.bands[0][j];
            for k in start..j {
                let v = l.bands[j - k][k];
                d -= v * v;
            }
            if d <= 0.0 || !d.is_finite() {
                return None;
            }
            let dj = d.sqrt();
            l.bands[0][j] = dj;
            let end = (j + p + 1).min(n);
            for i in (j + 1)..end {
                let mut s = l.bands[i - j][j];
                let kstart = i.saturating_sub(p);
                for k in kstart..j {
                    s -= l.bands[i - k][k] * l.bands[j - k][k];
                }
                l.bands[i - j][j] = s / dj;
            }
        }
        Some(BandCholesky { l })
    }

    /// Inertia of a symmetric tridiagonal matrix via the unpivoted LDL^T
    /// recurrence (Sturm count).  Bandwidth must be <= 1.
    pub fn tridiag_inertia(&self) -> Result<(usize, usize), KreinError> {
        if self.p > 1 {
            return Err(KreinError::Numerical(
                "inertia count requires a tridiagonal matrix".into(),
            ));
        }
        let scale = self.max_abs_diag().max(1e-300);
        let pivmin = scale * 1e-290;
        let mut neg = 0usize;
        let mut pos = 0usize;
        let mut d = 1.0f64;
        for i in 0..self.n {
            let e = if i == 0 || self.p == 0 {
                0.0
            } else {
                self.bands[1][i - 1]
            };
            let mut di = self.bands[0][i] - e * e / d;
            if di.abs() < pivmin {
                di = -pivmin;
            }
            if di < 0.0 {
                neg += 1;
            } else {
                pos += 1;
            }
            d = di;
        }
        Ok((neg, pos))
    }
}

/// Cholesky factor of a `SymBand`, stored in band layout.
#[derive(Clone, Debug)]
pub struct BandCholesky {
    l: SymBand,
}

impl BandCholesky {
    pub fn dim(&self) -> usize {
        self.l.n
    }

    /// Solve `L y = b`.
    pub fn forward(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.n;
        let p = self.l.p;
        let mut y = b.to_vec();
        for j in 0..n {
            y[j] /= self.l.bands[0][j];
            let yj = y[j];
            let end = (j + p + 1).min(n);
            for i in (j + 1)..end {
                y[i] -= self.l.bands[i - j][j] * yj;
            }
        }
        y
    }

    /// Solve `L^T x = y`.
    pub fn backward(&self, y: &[f64]) -> Vec<f64> {
        let n = self.l.n;
        let p = self.l.p;
        let mut x = y.to_vec();
        for j in (0..n).rev() {
            let end = (j + p + 1).min(n);
            let mut s = x[j];
            for i in (j + 1)..end {
                s -= self.l.bands[i - j][j] * x[i];
            }
            x[j] = s / self.l.bands[0][j];
        }
        x
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.backward(&self.forward(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_spd_band(n: usize, p: usize, seed: u64) -> SymBand {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut a = SymBand::zeros(n, p);
        for i in 0..n {
            for j in i..(i + p + 1).min(n) {
                a.set(i, j, rng.gen_range(-1.0..1.0));
            }
            let v = a.get(i, i);
            a.set(i, i, v + 2.0 * (p as f64 + 1.0));
        }
        a
    }

    #[test]
    fn cholesky_solves_banded_system() {
        for &(n, p) in &[(5usize, 1usize), (40, 1), (23, 3), (8, 7)] {
            let a = random_spd_band(n, p, 11 + n as u64);
            let chol = a.cholesky().expect("spd");
            let b: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 0.3).collect();
            let x = chol.solve(&b);
            let r = a.matvec(&x);
            for i in 0..n {
                assert!((r[i] - b[i]).abs() < 1e-10, "residual at {i}");
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut a = SymBand::zeros(3, 1);
        a.set(0, 0, 1.0);
        a.set(1, 1, -2.0);
        a.set(2, 2, 1.0);
        assert!(a.cholesky().is_none());
    }

    #[test]
    fn inertia_matches_dense_eigenvalues() {
        for seed in 0..10u64 {
            let mut a = random_spd_band(30, 1, 100 + seed);
            // shift to make it indefinite
            for i in 0..30 {
                let v = a.get(i, i);
                a.set(i, i, v - 4.0);
            }
            let dense = a.to_dense();
            let eig = dense.symmetric_eigen();
            let neg_true = eig.eigenvalues.iter().filter(|&&v| v < 0.0).count();
            let (neg, pos) = a.tridiag_inertia().unwrap();
            assert_eq!(neg, neg_true, "seed {seed}");
            assert_eq!(neg + pos, 30);
        }
    }

    #[test]
    fn restriction_drops_rows_and_columns() {
        let a = random_spd_band(10, 1, 7);
        let keep: Vec<usize> = vec![0, 1, 2, 4, 5, 6, 8, 9];
        let r = a.restrict(&keep);
        for (ii, &i) in keep.iter().enumerate() {
            for (jj, &j) in keep.iter().enumerate() {
                let want = if i.abs_diff(j) <= 1 && ii.abs_diff(jj) <= 1 {
                    a.get(i, j)
                } else {
                    0.0
                };
                assert_eq!(r.get(ii, jj), want);
            }
        }
    }

    proptest! {
        #[test]
        fn matvec_agrees_with_dense(seed in 0u64..50, n in 3usize..20, p in 0usize..4) {
            let a = random_spd_band(n, p, seed);
            let x: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) as f64).cos()).collect();
            let y = a.matvec(&x);
            let yd = a.to_dense() * nalgebra::DVector::from_vec(x.clone());
            for i in 0..n {
                prop_assert!((y[i] - yd[i]).abs() < 1e-12);
            }
        }
    }
}
