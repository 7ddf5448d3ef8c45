//! Banded-plus-border symmetric matrices and their block factorization.

use nalgebra::{DMatrix, DVector};

use super::band::{BandCholesky, SymBand};
use crate::error::KreinError;

/// Symmetric matrix of the shape `[[A, B], [B^T, C]]` with `A` banded and a
/// thin dense border `B` (one column per deficiency direction).  `nb = 0`
/// degenerates to a plain banded matrix.
#[derive(Clone, Debug)]
pub struct SymBordered {
    pub band: SymBand,
    /// Columns of `B`, each of length `band.dim()`.
    pub border: Vec<Vec<f64>>,
    pub corner: DMatrix<f64>,
}

impl SymBordered {
    pub fn from_band(band: SymBand) -> Self {
        SymBordered {
            band,
            border: Vec::new(),
            corner: DMatrix::zeros(0, 0),
        }
    }

    pub fn new(band: SymBand, border: Vec<Vec<f64>>, corner: DMatrix<f64>) -> Self {
        assert_eq!(border.len(), corner.nrows());
        assert_eq!(corner.nrows(), corner.ncols());
        for c in &border {
            assert_eq!(c.len(), band.dim());
        }
        SymBordered {
            band,
            border,
            corner,
        }
    }

    pub fn dim(&self) -> usize {
        self.band.dim() + self.border.len()
    }

    pub fn n_border(&self) -> usize {
        self.border.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let n = self.band.dim();
        match (i < n, j < n) {
            (true, true) => self.band.get(i, j),
            (true, false) => self.border[j - n][i],
            (false, true) => self.border[i - n][j],
            (false, false) => self.corner[(i - n, j - n)],
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.band.dim();
        let nb = self.border.len();
        assert_eq!(x.len(), n + nb);
        let mut y = self.band.matvec(&x[..n]);
        y.resize(n + nb, 0.0);
        for (j, col) in self.border.iter().enumerate() {
            let xc = x[n + j];
            if xc != 0.0 {
                for i in 0..n {
                    y[i] += col[i] * xc;
                }
            }
            let mut s = 0.0;
            for i in 0..n {
                s += col[i] * x[i];
            }
            y[n + j] += s;
        }
        for j in 0..nb {
            let mut s = 0.0;
            for k in 0..nb {
                s += self.corner[(j, k)] * x[n + k];
            }
            y[n + j] += s;
        }
        y
    }

    pub fn scaled_sum(ca: f64, a: &SymBordered, cb: f64, b: &SymBordered) -> SymBordered {
        assert_eq!(a.dim(), b.dim());
        assert_eq!(a.n_border(), b.n_border());
        let band = SymBand::scaled_sum(ca, &a.band, cb, &b.band);
        let border = a
            .border
            .iter()
            .zip(&b.border)
            .map(|(x, y)| x.iter().zip(y).map(|(u, v)| ca * u + cb * v).collect())
            .collect();
        let corner = ca * &a.corner + cb * &b.corner;
        SymBordered {
            band,
            border,
            corner,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.band.dim();
        let d = self.dim();
        let mut m = DMatrix::zeros(d, d);
        m.view_mut((0, 0), (n, n)).copy_from(&self.band.to_dense());
        for (j, col) in self.border.iter().enumerate() {
            for i in 0..n {
                m[(i, n + j)] = col[i];
                m[(n + j, i)] = col[i];
            }
        }
        for i in 0..self.border.len() {
            for j in 0..self.border.len() {
                m[(n + i, n + j)] = self.corner[(i, j)];
            }
        }
        m
    }

    pub fn quadratic(&self, x: &[f64]) -> f64 {
        let y = self.matvec(x);
        x.iter().zip(&y).map(|(a, b)| a * b).sum()
    }

    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let ax = self.matvec(x);
        ax.iter().zip(y).map(|(a, b)| a * b).sum()
    }

    /// Block factorization: Cholesky of the banded block plus a dense
    /// eigendecomposition of the (tiny) Schur complement on the border.  The
    /// banded block must be positive definite; the border block may carry
    /// negative inertia, which is reported rather than rejected.
    pub fn factor(&self) -> Result<BorderedFactor, KreinError> {
        let n = self.band.dim();
        let chol = self.band.cholesky().ok_or(KreinError::IndefiniteInterior)?;
        let w: Vec<Vec<f64>> = self.border.iter().map(|c| chol.forward(c)).collect();
        let nb = self.border.len();
        let mut s = self.corner.clone();
        for i in 0..nb {
            for j in 0..nb {
                let dot: f64 = w[i].iter().zip(&w[j]).map(|(a, b)| a * b).sum();
                s[(i, j)] -= dot;
            }
        }
        let (s_vals, s_vecs) = if nb > 0 {
            let eig = s.clone().symmetric_eigen();
            (eig.eigenvalues, eig.eigenvectors)
        } else {
            (DVector::zeros(0), DMatrix::zeros(0, 0))
        };
        let scale = self
            .band
            .max_abs_diag()
            .max(s_vals.iter().fold(0.0f64, |a, &v| a.max(v.abs())))
            .max(1e-300);
        let mut neg = 0usize;
        for &v in s_vals.iter() {
            if v.abs() < 1e-13 * scale {
                return Err(KreinError::Numerical(
                    "pencil numerically singular at this shift".into(),
                ));
            }
            if v < 0.0 {
                neg += 1;
            }
        }
        let _ = n;
        Ok(BorderedFactor {
            chol,
            w,
            s_vals,
            s_vecs,
            neg,
        })
    }
}

/// Factorization of a `SymBordered` matrix.
#[derive(Clone, Debug)]
pub struct BorderedFactor {
    chol: BandCholesky,
    w: Vec<Vec<f64>>,
    s_vals: DVector<f64>,
    s_vecs: DMatrix<f64>,
    neg: usize,
}

impl BorderedFactor {
    pub fn dim(&self) -> usize {
        self.chol.dim() + self.w.len()
    }

    /// True when the whole matrix is positive definite.
    pub fn is_positive_definite(&self) -> bool {
        self.neg == 0
    }

    pub fn negative_border_inertia(&self) -> usize {
        self.neg
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.chol.dim();
        let nb = self.w.len();
        assert_eq!(rhs.len(), n + nb);
        let u = self.chol.forward(&rhs[..n]);
        // t = rhs_border - W^T u
        let mut t = DVector::zeros(nb);
        for j in 0..nb {
            let dot: f64 = self.w[j].iter().zip(&u).map(|(a, b)| a * b).sum();
            t[j] = rhs[n + j] - dot;
        }
        // y = S^{-1} t via the eigendecomposition
        let mut y = DVector::zeros(nb);
        if nb > 0 {
            let c = self.s_vecs.transpose() * &t;
            let scaled = DVector::from_iterator(nb, c.iter().zip(self.s_vals.iter()).map(|(v, s)| v / s));
            y = &self.s_vecs * scaled;
        }
        let mut u2 = u;
        for j in 0..nb {
            let yj = y[j];
            if yj != 0.0 {
                for i in 0..n {
                    u2[i] -= self.w[j][i] * yj;
                }
            }
        }
        let mut x = self.chol.backward(&u2);
        x.extend(y.iter().copied());
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_bordered(n: usize, nb: usize, seed: u64, definite: bool) -> SymBordered {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut band = SymBand::zeros(n, 1);
        for i in 0..n {
            band.set(i, i, 4.0 + rng.gen_range(0.0..1.0));
            if i + 1 < n {
                band.set(i, i + 1, rng.gen_range(-1.0..1.0));
            }
        }
        let border: Vec<Vec<f64>> = (0..nb)
            .map(|_| (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect())
            .collect();
        let mut corner = DMatrix::zeros(nb, nb);
        for i in 0..nb {
            for j in i..nb {
                let v = rng.gen_range(-0.5..0.5);
                corner[(i, j)] = v;
                corner[(j, i)] = v;
            }
            corner[(i, i)] += if definite { 3.0 } else { -6.0 };
        }
        SymBordered::new(band, border, corner)
    }

    #[test]
    fn factor_solves_definite_and_indefinite_systems() {
        for &definite in &[true, false] {
            let a = random_bordered(25, 3, 42, definite);
            let f = a.factor().expect("factorable");
            assert_eq!(f.is_positive_definite(), definite);
            let b: Vec<f64> = (0..a.dim()).map(|i| (i as f64 * 0.7).sin()).collect();
            let x = f.solve(&b);
            let r = a.matvec(&x);
            for i in 0..a.dim() {
                assert!((r[i] - b[i]).abs() < 1e-9, "residual {i}: {}", r[i] - b[i]);
            }
        }
    }

    #[test]
    fn matvec_matches_dense() {
        let a = random_bordered(10, 2, 5, true);
        let d = a.to_dense();
        let x: Vec<f64> = (0..12).map(|i| (i as f64).cos()).collect();
        let y = a.matvec(&x);
        let yd = d * nalgebra::DVector::from_vec(x);
        for i in 0..12 {
            assert!((y[i] - yd[i]).abs() < 1e-12);
        }
    }
}
