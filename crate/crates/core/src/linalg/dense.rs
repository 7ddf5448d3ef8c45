//! Dense helpers for small instances (the brute-force oracle and tests).

use nalgebra::{DMatrix, DVector};

use crate::error::KreinError;

/// All eigenpairs of the symmetric-definite pencil `F x = lambda M x`,
/// ascending, with M-orthonormal eigenvectors.
pub fn generalized_eig(
    f: &DMatrix<f64>,
    m: &DMatrix<f64>,
) -> Result<(Vec<f64>, Vec<DVector<f64>>), KreinError> {
    let n = f.nrows();
    assert_eq!(m.nrows(), n);
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| KreinError::Numerical("mass matrix not positive definite".into()))?;
    let l = chol.l();
    // C = L^{-1} F L^{-T}
    let mut c = f.clone();
    l.solve_lower_triangular_mut(&mut c);
    let mut ct = c.transpose();
    l.solve_lower_triangular_mut(&mut ct);
    let sym = 0.5 * (&ct + &ct.transpose());
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let mut vals = Vec::with_capacity(n);
    let mut vecs = Vec::with_capacity(n);
    let lt = l.transpose();
    for &i in &order {
        vals.push(eig.eigenvalues[i]);
        let y = eig.eigenvectors.column(i).into_owned();
        let x = lt
            .solve_upper_triangular(&y)
            .ok_or_else(|| KreinError::Numerical("triangular solve failed".into()))?;
        vecs.push(x);
    }
    Ok((vals, vecs))
}

/// Smallest eigenvalue of the pencil `(A, M)`; both symmetric, `M` positive
/// definite.
pub fn min_generalized_eigenvalue(a: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<f64, KreinError> {
    Ok(generalized_eig(a, m)?.0[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_pencil() {
        let f = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 2.0]));
        let m = DMatrix::identity(3, 3);
        let (vals, vecs) = generalized_eig(&f, &m).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-12);
        assert!((vals[2] - 3.0).abs() < 1e-12);
        // M-orthonormality
        for v in &vecs {
            assert!((v.norm() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn scaled_mass_shifts_values() {
        let f = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 2.0]));
        let (vals, _) = generalized_eig(&f, &m).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-12);
        assert!((vals[1] - 2.0).abs() < 1e-12);
    }
}
