//! Graded mesh on [-L, L] with the origin punctured.
//!
//! Per side the nodes sit at x_k = L (k/K)^g, k = 1..K, with a Dirichlet
//! condition at x_K = L.  Unknowns per side: one trace slot at 0 (the half
//! hat on the first element) followed by the interior nodes x_1..x_{K-1}.
//! That ordering makes every matrix assembled here tridiagonal: the two
//! sides never couple through an element.

use std::sync::Arc;

use crate::error::{KreinError, Result};
use crate::forms::AmbientSpace;
use crate::linalg::SymBand;

#[derive(Clone, Debug)]
pub struct Mesh {
    pub half_length: f64,
    pub k_per_side: usize,
    pub grading_exponent: f64,
    /// x_1 < x_2 < ... < x_K = L on the positive side; the negative side is
    /// the mirror image.
    pub side_nodes: Vec<f64>,
}

/// Signed unknown index:
/// `0` is the trace at 0-, `1..K-1` the nodes -x_1..-x_{K-1},
/// `K` the trace at 0+, `K+1..2K-1` the nodes x_1..x_{K-1}.
impl Mesh {
    pub fn ambient_dim(&self) -> usize {
        2 * self.k_per_side
    }

    pub fn trace_minus(&self) -> usize {
        0
    }

    pub fn trace_plus(&self) -> usize {
        self.k_per_side
    }

    pub fn interior_indices(&self) -> Vec<usize> {
        let k = self.k_per_side;
        (1..k).chain(k + 1..2 * k).collect()
    }

    /// Coordinate of an unknown (traces map to 0.0 signed by side).
    pub fn dof_position(&self, i: usize) -> f64 {
        let k = self.k_per_side;
        if i < k {
            if i == 0 {
                -0.0
            } else {
                -self.side_nodes[i - 1]
            }
        } else if i == k {
            0.0
        } else {
            self.side_nodes[i - k - 1]
        }
    }

    /// Reflection x -> -x as a permutation of unknowns.
    pub fn mirror_permutation(&self) -> Vec<usize> {
        let k = self.k_per_side;
        (0..2 * k).map(|i| (i + k) % (2 * k)).collect()
    }

    pub fn min_spacing(&self) -> f64 {
        let mut best = self.side_nodes[0];
        for w in self.side_nodes.windows(2) {
            best = best.min(w[1] - w[0]);
        }
        best
    }

    /// One side's elements as (left, right, left unknown, right unknown)
    /// with 0 as the leftmost endpoint; unknown None at the Dirichlet end.
    pub fn side_elements(&self) -> Vec<(f64, f64, Option<usize>, Option<usize>)> {
        let k = self.k_per_side;
        let mut out = Vec::with_capacity(k);
        let mut left = 0.0;
        for (e, &right) in self.side_nodes.iter().enumerate() {
            let li = Some(e);
            let ri = if e + 1 < k { Some(e + 1) } else { None };
            out.push((left, right, li, ri));
            left = right;
        }
        out
    }

    /// Number of complete elements of the positive side inside (0, x).
    pub fn elements_below(&self, x: f64) -> usize {
        self.side_nodes.iter().take_while(|&&p| p <= x).count()
    }

    /// Assemble the ambient piecewise-linear stiffness and mass matrices
    /// (Dirichlet at +-L, trace unknowns at 0-+ kept).
    pub fn stiffness_mass(&self) -> (SymBand, SymBand) {
        let dim = self.ambient_dim();
        let k = self.k_per_side;
        let mut stiff = SymBand::zeros(dim, 1);
        let mut mass = SymBand::zeros(dim, 1);
        for side in 0..2 {
            let base = side * k;
            for (a, b, li, ri) in self.side_elements() {
                let len = b - a;
                let (ks, ms) = (1.0 / len, len / 6.0);
                if let Some(i) = li {
                    stiff.add(base + i, base + i, ks);
                    mass.add(base + i, base + i, 2.0 * ms);
                }
                if let Some(j) = ri {
                    stiff.add(base + j, base + j, ks);
                    mass.add(base + j, base + j, 2.0 * ms);
                }
                if let (Some(i), Some(j)) = (li, ri) {
                    stiff.add(base + j, base + i, -ks);
                    mass.add(base + j, base + i, ms);
                }
            }
        }
        (stiff, mass)
    }

    pub fn ambient_space(&self) -> Arc<AmbientSpace> {
        let (_, mass) = self.stiffness_mass();
        Arc::new(AmbientSpace::new(mass, self.interior_indices()))
    }
}

pub fn build_mesh(half_length: f64, k_per_side: usize, grading_exponent: f64) -> Result<Mesh> {
    if !(half_length > 0.0) {
        return Err(KreinError::Validation(format!(
            "half_length must be positive, got {half_length}"
        )));
    }
    if k_per_side < 2 {
        return Err(KreinError::Validation(format!(
            "k_per_side must be at least 2, got {k_per_side}"
        )));
    }
    if !(grading_exponent >= 1.0) {
        return Err(KreinError::Validation(format!(
            "grading_exponent must be >= 1, got {grading_exponent}"
        )));
    }
    let kf = k_per_side as f64;
    let side_nodes: Vec<f64> = (1..=k_per_side)
        .map(|k| half_length * (k as f64 / kf).powf(grading_exponent))
        .collect();
    Ok(Mesh {
        half_length,
        k_per_side,
        grading_exponent,
        side_nodes,
    })
}
