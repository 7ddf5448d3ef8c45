//! Discrete Friedrichs form, deficiency profiles, the relative form-bound
//! constants (a, b), and the admissibility curve n -> (V_n h, h).

use std::sync::Arc;

use crate::error::{KreinError, Result};
use crate::forms::{AmbientSpace, BasisLabel, DeficiencyBasis, QuadraticForm};
use crate::linalg::{SymBand, SymBordered};
use crate::schrodinger::mesh::Mesh;
use crate::schrodinger::potential::{
    assemble_potential, Level, RegularizingSequence, SingularPotential,
};

#[derive(Clone, Debug)]
pub struct Discretization {
    pub mesh: Mesh,
    pub ambient: Arc<AmbientSpace>,
    /// Ambient stiffness (Dirichlet at +-L, trace slots kept).
    pub stiffness: SymBand,
}

/// Best (a, b) pair found for `(V f, f) <= a (K f, f) + b (M f, f)` on the
/// trace-free space, and the coupling range it certifies.
#[derive(Clone, Copy, Debug)]
pub struct FormBoundEstimate {
    pub a: f64,
    pub b: f64,
    pub alpha_max: f64,
}

#[derive(Clone, Debug)]
pub struct AdmissibilityCurve {
    pub points: Vec<(f64, f64)>,
    /// False when the mesh does not resolve the cutoff radius of the
    /// largest level with at least 5 elements.
    pub reliable: bool,
}

impl Discretization {
    pub fn new(mesh: Mesh) -> Self {
        let (stiffness, _) = mesh.stiffness_mass();
        let ambient = mesh.ambient_space();
        Discretization {
            mesh,
            ambient,
            stiffness,
        }
    }

    /// The Dirichlet-at-0 form: stiffness and mass restricted to the
    /// trace-free unknowns.
    pub fn friedrichs_form(&self) -> QuadraticForm {
        let interior = &self.ambient.interior;
        let k_int = self.stiffness.restrict(interior);
        let m_int = self.ambient.mass.restrict(interior);
        QuadraticForm {
            form: SymBordered::from_band(k_int),
            mass: SymBordered::from_band(m_int),
            basis_labels: interior.iter().map(|&i| BasisLabel::Interior(i)).collect(),
            eta_tag: None,
        }
    }

    /// Nodal interpolants of the two decaying solutions of `-u'' = eta u`
    /// on the truncated domain, one supported per side, trace value 1 at 0.
    ///
    /// `h_plus(x) = sinh(s(L - x)) / sinh(sL)` with `s = sqrt(-eta)`,
    /// evaluated through scaled exponentials so that `sL` in the hundreds
    /// never overflows.
    pub fn deficiency_basis(&self, eta: f64) -> Result<DeficiencyBasis> {
        if eta >= 0.0 {
            return Err(KreinError::EtaNotNegative(eta));
        }
        let s = (-eta).sqrt();
        let l = self.mesh.half_length;
        let denom = -(-2.0 * s * l).exp_m1();
        let profile = |x: f64| (-s * x).exp() * (-(-2.0 * s * (l - x)).exp_m1()) / denom;
        let dim = self.mesh.ambient_dim();
        let k = self.mesh.k_per_side;
        let mut h_minus = vec![0.0; dim];
        let mut h_plus = vec![0.0; dim];
        for i in 0..dim {
            let x = self.mesh.dof_position(i);
            if i < k {
                h_minus[i] = profile(-x);
            } else {
                h_plus[i] = profile(x);
            }
        }
        Ok(DeficiencyBasis {
            eta,
            vectors: vec![h_minus, h_plus],
            labels: vec![BasisLabel::DeficiencyMinus, BasisLabel::DeficiencyPlus],
        })
    }

    /// For each b in the grid, a(b) is the largest eigenvalue of the pencil
    /// `(W_full, K + b M)` on the trace-free space, found by inertia
    /// bisection (robust against the eigenvalue clustering of the Hardy
    /// case); the returned pair minimizes a.
    pub fn estimate_form_bound(
        &self,
        potential: &SingularPotential,
        b_grid: &[f64],
    ) -> Result<FormBoundEstimate> {
        if potential.zero {
            return Ok(FormBoundEstimate {
                a: 0.0,
                b: 0.0,
                alpha_max: f64::INFINITY,
            });
        }
        if b_grid.is_empty() {
            return Err(KreinError::Validation("empty b grid".into()));
        }
        let interior = &self.ambient.interior;
        let w = assemble_potential(&self.mesh, potential, Level::Full, false)?
            .restrict(interior);
        let k_int = self.stiffness.restrict(interior);
        let m_int = self.ambient.mass.restrict(interior);
        let dim = w.dim();

        let mut best: Option<(f64, f64)> = None;
        for &b in b_grid {
            let p = SymBand::scaled_sum(1.0, &k_int, b, &m_int);
            let (neg, _) = p.tridiag_inertia()?;
            if neg > 0 {
                return Err(KreinError::IndefinitePencil { b });
            }
            let count_below = |lambda: f64| -> Result<usize> {
                let s = SymBand::scaled_sum(1.0, &w, -lambda, &p);
                Ok(s.tridiag_inertia()?.0)
            };
            // W is PSD and P positive definite, so the spectrum sits in
            // [0, hi] once all eigenvalues count below hi
            let mut hi = 1.0;
            while count_below(hi)? < dim {
                hi *= 2.0;
                if hi > 1e300 {
                    return Err(KreinError::Numerical("form-bound bracket failed".into()));
                }
            }
            let mut lo = 0.0;
            for _ in 0..200 {
                if hi - lo <= 1e-13 * hi.max(1.0) {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                if count_below(mid)? < dim {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let a = 0.5 * (lo + hi);
            if best.map(|(ba, _)| a < ba).unwrap_or(true) {
                best = Some((a, b));
            }
        }
        let (a, b) = best.unwrap();
        Ok(FormBoundEstimate {
            a,
            b,
            alpha_max: 1.0 / a,
        })
    }

    /// Values `(V_n h, h)` along a level schedule, via the exact cutoff
    /// quadrature.  The curve is tagged unreliable when the mesh puts fewer
    /// than 5 elements inside the cutoff radius of the largest level.
    pub fn admissibility_curve(
        &self,
        seq: &RegularizingSequence,
        h: &[f64],
        levels: &[f64],
    ) -> Result<AdmissibilityCurve> {
        if h.len() != self.mesh.ambient_dim() {
            return Err(KreinError::DimensionMismatch {
                context: "deficiency vector vs mesh",
                expected: self.mesh.ambient_dim(),
                got: h.len(),
            });
        }
        let reliable = if seq.base.zero {
            true
        } else {
            let n_max = levels.iter().cloned().fold(0.0f64, f64::max);
            let x_cut = seq.base.cutoff_radius(n_max);
            self.mesh.elements_below(x_cut) >= 5
        };
        let mut points = Vec::with_capacity(levels.len());
        let mut prev = -f64::INFINITY;
        for &n in levels {
            let w = assemble_potential(&self.mesh, &seq.base, Level::Cutoff(n), true)?;
            let wh = w.matvec(h);
            let value: f64 = wh.iter().zip(h).map(|(a, b)| a * b).sum();
            if value < prev - 1e-12 * value.abs().max(1.0) {
                return Err(KreinError::Numerical(
                    "admissibility values decreased along the schedule".into(),
                ));
            }
            prev = value;
            points.push((n, value));
        }
        Ok(AdmissibilityCurve { points, reliable })
    }
}
