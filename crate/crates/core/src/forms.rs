//! Correspondence between semibounded self-adjoint extensions and
//! nonnegative forms on the deficiency subspace, at the level of finite
//! symmetric form matrices.
//!
//! An extension is described by its closed quadratic form on the basis
//! {interior hats} u {selected deficiency directions}:
//!
//! * interior-interior block: the Friedrichs (Dirichlet) form, untouched;
//! * cross block: eta times the mass pairing of interior hats against the
//!   deficiency directions;
//! * deficiency-deficiency block: q + eta * Gram of the directions.
//!
//! The Friedrichs extension is the empty set of directions ("q = +infinity"),
//! the Krein extension with bound eta is q = 0 on the whole deficiency space.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{KreinError, Result};
use crate::linalg::{SymBand, SymBordered};
use crate::spectral;

/// Relative tolerance for PSD checks, against the largest diagonal entry.
pub const PSD_REL_TOL: f64 = 1e-12;

/// The ambient discrete space: mass inner product plus the splitting into
/// interior (trace-free, Friedrichs-domain) coordinates and the remaining
/// boundary coordinates.
#[derive(Clone, Debug)]
pub struct AmbientSpace {
    pub mass: SymBand,
    pub interior: Vec<usize>,
    pub boundary: Vec<usize>,
}

impl AmbientSpace {
    pub fn new(mass: SymBand, interior: Vec<usize>) -> Self {
        let dim = mass.dim();
        let mut is_interior = vec![false; dim];
        for &i in &interior {
            is_interior[i] = true;
        }
        let boundary = (0..dim).filter(|&i| !is_interior[i]).collect();
        AmbientSpace {
            mass,
            interior,
            boundary,
        }
    }

    pub fn dim(&self) -> usize {
        self.mass.dim()
    }

    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        let mv = self.mass.matvec(v);
        u.iter().zip(&mv).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self, u: &[f64]) -> f64 {
        self.inner(u, u).max(0.0).sqrt()
    }

    pub fn restrict_interior(&self, v: &[f64]) -> Vec<f64> {
        self.interior.iter().map(|&i| v[i]).collect()
    }

    pub fn scatter_interior(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (k, &i) in self.interior.iter().enumerate() {
            out[i] = v[k];
        }
        out
    }
}

/// Tag for one degree of freedom of a form basis.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BasisLabel {
    Interior(usize),
    DeficiencyMinus,
    DeficiencyPlus,
    Deficiency(usize),
}

impl fmt::Display for BasisLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisLabel::Interior(i) => write!(f, "interior:{i}"),
            BasisLabel::DeficiencyMinus => write!(f, "deficiency:-"),
            BasisLabel::DeficiencyPlus => write!(f, "deficiency:+"),
            BasisLabel::Deficiency(i) => write!(f, "deficiency:{i}"),
        }
    }
}

/// Symmetric form matrix plus mass matrix over a labelled basis.
#[derive(Clone, Debug)]
pub struct QuadraticForm {
    pub form: SymBordered,
    pub mass: SymBordered,
    pub basis_labels: Vec<BasisLabel>,
    pub eta_tag: Option<f64>,
}

impl QuadraticForm {
    pub fn dim(&self) -> usize {
        self.form.dim()
    }

    /// Symmetric-storage matrices are symmetric by construction; the check
    /// guards the dense corner blocks which are supplied by callers.
    pub fn validate(&self) -> Result<()> {
        if self.form.dim() != self.mass.dim() {
            return Err(KreinError::DimensionMismatch {
                context: "form vs mass",
                expected: self.form.dim(),
                got: self.mass.dim(),
            });
        }
        for m in [&self.form, &self.mass] {
            let c = &m.corner;
            let scale = c.iter().fold(1e-300f64, |a, v| a.max(v.abs()));
            for i in 0..c.nrows() {
                for j in 0..i {
                    if (c[(i, j)] - c[(j, i)]).abs() > 1e-12 * scale {
                        return Err(KreinError::Numerical("corner block not symmetric".into()));
                    }
                }
            }
        }
        if self.mass.factor().map(|f| !f.is_positive_definite()).unwrap_or(true) {
            return Err(KreinError::Numerical("mass matrix not positive definite".into()));
        }
        Ok(())
    }

    /// Sesquilinear value recovered from the quadratic formula by
    /// polarization: `b(u, v) = (Q(u+v) - Q(u-v)) / 4`.
    pub fn polarize(&self, u: &[f64], v: &[f64]) -> f64 {
        let sum: Vec<f64> = u.iter().zip(v).map(|(a, b)| a + b).collect();
        let diff: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - b).collect();
        0.25 * (self.form.quadratic(&sum) - self.form.quadratic(&diff))
    }
}

/// The extension parameter: a nonnegative form on (a subspace of) the
/// deficiency space.  Friedrichs is the empty subspace, Krein the zero form
/// on the whole space.
#[derive(Clone, Debug)]
pub enum ExtensionSpec {
    Friedrichs,
    Krein {
        eta: f64,
    },
    General {
        eta: f64,
        /// Coefficient vectors over the deficiency basis spanning dom(q).
        subspace: Vec<Vec<f64>>,
        q_matrix: DMatrix<f64>,
    },
}

impl ExtensionSpec {
    pub fn eta(&self) -> Option<f64> {
        match self {
            ExtensionSpec::Friedrichs => None,
            ExtensionSpec::Krein { eta } => Some(*eta),
            ExtensionSpec::General { eta, .. } => Some(*eta),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ExtensionSpec::Friedrichs => "friedrichs",
            ExtensionSpec::Krein { .. } => "krein",
            ExtensionSpec::General { .. } => "general",
        }
    }

    pub fn validate(&self, deficiency_dim: usize) -> Result<()> {
        match self {
            ExtensionSpec::Friedrichs => Ok(()),
            ExtensionSpec::Krein { eta } => {
                if *eta >= 0.0 {
                    return Err(KreinError::EtaNotNegative(*eta));
                }
                Ok(())
            }
            ExtensionSpec::General {
                eta,
                subspace,
                q_matrix,
            } => {
                if *eta >= 0.0 {
                    return Err(KreinError::EtaNotNegative(*eta));
                }
                let ds = subspace.len();
                if ds > deficiency_dim {
                    return Err(KreinError::DimensionMismatch {
                        context: "subspace vs deficiency basis",
                        expected: deficiency_dim,
                        got: ds,
                    });
                }
                for v in subspace {
                    if v.len() != deficiency_dim {
                        return Err(KreinError::DimensionMismatch {
                            context: "subspace coefficient vector",
                            expected: deficiency_dim,
                            got: v.len(),
                        });
                    }
                }
                if q_matrix.nrows() != ds || q_matrix.ncols() != ds {
                    return Err(KreinError::DimensionMismatch {
                        context: "q_matrix vs subspace",
                        expected: ds,
                        got: q_matrix.nrows(),
                    });
                }
                if ds > 0 {
                    // linear independence of the subspace vectors
                    let m = DMatrix::from_fn(deficiency_dim, ds, |i, j| subspace[j][i]);
                    let svd = m.svd(false, false);
                    let smax = svd.singular_values.max();
                    let smin = svd.singular_values.min();
                    if smin <= 1e-12 * smax.max(1.0) {
                        return Err(KreinError::Numerical(
                            "subspace vectors linearly dependent".into(),
                        ));
                    }
                    check_psd(q_matrix)?;
                }
                Ok(())
            }
        }
    }
}

/// PSD check with tolerance `PSD_REL_TOL` relative to the largest diagonal
/// entry.
pub fn check_psd(q: &DMatrix<f64>) -> Result<()> {
    let scale = (0..q.nrows()).fold(1.0f64, |a, i| a.max(q[(i, i)].abs()));
    let sym = 0.5 * (q + q.transpose());
    let min_eig = sym.symmetric_eigen().eigenvalues.min();
    if min_eig < -PSD_REL_TOL * scale {
        return Err(KreinError::NotPositiveSemidefinite { min_eig });
    }
    Ok(())
}

/// Discrete representatives of the deficiency space `ker(A* - eta)`, given
/// as ambient mesh vectors.
#[derive(Clone, Debug)]
pub struct DeficiencyBasis {
    pub eta: f64,
    pub vectors: Vec<Vec<f64>>,
    pub labels: Vec<BasisLabel>,
}

impl DeficiencyBasis {
    pub fn dim(&self) -> usize {
        self.vectors.len()
    }
}

/// An extension (or perturbed extension) as a (form, mass) pencil over the
/// combined basis, together with its ambient embedding.
#[derive(Clone, Debug)]
pub struct AssembledOperator {
    pub form: QuadraticForm,
    pub lower_bound_estimate: f64,
    pub spec: ExtensionSpec,
    /// Ambient representatives of the deficiency-direction basis columns.
    pub directions: Vec<Vec<f64>>,
    pub ambient: Arc<AmbientSpace>,
}

impl AssembledOperator {
    pub fn dim(&self) -> usize {
        self.form.dim()
    }

    /// Coefficients over the operator basis -> ambient vector.
    pub fn embed(&self, coeffs: &[f64]) -> Vec<f64> {
        let ni = self.ambient.interior.len();
        let mut out = self.ambient.scatter_interior(&coeffs[..ni]);
        for (j, dir) in self.directions.iter().enumerate() {
            let c = coeffs[ni + j];
            if c != 0.0 {
                for (o, d) in out.iter_mut().zip(dir) {
                    *o += c * d;
                }
            }
        }
        out
    }

    /// Right-hand side for a resolvent solve: `E^T M f` for an ambient `f`.
    pub fn project_rhs(&self, f_ambient: &[f64]) -> Vec<f64> {
        let mf = self.ambient.mass.matvec(f_ambient);
        let mut rhs = self.ambient.restrict_interior(&mf);
        for dir in &self.directions {
            rhs.push(dir.iter().zip(&mf).map(|(a, b)| a * b).sum());
        }
        rhs
    }
}

/// Build the form of the self-adjoint extension described by `spec`.
///
/// The interior-interior block of the output equals `friedrichs_form` exactly
/// (same storage, cloned); the cross block is eta times the mass pairing of
/// interior hats against the chosen deficiency directions; the
/// deficiency-deficiency block is `q + eta * Gram`.
pub fn assemble_extension(
    ambient: &Arc<AmbientSpace>,
    friedrichs_form: &QuadraticForm,
    deficiency: &DeficiencyBasis,
    spec: &ExtensionSpec,
) -> Result<AssembledOperator> {
    spec.validate(deficiency.dim())?;
    if friedrichs_form.dim() != ambient.interior.len() {
        return Err(KreinError::DimensionMismatch {
            context: "friedrichs form vs interior basis",
            expected: ambient.interior.len(),
            got: friedrichs_form.dim(),
        });
    }
    if let Some(eta) = spec.eta() {
        if (eta - deficiency.eta).abs() > 1e-14 * eta.abs().max(1.0) {
            return Err(KreinError::Validation(format!(
                "spec eta {} does not match deficiency basis eta {}",
                eta, deficiency.eta
            )));
        }
    }

    let (directions, labels, q, eta) = match spec {
        ExtensionSpec::Friedrichs => {
            let op = AssembledOperator {
                form: friedrichs_form.clone(),
                lower_bound_estimate: 0.0,
                spec: spec.clone(),
                directions: Vec::new(),
                ambient: Arc::clone(ambient),
            };
            return finish(op);
        }
        ExtensionSpec::Krein { eta } => {
            let d = deficiency.dim();
            (
                deficiency.vectors.clone(),
                deficiency.labels.clone(),
                DMatrix::zeros(d, d),
                *eta,
            )
        }
        ExtensionSpec::General {
            eta,
            subspace,
            q_matrix,
        } => {
            let dirs: Vec<Vec<f64>> = subspace
                .iter()
                .map(|coeffs| {
                    let mut v = vec![0.0; ambient.dim()];
                    for (c, h) in coeffs.iter().zip(&deficiency.vectors) {
                        for (vi, hi) in v.iter_mut().zip(h) {
                            *vi += c * hi;
                        }
                    }
                    v
                })
                .collect();
            let labels = (0..dirs.len()).map(BasisLabel::Deficiency).collect();
            (dirs, labels, q_matrix.clone(), *eta)
        }
    };

    let nb = directions.len();
    // mass pairings of the directions against the ambient space
    let m_dirs: Vec<Vec<f64>> = directions.iter().map(|d| ambient.mass.matvec(d)).collect();
    let mass_border: Vec<Vec<f64>> = m_dirs
        .iter()
        .map(|md| ambient.restrict_interior(md))
        .collect();
    let mut gram = DMatrix::zeros(nb, nb);
    for i in 0..nb {
        for j in 0..nb {
            gram[(i, j)] = directions[i]
                .iter()
                .zip(&m_dirs[j])
                .map(|(a, b)| a * b)
                .sum();
        }
    }
    let form_border: Vec<Vec<f64>> = mass_border
        .iter()
        .map(|c| c.iter().map(|v| eta * v).collect())
        .collect();
    let form_corner = &q + eta * &gram;

    let mut labels_all: Vec<BasisLabel> = friedrichs_form.basis_labels.clone();
    labels_all.extend(labels);

    let form = SymBordered::new(friedrichs_form.form.band.clone(), form_border, form_corner);
    let mass = SymBordered::new(friedrichs_form.mass.band.clone(), mass_border, gram);
    let qf = QuadraticForm {
        form,
        mass,
        basis_labels: labels_all,
        eta_tag: Some(eta),
    };
    finish(AssembledOperator {
        form: qf,
        lower_bound_estimate: 0.0,
        spec: spec.clone(),
        directions,
        ambient: Arc::clone(ambient),
    })
}

fn finish(mut op: AssembledOperator) -> Result<AssembledOperator> {
    op.lower_bound_estimate = spectral::smallest_eigenvalue(&op.form.form, &op.form.mass)?;
    Ok(op)
}

/// `H = A - alpha * W` over the operator's own basis; mass unchanged, lower
/// bound re-estimated.
pub fn perturb_form(
    op: &AssembledOperator,
    potential_form: &SymBordered,
    alpha: f64,
) -> Result<AssembledOperator> {
    if potential_form.dim() != op.dim() || potential_form.n_border() != op.form.form.n_border() {
        return Err(KreinError::DimensionMismatch {
            context: "potential form vs operator basis",
            expected: op.dim(),
            got: potential_form.dim(),
        });
    }
    if alpha == 0.0 {
        return Ok(op.clone());
    }
    let form = SymBordered::scaled_sum(1.0, &op.form.form, -alpha, potential_form);
    let qf = QuadraticForm {
        form,
        mass: op.form.mass.clone(),
        basis_labels: op.form.basis_labels.clone(),
        eta_tag: op.form.eta_tag,
    };
    finish(AssembledOperator {
        form: qf,
        lower_bound_estimate: 0.0,
        spec: op.spec.clone(),
        directions: op.directions.clone(),
        ambient: Arc::clone(&op.ambient),
    })
}

/// Express an ambient symmetric matrix over an operator basis
/// {interior coords} u {directions}.
pub fn ambient_matrix_in_basis(
    w: &SymBand,
    ambient: &AmbientSpace,
    directions: &[Vec<f64>],
) -> SymBordered {
    let band = w.restrict(&ambient.interior);
    let wd: Vec<Vec<f64>> = directions.iter().map(|d| w.matvec(d)).collect();
    let border: Vec<Vec<f64>> = wd.iter().map(|c| ambient.restrict_interior(c)).collect();
    let nb = directions.len();
    let mut corner = DMatrix::zeros(nb, nb);
    for i in 0..nb {
        for j in 0..nb {
            corner[(i, j)] = directions[i].iter().zip(&wd[j]).map(|(a, b)| a * b).sum();
        }
    }
    SymBordered::new(band, border, corner)
}

/// Recover the `(subspace, q)` description of an unperturbed extension at a
/// different parameter `eta_prime`, by decomposing each deficiency direction
/// along dom(nu_hat) + N_{eta_prime} and solving the form formula for q'.
pub fn reparameterize_form(
    op: &AssembledOperator,
    friedrichs_form_at: &QuadraticForm,
    deficiency_at: &DeficiencyBasis,
    eta_prime: f64,
) -> Result<ExtensionSpec> {
    if eta_prime >= 0.0 {
        return Err(KreinError::EtaNotNegative(eta_prime));
    }
    if (deficiency_at.eta - eta_prime).abs() > 1e-14 * eta_prime.abs().max(1.0) {
        return Err(KreinError::Validation(
            "deficiency basis eta does not match eta_prime".into(),
        ));
    }
    if op.directions.is_empty() {
        return Ok(ExtensionSpec::Friedrichs);
    }
    let ambient = &op.ambient;
    let nb = op.directions.len();
    let nh = deficiency_at.dim();
    let bnd = &ambient.boundary;
    if nh != bnd.len() {
        return Err(KreinError::DimensionMismatch {
            context: "deficiency basis vs boundary coordinates",
            expected: bnd.len(),
            got: nh,
        });
    }

    // Solve for the N_{eta'} components on the boundary coordinates.
    let b_bnd = DMatrix::from_fn(nh, nh, |i, s| deficiency_at.vectors[s][bnd[i]]);
    let svd = b_bnd.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= 1e-10 * smax.max(1e-300) {
        return Err(KreinError::SingularDecomposition);
    }
    let lu = b_bnd.lu();

    let mut coeffs: Vec<Vec<f64>> = Vec::with_capacity(nb);
    let mut g_parts: Vec<Vec<f64>> = Vec::with_capacity(nb);
    let mut k_parts: Vec<Vec<f64>> = Vec::with_capacity(nb);
    for d in &op.directions {
        let rhs = nalgebra::DVector::from_fn(nh, |i, _| d[bnd[i]]);
        let c = lu
            .solve(&rhs)
            .ok_or(KreinError::SingularDecomposition)?;
        let mut k = vec![0.0; ambient.dim()];
        for (s, h) in deficiency_at.vectors.iter().enumerate() {
            for (ki, hi) in k.iter_mut().zip(h) {
                *ki += c[s] * hi;
            }
        }
        let g: Vec<f64> = d.iter().zip(&k).map(|(a, b)| a - b).collect();
        // g must lie in the interior space: its boundary coordinates vanish
        for &i in bnd {
            if g[i].abs() > 1e-8 * ambient.norm(d).max(1.0) {
                return Err(KreinError::SingularDecomposition);
            }
        }
        coeffs.push(c.iter().copied().collect());
        g_parts.push(g);
        k_parts.push(k);
    }

    // The deficiency-deficiency block of the assembled form is nu~(d_i, d_j).
    let n_int = ambient.interior.len();
    let mut q_prime = DMatrix::zeros(nb, nb);
    for i in 0..nb {
        for j in 0..nb {
            let nu_ij = op.form.form.get(n_int + i, n_int + j);
            let gi = ambient.restrict_interior(&g_parts[i]);
            let gj = ambient.restrict_interior(&g_parts[j]);
            let nu_hat = friedrichs_form_at.form.bilinear(&gi, &gj);
            let gk = ambient.inner(&g_parts[i], &k_parts[j]);
            let kg = ambient.inner(&k_parts[i], &g_parts[j]);
            let kk = ambient.inner(&k_parts[i], &k_parts[j]);
            q_prime[(i, j)] = nu_ij - nu_hat - eta_prime * (gk + kg) - eta_prime * kk;
        }
    }
    let q_prime = 0.5 * (&q_prime + q_prime.transpose());
    let spec = ExtensionSpec::General {
        eta: eta_prime,
        subspace: coeffs,
        q_matrix: q_prime,
    };
    spec.validate(nh)?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral;
    use nalgebra::DVector;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Finite model with identity mass: ambient R^n, interior = first
    /// n - nb coordinates, plus a random SPD ambient form.  Deficiency
    /// vectors at eta are solved exactly from the interior rows, so every
    /// identity below holds to machine precision.
    struct Toy {
        ambient: Arc<AmbientSpace>,
        full: DMatrix<f64>,
        nb: usize,
    }

    fn toy(n: usize, nb: usize, seed: u64) -> Toy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let full = &b * b.transpose() + DMatrix::identity(n, n);
        let mut mass = SymBand::zeros(n, 0);
        for i in 0..n {
            mass.set(i, i, 1.0);
        }
        let ambient = Arc::new(AmbientSpace::new(mass, (0..n - nb).collect()));
        Toy { ambient, full, nb }
    }

    impl Toy {
        fn friedrichs(&self) -> QuadraticForm {
            let ni = self.ambient.interior.len();
            let a_ii = self.full.view((0, 0), (ni, ni)).into_owned();
            QuadraticForm {
                form: SymBordered::from_band(SymBand::from_dense(&a_ii)),
                mass: SymBordered::from_band(SymBand::from_dense(&DMatrix::identity(ni, ni))),
                basis_labels: (0..ni).map(BasisLabel::Interior).collect(),
                eta_tag: None,
            }
        }

        fn deficiency(&self, eta: f64) -> DeficiencyBasis {
            let n = self.full.nrows();
            let ni = n - self.nb;
            let a_ii = self.full.view((0, 0), (ni, ni)).into_owned();
            let a_ib = self.full.view((0, ni), (ni, self.nb)).into_owned();
            let shifted = &a_ii - eta * DMatrix::identity(ni, ni);
            let lu = shifted.lu();
            let mut vectors = Vec::new();
            for s in 0..self.nb {
                let rhs = -a_ib.column(s);
                let x = lu.solve(&DVector::from_column_slice(rhs.as_slice())).unwrap();
                let mut h = vec![0.0; n];
                h[..ni].copy_from_slice(x.as_slice());
                h[ni + s] = 1.0;
                vectors.push(h);
            }
            DeficiencyBasis {
                eta,
                vectors,
                labels: (0..self.nb).map(BasisLabel::Deficiency).collect(),
            }
        }
    }

    #[test]
    fn friedrichs_assembly_returns_the_input_form() {
        let t = toy(9, 2, 1);
        let f = t.friedrichs();
        let op = assemble_extension(&t.ambient, &f, &t.deficiency(-1.0), &ExtensionSpec::Friedrichs)
            .unwrap();
        assert_eq!(op.form.form.to_dense(), f.form.to_dense());
        assert!(op.directions.is_empty());
    }

    #[test]
    fn krein_corner_is_eta_times_the_gram() {
        let t = toy(8, 2, 2);
        let eta = -1.0;
        let basis = t.deficiency(eta);
        let op = assemble_extension(
            &t.ambient,
            &t.friedrichs(),
            &basis,
            &ExtensionSpec::Krein { eta },
        )
        .unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let gram: f64 = basis.vectors[i]
                    .iter()
                    .zip(&basis.vectors[j])
                    .map(|(a, b)| a * b)
                    .sum();
                let got = op.form.form.get(6 + i, 6 + j);
                assert!((got - eta * gram).abs() <= 1e-12 * gram.abs());
            }
        }
        // interior-interior block untouched (machine equality)
        let f = t.friedrichs();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(op.form.form.get(i, j), f.form.get(i, j));
            }
        }
    }

    #[test]
    fn krein_attains_its_lower_bound_through_the_deficiency_directions() {
        let t = toy(10, 2, 3);
        let eta = -1.5;
        let basis = t.deficiency(eta);
        let op = assemble_extension(
            &t.ambient,
            &t.friedrichs(),
            &basis,
            &ExtensionSpec::Krein { eta },
        )
        .unwrap();
        assert!(op.lower_bound_estimate >= eta - 1e-8);
        assert!(op.lower_bound_estimate <= eta + 1e-8);
        // each direction is a generalized eigenvector at eta
        for j in 0..2 {
            let mut e = vec![0.0; op.dim()];
            e[8 + j] = 1.0;
            let res = spectral::eigen_residual(&op, eta, &e);
            let mh: f64 = op.form.mass.matvec(&e).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(res <= 1e-8 * mh, "{res}");
        }
    }

    #[test]
    fn stiff_q_drives_the_resolvent_to_friedrichs() {
        let t = toy(11, 2, 4);
        let eta = -1.0;
        let basis = t.deficiency(eta);
        let f = t.friedrichs();
        let fr = assemble_extension(&t.ambient, &f, &basis, &ExtensionSpec::Friedrichs).unwrap();
        let z = -3.0;
        let rf = spectral::Resolvent::new(&fr, z).unwrap();
        let probe: Vec<f64> = (0..11).map(|i| ((i * i) % 7) as f64 - 3.0).collect();
        let target = rf.apply_ambient(&probe);
        let subspace = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let mut errs = Vec::new();
        for e in [0, 2, 4, 6] {
            let q = DMatrix::identity(2, 2) * 10.0f64.powi(e);
            let spec = ExtensionSpec::General {
                eta,
                subspace: subspace.clone(),
                q_matrix: q,
            };
            let op = assemble_extension(&t.ambient, &f, &basis, &spec).unwrap();
            let r = spectral::Resolvent::new(&op, z).unwrap();
            let got = r.apply_ambient(&probe);
            let err: f64 = got
                .iter()
                .zip(&target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            errs.push(err);
        }
        assert!(errs.last().unwrap() <= &(1e-4 * errs[0]), "{errs:?}");
    }

    #[test]
    fn perturbation_by_the_mass_shifts_the_spectrum() {
        let t = toy(9, 2, 5);
        let basis = t.deficiency(-1.0);
        let op = assemble_extension(
            &t.ambient,
            &t.friedrichs(),
            &basis,
            &ExtensionSpec::Krein { eta: -1.0 },
        )
        .unwrap();
        let same = perturb_form(&op, &op.form.mass, 0.0).unwrap();
        assert_eq!(same.form.form.to_dense(), op.form.form.to_dense());
        let shifted = perturb_form(&op, &op.form.mass, 1.0).unwrap();
        assert!(
            (shifted.lower_bound_estimate - (op.lower_bound_estimate - 1.0)).abs() <= 1e-9
        );
    }

    #[test]
    fn reparameterization_at_the_same_eta_is_the_identity() {
        let t = toy(10, 2, 6);
        let eta = -1.0;
        let basis = t.deficiency(eta);
        let f = t.friedrichs();
        let q0 = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let spec = ExtensionSpec::General {
            eta,
            subspace: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            q_matrix: q0.clone(),
        };
        let op = assemble_extension(&t.ambient, &f, &basis, &spec).unwrap();
        match reparameterize_form(&op, &f, &basis, eta).unwrap() {
            ExtensionSpec::General {
                subspace, q_matrix, ..
            } => {
                for (j, c) in subspace.iter().enumerate() {
                    for (s, v) in c.iter().enumerate() {
                        let want = if s == j { 1.0 } else { 0.0 };
                        assert!((v - want).abs() <= 1e-10);
                    }
                }
                assert!((&q_matrix - &q0).norm() <= 1e-10);
            }
            other => panic!("expected a general spec, got {other:?}"),
        }
    }

    #[test]
    fn krein_reparameterized_keeps_its_dimension_and_round_trips() {
        let t = toy(12, 2, 7);
        let eta = -1.0;
        let eta2 = -2.0;
        let basis = t.deficiency(eta);
        let basis2 = t.deficiency(eta2);
        let f = t.friedrichs();
        let op = assemble_extension(&t.ambient, &f, &basis, &ExtensionSpec::Krein { eta }).unwrap();
        let spec2 = reparameterize_form(&op, &f, &basis2, eta2).unwrap();
        let (subspace, q2) = match &spec2 {
            ExtensionSpec::General {
                subspace, q_matrix, ..
            } => (subspace.clone(), q_matrix.clone()),
            other => panic!("expected a general spec, got {other:?}"),
        };
        assert_eq!(subspace.len(), 2);
        // no longer the zero form at the new parameter
        assert!(q2.norm() > 1e-6);
        // the reassembled operator represents the same form: values on the
        // original directions and against interior vectors agree
        let op2 = assemble_extension(&t.ambient, &f, &basis2, &spec2).unwrap();
        let ni = t.ambient.interior.len();
        let coeffs_in = |op: &AssembledOperator, v: &[f64]| -> Vec<f64> {
            // interior coordinates plus border coefficients recovered from
            // the boundary coordinates (directions have identity traces
            // in both bases here)
            let nb = op.directions.len();
            let mut border = vec![0.0; nb];
            for (j, d) in op.directions.iter().enumerate() {
                border[j] = v[ni + j] / d[ni + j];
            }
            let mut rest: Vec<f64> = v[..ni].to_vec();
            for (j, d) in op.directions.iter().enumerate() {
                for i in 0..ni {
                    rest[i] -= border[j] * d[i];
                }
            }
            rest.extend(border);
            rest
        };
        for trial in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + trial);
            let v: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = op.form.form.quadratic(&coeffs_in(&op, &v));
            let b = op2.form.form.quadratic(&coeffs_in(&op2, &v));
            assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn loewner_resolvent_ordering_across_the_three_extensions() {
        let t = toy(10, 2, 8);
        let eta = -1.0;
        let basis = t.deficiency(eta);
        let f = t.friedrichs();
        let krein =
            assemble_extension(&t.ambient, &f, &basis, &ExtensionSpec::Krein { eta }).unwrap();
        let general = assemble_extension(
            &t.ambient,
            &f,
            &basis,
            &ExtensionSpec::General {
                eta,
                subspace: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                q_matrix: DMatrix::identity(2, 2) * 3.0,
            },
        )
        .unwrap();
        let fried = assemble_extension(&t.ambient, &f, &basis, &ExtensionSpec::Friedrichs).unwrap();
        let z = eta - 1.0;
        let rk = spectral::Resolvent::new(&krein, z).unwrap();
        let rg = spectral::Resolvent::new(&general, z).unwrap();
        let rf = spectral::Resolvent::new(&fried, z).unwrap();
        let n = 10;
        let as_matrix = |r: &spectral::Resolvent<'_>| -> DMatrix<f64> {
            let mut m = DMatrix::zeros(n, n);
            for j in 0..n {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                let col = r.apply_ambient(&e);
                for i in 0..n {
                    m[(i, j)] = col[i];
                }
            }
            m
        };
        let mk = as_matrix(&rk);
        let mg = as_matrix(&rg);
        let mf = as_matrix(&rf);
        for diff in [&mk - &mg, &mg - &mf] {
            let sym = 0.5 * (&diff + diff.transpose());
            let min = sym.symmetric_eigen().eigenvalues.min();
            assert!(min >= -1e-9, "{min}");
        }
    }

    #[test]
    fn polarization_recovers_bilinear_values() {
        let t = toy(9, 2, 9);
        let basis = t.deficiency(-1.0);
        let op = assemble_extension(
            &t.ambient,
            &t.friedrichs(),
            &basis,
            &ExtensionSpec::Krein { eta: -1.0 },
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let dim = op.dim();
        for _ in 0..10 {
            let u: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let by_polarization = op.form.polarize(&u, &v);
            let direct = op.form.form.bilinear(&u, &v);
            let sym = op.form.form.bilinear(&v, &u);
            assert!((by_polarization - direct).abs() <= 1e-10 * direct.abs().max(1.0));
            assert!((direct - sym).abs() <= 1e-12 * direct.abs().max(1.0));
            let quad = op.form.form.quadratic(&u);
            assert!((op.form.polarize(&u, &u) - quad).abs() <= 1e-10 * quad.abs().max(1.0));
        }
    }

    #[test]
    fn growing_q_never_lowers_an_eigenvalue() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..5 {
            let t = toy(9, 2, 20 + trial);
            let basis = t.deficiency(-1.0);
            let f = t.friedrichs();
            let b = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0));
            let q1 = &b * b.transpose();
            let bump = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0));
            let q2 = &q1 + &bump * bump.transpose();
            let eigs = |q: DMatrix<f64>| {
                let spec = ExtensionSpec::General {
                    eta: -1.0,
                    subspace: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                    q_matrix: q,
                };
                let op = assemble_extension(&t.ambient, &f, &basis, &spec).unwrap();
                spectral::lowest_eigenpairs(&op, 5).unwrap().0
            };
            let e1 = eigs(q1.clone());
            let e2 = eigs(q2.clone());
            for (a, b) in e1.iter().zip(&e2) {
                assert!(b >= &(a - 1e-10), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let t = toy(8, 2, 12);
        let basis = t.deficiency(-1.0);
        let f = t.friedrichs();
        assert!(matches!(
            assemble_extension(&t.ambient, &f, &basis, &ExtensionSpec::Krein { eta: 1.0 }),
            Err(KreinError::EtaNotNegative(_))
        ));
        let bad_q = ExtensionSpec::General {
            eta: -1.0,
            subspace: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            q_matrix: DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]),
        };
        assert!(matches!(
            assemble_extension(&t.ambient, &f, &basis, &bad_q),
            Err(KreinError::NotPositiveSemidefinite { .. })
        ));
        let dependent = ExtensionSpec::General {
            eta: -1.0,
            subspace: vec![vec![1.0, 1.0], vec![2.0, 2.0]],
            q_matrix: DMatrix::identity(2, 2),
        };
        assert!(assemble_extension(&t.ambient, &f, &basis, &dependent).is_err());
        // eta mismatch between spec and basis
        assert!(assemble_extension(&t.ambient, &f, &basis, &ExtensionSpec::Krein { eta: -2.0 })
            .is_err());
    }
}
