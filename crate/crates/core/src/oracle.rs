//! Brute-force finite-dimensional validator of the extension <-> form
//! correspondence, independent of the mesh pipeline: ambient R^N with the
//! identity mass, a random PSD base form, D the span of the first N - d
//! coordinates, everything checked with dense arithmetic.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KreinError, Result};
use crate::forms::{
    assemble_extension, reparameterize_form, AmbientSpace, AssembledOperator, BasisLabel,
    DeficiencyBasis, ExtensionSpec, QuadraticForm,
};
use crate::linalg::SymBand;
use crate::spectral;

pub const CHECK_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct RandomInstance {
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    /// How many degenerate draws were discarded before this one.
    pub redraws: u64,
    pub eta: f64,
    pub base_form: DMatrix<f64>,
    pub ambient: Arc<AmbientSpace>,
}

impl RandomInstance {
    pub fn from_parts(base_form: DMatrix<f64>, d: usize, eta: f64, seed: u64) -> Result<Self> {
        let n = base_form.nrows();
        if d == 0 || d >= n {
            return Err(KreinError::Validation(format!(
                "codimension {d} invalid for dimension {n}"
            )));
        }
        if eta >= 0.0 {
            return Err(KreinError::EtaNotNegative(eta));
        }
        let mut mass = SymBand::zeros(n, 0);
        for i in 0..n {
            mass.set(i, i, 1.0);
        }
        let ambient = Arc::new(AmbientSpace::new(mass, (0..n - d).collect()));
        Ok(RandomInstance {
            n,
            d,
            seed,
            redraws: 0,
            eta,
            base_form,
            ambient,
        })
    }

    pub fn friedrichs_form(&self) -> QuadraticForm {
        use crate::linalg::SymBordered;
        let ni = self.n - self.d;
        let a_ii = self.base_form.view((0, 0), (ni, ni)).into_owned();
        QuadraticForm {
            form: SymBordered::from_band(SymBand::from_dense(&a_ii)),
            mass: SymBordered::from_band(SymBand::from_dense(&DMatrix::identity(ni, ni))),
            basis_labels: (0..ni).map(BasisLabel::Interior).collect(),
            eta_tag: None,
        }
    }

    /// Basis of `N_eta`: all h with `((A0 - eta) h)` vanishing on the D
    /// rows, normalized to identity traces on the last d coordinates.
    pub fn deficiency_basis(&self, eta: f64) -> Result<DeficiencyBasis> {
        if eta >= 0.0 {
            return Err(KreinError::EtaNotNegative(eta));
        }
        let ni = self.n - self.d;
        let a_ii = self.base_form.view((0, 0), (ni, ni)).into_owned();
        let a_ib = self.base_form.view((0, ni), (ni, self.d)).into_owned();
        let shifted = &a_ii - eta * DMatrix::identity(ni, ni);
        let lu = shifted.lu();
        let mut vectors = Vec::with_capacity(self.d);
        for s in 0..self.d {
            let rhs = -a_ib.column(s);
            let x = lu
                .solve(&DVector::from_column_slice(rhs.as_slice()))
                .ok_or(KreinError::SingularDecomposition)?;
            let mut h = vec![0.0; self.n];
            h[..ni].copy_from_slice(x.as_slice());
            h[ni + s] = 1.0;
            vectors.push(h);
        }
        Ok(DeficiencyBasis {
            eta,
            vectors,
            labels: (0..self.d).map(BasisLabel::Deficiency).collect(),
        })
    }

    pub fn assemble(&self, spec: &ExtensionSpec) -> Result<AssembledOperator> {
        let basis = self.deficiency_basis(self.eta)?;
        assemble_extension(&self.ambient, &self.friedrichs_form(), &basis, spec)
    }

    /// A random nonempty subspace of the deficiency space with a random PSD
    /// form on it.
    pub fn random_general_spec(&self, rng: &mut ChaCha8Rng) -> ExtensionSpec {
        let ds = rng.gen_range(1..=self.d);
        // random coefficients; rejection-free independence via QR would be
        // overkill at these dimensions, a fresh draw is almost surely fine
        let subspace: Vec<Vec<f64>> = (0..ds)
            .map(|_| (0..self.d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let c = DMatrix::from_fn(ds, ds, |_, _| rng.gen_range(-1.0..1.0));
        let q = &c * c.transpose();
        ExtensionSpec::General {
            eta: self.eta,
            subspace,
            q_matrix: q,
        }
    }
}

pub fn generate_instance(n: usize, d: usize, seed: u64) -> Result<RandomInstance> {
    if d == 0 || d >= n {
        return Err(KreinError::Validation(format!(
            "codimension {d} invalid for dimension {n}"
        )));
    }
    if n > 12 {
        return Err(KreinError::Validation(format!(
            "oracle dimension capped at 12, got {n}"
        )));
    }
    for redraws in 0..64u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e3779b97f4a7c15) ^ redraws);
        let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let a0 = &b * b.transpose();
        let svd = a0.clone().svd(false, false);
        let smin: f64 = svd.singular_values.min();
        let cond = svd.singular_values.max() / smin.max(1e-300);
        if cond > 1e8 {
            continue;
        }
        let mut inst = RandomInstance::from_parts(a0, d, -1.0, seed)?;
        inst.redraws = redraws;
        return Ok(inst);
    }
    Err(KreinError::Numerical(
        "no well-conditioned draw in 64 attempts".into(),
    ))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckFailure {
    pub seed: u64,
    pub check: String,
    pub residual: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Report {
    pub seed: u64,
    pub spec: String,
    pub failures: Vec<CheckFailure>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    /// One JSON line per failure.
    pub fn to_json_lines(&self) -> String {
        self.failures
            .iter()
            .map(|f| serde_json::to_string(f).unwrap())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

fn dense_resolvent(op: &AssembledOperator, z: f64) -> Result<DMatrix<f64>> {
    let r = spectral::Resolvent::new(op, z)?;
    let n = op.ambient.dim();
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = r.apply_ambient(&e);
        for i in 0..n {
            m[(i, j)] = col[i];
        }
    }
    Ok(m)
}

fn min_sym_eig(m: &DMatrix<f64>) -> f64 {
    let sym = 0.5 * (m + m.transpose());
    sym.symmetric_eigen().eigenvalues.min()
}

/// Dense property checks of one (instance, spec) pair:
/// (a) the assembled form agrees with the base form on D x dom(nu);
/// (b) the unperturbed extension is bounded below by eta;
/// (c) resolvent ordering between Krein, the spec, and Friedrichs;
/// (d) a Krein spec attains eta with multiplicity >= dim N_eta;
/// (e) reparameterization at eta' = 2 eta preserves dim(dom(q)).
pub fn verify_correspondence(instance: &RandomInstance, spec: &ExtensionSpec) -> Result<Report> {
    spec.validate(instance.d)?;
    let mut report = Report {
        seed: instance.seed,
        spec: spec.name().to_string(),
        failures: Vec::new(),
    };
    let fail = |report: &mut Report, check: &str, residual: f64| {
        report.failures.push(CheckFailure {
            seed: instance.seed,
            check: check.to_string(),
            residual,
        });
    };

    let eta = instance.eta;
    let op = instance.assemble(spec)?;

    // (a) extension property on D x dom(nu)
    let ni = instance.n - instance.d;
    let mut worst = 0.0f64;
    let scale = instance.base_form.norm();
    for i in 0..ni {
        for col in 0..op.dim() {
            let mut e = vec![0.0; op.dim()];
            e[col] = 1.0;
            let v = op.embed(&e);
            let via_base: f64 = (0..instance.n)
                .map(|r| instance.base_form[(i, r)] * v[r])
                .sum();
            let via_form = op.form.form.get(i, col);
            worst = worst.max((via_form - via_base).abs());
        }
    }
    if worst > CHECK_TOL * scale.max(1.0) {
        fail(&mut report, "extension-property", worst);
    }

    // (b) lower bound
    if op.lower_bound_estimate < eta - CHECK_TOL {
        fail(
            &mut report,
            "lower-bound",
            eta - op.lower_bound_estimate,
        );
    }

    // (c) ordering at lambda = eta - 1
    let lambda = eta - 1.0;
    let krein = instance.assemble(&ExtensionSpec::Krein { eta })?;
    let fried = instance.assemble(&ExtensionSpec::Friedrichs)?;
    let r_spec = dense_resolvent(&op, lambda)?;
    let r_krein = dense_resolvent(&krein, lambda)?;
    let r_fried = dense_resolvent(&fried, lambda)?;
    let below = min_sym_eig(&(&r_krein - &r_spec));
    if below < -CHECK_TOL {
        fail(&mut report, "ordering-krein-above", -below);
    }
    let above = min_sym_eig(&(&r_spec - &r_fried));
    if above < -CHECK_TOL {
        fail(&mut report, "ordering-friedrichs-below", -above);
    }

    // (d) Krein attains eta with full multiplicity
    if matches!(spec, ExtensionSpec::Krein { .. }) {
        let (vals, _) = spectral::lowest_eigenpairs(&op, op.dim())?;
        let mult = vals
            .iter()
            .filter(|&&v| (v - eta).abs() <= 1e-8 * (1.0 + eta.abs()))
            .count();
        if mult < instance.d {
            fail(&mut report, "krein-eigenvalue-multiplicity", mult as f64);
        }
    }

    // (e) dimension invariance under reparameterization
    let eta2 = 2.0 * eta;
    let basis2 = instance.deficiency_basis(eta2)?;
    let spec2 = reparameterize_form(&op, &instance.friedrichs_form(), &basis2, eta2)?;
    let dim_before = match spec {
        ExtensionSpec::Friedrichs => 0,
        ExtensionSpec::Krein { .. } => instance.d,
        ExtensionSpec::General { subspace, .. } => subspace.len(),
    };
    let dim_after = match &spec2 {
        ExtensionSpec::Friedrichs => 0,
        ExtensionSpec::Krein { .. } => instance.d,
        ExtensionSpec::General { subspace, .. } => subspace.len(),
    };
    if dim_before != dim_after {
        fail(
            &mut report,
            "reparameterization-dimension",
            (dim_after as f64) - (dim_before as f64),
        );
    }

    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimension_bookkeeping() {
        let inst = generate_instance(4, 1, 7).unwrap();
        let basis = inst.deficiency_basis(inst.eta).unwrap();
        assert_eq!(basis.vectors.len(), 1);
        assert_eq!(inst.ambient.interior.len(), 3);
        assert_eq!(inst.ambient.boundary, vec![3]);
    }

    #[test]
    fn same_seed_reproduces_the_instance_exactly() {
        let a = generate_instance(8, 2, 123).unwrap();
        let b = generate_instance(8, 2, 123).unwrap();
        assert_eq!(a.base_form, b.base_form);
        assert_eq!(a.redraws, b.redraws);
    }

    #[test]
    fn friedrichs_and_krein_differ_on_a_two_dimensional_model() {
        // base form = identity on D, coupled to the extra coordinate
        let a0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.7, 0.7, 2.0]);
        let inst = RandomInstance::from_parts(a0, 1, -1.0, 0).unwrap();
        let lambda = -2.0;
        let rf = dense_resolvent(&inst.assemble(&ExtensionSpec::Friedrichs).unwrap(), lambda)
            .unwrap();
        let rk = dense_resolvent(
            &inst.assemble(&ExtensionSpec::Krein { eta: -1.0 }).unwrap(),
            lambda,
        )
        .unwrap();
        assert!((&rk - &rf).norm() > 1e-3);
        // and the difference is still ordered
        assert!(min_sym_eig(&(&rk - &rf)) >= -1e-12);
    }

    #[test]
    fn friedrichs_spec_passes_all_checks() {
        for seed in 0..5 {
            let inst = generate_instance(6, 2, seed).unwrap();
            let report = verify_correspondence(&inst, &ExtensionSpec::Friedrichs).unwrap();
            assert!(report.passed(), "{:?}", report.failures);
        }
    }

    #[test]
    fn random_specs_pass_on_a_seed_sample() {
        for seed in 0..10 {
            let inst = generate_instance(8, 2, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
            let specs = vec![
                ExtensionSpec::Friedrichs,
                ExtensionSpec::Krein { eta: inst.eta },
                inst.random_general_spec(&mut rng),
            ];
            for spec in specs {
                let report = verify_correspondence(&inst, &spec).unwrap();
                assert!(report.passed(), "seed {seed}: {:?}", report.failures);
            }
        }
    }

    #[test]
    fn negated_q_is_rejected_up_front() {
        let inst = generate_instance(6, 2, 3).unwrap();
        let bad = ExtensionSpec::General {
            eta: inst.eta,
            subspace: vec![vec![1.0, 0.0]],
            q_matrix: DMatrix::from_element(1, 1, -2.0),
        };
        assert!(matches!(
            verify_correspondence(&inst, &bad),
            Err(KreinError::NotPositiveSemidefinite { .. })
        ));
    }

    #[test]
    fn failure_reports_serialize_as_json_lines() {
        let r = Report {
            seed: 9,
            spec: "krein".into(),
            failures: vec![CheckFailure {
                seed: 9,
                check: "lower-bound".into(),
                residual: 1e-3,
            }],
        };
        let line = r.to_json_lines();
        assert!(line.contains("\"seed\":9"));
        assert!(line.contains("lower-bound"));
        let back: CheckFailure = serde_json::from_str(&line).unwrap();
        assert_eq!(back.check, "lower-bound");
    }
}
