//! Experiment orchestration: the cut-off operator sequences, convergence /
//! admissibility / spectrum-tracking runs, and their reports.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, ExperimentSection};
use crate::error::{KreinError, Result};
use crate::forms::{
    ambient_matrix_in_basis, assemble_extension, perturb_form, AssembledOperator,
    DeficiencyBasis, ExtensionSpec, QuadraticForm,
};
use crate::report::{ConvergenceReport, ReportRow};
use crate::schrodinger::fem::Discretization;
use crate::schrodinger::mesh::build_mesh;
use crate::schrodinger::potential::{
    assemble_potential, Level, RegularizingSequence, SingularPotential,
};
use crate::spectral;

/// Everything a run needs, resolved from the raw config: the mesh, the
/// certified (a, b) pair, the actual coupling and shift, the deficiency
/// basis, and the parsed extension specs.
pub struct LabSetup {
    pub config: ExperimentConfig,
    pub disc: Discretization,
    pub potential: SingularPotential,
    pub alpha: f64,
    pub alpha_max: f64,
    pub b: f64,
    pub z: f64,
    pub basis: DeficiencyBasis,
    pub friedrichs: QuadraticForm,
    pub specs: Vec<(String, ExtensionSpec)>,
    pub schedule: Vec<f64>,
    pub warnings: Vec<String>,
}

fn parse_spec(token: &str, eta: f64, deficiency_dim: usize) -> Result<ExtensionSpec> {
    match token {
        "friedrichs" => Ok(ExtensionSpec::Friedrichs),
        "krein" => Ok(ExtensionSpec::Krein { eta }),
        other => {
            if let Some(t) = other.strip_prefix("general:") {
                let t: f64 = t.parse().map_err(|_| {
                    KreinError::Validation(format!("cannot parse general spec `{other}`"))
                })?;
                let subspace = (0..deficiency_dim)
                    .map(|j| {
                        (0..deficiency_dim)
                            .map(|s| if s == j { 1.0 } else { 0.0 })
                            .collect()
                    })
                    .collect();
                Ok(ExtensionSpec::General {
                    eta,
                    subspace,
                    q_matrix: nalgebra::DMatrix::identity(deficiency_dim, deficiency_dim) * t,
                })
            } else {
                Err(KreinError::Validation(format!(
                    "unknown extension spec `{other}`"
                )))
            }
        }
    }
}

/// The cutoff level actually assembled: the schedule value, clipped by the
/// permanent cap when one is configured.
fn effective_level(config: &ExperimentConfig, n: f64) -> f64 {
    match config.potential.permanent_cap {
        Some(cap) => n.min(cap),
        None => n,
    }
}

pub fn resolve(config: &ExperimentConfig) -> Result<LabSetup> {
    config.validate()?;
    let mut warnings = Vec::new();
    let mesh = build_mesh(
        config.mesh.half_length,
        config.mesh.k_per_side,
        config.mesh.grading_exponent,
    )?;
    let disc = Discretization::new(mesh);
    let potential = if config.potential.zero {
        SingularPotential::zero()
    } else {
        SingularPotential::new(config.potential.kappa, config.potential.beta)?
    };

    let est = disc.estimate_form_bound(&potential, &config.experiment.b_grid)?;
    let alpha = match (config.experiment.alpha, config.experiment.alpha_fraction) {
        (Some(a), None) => a,
        (None, Some(frac)) => frac * est.alpha_max,
        (None, None) => 0.0,
        (Some(_), Some(_)) => unreachable!("rejected by validate"),
    };
    if alpha > 0.0 && alpha >= est.alpha_max {
        return Err(KreinError::Validation(format!(
            "coupling {alpha} violates the admissible range alpha < 1/a = {}",
            est.alpha_max
        )));
    }

    let eta = config.experiment.eta;
    let uniform_bound = eta - alpha * est.b;
    let z = config.experiment.z.unwrap_or(uniform_bound - 2.0);
    spectral::Shift::new(z).validate(uniform_bound)?;

    let basis = disc.deficiency_basis(eta)?;
    let friedrichs = disc.friedrichs_form();
    let specs: Vec<(String, ExtensionSpec)> = config
        .experiment
        .specs
        .iter()
        .map(|tok| Ok((tok.clone(), parse_spec(tok, eta, basis.dim())?)))
        .collect::<Result<_>>()?;

    // the phenomenon lives at the cutoff radius; warn (and, for the default
    // schedule, clip) when the mesh stops resolving it
    let mut schedule = config.experiment.schedule.clone();
    if !potential.zero {
        let admissible_max = potential.value(disc.mesh.side_nodes[4]);
        if schedule == ExperimentSection::default().schedule {
            let len_before = schedule.len();
            schedule.retain(|&n| n <= admissible_max);
            if schedule.is_empty() {
                schedule.push(admissible_max);
            }
            if schedule.len() != len_before {
                warnings.push(format!(
                    "default schedule clipped to the mesh-admissible maximum {admissible_max:.3e}"
                ));
            }
        } else if let Some(&n_max) = schedule.last() {
            if effective_level(config, n_max) > admissible_max {
                warnings.push(format!(
                    "mesh under-resolves the cutoff radius at n = {n_max:.3e} \
                     (admissible maximum {admissible_max:.3e}); results unreliable"
                ));
            }
        }
    }

    Ok(LabSetup {
        config: config.clone(),
        disc,
        potential,
        alpha,
        alpha_max: est.alpha_max,
        b: est.b,
        z,
        basis,
        friedrichs,
        specs,
        schedule,
        warnings,
    })
}

/// Worker pool honoring the KREINLAB_THREADS cap.
fn thread_pool() -> rayon::ThreadPool {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("KREINLAB_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n > 0 {
                builder = builder.num_threads(n);
            }
        }
    }
    builder.build().expect("thread pool")
}

/// The fixed strong-convergence probe family: three seeded Gaussian mesh
/// vectors (traces zeroed), a smooth trace-free bump, and the same bump
/// with its trace components kept.
pub fn test_vectors(setup: &LabSetup, seed: u64) -> Vec<(String, Vec<f64>)> {
    let disc = &setup.disc;
    let dim = disc.mesh.ambient_dim();
    let traces = [disc.mesh.trace_minus(), disc.mesh.trace_plus()];
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for g in 0..3 {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for &t in &traces {
            v[t] = 0.0;
        }
        out.push((format!("gauss{g}"), v));
    }
    let bump = |x: f64| (-(x - 2.0) * (x - 2.0)).exp();
    let mut smooth: Vec<f64> = (0..dim).map(|i| bump(disc.mesh.dof_position(i))).collect();
    let mut with_trace = smooth.clone();
    for &t in &traces {
        smooth[t] = 0.0;
        with_trace[t] = bump(0.0);
    }
    out.push(("bump".into(), smooth));
    out.push(("bump-trace".into(), with_trace));
    out
}

struct SequencePoint {
    n: f64,
    spec: String,
    sre_errors: Vec<(String, f64)>,
    norm_est: f64,
    adm_plus: f64,
    adm_minus: f64,
    eigs: [f64; 3],
    warnings: Vec<String>,
}

fn assemble_at_level(
    setup: &LabSetup,
    spec: &ExtensionSpec,
    n: f64,
) -> Result<AssembledOperator> {
    let level = effective_level(&setup.config, n);
    let op0 = assemble_extension(&setup.disc.ambient, &setup.friedrichs, &setup.basis, spec)?;
    if setup.alpha == 0.0 {
        return Ok(op0);
    }
    let w = assemble_potential(
        &setup.disc.mesh,
        &setup.potential,
        Level::Cutoff(level),
        true,
    )?;
    let w_basis = ambient_matrix_in_basis(&w, &setup.disc.ambient, &op0.directions);
    perturb_form(&op0, &w_basis, setup.alpha)
}

/// The reference operator: the Friedrichs form sum with the full singular
/// quadrature on the trace-free space.
pub fn reference_operator(setup: &LabSetup) -> Result<AssembledOperator> {
    let op = assemble_extension(
        &setup.disc.ambient,
        &setup.friedrichs,
        &setup.basis,
        &ExtensionSpec::Friedrichs,
    )?;
    if setup.alpha == 0.0 {
        return Ok(op);
    }
    let seq = RegularizingSequence::new(setup.potential);
    let w = crate::schrodinger::potential::potential_form(
        &setup.disc.mesh,
        &seq,
        Level::Full,
        false,
    )?;
    let w_basis = ambient_matrix_in_basis(&w, &setup.disc.ambient, &[]);
    perturb_form(&op, &w_basis, setup.alpha)
}

fn sequence_point(
    setup: &LabSetup,
    spec_name: &str,
    spec: &ExtensionSpec,
    n: f64,
    vectors: &[(String, Vec<f64>)],
    reference: &[Vec<f64>],
    ref_op: &AssembledOperator,
) -> Result<SequencePoint> {
    let mut warnings = Vec::new();
    let level = effective_level(&setup.config, n);
    let opn = assemble_at_level(setup, spec, n)?;
    let rn = spectral::Resolvent::new(&opn, setup.z)?;
    if rn.negative_border_inertia() > 0 {
        warnings.push(format!(
            "indefinite deficiency border at n = {n:.3e} for {spec_name} \
             (perturbed family is not uniformly semibounded)"
        ));
    }
    let ambient = &setup.disc.ambient;
    let mut sre_errors = Vec::new();
    for ((id, f), rf) in vectors.iter().zip(reference) {
        let rnf = rn.apply_ambient(f);
        let diff: Vec<f64> = rnf.iter().zip(rf).map(|(a, b)| a - b).collect();
        sre_errors.push((id.clone(), ambient.norm(&diff) / ambient.norm(f)));
    }
    let ref_res = spectral::Resolvent::new(ref_op, setup.z)?;
    let norm_est = spectral::resolvent_diff_norm(
        &rn,
        &ref_res,
        setup.config.experiment.seed ^ 0x6e6f726d,
        setup.config.experiment.norm_iterations,
    );
    let w = assemble_potential(
        &setup.disc.mesh,
        &setup.potential,
        Level::Cutoff(level),
        true,
    )?;
    let adm = |h: &[f64]| -> f64 { w.matvec(h).iter().zip(h).map(|(a, b)| a * b).sum() };
    let adm_minus = adm(&setup.basis.vectors[0]);
    let adm_plus = adm(&setup.basis.vectors[1]);
    let k = setup.config.experiment.k_eigs.min(3);
    let (vals, _) = spectral::lowest_eigenpairs(&opn, k)?;
    let mut eigs = [f64::NAN; 3];
    for (slot, v) in eigs.iter_mut().zip(&vals) {
        *slot = *v;
    }
    Ok(SequencePoint {
        n,
        spec: spec_name.to_string(),
        sre_errors,
        norm_est,
        adm_plus,
        adm_minus,
        eigs,
        warnings,
    })
}

/// Strong and norm resolvent convergence of the cut-off sequences against
/// the Friedrichs form-sum reference.
pub fn run_convergence(config: &ExperimentConfig) -> Result<ConvergenceReport> {
    let setup = resolve(config)?;
    let mut report = ConvergenceReport::new(config);
    report.warnings.extend(setup.warnings.iter().cloned());
    report.note("alpha", setup.alpha);
    report.note("alpha_max", setup.alpha_max);
    report.note("b", setup.b);
    report.note("z", setup.z);

    let vectors = test_vectors(&setup, config.experiment.seed);
    let ref_op = reference_operator(&setup)?;
    let ref_res = spectral::Resolvent::new(&ref_op, setup.z)?;
    let reference: Vec<Vec<f64>> = vectors
        .iter()
        .map(|(_, f)| ref_res.apply_ambient(f))
        .collect();

    let tasks: Vec<(f64, usize)> = setup
        .schedule
        .iter()
        .flat_map(|&n| (0..setup.specs.len()).map(move |s| (n, s)))
        .collect();
    let pool = thread_pool();
    let points: Result<Vec<SequencePoint>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(n, s)| {
                let (name, spec) = &setup.specs[s];
                sequence_point(&setup, name, spec, n, &vectors, &reference, &ref_op)
            })
            .collect()
    });
    let points = points?;

    for p in points {
        report.warnings.extend(p.warnings);
        for (vector_id, err) in &p.sre_errors {
            report.rows.push(ReportRow {
                n: p.n,
                spec: p.spec.clone(),
                vector_id: vector_id.clone(),
                sre_error: *err,
                norm_resolvent_est: p.norm_est,
                admissibility_plus: p.adm_plus,
                admissibility_minus: p.adm_minus,
                eig1: p.eigs[0],
                eig2: p.eigs[1],
                eig3: p.eigs[2],
            });
        }
    }
    report
        .rows
        .sort_by(|a, b| a.n.total_cmp(&b.n).then(a.spec.cmp(&b.spec)));
    Ok(report)
}

pub fn fit_line(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let syy: f64 = pts.iter().map(|p| p.1 * p.1).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let denom = ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt();
    let corr = if denom > 0.0 {
        (n * sxy - sx * sy) / denom
    } else {
        0.0
    };
    (slope, corr)
}

/// The admissibility curve `n -> (V_n h, h)` for both deficiency directions,
/// with a fitted divergence law and a verdict.
pub fn run_admissibility(config: &ExperimentConfig) -> Result<ConvergenceReport> {
    let setup = resolve(config)?;
    let mut report = ConvergenceReport::new(config);
    report.warnings.extend(setup.warnings.iter().cloned());

    let seq = RegularizingSequence::new(setup.potential);
    let levels: Vec<f64> = setup
        .schedule
        .iter()
        .map(|&n| effective_level(config, n))
        .collect();
    let minus = setup
        .disc
        .admissibility_curve(&seq, &setup.basis.vectors[0], &levels)?;
    let plus = setup
        .disc
        .admissibility_curve(&seq, &setup.basis.vectors[1], &levels)?;
    if !plus.reliable {
        report
            .warnings
            .push("admissibility curve under-resolved at the largest level".into());
    }

    for (i, &n) in setup.schedule.iter().enumerate() {
        report.rows.push(ReportRow {
            n,
            spec: "admissibility".into(),
            vector_id: "h".into(),
            sre_error: f64::NAN,
            norm_resolvent_est: f64::NAN,
            admissibility_plus: plus.points[i].1,
            admissibility_minus: minus.points[i].1,
            eig1: f64::NAN,
            eig2: f64::NAN,
            eig3: f64::NAN,
        });
    }

    let beta = setup.potential.beta;
    let pts: Vec<(f64, f64)> = if (beta - 1.0).abs() < 1e-12 {
        plus.points.iter().map(|&(n, v)| (n.ln(), v)).collect()
    } else {
        plus.points.iter().map(|&(n, v)| (n.ln(), v.ln())).collect()
    };
    let (slope, corr) = fit_line(&pts);
    if (beta - 1.0).abs() < 1e-12 {
        report.note("log_slope", slope);
    } else {
        report.note("fitted_exponent", slope);
        report.note("target_exponent", (beta - 1.0) / beta);
    }
    report.note("correlation", corr);

    // divergent iff the curve is still climbing at the end of the schedule
    let len = plus.points.len();
    let verdict = if len >= 2 {
        let (_, v_last) = plus.points[len - 1];
        let (_, v_prev) = plus.points[len - 2];
        if v_last - v_prev > 1e-9 * v_last.abs().max(1.0) {
            "admissible-divergent"
        } else {
            "not admissible"
        }
    } else {
        "not admissible"
    };
    report.note("verdict", verdict);
    Ok(report)
}

/// Lowest-k eigenvalue tracks of each cut-off operator, with the
/// Krein-below-Friedrichs interlacing check.
pub fn run_spectrum_tracking(config: &ExperimentConfig, k: usize) -> Result<ConvergenceReport> {
    if k == 0 || k > 5 {
        return Err(KreinError::Validation(format!(
            "spectrum tracking supports k in 1..=5, got {k}"
        )));
    }
    let setup = resolve(config)?;
    let mut report = ConvergenceReport::new(config);
    report.warnings.extend(setup.warnings.iter().cloned());
    report.note("alpha", setup.alpha);

    let pool = thread_pool();
    let tasks: Vec<(f64, usize)> = setup
        .schedule
        .iter()
        .flat_map(|&n| (0..setup.specs.len()).map(move |s| (n, s)))
        .collect();
    let eigsets: Result<Vec<(f64, String, Vec<f64>)>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(n, s)| {
                let (name, spec) = &setup.specs[s];
                let opn = assemble_at_level(&setup, spec, n)?;
                let (vals, _) = spectral::lowest_eigenpairs(&opn, k)?;
                Ok((n, name.clone(), vals))
            })
            .collect()
    });
    let eigsets = eigsets?;

    // interlacing: the Krein track sits below the Friedrichs track
    for &n in &setup.schedule {
        let find = |name: &str| {
            eigsets
                .iter()
                .find(|(m, s, _)| *m == n && s == name)
                .map(|(_, _, v)| v)
        };
        if let (Some(kr), Some(fr)) = (find("krein"), find("friedrichs")) {
            for (l, (a, b)) in kr.iter().zip(fr).enumerate() {
                if *a > b + 1e-9 * (1.0 + b.abs()) {
                    report.warnings.push(format!(
                        "interlacing violated at n = {n:.3e}, level {l}: {a} > {b}"
                    ));
                }
            }
        }
    }

    for (n, name, vals) in eigsets {
        let mut eigs = [f64::NAN; 3];
        for (slot, v) in eigs.iter_mut().zip(&vals) {
            *slot = *v;
        }
        report.rows.push(ReportRow {
            n,
            spec: name,
            vector_id: "spectrum".into(),
            sre_error: f64::NAN,
            norm_resolvent_est: f64::NAN,
            admissibility_plus: f64::NAN,
            admissibility_minus: f64::NAN,
            eig1: eigs[0],
            eig2: eigs[1],
            eig3: eigs[2],
        });
    }
    report
        .rows
        .sort_by(|a, b| a.n.total_cmp(&b.n).then(a.spec.cmp(&b.spec)));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(k: usize) -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.mesh.k_per_side = k;
        c
    }

    #[test]
    fn resolve_fills_in_defaults_and_clips_the_schedule() {
        let config = small_config(200);
        let setup = resolve(&config).unwrap();
        assert_eq!(setup.alpha, 0.0);
        assert!((setup.z - (-3.0)).abs() < 1e-12, "{}", setup.z);
        assert_eq!(setup.specs.len(), 2);
        assert_eq!(setup.specs[0].1.name(), "friedrichs");
        assert_eq!(setup.specs[1].1.name(), "krein");
        // a 200-element graded mesh cannot resolve the cutoff radius at 1e6
        assert!(setup.schedule.len() < config.experiment.schedule.len());
        assert!(setup.warnings.iter().any(|w| w.contains("clipped")));
    }

    #[test]
    fn resolve_rejects_couplings_outside_the_admissible_range() {
        let mut config = small_config(200);
        config.experiment.alpha = Some(1e6);
        let err = match resolve(&config) {
            Err(e) => e,
            Ok(_) => panic!("coupling accepted"),
        };
        assert!(err.to_string().contains("alpha < 1/a"), "{err}");
    }

    #[test]
    fn general_spec_tokens_parse_and_bad_ones_are_rejected() {
        let mut config = small_config(200);
        config.experiment.specs = vec!["general:0.5".into()];
        let setup = resolve(&config).unwrap();
        match &setup.specs[0].1 {
            ExtensionSpec::General { q_matrix, .. } => {
                assert!((q_matrix[(0, 0)] - 0.5).abs() < 1e-15);
                assert_eq!(q_matrix.nrows(), 2);
            }
            other => panic!("unexpected spec {}", other.name()),
        }
        config.experiment.specs = vec!["neumann".into()];
        assert!(resolve(&config).is_err());
    }

    #[test]
    fn free_sequences_reproduce_the_reference_exactly_for_friedrichs() {
        let mut config = small_config(150);
        config.experiment.schedule = vec![10.0, 100.0];
        let report = run_convergence(&config).unwrap();
        // 2 levels x 2 specs x 5 probe vectors
        assert_eq!(report.rows.len(), 20);
        for row in &report.rows {
            if row.spec == "friedrichs" {
                assert!(row.sre_error <= 1e-13, "{}", row.sre_error);
            } else {
                // without a coupling the Krein gap to the reference is a
                // fixed rank-two defect, identical at every level
                assert!(row.sre_error >= 1e-4, "{}", row.sre_error);
            }
            assert!(row.eig1.is_finite());
        }
        let krein_norms: Vec<f64> = report
            .rows
            .iter()
            .filter(|r| r.spec == "krein")
            .map(|r| r.norm_resolvent_est)
            .collect();
        let spread = krein_norms
            .iter()
            .fold(0.0f64, |acc, v| acc.max((v - krein_norms[0]).abs()));
        assert!(spread <= 1e-10, "{spread}");
    }

    #[test]
    fn coupled_sequences_converge_toward_the_reference() {
        let mut config = small_config(400);
        config.experiment.alpha_fraction = Some(0.5);
        config.experiment.schedule = vec![1e1, 1e2, 1e3];
        config.experiment.norm_iterations = 40;
        let report = run_convergence(&config).unwrap();
        let errs: Vec<f64> = report
            .rows
            .iter()
            .filter(|r| r.spec == "krein" && r.vector_id == "bump-trace")
            .map(|r| r.sre_error)
            .collect();
        assert_eq!(errs.len(), 3);
        assert!(errs[2] < errs[0], "{errs:?}");
        for row in &report.rows {
            if row.spec == "friedrichs" {
                let krein = report
                    .rows
                    .iter()
                    .find(|r| {
                        r.spec == "krein" && r.n == row.n && r.vector_id == row.vector_id
                    })
                    .unwrap();
                assert!(row.sre_error <= krein.sre_error + 1e-12);
            }
        }
    }

    #[test]
    fn admissibility_run_fits_the_divergence_law() {
        let mut config = small_config(600);
        let report = run_admissibility(&config).unwrap();
        assert_eq!(report.find_note("verdict"), Some("admissible-divergent"));
        let slope: f64 = report.find_note("fitted_exponent").unwrap().parse().unwrap();
        assert!((slope - 1.0 / 3.0).abs() < 0.1, "{slope}");
        config.potential.permanent_cap = Some(50.0);
        config.experiment.schedule = vec![1e1, 1e2, 1e3, 1e4];
        let capped = run_admissibility(&config).unwrap();
        assert_eq!(capped.find_note("verdict"), Some("not admissible"));
    }

    #[test]
    fn spectrum_tracking_keeps_krein_below_friedrichs() {
        let mut config = small_config(200);
        config.experiment.schedule = vec![10.0];
        let report = run_spectrum_tracking(&config, 2).unwrap();
        assert!(report.warnings.iter().all(|w| !w.contains("interlacing")));
        let krein = report.rows.iter().find(|r| r.spec == "krein").unwrap();
        let fried = report.rows.iter().find(|r| r.spec == "friedrichs").unwrap();
        assert!((krein.eig1 + 1.0).abs() < 1e-6, "{}", krein.eig1);
        let pi2 = (std::f64::consts::PI / 10.0).powi(2);
        assert!((fried.eig1 - pi2).abs() < 0.01 * pi2, "{}", fried.eig1);
        assert!(run_spectrum_tracking(&config, 9).is_err());
    }
}
