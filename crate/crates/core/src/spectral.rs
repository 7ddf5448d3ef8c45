//! Resolvents and low-lying spectra of assembled (form, mass) pencils.
//!
//! Two regimes: pencils up to `DENSE_LIMIT` unknowns go through a dense
//! generalized eigensolver; larger ones (the mesh discretizations, which are
//! tridiagonal plus a thin border) use inertia bisection for the bottom of
//! the spectrum and shift-invert subspace iteration for eigenpairs.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{KreinError, Result};
use crate::forms::AssembledOperator;
use crate::linalg::{self, BorderedFactor, SymBordered};

pub const DENSE_LIMIT: usize = 400;

/// A real resolvent shift with a safety margin below the relevant lower
/// bound.  Real z below the common bound stands in for the nonreal shifts
/// of the abstract convergence statements; everything stays symmetric.
#[derive(Clone, Copy, Debug)]
pub struct Shift {
    pub z: f64,
    pub margin: f64,
}

impl Shift {
    pub fn new(z: f64) -> Self {
        Shift { z, margin: 1.0 }
    }

    pub fn validate(&self, lower_bound: f64) -> Result<()> {
        if self.z >= lower_bound - self.margin {
            return Err(KreinError::ShiftTooHigh {
                z: self.z,
                lower_bound,
            });
        }
        Ok(())
    }
}

/// One validated resolvent application `(F - zM)^{-1} M f` in basis
/// coordinates.
pub fn resolvent_apply(op: &AssembledOperator, shift: Shift, f: &[f64]) -> Result<Vec<f64>> {
    shift.validate(op.lower_bound_estimate)?;
    if f.len() != op.dim() {
        return Err(KreinError::DimensionMismatch {
            context: "resolvent input vector",
            expected: op.dim(),
            got: f.len(),
        });
    }
    let r = Resolvent::new(op, shift.z)?;
    let mf = op.form.mass.matvec(f);
    Ok(r.solve_coeffs(&mf))
}

/// A factored resolvent `(A - z)^{-1}` of an assembled operator.
///
/// The shift must keep the interior block of `F - zM` positive definite.
/// The border block may pick up negative inertia (perturbed extensions with
/// deep deficiency directions); the factorization tolerates that and the
/// count is reported through `negative_border_inertia`.
pub struct Resolvent<'a> {
    pub op: &'a AssembledOperator,
    pub z: f64,
    shifted: SymBordered,
    factor: BorderedFactor,
}

impl<'a> Resolvent<'a> {
    pub fn new(op: &'a AssembledOperator, z: f64) -> Result<Self> {
        let shifted = SymBordered::scaled_sum(1.0, &op.form.form, -z, &op.form.mass);
        let factor = shifted.factor().map_err(|e| match e {
            KreinError::IndefiniteInterior => KreinError::ShiftTooHigh {
                z,
                lower_bound: op.lower_bound_estimate,
            },
            other => other,
        })?;
        Ok(Resolvent {
            op,
            z,
            shifted,
            factor,
        })
    }

    pub fn negative_border_inertia(&self) -> usize {
        self.factor.negative_border_inertia()
    }

    /// Solve `(F - zM) x = rhs` in basis coordinates, with one round of
    /// iterative refinement when the first residual is not already tiny.
    pub fn solve_coeffs(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = self.factor.solve(rhs);
        let rhs_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        for _ in 0..2 {
            let ax = self.shifted.matvec(&x);
            let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
            let r_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if r_norm <= 1e-12 * rhs_norm.max(1e-300) {
                break;
            }
            let dx = self.factor.solve(&r);
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += di;
            }
        }
        x
    }

    /// Ambient-to-ambient resolvent action `f -> E (F - zM)^{-1} E^T M f`.
    pub fn apply_ambient(&self, f: &[f64]) -> Vec<f64> {
        let rhs = self.op.project_rhs(f);
        let x = self.solve_coeffs(&rhs);
        self.op.embed(&x)
    }
}

/// Count of pencil eigenvalues strictly below `sigma`.
///
/// Exact when the shifted banded block is positive definite (the count then
/// equals the negative inertia of the border Schur complement).  When the
/// banded block itself is indefinite the returned value is a lower bound,
/// but it is then at least 1, which is all the bisection needs.
fn count_below(form: &SymBordered, mass: &SymBordered, sigma: f64) -> Result<usize> {
    let s = SymBordered::scaled_sum(1.0, form, -sigma, mass);
    if s.band.bandwidth() <= 1 {
        let (neg, _) = s.band.tridiag_inertia()?;
        if neg > 0 {
            return Ok(neg);
        }
    }
    match s.factor() {
        Ok(f) => Ok(f.negative_border_inertia()),
        Err(KreinError::IndefiniteInterior) => Ok(1),
        Err(e) => Err(e),
    }
}

/// Smallest eigenvalue of the pencil `(F, M)`.
///
/// Dense solve below `DENSE_LIMIT`; above it, inertia bisection bracketed by
/// Rayleigh quotients of a handful of probe vectors (including each border
/// coordinate, which is where perturbed extensions dive).
pub fn smallest_eigenvalue(form: &SymBordered, mass: &SymBordered) -> Result<f64> {
    let dim = form.dim();
    if dim != mass.dim() {
        return Err(KreinError::DimensionMismatch {
            context: "form vs mass pencil",
            expected: dim,
            got: mass.dim(),
        });
    }
    if dim == 0 {
        return Err(KreinError::Validation("empty pencil".into()));
    }
    if dim <= DENSE_LIMIT {
        return linalg::min_generalized_eigenvalue(&form.to_dense(), &mass.to_dense());
    }

    let rayleigh = |v: &[f64]| -> Option<f64> {
        let m = mass.quadratic(v);
        if m <= 0.0 {
            return None;
        }
        Some(form.quadratic(v) / m)
    };

    let mut upper = f64::INFINITY;
    let ones = vec![1.0; dim];
    if let Some(r) = rayleigh(&ones) {
        upper = upper.min(r);
    }
    let nb = form.n_border();
    for j in 0..nb {
        let mut e = vec![0.0; dim];
        e[dim - nb + j] = 1.0;
        if let Some(r) = rayleigh(&e) {
            upper = upper.min(r);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..2 {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if let Some(r) = rayleigh(&v) {
            upper = upper.min(r);
        }
    }
    if !upper.is_finite() {
        return Err(KreinError::Numerical("no valid Rayleigh probe".into()));
    }

    let mut hi = upper + 1e-8 * upper.abs().max(1.0);
    let mut lo = hi - 0.5 * hi.abs().max(1.0);
    let mut widen = 0;
    while count_below(form, mass, lo)? > 0 {
        let width = hi - lo;
        lo = hi - 2.0 * width;
        widen += 1;
        if widen > 80 {
            return Err(KreinError::Numerical("lower spectral bound not found".into()));
        }
    }

    for _ in 0..90 {
        let tol = 1e-13 * hi.abs().max(lo.abs()).max(1.0);
        if hi - lo <= tol {
            break;
        }
        let mut mid = 0.5 * (lo + hi);
        let count = match count_below(form, mass, mid) {
            Ok(c) => c,
            Err(KreinError::Numerical(_)) => {
                // sigma landed on (numerically) an eigenvalue; nudge it
                mid += 1e-2 * (hi - lo);
                count_below(form, mass, mid).unwrap_or(1)
            }
            Err(e) => return Err(e),
        };
        if count > 0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// The `k` lowest eigenpairs of an assembled operator, eigenvalues ascending,
/// eigenvectors M-orthonormal in basis coordinates.
pub fn lowest_eigenpairs(op: &AssembledOperator, k: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let dim = op.dim();
    if k == 0 || k > dim {
        return Err(KreinError::Validation(format!(
            "requested {k} eigenpairs from a pencil of size {dim}"
        )));
    }
    let form = &op.form.form;
    let mass = &op.form.mass;
    if dim <= DENSE_LIMIT {
        let (vals, vecs) = linalg::generalized_eig(&form.to_dense(), &mass.to_dense())?;
        let vals = vals[..k].to_vec();
        let vecs = vecs[..k].iter().map(|v| v.iter().copied().collect()).collect();
        return Ok((vals, vecs));
    }

    let bound = op.lower_bound_estimate;
    let mut sigma = bound - 1e-2 * bound.abs().max(1.0);
    let shifted = |s: f64| SymBordered::scaled_sum(1.0, form, -s, mass);
    let mut factor = None;
    for _ in 0..8 {
        match shifted(sigma).factor() {
            Ok(f) if f.is_positive_definite() => {
                factor = Some(f);
                break;
            }
            _ => sigma = bound - 2.0 * (bound - sigma),
        }
    }
    let factor = factor.ok_or(KreinError::Numerical("no definite shift found".into()))?;

    let block = (k + 3).min(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(0x1e57);
    let xs: Vec<Vec<f64>> = (0..block)
        .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let scale = 1.0 + bound.abs();

    let run = SubspaceRun {
        form,
        mass,
        k,
        scale,
        tol: 1e-9,
    };
    let mut state = run.iterate(&factor, sigma, &[], &[], xs, 120);
    if state.worst <= run.tol {
        state.vals.truncate(k);
        state.xs.truncate(k);
        return Ok((state.vals, state.xs));
    }

    // a border that pulls a few eigenvalues far below the interior pencil
    // destroys the contraction ratio for the remaining cluster; once those
    // deep pairs are locked, the shift can move up to the interior bound
    // (the Schur solver tolerates the then-indefinite border)
    if form.n_border() > 0 {
        let interior_form = SymBordered::from_band(form.band.clone());
        let interior_mass = SymBordered::from_band(mass.band.clone());
        let ibound = smallest_eigenvalue(&interior_form, &interior_mass)?;
        let sigma_b = ibound - 1e-2 * ibound.abs().max(1.0);
        if sigma_b > sigma {
            let deep = count_below(form, mass, sigma_b)?;
            let deep_found = state.vals.iter().take(deep).all(|&v| v < sigma_b);
            if deep <= k && deep_found {
                // the block Ritz step smears a little of the unconverged
                // cluster into the deep pairs, so purify them alone first:
                // at the original shift they contract by orders of
                // magnitude per iteration
                let refine = SubspaceRun {
                    form,
                    mass,
                    k: deep,
                    scale,
                    tol: run.tol,
                };
                let st =
                    refine.iterate(&factor, sigma, &[], &[], state.xs[..deep].to_vec(), 60);
                if deep == 0 || st.worst <= run.tol {
                    let locked = st.xs[..deep].to_vec();
                    let locked_vals = st.vals[..deep].to_vec();
                    if let Ok(factor_b) = shifted(sigma_b).factor() {
                        let active = state.xs[deep..].to_vec();
                        let mut st =
                            run.iterate(&factor_b, sigma_b, &locked, &locked_vals, active, 400);
                        if st.worst <= run.tol {
                            st.vals.truncate(k);
                            st.xs.truncate(k);
                            return Ok((st.vals, st.xs));
                        }
                        return Err(KreinError::EigenConvergence {
                            residual: st.worst,
                            iterations: 400,
                        });
                    }
                }
            }
        }
    }

    let xs = std::mem::take(&mut state.xs);
    let mut state = run.iterate(&factor, sigma, &[], &[], xs, 280);
    if state.worst <= run.tol {
        state.vals.truncate(k);
        state.xs.truncate(k);
        return Ok((state.vals, state.xs));
    }
    Err(KreinError::EigenConvergence {
        residual: state.worst,
        iterations: 400,
    })
}

struct SubspaceRun<'a> {
    form: &'a SymBordered,
    mass: &'a SymBordered,
    k: usize,
    scale: f64,
    tol: f64,
}

struct SubspaceState {
    /// Ritz values for the k wanted pairs, locked ones included, ascending.
    vals: Vec<f64>,
    /// matching vectors; trailing entries keep the rest of the block
    xs: Vec<Vec<f64>>,
    worst: f64,
}

impl SubspaceRun<'_> {
    fn pair_residual(&self, lambda: f64, v: &[f64]) -> f64 {
        let fv = self.form.matvec(v);
        let mv = self.mass.matvec(v);
        let r2: f64 = fv
            .iter()
            .zip(&mv)
            .map(|(f, m)| {
                let r = f - lambda * m;
                r * r
            })
            .sum();
        r2.sqrt() / self.scale.max(lambda.abs())
    }

    /// Shift-inverted subspace iteration on the block `xs`, kept
    /// mass-orthogonal to the frozen `locked` vectors.
    fn iterate(
        &self,
        factor: &linalg::BorderedFactor,
        sigma: f64,
        locked: &[Vec<f64>],
        locked_vals: &[f64],
        mut xs: Vec<Vec<f64>>,
        max_iter: usize,
    ) -> SubspaceState {
        let form = self.form;
        let mass = self.mass;
        let dim = form.dim();
        let pencil = SymBordered::scaled_sum(1.0, form, -sigma, mass);
        let want = self.k - locked.len();

        let mut out = SubspaceState {
            vals: vec![],
            xs: vec![],
            worst: f64::INFINITY,
        };
        for _iter in 0..max_iter {
            // X <- (F - sigma M)^{-1} M X, with one refinement pass
            for x in xs.iter_mut() {
                let mx = mass.matvec(x);
                *x = factor.solve(&mx);
                let ax = pencil.matvec(x);
                let r: Vec<f64> = mx.iter().zip(&ax).map(|(b, a)| b - a).collect();
                let dx = factor.solve(&r);
                for (xi, di) in x.iter_mut().zip(&dx) {
                    *xi += di;
                }
            }
            for i in 0..xs.len() {
                for _pass in 0..2 {
                    for l in locked {
                        let c = mass.bilinear(&xs[i], l);
                        for (a, b) in xs[i].iter_mut().zip(l) {
                            *a -= c * b;
                        }
                    }
                    for j in 0..i {
                        let xj = xs[j].clone();
                        let c = mass.bilinear(&xs[i], &xj);
                        for (a, b) in xs[i].iter_mut().zip(&xj) {
                            *a -= c * b;
                        }
                    }
                }
                let n = mass.bilinear(&xs[i], &xs[i]).max(1e-300).sqrt();
                for a in xs[i].iter_mut() {
                    *a /= n;
                }
            }

            // Rayleigh-Ritz on the active block
            let b = xs.len();
            let mut fp = nalgebra::DMatrix::zeros(b, b);
            for i in 0..b {
                for j in 0..=i {
                    let v = form.bilinear(&xs[i], &xs[j]);
                    fp[(i, j)] = v;
                    fp[(j, i)] = v;
                }
            }
            let eig = fp.symmetric_eigen();
            let mut order: Vec<usize> = (0..b).collect();
            order.sort_by(|&a, &c| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[c]));
            let mut next: Vec<Vec<f64>> = Vec::with_capacity(b);
            for &col in &order {
                let mut y = vec![0.0; dim];
                for i in 0..b {
                    let c = eig.eigenvectors[(i, col)];
                    for (yi, xi) in y.iter_mut().zip(&xs[i]) {
                        *yi += c * xi;
                    }
                }
                next.push(y);
            }
            xs = next;

            let mut vals: Vec<f64> = locked_vals.to_vec();
            vals.extend(order.iter().take(want).map(|&c| eig.eigenvalues[c]));
            let mut vecs: Vec<Vec<f64>> = locked.to_vec();
            vecs.extend(xs.iter().take(want).cloned());
            let residuals: Vec<f64> = vals
                .iter()
                .zip(&vecs)
                .map(|(&l, v)| self.pair_residual(l, v))
                .collect();
            let worst = residuals.iter().fold(0.0f64, |a, &r| a.max(r));
            vecs.extend(xs.iter().skip(want).cloned());
            out = SubspaceState {
                vals,
                xs: vecs,
                worst,
            };
            if worst <= self.tol {
                break;
            }
        }
        out
    }
}

/// Mass-norm estimate of the difference of two resolvents, by power
/// iteration on the ambient space.  The operator is symmetric in the mass
/// inner product, so the estimate is the running maximum of absolute
/// Rayleigh quotients; it never decreases with more iterations.
pub fn resolvent_diff_norm(
    a: &Resolvent<'_>,
    b: &Resolvent<'_>,
    seed: u64,
    iterations: usize,
) -> f64 {
    let ambient = &a.op.ambient;
    let dim = ambient.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let nrm = ambient.norm(&v).max(1e-300);
    for x in v.iter_mut() {
        *x /= nrm;
    }
    let apply = |v: &[f64]| -> Vec<f64> {
        let ra = a.apply_ambient(v);
        let rb = b.apply_ambient(v);
        ra.iter().zip(&rb).map(|(x, y)| x - y).collect()
    };
    let mut best = 0.0f64;
    for _ in 0..iterations {
        let tv = apply(&v);
        // for a unit v both |<Tv, v>| and ||Tv|| underestimate ||T||, and
        // the image norm converges to it from below
        let tnorm = ambient.norm(&tv);
        let prev = best;
        best = best.max(tnorm).max(ambient.inner(&tv, &v).abs());
        if tnorm <= 1e-300 {
            break;
        }
        v = tv.iter().map(|x| x / tnorm).collect();
        if (best - prev).abs() <= 1e-8 * best.max(1e-300) && best > 0.0 {
            break;
        }
    }
    best
}

/// Residual `||F v - lambda M v||_2` of a candidate eigenpair.
pub fn eigen_residual(op: &AssembledOperator, lambda: f64, v: &[f64]) -> f64 {
    let fv = op.form.form.matvec(v);
    let mv = op.form.mass.matvec(v);
    fv.iter()
        .zip(&mv)
        .map(|(f, m)| {
            let r = f - lambda * m;
            r * r
        })
        .sum::<f64>()
        .sqrt()
}
