//! The inverse-power potential, its cut-offs, and exact elementwise
//! quadrature against products of piecewise-linear hats.
//!
//! Gauss points are useless next to the singularity, so every element
//! integral is reduced to the moments J_k = int x^(-beta) (x - A)^k dx over
//! the integration interval.  Close elements (width comparable to the left
//! endpoint) use a binomial series in (b - a)/a; wide ones use antiderivative
//! differences evaluated through expm1/log1p, with the logarithmic
//! antiderivative when an exponent hits -1.

use crate::error::{KreinError, Result};
use crate::linalg::SymBand;
use crate::schrodinger::mesh::Mesh;

/// `V(x) = (1 / (4 kappa)) |x|^(-beta)` with `1 <= beta <= 2`, or the zero
/// potential (the `kappa -> infinity` limit).
#[derive(Clone, Copy, Debug)]
pub struct SingularPotential {
    pub kappa: f64,
    pub beta: f64,
    pub zero: bool,
}

impl SingularPotential {
    pub fn new(kappa: f64, beta: f64) -> Result<Self> {
        if !(kappa > 0.0) {
            return Err(KreinError::Validation(format!(
                "kappa must be positive, got {kappa}"
            )));
        }
        if !(1.0..=2.0).contains(&beta) {
            return Err(KreinError::Validation(format!(
                "beta must lie in [1, 2], got {beta}"
            )));
        }
        Ok(SingularPotential {
            kappa,
            beta,
            zero: false,
        })
    }

    pub fn zero() -> Self {
        SingularPotential {
            kappa: 1.0,
            beta: 1.0,
            zero: true,
        }
    }

    pub fn coefficient(&self) -> f64 {
        if self.zero {
            0.0
        } else {
            0.25 / self.kappa
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        if self.zero {
            0.0
        } else {
            self.coefficient() * x.abs().powf(-self.beta)
        }
    }

    /// Radius where the cut-off at height `n` kicks in: `V(x) = n`.
    pub fn cutoff_radius(&self, n: f64) -> f64 {
        (4.0 * self.kappa * n).powf(-1.0 / self.beta)
    }
}

/// The cut-off family `V_n(x) = min(n, V(x))`.
#[derive(Clone, Copy, Debug)]
pub struct RegularizingSequence {
    pub base: SingularPotential,
}

impl RegularizingSequence {
    pub fn new(base: SingularPotential) -> Self {
        RegularizingSequence { base }
    }

    pub fn level_value(&self, n: f64, x: f64) -> f64 {
        self.base.value(x).min(n)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Level {
    Cutoff(f64),
    Full,
}

/// `int_a^b x^e dx` for `0 < a < b`, stable when `b/a` is close to 1 and
/// when `e` is close to -1.
fn power_moment(a: f64, b: f64, e: f64) -> f64 {
    let s = e + 1.0;
    let lr = (b / a - 1.0).ln_1p();
    if s.abs() < 1e-12 {
        lr
    } else {
        a.powf(s) * (s * lr).exp_m1() / s
    }
}

/// `J_k = int_a^b x^(-beta) (x - a)^k dx` for k = 0, 1, 2, with `a > 0`.
fn shifted_moments(a: f64, b: f64, beta: f64) -> [f64; 3] {
    let r = (b - a) / a;
    if r <= 0.5 {
        // substitute x = a(1+t): J_k = a^(k+1-beta) sum_j C(-beta, j)
        // r^(k+j+1) / (k+j+1)
        let mut sums = [0.0f64; 3];
        let mut coeff = 1.0;
        let mut rpow = r; // r^(j+1)
        for j in 0..200 {
            let jf = j as f64;
            let mut converged = true;
            for (k, s) in sums.iter_mut().enumerate() {
                let term = coeff * rpow * r.powi(k as i32) / (k as f64 + jf + 1.0);
                *s += term;
                if term.abs() > s.abs() * 1e-18 {
                    converged = false;
                }
            }
            if converged {
                break;
            }
            coeff *= (-beta - jf) / (jf + 1.0);
            rpow *= r;
        }
        [
            a.powf(1.0 - beta) * sums[0],
            a.powf(2.0 - beta) * sums[1],
            a.powf(3.0 - beta) * sums[2],
        ]
    } else {
        let m0 = power_moment(a, b, -beta);
        let m1 = power_moment(a, b, 1.0 - beta);
        let m2 = power_moment(a, b, 2.0 - beta);
        [m0, m1 - a * m0, m2 - 2.0 * a * m1 + a * a * m0]
    }
}

/// Moments from the origin: `int_0^b x^(-beta) x^k dx`; divergent entries
/// are only an error when the caller actually needs them.
fn origin_moments(b: f64, beta: f64, needed: [bool; 3]) -> Result<[f64; 3]> {
    let mut out = [0.0f64; 3];
    for k in 0..3 {
        let s = k as f64 + 1.0 - beta;
        if s > 1e-12 {
            out[k] = b.powf(s) / s;
        } else if needed[k] {
            return Err(KreinError::DivergentIntegral);
        }
    }
    Ok(out)
}

/// Hat data on one element: value at a point and constant slope.
#[derive(Clone, Copy)]
struct Hat {
    node: f64,
    slope: f64,
}

impl Hat {
    fn at(&self, x: f64) -> f64 {
        1.0 + self.slope * (x - self.node)
    }
}

/// Quadratic coefficients of `phi_i phi_j` expanded around `A` in `u = x - A`.
fn pair_coeffs(hi: Hat, hj: Hat, a: f64) -> [f64; 3] {
    let vi = hi.at(a);
    let vj = hj.at(a);
    [
        vi * vj,
        vi * hj.slope + vj * hi.slope,
        hi.slope * hj.slope,
    ]
}

fn poly_integral(p: [f64; 3], width: f64) -> f64 {
    width * (p[0] + width * (p[1] / 2.0 + width * p[2] / 3.0))
}

/// Assemble `(V_level phi_i, phi_j)` over the whole mesh, without the Hardy
/// admission check (the form-bound estimator needs the raw matrix even in
/// the excluded regime).
pub fn assemble_potential(
    mesh: &Mesh,
    base: &SingularPotential,
    level: Level,
    include_traces: bool,
) -> Result<SymBand> {
    let dim = mesh.ambient_dim();
    let k = mesh.k_per_side;
    let mut w = SymBand::zeros(dim, 1);
    if base.zero {
        if level == Level::Full || matches!(level, Level::Cutoff(n) if n >= 0.0) {
            return Ok(w);
        }
    }
    if let Level::Cutoff(n) = level {
        if !(n > 0.0) {
            return Err(KreinError::Validation(format!(
                "cutoff level must be positive, got {n}"
            )));
        }
    }
    let c = base.coefficient();

    for (a, b, li, ri) in mesh.side_elements() {
        let len = b - a;
        let hats = [
            li.map(|i| (i, Hat { node: a, slope: -1.0 / len })),
            ri.map(|j| (j, Hat { node: b, slope: 1.0 / len })),
        ];
        let pairs: Vec<(usize, usize, Hat, Hat)> = hats
            .iter()
            .flatten()
            .flat_map(|&(i, hi)| {
                hats.iter()
                    .flatten()
                    .filter(move |&&(j, _)| j >= i)
                    .map(move |&(j, hj)| (i, j, hi, hj))
            })
            .collect();

        for (i, j, hi, hj) in pairs {
            let is_trace_pair = i == 0 || j == 0;
            if is_trace_pair && !include_traces {
                continue;
            }
            let mut entry = 0.0;
            match level {
                Level::Cutoff(n) => {
                    let xc = base.cutoff_radius(n);
                    let split = xc.clamp(a, b);
                    if split > a {
                        // saturated part: constant n
                        entry += n * poly_integral(pair_coeffs(hi, hj, a), split - a);
                    }
                    if split < b {
                        let p = pair_coeffs(hi, hj, split);
                        let jm = if split > 0.0 {
                            shifted_moments(split, b, base.beta)
                        } else {
                            origin_moments(b, base.beta, p.map(|v| v != 0.0))?
                        };
                        entry += c * (p[0] * jm[0] + p[1] * jm[1] + p[2] * jm[2]);
                    }
                }
                Level::Full => {
                    let p = pair_coeffs(hi, hj, a);
                    let jm = if a > 0.0 {
                        shifted_moments(a, b, base.beta)
                    } else {
                        origin_moments(b, base.beta, p.map(|v| v != 0.0))?
                    };
                    entry += c * (p[0] * jm[0] + p[1] * jm[1] + p[2] * jm[2]);
                }
            }
            // identical contribution on the mirrored side
            for side in 0..2 {
                let base_idx = side * k;
                w.add(base_idx + j, base_idx + i, entry);
            }
        }
    }
    Ok(w)
}

/// Public assembly entry: refuses the full `beta = 2` form outside the
/// Hardy-admissible regime `kappa > 1`, where no relative bound `a < 1`
/// exists.
pub fn potential_form(
    mesh: &Mesh,
    seq: &RegularizingSequence,
    level: Level,
    include_traces: bool,
) -> Result<SymBand> {
    if level == Level::Full
        && !seq.base.zero
        && (seq.base.beta - 2.0).abs() < 1e-12
        && seq.base.kappa <= 1.0
    {
        return Err(KreinError::HardyRegime {
            kappa: seq.base.kappa,
        });
    }
    assemble_potential(mesh, &seq.base, level, include_traces)
}
