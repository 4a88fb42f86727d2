//! Jet coordinates, prolongation basis, and section compatibility residuals.
//!
//! First jets of sections of pi: E -> F carry fiber coordinates y^alpha_a.
//! The prolongation basis {X_a, X_alpha, V^a_alpha} lives over (x, u, y) with
//! dx^i = rho^i_a X^a, du^A = rho^A_a X^a + rho^A_alpha X^alpha, and
//! dy^alpha_a = V^alpha_a.
//!
//! Second-jet data y2[beta][b][a] is the total derivative of y^beta_b in
//! direction a; the matching formal symbol is named yd{beta}_{b}_{a} with the
//! differentiation direction last.
//!
//! The holonomy defect M^gamma_{ab} closes with -C^gamma_{ab}: the sign is
//! pinned so that the standard case reduces to dy^A_i/dx^j antisymmetrized
//! and so that section_morphism_residual is exactly the defect of the
//! section's honest second jet.

use crate::algebroid::{FibrationSpec, SectionExpr};
use crate::expr::{Env, ScalarExpr};
use crate::exterior::{AlgebroidForm, AnchoredBasisSpec};
use crate::names;
use rand::Rng;
use thiserror::Error;

/// A point of the first jet bundle: base point plus y^alpha_a.
#[derive(Clone, Debug)]
pub struct JetPoint {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    /// y[alpha][a].
    pub y: Vec<Vec<f64>>,
}

/// A jet point with total-derivative data y2[beta][b][a].
#[derive(Clone, Debug)]
pub struct SecondJetPoint {
    pub jet: JetPoint,
    pub y2: Vec<Vec<Vec<f64>>>,
}

/// Errors from jet-level operations.
#[derive(Debug, Error, PartialEq)]
pub enum JetError {
    #[error("complete lift requires a vertical section")]
    NotVertical,
}

/// Environment binding (x, u, y) names.
pub fn jet_env(p: &JetPoint) -> Env {
    let mut env = Env::new();
    for (i, v) in p.x.iter().enumerate() {
        env.set(names::x(i), *v);
    }
    for (a, v) in p.u.iter().enumerate() {
        env.set(names::u(a), *v);
    }
    for (alpha, row) in p.y.iter().enumerate() {
        for (a, v) in row.iter().enumerate() {
            env.set(names::y(alpha, a), *v);
        }
    }
    env
}

/// Environment binding (x, u, y) plus yd names from y2.
pub fn second_jet_env(p: &SecondJetPoint) -> Env {
    let mut env = jet_env(&p.jet);
    for (beta, block) in p.y2.iter().enumerate() {
        for (b, row) in block.iter().enumerate() {
            for (a, v) in row.iter().enumerate() {
                env.set(names::yd(beta, b, a), *v);
            }
        }
    }
    env
}

/// The prolongation basis over jet coordinates.
#[derive(Clone, Debug)]
pub struct ProlongationSpec {
    pub nx: usize,
    pub nu: usize,
    pub r: usize,
    pub k: usize,
    pub basis: AnchoredBasisSpec,
}

impl ProlongationSpec {
    pub fn from_fibration(fib: &FibrationSpec) -> Self {
        let (nx, nu, r, k) = (fib.nx, fib.nu, fib.r, fib.k);
        let n_fiber = r + k + k * r;
        let n_coord = nx + nu + k * r;
        let mut coord_names = fib.coord_names();
        for alpha in 0..k {
            for a in 0..r {
                coord_names.push(names::y(alpha, a));
            }
        }
        let mut anchor = vec![vec![ScalarExpr::zero(); n_coord]; n_fiber];
        for a in 0..r {
            for i in 0..nx {
                anchor[a][i] = fib.rho_f[a][i].clone();
            }
            for aa in 0..nu {
                anchor[a][nx + aa] = fib.rho_ea[a][aa].clone();
            }
        }
        for alpha in 0..k {
            for aa in 0..nu {
                anchor[r + alpha][nx + aa] = fib.rho_ealpha[alpha][aa].clone();
            }
        }
        for alpha in 0..k {
            for a in 0..r {
                anchor[r + k + alpha * r + a][nx + nu + alpha * r + a] = ScalarExpr::one();
            }
        }
        let mut c = vec![vec![vec![ScalarExpr::zero(); n_fiber]; n_fiber]; n_fiber];
        for a in 0..r {
            for b in 0..r {
                for cc in 0..r {
                    c[a][b][cc] = fib.c_bas[a][b][cc].clone();
                }
                for gamma in 0..k {
                    c[a][b][r + gamma] = fib.c_mix0[a][b][gamma].clone();
                }
            }
            for beta in 0..k {
                for gamma in 0..k {
                    c[a][r + beta][r + gamma] = fib.c_mix1[a][beta][gamma].clone();
                    c[r + beta][a][r + gamma] =
                        (-fib.c_mix1[a][beta][gamma].clone()).simplify();
                }
            }
        }
        for beta in 0..k {
            for gamma in 0..k {
                for alpha in 0..k {
                    c[r + beta][r + gamma][r + alpha] = fib.c_vert[beta][gamma][alpha].clone();
                }
            }
        }
        ProlongationSpec {
            nx,
            nu,
            r,
            k,
            basis: AnchoredBasisSpec {
                coord_names,
                anchor,
                c,
            },
        }
    }

    pub fn rank(&self) -> usize {
        self.r + self.k + self.k * self.r
    }

    /// Fiber index of X_a.
    pub fn idx_xa(&self, a: usize) -> usize {
        a
    }

    /// Fiber index of X_alpha.
    pub fn idx_xalpha(&self, alpha: usize) -> usize {
        self.r + alpha
    }

    /// Fiber index of V^a_alpha.
    pub fn idx_v(&self, alpha: usize, a: usize) -> usize {
        self.r + self.k + alpha * self.r + a
    }

    /// Coordinate index of y^alpha_a.
    pub fn coord_y(&self, alpha: usize, a: usize) -> usize {
        self.nx + self.nu + alpha * self.r + a
    }

    /// Contact form theta^alpha = X^alpha - y^alpha_a X^a.
    pub fn theta(&self, alpha: usize) -> AlgebroidForm {
        let mut form = AlgebroidForm::zero(1);
        form.add_term(&[self.idx_xalpha(alpha)], ScalarExpr::one());
        for a in 0..self.r {
            form.add_term(&[self.idx_xa(a)], -ScalarExpr::var(names::y(alpha, a)));
        }
        form
    }

    /// Section h_a = X_a + y^alpha_a X_alpha (no vertical part).
    pub fn contact_horizontal(&self, a: usize) -> Vec<ScalarExpr> {
        let mut out = vec![ScalarExpr::zero(); self.rank()];
        out[self.idx_xa(a)] = ScalarExpr::one();
        for alpha in 0..self.k {
            out[self.idx_xalpha(alpha)] = ScalarExpr::var(names::y(alpha, a));
        }
        out
    }

    /// Section h_a = X_a + y^alpha_a X_alpha + yd^beta_{b,a} V^b_beta, the
    /// horizontal lift through a formal second jet.
    pub fn second_jet_horizontal(&self, a: usize) -> Vec<ScalarExpr> {
        let mut out = self.contact_horizontal(a);
        for beta in 0..self.k {
            for b in 0..self.r {
                out[self.idx_v(beta, b)] = ScalarExpr::var(names::yd(beta, b, a));
            }
        }
        out
    }
}

/// Total derivative along e_a of a function of (x, u, y), using formal yd
/// symbols for the derivatives of the jet coordinates.
pub fn total_derivative(fib: &FibrationSpec, f: &ScalarExpr, a: usize) -> ScalarExpr {
    let mut acc = ScalarExpr::zero();
    for i in 0..fib.nx {
        acc = acc + fib.rho_f[a][i].clone() * f.diff(&names::x(i));
    }
    for big_a in 0..fib.nu {
        let mut rho = fib.rho_ea[a][big_a].clone();
        for alpha in 0..fib.k {
            rho = rho
                + fib.rho_ealpha[alpha][big_a].clone() * ScalarExpr::var(names::y(alpha, a));
        }
        acc = acc + rho * f.diff(&names::u(big_a));
    }
    for beta in 0..fib.k {
        for b in 0..fib.r {
            let df = f.diff(&names::y(beta, b));
            if df.is_zero_const() {
                continue;
            }
            acc = acc + ScalarExpr::var(names::yd(beta, b, a)) * df;
        }
    }
    acc.simplify()
}

/// The Z structure functions on the first jet bundle.
#[derive(Clone, Debug)]
pub struct ZFunctions {
    /// Z^alpha_{a gamma} = C^alpha_{a gamma} + C^alpha_{beta gamma} y^beta_a,
    /// indexed `[a][gamma][alpha]`.
    pub z_mix1: Vec<Vec<Vec<ScalarExpr>>>,
    /// Z^alpha_{a c} = C^alpha_{a c} + C^alpha_{beta c} y^beta_a, indexed
    /// `[a][c][alpha]`; the swap C^alpha_{beta c} = -C^alpha_{c beta} is
    /// applied to the stored mixed family.
    pub z_mix0: Vec<Vec<Vec<ScalarExpr>>>,
    /// Z^b_{a c} = C^b_{a c}, indexed `[a][c][b]`.
    pub z_bas: Vec<Vec<Vec<ScalarExpr>>>,
}

pub fn z_functions(fib: &FibrationSpec) -> ZFunctions {
    let (r, k) = (fib.r, fib.k);
    let mut z_mix1 = vec![vec![vec![ScalarExpr::zero(); k]; k]; r];
    for a in 0..r {
        for gamma in 0..k {
            for alpha in 0..k {
                let mut acc = fib.c_mix1[a][gamma][alpha].clone();
                for beta in 0..k {
                    acc = acc
                        + fib.c_vert[beta][gamma][alpha].clone()
                            * ScalarExpr::var(names::y(beta, a));
                }
                z_mix1[a][gamma][alpha] = acc.simplify();
            }
        }
    }
    let mut z_mix0 = vec![vec![vec![ScalarExpr::zero(); k]; r]; r];
    for a in 0..r {
        for c in 0..r {
            for alpha in 0..k {
                let mut acc = fib.c_mix0[a][c][alpha].clone();
                for beta in 0..k {
                    acc = acc
                        - fib.c_mix1[c][beta][alpha].clone()
                            * ScalarExpr::var(names::y(beta, a));
                }
                z_mix0[a][c][alpha] = acc.simplify();
            }
        }
    }
    let mut z_bas = vec![vec![vec![ScalarExpr::zero(); r]; r]; r];
    for a in 0..r {
        for c in 0..r {
            for b in 0..r {
                z_bas[a][c][b] = fib.c_bas[a][c][b].clone();
            }
        }
    }
    ZFunctions {
        z_mix1,
        z_mix0,
        z_bas,
    }
}

/// Holonomy defect of second-jet data, indexed `[gamma][a][b]`:
/// M^gamma_{ab} = y^gamma_{ab} - y^gamma_{ba}
///   + C^gamma_{b alpha} y^alpha_a - C^gamma_{a beta} y^beta_b
///   - C^gamma_{alpha beta} y^alpha_a y^beta_b
///   + y^gamma_c C^c_{ab} - C^gamma_{ab}.
pub fn holonomy_defect(
    fib: &FibrationSpec,
    p: &SecondJetPoint,
) -> Result<Vec<Vec<Vec<f64>>>, String> {
    let env = jet_env(&p.jet);
    let ev = |e: &ScalarExpr| e.eval(&env).map_err(|err| err.to_string());
    let (r, k) = (fib.r, fib.k);
    let mut out = vec![vec![vec![0.0; r]; r]; k];
    for gamma in 0..k {
        for a in 0..r {
            for b in 0..r {
                let mut acc = p.y2[gamma][a][b] - p.y2[gamma][b][a];
                for alpha in 0..k {
                    acc += ev(&fib.c_mix1[b][alpha][gamma])? * p.jet.y[alpha][a];
                    acc -= ev(&fib.c_mix1[a][alpha][gamma])? * p.jet.y[alpha][b];
                    for beta in 0..k {
                        acc -= ev(&fib.c_vert[alpha][beta][gamma])?
                            * p.jet.y[alpha][a]
                            * p.jet.y[beta][b];
                    }
                }
                for c in 0..r {
                    acc += p.jet.y[gamma][c] * ev(&fib.c_bas[a][b][c])?;
                }
                acc -= ev(&fib.c_mix0[a][b][gamma])?;
                out[gamma][a][b] = acc;
            }
        }
    }
    Ok(out)
}

/// The holonomy defect as expressions in (x, u, y, yd), indexed
/// `[gamma][a][b]`.
pub fn morphism_symbolic(fib: &FibrationSpec) -> Vec<Vec<Vec<ScalarExpr>>> {
    let (r, k) = (fib.r, fib.k);
    let y = |alpha: usize, a: usize| ScalarExpr::var(names::y(alpha, a));
    let yd = |alpha: usize, a: usize, dir: usize| ScalarExpr::var(names::yd(alpha, a, dir));
    let mut out = vec![vec![vec![ScalarExpr::zero(); r]; r]; k];
    for gamma in 0..k {
        for a in 0..r {
            for b in 0..r {
                let mut acc = yd(gamma, a, b) - yd(gamma, b, a);
                for alpha in 0..k {
                    acc = acc + fib.c_mix1[b][alpha][gamma].clone() * y(alpha, a)
                        - fib.c_mix1[a][alpha][gamma].clone() * y(alpha, b);
                    for beta in 0..k {
                        acc = acc
                            - fib.c_vert[alpha][beta][gamma].clone()
                                * y(alpha, a)
                                * y(beta, b);
                    }
                }
                for c in 0..r {
                    acc = acc + y(gamma, c) * fib.c_bas[a][b][c].clone();
                }
                acc = acc - fib.c_mix0[a][b][gamma].clone();
                out[gamma][a][b] = acc.simplify();
            }
        }
    }
    out
}

/// Admissibility residual as expressions in (x, u, y, ud), indexed `[A][a]`:
/// rho^i_a ud^A_i - rho^A_a - rho^A_alpha y^alpha_a.
pub fn admissibility_symbolic(fib: &FibrationSpec) -> Vec<Vec<ScalarExpr>> {
    let mut out = vec![vec![ScalarExpr::zero(); fib.r]; fib.nu];
    for big_a in 0..fib.nu {
        for a in 0..fib.r {
            let mut acc = ScalarExpr::zero();
            for i in 0..fib.nx {
                acc = acc + fib.rho_f[a][i].clone() * ScalarExpr::var(names::ud(big_a, i));
            }
            acc = acc - fib.rho_ea[a][big_a].clone();
            for alpha in 0..fib.k {
                acc = acc
                    - fib.rho_ealpha[alpha][big_a].clone()
                        * ScalarExpr::var(names::y(alpha, a));
            }
            out[big_a][a] = acc.simplify();
        }
    }
    out
}

/// A local section field of pi presented by expressions in x.
#[derive(Clone, Debug)]
pub struct SectionFieldExpr {
    /// phi^A(x), length nu.
    pub phi_u: Vec<ScalarExpr>,
    /// phi^alpha_a(x), indexed `[alpha][a]`.
    pub phi_y: Vec<Vec<ScalarExpr>>,
}

impl SectionFieldExpr {
    fn env_at(&self, x: &[f64]) -> Result<(Env, Vec<f64>, Vec<Vec<f64>>), String> {
        let mut env = Env::new();
        for (i, v) in x.iter().enumerate() {
            env.set(names::x(i), *v);
        }
        let u: Result<Vec<f64>, String> = self
            .phi_u
            .iter()
            .map(|e| e.eval(&env).map_err(|err| err.to_string()))
            .collect();
        let u = u?;
        let mut y = Vec::new();
        for row in &self.phi_y {
            let mut out_row = Vec::new();
            for e in row {
                out_row.push(e.eval(&env).map_err(|err| err.to_string())?);
            }
            y.push(out_row);
        }
        Ok((env, u, y))
    }

    /// The honest second jet of the section at x: u, y from the expressions,
    /// y2[gamma][a][b] = rho^i_b(x) d(phi^gamma_a)/dx^i.
    pub fn second_jet_at(
        &self,
        fib: &FibrationSpec,
        x: &[f64],
    ) -> Result<SecondJetPoint, String> {
        let (env, u, y) = self.env_at(x)?;
        let mut composed_env = env.clone();
        for (a, v) in u.iter().enumerate() {
            composed_env.set(names::u(a), *v);
        }
        let mut y2 = vec![vec![vec![0.0; fib.r]; fib.r]; fib.k];
        for gamma in 0..fib.k {
            for a in 0..fib.r {
                for b in 0..fib.r {
                    let mut acc = 0.0;
                    for i in 0..fib.nx {
                        acc += fib.rho_f[b][i]
                            .eval(&composed_env)
                            .map_err(|e| e.to_string())?
                            * self.phi_y[gamma][a]
                                .diff(&names::x(i))
                                .eval(&env)
                                .map_err(|e| e.to_string())?;
                    }
                    y2[gamma][a][b] = acc;
                }
            }
        }
        Ok(SecondJetPoint {
            jet: JetPoint {
                x: x.to_vec(),
                u,
                y,
            },
            y2,
        })
    }
}

/// Anchor-compatibility residual of a section field at x, indexed `[A][a]`:
/// rho^j_a d(phi^A)/dx^j - rho^A_a - rho^A_alpha phi^alpha_a, structure
/// functions evaluated along the section.
pub fn section_admissibility_residual(
    fib: &FibrationSpec,
    sec: &SectionFieldExpr,
    x: &[f64],
) -> Result<Vec<Vec<f64>>, String> {
    let (env, u, y) = sec.env_at(x)?;
    let mut composed = env.clone();
    for (a, v) in u.iter().enumerate() {
        composed.set(names::u(a), *v);
    }
    let ev = |e: &ScalarExpr| e.eval(&composed).map_err(|err| err.to_string());
    let mut out = vec![vec![0.0; fib.r]; fib.nu];
    for big_a in 0..fib.nu {
        for a in 0..fib.r {
            let mut acc = 0.0;
            for i in 0..fib.nx {
                acc += ev(&fib.rho_f[a][i])?
                    * sec.phi_u[big_a]
                        .diff(&names::x(i))
                        .eval(&env)
                        .map_err(|e| e.to_string())?;
            }
            acc -= ev(&fib.rho_ea[a][big_a])?;
            for alpha in 0..fib.k {
                acc -= ev(&fib.rho_ealpha[alpha][big_a])? * y[alpha][a];
            }
            out[big_a][a] = acc;
        }
    }
    Ok(out)
}

/// Bracket-compatibility residual of a section field at x: the holonomy
/// defect of its honest second jet, indexed `[gamma][a][b]`.
pub fn section_morphism_residual(
    fib: &FibrationSpec,
    sec: &SectionFieldExpr,
    x: &[f64],
) -> Result<Vec<Vec<Vec<f64>>>, String> {
    let p2 = sec.second_jet_at(fib, x)?;
    holonomy_defect(fib, &p2)
}

/// Complete lift of a vertical section to the prolongation:
/// sigma^(1) = sigma^alpha X_alpha
///   + (sigma^alpha_{|a} + Z^alpha_{a beta} sigma^beta) V^a_alpha.
/// Coefficients are expressions in (x, u, y).
pub fn complete_lift(
    fib: &FibrationSpec,
    sigma: &SectionExpr,
) -> Result<Vec<ScalarExpr>, JetError> {
    if !sigma.is_vertical() {
        return Err(JetError::NotVertical);
    }
    let prol = ProlongationSpec::from_fibration(fib);
    let z = z_functions(fib);
    let mut out = vec![ScalarExpr::zero(); prol.rank()];
    for alpha in 0..fib.k {
        out[prol.idx_xalpha(alpha)] = sigma.vertical[alpha].clone();
        for a in 0..fib.r {
            let mut coeff = total_derivative(fib, &sigma.vertical[alpha], a);
            for beta in 0..fib.k {
                coeff = coeff + z.z_mix1[a][beta][alpha].clone() * sigma.vertical[beta].clone();
            }
            out[prol.idx_v(alpha, a)] = coeff.simplify();
        }
    }
    Ok(out)
}

/// Random jet point: base in the sample box, y uniform in [-1, 1].
pub fn random_jet_point<R: Rng>(fib: &FibrationSpec, rng: &mut R) -> JetPoint {
    let base = {
        let draw = |rng: &mut R, (lo, hi): (f64, f64)| {
            if lo == hi {
                lo
            } else {
                rng.random_range(lo..hi)
            }
        };
        let x: Vec<f64> = (0..fib.nx).map(|i| draw(rng, fib.sample_box[i])).collect();
        let u: Vec<f64> = (0..fib.nu)
            .map(|a| draw(rng, fib.sample_box[fib.nx + a]))
            .collect();
        (x, u)
    };
    let y = (0..fib.k)
        .map(|_| (0..fib.r).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    JetPoint {
        x: base.0,
        u: base.1,
        y,
    }
}

/// Random second jet: jet point plus y2 uniform in [-1, 1].
pub fn random_second_jet<R: Rng>(fib: &FibrationSpec, rng: &mut R) -> SecondJetPoint {
    let jet = random_jet_point(fib, rng);
    let y2 = (0..fib.k)
        .map(|_| {
            (0..fib.r)
                .map(|_| (0..fib.r).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect()
        })
        .collect();
    SecondJetPoint { jet, y2 }
}
