//! Hamiltonian side: dual prolongation, canonical forms, Hamilton equations,
//! and the Legendre transformation.
//!
//! Momentum coordinates mu{alpha}_{a} mirror the jet coordinates; the affine
//! coordinate mu0 appears only on the extended dual, which is used for the
//! Legendre pullback identity. Formal field-derivative symbols are
//! ud{A}_{i} and mud{alpha}_{a}_{i} with the base direction last.
//!
//! Hamilton residuals follow the same left-minus-right convention as the
//! Euler-Lagrange expressions, so both sides of the Legendre equivalence
//! vanish on the same fields.

use crate::algebroid::FibrationSpec;
use crate::expr::{Env, ScalarExpr};
use crate::exterior::{differential, wedge, AlgebroidForm, AnchoredBasisSpec, BundleMapExpr};
use crate::jet::{jet_env, JetPoint, ProlongationSpec};
use crate::lagrangian::{momenta, ModelError, ModelSpec, VolumeSpec};
use crate::names;
use nalgebra::{DMatrix, DVector};

/// A point of the dual bundle: base point plus mu^a_alpha, optionally mu0.
#[derive(Clone, Debug)]
pub struct MomentumPoint {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    /// mu[alpha][a].
    pub mu: Vec<Vec<f64>>,
    pub mu0: Option<f64>,
}

/// Environment binding (x, u, mu) and mu0 when present.
pub fn momentum_env(q: &MomentumPoint) -> Env {
    let mut env = Env::new();
    for (i, v) in q.x.iter().enumerate() {
        env.set(names::x(i), *v);
    }
    for (a, v) in q.u.iter().enumerate() {
        env.set(names::u(a), *v);
    }
    for (alpha, row) in q.mu.iter().enumerate() {
        for (a, v) in row.iter().enumerate() {
            env.set(names::mu(alpha, a), *v);
        }
    }
    if let Some(v) = q.mu0 {
        env.set(names::MU0, v);
    }
    env
}

/// A momentum point with formal first-derivative data for (u, mu) fields:
/// ud[A][i] and mud[alpha][a][i].
#[derive(Clone, Debug)]
pub struct MomentumSample {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    /// mu[alpha][a].
    pub mu: Vec<Vec<f64>>,
    /// ud[A][i].
    pub ud: Vec<Vec<f64>>,
    /// mud[alpha][a][i].
    pub mud: Vec<Vec<Vec<f64>>>,
}

/// Environment binding (x, u, mu, ud, mud) names.
pub fn momentum_sample_env(s: &MomentumSample) -> Env {
    let mut env = momentum_env(&MomentumPoint {
        x: s.x.clone(),
        u: s.u.clone(),
        mu: s.mu.clone(),
        mu0: None,
    });
    for (a, row) in s.ud.iter().enumerate() {
        for (i, v) in row.iter().enumerate() {
            env.set(names::ud(a, i), *v);
        }
    }
    for (alpha, block) in s.mud.iter().enumerate() {
        for (a, row) in block.iter().enumerate() {
            for (i, v) in row.iter().enumerate() {
                env.set(names::mud(alpha, a, i), *v);
            }
        }
    }
    env
}

/// The prolongation basis over dual coordinates (x, u, mu), with fiber
/// {X_a, X_alpha, P^alpha_a}; the extended variant prepends the affine
/// coordinate mu0 and its fiber element P_0.
#[derive(Clone, Debug)]
pub struct DualProlongationSpec {
    pub nx: usize,
    pub nu: usize,
    pub r: usize,
    pub k: usize,
    pub extended: bool,
    pub basis: AnchoredBasisSpec,
}

impl DualProlongationSpec {
    pub fn from_fibration(fib: &FibrationSpec) -> Self {
        Self::build(fib, false)
    }

    /// Dual prolongation with the affine mu0 coordinate and P_0.
    pub fn extended_from_fibration(fib: &FibrationSpec) -> Self {
        Self::build(fib, true)
    }

    fn build(fib: &FibrationSpec, extended: bool) -> Self {
        let (nx, nu, r, k) = (fib.nx, fib.nu, fib.r, fib.k);
        let ext = extended as usize;
        let n_fiber = r + k + ext + k * r;
        let n_coord = nx + nu + ext + k * r;
        let mut coord_names = fib.coord_names();
        if extended {
            coord_names.push(names::MU0.to_string());
        }
        for alpha in 0..k {
            for a in 0..r {
                coord_names.push(names::mu(alpha, a));
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
        if extended {
            anchor[r + k][nx + nu] = ScalarExpr::one();
        }
        for alpha in 0..k {
            for a in 0..r {
                anchor[r + k + ext + alpha * r + a][nx + nu + ext + alpha * r + a] =
                    ScalarExpr::one();
            }
        }
        // Brackets of the X-part are those of the total basis; every bracket
        // touching a P element vanishes.
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
        DualProlongationSpec {
            nx,
            nu,
            r,
            k,
            extended,
            basis: AnchoredBasisSpec {
                coord_names,
                anchor,
                c,
            },
        }
    }

    pub fn rank(&self) -> usize {
        self.r + self.k + self.extended as usize + self.k * self.r
    }

    /// Fiber index of X_a.
    pub fn idx_xa(&self, a: usize) -> usize {
        a
    }

    /// Fiber index of X_alpha.
    pub fn idx_xalpha(&self, alpha: usize) -> usize {
        self.r + alpha
    }

    /// Fiber index of P_0 (extended spec only).
    pub fn idx_p0(&self) -> usize {
        self.r + self.k
    }

    /// Fiber index of P^alpha_a.
    pub fn idx_p(&self, alpha: usize, a: usize) -> usize {
        self.r + self.k + self.extended as usize + alpha * self.r + a
    }

    /// Coordinate index of mu^a_alpha.
    pub fn coord_mu(&self, alpha: usize, a: usize) -> usize {
        self.nx + self.nu + self.extended as usize + alpha * self.r + a
    }
}

/// The multimomentum form mu^a_alpha X^alpha ^ omega_a - H omega for a
/// Hamiltonian model, on the plain dual prolongation.
pub fn canonical_theta(model: &ModelSpec) -> Result<AlgebroidForm, ModelError> {
    let h = model.require_h()?;
    let fib = &model.fib;
    let dual = DualProlongationSpec::from_fibration(fib);
    let mut theta = mu_block(&dual);
    let vol = VolumeSpec::new(fib.r);
    for (tuple, coeff) in &vol.omega.coeffs {
        theta.add_term(tuple, -h.clone() * coeff.clone());
    }
    Ok(theta.simplified())
}

/// The canonical form mu^a_alpha X^alpha ^ omega_a + mu0 omega on the
/// extended dual prolongation.
pub fn extended_canonical_theta(fib: &FibrationSpec) -> AlgebroidForm {
    let dual = DualProlongationSpec::extended_from_fibration(fib);
    let mut theta = mu_block(&dual);
    let vol = VolumeSpec::new(fib.r);
    for (tuple, coeff) in &vol.omega.coeffs {
        theta.add_term(tuple, ScalarExpr::var(names::MU0) * coeff.clone());
    }
    theta.simplified()
}

fn mu_block(dual: &DualProlongationSpec) -> AlgebroidForm {
    let vol = VolumeSpec::new(dual.r);
    let mut theta = AlgebroidForm::zero(dual.r);
    for alpha in 0..dual.k {
        for a in 0..dual.r {
            let x_alpha = AlgebroidForm::basis_covector(dual.idx_xalpha(alpha));
            let term = wedge(&x_alpha, &vol.omega_a[a]);
            for (tuple, coeff) in &term.coeffs {
                theta.add_term(
                    tuple,
                    ScalarExpr::var(names::mu(alpha, a)) * coeff.clone(),
                );
            }
        }
    }
    theta
}

/// Theta_h and Omega_h = -d Theta_h.
pub fn canonical_forms(
    model: &ModelSpec,
) -> Result<(AlgebroidForm, AlgebroidForm), ModelError> {
    let dual = DualProlongationSpec::from_fibration(&model.fib);
    let theta = canonical_theta(model)?;
    let d = differential(&dual.basis, &theta).map_err(|e| ModelError::Eval(e.to_string()))?;
    let mut omega = AlgebroidForm::zero(d.degree);
    for (tuple, coeff) in &d.coeffs {
        omega.add_term(tuple, -coeff.clone());
    }
    Ok((theta, omega.simplified()))
}

/// Derivative of f(x, u, mu) along base direction b through field data:
/// D_b(f) = rho^j_b (df/dx^j + ud^A_j df/du^A + mud^beta_{c j} df/dmu^c_beta).
pub fn momentum_total_derivative(fib: &FibrationSpec, f: &ScalarExpr, b: usize) -> ScalarExpr {
    let mut acc = ScalarExpr::zero();
    for j in 0..fib.nx {
        let mut inner = f.diff(&names::x(j));
        for big_a in 0..fib.nu {
            let df = f.diff(&names::u(big_a));
            if df.is_zero_const() {
                continue;
            }
            inner = inner + ScalarExpr::var(names::ud(big_a, j)) * df;
        }
        for beta in 0..fib.k {
            for c in 0..fib.r {
                let df = f.diff(&names::mu(beta, c));
                if df.is_zero_const() {
                    continue;
                }
                inner = inner + ScalarExpr::var(names::mud(beta, c, j)) * df;
            }
        }
        acc = acc + fib.rho_f[b][j].clone() * inner;
    }
    acc.simplify()
}

/// The three Hamilton equation blocks as residual expressions in
/// (x, u, mu, ud, mud).
#[derive(Clone, Debug)]
pub struct HamiltonSystem {
    /// admissibility[A][a]: rho^i_a ud^A_i - rho^A_a - rho^A_alpha dH/dmu^a_alpha.
    pub admissibility: Vec<Vec<ScalarExpr>>,
    /// compatibility[gamma][a][b]: holonomy-type defect of G^alpha_a = dH/dmu^a_alpha.
    pub compatibility: Vec<Vec<Vec<ScalarExpr>>>,
    /// momentum[alpha]: rho^i_c mud^alpha_{c i} + mu^b_alpha C^c_{bc}
    /// + rho^A_alpha dH/du^A - mu^c_gamma (C^gamma_{c alpha} + C^gamma_{beta alpha} G^beta_c).
    pub momentum: Vec<ScalarExpr>,
}

/// dH/dmu^a_alpha, indexed `[alpha][a]`.
pub fn hamiltonian_velocities(model: &ModelSpec) -> Result<Vec<Vec<ScalarExpr>>, ModelError> {
    let h = model.require_h()?;
    let fib = &model.fib;
    Ok((0..fib.k)
        .map(|alpha| {
            (0..fib.r)
                .map(|a| h.diff(&names::mu(alpha, a)))
                .collect()
        })
        .collect())
}

pub fn hamilton_symbolic(model: &ModelSpec) -> Result<HamiltonSystem, ModelError> {
    let h = model.require_h()?;
    let fib = &model.fib;
    let g = hamiltonian_velocities(model)?;
    let mut admissibility = Vec::with_capacity(fib.nu);
    for big_a in 0..fib.nu {
        let mut row = Vec::with_capacity(fib.r);
        for a in 0..fib.r {
            let mut acc = ScalarExpr::zero();
            for i in 0..fib.nx {
                acc = acc + fib.rho_f[a][i].clone() * ScalarExpr::var(names::ud(big_a, i));
            }
            acc = acc - fib.rho_ea[a][big_a].clone();
            for alpha in 0..fib.k {
                acc = acc - fib.rho_ealpha[alpha][big_a].clone() * g[alpha][a].clone();
            }
            row.push(acc.simplify());
        }
        admissibility.push(row);
    }
    let mut compatibility = vec![vec![vec![ScalarExpr::zero(); fib.r]; fib.r]; fib.k];
    for gamma in 0..fib.k {
        for a in 0..fib.r {
            for b in 0..fib.r {
                let mut acc = momentum_total_derivative(fib, &g[gamma][a], b)
                    - momentum_total_derivative(fib, &g[gamma][b], a);
                for alpha in 0..fib.k {
                    acc = acc + fib.c_mix1[b][alpha][gamma].clone() * g[alpha][a].clone()
                        - fib.c_mix1[a][alpha][gamma].clone() * g[alpha][b].clone();
                    for beta in 0..fib.k {
                        acc = acc
                            - fib.c_vert[alpha][beta][gamma].clone()
                                * g[alpha][a].clone()
                                * g[beta][b].clone();
                    }
                }
                for c in 0..fib.r {
                    acc = acc + g[gamma][c].clone() * fib.c_bas[a][b][c].clone();
                }
                acc = acc - fib.c_mix0[a][b][gamma].clone();
                compatibility[gamma][a][b] = acc.simplify();
            }
        }
    }
    let mut momentum = Vec::with_capacity(fib.k);
    for alpha in 0..fib.k {
        let mut acc = ScalarExpr::zero();
        for c in 0..fib.r {
            for i in 0..fib.nx {
                acc = acc + fib.rho_f[c][i].clone() * ScalarExpr::var(names::mud(alpha, c, i));
            }
        }
        for b in 0..fib.r {
            for c in 0..fib.r {
                acc = acc
                    + ScalarExpr::var(names::mu(alpha, b)) * fib.c_bas[b][c][c].clone();
            }
        }
        for big_a in 0..fib.nu {
            acc = acc + fib.rho_ealpha[alpha][big_a].clone() * h.diff(&names::u(big_a));
        }
        for c in 0..fib.r {
            for gamma in 0..fib.k {
                let mut paren = fib.c_mix1[c][alpha][gamma].clone();
                for beta in 0..fib.k {
                    paren = paren + fib.c_vert[beta][alpha][gamma].clone() * g[beta][c].clone();
                }
                acc = acc - ScalarExpr::var(names::mu(gamma, c)) * paren;
            }
        }
        momentum.push(acc.simplify());
    }
    Ok(HamiltonSystem {
        admissibility,
        compatibility,
        momentum,
    })
}

/// Numeric residuals of the Hamilton system at a sample.
#[derive(Clone, Debug)]
pub struct HamiltonResiduals {
    pub admissibility: Vec<Vec<f64>>,
    pub compatibility: Vec<Vec<Vec<f64>>>,
    pub momentum: Vec<f64>,
    pub max_abs: f64,
}

pub fn hamilton_residual(
    model: &ModelSpec,
    sample: &MomentumSample,
) -> Result<HamiltonResiduals, ModelError> {
    let system = hamilton_symbolic(model)?;
    let env = momentum_sample_env(sample);
    let ev = |e: &ScalarExpr| e.eval(&env).map_err(|err| ModelError::Eval(err.to_string()));
    let mut max_abs = 0.0f64;
    let mut admissibility = Vec::new();
    for row in &system.admissibility {
        let mut out = Vec::new();
        for e in row {
            let v = ev(e)?;
            max_abs = max_abs.max(v.abs());
            out.push(v);
        }
        admissibility.push(out);
    }
    let mut compatibility = Vec::new();
    for block in &system.compatibility {
        let mut rows = Vec::new();
        for row in block {
            let mut out = Vec::new();
            for e in row {
                let v = ev(e)?;
                max_abs = max_abs.max(v.abs());
                out.push(v);
            }
            rows.push(out);
        }
        compatibility.push(rows);
    }
    let mut momentum = Vec::new();
    for e in &system.momentum {
        let v = ev(e)?;
        max_abs = max_abs.max(v.abs());
        momentum.push(v);
    }
    Ok(HamiltonResiduals {
        admissibility,
        compatibility,
        momentum,
        max_abs,
    })
}

/// The Legendre map: mu^a_alpha = dL/dy^alpha_a, mu0 = L - dL/dy . y.
pub fn legendre(model: &ModelSpec, p: &JetPoint) -> Result<MomentumPoint, ModelError> {
    let l = model.require_l()?;
    let fib = &model.fib;
    let pm = momenta(model)?;
    let env = jet_env(p);
    let ev = |e: &ScalarExpr| e.eval(&env).map_err(|err| ModelError::Eval(err.to_string()));
    let mut mu = vec![vec![0.0; fib.r]; fib.k];
    let mut pairing = 0.0;
    for alpha in 0..fib.k {
        for a in 0..fib.r {
            mu[alpha][a] = ev(&pm[alpha][a])?;
            pairing += mu[alpha][a] * p.y[alpha][a];
        }
    }
    let mu0 = ev(l)? - pairing;
    Ok(MomentumPoint {
        x: p.x.clone(),
        u: p.u.clone(),
        mu,
        mu0: Some(mu0),
    })
}

/// Damped Newton inversion of the Legendre map in the jet fiber.
///
/// Solves dL/dy(x, u, y) = mu from y_init, tolerance 1e-12 on the sup norm,
/// at most 100 iterations, halving the step while the residual does not
/// decrease (minimum step 2^-20).
pub fn legendre_inverse(
    model: &ModelSpec,
    q: &MomentumPoint,
    y_init: &[Vec<f64>],
) -> Result<JetPoint, ModelError> {
    let l = model.require_l()?;
    let fib = &model.fib;
    let (r, k) = (fib.r, fib.k);
    let n = k * r;
    let first: Vec<Vec<ScalarExpr>> = momenta(model)?;
    let second: Vec<Vec<ScalarExpr>> = (0..k)
        .flat_map(|alpha| {
            (0..r).map(move |a| (alpha, a))
        })
        .map(|(alpha, a)| {
            (0..k)
                .flat_map(|beta| (0..r).map(move |b| (beta, b)))
                .map(|(beta, b)| first[alpha][a].diff(&names::y(beta, b)))
                .collect()
        })
        .collect();
    let _ = l;
    let mut point = JetPoint {
        x: q.x.clone(),
        u: q.u.clone(),
        y: y_init.to_vec(),
    };
    let residual = |p: &JetPoint| -> Result<DVector<f64>, ModelError> {
        let env = jet_env(p);
        let mut f = DVector::zeros(n);
        for alpha in 0..k {
            for a in 0..r {
                f[alpha * r + a] = first[alpha][a]
                    .eval(&env)
                    .map_err(|e| ModelError::Eval(e.to_string()))?
                    - q.mu[alpha][a];
            }
        }
        Ok(f)
    };
    let mut f = residual(&point)?;
    for _ in 0..=100 {
        let env = jet_env(&point);
        let mut jac = DMatrix::zeros(n, n);
        for row in 0..n {
            for col in 0..n {
                jac[(row, col)] = second[row][col]
                    .eval(&env)
                    .map_err(|e| ModelError::Eval(e.to_string()))?;
            }
        }
        // Regularity gates the inversion even from a converged start.
        let det = jac.clone().determinant();
        let step = jac
            .lu()
            .solve(&(-&f))
            .ok_or(ModelError::SingularHessian { det })?;
        let norm = f.amax();
        if norm < 1e-12 {
            return Ok(point);
        }
        let mut lambda = 1.0f64;
        loop {
            let mut trial = point.clone();
            for alpha in 0..k {
                for a in 0..r {
                    trial.y[alpha][a] += lambda * step[alpha * r + a];
                }
            }
            let f_trial = residual(&trial)?;
            if f_trial.amax() < norm || lambda <= 2.0f64.powi(-20) {
                point = trial;
                f = f_trial;
                break;
            }
            lambda /= 2.0;
        }
    }
    Err(ModelError::NonConvergence { residual: f.amax() })
}

/// H(x, u, mu) = <mu, y(mu)> - L(x, u, y(mu)) through legendre_inverse.
pub fn hamiltonian_from_l(model: &ModelSpec, q: &MomentumPoint) -> Result<f64, ModelError> {
    let l = model.require_l()?;
    let fib = &model.fib;
    let y0 = vec![vec![0.0; fib.r]; fib.k];
    let p = legendre_inverse(model, q, &y0)?;
    let env = jet_env(&p);
    let lv = l.eval(&env).map_err(|e| ModelError::Eval(e.to_string()))?;
    let mut pairing = 0.0;
    for alpha in 0..fib.k {
        for a in 0..fib.r {
            pairing += q.mu[alpha][a] * p.y[alpha][a];
        }
    }
    Ok(pairing - lv)
}

/// The prolonged Legendre map as a bundle map from the jet prolongation to
/// the extended dual prolongation, with tangent rows given by anchor
/// derivatives of the momentum functions.
pub fn legendre_prolongation_map(model: &ModelSpec) -> Result<BundleMapExpr, ModelError> {
    let l = model.require_l()?;
    let fib = &model.fib;
    let prol = ProlongationSpec::from_fibration(fib);
    let dual = DualProlongationSpec::extended_from_fibration(fib);
    let pm = momenta(model)?;
    let mut mu0_expr = l.clone();
    for alpha in 0..fib.k {
        for a in 0..fib.r {
            mu0_expr = mu0_expr - pm[alpha][a].clone() * ScalarExpr::var(names::y(alpha, a));
        }
    }
    let mu0_expr = mu0_expr.simplify();
    let mut base = Vec::new();
    for i in 0..fib.nx {
        base.push((names::x(i), ScalarExpr::var(names::x(i))));
    }
    for big_a in 0..fib.nu {
        base.push((names::u(big_a), ScalarExpr::var(names::u(big_a))));
    }
    base.push((names::MU0.to_string(), mu0_expr.clone()));
    for alpha in 0..fib.k {
        for a in 0..fib.r {
            base.push((names::mu(alpha, a), pm[alpha][a].clone()));
        }
    }
    let src_rank = prol.rank();
    let mut fiber = vec![vec![ScalarExpr::zero(); src_rank]; dual.rank()];
    for a in 0..fib.r {
        fiber[dual.idx_xa(a)][prol.idx_xa(a)] = ScalarExpr::one();
    }
    for alpha in 0..fib.k {
        fiber[dual.idx_xalpha(alpha)][prol.idx_xalpha(alpha)] = ScalarExpr::one();
    }
    for q in 0..src_rank {
        let mut unit = vec![ScalarExpr::zero(); src_rank];
        unit[q] = ScalarExpr::one();
        fiber[dual.idx_p0()][q] =
            crate::exterior::anchor_derivative(&prol.basis, &unit, &mu0_expr);
        for alpha in 0..fib.k {
            for a in 0..fib.r {
                fiber[dual.idx_p(alpha, a)][q] =
                    crate::exterior::anchor_derivative(&prol.basis, &unit, &pm[alpha][a]);
            }
        }
    }
    Ok(BundleMapExpr { base, fiber })
}

/// Hamilton residuals of a Lagrangian solution field mapped through the
/// Legendre transform, with dH/dmu and dH/du recovered from legendre_inverse
/// and the Legendre envelope identity dH/du = -dL/du.
#[derive(Clone, Debug)]
pub struct EquivalenceReport {
    pub nodes: usize,
    pub max_admissibility: f64,
    pub max_compatibility: f64,
    pub max_momentum: f64,
    pub max_roundtrip: f64,
}

impl EquivalenceReport {
    pub fn max_abs(&self) -> f64 {
        self.max_admissibility
            .max(self.max_compatibility)
            .max(self.max_momentum)
    }
}

/// Pointwise ingredients for the equivalence check; derivative data must be
/// computed by the caller with its own scheme (the same one used for y).
#[derive(Clone, Debug)]
pub struct EquivalenceSample {
    pub point: MomentumSample,
    /// Jet fiber guess for inverting the Legendre map (e.g. the field's y).
    pub y_guess: Vec<Vec<f64>>,
    /// FD derivative of G^gamma_a = y^gamma_a(mu) along x^j: dg[gamma][a][j].
    pub dg: Vec<Vec<Vec<f64>>>,
}

pub fn equivalence_check(
    model: &ModelSpec,
    samples: &[EquivalenceSample],
) -> Result<EquivalenceReport, ModelError> {
    let l = model.require_l()?;
    let fib = &model.fib;
    let mut report = EquivalenceReport {
        nodes: samples.len(),
        max_admissibility: 0.0,
        max_compatibility: 0.0,
        max_momentum: 0.0,
        max_roundtrip: 0.0,
    };
    for s in samples {
        let q = MomentumPoint {
            x: s.point.x.clone(),
            u: s.point.u.clone(),
            mu: s.point.mu.clone(),
            mu0: None,
        };
        let inv = legendre_inverse(model, &q, &s.y_guess)?;
        for alpha in 0..fib.k {
            for a in 0..fib.r {
                report.max_roundtrip = report
                    .max_roundtrip
                    .max((inv.y[alpha][a] - s.y_guess[alpha][a]).abs());
            }
        }
        let env = jet_env(&inv);
        let ev = |e: &ScalarExpr| e.eval(&env).map_err(|err| ModelError::Eval(err.to_string()));
        let evx = |e: &ScalarExpr| -> Result<f64, ModelError> { ev(e) };
        let g = &inv.y;
        // (i) admissibility through the inverted velocities.
        for big_a in 0..fib.nu {
            for a in 0..fib.r {
                let mut acc = 0.0;
                for i in 0..fib.nx {
                    acc += evx(&fib.rho_f[a][i])? * s.point.ud[big_a][i];
                }
                acc -= evx(&fib.rho_ea[a][big_a])?;
                for alpha in 0..fib.k {
                    acc -= evx(&fib.rho_ealpha[alpha][big_a])? * g[alpha][a];
                }
                report.max_admissibility = report.max_admissibility.max(acc.abs());
            }
        }
        // (ii) holonomy-type compatibility of G along the data.
        for gamma in 0..fib.k {
            for a in 0..fib.r {
                for b in 0..fib.r {
                    let mut d_b_ga = 0.0;
                    let mut d_a_gb = 0.0;
                    for j in 0..fib.nx {
                        d_b_ga += evx(&fib.rho_f[b][j])? * s.dg[gamma][a][j];
                        d_a_gb += evx(&fib.rho_f[a][j])? * s.dg[gamma][b][j];
                    }
                    let mut acc = d_b_ga - d_a_gb;
                    for alpha in 0..fib.k {
                        acc += evx(&fib.c_mix1[b][alpha][gamma])? * g[alpha][a];
                        acc -= evx(&fib.c_mix1[a][alpha][gamma])? * g[alpha][b];
                        for beta in 0..fib.k {
                            acc -= evx(&fib.c_vert[alpha][beta][gamma])?
                                * g[alpha][a]
                                * g[beta][b];
                        }
                    }
                    for c in 0..fib.r {
                        acc += g[gamma][c] * evx(&fib.c_bas[a][b][c])?;
                    }
                    acc -= evx(&fib.c_mix0[a][b][gamma])?;
                    report.max_compatibility = report.max_compatibility.max(acc.abs());
                }
            }
        }
        // (iii) momentum equation with dH/du^A = -dL/du^A at the inverted jet.
        for alpha in 0..fib.k {
            let mut acc = 0.0;
            for c in 0..fib.r {
                for i in 0..fib.nx {
                    acc += evx(&fib.rho_f[c][i])? * s.point.mud[alpha][c][i];
                }
            }
            for b in 0..fib.r {
                for c in 0..fib.r {
                    acc += s.point.mu[alpha][b] * evx(&fib.c_bas[b][c][c])?;
                }
            }
            for big_a in 0..fib.nu {
                acc += evx(&fib.rho_ealpha[alpha][big_a])? * -evx(&l.diff(&names::u(big_a)))?;
            }
            for c in 0..fib.r {
                for gamma in 0..fib.k {
                    let mut paren = evx(&fib.c_mix1[c][alpha][gamma])?;
                    for beta in 0..fib.k {
                        paren += evx(&fib.c_vert[beta][alpha][gamma])? * g[beta][c];
                    }
                    acc -= s.point.mu[gamma][c] * paren;
                }
            }
            report.max_momentum = report.max_momentum.max(acc.abs());
        }
    }
    Ok(report)
}

/// Random momentum point: base in the sample box, mu uniform in [-1, 1].
pub fn random_momentum_point<R: rand::Rng>(fib: &FibrationSpec, rng: &mut R) -> MomentumPoint {
    let p = crate::jet::random_jet_point(fib, rng);
    let mu = (0..fib.k)
        .map(|_| (0..fib.r).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    MomentumPoint {
        x: p.x,
        u: p.u,
        mu,
        mu0: None,
    }
}
