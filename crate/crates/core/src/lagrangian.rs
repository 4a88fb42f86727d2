//! Lagrangian field equations, Cartan and multisymplectic forms.
//!
//! The volume data is fixed to the basis top form omega = X^1 ^ ... ^ X^r
//! with contractions omega_a = i_{e_a} omega; all volume-dependent objects
//! use this choice.
//!
//! The Euler-Lagrange expression, per vertical index alpha,
//!   EL_alpha = (dL/dy^alpha_a)'_{|a} + dL/dy^alpha_a C^b_{ba}
//!              - dL/dy^gamma_a Z^gamma_{a alpha} - dL/du^A rho^A_alpha,
//! is linear in the formal yd symbols, with the Hessian of L as coefficient.
//! Its agreement with the contraction Omega_L(X_alpha, h_1, ..., h_r) over
//! second-jet horizontal lifts is a test oracle, not an implementation path.

use crate::algebroid::{FibrationSpec, SectionExpr};
use crate::expr::ScalarExpr;
use crate::exterior::{
    anchor_derivative, contraction, differential, wedge, AlgebroidForm,
};
use crate::jet::{
    complete_lift, second_jet_env, total_derivative, z_functions, JetError, JetPoint,
    ProlongationSpec, SecondJetPoint,
};
use crate::names;
use nalgebra::DMatrix;
use thiserror::Error;

/// A fibration together with optional Lagrangian and Hamiltonian densities.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub name: String,
    pub fib: FibrationSpec,
    /// Density in (x, u, y).
    pub lagrangian: Option<ScalarExpr>,
    /// Density in (x, u, mu).
    pub hamiltonian: Option<ScalarExpr>,
}

/// Errors for model-level operations.
#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("model does not declare a lagrangian")]
    MissingLagrangian,
    #[error("model does not declare a hamiltonian")]
    MissingHamiltonian,
    #[error("evaluation failed: {0}")]
    Eval(String),
    #[error("fiber Hessian is singular (det {det})")]
    SingularHessian { det: f64 },
    #[error("Newton iteration failed to converge (last residual {residual})")]
    NonConvergence { residual: f64 },
    #[error(transparent)]
    Jet(#[from] JetError),
}

impl ModelSpec {
    pub fn require_l(&self) -> Result<&ScalarExpr, ModelError> {
        self.lagrangian.as_ref().ok_or(ModelError::MissingLagrangian)
    }

    pub fn require_h(&self) -> Result<&ScalarExpr, ModelError> {
        self.hamiltonian
            .as_ref()
            .ok_or(ModelError::MissingHamiltonian)
    }
}

/// Basis volume form and its single contractions on a prolongation whose
/// first r fiber slots are the X_a.
#[derive(Clone, Debug)]
pub struct VolumeSpec {
    pub omega: AlgebroidForm,
    /// omega_a = i_{e_a} omega carries the sign (-1)^a, 0-based.
    pub omega_a: Vec<AlgebroidForm>,
}

impl VolumeSpec {
    pub fn new(r: usize) -> Self {
        let mut omega = AlgebroidForm::zero(r);
        omega.add_term(&(0..r).collect::<Vec<_>>(), ScalarExpr::one());
        let omega = omega.simplified();
        let omega_a = (0..r)
            .map(|a| {
                let mut e_a = vec![ScalarExpr::zero(); r];
                e_a[a] = ScalarExpr::one();
                // Contraction against only the X-slots is well defined since
                // omega has no other indices; pad for larger fibers lazily.
                let mut sigma = e_a;
                sigma.resize(r.max(1), ScalarExpr::zero());
                contraction(&sigma, &omega)
                    .expect("volume degree is positive")
                    .simplified()
            })
            .collect();
        VolumeSpec { omega, omega_a }
    }
}

/// Vertical endomorphism S^a = theta^alpha (x) V^a_alpha as a fiber matrix,
/// indexed `[out][in]`.
pub fn vertical_endomorphism(prol: &ProlongationSpec, a: usize) -> Vec<Vec<ScalarExpr>> {
    let n = prol.rank();
    let mut s = vec![vec![ScalarExpr::zero(); n]; n];
    for alpha in 0..prol.k {
        let theta = prol.theta(alpha);
        for (tuple, coeff) in &theta.coeffs {
            s[prol.idx_v(alpha, a)][tuple[0]] = coeff.clone();
        }
    }
    s
}

/// dL/dy^alpha_a as expressions, indexed `[alpha][a]`.
pub fn momenta(model: &ModelSpec) -> Result<Vec<Vec<ScalarExpr>>, ModelError> {
    let l = model.require_l()?;
    let fib = &model.fib;
    Ok((0..fib.k)
        .map(|alpha| {
            (0..fib.r)
                .map(|a| l.diff(&names::y(alpha, a)))
                .collect()
        })
        .collect())
}

/// The Cartan form Theta_L = dL/dy^alpha_a theta^alpha ^ omega_a + L omega
/// on the prolongation.
pub fn cartan_form(model: &ModelSpec) -> Result<AlgebroidForm, ModelError> {
    let l = model.require_l()?;
    let fib = &model.fib;
    let prol = ProlongationSpec::from_fibration(fib);
    let vol = VolumeSpec::new(fib.r);
    let p = momenta(model)?;
    let mut theta_l = AlgebroidForm::zero(fib.r);
    for (tuple, coeff) in &vol.omega.coeffs {
        theta_l.add_term(tuple, l.clone() * coeff.clone());
    }
    for alpha in 0..fib.k {
        for a in 0..fib.r {
            if p[alpha][a].is_zero_const() {
                continue;
            }
            let term = wedge(&prol.theta(alpha), &vol.omega_a[a]);
            for (tuple, coeff) in &term.coeffs {
                theta_l.add_term(tuple, p[alpha][a].clone() * coeff.clone());
            }
        }
    }
    Ok(theta_l.simplified())
}

/// The multisymplectic form Omega_L = -d Theta_L.
pub fn multisymplectic_form(model: &ModelSpec) -> Result<AlgebroidForm, ModelError> {
    let prol = ProlongationSpec::from_fibration(&model.fib);
    let theta_l = cartan_form(model)?;
    let d = differential(&prol.basis, &theta_l)
        .map_err(|e| ModelError::Eval(e.to_string()))?;
    let mut out = AlgebroidForm::zero(d.degree);
    for (tuple, coeff) in &d.coeffs {
        out.add_term(tuple, -coeff.clone());
    }
    Ok(out.simplified())
}

/// Euler-Lagrange expressions in (x, u, y, yd), indexed by alpha.
pub fn el_symbolic(model: &ModelSpec) -> Result<Vec<ScalarExpr>, ModelError> {
    let l = model.require_l()?;
    let fib = &model.fib;
    let p = momenta(model)?;
    let z = z_functions(fib);
    let mut out = Vec::with_capacity(fib.k);
    for alpha in 0..fib.k {
        let mut acc = ScalarExpr::zero();
        for a in 0..fib.r {
            acc = acc + total_derivative(fib, &p[alpha][a], a);
            for b in 0..fib.r {
                acc = acc + p[alpha][a].clone() * fib.c_bas[b][a][b].clone();
            }
            for gamma in 0..fib.k {
                acc = acc - p[gamma][a].clone() * z.z_mix1[a][alpha][gamma].clone();
            }
        }
        for big_a in 0..fib.nu {
            acc = acc - l.diff(&names::u(big_a)) * fib.rho_ealpha[alpha][big_a].clone();
        }
        out.push(acc.simplify());
    }
    Ok(out)
}

/// Euler-Lagrange residual at a second-jet point.
pub fn el_residual(model: &ModelSpec, p2: &SecondJetPoint) -> Result<Vec<f64>, ModelError> {
    let exprs = el_symbolic(model)?;
    let env = second_jet_env(p2);
    exprs
        .iter()
        .map(|e| e.eval(&env).map_err(|err| ModelError::Eval(err.to_string())))
        .collect()
}

/// The fiber Hessian of L at a jet point, flattened over (alpha, a) as
/// alpha * r + a.
#[derive(Clone, Debug)]
pub struct HessianReport {
    pub matrix: DMatrix<f64>,
    pub det: f64,
    pub threshold: f64,
    pub regular: bool,
}

/// Hessian with a regularity verdict; the determinant cutoff is
/// threshold * max(1, max-norm)^n to stay scale-aware.
pub fn hessian(
    model: &ModelSpec,
    p: &JetPoint,
    threshold: Option<f64>,
) -> Result<HessianReport, ModelError> {
    let l = model.require_l()?;
    let fib = &model.fib;
    let n = fib.k * fib.r;
    let env = crate::jet::jet_env(p);
    let mut matrix = DMatrix::zeros(n, n);
    for alpha in 0..fib.k {
        for a in 0..fib.r {
            let first = l.diff(&names::y(alpha, a));
            for beta in 0..fib.k {
                for b in 0..fib.r {
                    let v = first
                        .diff(&names::y(beta, b))
                        .eval(&env)
                        .map_err(|e| ModelError::Eval(e.to_string()))?;
                    matrix[(alpha * fib.r + a, beta * fib.r + b)] = v;
                }
            }
        }
    }
    let det = matrix.clone().determinant();
    let threshold = threshold.unwrap_or(1e-12);
    let scale = matrix.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let regular = det.abs() > threshold * scale.powi(n as i32);
    Ok(HessianReport {
        matrix,
        det,
        threshold,
        regular,
    })
}

/// The energy density E_L = dL/dy^alpha_a y^alpha_a - L in (x, u, y).
pub fn energy_function(model: &ModelSpec) -> Result<ScalarExpr, ModelError> {
    let l = model.require_l()?;
    let p = momenta(model)?;
    let mut acc = -l.clone();
    for (alpha, row) in p.iter().enumerate() {
        for (a, e) in row.iter().enumerate() {
            acc = acc + e.clone() * ScalarExpr::var(names::y(alpha, a));
        }
    }
    Ok(acc.simplify())
}

/// rho^1(sigma^(1)) L for a vertical section: the first-order symmetry
/// defect of L, as an expression in (x, u, y).
pub fn invariance_defect(
    model: &ModelSpec,
    sigma: &SectionExpr,
) -> Result<ScalarExpr, ModelError> {
    let l = model.require_l()?;
    let fib = &model.fib;
    let prol = ProlongationSpec::from_fibration(fib);
    let lift = complete_lift(fib, sigma)?;
    Ok(anchor_derivative(&prol.basis, &lift, l))
}

/// Noether current i_{sigma^(1)} Theta_L, a degree r-1 form on the
/// prolongation.
pub fn noether_current(
    model: &ModelSpec,
    sigma: &SectionExpr,
) -> Result<AlgebroidForm, ModelError> {
    let fib = &model.fib;
    let lift = complete_lift(fib, sigma)?;
    let theta_l = cartan_form(model)?;
    contraction(&lift, &theta_l).map_err(|e| ModelError::Eval(e.to_string()))
}
