//! Built-in models: scalar fields with optional connections, rigid-body
//! mechanics on so(3), Poisson sigma models, and principal-frame algebroids.
//!
//! Every constructor validates the structure equations at tol 1e-10 over 50
//! seeded sample points before returning, and each preset carries a list of
//! named expected identities: differences between the derived equations and
//! independent hand transcriptions, which must vanish numerically.

use crate::algebroid::FibrationSpec;
use crate::expr::{Env, ScalarExpr};
use crate::hamiltonian::hamilton_symbolic;
use crate::jet::{admissibility_symbolic, morphism_symbolic};
use crate::lagrangian::{el_symbolic, ModelError, ModelSpec};
use crate::names;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// A named built-in model with regression metadata.
#[derive(Clone, Debug)]
pub struct Preset {
    pub name: String,
    pub doc: String,
    pub model: ModelSpec,
    /// Named identities (derived minus transcribed) that must vanish.
    pub expected: Vec<(String, ScalarExpr)>,
}

/// Errors from preset construction and lookup.
#[derive(Debug, Error)]
pub enum PresetError {
    #[error("inertia moments must be positive")]
    NonpositiveInertia,
    #[error("preset `{name}` failed structure validation (max residual {max:e})")]
    Validation { name: String, max: f64 },
    #[error("bad preset input: {0}")]
    BadInput(String),
    #[error("unknown preset `{0}`")]
    Unknown(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

const VALIDATE_POINTS: usize = 50;
const VALIDATE_SEED: u64 = 1405;
const VALIDATE_TOL: f64 = 1e-10;

fn validated(
    name: &str,
    doc: &str,
    model: ModelSpec,
    expected: Vec<(String, ScalarExpr)>,
) -> Result<Preset, PresetError> {
    let report = model.fib.validate_seeded(VALIDATE_POINTS, VALIDATE_SEED, VALIDATE_TOL);
    if !report.pass {
        return Err(PresetError::Validation {
            name: name.to_string(),
            max: report.max_residual(),
        });
    }
    Ok(Preset {
        name: name.to_string(),
        doc: doc.to_string(),
        model,
        expected,
    })
}

fn epsilon(a: usize, b: usize, c: usize) -> i64 {
    match (a, b, c) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1,
        (2, 1, 0) | (1, 0, 2) | (0, 2, 1) => -1,
        _ => 0,
    }
}

/// so(3) structure constants indexed `[beta][gamma][alpha]`.
pub fn so3_constants() -> Vec<Vec<Vec<f64>>> {
    (0..3)
        .map(|a| {
            (0..3)
                .map(|b| (0..3).map(|c| epsilon(a, b, c) as f64).collect())
                .collect()
        })
        .collect()
}

/// Tangent-bundle model over a fibred space: horizontal basis given by an
/// optional connection (`gamma[i][A]` = Gamma^A_i in x, u), vertical basis
/// the u-coordinate fields, kinetic Lagrangian minus the potential.
pub fn preset_standard(
    nx: usize,
    nu: usize,
    potential: ScalarExpr,
    connection: Option<Vec<Vec<ScalarExpr>>>,
) -> Result<Preset, PresetError> {
    let gamma = connection.unwrap_or_else(|| vec![vec![ScalarExpr::zero(); nu]; nx]);
    if gamma.len() != nx || gamma.iter().any(|row| row.len() != nu) {
        return Err(PresetError::BadInput(format!(
            "connection must be {nx} x {nu} expressions"
        )));
    }
    let mut fib = FibrationSpec::new_zero(nx, nu, nx, nu);
    for i in 0..nx {
        fib.rho_f[i][i] = ScalarExpr::one();
    }
    for big_a in 0..nu {
        fib.rho_ealpha[big_a][big_a] = ScalarExpr::one();
    }
    for i in 0..nx {
        for big_a in 0..nu {
            fib.rho_ea[i][big_a] = gamma[i][big_a].clone();
        }
    }
    // [e_i, e_B] = -dGamma^A_i/du^B e_A, forced by anchor compatibility.
    for i in 0..nx {
        for big_b in 0..nu {
            for big_a in 0..nu {
                fib.c_mix1[i][big_b][big_a] =
                    (-gamma[i][big_a].diff(&names::u(big_b))).simplify();
            }
        }
    }
    // Horizontal-lift derivative e_i = d/dx^i + Gamma^B_i d/du^B.
    let lift = |i: usize, f: &ScalarExpr| -> ScalarExpr {
        let mut acc = f.diff(&names::x(i));
        for big_b in 0..nu {
            acc = acc + gamma[i][big_b].clone() * f.diff(&names::u(big_b));
        }
        acc.simplify()
    };
    // [e_i, e_j] = (e_i Gamma^A_j - e_j Gamma^A_i) e_A = -R^A_{ij} e_A.
    for i in 0..nx {
        for j in 0..nx {
            for big_a in 0..nu {
                fib.c_mix0[i][j][big_a] =
                    (lift(i, &gamma[j][big_a]) - lift(j, &gamma[i][big_a])).simplify();
            }
        }
    }
    let mut kinetic = ScalarExpr::zero();
    let mut dual_kinetic = ScalarExpr::zero();
    for big_a in 0..nu {
        for i in 0..nx {
            let y = ScalarExpr::var(names::y(big_a, i));
            let m = ScalarExpr::var(names::mu(big_a, i));
            kinetic = kinetic + ScalarExpr::rat(1, 2) * y.clone() * y;
            dual_kinetic = dual_kinetic + ScalarExpr::rat(1, 2) * m.clone() * m;
        }
    }
    let model = ModelSpec {
        name: "standard".into(),
        fib,
        lagrangian: Some((kinetic - potential.clone()).simplify()),
        hamiltonian: Some((dual_kinetic + potential.clone()).simplify()),
    };
    // Expected identities against the classical connection displays.
    let el = el_symbolic(&model)?;
    let mor = morphism_symbolic(&model.fib);
    let mut expected = Vec::new();
    for big_a in 0..nu {
        // EL^A = sum_i yd^A_{ii} + dGamma^B_i/du^A y^B_i + dV/du^A.
        let mut disp = potential.diff(&names::u(big_a));
        for i in 0..nx {
            disp = disp + ScalarExpr::var(names::yd(big_a, i, i));
            for big_b in 0..nu {
                disp = disp
                    + gamma[i][big_b].diff(&names::u(big_a))
                        * ScalarExpr::var(names::y(big_b, i));
            }
        }
        expected.push((
            format!("el_connection_display_{}", big_a + 1),
            (el[big_a].clone() - disp).simplify(),
        ));
    }
    for big_a in 0..nu {
        for i in 0..nx {
            for j in 0..nx {
                if i == j {
                    continue;
                }
                // M^A_{ij} = yd^A_{ij} - yd^A_{ji} - Gamma^A_{jB} y^B_i
                //   + Gamma^A_{iB} y^B_j + R^A_{ij}.
                let mut disp = ScalarExpr::var(names::yd(big_a, i, j))
                    - ScalarExpr::var(names::yd(big_a, j, i));
                for big_b in 0..nu {
                    disp = disp
                        - gamma[j][big_a].diff(&names::u(big_b))
                            * ScalarExpr::var(names::y(big_b, i))
                        + gamma[i][big_a].diff(&names::u(big_b))
                            * ScalarExpr::var(names::y(big_b, j));
                }
                disp = disp + lift(j, &gamma[i][big_a]) - lift(i, &gamma[j][big_a]);
                expected.push((
                    format!("morphism_connection_display_{}_{}{}", big_a + 1, i + 1, j + 1),
                    (mor[big_a][i][j].clone() - disp).simplify(),
                ));
            }
        }
    }
    validated(
        "standard",
        "tangent-bundle field theory with kinetic Lagrangian and potential",
        model,
        expected,
    )
}

/// Rigid body: time base, so(3) vertical algebra over a point,
/// L = (I1 y1^2 + I2 y2^2 + I3 y3^2)/2 and the Legendre-dual H.
pub fn preset_so3(i1: f64, i2: f64, i3: f64) -> Result<Preset, PresetError> {
    if i1 <= 0.0 || i2 <= 0.0 || i3 <= 0.0 {
        return Err(PresetError::NonpositiveInertia);
    }
    let inertia = [i1, i2, i3];
    let mut fib = FibrationSpec::new_zero(1, 0, 1, 3);
    fib.rho_f[0][0] = ScalarExpr::one();
    for a in 0..3 {
        for b in 0..3 {
            for c in 0..3 {
                fib.c_vert[a][b][c] = ScalarExpr::int(epsilon(a, b, c));
            }
        }
    }
    let mut l = ScalarExpr::zero();
    let mut h = ScalarExpr::zero();
    for alpha in 0..3 {
        let y = ScalarExpr::var(names::y(alpha, 0));
        let m = ScalarExpr::var(names::mu(alpha, 0));
        l = l + ScalarExpr::float(inertia[alpha] / 2.0) * y.clone() * y;
        h = h + ScalarExpr::float(0.5 / inertia[alpha]) * m.clone() * m;
    }
    let model = ModelSpec {
        name: "so3".into(),
        fib,
        lagrangian: Some(l.simplify()),
        hamiltonian: Some(h.simplify()),
    };
    let el = el_symbolic(&model)?;
    let system = hamilton_symbolic(&model)?;
    let mut expected = Vec::new();
    for alpha in 0..3 {
        // Euler: I_alpha yd^alpha - sum I_gamma eps(beta, alpha, gamma) y^gamma y^beta.
        let mut disp = ScalarExpr::float(inertia[alpha]) * ScalarExpr::var(names::yd(alpha, 0, 0));
        for gamma in 0..3 {
            for beta in 0..3 {
                let e = epsilon(beta, alpha, gamma);
                if e == 0 {
                    continue;
                }
                disp = disp
                    - ScalarExpr::float(inertia[gamma] * e as f64)
                        * ScalarExpr::var(names::y(gamma, 0))
                        * ScalarExpr::var(names::y(beta, 0));
            }
        }
        expected.push((
            format!("el_euler_equation_{}", alpha + 1),
            (el[alpha].clone() - disp).simplify(),
        ));
        // Lie-Poisson: mud_alpha - mu_gamma eps(beta, alpha, gamma) mu_beta / I_beta.
        let mut disp = ScalarExpr::var(names::mud(alpha, 0, 0));
        for gamma in 0..3 {
            for beta in 0..3 {
                let e = epsilon(beta, alpha, gamma);
                if e == 0 {
                    continue;
                }
                disp = disp
                    - ScalarExpr::float(e as f64 / inertia[beta])
                        * ScalarExpr::var(names::mu(gamma, 0))
                        * ScalarExpr::var(names::mu(beta, 0));
            }
        }
        expected.push((
            format!("hamilton_lie_poisson_{}", alpha + 1),
            (system.momentum[alpha].clone() - disp).simplify(),
        ));
    }
    validated(
        "so3",
        "free rigid body as mechanics on the so(3) algebroid over time",
        model,
        expected,
    )
}

/// Poisson sigma model on a 2-dimensional source: `lambda[J][K]` are the
/// bivector components in u, antisymmetric and Poisson (validated).
pub fn preset_poisson_sigma(lambda: Vec<Vec<ScalarExpr>>) -> Result<Preset, PresetError> {
    let n = lambda.len();
    if n == 0 || lambda.iter().any(|row| row.len() != n) {
        return Err(PresetError::BadInput("Lambda must be square".into()));
    }
    // Antisymmetry check at seeded points.
    let mut rng = ChaCha8Rng::seed_from_u64(VALIDATE_SEED);
    for _ in 0..20 {
        let mut env = Env::new();
        for big_a in 0..n {
            env.set(names::u(big_a), rng.random_range(-1.0..1.0));
        }
        for j in 0..n {
            for kk in 0..n {
                let sum = lambda[j][kk]
                    .eval(&env)
                    .and_then(|a| lambda[kk][j].eval(&env).map(|b| a + b))
                    .map_err(|e| PresetError::BadInput(e.to_string()))?;
                if sum.abs() > 1e-12 {
                    return Err(PresetError::BadInput(
                        "Lambda must be antisymmetric".into(),
                    ));
                }
            }
        }
    }
    let mut fib = FibrationSpec::new_zero(2, n, 2, n);
    for i in 0..2 {
        fib.rho_f[i][i] = ScalarExpr::one();
    }
    for kk in 0..n {
        for j in 0..n {
            fib.rho_ealpha[kk][j] = lambda[kk][j].clone();
        }
    }
    for j in 0..n {
        for kk in 0..n {
            for ll in 0..n {
                fib.c_vert[j][kk][ll] = lambda[j][kk].diff(&names::u(ll)).simplify();
            }
        }
    }
    let mut l = ScalarExpr::zero();
    for j in 0..n {
        for kk in 0..n {
            l = l
                - ScalarExpr::rat(1, 2)
                    * lambda[j][kk].clone()
                    * ScalarExpr::var(names::y(j, 0))
                    * ScalarExpr::var(names::y(kk, 1));
        }
    }
    let model = ModelSpec {
        name: "poisson-sigma".into(),
        fib,
        lagrangian: Some(l.simplify()),
        hamiltonian: None,
    };
    let adm = admissibility_symbolic(&model.fib);
    let mor = morphism_symbolic(&model.fib);
    let el = el_symbolic(&model)?;
    let mut expected = Vec::new();
    for j in 0..n {
        for a in 0..2 {
            // Field equation (first display): du^J/dx^a + Lambda^{JK} y_{Ka}.
            let mut disp = ScalarExpr::var(names::ud(j, a));
            for kk in 0..n {
                disp = disp + lambda[j][kk].clone() * ScalarExpr::var(names::y(kk, a));
            }
            expected.push((
                format!("admissibility_display_{}_{}", j + 1, a + 1),
                (adm[j][a].clone() - disp).simplify(),
            ));
        }
        // Second display: d_1 A_{J2} - d_2 A_{J1} + dLambda^{KL}/du^J A_{K1} A_{L2};
        // the morphism block is its negative.
        let mut disp = ScalarExpr::var(names::yd(j, 1, 0)) - ScalarExpr::var(names::yd(j, 0, 1));
        for kk in 0..n {
            for ll in 0..n {
                disp = disp
                    + lambda[kk][ll].diff(&names::u(j))
                        * ScalarExpr::var(names::y(kk, 0))
                        * ScalarExpr::var(names::y(ll, 1));
            }
        }
        expected.push((
            format!("morphism_display_{}", j + 1),
            (mor[j][0][1].clone() + disp).simplify(),
        ));
    }
    // For constant Lambda the EL block is an explicit Lambda-contraction of
    // the morphism antisymmetrization.
    let constant = lambda
        .iter()
        .flatten()
        .all(|e| e.simplify().const_value().is_some());
    if constant {
        for j in 0..n {
            let mut disp = ScalarExpr::zero();
            for kk in 0..n {
                disp = disp
                    + ScalarExpr::rat(1, 2)
                        * lambda[j][kk].clone()
                        * (ScalarExpr::var(names::yd(kk, 0, 1))
                            - ScalarExpr::var(names::yd(kk, 1, 0)));
            }
            expected.push((
                format!("el_constant_lambda_{}", j + 1),
                (el[j].clone() - disp).simplify(),
            ));
        }
    }
    validated(
        "poisson-sigma",
        "topological sigma model whose field equations imply the variational ones",
        model,
        expected,
    )
}

/// Curvature consistent with `gamma` for `preset_atiyah`:
/// Omega^d_{ij} = d_i Gamma^d_j - d_j Gamma^d_i - C^d_{ma} Gamma^m_i Gamma^a_j.
pub fn atiyah_curvature(
    vertical: &[Vec<Vec<f64>>],
    gamma: &[Vec<ScalarExpr>],
) -> Vec<Vec<Vec<ScalarExpr>>> {
    let nx = gamma.len();
    let k = vertical.len();
    let mut omega = vec![vec![vec![ScalarExpr::zero(); k]; nx]; nx];
    for i in 0..nx {
        for j in 0..nx {
            for delta in 0..k {
                let mut acc = gamma[j][delta].diff(&names::x(i))
                    - gamma[i][delta].diff(&names::x(j));
                for m in 0..k {
                    for a in 0..k {
                        if vertical[m][a][delta] == 0.0 {
                            continue;
                        }
                        acc = acc
                            - ScalarExpr::float(vertical[m][a][delta])
                                * gamma[i][m].clone()
                                * gamma[j][a].clone();
                    }
                }
                omega[i][j][delta] = acc.simplify();
            }
        }
    }
    omega
}

/// Frame algebroid with constant vertical algebra (`vertical[b][g][a]` =
/// C^a_{bg}), local connection `gamma[i][alpha]` and curvature
/// `omega[i][j][alpha]` in x. Jacobi validation rejects inconsistent data.
pub fn preset_atiyah(
    vertical: Vec<Vec<Vec<f64>>>,
    gamma: Vec<Vec<ScalarExpr>>,
    omega: Vec<Vec<Vec<ScalarExpr>>>,
    lagrangian: ScalarExpr,
) -> Result<Preset, PresetError> {
    let nx = gamma.len();
    let k = vertical.len();
    if nx == 0
        || vertical.iter().any(|b| b.len() != k || b.iter().any(|r| r.len() != k))
        || gamma.iter().any(|row| row.len() != k)
        || omega.len() != nx
        || omega.iter().any(|b| b.len() != nx || b.iter().any(|r| r.len() != k))
    {
        return Err(PresetError::BadInput(
            "atiyah arrays must be k^3 constants, nx x k gamma, nx x nx x k omega".into(),
        ));
    }
    let mut fib = FibrationSpec::new_zero(nx, 0, nx, k);
    for i in 0..nx {
        fib.rho_f[i][i] = ScalarExpr::one();
    }
    for b in 0..k {
        for g in 0..k {
            for a in 0..k {
                fib.c_vert[b][g][a] = ScalarExpr::float(vertical[b][g][a]).simplify();
            }
        }
    }
    // [e_i, e_beta] = -Gamma^mu_i C^gamma_{mu beta} e_gamma.
    for i in 0..nx {
        for beta in 0..k {
            for g in 0..k {
                let mut acc = ScalarExpr::zero();
                for m in 0..k {
                    if vertical[m][beta][g] == 0.0 {
                        continue;
                    }
                    acc = acc
                        - ScalarExpr::float(vertical[m][beta][g]) * gamma[i][m].clone();
                }
                fib.c_mix1[i][beta][g] = acc.simplify();
            }
        }
    }
    // [e_i, e_j] = -Omega^gamma_{ij} e_gamma.
    for i in 0..nx {
        for j in 0..nx {
            for g in 0..k {
                fib.c_mix0[i][j][g] = (-omega[i][j][g].clone()).simplify();
            }
        }
    }
    let mut dual = ScalarExpr::zero();
    for alpha in 0..k {
        for a in 0..nx {
            let m = ScalarExpr::var(names::mu(alpha, a));
            dual = dual + ScalarExpr::rat(1, 2) * m.clone() * m;
        }
    }
    let model = ModelSpec {
        name: "atiyah".into(),
        fib,
        lagrangian: Some(lagrangian.simplify()),
        hamiltonian: Some(dual.simplify()),
    };
    let mor = morphism_symbolic(&model.fib);
    let mut expected = Vec::new();
    for g in 0..k {
        for i in 0..nx {
            for j in 0..nx {
                if i == j {
                    continue;
                }
                // M^g_{ij} = yd^g_{ij} - yd^g_{ji} - Gamma^m_j C^g_{m a} y^a_i
                //   + Gamma^m_i C^g_{m b} y^b_j - C^g_{ab} y^a_i y^b_j + Omega^g_{ij}.
                let mut disp = ScalarExpr::var(names::yd(g, i, j))
                    - ScalarExpr::var(names::yd(g, j, i))
                    + omega[i][j][g].clone();
                for m in 0..k {
                    for a in 0..k {
                        if vertical[m][a][g] != 0.0 {
                            let c = ScalarExpr::float(vertical[m][a][g]);
                            disp = disp
                                - c.clone()
                                    * gamma[j][m].clone()
                                    * ScalarExpr::var(names::y(a, i))
                                + c * gamma[i][m].clone() * ScalarExpr::var(names::y(a, j));
                        }
                    }
                }
                for a in 0..k {
                    for b in 0..k {
                        if vertical[a][b][g] == 0.0 {
                            continue;
                        }
                        disp = disp
                            - ScalarExpr::float(vertical[a][b][g])
                                * ScalarExpr::var(names::y(a, i))
                                * ScalarExpr::var(names::y(b, j));
                    }
                }
                expected.push((
                    format!("morphism_curvature_display_{}_{}{}", g + 1, i + 1, j + 1),
                    (mor[g][i][j].clone() - disp).simplify(),
                ));
            }
        }
    }
    validated(
        "atiyah",
        "invariant field theory on a frame algebroid with connection and curvature",
        model,
        expected,
    )
}

/// Names accepted by `preset_by_name`, in listing order.
pub const PRESET_NAMES: [&str; 11] = [
    "standard",
    "standard-connection",
    "time-dependent",
    "oscillator",
    "so3",
    "so3-symmetric",
    "poisson-sigma",
    "poisson-sigma-so3",
    "atiyah-flat",
    "atiyah-u1",
    "nonabelian-frame",
];

fn p(text: &str) -> ScalarExpr {
    crate::expr::parse(text).expect("builtin expression parses")
}

/// Looks up a registry preset by CLI name.
pub fn preset_by_name(name: &str) -> Result<Preset, PresetError> {
    let mut preset = match name {
        "standard" => preset_standard(2, 1, p("u1^2/2"), None)?,
        "standard-connection" => preset_standard(
            2,
            1,
            p("u1^2/2"),
            Some(vec![vec![p("u1*x2")], vec![p("x1")]]),
        )?,
        "time-dependent" => preset_standard(
            1,
            1,
            p("u1^2/2 - u1*sin(x1)"),
            Some(vec![vec![p("u1")]]),
        )?,
        "oscillator" => preset_standard(1, 1, p("u1^2/2"), None)?,
        "so3" => preset_so3(1.0, 2.0, 3.0)?,
        "so3-symmetric" => preset_so3(2.0, 2.0, 5.0)?,
        "poisson-sigma" => preset_poisson_sigma(vec![
            vec![ScalarExpr::zero(), ScalarExpr::one()],
            vec![ScalarExpr::int(-1), ScalarExpr::zero()],
        ])?,
        "poisson-sigma-so3" => preset_poisson_sigma(vec![
            vec![ScalarExpr::zero(), p("u3"), p("-u2")],
            vec![p("-u3"), ScalarExpr::zero(), p("u1")],
            vec![p("u2"), p("-u1"), ScalarExpr::zero()],
        ])?,
        "atiyah-flat" => {
            let gamma = vec![vec![ScalarExpr::zero(); 3]; 2];
            let omega = vec![vec![vec![ScalarExpr::zero(); 3]; 2]; 2];
            let l = p("(y1_1^2 + y1_2^2 + y2_1^2 + y2_2^2 + y3_1^2 + y3_2^2)/2");
            let mut preset = preset_atiyah(so3_constants(), gamma, omega, l)?;
            // Flat case: EL reduces to the Euler-Poincare system.
            let el = el_symbolic(&preset.model)?;
            let c = so3_constants();
            for alpha in 0..3 {
                let mut disp = ScalarExpr::zero();
                for a in 0..2 {
                    disp = disp + ScalarExpr::var(names::yd(alpha, a, a));
                    for g in 0..3 {
                        for b in 0..3 {
                            if c[b][alpha][g] == 0.0 {
                                continue;
                            }
                            disp = disp
                                - ScalarExpr::float(c[b][alpha][g])
                                    * ScalarExpr::var(names::y(g, a))
                                    * ScalarExpr::var(names::y(b, a));
                        }
                    }
                }
                preset.expected.push((
                    format!("el_euler_poincare_{}", alpha + 1),
                    (el[alpha].clone() - disp).simplify(),
                ));
            }
            preset
        }
        "atiyah-u1" => {
            let vertical = vec![vec![vec![0.0]]];
            let gamma = vec![vec![p("-x2/2")], vec![p("x1/2")]];
            let omega = atiyah_curvature(&vertical, &gamma);
            preset_atiyah(vertical, gamma, omega, p("(y1_1^2 + y1_2^2)/2"))?
        }
        "nonabelian-frame" => {
            let vertical = so3_constants();
            let gamma = vec![
                vec![p("x2"), ScalarExpr::zero(), ScalarExpr::zero()],
                vec![ScalarExpr::zero(), p("x1"), ScalarExpr::zero()],
            ];
            let omega = atiyah_curvature(&vertical, &gamma);
            let l = p("(y1_1^2 + y1_2^2 + y2_1^2 + y2_2^2 + y3_1^2 + y3_2^2)/2");
            preset_atiyah(vertical, gamma, omega, l)?
        }
        other => return Err(PresetError::Unknown(other.to_string())),
    };
    preset.name = name.to_string();
    preset.model.name = name.to_string();
    preset.doc = registry_doc(name).to_string();
    Ok(preset)
}

fn registry_doc(name: &str) -> &'static str {
    match name {
        "standard" => "scalar field on the plane, quadratic potential, coordinate basis",
        "standard-connection" => "scalar field on the plane in a connection-adapted basis",
        "time-dependent" => "driven mechanics with a velocity-shifted frame over time",
        "oscillator" => "harmonic oscillator as 1-dimensional field theory",
        "so3" => "free rigid body with inertia (1, 2, 3)",
        "so3-symmetric" => "symmetric rigid body with inertia (2, 2, 5)",
        "poisson-sigma" => "Poisson sigma model for the constant symplectic structure on R^2",
        "poisson-sigma-so3" => "Poisson sigma model for the linear Poisson structure on so(3)*",
        "atiyah-flat" => "frame algebroid with so(3) fibers and flat connection",
        "atiyah-u1" => "abelian frame algebroid with constant magnetic curvature",
        "nonabelian-frame" => "so(3) frame algebroid with a curved connection",
        _ => "",
    }
}

/// Max absolute value of all expected identities over seeded random points
/// binding the full variable inventory (x, u, y, yd, ud, mu, mud).
pub fn check_expected(preset: &Preset, points: usize, seed: u64) -> Result<f64, String> {
    let fib = &preset.model.fib;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max = 0.0f64;
    for _ in 0..points {
        let mut env = Env::new();
        let v = |rng: &mut ChaCha8Rng| rng.random_range(-1.0..1.0);
        for i in 0..fib.nx {
            let (lo, hi) = fib.sample_box[i];
            env.set(names::x(i), rng.random_range(lo..hi));
        }
        for big_a in 0..fib.nu {
            let (lo, hi) = fib.sample_box[fib.nx + big_a];
            env.set(names::u(big_a), rng.random_range(lo..hi));
        }
        for alpha in 0..fib.k {
            for a in 0..fib.r {
                env.set(names::y(alpha, a), v(&mut rng));
                env.set(names::mu(alpha, a), v(&mut rng));
                for b in 0..fib.r {
                    env.set(names::yd(alpha, a, b), v(&mut rng));
                }
                for i in 0..fib.nx {
                    env.set(names::mud(alpha, a, i), v(&mut rng));
                }
            }
        }
        for big_a in 0..fib.nu {
            for i in 0..fib.nx {
                env.set(names::ud(big_a, i), v(&mut rng));
            }
        }
        for (name, expr) in &preset.expected {
            let val = expr
                .eval(&env)
                .map_err(|e| format!("{name}: {e}"))?;
            max = max.max(val.abs());
        }
    }
    Ok(max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::{section_morphism_residual, SectionFieldExpr};

    #[test]
    fn registry_presets_validate_with_expected_identities() {
        for name in PRESET_NAMES {
            let preset = preset_by_name(name).unwrap();
            assert_eq!(preset.name, name);
            assert!(!preset.doc.is_empty());
            let max = check_expected(&preset, 20, 99).unwrap();
            assert!(max < 1e-9, "{name}: expected-identity residual {max:e}");
        }
        assert!(matches!(
            preset_by_name("nope"),
            Err(PresetError::Unknown(_))
        ));
    }

    #[test]
    fn time_dependent_el_matches_driven_equation() {
        let preset = preset_by_name("time-dependent").unwrap();
        let el = el_symbolic(&preset.model).unwrap();
        assert_eq!(el.len(), 1);
        let want = p("yd1_1_1 + y1_1 + u1 - sin(x1)");
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let mut env = Env::new();
            for name in ["x1", "u1", "y1_1", "yd1_1_1"] {
                env.set(name, rng.random_range(-1.0..1.0));
            }
            let got = el[0].eval(&env).unwrap();
            let expect = want.eval(&env).unwrap();
            assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
        }
    }

    #[test]
    fn flat_connection_sections_are_morphisms() {
        // Gamma depends on x only and has zero curvature, so the shifted
        // gradient section solves the morphism equations exactly.
        let preset = preset_standard(
            2,
            1,
            ScalarExpr::zero(),
            Some(vec![vec![p("x1")], vec![p("x2")]]),
        )
        .unwrap();
        let fib = &preset.model.fib;
        let phi = p("sin(x1)*x2");
        let sec = SectionFieldExpr {
            phi_u: vec![phi.clone()],
            phi_y: vec![
                vec![
                    (phi.diff("x1") - p("x1")).simplify(),
                    (phi.diff("x2") - p("x2")).simplify(),
                ],
            ],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let x = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let res = section_morphism_residual(fib, &sec, &x).unwrap();
            for block in &res {
                for row in block {
                    for v in row {
                        assert!(v.abs() < 1e-10, "{v}");
                    }
                }
            }
        }
    }

    #[test]
    fn poisson_sigma_rejects_bad_bivectors() {
        // Symmetric Lambda.
        assert!(matches!(
            preset_poisson_sigma(vec![
                vec![ScalarExpr::zero(), ScalarExpr::one()],
                vec![ScalarExpr::one(), ScalarExpr::zero()],
            ]),
            Err(PresetError::BadInput(_))
        ));
        // Antisymmetric but non-Poisson: Lambda^{23} = u3, Lambda^{31} = u1.
        let z = ScalarExpr::zero;
        let err = preset_poisson_sigma(vec![
            vec![z(), z(), p("-u1")],
            vec![z(), z(), p("u3")],
            vec![p("u1"), p("-u3"), z()],
        ])
        .unwrap_err();
        assert!(matches!(err, PresetError::Validation { .. }));
    }

    #[test]
    fn so3_rejects_nonpositive_inertia() {
        assert!(matches!(
            preset_so3(1.0, -2.0, 3.0),
            Err(PresetError::NonpositiveInertia)
        ));
        assert!(matches!(
            preset_so3(0.0, 2.0, 3.0),
            Err(PresetError::NonpositiveInertia)
        ));
    }

    #[test]
    fn atiyah_rejects_inconsistent_curvature() {
        let vertical = so3_constants();
        let gamma = vec![
            vec![p("x2"), ScalarExpr::zero(), ScalarExpr::zero()],
            vec![ScalarExpr::zero(), p("x1"), ScalarExpr::zero()],
        ];
        let wrong = vec![vec![vec![ScalarExpr::zero(); 3]; 2]; 2];
        let l = p("(y1_1^2 + y2_1^2 + y3_1^2)/2");
        let err = preset_atiyah(vertical.clone(), gamma.clone(), wrong, l.clone()).unwrap_err();
        assert!(matches!(err, PresetError::Validation { .. }));
        let omega = atiyah_curvature(&vertical, &gamma);
        assert!(preset_atiyah(vertical, gamma, omega, l).is_ok());
    }
}
