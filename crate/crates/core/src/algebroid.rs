//! Lie-algebroid fibration data and axiom validation.
//!
//! A fibration is presented in an adapted local basis {e_a, e_alpha} over
//! coordinates (x^i, u^A): the anchor components rho^i_a (basic, x-only),
//! rho^A_a, rho^A_alpha, and the structure functions C^c_{ab}, C^alpha_{ab},
//! C^alpha_{a beta}, C^alpha_{beta gamma}. The remaining families
//! C^a_{b gamma} and C^a_{beta gamma} vanish identically and are not stored.
//!
//! Index conventions used throughout the crate: three-index C arrays are
//! stored as `[lower1][lower2][upper]`, so `c_bas[a][b][c]` is C^c_{ab}.
//! Arrays are stored unsymmetrized; antisymmetry in the lower pair is a
//! validation residual, not a constructor invariant, so deliberately broken
//! data can be used in negative tests.
//!
//! Validation assembles the full (r+k)-fiber basis with its
//! (nx+nu)-column anchor matrix and checks the two structure equations
//! (anchor compatibility and the Jacobi cyclic sum) at sampled points, with
//! coordinate derivatives taken over all of (x, u).

use crate::expr::{Env, ScalarExpr};
use crate::exterior::AnchoredBasisSpec;
use crate::names;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Coordinate data of a Lie-algebroid fibration in an adapted basis.
#[derive(Clone, Debug)]
pub struct FibrationSpec {
    pub nx: usize,
    pub nu: usize,
    pub r: usize,
    pub k: usize,
    /// rho^i_a, indexed `[a][i]`; expressions in x only.
    pub rho_f: Vec<Vec<ScalarExpr>>,
    /// rho^A_a, indexed `[a][A]`.
    pub rho_ea: Vec<Vec<ScalarExpr>>,
    /// rho^A_alpha, indexed `[alpha][A]`.
    pub rho_ealpha: Vec<Vec<ScalarExpr>>,
    /// C^c_{ab}, indexed `[a][b][c]`.
    pub c_bas: Vec<Vec<Vec<ScalarExpr>>>,
    /// C^alpha_{ab}, indexed `[a][b][alpha]`.
    pub c_mix0: Vec<Vec<Vec<ScalarExpr>>>,
    /// C^alpha_{a beta}, indexed `[a][beta][alpha]`.
    pub c_mix1: Vec<Vec<Vec<ScalarExpr>>>,
    /// C^alpha_{beta gamma}, indexed `[beta][gamma][alpha]`.
    pub c_vert: Vec<Vec<Vec<ScalarExpr>>>,
    /// Per-coordinate sampling interval for validation, length nx+nu.
    pub sample_box: Vec<(f64, f64)>,
}

/// A point of the total space M.
#[derive(Clone, Debug, PartialEq)]
pub struct BasePoint {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
}

/// A section of E presented by coefficient expressions in (x, u).
#[derive(Clone, Debug)]
pub struct SectionExpr {
    /// Coefficients over {e_a}, length r.
    pub basic: Vec<ScalarExpr>,
    /// Coefficients over {e_alpha}, length k.
    pub vertical: Vec<ScalarExpr>,
}

impl SectionExpr {
    pub fn vertical_only(vertical: Vec<ScalarExpr>, r: usize) -> Self {
        SectionExpr {
            basic: vec![ScalarExpr::zero(); r],
            vertical,
        }
    }

    /// True when every basic coefficient is the zero constant.
    pub fn is_vertical(&self) -> bool {
        self.basic.iter().all(|e| e.simplify().is_zero_const())
    }

    /// Coefficients over the assembled total basis, basic first.
    pub fn total_coeffs(&self) -> Vec<ScalarExpr> {
        let mut out = self.basic.clone();
        out.extend(self.vertical.iter().cloned());
        out
    }
}

/// Outcome of checking the structure equations at sampled points.
#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub points: usize,
    pub tol: f64,
    pub antisymmetry_max: f64,
    pub anchor_max: f64,
    pub jacobi_max: f64,
    pub shape_errors: Vec<String>,
    pub eval_errors: Vec<String>,
    pub pass: bool,
}

impl ValidationReport {
    pub fn max_residual(&self) -> f64 {
        self.antisymmetry_max.max(self.anchor_max).max(self.jacobi_max)
    }
}

fn zeros2(n1: usize, n2: usize) -> Vec<Vec<ScalarExpr>> {
    vec![vec![ScalarExpr::zero(); n2]; n1]
}

fn zeros3(n1: usize, n2: usize, n3: usize) -> Vec<Vec<Vec<ScalarExpr>>> {
    vec![vec![vec![ScalarExpr::zero(); n3]; n2]; n1]
}

/// Structure-equation residual expressions over the assembled total basis.
struct CompiledStructure {
    /// Same-family antisymmetry residuals C^s_{pq} + C^s_{qp}.
    antisym: Vec<ScalarExpr>,
    /// Anchor-compatibility residuals, one per (p, q, coord).
    anchor: Vec<ScalarExpr>,
    /// Jacobi cyclic-sum residuals, flattened over (p, q, s, nu).
    jacobi: Vec<ScalarExpr>,
}

impl FibrationSpec {
    /// All structure functions zero, anchor zero, unit sample box.
    pub fn new_zero(nx: usize, nu: usize, r: usize, k: usize) -> Self {
        FibrationSpec {
            nx,
            nu,
            r,
            k,
            rho_f: zeros2(r, nx),
            rho_ea: zeros2(r, nu),
            rho_ealpha: zeros2(k, nu),
            c_bas: zeros3(r, r, r),
            c_mix0: zeros3(r, r, k),
            c_mix1: zeros3(r, k, k),
            c_vert: zeros3(k, k, k),
            sample_box: vec![(-1.0, 1.0); nx + nu],
        }
    }

    pub fn x_names(&self) -> Vec<String> {
        (0..self.nx).map(names::x).collect()
    }

    pub fn u_names(&self) -> Vec<String> {
        (0..self.nu).map(names::u).collect()
    }

    /// Coordinate names on M: x first, then u.
    pub fn coord_names(&self) -> Vec<String> {
        let mut out = self.x_names();
        out.extend(self.u_names());
        out
    }

    pub fn total_fiber(&self) -> usize {
        self.r + self.k
    }

    /// Environment binding (x, u) at a base point.
    pub fn base_env(&self, p: &BasePoint) -> Env {
        let mut env = Env::new();
        for (i, v) in p.x.iter().enumerate() {
            env.set(names::x(i), *v);
        }
        for (a, v) in p.u.iter().enumerate() {
            env.set(names::u(a), *v);
        }
        env
    }

    /// Shape diagnostics; empty means dimensionally consistent.
    pub fn shape_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let mut dim2 = |name: &str, arr: &Vec<Vec<ScalarExpr>>, n1: usize, n2: usize| {
            if arr.len() != n1 || arr.iter().any(|row| row.len() != n2) {
                errs.push(format!("{name} must be {n1}x{n2}"));
            }
        };
        dim2("rho_F", &self.rho_f, self.r, self.nx);
        dim2("rho_Ea", &self.rho_ea, self.r, self.nu);
        dim2("rho_Ealpha", &self.rho_ealpha, self.k, self.nu);
        let mut dim3 =
            |name: &str, arr: &Vec<Vec<Vec<ScalarExpr>>>, n1: usize, n2: usize, n3: usize| {
                if arr.len() != n1
                    || arr.iter().any(|m| m.len() != n2)
                    || arr.iter().flatten().any(|row| row.len() != n3)
                {
                    errs.push(format!("{name} must be {n1}x{n2}x{n3}"));
                }
            };
        dim3("C_bas", &self.c_bas, self.r, self.r, self.r);
        dim3("C_mix0", &self.c_mix0, self.r, self.r, self.k);
        dim3("C_mix1", &self.c_mix1, self.r, self.k, self.k);
        dim3("C_vert", &self.c_vert, self.k, self.k, self.k);
        if self.sample_box.len() != self.nx + self.nu {
            errs.push(format!(
                "sample_box must have {} entries",
                self.nx + self.nu
            ));
        }
        let xnames: std::collections::BTreeSet<String> = self.x_names().into_iter().collect();
        for (a, row) in self.rho_f.iter().enumerate() {
            for (i, e) in row.iter().enumerate() {
                if !e.free_vars().iter().all(|v| xnames.contains(v)) {
                    errs.push(format!("rho_F[{a}][{i}] must depend on x only"));
                }
            }
        }
        errs
    }

    /// The fibration as a single anchored basis: fiber {e_a} then {e_alpha},
    /// coordinates (x, u), with the structural zeros C^a_{b gamma} and
    /// C^a_{beta gamma} filled in.
    pub fn total_basis(&self) -> AnchoredBasisSpec {
        let (r, k, nx, nu) = (self.r, self.k, self.nx, self.nu);
        let nf = r + k;
        let mut anchor = zeros2(nf, nx + nu);
        for a in 0..r {
            for i in 0..nx {
                anchor[a][i] = self.rho_f[a][i].clone();
            }
            for aa in 0..nu {
                anchor[a][nx + aa] = self.rho_ea[a][aa].clone();
            }
        }
        for alpha in 0..k {
            for aa in 0..nu {
                anchor[r + alpha][nx + aa] = self.rho_ealpha[alpha][aa].clone();
            }
        }
        let mut c = zeros3(nf, nf, nf);
        for a in 0..r {
            for b in 0..r {
                for cc in 0..r {
                    c[a][b][cc] = self.c_bas[a][b][cc].clone();
                }
                for gamma in 0..k {
                    c[a][b][r + gamma] = self.c_mix0[a][b][gamma].clone();
                }
            }
            for beta in 0..k {
                for gamma in 0..k {
                    // The (beta, a) slot mirrors the stored (a, beta) family.
                    c[a][r + beta][r + gamma] = self.c_mix1[a][beta][gamma].clone();
                    c[r + beta][a][r + gamma] =
                        (-self.c_mix1[a][beta][gamma].clone()).simplify();
                }
            }
        }
        for beta in 0..k {
            for gamma in 0..k {
                for alpha in 0..k {
                    c[r + beta][r + gamma][r + alpha] = self.c_vert[beta][gamma][alpha].clone();
                }
            }
        }
        AnchoredBasisSpec {
            coord_names: self.coord_names(),
            anchor,
            c,
        }
    }

    fn compile_structure(&self) -> CompiledStructure {
        let basis = self.total_basis();
        let nf = basis.rank();
        let coords = &basis.coord_names;
        let mut antisym = Vec::new();
        let mut same_family = |arr: &Vec<Vec<Vec<ScalarExpr>>>| {
            let n = arr.len();
            for p in 0..n {
                for q in p..n {
                    for s in 0..arr[p][q].len() {
                        let e = (arr[p][q][s].clone() + arr[q][p][s].clone()).simplify();
                        if !e.is_zero_const() {
                            antisym.push(e);
                        }
                    }
                }
            }
        };
        same_family(&self.c_bas);
        same_family(&self.c_mix0);
        same_family(&self.c_vert);

        // rho^j_p d_j rho^m_q - rho^j_q d_j rho^m_p - rho^m_s C^s_{pq}
        let mut anchor = Vec::new();
        for p in 0..nf {
            for q in (p + 1)..nf {
                for m in 0..coords.len() {
                    let mut res = ScalarExpr::zero();
                    for (j, cj) in coords.iter().enumerate() {
                        res = res
                            + basis.anchor[p][j].clone() * basis.anchor[q][m].diff(cj)
                            - basis.anchor[q][j].clone() * basis.anchor[p][m].diff(cj);
                    }
                    for s in 0..nf {
                        res = res - basis.anchor[s][m].clone() * basis.c[p][q][s].clone();
                    }
                    let res = res.simplify();
                    if !res.is_zero_const() {
                        anchor.push(res);
                    }
                }
            }
        }

        // Cyclic sum over all raw (p, q, s) tuples so that stored-slot
        // perturbations are visible even at repeated indices.
        let mut jacobi = Vec::new();
        for p in 0..nf {
            for q in 0..nf {
                for s in 0..nf {
                    for nu_idx in 0..nf {
                        let mut res = ScalarExpr::zero();
                        for &(c1, c2, c3) in &[(p, q, s), (q, s, p), (s, p, q)] {
                            for (j, cj) in coords.iter().enumerate() {
                                res = res
                                    + basis.anchor[c1][j].clone()
                                        * basis.c[c2][c3][nu_idx].diff(cj);
                            }
                            for mu in 0..nf {
                                res = res
                                    + basis.c[c1][mu][nu_idx].clone()
                                        * basis.c[c2][c3][mu].clone();
                            }
                        }
                        let res = res.simplify();
                        if !res.is_zero_const() {
                            jacobi.push(res);
                        }
                    }
                }
            }
        }
        CompiledStructure {
            antisym,
            anchor,
            jacobi,
        }
    }

    /// Anchor-compatibility and Jacobi residuals at a point, over the
    /// assembled total basis. anchor[p][q][m] and jacobi[p][q][s][nu].
    #[allow(clippy::type_complexity)]
    pub fn structure_residuals(
        &self,
        p: &BasePoint,
    ) -> Result<(Vec<Vec<Vec<f64>>>, Vec<Vec<Vec<Vec<f64>>>>), String> {
        let basis = self.total_basis();
        let nf = basis.rank();
        let coords = &basis.coord_names;
        let env = self.base_env(p);
        let ev = |e: &ScalarExpr| -> Result<f64, String> {
            e.eval(&env).map_err(|err| err.to_string())
        };
        let mut anchor_res = vec![vec![vec![0.0; coords.len()]; nf]; nf];
        for pp in 0..nf {
            for q in 0..nf {
                for m in 0..coords.len() {
                    let mut acc = 0.0;
                    for (j, cj) in coords.iter().enumerate() {
                        acc += ev(&basis.anchor[pp][j])? * ev(&basis.anchor[q][m].diff(cj))?
                            - ev(&basis.anchor[q][j])? * ev(&basis.anchor[pp][m].diff(cj))?;
                    }
                    for s in 0..nf {
                        acc -= ev(&basis.anchor[s][m])? * ev(&basis.c[pp][q][s])?;
                    }
                    anchor_res[pp][q][m] = acc;
                }
            }
        }
        let mut jacobi_res = vec![vec![vec![vec![0.0; nf]; nf]; nf]; nf];
        for pp in 0..nf {
            for q in 0..nf {
                for s in 0..nf {
                    for nu_idx in 0..nf {
                        let mut acc = 0.0;
                        for &(c1, c2, c3) in &[(pp, q, s), (q, s, pp), (s, pp, q)] {
                            for (j, cj) in coords.iter().enumerate() {
                                acc += ev(&basis.anchor[c1][j])?
                                    * ev(&basis.c[c2][c3][nu_idx].diff(cj))?;
                            }
                            for mu in 0..nf {
                                acc +=
                                    ev(&basis.c[c1][mu][nu_idx])? * ev(&basis.c[c2][c3][mu])?;
                            }
                        }
                        jacobi_res[pp][q][s][nu_idx] = acc;
                    }
                }
            }
        }
        Ok((anchor_res, jacobi_res))
    }

    /// Checks antisymmetry and both structure equations at the given points.
    pub fn validate(&self, sample: &[BasePoint], tol: f64) -> ValidationReport {
        let shape_errors = self.shape_errors();
        let mut report = ValidationReport {
            points: sample.len(),
            tol,
            antisymmetry_max: 0.0,
            anchor_max: 0.0,
            jacobi_max: 0.0,
            shape_errors,
            eval_errors: Vec::new(),
            pass: false,
        };
        if !report.shape_errors.is_empty() {
            return report;
        }
        let compiled = self.compile_structure();
        for p in sample {
            let env = self.base_env(p);
            let mut track = |exprs: &[ScalarExpr], slot: &mut f64, what: &str| {
                for e in exprs {
                    match e.eval(&env) {
                        Ok(v) => *slot = slot.max(v.abs()),
                        Err(err) => {
                            if report.eval_errors.len() < 8 {
                                report.eval_errors.push(format!("{what}: {err}"));
                            }
                            *slot = f64::INFINITY;
                        }
                    }
                }
            };
            let mut a = report.antisymmetry_max;
            track(&compiled.antisym, &mut a, "antisymmetry");
            report.antisymmetry_max = a;
            let mut b = report.anchor_max;
            track(&compiled.anchor, &mut b, "anchor equation");
            report.anchor_max = b;
            let mut c = report.jacobi_max;
            track(&compiled.jacobi, &mut c, "Jacobi equation");
            report.jacobi_max = c;
        }
        report.pass = !sample.is_empty()
            && report.eval_errors.is_empty()
            && report.max_residual() < tol;
        report
    }

    /// Uniform sample points in the declared box.
    pub fn sample_points(&self, n: usize, seed: u64) -> Vec<BasePoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let draw = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
                    if lo == hi {
                        lo
                    } else {
                        rng.random_range(lo..hi)
                    }
                };
                let x = (0..self.nx)
                    .map(|i| draw(&mut rng, self.sample_box[i]))
                    .collect();
                let u = (0..self.nu)
                    .map(|a| draw(&mut rng, self.sample_box[self.nx + a]))
                    .collect();
                BasePoint { x, u }
            })
            .collect()
    }

    /// Validates on n seeded random points from the sample box.
    pub fn validate_seeded(&self, n: usize, seed: u64, tol: f64) -> ValidationReport {
        self.validate(&self.sample_points(n, seed), tol)
    }

    /// Coordinate bracket of two sections over the assembled total basis.
    pub fn bracket(&self, sigma: &SectionExpr, eta: &SectionExpr) -> SectionExpr {
        let basis = self.total_basis();
        let out = crate::exterior::bracket_sections(
            &basis,
            &sigma.total_coeffs(),
            &eta.total_coeffs(),
        );
        SectionExpr {
            basic: out[..self.r].to_vec(),
            vertical: out[self.r..].to_vec(),
        }
    }

    /// Tangent components (d/dx parts, d/du parts) of the anchor applied to
    /// fiber coefficients at a point.
    pub fn anchor_apply(
        &self,
        coeffs: &[f64],
        p: &BasePoint,
    ) -> Result<(Vec<f64>, Vec<f64>), String> {
        if coeffs.len() != self.total_fiber() {
            return Err(format!(
                "expected {} fiber coefficients, got {}",
                self.total_fiber(),
                coeffs.len()
            ));
        }
        let env = self.base_env(p);
        let ev = |e: &ScalarExpr| e.eval(&env).map_err(|err| err.to_string());
        let mut dx = vec![0.0; self.nx];
        let mut du = vec![0.0; self.nu];
        for a in 0..self.r {
            for i in 0..self.nx {
                dx[i] += ev(&self.rho_f[a][i])? * coeffs[a];
            }
            for aa in 0..self.nu {
                du[aa] += ev(&self.rho_ea[a][aa])? * coeffs[a];
            }
        }
        for alpha in 0..self.k {
            for aa in 0..self.nu {
                du[aa] += ev(&self.rho_ealpha[alpha][aa])? * coeffs[self.r + alpha];
            }
        }
        Ok((dx, du))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    /// so(3) over a point adjoined to a time line: nx=1, r=1, k=3.
    fn so3_spec() -> FibrationSpec {
        let mut spec = FibrationSpec::new_zero(1, 0, 1, 3);
        spec.rho_f[0][0] = ScalarExpr::one();
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    spec.c_vert[a][b][c] = ScalarExpr::int(epsilon(a, b, c));
                }
            }
        }
        spec
    }

    fn epsilon(a: usize, b: usize, c: usize) -> i64 {
        match (a, b, c) {
            (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1,
            (2, 1, 0) | (1, 0, 2) | (0, 2, 1) => -1,
            _ => 0,
        }
    }

    /// E = TM over M = R^2 x R, coordinate bases, all C zero.
    fn standard_spec() -> FibrationSpec {
        let mut spec = FibrationSpec::new_zero(2, 1, 2, 1);
        for i in 0..2 {
            spec.rho_f[i][i] = ScalarExpr::one();
        }
        spec.rho_ealpha[0][0] = ScalarExpr::one();
        spec
    }

    #[test]
    fn so3_validates_exactly() {
        let spec = so3_spec();
        let report = spec.validate_seeded(20, 7, 1e-12);
        assert!(report.pass, "{report:?}");
        assert_eq!(report.max_residual(), 0.0);
    }

    #[test]
    fn standard_validates_exactly() {
        let report = standard_spec().validate_seeded(20, 7, 1e-12);
        assert!(report.pass, "{report:?}");
        assert_eq!(report.max_residual(), 0.0);
    }

    #[test]
    fn perturbed_so3_fails_with_nonzero_jacobi() {
        let mut spec = so3_spec();
        spec.c_vert[0][1][2] = parse("1.001").unwrap();
        let report = spec.validate_seeded(20, 7, 1e-10);
        assert!(!report.pass);
        assert!(report.jacobi_max > 1e-4, "jacobi {}", report.jacobi_max);
        // The perturbation also breaks stored antisymmetry.
        assert!((report.antisymmetry_max - 0.001).abs() < 1e-15);
        // Residual at the repeated-index tuple (1,1,2) with output index 2:
        // C^nu_{1 mu}(C^mu_{12} + C^mu_{21}) = 0.001 * C^2_{13} = -0.001.
        let p = BasePoint {
            x: vec![0.3],
            u: vec![],
        };
        let (_, jac) = spec.structure_residuals(&p).unwrap();
        assert!((jac[1][1][2][2] - (-0.001)).abs() < 1e-15);
    }

    #[test]
    fn nonconstant_anchor_equation_holds_for_frame_change() {
        // e_1 = d/dx1, e_2 = exp(x1) d/dx2 gives [e_1, e_2] = e_2.
        let mut spec = FibrationSpec::new_zero(2, 0, 2, 0);
        spec.rho_f[0][0] = ScalarExpr::one();
        spec.rho_f[1][1] = parse("exp(x1)").unwrap();
        spec.c_bas[0][1][1] = ScalarExpr::one();
        spec.c_bas[1][0][1] = parse("-1").unwrap();
        let report = spec.validate_seeded(20, 3, 1e-10);
        assert!(report.pass, "{report:?}");
        // Dropping the bracket coefficient must break the anchor equation.
        spec.c_bas[0][1][1] = ScalarExpr::zero();
        spec.c_bas[1][0][1] = ScalarExpr::zero();
        let report = spec.validate_seeded(20, 3, 1e-10);
        assert!(!report.pass);
        assert!(report.anchor_max > 0.1);
    }

    #[test]
    fn bracket_so3_reproduces_epsilon() {
        let spec = so3_spec();
        let e1 = SectionExpr::vertical_only(
            vec![ScalarExpr::one(), ScalarExpr::zero(), ScalarExpr::zero()],
            1,
        );
        let e2 = SectionExpr::vertical_only(
            vec![ScalarExpr::zero(), ScalarExpr::one(), ScalarExpr::zero()],
            1,
        );
        let out = spec.bracket(&e1, &e2);
        assert!(out.basic[0].is_zero_const());
        assert!(out.vertical[0].is_zero_const());
        assert!(out.vertical[1].is_zero_const());
        assert_eq!(out.vertical[2].simplify(), ScalarExpr::one());
    }

    #[test]
    fn bracket_antisymmetry_and_leibniz() {
        let spec = standard_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let vars = ["x1".to_string(), "x2".to_string(), "u1".to_string()];
        for _ in 0..20 {
            let re = |rng: &mut ChaCha8Rng| crate::expr::sample::random_expr(rng, &vars, 2);
            let sigma = SectionExpr {
                basic: vec![re(&mut rng), re(&mut rng)],
                vertical: vec![re(&mut rng)],
            };
            let eta = SectionExpr {
                basic: vec![re(&mut rng), re(&mut rng)],
                vertical: vec![re(&mut rng)],
            };
            let f = re(&mut rng);
            let p = spec.sample_points(1, rng.random_range(0..1_000_000))[0].clone();
            let env = spec.base_env(&p);
            let self_bracket = spec.bracket(&sigma, &sigma);
            for c in self_bracket.total_coeffs() {
                if let Ok(v) = c.eval(&env) {
                    assert!(v.abs() < 1e-12, "self bracket {v}");
                }
            }
            // [sigma, f eta] = f [sigma, eta] + (rho(sigma) f) eta
            let f_eta = SectionExpr {
                basic: eta
                    .basic
                    .iter()
                    .map(|e| f.clone() * e.clone())
                    .collect(),
                vertical: eta
                    .vertical
                    .iter()
                    .map(|e| f.clone() * e.clone())
                    .collect(),
            };
            let lhs = spec.bracket(&sigma, &f_eta);
            let base = spec.bracket(&sigma, &eta);
            let basis = spec.total_basis();
            let rho_sigma_f = {
                let mut acc = ScalarExpr::zero();
                let coeffs = sigma.total_coeffs();
                for (p_idx, coeff) in coeffs.iter().enumerate() {
                    for (j, cj) in basis.coord_names.iter().enumerate() {
                        acc = acc + coeff.clone() * basis.anchor[p_idx][j].clone() * f.diff(cj);
                    }
                }
                acc
            };
            let lhs_c = lhs.total_coeffs();
            let base_c = base.total_coeffs();
            let eta_c = eta.total_coeffs();
            for idx in 0..lhs_c.len() {
                let rhs = f.clone() * base_c[idx].clone()
                    + rho_sigma_f.clone() * eta_c[idx].clone();
                match (lhs_c[idx].eval(&env), rhs.eval(&env)) {
                    (Ok(a), Ok(b)) => {
                        assert!(
                            (a - b).abs() < 1e-10 * (1.0 + b.abs()),
                            "Leibniz slot {idx}: {a} vs {b}"
                        );
                    }
                    _ => continue,
                }
            }
        }
    }

    #[test]
    fn anchor_apply_matches_total_basis_rows() {
        let spec = standard_spec();
        let basis = spec.total_basis();
        let p = BasePoint {
            x: vec![0.4, -0.2],
            u: vec![0.9],
        };
        let env = spec.base_env(&p);
        for idx in 0..spec.total_fiber() {
            let mut coeffs = vec![0.0; spec.total_fiber()];
            coeffs[idx] = 1.0;
            let (dx, du) = spec.anchor_apply(&coeffs, &p).unwrap();
            for (m, v) in dx.iter().chain(du.iter()).enumerate() {
                let row = basis.anchor[idx][m].eval(&env).unwrap();
                assert_eq!(*v, row);
            }
        }
    }

    #[test]
    fn dimension_mismatch_reported() {
        let mut spec = standard_spec();
        spec.rho_f[0].pop();
        let errs = spec.shape_errors();
        assert!(errs.iter().any(|e| e.contains("rho_F")));
        let report = spec.validate_seeded(5, 1, 1e-10);
        assert!(!report.pass);
    }

    #[test]
    fn basic_anchor_must_be_x_only() {
        let mut spec = standard_spec();
        spec.rho_f[0][0] = parse("u1").unwrap();
        assert!(spec
            .shape_errors()
            .iter()
            .any(|e| e.contains("x only")));
    }
}
