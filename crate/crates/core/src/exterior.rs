//! Exterior calculus over an anchored basis with structure functions.
//!
//! Forms are stored sparsely as maps from strictly increasing index tuples to
//! coefficient expressions. The differential follows the two generator rules
//! df = rho^i_alpha (df/dx^i) e^alpha and
//! de^gamma = -1/2 C^gamma_{alpha beta} e^alpha wedge e^beta,
//! extended by the graded Leibniz rule; the raw C array is antisymmetrized by
//! the double sum, so unsymmetrized storage is handled uniformly.
//!
//! d compose d vanishes exactly when the structure equations hold, so dd-tests
//! are a behavioural probe of validation, not an identity of this module.

use crate::expr::{Env, EvalError, ScalarExpr};
use std::collections::BTreeMap;
use thiserror::Error;

/// A basis family with anchor components and structure functions.
///
/// `anchor[p][m]` is the coefficient of d/d(coord m) in the anchor image of
/// fiber element p; `c[p][q][s]` is C^s_{pq}, possibly unsymmetrized.
#[derive(Clone, Debug)]
pub struct AnchoredBasisSpec {
    pub coord_names: Vec<String>,
    pub anchor: Vec<Vec<ScalarExpr>>,
    pub c: Vec<Vec<Vec<ScalarExpr>>>,
}

impl AnchoredBasisSpec {
    pub fn rank(&self) -> usize {
        self.anchor.len()
    }
}

/// Errors from degree-sensitive operations.
#[derive(Debug, Error, PartialEq)]
pub enum ExteriorError {
    #[error("degree {degree} form has no differential on a rank {rank} basis")]
    DegreeOverflow { degree: usize, rank: usize },
    #[error("cannot contract a degree 0 form")]
    ContractScalar,
    #[error("operation expects {expected} arguments, got {got}")]
    ArgumentCount { expected: usize, got: usize },
}

/// A differential form with sparse coefficients over increasing tuples.
#[derive(Clone, Debug, PartialEq)]
pub struct AlgebroidForm {
    pub degree: usize,
    pub coeffs: BTreeMap<Vec<usize>, ScalarExpr>,
}

impl AlgebroidForm {
    pub fn zero(degree: usize) -> Self {
        AlgebroidForm {
            degree,
            coeffs: BTreeMap::new(),
        }
    }

    /// Degree 0 form holding one scalar coefficient.
    pub fn scalar(f: ScalarExpr) -> Self {
        let mut form = AlgebroidForm::zero(0);
        form.add_term(&[], f);
        form
    }

    /// The basis covector e^idx.
    pub fn basis_covector(idx: usize) -> Self {
        let mut form = AlgebroidForm::zero(1);
        form.add_term(&[idx], ScalarExpr::one());
        form
    }

    /// Adds coeff * e^{indices} (any order), normalizing to an increasing
    /// tuple with the permutation sign; terms with repeated indices vanish.
    pub fn add_term(&mut self, indices: &[usize], coeff: ScalarExpr) {
        debug_assert_eq!(indices.len(), self.degree);
        if coeff.is_zero_const() {
            return;
        }
        let mut sorted: Vec<usize> = indices.to_vec();
        let mut sign = 1i64;
        // Insertion sort with inversion counting keeps tuples tiny and exact.
        for i in 1..sorted.len() {
            let mut j = i;
            while j > 0 && sorted[j - 1] > sorted[j] {
                sorted.swap(j - 1, j);
                sign = -sign;
                j -= 1;
            }
        }
        for w in sorted.windows(2) {
            if w[0] == w[1] {
                return;
            }
        }
        let signed = if sign >= 0 { coeff } else { -coeff };
        let entry = self
            .coeffs
            .entry(sorted)
            .or_insert_with(ScalarExpr::zero);
        *entry = entry.clone() + signed;
    }

    /// Simplifies all coefficients and drops exact zeros.
    pub fn simplified(&self) -> Self {
        let mut out = AlgebroidForm::zero(self.degree);
        for (tuple, coeff) in &self.coeffs {
            let s = coeff.simplify();
            if !s.is_zero_const() {
                out.coeffs.insert(tuple.clone(), s);
            }
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.simplified().coeffs.is_empty()
    }

    /// Coefficient at an increasing tuple, zero when absent.
    pub fn coeff(&self, tuple: &[usize]) -> ScalarExpr {
        self.coeffs
            .get(tuple)
            .cloned()
            .unwrap_or_else(ScalarExpr::zero)
    }

    /// Largest coefficient magnitude at an environment.
    pub fn max_abs(&self, env: &Env) -> Result<f64, EvalError> {
        let mut m: f64 = 0.0;
        for coeff in self.coeffs.values() {
            m = m.max(coeff.eval(env)?.abs());
        }
        Ok(m)
    }

    /// Value on fiber coefficient vectors, as an expression.
    pub fn apply_symbolic(&self, args: &[Vec<ScalarExpr>]) -> Result<ScalarExpr, ExteriorError> {
        if args.len() != self.degree {
            return Err(ExteriorError::ArgumentCount {
                expected: self.degree,
                got: args.len(),
            });
        }
        let mut acc = ScalarExpr::zero();
        for (tuple, coeff) in &self.coeffs {
            let mat: Vec<Vec<ScalarExpr>> = (0..self.degree)
                .map(|row| {
                    (0..self.degree)
                        .map(|col| args[col][tuple[row]].clone())
                        .collect()
                })
                .collect();
            acc = acc + coeff.clone() * det_symbolic(&mat);
        }
        Ok(acc.simplify())
    }

    /// Value on numeric fiber vectors at an environment.
    pub fn apply(&self, args: &[Vec<f64>], env: &Env) -> Result<f64, String> {
        if args.len() != self.degree {
            return Err(format!(
                "expected {} arguments, got {}",
                self.degree,
                args.len()
            ));
        }
        let mut acc = 0.0;
        for (tuple, coeff) in &self.coeffs {
            let c = coeff.eval(env).map_err(|e| e.to_string())?;
            if c == 0.0 {
                continue;
            }
            let mat: Vec<Vec<f64>> = (0..self.degree)
                .map(|row| (0..self.degree).map(|col| args[col][tuple[row]]).collect())
                .collect();
            acc += c * det_numeric(&mat);
        }
        Ok(acc)
    }
}

/// Laplace expansion; degrees stay small so this is exact and cheap.
fn det_symbolic(m: &[Vec<ScalarExpr>]) -> ScalarExpr {
    let n = m.len();
    if n == 0 {
        return ScalarExpr::one();
    }
    if n == 1 {
        return m[0][0].clone();
    }
    let mut acc = ScalarExpr::zero();
    for col in 0..n {
        let minor: Vec<Vec<ScalarExpr>> = (1..n)
            .map(|row| {
                (0..n)
                    .filter(|c| *c != col)
                    .map(|c| m[row][c].clone())
                    .collect()
            })
            .collect();
        let term = m[0][col].clone() * det_symbolic(&minor);
        acc = if col % 2 == 0 { acc + term } else { acc - term };
    }
    acc
}

fn det_numeric(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    match n {
        0 => 1.0,
        1 => m[0][0],
        2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
        _ => {
            let mut acc = 0.0;
            for col in 0..n {
                let minor: Vec<Vec<f64>> = (1..n)
                    .map(|row| {
                        (0..n)
                            .filter(|c| *c != col)
                            .map(|c| m[row][c])
                            .collect()
                    })
                    .collect();
                let term = m[0][col] * det_numeric(&minor);
                acc += if col % 2 == 0 { term } else { -term };
            }
            acc
        }
    }
}

/// Exterior differential over the basis rules.
pub fn differential(
    spec: &AnchoredBasisSpec,
    form: &AlgebroidForm,
) -> Result<AlgebroidForm, ExteriorError> {
    let rank = spec.rank();
    if form.degree >= rank {
        return Err(ExteriorError::DegreeOverflow {
            degree: form.degree,
            rank,
        });
    }
    let mut out = AlgebroidForm::zero(form.degree + 1);
    let half = ScalarExpr::rat(-1, 2);
    for (tuple, f) in &form.coeffs {
        // df wedge e^tuple
        for p in 0..rank {
            let mut dfp = ScalarExpr::zero();
            for (m, name) in spec.coord_names.iter().enumerate() {
                dfp = dfp + spec.anchor[p][m].clone() * f.diff(name);
            }
            let dfp = dfp.simplify();
            if dfp.is_zero_const() {
                continue;
            }
            let mut indices = vec![p];
            indices.extend_from_slice(tuple);
            out.add_term(&indices, dfp);
        }
        // f * sum_pos (-1)^pos e^{<pos} wedge de^{tuple[pos]} wedge e^{>pos}
        for (pos, &gamma) in tuple.iter().enumerate() {
            for alpha in 0..rank {
                for beta in 0..rank {
                    let c = &spec.c[alpha][beta][gamma];
                    if c.is_zero_const() {
                        continue;
                    }
                    let mut coeff = half.clone() * f.clone() * c.clone();
                    if pos % 2 == 1 {
                        coeff = -coeff;
                    }
                    let mut indices: Vec<usize> = tuple[..pos].to_vec();
                    indices.push(alpha);
                    indices.push(beta);
                    indices.extend_from_slice(&tuple[pos + 1..]);
                    out.add_term(&indices, coeff);
                }
            }
        }
    }
    Ok(out.simplified())
}

/// Wedge product; inversion signs are handled by tuple normalization.
pub fn wedge(a: &AlgebroidForm, b: &AlgebroidForm) -> AlgebroidForm {
    let mut out = AlgebroidForm::zero(a.degree + b.degree);
    for (ta, fa) in &a.coeffs {
        for (tb, fb) in &b.coeffs {
            let mut indices = ta.clone();
            indices.extend_from_slice(tb);
            out.add_term(&indices, fa.clone() * fb.clone());
        }
    }
    out.simplified()
}

/// Interior product with fiber coefficients sigma (length = rank).
pub fn contraction(
    sigma: &[ScalarExpr],
    form: &AlgebroidForm,
) -> Result<AlgebroidForm, ExteriorError> {
    if form.degree == 0 {
        return Err(ExteriorError::ContractScalar);
    }
    let mut out = AlgebroidForm::zero(form.degree - 1);
    for (tuple, f) in &form.coeffs {
        for (pos, &idx) in tuple.iter().enumerate() {
            let s = &sigma[idx];
            if s.is_zero_const() {
                continue;
            }
            let mut coeff = s.clone() * f.clone();
            if pos % 2 == 1 {
                coeff = -coeff;
            }
            let rest: Vec<usize> = tuple
                .iter()
                .enumerate()
                .filter(|(q, _)| *q != pos)
                .map(|(_, &v)| v)
                .collect();
            out.add_term(&rest, coeff);
        }
    }
    Ok(out.simplified())
}

/// Lie derivative along a section via the Cartan magic formula.
pub fn lie_derivative(
    spec: &AnchoredBasisSpec,
    sigma: &[ScalarExpr],
    form: &AlgebroidForm,
) -> Result<AlgebroidForm, ExteriorError> {
    let d_form = differential(spec, form)?;
    let first = contraction(sigma, &d_form)?;
    if form.degree == 0 {
        return Ok(first.simplified());
    }
    let contracted = contraction(sigma, form)?;
    let second = differential(spec, &contracted)?;
    let mut out = AlgebroidForm::zero(form.degree);
    for (t, f) in first.coeffs.iter().chain(second.coeffs.iter()) {
        out.add_term(t, f.clone());
    }
    Ok(out.simplified())
}

/// Derivative of a function along the anchor image of a section:
/// rho(sigma)(f) = sigma^p rho^m_p df/d(coord m).
pub fn anchor_derivative(
    spec: &AnchoredBasisSpec,
    coeffs: &[ScalarExpr],
    f: &ScalarExpr,
) -> ScalarExpr {
    let mut acc = ScalarExpr::zero();
    for p in 0..spec.rank() {
        if coeffs[p].is_zero_const() {
            continue;
        }
        for (m, name) in spec.coord_names.iter().enumerate() {
            acc = acc + coeffs[p].clone() * spec.anchor[p][m].clone() * f.diff(name);
        }
    }
    acc.simplify()
}

/// Coordinate bracket of sections over one anchored basis:
/// [sigma, eta]^s = sigma^p eta^q C^s_{pq} + rho(sigma)(eta^s) - rho(eta)(sigma^s).
pub fn bracket_sections(
    spec: &AnchoredBasisSpec,
    sigma: &[ScalarExpr],
    eta: &[ScalarExpr],
) -> Vec<ScalarExpr> {
    let rank = spec.rank();
    let rho_apply =
        |coeffs: &[ScalarExpr], f: &ScalarExpr| anchor_derivative(spec, coeffs, f);
    (0..rank)
        .map(|s| {
            let mut acc = ScalarExpr::zero();
            for p in 0..rank {
                for q in 0..rank {
                    if spec.c[p][q][s].is_zero_const() {
                        continue;
                    }
                    acc = acc + sigma[p].clone() * eta[q].clone() * spec.c[p][q][s].clone();
                }
            }
            acc = acc + rho_apply(sigma, &eta[s]) - rho_apply(eta, &sigma[s]);
            acc.simplify()
        })
        .collect()
}

/// A bundle map presented by coordinate expressions.
///
/// `base` pairs each target coordinate name with its expression in source
/// coordinates; `fiber[beta][alpha]` is phi^beta_alpha, the coefficient of
/// the source covector e^alpha in the pullback of the target covector
/// e'^beta.
#[derive(Clone, Debug)]
pub struct BundleMapExpr {
    pub base: Vec<(String, ScalarExpr)>,
    pub fiber: Vec<Vec<ScalarExpr>>,
}

impl BundleMapExpr {
    fn base_substitution(&self) -> std::collections::HashMap<String, ScalarExpr> {
        self.base
            .iter()
            .map(|(name, e)| (name.clone(), e.clone()))
            .collect()
    }

    pub fn source_rank(&self) -> usize {
        self.fiber.first().map_or(0, |row| row.len())
    }

    pub fn target_rank(&self) -> usize {
        self.fiber.len()
    }
}

fn combinations(n: usize, p: usize) -> Vec<Vec<usize>> {
    if p > n {
        return Vec::new();
    }
    if p == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..p).collect();
    loop {
        out.push(current.clone());
        // Advance to the next combination in lexicographic order.
        let mut i = p;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if current[i] != i + n - p {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        current[i] += 1;
        for j in i + 1..p {
            current[j] = current[j - 1] + 1;
        }
    }
}

/// Pullback of a form through a bundle map.
pub fn pullback(map: &BundleMapExpr, form: &AlgebroidForm) -> AlgebroidForm {
    let subst = map.base_substitution();
    let src_rank = map.source_rank();
    let p = form.degree;
    let mut out = AlgebroidForm::zero(p);
    for tuple in combinations(src_rank, p) {
        let mut acc = ScalarExpr::zero();
        for (target_tuple, coeff) in &form.coeffs {
            let mat: Vec<Vec<ScalarExpr>> = (0..p)
                .map(|row| {
                    (0..p)
                        .map(|col| map.fiber[target_tuple[row]][tuple[col]].clone())
                        .collect()
                })
                .collect();
            let det = det_symbolic(&mat).simplify();
            if det.is_zero_const() {
                continue;
            }
            acc = acc + coeff.substitute(&subst) * det;
        }
        let acc = acc.simplify();
        if !acc.is_zero_const() {
            out.coeffs.insert(tuple, acc);
        }
    }
    out
}

/// Anchor-compatibility residual of a bundle map at an environment:
/// residual[alpha][m] = rho^j_alpha d(phi^m)/d(src coord j)
///                      - rho'^m_beta(base) phi^beta_alpha.
pub fn admissibility_residual(
    map: &BundleMapExpr,
    source: &AnchoredBasisSpec,
    target: &AnchoredBasisSpec,
    env: &Env,
) -> Result<Vec<Vec<f64>>, String> {
    let subst = map.base_substitution();
    let ev = |e: &ScalarExpr| e.eval(env).map_err(|err| err.to_string());
    let mut out = vec![vec![0.0; map.base.len()]; source.rank()];
    for alpha in 0..source.rank() {
        for (m, (_, phi_m)) in map.base.iter().enumerate() {
            let mut acc = 0.0;
            for (j, name) in source.coord_names.iter().enumerate() {
                acc += ev(&source.anchor[alpha][j])? * ev(&phi_m.diff(name))?;
            }
            for beta in 0..target.rank() {
                acc -= ev(&target.anchor[beta][m].substitute(&subst))?
                    * ev(&map.fiber[beta][alpha])?;
            }
            out[alpha][m] = acc;
        }
    }
    Ok(out)
}

/// Bracket-compatibility residual of a bundle map at an environment:
/// residual[beta][alpha][delta] =
///   (rho^i_alpha d phi^beta_delta - rho^i_delta d phi^beta_alpha)
///   + C'^beta_{theta sigma}(base) phi^theta_alpha phi^sigma_delta
///   - phi^beta_gamma C^gamma_{alpha delta}.
pub fn morphism_residual(
    map: &BundleMapExpr,
    source: &AnchoredBasisSpec,
    target: &AnchoredBasisSpec,
    env: &Env,
) -> Result<Vec<Vec<Vec<f64>>>, String> {
    let subst = map.base_substitution();
    let ev = |e: &ScalarExpr| e.eval(env).map_err(|err| err.to_string());
    let sr = source.rank();
    let tr = target.rank();
    let mut out = vec![vec![vec![0.0; sr]; sr]; tr];
    for beta in 0..tr {
        for alpha in 0..sr {
            for delta in 0..sr {
                let mut acc = 0.0;
                for (i, name) in source.coord_names.iter().enumerate() {
                    acc += ev(&source.anchor[alpha][i])?
                        * ev(&map.fiber[beta][delta].diff(name))?
                        - ev(&source.anchor[delta][i])?
                            * ev(&map.fiber[beta][alpha].diff(name))?;
                }
                for theta in 0..tr {
                    for sig in 0..tr {
                        let c = &target.c[theta][sig][beta];
                        if c.is_zero_const() {
                            continue;
                        }
                        acc += ev(&c.substitute(&subst))?
                            * ev(&map.fiber[theta][alpha])?
                            * ev(&map.fiber[sig][delta])?;
                    }
                }
                for gamma in 0..sr {
                    let c = &source.c[alpha][delta][gamma];
                    if c.is_zero_const() {
                        continue;
                    }
                    acc -= ev(&map.fiber[beta][gamma])? * ev(c)?;
                }
                out[beta][alpha][delta] = acc;
            }
        }
    }
    Ok(out)
}

/// Largest coefficient difference of two forms at an environment.
pub fn max_coeff_difference(
    a: &AlgebroidForm,
    b: &AlgebroidForm,
    env: &Env,
) -> Result<f64, String> {
    let mut tuples: std::collections::BTreeSet<Vec<usize>> = a.coeffs.keys().cloned().collect();
    tuples.extend(b.coeffs.keys().cloned());
    let mut m: f64 = 0.0;
    for t in tuples {
        let va = a.coeff(&t).eval(env).map_err(|e| e.to_string())?;
        let vb = b.coeff(&t).eval(env).map_err(|e| e.to_string())?;
        m = m.max((va - vb).abs());
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn epsilon(a: usize, b: usize, c: usize) -> i64 {
        match (a, b, c) {
            (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1,
            (2, 1, 0) | (1, 0, 2) | (0, 2, 1) => -1,
            _ => 0,
        }
    }

    /// so(3) as an anchored basis over a single dummy coordinate.
    fn so3_basis() -> AnchoredBasisSpec {
        let mut c = vec![vec![vec![ScalarExpr::zero(); 3]; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                for s in 0..3 {
                    c[a][b][s] = ScalarExpr::int(epsilon(a, b, s));
                }
            }
        }
        AnchoredBasisSpec {
            coord_names: vec!["x1".to_string()],
            anchor: vec![vec![ScalarExpr::zero()]; 3],
            c,
        }
    }

    /// Tangent algebroid of R^2 with a nontrivial frame.
    fn frame_basis() -> AnchoredBasisSpec {
        let mut c = vec![vec![vec![ScalarExpr::zero(); 2]; 2]; 2];
        c[0][1][1] = ScalarExpr::one();
        c[1][0][1] = parse("-1").unwrap();
        AnchoredBasisSpec {
            coord_names: vec!["x1".to_string(), "x2".to_string()],
            anchor: vec![
                vec![ScalarExpr::one(), ScalarExpr::zero()],
                vec![ScalarExpr::zero(), parse("exp(x1)").unwrap()],
            ],
            c,
        }
    }

    fn env_at(vals: &[(&str, f64)]) -> Env {
        let mut env = Env::new();
        for (n, v) in vals {
            env.set(n.to_string(), *v);
        }
        env
    }

    #[test]
    fn so3_differential_of_dual_basis() {
        // de^3 = -e^1 wedge e^2 since C^3_{12} = 1.
        let basis = so3_basis();
        let e3 = AlgebroidForm::basis_covector(2);
        let de3 = differential(&basis, &e3).unwrap();
        assert_eq!(de3.coeffs.len(), 1);
        assert_eq!(de3.coeff(&[0, 1]), parse("-1").unwrap().simplify());
    }

    #[test]
    fn differential_of_function_uses_anchor() {
        let basis = frame_basis();
        let f = AlgebroidForm::scalar(parse("x1*x2").unwrap());
        let df = differential(&basis, &f).unwrap();
        // df = x2 e^1 + exp(x1) x1 e^2
        let env = env_at(&[("x1", 0.3), ("x2", -0.7)]);
        assert!((df.coeff(&[0]).eval(&env).unwrap() - (-0.7)).abs() < 1e-15);
        assert!((df.coeff(&[1]).eval(&env).unwrap() - 0.3f64.exp() * 0.3).abs() < 1e-15);
    }

    #[test]
    fn wedge_signs_and_nilpotency() {
        let e0 = AlgebroidForm::basis_covector(0);
        let e1 = AlgebroidForm::basis_covector(1);
        let ab = wedge(&e0, &e1);
        let ba = wedge(&e1, &e0);
        assert_eq!(ab.coeff(&[0, 1]), ScalarExpr::one());
        assert_eq!(ba.coeff(&[0, 1]), parse("-1").unwrap().simplify());
        assert!(wedge(&e0, &e0).is_zero());
    }

    #[test]
    fn graded_leibniz_for_differential() {
        let basis = frame_basis();
        let mut alpha = AlgebroidForm::zero(1);
        alpha.add_term(&[0], parse("x2^2").unwrap());
        alpha.add_term(&[1], parse("sin(x1)").unwrap());
        let beta = AlgebroidForm::scalar(parse("x1*x2").unwrap());
        // d(alpha wedge beta) = d(alpha) wedge beta - alpha wedge d(beta)
        let lhs = differential(&basis, &wedge(&alpha, &beta)).unwrap();
        let da = differential(&basis, &alpha).unwrap();
        let db = differential(&basis, &beta).unwrap();
        let mut rhs = wedge(&da, &beta);
        let correction = wedge(&alpha, &db);
        for (t, f) in &correction.coeffs {
            rhs.add_term(t, -f.clone());
        }
        let env = env_at(&[("x1", 0.4), ("x2", 0.9)]);
        assert!(max_coeff_difference(&lhs, &rhs.simplified(), &env).unwrap() < 1e-12);
    }

    #[test]
    fn dd_vanishes_on_consistent_bases() {
        for basis in [so3_basis(), frame_basis()] {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let vars: Vec<String> = basis.coord_names.clone();
            for _ in 0..20 {
                let f = crate::expr::sample::random_expr(&mut rng, &vars, 2);
                let dd = differential(
                    &basis,
                    &differential(&basis, &AlgebroidForm::scalar(f)).unwrap(),
                )
                .unwrap();
                let env = env_at(&[("x1", rng.random_range(-1.0..1.0)), ("x2", 0.4)]);
                assert!(dd.max_abs(&env).unwrap() < 1e-9, "{dd:?}");
            }
        }
    }

    #[test]
    fn differential_matches_koszul_formula() {
        let basis = frame_basis();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let vars: Vec<String> = basis.coord_names.clone();
        for _ in 0..10 {
            let mut omega = AlgebroidForm::zero(1);
            for idx in 0..2 {
                omega.add_term(&[idx], crate::expr::sample::random_expr(&mut rng, &vars, 2));
            }
            let sections: Vec<Vec<ScalarExpr>> = (0..2)
                .map(|_| {
                    (0..2)
                        .map(|_| crate::expr::sample::random_expr(&mut rng, &vars, 2))
                        .collect()
                })
                .collect();
            let domega = differential(&basis, &omega).unwrap();
            let lhs = domega.apply_symbolic(&sections).unwrap();
            // Koszul: rho(s0) omega(s1) - rho(s1) omega(s0) - omega([s0, s1])
            let rho_apply = |coeffs: &Vec<ScalarExpr>, f: &ScalarExpr| {
                let mut acc = ScalarExpr::zero();
                for p in 0..2 {
                    for (m, name) in basis.coord_names.iter().enumerate() {
                        acc = acc
                            + coeffs[p].clone() * basis.anchor[p][m].clone() * f.diff(name);
                    }
                }
                acc
            };
            let om0 = omega.apply_symbolic(std::slice::from_ref(&sections[0])).unwrap();
            let om1 = omega.apply_symbolic(std::slice::from_ref(&sections[1])).unwrap();
            let br = bracket_sections(&basis, &sections[0], &sections[1]);
            let om_br = omega.apply_symbolic(&[br]).unwrap();
            let rhs = rho_apply(&sections[0], &om1) - rho_apply(&sections[1], &om0) - om_br;
            for _ in 0..5 {
                let env = env_at(&[
                    ("x1", rng.random_range(-1.0..1.0)),
                    ("x2", rng.random_range(-1.0..1.0)),
                ]);
                let (a, b) = match (lhs.eval(&env), rhs.eval(&env)) {
                    (Ok(a), Ok(b)) => (a, b),
                    _ => continue,
                };
                assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn cartan_formula_consistency_on_functions() {
        // For degree 0: L_sigma f = i_sigma df = rho(sigma) f.
        let basis = frame_basis();
        let sigma = vec![parse("x2").unwrap(), parse("x1").unwrap()];
        let f = AlgebroidForm::scalar(parse("sin(x1)*x2").unwrap());
        let lie = lie_derivative(&basis, &sigma, &f).unwrap();
        let expected = parse("x2*(cos(x1)*x2) + x1*exp(x1)*sin(x1)").unwrap();
        let env = env_at(&[("x1", 0.25), ("x2", -0.6)]);
        assert!(
            (lie.coeff(&[]).eval(&env).unwrap() - expected.eval(&env).unwrap()).abs() < 1e-12
        );
    }

    #[test]
    fn contraction_is_degree_lowering_antiderivation() {
        let sigma = vec![
            parse("2").unwrap(),
            parse("x1").unwrap(),
            parse("-1").unwrap(),
        ];
        let e01 = wedge(
            &AlgebroidForm::basis_covector(0),
            &AlgebroidForm::basis_covector(1),
        );
        let got = contraction(&sigma, &e01).unwrap();
        // i_sigma(e^0 ^ e^1) = 2 e^1 - x1 e^0
        assert_eq!(got.coeff(&[1]), parse("2").unwrap().simplify());
        let env = env_at(&[("x1", 0.7)]);
        assert!((got.coeff(&[0]).eval(&env).unwrap() + 0.7).abs() < 1e-15);
        assert_eq!(
            contraction(&sigma, &AlgebroidForm::scalar(ScalarExpr::one())),
            Err(ExteriorError::ContractScalar)
        );
    }

    #[test]
    fn pullback_through_constant_rotation_is_morphism() {
        let basis = so3_basis();
        // Rotation about the third axis preserves epsilon.
        let t = 0.8f64;
        let (c, s) = (t.cos(), t.sin());
        let fl = |v: f64| ScalarExpr::float(v);
        let map = BundleMapExpr {
            base: vec![("x1".to_string(), parse("x1").unwrap())],
            fiber: vec![
                vec![fl(c), fl(-s), fl(0.0)],
                vec![fl(s), fl(c), fl(0.0)],
                vec![fl(0.0), fl(0.0), fl(1.0)],
            ],
        };
        let env = env_at(&[("x1", 0.1)]);
        let res = morphism_residual(&map, &basis, &basis, &env).unwrap();
        let mut max = 0.0f64;
        for b in &res {
            for row in b {
                for v in row {
                    max = max.max(v.abs());
                }
            }
        }
        assert!(max < 1e-12, "max {max}");
        // Non-uniform scaling is not a morphism.
        let bad = BundleMapExpr {
            base: vec![("x1".to_string(), parse("x1").unwrap())],
            fiber: vec![
                vec![fl(1.0), fl(0.0), fl(0.0)],
                vec![fl(0.0), fl(1.0), fl(0.0)],
                vec![fl(0.0), fl(0.0), fl(2.0)],
            ],
        };
        let res = morphism_residual(&bad, &basis, &basis, &env).unwrap();
        assert!(res[2][0][1].abs() > 0.5);
    }

    #[test]
    fn pullback_commutes_with_differential_for_morphisms() {
        // Identity-plus-frame-change map between frame_basis and itself.
        let basis = frame_basis();
        let id = BundleMapExpr {
            base: vec![
                ("x1".to_string(), parse("x1").unwrap()),
                ("x2".to_string(), parse("x2").unwrap()),
            ],
            fiber: vec![
                vec![ScalarExpr::one(), ScalarExpr::zero()],
                vec![ScalarExpr::zero(), ScalarExpr::one()],
            ],
        };
        let mut omega = AlgebroidForm::zero(1);
        omega.add_term(&[0], parse("x1^2").unwrap());
        omega.add_term(&[1], parse("x2").unwrap());
        let lhs = pullback(&id, &differential(&basis, &omega).unwrap());
        let rhs = differential(&basis, &pullback(&id, &omega)).unwrap();
        let env = env_at(&[("x1", 0.3), ("x2", 0.5)]);
        assert!(max_coeff_difference(&lhs, &rhs, &env).unwrap() < 1e-12);
    }

    #[test]
    fn admissibility_detects_anchor_mismatch() {
        let basis = frame_basis();
        // Base map x -> (x1, 2 x2) with identity fiber map is not admissible
        // in the second slot.
        let map = BundleMapExpr {
            base: vec![
                ("x1".to_string(), parse("x1").unwrap()),
                ("x2".to_string(), parse("2*x2").unwrap()),
            ],
            fiber: vec![
                vec![ScalarExpr::one(), ScalarExpr::zero()],
                vec![ScalarExpr::zero(), ScalarExpr::one()],
            ],
        };
        let env = env_at(&[("x1", 0.2), ("x2", 0.4)]);
        let res = admissibility_residual(&map, &basis, &basis, &env).unwrap();
        assert!(res[0][0].abs() < 1e-15);
        // rho^j_2 d(2 x2)/dx^j - rho'^2_beta phi^beta_2
        // = 2 exp(x1) - exp(x1) = exp(x1).
        assert!((res[1][1] - 0.2f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn apply_is_alternating_multilinear() {
        let mut omega = AlgebroidForm::zero(2);
        omega.add_term(&[0, 1], parse("x1").unwrap());
        omega.add_term(&[0, 2], parse("3").unwrap());
        let env = env_at(&[("x1", 2.0)]);
        let v1 = vec![1.0, 0.5, -1.0];
        let v2 = vec![0.0, 2.0, 1.0];
        let a = omega.apply(&[v1.clone(), v2.clone()], &env).unwrap();
        let b = omega.apply(&[v2.clone(), v1.clone()], &env).unwrap();
        assert!((a + b).abs() < 1e-15);
        assert!((omega.apply(&[v1.clone(), v1], &env).unwrap()).abs() < 1e-15);
        // Hand evaluation: x1 (v1^0 v2^1 - v1^1 v2^0) + 3 (v1^0 v2^2 - v1^2 v2^0)
        assert!((a - (2.0 * (1.0 * 2.0 - 0.5 * 0.0) + 3.0 * (1.0 * 1.0 - (-1.0) * 0.0)))
            .abs()
            < 1e-15);
    }

    #[test]
    fn degree_overflow_is_reported() {
        let basis = so3_basis();
        let top = wedge(
            &wedge(
                &AlgebroidForm::basis_covector(0),
                &AlgebroidForm::basis_covector(1),
            ),
            &AlgebroidForm::basis_covector(2),
        );
        assert_eq!(
            differential(&basis, &top),
            Err(ExteriorError::DegreeOverflow { degree: 3, rank: 3 })
        );
    }
}
