//! Discretized fields on regular grids, finite-difference prolongation,
//! residual reports, and a 1-dimensional mechanics integrator.
//!
//! Arrays are stored flat in row-major order with axis 0 slowest. All
//! derivative data uses second-order stencils: central differences in the
//! interior, one-sided 3-point stencils at boundaries. Residual norms are
//! taken over interior nodes by default so convergence-order measurements
//! see only the central stencils.

use crate::algebroid::FibrationSpec;
use crate::expr::{Env, ScalarExpr};
use crate::hamiltonian::{momentum_sample_env, EquivalenceSample, MomentumSample};
use crate::jet::{
    admissibility_symbolic, jet_env, morphism_symbolic, second_jet_env, JetPoint, SecondJetPoint,
};
use crate::lagrangian::{el_symbolic, energy_function, momenta, ModelError, ModelSpec};
use crate::names;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One uniform grid axis.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridAxis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

/// A regular grid with uniform spacing per axis.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Grid {
    pub axes: Vec<GridAxis>,
}

/// Errors from grid and field operations.
#[derive(Debug, Error)]
pub enum FieldError {
    #[error("grid axis {axis} needs at least 3 nodes, got {count}")]
    TooFewNodes { axis: usize, count: usize },
    #[error("grid axis {axis} has nonpositive extent")]
    BadExtent { axis: usize },
    #[error("axis {axis} out of range for {nx} axes")]
    AxisOutOfRange { axis: usize, nx: usize },
    #[error("array length {got} does not match expected {want}")]
    ShapeMismatch { want: usize, got: usize },
    #[error("field does not match the model: {0}")]
    DimensionMismatch(String),
    #[error("field contains a non-finite value")]
    NonFinite,
    #[error("field lacks the required block: {0}")]
    MissingBlock(String),
    #[error("integration aborted at t = {t}: singular Hessian (det {det})")]
    SingularHessianAt { t: f64, det: f64 },
    #[error("integration aborted at t = {t}: non-finite state")]
    NonFiniteState { t: f64 },
    #[error("evaluation failed: {0}")]
    Eval(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl Grid {
    pub fn new(axes: Vec<GridAxis>) -> Result<Grid, FieldError> {
        for (i, ax) in axes.iter().enumerate() {
            if ax.count < 3 {
                return Err(FieldError::TooFewNodes {
                    axis: i,
                    count: ax.count,
                });
            }
            if !(ax.max > ax.min) {
                return Err(FieldError::BadExtent { axis: i });
            }
        }
        Ok(Grid { axes })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    /// Total node count.
    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Spacing along one axis.
    pub fn spacing(&self, axis: usize) -> f64 {
        let ax = &self.axes[axis];
        (ax.max - ax.min) / (ax.count - 1) as f64
    }

    /// Row-major strides, axis 0 slowest.
    pub fn strides(&self) -> Vec<usize> {
        let n = self.dim();
        let mut s = vec![1usize; n];
        for i in (0..n.saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.axes[i + 1].count;
        }
        s
    }

    /// Multi-index of a flat node index.
    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        let strides = self.strides();
        let mut rem = flat;
        let mut out = Vec::with_capacity(self.dim());
        for s in strides {
            out.push(rem / s);
            rem %= s;
        }
        out
    }

    /// Coordinates of a flat node index.
    pub fn coords(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .zip(&self.axes)
            .map(|(idx, ax)| ax.min + *idx as f64 * (ax.max - ax.min) / (ax.count - 1) as f64)
            .collect()
    }

    /// True when the node touches no boundary face.
    pub fn is_interior(&self, flat: usize) -> bool {
        self.multi_index(flat)
            .iter()
            .zip(&self.axes)
            .all(|(idx, ax)| *idx > 0 && *idx + 1 < ax.count)
    }
}

/// Second-order derivative stencils on a 1-D slice.
fn fd_slice(values: &[f64], h: f64, out: &mut [f64]) {
    let n = values.len();
    out[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * h);
    for i in 1..n - 1 {
        out[i] = (values[i + 1] - values[i - 1]) / (2.0 * h);
    }
    out[n - 1] = (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * h);
}

/// Second-order finite differences along one grid axis.
pub fn fd_derivative(grid: &Grid, values: &[f64], axis: usize) -> Result<Vec<f64>, FieldError> {
    if axis >= grid.dim() {
        return Err(FieldError::AxisOutOfRange {
            axis,
            nx: grid.dim(),
        });
    }
    if values.len() != grid.len() {
        return Err(FieldError::ShapeMismatch {
            want: grid.len(),
            got: values.len(),
        });
    }
    let h = grid.spacing(axis);
    let stride = grid.strides()[axis];
    let count = grid.axes[axis].count;
    let mut out = vec![0.0; values.len()];
    let mut line = vec![0.0; count];
    let mut dline = vec![0.0; count];
    // Enumerate the starts of all 1-D lines along `axis`.
    let block = stride * count;
    let n = values.len();
    let mut start = 0;
    while start < n {
        for offset in 0..stride {
            for (j, v) in line.iter_mut().enumerate() {
                *v = values[start + offset + j * stride];
            }
            fd_slice(&line, h, &mut dline);
            for (j, v) in dline.iter().enumerate() {
                out[start + offset + j * stride] = *v;
            }
        }
        start += block;
    }
    Ok(out)
}

/// Second-order finite differences of a uniformly sampled series.
pub fn fd_derivative_1d(values: &[f64], h: f64) -> Result<Vec<f64>, FieldError> {
    if values.len() < 3 {
        return Err(FieldError::TooFewNodes {
            axis: 0,
            count: values.len(),
        });
    }
    let mut out = vec![0.0; values.len()];
    fd_slice(values, h, &mut out);
    Ok(out)
}

/// A discretized field: u components always, y or mu blocks per side.
#[derive(Clone, Debug)]
pub struct FieldConfiguration {
    pub grid: Grid,
    /// u[A][node].
    pub u: Vec<Vec<f64>>,
    /// y[alpha][a][node] (Lagrangian side).
    pub y: Option<Vec<Vec<Vec<f64>>>>,
    /// mu[alpha][a][node] (Hamiltonian side).
    pub mu: Option<Vec<Vec<Vec<f64>>>>,
}

impl FieldConfiguration {
    /// Checks array shapes against a fibration and rejects non-finite data.
    pub fn validate_shape(&self, fib: &FibrationSpec) -> Result<(), FieldError> {
        let n = self.grid.len();
        if self.grid.dim() != fib.nx {
            return Err(FieldError::DimensionMismatch(format!(
                "grid has {} axes, fibration has nx = {}",
                self.grid.dim(),
                fib.nx
            )));
        }
        if self.u.len() != fib.nu {
            return Err(FieldError::DimensionMismatch(format!(
                "field carries {} u components, fibration has nu = {}",
                self.u.len(),
                fib.nu
            )));
        }
        let check = |arr: &[f64]| -> Result<(), FieldError> {
            if arr.len() != n {
                return Err(FieldError::ShapeMismatch {
                    want: n,
                    got: arr.len(),
                });
            }
            if arr.iter().any(|v| !v.is_finite()) {
                return Err(FieldError::NonFinite);
            }
            Ok(())
        };
        for arr in &self.u {
            check(arr)?;
        }
        for block in self.y.iter().chain(self.mu.iter()) {
            if block.len() != fib.k || block.iter().any(|row| row.len() != fib.r) {
                return Err(FieldError::DimensionMismatch(
                    "fiber block shape does not match (k, r)".into(),
                ));
            }
            for row in block {
                for arr in row {
                    check(arr)?;
                }
            }
        }
        Ok(())
    }
}

/// Per-node jet data prolonged from a Lagrangian-side field.
#[derive(Clone, Debug)]
pub struct FieldJet {
    pub node: usize,
    pub second: SecondJetPoint,
    /// ud[A][i], grid derivatives of the u components.
    pub ud: Vec<Vec<f64>>,
}

/// Prolongs a Lagrangian-side field: y2[beta][b][a] = rho^i_a d(y^beta_b)/dx^i.
pub fn prolong_field(
    fib: &FibrationSpec,
    field: &FieldConfiguration,
) -> Result<Vec<FieldJet>, FieldError> {
    field.validate_shape(fib)?;
    let y = field
        .y
        .as_ref()
        .ok_or_else(|| FieldError::MissingBlock("y (Lagrangian side)".into()))?;
    let n = field.grid.len();
    let mut du = Vec::with_capacity(fib.nu);
    for arr in &field.u {
        let mut per_axis = Vec::with_capacity(fib.nx);
        for i in 0..fib.nx {
            per_axis.push(fd_derivative(&field.grid, arr, i)?);
        }
        du.push(per_axis);
    }
    let mut dy = vec![vec![Vec::new(); fib.r]; fib.k];
    for beta in 0..fib.k {
        for b in 0..fib.r {
            let mut per_axis = Vec::with_capacity(fib.nx);
            for i in 0..fib.nx {
                per_axis.push(fd_derivative(&field.grid, &y[beta][b], i)?);
            }
            dy[beta][b] = per_axis;
        }
    }
    let mut out = Vec::with_capacity(n);
    for node in 0..n {
        let x = field.grid.coords(node);
        let u: Vec<f64> = field.u.iter().map(|arr| arr[node]).collect();
        let yv: Vec<Vec<f64>> = (0..fib.k)
            .map(|alpha| (0..fib.r).map(|a| y[alpha][a][node]).collect())
            .collect();
        let jet = JetPoint {
            x: x.clone(),
            u: u.clone(),
            y: yv,
        };
        let env = jet_env(&jet);
        let mut y2 = vec![vec![vec![0.0; fib.r]; fib.r]; fib.k];
        for beta in 0..fib.k {
            for b in 0..fib.r {
                for a in 0..fib.r {
                    let mut acc = 0.0;
                    for i in 0..fib.nx {
                        let rho = fib.rho_f[a][i]
                            .eval(&env)
                            .map_err(|e| FieldError::Eval(e.to_string()))?;
                        acc += rho * dy[beta][b][i][node];
                    }
                    y2[beta][b][a] = acc;
                }
            }
        }
        let ud: Vec<Vec<f64>> = (0..fib.nu)
            .map(|big_a| (0..fib.nx).map(|i| du[big_a][i][node]).collect())
            .collect();
        out.push(FieldJet {
            node,
            second: SecondJetPoint { jet, y2 },
            ud,
        });
    }
    Ok(out)
}

/// Per-node momentum samples from a Hamiltonian-side field.
pub fn momentum_samples(
    fib: &FibrationSpec,
    field: &FieldConfiguration,
) -> Result<Vec<MomentumSample>, FieldError> {
    field.validate_shape(fib)?;
    let mu = field
        .mu
        .as_ref()
        .ok_or_else(|| FieldError::MissingBlock("mu (Hamiltonian side)".into()))?;
    let n = field.grid.len();
    let mut du = Vec::with_capacity(fib.nu);
    for arr in &field.u {
        let mut per_axis = Vec::with_capacity(fib.nx);
        for i in 0..fib.nx {
            per_axis.push(fd_derivative(&field.grid, arr, i)?);
        }
        du.push(per_axis);
    }
    let mut dmu = vec![vec![Vec::new(); fib.r]; fib.k];
    for alpha in 0..fib.k {
        for a in 0..fib.r {
            let mut per_axis = Vec::with_capacity(fib.nx);
            for i in 0..fib.nx {
                per_axis.push(fd_derivative(&field.grid, &mu[alpha][a], i)?);
            }
            dmu[alpha][a] = per_axis;
        }
    }
    let mut out = Vec::with_capacity(n);
    for node in 0..n {
        out.push(MomentumSample {
            x: field.grid.coords(node),
            u: field.u.iter().map(|arr| arr[node]).collect(),
            mu: (0..fib.k)
                .map(|alpha| (0..fib.r).map(|a| mu[alpha][a][node]).collect())
                .collect(),
            ud: (0..fib.nu)
                .map(|big_a| (0..fib.nx).map(|i| du[big_a][i][node]).collect())
                .collect(),
            mud: (0..fib.k)
                .map(|alpha| {
                    (0..fib.r)
                        .map(|a| (0..fib.nx).map(|i| dmu[alpha][a][i][node]).collect())
                        .collect()
                })
                .collect(),
        });
    }
    Ok(out)
}

/// Aggregate statistics for one equation block.
#[derive(Clone, Debug, Serialize)]
pub struct BlockStat {
    pub name: String,
    pub max: f64,
    pub rms: f64,
}

/// Residual report over grid nodes.
#[derive(Clone, Debug, Serialize)]
pub struct ResidualReport {
    pub nodes_evaluated: usize,
    pub include_boundary: bool,
    pub tol: f64,
    pub blocks: Vec<BlockStat>,
    pub pass: bool,
}

struct BlockAccumulator {
    name: String,
    max: f64,
    sum_sq: f64,
    count: usize,
}

impl BlockAccumulator {
    fn new(name: &str) -> Self {
        BlockAccumulator {
            name: name.to_string(),
            max: 0.0,
            sum_sq: 0.0,
            count: 0,
        }
    }

    fn push(&mut self, v: f64) {
        self.max = self.max.max(v.abs());
        self.sum_sq += v * v;
        self.count += 1;
    }

    fn stat(&self) -> BlockStat {
        BlockStat {
            name: self.name.clone(),
            max: self.max,
            rms: if self.count == 0 {
                0.0
            } else {
                (self.sum_sq / self.count as f64).sqrt()
            },
        }
    }
}

fn eval_block(
    exprs: &[&ScalarExpr],
    env: &Env,
    acc: &mut BlockAccumulator,
) -> Result<(), FieldError> {
    for e in exprs {
        let v = e.eval(env).map_err(|err| FieldError::Eval(err.to_string()))?;
        acc.push(v);
    }
    Ok(())
}

/// Per-block residual statistics of a field against its model equations.
///
/// The Lagrangian side reports admissibility, morphism, and Euler-Lagrange
/// blocks; the Hamiltonian side reports the Hamilton (i)-(iii) blocks. Sides
/// are selected by which field blocks and model functions are present.
pub fn residual_report(
    model: &ModelSpec,
    field: &FieldConfiguration,
    tol: f64,
    include_boundary: bool,
) -> Result<ResidualReport, FieldError> {
    let fib = &model.fib;
    let lagrangian_side = field.y.is_some() && model.lagrangian.is_some();
    let hamiltonian_side = field.mu.is_some() && model.hamiltonian.is_some();
    if !lagrangian_side && !hamiltonian_side {
        return Err(FieldError::MissingBlock(
            "no matching field data / model function pair".into(),
        ));
    }
    let mut blocks: Vec<BlockAccumulator> = Vec::new();
    let mut nodes_evaluated = 0usize;
    if lagrangian_side {
        let adm = admissibility_symbolic(fib);
        let mor = morphism_symbolic(fib);
        let el = el_symbolic(model)?;
        let jets = prolong_field(fib, field)?;
        let mut acc_adm = BlockAccumulator::new("admissibility");
        let mut acc_mor = BlockAccumulator::new("morphism");
        let mut acc_el = BlockAccumulator::new("euler_lagrange");
        for jet in &jets {
            if !include_boundary && !field.grid.is_interior(jet.node) {
                continue;
            }
            nodes_evaluated += 1;
            let mut env = second_jet_env(&jet.second);
            for (big_a, row) in jet.ud.iter().enumerate() {
                for (i, v) in row.iter().enumerate() {
                    env.set(names::ud(big_a, i), *v);
                }
            }
            let adm_refs: Vec<&ScalarExpr> = adm.iter().flatten().collect();
            eval_block(&adm_refs, &env, &mut acc_adm)?;
            let mor_refs: Vec<&ScalarExpr> =
                mor.iter().flat_map(|b| b.iter().flatten()).collect();
            eval_block(&mor_refs, &env, &mut acc_mor)?;
            let el_refs: Vec<&ScalarExpr> = el.iter().collect();
            eval_block(&el_refs, &env, &mut acc_el)?;
        }
        blocks.extend([acc_adm, acc_mor, acc_el]);
    }
    if hamiltonian_side {
        let system = crate::hamiltonian::hamilton_symbolic(model)?;
        let samples = momentum_samples(fib, field)?;
        let mut acc_adm = BlockAccumulator::new("hamilton_admissibility");
        let mut acc_cmp = BlockAccumulator::new("hamilton_compatibility");
        let mut acc_mom = BlockAccumulator::new("hamilton_momentum");
        for (node, sample) in samples.iter().enumerate() {
            if !include_boundary && !field.grid.is_interior(node) {
                continue;
            }
            if !lagrangian_side {
                nodes_evaluated += 1;
            }
            let env = momentum_sample_env(sample);
            let adm_refs: Vec<&ScalarExpr> = system.admissibility.iter().flatten().collect();
            eval_block(&adm_refs, &env, &mut acc_adm)?;
            let cmp_refs: Vec<&ScalarExpr> = system
                .compatibility
                .iter()
                .flat_map(|b| b.iter().flatten())
                .collect();
            eval_block(&cmp_refs, &env, &mut acc_cmp)?;
            let mom_refs: Vec<&ScalarExpr> = system.momentum.iter().collect();
            eval_block(&mom_refs, &env, &mut acc_mom)?;
        }
        blocks.extend([acc_adm, acc_cmp, acc_mom]);
    }
    let stats: Vec<BlockStat> = blocks.iter().map(|b| b.stat()).collect();
    let pass = stats.iter().all(|s| s.max <= tol);
    Ok(ResidualReport {
        nodes_evaluated,
        include_boundary,
        tol,
        blocks: stats,
        pass,
    })
}

/// CSV dump: one node per row with coordinates, field values, and per-block
/// max residual at that node.
pub fn residual_csv(model: &ModelSpec, field: &FieldConfiguration) -> Result<String, FieldError> {
    let fib = &model.fib;
    let lagrangian_side = field.y.is_some() && model.lagrangian.is_some();
    let mut header: Vec<String> = (0..fib.nx).map(names::x).collect();
    header.extend((0..fib.nu).map(names::u));
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let n = field.grid.len();
    for node in 0..n {
        let mut row = field.grid.coords(node);
        row.extend(field.u.iter().map(|arr| arr[node]));
        rows.push(row);
    }
    if lagrangian_side {
        let y = field.y.as_ref().unwrap();
        for alpha in 0..fib.k {
            for a in 0..fib.r {
                header.push(names::y(alpha, a));
                for (node, row) in rows.iter_mut().enumerate() {
                    row.push(y[alpha][a][node]);
                }
            }
        }
        let adm = admissibility_symbolic(fib);
        let mor = morphism_symbolic(fib);
        let el = el_symbolic(model)?;
        header.extend([
            "admissibility_max".into(),
            "morphism_max".into(),
            "euler_lagrange_max".into(),
        ]);
        let jets = prolong_field(fib, field)?;
        for jet in &jets {
            let mut env = second_jet_env(&jet.second);
            for (big_a, urow) in jet.ud.iter().enumerate() {
                for (i, v) in urow.iter().enumerate() {
                    env.set(names::ud(big_a, i), *v);
                }
            }
            let maxes = [
                block_max(&adm.iter().flatten().collect::<Vec<_>>(), &env)?,
                block_max(
                    &mor.iter().flat_map(|b| b.iter().flatten()).collect::<Vec<_>>(),
                    &env,
                )?,
                block_max(&el.iter().collect::<Vec<_>>(), &env)?,
            ];
            rows[jet.node].extend(maxes);
        }
    } else {
        let mu = field
            .mu
            .as_ref()
            .ok_or_else(|| FieldError::MissingBlock("mu (Hamiltonian side)".into()))?;
        for alpha in 0..fib.k {
            for a in 0..fib.r {
                header.push(names::mu(alpha, a));
                for (node, row) in rows.iter_mut().enumerate() {
                    row.push(mu[alpha][a][node]);
                }
            }
        }
        let system = crate::hamiltonian::hamilton_symbolic(model)?;
        header.extend([
            "hamilton_admissibility_max".into(),
            "hamilton_compatibility_max".into(),
            "hamilton_momentum_max".into(),
        ]);
        let samples = momentum_samples(fib, field)?;
        for (node, sample) in samples.iter().enumerate() {
            let env = momentum_sample_env(sample);
            let maxes = [
                block_max(&system.admissibility.iter().flatten().collect::<Vec<_>>(), &env)?,
                block_max(
                    &system
                        .compatibility
                        .iter()
                        .flat_map(|b| b.iter().flatten())
                        .collect::<Vec<_>>(),
                    &env,
                )?,
                block_max(&system.momentum.iter().collect::<Vec<_>>(), &env)?,
            ];
            rows[node].extend(maxes);
        }
    }
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}

fn block_max(exprs: &[&ScalarExpr], env: &Env) -> Result<f64, FieldError> {
    let mut m = 0.0f64;
    for e in exprs {
        m = m.max(
            e.eval(env)
                .map_err(|err| FieldError::Eval(err.to_string()))?
                .abs(),
        );
    }
    Ok(m)
}

/// Time series produced by the 1-D integrator.
#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    /// Base coordinate x1 along the flow.
    pub x: Vec<f64>,
    /// u[node][A].
    pub u: Vec<Vec<f64>>,
    /// y[node][alpha].
    pub y: Vec<Vec<f64>>,
    /// Energy dL/dy . y - L per node.
    pub energy: Vec<f64>,
}

/// Classical RK4 on the Euler-Lagrange flow of a mechanics model
/// (nx = 1, r = 1), solving the fiber Hessian for yd at every stage.
pub fn integrate_1d(
    model: &ModelSpec,
    u0: &[f64],
    y0: &[f64],
    t_span: (f64, f64),
    dt: f64,
) -> Result<Trajectory, FieldError> {
    let fib = &model.fib;
    if fib.nx != 1 || fib.r != 1 {
        return Err(FieldError::DimensionMismatch(format!(
            "integrate_1d needs nx = 1 and r = 1, got nx = {}, r = {}",
            fib.nx, fib.r
        )));
    }
    if u0.len() != fib.nu || y0.len() != fib.k {
        return Err(FieldError::DimensionMismatch(
            "initial data shape does not match (nu, k)".into(),
        ));
    }
    let l = model.require_l()?;
    let k = fib.k;
    let first = momenta(model)?;
    let second: Vec<Vec<ScalarExpr>> = (0..k)
        .map(|alpha| {
            (0..k)
                .map(|beta| first[alpha][0].diff(&names::y(beta, 0)))
                .collect()
        })
        .collect();
    let el = el_symbolic(model)?;
    let zero_yd: std::collections::HashMap<String, ScalarExpr> = (0..k)
        .map(|beta| (names::yd(beta, 0, 0), ScalarExpr::zero()))
        .collect();
    let rest: Vec<ScalarExpr> = el.iter().map(|e| e.substitute(&zero_yd).simplify()).collect();
    let energy = energy_function(model)?;
    let _ = l;

    // State vector: (x1, u..., y...).
    let deriv = |state: &[f64], t: f64| -> Result<Vec<f64>, FieldError> {
        let mut env = Env::new();
        env.set(names::x(0), state[0]);
        for big_a in 0..fib.nu {
            env.set(names::u(big_a), state[1 + big_a]);
        }
        for alpha in 0..k {
            env.set(names::y(alpha, 0), state[1 + fib.nu + alpha]);
        }
        let ev = |e: &ScalarExpr| -> Result<f64, FieldError> {
            e.eval(&env).map_err(|err| FieldError::Eval(err.to_string()))
        };
        let mut hess = DMatrix::zeros(k, k);
        for alpha in 0..k {
            for beta in 0..k {
                hess[(alpha, beta)] = ev(&second[alpha][beta])?;
            }
        }
        let mut rhs = DVector::zeros(k);
        for alpha in 0..k {
            rhs[alpha] = -ev(&rest[alpha])?;
        }
        let det = hess.clone().determinant();
        let yd = hess
            .lu()
            .solve(&rhs)
            .ok_or(FieldError::SingularHessianAt { t, det })?;
        let mut out = vec![0.0; 1 + fib.nu + k];
        out[0] = ev(&fib.rho_f[0][0])?;
        for big_a in 0..fib.nu {
            let mut acc = ev(&fib.rho_ea[0][big_a])?;
            for alpha in 0..k {
                acc += ev(&fib.rho_ealpha[alpha][big_a])? * state[1 + fib.nu + alpha];
            }
            out[1 + big_a] = acc;
        }
        for alpha in 0..k {
            out[1 + fib.nu + alpha] = yd[alpha];
        }
        Ok(out)
    };

    let (t0, t1) = t_span;
    let steps = ((t1 - t0) / dt).round() as usize;
    let mut state: Vec<f64> = Vec::with_capacity(1 + fib.nu + k);
    state.push(t0);
    state.extend_from_slice(u0);
    state.extend_from_slice(y0);
    let mut traj = Trajectory {
        t: Vec::with_capacity(steps + 1),
        x: Vec::with_capacity(steps + 1),
        u: Vec::with_capacity(steps + 1),
        y: Vec::with_capacity(steps + 1),
        energy: Vec::with_capacity(steps + 1),
    };
    let record = |traj: &mut Trajectory, t: f64, state: &[f64]| -> Result<(), FieldError> {
        let mut env = Env::new();
        env.set(names::x(0), state[0]);
        for big_a in 0..fib.nu {
            env.set(names::u(big_a), state[1 + big_a]);
        }
        for alpha in 0..k {
            env.set(names::y(alpha, 0), state[1 + fib.nu + alpha]);
        }
        traj.t.push(t);
        traj.x.push(state[0]);
        traj.u.push(state[1..1 + fib.nu].to_vec());
        traj.y.push(state[1 + fib.nu..].to_vec());
        traj.energy.push(
            energy
                .eval(&env)
                .map_err(|err| FieldError::Eval(err.to_string()))?,
        );
        Ok(())
    };
    record(&mut traj, t0, &state)?;
    let axpy = |s: &[f64], k: &[f64], c: f64| -> Vec<f64> {
        s.iter().zip(k).map(|(a, b)| a + c * b).collect()
    };
    for step in 0..steps {
        let t = t0 + step as f64 * dt;
        let k1 = deriv(&state, t)?;
        let k2 = deriv(&axpy(&state, &k1, dt / 2.0), t + dt / 2.0)?;
        let k3 = deriv(&axpy(&state, &k2, dt / 2.0), t + dt / 2.0)?;
        let k4 = deriv(&axpy(&state, &k3, dt), t + dt)?;
        for i in 0..state.len() {
            state[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let t_next = t0 + (step + 1) as f64 * dt;
        if state.iter().any(|v| !v.is_finite()) {
            return Err(FieldError::NonFiniteState { t: t_next });
        }
        record(&mut traj, t_next, &state)?;
    }
    Ok(traj)
}

/// CSV dump of a trajectory with energy, energy-drift, and user-declared
/// current columns.
pub fn trajectory_csv(
    model: &ModelSpec,
    traj: &Trajectory,
    currents: &[(String, ScalarExpr)],
) -> Result<String, FieldError> {
    let fib = &model.fib;
    let mut header = vec!["t".to_string(), names::x(0)];
    header.extend((0..fib.nu).map(names::u));
    header.extend((0..fib.k).map(|alpha| names::y(alpha, 0)));
    header.push("energy".into());
    header.push("energy_drift".into());
    header.extend(currents.iter().map(|(name, _)| name.clone()));
    let mut out = header.join(",");
    out.push('\n');
    let energy0 = traj.energy.first().copied().unwrap_or(0.0);
    for node in 0..traj.t.len() {
        let mut row = vec![traj.t[node], traj.x[node]];
        row.extend(&traj.u[node]);
        row.extend(&traj.y[node]);
        row.push(traj.energy[node]);
        row.push(traj.energy[node] - energy0);
        if !currents.is_empty() {
            let mut env = Env::new();
            env.set(names::x(0), traj.x[node]);
            for big_a in 0..fib.nu {
                env.set(names::u(big_a), traj.u[node][big_a]);
            }
            for alpha in 0..fib.k {
                env.set(names::y(alpha, 0), traj.y[node][alpha]);
            }
            for (_, expr) in currents {
                row.push(
                    expr.eval(&env)
                        .map_err(|err| FieldError::Eval(err.to_string()))?,
                );
            }
        }
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}

/// Equivalence-check samples from a trajectory: the Legendre image of every
/// node with finite-difference derivatives of (u, mu, y) along the flow.
pub fn equivalence_samples_from_trajectory(
    model: &ModelSpec,
    traj: &Trajectory,
) -> Result<Vec<EquivalenceSample>, FieldError> {
    let fib = &model.fib;
    let n = traj.t.len();
    if n < 3 {
        return Err(FieldError::TooFewNodes { axis: 0, count: n });
    }
    let dt = traj.t[1] - traj.t[0];
    // Legendre image per node.
    let mut mu_series = vec![vec![0.0; n]; fib.k];
    for node in 0..n {
        let p = JetPoint {
            x: vec![traj.x[node]],
            u: traj.u[node].clone(),
            y: traj.y[node].iter().map(|v| vec![*v]).collect(),
        };
        let q = crate::hamiltonian::legendre(model, &p)?;
        for alpha in 0..fib.k {
            mu_series[alpha][node] = q.mu[alpha][0];
        }
    }
    let mut du_dt = Vec::with_capacity(fib.nu);
    for big_a in 0..fib.nu {
        let series: Vec<f64> = traj.u.iter().map(|row| row[big_a]).collect();
        du_dt.push(fd_derivative_1d(&series, dt)?);
    }
    let mut dmu_dt = Vec::with_capacity(fib.k);
    let mut dy_dt = Vec::with_capacity(fib.k);
    for alpha in 0..fib.k {
        dmu_dt.push(fd_derivative_1d(&mu_series[alpha], dt)?);
        let series: Vec<f64> = traj.y.iter().map(|row| row[alpha]).collect();
        dy_dt.push(fd_derivative_1d(&series, dt)?);
    }
    // Flow parametrization: d/dt = rho^1_1 d/dx1, so x-derivatives divide by rho.
    let mut out = Vec::with_capacity(n);
    for node in 0..n {
        let mut env = Env::new();
        env.set(names::x(0), traj.x[node]);
        for big_a in 0..fib.nu {
            env.set(names::u(big_a), traj.u[node][big_a]);
        }
        let rho = fib.rho_f[0][0]
            .eval(&env)
            .map_err(|err| FieldError::Eval(err.to_string()))?;
        out.push(EquivalenceSample {
            point: MomentumSample {
                x: vec![traj.x[node]],
                u: traj.u[node].clone(),
                mu: (0..fib.k).map(|alpha| vec![mu_series[alpha][node]]).collect(),
                ud: (0..fib.nu).map(|big_a| vec![du_dt[big_a][node] / rho]).collect(),
                mud: (0..fib.k)
                    .map(|alpha| vec![vec![dmu_dt[alpha][node] / rho]])
                    .collect(),
            },
            y_guess: traj.y[node].iter().map(|v| vec![*v]).collect(),
            dg: (0..fib.k)
                .map(|alpha| vec![vec![dy_dt[alpha][node] / rho]])
                .collect(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::hamiltonian::equivalence_check;
    use crate::lagrangian::el_residual;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid1(min: f64, max: f64, count: usize) -> Grid {
        Grid::new(vec![GridAxis { min, max, count }]).unwrap()
    }

    fn grid2(count: usize) -> Grid {
        Grid::new(vec![
            GridAxis {
                min: 0.0,
                max: 1.0,
                count,
            },
            GridAxis {
                min: 0.0,
                max: 1.0,
                count,
            },
        ])
        .unwrap()
    }

    /// nx = 2 standard-type fibration: one u, k = 1, rho_Ealpha = identity.
    fn standard2() -> ModelSpec {
        let mut fib = FibrationSpec::new_zero(2, 1, 2, 2);
        fib.rho_f[0][0] = ScalarExpr::one();
        fib.rho_f[1][1] = ScalarExpr::one();
        fib.rho_ealpha[0][0] = ScalarExpr::one();
        // Second vertical direction acts trivially on u.
        ModelSpec {
            name: "standard2".into(),
            fib,
            lagrangian: Some(parse("(y1_1^2 + y1_2^2 + y2_1^2 + y2_2^2)/2 - u1^2/2").unwrap()),
            hamiltonian: None,
        }
    }

    fn harmonic_oscillator() -> ModelSpec {
        let mut fib = FibrationSpec::new_zero(1, 1, 1, 1);
        fib.rho_f[0][0] = ScalarExpr::one();
        fib.rho_ealpha[0][0] = ScalarExpr::one();
        ModelSpec {
            name: "oscillator".into(),
            fib,
            lagrangian: Some(parse("y1_1^2/2 - u1^2/2").unwrap()),
            hamiltonian: None,
        }
    }

    #[test]
    fn grid_invariants_and_indexing() {
        assert!(matches!(
            Grid::new(vec![GridAxis {
                min: 0.0,
                max: 1.0,
                count: 2
            }]),
            Err(FieldError::TooFewNodes { .. })
        ));
        assert!(matches!(
            Grid::new(vec![GridAxis {
                min: 1.0,
                max: 1.0,
                count: 5
            }]),
            Err(FieldError::BadExtent { .. })
        ));
        let g = grid2(4);
        assert_eq!(g.len(), 16);
        assert_eq!(g.strides(), vec![4, 1]);
        // Axis 0 is slowest: node 9 = (2, 1).
        assert_eq!(g.multi_index(9), vec![2, 1]);
        let c = g.coords(9);
        assert!((c[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((c[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(!g.is_interior(3));
        assert!(g.is_interior(5));
    }

    #[test]
    fn fd_derivative_orders() {
        // Affine data differentiates exactly, including boundary stencils.
        let g = grid1(-1.0, 2.0, 7);
        let vals: Vec<f64> = (0..7).map(|i| 3.0 * g.coords(i)[0] + 1.0).collect();
        let d = fd_derivative(&g, &vals, 0).unwrap();
        for v in &d {
            assert!((v - 3.0).abs() < 1e-12);
        }
        // Constant field.
        let d = fd_derivative(&g, &vec![4.0; 7], 0).unwrap();
        for v in &d {
            assert!(v.abs() < 1e-12);
        }
        // sin on 201 nodes: max error below 1e-3 against cos.
        let g = grid1(0.0, 2.0 * std::f64::consts::PI, 201);
        let vals: Vec<f64> = (0..201).map(|i| g.coords(i)[0].sin()).collect();
        let d = fd_derivative(&g, &vals, 0).unwrap();
        let mut max_err = 0.0f64;
        for (i, v) in d.iter().enumerate() {
            max_err = max_err.max((v - g.coords(i)[0].cos()).abs());
        }
        assert!(max_err < 1e-3, "{max_err}");
        // 2-D cross-check along axis 1.
        let g = grid2(21);
        let vals: Vec<f64> = (0..g.len())
            .map(|n| {
                let c = g.coords(n);
                c[0] * c[0] + 2.0 * c[1]
            })
            .collect();
        let d = fd_derivative(&g, &vals, 1).unwrap();
        for v in &d {
            assert!((v - 2.0).abs() < 1e-10);
        }
        assert!(matches!(
            fd_derivative(&g, &vals, 2),
            Err(FieldError::AxisOutOfRange { .. })
        ));
    }

    #[test]
    fn prolong_field_y2_symmetry_for_gradient_fields() {
        // y = du/dx makes y2 the FD Hessian of u, symmetric up to stencil error.
        let model = standard2();
        let fib = &model.fib;
        let g = grid2(41);
        let u: Vec<f64> = (0..g.len())
            .map(|n| {
                let c = g.coords(n);
                (2.0 * c[0]).sin() * (3.0 * c[1]).cos()
            })
            .collect();
        let dux = fd_derivative(&g, &u, 0).unwrap();
        let duy = fd_derivative(&g, &u, 1).unwrap();
        let zeros = vec![0.0; g.len()];
        let field = FieldConfiguration {
            grid: g.clone(),
            u: vec![u],
            y: Some(vec![
                vec![dux, duy],
                vec![zeros.clone(), zeros.clone()],
            ]),
            mu: None,
        };
        let jets = prolong_field(fib, &field).unwrap();
        let mut max_asym = 0.0f64;
        for jet in &jets {
            if !g.is_interior(jet.node) {
                continue;
            }
            max_asym = max_asym.max((jet.second.y2[0][0][1] - jet.second.y2[0][1][0]).abs());
        }
        assert!(max_asym < 5e-3, "{max_asym}");
        // Constant field prolongs to zero y2.
        let field = FieldConfiguration {
            grid: g.clone(),
            u: vec![vec![0.5; g.len()]],
            y: Some(vec![
                vec![vec![0.2; g.len()], vec![0.1; g.len()]],
                vec![zeros.clone(), zeros],
            ]),
            mu: None,
        };
        for jet in prolong_field(fib, &field).unwrap() {
            for block in &jet.second.y2 {
                for row in block {
                    for v in row {
                        assert!(v.abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn residual_report_matches_pointwise_el() {
        let model = standard2();
        let g = grid2(11);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut arr = || -> Vec<f64> { (0..g.len()).map(|_| rng.random_range(-0.5..0.5)).collect() };
        let field = FieldConfiguration {
            grid: g.clone(),
            u: vec![arr()],
            y: Some(vec![vec![arr(), arr()], vec![arr(), arr()]]),
            mu: None,
        };
        let report = residual_report(&model, &field, 1e-9, false).unwrap();
        assert!(!report.pass);
        let el_stat = report.blocks.iter().find(|b| b.name == "euler_lagrange").unwrap();
        // Oracle: max over interior nodes of pointwise el_residual.
        let jets = prolong_field(&model.fib, &field).unwrap();
        let mut max_el = 0.0f64;
        for jet in &jets {
            if !g.is_interior(jet.node) {
                continue;
            }
            for v in el_residual(&model, &jet.second).unwrap() {
                max_el = max_el.max(v.abs());
            }
        }
        assert!((el_stat.max - max_el).abs() < 1e-12);
    }

    #[test]
    fn residual_report_zero_field_trivial_blocks() {
        // rho^A_a = 0 and C_mix0 = 0: the zero field is admissible and flat.
        let model = standard2();
        let g = grid2(5);
        let zeros = vec![0.0; g.len()];
        let field = FieldConfiguration {
            grid: g,
            u: vec![zeros.clone()],
            y: Some(vec![
                vec![zeros.clone(), zeros.clone()],
                vec![zeros.clone(), zeros.clone()],
            ]),
            mu: None,
        };
        let report = residual_report(&model, &field, 1e-12, true).unwrap();
        for b in &report.blocks {
            if b.name == "euler_lagrange" {
                continue;
            }
            assert_eq!(b.max, 0.0, "{}", b.name);
        }
    }

    #[test]
    fn integrate_free_particle_and_oscillator() {
        // Free particle: V = 0, u moves linearly.
        let mut model = harmonic_oscillator();
        model.lagrangian = Some(parse("y1_1^2/2").unwrap());
        let traj = integrate_1d(&model, &[0.2], &[0.7], (0.0, 1.0), 1e-3).unwrap();
        let end = traj.u.last().unwrap()[0];
        assert!((end - (0.2 + 0.7)).abs() < 1e-12);
        // Harmonic oscillator: u(t) = cos t. The span is rounded to whole
        // steps, so compare at the recorded final time.
        let model = harmonic_oscillator();
        let traj = integrate_1d(
            &model,
            &[1.0],
            &[0.0],
            (0.0, 2.0 * std::f64::consts::PI),
            1e-3,
        )
        .unwrap();
        let t_end = *traj.t.last().unwrap();
        let end = traj.u.last().unwrap()[0];
        assert!((end - t_end.cos()).abs() < 1e-10, "{end}");
        // Energy column is the conserved oscillator energy.
        let e0 = traj.energy[0];
        for e in &traj.energy {
            assert!((e - e0).abs() < 1e-9);
        }
        // Singular Lagrangian aborts.
        let mut singular = harmonic_oscillator();
        singular.lagrangian = Some(parse("y1_1").unwrap());
        let err = integrate_1d(&singular, &[0.0], &[0.0], (0.0, 1.0), 0.1).unwrap_err();
        assert!(matches!(err, FieldError::SingularHessianAt { .. }));
    }

    #[test]
    fn equivalence_check_on_oscillator_trajectory() {
        let model = {
            let mut m = harmonic_oscillator();
            m.hamiltonian = Some(parse("mu1_1^2/2 + u1^2/2").unwrap());
            m
        };
        let traj = integrate_1d(&model, &[1.0], &[0.0], (0.0, 2.0), 1e-3).unwrap();
        let samples = equivalence_samples_from_trajectory(&model, &traj).unwrap();
        let report = equivalence_check(&model, &samples).unwrap();
        assert!(report.max_roundtrip < 1e-12);
        assert!(report.max_abs() < 1e-5, "{report:?}");
        // Hamilton-side residual through the symbolic H agrees.
        let mut max_sym = 0.0f64;
        for s in &samples {
            let res = crate::hamiltonian::hamilton_residual(&model, &s.point).unwrap();
            max_sym = max_sym.max(res.max_abs);
        }
        assert!(max_sym < 1e-5, "{max_sym}");
        // A perturbed trajectory violates the equations well above tolerance.
        let mut bad = traj.clone();
        for (node, y) in bad.y.iter_mut().enumerate() {
            y[0] += 0.01 * (7.0 * node as f64).sin();
        }
        let samples = equivalence_samples_from_trajectory(&model, &bad).unwrap();
        let report = equivalence_check(&model, &samples).unwrap();
        assert!(report.max_abs() > 1e-3, "{report:?}");
    }

    #[test]
    fn csv_exports_have_expected_shape() {
        let model = harmonic_oscillator();
        let traj = integrate_1d(&model, &[1.0], &[0.0], (0.0, 0.1), 0.01).unwrap();
        let csv = trajectory_csv(
            &model,
            &traj,
            &[("momentum".into(), parse("y1_1").unwrap())],
        )
        .unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,x1,u1,y1_1,energy,energy_drift,momentum");
        assert_eq!(lines.len(), 12);
        let model = standard2();
        let g = grid2(3);
        let zeros = vec![0.0; g.len()];
        let field = FieldConfiguration {
            grid: g,
            u: vec![zeros.clone()],
            y: Some(vec![
                vec![zeros.clone(), zeros.clone()],
                vec![zeros.clone(), zeros.clone()],
            ]),
            mu: None,
        };
        let csv = residual_csv(&model, &field).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines[0],
            "x1,x2,u1,y1_1,y1_2,y2_1,y2_2,admissibility_max,morphism_max,euler_lagrange_max"
        );
        assert_eq!(lines.len(), 10);
    }
}
