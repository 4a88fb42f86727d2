//! Command-line front end: validate spec files, print derived equations,
//! evaluate field residuals, run the 1-D integrator, and manage presets.
//!
//! Exit codes: 0 success/pass, 1 check failure (validation fail, residual
//! over tolerance, missing Lagrangian or Hamiltonian, singular Hessian),
//! 2 parse or shape errors. Report payload goes to stdout only.

use crate::expr::{parse, ScalarExpr};
use crate::fields::{integrate_1d, residual_csv, residual_report, trajectory_csv, FieldError};
use crate::hamiltonian::hamilton_symbolic;
use crate::jet::{admissibility_symbolic, morphism_symbolic};
use crate::lagrangian::{el_symbolic, ModelError, ModelSpec};
use crate::names;
use crate::presets::{preset_by_name, PresetError, PRESET_NAMES};
use crate::specfile::{
    doc_to_model, load_field, load_spec, load_spec_doc, save_spec, SpecFileError,
};
use clap::{Parser, Subcommand, ValueEnum};
use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Tolerance used when `--tol` is absent and the spec file has no say.
pub const DEFAULT_TOL: f64 = 1e-8;

/// Sample-point count for `validate` unless overridden.
pub const DEFAULT_VALIDATE_POINTS: usize = 50;

/// Symbolic-numeric engine for classical field theory on Lie algebroid
/// fibrations.
#[derive(Parser, Debug)]
#[command(name = "liefield", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Residual tolerance [default: 1e-8; validate falls back to the spec
    /// file's tolerances.validate].
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Seed for random sample points.
    #[arg(long, global = true, default_value_t = 1405)]
    seed: u64,
    /// Emit machine-readable JSON reports.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check antisymmetry, anchor compatibility, and Jacobi at random points.
    Validate {
        /// Spec file path.
        spec: PathBuf,
        /// Number of sample points.
        #[arg(long, default_value_t = DEFAULT_VALIDATE_POINTS)]
        points: usize,
    },
    /// Print the derived field equations of a spec.
    Derive {
        /// Spec file path.
        spec: PathBuf,
        /// Which equations to derive.
        #[arg(long, value_enum, default_value_t = Side::El)]
        side: Side,
        /// Output format.
        #[arg(long, value_enum, default_value_t = OutFormat::Text)]
        format: OutFormat,
    },
    /// Evaluate residual blocks of a discrete field against a spec.
    Residual {
        /// Spec file path.
        spec: PathBuf,
        /// Field file path.
        field: PathBuf,
        /// Include boundary nodes (one-sided stencils) in the statistics.
        #[arg(long)]
        include_boundary: bool,
        /// Write a per-node CSV dump to this path.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Integrate the Euler-Lagrange flow of a mechanics model (nx = 1, r = 1).
    Simulate {
        /// Spec file path.
        spec: PathBuf,
        /// Initial fiber coordinates u^A, comma separated (default zeros).
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        u0: Vec<f64>,
        /// Initial velocities y^alpha, comma separated (default zeros).
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        y0: Vec<f64>,
        /// Final time (integration runs from 0).
        #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
        t: f64,
        /// Time step.
        #[arg(long, default_value_t = 1e-3, allow_negative_numbers = true)]
        dt: f64,
        /// Output CSV path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Extra conserved-quantity column NAME=EXPR in (x1, u^A, y^alpha).
        #[arg(long = "current", value_name = "NAME=EXPR")]
        currents: Vec<String>,
    },
    /// List built-in models or export one as a spec file.
    Preset {
        #[command(subcommand)]
        action: PresetCmd,
    },
}

#[derive(Subcommand, Debug)]
enum PresetCmd {
    /// Print one line per preset: name and description.
    List,
    /// Write the named preset to a spec file.
    Export {
        /// Preset name as shown by `preset list`.
        name: String,
        /// Destination path.
        path: PathBuf,
    },
}

/// Which side of the Legendre transform to derive.
#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Side {
    El,
    Hamilton,
    Both,
}

/// Derive output format.
#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum OutFormat {
    Text,
    Latex,
}

/// Failure channel carrying the exit code: `Fail` exits 1, `Usage` exits 2.
#[derive(Debug)]
enum CmdError {
    Fail(String),
    Usage(String),
}

impl From<SpecFileError> for CmdError {
    fn from(e: SpecFileError) -> Self {
        CmdError::Usage(e.to_string())
    }
}

impl From<ModelError> for CmdError {
    fn from(e: ModelError) -> Self {
        CmdError::Fail(e.to_string())
    }
}

impl From<FieldError> for CmdError {
    fn from(e: FieldError) -> Self {
        match &e {
            FieldError::SingularHessianAt { .. }
            | FieldError::NonFiniteState { .. }
            | FieldError::Eval(_)
            | FieldError::Model(_) => CmdError::Fail(e.to_string()),
            _ => CmdError::Usage(e.to_string()),
        }
    }
}

impl From<PresetError> for CmdError {
    fn from(e: PresetError) -> Self {
        match &e {
            PresetError::Unknown(_) | PresetError::BadInput(_) => CmdError::Usage(e.to_string()),
            _ => CmdError::Fail(e.to_string()),
        }
    }
}

fn internal(e: impl std::fmt::Display) -> CmdError {
    CmdError::Fail(e.to_string())
}

/// Parses argv, runs the command, and returns the process exit code.
/// Payload is written to `out`; diagnostics go to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version render to stdout with code 0; usage errors to
            // stderr with the documented code 2.
            let rendered = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{rendered}");
                2
            } else {
                let _ = write!(out, "{rendered}");
                0
            };
        }
    };
    match dispatch(&cli) {
        Ok((payload, code)) => {
            let _ = write!(out, "{payload}");
            code
        }
        Err(CmdError::Fail(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            1
        }
        Err(CmdError::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            2
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(String, i32), CmdError> {
    match &cli.command {
        Command::Validate { spec, points } => cmd_validate(cli, spec, *points),
        Command::Derive { spec, side, format } => cmd_derive(cli, spec, *side, *format),
        Command::Residual {
            spec,
            field,
            include_boundary,
            csv,
        } => cmd_residual(cli, spec, field, *include_boundary, csv.as_deref()),
        Command::Simulate {
            spec,
            u0,
            y0,
            t,
            dt,
            out,
            currents,
        } => cmd_simulate(cli, spec, u0, y0, *t, *dt, out.as_deref(), currents),
        Command::Preset { action } => match action {
            PresetCmd::List => cmd_preset_list(cli),
            PresetCmd::Export { name, path } => cmd_preset_export(name, path),
        },
    }
}

fn cmd_validate(cli: &Cli, spec_path: &Path, points: usize) -> Result<(String, i32), CmdError> {
    let doc = load_spec_doc(spec_path)?;
    let model = doc_to_model(&doc)?;
    let tol = cli.tol.unwrap_or(doc.tolerances.validate);
    let report = model.fib.validate_seeded(points, cli.seed, tol);
    let payload = if cli.json {
        serde_json::to_string_pretty(&report).map_err(internal)? + "\n"
    } else {
        let mut s = format!(
            "spec: {}\npoints: {}\ntol: {:e}\nantisymmetry_max: {:e}\nanchor_max: {:e}\njacobi_max: {:e}\n",
            model.name,
            report.points,
            report.tol,
            report.antisymmetry_max,
            report.anchor_max,
            report.jacobi_max,
        );
        for e in &report.shape_errors {
            s += &format!("shape_error: {e}\n");
        }
        for e in &report.eval_errors {
            s += &format!("eval_error: {e}\n");
        }
        s += &format!("result: {}\n", if report.pass { "PASS" } else { "FAIL" });
        s
    };
    Ok((payload, if report.pass { 0 } else { 1 }))
}

fn cmd_derive(
    cli: &Cli,
    spec_path: &Path,
    side: Side,
    format: OutFormat,
) -> Result<(String, i32), CmdError> {
    let model = load_spec(spec_path)?;
    let want_el = matches!(side, Side::El | Side::Both);
    let want_h = matches!(side, Side::Hamilton | Side::Both);
    // Missing function on a requested side is a failure (exit 1), not usage.
    if want_el {
        model.require_l()?;
    }
    if want_h {
        model.require_h()?;
    }
    let payload = if cli.json {
        derive_json(&model, want_el, want_h)?
    } else {
        match format {
            OutFormat::Text => derive_text(&model, want_el, want_h)?,
            OutFormat::Latex => derive_latex(&model, want_el, want_h)?,
        }
    };
    Ok((payload, 0))
}

/// Equation blocks of one side, each as (label, simplified expression) with
/// 1-based indices matching the printed variable names.
pub fn equation_blocks(
    model: &ModelSpec,
    want_el: bool,
    want_h: bool,
) -> Result<Vec<(String, ScalarExpr)>, ModelError> {
    let fib = &model.fib;
    let mut eqs: Vec<(String, ScalarExpr)> = Vec::new();
    if want_el {
        let adm = admissibility_symbolic(fib);
        for (big_a, row) in adm.iter().enumerate() {
            for (a, e) in row.iter().enumerate() {
                eqs.push((format!("admissibility[{}][{}]", big_a + 1, a + 1), e.clone()));
            }
        }
        let mor = morphism_symbolic(fib);
        for (gamma, per_a) in mor.iter().enumerate() {
            for a in 0..fib.r {
                for b in a + 1..fib.r {
                    eqs.push((
                        format!("morphism[{}][{}][{}]", gamma + 1, a + 1, b + 1),
                        per_a[a][b].clone(),
                    ));
                }
            }
        }
        let el = el_symbolic(model)?;
        for (alpha, e) in el.iter().enumerate() {
            eqs.push((format!("euler_lagrange[{}]", alpha + 1), e.clone()));
        }
    }
    if want_h {
        let sys = hamilton_symbolic(model)?;
        for (big_a, row) in sys.admissibility.iter().enumerate() {
            for (a, e) in row.iter().enumerate() {
                eqs.push((
                    format!("hamilton_admissibility[{}][{}]", big_a + 1, a + 1),
                    e.clone(),
                ));
            }
        }
        for (gamma, per_a) in sys.compatibility.iter().enumerate() {
            for a in 0..fib.r {
                for b in a + 1..fib.r {
                    eqs.push((
                        format!("hamilton_compatibility[{}][{}][{}]", gamma + 1, a + 1, b + 1),
                        per_a[a][b].clone(),
                    ));
                }
            }
        }
        for (alpha, e) in sys.momentum.iter().enumerate() {
            eqs.push((format!("hamilton_momentum[{}]", alpha + 1), e.clone()));
        }
    }
    Ok(eqs
        .into_iter()
        .map(|(label, e)| (label, e.simplify()))
        .collect())
}

/// Canonical text listing of the derived equations, one `label: 0 = expr`
/// line per block entry.
pub fn derive_text(model: &ModelSpec, want_el: bool, want_h: bool) -> Result<String, ModelError> {
    let mut s = format!("model: {}\n", model.name);
    for (label, e) in equation_blocks(model, want_el, want_h)? {
        s += &format!("{label}: 0 = {e}\n");
    }
    Ok(s)
}

/// LaTeX align listing of the derived equations.
pub fn derive_latex(model: &ModelSpec, want_el: bool, want_h: bool) -> Result<String, ModelError> {
    // Index conventions: a,b,c label the horizontal basis, alpha,beta,gamma
    // the vertical basis, i the base coordinates, A the fiber coordinates.
    let mut s = format!(
        "% model: {}\n% indices: a,b,c horizontal basis; alpha,beta,gamma vertical basis; i base; A fiber\n\\begin{{align}}\n",
        model.name
    );
    for (label, e) in equation_blocks(model, want_el, want_h)? {
        s += &format!("  % {label}\n  0 &= {} \\\\\n", latex_expr(&e));
    }
    s.push_str("\\end{align}\n");
    Ok(s)
}

fn derive_json(model: &ModelSpec, want_el: bool, want_h: bool) -> Result<String, ModelError> {
    let mut map = serde_json::Map::new();
    map.insert("model".into(), serde_json::Value::String(model.name.clone()));
    let mut eqs = serde_json::Map::new();
    for (label, e) in equation_blocks(model, want_el, want_h)? {
        eqs.insert(label, serde_json::Value::String(e.to_string()));
    }
    map.insert("equations".into(), serde_json::Value::Object(eqs));
    serde_json::to_string_pretty(&serde_json::Value::Object(map))
        .map(|s| s + "\n")
        .map_err(|e| ModelError::Eval(e.to_string()))
}

fn cmd_residual(
    cli: &Cli,
    spec_path: &Path,
    field_path: &Path,
    include_boundary: bool,
    csv: Option<&Path>,
) -> Result<(String, i32), CmdError> {
    let model = load_spec(spec_path)?;
    let field = load_field(field_path)?;
    field
        .validate_shape(&model.fib)
        .map_err(|e| CmdError::Usage(e.to_string()))?;
    let tol = cli.tol.unwrap_or(DEFAULT_TOL);
    let report = residual_report(&model, &field, tol, include_boundary)?;
    if let Some(path) = csv {
        let dump = residual_csv(&model, &field)?;
        std::fs::write(path, dump).map_err(internal)?;
    }
    let payload = if cli.json {
        serde_json::to_string_pretty(&report).map_err(internal)? + "\n"
    } else {
        let mut s = format!(
            "spec: {}\nnodes_evaluated: {}\ninclude_boundary: {}\ntol: {:e}\n",
            model.name, report.nodes_evaluated, report.include_boundary, report.tol
        );
        for b in &report.blocks {
            s += &format!("{}: max {:e} rms {:e}\n", b.name, b.max, b.rms);
        }
        s += &format!("result: {}\n", if report.pass { "PASS" } else { "FAIL" });
        s
    };
    Ok((payload, if report.pass { 0 } else { 1 }))
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    cli: &Cli,
    spec_path: &Path,
    u0: &[f64],
    y0: &[f64],
    t: f64,
    dt: f64,
    out: Option<&Path>,
    currents: &[String],
) -> Result<(String, i32), CmdError> {
    let model = load_spec(spec_path)?;
    if !(t > 0.0) || !(dt > 0.0) {
        return Err(CmdError::Usage("--t and --dt must be positive".into()));
    }
    let u0 = if u0.is_empty() && model.fib.nu > 0 {
        vec![0.0; model.fib.nu]
    } else {
        u0.to_vec()
    };
    let y0 = if y0.is_empty() && model.fib.k > 0 {
        vec![0.0; model.fib.k]
    } else {
        y0.to_vec()
    };
    let currents = parse_currents(currents, &model)?;
    let traj = integrate_1d(&model, &u0, &y0, (0.0, t), dt)?;
    let csv = trajectory_csv(&model, &traj, &currents)?;
    match out {
        Some(path) => {
            std::fs::write(path, &csv).map_err(internal)?;
            let drift = traj
                .energy
                .iter()
                .map(|e| (e - traj.energy[0]).abs())
                .fold(0.0f64, f64::max);
            let payload = if cli.json {
                serde_json::to_string_pretty(&serde_json::json!({
                    "rows": traj.t.len(),
                    "out": path.display().to_string(),
                    "energy_drift_max": drift,
                }))
                .map_err(internal)?
                    + "\n"
            } else {
                format!(
                    "wrote {} ({} rows)\nenergy_drift_max: {:e}\n",
                    path.display(),
                    traj.t.len(),
                    drift
                )
            };
            Ok((payload, 0))
        }
        None => Ok((csv, 0)),
    }
}

/// Parses repeated `--current NAME=EXPR` flags; a bare expression gets the
/// name `current<n>`. Variables must be trajectory coordinates.
fn parse_currents(
    args: &[String],
    model: &ModelSpec,
) -> Result<Vec<(String, ScalarExpr)>, CmdError> {
    let fib = &model.fib;
    let mut allowed: BTreeSet<String> = BTreeSet::new();
    allowed.insert(names::x(0));
    for big_a in 0..fib.nu {
        allowed.insert(names::u(big_a));
    }
    for alpha in 0..fib.k {
        allowed.insert(names::y(alpha, 0));
    }
    args.iter()
        .enumerate()
        .map(|(idx, raw)| {
            let (name, text) = match raw.split_once('=') {
                Some((n, e)) => (n.trim().to_string(), e),
                None => (format!("current{}", idx + 1), raw.as_str()),
            };
            let expr = parse(text)
                .map_err(|e| CmdError::Usage(format!("--current {name}: {e}")))?;
            for v in expr.free_vars() {
                if !allowed.contains(&v) {
                    return Err(CmdError::Usage(format!(
                        "--current {name}: unknown variable {v}"
                    )));
                }
            }
            Ok((name, expr))
        })
        .collect()
}

fn cmd_preset_list(cli: &Cli) -> Result<(String, i32), CmdError> {
    if cli.json {
        let items: Vec<serde_json::Value> = PRESET_NAMES
            .iter()
            .map(|name| {
                let p = preset_by_name(name)?;
                Ok(serde_json::json!({ "name": p.name, "doc": p.doc }))
            })
            .collect::<Result<_, CmdError>>()?;
        Ok((
            serde_json::to_string_pretty(&items).map_err(internal)? + "\n",
            0,
        ))
    } else {
        let mut s = String::new();
        for name in PRESET_NAMES {
            let p = preset_by_name(name)?;
            s += &format!("{}: {}\n", p.name, p.doc);
        }
        Ok((s, 0))
    }
}

fn cmd_preset_export(name: &str, path: &Path) -> Result<(String, i32), CmdError> {
    let preset = preset_by_name(name)?;
    save_spec(&preset.model, path)?;
    Ok((format!("wrote {}\n", path.display()), 0))
}

/// Renders an expression as LaTeX with coordinate-name translation.
pub fn latex_expr(e: &ScalarExpr) -> String {
    e.print_latex_with(&latex_var)
}

/// Translates generated coordinate names into indexed LaTeX symbols; a `|i`
/// subscript marks differentiation in the base direction i.
fn latex_var(name: &str) -> String {
    if name == names::MU0 {
        return "\\mu_{0}".into();
    }
    let parts: Vec<&str> = name.split('_').collect();
    let digits_ok = parts[1..]
        .iter()
        .all(|p| !p.is_empty() && p.chars().all(|c| c.is_ascii_digit()));
    if digits_ok {
        if let Some(pos) = parts[0].find(|c: char| c.is_ascii_digit()) {
            let (head, num) = parts[0].split_at(pos);
            if num.chars().all(|c| c.is_ascii_digit()) {
                match (head, parts.len()) {
                    ("x", 1) => return format!("x^{{{num}}}"),
                    ("u", 1) => return format!("u^{{{num}}}"),
                    ("y", 2) => return format!("y^{{{num}}}_{{{}}}", parts[1]),
                    ("yd", 3) => {
                        return format!("y^{{{num}}}_{{{}|{}}}", parts[1], parts[2])
                    }
                    ("ud", 2) => return format!("u^{{{num}}}_{{|{}}}", parts[1]),
                    ("mu", 2) => return format!("\\mu^{{{}}}_{{{num}}}", parts[1]),
                    ("mud", 3) => {
                        return format!("\\mu^{{{}}}_{{{num}|{}}}", parts[1], parts[2])
                    }
                    _ => {}
                }
            }
        }
    }
    format!("\\mathrm{{{}}}", name.replace('_', "\\_"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;
    use std::sync::atomic::{AtomicUsize, Ordering};

    static COUNTER: AtomicUsize = AtomicUsize::new(0);

    fn temp_path(tag: &str) -> PathBuf {
        let n = COUNTER.fetch_add(1, Ordering::SeqCst);
        std::env::temp_dir().join(format!(
            "liefield-cli-{}-{}-{}",
            std::process::id(),
            n,
            tag
        ))
    }

    fn run_cli(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let mut argv = vec!["liefield"];
        argv.extend_from_slice(args);
        let code = run(argv, &mut out, &mut err);
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn preset_list_and_export_validate_roundtrip() {
        let (code, out, err) = run_cli(&["preset", "list"]);
        assert_eq!(code, 0);
        assert!(err.is_empty());
        for name in PRESET_NAMES {
            assert!(out.contains(name), "missing {name} in list");
        }

        let path = temp_path("so3.json");
        let path_str = path.to_str().unwrap();
        let (code, out, _) = run_cli(&["preset", "export", "so3", path_str]);
        assert_eq!(code, 0);
        assert!(out.contains("wrote"));

        let (code, out, _) = run_cli(&["validate", path_str]);
        assert_eq!(code, 0, "validate failed: {out}");
        assert!(out.contains("result: PASS"));
        assert!(out.contains("jacobi_max"));

        let (code, out, _) = run_cli(&["--json", "validate", path_str]);
        assert_eq!(code, 0);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["pass"], serde_json::Value::Bool(true));

        let (code, _, err) = run_cli(&["preset", "export", "nope", path_str]);
        assert_eq!(code, 2);
        assert!(err.contains("nope"));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn derive_sides_and_missing_function_exit_codes() {
        let path = temp_path("ps.json");
        let path_str = path.to_str().unwrap();
        let (code, _, _) = run_cli(&["preset", "export", "poisson-sigma", path_str]);
        assert_eq!(code, 0);

        let (code, out, _) = run_cli(&["derive", path_str]);
        assert_eq!(code, 0);
        assert!(out.contains("model: poisson-sigma"));
        assert!(out.contains("admissibility[1][1]: 0 ="));
        assert!(out.contains("morphism[1][1][2]: 0 ="));
        assert!(out.contains("euler_lagrange[1]: 0 ="));

        // No Hamiltonian on this preset: requested side missing is exit 1.
        let (code, _, err) = run_cli(&["derive", path_str, "--side", "hamilton"]);
        assert_eq!(code, 1);
        assert!(err.contains("hamiltonian"));

        let (code, out, _) = run_cli(&["--json", "derive", path_str]);
        assert_eq!(code, 0);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert!(v["equations"]["euler_lagrange[1]"].is_string());
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn derive_latex_translates_jet_names() {
        let path = temp_path("std.json");
        let path_str = path.to_str().unwrap();
        let (code, _, _) = run_cli(&["preset", "export", "standard-connection", path_str]);
        assert_eq!(code, 0);
        let (code, out, _) = run_cli(&["derive", path_str, "--format", "latex"]);
        assert_eq!(code, 0);
        assert!(out.contains("\\begin{align}"));
        assert!(out.contains("y^{1}_{1|1}"), "missing yd translation: {out}");
        assert!(out.contains("u^{1}"));
        std::fs::remove_file(&path).ok();

        assert_eq!(latex_var("yd2_1_3"), "y^{2}_{1|3}");
        assert_eq!(latex_var("mu2_1"), "\\mu^{1}_{2}");
        assert_eq!(latex_var("mud2_1_1"), "\\mu^{1}_{2|1}");
        assert_eq!(latex_var("ud1_2"), "u^{1}_{|2}");
        assert_eq!(latex_var("mu0"), "\\mu_{0}");
        assert_eq!(latex_var("other"), "\\mathrm{other}");
        let e = parse("(y1_1 + 2) * u1 / 3").unwrap();
        assert_eq!(
            latex_expr(&e),
            "\\frac{\\left(y^{1}_{1} + 2\\right) \\, u^{1}}{3}"
        );
    }

    #[test]
    fn malformed_and_invalid_specs_exit_2() {
        let path = temp_path("bad.json");
        std::fs::write(&path, "{ not json").unwrap();
        let (code, out, err) = run_cli(&["validate", path.to_str().unwrap()]);
        assert_eq!(code, 2);
        assert!(out.is_empty());
        assert!(!err.is_empty());
        std::fs::remove_file(&path).ok();

        let (code, _, _) = run_cli(&["validate", "/nonexistent/nope.json"]);
        assert_eq!(code, 2);

        // Unknown subcommand is a clap usage error: exit 2, stderr only.
        let (code, out, err) = run_cli(&["frobnicate"]);
        assert_eq!(code, 2);
        assert!(out.is_empty());
        assert!(!err.is_empty());
    }

    #[test]
    fn simulate_oscillator_csv_and_currents() {
        let path = temp_path("osc.json");
        let path_str = path.to_str().unwrap();
        let (code, _, _) = run_cli(&["preset", "export", "oscillator", path_str]);
        assert_eq!(code, 0);

        let (code, out, _) = run_cli(&[
            "simulate", path_str, "--u0", "1", "--y0", "0", "--t", "1", "--dt", "0.01",
            "--current", "p=y1_1",
        ]);
        assert_eq!(code, 0);
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], "t,x1,u1,y1_1,energy,energy_drift,p");
        assert_eq!(lines.len(), 102);

        let out_path = temp_path("osc.csv");
        let (code, summary, _) = run_cli(&[
            "simulate", path_str, "--u0", "1", "--y0", "0", "--t", "1", "--dt", "0.01",
            "--out", out_path.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        assert!(summary.contains("energy_drift_max"));
        assert!(std::fs::read_to_string(&out_path).unwrap().starts_with("t,x1,u1"));
        std::fs::remove_file(&out_path).ok();

        let (code, _, err) = run_cli(&["simulate", path_str, "--current", "q=zeta"]);
        assert_eq!(code, 2);
        assert!(err.contains("zeta"));

        let (code, _, err) = run_cli(&["simulate", path_str, "--dt", "-0.5"]);
        assert_eq!(code, 2);
        assert!(err.contains("positive"));
        std::fs::remove_file(&path).ok();
    }
}
