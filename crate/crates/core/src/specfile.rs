//! JSON documents for models and discretized fields.
//!
//! A spec file carries the structure functions as nested arrays of expression
//! strings together with the model functions; a field file carries the grid
//! header plus row-major flattened value arrays. Loading validates shapes and
//! rejects expressions referencing undeclared variables, reporting the array
//! slot in the error.

use crate::algebroid::FibrationSpec;
use crate::expr::{parse, ScalarExpr};
use crate::fields::{FieldConfiguration, FieldError, Grid, GridAxis};
use crate::lagrangian::ModelSpec;
use crate::names;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;
use thiserror::Error;

/// Errors from loading or saving spec and field documents.
#[derive(Debug, Error)]
pub enum SpecFileError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{location}: {message}")]
    Invalid { location: String, message: String },
    #[error(transparent)]
    Field(#[from] FieldError),
}

fn invalid(location: impl Into<String>, message: impl Into<String>) -> SpecFileError {
    SpecFileError::Invalid {
        location: location.into(),
        message: message.into(),
    }
}

/// Dimension block of a spec file.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DimsDoc {
    pub nx: usize,
    pub nu: usize,
    pub r: usize,
    pub k: usize,
}

/// Tolerance block of a spec file.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Tolerances {
    pub validate: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { validate: 1e-10 }
    }
}

/// JSON document for a model: structure functions as expression strings.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpecFileDoc {
    pub name: String,
    pub dims: DimsDoc,
    #[serde(rename = "rho_F")]
    pub rho_f: Vec<Vec<String>>,
    #[serde(rename = "rho_Ea")]
    pub rho_ea: Vec<Vec<String>>,
    #[serde(rename = "rho_Ealpha")]
    pub rho_ealpha: Vec<Vec<String>>,
    #[serde(rename = "C_bas")]
    pub c_bas: Vec<Vec<Vec<String>>>,
    #[serde(rename = "C_mix0")]
    pub c_mix0: Vec<Vec<Vec<String>>>,
    #[serde(rename = "C_mix1")]
    pub c_mix1: Vec<Vec<Vec<String>>>,
    #[serde(rename = "C_vert")]
    pub c_vert: Vec<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lagrangian: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hamiltonian: Option<String>,
    pub sample_box: Vec<(f64, f64)>,
    #[serde(default)]
    pub tolerances: Tolerances,
}

fn print2(arr: &[Vec<ScalarExpr>]) -> Vec<Vec<String>> {
    arr.iter()
        .map(|row| row.iter().map(|e| e.to_string()).collect())
        .collect()
}

fn print3(arr: &[Vec<Vec<ScalarExpr>>]) -> Vec<Vec<Vec<String>>> {
    arr.iter().map(|block| print2(block)).collect()
}

/// Renders a model as a canonical spec document.
pub fn model_to_doc(model: &ModelSpec) -> SpecFileDoc {
    let fib = &model.fib;
    SpecFileDoc {
        name: model.name.clone(),
        dims: DimsDoc {
            nx: fib.nx,
            nu: fib.nu,
            r: fib.r,
            k: fib.k,
        },
        rho_f: print2(&fib.rho_f),
        rho_ea: print2(&fib.rho_ea),
        rho_ealpha: print2(&fib.rho_ealpha),
        c_bas: print3(&fib.c_bas),
        c_mix0: print3(&fib.c_mix0),
        c_mix1: print3(&fib.c_mix1),
        c_vert: print3(&fib.c_vert),
        lagrangian: model.lagrangian.as_ref().map(|e| e.to_string()),
        hamiltonian: model.hamiltonian.as_ref().map(|e| e.to_string()),
        sample_box: fib.sample_box.clone(),
        tolerances: Tolerances::default(),
    }
}

fn parse_slot(
    text: &str,
    allowed: &BTreeSet<String>,
    location: String,
) -> Result<ScalarExpr, SpecFileError> {
    let expr =
        parse(text).map_err(|e| invalid(location.clone(), e.to_string()))?;
    for v in expr.free_vars() {
        if !allowed.contains(&v) {
            return Err(invalid(
                location,
                format!("references undeclared variable `{v}`"),
            ));
        }
    }
    Ok(expr)
}

fn parse2(
    arr: &[Vec<String>],
    allowed: &BTreeSet<String>,
    name: &str,
) -> Result<Vec<Vec<ScalarExpr>>, SpecFileError> {
    arr.iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, text)| parse_slot(text, allowed, format!("{name}[{i}][{j}]")))
                .collect()
        })
        .collect()
}

fn parse3(
    arr: &[Vec<Vec<String>>],
    allowed: &BTreeSet<String>,
    name: &str,
) -> Result<Vec<Vec<Vec<ScalarExpr>>>, SpecFileError> {
    arr.iter()
        .enumerate()
        .map(|(i, block)| {
            block
                .iter()
                .enumerate()
                .map(|(j, row)| {
                    row.iter()
                        .enumerate()
                        .map(|(l, text)| {
                            parse_slot(text, allowed, format!("{name}[{i}][{j}][{l}]"))
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Parses and validates a spec document into a model.
///
/// Variable scopes: rho_F in x only; other structure functions in (x, u);
/// the Lagrangian in (x, u, y); the Hamiltonian in (x, u, mu).
pub fn doc_to_model(doc: &SpecFileDoc) -> Result<ModelSpec, SpecFileError> {
    let DimsDoc { nx, nu, r, k } = doc.dims;
    let x_only: BTreeSet<String> = (0..nx).map(names::x).collect();
    let mut base = x_only.clone();
    base.extend((0..nu).map(names::u));
    let mut jet = base.clone();
    let mut momentum = base.clone();
    for alpha in 0..k {
        for a in 0..r {
            jet.insert(names::y(alpha, a));
            momentum.insert(names::mu(alpha, a));
        }
    }
    let mut fib = FibrationSpec::new_zero(nx, nu, r, k);
    fib.rho_f = parse2(&doc.rho_f, &x_only, "rho_F")?;
    fib.rho_ea = parse2(&doc.rho_ea, &base, "rho_Ea")?;
    fib.rho_ealpha = parse2(&doc.rho_ealpha, &base, "rho_Ealpha")?;
    fib.c_bas = parse3(&doc.c_bas, &base, "C_bas")?;
    fib.c_mix0 = parse3(&doc.c_mix0, &base, "C_mix0")?;
    fib.c_mix1 = parse3(&doc.c_mix1, &base, "C_mix1")?;
    fib.c_vert = parse3(&doc.c_vert, &base, "C_vert")?;
    fib.sample_box = doc.sample_box.clone();
    let shape = fib.shape_errors();
    if let Some(first) = shape.first() {
        return Err(invalid("dims", first.clone()));
    }
    let lagrangian = doc
        .lagrangian
        .as_ref()
        .map(|text| parse_slot(text, &jet, "lagrangian".into()))
        .transpose()?;
    let hamiltonian = doc
        .hamiltonian
        .as_ref()
        .map(|text| parse_slot(text, &momentum, "hamiltonian".into()))
        .transpose()?;
    Ok(ModelSpec {
        name: doc.name.clone(),
        fib,
        lagrangian,
        hamiltonian,
    })
}

/// Canonical pretty-printed JSON for a model.
pub fn spec_to_string(model: &ModelSpec) -> Result<String, SpecFileError> {
    let mut text = serde_json::to_string_pretty(&model_to_doc(model))?;
    text.push('\n');
    Ok(text)
}

/// Parses a model from JSON text.
pub fn spec_from_str(text: &str) -> Result<ModelSpec, SpecFileError> {
    let doc: SpecFileDoc = serde_json::from_str(text)?;
    doc_to_model(&doc)
}

pub fn load_spec(path: impl AsRef<Path>) -> Result<ModelSpec, SpecFileError> {
    spec_from_str(&std::fs::read_to_string(path)?)
}

/// Reads the raw spec document, keeping metadata such as tolerances.
pub fn load_spec_doc(path: impl AsRef<Path>) -> Result<SpecFileDoc, SpecFileError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

pub fn save_spec(model: &ModelSpec, path: impl AsRef<Path>) -> Result<(), SpecFileError> {
    Ok(std::fs::write(path, spec_to_string(model)?)?)
}

/// JSON document for a field: grid header plus flattened arrays.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FieldFileDoc {
    pub grid: Vec<GridAxis>,
    /// u[A][node], row-major with axis 0 slowest.
    pub u: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<Vec<Vec<f64>>>>,
}

/// Parses a field configuration (grid invariants enforced; shapes are
/// checked against a model by `FieldConfiguration::validate_shape`).
pub fn field_from_str(text: &str) -> Result<FieldConfiguration, SpecFileError> {
    let doc: FieldFileDoc = serde_json::from_str(text)?;
    Ok(FieldConfiguration {
        grid: Grid::new(doc.grid)?,
        u: doc.u,
        y: doc.y,
        mu: doc.mu,
    })
}

/// Canonical pretty-printed JSON for a field.
pub fn field_to_string(field: &FieldConfiguration) -> Result<String, SpecFileError> {
    let doc = FieldFileDoc {
        grid: field.grid.axes.clone(),
        u: field.u.clone(),
        y: field.y.clone(),
        mu: field.mu.clone(),
    };
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    Ok(text)
}

pub fn load_field(path: impl AsRef<Path>) -> Result<FieldConfiguration, SpecFileError> {
    field_from_str(&std::fs::read_to_string(path)?)
}

pub fn save_field(field: &FieldConfiguration, path: impl AsRef<Path>) -> Result<(), SpecFileError> {
    Ok(std::fs::write(path, field_to_string(field)?)?)
}
