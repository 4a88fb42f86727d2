//! Symbolic-numeric engine for classical field theory on Lie algebroid
//! fibrations.
//!
//! The library builds the geometric objects of the variational calculus on a
//! Lie algebroid fibration (structure functions, jet prolongations, Cartan
//! forms, Euler-Lagrange and Hamilton equations) as symbolic expressions, and
//! evaluates them numerically on sampled points, section fields over grids,
//! and time integrations.
//!
//! Module map:
//!
//! * [`expr`]: scalar expression trees (parse / eval / diff / simplify / print).
//! * [`algebroid`]: fibration data (anchors, structure functions) and the
//!   structure-equation validator.
//! * [`exterior`]: sparse exterior algebra over an anchored basis, with the
//!   coordinate-rule differential, contractions, Lie derivatives, pullbacks.
//! * [`jet`]: jet bundle coordinates, total derivatives, contact forms,
//!   holonomy defect, section admissibility and morphism residuals.
//! * [`lagrangian`]: vertical endomorphism, Cartan form, multisymplectic
//!   form, Euler-Lagrange equations, Noether currents.
//! * [`hamiltonian`]: canonical forms on the dual bundle, Hamilton equations,
//!   Legendre transform and its Newton inverse.
//! * [`fields`]: grids, finite differences, residual reports, RK4 time
//!   integration of the mechanical (one base dimension) case.
//! * [`presets`]: built-in model families with frozen expected identities.
//! * [`specfile`]: JSON model and field file formats.
//! * [`cli`]: the `liefield` command line interface.

pub mod algebroid;
pub mod cli;
pub mod expr;
pub mod exterior;
pub mod fields;
pub mod hamiltonian;
pub mod jet;
pub mod lagrangian;
pub mod names;
pub mod presets;
pub mod specfile;
