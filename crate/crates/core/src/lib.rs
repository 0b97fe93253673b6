//! Density-based topology optimization for steady heat conduction on
//! structured grids.
//!
//! The forward (temperature) and adjoint systems share one SPD finite-volume
//! operator per design iteration. They are solved with multigrid-preconditioned
//! conjugate gradients, either to full accuracy or with a single iteration
//! ("one-shot"), and can be served by two independent windowed Galerkin
//! reduced-order models whenever the reduced solution passes the same
//! residual test the Krylov solver uses.
//!
//! Module map:
//!
//! * [`grid`]: cell-centred box grids and boundary patches.
//! * [`assembly`]: SIMP interpolation, diffusion and filter operators.
//! * [`sparse`]: the CSR operator type shared by everything else.
//! * [`krylov`]: preconditioned CG with the `w1` / `w2` stopping measures.
//! * [`multigrid`]: aggregation V-cycle used as the CG preconditioner.
//! * [`rom`]: windowed reduced bases, Galerkin solves, residual assessment.
//! * [`topopt`]: objective, adjoint source, design gradient, filter chain rule, MMA.
//! * [`driver`]: the optimization loop and solver strategies.
//! * [`config`] / [`output`]: run configuration, presets, VTK and CSV writers.

pub mod assembly;
pub mod config;
pub mod vector;
pub mod driver;
pub mod error;
pub mod grid;
pub mod krylov;
pub mod multigrid;
pub mod output;
pub mod rom;
pub mod sparse;
pub mod topopt;

pub use error::{Error, Result};
