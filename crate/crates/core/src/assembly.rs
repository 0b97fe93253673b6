//! Two-point-flux finite-volume discretization of `-div(κ grad T) = Q` and of
//! the Helmholtz density filter, plus SIMP material interpolation.
//!
//! Face conductivities are the arithmetic mean of the two adjacent cells.
//! A Dirichlet face couples the cell centre to the face value over half a
//! cell, contributing `2 κ A / h` to the diagonal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BoundaryKind, StructuredGrid};
use crate::sparse::SparseOperator;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimpParams {
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub penalty: f64,
}

impl SimpParams {
    pub fn new(kappa_min: f64, kappa_max: f64, penalty: f64) -> Result<Self> {
        let p = Self {
            kappa_min,
            kappa_max,
            penalty,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa_min > 0.0 && self.kappa_min < self.kappa_max && self.kappa_max.is_finite()) {
            return Err(Error::Config(format!(
                "SIMP conductivities must satisfy 0 < kappa_min < kappa_max, got {} and {}",
                self.kappa_min, self.kappa_max
            )));
        }
        if !(self.penalty >= 1.0 && self.penalty.is_finite()) {
            return Err(Error::Config(format!(
                "SIMP penalty must be >= 1, got {}",
                self.penalty
            )));
        }
        Ok(())
    }

    pub fn conductivity(&self, rho: f64) -> f64 {
        let rho = rho.clamp(0.0, 1.0);
        self.kappa_min + rho.powf(self.penalty) * (self.kappa_max - self.kappa_min)
    }

    pub fn derivative(&self, rho: f64) -> f64 {
        let rho = rho.clamp(0.0, 1.0);
        self.penalty * rho.powf(self.penalty - 1.0) * (self.kappa_max - self.kappa_min)
    }
}

/// Per-cell conductivity of the filtered density.
pub fn simp_conductivity(rho: &[f64], p: &SimpParams) -> Vec<f64> {
    rho.iter().map(|&r| p.conductivity(r)).collect()
}

/// Per-cell `dκ/dρ̃`.
pub fn simp_derivative(rho: &[f64], p: &SimpParams) -> Vec<f64> {
    rho.iter().map(|&r| p.derivative(r)).collect()
}

/// Filter length from the support radius of the equivalent convolution filter.
pub fn filter_length_from_radius(radius: f64) -> f64 {
    radius / (2.0 * 3f64.sqrt())
}

/// Discrete heat-conduction operator with its boundary right-hand side.
#[derive(Debug, Clone)]
pub struct DiffusionSystem {
    pub operator: SparseOperator,
    /// Dirichlet and Neumann-flux contributions; add the volumetric source
    /// from [`source_rhs`] for the full forward right-hand side.
    pub rhs_bc: Vec<f64>,
}

/// Assembles `A(κ)` and the boundary right-hand side on `grid`.
pub fn assemble_diffusion(grid: &StructuredGrid, kappa: &[f64]) -> Result<DiffusionSystem> {
    let n = grid.num_cells();
    if kappa.len() != n {
        return Err(Error::Usage(format!(
            "conductivity has {} entries for {n} cells",
            kappa.len()
        )));
    }
    if let Some(i) = kappa.iter().position(|&k| !(k > 0.0 && k.is_finite())) {
        return Err(Error::Usage(format!("conductivity must be positive, cell {i} has {}", kappa[i])));
    }
    if !grid.has_dirichlet() {
        return Err(Error::SingularOperator(
            "diffusion operator without any Dirichlet face".into(),
        ));
    }

    let mut coef = [0.0; 3];
    for a in 0..grid.ndim() {
        coef[a] = grid.face_area(a) / grid.spacing()[a];
    }
    let operator = assemble_stencil(grid, |i, j, axis| 0.5 * (kappa[i] + kappa[j]) * coef[axis], |_| 0.0);

    let mut diag_extra = vec![0.0; n];
    let mut rhs_bc = vec![0.0; n];
    let patches = grid.patches();
    grid.for_each_boundary_face(|cell, side, patch| match patches[patch].kind {
        BoundaryKind::Dirichlet(t) => {
            let c = 2.0 * kappa[cell] * coef[side.axis];
            diag_extra[cell] += c;
            rhs_bc[cell] += c * t;
        }
        BoundaryKind::Neumann(q) => rhs_bc[cell] += q * grid.face_area(side.axis),
    });

    let mut operator = operator;
    operator.add_to_diagonal(&diag_extra);
    Ok(DiffusionSystem { operator, rhs_bc })
}

/// Helmholtz filter operator `vol·I + λ² L` with insulated boundaries, where
/// `L` is the unit-conductivity diffusion stencil. Pair with [`filter_rhs`].
pub fn assemble_filter(grid: &StructuredGrid, lambda: f64) -> SparseOperator {
    let mut coef = [0.0; 3];
    let l2 = lambda * lambda;
    for a in 0..grid.ndim() {
        coef[a] = l2 * grid.face_area(a) / grid.spacing()[a];
    }
    let vol = grid.cell_volume();
    assemble_stencil(grid, |_, _, axis| coef[axis], |_| vol)
}

/// Right-hand side of the filter equation for raw density `rho`.
pub fn filter_rhs(grid: &StructuredGrid, rho: &[f64]) -> Vec<f64> {
    let vol = grid.cell_volume();
    rho.iter().map(|r| r * vol).collect()
}

/// Volumetric source integrated over each cell.
pub fn source_rhs(grid: &StructuredGrid, q: &[f64]) -> Vec<f64> {
    let vol = grid.cell_volume();
    q.iter().map(|qi| qi * vol).collect()
}

/// Symmetric nearest-neighbour stencil: off-diagonal `-face(i, j, axis)` per
/// interior face, diagonal `base(i)` plus the sum of the face coefficients.
fn assemble_stencil(
    grid: &StructuredGrid,
    face: impl Fn(usize, usize, usize) -> f64,
    base: impl Fn(usize) -> f64,
) -> SparseOperator {
    let n = grid.num_cells();
    let ndim = grid.ndim();
    let dims = grid.dims();
    let mut row_offsets = Vec::with_capacity(n + 1);
    let mut cols = Vec::with_capacity(n * (2 * ndim + 1));
    let mut values = Vec::with_capacity(n * (2 * ndim + 1));
    row_offsets.push(0);
    for i in 0..n {
        let c = grid.coords(i);
        let mut diag = base(i);
        // Lower neighbours, highest axis first, keep columns sorted.
        for axis in (0..ndim).rev() {
            if c[axis] > 0 {
                let j = i - grid.stride(axis);
                let w = face(i, j, axis);
                cols.push(j);
                values.push(-w);
                diag += w;
            }
        }
        let dpos = values.len();
        cols.push(i);
        values.push(0.0);
        for axis in 0..ndim {
            if c[axis] + 1 < dims[axis] {
                let j = i + grid.stride(axis);
                let w = face(i, j, axis);
                cols.push(j);
                values.push(-w);
                diag += w;
            }
        }
        values[dpos] = diag;
        row_offsets.push(cols.len());
    }
    SparseOperator::from_csr_unchecked(row_offsets, cols, values)
}
