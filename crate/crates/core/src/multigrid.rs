//! Aggregation multigrid on structured grids, used as a CG preconditioner.
//!
//! Each coarsening merges `2^d` cells into one (a trailing odd cell along an
//! axis forms its own aggregate). Restriction sums over aggregates and
//! prolongation injects, so coarse operators are the Galerkin products
//! `R A Rᵀ`. One V-cycle applies one symmetric Gauss-Seidel sweep (forward
//! then backward, lexicographic order) before and after the coarse
//! correction, and solves the coarsest level with a dense Cholesky factor.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::grid::StructuredGrid;
use crate::krylov::Preconditioner;
use crate::sparse::SparseOperator;

pub const COARSEST_SIZE: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TopologyOptions {
    /// Stop coarsening once a level has at most this many cells.
    pub coarsest_size: usize,
    /// Upper bound on the number of levels, fine level included.
    pub max_levels: usize,
}

impl Default for TopologyOptions {
    fn default() -> Self {
        Self {
            coarsest_size: COARSEST_SIZE,
            max_levels: 32,
        }
    }
}

/// Fine-to-coarse aggregation between two consecutive levels.
#[derive(Debug, Clone)]
pub struct Aggregation {
    pub fine_dims: [usize; 3],
    pub coarse_dims: [usize; 3],
    /// Coarse cell of every fine cell.
    pub parent: Vec<usize>,
    /// Fine cells of every coarse cell, in increasing order.
    pub members: Vec<Vec<usize>>,
}

impl Aggregation {
    fn new(fine_dims: [usize; 3]) -> Self {
        let coarse_dims = fine_dims.map(|n| n.div_ceil(2));
        let nf: usize = fine_dims.iter().product();
        let nc: usize = coarse_dims.iter().product();
        let mut parent = Vec::with_capacity(nf);
        let mut members = vec![Vec::new(); nc];
        for z in 0..fine_dims[2] {
            for y in 0..fine_dims[1] {
                for x in 0..fine_dims[0] {
                    let c = x / 2 + coarse_dims[0] * (y / 2 + coarse_dims[1] * (z / 2));
                    members[c].push(parent.len());
                    parent.push(c);
                }
            }
        }
        Self {
            fine_dims,
            coarse_dims,
            parent,
            members,
        }
    }

    pub fn coarse_len(&self) -> usize {
        self.members.len()
    }

    /// `rc = R r`: sum over aggregates.
    pub fn restrict(&self, r: &[f64], rc: &mut [f64]) {
        rc.fill(0.0);
        for (i, &p) in self.parent.iter().enumerate() {
            rc[p] += r[i];
        }
    }

    /// `z += Rᵀ zc`: injection.
    pub fn prolong_add(&self, zc: &[f64], z: &mut [f64]) {
        for (zi, &p) in z.iter_mut().zip(&self.parent) {
            *zi += zc[p];
        }
    }
}

/// Grid hierarchy (aggregation maps only). Depends on the mesh alone, so it
/// is built once per run and reused for every operator.
#[derive(Debug, Clone)]
pub struct MgTopology {
    fine_dims: [usize; 3],
    aggregations: Vec<Aggregation>,
}

impl MgTopology {
    pub fn build(grid: &StructuredGrid) -> Self {
        Self::with_options(grid.dims(), TopologyOptions::default())
    }

    /// Coarsens at least once (when possible), then until a level has at most
    /// `coarsest_size` cells.
    pub fn with_options(dims: &[usize], opts: TopologyOptions) -> Self {
        let mut d = [1usize; 3];
        d[..dims.len()].copy_from_slice(dims);
        let fine_dims = d;
        let mut aggregations = Vec::new();
        loop {
            let n: usize = d.iter().product();
            let levels = aggregations.len() + 1;
            let can_coarsen = d.iter().any(|&k| k > 1);
            let wants = aggregations.is_empty() || n > opts.coarsest_size;
            if !(can_coarsen && wants && levels < opts.max_levels) {
                break;
            }
            let agg = Aggregation::new(d);
            d = agg.coarse_dims;
            aggregations.push(agg);
        }
        Self {
            fine_dims,
            aggregations,
        }
    }

    pub fn num_levels(&self) -> usize {
        self.aggregations.len() + 1
    }

    /// Cells per axis on every level, fine first.
    pub fn level_dims(&self) -> Vec<[usize; 3]> {
        std::iter::once(self.fine_dims)
            .chain(self.aggregations.iter().map(|a| a.coarse_dims))
            .collect()
    }

    pub fn aggregations(&self) -> &[Aggregation] {
        &self.aggregations
    }

    pub fn fine_len(&self) -> usize {
        self.fine_dims.iter().product()
    }
}

/// `R A Rᵀ` for unit-weight aggregation.
pub fn galerkin_product(fine: &SparseOperator, agg: &Aggregation) -> SparseOperator {
    let nc = agg.coarse_len();
    let mut marker = vec![usize::MAX; nc];
    let mut slot = vec![0usize; nc];
    let mut row_offsets = Vec::with_capacity(nc + 1);
    let mut cols = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    row_offsets.push(0);
    let mut row_cols: Vec<usize> = Vec::new();
    let mut row_vals: Vec<f64> = Vec::new();
    for (ci, members) in agg.members.iter().enumerate() {
        row_cols.clear();
        row_vals.clear();
        for &i in members {
            let (c, v) = fine.row(i);
            for (&j, &a) in c.iter().zip(v) {
                let cj = agg.parent[j];
                if marker[cj] != ci {
                    marker[cj] = ci;
                    slot[cj] = row_cols.len();
                    row_cols.push(cj);
                    row_vals.push(a);
                } else {
                    row_vals[slot[cj]] += a;
                }
            }
        }
        let mut order: Vec<usize> = (0..row_cols.len()).collect();
        order.sort_unstable_by_key(|&k| row_cols[k]);
        for k in order {
            cols.push(row_cols[k]);
            values.push(row_vals[k]);
        }
        row_offsets.push(cols.len());
    }
    SparseOperator::from_csr_unchecked(row_offsets, cols, values)
}

pub fn gauss_seidel_forward(op: &SparseOperator, b: &[f64], x: &mut [f64]) {
    for i in 0..op.dim() {
        gs_update(op, b, x, i);
    }
}

pub fn gauss_seidel_backward(op: &SparseOperator, b: &[f64], x: &mut [f64]) {
    for i in (0..op.dim()).rev() {
        gs_update(op, b, x, i);
    }
}

/// Forward sweep followed by a backward sweep.
pub fn symmetric_gauss_seidel(op: &SparseOperator, b: &[f64], x: &mut [f64]) {
    gauss_seidel_forward(op, b, x);
    gauss_seidel_backward(op, b, x);
}

#[inline]
fn gs_update(op: &SparseOperator, b: &[f64], x: &mut [f64], i: usize) {
    let (c, v) = op.row(i);
    let mut acc = b[i];
    let mut diag = 0.0;
    for (&j, &a) in c.iter().zip(v) {
        if j == i {
            diag = a;
        } else {
            acc -= a * x[j];
        }
    }
    x[i] = acc / diag;
}

/// Coarse operators and the coarsest factorization for one fine operator.
pub struct MgLevels {
    coarse: Vec<SparseOperator>,
    coarsest: Cholesky<f64, Dyn>,
}

impl MgLevels {
    pub fn build(topology: &MgTopology, fine: &SparseOperator) -> Result<Self> {
        if fine.dim() != topology.fine_len() {
            return Err(Error::Usage(format!(
                "operator of size {} does not match a topology with {} fine cells",
                fine.dim(),
                topology.fine_len()
            )));
        }
        let mut coarse: Vec<SparseOperator> = Vec::with_capacity(topology.aggregations.len());
        for agg in &topology.aggregations {
            let prev = coarse.last().unwrap_or(fine);
            coarse.push(galerkin_product(prev, agg));
        }
        let last = coarse.last().unwrap_or(fine);
        let n = last.dim();
        let mut dense = DMatrix::zeros(n, n);
        for i in 0..n {
            let (c, v) = last.row(i);
            for (&j, &a) in c.iter().zip(v) {
                dense[(i, j)] = a;
            }
        }
        let coarsest = Cholesky::new(dense).ok_or_else(|| {
            Error::SingularOperator(format!(
                "coarsest multigrid operator ({n} unknowns) is not positive definite"
            ))
        })?;
        Ok(Self { coarse, coarsest })
    }

    pub fn num_levels(&self) -> usize {
        self.coarse.len() + 1
    }

    /// Borrowed preconditioner for the fine operator these levels were built from.
    pub fn with<'a>(&'a self, topology: &'a MgTopology, fine: &'a SparseOperator) -> MgCycle<'a> {
        MgCycle {
            topology,
            fine,
            levels: self,
        }
    }
}

/// One V-cycle as a preconditioner.
#[derive(Clone, Copy)]
pub struct MgCycle<'a> {
    topology: &'a MgTopology,
    fine: &'a SparseOperator,
    levels: &'a MgLevels,
}

impl MgCycle<'_> {
    fn operator(&self, level: usize) -> &SparseOperator {
        if level == 0 {
            self.fine
        } else {
            &self.levels.coarse[level - 1]
        }
    }

    fn cycle(&self, level: usize, r: &[f64], z: &mut [f64]) {
        if level + 1 == self.levels.num_levels() {
            let sol = self.levels.coarsest.solve(&DVector::from_column_slice(r));
            z.copy_from_slice(sol.as_slice());
            return;
        }
        let op = self.operator(level);
        let agg = &self.topology.aggregations[level];
        z.fill(0.0);
        symmetric_gauss_seidel(op, r, z);

        let mut res = vec![0.0; r.len()];
        op.residual(r, z, &mut res);
        let mut rc = vec![0.0; agg.coarse_len()];
        agg.restrict(&res, &mut rc);
        let mut zc = vec![0.0; rc.len()];
        self.cycle(level + 1, &rc, &mut zc);
        agg.prolong_add(&zc, z);

        symmetric_gauss_seidel(op, r, z);
    }
}

impl Preconditioner for MgCycle<'_> {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        self.cycle(0, r, z);
    }
}

/// Multigrid hierarchy of one fine operator: rebuilt whenever the operator
/// changes, while the topology is reused.
pub struct MgHierarchy<'a> {
    topology: &'a MgTopology,
    fine: &'a SparseOperator,
    levels: MgLevels,
}

impl<'a> MgHierarchy<'a> {
    pub fn build(topology: &'a MgTopology, fine: &'a SparseOperator) -> Result<Self> {
        Ok(Self {
            topology,
            fine,
            levels: MgLevels::build(topology, fine)?,
        })
    }

    pub fn num_levels(&self) -> usize {
        self.levels.num_levels()
    }

    pub fn operator(&self, level: usize) -> &SparseOperator {
        if level == 0 {
            self.fine
        } else {
            &self.levels.coarse[level - 1]
        }
    }

    fn cycle_view(&self) -> MgCycle<'_> {
        self.levels.with(self.topology, self.fine)
    }

    /// One V-cycle with zero initial guess: `z ≈ A⁻¹ r`.
    pub fn v_cycle(&self, r: &[f64]) -> Result<Vec<f64>> {
        if r.len() != self.fine.dim() {
            return Err(Error::Usage(format!(
                "V-cycle input of size {} on a hierarchy of size {}",
                r.len(),
                self.fine.dim()
            )));
        }
        let mut z = vec![0.0; r.len()];
        self.cycle_view().cycle(0, r, &mut z);
        Ok(z)
    }
}

impl Preconditioner for MgHierarchy<'_> {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        self.cycle_view().cycle(0, r, z);
    }
}
