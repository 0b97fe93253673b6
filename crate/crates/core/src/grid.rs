//! Axis-aligned, cell-centred structured grids in two or three dimensions.
//!
//! Cells are numbered lexicographically with x fastest. Two-dimensional grids
//! carry a unit out-of-plane thickness, so cell "volumes" are areas and face
//! "areas" are edge lengths.

use std::fmt;
use std::ops::Range;

use crate::error::{Error, Result};

/// Lower or upper end of an axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Lo,
    Hi,
}

impl Side {
    pub fn sign(self) -> isize {
        match self {
            Side::Lo => -1,
            Side::Hi => 1,
        }
    }
}

/// One of the `2·d` sides of the box, e.g. `y+`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridSide {
    pub axis: usize,
    pub side: Side,
}

impl GridSide {
    pub fn new(axis: usize, side: Side) -> Self {
        Self { axis, side }
    }

    /// Dense index in `0..2·d`.
    pub fn id(self) -> usize {
        2 * self.axis
            + match self.side {
                Side::Lo => 0,
                Side::Hi => 1,
            }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let mut chars = s.chars();
        let axis = match chars.next()? {
            'x' => 0,
            'y' => 1,
            'z' => 2,
            _ => return None,
        };
        let side = match chars.next()? {
            '-' => Side::Lo,
            '+' => Side::Hi,
            _ => return None,
        };
        chars.next().is_none().then_some(Self { axis, side })
    }
}

impl fmt::Display for GridSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let axis = ['x', 'y', 'z'][self.axis];
        let sign = match self.side {
            Side::Lo => '-',
            Side::Hi => '+',
        };
        write!(f, "{axis}{sign}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryKind {
    /// Fixed temperature.
    Dirichlet(f64),
    /// Prescribed outward-normal flux into the domain; zero is an insulated wall.
    Neumann(f64),
}

/// A named set of boundary faces on one side of the box with a single
/// boundary condition.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryPatch {
    pub name: String,
    pub side: GridSide,
    /// Cell-index ranges along the tangential axes, in increasing axis order.
    /// `None` covers the whole side.
    pub region: Option<Vec<Range<usize>>>,
    pub kind: BoundaryKind,
}

impl BoundaryPatch {
    pub fn whole_side(name: impl Into<String>, side: GridSide, kind: BoundaryKind) -> Self {
        Self {
            name: name.into(),
            side,
            region: None,
            kind,
        }
    }

    pub fn is_dirichlet(&self) -> bool {
        matches!(self.kind, BoundaryKind::Dirichlet(_))
    }
}

/// Range of cells along an axis whose centres fall in `[lo, hi]`.
pub fn cells_within(n: usize, extent: f64, lo: f64, hi: f64) -> Range<usize> {
    let h = extent / n as f64;
    let start = (0..n).find(|&i| (i as f64 + 0.5) * h >= lo).unwrap_or(n);
    let end = (start..n)
        .find(|&i| (i as f64 + 0.5) * h > hi)
        .unwrap_or(n);
    start..end
}

/// Neighbour of a cell across one of its faces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Neighbor {
    Cell { index: usize, axis: usize, side: Side },
    Boundary { patch: usize, axis: usize, side: Side },
}

#[derive(Debug, Clone)]
pub struct StructuredGrid {
    ndim: usize,
    dims: [usize; 3],
    extents: [f64; 3],
    spacing: [f64; 3],
    strides: [usize; 3],
    cell_volume: f64,
    face_area: [f64; 3],
    patches: Vec<BoundaryPatch>,
    /// Patch id of every boundary face, one table per side.
    face_patch: Vec<Vec<u32>>,
}

impl StructuredGrid {
    /// Builds a grid and validates that `patches` partition the boundary.
    pub fn new(dims: &[usize], extents: &[f64], patches: Vec<BoundaryPatch>) -> Result<Self> {
        let ndim = dims.len();
        if !(2..=3).contains(&ndim) || extents.len() != ndim {
            return Err(Error::Config(format!(
                "grid needs 2 or 3 axes with matching extents, got dims {dims:?} and extents {extents:?}"
            )));
        }
        if let Some(a) = dims.iter().position(|&n| n == 0) {
            return Err(Error::Config(format!("grid dimension {a} must be positive")));
        }
        if let Some(a) = extents.iter().position(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(Error::Config(format!(
                "grid extent {a} must be positive and finite, got {}",
                extents[a]
            )));
        }

        let mut d = [1usize; 3];
        let mut e = [1.0f64; 3];
        d[..ndim].copy_from_slice(dims);
        e[..ndim].copy_from_slice(extents);
        let mut spacing = [1.0; 3];
        for a in 0..ndim {
            spacing[a] = e[a] / d[a] as f64;
        }
        let cell_volume: f64 = spacing[..ndim].iter().product();
        let mut face_area = [0.0; 3];
        for a in 0..ndim {
            face_area[a] = cell_volume / spacing[a];
        }
        let strides = [1, d[0], d[0] * d[1]];

        let mut grid = Self {
            ndim,
            dims: d,
            extents: e,
            spacing,
            strides,
            cell_volume,
            face_area,
            patches: Vec::new(),
            face_patch: Vec::new(),
        };
        grid.install_patches(patches)?;
        Ok(grid)
    }

    fn install_patches(&mut self, patches: Vec<BoundaryPatch>) -> Result<()> {
        const UNSET: u32 = u32::MAX;
        let mut tables: Vec<Vec<u32>> = (0..2 * self.ndim)
            .map(|id| vec![UNSET; self.side_len(id / 2)])
            .collect();

        for (pid, patch) in patches.iter().enumerate() {
            let side = patch.side;
            if side.axis >= self.ndim {
                return Err(Error::Config(format!(
                    "patch '{}' is on side {side} of a {}D grid",
                    patch.name, self.ndim
                )));
            }
            let tangential = self.tangential_axes(side.axis);
            let ranges: Vec<Range<usize>> = match &patch.region {
                None => tangential.iter().map(|&a| 0..self.dims[a]).collect(),
                Some(r) => {
                    if r.len() != tangential.len() {
                        return Err(Error::Config(format!(
                            "patch '{}' needs {} tangential ranges, got {}",
                            patch.name,
                            tangential.len(),
                            r.len()
                        )));
                    }
                    for (range, &a) in r.iter().zip(&tangential) {
                        if range.start >= range.end || range.end > self.dims[a] {
                            return Err(Error::Config(format!(
                                "patch '{}' has empty or out-of-range region {range:?} on axis {a}",
                                patch.name
                            )));
                        }
                    }
                    r.clone()
                }
            };
            let table = &mut tables[side.id()];
            let (r0, r1) = match ranges.as_slice() {
                [r0] => (r0.clone(), 0..1),
                [r0, r1] => (r0.clone(), r1.clone()),
                _ => unreachable!(),
            };
            let n0 = self.dims[tangential[0]];
            for j in r1 {
                for i in r0.clone() {
                    let slot = &mut table[i + n0 * j];
                    if *slot != UNSET {
                        return Err(Error::Config(format!(
                            "patches '{}' and '{}' overlap on side {side}",
                            patches[*slot as usize].name, patch.name
                        )));
                    }
                    *slot = pid as u32;
                }
            }
        }

        for (id, table) in tables.iter().enumerate() {
            let missing = table.iter().filter(|&&p| p == UNSET).count();
            if missing > 0 {
                let side = GridSide::new(id / 2, if id % 2 == 0 { Side::Lo } else { Side::Hi });
                return Err(Error::Config(format!(
                    "{missing} boundary faces on side {side} are not covered by any patch"
                )));
            }
        }
        self.patches = patches;
        self.face_patch = tables;
        Ok(())
    }

    fn tangential_axes(&self, axis: usize) -> Vec<usize> {
        (0..self.ndim).filter(|&a| a != axis).collect()
    }

    fn side_len(&self, axis: usize) -> usize {
        self.tangential_axes(axis).iter().map(|&a| self.dims[a]).product()
    }

    pub fn ndim(&self) -> usize {
        self.ndim
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims[..self.ndim]
    }

    pub fn extents(&self) -> &[f64] {
        &self.extents[..self.ndim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.ndim]
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn face_area(&self, axis: usize) -> f64 {
        self.face_area[axis]
    }

    /// Total domain measure `|Ω|`.
    pub fn domain_volume(&self) -> f64 {
        self.cell_volume * self.num_cells() as f64
    }

    pub fn num_cells(&self) -> usize {
        self.dims[..self.ndim].iter().product()
    }

    pub fn patches(&self) -> &[BoundaryPatch] {
        &self.patches
    }

    pub fn has_dirichlet(&self) -> bool {
        self.patches.iter().any(BoundaryPatch::is_dirichlet)
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    pub fn index(&self, coords: [usize; 3]) -> usize {
        coords[0] + self.strides[1] * coords[1] + self.strides[2] * coords[2]
    }

    pub fn coords(&self, cell: usize) -> [usize; 3] {
        let x = cell % self.dims[0];
        let y = (cell / self.dims[0]) % self.dims[1];
        let z = cell / (self.dims[0] * self.dims[1]);
        [x, y, z]
    }

    /// Cell centre in physical coordinates.
    pub fn center(&self, cell: usize) -> [f64; 3] {
        let c = self.coords(cell);
        let mut p = [0.0; 3];
        for a in 0..self.ndim {
            p[a] = (c[a] as f64 + 0.5) * self.spacing[a];
        }
        p
    }

    /// Patch owning the boundary face of the cell at `coords` on `side`.
    pub fn boundary_patch(&self, side: GridSide, coords: [usize; 3]) -> usize {
        let tangential = self.tangential_axes(side.axis);
        let slot = match tangential.as_slice() {
            [a] => coords[*a],
            [a, b] => coords[*a] + self.dims[*a] * coords[*b],
            _ => unreachable!(),
        };
        self.face_patch[side.id()][slot] as usize
    }

    /// All `2·d` neighbours of `cell`: adjacent cells, or the boundary patch
    /// owning the face.
    pub fn neighbors(&self, cell: usize) -> Result<Vec<Neighbor>> {
        if cell >= self.num_cells() {
            return Err(Error::Usage(format!(
                "cell {cell} out of range for a grid with {} cells",
                self.num_cells()
            )));
        }
        let coords = self.coords(cell);
        let mut out = Vec::with_capacity(2 * self.ndim);
        for axis in 0..self.ndim {
            for side in [Side::Lo, Side::Hi] {
                let at_edge = match side {
                    Side::Lo => coords[axis] == 0,
                    Side::Hi => coords[axis] + 1 == self.dims[axis],
                };
                if at_edge {
                    let patch = self.boundary_patch(GridSide::new(axis, side), coords);
                    out.push(Neighbor::Boundary { patch, axis, side });
                } else {
                    let index = match side {
                        Side::Lo => cell - self.strides[axis],
                        Side::Hi => cell + self.strides[axis],
                    };
                    out.push(Neighbor::Cell { index, axis, side });
                }
            }
        }
        Ok(out)
    }

    /// Visits every boundary face once as `(cell, side, patch)`.
    pub fn for_each_boundary_face(&self, mut f: impl FnMut(usize, GridSide, usize)) {
        for axis in 0..self.ndim {
            for side in [Side::Lo, Side::Hi] {
                let gs = GridSide::new(axis, side);
                let fixed = match side {
                    Side::Lo => 0,
                    Side::Hi => self.dims[axis] - 1,
                };
                let t = self.tangential_axes(axis);
                let (n0, n1) = (self.dims[t[0]], t.get(1).map_or(1, |&a| self.dims[a]));
                let table = &self.face_patch[gs.id()];
                for j in 0..n1 {
                    for i in 0..n0 {
                        let mut c = [0usize; 3];
                        c[axis] = fixed;
                        c[t[0]] = i;
                        if let Some(&b) = t.get(1) {
                            c[b] = j;
                        }
                        f(self.index(c), gs, table[i + n0 * j] as usize);
                    }
                }
            }
        }
    }
}
