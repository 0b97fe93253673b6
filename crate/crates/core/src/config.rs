//! Run configuration: TOML text with dotted sections, built-in presets and
//! `key=value` overrides.
//!
//! Layers are merged field by field, later layers winning:
//! preset, then the file, then command-line overrides. The merged result
//! must name every required key; the error for a missing key lists all of
//! them at once.
//!
//! ```toml
//! preset = "paper-2d"
//!
//! [grid]
//! dims = [90, 90]
//!
//! [solver]
//! strategy = "MOR_10_MGCG"
//! criterion = "w1"
//! tau_mor = 5e-3
//! ```

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::assembly::{filter_length_from_radius, SimpParams};
use crate::driver::{SolveMode, SolverStrategy};
use crate::error::{Error, Result};
use crate::grid::{cells_within, BoundaryKind, BoundaryPatch, GridSide, StructuredGrid};
use crate::krylov::Criterion;

pub const PRESETS: &[&str] = &["paper-2d", "paper-3d"];

const REQUIRED: &[&str] = &[
    "grid.dims",
    "grid.extents",
    "boundary",
    "material.kappa_min",
    "material.kappa_max",
    "objective.t_ref",
    "optimizer.volume_fraction",
];

/// A boundary patch given in physical coordinates along the tangential axes
/// of its side. Faces whose centres fall inside `[lo, hi]` belong to it.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSpec {
    pub name: String,
    pub side: GridSide,
    /// `None` covers the whole side.
    pub bounds: Option<(Vec<f64>, Vec<f64>)>,
    pub kind: BoundaryKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dims: Vec<usize>,
    pub extents: Vec<f64>,
    /// Explicit patches; boundary faces they leave uncovered are insulated.
    pub boundary: Vec<PatchSpec>,
    pub material: SimpParams,
    /// Uniform volumetric heat source.
    pub source: f64,
    /// Explicit filter length; overrides `filter_radius_cells`.
    pub filter_lambda: Option<f64>,
    /// Filter support radius in cells, converted to a length.
    pub filter_radius_cells: f64,
    pub t_ref: f64,
    pub volume_fraction: f64,
    pub move_limit: f64,
    pub max_iterations: usize,
    pub solver: SolverStrategy,
    /// Write the filtered design every this many iterations; 0 disables.
    pub checkpoint_interval: usize,
}

impl RunConfig {
    /// Parses `text`, layering it over the preset it names (if any).
    pub fn parse(text: &str) -> Result<Self> {
        Self::load(text, None, &[])
    }

    /// `preset` wins over a `preset` key in the text; `overrides` are
    /// `dotted.key=value` strings with TOML values (bare words are strings).
    pub fn load(text: &str, preset: Option<&str>, overrides: &[String]) -> Result<Self> {
        let file: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let preset = preset.map(str::to_owned).or_else(|| file.preset.clone());
        let mut raw = match &preset {
            Some(name) => preset_raw(name)?.merged(file),
            None => file,
        };
        if !overrides.is_empty() {
            raw = apply_overrides(raw, overrides)?;
        }
        raw.resolve()
    }

    pub fn preset(name: &str) -> Result<Self> {
        preset_raw(name)?.resolve()
    }

    /// Full TOML text; parsing it gives back an identical configuration.
    pub fn render(&self) -> String {
        toml::to_string(&self.to_raw()).expect("configuration serializes")
    }

    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        apply_overrides(self.to_raw(), overrides)?.resolve()
    }

    pub fn filter_length(&self) -> f64 {
        self.filter_lambda.unwrap_or_else(|| {
            let h = self.extents[0] / self.dims[0] as f64;
            filter_length_from_radius(self.filter_radius_cells * h)
        })
    }

    /// Grid with the configured patches plus insulated patches over every
    /// face they leave uncovered.
    pub fn build_grid(&self) -> Result<StructuredGrid> {
        let d = self.dims.len();
        let mut patches = Vec::new();
        for p in &self.boundary {
            if p.side.axis >= d {
                return Err(Error::Config(format!(
                    "boundary patch '{}' is on side {} of a {d}D grid",
                    p.name, p.side
                )));
            }
            let region = match &p.bounds {
                None => None,
                Some((lo, hi)) => {
                    let tangential = tangential_axes(d, p.side.axis);
                    if lo.len() != tangential.len() || hi.len() != tangential.len() {
                        return Err(Error::Config(format!(
                            "boundary patch '{}' needs {} lo/hi coordinates",
                            p.name,
                            tangential.len()
                        )));
                    }
                    let ranges: Vec<Range<usize>> = tangential
                        .iter()
                        .enumerate()
                        .map(|(k, &a)| cells_within(self.dims[a], self.extents[a], lo[k], hi[k]))
                        .collect();
                    if ranges.iter().any(|r| r.is_empty()) {
                        return Err(Error::Config(format!(
                            "boundary patch '{}' contains no face centres",
                            p.name
                        )));
                    }
                    Some(ranges)
                }
            };
            patches.push(BoundaryPatch {
                name: p.name.clone(),
                side: p.side,
                region,
                kind: p.kind,
            });
        }
        for axis in 0..d {
            for side in [crate::grid::Side::Lo, crate::grid::Side::Hi] {
                let gs = GridSide::new(axis, side);
                let full: Vec<Range<usize>> =
                    tangential_axes(d, axis).iter().map(|&a| 0..self.dims[a]).collect();
                let mut free = vec![full.clone()];
                for p in patches.iter().filter(|p| p.side == gs) {
                    let r = p.region.clone().unwrap_or_else(|| full.clone());
                    free = free.iter().flat_map(|f| subtract_box(f, &r)).collect();
                }
                for (k, f) in free.into_iter().enumerate() {
                    patches.push(BoundaryPatch {
                        name: format!("{gs}-insulated-{k}"),
                        side: gs,
                        region: Some(f),
                        kind: BoundaryKind::Neumann(0.0),
                    });
                }
            }
        }
        StructuredGrid::new(&self.dims, &self.extents, patches)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims.len();
        if !(d == 2 || d == 3) || self.extents.len() != d {
            return Err(Error::Config(format!(
                "grid.dims and grid.extents need 2 or 3 matching entries, got {} and {}",
                d,
                self.extents.len()
            )));
        }
        self.material.validate()?;
        if !self.source.is_finite() {
            return Err(Error::Config("source.q must be finite".into()));
        }
        if let Some(l) = self.filter_lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("filter.lambda must be >= 0, got {l}")));
            }
        }
        if !(self.filter_radius_cells >= 0.0 && self.filter_radius_cells.is_finite()) {
            return Err(Error::Config(format!(
                "filter.radius_cells must be >= 0, got {}",
                self.filter_radius_cells
            )));
        }
        if !self.t_ref.is_finite() {
            return Err(Error::Config("objective.t_ref must be finite".into()));
        }
        if !(self.volume_fraction > 0.0 && self.volume_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "optimizer.volume_fraction must lie in (0, 1], got {}",
                self.volume_fraction
            )));
        }
        if !(self.move_limit > 0.0 && self.move_limit <= 1.0) {
            return Err(Error::Config(format!(
                "optimizer.move_limit must lie in (0, 1], got {}",
                self.move_limit
            )));
        }
        self.solver.validate()?;
        let grid = self.build_grid()?;
        if !grid.has_dirichlet() {
            return Err(Error::Config("at least one boundary patch must be Dirichlet".into()));
        }
        Ok(())
    }

    fn to_raw(&self) -> RawConfig {
        let s = &self.solver;
        RawConfig {
            preset: None,
            grid: Some(RawGrid {
                dims: Some(self.dims.clone()),
                extents: Some(self.extents.clone()),
            }),
            boundary: Some(
                self.boundary
                    .iter()
                    .map(|p| {
                        let (dirichlet, neumann) = match p.kind {
                            BoundaryKind::Dirichlet(v) => (Some(v), None),
                            BoundaryKind::Neumann(q) => (None, Some(q)),
                        };
                        RawPatch {
                            name: p.name.clone(),
                            side: p.side.to_string(),
                            lo: p.bounds.as_ref().map(|b| b.0.clone()),
                            hi: p.bounds.as_ref().map(|b| b.1.clone()),
                            dirichlet,
                            neumann,
                        }
                    })
                    .collect(),
            ),
            material: Some(RawMaterial {
                kappa_min: Some(self.material.kappa_min),
                kappa_max: Some(self.material.kappa_max),
                penalty: Some(self.material.penalty),
            }),
            source: Some(RawSource { q: Some(self.source) }),
            filter: Some(RawFilter {
                lambda: self.filter_lambda,
                radius_cells: Some(self.filter_radius_cells),
            }),
            objective: Some(RawObjective { t_ref: Some(self.t_ref) }),
            optimizer: Some(RawOptimizer {
                volume_fraction: Some(self.volume_fraction),
                move_limit: Some(self.move_limit),
                max_iterations: Some(self.max_iterations),
            }),
            solver: Some(RawSolver {
                strategy: None,
                mode: Some(s.mode),
                mor: Some(s.mor),
                r_forward: Some(s.r_forward),
                r_adjoint: Some(s.r_adjoint),
                tau_fom: Some(s.tau_fom),
                tau_mor: Some(s.tau_mor),
                criterion: Some(s.criterion),
                max_cg_iterations: Some(s.max_cg_iterations),
                warm_start_on_reject: Some(s.warm_start_on_reject),
            }),
            output: Some(RawOutput {
                checkpoint_interval: Some(self.checkpoint_interval),
            }),
        }
    }
}

fn tangential_axes(d: usize, axis: usize) -> Vec<usize> {
    (0..d).filter(|&a| a != axis).collect()
}

/// `a \ b` for boxes given as per-axis ranges, as a list of disjoint boxes.
fn subtract_box(a: &[Range<usize>], b: &[Range<usize>]) -> Vec<Vec<Range<usize>>> {
    let inter: Vec<Range<usize>> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x.start.max(y.start)..x.end.min(y.end))
        .collect();
    if inter.iter().any(|r| r.start >= r.end) {
        return vec![a.to_vec()];
    }
    let mut out = Vec::new();
    let mut rest = a.to_vec();
    for k in 0..a.len() {
        if rest[k].start < inter[k].start {
            let mut piece = rest.clone();
            piece[k] = rest[k].start..inter[k].start;
            out.push(piece);
        }
        if inter[k].end < rest[k].end {
            let mut piece = rest.clone();
            piece[k] = inter[k].end..rest[k].end;
            out.push(piece);
        }
        rest[k] = inter[k].clone();
    }
    out
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    preset: Option<String>,
    grid: Option<RawGrid>,
    boundary: Option<Vec<RawPatch>>,
    material: Option<RawMaterial>,
    source: Option<RawSource>,
    filter: Option<RawFilter>,
    objective: Option<RawObjective>,
    optimizer: Option<RawOptimizer>,
    solver: Option<RawSolver>,
    output: Option<RawOutput>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    dims: Option<Vec<usize>>,
    extents: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPatch {
    name: String,
    side: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    lo: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hi: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dirichlet: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    neumann: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMaterial {
    kappa_min: Option<f64>,
    kappa_max: Option<f64>,
    penalty: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSource {
    q: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFilter {
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    radius_cells: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawObjective {
    t_ref: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOptimizer {
    volume_fraction: Option<f64>,
    move_limit: Option<f64>,
    max_iterations: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    /// Shorthand such as `MOR_2_MGCG_1`; explicit keys still win.
    #[serde(skip_serializing_if = "Option::is_none")]
    strategy: Option<String>,
    mode: Option<SolveMode>,
    mor: Option<bool>,
    r_forward: Option<usize>,
    r_adjoint: Option<usize>,
    tau_fom: Option<f64>,
    tau_mor: Option<f64>,
    criterion: Option<Criterion>,
    max_cg_iterations: Option<usize>,
    warm_start_on_reject: Option<bool>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    checkpoint_interval: Option<usize>,
}

macro_rules! merge_fields {
    ($base:expr, $top:expr; $($f:ident),*) => {
        match ($base, $top) {
            (Some(mut b), Some(t)) => {
                $( if t.$f.is_some() { b.$f = t.$f; } )*
                Some(b)
            }
            (b, None) => b,
            (None, t) => t,
        }
    };
}

impl RawConfig {
    /// `self` overlaid with every key present in `top`.
    fn merged(mut self, top: RawConfig) -> RawConfig {
        // A strategy name in `top` replaces what lower layers said about the
        // fields it determines.
        if let (Some(base), Some(t)) = (self.solver.as_mut(), top.solver.as_ref()) {
            if t.strategy.is_some() {
                base.mode = None;
                base.mor = None;
                base.r_forward = None;
                base.r_adjoint = None;
            }
        }
        RawConfig {
            preset: top.preset.or(self.preset),
            grid: merge_fields!(self.grid, top.grid; dims, extents),
            boundary: top.boundary.or(self.boundary),
            material: merge_fields!(self.material, top.material; kappa_min, kappa_max, penalty),
            source: merge_fields!(self.source, top.source; q),
            filter: merge_fields!(self.filter, top.filter; lambda, radius_cells),
            objective: merge_fields!(self.objective, top.objective; t_ref),
            optimizer: merge_fields!(self.optimizer, top.optimizer; volume_fraction, move_limit, max_iterations),
            solver: merge_fields!(self.solver, top.solver; strategy, mode, mor, r_forward, r_adjoint,
                tau_fom, tau_mor, criterion, max_cg_iterations, warm_start_on_reject),
            output: merge_fields!(self.output, top.output; checkpoint_interval),
        }
    }

    fn resolve(self) -> Result<RunConfig> {
        let grid = self.grid.unwrap_or_default();
        let material = self.material.unwrap_or_default();
        let objective = self.objective.unwrap_or_default();
        let optimizer = self.optimizer.unwrap_or_default();
        let present = [
            grid.dims.is_some(),
            grid.extents.is_some(),
            self.boundary.is_some(),
            material.kappa_min.is_some(),
            material.kappa_max.is_some(),
            objective.t_ref.is_some(),
            optimizer.volume_fraction.is_some(),
        ];
        let missing: Vec<&str> = REQUIRED
            .iter()
            .zip(present)
            .filter(|(_, p)| !p)
            .map(|(k, _)| *k)
            .collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!(
                "missing required keys: {} (or name a preset: {})",
                missing.join(", "),
                PRESETS.join(", ")
            )));
        }

        let mut boundary = Vec::new();
        for p in self.boundary.unwrap() {
            let side = GridSide::parse(&p.side).ok_or_else(|| {
                Error::Config(format!(
                    "boundary patch '{}': side '{}' is not one of x-, x+, y-, y+, z-, z+",
                    p.name, p.side
                ))
            })?;
            let kind = match (p.dirichlet, p.neumann) {
                (Some(v), None) => BoundaryKind::Dirichlet(v),
                (None, Some(q)) => BoundaryKind::Neumann(q),
                _ => {
                    return Err(Error::Config(format!(
                        "boundary patch '{}' needs exactly one of 'dirichlet' or 'neumann'",
                        p.name
                    )))
                }
            };
            let bounds = match (p.lo, p.hi) {
                (Some(lo), Some(hi)) => Some((lo, hi)),
                (None, None) => None,
                _ => {
                    return Err(Error::Config(format!(
                        "boundary patch '{}' needs both 'lo' and 'hi' or neither",
                        p.name
                    )))
                }
            };
            boundary.push(PatchSpec {
                name: p.name,
                side,
                bounds,
                kind,
            });
        }

        let raw_solver = self.solver.unwrap_or_default();
        let mut solver = match &raw_solver.strategy {
            Some(name) => SolverStrategy::named(name)?,
            None => SolverStrategy::default(),
        };
        if let Some(v) = raw_solver.mode {
            solver.mode = v;
        }
        if let Some(v) = raw_solver.mor {
            solver.mor = v;
        }
        if let Some(v) = raw_solver.r_forward {
            solver.r_forward = v;
        }
        if let Some(v) = raw_solver.r_adjoint {
            solver.r_adjoint = v;
        }
        if let Some(v) = raw_solver.tau_fom {
            solver.tau_fom = v;
        }
        if let Some(v) = raw_solver.tau_mor {
            solver.tau_mor = v;
        }
        if let Some(v) = raw_solver.criterion {
            solver.criterion = v;
        }
        if let Some(v) = raw_solver.max_cg_iterations {
            solver.max_cg_iterations = v;
        }
        if let Some(v) = raw_solver.warm_start_on_reject {
            solver.warm_start_on_reject = v;
        }

        let filter = self.filter.unwrap_or_default();
        let cfg = RunConfig {
            dims: grid.dims.unwrap(),
            extents: grid.extents.unwrap(),
            boundary,
            material: SimpParams {
                kappa_min: material.kappa_min.unwrap(),
                kappa_max: material.kappa_max.unwrap(),
                penalty: material.penalty.unwrap_or(3.0),
            },
            source: self.source.and_then(|s| s.q).unwrap_or(0.0),
            filter_lambda: filter.lambda,
            filter_radius_cells: filter.radius_cells.unwrap_or(2.0),
            t_ref: objective.t_ref.unwrap(),
            volume_fraction: optimizer.volume_fraction.unwrap(),
            move_limit: optimizer.move_limit.unwrap_or(0.1),
            max_iterations: optimizer.max_iterations.unwrap_or(250),
            solver,
            checkpoint_interval: self.output.and_then(|o| o.checkpoint_interval).unwrap_or(0),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Overrides form one more layer on top of `raw`.
fn apply_overrides(raw: RawConfig, overrides: &[String]) -> Result<RawConfig> {
    let mut table = toml::Table::new();
    for ov in overrides {
        let (key, value) = ov
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{ov}' is not of the form key=value")))?;
        let key = key.trim();
        let value = parse_value(value.trim());
        let path: Vec<&str> = key.split('.').collect();
        let (last, sections) = path.split_last().unwrap();
        let mut t = &mut table;
        for s in sections {
            t = t
                .entry(s.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("override '{key}': '{s}' is not a section")))?;
        }
        t.insert(last.to_string(), value);
    }
    let layer: RawConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("in overrides: {}", e.message())))?;
    Ok(raw.merged(layer))
}

fn parse_value(text: &str) -> toml::Value {
    let doc = format!("v = {text}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(text.to_string()),
    }
}

fn preset_raw(name: &str) -> Result<RawConfig> {
    let text = match name {
        "paper-2d" => PAPER_2D,
        "paper-3d" => PAPER_3D,
        _ => {
            return Err(Error::Config(format!(
                "unknown preset '{name}' (available: {})",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(toml::from_str(text).expect("built-in preset parses"))
}

/// Built-in preset text.
pub fn preset_text(name: &str) -> Option<&'static str> {
    match name {
        "paper-2d" => Some(PAPER_2D),
        "paper-3d" => Some(PAPER_3D),
        _ => None,
    }
}

/// 12 x 12 plate, fixed temperature on the middle third of the top edge,
/// uniform out-of-plane heating, insulated elsewhere.
const PAPER_2D: &str = r#"
[grid]
dims = [360, 360]
extents = [12.0, 12.0]

[[boundary]]
name = "sink"
side = "y+"
lo = [4.0]
hi = [8.0]
dirichlet = 300.0

[material]
kappa_min = 1.0
kappa_max = 100.0
penalty = 3.0

[source]
q = 1000.0

[filter]
radius_cells = 2.0

[objective]
t_ref = 300.0

[optimizer]
volume_fraction = 0.4
move_limit = 0.1
max_iterations = 500

[solver]
mode = "full"
mor = true
r_forward = 10
r_adjoint = 10
tau_fom = 1e-13
tau_mor = 1e-6
criterion = "w2"
"#;

/// Unit cube heated uniformly, fixed temperature on a centred square of the
/// bottom face spanning the middle third of each edge.
const PAPER_3D: &str = r#"
[grid]
dims = [200, 200, 200]
extents = [1.0, 1.0, 1.0]

[[boundary]]
name = "sink"
side = "z-"
lo = [0.3333333333333333, 0.3333333333333333]
hi = [0.6666666666666666, 0.6666666666666666]
dirichlet = 273.0

[material]
kappa_min = 1.0
kappa_max = 100.0
penalty = 3.0

[source]
q = 1e4

[filter]
radius_cells = 2.0

[objective]
t_ref = 273.0

[optimizer]
volume_fraction = 0.05
move_limit = 0.1
max_iterations = 250

[solver]
mode = "full"
mor = false
r_forward = 2
r_adjoint = 2
tau_fom = 1e-13
tau_mor = 5e-6
criterion = "w2"
"#;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_resolve() {
        let c = RunConfig::preset("paper-3d").unwrap();
        assert_eq!((c.material.kappa_min, c.material.kappa_max), (1.0, 100.0));
        assert_eq!(c.volume_fraction, 0.05);
        let c = RunConfig::preset("paper-2d").unwrap();
        assert_eq!(c.dims, vec![360, 360]);
        assert_eq!(c.solver.r_forward, 10);
        assert!(RunConfig::preset("paper-4d").is_err());
    }

    #[test]
    fn empty_input_lists_every_required_key() {
        let msg = RunConfig::parse("").unwrap_err().to_string();
        for key in REQUIRED {
            assert!(msg.contains(key), "{key} missing from: {msg}");
        }
    }

    #[test]
    fn unknown_key_is_reported_with_its_line() {
        let msg = RunConfig::parse("preset = \"paper-2d\"\n\n[solver]\ntau_mro = 1e-3\n")
            .unwrap_err()
            .to_string();
        assert!(msg.contains("tau_mro"), "{msg}");
        assert!(msg.contains("line 4"), "{msg}");
    }

    #[test]
    fn table_two_first_row() {
        let c = RunConfig::load(
            "preset = \"paper-2d\"\n[solver]\ncriterion = \"w1\"\ntau_mor = 5e-3\n",
            None,
            &[],
        )
        .unwrap();
        assert_eq!(c.solver.criterion, Criterion::W1);
        assert_eq!((c.solver.tau_fom, c.solver.tau_mor, c.solver.r_forward), (1e-13, 5e-3, 10));
    }

    #[test]
    fn render_round_trips() {
        for name in PRESETS {
            let c = RunConfig::preset(name).unwrap();
            assert_eq!(RunConfig::parse(&c.render()).unwrap(), c);
        }
        let c = RunConfig::preset("paper-2d")
            .unwrap()
            .with_overrides(&["filter.lambda=0.028".into(), "solver.mode=oneshot".into()])
            .unwrap();
        assert_eq!(c.filter_lambda, Some(0.028));
        assert_eq!(RunConfig::parse(&c.render()).unwrap(), c);
    }

    #[test]
    fn overrides_and_strategy_shorthand() {
        let c = RunConfig::load(
            "",
            Some("paper-3d"),
            &["grid.dims=[48,48,48]".into(), "solver.strategy=MOR_2_MGCG_1".into()],
        )
        .unwrap();
        assert_eq!(c.dims, vec![48, 48, 48]);
        assert_eq!(c.solver.mode, SolveMode::Oneshot);
        assert!(c.solver.mor);
        assert!(RunConfig::load("", Some("paper-3d"), &["solver.bogus=1".into()]).is_err());
        assert!(RunConfig::load("", Some("paper-3d"), &["no-equals".into()]).is_err());
    }

    #[test]
    fn grid_fills_insulated_remainder() {
        let c = RunConfig::preset("paper-2d").unwrap().with_overrides(&["grid.dims=[12,12]".into()]).unwrap();
        let g = c.build_grid().unwrap();
        let sink = &g.patches()[0];
        assert_eq!(sink.region, Some(vec![4..8]));
        let c = RunConfig::preset("paper-3d").unwrap().with_overrides(&["grid.dims=[48,48,48]".into()]).unwrap();
        let g = c.build_grid().unwrap();
        assert_eq!(g.patches()[0].region, Some(vec![16..32, 16..32]));
        // z- minus the sink splits into four insulated boxes.
        let zlo = g.patches().iter().filter(|p| p.side == GridSide::new(2, crate::grid::Side::Lo)).count();
        assert_eq!(zlo, 5);
    }

    #[test]
    fn filter_length_rule() {
        let c = RunConfig::preset("paper-3d").unwrap();
        assert!((c.filter_length() - 0.0028).abs() < 1e-4);
        let c = RunConfig::preset("paper-2d").unwrap();
        assert!((c.filter_length() - 0.019245).abs() < 1e-5);
    }

    #[test]
    fn invalid_values_are_rejected() {
        let bad = [
            "optimizer.volume_fraction=1.5",
            "material.kappa_min=200.0",
            "solver.r_forward=0",
            "solver.tau_fom=0.0",
            "grid.dims=[10]",
        ];
        for ov in bad {
            assert!(RunConfig::load("", Some("paper-2d"), &[ov.to_string()]).is_err(), "{ov}");
        }
    }

    #[test]
    fn box_subtraction_partitions() {
        let a = vec![0..10, 0..6];
        let b = vec![3..5, 2..9];
        let pieces = subtract_box(&a, &b);
        let area: usize = pieces.iter().map(|p| p.iter().map(|r| r.len()).product::<usize>()).sum();
        assert_eq!(area, 60 - 2 * 4);
    }
}
