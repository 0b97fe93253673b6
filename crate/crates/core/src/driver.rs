//! The design loop.
//!
//! Every iteration filters the design, assembles `A(ρ̃)`, solves the forward
//! and adjoint systems, forms the composite gradient and takes one MMA step.
//! With MOR enabled each equation first tries its own reduced basis; only a
//! rejected (or impossible) reduced solve falls back to the full-order
//! solver, whose answer is then appended to that equation's basis.

use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_diffusion, simp_conductivity, source_rhs, SimpParams};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::grid::StructuredGrid;
use crate::krylov::{pcg_solve, Criterion, PcgOptions, SolveReport, SolverKind, StopCriterion};
use crate::multigrid::{MgLevels, MgTopology};
use crate::rom::{assess, reduced_solve, AppendOutcome, ReducedBasis};
use crate::sparse::SparseOperator;
use crate::topopt::{
    adjoint_rhs, design_gradient, objective, probe_gradient_sign, volume_constraint, DensityFilter,
    MmaParams, MmaState, ObjectiveSpec,
};
use crate::vector::norm2;

/// How full-order solves are carried out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMode {
    /// MGCG until the stopping criterion is met.
    Full,
    /// Exactly one MGCG iteration from the warm start.
    Oneshot,
}

impl fmt::Display for SolveMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveMode::Full => "full",
            SolveMode::Oneshot => "oneshot",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverStrategy {
    pub mode: SolveMode,
    pub mor: bool,
    pub r_forward: usize,
    pub r_adjoint: usize,
    pub tau_fom: f64,
    pub tau_mor: f64,
    pub criterion: Criterion,
    /// Iteration cap for full-accuracy solves. A solve that hits it keeps its
    /// last iterate and is flagged unconverged.
    pub max_cg_iterations: usize,
    /// Seed the fallback FOM solve with the rejected reduced solution.
    pub warm_start_on_reject: bool,
}

impl Default for SolverStrategy {
    fn default() -> Self {
        Self {
            mode: SolveMode::Full,
            mor: false,
            r_forward: 2,
            r_adjoint: 2,
            tau_fom: 1e-13,
            tau_mor: 5e-6,
            criterion: Criterion::W2,
            max_cg_iterations: 1000,
            warm_start_on_reject: true,
        }
    }
}

impl SolverStrategy {
    /// Strategy from a name such as `MGCG`, `MGCG_1`, `MOR_2_MGCG` or
    /// `MOR_3_MGCG_1`; unnamed fields keep their defaults.
    pub fn named(name: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown solver strategy '{name}'"));
        let upper = name.to_ascii_uppercase();
        let mut parts: Vec<&str> = upper.split('_').collect();
        let mut s = Self::default();
        if parts.last() == Some(&"1") {
            s.mode = SolveMode::Oneshot;
            parts.pop();
        }
        match parts.as_slice() {
            ["MGCG"] => s.mor = false,
            ["MOR", r, "MGCG"] => {
                let r: usize = r.parse().map_err(|_| bad())?;
                s.mor = true;
                s.r_forward = r;
                s.r_adjoint = r;
            }
            _ => return Err(bad()),
        }
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_fom > 0.0 && self.tau_fom.is_finite()) {
            return Err(Error::Config(format!("solver.tau_fom must be positive, got {}", self.tau_fom)));
        }
        if self.mor && !(self.tau_mor > 0.0 && self.tau_mor.is_finite()) {
            return Err(Error::Config(format!("solver.tau_mor must be positive, got {}", self.tau_mor)));
        }
        if self.r_forward == 0 || self.r_adjoint == 0 {
            return Err(Error::Config("solver.r_forward and solver.r_adjoint must be at least 1".into()));
        }
        if self.max_cg_iterations == 0 {
            return Err(Error::Config("solver.max_cg_iterations must be at least 1".into()));
        }
        Ok(())
    }

    /// Name in the `MOR_r_MGCG[_1]` scheme. Asymmetric windows use the
    /// forward one.
    pub fn label(&self) -> String {
        let base = if self.mor {
            format!("MOR_{}_MGCG", self.r_forward)
        } else {
            "MGCG".to_string()
        };
        match self.mode {
            SolveMode::Full => base,
            SolveMode::Oneshot => format!("{base}_1"),
        }
    }
}

/// Result of one forward or adjoint solve.
#[derive(Debug, Clone, PartialEq)]
pub struct EquationRecord {
    pub kind: SolverKind,
    /// Measure of the configured criterion: the reduced measure whenever a
    /// reduced solve was assessed, the final FOM measure otherwise.
    pub measure: f64,
    pub final_w1: f64,
    pub final_w2: f64,
    /// `‖A‖ ‖x‖ / ‖b‖` of the returned field.
    pub norm_ratio: f64,
    pub mor_attempted: bool,
    /// False when a full-accuracy solve stopped at the iteration cap.
    pub converged: bool,
    pub cg_iterations: usize,
    pub matvecs: usize,
    pub basis_size: usize,
    pub appended: Option<AppendOutcome>,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// 1-based design iteration.
    pub iteration: usize,
    pub objective: f64,
    pub constraint: f64,
    pub forward: EquationRecord,
    pub adjoint: EquationRecord,
    /// Linear-solver time of this iteration, hierarchy builds included.
    pub solver_time: Duration,
    /// Cumulative linear-solver time.
    pub walltime: Duration,
    pub mma_infeasible: bool,
}

impl IterationRecord {
    pub fn matvecs(&self) -> usize {
        self.forward.matvecs + self.adjoint.matvecs
    }
}

/// Per-kind wall time and counts over a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunTotals {
    pub iterations: usize,
    pub walltime: Duration,
    pub matvecs: usize,
    pub cg_iterations: usize,
    pub forward_reductions: usize,
    pub adjoint_reductions: usize,
    pub time_fom_full: Duration,
    pub time_fom_oneshot: Duration,
    pub time_mor: Duration,
}

impl RunTotals {
    pub fn from_history(history: &[IterationRecord]) -> Self {
        let mut t = Self::default();
        for rec in history {
            t.iterations += 1;
            t.matvecs += rec.matvecs();
            for (eq, fwd) in [(&rec.forward, true), (&rec.adjoint, false)] {
                t.cg_iterations += eq.cg_iterations;
                let slot = match eq.kind {
                    SolverKind::FomFull => &mut t.time_fom_full,
                    SolverKind::FomOneshot => &mut t.time_fom_oneshot,
                    SolverKind::Mor => {
                        if fwd {
                            t.forward_reductions += 1;
                        } else {
                            t.adjoint_reductions += 1;
                        }
                        &mut t.time_mor
                    }
                };
                *slot += eq.wall_time;
            }
        }
        t.walltime = history.last().map_or(Duration::ZERO, |r| r.walltime);
        t
    }
}

/// Fixed data of one optimization problem.
pub struct Problem {
    pub grid: StructuredGrid,
    pub simp: SimpParams,
    pub spec: ObjectiveSpec,
    pub volume_fraction: f64,
    pub move_limit: f64,
    /// Volumetric source term of the forward right-hand side.
    pub source: Vec<f64>,
    pub filter: DensityFilter,
    pub strategy: SolverStrategy,
}

impl Problem {
    pub fn from_config(config: &RunConfig) -> Result<Self> {
        let grid = config.build_grid()?;
        let q = vec![config.source; grid.num_cells()];
        let filter = DensityFilter::new(&grid, config.filter_length())?;
        Ok(Self {
            source: source_rhs(&grid, &q),
            simp: config.material,
            spec: ObjectiveSpec {
                t_ref: config.t_ref,
            },
            volume_fraction: config.volume_fraction,
            move_limit: config.move_limit,
            filter,
            strategy: config.solver,
            grid,
        })
    }
}

/// One assembled design iteration, kept for inspection after [`Optimizer::step`].
pub struct IterationState {
    pub rho_filtered: Vec<f64>,
    pub operator: SparseOperator,
    pub rhs: Vec<f64>,
    pub temperature: Vec<f64>,
    pub adjoint: Vec<f64>,
    /// `dJ/dρ̃` from the fields above.
    pub gradient_filtered: Vec<f64>,
}

pub struct Optimizer {
    problem: Problem,
    rho: Vec<f64>,
    mma: MmaState,
    topology: MgTopology,
    forward_basis: ReducedBasis,
    adjoint_basis: ReducedBasis,
    t_prev: Vec<f64>,
    y_prev: Vec<f64>,
    iteration: usize,
    walltime: Duration,
    last: Option<IterationState>,
}

/// Multigrid levels for one operator, built on first use so that an
/// iteration served entirely by reduced models never pays for them.
pub struct LazyHierarchy<'a> {
    topology: &'a MgTopology,
    op: &'a SparseOperator,
    levels: Option<MgLevels>,
    build_time: Duration,
}

impl<'a> LazyHierarchy<'a> {
    pub fn new(topology: &'a MgTopology, op: &'a SparseOperator) -> Self {
        Self {
            topology,
            op,
            levels: None,
            build_time: Duration::ZERO,
        }
    }

    pub fn is_built(&self) -> bool {
        self.levels.is_some()
    }

    pub fn build_time(&self) -> Duration {
        self.build_time
    }

    fn get(&mut self) -> Result<&MgLevels> {
        if self.levels.is_none() {
            let start = Instant::now();
            self.levels = Some(MgLevels::build(self.topology, self.op)?);
            self.build_time += start.elapsed();
        }
        Ok(self.levels.as_ref().unwrap())
    }
}

impl Optimizer {
    pub fn new(problem: Problem) -> Result<Self> {
        problem.strategy.validate()?;
        let n = problem.grid.num_cells();
        let topology = MgTopology::build(&problem.grid);
        let mma = MmaState::new(n, MmaParams::with_move_limit(problem.move_limit));
        Ok(Self {
            rho: vec![problem.volume_fraction; n],
            forward_basis: ReducedBasis::new(n, problem.strategy.r_forward)?,
            adjoint_basis: ReducedBasis::new(n, problem.strategy.r_adjoint)?,
            t_prev: vec![0.0; n],
            y_prev: vec![0.0; n],
            mma,
            topology,
            problem,
            iteration: 0,
            walltime: Duration::ZERO,
            last: None,
        })
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn design(&self) -> &[f64] {
        &self.rho
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn forward_basis(&self) -> &ReducedBasis {
        &self.forward_basis
    }

    pub fn adjoint_basis(&self) -> &ReducedBasis {
        &self.adjoint_basis
    }

    /// Fields of the most recent iteration.
    pub fn last_state(&self) -> Option<&IterationState> {
        self.last.as_ref()
    }

    /// Filtered design of the current (not yet evaluated) design.
    pub fn filtered_design(&self) -> Result<Vec<f64>> {
        self.problem.filter.forward(&self.rho)
    }

    /// One full design iteration.
    pub fn step(&mut self) -> Result<IterationRecord> {
        let p = &self.problem;
        let grid = &p.grid;
        let rho_f = p.filter.forward(&self.rho)?;
        let sys = assemble_diffusion(grid, &simp_conductivity(&rho_f, &p.simp))?;
        let rhs: Vec<f64> = p.source.iter().zip(&sys.rhs_bc).map(|(a, b)| a + b).collect();
        let op = sys.operator;
        let norm_a = op.inf_norm();

        let mut hier = LazyHierarchy::new(&self.topology, &op);
        let (t, fwd) = solve_equation(
            &p.strategy,
            &op,
            norm_a,
            &rhs,
            &mut self.forward_basis,
            &self.t_prev,
            &mut hier,
        )?;

        let j = objective(&t, &p.spec, grid);
        let b_adj = adjoint_rhs(&t, &p.spec, grid);
        let (y, adj) = solve_equation(
            &p.strategy,
            &op,
            norm_a,
            &b_adj,
            &mut self.adjoint_basis,
            &self.y_prev,
            &mut hier,
        )?;

        let g_f = design_gradient(grid, &t, &y, &rho_f, &p.simp);
        let df0 = p.filter.chain(&g_f)?;
        let (constraint, dv_f) = volume_constraint(&rho_f, p.volume_fraction, grid);
        let dv = p.filter.chain(&dv_f)?;
        let step = self.mma.update(&self.rho, &df0, constraint, &dv);

        let solver_time = fwd.wall_time + adj.wall_time;
        self.walltime += solver_time;
        self.iteration += 1;
        self.rho = step.design;
        self.t_prev.clone_from(&t);
        self.y_prev.clone_from(&y);
        self.last = Some(IterationState {
            rho_filtered: rho_f,
            operator: op,
            rhs,
            temperature: t,
            adjoint: y,
            gradient_filtered: g_f,
        });
        Ok(IterationRecord {
            iteration: self.iteration,
            objective: j,
            constraint,
            forward: fwd,
            adjoint: adj,
            solver_time,
            walltime: self.walltime,
            mma_infeasible: step.infeasible,
        })
    }

    /// Objective and `dJ/dρ̃` served by the current bases at the design of the
    /// last iteration, together with the values of the last iteration's
    /// fields. When both bases were just updated from that iteration's FOM
    /// solves the two agree up to round-off.
    pub fn interpolation_probe(&self) -> Option<InterpolationProbe> {
        let last = self.last.as_ref()?;
        let p = &self.problem;
        let t = reduced_solve(&self.forward_basis, &last.operator, &last.rhs).ok()?;
        let b_adj = adjoint_rhs(&t.field, &p.spec, &p.grid);
        let y = reduced_solve(&self.adjoint_basis, &last.operator, &b_adj).ok()?;
        Some(InterpolationProbe {
            reduced_objective: objective(&t.field, &p.spec, &p.grid),
            fom_objective: objective(&last.temperature, &p.spec, &p.grid),
            reduced_gradient: design_gradient(&p.grid, &t.field, &y.field, &last.rho_filtered, &p.simp),
            fom_gradient: last.gradient_filtered.clone(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct InterpolationProbe {
    pub reduced_objective: f64,
    pub fom_objective: f64,
    pub reduced_gradient: Vec<f64>,
    pub fom_gradient: Vec<f64>,
}

impl InterpolationProbe {
    pub fn objective_error(&self) -> f64 {
        (self.reduced_objective - self.fom_objective).abs() / self.fom_objective.abs()
    }

    /// Relative 2-norm error of the gradient.
    pub fn gradient_error(&self) -> f64 {
        let diff: Vec<f64> = self
            .reduced_gradient
            .iter()
            .zip(&self.fom_gradient)
            .map(|(a, b)| a - b)
            .collect();
        norm2(&diff) / norm2(&self.fom_gradient)
    }
}

/// Solves one of the two state equations under `strategy`: reduced model
/// first (when enabled and non-empty), full-order MGCG otherwise. The FOM
/// answer is appended to `basis`. `warm` seeds the FOM solve. The recorded
/// wall time includes building the hierarchy if this call triggered it.
pub fn solve_equation(
    strategy: &SolverStrategy,
    op: &SparseOperator,
    norm_a: f64,
    rhs: &[f64],
    basis: &mut ReducedBasis,
    warm: &[f64],
    hier: &mut LazyHierarchy<'_>,
) -> Result<(Vec<f64>, EquationRecord)> {
    let start = Instant::now();
    let n = rhs.len();
    let fom_kind = match strategy.mode {
        SolveMode::Full => SolverKind::FomFull,
        SolveMode::Oneshot => SolverKind::FomOneshot,
    };
    let norm_b = norm2(rhs);
    if norm_b == 0.0 {
        let rec = EquationRecord {
            kind: fom_kind,
            measure: 0.0,
            final_w1: 0.0,
            final_w2: 0.0,
            norm_ratio: 0.0,
            mor_attempted: false,
            converged: true,
            cg_iterations: 0,
            matvecs: 0,
            basis_size: basis.len(),
            appended: None,
            wall_time: start.elapsed(),
        };
        return Ok((vec![0.0; n], rec));
    }

    let mut matvecs = 0;
    let mut mor_measure = None;
    let mut x0 = warm.to_vec();
    if strategy.mor && !basis.is_empty() {
        if let Ok(sol) = reduced_solve(basis, op, rhs) {
            matvecs += sol.matvecs;
            let a = assess(&sol, rhs, norm_a, strategy.tau_mor, strategy.criterion);
            if a.accepted {
                let rec = EquationRecord {
                    kind: SolverKind::Mor,
                    measure: a.measure,
                    final_w1: a.w1,
                    final_w2: a.w2,
                    norm_ratio: norm_a * a.norm_x / a.norm_b,
                    mor_attempted: true,
                    converged: true,
                    cg_iterations: 0,
                    matvecs,
                    basis_size: basis.len(),
                    appended: None,
                    wall_time: start.elapsed(),
                };
                return Ok((sol.field, rec));
            }
            mor_measure = Some(a.measure);
            if strategy.warm_start_on_reject {
                x0 = sol.field;
            }
        }
    }

    let max_iters = match strategy.mode {
        SolveMode::Full => strategy.max_cg_iterations,
        SolveMode::Oneshot => 1,
    };
    let opts = PcgOptions::new(StopCriterion::new(strategy.criterion, strategy.tau_fom)?, max_iters)
        .with_norm_a(norm_a);
    let (topology, fine) = (hier.topology, hier.op);
    let levels = hier.get()?;
    let pre = levels.with(topology, fine);
    let (x, report): (Vec<f64>, SolveReport) = pcg_solve(op, rhs, x0, &pre, &opts)?;
    matvecs += report.matvecs;
    let appended = if strategy.mor && norm2(&x) > 0.0 {
        Some(basis.append(&x)?)
    } else {
        None
    };
    let rec = EquationRecord {
        kind: fom_kind,
        measure: mor_measure.unwrap_or_else(|| report.measure(strategy.criterion)),
        final_w1: report.final_w1,
        final_w2: report.final_w2,
        norm_ratio: report.norm_ratio(),
        mor_attempted: mor_measure.is_some(),
        converged: report.converged || strategy.mode == SolveMode::Oneshot,
        cg_iterations: report.iterations,
        matvecs,
        basis_size: basis.len(),
        appended,
        wall_time: start.elapsed(),
    };
    Ok((x, rec))
}

/// Receives every iteration as it completes.
pub trait RunObserver {
    fn on_iteration(&mut self, record: &IterationRecord, optimizer: &Optimizer) -> Result<()>;
}

impl RunObserver for () {
    fn on_iteration(&mut self, _: &IterationRecord, _: &Optimizer) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    /// Raw design after the last MMA step.
    pub design: Vec<f64>,
    /// Filtered design the last iteration was evaluated at.
    pub filtered_design: Vec<f64>,
    pub temperature: Vec<f64>,
    pub history: Vec<IterationRecord>,
}

impl RunResult {
    pub fn totals(&self) -> RunTotals {
        RunTotals::from_history(&self.history)
    }
}

/// Runs the configured number of design iterations.
///
/// A failing iteration aborts the run with [`Error::Aborted`]; everything the
/// observer received up to then is already persisted.
pub fn run_optimization(config: &RunConfig, observer: &mut dyn RunObserver) -> Result<RunResult> {
    probe_gradient_sign()?;
    let problem = Problem::from_config(config)?;
    let mut opt = Optimizer::new(problem)?;
    let mut history = Vec::with_capacity(config.max_iterations);
    for _ in 0..config.max_iterations {
        let it = opt.iteration() + 1;
        let rec = opt.step().map_err(|e| Error::Aborted {
            iteration: it,
            source: Box::new(e),
        })?;
        observer.on_iteration(&rec, &opt).map_err(|e| Error::Aborted {
            iteration: it,
            source: Box::new(e),
        })?;
        history.push(rec);
    }
    let (filtered_design, temperature) = match opt.last_state() {
        Some(s) => (s.rho_filtered.clone(), s.temperature.clone()),
        None => (opt.filtered_design()?, vec![0.0; opt.design().len()]),
    };
    Ok(RunResult {
        design: opt.design().to_vec(),
        filtered_design,
        temperature,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_names() {
        let s = SolverStrategy::named("MGCG").unwrap();
        assert_eq!((s.mode, s.mor), (SolveMode::Full, false));
        let s = SolverStrategy::named("MGCG_1").unwrap();
        assert_eq!((s.mode, s.mor), (SolveMode::Oneshot, false));
        let s = SolverStrategy::named("mor_3_mgcg_1").unwrap();
        assert_eq!((s.mode, s.mor, s.r_forward, s.r_adjoint), (SolveMode::Oneshot, true, 3, 3));
        assert_eq!(s.label(), "MOR_3_MGCG_1");
        assert!(SolverStrategy::named("MOR_0_MGCG").is_err());
        assert!(SolverStrategy::named("GMRES").is_err());
    }
}
