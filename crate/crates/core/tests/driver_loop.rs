use tomor::config::RunConfig;
use tomor::driver::{
    run_optimization, solve_equation, IterationRecord, LazyHierarchy, Optimizer, Problem, RunObserver,
    SolverStrategy,
};
use tomor::krylov::{pcg_solve, Identity, PcgOptions, SolverKind, StopCriterion};
use tomor::multigrid::MgTopology;
use tomor::rom::ReducedBasis;
use tomor::Error;

fn config(dims: &str, iters: usize, strategy: &str) -> RunConfig {
    RunConfig::load(
        "",
        Some("paper-2d"),
        &[
            format!("grid.dims={dims}"),
            format!("optimizer.max_iterations={iters}"),
            format!("solver.strategy={strategy}"),
        ],
    )
    .unwrap()
}

/// Everything but wall time.
fn fingerprint(h: &[IterationRecord]) -> Vec<(u64, u64, SolverKind, SolverKind, usize, usize, usize)> {
    h.iter()
        .map(|r| {
            (
                r.objective.to_bits(),
                r.constraint.to_bits(),
                r.forward.kind,
                r.adjoint.kind,
                r.forward.cg_iterations,
                r.adjoint.cg_iterations,
                r.matvecs(),
            )
        })
        .collect()
}

#[test]
fn zero_iterations_return_the_initial_design() {
    let res = run_optimization(&config("[16,16]", 0, "MGCG"), &mut ()).unwrap();
    assert!(res.history.is_empty());
    assert!(res.design.iter().all(|&r| r == 0.4));
}

#[test]
fn identical_runs_are_bit_identical() {
    let cfg = config("[20,20]", 12, "MOR_3_MGCG");
    let a = run_optimization(&cfg, &mut ()).unwrap();
    let b = run_optimization(&cfg, &mut ()).unwrap();
    assert_eq!(fingerprint(&a.history), fingerprint(&b.history));
    assert_eq!(a.design, b.design);
}

#[test]
fn mgcg_records_are_converged_full_solves() {
    let cfg = config("[20,20]", 10, "MGCG");
    let res = run_optimization(&cfg, &mut ()).unwrap();
    for r in &res.history {
        for eq in [&r.forward, &r.adjoint] {
            assert_eq!(eq.kind, SolverKind::FomFull);
            assert!(eq.converged);
            assert!(eq.measure <= cfg.solver.tau_fom, "{}", eq.measure);
            assert!(eq.appended.is_none());
        }
    }
}

#[test]
fn oneshot_fom_solves_take_one_iteration() {
    for strategy in ["MGCG_1", "MOR_2_MGCG_1"] {
        let res = run_optimization(&config("[20,20]", 15, strategy), &mut ()).unwrap();
        for r in &res.history {
            for eq in [&r.forward, &r.adjoint] {
                if eq.kind != SolverKind::Mor {
                    assert_eq!(eq.kind, SolverKind::FomOneshot);
                    assert_eq!(eq.cg_iterations, 1);
                }
            }
        }
    }
}

#[test]
fn basis_grows_exactly_on_fom_solves() {
    let mut cfg = config("[20,20]", 40, "MOR_4_MGCG");
    cfg.solver.tau_mor = 1e-2;
    let res = run_optimization(&cfg, &mut ()).unwrap();
    let mut mor = 0;
    let (mut kf, mut ka) = (0, 0);
    for r in &res.history {
        for (eq, k) in [(&r.forward, &mut kf), (&r.adjoint, &mut ka)] {
            assert_eq!(eq.appended.is_some(), eq.kind != SolverKind::Mor);
            if eq.kind == SolverKind::Mor {
                mor += 1;
                assert_eq!(eq.cg_iterations, 0);
                assert_eq!(eq.basis_size, *k);
            } else {
                *k = (*k + 1).min(4);
                assert_eq!(eq.basis_size, *k);
            }
        }
    }
    assert!(mor > 0, "no reduced solve was ever accepted");
    assert_eq!(res.history[0].forward.kind, SolverKind::FomFull);
    assert_eq!(res.history[0].forward.basis_size, 1);
}

#[test]
fn forward_rejected_adjoint_accepted() {
    let cfg = config("[16,16]", 1, "MOR_2_MGCG");
    let problem = Problem::from_config(&cfg).unwrap();
    let mut opt = Optimizer::new(problem).unwrap();
    opt.step().unwrap();
    let state = opt.last_state().unwrap();
    let op = &state.operator;
    let n = op.dim();
    let strategy = SolverStrategy::named("MOR_2_MGCG").unwrap();
    let topo = MgTopology::build(&opt.problem().grid);
    let mut hier = LazyHierarchy::new(&topo, op);

    // Forward basis holds an unrelated vector; adjoint basis holds the
    // exact adjoint field.
    let mut fwd_basis = ReducedBasis::new(n, 2).unwrap();
    let unrelated: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
    fwd_basis.append(&unrelated).unwrap();
    let mut adj_basis = ReducedBasis::new(n, 2).unwrap();
    adj_basis.append(&state.adjoint).unwrap();
    let b_adj = tomor::topopt::adjoint_rhs(&state.temperature, &opt.problem().spec, &opt.problem().grid);

    let norm_a = op.inf_norm();
    let zeros = vec![0.0; n];
    let (t, fwd) = solve_equation(&strategy, op, norm_a, &state.rhs, &mut fwd_basis, &zeros, &mut hier).unwrap();
    assert!(hier.is_built());
    let (_, adj) = solve_equation(&strategy, op, norm_a, &b_adj, &mut adj_basis, &zeros, &mut hier).unwrap();
    assert_eq!(fwd.kind, SolverKind::FomFull);
    assert!(fwd.mor_attempted && fwd.appended.is_some());
    assert_eq!(fwd_basis.len(), 2);
    assert_eq!(adj.kind, SolverKind::Mor);
    assert_eq!(adj_basis.len(), 1);
    assert_eq!(adj.cg_iterations, 0);

    let opts = PcgOptions::new(StopCriterion::w2(1e-14), 10_000);
    let (t_ref, _) = pcg_solve(op, &state.rhs, zeros.clone(), &Identity, &opts).unwrap();
    let err: f64 = t.iter().zip(&t_ref).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err <= 1e-6 * t_ref.iter().fold(0.0f64, |m, v| m.max(v.abs())));
}

#[test]
fn zero_rhs_gives_zero_field_and_no_append() {
    let cfg = config("[8,8]", 1, "MOR_2_MGCG");
    let problem = Problem::from_config(&cfg).unwrap();
    let mut opt = Optimizer::new(problem).unwrap();
    opt.step().unwrap();
    let op = &opt.last_state().unwrap().operator;
    let n = op.dim();
    let topo = MgTopology::build(&opt.problem().grid);
    let mut hier = LazyHierarchy::new(&topo, op);
    let mut basis = ReducedBasis::new(n, 2).unwrap();
    let strategy = SolverStrategy::named("MOR_2_MGCG").unwrap();
    let (x, rec) =
        solve_equation(&strategy, op, op.inf_norm(), &vec![0.0; n], &mut basis, &vec![1.0; n], &mut hier).unwrap();
    assert!(x.iter().all(|&v| v == 0.0));
    assert!(basis.is_empty() && rec.appended.is_none());
    assert!(!hier.is_built());
}

#[test]
fn reduced_model_interpolates_at_the_last_fom_design() {
    let cfg = config("[24,24]", 1, "MOR_10_MGCG");
    let mut opt = Optimizer::new(Problem::from_config(&cfg).unwrap()).unwrap();
    let mut checked = 0;
    for _ in 0..40 {
        let rec = opt.step().unwrap();
        if rec.forward.kind == SolverKind::FomFull && rec.adjoint.kind == SolverKind::FomFull {
            let probe = opt.interpolation_probe().unwrap();
            assert!(probe.objective_error() <= 1e-8, "{}", probe.objective_error());
            assert!(probe.gradient_error() <= 1e-6, "{}", probe.gradient_error());
            checked += 1;
        }
    }
    assert!(checked >= 2);
}

struct FailAt(usize, usize);

impl RunObserver for FailAt {
    fn on_iteration(&mut self, rec: &IterationRecord, _: &Optimizer) -> tomor::Result<()> {
        self.1 += 1;
        if rec.iteration == self.0 {
            Err(Error::Usage("stop".into()))
        } else {
            Ok(())
        }
    }
}

#[test]
fn failures_abort_with_the_iteration_index() {
    let mut obs = FailAt(3, 0);
    match run_optimization(&config("[12,12]", 10, "MGCG"), &mut obs) {
        Err(Error::Aborted { iteration, .. }) => assert_eq!(iteration, 3),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(obs.1, 3);
}
