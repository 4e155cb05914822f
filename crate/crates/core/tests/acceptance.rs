//! End-to-end acceptance suite. Runs every criterion, prints one PASS/FAIL
//! line per criterion and exits nonzero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tracking_admm::baselines::run_parallel;
use tracking_admm::certify::{build_certificate, check_descent, check_prop1, identity_monitors, ReferencePoint};
use tracking_admm::engine::run;
use tracking_admm::export::{write_lambdas_csv, write_trajectory_csv};
use tracking_admm::instances::{desk_network, random_problem, RandomConfig};
use tracking_admm::network::Graph;
use tracking_admm::pev;
use tracking_admm::problem::local_dual_value;
use tracking_admm::qp::solve_centralized;
use tracking_admm::{ConsensusMatrix, EngineConfig, PrimalDualPair, Problem, Trajectory};

const DESK_SEEDS: std::ops::Range<u64> = 0..6;
const DESK_PENALTIES: [f64; 3] = [0.1, 1.0, 10.0];
const REFERENCE_TOL: f64 = 1e-9;

fn long_run(c: f64, max_iters: usize) -> EngineConfig {
    EngineConfig {
        max_iters,
        fixed_budget: true,
        ..EngineConfig::with_c(c)
    }
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct DeskRun {
    seed: u64,
    c: f64,
    problem: Problem,
    w: ConsensusMatrix,
    reference: PrimalDualPair,
    traj: Trajectory,
}

fn desk_runs() -> Vec<DeskRun> {
    let mut out = Vec::new();
    for seed in DESK_SEEDS {
        let problem: Problem = random_problem(&RandomConfig::desk(seed)).unwrap();
        let w: ConsensusMatrix = desk_network(problem.num_agents(), seed).unwrap();
        let reference = solve_centralized(&problem, REFERENCE_TOL).unwrap();
        for c in DESK_PENALTIES {
            let traj = run(&problem, &w, &long_run(c, 5000)).unwrap();
            out.push(DeskRun {
                seed,
                c,
                problem: problem.clone(),
                w: w.clone(),
                reference: reference.clone(),
                traj,
            });
        }
    }
    out
}

/// Criteria 1 to 3 share the same 25 runs.
fn identity_suite() -> Vec<(u64, tracking_admm::certify::IdentityReport)> {
    (0..25u64)
        .map(|seed| {
            let problem: Problem = random_problem(&RandomConfig {
                seed: 100 + seed,
                ..RandomConfig::default()
            })
            .unwrap();
            let w: ConsensusMatrix = desk_network(problem.num_agents(), 100 + seed).unwrap();
            let traj = run(&problem, &w, &long_run(1.0, 500)).unwrap();
            (seed, identity_monitors(&traj, &problem, &w))
        })
        .collect()
}

fn criterion_1(reports: &[(u64, tracking_admm::certify::IdentityReport)]) -> Outcome {
    let worst = reports.iter().map(|(_, r)| r.tracking).fold(0.0, f64::max);
    let rounds = reports.iter().map(|(_, r)| r.rounds).min().unwrap_or(0);
    outcome(
        worst <= 1e-9 && rounds >= 500,
        format!("max scaled tracking residual {worst:.3e} over {} runs, min rounds {rounds}", reports.len()),
    )
}

fn criterion_2(reports: &[(u64, tracking_admm::certify::IdentityReport)]) -> Outcome {
    let worst = reports.iter().map(|(_, r)| r.average_dual).fold(0.0, f64::max);
    outcome(worst <= 1e-9, format!("max scaled average-dual residual {worst:.3e}"))
}

fn criterion_3(reports: &[(u64, tracking_admm::certify::IdentityReport)]) -> Outcome {
    let d = reports.iter().map(|(_, r)| r.tracker_recursion).fold(0.0, f64::max);
    let l = reports.iter().map(|(_, r)| r.dual_recursion).fold(0.0, f64::max);
    outcome(
        d <= 1e-8 && l <= 1e-8,
        format!("max tracker recursion residual {d:.3e}, dual recursion residual {l:.3e}"),
    )
}

fn criterion_4() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let problem: Problem = random_problem(&RandomConfig {
            curvature: 1e-6,
            seed: 200 + seed,
            ..RandomConfig::default()
        })
        .unwrap();
        let w = ConsensusMatrix::averaging(problem.num_agents()).unwrap();
        let cfg = EngineConfig {
            subproblem_tol: 1e-10,
            ..long_run(1.0, 100)
        };
        let a = run(&problem, &w, &cfg).unwrap();
        let b = run_parallel(&problem, &cfg).unwrap();
        if a.metrics.len() != 101 || b.metrics.len() != 101 {
            return outcome(false, format!("seed {seed}: a run stopped early"));
        }
        for (ma, mb) in a.metrics.iter().zip(&b.metrics) {
            worst = worst.max((&ma.x - &mb.x).amax());
        }
    }
    outcome(worst <= 1e-6, format!("max per-round primal difference {worst:.3e} over 10 instances"))
}

fn criterion_5(runs: &[DeskRun]) -> Outcome {
    let mut failures = Vec::new();
    let mut latest = 0;
    for r in runs {
        let hit = r
            .traj
            .metrics
            .iter()
            .position(|m| m.e_d <= 1e-4 && m.e_l <= 1e-4 && m.d_bar_inf() <= 1e-4);
        let last = r.traj.last();
        let at_end = last.e_d <= 1e-4 && last.e_l <= 1e-4 && last.d_bar_inf() <= 1e-4;
        match hit {
            Some(k) if at_end => latest = latest.max(k),
            _ => failures.push(format!("seed {} c {}", r.seed, r.c)),
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{} runs, slowest reached the thresholds at round {latest}", runs.len())
        } else {
            format!("missed: {}", failures.join(", "))
        },
    )
}

/// Minimum of a linear program over `{x : G x ≤ h, E x = e}` by enumerating
/// basic solutions; only for tiny bounded instances.
fn vertex_minimum(cost: &DVector<f64>, g: &DMatrix<f64>, h: &DVector<f64>, e: &DMatrix<f64>, rhs: &DVector<f64>) -> f64 {
    let n = cost.len();
    let pick = n - e.nrows();
    let mut best = f64::INFINITY;
    let mut chosen = Vec::new();
    fn subsets(start: usize, m: usize, k: usize, chosen: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
        if chosen.len() == k {
            visit(chosen);
            return;
        }
        for i in start..m {
            chosen.push(i);
            subsets(i + 1, m, k, chosen, visit);
            chosen.pop();
        }
    }
    subsets(0, g.nrows(), pick, &mut chosen, &mut |rows| {
        let mut a = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);
        for r in 0..e.nrows() {
            a.row_mut(r).copy_from(&e.row(r));
            b[r] = rhs[r];
        }
        for (k, &i) in rows.iter().enumerate() {
            a.row_mut(e.nrows() + k).copy_from(&g.row(i));
            b[e.nrows() + k] = h[i];
        }
        let Some(x) = a.lu().solve(&b) else { return };
        let feasible = (g * &x - h).iter().all(|&v| v <= 1e-9) && (e * &x - rhs).amax() <= 1e-9;
        if feasible {
            best = best.min(cost.dot(&x));
        }
    });
    best
}

fn two_agent_lp_check() -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let problem: Problem = random_problem(&RandomConfig {
            n_agents: 2,
            coupling_dim: 1,
            dim_range: [2, 2],
            quad_scale: 0.0,
            general_rows: 1,
            seed: 300 + seed,
            ..RandomConfig::default()
        })
        .unwrap();
        let n = problem.total_dim();
        let mut cost = DVector::zeros(n);
        let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
        let mut e = DMatrix::zeros(problem.coupling_dim(), n);
        for (i, agent) in problem.agents().iter().enumerate() {
            let off = problem.offset(i);
            let ni = agent.dim();
            cost.rows_mut(off, ni).copy_from(agent.objective().lin());
            let region = agent.region();
            for j in 0..ni {
                let mut up = DVector::zeros(n);
                up[off + j] = 1.0;
                rows.push((up.clone(), region.upper()[j]));
                rows.push((-up, -region.lower()[j]));
            }
            for r in 0..region.ineq_a().nrows() {
                let mut row = DVector::zeros(n);
                row.rows_mut(off, ni).copy_from(&region.ineq_a().row(r).transpose());
                rows.push((row, region.ineq_b()[r]));
            }
            e.view_mut((0, off), (problem.coupling_dim(), ni)).copy_from(agent.coupling().a());
        }
        let g = DMatrix::from_fn(rows.len(), n, |r, c| rows[r].0[c]);
        let h = DVector::from_fn(rows.len(), |r, _| rows[r].1);
        let oracle = vertex_minimum(&cost, &g, &h, &e, problem.b());
        let solved = solve_centralized(&problem, REFERENCE_TOL).map_err(|e| e.to_string())?;
        let gap = (solved.cost - oracle).abs();
        if gap > 1e-6 * (1.0 + oracle.abs()) {
            return Err(format!("seed {seed}: centralized {} vs vertex oracle {oracle}", solved.cost));
        }
        worst = worst.max(gap);
    }
    Ok(worst)
}

fn criterion_6(runs: &[DeskRun]) -> Outcome {
    let oracle_gap = match two_agent_lp_check() {
        Ok(g) => g,
        Err(msg) => return outcome(false, msg),
    };
    let mut worst_cost: f64 = 0.0;
    let mut worst_dual: f64 = 0.0;
    for r in runs {
        let f = r.reference.cost;
        let scale = 1.0 + f.abs();
        let last = r.traj.last();
        worst_cost = worst_cost.max((last.cost - f).abs() / scale);
        let p = r.problem.coupling_dim();
        let mut dual = 0.0;
        for (i, agent) in r.problem.agents().iter().enumerate() {
            let lambda = last.lambda_stack.rows(i * p, p).into_owned();
            dual += local_dual_value(agent, &lambda, 1e-10).unwrap().0;
        }
        worst_dual = worst_dual.max((f - dual) / scale);
    }
    outcome(
        worst_cost <= 1e-3 && worst_dual <= 1e-3,
        format!(
            "max scaled cost gap {worst_cost:.3e}, max scaled dual shortfall {worst_dual:.3e}, vertex-oracle agreement {oracle_gap:.1e}"
        ),
    )
}

fn criterion_7(runs: &[DeskRun]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut min_p = f64::INFINITY;
    let mut min_q = f64::INFINITY;
    let mut cross: f64 = 0.0;
    for g in 0..20u64 {
        let n = rng.gen_range(2..=20);
        let prob = rng.gen_range(0.15..0.9);
        let graph = Graph::erdos_renyi(n, prob, 400 + g).unwrap();
        let w: ConsensusMatrix = ConsensusMatrix::metropolis(&graph).unwrap().squared();
        let cert = build_certificate(&w, 1).unwrap();
        min_p = min_p.min(cert.min_eig_p);
        min_q = min_q.min(cert.min_eig_q);
        cross = cross.max(cert.cross_term_error);
    }
    let certs_ok = min_p > 0.0 && min_q > 0.0 && cross <= 1e-9;

    let mut worst_descent = f64::NEG_INFINITY;
    let mut worst_prop1 = f64::NEG_INFINITY;
    let mut failures = Vec::new();
    for r in runs {
        let cert = build_certificate(&r.w, r.problem.coupling_dim()).unwrap();
        let point = ReferencePoint::new(&r.problem, &r.reference).unwrap();
        let d = check_descent(&r.traj, &point, &cert, 1e-6).unwrap();
        let p = check_prop1(&r.traj, &point, Some(&cert), 1e-6).unwrap();
        worst_descent = worst_descent.max(d.max_slack / d.tolerance * 1e-6);
        worst_prop1 = worst_prop1.max(p.max_slack / p.tolerance * 1e-6);
        if !(d.passes && p.passes) {
            failures.push(format!("seed {} c {}", r.seed, r.c));
        }
    }
    outcome(
        certs_ok && failures.is_empty(),
        format!(
            "20 graphs: min eig P {min_p:.3e}, min eig Q {min_q:.3e}, cross-term error {cross:.1e}; \
             worst scaled slack descent {worst_descent:.3e}, prop1 {worst_prop1:.3e}{}",
            if failures.is_empty() {
                String::new()
            } else {
                format!("; failed on {}", failures.join(", "))
            }
        ),
    )
}

fn criterion_8() -> Outcome {
    let (pcfg, ecfg) = pev::preset_desk_scale::<f64>();
    let problem: Problem = pev::generate(&pcfg).unwrap();
    let w: ConsensusMatrix = pev::preset_network(problem.num_agents(), pcfg.seed).unwrap();
    let reference = solve_centralized(&problem, 1e-8).unwrap();
    let traj = run(&problem, &w, &ecfg).unwrap();
    let b_inf = problem.b().amax();
    let f = reference.cost;
    let last = traj.last();
    let desk_rounds = traj.rounds();
    let desk_inf = last.coupling_inf / b_inf;
    let desk_gap = (last.cost - f).abs() / (1.0 + f.abs());
    let desk_ok = desk_rounds <= 2000 && desk_inf <= 1e-3 && desk_gap <= 1e-3;

    let (pcfg, ecfg) = pev::preset_paper_scale::<f64>();
    let problem: Problem = pev::generate(&pcfg).unwrap();
    let w: ConsensusMatrix = pev::preset_network(problem.num_agents(), pcfg.seed).unwrap();
    let reference = solve_centralized(&problem, 1e-8).unwrap();
    let traj = run(&problem, &w, &ecfg).unwrap();
    let (first, last) = (&traj.metrics[0], traj.last());
    let gap_ratio = (last.cost - reference.cost).abs() / (first.cost - reference.cost).abs();
    let inf_ratio = last.coupling_inf / first.coupling_inf;
    let paper_ok = traj.rounds() == 200 && gap_ratio < 0.1 && inf_ratio < 0.1;
    outcome(
        desk_ok && paper_ok,
        format!(
            "desk: {desk_rounds} rounds, couplingInf/|b| {desk_inf:.2e}, |costGap|/(1+|f*|) {desk_gap:.2e}; \
             paper: round-200 ratios costGap {gap_ratio:.2e}, couplingInf {inf_ratio:.2e}"
        ),
    )
}

fn criterion_9() -> Outcome {
    let csvs = |threads: usize| -> (Vec<u8>, Vec<u8>, Vec<u8>) {
        let problem: Problem = random_problem(&RandomConfig::desk(0)).unwrap();
        let w: ConsensusMatrix = desk_network(problem.num_agents(), 0).unwrap();
        let reference = solve_centralized(&problem, REFERENCE_TOL).unwrap();
        let cfg = EngineConfig {
            threads: Some(threads),
            ..long_run(1.0, 300)
        };
        let traj = run(&problem, &w, &cfg).unwrap();
        let mut a = Vec::new();
        write_trajectory_csv(&traj, Some(reference.cost), &mut a).unwrap();
        let mut b = Vec::new();
        write_lambdas_csv(&traj, &mut b).unwrap();

        let (pcfg, _) = pev::preset_desk_scale::<f64>();
        let problem: Problem = pev::generate(&pcfg).unwrap();
        let w: ConsensusMatrix = pev::preset_network(problem.num_agents(), pcfg.seed).unwrap();
        let cfg = EngineConfig {
            threads: Some(threads),
            ..long_run(pev::DESK_C, 100)
        };
        let traj = run(&problem, &w, &cfg).unwrap();
        let mut c = Vec::new();
        write_trajectory_csv(&traj, None, &mut c).unwrap();
        write_lambdas_csv(&traj, &mut c).unwrap();
        (a, b, c)
    };
    let base = csvs(1);
    let same = [2, 4].iter().all(|&t| csvs(t) == base);
    outcome(same, "trajectory and multiplier CSVs compared for 1, 2 and 4 threads".into())
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let identities = identity_suite();
    results.push((1, criterion_1(&identities)));
    results.push((2, criterion_2(&identities)));
    results.push((3, criterion_3(&identities)));
    results.push((4, criterion_4()));
    let desk = desk_runs();
    results.push((5, criterion_5(&desk)));
    results.push((6, criterion_6(&desk)));
    results.push((7, criterion_7(&desk)));
    results.push((8, criterion_8()));
    results.push((9, criterion_9()));

    let mut all = true;
    for (id, o) in &results {
        all &= o.pass;
        println!("criterion {id}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance finished in {:.1}s", start.elapsed().as_secs_f64());
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
