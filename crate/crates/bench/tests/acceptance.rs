//! Acceptance run: prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::time::Instant;

use rand::Rng;

use cmppi::contingency::{verify_certificate, ContingencyParams};
use cmppi::frontend::{
    add_pseudo_obstacles, convex_decompose, knot_dt, nmpc_solve, paths_equivalent, topo_prm, FrontendParams, Path,
};
use cmppi::mppi::{optimize, weights, AisConfig, CostParams, SamplingDistribution, DEFAULT_SIGMA_FLOOR};
use cmppi::nested::{evaluate_sample, NominalParams, PlanningProblem};
use cmppi::pipeline::Variant;
use cmppi::rng::{derive_seed, seeded};
use cmppi::sim::{
    collides, nominal_cost, rollout, Blocking, Cell, CollisionMap, Control, ControlBounds, ControlSequence, Environment,
    OccupancyGrid, PositionWeight, SafeZone, State,
};
use cmppi_bench::{generate_env, run_benchmark, write_csv, BenchConfig, BenchmarkOutput, MetricsRecord};

const SUITE_ENVS: usize = 30;
const SUITE_SEED: u64 = 7;

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, id: usize, name: &str, ok: bool, detail: String) {
        if !ok {
            self.failed += 1;
        }
        println!("{} criterion {id} ({name}): {detail}", if ok { "PASS" } else { "FAIL" });
    }
}

fn record(recs: &[MetricsRecord], v: Variant) -> &MetricsRecord {
    recs.iter().find(|r| r.variant == v.name()).expect("variant row")
}

fn csv_bytes(out: &BenchmarkOutput) -> Vec<u8> {
    let mut buf = Vec::new();
    write_csv(&out.records, &mut buf).unwrap();
    buf
}

fn safety(out: &BenchmarkOutput) -> (bool, String) {
    let recs = &out.records;
    let mut ok = record(recs, Variant::Mppi).unsafe_state_rate > 0.0;
    let mut parts = vec![format!("mppi {:.3}%", record(recs, Variant::Mppi).unsafe_state_rate)];
    for v in [Variant::Base, Variant::Mpc, Variant::AisMpc] {
        let unsafe_states: usize = out.episodes.iter().filter(|e| e.variant == v).map(|e| e.safety.unsafe_states).sum();
        ok &= unsafe_states == 0;
        parts.push(format!("{v} {unsafe_states} unsafe states"));
    }
    (ok, parts.join(", "))
}

fn ordering(recs: &[MetricsRecord]) -> (bool, String) {
    let r = |v| record(recs, v).reached_goal_rate;
    let (m, b, c, a) = (r(Variant::Mppi), r(Variant::Base), r(Variant::Mpc), r(Variant::AisMpc));
    let ok = a >= c && c >= b && a >= b + 10.0 && m >= a && m >= c && m >= b;
    (ok, format!("reached goal mppi {m:.2}%, base {b:.2}%, mpc {c:.2}%, ais-mpc {a:.2}%"))
}

fn finite_cost(recs: &[MetricsRecord]) -> (bool, String) {
    let f = |v| record(recs, v).finite_cost_pct.unwrap_or(f64::NAN);
    let (b, c, a) = (f(Variant::Base), f(Variant::Mpc), f(Variant::AisMpc));
    (c >= b + 1.0 && a >= b + 1.0, format!("finite-cost sampling base {b:.2}%, mpc {c:.2}%, ais-mpc {a:.2}%"))
}

fn fuzz_case(seed: u64) -> (Environment, ControlSequence) {
    let mut rng = seeded(seed);
    let mut grid = OccupancyGrid::new(60, 40, 0.1, [0.0, 0.0], Cell::Free);
    grid.fill_border(Cell::Occupied);
    for _ in 0..rng.gen_range(0..6) {
        let (x, y) = (rng.gen_range(0.0..5.5), rng.gen_range(0.0..3.5));
        grid.fill_rect(x, y, x + rng.gen_range(0.2..1.2), y + rng.gen_range(0.2..1.2), Cell::Occupied);
    }
    let n_zones = rng.gen_range(1..5);
    let mut zones = Vec::new();
    while zones.len() < n_zones {
        let c = [rng.gen_range(0.5..5.5), rng.gen_range(0.5..3.5)];
        if grid.at(c[0], c[1]) == Cell::Free {
            zones.push(SafeZone::new(c[0], c[1], rng.gen_range(0.2..0.6)));
        }
    }
    let start = loop {
        let s = State::new(rng.gen_range(0.3..5.7), rng.gen_range(0.3..3.7), rng.gen_range(-3.1..3.1));
        if !collides(&grid, &s, 0.15) {
            break s;
        }
    };
    let goal = [rng.gen_range(0.5..5.5), rng.gen_range(0.5..3.5)];
    let mut env = Environment::new(grid, zones, start, goal, rng.gen_range(1.0..4.0), 0.15, 0.1, 1.5);
    env.reveal(&start);
    let u = ControlSequence::new((0..20).map(|_| Control::new(rng.gen_range(0.0..1.5), rng.gen_range(-1.5..1.5))).collect());
    (env, u)
}

fn certificates(out: &BenchmarkOutput, cparams: &ContingencyParams) -> (bool, String) {
    let mut attached = 0;
    let mut verified = 0;
    let mut missing = 0;
    for e in out.episodes.iter().filter(|e| e.variant.uses_contingency()) {
        attached += e.safety.certified;
        verified += e.safety.verified;
        missing += e.safety.executed - e.safety.certified;
    }
    let nominal = NominalParams::default();
    let mut issued = 0;
    let mut fuzz_ok = 0;
    for seed in 0..1000 {
        let (env, u) = fuzz_case(derive_seed(99, &[seed]));
        let problem = PlanningProblem::new(&env, ControlBounds::forward(env.v_max, 1.5));
        let ev = evaluate_sample(&u, &env.start, &problem, &nominal, Some(cparams), seed);
        let Some(cert) = ev.certificate else { continue };
        issued += cert.states.len();
        let xs = rollout(&env.start, &u, env.dt);
        fuzz_ok += cert.states.iter().zip(&xs).filter(|(c, x)| verify_certificate(c, x, &env, cparams)).count();
    }
    let ok = attached == verified && missing == 0 && issued > 0 && fuzz_ok == issued;
    (
        ok,
        format!(
            "suite {verified}/{attached} attached certificates replay ({missing} executed states without one); \
             fuzz {fuzz_ok}/{issued} certificates from 1000 plans replay"
        ),
    )
}

fn mppi_properties() -> (bool, String) {
    let mut rng = seeded(5);
    let mut worst_norm = 0.0f64;
    let mut worst_shift = 0.0f64;
    let mut inf_zero = true;
    for _ in 0..2000 {
        let n = rng.gen_range(1..64);
        let mut costs: Vec<f64> =
            (0..n).map(|_| if rng.gen_bool(0.2) { f64::INFINITY } else { rng.gen_range(-100.0..100.0) }).collect();
        costs[0] = rng.gen_range(-100.0..100.0);
        let lambda = rng.gen_range(0.05..20.0);
        let shift = rng.gen_range(-1e3..1e3);
        let w = weights(&costs, lambda).unwrap();
        worst_norm = worst_norm.max((w.iter().sum::<f64>() - 1.0).abs());
        inf_zero &= costs.iter().zip(&w).all(|(c, x)| c.is_finite() || *x == 0.0);
        let shifted: Vec<f64> = costs.iter().map(|c| c + shift).collect();
        let ws = weights(&shifted, lambda).unwrap();
        worst_shift = w.iter().zip(&ws).map(|(a, b)| (a - b).abs()).fold(worst_shift, f64::max);
    }
    let all_inf = weights(&[f64::INFINITY; 4], 1.0).is_err();

    let bounds = ControlBounds::new(Control::new(-2.0, -1.0), Control::new(2.0, 1.0));
    let init = SamplingDistribution::per_step(vec![0.3; 40], [1.0, 0.05], DEFAULT_SIGMA_FLOOR).unwrap();
    let config = AisConfig {
        samples: 256,
        rounds: 10,
        elite_fraction: 0.1,
        sigma_floor: DEFAULT_SIGMA_FLOOR,
        smoothing: 0.0,
        cost: CostParams::new(0.1, 1.0).unwrap(),
    };
    let frozen = optimize(&init, &bounds, &config, &mut seeded(1), |_| f64::INFINITY).unwrap();
    let freeze = frozen.mean == init.mean() && frozen.proposal == init;

    let x0 = State::new(0.0, 0.0, 0.0);
    let goal = [2.0, 0.0];
    let start = SamplingDistribution::per_step(vec![0.0; 40], [1.0, 0.05], DEFAULT_SIGMA_FLOOR).unwrap();
    let converged = (0..100)
        .filter(|&seed| {
            let out = optimize(&start, &bounds, &config, &mut seeded(seed), |u| {
                nominal_cost(&rollout(&x0, &ControlSequence::from_flat(u), 0.1), goal, &PositionWeight::identity())
            })
            .unwrap();
            let end = *rollout(&x0, &ControlSequence::from_flat(&out.mean), 0.1).last().unwrap();
            ((end.x - goal[0]).powi(2) + (end.y - goal[1]).powi(2)).sqrt() <= 0.1
        })
        .count();
    let ok = worst_norm <= 1e-12 && worst_shift <= 1e-12 && inf_zero && all_inf && freeze && converged >= 95;
    (
        ok,
        format!(
            "max |sum w - 1| {worst_norm:.1e}, max shift change {worst_shift:.1e}, infinite costs zero-weighted {inf_zero}, \
             all-infeasible rejected {all_inf}, mean frozen {freeze}, converged {converged}/100"
        ),
    )
}

fn frontend_properties() -> (bool, String) {
    let mut rng = seeded(11);
    let mut grids_ok = 0;
    for _ in 0..20 {
        let (w, h) = (rng.gen_range(5..30), rng.gen_range(5..30));
        let mut g = OccupancyGrid::new(w, h, 0.1, [0.0, 0.0], Cell::Free);
        for iy in 0..h {
            for ix in 0..w {
                let r: f64 = rng.gen();
                g.set(ix, iy, if r < 0.2 { Cell::Occupied } else if r < 0.35 { Cell::Unknown } else { Cell::Free });
            }
        }
        let zones: Vec<SafeZone> = (0..rng.gen_range(1..4))
            .map(|_| SafeZone::new(rng.gen_range(0.0..3.0), rng.gen_range(0.0..3.0), rng.gen_range(0.05..0.5)))
            .collect();
        let r_max = rng.gen_range(0.05..2.0);
        let out = add_pseudo_obstacles(&g, &zones, r_max);
        let exact = (0..h).all(|iy| {
            (0..w).all(|ix| {
                let c = g.cell_center(ix, iy);
                let far = zones.iter().all(|z| ((c[0] - z.center[0]).powi(2) + (c[1] - z.center[1]).powi(2)).sqrt() > r_max);
                out.get(ix, iy) == if far { Cell::Occupied } else { g.get(ix, iy) }
            })
        });
        grids_ok += exact as usize;
    }

    // every NMPC solution produced along roadmap paths on generated maps
    let params = FrontendParams::default();
    let bounds = ControlBounds::forward(1.5, 1.5);
    let mut solved = 0;
    let mut reverified = 0;
    for i in 0..30 {
        let mut env = generate_env(&BenchConfig::default().envgen, derive_seed(3, &[i])).unwrap();
        env.reveal(&env.start.clone());
        let r_max = env.v_max * 10.0 * env.dt;
        let biased = add_pseudo_obstacles(&env.known, &env.safe_zones, r_max);
        let paths = topo_prm(&biased, env.start.position(), env.goal, &env.safe_zones, &params, env.robot_radius, &mut seeded(i));
        for p in paths {
            let sub = p.prefix(r_max);
            let Ok((polys, knots)) = convex_decompose(&env.known, &sub, params.knots, env.robot_radius, params.max_box_extent)
            else {
                continue;
            };
            let dt = knot_dt(sub.length(), params.knots, env.v_max, params.nmpc.speed_ratio);
            let Ok(sol) = nmpc_solve(&env.start, &knots, &polys, env.goal, &bounds, dt, &params.nmpc) else { continue };
            solved += 1;
            let xs = rollout(&env.start, &sol.controls, dt);
            let inside = xs[1..].iter().zip(&polys).all(|(s, poly)| poly.contains(s.position(), 1e-6));
            reverified += (inside && sol.controls.is_within(&bounds)) as usize;
        }
    }

    let mut g = OccupancyGrid::new(60, 40, 0.1, [0.0, 0.0], Cell::Free);
    g.fill_rect(2.5, 1.0, 3.5, 3.0, Cell::Occupied);
    let fp = FrontendParams { max_paths: 2, prm_samples: 150, ..Default::default() };
    let paths: Vec<Path> = topo_prm(&g, [0.5, 2.0], [5.5, 2.0], &[], &fp, 0.1, &mut seeded(2));
    let sight = CollisionMap::new(&g, 0.0, Blocking::Occupied);
    let distinct = paths.len() == 2 && !paths_equivalent(&paths[0], &paths[1], &sight, fp.equivalence_points);

    let ok = grids_ok == 20 && solved > 0 && reverified == solved && distinct;
    (
        ok,
        format!(
            "pseudo-obstacle grids exact {grids_ok}/20, NMPC solutions re-verified at 1e-6 {reverified}/{solved}, \
             central obstacle gives {} paths, distinct {distinct}",
            paths.len()
        ),
    )
}

fn main() {
    let mut report = Report { failed: 0 };
    let cfg = BenchConfig::default();
    let t0 = Instant::now();
    let first = run_benchmark(&Variant::ALL, SUITE_ENVS, SUITE_SEED, &cfg).expect("benchmark run");
    let suite_secs = t0.elapsed().as_secs_f64();
    println!(
        "suite: {} random maps + {} dead-end fixtures, 4 variants, {suite_secs:.0} s",
        SUITE_ENVS, cfg.dead_end_fixtures
    );
    for r in &first.records {
        println!(
            "  {:8} reached {:6.2}%  unsafe {:6.3}%  steps {}  finite {}",
            r.variant,
            r.reached_goal_rate,
            r.unsafe_state_rate,
            r.avg_steps_to_goal.map_or("-".into(), |s| format!("{s:.1}")),
            r.finite_cost_pct.map_or("-".into(), |f| format!("{f:.2}%"))
        );
    }

    let (ok, d) = safety(&first);
    report.line(1, "safety", ok && suite_secs <= 1800.0, format!("{d}; {suite_secs:.0} s"));
    let (ok, d) = ordering(&first.records);
    report.line(2, "ordering", ok, d);
    let (ok, d) = finite_cost(&first.records);
    report.line(3, "finite-cost sampling", ok, d);
    let (ok, d) = certificates(&first, &cfg.planner.contingency);
    report.line(4, "certificate soundness", ok, d);
    let (ok, d) = mppi_properties();
    report.line(5, "MPPI core", ok, d);
    let (ok, d) = frontend_properties();
    report.line(6, "frontend", ok, d);

    let second = run_benchmark(&Variant::ALL, SUITE_ENVS, SUITE_SEED, &cfg).expect("benchmark rerun");
    let (a, b) = (csv_bytes(&first), csv_bytes(&second));
    report.line(7, "determinism", a == b, format!("rerun CSV {} ({} bytes)", if a == b { "byte-identical" } else { "differs" }, a.len()));

    if report.failed > 0 {
        println!("{} criteria failed", report.failed);
        std::process::exit(1);
    }
}
