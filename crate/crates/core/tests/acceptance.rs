//! Acceptance checks, one line per criterion. Exits non-zero if any fail.
//!
//! Tolerances and runtime bounds are fixed constants below.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::time::Instant;

use gronav::global::{path_cost, GlobalNavigator, MarkedAerialImage, NavigationObjective};
use gronav::harness::{results_jsonl, run_batch, summarize, MethodVariant, TrialOptions, TrialResult};
use gronav::local::{
    admissible_velocities, base_objective, frontier_cost, rollout, select_base_command, select_command, Frontier,
    FrontierSet, FrontierSide, ObstacleField, PlannerWeights, PlanningContext,
};
use gronav::proprio::{
    sinkage_traversability, slip_from_deltas, ExemplarTracker, ImuEnergyAccumulator, IndicatorModel, IndicatorRecord,
    PatchEvent, SinkageCalibration, SlipCalibration,
};
use gronav::reasoning::{
    BackendKind, EstimateRequest, ExemplarPool, MockBackend, PromptTemplate, Query, VlmBackend,
};
use gronav::scenarios;
use gronav::sim::{step, SimulatorParams, TrialState};
use gronav::world::{
    patch_descriptor, Embodiment, KinematicLimits, PatchDescriptor, PatchSource, Point, Pose, RobotState,
    TerrainClass, WorldGrid,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::{brute_force_min, random_graph_case};

const TRIALS: usize = 10;
const BASE_SEED: u64 = 0;
const GROUNDING_TOL: f64 = 0.05;
const STRAIGHT_TOL: f64 = 0.02;

struct Report {
    lines: Vec<(bool, String)>,
}

impl Report {
    fn record(&mut self, n: usize, name: &str, pass: bool, detail: String) {
        let line = format!("criterion {n:>2} {:<4} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        println!("{line}");
        self.lines.push((pass, line));
    }
}

fn c1_sinkage_endpoints() -> (bool, String) {
    let t = Instant::now();
    let cal = SinkageCalibration::from_force_law(&SimulatorParams::default());
    let lo = sinkage_traversability(cal.s_min, &cal).value();
    let hi = sinkage_traversability(cal.s_max, &cal).value();
    let mid = sinkage_traversability(0.5 * (cal.s_min + cal.s_max), &cal).value();
    let ok = lo == 0.0 && hi == 1.0 && (mid - 0.5).abs() <= 1e-9 && cal.gamma == 1.0;
    let secs = t.elapsed().as_secs_f64();
    (ok && secs < 1.0, format!("tau(Smin)={lo} tau(Smax)={hi} tau(mid)={mid} in {secs:.3}s"))
}

fn c2_slip_identity() -> (bool, String) {
    let t = Instant::now();
    let cal = SlipCalibration::default();
    let mut ok = true;
    for &(d, th) in &[(0.0, 0.0), (0.1, 0.02), (0.05, -0.3), (1.0, 1.0)] {
        ok &= slip_from_deltas((d, th), (d, th), &cal).value() == 0.0;
    }
    let upper = slip_from_deltas((0.1, 0.0), (0.0, 0.0), &cal).value() == 1.0
        && slip_from_deltas((0.0, 0.0), (5.0, 5.0), &cal).value() == 1.0;
    let lower = slip_from_deltas((0.1, 0.0), (0.1, 0.0), &cal).value() == 0.0;
    let secs = t.elapsed().as_secs_f64();
    (
        ok && upper && lower && secs < 1.0,
        format!("equal deltas -> 0: {ok}; clamp at 1: {upper}; clamp at 0: {lower}; {secs:.3}s"),
    )
}

fn frontier(point: Point, tau: f64, side: FrontierSide) -> Frontier {
    Frontier {
        side,
        point,
        label: String::new(),
        label_id: 0,
        tau,
    }
}

fn c3_frontier_oracle() -> (bool, String) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let pose = Pose::new(rng.random_range(0.0..50.0), rng.random_range(0.0..50.0), rng.random_range(-PI..PI));
        let r = rollout(pose, rng.random_range(0.0..1.0), rng.random_range(-1.0..1.0), 2.0, 0.1);
        let set = FrontierSet {
            frontiers: [FrontierSide::Center, FrontierSide::Left, FrontierSide::Right]
                .into_iter()
                .map(|s| {
                    let p = Point::new(rng.random_range(0.0..50.0), rng.random_range(0.0..50.0));
                    frontier(p, rng.random_range(0.05..1.0), s)
                })
                .collect(),
        };
        let products: Vec<f64> = set
            .frontiers
            .iter()
            .map(|f| (r.endpoint.x - f.point.x).hypot(r.endpoint.y - f.point.y) * f.tau)
            .collect();
        let mut oracle = products[0];
        for &p in &products[1..] {
            if p < oracle {
                oracle = p;
            }
        }
        if frontier_cost(&r, &set) != oracle {
            mismatches += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    (mismatches == 0 && secs < 5.0, format!("{mismatches}/1000 mismatches in {secs:.3}s"))
}

/// Tie-break of the local planner restated for the oracle.
fn prefer(a: (f64, f64, f64), b: (f64, f64, f64)) -> bool {
    if a.0 != b.0 {
        return a.0 < b.0;
    }
    if a.1 != b.1 {
        return a.1 > b.1;
    }
    if a.2.abs() != b.2.abs() {
        return a.2.abs() < b.2.abs();
    }
    a.2 < b.2
}

fn c4_reduction(violations: &mut usize) -> (bool, String) {
    let t = Instant::now();
    let scenario = scenarios::scenario1();
    let mut grid = scenario.grid.clone();
    // a few obstacles so collision rejection is exercised
    for (c, r) in [(30, 50), (31, 50), (50, 30), (50, 31), (10, 10)] {
        let i = grid.index(c, r);
        grid.obstacles[i] = true;
    }
    let limits = KinematicLimits::default();
    let weights = PlannerWeights {
        rho4: 0.0,
        ..PlannerWeights::default()
    };
    let field = ObstacleField::new(&grid, 2.0, 0.4);
    let ctx = PlanningContext {
        field: &field,
        weights: &weights,
        limits: &limits,
        d_safe: 2.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut differ = 0;
    for _ in 0..100 {
        let mut s = RobotState::at_rest(
            Pose::new(rng.random_range(2.0..38.0), rng.random_range(2.0..38.0), rng.random_range(-PI..PI)),
            Embodiment::Legged,
            0.4,
        );
        s.v = rng.random_range(0.0..1.0);
        s.omega = rng.random_range(-1.0..1.0);
        let goal = Point::new(rng.random_range(0.0..40.0), rng.random_range(0.0..40.0));
        let set = FrontierSet {
            frontiers: (0..3)
                .map(|_| frontier(Point::new(rng.random_range(0.0..40.0), rng.random_range(0.0..40.0)), rng.random_range(0.05..1.0), FrontierSide::Center))
                .collect(),
        };
        let with = select_command(&s, goal, Some(&set), &ctx);
        let base = select_base_command(&s, goal, &ctx);
        // independent exhaustive base selection
        let mut best: Option<(f64, f64, f64)> = None;
        for (v, w) in admissible_velocities(&limits, (s.v, s.omega), weights.v_samples, weights.omega_samples) {
            let j = base_objective(&rollout(s.pose, v, w, weights.horizon_s, limits.dt), goal, &field, &limits, &weights, 2.0);
            if j.is_finite() && best.is_none_or(|b| prefer((j, v, w), b)) {
                best = Some((j, v, w));
            }
        }
        let same_bits = with.v.to_bits() == base.v.to_bits()
            && with.omega.to_bits() == base.omega.to_bits()
            && with.cost.to_bits() == base.cost.to_bits();
        let oracle_ok = match best {
            Some((j, v, w)) => base.v == v && base.omega == w && base.cost == j,
            None => base.blocked,
        };
        if !(same_bits && oracle_ok) {
            differ += 1;
        }
        for sel in [with, base] {
            if limits.check_command((s.v, s.omega), sel.command()).is_err() {
                *violations += 1;
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    (differ == 0 && secs < 10.0, format!("{differ}/100 states differ in {secs:.3}s"))
}

fn c6_plan_optimality() -> (bool, String) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut cases = 0;
    let mut wrong = 0;
    let mut largest = 0;
    while cases < 120 {
        let Some(case) = random_graph_case(&mut rng) else { continue };
        if case.graph.len() > 20 {
            continue;
        }
        largest = largest.max(case.graph.len());
        cases += 1;
        let w = case.objective.hazard_weight();
        let mut b = MockBackend::new(0.0, 0);
        let marked = MarkedAerialImage::new(case.graph.clone(), case.taus.clone(), vec![]);
        let plan = b.select_waypoints(&marked, &case.objective).unwrap();
        let got = common::sorted_cost(&case.graph, &plan, &case.taus, w).unwrap();
        let (best, _) = brute_force_min(&case.graph, &case.taus, w);
        if got != best {
            wrong += 1;
        }
        debug_assert!(path_cost(&case.graph, &plan, &case.taus, w).is_some());
    }
    let secs = t.elapsed().as_secs_f64();
    (
        wrong == 0 && secs < 30.0,
        format!("{wrong}/{cases} graphs (up to {largest} markers) off the enumerated optimum in {secs:.3}s"),
    )
}

fn closed_form(delta: f64, kappa: f64) -> f64 {
    ((1.0 + kappa * delta).powi(2) - 1.0) / ((1.0 + kappa).powi(2) - 1.0)
}

fn c7_grounding() -> (bool, String) {
    // three 20 m strips with deformability 0, 0.5, 1; scripted straight walk
    let deltas = [0.0, 0.5, 1.0];
    let classes: Vec<TerrainClass> = deltas
        .iter()
        .enumerate()
        .map(|(i, &d)| TerrainClass {
            label: format!("d{i}"),
            deformability: d,
            slipperiness: 0.0,
            roughness: 0.1,
            prior_tau: 0.5,
            appearance: [50 * i as u8, 100, 100],
        })
        .collect();
    let mut grid = WorldGrid::uniform(120, 20, 0.5, 0);
    for r in 0..20 {
        for c in 0..120 {
            let i = grid.index(c, r);
            grid.cells[i] = c / 40;
        }
    }
    let params = SimulatorParams::default().noise_free();
    let limits = KinematicLimits::default();
    let model = IndicatorModel {
        sinkage: SinkageCalibration::from_force_law(&params),
        slip: SlipCalibration::default(),
    };
    let mut state = RobotState::at_rest(Pose::new(0.5, 5.0, 0.0), Embodiment::Legged, 0.4);
    state.v = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut tracker = ExemplarTracker::new(1.0);
    let mut pool = ExemplarPool::new(&classes, 8);
    let mut t = 0.0;
    let mut tick = 0u64;
    while state.pose.x < 59.0 {
        if tick.is_multiple_of(10) {
            let c = Point::new(state.pose.x + 5.5, state.pose.y);
            if grid.contains(c) {
                let aerial = patch_descriptor(&grid, &classes, c, 5.0, PatchSource::Aerial).unwrap();
                let front = patch_descriptor(&grid, &classes, c, 5.0, PatchSource::Front).unwrap();
                tracker.push_event(PatchEvent { aerial, front, t_image: t });
            }
        }
        let out = step(&state, (1.0, 0.0), &grid, &classes, &params, &limits, &mut rng, t + limits.dt).unwrap();
        state = out.state;
        t += limits.dt;
        tick += 1;
        let rec = IndicatorRecord {
            t,
            position: state.pose.position(),
            tau: model.tau(&out.sample),
        };
        for ex in tracker.observe(&rec, &grid, &classes) {
            pool.update(ex).unwrap();
        }
    }
    let mut backend = MockBackend::new(0.0, 0);
    let prompt = PromptTemplate::with_weather("clear");
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    let mut enough = true;
    for (i, &d) in deltas.iter().enumerate() {
        enough &= pool.buffer(i).len() >= 3;
        let q = Query::Label(classes[i].label.clone());
        let est = backend
            .estimate(&EstimateRequest { prompt: &prompt, pool: &pool, query: &q, classes: &classes })
            .unwrap();
        let err = (est - closed_form(d, params.kappa)).abs();
        worst = worst.max(err);
        detail.push(format!("d={d}: n={} tau={est:.4}", pool.buffer(i).len()));
    }
    (enough && worst <= GROUNDING_TOL, format!("{} (max err {worst:.2e})", detail.join(", ")))
}

/// Counts waypoint queries passing through.
struct Counting {
    inner: MockBackend,
    waypoint_calls: usize,
}

impl VlmBackend for Counting {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }
    fn classify(&mut self, patch: &PatchDescriptor, classes: &[TerrainClass]) -> gronav::Result<String> {
        self.inner.classify(patch, classes)
    }
    fn estimate(&mut self, req: &EstimateRequest<'_>) -> gronav::Result<f64> {
        self.inner.estimate(req)
    }
    fn select_waypoints(&mut self, m: &MarkedAerialImage, o: &NavigationObjective) -> gronav::Result<Vec<usize>> {
        self.waypoint_calls += 1;
        self.inner.select_waypoints(m, o)
    }
}

fn c8_replan_trigger() -> (bool, String) {
    let s = scenarios::scenario1();
    let labels: Vec<String> = s.classes.iter().map(|c| c.label.clone()).collect();
    let priors: Vec<f64> = s.classes.iter().map(|c| c.prior_tau).collect();
    let run = |delta: f64| -> usize {
        let mut b = Counting {
            inner: MockBackend::new(0.0, 0),
            waypoint_calls: 0,
        };
        let mut nav = GlobalNavigator::new(
            &mut b, &s.grid, labels.clone(), priors.clone(), s.objective, s.start, s.goal,
            s.planner.waypoint_spacing, s.planner.replan_threshold, s.planner.waypoint_radius,
        )
        .unwrap();
        b.waypoint_calls = 0;
        let ids = &nav.plan.ids;
        let on_path = nav.graph.edge(ids[0], ids[1]).unwrap().worst_label(&priors);
        let mut now = priors.clone();
        now[on_path] = (now[on_path] + delta).min(1.0);
        // the same table arrives on several ticks; only the first may trigger
        for _ in 0..5 {
            nav.maybe_replan(&mut b, &s.grid, &now, s.start);
        }
        b.waypoint_calls
    };
    let big = run(0.3);
    let small = run(0.1);
    (big == 1 && small == 0, format!("delta 0.3 -> {big} re-query, delta 0.1 -> {small}"))
}

fn c9_table_reproduction(violations: &mut usize) -> (bool, String, HashMap<&'static str, String>) {
    let t = Instant::now();
    let mut ok = true;
    let mut notes = Vec::new();
    let mut jsonl = HashMap::new();
    for name in scenarios::HAZARD_NAMES {
        let sc = scenarios::by_name(name).unwrap();
        let out = run_batch(&sc, &MethodVariant::ALL, TRIALS, BASE_SEED, TrialOptions::default()).unwrap();
        let results: Vec<TrialResult> = out.into_iter().map(|o| o.result).collect();
        *violations += results.iter().map(|r| r.command_violations).sum::<usize>();
        jsonl.insert(name, results_jsonl(&results).unwrap());
        let sum: HashMap<MethodVariant, _> = summarize(&results).into_iter().map(|s| (s.variant, s)).collect();
        let full = &sum[&MethodVariant::Full];
        let dwa = &sum[&MethodVariant::Dwa];
        let mut checks = vec![
            ("full>=0.9", full.success_rate >= 0.9),
            ("dwa<=0.5", dwa.success_rate <= 0.5),
            ("full>=no_gp", full.success_rate >= sum[&MethodVariant::NoGp].success_rate),
            ("full>=no_icl", full.success_rate >= sum[&MethodVariant::NoIcl].success_rate),
            ("len<=1.5", full.norm_traj_length <= 1.5),
        ];
        if full.successes > 0 && dwa.successes > 0 {
            checks.push(("imu<dwa", full.imu_energy < dwa.imu_energy));
        }
        let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
        ok &= failed.is_empty();
        println!(
            "    {name}: full {:.1}/{:.3}/{:.0}  no_gp {:.1}  no_icl {:.1}  dwa {:.1}{}",
            full.success_rate,
            full.norm_traj_length,
            full.imu_energy,
            sum[&MethodVariant::NoGp].success_rate,
            sum[&MethodVariant::NoIcl].success_rate,
            dwa.success_rate,
            if failed.is_empty() { String::new() } else { format!("  failed: {}", failed.join(",")) }
        );
        notes.push(format!("{}:{}", &name[..9], if failed.is_empty() { "ok" } else { "fail" }));
        // the successful-trial length bound
        for r in results.iter().filter(|r| r.status == TrialState::Success) {
            ok &= r.path_length >= r.straight_line - sc.simulator.goal_radius - 1e-9;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    ok &= secs < 300.0;
    (ok, format!("{} in {secs:.1}s", notes.join(" ")), jsonl)
}

fn c10_determinism(first: &HashMap<&'static str, String>) -> (bool, String) {
    let mut same = 0;
    for name in scenarios::HAZARD_NAMES {
        let sc = scenarios::by_name(name).unwrap();
        let out = run_batch(&sc, &MethodVariant::ALL, TRIALS, BASE_SEED, TrialOptions::default()).unwrap();
        let results: Vec<TrialResult> = out.into_iter().map(|o| o.result).collect();
        if results_jsonl(&results).unwrap() == first[name] {
            same += 1;
        }
    }
    (same == 4, format!("{same}/4 scenarios byte-identical"))
}

fn c11_metrics(violations: &mut usize) -> (bool, String) {
    let mut acc = ImuEnergyAccumulator::default();
    for a in [[1.0, 2.0, 3.0], [0.5, -1.0, 0.0], [0.0, 0.0, 2.0]] {
        acc.accumulate(a);
    }
    let hand = 1.0 + 4.0 + 9.0 + 0.25 + 1.0 + 0.0 + 0.0 + 0.0 + 4.0;
    let energy_ok = acc.total() == hand;

    let s = scenarios::flat_concrete();
    let params = SimulatorParams::default().noise_free();
    let limits = s.planner.limits;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut state = RobotState::at_rest(Pose::new(5.0, 20.0, 0.0), Embodiment::Legged, 0.4);
    let start = state.pose.position();
    let mut length = 0.0;
    for k in 0..250 {
        let cmd = ((state.v + limits.a_max * limits.dt).min(1.0), 0.0);
        if limits.check_command((state.v, state.omega), cmd).is_err() {
            *violations += 1;
        }
        let out = step(&state, cmd, &s.grid, &s.classes, &params, &limits, &mut rng, (k + 1) as f64 * limits.dt).unwrap();
        length += out.motion.0.abs();
        state = out.state;
    }
    let ratio = length / start.distance(&state.pose.position());
    let ratio_ok = (ratio - 1.0).abs() <= STRAIGHT_TOL;
    (
        energy_ok && ratio_ok,
        format!("E_total={} (hand {hand}); straight-run ratio {ratio:.6}", acc.total()),
    )
}

fn main() {
    let mut report = Report { lines: Vec::new() };
    let mut violations = 0usize;

    let (p, d) = c1_sinkage_endpoints();
    report.record(1, "sinkage endpoints", p, d);
    let (p, d) = c2_slip_identity();
    report.record(2, "slip identity", p, d);
    let (p, d) = c3_frontier_oracle();
    report.record(3, "frontier-cost oracle", p, d);
    let (p, d) = c4_reduction(&mut violations);
    report.record(4, "rho4=0 reduction", p, d);
    let (p, d) = c6_plan_optimality();
    report.record(6, "mock-plan optimality", p, d);
    let (p, d) = c7_grounding();
    report.record(7, "grounding convergence", p, d);
    let (p, d) = c8_replan_trigger();
    report.record(8, "replan trigger", p, d);
    let (p, d, first) = c9_table_reproduction(&mut violations);
    report.record(9, "directional reproduction", p, d);
    let (p, d) = c10_determinism(&first);
    report.record(10, "determinism", p, d);
    let (p, d) = c11_metrics(&mut violations);
    report.record(11, "metric exactness", p, d);
    report.record(5, "admissibility", violations == 0, format!("{violations} out-of-limit commands across all runs above"));

    let failed = report.lines.iter().filter(|l| !l.0).count();
    println!("acceptance: {}/{} criteria pass", report.lines.len() - failed, report.lines.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
