//! Seeded trials, batches, metrics and output files.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::global::{GlobalNavigator, MarkedAerialImage};
use crate::local::{frontiers_for, select_command, FrontierSet, ObstacleField, PlanningContext};
use crate::proprio::{ExemplarTracker, ImuEnergyAccumulator, IndicatorModel, IndicatorRecord, PatchEvent};
use crate::reasoning::{
    init_terrain_classes, refresh_table, BackendKind, ExemplarPool, MockBackend, PromptTemplate, TraversabilityTable,
    VlmBackend,
};
use crate::render;
use crate::sim::{check_termination, step, StuckMonitor, TerminationInputs, TrialState};
use crate::world::{patch_descriptor, Embodiment, PatchSource, Point, Pose, RobotState, ScenarioConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodVariant {
    /// Grounded reasoning, waypoint plan and frontier-aware local planner.
    Full,
    /// No waypoint plan: the local planner steers at the goal directly.
    NoGp,
    /// Table frozen at the initial estimates.
    NoIcl,
    /// Plain dynamic-window planner straight at the goal.
    Dwa,
}

impl MethodVariant {
    pub const ALL: [MethodVariant; 4] = [
        MethodVariant::Full,
        MethodVariant::NoGp,
        MethodVariant::NoIcl,
        MethodVariant::Dwa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodVariant::Full => "full",
            MethodVariant::NoGp => "no_gp",
            MethodVariant::NoIcl => "no_icl",
            MethodVariant::Dwa => "dwa",
        }
    }

    fn learns(self) -> bool {
        matches!(self, MethodVariant::Full | MethodVariant::NoGp)
    }

    fn plans_globally(self) -> bool {
        matches!(self, MethodVariant::Full | MethodVariant::NoIcl)
    }

    fn uses_frontiers(self) -> bool {
        self != MethodVariant::Dwa
    }
}

impl fmt::Display for MethodVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "full" => Ok(MethodVariant::Full),
            "no_gp" | "no_global" => Ok(MethodVariant::NoGp),
            "no_icl" => Ok(MethodVariant::NoIcl),
            "dwa" | "dwa_baseline" => Ok(MethodVariant::Dwa),
            other => Err(format!("unknown variant `{other}` (expected full, no_gp, no_icl or dwa)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    #[default]
    Mock,
    Remote,
}

impl FromStr for BackendChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "mock" => Ok(BackendChoice::Mock),
            "remote" => Ok(BackendChoice::Remote),
            other => Err(format!("unknown backend `{other}` (expected mock or remote)")),
        }
    }
}

/// Backend instance for one trial. Mock backends are seeded per trial.
pub fn make_backend(choice: BackendChoice, scenario: &ScenarioConfig, seed: u64) -> Result<Box<dyn VlmBackend>> {
    match choice {
        BackendChoice::Mock => Ok(Box::new(MockBackend::new(scenario.backend.p_err, seed))),
        #[cfg(feature = "remote")]
        BackendChoice::Remote => Ok(Box::new(crate::remote::RemoteBackend::from_env(
            &scenario.backend,
            &scenario.grid,
            &scenario.classes,
        )?)),
        #[cfg(not(feature = "remote"))]
        BackendChoice::Remote => Err(Error::Backend(
            "this build has no remote backend; rebuild with the `remote` feature".into(),
        )),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub scenario: String,
    pub variant: MethodVariant,
    pub seed: u64,
    pub status: TrialState,
    /// Simulated time at termination, seconds.
    pub sim_time_s: f64,
    pub path_length: f64,
    pub straight_line: f64,
    pub norm_traj_length: f64,
    /// Summed squared acceleration over all axes and ticks, (m/s²)².
    pub imu_energy: f64,
    pub imu_samples: usize,
    pub replans: usize,
    pub exemplars: usize,
    pub command_violations: usize,
    /// Not serialized so result files stay byte-identical across runs.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl TrialResult {
    pub fn success(&self) -> bool {
        self.status == TrialState::Success
    }
}

/// One tick of the optional trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: f64,
    pub pose: Pose,
    pub cmd: (f64, f64),
    pub local_goal: Point,
    pub tau_indicator: f64,
    pub table: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frontiers: Option<FrontierSet>,
    pub blocked: bool,
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub result: TrialResult,
    pub trajectory: Vec<Point>,
    pub trace: Vec<TraceRecord>,
    pub table: Option<TraversabilityTable>,
    /// The marked view used for the first waypoint query.
    pub marked: Option<MarkedAerialImage>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TrialOptions {
    pub backend: BackendChoice,
    pub trace: bool,
}

/// Wall clock for the unserialized timing field; wasm32 has no clock in std.
struct Stopwatch(#[cfg(not(target_arch = "wasm32"))] std::time::Instant);

impl Stopwatch {
    fn start() -> Self {
        #[cfg(not(target_arch = "wasm32"))]
        return Stopwatch(std::time::Instant::now());
        #[cfg(target_arch = "wasm32")]
        return Stopwatch();
    }

    fn seconds(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        return self.0.elapsed().as_secs_f64();
        #[cfg(target_arch = "wasm32")]
        return 0.0;
    }
}

/// Robot-frame point `ahead` metres along the heading.
fn ahead_of(pose: Pose, ahead: f64) -> Point {
    Point::new(pose.x + ahead * pose.theta.cos(), pose.y + ahead * pose.theta.sin())
}

pub fn run_trial(scenario: &ScenarioConfig, variant: MethodVariant, seed: u64, opts: TrialOptions) -> Result<TrialOutcome> {
    let mut backend = make_backend(opts.backend, scenario, seed)?;
    run_trial_with(scenario, variant, seed, backend.as_mut(), opts.trace)
}

/// Runs one trial against a caller-supplied backend.
pub fn run_trial_with(
    scenario: &ScenarioConfig,
    variant: MethodVariant,
    seed: u64,
    backend: &mut dyn VlmBackend,
    trace: bool,
) -> Result<TrialOutcome> {
    scenario.validate()?;
    let wall = Stopwatch::start();
    let grid = &scenario.grid;
    let classes = &scenario.classes;
    let planner = &scenario.planner;
    let limits = planner.limits;
    let dt = limits.dt;
    let calib = &scenario.calibration;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut weights = planner.weights.clone();
    if variant == MethodVariant::Dwa {
        weights.rho4 = 0.0;
    }
    let labels: Vec<String> = classes.iter().map(|c| c.label.clone()).collect();

    let mut table = if variant == MethodVariant::Dwa {
        TraversabilityTable::from_priors(classes)
    } else {
        init_terrain_classes(backend, grid, classes, &scenario.weather)
    };
    let prompt = PromptTemplate::with_weather(scenario.weather.clone());
    let mut pool = ExemplarPool::new(classes, calib.pool_capacity);
    let mut tracker = ExemplarTracker::new(calib.window_s);
    let indicator = IndicatorModel {
        sinkage: scenario.sinkage_calibration(),
        slip: calib.slip,
    };

    let mut nav = if variant.plans_globally() {
        Some(GlobalNavigator::new(
            backend,
            grid,
            labels.clone(),
            table.taus(),
            scenario.objective,
            scenario.start,
            scenario.goal,
            planner.waypoint_spacing,
            planner.replan_threshold,
            planner.waypoint_radius,
        )?)
    } else {
        None
    };
    let marked = nav
        .as_ref()
        .map(|n| MarkedAerialImage::new(n.graph.clone(), table.taus(), labels.clone()));

    let field = ObstacleField::new(grid, planner.d_safe, scenario.simulator.footprint_radius);
    let ctx = PlanningContext {
        field: &field,
        weights: &weights,
        limits: &limits,
        d_safe: planner.d_safe,
    };

    let mut state = RobotState::at_rest(scenario.start_pose(), scenario.embodiment, scenario.simulator.footprint_radius);
    let mut monitor = StuckMonitor::new(scenario.simulator.stuck_window_s);
    let mut imu = ImuEnergyAccumulator::default();
    let mut path_length = 0.0;
    let mut trajectory = vec![state.pose.position()];
    let mut records = Vec::new();
    let mut frontiers: Option<FrontierSet> = None;
    let mut violations = 0;
    let mut exemplar_count = 0;
    let mut next_capture = 0.0;
    let mut last_refresh = f64::NEG_INFINITY;
    let mut refresh_pending = false;
    let remote = backend.kind() == BackendKind::Remote;

    let mut tick: u64 = 0;
    let status = loop {
        let t = tick as f64 * dt;
        let pos = state.pose.position();

        if variant.learns() && t >= next_capture - 1e-9 {
            next_capture += calib.capture_interval_s;
            let centre = ahead_of(state.pose, calib.capture_ahead_m);
            if grid.contains(centre) {
                let aerial = patch_descriptor(grid, classes, centre, calib.patch_size, PatchSource::Aerial)?;
                let front = patch_descriptor(grid, classes, centre, calib.patch_size, PatchSource::Front)?;
                tracker.push_event(PatchEvent {
                    aerial,
                    front,
                    t_image: t,
                });
            }
        }

        let goal = match nav.as_mut() {
            Some(n) => n.local_goal(pos),
            None => scenario.goal,
        };

        if variant.uses_frontiers() {
            if tick.is_multiple_of(planner.frontier.classify_every.max(1) as u64) {
                frontiers = frontiers_for(backend, state.pose, grid, classes, &table, &planner.frontier, planner.tau_floor);
            } else if let Some(f) = frontiers.as_mut() {
                f.refresh(&table, planner.tau_floor);
            }
        }

        let sel = select_command(&state, goal, frontiers.as_ref(), &ctx);
        let mut cmd = sel.command();
        if limits.check_command((state.v, state.omega), cmd).is_err() {
            violations += 1;
            cmd = crate::local::brake_command(&state, &limits);
        }

        let out = step(&state, cmd, grid, classes, &scenario.simulator, &limits, &mut rng, t + dt)?;
        state = out.state;
        let t = t + dt;
        path_length += out.motion.0.abs();
        trajectory.push(state.pose.position());
        imu.accumulate(out.sample.imu_accel);

        let tau = indicator.tau(&out.sample);
        monitor.push(
            t,
            match scenario.embodiment {
                Embodiment::Wheeled => out.sample.slip_ratio(),
                Embodiment::Legged => Some(tau.value()),
            },
        );

        if variant.learns() {
            let rec = IndicatorRecord {
                t,
                position: state.pose.position(),
                tau,
            };
            for ex in tracker.observe(&rec, grid, classes) {
                pool.update(ex)?;
                exemplar_count += 1;
                refresh_pending = true;
            }
            let due = !remote || t - last_refresh >= scenario.backend.min_call_interval_s;
            if refresh_pending && due {
                refresh_table(&mut table, backend, &prompt, &pool, classes, t);
                refresh_pending = false;
                last_refresh = t;
                if let Some(n) = nav.as_mut() {
                    n.maybe_replan(backend, grid, &table.taus(), state.pose.position());
                }
            }
        }

        if trace {
            records.push(TraceRecord {
                t,
                pose: state.pose,
                cmd,
                local_goal: goal,
                tau_indicator: tau.value(),
                table: table.taus(),
                frontiers: frontiers.clone(),
                blocked: sel.blocked,
            });
        }

        let status = check_termination(
            &state,
            &TerminationInputs {
                goal: scenario.goal,
                grid,
                params: &scenario.simulator,
                monitor: &monitor,
                t,
                timeout_s: scenario.timeout_s,
            },
        );
        if status.state.is_terminal() {
            break status;
        }
        tick += 1;
    };

    let straight_line = scenario.straight_line_distance();
    let result = TrialResult {
        scenario: scenario.name.clone(),
        variant,
        seed,
        status: status.state,
        sim_time_s: status.t,
        path_length,
        straight_line,
        norm_traj_length: path_length / straight_line,
        imu_energy: imu.total(),
        imu_samples: imu.n,
        replans: nav.as_ref().map_or(0, |n| n.replans),
        exemplars: exemplar_count,
        command_violations: violations,
        wall_time_s: wall.seconds(),
    };
    Ok(TrialOutcome {
        result,
        trajectory,
        trace: records,
        table: (variant != MethodVariant::Dwa).then_some(table),
        marked,
    })
}

/// Every `(variant, seed)` pair of a batch, variant-major. Seeds are
/// `base_seed + i` and shared between variants.
pub fn batch_jobs(variants: &[MethodVariant], n_trials: usize, base_seed: u64) -> Vec<(MethodVariant, u64)> {
    variants
        .iter()
        .flat_map(|&v| (0..n_trials as u64).map(move |i| (v, base_seed + i)))
        .collect()
}

/// Runs all trials of a batch (in parallel when built with `parallel`).
/// Output order is deterministic: variant-major, then seed.
pub fn run_batch(
    scenario: &ScenarioConfig,
    variants: &[MethodVariant],
    n_trials: usize,
    base_seed: u64,
    opts: TrialOptions,
) -> Result<Vec<TrialOutcome>> {
    if n_trials == 0 {
        return Err(Error::Validation(vec!["trials must be >= 1".into()]));
    }
    let jobs = batch_jobs(variants, n_trials, base_seed);
    let run = |&(v, s): &(MethodVariant, u64)| run_trial(scenario, v, s, opts);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        jobs.par_iter().map(run).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        jobs.iter().map(run).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: MethodVariant,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Mean over all trials, successful or not.
    pub norm_traj_length: f64,
    /// Mean over successful trials; NaN when there are none.
    pub imu_energy: f64,
}

pub fn summarize(results: &[TrialResult]) -> Vec<VariantSummary> {
    let mut order: Vec<MethodVariant> = Vec::new();
    for r in results {
        if !order.contains(&r.variant) {
            order.push(r.variant);
        }
    }
    order
        .into_iter()
        .map(|variant| {
            let rows: Vec<&TrialResult> = results.iter().filter(|r| r.variant == variant).collect();
            let ok: Vec<&&TrialResult> = rows.iter().filter(|r| r.success()).collect();
            let mean = |xs: &mut dyn Iterator<Item = f64>, n: usize| {
                if n == 0 {
                    f64::NAN
                } else {
                    xs.sum::<f64>() / n as f64
                }
            };
            VariantSummary {
                variant,
                trials: rows.len(),
                successes: ok.len(),
                success_rate: ok.len() as f64 / rows.len() as f64,
                norm_traj_length: mean(&mut rows.iter().map(|r| r.norm_traj_length), rows.len()),
                imu_energy: mean(&mut ok.iter().map(|r| r.imu_energy), ok.len()),
            }
        })
        .collect()
}

pub fn summary_csv(summary: &[VariantSummary]) -> String {
    let mut s = String::from("variant,success_rate,norm_traj_length,imu_energy\n");
    for row in summary {
        s.push_str(&format!(
            "{},{},{},{}\n",
            row.variant, row.success_rate, row.norm_traj_length, row.imu_energy
        ));
    }
    s
}

pub fn results_jsonl(results: &[TrialResult]) -> Result<String> {
    let mut s = String::new();
    for r in results {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

#[derive(Debug, Clone, Default)]
pub struct OutputOptions {
    pub plot: bool,
    pub trace: bool,
    pub marked_image: Option<PathBuf>,
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes `results.jsonl` and `summary.csv`, plus the optional plots and
/// per-trial traces. Returns the paths written.
pub fn emit_outputs(
    scenario: &ScenarioConfig,
    outcomes: &[TrialOutcome],
    out_dir: &Path,
    opts: &OutputOptions,
) -> Result<Vec<PathBuf>> {
    let io = |source| Error::Io {
        path: out_dir.display().to_string(),
        source,
    };
    std::fs::create_dir_all(out_dir).map_err(io)?;
    let results: Vec<TrialResult> = outcomes.iter().map(|o| o.result.clone()).collect();
    let mut written = Vec::new();

    let p = out_dir.join("results.jsonl");
    write(&p, results_jsonl(&results)?.as_bytes())?;
    written.push(p);
    let p = out_dir.join("summary.csv");
    write(&p, summary_csv(&summarize(&results)).as_bytes())?;
    written.push(p);

    if opts.plot {
        // first trial of each variant
        let mut paths: Vec<(MethodVariant, &[Point])> = Vec::new();
        for o in outcomes {
            if !paths.iter().any(|(v, _)| *v == o.result.variant) {
                paths.push((o.result.variant, &o.trajectory));
            }
        }
        let img = render::trajectory_plot(scenario, &paths, 8);
        let p = out_dir.join("trajectories.png");
        render::save_png(&img, &p)?;
        written.push(p);
        if let Some(m) = outcomes.iter().find_map(|o| o.marked.as_ref()) {
            let p = out_dir.join("marked_aerial.png");
            render::save_png(&render::marked_aerial(&scenario.grid, &scenario.classes, m, 8), &p)?;
            written.push(p);
        }
    }

    if let Some(p) = &opts.marked_image {
        let marked = match outcomes.iter().find_map(|o| o.marked.clone()) {
            Some(m) => m,
            None => initial_marked_image(scenario)?,
        };
        render::save_png(&render::marked_aerial(&scenario.grid, &scenario.classes, &marked, 8), p)?;
        written.push(p.clone());
    }

    if opts.trace {
        let dir = out_dir.join("traces");
        std::fs::create_dir_all(&dir).map_err(io)?;
        for o in outcomes {
            let mut s = String::new();
            for r in &o.trace {
                s.push_str(&serde_json::to_string(r)?);
                s.push('\n');
            }
            let p = dir.join(format!("{}_{}.jsonl", o.result.variant, o.result.seed));
            write(&p, s.as_bytes())?;
            written.push(p);
        }
    }
    Ok(written)
}

/// Marked aerial view at the start of a trial, with τ from the class priors.
pub fn initial_marked_image(scenario: &ScenarioConfig) -> Result<MarkedAerialImage> {
    let graph = crate::global::build_waypoint_graph(
        &scenario.grid,
        scenario.planner.waypoint_spacing,
        scenario.start,
        scenario.goal,
    )?;
    let taus = scenario.classes.iter().map(|c| c.prior_tau).collect();
    let labels = scenario.classes.iter().map(|c| c.label.clone()).collect();
    Ok(MarkedAerialImage::new(graph, taus, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(variant: MethodVariant, status: TrialState, ntl: f64, e: f64) -> TrialResult {
        TrialResult {
            scenario: "t".into(),
            variant,
            seed: 0,
            status,
            sim_time_s: 1.0,
            path_length: ntl * 10.0,
            straight_line: 10.0,
            norm_traj_length: ntl,
            imu_energy: e,
            imu_samples: 10,
            replans: 0,
            exemplars: 0,
            command_violations: 0,
            wall_time_s: 0.5,
        }
    }

    #[test]
    fn summary_rates_and_means() {
        let mut rs = Vec::new();
        for i in 0..10 {
            let st = if i < 7 { TrialState::Success } else { TrialState::Immobilized };
            rs.push(result(MethodVariant::Full, st, 1.0 + i as f64 * 0.1, i as f64));
        }
        for _ in 0..3 {
            rs.push(result(MethodVariant::Dwa, TrialState::Collision, 0.5, 9.0));
        }
        let s = summarize(&rs);
        assert_eq!(s[0].success_rate, 0.7);
        assert!((s[0].norm_traj_length - 1.45).abs() < 1e-12);
        assert_eq!(s[0].imu_energy, 3.0);
        assert_eq!(s[1].success_rate, 0.0);
        assert!(s[1].imu_energy.is_nan());
        let csv = summary_csv(&s);
        assert_eq!(csv.lines().next().unwrap(), "variant,success_rate,norm_traj_length,imu_energy");
        assert!(csv.contains("dwa,0,0.5,NaN"));
    }

    #[test]
    fn wall_time_is_not_serialized() {
        let r = result(MethodVariant::Full, TrialState::Success, 1.0, 1.0);
        let s = serde_json::to_string(&r).unwrap();
        assert!(!s.contains("wall"));
        let back: TrialResult = serde_json::from_str(&s).unwrap();
        assert_eq!(back.wall_time_s, 0.0);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in MethodVariant::ALL {
            assert_eq!(v.name().parse::<MethodVariant>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.name()));
        }
        assert!("nope".parse::<MethodVariant>().is_err());
    }

    #[test]
    fn jobs_share_seeds() {
        let j = batch_jobs(&[MethodVariant::Full, MethodVariant::Dwa], 3, 10);
        assert_eq!(j.len(), 6);
        assert_eq!(j[0], (MethodVariant::Full, 10));
        assert_eq!(j[5], (MethodVariant::Dwa, 12));
    }
}
