//! Dynamic-window local planner with the terrain-aware frontier term.

use std::cmp::Ordering;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::proprio::Tau;
use crate::reasoning::{TraversabilityTable, VlmBackend};
use crate::sim::integrate_arc;
use crate::world::{
    normalize_angle, patch_descriptor, FrontierParams, KinematicLimits, LabelId, PatchSource, Point, Pose,
    RobotState, TerrainClass, WorldGrid,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerWeights {
    /// Heading.
    pub rho1: f64,
    /// Obstacle proximity.
    pub rho2: f64,
    /// Velocity.
    pub rho3: f64,
    /// Frontier.
    pub rho4: f64,
    pub horizon_s: f64,
    pub v_samples: usize,
    pub omega_samples: usize,
}

impl Default for PlannerWeights {
    fn default() -> Self {
        Self {
            rho1: 1.0,
            rho2: 1.0,
            rho3: 0.3,
            rho4: 1.5,
            horizon_s: 2.0,
            v_samples: 11,
            omega_samples: 21,
        }
    }
}

impl PlannerWeights {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, rho) in [("rho1", self.rho1), ("rho2", self.rho2), ("rho3", self.rho3), ("rho4", self.rho4)] {
            if !(rho >= 0.0 && rho.is_finite()) {
                v.push(format!("planner.weights.{name} must be a finite value >= 0"));
            }
        }
        if !(self.horizon_s > 0.0 && self.horizon_s.is_finite()) {
            v.push("planner.weights.horizon_s must be > 0".into());
        }
        if self.v_samples < 3 || self.omega_samples < 3 {
            v.push("planner.weights sample counts must be >= 3".into());
        }
        v
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if hi - lo < 1e-12 {
        return vec![lo];
    }
    (0..n)
        .map(|k| if k + 1 == n { hi } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 })
        .collect()
}

/// Sample grid over the velocity box intersected with the one-tick
/// acceleration window around `current`. Ordered v-major, ascending.
pub fn admissible_velocities(
    limits: &KinematicLimits,
    current: (f64, f64),
    v_samples: usize,
    omega_samples: usize,
) -> Vec<(f64, f64)> {
    let (v, w) = current;
    let dv = limits.a_max * limits.dt;
    let dw = limits.alpha_max * limits.dt;
    let vs = linspace((v - dv).max(0.0), (v + dv).min(limits.v_max), v_samples);
    let ws = linspace(
        (w - dw).max(-limits.omega_max),
        (w + dw).min(limits.omega_max),
        omega_samples,
    );
    vs.iter()
        .flat_map(|&v| ws.iter().map(move |&w| (v, w)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub v: f64,
    pub omega: f64,
    /// Poses after each step; the start pose is not included.
    pub poses: Vec<Pose>,
    pub endpoint: Point,
}

impl Rollout {
    pub fn end_pose(&self) -> Pose {
        *self.poses.last().expect("rollout has at least one pose")
    }
}

/// Ideal unicycle propagation of `(v, ω)` over `horizon` in `dt` steps; the
/// last step is shortened when `horizon` is not a multiple of `dt`.
pub fn rollout(pose: Pose, v: f64, omega: f64, horizon: f64, dt: f64) -> Rollout {
    let n = ((horizon / dt) - 1e-9).ceil().max(1.0) as usize;
    let mut poses = Vec::with_capacity(n);
    let mut p = pose;
    for k in 0..n {
        let h = if k + 1 == n { horizon - dt * (n - 1) as f64 } else { dt };
        p = integrate_arc(p, v * h, omega * h);
        poses.push(p);
    }
    Rollout {
        v,
        omega,
        endpoint: p.position(),
        poses,
    }
}

/// Obstacle lookups for rollout scoring. Cells far from every obstacle are
/// flagged up front so most poses skip the exact search.
#[derive(Debug, Clone)]
pub struct ObstacleField<'a> {
    grid: &'a WorldGrid,
    near: Vec<bool>,
    reach: f64,
    footprint: f64,
}

impl<'a> ObstacleField<'a> {
    pub fn new(grid: &'a WorldGrid, d_safe: f64, footprint: f64) -> Self {
        let reach = d_safe.max(footprint);
        let res = grid.resolution;
        let mut near = vec![false; grid.cells.len()];
        // a point in a cell is within `reach` of an obstacle only if the
        // cell centre is within reach + half diagonal
        let margin = reach + res * std::f64::consts::SQRT_2;
        let span = (margin / res).ceil() as isize + 1;
        for r in 0..grid.height {
            for c in 0..grid.width {
                if !grid.obstacles[grid.index(c, r)] {
                    continue;
                }
                for rr in (r as isize - span).max(0)..=(r as isize + span).min(grid.height as isize - 1) {
                    for cc in (c as isize - span).max(0)..=(c as isize + span).min(grid.width as isize - 1) {
                        let centre = grid.cell_center(cc as usize, rr as usize);
                        if grid.distance_to_cell(centre, c, r) <= margin {
                            near[grid.index(cc as usize, rr as usize)] = true;
                        }
                    }
                }
            }
        }
        Self {
            grid,
            near,
            reach,
            footprint,
        }
    }

    pub fn grid(&self) -> &WorldGrid {
        self.grid
    }

    /// `None` if the footprint at `p` collides or leaves the grid; otherwise
    /// the clearance, capped at the search reach.
    pub fn clearance(&self, p: Point) -> Option<f64> {
        if !self.grid.disc_inside(p, self.footprint) {
            return None;
        }
        let (c, r) = self.grid.cell_of(p).ok()?;
        if !self.near[self.grid.index(c, r)] {
            return Some(self.reach);
        }
        match self.grid.obstacle_clearance(p, self.reach) {
            Some(d) if d < self.footprint => None,
            Some(d) => Some(d),
            None => Some(self.reach),
        }
    }
}

/// Normalized cost terms of one rollout. `dist` is infinite on collision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostTerms {
    pub head: f64,
    pub dist: f64,
    pub vel: f64,
}

pub fn cost_terms(r: &Rollout, goal: Point, field: &ObstacleField<'_>, limits: &KinematicLimits, d_safe: f64) -> CostTerms {
    let end = r.end_pose();
    let head = if end.position().distance(&goal) < 1e-9 {
        0.0
    } else {
        let bearing = (goal.y - end.y).atan2(goal.x - end.x);
        normalize_angle(bearing - end.theta).abs() / PI
    };
    let mut clearance = f64::INFINITY;
    for p in &r.poses {
        match field.clearance(p.position()) {
            Some(c) => clearance = clearance.min(c),
            None => {
                clearance = -1.0;
                break;
            }
        }
    }
    let dist = if clearance < 0.0 {
        f64::INFINITY
    } else {
        (1.0 - clearance / d_safe).clamp(0.0, 1.0)
    };
    CostTerms {
        head,
        dist,
        vel: (limits.v_max - r.v) / limits.v_max,
    }
}

/// Weighted base cost; infinite for colliding rollouts.
pub fn base_objective(
    r: &Rollout,
    goal: Point,
    field: &ObstacleField<'_>,
    limits: &KinematicLimits,
    weights: &PlannerWeights,
    d_safe: f64,
) -> f64 {
    let t = cost_terms(r, goal, field, limits, d_safe);
    if t.dist.is_infinite() {
        return f64::INFINITY;
    }
    weights.rho1 * t.head + weights.rho2 * t.dist + weights.rho3 * t.vel
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrontierSide {
    Center,
    Left,
    Right,
}

/// Candidate points ahead of the robot, centre first, then left, then right.
/// Points outside the grid or on obstacles are dropped.
pub fn extract_frontiers(pose: Pose, grid: &WorldGrid, lookahead: f64, half_angle: f64) -> Vec<(FrontierSide, Point)> {
    [
        (FrontierSide::Center, 0.0),
        (FrontierSide::Left, half_angle),
        (FrontierSide::Right, -half_angle),
    ]
    .into_iter()
    .map(|(side, off)| {
        let a = pose.theta + off;
        (side, Point::new(pose.x + lookahead * a.cos(), pose.y + lookahead * a.sin()))
    })
    .filter(|&(_, p)| !grid.is_blocked(p))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frontier {
    pub side: FrontierSide,
    pub point: Point,
    pub label: String,
    pub label_id: LabelId,
    /// Floored traversability.
    pub tau: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrontierSet {
    pub frontiers: Vec<Frontier>,
}

impl FrontierSet {
    pub fn is_empty(&self) -> bool {
        self.frontiers.is_empty()
    }

    /// Re-reads τ from the table, keeping the cached labels.
    pub fn refresh(&mut self, table: &TraversabilityTable, floor: f64) {
        for f in &mut self.frontiers {
            f.tau = table.tau(f.label_id).floored(floor);
        }
    }
}

/// Labels each candidate through the backend and attaches its floored τ.
/// A label outside the class set falls back to the patch majority.
pub fn classify_frontiers(
    backend: &mut dyn VlmBackend,
    candidates: &[(FrontierSide, Point)],
    grid: &WorldGrid,
    classes: &[TerrainClass],
    table: &TraversabilityTable,
    patch_size: f64,
    floor: f64,
) -> Result<FrontierSet> {
    if candidates.is_empty() {
        return Err(Error::Graph("no frontier candidates".into()));
    }
    let mut frontiers = Vec::with_capacity(candidates.len());
    for &(side, point) in candidates {
        let patch = patch_descriptor(grid, classes, point, patch_size, PatchSource::Front)?;
        let label_id = match backend.classify(&patch, classes) {
            Ok(label) => classes.iter().position(|c| c.label == label),
            Err(e) => {
                log::warn!("frontier classification failed: {e}");
                None
            }
        }
        .unwrap_or_else(|| patch.majority_label());
        frontiers.push(Frontier {
            side,
            point,
            label: classes[label_id].label.clone(),
            label_id,
            tau: table.tau(label_id).floored(floor),
        });
    }
    Ok(FrontierSet { frontiers })
}

/// `min_p d(endpoint, p)·τ(p)` with the argmin index (first minimum in set
/// order, so centre wins ties, then left, then right).
pub fn frontier_cost_with_argmin(endpoint: Point, set: &FrontierSet) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for (i, f) in set.frontiers.iter().enumerate() {
        let c = endpoint.distance(&f.point) * f.tau;
        if c < best.0 {
            best = (c, i);
        }
    }
    best
}

pub fn frontier_cost(r: &Rollout, set: &FrontierSet) -> f64 {
    frontier_cost_with_argmin(r.endpoint, set).0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub v: f64,
    pub omega: f64,
    pub cost: f64,
    pub blocked: bool,
}

impl Selection {
    pub fn command(&self) -> (f64, f64) {
        (self.v, self.omega)
    }
}

/// Lower cost, then higher v, then ω nearer zero, then smaller ω.
fn better(a: (f64, f64, f64), b: (f64, f64, f64)) -> bool {
    let (ca, va, wa) = a;
    let (cb, vb, wb) = b;
    ca.total_cmp(&cb)
        .then(vb.total_cmp(&va))
        .then(wa.abs().total_cmp(&wb.abs()))
        .then(wa.total_cmp(&wb))
        == Ordering::Less
}

/// Braking command used when every rollout collides: as close to a stop as
/// the acceleration window allows.
pub fn brake_command(state: &RobotState, limits: &KinematicLimits) -> (f64, f64) {
    let dv = limits.a_max * limits.dt;
    let dw = limits.alpha_max * limits.dt;
    let v = (state.v - dv).max(0.0);
    let w = state.omega.signum() * (state.omega.abs() - dw).max(0.0);
    (v, w)
}

/// Inputs shared by every candidate of one planning tick.
pub struct PlanningContext<'a> {
    pub field: &'a ObstacleField<'a>,
    pub weights: &'a PlannerWeights,
    pub limits: &'a KinematicLimits,
    pub d_safe: f64,
}

fn select_by<F: Fn(&Rollout) -> f64>(state: &RobotState, ctx: &PlanningContext<'_>, cost: F) -> Selection {
    let samples = admissible_velocities(
        ctx.limits,
        (state.v, state.omega),
        ctx.weights.v_samples,
        ctx.weights.omega_samples,
    );
    let mut best: Option<(f64, f64, f64)> = None;
    for (v, w) in samples {
        let r = rollout(state.pose, v, w, ctx.weights.horizon_s, ctx.limits.dt);
        let c = cost(&r);
        if !c.is_finite() {
            continue;
        }
        if best.is_none_or(|b| better((c, v, w), b)) {
            best = Some((c, v, w));
        }
    }
    match best {
        Some((cost, v, omega)) => Selection {
            v,
            omega,
            cost,
            blocked: false,
        },
        None => {
            let (v, omega) = brake_command(state, ctx.limits);
            Selection {
                v,
                omega,
                cost: f64::INFINITY,
                blocked: true,
            }
        }
    }
}

/// Plain dynamic-window selection on the base cost.
pub fn select_base_command(state: &RobotState, goal: Point, ctx: &PlanningContext<'_>) -> Selection {
    select_by(state, ctx, |r| {
        base_objective(r, goal, ctx.field, ctx.limits, ctx.weights, ctx.d_safe)
    })
}

/// Minimizes `J + ρ4·φ`. Without frontiers (or with ρ4 = 0) this is the base
/// selection.
pub fn select_command(
    state: &RobotState,
    goal: Point,
    frontiers: Option<&FrontierSet>,
    ctx: &PlanningContext<'_>,
) -> Selection {
    match frontiers {
        Some(set) if !set.is_empty() => select_by(state, ctx, |r| {
            let j = base_objective(r, goal, ctx.field, ctx.limits, ctx.weights, ctx.d_safe);
            j + ctx.weights.rho4 * frontier_cost(r, set)
        }),
        _ => select_base_command(state, goal, ctx),
    }
}

/// Frontier labels for the current pose, or `None` when every candidate is
/// clipped (the tick then runs without the frontier term).
pub fn frontiers_for(
    backend: &mut dyn VlmBackend,
    pose: Pose,
    grid: &WorldGrid,
    classes: &[TerrainClass],
    table: &TraversabilityTable,
    params: &FrontierParams,
    floor: f64,
) -> Option<FrontierSet> {
    let candidates = extract_frontiers(pose, grid, params.lookahead, params.half_angle_deg.to_radians());
    classify_frontiers(backend, &candidates, grid, classes, table, params.patch_size, floor).ok()
}

/// τ lookup helper used by diagnostics.
pub fn frontier_taus(set: &FrontierSet) -> Vec<Tau> {
    set.frontiers.iter().map(|f| Tau::new(f.tau)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reasoning::MockBackend;
    use crate::world::Embodiment;
    use approx::assert_abs_diff_eq;

    fn field_for(grid: &WorldGrid) -> ObstacleField<'_> {
        ObstacleField::new(grid, 2.0, 0.4)
    }

    #[test]
    fn window_from_rest() {
        let l = KinematicLimits {
            a_max: 2.0,
            ..KinematicLimits::default()
        };
        let s = admissible_velocities(&l, (0.0, 0.0), 11, 21);
        let vmax = s.iter().map(|x| x.0).fold(0.0, f64::max);
        assert_abs_diff_eq!(vmax, 0.2, epsilon = 1e-12);
        assert!(s.iter().all(|x| x.0 >= 0.0));
        assert!(s.contains(&(0.0, 0.0)));
        let ws: Vec<f64> = s.iter().filter(|x| x.0 == 0.0).map(|x| x.1).collect();
        for w in &ws {
            assert!(ws.iter().any(|o| (o + w).abs() < 1e-12));
        }
    }

    #[test]
    fn window_at_top_speed() {
        let l = KinematicLimits::default();
        let s = admissible_velocities(&l, (1.0, 0.0), 11, 21);
        assert!(s.iter().all(|x| x.0 <= 1.0));
    }

    #[test]
    fn rollout_closed_forms() {
        let p = Pose::new(0.0, 0.0, 0.0);
        let r = rollout(p, 1.0, 0.0, 2.0, 0.1);
        assert_abs_diff_eq!(r.endpoint.x, 2.0, epsilon = 1e-9);
        let r = rollout(p, 0.0, 1.0, PI, 0.1);
        assert_abs_diff_eq!(r.endpoint.distance(&Point::new(0.0, 0.0)), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(normalize_angle(r.end_pose().theta).abs(), PI, epsilon = 1e-9);
        let r = rollout(p, 1.0, 1.0, PI / 2.0, 0.1);
        assert_abs_diff_eq!(r.endpoint.x, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.endpoint.y, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn base_objective_cases() {
        let grid = WorldGrid::uniform(40, 40, 0.5, 0);
        let field = field_for(&grid);
        let l = KinematicLimits::default();
        let w = PlannerWeights::default();
        let r = rollout(Pose::new(5.0, 10.0, 0.0), 1.0, 0.0, 2.0, 0.1);
        assert_eq!(base_objective(&r, Point::new(15.0, 10.0), &field, &l, &w, 2.0), 0.0);

        let head_only = PlannerWeights {
            rho2: 0.0,
            rho3: 0.0,
            ..w.clone()
        };
        assert_abs_diff_eq!(
            base_objective(&r, Point::new(7.0, 15.0), &field, &l, &head_only, 2.0),
            0.5,
            epsilon = 1e-12
        );

        let mut walled = grid.clone();
        for row in 0..40 {
            let i = walled.index(14, row);
            walled.obstacles[i] = true;
        }
        let field = field_for(&walled);
        let r = rollout(Pose::new(5.0, 10.0, 0.0), 1.0, 0.0, 2.0, 0.1);
        assert!(base_objective(&r, Point::new(15.0, 10.0), &field, &l, &w, 2.0).is_infinite());
    }

    #[test]
    fn field_matches_exact_search() {
        let mut g = WorldGrid::uniform(30, 30, 0.5, 0);
        for (c, r) in [(10, 10), (11, 10), (20, 5)] {
            let i = g.index(c, r);
            g.obstacles[i] = true;
        }
        let f = field_for(&g);
        for k in 0..2000 {
            let p = Point::new((k % 50) as f64 * 0.29 + 0.01, (k / 50) as f64 * 0.37 + 0.01);
            if !g.contains(p) {
                continue;
            }
            let exact = if g.disc_collides(p, 0.4) {
                None
            } else {
                Some(g.obstacle_clearance(p, 2.0).unwrap_or(2.0))
            };
            assert_eq!(f.clearance(p), exact, "at {p:?}");
        }
    }

    #[test]
    fn frontier_geometry() {
        let g = WorldGrid::uniform(20, 20, 0.5, 0);
        let pts = extract_frontiers(Pose::new(1.0, 5.0, 0.0), &g, 3.0, 30f64.to_radians());
        assert_eq!(pts.len(), 3);
        assert_abs_diff_eq!(pts[0].1.x, 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pts[1].1.y, 5.0 + 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(pts[2].1.y, 5.0 - 1.5, epsilon = 1e-12);
        // near the top edge the left point leaves the map
        let pts = extract_frontiers(Pose::new(1.0, 9.0, 0.0), &g, 3.0, 30f64.to_radians());
        assert_eq!(pts.len(), 2);
        assert!(pts.iter().all(|p| p.0 != FrontierSide::Left));
    }

    fn set(items: &[(f64, f64, f64)]) -> FrontierSet {
        FrontierSet {
            frontiers: items
                .iter()
                .map(|&(x, y, tau)| Frontier {
                    side: FrontierSide::Center,
                    point: Point::new(x, y),
                    label: "x".into(),
                    label_id: 0,
                    tau,
                })
                .collect(),
        }
    }

    #[test]
    fn frontier_cost_cases() {
        let r = rollout(Pose::new(0.0, 0.0, 0.0), 1.0, 0.0, 2.0, 0.1);
        let (x, y) = (r.endpoint.x, r.endpoint.y);
        assert_eq!(frontier_cost(&r, &set(&[(x, y, 0.7)])), 0.0);
        let s = set(&[(3.0, 0.0, 0.9), (2.0, 2.0, 0.1)]);
        assert_abs_diff_eq!(frontier_cost(&r, &s), 0.2, epsilon = 1e-12);
    }

    #[test]
    fn floor_applies_in_classification() {
        let classes = vec![TerrainClass {
            label: "mud".into(),
            deformability: 0.0,
            slipperiness: 0.0,
            roughness: 0.0,
            prior_tau: 0.0,
            appearance: [90, 60, 30],
        }];
        let g = WorldGrid::uniform(20, 20, 0.5, 0);
        let table = TraversabilityTable::from_priors(&classes);
        let mut b = MockBackend::new(0.0, 0);
        let s = classify_frontiers(&mut b, &[(FrontierSide::Center, Point::new(5.0, 5.0))], &g, &classes, &table, 5.0, 0.05)
            .unwrap();
        assert_eq!(s.frontiers[0].label, "mud");
        assert_eq!(s.frontiers[0].tau, 0.05);
    }

    #[test]
    fn symmetric_world_goes_straight() {
        let g = WorldGrid::uniform(40, 40, 0.5, 0);
        let field = field_for(&g);
        let l = KinematicLimits::default();
        let w = PlannerWeights::default();
        let ctx = PlanningContext {
            field: &field,
            weights: &w,
            limits: &l,
            d_safe: 2.0,
        };
        let state = RobotState::at_rest(Pose::new(5.0, 10.0, 0.0), Embodiment::Legged, 0.4);
        let s = set(&[(8.0, 10.0, 0.3), (7.6, 11.5, 0.3), (7.6, 8.5, 0.3)]);
        let sel = select_command(&state, Point::new(18.0, 10.0), Some(&s), &ctx);
        assert_eq!(sel.omega, 0.0);
        assert!(!sel.blocked);
    }

    #[test]
    fn boxed_in_robot_brakes() {
        let mut g = WorldGrid::uniform(20, 20, 0.5, 0);
        for r in 0..20 {
            for c in 0..20 {
                let p = g.cell_center(c, r);
                if p.distance(&Point::new(5.0, 5.0)) > 0.8 {
                    let i = g.index(c, r);
                    g.obstacles[i] = true;
                }
            }
        }
        let field = field_for(&g);
        let l = KinematicLimits::default();
        let w = PlannerWeights::default();
        let ctx = PlanningContext {
            field: &field,
            weights: &w,
            limits: &l,
            d_safe: 2.0,
        };
        let mut state = RobotState::at_rest(Pose::new(5.0, 5.0, 0.0), Embodiment::Legged, 0.4);
        state.v = 0.5;
        state.omega = 0.1;
        let sel = select_base_command(&state, Point::new(9.0, 5.0), &ctx);
        assert!(sel.blocked);
        assert_abs_diff_eq!(sel.v, 0.4, epsilon = 1e-12);
        assert_eq!(sel.omega, 0.0);
        assert!(l.check_command((0.5, 0.1), sel.command()).is_ok());
    }
}
