//! Environment, terrain physics, robot state and scenario configuration.
//!
//! The world is a 2D lattice of terrain-class ids with an obstacle mask. Row
//! `r`, column `c` covers `[c·res, (c+1)·res) × [r·res, (r+1)·res)` in metres,
//! with `x` along columns and `y` along rows. The same lattice doubles as the
//! "aerial image" handed to reasoning backends.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::global::NavigationObjective;
use crate::local::PlannerWeights;
use crate::proprio::{SinkageCalibration, SlipCalibration};
use crate::sim::SimulatorParams;

/// Index into a scenario's class list.
pub type LabelId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub const fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let mut a = theta % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerrainClass {
    pub label: String,
    pub deformability: f64,
    pub slipperiness: f64,
    pub roughness: f64,
    pub prior_tau: f64,
    /// Render colour, also the patch appearance signature.
    pub appearance: [u8; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Embodiment {
    Legged,
    Wheeled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldGrid {
    pub width: usize,
    pub height: usize,
    /// Metres per cell.
    pub resolution: f64,
    /// Row-major class ids, row 0 at `y = 0`.
    pub cells: Vec<LabelId>,
    /// Row-major obstacle mask.
    pub obstacles: Vec<bool>,
}

/// Maps a metric coordinate onto a cell index along one axis. Coordinates
/// lying exactly on a boundary between two cells resolve to the lower index.
fn axis_index(coord: f64, n: usize, res: f64) -> Option<usize> {
    if !coord.is_finite() || coord < 0.0 || coord > n as f64 * res {
        return None;
    }
    let k = coord / res;
    let idx = if k.fract() == 0.0 && k >= 1.0 {
        k as usize - 1
    } else {
        k.floor() as usize
    };
    Some(idx.min(n - 1))
}

impl WorldGrid {
    /// A `width × height` grid filled with one class and no obstacles.
    pub fn uniform(width: usize, height: usize, resolution: f64, label: LabelId) -> Self {
        Self {
            width,
            height,
            resolution,
            cells: vec![label; width * height],
            obstacles: vec![false; width * height],
        }
    }

    pub fn width_m(&self) -> f64 {
        self.width as f64 * self.resolution
    }

    pub fn height_m(&self) -> f64 {
        self.height as f64 * self.resolution
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    /// `(col, row)` of the cell containing `p`.
    pub fn cell_of(&self, p: Point) -> Result<(usize, usize)> {
        match (
            axis_index(p.x, self.width, self.resolution),
            axis_index(p.y, self.height, self.resolution),
        ) {
            (Some(c), Some(r)) => Ok((c, r)),
            _ => Err(Error::OutOfBounds { x: p.x, y: p.y }),
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        self.cell_of(p).is_ok()
    }

    pub fn cell_center(&self, col: usize, row: usize) -> Point {
        Point::new(
            (col as f64 + 0.5) * self.resolution,
            (row as f64 + 0.5) * self.resolution,
        )
    }

    pub fn label_at(&self, p: Point) -> Result<LabelId> {
        let (c, r) = self.cell_of(p)?;
        Ok(self.cells[self.index(c, r)])
    }

    pub fn is_obstacle_cell(&self, col: usize, row: usize) -> bool {
        self.obstacles[self.index(col, row)]
    }

    /// True when `p` is out of bounds or inside an obstacle cell.
    pub fn is_blocked(&self, p: Point) -> bool {
        match self.cell_of(p) {
            Ok((c, r)) => self.is_obstacle_cell(c, r),
            Err(_) => true,
        }
    }

    /// Distance from `p` to the closed square of cell `(col, row)`.
    pub fn distance_to_cell(&self, p: Point, col: usize, row: usize) -> f64 {
        let res = self.resolution;
        let (x0, y0) = (col as f64 * res, row as f64 * res);
        let dx = (x0 - p.x).max(0.0).max(p.x - (x0 + res));
        let dy = (y0 - p.y).max(0.0).max(p.y - (y0 + res));
        dx.hypot(dy)
    }

    /// Distance from `p` to the nearest obstacle cell, searching only within
    /// `radius`. Returns `None` when nothing is that close.
    pub fn obstacle_clearance(&self, p: Point, radius: f64) -> Option<f64> {
        let res = self.resolution;
        let span = (radius / res).ceil() as isize + 1;
        let c0 = (p.x / res).floor() as isize;
        let r0 = (p.y / res).floor() as isize;
        let mut best: Option<f64> = None;
        for r in (r0 - span)..=(r0 + span) {
            if r < 0 || r >= self.height as isize {
                continue;
            }
            for c in (c0 - span)..=(c0 + span) {
                if c < 0 || c >= self.width as isize {
                    continue;
                }
                if !self.obstacles[r as usize * self.width + c as usize] {
                    continue;
                }
                let d = self.distance_to_cell(p, c as usize, r as usize);
                if d <= radius && best.is_none_or(|b| d < b) {
                    best = Some(d);
                }
            }
        }
        best
    }

    /// Whether a disc of `radius` at `p` lies entirely within the map.
    pub fn disc_inside(&self, p: Point, radius: f64) -> bool {
        p.x - radius >= 0.0
            && p.y - radius >= 0.0
            && p.x + radius <= self.width_m()
            && p.y + radius <= self.height_m()
    }

    /// Whether a disc of `radius` at `p` overlaps any obstacle cell or leaves the grid.
    pub fn disc_collides(&self, p: Point, radius: f64) -> bool {
        if !self.disc_inside(p, radius) {
            return true;
        }
        self.obstacle_clearance(p, radius)
            .is_some_and(|d| d < radius)
    }
}

/// Class of the cell containing `position`.
pub fn terrain_at<'a>(
    grid: &WorldGrid,
    classes: &'a [TerrainClass],
    position: Point,
) -> Result<&'a TerrainClass> {
    let id = grid.label_at(position)?;
    Ok(&classes[id])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchSource {
    Aerial,
    Front,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchDescriptor {
    pub center: Point,
    pub size: f64,
    /// Fraction of covered cells per label id; sums to one.
    pub class_histogram: Vec<f64>,
    pub mean_appearance: [f64; 3],
    pub source: PatchSource,
}

impl PatchDescriptor {
    /// Most frequent label; ties resolve to the lower id.
    pub fn majority_label(&self) -> LabelId {
        let mut best = 0;
        for (i, &f) in self.class_histogram.iter().enumerate() {
            if f > self.class_histogram[best] {
                best = i;
            }
        }
        best
    }

    pub fn contains(&self, p: Point) -> bool {
        let h = self.size / 2.0;
        (p.x - self.center.x).abs() <= h && (p.y - self.center.y).abs() <= h
    }
}

/// Summarizes the axis-aligned square of side `size` centred at `center`
/// over all in-bounds cells whose centres fall inside it (edges inclusive).
pub fn patch_descriptor(
    grid: &WorldGrid,
    classes: &[TerrainClass],
    center: Point,
    size: f64,
    source: PatchSource,
) -> Result<PatchDescriptor> {
    let res = grid.resolution;
    let h = size / 2.0;
    // Cell centre (c + 0.5)·res inside [lo, hi]  <=>  c in [lo/res - 0.5, hi/res - 0.5].
    let range = |lo: f64, hi: f64, n: usize| -> Option<(usize, usize)> {
        let first = (lo / res - 0.5).ceil().max(0.0);
        let last = (hi / res - 0.5).floor().min(n as f64 - 1.0);
        (first <= last).then_some((first as usize, last as usize))
    };
    let (Some((c0, c1)), Some((r0, r1))) = (
        range(center.x - h, center.x + h, grid.width),
        range(center.y - h, center.y + h, grid.height),
    ) else {
        return Err(Error::PatchOutsideGrid {
            x: center.x,
            y: center.y,
        });
    };

    let mut counts = vec![0usize; classes.len()];
    for r in r0..=r1 {
        for c in c0..=c1 {
            counts[grid.cells[grid.index(c, r)]] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    let class_histogram: Vec<f64> = counts
        .iter()
        .map(|&n| n as f64 / total as f64)
        .collect();
    let mut mean_appearance = [0.0; 3];
    for (class, &w) in classes.iter().zip(&class_histogram) {
        for (m, &ch) in mean_appearance.iter_mut().zip(&class.appearance) {
            *m += w * ch as f64;
        }
    }
    Ok(PatchDescriptor {
        center,
        size,
        class_histogram,
        mean_appearance,
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicLimits {
    pub v_max: f64,
    pub omega_max: f64,
    pub a_max: f64,
    pub alpha_max: f64,
    /// Control period, seconds.
    pub dt: f64,
}

impl Default for KinematicLimits {
    fn default() -> Self {
        Self {
            v_max: 1.0,
            omega_max: 1.0,
            a_max: 1.0,
            alpha_max: 2.0,
            dt: 0.1,
        }
    }
}

impl KinematicLimits {
    /// Checks the velocity box and the one-tick acceleration window around `prev`.
    pub fn check_command(&self, prev: (f64, f64), cmd: (f64, f64)) -> Result<()> {
        const EPS: f64 = 1e-9;
        let (v, w) = cmd;
        let fail = |reason: String| {
            Err(Error::CommandOutOfLimits {
                v,
                omega: w,
                reason,
            })
        };
        if !(v.is_finite() && w.is_finite()) {
            return fail("non-finite".into());
        }
        if v < -EPS || v > self.v_max + EPS {
            return fail(format!("v outside [0, {}]", self.v_max));
        }
        if w.abs() > self.omega_max + EPS {
            return fail(format!("|omega| > {}", self.omega_max));
        }
        if (v - prev.0).abs() > self.a_max * self.dt + EPS {
            return fail("linear acceleration window".into());
        }
        if (w - prev.1).abs() > self.alpha_max * self.dt + EPS {
            return fail("angular acceleration window".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub pose: Pose,
    pub v: f64,
    pub omega: f64,
    pub embodiment: Embodiment,
    pub footprint_radius: f64,
}

impl RobotState {
    pub fn at_rest(pose: Pose, embodiment: Embodiment, footprint_radius: f64) -> Self {
        Self {
            pose,
            v: 0.0,
            omega: 0.0,
            embodiment,
            footprint_radius,
        }
    }
}

fn default_lookahead() -> f64 {
    3.0
}
fn default_half_angle() -> f64 {
    30.0
}
fn default_patch_size() -> f64 {
    5.0
}
fn default_classify_every() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierParams {
    #[serde(default = "default_lookahead")]
    pub lookahead: f64,
    #[serde(default = "default_half_angle")]
    pub half_angle_deg: f64,
    #[serde(default = "default_patch_size")]
    pub patch_size: f64,
    /// Re-classify frontiers every this many ticks.
    #[serde(default = "default_classify_every")]
    pub classify_every: usize,
}

impl Default for FrontierParams {
    fn default() -> Self {
        Self {
            lookahead: default_lookahead(),
            half_angle_deg: default_half_angle(),
            patch_size: default_patch_size(),
            classify_every: default_classify_every(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub weights: PlannerWeights,
    pub limits: KinematicLimits,
    pub d_safe: f64,
    pub waypoint_spacing: f64,
    /// A waypoint counts as reached within this distance.
    pub waypoint_radius: f64,
    pub replan_threshold: f64,
    pub tau_floor: f64,
    pub frontier: FrontierParams,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            weights: PlannerWeights::default(),
            limits: KinematicLimits::default(),
            d_safe: 2.0,
            waypoint_spacing: 5.0,
            waypoint_radius: 1.5,
            replan_threshold: 0.2,
            tau_floor: 0.05,
            frontier: FrontierParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    /// Derived from the simulator force law when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sinkage: Option<SinkageCalibration>,
    pub slip: SlipCalibration,
    /// Indicator averaging window after patch entry, seconds.
    pub window_s: f64,
    pub capture_interval_s: f64,
    /// Distance from the robot to the centre of a captured patch.
    pub capture_ahead_m: f64,
    pub patch_size: f64,
    pub pool_capacity: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            sinkage: None,
            slip: SlipCalibration::default(),
            window_s: 1.0,
            capture_interval_s: 1.0,
            capture_ahead_m: 5.5,
            patch_size: 5.0,
            pool_capacity: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendParams {
    /// Mock classifier confusion rate.
    pub p_err: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Wall-clock deadline for one remote request.
    pub timeout_s: f64,
    /// Minimum simulated time between remote estimate refreshes.
    pub min_call_interval_s: f64,
}

impl Default for BackendParams {
    fn default() -> Self {
        Self {
            p_err: 0.0,
            endpoint: None,
            model: None,
            timeout_s: 10.0,
            min_call_interval_s: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub grid: WorldGrid,
    pub classes: Vec<TerrainClass>,
    pub start: Point,
    pub goal: Point,
    /// Initial heading; faces the goal when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_heading: Option<f64>,
    pub embodiment: Embodiment,
    pub weather: String,
    pub objective: NavigationObjective,
    pub planner: PlannerConfig,
    pub calibration: CalibrationConfig,
    pub simulator: SimulatorParams,
    #[serde(default)]
    pub backend: BackendParams,
    pub timeout_s: f64,
}

fn in_unit(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn straight_line_distance(&self) -> f64 {
        self.start.distance(&self.goal)
    }

    pub fn start_pose(&self) -> Pose {
        let theta = self.start_heading.unwrap_or_else(|| {
            (self.goal.y - self.start.y).atan2(self.goal.x - self.start.x)
        });
        Pose::new(self.start.x, self.start.y, normalize_angle(theta))
    }

    pub fn label_id(&self, label: &str) -> Option<LabelId> {
        self.classes.iter().position(|c| c.label == label)
    }

    pub fn sinkage_calibration(&self) -> SinkageCalibration {
        self.calibration
            .sinkage
            .unwrap_or_else(|| SinkageCalibration::from_force_law(&self.simulator))
    }

    pub fn terrain_at(&self, p: Point) -> Result<&TerrainClass> {
        terrain_at(&self.grid, &self.classes, p)
    }

    /// Checks every invariant, reporting all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let g = &self.grid;

        if self.classes.is_empty() {
            errs.push("no terrain classes declared".to_string());
        }
        let mut seen = HashSet::new();
        for c in &self.classes {
            if !seen.insert(c.label.as_str()) {
                errs.push(format!("duplicate class label `{}`", c.label));
            }
            for (name, v) in [
                ("deformability", c.deformability),
                ("slipperiness", c.slipperiness),
                ("roughness", c.roughness),
                ("prior_tau", c.prior_tau),
            ] {
                if !in_unit(v) {
                    errs.push(format!("class `{}`: {name} = {v} outside [0, 1]", c.label));
                }
            }
        }

        if g.width == 0 || g.height == 0 {
            errs.push("grid has zero extent".into());
        }
        if !(g.resolution > 0.0 && g.resolution.is_finite()) {
            errs.push(format!("grid resolution {} must be > 0", g.resolution));
        }
        let n = g.width * g.height;
        if g.cells.len() != n {
            errs.push(format!("grid.cells has {} entries, expected {n}", g.cells.len()));
        }
        if g.obstacles.len() != n {
            errs.push(format!(
                "grid.obstacles has {} entries, expected {n}",
                g.obstacles.len()
            ));
        }
        if let Some(bad) = g.cells.iter().find(|&&id| id >= self.classes.len()) {
            errs.push(format!("grid cell refers to undeclared class id {bad}"));
        }

        let geometry_ok = errs.is_empty();
        for (name, p) in [("start", self.start), ("goal", self.goal)] {
            if !geometry_ok {
                break;
            }
            match g.cell_of(p) {
                Err(_) => errs.push(format!("{name} ({}, {}) is outside the grid", p.x, p.y)),
                Ok((c, r)) if g.is_obstacle_cell(c, r) => {
                    errs.push(format!("{name} ({}, {}) lies on an obstacle cell", p.x, p.y))
                }
                Ok(_) => {}
            }
        }
        if !(self.straight_line_distance() > 0.0) {
            errs.push("start and goal coincide".into());
        }

        let l = &self.planner.limits;
        for (name, v) in [
            ("v_max", l.v_max),
            ("omega_max", l.omega_max),
            ("a_max", l.a_max),
            ("alpha_max", l.alpha_max),
            ("dt", l.dt),
        ] {
            if !(v > 0.0) {
                errs.push(format!("limits.{name} must be > 0"));
            }
        }
        errs.extend(self.planner.weights.violations());
        if self.planner.waypoint_spacing < 2.0 * g.resolution {
            errs.push("waypoint_spacing must be at least twice the grid resolution".into());
        }
        if !(self.planner.d_safe > 0.0) {
            errs.push("d_safe must be > 0".into());
        }
        if !in_unit(self.planner.tau_floor) {
            errs.push("tau_floor outside [0, 1]".into());
        }
        if self.planner.frontier.classify_every == 0 {
            errs.push("frontier.classify_every must be >= 1".into());
        }
        if let NavigationObjective::AvoidHazard { lambda } = self.objective {
            if !(lambda >= 0.0) {
                errs.push(format!("objective lambda {lambda} must be >= 0"));
            }
        }

        if let Some(s) = &self.calibration.sinkage {
            errs.extend(s.violations());
        }
        errs.extend(self.calibration.slip.violations());
        let cal = &self.calibration;
        if !(cal.window_s > 0.0 && cal.capture_interval_s > 0.0 && cal.patch_size > 0.0) {
            errs.push("calibration window, capture interval and patch size must be > 0".into());
        }
        if cal.pool_capacity == 0 {
            errs.push("pool_capacity must be >= 1".into());
        }
        errs.extend(self.simulator.violations());
        if !in_unit(self.backend.p_err) {
            errs.push("backend.p_err outside [0, 1]".into());
        }
        if !(self.timeout_s > 0.0) {
            errs.push("timeout_s must be > 0".into());
        }

        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    ScenarioConfig::from_json(&text)
}
