//! Marked-waypoint global planning.
//!
//! Candidate waypoints sit on a uniform lattice over the aerial view. Each
//! marker gets a dense id (`1..=M`), the lattice first in row-major order,
//! then the start and goal markers. A backend picks an id sequence for the
//! navigation objective; every answer is validated before the robot uses it.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reasoning::{BackendKind, VlmBackend};
use crate::world::{LabelId, Point, WorldGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NavigationObjective {
    MinLength,
    AvoidHazard {
        #[serde(default = "default_lambda")]
        lambda: f64,
    },
}

fn default_lambda() -> f64 {
    4.0
}

impl Default for NavigationObjective {
    fn default() -> Self {
        NavigationObjective::AvoidHazard {
            lambda: default_lambda(),
        }
    }
}

impl NavigationObjective {
    /// Weight applied to τ in edge costs.
    pub fn hazard_weight(&self) -> f64 {
        match *self {
            NavigationObjective::MinLength => 0.0,
            NavigationObjective::AvoidHazard { lambda } => lambda,
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            NavigationObjective::MinLength => "minimize trajectory length".into(),
            NavigationObjective::AvoidHazard { lambda } => format!(
                "avoid hazardous terrain (an edge with traversability tau costs (1 + {lambda}*tau) times its length)"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub to: usize,
    pub length: f64,
    /// Every class touched along the segment, ascending.
    pub labels: Vec<LabelId>,
}

impl Edge {
    /// Label with the highest τ along the edge; ties go to the lower id.
    pub fn worst_label(&self, taus: &[f64]) -> LabelId {
        let mut best = self.labels[0];
        for &l in &self.labels[1..] {
            if taus[l] > taus[best] {
                best = l;
            }
        }
        best
    }

    pub fn cost(&self, taus: &[f64], hazard_weight: f64) -> f64 {
        self.length * (1.0 + hazard_weight * taus[self.worst_label(taus)])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointGraph {
    /// Position of marker `id` at index `id - 1`.
    pub markers: Vec<Point>,
    /// Outgoing edges of marker `id` at index `id - 1`, sorted by target id.
    pub adjacency: Vec<Vec<Edge>>,
    pub spacing: f64,
    pub lattice_count: usize,
    pub start_id: usize,
    pub goal_id: usize,
}

/// Samples a straight segment at half-cell steps. Returns the touched labels
/// or `None` if it crosses an obstacle or leaves the grid.
fn trace_segment(grid: &WorldGrid, a: Point, b: Point) -> Option<Vec<LabelId>> {
    let len = a.distance(&b);
    let step = grid.resolution / 2.0;
    let n = ((len / step).ceil() as usize).max(1);
    let mut labels = Vec::new();
    for k in 0..=n {
        let f = k as f64 / n as f64;
        let p = Point::new(a.x + (b.x - a.x) * f, a.y + (b.y - a.y) * f);
        let (c, r) = grid.cell_of(p).ok()?;
        if grid.is_obstacle_cell(c, r) {
            return None;
        }
        let l = grid.cells[grid.index(c, r)];
        if !labels.contains(&l) {
            labels.push(l);
        }
    }
    labels.sort_unstable();
    Some(labels)
}

impl WaypointGraph {
    pub fn len(&self) -> usize {
        self.markers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.markers.is_empty()
    }

    pub fn position(&self, id: usize) -> Point {
        self.markers[id - 1]
    }

    pub fn edges(&self, id: usize) -> &[Edge] {
        &self.adjacency[id - 1]
    }

    pub fn edge(&self, a: usize, b: usize) -> Option<&Edge> {
        if a == 0 || a > self.len() {
            return None;
        }
        self.edges(a).iter().find(|e| e.to == b)
    }

    pub fn ids(&self) -> impl Iterator<Item = usize> {
        1..=self.len()
    }

    fn connect(&mut self, a: usize, b: usize, labels: Vec<LabelId>) {
        let length = self.position(a).distance(&self.position(b));
        for (from, to) in [(a, b), (b, a)] {
            let adj = &mut self.adjacency[from - 1];
            let pos = adj.partition_point(|e| e.to < to);
            adj.insert(
                pos,
                Edge {
                    to,
                    length,
                    labels: labels.clone(),
                },
            );
        }
    }

    fn disconnect_all(&mut self, id: usize) {
        let targets: Vec<usize> = self.edges(id).iter().map(|e| e.to).collect();
        for t in targets {
            self.adjacency[t - 1].retain(|e| e.to != id);
        }
        self.adjacency[id - 1].clear();
    }

    /// Links an injected marker to every lattice marker within one diagonal
    /// spacing (and to the other injected marker) along clear segments.
    fn attach(&mut self, grid: &WorldGrid, id: usize) {
        let p = self.position(id);
        let reach = self.spacing * std::f64::consts::SQRT_2 + 1e-9;
        let others: Vec<usize> = (1..=self.lattice_count)
            .chain([self.start_id, self.goal_id])
            .filter(|&o| o != id)
            .collect();
        for o in others {
            let q = self.position(o);
            let d = p.distance(&q);
            if d < 1e-9 || d > reach || self.edge(id, o).is_some() {
                continue;
            }
            if let Some(labels) = trace_segment(grid, p, q) {
                self.connect(id, o, labels);
            }
        }
    }

    pub fn connected(&self, a: usize, b: usize) -> bool {
        let mut seen = vec![false; self.len() + 1];
        let mut stack = vec![a];
        seen[a] = true;
        while let Some(n) = stack.pop() {
            if n == b {
                return true;
            }
            for e in self.edges(n) {
                if !seen[e.to] {
                    seen[e.to] = true;
                    stack.push(e.to);
                }
            }
        }
        false
    }

    /// Moves the start marker to `p` (e.g. the robot's current position) and
    /// reattaches it.
    pub fn relocate_start(&mut self, grid: &WorldGrid, p: Point) -> Result<()> {
        let id = self.start_id;
        self.disconnect_all(id);
        self.markers[id - 1] = p;
        self.attach(grid, id);
        if self.connected(self.start_id, self.goal_id) {
            Ok(())
        } else {
            Err(Error::Graph(format!(
                "no obstacle-free route from ({:.2}, {:.2}) to the goal",
                p.x, p.y
            )))
        }
    }
}

/// Lattice of candidate waypoints with 8-neighbour edges plus injected
/// start and goal markers.
pub fn build_waypoint_graph(
    grid: &WorldGrid,
    spacing: f64,
    start: Point,
    goal: Point,
) -> Result<WaypointGraph> {
    if spacing < 2.0 * grid.resolution {
        return Err(Error::Graph(format!(
            "spacing {spacing} is below twice the resolution {}",
            grid.resolution
        )));
    }
    let nx = (grid.width_m() / spacing + 1e-9).floor() as usize + 1;
    let ny = (grid.height_m() / spacing + 1e-9).floor() as usize + 1;
    let mut slot = vec![None; nx * ny];
    let mut markers = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let p = Point::new(i as f64 * spacing, j as f64 * spacing);
            if !grid.is_blocked(p) {
                markers.push(p);
                slot[j * nx + i] = Some(markers.len());
            }
        }
    }
    let lattice_count = markers.len();
    markers.push(start);
    markers.push(goal);
    let mut graph = WaypointGraph {
        adjacency: vec![Vec::new(); markers.len()],
        markers,
        spacing,
        lattice_count,
        start_id: lattice_count + 1,
        goal_id: lattice_count + 2,
    };

    for j in 0..ny {
        for i in 0..nx {
            let Some(a) = slot[j * nx + i] else { continue };
            // forward half of the 8-neighbourhood; symmetry fills the rest
            for (di, dj) in [(1i64, 0i64), (-1, 1), (0, 1), (1, 1)] {
                let (ni, nj) = (i as i64 + di, j as i64 + dj);
                if ni < 0 || nj < 0 || ni >= nx as i64 || nj >= ny as i64 {
                    continue;
                }
                let Some(b) = slot[nj as usize * nx + ni as usize] else { continue };
                if let Some(labels) = trace_segment(grid, graph.position(a), graph.position(b)) {
                    graph.connect(a, b, labels);
                }
            }
        }
    }
    graph.attach(grid, graph.start_id);
    graph.attach(grid, graph.goal_id);

    if !graph.connected(graph.start_id, graph.goal_id) {
        return Err(Error::Graph("start and goal markers are disconnected".into()));
    }
    Ok(graph)
}

/// Symbolic form of the marked aerial image sent to a backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkedAerialImage {
    pub graph: WaypointGraph,
    /// Current per-label τ.
    pub taus: Vec<f64>,
    pub labels: Vec<String>,
    pub start_id: usize,
    pub goal_id: usize,
}

impl MarkedAerialImage {
    pub fn new(graph: WaypointGraph, taus: Vec<f64>, labels: Vec<String>) -> Self {
        let (start_id, goal_id) = (graph.start_id, graph.goal_id);
        Self {
            graph,
            taus,
            labels,
            start_id,
            goal_id,
        }
    }

    pub fn marker_ids(&self) -> Vec<usize> {
        self.graph.ids().collect()
    }

    /// Textual legend accompanying the raster for remote backends.
    pub fn describe(&self, objective: &NavigationObjective) -> String {
        let mut s = format!(
            "Numbered circles mark candidate waypoints. Start is marker {}, goal is marker {}. \
             Objective: {}.\nTerrain traversability (0 safe, 1 impassable):\n",
            self.start_id,
            self.goal_id,
            objective.describe()
        );
        for (l, t) in self.labels.iter().zip(&self.taus) {
            s.push_str(&format!("- {l}: {t:.2}\n"));
        }
        s.push_str("Adjacent markers:\n");
        for id in self.graph.ids() {
            let ns: Vec<String> = self.graph.edges(id).iter().map(|e| e.to.to_string()).collect();
            s.push_str(&format!("{id}: {}\n", ns.join(" ")));
        }
        s.push_str(
            "Reply with a fenced JSON object {\"waypoints\": [ids...]} listing adjacent markers from start to goal.",
        );
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Frontier {
    cost: f64,
    id: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.id.cmp(&self.id))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Cost-to-go from every marker to `target` under the objective's metric.
pub fn cost_to_go(graph: &WaypointGraph, taus: &[f64], hazard_weight: f64, target: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; graph.len() + 1];
    let mut heap = BinaryHeap::new();
    dist[target] = 0.0;
    heap.push(Frontier { cost: 0.0, id: target });
    while let Some(Frontier { cost, id }) = heap.pop() {
        if cost > dist[id] {
            continue;
        }
        for e in graph.edges(id) {
            let c = cost + e.cost(taus, hazard_weight);
            if c < dist[e.to] {
                dist[e.to] = c;
                heap.push(Frontier { cost: c, id: e.to });
            }
        }
    }
    dist
}

/// Deterministic planner used by the mock backend: minimum-cost path where
/// each edge costs `length · (1 + λ'·τ(worst label))`, with `λ' = 0` for the
/// length objective. Among equal-cost paths the lexicographically smallest
/// id sequence wins.
pub fn mock_plan(
    graph: &WaypointGraph,
    taus: &[f64],
    objective: &NavigationObjective,
    start: usize,
    goal: usize,
) -> Result<Vec<usize>> {
    let w = objective.hazard_weight();
    let dist = cost_to_go(graph, taus, w, goal);
    if !dist[start].is_finite() {
        return Err(Error::Graph("goal unreachable from start".into()));
    }
    let mut path = vec![start];
    let mut on_path = HashSet::from([start]);
    let mut cur = start;
    while cur != goal {
        let tol = 1e-9 * dist[cur].max(1.0);
        let next = graph
            .edges(cur)
            .iter()
            .find(|e| {
                !on_path.contains(&e.to)
                    && (e.cost(taus, w) + dist[e.to] - dist[cur]).abs() <= tol
            })
            .map(|e| e.to)
            .ok_or_else(|| Error::Graph("shortest-path reconstruction failed".into()))?;
        path.push(next);
        on_path.insert(next);
        cur = next;
    }
    Ok(path)
}

/// Sum of edge costs along a path, or `None` if some step is not an edge.
pub fn path_cost(graph: &WaypointGraph, path: &[usize], taus: &[f64], hazard_weight: f64) -> Option<f64> {
    path.windows(2)
        .map(|w| graph.edge(w[0], w[1]).map(|e| e.cost(taus, hazard_weight)))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanSource {
    Mock,
    Remote,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointPlan {
    pub ids: Vec<usize>,
    /// Index into `ids` of the next unvisited marker.
    pub cursor: usize,
    pub valid: bool,
    pub source: PlanSource,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanViolation {
    Empty,
    UnknownId(usize),
    RepeatedId(usize),
    NonAdjacentStep(usize, usize),
    Endpoint(&'static str),
}

impl fmt::Display for PlanViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanViolation::Empty => write!(f, "empty plan"),
            PlanViolation::UnknownId(id) => write!(f, "unknown id {id}"),
            PlanViolation::RepeatedId(id) => write!(f, "repeated id {id}"),
            PlanViolation::NonAdjacentStep(a, b) => write!(f, "non-adjacent step {a} -> {b}"),
            PlanViolation::Endpoint(which) => write!(f, "endpoint: {which} marker too far"),
        }
    }
}

pub fn validate_plan(ids: &[usize], graph: &WaypointGraph, start: Point, goal: Point) -> Vec<PlanViolation> {
    let mut v = Vec::new();
    if ids.is_empty() {
        return vec![PlanViolation::Empty];
    }
    let mut seen = HashSet::new();
    for &id in ids {
        if id == 0 || id > graph.len() {
            v.push(PlanViolation::UnknownId(id));
        } else if !seen.insert(id) {
            v.push(PlanViolation::RepeatedId(id));
        }
    }
    if !v.is_empty() {
        return v;
    }
    for w in ids.windows(2) {
        if graph.edge(w[0], w[1]).is_none() {
            v.push(PlanViolation::NonAdjacentStep(w[0], w[1]));
        }
    }
    let reach = graph.spacing + 1e-9;
    if graph.position(ids[0]).distance(&start) > reach {
        v.push(PlanViolation::Endpoint("first"));
    }
    if graph.position(ids[ids.len() - 1]).distance(&goal) > reach {
        v.push(PlanViolation::Endpoint("last"));
    }
    v
}

/// Asks the backend for a waypoint sequence, retrying twice on invalid
/// answers before falling back to the deterministic planner.
pub fn plan_global(
    backend: &mut dyn VlmBackend,
    marked: &MarkedAerialImage,
    objective: &NavigationObjective,
    start: Point,
    goal: Point,
) -> Result<WaypointPlan> {
    let source = match backend.kind() {
        BackendKind::Mock => PlanSource::Mock,
        BackendKind::Remote => PlanSource::Remote,
    };
    for attempt in 0..3 {
        match backend.select_waypoints(marked, objective) {
            Ok(ids) => {
                let violations = validate_plan(&ids, &marked.graph, start, goal);
                if violations.is_empty() {
                    return Ok(WaypointPlan {
                        ids,
                        cursor: 1,
                        valid: true,
                        source,
                    });
                }
                let msgs: Vec<String> = violations.iter().map(ToString::to_string).collect();
                log::warn!("plan attempt {attempt} rejected: {}", msgs.join(", "));
            }
            Err(e) if source == PlanSource::Mock => return Err(e),
            Err(e) => log::warn!("plan attempt {attempt} failed: {e}"),
        }
    }
    let ids = mock_plan(&marked.graph, &marked.taus, objective, marked.start_id, marked.goal_id)?;
    Ok(WaypointPlan {
        ids,
        cursor: 1,
        valid: true,
        source: PlanSource::Fallback,
    })
}

/// Whether a τ change is large enough on a class that still matters to the
/// remaining route. A class matters if it is the worst-case label of a
/// remaining edge under either table.
pub fn should_replan(
    taus_prev: &[f64],
    taus_now: &[f64],
    plan: &WaypointPlan,
    graph: &WaypointGraph,
    threshold: f64,
) -> bool {
    let first = plan.cursor.saturating_sub(1);
    plan.ids[first.min(plan.ids.len())..].windows(2).any(|w| {
        graph.edge(w[0], w[1]).is_some_and(|e| {
            [e.worst_label(taus_prev), e.worst_label(taus_now)]
                .iter()
                .any(|&l| (taus_now[l] - taus_prev[l]).abs() > threshold)
        })
    })
}

/// A pending re-query: everything a backend needs, owned so it can run off
/// the control loop.
#[derive(Debug, Clone)]
pub struct ReplanJob {
    pub marked: MarkedAerialImage,
    pub objective: NavigationObjective,
    pub start: Point,
    pub goal: Point,
}

impl ReplanJob {
    pub fn run(self, backend: &mut dyn VlmBackend) -> Result<(WaypointGraph, WaypointPlan)> {
        let plan = plan_global(backend, &self.marked, &self.objective, self.start, self.goal)?;
        Ok((self.marked.graph, plan))
    }
}

/// Holds the active plan, tracks progress along it and decides when to
/// re-query.
#[derive(Debug, Clone)]
pub struct GlobalNavigator {
    pub graph: WaypointGraph,
    pub plan: WaypointPlan,
    pub objective: NavigationObjective,
    labels: Vec<String>,
    reference_taus: Vec<f64>,
    goal: Point,
    threshold: f64,
    waypoint_radius: f64,
    pub replans: usize,
}

impl GlobalNavigator {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        backend: &mut dyn VlmBackend,
        grid: &WorldGrid,
        labels: Vec<String>,
        taus: Vec<f64>,
        objective: NavigationObjective,
        start: Point,
        goal: Point,
        spacing: f64,
        threshold: f64,
        waypoint_radius: f64,
    ) -> Result<Self> {
        let graph = build_waypoint_graph(grid, spacing, start, goal)?;
        let marked = MarkedAerialImage::new(graph.clone(), taus.clone(), labels.clone());
        let plan = plan_global(backend, &marked, &objective, start, goal)?;
        Ok(Self {
            graph,
            plan,
            objective,
            labels,
            reference_taus: taus,
            goal,
            threshold,
            waypoint_radius,
            replans: 0,
        })
    }

    pub fn target(&self) -> Point {
        let i = self.plan.cursor.min(self.plan.ids.len() - 1);
        self.graph.position(self.plan.ids[i])
    }

    /// Current waypoint to steer at, advancing past reached markers.
    pub fn local_goal(&mut self, pos: Point) -> Point {
        let last = self.plan.ids.len() - 1;
        while self.plan.cursor < last {
            let here = self.graph.position(self.plan.ids[self.plan.cursor]);
            let next = self.graph.position(self.plan.ids[self.plan.cursor + 1]);
            let reached = pos.distance(&here) <= self.waypoint_radius;
            let passed = pos.distance(&next) < here.distance(&next);
            if reached || passed {
                self.plan.cursor += 1;
            } else {
                break;
            }
        }
        self.target()
    }

    pub fn remaining_waypoints(&self) -> Vec<Point> {
        self.plan.ids[self.plan.cursor.min(self.plan.ids.len())..]
            .iter()
            .map(|&id| self.graph.position(id))
            .collect()
    }

    /// Builds a re-query if the table moved enough on the remaining route.
    /// The reference table advances either way so one change triggers at most
    /// one query.
    pub fn begin_replan(
        &mut self,
        grid: &WorldGrid,
        taus_now: &[f64],
        pos: Point,
    ) -> Option<ReplanJob> {
        if !should_replan(&self.reference_taus, taus_now, &self.plan, &self.graph, self.threshold) {
            return None;
        }
        self.reference_taus = taus_now.to_vec();
        let mut graph = self.graph.clone();
        if let Err(e) = graph.relocate_start(grid, pos) {
            log::warn!("replan skipped: {e}");
            return None;
        }
        Some(ReplanJob {
            marked: MarkedAerialImage::new(graph, taus_now.to_vec(), self.labels.clone()),
            objective: self.objective,
            start: pos,
            goal: self.goal,
        })
    }

    pub fn install(&mut self, graph: WaypointGraph, plan: WaypointPlan) {
        self.graph = graph;
        self.plan = plan;
        self.replans += 1;
    }

    /// Synchronous check-and-replan. Returns whether the backend was queried.
    pub fn maybe_replan(
        &mut self,
        backend: &mut dyn VlmBackend,
        grid: &WorldGrid,
        taus_now: &[f64],
        pos: Point,
    ) -> bool {
        let Some(job) = self.begin_replan(grid, taus_now, pos) else {
            return false;
        };
        match job.run(backend) {
            Ok((graph, plan)) => self.install(graph, plan),
            Err(e) => log::warn!("replan failed, keeping previous plan: {e}"),
        }
        true
    }
}
