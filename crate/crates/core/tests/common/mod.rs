//! Shared helpers for the integration tests.
#![allow(dead_code)]

use gronav::global::{build_waypoint_graph, WaypointGraph};
use gronav::world::{Point, WorldGrid};
use gronav::NavigationObjective;
use rand::Rng;

pub struct GraphCase {
    pub grid: WorldGrid,
    pub graph: WaypointGraph,
    pub taus: Vec<f64>,
    pub objective: NavigationObjective,
}

/// Small lattice (3×3 up to 4×4 markers at 5 m) over random 2.5 m label
/// blocks and a sprinkling of obstacle blocks. `None` when the draw leaves
/// start and goal disconnected.
pub fn random_graph_case<R: Rng>(rng: &mut R) -> Option<GraphCase> {
    let spacing = 5.0;
    let res = 0.5;
    let nx = rng.random_range(3..=4usize);
    let ny = rng.random_range(3..=4usize);
    let (w, h) = (10 * (nx - 1), 10 * (ny - 1));
    let n_classes = rng.random_range(2..=4usize);
    let mut grid = WorldGrid::uniform(w, h, res, 0);
    for br in 0..h / 5 {
        for bc in 0..w / 5 {
            let label = rng.random_range(0..n_classes);
            let blocked = rng.random_bool(0.08);
            for r in br * 5..br * 5 + 5 {
                for c in bc * 5..bc * 5 + 5 {
                    let i = grid.index(c, r);
                    grid.cells[i] = label;
                    grid.obstacles[i] = blocked;
                }
            }
        }
    }
    let free_point = |rng: &mut R| loop {
        let p = Point::new(rng.random_range(0.0..w as f64 * res), rng.random_range(0.0..h as f64 * res));
        if !grid.is_blocked(p) {
            return p;
        }
    };
    let start = free_point(rng);
    let goal = free_point(rng);
    if start.distance(&goal) < 1.0 {
        return None;
    }
    let graph = build_waypoint_graph(&grid, spacing, start, goal).ok()?;
    let taus = (0..n_classes).map(|_| rng.random_range(0.0..=1.0)).collect();
    let objective = if rng.random_bool(0.25) {
        NavigationObjective::MinLength
    } else {
        NavigationObjective::AvoidHazard {
            lambda: rng.random_range(0.0..8.0),
        }
    };
    Some(GraphCase { grid, graph, taus, objective })
}

/// Path cost with the edge costs summed in ascending order, so two paths
/// over the same multiset of edges compare equal bit for bit.
pub fn sorted_cost(graph: &WaypointGraph, path: &[usize], taus: &[f64], w: f64) -> Option<f64> {
    let mut costs = Vec::with_capacity(path.len());
    for pair in path.windows(2) {
        costs.push(graph.edge(pair[0], pair[1])?.cost(taus, w));
    }
    costs.sort_by(f64::total_cmp);
    Some(costs.iter().sum())
}

/// Minimum over every simple start→goal path, by depth-first enumeration.
/// Partial paths already costing more than the best complete one (plus a
/// small slack) are cut; costs are non-negative so nothing optimal is lost.
pub fn brute_force_min(graph: &WaypointGraph, taus: &[f64], w: f64) -> (f64, Vec<usize>) {
    struct Search<'a> {
        graph: &'a WaypointGraph,
        taus: &'a [f64],
        w: f64,
        best: f64,
        best_path: Vec<usize>,
        path: Vec<usize>,
        on: Vec<bool>,
    }
    impl Search<'_> {
        fn go(&mut self, cur: usize, acc: f64) {
            if acc > self.best * (1.0 + 1e-9) + 1e-12 {
                return;
            }
            if cur == self.graph.goal_id {
                let exact = sorted_cost(self.graph, &self.path, self.taus, self.w).unwrap();
                if exact < self.best {
                    self.best = exact;
                    self.best_path = self.path.clone();
                }
                return;
            }
            for e in self.graph.edges(cur) {
                if self.on[e.to] {
                    continue;
                }
                self.on[e.to] = true;
                self.path.push(e.to);
                self.go(e.to, acc + e.cost(self.taus, self.w));
                self.path.pop();
                self.on[e.to] = false;
            }
        }
    }
    let mut s = Search {
        graph,
        taus,
        w,
        best: f64::INFINITY,
        best_path: Vec::new(),
        path: vec![graph.start_id],
        on: vec![false; graph.len() + 1],
    };
    s.on[graph.start_id] = true;
    s.go(graph.start_id, 0.0);
    (s.best, s.best_path)
}
