//! Bundled scenarios.
//!
//! Four layouts pair a benign terrain the robot starts on (with a pessimistic
//! prior), a firm but distant surface, and a hazard straddling the straight
//! start-goal line. A fifth, all-concrete map is a sanity check.

use crate::global::NavigationObjective;
use crate::world::{
    BackendParams, CalibrationConfig, Embodiment, LabelId, PlannerConfig, Point, ScenarioConfig, TerrainClass,
    WorldGrid,
};
use crate::sim::SimulatorParams;

pub const NAMES: [&str; 6] = [
    "scenario1_grass_mud",
    "scenario1_after_rain",
    "scenario2_grass_sand",
    "scenario3_wheeled_grass",
    "scenario4_wheeled_snow",
    "flat_concrete",
];

/// Names of the bundled maps with a hazard across the direct line.
pub const HAZARD_NAMES: [&str; 4] = [
    "scenario1_grass_mud",
    "scenario2_grass_sand",
    "scenario3_wheeled_grass",
    "scenario4_wheeled_snow",
];

fn class(label: &str, deform: f64, slip: f64, rough: f64, prior: f64, rgb: [u8; 3]) -> TerrainClass {
    TerrainClass {
        label: label.into(),
        deformability: deform,
        slipperiness: slip,
        roughness: rough,
        prior_tau: prior,
        appearance: rgb,
    }
}

const RES: f64 = 0.5;
const SIZE: usize = 80;

/// Paints the axis-aligned rectangle `[x0, x1) × [y0, y1)` (metres).
fn paint(grid: &mut WorldGrid, x0: f64, x1: f64, y0: f64, y1: f64, label: LabelId) {
    for r in 0..grid.height {
        for c in 0..grid.width {
            let p = grid.cell_center(c, r);
            if p.x >= x0 && p.x < x1 && p.y >= y0 && p.y < y1 {
                let i = grid.index(c, r);
                grid.cells[i] = label;
            }
        }
    }
}

fn base(name: &str, classes: Vec<TerrainClass>, grid: WorldGrid, start: Point, goal: Point, emb: Embodiment) -> ScenarioConfig {
    ScenarioConfig {
        name: name.into(),
        grid,
        classes,
        start,
        goal,
        start_heading: None,
        embodiment: emb,
        weather: "dry, overcast".into(),
        objective: NavigationObjective::AvoidHazard { lambda: 4.0 },
        planner: PlannerConfig::default(),
        calibration: CalibrationConfig::default(),
        simulator: SimulatorParams::default(),
        backend: BackendParams::default(),
        timeout_s: 120.0,
    }
}

/// Legged robot; dry grass start, a muddy-grass bog across the direct line,
/// a concrete path along the bottom edge.
pub fn scenario1() -> ScenarioConfig {
    let classes = vec![
        class("dry grass", 0.15, 0.1, 0.2, 0.6, [150, 170, 70]),
        class("muddy grass", 1.0, 0.6, 0.3, 0.5, [95, 85, 45]),
        class("concrete", 0.0, 0.0, 0.05, 0.1, [175, 175, 175]),
    ];
    let mut g = WorldGrid::uniform(SIZE, SIZE, RES, 0);
    paint(&mut g, 15.0, 25.0, 16.0, 24.0, 1);
    paint(&mut g, 0.0, 40.0, 0.0, 4.0, 2);
    base("scenario1_grass_mud", classes, g, Point::new(4.0, 20.0), Point::new(36.0, 20.0), Embodiment::Legged)
}

/// Scenario 1 after rainfall: same classes and layout, softer ground and
/// gloomier priors.
pub fn scenario1_after_rain() -> ScenarioConfig {
    let mut s = scenario1();
    s.name = "scenario1_after_rain".into();
    s.weather = "after rain, ground wet".into();
    let grass = &mut s.classes[0];
    grass.deformability = 0.25;
    grass.slipperiness = 0.2;
    grass.prior_tau = 0.65;
    let mud = &mut s.classes[1];
    mud.slipperiness = 0.8;
    mud.prior_tau = 0.7;
    s
}

/// Legged robot on a diagonal; a sand pit across the diagonal, concrete
/// along the left and top edges.
pub fn scenario2() -> ScenarioConfig {
    let classes = vec![
        class("dry grass", 0.15, 0.1, 0.2, 0.6, [150, 170, 70]),
        class("sand", 1.0, 0.4, 0.2, 0.45, [220, 200, 140]),
        class("concrete", 0.0, 0.0, 0.05, 0.1, [175, 175, 175]),
    ];
    let mut g = WorldGrid::uniform(SIZE, SIZE, RES, 0);
    paint(&mut g, 15.0, 25.0, 15.0, 25.0, 1);
    paint(&mut g, 0.0, 3.0, 0.0, 40.0, 2);
    paint(&mut g, 0.0, 40.0, 37.0, 40.0, 2);
    base("scenario2_grass_sand", classes, g, Point::new(6.0, 6.0), Point::new(34.0, 34.0), Embodiment::Legged)
}

/// Wheeled robot; dry grass start, muddy grass across the direct line,
/// concrete along the top edge.
pub fn scenario3() -> ScenarioConfig {
    let classes = vec![
        class("concrete", 0.0, 0.0, 0.05, 0.1, [175, 175, 175]),
        class("dry grass", 0.1, 0.15, 0.2, 0.6, [150, 170, 70]),
        class("muddy grass", 0.6, 1.0, 0.3, 0.55, [95, 85, 45]),
    ];
    let mut g = WorldGrid::uniform(SIZE, SIZE, RES, 1);
    paint(&mut g, 15.0, 25.0, 16.0, 24.0, 2);
    paint(&mut g, 0.0, 40.0, 36.0, 40.0, 0);
    base("scenario3_wheeled_grass", classes, g, Point::new(4.0, 20.0), Point::new(36.0, 20.0), Embodiment::Wheeled)
}

/// Wheeled robot; moderately slippery muddy grass start, a snow field across
/// the direct line, concrete along the bottom edge.
pub fn scenario4() -> ScenarioConfig {
    let classes = vec![
        class("concrete", 0.0, 0.0, 0.05, 0.1, [175, 175, 175]),
        class("snow", 0.5, 1.0, 0.1, 0.5, [240, 240, 250]),
        class("muddy grass", 0.3, 0.3, 0.3, 0.7, [95, 85, 45]),
    ];
    let mut g = WorldGrid::uniform(SIZE, SIZE, RES, 2);
    paint(&mut g, 15.0, 25.0, 16.0, 24.0, 1);
    paint(&mut g, 0.0, 40.0, 0.0, 4.0, 0);
    let mut s = base("scenario4_wheeled_snow", classes, g, Point::new(4.0, 20.0), Point::new(36.0, 20.0), Embodiment::Wheeled);
    s.weather = "cold, fresh snowfall".into();
    s
}

/// Uniform concrete with the goal straight ahead.
pub fn flat_concrete() -> ScenarioConfig {
    let classes = vec![class("concrete", 0.0, 0.0, 0.05, 0.1, [175, 175, 175])];
    let g = WorldGrid::uniform(SIZE, SIZE, RES, 0);
    base("flat_concrete", classes, g, Point::new(5.0, 20.0), Point::new(35.0, 20.0), Embodiment::Legged)
}

pub fn by_name(name: &str) -> Option<ScenarioConfig> {
    match name {
        "scenario1_grass_mud" => Some(scenario1()),
        "scenario1_after_rain" => Some(scenario1_after_rain()),
        "scenario2_grass_sand" => Some(scenario2()),
        "scenario3_wheeled_grass" => Some(scenario3()),
        "scenario4_wheeled_snow" => Some(scenario4()),
        "flat_concrete" => Some(flat_concrete()),
        _ => None,
    }
}

pub fn bundled() -> Vec<ScenarioConfig> {
    NAMES.iter().filter_map(|n| by_name(n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_valid_and_hazard_on_line() {
        for s in bundled() {
            s.validate().unwrap();
            if !HAZARD_NAMES.contains(&s.name.as_str()) && s.name != "scenario1_after_rain" {
                continue;
            }
            // some class on the straight line is far worse than the start class
            let start_class = s.grid.label_at(s.start).unwrap();
            let worst = (0..=100)
                .map(|k| {
                    let f = k as f64 / 100.0;
                    let p = Point::new(s.start.x + (s.goal.x - s.start.x) * f, s.start.y + (s.goal.y - s.start.y) * f);
                    s.grid.label_at(p).unwrap()
                })
                .map(|l| match s.embodiment {
                    Embodiment::Legged => s.classes[l].deformability,
                    Embodiment::Wheeled => s.classes[l].slipperiness,
                })
                .fold(0.0, f64::max);
            assert!(worst >= 0.95, "{}: no hazard on the direct line", s.name);
            assert!(s.classes[start_class].prior_tau >= 0.5);
        }
    }
}
