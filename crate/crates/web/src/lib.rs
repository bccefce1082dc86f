//! Browser bindings for the demo page. Every export takes plain values and
//! returns a JSON string; the page draws everything on a canvas.

use gronav::global::{build_waypoint_graph, mock_plan, path_cost};
use gronav::harness::{run_trial, MethodVariant, TrialOptions};
use gronav::local::{
    admissible_velocities, base_objective, extract_frontiers, frontier_cost, rollout, select_command, Frontier,
    FrontierSet, ObstacleField, PlanningContext,
};
use gronav::scenarios;
use gronav::world::{Pose, RobotState, ScenarioConfig};
use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

fn scenario(name: &str) -> Result<ScenarioConfig, String> {
    scenarios::by_name(name).ok_or_else(|| format!("unknown scenario `{name}`"))
}

fn to_js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

pub fn scenario_names_json() -> String {
    serde_json::to_string(&scenarios::NAMES).unwrap_or_default()
}

/// Map geometry and classes for drawing.
pub fn scenario_json(name: &str) -> Result<String, String> {
    let s = scenario(name)?;
    Ok(json!({
        "name": s.name,
        "width": s.grid.width,
        "height": s.grid.height,
        "resolution": s.grid.resolution,
        "cells": s.grid.cells,
        "obstacles": s.grid.obstacles,
        "classes": s.classes,
        "start": s.start,
        "goal": s.goal,
        "embodiment": s.embodiment,
    })
    .to_string())
}

pub fn run_trial_json(name: &str, variant: &str, seed: u64) -> Result<String, String> {
    let s = scenario(name)?;
    let v: MethodVariant = variant.parse()?;
    let out = run_trial(&s, v, seed, TrialOptions::default()).map_err(|e| e.to_string())?;
    Ok(json!({
        "result": out.result,
        "trajectory": out.trajectory,
        "table": out.table.map(|t| t.taus()),
    })
    .to_string())
}

/// Waypoint lattice and the deterministic plan under user-supplied τ.
pub fn plan_global_json(name: &str, taus: &[f64], lambda: f64) -> Result<String, String> {
    let s = scenario(name)?;
    if taus.len() != s.classes.len() {
        return Err(format!("expected {} tau values", s.classes.len()));
    }
    let taus: Vec<f64> = taus.iter().map(|t| t.clamp(0.0, 1.0)).collect();
    let graph = build_waypoint_graph(&s.grid, s.planner.waypoint_spacing, s.start, s.goal).map_err(|e| e.to_string())?;
    let objective = gronav::NavigationObjective::AvoidHazard { lambda: lambda.max(0.0) };
    let ids = mock_plan(&graph, &taus, &objective, graph.start_id, graph.goal_id).map_err(|e| e.to_string())?;
    let points: Vec<_> = ids.iter().map(|&id| graph.position(id)).collect();
    Ok(json!({
        "markers": graph.markers,
        "plan": ids,
        "points": points,
        "cost": path_cost(&graph, &ids, &taus, lambda.max(0.0)),
    })
    .to_string())
}

#[derive(Serialize)]
struct Candidate {
    v: f64,
    omega: f64,
    endpoint: gronav::world::Point,
    base: f64,
    frontier: f64,
    total: f64,
}

/// Every sampled rollout at a pose with its base and frontier cost, plus the
/// selected command. Frontier τ comes from the class priors.
pub fn dwa_field_json(name: &str, x: f64, y: f64, theta: f64, v: f64, rho4: f64) -> Result<String, String> {
    let s = scenario(name)?;
    let mut weights = s.planner.weights.clone();
    weights.rho4 = rho4.max(0.0);
    let limits = s.planner.limits;
    let pose = Pose::new(x, y, theta);
    if !s.grid.contains(pose.position()) {
        return Err("pose outside the map".into());
    }
    let frontiers = FrontierSet {
        frontiers: extract_frontiers(pose, &s.grid, s.planner.frontier.lookahead, s.planner.frontier.half_angle_deg.to_radians())
            .into_iter()
            .map(|(side, point)| {
                let id = s.grid.label_at(point).unwrap_or(0);
                Frontier {
                    side,
                    point,
                    label: s.classes[id].label.clone(),
                    label_id: id,
                    tau: s.classes[id].prior_tau.max(s.planner.tau_floor),
                }
            })
            .collect(),
    };
    let field = ObstacleField::new(&s.grid, s.planner.d_safe, s.simulator.footprint_radius);
    let ctx = PlanningContext {
        field: &field,
        weights: &weights,
        limits: &limits,
        d_safe: s.planner.d_safe,
    };
    let mut state = RobotState::at_rest(pose, s.embodiment, s.simulator.footprint_radius);
    state.v = v.clamp(0.0, limits.v_max);
    let candidates: Vec<Candidate> = admissible_velocities(&limits, (state.v, 0.0), weights.v_samples, weights.omega_samples)
        .into_iter()
        .map(|(cv, cw)| {
            let r = rollout(pose, cv, cw, weights.horizon_s, limits.dt);
            let base = base_objective(&r, s.goal, &field, &limits, &weights, s.planner.d_safe);
            let phi = if frontiers.is_empty() { 0.0 } else { frontier_cost(&r, &frontiers) };
            Candidate {
                v: cv,
                omega: cw,
                endpoint: r.endpoint,
                base,
                frontier: phi,
                total: base + weights.rho4 * phi,
            }
        })
        .collect();
    let sel = select_command(&state, s.goal, Some(&frontiers), &ctx);
    let best = rollout(pose, sel.v, sel.omega, weights.horizon_s, limits.dt);
    let path: Vec<_> = best.poses.iter().map(|p| p.position()).collect();
    Ok(json!({
        "candidates": candidates,
        "frontiers": frontiers.frontiers,
        "selected": {"v": sel.v, "omega": sel.omega, "blocked": sel.blocked, "path": path},
    })
    .to_string())
}

#[wasm_bindgen(js_name = scenarioNames)]
pub fn scenario_names() -> String {
    scenario_names_json()
}

#[wasm_bindgen(js_name = loadScenario)]
pub fn load_scenario(name: &str) -> Result<String, JsValue> {
    to_js(scenario_json(name))
}

#[wasm_bindgen(js_name = runTrial)]
pub fn run_trial_js(name: &str, variant: &str, seed: u32) -> Result<String, JsValue> {
    to_js(run_trial_json(name, variant, seed as u64))
}

#[wasm_bindgen(js_name = planGlobal)]
pub fn plan_global(name: &str, taus: &[f64], lambda: f64) -> Result<String, JsValue> {
    to_js(plan_global_json(name, taus, lambda))
}

#[wasm_bindgen(js_name = dwaField)]
pub fn dwa_field(name: &str, x: f64, y: f64, theta: f64, v: f64, rho4: f64) -> Result<String, JsValue> {
    to_js(dwa_field_json(name, x, y, theta, v, rho4))
}
