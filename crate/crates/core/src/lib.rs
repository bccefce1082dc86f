//! Terrain-aware navigation: proprioceptive traversability grounding,
//! in-context terrain reasoning, waypoint-level global planning and a
//! frontier-aware dynamic-window local planner, plus a simulator and trial
//! harness to exercise them.

// `!(a > b)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod global;
pub mod harness;
pub mod local;
pub mod proprio;
pub mod reasoning;
#[cfg(feature = "remote")]
pub mod remote;
pub mod render;
pub mod scenarios;
pub mod sim;
pub mod world;

pub use error::{Error, Result};
pub use global::NavigationObjective;
pub use harness::{run_batch, run_trial, MethodVariant, TrialOptions, TrialResult};
pub use world::{load_scenario, ScenarioConfig};
