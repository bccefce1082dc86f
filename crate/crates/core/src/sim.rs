//! Unicycle simulator over the terrain grid.
//!
//! Terrain effects are synthetic: slipperiness eats into the commanded
//! displacement, deformability inflates joint forces, and roughness plus the
//! embodiment's hazard property shake the IMU. Every random draw comes from the
//! caller's seeded stream, in a fixed order per tick.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{
    normalize_angle, Embodiment, KinematicLimits, Point, Pose, RobotState, TerrainClass,
    WorldGrid,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulatorParams {
    pub joints: usize,
    /// Rigid-ground joint force, N.
    pub f0: f64,
    /// Force gain per unit deformability.
    pub kappa: f64,
    /// Force noise scale, N (multiplied by roughness).
    pub s_force: f64,
    /// IMU noise scale, m/s².
    pub s_imu: f64,
    /// LiDAR odometry noise, per component.
    pub s_lidar: f64,
    /// Bounds of the uniform slip draw `u`.
    pub slip_draw: [f64; 2],
    pub legged_slip_factor: f64,
    pub footprint_radius: f64,
    pub goal_radius: f64,
    pub stuck_window_s: f64,
    pub stuck_slip_ratio: f64,
    pub stuck_sinkage_tau: f64,
}

impl Default for SimulatorParams {
    fn default() -> Self {
        Self {
            joints: 12,
            f0: 100.0,
            kappa: 0.5,
            s_force: 10.0,
            s_imu: 2.0,
            s_lidar: 0.002,
            slip_draw: [0.7, 1.0],
            legged_slip_factor: 0.5,
            footprint_radius: 0.4,
            goal_radius: 1.0,
            stuck_window_s: 3.0,
            stuck_slip_ratio: 0.8,
            stuck_sinkage_tau: 0.9,
        }
    }
}

impl SimulatorParams {
    /// All noise sources off and slip draws pinned to `u = 1`.
    pub fn noise_free(mut self) -> Self {
        self.s_force = 0.0;
        self.s_imu = 0.0;
        self.s_lidar = 0.0;
        self.slip_draw = [1.0, 1.0];
        self
    }

    pub(crate) fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.joints == 0 {
            v.push("simulator.joints must be >= 1".into());
        }
        if !(self.f0 > 0.0) {
            v.push("simulator.f0 must be > 0".into());
        }
        if !(self.kappa >= 0.0) {
            v.push("simulator.kappa must be >= 0".into());
        }
        if !(self.s_force >= 0.0 && self.s_imu >= 0.0 && self.s_lidar >= 0.0) {
            v.push("simulator noise scales must be >= 0".into());
        }
        let [lo, hi] = self.slip_draw;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            v.push("simulator.slip_draw must satisfy 0 <= lo <= hi <= 1".into());
        }
        if !(self.footprint_radius > 0.0 && self.goal_radius > 0.0 && self.stuck_window_s > 0.0) {
            v.push("simulator radii and stuck window must be > 0".into());
        }
        v
    }
}

/// Per-embodiment proprioceptive channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channels {
    Legged {
        joint_forces: Vec<f64>,
    },
    Wheeled {
        /// `(Δd, Δθ)` reported by the wheels.
        odom_delta: (f64, f64),
        /// `(Δd, Δθ)` from scan matching.
        lidar_delta: (f64, f64),
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProprioSample {
    pub t: f64,
    pub channels: Channels,
    pub imu_accel: [f64; 3],
    pub position: Point,
}

impl ProprioSample {
    pub fn joint_forces(&self) -> Option<&[f64]> {
        match &self.channels {
            Channels::Legged { joint_forces } => Some(joint_forces),
            Channels::Wheeled { .. } => None,
        }
    }

    pub fn odometry(&self) -> Option<((f64, f64), (f64, f64))> {
        match self.channels {
            Channels::Wheeled {
                odom_delta,
                lidar_delta,
            } => Some((odom_delta, lidar_delta)),
            Channels::Legged { .. } => None,
        }
    }

    /// `1 - Δd_lidar / Δd_odom`, defined only while the wheels report motion.
    pub fn slip_ratio(&self) -> Option<f64> {
        let ((odom_d, _), (lidar_d, _)) = self.odometry()?;
        (odom_d > 0.0).then(|| 1.0 - lidar_d / odom_d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialState {
    Running,
    Success,
    Collision,
    Immobilized,
    Timeout,
}

impl TrialState {
    pub fn is_terminal(self) -> bool {
        self != TrialState::Running
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialStatus {
    pub state: TrialState,
    pub t: f64,
}

impl TrialStatus {
    pub fn running(t: f64) -> Self {
        Self {
            state: TrialState::Running,
            t,
        }
    }

    /// Terminal states are absorbing: once set, later updates are ignored.
    pub fn advance(&mut self, next: TrialStatus) {
        if !self.state.is_terminal() {
            *self = next;
        }
    }
}

/// Effective slipperiness for one tick.
pub fn effective_slip(cell: &TerrainClass, embodiment: Embodiment, u: f64, legged_factor: f64) -> f64 {
    let s = cell.slipperiness * u;
    match embodiment {
        Embodiment::Legged => s * legged_factor,
        Embodiment::Wheeled => s,
    }
}

/// Displacement actually achieved under slip: `(Δd, Δθ)`.
pub fn true_motion(v: f64, omega: f64, dt: f64, sigma_eff: f64) -> (f64, f64) {
    (v * dt * (1.0 - sigma_eff), omega * dt * (1.0 - sigma_eff / 2.0))
}

/// Advances a pose along the arc with displacement `dd` and turn `dtheta`.
pub fn integrate_arc(pose: Pose, dd: f64, dtheta: f64) -> Pose {
    let th = pose.theta;
    let (x, y) = if dtheta.abs() < 1e-12 {
        let mid = th + dtheta / 2.0;
        (pose.x + dd * mid.cos(), pose.y + dd * mid.sin())
    } else {
        let r = dd / dtheta;
        (
            pose.x + r * ((th + dtheta).sin() - th.sin()),
            pose.y + r * (th.cos() - (th + dtheta).cos()),
        )
    };
    Pose::new(x, y, normalize_angle(th + dtheta))
}

pub fn synthesize_joint_forces<R: Rng + ?Sized>(
    cell: &TerrainClass,
    rng: &mut R,
    n: usize,
    f0: f64,
    kappa: f64,
    s_force: f64,
) -> Vec<f64> {
    let mean = f0 * (1.0 + kappa * cell.deformability);
    let std = s_force * cell.roughness;
    (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            (mean + z * std).max(0.0)
        })
        .collect()
}

/// Wheels report the commanded motion; LiDAR sees the true motion plus noise.
pub fn synthesize_odometry<R: Rng + ?Sized>(
    true_motion: (f64, f64),
    cmd: (f64, f64),
    dt: f64,
    rng: &mut R,
    s_lidar: f64,
) -> ((f64, f64), (f64, f64)) {
    let odom = (cmd.0 * dt, cmd.1 * dt);
    let zd: f64 = rng.sample(StandardNormal);
    let zt: f64 = rng.sample(StandardNormal);
    let lidar = (true_motion.0 + zd * s_lidar, true_motion.1 + zt * s_lidar);
    (odom, lidar)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: RobotState,
    pub sample: ProprioSample,
    /// `(Δd, Δθ)` actually travelled.
    pub motion: (f64, f64),
}

/// One control tick. `t` is the time stamp given to the sample (end of tick).
#[allow(clippy::too_many_arguments)]
pub fn step<R: Rng + ?Sized>(
    state: &RobotState,
    cmd: (f64, f64),
    grid: &WorldGrid,
    classes: &[TerrainClass],
    params: &SimulatorParams,
    limits: &KinematicLimits,
    rng: &mut R,
    t: f64,
) -> Result<StepOutcome> {
    limits.check_command((state.v, state.omega), cmd)?;
    let dt = limits.dt;
    let cell = &classes[grid.label_at(state.pose.position())?];
    let (v, omega) = cmd;

    let [lo, hi] = params.slip_draw;
    let u = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let sigma_eff = effective_slip(cell, state.embodiment, u, params.legged_slip_factor);
    let motion = true_motion(v, omega, dt, sigma_eff);
    let pose = integrate_arc(state.pose, motion.0, motion.1);

    let channels = match state.embodiment {
        Embodiment::Legged => Channels::Legged {
            joint_forces: synthesize_joint_forces(
                cell,
                rng,
                params.joints,
                params.f0,
                params.kappa,
                params.s_force,
            ),
        },
        Embodiment::Wheeled => {
            let (odom_delta, lidar_delta) =
                synthesize_odometry(motion, cmd, dt, rng, params.s_lidar);
            Channels::Wheeled {
                odom_delta,
                lidar_delta,
            }
        }
    };

    let hazard = match state.embodiment {
        Embodiment::Legged => cell.deformability,
        Embodiment::Wheeled => cell.slipperiness,
    };
    let imu_std = params.s_imu * (cell.roughness + hazard);
    let commanded = [(v - state.v) / dt, v * omega, 0.0];
    let mut imu_accel = [0.0; 3];
    for (a, c) in imu_accel.iter_mut().zip(commanded) {
        let z: f64 = rng.sample(StandardNormal);
        *a = c + z * imu_std;
    }

    let next = RobotState {
        pose,
        v,
        omega,
        ..*state
    };
    Ok(StepOutcome {
        sample: ProprioSample {
            t,
            channels,
            imu_accel,
            position: pose.position(),
        },
        state: next,
        motion,
    })
}

/// Rolling history of the per-tick hazard signal used for stuck detection:
/// slip ratio for wheeled robots, sinkage traversability for legged ones.
#[derive(Debug, Clone, Default)]
pub struct StuckMonitor {
    samples: VecDeque<(f64, Option<f64>)>,
    window_s: f64,
}

impl StuckMonitor {
    pub fn new(window_s: f64) -> Self {
        Self {
            samples: VecDeque::new(),
            window_s,
        }
    }

    pub fn push(&mut self, t: f64, value: Option<f64>) {
        self.samples.push_back((t, value));
        // keep one sample at or before the window start so coverage can be checked
        while self.samples.len() > 1 && self.samples[1].0 <= t - self.window_s {
            self.samples.pop_front();
        }
    }

    /// Mean of defined values inside `(t_now - window, t_now]`, provided the
    /// history spans the whole window.
    pub fn window_mean(&self) -> Option<f64> {
        let &(t_now, _) = self.samples.back()?;
        let &(t_first, _) = self.samples.front()?;
        // the first sample's tick started one period before its stamp
        if t_now - t_first < self.window_s - 1e-9 - self.period() {
            return None;
        }
        let start = t_now - self.window_s + 1e-9;
        let vals: Vec<f64> = self
            .samples
            .iter()
            .filter(|(t, _)| *t > start)
            .filter_map(|(_, v)| *v)
            .collect();
        if vals.is_empty() {
            return None;
        }
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }

    fn period(&self) -> f64 {
        if self.samples.len() >= 2 {
            self.samples[1].0 - self.samples[0].0
        } else {
            0.0
        }
    }
}

/// Stuck-detection history plus thresholds.
pub struct TerminationInputs<'a> {
    pub goal: Point,
    pub grid: &'a WorldGrid,
    pub params: &'a SimulatorParams,
    pub monitor: &'a StuckMonitor,
    pub t: f64,
    pub timeout_s: f64,
}

pub fn check_termination(state: &RobotState, inputs: &TerminationInputs<'_>) -> TrialStatus {
    let p = state.pose.position();
    let t = inputs.t;
    let params = inputs.params;
    let status = |state| TrialStatus { state, t };

    if p.distance(&inputs.goal) <= params.goal_radius {
        return status(TrialState::Success);
    }
    if inputs.grid.disc_collides(p, state.footprint_radius) {
        return status(TrialState::Collision);
    }
    let limit = match state.embodiment {
        Embodiment::Wheeled => params.stuck_slip_ratio,
        Embodiment::Legged => params.stuck_sinkage_tau,
    };
    if inputs.monitor.window_mean().is_some_and(|m| m > limit) {
        return status(TrialState::Immobilized);
    }
    if t > inputs.timeout_s {
        return status(TrialState::Timeout);
    }
    status(TrialState::Running)
}

/// Guard against misuse of the slip channel accessors.
pub fn require_odometry(sample: &ProprioSample) -> Result<((f64, f64), (f64, f64))> {
    sample.odometry().ok_or(Error::MissingChannel("odometry"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn class(delta: f64, sigma: f64, r: f64) -> TerrainClass {
        TerrainClass {
            label: "t".into(),
            deformability: delta,
            slipperiness: sigma,
            roughness: r,
            prior_tau: 0.0,
            appearance: [0, 0, 0],
        }
    }

    fn world(c: TerrainClass) -> (WorldGrid, Vec<TerrainClass>) {
        (WorldGrid::uniform(100, 100, 0.5, 0), vec![c])
    }

    #[test]
    fn concrete_advances_exactly() {
        let (g, cls) = world(class(0.0, 0.0, 0.0));
        let p = SimulatorParams::default().noise_free();
        let l = KinematicLimits::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = RobotState::at_rest(Pose::new(10.0, 10.0, 0.3), Embodiment::Wheeled, 0.4);
        s.v = 1.0;
        let out = step(&s, (1.0, 0.0), &g, &cls, &p, &l, &mut rng, 0.1).unwrap();
        let d = out.state.pose.position().distance(&Point::new(10.0, 10.0));
        assert!((d - 0.1).abs() < 1e-15);
        assert_eq!(out.state.pose.theta, 0.3);
    }

    #[test]
    fn full_slip_stalls() {
        let (g, cls) = world(class(0.0, 1.0, 0.0));
        let p = SimulatorParams::default().noise_free();
        let l = KinematicLimits::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = RobotState::at_rest(Pose::new(10.0, 10.0, 0.0), Embodiment::Wheeled, 0.4);
        s.v = 1.0;
        let out = step(&s, (1.0, 0.0), &g, &cls, &p, &l, &mut rng, 0.1).unwrap();
        assert_eq!(out.motion.0, 0.0);
        assert_eq!(out.state.pose.x, 10.0);
    }

    #[test]
    fn motion_law_substitution() {
        let (dd, _) = true_motion(1.0, 0.0, 0.1, 0.5 * 0.8);
        assert!((dd - 0.06).abs() < 1e-15);
    }

    #[test]
    fn rejects_out_of_window_command() {
        let (g, cls) = world(class(0.0, 0.0, 0.0));
        let s = RobotState::at_rest(Pose::new(10.0, 10.0, 0.0), Embodiment::Wheeled, 0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = step(
            &s,
            (1.0, 0.0),
            &g,
            &cls,
            &SimulatorParams::default(),
            &KinematicLimits::default(),
            &mut rng,
            0.1,
        );
        assert!(matches!(r, Err(Error::CommandOutOfLimits { .. })));
    }

    #[test]
    fn joint_force_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = synthesize_joint_forces(&class(0.0, 0.0, 0.0), &mut rng, 12, 100.0, 0.5, 10.0);
        assert!(f.iter().all(|&x| x == 100.0));
        let f = synthesize_joint_forces(&class(1.0, 0.0, 0.0), &mut rng, 12, 100.0, 0.5, 0.0);
        assert!(f.iter().all(|&x| x == 150.0));
        let f = synthesize_joint_forces(&class(0.5, 0.0, 0.0), &mut rng, 12, 100.0, 0.5, 0.0);
        assert!(f.iter().all(|&x| x == 125.0));
        let s: f64 = f.iter().map(|x| x * x).sum();
        assert_eq!(s, 187_500.0);
        let f = synthesize_joint_forces(&class(1.0, 0.0, 1.0), &mut rng, 1000, 1.0, 0.0, 50.0);
        assert!(f.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn odometry_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (o, l) = synthesize_odometry((0.1, 0.2 * 0.1), (1.0, 0.2), 0.1, &mut rng, 0.0);
        assert_eq!(o, l);
        let (o, l) = synthesize_odometry((0.0, 0.0), (1.0, 0.0), 0.1, &mut rng, 0.0);
        assert_eq!((o.0, l.0), (0.1, 0.0));
        let m = true_motion(1.0, 0.0, 0.1, 0.4);
        let (o, l) = synthesize_odometry(m, (1.0, 0.0), 0.1, &mut rng, 0.0);
        assert!((o.0 - 0.1).abs() < 1e-15 && (l.0 - 0.06).abs() < 1e-15);
        assert!((o.0 - l.0 - 0.04).abs() < 1e-15);
    }

    fn monitor_with(values: &[f64], dt: f64) -> StuckMonitor {
        let mut m = StuckMonitor::new(3.0);
        for (i, v) in values.iter().enumerate() {
            m.push((i + 1) as f64 * dt, Some(*v));
        }
        m
    }

    #[test]
    fn termination_rules() {
        let g = WorldGrid::uniform(100, 100, 0.5, 0);
        let params = SimulatorParams::default();
        let goal = Point::new(20.0, 20.0);
        let run = |pos: Point, m: &StuckMonitor, emb: Embodiment, t: f64| {
            let s = RobotState::at_rest(Pose::new(pos.x, pos.y, 0.0), emb, 0.4);
            check_termination(
                &s,
                &TerminationInputs {
                    goal,
                    grid: &g,
                    params: &params,
                    monitor: m,
                    t,
                    timeout_s: 60.0,
                },
            )
            .state
        };
        let quiet = StuckMonitor::new(3.0);
        assert_eq!(run(goal, &quiet, Embodiment::Wheeled, 1.0), TrialState::Success);
        let stuck = monitor_with(&[1.0; 30], 0.1);
        assert_eq!(run(Point::new(5.0, 5.0), &stuck, Embodiment::Wheeled, 3.0), TrialState::Immobilized);
        let half = monitor_with(&[0.5; 60], 0.1);
        assert_eq!(run(Point::new(5.0, 5.0), &half, Embodiment::Wheeled, 6.0), TrialState::Running);
        let short = monitor_with(&[1.0; 20], 0.1);
        assert_eq!(run(Point::new(5.0, 5.0), &short, Embodiment::Legged, 2.0), TrialState::Running);
        assert_eq!(run(Point::new(5.0, 5.0), &quiet, Embodiment::Legged, 61.0), TrialState::Timeout);
        assert_eq!(run(Point::new(0.1, 5.0), &quiet, Embodiment::Legged, 1.0), TrialState::Collision);
    }

    #[test]
    fn terminal_status_absorbs() {
        let mut s = TrialStatus::running(0.0);
        s.advance(TrialStatus { state: TrialState::Collision, t: 1.0 });
        s.advance(TrialStatus { state: TrialState::Success, t: 2.0 });
        assert_eq!(s.state, TrialState::Collision);
        assert_eq!(s.t, 1.0);
    }
}
