//! Proprioceptive traversability indicators and their alignment with the
//! imagery captured before the robot reached the terrain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{ProprioSample, SimulatorParams};
use crate::world::{PatchDescriptor, Point, TerrainClass, WorldGrid};

/// Traversability score in `[0, 1]`; 0 is fully traversable, 1 impassable.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tau(f64);

impl Tau {
    pub const ZERO: Tau = Tau(0.0);

    /// Clamps into `[0, 1]`. NaN maps to 1 (treat unknown as impassable).
    pub fn new(v: f64) -> Self {
        if v.is_nan() {
            Tau(1.0)
        } else {
            Tau(v.clamp(0.0, 1.0))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Value used wherever τ multiplies a cost.
    pub fn floored(self, floor: f64) -> f64 {
        self.0.max(floor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkageCalibration {
    pub s_min: f64,
    pub s_max: f64,
    pub gamma: f64,
}

impl SinkageCalibration {
    /// Reference extremes from the simulator's noise-free force law: rigid
    /// ground (δ = 0) and fully deformable ground (δ = 1).
    pub fn from_force_law(p: &SimulatorParams) -> Self {
        let n = p.joints as f64;
        Self {
            s_min: n * p.f0 * p.f0,
            s_max: n * (p.f0 * (1.0 + p.kappa)).powi(2),
            gamma: 1.0,
        }
    }

    pub(crate) fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.s_max > self.s_min) {
            v.push("sinkage calibration requires s_max > s_min".into());
        }
        if !(self.gamma > 0.0) {
            v.push("sinkage calibration requires gamma > 0".into());
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlipCalibration {
    /// Weight on the distance gap, 1/m.
    pub beta1: f64,
    /// Weight on the heading gap, 1/rad.
    pub beta2: f64,
}

impl Default for SlipCalibration {
    fn default() -> Self {
        Self {
            beta1: 10.0,
            beta2: 2.0,
        }
    }
}

impl SlipCalibration {
    pub(crate) fn violations(&self) -> Vec<String> {
        let ok = self.beta1 >= 0.0 && self.beta2 >= 0.0 && (self.beta1 > 0.0 || self.beta2 > 0.0);
        if ok {
            Vec::new()
        } else {
            vec!["slip calibration requires beta1, beta2 >= 0, not both zero".into()]
        }
    }
}

/// Sum of squared joint forces, N².
pub fn sinkage_indicator(forces: &[f64]) -> Result<f64> {
    if forces.is_empty() {
        return Err(Error::EmptyForces);
    }
    Ok(forces.iter().map(|f| f * f).sum())
}

pub fn sinkage_traversability(s: f64, calib: &SinkageCalibration) -> Tau {
    Tau::new(calib.gamma * (s - calib.s_min) / (calib.s_max - calib.s_min))
}

/// Weighted gap between LiDAR and wheel odometry. Magnitudes are used so
/// that wheels over-reporting motion (the usual slip case) scores as hazard.
pub fn slip_from_deltas(odom: (f64, f64), lidar: (f64, f64), calib: &SlipCalibration) -> Tau {
    Tau::new(calib.beta1 * (lidar.0 - odom.0).abs() + calib.beta2 * (lidar.1 - odom.1).abs())
}

pub fn slip_traversability(sample: &ProprioSample, calib: &SlipCalibration) -> Result<Tau> {
    let (odom, lidar) = sample.odometry().ok_or(Error::MissingChannel("odometry"))?;
    Ok(slip_from_deltas(odom, lidar, calib))
}

/// Per-tick indicator for whichever channel the sample carries.
#[derive(Debug, Clone, Copy)]
pub struct IndicatorModel {
    pub sinkage: SinkageCalibration,
    pub slip: SlipCalibration,
}

impl IndicatorModel {
    pub fn tau(&self, sample: &ProprioSample) -> Tau {
        match sample.joint_forces() {
            Some(forces) => sinkage_indicator(forces)
                .map(|s| sinkage_traversability(s, &self.sinkage))
                .unwrap_or(Tau(1.0)),
            None => slip_traversability(sample, &self.slip).unwrap_or(Tau(1.0)),
        }
    }
}

/// Running per-axis sums of squared acceleration.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ImuEnergyAccumulator {
    pub e_ax: f64,
    pub e_ay: f64,
    pub e_az: f64,
    pub n: usize,
}

impl ImuEnergyAccumulator {
    pub fn accumulate(&mut self, a: [f64; 3]) {
        self.e_ax += a[0] * a[0];
        self.e_ay += a[1] * a[1];
        self.e_az += a[2] * a[2];
        self.n += 1;
    }

    pub fn total(&self) -> f64 {
        self.e_ax + self.e_ay + self.e_az
    }
}

/// Aerial and front-view patches grabbed at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchEvent {
    pub aerial: PatchDescriptor,
    pub front: PatchDescriptor,
    pub t_image: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub aerial: PatchDescriptor,
    pub front: PatchDescriptor,
    pub tau_shifted: Tau,
    pub label: String,
    pub t_image: f64,
    /// Time the robot entered the patch; the indicator is averaged from here.
    pub t_proprio: f64,
}

/// One tick of the indicator stream with the robot position at that tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndicatorRecord {
    pub t: f64,
    pub position: Point,
    pub tau: Tau,
}

#[derive(Debug, Clone)]
enum Phase {
    Waiting,
    Collecting {
        entry: f64,
        sum: f64,
        count: usize,
        consistent: bool,
    },
}

#[derive(Debug, Clone)]
struct Pending {
    event: PatchEvent,
    label: usize,
    phase: Phase,
}

/// Online association of captured patches with the proprioceptive readings
/// taken once the robot drives into them.
///
/// A patch waits until the robot first enters its square after capture. The
/// indicator is then averaged over `[entry, entry + window)` while the robot
/// stays inside. The exemplar is kept only if every in-window position lies on
/// the patch's majority class, so boundary-straddling patches do not credit
/// one terrain's reading to another.
#[derive(Debug, Clone)]
pub struct ExemplarTracker {
    pending: Vec<Pending>,
    window_s: f64,
}

impl ExemplarTracker {
    pub fn new(window_s: f64) -> Self {
        Self {
            pending: Vec::new(),
            window_s,
        }
    }

    pub fn push_event(&mut self, event: PatchEvent) {
        let label = event.aerial.majority_label();
        self.pending.push(Pending {
            event,
            label,
            phase: Phase::Waiting,
        });
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn observe(
        &mut self,
        rec: &IndicatorRecord,
        grid: &WorldGrid,
        classes: &[TerrainClass],
    ) -> Vec<Exemplar> {
        let mut out = Vec::new();
        let window = self.window_s;
        let here = grid.label_at(rec.position).ok();
        self.pending.retain_mut(|p| {
            let inside = p.event.aerial.contains(rec.position);
            match &mut p.phase {
                Phase::Waiting => {
                    if rec.t >= p.event.t_image && inside {
                        p.phase = Phase::Collecting {
                            entry: rec.t,
                            sum: rec.tau.value(),
                            count: 1,
                            consistent: here == Some(p.label),
                        };
                    }
                    true
                }
                Phase::Collecting {
                    entry,
                    sum,
                    count,
                    consistent,
                } => {
                    if rec.t < *entry + window - 1e-9 && inside {
                        *sum += rec.tau.value();
                        *count += 1;
                        *consistent &= here == Some(p.label);
                        return true;
                    }
                    if *consistent {
                        out.push(Exemplar {
                            aerial: p.event.aerial.clone(),
                            front: p.event.front.clone(),
                            tau_shifted: Tau::new(*sum / *count as f64),
                            label: classes[p.label].label.clone(),
                            t_image: p.event.t_image,
                            t_proprio: *entry,
                        });
                    }
                    false
                }
            }
        });
        out
    }
}

/// Batch form of [`ExemplarTracker`]: pairs each patch event with the
/// indicator readings logged after the robot entered it.
pub fn associate_exemplars(
    events: &[PatchEvent],
    log: &[IndicatorRecord],
    window_s: f64,
    grid: &WorldGrid,
    classes: &[TerrainClass],
) -> Vec<Exemplar> {
    let mut tracker = ExemplarTracker::new(window_s);
    for e in events {
        tracker.push_event(e.clone());
    }
    log.iter()
        .flat_map(|rec| tracker.observe(rec, grid, classes))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Channels;

    fn calib() -> SinkageCalibration {
        SinkageCalibration {
            s_min: 120_000.0,
            s_max: 270_000.0,
            gamma: 1.0,
        }
    }

    #[test]
    fn sinkage_sums() {
        assert_eq!(sinkage_indicator(&[0.0; 12]).unwrap(), 0.0);
        assert_eq!(sinkage_indicator(&[100.0; 12]).unwrap(), 120_000.0);
        assert_eq!(sinkage_indicator(&[100.0, 150.0]).unwrap(), 32_500.0);
        assert!(matches!(sinkage_indicator(&[]), Err(Error::EmptyForces)));
    }

    #[test]
    fn sinkage_endpoints() {
        let c = calib();
        assert_eq!(sinkage_traversability(c.s_min, &c).value(), 0.0);
        assert_eq!(sinkage_traversability(c.s_max, &c).value(), 1.0);
        assert_eq!(sinkage_traversability((c.s_min + c.s_max) / 2.0, &c).value(), 0.5);
        assert_eq!(sinkage_traversability(0.0, &c).value(), 0.0);
        assert_eq!(sinkage_traversability(1e9, &c).value(), 1.0);
    }

    #[test]
    fn derived_calibration() {
        let c = SinkageCalibration::from_force_law(&SimulatorParams::default());
        assert_eq!(c, calib());
    }

    fn wheeled(odom: (f64, f64), lidar: (f64, f64)) -> ProprioSample {
        ProprioSample {
            t: 0.0,
            channels: Channels::Wheeled {
                odom_delta: odom,
                lidar_delta: lidar,
            },
            imu_accel: [0.0; 3],
            position: Point::default(),
        }
    }

    #[test]
    fn slip_indicator() {
        let c = SlipCalibration {
            beta1: 5.0,
            beta2: 1.0,
        };
        let tau = |o, l| slip_traversability(&wheeled(o, l), &c).unwrap().value();
        assert_eq!(tau((0.1, 0.02), (0.1, 0.02)), 0.0);
        assert!((tau((0.1, 0.0), (0.06, 0.0)) - 0.2).abs() < 1e-12);
        assert_eq!(tau((0.4, 0.0), (0.1, 0.0)), 1.0);
        assert_eq!(tau((0.1, 0.0), (0.14, 0.0)), tau((0.1, 0.0), (0.06, 0.0)));
        let legged = ProprioSample {
            channels: Channels::Legged {
                joint_forces: vec![1.0],
            },
            ..wheeled((0.0, 0.0), (0.0, 0.0))
        };
        assert!(matches!(
            slip_traversability(&legged, &c),
            Err(Error::MissingChannel(_))
        ));
    }

    #[test]
    fn imu_energy() {
        let mut acc = ImuEnergyAccumulator::default();
        assert_eq!(acc.total(), 0.0);
        acc.accumulate([1.0, 0.0, 0.0]);
        acc.accumulate([0.0, 2.0, 0.0]);
        assert_eq!(acc.total(), 5.0);
        let mut acc = ImuEnergyAccumulator::default();
        for _ in 0..7 {
            acc.accumulate([0.5; 3]);
        }
        assert_eq!(acc.total(), 3.0 * 7.0 * 0.25);
        assert_eq!(acc.n, 7);
    }

    #[test]
    fn tau_clamps() {
        assert_eq!(Tau::new(-0.3).value(), 0.0);
        assert_eq!(Tau::new(1.7).value(), 1.0);
        assert_eq!(Tau::new(f64::NAN).value(), 1.0);
        assert_eq!(Tau::ZERO.floored(0.05), 0.05);
    }
}
