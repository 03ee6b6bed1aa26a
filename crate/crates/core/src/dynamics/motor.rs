use serde::{Deserialize, Serialize};

use super::{Drive, DynamicsError};
use crate::kinematics::Assembly;
use crate::real::Real;
use crate::se3::Wrench;

pub const RPM: f64 = std::f64::consts::PI / 30.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
struct Segment {
    t0: f64,
    from: f64,
    to: f64,
}

/// Kinematic motor speed schedule. A new command ramps the speed linearly
/// from its current value to the target over `ramp_time`, so angle, speed
/// and acceleration are known in closed form at any time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotorProgram {
    pub ramp_time: f64,
    pub limit: f64,
    segments: [Segment; 12],
}

impl MotorProgram {
    pub fn new(ramp_time: f64, limit: f64) -> Self {
        assert!(ramp_time > 0.0, "ramp time must be positive");
        Self { ramp_time, limit, segments: [Segment::default(); 12] }
    }

    /// Commands motor `motor` (1-based) to `speed` rad/s from time `t`.
    pub fn command(&mut self, motor: usize, t: f64, speed: f64) -> Result<(), DynamicsError> {
        if !(speed.abs() <= self.limit) {
            return Err(DynamicsError::SpeedLimit { motor, speed, limit: self.limit });
        }
        let from = self.speed(motor, t);
        self.segments[motor - 1] = Segment { t0: t, from, to: speed };
        Ok(())
    }

    pub fn command_all(&mut self, t: f64, speeds: &[f64; 12]) -> Result<(), DynamicsError> {
        for (i, &w) in speeds.iter().enumerate() {
            if w != self.segments[i].to {
                self.command(i + 1, t, w)?;
            }
        }
        Ok(())
    }

    pub fn target(&self, motor: usize) -> f64 {
        self.segments[motor - 1].to
    }

    pub fn speed(&self, motor: usize, t: f64) -> f64 {
        let s = &self.segments[motor - 1];
        let a = ((t - s.t0) / self.ramp_time).clamp(0.0, 1.0);
        s.from + (s.to - s.from) * a
    }

    pub fn accel(&self, motor: usize, t: f64) -> f64 {
        let s = &self.segments[motor - 1];
        if t >= s.t0 && t < s.t0 + self.ramp_time {
            (s.to - s.from) / self.ramp_time
        } else {
            0.0
        }
    }

    /// Motor id driving each prescribed coordinate of `asm`.
    fn ids<T: Real>(asm: &Assembly<T>) -> impl Iterator<Item = Option<usize>> + '_ {
        asm.prescribed().iter().map(move |&p| asm.motors().iter().find(|m| m.dof == p).map(|m| m.id))
    }

    pub fn drive<T: Real>(&self, asm: &Assembly<T>, t: f64) -> Drive<T> {
        Drive {
            prescribed_accel: Self::ids(asm).map(|id| T::of(id.map_or(0.0, |m| self.accel(m, t)))).collect(),
            root_wrench: Wrench::zero(),
            generalized_force: None,
        }
    }

    /// Prescribed coordinate speeds at `t`.
    pub fn prescribed_speeds<T: Real>(&self, asm: &Assembly<T>, t: f64) -> Vec<T> {
        Self::ids(asm).map(|id| T::of(id.map_or(0.0, |m| self.speed(m, t)))).collect()
    }
}
