//! Kinematics, dynamics and control of a soft-flagellated underwater drone.

// `!(x > 0.0)` is how NaN gets rejected here.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod dynamics;
pub mod hydro;
pub mod kinematics;
pub mod linalg;
pub mod real;
pub mod scenario;
pub mod se3;
pub mod timeseries;

pub type Pose64 = se3::Pose<f64>;
pub type Twist64 = se3::Twist<f64>;
pub type Wrench64 = se3::Wrench<f64>;
pub type Assembly64 = kinematics::Assembly<f64>;
pub type Model64 = dynamics::Model<f64>;
pub type State64 = kinematics::GeneralizedState<f64>;
