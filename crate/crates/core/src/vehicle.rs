//! Kinematic bicycle model with state ordering `[x, y, v, theta]` and input
//! ordering `[a, delta]`.

use nalgebra::{Matrix4, Matrix4x2, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{wrap_angle, Point2, Pose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VehicleError {
    #[error("steering angle {0} rad is at or beyond the tan singularity")]
    SingularSteering(f64),
    #[error("invalid vehicle parameter: {0}")]
    InvalidParams(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub theta: f64,
}

impl VehicleState {
    pub const fn new(x: f64, y: f64, v: f64, theta: f64) -> Self {
        Self { x, y, v, theta }
    }

    pub fn from_pose(p: &Pose, v: f64) -> Self {
        Self::new(p.x, p.y, v, p.theta)
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.x, self.y, self.theta)
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.x, self.y, self.v, self.theta)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub a: f64,
    pub delta: f64,
}

impl ControlInput {
    pub const fn new(a: f64, delta: f64) -> Self {
        Self { a, delta }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    pub wheelbase: f64,
    pub length: f64,
    pub width: f64,
    pub delta_max: f64,
    pub delta_rate_max: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            wheelbase: 2.7,
            length: 4.0,
            width: 1.8,
            delta_max: 30f64.to_radians(),
            delta_rate_max: 45f64.to_radians(),
            a_min: -10.0,
            a_max: 2.0,
            v_min: 0.0,
            v_max: 15.0,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), VehicleError> {
        let finite = [
            self.wheelbase,
            self.length,
            self.width,
            self.delta_max,
            self.delta_rate_max,
            self.a_min,
            self.a_max,
            self.v_min,
            self.v_max,
        ]
        .iter()
        .all(|x| x.is_finite());
        if !finite {
            return Err(VehicleError::InvalidParams(
                "all vehicle parameters must be finite",
            ));
        }
        if self.wheelbase <= 0.0 {
            return Err(VehicleError::InvalidParams("wheelbase > 0"));
        }
        if self.length <= 0.0 || self.width <= 0.0 {
            return Err(VehicleError::InvalidParams("length > 0 and width > 0"));
        }
        if !(self.delta_max > 0.0 && self.delta_max < std::f64::consts::FRAC_PI_2) {
            return Err(VehicleError::InvalidParams("0 < delta_max < pi/2"));
        }
        if self.delta_rate_max <= 0.0 {
            return Err(VehicleError::InvalidParams("delta_rate_max > 0"));
        }
        if !(self.a_min < 0.0 && 0.0 < self.a_max) {
            return Err(VehicleError::InvalidParams("a_min < 0 < a_max"));
        }
        if !(0.0 <= self.v_min && self.v_min < self.v_max) {
            return Err(VehicleError::InvalidParams("0 <= v_min < v_max"));
        }
        Ok(())
    }

    /// Radius of each footprint circle that covers the vehicle body.
    pub fn body_radius(&self) -> f64 {
        (self.width / 2.0).max(self.length / 4.0)
    }

    pub fn clamp_input(&self, u: ControlInput) -> ControlInput {
        ControlInput::new(
            u.a.clamp(self.a_min, self.a_max),
            u.delta.clamp(-self.delta_max, self.delta_max),
        )
    }
}

fn check_steering(delta: f64) -> Result<(), VehicleError> {
    if !(delta.abs() < std::f64::consts::FRAC_PI_2) {
        return Err(VehicleError::SingularSteering(delta));
    }
    Ok(())
}

pub fn derivative(
    s: &VehicleState,
    u: &ControlInput,
    p: &VehicleParams,
) -> Result<Vector4<f64>, VehicleError> {
    check_steering(u.delta)?;
    Ok(raw_derivative(&s.to_vector(), u, p.wheelbase))
}

fn raw_derivative(x: &Vector4<f64>, u: &ControlInput, wheelbase: f64) -> Vector4<f64> {
    let (v, th) = (x[2], x[3]);
    Vector4::new(
        v * th.cos(),
        v * th.sin(),
        u.a,
        v * u.delta.tan() / wheelbase,
    )
}

/// Continuous-time affine model `x' = A x + B u + d` about an operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: Matrix4<f64>,
    pub b: Matrix4x2<f64>,
    pub d: Vector4<f64>,
    pub v_op: f64,
    pub theta_op: f64,
    pub delta_op: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteModel {
    pub a: Matrix4<f64>,
    pub b: Matrix4x2<f64>,
    pub d: Vector4<f64>,
    pub ts: f64,
}

impl DiscreteModel {
    pub fn propagate(&self, x: &Vector4<f64>, u: &ControlInput) -> Vector4<f64> {
        self.a * x + self.b * nalgebra::Vector2::new(u.a, u.delta) + self.d
    }
}

pub fn linearize(
    op_state: &VehicleState,
    op_input: &ControlInput,
    p: &VehicleParams,
) -> Result<LinearModel, VehicleError> {
    check_steering(op_input.delta)?;
    Ok(linearize_at(
        op_state.v,
        op_state.theta,
        op_input.delta,
        p.wheelbase,
    ))
}

/// Linearization about speed `v`, heading `theta` and steering `delta`.
/// Only these three enter the Jacobians.
pub fn linearize_at(v: f64, theta: f64, delta: f64, wheelbase: f64) -> LinearModel {
    let (s, c) = theta.sin_cos();
    let t = delta.tan();
    let cos2 = delta.cos().powi(2);
    #[rustfmt::skip]
    let a = Matrix4::new(
        0.0, 0.0, c,   -v * s,
        0.0, 0.0, s,    v * c,
        0.0, 0.0, 0.0,  0.0,
        0.0, 0.0, t / wheelbase, 0.0,
    );
    #[rustfmt::skip]
    let b = Matrix4x2::new(
        0.0, 0.0,
        0.0, 0.0,
        1.0, 0.0,
        0.0, v / (wheelbase * cos2),
    );
    let d = Vector4::new(
        v * s * theta,
        -v * c * theta,
        0.0,
        -v * delta / (wheelbase * cos2),
    );
    LinearModel {
        a,
        b,
        d,
        v_op: v,
        theta_op: theta,
        delta_op: delta,
    }
}

pub fn discretize(m: &LinearModel, ts: f64) -> DiscreteModel {
    DiscreteModel {
        a: Matrix4::identity() + m.a * ts,
        b: m.b * ts,
        d: m.d * ts,
        ts,
    }
}

/// Advances the nonlinear plant by `dt` with one classical RK4 step. The input
/// is clamped to the vehicle limits first.
pub fn step_plant(s: &VehicleState, u: &ControlInput, p: &VehicleParams, dt: f64) -> VehicleState {
    let u = p.clamp_input(*u);
    let x = s.to_vector();
    let l = p.wheelbase;
    let k1 = raw_derivative(&x, &u, l);
    let k2 = raw_derivative(&(x + k1 * (dt / 2.0)), &u, l);
    let k3 = raw_derivative(&(x + k2 * (dt / 2.0)), &u, l);
    let k4 = raw_derivative(&(x + k3 * dt), &u, l);
    let n = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    VehicleState::new(n[0], n[1], n[2].clamp(p.v_min, p.v_max), wrap_angle(n[3]))
}

/// Repeated `step_plant` with `substeps` equal sub-intervals.
pub fn step_plant_substeps(
    s: &VehicleState,
    u: &ControlInput,
    p: &VehicleParams,
    dt: f64,
    substeps: usize,
) -> VehicleState {
    let h = dt / substeps as f64;
    (0..substeps).fold(*s, |acc, _| step_plant(&acc, u, p, h))
}
