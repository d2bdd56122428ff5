//! Constant-steering arcs used as lattice edges.

use thiserror::Error;

use crate::geometry::{wrap_angle, Point2, Pose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrimitiveError {
    #[error("primitive count must be odd and at least 3, got {0}")]
    BadCount(usize),
    #[error("delta_max must lie in (0, pi/2), got {0}")]
    BadSteering(f64),
    #[error("arc length must be positive and sample spacing in (0, arc length]")]
    BadLength,
    #[error("wheelbase must be positive")]
    BadWheelbase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionPrimitive {
    pub steering: f64,
    pub arc_length: f64,
    /// Poses in the start frame; the first is the origin.
    pub local_poses: Vec<Pose>,
    /// Positions checked for collisions (the sampled pose positions).
    pub collision_points: Vec<Point2>,
    pub end_pose: Pose,
}

impl MotionPrimitive {
    pub fn transform_to_global(&self, at: &Pose) -> (Vec<Pose>, Vec<Point2>) {
        let poses = self.local_poses.iter().map(|p| at.compose(p)).collect();
        let points = self
            .collision_points
            .iter()
            .map(|p| at.transform_point(*p))
            .collect();
        (poses, points)
    }

    pub fn end_at(&self, at: &Pose) -> Pose {
        at.compose(&self.end_pose)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveSet {
    pub primitives: Vec<MotionPrimitive>,
    pub delta_max: f64,
    pub arc_length: f64,
    pub sample_spacing: f64,
    pub wheelbase: f64,
}

impl PrimitiveSet {
    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn min_turn_radius(&self) -> f64 {
        self.wheelbase / self.delta_max.tan()
    }
}

const MAX_SUBSTEP: f64 = 0.01;

/// Integrates the unit-speed pose kinematics from the origin with constant
/// steering, emitting a pose every `sample_spacing` (and at the end).
fn integrate_arc(delta: f64, arc_length: f64, sample_spacing: f64, wheelbase: f64) -> Vec<Pose> {
    let samples = (arc_length / sample_spacing - 1e-9).ceil().max(1.0) as usize;
    let ds_sample = arc_length / samples as f64;
    let sub = (ds_sample / MAX_SUBSTEP).ceil() as usize;
    let h = ds_sample / sub as f64;
    let k = delta.tan() / wheelbase;
    let f = |th: f64| (th.cos(), th.sin());
    let mut poses = Vec::with_capacity(samples + 1);
    let (mut x, mut y, mut th) = (0.0f64, 0.0f64, 0.0f64);
    poses.push(Pose::new(0.0, 0.0, 0.0));
    for _ in 0..samples {
        for _ in 0..sub {
            let (c1, s1) = f(th);
            let (c2, s2) = f(th + 0.5 * h * k);
            let (c4, s4) = f(th + h * k);
            // theta is linear in arc length, so k2 == k3.
            x += h / 6.0 * (c1 + 4.0 * c2 + c4);
            y += h / 6.0 * (s1 + 4.0 * s2 + s4);
            th += h * k;
        }
        poses.push(Pose::new(x, y, wrap_angle(th)));
    }
    poses
}

pub fn generate_set(
    n: usize,
    delta_max: f64,
    arc_length: f64,
    sample_spacing: f64,
    wheelbase: f64,
) -> Result<PrimitiveSet, PrimitiveError> {
    if n.is_multiple_of(2) || n < 3 {
        return Err(PrimitiveError::BadCount(n));
    }
    if !(delta_max > 0.0 && delta_max < std::f64::consts::FRAC_PI_2) {
        return Err(PrimitiveError::BadSteering(delta_max));
    }
    if !(arc_length > 0.0 && sample_spacing > 0.0 && sample_spacing <= arc_length) {
        return Err(PrimitiveError::BadLength);
    }
    if !(wheelbase > 0.0) {
        return Err(PrimitiveError::BadWheelbase);
    }
    let half = (n / 2) as f64;
    let primitives = (0..n)
        .map(|i| {
            let steering = delta_max * (i as f64 - half) / half;
            let local_poses = integrate_arc(steering, arc_length, sample_spacing, wheelbase);
            let collision_points = local_poses.iter().map(|p| p.position()).collect();
            let end_pose = *local_poses.last().expect("at least two poses");
            MotionPrimitive {
                steering,
                arc_length,
                local_poses,
                collision_points,
                end_pose,
            }
        })
        .collect();
    Ok(PrimitiveSet {
        primitives,
        delta_max,
        arc_length,
        sample_spacing,
        wheelbase,
    })
}

/// The default lattice: 9 primitives up to 30 degrees, 1 m long, sampled every 0.25 m.
pub fn default_set(wheelbase: f64) -> PrimitiveSet {
    generate_set(9, 30f64.to_radians(), 1.0, 0.25, wheelbase)
        .expect("default primitive parameters are valid")
}
