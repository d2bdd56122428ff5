//! Per-agent conflict prediction over a horizon longer than the tracker's, and
//! longitudinal stop planning ahead of the predicted conflict point.

use serde::{Deserialize, Serialize};

use crate::geometry::{
    analytic_closing_time, footprints_overlap, wrap_angle, Footprint, Point2, Pose,
};
use crate::reference::ReferenceTrajectory;
use crate::vehicle::{step_plant_substeps, ControlInput, VehicleParams, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AvoidanceConfig {
    pub r_detect: f64,
    pub t_pred: f64,
    pub n_pred: usize,
    pub dt: f64,
    pub margin: f64,
    /// Consecutive conflict-free steps required before a stop is released.
    pub k_clear: usize,
}

impl Default for AvoidanceConfig {
    fn default() -> Self {
        Self {
            r_detect: 50.0,
            t_pred: 3.0,
            n_pred: 30,
            dt: 0.1,
            margin: 0.5,
            k_clear: 5,
        }
    }
}

impl AvoidanceConfig {
    pub fn validate(&self, horizon: usize) -> Result<(), &'static str> {
        if !(self.r_detect >= 0.0 && self.r_detect.is_finite()) {
            return Err("r_detect >= 0");
        }
        if !(self.dt > 0.0) || !(self.margin >= 0.0) {
            return Err("dt > 0 and margin >= 0");
        }
        if self.n_pred <= horizon {
            return Err("n_pred > MPC horizon");
        }
        if (self.n_pred as f64 * self.dt - self.t_pred).abs() > 1e-9 {
            return Err("n_pred * dt = t_pred");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictedStep {
    pub pose: Pose,
    pub v: f64,
    pub footprint: Footprint,
    /// Arc length along the reference (ego predictions only).
    pub s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictedPath {
    pub steps: Vec<PredictedStep>,
    /// Straight-line motion at constant speed, eligible for the analytic prefilter.
    pub constant_velocity: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConflictReport {
    pub step: usize,
    pub time_to_conflict: f64,
    pub s_conflict: f64,
    pub other_id: usize,
}

/// Steering that explains the heading change between two observations taken
/// `dt` apart under the bicycle model. Zero when the vehicle is (nearly) at rest.
pub fn estimate_steering(
    previous: &VehicleState,
    current: &VehicleState,
    dt: f64,
    wheelbase: f64,
    delta_max: f64,
) -> f64 {
    let v = 0.5 * (previous.v + current.v);
    if v.abs() < 0.1 || dt <= 0.0 {
        return 0.0;
    }
    let yaw_rate = wrap_angle(current.theta - previous.theta) / dt;
    (yaw_rate * wheelbase / v)
        .atan()
        .clamp(-delta_max, delta_max)
}

/// Constant speed and steering rollout of an observed vehicle.
pub fn predict_other(
    observed: &VehicleState,
    delta: f64,
    wheelbase: f64,
    radius: f64,
    cfg: &AvoidanceConfig,
) -> PredictedPath {
    let params = VehicleParams {
        wheelbase,
        delta_max: 1.5,
        v_min: f64::NEG_INFINITY,
        v_max: f64::INFINITY,
        ..VehicleParams::default()
    };
    let u = ControlInput::new(0.0, delta);
    let mut s = *observed;
    let mut steps = Vec::with_capacity(cfg.n_pred + 1);
    for k in 0..=cfg.n_pred {
        if k > 0 {
            s = step_plant_substeps(&s, &u, &params, cfg.dt, 4);
        }
        let pose = s.pose();
        steps.push(PredictedStep {
            pose,
            v: s.v,
            footprint: Footprint::at(&pose, wheelbase, radius),
            s: None,
        });
    }
    PredictedPath {
        steps,
        constant_velocity: delta == 0.0,
    }
}

/// Which speed profile the ego rollout follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileChoice {
    /// The reference as currently truncated.
    Current,
    /// The profile as planned, ignoring any stop.
    Nominal,
}

/// Ego rollout along its reference: speed moves toward the profile speed,
/// accelerating at up to `a_max` and braking at up to `|a_min|`.
pub fn predict_ego(
    state: &VehicleState,
    s_now: f64,
    reference: &ReferenceTrajectory,
    profile: ProfileChoice,
    params: &VehicleParams,
    cfg: &AvoidanceConfig,
) -> PredictedPath {
    let radius = params.body_radius();
    let target = |s: f64| match profile {
        ProfileChoice::Current => reference.speed_at(s),
        ProfileChoice::Nominal => reference.nominal_speed_at(s),
    };
    let mut s = s_now;
    let mut v = state.v;
    let mut steps = Vec::with_capacity(cfg.n_pred + 1);
    for k in 0..=cfg.n_pred {
        if k > 0 {
            let vt = target(s + v * cfg.dt);
            let v_next = if v < vt {
                (v + params.a_max * cfg.dt).min(vt)
            } else {
                (v + params.a_min * cfg.dt).max(vt)
            };
            s += 0.5 * (v + v_next) * cfg.dt;
            v = v_next;
            if let (ProfileChoice::Current, Some(end)) = (profile, reference.truncated_at()) {
                if s >= end {
                    s = end;
                    v = 0.0;
                }
            }
        }
        let pose = reference.pose_at(s);
        steps.push(PredictedStep {
            pose,
            v,
            footprint: Footprint::at(&pose, params.wheelbase, radius),
            s: Some(s),
        });
    }
    PredictedPath {
        steps,
        constant_velocity: false,
    }
}

fn velocity_of(step: &PredictedStep) -> Point2 {
    step.pose.heading() * step.v
}

/// True when no circle pair can come within reach during the horizon under
/// constant relative velocity.
fn prefilter_clears(ego: &PredictedPath, other: &PredictedPath, cfg: &AvoidanceConfig) -> bool {
    let (e0, o0) = (&ego.steps[0], &other.steps[0]);
    let rel_vel = velocity_of(e0) - velocity_of(o0);
    let horizon = cfg.dt * (ego.steps.len() - 1) as f64;
    for a in e0.footprint.circles() {
        for b in o0.footprint.circles() {
            match analytic_closing_time(
                a.center - b.center,
                rel_vel,
                a.radius + b.radius,
                cfg.margin,
            ) {
                Some(t) if t <= horizon => return false,
                _ => {}
            }
        }
    }
    true
}

/// First step at which the ego footprint and one of `others` overlap, with both
/// radii inflated by half the margin. The earliest conflict over all agents wins.
pub fn detect_conflict(
    ego: &PredictedPath,
    others: &[(usize, PredictedPath)],
    cfg: &AvoidanceConfig,
) -> Option<ConflictReport> {
    let half = 0.5 * cfg.margin;
    let mut best: Option<ConflictReport> = None;
    for (id, other) in others {
        if ego.constant_velocity && other.constant_velocity && prefilter_clears(ego, other, cfg) {
            continue;
        }
        let n = ego.steps.len().min(other.steps.len());
        let limit = best.map_or(n, |b| b.step.min(n));
        for k in 0..limit {
            let fe = ego.steps[k].footprint.inflate(half);
            let fo = other.steps[k].footprint.inflate(half);
            if footprints_overlap(&fe, &fo) {
                let candidate = ConflictReport {
                    step: k,
                    time_to_conflict: k as f64 * cfg.dt,
                    s_conflict: ego.steps[k].s.unwrap_or(0.0),
                    other_id: *id,
                };
                if best.is_none_or(|b| k < b.step) {
                    best = Some(candidate);
                }
                break;
            }
        }
    }
    best
}

/// Moves the conflict point back to the first place along the ego reference
/// (from `s_now`, every `spacing` metres) where the ego footprint would touch
/// any predicted footprint of the other vehicle, regardless of timing. Keeps
/// the time-based point when the ego already stands in that swept area.
pub fn refine_conflict_point(
    report: &ConflictReport,
    s_now: f64,
    reference: &ReferenceTrajectory,
    other: &PredictedPath,
    params: &VehicleParams,
    cfg: &AvoidanceConfig,
    spacing: f64,
) -> ConflictReport {
    let half = 0.5 * cfg.margin;
    let radius = params.body_radius() + half;
    let touches = |s: f64| {
        let f = Footprint::at(&reference.pose_at(s), params.wheelbase, radius);
        other
            .steps
            .iter()
            .any(|st| footprints_overlap(&f, &st.footprint.inflate(half)))
    };
    let mut s = s_now;
    while s < report.s_conflict {
        if touches(s) {
            if s <= s_now + cfg.margin {
                return *report;
            }
            return ConflictReport {
                s_conflict: s,
                ..*report
            };
        }
        s += spacing;
    }
    *report
}

#[derive(Debug, Clone, PartialEq)]
pub struct StopPlan {
    pub reference: ReferenceTrajectory,
    pub s_stop: f64,
    /// Stopping time.
    pub tau: f64,
    /// Applied deceleration (negative).
    pub decel: f64,
    /// The stop cannot be completed before the conflict point.
    pub unavoidable: bool,
    /// The conflict lies behind the ego and was not acted on.
    pub ignored: bool,
}

/// Truncates the reference so the ego stops `margin` short of the conflict
/// point, at the gentlest constant deceleration that also completes before
/// the predicted conflict time. If that needs more than `|a_min|`, the stop
/// uses `a_min` and is flagged unavoidable.
pub fn plan_stop(
    report: &ConflictReport,
    v0: f64,
    s_now: f64,
    reference: &ReferenceTrajectory,
    a_min: f64,
    cfg: &AvoidanceConfig,
) -> StopPlan {
    if report.s_conflict < s_now {
        return StopPlan {
            reference: reference.clone(),
            s_stop: 0.0,
            tau: 0.0,
            decel: 0.0,
            unavoidable: false,
            ignored: true,
        };
    }
    if v0 <= 1e-9 {
        return StopPlan {
            reference: reference.truncate_for_stop(s_now, 0.0, 0.0),
            s_stop: 0.0,
            tau: 0.0,
            decel: 0.0,
            unavoidable: false,
            ignored: false,
        };
    }
    let s_target = report.s_conflict - cfg.margin;
    let mut s_stop = (s_target - s_now).min(0.5 * v0 * report.time_to_conflict);
    let brake_limit = v0 * v0 / (2.0 * a_min.abs());
    let mut unavoidable = false;
    if s_stop < brake_limit {
        s_stop = brake_limit;
        unavoidable = true;
    }
    let decel = -v0 * v0 / (2.0 * s_stop);
    StopPlan {
        reference: reference.truncate_for_stop(s_now, s_stop, v0),
        s_stop,
        tau: 2.0 * s_stop / v0,
        decel,
        unavoidable,
        ignored: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StoppingDistances {
    pub reaction: f64,
    pub braking: f64,
    pub total: f64,
}

/// Distance covered during the reaction time plus the braking distance at `a_min`.
pub fn stopping_distances(v0: f64, reaction_time: f64, a_min: f64) -> StoppingDistances {
    let reaction = v0 * reaction_time;
    let braking = v0 * v0 / (2.0 * a_min.abs());
    StoppingDistances {
        reaction,
        braking,
        total: reaction + braking,
    }
}
