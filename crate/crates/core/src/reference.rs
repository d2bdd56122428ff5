//! Speed-annotated reference paths, their time parameterization and the
//! stop-truncation used by the avoidance layer.

use serde::Serialize;

use crate::geometry::{project_point_to_segment, wrap_angle, Point2, Pose, Segment};
use crate::planner::PlannedPath;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Waypoint {
    pub pose: Pose,
    pub v_ref: f64,
    pub s: f64,
}

/// Reference state handed to the tracker. `theta` is unwrapped so that
/// consecutive samples never jump by 2 pi.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceSample {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub s: f64,
    /// Signed curvature of the path around this sample.
    pub curvature: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Segment index (waypoint `index` to `index + 1`).
    pub index: usize,
    /// Fraction along that segment.
    pub fraction: f64,
    pub s: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileLimits {
    pub v_desired: f64,
    pub a_max: f64,
    pub a_dec: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    waypoints: Vec<Waypoint>,
    /// Continuous heading per waypoint.
    theta_unwrapped: Vec<f64>,
    /// Profile as assigned, before any truncation.
    nominal_v: Vec<f64>,
    /// Arrival time at each waypoint under the current profile; infinite once
    /// the profile has come to rest.
    times: Vec<f64>,
    limits: ProfileLimits,
    truncated_at: Option<f64>,
}

fn profile_speed(s: f64, s_total: f64, v_start: f64, lim: &ProfileLimits) -> f64 {
    let accel = (v_start * v_start + 2.0 * lim.a_max * s).sqrt();
    let decel = (2.0 * lim.a_dec * (s_total - s).max(0.0)).sqrt();
    accel.min(lim.v_desired).min(decel)
}

/// Time to cover `x` metres from speed `v0` on a segment of length `ds` whose
/// end speed is `v1` (constant acceleration on the segment).
fn time_into_segment(v0: f64, v1: f64, ds: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let a = (v1 * v1 - v0 * v0) / (2.0 * ds);
    let vx = (v0 * v0 + 2.0 * a * x).max(0.0).sqrt();
    if v0 + vx <= 0.0 {
        f64::INFINITY
    } else {
        2.0 * x / (v0 + vx)
    }
}

impl ReferenceTrajectory {
    /// Builds a reference from dense poses. Poses closer than 1e-9 m to their
    /// predecessor are dropped so that arc length is strictly increasing.
    pub fn from_poses(poses: &[Pose], limits: ProfileLimits, v_start: f64) -> Self {
        assert!(!poses.is_empty(), "reference needs at least one pose");
        let mut kept: Vec<Pose> = vec![poses[0]];
        let mut s_vals = vec![0.0];
        for p in &poses[1..] {
            let last = kept.last().unwrap();
            let ds = last.position().dist(p.position());
            if ds > 1e-9 {
                s_vals.push(s_vals.last().unwrap() + ds);
                kept.push(*p);
            }
        }
        let mut theta_unwrapped = Vec::with_capacity(kept.len());
        let mut prev = kept[0].theta;
        theta_unwrapped.push(prev);
        for p in &kept[1..] {
            prev += wrap_angle(p.theta - prev);
            theta_unwrapped.push(prev);
        }
        let s_total = *s_vals.last().unwrap();
        let v_start = v_start.clamp(0.0, limits.v_desired);
        let waypoints: Vec<Waypoint> = kept
            .iter()
            .zip(&s_vals)
            .enumerate()
            .map(|(i, (p, &s))| {
                let v = if i + 1 == kept.len() {
                    0.0
                } else {
                    profile_speed(s, s_total, v_start, &limits)
                };
                Waypoint {
                    pose: *p,
                    v_ref: v,
                    s,
                }
            })
            .collect();
        let nominal_v = waypoints.iter().map(|w| w.v_ref).collect();
        let mut r = Self {
            waypoints,
            theta_unwrapped,
            nominal_v,
            times: Vec::new(),
            limits,
            truncated_at: None,
        };
        r.rebuild_times();
        r
    }

    fn rebuild_times(&mut self) {
        let w = &self.waypoints;
        let mut times = Vec::with_capacity(w.len());
        let mut t = 0.0;
        times.push(t);
        for i in 1..w.len() {
            let ds = w[i].s - w[i - 1].s;
            let vs = w[i - 1].v_ref + w[i].v_ref;
            t += if vs > 0.0 {
                2.0 * ds / vs
            } else {
                f64::INFINITY
            };
            times.push(t);
        }
        self.times = times;
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    pub fn limits(&self) -> ProfileLimits {
        self.limits
    }

    pub fn truncated_at(&self) -> Option<f64> {
        self.truncated_at
    }

    pub fn total_length(&self) -> f64 {
        self.waypoints.last().unwrap().s
    }

    pub fn final_pose(&self) -> Pose {
        self.waypoints.last().unwrap().pose
    }

    /// Index of the segment containing arc length `s` (clamped to the path).
    fn segment_at(&self, s: f64) -> usize {
        let n = self.waypoints.len();
        if n < 2 {
            return 0;
        }
        let i = self.waypoints.partition_point(|w| w.s <= s);
        i.saturating_sub(1).min(n - 2)
    }

    fn interpolate(&self, i: usize, frac: f64) -> (Point2, f64) {
        let w = &self.waypoints;
        if i + 1 >= w.len() {
            let last = w.len() - 1;
            return (w[last].pose.position(), self.theta_unwrapped[last]);
        }
        let p = w[i].pose.position() + (w[i + 1].pose.position() - w[i].pose.position()) * frac;
        let th = self.theta_unwrapped[i]
            + (self.theta_unwrapped[i + 1] - self.theta_unwrapped[i]) * frac;
        (p, th)
    }

    fn curvature_at(&self, i: usize) -> f64 {
        let w = &self.waypoints;
        if w.len() < 2 {
            return 0.0;
        }
        let i = i.min(w.len() - 2);
        (self.theta_unwrapped[i + 1] - self.theta_unwrapped[i]) / (w[i + 1].s - w[i].s)
    }

    /// Pose (with unwrapped heading) at arc length `s`, clamped to the path.
    pub fn pose_at(&self, s: f64) -> Pose {
        let s = s.clamp(0.0, self.total_length());
        let i = self.segment_at(s);
        let w = &self.waypoints;
        let frac = if i + 1 < w.len() {
            ((s - w[i].s) / (w[i + 1].s - w[i].s)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (p, th) = self.interpolate(i, frac);
        Pose::new(p.x, p.y, th)
    }

    fn speed_from(values: &[f64], w: &[Waypoint], i: usize, s: f64) -> f64 {
        if i + 1 >= w.len() {
            return values[w.len() - 1];
        }
        let ds = w[i + 1].s - w[i].s;
        let x = (s - w[i].s).clamp(0.0, ds);
        let (v0, v1) = (values[i], values[i + 1]);
        // Speed squared is linear in s under constant acceleration.
        (v0 * v0 + (v1 * v1 - v0 * v0) * x / ds).max(0.0).sqrt()
    }

    /// Current (possibly truncated) reference speed at arc length `s`.
    pub fn speed_at(&self, s: f64) -> f64 {
        if s >= self.total_length() {
            return 0.0;
        }
        let v: Vec<f64> = self.waypoints.iter().map(|w| w.v_ref).collect();
        Self::speed_from(&v, &self.waypoints, self.segment_at(s.max(0.0)), s.max(0.0))
    }

    /// Untruncated profile speed at arc length `s`.
    pub fn nominal_speed_at(&self, s: f64) -> f64 {
        if s >= self.total_length() {
            return 0.0;
        }
        Self::speed_from(
            &self.nominal_v,
            &self.waypoints,
            self.segment_at(s.max(0.0)),
            s.max(0.0),
        )
    }

    /// Projects `p` onto the polyline. With a hint, only segments in a window
    /// around it are searched. Ties go to the earlier segment.
    pub fn project(&self, p: Point2, hint: Option<usize>) -> Projection {
        let w = &self.waypoints;
        if w.len() == 1 {
            return Projection {
                index: 0,
                fraction: 0.0,
                s: 0.0,
                distance: p.dist(w[0].pose.position()),
            };
        }
        let nseg = w.len() - 1;
        let (lo, hi) = match hint {
            Some(h) => (h.saturating_sub(8), (h + 80).min(nseg)),
            None => (0, nseg),
        };
        let mut best = Projection {
            index: lo,
            fraction: 0.0,
            s: w[lo].s,
            distance: f64::INFINITY,
        };
        for i in lo..hi {
            let seg = Segment {
                a: w[i].pose.position(),
                b: w[i + 1].pose.position(),
            };
            let (t, d) = project_point_to_segment(p, &seg);
            let dist = p.dist(d);
            if dist < best.distance {
                best = Projection {
                    index: i,
                    fraction: t,
                    s: w[i].s + t * (w[i + 1].s - w[i].s),
                    distance: dist,
                };
            }
        }
        best
    }

    /// Distance from `p` to the closest point of the whole polyline.
    pub fn distance_to(&self, p: Point2) -> f64 {
        self.project(p, None).distance
    }

    pub fn needs_replan(&self, p: Point2, threshold: f64) -> bool {
        self.distance_to(p) > threshold
    }

    fn time_at(&self, proj: &Projection) -> f64 {
        let i = proj.index;
        let w = &self.waypoints;
        if i + 1 >= w.len() || self.times[i].is_infinite() {
            return self.times[i.min(w.len() - 1)];
        }
        let ds = w[i + 1].s - w[i].s;
        self.times[i] + time_into_segment(w[i].v_ref, w[i + 1].v_ref, ds, proj.fraction * ds)
    }

    /// Reference states at `t_anchor + k * ts` for `k = 0..=nc`, where the
    /// anchor time is that of the projection of `position`. Beyond the point
    /// where the profile comes to rest the last reachable pose is held at v = 0.
    pub fn sample(
        &self,
        position: Point2,
        hint: Option<usize>,
        nc: usize,
        ts: f64,
    ) -> (Vec<ReferenceSample>, Projection) {
        let proj = self.project(position, hint);
        let t0 = self.time_at(&proj);
        let w = &self.waypoints;
        if t0.is_infinite() {
            // Already at or past the point where the profile rests: hold here.
            let (p, th) = self.interpolate(proj.index, proj.fraction);
            let hold = ReferenceSample {
                x: p.x,
                y: p.y,
                theta: th,
                v: 0.0,
                s: proj.s,
                curvature: self.curvature_at(proj.index.min(w.len() - 1)),
            };
            return (vec![hold; nc + 1], proj);
        }
        let mut out = Vec::with_capacity(nc + 1);
        let mut j = proj.index;
        for k in 0..=nc {
            let t = t0 + k as f64 * ts;
            while j + 1 < w.len() && self.times[j + 1] <= t {
                j += 1;
            }
            let sample = if j + 1 >= w.len() || self.times[j].is_infinite() || !t.is_finite() {
                let idx = j.min(w.len() - 1);
                ReferenceSample {
                    x: w[idx].pose.x,
                    y: w[idx].pose.y,
                    theta: self.theta_unwrapped[idx],
                    v: 0.0,
                    s: w[idx].s,
                    curvature: self.curvature_at(idx),
                }
            } else {
                let ds = w[j + 1].s - w[j].s;
                let (v0, v1) = (w[j].v_ref, w[j + 1].v_ref);
                let a = (v1 * v1 - v0 * v0) / (2.0 * ds);
                let tau = t - self.times[j];
                let (x, v) = if v1 == 0.0 && a != 0.0 && tau >= -v0 / a {
                    (ds, 0.0)
                } else {
                    (
                        (v0 * tau + 0.5 * a * tau * tau).clamp(0.0, ds),
                        (v0 + a * tau).max(0.0),
                    )
                };
                let (p, th) = self.interpolate(j, x / ds);
                ReferenceSample {
                    x: p.x,
                    y: p.y,
                    theta: th,
                    v,
                    s: w[j].s + x,
                    curvature: self.curvature_at(j),
                }
            };
            out.push(sample);
        }
        (out, proj)
    }

    /// Inserts a waypoint at arc length `s` unless one already lies within 1e-6 m.
    fn split_at(&mut self, s: f64) {
        let i = self.segment_at(s);
        let w = &self.waypoints;
        if i + 1 >= w.len() || (s - w[i].s).abs() < 1e-6 || (w[i + 1].s - s).abs() < 1e-6 {
            return;
        }
        let ds = w[i + 1].s - w[i].s;
        let frac = (s - w[i].s) / ds;
        let (p, th) = self.interpolate(i, frac);
        let v = Self::speed_from(&w.iter().map(|w| w.v_ref).collect::<Vec<_>>(), w, i, s);
        let vn = Self::speed_from(&self.nominal_v, w, i, s);
        self.waypoints.insert(
            i + 1,
            Waypoint {
                pose: Pose::new(p.x, p.y, wrap_angle(th)),
                v_ref: v,
                s,
            },
        );
        self.theta_unwrapped.insert(i + 1, th);
        self.nominal_v.insert(i + 1, vn);
    }

    /// Constant-deceleration stop from speed `v0` at `s_now` to rest at
    /// `s_now + s_stop`. Speeds only ever decrease, so an earlier stop point
    /// is never pushed further out by a later call.
    pub fn truncate_for_stop(&self, s_now: f64, s_stop: f64, v0: f64) -> Self {
        let mut r = self.clone();
        let s_end = (s_now + s_stop.max(0.0)).min(r.total_length());
        r.split_at(s_now);
        r.split_at(s_end);
        let decel = if s_stop > 0.0 {
            v0 * v0 / (2.0 * s_stop)
        } else {
            f64::INFINITY
        };
        for w in r.waypoints.iter_mut() {
            let ramp = if w.s < s_now {
                continue;
            } else if w.s >= s_end - 1e-9 {
                0.0
            } else {
                (v0 * v0 - 2.0 * decel * (w.s - s_now)).max(0.0).sqrt()
            };
            w.v_ref = w.v_ref.min(ramp);
        }
        r.truncated_at = Some(r.truncated_at.map_or(s_end, |t| t.min(s_end)));
        r.rebuild_times();
        r
    }

    /// Lifts any truncation and restores the profile from the current speed.
    pub fn reprofile_from(&self, s_now: f64, v_now: f64) -> Self {
        let mut r = self.clone();
        let s_total = r.total_length();
        let last = r.waypoints.len() - 1;
        for (i, w) in r.waypoints.iter_mut().enumerate() {
            w.v_ref = if i == last {
                0.0
            } else if w.s < s_now {
                r.nominal_v[i]
            } else {
                profile_speed(w.s - s_now, s_total - s_now, v_now.max(0.0), &r.limits)
            };
        }
        r.truncated_at = None;
        r.rebuild_times();
        r
    }
}

/// Trapezoidal speed profile over a planned path, starting from rest.
pub fn assign_speed_profile(
    path: &PlannedPath,
    v_desired: f64,
    a_max: f64,
    a_dec_comfort: f64,
) -> ReferenceTrajectory {
    ReferenceTrajectory::from_poses(
        &path.dense_poses,
        ProfileLimits {
            v_desired,
            a_max,
            a_dec: a_dec_comfort,
        },
        0.0,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight(len: f64, limits: ProfileLimits) -> ReferenceTrajectory {
        let n = (len / 0.25).round() as usize;
        let poses: Vec<Pose> = (0..=n)
            .map(|i| Pose::new(i as f64 * 0.25, 0.0, 0.0))
            .collect();
        ReferenceTrajectory::from_poses(&poses, limits, 0.0)
    }

    const LIM: ProfileLimits = ProfileLimits {
        v_desired: 8.33,
        a_max: 2.0,
        a_dec: 2.0,
    };

    #[test]
    fn profile_boundary_and_plateau() {
        let r = straight(40.0, LIM);
        assert_eq!(r.waypoints()[0].v_ref, 0.0);
        assert_eq!(r.waypoints().last().unwrap().v_ref, 0.0);
        let plateau: Vec<f64> = r
            .waypoints()
            .iter()
            .filter(|w| w.v_ref >= 8.33 - 1e-12)
            .map(|w| w.s)
            .collect();
        let (first, last) = (plateau[0], *plateau.last().unwrap());
        // v^2 = 2 a s  =>  s = 8.33^2 / 4 = 17.347
        assert!((17.347..17.347 + 0.25).contains(&first));
        assert!(last <= 40.0 - 17.347 && last > 40.0 - 17.347 - 0.25);
        let long = straight(400.0, LIM);
        assert_eq!(long.speed_at(200.0), 8.33);
    }

    #[test]
    fn sampling_on_plateau_advances_uniformly() {
        let r = straight(400.0, LIM);
        let (samples, _) = r.sample(Point2::new(100.0, 0.0), None, 13, 0.1);
        assert_eq!(samples.len(), 14);
        for (k, smp) in samples.iter().enumerate() {
            assert!((smp.x - (100.0 + k as f64 * 0.833)).abs() < 1e-9);
            assert!((smp.v - 8.33).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_past_end_holds_final_pose() {
        let r = straight(10.0, LIM);
        let (samples, _) = r.sample(Point2::new(15.0, 0.0), None, 5, 0.1);
        for smp in samples {
            assert_eq!((smp.x, smp.y, smp.v), (10.0, 0.0, 0.0));
        }
    }

    #[test]
    fn anchor_tie_goes_to_earlier_waypoint() {
        // A hairpin whose two legs are equidistant from the query point.
        let poses = vec![
            Pose::new(0.0, 1.0, 0.0),
            Pose::new(1.0, 1.0, 0.0),
            Pose::new(1.0, -1.0, 0.0),
            Pose::new(0.0, -1.0, 0.0),
        ];
        let r = ReferenceTrajectory::from_poses(&poses, LIM, 0.0);
        let p = r.project(Point2::new(0.0, 0.0), None);
        assert_eq!(p.index, 0);
    }

    #[test]
    fn truncation_examples() {
        let r = straight(100.0, LIM);
        let t0 = r.truncate_for_stop(50.0, 0.0, 8.33);
        assert_eq!(t0.speed_at(50.0), 0.0);
        assert_eq!(t0.speed_at(70.0), 0.0);

        let lim = ProfileLimits {
            v_desired: 10.0,
            ..LIM
        };
        let r = straight(200.0, lim);
        let t = r.truncate_for_stop(100.0, 10.0, 10.0);
        // constant deceleration v0^2 / (2 s_stop) = 5 m/s^2
        for s in [100.0, 102.5, 105.0, 107.5] {
            let want = (100.0f64 - 10.0 * (s - 100.0)).sqrt();
            assert!((t.speed_at(s) - want).abs() < 1e-9, "s={s}");
        }
        assert_eq!(t.speed_at(110.0), 0.0);
        assert_eq!(t.truncated_at(), Some(110.0));
        let again = t.truncate_for_stop(100.0, 30.0, 10.0);
        assert_eq!(again.truncated_at(), Some(110.0));
        assert_eq!(again.speed_at(115.0), 0.0);
    }

    #[test]
    fn truncated_reference_stops_at_the_stop_point() {
        let lim = ProfileLimits {
            v_desired: 10.0,
            ..LIM
        };
        let r = straight(200.0, lim).truncate_for_stop(100.0, 10.1, 10.0);
        let (samples, _) = r.sample(Point2::new(100.0, 0.0), None, 40, 0.1);
        let last = samples.last().unwrap();
        assert!((last.x - 110.1).abs() < 1e-9 && last.v == 0.0);
        // 2.02 s to stop at 10^2 / (2 * 10.1) m/s^2 from 10 m/s
        assert!(samples[21].v == 0.0 && samples[20].v > 0.0);
    }

    #[test]
    fn reprofile_lifts_truncation() {
        let lim = ProfileLimits {
            v_desired: 10.0,
            ..LIM
        };
        let r = straight(200.0, lim).truncate_for_stop(100.0, 10.0, 10.0);
        let back = r.reprofile_from(105.0, 7.0);
        assert_eq!(back.truncated_at(), None);
        assert!((back.speed_at(105.0) - 7.0).abs() < 1e-9);
        assert!((back.speed_at(150.0) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn replan_threshold_is_strict() {
        let r = straight(20.0, LIM);
        assert!(!r.needs_replan(Point2::new(5.0, 0.0), 1.0));
        assert!(r.needs_replan(Point2::new(5.0, 2.0), 1.0));
        assert!(!r.needs_replan(Point2::new(5.0, 1.0), 1.0));
    }

    #[test]
    fn headings_are_unwrapped() {
        let poses: Vec<Pose> = (0..40)
            .map(|i| {
                let a = i as f64 * 0.1 + 2.0;
                Pose::new(
                    5.0 * a.cos(),
                    5.0 * a.sin(),
                    wrap_angle(a + std::f64::consts::FRAC_PI_2),
                )
            })
            .collect();
        let r = ReferenceTrajectory::from_poses(&poses, LIM, 0.0);
        let (samples, _) = r.sample(poses[0].position(), None, 30, 0.1);
        for w in samples.windows(2) {
            assert!((w[1].theta - w[0].theta).abs() < 0.5);
        }
    }
}
