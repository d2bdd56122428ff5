//! Receding-horizon tracking controller over the discretized linear bicycle
//! model. Position error is weighted separately across and along the path.
//!
//! Decision vector layout for horizon `N`:
//! `[x_1 .. x_N (4 each), u_0 .. u_{N-1} (a, delta), ddelta_0 .. ddelta_{N-1}]`.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qp::{solve, QpError, QpSettings, QpStatus, QuadraticProgram};
use crate::reference::{Projection, ReferenceSample, ReferenceTrajectory};
use crate::vehicle::{
    discretize, linearize_at, ControlInput, DiscreteModel, VehicleParams, VehicleState,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MpcError {
    #[error("reference window has {got} samples, expected {expected}")]
    WindowLength { got: usize, expected: usize },
    #[error("expected {expected} stage models, got {got}")]
    ModelCount { got: usize, expected: usize },
    #[error(transparent)]
    Qp(#[from] QpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcWeights {
    pub w_perp: f64,
    pub w_par: f64,
    /// Heading and speed stage weights.
    pub q_theta_v: [f64; 2],
    /// Acceleration and steering magnitude weights.
    pub r: [f64; 2],
    /// Acceleration and steering change weights.
    pub r_d: [f64; 2],
    /// Terminal weights over (x, y, v, theta).
    pub q_f: [f64; 4],
}

impl Default for MpcWeights {
    fn default() -> Self {
        Self {
            w_perp: 20.0,
            w_par: 1.0,
            q_theta_v: [0.5, 0.0],
            r: [0.1, 0.01],
            r_d: [10.0, 1.0],
            q_f: [1.0, 1.0, 0.0, 0.5],
        }
    }
}

impl MpcWeights {
    pub fn validate(&self) -> Result<(), &'static str> {
        if !(self.w_par > 0.0 && self.w_perp >= self.w_par) {
            return Err("w_perp >= w_par > 0");
        }
        let rest = self
            .q_theta_v
            .iter()
            .chain(&self.r)
            .chain(&self.r_d)
            .chain(&self.q_f);
        if rest.clone().any(|w| !w.is_finite() || *w < 0.0) || !self.w_perp.is_finite() {
            return Err("MPC weights must be finite and nonnegative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcConfig {
    pub horizon: usize,
    pub ts: f64,
    /// Diagonal added to the Hessian so the reduced problem is strictly convex.
    pub regularization: f64,
    pub qp: QpSettings,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 13,
            ts: 0.1,
            regularization: 1e-8,
            qp: QpSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    pub u0: ControlInput,
    pub u_seq: Vec<ControlInput>,
    pub x_pred: Vec<VehicleState>,
    pub cost: f64,
    pub qp_status: QpStatus,
    pub qp_iterations: usize,
    /// Set when the QP failed and the braking fallback was applied.
    pub degraded: bool,
    pub projection: Projection,
}

/// `w_perp * n_perp n_perp' + w_par * n_par n_par'` for a path heading.
pub fn tracking_error_weight(theta_ref: f64, w_perp: f64, w_par: f64) -> Matrix2<f64> {
    let (s, c) = theta_ref.sin_cos();
    let n_par = Vector2::new(c, s);
    let n_perp = Vector2::new(-s, c);
    n_perp * n_perp.transpose() * w_perp + n_par * n_par.transpose() * w_par
}

struct Layout {
    n: usize,
}

impl Layout {
    fn x(&self, k: usize, i: usize) -> usize {
        4 * (k - 1) + i
    }
    fn a(&self, k: usize) -> usize {
        4 * self.n + 2 * k
    }
    fn delta(&self, k: usize) -> usize {
        4 * self.n + 2 * k + 1
    }
    fn ddelta(&self, k: usize) -> usize {
        6 * self.n + k
    }
    fn dim(&self) -> usize {
        7 * self.n
    }
}

/// Accumulates `w * (z_i - target)^2`-style terms into `0.5 z'Hz + g'z + c`.
struct CostBuilder {
    h: DMatrix<f64>,
    g: DVector<f64>,
    c: f64,
}

impl CostBuilder {
    fn square(&mut self, i: usize, w: f64, target: f64) {
        self.h[(i, i)] += 2.0 * w;
        self.g[i] -= 2.0 * w * target;
        self.c += w * target * target;
    }

    /// `w * (z_i - z_j)^2`
    fn difference(&mut self, i: usize, j: usize, w: f64) {
        self.h[(i, i)] += 2.0 * w;
        self.h[(j, j)] += 2.0 * w;
        self.h[(i, j)] -= 2.0 * w;
        self.h[(j, i)] -= 2.0 * w;
    }

    /// `e' Q e` with `e = (z_i, z_j) - target`.
    fn quadratic2(&mut self, i: usize, j: usize, q: &Matrix2<f64>, target: Vector2<f64>) {
        let idx = [i, j];
        for r in 0..2 {
            for c in 0..2 {
                self.h[(idx[r], idx[c])] += 2.0 * q[(r, c)];
            }
        }
        let qt = q * target;
        self.g[i] -= 2.0 * qt[0];
        self.g[j] -= 2.0 * qt[1];
        self.c += target.dot(&qt);
    }
}

/// Builds the tracking QP. `window` holds `N + 1` reference states (index 0
/// corresponds to the current state) and `models` the `N` stage models.
pub fn assemble(
    state: &VehicleState,
    previous_input: &ControlInput,
    window: &[ReferenceSample],
    models: &[DiscreteModel],
    weights: &MpcWeights,
    params: &VehicleParams,
    config: &MpcConfig,
) -> Result<QuadraticProgram, MpcError> {
    let n = config.horizon;
    if window.len() != n + 1 {
        return Err(MpcError::WindowLength {
            got: window.len(),
            expected: n + 1,
        });
    }
    if models.len() != n {
        return Err(MpcError::ModelCount {
            got: models.len(),
            expected: n,
        });
    }
    let lay = Layout { n };
    let dim = lay.dim();
    let mut cost = CostBuilder {
        h: DMatrix::zeros(dim, dim),
        g: DVector::zeros(dim),
        c: 0.0,
    };

    for (k, r) in window.iter().enumerate().take(n).skip(1) {
        let q = tracking_error_weight(r.theta, weights.w_perp, weights.w_par);
        cost.quadratic2(lay.x(k, 0), lay.x(k, 1), &q, Vector2::new(r.x, r.y));
        cost.square(lay.x(k, 3), weights.q_theta_v[0], r.theta);
        cost.square(lay.x(k, 2), weights.q_theta_v[1], r.v);
    }
    let rf = &window[n];
    let terminal = [rf.x, rf.y, rf.v, rf.theta];
    for (i, (&w, &t)) in weights.q_f.iter().zip(&terminal).enumerate() {
        cost.square(lay.x(n, i), w, t);
    }
    for k in 0..n {
        cost.square(lay.a(k), weights.r[0], 0.0);
        cost.square(lay.delta(k), weights.r[1], 0.0);
        cost.square(lay.ddelta(k), weights.r_d[1], 0.0);
        if k == 0 {
            cost.square(lay.a(0), weights.r_d[0], previous_input.a);
        } else {
            cost.difference(lay.a(k), lay.a(k - 1), weights.r_d[0]);
        }
    }
    // Diagonal regularization, centered on the reference states and zero inputs.
    let half_reg = 0.5 * config.regularization;
    for (k, r) in window.iter().enumerate().take(n + 1).skip(1) {
        for (i, t) in [r.x, r.y, r.v, r.theta].into_iter().enumerate() {
            cost.square(lay.x(k, i), half_reg, t);
        }
    }
    for i in 4 * n..dim {
        cost.square(i, half_reg, 0.0);
    }

    let rows = 5 * n;
    let mut e = DMatrix::zeros(rows, dim);
    let mut rhs = DVector::zeros(rows);
    let x0 = state.to_vector();
    for k in 0..n {
        let m = &models[k];
        for i in 0..4 {
            let row = 4 * k + i;
            e[(row, lay.x(k + 1, i))] = 1.0;
            if k > 0 {
                for j in 0..4 {
                    e[(row, lay.x(k, j))] -= m.a[(i, j)];
                }
            }
            e[(row, lay.a(k))] -= m.b[(i, 0)];
            e[(row, lay.delta(k))] -= m.b[(i, 1)];
            rhs[row] = m.d[i] + if k == 0 { (m.a.row(i) * x0)[0] } else { 0.0 };
        }
        let row = 4 * n + k;
        e[(row, lay.ddelta(k))] = 1.0;
        e[(row, lay.delta(k))] = -1.0;
        if k == 0 {
            rhs[row] = -previous_input.delta;
        } else {
            e[(row, lay.delta(k - 1))] = 1.0;
        }
    }

    let mut lo = DVector::from_element(dim, f64::NEG_INFINITY);
    let mut hi = DVector::from_element(dim, f64::INFINITY);
    let rate = params.delta_rate_max * config.ts;
    for k in 0..n {
        lo[lay.a(k)] = params.a_min;
        hi[lay.a(k)] = params.a_max;
        lo[lay.delta(k)] = -params.delta_max;
        hi[lay.delta(k)] = params.delta_max;
        lo[lay.ddelta(k)] = -rate;
        hi[lay.ddelta(k)] = rate;
        lo[lay.x(k + 1, 2)] = params.v_min;
        hi[lay.x(k + 1, 2)] = params.v_max;
    }

    Ok(QuadraticProgram {
        h: cost.h,
        g: cost.g,
        e,
        e_rhs: rhs,
        lo,
        hi,
        constant: cost.c,
    })
}

/// Stage models: the first about the measured state and previous steering,
/// later ones about the reference speed, heading and path curvature.
pub fn stage_models(
    state: &VehicleState,
    previous_input: &ControlInput,
    window: &[ReferenceSample],
    params: &VehicleParams,
    ts: f64,
) -> Vec<DiscreteModel> {
    let n = window.len() - 1;
    (0..n)
        .map(|k| {
            let m = if k == 0 {
                linearize_at(state.v, state.theta, previous_input.delta, params.wheelbase)
            } else {
                let r = &window[k];
                let delta = (params.wheelbase * r.curvature)
                    .atan()
                    .clamp(-params.delta_max, params.delta_max);
                linearize_at(r.v, r.theta, delta, params.wheelbase)
            };
            discretize(&m, ts)
        })
        .collect()
}

/// Shifts unwrapped reference headings by a multiple of 2 pi so the first one
/// lies within pi of the measured heading.
fn align_headings(window: &mut [ReferenceSample], theta: f64) {
    let shift = ((window[0].theta - theta) / std::f64::consts::TAU).round() * std::f64::consts::TAU;
    for r in window.iter_mut() {
        r.theta -= shift;
    }
}

/// One controller step: sample the reference, linearize, assemble, solve.
pub fn step(
    state: &VehicleState,
    previous_input: &ControlInput,
    reference: &ReferenceTrajectory,
    hint: Option<usize>,
    params: &VehicleParams,
    weights: &MpcWeights,
    config: &MpcConfig,
) -> Result<MpcSolution, MpcError> {
    let (mut window, projection) =
        reference.sample(state.position(), hint, config.horizon, config.ts);
    align_headings(&mut window, state.theta);
    solve_window(
        state,
        previous_input,
        &window,
        projection,
        params,
        weights,
        config,
    )
}

pub fn solve_window(
    state: &VehicleState,
    previous_input: &ControlInput,
    window: &[ReferenceSample],
    projection: Projection,
    params: &VehicleParams,
    weights: &MpcWeights,
    config: &MpcConfig,
) -> Result<MpcSolution, MpcError> {
    let n = config.horizon;
    let models = stage_models(state, previous_input, window, params, config.ts);
    let qp = assemble(
        state,
        previous_input,
        window,
        &models,
        weights,
        params,
        config,
    )?;
    let sol = solve(&qp, &config.qp)?;
    let lay = Layout { n };
    if sol.status != QpStatus::Optimal {
        let u = params.clamp_input(ControlInput::new(0.5 * params.a_min, previous_input.delta));
        return Ok(MpcSolution {
            u0: u,
            u_seq: vec![u; n],
            x_pred: vec![*state; n + 1],
            cost: f64::NAN,
            qp_status: sol.status,
            qp_iterations: sol.iterations,
            degraded: true,
            projection,
        });
    }
    let z = &sol.z;
    let u_seq: Vec<ControlInput> = (0..n)
        .map(|k| params.clamp_input(ControlInput::new(z[lay.a(k)], z[lay.delta(k)])))
        .collect();
    let mut x_pred = vec![*state];
    x_pred.extend((1..=n).map(|k| {
        VehicleState::new(
            z[lay.x(k, 0)],
            z[lay.x(k, 1)],
            z[lay.x(k, 2)],
            z[lay.x(k, 3)],
        )
    }));
    Ok(MpcSolution {
        u0: u_seq[0],
        u_seq,
        x_pred,
        cost: sol.objective,
        qp_status: sol.status,
        qp_iterations: sol.iterations,
        degraded: false,
        projection,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose;
    use crate::reference::ProfileLimits;
    use nalgebra::SymmetricEigen;

    fn window_const(n: usize, f: impl Fn(usize) -> ReferenceSample) -> Vec<ReferenceSample> {
        (0..=n).map(f).collect()
    }

    fn dummy_projection() -> Projection {
        Projection {
            index: 0,
            fraction: 0.0,
            s: 0.0,
            distance: 0.0,
        }
    }

    #[test]
    fn weight_examples() {
        let q = tracking_error_weight(0.0, 20.0, 1.0);
        assert!((q - Matrix2::new(1.0, 0.0, 0.0, 20.0)).amax() < 1e-15);
        let q = tracking_error_weight(0.83, 3.0, 3.0);
        assert!((q - Matrix2::identity() * 3.0).amax() < 1e-14);
        let e = SymmetricEigen::new(tracking_error_weight(2.1, 20.0, 1.0)).eigenvalues;
        let mut ev = [e[0], e[1]];
        ev.sort_by(f64::total_cmp);
        assert!((ev[0] - 1.0).abs() < 1e-12 && (ev[1] - 20.0).abs() < 1e-12);
    }

    #[test]
    fn stationary_reference_costs_nothing() {
        let cfg = MpcConfig::default();
        let p = VehicleParams::default();
        let state = VehicleState::new(3.0, 4.0, 0.0, 0.5);
        let w = window_const(cfg.horizon, |_| ReferenceSample {
            x: 3.0,
            y: 4.0,
            theta: 0.5,
            v: 0.0,
            s: 0.0,
            curvature: 0.0,
        });
        let sol = solve_window(
            &state,
            &ControlInput::default(),
            &w,
            dummy_projection(),
            &p,
            &MpcWeights::default(),
            &cfg,
        )
        .unwrap();
        assert_eq!(sol.qp_status, QpStatus::Optimal);
        assert!(sol.cost.abs() < 1e-9);
        assert!(sol
            .u_seq
            .iter()
            .all(|u| u.a.abs() < 1e-6 && u.delta.abs() < 1e-6));
    }

    #[test]
    fn hessian_is_psd_before_regularization() {
        let cfg = MpcConfig {
            regularization: 0.0,
            ..MpcConfig::default()
        };
        let p = VehicleParams::default();
        let state = VehicleState::new(0.0, 0.0, 5.0, 0.2);
        let w = window_const(cfg.horizon, |k| ReferenceSample {
            x: k as f64 * 0.5,
            y: 0.1 * k as f64,
            theta: 0.2 + 0.05 * k as f64,
            v: 5.0,
            s: 0.0,
            curvature: 0.1,
        });
        let models = stage_models(&state, &ControlInput::default(), &w, &p, cfg.ts);
        let qp = assemble(
            &state,
            &ControlInput::default(),
            &w,
            &models,
            &MpcWeights::default(),
            &p,
            &cfg,
        )
        .unwrap();
        let ev = SymmetricEigen::new(qp.h.clone()).eigenvalues;
        assert!(ev.min() >= -1e-9);
    }

    #[test]
    fn straight_equilibrium() {
        let cfg = MpcConfig::default();
        let p = VehicleParams::default();
        let v = 6.0;
        let state = VehicleState::new(0.0, 0.0, v, 0.0);
        let w = window_const(cfg.horizon, |k| ReferenceSample {
            x: k as f64 * v * cfg.ts,
            y: 0.0,
            theta: 0.0,
            v,
            s: k as f64 * v * cfg.ts,
            curvature: 0.0,
        });
        let sol = solve_window(
            &state,
            &ControlInput::default(),
            &w,
            dummy_projection(),
            &p,
            &MpcWeights::default(),
            &cfg,
        )
        .unwrap();
        assert!(sol
            .u_seq
            .iter()
            .all(|u| u.delta.abs() <= 1e-6 && u.a.abs() <= 1e-6));
        let models = stage_models(&state, &ControlInput::default(), &w, &p, cfg.ts);
        let next = models[0].propagate(&state.to_vector(), &sol.u0);
        assert!((next - sol.x_pred[1].to_vector()).amax() <= 1e-9);
    }

    #[test]
    fn accelerates_from_standstill() {
        let cfg = MpcConfig::default();
        let p = VehicleParams::default();
        let poses: Vec<Pose> = (0..=400)
            .map(|i| Pose::new(i as f64 * 0.25, 0.0, 0.0))
            .collect();
        let lim = ProfileLimits {
            v_desired: 8.33,
            a_max: 2.0,
            a_dec: 2.0,
        };
        let r = ReferenceTrajectory::from_poses(&poses, lim, 0.0);
        let sol = step(
            &VehicleState::default(),
            &ControlInput::default(),
            &r,
            None,
            &p,
            &MpcWeights::default(),
            &cfg,
        )
        .unwrap();
        assert!(sol.u0.a > 0.0 && sol.u0.a <= 2.0);
    }

    #[test]
    fn steering_rises_toward_limit_when_heading_is_off() {
        let cfg = MpcConfig::default();
        let p = VehicleParams::default();
        // Reference runs along +y while the vehicle faces +x.
        let poses: Vec<Pose> = (0..=400)
            .map(|i| Pose::new(0.0, i as f64 * 0.25, std::f64::consts::FRAC_PI_2))
            .collect();
        let lim = ProfileLimits {
            v_desired: 8.33,
            a_max: 2.0,
            a_dec: 2.0,
        };
        let r = ReferenceTrajectory::from_poses(&poses, lim, 0.0);
        let sol = step(
            &VehicleState::default(),
            &ControlInput::default(),
            &r,
            None,
            &p,
            &MpcWeights::default(),
            &cfg,
        )
        .unwrap();
        assert_eq!(sol.qp_status, QpStatus::Optimal);
        let deltas: Vec<f64> = sol.u_seq.iter().map(|u| u.delta).collect();
        assert!(deltas.iter().all(|d| d.abs() <= p.delta_max + 1e-9));
        assert!(deltas[cfg.horizon - 1] > deltas[0] + 0.1);
        let rate = p.delta_rate_max * cfg.ts;
        assert!(deltas
            .windows(2)
            .all(|w| (w[1] - w[0]).abs() <= rate + 1e-9));
    }
}
