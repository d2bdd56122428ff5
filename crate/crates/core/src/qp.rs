//! Dense convex QP solver for problems of the form
//!
//! ```text
//! minimize   0.5 z'Hz + g'z + c
//! subject to E z = e,  lo <= z <= hi
//! ```
//!
//! Equalities are eliminated by a nullspace parameterization `z = z_p + N y`.
//! The reduced problem is solved with the Goldfarb-Idnani dual active-set
//! method, which keeps the objective non-decreasing from the unconstrained
//! minimum until primal feasibility is reached.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("Hessian is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("lower bound exceeds upper bound at index {0}")]
    BoundsCrossed(usize),
    #[error("objective is not strictly convex on the equality nullspace")]
    NotConvex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub e: DMatrix<f64>,
    pub e_rhs: DVector<f64>,
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
    /// Constant objective offset; does not affect the minimizer.
    pub constant: f64,
}

impl QuadraticProgram {
    /// Problem with no equalities and no bounds.
    pub fn unconstrained(h: DMatrix<f64>, g: DVector<f64>) -> Self {
        let n = g.len();
        Self {
            h,
            g,
            e: DMatrix::zeros(0, n),
            e_rhs: DVector::zeros(0),
            lo: DVector::from_element(n, f64::NEG_INFINITY),
            hi: DVector::from_element(n, f64::INFINITY),
            constant: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.g.dot(z) + self.constant
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.g.len();
        if self.h.nrows() != n || self.h.ncols() != n {
            return Err(QpError::DimensionMismatch(format!(
                "H is {}x{}, expected {n}x{n}",
                self.h.nrows(),
                self.h.ncols()
            )));
        }
        if self.e.ncols() != n || self.e.nrows() != self.e_rhs.len() {
            return Err(QpError::DimensionMismatch(format!(
                "E is {}x{} with {} right-hand sides, expected {n} columns",
                self.e.nrows(),
                self.e.ncols(),
                self.e_rhs.len()
            )));
        }
        if self.lo.len() != n || self.hi.len() != n {
            return Err(QpError::DimensionMismatch(
                "bound vectors must have length n".into(),
            ));
        }
        if self.h.iter().any(|x| !x.is_finite()) {
            return Err(QpError::NonFinite("H"));
        }
        if self.g.iter().any(|x| !x.is_finite()) || !self.constant.is_finite() {
            return Err(QpError::NonFinite("g"));
        }
        if self
            .e
            .iter()
            .chain(self.e_rhs.iter())
            .any(|x| !x.is_finite())
        {
            return Err(QpError::NonFinite("E"));
        }
        if self.lo.iter().chain(self.hi.iter()).any(|x| x.is_nan()) {
            return Err(QpError::NonFinite("bounds"));
        }
        let asym = (&self.h - self.h.transpose()).amax();
        if asym > 1e-9 * (1.0 + self.h.amax()) {
            return Err(QpError::NotSymmetric(asym));
        }
        if let Some(i) = (0..n).find(|&i| self.lo[i] > self.hi[i]) {
            return Err(QpError::BoundsCrossed(i));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub status: QpStatus,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub objective: f64,
    /// Objective value after each active-set change.
    pub objective_history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 4000,
        }
    }
}

/// Residuals of the first-order optimality conditions, recomputed from `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    pub equality: f64,
    pub bounds: f64,
    pub stationarity: f64,
    pub dual_sign: f64,
    pub complementarity: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.equality
            .max(self.bounds)
            .max(self.stationarity)
            .max(self.dual_sign)
            .max(self.complementarity)
    }
}

/// Independent optimality check. Bounds within `active_tol` of `z` are treated
/// as active; equality multipliers are fitted by least squares over the free
/// coordinates, and bound multipliers are read off the remaining gradient.
/// Stationarity and sign residuals are scaled by `1 + max(|Hz|, |g|)`.
pub fn kkt_check(qp: &QuadraticProgram, z: &DVector<f64>, active_tol: f64) -> KktReport {
    let n = qp.dim();
    let eq = if qp.e.nrows() > 0 {
        (&qp.e * z - &qp.e_rhs).amax()
    } else {
        0.0
    };
    let mut bnd = 0.0f64;
    for i in 0..n {
        bnd = bnd.max(qp.lo[i] - z[i]).max(z[i] - qp.hi[i]);
    }
    let hz = &qp.h * z;
    let grad = &hz + &qp.g;
    let scale = 1.0 + hz.amax().max(qp.g.amax());

    let at_lo: Vec<bool> = (0..n)
        .map(|i| (z[i] - qp.lo[i]).abs() <= active_tol)
        .collect();
    let at_hi: Vec<bool> = (0..n)
        .map(|i| (z[i] - qp.hi[i]).abs() <= active_tol)
        .collect();
    let free: Vec<usize> = (0..n).filter(|&i| !at_lo[i] && !at_hi[i]).collect();

    let m = qp.e.nrows();
    let mut lambda = DVector::zeros(m);
    if m > 0 {
        let ef_t = DMatrix::from_fn(free.len(), m, |r, c| qp.e[(c, free[r])]);
        let determined = !free.is_empty()
            && ef_t
                .clone()
                .svd(false, false)
                .rank(1e-10 * (1.0 + ef_t.amax()))
                == m;
        if determined {
            let rhs = DVector::from_fn(free.len(), |r, _| -grad[free[r]]);
            lambda = ef_t
                .svd(true, true)
                .solve(&rhs, 1e-12)
                .unwrap_or_else(|_| DVector::zeros(m));
        } else {
            // Underdetermined: pick multipliers that respect the bound signs.
            // Columns: [E', -E', -e_i (at lower), +e_i (at upper)], all >= 0.
            let act_lo: Vec<usize> = (0..n).filter(|&i| at_lo[i] && !at_hi[i]).collect();
            let act_hi: Vec<usize> = (0..n).filter(|&i| at_hi[i] && !at_lo[i]).collect();
            let both: Vec<usize> = (0..n).filter(|&i| at_lo[i] && at_hi[i]).collect();
            let p = 2 * m + act_lo.len() + act_hi.len() + 2 * both.len();
            let mut mat = DMatrix::zeros(n, p);
            for j in 0..m {
                for i in 0..n {
                    mat[(i, j)] = qp.e[(j, i)];
                    mat[(i, m + j)] = -qp.e[(j, i)];
                }
            }
            let mut c = 2 * m;
            for &i in &act_lo {
                mat[(i, c)] = -1.0;
                c += 1;
            }
            for &i in &act_hi {
                mat[(i, c)] = 1.0;
                c += 1;
            }
            for &i in &both {
                mat[(i, c)] = -1.0;
                mat[(i, c + 1)] = 1.0;
                c += 2;
            }
            let x = nnls(&mat, &(-&grad));
            for j in 0..m {
                lambda[j] = x[j] - x[m + j];
            }
        }
    }
    let full = if m > 0 {
        &grad + qp.e.transpose() * &lambda
    } else {
        grad
    };

    let mut stat = 0.0f64;
    let mut sign = 0.0f64;
    let mut comp = 0.0f64;
    for i in 0..n {
        let r = full[i];
        match (at_lo[i], at_hi[i]) {
            (false, false) => stat = stat.max(r.abs()),
            (true, true) => {}
            (true, false) => {
                sign = sign.max(-r);
                comp = comp.max((r * (z[i] - qp.lo[i])).abs());
            }
            (false, true) => {
                sign = sign.max(r);
                comp = comp.max((r * (qp.hi[i] - z[i])).abs());
            }
        }
    }
    KktReport {
        equality: eq,
        bounds: bnd,
        stationarity: stat / scale,
        dual_sign: sign / scale,
        complementarity: comp / scale,
    }
}

/// Lawson-Hanson non-negative least squares: `min |Ax - b|` with `x >= 0`.
fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let p = a.ncols();
    let mut x = DVector::zeros(p);
    let mut passive = vec![false; p];
    let tol = 1e-12 * (1.0 + a.amax() * b.amax());
    for _ in 0..3 * p + 10 {
        let w = a.transpose() * (b - a * &x);
        let next = (0..p)
            .filter(|&j| !passive[j])
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        match next {
            Some(j) if w[j] > tol => passive[j] = true,
            _ => break,
        }
        loop {
            let cols: Vec<usize> = (0..p).filter(|&j| passive[j]).collect();
            let sub = DMatrix::from_fn(a.nrows(), cols.len(), |r, c| a[(r, cols[c])]);
            let zs = sub
                .svd(true, true)
                .solve(b, 1e-14)
                .unwrap_or_else(|_| DVector::zeros(cols.len()));
            if zs.iter().all(|&v| v > 0.0) {
                x.fill(0.0);
                for (k, &j) in cols.iter().enumerate() {
                    x[j] = zs[k];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (k, &j) in cols.iter().enumerate() {
                if zs[k] <= 0.0 {
                    alpha = alpha.min(x[j] / (x[j] - zs[k]));
                }
            }
            for (k, &j) in cols.iter().enumerate() {
                x[j] += alpha * (zs[k] - x[j]);
                if x[j] <= 1e-15 {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
        }
    }
    x
}

/// Indices of a maximal linearly independent subset of the rows of `e`
/// (modified Gram-Schmidt).
fn independent_rows(e: &DMatrix<f64>) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut keep = Vec::new();
    for r in 0..e.nrows() {
        let mut v: DVector<f64> = e.row(r).transpose();
        let norm0 = v.norm();
        if norm0 == 0.0 {
            continue;
        }
        for b in &basis {
            let p = b.dot(&v);
            v.axpy(-p, b, 1.0);
        }
        let nv = v.norm();
        if nv > 1e-10 * norm0 {
            basis.push(v / nv);
            keep.push(r);
        }
    }
    keep
}

struct Reduced {
    z_p: DVector<f64>,
    n: DMatrix<f64>,
}

/// Particular solution and orthonormal nullspace basis of the equality rows.
fn eliminate_equalities(e: &DMatrix<f64>, rhs: &DVector<f64>) -> Reduced {
    let nv = e.ncols();
    let rows = independent_rows(e);
    let m = rows.len();
    if m == 0 {
        return Reduced {
            z_p: DVector::zeros(nv),
            n: DMatrix::identity(nv, nv),
        };
    }
    // Square padding makes the QR factor a full orthogonal matrix.
    let mut padded = DMatrix::zeros(nv, nv);
    for (c, &r) in rows.iter().enumerate() {
        padded.set_column(c, &e.row(r).transpose());
    }
    let qr = padded.qr();
    let q = qr.q();
    let r = qr.r();
    let r1 = r.view((0, 0), (m, m)).into_owned();
    let b = DVector::from_fn(m, |i, _| rhs[rows[i]]);
    // E' = R1' Q1'  =>  z_p = Q1 R1^{-T} b
    let w = r1
        .transpose()
        .solve_lower_triangular(&b)
        .unwrap_or_else(|| DVector::zeros(m));
    let z_p = q.columns(0, m) * w;
    let n = q.columns(m, nv - m).into_owned();
    Reduced { z_p, n }
}

struct ActiveSetResult {
    y: DVector<f64>,
    feasible: bool,
    converged: bool,
    iterations: usize,
    history: Vec<f64>,
}

/// Goldfarb-Idnani dual active set for `min 0.5 y'Gy + a'y  s.t.  C'y >= b`
/// where the columns of `c` are constraint normals. `chol` factors `G`.
fn dual_active_set(
    chol: &Cholesky<f64, Dyn>,
    a: &DVector<f64>,
    c: &DMatrix<f64>,
    b: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> ActiveSetResult {
    let ny = a.len();
    let l = chol.l();
    let l_inv = l
        .clone()
        .solve_lower_triangular(&DMatrix::identity(ny, ny))
        .expect("Cholesky factor is nonsingular");
    let mut y = -chol.solve(a);
    let g_mat = &l * l.transpose();
    let obj = |y: &DVector<f64>| 0.5 * y.dot(&(&g_mat * y)) + a.dot(y);
    let mut history = vec![obj(&y)];
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut iterations = 0usize;
    let ncons = c.ncols();
    let col_norm: Vec<f64> = (0..ncons).map(|j| c.column(j).norm().max(1e-300)).collect();
    let mut is_active = vec![false; ncons];

    loop {
        // Most violated constraint, normalized by its row norm.
        let mut p = None;
        let mut worst = -tol;
        for j in 0..ncons {
            if is_active[j] {
                continue;
            }
            let s = (c.column(j).dot(&y) - b[j]) / col_norm[j];
            if s < worst {
                worst = s;
                p = Some(j);
            }
        }
        let Some(p) = p else {
            return ActiveSetResult {
                y,
                feasible: true,
                converged: true,
                iterations,
                history,
            };
        };
        let np = c.column(p).into_owned();
        let mut u_p = 0.0;
        loop {
            iterations += 1;
            if iterations > max_iter {
                return ActiveSetResult {
                    y,
                    feasible: false,
                    converged: false,
                    iterations,
                    history,
                };
            }
            let q = active.len();
            // J = L^{-T} Q where L^{-1} N_A = Q [R; 0].
            let (z, r) = if q == 0 {
                let t = &l_inv * &np;
                (l_inv.transpose() * t, DVector::zeros(0))
            } else {
                let mut na = DMatrix::zeros(ny, ny.max(q));
                for (k, &j) in active.iter().enumerate() {
                    na.set_column(k, &c.column(j));
                }
                let m = &l_inv * na;
                let qr = m.qr();
                let qm = qr.q();
                let rm = qr.r();
                let j = l_inv.transpose() * &qm;
                let d = j.transpose() * &np;
                let z = if q < ny {
                    j.columns(q, ny - q) * d.rows(q, ny - q)
                } else {
                    DVector::zeros(ny)
                };
                let r1 = rm.view((0, 0), (q, q)).into_owned();
                let r = r1
                    .solve_upper_triangular(&d.rows(0, q).into_owned())
                    .unwrap_or_else(|| DVector::zeros(q));
                (z, r)
            };

            let mut t1 = f64::INFINITY;
            let mut drop_k = None;
            for k in 0..q {
                if r[k] > 0.0 {
                    let t = u[k] / r[k];
                    if t < t1 {
                        t1 = t;
                        drop_k = Some(k);
                    }
                }
            }
            let zn = z.dot(&np);
            let scale_z = z.norm() * np.norm();
            let t2 = if zn > 1e-12 * scale_z.max(1e-300) && z.norm() > 1e-14 {
                -(np.dot(&y) - b[p]) / zn
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if t.is_infinite() {
                return ActiveSetResult {
                    y,
                    feasible: false,
                    converged: true,
                    iterations,
                    history,
                };
            }
            if t2.is_finite() {
                y += &z * t;
            }
            for k in 0..q {
                u[k] -= t * r[k];
            }
            u_p += t;
            history.push(obj(&y));
            if t2 <= t1 {
                active.push(p);
                u.push(u_p);
                is_active[p] = true;
                break;
            }
            let k = drop_k.expect("partial step has a blocking multiplier");
            is_active[active[k]] = false;
            active.remove(k);
            u.remove(k);
        }
    }
}

pub fn solve(qp: &QuadraticProgram, settings: &QpSettings) -> Result<QpSolution, QpError> {
    qp.validate()?;
    let n = qp.dim();
    let tol = settings.tol;

    // Fixed variables become equality rows.
    let fixed: Vec<usize> = (0..n)
        .filter(|&i| qp.lo[i].is_finite() && qp.lo[i] == qp.hi[i])
        .collect();
    let m0 = qp.e.nrows();
    let mut e = DMatrix::zeros(m0 + fixed.len(), n);
    let mut e_rhs = DVector::zeros(m0 + fixed.len());
    e.rows_mut(0, m0).copy_from(&qp.e);
    e_rhs.rows_mut(0, m0).copy_from(&qp.e_rhs);
    for (k, &i) in fixed.iter().enumerate() {
        e[(m0 + k, i)] = 1.0;
        e_rhs[m0 + k] = qp.lo[i];
    }

    let red = eliminate_equalities(&e, &e_rhs);
    let eq_res = if e.nrows() > 0 {
        (&e * &red.z_p - &e_rhs).amax()
    } else {
        0.0
    };
    if eq_res > tol * (1.0 + e_rhs.amax()) {
        return Ok(QpSolution {
            objective: qp.objective(&red.z_p),
            z: red.z_p,
            status: QpStatus::Infeasible,
            kkt_residual: eq_res,
            iterations: 0,
            objective_history: Vec::new(),
        });
    }

    let ny = red.n.ncols();
    let mut cons: Vec<(usize, f64, f64)> = Vec::new(); // (index, sign, rhs)
    for i in 0..n {
        if fixed.contains(&i) {
            continue;
        }
        if qp.lo[i].is_finite() {
            cons.push((i, 1.0, qp.lo[i] - red.z_p[i]));
        }
        if qp.hi[i].is_finite() {
            cons.push((i, -1.0, -(qp.hi[i] - red.z_p[i])));
        }
    }

    let (z, feasible, converged, iterations, history) = if ny == 0 {
        // Each constraint reads s * 0 >= b with y empty.
        let ok = cons.iter().all(|&(_, _, b)| b <= tol);
        (red.z_p.clone(), ok, true, 0, vec![qp.objective(&red.z_p)])
    } else {
        let g_red = red.n.transpose() * &qp.h * &red.n;
        let g_red = (&g_red + g_red.transpose()) * 0.5;
        let a_red = red.n.transpose() * (&qp.h * &red.z_p + &qp.g);
        let chol = Cholesky::new(g_red).ok_or(QpError::NotConvex)?;
        let mut c = DMatrix::zeros(ny, cons.len());
        let mut b = DVector::zeros(cons.len());
        for (k, &(i, s, rhs)) in cons.iter().enumerate() {
            c.set_column(k, &(red.n.row(i).transpose() * s));
            b[k] = rhs;
        }
        let res = dual_active_set(&chol, &a_red, &c, &b, tol * 1e-3, settings.max_iter);
        let z = &red.z_p + &red.n * &res.y;
        let offset = 0.5 * red.z_p.dot(&(&qp.h * &red.z_p)) + qp.g.dot(&red.z_p) + qp.constant;
        let hist = res.history.iter().map(|h| h + offset).collect();
        (z, res.feasible, res.converged, res.iterations, hist)
    };

    let report = kkt_check(qp, &z, tol);
    let residual = report.max();
    let status = if !feasible && converged {
        QpStatus::Infeasible
    } else if feasible && residual <= tol {
        QpStatus::Optimal
    } else {
        QpStatus::MaxIter
    };
    Ok(QpSolution {
        objective: qp.objective(&z),
        z,
        status,
        kkt_residual: residual,
        iterations,
        objective_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn boxed(h: DMatrix<f64>, g: DVector<f64>, lo: Vec<f64>, hi: Vec<f64>) -> QuadraticProgram {
        QuadraticProgram {
            lo: DVector::from_vec(lo),
            hi: DVector::from_vec(hi),
            ..QuadraticProgram::unconstrained(h, g)
        }
    }

    #[test]
    fn clipped_scalar() {
        // (z - 1)^2 = z^2 - 2z + 1
        let mut qp = boxed(
            DMatrix::from_element(1, 1, 2.0),
            DVector::from_element(1, -2.0),
            vec![0.0],
            vec![0.5],
        );
        qp.constant = 1.0;
        let s = solve(&qp, &QpSettings::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.z[0] - 0.5).abs() < 1e-12);
        assert!((s.objective - 0.25).abs() < 1e-12);
    }

    #[test]
    fn symmetric_equality() {
        let qp = QuadraticProgram {
            e: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            e_rhs: DVector::from_element(1, 1.0),
            ..QuadraticProgram::unconstrained(DMatrix::identity(2, 2) * 2.0, DVector::zeros(2))
        };
        let s = solve(&qp, &QpSettings::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.z[0] - 0.5).abs() < 1e-12 && (s.z[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dependent_rows_are_dropped() {
        let qp = QuadraticProgram {
            e: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]),
            e_rhs: DVector::from_vec(vec![1.0, 2.0]),
            ..QuadraticProgram::unconstrained(DMatrix::identity(2, 2), DVector::zeros(2))
        };
        let s = solve(&qp, &QpSettings::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
    }

    #[test]
    fn inconsistent_equalities_are_infeasible() {
        let qp = QuadraticProgram {
            e: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]),
            e_rhs: DVector::from_vec(vec![1.0, 3.0]),
            ..QuadraticProgram::unconstrained(DMatrix::identity(2, 2), DVector::zeros(2))
        };
        assert_eq!(
            solve(&qp, &QpSettings::default()).unwrap().status,
            QpStatus::Infeasible
        );
    }

    #[test]
    fn equality_outside_box_is_infeasible() {
        let qp = QuadraticProgram {
            e: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            e_rhs: DVector::from_element(1, 5.0),
            lo: DVector::from_vec(vec![0.0, 0.0]),
            hi: DVector::from_vec(vec![1.0, 1.0]),
            ..QuadraticProgram::unconstrained(DMatrix::identity(2, 2), DVector::zeros(2))
        };
        assert_eq!(
            solve(&qp, &QpSettings::default()).unwrap().status,
            QpStatus::Infeasible
        );
    }

    #[test]
    fn fixed_variable() {
        let qp = boxed(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            vec![0.3, -1.0],
            vec![0.3, 1.0],
        );
        let s = solve(&qp, &QpSettings::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.z[0] - 0.3).abs() < 1e-12 && s.z[1].abs() < 1e-12);
    }

    #[test]
    fn malformed_inputs_rejected() {
        let qp = boxed(
            DMatrix::identity(2, 2),
            DVector::zeros(3),
            vec![0.0; 3],
            vec![1.0; 3],
        );
        assert!(matches!(
            solve(&qp, &QpSettings::default()),
            Err(QpError::DimensionMismatch(_))
        ));
        let qp = boxed(
            DMatrix::identity(1, 1),
            DVector::zeros(1),
            vec![1.0],
            vec![0.0],
        );
        assert_eq!(
            solve(&qp, &QpSettings::default()),
            Err(QpError::BoundsCrossed(0))
        );
        let qp = boxed(
            -DMatrix::identity(1, 1),
            DVector::zeros(1),
            vec![0.0],
            vec![1.0],
        );
        assert_eq!(solve(&qp, &QpSettings::default()), Err(QpError::NotConvex));
    }

    #[test]
    fn objective_history_is_nondecreasing() {
        let h = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let g = DVector::from_vec(vec![-8.0, 3.0, -5.0]);
        let qp = boxed(h, g, vec![0.0, 0.0, -0.5], vec![1.0, 1.0, 0.5]);
        let s = solve(&qp, &QpSettings::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!(s.objective_history.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }
}
