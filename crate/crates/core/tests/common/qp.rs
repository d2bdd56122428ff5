//! Random strictly convex QPs and an exhaustive active-set enumeration oracle.

use junction_core::qp::QuadraticProgram;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_qp(rng: &mut ChaCha8Rng) -> QuadraticProgram {
    let n = rng.gen_range(2..=12);
    let m = rng.gen_range(0..=3usize.min(n - 1));
    let k = rng.gen_range(1..=7usize.min(n));
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let h = a.transpose() * &a + DMatrix::identity(n, n) * 0.1;
    let g = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
    let mut lo = DVector::from_element(n, f64::NEG_INFINITY);
    let mut hi = DVector::from_element(n, f64::INFINITY);
    let mut z0: DVector<f64> = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    for &i in &idx[..k] {
        let l: f64 = rng.gen_range(-1.0..0.5);
        let w: f64 = rng.gen_range(0.1..1.5);
        match rng.gen_range(0..3) {
            0 => lo[i] = l,
            1 => hi[i] = l + w,
            _ => {
                lo[i] = l;
                hi[i] = l + w;
            }
        }
        z0[i] = z0[i].clamp(lo[i], hi[i]);
    }
    let e = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
    let e_rhs = &e * &z0;
    QuadraticProgram {
        h,
        g,
        e,
        e_rhs,
        lo,
        hi,
        constant: 0.0,
    }
}

/// Minimum over all {free, at lower, at upper} assignments of the bounded
/// variables whose equality-constrained minimizer is feasible.
pub fn enumerate_oracle(qp: &QuadraticProgram) -> DVector<f64> {
    let n = qp.dim();
    let m = qp.e.nrows();
    let bounded: Vec<usize> = (0..n)
        .filter(|&i| qp.lo[i].is_finite() || qp.hi[i].is_finite())
        .collect();
    let mut best: Option<(f64, DVector<f64>)> = None;
    let combos = 3usize.pow(bounded.len() as u32);
    for code in 0..combos {
        let mut c = code;
        let mut fixed: Vec<(usize, f64)> = Vec::new();
        let mut skip = false;
        for &i in &bounded {
            match c % 3 {
                1 if qp.lo[i].is_finite() => fixed.push((i, qp.lo[i])),
                2 if qp.hi[i].is_finite() => fixed.push((i, qp.hi[i])),
                0 => {}
                _ => skip = true,
            }
            c /= 3;
        }
        if skip {
            continue;
        }
        // KKT system over z with fixed coordinates as extra equality rows.
        let rows = m + fixed.len();
        let dim = n + rows;
        let mut kkt = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(&qp.h);
        for i in 0..n {
            rhs[i] = -qp.g[i];
        }
        for r in 0..m {
            for j in 0..n {
                kkt[(n + r, j)] = qp.e[(r, j)];
                kkt[(j, n + r)] = qp.e[(r, j)];
            }
            rhs[n + r] = qp.e_rhs[r];
        }
        for (k, &(i, v)) in fixed.iter().enumerate() {
            kkt[(n + m + k, i)] = 1.0;
            kkt[(i, n + m + k)] = 1.0;
            rhs[n + m + k] = v;
        }
        let Ok(sol) = kkt.clone().svd(true, true).solve(&rhs, 1e-12) else {
            continue;
        };
        if (&kkt * &sol - &rhs).amax() > 1e-8 {
            continue;
        }
        let z = sol.rows(0, n).into_owned();
        if (0..n).any(|i| z[i] < qp.lo[i] - 1e-9 || z[i] > qp.hi[i] + 1e-9) {
            continue;
        }
        let f = qp.objective(&z);
        if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            best = Some((f, z));
        }
    }
    best.expect("generated problems are feasible").1
}
