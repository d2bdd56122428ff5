//! Random strictly convex QPs checked against exhaustive active-set enumeration.

mod common;

use common::qp::{enumerate_oracle, random_qp};
use junction_core::qp::{kkt_check, solve, QpSettings, QpStatus, QuadraticProgram};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn matches_enumeration_oracle_on_random_problems() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..50 {
        let qp = random_qp(&mut rng);
        let s = solve(&qp, &QpSettings::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal, "case {case}");
        let oracle = enumerate_oracle(&qp);
        let err = (&s.z - &oracle).amax();
        assert!(err <= 1e-6, "case {case}: |z - oracle| = {err:e}");
        assert!(kkt_check(&qp, &s.z, 1e-6).max() <= 1e-6);
        assert!(
            s.objective_history.windows(2).all(|w| w[1] >= w[0] - 1e-9),
            "case {case}"
        );
    }
}

#[test]
fn argmin_is_scale_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let qp = random_qp(&mut rng);
        let base = solve(&qp, &QpSettings::default()).unwrap();
        let scaled = QuadraticProgram {
            h: &qp.h * 37.5,
            g: &qp.g * 37.5,
            ..qp.clone()
        };
        let s = solve(&scaled, &QpSettings::default()).unwrap();
        assert!((&s.z - &base.z).amax() <= 1e-8);
    }
}
