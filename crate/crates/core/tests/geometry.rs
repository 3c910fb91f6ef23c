use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shepherd_core::dataset::{compute_features, RawObservation};
use shepherd_core::policy::{collect_point, drive_point, oracle_direction, Behaviour, PolicyObservation};
use shepherd_core::sim::{switching_distance, SimParams};
use shepherd_core::Vec2;

fn point(rng: &mut ChaCha8Rng, r: f64) -> Vec2 {
    Vec2::new(rng.random_range(-r..r), rng.random_range(-r..r))
}

fn random_obs(rng: &mut ChaCha8Rng) -> PolicyObservation {
    let gcm = point(rng, 100.0);
    let furthest_r = rng.random_range(0.01..60.0);
    let furthest_pos = gcm + Vec2::from_angle(rng.random_range(0.0..6.3)) * furthest_r;
    PolicyObservation {
        shepherd_pos: point(rng, 150.0),
        shepherd_heading: Vec2::ZERO,
        goal: point(rng, 150.0),
        gcm,
        furthest_pos,
        furthest_r,
        n: rng.random_range(1..250),
        gcm_velocity: Vec2::ZERO,
        furthest_velocity: Vec2::ZERO,
        nearest_sheep_dist: rng.random_range(0.0..30.0),
        t: 0,
    }
}

#[test]
fn oracle_branch_matches_the_switching_inequality() {
    let params = SimParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10_000 {
        let obs = random_obs(&mut rng);
        let cmd = oracle_direction(&obs, &params);
        let expected = if obs.nearest_sheep_dist < 3.0 * params.interaction_radius {
            Behaviour::Stopped
        } else if obs.furthest_r < params.interaction_radius * (obs.n as f64).powf(2.0 / 3.0) {
            Behaviour::Drive
        } else {
            Behaviour::Collect
        };
        assert_eq!(cmd.behaviour, expected, "{obs:?}");
        let norm = cmd.direction.norm();
        assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-9);
    }
}

#[test]
fn target_points_follow_rigid_motions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..2_000 {
        let gcm = point(&mut rng, 100.0);
        let goal = point(&mut rng, 100.0);
        let far = gcm + Vec2::from_angle(rng.random_range(0.0..6.3)) * rng.random_range(0.5..40.0);
        let n = rng.random_range(1..200);
        let theta = rng.random_range(0.0..6.3);
        let shift = point(&mut rng, 300.0);
        let m = |p: Vec2| p.rotate(theta) + shift;
        let r = far.distance(gcm);

        let pd = drive_point(gcm, goal, n, 2.0).unwrap();
        let pd_moved = drive_point(m(gcm), m(goal), n, 2.0).unwrap();
        assert!(m(pd).distance(pd_moved) < 1e-9);

        let pc = collect_point(gcm, far, r, 2.0).unwrap();
        let pc_moved = collect_point(m(gcm), m(far), m(far).distance(m(gcm)), 2.0).unwrap();
        assert!(m(pc).distance(pc_moved) < 1e-9);
    }
}

#[test]
fn collect_point_extends_the_furthest_sheep_by_r_a() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..2_000 {
        let gcm = point(&mut rng, 100.0);
        let far = gcm + Vec2::from_angle(rng.random_range(0.0..6.3)) * rng.random_range(0.5..80.0);
        let r_a = rng.random_range(0.5..5.0);
        let pc = collect_point(gcm, far, far.distance(gcm), r_a).unwrap();
        assert!((pc.distance(far) - r_a).abs() < 1e-9);
        let (a, b) = (far - gcm, pc - gcm);
        assert!((a.x * b.y - a.y * b.x).abs() / (a.norm() * b.norm()) < 1e-9);
        assert!(a.dot(b) > 0.0);
    }
}

#[test]
fn drive_point_lies_behind_the_herd() {
    let gcm = Vec2::new(3.0, 4.0);
    let pd = drive_point(gcm, Vec2::new(3.0, 14.0), 50, 2.0).unwrap();
    assert!((pd.x - 3.0).abs() < 1e-12);
    assert!((pd.y - (4.0 - 2.0 * 50f64.sqrt())).abs() < 1e-12);
    assert!((switching_distance(50, 2.0).unwrap() - 27.144_176_165_949_066).abs() < 1e-9);
}

#[test]
fn features_are_translation_invariant() {
    let params = SimParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10_000 {
        let raw = |rng: &mut ChaCha8Rng, t| RawObservation {
            t,
            goal: point(rng, 150.0),
            shepherd: point(rng, 150.0),
            gcm: point(rng, 150.0),
            furthest: point(rng, 150.0),
        };
        let prev = raw(&mut rng, 4);
        let curr = raw(&mut rng, 5);
        let n = rng.random_range(1..250);
        let v = point(&mut rng, 1000.0);
        let shift = |o: &RawObservation| RawObservation {
            t: o.t,
            goal: o.goal + v,
            shepherd: o.shepherd + v,
            gcm: o.gcm + v,
            furthest: o.furthest + v,
        };
        let a = compute_features(&curr, Some(&prev), n, &params).unwrap();
        let b = compute_features(&shift(&curr), Some(&shift(&prev)), n, &params).unwrap();
        for (x, y) in a.0.iter().zip(b.0.iter()) {
            assert!((x - y).abs() < 1e-9, "{a:?} vs {b:?}");
        }
        // Shepherd->furthest minus shepherd->GCM is GCM->furthest, the negation of pair 5.
        let lhs = a.pair(2) - a.pair(1);
        assert!((lhs + a.pair(5)).norm() < 1e-12);
    }
}
