use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shepherd_core::episode::simulate;
use shepherd_core::curriculum::{spawn_scenario, LessonId};
use shepherd_core::policy::{oracle_direction, Oracle, PolicyObservation};
use shepherd_core::sim::{
    furthest_sheep, gcm, sheep_step, switching_distance, world_step, SheepState, SimParams, WorldState,
};
use shepherd_core::Vec2;

fn random_world(seed: u64, n: usize, spread: f64) -> WorldState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pt = |r: f64| Vec2::new(rng.random_range(-r..r), rng.random_range(-r..r));
    let sheep: Vec<Vec2> = (0..n).map(|_| pt(spread) + Vec2::new(75.0, 75.0)).collect();
    let shepherd = pt(40.0) + Vec2::new(75.0, 75.0);
    let goal = pt(70.0) + Vec2::new(75.0, 75.0);
    WorldState::new(sheep, shepherd, goal, seed).unwrap()
}

fn unit_dir(angle: f64, on: bool) -> Vec2 {
    if on {
        Vec2::from_angle(angle)
    } else {
        Vec2::ZERO
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stepping_is_bit_reproducible(seed in any::<u64>(), n in 1usize..40, angle in 0.0..6.3f64, on in any::<bool>()) {
        let params = SimParams::default();
        let w = random_world(seed, n, 20.0);
        let a = world_step(&w, unit_dir(angle, on), &params).unwrap();
        let b = world_step(&w, unit_dir(angle, on), &params).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn stepping_commutes_with_translation(
        seed in any::<u64>(),
        n in 1usize..40,
        angle in 0.0..6.3f64,
        dx in -500.0..500.0f64,
        dy in -500.0..500.0f64,
    ) {
        let params = SimParams::default();
        let w = random_world(seed, n, 20.0);
        let offset = Vec2::new(dx, dy);
        let mut shifted = w.clone();
        shifted.translate(offset);
        let dir = Vec2::from_angle(angle);
        let mut a = world_step(&w, dir, &params).unwrap();
        let b = world_step(&shifted, dir, &params).unwrap();
        a.translate(offset);
        for (p, q) in a.sheep.iter().zip(&b.sheep) {
            prop_assert!(p.pos.distance(q.pos) < 1e-9, "{:?} vs {:?}", p.pos, q.pos);
            prop_assert!(p.heading.distance(q.heading) < 1e-9);
        }
        prop_assert!(a.shepherd_pos.distance(b.shepherd_pos) < 1e-9);
    }

    #[test]
    fn non_grazing_sheep_move_exactly_one_step(seed in any::<u64>(), n in 1usize..30) {
        let params = SimParams::default();
        let w = random_world(seed, n, 15.0);
        let next = world_step(&w, Vec2::ZERO, &params).unwrap();
        for (before, after) in w.sheep.iter().zip(&next.sheep) {
            let moved = before.pos.distance(after.pos);
            if before.pos.distance(w.shepherd_pos) <= params.detection_radius {
                prop_assert!((moved - params.sheep_speed).abs() < 1e-9);
                prop_assert!((after.heading.norm() - 1.0).abs() < 1e-9);
            } else {
                prop_assert!(moved == 0.0 || (moved - params.sheep_speed).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn gcm_and_radius_ignore_order(seed in any::<u64>(), n in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sheep: Vec<SheepState> = (0..n)
            .map(|_| SheepState::at(Vec2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0))))
            .collect();
        let g = gcm(&sheep).unwrap();
        let (_, r) = furthest_sheep(&sheep, g).unwrap();
        sheep.reverse();
        let g2 = gcm(&sheep).unwrap();
        let (_, r2) = furthest_sheep(&sheep, g2).unwrap();
        prop_assert!(g.distance(g2) < 1e-9);
        prop_assert!((r - r2).abs() < 1e-9);
    }

    #[test]
    fn switching_distance_is_monotone(n in 1usize..5000, r_a in 0.1..10.0f64) {
        prop_assert!(switching_distance(n + 1, r_a).unwrap() >= switching_distance(n, r_a).unwrap());
    }
}

#[test]
fn sheep_step_agrees_with_world_step() {
    let params = SimParams::default();
    let w = random_world(11, 25, 12.0);
    let next = world_step(&w, Vec2::new(0.0, 1.0), &params).unwrap();
    let mut rng = w.rng.clone();
    for i in 0..w.n() {
        assert_eq!(sheep_step(i, &w, &params, &mut rng), next.sheep[i]);
    }
}

#[test]
fn furthest_matches_a_linear_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let sheep: Vec<SheepState> = (0..50)
        .map(|_| SheepState::at(Vec2::new(rng.random_range(0.0..150.0), rng.random_range(0.0..150.0))))
        .collect();
    let g = gcm(&sheep).unwrap();
    let mut best = (0, -1.0);
    for (i, s) in sheep.iter().enumerate() {
        let d = s.pos.distance(g);
        if d > best.1 {
            best = (i, d);
        }
    }
    let (idx, r) = furthest_sheep(&sheep, g).unwrap();
    assert_eq!(idx, best.0);
    assert_eq!(r, best.1);
}

#[test]
fn oracle_closes_on_goal_in_late_steps() {
    let params = SimParams::default();
    let scenario = spawn_scenario(LessonId::OpenCollected, 20, &params, 7).unwrap();
    let mut world = scenario.world.clone();
    let mut dist = vec![world.gcm().distance(world.goal)];
    for _ in 0..100 {
        let obs = PolicyObservation::from_world(&world, None);
        world.step(oracle_direction(&obs, &params).direction, &params).unwrap();
        dist.push(world.gcm().distance(world.goal));
    }
    let late = &dist[50..];
    let falling = late.windows(2).filter(|w| w[1] < w[0]).count();
    assert!(falling * 10 >= (late.len() - 1) * 6, "only {falling} of {} steps closed in", late.len() - 1);
}

#[test]
fn oracle_finishes_every_lesson_on_small_herds() {
    let params = SimParams::default();
    for lesson in LessonId::ALL {
        for seed in 0..3 {
            let scenario = spawn_scenario(lesson, 12, &params, seed).unwrap();
            let (m, end) = simulate(&Oracle, &scenario, &params, |_, _| {}).unwrap();
            assert!(m.success, "lesson {lesson} seed {seed}: {m:?}");
            assert!(scenario.termination.reached(&end, &params));
        }
    }
}
