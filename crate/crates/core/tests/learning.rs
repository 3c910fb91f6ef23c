use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shepherd_core::curriculum::LessonId;
use shepherd_core::dataset::{read_dataset, write_dataset, FeatureVector, Sample};
use shepherd_core::learner::{train, MlpModel, TrainConfig};
use shepherd_core::Vec2;

fn random_model(seed: u64, hidden: usize) -> MlpModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    MlpModel::init(17, hidden, 2, 1.5, &mut rng)
}

fn random_features(rng: &mut ChaCha8Rng) -> [f64; 17] {
    let mut f = [0.0; 17];
    for x in &mut f {
        *x = rng.random_range(-1.0..1.0);
    }
    f
}

fn random_sample(rng: &mut ChaCha8Rng, i: u64) -> Sample {
    let lessons = LessonId::ALL;
    Sample {
        lesson: lessons[rng.random_range(0..lessons.len())],
        sim_id: i / 7,
        t: i,
        features: FeatureVector(random_features(rng)),
        label: Vec2::from_angle(rng.random_range(0.0..6.3)),
    }
}

/// Straight matrix arithmetic, written independently of the model code.
fn reference_forward(m: &MlpModel, x: &[f64]) -> [f64; 2] {
    let mut h = vec![0.0; m.hidden_dim];
    for (j, hj) in h.iter_mut().enumerate() {
        let mut z = m.b1[j];
        for (i, xi) in x.iter().enumerate() {
            z += m.w1[j * m.input_dim + i] * xi;
        }
        *hj = z.tanh();
    }
    let mut y = [m.b2[0], m.b2[1]];
    for (k, yk) in y.iter_mut().enumerate() {
        for (j, hj) in h.iter().enumerate() {
            *yk += m.w2[k * m.hidden_dim + j] * hj;
        }
    }
    y
}

#[test]
fn forward_matches_reference_arithmetic() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for seed in 0..20 {
        let m = random_model(seed, 1 + seed as usize % 12);
        for _ in 0..50 {
            let x = random_features(&mut rng);
            let y = m.forward(&x).unwrap();
            let r = reference_forward(&m, &x);
            assert!((y.x - r[0]).abs() < 1e-12 && (y.y - r[1]).abs() < 1e-12);
        }
    }
}

fn loss_of(m: &MlpModel, batch: &[(&[f64], Vec2)]) -> f64 {
    m.loss_and_gradient(batch).unwrap().0
}

#[test]
fn gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let h = 1e-5;
    for seed in 0..20 {
        let model = random_model(100 + seed, 10);
        let xs: Vec<[f64; 17]> = (0..8).map(|_| random_features(&mut rng)).collect();
        let ys: Vec<Vec2> = (0..8).map(|_| Vec2::from_angle(rng.random_range(0.0..6.3))).collect();
        let batch: Vec<(&[f64], Vec2)> = xs.iter().zip(&ys).map(|(x, y)| (&x[..], *y)).collect();
        let (_, grads) = model.loss_and_gradient(&batch).unwrap();

        let check = |get: &dyn Fn(&mut MlpModel) -> &mut Vec<f64>, analytic: &[f64]| {
            for (k, &g) in analytic.iter().enumerate() {
                let mut plus = model.clone();
                get(&mut plus)[k] += h;
                let mut minus = model.clone();
                get(&mut minus)[k] -= h;
                let numeric = (loss_of(&plus, &batch) - loss_of(&minus, &batch)) / (2.0 * h);
                let scale = g.abs().max(numeric.abs()).max(1e-6);
                assert!((g - numeric).abs() / scale < 1e-4, "param {k}: {g} vs {numeric}");
            }
        };
        check(&|m| &mut m.w1, &grads.w1);
        check(&|m| &mut m.b1, &grads.b1);
        check(&|m| &mut m.w2, &grads.w2);
        check(&|m| &mut m.b2, &grads.b2);
    }
}

#[test]
fn tiny_steps_never_raise_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let data: Vec<Sample> = (0..100).map(|i| random_sample(&mut rng, i)).collect();
    let cfg = TrainConfig {
        learning_rate: 1e-4,
        epochs: 30,
        batch_size: 100,
        ..TrainConfig::default()
    };
    let (_, history) = train(random_model(12, 10), &data, &cfg).unwrap();
    assert!(history.windows(2).all(|w| w[1] <= w[0]), "{history:?}");
}

#[test]
fn learns_a_fixed_rotation() {
    // Label is the first feature pair rotated by a quarter turn.
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let data: Vec<Sample> = (0..400)
        .map(|i| {
            let mut s = random_sample(&mut rng, i);
            let v = Vec2::new(s.features.0[0], s.features.0[1]) * 0.5;
            s.label = v.perp();
            s
        })
        .collect();
    let cfg = TrainConfig {
        learning_rate: 0.05,
        epochs: 300,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let (_, history) = train(random_model(14, 10), &data, &cfg).unwrap();
    assert!(*history.last().unwrap() < 1e-3, "final loss {}", history.last().unwrap());
}

#[test]
fn output_is_lipschitz_in_the_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for seed in 0..20 {
        let m = random_model(200 + seed, 10);
        // |y(a) - y(b)| <= ||W2|| ||W1|| |a - b| with Frobenius norms, since tanh is 1-Lipschitz.
        let fro = |w: &[f64]| w.iter().map(|x| x * x).sum::<f64>().sqrt();
        let bound = fro(&m.w1) * fro(&m.w2);
        for _ in 0..50 {
            let a = random_features(&mut rng);
            let mut b = a;
            for x in &mut b {
                *x += rng.random_range(-1e-3..1e-3);
            }
            let dx = a.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            let dy = (m.forward(&a).unwrap() - m.forward(&b).unwrap()).norm();
            assert!(dy <= bound * dx * (1.0 + 1e-9));
        }
    }
}

#[test]
fn dataset_files_round_trip_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let data: Vec<Sample> = (0..10_000).map(|i| random_sample(&mut rng, i)).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("samples.csv");
    write_dataset(&data, &path).unwrap();
    assert_eq!(read_dataset(&path).unwrap(), data);
}

#[test]
fn model_files_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..10 {
        let m = random_model(300 + seed, 1 + seed as usize);
        let path = dir.path().join(format!("m{seed}.json"));
        m.save(&path).unwrap();
        assert_eq!(MlpModel::load(&path).unwrap(), m);
    }
}
