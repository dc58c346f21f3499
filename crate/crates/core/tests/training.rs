use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tfhts_core::data::WindowSample;
use tfhts_core::exec::Serial;
use tfhts_core::gradcheck::tiny_model_config;
use tfhts_core::model::{Model, Variant};
use tfhts_core::train::{mean_loss, should_stop, train, LossKind, TrainConfig, TrainHook};

fn windows(n: usize, seed: u64) -> Vec<WindowSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let base: f64 = rng.random_range(-1.0..1.0);
            let slope: f64 = rng.random_range(-0.3..0.3);
            let x = (0..7).map(|j| base + slope * j as f64 + rng.random_range(-0.05..0.05)).collect();
            let y = (7..10).map(|j| base + slope * j as f64).collect();
            WindowSample::new(i % 3, i, x, y)
        })
        .collect()
}

fn model() -> Model {
    Model::new(tiny_model_config(Variant::WithoutText), 0).unwrap()
}

struct Scripted(Vec<f64>);

impl TrainHook for Scripted {
    fn on_epoch(&mut self, epoch: usize, _val: f64) -> f64 {
        self.0[epoch - 1]
    }
}

#[test]
fn one_step_lowers_a_single_sample_loss() {
    let data = windows(1, 1);
    let cfg = TrainConfig {
        max_epochs: 1,
        batch_size: 1,
        lr: 1e-4,
        ..Default::default()
    };
    let m = model();
    let before = mean_loss(&m, &data, None, LossKind::Mse, &Serial).unwrap();
    let out = train(m, &data, &data, None, &cfg, &Serial, &mut tfhts_core::train::NoHook).unwrap();
    let after = mean_loss(&out.checkpoint.model, &data, None, LossKind::Mse, &Serial).unwrap();
    assert!(after < before, "{after} >= {before}");
}

#[test]
fn scripted_plateau_stops_at_the_third_epoch() {
    let data = windows(8, 2);
    let cfg = TrainConfig {
        max_epochs: 10,
        ..Default::default()
    };
    let mut hook = Scripted(vec![0.9, 0.7, 0.69995, 0.5, 0.4, 0.3, 0.2, 0.1, 0.05, 0.01]);
    let out = train(model(), &data, &data, None, &cfg, &Serial, &mut hook).unwrap();
    assert!(out.stopped_early);
    assert_eq!(out.checkpoint.epoch, 3);
    assert_eq!(out.checkpoint.best_epoch, 3);
    assert!(should_stop(&[0.5, 0.49995], 1e-4));
    assert!(!should_stop(&[0.5, 0.4989], 1e-4));
}

#[test]
fn single_epoch_budget() {
    let data = windows(8, 3);
    let cfg = TrainConfig {
        max_epochs: 1,
        ..Default::default()
    };
    let out = train(model(), &data, &data, None, &cfg, &Serial, &mut tfhts_core::train::NoHook).unwrap();
    assert_eq!(out.log.len(), 1);
    assert!(!out.stopped_early);
}

#[test]
fn training_is_deterministic_and_keeps_the_best_epoch() {
    let (tr, va) = (windows(40, 4), windows(10, 5));
    let cfg = TrainConfig {
        max_epochs: 6,
        lr: 1e-2,
        batch_size: 16,
        early_stop_delta: 1e-12,
        seed: 9,
        ..Default::default()
    };
    let run = || train(model(), &tr, &va, None, &cfg, &Serial, &mut tfhts_core::train::NoHook).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.checkpoint, b.checkpoint);
    let best = a.checkpoint.best_val_loss();
    assert!(a.checkpoint.val_history.iter().all(|&v| best <= v));
    let restored = mean_loss(&a.checkpoint.model, &va, None, LossKind::Mse, &Serial).unwrap();
    assert!((restored - best).abs() < 1e-12);
    let other = TrainConfig { seed: 10, ..cfg };
    let c = train(model(), &tr, &va, None, &other, &Serial, &mut tfhts_core::train::NoHook).unwrap();
    assert_ne!(a.checkpoint.val_history, c.checkpoint.val_history);
}
