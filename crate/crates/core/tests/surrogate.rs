use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sceno_core::learn::{learn_surrogate, LearnConfig};
use sceno_core::scenario::{ParamSpace, ParamSpec};
use sceno_core::testbed::builtin_blackbox;
use sceno_core::{pgd_extremes, Direction, Mlp, PgdConfig, TrainConfig};

#[test]
fn input_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h = 1e-5;
    let mut compared = 0;
    for seed in 0..5u64 {
        let f = Mlp::new(&[4, 24, 24, 1], seed).unwrap();
        for _ in 0..20 {
            let theta: Vec<f64> = (0..4).map(|_| rng.gen_range(0.05..0.95)).collect();
            let g = f.grad_input(&theta).unwrap();
            for d in 0..4 {
                let mut up = theta.clone();
                let mut down = theta.clone();
                up[d] += h;
                down[d] -= h;
                let (fu, f0, fd) = (f.value(&up), f.value(&theta), f.value(&down));
                let (right, left) = ((fu - f0) / h, (f0 - fd) / h);
                if (right - left).abs() > 1e-6 * right.abs().max(1.0) {
                    // An activation flips inside the stencil.
                    continue;
                }
                let central = (fu - fd) / (2.0 * h);
                assert!(
                    (g[d] - central).abs() <= 1e-4 * g[d].abs().max(1.0),
                    "seed {seed} dim {d}: {} vs {central}",
                    g[d]
                );
                compared += 1;
            }
        }
    }
    assert!(compared >= 350, "only {compared} smooth stencils");
}

#[test]
fn pgd_beats_random_search() {
    // Sign steps cannot leave regions where every ReLU is off (zero
    // gradient), so a few random nets are expected to lose.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut wins = 0;
    for seed in 0..30u64 {
        let f = Mlp::new(&[3, 16, 16, 1], seed).unwrap();
        let random_min = (0..10_000)
            .map(|_| {
                let x: Vec<f64> = (0..3).map(|_| rng.gen()).collect();
                f.value(&x)
            })
            .fold(f64::INFINITY, f64::min);
        let best = &pgd_extremes(&f, 1, Direction::Min, &PgdConfig::default(), seed)[0];
        if f.value(best) <= random_min {
            wins += 1;
        }
        let top = &pgd_extremes(&f, 1, Direction::Max, &PgdConfig::default(), seed)[0];
        assert!(f.value(top) >= f.value(best));
    }
    assert!(wins >= 25, "PGD matched random search on {wins}/30 nets");
}

#[test]
fn lipschitz_bound_holds_on_segments() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for seed in 0..20u64 {
        let f = Mlp::new(&[3, 10, 10, 1], seed).unwrap();
        let l = f.lipschitz_bound();
        for _ in 0..200 {
            let a: Vec<f64> = (0..3).map(|_| rng.gen()).collect();
            let b: Vec<f64> = (0..3).map(|_| rng.gen()).collect();
            let dist = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!((f.value(&a) - f.value(&b)).abs() <= l * dist + 1e-12);
        }
    }
}

fn braking_space() -> ParamSpace {
    ParamSpace::new(vec![
        ParamSpec::new("npc_speed", 5.0, 15.0, "m/s"),
        ParamSpec::new("npc_decel", 3.0, 8.0, "m/s^2"),
        ParamSpec::new("init_gap", 5.0, 40.0, "m"),
        ParamSpec::new("trigger_gap", 5.0, 40.0, "m"),
        ParamSpec::new("weather_fog", 0.0, 100.0, "%"),
    ])
    .unwrap()
}

#[test]
fn braking_learning_history() {
    let bb = builtin_blackbox("braking", &braking_space()).unwrap();
    let mut improved = 0;
    for seed in 0..3u64 {
        let cfg = LearnConfig {
            n_init: 900,
            max_iters: 5,
            seed,
            epsilon: 0.05,
            eta: 0.01,
            hidden: vec![24, 24],
            train: TrainConfig {
                epochs: 200,
                lr: 3e-3,
                batch: 32,
                ..TrainConfig::default()
            },
            ..LearnConfig::default()
        };
        let out = learn_surrogate(&bb, &braking_space(), &cfg).unwrap();
        assert!(out.history.iter().all(|r| r.lambda_star.is_finite()));
        assert_eq!(out.certificate.k, 225);
        assert_eq!(out.certificate.lambda_star, out.history.last().unwrap().lambda_star);
        let first = out.history.first().unwrap().lambda_star;
        let last = out.history.last().unwrap().lambda_star;
        if last < first {
            improved += 1;
        }
    }
    assert!(improved >= 2, "{improved}/3 runs ended below their first error bound");
}
