mod common;

use common::*;
use lic::flow_prior::{
    sample_unconditional, standard_normal, train_flow, velocity, FlowTraining, GaussianPrior, VelocityModel,
};
use lic::nn::TrainingConfig;
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn gaussian(mean: Vec<f64>, var: Vec<f64>) -> VelocityModel<f64> {
    VelocityModel::GaussianAnalytic(GaussianPrior::new(mean, var).unwrap())
}

/// Least-squares slope and intercept of `x₁ − x₀` on `z_t` for one coordinate.
fn regress(mu: f64, var: f64, t: f64, n: usize, seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let prior = Normal::new(mu, var.sqrt()).unwrap();
    let (mut sz, mut sv, mut szz, mut szv) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..n {
        let x0 = prior.sample(&mut r);
        let x1: f64 = r.sample(rand_distr::StandardNormal);
        let z = (1.0 - t) * x0 + t * x1;
        let v = x1 - x0;
        sz += z;
        sv += v;
        szz += z * z;
        szv += z * v;
    }
    let n = n as f64;
    let slope = (szv - sz * sv / n) / (szz - sz * sz / n);
    (slope, (sv - slope * sz) / n)
}

#[test]
fn velocity_at_noise_end_points_away_from_the_mean() {
    let (mu, var) = (1.5, 0.7);
    let model = gaussian(vec![mu], vec![var]);
    for z in [-2.0, 0.0, 0.4, 3.0] {
        assert!((velocity(&model, &[z], 1.0).unwrap()[0] - (z - mu)).abs() <= 1e-12);
    }
    // x₁ = z_t at t = 1, so the regression is exact up to sampling noise of x₀
    let (slope, intercept) = regress(mu, var, 1.0, 100_000, 1);
    assert!((slope - 1.0).abs() <= 0.01 && (intercept + mu).abs() <= 0.01 * mu, "{slope} {intercept}");
}

#[test]
fn standard_prior_velocity_matches_closed_form_and_monte_carlo() {
    let model = gaussian(vec![0.0], vec![1.0]);
    for t in [0.25, 0.5, 0.75] {
        let s = (1.0 - t) * (1.0 - t) + t * t;
        let slope = (t - (1.0 - t)) / s;
        for z in [-1.5, 0.5, 2.0] {
            assert!((velocity(&model, &[z], t).unwrap()[0] - z * slope).abs() <= 1e-12);
        }
        if t != 0.5 {
            let (mc, _) = regress(0.0, 1.0, t, 100_000, 2);
            assert!((mc - slope).abs() <= 0.01 * slope.abs(), "t={t}: {mc} vs {slope}");
        }
    }
}

#[test]
fn unconditional_samples_reach_the_prior_mean() {
    let mu = vec![2.0, -1.0, 0.5];
    let model = gaussian(mu.clone(), vec![1.0; 3]);
    let runs = 1024;
    let mut sum = vec![0.0; 3];
    for seed in 0..runs {
        for (s, v) in sum.iter_mut().zip(sample_unconditional(&model, 100, seed).unwrap()) {
            *s += v;
        }
    }
    let se = 1.0 / (runs as f64).sqrt();
    for (s, m) in sum.iter().zip(&mu) {
        assert!((s / runs as f64 - m).abs() <= 3.0 * se, "mean {} vs {m}", s / runs as f64);
    }
}

#[test]
fn doubling_steps_barely_moves_samples() {
    let model = gaussian(vec![0.5, -2.0, 1.0, 0.0], vec![0.3, 1.0, 2.0, 0.05]);
    for seed in 0..8 {
        let coarse = sample_unconditional(&model, 50, seed).unwrap();
        let fine = sample_unconditional(&model, 100, seed).unwrap();
        assert!(rel_l2(&coarse, &fine) < 0.02, "seed {seed}: {}", rel_l2(&coarse, &fine));
    }
}

#[test]
fn sampling_is_bit_reproducible() {
    let model = gaussian(vec![0.1; 6], vec![0.4; 6]);
    assert_eq!(sample_unconditional(&model, 37, 9).unwrap(), sample_unconditional(&model, 37, 9).unwrap());
    assert_ne!(sample_unconditional(&model, 37, 9).unwrap(), sample_unconditional(&model, 37, 10).unwrap());
}

fn fit(dataset: &[Vec<f64>], epochs: usize, batch_size: usize, learning_rate: f64) -> FlowTraining<f64> {
    let cfg = TrainingConfig {
        epochs,
        batch_size,
        learning_rate,
        ..TrainingConfig::default()
    };
    train_flow(dataset, 64, &cfg).unwrap()
}

#[test]
fn single_point_dataset_is_transported_to_the_point() {
    let target = vec![1.0, -2.0, 0.5, 1.5];
    let out = fit(&vec![target.clone(); 256], 200, 64, 1e-3);
    let model = VelocityModel::Mlp(out.model);
    let runs = 512;
    let mut mean = vec![0.0; 4];
    for seed in 0..runs {
        for (m, v) in mean.iter_mut().zip(sample_unconditional(&model, 50, seed).unwrap()) {
            *m += v / runs as f64;
        }
    }
    let err = rel_l2(&mean, &target);
    assert!(err <= 0.05, "sample mean {mean:?}, relative error {err}");
}

#[test]
fn learned_velocity_matches_gaussian_oracle() {
    let (mu, var) = (vec![1.0f64, -0.5], vec![0.25f64, 1.0]);
    let mut r = rng(4);
    let noise: Vec<f64> = standard_normal(&mut r, 2 * 8192);
    let data: Vec<Vec<f64>> = noise
        .chunks(2)
        .map(|e| (0..2).map(|j| mu[j] + var[j].sqrt() * e[j]).collect())
        .collect();
    let out = fit(&data, 300, 512, 3e-4);
    let learned = VelocityModel::Mlp(out.model);
    let oracle = gaussian(mu, var);
    let (mut got, mut want) = (Vec::new(), Vec::new());
    for t in [0.2, 0.4, 0.6, 0.8] {
        for a in [-1.0, 0.0, 1.0] {
            for b in [-1.0, 0.0, 1.0] {
                got.extend(velocity(&learned, &[a, b], t).unwrap());
                want.extend(velocity(&oracle, &[a, b], t).unwrap());
            }
        }
    }
    let err = rel_l2(&got, &want);
    assert!(err <= 0.05, "relative L2 {err}");

    // the conditional variance of x₁ − x₀ keeps the optimum above zero
    let tail = &out.epoch_losses[out.epoch_losses.len() - 10..];
    assert!(tail.iter().all(|&l| l > 0.1), "loss tail {tail:?}");
}
