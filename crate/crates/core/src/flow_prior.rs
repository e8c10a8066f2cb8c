//! Rectified-flow priors over flattened latents.
//!
//! Time runs from `t = 1` (standard normal noise) to `t = 0` (data) along the
//! straight path `z_t = (1−t)·x₀ + t·x₁`.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::{Activation, AdamW, Mlp, TrainingConfig};
use crate::scalar::{lit, Scalar};

/// Width of the sinusoidal time embedding.
pub const TIME_EMBED_DIM: usize = 16;
pub const DEFAULT_FLOW_HIDDEN: usize = 512;
/// Sampling steps used when none are given.
pub const DEFAULT_STEPS: usize = 50;
/// Lower bound applied to fitted variances.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// `[sin(ω_k t), cos(ω_k t)]` with `ω_k` geometric from 1 to 100.
pub fn time_embedding<T: Scalar>(t: T) -> [T; TIME_EMBED_DIM] {
    let half = TIME_EMBED_DIM / 2;
    let mut out = [T::zero(); TIME_EMBED_DIM];
    for k in 0..half {
        let w = lit::<T>(100f64.powf(k as f64 / (half - 1) as f64));
        out[k] = (w * t).sin();
        out[half + k] = (w * t).cos();
    }
    out
}

/// Velocity network: `[z ⊕ emb(t)] → hidden → SiLU → hidden → SiLU → out`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowMlp<T> {
    pub net: Mlp<T>,
    pub dim: usize,
    pub seed: u64,
    pub epochs: usize,
    pub final_loss: Option<f64>,
}

impl<T: Scalar> FlowMlp<T> {
    pub fn init(dim: usize, hidden: usize, seed: u64) -> Self {
        Self {
            net: Mlp::init(&Self::sizes(dim, hidden), Activation::Silu, Activation::Identity, seed),
            dim,
            seed,
            epochs: 0,
            final_loss: None,
        }
    }

    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            net: Mlp::zeros(&Self::sizes(dim, hidden), Activation::Silu, Activation::Identity),
            dim,
            seed: 0,
            epochs: 0,
            final_loss: None,
        }
    }

    pub fn sizes(dim: usize, hidden: usize) -> Vec<usize> {
        vec![dim + TIME_EMBED_DIM, hidden, hidden, dim]
    }

    /// Network input rows for states `z` (one per row) at per-row times.
    pub fn inputs(z: &Array2<T>, t: &[T]) -> Array2<T> {
        let (n, d) = z.dim();
        let mut x = Array2::zeros((n, d + TIME_EMBED_DIM));
        for i in 0..n {
            x.row_mut(i).slice_mut(ndarray::s![..d]).assign(&z.row(i));
            for (k, e) in time_embedding(t[i]).into_iter().enumerate() {
                x[[i, d + k]] = e;
            }
        }
        x
    }
}

/// Independent per-coordinate Gaussian prior `N(μ, diag σ²)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrior<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> GaussianPrior<T> {
    pub fn new(mean: Vec<T>, var: Vec<T>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::Shape("prior mean and variance lengths differ".into()));
        }
        if var.iter().any(|&v| !(v > T::zero()) || !v.is_finite()) {
            return Err(Error::InvalidArgument("prior variances must be positive".into()));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("prior mean must be finite".into()));
        }
        Ok(Self { mean, var })
    }

    /// Per-coordinate sample mean and (population) variance, floored at
    /// [`VARIANCE_FLOOR`].
    pub fn fit(samples: &[Vec<T>]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot fit a prior to no samples".into()))?;
        let d = first.len();
        if samples.iter().any(|s| s.len() != d) {
            return Err(Error::Shape("samples differ in length".into()));
        }
        let n = samples.len() as f64;
        let mut mean = vec![0.0f64; d];
        for s in samples {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v.as_f64();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0f64; d];
        for s in samples {
            for ((acc, v), m) in var.iter_mut().zip(s).zip(&mean) {
                *acc += (v.as_f64() - m).powi(2);
            }
        }
        Self::new(
            mean.into_iter().map(lit).collect(),
            var.into_iter().map(|v| lit::<T>((v / n).max(VARIANCE_FLOOR))).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `E[x₁ − x₀ | z_t = z]` in closed form.
    pub fn velocity(&self, z: &[T], t: T) -> Vec<T> {
        let one = T::one();
        z.iter()
            .zip(self.mean.iter().zip(&self.var))
            .map(|(&z, (&mu, &var))| {
                let s = (one - t) * (one - t) * var + t * t;
                let centered = z - (one - t) * mu;
                let e0 = mu + (one - t) * var * centered / s;
                let e1 = t * centered / s;
                e1 - e0
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum VelocityModel<T> {
    Mlp(FlowMlp<T>),
    GaussianAnalytic(GaussianPrior<T>),
}

impl<T: Scalar> VelocityModel<T> {
    pub fn dim(&self) -> usize {
        match self {
            VelocityModel::Mlp(m) => m.dim,
            VelocityModel::GaussianAnalytic(g) => g.dim(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            VelocityModel::Mlp(_) => "mlp",
            VelocityModel::GaussianAnalytic(_) => "gaussian_analytic",
        }
    }
}

fn check_time<T: Scalar>(t: T) -> Result<()> {
    if !(t >= T::zero() && t <= T::one()) {
        return Err(Error::InvalidArgument(format!("time {t} outside [0, 1]")));
    }
    Ok(())
}

/// `v_θ(z, t)`.
pub fn velocity<T: Scalar>(model: &VelocityModel<T>, z: &[T], t: T) -> Result<Vec<T>> {
    check_time(t)?;
    if z.len() != model.dim() {
        return Err(Error::Shape(format!(
            "state has {} coordinates, model expects {}",
            z.len(),
            model.dim()
        )));
    }
    Ok(match model {
        VelocityModel::GaussianAnalytic(g) => g.velocity(z, t),
        VelocityModel::Mlp(m) => {
            let zr = Array2::from_shape_vec((1, z.len()), z.to_vec()).expect("row shape");
            m.net.forward(&FlowMlp::inputs(&zr, &[t])).into_raw_vec_and_offset().0
        }
    })
}

/// Endpoint estimates `(ẑ₀, ẑ₁) = (z − v·t, z + v·(1−t))`.
pub fn tweedie<T: Scalar>(z: &[T], v: &[T], t: T) -> (Vec<T>, Vec<T>) {
    let z0 = z.iter().zip(v).map(|(&z, &v)| z - v * t).collect();
    let z1 = z.iter().zip(v).map(|(&z, &v)| z + v * (T::one() - t)).collect();
    (z0, z1)
}

/// Uniform grid `t_k = 1 − k/steps`, `k = 0..=steps`.
pub fn time_grid<T: Scalar>(steps: usize) -> Vec<T> {
    (0..=steps)
        .map(|k| T::one() - lit::<T>(k as f64) / lit::<T>(steps as f64))
        .collect()
}

/// Re-interpolation `(1−t)·ẑ₀ + t·ẑ₁`.
pub fn reinterpolate<T: Scalar>(z0: &[T], z1: &[T], t: T) -> Vec<T> {
    z0.iter()
        .zip(z1)
        .map(|(&a, &b)| (T::one() - t) * a + t * b)
        .collect()
}

/// Standard normal vector drawn from `rng`.
pub fn standard_normal<T: Scalar>(rng: &mut ChaCha8Rng, n: usize) -> Vec<T> {
    (0..n).map(|_| lit(rng.sample::<f64, _>(StandardNormal))).collect()
}

/// Deterministic ODE sample from noise seeded by `seed`.
pub fn sample_unconditional<T: Scalar>(model: &VelocityModel<T>, steps: usize, seed: u64) -> Result<Vec<T>> {
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = standard_normal(&mut rng, model.dim());
    let grid = time_grid::<T>(steps);
    for k in 0..steps {
        let v = velocity(model, &z, grid[k])?;
        let (z0, z1) = tweedie(&z, &v, grid[k]);
        z = reinterpolate(&z0, &z1, grid[k + 1]);
    }
    Ok(z)
}

/// Conditional flow-matching loss `mean ‖(x₁−x₀) − v(z_t, t)‖²/D` for given
/// draws, and its flat parameter gradient.
pub fn flow_loss_and_grad<T: Scalar>(
    model: &FlowMlp<T>,
    x0: &Array2<T>,
    x1: &Array2<T>,
    t: &[T],
) -> (f64, Vec<T>) {
    let (zt, target) = flow_pair(x0, x1, t);
    let (v, cache) = model.net.forward_cached(&FlowMlp::inputs(&zt, t));
    let diff = &v - &target;
    let n = diff.len() as f64;
    let loss = diff.iter().map(|d| d.as_f64().powi(2)).sum::<f64>() / n;
    let d_out = diff.mapv(|d| lit::<T>(2.0 / n) * d);
    (loss, model.net.backward(&cache, &d_out).0)
}

pub fn flow_loss<T: Scalar>(model: &FlowMlp<T>, x0: &Array2<T>, x1: &Array2<T>, t: &[T]) -> f64 {
    let (zt, target) = flow_pair(x0, x1, t);
    let v = model.net.forward(&FlowMlp::inputs(&zt, t));
    let diff = &v - &target;
    diff.iter().map(|d| d.as_f64().powi(2)).sum::<f64>() / diff.len() as f64
}

fn flow_pair<T: Scalar>(x0: &Array2<T>, x1: &Array2<T>, t: &[T]) -> (Array2<T>, Array2<T>) {
    let mut zt = x0.clone();
    for (i, mut row) in zt.axis_iter_mut(Axis(0)).enumerate() {
        let ti = t[i];
        row.zip_mut_with(&x1.row(i), |a, &b| *a = (T::one() - ti) * *a + ti * b);
    }
    (zt, x1 - x0)
}

#[derive(Clone, Debug)]
pub struct FlowTraining<T> {
    pub model: FlowMlp<T>,
    pub epoch_losses: Vec<f64>,
}

/// Trains a velocity network by conditional flow matching with uniform `t`
/// and standard normal `x₁` redrawn every batch.
pub fn train_flow<T: Scalar>(
    dataset: &[Vec<T>],
    hidden: usize,
    config: &TrainingConfig,
) -> Result<FlowTraining<T>> {
    config.validate()?;
    let dim = dataset
        .first()
        .ok_or_else(|| Error::InvalidArgument("flow training set is empty".into()))?
        .len();
    if dim == 0 || dataset.iter().any(|s| s.len() != dim) {
        return Err(Error::Shape("flow samples must share a nonzero length".into()));
    }
    let mut model = FlowMlp::<T>::init(dim, hidden, config.seed);
    let mut params = model.net.flatten();
    let mut opt = AdamW::<T>::new(params.len(), config.learning_rate, config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xf10e_5eed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let b = chunk.len();
            let x0 = Array2::from_shape_fn((b, dim), |(i, j)| dataset[chunk[i]][j]);
            let x1 = Array2::from_shape_vec((b, dim), standard_normal(&mut rng, b * dim)).expect("shape");
            let t: Vec<T> = (0..b).map(|_| lit(rng.random::<f64>())).collect();
            let (loss, grad) = flow_loss_and_grad(&model, &x0, &x1, &t);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    last_finite_loss: epoch_losses.last().copied(),
                });
            }
            total += loss * b as f64;
            opt.update(&mut params, &grad);
            model.net.load_flat(&params)?;
        }
        epoch_losses.push(total / dataset.len() as f64);
        log::debug!("flow epoch {epoch}: loss {:.6}", epoch_losses[epoch]);
    }
    model.epochs = config.epochs;
    model.final_loss = epoch_losses.last().copied();
    Ok(FlowTraining { model, epoch_losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::relative_error;

    #[test]
    fn tweedie_identities() {
        let z = [0.3f64, -1.2, 2.0];
        let v = [1.0, 0.5, -0.25];
        let (a, _) = tweedie(&z, &v, 0.0);
        assert_eq!(a, z);
        let (_, b) = tweedie(&z, &v, 1.0);
        assert_eq!(b, z);
        let t = 0.37f64;
        let (z0, z1) = tweedie(&z, &v, t);
        for i in 0..3 {
            assert!(((1.0 - t) * z0[i] + t * z1[i] - z[i]).abs() < 1e-15);
        }
        let (a, b) = ([1.0, 2.0], [-0.5, 4.0]);
        let zt: Vec<f64> = reinterpolate(&a, &b, 0.25);
        let vel = [b[0] - a[0], b[1] - a[1]];
        let (e0, e1) = tweedie(&zt, &vel, 0.25);
        assert_eq!(e0, a);
        assert_eq!(e1, b);
    }

    #[test]
    fn analytic_velocity_special_cases() {
        let g = GaussianPrior::<f64>::new(vec![0.7, -0.2], vec![2.0, 0.3]).unwrap();
        let z = [1.5, -0.4];
        let v = g.velocity(&z, 1.0);
        assert!((v[0] - (1.5 - 0.7)).abs() < 1e-15);
        assert!((v[1] - (-0.4 + 0.2)).abs() < 1e-15);
        let g = GaussianPrior::new(vec![0.0], vec![1.0]).unwrap();
        for t in [0.1, 0.5, 0.8] {
            let s: f64 = (1.0 - t) * (1.0 - t) + t * t;
            let v = g.velocity(&[0.9], t)[0];
            assert!((v - 0.9 * (t - (1.0 - t)) / s).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_mlp_has_zero_velocity() {
        let m = VelocityModel::Mlp(FlowMlp::<f64>::zeros(4, 8));
        for t in [0.0, 0.5, 1.0] {
            assert!(velocity(&m, &[1.0, -2.0, 3.0, 0.5], t).unwrap().iter().all(|&v| v == 0.0));
        }
        assert!(velocity(&m, &[0.0; 4], 1.5).is_err());
        assert!(velocity(&m, &[0.0; 3], 0.5).is_err());
    }

    #[test]
    fn single_step_collapses_to_first_estimate() {
        let g = VelocityModel::GaussianAnalytic(GaussianPrior::new(vec![0.5; 3], vec![0.2; 3]).unwrap());
        let out = sample_unconditional(&g, 1, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z: Vec<f64> = standard_normal(&mut rng, 3);
        let v = velocity(&g, &z, 1.0).unwrap();
        assert_eq!(out, tweedie(&z, &v, 1.0).0);
        assert_eq!(out, sample_unconditional(&g, 1, 9).unwrap());
        assert!(sample_unconditional(&g, 0, 9).is_err());
    }

    #[test]
    fn flow_gradient_matches_differences() {
        let model = FlowMlp::<f64>::init(3, 6, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x0 = Array2::from_shape_fn((5, 3), |_| rng.random::<f64>());
        let x1 = Array2::from_shape_vec((5, 3), standard_normal(&mut rng, 15)).unwrap();
        let t: Vec<f64> = (0..5).map(|_| rng.random()).collect();
        let (_, g) = flow_loss_and_grad(&model, &x0, &x1, &t);
        let base = model.net.flatten();
        for i in (0..base.len()).step_by(5) {
            let eval = |d: f64| {
                let mut m = model.clone();
                let mut p = base.clone();
                p[i] += d;
                m.net.load_flat(&p).unwrap();
                flow_loss(&m, &x0, &x1, &t)
            };
            let fd = (eval(1e-6) - eval(-1e-6)) / 2e-6;
            assert!(relative_error(fd, g[i], 1e-7) < 1e-4, "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn fit_recovers_moments() {
        let s = vec![vec![1.0, 2.0], vec![3.0, 2.0]];
        let g = GaussianPrior::<f64>::fit(&s).unwrap();
        assert_eq!(g.mean, vec![2.0, 2.0]);
        assert_eq!(g.var, vec![1.0, VARIANCE_FLOOR]);
    }
}
