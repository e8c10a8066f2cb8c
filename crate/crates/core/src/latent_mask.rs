//! Continuous latent masks: training-free projection, the learned mask
//! encoder, and the binary downsampling baseline.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{encode, infill, latent_to_rows, rows_to_latent, CodecSpec};
use crate::error::{Error, Result};
use crate::nn::{tree_sum, Activation, AdamW, Mlp, TrainingConfig};
use crate::scalar::{lit, Scalar};
use crate::tensor::{Latent, LatentDims, LatentMask, PixelMask, Video};

pub use crate::metrics::ssim;

/// Magnitudes at or below this are treated as zero when picking the scale.
pub const DIFF_ZERO: f64 = 1e-12;
pub const TAU_FLOOR: f64 = 1e-8;
pub const TAU_PERCENTILE: f64 = 0.95;
/// Hidden width of the mask encoder.
pub const MASK_ENCODER_HIDDEN: usize = 128;
/// Weight of the SSIM term in the mask loss.
pub const DEFAULT_LAMBDA: f64 = 0.2;

/// Shape of `f` in `h = f(d)`; every variant maps 0 to 1 and decreases in `|d|`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskActivation {
    /// `exp(−|d|/τ)`.
    #[default]
    Exponential,
    /// `exp(−(d/τ)²)`.
    Gaussian,
    /// `1 / (1 + |d|/τ)`.
    Rational,
}

impl MaskActivation {
    fn apply(self, r: f64) -> f64 {
        match self {
            MaskActivation::Exponential => (-r).exp(),
            MaskActivation::Gaussian => (-r * r).exp(),
            MaskActivation::Rational => 1.0 / (1.0 + r),
        }
    }
}

/// Nearest-rank 95th percentile of `|d|` over entries above [`DIFF_ZERO`],
/// floored at [`TAU_FLOOR`].
pub fn diff_scale<T: Scalar>(d: &[T]) -> f64 {
    let mut mags: Vec<f64> = d
        .iter()
        .map(|v| v.as_f64().abs())
        .filter(|&a| a > DIFF_ZERO)
        .collect();
    if mags.is_empty() {
        return TAU_FLOOR;
    }
    mags.sort_by(f64::total_cmp);
    let rank = ((TAU_PERCENTILE * mags.len() as f64).ceil() as usize).clamp(1, mags.len());
    mags[rank - 1].max(TAU_FLOOR)
}

/// `h = exp(−|d|/τ)` with the robust scale of [`diff_scale`].
pub fn normalize_diff<T: Scalar>(d: &Latent<T>) -> Result<LatentMask<T>> {
    normalize_diff_with(d, MaskActivation::Exponential)
}

pub fn normalize_diff_with<T: Scalar>(d: &Latent<T>, act: MaskActivation) -> Result<LatentMask<T>> {
    if !d.is_finite() {
        return Err(Error::InvalidArgument("latent difference is not finite".into()));
    }
    let tau = diff_scale(d.data());
    normalize_diff_with_scale(d, tau, act)
}

/// [`normalize_diff_with`] at a caller-chosen scale.
pub fn normalize_diff_with_scale<T: Scalar>(
    d: &Latent<T>,
    tau: f64,
    act: MaskActivation,
) -> Result<LatentMask<T>> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("mask scale {tau} must be positive")));
    }
    let data = d
        .data()
        .iter()
        .map(|v| lit::<T>(act.apply(v.as_f64().abs() / tau)))
        .collect();
    LatentMask::new(Latent::from_vec(d.dims(), data)?)
}

/// `h = f(E(x_src) − E(infill(m ⊙ x_src)))`.
pub fn latent_mask_training_free<T: Scalar>(
    x_src: &Video<T>,
    m: &PixelMask,
    spec: &CodecSpec<T>,
) -> Result<LatentMask<T>> {
    latent_mask_training_free_with(x_src, m, spec, MaskActivation::Exponential)
}

pub fn latent_mask_training_free_with<T: Scalar>(
    x_src: &Video<T>,
    m: &PixelMask,
    spec: &CodecSpec<T>,
    act: MaskActivation,
) -> Result<LatentMask<T>> {
    let full = encode(spec, x_src)?;
    let masked = encode(spec, &infill(&x_src.masked(m)?, m)?)?;
    normalize_diff_with(&full.sub(&masked)?, act)
}

/// Binary baseline: spatial nearest-neighbor reduction by `rs` (the top-left
/// pixel of each block), logical AND over each group of `rt` frames, same
/// value in every channel.
pub fn binary_downsample_mask<T: Scalar>(m: &PixelMask, spec: &CodecSpec<T>) -> Result<LatentMask<T>> {
    let (f, h, w) = m.dims();
    let dims = spec.latent_dims(f, h, w)?;
    let mut out = Latent::zeros(dims);
    for lt in 0..dims.frames {
        for ly in 0..dims.height {
            for lx in 0..dims.width {
                let visible = (0..spec.rt).all(|dt| m.get(lt * spec.rt + dt, ly * spec.rs, lx * spec.rs));
                if visible {
                    for c in 0..dims.channels {
                        out.set(c, lt, ly, lx, T::one());
                    }
                }
            }
        }
    }
    LatentMask::new(out)
}

/// Learned mask predictor `P_φ`: one small network applied to every latent
/// cell's aligned pixel patch of `(y, m)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskEncoder<T> {
    pub net: Mlp<T>,
    pub rt: usize,
    pub rs: usize,
    pub channels: usize,
    pub lambda: f64,
    pub seed: u64,
    pub epochs: usize,
}

impl<T: Scalar> MaskEncoder<T> {
    pub fn feature_dim(rt: usize, rs: usize) -> usize {
        rt * rs * rs * 4
    }

    pub fn init(rt: usize, rs: usize, channels: usize, seed: u64) -> Self {
        Self {
            net: Mlp::init(
                &[Self::feature_dim(rt, rs), MASK_ENCODER_HIDDEN, channels],
                Activation::Relu,
                Activation::Sigmoid,
                seed,
            ),
            rt,
            rs,
            channels,
            lambda: DEFAULT_LAMBDA,
            seed,
            epochs: 0,
        }
    }

    pub fn zeros(rt: usize, rs: usize, channels: usize) -> Self {
        Self {
            net: Mlp::zeros(
                &[Self::feature_dim(rt, rs), MASK_ENCODER_HIDDEN, channels],
                Activation::Relu,
                Activation::Sigmoid,
            ),
            rt,
            rs,
            channels,
            lambda: DEFAULT_LAMBDA,
            seed: 0,
            epochs: 0,
        }
    }

    /// Training schedule used when none is given.
    pub fn default_training() -> TrainingConfig {
        TrainingConfig {
            epochs: 30,
            batch_size: 4,
            learning_rate: 1e-4,
            weight_decay: 3e-2,
            seed: 0,
        }
    }

    fn latent_dims(&self, dims: (usize, usize, usize)) -> Result<LatentDims> {
        let (f, h, w) = dims;
        if self.rt == 0 || self.rs == 0 || f % self.rt != 0 || h % self.rs != 0 || w % self.rs != 0 {
            return Err(Error::Shape(format!(
                "video {f}x{h}x{w} not divisible by mask encoder factors (rt={}, rs={})",
                self.rt, self.rs
            )));
        }
        Ok(LatentDims {
            channels: self.channels,
            frames: f / self.rt,
            height: h / self.rs,
            width: w / self.rs,
        })
    }
}

/// Per-cell feature rows, `[dt][dy][dx][r, g, b, m]`.
pub fn mask_features<T: Scalar>(y: &Video<T>, m: &PixelMask, rt: usize, rs: usize) -> Result<Array2<T>> {
    m.check_dims(y.dims())?;
    let (f, h, w) = y.dims();
    let (lf, lh, lw) = (f / rt, h / rs, w / rs);
    let mut out = Array2::zeros((lf * lh * lw, rt * rs * rs * 4));
    for tf in 0..lf {
        for ty in 0..lh {
            for tx in 0..lw {
                let row = (tf * lh + ty) * lw + tx;
                let mut i = 0;
                for dt in 0..rt {
                    for dy in 0..rs {
                        for dx in 0..rs {
                            let (t, py, px) = (tf * rt + dt, ty * rs + dy, tx * rs + dx);
                            for c in 0..3 {
                                out[[row, i + c]] = y.get(t, py, px, c);
                            }
                            out[[row, i + 3]] = if m.get(t, py, px) { T::one() } else { T::zero() };
                            i += 4;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// `P_φ(y, m)`.
pub fn mask_encoder_forward<T: Scalar>(
    enc: &MaskEncoder<T>,
    y: &Video<T>,
    m: &PixelMask,
) -> Result<LatentMask<T>> {
    if !enc.net.is_finite() {
        return Err(Error::NonFiniteParameters("mask encoder"));
    }
    let dims = enc.latent_dims(y.dims())?;
    let feats = mask_features(y, m, enc.rt, enc.rs)?;
    let rows = enc.net.forward(&feats);
    LatentMask::new(rows_to_latent(&rows, dims))
}

/// One supervised example: measurement, its mask, and the target latent mask.
#[derive(Clone, Debug)]
pub struct MaskPair<T> {
    pub y: Video<T>,
    pub m: PixelMask,
    pub h: LatentMask<T>,
}

/// `mean|P − h| + λ(1 − SSIM(P, h))` on one pair and its flat parameter gradient.
pub fn mask_loss_and_grad<T: Scalar>(
    enc: &MaskEncoder<T>,
    pair: &MaskPair<T>,
    lambda: f64,
) -> Result<(f64, Vec<T>)> {
    let dims = enc.latent_dims(pair.y.dims())?;
    if dims != pair.h.dims() {
        return Err(Error::Shape("target mask dims differ from encoder output".into()));
    }
    let feats = mask_features(&pair.y, &pair.m, enc.rt, enc.rs)?;
    let (rows, cache) = enc.net.forward_cached(&feats);
    let pred = rows_to_latent(&rows, dims);
    let n = dims.len();
    let planes = dims.channels * dims.frames;

    let mut l1 = 0.0;
    let mut grad = vec![T::zero(); n];
    let inv_n = T::one() / lit::<T>(n as f64);
    for ((g, &p), &h) in grad.iter_mut().zip(pred.data()).zip(pair.h.values()) {
        let d = p - h;
        l1 += d.as_f64().abs();
        *g = d.signum() * inv_n;
        if d == T::zero() {
            *g = T::zero();
        }
    }
    l1 /= n as f64;

    let mut loss = l1;
    if lambda != 0.0 {
        let (s, ds) = crate::metrics::ssim_planes(
            pred.data(),
            pair.h.values(),
            planes,
            dims.height,
            dims.width,
            T::one(),
            true,
        )?;
        loss += lambda * (1.0 - s.as_f64());
        let lam = lit::<T>(lambda);
        for (g, d) in grad.iter_mut().zip(ds) {
            *g -= lam * d;
        }
    }
    let d_rows = latent_to_rows(&Latent::from_vec(dims, grad)?);
    let (g, _) = enc.net.backward(&cache, &d_rows);
    Ok((loss, g))
}

pub fn mask_loss<T: Scalar>(enc: &MaskEncoder<T>, pair: &MaskPair<T>, lambda: f64) -> Result<f64> {
    let pred = mask_encoder_forward(enc, &pair.y, &pair.m)?;
    let n = pred.values().len() as f64;
    let l1: f64 = pred
        .values()
        .iter()
        .zip(pair.h.values())
        .map(|(&p, &h)| (p - h).as_f64().abs())
        .sum::<f64>()
        / n;
    if lambda == 0.0 {
        return Ok(l1);
    }
    let s: f64 = ssim(pred.as_latent(), pair.h.as_latent())?.as_f64();
    Ok(l1 + lambda * (1.0 - s))
}

#[derive(Clone, Debug)]
pub struct MaskEncoderTraining<T> {
    pub encoder: MaskEncoder<T>,
    pub epoch_losses: Vec<f64>,
}

/// Minimizes the mask loss with AdamW over shuffled mini-batches of pairs.
pub fn train_mask_encoder<T: Scalar>(
    pairs: &[MaskPair<T>],
    rt: usize,
    rs: usize,
    lambda: f64,
    config: &TrainingConfig,
) -> Result<MaskEncoderTraining<T>> {
    config.validate()?;
    let first = pairs
        .first()
        .ok_or_else(|| Error::InvalidArgument("mask training set is empty".into()))?;
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument("lambda must be nonnegative".into()));
    }
    let channels = first.h.dims().channels;
    let mut enc = MaskEncoder::<T>::init(rt, rs, channels, config.seed);
    enc.lambda = lambda;
    let mut params = enc.net.flatten();
    let mut opt = AdamW::<T>::new(params.len(), config.learning_rate, config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x3a5c_e11d);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let mut parts = Vec::with_capacity(chunk.len());
            let mut batch_loss = 0.0;
            for &i in chunk {
                let (l, g) = mask_loss_and_grad(&enc, &pairs[i], lambda)?;
                batch_loss += l;
                parts.push(g);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    last_finite_loss: epoch_losses.last().copied(),
                });
            }
            total += batch_loss;
            let scale = lit::<T>(1.0 / chunk.len() as f64);
            let grad: Vec<T> = tree_sum(parts).into_iter().map(|g| g * scale).collect();
            opt.update(&mut params, &grad);
            enc.net.load_flat(&params)?;
        }
        epoch_losses.push(total / pairs.len() as f64);
        log::debug!("mask encoder epoch {epoch}: loss {:.6}", epoch_losses[epoch]);
    }
    enc.epochs = config.epochs;
    Ok(MaskEncoderTraining {
        encoder: enc,
        epoch_losses,
    })
}

/// Mean absolute difference between two masks of equal dims.
pub fn mask_l1<T: Scalar>(a: &LatentMask<T>, b: &LatentMask<T>) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::Shape("mask dims differ".into()));
    }
    let n = a.values().len() as f64;
    Ok(a.values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| (x - y).as_f64().abs())
        .sum::<f64>()
        / n)
}
