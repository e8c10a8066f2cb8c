//! Toy spatiotemporal autoencoders standing in for a 3D video VAE.
//!
//! Both codecs are patchwise: every latent cell `(t, y, x)` sees exactly the
//! `rt × rs × rs × 3` pixel block it covers. Patch vectors are laid out as
//! `[dt][dy][dx][color]`.

use std::collections::VecDeque;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Activation, AdamW, Mlp, TrainingConfig};
use crate::scalar::{lit, Scalar};
use crate::tensor::{Latent, LatentDims, PixelMask, Video};

/// Hidden width of the nonlinear codec.
pub const MLP_CODEC_HIDDEN: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub enum CodecKind<T> {
    /// Orthonormal analysis basis, `channels × patch_dim` row-major.
    LinearDct { basis: Array2<T> },
    NonlinearMlp(MlpCodec<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpCodec<T> {
    pub encoder: Mlp<T>,
    pub decoder: Mlp<T>,
    pub seed: u64,
    pub epochs: usize,
    pub final_loss: Option<f64>,
}

impl<T: Scalar> MlpCodec<T> {
    pub fn init(patch_dim: usize, channels: usize, seed: u64) -> Self {
        Self {
            encoder: Mlp::init(
                &[patch_dim, MLP_CODEC_HIDDEN, channels],
                Activation::Tanh,
                Activation::Identity,
                seed,
            ),
            decoder: Mlp::init(
                &[channels, MLP_CODEC_HIDDEN, patch_dim],
                Activation::Tanh,
                Activation::Identity,
                seed.wrapping_add(1),
            ),
            seed,
            epochs: 0,
            final_loss: None,
        }
    }

    pub fn flatten(&self) -> Vec<T> {
        let mut v = self.encoder.flatten();
        v.extend(self.decoder.flatten());
        v
    }

    pub fn load_flat(&mut self, flat: &[T]) -> Result<()> {
        let n = self.encoder.param_count();
        if flat.len() != n + self.decoder.param_count() {
            return Err(Error::Shape("codec parameter count mismatch".into()));
        }
        self.encoder.load_flat(&flat[..n])?;
        self.decoder.load_flat(&flat[n..])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CodecSpec<T> {
    pub kind: CodecKind<T>,
    /// Temporal compression factor.
    pub rt: usize,
    /// Spatial compression factor.
    pub rs: usize,
    pub channels: usize,
}

impl<T: Scalar> CodecSpec<T> {
    pub fn patch_dim(&self) -> usize {
        self.rt * self.rs * self.rs * 3
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            CodecKind::LinearDct { .. } => "linear_dct",
            CodecKind::NonlinearMlp(_) => "nonlinear_mlp",
        }
    }

    pub fn latent_dims(&self, frames: usize, height: usize, width: usize) -> Result<LatentDims> {
        if frames % self.rt != 0 || height % self.rs != 0 || width % self.rs != 0 {
            return Err(Error::Shape(format!(
                "video {frames}x{height}x{width} not divisible by factors (rt={}, rs={})",
                self.rt, self.rs
            )));
        }
        Ok(LatentDims {
            channels: self.channels,
            frames: frames / self.rt,
            height: height / self.rs,
            width: width / self.rs,
        })
    }

    /// Max entry of `|B Bᵀ − I|` for the linear basis; `None` for learned codecs.
    pub fn gram_error(&self) -> Option<f64> {
        match &self.kind {
            CodecKind::LinearDct { basis } => {
                let g = basis.dot(&basis.t());
                let mut worst = 0.0f64;
                for ((i, j), v) in g.indexed_iter() {
                    let target = if i == j { 1.0 } else { 0.0 };
                    worst = worst.max((v.as_f64() - target).abs());
                }
                Some(worst)
            }
            CodecKind::NonlinearMlp(_) => None,
        }
    }
}

fn dct_basis_1d(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|k| {
            let alpha = if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            };
            (0..n)
                .map(|i| {
                    alpha
                        * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64)
                            .cos()
                })
                .collect()
        })
        .collect()
}

/// Orthonormal patch codec spanned by the lowest-frequency separable 3D DCT
/// modes, each replicated once per color channel. Modes are ordered by total
/// frequency `kt + ky + kx`, ties broken lexicographically on `(kt, ky, kx)`.
pub fn make_linear_codec<T: Scalar>(rt: usize, rs: usize, channels: usize) -> Result<CodecSpec<T>> {
    if rt == 0 || rs == 0 || channels == 0 {
        return Err(Error::InvalidArgument("codec factors and channels must be positive".into()));
    }
    let patch_dim = rt * rs * rs * 3;
    if channels > patch_dim {
        return Err(Error::InvalidArgument(format!(
            "{channels} latent channels exceed patch dimensionality {patch_dim}"
        )));
    }
    let mut modes: Vec<(usize, usize, usize)> = (0..rt)
        .flat_map(|kt| (0..rs).flat_map(move |ky| (0..rs).map(move |kx| (kt, ky, kx))))
        .collect();
    modes.sort_by_key(|&(kt, ky, kx)| (kt + ky + kx, kt, ky, kx));
    let (bt, bs) = (dct_basis_1d(rt), dct_basis_1d(rs));

    let mut basis = Array2::<T>::zeros((channels, patch_dim));
    for c in 0..channels {
        let (kt, ky, kx) = modes[c / 3];
        let color = c % 3;
        for dt in 0..rt {
            for dy in 0..rs {
                for dx in 0..rs {
                    let idx = ((dt * rs + dy) * rs + dx) * 3 + color;
                    basis[[c, idx]] = lit(bt[kt][dt] * bs[ky][dy] * bs[kx][dx]);
                }
            }
        }
    }
    Ok(CodecSpec {
        kind: CodecKind::LinearDct { basis },
        rt,
        rs,
        channels,
    })
}

/// Rows are latent cells in `(t, y, x)` raster order, columns patch entries.
pub fn video_to_patches<T: Scalar>(x: &Video<T>, rt: usize, rs: usize) -> Array2<T> {
    let (f, h, w) = x.dims();
    let (lf, lh, lw) = (f / rt, h / rs, w / rs);
    let pd = rt * rs * rs * 3;
    let mut out = Array2::zeros((lf * lh * lw, pd));
    for tf in 0..lf {
        for ty in 0..lh {
            for tx in 0..lw {
                let row = (tf * lh + ty) * lw + tx;
                let mut i = 0;
                for dt in 0..rt {
                    for dy in 0..rs {
                        let start = x.index(tf * rt + dt, ty * rs + dy, tx * rs, 0);
                        for v in &x.data()[start..start + rs * 3] {
                            out[[row, i]] = *v;
                            i += 1;
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn patches_to_video<T: Scalar>(
    patches: &Array2<T>,
    dims: LatentDims,
    rt: usize,
    rs: usize,
) -> Video<T> {
    let (lf, lh, lw) = (dims.frames, dims.height, dims.width);
    let mut x = Video::zeros(lf * rt, lh * rs, lw * rs);
    for tf in 0..lf {
        for ty in 0..lh {
            for tx in 0..lw {
                let row = (tf * lh + ty) * lw + tx;
                let mut i = 0;
                for dt in 0..rt {
                    for dy in 0..rs {
                        let start = x.index(tf * rt + dt, ty * rs + dy, tx * rs, 0);
                        for v in &mut x.data_mut()[start..start + rs * 3] {
                            *v = patches[[row, i]];
                            i += 1;
                        }
                    }
                }
            }
        }
    }
    x
}

/// Latent as a `cells × channels` matrix.
pub fn latent_to_rows<T: Scalar>(z: &Latent<T>) -> Array2<T> {
    let d = z.dims();
    let cells = d.cells();
    Array2::from_shape_fn((cells, d.channels), |(cell, c)| z.data()[c * cells + cell])
}

pub fn rows_to_latent<T: Scalar>(rows: &Array2<T>, dims: LatentDims) -> Latent<T> {
    let cells = dims.cells();
    let mut data = vec![T::zero(); dims.len()];
    for ((cell, c), v) in rows.indexed_iter() {
        data[c * cells + cell] = *v;
    }
    Latent::from_vec(dims, data).expect("dims consistent")
}

/// `E(x)`.
pub fn encode<T: Scalar>(spec: &CodecSpec<T>, x: &Video<T>) -> Result<Latent<T>> {
    let (f, h, w) = x.dims();
    let dims = spec.latent_dims(f, h, w)?;
    let patches = video_to_patches(x, spec.rt, spec.rs);
    let rows = match &spec.kind {
        CodecKind::LinearDct { basis } => patches.dot(&basis.t()),
        CodecKind::NonlinearMlp(net) => net.encoder.forward(&patches),
    };
    Ok(rows_to_latent(&rows, dims))
}

/// `D(z)`.
pub fn decode<T: Scalar>(spec: &CodecSpec<T>, z: &Latent<T>) -> Result<Video<T>> {
    let dims = z.dims();
    if dims.channels != spec.channels {
        return Err(Error::Shape(format!(
            "latent has {} channels, codec expects {}",
            dims.channels, spec.channels
        )));
    }
    let rows = latent_to_rows(z);
    let patches = match &spec.kind {
        CodecKind::LinearDct { basis } => rows.dot(basis),
        CodecKind::NonlinearMlp(net) => net.decoder.forward(&rows),
    };
    Ok(patches_to_video(&patches, dims, spec.rt, spec.rs))
}

/// Mean squared reconstruction error over `patches` and its gradient with
/// respect to the flat codec parameters (encoder first, then decoder).
pub fn codec_loss_and_grad<T: Scalar>(net: &MlpCodec<T>, patches: &Array2<T>) -> (f64, Vec<T>) {
    let (z, enc_cache) = net.encoder.forward_cached(patches);
    let (recon, dec_cache) = net.decoder.forward_cached(&z);
    let diff = &recon - patches;
    let n = lit::<T>(diff.len() as f64);
    let loss = diff.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>() / diff.len() as f64;
    let d_out = diff.mapv(|v| lit::<T>(2.0) * v / n);
    let (g_dec, dz) = net.decoder.backward(&dec_cache, &d_out);
    let (mut g, _) = net.encoder.backward(&enc_cache, &dz);
    g.extend(g_dec);
    (loss, g)
}

pub fn codec_loss<T: Scalar>(net: &MlpCodec<T>, patches: &Array2<T>) -> f64 {
    let recon = net.decoder.forward(&net.encoder.forward(patches));
    let diff = &recon - patches;
    diff.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>() / diff.len() as f64
}

#[derive(Clone, Debug)]
pub struct CodecTraining<T> {
    pub spec: CodecSpec<T>,
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains the nonlinear patch codec by mean-squared reconstruction.
pub fn train_codec<T: Scalar>(
    dataset: &[Video<T>],
    rt: usize,
    rs: usize,
    channels: usize,
    config: &TrainingConfig,
) -> Result<CodecTraining<T>> {
    config.validate()?;
    let first = dataset
        .first()
        .ok_or_else(|| Error::InvalidArgument("codec training set is empty".into()))?;
    if rt == 0 || rs == 0 || channels == 0 {
        return Err(Error::InvalidArgument("codec factors and channels must be positive".into()));
    }
    let patch_dim = rt * rs * rs * 3;
    let mut net = MlpCodec::<T>::init(patch_dim, channels, config.seed);
    let probe: CodecSpec<T> = CodecSpec {
        kind: CodecKind::LinearDct {
            basis: Array2::zeros((0, patch_dim)),
        },
        rt,
        rs,
        channels,
    };
    let (f, h, w) = first.dims();
    probe.latent_dims(f, h, w)?;

    let mut rows: Vec<Vec<T>> = Vec::new();
    for x in dataset {
        let (f, h, w) = x.dims();
        probe.latent_dims(f, h, w)?;
        let p = video_to_patches(x, rt, rs);
        rows.extend(p.outer_iter().map(|r| r.to_vec()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_c0de);
    let mut opt = AdamW::<T>::new(net.flatten().len(), config.learning_rate, config.weight_decay);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut params = net.flatten();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = Array2::from_shape_fn((chunk.len(), patch_dim), |(i, j)| rows[chunk[i]][j]);
            let (loss, grad) = codec_loss_and_grad(&net, &batch);
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    last_finite_loss: epoch_losses.last().copied(),
                });
            }
            total += loss * chunk.len() as f64;
            opt.update(&mut params, &grad);
            net.load_flat(&params)?;
        }
        epoch_losses.push(total / rows.len() as f64);
    }
    net.epochs = config.epochs;
    net.final_loss = epoch_losses.last().copied();
    Ok(CodecTraining {
        spec: CodecSpec {
            kind: CodecKind::NonlinearMlp(net),
            rt,
            rs,
            channels,
        },
        epoch_losses,
    })
}

/// Fills holes of `x` with the color of the nearest known pixel in the same
/// frame (breadth-first over the 4-neighborhood). A frame without any known
/// pixel takes the mean known color of the nearest preceding frame that has
/// one, or mid-gray when none precedes it.
pub fn infill<T: Scalar>(x: &Video<T>, m: &PixelMask) -> Result<Video<T>> {
    m.check_dims(x.dims())?;
    let (f, h, w) = x.dims();
    let mut out = x.clone();
    let mut last_mean: Option<[T; 3]> = None;
    for t in 0..f {
        let known: Vec<bool> = (0..h * w).map(|p| m.get(t, p / w, p % w)).collect();
        let n_known = known.iter().filter(|&&b| b).count();
        if n_known == 0 {
            let fill = last_mean.unwrap_or([lit(0.5); 3]);
            for p in out.frame_slice_mut(t).chunks_mut(3) {
                p.copy_from_slice(&fill);
            }
            continue;
        }
        let mut mean = [T::zero(); 3];
        let frame = x.frame_slice(t);
        for p in (0..h * w).filter(|&p| known[p]) {
            for c in 0..3 {
                mean[c] += frame[p * 3 + c];
            }
        }
        for v in &mut mean {
            *v /= lit::<T>(n_known as f64);
        }
        last_mean = Some(mean);
        if n_known == h * w {
            continue;
        }

        let mut origin: Vec<Option<usize>> = (0..h * w).map(|p| known[p].then_some(p)).collect();
        let mut queue: VecDeque<usize> = (0..h * w).filter(|&p| known[p]).collect();
        while let Some(p) = queue.pop_front() {
            let (px, py) = (p % w, p / w);
            let src = origin[p];
            let mut visit = |q: usize| {
                if origin[q].is_none() {
                    origin[q] = src;
                    queue.push_back(q);
                }
            };
            if px > 0 {
                visit(p - 1);
            }
            if px + 1 < w {
                visit(p + 1);
            }
            if py > 0 {
                visit(p - w);
            }
            if py + 1 < h {
                visit(p + w);
            }
        }
        let dst = out.frame_slice_mut(t);
        for p in (0..h * w).filter(|&p| !known[p]) {
            let s = origin[p].expect("every pixel reachable from a known pixel");
            for c in 0..3 {
                dst[p * 3 + c] = frame[s * 3 + c];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_video(seed: u64, f: usize, h: usize, w: usize) -> Video<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Video::from_fn(f, h, w, |_, _, _, _| rng.random::<f64>())
    }

    #[test]
    fn unit_factors_give_identity_codec() {
        let spec = make_linear_codec::<f64>(1, 1, 3).unwrap();
        let x = random_video(1, 2, 3, 4);
        let z = encode(&spec, &x).unwrap();
        assert_eq!(z.dims(), LatentDims { channels: 3, frames: 2, height: 3, width: 4 });
        for t in 0..2 {
            for y in 0..3 {
                for xx in 0..4 {
                    for c in 0..3 {
                        assert_eq!(z.get(c, t, y, xx), x.get(t, y, xx, c));
                    }
                }
            }
        }
    }

    #[test]
    fn basis_is_orthonormal() {
        for (rt, rs, c) in [(4, 8, 24), (2, 4, 12), (1, 2, 12), (4, 8, 768)] {
            let spec = make_linear_codec::<f64>(rt, rs, c).unwrap();
            assert!(spec.gram_error().unwrap() <= 1e-9, "({rt},{rs},{c})");
        }
    }

    #[test]
    fn too_many_channels_rejected() {
        assert!(make_linear_codec::<f64>(1, 2, 13).is_err());
    }

    #[test]
    fn latent_shape_follows_factors() {
        let spec = make_linear_codec::<f64>(4, 8, 24).unwrap();
        let z = encode(&spec, &Video::zeros(8, 32, 32)).unwrap();
        assert_eq!(
            z.dims(),
            LatentDims { channels: 24, frames: 2, height: 4, width: 4 }
        );
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert!(encode(&spec, &Video::<f64>::zeros(6, 32, 32)).is_err());
    }

    #[test]
    fn encode_decode_identities() {
        let spec = make_linear_codec::<f64>(2, 4, 12).unwrap();
        let dims = spec.latent_dims(4, 8, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = Latent::from_vec(dims, (0..dims.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let z2 = encode(&spec, &decode(&spec, &z).unwrap()).unwrap();
        for (a, b) in z.data().iter().zip(z2.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
        let x = random_video(5, 4, 8, 8);
        let once = decode(&spec, &encode(&spec, &x).unwrap()).unwrap();
        let twice = decode(&spec, &encode(&spec, &once).unwrap()).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
        let zero = decode(&spec, &Latent::zeros(dims)).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_hole_takes_surrounding_color() {
        let c = [0.2, 0.4, 0.6];
        let mut x = Video::from_fn(1, 5, 5, |_, _, _, ch| c[ch]);
        x.set(0, 2, 2, 0, 0.9);
        let mut m = PixelMask::ones(1, 5, 5);
        m.set(0, 2, 2, false);
        let y = infill(&x.masked(&m).unwrap(), &m).unwrap();
        for ch in 0..3 {
            assert_eq!(y.get(0, 2, 2, ch), c[ch]);
        }
        assert_eq!(infill(&x, &PixelMask::ones(1, 5, 5)).unwrap(), x);
    }

    #[test]
    fn fully_masked_frames_fall_back() {
        let x = Video::from_fn(3, 2, 2, |t, y, _, c| (t + y + c) as f64 * 0.1);
        let mut m = PixelMask::ones(3, 2, 2);
        for y in 0..2 {
            for xx in 0..2 {
                m.set(0, y, xx, false);
                m.set(2, y, xx, false);
            }
        }
        let out = infill(&x, &m).unwrap();
        // frame 0 has no preceding frame
        assert!(out.frame_slice(0).iter().all(|&v| v == 0.5));
        // frame 2 takes frame 1's mean color
        for c in 0..3 {
            let mean = (0..2).map(|y| (1 + y + c) as f64 * 0.1).sum::<f64>() / 2.0;
            assert!((out.get(2, 0, 0, c) - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let data = vec![random_video(1, 2, 4, 4)];
        let cfg = TrainingConfig {
            epochs: 0,
            seed: 17,
            ..TrainingConfig::default()
        };
        let trained = train_codec(&data, 2, 2, 6, &cfg).unwrap();
        let init = MlpCodec::<f64>::init(24, 6, 17);
        match trained.spec.kind {
            CodecKind::NonlinearMlp(net) => {
                assert_eq!(net.encoder, init.encoder);
                assert_eq!(net.decoder, init.decoder);
            }
            _ => panic!("expected mlp codec"),
        }
    }
}
