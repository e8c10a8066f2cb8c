//! Backpropagation-free latent inpainting: conjugate gradients, the proximal
//! data-consistency step, and the gated flow sampler.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{decode, encode, infill, CodecSpec};
use crate::error::{Error, Result};
use crate::flow_prior::{reinterpolate, standard_normal, time_grid, tweedie, velocity, VelocityModel, DEFAULT_STEPS};
use crate::latent_mask::{binary_downsample_mask, latent_mask_training_free_with, mask_encoder_forward, MaskActivation, MaskEncoder};
use crate::metrics::TimingSummary;
use crate::scalar::{dot, lit, norm2, Scalar};
use crate::tensor::{Latent, LatentMask, PixelMask, Video};

/// Slack applied when testing `t ≥ 1 − α`, so grid points that land on the
/// boundary up to rounding are included.
pub const GATE_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyBackend {
    #[default]
    Cg,
    ClosedForm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub alpha: f64,
    pub gamma: f64,
    /// CG iterations per consistency step.
    pub cg_iters: usize,
    /// Relative residual at which CG stops early.
    pub cg_tol: f64,
    pub steps: usize,
    pub seed: u64,
    pub backend: ConsistencyBackend,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            gamma: 1.0,
            cg_iters: 5,
            cg_tol: 0.0,
            steps: DEFAULT_STEPS,
            seed: 0,
            backend: ConsistencyBackend::Cg,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!("gamma {} must be positive", self.gamma)));
        }
        if self.cg_iters == 0 {
            return Err(Error::InvalidArgument("cg_iters must be at least 1".into()));
        }
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be at least 1".into()));
        }
        if !(self.cg_tol >= 0.0) {
            return Err(Error::InvalidArgument("cg_tol must be nonnegative".into()));
        }
        Ok(())
    }

    /// Whether consistency fires at time `t`: `α > 0` and `t ≥ 1 − α`.
    pub fn in_gate(&self, t: f64) -> bool {
        self.alpha > 0.0 && t >= 1.0 - self.alpha - GATE_TOLERANCE
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CgOutput<T> {
    pub x: Vec<T>,
    /// `‖r_k‖` for `k = 0..=iterations`.
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

/// Conjugate gradients for SPD `A`, at most `k` iterations, stopping early
/// once `‖r‖ ≤ tol·‖b‖`.
pub fn cg<T: Scalar>(
    mut apply_a: impl FnMut(&[T]) -> Vec<T>,
    b: &[T],
    x0: &[T],
    k: usize,
    tol: f64,
) -> Result<CgOutput<T>> {
    if b.len() != x0.len() {
        return Err(Error::Shape("cg right-hand side and start differ in length".into()));
    }
    let mut x = x0.to_vec();
    let ax = apply_a(&x);
    let mut r: Vec<T> = b.iter().zip(&ax).map(|(&b, &a)| b - a).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let target = tol * norm2(b).as_f64();
    let mut residuals = vec![rr.sqrt().as_f64()];
    let mut iterations = 0;
    for iteration in 0..k {
        if rr == T::zero() || residuals[iteration] <= target {
            break;
        }
        let ap = apply_a(&p);
        let pap = dot(&p, &ap);
        let pp = dot(&p, &p);
        if !(pap > T::epsilon() * pp) {
            return Err(Error::Indefinite {
                iteration,
                curvature: pap.as_f64(),
            });
        }
        let step = rr / pap;
        for i in 0..x.len() {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        let rr_next = dot(&r, &r);
        let beta = rr_next / rr;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_next;
        residuals.push(rr.sqrt().as_f64());
        iterations += 1;
    }
    Ok(CgOutput {
        x,
        residuals,
        iterations,
    })
}

/// Inputs of one proximal step: `min_z (γ/2)‖w − h⊙z‖² + ½‖z − ẑ₀‖²`.
#[derive(Clone, Copy, Debug)]
pub struct ConsistencyProblem<'a, T> {
    pub h: &'a [T],
    pub w: &'a [T],
    pub z0: &'a [T],
}

impl<T: Scalar> ConsistencyProblem<'_, T> {
    fn check(&self) -> Result<()> {
        if self.h.len() != self.w.len() || self.h.len() != self.z0.len() {
            return Err(Error::Shape("consistency operands differ in length".into()));
        }
        Ok(())
    }

    pub fn objective(&self, z: &[T], gamma: f64) -> f64 {
        let mut data = 0.0;
        let mut anchor = 0.0;
        for i in 0..z.len() {
            data += (self.w[i] - self.h[i] * z[i]).as_f64().powi(2);
            anchor += (z[i] - self.z0[i]).as_f64().powi(2);
        }
        0.5 * gamma * data + 0.5 * anchor
    }

    /// `z* = (ẑ₀ + γ h⊙w) / (1 + γ h²)`.
    pub fn closed_form(&self, gamma: f64) -> Result<Vec<T>> {
        self.check()?;
        let g = lit::<T>(gamma);
        Ok((0..self.h.len())
            .map(|i| (self.z0[i] + g * self.h[i] * self.w[i]) / (T::one() + g * self.h[i] * self.h[i]))
            .collect())
    }

    /// CG on `(I + γ diag(h)²) z = ẑ₀ + γ h⊙w`, started at `ẑ₀`.
    pub fn solve_cg(&self, gamma: f64, k: usize, tol: f64) -> Result<CgOutput<T>> {
        self.check()?;
        let g = lit::<T>(gamma);
        let diag: Vec<T> = self.h.iter().map(|&h| T::one() + g * h * h).collect();
        let b: Vec<T> = (0..self.h.len()).map(|i| self.z0[i] + g * self.h[i] * self.w[i]).collect();
        cg(
            |v| v.iter().zip(&diag).map(|(&v, &d)| d * v).collect(),
            &b,
            self.z0,
            k,
            tol,
        )
    }
}

/// Proximal data-consistency step with the configured backend.
pub fn data_consistency<T: Scalar>(p: &ConsistencyProblem<'_, T>, cfg: &SolverConfig) -> Result<Vec<T>> {
    match cfg.backend {
        ConsistencyBackend::Cg => Ok(p.solve_cg(cfg.gamma, cfg.cg_iters, cfg.cg_tol)?.x),
        ConsistencyBackend::ClosedForm => p.closed_form(cfg.gamma),
    }
}

/// `(1 − t_next)·ẑ₀ + t_next·ẑ₁`.
pub fn ode_step<T: Scalar>(z0: &[T], z1: &[T], t_next: T) -> Result<Vec<T>> {
    if !(t_next >= T::zero() && t_next <= T::one()) {
        return Err(Error::InvalidArgument(format!("t_next {t_next} outside [0, 1]")));
    }
    if z0.len() != z1.len() {
        return Err(Error::Shape("ode_step operands differ in length".into()));
    }
    Ok(reinterpolate(z0, z1, t_next))
}

/// Pixel-space prox `(x̂₀ + γ m⊙y) / (1 + γ m)` with binary `m`.
pub fn pixel_prox<T: Scalar>(y: &Video<T>, m: &PixelMask, x0: &Video<T>, gamma: f64) -> Result<Video<T>> {
    y.same_dims(x0)?;
    m.check_dims(y.dims())?;
    let g = lit::<T>(gamma);
    let mut out = x0.clone();
    for (p, &known) in m.values().iter().enumerate() {
        if known {
            for c in 0..3 {
                let i = p * 3 + c;
                out.data_mut()[i] = (x0.data()[i] + g * y.data()[i]) / (T::one() + g);
            }
        }
    }
    Ok(out)
}

/// Wall time of one sampler step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    pub t: f64,
    pub consistent: bool,
    pub velocity_ms: f64,
    /// Full consistency step, codec work included.
    pub consistency_ms: f64,
    /// Encode/decode part of `consistency_ms`.
    pub codec_ms: f64,
}

pub fn summarize(steps: &[StepTiming], total_ms: f64) -> TimingSummary {
    let consistency: Vec<&StepTiming> = steps.iter().filter(|s| s.consistent).collect();
    let consistency_ms: f64 = consistency.iter().map(|s| s.consistency_ms).sum();
    let codec_ms: f64 = consistency.iter().map(|s| s.codec_ms).sum();
    TimingSummary {
        total_ms,
        velocity_ms: steps.iter().map(|s| s.velocity_ms).sum(),
        consistency_ms,
        encode_decode_ms: codec_ms,
        consistency_steps: consistency.len(),
        per_consistency_step_ms: if consistency.is_empty() {
            0.0
        } else {
            consistency_ms / consistency.len() as f64
        },
        encode_decode_share: if consistency_ms > 0.0 { codec_ms / consistency_ms } else { 0.0 },
    }
}

fn ms_since(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Result of a consistency callback: the replacement `ẑ₀` and the part of its
/// wall time spent in the codec.
pub struct Guided<T> {
    pub z0: Vec<T>,
    pub codec_ms: f64,
}

/// Gated sampler loop from `z_init` at `t = 1` down to `t = 0`. At gated
/// times `guide` replaces `ẑ₀`; `ẑ₁` is kept from the velocity evaluation.
pub fn run_sampler<T: Scalar>(
    model: &VelocityModel<T>,
    z_init: Vec<T>,
    cfg: &SolverConfig,
    mut guide: impl FnMut(&[T]) -> Result<Guided<T>>,
) -> Result<(Vec<T>, Vec<StepTiming>)> {
    cfg.validate()?;
    let grid = time_grid::<T>(cfg.steps);
    let mut z = z_init;
    let mut timings = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let t = grid[step];
        let mut timing = StepTiming {
            t: t.as_f64(),
            ..Default::default()
        };
        let start = Instant::now();
        let v = velocity(model, &z, t)?;
        let (mut z0, z1) = tweedie(&z, &v, t);
        timing.velocity_ms = ms_since(start);
        if cfg.in_gate(t.as_f64()) {
            let start = Instant::now();
            let g = guide(&z0)?;
            timing.consistency_ms = ms_since(start);
            timing.codec_ms = g.codec_ms;
            timing.consistent = true;
            z0 = g.z0;
        }
        z = ode_step(&z0, &z1, grid[step + 1])?;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLatent { step });
        }
        timings.push(timing);
    }
    Ok((z, timings))
}

/// Latent-space posterior sampling against explicit `(h, w)`, no codec.
pub fn sample_latent_posterior<T: Scalar>(
    model: &VelocityModel<T>,
    h: &[T],
    w: &[T],
    cfg: &SolverConfig,
) -> Result<(Vec<T>, Vec<StepTiming>)> {
    if h.len() != model.dim() || w.len() != model.dim() {
        return Err(Error::Shape("mask/measurement length differs from model dims".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let z_init = standard_normal(&mut rng, model.dim());
    run_sampler(model, z_init, cfg, |z0| {
        let p = ConsistencyProblem { h, w, z0 };
        Ok(Guided {
            z0: data_consistency(&p, cfg)?,
            codec_ms: 0.0,
        })
    })
}

/// Where the latent mask comes from.
#[derive(Clone, Debug)]
pub enum MaskSource<'a, T> {
    /// Training-free projection from the unwarped source clip.
    TrainingFree { x_src: &'a Video<T>, activation: MaskActivation },
    Encoder(&'a MaskEncoder<T>),
    BinaryBaseline,
    Explicit(LatentMask<T>),
}

impl<T> MaskSource<'_, T> {
    pub fn name(&self) -> &'static str {
        match self {
            MaskSource::TrainingFree { .. } => "training_free",
            MaskSource::Encoder(_) => "encoder",
            MaskSource::BinaryBaseline => "binary_baseline",
            MaskSource::Explicit(_) => "explicit",
        }
    }
}

pub fn resolve_mask<T: Scalar>(
    source: &MaskSource<'_, T>,
    y: &Video<T>,
    m: &PixelMask,
    spec: &CodecSpec<T>,
) -> Result<LatentMask<T>> {
    let (f, hh, ww) = y.dims();
    let dims = spec.latent_dims(f, hh, ww)?;
    let h = match source {
        MaskSource::TrainingFree { x_src, activation } => {
            latent_mask_training_free_with(x_src, m, spec, *activation)?
        }
        MaskSource::Encoder(enc) => mask_encoder_forward(enc, y, m)?,
        MaskSource::BinaryBaseline => binary_downsample_mask(m, spec)?,
        MaskSource::Explicit(h) => h.clone(),
    };
    if h.dims() != dims {
        return Err(Error::Shape(format!("latent mask dims {:?} differ from codec dims {dims:?}", h.dims())));
    }
    Ok(h)
}

#[derive(Clone, Debug)]
pub struct SolveOutcome<T> {
    /// Decoded output clipped to `[0, 1]`.
    pub video: Video<T>,
    /// Terminal latent before decoding.
    pub latent: Latent<T>,
    pub h: LatentMask<T>,
    pub w: Latent<T>,
    pub steps: Vec<StepTiming>,
    pub timing: TimingSummary,
}

fn check_inputs<T: Scalar>(y: &Video<T>, m: &PixelMask, model: &VelocityModel<T>, spec: &CodecSpec<T>) -> Result<Latent<T>> {
    m.check_dims(y.dims())?;
    let w = encode(spec, &infill(y, m)?)?;
    if w.len() != model.dim() {
        return Err(Error::Shape(format!(
            "latent has {} coordinates, prior expects {}",
            w.len(),
            model.dim()
        )));
    }
    Ok(w)
}

fn finish<T: Scalar>(
    spec: &CodecSpec<T>,
    z: Vec<T>,
    h: LatentMask<T>,
    w: Latent<T>,
    steps: Vec<StepTiming>,
    start: Instant,
) -> Result<SolveOutcome<T>> {
    let latent = Latent::from_vec(w.dims(), z)?;
    let video = decode(spec, &latent)?.map(|v| v.max(T::zero()).min(T::one()));
    let timing = summarize(&steps, ms_since(start));
    Ok(SolveOutcome {
        video,
        latent,
        h,
        w,
        steps,
        timing,
    })
}

/// Latent inpainting: `w = E(infill(y))`, mask from `mask_source`, gated
/// proximal consistency on latents, decoded at the end.
pub fn solve_latent_inpaint<T: Scalar>(
    y: &Video<T>,
    m: &PixelMask,
    mask_source: &MaskSource<'_, T>,
    model: &VelocityModel<T>,
    spec: &CodecSpec<T>,
    cfg: &SolverConfig,
) -> Result<SolveOutcome<T>> {
    let start = Instant::now();
    cfg.validate()?;
    let w = check_inputs(y, m, model, spec)?;
    let h = resolve_mask(mask_source, y, m, spec)?;
    let (z, steps) = sample_latent_posterior(model, h.values(), w.data(), cfg)?;
    finish(spec, z, h, w, steps, start)
}

/// Pixel-space DDS baseline: decode `ẑ₀`, apply the pixel prox against
/// `(y, m)`, re-encode.
pub fn solve_pixel_dds<T: Scalar>(
    y: &Video<T>,
    m: &PixelMask,
    model: &VelocityModel<T>,
    spec: &CodecSpec<T>,
    cfg: &SolverConfig,
) -> Result<SolveOutcome<T>> {
    let start = Instant::now();
    cfg.validate()?;
    let w = check_inputs(y, m, model, spec)?;
    let dims = w.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let z_init = standard_normal(&mut rng, model.dim());
    let (z, steps) = run_sampler(model, z_init, cfg, |z0| {
        let t0 = Instant::now();
        let x0 = decode(spec, &Latent::from_vec(dims, z0.to_vec())?)?;
        let mut codec_ms = ms_since(t0);
        let x = pixel_prox(y, m, &x0, cfg.gamma)?;
        let t1 = Instant::now();
        let z = encode(spec, &x)?.into_vec();
        codec_ms += ms_since(t1);
        Ok(Guided { z0: z, codec_ms })
    })?;
    let h = binary_downsample_mask(m, spec)?;
    finish(spec, z, h, w, steps, start)
}
