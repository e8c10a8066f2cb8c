//! Measurement PSNR, SSIM, and evaluation reports.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{write_atomic, Tensor};
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::tensor::{Frame, Latent, LatentMask, PixelMask, Video};

/// Side of the Gaussian SSIM window.
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// PSNR in dB, or an exact match.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Finite(f64),
    ExactMatch,
}

impl Psnr {
    pub fn db(self) -> f64 {
        match self {
            Psnr::Finite(v) => v,
            Psnr::ExactMatch => f64::INFINITY,
        }
    }

    pub fn is_exact(self) -> bool {
        matches!(self, Psnr::ExactMatch)
    }

    fn from_mse(mse: f64) -> Self {
        if mse == 0.0 {
            Psnr::ExactMatch
        } else {
            Psnr::Finite(10.0 * (1.0 / mse).log10())
        }
    }
}

/// PSNR over all pixels and channels, unit dynamic range.
pub fn psnr<T: Scalar>(a: &Video<T>, b: &Video<T>) -> Result<Psnr> {
    a.same_dims(b)?;
    let n = a.data().len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty video".into()));
    }
    let se: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y).as_f64().powi(2))
        .sum();
    Ok(Psnr::from_mse(se / n as f64))
}

/// PSNR restricted to observed pixels (`m = 1`), all color channels.
pub fn masked_psnr<T: Scalar>(a: &Video<T>, b: &Video<T>, m: &PixelMask) -> Result<Psnr> {
    a.same_dims(b)?;
    m.check_dims(a.dims())?;
    let known = m.count_known();
    if known == 0 {
        return Err(Error::InvalidArgument("mask has no observed pixels".into()));
    }
    let mut se = 0.0;
    for (p, _) in m.values().iter().enumerate().filter(|(_, &k)| k) {
        for c in 0..3 {
            se += (a.data()[p * 3 + c] - b.data()[p * 3 + c]).as_f64().powi(2);
        }
    }
    Ok(Psnr::from_mse(se / (3 * known) as f64))
}

/// Anything SSIM can be computed on: a stack of equally sized 2D planes.
pub trait PlaneStack<T> {
    /// `(planes, height, width)`.
    fn plane_dims(&self) -> (usize, usize, usize);
    /// Plane-major values.
    fn planar(&self) -> Vec<T>;
}

impl<T: Scalar> PlaneStack<T> for Video<T> {
    fn plane_dims(&self) -> (usize, usize, usize) {
        (self.frames() * 3, self.height(), self.width())
    }
    fn planar(&self) -> Vec<T> {
        let (f, h, w) = self.dims();
        let mut out = Vec::with_capacity(f * 3 * h * w);
        for t in 0..f {
            for c in 0..3 {
                for y in 0..h {
                    for x in 0..w {
                        out.push(self.get(t, y, x, c));
                    }
                }
            }
        }
        out
    }
}

impl<T: Scalar> PlaneStack<T> for Frame<T> {
    fn plane_dims(&self) -> (usize, usize, usize) {
        (3, self.height, self.width)
    }
    fn planar(&self) -> Vec<T> {
        (0..3)
            .flat_map(|c| self.rgb.iter().skip(c).step_by(3).copied())
            .collect()
    }
}

impl<T: Scalar> PlaneStack<T> for Latent<T> {
    fn plane_dims(&self) -> (usize, usize, usize) {
        let d = self.dims();
        (d.channels * d.frames, d.height, d.width)
    }
    fn planar(&self) -> Vec<T> {
        self.data().to_vec()
    }
}

impl<T: Scalar> PlaneStack<T> for LatentMask<T> {
    fn plane_dims(&self) -> (usize, usize, usize) {
        self.as_latent().plane_dims()
    }
    fn planar(&self) -> Vec<T> {
        self.values().to_vec()
    }
}

/// Mean SSIM with unit dynamic range.
pub fn ssim<T: Scalar, A: PlaneStack<T>>(a: &A, b: &A) -> Result<T> {
    ssim_with_range(a, b, T::one())
}

pub fn ssim_with_range<T: Scalar, A: PlaneStack<T>>(a: &A, b: &A, dynamic_range: T) -> Result<T> {
    let dims = a.plane_dims();
    if dims != b.plane_dims() {
        return Err(Error::Shape(format!(
            "ssim operands {:?} vs {:?}",
            dims,
            b.plane_dims()
        )));
    }
    let (p, h, w) = dims;
    Ok(ssim_planes(&a.planar(), &b.planar(), p, h, w, dynamic_range, false)?.0)
}

fn gaussian_window<T: Scalar>() -> Vec<T> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    let mut out = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for gy in &g {
        for gx in &g {
            out.push(lit::<T>(gy * gx / (s * s)));
        }
    }
    out
}

/// Mean SSIM over planar stacks and, when `with_grad`, its gradient with
/// respect to `a`.
///
/// Planes at least [`SSIM_WINDOW`] on each side use the 11×11 Gaussian window
/// (σ = 1.5) at every fully contained position. Smaller planes fall back to a
/// single window of uniform weights covering the whole plane (global
/// statistics).
pub fn ssim_planes<T: Scalar>(
    a: &[T],
    b: &[T],
    planes: usize,
    height: usize,
    width: usize,
    dynamic_range: T,
    with_grad: bool,
) -> Result<(T, Vec<T>)> {
    let n = planes * height * width;
    if a.len() != n || b.len() != n {
        return Err(Error::Shape("ssim plane buffers do not match dims".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("ssim of an empty stack".into()));
    }
    let c1 = (lit::<T>(SSIM_K1) * dynamic_range).powi(2);
    let c2 = (lit::<T>(SSIM_K2) * dynamic_range).powi(2);
    let windowed = height >= SSIM_WINDOW && width >= SSIM_WINDOW;
    let (wh, ww, weights) = if windowed {
        (SSIM_WINDOW, SSIM_WINDOW, gaussian_window::<T>())
    } else {
        let u = T::one() / lit::<T>((height * width) as f64);
        (height, width, vec![u; height * width])
    };
    let positions = (height - wh + 1) * (width - ww + 1);
    let total = lit::<T>((planes * positions) as f64);
    let two = lit::<T>(2.0);

    let mut sum = T::zero();
    let mut grad = if with_grad { vec![T::zero(); n] } else { Vec::new() };
    for p in 0..planes {
        let base = p * height * width;
        for oy in 0..=height - wh {
            for ox in 0..=width - ww {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) =
                    (T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
                for ky in 0..wh {
                    let row = base + (oy + ky) * width + ox;
                    for kx in 0..ww {
                        let wk = weights[ky * ww + kx];
                        let (va, vb) = (a[row + kx], b[row + kx]);
                        ma += wk * va;
                        mb += wk * vb;
                        saa += wk * va * va;
                        sbb += wk * vb * vb;
                        sab += wk * va * vb;
                    }
                }
                let va = saa - ma * ma;
                let vb = sbb - mb * mb;
                let cov = sab - ma * mb;
                let a1 = two * ma * mb + c1;
                let a2 = two * cov + c2;
                let b1 = ma * ma + mb * mb + c1;
                let b2 = va + vb + c2;
                let s = a1 * a2 / (b1 * b2);
                sum += s;
                if with_grad {
                    let d_mu = two * mb * a2 / (b1 * b2) - s * two * ma / b1;
                    let d_var = -s / b2;
                    let d_cov = two * a1 / (b1 * b2);
                    let d_mu_total = d_mu - d_var * two * ma - d_cov * mb;
                    for ky in 0..wh {
                        let row = base + (oy + ky) * width + ox;
                        for kx in 0..ww {
                            let wk = weights[ky * ww + kx];
                            let i = row + kx;
                            grad[i] += wk * (d_mu_total + d_var * two * a[i] + d_cov * b[i]) / total;
                        }
                    }
                }
            }
        }
    }
    Ok((sum / total, grad))
}

/// Evaluation of one solver run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    pub name: String,
    /// `None` when the output matches the measurement exactly (+∞ dB).
    pub measurement_psnr: Option<f64>,
    pub exact_match: bool,
    pub ssim: f64,
    pub mask_mean: f64,
    pub timing: TimingSummary,
    pub config: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: u32,
    pub entries: Vec<EvalEntry>,
}

/// Wall time per phase, milliseconds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub total_ms: f64,
    pub velocity_ms: f64,
    pub consistency_ms: f64,
    pub encode_decode_ms: f64,
    pub consistency_steps: usize,
    /// Mean wall time of one consistency step.
    pub per_consistency_step_ms: f64,
    /// Fraction of consistency time spent in codec encode/decode.
    pub encode_decode_share: f64,
}

/// One run inside a run directory's `run.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub name: String,
    pub config: serde_json::Value,
    pub mask_source: String,
    pub mask_mean: f64,
    /// Output video, relative to the run directory.
    pub output: String,
    pub measurement: String,
    pub mask: String,
    pub checksums: std::collections::BTreeMap<String, String>,
    pub timing: TimingSummary,
    pub step_ms: Vec<f64>,
    pub terminal_psnr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: u32,
    pub runs: Vec<RunRecord>,
}

impl RunManifest {
    pub const FILE: &'static str = "run.json";

    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(Self::FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        let path = run_dir.join(Self::FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(&path, e))?;
        write_atomic(&path, text.as_bytes())
    }
}

/// Recomputes metrics for every run in `run_dir` and writes `report.json`.
pub fn eval_report(run_dir: &Path) -> Result<EvalReport> {
    let manifest_path = run_dir.join(RunManifest::FILE);
    if !manifest_path.exists() {
        return Err(Error::MissingArtifacts(vec![RunManifest::FILE.to_string()]));
    }
    let manifest = RunManifest::load(run_dir)?;
    let missing: Vec<String> = manifest
        .runs
        .iter()
        .flat_map(|r| [&r.output, &r.measurement, &r.mask])
        .filter(|f| !run_dir.join(f).exists())
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingArtifacts(missing));
    }

    let mut entries = Vec::with_capacity(manifest.runs.len());
    for run in &manifest.runs {
        let out: Video<f64> = Tensor::read(&run_dir.join(&run.output))?.to_video()?;
        let y: Video<f64> = Tensor::read(&run_dir.join(&run.measurement))?.to_video()?;
        let m = Tensor::read(&run_dir.join(&run.mask))?.to_mask()?;
        let p = masked_psnr(&out, &y, &m)?;
        let s: f64 = ssim(&out.masked(&m)?, &y.masked(&m)?)?;
        entries.push(EvalEntry {
            name: run.name.clone(),
            measurement_psnr: (!p.is_exact()).then(|| p.db()),
            exact_match: p.is_exact(),
            ssim: s,
            mask_mean: run.mask_mean,
            timing: run.timing.clone(),
            config: run.config.clone(),
        });
    }
    let report = EvalReport { schema: 1, entries };
    let path = run_dir.join("report.json");
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::json(&path, e))?;
    write_atomic(&path, text.as_bytes())?;
    Ok(report)
}
