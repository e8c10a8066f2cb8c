//! Layered synthetic scenes with exact depth, and on-disk training sets built
//! from them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::CodecSpec;
use crate::container::{sha256_hex, write_atomic, Tensor};
use crate::error::{Error, Result};
use crate::geometry::{double_reproject, make_trajectory, median_depth, CameraIntrinsics, TrajectoryKind};
use crate::latent_mask::latent_mask_training_free;
use crate::scalar::{lit, Scalar};
use crate::tensor::{DepthMap, LatentMask, PixelMask, Video};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Rect { half_width: f64, half_height: f64 },
    Disk { radius: f64 },
}

impl Shape {
    /// Whether pixel center `(x, y)` is covered when the shape sits at `center`.
    pub fn covers(&self, center: [f64; 2], x: f64, y: f64) -> bool {
        let (dx, dy) = (x - center[0], y - center[1]);
        match *self {
            Shape::Rect { half_width, half_height } => dx.abs() <= half_width && dy.abs() <= half_height,
            Shape::Disk { radius } => dx * dx + dy * dy <= radius * radius,
        }
    }

    /// Half extents of the bounding box.
    pub fn extent(&self) -> [f64; 2] {
        match *self {
            Shape::Rect { half_width, half_height } => [half_width, half_height],
            Shape::Disk { radius } => [radius, radius],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub depth: f64,
    pub shape: Shape,
    pub color: [f64; 3],
    /// Center in pixels at frame 0.
    pub start: [f64; 2],
    /// Pixels per frame.
    pub velocity: [f64; 2],
}

impl Layer {
    pub fn center(&self, t: usize) -> [f64; 2] {
        [
            self.start[0] + self.velocity[0] * t as f64,
            self.start[1] + self.velocity[1] * t as f64,
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Texture {
    Flat,
    Gradient,
    Checker,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub texture: Texture,
    pub color: [f64; 3],
    pub color2: [f64; 3],
    /// Checker cell size in pixels.
    pub cell: usize,
    pub depth: f64,
}

impl Background {
    fn color_at(&self, x: usize, y: usize, h: usize, w: usize) -> [f64; 3] {
        match self.texture {
            Texture::Flat => self.color,
            Texture::Gradient => {
                let s = (x + y) as f64 / ((h + w).saturating_sub(2).max(1)) as f64;
                std::array::from_fn(|c| self.color[c] * (1.0 - s) + self.color2[c] * s)
            }
            Texture::Checker => {
                let cell = self.cell.max(1);
                if (x / cell + y / cell) % 2 == 0 {
                    self.color
                } else {
                    self.color2
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub background: Background,
    /// Drawn back to front, so depths must be strictly decreasing.
    pub layers: Vec<Layer>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.background.depth > 0.0) {
            return Err(Error::InvalidArgument("background depth must be positive".into()));
        }
        let mut behind = self.background.depth;
        for (i, l) in self.layers.iter().enumerate() {
            if !(l.depth > 0.0 && l.depth < behind) {
                return Err(Error::InvalidArgument(format!(
                    "layer {i} depth {} must be positive and in front of {behind}",
                    l.depth
                )));
            }
            behind = l.depth;
        }
        Ok(())
    }

    /// Random scene whose shapes stay at least one pixel inside the frame
    /// for all `frames`.
    pub fn random(seed: u64, layers: usize, frames: usize, height: usize, width: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c1: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.05..0.95));
        let c2: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.05..0.95));
        let texture = [Texture::Flat, Texture::Gradient, Texture::Checker][rng.random_range(0..3)];
        let background = Background {
            texture,
            color: c1,
            color2: c2,
            cell: rng.random_range(2..5),
            depth: rng.random_range(6.0..8.0),
        };
        let (h, w) = (height as f64, width as f64);
        let span = frames.saturating_sub(1).max(1) as f64;
        let mut depths: Vec<f64> = (0..layers).map(|_| rng.random_range(2.0..5.5)).collect();
        depths.sort_by(|a, b| b.total_cmp(a));
        for i in 1..depths.len() {
            if depths[i] >= depths[i - 1] {
                depths[i] = depths[i - 1] - 1e-3;
            }
        }
        let layers = depths
            .into_iter()
            .map(|depth| {
                let size = rng.random_range(0.12..0.25) * h.min(w);
                let shape = if rng.random_bool(0.5) {
                    Shape::Disk { radius: size }
                } else {
                    Shape::Rect {
                        half_width: size,
                        half_height: size * rng.random_range(0.6..1.2),
                    }
                };
                let [ex, ey] = shape.extent();
                let (lo_x, hi_x) = (ex + 1.0, w - 2.0 - ex);
                let (lo_y, hi_y) = (ey + 1.0, h - 2.0 - ey);
                let end = [rng.random_range(lo_x..=hi_x.max(lo_x)), rng.random_range(lo_y..=hi_y.max(lo_y))];
                let start = [rng.random_range(lo_x..=hi_x.max(lo_x)), rng.random_range(lo_y..=hi_y.max(lo_y))];
                Layer {
                    depth,
                    shape,
                    color: std::array::from_fn(|_| rng.random_range(0.05..0.95)),
                    start,
                    velocity: [(end[0] - start[0]) / span, (end[1] - start[1]) / span],
                }
            })
            .collect();
        Self {
            seed,
            background,
            layers,
        }
    }
}

/// Rasterizes the scene back to front. Depth records the front-most surface.
pub fn gen_moving_shapes<T: Scalar>(
    spec: &SceneSpec,
    frames: usize,
    height: usize,
    width: usize,
) -> Result<(Video<T>, DepthMap<T>)> {
    if frames == 0 || height == 0 || width == 0 {
        return Err(Error::InvalidArgument(format!("invalid dims {frames}x{height}x{width}")));
    }
    spec.validate()?;
    let mut video = Video::zeros(frames, height, width);
    let mut depth = vec![T::zero(); frames * height * width];
    for t in 0..frames {
        for y in 0..height {
            for x in 0..width {
                let mut color = spec.background.color_at(x, y, height, width);
                let mut d = spec.background.depth;
                for l in &spec.layers {
                    if l.shape.covers(l.center(t), x as f64, y as f64) {
                        color = l.color;
                        d = l.depth;
                    }
                }
                for (c, v) in color.iter().enumerate() {
                    video.set(t, y, x, c, lit(*v));
                }
                depth[(t * height + y) * width + x] = lit(d);
            }
        }
    }
    Ok((video, DepthMap::from_vec(frames, height, width, depth)?))
}

/// One camera motion in a training pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    pub magnitude: f64,
}

impl TrajectorySpec {
    /// All six motions at magnitudes giving a few pixels of parallax on
    /// 16-pixel frames.
    pub fn default_pool() -> Vec<Self> {
        TrajectoryKind::ALL
            .iter()
            .map(|&kind| TrajectorySpec {
                kind,
                magnitude: match kind {
                    TrajectoryKind::ZoomIn | TrajectoryKind::ZoomOut => 1.0,
                    TrajectoryKind::PanUp | TrajectoryKind::PanDown => 0.6,
                    TrajectoryKind::ArcLeft | TrajectoryKind::ArcRight => 0.25,
                },
            })
            .collect()
    }

    pub fn identity() -> Self {
        TrajectorySpec {
            kind: TrajectoryKind::ZoomIn,
            magnitude: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoDims {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

/// `sample.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub scene: SceneSpec,
    pub trajectory: TrajectorySpec,
    pub dims: VideoDims,
    pub focal: f64,
    pub coverage: f64,
    pub checksums: BTreeMap<String, String>,
}

/// `manifest.json` at the dataset root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema: u32,
    pub count: usize,
    pub codec: String,
    pub rt: usize,
    pub rs: usize,
    pub channels: usize,
    /// Sample directory → file → sha256.
    pub samples: BTreeMap<String, BTreeMap<String, String>>,
}

impl DatasetManifest {
    pub const FILE: &'static str = "manifest.json";
}

pub const SAMPLE_FILES: [&str; 5] = ["video.bt", "masked.bt", "mask.bt", "depth.bt", "hgt.bt"];

/// Focal length used for generated scenes: one frame width.
pub fn default_focal(width: usize) -> f64 {
    width as f64
}

/// Writes `n × pool.len()` double-reprojection samples under `out_dir`.
pub fn gen_training_set(
    out_dir: &Path,
    n: usize,
    base_seed: u64,
    dims: VideoDims,
    layers: usize,
    pool: &[TrajectorySpec],
    spec: &CodecSpec<f64>,
) -> Result<DatasetManifest> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    if pool.is_empty() {
        return Err(Error::InvalidArgument("trajectory pool is empty".into()));
    }
    spec.latent_dims(dims.frames, dims.height, dims.width)?;
    let focal = default_focal(dims.width);
    let k = CameraIntrinsics::centered(focal, dims.height, dims.width);
    let mut samples = BTreeMap::new();
    for scene_idx in 0..n {
        let scene = SceneSpec::random(base_seed.wrapping_add(scene_idx as u64), layers, dims.frames, dims.height, dims.width);
        let (x, depth) = gen_moving_shapes::<f64>(&scene, dims.frames, dims.height, dims.width)?;
        let pivot = median_depth(&depth);
        for (j, traj_spec) in pool.iter().enumerate() {
            let traj = make_trajectory(traj_spec.kind, traj_spec.magnitude, dims.frames, k, pivot)?;
            let (_, m) = double_reproject(&x, &depth, &traj)?;
            let masked = x.masked(&m)?;
            let h = latent_mask_training_free(&x, &m, spec)?;
            let name = format!("sample_{scene_idx:04}_{j}_{}", traj_spec.kind.name());
            let dir = out_dir.join(&name);
            let tensors = [
                Tensor::from_video(&x),
                Tensor::from_video(&masked),
                Tensor::from_mask(&m),
                Tensor::from_depth(&depth),
                Tensor::from_latent(h.as_latent()),
            ];
            let mut checksums = BTreeMap::new();
            for (file, t) in SAMPLE_FILES.iter().zip(&tensors) {
                let bytes = t.to_bytes();
                write_atomic(&dir.join(file), &bytes)?;
                checksums.insert(file.to_string(), sha256_hex(&bytes));
            }
            let sample = SampleManifest {
                scene: scene.clone(),
                trajectory: traj_spec.clone(),
                dims,
                focal,
                coverage: m.coverage(),
                checksums: checksums.clone(),
            };
            write_json(&dir.join("sample.json"), &sample)?;
            samples.insert(name, checksums);
        }
    }
    let manifest = DatasetManifest {
        schema: 1,
        count: samples.len(),
        codec: spec.kind_name().to_string(),
        rt: spec.rt,
        rs: spec.rs,
        channels: spec.channels,
        samples,
    };
    write_json(&out_dir.join(DatasetManifest::FILE), &manifest)?;
    Ok(manifest)
}

pub(crate) fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    write_atomic(path, text.as_bytes())
}

pub(crate) fn read_json<S: for<'de> Deserialize<'de>>(path: &Path) -> Result<S> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub name: String,
    pub dir: PathBuf,
    pub x: Video<f64>,
    pub masked: Video<f64>,
    pub m: PixelMask,
    pub depth: DepthMap<f64>,
    pub h: LatentMask<f64>,
}

/// Loads every sample listed in the manifest, verifying checksums.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<Sample>)> {
    let manifest: DatasetManifest = read_json(&dir.join(DatasetManifest::FILE))?;
    let mut out = Vec::with_capacity(manifest.samples.len());
    for (name, sums) in &manifest.samples {
        let sdir = dir.join(name);
        let read = |file: &str| -> Result<Tensor> {
            let path = sdir.join(file);
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if let Some(expected) = sums.get(file) {
                if &sha256_hex(&bytes) != expected {
                    return Err(Error::Container(format!("checksum mismatch for {}", path.display())));
                }
            }
            Tensor::from_bytes(&bytes)
        };
        let x = read("video.bt")?.to_video()?;
        let masked = read("masked.bt")?.to_video()?;
        let m = read("mask.bt")?.to_mask()?;
        let depth = read("depth.bt")?.to_depth()?;
        let h = LatentMask::new(read("hgt.bt")?.to_latent::<f64>()?)?;
        out.push(Sample {
            name: name.clone(),
            dir: sdir,
            x,
            masked,
            m,
            depth,
            h,
        });
    }
    Ok((manifest, out))
}
