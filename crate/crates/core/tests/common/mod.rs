#![allow(dead_code)]

use lic::codec::{encode, make_linear_codec, CodecSpec};
use lic::geometry::{double_reproject, make_trajectory, median_depth, CameraIntrinsics, TrajectoryKind};
use lic::latent_mask::{latent_mask_training_free, MaskPair};
use lic::synthdata::{default_focal, gen_moving_shapes, SceneSpec};
use lic::tensor::{DepthMap, PixelMask, Video};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FRAMES: usize = 8;
pub const SIZE: usize = 16;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn linear_codec() -> CodecSpec<f64> {
    make_linear_codec(2, 4, 12).unwrap()
}

pub fn scene(seed: u64, layers: usize) -> (Video<f64>, DepthMap<f64>) {
    gen_moving_shapes(&SceneSpec::random(seed, layers, FRAMES, SIZE, SIZE), FRAMES, SIZE, SIZE).unwrap()
}

/// A scene whose layers move `speed` pixels per frame.
pub fn fast_scene(seed: u64, speed: f64) -> (Video<f64>, DepthMap<f64>) {
    let mut spec = SceneSpec::random(seed, 3, FRAMES, SIZE, SIZE);
    let mut r = rng(seed ^ 0xfa57);
    for l in &mut spec.layers {
        let a: f64 = r.random_range(0.0..std::f64::consts::TAU);
        l.velocity = [speed * a.cos(), speed * a.sin()];
        l.start = [SIZE as f64 / 2.0 - l.velocity[0] * 3.5, SIZE as f64 / 2.0 - l.velocity[1] * 3.5];
    }
    gen_moving_shapes(&spec, FRAMES, SIZE, SIZE).unwrap()
}

pub fn intrinsics() -> CameraIntrinsics<f64> {
    CameraIntrinsics::centered(default_focal(SIZE), SIZE, SIZE)
}

/// Double reprojection of `x` along `kind`: the source-aligned mask.
pub fn reproject_mask(x: &Video<f64>, d: &DepthMap<f64>, kind: TrajectoryKind, magnitude: f64) -> PixelMask {
    let traj = make_trajectory(kind, magnitude, x.frames(), intrinsics(), median_depth(d)).unwrap();
    double_reproject(x, d, &traj).unwrap().1
}

/// Training pair `(m ⊙ x, m, h_training_free)`.
pub fn mask_pair(x: &Video<f64>, m: &PixelMask, spec: &CodecSpec<f64>) -> MaskPair<f64> {
    MaskPair {
        y: x.masked(m).unwrap(),
        m: m.clone(),
        h: latent_mask_training_free(x, m, spec).unwrap(),
    }
}

pub fn random_mask(r: &mut ChaCha8Rng, f: usize, h: usize, w: usize, p: f64) -> PixelMask {
    PixelMask::from_vec(f, h, w, (0..f * h * w).map(|_| r.random_bool(p)).collect()).unwrap()
}

pub fn random_video(r: &mut ChaCha8Rng, f: usize, h: usize, w: usize) -> Video<f64> {
    Video::from_fn(f, h, w, |_, _, _, _| r.random::<f64>())
}

pub fn latents(spec: &CodecSpec<f64>, videos: &[Video<f64>]) -> Vec<Vec<f64>> {
    videos.iter().map(|x| encode(spec, x).unwrap().into_vec()).collect()
}

pub fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}
