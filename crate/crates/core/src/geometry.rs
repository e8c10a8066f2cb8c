//! Measurement formation by depth-based warping.
//!
//! Source frames are lifted to camera-space points with their depth, moved
//! into a target camera, and splatted back to the nearest integer pixel with a
//! z-buffer. Pixels that receive no point are holes: color 0, mask 0.
//!
//! Trajectory poses are camera poses expressed in the source camera frame
//! (camera-to-source). The transform applied to source points for frame `i`
//! is therefore `poses[i].inverse()`.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::tensor::{DepthMap, Frame, PixelMask, Plane, Video};

/// Points at or behind this camera-space depth are culled.
pub const EPS_Z: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
}

impl<T: Scalar> CameraIntrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T) -> Result<Self> {
        if !(fx > T::zero() && fy > T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    /// Square pixels with the principal point at the image center.
    pub fn centered(focal: T, height: usize, width: usize) -> Self {
        Self {
            fx: focal,
            fy: focal,
            cx: lit::<T>(width as f64 / 2.0),
            cy: lit::<T>(height as f64 / 2.0),
        }
    }

    pub fn validate_for(&self, height: usize, width: usize) -> Result<()> {
        let (w, h) = (lit::<T>(width as f64), lit::<T>(height as f64));
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return Err(Error::InvalidArgument("focal lengths must be positive".into()));
        }
        if !(self.cx >= T::zero() && self.cx < w && self.cy >= T::zero() && self.cy < h) {
            return Err(Error::InvalidArgument(format!(
                "principal point ({}, {}) outside a {width}x{height} image",
                self.cx, self.cy
            )));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> CameraIntrinsics<U> {
        CameraIntrinsics {
            fx: U::lit(self.fx.as_f64()),
            fy: U::lit(self.fy.as_f64()),
            cx: U::lit(self.cx.as_f64()),
            cy: U::lit(self.cy.as_f64()),
        }
    }
}

/// `p ↦ R p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform<T> {
    pub rotation: [[T; 3]; 3],
    pub translation: [T; 3],
}

impl<T: Scalar> RigidTransform<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self {
            rotation: [[o, z, z], [z, o, z], [z, z, o]],
            translation: [z; 3],
        }
    }

    /// Builds a transform, rejecting rotations that are not proper orthonormal
    /// within `1e-9` (or `1e-5` for single precision).
    pub fn new(rotation: [[T; 3]; 3], translation: [T; 3]) -> Result<Self> {
        let tf = Self {
            rotation,
            translation,
        };
        let tol = if std::mem::size_of::<T>() >= 8 { 1e-9 } else { 1e-5 };
        let (ortho, det) = tf.orthonormality_error();
        if ortho > tol || (det - 1.0).abs() > tol {
            return Err(Error::InvalidArgument(format!(
                "rotation not orthonormal (|R^T R - I| = {ortho:e}, det = {det})"
            )));
        }
        Ok(tf)
    }

    pub fn from_translation(translation: [T; 3]) -> Self {
        Self {
            translation,
            ..Self::identity()
        }
    }

    /// Rotation by `angle` radians about the camera's vertical (y) axis.
    pub fn rotation_y(angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        let (o, z) = (T::one(), T::zero());
        Self {
            rotation: [[c, z, s], [z, o, z], [-s, z, c]],
            translation: [z; 3],
        }
    }

    pub fn rotation_x(angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        let (o, z) = (T::one(), T::zero());
        Self {
            rotation: [[o, z, z], [z, c, -s], [z, s, c]],
            translation: [z; 3],
        }
    }

    #[inline]
    pub fn apply(&self, p: [T; 3]) -> [T; 3] {
        let r = &self.rotation;
        let mut out = self.translation;
        for (i, o) in out.iter_mut().enumerate() {
            *o += r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2];
        }
        out
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        let mut rotation = [[T::zero(); 3]; 3];
        for (i, row) in rotation.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.rotation[i][k] * other.rotation[k][j]).sum();
            }
        }
        let mut translation = self.translation;
        for (i, t) in translation.iter_mut().enumerate() {
            *t += (0..3)
                .map(|k| self.rotation[i][k] * other.translation[k])
                .sum::<T>();
        }
        Self {
            rotation,
            translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let mut rotation = [[T::zero(); 3]; 3];
        for (i, row) in rotation.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.rotation[j][i];
            }
        }
        let mut translation = [T::zero(); 3];
        for (i, t) in translation.iter_mut().enumerate() {
            *t = -(0..3)
                .map(|k| rotation[i][k] * self.translation[k])
                .sum::<T>();
        }
        Self {
            rotation,
            translation,
        }
    }

    /// Max entry of `|RᵀR − I|` and `det(R)`.
    pub fn orthonormality_error(&self) -> (f64, f64) {
        let r = &self.rotation;
        let mut worst = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                let dotp: f64 = (0..3).map(|k| (r[k][i] * r[k][j]).as_f64()).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dotp - target).abs());
            }
        }
        let m = |i: usize, j: usize| r[i][j].as_f64();
        let det = m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1))
            - m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0))
            + m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
        (worst, det)
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    ZoomIn,
    ZoomOut,
    ArcLeft,
    ArcRight,
    PanUp,
    PanDown,
}

impl TrajectoryKind {
    pub const ALL: [TrajectoryKind; 6] = [
        TrajectoryKind::ZoomIn,
        TrajectoryKind::ZoomOut,
        TrajectoryKind::ArcLeft,
        TrajectoryKind::ArcRight,
        TrajectoryKind::PanUp,
        TrajectoryKind::PanDown,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TrajectoryKind::ZoomIn => "zoom_in",
            TrajectoryKind::ZoomOut => "zoom_out",
            TrajectoryKind::ArcLeft => "arc_left",
            TrajectoryKind::ArcRight => "arc_right",
            TrajectoryKind::PanUp => "pan_up",
            TrajectoryKind::PanDown => "pan_down",
        }
    }
}

impl FromStr for TrajectoryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TrajectoryKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown trajectory kind `{s}`")))
    }
}

/// Shared intrinsics plus one camera pose per frame; pose 0 is the source view.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraTrajectory<T> {
    pub intrinsics: CameraIntrinsics<T>,
    pub poses: Vec<RigidTransform<T>>,
}

impl<T: Scalar> CameraTrajectory<T> {
    pub fn new(intrinsics: CameraIntrinsics<T>, poses: Vec<RigidTransform<T>>) -> Result<Self> {
        match poses.first() {
            None => return Err(Error::InvalidArgument("trajectory has no poses".into())),
            Some(p) if !p.is_identity() => {
                return Err(Error::InvalidArgument(
                    "pose 0 must be the identity (source view)".into(),
                ))
            }
            _ => {}
        }
        Ok(Self { intrinsics, poses })
    }

    pub fn identity(intrinsics: CameraIntrinsics<T>, frames: usize) -> Self {
        Self {
            intrinsics,
            poses: vec![RigidTransform::identity(); frames],
        }
    }

    pub fn frames(&self) -> usize {
        self.poses.len()
    }

    /// Transform taking source-camera points into camera `i`'s frame.
    pub fn point_transform(&self, i: usize) -> RigidTransform<T> {
        self.poses[i].inverse()
    }
}

/// Camera poses interpolating linearly in the motion parameter from the
/// identity (frame 0) to the full motion (frame `frames - 1`).
///
/// Zooms translate along the optical axis by `magnitude` scene units, pans
/// translate vertically, and arcs orbit a pivot on the optical axis at
/// `pivot_depth` by `magnitude` radians.
pub fn make_trajectory<T: Scalar>(
    kind: TrajectoryKind,
    magnitude: T,
    frames: usize,
    intrinsics: CameraIntrinsics<T>,
    pivot_depth: T,
) -> Result<CameraTrajectory<T>> {
    if frames == 0 {
        return Err(Error::InvalidArgument("trajectory needs at least one frame".into()));
    }
    if !(magnitude >= T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "trajectory magnitude must be nonnegative, got {magnitude}"
        )));
    }
    let z = T::zero();
    let poses = (0..frames)
        .map(|i| {
            let s = if frames == 1 {
                z
            } else {
                magnitude * lit::<T>(i as f64) / lit::<T>((frames - 1) as f64)
            };
            if s == z {
                return RigidTransform::identity();
            }
            match kind {
                TrajectoryKind::ZoomIn => RigidTransform::from_translation([z, z, s]),
                TrajectoryKind::ZoomOut => RigidTransform::from_translation([z, z, -s]),
                TrajectoryKind::PanUp => RigidTransform::from_translation([z, -s, z]),
                TrajectoryKind::PanDown => RigidTransform::from_translation([z, s, z]),
                TrajectoryKind::ArcLeft => arc_pose(s, pivot_depth),
                TrajectoryKind::ArcRight => arc_pose(-s, pivot_depth),
            }
        })
        .collect();
    CameraTrajectory::new(intrinsics, poses)
}

/// Camera orbiting the point `(0, 0, pivot)` by `angle` while facing it.
/// Positive angles move the camera toward −x (left).
fn arc_pose<T: Scalar>(angle: T, pivot: T) -> RigidTransform<T> {
    let mut pose = RigidTransform::rotation_y(angle);
    let rp = pose.apply([T::zero(), T::zero(), pivot]);
    pose.translation = [-rp[0], -rp[1], pivot - rp[2]];
    pose
}

/// Camera-space points with colors, one per valid source pixel.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud<T> {
    pub points: Vec<[T; 3]>,
    pub colors: Vec<[T; 3]>,
}

impl<T> PointCloud<T> {
    pub fn len(&self) -> usize {
        self.points.len()
    }
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Lifts every pixel `(u, v)` with depth `d` to `((u−cx)/fx·d, (v−cy)/fy·d, d)`.
pub fn unproject<T: Scalar>(
    frame: &Frame<T>,
    depth: &Plane<T>,
    k: &CameraIntrinsics<T>,
) -> Result<PointCloud<T>> {
    if frame.height != depth.height || frame.width != depth.width {
        return Err(Error::Shape(format!(
            "frame {}x{} vs depth {}x{}",
            frame.height, frame.width, depth.height, depth.width
        )));
    }
    let n = frame.height * frame.width;
    let mut cloud = PointCloud {
        points: Vec::with_capacity(n),
        colors: Vec::with_capacity(n),
    };
    for v in 0..frame.height {
        for u in 0..frame.width {
            let d = depth.get(u, v);
            if !(d > T::zero() && d.is_finite()) {
                return Err(Error::NonPositiveDepth {
                    x: u,
                    y: v,
                    value: d.as_f64(),
                });
            }
            let x = (lit::<T>(u as f64) - k.cx) / k.fx * d;
            let y = (lit::<T>(v as f64) - k.cy) / k.fy * d;
            cloud.points.push([x, y, d]);
            cloud.colors.push(frame.pixel(u, v));
        }
    }
    Ok(cloud)
}

/// Z-buffered render of a point cloud: color, coverage, and winning depth.
#[derive(Clone, Debug, PartialEq)]
pub struct Rendered<T> {
    pub frame: Frame<T>,
    pub mask: Plane<bool>,
    /// Camera-space depth of the winning point, 0 at holes.
    pub depth: Plane<T>,
    /// Index into the cloud of the winning point.
    pub source: Plane<Option<usize>>,
}

/// Transforms, culls (`z ≤ EPS_Z`), and splats every point to its nearest
/// integer pixel, keeping the smallest camera-space depth per pixel.
pub fn render_points<T: Scalar>(
    cloud: &PointCloud<T>,
    transform: &RigidTransform<T>,
    k: &CameraIntrinsics<T>,
    height: usize,
    width: usize,
) -> Rendered<T> {
    let eps = lit::<T>(EPS_Z);
    let (hf, wf) = (lit::<T>(height as f64), lit::<T>(width as f64));
    let mut zbuf = vec![T::infinity(); height * width];
    let mut winner: Vec<Option<usize>> = vec![None; height * width];
    for (idx, p) in cloud.points.iter().enumerate() {
        let q = transform.apply(*p);
        if !(q[2] > eps) {
            continue;
        }
        let u = (k.fx * q[0] / q[2] + k.cx).round();
        let v = (k.fy * q[1] / q[2] + k.cy).round();
        if !(u >= T::zero() && u < wf && v >= T::zero() && v < hf) {
            continue;
        }
        let pix = v.to_usize().unwrap() * width + u.to_usize().unwrap();
        if q[2] < zbuf[pix] {
            zbuf[pix] = q[2];
            winner[pix] = Some(idx);
        }
    }
    let mut frame = Frame::zeros(height, width);
    let mut mask = Plane::filled(height, width, false);
    let mut depth = Plane::filled(height, width, T::zero());
    for (pix, w) in winner.iter().enumerate() {
        if let Some(idx) = *w {
            let (x, y) = (pix % width, pix / width);
            frame.set_pixel(x, y, cloud.colors[idx]);
            mask.values[pix] = true;
            depth.values[pix] = zbuf[pix];
        }
    }
    Rendered {
        frame,
        mask,
        depth,
        source: Plane {
            height,
            width,
            values: winner,
        },
    }
}

/// The projection `Π(T·P, K)`: rendered frame and its coverage mask.
pub fn project_zbuffer<T: Scalar>(
    cloud: &PointCloud<T>,
    transform: &RigidTransform<T>,
    k: &CameraIntrinsics<T>,
    height: usize,
    width: usize,
) -> (Frame<T>, Plane<bool>) {
    let r = render_points(cloud, transform, k, height, width);
    (r.frame, r.mask)
}

fn check_frame_counts<T: Scalar>(
    x: &Video<T>,
    depth: &DepthMap<T>,
    traj: &CameraTrajectory<T>,
) -> Result<()> {
    let (f, h, w) = x.dims();
    if depth.dims() != (f, h, w) {
        return Err(Error::Shape(format!(
            "video dims {:?} vs depth dims {:?}",
            x.dims(),
            depth.dims()
        )));
    }
    if traj.frames() != f {
        return Err(Error::Shape(format!(
            "video has {f} frames, trajectory has {}",
            traj.frames()
        )));
    }
    traj.intrinsics.validate_for(h, w)
}

/// Warps each frame of `x` into the matching trajectory camera.
/// Returns the measurement `y` (holes zeroed) and its occlusion mask `m`.
pub fn warp_video<T: Scalar>(
    x: &Video<T>,
    depth: &DepthMap<T>,
    traj: &CameraTrajectory<T>,
) -> Result<(Video<T>, PixelMask)> {
    check_frame_counts(x, depth, traj)?;
    let (f, h, w) = x.dims();
    let mut frames = Vec::with_capacity(f);
    let mut masks = Vec::with_capacity(f);
    for i in 0..f {
        let cloud = unproject(&x.frame(i), &depth.frame(i), &traj.intrinsics)?;
        let (frame, mask) =
            project_zbuffer(&cloud, &traj.point_transform(i), &traj.intrinsics, h, w);
        frames.push(frame);
        masks.push(mask);
    }
    Ok((Video::from_frames(frames)?, PixelMask::from_planes(masks)?))
}

/// Forward-warps along `traj`, then warps the rendered target views back to
/// the source camera using the depth carried by the forward z-buffer.
///
/// The result is pixel-aligned with `x`: `m = 1` where a pixel survived the
/// round trip, and `xm` carries the color that landed there.
pub fn double_reproject<T: Scalar>(
    x: &Video<T>,
    depth: &DepthMap<T>,
    traj: &CameraTrajectory<T>,
) -> Result<(Video<T>, PixelMask)> {
    check_frame_counts(x, depth, traj)?;
    let (f, h, w) = x.dims();
    let k = &traj.intrinsics;
    let mut frames = Vec::with_capacity(f);
    let mut masks = Vec::with_capacity(f);
    for i in 0..f {
        let cloud = unproject(&x.frame(i), &depth.frame(i), k)?;
        let fwd = render_points(&cloud, &traj.point_transform(i), k, h, w);

        let mut back = PointCloud::default();
        for v in 0..h {
            for u in 0..w {
                if !fwd.mask.get(u, v) {
                    continue;
                }
                let d = fwd.depth.get(u, v);
                back.points.push([
                    (lit::<T>(u as f64) - k.cx) / k.fx * d,
                    (lit::<T>(v as f64) - k.cy) / k.fy * d,
                    d,
                ]);
                back.colors.push(fwd.frame.pixel(u, v));
            }
        }
        let (frame, mask) = project_zbuffer(&back, &traj.poses[i], k, h, w);
        frames.push(frame);
        masks.push(mask);
    }
    Ok((Video::from_frames(frames)?, PixelMask::from_planes(masks)?))
}

/// Median of frame 0's depth, the default arc pivot.
pub fn median_depth<T: Scalar>(depth: &DepthMap<T>) -> T {
    let mut v = depth.frame(0).values;
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    if v.is_empty() {
        return T::one();
    }
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / lit::<T>(2.0)
    }
}

/// Parametric `kind` naming the static camera.
pub const IDENTITY_KIND: &str = "identity";

/// On-disk trajectory description: a parametric motion or explicit poses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrajectoryFile {
    Parametric {
        kind: String,
        magnitude: f64,
        frames: usize,
        intrinsics: CameraIntrinsics<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pivot_depth: Option<f64>,
    },
    Explicit {
        intrinsics: CameraIntrinsics<f64>,
        poses: Vec<PoseRecord>,
    },
}

/// One explicit pose: row-major 3×3 rotation and a translation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl TrajectoryFile {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn frames(&self) -> usize {
        match self {
            TrajectoryFile::Parametric { frames, .. } => *frames,
            TrajectoryFile::Explicit { poses, .. } => poses.len(),
        }
    }

    pub fn intrinsics(&self) -> CameraIntrinsics<f64> {
        match self {
            TrajectoryFile::Parametric { intrinsics, .. }
            | TrajectoryFile::Explicit { intrinsics, .. } => *intrinsics,
        }
    }

    /// Builds the trajectory; `default_pivot` is used for arcs without an
    /// explicit `pivot_depth`.
    pub fn build<T: Scalar>(&self, default_pivot: T) -> Result<CameraTrajectory<T>> {
        match self {
            TrajectoryFile::Parametric {
                kind,
                magnitude,
                frames,
                intrinsics,
                pivot_depth,
            } => {
                let k = intrinsics.cast::<T>();
                CameraIntrinsics::new(k.fx, k.fy, k.cx, k.cy)?;
                if kind == IDENTITY_KIND {
                    if *frames == 0 {
                        return Err(Error::InvalidArgument("trajectory needs at least one frame".into()));
                    }
                    return Ok(CameraTrajectory::identity(k, *frames));
                }
                let kind: TrajectoryKind = kind.parse()?;
                make_trajectory(
                    kind,
                    T::lit(*magnitude),
                    *frames,
                    k,
                    pivot_depth.map(T::lit).unwrap_or(default_pivot),
                )
            }
            TrajectoryFile::Explicit { intrinsics, poses } => {
                let k = intrinsics.cast::<T>();
                CameraIntrinsics::new(k.fx, k.fy, k.cx, k.cy)?;
                let poses = poses
                    .iter()
                    .map(|p| {
                        let r = p.rotation.map(T::lit);
                        RigidTransform::new(
                            [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]],
                            p.translation.map(T::lit),
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                CameraTrajectory::new(k, poses)
            }
        }
    }
}
