//! Dense video, depth, mask and latent grids.
//!
//! Pixel data is stored frame-major: `[frame][row][col][channel]` for color
//! videos and `[frame][row][col]` for single-valued planes. Latents are stored
//! channel-major: `[channel][frame][row][col]`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A single 2D grid of values (one depth frame, one mask frame).
#[derive(Clone, Debug, PartialEq)]
pub struct Plane<V> {
    pub height: usize,
    pub width: usize,
    pub values: Vec<V>,
}

impl<V: Copy> Plane<V> {
    pub fn filled(height: usize, width: usize, value: V) -> Self {
        Self {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> V {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: V) {
        self.values[y * self.width + x] = v;
    }
}

/// A single RGB frame, row-major with interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame<T> {
    pub height: usize,
    pub width: usize,
    pub rgb: Vec<T>,
}

impl<T: Scalar> Frame<T> {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            rgb: vec![T::zero(); height * width * 3],
        }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [T; 3] {
        let i = (y * self.width + x) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, c: [T; 3]) {
        let i = (y * self.width + x) * 3;
        self.rgb[i..i + 3].copy_from_slice(&c);
    }
}

/// Pixel-space video with three color channels, nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Video<T> {
    frames: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> Video<T> {
    pub fn zeros(frames: usize, height: usize, width: usize) -> Self {
        Self::filled(frames, height, width, T::zero())
    }

    pub fn filled(frames: usize, height: usize, width: usize, v: T) -> Self {
        Self {
            frames,
            height,
            width,
            data: vec![v; frames * height * width * 3],
        }
    }

    pub fn from_vec(frames: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != frames * height * width * 3 {
            return Err(Error::Shape(format!(
                "video {frames}x{height}x{width}x3 needs {} values, got {}",
                frames * height * width * 3,
                data.len()
            )));
        }
        Ok(Self {
            frames,
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        frames: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(frames * height * width * 3);
        for t in 0..frames {
            for y in 0..height {
                for x in 0..width {
                    for c in 0..3 {
                        data.push(f(t, y, x, c));
                    }
                }
            }
        }
        Self {
            frames,
            height,
            width,
            data,
        }
    }

    pub fn from_frames(frames: Vec<Frame<T>>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Shape("video needs at least one frame".into()))?;
        let (height, width) = (first.height, first.width);
        let mut data = Vec::with_capacity(frames.len() * height * width * 3);
        for f in &frames {
            if f.height != height || f.width != width {
                return Err(Error::Shape("frames differ in size".into()));
            }
            data.extend_from_slice(&f.rgb);
        }
        Ok(Self {
            frames: frames.len(),
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn frames(&self) -> usize {
        self.frames
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.frames, self.height, self.width)
    }
    pub fn data(&self) -> &[T] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, t: usize, y: usize, x: usize, c: usize) -> usize {
        ((t * self.height + y) * self.width + x) * 3 + c
    }
    #[inline]
    pub fn get(&self, t: usize, y: usize, x: usize, c: usize) -> T {
        self.data[self.index(t, y, x, c)]
    }
    #[inline]
    pub fn set(&mut self, t: usize, y: usize, x: usize, c: usize, v: T) {
        let i = self.index(t, y, x, c);
        self.data[i] = v;
    }

    pub fn frame_slice(&self, t: usize) -> &[T] {
        let n = self.height * self.width * 3;
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_slice_mut(&mut self, t: usize) -> &mut [T] {
        let n = self.height * self.width * 3;
        &mut self.data[t * n..(t + 1) * n]
    }

    pub fn frame(&self, t: usize) -> Frame<T> {
        Frame {
            height: self.height,
            width: self.width,
            rgb: self.frame_slice(t).to_vec(),
        }
    }

    /// `m ⊙ x`: zeroes every pixel whose mask entry is 0.
    pub fn masked(&self, m: &PixelMask) -> Result<Self> {
        m.check_dims(self.dims())?;
        let mut out = self.clone();
        for (p, &keep) in m.values().iter().enumerate() {
            if !keep {
                out.data[p * 3..p * 3 + 3].fill(T::zero());
            }
        }
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            frames: self.frames,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Video<U> {
        Video {
            frames: self.frames,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn same_dims(&self, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!(
                "video dims {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }
}

/// Per-frame positive depth values on the video's pixel grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap<T> {
    frames: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> DepthMap<T> {
    pub fn filled(frames: usize, height: usize, width: usize, d: T) -> Self {
        Self {
            frames,
            height,
            width,
            data: vec![d; frames * height * width],
        }
    }

    pub fn from_vec(frames: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != frames * height * width {
            return Err(Error::Shape(format!(
                "depth {frames}x{height}x{width} needs {} values, got {}",
                frames * height * width,
                data.len()
            )));
        }
        Ok(Self {
            frames,
            height,
            width,
            data,
        })
    }

    pub fn from_planes(planes: Vec<Plane<T>>) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::Shape("depth needs at least one frame".into()))?;
        let (height, width) = (first.height, first.width);
        let mut data = Vec::with_capacity(planes.len() * height * width);
        for p in &planes {
            if p.height != height || p.width != width {
                return Err(Error::Shape("depth frames differ in size".into()));
            }
            data.extend_from_slice(&p.values);
        }
        Ok(Self {
            frames: planes.len(),
            height,
            width,
            data,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.frames, self.height, self.width)
    }
    pub fn data(&self) -> &[T] {
        &self.data
    }
    pub fn get(&self, t: usize, y: usize, x: usize) -> T {
        self.data[(t * self.height + y) * self.width + x]
    }
    pub fn frame(&self, t: usize) -> Plane<T> {
        let n = self.height * self.width;
        Plane {
            height: self.height,
            width: self.width,
            values: self.data[t * n..(t + 1) * n].to_vec(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> DepthMap<U> {
        DepthMap {
            frames: self.frames,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// Binary observation mask over `frames × height × width`; `true` = observed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelMask {
    frames: usize,
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl PixelMask {
    pub fn ones(frames: usize, height: usize, width: usize) -> Self {
        Self {
            frames,
            height,
            width,
            data: vec![true; frames * height * width],
        }
    }

    pub fn zeros(frames: usize, height: usize, width: usize) -> Self {
        Self {
            frames,
            height,
            width,
            data: vec![false; frames * height * width],
        }
    }

    pub fn from_vec(frames: usize, height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != frames * height * width {
            return Err(Error::Shape(format!(
                "mask {frames}x{height}x{width} needs {} values, got {}",
                frames * height * width,
                data.len()
            )));
        }
        Ok(Self {
            frames,
            height,
            width,
            data,
        })
    }

    pub fn from_planes(planes: Vec<Plane<bool>>) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::Shape("mask needs at least one frame".into()))?;
        let (height, width) = (first.height, first.width);
        let mut data = Vec::with_capacity(planes.len() * height * width);
        for p in &planes {
            if p.height != height || p.width != width {
                return Err(Error::Shape("mask frames differ in size".into()));
            }
            data.extend_from_slice(&p.values);
        }
        Ok(Self {
            frames: planes.len(),
            height,
            width,
            data,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.frames, self.height, self.width)
    }
    pub fn values(&self) -> &[bool] {
        &self.data
    }
    #[inline]
    pub fn get(&self, t: usize, y: usize, x: usize) -> bool {
        self.data[(t * self.height + y) * self.width + x]
    }
    #[inline]
    pub fn set(&mut self, t: usize, y: usize, x: usize, v: bool) {
        self.data[(t * self.height + y) * self.width + x] = v;
    }

    pub fn frame(&self, t: usize) -> Plane<bool> {
        let n = self.height * self.width;
        Plane {
            height: self.height,
            width: self.width,
            values: self.data[t * n..(t + 1) * n].to_vec(),
        }
    }

    pub fn count_known(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Fraction of observed pixels.
    pub fn coverage(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.count_known() as f64 / self.data.len() as f64
    }

    pub fn check_dims(&self, dims: (usize, usize, usize)) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::Shape(format!(
                "mask dims {:?} vs video dims {:?}",
                self.dims(),
                dims
            )));
        }
        Ok(())
    }
}

/// Shape of a latent grid: `channels × frames × height × width`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct LatentDims {
    pub channels: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl LatentDims {
    pub fn len(&self) -> usize {
        self.channels * self.frames * self.height * self.width
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn cells(&self) -> usize {
        self.frames * self.height * self.width
    }
    #[inline]
    pub fn index(&self, c: usize, t: usize, y: usize, x: usize) -> usize {
        ((c * self.frames + t) * self.height + y) * self.width + x
    }
}

/// Codec output on the latent grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Latent<T> {
    dims: LatentDims,
    data: Vec<T>,
}

impl<T: Scalar> Latent<T> {
    pub fn zeros(dims: LatentDims) -> Self {
        Self {
            dims,
            data: vec![T::zero(); dims.len()],
        }
    }

    pub fn filled(dims: LatentDims, v: T) -> Self {
        Self {
            dims,
            data: vec![v; dims.len()],
        }
    }

    pub fn from_vec(dims: LatentDims, data: Vec<T>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::Shape(format!(
                "latent {dims:?} needs {} values, got {}",
                dims.len(),
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> LatentDims {
        self.dims
    }
    pub fn data(&self) -> &[T] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
    pub fn into_vec(self) -> Vec<T> {
        self.data
    }
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    #[inline]
    pub fn get(&self, c: usize, t: usize, y: usize, x: usize) -> T {
        self.data[self.dims.index(c, t, y, x)]
    }
    #[inline]
    pub fn set(&mut self, c: usize, t: usize, y: usize, x: usize, v: T) {
        let i = self.dims.index(c, t, y, x);
        self.data[i] = v;
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.same_dims(other)?;
        Ok(Self {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a - b)
                .collect(),
        })
    }

    pub fn same_dims(&self, other: &Self) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!(
                "latent dims {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Continuous per-channel latent weights in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentMask<T>(Latent<T>);

impl<T: Scalar> LatentMask<T> {
    pub fn new(values: Latent<T>) -> Result<Self> {
        if let Some(bad) = values
            .data()
            .iter()
            .find(|v| !(**v >= T::zero() && **v <= T::one()))
        {
            return Err(Error::InvalidArgument(format!(
                "latent mask value {bad} outside [0, 1]"
            )));
        }
        Ok(Self(values))
    }

    pub fn ones(dims: LatentDims) -> Self {
        Self(Latent::filled(dims, T::one()))
    }

    pub fn dims(&self) -> LatentDims {
        self.0.dims()
    }
    pub fn values(&self) -> &[T] {
        self.0.data()
    }
    pub fn as_latent(&self) -> &Latent<T> {
        &self.0
    }
    pub fn into_latent(self) -> Latent<T> {
        self.0
    }
    pub fn mean(&self) -> f64 {
        let n = self.values().len().max(1) as f64;
        self.values().iter().map(|v| v.as_f64()).sum::<f64>() / n
    }

    /// `h ⊙ z`.
    pub fn apply(&self, z: &Latent<T>) -> Result<Latent<T>> {
        self.0.same_dims(z)?;
        Latent::from_vec(
            z.dims(),
            self.values()
                .iter()
                .zip(z.data())
                .map(|(&h, &v)| h * v)
                .collect(),
        )
    }
}
