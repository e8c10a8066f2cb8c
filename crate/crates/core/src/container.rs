//! `BTSR` binary tensor container.
//!
//! Layout (all integers little-endian):
//!
//! | field   | size          |
//! |---------|---------------|
//! | magic   | 4 bytes `BTSR`|
//! | version | u16 (= 1)     |
//! | rank    | u8            |
//! | dims    | u32 × rank    |
//! | dtype   | u8 (1 = f32)  |
//! | payload | f32 × ∏dims, row-major |

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{DepthMap, Latent, LatentDims, PixelMask, Video};

pub const MAGIC: &[u8; 4] = b"BTSR";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.len() > u8::MAX as usize {
            return Err(Error::Container(format!("rank {} too large", dims.len())));
        }
        if dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::Container("dimension exceeds u32".into()));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Container(format!(
                "dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(DTYPE_F32);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |m: &str| Error::Container(m.to_string());
        if bytes.len() < 7 {
            return Err(err("truncated header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(err("bad magic"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::Container(format!("unsupported version {version}")));
        }
        let rank = bytes[6] as usize;
        let mut off = 7;
        if bytes.len() < off + 4 * rank + 1 {
            return Err(err("truncated dims"));
        }
        let dims: Vec<usize> = (0..rank)
            .map(|i| {
                let s = off + 4 * i;
                u32::from_le_bytes([bytes[s], bytes[s + 1], bytes[s + 2], bytes[s + 3]]) as usize
            })
            .collect();
        off += 4 * rank;
        let dtype = bytes[off];
        if dtype != DTYPE_F32 {
            return Err(Error::Container(format!("unsupported dtype code {dtype}")));
        }
        off += 1;
        let n: usize = dims.iter().product();
        if bytes.len() - off != 4 * n {
            return Err(Error::Container(format!(
                "payload is {} bytes, dims {dims:?} need {}",
                bytes.len() - off,
                4 * n
            )));
        }
        let data = bytes[off..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { dims, data })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    fn expect_rank(&self, rank: usize, what: &str) -> Result<()> {
        if self.dims.len() != rank {
            return Err(Error::Container(format!(
                "{what} needs rank {rank}, got dims {:?}",
                self.dims
            )));
        }
        Ok(())
    }

    pub fn from_video<T: Scalar>(x: &Video<T>) -> Self {
        let (f, h, w) = x.dims();
        Self {
            dims: vec![f, h, w, 3],
            data: x.data().iter().map(|v| v.as_f64() as f32).collect(),
        }
    }

    pub fn to_video<T: Scalar>(&self) -> Result<Video<T>> {
        self.expect_rank(4, "video")?;
        if self.dims[3] != 3 {
            return Err(Error::Container("video needs 3 color channels".into()));
        }
        Video::from_vec(
            self.dims[0],
            self.dims[1],
            self.dims[2],
            self.data.iter().map(|&v| T::lit(v as f64)).collect(),
        )
    }

    pub fn from_depth<T: Scalar>(d: &DepthMap<T>) -> Self {
        let (f, h, w) = d.dims();
        Self {
            dims: vec![f, h, w],
            data: d.data().iter().map(|v| v.as_f64() as f32).collect(),
        }
    }

    pub fn to_depth<T: Scalar>(&self) -> Result<DepthMap<T>> {
        self.expect_rank(3, "depth")?;
        DepthMap::from_vec(
            self.dims[0],
            self.dims[1],
            self.dims[2],
            self.data.iter().map(|&v| T::lit(v as f64)).collect(),
        )
    }

    pub fn from_mask(m: &PixelMask) -> Self {
        let (f, h, w) = m.dims();
        Self {
            dims: vec![f, h, w],
            data: m.values().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn to_mask(&self) -> Result<PixelMask> {
        self.expect_rank(3, "mask")?;
        let values = self
            .data
            .iter()
            .map(|&v| match v {
                0.0 => Ok(false),
                1.0 => Ok(true),
                other => Err(Error::Container(format!("mask value {other} is not binary"))),
            })
            .collect::<Result<Vec<_>>>()?;
        PixelMask::from_vec(self.dims[0], self.dims[1], self.dims[2], values)
    }

    pub fn from_latent<T: Scalar>(z: &Latent<T>) -> Self {
        let d = z.dims();
        Self {
            dims: vec![d.channels, d.frames, d.height, d.width],
            data: z.data().iter().map(|v| v.as_f64() as f32).collect(),
        }
    }

    pub fn to_latent<T: Scalar>(&self) -> Result<Latent<T>> {
        self.expect_rank(4, "latent")?;
        Latent::from_vec(
            LatentDims {
                channels: self.dims[0],
                frames: self.dims[1],
                height: self.dims[2],
                width: self.dims[3],
            },
            self.data.iter().map(|&v| T::lit(v as f64)).collect(),
        )
    }

    pub fn from_flat<T: Scalar>(values: &[T]) -> Self {
        Self {
            dims: vec![values.len()],
            data: values.iter().map(|v| v.as_f64() as f32).collect(),
        }
    }

    pub fn to_flat<T: Scalar>(&self) -> Vec<T> {
        self.data.iter().map(|&v| T::lit(v as f64)).collect()
    }
}

/// Writes via a temporary sibling file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}
