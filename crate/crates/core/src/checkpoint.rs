//! Model checkpoints: one tensor file of parameters plus a JSON manifest.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::codec::{make_linear_codec, CodecKind, CodecSpec, MlpCodec};
use crate::container::{sha256_hex, Tensor};
use crate::error::{Error, Result};
use crate::flow_prior::{FlowMlp, GaussianPrior, VelocityModel};
use crate::latent_mask::MaskEncoder;
use crate::synthdata::{read_json, write_json};

pub const CODEC_TENSOR: &str = "codec.bt";
pub const CODEC_MANIFEST: &str = "codec.json";
pub const FLOW_TENSOR: &str = "flow.bt";
pub const FLOW_MANIFEST: &str = "flow.json";
pub const MASKENC_TENSOR: &str = "maskenc.bt";
pub const MASKENC_MANIFEST: &str = "maskenc.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodecManifest {
    pub kind: String,
    pub rt: usize,
    pub rs: usize,
    #[serde(rename = "C")]
    pub channels: usize,
    /// sha256 of the parameter tensor file.
    pub checksum: String,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub final_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowManifest {
    pub kind: String,
    pub dims: usize,
    /// Layer widths of the velocity network; empty for the analytic prior.
    pub layers: Vec<usize>,
    pub seed: u64,
    pub epochs: usize,
    pub final_loss: Option<f64>,
    pub checksum: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskEncoderManifest {
    #[serde(rename = "C")]
    pub channels: usize,
    pub rt: usize,
    pub rs: usize,
    pub lambda: f64,
    pub seed: u64,
    pub epochs: usize,
    pub checksum: String,
}

fn write_tensor(dir: &Path, name: &str, t: &Tensor) -> Result<String> {
    let bytes = t.to_bytes();
    crate::container::write_atomic(&dir.join(name), &bytes)?;
    Ok(sha256_hex(&bytes))
}

fn read_tensor(dir: &Path, name: &str, checksum: &str) -> Result<Tensor> {
    let path = dir.join(name);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if sha256_hex(&bytes) != checksum {
        return Err(Error::Container(format!("checksum mismatch for {}", path.display())));
    }
    Tensor::from_bytes(&bytes)
}

pub fn save_codec(dir: &Path, spec: &CodecSpec<f64>) -> Result<CodecManifest> {
    let (flat, seed, epochs, final_loss) = match &spec.kind {
        CodecKind::LinearDct { basis } => (basis.iter().copied().collect::<Vec<_>>(), None, None, None),
        CodecKind::NonlinearMlp(net) => (net.flatten(), Some(net.seed), Some(net.epochs), net.final_loss),
    };
    let checksum = write_tensor(dir, CODEC_TENSOR, &Tensor::from_flat(&flat))?;
    let manifest = CodecManifest {
        kind: spec.kind_name().to_string(),
        rt: spec.rt,
        rs: spec.rs,
        channels: spec.channels,
        checksum,
        seed,
        epochs,
        final_loss,
    };
    write_json(&dir.join(CODEC_MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn load_codec(dir: &Path) -> Result<(CodecManifest, CodecSpec<f64>)> {
    let manifest: CodecManifest = read_json(&dir.join(CODEC_MANIFEST))?;
    let flat: Vec<f64> = read_tensor(dir, CODEC_TENSOR, &manifest.checksum)?.to_flat();
    let (rt, rs, c) = (manifest.rt, manifest.rs, manifest.channels);
    let spec = match manifest.kind.as_str() {
        "linear_dct" => {
            // the stored basis is f32; rebuild it exactly from the factors
            let exact = make_linear_codec::<f64>(rt, rs, c)?;
            if let CodecKind::LinearDct { basis } = &exact.kind {
                let stored = Array2::from_shape_vec(basis.dim(), flat)
                    .map_err(|e| Error::Shape(format!("codec basis: {e}")))?;
                if stored.iter().zip(basis).any(|(a, b)| (a - b).abs() > 1e-6) {
                    return Err(Error::Container("stored basis differs from the DCT basis".into()));
                }
            }
            exact
        }
        "nonlinear_mlp" => {
            let mut net = MlpCodec::init(rt * rs * rs * 3, c, manifest.seed.unwrap_or(0));
            net.load_flat(&flat)?;
            net.epochs = manifest.epochs.unwrap_or(0);
            net.final_loss = manifest.final_loss;
            CodecSpec {
                kind: CodecKind::NonlinearMlp(net),
                rt,
                rs,
                channels: c,
            }
        }
        other => return Err(Error::InvalidArgument(format!("unknown codec kind `{other}`"))),
    };
    Ok((manifest, spec))
}

pub fn save_flow(dir: &Path, model: &VelocityModel<f64>) -> Result<FlowManifest> {
    let (flat, layers, seed, epochs, final_loss) = match model {
        VelocityModel::Mlp(m) => (m.net.flatten(), m.net.sizes(), m.seed, m.epochs, m.final_loss),
        VelocityModel::GaussianAnalytic(g) => {
            let mut v = g.mean.clone();
            v.extend(&g.var);
            (v, Vec::new(), 0, 0, None)
        }
    };
    let checksum = write_tensor(dir, FLOW_TENSOR, &Tensor::from_flat(&flat))?;
    let manifest = FlowManifest {
        kind: model.kind_name().to_string(),
        dims: model.dim(),
        layers,
        seed,
        epochs,
        final_loss,
        checksum,
    };
    write_json(&dir.join(FLOW_MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn load_flow(dir: &Path) -> Result<(FlowManifest, VelocityModel<f64>)> {
    let manifest: FlowManifest = read_json(&dir.join(FLOW_MANIFEST))?;
    let flat: Vec<f64> = read_tensor(dir, FLOW_TENSOR, &manifest.checksum)?.to_flat();
    let d = manifest.dims;
    let model = match manifest.kind.as_str() {
        "mlp" => {
            let hidden = manifest.layers.get(1).copied().unwrap_or(0);
            let mut m = FlowMlp::zeros(d, hidden);
            if m.net.sizes() != manifest.layers {
                return Err(Error::Shape(format!("unsupported flow layer layout {:?}", manifest.layers)));
            }
            m.net.load_flat(&flat)?;
            m.seed = manifest.seed;
            m.epochs = manifest.epochs;
            m.final_loss = manifest.final_loss;
            VelocityModel::Mlp(m)
        }
        "gaussian_analytic" => {
            if flat.len() != 2 * d {
                return Err(Error::Shape("gaussian prior tensor must hold mean and variance".into()));
            }
            VelocityModel::GaussianAnalytic(GaussianPrior::new(flat[..d].to_vec(), flat[d..].to_vec())?)
        }
        other => return Err(Error::InvalidArgument(format!("unknown flow kind `{other}`"))),
    };
    Ok((manifest, model))
}

pub fn save_mask_encoder(dir: &Path, enc: &MaskEncoder<f64>) -> Result<MaskEncoderManifest> {
    let checksum = write_tensor(dir, MASKENC_TENSOR, &Tensor::from_flat(&enc.net.flatten()))?;
    let manifest = MaskEncoderManifest {
        channels: enc.channels,
        rt: enc.rt,
        rs: enc.rs,
        lambda: enc.lambda,
        seed: enc.seed,
        epochs: enc.epochs,
        checksum,
    };
    write_json(&dir.join(MASKENC_MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn load_mask_encoder(dir: &Path) -> Result<(MaskEncoderManifest, MaskEncoder<f64>)> {
    let manifest: MaskEncoderManifest = read_json(&dir.join(MASKENC_MANIFEST))?;
    let flat: Vec<f64> = read_tensor(dir, MASKENC_TENSOR, &manifest.checksum)?.to_flat();
    let mut enc = MaskEncoder::zeros(manifest.rt, manifest.rs, manifest.channels);
    enc.net.load_flat(&flat)?;
    enc.lambda = manifest.lambda;
    enc.seed = manifest.seed;
    enc.epochs = manifest.epochs;
    Ok((manifest, enc))
}
