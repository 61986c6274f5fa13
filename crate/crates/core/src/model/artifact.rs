//! Single-file model container.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `ROASTMDL` |
//! | 4     | format version (`u32`) |
//! | 8     | header length `n` (`u64`) |
//! | n     | UTF-8 JSON header: metadata and tensor table |
//! | 4·k   | tensor data as `f32`, in tensor-table order |
//! | 32    | SHA-256 of every preceding byte |

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::class::RoastClass;
use crate::error::{Error, Result};
use crate::imaging::{preprocess, PreprocessConfig, RasterImage};
use crate::model::backbone::{Backbone, BackboneRegistry, Tensor};
use crate::model::head::{Head, BN_EPSILON};
use crate::model::{Network, Prediction, TrainingConfig};

const MAGIC: &[u8; 8] = b"ROASTMDL";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;
const PREFIX_LEN: usize = 8 + 4 + 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadLayout {
    pub layers: Vec<String>,
    pub features: usize,
    pub hidden_units: usize,
    pub classes: usize,
    pub dropout_rate: f64,
    pub batch_norm_momentum: f64,
    pub batch_norm_epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub epochs_run: usize,
    pub fold_index: Option<usize>,
    pub final_train_loss: f64,
    pub final_train_accuracy: f64,
    pub final_val_loss: f64,
    pub final_val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub backbone_kind: String,
    pub backbone_id: String,
    /// Pretrained weights were requested but a scratch network was used.
    pub backbone_fallback: bool,
    pub backbone_frozen: bool,
    pub head: HeadLayout,
    /// Labels by class index.
    pub class_mapping: Vec<RoastClass>,
    /// (height, width, channels).
    pub input_size: [usize; 3],
    pub preprocess_fingerprint: String,
    pub preprocess_config: PreprocessConfig,
    pub training_config: TrainingConfig,
    pub metrics_summary: MetricsSummary,
}

impl ArtifactMeta {
    pub(crate) fn describe(
        network: &Network,
        backbone_id: String,
        frozen: bool,
        fallback: bool,
        config: &TrainingConfig,
        preprocess: &PreprocessConfig,
        metrics: MetricsSummary,
    ) -> Self {
        let head = &network.head;
        ArtifactMeta {
            backbone_kind: network.backbone.kind().to_string(),
            backbone_id,
            backbone_fallback: fallback,
            backbone_frozen: frozen,
            head: HeadLayout {
                layers: ["global_average_pooling", "batch_normalization", "dropout", "dense_relu", "dense_softmax"]
                    .map(String::from)
                    .to_vec(),
                features: head.features(),
                hidden_units: head.hidden(),
                classes: head.classes(),
                dropout_rate: config.dropout_rate,
                batch_norm_momentum: config.batch_norm_momentum,
                batch_norm_epsilon: BN_EPSILON as f64,
            },
            class_mapping: RoastClass::ALL.to_vec(),
            input_size: [network.input_height, network.input_width, 3],
            preprocess_fingerprint: preprocess.fingerprint(),
            preprocess_config: preprocess.clone(),
            training_config: config.clone(),
            metrics_summary: metrics,
        }
    }
}

/// A trained network with the metadata needed to serve it.
#[derive(Debug, Clone)]
pub struct ModelArtifact {
    pub meta: ArtifactMeta,
    pub network: Network,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    meta: ArtifactMeta,
    backbone: Vec<TensorEntry>,
    head: Vec<TensorEntry>,
}

fn entries(tensors: &[&Tensor]) -> Vec<TensorEntry> {
    tensors.iter().map(|t| TensorEntry { name: t.name.clone(), shape: t.shape.clone() }).collect()
}

impl ModelArtifact {
    /// Wraps a freshly built network without training it. Useful for
    /// smoke tests of serving code.
    pub fn untrained(
        model: crate::model::BuiltModel,
        config: &TrainingConfig,
        preprocess: &PreprocessConfig,
    ) -> Result<Self> {
        config.validate()?;
        if preprocess.target_size() != (model.network.input_width, model.network.input_height) {
            return Err(Error::Config("preprocessing target size differs from the network input".into()));
        }
        let metrics = MetricsSummary {
            epochs_run: 0,
            fold_index: None,
            final_train_loss: 0.0,
            final_train_accuracy: 0.0,
            final_val_loss: 0.0,
            final_val_accuracy: 0.0,
        };
        let meta = ArtifactMeta::describe(
            &model.network,
            model.backbone_id,
            model.frozen,
            model.fallback,
            config,
            preprocess,
            metrics,
        );
        Ok(ModelArtifact { meta, network: model.network })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let bb = self.network.backbone.params();
        let hd = self.network.head.all_tensors();
        let header = Header { meta: self.meta.clone(), backbone: entries(&bb), head: entries(&hd) };
        let json = serde_json::to_vec(&header)?;
        let floats: usize = bb.iter().chain(&hd).map(|t| t.len()).sum();
        let mut out = Vec::with_capacity(PREFIX_LEN + json.len() + 4 * floats + DIGEST_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in bb.iter().chain(&hd) {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    /// Hex SHA-256 of the serialized artifact.
    pub fn digest(&self) -> Result<String> {
        let bytes = self.to_bytes()?;
        Ok(hex::encode(&bytes[bytes.len() - DIGEST_LEN..]))
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Artifact { path: origin.to_path_buf(), reason };
        if bytes.len() < PREFIX_LEN + DIGEST_LEN {
            return Err(bad(format!("file is {} bytes, too short to be a model", bytes.len())));
        }
        if &bytes[..8] != MAGIC {
            return Err(bad("not a model file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch (truncated or corrupted)".into()));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let header_end = PREFIX_LEN
            .checked_add(header_len)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| bad("header length exceeds file".into()))?;
        let header: Header =
            serde_json::from_slice(&body[PREFIX_LEN..header_end]).map_err(|e| bad(format!("bad header: {e}")))?;
        if header.meta.class_mapping != RoastClass::ALL {
            return Err(bad(format!("unexpected class mapping {:?}", header.meta.class_mapping)));
        }

        let mut data = body[header_end..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        let expected: usize =
            header.backbone.iter().chain(&header.head).map(|e| e.shape.iter().product::<usize>()).sum();
        if body.len() - header_end != 4 * expected {
            return Err(bad(format!(
                "tensor data is {} bytes, header describes {}",
                body.len() - header_end,
                4 * expected
            )));
        }
        let mut take = |list: Vec<TensorEntry>| -> Vec<Tensor> {
            list.into_iter()
                .map(|e| {
                    let n = e.shape.iter().product();
                    Tensor { name: e.name, shape: e.shape, data: data.by_ref().take(n).collect() }
                })
                .collect()
        };
        let bb_tensors = take(header.backbone);
        let head_tensors = take(header.head);

        let meta = header.meta;
        let backbone =
            BackboneRegistry::default().restore(&meta.backbone_kind, bb_tensors).map_err(|e| bad(e.to_string()))?;
        if backbone.feature_dim() != meta.head.features {
            return Err(bad(format!(
                "backbone yields {} features, head expects {}",
                backbone.feature_dim(),
                meta.head.features
            )));
        }
        let [h, w, c] = meta.input_size;
        if c != 3 {
            return Err(bad(format!("input must have 3 channels, header says {c}")));
        }
        backbone.check_input(h, w).map_err(|e| bad(e.to_string()))?;
        let head = restore_head(&meta.head, head_tensors).map_err(|e| bad(e.to_string()))?;
        Ok(ModelArtifact { network: Network { backbone, head, input_height: h, input_width: w }, meta })
    }
}

fn restore_head(layout: &HeadLayout, tensors: Vec<Tensor>) -> Result<Head> {
    if layout.classes != RoastClass::COUNT {
        return Err(Error::Shape(format!("head has {} outputs, expected {}", layout.classes, RoastClass::COUNT)));
    }
    let mut head = Head::new(
        layout.features,
        layout.hidden_units,
        layout.classes,
        layout.dropout_rate as f32,
        layout.batch_norm_momentum as f32,
        &mut ChaCha8Rng::seed_from_u64(0),
    );
    let mut by_name: BTreeMap<String, Tensor> = tensors.into_iter().map(|t| (t.name.clone(), t)).collect();
    for slot in head.all_tensors_mut() {
        let t = by_name.remove(&slot.name).ok_or_else(|| Error::Data(format!("missing tensor {}", slot.name)))?;
        if t.shape != slot.shape {
            return Err(Error::Shape(format!("tensor {} has shape {:?}, expected {:?}", t.name, t.shape, slot.shape)));
        }
        slot.data = t.data;
    }
    if let Some(extra) = by_name.keys().next() {
        return Err(Error::Data(format!("unexpected tensor {extra}")));
    }
    Ok(head)
}

/// Writes the artifact atomically (temporary file, then rename).
pub fn save_model(artifact: &ModelArtifact, path: &Path) -> Result<()> {
    let bytes = artifact.to_bytes()?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelArtifact> {
    let bytes = std::fs::read(path).map_err(|e| Error::Artifact { path: path.to_path_buf(), reason: e.to_string() })?;
    ModelArtifact::from_bytes(&bytes, path)
}

/// The feature extractor of a saved model, for reuse as a frozen backbone.
pub fn load_backbone(path: &Path) -> Result<Box<dyn Backbone>> {
    Ok(load_model(path)?.network.backbone)
}

/// Fails unless `preprocess` hashes to the artifact's fingerprint or
/// `allow_mismatch` is set.
pub fn check_compatible(artifact: &ModelArtifact, preprocess: &PreprocessConfig, allow_mismatch: bool) -> Result<()> {
    let serving = preprocess.fingerprint();
    if serving != artifact.meta.preprocess_fingerprint {
        if !allow_mismatch {
            return Err(Error::Incompatible { trained: artifact.meta.preprocess_fingerprint.clone(), serving });
        }
        log::warn!("serving preprocessing differs from training; predictions may be meaningless");
    }
    let [h, w, _] = artifact.meta.input_size;
    if preprocess.target_size() != (w, h) {
        return Err(Error::Shape(format!(
            "preprocessing produces {:?} images, model takes {w}x{h}",
            preprocess.target_size()
        )));
    }
    Ok(())
}

/// Preprocesses an RGB8 image and classifies it.
pub fn predict(
    artifact: &ModelArtifact,
    image: &RasterImage,
    preprocess_config: &PreprocessConfig,
    allow_mismatch: bool,
) -> Result<Prediction> {
    check_compatible(artifact, preprocess_config, allow_mismatch)?;
    let input = preprocess(image, preprocess_config)?;
    artifact.network.predict_input(&input.to_chw_f32())
}
