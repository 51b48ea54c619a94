//! Network checkpoints: a JSON manifest next to a raw little-endian f32 blob
//! of all parameters concatenated in layer order. Loading a 32-bit checkpoint
//! and saving it again reproduces the file bit-exactly.

use super::{LayerSpec, Network};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub(crate) const MANIFEST_FILE: &str = "manifest.json";
pub(crate) const PARAMS_FILE: &str = "params.f32";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub dtype: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub init_seed: u64,
    pub param_shapes: Vec<Vec<usize>>,
    pub blob_len_bytes: usize,
    /// Component-specific metadata (e.g. the noise schedule an estimator was
    /// trained against).
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub fn save_network(net: &Network, dir: &Path, extra: serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let param_shapes: Vec<Vec<usize>> = net.params().iter().map(|p| p.shape().to_vec()).collect();
    let scalar_count: usize = net.params().iter().map(|p| p.len()).sum();
    let manifest = CheckpointManifest {
        format: "pmu-net/1".to_string(),
        dtype: "f32".to_string(),
        input_shape: net.input_shape().to_vec(),
        layers: net.layers().to_vec(),
        init_seed: net.init_seed(),
        param_shapes,
        blob_len_bytes: scalar_count * 4,
        extra,
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::config(format!("manifest serialization: {e}")))?;
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;

    let mut blob = Vec::with_capacity(scalar_count * 4);
    for p in net.params() {
        for &v in p.data() {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let blob_path = dir.join(PARAMS_FILE);
    fs::write(&blob_path, blob).map_err(|e| Error::io(&blob_path, e))?;
    Ok(())
}

pub fn load_network(dir: &Path) -> Result<(Network, serde_json::Value)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(Error::MissingArtifact(manifest_path));
    }
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(|e| Error::Load {
        path: manifest_path.clone(),
        detail: format!("manifest parse: {e}"),
    })?;
    if manifest.format != "pmu-net/1" {
        return Err(Error::Load {
            path: manifest_path.clone(),
            detail: format!("unknown checkpoint format {:?}", manifest.format),
        });
    }
    if manifest.dtype != "f32" {
        return Err(Error::Load {
            path: manifest_path.clone(),
            detail: format!("unsupported dtype {:?}", manifest.dtype),
        });
    }

    let blob_path = dir.join(PARAMS_FILE);
    if !blob_path.is_file() {
        return Err(Error::MissingArtifact(blob_path));
    }
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    if blob.len() != manifest.blob_len_bytes {
        return Err(Error::Load {
            path: blob_path.clone(),
            detail: format!(
                "parameter blob truncated or padded: expected {} bytes, got {} (diverges at byte {})",
                manifest.blob_len_bytes,
                blob.len(),
                blob.len().min(manifest.blob_len_bytes)
            ),
        });
    }

    let mut net = Network::new(
        manifest.input_shape.clone(),
        manifest.layers.clone(),
        manifest.init_seed,
    )?;
    let expected_shapes: Vec<Vec<usize>> = net.params().iter().map(|p| p.shape().to_vec()).collect();
    if expected_shapes != manifest.param_shapes {
        return Err(Error::Load {
            path: manifest_path,
            detail: format!(
                "manifest parameter shapes {:?} do not match layer specs {:?}",
                manifest.param_shapes, expected_shapes
            ),
        });
    }
    let scalar_count: usize = expected_shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    if blob.len() != scalar_count * 4 {
        return Err(Error::Load {
            path: blob_path,
            detail: format!(
                "blob holds {} scalars but layers need {scalar_count}",
                blob.len() / 4
            ),
        });
    }

    let mut values = blob
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64);
    let mut params = Vec::new();
    for shape in expected_shapes {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = values.by_ref().take(n).collect();
        params.push(crate::tensor::Tensor::new(shape, data).map_err(|e| Error::Load {
            path: dir.join(PARAMS_FILE),
            detail: format!("bad parameter values: {e}"),
        })?);
    }
    net.set_params(params)?;
    Ok((net, manifest.extra))
}
