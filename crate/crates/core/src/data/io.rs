//! Dataset persistence: `manifest.json` + `windows.f32` + `labels.u8`.
//!
//! The windows blob is little-endian f32 in sample order; labels are one byte
//! per sample. Loads verify sizes and report the byte offset of truncation.

use super::{
    Dataset, EventClass, GenConfig, NormStats, PmuWindow, Splits, NUM_CHANNELS, NUM_CLASSES,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub(crate) const MANIFEST_FILE: &str = "manifest.json";
const WINDOWS_FILE: &str = "windows.f32";
const LABELS_FILE: &str = "labels.u8";

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    format: String,
    window_len: usize,
    num_pmus: usize,
    channels: usize,
    sample_rate_hz: f64,
    count: usize,
    class_counts: [usize; NUM_CLASSES],
    generator_seed: u64,
    gen_config: GenConfig,
    normalized: bool,
    normalization: Option<NormStats>,
    splits: Option<Splits>,
}

pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::usage("refusing to save an empty dataset"));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (w, k) = ds.samples[0].0.dims();
    let mut class_counts = [0usize; NUM_CLASSES];
    for (_, label) in &ds.samples {
        class_counts[label.index()] += 1;
    }
    let manifest = DatasetManifest {
        format: "pmu-dataset/1".to_string(),
        window_len: w,
        num_pmus: k,
        channels: NUM_CHANNELS,
        sample_rate_hz: ds.samples[0].0.sample_rate_hz(),
        count: ds.len(),
        class_counts,
        generator_seed: ds.generator_seed,
        gen_config: ds.gen_config.clone(),
        normalized: ds.normalized,
        normalization: ds.normalization.clone(),
        splits: ds.splits.clone(),
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::config(format!("dataset manifest serialization: {e}")))?;
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;

    let mut blob = Vec::with_capacity(ds.len() * w * k * NUM_CHANNELS * 4);
    let mut labels = Vec::with_capacity(ds.len());
    for (window, label) in &ds.samples {
        for &v in window.values().data() {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
        labels.push(label.index() as u8);
    }
    let blob_path = dir.join(WINDOWS_FILE);
    fs::write(&blob_path, blob).map_err(|e| Error::io(&blob_path, e))?;
    let labels_path = dir.join(LABELS_FILE);
    fs::write(&labels_path, labels).map_err(|e| Error::io(&labels_path, e))?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(Error::MissingArtifact(manifest_path));
    }
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Load {
        path: manifest_path.clone(),
        detail: format!("manifest parse: {e}"),
    })?;
    if manifest.format != "pmu-dataset/1" {
        return Err(Error::Load {
            path: manifest_path.clone(),
            detail: format!("unknown dataset format {:?}", manifest.format),
        });
    }
    if manifest.channels != NUM_CHANNELS {
        return Err(Error::Load {
            path: manifest_path.clone(),
            detail: format!("expected {NUM_CHANNELS} channels, manifest says {}", manifest.channels),
        });
    }

    let per_window = manifest.window_len * manifest.num_pmus * NUM_CHANNELS;
    let expected_bytes = manifest.count * per_window * 4;
    let blob_path = dir.join(WINDOWS_FILE);
    if !blob_path.is_file() {
        return Err(Error::MissingArtifact(blob_path));
    }
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    if blob.len() != expected_bytes {
        return Err(Error::Load {
            path: blob_path,
            detail: format!(
                "windows blob: expected {expected_bytes} bytes for {} windows, got {} (diverges at byte {})",
                manifest.count,
                blob.len(),
                blob.len().min(expected_bytes)
            ),
        });
    }
    let labels_path = dir.join(LABELS_FILE);
    if !labels_path.is_file() {
        return Err(Error::MissingArtifact(labels_path));
    }
    let labels = fs::read(&labels_path).map_err(|e| Error::io(&labels_path, e))?;
    if labels.len() != manifest.count {
        return Err(Error::Load {
            path: labels_path,
            detail: format!(
                "labels: expected {} bytes, got {} (diverges at byte {})",
                manifest.count,
                labels.len(),
                labels.len().min(manifest.count)
            ),
        });
    }

    let mut samples = Vec::with_capacity(manifest.count);
    for (si, &label_byte) in labels.iter().enumerate() {
        let start = si * per_window * 4;
        let data: Vec<f64> = blob[start..start + per_window * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        let values = Tensor::new(
            vec![manifest.window_len, manifest.num_pmus, NUM_CHANNELS],
            data,
        )
        .map_err(|e| Error::Load {
            path: dir.join(WINDOWS_FILE),
            detail: format!("window {si}: {e}"),
        })?;
        let window = PmuWindow::new(values, manifest.sample_rate_hz)?;
        let label = EventClass::from_index(label_byte as usize).map_err(|_| Error::Load {
            path: dir.join(LABELS_FILE),
            detail: format!("sample {si}: bad class byte {label_byte}"),
        })?;
        samples.push((window, label));
    }

    if let Some(splits) = &manifest.splits {
        let mut seen = vec![false; manifest.count];
        for &i in splits.train.iter().chain(&splits.val).chain(&splits.test) {
            if i >= manifest.count || seen[i] {
                return Err(Error::Load {
                    path: manifest_path,
                    detail: format!("split index {i} out of range or duplicated"),
                });
            }
            seen[i] = true;
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::Load {
                path: manifest_path,
                detail: "splits do not cover every sample".to_string(),
            });
        }
    }

    Ok(Dataset {
        samples,
        normalization: manifest.normalization,
        splits: manifest.splits,
        generator_seed: manifest.generator_seed,
        normalized: manifest.normalized,
        gen_config: manifest.gen_config,
    })
}
