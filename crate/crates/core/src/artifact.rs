//! Versioned container bundling a trained pipeline: network weights,
//! patch/zone configuration, feature scaler, selection outcome, and the
//! personalized threshold. Everything needed to predict from a new study.
//!
//! Layout (integers little-endian):
//!   magic "GCPL" | format version u32 | net blob length u64 | net blob
//!   (the network weights container) | SHA-256 of the net blob [32 bytes] |
//!   meta length u64 | meta JSON (UTF-8) | end of file.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::convnet::io::{decode_weights, encode_weights};
use crate::convnet::NetWeights;
use crate::error::{Error, Result};
use crate::eval::GrowthZoneConfig;
use crate::features::{Scaler, FEATURE_COUNT};
use crate::learner::{PersonalizedThreshold, SelectionResult, SvmConfig};
use crate::preprocess::PatchConfig;

pub const ARTIFACT_MAGIC: &[u8; 4] = b"GCPL";
pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineArtifact {
    pub net: NetWeights<f32>,
    pub patch: PatchConfig,
    pub zone: GrowthZoneConfig,
    pub svm: SvmConfig,
    pub scaler: Scaler,
    pub selection: SelectionResult,
    pub threshold: PersonalizedThreshold,
}

/// The JSON-encoded portion of the container.
#[derive(serde::Serialize, serde::Deserialize)]
struct ArtifactMeta {
    patch: PatchConfig,
    zone: GrowthZoneConfig,
    svm: SvmConfig,
    scaler: Scaler,
    selection: SelectionResult,
    threshold: PersonalizedThreshold,
}

impl PipelineArtifact {
    pub fn validate(&self) -> Result<()> {
        self.patch.validate()?;
        self.zone.validate()?;
        self.svm.validate()?;
        self.scaler.validate()?;
        self.net.spec.validate()?;
        if self.net.spec.input_hw != self.patch.patch_size {
            return Err(Error::invalid(
                "pipeline artifact",
                format!(
                    "net expects {}-voxel patches, patch config produces {}",
                    self.net.spec.input_hw, self.patch.patch_size
                ),
            ));
        }
        if !self.net.tensors.all_finite() {
            return Err(Error::invalid("pipeline artifact", "non-finite net weights"));
        }
        let sel = &self.selection;
        let mut seen = vec![false; FEATURE_COUNT];
        if sel.ranking.len() != FEATURE_COUNT {
            return Err(Error::invalid(
                "pipeline artifact",
                format!("ranking covers {} features, expected {FEATURE_COUNT}", sel.ranking.len()),
            ));
        }
        for &f in &sel.ranking {
            if f >= FEATURE_COUNT || seen[f] {
                return Err(Error::invalid("pipeline artifact", "ranking is not a permutation"));
            }
            seen[f] = true;
        }
        if !(2..=FEATURE_COUNT).contains(&sel.chosen_m) {
            return Err(Error::invalid(
                "pipeline artifact",
                format!("chosen m {} outside 2..={FEATURE_COUNT}", sel.chosen_m),
            ));
        }
        if sel.acc_by_m.len() != FEATURE_COUNT - 1 {
            return Err(Error::invalid(
                "pipeline artifact",
                format!("expected {} accuracy entries, got {}", FEATURE_COUNT - 1, sel.acc_by_m.len()),
            ));
        }
        if sel.acc_by_m.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::invalid("pipeline artifact", "accuracy outside [0, 1]"));
        }
        sel.model.validate()?;
        if sel.model.selected.len() != sel.chosen_m {
            return Err(Error::invalid(
                "pipeline artifact",
                format!(
                    "model selects {} features but chosen m is {}",
                    sel.model.selected.len(),
                    sel.chosen_m
                ),
            ));
        }
        let t = &self.threshold;
        if !t.threshold.is_finite() || !t.rvd.is_finite() || t.rvd < 0.0 {
            return Err(Error::invalid(
                "pipeline artifact",
                format!("bad personalized threshold {t:?}"),
            ));
        }
        Ok(())
    }
}

pub fn encode_artifact(artifact: &PipelineArtifact) -> Result<Vec<u8>> {
    artifact.validate()?;
    let net_blob = encode_weights(&artifact.net);
    let meta = ArtifactMeta {
        patch: artifact.patch,
        zone: artifact.zone,
        svm: artifact.svm,
        scaler: artifact.scaler.clone(),
        selection: artifact.selection.clone(),
        threshold: artifact.threshold,
    };
    let meta_json = serde_json::to_vec(&meta)
        .map_err(|e| Error::invalid("pipeline artifact", format!("meta serialization: {e}")))?;
    let mut out = Vec::with_capacity(4 + 4 + 8 + net_blob.len() + 32 + 8 + meta_json.len());
    out.extend_from_slice(ARTIFACT_MAGIC);
    out.extend_from_slice(&ARTIFACT_VERSION.to_le_bytes());
    out.extend_from_slice(&(net_blob.len() as u64).to_le_bytes());
    out.extend_from_slice(&net_blob);
    let hash: [u8; 32] = Sha256::digest(&net_blob).into();
    out.extend_from_slice(&hash);
    out.extend_from_slice(&(meta_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta_json);
    Ok(out)
}

pub fn decode_artifact(bytes: &[u8]) -> Result<PipelineArtifact> {
    let need = |pos: usize, n: usize| -> Result<()> {
        if pos + n > bytes.len() {
            Err(Error::invalid("pipeline artifact", "truncated payload"))
        } else {
            Ok(())
        }
    };
    need(0, 8)?;
    if &bytes[..4] != ARTIFACT_MAGIC {
        return Err(Error::invalid("pipeline artifact", "bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != ARTIFACT_VERSION {
        return Err(Error::invalid(
            "pipeline artifact",
            format!("unsupported format version {version}"),
        ));
    }
    let mut pos = 8;
    need(pos, 8)?;
    let net_len = u64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap()) as usize;
    pos += 8;
    need(pos, net_len)?;
    let net_blob = &bytes[pos..pos + net_len];
    pos += net_len;
    need(pos, 32)?;
    let stored_hash = &bytes[pos..pos + 32];
    pos += 32;
    let hash: [u8; 32] = Sha256::digest(net_blob).into();
    if stored_hash != hash {
        return Err(Error::invalid("pipeline artifact", "net blob hash mismatch"));
    }
    let net = decode_weights(net_blob)?;
    need(pos, 8)?;
    let meta_len = u64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap()) as usize;
    pos += 8;
    need(pos, meta_len)?;
    let meta: ArtifactMeta = serde_json::from_slice(&bytes[pos..pos + meta_len])
        .map_err(|e| Error::invalid("pipeline artifact", format!("meta JSON: {e}")))?;
    pos += meta_len;
    if pos != bytes.len() {
        return Err(Error::invalid("pipeline artifact", "trailing bytes after meta"));
    }
    let artifact = PipelineArtifact {
        net,
        patch: meta.patch,
        zone: meta.zone,
        svm: meta.svm,
        scaler: meta.scaler,
        selection: meta.selection,
        threshold: meta.threshold,
    };
    artifact.validate()?;
    Ok(artifact)
}

pub fn save_artifact(path: &Path, artifact: &PipelineArtifact) -> Result<()> {
    std::fs::write(path, encode_artifact(artifact)?).map_err(|e| Error::io(path, e))
}

pub fn load_artifact(path: &Path) -> Result<PipelineArtifact> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_artifact(&bytes).map_err(|e| match e {
        Error::Invalid { what, why } => Error::format(path, format!("{what}: {why}")),
        other => other,
    })
}
