//! Per-voxel feature vectors combining learned descriptors, geometry, and
//! clinical covariates, plus the z-score scaler fitted on group data.
//!
//! Feature order is a file-format and model-artifact contract; changing it
//! invalidates stored rankings, scalers, and hyperplanes.

use crate::error::{Error, Result};
use crate::preprocess::PatchSample;
use crate::volume::ClinicalRecord;

pub const FEATURE_COUNT: usize = 9;

/// Canonical feature names, in vector order.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "deep_0",
    "deep_1",
    "time_interval",
    "signed_distance",
    "tumor_volume",
    "age",
    "gender",
    "height",
    "weight",
];

/// Index of the elapsed-time feature, kept by the selection prior.
pub const TIME_INTERVAL_INDEX: usize = 2;

pub type FeatureVector = [f64; FEATURE_COUNT];

/// Combines the two softmax outputs, the elapsed time of the transition,
/// the sample's geometry, and the patient record into one vector.
pub fn assemble_features(
    deep: [f64; 2],
    interval_days: i64,
    sample: &PatchSample,
    clinical: &ClinicalRecord,
) -> Result<FeatureVector> {
    if !(deep[0].is_finite() && deep[1].is_finite()) {
        return Err(Error::invalid("features", "non-finite deep descriptor"));
    }
    if !(0.0..=1.0).contains(&deep[0]) || (deep[0] + deep[1] - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(
            "features",
            format!("deep descriptors must be a softmax pair, got {deep:?}"),
        ));
    }
    if interval_days <= 0 {
        return Err(Error::invalid(
            "features",
            format!("interval must be positive, got {interval_days} days"),
        ));
    }
    if !sample.signed_distance_vox.is_finite() || !sample.tumor_volume_mm3.is_finite() {
        return Err(Error::invalid("features", "non-finite sample geometry"));
    }
    clinical.validate()?;
    Ok([
        deep[0],
        deep[1],
        interval_days as f64,
        sample.signed_distance_vox,
        sample.tumor_volume_mm3,
        clinical.age_years,
        f64::from(clinical.gender),
        clinical.height_m,
        clinical.weight_kg,
    ])
}

/// Per-feature z-score normalization fitted on the group set. Uses the
/// population standard deviation; constant features get unit scale so they
/// pass through centered.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn fit(vectors: &[FeatureVector]) -> Result<Scaler> {
        if vectors.is_empty() {
            return Err(Error::invalid("scaler", "cannot fit on an empty set"));
        }
        let n = vectors.len() as f64;
        let mut mean = vec![0.0; FEATURE_COUNT];
        for v in vectors {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut std = vec![0.0; FEATURE_COUNT];
        for v in vectors {
            for ((s, m), x) in std.iter_mut().zip(&mean).zip(v) {
                *s += (x - m) * (x - m);
            }
        }
        for (i, s) in std.iter_mut().enumerate() {
            *s = (*s / n).sqrt();
            if *s == 0.0 {
                log::warn!(
                    "feature {} is constant in the group set; leaving it unscaled",
                    FEATURE_NAMES[i]
                );
                *s = 1.0;
            }
        }
        let scaler = Scaler { mean, std };
        scaler.validate()?;
        Ok(scaler)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != FEATURE_COUNT || self.std.len() != FEATURE_COUNT {
            return Err(Error::invalid(
                "scaler",
                format!(
                    "expected {FEATURE_COUNT} means and stds, got {} and {}",
                    self.mean.len(),
                    self.std.len()
                ),
            ));
        }
        for (i, (m, s)) in self.mean.iter().zip(&self.std).enumerate() {
            if !m.is_finite() || !s.is_finite() || *s <= 0.0 {
                return Err(Error::invalid(
                    "scaler",
                    format!("feature {}: mean {m}, std {s}", FEATURE_NAMES[i]),
                ));
            }
        }
        Ok(())
    }

    pub fn apply(&self, v: &FeatureVector) -> FeatureVector {
        let mut out = [0.0; FEATURE_COUNT];
        for i in 0..FEATURE_COUNT {
            out[i] = (v[i] - self.mean[i]) / self.std[i];
        }
        out
    }
}

/// Renders labeled vectors as CSV: canonical header, one row per sample,
/// label last as 0/1. Floats use the shortest representation that parses
/// back exactly, so files are byte-stable across runs.
pub fn encode_feature_csv(rows: &[(FeatureVector, bool)]) -> String {
    let mut out = String::new();
    out.push_str(&FEATURE_NAMES.join(","));
    out.push_str(",label\n");
    for (v, label) in rows {
        for x in v {
            out.push_str(&format!("{x},"));
        }
        out.push_str(if *label { "1\n" } else { "0\n" });
    }
    out
}

pub fn parse_feature_csv(text: &str) -> Result<Vec<(FeatureVector, bool)>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::invalid("feature csv", "empty input"))?;
    let expected = format!("{},label", FEATURE_NAMES.join(","));
    if header != expected {
        return Err(Error::invalid(
            "feature csv",
            format!("bad header: expected {expected:?}, got {header:?}"),
        ));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != FEATURE_COUNT + 1 {
            return Err(Error::invalid(
                "feature csv",
                format!("line {}: expected {} fields, got {}", lineno + 2, FEATURE_COUNT + 1, fields.len()),
            ));
        }
        let mut v = [0.0; FEATURE_COUNT];
        for (i, f) in fields[..FEATURE_COUNT].iter().enumerate() {
            let x: f64 = f.parse().map_err(|_| {
                Error::invalid(
                    "feature csv",
                    format!("line {}: {} is not a number: {f:?}", lineno + 2, FEATURE_NAMES[i]),
                )
            })?;
            if !x.is_finite() {
                return Err(Error::invalid(
                    "feature csv",
                    format!("line {}: {} is not finite", lineno + 2, FEATURE_NAMES[i]),
                ));
            }
            v[i] = x;
        }
        let label = match fields[FEATURE_COUNT] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::invalid(
                    "feature csv",
                    format!("line {}: label must be 0 or 1, got {other:?}", lineno + 2),
                ));
            }
        };
        rows.push((v, label));
    }
    Ok(rows)
}
