//! Case and cohort storage.
//!
//! A case directory holds three visits plus clinical data:
//!
//! ```text
//! case000/
//!   clinical.json
//!   t1_suv.hdr  t1_suv.raw   t1_icvf.hdr t1_icvf.raw   t1_mask.hdr t1_mask.raw
//!   t2_...      t3_...
//! ```
//!
//! A cohort directory holds case directories plus `cohort.json` listing them
//! in evaluation order. The patient id of a case is its directory name.

use std::path::Path;

use crate::error::{Error, Result};
use crate::rawvol;
use crate::volume::{ClinicalRecord, LongitudinalCase, Study};

/// Schema of `clinical.json`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClinicalFile {
    pub age_years: f64,
    pub gender: u8,
    pub height_m: f64,
    pub weight_kg: f64,
    /// Days since first visit, one entry per visit: `[0, d2, d3]`, strictly
    /// increasing.
    pub acquisition_days: Vec<i64>,
}

impl ClinicalFile {
    pub fn validate(&self) -> Result<()> {
        self.record().validate()?;
        if self.acquisition_days.len() != 3 {
            return Err(Error::invalid(
                "clinical file",
                format!("acquisition_days must have 3 entries, got {}", self.acquisition_days.len()),
            ));
        }
        if self.acquisition_days[0] != 0 {
            return Err(Error::invalid(
                "clinical file",
                format!("first acquisition day must be 0, got {}", self.acquisition_days[0]),
            ));
        }
        if self.acquisition_days[0] >= self.acquisition_days[1]
            || self.acquisition_days[1] >= self.acquisition_days[2]
        {
            return Err(Error::invalid(
                "clinical file",
                format!("acquisition_days must be strictly increasing, got {:?}", self.acquisition_days),
            ));
        }
        Ok(())
    }

    pub fn record(&self) -> ClinicalRecord {
        ClinicalRecord {
            age_years: self.age_years,
            gender: self.gender,
            height_m: self.height_m,
            weight_kg: self.weight_kg,
        }
    }
}

/// Parses and validates `clinical.json` content.
pub fn parse_clinical_json(bytes: &[u8]) -> Result<ClinicalFile> {
    let file: ClinicalFile = serde_json::from_slice(bytes)
        .map_err(|e| Error::invalid("clinical file", e.to_string()))?;
    file.validate()?;
    Ok(file)
}

pub fn encode_clinical_json(file: &ClinicalFile) -> String {
    let mut s = serde_json::to_string_pretty(file).expect("clinical file serializes");
    s.push('\n');
    s
}

/// Schema of `cohort.json`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortManifest {
    /// Case directory names relative to the cohort directory, in evaluation
    /// (fold) order.
    pub cases: Vec<String>,
}

impl CohortManifest {
    pub fn validate(&self) -> Result<()> {
        if self.cases.is_empty() {
            return Err(Error::invalid("cohort manifest", "case list is empty"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in &self.cases {
            if name.is_empty()
                || name.contains('/')
                || name.contains('\\')
                || name == "."
                || name == ".."
            {
                return Err(Error::invalid(
                    "cohort manifest",
                    format!("case name {name:?} must be a plain directory name"),
                ));
            }
            if !seen.insert(name) {
                return Err(Error::invalid(
                    "cohort manifest",
                    format!("duplicate case name {name:?}"),
                ));
            }
        }
        Ok(())
    }
}

/// Parses and validates `cohort.json` content.
pub fn parse_cohort_manifest(bytes: &[u8]) -> Result<CohortManifest> {
    let manifest: CohortManifest = serde_json::from_slice(bytes)
        .map_err(|e| Error::invalid("cohort manifest", e.to_string()))?;
    manifest.validate()?;
    Ok(manifest)
}

pub fn encode_cohort_manifest(manifest: &CohortManifest) -> String {
    let mut s = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    s.push('\n');
    s
}

fn channel_paths(dir: &Path, timepoint: u8) -> [std::path::PathBuf; 3] {
    [
        dir.join(format!("t{timepoint}_suv.hdr")),
        dir.join(format!("t{timepoint}_icvf.hdr")),
        dir.join(format!("t{timepoint}_mask.hdr")),
    ]
}

/// Loads one case; the patient id is taken from the directory name.
pub fn load_case(dir: &Path) -> Result<LongitudinalCase> {
    let patient_id = dir
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::format(dir, "case directory has no usable name".to_string()))?
        .to_string();
    let clin_path = dir.join("clinical.json");
    let clin_bytes = std::fs::read(&clin_path).map_err(|e| Error::io(&clin_path, e))?;
    let clin = parse_clinical_json(&clin_bytes)
        .map_err(|e| Error::format(&clin_path, e.to_string()))?;
    let mut studies = Vec::with_capacity(3);
    for k in 1..=3u8 {
        let [suv_p, icvf_p, mask_p] = channel_paths(dir, k);
        let suv = rawvol::load_volume(&suv_p)?;
        let icvf = rawvol::load_volume(&icvf_p)?;
        let mask = rawvol::load_mask(&mask_p)?;
        let day = clin.acquisition_days[usize::from(k) - 1];
        studies.push(
            Study::new(patient_id.clone(), k, day, suv, icvf, mask)
                .map_err(|e| Error::format(dir, e.to_string()))?,
        );
    }
    let studies: [Study; 3] = studies.try_into().expect("exactly three studies");
    LongitudinalCase::new(patient_id, studies, clin.record())
        .map_err(|e| Error::format(dir, e.to_string()))
}

/// Writes one case into `dir` (created if missing). The directory name
/// becomes the patient id on reload; the in-memory id is not persisted.
pub fn save_case(case: &LongitudinalCase, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let clin = ClinicalFile {
        age_years: case.clinical.age_years,
        gender: case.clinical.gender,
        height_m: case.clinical.height_m,
        weight_kg: case.clinical.weight_kg,
        acquisition_days: case.studies.iter().map(|s| s.acquisition_day).collect(),
    };
    let clin_path = dir.join("clinical.json");
    std::fs::write(&clin_path, encode_clinical_json(&clin)).map_err(|e| Error::io(&clin_path, e))?;
    for study in &case.studies {
        let [suv_p, icvf_p, mask_p] = channel_paths(dir, study.timepoint);
        rawvol::save_volume(&study.suv, &suv_p)?;
        rawvol::save_volume(&study.icvf, &icvf_p)?;
        rawvol::save_mask(&study.mask, &mask_p)?;
    }
    Ok(())
}

/// Loads every case listed in `cohort.json`, in manifest order.
pub fn load_cohort(dir: &Path) -> Result<Vec<LongitudinalCase>> {
    let manifest_path = dir.join("cohort.json");
    let bytes = std::fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest = parse_cohort_manifest(&bytes)
        .map_err(|e| Error::format(&manifest_path, e.to_string()))?;
    manifest.cases.iter().map(|name| load_case(&dir.join(name))).collect()
}

/// Writes all cases plus the manifest. Case directories are named from each
/// case's patient id.
pub fn save_cohort(cases: &[LongitudinalCase], dir: &Path) -> Result<()> {
    let manifest = CohortManifest {
        cases: cases.iter().map(|c| c.patient_id.clone()).collect(),
    };
    manifest.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for case in cases {
        save_case(case, &dir.join(&case.patient_id))?;
    }
    let manifest_path = dir.join("cohort.json");
    std::fs::write(&manifest_path, encode_cohort_manifest(&manifest))
        .map_err(|e| Error::io(&manifest_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{ScalarVolume, TumorMask};

    fn fixture_case(id: &str) -> LongitudinalCase {
        let dims = (8, 8, 8);
        let sp = (1.0, 1.0, 1.5);
        let mk_study = |tp: u8, day: i64, r: f64| {
            let mut mask = vec![0u8; 8 * 8 * 8];
            for z in 0..8usize {
                for y in 0..8usize {
                    for x in 0..8usize {
                        let d2 = (x as f64 - 4.0).powi(2)
                            + (y as f64 - 4.0).powi(2)
                            + (z as f64 - 4.0).powi(2);
                        if d2 <= r * r {
                            mask[x + 8 * (y + 8 * z)] = 1;
                        }
                    }
                }
            }
            let mask = TumorMask::new(dims, sp, mask).unwrap();
            let suv: Vec<f32> =
                mask.data().iter().map(|&m| 2.0 + 8.0 * m as f32).collect();
            let icvf: Vec<f32> =
                mask.data().iter().map(|&m| 0.2 + 0.5 * m as f32).collect();
            Study::new(
                id.to_string(),
                tp,
                day,
                ScalarVolume::new(dims, sp, suv).unwrap(),
                ScalarVolume::new(dims, sp, icvf).unwrap(),
                mask,
            )
            .unwrap()
        };
        LongitudinalCase::new(
            id.to_string(),
            [mk_study(1, 0, 1.5), mk_study(2, 380, 2.0), mk_study(3, 850, 2.5)],
            ClinicalRecord { age_years: 52.0, gender: 1, height_m: 1.82, weight_kg: 91.0 },
        )
        .unwrap()
    }

    #[test]
    fn clinical_json_round_trip() {
        let file = ClinicalFile {
            age_years: 48.6,
            gender: 0,
            height_m: 1.7,
            weight_kg: 88.1,
            acquisition_days: vec![0, 400, 818],
        };
        let text = encode_clinical_json(&file);
        assert_eq!(parse_clinical_json(text.as_bytes()).unwrap(), file);
    }

    #[test]
    fn clinical_json_rejects_bad_content() {
        let cases = [
            r#"{}"#,
            r#"{"age_years": 50, "gender": 0, "height_m": 1.7, "weight_kg": 80}"#,
            r#"{"age_years": 50, "gender": 0, "height_m": 1.7, "weight_kg": 80, "acquisition_days": [0, 400]}"#,
            r#"{"age_years": 50, "gender": 0, "height_m": 1.7, "weight_kg": 80, "acquisition_days": [5, 400, 800]}"#,
            r#"{"age_years": 50, "gender": 0, "height_m": 1.7, "weight_kg": 80, "acquisition_days": [0, 800, 400]}"#,
            r#"{"age_years": 50, "gender": 3, "height_m": 1.7, "weight_kg": 80, "acquisition_days": [0, 400, 800]}"#,
            r#"{"age_years": -4, "gender": 0, "height_m": 1.7, "weight_kg": 80, "acquisition_days": [0, 400, 800]}"#,
            r#"{"age_years": 50, "gender": 0, "height_m": 1.7, "weight_kg": 80, "acquisition_days": [0, 400, 800], "extra": 1}"#,
            r#"not json"#,
        ];
        for text in cases {
            assert!(parse_clinical_json(text.as_bytes()).is_err(), "accepted: {text}");
        }
    }

    #[test]
    fn manifest_round_trip_and_validation() {
        let m = CohortManifest { cases: vec!["case000".into(), "case001".into()] };
        let text = encode_cohort_manifest(&m);
        assert_eq!(parse_cohort_manifest(text.as_bytes()).unwrap(), m);

        for bad in [
            r#"{"cases": []}"#,
            r#"{"cases": ["a", "a"]}"#,
            r#"{"cases": ["../x"]}"#,
            r#"{"cases": ["a/b"]}"#,
            r#"{"cases": [""]}"#,
            r#"{"cases": ["ok"], "extra": true}"#,
        ] {
            assert!(parse_cohort_manifest(bad.as_bytes()).is_err(), "accepted: {bad}");
        }
    }

    #[test]
    fn case_round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let case = fixture_case("case007");
        let case_dir = dir.path().join("case007");
        save_case(&case, &case_dir).unwrap();
        let back = load_case(&case_dir).unwrap();
        assert_eq!(back, case);
    }

    #[test]
    fn patient_id_comes_from_directory_name() {
        let dir = tempfile::tempdir().unwrap();
        let case = fixture_case("original");
        let case_dir = dir.path().join("renamed");
        save_case(&case, &case_dir).unwrap();
        let back = load_case(&case_dir).unwrap();
        assert_eq!(back.patient_id, "renamed");
        assert_eq!(back.studies[0].patient_id, "renamed");
    }

    #[test]
    fn cohort_round_trip_preserves_order() {
        let dir = tempfile::tempdir().unwrap();
        let cases = vec![fixture_case("caseB"), fixture_case("caseA")];
        save_cohort(&cases, dir.path()).unwrap();
        let back = load_cohort(dir.path()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].patient_id, "caseB");
        assert_eq!(back[1].patient_id, "caseA");
    }

    #[test]
    fn load_case_missing_channel_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let case = fixture_case("case000");
        let case_dir = dir.path().join("case000");
        save_case(&case, &case_dir).unwrap();
        std::fs::remove_file(case_dir.join("t2_icvf.raw")).unwrap();
        assert!(matches!(load_case(&case_dir).unwrap_err(), Error::Io { .. }));
    }
}
