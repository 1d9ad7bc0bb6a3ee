//! The leave-one-out fold protocol: train on every other patient's two
//! transitions, select features against the target's first transition,
//! personalize the decision threshold there, then predict the target's
//! third visit from its second and score against the sealed ground truth.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::artifact::PipelineArtifact;
use crate::convnet::{train_seeded, EpochStats, Inference, NetSpec, NetWeights, TrainHyper, TrainSample};
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, growth_zone, ConfusionCounts, GrowthZone, GrowthZoneConfig, Metrics};
use crate::features::{assemble_features, FeatureVector, Scaler, TIME_INTERVAL_INDEX};
use crate::growthsim::{baseline_predict, fit_baseline};
use crate::learner::{
    personalize_threshold, rfe_rank, select_model, PersonalizedThreshold, SvmConfig, SvmModel,
};
use crate::preprocess::{balance_classes, extract_patch_channels, extract_patches, PatchConfig, PatchSample};
use crate::rawvol::content_hash;
use crate::seed::{stage_rng, stage_seed, Stage};
use crate::volume::{
    signed_distance_with_index, tumor_volume_mm3, ClinicalRecord, LongitudinalCase, Study,
    SurfaceIndex, TumorMask,
};

/// Everything a run needs besides the cohort: architecture, patch geometry,
/// optimizer settings, learner settings, zone margins, and the master seed.
/// Per-fold RNG streams (balancing, net training) are derived from
/// `master_seed`, so `hyper.seed` is ignored here.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub net: NetSpec,
    pub patch: PatchConfig,
    pub hyper: TrainHyper,
    pub svm: SvmConfig,
    pub zone: GrowthZoneConfig,
    pub master_seed: u64,
    /// Skip the reaction-diffusion baseline comparison.
    pub skip_baseline: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.patch.validate()?;
        self.hyper.validate()?;
        self.svm.validate()?;
        self.zone.validate()?;
        if self.net.input_hw != self.patch.patch_size {
            return Err(Error::invalid(
                "experiment config",
                format!(
                    "net expects {}-voxel patches, patch config produces {}",
                    self.net.input_hw, self.patch.patch_size
                ),
            ));
        }
        if self.net.input_channels != 3 {
            return Err(Error::invalid(
                "experiment config",
                format!("patches have 3 channels, net expects {}", self.net.input_channels),
            ));
        }
        Ok(())
    }
}

/// Parses and validates an experiment config JSON document. Missing fields
/// take defaults (also field by field inside nested sections); unknown
/// fields are rejected.
pub fn parse_experiment_config(bytes: &[u8]) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_json::from_slice(bytes)
        .map_err(|e| Error::invalid("experiment config", e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn encode_experiment_config(cfg: &ExperimentConfig) -> String {
    let mut s = serde_json::to_string_pretty(cfg).expect("config serializes");
    s.push('\n');
    s
}

/// A full run as the command line sees it: the experiment parameters plus
/// orchestration fields (provenance path, output directory, dump toggles).
/// The resolved value is snapshotted beside every run's outputs.
#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub net: NetSpec,
    pub patch: PatchConfig,
    pub hyper: TrainHyper,
    pub svm: SvmConfig,
    pub zone: GrowthZoneConfig,
    pub master_seed: u64,
    /// Skip the reaction-diffusion baseline comparison.
    pub skip_baseline: bool,
    /// Phantom config the cohort was generated from, recorded for provenance.
    pub phantom_config: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// Write a few patch planes per fold as portable graymaps.
    pub dump_patches: bool,
    /// Write the held-out transition's unscaled feature vectors per fold.
    pub dump_features: bool,
}

impl RunConfig {
    /// The computational slice of the config, as [`run_fold`] consumes it.
    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            net: self.net,
            patch: self.patch,
            hyper: self.hyper,
            svm: self.svm,
            zone: self.zone,
            master_seed: self.master_seed,
            skip_baseline: self.skip_baseline,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment().validate()
    }
}

/// Parses and validates a run config JSON document. Missing fields take
/// defaults; unknown fields are rejected.
pub fn parse_run_config(bytes: &[u8]) -> Result<RunConfig> {
    let cfg: RunConfig = serde_json::from_slice(bytes)
        .map_err(|e| Error::invalid("run config", e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn encode_run_config(cfg: &RunConfig) -> String {
    let mut s = serde_json::to_string_pretty(cfg).expect("config serializes");
    s.push('\n');
    s
}

/// SHA-256 over a study's image payloads, mask, and visit metadata.
pub fn study_hash(study: &Study) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(content_hash(&study.suv));
    h.update(content_hash(&study.icvf));
    h.update(study.mask.data());
    h.update(study.acquisition_day.to_le_bytes());
    h.update([study.timepoint]);
    h.finalize().into()
}

/// The evaluation visit, sealed at fold entry. The study is reachable only
/// through [`SealedStudy::unseal`], which re-hashes the content and fails if
/// it no longer matches the seal, so the fold protocol both structurally
/// cannot and verifiably did not consume the ground truth before scoring.
pub struct SealedStudy {
    study: Study,
    seal: [u8; 32],
}

impl SealedStudy {
    pub fn new(study: Study) -> Self {
        let seal = study_hash(&study);
        SealedStudy { study, seal }
    }

    #[cfg(test)]
    fn with_seal(study: Study, seal: [u8; 32]) -> Self {
        SealedStudy { study, seal }
    }

    pub fn unseal(self) -> Result<Study> {
        if study_hash(&self.study) != self.seal {
            return Err(Error::invalid(
                "sealed study",
                "content changed between seal and evaluation",
            ));
        }
        Ok(self.study)
    }
}

/// The fitted per-voxel decision function: net for the learned descriptors,
/// the group scaler, and the selected-feature hyperplane.
pub struct VoxelClassifier<'a> {
    pub net: &'a NetWeights<f32>,
    pub scaler: &'a Scaler,
    pub model: &'a SvmModel,
    pub patch_size: usize,
}

impl VoxelClassifier<'_> {
    /// Decision values for every zone voxel of `study`, aligned with the
    /// zone's (z, y, x) scan order. The surface index and tumor volume are
    /// shared across the zone; each voxel costs one patch cut, one net
    /// forward pass, and one projected dot product.
    pub fn zone_decisions(
        &self,
        study: &Study,
        clinical: &ClinicalRecord,
        interval_days: i64,
        zone: &GrowthZone,
    ) -> Result<Vec<f64>> {
        if zone.vol_dims != study.dims() {
            return Err(Error::invalid(
                "zone decisions",
                format!("zone built for dims {:?}, study has {:?}", zone.vol_dims, study.dims()),
            ));
        }
        let surface = SurfaceIndex::new(&study.mask);
        let volume = tumor_volume_mm3(&study.mask);
        let mut inference = Inference::new(self.net)?;
        let mut out = Vec::with_capacity(zone.voxel_count());
        for center in zone.voxels() {
            let channels = extract_patch_channels(study, center, self.patch_size)?;
            let deep = inference.deep_features(&channels)?;
            let sample = PatchSample {
                center,
                channels,
                label: false, // unused by feature assembly
                signed_distance_vox: signed_distance_with_index(&study.mask, &surface, center)?,
                tumor_volume_mm3: volume,
            };
            let features = assemble_features(deep, interval_days, &sample, clinical)?;
            let scaled = self.scaler.apply(&features);
            out.push(self.model.decision_value(&self.model.project(&scaled)?)?);
        }
        Ok(out)
    }
}

/// Predicts the future mask: every growth-zone voxel of `current` whose
/// decision value reaches the personalized threshold becomes foreground;
/// everything outside the zone stays background.
pub fn predict_mask(
    artifact: &PipelineArtifact,
    current: &Study,
    clinical: &ClinicalRecord,
    interval_days: i64,
) -> Result<TumorMask> {
    artifact.validate()?;
    let zone = growth_zone(&current.mask, &artifact.zone)?;
    let classifier = VoxelClassifier {
        net: &artifact.net,
        scaler: &artifact.scaler,
        model: &artifact.selection.model,
        patch_size: artifact.patch.patch_size,
    };
    let decisions = classifier.zone_decisions(current, clinical, interval_days, &zone)?;
    let (nx, ny, _) = current.dims();
    let mut data = vec![0u8; nx * ny * current.dims().2];
    for ((x, y, z), &d) in zone.voxels().zip(&decisions) {
        if d >= artifact.threshold.threshold {
            data[x + nx * (y + ny * z)] = 1;
        }
    }
    TumorMask::new(current.dims(), current.spacing(), data)
}

/// Unscaled feature vectors plus labels for a batch of extracted samples.
/// The caller owns the inference context so consecutive batches reuse its
/// activation buffers.
pub fn sample_features(
    inference: &mut Inference<'_, f32>,
    samples: &[PatchSample],
    interval_days: i64,
    clinical: &ClinicalRecord,
) -> Result<(Vec<FeatureVector>, Vec<bool>)> {
    let mut xs = Vec::with_capacity(samples.len());
    let mut ys = Vec::with_capacity(samples.len());
    for s in samples {
        let deep = inference.deep_features(&s.channels)?;
        xs.push(assemble_features(deep, interval_days, s, clinical)?);
        ys.push(s.label);
    }
    Ok((xs, ys))
}

/// Wall-clock seconds per fold stage. Reported separately from the
/// deterministic outputs.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize)]
pub struct FoldTimings {
    pub extract_s: f64,
    pub net_train_s: f64,
    pub features_s: f64,
    pub selection_s: f64,
    pub personalize_s: f64,
    pub predict_s: f64,
    pub evaluate_s: f64,
    pub baseline_s: f64,
    pub total_s: f64,
}

/// Everything recorded about one fold. Serializes deterministically;
/// timings are excluded and reported through [`FoldOutcome`] instead.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub patient_id: String,
    /// Group transitions trained on; always 2 * (cohort size - 1).
    pub group_pairs: usize,
    pub group_samples: usize,
    pub personalization_samples: usize,
    /// Epoch whose snapshot won validation (the returned net).
    pub best_epoch: u32,
    pub train_history: Vec<EpochStats>,
    pub ranking: Vec<usize>,
    pub acc_by_m: Vec<f64>,
    pub chosen_m: usize,
    pub selected_features: Vec<usize>,
    pub threshold: PersonalizedThreshold,
    pub zone_voxels: usize,
    pub learned_counts: ConfusionCounts,
    pub learned: Metrics,
    pub identity: Metrics,
    pub baseline: Option<Metrics>,
    pub baseline_train_dice: Option<f64>,
    pub leakage_guard_ok: bool,
    #[serde(skip)]
    pub timings: FoldTimings,
}

/// A fold's result plus the artifacts the report writer and the CLI save:
/// the trained pipeline and the predicted masks for overlays.
#[derive(Debug)]
pub struct FoldOutcome {
    pub result: FoldResult,
    pub artifact: PipelineArtifact,
    pub predicted: TumorMask,
    pub baseline_predicted: Option<TumorMask>,
}

fn tag_fold(e: Error, fold: usize) -> Error {
    match e {
        Error::Invalid { what, why } => Error::Invalid { what, why: format!("fold {fold}: {why}") },
        Error::Numerical { what, why } => {
            Error::Numerical { what, why: format!("fold {fold}: {why}") }
        }
        other => other,
    }
}

/// One balanced group transition with the metadata feature assembly needs.
struct GroupTransition {
    samples: Vec<PatchSample>,
    interval_days: i64,
    clinical: ClinicalRecord,
}

/// Runs the full fold for `cohort[target]`.
pub fn run_fold(
    cohort: &[LongitudinalCase],
    target: usize,
    config: &ExperimentConfig,
) -> Result<FoldOutcome> {
    run_fold_inner(cohort, target, config).map_err(|e| tag_fold(e, target))
}

fn run_fold_inner(
    cohort: &[LongitudinalCase],
    target: usize,
    config: &ExperimentConfig,
) -> Result<FoldOutcome> {
    config.validate()?;
    if cohort.len() < 2 {
        return Err(Error::invalid(
            "fold",
            format!("need at least 2 cases for a group, got {}", cohort.len()),
        ));
    }
    let Some(case) = cohort.get(target) else {
        return Err(Error::invalid(
            "fold",
            format!("target index {target} outside cohort of {}", cohort.len()),
        ));
    };
    let fold_start = Instant::now();
    let mut timings = FoldTimings::default();

    // The prediction horizon (scheduled date of visit 3) is prospective
    // knowledge and parametrizes the task; the visit's images and mask are
    // ground truth and stay sealed until after prediction.
    let interval_pers = case.interval_days(0);
    let interval_pred = case.interval_days(1);
    let sealed = SealedStudy::new(case.studies[2].clone());
    let t1 = &case.studies[0];
    let t2 = &case.studies[1];

    // Group patches: both transitions of every other patient, balanced per
    // transition from one fold-specific stream in cohort order.
    let clock = Instant::now();
    let mut balance_rng = stage_rng(config.master_seed, Stage::FoldBalance(target as u32));
    let mut group: Vec<GroupTransition> = Vec::with_capacity(2 * (cohort.len() - 1));
    for (i, other) in cohort.iter().enumerate() {
        if i == target {
            continue;
        }
        for k in 0..2 {
            let samples =
                extract_patches(&other.studies[k], &other.studies[k + 1].mask, &config.patch)?;
            let samples = if config.patch.balance {
                balance_classes(samples, &mut balance_rng)?
            } else {
                samples
            };
            group.push(GroupTransition {
                samples,
                interval_days: other.interval_days(k),
                clinical: other.clinical,
            });
        }
    }
    let group_pairs = group.len();
    debug_assert_eq!(group_pairs, 2 * (cohort.len() - 1));
    timings.extract_s = clock.elapsed().as_secs_f64();

    // Net training on the pooled group patches.
    let clock = Instant::now();
    let train_set: Vec<TrainSample> = group
        .iter()
        .flat_map(|t| t.samples.iter().map(|s| (s.channels.as_slice(), s.label)))
        .collect();
    let group_samples = train_set.len();
    let hyper = TrainHyper {
        seed: stage_seed(config.master_seed, Stage::FoldNetTrain(target as u32)),
        ..config.hyper
    };
    let (net, train_history) = train_seeded::<f32>(&config.net, &train_set, &hyper)?;
    drop(train_set);
    timings.net_train_s = clock.elapsed().as_secs_f64();
    log::info!(
        "fold {target}: net trained on {group_samples} samples, best epoch {} ({:.1}s)",
        net.epoch_of_origin,
        timings.net_train_s
    );

    // Feature sets: group (drives the scaler, RFE, and the classifiers) and
    // personalization (the target's first transition, raw and unbalanced,
    // used only to score candidate feature counts).
    let clock = Instant::now();
    let mut inference = Inference::new(&net)?;
    let mut group_raw = Vec::with_capacity(group_samples);
    let mut group_y = Vec::with_capacity(group_samples);
    for t in &group {
        let (xs, ys) = sample_features(&mut inference, &t.samples, t.interval_days, &t.clinical)?;
        group_raw.extend(xs);
        group_y.extend(ys);
    }
    let pers_patches = extract_patches(t1, &t2.mask, &config.patch)?;
    let (pers_raw, pers_y) =
        sample_features(&mut inference, &pers_patches, interval_pers, &case.clinical)?;
    drop(pers_patches);
    drop(group);

    let scaler = Scaler::fit(&group_raw)?;
    let scale_all =
        |raw: Vec<FeatureVector>| raw.iter().map(|v| scaler.apply(v).to_vec()).collect::<Vec<_>>();
    let group_x = scale_all(group_raw);
    let pers_x = scale_all(pers_raw);
    timings.features_s = clock.elapsed().as_secs_f64();

    // Rank features on the group set (elapsed time pinned by the prior),
    // then pick the feature count by personalization accuracy.
    let clock = Instant::now();
    let ranking = rfe_rank(&group_x, &group_y, &config.svm, &[TIME_INTERVAL_INDEX])?;
    let selection = select_model(&group_x, &group_y, &pers_x, &pers_y, &ranking, &config.svm)?;
    drop(group_x);
    drop(pers_x);
    timings.selection_s = clock.elapsed().as_secs_f64();
    log::info!(
        "fold {target}: selected {} features {:?}",
        selection.chosen_m,
        selection.model.selected
    );

    // Personalize the threshold on the first transition's growth zone.
    let clock = Instant::now();
    let classifier = VoxelClassifier {
        net: &net,
        scaler: &scaler,
        model: &selection.model,
        patch_size: config.patch.patch_size,
    };
    let zone1 = growth_zone(&t1.mask, &config.zone)?;
    let decisions = classifier.zone_decisions(t1, &case.clinical, interval_pers, &zone1)?;
    let gt_volume = tumor_volume_mm3(&t2.mask);
    let voxel_volume = t2.mask.voxel_volume_mm3();
    let threshold = personalize_threshold(&decisions, gt_volume, voxel_volume)?;
    // Replaying the chosen threshold over the same decisions must reproduce
    // the stored RVD bit for bit; anything else is a counting bug.
    let replayed = decisions.iter().filter(|&&d| d >= threshold.threshold).count();
    let replayed_rvd = (replayed as f64 * voxel_volume - gt_volume).abs() / gt_volume;
    assert_eq!(
        replayed_rvd, threshold.rvd,
        "threshold replay diverged from the personalization search"
    );
    drop(decisions);
    timings.personalize_s = clock.elapsed().as_secs_f64();

    // Predict the third visit from the second. Everything the predictor
    // needs is in the artifact from here on.
    let clock = Instant::now();
    let artifact = PipelineArtifact {
        net,
        patch: config.patch,
        zone: config.zone,
        svm: config.svm,
        scaler,
        selection,
        threshold,
    };
    let predicted = predict_mask(&artifact, t2, &case.clinical, interval_pred)?;
    timings.predict_s = clock.elapsed().as_secs_f64();

    // Only now unseal the ground truth and score.
    let clock = Instant::now();
    let t3 = sealed.unseal()?;
    let leakage_guard_ok = true;
    let zone2 = growth_zone(&t2.mask, &config.zone)?;
    let (learned_counts, learned) = compute_metrics(&predicted, &t3.mask, &zone2)?;
    let (_, identity) = compute_metrics(&t2.mask, &t3.mask, &zone2)?;
    timings.evaluate_s = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let (baseline, baseline_train_dice, baseline_predicted) = if config.skip_baseline {
        (None, None, None)
    } else {
        let fit = fit_baseline(&t1.mask, &t2.mask, interval_pers as f64)?;
        let mask = baseline_predict(&t2.mask, &fit.params, interval_pred as f64)?;
        let (_, metrics) = compute_metrics(&mask, &t3.mask, &zone2)?;
        (Some(metrics), Some(fit.train_dice), Some(mask))
    };
    timings.baseline_s = clock.elapsed().as_secs_f64();
    timings.total_s = fold_start.elapsed().as_secs_f64();
    log::info!(
        "fold {target}: dice learned {:.1} identity {:.1} baseline {} ({:.1}s total)",
        learned.dice_pct,
        identity.dice_pct,
        baseline.map_or("-".to_string(), |b| format!("{:.1}", b.dice_pct)),
        timings.total_s
    );

    let result = FoldResult {
        fold: target,
        patient_id: case.patient_id.clone(),
        group_pairs,
        group_samples,
        personalization_samples: pers_y.len(),
        best_epoch: artifact.net.epoch_of_origin,
        train_history,
        ranking,
        acc_by_m: artifact.selection.acc_by_m.clone(),
        chosen_m: artifact.selection.chosen_m,
        selected_features: artifact.selection.model.selected.clone(),
        threshold,
        zone_voxels: zone2.voxel_count(),
        learned_counts,
        learned,
        identity,
        baseline,
        baseline_train_dice,
        leakage_guard_ok,
        timings,
    };
    Ok(FoldOutcome { result, artifact, predicted, baseline_predicted })
}

/// Population mean / std / range of one metric across folds.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SummaryStat {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// Summarizes nonempty values with the population standard deviation
/// (folds are the whole population of the experiment, not a sample).
pub fn summarize(values: &[f64]) -> SummaryStat {
    assert!(!values.is_empty(), "cannot summarize zero folds");
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    SummaryStat { mean, std: var.sqrt(), min, max }
}

/// The four metric summaries for one predictor.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PredictorSummary {
    pub recall: SummaryStat,
    pub precision: SummaryStat,
    pub dice: SummaryStat,
    pub rvd: SummaryStat,
}

pub fn summarize_metrics<'a>(per_fold: impl Iterator<Item = &'a Metrics> + Clone) -> PredictorSummary {
    let collect = |f: fn(&Metrics) -> f64| per_fold.clone().map(f).collect::<Vec<_>>();
    PredictorSummary {
        recall: summarize(&collect(|m| m.recall_pct)),
        precision: summarize(&collect(|m| m.precision_pct)),
        dice: summarize(&collect(|m| m.dice_pct)),
        rvd: summarize(&collect(|m| m.rvd_pct)),
    }
}

/// Per-fold results plus cross-fold summaries; the deterministic record of
/// one cross-validation run.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct LoocvReport {
    pub config: ExperimentConfig,
    pub folds: Vec<FoldResult>,
    pub learned: PredictorSummary,
    pub identity: PredictorSummary,
    pub baseline: Option<PredictorSummary>,
}

/// A finished run: the report plus the per-fold artifacts and predictions.
#[derive(Debug)]
pub struct LoocvRun {
    pub report: LoocvReport,
    pub outcomes: Vec<FoldOutcome>,
}

/// Leave-one-out over the whole cohort, one fold per case, optionally with
/// `jobs` folds in flight at once. Results are assembled in fold order, so
/// output does not depend on scheduling; any fold failure aborts the run
/// with that fold's id in the error.
pub fn run_loocv(
    cohort: &[LongitudinalCase],
    config: &ExperimentConfig,
    jobs: usize,
) -> Result<LoocvRun> {
    config.validate()?;
    if cohort.len() < 3 {
        return Err(Error::invalid(
            "loocv",
            format!("need at least 3 cases, got {}", cohort.len()),
        ));
    }
    if jobs == 0 {
        return Err(Error::invalid("loocv", "jobs must be >= 1"));
    }
    let n = cohort.len();
    let mut slots: Vec<Option<Result<FoldOutcome>>> = (0..n).map(|_| None).collect();
    if jobs == 1 {
        for (target, slot) in slots.iter_mut().enumerate() {
            *slot = Some(run_fold(cohort, target, config));
        }
    } else {
        let next = AtomicUsize::new(0);
        std::thread::scope(|s| {
            let (tx, rx) = mpsc::channel();
            for _ in 0..jobs.min(n) {
                let tx = tx.clone();
                let next = &next;
                s.spawn(move || loop {
                    let target = next.fetch_add(1, Ordering::SeqCst);
                    if target >= n {
                        break;
                    }
                    if tx.send((target, run_fold(cohort, target, config))).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            for (target, outcome) in rx {
                slots[target] = Some(outcome);
            }
        });
    }
    let mut outcomes = Vec::with_capacity(n);
    for slot in slots {
        outcomes.push(slot.expect("every fold index was dispatched")?);
    }

    let results: Vec<&FoldResult> = outcomes.iter().map(|o| &o.result).collect();
    let learned = summarize_metrics(results.iter().map(|r| &r.learned));
    let identity = summarize_metrics(results.iter().map(|r| &r.identity));
    let baseline = if config.skip_baseline {
        None
    } else {
        Some(summarize_metrics(results.iter().map(|r| {
            r.baseline.as_ref().expect("baseline ran in every fold")
        })))
    };
    let report = LoocvReport {
        config: *config,
        folds: outcomes.iter().map(|o| o.result.clone()).collect(),
        learned,
        identity,
        baseline,
    };
    Ok(LoocvRun { report, outcomes })
}
