//! Report rendering. Everything here is a pure function of the run record,
//! so reports replay byte for byte from the same seed; wall-clock timings
//! go to their own file and never enter the deterministic outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::fold::{FoldResult, LoocvReport, SummaryStat};
use crate::eval::render_overlay_slice;
use crate::features::FEATURE_NAMES;
use crate::volume::{ScalarVolume, TumorMask};

fn feature_names(indices: &[usize]) -> String {
    indices
        .iter()
        .map(|&i| FEATURE_NAMES.get(i).copied().unwrap_or("?"))
        .collect::<Vec<_>>()
        .join(";")
}

/// Per-fold rows plus `mean` and `std` summary rows. Floats print with
/// shortest round-trip precision; the text table is the rounded view.
pub fn render_csv(report: &LoocvReport) -> String {
    let with_baseline = report.baseline.is_some();
    let mut out = String::new();
    out.push_str("fold,patient,group_pairs,chosen_m,selected,threshold,personalization_rvd,zone_voxels");
    for predictor in ["learned", "identity"] {
        for metric in ["recall", "precision", "dice", "rvd"] {
            let _ = write!(out, ",{predictor}_{metric}");
        }
    }
    if with_baseline {
        for metric in ["recall", "precision", "dice", "rvd"] {
            let _ = write!(out, ",baseline_{metric}");
        }
    }
    out.push('\n');
    for f in &report.folds {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{}",
            f.fold,
            f.patient_id,
            f.group_pairs,
            f.chosen_m,
            feature_names(&f.selected_features),
            f.threshold.threshold,
            f.threshold.rvd,
            f.zone_voxels
        );
        let mut metrics = vec![f.learned, f.identity];
        if with_baseline {
            metrics.push(f.baseline.expect("baseline present in every fold"));
        }
        for m in metrics {
            let _ = write!(out, ",{},{},{},{}", m.recall_pct, m.precision_pct, m.dice_pct, m.rvd_pct);
        }
        out.push('\n');
    }
    for (label, pick) in [("mean", 0usize), ("std", 1usize)] {
        let _ = write!(out, "{label},,,,,,,");
        let mut summaries = vec![&report.learned, &report.identity];
        if let Some(b) = &report.baseline {
            summaries.push(b);
        }
        for s in summaries {
            for stat in [s.recall, s.precision, s.dice, s.rvd] {
                let v = if pick == 0 { stat.mean } else { stat.std };
                let _ = write!(out, ",{v}");
            }
        }
        out.push('\n');
    }
    out
}

fn stat_line(s: &SummaryStat) -> String {
    format!(
        "{:>7.2} ± {:>6.2}  [{:>7.2}, {:>7.2}]",
        s.mean, s.std, s.min, s.max
    )
}

/// Human-readable summary in the `mean ± std [min, max]` layout, two
/// decimals everywhere, plus a per-fold table.
pub fn render_text(report: &LoocvReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "leave-one-out cross-validation: {} folds, master seed {}",
        report.folds.len(),
        report.config.master_seed
    );
    let mut blocks = vec![
        ("learned prediction", &report.learned),
        ("identity (current mask carried forward)", &report.identity),
    ];
    if let Some(b) = &report.baseline {
        blocks.push(("reaction-diffusion baseline", b));
    }
    for (title, summary) in blocks {
        let _ = writeln!(out, "\n{title}");
        for (name, stat) in [
            ("recall", &summary.recall),
            ("precision", &summary.precision),
            ("dice", &summary.dice),
            ("rvd", &summary.rvd),
        ] {
            let _ = writeln!(out, "  {name:<10} {}", stat_line(stat));
        }
    }
    let _ = writeln!(out, "\nper fold:");
    let rd_header = if report.baseline.is_some() { "  rd-dice" } else { "" };
    let _ = writeln!(
        out,
        "  fold  patient       m  threshold      dice   id-dice{rd_header}  selected"
    );
    for f in &report.folds {
        let rd = match f.baseline {
            Some(b) => format!("  {:>7.2}", b.dice_pct),
            None => String::new(),
        };
        let _ = writeln!(
            out,
            "  {:>4}  {:<12} {:>2}  {:>9.4}  {:>7.2}  {:>7.2}{rd}  {}",
            f.fold,
            f.patient_id,
            f.chosen_m,
            f.threshold.threshold,
            f.learned.dice_pct,
            f.identity.dice_pct,
            feature_names(&f.selected_features)
        );
    }
    out
}

/// The full run record as pretty JSON (timings excluded by serialization).
pub fn render_json(report: &LoocvReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

/// Wall-clock stage timings, one line per fold. Not deterministic; kept out
/// of the other reports on purpose.
pub fn render_timings(folds: &[FoldResult]) -> String {
    let mut out = String::from(
        "fold  extract  net_train  features  selection  personalize  predict  evaluate  baseline    total\n",
    );
    let mut total = 0.0;
    for f in folds {
        let t = &f.timings;
        let _ = writeln!(
            out,
            "{:>4}  {:>7.2}  {:>9.2}  {:>8.2}  {:>9.2}  {:>11.2}  {:>7.2}  {:>8.2}  {:>8.2}  {:>7.2}",
            f.fold,
            t.extract_s,
            t.net_train_s,
            t.features_s,
            t.selection_s,
            t.personalize_s,
            t.predict_s,
            t.evaluate_s,
            t.baseline_s,
            t.total_s
        );
        total += t.total_s;
    }
    let _ = writeln!(out, "sum of fold wall time: {total:.2}s");
    out
}

/// Writes `results.json`, `results.csv`, `results.txt`, and `timings.txt`
/// into `dir` (created if missing).
pub fn write_reports(dir: &Path, report: &LoocvReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, content) in [
        ("results.json", render_json(report)),
        ("results.csv", render_csv(report)),
        ("results.txt", render_text(report)),
        ("timings.txt", render_timings(&report.folds)),
    ] {
        let path = dir.join(name);
        std::fs::write(&path, content).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Writes one overlay PPM per axial slice of the union bounding box of
/// ground truth and prediction, named `fold<k>_z<zz>.ppm`. Returns the
/// written paths.
pub fn write_fold_overlays(
    dir: &Path,
    fold: usize,
    gt: &TumorMask,
    pred: &TumorMask,
    background: Option<&ScalarVolume>,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let z_range = match (gt.bounding_box(), pred.bounding_box()) {
        (Some((glo, ghi)), Some((plo, phi))) => glo.2.min(plo.2)..=ghi.2.max(phi.2),
        (Some((lo, hi)), None) | (None, Some((lo, hi))) => lo.2..=hi.2,
        (None, None) => return Ok(Vec::new()),
    };
    let mut written = Vec::new();
    for z in z_range {
        let ppm = render_overlay_slice(gt, pred, background, z)?;
        let path = dir.join(format!("fold{fold}_z{z:03}.ppm"));
        std::fs::write(&path, ppm).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
