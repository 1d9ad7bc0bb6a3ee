//! Command-line front end: generate phantom cohorts, train networks, run
//! leave-one-out experiments, predict single cases, and re-render reports.
//!
//! Exit codes: 0 success, 1 usage, 2 data/validation failure, 3 numerical
//! failure. Log verbosity comes from `RUST_LOG` (default `info`). Every
//! command is deterministic given identical inputs and seed; the only
//! non-reproducible output is `timings.txt`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use growthcast_core::artifact::{load_artifact, save_artifact};
use growthcast_core::cases::{load_case, load_cohort, save_cohort};
use growthcast_core::convnet::io::save_weights;
use growthcast_core::convnet::{train_seeded, Inference, TrainHyper, TrainSample};
use growthcast_core::error::{Error, ErrorClass, Result};
use growthcast_core::eval::fold::{
    encode_run_config, parse_run_config, predict_mask, run_loocv, sample_features, LoocvReport,
    LoocvRun, RunConfig,
};
use growthcast_core::eval::report::{render_text, write_fold_overlays, write_reports};
use growthcast_core::eval::{compute_metrics, growth_zone, render_overlay_slice};
use growthcast_core::features::encode_feature_csv;
use growthcast_core::growthsim::{
    encode_phantom_config, generate_cohort, parse_phantom_config, PhantomConfig,
};
use growthcast_core::preprocess::{balance_classes, extract_patches, write_patch_pgms};
use growthcast_core::rawvol::{load_mask, save_mask};
use growthcast_core::seed::{stage_rng, stage_seed, Stage};
use growthcast_core::volume::LongitudinalCase;

#[derive(Parser)]
#[command(
    name = "growthcast",
    version,
    about = "Voxel-wise tumor growth prediction on longitudinal phantom cohorts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom cohort
    Gen(GenArgs),
    /// Train a network on every transition of a cohort and save the weights
    TrainNet(TrainNetArgs),
    /// Run the leave-one-out experiment and write reports
    Loocv(LoocvArgs),
    /// Predict a case's third visit from a saved pipeline artifact
    Predict(PredictArgs),
    /// Re-render the summary table and overlay images from stored results
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Cohort output directory
    #[arg(long)]
    out: PathBuf,
    /// Number of cases to generate
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    /// Phantom config JSON; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainNetArgs {
    /// Cohort directory
    #[arg(long)]
    cohort: PathBuf,
    /// Weights output path
    #[arg(long)]
    out: PathBuf,
    /// Run config JSON; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct LoocvArgs {
    /// Cohort directory
    #[arg(long)]
    cohort: PathBuf,
    /// Output directory; overrides the config's output_dir
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run config JSON; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Folds run in parallel; 1 keeps timing logs sequential
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: u64,
    /// Skip the reaction-diffusion baseline comparison
    #[arg(long)]
    skip_baseline: bool,
    /// Dump a few patch planes per fold as portable graymaps
    #[arg(long)]
    dump_patches: bool,
    /// Dump the held-out transition's unscaled feature vectors per fold
    #[arg(long)]
    dump_features: bool,
    /// Write per-slice overlay images for every fold
    #[arg(long)]
    overlays: bool,
}

#[derive(Args)]
struct PredictArgs {
    /// Saved pipeline artifact
    #[arg(long)]
    artifact: PathBuf,
    /// Case directory (three visits)
    #[arg(long)]
    case: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory a loocv run wrote its outputs to
    #[arg(long)]
    results: PathBuf,
    /// Cohort directory; required for overlay rendering
    #[arg(long)]
    cohort: Option<PathBuf>,
    /// Render overlays for this fold only
    #[arg(long)]
    fold: Option<usize>,
    /// Render this axial slice only
    #[arg(long)]
    slice: Option<usize>,
    /// Overlay output directory; defaults to <results>/overlays
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Config file (or defaults) with command-line overrides applied. Boolean
/// toggles can only be switched on from the command line.
fn resolve_run_config(
    config: Option<&Path>,
    seed: Option<u64>,
    skip_baseline: bool,
    dump_patches: bool,
    dump_features: bool,
    out: Option<&Path>,
) -> Result<RunConfig> {
    let mut cfg = match config {
        Some(p) => parse_run_config(&read_bytes(p)?)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    cfg.skip_baseline |= skip_baseline;
    cfg.dump_patches |= dump_patches;
    cfg.dump_features |= dump_features;
    if let Some(o) = out {
        cfg.output_dir = Some(o.to_path_buf());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_gen(args: &GenArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => parse_phantom_config(&read_bytes(p)?)?,
        None => PhantomConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let cases = generate_cohort(&cfg, args.n as usize)?;
    save_cohort(&cases, &args.out)?;
    write_text(&args.out.join("phantom-config.json"), &encode_phantom_config(&cfg))?;
    log::info!("wrote {} cases to {}", cases.len(), args.out.display());
    Ok(())
}

/// Pseudo-fold index for whole-cohort training streams. LOOCV folds are
/// cohort indices, so this can never collide with one.
const WHOLE_COHORT: u32 = u32::MAX;

fn cmd_train_net(args: &TrainNetArgs) -> Result<()> {
    let cfg = resolve_run_config(args.config.as_deref(), args.seed, false, false, false, None)?;
    let cohort = load_cohort(&args.cohort)?;
    if cohort.is_empty() {
        return Err(Error::invalid("train-net", "cohort is empty"));
    }
    let mut balance_rng = stage_rng(cfg.master_seed, Stage::FoldBalance(WHOLE_COHORT));
    let mut pooled = Vec::new();
    for case in &cohort {
        for k in 0..2 {
            let samples = extract_patches(&case.studies[k], &case.studies[k + 1].mask, &cfg.patch)?;
            let samples = if cfg.patch.balance {
                balance_classes(samples, &mut balance_rng)?
            } else {
                samples
            };
            pooled.extend(samples);
        }
    }
    let train_set: Vec<TrainSample> =
        pooled.iter().map(|s| (s.channels.as_slice(), s.label)).collect();
    let hyper = TrainHyper {
        seed: stage_seed(cfg.master_seed, Stage::FoldNetTrain(WHOLE_COHORT)),
        ..cfg.hyper
    };
    let (net, history) = train_seeded::<f32>(&cfg.net, &train_set, &hyper)?;
    drop(train_set);
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            create_dir(parent)?;
        }
    }
    save_weights(&args.out, &net)?;
    let history_json = serde_json::to_string_pretty(&history).expect("history serializes");
    write_text(&args.out.with_extension("history.json"), &(history_json + "\n"))?;
    write_text(&args.out.with_extension("config.json"), &encode_run_config(&cfg))?;
    log::info!(
        "trained on {} samples, best epoch {}, weights at {}",
        pooled.len(),
        net.epoch_of_origin,
        args.out.display()
    );
    Ok(())
}

fn cmd_loocv(args: &LoocvArgs) -> Result<()> {
    let cfg = resolve_run_config(
        args.config.as_deref(),
        args.seed,
        args.skip_baseline,
        args.dump_patches,
        args.dump_features,
        args.out.as_deref(),
    )?;
    let out = cfg.output_dir.clone().ok_or_else(|| {
        Error::invalid("run config", "no output directory: pass --out or set output_dir")
    })?;
    let cohort = load_cohort(&args.cohort)?;
    let run = run_loocv(&cohort, &cfg.experiment(), args.jobs as usize)?;

    create_dir(&out)?;
    write_text(&out.join("config.json"), &encode_run_config(&cfg))?;
    write_reports(&out, &run.report)?;
    let artifacts = out.join("artifacts");
    let predictions = out.join("predictions");
    create_dir(&artifacts)?;
    create_dir(&predictions)?;
    for (fold, outcome) in run.outcomes.iter().enumerate() {
        save_artifact(&artifacts.join(format!("fold{fold}.gcpl")), &outcome.artifact)?;
        save_mask(&outcome.predicted, &predictions.join(format!("fold{fold}_pred.hdr")))?;
        if let Some(mask) = &outcome.baseline_predicted {
            save_mask(mask, &predictions.join(format!("fold{fold}_baseline.hdr")))?;
        }
    }
    if args.overlays {
        let dir = out.join("overlays");
        for (fold, outcome) in run.outcomes.iter().enumerate() {
            let case = &cohort[fold];
            write_fold_overlays(
                &dir,
                fold,
                &case.studies[2].mask,
                &outcome.predicted,
                Some(&case.studies[1].suv),
            )?;
        }
    }
    if cfg.dump_patches {
        dump_fold_patches(&out, &cohort, &cfg)?;
    }
    if cfg.dump_features {
        dump_fold_features(&out, &cohort, &cfg, &run)?;
    }
    print!("{}", render_text(&run.report));
    Ok(())
}

/// First few personalization samples per class and fold, one graymap per
/// channel.
fn dump_fold_patches(out: &Path, cohort: &[LongitudinalCase], cfg: &RunConfig) -> Result<()> {
    const PER_CLASS: usize = 4;
    for (fold, case) in cohort.iter().enumerate() {
        let dir = out.join("patches").join(format!("fold{fold}"));
        create_dir(&dir)?;
        let samples = extract_patches(&case.studies[0], &case.studies[1].mask, &cfg.patch)?;
        let mut kept = [0usize; 2];
        for (i, sample) in samples.iter().enumerate() {
            let class = usize::from(sample.label);
            if kept[class] == PER_CLASS {
                continue;
            }
            kept[class] += 1;
            let stem = format!("s{i:04}_{}", if sample.label { "grow" } else { "stable" });
            write_patch_pgms(sample, cfg.patch.patch_size, &dir, &stem)?;
            if kept == [PER_CLASS; 2] {
                break;
            }
        }
    }
    Ok(())
}

/// The held-out transition's unscaled feature vectors, one CSV per fold,
/// computed with that fold's trained network.
fn dump_fold_features(
    out: &Path,
    cohort: &[LongitudinalCase],
    cfg: &RunConfig,
    run: &LoocvRun,
) -> Result<()> {
    let dir = out.join("features");
    create_dir(&dir)?;
    for (fold, case) in cohort.iter().enumerate() {
        let samples = extract_patches(&case.studies[0], &case.studies[1].mask, &cfg.patch)?;
        let mut inference = Inference::new(&run.outcomes[fold].artifact.net)?;
        let (xs, ys) =
            sample_features(&mut inference, &samples, case.interval_days(0), &case.clinical)?;
        let rows: Vec<_> = xs.into_iter().zip(ys).collect();
        write_text(&dir.join(format!("fold{fold}.csv")), &encode_feature_csv(&rows))?;
    }
    Ok(())
}

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let artifact = load_artifact(&args.artifact)?;
    let case = load_case(&args.case)?;
    let current = &case.studies[1];
    let predicted = predict_mask(&artifact, current, &case.clinical, case.interval_days(1))?;
    create_dir(&args.out)?;
    save_mask(&predicted, &args.out.join("predicted.hdr"))?;

    let gt = &case.studies[2].mask;
    let zone = growth_zone(&current.mask, &artifact.zone)?;
    let (counts, metrics) = compute_metrics(&predicted, gt, &zone)?;
    let record = serde_json::json!({ "metrics": metrics, "counts": counts });
    let json = serde_json::to_string_pretty(&record).expect("metrics serialize");
    write_text(&args.out.join("metrics.json"), &(json + "\n"))?;

    let dir = args.out.join("overlays");
    create_dir(&dir)?;
    let z_range = match (gt.bounding_box(), predicted.bounding_box()) {
        (Some((glo, ghi)), Some((plo, phi))) => glo.2.min(plo.2)..=ghi.2.max(phi.2),
        (Some((lo, hi)), None) | (None, Some((lo, hi))) => lo.2..=hi.2,
        (None, None) => return Ok(()),
    };
    for z in z_range {
        let ppm = render_overlay_slice(gt, &predicted, Some(&current.suv), z)?;
        let path = dir.join(format!("z{z:03}.ppm"));
        std::fs::write(&path, ppm).map_err(|e| Error::io(&path, e))?;
    }
    println!(
        "recall {:.2}  precision {:.2}  dice {:.2}  rvd {:.2}  (percent, vs the third visit)",
        metrics.recall_pct, metrics.precision_pct, metrics.dice_pct, metrics.rvd_pct
    );
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let results_path = args.results.join("results.json");
    let bytes = read_bytes(&results_path)?;
    let report: LoocvReport = serde_json::from_slice(&bytes)
        .map_err(|e| Error::format(&results_path, e.to_string()))?;
    print!("{}", render_text(&report));

    let Some(cohort_dir) = &args.cohort else {
        if args.fold.is_some() || args.slice.is_some() {
            return Err(Error::invalid(
                "report",
                "--fold/--slice need --cohort to locate the ground-truth volumes",
            ));
        }
        return Ok(());
    };
    let cohort = load_cohort(cohort_dir)?;
    let out = args.out.clone().unwrap_or_else(|| args.results.join("overlays"));
    create_dir(&out)?;
    let folds: Vec<usize> = match args.fold {
        Some(f) if f >= report.folds.len() => {
            return Err(Error::invalid(
                "report",
                format!("fold {f} out of range: run has {} folds", report.folds.len()),
            ));
        }
        Some(f) => vec![f],
        None => (0..report.folds.len()).collect(),
    };
    for fold in folds {
        let patient = &report.folds[fold].patient_id;
        let case = cohort.iter().find(|c| &c.patient_id == patient).ok_or_else(|| {
            Error::invalid(
                "report",
                format!("patient {patient} not found in cohort {}", cohort_dir.display()),
            )
        })?;
        let pred =
            load_mask(&args.results.join("predictions").join(format!("fold{fold}_pred.hdr")))?;
        let gt = &case.studies[2].mask;
        let background = Some(&case.studies[1].suv);
        match args.slice {
            Some(z) => {
                let ppm = render_overlay_slice(gt, &pred, background, z)?;
                let path = out.join(format!("fold{fold}_z{z:03}.ppm"));
                std::fs::write(&path, ppm).map_err(|e| Error::io(&path, e))?;
            }
            None => {
                write_fold_overlays(&out, fold, gt, &pred, background)?;
            }
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::TrainNet(args) => cmd_train_net(args),
        Command::Loocv(args) => cmd_loocv(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests surface as clap "errors" but are not.
            let usage = !matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return ExitCode::from(u8::from(usage));
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Data => 2,
                ErrorClass::Numerical => 3,
            })
        }
    }
}
