//! Linear SVM training, recursive feature elimination with a prior-feature
//! constraint, accuracy-driven model-size selection, and volume-matched
//! decision-threshold personalization.
//!
//! The SVM solves the L2-regularized L1-hinge problem
//!   min_w 1/2 ||w||^2 + (C/n) * sum_i max(0, 1 - y_i f(x_i))
//! by dual coordinate descent with the bias handled as an augmented,
//! regularized constant feature. The per-sample weight C/n makes the
//! solution invariant to duplicating the data set.

use crate::error::{Error, Result};
use crate::features::FEATURE_COUNT;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmConfig {
    /// Soft-margin penalty (linear kernel only).
    pub c: f64,
    /// Stop once the duality gap falls below tolerance * max(1, |primal|).
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig { c: 1.0, tolerance: 1e-6, max_sweeps: 100_000 }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::invalid("svm config", format!("C must be positive, got {}", self.c)));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::invalid(
                "svm config",
                format!("tolerance must be positive, got {}", self.tolerance),
            ));
        }
        if self.max_sweeps == 0 {
            return Err(Error::invalid("svm config", "max_sweeps must be >= 1"));
        }
        Ok(())
    }
}

/// A trained linear classifier over a feature subset. `selected` holds the
/// canonical indices (ascending) that `w` aligns with.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SvmModel {
    pub w: Vec<f64>,
    pub b: f64,
    pub selected: Vec<usize>,
}

impl SvmModel {
    pub fn decision_value(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.w.len() {
            return Err(Error::invalid(
                "svm input",
                format!("expected {} features, got {}", self.w.len(), x.len()),
            ));
        }
        Ok(self.w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + self.b)
    }

    /// Restricts a full canonical vector to this model's feature subset.
    pub fn project(&self, full: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.selected.len());
        for &i in &self.selected {
            let v = *full.get(i).ok_or_else(|| {
                Error::invalid("svm input", format!("feature index {i} out of range"))
            })?;
            out.push(v);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.w.len() != self.selected.len() || self.w.is_empty() {
            return Err(Error::invalid(
                "svm model",
                format!("{} weights for {} selected features", self.w.len(), self.selected.len()),
            ));
        }
        if !self.b.is_finite() || self.w.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("svm model", "non-finite weight or bias"));
        }
        let mut seen = [false; FEATURE_COUNT];
        let mut last = None;
        for &i in &self.selected {
            if i >= FEATURE_COUNT || seen[i] {
                return Err(Error::invalid("svm model", format!("bad selected index {i}")));
            }
            if let Some(prev) = last {
                if i <= prev {
                    return Err(Error::invalid("svm model", "selected indices not ascending"));
                }
            }
            seen[i] = true;
            last = Some(i);
        }
        Ok(())
    }
}

/// Optimizer diagnostics for one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmTrainStats {
    pub alphas: Vec<f64>,
    pub sweeps: usize,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

/// The objective the optimizer minimizes, for external verification.
pub fn primal_objective(xs: &[Vec<f64>], ys: &[bool], c: f64, w: &[f64], b: f64) -> f64 {
    let u = c / xs.len() as f64;
    let reg = 0.5 * (w.iter().map(|v| v * v).sum::<f64>() + b * b);
    let hinge: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, &y)| {
            let f = w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b;
            let margin = if y { f } else { -f };
            (1.0 - margin).max(0.0)
        })
        .sum();
    reg + u * hinge
}

fn check_training_set(xs: &[Vec<f64>], ys: &[bool]) -> Result<usize> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::invalid(
            "svm data",
            format!("{} vectors for {} labels", xs.len(), ys.len()),
        ));
    }
    let d = xs[0].len();
    if d == 0 {
        return Err(Error::invalid("svm data", "zero-dimensional vectors"));
    }
    for (i, x) in xs.iter().enumerate() {
        if x.len() != d {
            return Err(Error::invalid(
                "svm data",
                format!("vector {i} has {} features, expected {d}", x.len()),
            ));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("svm data", format!("vector {i} has a non-finite value")));
        }
    }
    if ys.iter().all(|&y| y) || ys.iter().all(|&y| !y) {
        return Err(Error::invalid("svm data", "both classes must be present"));
    }
    Ok(d)
}

pub fn train_svm(xs: &[Vec<f64>], ys: &[bool], cfg: &SvmConfig) -> Result<SvmModel> {
    Ok(train_svm_detailed(xs, ys, cfg)?.0)
}

/// Dual coordinate descent with deterministic cyclic sweeps. The dual
/// objective is asserted non-decreasing once per sweep; the duality gap
/// against the primal is the stopping rule.
pub fn train_svm_detailed(
    xs: &[Vec<f64>],
    ys: &[bool],
    cfg: &SvmConfig,
) -> Result<(SvmModel, SvmTrainStats)> {
    cfg.validate()?;
    let d = check_training_set(xs, ys)?;
    let n = xs.len();
    let u = cfg.c / n as f64;
    let signs: Vec<f64> = ys.iter().map(|&y| if y { 1.0 } else { -1.0 }).collect();
    // Augmented squared norms: ||x||^2 + 1 for the bias feature.
    let q: Vec<f64> = xs.iter().map(|x| x.iter().map(|v| v * v).sum::<f64>() + 1.0).collect();
    let mut alpha = vec![0.0f64; n];
    let mut w = vec![0.0f64; d];
    let mut b = 0.0f64;
    let mut prev_dual = f64::NEG_INFINITY;
    let mut sweeps = 0usize;
    loop {
        if sweeps == cfg.max_sweeps {
            return Err(Error::numerical(
                "svm train",
                format!(
                    "duality gap still above tolerance after {} sweeps",
                    cfg.max_sweeps
                ),
            ));
        }
        for i in 0..n {
            let f = w.iter().zip(&xs[i]).map(|(w, x)| w * x).sum::<f64>() + b;
            let grad = signs[i] * f - 1.0;
            let next = (alpha[i] - grad / q[i]).clamp(0.0, u);
            let delta = next - alpha[i];
            if delta != 0.0 {
                alpha[i] = next;
                let step = delta * signs[i];
                for (wj, xj) in w.iter_mut().zip(&xs[i]) {
                    *wj += step * xj;
                }
                b += step;
            }
        }
        sweeps += 1;
        let norm_sq = w.iter().map(|v| v * v).sum::<f64>() + b * b;
        let dual = alpha.iter().sum::<f64>() - 0.5 * norm_sq;
        assert!(
            dual >= prev_dual - 1e-9 * dual.abs().max(1.0),
            "dual objective regressed: {prev_dual} -> {dual}"
        );
        prev_dual = dual;
        let primal = primal_objective(xs, ys, cfg.c, &w, b);
        let gap = primal - dual;
        if !gap.is_finite() {
            return Err(Error::numerical("svm train", "non-finite duality gap"));
        }
        if gap <= cfg.tolerance * primal.abs().max(1.0) {
            let model = SvmModel { w, b, selected: (0..d).collect() };
            return Ok((model, SvmTrainStats { alphas: alpha, sweeps, primal, dual, gap }));
        }
    }
}

fn project_columns(xs: &[Vec<f64>], cols: &[usize]) -> Vec<Vec<f64>> {
    xs.iter().map(|x| cols.iter().map(|&c| x[c]).collect()).collect()
}

/// Recursive feature elimination. Trains on the surviving set, eliminates
/// the non-prior feature with the smallest squared weight (ties eliminate
/// the lower canonical index first), and repeats until only prior features
/// remain. The ranking lists prior features first (canonical order among
/// themselves), then the rest in reverse elimination order.
pub fn rfe_rank(
    xs: &[Vec<f64>],
    ys: &[bool],
    cfg: &SvmConfig,
    prior: &[usize],
) -> Result<Vec<usize>> {
    let d = check_training_set(xs, ys)?;
    if d < 2 {
        return Err(Error::invalid("rfe", "need at least 2 features to rank"));
    }
    let mut is_prior = vec![false; d];
    for &p in prior {
        if p >= d {
            return Err(Error::invalid("rfe", format!("prior index {p} out of range for {d} features")));
        }
        if is_prior[p] {
            return Err(Error::invalid("rfe", format!("prior index {p} repeated")));
        }
        is_prior[p] = true;
    }
    let mut surviving: Vec<usize> = (0..d).collect();
    let mut eliminated: Vec<usize> = Vec::new();
    while surviving.len() > prior.len().max(1) {
        let model = train_svm(&project_columns(xs, &surviving), ys, cfg)?;
        let mut victim: Option<(usize, f64)> = None;
        for (pos, &feat) in surviving.iter().enumerate() {
            if is_prior[feat] {
                continue;
            }
            let score = model.w[pos] * model.w[pos];
            // Strict < keeps the lowest canonical index among ties, since
            // surviving stays in ascending order.
            if victim.map_or(true, |(_, best)| score < best) {
                victim = Some((pos, score));
            }
        }
        let (pos, _) = victim.expect("non-prior feature must exist while loop runs");
        eliminated.push(surviving.remove(pos));
    }
    let mut ranking: Vec<usize> = prior.to_vec();
    ranking.sort_unstable();
    for &f in &surviving {
        if !is_prior[f] {
            ranking.push(f);
        }
    }
    ranking.extend(eliminated.iter().rev());
    Ok(ranking)
}

/// Fraction of personalization samples classified correctly at decision
/// threshold zero.
pub fn accuracy_at_zero(model: &SvmModel, xs: &[Vec<f64>], ys: &[bool]) -> Result<f64> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::invalid("accuracy", "empty or mismatched evaluation set"));
    }
    let mut correct = 0usize;
    for (x, &y) in xs.iter().zip(ys) {
        let f = model.decision_value(x)?;
        if (f >= 0.0) == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / xs.len() as f64)
}

/// Outcome of the model-size sweep.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SelectionResult {
    /// All canonical features, best first; prior features lead.
    pub ranking: Vec<usize>,
    pub chosen_m: usize,
    /// Personalization accuracy for m = 2..=ranking.len(), in order.
    pub acc_by_m: Vec<f64>,
    pub model: SvmModel,
}

/// Trains one classifier per prefix size m of the ranking (m = 2..=d) on
/// the group set and keeps the one with the highest personalization
/// accuracy at threshold zero. Ties fall to the smallest m.
pub fn select_model(
    group_x: &[Vec<f64>],
    group_y: &[bool],
    pers_x: &[Vec<f64>],
    pers_y: &[bool],
    ranking: &[usize],
    cfg: &SvmConfig,
) -> Result<SelectionResult> {
    let d = check_training_set(group_x, group_y)?;
    if ranking.len() != d {
        return Err(Error::invalid(
            "model selection",
            format!("ranking covers {} features, data has {d}", ranking.len()),
        ));
    }
    if pers_x.is_empty() || pers_x.len() != pers_y.len() {
        return Err(Error::invalid("model selection", "empty or mismatched personalization set"));
    }
    let mut acc_by_m = Vec::with_capacity(d.saturating_sub(1));
    let mut best: Option<(f64, usize, SvmModel)> = None;
    for m in 2..=d {
        let mut subset: Vec<usize> = ranking[..m].to_vec();
        subset.sort_unstable();
        let mut model = train_svm(&project_columns(group_x, &subset), group_y, cfg)?;
        model.selected = subset.clone();
        let acc = accuracy_at_zero(&model, &project_columns(pers_x, &subset), pers_y)?;
        acc_by_m.push(acc);
        if best.as_ref().map_or(true, |(best_acc, _, _)| acc > *best_acc) {
            best = Some((acc, m, model));
        }
    }
    let (_, chosen_m, model) = best.expect("d >= 2 guarantees at least one candidate");
    Ok(SelectionResult { ranking: ranking.to_vec(), chosen_m, acc_by_m, model })
}

/// Personalized cut on decision values.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PersonalizedThreshold {
    pub threshold: f64,
    /// |V_pred - V_gt| / V_gt achieved on the personalization pair.
    pub rvd: f64,
}

/// Scans candidate thresholds = {0} union the 101 order-statistic quantiles
/// of the zone decision values and returns the one whose predicted volume
/// (count of decisions >= t, times the voxel volume) best matches the
/// ground-truth volume by relative volume difference. Ties prefer the
/// threshold closest to zero, then the smaller one.
pub fn personalize_threshold(
    decisions: &[f64],
    gt_volume_mm3: f64,
    voxel_volume_mm3: f64,
) -> Result<PersonalizedThreshold> {
    if decisions.is_empty() {
        return Err(Error::invalid("threshold search", "empty growth zone"));
    }
    if decisions.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("threshold search", "non-finite decision value"));
    }
    if !(gt_volume_mm3.is_finite() && gt_volume_mm3 > 0.0) {
        return Err(Error::invalid(
            "threshold search",
            format!("ground-truth volume must be positive, got {gt_volume_mm3}"),
        ));
    }
    if !(voxel_volume_mm3.is_finite() && voxel_volume_mm3 > 0.0) {
        return Err(Error::invalid(
            "threshold search",
            format!("voxel volume must be positive, got {voxel_volume_mm3}"),
        ));
    }
    let mut sorted = decisions.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let mut candidates = Vec::with_capacity(102);
    candidates.push(0.0);
    for k in 0..=100usize {
        let idx = ((k * (n - 1)) as f64 / 100.0).round() as usize;
        candidates.push(sorted[idx]);
    }
    let rvd_at = |t: f64| {
        let below = sorted.partition_point(|&v| v < t);
        let v_pred = (n - below) as f64 * voxel_volume_mm3;
        (v_pred - gt_volume_mm3).abs() / gt_volume_mm3
    };
    let mut best = PersonalizedThreshold { threshold: candidates[0], rvd: rvd_at(candidates[0]) };
    for &t in &candidates[1..] {
        let rvd = rvd_at(t);
        let better = rvd < best.rvd
            || (rvd == best.rvd
                && (t.abs() < best.threshold.abs()
                    || (t.abs() == best.threshold.abs() && t < best.threshold)));
        if better {
            best = PersonalizedThreshold { threshold: t, rvd };
        }
    }
    Ok(best)
}
