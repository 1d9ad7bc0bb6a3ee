//! Growth-zone construction, voxel-wise prediction metrics, and slice
//! overlay rendering. The cross-validation harness lives in [`fold`], the
//! report writers in [`report`].

pub mod fold;
pub mod report;

use crate::error::{Error, Result};
use crate::preprocess::normalize_suv;
use crate::volume::{Dims, ScalarVolume, TumorMask};

/// Voxel margins added to the tumor bounding box per side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrowthZoneConfig {
    pub n_x: usize,
    pub n_y: usize,
    pub n_z: usize,
}

impl Default for GrowthZoneConfig {
    fn default() -> Self {
        GrowthZoneConfig { n_x: 3, n_y: 3, n_z: 3 }
    }
}

impl GrowthZoneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_x == 0 || self.n_y == 0 || self.n_z == 0 {
            return Err(Error::invalid(
                "growth zone config",
                format!("margins must be >= 1, got ({}, {}, {})", self.n_x, self.n_y, self.n_z),
            ));
        }
        Ok(())
    }
}

/// The axis-aligned search region around a tumor: its bounding box grown by
/// the configured margins and clipped to the volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GrowthZone {
    /// Inclusive corner closest to the origin.
    pub lo: Dims,
    /// Inclusive far corner.
    pub hi: Dims,
    /// Dims of the volume the zone was built in.
    pub vol_dims: Dims,
}

impl GrowthZone {
    pub fn contains(&self, x: usize, y: usize, z: usize) -> bool {
        (self.lo.0..=self.hi.0).contains(&x)
            && (self.lo.1..=self.hi.1).contains(&y)
            && (self.lo.2..=self.hi.2).contains(&z)
    }

    pub fn voxel_count(&self) -> usize {
        (self.hi.0 - self.lo.0 + 1) * (self.hi.1 - self.lo.1 + 1) * (self.hi.2 - self.lo.2 + 1)
    }

    /// Zone voxels in (z, y, x) scan order; prediction and threshold search
    /// both rely on this ordering.
    pub fn voxels(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (self.lo.2..=self.hi.2).flat_map(move |z| {
            (self.lo.1..=self.hi.1)
                .flat_map(move |y| (self.lo.0..=self.hi.0).map(move |x| (x, y, z)))
        })
    }
}

/// Builds the growth zone for a mask: bounding box expanded by the margins,
/// clipped to the volume bounds.
pub fn growth_zone(mask: &TumorMask, cfg: &GrowthZoneConfig) -> Result<GrowthZone> {
    cfg.validate()?;
    let (lo, hi) = mask
        .bounding_box()
        .ok_or_else(|| Error::invalid("growth zone", "mask has no foreground"))?;
    let dims = mask.dims();
    Ok(GrowthZone {
        lo: (
            lo.0.saturating_sub(cfg.n_x),
            lo.1.saturating_sub(cfg.n_y),
            lo.2.saturating_sub(cfg.n_z),
        ),
        hi: (
            (hi.0 + cfg.n_x).min(dims.0 - 1),
            (hi.1 + cfg.n_y).min(dims.1 - 1),
            (hi.2 + cfg.n_z).min(dims.2 - 1),
        ),
        vol_dims: dims,
    })
}

/// Voxel confusion counts over the evaluation region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

/// Percent-scaled prediction quality metrics.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Metrics {
    pub recall_pct: f64,
    pub precision_pct: f64,
    pub dice_pct: f64,
    pub rvd_pct: f64,
}

/// Counts the confusion over the union of the zone, the ground-truth
/// foreground, and the predicted foreground, so growth escaping the zone
/// still costs recall. An empty prediction scores precision 0.
pub fn compute_metrics(
    pred: &TumorMask,
    gt: &TumorMask,
    zone: &GrowthZone,
) -> Result<(ConfusionCounts, Metrics)> {
    if pred.dims() != gt.dims() {
        return Err(Error::invalid(
            "metrics",
            format!("prediction dims {:?} differ from ground truth {:?}", pred.dims(), gt.dims()),
        ));
    }
    if zone.vol_dims != gt.dims() {
        return Err(Error::invalid(
            "metrics",
            format!("zone dims {:?} differ from volume {:?}", zone.vol_dims, gt.dims()),
        ));
    }
    if gt.foreground_count() == 0 {
        return Err(Error::invalid("metrics", "ground truth is empty; RVD undefined"));
    }
    let (nx, ny, nz) = gt.dims();
    let mut c = ConfusionCounts { tp: 0, fp: 0, fn_: 0, tn: 0 };
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let p = pred.get(x, y, z);
                let g = gt.get(x, y, z);
                if !(p || g || zone.contains(x, y, z)) {
                    continue;
                }
                match (p, g) {
                    (true, true) => c.tp += 1,
                    (true, false) => c.fp += 1,
                    (false, true) => c.fn_ += 1,
                    (false, false) => c.tn += 1,
                }
            }
        }
    }
    let v_pred = (c.tp + c.fp) as f64;
    let v_gt = (c.tp + c.fn_) as f64;
    let precision = if c.tp + c.fp == 0 { 0.0 } else { c.tp as f64 / v_pred };
    let metrics = Metrics {
        recall_pct: 100.0 * c.tp as f64 / v_gt,
        precision_pct: 100.0 * precision,
        dice_pct: 100.0 * 2.0 * c.tp as f64 / (2.0 * c.tp as f64 + c.fp as f64 + c.fn_ as f64),
        rvd_pct: 100.0 * (v_pred - v_gt).abs() / v_gt,
    };
    Ok((c, metrics))
}

fn is_boundary(mask: &TumorMask, x: usize, y: usize, z: usize) -> bool {
    if !mask.get(x, y, z) {
        return false;
    }
    let (xi, yi, zi) = (x as i64, y as i64, z as i64);
    [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)]
        .iter()
        .any(|&(dx, dy)| !mask.get_or_bg(xi + dx, yi + dy, zi))
}

/// Renders one axial slice as a binary PPM (P6): grayscale background from
/// the intensity volume (display-normalized) when given, ground-truth
/// boundary red, predicted boundary green, coincident boundary yellow.
pub fn render_overlay_slice(
    gt: &TumorMask,
    pred: &TumorMask,
    background: Option<&ScalarVolume>,
    z: usize,
) -> Result<Vec<u8>> {
    if pred.dims() != gt.dims() {
        return Err(Error::invalid("overlay", "mask dims differ"));
    }
    if let Some(bg) = background {
        if bg.dims() != gt.dims() {
            return Err(Error::invalid("overlay", "background dims differ from masks"));
        }
    }
    let (nx, ny, nz) = gt.dims();
    if z >= nz {
        return Err(Error::invalid("overlay", format!("slice {z} out of range 0..{nz}")));
    }
    let mut out = format!("P6\n{nx} {ny}\n255\n").into_bytes();
    for y in 0..ny {
        for x in 0..nx {
            let g = is_boundary(gt, x, y, z);
            let p = is_boundary(pred, x, y, z);
            let rgb = match (g, p) {
                (true, true) => [255, 255, 0],
                (true, false) => [255, 0, 0],
                (false, true) => [0, 255, 0],
                (false, false) => {
                    let v = match background {
                        Some(bg) => normalize_suv(f64::from(bg.get(x, y, z)))
                            .map(|d| d.round() as u8)
                            .unwrap_or(0),
                        None => 0,
                    };
                    [v, v, v]
                }
            };
            out.extend_from_slice(&rgb);
        }
    }
    Ok(out)
}
