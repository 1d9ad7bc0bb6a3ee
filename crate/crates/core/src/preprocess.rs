//! Channel normalization and patch sampling.
//!
//! Training samples are axial (xy-plane) multi-channel patches around the
//! current tumor: one sample per voxel of a cubic sampling box centered at
//! the rounded tumor centroid, labeled by whether that voxel is tumor at
//! the next visit. Channels are normalized to a display-like [0, 255]
//! range so the three inputs share a common scale.

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::volume::{
    mask_centroid, round_half_away, signed_distance_with_index, tumor_volume_mm3, Study,
    SurfaceIndex, TumorMask,
};

/// SUV display window applied after the x100 scale-up: values are clamped
/// to [100, 2600] and mapped linearly onto [0, 255].
pub const SUV_SCALE: f64 = 100.0;
pub const SUV_WINDOW_LO: f64 = 100.0;
pub const SUV_WINDOW_HI: f64 = 2600.0;

/// Maps a raw SUV value onto [0, 255]: scale by 100, clamp to the display
/// window, then map the window linearly to [0, 255].
pub fn normalize_suv(raw: f64) -> Result<f64> {
    if !raw.is_finite() {
        return Err(Error::invalid("suv value", format!("must be finite, got {raw}")));
    }
    let windowed = (SUV_SCALE * raw).clamp(SUV_WINDOW_LO, SUV_WINDOW_HI);
    Ok((windowed - SUV_WINDOW_LO) / (SUV_WINDOW_HI - SUV_WINDOW_LO) * 255.0)
}

/// Maps an ICVF fraction in [0, 1] onto [0, 100].
pub fn normalize_icvf(raw: f64) -> Result<f64> {
    if !raw.is_finite() || !(0.0..=1.0).contains(&raw) {
        return Err(Error::invalid(
            "icvf value",
            format!("must lie in [0, 1], got {raw}"),
        ));
    }
    Ok(raw * 100.0)
}

/// Mask channel rendering: foreground 255, background 0.
pub fn mask_channel(foreground: bool) -> f64 {
    if foreground {
        255.0
    } else {
        0.0
    }
}

/// Patch sampling settings.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchConfig {
    /// Axial patch edge length (odd, >= 3).
    pub patch_size: usize,
    /// Sampling box half-width: one sample per voxel of the
    /// `(2w+1)^3` cube at the tumor centroid.
    pub sampling_halfwidth: usize,
    /// Downsample the majority class to the minority count.
    pub balance: bool,
}

impl Default for PatchConfig {
    fn default() -> Self {
        PatchConfig { patch_size: 17, sampling_halfwidth: 15, balance: true }
    }
}

impl PatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 3 || self.patch_size % 2 == 0 {
            return Err(Error::invalid(
                "patch config",
                format!("patch_size must be odd and >= 3, got {}", self.patch_size),
            ));
        }
        Ok(())
    }

    pub fn samples_per_study(&self) -> usize {
        let w = 2 * self.sampling_halfwidth + 1;
        w * w * w
    }
}

/// One training sample: normalized channels plus the per-voxel auxiliary
/// quantities consumed later by feature assembly.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSample {
    pub center: (usize, usize, usize),
    /// Channel-major [3][s][s]: SUV, ICVF, mask; row-major within a channel.
    pub channels: Vec<f32>,
    /// Tumor membership of `center` at the next visit.
    pub label: bool,
    /// Signed distance (voxels) from `center` to the current tumor surface.
    pub signed_distance_vox: f64,
    /// Current tumor volume, constant across one study's samples.
    pub tumor_volume_mm3: f64,
}

/// Cuts the axial normalized patch around `center`. Window voxels outside
/// the volume contribute 0 in every channel (background level).
pub fn extract_patch_channels(
    study: &Study,
    center: (usize, usize, usize),
    patch_size: usize,
) -> Result<Vec<f32>> {
    let (nx, ny, nz) = study.dims();
    if center.0 >= nx || center.1 >= ny || center.2 >= nz {
        return Err(Error::invalid(
            "patch center",
            format!("{center:?} outside dims {:?}", study.dims()),
        ));
    }
    let half = (patch_size / 2) as i64;
    let z = center.2;
    let mut out = vec![0f32; 3 * patch_size * patch_size];
    let plane = patch_size * patch_size;
    let mut i = 0usize;
    for dy in -half..=half {
        let y = center.1 as i64 + dy;
        for dx in -half..=half {
            let x = center.0 as i64 + dx;
            let in_bounds = x >= 0 && y >= 0 && (x as usize) < nx && (y as usize) < ny;
            if in_bounds {
                let (xu, yu) = (x as usize, y as usize);
                out[i] = normalize_suv(f64::from(study.suv.get(xu, yu, z)))? as f32;
                out[plane + i] = normalize_icvf(f64::from(study.icvf.get(xu, yu, z)))? as f32;
                out[2 * plane + i] = mask_channel(study.mask.get(xu, yu, z)) as f32;
            }
            i += 1;
        }
    }
    Ok(out)
}

/// Extracts one sample per voxel of the sampling box centered at the
/// rounded tumor centroid of `current`, ordered by (z, y, x) of the
/// centers. Labels come from `next_mask`. Errors if the sampling box does
/// not fit inside the volume (patch windows themselves may overhang and
/// are zero-padded).
pub fn extract_patches(
    current: &Study,
    next_mask: &TumorMask,
    config: &PatchConfig,
) -> Result<Vec<PatchSample>> {
    config.validate()?;
    if next_mask.dims() != current.dims() || next_mask.spacing() != current.spacing() {
        return Err(Error::invalid(
            "patch extraction",
            format!(
                "next mask grid {:?} does not match study grid {:?}",
                next_mask.dims(),
                current.dims()
            ),
        ));
    }
    let centroid = mask_centroid(&current.mask)?;
    let c = (
        round_half_away(centroid.0),
        round_half_away(centroid.1),
        round_half_away(centroid.2),
    );
    let w = self::checked_box(current, c, config.sampling_halfwidth)?;
    let surface = SurfaceIndex::new(&current.mask);
    let volume = tumor_volume_mm3(&current.mask);
    let mut samples = Vec::with_capacity(config.samples_per_study());
    for z in w.2 .0..=w.2 .1 {
        for y in w.1 .0..=w.1 .1 {
            for x in w.0 .0..=w.0 .1 {
                let center = (x, y, z);
                let channels = extract_patch_channels(current, center, config.patch_size)?;
                let signed_distance =
                    signed_distance_with_index(&current.mask, &surface, center)?;
                samples.push(PatchSample {
                    center,
                    channels,
                    label: next_mask.get(x, y, z),
                    signed_distance_vox: signed_distance,
                    tumor_volume_mm3: volume,
                });
            }
        }
    }
    Ok(samples)
}

type AxisRange = (usize, usize);

fn checked_box(
    study: &Study,
    center: (i64, i64, i64),
    halfwidth: usize,
) -> Result<(AxisRange, AxisRange, AxisRange)> {
    let (nx, ny, nz) = study.dims();
    let hw = halfwidth as i64;
    let mut ranges = [(0usize, 0usize); 3];
    for (i, (c, n)) in [(center.0, nx), (center.1, ny), (center.2, nz)].into_iter().enumerate() {
        let lo = c - hw;
        let hi = c + hw;
        if lo < 0 || hi >= n as i64 {
            return Err(Error::invalid(
                "patch extraction",
                format!(
                    "sampling box [{lo}, {hi}] around centroid exceeds axis {i} of extent {n}; \
                     tumor too close to the volume edge for halfwidth {halfwidth}"
                ),
            ));
        }
        ranges[i] = (lo as usize, hi as usize);
    }
    Ok((ranges[0], ranges[1], ranges[2]))
}

/// Downsamples the majority class to the minority count with a seeded
/// partial Fisher-Yates selection; survivors keep their original order.
/// Errors when either class is absent (nothing to learn or balance).
pub fn balance_classes<R: Rng>(
    samples: Vec<PatchSample>,
    rng: &mut R,
) -> Result<Vec<PatchSample>> {
    let pos = samples.iter().filter(|s| s.label).count();
    let neg = samples.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid(
            "class balance",
            format!("need both classes, got {pos} positive / {neg} negative"),
        ));
    }
    if pos == neg {
        return Ok(samples);
    }
    let (majority_label, majority, minority) = if pos > neg { (true, pos, neg) } else { (false, neg, pos) };
    // Choose `minority` indices out of the majority class uniformly.
    let mut idx: Vec<usize> = samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.label == majority_label)
        .map(|(i, _)| i)
        .collect();
    for k in 0..minority {
        let j = k + rng.gen_range(0..majority - k);
        idx.swap(k, j);
    }
    let keep: std::collections::BTreeSet<usize> = idx[..minority].iter().copied().collect();
    Ok(samples
        .into_iter()
        .enumerate()
        .filter(|(i, s)| s.label != majority_label || keep.contains(i))
        .map(|(_, s)| s)
        .collect())
}

/// Writes the three channels of a sample as 8-bit binary PGM images
/// (`<stem>_suv.pgm`, `_icvf.pgm`, `_mask.pgm`) for visual inspection.
pub fn write_patch_pgms(
    sample: &PatchSample,
    patch_size: usize,
    dir: &Path,
    stem: &str,
) -> Result<()> {
    let plane = patch_size * patch_size;
    if sample.channels.len() != 3 * plane {
        return Err(Error::invalid(
            "patch dump",
            format!(
                "channel buffer holds {} values, expected {} for patch size {patch_size}",
                sample.channels.len(),
                3 * plane
            ),
        ));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (ci, name) in ["suv", "icvf", "mask"].into_iter().enumerate() {
        let mut bytes = format!("P5\n{patch_size} {patch_size}\n255\n").into_bytes();
        bytes.extend(
            sample.channels[ci * plane..(ci + 1) * plane]
                .iter()
                .map(|&v| v.round().clamp(0.0, 255.0) as u8),
        );
        let path = dir.join(format!("{stem}_{name}.pgm"));
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
