//! Volumetric data model: scalar volumes, binary tumor masks, single-visit
//! studies, and three-visit longitudinal cases.
//!
//! Index convention everywhere: `(x, y, z)` voxel coordinates with x fastest
//! in memory, i.e. linear index `x + nx*(y + ny*z)`. Spacing is millimeters
//! per voxel along each axis; all geometric quantities (distances, volumes)
//! are voxel-based unless a unit suffix says otherwise.

use crate::error::{Error, Result};

pub type Dims = (usize, usize, usize);
pub type Spacing = (f64, f64, f64);

fn check_geometry(dims: Dims, spacing: Spacing) -> Result<()> {
    if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
        return Err(Error::invalid("dims", format!("all must be >= 1, got {dims:?}")));
    }
    for (axis, s) in [("x", spacing.0), ("y", spacing.1), ("z", spacing.2)] {
        if !s.is_finite() || s <= 0.0 {
            return Err(Error::invalid(
                "spacing",
                format!("{axis} must be finite and positive, got {s}"),
            ));
        }
    }
    Ok(())
}

/// Dense 3-D scalar field (f32), x-fastest layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVolume {
    dims: Dims,
    spacing: Spacing,
    data: Vec<f32>,
}

impl ScalarVolume {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<f32>) -> Result<Self> {
        check_geometry(dims, spacing)?;
        let n = dims.0 * dims.1 * dims.2;
        if data.len() != n {
            return Err(Error::invalid(
                "volume data",
                format!("expected {n} values for dims {dims:?}, got {}", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "volume data",
                format!("non-finite value {} at linear index {i}", data[i]),
            ));
        }
        Ok(ScalarVolume { dims, spacing, data })
    }

    pub fn filled(dims: Dims, spacing: Spacing, value: f32) -> Result<Self> {
        let n = dims.0 * dims.1 * dims.2;
        ScalarVolume::new(dims, spacing, vec![value; n])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing.0 * self.spacing.1 * self.spacing.2
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.dims.0 && y < self.dims.1 && z < self.dims.2);
        x + self.dims.0 * (y + self.dims.1 * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    /// Value at possibly out-of-bounds integer coordinates; outside voxels
    /// read as `fill`.
    #[inline]
    pub fn get_or(&self, x: i64, y: i64, z: i64, fill: f32) -> f32 {
        if x < 0 || y < 0 || z < 0 {
            return fill;
        }
        let (x, y, z) = (x as usize, y as usize, z as usize);
        if x >= self.dims.0 || y >= self.dims.1 || z >= self.dims.2 {
            return fill;
        }
        self.get(x, y, z)
    }
}

/// Binary tumor segmentation on the same grid convention as `ScalarVolume`.
/// Stored as 0/1 bytes. May be empty (e.g. an empty prediction); callers
/// that need a nonempty tumor enforce that themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct TumorMask {
    dims: Dims,
    spacing: Spacing,
    data: Vec<u8>,
}

impl TumorMask {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<u8>) -> Result<Self> {
        check_geometry(dims, spacing)?;
        let n = dims.0 * dims.1 * dims.2;
        if data.len() != n {
            return Err(Error::invalid(
                "mask data",
                format!("expected {n} values for dims {dims:?}, got {}", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|&v| v > 1) {
            return Err(Error::invalid(
                "mask data",
                format!("values must be 0 or 1, got {} at linear index {i}", data[i]),
            ));
        }
        Ok(TumorMask { dims, spacing, data })
    }

    pub fn empty(dims: Dims, spacing: Spacing) -> Result<Self> {
        let n = dims.0 * dims.1 * dims.2;
        TumorMask::new(dims, spacing, vec![0u8; n])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing.0 * self.spacing.1 * self.spacing.2
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.dims.0 && y < self.dims.1 && z < self.dims.2);
        x + self.dims.0 * (y + self.dims.1 * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[self.index(x, y, z)] != 0
    }

    /// Out-of-bounds voxels read as background.
    #[inline]
    pub fn get_or_bg(&self, x: i64, y: i64, z: i64) -> bool {
        if x < 0 || y < 0 || z < 0 {
            return false;
        }
        let (x, y, z) = (x as usize, y as usize, z as usize);
        if x >= self.dims.0 || y >= self.dims.1 || z >= self.dims.2 {
            return false;
        }
        self.get(x, y, z)
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Foreground voxel coordinates in (z, y, x)-major scan order.
    pub fn foreground_voxels(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for z in 0..self.dims.2 {
            for y in 0..self.dims.1 {
                for x in 0..self.dims.0 {
                    if self.get(x, y, z) {
                        out.push((x, y, z));
                    }
                }
            }
        }
        out
    }

    /// Tight foreground bounding box as inclusive (min, max) corners, or
    /// None when the mask is empty.
    pub fn bounding_box(&self) -> Option<(Dims, Dims)> {
        let mut min = (usize::MAX, usize::MAX, usize::MAX);
        let mut max = (0usize, 0usize, 0usize);
        let mut any = false;
        for z in 0..self.dims.2 {
            for y in 0..self.dims.1 {
                for x in 0..self.dims.0 {
                    if self.get(x, y, z) {
                        any = true;
                        min = (min.0.min(x), min.1.min(y), min.2.min(z));
                        max = (max.0.max(x), max.1.max(y), max.2.max(z));
                    }
                }
            }
        }
        any.then_some((min, max))
    }
}

/// Patient descriptors used as shallow features. Gender is encoded 0/1.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClinicalRecord {
    pub age_years: f64,
    pub gender: u8,
    pub height_m: f64,
    pub weight_kg: f64,
}

impl ClinicalRecord {
    pub fn validate(&self) -> Result<()> {
        if !self.age_years.is_finite() || self.age_years <= 0.0 {
            return Err(Error::invalid(
                "clinical record",
                format!("age_years must be positive, got {}", self.age_years),
            ));
        }
        if self.gender > 1 {
            return Err(Error::invalid(
                "clinical record",
                format!("gender must be 0 or 1, got {}", self.gender),
            ));
        }
        if !self.height_m.is_finite() || self.height_m <= 0.5 || self.height_m >= 2.5 {
            return Err(Error::invalid(
                "clinical record",
                format!("height_m must lie in (0.5, 2.5), got {}", self.height_m),
            ));
        }
        if !self.weight_kg.is_finite() || self.weight_kg <= 0.0 {
            return Err(Error::invalid(
                "clinical record",
                format!("weight_kg must be positive, got {}", self.weight_kg),
            ));
        }
        Ok(())
    }
}

/// One imaging visit: co-registered SUV and ICVF channels plus a tumor mask,
/// all on an identical grid. The mask must contain at least one foreground
/// voxel (a study without visible tumor carries no growth signal).
#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    pub patient_id: String,
    /// Visit number, 1 to 3.
    pub timepoint: u8,
    /// Days since the first visit of the same patient.
    pub acquisition_day: i64,
    pub suv: ScalarVolume,
    pub icvf: ScalarVolume,
    pub mask: TumorMask,
}

impl Study {
    pub fn new(
        patient_id: String,
        timepoint: u8,
        acquisition_day: i64,
        suv: ScalarVolume,
        icvf: ScalarVolume,
        mask: TumorMask,
    ) -> Result<Self> {
        if !(1..=3).contains(&timepoint) {
            return Err(Error::invalid(
                "study",
                format!("timepoint must be 1..=3, got {timepoint}"),
            ));
        }
        if acquisition_day < 0 {
            return Err(Error::invalid(
                "study",
                format!("acquisition_day must be >= 0, got {acquisition_day}"),
            ));
        }
        if suv.dims() != icvf.dims() || suv.dims() != mask.dims() {
            return Err(Error::invalid(
                "study",
                format!(
                    "channel dims differ: suv {:?}, icvf {:?}, mask {:?}",
                    suv.dims(),
                    icvf.dims(),
                    mask.dims()
                ),
            ));
        }
        if suv.spacing() != icvf.spacing() || suv.spacing() != mask.spacing() {
            return Err(Error::invalid("study", "channel spacings differ".to_string()));
        }
        if let Some(i) = icvf.data().iter().position(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::invalid(
                "study",
                format!("icvf must lie in [0, 1], got {} at linear index {i}", icvf.data()[i]),
            ));
        }
        if let Some(i) = suv.data().iter().position(|&v| v < 0.0) {
            return Err(Error::invalid(
                "study",
                format!("suv must be non-negative, got {} at linear index {i}", suv.data()[i]),
            ));
        }
        if mask.foreground_count() == 0 {
            return Err(Error::invalid("study", "tumor mask has no foreground voxels"));
        }
        Ok(Study { patient_id, timepoint, acquisition_day, suv, icvf, mask })
    }

    pub fn dims(&self) -> Dims {
        self.suv.dims()
    }

    pub fn spacing(&self) -> Spacing {
        self.suv.spacing()
    }
}

/// Three visits of one patient plus clinical descriptors. Visit days are
/// strictly increasing with day 0 at the first visit.
#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalCase {
    pub patient_id: String,
    pub studies: [Study; 3],
    pub clinical: ClinicalRecord,
}

impl LongitudinalCase {
    pub fn new(patient_id: String, studies: [Study; 3], clinical: ClinicalRecord) -> Result<Self> {
        clinical.validate()?;
        for (i, s) in studies.iter().enumerate() {
            if s.timepoint != (i + 1) as u8 {
                return Err(Error::invalid(
                    "case",
                    format!("study {} has timepoint {}, expected {}", i, s.timepoint, i + 1),
                ));
            }
            if s.patient_id != patient_id {
                return Err(Error::invalid(
                    "case",
                    format!("study {} belongs to patient {}, expected {}", i, s.patient_id, patient_id),
                ));
            }
        }
        if studies[0].acquisition_day != 0 {
            return Err(Error::invalid(
                "case",
                format!("first visit must be day 0, got {}", studies[0].acquisition_day),
            ));
        }
        if studies[0].acquisition_day >= studies[1].acquisition_day
            || studies[1].acquisition_day >= studies[2].acquisition_day
        {
            return Err(Error::invalid(
                "case",
                format!(
                    "acquisition days must be strictly increasing, got {}, {}, {}",
                    studies[0].acquisition_day, studies[1].acquisition_day, studies[2].acquisition_day
                ),
            ));
        }
        Ok(LongitudinalCase { patient_id, studies, clinical })
    }

    /// Days between visit k and visit k+1, k in {0, 1}.
    pub fn interval_days(&self, k: usize) -> i64 {
        self.studies[k + 1].acquisition_day - self.studies[k].acquisition_day
    }
}

/// Rounds half-away-from-zero to an integer (f64::round semantics), the
/// convention used when snapping centroids to voxel indices.
pub fn round_half_away(v: f64) -> i64 {
    v.round() as i64
}

/// Foreground centroid in voxel coordinates. Errors on an empty mask.
pub fn mask_centroid(mask: &TumorMask) -> Result<(f64, f64, f64)> {
    let mut sum = (0.0f64, 0.0f64, 0.0f64);
    let mut n = 0usize;
    let (nx, ny, nz) = mask.dims();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if mask.get(x, y, z) {
                    sum.0 += x as f64;
                    sum.1 += y as f64;
                    sum.2 += z as f64;
                    n += 1;
                }
            }
        }
    }
    if n == 0 {
        return Err(Error::invalid("mask", "centroid of an empty mask is undefined"));
    }
    let n = n as f64;
    Ok((sum.0 / n, sum.1 / n, sum.2 / n))
}

/// Foreground volume in mm^3: voxel count times voxel volume.
pub fn tumor_volume_mm3(mask: &TumorMask) -> f64 {
    mask.foreground_count() as f64 * mask.voxel_volume_mm3()
}

/// Precomputed list of surface voxels of a mask. A surface voxel is a
/// foreground voxel with at least one 6-connected background neighbor;
/// out-of-bounds neighbors count as background.
pub struct SurfaceIndex {
    surface: Vec<(f64, f64, f64)>,
    all_foreground: bool,
}

impl SurfaceIndex {
    pub fn new(mask: &TumorMask) -> Self {
        let (nx, ny, nz) = mask.dims();
        let mut surface = Vec::new();
        let mut fg = 0usize;
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    if !mask.get(x, y, z) {
                        continue;
                    }
                    fg += 1;
                    let (xi, yi, zi) = (x as i64, y as i64, z as i64);
                    let on_surface = !mask.get_or_bg(xi - 1, yi, zi)
                        || !mask.get_or_bg(xi + 1, yi, zi)
                        || !mask.get_or_bg(xi, yi - 1, zi)
                        || !mask.get_or_bg(xi, yi + 1, zi)
                        || !mask.get_or_bg(xi, yi, zi - 1)
                        || !mask.get_or_bg(xi, yi, zi + 1);
                    if on_surface {
                        surface.push((x as f64, y as f64, z as f64));
                    }
                }
            }
        }
        SurfaceIndex { surface, all_foreground: fg == nx * ny * nz }
    }

    pub fn is_degenerate(&self) -> bool {
        // Empty mask has no surface; an all-foreground mask still has surface
        // voxels at the volume boundary, but distance signs become
        // meaningless for growth modeling, so both are rejected.
        self.surface.is_empty() || self.all_foreground
    }

    /// Unsigned Euclidean distance (in voxels) from `p` to the nearest
    /// surface voxel.
    pub fn distance(&self, p: (usize, usize, usize)) -> f64 {
        let (px, py, pz) = (p.0 as f64, p.1 as f64, p.2 as f64);
        let mut best = f64::INFINITY;
        for &(sx, sy, sz) in &self.surface {
            let d2 = (px - sx).powi(2) + (py - sy).powi(2) + (pz - sz).powi(2);
            if d2 < best {
                best = d2;
            }
        }
        best.sqrt()
    }
}

/// Signed Euclidean distance (voxels) from a voxel to the tumor surface:
/// positive inside the tumor, negative outside, zero on surface voxels.
/// Errors when the mask is empty or entirely foreground.
pub fn signed_distance_to_surface(mask: &TumorMask, p: (usize, usize, usize)) -> Result<f64> {
    let index = SurfaceIndex::new(mask);
    signed_distance_with_index(mask, &index, p)
}

/// Same as `signed_distance_to_surface`, reusing a prebuilt surface index.
pub fn signed_distance_with_index(
    mask: &TumorMask,
    index: &SurfaceIndex,
    p: (usize, usize, usize),
) -> Result<f64> {
    let (nx, ny, nz) = mask.dims();
    if p.0 >= nx || p.1 >= ny || p.2 >= nz {
        return Err(Error::invalid(
            "signed distance",
            format!("voxel {p:?} outside dims {:?}", mask.dims()),
        ));
    }
    if index.is_degenerate() {
        return Err(Error::invalid(
            "signed distance",
            "mask must contain both foreground and background voxels",
        ));
    }
    let d = index.distance(p);
    Ok(if mask.get(p.0, p.1, p.2) { d } else { -d })
}

/// Rigidly translates `moving` by the integer voxel offset that brings its
/// rounded tumor centroid onto the rounded tumor centroid of `reference`.
/// All channels are shifted together; voxels shifted in from outside read 0.
/// Both studies must share grid geometry.
pub fn align_at_tumor_center(moving: &Study, reference: &Study) -> Result<Study> {
    if moving.dims() != reference.dims() || moving.spacing() != reference.spacing() {
        return Err(Error::invalid(
            "alignment",
            format!(
                "grids differ: moving {:?}/{:?}, reference {:?}/{:?}",
                moving.dims(),
                moving.spacing(),
                reference.dims(),
                reference.spacing()
            ),
        ));
    }
    let cm = mask_centroid(&moving.mask)?;
    let cr = mask_centroid(&reference.mask)?;
    let off = (
        round_half_away(cr.0) - round_half_away(cm.0),
        round_half_away(cr.1) - round_half_away(cm.1),
        round_half_away(cr.2) - round_half_away(cm.2),
    );
    let (nx, ny, nz) = moving.dims();
    let translate_f32 = |src: &ScalarVolume| -> Result<ScalarVolume> {
        let mut out = vec![0f32; nx * ny * nz];
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    out[x + nx * (y + ny * z)] = src.get_or(
                        x as i64 - off.0,
                        y as i64 - off.1,
                        z as i64 - off.2,
                        0.0,
                    );
                }
            }
        }
        ScalarVolume::new(moving.dims(), moving.spacing(), out)
    };
    let mut mask_out = vec![0u8; nx * ny * nz];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if moving.mask.get_or_bg(x as i64 - off.0, y as i64 - off.1, z as i64 - off.2) {
                    mask_out[x + nx * (y + ny * z)] = 1;
                }
            }
        }
    }
    Study::new(
        moving.patient_id.clone(),
        moving.timepoint,
        moving.acquisition_day,
        translate_f32(&moving.suv)?,
        translate_f32(&moving.icvf)?,
        TumorMask::new(moving.dims(), moving.spacing(), mask_out)?,
    )
}
