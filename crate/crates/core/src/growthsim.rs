//! Reaction-diffusion tumor growth simulation.
//!
//! Serves two roles: synthesizing three-visit phantom cohorts with known
//! dynamics, and acting as the model-based baseline predictor that the
//! learned pipeline is compared against.
//!
//! Dynamics: `du/dt = D lap(u) + rho u (1 - u)` on a normalized cell
//! density `u` in [0, 1], integrated by explicit Euler with zero-flux
//! (mirrored-neighbor) boundaries. `D` is in voxel-spacing units squared
//! per day, `rho` per day.

use rand::Rng;

use crate::error::{Error, Result};
use crate::seed::{self, standard_normal, Stage};
use crate::volume::{
    ClinicalRecord, Dims, LongitudinalCase, ScalarVolume, Spacing, Study, SurfaceIndex, TumorMask,
};

/// Dense cell-density field, f64 for conservation-grade arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    dims: Dims,
    spacing: Spacing,
    data: Vec<f64>,
}

impl DensityField {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<f64>) -> Result<Self> {
        // Reuse volume geometry validation by constructing a throwaway mask.
        TumorMask::empty(dims, spacing)?;
        let n = dims.0 * dims.1 * dims.2;
        if data.len() != n {
            return Err(Error::invalid(
                "density field",
                format!("expected {n} values for dims {dims:?}, got {}", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(
                "density field",
                format!("values must lie in [0, 1], got {} at linear index {i}", data[i]),
            ));
        }
        Ok(DensityField { dims, spacing, data })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn total_mass(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn to_mask(&self, threshold: f64) -> TumorMask {
        let data: Vec<u8> = self.data.iter().map(|&u| u8::from(u >= threshold)).collect();
        TumorMask::new(self.dims, self.spacing, data).expect("binary data from threshold")
    }
}

/// Converts a binary mask into a density field: foreground voxels get
/// `clamp(0.5 + d, 0, 1)` where `d` is the distance (voxels) to the mask
/// surface, background stays 0. Surface voxels sit at 0.5, so thresholding
/// at 0.5 recovers exactly the original mask, while the interior ramp gives
/// the dynamics the same front shape as the seed-ball initialization.
pub fn mask_to_density(mask: &TumorMask) -> DensityField {
    let (nx, ny, nz) = mask.dims();
    let mut data = vec![0f64; nx * ny * nz];
    let index = SurfaceIndex::new(mask);
    if !index.is_degenerate() || mask.foreground_count() == nx * ny * nz {
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    if mask.get(x, y, z) {
                        data[x + nx * (y + ny * z)] =
                            (0.5 + index.distance((x, y, z))).clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
    DensityField { dims: mask.dims(), spacing: mask.spacing(), data }
}

/// Reaction-diffusion parameters. `diffusivity` in mm^2/day (spacing
/// units), `proliferation` in 1/day, `step_days` the Euler step, and
/// `threshold` the density level treated as visible tumor.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RdParams {
    pub diffusivity: f64,
    pub proliferation: f64,
    pub step_days: f64,
    pub threshold: f64,
}

impl RdParams {
    /// Largest Euler step that keeps the diffusion update a convex
    /// combination (hence stable and bound-preserving) on the given grid:
    /// `h_min^2 / (6 D)`.
    pub fn stability_limit(diffusivity: f64, spacing: Spacing) -> f64 {
        if diffusivity <= 0.0 {
            return f64::INFINITY;
        }
        let h_min = spacing.0.min(spacing.1).min(spacing.2);
        h_min * h_min / (6.0 * diffusivity)
    }

    pub fn validate(&self, spacing: Spacing) -> Result<()> {
        for (name, v) in [
            ("diffusivity", self.diffusivity),
            ("proliferation", self.proliferation),
            ("step_days", self.step_days),
            ("threshold", self.threshold),
        ] {
            if !v.is_finite() {
                return Err(Error::invalid("rd params", format!("{name} must be finite, got {v}")));
            }
        }
        if self.diffusivity < 0.0 || self.proliferation < 0.0 {
            return Err(Error::invalid(
                "rd params",
                format!(
                    "rates must be non-negative, got D={}, rho={}",
                    self.diffusivity, self.proliferation
                ),
            ));
        }
        if self.step_days <= 0.0 {
            return Err(Error::invalid(
                "rd params",
                format!("step_days must be positive, got {}", self.step_days),
            ));
        }
        if !(0.0 < self.threshold && self.threshold < 1.0) {
            return Err(Error::invalid(
                "rd params",
                format!("threshold must lie in (0, 1), got {}", self.threshold),
            ));
        }
        let limit = Self::stability_limit(self.diffusivity, spacing);
        if self.step_days > limit {
            return Err(Error::numerical(
                "rd step",
                format!(
                    "step_days {} violates the explicit-Euler stability limit {limit} for D={}",
                    self.step_days, self.diffusivity
                ),
            ));
        }
        // rho * dt <= 1 keeps the logistic update monotone and within [0,1].
        if self.proliferation * self.step_days > 1.0 {
            return Err(Error::numerical(
                "rd step",
                format!(
                    "proliferation {} per step of {} days overshoots the logistic map",
                    self.proliferation, self.step_days
                ),
            ));
        }
        Ok(())
    }
}

/// One explicit Euler step. Zero-flux boundaries are realized by mirroring:
/// an out-of-bounds neighbor reads the center value, so no mass crosses the
/// boundary and diffusion-only steps conserve total mass exactly (up to
/// f64 rounding).
pub fn rd_step(u: &DensityField, params: &RdParams) -> Result<DensityField> {
    params.validate(u.spacing)?;
    let (nx, ny, nz) = u.dims;
    let (hx, hy, hz) = u.spacing;
    let (ix2, iy2, iz2) = (1.0 / (hx * hx), 1.0 / (hy * hy), 1.0 / (hz * hz));
    let d = params.diffusivity;
    let rho = params.proliferation;
    let dt = params.step_days;
    let src = &u.data;
    let mut out = vec![0f64; src.len()];
    for z in 0..nz {
        let zm = if z > 0 { z - 1 } else { z };
        let zp = if z + 1 < nz { z + 1 } else { z };
        for y in 0..ny {
            let ym = if y > 0 { y - 1 } else { y };
            let yp = if y + 1 < ny { y + 1 } else { y };
            let row = nx * (y + ny * z);
            let row_ym = nx * (ym + ny * z);
            let row_yp = nx * (yp + ny * z);
            let row_zm = nx * (y + ny * zm);
            let row_zp = nx * (y + ny * zp);
            for x in 0..nx {
                let xm = if x > 0 { x - 1 } else { x };
                let xp = if x + 1 < nx { x + 1 } else { x };
                let c = src[row + x];
                let lap = (src[row + xm] - 2.0 * c + src[row + xp]) * ix2
                    + (src[row_ym + x] - 2.0 * c + src[row_yp + x]) * iy2
                    + (src[row_zm + x] - 2.0 * c + src[row_zp + x]) * iz2;
                let next = c + dt * (d * lap + rho * c * (1.0 - c));
                out[row + x] = next.clamp(0.0, 1.0);
            }
        }
    }
    Ok(DensityField { dims: u.dims, spacing: u.spacing, data: out })
}

/// Integrates `ceil(duration / step_days)` full Euler steps (zero steps for
/// zero duration). The simulated time is therefore the smallest multiple of
/// the step length covering the duration.
pub fn simulate(u0: &DensityField, params: &RdParams, duration_days: f64) -> Result<DensityField> {
    if !duration_days.is_finite() || duration_days < 0.0 {
        return Err(Error::invalid(
            "simulation duration",
            format!("must be finite and non-negative, got {duration_days}"),
        ));
    }
    params.validate(u0.spacing)?;
    let steps = (duration_days / params.step_days).ceil() as u64;
    if steps > 5_000_000 {
        return Err(Error::invalid(
            "simulation duration",
            format!("{steps} steps exceed the sanity limit; increase step_days"),
        ));
    }
    let mut u = u0.clone();
    for _ in 0..steps {
        u = rd_step(&u, params)?;
    }
    Ok(u)
}

/// Phantom cohort generation settings. Rates are sampled uniformly from the
/// configured ranges per case; visit intervals are Gaussian, clamped.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub dims: Dims,
    pub spacing: Spacing,
    /// Master seed for cohort generation; case i derives its own stream.
    pub seed: u64,
    /// Initial tumor ball radius in voxels, placed at the grid center.
    pub seed_radius_vox: f64,
    pub diffusivity_range: (f64, f64),
    pub proliferation_range: (f64, f64),
    pub interval_mean_days: f64,
    pub interval_std_days: f64,
    pub interval_min_days: i64,
    pub interval_max_days: i64,
    /// Euler step cap; the actual step also respects the stability limit.
    pub max_step_days: f64,
    /// Density level rendered as visible tumor in the masks.
    pub mask_threshold: f64,
    pub suv_background: f64,
    pub suv_foreground: f64,
    pub suv_noise_std: f64,
    pub icvf_background: f64,
    pub icvf_foreground: f64,
    pub icvf_noise_std: f64,
    pub age_mean_years: f64,
    pub age_std_years: f64,
    pub height_mean_m: f64,
    pub height_std_m: f64,
    pub weight_mean_kg: f64,
    pub weight_std_kg: f64,
    pub gender_p_male: f64,
    /// The final tumor must keep this many voxels of clearance from every
    /// volume face (leaves room for patch sampling around the tumor).
    pub edge_margin_vox: usize,
    /// Required relative volume growth between consecutive visits.
    pub min_growth_fraction: f64,
    /// Days the seed evolves before the first visit. A fresh ball spends its
    /// first months building the traveling front, so without burn-in the
    /// first interval grows much slower than the second.
    pub burn_in_days: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            dims: (48, 48, 48),
            spacing: (1.0, 1.0, 1.0),
            seed: 42,
            seed_radius_vox: 3.0,
            diffusivity_range: (5.0e-4, 8.0e-4),
            proliferation_range: (4.0e-3, 6.0e-3),
            interval_mean_days: 418.0,
            interval_std_days: 142.0,
            interval_min_days: 180,
            interval_max_days: 900,
            max_step_days: 1.0,
            mask_threshold: 0.5,
            suv_background: 2.0,
            suv_foreground: 10.0,
            suv_noise_std: 0.3,
            icvf_background: 0.2,
            icvf_foreground: 0.7,
            icvf_noise_std: 0.02,
            age_mean_years: 48.6,
            age_std_years: 13.9,
            height_mean_m: 1.70,
            height_std_m: 0.13,
            weight_mean_kg: 88.1,
            weight_std_kg: 16.7,
            gender_p_male: 5.0 / 7.0,
            edge_margin_vox: 15,
            min_growth_fraction: 0.15,
            burn_in_days: 0.0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |why: String| Error::invalid("phantom config", why);
        TumorMask::empty(self.dims, self.spacing)?;
        if self.seed_radius_vox < 1.0 || !self.seed_radius_vox.is_finite() {
            return Err(bad(format!("seed_radius_vox must be >= 1, got {}", self.seed_radius_vox)));
        }
        for (name, (lo, hi)) in [
            ("diffusivity_range", self.diffusivity_range),
            ("proliferation_range", self.proliferation_range),
        ] {
            if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || hi < lo {
                return Err(bad(format!("{name} must satisfy 0 <= lo <= hi, got ({lo}, {hi})")));
            }
        }
        if !(self.interval_mean_days.is_finite() && self.interval_std_days.is_finite())
            || self.interval_mean_days <= 0.0
            || self.interval_std_days < 0.0
        {
            return Err(bad("interval mean must be positive and std non-negative".into()));
        }
        if self.interval_min_days < 1 || self.interval_max_days < self.interval_min_days {
            return Err(bad(format!(
                "interval clamp must satisfy 1 <= min <= max, got ({}, {})",
                self.interval_min_days, self.interval_max_days
            )));
        }
        if !(self.max_step_days.is_finite() && self.max_step_days > 0.0) {
            return Err(bad(format!("max_step_days must be positive, got {}", self.max_step_days)));
        }
        if !(0.0 < self.mask_threshold && self.mask_threshold < 1.0) {
            return Err(bad(format!("mask_threshold must lie in (0,1), got {}", self.mask_threshold)));
        }
        for (name, v) in [
            ("suv_noise_std", self.suv_noise_std),
            ("icvf_noise_std", self.icvf_noise_std),
            ("age_std_years", self.age_std_years),
            ("height_std_m", self.height_std_m),
            ("weight_std_kg", self.weight_std_kg),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(bad(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.suv_background >= 0.0 && self.suv_foreground > self.suv_background) {
            return Err(bad(format!(
                "suv levels must satisfy 0 <= background < foreground, got ({}, {})",
                self.suv_background, self.suv_foreground
            )));
        }
        if !(0.0 <= self.icvf_background
            && self.icvf_background < self.icvf_foreground
            && self.icvf_foreground <= 1.0)
        {
            return Err(bad(format!(
                "icvf levels must satisfy 0 <= background < foreground <= 1, got ({}, {})",
                self.icvf_background, self.icvf_foreground
            )));
        }
        if !(0.0..=1.0).contains(&self.gender_p_male) {
            return Err(bad(format!("gender_p_male must lie in [0,1], got {}", self.gender_p_male)));
        }
        if !(self.min_growth_fraction.is_finite() && self.min_growth_fraction >= 0.0) {
            return Err(bad(format!(
                "min_growth_fraction must be non-negative, got {}",
                self.min_growth_fraction
            )));
        }
        if !(self.burn_in_days.is_finite() && self.burn_in_days >= 0.0) {
            return Err(bad(format!("burn_in_days must be non-negative, got {}", self.burn_in_days)));
        }
        // The seed tumor plus the edge margin must fit inside the grid on
        // every axis, or growth inevitably violates the margin.
        let min_half_extent = (self.dims.0.min(self.dims.1).min(self.dims.2) as f64) / 2.0;
        if self.seed_radius_vox + self.edge_margin_vox as f64 + 2.0 > min_half_extent {
            return Err(bad(format!(
                "dims {:?} too small for seed radius {} plus edge margin {}",
                self.dims, self.seed_radius_vox, self.edge_margin_vox
            )));
        }
        Ok(())
    }
}

/// Parses and validates a phantom config JSON document. Missing fields take
/// defaults; unknown fields are rejected.
pub fn parse_phantom_config(bytes: &[u8]) -> Result<PhantomConfig> {
    let cfg: PhantomConfig = serde_json::from_slice(bytes)
        .map_err(|e| Error::invalid("phantom config", e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Pretty JSON for a phantom config, newline terminated. Round trips through
/// [`parse_phantom_config`].
pub fn encode_phantom_config(cfg: &PhantomConfig) -> String {
    let mut text = serde_json::to_string_pretty(cfg).expect("phantom config serializes");
    text.push('\n');
    text
}

/// Ball mask: voxels within `radius` of `center`.
fn ball_mask(dims: Dims, spacing: Spacing, center: (f64, f64, f64), radius: f64) -> TumorMask {
    let (nx, ny, nz) = dims;
    let mut data = vec![0u8; nx * ny * nz];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let d2 = (x as f64 - center.0).powi(2)
                    + (y as f64 - center.1).powi(2)
                    + (z as f64 - center.2).powi(2);
                if d2 <= radius * radius {
                    data[x + nx * (y + ny * z)] = 1;
                }
            }
        }
    }
    TumorMask::new(dims, spacing, data).expect("ball mask geometry is valid")
}

/// Seed tumor density: the seed ball rendered through the same
/// `mask_to_density` ramp used when fitting dynamics to observed masks, so
/// synthesis and baseline fitting share identical initial conditions.
fn ball_density(dims: Dims, spacing: Spacing, center: (f64, f64, f64), radius: f64) -> DensityField {
    mask_to_density(&ball_mask(dims, spacing, center, radius))
}

fn mask_within_margin(mask: &TumorMask, margin: usize) -> bool {
    let Some((min, max)) = mask.bounding_box() else { return false };
    let (nx, ny, nz) = mask.dims();
    min.0 >= margin
        && min.1 >= margin
        && min.2 >= margin
        && max.0 + margin < nx
        && max.1 + margin < ny
        && max.2 + margin < nz
}

fn render_channel<R: Rng>(
    u: &DensityField,
    background: f64,
    foreground: f64,
    noise_std: f64,
    clamp: (f64, f64),
    rng: &mut R,
) -> ScalarVolume {
    let data: Vec<f32> = u
        .data
        .iter()
        .map(|&v| {
            let raw = background
                + (foreground - background) * v
                + noise_std * standard_normal(rng);
            raw.clamp(clamp.0, clamp.1) as f32
        })
        .collect();
    ScalarVolume::new(u.dims, u.spacing, data).expect("clamped channel data is valid")
}

/// Simulation products for one accepted phantom geometry.
struct GeometrySample {
    params: RdParams,
    intervals: (i64, i64),
    fields: [DensityField; 3],
}

/// Synthesizes one three-visit case. Draw order from `rng` (part of the
/// reproducibility contract): clinical record first, then per attempt the
/// intervals and rates, then image noise channel by channel, visit by
/// visit. Geometries whose tumor leaves the edge margin retry with smaller
/// proliferation; geometries growing less than `min_growth_fraction` per
/// visit retry with fresh draws.
pub fn synthesize_case<R: Rng>(config: &PhantomConfig, rng: &mut R) -> Result<LongitudinalCase> {
    config.validate()?;
    let clinical = ClinicalRecord {
        age_years: (config.age_mean_years + config.age_std_years * standard_normal(rng))
            .clamp(18.0, 95.0),
        gender: u8::from(rng.gen::<f64>() < config.gender_p_male),
        height_m: (config.height_mean_m + config.height_std_m * standard_normal(rng))
            .clamp(1.2, 2.2),
        weight_kg: (config.weight_mean_kg + config.weight_std_kg * standard_normal(rng))
            .clamp(35.0, 200.0),
    };

    let geometry = sample_geometry(config, rng)?;
    let GeometrySample { params, intervals, fields } = geometry;

    let days = [0i64, intervals.0, intervals.0 + intervals.1];
    let mut studies = Vec::with_capacity(3);
    for (i, u) in fields.iter().enumerate() {
        let suv = render_channel(
            u,
            config.suv_background,
            config.suv_foreground,
            config.suv_noise_std,
            (0.0, f64::INFINITY),
            rng,
        );
        let icvf = render_channel(
            u,
            config.icvf_background,
            config.icvf_foreground,
            config.icvf_noise_std,
            (0.0, 1.0),
            rng,
        );
        let mask = u.to_mask(params.threshold);
        studies.push(Study::new(
            "phantom".to_string(),
            (i + 1) as u8,
            days[i],
            suv,
            icvf,
            mask,
        )?);
    }
    let studies: [Study; 3] = studies.try_into().expect("three studies");
    LongitudinalCase::new("phantom".to_string(), studies, clinical)
}

fn sample_interval<R: Rng>(config: &PhantomConfig, rng: &mut R) -> i64 {
    let raw = config.interval_mean_days + config.interval_std_days * standard_normal(rng);
    (raw.round() as i64).clamp(config.interval_min_days, config.interval_max_days)
}

fn sample_geometry<R: Rng>(config: &PhantomConfig, rng: &mut R) -> Result<GeometrySample> {
    let (nx, ny, nz) = config.dims;
    let center = ((nx / 2) as f64, (ny / 2) as f64, (nz / 2) as f64);
    let seed = ball_density(config.dims, config.spacing, center, config.seed_radius_vox);

    let mut attempts = 0usize;
    'fresh: while attempts < 64 {
        let i1 = sample_interval(config, rng);
        let i2 = sample_interval(config, rng);
        let (dlo, dhi) = config.diffusivity_range;
        let (rlo, rhi) = config.proliferation_range;
        let d = dlo + (dhi - dlo) * rng.gen::<f64>();
        let mut rho = rlo + (rhi - rlo) * rng.gen::<f64>();

        // Inner loop: shrink proliferation when the tumor outgrows the
        // margin; everything else retries from fresh draws.
        for _ in 0..8 {
            attempts += 1;
            let step = RdParams::stability_limit(d, config.spacing).min(config.max_step_days);
            let params = RdParams {
                diffusivity: d,
                proliferation: rho,
                step_days: step,
                threshold: config.mask_threshold,
            };
            let u0 = if config.burn_in_days > 0.0 {
                simulate(&seed, &params, config.burn_in_days)?
            } else {
                seed.clone()
            };
            let u1 = simulate(&u0, &params, i1 as f64)?;
            let u2 = simulate(&u1, &params, i2 as f64)?;
            let m1 = u0.to_mask(params.threshold);
            let m2 = u1.to_mask(params.threshold);
            let m3 = u2.to_mask(params.threshold);
            if !(mask_within_margin(&m1, config.edge_margin_vox)
                && mask_within_margin(&m2, config.edge_margin_vox)
                && mask_within_margin(&m3, config.edge_margin_vox))
            {
                rho *= 0.8;
                continue;
            }
            let (v1, v2, v3) =
                (m1.foreground_count(), m2.foreground_count(), m3.foreground_count());
            let g = 1.0 + config.min_growth_fraction;
            if (v2 as f64) < (v1 as f64) * g || (v3 as f64) < (v2 as f64) * g {
                continue 'fresh;
            }
            return Ok(GeometrySample {
                params,
                intervals: (i1, i2),
                fields: [u0, u1, u2],
            });
        }
    }
    Err(Error::invalid(
        "phantom config",
        format!("no admissible growth geometry found in {attempts} attempts; ranges too extreme"),
    ))
}

/// Generates `n` cases named case000, case001, ... with per-case RNG
/// streams derived from `config.seed`.
pub fn generate_cohort(config: &PhantomConfig, n: usize) -> Result<Vec<LongitudinalCase>> {
    if n == 0 {
        return Err(Error::invalid("cohort size", "must generate at least one case"));
    }
    let mut cases = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = seed::stage_rng(config.seed, Stage::PhantomCase(i as u32));
        let mut case = synthesize_case(config, &mut rng)?;
        let id = format!("case{i:03}");
        case.patient_id = id.clone();
        for s in &mut case.studies {
            s.patient_id = id.clone();
        }
        cases.push(case);
    }
    Ok(cases)
}

/// Parameter grid searched by the baseline fit.
pub const BASELINE_D_GRID: [f64; 5] = [0.0, 0.02, 0.05, 0.1, 0.2];
pub const BASELINE_RHO_GRID: [f64; 5] = [0.0, 0.002, 0.005, 0.01, 0.02];

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineFit {
    pub params: RdParams,
    /// Dice achieved on the fitting transition.
    pub train_dice: f64,
}

fn dice_between(a: &TumorMask, b: &TumorMask) -> f64 {
    debug_assert_eq!(a.dims(), b.dims());
    let inter = a
        .data()
        .iter()
        .zip(b.data())
        .filter(|&(&x, &y)| x != 0 && y != 0)
        .count();
    let denom = a.foreground_count() + b.foreground_count();
    if denom == 0 {
        1.0
    } else {
        2.0 * inter as f64 / denom as f64
    }
}

/// Fits reaction-diffusion parameters to one observed transition by grid
/// search, maximizing Dice of the simulated mask against `to`. Ties prefer
/// smaller proliferation, then smaller diffusivity, which biases toward the
/// least aggressive dynamics explaining the data.
pub fn fit_baseline(from: &TumorMask, to: &TumorMask, interval_days: f64) -> Result<BaselineFit> {
    if from.dims() != to.dims() || from.spacing() != to.spacing() {
        return Err(Error::invalid("baseline fit", "mask grids differ"));
    }
    if from.foreground_count() == 0 || to.foreground_count() == 0 {
        return Err(Error::invalid("baseline fit", "masks must be nonempty"));
    }
    if !interval_days.is_finite() || interval_days <= 0.0 {
        return Err(Error::invalid(
            "baseline fit",
            format!("interval must be positive, got {interval_days}"),
        ));
    }
    let u0 = mask_to_density(from);
    let mut best: Option<(f64, RdParams)> = None;
    for &rho in &BASELINE_RHO_GRID {
        for &d in &BASELINE_D_GRID {
            let step = RdParams::stability_limit(d, from.spacing()).min(1.0);
            let params = RdParams { diffusivity: d, proliferation: rho, step_days: step, threshold: 0.5 };
            let u = simulate(&u0, &params, interval_days)?;
            let dice = dice_between(&u.to_mask(params.threshold), to);
            // Iteration order (rho outer ascending, D inner ascending) plus
            // strict improvement implements the tie-break.
            let better = match &best {
                None => true,
                Some((best_dice, _)) => dice > *best_dice,
            };
            if better {
                best = Some((dice, params));
            }
        }
    }
    let (train_dice, params) = best.expect("grid is nonempty");
    Ok(BaselineFit { params, train_dice })
}

/// Predicts a future mask by simulating fitted dynamics forward from the
/// current mask.
pub fn baseline_predict(
    current: &TumorMask,
    params: &RdParams,
    interval_days: f64,
) -> Result<TumorMask> {
    if current.foreground_count() == 0 {
        return Err(Error::invalid("baseline predict", "current mask is empty"));
    }
    let u = simulate(&mask_to_density(current), params, interval_days)?;
    Ok(u.to_mask(params.threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stage_rng;

    fn uniform_params(d: f64, rho: f64, dt: f64) -> RdParams {
        RdParams { diffusivity: d, proliferation: rho, step_days: dt, threshold: 0.5 }
    }

    fn blob_field(dims: Dims) -> DensityField {
        let c = ((dims.0 / 2) as f64, (dims.1 / 2) as f64, (dims.2 / 2) as f64);
        ball_density(dims, (1.0, 1.0, 1.0), c, 3.0)
    }

    #[test]
    fn density_field_validates_range() {
        assert!(DensityField::new((2, 2, 2), (1.0, 1.0, 1.0), vec![0.5; 8]).is_ok());
        assert!(DensityField::new((2, 2, 2), (1.0, 1.0, 1.0), vec![1.5; 8]).is_err());
        assert!(DensityField::new((2, 2, 2), (1.0, 1.0, 1.0), vec![-0.1; 8]).is_err());
        assert!(DensityField::new((2, 2, 2), (1.0, 1.0, 1.0), vec![0.5; 7]).is_err());
    }

    #[test]
    fn diffusion_only_step_conserves_mass() {
        let u = blob_field((20, 20, 20));
        let before = u.total_mass();
        let mut cur = u;
        let params = uniform_params(0.1, 0.0, 0.5);
        for _ in 0..50 {
            cur = rd_step(&cur, &params).unwrap();
        }
        let after = cur.total_mass();
        assert!(
            ((after - before) / before).abs() < 1e-6,
            "mass drifted from {before} to {after}"
        );
    }

    #[test]
    fn diffusion_conserves_mass_with_anisotropic_spacing() {
        let mut u = DensityField::new(
            (10, 12, 14),
            (0.8, 1.0, 2.5),
            (0..10 * 12 * 14).map(|i| (i % 7) as f64 / 7.0).collect(),
        )
        .unwrap();
        let before = u.total_mass();
        let params = uniform_params(0.2, 0.0, RdParams::stability_limit(0.2, (0.8, 1.0, 2.5)));
        for _ in 0..25 {
            u = rd_step(&u, &params).unwrap();
        }
        assert!(((u.total_mass() - before) / before).abs() < 1e-6);
    }

    #[test]
    fn zero_diffusivity_matches_exact_logistic_map() {
        let u = blob_field((12, 12, 12));
        let params = uniform_params(0.0, 0.03, 2.0);
        let stepped = rd_step(&u, &params).unwrap();
        for (i, (&before, &after)) in u.data().iter().zip(stepped.data()).enumerate() {
            let expect = (before + 2.0 * 0.03 * before * (1.0 - before)).clamp(0.0, 1.0);
            assert!(
                (after - expect).abs() < 1e-12,
                "voxel {i}: logistic map gives {expect}, rd_step gave {after}"
            );
        }
    }

    #[test]
    fn step_stays_within_bounds() {
        let u = blob_field((16, 16, 16));
        let params = uniform_params(0.15, 0.01, RdParams::stability_limit(0.15, (1.0, 1.0, 1.0)));
        let mut cur = u;
        for _ in 0..200 {
            cur = rd_step(&cur, &params).unwrap();
        }
        assert!(cur.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn unstable_step_is_rejected_as_numerical_error() {
        let u = blob_field((8, 8, 8));
        let params = uniform_params(1.0, 0.0, 1.0); // limit is 1/6
        let err = rd_step(&u, &params).unwrap_err();
        assert_eq!(err.class(), crate::error::ErrorClass::Numerical);
    }

    #[test]
    fn simulate_step_count_is_ceil() {
        // duration 10, step 3 -> 4 steps: compare against manual stepping.
        let u = blob_field((10, 10, 10));
        let params = uniform_params(0.0, 0.01, 3.0);
        let direct = simulate(&u, &params, 10.0).unwrap();
        let mut manual = u.clone();
        for _ in 0..4 {
            manual = rd_step(&manual, &params).unwrap();
        }
        assert_eq!(direct, manual);
        // Zero duration is the identity.
        assert_eq!(simulate(&u, &params, 0.0).unwrap(), u);
        assert!(simulate(&u, &params, -1.0).is_err());
    }

    #[test]
    fn growth_expands_the_thresholded_mask() {
        let u = blob_field((24, 24, 24));
        let params = uniform_params(0.05, 0.05, 1.0);
        let grown = simulate(&u, &params, 120.0).unwrap();
        let v0 = u.to_mask(0.5).foreground_count();
        let v1 = grown.to_mask(0.5).foreground_count();
        assert!(v1 > v0, "expected growth, got {v0} -> {v1}");
    }

    #[test]
    fn mask_to_density_threshold_recovers_mask_exactly() {
        let c = (8.0, 8.0, 8.0);
        let mask = {
            let u = ball_density((16, 16, 16), (1.0, 1.0, 1.0), c, 4.0);
            u.to_mask(0.5)
        };
        let density = mask_to_density(&mask);
        assert_eq!(density.to_mask(0.5), mask);
        // Deep interior voxels sit at exactly 1, surface voxels at 0.5.
        assert_eq!(density.data()[8 + 16 * (8 + 16 * 8)], 1.0);
        assert_eq!(density.data()[8 + 16 * (8 + 16 * 4)], 0.5);
        // Empty mask maps to the zero field.
        let empty = TumorMask::empty((4, 4, 4), (1.0, 1.0, 1.0)).unwrap();
        assert!(mask_to_density(&empty).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn phantom_config_validation() {
        assert!(PhantomConfig::default().validate().is_ok());
        let mut c = PhantomConfig::default();
        c.dims = (20, 20, 20); // too small for margin 15
        assert!(c.validate().is_err());
        let mut c = PhantomConfig::default();
        c.diffusivity_range = (0.5, 0.1);
        assert!(c.validate().is_err());
        let mut c = PhantomConfig::default();
        c.icvf_foreground = 1.2;
        assert!(c.validate().is_err());
        let mut c = PhantomConfig::default();
        c.min_growth_fraction = f64::NAN;
        assert!(c.validate().is_err());
    }

    #[test]
    fn phantom_config_json_round_trip_and_defaults() {
        let cfg = PhantomConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(parse_phantom_config(text.as_bytes()).unwrap(), cfg);
        // Partial config takes defaults.
        let partial = parse_phantom_config(br#"{"seed": 7}"#).unwrap();
        assert_eq!(partial.seed, 7);
        assert_eq!(partial.dims, cfg.dims);
        // Unknown fields rejected.
        assert!(parse_phantom_config(br#"{"sed": 7}"#).is_err());
        // Invalid values rejected after parse.
        assert!(parse_phantom_config(br#"{"mask_threshold": 2.0}"#).is_err());
    }

    #[test]
    fn synthesized_case_is_valid_and_grows() {
        let config = PhantomConfig::default();
        let mut rng = stage_rng(1, Stage::PhantomCase(0));
        let case = synthesize_case(&config, &mut rng).unwrap();
        let v: Vec<usize> = case.studies.iter().map(|s| s.mask.foreground_count()).collect();
        assert!(
            v[1] as f64 >= v[0] as f64 * 1.15 && v[2] as f64 >= v[1] as f64 * 1.15,
            "expected >= 15% growth per visit, got {v:?}"
        );
        for s in &case.studies {
            assert!(mask_within_margin(&s.mask, config.edge_margin_vox));
        }
        assert!(case.interval_days(0) >= config.interval_min_days);
        assert!(case.interval_days(1) >= config.interval_min_days);
    }

    #[test]
    fn synthesis_is_deterministic_per_seed() {
        let config = PhantomConfig::default();
        let a = synthesize_case(&config, &mut stage_rng(5, Stage::PhantomCase(3))).unwrap();
        let b = synthesize_case(&config, &mut stage_rng(5, Stage::PhantomCase(3))).unwrap();
        assert_eq!(a, b);
        let c = synthesize_case(&config, &mut stage_rng(6, Stage::PhantomCase(3))).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn burn_in_matures_the_first_visit() {
        // Burn-in evolves the seed ball before visit 1, so the first mask
        // starts larger; it runs inside the simulator and consumes no RNG
        // draws, so the sampled kinetics and clinical record are unchanged.
        // Kinetics are pushed fast enough that the front displacement over
        // the burn window clearly exceeds one voxel.
        let mut config = PhantomConfig {
            diffusivity_range: (1.5e-3, 1.5e-3),
            proliferation_range: (0.02, 0.02),
            ..PhantomConfig::default()
        };
        let plain = synthesize_case(&config, &mut stage_rng(9, Stage::PhantomCase(0))).unwrap();
        config.burn_in_days = 400.0;
        let burned = synthesize_case(&config, &mut stage_rng(9, Stage::PhantomCase(0))).unwrap();
        assert_eq!(plain.clinical, burned.clinical);
        let v0_plain = plain.studies[0].mask.foreground_count();
        let v0_burned = burned.studies[0].mask.foreground_count();
        assert!(
            v0_burned > v0_plain,
            "expected burn-in to enlarge visit 1: {v0_burned} <= {v0_plain}"
        );
    }

    #[test]
    fn cohort_names_and_count() {
        let mut config = PhantomConfig::default();
        config.seed = 11;
        let cases = generate_cohort(&config, 3).unwrap();
        assert_eq!(cases.len(), 3);
        assert_eq!(cases[0].patient_id, "case000");
        assert_eq!(cases[2].patient_id, "case002");
        assert_eq!(cases[1].studies[1].patient_id, "case001");
        assert!(generate_cohort(&config, 0).is_err());
    }

    #[test]
    fn baseline_fit_recovers_plausible_dynamics() {
        // Generate a transition with on-grid parameters, then check the fit
        // reproduces the target mask well.
        let dims = (32, 32, 32);
        let c = (16.0, 16.0, 16.0);
        let u0 = ball_density(dims, (1.0, 1.0, 1.0), c, 4.0);
        let truth = uniform_params(0.02, 0.01, 1.0);
        let m1 = u0.to_mask(0.5);
        let m2 = simulate(&u0, &truth, 400.0).unwrap().to_mask(0.5);
        assert!(m2.foreground_count() > m1.foreground_count());

        // Synthesis and fitting share the mask_to_density initialization
        // and the same Euler step at this D, so the true grid cell
        // reproduces the target mask exactly.
        let fit = fit_baseline(&m1, &m2, 400.0).unwrap();
        assert_eq!(fit.train_dice, 1.0, "params {:?}", fit.params);
        assert!(
            fit.params.diffusivity > 0.0 && fit.params.proliferation > 0.0,
            "degenerate identity fit"
        );
        // Fit is deterministic.
        let fit2 = fit_baseline(&m1, &m2, 400.0).unwrap();
        assert_eq!(fit.params, fit2.params);
    }

    #[test]
    fn baseline_predict_round_trip() {
        let dims = (28, 28, 28);
        let c = (14.0, 14.0, 14.0);
        let u0 = ball_density(dims, (1.0, 1.0, 1.0), c, 4.0);
        let m1 = u0.to_mask(0.5);
        let params = uniform_params(0.02, 0.01, 1.0);
        let pred = baseline_predict(&m1, &params, 400.0).unwrap();
        assert!(pred.foreground_count() >= m1.foreground_count());
        let empty = TumorMask::empty(dims, (1.0, 1.0, 1.0)).unwrap();
        assert!(baseline_predict(&empty, &params, 150.0).is_err());
    }

    #[test]
    fn baseline_fit_rejects_degenerate_input() {
        let dims = (16, 16, 16);
        let u = ball_density(dims, (1.0, 1.0, 1.0), (8.0, 8.0, 8.0), 3.0);
        let m = u.to_mask(0.5);
        let empty = TumorMask::empty(dims, (1.0, 1.0, 1.0)).unwrap();
        assert!(fit_baseline(&empty, &m, 100.0).is_err());
        assert!(fit_baseline(&m, &empty, 100.0).is_err());
        assert!(fit_baseline(&m, &m, 0.0).is_err());
        let other = TumorMask::empty((8, 8, 8), (1.0, 1.0, 1.0)).unwrap();
        assert!(fit_baseline(&m, &other, 100.0).is_err());
    }
}
