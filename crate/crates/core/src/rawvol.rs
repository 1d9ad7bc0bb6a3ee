//! On-disk volume format: a small text header (`.hdr`) next to a raw
//! little-endian f32 payload (`.raw`) sharing the same stem.
//!
//! Header grammar, one `key=value` pair per line, all four keys required,
//! no duplicates, no unknown keys:
//!
//! ```text
//! dims=NX NY NZ
//! spacing=SX SY SZ
//! dtype=f32
//! order=xyz-x-fastest
//! ```

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::volume::{Dims, ScalarVolume, Spacing, TumorMask};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeHeader {
    pub dims: Dims,
    pub spacing: Spacing,
}

impl VolumeHeader {
    pub fn voxel_count(&self) -> usize {
        self.dims.0 * self.dims.1 * self.dims.2
    }

    pub fn payload_len_bytes(&self) -> usize {
        self.voxel_count() * 4
    }
}

/// Parses header text. Strict: exactly the four known keys, each once.
pub fn parse_volume_header(text: &str) -> Result<VolumeHeader> {
    let bad = |why: String| Error::invalid("volume header", why);
    let mut dims: Option<Dims> = None;
    let mut spacing: Option<Spacing> = None;
    let mut dtype_seen = false;
    let mut order_seen = false;
    for (lineno, raw_line) in text.lines().enumerate() {
        let line = raw_line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("line {}: expected key=value, got {line:?}", lineno + 1)))?;
        match key {
            "dims" => {
                if dims.is_some() {
                    return Err(bad("duplicate key dims".into()));
                }
                let parts: Vec<&str> = value.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(bad(format!("dims needs 3 integers, got {value:?}")));
                }
                let mut d = [0usize; 3];
                for (i, p) in parts.iter().enumerate() {
                    d[i] = p
                        .parse::<usize>()
                        .map_err(|_| bad(format!("dims component {p:?} is not an unsigned integer")))?;
                    if d[i] == 0 {
                        return Err(bad("dims components must be >= 1".into()));
                    }
                }
                // Guard the later len*4 multiplication and allocation.
                let n = d[0]
                    .checked_mul(d[1])
                    .and_then(|v| v.checked_mul(d[2]))
                    .and_then(|v| v.checked_mul(4))
                    .ok_or_else(|| bad(format!("dims {d:?} overflow payload size")))?;
                if n > (1usize << 33) {
                    return Err(bad(format!("payload of {n} bytes exceeds the 8 GiB format limit")));
                }
                dims = Some((d[0], d[1], d[2]));
            }
            "spacing" => {
                if spacing.is_some() {
                    return Err(bad("duplicate key spacing".into()));
                }
                let parts: Vec<&str> = value.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(bad(format!("spacing needs 3 reals, got {value:?}")));
                }
                let mut s = [0f64; 3];
                for (i, p) in parts.iter().enumerate() {
                    s[i] = p
                        .parse::<f64>()
                        .map_err(|_| bad(format!("spacing component {p:?} is not a real number")))?;
                    if !s[i].is_finite() || s[i] <= 0.0 {
                        return Err(bad(format!("spacing components must be finite and positive, got {}", s[i])));
                    }
                }
                spacing = Some((s[0], s[1], s[2]));
            }
            "dtype" => {
                if dtype_seen {
                    return Err(bad("duplicate key dtype".into()));
                }
                if value != "f32" {
                    return Err(bad(format!("unsupported dtype {value:?}, only f32")));
                }
                dtype_seen = true;
            }
            "order" => {
                if order_seen {
                    return Err(bad("duplicate key order".into()));
                }
                if value != "xyz-x-fastest" {
                    return Err(bad(format!("unsupported order {value:?}, only xyz-x-fastest")));
                }
                order_seen = true;
            }
            other => return Err(bad(format!("unknown key {other:?}"))),
        }
    }
    let dims = dims.ok_or_else(|| bad("missing key dims".into()))?;
    let spacing = spacing.ok_or_else(|| bad("missing key spacing".into()))?;
    if !dtype_seen {
        return Err(bad("missing key dtype".into()));
    }
    if !order_seen {
        return Err(bad("missing key order".into()));
    }
    Ok(VolumeHeader { dims, spacing })
}

pub fn encode_volume_header(dims: Dims, spacing: Spacing) -> String {
    // f64 Display prints the shortest round-trip decimal, so encode/parse is
    // lossless and byte-stable.
    format!(
        "dims={} {} {}\nspacing={} {} {}\ndtype=f32\norder=xyz-x-fastest\n",
        dims.0, dims.1, dims.2, spacing.0, spacing.1, spacing.2
    )
}

/// Decodes a payload against its header: length must match exactly and all
/// values must be finite.
pub fn decode_volume_payload(header: &VolumeHeader, bytes: &[u8]) -> Result<ScalarVolume> {
    let want = header.payload_len_bytes();
    if bytes.len() != want {
        return Err(Error::invalid(
            "volume payload",
            format!(
                "length {} does not match header ({} voxels = {want} bytes)",
                bytes.len(),
                header.voxel_count()
            ),
        ));
    }
    let mut data = Vec::with_capacity(header.voxel_count());
    for chunk in bytes.chunks_exact(4) {
        data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
    }
    ScalarVolume::new(header.dims, header.spacing, data)
}

pub fn encode_volume_payload(vol: &ScalarVolume) -> Vec<u8> {
    let mut out = Vec::with_capacity(vol.data().len() * 4);
    for &v in vol.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn raw_path_for(header_path: &Path) -> Result<PathBuf> {
    if header_path.extension().and_then(|e| e.to_str()) != Some("hdr") {
        return Err(Error::format(header_path, "volume path must end in .hdr".to_string()));
    }
    Ok(header_path.with_extension("raw"))
}

/// Loads a volume given the path of its `.hdr` file; the payload is read
/// from the sibling `.raw`.
pub fn load_volume(header_path: &Path) -> Result<ScalarVolume> {
    let raw_path = raw_path_for(header_path)?;
    let text = std::fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
    let header = parse_volume_header(&text)
        .map_err(|e| Error::format(header_path, e.to_string()))?;
    let bytes = std::fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    decode_volume_payload(&header, &bytes).map_err(|e| Error::format(&raw_path, e.to_string()))
}

/// Writes `.hdr` and `.raw` for the given header path.
pub fn save_volume(vol: &ScalarVolume, header_path: &Path) -> Result<()> {
    let raw_path = raw_path_for(header_path)?;
    std::fs::write(header_path, encode_volume_header(vol.dims(), vol.spacing()))
        .map_err(|e| Error::io(header_path, e))?;
    std::fs::write(&raw_path, encode_volume_payload(vol)).map_err(|e| Error::io(&raw_path, e))
}

/// Reinterprets a scalar volume as a binary mask; every voxel must be
/// exactly 0.0 or 1.0.
pub fn mask_from_volume(vol: &ScalarVolume) -> Result<TumorMask> {
    let mut data = Vec::with_capacity(vol.data().len());
    for (i, &v) in vol.data().iter().enumerate() {
        if v == 0.0 {
            data.push(0u8);
        } else if v == 1.0 {
            data.push(1u8);
        } else {
            return Err(Error::invalid(
                "mask volume",
                format!("voxel values must be exactly 0 or 1, got {v} at linear index {i}"),
            ));
        }
    }
    TumorMask::new(vol.dims(), vol.spacing(), data)
}

pub fn mask_to_volume(mask: &TumorMask) -> ScalarVolume {
    let data: Vec<f32> = mask.data().iter().map(|&m| m as f32).collect();
    ScalarVolume::new(mask.dims(), mask.spacing(), data)
        .expect("mask geometry is always a valid volume geometry")
}

pub fn load_mask(header_path: &Path) -> Result<TumorMask> {
    let vol = load_volume(header_path)?;
    mask_from_volume(&vol).map_err(|e| Error::format(header_path, e.to_string()))
}

pub fn save_mask(mask: &TumorMask, header_path: &Path) -> Result<()> {
    save_volume(&mask_to_volume(mask), header_path)
}

/// SHA-256 over geometry and payload bits; used by the evaluation leakage
/// guard to prove held-out data was not mutated between sealing and scoring.
pub fn content_hash(vol: &ScalarVolume) -> [u8; 32] {
    let mut h = Sha256::new();
    let d = vol.dims();
    let s = vol.spacing();
    for v in [d.0 as u64, d.1 as u64, d.2 as u64] {
        h.update(v.to_le_bytes());
    }
    for v in [s.0, s.1, s.2] {
        h.update(v.to_le_bytes());
    }
    for &v in vol.data() {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}
