//! Binary container for trained network weights.
//!
//! Layout (all integers little-endian):
//!   magic "GCNW" | format version u32 | input_hw u32 | input_channels u32 |
//!   conv1_filters u32 | conv2_filters u32 | fc1_units u32 |
//!   spec hash [32 bytes] | epoch_of_origin u32 | tensor count u8 |
//!   per tensor: name length u8, name bytes, element count u64, f32 LE data.
//! Tensors appear in canonical order and no trailing bytes are allowed.

use std::path::Path;

use crate::convnet::{NetSpec, NetTensors, NetWeights, TENSOR_NAMES};
use crate::error::{Error, Result};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"GCNW";
pub const WEIGHTS_VERSION: u32 = 1;

pub fn encode_weights(w: &NetWeights<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    for v in [
        w.spec.input_hw,
        w.spec.input_channels,
        w.spec.conv1_filters,
        w.spec.conv2_filters,
        w.spec.fc1_units,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&w.spec.spec_hash());
    out.extend_from_slice(&w.epoch_of_origin.to_le_bytes());
    out.push(TENSOR_NAMES.len() as u8);
    for (name, tensor) in w.tensors.fields() {
        out.push(name.len() as u8);
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.len() as u64).to_le_bytes());
        for &v in tensor {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::invalid("net weights", "truncated payload"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_weights(bytes: &[u8]) -> Result<NetWeights<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != WEIGHTS_MAGIC {
        return Err(Error::invalid("net weights", "bad magic"));
    }
    let version = r.u32()?;
    if version != WEIGHTS_VERSION {
        return Err(Error::invalid(
            "net weights",
            format!("unsupported format version {version}"),
        ));
    }
    let spec = NetSpec {
        input_hw: r.u32()? as usize,
        input_channels: r.u32()? as usize,
        conv1_filters: r.u32()? as usize,
        conv2_filters: r.u32()? as usize,
        fc1_units: r.u32()? as usize,
    };
    spec.shape()?;
    let stored_hash = r.take(32)?;
    if stored_hash != spec.spec_hash() {
        return Err(Error::invalid(
            "net weights",
            "architecture hash does not match the stored spec",
        ));
    }
    let epoch_of_origin = r.u32()?;
    let count = r.u8()?;
    if usize::from(count) != TENSOR_NAMES.len() {
        return Err(Error::invalid(
            "net weights",
            format!("expected {} tensors, header says {count}", TENSOR_NAMES.len()),
        ));
    }
    let mut tensors = NetTensors::<f32>::zeros(&spec)?;
    for (expected_name, dst) in tensors.fields_mut() {
        let name_len = usize::from(r.u8()?);
        let name = r.take(name_len)?;
        if name != expected_name.as_bytes() {
            return Err(Error::invalid(
                "net weights",
                format!(
                    "tensor order mismatch: expected {expected_name}, found {:?}",
                    String::from_utf8_lossy(name)
                ),
            ));
        }
        let len = r.u64()? as usize;
        if len != dst.len() {
            return Err(Error::invalid(
                "net weights",
                format!("{expected_name} has {len} values, spec expects {}", dst.len()),
            ));
        }
        let payload = r.take(len * 4)?;
        for (i, chunk) in payload.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::invalid(
                    "net weights",
                    format!("{expected_name}[{i}] is not finite"),
                ));
            }
            dst[i] = v;
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::invalid("net weights", "trailing bytes after last tensor"));
    }
    Ok(NetWeights { spec, tensors, epoch_of_origin })
}

pub fn save_weights(path: &Path, w: &NetWeights<f32>) -> Result<()> {
    std::fs::write(path, encode_weights(w)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<NetWeights<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes).map_err(|e| match e {
        Error::Invalid { what, why } => {
            Error::format(path, format!("{what}: {why}"))
        }
        other => other,
    })
}
