//! Versioned binary checkpoints: model config plus named parameter
//! tensors, with exact bit-level round trips.
//!
//! Layout (little endian): magic `BPCK`, format version, dtype tag,
//! JSON-encoded model config, then each tensor as name, shape and raw
//! scalar bytes.

use std::io::{Read, Write};
use std::path::Path;

use crate::autodiff::Scalar;
use crate::error::{Error, Result};
use crate::models::{build_model, ModelBundle, ModelConfig};

const MAGIC: &[u8; 4] = b"BPCK";
const VERSION: u32 = 1;

fn write_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn write_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    write_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "{}: truncated at byte {}",
                self.path, self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint(format!("{}: invalid utf-8", self.path)))
    }
}

/// Serialize config and parameters.
pub fn save<F: Scalar>(path: &Path, bundle: &ModelBundle<F>) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    write_u32(&mut out, VERSION);
    write_str(&mut out, F::DTYPE);
    let config = serde_json::to_string(&bundle.config)
        .map_err(|e| Error::Checkpoint(format!("config serialization: {e}")))?;
    write_str(&mut out, &config);
    write_u32(&mut out, bundle.store.num_tensors() as u32);
    for (name, tensor) in bundle.store.iter() {
        write_str(&mut out, name);
        write_u32(&mut out, tensor.ndim() as u32);
        for &d in tensor.shape() {
            write_u64(&mut out, d as u64);
        }
        let std = tensor.as_standard_layout();
        for v in std.iter() {
            let bits = v.as_f64().to_bits();
            match F::DTYPE {
                "f32" => out.extend_from_slice(&(f64::from_bits(bits) as f32).to_le_bytes()),
                _ => out.extend_from_slice(&bits.to_le_bytes()),
            }
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

/// Load a checkpoint into a freshly built bundle of the stored config.
/// Validates the magic, the scalar type and that the stored tensors match
/// the architecture exactly.
pub fn load<F: Scalar>(path: &Path) -> Result<ModelBundle<F>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut r = Reader {
        buf: &buf,
        pos: 0,
        path: path.display().to_string(),
    };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: not a checkpoint file",
            path.display()
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    let dtype = r.string()?;
    if dtype != F::DTYPE {
        return Err(Error::Checkpoint(format!(
            "{}: stores {dtype} parameters, requested {}",
            path.display(),
            F::DTYPE
        )));
    }
    let config: ModelConfig = serde_json::from_str(&r.string()?)
        .map_err(|e| Error::Checkpoint(format!("{}: bad config: {e}", path.display())))?;
    let mut bundle = build_model::<F>(config, 0)?;

    let count = r.u32()? as usize;
    let mut seen = 0usize;
    for _ in 0..count {
        let name = r.string()?;
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            let v = match dtype.as_str() {
                "f32" => f32::from_le_bytes(r.take(4)?.try_into().unwrap()) as f64,
                _ => f64::from_bits(u64::from_le_bytes(r.take(8)?.try_into().unwrap())),
            };
            data.push(F::cast(v));
        }
        if !bundle.store.contains(&name) {
            return Err(Error::Checkpoint(format!(
                "{}: unknown parameter {name}",
                path.display()
            )));
        }
        let target = bundle.store.value_mut(&name);
        if target.shape() != shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "{}: parameter {name} has shape {:?}, expected {:?}",
                path.display(),
                shape,
                target.shape()
            )));
        }
        *target = ndarray::ArrayD::from_shape_vec(shape, data).unwrap();
        seen += 1;
    }
    if seen != bundle.store.num_tensors() {
        return Err(Error::Checkpoint(format!(
            "{}: {seen} tensors stored, architecture has {}",
            path.display(),
            bundle.store.num_tensors()
        )));
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ModelConfig, Variant};
    use crate::pipeline::make_windows;
    use crate::sim::{generate_match, script_library};

    #[test]
    fn round_trip_is_bit_exact_at_f64() {
        let sim = generate_match(&script_library()[1]).unwrap();
        let w = &make_windows(
            &sim.episodes[0],
            &sim.ball_truth[0],
            &sim.labels[0],
            &sim.agents,
            12,
            12,
        )
        .unwrap()[0];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bpck");

        let bundle = crate::models::build_model::<f64>(ModelConfig::tiny(Variant::HLstm), 5)
            .unwrap();
        save(&path, &bundle).unwrap();
        let loaded = load::<f64>(&path).unwrap();
        assert_eq!(loaded.config, bundle.config);
        let (_, a) = bundle.infer(w).unwrap();
        let (_, b) = loaded.infer(w).unwrap();
        assert_eq!(a.positions, b.positions, "bit-for-bit predictions");
    }

    #[test]
    fn f32_round_trip_and_dtype_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bpck");
        let bundle = crate::models::build_model::<f32>(ModelConfig::tiny(Variant::Lstm), 5)
            .unwrap();
        save(&path, &bundle).unwrap();
        assert!(load::<f32>(&path).is_ok());
        assert!(matches!(
            load::<f64>(&path),
            Err(crate::error::Error::Checkpoint(_))
        ));
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bpck");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(
            load::<f64>(&path),
            Err(crate::error::Error::Checkpoint(_))
        ));
    }
}
