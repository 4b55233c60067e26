//! Binary training checkpoints.
//!
//! A checkpoint is everything needed to continue a run bit-for-bit: the run
//! seed (streams are addressed, so no generator state is stored), the step
//! counter, the normalizer EMA, the network architecture, the flat parameter
//! vector, and the Adam moment buffers with their step counter.
//!
//! Format: fixed magic, a version word, little-endian payload, and a
//! trailing FNV-1a checksum of the payload. Files are written to a sibling
//! temporary path and renamed into place so a crash never leaves a torn
//! checkpoint behind.

use crate::network::{NetworkSpec, Params};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::io::{Cursor, Read};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 8] = b"EIGFKCP\0";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

/// Resumable training state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    /// Completed training steps.
    pub step: u64,
    /// Normalizer EMA value.
    pub z: f64,
    pub spec: NetworkSpec,
    /// Flat parameter vector (both heads then lambda).
    pub params: Vec<f64>,
    /// Adam first-moment buffer, same layout as `params`.
    pub adam_m: Vec<f64>,
    /// Adam second-moment buffer, same layout as `params`.
    pub adam_v: Vec<f64>,
    /// Adam update counter (drives bias correction).
    pub adam_t: u64,
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn expected_len(spec: &NetworkSpec) -> usize {
    Params::zeros(spec).num_params()
}

impl Checkpoint {
    fn validate(&self) -> Result<(), CheckpointError> {
        let n = expected_len(&self.spec);
        for (name, len) in
            [("params", self.params.len()), ("adam_m", self.adam_m.len()), ("adam_v", self.adam_v.len())]
        {
            if len != n {
                return Err(CheckpointError::Corrupt(format!(
                    "{name} has {len} entries, architecture needs {n}"
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        self.validate()?;
        let mut payload = Vec::new();
        payload.write_u32::<LittleEndian>(VERSION)?;
        payload.write_u64::<LittleEndian>(self.seed)?;
        payload.write_u64::<LittleEndian>(self.step)?;
        payload.write_u64::<LittleEndian>(self.adam_t)?;
        payload.write_f64::<LittleEndian>(self.z)?;
        payload.write_u64::<LittleEndian>(self.spec.dim as u64)?;
        payload.write_u64::<LittleEndian>(self.spec.harmonics as u64)?;
        payload.write_f64::<LittleEndian>(self.spec.lambda_init)?;
        payload.write_u64::<LittleEndian>(self.spec.hidden.len() as u64)?;
        for &h in &self.spec.hidden {
            payload.write_u64::<LittleEndian>(h as u64)?;
        }
        payload.write_u64::<LittleEndian>(self.params.len() as u64)?;
        for buf in [&self.params, &self.adam_m, &self.adam_v] {
            for &v in buf {
                payload.write_f64::<LittleEndian>(v)?;
            }
        }

        let mut bytes = Vec::with_capacity(MAGIC.len() + payload.len() + 8);
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&payload);
        bytes.extend_from_slice(&fnv1a64(&payload).to_le_bytes());

        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, &bytes)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path)?;
        if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let payload = &bytes[MAGIC.len()..bytes.len() - 8];
        let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
        if fnv1a64(payload) != stored {
            return Err(CheckpointError::Corrupt("checksum mismatch".into()));
        }

        let mut c = Cursor::new(payload);
        let version = c.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let seed = c.read_u64::<LittleEndian>()?;
        let step = c.read_u64::<LittleEndian>()?;
        let adam_t = c.read_u64::<LittleEndian>()?;
        let z = c.read_f64::<LittleEndian>()?;
        let dim = c.read_u64::<LittleEndian>()? as usize;
        let harmonics = c.read_u64::<LittleEndian>()? as usize;
        let lambda_init = c.read_f64::<LittleEndian>()?;
        let n_hidden = c.read_u64::<LittleEndian>()? as usize;
        if n_hidden > 1024 {
            return Err(CheckpointError::Corrupt(format!("implausible layer count {n_hidden}")));
        }
        let mut hidden = Vec::with_capacity(n_hidden);
        for _ in 0..n_hidden {
            hidden.push(c.read_u64::<LittleEndian>()? as usize);
        }
        let spec = NetworkSpec { dim, harmonics, hidden, lambda_init };
        let n = c.read_u64::<LittleEndian>()? as usize;
        if n != expected_len(&spec) {
            return Err(CheckpointError::Corrupt(format!(
                "parameter count {n} does not match architecture ({})",
                expected_len(&spec)
            )));
        }
        let mut read_buf = |label: &str| -> Result<Vec<f64>, CheckpointError> {
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                out.push(
                    c.read_f64::<LittleEndian>()
                        .map_err(|_| CheckpointError::Corrupt(format!("{label} truncated")))?,
                );
            }
            Ok(out)
        };
        let params = read_buf("params")?;
        let adam_m = read_buf("adam_m")?;
        let adam_v = read_buf("adam_v")?;
        let mut rest = Vec::new();
        c.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(CheckpointError::Corrupt(format!("{} trailing bytes", rest.len())));
        }
        Ok(Checkpoint { seed, step, z, spec, params, adam_m, adam_v, adam_t })
    }
}
