//! Binary checkpoint format.
//!
//! Layout: magic `PPPCKPT1`, format version u32, then a checksummed payload
//! holding the arch name, epoch, and a named tensor table (u32 dims,
//! little-endian f32 data). Loads verify the checksum and refuse corrupted
//! files; round-trips are bit-exact.

use crate::error::{Error, Result};
use crate::hash::fnv1a64;
use crate::params::ParamSet;
use crate::tensor::{Shape, Tensor};
use std::collections::HashMap;
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PPPCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: String,
    pub epoch: u64,
    /// Name -> tensor, insertion-ordered at save time.
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_params(arch: &str, epoch: u64, params: &ParamSet<f32>) -> Self {
        Checkpoint {
            arch: arch.to_string(),
            epoch,
            tensors: params
                .named_values()
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect(),
        }
    }

    /// Load the tensor table into an existing parameter set (shapes must
    /// match the owning arch).
    pub fn apply_to(&self, params: &mut ParamSet<f32>) -> Result<()> {
        let table: HashMap<String, Tensor> = self.tensors.iter().cloned().collect();
        params.load_named(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut payload = Vec::new();
        push_str(&mut payload, &self.arch);
        payload.extend_from_slice(&self.epoch.to_le_bytes());
        payload.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            push_str(&mut payload, name);
            let s = t.shape();
            for d in [s.n, s.c, s.h, s.w] {
                payload.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut out = Vec::with_capacity(payload.len() + 24);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&fnv1a64(&payload).to_le_bytes());
        out.extend_from_slice(&payload);
        std::fs::write(path, &out).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let fail = |d: String| Error::Format { what: "checkpoint", detail: d };
        if bytes.len() < 20 {
            return Err(fail("file too short".into()));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(fail("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(fail(format!("unsupported version {version}")));
        }
        let stored = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let payload = &bytes[20..];
        if fnv1a64(payload) != stored {
            return Err(fail("checksum mismatch: refusing to load".into()));
        }

        let mut cur = Cursor { bytes: payload, pos: 0 };
        let arch = cur.read_str()?;
        let epoch = u64::from_le_bytes(cur.take(8)?.try_into().unwrap());
        let count = u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name = cur.read_str()?;
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize;
            }
            let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
            let raw = cur.take(shape.len() * 4)?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((name, Tensor::from_vec(shape, data)?));
        }
        if cur.pos != payload.len() {
            return Err(fail("trailing bytes".into()));
        }
        Ok(Checkpoint { arch, epoch, tensors })
    }
}

fn push_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let slice = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or(Error::Format { what: "checkpoint", detail: "truncated".into() })?;
        self.pos += n;
        Ok(slice)
    }

    fn read_str(&mut self) -> Result<String> {
        let len = u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| Error::Format { what: "checkpoint", detail: "bad utf8".into() })
    }
}
