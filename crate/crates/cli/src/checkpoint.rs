//! Checkpoint container.
//!
//! All integers little-endian.
//!
//! ```text
//! magic        4 bytes  "UJSC"
//! version      u32      1
//! config_len   u64
//! config       UTF-8 run configuration text
//! entry_count  u32
//! entries      entry_count times:
//!   name_len   u32
//!   name       UTF-8
//!   dtype      u8       1 = f64
//!   rank       u8
//!   dims       rank × u64
//!   offset     u64      byte offset into the payload
//! payload_len  u64
//! payload      f64 little-endian values, entries back to back in manifest order
//! ```
//!
//! Entry names are the system state names (`codec{i}.…`, `codebook.{k}`),
//! with S-BN running statistics stored next to γ and β. Optional optimizer
//! state uses `adam.step` (one value), `adam.m.{i}` and `adam.v.{i}`.

use std::collections::BTreeSet;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use ujscc_core::codec::{Slot, System};
use ujscc_core::nn::Adam;

pub const MAGIC: &[u8; 4] = b"UJSC";
pub const VERSION: u32 = 1;
pub const DTYPE_F64: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub entries: Vec<Entry>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        ensure!(
            self.bytes.len() - self.pos >= n,
            "truncated checkpoint: need {n} bytes at offset {}",
            self.pos
        );
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(usize::try_from(self.u64()?)?)
    }

    fn string(&mut self, n: usize) -> Result<String> {
        let at = self.pos;
        String::from_utf8(self.take(n)?.to_vec()).with_context(|| format!("invalid UTF-8 at offset {at}"))
    }
}

impl Checkpoint {
    /// Full state of `sys`, plus optimizer moments when given.
    pub fn from_system(sys: &mut System, config: &str, adam: Option<&Adam>) -> Checkpoint {
        let mut entries: Vec<Entry> = sys
            .state_mut()
            .into_iter()
            .map(|(name, slot)| match slot {
                Slot::Param(p) => Entry {
                    name,
                    shape: p.value.shape().to_vec(),
                    data: p.value.data().to_vec(),
                },
                Slot::Buffer(b) => Entry {
                    name,
                    shape: vec![b.len()],
                    data: b.clone(),
                },
            })
            .collect();
        if let Some(a) = adam {
            entries.push(Entry {
                name: "adam.step".into(),
                shape: vec![1],
                data: vec![a.steps() as f64],
            });
            for (i, (m, v)) in a.moments().enumerate() {
                entries.push(Entry {
                    name: format!("adam.m.{i}"),
                    shape: vec![m.len()],
                    data: m.to_vec(),
                });
                entries.push(Entry {
                    name: format!("adam.v.{i}"),
                    shape: vec![v.len()],
                    data: v.to_vec(),
                });
            }
        }
        Checkpoint {
            config: config.to_string(),
            entries,
        }
    }

    /// Keeps only the entries whose names satisfy `keep`.
    pub fn subset(&self, keep: impl Fn(&str) -> bool) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            entries: self
                .entries
                .iter()
                .filter(|e| keep(&e.name))
                .cloned()
                .collect(),
        }
    }

    pub fn entry(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Writes every non-optimizer entry into the matching tensor of `sys`.
    /// Returns the names written. Unknown names and shape mismatches are
    /// errors; tensors missing from the checkpoint are left alone.
    pub fn restore_into(&self, sys: &mut System) -> Result<BTreeSet<String>> {
        let mut written = BTreeSet::new();
        let mut state = sys.state_mut();
        for e in self.entries.iter().filter(|e| !e.name.starts_with("adam.")) {
            let (_, slot) = state
                .iter_mut()
                .find(|(n, _)| *n == e.name)
                .with_context(|| format!("checkpoint entry `{}` does not exist in this model", e.name))?;
            match slot {
                Slot::Param(p) => {
                    ensure!(p.value.shape() == e.shape.as_slice(), "`{}`: shape {:?} != model {:?}", e.name, e.shape, p.value.shape());
                    p.value.data_mut().copy_from_slice(&e.data);
                }
                Slot::Buffer(b) => {
                    ensure!(e.shape == [b.len()], "`{}`: shape {:?} != model [{}]", e.name, e.shape, b.len());
                    b.copy_from_slice(&e.data);
                }
            }
            ensure!(written.insert(e.name.clone()), "duplicate entry `{}`", e.name);
        }
        Ok(written)
    }

    /// Optimizer state, if stored.
    pub fn adam(&self, lr: f64) -> Result<Option<Adam>> {
        let Some(step) = self.entry("adam.step") else {
            return Ok(None);
        };
        let mut moments = Vec::new();
        while let (Some(m), Some(v)) = (
            self.entry(&format!("adam.m.{}", moments.len())),
            self.entry(&format!("adam.v.{}", moments.len())),
        ) {
            moments.push((m.data.clone(), v.data.clone()));
        }
        let mut a = Adam::new(lr);
        a.restore(step.data[0] as u64, moments);
        Ok(Some(a))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config.len() as u64).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(DTYPE_F64);
            out.push(e.shape.len() as u8);
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += 8 * e.data.len() as u64;
        }
        out.extend_from_slice(&offset.to_le_bytes());
        for e in &self.entries {
            for v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        ensure!(r.take(4)? == MAGIC, "not a checkpoint: bad magic");
        let version = r.u32()?;
        ensure!(version == VERSION, "unsupported checkpoint version {version}");
        let config_len = r.usize()?;
        let config = r.string(config_len)?;
        let count = r.u32()? as usize;
        let mut manifest = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = r.string(name_len)?;
            let dtype = r.u8()?;
            ensure!(dtype == DTYPE_F64, "`{name}`: unsupported element type {dtype}");
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
            let offset = r.usize()?;
            manifest.push((name, shape, offset));
        }
        let payload_len = r.usize()?;
        let payload = r.take(payload_len)?;
        ensure!(r.pos == bytes.len(), "{} trailing bytes after payload", bytes.len() - r.pos);

        let mut expected = 0usize;
        let mut entries = Vec::with_capacity(count);
        for (name, shape, offset) in manifest {
            let n: usize = shape.iter().product();
            if offset != expected {
                bail!("`{name}`: offset {offset} does not follow the previous entry (expected {expected})");
            }
            let end = offset + 8 * n;
            ensure!(end <= payload.len(), "`{name}`: data runs past the payload");
            let data = payload[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            expected = end;
            entries.push(Entry { name, shape, data });
        }
        ensure!(expected == payload.len(), "payload has {} unreferenced bytes", payload.len() - expected);
        Ok(Checkpoint { config, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_bytes(&bytes).with_context(|| format!("in {}", path.display()))
    }
}
