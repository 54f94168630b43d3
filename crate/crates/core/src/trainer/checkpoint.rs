//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MSVPCKPT"  u32 version  u32 meta_len  meta (UTF-8 key=value lines)
//! u32 count   count x { u32 name_len  name  u8 dtype  u8 ndim  ndim x u32 dim  payload }
//! ```
//!
//! `dtype` is 0 for f32 and 1 for f64. Buffers (batch-norm running
//! statistics) are stored alongside trainable parameters.

use std::path::Path;

use numcore::{ParamStore, Tensor};

use crate::error::{CheckpointError, Error, Result};

pub const MAGIC: &[u8; 8] = b"MSVPCKPT";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub config_hash: u64,
    pub epoch: usize,
    /// Validation accuracy of the saved state.
    pub metric: f64,
    pub config: String,
}

impl CheckpointMeta {
    fn to_text(&self) -> String {
        let mut s = format!(
            "config_hash={:016x}\nepoch={}\nmetric={:?}\n",
            self.config_hash, self.epoch, self.metric
        );
        for line in self.config.lines() {
            s.push_str("config.");
            s.push_str(line);
            s.push('\n');
        }
        s
    }

    fn parse(text: &str) -> Result<Self, CheckpointError> {
        let bad = |what: &str| CheckpointError::Malformed(format!("metadata: {what}"));
        let mut meta = CheckpointMeta { config_hash: 0, epoch: 0, metric: 0.0, config: String::new() };
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("config.") {
                meta.config.push_str(rest);
                meta.config.push('\n');
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| bad(line))?;
            match k {
                "config_hash" => meta.config_hash = u64::from_str_radix(v, 16).map_err(|_| bad(line))?,
                "epoch" => meta.epoch = v.parse().map_err(|_| bad(line))?,
                "metric" => meta.metric = v.parse().map_err(|_| bad(line))?,
                _ => return Err(bad(line)),
            }
        }
        Ok(meta)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub records: Vec<Record>,
}

impl Checkpoint {
    /// Snapshot every entry of `store` whose name starts with `prefix`.
    pub fn capture(store: &ParamStore<f32>, meta: CheckpointMeta, prefix: &str) -> Self {
        let records = store
            .entries()
            .filter(|(_, e)| e.name.starts_with(prefix))
            .map(|(_, e)| Record { name: e.name.clone(), shape: e.value().shape().to_vec(), data: e.value().data().to_vec() })
            .collect();
        Checkpoint { meta, records }
    }

    pub fn payload_bytes(&self) -> usize {
        self.records.iter().map(|r| r.data.len() * 4).sum()
    }

    pub fn encode(&self) -> Vec<u8> {
        let meta = self.meta.to_text();
        let mut out = Vec::with_capacity(self.payload_bytes() + 64 * self.records.len() + meta.len() + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.push(DTYPE_F32);
            out.push(r.shape.len() as u8);
            for &d in &r.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &r.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8)?;
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic { found: magic.to_vec() });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let meta_len = r.u32()? as usize;
        let meta_text = std::str::from_utf8(r.take(meta_len)?)
            .map_err(|_| CheckpointError::Malformed("metadata is not UTF-8".into()))?;
        let meta = CheckpointMeta::parse(meta_text)?;
        let count = r.u32()? as usize;
        let mut records = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| CheckpointError::Malformed("record name is not UTF-8".into()))?;
            let dtype = r.take(1)?[0];
            let ndim = r.take(1)?[0] as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| CheckpointError::Malformed(format!("`{name}`: shape {shape:?} overflows")))?;
            let data = match dtype {
                DTYPE_F32 => r
                    .take(n.checked_mul(4).ok_or_else(|| CheckpointError::Malformed(format!("`{name}` too large")))?)?
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
                DTYPE_F64 => r
                    .take(n.checked_mul(8).ok_or_else(|| CheckpointError::Malformed(format!("`{name}` too large")))?)?
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()) as f32)
                    .collect(),
                other => return Err(CheckpointError::Malformed(format!("`{name}`: unknown dtype {other}"))),
            };
            records.push(Record { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { meta, records })
    }

    /// Copy the records into `store`. Every store entry under `prefix`
    /// must be present with a matching shape, and every record must name
    /// such an entry; the first offending name is reported.
    pub fn restore(&self, store: &mut ParamStore<f32>, prefix: &str) -> Result<(), CheckpointError> {
        let expected: Vec<_> = store.entries().filter(|(_, e)| e.name.starts_with(prefix)).map(|(id, _)| id).collect();
        for r in &self.records {
            match store.id(&r.name) {
                Some(id) if r.name.starts_with(prefix) => {
                    let want = store.value(id).shape();
                    if want != r.shape.as_slice() {
                        return Err(CheckpointError::Shape { name: r.name.clone(), expected: want.to_vec(), found: r.shape.clone() });
                    }
                }
                _ => {
                    return Err(CheckpointError::Registry {
                        name: r.name.clone(),
                        detail: "not a parameter of the target model".into(),
                    })
                }
            }
        }
        for &id in &expected {
            let name = &store.entry(id).name;
            if !self.records.iter().any(|r| &r.name == name) {
                return Err(CheckpointError::Registry { name: name.clone(), detail: "missing from checkpoint".into() });
            }
        }
        for r in &self.records {
            let id = store.id(&r.name).expect("validated");
            let t = Tensor::new(&r.shape, r.data.clone()).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
            store.set(id, t).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Checkpoint::decode(&bytes)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(CheckpointError::Truncated { offset: self.pos, needed: n, available });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use numcore::ParamKind;

    use super::*;

    fn meta() -> CheckpointMeta {
        CheckpointMeta { config_hash: 0xdead_beef, epoch: 3, metric: 0.9871, config: "a = 1\nb.c = x\n".into() }
    }

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::from_fn(&[2, 3], |i| i as f32 * 0.5 - 1.0), ParamKind::Trainable).unwrap();
        s.add("rm", Tensor::full(&[3], 0.25), ParamKind::Buffer).unwrap();
        s
    }

    #[test]
    fn encode_decode_round_trip() {
        let ck = Checkpoint::capture(&store(), meta(), "");
        let back = Checkpoint::decode(&ck.encode()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn bad_magic_and_truncation_are_distinct() {
        let mut bytes = Checkpoint::capture(&store(), meta(), "").encode();
        let cut = Checkpoint::decode(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(cut, CheckpointError::Truncated { .. }), "{cut}");
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::decode(&bytes).unwrap_err(), CheckpointError::BadMagic { .. }));
    }

    #[test]
    fn restore_rejects_shape_and_name_mismatch() {
        let ck = Checkpoint::capture(&store(), meta(), "");
        let mut other = ParamStore::new();
        other.add("w", Tensor::zeros(&[3, 2]), ParamKind::Trainable).unwrap();
        other.add("rm", Tensor::zeros(&[3]), ParamKind::Buffer).unwrap();
        assert!(matches!(ck.restore(&mut other, ""), Err(CheckpointError::Shape { name, .. }) if name == "w"));

        let mut extra = store();
        extra.add("z", Tensor::zeros(&[1]), ParamKind::Trainable).unwrap();
        assert!(matches!(ck.restore(&mut extra, ""), Err(CheckpointError::Registry { name, .. }) if name == "z"));
    }

    #[test]
    fn prefix_capture_holds_only_matching_entries() {
        let ck = Checkpoint::capture(&store(), meta(), "r");
        assert_eq!(ck.records.len(), 1);
        assert_eq!(ck.payload_bytes(), 12);
    }
}
