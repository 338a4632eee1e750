//! Named parameter storage and the checkpoint archive format.
//!
//! Archive layout (little-endian): magic `DGADCKPT`, `u32` version, `u32`
//! metadata length + UTF-8 metadata, `u32` entry count, then per entry:
//! `u32` name length, name, `u8` trainable flag, `u32` rank, `u64` dims,
//! `f64` data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"DGADCKPT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    /// Buffers such as running statistics are stored but never optimized.
    pub trainable: bool,
}

/// Ordered collection of named tensors; insertion order is canonical.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

/// Tape handles of every trainable parameter for one forward pass.
pub struct Bound {
    vars: Vec<Option<Var>>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0].expect("buffers are not bound to the tape")
    }

    pub fn get(&self, id: ParamId) -> Option<Var> {
        self.vars[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(self.id(&name).is_none(), "duplicate parameter {name}");
        self.entries.push(ParamEntry { name, tensor, trainable });
        ParamId(self.entries.len() - 1)
    }

    /// Trainable tensor initialized `U(-bound, bound)`.
    pub fn uniform(&mut self, rng: &mut impl Rng, name: &str, shape: &[usize], bound: f64) -> ParamId {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.add(name, Tensor::new(shape, data), true)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        self.add(name, Tensor::full(shape, value), true)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.tensor.numel()).sum()
    }

    /// Records every trainable tensor as a leaf on `g`.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|e| e.trainable.then(|| g.leaf(e.tensor.clone())))
            .collect();
        Bound { vars }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.tensor.is_finite())
    }

    /// Replaces values from `other`, which must have identical names and shapes.
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Shape(format!(
                "checkpoint has {} tensors, model expects {}",
                other.entries.len(),
                self.entries.len()
            )));
        }
        for (mine, theirs) in self.entries.iter_mut().zip(&other.entries) {
            if mine.name != theirs.name || mine.tensor.shape() != theirs.tensor.shape() {
                return Err(Error::Shape(format!(
                    "checkpoint tensor {} {:?} does not match {} {:?}",
                    theirs.name,
                    theirs.tensor.shape(),
                    mine.name,
                    mine.tensor.shape()
                )));
            }
            mine.tensor = theirs.tensor.clone();
        }
        Ok(())
    }

    pub fn save(&self, path: &Path, metadata: &str) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        let mut put = |bytes: &[u8]| out.write_all(bytes).map_err(io);
        put(MAGIC)?;
        put(&CHECKPOINT_VERSION.to_le_bytes())?;
        put(&(metadata.len() as u32).to_le_bytes())?;
        put(metadata.as_bytes())?;
        put(&(self.entries.len() as u32).to_le_bytes())?;
        for e in &self.entries {
            put(&(e.name.len() as u32).to_le_bytes())?;
            put(e.name.as_bytes())?;
            put(&[u8::from(e.trainable)])?;
            put(&(e.tensor.rank() as u32).to_le_bytes())?;
            for &d in e.tensor.shape() {
                put(&(d as u64).to_le_bytes())?;
            }
            for v in e.tensor.data() {
                put(&v.to_le_bytes())?;
            }
        }
        out.flush().map_err(io)
    }

    /// Reads an archive, returning the store and its metadata string.
    pub fn load(path: &Path) -> Result<(ParamStore, String)> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut input = BufReader::new(file);
        let mut take = |len: usize| -> Result<Vec<u8>> {
            let mut buf = vec![0u8; len];
            input
                .read_exact(&mut buf)
                .map_err(|_| Error::format(path, "truncated checkpoint"))?;
            Ok(buf)
        };
        let u32_at = |b: Vec<u8>| u32::from_le_bytes(b.try_into().unwrap()) as usize;
        if take(8)? != MAGIC {
            return Err(Error::format(path, "not a checkpoint archive"));
        }
        let version = u32_at(take(4)?) as u32;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
        }
        let meta_len = u32_at(take(4)?);
        let metadata = String::from_utf8(take(meta_len)?).map_err(|_| Error::format(path, "metadata is not UTF-8"))?;
        let count = u32_at(take(4)?);
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = u32_at(take(4)?);
            let name = String::from_utf8(take(name_len)?).map_err(|_| Error::format(path, "name is not UTF-8"))?;
            let trainable = take(1)?[0] != 0;
            let rank = u32_at(take(4)?);
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize);
            }
            let numel: usize = shape.iter().product();
            let raw = take(numel * 8)?;
            let data = raw.chunks(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            if store.id(&name).is_some() {
                return Err(Error::format(path, format!("duplicate tensor {name}")));
            }
            store.add(name, Tensor::new(&shape, data), trainable);
        }
        Ok((store, metadata))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        store.uniform(&mut rng, "encoder.w", &[3, 2], 0.5);
        store.add("ts_head.bn.running_var", Tensor::new(&[2], vec![1.0, f64::MIN_POSITIVE]), false);
        store.add("scalar", Tensor::scalar(-0.0), true);
        let f = tempfile::NamedTempFile::new().unwrap();
        store.save(f.path(), "{\"d\":2}").unwrap();
        let (loaded, meta) = ParamStore::load(f.path()).unwrap();
        assert_eq!(meta, "{\"d\":2}");
        assert_eq!(loaded, store);
    }

    #[test]
    fn rejects_foreign_and_truncated_files() {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), b"DGADCKPT\x01\x00").unwrap();
        assert!(ParamStore::load(f.path()).is_err());
        std::fs::write(f.path(), b"hello world, not a checkpoint").unwrap();
        assert!(ParamStore::load(f.path()).is_err());
    }

    #[test]
    fn copy_from_checks_layout() {
        let mut a = ParamStore::new();
        a.constant("x", &[2], 1.0);
        let mut b = ParamStore::new();
        b.constant("x", &[3], 1.0);
        assert!(a.copy_from(&b).is_err());
        let mut c = ParamStore::new();
        c.constant("x", &[2], 5.0);
        a.copy_from(&c).unwrap();
        assert_eq!(a.by_name("x").unwrap().data(), &[5.0, 5.0]);
    }
}
