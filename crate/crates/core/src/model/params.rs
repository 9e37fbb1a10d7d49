//! Named parameter store and its on-disk format.
//!
//! The file layout is magic `LDWT`, a u32 version, then a tensor table:
//! (name length, utf-8 name, rank, dims, little-endian f32 data) per entry,
//! in insertion order. Values are stored as f32, so save/load round-trips
//! are bit-exact for f32 parameters.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::tensor::Tensor;

const MAGIC: &[u8; 4] = b"LDWT";
const VERSION: u32 = 1;

/// Ordered collection of named weight tensors for every network
/// (`g.*` specular/shadow, `h.*` diffusion, `tint.*` regressor).
#[derive(Clone)]
pub struct ModelParams<T> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Real> Default for ModelParams<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ModelParams<T> {
    pub fn new() -> Self {
        ModelParams { entries: Vec::new(), index: HashMap::new() }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter {name:?}")));
        }
        self.index.insert(name.to_owned(), self.entries.len());
        self.entries.push((name.to_owned(), tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.index
            .get(name)
            .map(|i| &self.entries[*i].1)
            .ok_or_else(|| Error::invalid(format!("missing parameter {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        match self.index.get(name) {
            Some(i) => Ok(&mut self.entries[*i].1),
            None => Err(Error::invalid(format!("missing parameter {name:?}"))),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Indices of entries whose name starts with `prefix` (stage filters).
    pub fn prefixed(&self, prefix: &str) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|i| self.entries[*i].0.starts_with(prefix))
            .collect()
    }

    pub fn entry(&self, i: usize) -> (&str, &Tensor<T>) {
        let (n, t) = &self.entries[i];
        (n.as_str(), t)
    }

    pub fn entry_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.entries[i].1
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, t) in self.iter() {
            if !t.all_finite() {
                return Err(Error::invalid(format!("non-finite values in {name:?}")));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, tensor) in &self.entries {
            let bytes = name.as_bytes();
            w.write_all(&(bytes.len() as u32).to_le_bytes())?;
            w.write_all(bytes)?;
            w.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
            for d in tensor.shape() {
                w.write_all(&(*d as u32).to_le_bytes())?;
            }
            for v in tensor.data() {
                w.write_all(&v.as_f32().to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::format("not a weight file (bad magic)"));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::format(format!("unsupported weight version {version}")));
        }
        let count = read_u32(&mut r)? as usize;
        let mut params = ModelParams::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            if name_len > 4096 {
                return Err(Error::format("unreasonable parameter name length"));
            }
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| Error::format("parameter name is not utf-8"))?;
            let rank = read_u32(&mut r)? as usize;
            if rank > 8 {
                return Err(Error::format("unreasonable tensor rank"));
            }
            let mut shape = Vec::with_capacity(rank);
            let mut numel = 1usize;
            for _ in 0..rank {
                let d = read_u32(&mut r)? as usize;
                numel = numel
                    .checked_mul(d)
                    .ok_or_else(|| Error::format("tensor dims overflow"))?;
                shape.push(d);
            }
            let mut data = Vec::with_capacity(numel);
            let mut buf = [0u8; 4];
            for _ in 0..numel {
                r.read_exact(&mut buf)?;
                data.push(T::of(f32::from_le_bytes(buf) as f64));
            }
            params
                .insert(&name, Tensor::new(shape, data)?)
                .map_err(|_| Error::format(format!("duplicate parameter {name:?} in file")))?;
        }
        Ok(params)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ModelParams<f32> {
        let mut p = ModelParams::new();
        p.insert("g.enc0.w", Tensor::new(vec![2, 1, 3, 3], (0..18).map(|i| 0.1 + i as f32 * 0.07).collect()).unwrap())
            .unwrap();
        p.insert("g.enc0.b", Tensor::new(vec![2], vec![f32::MIN_POSITIVE, -1.5e-20]).unwrap())
            .unwrap();
        p.insert("tint.head.w", Tensor::new(vec![3, 4], (0..12).map(|i| (i as f32).sin()).collect()).unwrap())
            .unwrap();
        p
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.ldwt");
        let p = sample();
        p.save(&path).unwrap();
        let q = ModelParams::<f32>::load(&path).unwrap();
        assert_eq!(p.len(), q.len());
        for ((na, ta), (nb, tb)) in p.iter().zip(q.iter()) {
            assert_eq!(na, nb); // order preserved
            assert_eq!(ta.shape(), tb.shape());
            for (a, b) in ta.data().iter().zip(tb.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ModelParams::<f32>::new();
        p.insert("w", Tensor::zeros(vec![1])).unwrap();
        assert!(p.insert("w", Tensor::zeros(vec![1])).is_err());
    }

    #[test]
    fn corrupt_files_are_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.ldwt");
        std::fs::write(&path, b"nope").unwrap();
        assert!(ModelParams::<f32>::load(&path).is_err());

        let good = dir.path().join("good.ldwt");
        sample().save(&good).unwrap();
        let bytes = std::fs::read(&good).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap(); // truncate
        assert!(ModelParams::<f32>::load(&path).is_err());
    }

    #[test]
    fn prefix_filter_selects_stage_parameters() {
        let p = sample();
        assert_eq!(p.prefixed("g."), vec![0, 1]);
        assert_eq!(p.prefixed("tint."), vec![2]);
        assert!(p.prefixed("h.").is_empty());
    }
}
