//! Portable weight file.
//!
//! Layout (little-endian): `"VXDW"`, `u16` version, `u8` log2 block size,
//! `u16` layer count, then per layer `u16` name length, UTF-8 name, `u8` rank,
//! `u32` dims, `f32` values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"VXDW";
const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    pub name: String,
    pub shape: Vec<u32>,
    pub values: Vec<f32>,
}

/// Named, shaped parameters of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    pub block_size: usize,
    pub layers: Vec<LayerWeights>,
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl ModelWeights {
    /// Hash of the layer names and shapes (not the values).
    ///
    /// Bytes hashed per layer: name, `0x00`, rank, dims as `u32` LE.
    pub fn arch_hash(&self) -> u64 {
        let mut bytes = Vec::new();
        for l in &self.layers {
            bytes.extend_from_slice(l.name.as_bytes());
            bytes.push(0);
            bytes.push(l.shape.len() as u8);
            for d in &l.shape {
                bytes.extend_from_slice(&d.to_le_bytes());
            }
        }
        fnv1a64(bytes)
    }

    pub fn layer(&self, name: &str) -> Option<&LayerWeights> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.values.len()).sum()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if !self.block_size.is_power_of_two() {
            return Err(Error::Shape(format!("block size {} is not a power of two", self.block_size)));
        }
        let mut out = Vec::with_capacity(16 + 4 * self.parameter_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.block_size.trailing_zeros() as u8);
        out.extend_from_slice(&(self.layers.len() as u16).to_le_bytes());
        for l in &self.layers {
            let n: usize = l.shape.iter().map(|&d| d as usize).product();
            if n != l.values.len() {
                return Err(Error::Shape(format!(
                    "layer {} has shape {:?} but {} values",
                    l.name,
                    l.shape,
                    l.values.len()
                )));
            }
            out.extend_from_slice(&(l.name.len() as u16).to_le_bytes());
            out.extend_from_slice(l.name.as_bytes());
            out.push(l.shape.len() as u8);
            for d in &l.shape {
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &l.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::IncompatibleWeights("bad magic".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::IncompatibleWeights(format!("unsupported version {version}")));
        }
        let log2 = r.u8()?;
        if log2 > 10 {
            return Err(Error::corrupt(format!("block size 2^{log2} is out of range")));
        }
        let count = r.u16()? as usize;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::corrupt("layer name is not UTF-8"))?
                .to_string();
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()?);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
                .ok_or_else(|| Error::corrupt("layer shape overflows"))?;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::corrupt("layer too large"))?)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            layers.push(LayerWeights { name, shape, values });
        }
        if r.pos != bytes.len() {
            return Err(Error::corrupt("trailing bytes after last layer"));
        }
        Ok(ModelWeights {
            block_size: 1 << log2,
            layers,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::corrupt("weight file is truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> ModelWeights {
        ModelWeights {
            block_size: 8,
            layers: vec![
                LayerWeights {
                    name: "a.weight".into(),
                    shape: vec![2, 1, 1, 1, 3],
                    values: vec![0.5, -1.0, 2.0, f32::MIN_POSITIVE, -0.0, 7.25],
                },
                LayerWeights {
                    name: "a.bias".into(),
                    shape: vec![2],
                    values: vec![1.0, 2.0],
                },
            ],
        }
    }

    #[test]
    fn truncated_is_corrupt() {
        let bytes = sample().to_bytes().unwrap();
        for cut in [3, 9, 20, bytes.len() - 1] {
            assert!(matches!(
                ModelWeights::from_bytes(&bytes[..cut]),
                Err(Error::CorruptStream(_)) | Err(Error::IncompatibleWeights(_))
            ));
        }
        assert!(matches!(
            ModelWeights::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::CorruptStream(_))
        ));
    }

    #[test]
    fn wrong_magic_is_incompatible() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            ModelWeights::from_bytes(&bytes),
            Err(Error::IncompatibleWeights(_))
        ));
        let mut bytes = sample().to_bytes().unwrap();
        bytes[4] = 9;
        assert!(matches!(
            ModelWeights::from_bytes(&bytes),
            Err(Error::IncompatibleWeights(_))
        ));
    }

    #[test]
    fn hash_ignores_values_but_not_shapes() {
        let a = sample();
        let mut b = sample();
        b.layers[0].values[0] = 99.0;
        assert_eq!(a.arch_hash(), b.arch_hash());
        b.layers[1].shape = vec![1, 2];
        assert_ne!(a.arch_hash(), b.arch_hash());
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(*b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(*b"a"), 0xaf63dc4c8601ec8c);
    }

    proptest! {
        #[test]
        fn roundtrip_bit_exact(vals in proptest::collection::vec(any::<u32>(), 1..64), log2 in 2u32..8) {
            let w = ModelWeights {
                block_size: 1 << log2,
                layers: vec![LayerWeights {
                    name: "w".into(),
                    shape: vec![vals.len() as u32],
                    values: vals.iter().map(|&b| f32::from_bits(b)).collect(),
                }],
            };
            let back = ModelWeights::from_bytes(&w.to_bytes().unwrap()).unwrap();
            let bits: Vec<u32> = back.layers[0].values.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(bits, vals);
            prop_assert_eq!(back.block_size, w.block_size);
        }
    }
}
