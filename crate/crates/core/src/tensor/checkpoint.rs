//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "DMGC" | version: u32 | record*
//! record = name_len: u32 | name: utf-8 | rank: u32 | extents: u32 * rank | f32 * numel
//! ```
//!
//! Records are written in lexicographic name order and run to end of file.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use super::{ParameterStore, Tensor};

pub const MAGIC: &[u8; 4] = b"DMGC";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

pub fn to_bytes(store: &ParameterStore<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + store.num_scalars() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.buf.len() {
            return Err(CheckpointError::Corrupt(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<ParameterStore<f32>, CheckpointError> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(4).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let mut store = ParameterStore::new();
    while cur.pos < bytes.len() {
        let len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|e| CheckpointError::Corrupt(e.to_string()))?
            .to_string();
        let rank = cur.u32()? as usize;
        let shape = (0..rank).map(|_| cur.u32().map(|e| e as usize)).collect::<Result<Vec<_>, _>>()?;
        let numel: usize = shape.iter().product();
        let data = cur
            .take(numel * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        store
            .insert(name, t)
            .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    }
    Ok(store)
}

pub fn save(store: &ParameterStore<f32>, path: &Path) -> Result<(), CheckpointError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&to_bytes(store))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParameterStore<f32>, CheckpointError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let mut s = ParameterStore::new();
        s.insert("a", Tensor::new(&[2], vec![1.0f32, -2.5]).unwrap()).unwrap();
        let b = to_bytes(&s);
        assert_eq!(&b[..4], b"DMGC");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), VERSION);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
        assert_eq!(b[12], b'a');
        assert_eq!(b.len(), 8 + 4 + 1 + 4 + 4 + 8);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(matches!(from_bytes(b"NOPE\x01\0\0\0"), Err(CheckpointError::BadMagic)));
        let mut s = ParameterStore::new();
        s.insert("w", Tensor::new(&[3], vec![1.0f32; 3]).unwrap()).unwrap();
        let b = to_bytes(&s);
        assert!(matches!(from_bytes(&b[..b.len() - 1]), Err(CheckpointError::Corrupt(_))));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            entries in proptest::collection::btree_map(
                "[a-z]{1,6}(\\.[a-z0-9_]{1,6}){0,3}",
                (1usize..4, 1usize..5).prop_flat_map(|(r, c)| {
                    (Just(vec![r, c]), proptest::collection::vec(any::<u32>(), r * c))
                }),
                1..6,
            )
        ) {
            let mut s = ParameterStore::new();
            for (name, (shape, bits)) in &entries {
                // arbitrary bit patterns, including NaN payloads and subnormals
                let data = bits.iter().map(|&b| f32::from_bits(b)).collect();
                s.set(name.clone(), Tensor::new(shape, data).unwrap());
            }
            let bytes = to_bytes(&s);
            let back = from_bytes(&bytes).unwrap();
            prop_assert_eq!(to_bytes(&back), bytes);
            for ((n1, t1), (n2, t2)) in s.iter().zip(back.iter()) {
                prop_assert_eq!(n1, n2);
                prop_assert_eq!(t1.shape(), t2.shape());
                let b1: Vec<u32> = t1.data().iter().map(|x| x.to_bits()).collect();
                let b2: Vec<u32> = t2.data().iter().map(|x| x.to_bits()).collect();
                prop_assert_eq!(b1, b2);
            }
        }
    }
}
