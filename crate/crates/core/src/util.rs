use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Index batches over `0..n` in a fresh random order. The last batch may be short.
pub fn shuffled_batches(n: usize, batch: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

/// Concatenate the rows `ids` of a flat array of `width`-wide records.
pub fn gather<T: Copy>(data: &[T], width: usize, ids: &[usize]) -> Vec<T> {
    let mut out = Vec::with_capacity(ids.len() * width);
    for &i in ids {
        out.extend_from_slice(&data[i * width..(i + 1) * width]);
    }
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// JSON-lines writer; a no-op when constructed without a path.
pub struct JsonLog {
    out: Option<BufWriter<File>>,
}

impl JsonLog {
    pub fn create(path: Option<&Path>) -> io::Result<Self> {
        let out = match path {
            Some(p) => Some(BufWriter::new(File::create(p)?)),
            None => None,
        };
        Ok(Self { out })
    }

    pub fn disabled() -> Self {
        Self { out: None }
    }

    pub fn write(&mut self, record: &impl Serialize) -> io::Result<()> {
        if let Some(out) = &mut self.out {
            serde_json::to_writer(&mut *out, record)?;
            out.write_all(b"\n")?;
            out.flush()?;
        }
        Ok(())
    }
}

/// Mean of the last `window` entries.
pub fn trailing_mean(xs: &[f64], window: usize) -> f64 {
    let tail = &xs[xs.len().saturating_sub(window)..];
    tail.iter().sum::<f64>() / tail.len().max(1) as f64
}
