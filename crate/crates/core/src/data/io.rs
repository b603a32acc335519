//! "DMG1" motion container: magic, u32 count, u32 frames, u32 channels,
//! then `count * frames * channels` little-endian f32.

use std::fs;
use std::path::Path;

use super::{DataError, MotionSequence, CHANNELS};

pub const MAGIC: &[u8; 4] = b"DMG1";

pub fn encode_motions(motions: &[MotionSequence]) -> Result<Vec<u8>, DataError> {
    let len = motions.first().map_or(0, |m| m.len());
    if motions.iter().any(|m| m.len() != len) {
        return Err(DataError::Format("motions in one container must share a length".into()));
    }
    let mut out = Vec::with_capacity(16 + motions.len() * len * CHANNELS * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(motions.len() as u32).to_le_bytes());
    out.extend_from_slice(&(len as u32).to_le_bytes());
    out.extend_from_slice(&(CHANNELS as u32).to_le_bytes());
    for m in motions {
        for &v in m.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_motions(bytes: &[u8]) -> Result<Vec<MotionSequence>, DataError> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(DataError::Format("not a DMG1 container".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let (count, len, channels) = (word(1), word(2), word(3));
    if channels != CHANNELS {
        return Err(DataError::Format(format!("expected {CHANNELS} channels, found {channels}")));
    }
    let per = len * channels;
    if bytes.len() != 16 + count * per * 4 {
        return Err(DataError::Format(format!(
            "DMG1 payload is {} bytes, header implies {}",
            bytes.len() - 16,
            count * per * 4
        )));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    if per == 0 {
        return Err(DataError::Format("zero-length motions".into()));
    }
    bytes[16..]
        .chunks_exact(per * 4)
        .map(|chunk| {
            let data = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect();
            MotionSequence::from_data(len, data)
        })
        .collect()
}

pub fn write_motions(path: &Path, motions: &[MotionSequence]) -> Result<(), DataError> {
    fs::write(path, encode_motions(motions)?)?;
    Ok(())
}

pub fn read_motions(path: &Path) -> Result<Vec<MotionSequence>, DataError> {
    decode_motions(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_fields() {
        let b = encode_motions(&[MotionSequence::zeros(64)]).unwrap();
        assert_eq!(&b[..4], b"DMG1");
        assert_eq!(&b[4..16], &[1, 0, 0, 0, 64, 0, 0, 0, 6, 0, 0, 0]);
        assert_eq!(b.len(), 16 + 64 * 6 * 4);
        assert!(decode_motions(&b[..b.len() - 4]).is_err());
    }

    proptest! {
        #[test]
        fn f32_values_round_trip(len in 1usize..12, count in 0usize..4, seed in any::<u64>()) {
            let motions: Vec<MotionSequence> = (0..count)
                .map(|i| {
                    let data = (0..len * CHANNELS)
                        .map(|j| ((seed.wrapping_mul(31).wrapping_add((i * 977 + j) as u64) % 20_000) as f32 / 100.0 - 100.0) as f64)
                        .collect();
                    MotionSequence::from_data(len, data).unwrap()
                })
                .collect();
            let bytes = encode_motions(&motions).unwrap();
            let back = decode_motions(&bytes).unwrap();
            prop_assert_eq!(back, motions);
        }
    }
}
