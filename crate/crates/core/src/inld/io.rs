//! Binary feature-map files: a 16-byte header of four little-endian `u32`
//! values (magic, C, H, W) followed by `C·H·W` little-endian `f32` values in
//! channel-major, row-major order.

use std::io::{Read, Write};

use ndarray::Array3;

use super::FeatureMap;
use crate::error::{Error, Result};

/// `b"FMAP"` read as a little-endian `u32`.
pub const MAGIC: u32 = u32::from_le_bytes(*b"FMAP");

pub fn write_feature_map<W: Write>(map: &FeatureMap, mut out: W) -> Result<()> {
    let (c, h, w) = map.shape();
    for v in [MAGIC, dim(c)?, dim(h)?, dim(w)?] {
        out.write_all(&v.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(4 * c * h * w);
    for &v in map.data().iter() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn dim(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("dimension {n} does not fit in u32")))
}

pub fn read_feature_map<R: Read>(mut input: R) -> Result<FeatureMap> {
    let mut header = [0u8; 16];
    input
        .read_exact(&mut header)
        .map_err(|e| Error::Format(format!("short header: {e}")))?;
    let field = |i: usize| u32::from_le_bytes(header[4 * i..4 * i + 4].try_into().expect("4-byte slice"));
    if field(0) != MAGIC {
        return Err(Error::Format(format!("bad magic {:#010x}", field(0))));
    }
    let (c, h, w) = (field(1) as usize, field(2) as usize, field(3) as usize);
    let n = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
    let mut bytes = vec![0u8; 4 * n];
    input
        .read_exact(&mut bytes)
        .map_err(|e| Error::Format(format!("expected {n} values: {e}")))?;
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
        .collect();
    let data = Array3::from_shape_vec((c, h, w), values).map_err(|e| Error::Format(e.to_string()))?;
    FeatureMap::new(data).map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    #[test]
    fn header_layout() {
        let m = FeatureMap::new(Array::from_shape_fn((2, 3, 4), |(a, b, c)| (a * 12 + b * 4 + c) as f64 * 0.5)).unwrap();
        let mut buf = Vec::new();
        write_feature_map(&m, &mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 4 * 24);
        assert_eq!(&buf[..4], b"FMAP");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 4);
        // second value is 0.5f32
        assert_eq!(&buf[20..24], &0.5f32.to_le_bytes());
        assert_eq!(read_feature_map(&buf[..]).unwrap(), m);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(read_feature_map(&b"FMA"[..]), Err(Error::Format(_))));
        let mut bad = Vec::new();
        for v in [0xdeadbeefu32, 1, 1, 1] {
            bad.extend_from_slice(&v.to_le_bytes());
        }
        bad.extend_from_slice(&1f32.to_le_bytes());
        assert!(matches!(read_feature_map(&bad[..]), Err(Error::Format(_))));
        let mut short = Vec::new();
        for v in [MAGIC, 1, 2, 2] {
            short.extend_from_slice(&v.to_le_bytes());
        }
        assert!(matches!(read_feature_map(&short[..]), Err(Error::Format(_))));
    }
}
