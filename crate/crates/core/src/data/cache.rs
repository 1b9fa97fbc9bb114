//! Windowed dataset cache.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic     8 bytes  "SSMRULWC"
//! version   u32      1
//! L         u64
//! F         u64
//! mean      F x f64
//! std       F x f64
//! count     u64
//! windows   count x { unit_id u32, offset u64, x L*F f64, y L f64, mask L f64 }
//! ```

use std::io::{Read, Write};

use super::{DataError, Normalizer, Result, WindowedSample};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"SSMRULWC";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct WindowCache {
    pub window_len: usize,
    pub normalizer: Normalizer,
    pub windows: Vec<WindowedSample>,
}

pub fn write_cache<W: Write>(cache: &WindowCache, mut w: W) -> Result<()> {
    let (l, f) = (cache.window_len, cache.normalizer.num_features());
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(l as u64).to_le_bytes())?;
    w.write_all(&(f as u64).to_le_bytes())?;
    write_f64s(&mut w, &cache.normalizer.mean)?;
    write_f64s(&mut w, &cache.normalizer.std)?;
    w.write_all(&(cache.windows.len() as u64).to_le_bytes())?;
    for s in &cache.windows {
        if s.x.shape() != [l, f] || s.y.shape() != [l] || s.mask.shape() != [l] {
            return Err(DataError::Cache(format!(
                "window of unit {} at offset {} does not match L={l}, F={f}",
                s.unit_id, s.offset
            )));
        }
        w.write_all(&s.unit_id.to_le_bytes())?;
        w.write_all(&(s.offset as u64).to_le_bytes())?;
        w.write_all(&s.x.to_le_bytes())?;
        w.write_all(&s.y.to_le_bytes())?;
        w.write_all(&s.mask.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_cache<R: Read>(mut r: R) -> Result<WindowCache> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(DataError::Cache("not a window cache".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != VERSION {
        return Err(DataError::Cache(format!("unsupported version {version}")));
    }
    let l = read_len(&mut r)?;
    let f = read_len(&mut r)?;
    let mean = read_f64s(&mut r, f)?;
    let std = read_f64s(&mut r, f)?;
    let count = read_len(&mut r)?;
    let mut windows = Vec::new();
    for _ in 0..count {
        let unit_id = u32::from_le_bytes(read_array(&mut r)?);
        let offset = read_len(&mut r)?;
        let x = Tensor::new(vec![l, f], read_f64s(&mut r, l * f)?)?;
        let y = Tensor::from_vec(read_f64s(&mut r, l)?);
        let mask = Tensor::from_vec(read_f64s(&mut r, l)?);
        windows.push(WindowedSample {
            x,
            y,
            mask,
            unit_id,
            offset,
        });
    }
    Ok(WindowCache {
        window_len: l,
        normalizer: Normalizer { mean, std },
        windows,
    })
}

fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_len<R: Read>(r: &mut R) -> Result<usize> {
    let v = u64::from_le_bytes(read_array(r)?);
    usize::try_from(v).map_err(|_| DataError::Cache(format!("length {v} too large")))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![
        0u8;
        n.checked_mul(8)
            .ok_or_else(|| DataError::Cache("length overflow".into()))?
    ];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_windows, RunToFailureCycle};

    #[test]
    fn round_trip_is_bit_exact() {
        let feats: Vec<f64> = (0..7 * 3).map(|i| (i as f64).sqrt() / 3.0).collect();
        let c = RunToFailureCycle::new(4, Tensor::new(vec![7, 3], feats).unwrap()).unwrap();
        let norm = Normalizer::fit(std::slice::from_ref(&c)).unwrap();
        let c = norm.apply(&c).unwrap();
        let cache = WindowCache {
            window_len: 5,
            normalizer: norm,
            windows: make_windows(&c, 5)
                .into_iter()
                .chain(make_windows(&c, 5))
                .collect(),
        };
        let mut buf = Vec::new();
        write_cache(&cache, &mut buf).unwrap();
        let back = read_cache(buf.as_slice()).unwrap();
        assert_eq!(back, cache);
        let mut again = Vec::new();
        write_cache(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn bad_magic_and_truncation() {
        assert!(matches!(
            read_cache(&b"NOTACACHE..."[..]),
            Err(DataError::Cache(_))
        ));
        let cache = WindowCache {
            window_len: 2,
            normalizer: Normalizer {
                mean: vec![0.0],
                std: vec![1.0],
            },
            windows: vec![],
        };
        let mut buf = Vec::new();
        write_cache(&cache, &mut buf).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(read_cache(buf.as_slice()).is_err());
    }
}
