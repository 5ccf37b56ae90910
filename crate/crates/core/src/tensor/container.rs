//! Binary tensor container: magic `H3RT`, version byte, record count, then
//! records of name, dtype tag, rank, little-endian u64 extents and payload.

use std::io::{Read, Write};

use super::{DType, Real, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"H3RT";
pub const VERSION: u8 = 1;

/// A stored tensor of either precision.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    /// Converts to `T`, exactly when the stored precision matches.
    pub fn to<T: Real>(&self) -> Tensor<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }

    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Self {
        match T::DTYPE {
            DType::F32 => AnyTensor::F32(t.cast()),
            DType::F64 => AnyTensor::F64(t.cast()),
        }
    }
}

pub fn write_container(mut w: impl Write, records: &[(String, AnyTensor)]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(records.len() as u32).to_le_bytes())?;
    for (name, t) in records {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[t.dtype().tag()])?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        match t {
            AnyTensor::F32(t) => t.data().iter().try_for_each(|v| w.write_all(&v.to_le_bytes()))?,
            AnyTensor::F64(t) => t.data().iter().try_for_each(|v| w.write_all(&v.to_le_bytes()))?,
        }
    }
    Ok(())
}

fn exact<const N: usize>(r: &mut impl Read, what: &str) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|_| Error::Checkpoint(format!("truncated container while reading {what}")))?;
    Ok(b)
}

pub fn read_container(mut r: impl Read) -> Result<Vec<(String, AnyTensor)>> {
    let magic: [u8; 4] = exact(&mut r, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}, expected H3RT")));
    }
    let [version] = exact::<1>(&mut r, "version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported container version {version}")));
    }
    let count = u32::from_le_bytes(exact(&mut r, "record count")?) as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for i in 0..count {
        let len = u32::from_le_bytes(exact(&mut r, "name length")?) as usize;
        if len > 4096 {
            return Err(Error::Checkpoint(format!("record {i}: name length {len} is implausible")));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|_| Error::Checkpoint(format!("truncated container in record {i} name")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint(format!("record {i}: name is not UTF-8")))?;
        let [tag] = exact::<1>(&mut r, "dtype")?;
        let dtype = DType::from_tag(tag).ok_or_else(|| Error::Checkpoint(format!("{name}: unknown dtype tag {tag}")))?;
        let rank = u32::from_le_bytes(exact(&mut r, "rank")?) as usize;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("{name}: rank {rank} is implausible")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(exact(&mut r, "extent")?) as usize);
        }
        let n: usize = shape.iter().product();
        let what = format!("payload of {name}");
        let t = match dtype {
            DType::F32 => {
                let mut v = Vec::with_capacity(n.min(1 << 24));
                for _ in 0..n {
                    v.push(f32::from_le_bytes(exact(&mut r, &what)?));
                }
                AnyTensor::F32(Tensor::new(&shape, v)?)
            }
            DType::F64 => {
                let mut v = Vec::with_capacity(n.min(1 << 24));
                for _ in 0..n {
                    v.push(f64::from_le_bytes(exact(&mut r, &what)?));
                }
                AnyTensor::F64(Tensor::new(&shape, v)?)
            }
        };
        out.push((name, t));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_corruption() {
        let recs = vec![
            ("a".to_string(), AnyTensor::F32(Tensor::from_fn(&[2, 3], |i| i as f32 * 0.1))),
            ("b/c".to_string(), AnyTensor::F64(Tensor::from_fn(&[4], |i| (i as f64).sin()))),
            ("s".to_string(), AnyTensor::F64(Tensor::scalar(3.0))),
        ];
        let mut buf = Vec::new();
        write_container(&mut buf, &recs).unwrap();
        assert_eq!(&buf[..5], b"H3RT\x01");
        assert_eq!(read_container(&buf[..]).unwrap(), recs);
        assert!(read_container(&buf[..buf.len() - 3]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_container(&bad[..]).is_err());
        bad = buf.clone();
        bad[4] = 2;
        assert!(matches!(read_container(&bad[..]), Err(Error::Checkpoint(m)) if m.contains("version")));
    }
}
