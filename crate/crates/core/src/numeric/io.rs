//! Binary tensor container.
//!
//! Each record is `"GAUD"`, version (`u32` LE), ndim (`u32` LE), one `u64` LE
//! per dimension, then the `f64` LE payload in row-major order. A file holds
//! one or more records back to back.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{GaudaError, Result};

pub const MAGIC: &[u8; 4] = b"GAUD";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads one record; `Ok(None)` on clean end of stream.
pub fn read_tensor<R: Read>(r: &mut R) -> Result<Option<Tensor>> {
    let mut magic = [0u8; 4];
    match r.read_exact(&mut magic) {
        Ok(()) => {}
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    if &magic != MAGIC {
        return Err(GaudaError::Format(format!("bad magic {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(GaudaError::Format(format!("unsupported version {version}")));
    }
    let ndim = read_u32(r)? as usize;
    if ndim == 0 || ndim > 16 {
        return Err(GaudaError::Format(format!("implausible ndim {ndim}")));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        shape.push(u64::from_le_bytes(b) as usize);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| GaudaError::Format("shape overflows".into()))?;
    let mut data = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        data.push(f64::from_le_bytes(b));
    }
    Tensor::new(shape, data).map(Some)
}

pub fn save_tensors(path: impl AsRef<Path>, tensors: &[&Tensor]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in tensors {
        write_tensor(&mut w, t)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_tensors(path: impl AsRef<Path>) -> Result<Vec<Tensor>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(GaudaError::MissingArtifact(path.to_path_buf()));
    }
    let mut r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    while let Some(t) = read_tensor(&mut r)? {
        out.push(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::RngStream;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![1, 2], vec![1.5, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(&buf[..4], b"GAUD");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(&buf[12..20], &1u64.to_le_bytes());
        assert_eq!(&buf[20..28], &2u64.to_le_bytes());
        assert_eq!(&buf[28..36], &1.5f64.to_le_bytes());
        assert_eq!(buf.len(), 44);
    }

    #[test]
    fn rejects_corrupt_magic() {
        let mut buf = b"NOPE".to_vec();
        buf.extend_from_slice(&[0; 12]);
        assert!(matches!(read_tensor(&mut buf.as_slice()), Err(GaudaError::Format(_))));
    }

    #[test]
    fn missing_file_is_missing_artifact() {
        assert!(matches!(
            load_tensors("/nonexistent/weights.gaud"),
            Err(GaudaError::MissingArtifact(_))
        ));
    }

    proptest! {
        #[test]
        fn multi_record_roundtrip(seed in any::<u64>(), r in 1usize..5, c in 1usize..6) {
            let mut rng = RngStream::new(seed, 0);
            let a = rng.gaussian(&[r, c]);
            let b = rng.gaussian(&[c]);
            let mut buf = Vec::new();
            write_tensor(&mut buf, &a).unwrap();
            write_tensor(&mut buf, &b).unwrap();
            let mut cur = buf.as_slice();
            prop_assert_eq!(read_tensor(&mut cur).unwrap().unwrap(), a);
            prop_assert_eq!(read_tensor(&mut cur).unwrap().unwrap(), b);
            prop_assert!(read_tensor(&mut cur).unwrap().is_none());
        }
    }
}
