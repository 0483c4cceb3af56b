//! Tensor binary format: `"STT1"`, rank (u32 LE), extents (u64 LE each),
//! dtype code (u8; 0 = f32, 1 = f64), then the little-endian buffer.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};

use super::Tensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"STT1";

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated tensor: {what}")),
        _ => Error::Io(e),
    })
}

impl<T: Scalar> Tensor<T> {
    pub fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(TENSOR_MAGIC);
        out.extend_from_slice(&(self.rank() as u32).to_le_bytes());
        for &extent in self.shape() {
            out.extend_from_slice(&(extent as u64).to_le_bytes());
        }
        out.push(T::DTYPE.code());
        out.reserve(self.len() * T::DTYPE.size_in_bytes());
        for &x in self.data() {
            x.write_le(out);
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let mut buf = Vec::new();
        self.encode(&mut buf);
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic, "magic")?;
        if &magic != TENSOR_MAGIC {
            return Err(Error::Format(format!("bad tensor magic {magic:?}")));
        }
        let mut word = [0u8; 4];
        read_exact(r, &mut word, "rank")?;
        let rank = u32::from_le_bytes(word) as usize;
        if rank == 0 || rank > 16 {
            return Err(Error::Format(format!("implausible tensor rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut len: usize = 1;
        for _ in 0..rank {
            let mut ext = [0u8; 8];
            read_exact(r, &mut ext, "extent")?;
            let extent =
                usize::try_from(u64::from_le_bytes(ext)).map_err(|_| Error::Format("extent overflows usize".into()))?;
            len = len
                .checked_mul(extent)
                .ok_or_else(|| Error::Format("element count overflows".into()))?;
            shape.push(extent);
        }
        let mut code = [0u8; 1];
        read_exact(r, &mut code, "dtype")?;
        let dtype =
            DType::from_code(code[0]).ok_or_else(|| Error::Format(format!("unknown dtype code {}", code[0])))?;
        if dtype != T::DTYPE {
            return Err(Error::DTypeMismatch {
                expected: T::DTYPE.code(),
                found: dtype.code(),
            });
        }
        let width = dtype.size_in_bytes();
        let mut raw = vec![0u8; len * width];
        read_exact(r, &mut raw, "data")?;
        let data = raw.chunks_exact(width).map(T::read_le).collect();
        Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_bit_exact() {
        let t = Tensor::<f32>::from_f64(&[2], &[1.0, -2.0]).unwrap();
        let mut buf = Vec::new();
        t.encode(&mut buf);
        let mut want = b"STT1".to_vec();
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&2u64.to_le_bytes());
        want.push(0);
        want.extend_from_slice(&1.0f32.to_le_bytes());
        want.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(buf, want);
    }

    #[test]
    fn round_trip_f64() {
        let t = Tensor::<f64>::from_fn(&[2, 3, 1], |i| i as f64 * 0.1 - 0.3);
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(buf[4 + 4 + 24], 1);
        let back = Tensor::<f64>::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rejects_wrong_dtype_and_truncation() {
        let t = Tensor::<f64>::ones(&[4]);
        let mut buf = Vec::new();
        t.encode(&mut buf);
        assert!(matches!(
            Tensor::<f32>::read_from(&mut buf.as_slice()),
            Err(Error::DTypeMismatch { expected: 0, found: 1 })
        ));
        let cut = &buf[..buf.len() - 3];
        assert!(matches!(Tensor::<f64>::read_from(&mut &cut[..]), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            Tensor::<f64>::read_from(&mut bad.as_slice()),
            Err(Error::Format(_))
        ));
    }
}
