use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, ArrayViewD, IxDyn};
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const TENSOR_MAGIC: &[u8; 4] = b"TSEP";

const DTYPE_F32: u8 = 0;
const DTYPE_C64: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    Real(ArrayD<f32>),
    Complex(ArrayD<Complex<f32>>),
}

impl TensorData {
    pub fn shape(&self) -> &[usize] {
        match self {
            Self::Real(a) => a.shape(),
            Self::Complex(a) => a.shape(),
        }
    }

    pub fn into_real(self) -> Result<ArrayD<f32>> {
        match self {
            Self::Real(a) => Ok(a),
            Self::Complex(_) => Err(Error::Format("expected a real tensor".into())),
        }
    }

    pub fn into_complex(self) -> Result<ArrayD<Complex<f32>>> {
        match self {
            Self::Complex(a) => Ok(a),
            Self::Real(_) => Err(Error::Format("expected a complex tensor".into())),
        }
    }
}

fn header<W: Write>(w: &mut W, dtype: u8, shape: &[usize]) -> Result<()> {
    let ndim = u8::try_from(shape.len()).map_err(|_| Error::Format("too many dimensions".into()))?;
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&[dtype, ndim])?;
    for &d in shape {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    Ok(())
}

/// Writes a real tensor as little-endian `f32`.
pub fn write_real<T: Real, W: Write>(w: &mut W, a: ArrayViewD<'_, T>) -> Result<()> {
    header(w, DTYPE_F32, a.shape())?;
    let mut buf = Vec::with_capacity(a.len() * 4);
    for x in a.iter() {
        buf.extend_from_slice(&(x.to_f64_lossy() as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Writes a complex tensor as interleaved little-endian `f32` pairs.
pub fn write_complex<T: Real, W: Write>(w: &mut W, a: ArrayViewD<'_, Complex<T>>) -> Result<()> {
    header(w, DTYPE_C64, a.shape())?;
    let mut buf = Vec::with_capacity(a.len() * 8);
    for z in a.iter() {
        buf.extend_from_slice(&(z.re.to_f64_lossy() as f32).to_le_bytes());
        buf.extend_from_slice(&(z.im.to_f64_lossy() as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<TensorData> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::Format(format!("bad tensor magic {magic:?}")));
    }
    let mut meta = [0u8; 2];
    r.read_exact(&mut meta)?;
    let (dtype, ndim) = (meta[0], meta[1] as usize);
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let mut d = [0u8; 8];
        r.read_exact(&mut d)?;
        shape.push(usize::try_from(u64::from_le_bytes(d)).map_err(|_| Error::Format("dimension overflow".into()))?);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("tensor size overflow".into()))?;
    let width = match dtype {
        DTYPE_F32 => 4,
        DTYPE_C64 => 8,
        other => return Err(Error::Format(format!("unknown dtype code {other}"))),
    };
    let mut payload = vec![0u8; count * width];
    r.read_exact(&mut payload)?;
    let floats: Vec<f32> = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let shape = IxDyn(&shape);
    let shape_err = |e: ndarray::ShapeError| Error::Format(e.to_string());
    Ok(match dtype {
        DTYPE_F32 => TensorData::Real(ArrayD::from_shape_vec(shape, floats).map_err(shape_err)?),
        _ => TensorData::Complex(
            ArrayD::from_shape_vec(shape, floats.chunks_exact(2).map(|p| Complex::new(p[0], p[1])).collect())
                .map_err(shape_err)?,
        ),
    })
}

pub fn write_tensor_file(path: &Path, data: &TensorData) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    match data {
        TensorData::Real(a) => write_real(&mut f, a.view())?,
        TensorData::Complex(a) => write_complex(&mut f, a.view())?,
    }
    f.flush()?;
    Ok(())
}

pub fn read_tensor_file(path: &Path) -> Result<TensorData> {
    read_tensor(&mut std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn header_layout_is_exact() {
        let a = ArrayD::from_shape_vec(IxDyn(&[2, 1]), vec![1.0f32, -2.5]).unwrap();
        let mut buf = Vec::new();
        write_real(&mut buf, a.view()).unwrap();
        let mut want = b"TSEP".to_vec();
        want.extend_from_slice(&[0, 2]);
        want.extend_from_slice(&2u64.to_le_bytes());
        want.extend_from_slice(&1u64.to_le_bytes());
        want.extend_from_slice(&1.0f32.to_le_bytes());
        want.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(buf, want);
    }

    #[test]
    fn round_trips() {
        let a = Array3::from_shape_fn((3, 4, 2), |(i, j, k)| (i * 8 + j * 2 + k) as f64 * 0.25).into_dyn();
        let mut buf = Vec::new();
        write_real(&mut buf, a.view()).unwrap();
        let back = read_tensor(&mut buf.as_slice()).unwrap().into_real().unwrap();
        assert_eq!(back, a.mapv(|x| x as f32));

        let z = Array3::from_shape_fn((2, 3, 1), |(i, j, _)| Complex::new(i as f32, -(j as f32))).into_dyn();
        let mut buf = Vec::new();
        write_complex(&mut buf, z.view()).unwrap();
        assert_eq!(buf[4], 1);
        let back = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(back.shape(), &[2, 3, 1]);
        assert_eq!(back.into_complex().unwrap(), z);
    }

    #[test]
    fn rejects_corrupt_input() {
        assert!(read_tensor(&mut &b"NOPE\x00\x00"[..]).is_err());
        assert!(read_tensor(&mut &b"TSEP\x07\x00"[..]).is_err());
        let mut truncated = b"TSEP\x00\x01".to_vec();
        truncated.extend_from_slice(&5u64.to_le_bytes());
        truncated.extend_from_slice(&[0; 8]);
        assert!(read_tensor(&mut truncated.as_slice()).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsep");
        let data = TensorData::Real(ArrayD::from_elem(IxDyn(&[2, 2]), 0.5));
        write_tensor_file(&p, &data).unwrap();
        assert_eq!(read_tensor_file(&p).unwrap(), data);
    }
}
