//! Binary file formats.
//!
//! `TNSR`: magic, version byte 1, `u32` order N, N `u64` mode sizes, then the
//! entries in canonical order. `KTNS`: magic, version byte 1, `u32` order N,
//! `u64` rank J, N `u64` mode sizes, J weights, then each factor column-major.
//! All integers and `f64` values are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ShapeBuilder};

use crate::error::{CpdError, Result};
use crate::ktensor::KTensor;
use crate::scalar::Scalar;
use crate::tensor::DenseTensor;

const TENSOR_MAGIC: &[u8; 4] = b"TNSR";
const KTENSOR_MAGIC: &[u8; 4] = b"KTNS";
const VERSION: u8 = 1;

/// Either kind of file.
#[derive(Debug, Clone)]
pub enum TensorFile<T> {
    Dense(DenseTensor<T>),
    Kruskal(KTensor<T>),
}

pub fn write_tensor<T: Scalar, W: Write>(w: &mut W, t: &DenseTensor<T>) -> Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(t.order() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    write_values(w, t.data().iter().copied())
}

pub fn read_tensor<T: Scalar, R: Read>(r: &mut R) -> Result<DenseTensor<T>> {
    expect_header(r, TENSOR_MAGIC)?;
    read_tensor_body(r)
}

fn read_tensor_body<T: Scalar, R: Read>(r: &mut R) -> Result<DenseTensor<T>> {
    let order = read_u32(r)? as usize;
    let shape = read_dims(r, order)?;
    let len = checked_product(&shape)?;
    let data = read_values(r, len)?;
    DenseTensor::new(shape, data)
}

pub fn write_ktensor<T: Scalar, W: Write>(w: &mut W, kt: &KTensor<T>) -> Result<()> {
    w.write_all(KTENSOR_MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(kt.order() as u32).to_le_bytes())?;
    w.write_all(&(kt.rank() as u64).to_le_bytes())?;
    for d in kt.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    write_values(w, kt.weights().iter().copied())?;
    for f in kt.factors() {
        write_values(w, f.t().iter().copied())?;
    }
    Ok(())
}

pub fn read_ktensor<T: Scalar, R: Read>(r: &mut R) -> Result<KTensor<T>> {
    expect_header(r, KTENSOR_MAGIC)?;
    read_ktensor_body(r)
}

fn read_ktensor_body<T: Scalar, R: Read>(r: &mut R) -> Result<KTensor<T>> {
    let order = read_u32(r)? as usize;
    let rank = usize::try_from(read_u64(r)?).map_err(|_| CpdError::Format("rank overflows".into()))?;
    let shape = read_dims(r, order)?;
    let weights = Array1::from(read_values(r, rank)?);
    let mut factors = Vec::with_capacity(order);
    for &rows in &shape {
        let vals = read_values(r, rows.checked_mul(rank).ok_or_else(|| CpdError::Format("size overflows".into()))?)?;
        let f = Array2::from_shape_vec((rows, rank).f(), vals).map_err(|e| CpdError::Format(e.to_string()))?;
        factors.push(f);
    }
    KTensor::new(factors, weights)
}

/// Reads a file of either kind, dispatching on the magic bytes.
pub fn read_any<T: Scalar, R: Read>(r: &mut R) -> Result<TensorFile<T>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    let version = read_u8(r)?;
    if version != VERSION {
        return Err(CpdError::Format(format!("unsupported version {version}")));
    }
    match &magic {
        m if m == TENSOR_MAGIC => Ok(TensorFile::Dense(read_tensor_body(r)?)),
        m if m == KTENSOR_MAGIC => Ok(TensorFile::Kruskal(read_ktensor_body(r)?)),
        _ => Err(CpdError::Format(format!("unknown magic {magic:?}"))),
    }
}

pub fn save_tensor<T: Scalar>(path: impl AsRef<Path>, t: &DenseTensor<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor<T: Scalar>(path: impl AsRef<Path>) -> Result<DenseTensor<T>> {
    read_tensor(&mut BufReader::new(File::open(path)?))
}

pub fn save_ktensor<T: Scalar>(path: impl AsRef<Path>, kt: &KTensor<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ktensor(&mut w, kt)?;
    w.flush()?;
    Ok(())
}

pub fn load_ktensor<T: Scalar>(path: impl AsRef<Path>) -> Result<KTensor<T>> {
    read_ktensor(&mut BufReader::new(File::open(path)?))
}

pub fn load_any<T: Scalar>(path: impl AsRef<Path>) -> Result<TensorFile<T>> {
    read_any(&mut BufReader::new(File::open(path)?))
}

fn expect_header<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let mut got = [0u8; 4];
    r.read_exact(&mut got)?;
    if &got != magic {
        return Err(CpdError::Format(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&got)
        )));
    }
    let version = read_u8(r)?;
    if version != VERSION {
        return Err(CpdError::Format(format!("unsupported version {version}")));
    }
    Ok(())
}

fn read_dims<R: Read>(r: &mut R, order: usize) -> Result<Vec<usize>> {
    if order == 0 {
        return Err(CpdError::Format("order must be at least 1".into()));
    }
    (0..order)
        .map(|_| usize::try_from(read_u64(r)?).map_err(|_| CpdError::Format("mode size overflows".into())))
        .collect()
}

fn checked_product(shape: &[usize]) -> Result<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| CpdError::Format("tensor size overflows".into()))
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn write_values<T: Scalar, W: Write>(w: &mut W, values: impl Iterator<Item = T>) -> Result<()> {
    for v in values {
        w.write_all(&v.as_f64().to_le_bytes())?;
    }
    Ok(())
}

fn read_values<T: Scalar, R: Read>(r: &mut R, len: usize) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(len.min(1 << 24));
    let mut b = [0u8; 8];
    for _ in 0..len {
        r.read_exact(&mut b)?;
        out.push(T::lit(f64::from_le_bytes(b)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn tensor_round_trip_bit_exact() {
        let t = DenseTensor::new(vec![2, 3], vec![1.5, -0.0, f64::MIN_POSITIVE, 3.25, 1e300, -7.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(&buf[..5], b"TNSR\x01");
        assert_eq!(buf.len(), 5 + 4 + 2 * 8 + 6 * 8);
        let back: DenseTensor<f64> = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(back.shape(), t.shape());
        for (a, b) in back.data().iter().zip(t.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn ktensor_round_trip() {
        let kt = KTensor::new(
            vec![array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], array![[0.5, -1.0], [2.0, 0.25]]],
            array![2.0, 3.0],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_ktensor(&mut buf, &kt).unwrap();
        // weights follow the header, then factor 0 column-major
        let off = 5 + 4 + 8 + 2 * 8;
        let at = |k: usize| f64::from_le_bytes(buf[off + 8 * k..off + 8 * k + 8].try_into().unwrap());
        assert_eq!((at(0), at(1)), (2.0, 3.0));
        assert_eq!((at(2), at(3), at(4), at(5)), (1.0, 3.0, 5.0, 2.0));
        let back: KTensor<f64> = read_ktensor(&mut buf.as_slice()).unwrap();
        assert_eq!(back, kt);
        match read_any::<f64, _>(&mut buf.as_slice()).unwrap() {
            TensorFile::Kruskal(k) => assert_eq!(k, kt),
            TensorFile::Dense(_) => panic!("wrong kind"),
        }
    }

    #[test]
    fn rejects_bad_headers() {
        assert!(read_tensor::<f64, _>(&mut &b"KTNS\x01"[..]).is_err());
        assert!(read_tensor::<f64, _>(&mut &b"TNSR\x02"[..]).is_err());
        let mut truncated = Vec::new();
        write_tensor(&mut truncated, &DenseTensor::new(vec![2], vec![1.0, 2.0]).unwrap()).unwrap();
        truncated.pop();
        assert!(read_tensor::<f64, _>(&mut truncated.as_slice()).is_err());
        assert!(read_any::<f64, _>(&mut &b"ABCD\x01"[..]).is_err());
    }
}
