//! Binary files for dense tensors (`.dten`), Tucker models (`.tkr`) and CP
//! models (`.cpm`). All integers are little-endian `u32`, all values
//! little-endian `f64` in column-major order, after a 4-byte magic and a
//! format version.

use crate::cp::CpModel;
use crate::error::{Result, TensorError};
use crate::matrix::Matrix;
use crate::tensor::DenseTensor;
use crate::tucker::TuckerModel;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;
const TENSOR_MAGIC: &[u8; 4] = b"DTEN";
const TUCKER_MAGIC: &[u8; 4] = b"TKRM";
const CP_MAGIC: &[u8; 4] = b"CPMD";

fn write_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v)
        .map_err(|_| TensorError::Format(format!("{v} does not fit in a u32 header field")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_values(w: &mut impl Write, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn read_values(r: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(count);
    let mut b = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

fn write_header(w: &mut impl Write, magic: &[u8; 4]) -> Result<()> {
    w.write_all(magic)?;
    write_u32(w, FORMAT_VERSION as usize)
}

fn read_header(r: &mut impl Read, magic: &[u8; 4]) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(TensorError::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&m),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION as usize {
        return Err(TensorError::Format(format!("unsupported format version {version}")));
    }
    Ok(())
}

fn read_dims(r: &mut impl Read, n: usize) -> Result<Vec<usize>> {
    (0..n).map(|_| read_u32(r)).collect()
}

fn checked_count(dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| TensorError::Format(format!("dimensions {dims:?} overflow")))
}

pub fn write_tensor(w: &mut impl Write, t: &DenseTensor) -> Result<()> {
    write_header(w, TENSOR_MAGIC)?;
    write_u32(w, t.order())?;
    for &d in t.shape() {
        write_u32(w, d)?;
    }
    write_values(w, t.data())
}

pub fn read_tensor(r: &mut impl Read) -> Result<DenseTensor> {
    read_header(r, TENSOR_MAGIC)?;
    let n = read_u32(r)?;
    let dims = read_dims(r, n)?;
    let count = checked_count(&dims)?;
    DenseTensor::new(dims, read_values(r, count)?)
}

pub fn write_tucker(w: &mut impl Write, m: &TuckerModel) -> Result<()> {
    write_header(w, TUCKER_MAGIC)?;
    write_u32(w, m.order())?;
    for d in m.dims() {
        write_u32(w, d)?;
    }
    for r in m.ranks() {
        write_u32(w, r)?;
    }
    write_values(w, m.core.data())?;
    for f in &m.factors {
        write_values(w, f.data())?;
    }
    Ok(())
}

pub fn read_tucker(r: &mut impl Read) -> Result<TuckerModel> {
    read_header(r, TUCKER_MAGIC)?;
    let n = read_u32(r)?;
    let dims = read_dims(r, n)?;
    let ranks = read_dims(r, n)?;
    let core = DenseTensor::new(ranks.clone(), read_values(r, checked_count(&ranks)?)?)?;
    let factors = dims
        .iter()
        .zip(&ranks)
        .map(|(&d, &k)| Matrix::from_col_major(d, k, read_values(r, checked_count(&[d, k])?)?))
        .collect::<Result<Vec<_>>>()?;
    TuckerModel::new(core, factors)
}

pub fn write_cp(w: &mut impl Write, m: &CpModel) -> Result<()> {
    write_header(w, CP_MAGIC)?;
    write_u32(w, m.order())?;
    write_u32(w, m.rank())?;
    for d in m.dims() {
        write_u32(w, d)?;
    }
    for f in &m.factors {
        write_values(w, f.data())?;
    }
    Ok(())
}

pub fn read_cp(r: &mut impl Read) -> Result<CpModel> {
    read_header(r, CP_MAGIC)?;
    let n = read_u32(r)?;
    let rank = read_u32(r)?;
    let dims = read_dims(r, n)?;
    let factors = dims
        .iter()
        .map(|&d| Matrix::from_col_major(d, rank, read_values(r, checked_count(&[d, rank])?)?))
        .collect::<Result<Vec<_>>>()?;
    CpModel::new(factors)
}

fn save<T>(path: &Path, value: &T, f: fn(&mut BufWriter<File>, &T) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w, value)?;
    w.flush()?;
    Ok(())
}

fn load<T>(path: &Path, f: fn(&mut BufReader<File>) -> Result<T>) -> Result<T> {
    f(&mut BufReader::new(File::open(path)?))
}

pub fn save_tensor(path: impl AsRef<Path>, t: &DenseTensor) -> Result<()> {
    save(path.as_ref(), t, |w, t| write_tensor(w, t))
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<DenseTensor> {
    load(path.as_ref(), |r| read_tensor(r))
}

pub fn save_tucker(path: impl AsRef<Path>, m: &TuckerModel) -> Result<()> {
    save(path.as_ref(), m, |w, m| write_tucker(w, m))
}

pub fn load_tucker(path: impl AsRef<Path>) -> Result<TuckerModel> {
    load(path.as_ref(), |r| read_tucker(r))
}

pub fn save_cp(path: impl AsRef<Path>, m: &CpModel) -> Result<()> {
    save(path.as_ref(), m, |w, m| write_cp(w, m))
}

pub fn load_cp(path: impl AsRef<Path>) -> Result<CpModel> {
    load(path.as_ref(), |r| read_cp(r))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_roundtrip_in_memory() {
        let t = DenseTensor::from_fn(&[2, 3, 2], |i| (i[0] + 10 * i[1] + 100 * i[2]) as f64).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(&buf[..4], b"DTEN");
        assert_eq!(buf.len(), 4 + 4 + 4 + 3 * 4 + 12 * 8);
        assert_eq!(read_tensor(&mut buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let t = DenseTensor::zeros(&[2]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_tensor(&mut bad.as_slice()), Err(TensorError::Format(_))));
        let mut bad = buf.clone();
        bad[4] = 2;
        assert!(matches!(read_tensor(&mut bad.as_slice()), Err(TensorError::Format(_))));
        assert!(read_tucker(&mut buf.as_slice()).is_err());
        assert!(read_tensor(&mut &buf[..buf.len() - 1]).is_err());
    }
}
