//! Named-array weight files.
//!
//! Layout (little endian): `b"STMW"`, `u32` version, `u32` array count, then
//! per array `u32` name length, UTF-8 name, `u32` rank, `rank x u32` dims and
//! the `f32` data.

use std::io::{Read, Write};
use std::path::Path;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Result, StmError};
use crate::scalar::Real;

const MAGIC: &[u8; 4] = b"STMW";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<T: Real>(w: &mut impl Write, store: &ParamStore<T>) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (_, p) in store.iter() {
        w.write_all(&(p.name.len() as u32).to_le_bytes())?;
        w.write_all(p.name.as_bytes())?;
        w.write_all(&(p.value.shape().len() as u32).to_le_bytes())?;
        for &d in p.value.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in p.value.data() {
            w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
    pos: usize,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => {
                StmError::parse_byte(self.pos, format!("truncated checkpoint while reading {what}"))
            }
            _ => StmError::Io(e),
        })?;
        self.pos += n;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn read_checkpoint(r: impl Read) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut rd = Reader { inner: r, pos: 0 };
    if rd.bytes(4, "magic")? != MAGIC {
        return Err(StmError::parse_byte(0, "not a checkpoint (bad magic)"));
    }
    let version = rd.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(StmError::parse_byte(4, format!("unsupported checkpoint version {version}")));
    }
    let count = rd.u32("array count")?;
    let mut out = Vec::with_capacity(count.min(4096) as usize);
    for _ in 0..count {
        let at = rd.pos;
        let len = rd.u32("name length")? as usize;
        if len > 1 << 16 {
            return Err(StmError::parse_byte(at, format!("implausible name length {len}")));
        }
        let name = String::from_utf8(rd.bytes(len, "name")?)
            .map_err(|_| StmError::parse_byte(at + 4, "array name is not UTF-8"))?;
        let rank = rd.u32("rank")? as usize;
        if rank == 0 || rank > 8 {
            return Err(StmError::parse_byte(rd.pos - 4, format!("bad rank {rank} for {name}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(rd.u32("dims")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n > 0 && n < 1 << 31)
            .ok_or_else(|| StmError::parse_byte(rd.pos, format!("bad shape {shape:?} for {name}")))?;
        let raw = rd.bytes(4 * n, "data")?;
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    let mut trailing = [0u8; 1];
    if rd.inner.read(&mut trailing)? != 0 {
        return Err(StmError::parse_byte(rd.pos, "trailing bytes after last array"));
    }
    Ok(out)
}

pub fn save_checkpoint<T: Real>(path: impl AsRef<Path>, store: &ParamStore<T>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(&mut f, store)?;
    f.flush()?;
    Ok(())
}

/// Overwrites every array of `store` with the same-named checkpoint array.
/// Missing names and shape mismatches are errors.
pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>, store: &mut ParamStore<T>) -> Result<()> {
    let arrays = read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))?;
    assign(store, arrays)
}

pub fn assign<T: Real>(store: &mut ParamStore<T>, arrays: Vec<(String, Tensor<f32>)>) -> Result<()> {
    if arrays.len() != store.len() {
        return Err(StmError::Config(format!(
            "checkpoint holds {} arrays, the model has {}",
            arrays.len(),
            store.len()
        )));
    }
    for (name, t) in arrays {
        let id = store
            .find(&name)
            .ok_or_else(|| StmError::Config(format!("checkpoint array {name} is not in the model")))?;
        let p = store.get_mut(id);
        if p.value.shape() != t.shape() {
            return Err(StmError::Config(format!(
                "{name}: checkpoint shape {:?}, model shape {:?}",
                t.shape(),
                p.value.shape()
            )));
        }
        p.value = t.cast();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add("conv.w", Tensor::new(vec![2, 3], vec![1.0, -0.0, f32::MIN_POSITIVE, 3.5, -7.25, 1e-30]).unwrap(), true);
        s.add("bn.mean", Tensor::full(&[4], 0.125), false);
        s
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let s = sample();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &s).unwrap();
        let back = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back.len(), 2);
        for ((name, t), (_, p)) in back.iter().zip(s.iter()) {
            assert_eq!(name, &p.name);
            assert_eq!(t.shape(), p.value.shape());
            let a: Vec<u32> = t.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = p.value.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &sample()).unwrap();
        assert_eq!(&buf[..4], b"STMW");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 6);
        assert_eq!(&buf[16..22], b"conv.w");
    }

    #[test]
    fn truncation_and_garbage_are_rejected() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &sample()).unwrap();
        for cut in [0, 3, 10, 20, buf.len() - 1] {
            assert!(read_checkpoint(&buf[..cut]).is_err(), "cut at {cut}");
        }
        let mut long = buf.clone();
        long.push(0);
        assert!(read_checkpoint(&long[..]).is_err());
        let mut bad = buf;
        bad[0] = b'X';
        assert!(read_checkpoint(&bad[..]).is_err());
    }

    #[test]
    fn assign_checks_names_and_shapes() {
        let mut s = sample();
        let mut other = ParamStore::<f32>::new();
        other.add("conv.w", Tensor::zeros(&[3, 2]), true);
        other.add("bn.mean", Tensor::zeros(&[4]), false);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &other).unwrap();
        assert!(assign(&mut s, read_checkpoint(&buf[..]).unwrap()).is_err());
    }
}
