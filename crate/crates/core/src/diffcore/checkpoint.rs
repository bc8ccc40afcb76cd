//! Binary parameter records shared by every checkpoint flavour.
//!
//! Layout after the `SMLCKPT v1` header line:
//! `u32 count`, then per parameter `u32 name_len`, name bytes, `u32 ndim`,
//! `u64` dims, and little-endian `f64` values.

use std::io::{Read, Write};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const HEADER: &[u8] = b"SMLCKPT v1\n";

pub fn write_header(w: &mut impl Write) -> Result<()> {
    w.write_all(HEADER)?;
    Ok(())
}

pub fn read_header(r: &mut impl Read) -> Result<()> {
    let mut buf = vec![0u8; HEADER.len()];
    read_exact(r, &mut buf, "header")?;
    if buf != HEADER {
        if buf.starts_with(b"SMLCKPT ") {
            return Err(Error::Checkpoint(format!(
                "unsupported version {:?}",
                String::from_utf8_lossy(&buf[8..]).trim_end()
            )));
        }
        return Err(Error::Checkpoint("bad header".into()));
    }
    Ok(())
}

pub fn write_params(w: &mut impl Write, params: &ParamStore) -> Result<()> {
    write_u32(w, params.len() as u32)?;
    for (name, t) in params.iter() {
        write_u32(w, name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        write_u32(w, t.shape().len() as u32)?;
        for &d in t.shape() {
            write_u64(w, d as u64)?;
        }
        write_f64s(w, t.data())?;
    }
    Ok(())
}

pub fn read_params(r: &mut impl Read) -> Result<ParamStore> {
    let count = read_u32(r)?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let len = read_u32(r)? as usize;
        let mut name = vec![0u8; len];
        read_exact(r, &mut name, "parameter name")?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("non-utf8 name".into()))?;
        let ndim = read_u32(r)? as usize;
        if ndim > 8 {
            return Err(Error::Checkpoint(format!("implausible rank {ndim} for `{name}`")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let data = read_f64s(r, numel)?;
        params.insert(name, Tensor::new(shape, data)?);
    }
    Ok(params)
}

pub fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_f64s(w: &mut impl Write, vals: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(vals.len() * 8);
    for v in vals {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, "u32")?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, "u64")?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    read_exact(r, &mut buf, "values")?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

pub fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Checkpoint(format!("truncated file while reading {what}"))
        } else {
            Error::Io(e)
        }
    })
}
