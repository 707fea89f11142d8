//! Little-endian primitives shared by the binary file formats.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub(crate) fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn write_f64s<W: Write>(w: &mut W, vs: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(vs.len() * 8);
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect())
}

pub(crate) fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    write_u64(w, s.len() as u64)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub(crate) fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u64(r)? as usize;
    if len > 1 << 16 {
        return Err(Error::Format(format!("string field of {len} bytes is implausibly long")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(truncated)?;
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}

pub(crate) fn read_magic<R: Read>(r: &mut R, magic: &[u8; 8], what: &str) -> Result<()> {
    let mut m = [0u8; 8];
    r.read_exact(&mut m).map_err(truncated)?;
    if &m != magic {
        return Err(Error::Format(format!("not a {what} file (bad magic)")));
    }
    Ok(())
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("file is truncated".into())
    } else {
        Error::Io(e)
    }
}
