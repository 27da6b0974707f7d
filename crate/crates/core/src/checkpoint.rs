//! Named-array archives. Each entry is
//!
//! ```text
//! u32 LE  name length in bytes
//! bytes   UTF-8 name
//! u32 LE  rank
//! u32 LE  × rank dimensions
//! f32 LE  × product(dims) values, row-major
//! ```
//!
//! Entries follow each other until end of file.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::numerics::Tensor;

fn format_error(detail: impl Into<String>) -> Error {
    Error::Format { what: "array archive", detail: detail.into() }
}

pub fn write_arrays<W: Write>(out: &mut W, entries: &[(String, Tensor)]) -> Result<()> {
    for (name, t) in entries {
        let len = u32::try_from(name.len()).map_err(|_| format_error("name too long"))?;
        out.write_all(&len.to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| format_error("dimension too large"))?;
            out.write_all(&d.to_le_bytes())?;
        }
        let mut payload = Vec::with_capacity(4 * t.len());
        for &v in t.data() {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.write_all(&payload)?;
    }
    Ok(())
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
    let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| format_error(format!("truncated {what}")))?;
    let s = &bytes[*pos..end];
    *pos = end;
    Ok(s)
}

fn take_u32(bytes: &[u8], pos: &mut usize, what: &str) -> Result<u32> {
    let b = take(bytes, pos, 4, what)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

pub fn parse_arrays(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut pos = 0;
    let mut out = Vec::new();
    while pos < bytes.len() {
        let len = take_u32(bytes, &mut pos, "name length")? as usize;
        let name = std::str::from_utf8(take(bytes, &mut pos, len, "name")?)
            .map_err(|_| format_error("name is not UTF-8"))?
            .to_string();
        let rank = take_u32(bytes, &mut pos, "rank")? as usize;
        if rank > 8 {
            return Err(format_error(format!("{name}: implausible rank {rank}")));
        }
        let dims = (0..rank).map(|_| take_u32(bytes, &mut pos, "dimensions").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| format_error("size overflow"))?;
        let payload = take(bytes, &mut pos, count.checked_mul(4).ok_or_else(|| format_error("size overflow"))?, "payload")?;
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        let shape = if dims.is_empty() { vec![1] } else { dims };
        out.push((name, Tensor::new(&shape, data)?));
    }
    Ok(out)
}

pub fn read_arrays(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| if e.kind() == std::io::ErrorKind::NotFound { Error::MissingFile(path.to_path_buf()) } else { e.into() })?
        .read_to_end(&mut bytes)?;
    parse_arrays(&bytes)
}

pub fn save_arrays(path: &Path, entries: &[(String, Tensor)]) -> Result<()> {
    let mut buf = Vec::new();
    write_arrays(&mut buf, entries)?;
    fs::write(path, buf)?;
    Ok(())
}

/// Every parameter and buffer, in name order.
pub fn save_params(path: &Path, store: &ParamStore) -> Result<()> {
    let entries: Vec<(String, Tensor)> = store.iter().map(|(n, e)| (n.to_string(), e.value.clone())).collect();
    save_arrays(path, &entries)
}

/// Overwrites `store` from an archive that must contain exactly the same
/// names and shapes.
pub fn load_params(path: &Path, store: &mut ParamStore) -> Result<()> {
    let entries = read_arrays(path)?;
    let expected: Vec<&str> = store.iter().map(|(n, _)| n).collect();
    let mut found: Vec<&str> = entries.iter().map(|(n, _)| n.as_str()).collect();
    found.sort_unstable();
    if found != expected {
        let missing: Vec<&str> = expected.iter().filter(|n| !found.contains(n)).copied().collect();
        let extra: Vec<&str> = found.iter().filter(|n| !expected.contains(n)).copied().collect();
        return Err(format_error(format!(
            "{} does not match the model: missing {missing:?}, unexpected {extra:?}",
            path.display()
        )));
    }
    for (name, t) in entries {
        store.set(&name, t)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;

    #[test]
    fn byte_layout_of_one_entry() {
        let mut buf = Vec::new();
        write_arrays(&mut buf, &[("ab".into(), Tensor::new(&[2], vec![1.0, -2.0]).unwrap())]).unwrap();
        let mut expected = vec![2, 0, 0, 0, b'a', b'b', 1, 0, 0, 0, 2, 0, 0, 0];
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn params_round_trip_at_single_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let mut store = ParamStore::new(4);
        store.declare("conv.weight", &[3, 3, 2, 4], Init::FanIn(18));
        store.declare("conv.bias", &[4], Init::Zeros);
        save_params(&path, &store).unwrap();
        let mut other = ParamStore::new(99);
        other.declare("conv.weight", &[3, 3, 2, 4], Init::FanIn(18));
        other.declare("conv.bias", &[4], Init::Ones);
        load_params(&path, &mut other).unwrap();
        for (name, e) in store.iter() {
            let expected = e.value.map(|v| v as f32 as f64);
            assert_eq!(other.get(name).unwrap(), &expected);
        }
        // already single precision: a second round trip is exact
        let again = dir.path().join("w2.bin");
        save_params(&again, &other).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
    }

    #[test]
    fn mismatched_or_truncated_archives_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let mut store = ParamStore::new(0);
        store.declare("a", &[2], Init::Zeros);
        save_params(&path, &store).unwrap();
        let mut bigger = ParamStore::new(0);
        bigger.declare("a", &[2], Init::Zeros);
        bigger.declare("b", &[1], Init::Zeros);
        assert!(load_params(&path, &mut bigger).is_err());
        let bytes = fs::read(&path).unwrap();
        assert!(parse_arrays(&bytes[..bytes.len() - 1]).is_err());
        assert!(matches!(read_arrays(&dir.path().join("none")), Err(Error::MissingFile(_))));
    }
}
