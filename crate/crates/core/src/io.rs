//! File formats: JSON lines and a versioned binary container for parameter vectors.
//!
//! Binary layout: 8-byte magic, u32 format version, u64 header length, JSON
//! header, u64 parameter count, parameters as little-endian f64.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line)
            .map_err(|e| Error::input(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let f = create(path)?;
    let mut w = BufWriter::new(f);
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let s = read_text(path)?;
    serde_json::from_str(&s).map_err(|e| Error::input(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &serde_json::to_string_pretty(value)?)
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    create(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    create(path)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<fs::File> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

pub fn encode_params<H: Serialize>(magic: &[u8; 8], header: &H, params: &[f64]) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(8 + 4 + 16 + header.len() + params.len() * 8);
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Format("truncated binary file".into()));
    }
    let (a, b) = bytes.split_at(n);
    *bytes = b;
    Ok(a)
}

fn take_u64(bytes: &mut &[u8]) -> Result<u64> {
    Ok(u64::from_le_bytes(take(bytes, 8)?.try_into().unwrap()))
}

pub fn decode_params<H: DeserializeOwned>(magic: &[u8; 8], mut bytes: &[u8]) -> Result<(H, Vec<f64>)> {
    let got = take(&mut bytes, 8)?;
    if got != magic {
        return Err(Error::Format(format!(
            "wrong file type: expected {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(got)
        )));
    }
    let version = u32::from_le_bytes(take(&mut bytes, 4)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let hlen = take_u64(&mut bytes)? as usize;
    let header = serde_json::from_slice(take(&mut bytes, hlen)?)?;
    let n = take_u64(&mut bytes)? as usize;
    let raw = take(&mut bytes, n.checked_mul(8).ok_or_else(|| Error::Format("bad parameter count".into()))?)?;
    if !bytes.is_empty() {
        return Err(Error::Format("trailing bytes after parameters".into()));
    }
    let params = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((header, params))
}

pub fn save_params<H: Serialize>(path: &Path, magic: &[u8; 8], header: &H, params: &[f64]) -> Result<()> {
    write_bytes(path, &encode_params(magic, header, params)?)
}

pub fn load_params<H: DeserializeOwned>(path: &Path, magic: &[u8; 8]) -> Result<(H, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_params(magic, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_round_trip() {
        let bytes = encode_params(b"TESTFILE", &vec!["a".to_string()], &[1.5, -0.0, f64::MAX]).unwrap();
        let (h, p): (Vec<String>, Vec<f64>) = decode_params(b"TESTFILE", &bytes).unwrap();
        assert_eq!(h, vec!["a"]);
        assert_eq!(p, vec![1.5, -0.0, f64::MAX]);
        assert!(decode_params::<Vec<String>>(b"OTHERFIL", &bytes).is_err());
        assert!(decode_params::<Vec<String>>(b"TESTFILE", &bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/x.jsonl");
        write_jsonl(&path, &[1u32, 2, 3]).unwrap();
        assert_eq!(read_jsonl::<u32>(&path).unwrap(), vec![1, 2, 3]);
    }
}
