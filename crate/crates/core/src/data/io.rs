//! Portable little-endian tensor container ("PTEN") and named archives.
//!
//! Record layout: `b"PTEN"`, version `u16`, dtype `u8` (0 = f32, 1 = f64),
//! ndim `u8`, one `u64` per extent, then the row-major payload. An archive is
//! a `u32` count followed by `(u16 name length, UTF-8 name, record)` entries.
//! Every integer is little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"PTEN";
pub const VERSION: u16 = 1;

pub fn encode_tensor<T: Real>(t: &Tensor<T>, out: &mut Vec<u8>) -> Result<()> {
    let ndim = u8::try_from(t.ndim())
        .map_err(|_| Error::Format(format!("rank {} exceeds 255", t.ndim())))?;
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::DTYPE_CODE);
    out.push(ndim);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.reserve(t.len() * T::BYTES);
    for &v in t.data() {
        v.write_le(out);
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "truncated {what}: need {n} bytes at offset {}, have {}",
                    self.pos,
                    self.bytes.len() - self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2, what)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }
}

fn decode_values<S: Real, T: Real>(payload: &[u8]) -> Vec<T> {
    payload
        .chunks_exact(S::BYTES)
        .map(|c| T::from_f64_lossy(S::read_le(c).to_f64_lossy()))
        .collect()
}

fn decode_record<T: Real>(cur: &mut Cursor<'_>) -> Result<Tensor<T>> {
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = cur.u16("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dtype = cur.u8("dtype")?;
    let width = match dtype {
        0 => 4,
        1 => 8,
        other => return Err(Error::Format(format!("unknown dtype code {other}"))),
    };
    let ndim = cur.u8("ndim")? as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let d = cur.u64("dims")?;
        let d =
            usize::try_from(d).map_err(|_| Error::Format(format!("extent {d} overflows usize")))?;
        if d == 0 {
            return Err(Error::Format("zero extent".into()));
        }
        shape.push(d);
    }
    let bytes = shape
        .iter()
        .try_fold(width, |acc: usize, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format(format!("dimensions {shape:?} overflow")))?;
    let payload = cur.take(bytes, "payload")?;
    // Same-dtype reads are bit-exact; cross-dtype reads round through f64.
    let data = match (dtype, T::DTYPE_CODE) {
        (a, b) if a == b => payload.chunks_exact(T::BYTES).map(T::read_le).collect(),
        (0, _) => decode_values::<f32, T>(payload),
        _ => decode_values::<f64, T>(payload),
    };
    Tensor::new(&shape, data)
}

pub fn decode_tensor<T: Real>(bytes: &[u8]) -> Result<Tensor<T>> {
    let mut cur = Cursor { bytes, pos: 0 };
    let t = decode_record(&mut cur)?;
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after tensor",
            bytes.len() - cur.pos
        )));
    }
    Ok(t)
}

pub fn encode_archive<'a, T: Real + 'a>(
    entries: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>,
) -> Result<Vec<u8>> {
    let entries: Vec<_> = entries.into_iter().collect();
    let count = u32::try_from(entries.len())
        .map_err(|_| Error::Format("too many archive entries".into()))?;
    let mut out = count.to_le_bytes().to_vec();
    for (name, t) in entries {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Format(format!("name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        encode_tensor(t, &mut out)?;
    }
    Ok(out)
}

pub fn decode_archive<T: Real>(bytes: &[u8]) -> Result<Vec<(String, Tensor<T>)>> {
    let mut cur = Cursor { bytes, pos: 0 };
    let count = cur.u32("entry count")?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let len = cur.u16("name length")? as usize;
        let name = std::str::from_utf8(cur.take(len, "name")?)
            .map_err(|e| Error::Format(format!("entry name is not UTF-8: {e}")))?
            .to_string();
        entries.push((name, decode_record(&mut cur)?));
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after archive",
            bytes.len() - cur.pos
        )));
    }
    Ok(entries)
}

/// Writes `bytes` next to `path` and renames into place, so readers never
/// observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Format(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub fn write_tensor<T: Real>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let mut buf = Vec::new();
    encode_tensor(t, &mut buf)?;
    write_atomic(path.as_ref(), &buf)
}

pub fn read_tensor<T: Real>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    decode_tensor(&fs::read(path)?)
}

pub fn write_archive<'a, T: Real + 'a>(
    path: impl AsRef<Path>,
    entries: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>,
) -> Result<()> {
    write_atomic(path.as_ref(), &encode_archive(entries)?)
}

pub fn read_archive<T: Real>(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor<T>)>> {
    decode_archive(&fs::read(path)?)
}
