//! `EFLD` field snapshot files.
//!
//! Layout (all little-endian):
//!
//! ```text
//! b"EFLD" | u32 version = 1 | u32 nx | u32 ny | u32 frame_count | f64 L0 | f64 L1
//! frame_count x ny x nx f64 values, row-major, row index = y
//! ```

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{Domain, ScalarField};

pub const MAGIC: &[u8; 4] = b"EFLD";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 4 + 8 * 2;

/// Serialize frames sharing one domain.
pub fn encode(frames: &[ScalarField]) -> Result<Vec<u8>> {
    let domain = match frames.first() {
        Some(f) => *f.domain(),
        None => return Err(Error::param("frames", "at least one frame is required")),
    };
    if frames.iter().any(|f| *f.domain() != domain) {
        return Err(Error::DomainMismatch);
    }
    let mut out = Vec::with_capacity(HEADER_LEN + frames.len() * domain.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for n in [domain.nx(), domain.ny(), frames.len()] {
        let n = u32::try_from(n).map_err(|_| Error::Format(format!("dimension {n} exceeds u32")))?;
        out.extend_from_slice(&n.to_le_bytes());
    }
    let [l0, l1] = domain.extents();
    out.extend_from_slice(&l0.to_le_bytes());
    out.extend_from_slice(&l1.to_le_bytes());
    for frame in frames {
        for v in frame.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Vec<ScalarField>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let f64_at = |off: usize| f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let (nx, ny, count) = (u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize);
    let (l0, l1) = (f64_at(20), f64_at(28));
    let domain = Domain::new(l0, l1, nx, ny).map_err(|e| Error::Format(e.to_string()))?;
    let per_frame = domain.len();
    let expected = HEADER_LEN + count * per_frame * 8;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "expected {expected} bytes for {count} frames of {nx}x{ny}, got {}",
            bytes.len()
        )));
    }
    let mut frames = Vec::with_capacity(count);
    for frame in bytes[HEADER_LEN..].chunks_exact(per_frame * 8) {
        let values = frame
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        frames.push(ScalarField::new(domain, values).map_err(|e| Error::Format(e.to_string()))?);
    }
    Ok(frames)
}

pub fn write_to(mut w: impl Write, frames: &[ScalarField]) -> Result<()> {
    let bytes = encode(frames)?;
    w.write_all(&bytes)
        .map_err(|e| Error::io("<writer>", e))
}

pub fn read_from(mut r: impl Read) -> Result<Vec<ScalarField>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io("<reader>", e))?;
    decode(&bytes)
}

/// Write atomically: the target is replaced only once the full file exists.
pub fn save(path: impl AsRef<Path>, frames: &[ScalarField]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(frames)?;
    write_atomic(path, &bytes)
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<ScalarField>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".to_string(),
    });
    let res: io::Result<()> = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    res.map_err(|e| Error::io(path, e))
}
