//! Little-endian binary container shared by field and grid snapshots.
//!
//! ```text
//! magic    [u8; 4]
//! version  u32
//! res      u32      lattice nodes per axis
//! aux      u32      kind-specific (member count for ensemble files, else 0)
//! bbox     f32 × 4  min x, min y, min z, edge
//! payload  f32 × …  kind-specific arrays, back to back
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Cube;

pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Container {
    pub res: usize,
    pub aux: u32,
    pub bbox: Cube,
    pub payload: Vec<f32>,
}

pub(crate) fn write(path: &Path, magic: [u8; 4], res: usize, aux: u32, bbox: &Cube, payload: impl Iterator<Item = f64>) -> Result<()> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * res.pow(3));
    buf.extend_from_slice(&magic);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(res as u32).to_le_bytes());
    buf.extend_from_slice(&aux.to_le_bytes());
    for v in bbox.min.iter().chain(std::iter::once(&bbox.edge)) {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    for v in payload {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a container, checking the magic, version and that the payload holds
/// exactly `floats_per_node · res³` values.
pub(crate) fn read(path: &Path, magic: [u8; 4], floats_per_node: usize) -> Result<Container> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::malformed(path, "truncated header"));
    }
    if bytes[..4] != magic {
        return Err(Error::malformed(
            path,
            format!("bad magic {:?}, expected {:?}", &bytes[..4], magic),
        ));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let float = |at: usize| f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as f64;
    let version = word(4);
    if version != VERSION {
        return Err(Error::SchemaVersion {
            found: version as u64,
            expected: VERSION as u64,
        });
    }
    let res = word(8) as usize;
    let aux = word(12);
    let bbox = Cube::new([float(16), float(20), float(24)], float(28))
        .map_err(|e| Error::malformed(path, e.to_string()))?;
    if res < 2 {
        return Err(Error::malformed(path, format!("resolution {res} < 2")));
    }
    let expected = floats_per_node * res.pow(3);
    let body = &bytes[HEADER_LEN..];
    if body.len() != 4 * expected {
        return Err(Error::malformed(
            path,
            format!("payload has {} bytes, expected {}", body.len(), 4 * expected),
        ));
    }
    let payload = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Container {
        res,
        aux,
        bbox,
        payload,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_and_errors() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("x.bin");
        let bbox = Cube::new([-1.0, 0.5, 2.0], 3.0).unwrap();
        write(&p, *b"TEST", 2, 7, &bbox, (0..8).map(|v| v as f64)).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 32);
        assert_eq!(&bytes[..4], b"TEST");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);

        let c = read(&p, *b"TEST", 1).unwrap();
        assert_eq!((c.res, c.aux, c.bbox), (2, 7, bbox));
        assert_eq!(c.payload[7], 7.0);

        assert!(matches!(read(&p, *b"NOPE", 1), Err(Error::Malformed { .. })));
        assert!(matches!(read(&p, *b"TEST", 2), Err(Error::Malformed { .. })));

        let mut bad = bytes.clone();
        bad[4] = 9;
        fs::write(&p, bad).unwrap();
        assert!(matches!(read(&p, *b"TEST", 1), Err(Error::SchemaVersion { found: 9, .. })));
    }
}
