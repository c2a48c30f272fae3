use std::path::Path;

use super::VoxelField;
use crate::error::{Error, Result};
use crate::snapshot;

pub const FIELD_MAGIC: [u8; 4] = *b"VXFD";

/// Persists a field as 32-bit floats: raw densities, then interleaved RGB
/// color parameters.
pub fn write_field(field: &VoxelField, path: &Path) -> Result<()> {
    let payload = field
        .density_raw
        .iter()
        .copied()
        .chain(field.color.iter().flatten().copied());
    snapshot::write(path, FIELD_MAGIC, field.res, 0, &field.bbox, payload)
}

pub fn read_field(path: &Path) -> Result<VoxelField> {
    let c = snapshot::read(path, FIELD_MAGIC, 4)?;
    let n = c.res.pow(3);
    let density = c.payload[..n].iter().map(|&v| v as f64).collect();
    let color = c.payload[n..]
        .chunks_exact(3)
        .map(|rgb| [rgb[0] as f64, rgb[1] as f64, rgb[2] as f64])
        .collect();
    VoxelField::new(c.bbox, c.res, density, color).map_err(|e| Error::malformed(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Cube;

    #[test]
    fn snapshot_round_trip_at_f32_precision() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("m.vxf");
        let mut f = VoxelField::constant(Cube::new([-1.0; 3], 2.0).unwrap(), 3, 0.0, [0.5; 3]).unwrap();
        for (n, v) in f.density_raw.iter_mut().enumerate() {
            *v = n as f64 * 0.75 - 3.0;
        }
        f.color[5] = [0.25, 0.5, 1.0];
        write_field(&f, &p).unwrap();
        let g = read_field(&p).unwrap();
        assert_eq!(f, g); // every value above is exactly representable in f32
    }
}
