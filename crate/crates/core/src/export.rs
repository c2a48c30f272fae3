//! PLY point clouds and the JSON run report.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::postprocess::{ArtifactReport, Histogram, Point, PointSet, RobustnessReport};

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlyMode {
    Ascii,
    BinaryLe,
}

impl PlyMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PlyMode::Ascii => "ascii",
            PlyMode::BinaryLe => "binary_le",
        }
    }

    fn header_format(&self) -> &'static str {
        match self {
            PlyMode::Ascii => "ascii",
            PlyMode::BinaryLe => "binary_little_endian",
        }
    }
}

impl fmt::Display for PlyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PlyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ascii" => Ok(PlyMode::Ascii),
            "binary_le" | "binary" | "binary_little_endian" => Ok(PlyMode::BinaryLe),
            _ => Err(Error::InvalidArgument(format!("unknown PLY mode '{s}'"))),
        }
    }
}

/// Writes `x y z density uncertainty` as floats, plus `red green blue` when
/// every point carries a color.
pub fn write_ply(ps: &PointSet, path: &Path, mode: PlyMode) -> Result<()> {
    let with_rgb = !ps.is_empty() && ps.points.iter().all(|p| p.rgb.is_some());
    if !with_rgb && ps.points.iter().any(|p| p.rgb.is_some()) {
        return Err(Error::InvalidArgument("either all points or none must carry a color".into()));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);

    let mut header = format!(
        "ply\nformat {} 1.0\nelement vertex {}\n",
        mode.header_format(),
        ps.len()
    );
    for name in ["x", "y", "z", "density", "uncertainty"] {
        header.push_str(&format!("property float {name}\n"));
    }
    if with_rgb {
        for name in ["red", "green", "blue"] {
            header.push_str(&format!("property uchar {name}\n"));
        }
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes()).map_err(io)?;

    for p in &ps.points {
        let floats = [
            p.position.x as f32,
            p.position.y as f32,
            p.position.z as f32,
            p.density as f32,
            p.uncertainty as f32,
        ];
        match mode {
            PlyMode::Ascii => {
                let mut line = floats.map(|v| v.to_string()).join(" ");
                if let Some([r, g, b]) = p.rgb.filter(|_| with_rgb) {
                    line.push_str(&format!(" {r} {g} {b}"));
                }
                line.push('\n');
                w.write_all(line.as_bytes()).map_err(io)?;
            }
            PlyMode::BinaryLe => {
                for v in floats {
                    w.write_all(&v.to_le_bytes()).map_err(io)?;
                }
                if let Some(rgb) = p.rgb.filter(|_| with_rgb) {
                    w.write_all(&rgb).map_err(io)?;
                }
            }
        }
    }
    w.flush().map_err(io)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn decode_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

/// Reads a vertex-only PLY carrying at least `x y z density uncertainty`.
/// Property order is taken from the header.
pub fn read_ply(path: &Path) -> Result<PointSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |m: String| Error::malformed(path, m);

    let mut line = String::new();
    let mut next_line = |r: &mut BufReader<File>| -> Result<String> {
        line.clear();
        let n = r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(Error::malformed(path, "unexpected end of header"));
        }
        Ok(line.trim_end_matches(['\n', '\r']).to_string())
    };

    if next_line(&mut r)? != "ply" {
        return Err(bad("missing 'ply' magic".into()));
    }
    let mut mode = None;
    let mut count = None;
    let mut props: Vec<(String, Scalar)> = Vec::new();
    loop {
        let l = next_line(&mut r)?;
        let tok: Vec<&str> = l.split_whitespace().collect();
        match tok.as_slice() {
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["format", fmt, "1.0"] => {
                mode = Some(match *fmt {
                    "ascii" => PlyMode::Ascii,
                    "binary_little_endian" => PlyMode::BinaryLe,
                    other => return Err(bad(format!("unsupported PLY format '{other}'"))),
                })
            }
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| bad(format!("bad vertex count '{n}'")))?)
            }
            ["element", other, _] => return Err(bad(format!("unsupported element '{other}'"))),
            ["property", "list", ..] => return Err(bad("list properties are not supported".into())),
            ["property", ty, name] => {
                let s = Scalar::parse(ty).ok_or_else(|| bad(format!("unknown property type '{ty}'")))?;
                props.push((name.to_string(), s));
            }
            _ => return Err(bad(format!("unrecognized header line '{l}'"))),
        }
    }
    let mode = mode.ok_or_else(|| bad("missing format line".into()))?;
    let count = count.ok_or_else(|| bad("missing vertex element".into()))?;
    let col = |name: &str| props.iter().position(|(n, _)| n == name);
    let mut required = [0usize; 5];
    for (slot, name) in required.iter_mut().zip(["x", "y", "z", "density", "uncertainty"]) {
        *slot = col(name).ok_or_else(|| bad(format!("missing property '{name}'")))?;
    }
    let rgb_cols = match (col("red"), col("green"), col("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(count);
    match mode {
        PlyMode::Ascii => {
            let mut body = String::new();
            r.read_to_string(&mut body).map_err(|e| Error::io(path, e))?;
            let mut tokens = body.split_whitespace();
            for v in 0..count {
                let mut row = Vec::with_capacity(props.len());
                for (name, ty) in &props {
                    let t = tokens
                        .next()
                        .ok_or_else(|| bad(format!("vertex {v}: missing value for '{name}'")))?;
                    // read at the declared precision so both encodings agree
                    let x = match ty {
                        Scalar::F32 => t.parse::<f32>().map(f64::from),
                        _ => t.parse::<f64>(),
                    };
                    row.push(x.map_err(|_| bad(format!("vertex {v}: bad number '{t}'")))?);
                }
                rows.push(row);
            }
        }
        PlyMode::BinaryLe => {
            let stride: usize = props.iter().map(|(_, s)| s.size()).sum();
            let mut buf = vec![0u8; stride];
            for v in 0..count {
                r.read_exact(&mut buf)
                    .map_err(|_| bad(format!("truncated binary body at vertex {v}")))?;
                let mut off = 0;
                let row = props
                    .iter()
                    .map(|(_, s)| {
                        let x = s.decode_le(&buf[off..off + s.size()]);
                        off += s.size();
                        x
                    })
                    .collect();
                rows.push(row);
            }
        }
    }

    let points = rows
        .into_iter()
        .map(|row| Point {
            position: Vec3::new(row[required[0]], row[required[1]], row[required[2]]),
            density: row[required[3]],
            uncertainty: row[required[4]],
            rgb: rgb_cols.map(|c| c.map(|i| row[i].clamp(0.0, 255.0) as u8)),
        })
        .collect();
    Ok(PointSet { points })
}

/// Serde adapters writing non-finite reals as the strings `"inf"`, `"-inf"`
/// and `"nan"`, which plain JSON cannot represent.
pub mod sentinel {
    use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    fn encode(v: f64) -> Repr {
        if v.is_finite() {
            Repr::Num(v)
        } else if v.is_nan() {
            Repr::Text("nan".into())
        } else if v > 0.0 {
            Repr::Text("inf".into())
        } else {
            Repr::Text("-inf".into())
        }
    }

    fn decode<E: de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(E::custom(format!("expected a number or \"inf\", got \"{other}\""))),
            },
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        encode(*v).serialize(s)
    }

    /// JSON value of `v` under the same convention.
    pub fn to_json(v: f64) -> serde_json::Value {
        serde_json::to_value(encode(v)).expect("real serializes")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        decode(Repr::deserialize(d)?)
    }

    pub mod opt {
        use super::*;

        pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            v.map(encode).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            Option::<Repr>::deserialize(d)?.map(decode).transpose()
        }
    }

    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            v.iter().map(|&x| encode(x)).collect::<Vec<_>>().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<Repr>::deserialize(d)?.into_iter().map(decode).collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointCounts {
    pub total_grid: usize,
    pub above_threshold: usize,
    pub kept: usize,
    pub removed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub crate_version: String,
    pub member_seeds: Vec<u64>,
    pub noise_seed: u64,
    pub members: usize,
    pub grid_res: usize,
    /// Translation noise as requested, before conversion to world units.
    pub sigma_t_percent: Option<f64>,
    pub rig_radius: f64,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u64,
    /// No noise of any kind was applied.
    pub baseline: bool,
    /// Per training view, averaged over members.
    #[serde(with = "sentinel::vec")]
    pub per_view_psnr: Vec<f64>,
    #[serde(with = "sentinel::vec")]
    pub member_mean_psnr: Vec<f64>,
    #[serde(with = "sentinel")]
    pub mean_psnr: f64,
    /// Mean uncertainty over positions with mean density above the threshold.
    #[serde(rename = "mU_delta")]
    pub mu_delta: f64,
    /// Mean of the ensemble-mean density over the same positions.
    pub m_mean_delta: f64,
    #[serde(rename = "mU_delta_full_grid")]
    pub mu_delta_full_grid: f64,
    pub m_mean_delta_full_grid: f64,
    pub percentile_threshold: f64,
    pub point_counts: PointCounts,
    /// Frames whose rotation noise fell back to axis-angle form.
    pub gimbal_fallbacks: Vec<usize>,
    /// Uncertainty histogram over the whole grid.
    pub histogram: Histogram,
    pub artifacts: Option<ArtifactReport>,
    pub robustness: Option<RobustnessReport>,
    /// Every file the run wrote, relative to the output directory.
    pub outputs: Vec<String>,
    pub config: RunConfig,
    pub provenance: Provenance,
}

const REPORT_KEYS: &[&str] = &[
    "schema_version",
    "baseline",
    "per_view_psnr",
    "member_mean_psnr",
    "mean_psnr",
    "mU_delta",
    "m_mean_delta",
    "mU_delta_full_grid",
    "m_mean_delta_full_grid",
    "percentile_threshold",
    "point_counts",
    "gimbal_fallbacks",
    "histogram",
    "artifacts",
    "robustness",
    "outputs",
    "config",
    "provenance",
];

impl MetricsReport {
    /// Copy with wall-clock fields zeroed, for reproducibility comparisons.
    pub fn masked(&self) -> Self {
        let mut r = self.clone();
        r.provenance.started_unix_ms = 0;
        r.provenance.finished_unix_ms = 0;
        r
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

pub fn write_report(report: &MetricsReport, path: &Path) -> Result<()> {
    fs::write(path, report.to_json()).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<MetricsReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_report(&text).map_err(|e| match e {
        Error::Malformed { message, .. } => Error::malformed(path, message),
        other => other,
    })
}

/// Parses a report document. Unknown top-level keys are logged and ignored.
pub fn parse_report(text: &str) -> Result<MetricsReport> {
    let bad = |m: String| Error::malformed("<report>", m);
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| bad("report must be a single JSON object".into()))?;
    let version = obj
        .get("schema_version")
        .ok_or_else(|| bad("missing field `schema_version`".into()))?
        .as_u64()
        .ok_or_else(|| bad("`schema_version` must be a non-negative integer".into()))?;
    if version != SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            found: version,
            expected: SCHEMA_VERSION,
        });
    }
    for key in obj.keys().filter(|k| !REPORT_KEYS.contains(&k.as_str())) {
        log::warn!("ignoring unknown report field `{key}`");
    }
    serde_json::from_value(value).map_err(|e| bad(e.to_string()))
}
