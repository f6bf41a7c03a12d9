use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geom::{Point, PointCloud};

/// On-disk point cloud encodings. Coordinates are stored as 32-bit floats.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CloudFormat {
    /// Packed little-endian `f32` triplets.
    XyzBin,
    /// Packed little-endian `f32` quadruplets `x y z intensity`.
    XyziBin,
    /// ASCII PLY with a single `vertex` element.
    AsciiPly,
}

impl CloudFormat {
    pub fn name(self) -> &'static str {
        match self {
            CloudFormat::XyzBin => "xyz-bin",
            CloudFormat::XyziBin => "xyzi-bin",
            CloudFormat::AsciiPly => "ascii-ply",
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            CloudFormat::XyzBin | CloudFormat::XyziBin => "bin",
            CloudFormat::AsciiPly => "ply",
        }
    }

    /// `.ply` is PLY; anything else falls back to `default`.
    pub fn from_path(path: &Path, default: CloudFormat) -> CloudFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("ply") => CloudFormat::AsciiPly,
            _ => default,
        }
    }
}

impl FromStr for CloudFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xyz-bin" => Ok(CloudFormat::XyzBin),
            "xyzi-bin" => Ok(CloudFormat::XyziBin),
            "ascii-ply" => Ok(CloudFormat::AsciiPly),
            other => Err(Error::invalid(format!(
                "unknown cloud format {other:?} (expected xyz-bin, xyzi-bin or ascii-ply)"
            ))),
        }
    }
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

fn decode_packed(bytes: &[u8], width: usize) -> Result<PointCloud> {
    let record = width * 4;
    if bytes.len() % record != 0 {
        let at = bytes.len() - bytes.len() % record;
        return Err(format_err(
            at,
            format!("truncated record: {} trailing bytes, records are {record} bytes", bytes.len() % record),
        ));
    }
    let n = bytes.len() / record;
    let mut points = Vec::with_capacity(n);
    let mut intensity = (width == 4).then(|| Vec::with_capacity(n));
    for (r, rec) in bytes.chunks_exact(record).enumerate() {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap()) as f64;
        let p = Point::new(f(0), f(1), f(2));
        if !p.coords.iter().all(|v| v.is_finite()) {
            return Err(format_err(r * record, "non-finite coordinate"));
        }
        points.push(p);
        if let Some(i) = intensity.as_mut() {
            i.push(f(3));
        }
    }
    PointCloud::with_intensity(points, intensity)
}

fn encode_packed(cloud: &PointCloud, with_intensity: bool) -> Vec<u8> {
    let width = if with_intensity { 16 } else { 12 };
    let mut out = Vec::with_capacity(cloud.len() * width);
    for (k, p) in cloud.points().iter().enumerate() {
        for v in [p.x, p.y, p.z] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        if with_intensity {
            let i = cloud.intensity().map_or(0.0, |i| i[k]);
            out.extend_from_slice(&(i as f32).to_le_bytes());
        }
    }
    out
}

/// Lines of `text` with their byte offsets, without line terminators.
fn lines_with_offsets(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut offset = 0;
    text.split_inclusive('\n').map(move |raw| {
        let at = offset;
        offset += raw.len();
        (at, raw.trim_end_matches(['\n', '\r']))
    })
}

fn decode_ply(bytes: &[u8]) -> Result<PointCloud> {
    let text = std::str::from_utf8(bytes).map_err(|e| format_err(e.valid_up_to(), "PLY is not valid UTF-8"))?;
    let mut lines = lines_with_offsets(text);
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(format_err(0, "missing 'ply' magic line")),
    }
    let mut count: Option<usize> = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    let mut header_done = false;
    for (at, line) in lines.by_ref() {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", "ascii", _] => {}
            ["format", other, ..] => return Err(format_err(at, format!("unsupported PLY format {other}"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse().map_err(|_| format_err(at, format!("bad vertex count {n:?}")))?);
                in_vertex = true;
            }
            ["element", name, n] => {
                if *n != "0" {
                    return Err(format_err(at, format!("unsupported non-empty element {name}")));
                }
                in_vertex = false;
            }
            ["property", "list", ..] if in_vertex => return Err(format_err(at, "list vertex properties are not supported")),
            ["property", "list", ..] => {}
            ["property", _ty, name] => {
                if in_vertex {
                    props.push(name.to_string());
                }
            }
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => return Err(format_err(at, format!("malformed header line {line:?}"))),
        }
    }
    if !header_done {
        return Err(format_err(bytes.len(), "PLY header has no end_header"));
    }
    let n = count.ok_or_else(|| format_err(0, "PLY header declares no vertex element"))?;
    let col = |name: &str| props.iter().position(|p| p == name);
    let (Some(ix), Some(iy), Some(iz)) = (col("x"), col("y"), col("z")) else {
        return Err(format_err(0, "vertex element lacks x, y or z"));
    };
    let ii = col("intensity");
    let mut points = Vec::with_capacity(n);
    let mut intensity = ii.map(|_| Vec::with_capacity(n));
    for (at, line) in lines.by_ref() {
        if points.len() == n {
            if line.trim().is_empty() {
                continue;
            }
            return Err(format_err(at, "data after the declared vertex count"));
        }
        let values = line
            .split_whitespace()
            .map(|w| w.parse::<f32>().map(f64::from))
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|_| format_err(at, format!("unparseable vertex line {line:?}")))?;
        if values.len() != props.len() {
            return Err(format_err(at, format!("expected {} values, found {}", props.len(), values.len())));
        }
        let p = Point::new(values[ix], values[iy], values[iz]);
        if !p.coords.iter().all(|v| v.is_finite()) {
            return Err(format_err(at, "non-finite coordinate"));
        }
        points.push(p);
        if let (Some(i), Some(k)) = (intensity.as_mut(), ii) {
            i.push(values[k]);
        }
    }
    if points.len() < n {
        return Err(format_err(bytes.len(), format!("expected {n} vertices, found {}", points.len())));
    }
    PointCloud::with_intensity(points, intensity)
}

fn encode_ply(cloud: &PointCloud) -> Vec<u8> {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    writeln!(s, "element vertex {}", cloud.len()).unwrap();
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    if cloud.intensity().is_some() {
        s.push_str("property float intensity\n");
    }
    s.push_str("end_header\n");
    for (k, p) in cloud.points().iter().enumerate() {
        write!(s, "{} {} {}", p.x as f32, p.y as f32, p.z as f32).unwrap();
        if let Some(i) = cloud.intensity() {
            write!(s, " {}", i[k] as f32).unwrap();
        }
        s.push('\n');
    }
    s.into_bytes()
}

pub fn decode_cloud(bytes: &[u8], format: CloudFormat) -> Result<PointCloud> {
    match format {
        CloudFormat::XyzBin => decode_packed(bytes, 3),
        CloudFormat::XyziBin => decode_packed(bytes, 4),
        CloudFormat::AsciiPly => decode_ply(bytes),
    }
}

/// Encodes `cloud`; values are rounded to `f32`. `XyziBin` writes zero
/// intensity for clouds without one.
pub fn encode_cloud(cloud: &PointCloud, format: CloudFormat) -> Vec<u8> {
    match format {
        CloudFormat::XyzBin => encode_packed(cloud, false),
        CloudFormat::XyziBin => encode_packed(cloud, true),
        CloudFormat::AsciiPly => encode_ply(cloud),
    }
}

pub fn load_cloud(path: impl AsRef<Path>, format: CloudFormat) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
    decode_cloud(&bytes, format)
        .map(|c| c.with_id(id))
        .map_err(|e| match e {
            Error::Format { offset, message } => Error::Format {
                offset,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })
}

pub fn save_cloud(cloud: &PointCloud, path: impl AsRef<Path>, format: CloudFormat) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_cloud(cloud, format)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use rand::Rng;

    fn f32_cloud(n: usize, intensity: bool, seed: u64) -> PointCloud {
        let mut rng = seeded_rng(seed);
        let mut r = || rng.random_range(-50.0f32..50.0) as f64;
        let pts: Vec<Point> = (0..n).map(|_| Point::new(r(), r(), r())).collect();
        let int = intensity.then(|| (0..n).map(|_| r().abs()).collect());
        PointCloud::with_intensity(pts, int).unwrap()
    }

    #[test]
    fn record_arithmetic() {
        let bytes = vec![0u8; 36];
        assert_eq!(decode_cloud(&bytes, CloudFormat::XyzBin).unwrap().len(), 3);
        match decode_cloud(&bytes[..35], CloudFormat::XyzBin) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 24),
            other => panic!("{other:?}"),
        }
        assert!(decode_cloud(&bytes, CloudFormat::XyziBin).is_err());
    }

    #[test]
    fn round_trips_are_bit_exact() {
        for (format, with_i) in [
            (CloudFormat::XyzBin, false),
            (CloudFormat::XyziBin, true),
            (CloudFormat::AsciiPly, false),
            (CloudFormat::AsciiPly, true),
        ] {
            let c = f32_cloud(257, with_i, 3);
            let bytes = encode_cloud(&c, format);
            let back = decode_cloud(&bytes, format).unwrap();
            assert_eq!(back.points(), c.points(), "{format:?}");
            assert_eq!(back.intensity(), c.intensity());
            assert_eq!(encode_cloud(&back, format), bytes);
        }
    }

    #[test]
    fn ply_errors_carry_offsets() {
        assert!(matches!(decode_cloud(b"plx\n", CloudFormat::AsciiPly), Err(Error::Format { offset: 0, .. })));
        let header = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
        let text = format!("{header}1 2 3\n4 5\n");
        match decode_cloud(text.as_bytes(), CloudFormat::AsciiPly) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset as usize, header.len() + 6),
            other => panic!("{other:?}"),
        }
        let short = format!("{header}1 2 3\n");
        assert!(matches!(
            decode_cloud(short.as_bytes(), CloudFormat::AsciiPly),
            Err(Error::Format { offset, .. }) if offset as usize == short.len()
        ));
        let bad = "ply\nformat binary_little_endian 1.0\nend_header\n";
        assert!(decode_cloud(bad.as_bytes(), CloudFormat::AsciiPly).is_err());
    }

    #[test]
    fn ply_ignores_extra_properties() {
        let text = "ply\nformat ascii 1.0\ncomment test\nelement vertex 1\nproperty float nx\nproperty float x\nproperty float y\nproperty float z\nelement face 0\nproperty list uchar int vertex_indices\nend_header\n9 1 2 3\n";
        let c = decode_cloud(text.as_bytes(), CloudFormat::AsciiPly).unwrap();
        assert_eq!(c.points()[0], Point::new(1.0, 2.0, 3.0));
    }
}
