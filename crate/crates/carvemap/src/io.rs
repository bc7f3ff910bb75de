//! Dataset layout, mesh and image file formats.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! scans/000000.bin     little-endian f32 quadruples x, y, z, reflectance
//! images/000000.png    grayscale (8-bit, or .pgm)
//! calib.txt            K: fx fy cx cy
//!                      Tr_lidar_cam: 12 row-major floats
//! poses.txt            optional, 12 row-major floats per line (world ← sensor)
//! times.txt            optional, one timestamp per frame
//! ```

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use carvemap_core::texture::PackedAtlas;
use carvemap_core::{GrayImage, Intrinsics, Point3, RigidTransform, TriangleMesh};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("calibration not found: {0}")]
    CalibrationNotFound(PathBuf),
    #[error("unreadable scan {path}: {message}")]
    UnreadableScan { path: PathBuf, message: String },
    #[error("found {scans} scans but {images} images")]
    CountMismatch { scans: usize, images: usize },
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error(transparent)]
    Core(#[from] carvemap_core::Error),
}

pub type Result<T> = std::result::Result<T, IoError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

fn format_err(path: &Path, message: impl Into<String>) -> IoError {
    IoError::Format { path: path.to_path_buf(), message: message.into() }
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub intrinsics: Intrinsics,
    /// Sensor frame → camera frame.
    pub lidar_to_camera: RigidTransform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub image: GrayImage,
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Raw returns in the sensor frame, one list per scan.
    pub scans: Vec<Vec<Point3>>,
    pub frames: Vec<Frame>,
    pub calibration: Calibration,
    /// Sensor → world poses, when the dataset ships them.
    pub poses: Option<Vec<RigidTransform>>,
    /// Non-finite points dropped while loading.
    pub dropped: usize,
}

pub fn parse_floats(text: &str) -> std::result::Result<Vec<f64>, String> {
    text.split_whitespace().map(|t| t.parse::<f64>().map_err(|_| format!("not a number: {t:?}"))).collect()
}

fn twelve(values: &[f64]) -> std::result::Result<[f64; 12], String> {
    values.try_into().map_err(|_| format!("expected 12 values, found {}", values.len()))
}

pub fn parse_calibration(path: &Path, text: &str) -> Result<Calibration> {
    let mut k = None;
    let mut tr = None;
    for line in text.lines() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("K:") {
            let v = parse_floats(rest).map_err(|m| format_err(path, m))?;
            let [fx, fy, cx, cy] = v[..] else {
                return Err(format_err(path, format!("K expects 4 values, found {}", v.len())));
            };
            k = Some(Intrinsics { fx, fy, cx, cy });
        } else if let Some(rest) = line.strip_prefix("Tr_lidar_cam:") {
            let v = parse_floats(rest).and_then(|v| twelve(&v)).map_err(|m| format_err(path, m))?;
            tr = Some(RigidTransform::from_row_major(&v).map_err(|e| format_err(path, format!("Tr_lidar_cam: {e}")))?);
        }
    }
    let intrinsics = k.ok_or_else(|| format_err(path, "missing K"))?;
    let lidar_to_camera = tr.ok_or_else(|| format_err(path, "missing Tr_lidar_cam"))?;
    Ok(Calibration { intrinsics, lidar_to_camera })
}

pub fn format_calibration(c: &Calibration) -> String {
    let Intrinsics { fx, fy, cx, cy } = c.intrinsics;
    let mut s = format!("K: {fx} {fy} {cx} {cy}\nTr_lidar_cam:");
    for v in c.lidar_to_camera.to_row_major() {
        let _ = write!(s, " {v}");
    }
    s.push('\n');
    s
}

pub fn parse_poses(path: &Path, text: &str) -> Result<Vec<RigidTransform>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let v = parse_floats(l).and_then(|v| twelve(&v)).map_err(|m| format_err(path, format!("line {}: {m}", n + 1)))?;
            RigidTransform::from_row_major(&v).map_err(|e| format_err(path, format!("line {}: {e}", n + 1)))
        })
        .collect()
}

pub fn format_poses(poses: &[RigidTransform]) -> String {
    let mut s = String::new();
    for p in poses {
        let row: Vec<String> = p.to_row_major().iter().map(|v| v.to_string()).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

/// Reads a KITTI velodyne scan; returns the finite points and the number of
/// dropped non-finite ones.
pub fn read_scan(path: &Path) -> Result<(Vec<Point3>, usize)> {
    let bytes = fs::read(path).map_err(|e| IoError::UnreadableScan { path: path.to_path_buf(), message: e.to_string() })?;
    if bytes.len() % 16 != 0 {
        return Err(IoError::UnreadableScan {
            path: path.to_path_buf(),
            message: format!("size {} is not a multiple of 16 bytes", bytes.len()),
        });
    }
    let mut points = Vec::with_capacity(bytes.len() / 16);
    let mut dropped = 0;
    for rec in bytes.chunks_exact(16) {
        let f = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().unwrap()) as f64;
        let p = Point3::new(f(0), f(1), f(2));
        if p.iter().all(|c| c.is_finite()) {
            points.push(p);
        } else {
            dropped += 1;
        }
    }
    Ok((points, dropped))
}

pub fn write_scan(path: &Path, points: &[Point3]) -> Result<()> {
    let mut bytes = Vec::with_capacity(points.len() * 16);
    for p in points {
        for c in [p.x as f32, p.y as f32, p.z as f32, 0.0f32] {
            bytes.extend_from_slice(&c.to_le_bytes());
        }
    }
    write_bytes(path, &bytes)
}

pub fn read_image(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|source| IoError::Image { path: path.to_path_buf(), source })?;
    let gray = img.into_luma8();
    let (w, h) = gray.dimensions();
    Ok(GrayImage::from_u8(w as usize, h as usize, gray.as_raw())?)
}

pub fn write_image(path: &Path, image: &GrayImage) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    image::save_buffer(path, &image.to_u8(), image.width() as u32, image.height() as u32, image::ExtendedColorType::L8)
        .map_err(|source| IoError::Image { path: path.to_path_buf(), source })
}

fn numbered(dir: &Path, extensions: &[&str]) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()).is_some_and(|e| extensions.contains(&e)))
        .collect();
    files.sort();
    Ok(files)
}

pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let calib_path = root.join("calib.txt");
    if !calib_path.is_file() {
        return Err(IoError::CalibrationNotFound(calib_path));
    }
    let calibration = parse_calibration(&calib_path, &read_to_string(&calib_path)?)?;
    let scan_files = numbered(&root.join("scans"), &["bin"])?;
    let image_files = numbered(&root.join("images"), &["png", "pgm"])?;
    if scan_files.len() != image_files.len() {
        return Err(IoError::CountMismatch { scans: scan_files.len(), images: image_files.len() });
    }
    if scan_files.is_empty() {
        return Err(format_err(&root.join("scans"), "no scans"));
    }
    let mut scans = Vec::with_capacity(scan_files.len());
    let mut dropped = 0;
    for f in &scan_files {
        let (points, d) = read_scan(f)?;
        dropped += d;
        scans.push(points);
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} non-finite points");
    }
    let times_path = root.join("times.txt");
    let times = if times_path.is_file() {
        let v = parse_floats(&read_to_string(&times_path)?).map_err(|m| format_err(&times_path, m))?;
        if v.len() != image_files.len() {
            return Err(format_err(&times_path, format!("expected {} timestamps, found {}", image_files.len(), v.len())));
        }
        v
    } else {
        (0..image_files.len()).map(|i| i as f64).collect()
    };
    let frames = image_files
        .iter()
        .zip(times)
        .map(|(f, timestamp)| Ok(Frame { image: read_image(f)?, timestamp }))
        .collect::<Result<Vec<_>>>()?;
    let poses_path = root.join("poses.txt");
    let poses = if poses_path.is_file() {
        let p = parse_poses(&poses_path, &read_to_string(&poses_path)?)?;
        if p.len() != scans.len() {
            return Err(format_err(&poses_path, format!("expected {} poses, found {}", scans.len(), p.len())));
        }
        Some(p)
    } else {
        None
    };
    log::info!("loaded {} scans, {} frames from {}", scans.len(), frames.len(), root.display());
    Ok(Dataset { scans, frames, calibration, poses, dropped })
}

/// Writes `dataset` in the directory layout read by [`load_dataset`].
pub fn write_dataset(root: &Path, dataset: &Dataset) -> Result<()> {
    for (k, scan) in dataset.scans.iter().enumerate() {
        write_scan(&root.join("scans").join(format!("{k:06}.bin")), scan)?;
    }
    for (k, frame) in dataset.frames.iter().enumerate() {
        write_image(&root.join("images").join(format!("{k:06}.png")), &frame.image)?;
    }
    write_bytes(&root.join("calib.txt"), format_calibration(&dataset.calibration).as_bytes())?;
    let times: String = dataset.frames.iter().map(|f| format!("{}\n", f.timestamp)).collect();
    write_bytes(&root.join("times.txt"), times.as_bytes())?;
    if let Some(poses) = &dataset.poses {
        write_bytes(&root.join("poses.txt"), format_poses(poses).as_bytes())?;
    }
    Ok(())
}

/// Binary little-endian PLY with double coordinates and optional 8-bit
/// gray vertex colors.
pub fn write_ply(path: &Path, mesh: &TriangleMesh, colors: Option<&[f64]>) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(b"ply\nformat binary_little_endian 1.0\n");
    out.extend_from_slice(format!("element vertex {}\n", mesh.vertices().len()).as_bytes());
    out.extend_from_slice(b"property double x\nproperty double y\nproperty double z\n");
    if colors.is_some() {
        out.extend_from_slice(b"property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    out.extend_from_slice(format!("element face {}\n", mesh.faces().len()).as_bytes());
    out.extend_from_slice(b"property list uchar uint vertex_indices\nend_header\n");
    for (i, v) in mesh.vertices().iter().enumerate() {
        for c in v.iter() {
            out.extend_from_slice(&c.to_le_bytes());
        }
        if let Some(colors) = colors {
            let g = (colors[i].clamp(0.0, 1.0) * 255.0).round() as u8;
            out.extend_from_slice(&[g, g, g]);
        }
    }
    for f in mesh.faces() {
        out.push(3);
        for &i in f {
            out.extend_from_slice(&(i as u32).to_le_bytes());
        }
    }
    write_bytes(path, &out)
}

pub fn write_cloud_ply(path: &Path, points: &[Point3]) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(b"ply\nformat binary_little_endian 1.0\n");
    out.extend_from_slice(format!("element vertex {}\n", points.len()).as_bytes());
    out.extend_from_slice(b"property double x\nproperty double y\nproperty double z\nend_header\n");
    for p in points {
        for c in p.iter() {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    write_bytes(path, &out)
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
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

/// Vertices and faces of an ascii or binary little-endian PLY file.
pub fn read_ply(path: &Path) -> Result<(Vec<Point3>, Vec<[usize; 3]>)> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let end = b"end_header\n";
    let header_len = bytes
        .windows(end.len())
        .position(|w| w == end)
        .map(|p| p + end.len())
        .ok_or_else(|| format_err(path, "missing end_header"))?;
    let header = std::str::from_utf8(&bytes[..header_len]).map_err(|_| format_err(path, "header is not text"))?;
    let mut binary = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in header.lines() {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["format", "ascii", ..] => binary = Some(false),
            ["format", "binary_little_endian", ..] => binary = Some(true),
            ["format", other, ..] => return Err(format_err(path, format!("unsupported format {other}"))),
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| format_err(path, "bad element count"))?,
                properties: Vec::new(),
            }),
            ["property", "list", c, i, name] => {
                let (c, i) = (Scalar::parse(c), Scalar::parse(i));
                let (Some(c), Some(i), Some(e)) = (c, i, elements.last_mut()) else {
                    return Err(format_err(path, format!("bad property line {line:?}")));
                };
                e.properties.push(Property::List(name.to_string(), c, i));
            }
            ["property", ty, name] => {
                let (Some(s), Some(e)) = (Scalar::parse(ty), elements.last_mut()) else {
                    return Err(format_err(path, format!("bad property line {line:?}")));
                };
                e.properties.push(Property::Scalar(name.to_string(), s));
            }
            _ => {}
        }
    }
    let binary = binary.ok_or_else(|| format_err(path, "missing format line"))?;
    let body = &bytes[header_len..];
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let truncated = || format_err(path, "truncated body");
    if binary {
        let mut at = 0usize;
        let mut take = |s: Scalar| -> Result<f64> {
            let b = body.get(at..at + s.size()).ok_or_else(truncated)?;
            at += s.size();
            Ok(s.read(b))
        };
        for e in &elements {
            for _ in 0..e.count {
                let mut xyz = [0.0; 3];
                for p in &e.properties {
                    match p {
                        Property::Scalar(name, s) => {
                            let v = take(*s)?;
                            if let Some(k) = ["x", "y", "z"].iter().position(|n| n == name) {
                                xyz[k] = v;
                            }
                        }
                        Property::List(name, c, i) => {
                            let n = take(*c)? as usize;
                            let idx = (0..n).map(|_| take(*i).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
                            if e.name == "face" && name.starts_with("vertex_ind") {
                                fan(&idx, &mut faces);
                            }
                        }
                    }
                }
                if e.name == "vertex" {
                    vertices.push(Point3::from(xyz));
                }
            }
        }
    } else {
        let text = std::str::from_utf8(body).map_err(|_| format_err(path, "body is not text"))?;
        let mut tokens = text.split_whitespace();
        let mut next = || -> Result<f64> {
            let t = tokens.next().ok_or_else(truncated)?;
            t.parse().map_err(|_| format_err(path, format!("not a number: {t:?}")))
        };
        for e in &elements {
            for _ in 0..e.count {
                let mut xyz = [0.0; 3];
                for p in &e.properties {
                    match p {
                        Property::Scalar(name, _) => {
                            let v = next()?;
                            if let Some(k) = ["x", "y", "z"].iter().position(|n| n == name) {
                                xyz[k] = v;
                            }
                        }
                        Property::List(name, _, _) => {
                            let n = next()? as usize;
                            let idx = (0..n).map(|_| next().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
                            if e.name == "face" && name.starts_with("vertex_ind") {
                                fan(&idx, &mut faces);
                            }
                        }
                    }
                }
                if e.name == "vertex" {
                    vertices.push(Point3::from(xyz));
                }
            }
        }
    }
    Ok((vertices, faces))
}

fn fan(polygon: &[usize], faces: &mut Vec<[usize; 3]>) {
    for k in 1..polygon.len().saturating_sub(1) {
        faces.push([polygon[0], polygon[k], polygon[k + 1]]);
    }
}

pub fn read_mesh_ply(path: &Path) -> Result<TriangleMesh> {
    let (v, f) = read_ply(path)?;
    TriangleMesh::new(v, f).map_err(|e| format_err(path, e.to_string()))
}

/// Reference cloud from a PLY file (vertices) or a whitespace-separated
/// text file with x y z in the first three columns.
pub fn read_cloud(path: &Path) -> Result<Vec<Point3>> {
    if path.extension().and_then(|e| e.to_str()) == Some("ply") {
        return Ok(read_ply(path)?.0);
    }
    let text = read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(n, l)| {
            let v = parse_floats(l).map_err(|m| format_err(path, format!("line {}: {m}", n + 1)))?;
            if v.len() < 3 {
                return Err(format_err(path, format!("line {}: expected x y z", n + 1)));
            }
            Ok(Point3::new(v[0], v[1], v[2]))
        })
        .collect()
}

/// Wavefront OBJ reader for triangle and polygon faces (`v` and `f` only).
pub fn read_obj(path: &Path) -> Result<TriangleMesh> {
    let text = read_to_string(path)?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let mut t = line.split_whitespace();
        match t.next() {
            Some("v") => {
                let v = parse_floats(&t.take(3).collect::<Vec<_>>().join(" "))
                    .map_err(|m| format_err(path, format!("line {}: {m}", n + 1)))?;
                if v.len() != 3 {
                    return Err(format_err(path, format!("line {}: vertex needs 3 coordinates", n + 1)));
                }
                vertices.push(Point3::new(v[0], v[1], v[2]));
            }
            Some("f") => {
                let idx = t
                    .map(|tok| {
                        let i: i64 = tok
                            .split('/')
                            .next()
                            .and_then(|s| s.parse().ok())
                            .ok_or_else(|| format_err(path, format!("line {}: bad face index {tok:?}", n + 1)))?;
                        let resolved = if i < 0 { vertices.len() as i64 + i } else { i - 1 };
                        usize::try_from(resolved).map_err(|_| format_err(path, format!("line {}: bad face index", n + 1)))
                    })
                    .collect::<Result<Vec<_>>>()?;
                fan(&idx, &mut faces);
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, faces).map_err(|e| format_err(path, e.to_string()))
}

pub fn write_obj(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    let mut s = String::new();
    for v in mesh.vertices() {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for f in mesh.faces() {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    write_bytes(path, s.as_bytes())
}

/// Writes `<stem>.obj`, `<stem>.mtl` and `<stem>.png` into `dir`, with one
/// texture chart per face.
pub fn write_textured_obj(dir: &Path, stem: &str, mesh: &TriangleMesh, atlas: &PackedAtlas) -> Result<()> {
    let obj_path = dir.join(format!("{stem}.obj"));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut w = BufWriter::new(fs::File::create(&obj_path).map_err(io_err(&obj_path))?);
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "mtllib {stem}.mtl")?;
        for v in mesh.vertices() {
            writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
        }
        for uv in &atlas.uvs {
            for [u, v] in uv {
                writeln!(w, "vt {u} {v}")?;
            }
        }
        writeln!(w, "usemtl atlas")?;
        for (k, f) in mesh.faces().iter().enumerate() {
            let t = 3 * k + 1;
            writeln!(w, "f {}/{} {}/{} {}/{}", f[0] + 1, t, f[1] + 1, t + 1, f[2] + 1, t + 2)?;
        }
        w.flush()
    };
    body().map_err(io_err(&obj_path))?;
    let mtl = format!("newmtl atlas\nKa 1 1 1\nKd 1 1 1\nmap_Kd {stem}.png\n");
    write_bytes(&dir.join(format!("{stem}.mtl")), mtl.as_bytes())?;
    write_image(&dir.join(format!("{stem}.png")), &atlas.image)
}
