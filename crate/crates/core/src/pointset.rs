//! Oriented point extraction from a trained scene, triangle meshes, and
//! PLY/OBJ reading and writing.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{backproject_pixels, subsample_indices, OrientedPointCloud};
use crate::raster::render;
use crate::scene::{Camera, GaussianScene};

/// Pixels at or below this accumulated alpha are not back-projected.
pub const ALPHA_GATE: f64 = 0.5;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
    pub normals: Option<Vec<[f64; 3]>>,
    /// Zero-area faces (and polygons with fewer than 3 corners) dropped on
    /// construction.
    pub dropped_faces: usize,
}

fn sub(a: &[f64; 3], b: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0] - b[0], a[1] - b[1], a[2] - b[2])
}

impl TriangleMesh {
    /// Fan-triangulates `polygons`, checks indices and drops degenerate
    /// faces.
    pub fn from_polygons(vertices: Vec<[f64; 3]>, polygons: &[Vec<usize>]) -> Result<Self> {
        if polygons.is_empty() {
            return Err(Error::NoFaces);
        }
        if let Some(i) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite(format!("vertex {i}")));
        }
        let mut mesh = TriangleMesh {
            vertices,
            ..Default::default()
        };
        for poly in polygons {
            if let Some(&bad) = poly.iter().find(|&&i| i >= mesh.vertices.len()) {
                return Err(Error::InvalidArgument(format!(
                    "face index {bad} out of range for {} vertices",
                    mesh.vertices.len()
                )));
            }
            if poly.len() < 3 {
                mesh.dropped_faces += 1;
                continue;
            }
            for k in 1..poly.len() - 1 {
                let f = [poly[0], poly[k], poly[k + 1]];
                if mesh.triangle_area(&f) > 0.0 {
                    mesh.faces.push(f);
                } else {
                    mesh.dropped_faces += 1;
                }
            }
        }
        Ok(mesh)
    }

    fn triangle_area(&self, f: &[usize; 3]) -> f64 {
        let [a, b, c] = f.map(|i| self.vertices[i]);
        0.5 * sub(&b, &a).cross(&sub(&c, &a)).norm()
    }

    pub fn face_area(&self, i: usize) -> f64 {
        self.triangle_area(&self.faces[i])
    }

    /// Unit normal of face `i` following its winding.
    pub fn face_normal(&self, i: usize) -> [f64; 3] {
        let [a, b, c] = self.faces[i].map(|k| self.vertices[k]);
        let n = sub(&b, &a).cross(&sub(&c, &a)).normalize();
        [n.x, n.y, n.z]
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|i| self.face_area(i)).sum()
    }
}

/// Renders depth, normals and color from each camera, back-projects pixels
/// with alpha above [`ALPHA_GATE`], and draws a seeded uniform subsample of
/// at most `total` points from the pooled set.
pub fn extract_oriented_points(
    scene: &GaussianScene,
    cameras: &[Camera],
    total: usize,
    seed: u64,
) -> Result<OrientedPointCloud> {
    if total == 0 {
        return Err(Error::InvalidArgument("total must be at least 1".into()));
    }
    let views: Vec<Result<Option<OrientedPointCloud>>> = cameras
        .par_iter()
        .map(|cam| {
            let buffers = render(scene, cam)?;
            let mut gated = buffers.depth.clone();
            for (d, a) in gated.as_mut_slice().iter_mut().zip(buffers.alpha.as_slice()) {
                if *a <= ALPHA_GATE {
                    *d = 0.0;
                }
            }
            match backproject_pixels(&gated, cam, 1, Some(&buffers.normal)) {
                Ok(b) => {
                    let colors = b.pixels.iter().map(|&p| buffers.color.as_slice()[p]).collect();
                    let mut cloud = b.cloud;
                    cloud.colors = Some(colors);
                    Ok(Some(cloud))
                }
                Err(Error::EmptyCloud) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut pooled = OrientedPointCloud {
        colors: Some(Vec::new()),
        ..Default::default()
    };
    for view in views {
        if let Some(c) = view? {
            pooled.positions.extend(c.positions);
            pooled.normals.extend(c.normals);
            if let (Some(all), Some(cs)) = (pooled.colors.as_mut(), c.colors) {
                all.extend(cs);
            }
        }
    }
    if pooled.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = subsample_indices(&mut rng, pooled.len(), total);
    Ok(pooled.select(&idx))
}

// ---------------------------------------------------------------------------
// PLY

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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

    fn is_integer(self) -> bool {
        !matches!(self, Self::F32 | Self::F64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLe,
    BinaryBe,
}

#[derive(Clone, Copy, Debug)]
enum PropKind {
    Scalar(Scalar),
    List(Scalar, Scalar),
}

#[derive(Clone, Debug)]
struct Property {
    name: String,
    kind: PropKind,
}

#[derive(Clone, Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

#[derive(Debug)]
enum Column {
    Scalar(Vec<f64>),
    List(Vec<Vec<f64>>),
}

#[derive(Debug)]
struct ElementData {
    name: String,
    props: Vec<Property>,
    columns: Vec<Column>,
}

impl ElementData {
    fn find(&self, name: &str) -> Option<(&Property, &Column)> {
        self.props
            .iter()
            .zip(&self.columns)
            .find(|(p, _)| p.name == name)
    }

    fn scalar(&self, name: &str) -> Option<&[f64]> {
        match self.find(name)? {
            (_, Column::Scalar(v)) => Some(v),
            _ => None,
        }
    }
}

fn parse_header(bytes: &[u8]) -> Result<(Format, Vec<Element>, usize)> {
    let mut offset = 0;
    let mut lines = Vec::new();
    loop {
        let Some(len) = bytes[offset..].iter().position(|&b| b == b'\n') else {
            return Err(Error::parse(offset, "header is not terminated by end_header"));
        };
        let line = std::str::from_utf8(&bytes[offset..offset + len])
            .map_err(|_| Error::parse(offset, "header is not valid UTF-8"))?
            .trim_end_matches('\r');
        lines.push((offset, line));
        offset += len + 1;
        if line == "end_header" {
            break;
        }
    }
    if lines[0].1 != "ply" {
        return Err(Error::parse(0, "missing 'ply' magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    for &(at, line) in &lines[1..lines.len() - 1] {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", f, _version] => {
                format = Some(match *f {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLe,
                    "binary_big_endian" => Format::BinaryBe,
                    other => return Err(Error::parse(at, format!("unknown format {other:?}"))),
                });
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| Error::parse(at, format!("bad element count {count:?}")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            ["property", "list", ct, it, name] => {
                let (Some(ct), Some(it)) = (Scalar::parse(ct), Scalar::parse(it)) else {
                    return Err(Error::parse(at, format!("bad list property {line:?}")));
                };
                if !ct.is_integer() {
                    return Err(Error::parse(at, "list count type must be an integer"));
                }
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(at, "property before any element"))?;
                el.props.push(Property {
                    name: name.to_string(),
                    kind: PropKind::List(ct, it),
                });
            }
            ["property", ty, name] => {
                let ty = Scalar::parse(ty)
                    .ok_or_else(|| Error::parse(at, format!("unknown property type {ty:?}")))?;
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(at, "property before any element"))?;
                el.props.push(Property {
                    name: name.to_string(),
                    kind: PropKind::Scalar(ty),
                });
            }
            _ => return Err(Error::parse(at, format!("unrecognized header line {line:?}"))),
        }
    }
    let format = format.ok_or_else(|| Error::parse(0, "missing format line"))?;
    Ok((format, elements, offset))
}

struct BinaryReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    big_endian: bool,
}

impl BinaryReader<'_> {
    fn read(&mut self, ty: Scalar) -> Result<f64> {
        let n = ty.size();
        if self.pos + n > self.bytes.len() {
            return Err(Error::parse(self.pos, "unexpected end of data"));
        }
        let mut buf = [0u8; 8];
        buf[..n].copy_from_slice(&self.bytes[self.pos..self.pos + n]);
        if self.big_endian {
            buf[..n].reverse();
        }
        self.pos += n;
        Ok(match ty {
            Scalar::I8 => buf[0] as i8 as f64,
            Scalar::U8 => buf[0] as f64,
            Scalar::I16 => i16::from_le_bytes([buf[0], buf[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([buf[0], buf[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(buf),
        })
    }
}

struct AsciiReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl AsciiReader<'_> {
    fn token(&mut self) -> Result<(usize, &str)> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::parse(start, "unexpected end of data"));
        }
        let s = std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::parse(start, "invalid UTF-8 in ASCII body"))?;
        Ok((start, s))
    }

    fn read(&mut self, ty: Scalar) -> Result<f64> {
        let (at, tok) = self.token()?;
        let v: f64 = tok
            .parse()
            .map_err(|_| Error::parse(at, format!("bad number {tok:?}")))?;
        if ty.is_integer() && v.fract() != 0.0 {
            return Err(Error::parse(at, format!("expected an integer, got {tok:?}")));
        }
        Ok(v)
    }

    fn at_end(&mut self) -> bool {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        self.pos == self.bytes.len()
    }
}

fn parse_ply(bytes: &[u8]) -> Result<Vec<ElementData>> {
    let (format, elements, body) = parse_header(bytes)?;
    let mut bin = BinaryReader {
        bytes,
        pos: body,
        big_endian: format == Format::BinaryBe,
    };
    let mut ascii = AsciiReader { bytes, pos: body };
    let mut read = |ty: Scalar| -> Result<f64> {
        match format {
            Format::Ascii => ascii.read(ty),
            _ => bin.read(ty),
        }
    };
    let mut out = Vec::with_capacity(elements.len());
    for el in elements {
        let mut columns: Vec<Column> = el
            .props
            .iter()
            .map(|p| match p.kind {
                PropKind::Scalar(_) => Column::Scalar(Vec::with_capacity(el.count)),
                PropKind::List(..) => Column::List(Vec::with_capacity(el.count)),
            })
            .collect();
        for _ in 0..el.count {
            for (p, col) in el.props.iter().zip(columns.iter_mut()) {
                match (p.kind, col) {
                    (PropKind::Scalar(ty), Column::Scalar(v)) => v.push(read(ty)?),
                    (PropKind::List(ct, it), Column::List(v)) => {
                        let n = read(ct)?;
                        if n < 0.0 {
                            return Err(Error::parse(body, "negative list length"));
                        }
                        let items = (0..n as usize).map(|_| read(it)).collect::<Result<_>>()?;
                        v.push(items);
                    }
                    _ => unreachable!("columns mirror properties"),
                }
            }
        }
        out.push(ElementData {
            name: el.name,
            props: el.props,
            columns,
        });
    }
    let trailing = match format {
        Format::Ascii => (!ascii.at_end()).then_some(ascii.pos),
        _ => (bin.pos != bytes.len()).then_some(bin.pos),
    };
    if let Some(at) = trailing {
        return Err(Error::parse(at, "data beyond the declared element counts"));
    }
    Ok(out)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn require<'a>(el: &'a ElementData, name: &str) -> Result<&'a [f64]> {
    el.scalar(name).ok_or_else(|| {
        Error::parse(0, format!("element {:?} lacks scalar property {name:?}", el.name))
    })
}

fn triples(el: &ElementData, names: [&str; 3]) -> Result<Vec<[f64; 3]>> {
    let [a, b, c] = [require(el, names[0])?, require(el, names[1])?, require(el, names[2])?];
    Ok((0..a.len()).map(|i| [a[i], b[i], c[i]]).collect())
}

/// Reads an oriented point cloud from an ASCII or binary PLY file. The
/// vertex element must carry `x y z nx ny nz`; `red green blue` are
/// optional (8-bit values are scaled to [0, 1]).
pub fn read_ply(path: impl AsRef<Path>) -> Result<OrientedPointCloud> {
    let elements = parse_ply(&read_bytes(path.as_ref())?)?;
    let vertex = elements
        .iter()
        .find(|e| e.name == "vertex")
        .ok_or_else(|| Error::parse(0, "no vertex element"))?;
    let positions = triples(vertex, ["x", "y", "z"])?;
    let normals = triples(vertex, ["nx", "ny", "nz"])?;
    let colors = match vertex.find("red") {
        Some((p, _)) => {
            let range = match p.kind {
                PropKind::Scalar(Scalar::U8) => 255.0,
                _ => 1.0,
            };
            let c = triples(vertex, ["red", "green", "blue"])?;
            Some(c.into_iter().map(|v| v.map(|x| x / range)).collect())
        }
        None => None,
    };
    Ok(OrientedPointCloud {
        positions,
        normals,
        colors,
    })
}

fn to_u8(c: f64) -> u8 {
    (c * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Writes a binary little-endian PLY with 32-bit float positions and
/// normals, plus 8-bit colors when present.
pub fn write_ply(cloud: &OrientedPointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n",
        cloud.len()
    );
    for p in ["x", "y", "z", "nx", "ny", "nz"] {
        header += &format!("property float {p}\n");
    }
    if cloud.colors.is_some() {
        header += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    }
    header += "end_header\n";
    w.write_all(header.as_bytes()).map_err(io)?;
    for i in 0..cloud.len() {
        for v in cloud.positions[i].iter().chain(&cloud.normals[i]) {
            w.write_all(&(*v as f32).to_le_bytes()).map_err(io)?;
        }
        if let Some(c) = &cloud.colors {
            w.write_all(&c[i].map(to_u8)).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Writes a binary little-endian PLY mesh (float vertices, int index lists).
pub fn write_mesh_ply(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\n\
         property float y\nproperty float z\nelement face {}\n\
         property list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.faces.len()
    );
    w.write_all(header.as_bytes()).map_err(io)?;
    for v in &mesh.vertices {
        for c in v {
            w.write_all(&(*c as f32).to_le_bytes()).map_err(io)?;
        }
    }
    for f in &mesh.faces {
        w.write_all(&[3]).map_err(io)?;
        for &i in f {
            w.write_all(&(i as i32).to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

fn mesh_from_ply(bytes: &[u8]) -> Result<TriangleMesh> {
    let elements = parse_ply(bytes)?;
    let vertex = elements
        .iter()
        .find(|e| e.name == "vertex")
        .ok_or_else(|| Error::parse(0, "no vertex element"))?;
    let vertices = triples(vertex, ["x", "y", "z"])?;
    let normals = triples(vertex, ["nx", "ny", "nz"]).ok();
    let faces = elements
        .iter()
        .find(|e| e.name == "face")
        .and_then(|e| {
            e.find("vertex_indices")
                .or_else(|| e.find("vertex_index"))
                .map(|(_, c)| c)
        });
    let polygons: Vec<Vec<usize>> = match faces {
        Some(Column::List(lists)) => lists
            .iter()
            .map(|l| l.iter().map(|&i| i as usize).collect())
            .collect(),
        _ => return Err(Error::NoFaces),
    };
    let mut mesh = TriangleMesh::from_polygons(vertices, &polygons)?;
    mesh.normals = normals;
    Ok(mesh)
}

fn mesh_from_obj(bytes: &[u8]) -> Result<TriangleMesh> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::parse(e.valid_up_to(), "invalid UTF-8"))?;
    let mut vertices = Vec::new();
    let mut polygons = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let at = offset;
        offset += line.len();
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let mut v = [0.0; 3];
                for c in v.iter_mut() {
                    let t = tok.next().ok_or_else(|| Error::parse(at, "vertex needs 3 coordinates"))?;
                    *c = t
                        .parse()
                        .map_err(|_| Error::parse(at, format!("bad coordinate {t:?}")))?;
                }
                vertices.push(v);
            }
            Some("f") => {
                let mut poly = Vec::new();
                for t in tok {
                    let first = t.split('/').next().unwrap_or("");
                    let i: i64 = first
                        .parse()
                        .map_err(|_| Error::parse(at, format!("bad face index {t:?}")))?;
                    let idx = if i > 0 {
                        i - 1
                    } else if i < 0 {
                        vertices.len() as i64 + i
                    } else {
                        return Err(Error::parse(at, "face index 0 is invalid"));
                    };
                    if idx < 0 {
                        return Err(Error::parse(at, format!("face index {i} out of range")));
                    }
                    poly.push(idx as usize);
                }
                polygons.push(poly);
            }
            _ => {}
        }
    }
    TriangleMesh::from_polygons(vertices, &polygons)
}

/// Reads a triangle mesh from PLY (ASCII or binary) or OBJ. Polygons are
/// fan-triangulated and zero-area faces dropped.
pub fn read_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let bytes = read_bytes(path.as_ref())?;
    if bytes.starts_with(b"ply") {
        mesh_from_ply(&bytes)
    } else {
        mesh_from_obj(&bytes)
    }
}
