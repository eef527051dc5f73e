//! Shape file I/O: OBJ, PLY (ascii and binary little-endian) and XYZ.
//!
//! 8-bit colors are mapped to `[-1, 1]` on load via `c' = 2 c / 255 - 1`
//! and back on export via `c8 = round(255 (c + 1) / 2)`, clamped.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Shape, TriMesh};
use crate::math::Vec3;
use crate::num::Real;

/// Map an 8-bit color channel into `[-1, 1]`.
#[inline]
pub fn color_from_u8<T: Real>(c: f64) -> T {
    T::of(2.0 * (c / 255.0) - 1.0)
}

/// Map a `[-1, 1]` color channel to 8 bits, clamped.
#[inline]
pub fn color_to_u8<T: Real>(c: T) -> u8 {
    let v = (255.0 * (c.to_f64_lossy() + 1.0) / 2.0).round();
    v.clamp(0.0, 255.0) as u8
}

fn parse_err(path: &Path, location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        location: location.into(),
        message: message.into(),
    }
}

/// Load a shape, picking the format from the file extension
/// (`.obj`, `.ply`, `.xyz`).
pub fn load_shape<T: Real>(path: &Path) -> Result<Shape<T>> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "obj" => load_obj(path),
        "ply" => load_ply(path),
        "xyz" => load_xyz(path),
        other => Err(Error::Unsupported(format!(
            "unknown shape format '.{other}' for {}",
            path.display()
        ))),
    }
}

// ---------------------------------------------------------------------------
// OBJ

/// Wavefront OBJ. Only `v` and `f` records are used; polygons are
/// fan-triangulated; an OBJ without faces loads as a point cloud.
pub fn load_obj<T: Real>(path: &Path) -> Result<Shape<T>> {
    let text = std::fs::read_to_string(path)?;
    let mut vertices: Vec<Vec3<T>> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let loc = || format!("line {}", lineno + 1);
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let mut coords = [0.0f64; 3];
                for c in &mut coords {
                    let t = tok
                        .next()
                        .ok_or_else(|| parse_err(path, loc(), "vertex needs 3 coordinates"))?;
                    *c = t
                        .parse()
                        .map_err(|_| parse_err(path, loc(), format!("bad coordinate '{t}'")))?;
                }
                vertices.push(Vec3::new(T::of(coords[0]), T::of(coords[1]), T::of(coords[2])));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for t in tok {
                    let first = t.split('/').next().unwrap_or("");
                    let i: i64 = first
                        .parse()
                        .map_err(|_| parse_err(path, loc(), format!("bad face index '{t}'")))?;
                    let resolved = if i > 0 {
                        i - 1
                    } else if i < 0 {
                        vertices.len() as i64 + i
                    } else {
                        return Err(parse_err(path, loc(), "face index 0 is not allowed"));
                    };
                    if resolved < 0 || resolved >= vertices.len() as i64 {
                        return Err(parse_err(
                            path,
                            loc(),
                            format!("face index {i} out of range for {} vertices", vertices.len()),
                        ));
                    }
                    idx.push(resolved as u32);
                }
                if idx.len() < 3 {
                    return Err(parse_err(path, loc(), "face needs at least 3 indices"));
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {} // normals, texcoords, groups, materials: ignored
        }
    }

    if triangles.is_empty() {
        Ok(Shape::Cloud(PointCloud::new(vertices)))
    } else {
        Ok(Shape::Mesh(TriMesh { vertices, triangles }))
    }
}

// ---------------------------------------------------------------------------
// PLY

#[derive(Clone, Copy, PartialEq, Debug)]
enum PlyType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl PlyType {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "char" | "int8" => Some(PlyType::I8),
            "uchar" | "uint8" => Some(PlyType::U8),
            "short" | "int16" => Some(PlyType::I16),
            "ushort" | "uint16" => Some(PlyType::U16),
            "int" | "int32" => Some(PlyType::I32),
            "uint" | "uint32" => Some(PlyType::U32),
            "float" | "float32" => Some(PlyType::F32),
            "double" | "float64" => Some(PlyType::F64),
            _ => None,
        }
    }

    fn size(self) -> usize {
        match self {
            PlyType::I8 | PlyType::U8 => 1,
            PlyType::I16 | PlyType::U16 => 2,
            PlyType::I32 | PlyType::U32 | PlyType::F32 => 4,
            PlyType::F64 => 8,
        }
    }

    fn read_le(self, buf: &[u8]) -> f64 {
        match self {
            PlyType::I8 => buf[0] as i8 as f64,
            PlyType::U8 => buf[0] as f64,
            PlyType::I16 => i16::from_le_bytes([buf[0], buf[1]]) as f64,
            PlyType::U16 => u16::from_le_bytes([buf[0], buf[1]]) as f64,
            PlyType::I32 => i32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            PlyType::U32 => u32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            PlyType::F32 => f32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            PlyType::F64 => f64::from_le_bytes(buf[..8].try_into().unwrap()),
        }
    }
}

#[derive(Clone, Debug)]
struct PlyProperty {
    name: String,
    ty: PlyType,
    /// Count type for list properties.
    list: Option<PlyType>,
}

#[derive(Clone, Debug)]
struct PlyElement {
    name: String,
    count: usize,
    props: Vec<PlyProperty>,
}

struct PlyHeader {
    ascii: bool,
    elements: Vec<PlyElement>,
    body_start: usize,
    header_lines: usize,
}

fn parse_ply_header(path: &Path, bytes: &[u8]) -> Result<PlyHeader> {
    let mut ascii = None;
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut offset = 0usize;
    let mut lineno = 0usize;

    loop {
        let rest = &bytes[offset..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| parse_err(path, format!("byte {offset}"), "unterminated header"))?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| parse_err(path, format!("byte {offset}"), "non-utf8 header line"))?
            .trim_end_matches('\r')
            .trim();
        offset += nl + 1;
        lineno += 1;
        let loc = || format!("line {lineno}");

        if lineno == 1 {
            if line != "ply" {
                return Err(parse_err(path, loc(), "missing 'ply' magic"));
            }
            continue;
        }
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("comment") | Some("obj_info") | None => {}
            Some("format") => match tok.next() {
                Some("ascii") => ascii = Some(true),
                Some("binary_little_endian") => ascii = Some(false),
                Some(other) => {
                    return Err(parse_err(path, loc(), format!("unsupported format '{other}'")))
                }
                None => return Err(parse_err(path, loc(), "format line truncated")),
            },
            Some("element") => {
                let name = tok
                    .next()
                    .ok_or_else(|| parse_err(path, loc(), "element needs a name"))?;
                let count: usize = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| parse_err(path, loc(), "element needs a count"))?;
                elements.push(PlyElement { name: name.into(), count, props: Vec::new() });
            }
            Some("property") => {
                let elem = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, loc(), "property before any element"))?;
                let first = tok
                    .next()
                    .ok_or_else(|| parse_err(path, loc(), "property line truncated"))?;
                if first == "list" {
                    let count_ty = tok
                        .next()
                        .and_then(PlyType::parse)
                        .ok_or_else(|| parse_err(path, loc(), "bad list count type"))?;
                    let item_ty = tok
                        .next()
                        .and_then(PlyType::parse)
                        .ok_or_else(|| parse_err(path, loc(), "bad list item type"))?;
                    let name = tok
                        .next()
                        .ok_or_else(|| parse_err(path, loc(), "list property needs a name"))?;
                    elem.props.push(PlyProperty {
                        name: name.into(),
                        ty: item_ty,
                        list: Some(count_ty),
                    });
                } else {
                    let ty = PlyType::parse(first)
                        .ok_or_else(|| parse_err(path, loc(), format!("bad type '{first}'")))?;
                    let name = tok
                        .next()
                        .ok_or_else(|| parse_err(path, loc(), "property needs a name"))?;
                    elem.props.push(PlyProperty { name: name.into(), ty, list: None });
                }
            }
            Some("end_header") => {
                let ascii = ascii
                    .ok_or_else(|| parse_err(path, loc(), "end_header before format line"))?;
                return Ok(PlyHeader { ascii, elements, body_start: offset, header_lines: lineno });
            }
            Some(other) => {
                return Err(parse_err(path, loc(), format!("unknown header keyword '{other}'")))
            }
        }
    }
}

/// One parsed element row: scalar values per property; lists expanded inline.
type PlyRow = Vec<Vec<f64>>;

pub fn load_ply<T: Real>(path: &Path) -> Result<Shape<T>> {
    let bytes = std::fs::read(path)?;
    let header = parse_ply_header(path, &bytes)?;

    let mut vertices: Vec<Vec3<T>> = Vec::new();
    let mut colors: Vec<Vec3<T>> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    let mut has_colors = false;

    // Streaming cursor over the body, ascii or binary.
    let mut offset = header.body_start;
    let mut lineno = header.header_lines;
    let mut ascii_rows = if header.ascii {
        Some(
            std::str::from_utf8(&bytes[header.body_start..])
                .map_err(|_| parse_err(path, "body", "non-utf8 ascii body"))?
                .lines(),
        )
    } else {
        None
    };

    for elem in &header.elements {
        let is_vertex = elem.name == "vertex";
        let is_face = elem.name == "face";
        let (mut xi, mut yi, mut zi, mut ri, mut gi, mut bi, mut fi) =
            (None, None, None, None, None, None, None);
        for (i, p) in elem.props.iter().enumerate() {
            match p.name.as_str() {
                "x" => xi = Some(i),
                "y" => yi = Some(i),
                "z" => zi = Some(i),
                "red" => ri = Some(i),
                "green" => gi = Some(i),
                "blue" => bi = Some(i),
                "vertex_indices" | "vertex_index" => fi = Some(i),
                _ => {}
            }
        }
        if is_vertex {
            if xi.is_none() || yi.is_none() || zi.is_none() {
                return Err(parse_err(path, "header", "vertex element lacks x/y/z"));
            }
            has_colors = ri.is_some() && gi.is_some() && bi.is_some();
            if has_colors {
                for idx in [ri.unwrap(), gi.unwrap(), bi.unwrap()] {
                    if elem.props[idx].ty != PlyType::U8 {
                        return Err(parse_err(
                            path,
                            "header",
                            "only 8-bit (uchar) vertex colors are supported",
                        ));
                    }
                }
            }
        }

        for row_i in 0..elem.count {
            let row: PlyRow = if let Some(lines) = ascii_rows.as_mut() {
                lineno += 1;
                let line = lines.next().ok_or_else(|| {
                    parse_err(path, format!("line {lineno}"), "unexpected end of file")
                })?;
                parse_ascii_row(path, lineno, line, &elem.props)?
            } else {
                parse_binary_row(path, &bytes, &mut offset, &elem.props)?
            };

            if is_vertex {
                vertices.push(Vec3::new(
                    T::of(row[xi.unwrap()][0]),
                    T::of(row[yi.unwrap()][0]),
                    T::of(row[zi.unwrap()][0]),
                ));
                if has_colors {
                    colors.push(Vec3::new(
                        color_from_u8(row[ri.unwrap()][0]),
                        color_from_u8(row[gi.unwrap()][0]),
                        color_from_u8(row[bi.unwrap()][0]),
                    ));
                }
            } else if is_face {
                let fi = fi.ok_or_else(|| {
                    parse_err(path, "header", "face element lacks vertex_indices")
                })?;
                let idx = &row[fi];
                if idx.len() < 3 {
                    return Err(parse_err(
                        path,
                        format!("face {row_i}"),
                        "face needs at least 3 indices",
                    ));
                }
                let mut as_u32 = Vec::with_capacity(idx.len());
                for &v in idx {
                    if v < 0.0 || v >= vertices.len() as f64 {
                        return Err(parse_err(
                            path,
                            format!("face {row_i}"),
                            format!("vertex index {v} out of range for {}", vertices.len()),
                        ));
                    }
                    as_u32.push(v as u32);
                }
                for k in 1..as_u32.len() - 1 {
                    triangles.push([as_u32[0], as_u32[k], as_u32[k + 1]]);
                }
            }
            // other elements: row parsed and discarded
        }
    }

    if !triangles.is_empty() {
        Ok(Shape::Mesh(TriMesh { vertices, triangles }))
    } else if has_colors {
        Ok(Shape::Cloud(PointCloud { points: vertices, colors: Some(colors) }))
    } else {
        Ok(Shape::Cloud(PointCloud::new(vertices)))
    }
}

fn parse_ascii_row(
    path: &Path,
    lineno: usize,
    line: &str,
    props: &[PlyProperty],
) -> Result<PlyRow> {
    let loc = || format!("line {lineno}");
    let mut tok = line.split_whitespace();
    let mut next_num = |what: &str| -> Result<f64> {
        tok.next()
            .ok_or_else(|| parse_err(path, loc(), format!("missing {what}")))?
            .parse::<f64>()
            .map_err(|_| parse_err(path, loc(), format!("bad {what}")))
    };
    let mut row = Vec::with_capacity(props.len());
    for p in props {
        if p.list.is_some() {
            let n = next_num("list count")? as usize;
            let mut vals = Vec::with_capacity(n);
            for _ in 0..n {
                vals.push(next_num("list item")?);
            }
            row.push(vals);
        } else {
            row.push(vec![next_num(&p.name)?]);
        }
    }
    Ok(row)
}

fn parse_binary_row(
    path: &Path,
    bytes: &[u8],
    offset: &mut usize,
    props: &[PlyProperty],
) -> Result<PlyRow> {
    let mut take = |n: usize| -> Result<&[u8]> {
        if *offset + n > bytes.len() {
            return Err(parse_err(
                path,
                format!("byte {offset}"),
                "unexpected end of binary body",
            ));
        }
        let s = &bytes[*offset..*offset + n];
        *offset += n;
        Ok(s)
    };
    let mut row = Vec::with_capacity(props.len());
    for p in props {
        if let Some(count_ty) = p.list {
            let n = count_ty.read_le(take(count_ty.size())?) as usize;
            let mut vals = Vec::with_capacity(n);
            for _ in 0..n {
                vals.push(p.ty.read_le(take(p.ty.size())?));
            }
            row.push(vals);
        } else {
            row.push(vec![p.ty.read_le(take(p.ty.size())?)]);
        }
    }
    Ok(row)
}

// ---------------------------------------------------------------------------
// XYZ

/// Whitespace-separated `x y z` per line with optional trailing 8-bit
/// `r g b` columns.
pub fn load_xyz<T: Real>(path: &Path) -> Result<Shape<T>> {
    let text = std::fs::read_to_string(path)?;
    let mut points = Vec::new();
    let mut colors = Vec::new();
    let mut expects_colors: Option<bool> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let loc = || format!("line {}", lineno + 1);
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| parse_err(path, loc(), "non-numeric field"))?;
        let with_color = match vals.len() {
            3 => false,
            6 => true,
            n => return Err(parse_err(path, loc(), format!("expected 3 or 6 columns, got {n}"))),
        };
        match expects_colors {
            None => expects_colors = Some(with_color),
            Some(e) if e != with_color => {
                return Err(parse_err(path, loc(), "mixed 3- and 6-column rows"))
            }
            _ => {}
        }
        points.push(Vec3::new(T::of(vals[0]), T::of(vals[1]), T::of(vals[2])));
        if with_color {
            colors.push(Vec3::new(
                color_from_u8(vals[3]),
                color_from_u8(vals[4]),
                color_from_u8(vals[5]),
            ));
        }
    }
    let colors = if expects_colors == Some(true) { Some(colors) } else { None };
    Ok(Shape::Cloud(PointCloud { points, colors }))
}

// ---------------------------------------------------------------------------
// Exports

pub fn save_mesh_obj<T: Real>(mesh: &TriMesh<T>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for t in &mesh.triangles {
        writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    Ok(())
}

pub fn save_mesh_ply<T: Real>(mesh: &TriMesh<T>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ply\nformat ascii 1.0")?;
    writeln!(w, "element vertex {}", mesh.vertices.len())?;
    writeln!(w, "property float x\nproperty float y\nproperty float z")?;
    writeln!(w, "element face {}", mesh.triangles.len())?;
    writeln!(w, "property list uchar int vertex_indices\nend_header")?;
    for v in &mesh.vertices {
        writeln!(w, "{} {} {}", v.x, v.y, v.z)?;
    }
    for t in &mesh.triangles {
        writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    Ok(())
}

pub fn save_cloud_ply<T: Real>(cloud: &PointCloud<T>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ply\nformat ascii 1.0")?;
    writeln!(w, "element vertex {}", cloud.points.len())?;
    writeln!(w, "property float x\nproperty float y\nproperty float z")?;
    if cloud.colors.is_some() {
        writeln!(w, "property uchar red\nproperty uchar green\nproperty uchar blue")?;
    }
    writeln!(w, "end_header")?;
    match &cloud.colors {
        Some(colors) => {
            for (p, c) in cloud.points.iter().zip(colors) {
                writeln!(
                    w,
                    "{} {} {} {} {} {}",
                    p.x,
                    p.y,
                    p.z,
                    color_to_u8(c.x),
                    color_to_u8(c.y),
                    color_to_u8(c.z)
                )?;
            }
        }
        None => {
            for p in &cloud.points {
                writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
            }
        }
    }
    Ok(())
}

pub fn save_cloud_xyz<T: Real>(cloud: &PointCloud<T>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match &cloud.colors {
        Some(colors) => {
            for (p, c) in cloud.points.iter().zip(colors) {
                writeln!(
                    w,
                    "{} {} {} {} {} {}",
                    p.x,
                    p.y,
                    p.z,
                    color_to_u8(c.x),
                    color_to_u8(c.y),
                    color_to_u8(c.z)
                )?;
            }
        }
        None => {
            for p in &cloud.points {
                writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
            }
        }
    }
    Ok(())
}

/// Read a raw file by magic to decide whether it is a PLY (used by the CLI
/// to give better error messages); kept internal-friendly but harmless.
pub fn file_len(path: &Path) -> Result<u64> {
    Ok(std::fs::metadata(path)?.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(name: &str, contents: &[u8]) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("nf3d-io-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        let mut f = File::create(&path).unwrap();
        f.write_all(contents).unwrap();
        path
    }

    #[test]
    fn ply_single_red_vertex_maps_colors() {
        let ply = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n0 0 0 255 0 0\n";
        let path = write_tmp("one_red.ply", ply);
        let shape: Shape<f64> = load_ply(&path).unwrap();
        let Shape::Cloud(pc) = shape else { panic!("expected cloud") };
        assert_eq!(pc.points, vec![Vec3::zero()]);
        assert_eq!(pc.colors.unwrap()[0], Vec3::new(1.0, -1.0, -1.0));
    }

    #[test]
    fn ply_binary_little_endian_roundtrip() {
        let mut body: Vec<u8> = Vec::new();
        for v in [0.5f32, -0.25, 2.0] {
            body.extend_from_slice(&v.to_le_bytes());
        }
        body.extend_from_slice(&[10u8, 20, 30]);
        let mut file = b"ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n".to_vec();
        file.extend_from_slice(&body);
        let path = write_tmp("bin.ply", &file);
        let shape: Shape<f64> = load_ply(&path).unwrap();
        let Shape::Cloud(pc) = shape else { panic!("expected cloud") };
        assert_eq!(pc.points[0], Vec3::new(0.5, -0.25, 2.0));
        let c = pc.colors.unwrap()[0];
        assert!((c.x - (2.0 * 10.0 / 255.0 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn obj_cube_structure() {
        let obj = b"v -1 -1 -1\nv 1 -1 -1\nv 1 1 -1\nv -1 1 -1\nv -1 -1 1\nv 1 -1 1\nv 1 1 1\nv -1 1 1\n\
f 1 2 3 4\nf 5 8 7 6\nf 1 5 6 2\nf 2 6 7 3\nf 3 7 8 4\nf 5 1 4 8\n";
        let path = write_tmp("cube.obj", obj);
        let shape: Shape<f64> = load_obj(&path).unwrap();
        let Shape::Mesh(m) = shape else { panic!("expected mesh") };
        assert_eq!(m.vertices.len(), 8);
        assert_eq!(m.triangles.len(), 12); // quads fan-split
    }

    #[test]
    fn obj_out_of_range_face_index_errors() {
        let obj = b"v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n";
        let path = write_tmp("bad.obj", obj);
        let err = load_obj::<f64>(&path).unwrap_err();
        match err {
            Error::Parse { location, .. } => assert_eq!(location, "line 4"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn xyz_with_colors() {
        let xyz = b"0 0 0 255 255 255\n1 2 3 0 128 255\n";
        let path = write_tmp("pts.xyz", xyz);
        let shape: Shape<f64> = load_xyz(&path).unwrap();
        let Shape::Cloud(pc) = shape else { panic!("expected cloud") };
        assert_eq!(pc.len(), 2);
        assert_eq!(pc.colors.as_ref().unwrap()[0], Vec3::new(1.0, 1.0, 1.0));
    }

    #[test]
    fn xyz_mixed_columns_error() {
        let path = write_tmp("mixed.xyz", b"0 0 0\n1 1 1 4 5 6\n");
        assert!(matches!(load_xyz::<f64>(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn cloud_export_import_roundtrip_colors() {
        let pc = PointCloud::with_colors(
            vec![Vec3::new(0.125f64, -0.5, 0.75)],
            vec![Vec3::new(1.0, -1.0, 0.0)],
        )
        .unwrap();
        let path = write_tmp("roundtrip.ply", b"");
        save_cloud_ply(&pc, &path).unwrap();
        let Shape::Cloud(back) = load_ply::<f64>(&path).unwrap() else { panic!() };
        assert_eq!(back.points[0], pc.points[0]);
        let c = back.colors.unwrap()[0];
        assert_eq!(color_to_u8(c.x), 255);
        assert_eq!(color_to_u8(c.y), 0);
        // mid-gray channel survives within one 8-bit step
        assert!((c.z - 0.0).abs() <= 2.0 / 255.0 + 1e-12);
    }

    #[test]
    fn mesh_ply_export_reimports() {
        let mesh = TriMesh::new(
            vec![Vec3::new(0.0f64, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let path = write_tmp("tri.ply", b"");
        save_mesh_ply(&mesh, &path).unwrap();
        let Shape::Mesh(back) = load_ply::<f64>(&path).unwrap() else { panic!() };
        assert_eq!(back.triangles, mesh.triangles);
        assert_eq!(back.vertices, mesh.vertices);
    }
}
