//! PLY and OBJ mesh I/O.
//!
//! The reader accepts ASCII and binary-little-endian PLY with `x y z` float
//! coordinates, optional `red green blue` uchar colors (rescaled to [0,1]),
//! and an optional integer `label` property. The writer emits the same
//! layout; [`save_labeled_ply`] additionally colors vertices from a fixed
//! 21-entry class palette.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::mesh::{SurfaceMesh, DEFAULT_COLOR};

/// Fixed colors for predicted class ids written by [`save_labeled_ply`].
pub const LABEL_PALETTE: [[u8; 3]; 21] = [
    [174, 199, 232],
    [152, 223, 138],
    [31, 119, 180],
    [255, 187, 120],
    [188, 189, 34],
    [140, 86, 75],
    [255, 152, 150],
    [214, 39, 40],
    [197, 176, 213],
    [148, 103, 189],
    [196, 156, 148],
    [23, 190, 207],
    [247, 182, 210],
    [219, 219, 141],
    [255, 127, 14],
    [158, 218, 229],
    [44, 160, 44],
    [112, 128, 144],
    [227, 119, 194],
    [82, 84, 163],
    [100, 85, 144],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Ply,
    Obj,
}

/// Load a mesh, inferring the format from the file extension.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<SurfaceMesh> {
    let path = path.as_ref();
    let format = match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("ply") => MeshFormat::Ply,
        Some("obj") => MeshFormat::Obj,
        other => {
            return Err(Error::validation(format!(
                "cannot infer mesh format from extension {other:?} of {}",
                path.display()
            )))
        }
    };
    match format {
        MeshFormat::Ply => load_ply(path),
        MeshFormat::Obj => load_obj(path),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarKind {
    Char,
    UChar,
    Short,
    UShort,
    Int,
    UInt,
    Float,
    Double,
}

impl ScalarKind {
    fn parse(word: &str) -> Option<ScalarKind> {
        Some(match word {
            "char" | "int8" => ScalarKind::Char,
            "uchar" | "uint8" => ScalarKind::UChar,
            "short" | "int16" => ScalarKind::Short,
            "ushort" | "uint16" => ScalarKind::UShort,
            "int" | "int32" => ScalarKind::Int,
            "uint" | "uint32" => ScalarKind::UInt,
            "float" | "float32" => ScalarKind::Float,
            "double" | "float64" => ScalarKind::Double,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarKind::Char | ScalarKind::UChar => 1,
            ScalarKind::Short | ScalarKind::UShort => 2,
            ScalarKind::Int | ScalarKind::UInt | ScalarKind::Float => 4,
            ScalarKind::Double => 8,
        }
    }
}

#[derive(Debug, Clone)]
struct PlyProperty {
    name: String,
    kind: ScalarKind,
    list: Option<ScalarKind>,
}

#[derive(Debug, Clone)]
struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<PlyProperty>,
}

fn format_err(path: &Path, location: impl ToString, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        location: location.to_string(),
        msg: msg.into(),
    }
}

/// Load an ASCII or binary-little-endian PLY file.
pub fn load_ply(path: impl AsRef<Path>) -> Result<SurfaceMesh> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;

    // The header is always ASCII text terminated by an `end_header` line.
    let header_end = find_header_end(&bytes)
        .ok_or_else(|| format_err(path, "line 1", "missing end_header"))?;
    let header_text = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| format_err(path, "line 1", "header is not valid UTF-8"))?;

    let mut lines = header_text.lines().enumerate();
    let (_, magic) = lines
        .next()
        .ok_or_else(|| format_err(path, "line 1", "empty file"))?;
    if magic.trim_end() != "ply" {
        return Err(format_err(path, "line 1", "not a PLY file"));
    }

    let mut ascii = None;
    let mut elements: Vec<PlyElement> = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        let mut words = line.split_whitespace();
        let Some(keyword) = words.next() else { continue };
        match keyword {
            "comment" | "obj_info" => {}
            "format" => match words.next() {
                Some("ascii") => ascii = Some(true),
                Some("binary_little_endian") => ascii = Some(false),
                other => {
                    return Err(format_err(
                        path,
                        format!("line {line_no}"),
                        format!("unsupported format {other:?}"),
                    ))
                }
            },
            "element" => {
                let name = words.next().unwrap_or_default().to_string();
                let count: usize = words
                    .next()
                    .and_then(|w| w.parse().ok())
                    .ok_or_else(|| {
                        format_err(path, format!("line {line_no}"), "bad element count")
                    })?;
                elements.push(PlyElement {
                    name,
                    count,
                    properties: Vec::new(),
                });
            }
            "property" => {
                let element = elements.last_mut().ok_or_else(|| {
                    format_err(path, format!("line {line_no}"), "property before element")
                })?;
                let first = words.next().unwrap_or_default();
                if first == "list" {
                    let count_kind = ScalarKind::parse(words.next().unwrap_or_default());
                    let item_kind = ScalarKind::parse(words.next().unwrap_or_default());
                    let name = words.next().unwrap_or_default().to_string();
                    match (count_kind, item_kind) {
                        (Some(c), Some(i)) => element.properties.push(PlyProperty {
                            name,
                            kind: i,
                            list: Some(c),
                        }),
                        _ => {
                            return Err(format_err(
                                path,
                                format!("line {line_no}"),
                                "bad list property types",
                            ))
                        }
                    }
                } else {
                    let kind = ScalarKind::parse(first).ok_or_else(|| {
                        format_err(
                            path,
                            format!("line {line_no}"),
                            format!("unknown property type {first}"),
                        )
                    })?;
                    let name = words.next().unwrap_or_default().to_string();
                    element.properties.push(PlyProperty {
                        name,
                        kind,
                        list: None,
                    });
                }
            }
            "end_header" => break,
            other => {
                return Err(format_err(
                    path,
                    format!("line {line_no}"),
                    format!("unknown header keyword {other}"),
                ))
            }
        }
    }
    let ascii =
        ascii.ok_or_else(|| format_err(path, "line 2", "missing format declaration"))?;
    let header_lines = header_text.lines().count();

    let mut reader: Box<dyn PlyReader> = if ascii {
        let body = std::str::from_utf8(&bytes[header_end..])
            .map_err(|_| format_err(path, "ascii body", "body is not valid UTF-8"))?;
        Box::new(AsciiReader {
            words: body
                .split_whitespace()
                .map(str::to_string)
                .collect::<Vec<_>>()
                .into_iter(),
            line_hint: header_lines,
        })
    } else {
        Box::new(BinaryReader {
            bytes: &bytes,
            pos: header_end,
        })
    };

    let mut positions = Vec::new();
    let mut colors: Vec<[f64; 3]> = Vec::new();
    let mut labels: Vec<i32> = Vec::new();
    let mut has_color = false;
    let mut has_label = false;
    let mut faces = Vec::new();

    for element in &elements {
        match element.name.as_str() {
            "vertex" => {
                let find = |n: &str| element.properties.iter().position(|p| p.name == n);
                let (xi, yi, zi) = match (find("x"), find("y"), find("z")) {
                    (Some(x), Some(y), Some(z)) => (x, y, z),
                    _ => {
                        return Err(format_err(path, "header", "vertex element missing x/y/z"))
                    }
                };
                let rgb = match (find("red"), find("green"), find("blue")) {
                    (Some(r), Some(g), Some(b)) => Some((r, g, b)),
                    _ => None,
                };
                let label_idx = find("label");
                has_color = rgb.is_some();
                has_label = label_idx.is_some();
                for _ in 0..element.count {
                    let row = reader.read_row(path, &element.properties)?;
                    positions.push(Vector3::new(row[xi][0], row[yi][0], row[zi][0]));
                    if let Some((r, g, b)) = rgb {
                        colors.push([row[r][0] / 255.0, row[g][0] / 255.0, row[b][0] / 255.0]);
                    }
                    if let Some(li) = label_idx {
                        labels.push(row[li][0] as i32);
                    }
                }
            }
            "face" => {
                let list_idx = element
                    .properties
                    .iter()
                    .position(|p| {
                        p.list.is_some()
                            && (p.name == "vertex_indices" || p.name == "vertex_index")
                    })
                    .ok_or_else(|| {
                        format_err(path, "header", "face element missing vertex_indices")
                    })?;
                for fi in 0..element.count {
                    let row = reader.read_row(path, &element.properties)?;
                    let indices = &row[list_idx];
                    if indices.len() != 3 {
                        return Err(format_err(
                            path,
                            format!("face {fi}"),
                            format!("face has {} vertices, only triangles supported", indices.len()),
                        ));
                    }
                    faces.push([indices[0] as u32, indices[1] as u32, indices[2] as u32]);
                }
            }
            _ => {
                // Skip unknown elements by consuming their rows.
                for _ in 0..element.count {
                    reader.read_row(path, &element.properties)?;
                }
            }
        }
    }

    let n = positions.len();
    let colors = if has_color {
        colors
    } else {
        vec![DEFAULT_COLOR; n]
    };
    let labels = if has_label { Some(labels) } else { None };
    SurfaceMesh::new(positions, colors, labels, faces)
}

fn find_header_end(bytes: &[u8]) -> Option<usize> {
    let needle = b"end_header";
    let mut i = 0;
    while i + needle.len() <= bytes.len() {
        if &bytes[i..i + needle.len()] == needle {
            // Consume to the end of the line.
            let mut j = i + needle.len();
            while j < bytes.len() && bytes[j] != b'\n' {
                j += 1;
            }
            return Some((j + 1).min(bytes.len()));
        }
        i += 1;
    }
    None
}

trait PlyReader {
    /// One element row; each property yields one or more numeric values.
    fn read_row(&mut self, path: &Path, props: &[PlyProperty]) -> Result<Vec<Vec<f64>>>;
}

struct AsciiReader {
    words: std::vec::IntoIter<String>,
    line_hint: usize,
}

impl AsciiReader {
    fn next_value(&mut self, path: &Path) -> Result<f64> {
        let word = self.words.next().ok_or_else(|| {
            format_err(path, format!("after line {}", self.line_hint), "unexpected end of data")
        })?;
        word.parse::<f64>().map_err(|_| {
            format_err(
                path,
                format!("after line {}", self.line_hint),
                format!("not a number: {word}"),
            )
        })
    }
}

impl PlyReader for AsciiReader {
    fn read_row(&mut self, path: &Path, props: &[PlyProperty]) -> Result<Vec<Vec<f64>>> {
        let mut row = Vec::with_capacity(props.len());
        for p in props {
            if p.list.is_some() {
                let count = self.next_value(path)? as usize;
                let mut items = Vec::with_capacity(count);
                for _ in 0..count {
                    items.push(self.next_value(path)?);
                }
                row.push(items);
            } else {
                row.push(vec![self.next_value(path)?]);
            }
        }
        Ok(row)
    }
}

struct BinaryReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl BinaryReader<'_> {
    fn read_scalar(&mut self, path: &Path, kind: ScalarKind) -> Result<f64> {
        let size = kind.size();
        if self.pos + size > self.bytes.len() {
            return Err(format_err(
                path,
                format!("offset {}", self.pos),
                "unexpected end of binary data",
            ));
        }
        let b = &self.bytes[self.pos..self.pos + size];
        self.pos += size;
        Ok(match kind {
            ScalarKind::Char => b[0] as i8 as f64,
            ScalarKind::UChar => b[0] as f64,
            ScalarKind::Short => i16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarKind::UShort => u16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarKind::Int => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarKind::UInt => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarKind::Float => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarKind::Double => f64::from_le_bytes([
                b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
            ]),
        })
    }
}

impl PlyReader for BinaryReader<'_> {
    fn read_row(&mut self, path: &Path, props: &[PlyProperty]) -> Result<Vec<Vec<f64>>> {
        let mut row = Vec::with_capacity(props.len());
        for p in props {
            if let Some(count_kind) = p.list {
                let count = self.read_scalar(path, count_kind)? as usize;
                let mut items = Vec::with_capacity(count);
                for _ in 0..count {
                    items.push(self.read_scalar(path, p.kind)?);
                }
                row.push(items);
            } else {
                row.push(vec![self.read_scalar(path, p.kind)?]);
            }
        }
        Ok(row)
    }
}

/// Load an OBJ file; positions and triangular faces only.
pub fn load_obj(path: impl AsRef<Path>) -> Result<SurfaceMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut positions = Vec::new();
    let mut faces = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        let mut words = line.split_whitespace();
        match words.next() {
            Some("v") => {
                let mut coord = [0.0f64; 3];
                for c in &mut coord {
                    *c = words
                        .next()
                        .and_then(|w| w.parse().ok())
                        .ok_or_else(|| {
                            format_err(path, format!("line {line_no}"), "bad vertex coordinate")
                        })?;
                }
                positions.push(Vector3::new(coord[0], coord[1], coord[2]));
            }
            Some("f") => {
                let mut idxs = Vec::new();
                for word in words {
                    let first = word.split('/').next().unwrap_or_default();
                    let v: i64 = first.parse().map_err(|_| {
                        format_err(path, format!("line {line_no}"), "bad face index")
                    })?;
                    if v < 1 {
                        return Err(format_err(
                            path,
                            format!("line {line_no}"),
                            "face indices must be positive",
                        ));
                    }
                    idxs.push((v - 1) as u32);
                }
                if idxs.len() != 3 {
                    return Err(format_err(
                        path,
                        format!("line {line_no}"),
                        format!("face has {} vertices, only triangles supported", idxs.len()),
                    ));
                }
                faces.push([idxs[0], idxs[1], idxs[2]]);
            }
            _ => {}
        }
    }
    let n = positions.len();
    SurfaceMesh::new(positions, vec![DEFAULT_COLOR; n], None, faces)
}

fn color_to_u8(c: f64) -> u8 {
    (c * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Write the mesh in the crate's canonical PLY layout.
///
/// Positions are stored as 32-bit floats, colors as uchar, labels (when
/// present) as 32-bit ints. A mesh loaded from this writer's output
/// round-trips bit-exactly.
pub fn save_ply(mesh: &SurfaceMesh, path: impl AsRef<Path>, ascii: bool) -> Result<()> {
    write_ply(
        path.as_ref(),
        ascii,
        mesh.positions(),
        &mesh
            .colors()
            .iter()
            .map(|c| [color_to_u8(c[0]), color_to_u8(c[1]), color_to_u8(c[2])])
            .collect::<Vec<_>>(),
        mesh.labels(),
        mesh.faces(),
    )
}

/// Write a prediction PLY: one `label` property per vertex plus colors taken
/// from [`LABEL_PALETTE`]. Ids outside the palette are rejected.
pub fn save_labeled_ply(
    mesh: &SurfaceMesh,
    labels: &[i32],
    path: impl AsRef<Path>,
    ascii: bool,
) -> Result<()> {
    if labels.len() != mesh.vertex_count() {
        return Err(Error::validation(format!(
            "label count {} != vertex count {}",
            labels.len(),
            mesh.vertex_count()
        )));
    }
    let mut colors = Vec::with_capacity(labels.len());
    for &l in labels {
        let entry = usize::try_from(l)
            .ok()
            .and_then(|i| LABEL_PALETTE.get(i))
            .ok_or_else(|| {
                Error::validation(format!(
                    "class id {l} outside the {}-entry palette",
                    LABEL_PALETTE.len()
                ))
            })?;
        colors.push(*entry);
    }
    write_ply(
        path.as_ref(),
        ascii,
        mesh.positions(),
        &colors,
        Some(labels),
        mesh.faces(),
    )
}

fn write_ply(
    path: &Path,
    ascii: bool,
    positions: &[Vector3<f64>],
    colors: &[[u8; 3]],
    labels: Option<&[i32]>,
    faces: &[[u32; 3]],
) -> Result<()> {
    let mut out = Vec::new();
    let format = if ascii { "ascii" } else { "binary_little_endian" };
    write!(
        out,
        "ply\nformat {format} 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\n",
        positions.len()
    )?;
    if labels.is_some() {
        write!(out, "property int label\n")?;
    }
    write!(
        out,
        "element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        faces.len()
    )?;

    for (i, p) in positions.iter().enumerate() {
        let (x, y, z) = (p.x as f32, p.y as f32, p.z as f32);
        let c = colors[i];
        if ascii {
            write!(out, "{x} {y} {z} {} {} {}", c[0], c[1], c[2])?;
            if let Some(l) = labels {
                write!(out, " {}", l[i])?;
            }
            out.push(b'\n');
        } else {
            out.extend_from_slice(&x.to_le_bytes());
            out.extend_from_slice(&y.to_le_bytes());
            out.extend_from_slice(&z.to_le_bytes());
            out.extend_from_slice(&c);
            if let Some(l) = labels {
                out.extend_from_slice(&l[i].to_le_bytes());
            }
        }
    }
    for f in faces {
        if ascii {
            writeln!(out, "3 {} {} {}", f[0], f[1], f[2])?;
        } else {
            out.push(3u8);
            for &v in f {
                out.extend_from_slice(&(v as i32).to_le_bytes());
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str, ext: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(ext).tempfile().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn single_triangle_ascii_ply() {
        let f = write_temp(
            "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n",
            ".ply",
        );
        let mesh = load_ply(f.path()).unwrap();
        assert_eq!(mesh.vertex_count(), 3);
        assert_eq!(mesh.face_count(), 1);
        assert_eq!(mesh.one_ring(0).unwrap(), &[1, 2]);
        // No colors in the file: mid-gray default.
        assert_eq!(mesh.colors()[0], DEFAULT_COLOR);
    }

    #[test]
    fn colors_rescaled_from_uchar() {
        let f = write_temp(
            "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0 255 0 0\n1 0 0 0 255 0\n0 1 0 0 0 255\n3 0 1 2\n",
            ".ply",
        );
        let mesh = load_ply(f.path()).unwrap();
        assert_eq!(mesh.colors()[0], [1.0, 0.0, 0.0]);
        assert_eq!(mesh.colors()[1], [0.0, 1.0, 0.0]);
    }

    #[test]
    fn labels_round_trip() {
        let f = write_temp(
            "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nproperty int label\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0 4\n1 0 0 5\n0 1 0 6\n3 0 1 2\n",
            ".ply",
        );
        let mesh = load_ply(f.path()).unwrap();
        assert_eq!(mesh.labels().unwrap(), &[4, 5, 6]);
    }

    #[test]
    fn out_of_range_face_index_is_error() {
        let f = write_temp(
            "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0 0\n0 1 0\n3 0 1 9\n",
            ".ply",
        );
        assert!(load_ply(f.path()).is_err());
    }

    #[test]
    fn truncated_ascii_reports_location() {
        let f = write_temp(
            "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nelement face 0\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0\n",
            ".ply",
        );
        match load_ply(f.path()) {
            Err(Error::Format { location, .. }) => assert!(location.contains("line")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn tetrahedron_obj_is_k4() {
        let f = write_temp(
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 3 2\nf 1 2 4\nf 2 3 4\nf 1 4 3\n",
            ".obj",
        );
        let mesh = load_obj(f.path()).unwrap();
        assert_eq!(mesh.vertex_count(), 4);
        for i in 0..4 {
            assert_eq!(mesh.one_ring(i).unwrap().len(), 3);
        }
    }

    #[test]
    fn obj_face_with_slashes() {
        let f = write_temp("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1/1 2/2/2 3/3/3\n", ".obj");
        let mesh = load_obj(f.path()).unwrap();
        assert_eq!(mesh.face_count(), 1);
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        for ascii in [false, true] {
            let dir = tempfile::tempdir().unwrap();
            let p1 = dir.path().join("a.ply");
            let p2 = dir.path().join("b.ply");
            let mesh = SurfaceMesh::new(
                vec![
                    Vector3::new(0.125, -3.5, 7.25),
                    Vector3::new(1.0, 0.0, 0.1),
                    Vector3::new(0.0, 1.0, -0.7),
                ],
                vec![[1.0, 0.0, 0.0], [0.0, 0.5019607843137255, 0.0], [0.25, 0.5, 0.75]],
                Some(vec![0, 3, 20]),
                vec![[0, 1, 2]],
            )
            .unwrap();
            save_ply(&mesh, &p1, ascii).unwrap();
            let loaded = load_ply(&p1).unwrap();
            save_ply(&loaded, &p2, ascii).unwrap();
            assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
            let again = load_ply(&p2).unwrap();
            assert_eq!(loaded.positions(), again.positions());
            assert_eq!(loaded.colors(), again.colors());
            assert_eq!(loaded.labels(), again.labels());
            assert_eq!(loaded.faces(), again.faces());
        }
    }

    #[test]
    fn binary_ply_round_trip_through_reader() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bin.ply");
        let mesh = SurfaceMesh::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.5, 0.0, 0.0),
                Vector3::new(0.0, 2.5, 0.0),
            ],
            vec![[0.2, 0.4, 0.6]; 3],
            None,
            vec![[0, 1, 2]],
        )
        .unwrap();
        save_ply(&mesh, &p, false).unwrap();
        let loaded = load_ply(&p).unwrap();
        assert_eq!(loaded.vertex_count(), 3);
        assert_eq!(loaded.positions()[1].x, 1.5);
        assert_eq!(loaded.faces(), mesh.faces());
    }

    #[test]
    fn labeled_ply_uses_palette_and_rejects_unknown_ids() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pred.ply");
        let mesh = SurfaceMesh::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
            ],
            vec![DEFAULT_COLOR; 3],
            None,
            vec![[0, 1, 2]],
        )
        .unwrap();
        save_labeled_ply(&mesh, &[0, 1, 2], &p, false).unwrap();
        let loaded = load_ply(&p).unwrap();
        assert_eq!(loaded.labels().unwrap(), &[0, 1, 2]);
        let expect = |i: usize| {
            [
                LABEL_PALETTE[i][0] as f64 / 255.0,
                LABEL_PALETTE[i][1] as f64 / 255.0,
                LABEL_PALETTE[i][2] as f64 / 255.0,
            ]
        };
        assert_eq!(loaded.colors()[0], expect(0));
        assert_eq!(loaded.colors()[2], expect(2));

        assert!(save_labeled_ply(&mesh, &[0, 1, 21], &p, false).is_err());
        assert!(save_labeled_ply(&mesh, &[0, -1, 2], &p, false).is_err());
    }
}
