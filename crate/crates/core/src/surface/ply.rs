//! Minimal PLY reader/writer for triangle meshes.
//!
//! Reads ASCII and binary little-endian files. Only `vertex` (x, y, z) and
//! `face` (vertex_indices or vertex_index) are interpreted; other elements
//! and properties are skipped. Polygons with more than three corners are
//! fan-triangulated.

use std::fmt::Write as _;

use thiserror::Error;

use super::Vec3;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("PLY format error at byte {offset}: {message}")]
pub struct PlyError {
    pub offset: usize,
    pub message: String,
}

fn err<T>(offset: usize, message: impl Into<String>) -> Result<T, PlyError> {
    Err(PlyError {
        offset,
        message: message.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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
    fn parse(s: &str) -> Option<Scalar> {
        Some(match s {
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

    fn is_integer(self) -> bool {
        !matches!(self, Scalar::F32 | Scalar::F64)
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

impl Property {
    fn name(&self) -> &str {
        match self {
            Property::Scalar { name, .. } | Property::List { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    body_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, PlyError> {
    let mut pos = 0usize;
    let next_line = |pos: &mut usize| -> Result<(usize, String), PlyError> {
        let start = *pos;
        let Some(len) = bytes[start..].iter().position(|&b| b == b'\n') else {
            return err(start, "unexpected end of header");
        };
        *pos = start + len + 1;
        let line = std::str::from_utf8(&bytes[start..start + len])
            .map_err(|_| PlyError {
                offset: start,
                message: "header is not valid UTF-8".into(),
            })?
            .trim_end_matches('\r')
            .to_string();
        Ok((start, line))
    };

    let (off, magic) = next_line(&mut pos)?;
    if magic.trim() != "ply" {
        return err(off, "missing 'ply' magic");
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let (off, line) = next_line(&mut pos)?;
        let mut tok = line.split_whitespace();
        match tok.next() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                format = Some(match tok.next() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLittleEndian,
                    Some(other) => return err(off, format!("unsupported format '{other}'")),
                    None => return err(off, "format line without a value"),
                });
            }
            Some("element") => {
                let name = tok.next();
                let count = tok.next().and_then(|c| c.parse::<usize>().ok());
                match (name, count) {
                    (Some(name), Some(count)) => elements.push(Element {
                        name: name.to_string(),
                        count,
                        properties: Vec::new(),
                    }),
                    _ => return err(off, "malformed element line"),
                }
            }
            Some("property") => {
                let Some(el) = elements.last_mut() else {
                    return err(off, "property before any element");
                };
                let parts: Vec<&str> = tok.collect();
                let prop = match parts.as_slice() {
                    ["list", c, i, name] => match (Scalar::parse(c), Scalar::parse(i)) {
                        (Some(count), Some(item)) if count.is_integer() => Property::List {
                            name: name.to_string(),
                            count,
                            item,
                        },
                        _ => return err(off, "bad list property types"),
                    },
                    [ty, name] => match Scalar::parse(ty) {
                        Some(ty) => Property::Scalar {
                            name: name.to_string(),
                            ty,
                        },
                        None => return err(off, format!("unknown property type '{ty}'")),
                    },
                    _ => return err(off, "malformed property line"),
                };
                el.properties.push(prop);
            }
            Some("end_header") => break,
            Some(other) => return err(off, format!("unexpected header keyword '{other}'")),
        }
    }
    let Some(format) = format else {
        return err(0, "header has no format line");
    };
    Ok(Header {
        format,
        elements,
        body_start: pos,
    })
}

/// Token source over the body, tracking byte offsets.
trait Body {
    fn value(&mut self, ty: Scalar) -> Result<f64, PlyError>;
    fn offset(&self) -> usize;
    /// Called after each element row.
    fn end_row(&mut self) -> Result<(), PlyError> {
        Ok(())
    }
}

struct AsciiBody<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl AsciiBody<'_> {
    fn skip_space(&mut self, newlines: bool) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b' ' || b == b'\t' || b == b'\r' || (newlines && b == b'\n') {
                self.pos += 1;
            } else {
                break;
            }
        }
    }
}

impl Body for AsciiBody<'_> {
    fn value(&mut self, ty: Scalar) -> Result<f64, PlyError> {
        self.skip_space(true);
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return err(start, "unexpected end of data");
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap_or("");
        let v = if ty.is_integer() {
            text.parse::<i64>().map(|v| v as f64).ok()
        } else {
            text.parse::<f64>().ok()
        };
        match v {
            Some(v) => Ok(v),
            None => err(start, format!("cannot parse '{text}' as a number")),
        }
    }

    fn offset(&self) -> usize {
        self.pos
    }

    fn end_row(&mut self) -> Result<(), PlyError> {
        self.skip_space(false);
        match self.bytes.get(self.pos) {
            None => Ok(()),
            Some(b'\n') => {
                self.pos += 1;
                Ok(())
            }
            Some(_) => err(self.pos, "extra values at end of row"),
        }
    }
}

struct BinaryBody<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Body for BinaryBody<'_> {
    fn value(&mut self, ty: Scalar) -> Result<f64, PlyError> {
        let n = ty.size();
        let Some(b) = self.bytes.get(self.pos..self.pos + n) else {
            return err(self.pos, "unexpected end of data");
        };
        self.pos += n;
        Ok(match ty {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b.try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b.try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b.try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b.try_into().unwrap()),
        })
    }

    fn offset(&self) -> usize {
        self.pos
    }
}

fn read_body(
    header: &Header,
    body: &mut dyn Body,
) -> Result<(Vec<Vec3>, Vec<[usize; 3]>), PlyError> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut saw_vertex = false;
    let mut saw_face = false;
    for el in &header.elements {
        let is_vertex = el.name == "vertex";
        let is_face = el.name == "face";
        let mut xyz = [usize::MAX; 3];
        let mut index_prop = usize::MAX;
        if is_vertex {
            saw_vertex = true;
            for (k, p) in el.properties.iter().enumerate() {
                if let Property::Scalar { name, .. } = p {
                    match name.as_str() {
                        "x" => xyz[0] = k,
                        "y" => xyz[1] = k,
                        "z" => xyz[2] = k,
                        _ => {}
                    }
                }
            }
            if xyz.contains(&usize::MAX) {
                return err(body.offset(), "vertex element lacks x, y or z");
            }
            vertices.reserve(el.count);
        }
        if is_face {
            saw_face = true;
            index_prop = el
                .properties
                .iter()
                .position(|p| {
                    matches!(p, Property::List { .. })
                        && matches!(p.name(), "vertex_indices" | "vertex_index")
                })
                .ok_or(PlyError {
                    offset: body.offset(),
                    message: "face element lacks a vertex_indices list".into(),
                })?;
            faces.reserve(el.count);
        }
        let mut poly: Vec<usize> = Vec::new();
        for _ in 0..el.count {
            let mut p = [0.0; 3];
            for (k, prop) in el.properties.iter().enumerate() {
                match prop {
                    Property::Scalar { ty, .. } => {
                        let v = body.value(*ty)?;
                        if is_vertex {
                            for (c, &slot) in xyz.iter().enumerate() {
                                if slot == k {
                                    p[c] = v;
                                }
                            }
                        }
                    }
                    Property::List { count, item, .. } => {
                        let off = body.offset();
                        let n = body.value(*count)?;
                        if n < 0.0 {
                            return err(off, "negative list length");
                        }
                        let n = n as usize;
                        let take = is_face && k == index_prop;
                        poly.clear();
                        for _ in 0..n {
                            let off = body.offset();
                            let v = body.value(*item)?;
                            if take {
                                if v < 0.0 || v.fract() != 0.0 {
                                    return err(off, "invalid vertex index");
                                }
                                poly.push(v as usize);
                            }
                        }
                        if take {
                            if n < 3 {
                                return err(off, format!("face with {n} vertices"));
                            }
                            for j in 1..n - 1 {
                                faces.push([poly[0], poly[j], poly[j + 1]]);
                            }
                        }
                    }
                }
            }
            if is_vertex {
                vertices.push(Vec3::new(p[0], p[1], p[2]));
            }
            body.end_row()?;
        }
    }
    if !saw_vertex {
        return err(header.body_start, "no vertex element");
    }
    if !saw_face {
        return err(header.body_start, "no face element");
    }
    Ok((vertices, faces))
}

/// Parse PLY bytes into raw vertices and triangles (unvalidated).
pub fn read_ply(bytes: &[u8]) -> Result<(Vec<Vec3>, Vec<[usize; 3]>), PlyError> {
    let header = parse_header(bytes)?;
    match header.format {
        PlyFormat::Ascii => {
            let mut body = AsciiBody {
                bytes,
                pos: header.body_start,
            };
            read_body(&header, &mut body)
        }
        PlyFormat::BinaryLittleEndian => {
            let mut body = BinaryBody {
                bytes,
                pos: header.body_start,
            };
            read_body(&header, &mut body)
        }
    }
}

/// Named per-vertex scalar written as an extra `double` vertex property.
#[derive(Debug, Clone)]
pub struct VertexScalar<'a> {
    pub name: &'a str,
    pub values: &'a [f64],
}

/// Serialize a triangle mesh. ASCII output uses shortest round-trip float
/// formatting, so reading it back reproduces the coordinates exactly.
pub fn write_ply(
    vertices: &[Vec3],
    faces: &[[usize; 3]],
    scalars: &[VertexScalar<'_>],
    format: PlyFormat,
) -> Vec<u8> {
    for s in scalars {
        assert_eq!(s.values.len(), vertices.len(), "scalar '{}' length", s.name);
    }
    let mut head = String::from("ply\n");
    head.push_str(match format {
        PlyFormat::Ascii => "format ascii 1.0\n",
        PlyFormat::BinaryLittleEndian => "format binary_little_endian 1.0\n",
    });
    let _ = writeln!(head, "element vertex {}", vertices.len());
    for c in ["x", "y", "z"] {
        let _ = writeln!(head, "property double {c}");
    }
    for s in scalars {
        let _ = writeln!(head, "property double {}", s.name);
    }
    let _ = writeln!(head, "element face {}", faces.len());
    head.push_str("property list uchar int vertex_indices\nend_header\n");

    let mut out = head.into_bytes();
    match format {
        PlyFormat::Ascii => {
            let mut body = String::new();
            for (i, v) in vertices.iter().enumerate() {
                let _ = write!(body, "{} {} {}", v.x, v.y, v.z);
                for s in scalars {
                    let _ = write!(body, " {}", s.values[i]);
                }
                body.push('\n');
            }
            for f in faces {
                let _ = writeln!(body, "3 {} {} {}", f[0], f[1], f[2]);
            }
            out.extend_from_slice(body.as_bytes());
        }
        PlyFormat::BinaryLittleEndian => {
            for (i, v) in vertices.iter().enumerate() {
                for c in [v.x, v.y, v.z] {
                    out.extend_from_slice(&c.to_le_bytes());
                }
                for s in scalars {
                    out.extend_from_slice(&s.values[i].to_le_bytes());
                }
            }
            for f in faces {
                out.push(3);
                for &i in f {
                    out.extend_from_slice(&(i as i32).to_le_bytes());
                }
            }
        }
    }
    out
}
