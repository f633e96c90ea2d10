//! PLY reader and writer for vertex positions.
//!
//! Reads ASCII and binary little-endian files; `x`, `y`, `z` may be any scalar
//! type, other properties and elements are skipped. Writes binary
//! little-endian float32.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{PointCloud, RawPointCloud};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLe,
}

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

    fn decode_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Clone, Debug)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Clone, Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

#[derive(Debug)]
struct Header {
    format: Format,
    elements: Vec<Element>,
    /// Number of header lines, for error reporting in ASCII bodies.
    lines: usize,
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn read_header<R: BufRead>(r: &mut R) -> Result<Header> {
    let mut lines = 0usize;
    let mut buf = String::new();
    let mut next_line = |buf: &mut String, lines: &mut usize| -> Result<bool> {
        buf.clear();
        let n = r.read_line(buf)?;
        *lines += 1;
        Ok(n > 0)
    };

    if !next_line(&mut buf, &mut lines)? || buf.trim_end() != "ply" {
        return Err(parse_err(1, "missing 'ply' magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        if !next_line(&mut buf, &mut lines)? {
            return Err(parse_err(lines, "unexpected end of header"));
        }
        let toks: Vec<&str> = buf.split_whitespace().collect();
        match toks.as_slice() {
            [] => continue,
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] => continue,
            ["format", fmt, _version] => {
                format = Some(match *fmt {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLe,
                    "binary_big_endian" => {
                        return Err(Error::UnsupportedFormat(
                            "binary_big_endian PLY".into(),
                        ))
                    }
                    other => return Err(parse_err(lines, format!("unknown format '{other}'"))),
                });
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| parse_err(lines, format!("bad element count '{count}'")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            ["property", "list", cnt, item, _name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(lines, "property before any element"))?;
                let count = Scalar::parse(cnt)
                    .ok_or_else(|| parse_err(lines, format!("unknown type '{cnt}'")))?;
                let item = Scalar::parse(item)
                    .ok_or_else(|| parse_err(lines, format!("unknown type '{item}'")))?;
                el.props.push(Property::List { count, item });
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(lines, "property before any element"))?;
                let ty = Scalar::parse(ty)
                    .ok_or_else(|| parse_err(lines, format!("unknown type '{ty}'")))?;
                el.props.push(Property::Scalar {
                    name: name.to_string(),
                    ty,
                });
            }
            _ => return Err(parse_err(lines, format!("unrecognised header line '{}'", buf.trim_end()))),
        }
    }
    let format = format.ok_or_else(|| parse_err(lines, "missing format line"))?;
    Ok(Header {
        format,
        elements,
        lines,
    })
}

fn xyz_slots(el: &Element, line: usize) -> Result<[usize; 3]> {
    let mut slots = [usize::MAX; 3];
    for (i, p) in el.props.iter().enumerate() {
        if let Property::Scalar { name, .. } = p {
            match name.as_str() {
                "x" => slots[0] = i,
                "y" => slots[1] = i,
                "z" => slots[2] = i,
                _ => {}
            }
        }
    }
    for (s, axis) in slots.iter().zip(["x", "y", "z"]) {
        if *s == usize::MAX {
            return Err(parse_err(line, format!("vertex element has no '{axis}' property")));
        }
    }
    Ok(slots)
}

/// Reads vertex positions from a PLY file.
pub fn read_ply(path: impl AsRef<Path>) -> Result<RawPointCloud> {
    let file = File::open(path)?;
    read_ply_from(BufReader::new(file))
}

pub fn read_ply_from<R: BufRead>(mut r: R) -> Result<RawPointCloud> {
    let header = read_header(&mut r)?;
    let vertex_pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| parse_err(header.lines, "no vertex element"))?;
    let slots = xyz_slots(&header.elements[vertex_pos], header.lines)?;

    let mut points = Vec::with_capacity(header.elements[vertex_pos].count);
    match header.format {
        Format::Ascii => {
            let mut line_no = header.lines;
            let mut buf = String::new();
            for (ei, el) in header.elements.iter().enumerate() {
                if ei > vertex_pos {
                    break;
                }
                for _ in 0..el.count {
                    buf.clear();
                    line_no += 1;
                    if r.read_line(&mut buf)? == 0 {
                        return Err(parse_err(line_no, "unexpected end of file"));
                    }
                    if ei != vertex_pos {
                        continue;
                    }
                    let vals = parse_ascii_row(&buf, el, line_no)?;
                    points.push([vals[slots[0]], vals[slots[1]], vals[slots[2]]]);
                }
            }
        }
        Format::BinaryLe => {
            for (ei, el) in header.elements.iter().enumerate() {
                if ei > vertex_pos {
                    break;
                }
                for _ in 0..el.count {
                    let vals = read_binary_row(&mut r, el)?;
                    if ei == vertex_pos {
                        points.push([vals[slots[0]], vals[slots[1]], vals[slots[2]]]);
                    }
                }
            }
        }
    }
    RawPointCloud::new(points)
}

fn parse_ascii_row(line: &str, el: &Element, line_no: usize) -> Result<Vec<f64>> {
    let mut toks = line.split_whitespace();
    let mut next = || -> Result<f64> {
        let t = toks
            .next()
            .ok_or_else(|| parse_err(line_no, "too few values in row"))?;
        t.parse::<f64>()
            .map_err(|_| parse_err(line_no, format!("bad number '{t}'")))
    };
    let mut vals = Vec::with_capacity(el.props.len());
    for p in &el.props {
        match p {
            Property::Scalar { .. } => vals.push(next()?),
            Property::List { .. } => {
                let n = next()?;
                if n < 0.0 || n.fract() != 0.0 {
                    return Err(parse_err(line_no, "bad list length"));
                }
                for _ in 0..n as usize {
                    next()?;
                }
                vals.push(f64::NAN);
            }
        }
    }
    Ok(vals)
}

fn read_binary_row<R: Read>(r: &mut R, el: &Element) -> Result<Vec<f64>> {
    let truncated = |e: std::io::Error| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::corrupt("PLY body is truncated")
        } else {
            Error::Io(e)
        }
    };
    let mut buf = [0u8; 8];
    let mut vals = Vec::with_capacity(el.props.len());
    for p in &el.props {
        match *p {
            Property::Scalar { ty, .. } => {
                r.read_exact(&mut buf[..ty.size()]).map_err(truncated)?;
                vals.push(ty.decode_le(&buf));
            }
            Property::List { count, item } => {
                r.read_exact(&mut buf[..count.size()]).map_err(truncated)?;
                let n = count.decode_le(&buf);
                if n < 0.0 {
                    return Err(Error::corrupt("negative PLY list length"));
                }
                for _ in 0..n as usize {
                    r.read_exact(&mut buf[..item.size()]).map_err(truncated)?;
                }
                vals.push(f64::NAN);
            }
        }
    }
    Ok(vals)
}

/// Writes positions as binary little-endian float32.
pub fn write_ply(path: impl AsRef<Path>, points: &[[f64; 3]]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ply_to(&mut w, points)?;
    w.flush()?;
    Ok(())
}

pub fn write_ply_to<W: Write>(w: &mut W, points: &[[f64; 3]]) -> Result<()> {
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\nend_header\n",
        points.len()
    )?;
    for p in points {
        for c in p {
            w.write_all(&(*c as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Writes the voxel coordinates of a cloud.
pub fn write_point_cloud(path: impl AsRef<Path>, pc: &PointCloud) -> Result<()> {
    write_ply(path, &RawPointCloud::from(pc).points)
}
