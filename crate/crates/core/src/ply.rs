//! PLY reader/writer.
//!
//! Reads ASCII and binary-little-endian PLY with `x,y,z` vertex properties,
//! optional `red,green,blue` colors and an optional scalar `label` property.
//! Writes binary-little-endian with double positions, a deterministic
//! label-to-color palette and an `int label` property, so positions
//! round-trip bit-exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};

use crate::cloud::RawCloud;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    Char,
    UChar,
    Short,
    UShort,
    Int,
    UInt,
    Float,
    Double,
}

impl ScalarType {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Self::Char,
            "uchar" | "uint8" => Self::UChar,
            "short" | "int16" => Self::Short,
            "ushort" | "uint16" => Self::UShort,
            "int" | "int32" => Self::Int,
            "uint" | "uint32" => Self::UInt,
            "float" | "float32" => Self::Float,
            "double" | "float64" => Self::Double,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::Char | Self::UChar => 1,
            Self::Short | Self::UShort => 2,
            Self::Int | Self::UInt | Self::Float => 4,
            Self::Double => 8,
        }
    }

    fn read_le(self, bytes: &[u8]) -> f64 {
        match self {
            Self::Char => bytes[0] as i8 as f64,
            Self::UChar => bytes[0] as f64,
            Self::Short => LittleEndian::read_i16(bytes) as f64,
            Self::UShort => LittleEndian::read_u16(bytes) as f64,
            Self::Int => LittleEndian::read_i32(bytes) as f64,
            Self::UInt => LittleEndian::read_u32(bytes) as f64,
            Self::Float => LittleEndian::read_f32(bytes) as f64,
            Self::Double => LittleEndian::read_f64(bytes),
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, Self::Float | Self::Double)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Format {
    Ascii,
    BinaryLittleEndian,
}

struct Header {
    format: Format,
    vertex_count: usize,
    /// (name, type) per vertex property, in declaration order.
    properties: Vec<(String, ScalarType)>,
    /// Byte offset where the body starts.
    body_offset: usize,
}

fn parse_err(offset: u64, message: impl Into<String>) -> Error {
    Error::PlyParse {
        offset,
        message: message.into(),
    }
}

fn parse_header(data: &[u8]) -> Result<Header> {
    let mut offset = 0usize;
    let mut lines = Vec::new();
    // Header is ASCII, newline-terminated, ends with "end_header".
    loop {
        let rest = &data[offset..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| parse_err(data.len() as u64, "header not terminated by end_header"))?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| parse_err(offset as u64, "non-UTF8 bytes in header"))?
            .trim_end_matches('\r')
            .to_string();
        let line_offset = offset;
        offset += nl + 1;
        if line == "end_header" {
            break;
        }
        lines.push((line_offset, line));
    }

    let mut it = lines.iter();
    match it.next() {
        Some((_, magic)) if magic.trim() == "ply" => {}
        _ => return Err(parse_err(0, "missing 'ply' magic")),
    }

    let mut format = None;
    let mut vertex_count = None;
    let mut properties = Vec::new();
    let mut in_vertex_element = false;
    let mut past_vertex_element = false;

    for (line_offset, line) in it {
        let off = *line_offset as u64;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.first().copied() {
            Some("comment") | Some("obj_info") | None => {}
            Some("format") => {
                format = Some(match tokens.get(1).copied() {
                    Some("ascii") => Format::Ascii,
                    Some("binary_little_endian") => Format::BinaryLittleEndian,
                    Some(other) => {
                        return Err(parse_err(off, format!("unsupported format '{other}'")))
                    }
                    None => return Err(parse_err(off, "format line missing kind")),
                });
            }
            Some("element") => {
                let name = tokens
                    .get(1)
                    .ok_or_else(|| parse_err(off, "element line missing name"))?;
                let count: usize = tokens
                    .get(2)
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| parse_err(off, "element line missing count"))?;
                if *name == "vertex" {
                    if vertex_count.is_some() {
                        return Err(parse_err(off, "duplicate vertex element"));
                    }
                    vertex_count = Some(count);
                    in_vertex_element = true;
                } else {
                    if in_vertex_element {
                        past_vertex_element = true;
                    }
                    in_vertex_element = false;
                }
            }
            Some("property") => {
                if !in_vertex_element {
                    continue; // properties of elements we do not read
                }
                if tokens.get(1).copied() == Some("list") {
                    return Err(parse_err(off, "list properties are unsupported on vertices"));
                }
                let ty = tokens
                    .get(1)
                    .and_then(|t| ScalarType::parse(t))
                    .ok_or_else(|| {
                        parse_err(off, format!("unsupported property type '{}'", tokens.get(1).unwrap_or(&"?")))
                    })?;
                let name = tokens
                    .get(2)
                    .ok_or_else(|| parse_err(off, "property line missing name"))?;
                properties.push((name.to_string(), ty));
            }
            Some(other) => return Err(parse_err(off, format!("unknown header keyword '{other}'"))),
        }
    }
    let _ = past_vertex_element;

    let format = format.ok_or_else(|| parse_err(0, "missing format line"))?;
    let vertex_count =
        vertex_count.ok_or_else(|| parse_err(0, "missing vertex element"))?;
    for axis in ["x", "y", "z"] {
        if !properties.iter().any(|(n, _)| n == axis) {
            return Err(parse_err(0, format!("vertex element lacks '{axis}' property")));
        }
    }
    Ok(Header {
        format,
        vertex_count,
        properties,
        body_offset: offset,
    })
}

/// Loads a PLY file. Missing colors default to mid-gray; 8-bit colors are
/// rescaled to `[0,1]`; a scalar `label` property becomes instance labels.
pub fn load_ply(path: impl AsRef<Path>) -> Result<RawCloud> {
    let path = path.as_ref();
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    load_ply_bytes(&data)
}

pub fn load_ply_bytes(data: &[u8]) -> Result<RawCloud> {
    let header = parse_header(data)?;
    let n = header.vertex_count;
    if n == 0 {
        return Err(parse_err(header.body_offset as u64, "vertex count is zero"));
    }

    let find = |name: &str| header.properties.iter().position(|(p, _)| p == name);
    let ix = find("x").unwrap();
    let iy = find("y").unwrap();
    let iz = find("z").unwrap();
    let color_ix = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };
    let label_ix = find("label");
    if let Some(li) = label_ix {
        if !header.properties[li].1.is_integer() {
            return Err(parse_err(
                header.body_offset as u64,
                "label property must have an integer type",
            ));
        }
    }

    let prop_count = header.properties.len();
    let mut values = vec![0.0f64; prop_count];
    let mut positions = Vec::with_capacity(n);
    let mut colors = Vec::with_capacity(n);
    let mut labels = label_ix.map(|_| Vec::with_capacity(n));

    let mut read_row = |values: &[f64], offset: u64| -> Result<()> {
        let p = [values[ix], values[iy], values[iz]];
        if p.iter().any(|c| !c.is_finite()) {
            return Err(parse_err(offset, "non-finite vertex coordinate"));
        }
        positions.push(p);
        match color_ix {
            Some([r, g, b]) => {
                let scale = |v: f64, t: ScalarType| {
                    if t == ScalarType::UChar {
                        v / 255.0
                    } else {
                        v
                    }
                    .clamp(0.0, 1.0)
                };
                colors.push([
                    scale(values[r], header.properties[r].1),
                    scale(values[g], header.properties[g].1),
                    scale(values[b], header.properties[b].1),
                ]);
            }
            None => colors.push([0.5; 3]),
        }
        if let (Some(labels), Some(li)) = (&mut labels, label_ix) {
            let v = values[li];
            if v < 0.0 {
                return Err(parse_err(offset, format!("negative instance label {v}")));
            }
            labels.push(v as u32);
        }
        Ok(())
    };

    match header.format {
        Format::BinaryLittleEndian => {
            let row_size: usize = header.properties.iter().map(|(_, t)| t.size()).sum();
            let body = &data[header.body_offset..];
            if body.len() < row_size * n {
                return Err(parse_err(
                    data.len() as u64,
                    format!(
                        "body truncated: need {} bytes for {n} vertices, found {}",
                        row_size * n,
                        body.len()
                    ),
                ));
            }
            for row in 0..n {
                let mut cursor = row * row_size;
                for (k, (_, ty)) in header.properties.iter().enumerate() {
                    values[k] = ty.read_le(&body[cursor..cursor + ty.size()]);
                    cursor += ty.size();
                }
                read_row(&values, (header.body_offset + row * row_size) as u64)?;
            }
        }
        Format::Ascii => {
            let body = std::str::from_utf8(&data[header.body_offset..])
                .map_err(|_| parse_err(header.body_offset as u64, "non-UTF8 bytes in ASCII body"))?;
            let mut offset = header.body_offset as u64;
            let mut rows = 0usize;
            for line in body.lines() {
                let line_offset = offset;
                offset += line.len() as u64 + 1;
                if line.trim().is_empty() {
                    continue;
                }
                if rows == n {
                    break;
                }
                let tokens: Vec<&str> = line.split_whitespace().collect();
                if tokens.len() < prop_count {
                    return Err(parse_err(
                        line_offset,
                        format!("expected {prop_count} values, found {}", tokens.len()),
                    ));
                }
                for (k, tok) in tokens.iter().take(prop_count).enumerate() {
                    values[k] = tok.parse().map_err(|_| {
                        parse_err(line_offset, format!("unparseable value '{tok}'"))
                    })?;
                }
                read_row(&values, line_offset)?;
                rows += 1;
            }
            if rows < n {
                return Err(parse_err(
                    offset,
                    format!("body truncated: header declares {n} vertices, found {rows}"),
                ));
            }
        }
    }

    RawCloud::new(positions, colors, labels)
}

/// Deterministic label-to-color palette (golden-ratio hue walk).
pub fn palette_color(label: u32) -> [u8; 3] {
    let hue = (label as f64 * 0.618_033_988_749_895).fract();
    let (s, v) = (0.75, 0.95);
    let h6 = hue * 6.0;
    let sector = h6.floor() as i32 % 6;
    let f = h6.fract();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    let (r, g, b) = match sector {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8]
}

/// Writes a binary-little-endian PLY with double positions, palette colors
/// derived from `labels` and an `int label` property.
pub fn save_ply(cloud: &RawCloud, labels: &[u32], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if labels.len() != cloud.len() {
        return Err(Error::Shape(format!(
            "labels ({}) and cloud ({}) differ in length",
            labels.len(),
            cloud.len()
        )));
    }
    let mut out = Vec::with_capacity(128 + cloud.len() * 31);
    write!(
        out,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property double x\nproperty double y\nproperty double z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\n\
         property int label\nend_header\n",
        cloud.len()
    )
    .expect("write to Vec cannot fail");
    for (p, &label) in cloud.positions.iter().zip(labels) {
        let mut buf = [0u8; 8];
        for &c in p {
            LittleEndian::write_f64(&mut buf, c);
            out.extend_from_slice(&buf);
        }
        out.extend_from_slice(&palette_color(label));
        LittleEndian::write_i32(&mut buf[..4], label as i32);
        out.extend_from_slice(&buf[..4]);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a label sidecar: one decimal instance id per line.
pub fn read_label_sidecar(path: impl AsRef<Path>) -> Result<Vec<u32>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim().parse::<u32>().map_err(|_| {
                Error::InvalidArgument(format!("bad label line '{l}' in {}", path.display()))
            })
        })
        .collect()
}
