//! File formats: event streams (binary and CSV), f32 tensor dumps, and 8-bit
//! mask images.
//!
//! Binary event layout, all little-endian:
//!
//! ```text
//! header  "EVLS" | version u16 | width u16 | height u16 | count u64
//! record  t u64 (µs) | x u16 | y u16 | p i8 | pad i8
//! ```
//!
//! Tensor layout: `"F32T" | rank u32 | dims u32 * rank | f32 * prod(dims)`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::event::{Event, EventSlice, Polarity, SensorGeometry};
use crate::metrics::BinaryMask;

pub const EVENT_MAGIC: &[u8; 4] = b"EVLS";
pub const EVENT_VERSION: u16 = 1;
pub const EVENT_HEADER_LEN: usize = 18;
pub const EVENT_RECORD_LEN: usize = 14;
pub const TENSOR_MAGIC: &[u8; 4] = b"F32T";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventFormat {
    Binary,
    Csv,
}

impl EventFormat {
    /// `.csv` selects CSV, anything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => EventFormat::Csv,
            _ => EventFormat::Binary,
        }
    }
}

pub fn load_events(path: &Path, format: EventFormat) -> Result<EventSlice> {
    load_events_with_geometry(path, format, None)
}

/// Like [`load_events`]; `geometry` is used for CSV files that carry no
/// `# geometry W H` line. It is ignored for binary files.
pub fn load_events_with_geometry(
    path: &Path,
    format: EventFormat,
    geometry: Option<SensorGeometry>,
) -> Result<EventSlice> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        EventFormat::Binary => decode_binary(&bytes).map_err(|e| with_path(e, path)),
        EventFormat::Csv => {
            let text = String::from_utf8(bytes).map_err(|_| Error::MalformedFile {
                path: path.into(),
                reason: "not valid UTF-8".into(),
            })?;
            parse_csv(&text, geometry).map_err(|e| with_path(e, path))
        }
    }
}

fn with_path(err: Error, path: &Path) -> Error {
    match err {
        Error::MalformedFile { reason, .. } => Error::MalformedFile {
            path: path.into(),
            reason,
        },
        other => other,
    }
}

pub fn save_events(slice: &EventSlice, path: &Path, format: EventFormat) -> Result<()> {
    let bytes = match format {
        EventFormat::Binary => encode_binary(slice),
        EventFormat::Csv => format_csv(slice).into_bytes(),
    };
    write_file(path, &bytes)
}

pub fn encode_binary(slice: &EventSlice) -> Vec<u8> {
    let mut out = Vec::with_capacity(EVENT_HEADER_LEN + EVENT_RECORD_LEN * slice.len());
    let g = slice.geometry();
    out.extend_from_slice(EVENT_MAGIC);
    out.extend_from_slice(&EVENT_VERSION.to_le_bytes());
    out.extend_from_slice(&(g.width() as u16).to_le_bytes());
    out.extend_from_slice(&(g.height() as u16).to_le_bytes());
    out.extend_from_slice(&(slice.len() as u64).to_le_bytes());
    for e in slice.events() {
        out.extend_from_slice(&e.t.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.p.sign() as u8);
        out.push(0);
    }
    out
}

fn malformed(reason: impl Into<String>) -> Error {
    Error::MalformedFile {
        path: Default::default(),
        reason: reason.into(),
    }
}

pub fn decode_binary(bytes: &[u8]) -> Result<EventSlice> {
    if bytes.len() < EVENT_HEADER_LEN {
        return Err(malformed("truncated header"));
    }
    if &bytes[0..4] != EVENT_MAGIC {
        return Err(malformed("bad magic, expected EVLS"));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let version = u16_at(4);
    if version != EVENT_VERSION {
        return Err(malformed(format!("unsupported version {version}")));
    }
    let geometry = SensorGeometry::new(u16_at(6) as usize, u16_at(8) as usize)?;
    let count = u64::from_le_bytes(bytes[10..18].try_into().unwrap()) as usize;
    let body = &bytes[EVENT_HEADER_LEN..];
    if body.len() != count.saturating_mul(EVENT_RECORD_LEN) {
        return Err(malformed(format!(
            "header declares {count} records but body holds {} bytes",
            body.len()
        )));
    }
    let mut events = Vec::with_capacity(count);
    for (index, rec) in body.chunks_exact(EVENT_RECORD_LEN).enumerate() {
        let t = u64::from_le_bytes(rec[0..8].try_into().unwrap());
        let x = u16::from_le_bytes([rec[8], rec[9]]);
        let y = u16::from_le_bytes([rec[10], rec[11]]);
        let raw = rec[12] as i8 as i64;
        let p = Polarity::from_sign(raw).ok_or(Error::InvalidPolarity {
            index,
            polarity: raw,
        })?;
        events.push(Event::new(t, x, y, p));
    }
    EventSlice::new(geometry, events)
}

pub fn format_csv(slice: &EventSlice) -> String {
    let g = slice.geometry();
    let mut s = format!("# geometry {} {}\nt,x,y,p\n", g.width(), g.height());
    for e in slice.events() {
        s.push_str(&format!("{},{},{},{}\n", e.t, e.x, e.y, e.p.sign()));
    }
    s
}

/// Parses `t,x,y,p` lines. A `# geometry W H` comment overrides `geometry`;
/// one of the two must be present. A leading `t,x,y,p` header is skipped.
pub fn parse_csv(text: &str, geometry: Option<SensorGeometry>) -> Result<EventSlice> {
    let mut geometry = geometry;
    let mut raw: Vec<(usize, u64, i64, i64, i64)> = Vec::new();
    let mut seen_data = false;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let mut it = comment.split_whitespace();
            if it.next() == Some("geometry") {
                let dims: Vec<_> = it.collect();
                let parse = |s: Option<&&str>| -> Result<usize> {
                    s.and_then(|v| v.parse().ok()).ok_or(Error::MalformedRecord {
                        line: line_no,
                        reason: "geometry comment must be '# geometry W H'".into(),
                    })
                };
                geometry = Some(SensorGeometry::new(parse(dims.first())?, parse(dims.get(1))?)?);
            }
            continue;
        }
        if !seen_data && line.starts_with(|c: char| c.is_ascii_alphabetic()) {
            seen_data = true;
            continue;
        }
        seen_data = true;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::MalformedRecord {
                line: line_no,
                reason: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let num = |s: &str, name: &str| -> Result<i64> {
            s.parse::<i64>().map_err(|_| Error::MalformedRecord {
                line: line_no,
                reason: format!("field {name} is not an integer: {s:?}"),
            })
        };
        let t = fields[0].parse::<u64>().map_err(|_| Error::MalformedRecord {
            line: line_no,
            reason: format!("timestamp is not a non-negative integer: {:?}", fields[0]),
        })?;
        raw.push((line_no, t, num(fields[1], "x")?, num(fields[2], "y")?, num(fields[3], "p")?));
    }
    let geometry = geometry.ok_or_else(|| {
        malformed("CSV has no '# geometry W H' line and no geometry was supplied")
    })?;
    let mut events = Vec::with_capacity(raw.len());
    for (index, (_, t, x, y, p)) in raw.into_iter().enumerate() {
        if !geometry.contains(x, y) {
            return Err(Error::OutOfBounds {
                index,
                x,
                y,
                width: geometry.width(),
                height: geometry.height(),
            });
        }
        let p = Polarity::from_sign(p).ok_or(Error::InvalidPolarity { index, polarity: p })?;
        events.push(Event::new(t, x as u16, y as u16, p));
    }
    EventSlice::new(geometry, events)
}

/// A dense little-endian f32 tensor as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                format!("{expected} elements for dims {dims:?}"),
                data.len(),
            ));
        }
        Ok(Self { dims, data })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(TENSOR_MAGIC);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[0..4] != TENSOR_MAGIC {
            return Err(malformed("not an F32T tensor file"));
        }
        let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let rank = word(4);
        let header = 8 + 4 * rank;
        if rank == 0 || rank > 8 || bytes.len() < header {
            return Err(malformed("bad tensor rank"));
        }
        let dims: Vec<usize> = (0..rank).map(|i| word(8 + 4 * i)).collect();
        let count: usize = dims.iter().product();
        if bytes.len() - header != count * 4 {
            return Err(malformed(format!(
                "tensor dims {dims:?} need {} data bytes, found {}",
                count * 4,
                bytes.len() - header
            )));
        }
        let data = bytes[header..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { dims, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Tensor::decode(&bytes).map_err(|e| with_path(e, path))
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes an 8-bit grayscale image; the format follows the extension
/// (`.pgm` or `.png`).
pub fn save_gray(path: &Path, width: usize, height: usize, pixels: Vec<u8>) -> Result<()> {
    let img = image::GrayImage::from_raw(width as u32, height as u32, pixels)
        .ok_or_else(|| Error::shape(width * height, "a different pixel count"))?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    img.save(path).map_err(|source| Error::Image {
        path: path.into(),
        source,
    })
}

pub fn load_gray(path: &Path) -> Result<image::GrayImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.into(),
        source,
    })?;
    Ok(img.into_luma8())
}

/// Masks are stored as 0 (background) / 255 (foreground).
pub fn save_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    let g = mask.geometry();
    let pixels = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    save_gray(path, g.width(), g.height(), pixels)
}

/// Pixels above 127 load as foreground.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let img = load_gray(path)?;
    let geometry = SensorGeometry::new(img.width() as usize, img.height() as usize)?;
    BinaryMask::new(geometry, img.as_raw().iter().map(|&v| v > 127).collect())
}
