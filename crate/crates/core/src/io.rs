//! Tabular CSV input, PGM/PPM images, and the line-oriented output formats.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset};
use crate::prior::Location;
use crate::vb::TraceRecord;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: String, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("csv: {0}")]
    Csv(String),
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("row {row}: column {col} index out of range ({len} fields)")]
    ColumnIndex { row: usize, col: usize, len: usize },
    #[error("row {row}, column {col}: cannot parse `{value}` as a number")]
    Parse { row: usize, col: String, value: String },
    #[error("row {row}, column {col}: non-finite value")]
    NonFinite { row: usize, col: String },
    #[error("row {row}, column {col}: `{value}` is not a non-negative integer label")]
    Label { row: usize, col: String, value: String },
    #[error("image: {0}")]
    Image(String),
    #[error("line {line}: `{value}` is not an integer label")]
    LabelLine { line: usize, value: String },
    #[error(transparent)]
    Data(#[from] DataError),
}

fn file_err(path: &Path) -> impl FnOnce(io::Error) -> IoError + '_ {
    move |source| IoError::File { path: path.display().to_string(), source }
}

/// A column selected by header name or zero-based index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

impl ColumnRef {
    /// All-digit strings are indices, anything else a header name.
    pub fn parse(s: &str) -> Self {
        let s = s.trim();
        match s.parse::<usize>() {
            Ok(i) => ColumnRef::Index(i),
            Err(_) => ColumnRef::Name(s.to_string()),
        }
    }

    /// Parses a comma-separated column list.
    pub fn parse_list(s: &str) -> Vec<Self> {
        s.split(',').filter(|p| !p.trim().is_empty()).map(Self::parse).collect()
    }

    fn resolve(&self, header: Option<&csv::StringRecord>) -> Result<usize, IoError> {
        match self {
            ColumnRef::Index(i) => Ok(*i),
            ColumnRef::Name(name) => header
                .and_then(|h| h.iter().position(|f| f.trim() == name))
                .ok_or_else(|| IoError::MissingColumn(name.clone())),
        }
    }

    fn label(&self) -> String {
        match self {
            ColumnRef::Index(i) => i.to_string(),
            ColumnRef::Name(n) => n.clone(),
        }
    }
}

/// Which columns of a CSV file hold features, locations and (optionally) labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TabularSpec {
    pub features: Vec<ColumnRef>,
    pub locations: Vec<ColumnRef>,
    pub label: Option<ColumnRef>,
    pub has_header: bool,
}

/// Reads a CSV dataset. Row numbers in errors are 1-based data rows.
pub fn load_tabular(path: &Path, spec: &TabularSpec) -> Result<Dataset, IoError> {
    let file = fs::File::open(path).map_err(file_err(path))?;
    read_tabular(file, spec)
}

pub fn read_tabular<R: io::Read>(reader: R, spec: &TabularSpec) -> Result<Dataset, IoError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(spec.has_header)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let header = if spec.has_header {
        Some(rdr.headers().map_err(|e| IoError::Csv(e.to_string()))?.clone())
    } else {
        None
    };
    let resolve = |cols: &[ColumnRef]| -> Result<Vec<(usize, String)>, IoError> {
        cols.iter().map(|c| Ok((c.resolve(header.as_ref())?, c.label()))).collect()
    };
    let feature_cols = resolve(&spec.features)?;
    let location_cols = resolve(&spec.locations)?;
    let label_col = spec.label.as_ref().map(|c| Ok::<_, IoError>((c.resolve(header.as_ref())?, c.label()))).transpose()?;

    let mut features = Vec::new();
    let mut locations = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| IoError::Csv(e.to_string()))?;
        let numbers = |cols: &[(usize, String)]| -> Result<Vec<f64>, IoError> {
            cols.iter()
                .map(|(idx, name)| {
                    let raw = record.get(*idx).ok_or(IoError::ColumnIndex { row, col: *idx, len: record.len() })?;
                    let v: f64 = raw.parse().map_err(|_| IoError::Parse {
                        row,
                        col: name.clone(),
                        value: raw.to_string(),
                    })?;
                    if !v.is_finite() {
                        return Err(IoError::NonFinite { row, col: name.clone() });
                    }
                    Ok(v)
                })
                .collect()
        };
        features.push(DVector::from_vec(numbers(&feature_cols)?));
        locations.push(Location::new(numbers(&location_cols)?).map_err(DataError::from)?);
        if let Some((idx, name)) = &label_col {
            let raw = record.get(*idx).ok_or(IoError::ColumnIndex { row, col: *idx, len: record.len() })?;
            let label = raw.parse::<usize>().map_err(|_| IoError::Label {
                row,
                col: name.clone(),
                value: raw.to_string(),
            })?;
            labels.push(label);
        }
    }
    let ds = Dataset::new(features, locations)?;
    Ok(if label_col.is_some() { ds.with_labels(labels)? } else { ds })
}

/// A decoded PGM/PPM image; samples are row-major, interleaved by channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, maxval: u16, samples: Vec<u16>) -> Result<Self, IoError> {
        if width == 0 || height == 0 {
            return Err(IoError::Image("image must be at least 1x1".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(IoError::Image(format!("unsupported channel count {channels}")));
        }
        if maxval == 0 {
            return Err(IoError::Image("maxval must be positive".into()));
        }
        if samples.len() != width * height * channels {
            return Err(IoError::Image(format!(
                "expected {} samples, got {}",
                width * height * channels,
                samples.len()
            )));
        }
        if let Some(s) = samples.iter().find(|&&s| s > maxval) {
            return Err(IoError::Image(format!("sample {s} exceeds maxval {maxval}")));
        }
        Ok(Self { width, height, channels, maxval, samples })
    }

    /// Builds an 8-bit RGB image from RGBA bytes, dropping alpha.
    pub fn from_rgba(width: usize, height: usize, rgba: &[u8]) -> Result<Self, IoError> {
        if rgba.len() != width * height * 4 {
            return Err(IoError::Image(format!("expected {} RGBA bytes, got {}", width * height * 4, rgba.len())));
        }
        let samples = rgba.chunks_exact(4).flat_map(|p| p[..3].iter().map(|&v| v as u16)).collect();
        Self::new(width, height, 3, 255, samples)
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[u16] {
        let i = (row * self.width + col) * self.channels;
        &self.samples[i..i + self.channels]
    }
}

struct Tokens<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Tokens<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32, IoError> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(IoError::Image(format!("truncated or malformed {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| IoError::Image(format!("malformed {what}")))
    }
}

/// Decodes P2/P3 (ASCII) and P5/P6 (binary) images.
pub fn decode_pnm(bytes: &[u8]) -> Result<Image, IoError> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(IoError::Image("missing P2/P3/P5/P6 magic number".into()));
    }
    let (channels, binary) = match bytes[1] {
        b'2' => (1, false),
        b'3' => (3, false),
        b'5' => (1, true),
        b'6' => (3, true),
        m => return Err(IoError::Image(format!("unsupported magic number P{}", m as char))),
    };
    let mut t = Tokens { bytes, pos: 2 };
    let width = t.number("width")? as usize;
    let height = t.number("height")? as usize;
    let maxval = t.number("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(IoError::Image(format!("maxval {maxval} out of range")));
    }
    let count = width
        .checked_mul(height)
        .and_then(|p| p.checked_mul(channels))
        .ok_or_else(|| IoError::Image("image dimensions overflow".into()))?;
    let samples = if binary {
        // exactly one whitespace byte separates the header from the raster
        if t.pos >= bytes.len() || !bytes[t.pos].is_ascii_whitespace() {
            return Err(IoError::Image("truncated header".into()));
        }
        let data = &bytes[t.pos + 1..];
        let wide = maxval > 255;
        let needed = count * if wide { 2 } else { 1 };
        if data.len() < needed {
            return Err(IoError::Image(format!("truncated payload: {} of {needed} bytes", data.len())));
        }
        if wide {
            data[..needed].chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect()
        } else {
            data[..needed].iter().map(|&b| b as u16).collect()
        }
    } else {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let v = t.number("sample").map_err(|_| IoError::Image("truncated payload".into()))?;
            out.push(u16::try_from(v).map_err(|_| IoError::Image(format!("sample {v} out of range")))?);
        }
        out
    };
    Image::new(width, height, channels, maxval as u16, samples)
}

/// Encodes as binary P5 (gray) or P6 (color).
pub fn encode_pnm(image: &Image) -> Vec<u8> {
    let magic = if image.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n{}\n", image.width, image.height, image.maxval).into_bytes();
    if image.maxval > 255 {
        out.extend(image.samples.iter().flat_map(|s| s.to_be_bytes()));
    } else {
        out.extend(image.samples.iter().map(|&s| s as u8));
    }
    out
}

/// Encodes as ASCII P2 (gray) or P3 (color).
pub fn encode_pnm_ascii(image: &Image) -> Vec<u8> {
    let magic = if image.channels == 1 { "P2" } else { "P3" };
    let mut out = format!("{magic}\n{} {}\n{}\n", image.width, image.height, image.maxval);
    for row in image.samples.chunks(image.width * image.channels) {
        let line: Vec<String> = row.iter().map(|s| s.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out.into_bytes()
}

pub fn read_image(path: &Path) -> Result<Image, IoError> {
    decode_pnm(&fs::read(path).map_err(file_err(path))?)
}

pub fn write_image(path: &Path, image: &Image) -> Result<(), IoError> {
    fs::write(path, encode_pnm(image)).map_err(file_err(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColorMode {
    /// Raw channels (one for PGM, three for PPM).
    #[default]
    Rgb,
    /// Luminance only.
    Gray,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ImageFeatures {
    pub color: ColorMode,
    /// Appends 3×3 window mean and standard deviation per channel.
    pub window_stats: bool,
}

/// Per-pixel observations located at (row/H, col/W), with intensities scaled to [0, 1].
pub fn image_dataset(image: &Image, features: ImageFeatures) -> Result<Dataset, IoError> {
    let (h, w) = (image.height, image.width);
    let scale = image.maxval as f64;
    let base: Vec<Vec<f64>> = (0..h * w)
        .map(|p| {
            let px = image.pixel(p / w, p % w);
            let vals: Vec<f64> = px.iter().map(|&s| s as f64 / scale).collect();
            match (features.color, vals.len()) {
                (ColorMode::Gray, 3) => vec![0.299 * vals[0] + 0.587 * vals[1] + 0.114 * vals[2]],
                _ => vals,
            }
        })
        .collect();
    let mut rows = base.clone();
    if features.window_stats {
        let ch = base[0].len();
        for r in 0..h {
            for c in 0..w {
                let mut sum = vec![0.0; ch];
                let mut sq = vec![0.0; ch];
                let mut count = 0.0;
                for dr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
                    for dc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                        for (k, v) in base[dr * w + dc].iter().enumerate() {
                            sum[k] += v;
                            sq[k] += v * v;
                        }
                        count += 1.0;
                    }
                }
                let row = &mut rows[r * w + c];
                for k in 0..ch {
                    let mean = sum[k] / count;
                    row.push(mean);
                    row.push((sq[k] / count - mean * mean).max(0.0).sqrt());
                }
            }
        }
    }
    let locations: Vec<Vec<f64>> = (0..h * w).map(|p| vec![(p / w) as f64 / h as f64, (p % w) as f64 / w as f64]).collect();
    Ok(Dataset::from_rows(&rows, &locations)?)
}

pub fn load_image(path: &Path, features: ImageFeatures) -> Result<(Image, Dataset), IoError> {
    let image = read_image(path)?;
    let ds = image_dataset(&image, features)?;
    Ok((image, ds))
}

/// A distinct 8-bit color per label (golden-angle hue steps).
pub fn label_color(label: usize) -> [u8; 3] {
    let hue = (label as f64 * 137.507_764_05).rem_euclid(360.0) / 60.0;
    let (s, v) = if label.is_multiple_of(2) { (0.85, 0.95) } else { (0.65, 0.75) };
    let c = v * s;
    let x = c * (1.0 - (hue % 2.0 - 1.0).abs());
    let (r, g, b) = match hue as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|u| ((u + m) * 255.0).round() as u8)
}

/// Colors each pixel by its label.
pub fn label_map(labels: &[usize], width: usize, height: usize) -> Result<Image, IoError> {
    let samples = labels.iter().flat_map(|&l| label_color(l).map(u16::from)).collect();
    Image::new(width, height, 3, 255, samples)
}

pub fn write_labels<W: Write>(mut out: W, labels: &[usize]) -> io::Result<()> {
    for l in labels {
        writeln!(out, "{l}")?;
    }
    out.flush()
}

/// Reads one integer label per line; blank lines are skipped.
pub fn read_labels<R: BufRead>(input: R) -> Result<Vec<i64>, IoError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        out.push(t.parse().map_err(|_| IoError::LabelLine { line: i + 1, value: t.to_string() })?);
    }
    Ok(out)
}

pub fn read_labels_file(path: &Path) -> Result<Vec<i64>, IoError> {
    let f = fs::File::open(path).map_err(file_err(path))?;
    read_labels(io::BufReader::new(f))
}

pub const TRACE_HEADER: &str = "iter,free_energy,alpha_mean,active";

pub fn write_trace<W: Write>(mut out: W, trace: &[TraceRecord]) -> io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in trace {
        writeln!(out, "{},{},{},{}", r.iter, r.free_energy, r.alpha_mean, r.active)?;
    }
    out.flush()
}

/// One row of responsibilities per observation.
pub fn write_responsibilities<W: Write>(mut out: W, resp: &DMatrix<f64>) -> io::Result<()> {
    for row in resp.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    out.flush()
}
