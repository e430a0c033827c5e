//! File ingestion and export.
//!
//! Supported formats:
//!
//! * **ENVI BSQ cubes** — a text header (`samples`, `lines`, `bands`,
//!   `data type`, `interleave = bsq`, `byte order = 0`) next to a raw
//!   band-sequential payload. Only float32 (type 4) and int16 (type 2)
//!   little-endian payloads are accepted. The header lives at
//!   `<data path>.hdr`, falling back to the data path with its extension
//!   replaced by `hdr`.
//! * **CSV cubes** — a first line `height;width;bands`, then one pixel per
//!   line in lexicographic order with `bands` semicolon-separated values.
//! * **raw-f32 rasters** — little-endian float32, row-major, with a sidecar
//!   text header `<path>.hdr` carrying `width = W` and `height = H`.
//! * **CSV rasters** — one image row per line, semicolon-separated
//!   (self-describing, no header).
//! * **PGM masks** — binary P5, 8-bit, 255 = anomaly, 0 = background.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::cube::{HsiCube, Raster};
use crate::error::{Error, Result};

/// Cube file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CubeFormat {
    EnviBsq,
    Csv,
}

/// Raster file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RasterFormat {
    RawF32,
    Csv,
    Pgm,
}

impl CubeFormat {
    /// Guess the format from a file extension (`bsq`/`dat`/`img` -> ENVI).
    pub fn from_path(path: &Path) -> Option<CubeFormat> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Some(CubeFormat::Csv),
            Some("bsq") | Some("dat") | Some("img") => Some(CubeFormat::EnviBsq),
            _ => None,
        }
    }
}

impl RasterFormat {
    pub fn from_path(path: &Path) -> Option<RasterFormat> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Some(RasterFormat::Csv),
            Some("pgm") => Some(RasterFormat::Pgm),
            Some("f32") | Some("raw") => Some(RasterFormat::RawF32),
            _ => None,
        }
    }
}

// ---------------------------------------------------------------------------
// Cubes
// ---------------------------------------------------------------------------

/// Load a cube from disk.
pub fn load_cube(path: &Path, format: CubeFormat) -> Result<HsiCube> {
    match format {
        CubeFormat::EnviBsq => load_envi_bsq(path),
        CubeFormat::Csv => load_cube_csv(path),
    }
}

/// Save a cube to disk. ENVI output writes float32 plus a `.hdr` sidecar.
pub fn save_cube(cube: &HsiCube, path: &Path, format: CubeFormat) -> Result<()> {
    match format {
        CubeFormat::EnviBsq => save_envi_bsq(cube, path),
        CubeFormat::Csv => save_cube_csv(cube, path),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(format: &'static str, path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        format,
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn envi_header_path(data_path: &Path) -> PathBuf {
    let mut appended = data_path.as_os_str().to_owned();
    appended.push(".hdr");
    let appended = PathBuf::from(appended);
    if appended.exists() {
        return appended;
    }
    let replaced = data_path.with_extension("hdr");
    if replaced.exists() {
        replaced
    } else {
        appended
    }
}

struct EnviHeader {
    samples: usize,
    lines: usize,
    bands: usize,
    data_type: u8,
}

fn parse_envi_header(path: &Path) -> Result<EnviHeader> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut samples = None;
    let mut lines = None;
    let mut bands = None;
    let mut data_type = None;
    let mut interleave = None;
    let mut byte_order = None;
    for line in text.lines() {
        let Some((key, value)) = line.split_once('=') else {
            continue;
        };
        let key = key.trim().to_ascii_lowercase();
        let value = value.trim();
        match key.as_str() {
            "samples" => samples = value.parse::<usize>().ok(),
            "lines" => lines = value.parse::<usize>().ok(),
            "bands" => bands = value.parse::<usize>().ok(),
            "data type" => data_type = value.parse::<u8>().ok(),
            "interleave" => interleave = Some(value.to_ascii_lowercase()),
            "byte order" => byte_order = value.parse::<u8>().ok(),
            _ => {}
        }
    }
    let samples = samples.ok_or_else(|| format_err("envi", path, "missing samples"))?;
    let lines = lines.ok_or_else(|| format_err("envi", path, "missing lines"))?;
    let bands = bands.ok_or_else(|| format_err("envi", path, "missing bands"))?;
    let data_type = data_type.ok_or_else(|| format_err("envi", path, "missing data type"))?;
    if !matches!(data_type, 2 | 4) {
        return Err(format_err(
            "envi",
            path,
            format!("unsupported data type {data_type} (only 2 = int16, 4 = float32)"),
        ));
    }
    match interleave.as_deref() {
        Some("bsq") => {}
        other => {
            return Err(format_err(
                "envi",
                path,
                format!("unsupported interleave {other:?} (only bsq)"),
            ))
        }
    }
    if byte_order != Some(0) {
        return Err(format_err(
            "envi",
            path,
            "unsupported byte order (only 0 = little-endian)",
        ));
    }
    if samples == 0 || lines == 0 || bands == 0 {
        return Err(format_err("envi", path, "zero-sized dimensions"));
    }
    Ok(EnviHeader {
        samples,
        lines,
        bands,
        data_type,
    })
}

fn load_envi_bsq(path: &Path) -> Result<HsiCube> {
    let header = parse_envi_header(&envi_header_path(path))?;
    let payload = fs::read(path).map_err(|e| io_err(path, e))?;
    let count = header.samples * header.lines * header.bands;
    let elem = if header.data_type == 4 { 4 } else { 2 };
    if payload.len() != count * elem {
        return Err(format_err(
            "envi",
            path,
            format!(
                "payload holds {} bytes, header {}x{}x{} needs {}",
                payload.len(),
                header.lines,
                header.samples,
                header.bands,
                count * elem
            ),
        ));
    }
    let data: Vec<f64> = if header.data_type == 4 {
        payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect()
    } else {
        payload
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64)
            .collect()
    };
    HsiCube::new(header.lines, header.samples, header.bands, data)
}

fn save_envi_bsq(cube: &HsiCube, path: &Path) -> Result<()> {
    let mut payload = Vec::with_capacity(cube.data().len() * 4);
    for &v in cube.data() {
        payload.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, payload).map_err(|e| io_err(path, e))?;
    let header = format!(
        "ENVI\nsamples = {}\nlines = {}\nbands = {}\ndata type = 4\ninterleave = bsq\nbyte order = 0\n",
        cube.width(),
        cube.height(),
        cube.bands()
    );
    let mut hdr_path = path.as_os_str().to_owned();
    hdr_path.push(".hdr");
    let hdr_path = PathBuf::from(hdr_path);
    fs::write(&hdr_path, header).map_err(|e| io_err(&hdr_path, e))
}

fn load_cube_csv(path: &Path) -> Result<HsiCube> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| format_err("csv", path, "empty file"))?;
    let dims: Vec<usize> = header
        .split(';')
        .map(|t| t.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| format_err("csv", path, format!("bad header line {header:?}")))?;
    let [height, width, bands] = dims[..] else {
        return Err(format_err("csv", path, "header must be height;width;bands"));
    };
    let n = height * width;
    // Pixel-major on disk; reorder into band-sequential memory.
    let mut data = vec![0.0f64; n * bands];
    let mut pixels = 0usize;
    for (row, line) in lines.enumerate() {
        if row >= n {
            return Err(format_err("csv", path, format!("more than {n} pixel rows")));
        }
        let mut count = 0usize;
        for (b, token) in line.split(';').enumerate() {
            if b >= bands {
                return Err(format_err(
                    "csv",
                    path,
                    format!("row {row} has more than {bands} values"),
                ));
            }
            let v: f64 = token.trim().parse().map_err(|_| {
                format_err("csv", path, format!("bad value {token:?} in row {row}"))
            })?;
            data[b * n + row] = v;
            count += 1;
        }
        if count != bands {
            return Err(format_err(
                "csv",
                path,
                format!("row {row} has {count} values, expected {bands}"),
            ));
        }
        pixels += 1;
    }
    if pixels != n {
        return Err(format_err(
            "csv",
            path,
            format!("{pixels} pixel rows, header promises {n}"),
        ));
    }
    HsiCube::new(height, width, bands, data)
}

fn save_cube_csv(cube: &HsiCube, path: &Path) -> Result<()> {
    let n = cube.num_pixels();
    let mut out = String::new();
    out.push_str(&format!(
        "{};{};{}\n",
        cube.height(),
        cube.width(),
        cube.bands()
    ));
    for i in 0..n {
        for b in 0..cube.bands() {
            if b > 0 {
                out.push(';');
            }
            out.push_str(&format!("{}", cube.data()[b * n + i]));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

// ---------------------------------------------------------------------------
// Rasters
// ---------------------------------------------------------------------------

/// Load a raster from disk.
pub fn load_raster(path: &Path, format: RasterFormat) -> Result<Raster> {
    match format {
        RasterFormat::RawF32 => load_raster_raw_f32(path),
        RasterFormat::Csv => load_raster_csv(path),
        RasterFormat::Pgm => load_raster_pgm(path),
    }
}

/// Save a raster to disk. PGM accepts binary rasters only.
pub fn save_raster(raster: &Raster, path: &Path, format: RasterFormat) -> Result<()> {
    match format {
        RasterFormat::RawF32 => save_raster_raw_f32(raster, path),
        RasterFormat::Csv => save_raster_csv(raster, path),
        RasterFormat::Pgm => save_raster_pgm(raster, path),
    }
}

fn load_raster_raw_f32(path: &Path) -> Result<Raster> {
    let mut hdr_path = path.as_os_str().to_owned();
    hdr_path.push(".hdr");
    let hdr_path = PathBuf::from(hdr_path);
    let text = fs::read_to_string(&hdr_path).map_err(|e| io_err(&hdr_path, e))?;
    let mut width = None;
    let mut height = None;
    for line in text.lines() {
        let Some((key, value)) = line.split_once('=') else {
            continue;
        };
        match key.trim() {
            "width" => width = value.trim().parse::<usize>().ok(),
            "height" => height = value.trim().parse::<usize>().ok(),
            _ => {}
        }
    }
    let width = width.ok_or_else(|| format_err("raw-f32", &hdr_path, "missing width"))?;
    let height = height.ok_or_else(|| format_err("raw-f32", &hdr_path, "missing height"))?;
    let payload = fs::read(path).map_err(|e| io_err(path, e))?;
    if payload.len() != width * height * 4 {
        return Err(format_err(
            "raw-f32",
            path,
            format!(
                "payload holds {} bytes, header {}x{} needs {}",
                payload.len(),
                height,
                width,
                width * height * 4
            ),
        ));
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Raster::new(height, width, data)
}

fn save_raster_raw_f32(raster: &Raster, path: &Path) -> Result<()> {
    let mut payload = Vec::with_capacity(raster.data().len() * 4);
    for &v in raster.data() {
        payload.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, payload).map_err(|e| io_err(path, e))?;
    let mut hdr_path = path.as_os_str().to_owned();
    hdr_path.push(".hdr");
    let hdr_path = PathBuf::from(hdr_path);
    let header = format!("width = {}\nheight = {}\n", raster.width(), raster.height());
    fs::write(&hdr_path, header).map_err(|e| io_err(&hdr_path, e))
}

fn load_raster_csv(path: &Path) -> Result<Raster> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(';')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| format_err("csv", path, format!("bad value in row {i}")))?;
        rows.push(row);
    }
    let height = rows.len();
    if height == 0 {
        return Err(format_err("csv", path, "empty file"));
    }
    let width = rows[0].len();
    if rows.iter().any(|r| r.len() != width) {
        return Err(format_err("csv", path, "ragged rows"));
    }
    Raster::new(height, width, rows.into_iter().flatten().collect())
}

fn save_raster_csv(raster: &Raster, path: &Path) -> Result<()> {
    let mut out = String::new();
    for y in 0..raster.height() {
        for x in 0..raster.width() {
            if x > 0 {
                out.push(';');
            }
            out.push_str(&format!("{}", raster.get(y, x)));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

fn load_raster_pgm(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut pos = 0usize;
    let mut tokens: Vec<String> = Vec::new();
    // P5 header: magic, width, height, maxval as whitespace-separated tokens,
    // with #-comments allowed; a single whitespace byte ends the header.
    while tokens.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if tokens.len() < 4 {
        return Err(format_err("pgm", path, "truncated header"));
    }
    if tokens[0] != "P5" {
        return Err(format_err("pgm", path, "not a binary P5 file"));
    }
    let width: usize = tokens[1]
        .parse()
        .map_err(|_| format_err("pgm", path, "bad width"))?;
    let height: usize = tokens[2]
        .parse()
        .map_err(|_| format_err("pgm", path, "bad height"))?;
    if tokens[3] != "255" {
        return Err(format_err("pgm", path, "maxval must be 255"));
    }
    pos += 1; // single whitespace after maxval
    let payload = &bytes[pos.min(bytes.len())..];
    if payload.len() != width * height {
        return Err(format_err(
            "pgm",
            path,
            format!(
                "payload holds {} bytes, need {}",
                payload.len(),
                width * height
            ),
        ));
    }
    let data: Vec<f64> = payload
        .iter()
        .map(|&b| match b {
            0 => Ok(0.0),
            255 => Ok(1.0),
            other => Err(format_err(
                "pgm",
                path,
                format!("pixel value {other} is neither 0 nor 255"),
            )),
        })
        .collect::<Result<_>>()?;
    Raster::new(height, width, data)
}

fn save_raster_pgm(raster: &Raster, path: &Path) -> Result<()> {
    if !raster.is_binary() {
        return Err(Error::InvalidParam(
            "pgm export requires a binary raster (values in {0, 1})".into(),
        ));
    }
    let mut out = Vec::with_capacity(raster.data().len() + 32);
    write!(out, "P5\n{} {}\n255\n", raster.width(), raster.height())
        .expect("write to vec cannot fail");
    out.extend(
        raster
            .data()
            .iter()
            .map(|&v| if v == 1.0 { 255u8 } else { 0u8 }),
    );
    fs::write(path, out).map_err(|e| io_err(path, e))
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
