//! Attribution-map values and their on-disk carriers.
//!
//! Two interchange formats: the "IPAM" binary layout (magic `IPAM`,
//! version u16 = 1, height u32, width u32, channels u16 ∈ {1, 3}, then
//! height·width·channels little-endian f32 row-major channel-interleaved)
//! and plain CSV (comma-separated values, newline rows, '.' decimals).
//! Multi-channel maps collapse to 2D by per-pixel channel sum on load.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

const IPAM_MAGIC: &[u8; 4] = b"IPAM";
const IPAM_VERSION: u16 = 1;

/// H×W grid of attribution scores. All values finite, dimensions ≥ 1,
/// non-empty.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl AttributionMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Validation("attribution map cannot be empty".into()));
        }
        if values.len() != height * width {
            return Err(Error::Dimension(format!(
                "attribution payload holds {} values, expected {}x{} = {}",
                values.len(),
                height,
                width,
                height * width
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite attribution value at index {pos}"
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction forbids empty maps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// Flat index of the maximum value; ties resolve to the first
    /// occurrence in row-major order.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        best
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttributionFormat {
    Binary,
    Csv,
}

/// Read an attribution file, sniffing IPAM binary vs CSV by magic bytes.
/// A 3-channel payload is reduced to 2D by channel summation. When
/// `expected_dims` is given, mismatching dimensions are rejected.
pub fn load_attribution(
    path: impl AsRef<Path>,
    expected_dims: Option<(usize, usize)>,
) -> Result<AttributionMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let map = if bytes.starts_with(IPAM_MAGIC) {
        parse_ipam(&bytes)?
    } else {
        parse_csv(&bytes)?
    };
    if let Some((h, w)) = expected_dims {
        if (map.height, map.width) != (h, w) {
            return Err(Error::Argument(format!(
                "attribution map is {}x{} but {h}x{w} was expected",
                map.height, map.width
            )));
        }
    }
    Ok(map)
}

fn parse_ipam(bytes: &[u8]) -> Result<AttributionMap> {
    let err = |msg: &str| Error::Format(format!("IPAM: {msg}"));
    if bytes.len() < 16 {
        return Err(err("truncated header"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != IPAM_VERSION {
        return Err(err(&format!("unsupported version {version}")));
    }
    let height = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let channels = u16::from_le_bytes([bytes[14], bytes[15]]) as usize;
    if channels != 1 && channels != 3 {
        return Err(err(&format!("channels must be 1 or 3, got {channels}")));
    }
    let count = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| err("dimension overflow"))?;
    let payload = &bytes[16..];
    if payload.len() != count * 4 {
        return Err(err(&format!(
            "payload holds {} bytes, expected {}",
            payload.len(),
            count * 4
        )));
    }
    let mut values = Vec::with_capacity(height * width);
    for px in payload.chunks_exact(4 * channels) {
        let mut sum = 0.0f64;
        for ch in px.chunks_exact(4) {
            sum += f32::from_le_bytes(ch.try_into().unwrap()) as f64;
        }
        values.push(sum);
    }
    AttributionMap::new(height, width, values)
}

fn parse_csv(bytes: &[u8]) -> Result<AttributionMap> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| Error::Format("not IPAM and not UTF-8 text".into()))?;
    let mut values = Vec::new();
    let mut width = None;
    let mut height = 0;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|cell| {
                cell.trim().parse::<f64>().map_err(|_| {
                    Error::Format(format!(
                        "CSV line {}: cannot parse {:?} as a number",
                        lineno + 1,
                        cell.trim()
                    ))
                })
            })
            .collect::<Result<_>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Format(format!(
                    "CSV line {}: {} cells, expected {}",
                    lineno + 1,
                    row.len(),
                    w
                )))
            }
            _ => {}
        }
        values.extend(row);
        height += 1;
    }
    let width = width.ok_or_else(|| Error::Format("CSV file holds no rows".into()))?;
    AttributionMap::new(height, width, values)
}

pub fn save_attribution(
    am: &AttributionMap,
    path: impl AsRef<Path>,
    format: AttributionFormat,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        AttributionFormat::Binary => {
            let mut out = Vec::with_capacity(16 + am.len() * 4);
            out.extend_from_slice(IPAM_MAGIC);
            out.extend_from_slice(&IPAM_VERSION.to_le_bytes());
            out.extend_from_slice(&(am.height as u32).to_le_bytes());
            out.extend_from_slice(&(am.width as u32).to_le_bytes());
            out.extend_from_slice(&1u16.to_le_bytes());
            for v in &am.values {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            out
        }
        AttributionFormat::Csv => {
            let mut out = Vec::new();
            for row in am.values.chunks(am.width) {
                let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
                writeln!(out, "{}", line.join(",")).expect("vec write");
            }
            out
        }
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Affine rescale to [0, 1]; a constant map returns all zeros.
pub fn minmax_normalize(am: &AttributionMap) -> AttributionMap {
    let (lo, hi) = (am.min(), am.max());
    let values = if hi > lo {
        let span = hi - lo;
        am.values.iter().map(|v| (v - lo) / span).collect()
    } else {
        vec![0.0; am.len()]
    };
    AttributionMap {
        height: am.height,
        width: am.width,
        values,
    }
}

/// Write the min-max-normalized map as a 16-bit grayscale PNG,
/// quantized as round(v · 65535).
pub fn export_heatmap(am: &AttributionMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let normalized = minmax_normalize(am);
    let mut img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(
        am.width as u32,
        am.height as u32,
    );
    for (i, v) in normalized.values.iter().enumerate() {
        let sample = (v * 65535.0).round() as u16;
        img.put_pixel(
            (i % am.width) as u32,
            (i / am.width) as u32,
            image::Luma([sample]),
        );
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
}
