//! Image decoding and sRGB → CIELAB conversion.
//!
//! Pixel color distances are measured in CIELAB, so every input image is
//! converted through the fixed sRGB (D65) path: gamma expansion, linear
//! RGB → XYZ, XYZ → L*a*b*. All conversion arithmetic is f64.

use crate::error::{Error, Result};

/// sRGB → XYZ matrix (IEC 61966-2-1, D65).
const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

/// Reference white taken as the matrix image of RGB (1,1,1) so that neutral
/// grays map to a = b = 0 exactly, not merely within rounding of the
/// nominal D65 tabulation.
fn reference_white() -> [f64; 3] {
    let m = &SRGB_TO_XYZ;
    [
        m[0][0] + m[0][1] + m[0][2],
        m[1][0] + m[1][1] + m[1][2],
        m[2][0] + m[2][1] + m[2][2],
    ]
}

/// An 8-bit RGB raster, row-major. Both dimensions must be at least 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::Dimension(format!(
                "image must be at least 2x2, got {height}x{width}"
            )));
        }
        if pixels.len() != height * width {
            return Err(Error::Dimension(format!(
                "pixel buffer holds {} entries, expected {}",
                pixels.len(),
                height * width
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    /// Build from a per-pixel function, mainly for tests and fixtures.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                pixels.push(f(r, c));
            }
        }
        Self::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        self.pixels[row * self.width + col]
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    /// Encode as PNG, used when shipping perturbed images to a predictor.
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut buf = image::RgbImage::new(self.width as u32, self.height as u32);
        for (r, row) in self.pixels.chunks(self.width).enumerate() {
            for (c, px) in row.iter().enumerate() {
                buf.put_pixel(c as u32, r as u32, image::Rgb(*px));
            }
        }
        let mut out = Vec::new();
        buf.write_to(
            &mut std::io::Cursor::new(&mut out),
            image::ImageFormat::Png,
        )
        .map_err(|e| Error::Format(format!("png encode: {e}")))?;
        Ok(out)
    }
}

/// CIELAB raster matching an [`RgbImage`]. L* in [0, 100].
#[derive(Debug, Clone, PartialEq)]
pub struct LabImage {
    height: usize,
    width: usize,
    pixels: Vec<[f64; 3]>,
}

impl LabImage {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        self.pixels[row * self.width + col]
    }

    pub fn pixel_at(&self, index: usize) -> [f64; 3] {
        self.pixels[index]
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }
}

/// Decode a PNG or JPEG payload. Grayscale inputs are replicated across the
/// three channels; alpha channels are dropped.
pub fn decode_image(bytes: &[u8]) -> Result<RgbImage> {
    let format = image::guess_format(bytes)
        .map_err(|e| Error::Decode(format!("unrecognized image payload: {e}")))?;
    match format {
        image::ImageFormat::Png | image::ImageFormat::Jpeg => {}
        other => {
            return Err(Error::Decode(format!(
                "unsupported format {other:?}; only PNG and JPEG are accepted"
            )))
        }
    }
    let decoded = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| Error::Decode(e.to_string()))?;
    let rgb = decoded.to_rgb8();
    let (width, height) = (rgb.width() as usize, rgb.height() as usize);
    let pixels = rgb.pixels().map(|p| p.0).collect();
    RgbImage::new(height, width, pixels)
}

/// Convert one sRGB pixel (8-bit channels) to CIELAB.
pub fn srgb_pixel_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    fn expand(c: u8) -> f64 {
        let c = c as f64 / 255.0;
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    }
    let lin = [expand(rgb[0]), expand(rgb[1]), expand(rgb[2])];
    let white = reference_white();
    let mut f = [0.0f64; 3];
    for i in 0..3 {
        let t = (SRGB_TO_XYZ[i][0] * lin[0]
            + SRGB_TO_XYZ[i][1] * lin[1]
            + SRGB_TO_XYZ[i][2] * lin[2])
            / white[i];
        const DELTA: f64 = 6.0 / 29.0;
        f[i] = if t > DELTA * DELTA * DELTA {
            t.cbrt()
        } else {
            t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
        };
    }
    [
        116.0 * f[1] - 16.0,
        500.0 * (f[0] - f[1]),
        200.0 * (f[1] - f[2]),
    ]
}

pub fn rgb_to_lab(img: &RgbImage) -> LabImage {
    let pixels = img.pixels().iter().map(|&p| srgb_pixel_to_lab(p)).collect();
    LabImage {
        height: img.height(),
        width: img.width(),
        pixels,
    }
}
