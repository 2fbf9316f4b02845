//! Grayscale / RGB pixel grids with intensities in `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major, channel-interleaved intensity grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRaster {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<f64>,
}

/// `(width, height, channels)`.
pub type Dims = (usize, usize, usize);

impl ImageRaster {
    /// Builds a raster, rejecting bad shapes and intensities outside `[0, 1]`.
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::spec("image width and height must be >= 1"));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::spec(format!("unsupported channel count {channels}")));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::DimensionMismatch {
                expected: format!("{} values", width * height * channels),
                found: format!("{} values", pixels.len()),
            });
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::spec(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    /// Builds a raster, clamping every value into `[0, 1]` (NaN maps to 0).
    pub fn from_clamped(width: usize, height: usize, channels: usize, mut pixels: Vec<f64>) -> Self {
        assert_eq!(pixels.len(), width * height * channels, "pixel buffer size");
        for v in &mut pixels {
            *v = clamp01(*v);
        }
        Self {
            width,
            height,
            channels,
            pixels,
        }
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self::from_clamped(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> Dims {
        (self.width, self.height, self.channels)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    /// One channel as a `height × width` row-major plane.
    pub fn plane(&self, c: usize) -> Vec<f64> {
        self.pixels.iter().skip(c).step_by(self.channels).copied().collect()
    }

    /// Reassembles channel planes; values are clamped.
    pub fn from_planes(width: usize, height: usize, planes: &[Vec<f64>]) -> Self {
        let channels = planes.len();
        let mut pixels = vec![0.0; width * height * channels];
        for (c, plane) in planes.iter().enumerate() {
            for (i, v) in plane.iter().enumerate() {
                pixels[i * channels + c] = *v;
            }
        }
        Self::from_clamped(width, height, channels, pixels)
    }

    /// Applies `f` independently to every channel plane.
    pub fn map_planes(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Self {
        let planes: Vec<Vec<f64>> = (0..self.channels).map(|c| f(&self.plane(c))).collect();
        Self::from_planes(self.width, self.height, &planes)
    }

    /// Luma plane (0.299 R + 0.587 G + 0.114 B); grayscale images pass through.
    pub fn luma(&self) -> Vec<f64> {
        if self.channels == 1 {
            return self.pixels.clone();
        }
        self.pixels
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    /// Snaps every intensity to the nearest multiple of `1/65535`.
    pub fn quantized16(&self) -> Self {
        let pixels = self.pixels.iter().map(|&v| f64::from(to_u16(v)) / 65535.0).collect();
        Self { pixels, ..*self }
    }

    pub fn check_dims(&self, expected: Dims) -> Result<()> {
        if self.dims() != expected {
            return Err(Error::DimensionMismatch {
                expected: fmt_dims(expected),
                found: fmt_dims(self.dims()),
            });
        }
        Ok(())
    }
}

pub(crate) fn fmt_dims((w, h, c): Dims) -> String {
    format!("{w}x{h}x{c}")
}

#[inline]
pub fn clamp01(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

#[inline]
pub fn to_u16(v: f64) -> u16 {
    (clamp01(v) * 65535.0).round() as u16
}

#[inline]
pub fn to_u8(v: f64) -> u8 {
    (clamp01(v) * 255.0).round() as u8
}

/// Mirror an out-of-range index back into `0..n` without repeating the
/// edge sample (`d c b | a b c d | c b a`). Works for any offset.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_intensity() {
        assert!(ImageRaster::new(1, 1, 1, vec![1.5]).is_err());
        assert!(ImageRaster::new(2, 1, 1, vec![0.5]).is_err());
        assert!(ImageRaster::new(1, 1, 2, vec![0.5, 0.5]).is_err());
        assert!(ImageRaster::new(1, 1, 1, vec![0.5]).is_ok());
    }

    #[test]
    fn reflect_index_matches_mirror_pattern() {
        let got: Vec<usize> = (-4..8).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![2, 3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1]);
        assert_eq!(reflect_index(-7, 1), 0);
    }

    #[test]
    fn planes_roundtrip() {
        let img = ImageRaster::new(2, 1, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert_eq!(img.plane(1), vec![0.2, 0.5]);
        let back = img.map_planes(|p| p.to_vec());
        assert_eq!(back, img);
    }

    #[test]
    fn quantization_is_idempotent() {
        let img = ImageRaster::new(3, 1, 1, vec![0.123456, 1.0 / 3.0, 0.9]).unwrap();
        let q = img.quantized16();
        assert_eq!(q.quantized16(), q);
    }
}
