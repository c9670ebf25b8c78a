//! 8-bit grayscale raster images.
//!
//! A thin row-major buffer with the small set of operations the pipeline
//! needs: pixel access, bilinear sampling at fractional coordinates, and
//! PNG/PGM file I/O.  Pixel centres sit at integer coordinates, so a
//! `width x height` image covers `[-0.5, width - 0.5] x [-0.5, height - 0.5]`.

use crate::error::{Error, Result};

/// Row-major 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    /// A `width x height` image filled with `fill`.
    pub fn new(width: usize, height: usize, fill: u8) -> Self {
        GrayImage { width, height, data: vec![fill; width * height] }
    }

    /// Wraps an existing buffer (row-major, `width * height` bytes).
    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch { len: data.len(), width, height });
        }
        Ok(GrayImage { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.data[y * self.width + x] = value;
    }

    /// Whether real-valued coordinates fall inside the pixel grid
    /// (i.e. within half a pixel of some pixel centre).
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= -0.5 && v >= -0.5 && u < self.width as f64 - 0.5 && v < self.height as f64 - 0.5
    }

    /// Bilinear sample at fractional pixel coordinates.
    ///
    /// Interpolates the four surrounding pixel centres; where part of that
    /// neighbourhood falls outside the image (within the outer half-pixel
    /// border) it falls back to the nearest pixel.  Returns `None` outside
    /// the image entirely.
    pub fn sample_bilinear(&self, u: f64, v: f64) -> Option<f64> {
        if !self.contains(u, v) {
            return None;
        }
        let x0 = u.floor();
        let y0 = v.floor();
        let fx = u - x0;
        let fy = v - y0;
        let x0 = x0 as i64;
        let y0 = y0 as i64;
        let inside = x0 >= 0
            && y0 >= 0
            && (x0 + 1) < self.width as i64
            && (y0 + 1) < self.height as i64;
        if inside {
            let x0 = x0 as usize;
            let y0 = y0 as usize;
            let p00 = self.get(x0, y0) as f64;
            let p10 = self.get(x0 + 1, y0) as f64;
            let p01 = self.get(x0, y0 + 1) as f64;
            let p11 = self.get(x0 + 1, y0 + 1) as f64;
            let top = p00 + (p10 - p00) * fx;
            let bottom = p01 + (p11 - p01) * fx;
            Some(top + (bottom - top) * fy)
        } else {
            let x = (u.round() as i64).clamp(0, self.width as i64 - 1) as usize;
            let y = (v.round() as i64).clamp(0, self.height as i64 - 1) as usize;
            Some(self.get(x, y) as f64)
        }
    }

    /// Loads a PNG or PGM file, converting to 8-bit grayscale if needed.
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let img = image::open(path)?.into_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        Self::from_raw(w, h, img.into_raw())
    }

    /// Saves as PNG or PGM according to the file extension.
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let buf: image::GrayImage =
            image::ImageBuffer::from_raw(self.width as u32, self.height as u32, self.data.clone())
                .expect("buffer length already validated");
        buf.save(path)?;
        Ok(())
    }
}
