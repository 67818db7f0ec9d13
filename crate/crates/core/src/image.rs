//! Dense floating-point images stored row-major, channels interleaved.
//!
//! Pixel `(x, y)` covers the square `[x, x+1) x [y, y+1)` with its center at
//! `(x + 0.5, y + 0.5)`. Every resampler in this module follows that
//! convention, which keeps area pooling and camera intrinsic scaling exact.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

/// Latents share the image layout; the identity codec makes them interchangeable.
pub type Latent = Image;

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "buffer of {} values cannot hold {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    pub fn ensure_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    /// Elementwise combination; panics on shape mismatch (callers check first).
    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Image {
        assert_eq!(self.shape(), other.shape());
        Image {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            ..*self
        }
    }

    pub fn clamp01(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn mean_abs_diff(&self, other: &Image) -> Result<f64> {
        self.ensure_same_shape(other, "mean_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / self.data.len() as f64)
    }

    pub fn mse(&self, other: &Image) -> Result<f64> {
        self.ensure_same_shape(other, "mse")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / self.data.len() as f64)
    }

    /// Area-average pooling over `factor x factor` blocks.
    pub fn area_downsample(&self, factor: usize) -> Result<Image> {
        if factor == 0 {
            return Err(Error::param("factor", "must be >= 1"));
        }
        if !self.width.is_multiple_of(factor) || !self.height.is_multiple_of(factor) {
            return Err(Error::Shape(format!(
                "{}x{} is not divisible by factor {factor}",
                self.width, self.height
            )));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let (w, h, ch) = (self.width / factor, self.height / factor, self.channels);
        let norm = 1.0 / (factor * factor) as f64;
        let mut out = Image::new(w, h, ch);
        for y in 0..h {
            for x in 0..w {
                for c in 0..ch {
                    let mut acc = 0.0;
                    for dy in 0..factor {
                        for dx in 0..factor {
                            acc += self.get(x * factor + dx, y * factor + dy, c);
                        }
                    }
                    out.set(x, y, c, acc * norm);
                }
            }
        }
        Ok(out)
    }

    /// Adjoint of [`Image::area_downsample`]: spreads each value evenly over its block.
    pub fn area_downsample_adjoint(&self, factor: usize) -> Image {
        let norm = 1.0 / (factor * factor) as f64;
        Image::from_fn(
            self.width * factor,
            self.height * factor,
            self.channels,
            |x, y, c| self.get(x / factor, y / factor, c) * norm,
        )
    }

    /// Bilinear resampling to an arbitrary size with pixel-center alignment and
    /// clamp-to-edge borders.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Image {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut out = Image::new(width, height, self.channels);
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let ty = fy - y0 as f64;
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let tx = fx - x0 as f64;
                for c in 0..self.channels {
                    let top = self.get(x0, y0, c) * (1.0 - tx) + self.get(x1, y0, c) * tx;
                    let bot = self.get(x0, y1, c) * (1.0 - tx) + self.get(x1, y1, c) * tx;
                    out.set(x, y, c, top * (1.0 - ty) + bot * ty);
                }
            }
        }
        out
    }

    /// Samples channel `c` at continuous pixel coordinates (centers at +0.5).
    /// Returns `None` outside the image.
    pub fn sample_bilinear(&self, px: f64, py: f64, out: &mut [f64]) -> bool {
        let fx = px - 0.5;
        let fy = py - 0.5;
        if fx < -0.5 || fy < -0.5 || fx > self.width as f64 - 0.5 || fy > self.height as f64 - 0.5
        {
            return false;
        }
        let fx = fx.clamp(0.0, (self.width - 1) as f64);
        let fy = fy.clamp(0.0, (self.height - 1) as f64);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let tx = fx - x0 as f64;
        let ty = fy - y0 as f64;
        for (c, o) in out.iter_mut().enumerate().take(self.channels) {
            let top = self.get(x0, y0, c) * (1.0 - tx) + self.get(x1, y0, c) * tx;
            let bot = self.get(x0, y1, c) * (1.0 - tx) + self.get(x1, y1, c) * tx;
            *o = top * (1.0 - ty) + bot * ty;
        }
        true
    }

    /// Bicubic (Keys, a = -0.5) upsampling by an integer factor.
    pub fn upsample_bicubic(&self, factor: usize) -> Image {
        fn keys(t: f64) -> f64 {
            let a = -0.5;
            let t = t.abs();
            if t <= 1.0 {
                (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
            } else if t < 2.0 {
                a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
            } else {
                0.0
            }
        }
        let (w, h) = (self.width * factor, self.height * factor);
        let inv = 1.0 / factor as f64;
        let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
        Image::from_fn(w, h, self.channels, |x, y, c| {
            let fx = (x as f64 + 0.5) * inv - 0.5;
            let fy = (y as f64 + 0.5) * inv - 0.5;
            let ix = fx.floor() as isize;
            let iy = fy.floor() as isize;
            let mut acc = 0.0;
            for m in -1..=2isize {
                let wy = keys(fy - (iy + m) as f64);
                let yy = clampi(iy + m, self.height);
                for n in -1..=2isize {
                    let wx = keys(fx - (ix + n) as f64);
                    acc += wx * wy * self.get(clampi(ix + n, self.width), yy, c);
                }
            }
            acc
        })
    }

    /// Quantizes to 8 bits per channel; values are clamped to [0, 1] first.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_u8(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<Image> {
        Image::from_vec(
            width,
            height,
            channels,
            bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        )
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let color = match self.channels {
            1 => image::ExtendedColorType::L8,
            3 => image::ExtendedColorType::Rgb8,
            4 => image::ExtendedColorType::Rgba8,
            n => {
                return Err(Error::Shape(format!(
                    "cannot save a {n}-channel image as PNG"
                )))
            }
        };
        image::save_buffer(
            path,
            &self.to_u8(),
            self.width as u32,
            self.height as u32,
            color,
        )
        .map_err(|e| Error::ImageFile {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }

    /// Loads a PNG as 3-channel RGB in [0, 1].
    pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|e| Error::ImageFile {
                path: path.to_path_buf(),
                msg: e.to_string(),
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        Image::from_u8(w as usize, h as usize, 3, img.as_raw())
    }

    /// Raw dump: width, height, channels as little-endian u64, then the
    /// samples as little-endian f64.
    pub fn save_raw(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut bytes = Vec::with_capacity(24 + 8 * self.data.len());
        for d in [self.width, self.height, self.channels] {
            bytes.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load_raw(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = || Error::Data(format!("{}: truncated raw image", path.display()));
        if bytes.len() < 24 {
            return Err(bad());
        }
        let dim = |k: usize| u64::from_le_bytes(bytes[8 * k..8 * k + 8].try_into().expect("8 bytes")) as usize;
        let (w, h, c) = (dim(0), dim(1), dim(2));
        let body = &bytes[24..];
        if w.checked_mul(h).and_then(|n| n.checked_mul(c)).map(|n| n * 8) != Some(body.len()) {
            return Err(bad());
        }
        let data = body
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        Image::from_vec(w, h, c, data)
    }

    /// Writes `self` into `dst` with its top-left corner at `(x0, y0)`.
    pub fn blit_into(&self, dst: &mut Image, x0: usize, y0: usize) {
        assert_eq!(self.channels, dst.channels);
        for y in 0..self.height {
            for x in 0..self.width {
                if x0 + x < dst.width && y0 + y < dst.height {
                    for c in 0..self.channels {
                        dst.set(x0 + x, y0 + y, c, self.get(x, y, c));
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn area_downsample_block_average() {
        let img = Image::from_vec(2, 2, 1, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let lr = img.area_downsample(2).unwrap();
        assert_eq!(lr.shape(), (1, 1, 1));
        assert_eq!(lr.get(0, 0, 0), 0.5);
        assert!(img.area_downsample(3).is_err());
        assert_eq!(img.area_downsample(1).unwrap(), img);
    }

    #[test]
    fn adjoint_of_downsample() {
        // <D x, y> == <x, D^T y>
        let x = Image::from_fn(6, 4, 2, |x, y, c| (x * 7 + y * 3 + c) as f64 * 0.1 % 1.0);
        let y = Image::from_fn(3, 2, 2, |x, y, c| ((x + 2 * y + c) as f64).sin());
        let dx = x.area_downsample(2).unwrap();
        let lhs: f64 = dx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let dty = y.area_downsample_adjoint(2);
        let rhs: f64 = x.data().iter().zip(dty.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn resamplers_preserve_constants() {
        let img = Image::filled(5, 3, 3, 0.37);
        let up = img.resize_bilinear(10, 6);
        assert!(up.data().iter().all(|&v| (v - 0.37).abs() < 1e-12));
        let up = img.upsample_bicubic(4);
        assert!(up.data().iter().all(|&v| (v - 0.37).abs() < 1e-12));
    }

    #[test]
    fn bicubic_reproduces_linear_ramps_in_the_interior() {
        let img = Image::from_fn(8, 8, 1, |x, _, _| x as f64 * 0.1);
        let up = img.upsample_bicubic(2);
        // interior samples lie on the ramp 0.1 * ((x + 0.5) / 2 - 0.5)
        for x in 4..12 {
            let expect = 0.1 * ((x as f64 + 0.5) / 2.0 - 0.5);
            assert!((up.get(x, 5, 0) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn png_round_trip_is_byte_exact() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(4, 3, 3, |x, y, c| ((x + y + c) % 5) as f64 / 4.0);
        let p = dir.path().join("a.png");
        img.save_png(&p).unwrap();
        let back = Image::load_png(&p).unwrap();
        assert_eq!(back.to_u8(), img.to_u8());
    }
}
