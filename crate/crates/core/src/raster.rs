//! Raster containers, masks and sampling.
//!
//! Samples are unit-range floats; 8-bit values only appear at the I/O
//! boundary. Sample `i` sits at continuous coordinate `i` (pixel centers on
//! integers), which is the single convention used by every warp and
//! projection in the crate.

use std::ops::Deref;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Maximum channel count; color images have three.
pub const MAX_CHANNELS: usize = 3;

/// One sampled pixel. Only the first `channels` entries are meaningful.
pub type Px<T> = [T; MAX_CHANNELS];

/// Row-major `height x width x channels` image with unit-range samples.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage<T> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<T>,
}

fn check_shape(width: usize, height: usize, channels: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!("image must be non-empty, got {width}x{height}")));
    }
    if channels != 1 && channels != 3 {
        return Err(Error::invalid(format!("channel count must be 1 or 3, got {channels}")));
    }
    Ok(())
}

impl<T: Real> RasterImage<T> {
    /// Black image.
    pub fn new(width: usize, height: usize, channels: usize) -> Result<Self> {
        check_shape(width, height, channels)?;
        Ok(Self {
            width,
            height,
            channels,
            data: vec![T::zero(); width * height * channels],
        })
    }

    /// Image where every pixel equals `value`; `value.len()` is the channel count.
    pub fn filled(width: usize, height: usize, value: &[T]) -> Result<Self> {
        check_shape(width, height, value.len())?;
        let mut data = Vec::with_capacity(width * height * value.len());
        for _ in 0..width * height {
            data.extend_from_slice(value);
        }
        Ok(Self {
            width,
            height,
            channels: value.len(),
            data,
        })
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        check_shape(width, height, channels)?;
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "sample count {} does not match {width}x{height}x{channels}",
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

    pub fn from_fn<F>(width: usize, height: usize, channels: usize, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, usize, &mut [T]),
    {
        let mut img = Self::new(width, height, channels)?;
        for y in 0..height {
            for x in 0..width {
                f(x, y, img.pixel_mut(x, y));
            }
        }
        Ok(img)
    }

    /// Converts 8-bit samples to unit range.
    pub fn from_u8(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        let scale = T::lit(255.0);
        let data = bytes.iter().map(|&b| T::from_u8(b).unwrap() / scale).collect();
        Self::from_vec(width, height, channels, data)
    }

    /// Quantizes to 8 bits, clamping to `[0, 1]` and rounding half away from zero.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
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

    /// `(width, height)`.
    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[T] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [T] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// Pixel by linear index `y * width + x`.
    #[inline]
    pub fn pixel_at(&self, idx: usize) -> &[T] {
        let i = idx * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_at_mut(&mut self, idx: usize) -> &mut [T] {
        let i = idx * self.channels;
        &mut self.data[i..i + self.channels]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: T) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Bilinear sample at continuous `(x, y)`.
    ///
    /// `y` is clamped to `[0, height-1]`. With `wrap_x` the horizontal
    /// coordinate is reduced modulo the width, otherwise it is clamped.
    pub fn sample_bilinear(&self, x: T, y: T, wrap_x: bool) -> Px<T> {
        let mut out = [T::zero(); MAX_CHANNELS];
        self.sample_into(x, y, wrap_x, &mut out[..self.channels]);
        out
    }

    pub fn sample_into(&self, x: T, y: T, wrap_x: bool, out: &mut [T]) {
        let w = self.width;
        let h = self.height;
        let ymax = T::from_usize_lossy(h - 1);
        let yc = y.max(T::zero()).min(ymax);
        let y0 = yc.floor();
        let fy = yc - y0;
        let y0 = y0.to_usize().unwrap_or(0).min(h - 1);
        let y1 = (y0 + 1).min(h - 1);

        let (x0, x1, fx) = if wrap_x {
            let wr = T::from_usize_lossy(w);
            let xr = x.rem_euclid_real(wr);
            let xf = xr.floor();
            let x0 = xf.to_usize().unwrap_or(0) % w;
            (x0, (x0 + 1) % w, xr - xf)
        } else {
            let xmax = T::from_usize_lossy(w - 1);
            let xc = x.max(T::zero()).min(xmax);
            let xf = xc.floor();
            let x0 = xf.to_usize().unwrap_or(0).min(w - 1);
            (x0, (x0 + 1).min(w - 1), xc - xf)
        };

        // lerp form: exact on constant neighborhoods and at integer centers
        let p00 = self.pixel(x0, y0);
        let p10 = self.pixel(x1, y0);
        let p01 = self.pixel(x0, y1);
        let p11 = self.pixel(x1, y1);
        for c in 0..self.channels {
            let top = p00[c] + fx * (p10[c] - p00[c]);
            let bottom = p01[c] + fx * (p11[c] - p01[c]);
            out[c] = top + fy * (bottom - top);
        }
    }

    /// Rec. 601 luma; single-channel images are returned as a copy.
    pub fn to_gray(&self) -> RasterImage<T> {
        if self.channels == 1 {
            return self.clone();
        }
        let (r, g, b) = (T::lit(0.299), T::lit(0.587), T::lit(0.114));
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| r * p[0] + g * p[1] + b * p[2])
            .collect();
        RasterImage {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Circular horizontal shift: output column `x` takes input column `x - k`.
    pub fn roll_x(&self, k: isize) -> RasterImage<T> {
        let w = self.width as isize;
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                let sx = (x as isize - k).rem_euclid(w) as usize;
                out.pixel_mut(x, y).copy_from_slice(self.pixel(sx, y));
            }
        }
        out
    }

    /// Separable Gaussian blur of every channel; borders clamp, or wrap
    /// horizontally when `wrap_x`.
    pub fn gaussian_blur(&self, sigma: T, wrap_x: bool) -> RasterImage<T> {
        if sigma <= T::zero() {
            return self.clone();
        }
        let radius = (sigma * T::lit(3.0)).ceil().to_usize().unwrap_or(1).max(1);
        let two_s2 = T::lit(2.0) * sigma * sigma;
        let mut kernel: Vec<T> = (0..=2 * radius)
            .map(|i| {
                let d = T::from_usize_lossy(i) - T::from_usize_lossy(radius);
                (-(d * d) / two_s2).exp()
            })
            .collect();
        let sum: T = kernel.iter().copied().sum();
        kernel.iter_mut().for_each(|k| *k /= sum);

        let (w, h, ch) = (self.width, self.height, self.channels);
        let r = radius as isize;
        let mut tmp = vec![T::zero(); self.data.len()];
        for y in 0..h {
            for x in 0..w {
                for c in 0..ch {
                    let mut acc = T::zero();
                    for (k, &kv) in kernel.iter().enumerate() {
                        let sx = x as isize + k as isize - r;
                        let sx = if wrap_x {
                            sx.rem_euclid(w as isize) as usize
                        } else {
                            sx.clamp(0, w as isize - 1) as usize
                        };
                        acc += kv * self.data[(y * w + sx) * ch + c];
                    }
                    tmp[(y * w + x) * ch + c] = acc;
                }
            }
        }
        let mut out = vec![T::zero(); self.data.len()];
        for y in 0..h {
            for x in 0..w {
                for c in 0..ch {
                    let mut acc = T::zero();
                    for (k, &kv) in kernel.iter().enumerate() {
                        let sy = (y as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
                        acc += kv * tmp[(sy * w + x) * ch + c];
                    }
                    out[(y * w + x) * ch + c] = acc;
                }
            }
        }
        RasterImage {
            width: w,
            height: h,
            channels: ch,
            data: out,
        }
    }

    /// Half-resolution image by 2x2 averaging (odd trailing rows/columns clamp).
    pub fn downsample_half(&self) -> RasterImage<T> {
        let nw = self.width.div_ceil(2).max(1);
        let nh = self.height.div_ceil(2).max(1);
        let quarter = T::lit(0.25);
        RasterImage::from_fn(nw, nh, self.channels, |x, y, px| {
            let x0 = (2 * x).min(self.width - 1);
            let x1 = (2 * x + 1).min(self.width - 1);
            let y0 = (2 * y).min(self.height - 1);
            let y1 = (2 * y + 1).min(self.height - 1);
            for (c, v) in px.iter_mut().enumerate() {
                *v = quarter
                    * (self.get(x0, y0, c) + self.get(x1, y0, c) + self.get(x0, y1, c) + self.get(x1, y1, c));
            }
        })
        .expect("non-empty")
    }

    /// Copies `src` into `self` wherever `mask` is set.
    pub fn copy_masked(&mut self, src: &RasterImage<T>, mask: &BitMask) -> Result<()> {
        self.check_same_dims(src.dims())?;
        mask.check_dims(self.dims())?;
        if src.channels != self.channels {
            return Err(Error::invalid("channel count mismatch"));
        }
        for idx in mask.iter_set() {
            let s = idx * self.channels;
            self.data[s..s + self.channels].copy_from_slice(&src.data[s..s + self.channels]);
        }
        Ok(())
    }

    pub fn check_same_dims(&self, other: (usize, usize)) -> Result<()> {
        if self.dims() != other {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: other,
            });
        }
        Ok(())
    }
}

/// Unit float to 8 bits: clamp, scale, round half away from zero.
#[inline]
pub fn quantize<T: Real>(v: T) -> u8 {
    let s = v.max(T::zero()).min(T::one()) * T::lit(255.0);
    s.round().to_u8().unwrap_or(255)
}

/// Maximum `|width/height - 2|` accepted for an equirectangular image.
///
/// Real cameras emit sizes such as 1810x906 that are not exactly 2:1.
pub const EQUIRECT_ASPECT_TOLERANCE: f64 = 0.01;

/// A raster in equirectangular projection.
///
/// Pixel `(u, v)` looks along longitude `2*pi*(u+0.5)/W - pi` and latitude
/// `pi/2 - pi*(v+0.5)/H`; column `u` and `u + W` address the same direction.
#[derive(Debug, Clone, PartialEq)]
pub struct EquirectImage<T> {
    image: RasterImage<T>,
}

impl<T: Real> EquirectImage<T> {
    pub fn new(image: RasterImage<T>) -> Result<Self> {
        let aspect = image.width as f64 / image.height as f64;
        if (aspect - 2.0).abs() > EQUIRECT_ASPECT_TOLERANCE {
            return Err(Error::invalid(format!(
                "equirectangular image must be 2:1, got {}x{}",
                image.width, image.height
            )));
        }
        Ok(Self { image })
    }

    pub fn as_raster(&self) -> &RasterImage<T> {
        &self.image
    }

    pub fn raster_mut(&mut self) -> &mut RasterImage<T> {
        &mut self.image
    }

    pub fn into_raster(self) -> RasterImage<T> {
        self.image
    }
}

impl<T> Deref for EquirectImage<T> {
    type Target = RasterImage<T>;

    fn deref(&self) -> &RasterImage<T> {
        &self.image
    }
}

/// One boolean per pixel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BitMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::invalid(format!(
                "mask has {} bits, expected {}",
                bits.len(),
                width * height
            )));
        }
        Ok(Self { width, height, bits })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
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
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    #[inline]
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.bits.iter().any(|&b| b)
    }

    /// Linear indices of set pixels, ascending.
    pub fn iter_set(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    pub fn check_dims(&self, dims: (usize, usize)) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                actual: self.dims(),
            });
        }
        Ok(())
    }

    fn zip_with(&self, other: &BitMask, f: impl Fn(bool, bool) -> bool) -> BitMask {
        assert_eq!(self.dims(), other.dims(), "mask dimensions differ");
        BitMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn and(&self, other: &BitMask) -> BitMask {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &BitMask) -> BitMask {
        self.zip_with(other, |a, b| a || b)
    }

    /// Set difference `self \ other`.
    pub fn minus(&self, other: &BitMask) -> BitMask {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn not(&self) -> BitMask {
        BitMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|&b| !b).collect(),
        }
    }

    /// 3x3 erosion. Pixels beyond the image edge count as set, so the
    /// border itself does not erode; with `wrap_x` columns wrap around.
    pub fn erode(&self, wrap_x: bool) -> BitMask {
        let (w, h) = (self.width as isize, self.height as isize);
        BitMask::from_fn(self.width, self.height, |x, y| {
            if !self.get(x, y) {
                return false;
            }
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let ny = y as isize + dy;
                    let mut nx = x as isize + dx;
                    if ny < 0 || ny >= h {
                        continue;
                    }
                    if wrap_x {
                        nx = nx.rem_euclid(w);
                    } else if nx < 0 || nx >= w {
                        continue;
                    }
                    if !self.bits[(ny * w + nx) as usize] {
                        return false;
                    }
                }
            }
            true
        })
    }

    /// 3x3 dilation with the same edge conventions as [`BitMask::erode`].
    pub fn dilate(&self, wrap_x: bool) -> BitMask {
        self.not().erode(wrap_x).not()
    }

    /// Nearest-neighbor resize.
    pub fn resize_nearest(&self, width: usize, height: usize) -> BitMask {
        BitMask::from_fn(width, height, |x, y| {
            let sx = (x * self.width / width).min(self.width - 1);
            let sy = (y * self.height / height).min(self.height - 1);
            self.get(sx, sy)
        })
    }
}
