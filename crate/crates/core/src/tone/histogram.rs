use crate::error::{Error, Result};
use crate::raster::{quantize, BitMask, RasterImage};
use crate::scalar::Real;

pub const BINS: usize = 256;

/// Per-channel cumulative 8-bit histogram of a masked region.
///
/// Counts are kept as integers so the last bin is exactly 1 and CDF
/// comparisons are exact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CumulativeHistogram {
    cum: Vec<[u64; BINS]>,
    total: u64,
}

impl CumulativeHistogram {
    /// Builds from 8-bit samples, one iterator item per pixel.
    pub fn from_samples<'a>(channels: usize, samples: impl Iterator<Item = &'a [u8]>) -> Result<Self> {
        let mut cum = vec![[0u64; BINS]; channels];
        let mut total = 0u64;
        for px in samples {
            for (c, &v) in px.iter().take(channels).enumerate() {
                cum[c][v as usize] += 1;
            }
            total += 1;
        }
        if total == 0 {
            return Err(Error::EmptyCategory(String::new()));
        }
        for ch in cum.iter_mut() {
            for b in 1..BINS {
                ch[b] += ch[b - 1];
            }
        }
        Ok(Self { cum, total })
    }

    pub fn channels(&self) -> usize {
        self.cum.len()
    }

    /// Number of pixels counted.
    pub fn total(&self) -> u64 {
        self.total
    }

    /// Pixels with channel `c` value at most `bin`.
    pub fn count(&self, c: usize, bin: usize) -> u64 {
        self.cum[c][bin]
    }

    pub fn value(&self, c: usize, bin: usize) -> f64 {
        self.cum[c][bin] as f64 / self.total as f64
    }

    /// Kolmogorov distance to `other`, maximized over channels.
    pub fn distance(&self, other: &Self) -> f64 {
        (0..self.channels().min(other.channels()))
            .flat_map(|c| (0..BINS).map(move |b| (c, b)))
            .map(|(c, b)| (self.value(c, b) - other.value(c, b)).abs())
            .fold(0.0, f64::max)
    }
}

/// Normalized cumulative histogram of the masked pixels, quantized to 8 bits.
pub fn cdf<T: Real>(img: &RasterImage<T>, mask: &BitMask) -> Result<CumulativeHistogram> {
    mask.check_dims(img.dims())?;
    let c = img.channels();
    let bytes: Vec<u8> = mask.iter_set().flat_map(|i| img.pixel_at(i).iter().map(|&v| quantize(v))).collect();
    CumulativeHistogram::from_samples(c, bytes.chunks_exact(c))
}

/// Per-channel monotone 8-bit lookup table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToneLut {
    pub table: Vec<[u8; BINS]>,
}

impl ToneLut {
    pub fn identity(channels: usize) -> Self {
        let mut row = [0u8; BINS];
        for (i, v) in row.iter_mut().enumerate() {
            *v = i as u8;
        }
        Self {
            table: vec![row; channels],
        }
    }

    pub fn is_monotone(&self) -> bool {
        self.table.iter().all(|t| t.windows(2).all(|w| w[0] <= w[1]))
    }
}

/// `LUT[v] = min { w : ref[w] >= src[v] }` for every channel.
pub fn match_lut(src: &CumulativeHistogram, reference: &CumulativeHistogram) -> Result<ToneLut> {
    if src.channels() != reference.channels() {
        return Err(Error::invalid(format!(
            "channel count mismatch: {} vs {}",
            src.channels(),
            reference.channels()
        )));
    }
    let (ts, tr) = (src.total as u128, reference.total as u128);
    let table = (0..src.channels())
        .map(|c| {
            let mut row = [0u8; BINS];
            let mut w = 0usize;
            for (v, out) in row.iter_mut().enumerate() {
                // ref[w] >= src[v]  <=>  cum_ref[w] * total_src >= cum_src[v] * total_ref
                let need = src.cum[c][v] as u128 * tr;
                while (reference.cum[c][w] as u128) * ts < need {
                    w += 1;
                }
                *out = w as u8;
            }
            row
        })
        .collect();
    Ok(ToneLut { table })
}

/// Maps masked pixels through `lut`; other pixels are untouched.
pub fn apply_lut<T: Real>(img: &RasterImage<T>, mask: &BitMask, lut: &ToneLut) -> Result<RasterImage<T>> {
    mask.check_dims(img.dims())?;
    if lut.table.len() != img.channels() {
        return Err(Error::invalid("LUT channel count differs from image"));
    }
    let mut out = img.clone();
    let scale = T::lit(255.0);
    for i in mask.iter_set() {
        for (c, v) in out.pixel_at_mut(i).iter_mut().enumerate() {
            *v = T::from_u8(lut.table[c][quantize(*v) as usize]).expect("u8 fits") / scale;
        }
    }
    Ok(out)
}
