//! Point correspondences between two images.
//!
//! Correspondences come either from the built-in detector and matcher or
//! from a CSV file produced by any external tool.

mod detect;

use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{BitMask, RasterImage};
use crate::scalar::Real;

pub use detect::{detect_and_describe, DetectorParams, KeypointDescriptor, DESCRIPTOR_BITS};

/// A matched point pair: `p` in image A, `q` in image B.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence<T> {
    pub p: (T, T),
    pub q: (T, T),
    /// Match confidence, `>= 0`.
    pub score: T,
}

impl<T: Real> Correspondence<T> {
    pub fn new(p: (T, T), q: (T, T)) -> Self {
        Self { p, q, score: T::one() }
    }

    /// The same pair seen from image B.
    pub fn swapped(&self) -> Self {
        Self {
            p: self.q,
            q: self.p,
            score: self.score,
        }
    }
}

#[inline]
fn hamming(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// Best and second-best distance plus best index of `d` against `pool`.
/// Equal distances prefer the spatially closer candidate, then the lower index.
fn nearest_two(d: &[u64], at: (f64, f64), pool: &[&[u64]], pos: &[(f64, f64)]) -> (usize, u32, u32) {
    let (mut bi, mut b1, mut b2) = (usize::MAX, u32::MAX, u32::MAX);
    let mut bgap = f64::INFINITY;
    for (j, o) in pool.iter().enumerate() {
        let dist = hamming(d, o);
        let gap = (pos[j].0 - at.0).powi(2) + (pos[j].1 - at.1).powi(2);
        if dist < b1 || (dist == b1 && gap < bgap) {
            b2 = b1;
            b1 = dist;
            bi = j;
            bgap = gap;
        } else if dist < b2 {
            b2 = dist;
        }
    }
    (bi, b1, b2)
}

/// A zero-distance match is always accepted, even against an identical runner-up.
#[inline]
fn passes_ratio(best: u32, second: u32, ratio: f64) -> bool {
    best == 0 || second == u32::MAX || (best as f64) < ratio * second as f64
}

/// Mutual-nearest-neighbor matching with a symmetric Lowe ratio test.
///
/// A pair survives when each side is the other's nearest neighbor and
/// both directions pass `best < ratio * second`. The result is ordered by
/// index in `a`, and `match_descriptors(b, a)` is its mirror image.
pub fn match_descriptors<T: Real>(
    a: &[KeypointDescriptor<T>],
    b: &[KeypointDescriptor<T>],
    ratio: f64,
) -> Result<Vec<Correspondence<T>>> {
    let la = a.first().map(|k| k.bits());
    let lb = b.first().map(|k| k.bits());
    for (set, first) in [(a, la), (b, lb)] {
        if let Some(l) = first {
            if let Some(bad) = set.iter().find(|k| k.bits() != l) {
                return Err(Error::DescriptorLengthMismatch { a: l, b: bad.bits() });
            }
        }
    }
    if let (Some(x), Some(y)) = (la, lb) {
        if x != y {
            return Err(Error::DescriptorLengthMismatch { a: x, b: y });
        }
    }
    if a.is_empty() || b.is_empty() {
        return Ok(Vec::new());
    }
    let da: Vec<&[u64]> = a.iter().map(|k| k.descriptor.as_slice()).collect();
    let db: Vec<&[u64]> = b.iter().map(|k| k.descriptor.as_slice()).collect();
    let pa: Vec<(f64, f64)> = a.iter().map(|k| (k.x.as_f64(), k.y.as_f64())).collect();
    let pb: Vec<(f64, f64)> = b.iter().map(|k| (k.x.as_f64(), k.y.as_f64())).collect();
    let back: Vec<(usize, u32, u32)> = db.iter().zip(&pb).map(|(d, &at)| nearest_two(d, at, &da, &pa)).collect();
    let bits = la.unwrap_or(DESCRIPTOR_BITS) as f64;
    let mut out = Vec::new();
    for (i, d) in da.iter().enumerate() {
        let (j, d1, d2) = nearest_two(d, pa[i], &db, &pb);
        let (bi, e1, e2) = back[j];
        if bi != i || !passes_ratio(d1, d2, ratio) || !passes_ratio(e1, e2, ratio) {
            continue;
        }
        out.push(Correspondence {
            p: (a[i].x, a[i].y),
            q: (b[j].x, b[j].y),
            score: T::lit(1.0 - d1 as f64 / bits),
        });
    }
    Ok(out)
}

/// Reads correspondences from CSV with header `xa,ya,xb,yb[,score]`.
///
/// Coordinates must satisfy `0 <= x < width` and `0 <= y < height` of the
/// respective image; a missing score defaults to 1. Errors carry the
/// 1-based line number (the header is line 1).
pub fn load_matches<T: Real>(
    path: impl AsRef<Path>,
    dims_a: (usize, usize),
    dims_b: (usize, usize),
) -> Result<Vec<Correspondence<T>>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    parse_matches(&text, path, dims_a, dims_b)
}

fn parse_matches<T: Real>(
    text: &str,
    path: &Path,
    dims_a: (usize, usize),
    dims_b: (usize, usize),
) -> Result<Vec<Correspondence<T>>> {
    let malformed = |line: u64, message: String| Error::MalformedRow {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| malformed(1, e.to_string()))?.clone();
    let names: Vec<&str> = header.iter().collect();
    if names != ["xa", "ya", "xb", "yb"] && names != ["xa", "ya", "xb", "yb", "score"] {
        return Err(malformed(1, format!("expected header xa,ya,xb,yb[,score], got {}", names.join(","))));
    }
    let in_bounds = |x: f64, y: f64, (w, h): (usize, usize)| x >= 0.0 && y >= 0.0 && x < w as f64 && y < h as f64;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            malformed(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 4 && record.len() != 5 {
            return Err(malformed(line, format!("expected 4 or 5 fields, got {}", record.len())));
        }
        let mut vals = [1.0f64; 5];
        for (k, field) in record.iter().enumerate() {
            vals[k] = field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| malformed(line, format!("field {} is not a number: {field:?}", k + 1)))?;
        }
        if vals[4] < 0.0 {
            return Err(malformed(line, "score must be non-negative".into()));
        }
        if !in_bounds(vals[0], vals[1], dims_a) || !in_bounds(vals[2], vals[3], dims_b) {
            return Err(Error::OutOfBounds {
                path: path.to_path_buf(),
                line,
            });
        }
        out.push(Correspondence {
            p: (T::lit(vals[0]), T::lit(vals[1])),
            q: (T::lit(vals[2]), T::lit(vals[3])),
            score: T::lit(vals[4]),
        });
    }
    Ok(out)
}

/// Supplies correspondences between image A and image B.
///
/// Optional masks mark the pixels worth matching (e.g. panorama coverage).
pub trait CorrespondenceProvider<T: Real> {
    fn correspond(
        &self,
        a: &RasterImage<T>,
        a_mask: Option<&BitMask>,
        b: &RasterImage<T>,
        b_mask: Option<&BitMask>,
    ) -> Result<Vec<Correspondence<T>>>;
}

/// Built-in detector plus mutual ratio-test matching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureMatcher {
    pub detector: DetectorParams,
    pub ratio: f64,
}

impl Default for FeatureMatcher {
    fn default() -> Self {
        Self {
            detector: DetectorParams::default(),
            ratio: 0.7,
        }
    }
}

impl<T: Real> CorrespondenceProvider<T> for FeatureMatcher {
    fn correspond(
        &self,
        a: &RasterImage<T>,
        a_mask: Option<&BitMask>,
        b: &RasterImage<T>,
        b_mask: Option<&BitMask>,
    ) -> Result<Vec<Correspondence<T>>> {
        let ka = detect_and_describe(a, a_mask, &self.detector);
        let kb = detect_and_describe(b, b_mask, &self.detector);
        log::debug!("keypoints: {} vs {}", ka.len(), kb.len());
        match_descriptors(&ka, &kb, self.ratio)
    }
}

/// Precomputed correspondences, returned verbatim.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedMatches<T>(pub Vec<Correspondence<T>>);

impl<T: Real> CorrespondenceProvider<T> for FixedMatches<T> {
    fn correspond(
        &self,
        _a: &RasterImage<T>,
        _a_mask: Option<&BitMask>,
        _b: &RasterImage<T>,
        _b_mask: Option<&BitMask>,
    ) -> Result<Vec<Correspondence<T>>> {
        Ok(self.0.clone())
    }
}
