use super::{AltTransform, SimilarityTransform2D};
use crate::error::{Error, Result};
use crate::raster::{BitMask, EquirectImage, RasterImage, MAX_CHANNELS};
use crate::scalar::Real;
use crate::segment::{LabelMap, UNLABELED};

/// Bilinear sample that ignores uncovered taps; x wraps around the source.
/// `None` when no tap with positive weight is covered.
fn sample_covered<T: Real>(img: &RasterImage<T>, cover: &BitMask, x: T, y: T, out: &mut [T]) -> bool {
    let (w, h) = img.dims();
    let y = y.max(T::zero()).min(T::from_usize_lossy(h - 1));
    let (x0f, y0f) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0f, y - y0f);
    let wi = w as isize;
    let x0 = x0f.to_isize().unwrap_or(0).rem_euclid(wi) as usize;
    let x1 = (x0 + 1) % w;
    let y0 = y0f.to_usize().unwrap_or(0).min(h - 1);
    let y1 = (y0 + 1).min(h - 1);
    let one = T::one();
    let taps = [
        (x0, y0, (one - fx) * (one - fy)),
        (x1, y0, fx * (one - fy)),
        (x0, y1, (one - fx) * fy),
        (x1, y1, fx * fy),
    ];
    let mut acc = [T::zero(); MAX_CHANNELS];
    let mut wsum = T::zero();
    for &(tx, ty, wt) in &taps {
        if wt <= T::zero() || !cover.get(tx, ty) {
            continue;
        }
        wsum += wt;
        for (a, &v) in acc.iter_mut().zip(img.pixel(tx, ty)) {
            *a += wt * v;
        }
    }
    if wsum <= T::zero() {
        return false;
    }
    for (o, a) in out.iter_mut().zip(acc) {
        // a lone full-weight tap copies the value exactly
        *o = if wsum == one { a } else { a / wsum };
    }
    true
}

/// Source positions that land on target pixel `(u, v)`, smallest x first.
///
/// Each target column is reached from every source column congruent to it
/// modulo `dst_w`.
fn similarity_preimages<T: Real>(
    t: &SimilarityTransform2D<T>,
    u: usize,
    v: usize,
    src: (usize, usize),
    dst_w: usize,
) -> impl Iterator<Item = (T, T)> {
    let half = T::lit(0.5);
    let (ws, hs, wd) = (
        T::from_usize_lossy(src.0),
        T::from_usize_lossy(src.1),
        T::from_usize_lossy(dst_w),
    );
    let (lo, hi) = (-half, ws - half);
    let y = (T::from_usize_lossy(v) - t.ty) / t.sy;
    let rows_ok = y >= -half && y < hs - half;
    let base = T::from_usize_lossy(u) - t.tx;
    // smallest k whose preimage is at or right of the left edge
    let k0 = ((lo * t.sx - base) / wd).ceil();
    let sx = t.sx;
    (0u32..)
        .map(move |i| (base + (k0 + T::from_u32(i).expect("small")) * wd) / sx)
        .take_while(move |&x| rows_ok && x < hi)
        .filter(move |&x| x >= lo)
        .map(move |x| (x, y))
}

/// Single preimage under the inverse of `m`, if it lies inside the source.
fn alt_preimage<T: Real>(inv: &AltTransform<T>, u: usize, v: usize, src: (usize, usize)) -> Option<(T, T)> {
    let (x, y) = inv.apply(T::from_usize_lossy(u), T::from_usize_lossy(v));
    let half = T::lit(0.5);
    let inside = x.is_finite()
        && y.is_finite()
        && x >= -half
        && y >= -half
        && x < T::from_usize_lossy(src.0) - half
        && y < T::from_usize_lossy(src.1) - half;
    inside.then_some((x, y))
}

#[inline]
fn nearest<T: Real>(x: T, y: T, (w, h): (usize, usize)) -> (usize, usize) {
    let xn = x.round().to_isize().unwrap_or(0).rem_euclid(w as isize) as usize;
    let yn = y.round().to_isize().unwrap_or(0).clamp(0, h as isize - 1) as usize;
    (xn, yn)
}

/// Reverse mapping with the first covered preimage winning. A target pixel
/// is covered when the source pixel nearest its preimage is covered.
fn reverse_warp<T: Real, I: Iterator<Item = (T, T)>>(
    pano: &RasterImage<T>,
    cover: &BitMask,
    dst: (usize, usize),
    preimages: impl Fn(usize, usize) -> I,
) -> Result<(EquirectImage<T>, BitMask)> {
    cover.check_dims(pano.dims())?;
    let c = pano.channels();
    let mut out = RasterImage::new(dst.0, dst.1, c)?;
    let mut out_cover = BitMask::new(dst.0, dst.1);
    let mut px = [T::zero(); MAX_CHANNELS];
    for v in 0..dst.1 {
        for u in 0..dst.0 {
            for (x, y) in preimages(u, v) {
                let (xn, yn) = nearest(x, y, pano.dims());
                if cover.get(xn, yn) && sample_covered(pano, cover, x, y, &mut px[..c]) {
                    out.pixel_mut(u, v).copy_from_slice(&px[..c]);
                    out_cover.set(u, v, true);
                    break;
                }
            }
        }
    }
    Ok((EquirectImage::new(out)?, out_cover))
}

/// Nearest-neighbor counterpart of [`reverse_warp`] for label maps;
/// uncovered target pixels are [`UNLABELED`].
fn reverse_warp_labels<T: Real, I: Iterator<Item = (T, T)>>(
    labels: &LabelMap,
    cover: &BitMask,
    dst: (usize, usize),
    preimages: impl Fn(usize, usize) -> I,
) -> Result<(LabelMap, BitMask)> {
    cover.check_dims(labels.dims())?;
    let mut ids = vec![UNLABELED; dst.0 * dst.1];
    let mut out_cover = BitMask::new(dst.0, dst.1);
    for v in 0..dst.1 {
        for u in 0..dst.0 {
            for (x, y) in preimages(u, v) {
                let (xn, yn) = nearest(x, y, labels.dims());
                if cover.get(xn, yn) {
                    ids[v * dst.0 + u] = labels.id(xn, yn);
                    out_cover.set(u, v, true);
                    break;
                }
            }
        }
    }
    Ok((labels.with_ids(dst.0, dst.1, ids)?, out_cover))
}

/// Reverse-mapped warp of a covered panorama into a `dst_w x dst_h` frame.
///
/// Each target column is reached from every source column congruent to it
/// modulo `dst_w`; when several covered source positions land on the same
/// target pixel, the one with the smallest source x wins. A target pixel
/// is covered when the source pixel nearest its preimage is covered.
pub fn warp_panorama<T: Real>(
    pano: &EquirectImage<T>,
    cover: &BitMask,
    t: &SimilarityTransform2D<T>,
    dst_w: usize,
    dst_h: usize,
) -> Result<(EquirectImage<T>, BitMask)> {
    t.validate()?;
    let src = pano.dims();
    reverse_warp(pano, cover, (dst_w, dst_h), |u, v| similarity_preimages(t, u, v, src, dst_w))
}

/// Warps a panorama label map the same way as [`warp_panorama`], taking
/// the nearest label instead of interpolating.
pub fn warp_labels<T: Real>(
    labels: &LabelMap,
    cover: &BitMask,
    t: &SimilarityTransform2D<T>,
    dst_w: usize,
    dst_h: usize,
) -> Result<(LabelMap, BitMask)> {
    t.validate()?;
    let src = labels.dims();
    reverse_warp_labels(labels, cover, (dst_w, dst_h), |u, v| similarity_preimages(t, u, v, src, dst_w))
}

fn inverted<T: Real>(t: &AltTransform<T>) -> Result<AltTransform<T>> {
    let m = t
        .m
        .inverse()
        .ok_or_else(|| Error::DegenerateConfiguration("transform is not invertible".into()))?;
    Ok(AltTransform { kind: t.kind, m })
}

/// Warp under an affine or projective transform; no horizontal wrap.
pub fn warp_panorama_alt<T: Real>(
    pano: &EquirectImage<T>,
    cover: &BitMask,
    t: &AltTransform<T>,
    dst_w: usize,
    dst_h: usize,
) -> Result<(EquirectImage<T>, BitMask)> {
    let inv = inverted(t)?;
    let src = pano.dims();
    reverse_warp(pano, cover, (dst_w, dst_h), |u, v| alt_preimage(&inv, u, v, src).into_iter())
}

pub fn warp_labels_alt<T: Real>(
    labels: &LabelMap,
    cover: &BitMask,
    t: &AltTransform<T>,
    dst_w: usize,
    dst_h: usize,
) -> Result<(LabelMap, BitMask)> {
    let inv = inverted(t)?;
    let src = labels.dims();
    reverse_warp_labels(labels, cover, (dst_w, dst_h), |u, v| alt_preimage(&inv, u, v, src).into_iter())
}
