//! Registration of the generated panorama onto the pre-captured image.
//!
//! The main model is per-axis scale plus translation with the horizontal
//! axis taken modulo the panorama width. Affine and homography fits exist
//! for comparison only and ignore the wrap.

mod alt;
mod warp;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::correspond::{Correspondence, CorrespondenceProvider};
use crate::error::{Error, Result};
use crate::raster::{BitMask, EquirectImage};
use crate::scalar::{wrap_delta, Real};

pub use alt::{fit_alt, AltKind, AltTransform};
pub use warp::{warp_labels, warp_labels_alt, warp_panorama, warp_panorama_alt};

/// `(x, y) -> (sx * x + tx mod W, sy * y + ty)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform2D<T> {
    pub sx: T,
    pub sy: T,
    pub tx: T,
    pub ty: T,
}

impl<T: Real> Default for SimilarityTransform2D<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> SimilarityTransform2D<T> {
    pub fn identity() -> Self {
        Self {
            sx: T::one(),
            sy: T::one(),
            tx: T::zero(),
            ty: T::zero(),
        }
    }

    pub fn new(sx: T, sy: T, tx: T, ty: T) -> Result<Self> {
        let t = Self { sx, sy, tx, ty };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.sx, self.sy, self.tx, self.ty].iter().all(|v| v.is_finite());
        if !finite || self.sx <= T::zero() || self.sy <= T::zero() {
            return Err(Error::invalid(format!("invalid transform {self:?}")));
        }
        Ok(())
    }

    /// Maps a point without reducing x modulo the width.
    #[inline]
    pub fn apply_unwrapped(&self, x: T, y: T) -> (T, T) {
        (self.sx * x + self.tx, self.sy * y + self.ty)
    }

    /// Maps a point with x reduced to `[0, w)`.
    #[inline]
    pub fn apply(&self, x: T, y: T, w: T) -> (T, T) {
        let (u, v) = self.apply_unwrapped(x, y);
        (u.rem_euclid_real(w), v)
    }

    /// `self` after `first`.
    pub fn compose(&self, first: &Self) -> Self {
        Self {
            sx: self.sx * first.sx,
            sy: self.sy * first.sy,
            tx: self.sx * first.tx + self.tx,
            ty: self.sy * first.ty + self.ty,
        }
    }

    pub fn inverse(&self) -> Self {
        Self {
            sx: T::one() / self.sx,
            sy: T::one() / self.sy,
            tx: -self.tx / self.sx,
            ty: -self.ty / self.sy,
        }
    }

    /// Reduces `tx` to `[-w/2, w/2)`; the mapping modulo `w` is unchanged.
    pub fn canonical(&self, w: T) -> Self {
        let half = w * T::lit(0.5);
        let mut tx = (self.tx + half).rem_euclid_real(w) - half;
        if tx >= half {
            tx -= w;
        }
        Self { tx, ..*self }
    }

    /// Largest displacement between the images of the source-frame corners
    /// under `self` and `other`, with x compared modulo `wrap_w`.
    pub fn corner_displacement(&self, other: &Self, src_w: T, src_h: T, wrap_w: T) -> T {
        let z = T::zero();
        [(z, z), (src_w, z), (z, src_h), (src_w, src_h)]
            .iter()
            .map(|&(x, y)| {
                let (a, b) = (self.apply_unwrapped(x, y), other.apply_unwrapped(x, y));
                wrap_delta(a.0, b.0, wrap_w).hypot(a.1 - b.1)
            })
            .fold(z, T::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacParams {
    pub iters: usize,
    /// Inlier threshold on the (wrap-aware) reprojection distance, pixels.
    pub inlier_px: f64,
    pub seed: u64,
    /// Restrict the similarity model to `sx == sy`.
    pub uniform_scale: bool,
    /// Hypotheses with a scale outside `[1/max_scale, max_scale]` are discarded.
    pub max_scale: f64,
    /// Stop sampling once an all-inlier pair has been drawn with this
    /// probability, judged from the best inlier ratio so far. `1.0` always
    /// runs `iters` draws.
    pub confidence: f64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            iters: 2000,
            inlier_px: 3.0,
            seed: 0x0a11_9e5e,
            uniform_scale: false,
            max_scale: 4.0,
            confidence: 0.9999,
        }
    }
}

const MIN_INLIERS: usize = 4;
/// Draws made before the confidence stop may end sampling.
const MIN_ITERS: usize = 100;
/// Minimal samples closer than this along an axis do not define that axis' scale.
const MIN_SPREAD: f64 = 2.0;

fn failed(reason: impl Into<String>) -> Error {
    Error::AlignmentFailed {
        round: None,
        reason: reason.into(),
    }
}

struct Scored<T> {
    t: SimilarityTransform2D<T>,
    inliers: Vec<bool>,
    count: usize,
    cost: T,
}

fn score<T: Real>(t: &SimilarityTransform2D<T>, m: &[Correspondence<T>], w: T, thr2: T) -> Scored<T> {
    let mut inliers = vec![false; m.len()];
    let (mut count, mut cost) = (0, T::zero());
    for (flag, c) in inliers.iter_mut().zip(m) {
        let (u, v) = t.apply_unwrapped(c.p.0, c.p.1);
        let dx = wrap_delta(u, c.q.0, w);
        let dy = v - c.q.1;
        let r2 = dx * dx + dy * dy;
        if r2 <= thr2 {
            *flag = true;
            count += 1;
            cost += r2;
        }
    }
    Scored {
        t: *t,
        inliers,
        count,
        cost,
    }
}

/// Pair draws after which an all-inlier pair has been seen with probability
/// `confidence`, at an inlier ratio of `count / n`.
fn draws_needed(count: usize, n: usize, confidence: f64) -> usize {
    let p = (count as f64 / n as f64).powi(2);
    if confidence >= 1.0 || p <= 0.0 {
        return usize::MAX;
    }
    if p >= 1.0 {
        return 0;
    }
    ((1.0 - confidence).ln() / (1.0 - p).ln()).ceil() as usize
}

/// Least squares on the inliers, with each target x unwrapped to the copy
/// nearest the current prediction.
fn refit<T: Real>(
    t: &SimilarityTransform2D<T>,
    m: &[Correspondence<T>],
    inliers: &[bool],
    w: T,
    uniform: bool,
) -> Option<SimilarityTransform2D<T>> {
    let pts: Vec<(T, T, T, T)> = m
        .iter()
        .zip(inliers)
        .filter(|(_, &f)| f)
        .map(|(c, _)| {
            let (u, _) = t.apply_unwrapped(c.p.0, c.p.1);
            let xq = u + wrap_delta(c.q.0, u, w);
            (c.p.0, c.p.1, xq, c.q.1)
        })
        .collect();
    let n = T::from_usize_lossy(pts.len());
    let mean = |f: fn(&(T, T, T, T)) -> T| pts.iter().map(f).sum::<T>() / n;
    let (mx, my, mu, mv) = (mean(|p| p.0), mean(|p| p.1), mean(|p| p.2), mean(|p| p.3));
    let (mut sxx, mut sxu, mut syy, mut syv) = (T::zero(), T::zero(), T::zero(), T::zero());
    for &(x, y, u, v) in &pts {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxu += dx * (u - mu);
        syy += dy * dy;
        syv += dy * (v - mv);
    }
    let (sx, sy) = if uniform {
        let den = sxx + syy;
        if den <= T::zero() {
            return None;
        }
        let s = (sxu + syv) / den;
        (s, s)
    } else {
        if sxx <= T::zero() || syy <= T::zero() {
            return None;
        }
        (sxu / sxx, syv / syy)
    };
    let out = SimilarityTransform2D {
        sx,
        sy,
        tx: mu - sx * mx,
        ty: mv - sy * my,
    };
    out.validate().ok().map(|_| out)
}

/// Robust fit of the wrap-aware scale+translation model.
///
/// RANSAC draws pairs of matches; because the target x is only known
/// modulo `w`, each pair yields one hypothesis per plausible relative
/// wrap. The hypothesis with the most inliers (then lowest inlier cost)
/// is refined by least squares until its inlier set is stable. Returns
/// the transform with `tx` in `[-w/2, w/2)` and the inlier mask.
pub fn fit_scale_translation<T: Real>(
    matches: &[Correspondence<T>],
    w: T,
    params: &RansacParams,
) -> Result<(SimilarityTransform2D<T>, Vec<bool>)> {
    if matches.len() < 2 {
        return Err(failed(format!("{} matches, need at least 2", matches.len())));
    }
    if !(w > T::zero()) {
        return Err(Error::invalid("wrap width must be positive"));
    }
    if !(0.0..=1.0).contains(&params.confidence) {
        return Err(Error::invalid("RANSAC confidence must lie in [0, 1]"));
    }
    let thr2 = T::lit(params.inlier_px * params.inlier_px);
    let (smin, smax) = (T::lit(1.0 / params.max_scale), T::lit(params.max_scale));
    let spread = T::lit(MIN_SPREAD);
    let plausible = |s: T| s >= smin && s <= smax;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<Scored<T>> = None;
    let consider = |t: SimilarityTransform2D<T>, best: &mut Option<Scored<T>>| {
        let s = score(&t, matches, w, thr2);
        let better = match best {
            None => true,
            Some(b) => s.count > b.count || (s.count == b.count && s.cost < b.cost),
        };
        if better {
            *best = Some(s);
        }
    };
    let n = matches.len();
    let kmax = params.max_scale.ceil() as i32 + 1;
    let mut budget = params.iters;
    let mut drawn = 0;
    while drawn < budget {
        drawn += 1;
        if drawn >= MIN_ITERS {
            if let Some(b) = &best {
                budget = budget.min(draws_needed(b.count, n, params.confidence));
            }
        }
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let (a, b) = (&matches[i], &matches[j]);
        let (dx, dy) = (b.p.0 - a.p.0, b.p.1 - a.p.1);
        let dv = b.q.1 - a.q.1;
        let sy = if dy.abs() >= spread { Some(dv / dy) } else { None };
        if params.uniform_scale {
            // one match fixes the translation once the scale is known
            let s = match sy {
                Some(s) if plausible(s) => s,
                _ => continue,
            };
            consider(
                SimilarityTransform2D {
                    sx: s,
                    sy: s,
                    tx: a.q.0 - s * a.p.0,
                    ty: a.q.1 - s * a.p.1,
                },
                &mut best,
            );
            continue;
        }
        let sy = match sy {
            Some(s) if plausible(s) => s,
            _ => continue,
        };
        if dx.abs() < spread {
            continue;
        }
        let du = b.q.0 - a.q.0;
        for k in -kmax..=kmax {
            let sx = (du + T::lit(k as f64) * w) / dx;
            if !plausible(sx) {
                continue;
            }
            consider(
                SimilarityTransform2D {
                    sx,
                    sy,
                    tx: a.q.0 - sx * a.p.0,
                    ty: a.q.1 - sy * a.p.1,
                },
                &mut best,
            );
        }
    }
    let mut best = best.ok_or_else(|| failed("no usable minimal sample"))?;
    if best.count < MIN_INLIERS {
        return Err(failed(format!("{} inliers, need at least {MIN_INLIERS}", best.count)));
    }
    for _ in 0..20 {
        let t = refit(&best.t, matches, &best.inliers, w, params.uniform_scale)
            .ok_or_else(|| failed("degenerate inlier set"))?;
        let next = score(&t, matches, w, thr2);
        let stable = next.inliers == best.inliers;
        if next.count < MIN_INLIERS {
            break;
        }
        best = next;
        if stable {
            break;
        }
    }
    if best.count < MIN_INLIERS {
        return Err(failed(format!("{} inliers, need at least {MIN_INLIERS}", best.count)));
    }
    Ok((best.t.canonical(w), best.inliers))
}

/// Outcome of [`iterative_align`].
#[derive(Debug, Clone)]
pub struct Alignment<T> {
    pub image: EquirectImage<T>,
    pub cover: BitMask,
    /// Composed transform from the original panorama frame.
    pub transform: SimilarityTransform2D<T>,
    /// Per-round incremental transforms.
    pub increments: Vec<SimilarityTransform2D<T>>,
    /// Inlier count of each round.
    pub inliers: Vec<usize>,
}

/// Repeated match, fit and warp, composing the per-round transforms.
///
/// Every warp resamples the original panorama with the composed
/// transform. Stops early when the incremental transform moves no
/// corner of the target frame by `eps` pixels or more.
#[allow(clippy::too_many_arguments)]
pub fn iterative_align<T: Real, M: CorrespondenceProvider<T> + ?Sized>(
    pano: &EquirectImage<T>,
    cover: &BitMask,
    precap: &EquirectImage<T>,
    matcher: &M,
    rounds: usize,
    eps: T,
    params: &RansacParams,
) -> Result<Alignment<T>> {
    if rounds == 0 {
        return Err(Error::invalid("rounds must be at least 1"));
    }
    cover.check_dims(pano.dims())?;
    let (w, h) = precap.dims();
    let (wt, ht) = (T::from_usize_lossy(w), T::from_usize_lossy(h));
    let mut composed = SimilarityTransform2D::identity();
    let mut increments = Vec::new();
    let mut inliers = Vec::new();
    let mut current: Option<(EquirectImage<T>, BitMask)> = None;
    for round in 1..=rounds {
        let (img, mask) = match &current {
            Some((i, m)) => (i, m),
            None => (pano, cover),
        };
        let matches = matcher.correspond(img, Some(mask), precap, None)?;
        let (inc, flags) = fit_scale_translation(&matches, wt, params).map_err(|e| match e {
            Error::AlignmentFailed { reason, .. } => Error::AlignmentFailed {
                round: Some(round),
                reason,
            },
            other => other,
        })?;
        let n_in = flags.iter().filter(|&&f| f).count();
        log::info!(
            "align round {round}: {} matches, {n_in} inliers, sx={:.4} sy={:.4} tx={:.2} ty={:.2}",
            matches.len(),
            inc.sx,
            inc.sy,
            inc.tx,
            inc.ty
        );
        composed = inc.compose(&composed).canonical(wt);
        increments.push(inc);
        inliers.push(n_in);
        current = Some(warp_panorama(pano, cover, &composed, w, h)?);
        let moved = inc.corner_displacement(&SimilarityTransform2D::identity(), wt, ht, wt);
        if moved < eps {
            break;
        }
    }
    let (image, cover) = current.expect("at least one round ran");
    Ok(Alignment {
        image,
        cover,
        transform: composed,
        increments,
        inliers,
    })
}
