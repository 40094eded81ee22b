//! Greedy exemplar-based inpainting: fill order by confidence times an
//! isophote data term, best patch by masked SSD over the known pixels.

use crate::error::{Error, Result};
use crate::raster::{BitMask, RasterImage};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct InpaintParams {
    /// Odd patch side in pixels.
    pub patch_size: usize,
}

impl Default for InpaintParams {
    fn default() -> Self {
        Self { patch_size: 9 }
    }
}

impl InpaintParams {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 3 || self.patch_size % 2 == 0 {
            return Err(Error::invalid(format!(
                "patch size must be odd and at least 3, got {}",
                self.patch_size
            )));
        }
        Ok(())
    }
}

/// Keeps the data term from zeroing priorities on flat fronts.
const DATA_FLOOR: f64 = 1e-3;

struct Grid {
    w: usize,
    h: usize,
    wrap: bool,
}

impl Grid {
    #[inline]
    fn at(&self, x: isize, y: isize) -> Option<usize> {
        if y < 0 || y >= self.h as isize {
            return None;
        }
        let x = if self.wrap {
            x.rem_euclid(self.w as isize)
        } else if x < 0 || x >= self.w as isize {
            return None;
        } else {
            x
        };
        Some(y as usize * self.w + x as usize)
    }

    #[inline]
    fn xy(&self, i: usize) -> (isize, isize) {
        ((i % self.w) as isize, (i / self.w) as isize)
    }
}

/// Fills `hole` with pixels copied from patches lying wholly in `source`.
///
/// Pixels in `known` (besides `source`) take part in patch comparison but
/// are never copied from. Every output pixel inside `hole` is an exact
/// copy of some `source` pixel. Ties go to the lowest linear index, so the
/// result is deterministic.
pub(crate) fn exemplar_fill<T: Real>(
    img: &RasterImage<T>,
    hole: &BitMask,
    source: &BitMask,
    known: Option<&BitMask>,
    params: &InpaintParams,
    wrap: bool,
) -> Result<RasterImage<T>> {
    params.validate()?;
    let (w, h) = img.dims();
    hole.check_dims((w, h))?;
    source.check_dims((w, h))?;
    if let Some(k) = known {
        k.check_dims((w, h))?;
    }
    if hole.and(source).any() {
        return Err(Error::invalid("hole and exemplar source overlap"));
    }
    let mut out = img.clone();
    if !hole.any() {
        return Ok(out);
    }
    let grid = Grid { w, h, wrap };
    let c = img.channels();
    let r = (params.patch_size / 2) as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| (dx, dy))).collect();

    let candidates: Vec<usize> = (0..w * h)
        .filter(|&i| {
            let (x, y) = grid.xy(i);
            offsets
                .iter()
                .all(|&(dx, dy)| grid.at(x + dx, y + dy).is_some_and(|j| source.bits()[j]))
        })
        .collect();
    if candidates.is_empty() {
        return Err(Error::SourceTooSmall {
            patch: params.patch_size,
        });
    }

    let mut work: Vec<f64> = img.data().iter().map(|v| v.as_f64()).collect();
    let mut gray: Vec<f64> = work.chunks_exact(c).map(|p| p.iter().sum::<f64>() / c as f64).collect();
    let mut is_known: Vec<bool> = (0..w * h)
        .map(|i| !hole.bits()[i] && (source.bits()[i] || known.is_some_and(|k| k.bits()[i])))
        .collect();
    let mut conf: Vec<f64> = is_known.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect();
    let mut remaining: Vec<usize> = hole.iter_set().collect();
    let mut pending = hole.bits().to_vec();
    let area = offsets.len() as f64;

    while !remaining.is_empty() {
        // pick the highest-priority front pixel
        let mut target: Option<(f64, usize)> = None;
        for &p in &remaining {
            let (x, y) = grid.xy(p);
            let on_front = [(1, 0), (-1, 0), (0, 1), (0, -1)]
                .iter()
                .any(|&(dx, dy)| grid.at(x + dx, y + dy).is_some_and(|q| is_known[q]));
            if !on_front {
                continue;
            }
            let prio = confidence(&grid, &offsets, &conf, x, y, area) * data_term(&grid, &offsets, &gray, &is_known, x, y);
            if target.is_none_or(|(best, _)| prio > best) {
                target = Some((prio, p));
            }
        }
        // a hole component that touches nothing known starts at its first pixel
        let p = target.map_or(remaining[0], |t| t.1);
        let (tx, ty) = grid.xy(p);
        let c_p = confidence(&grid, &offsets, &conf, tx, ty, area);

        let probe: Vec<(isize, isize, usize)> = offsets
            .iter()
            .filter_map(|&(dx, dy)| grid.at(tx + dx, ty + dy).filter(|&q| is_known[q]).map(|q| (dx, dy, q)))
            .collect();
        let mut best = (f64::INFINITY, candidates[0]);
        if !probe.is_empty() {
            for &cand in &candidates {
                let (cx, cy) = grid.xy(cand);
                let mut ssd = 0.0;
                for &(dx, dy, q) in &probe {
                    let s = grid.at(cx + dx, cy + dy).expect("candidate patch is in range");
                    for k in 0..c {
                        let d = work[s * c + k] - work[q * c + k];
                        ssd += d * d;
                    }
                    if ssd >= best.0 {
                        break;
                    }
                }
                if ssd < best.0 {
                    best = (ssd, cand);
                }
            }
        }

        let (cx, cy) = grid.xy(best.1);
        for &(dx, dy) in &offsets {
            let Some(t) = grid.at(tx + dx, ty + dy) else {
                continue;
            };
            if !pending[t] {
                continue;
            }
            let s = grid.at(cx + dx, cy + dy).expect("candidate patch is in range");
            let value: Vec<T> = img.pixel_at(s).to_vec();
            out.pixel_at_mut(t).copy_from_slice(&value);
            for k in 0..c {
                work[t * c + k] = work[s * c + k];
            }
            gray[t] = gray[s];
            pending[t] = false;
            is_known[t] = true;
            conf[t] = c_p;
        }
        remaining.retain(|&i| pending[i]);
    }
    Ok(out)
}

fn confidence(grid: &Grid, offsets: &[(isize, isize)], conf: &[f64], x: isize, y: isize, area: f64) -> f64 {
    offsets
        .iter()
        .filter_map(|&(dx, dy)| grid.at(x + dx, y + dy))
        .map(|q| conf[q])
        .sum::<f64>()
        / area
}

/// `|isophote . normal|` using the strongest known gradient in the patch
/// and the front normal from the known-pixel indicator.
fn data_term(grid: &Grid, offsets: &[(isize, isize)], gray: &[f64], known: &[bool], x: isize, y: isize) -> f64 {
    let k = |x: isize, y: isize| grid.at(x, y).is_some_and(|i| known[i]) as i32 as f64;
    let (nx, ny) = (k(x + 1, y) - k(x - 1, y), k(x, y + 1) - k(x, y - 1));
    let nn = nx.hypot(ny);
    if nn == 0.0 {
        return DATA_FLOOR;
    }
    let mut grad = (0.0, 0.0);
    let mut mag = -1.0;
    for &(dx, dy) in offsets {
        let (qx, qy) = (x + dx, y + dy);
        let taps = [
            grid.at(qx + 1, qy),
            grid.at(qx - 1, qy),
            grid.at(qx, qy + 1),
            grid.at(qx, qy - 1),
            grid.at(qx, qy),
        ];
        if !taps.iter().all(|t| t.is_some_and(|i| known[i])) {
            continue;
        }
        let [r, l, d, u, _] = taps.map(Option::unwrap);
        let g = ((gray[r] - gray[l]) * 0.5, (gray[d] - gray[u]) * 0.5);
        let m = g.0.hypot(g.1);
        if m > mag {
            mag = m;
            grad = g;
        }
    }
    // isophote is the gradient turned by 90 degrees
    let (ix, iy) = (-grad.1, grad.0);
    (ix * nx + iy * ny).abs() / nn + DATA_FLOOR
}

/// Fills `hole` of `img` from full patches inside `source`.
///
/// Filled values are copies of source pixels; the result is deterministic.
pub fn inpaint_exemplar<T: Real>(
    img: &RasterImage<T>,
    hole: &BitMask,
    source: &BitMask,
    params: &InpaintParams,
) -> Result<RasterImage<T>> {
    exemplar_fill(img, hole, source, None, params, false)
}
