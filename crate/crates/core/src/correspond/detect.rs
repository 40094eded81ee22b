//! Multi-scale Harris corners with oriented 256-bit binary descriptors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::raster::{BitMask, RasterImage};
use crate::scalar::Real;

/// Descriptor length in bits.
pub const DESCRIPTOR_BITS: usize = 256;

/// Radius of the sampling disk around a keypoint, in level pixels.
const PATCH_RADIUS: isize = 15;
/// Test points are drawn inside this radius so rotated pairs stay in the patch.
const PAIR_RADIUS: f64 = 12.5;
const BORDER: usize = PATCH_RADIUS as usize + 3;
const PAIR_SEED: u64 = 0x5eed_b1ef;

#[derive(Debug, Clone, PartialEq)]
pub struct KeypointDescriptor<T> {
    /// Subpixel position in full-resolution image coordinates.
    pub x: T,
    pub y: T,
    /// Size of the sampling patch in full-resolution pixels.
    pub scale: T,
    /// Dominant orientation, radians.
    pub orientation: T,
    pub response: T,
    pub descriptor: Vec<u64>,
}

impl<T> KeypointDescriptor<T> {
    pub fn bits(&self) -> usize {
        self.descriptor.len() * 64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorParams {
    pub max_points: usize,
    /// Pyramid levels, each `level_scale` times smaller than the previous.
    pub levels: usize,
    pub level_scale: f64,
    /// Minimum Harris response on unit-range intensities.
    pub threshold: f64,
    pub harris_k: f64,
    /// Suppression window half-size at each level.
    pub nms_radius: usize,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            max_points: 4000,
            levels: 5,
            level_scale: std::f64::consts::SQRT_2,
            threshold: 1e-6,
            harris_k: 0.04,
            nms_radius: 2,
        }
    }
}

/// The 256 point pairs of the binary test pattern, fixed for every detector.
fn test_pairs() -> &'static [[f64; 4]] {
    use std::sync::OnceLock;
    static PAIRS: OnceLock<Vec<[f64; 4]>> = OnceLock::new();
    PAIRS.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(PAIR_SEED);
        let pt = |rng: &mut ChaCha8Rng| loop {
            // isotropic Gaussian, sigma = patch/5, truncated to the pair disk
            let (a, b): (f64, f64) = (rng.random(), rng.random());
            let r = (-2.0 * (1.0 - a).ln()).sqrt() * (31.0 / 5.0);
            let (s, c) = (std::f64::consts::TAU * b).sin_cos();
            let (x, y) = (r * c, r * s);
            if x * x + y * y <= PAIR_RADIUS * PAIR_RADIUS {
                return (x, y);
            }
        };
        (0..DESCRIPTOR_BITS)
            .map(|_| {
                let (x1, y1) = pt(&mut rng);
                let (x2, y2) = pt(&mut rng);
                [x1, y1, x2, y2]
            })
            .collect()
    })
}

struct Level<T> {
    /// Smoothed intensities used for descriptors.
    smooth: RasterImage<T>,
    harris: Vec<T>,
    /// Nominal full-resolution pixels per level pixel.
    factor: f64,
    /// Exact per-axis ratios after rounding the level size.
    fx: f64,
    fy: f64,
}

fn resize_bilinear<T: Real>(img: &RasterImage<T>, w: usize, h: usize) -> RasterImage<T> {
    let sx = img.width() as f64 / w as f64;
    let sy = img.height() as f64 / h as f64;
    RasterImage::from_fn(w, h, 1, |x, y, p| {
        let fx = T::lit((x as f64 + 0.5) * sx - 0.5);
        let fy = T::lit((y as f64 + 0.5) * sy - 0.5);
        p[0] = img.sample_bilinear(fx, fy, false)[0];
    })
    .expect("non-empty level")
}

fn harris<T: Real>(img: &RasterImage<T>, k: T) -> Vec<T> {
    let (w, h) = img.dims();
    let at = |x: isize, y: isize| img.get(x.clamp(0, w as isize - 1) as usize, y.clamp(0, h as isize - 1) as usize, 0);
    let n = w * h;
    let mut ixx = RasterImage::new(w, h, 1).expect("non-empty");
    let mut iyy = RasterImage::new(w, h, 1).expect("non-empty");
    let mut ixy = RasterImage::new(w, h, 1).expect("non-empty");
    let eighth = T::lit(0.125);
    let two = T::lit(2.0);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(x + 1, y - 1) + two * at(x + 1, y) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - two * at(x - 1, y)
                - at(x - 1, y + 1))
                * eighth;
            let gy = (at(x - 1, y + 1) + two * at(x, y + 1) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - two * at(x, y - 1)
                - at(x + 1, y - 1))
                * eighth;
            let i = (y as usize) * w + x as usize;
            ixx.data_mut()[i] = gx * gx;
            iyy.data_mut()[i] = gy * gy;
            ixy.data_mut()[i] = gx * gy;
        }
    }
    let sigma = T::lit(1.5);
    let (a, b, c) = (
        ixx.gaussian_blur(sigma, false),
        iyy.gaussian_blur(sigma, false),
        ixy.gaussian_blur(sigma, false),
    );
    (0..n)
        .map(|i| {
            let (a, b, c) = (a.data()[i], b.data()[i], c.data()[i]);
            a * b - c * c - k * (a + b) * (a + b)
        })
        .collect()
}

fn build_levels<T: Real>(gray: &RasterImage<T>, p: &DetectorParams) -> Vec<Level<T>> {
    let mut levels = Vec::new();
    let base = gray.gaussian_blur(T::lit(0.7), false);
    for l in 0..p.levels.max(1) {
        let factor = p.level_scale.powi(l as i32);
        let w = (gray.width() as f64 / factor).round() as usize;
        let h = (gray.height() as f64 / factor).round() as usize;
        if w < 2 * BORDER + 4 || h < 2 * BORDER + 4 {
            break;
        }
        let img = if l == 0 {
            base.clone()
        } else {
            // anti-alias before shrinking
            let s = T::lit(0.5 * (factor * factor - 1.0).sqrt());
            resize_bilinear(&gray.gaussian_blur(s, false), w, h)
        };
        let harris = harris(&img, T::lit(p.harris_k));
        let smooth = img.gaussian_blur(T::lit(1.6), false);
        let (fx, fy) = (gray.width() as f64 / w as f64, gray.height() as f64 / h as f64);
        levels.push(Level {
            smooth,
            harris,
            factor,
            fx,
            fy,
        });
    }
    levels
}

fn orientation<T: Real>(img: &RasterImage<T>, cx: usize, cy: usize) -> f64 {
    let (mut m01, mut m10) = (0.0f64, 0.0f64);
    for dy in -PATCH_RADIUS..=PATCH_RADIUS {
        for dx in -PATCH_RADIUS..=PATCH_RADIUS {
            if dx * dx + dy * dy > PATCH_RADIUS * PATCH_RADIUS {
                continue;
            }
            let v = img.get((cx as isize + dx) as usize, (cy as isize + dy) as usize, 0).as_f64();
            m10 += dx as f64 * v;
            m01 += dy as f64 * v;
        }
    }
    m01.atan2(m10)
}

fn describe<T: Real>(img: &RasterImage<T>, cx: f64, cy: f64, angle: f64) -> Vec<u64> {
    let (s, c) = angle.sin_cos();
    let mut words = vec![0u64; DESCRIPTOR_BITS / 64];
    for (bit, pr) in test_pairs().iter().enumerate() {
        let rot = |x: f64, y: f64| (cx + c * x - s * y, cy + s * x + c * y);
        let (ax, ay) = rot(pr[0], pr[1]);
        let (bx, by) = rot(pr[2], pr[3]);
        let va = img.sample_bilinear(T::lit(ax), T::lit(ay), false)[0];
        let vb = img.sample_bilinear(T::lit(bx), T::lit(by), false)[0];
        if va < vb {
            words[bit / 64] |= 1 << (bit % 64);
        }
    }
    words
}

/// Detects up to `params.max_points` keypoints, strongest first.
///
/// When `mask` is given, keypoints whose sampling patch is not entirely
/// inside it are discarded. Output is deterministic for identical input.
pub fn detect_and_describe<T: Real>(
    img: &RasterImage<T>,
    mask: Option<&BitMask>,
    params: &DetectorParams,
) -> Vec<KeypointDescriptor<T>> {
    let gray = img.to_gray();
    let levels = build_levels(&gray, params);
    // a corner must be fully inside the mask at full resolution
    let eroded = mask.map(|m| {
        let mut e = m.clone();
        for _ in 0..3 {
            e = e.erode(false);
        }
        e
    });
    let thr = T::lit(params.threshold);
    let mut cands: Vec<(T, usize, usize, usize)> = Vec::new();
    for (li, lv) in levels.iter().enumerate() {
        let (w, h) = lv.smooth.dims();
        let r = params.nms_radius as isize;
        for y in BORDER..h - BORDER {
            for x in BORDER..w - BORDER {
                let v = lv.harris[y * w + x];
                if v <= thr {
                    continue;
                }
                let mut is_max = true;
                'nms: for dy in -r..=r {
                    for dx in -r..=r {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let j = (y as isize + dy) as usize * w + (x as isize + dx) as usize;
                        let o = lv.harris[j];
                        // ties resolve toward the earlier raster position
                        if o > v || (o == v && (dy < 0 || (dy == 0 && dx < 0))) {
                            is_max = false;
                            break 'nms;
                        }
                    }
                }
                if !is_max {
                    continue;
                }
                if let Some(m) = &eroded {
                    let fx = ((x as f64) + 0.5) * lv.fx - 0.5;
                    let fy = ((y as f64) + 0.5) * lv.fy - 0.5;
                    let rad = (PATCH_RADIUS as f64 + 1.0) * lv.factor;
                    let inside = [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0), (0.0, 0.0)]
                        .iter()
                        .all(|&(sx, sy)| {
                            let px = (fx + sx * rad * 0.7).round();
                            let py = (fy + sy * rad * 0.7).round();
                            px >= 0.0
                                && py >= 0.0
                                && (px as usize) < m.width()
                                && (py as usize) < m.height()
                                && m.get(px as usize, py as usize)
                        });
                    if !inside {
                        continue;
                    }
                }
                cands.push((v, li, x, y));
            }
        }
    }
    // strongest first; ties by level then raster order
    cands.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
            .then(a.3.cmp(&b.3))
            .then(a.2.cmp(&b.2))
    });
    cands.truncate(params.max_points);

    cands
        .into_iter()
        .map(|(resp, li, x, y)| {
            let lv = &levels[li];
            let (w, _) = lv.smooth.dims();
            // quadratic subpixel refinement of the Harris peak
            let hv = |dx: isize, dy: isize| lv.harris[(y as isize + dy) as usize * w + (x as isize + dx) as usize].as_f64();
            let c0 = hv(0, 0);
            let refine = |m: f64, p: f64| {
                let den = m - 2.0 * c0 + p;
                if den < 0.0 {
                    (0.5 * (m - p) / den).clamp(-0.5, 0.5)
                } else {
                    0.0
                }
            };
            let ox = refine(hv(-1, 0), hv(1, 0));
            let oy = refine(hv(0, -1), hv(0, 1));
            let angle = orientation(&lv.smooth, x, y);
            let descriptor = describe(&lv.smooth, x as f64 + ox, y as f64 + oy, angle);
            KeypointDescriptor {
                x: T::lit((x as f64 + ox + 0.5) * lv.fx - 0.5),
                y: T::lit((y as f64 + oy + 0.5) * lv.fy - 0.5),
                scale: T::lit((2 * PATCH_RADIUS + 1) as f64 * lv.factor),
                orientation: T::lit(angle),
                response: resp,
                descriptor,
            }
        })
        .collect()
}
