//! Synthetic relight cases with known answers, and their scoring.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::align::{warp_labels, warp_panorama, SimilarityTransform2D};
use crate::error::{Error, Result};
use crate::io::{write_image, write_mask};
use crate::projection::lon_lat;
use crate::raster::{BitMask, EquirectImage, RasterImage};
use crate::segment::{category_mask, write_labels, LabelMap, SKY, UNLABELED};
use crate::tone::cdf;

/// Per-channel `v' = clamp(gain * v^gamma + offset)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToneCurve {
    pub gain: [f64; 3],
    pub gamma: [f64; 3],
    pub offset: [f64; 3],
}

impl Default for ToneCurve {
    fn default() -> Self {
        Self {
            gain: [1.0; 3],
            gamma: [1.0; 3],
            offset: [0.0; 3],
        }
    }
}

impl ToneCurve {
    pub fn brighten(delta: f64) -> Self {
        Self {
            offset: [delta; 3],
            ..Self::default()
        }
    }

    pub fn apply(&self, c: usize, v: f64) -> f64 {
        let c = c.min(2);
        (self.gain[c] * v.max(0.0).powf(self.gamma[c]) + self.offset[c]).clamp(0.0, 1.0)
    }
}

/// Vertical gradient sky with soft clouds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkySpec {
    pub zenith: [f64; 3],
    pub horizon: [f64; 3],
    pub cloud: [f64; 3],
    /// Fraction of the sky under cloud, roughly.
    pub cloud_cover: f64,
    /// Cloud blur radius as a fraction of the image width.
    pub cloud_scale: f64,
}

impl Default for SkySpec {
    fn default() -> Self {
        Self {
            zenith: [0.16, 0.36, 0.80],
            horizon: [0.60, 0.74, 0.94],
            cloud: [0.93, 0.94, 0.96],
            cloud_cover: 0.3,
            cloud_scale: 0.006,
        }
    }
}

/// Longitude/latitude box seen by the panorama, in degrees. A window with
/// `lon_min > lon_max` wraps through the seam.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageWindow {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
}

impl CoverageWindow {
    pub fn full() -> Self {
        Self {
            lon_min: -180.0,
            lon_max: 180.0,
            lat_min: -90.0,
            lat_max: 90.0,
        }
    }

    pub fn contains(&self, lon_deg: f64, lat_deg: f64) -> bool {
        let lon_ok = if self.lon_min <= self.lon_max {
            (self.lon_min..=self.lon_max).contains(&lon_deg)
        } else {
            lon_deg >= self.lon_min || lon_deg <= self.lon_max
        };
        lon_ok && (self.lat_min..=self.lat_max).contains(&lat_deg)
    }

    pub fn mask(&self, w: usize, h: usize) -> BitMask {
        BitMask::from_fn(w, h, |x, y| {
            let (lon, lat) = lon_lat(x as f64, y as f64, w, h);
            self.contains(lon.to_degrees(), lat.to_degrees())
        })
    }
}

/// How the current scene differs from the pre-captured one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Tone change per category name; missing categories stay put.
    pub curves: BTreeMap<String, ToneCurve>,
    /// Replacement sky; `None` keeps the pre-captured sky.
    pub sky: Option<SkySpec>,
    pub coverage: CoverageWindow,
    /// True transform from panorama pixels to pre-captured pixels.
    pub transform: SimilarityTransform2D<f64>,
    pub seed: u64,
}

impl SyntheticSpec {
    /// No change at all.
    pub fn identity() -> Self {
        Self {
            curves: BTreeMap::new(),
            sky: None,
            coverage: CoverageWindow::full(),
            transform: SimilarityTransform2D::identity(),
            seed: 0,
        }
    }

    /// A daylight change on every scene category, a new sky, three
    /// quarters of the longitudes and no zenith coverage, and a shifted,
    /// rescaled panorama.
    pub fn relight(width: usize, seed: u64) -> Self {
        let c = |gain, gamma, offset| ToneCurve { gain, gamma, offset };
        let curves = BTreeMap::from([
            ("tree".into(), c([0.9, 1.0, 0.85], [1.3, 1.2, 1.4], [0.0, 0.02, 0.0])),
            ("building".into(), c([0.95, 0.95, 0.9], [0.8, 0.8, 0.85], [0.06, 0.05, 0.03])),
            ("earth".into(), c([1.05, 0.95, 0.8], [1.0, 1.0, 1.1], [0.02, 0.0, 0.0])),
            ("plant".into(), c([0.85, 0.95, 0.8], [1.1, 1.0, 1.2], [0.05, 0.05, 0.02])),
        ]);
        Self {
            curves,
            sky: Some(SkySpec::default()),
            coverage: CoverageWindow {
                lon_min: -150.0,
                lon_max: 120.0,
                lat_min: -70.0,
                lat_max: 60.0,
            },
            transform: SimilarityTransform2D {
                sx: 1.05,
                sy: 1.03,
                tx: 0.0415 * width as f64,
                ty: -0.0046 * width as f64,
            },
            seed,
        }
    }
}

/// Everything a synthetic run needs, plus the answer.
#[derive(Debug, Clone)]
pub struct SyntheticCase {
    pub precap: EquirectImage<f64>,
    pub pre_labels: LabelMap,
    pub panorama: EquirectImage<f64>,
    pub pano_cover: BitMask,
    /// Labels in the panorama frame.
    pub gen_labels: LabelMap,
    /// The pre-captured image as it should look after calibration.
    pub ground_truth: EquirectImage<f64>,
    pub transform: SimilarityTransform2D<f64>,
}

pub fn scene_palette() -> BTreeMap<u8, String> {
    [SKY, "tree", "building", "earth", "plant"]
        .iter()
        .enumerate()
        .map(|(i, n)| (i as u8, n.to_string()))
        .collect()
}

fn normal_field(w: usize, h: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let img = RasterImage::from_vec(w, h, 1, (0..w * h).map(|_| rng.sample(StandardNormal)).collect())?;
    let mut v = img.gaussian_blur(sigma, true).into_vec();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt().max(1e-12);
    v.iter_mut().for_each(|x| *x = (*x - mean) / sd);
    Ok(v)
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-1.702 * z).exp())
}

fn wrap_dx(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// A seamless outdoor scene: sky over a tree and building skyline, earth
/// with plant patches below, a few unlabeled signs. Each category has a
/// band-limited texture whose values spread over most of the unit range.
pub fn synthetic_scene(w: usize, h: usize, seed: u64) -> Result<(EquirectImage<f64>, LabelMap)> {
    if w < 32 || h < 16 {
        return Err(Error::invalid("synthetic scenes need at least 32x16 pixels"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..TAU));

    // alternating building and tree blocks around the horizon
    let n_blocks = 10;
    let mut cuts: Vec<f64> = (0..n_blocks).map(|_| rng.random_range(0.0..1.0)).collect();
    cuts.sort_by(f64::total_cmp);
    let roofs: Vec<f64> = (0..n_blocks).map(|_| rng.random_range(0.26..0.36)).collect();
    let bushes: Vec<(f64, f64, f64, f64)> = (0..14)
        .map(|_| {
            (
                rng.random_range(0.0..1.0),
                rng.random_range(0.6..0.7),
                rng.random_range(0.015..0.04),
                rng.random_range(0.02..0.05),
            )
        })
        .collect();
    let signs: Vec<(f64, f64)> = (0..6)
        .map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.45..0.55)))
        .collect();

    let mut ids = vec![0u8; w * h];
    for y in 0..h {
        let fy = (y as f64 + 0.5) / h as f64;
        for x in 0..w {
            let fx = (x as f64 + 0.5) / w as f64;
            let block = cuts.iter().filter(|&&c| c <= fx).count();
            let block = if block == 0 { n_blocks - 1 } else { block - 1 };
            let is_building = block % 2 == 0;
            let top = if is_building {
                roofs[block]
            } else {
                0.31 + 0.04 * (TAU * 3.0 * fx + phase[0]).sin() + 0.02 * (TAU * 7.0 * fx + phase[1]).sin()
            };
            let ground = 0.6 + 0.02 * (TAU * 2.0 * fx + phase[2]).sin();
            let mut id = if fy < top {
                0
            } else if fy >= ground {
                3
            } else if is_building {
                2
            } else {
                1
            };
            if id != 0 {
                for &(bx, by, rx, ry) in &bushes {
                    let (dx, dy) = (wrap_dx(fx, bx) / rx, (fy - by) / ry);
                    if dx * dx + dy * dy <= 1.0 {
                        id = 4;
                    }
                }
                for &(sx, sy) in &signs {
                    if wrap_dx(fx, sx) < 0.006 && (fy - sy).abs() < 0.02 {
                        id = UNLABELED;
                    }
                }
            }
            ids[y * w + x] = id;
        }
    }
    let labels = LabelMap::new(w, h, ids, scene_palette())?;

    // textures: shared fine and coarse structure plus per-channel detail
    let fine = normal_field(w, h, 1.6, &mut rng)?;
    let coarse = normal_field(w, h, 5.0, &mut rng)?;
    let chan: Vec<Vec<f64>> = (0..3)
        .map(|_| normal_field(w, h, 1.6, &mut rng))
        .collect::<Result<_>>()?;
    let (a, b, c): (f64, f64, f64) = (0.7, 0.5, 0.5);
    let norm = (a * a + b * b + c * c).sqrt();
    // (lo, span) per category id and channel
    let looks: [([f64; 3], [f64; 3]); 5] = [
        ([0.0; 3], [0.0; 3]),
        ([0.03, 0.07, 0.02], [0.8, 0.86, 0.76]),
        ([0.08, 0.08, 0.1], [0.86, 0.86, 0.86]),
        ([0.08, 0.05, 0.03], [0.86, 0.82, 0.78]),
        ([0.04, 0.1, 0.03], [0.8, 0.86, 0.8]),
    ];
    let img = RasterImage::from_fn(w, h, 3, |x, y, p: &mut [f64]| {
        let i = y * w + x;
        let id = labels.ids()[i];
        let lat = PI / 2.0 - PI * (y as f64 + 0.5) / h as f64;
        for (ch, v) in p.iter_mut().enumerate() {
            *v = match id {
                0 => {
                    // hazy, nearly flat stale sky
                    let t = (lat / (PI / 2.0)).clamp(0.0, 1.0);
                    let (lo, hi) = ([0.74, 0.75, 0.77][ch], [0.56, 0.63, 0.74][ch]);
                    lo + (hi - lo) * t + 0.02 * fine[i]
                }
                UNLABELED => 0.5 + 0.3 * logistic(fine[i]) - 0.15,
                id => {
                    let z = (a * fine[i] + b * coarse[i] + c * chan[ch][i]) / norm;
                    let (lo, span) = looks[id as usize];
                    lo[ch] + span[ch] * logistic(z)
                }
            }
            .clamp(0.0, 1.0);
        }
    })?;
    Ok((EquirectImage::new(img)?, labels))
}

/// Renders `spec` over every pixel of a `w x h` equirect image.
pub fn render_sky(spec: &SkySpec, w: usize, h: usize, seed: u64) -> Result<EquirectImage<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clouds = normal_field(w, h, (spec.cloud_scale * w as f64).max(0.5), &mut rng)?;
    let grain = normal_field(w, h, 1.0, &mut rng)?;
    // threshold of a unit normal that leaves `cloud_cover` above it
    let cut = {
        let mut s = clouds.clone();
        s.sort_by(f64::total_cmp);
        let k = ((1.0 - spec.cloud_cover.clamp(0.0, 1.0)) * (s.len() - 1) as f64) as usize;
        s[k]
    };
    let img = RasterImage::from_fn(w, h, 3, |x, y, p: &mut [f64]| {
        let i = y * w + x;
        let lat = PI / 2.0 - PI * (y as f64 + 0.5) / h as f64;
        let t = (lat / (PI / 2.0)).clamp(0.0, 1.0).sqrt();
        let cover = ((clouds[i] - cut) / 0.6).clamp(0.0, 1.0);
        let cover = cover * cover * (3.0 - 2.0 * cover);
        for (ch, v) in p.iter_mut().enumerate() {
            let base = spec.horizon[ch] + (spec.zenith[ch] - spec.horizon[ch]) * t;
            *v = (base + (spec.cloud[ch] - base) * cover + 0.01 * grain[i]).clamp(0.0, 1.0);
        }
    })?;
    EquirectImage::new(img)
}

/// Builds a calibration case from an aligned image and its labels.
///
/// The current scene is `base` with every category's tone curve applied
/// and the sky replaced; it is the ground truth. The panorama is the
/// current scene seen through the coverage window, resampled into its own
/// frame by the inverse of the true transform.
pub fn make_synthetic_case(base: &EquirectImage<f64>, labels: &LabelMap, spec: &SyntheticSpec) -> Result<SyntheticCase> {
    let (w, h) = base.dims();
    if labels.dims() != (w, h) {
        return Err(Error::DimensionMismatch {
            expected: (w, h),
            actual: labels.dims(),
        });
    }
    spec.transform.validate()?;
    let sky_id = labels.id_of(SKY);
    let sky = match (&spec.sky, sky_id) {
        (Some(s), Some(_)) => Some(render_sky(s, w, h, spec.seed)?),
        _ => None,
    };
    let c = base.channels();
    let mut current = base.as_raster().clone();
    for i in 0..w * h {
        let id = labels.ids()[i];
        if let (Some(sky), true) = (&sky, Some(id) == sky_id) {
            for (k, v) in current.pixel_at_mut(i).iter_mut().enumerate() {
                *v = sky.pixel_at(i)[k.min(sky.channels() - 1)];
            }
            continue;
        }
        let Some(curve) = labels.name_of(id).and_then(|n| spec.curves.get(n)) else {
            continue;
        };
        for (k, v) in current.pixel_at_mut(i).iter_mut().enumerate() {
            *v = curve.apply(if c == 1 { 0 } else { k }, *v);
        }
    }
    let current = EquirectImage::new(current)?;
    let window = spec.coverage.mask(w, h);
    let inv = spec.transform.inverse();
    let (panorama, pano_cover) = warp_panorama(&current, &window, &inv, w, h)?;
    let (gen_labels, _) = warp_labels(labels, &window, &inv, w, h)?;
    Ok(SyntheticCase {
        precap: base.clone(),
        pre_labels: labels.clone(),
        panorama,
        pano_cover,
        gen_labels,
        ground_truth: current,
        transform: spec.transform,
    })
}

/// Writes a case as the PNG set a file-based run expects, plus the
/// palette and ground truth.
pub fn write_case(case: &SyntheticCase, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Write {
        path: dir.to_path_buf(),
        message: e.to_string(),
    })?;
    write_image(case.precap.as_raster(), dir.join("precap.png"))?;
    write_image(case.panorama.as_raster(), dir.join("panorama.png"))?;
    write_mask(&case.pano_cover, dir.join("coverage.png"))?;
    write_labels(&case.pre_labels, dir.join("labels_pre.png"))?;
    write_labels(&case.gen_labels, dir.join("labels_gen.png"))?;
    write_image(case.ground_truth.as_raster(), dir.join("truth.png"))?;
    let palette: String = case
        .pre_labels
        .palette()
        .iter()
        .map(|(id, name)| format!("{id},{name}\n"))
        .collect();
    let path = dir.join("palette.txt");
    std::fs::write(&path, palette).map_err(|e| Error::Write {
        path,
        message: e.to_string(),
    })
}

/// Error statistics of one category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub name: String,
    pub pixels: usize,
    pub mae: f64,
    pub median: f64,
    /// Largest per-channel CDF distance to the ground truth.
    pub cdf_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub categories: Vec<CategoryScore>,
    pub sky_mae: Option<f64>,
    /// Mean abs error of the whole result.
    pub mae: f64,
    /// Mean abs error of the uncorrected image.
    pub baseline_mae: f64,
    /// `1 - mae / baseline_mae`; zero when the baseline is already exact.
    pub improvement: f64,
}

fn pixel_errors(a: &RasterImage<f64>, b: &RasterImage<f64>, mask: Option<&BitMask>) -> Vec<f64> {
    let c = a.channels() as f64;
    (0..a.width() * a.height())
        .filter(|&i| mask.is_none_or(|m| m.bits()[i]))
        .map(|i| a.pixel_at(i).iter().zip(b.pixel_at(i)).map(|(x, y)| (x - y).abs()).sum::<f64>() / c)
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn check_pair(a: &RasterImage<f64>, b: &RasterImage<f64>) -> Result<()> {
    b.check_same_dims(a.dims())?;
    if a.channels() != b.channels() {
        return Err(Error::invalid("images have different channel counts"));
    }
    Ok(())
}

/// Median over masked pixels of the channel-averaged absolute difference.
pub fn median_abs_error(a: &RasterImage<f64>, b: &RasterImage<f64>, mask: &BitMask) -> Result<f64> {
    check_pair(a, b)?;
    mask.check_dims(a.dims())?;
    let mut e = pixel_errors(a, b, Some(mask));
    if e.is_empty() {
        return Err(Error::EmptyCategory("median of an empty mask".into()));
    }
    let mid = e.len() / 2;
    let (_, m, _) = e.select_nth_unstable_by(mid, f64::total_cmp);
    Ok(*m)
}

/// Scores `result` against `ground_truth` per category of `labels`, and
/// overall relative to the `uncorrected` image.
pub fn score(
    result: &RasterImage<f64>,
    ground_truth: &RasterImage<f64>,
    uncorrected: &RasterImage<f64>,
    labels: &LabelMap,
) -> Result<Metrics> {
    check_pair(result, ground_truth)?;
    check_pair(uncorrected, ground_truth)?;
    if labels.dims() != result.dims() {
        return Err(Error::DimensionMismatch {
            expected: result.dims(),
            actual: labels.dims(),
        });
    }
    let mut categories = Vec::new();
    let mut sky_mae = None;
    for (&id, name) in labels.palette() {
        let mask = category_mask(labels, id, None)?;
        if !mask.any() {
            continue;
        }
        let errs = pixel_errors(result, ground_truth, Some(&mask));
        let mae = mean(&errs);
        if name == SKY {
            sky_mae = Some(mae);
        }
        categories.push(CategoryScore {
            name: name.clone(),
            pixels: errs.len(),
            mae,
            median: median_abs_error(result, ground_truth, &mask)?,
            cdf_distance: cdf(result, &mask)?.distance(&cdf(ground_truth, &mask)?),
        });
    }
    let mae = mean(&pixel_errors(result, ground_truth, None));
    let baseline_mae = mean(&pixel_errors(uncorrected, ground_truth, None));
    let improvement = if baseline_mae > 0.0 { 1.0 - mae / baseline_mae } else { 0.0 };
    Ok(Metrics {
        categories,
        sky_mae,
        mae,
        baseline_mae,
        improvement,
    })
}
