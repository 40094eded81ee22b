//! Tone correction of the pre-captured image: per-category histogram
//! matching followed by Poisson leveling of whatever is left.

mod histogram;
mod poisson;

use crate::error::{Error, Result};
use crate::raster::{BitMask, EquirectImage, RasterImage};
use crate::scalar::Real;
use crate::segment::{category_mask, CategoryPair, CategoryPairing, LabelMap, SKY};

pub use histogram::{apply_lut, cdf, match_lut, CumulativeHistogram, ToneLut, BINS};
pub use poisson::{poisson_level, PoissonParams, PoissonStats};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToneOptions {
    /// Erosion applied to category masks before collecting histograms.
    pub erode_px: usize,
    /// Zero guidance instead of the original image's gradients.
    pub membrane: bool,
    pub poisson: PoissonParams,
}

impl Default for ToneOptions {
    fn default() -> Self {
        Self {
            erode_px: 1,
            membrane: false,
            poisson: PoissonParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryTone {
    pub name: String,
    pub pre_id: u8,
    pub gen_id: u8,
    pub lut: ToneLut,
    /// Pixels behind the source and reference histograms.
    pub src_pixels: u64,
    pub ref_pixels: u64,
}

#[derive(Debug, Clone)]
pub struct ToneResult<T> {
    pub image: RasterImage<T>,
    pub categories: Vec<CategoryTone>,
    /// Paired categories that had no pixels on one side.
    pub demoted: Vec<String>,
    /// Region handed to Poisson leveling.
    pub residual: BitMask,
    pub poisson: PoissonStats,
}

/// Pixel sets behind one category's tone match.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryMasks {
    /// Every pre-captured pixel of the category; the LUT is applied here.
    pub target: BitMask,
    /// Eroded pre-captured mask feeding the source histogram.
    pub source: BitMask,
    /// Eroded, covered panorama mask feeding the reference histogram.
    pub reference: BitMask,
}

/// Masks for `pair`, or `None` when the category is empty on either side.
pub fn category_masks(
    pre_labels: &LabelMap,
    gen_labels: &LabelMap,
    gen_cover: &BitMask,
    pair: &CategoryPair,
    erode_px: usize,
) -> Result<Option<CategoryMasks>> {
    let target = category_mask(pre_labels, pair.pre_id, None)?;
    let gen_mask = category_mask(gen_labels, pair.gen_id, Some(gen_cover))?;
    if !target.any() || !gen_mask.any() {
        return Ok(None);
    }
    Ok(Some(CategoryMasks {
        source: eroded(&target, erode_px),
        reference: eroded(&gen_mask, erode_px),
        target,
    }))
}

fn eroded(mask: &BitMask, px: usize) -> BitMask {
    let mut m = mask.clone();
    for _ in 0..px {
        m = m.erode(true);
    }
    // a thin category is better sampled whole than not at all
    if m.any() {
        m
    } else {
        mask.clone()
    }
}

/// Matches each paired category of `precap` to the tone of the warped
/// panorama, then levels every remaining non-sky pixel with Poisson
/// editing against the corrected surroundings.
///
/// The reference histogram only uses panorama pixels inside `gen_cover`.
/// Sky is untouched here; during leveling it acts as a no-flux edge
/// unless a region has no other neighbor.
#[allow(clippy::too_many_arguments)]
pub fn correct_intensity<T: Real>(
    precap: &EquirectImage<T>,
    pre_labels: &LabelMap,
    gen: &EquirectImage<T>,
    gen_labels: &LabelMap,
    gen_cover: &BitMask,
    pairing: &CategoryPairing,
    opts: &ToneOptions,
) -> Result<ToneResult<T>> {
    let dims = precap.dims();
    gen.check_same_dims(dims)?;
    gen_cover.check_dims(dims)?;
    if pre_labels.dims() != dims || gen_labels.dims() != dims {
        return Err(Error::DimensionMismatch {
            expected: dims,
            actual: if pre_labels.dims() != dims {
                pre_labels.dims()
            } else {
                gen_labels.dims()
            },
        });
    }
    if gen.channels() != precap.channels() {
        return Err(Error::invalid("panorama and pre-captured image channel counts differ"));
    }
    let mut image = precap.as_raster().clone();
    let mut corrected = BitMask::new(dims.0, dims.1);
    let mut categories = Vec::new();
    let mut demoted = Vec::new();
    for pair in &pairing.pairs {
        let Some(masks) = category_masks(pre_labels, gen_labels, gen_cover, pair, opts.erode_px)? else {
            log::warn!("category {:?} is empty in one image; leaving it to Poisson leveling", pair.name);
            demoted.push(pair.name.clone());
            continue;
        };
        let src = cdf(precap, &masks.source)?;
        let reference = cdf(gen, &masks.reference)?;
        let lut = match_lut(&src, &reference)?;
        image = apply_lut(&image, &masks.target, &lut)?;
        corrected = corrected.or(&masks.target);
        log::debug!(
            "category {}: {} source px, {} reference px",
            pair.name,
            src.total(),
            reference.total()
        );
        categories.push(CategoryTone {
            name: pair.name.clone(),
            pre_id: pair.pre_id,
            gen_id: pair.gen_id,
            lut,
            src_pixels: src.total(),
            ref_pixels: reference.total(),
        });
    }
    let sky = match pairing.sky.map(|(_, p)| p).or_else(|| pre_labels.id_of(SKY)) {
        Some(id) => category_mask(pre_labels, id, None)?,
        None => BitMask::new(dims.0, dims.1),
    };
    let residual = corrected.or(&sky).not();
    let guide = (!opts.membrane).then_some(precap.as_raster());
    let (image, stats) = if residual.any() {
        poisson::solve(
            &image,
            &residual,
            Some(&sky),
            guide,
            &opts.poisson,
            poisson::Unconstrained::Skip,
        )?
    } else {
        (image, PoissonStats::default())
    };
    Ok(ToneResult {
        image,
        categories,
        demoted,
        residual,
        poisson: stats,
    })
}
