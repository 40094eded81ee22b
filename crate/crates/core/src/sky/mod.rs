//! Sky replacement: copy the covered current sky, then inpaint the rest
//! through a zenith view and finally in the equirect domain.

mod inpaint;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::{extract_mask, extract_perspective, insert_perspective, MaskRule, PerspectiveView};
use crate::raster::{BitMask, EquirectImage};
use crate::scalar::Real;
use crate::segment::{category_mask, LabelMap, SKY};

pub use inpaint::{inpaint_exemplar, InpaintParams};

/// Zenith view used for the polar sky.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ZenithConfig {
    pub h_fov_deg: f64,
    /// Side of the square view; the panorama height when `None`.
    pub side: Option<usize>,
}

impl Default for ZenithConfig {
    fn default() -> Self {
        Self {
            h_fov_deg: 150.0,
            side: None,
        }
    }
}

impl ZenithConfig {
    pub fn view<T: Real>(&self, pano_height: usize) -> Result<PerspectiveView<T>> {
        PerspectiveView::zenith(T::lit(self.h_fov_deg.to_radians()), self.side.unwrap_or(pano_height))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkyPlan<T> {
    /// Pre-captured sky that the panorama shows as sky.
    pub copy_mask: BitMask,
    /// Pre-captured sky left to inpaint.
    pub hole_mask: BitMask,
    pub zenith_view: PerspectiveView<T>,
}

impl<T> SkyPlan<T> {
    pub fn is_empty(&self) -> bool {
        !self.copy_mask.any() && !self.hole_mask.any()
    }
}

fn sky_mask(labels: &LabelMap) -> Result<Option<BitMask>> {
    labels.id_of(SKY).map(|id| category_mask(labels, id, None)).transpose()
}

/// Splits the pre-captured sky into the part the panorama can supply
/// directly and the part that must be inpainted.
pub fn build_sky_plan<T: Real>(
    pre_labels: &LabelMap,
    gen_labels: &LabelMap,
    gen_cover: &BitMask,
    zenith: &ZenithConfig,
) -> Result<SkyPlan<T>> {
    let dims = pre_labels.dims();
    if gen_labels.dims() != dims {
        return Err(Error::DimensionMismatch {
            expected: dims,
            actual: gen_labels.dims(),
        });
    }
    gen_cover.check_dims(dims)?;
    let zenith_view = zenith.view(dims.1)?;
    let empty = BitMask::new(dims.0, dims.1);
    let pre_sky = match sky_mask(pre_labels)? {
        Some(m) if m.any() => m,
        _ => {
            log::warn!("pre-captured image has no sky pixels; sky stage does nothing");
            return Ok(SkyPlan {
                copy_mask: empty.clone(),
                hole_mask: empty,
                zenith_view,
            });
        }
    };
    let gen_sky = sky_mask(gen_labels)?.unwrap_or_else(|| {
        log::warn!("panorama labels have no sky category; all sky will be inpainted");
        empty
    });
    let copy_mask = pre_sky.and(&gen_sky).and(gen_cover);
    let hole_mask = pre_sky.minus(&copy_mask);
    Ok(SkyPlan {
        copy_mask,
        hole_mask,
        zenith_view,
    })
}

/// Replaces the copy region with panorama pixels.
///
/// With `feather > 0`, copy pixels within `feather` steps of non-sky
/// pixels blend linearly from the pre-captured value to the panorama's.
/// Pixels outside the copy region are never touched.
pub fn copy_sky<T: Real>(
    precap: &EquirectImage<T>,
    gen: &EquirectImage<T>,
    plan: &SkyPlan<T>,
    feather: usize,
) -> Result<EquirectImage<T>> {
    gen.check_same_dims(precap.dims())?;
    plan.copy_mask.check_dims(precap.dims())?;
    if gen.channels() != precap.channels() {
        return Err(Error::invalid("panorama and pre-captured image channel counts differ"));
    }
    let mut out = precap.clone();
    let c = precap.channels();
    if feather == 0 {
        out.raster_mut().copy_masked(gen, &plan.copy_mask)?;
        return Ok(out);
    }
    // depth[i] = number of erosions of the whole sky that keep pixel i
    let mut depth = vec![usize::MAX; plan.copy_mask.bits().len()];
    let mut layer = plan.copy_mask.or(&plan.hole_mask);
    for d in 1..=feather {
        let next = layer.erode(true);
        for i in layer.minus(&next).iter_set() {
            depth[i] = d;
        }
        layer = next;
    }
    let denom = T::from_usize_lossy(feather + 1);
    for i in plan.copy_mask.iter_set() {
        let px = out.raster_mut().pixel_at_mut(i);
        if depth[i] == usize::MAX {
            px.copy_from_slice(gen.pixel_at(i));
        } else {
            let a = T::from_usize_lossy(depth[i]) / denom;
            for k in 0..c {
                px[k] = px[k] + a * (gen.pixel_at(i)[k] - px[k]);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SkyRepair<T> {
    pub image: EquirectImage<T>,
    /// Hole pixels written back from the zenith view.
    pub zenith_filled: BitMask,
    /// Hole pixels inpainted directly in the equirect image.
    pub equirect_filled: BitMask,
}

/// Fills the plan's hole: first inside the zenith view, then whatever the
/// view could not reach, directly on the panorama with horizontal wrap.
///
/// Exemplars come only from the copy region, i.e. the current sky.
pub fn repair_sky<T: Real>(img: &EquirectImage<T>, plan: &SkyPlan<T>, params: &InpaintParams) -> Result<SkyRepair<T>> {
    params.validate()?;
    let (w, h) = img.dims();
    plan.hole_mask.check_dims((w, h))?;
    plan.copy_mask.check_dims((w, h))?;
    let mut out = img.clone();
    let mut zenith_filled = BitMask::new(w, h);
    if !plan.hole_mask.any() {
        return Ok(SkyRepair {
            image: out,
            equirect_filled: zenith_filled.clone(),
            zenith_filled,
        });
    }

    let view = &plan.zenith_view;
    let src_v = extract_mask(&plan.copy_mask, view, MaskRule::All);
    let hole_v = extract_mask(&plan.hole_mask, view, MaskRule::Any).minus(&src_v);
    if hole_v.any() {
        let persp = extract_perspective(img, view);
        match inpaint::exemplar_fill(&persp, &hole_v, &src_v, None, params, false) {
            Ok(filled) => {
                let (inserted, written) = insert_perspective(img, &filled, view, &src_v.or(&hole_v))?;
                zenith_filled = written.and(&plan.hole_mask);
                out.raster_mut().copy_masked(&inserted, &zenith_filled)?;
            }
            Err(Error::SourceTooSmall { .. }) => {
                log::warn!("zenith view holds no full sky patch; inpainting in the panorama only");
            }
            Err(e) => return Err(e),
        }
    }

    let rest = plan.hole_mask.minus(&zenith_filled);
    if rest.any() {
        let filled = inpaint::exemplar_fill(&out, &rest, &plan.copy_mask, Some(&zenith_filled), params, true)?;
        out = EquirectImage::new(filled)?;
    }
    Ok(SkyRepair {
        image: out,
        zenith_filled,
        equirect_filled: rest,
    })
}
