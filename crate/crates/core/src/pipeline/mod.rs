//! End-to-end calibration: ingest or stitch the panorama, align it to the
//! pre-captured image, pair label categories, correct tone, replace sky.

mod report;
pub mod synth;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::align::{
    fit_alt, iterative_align, warp_labels, warp_labels_alt, warp_panorama_alt, AltKind, AltTransform, RansacParams,
    SimilarityTransform2D,
};
use crate::correspond::{load_matches, Correspondence, CorrespondenceProvider, FeatureMatcher, FixedMatches};
use crate::error::{Error, Result};
use crate::io::{read_image, read_mask, write_image, write_mask};
use crate::raster::{BitMask, EquirectImage, RasterImage};
use crate::scalar::Real;
use crate::segment::{
    fallback_sky_segment, load_labels, pair_categories, select_categories, write_labels, FallbackSkyParams, LabelMap,
};
use crate::sky::{build_sky_plan, copy_sky, repair_sky, InpaintParams, ZenithConfig};
use crate::stitch::{auto_frame_step, composite_panorama, estimate_rotations, FrameSet, StitchParams};
use crate::tone::{category_masks, cdf, correct_intensity, PoissonParams, ToneOptions};

pub use report::{CategoryReport, RunReport, StageRecord, TransformRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    #[default]
    Similarity,
    Affine,
    Homography,
}

impl std::str::FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "similarity" => Ok(Self::Similarity),
            "affine" => Ok(Self::Affine),
            "homography" => Ok(Self::Homography),
            other => Err(Error::Config(format!(
                "unknown transform {other:?} (expected similarity, affine or homography)"
            ))),
        }
    }
}

/// Where the current panorama comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PanoramaSource {
    /// A stitched equirectangular panorama. Without a coverage mask, every
    /// pixel that is not pure black counts as covered.
    Image { path: PathBuf, coverage: Option<PathBuf> },
    /// A directory of perspective frames, stitched before alignment.
    Frames {
        dir: PathBuf,
        hfov_deg: f64,
        /// Use every k-th frame; picked automatically when absent.
        frame_step: Option<usize>,
    },
}

/// Tunables of a run. Everything here has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunOptions {
    pub transform: TransformKind,
    pub ransac: RansacParams,
    pub rounds: usize,
    /// Alignment stops once an increment moves no corner by this many pixels.
    pub eps: f64,
    /// Seeds every random choice of the run.
    pub seed: u64,
    pub uniform_scale: bool,
    pub stitch: StitchParams,
    /// Target spacing between used frames when the step is automatic.
    pub frame_spacing_deg: f64,
    pub erode_px: usize,
    pub membrane: bool,
    pub poisson: PoissonParams,
    pub zenith: ZenithConfig,
    pub inpaint: InpaintParams,
    /// Blend the copied sky over this many pixels when `feather` is set.
    pub feather_px: usize,
    /// Feather both the stitched composite and the sky copy.
    pub feather: bool,
    /// Segment the panorama's sky heuristically when no labels are given.
    pub fallback_sky: bool,
    /// Skip the sky stages; the result is the tone-corrected image.
    pub skip_sky: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            transform: TransformKind::Similarity,
            ransac: RansacParams::default(),
            rounds: 3,
            eps: 0.5,
            seed: 42,
            uniform_scale: false,
            stitch: StitchParams::default(),
            frame_spacing_deg: 10.0,
            erode_px: 1,
            membrane: false,
            poisson: PoissonParams::default(),
            zenith: ZenithConfig::default(),
            inpaint: InpaintParams::default(),
            feather_px: 4,
            feather: false,
            fallback_sky: false,
            skip_sky: false,
        }
    }
}

impl RunOptions {
    fn ransac(&self) -> RansacParams {
        RansacParams {
            seed: self.seed,
            uniform_scale: self.uniform_scale,
            ..self.ransac
        }
    }

    fn stitch(&self) -> StitchParams {
        StitchParams {
            seed: self.seed,
            feather: self.feather,
            ..self.stitch
        }
    }

    fn tone(&self) -> ToneOptions {
        ToneOptions {
            erode_px: self.erode_px,
            membrane: self.membrane,
            poisson: self.poisson,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return Err(Error::Config(format!("eps must be a non-negative number, got {}", self.eps)));
        }
        if !(self.frame_spacing_deg > 0.0) {
            return Err(Error::Config("frame spacing must be positive".into()));
        }
        self.inpaint.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

/// A full file-based run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub precap: PathBuf,
    pub panorama: PanoramaSource,
    pub labels_pre: Option<PathBuf>,
    pub labels_gen: Option<PathBuf>,
    pub palette: Option<PathBuf>,
    /// Precomputed panorama-to-precap correspondences (CSV).
    pub matches: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Also write every intermediate artifact.
    #[serde(default)]
    pub dump: bool,
    #[serde(default)]
    pub options: RunOptions,
}

fn require_file(what: &str, p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} {} does not exist", p.display())))
    }
}

impl PipelineConfig {
    /// Checks every referenced path and option without touching pixels.
    pub fn validate(&self) -> Result<()> {
        self.options.validate()?;
        require_file("pre-captured image", &self.precap)?;
        match &self.panorama {
            PanoramaSource::Image { path, coverage } => {
                require_file("panorama", path)?;
                if let Some(c) = coverage {
                    require_file("coverage mask", c)?;
                }
            }
            PanoramaSource::Frames { dir, hfov_deg, frame_step } => {
                if !dir.is_dir() {
                    return Err(Error::Config(format!("frame directory {} does not exist", dir.display())));
                }
                if !(*hfov_deg > 0.0 && *hfov_deg < 180.0) {
                    return Err(Error::Config(format!("horizontal fov must be in (0, 180), got {hfov_deg}")));
                }
                if *frame_step == Some(0) {
                    return Err(Error::Config("frame step must be at least 1".into()));
                }
            }
        }
        match (&self.labels_pre, &self.labels_gen) {
            (Some(lp), Some(lg)) => {
                require_file("pre-captured labels", lp)?;
                require_file("panorama labels", lg)?;
                let palette = self
                    .palette
                    .as_ref()
                    .ok_or_else(|| Error::Config("label maps need a palette file".into()))?;
                require_file("palette", palette)?;
            }
            (None, None) if self.options.fallback_sky => {}
            (None, None) => {
                return Err(Error::Config(
                    "no label maps given; pass both label maps or enable the fallback sky segmentation".into(),
                ))
            }
            _ => return Err(Error::Config("pass both label maps or neither".into())),
        }
        if let Some(m) = &self.matches {
            require_file("matches file", m)?;
        }
        Ok(())
    }
}

/// The panorama as handed to a run.
#[derive(Debug, Clone)]
pub enum PanoramaInput<T> {
    Image { image: EquirectImage<T>, cover: BitMask },
    Frames { frames: FrameSet<T>, step: Option<usize> },
}

/// In-memory inputs of a run.
#[derive(Debug, Clone)]
pub struct Inputs<T> {
    pub precap: EquirectImage<T>,
    pub panorama: PanoramaInput<T>,
    /// Labels of the pre-captured image and of the panorama (panorama frame).
    pub labels: Option<(LabelMap, LabelMap)>,
    pub matches: Option<Vec<Correspondence<T>>>,
}

/// An intermediate product, kept for dumping and inspection.
#[derive(Debug, Clone)]
pub enum Artifact<T> {
    Image(RasterImage<T>),
    Mask(BitMask),
    Labels(LabelMap),
}

#[derive(Debug, Clone)]
pub struct RunOutput<T> {
    pub image: EquirectImage<T>,
    pub report: RunReport,
    /// `(name, artifact)` in production order; names start with the stage number.
    pub artifacts: Vec<(String, Artifact<T>)>,
}

impl<T> RunOutput<T> {
    pub fn artifact(&self, name: &str) -> Option<&Artifact<T>> {
        self.artifacts.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }
}

/// Pixels that are not exactly black.
pub fn coverage_from_image<T: Real>(img: &RasterImage<T>) -> BitMask {
    let (w, h) = img.dims();
    BitMask::from_fn(w, h, |x, y| img.pixel(x, y).iter().any(|&v| v > T::zero()))
}

enum Applied<T> {
    Similarity(SimilarityTransform2D<T>),
    Alt(AltTransform<T>),
}

struct Runner<T> {
    report: RunReport,
    artifacts: Vec<(String, Artifact<T>)>,
}

impl<T: Real> Runner<T> {
    fn stage<R>(
        &mut self,
        name: &'static str,
        reads: &[&str],
        writes: &[&str],
        f: impl FnOnce(&mut Self) -> Result<R>,
    ) -> Result<R> {
        let start = Instant::now();
        let out = f(self).map_err(|e| e.at_stage(name))?;
        self.report.stages.push(StageRecord {
            name: name.to_string(),
            reads: reads.iter().map(|s| s.to_string()).collect(),
            writes: writes.iter().map(|s| s.to_string()).collect(),
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(out)
    }

    fn keep(&mut self, name: &str, a: Artifact<T>) {
        self.artifacts.push((name.to_string(), a));
    }

    fn warn(&mut self, msg: String) {
        log::warn!("{msg}");
        self.report.warnings.push(msg);
    }
}

/// Largest per-channel CDF distance between two masked regions.
fn category_distance<T: Real>(
    a: &RasterImage<T>,
    a_mask: &BitMask,
    b: &RasterImage<T>,
    b_mask: &BitMask,
) -> Result<f64> {
    Ok(cdf(a, a_mask)?.distance(&cdf(b, b_mask)?))
}

/// Runs every stage on in-memory inputs.
pub fn run_on<T: Real>(inputs: Inputs<T>, opts: &RunOptions) -> Result<RunOutput<T>> {
    opts.validate()?;
    let Inputs {
        precap,
        panorama,
        labels,
        matches,
    } = inputs;
    if labels.is_none() && !opts.fallback_sky {
        return Err(Error::Config("no label maps and no fallback sky segmentation".into()));
    }
    let (w, h) = precap.dims();
    let mut r = Runner {
        report: RunReport::new(opts.seed),
        artifacts: Vec::new(),
    };

    // (2) current panorama
    let (pano, pano_cover) = r.stage(
        "2-panorama",
        &["input:panorama"],
        &["panorama", "panorama_cover"],
        |r| match panorama {
            PanoramaInput::Image { image, cover } => {
                cover.check_dims(image.dims())?;
                Ok((image, cover))
            }
            PanoramaInput::Frames { frames, step } => {
                let params = opts.stitch();
                let matcher = FeatureMatcher::default();
                let step = match step {
                    Some(s) => s,
                    None => auto_frame_step(&frames, &matcher, &params, opts.frame_spacing_deg),
                };
                let used = frames.every(step);
                let chain = estimate_rotations(&used, &matcher, &params)?;
                r.report.frames_used = used.len();
                r.report.stitch_inliers = chain.inliers.clone();
                composite_panorama(&used, &chain, h, opts.feather)
            }
        },
    )?;
    r.keep("2_panorama", Artifact::Image(pano.as_raster().clone()));
    r.keep("2_coverage", Artifact::Mask(pano_cover.clone()));

    // (3) alignment
    let (aligned, aligned_cover, applied) = r.stage(
        "3-align",
        &["panorama", "panorama_cover", "input:precap", "input:matches"],
        &["aligned", "aligned_cover", "transform"],
        |r| {
            let ransac = opts.ransac();
            let fixed = matches.map(FixedMatches);
            let matcher: &dyn CorrespondenceProvider<T> = match &fixed {
                Some(m) => m,
                None => &FeatureMatcher::default(),
            };
            match opts.transform {
                TransformKind::Similarity => {
                    let mut rounds = opts.rounds;
                    if fixed.is_some() && rounds > 1 {
                        r.warn("precomputed matches refer to the unwarped panorama; running a single alignment round".into());
                        rounds = 1;
                    }
                    let al = iterative_align(&pano, &pano_cover, &precap, matcher, rounds, T::lit(opts.eps), &ransac)?;
                    r.report.inliers = al.inliers.clone();
                    r.report.transform = TransformRecord::similarity(&al.transform);
                    Ok((al.image, al.cover, Applied::Similarity(al.transform)))
                }
                kind => {
                    let kind = if kind == TransformKind::Affine {
                        AltKind::Affine
                    } else {
                        AltKind::Homography
                    };
                    let m = matcher.correspond(&pano, Some(&pano_cover), &precap, None)?;
                    r.report.matches.push(m.len());
                    let t = fit_alt(&m, kind, &ransac)?;
                    r.report.transform = TransformRecord::alt(&t);
                    let (img, cover) = warp_panorama_alt(&pano, &pano_cover, &t, w, h)?;
                    Ok((img, cover, Applied::Alt(t)))
                }
            }
        },
    )?;
    r.keep("3_aligned", Artifact::Image(aligned.as_raster().clone()));
    r.keep("3_coverage", Artifact::Mask(aligned_cover.clone()));

    // (4) labels and category pairing
    let (pre_labels, gen_labels, pairing) = r.stage(
        "4-segment",
        &["input:labels", "panorama", "panorama_cover", "input:precap", "transform"],
        &["labels_pre", "labels_gen", "pairing"],
        |r| {
            let (pre, gen) = match labels {
                Some((pre, gen)) => (pre.fit_to((w, h), "pre-captured labels"), gen.fit_to(pano.dims(), "panorama labels")),
                None => {
                    r.warn("no label maps; using the heuristic sky segmentation".into());
                    let fp = FallbackSkyParams::default();
                    (
                        fallback_sky_segment(&precap, None, &fp),
                        fallback_sky_segment(&pano, Some(&pano_cover), &fp),
                    )
                }
            };
            let (gen, _) = match &applied {
                Applied::Similarity(t) => warp_labels(&gen, &pano_cover, t, w, h)?,
                Applied::Alt(t) => warp_labels_alt(&gen, &pano_cover, t, w, h)?,
            };
            let sel = select_categories(&gen, &aligned_cover)?;
            let pairing = pair_categories(&gen, &sel, &pre);
            for name in &pairing.unmatched {
                r.warn(format!("panorama category {name:?} has no counterpart in the pre-captured labels"));
            }
            Ok((pre, gen, pairing))
        },
    )?;
    r.keep("4_labels_pre", Artifact::Labels(pre_labels.clone()));
    r.keep("4_labels_gen", Artifact::Labels(gen_labels.clone()));

    // (5) tone
    let tone = r.stage(
        "5-tone",
        &["input:precap", "labels_pre", "aligned", "labels_gen", "aligned_cover", "pairing"],
        &["tone", "tone_residual"],
        |r| {
            let tone = correct_intensity(&precap, &pre_labels, &aligned, &gen_labels, &aligned_cover, &pairing, &opts.tone())?;
            for name in &tone.demoted {
                r.warn(format!("category {name:?} is empty on one side; left to Poisson leveling"));
            }
            for pair in &pairing.pairs {
                let Some(m) = category_masks(&pre_labels, &gen_labels, &aligned_cover, pair, opts.erode_px)? else {
                    continue;
                };
                r.report.categories.push(CategoryReport {
                    name: pair.name.clone(),
                    before: category_distance(&precap, &m.source, &aligned, &m.reference)?,
                    after: category_distance(&tone.image, &m.source, &aligned, &m.reference)?,
                    pixels: m.target.count(),
                });
            }
            r.report.poisson_pixels = tone.residual.count();
            r.report.poisson_iterations = tone.poisson.iterations;
            r.report.poisson_residual = tone.poisson.residual;
            Ok(tone)
        },
    )?;
    let toned = EquirectImage::new(tone.image)?;
    r.keep("5_tone", Artifact::Image(toned.as_raster().clone()));
    r.keep("5_residual", Artifact::Mask(tone.residual));

    // (6) sky
    let result = if opts.skip_sky {
        r.warn("sky stage skipped".into());
        toned
    } else {
        let plan = r.stage(
            "6-sky-plan",
            &["labels_pre", "labels_gen", "aligned_cover"],
            &["sky_plan"],
            |_| build_sky_plan::<T>(&pre_labels, &gen_labels, &aligned_cover, &opts.zenith),
        )?;
        if plan.is_empty() {
            r.warn("no sky in the pre-captured labels; nothing to replace".into());
        }
        r.keep("6_sky_copy", Artifact::Mask(plan.copy_mask.clone()));
        r.keep("6_sky_hole", Artifact::Mask(plan.hole_mask.clone()));
        let copied = r.stage("6-sky-copy", &["tone", "aligned", "sky_plan"], &["sky_copied"], |_| {
            let feather = if opts.feather { opts.feather_px } else { 0 };
            copy_sky(&toned, &aligned, &plan, feather)
        })?;
        r.keep("6_sky_copied", Artifact::Image(copied.as_raster().clone()));
        let repaired = r.stage("6-sky-repair", &["sky_copied", "sky_plan"], &["sky_repaired"], |r| {
            r.report.sky_copied = plan.copy_mask.count();
            match repair_sky(&copied, &plan, &opts.inpaint) {
                Ok(rep) => {
                    r.report.sky_zenith_filled = rep.zenith_filled.count();
                    r.report.sky_equirect_filled = rep.equirect_filled.count();
                    r.keep("6_sky_zenith_filled", Artifact::Mask(rep.zenith_filled));
                    r.keep("6_sky_equirect_filled", Artifact::Mask(rep.equirect_filled));
                    Ok(rep.image)
                }
                Err(Error::SourceTooSmall { patch }) => {
                    r.warn(format!(
                        "current sky holds no full {patch}x{patch} patch; {} sky pixels keep their old look",
                        plan.hole_mask.count()
                    ));
                    Ok(copied.clone())
                }
                Err(e) => Err(e),
            }
        })?;
        repaired
    };

    // (7) result
    let source = if opts.skip_sky { "tone" } else { "sky_repaired" };
    r.stage("7-result", &[source], &["result"], |_| Ok(()))?;
    r.keep("7_result", Artifact::Image(result.as_raster().clone()));
    debug_assert!(r.report.audit().is_ok());
    Ok(RunOutput {
        image: result,
        report: r.report,
        artifacts: r.artifacts,
    })
}

fn read_equirect<T: Real>(path: &Path) -> Result<EquirectImage<T>> {
    EquirectImage::new(read_image(path)?)
}

/// Reads every input named by a validated config.
pub fn load_inputs<T: Real>(config: &PipelineConfig) -> Result<Inputs<T>> {
    let precap = read_equirect::<T>(&config.precap)?;
    let panorama = match &config.panorama {
        PanoramaSource::Image { path, coverage } => {
            let image = read_equirect::<T>(path)?;
            let cover = match coverage {
                Some(c) => read_mask(c)?,
                None => coverage_from_image(&image),
            };
            PanoramaInput::Image { image, cover }
        }
        PanoramaSource::Frames {
            dir,
            hfov_deg,
            frame_step,
        } => PanoramaInput::Frames {
            frames: FrameSet::load_dir(dir, T::lit(hfov_deg.to_radians()))?,
            step: *frame_step,
        },
    };
    let labels = match (&config.labels_pre, &config.labels_gen, &config.palette) {
        (Some(lp), Some(lg), Some(pal)) => Some((load_labels(lp, pal)?, load_labels(lg, pal)?)),
        _ => None,
    };
    let pano_dims = match &panorama {
        PanoramaInput::Image { image, .. } => image.dims(),
        // a stitched composite takes the pre-captured size
        PanoramaInput::Frames { .. } => precap.dims(),
    };
    let matches = match &config.matches {
        Some(m) => Some(load_matches(m, pano_dims, precap.dims())?),
        None => None,
    };
    Ok(Inputs {
        precap,
        panorama,
        labels,
        matches,
    })
}

fn write_artifact<T: Real>(a: &Artifact<T>, path: &Path) -> Result<()> {
    match a {
        Artifact::Image(img) => write_image(img, path),
        Artifact::Mask(m) => write_mask(m, path),
        Artifact::Labels(l) => write_labels(l, path),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Write {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Validates, loads, runs and writes `result.png`, `report.txt`,
/// `report.kv`, `transform.json` and, with `dump`, every intermediate.
pub fn run(config: &PipelineConfig) -> Result<RunOutput<f64>> {
    config.validate()?;
    let inputs = load_inputs::<f64>(config).map_err(|e| e.at_stage("1-load"))?;
    let out = run_on(inputs, &config.options)?;
    let dir = &config.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::Write {
        path: dir.clone(),
        message: e.to_string(),
    })?;
    write_image(out.image.as_raster(), dir.join("result.png"))?;
    write_text(&dir.join("report.txt"), &out.report.to_text())?;
    write_text(&dir.join("report.kv"), &out.report.to_kv())?;
    let json = serde_json::to_string_pretty(&out.report.transform).expect("transform record serializes");
    write_text(&dir.join("transform.json"), &json)?;
    if config.dump {
        for (name, a) in &out.artifacts {
            write_artifact(a, &dir.join(format!("{name}.png")))?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
