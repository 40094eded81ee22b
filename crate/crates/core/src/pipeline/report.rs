use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::align::{AltKind, AltTransform, SimilarityTransform2D};
use crate::scalar::Real;

/// Transform from panorama pixels to pre-captured pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TransformRecord {
    Similarity { sx: f64, sy: f64, tx: f64, ty: f64 },
    Affine { m: [[f64; 3]; 3] },
    Homography { m: [[f64; 3]; 3] },
}

impl Default for TransformRecord {
    fn default() -> Self {
        Self::Similarity {
            sx: 1.0,
            sy: 1.0,
            tx: 0.0,
            ty: 0.0,
        }
    }
}

impl TransformRecord {
    pub fn similarity<T: Real>(t: &SimilarityTransform2D<T>) -> Self {
        Self::Similarity {
            sx: t.sx.as_f64(),
            sy: t.sy.as_f64(),
            tx: t.tx.as_f64(),
            ty: t.ty.as_f64(),
        }
    }

    pub fn alt<T: Real>(t: &AltTransform<T>) -> Self {
        let m = t.m.0.map(|row| row.map(|v| v.as_f64()));
        match t.kind {
            AltKind::Affine => Self::Affine { m },
            AltKind::Homography => Self::Homography { m },
        }
    }

    /// The similarity parameters, if this is a similarity.
    pub fn as_similarity(&self) -> Option<SimilarityTransform2D<f64>> {
        match *self {
            Self::Similarity { sx, sy, tx, ty } => Some(SimilarityTransform2D { sx, sy, tx, ty }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    /// Artifacts consumed; run inputs are prefixed with `input:`.
    pub reads: Vec<String>,
    pub writes: Vec<String>,
    pub seconds: f64,
}

/// Tone-match quality of one category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub name: String,
    /// Pre-captured pixels of the category.
    pub pixels: usize,
    /// CDF distance to the panorama before and after correction.
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub stages: Vec<StageRecord>,
    pub frames_used: usize,
    pub stitch_inliers: Vec<usize>,
    /// Match counts of non-iterative fits.
    pub matches: Vec<usize>,
    /// Inliers of each alignment round.
    pub inliers: Vec<usize>,
    pub transform: TransformRecord,
    pub categories: Vec<CategoryReport>,
    pub poisson_pixels: usize,
    pub poisson_iterations: usize,
    pub poisson_residual: f64,
    pub sky_copied: usize,
    pub sky_zenith_filled: usize,
    pub sky_equirect_filled: usize,
    pub warnings: Vec<String>,
}

/// `v` rounded to six significant digits, shortest form.
pub(crate) fn sig6(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let r: f64 = format!("{v:.5e}").parse().expect("formatted float parses");
    format!("{r}")
}

impl RunReport {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// Checks that stages appear once and only read run inputs or
    /// artifacts written by an earlier stage.
    pub fn audit(&self) -> Result<(), String> {
        let mut seen_stages = BTreeSet::new();
        let mut written = BTreeSet::new();
        for s in &self.stages {
            if !seen_stages.insert(s.name.as_str()) {
                return Err(format!("stage {} ran more than once", s.name));
            }
            for r in &s.reads {
                if !r.starts_with("input:") && !written.contains(r.as_str()) {
                    return Err(format!("stage {} reads {r} before any stage wrote it", s.name));
                }
            }
            for w in &s.writes {
                if !written.insert(w.as_str()) {
                    return Err(format!("artifact {w} is written twice"));
                }
            }
        }
        Ok(())
    }

    /// Flat `key = value` lines with numbers at six significant digits.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        for s in &self.stages {
            kv(&format!("stage.{}.seconds", s.name), sig6(s.seconds));
        }
        if self.frames_used > 0 {
            kv("stitch.frames", self.frames_used.to_string());
            kv("stitch.min_inliers", self.stitch_inliers.iter().min().copied().unwrap_or(0).to_string());
        }
        for (i, m) in self.matches.iter().enumerate() {
            kv(&format!("align.fit{}.matches", i + 1), m.to_string());
        }
        for (i, n) in self.inliers.iter().enumerate() {
            kv(&format!("align.round{}.inliers", i + 1), n.to_string());
        }
        match &self.transform {
            TransformRecord::Similarity { sx, sy, tx, ty } => {
                kv("transform.kind", "similarity".into());
                kv("transform.sx", sig6(*sx));
                kv("transform.sy", sig6(*sy));
                kv("transform.tx", sig6(*tx));
                kv("transform.ty", sig6(*ty));
            }
            TransformRecord::Affine { m } | TransformRecord::Homography { m } => {
                let kind = if matches!(self.transform, TransformRecord::Affine { .. }) {
                    "affine"
                } else {
                    "homography"
                };
                kv("transform.kind", kind.into());
                for (r, row) in m.iter().enumerate() {
                    for (c, v) in row.iter().enumerate() {
                        kv(&format!("transform.m{r}{c}"), sig6(*v));
                    }
                }
            }
        }
        for c in &self.categories {
            kv(&format!("tone.{}.pixels", c.name), c.pixels.to_string());
            kv(&format!("tone.{}.cdf_before", c.name), sig6(c.before));
            kv(&format!("tone.{}.cdf_after", c.name), sig6(c.after));
        }
        kv("poisson.pixels", self.poisson_pixels.to_string());
        kv("poisson.iterations", self.poisson_iterations.to_string());
        kv("poisson.residual", sig6(self.poisson_residual));
        kv("sky.copied", self.sky_copied.to_string());
        kv("sky.zenith_filled", self.sky_zenith_filled.to_string());
        kv("sky.equirect_filled", self.sky_equirect_filled.to_string());
        kv("warnings", self.warnings.len().to_string());
        out
    }

    /// Human-readable summary.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "panofix run (seed {})", self.seed);
        let _ = writeln!(out, "\nstages:");
        for s in &self.stages {
            let _ = writeln!(out, "  {:<14} {:>9} s", s.name, sig6(s.seconds));
        }
        if self.frames_used > 0 {
            let _ = writeln!(
                out,
                "\nstitching: {} frames, inliers per pair {:?}",
                self.frames_used, self.stitch_inliers
            );
        }
        let _ = writeln!(out, "\nalignment:");
        if !self.inliers.is_empty() {
            let _ = writeln!(out, "  inliers per round {:?}", self.inliers);
        }
        if !self.matches.is_empty() {
            let _ = writeln!(out, "  matches {:?}", self.matches);
        }
        match &self.transform {
            TransformRecord::Similarity { sx, sy, tx, ty } => {
                let _ = writeln!(
                    out,
                    "  similarity sx={} sy={} tx={} ty={}",
                    sig6(*sx),
                    sig6(*sy),
                    sig6(*tx),
                    sig6(*ty)
                );
            }
            TransformRecord::Affine { m } | TransformRecord::Homography { m } => {
                for row in m {
                    let _ = writeln!(out, "  [{} {} {}]", sig6(row[0]), sig6(row[1]), sig6(row[2]));
                }
            }
        }
        let _ = writeln!(out, "\ntone (CDF distance to the panorama):");
        for c in &self.categories {
            let _ = writeln!(
                out,
                "  {:<12} {:>8} px  before {:<10} after {}",
                c.name,
                c.pixels,
                sig6(c.before),
                sig6(c.after)
            );
        }
        let _ = writeln!(
            out,
            "  poisson: {} px, {} iterations, residual {}",
            self.poisson_pixels,
            self.poisson_iterations,
            sig6(self.poisson_residual)
        );
        let _ = writeln!(
            out,
            "\nsky: {} copied, {} filled via zenith view, {} filled in the panorama",
            self.sky_copied, self.sky_zenith_filled, self.sky_equirect_filled
        );
        if !self.warnings.is_empty() {
            let _ = writeln!(out, "\nwarnings:");
            for w in &self.warnings {
                let _ = writeln!(out, "  - {w}");
            }
        }
        out
    }
}
