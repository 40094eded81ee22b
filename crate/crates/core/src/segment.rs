//! Semantic label maps produced by an external segmenter, category
//! selection, and cross-image category pairing by name.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io;
use crate::raster::{BitMask, EquirectImage};
use crate::scalar::Real;

/// Id of unlabeled or uncovered pixels.
pub const UNLABELED: u8 = 255;
pub const SKY: &str = "sky";
/// Categories kept besides sky.
pub const MAX_KEPT: usize = 4;

/// Per-pixel category ids with a palette naming each id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    ids: Vec<u8>,
    palette: BTreeMap<u8, String>,
}

impl LabelMap {
    /// Validates that every id except [`UNLABELED`] has a palette entry.
    pub fn new(width: usize, height: usize, ids: Vec<u8>, palette: BTreeMap<u8, String>) -> Result<Self> {
        if ids.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                actual: (ids.len(), 1),
            });
        }
        if palette.contains_key(&UNLABELED) {
            return Err(Error::invalid(format!("id {UNLABELED} is reserved for unlabeled pixels")));
        }
        let mut seen = [false; 256];
        for &id in &ids {
            seen[id as usize] = true;
        }
        let orphans: Vec<u8> = (0..UNLABELED).filter(|&id| seen[id as usize] && !palette.contains_key(&id)).collect();
        if !orphans.is_empty() {
            return Err(Error::OrphanLabels(orphans));
        }
        Ok(Self {
            width,
            height,
            ids,
            palette,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn ids(&self) -> &[u8] {
        &self.ids
    }

    pub fn id(&self, x: usize, y: usize) -> u8 {
        self.ids[y * self.width + x]
    }

    pub fn palette(&self) -> &BTreeMap<u8, String> {
        &self.palette
    }

    pub fn name_of(&self, id: u8) -> Option<&str> {
        self.palette.get(&id).map(String::as_str)
    }

    pub fn id_of(&self, name: &str) -> Option<u8> {
        let name = name.trim().to_lowercase();
        self.palette.iter().find(|(_, n)| **n == name).map(|(&id, _)| id)
    }

    /// Nearest-neighbor rescale.
    pub fn resize_nearest(&self, width: usize, height: usize) -> LabelMap {
        let ids = (0..width * height)
            .map(|i| {
                let (x, y) = (i % width, i / width);
                let sx = ((x as f64 + 0.5) * self.width as f64 / width as f64) as usize;
                let sy = ((y as f64 + 0.5) * self.height as f64 / height as f64) as usize;
                self.id(sx.min(self.width - 1), sy.min(self.height - 1))
            })
            .collect();
        LabelMap {
            width,
            height,
            ids,
            palette: self.palette.clone(),
        }
    }

    /// Rescales to `dims` when needed, with a warning.
    pub fn fit_to(self, dims: (usize, usize), what: &str) -> LabelMap {
        if self.dims() == dims {
            return self;
        }
        log::warn!(
            "{what} labels are {}x{} but the image is {}x{}; rescaling with nearest neighbor",
            self.width,
            self.height,
            dims.0,
            dims.1
        );
        self.resize_nearest(dims.0, dims.1)
    }

    /// Same palette, new id raster.
    pub fn with_ids(&self, width: usize, height: usize, ids: Vec<u8>) -> Result<LabelMap> {
        LabelMap::new(width, height, ids, self.palette.clone())
    }

    /// Pixel count per id over `cover` (all pixels when `None`).
    pub fn histogram(&self, cover: Option<&BitMask>) -> Result<[usize; 256]> {
        if let Some(c) = cover {
            c.check_dims(self.dims())?;
        }
        let mut counts = [0usize; 256];
        for (i, &id) in self.ids.iter().enumerate() {
            if cover.is_none_or(|c| c.bits()[i]) {
                counts[id as usize] += 1;
            }
        }
        Ok(counts)
    }
}

/// Parses an `id,name` palette; blank lines and `#` comments are skipped
/// and names are trimmed and lowercased.
pub fn read_palette(path: impl AsRef<Path>) -> Result<BTreeMap<u8, String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    parse_palette(&text, path)
}

fn parse_palette(text: &str, path: &Path) -> Result<BTreeMap<u8, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |message: String| Error::MalformedRow {
            path: path.to_path_buf(),
            line: n as u64 + 1,
            message,
        };
        let (id, name) = line.split_once(',').ok_or_else(|| bad("expected \"id,name\"".into()))?;
        let id: u8 = id.trim().parse().map_err(|_| bad(format!("bad id {:?}", id.trim())))?;
        let name = name.trim().to_lowercase();
        if name.is_empty() {
            return Err(bad("empty name".into()));
        }
        if out.values().any(|v| *v == name) {
            return Err(bad(format!("duplicate name {name:?}")));
        }
        if out.insert(id, name).is_some() {
            return Err(bad(format!("duplicate id {id}")));
        }
    }
    Ok(out)
}

/// Loads a single-channel id PNG and its palette.
pub fn load_labels(path: impl AsRef<Path>, palette_path: impl AsRef<Path>) -> Result<LabelMap> {
    let ids = io::read_ids(path)?;
    let palette = read_palette(palette_path)?;
    LabelMap::new(ids.width, ids.height, ids.data, palette)
}

/// Writes the id raster as a grayscale PNG.
pub fn write_labels(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    io::write_bytes(
        path,
        &io::Bytes {
            width: labels.width,
            height: labels.height,
            channels: 1,
            data: labels.ids.clone(),
        },
    )
}

/// Sky plus up to [`MAX_KEPT`] other categories of the generated image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategorySelection {
    pub sky_id: u8,
    /// Most frequent first.
    pub kept_ids: Vec<u8>,
}

/// Picks the most frequent non-sky ids among covered pixels; equal counts
/// prefer the smaller id.
pub fn select_categories(gen: &LabelMap, cover: &BitMask) -> Result<CategorySelection> {
    let sky_id = gen.id_of(SKY).ok_or(Error::MissingSky)?;
    let counts = gen.histogram(Some(cover))?;
    let mut ids: Vec<u8> = (0..UNLABELED).filter(|&id| id != sky_id && counts[id as usize] > 0).collect();
    ids.sort_by(|a, b| counts[*b as usize].cmp(&counts[*a as usize]).then(a.cmp(b)));
    ids.truncate(MAX_KEPT);
    Ok(CategorySelection { sky_id, kept_ids: ids })
}

/// Pixels labeled `id`, optionally restricted to `extra_cover`.
pub fn category_mask(labels: &LabelMap, id: u8, extra_cover: Option<&BitMask>) -> Result<BitMask> {
    if let Some(c) = extra_cover {
        c.check_dims(labels.dims())?;
    }
    let bits = labels
        .ids
        .iter()
        .enumerate()
        .map(|(i, &v)| v == id && extra_cover.is_none_or(|c| c.bits()[i]))
        .collect();
    BitMask::from_vec(labels.width, labels.height, bits)
}

/// A kept category present in both images under the same name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryPair {
    pub name: String,
    pub gen_id: u8,
    pub pre_id: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CategoryPairing {
    /// Sky ids `(gen, pre)`; `None` when the pre-captured palette has no sky.
    pub sky: Option<(u8, u8)>,
    pub pairs: Vec<CategoryPair>,
    /// Kept names with no counterpart in the pre-captured palette.
    pub unmatched: Vec<String>,
}

/// Matches the selected categories to the pre-captured palette by name.
/// Unmatched names are reported and logged; they fall to the residual region.
pub fn pair_categories(gen: &LabelMap, sel: &CategorySelection, pre: &LabelMap) -> CategoryPairing {
    let sky = pre.id_of(SKY).map(|p| (sel.sky_id, p));
    if sky.is_none() {
        log::warn!("pre-captured labels have no \"{SKY}\" category");
    }
    let mut out = CategoryPairing {
        sky,
        ..Default::default()
    };
    for &id in &sel.kept_ids {
        let name = gen.name_of(id).expect("selected ids come from the palette").to_string();
        match pre.id_of(&name) {
            Some(pre_id) => out.pairs.push(CategoryPair {
                name,
                gen_id: id,
                pre_id,
            }),
            None => out.unmatched.push(name),
        }
    }
    if !out.unmatched.is_empty() {
        log::warn!(
            "categories without a pre-captured counterpart, left to Poisson leveling: {}",
            out.unmatched.join(", ")
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FallbackSkyParams {
    /// Largest per-channel change between vertically adjacent sky pixels.
    pub max_step: f64,
    /// Blue must exceed red and green by this much to count as blue-dominant.
    pub blue_margin: f64,
    /// Low-saturation pixels count as sky when at least this bright.
    pub min_bright: f64,
    /// Saturation bound `(max - min) / max` for the low-saturation rule.
    pub max_saturation: f64,
}

impl Default for FallbackSkyParams {
    fn default() -> Self {
        Self {
            max_step: 0.06,
            blue_margin: 0.02,
            min_bright: 0.45,
            max_saturation: 0.2,
        }
    }
}

pub const FALLBACK_SKY_ID: u8 = 0;
pub const FALLBACK_OTHER_ID: u8 = 1;

/// Heuristic sky/other labeling used when no segmentation is supplied.
///
/// Each column is scanned from the top row down the upper hemisphere; the
/// sky run continues while pixels look like sky and the step from the
/// previous row stays below `max_step`. Pixels outside `cover` are
/// skipped without ending the run. Everything else is "other".
pub fn fallback_sky_segment<T: Real>(
    img: &EquirectImage<T>,
    cover: Option<&BitMask>,
    params: &FallbackSkyParams,
) -> LabelMap {
    let (w, h) = img.dims();
    let c = img.channels();
    let rgb = |x: usize, y: usize| -> [f64; 3] {
        let p = img.pixel(x, y);
        if c >= 3 {
            [p[0].as_f64(), p[1].as_f64(), p[2].as_f64()]
        } else {
            [p[0].as_f64(); 3]
        }
    };
    let looks_like_sky = |p: [f64; 3]| {
        let hi = p[0].max(p[1]).max(p[2]);
        let lo = p[0].min(p[1]).min(p[2]);
        let blue = p[2] >= p[0] + params.blue_margin && p[2] >= p[1] + params.blue_margin;
        let pale = hi >= params.min_bright && (hi - lo) <= params.max_saturation * hi;
        blue || pale
    };
    let mut ids = vec![FALLBACK_OTHER_ID; w * h];
    // rows strictly above the equator
    let upper = h / 2;
    for x in 0..w {
        let mut prev: Option<[f64; 3]> = None;
        for y in 0..upper {
            if cover.is_some_and(|m| !m.get(x, y)) {
                continue;
            }
            let p = rgb(x, y);
            if !looks_like_sky(p) {
                break;
            }
            if let Some(q) = prev {
                let step = (0..3).map(|k| (p[k] - q[k]).abs()).fold(0.0, f64::max);
                if step > params.max_step {
                    break;
                }
            }
            ids[y * w + x] = FALLBACK_SKY_ID;
            prev = Some(p);
        }
    }
    let palette = BTreeMap::from([(FALLBACK_SKY_ID, SKY.to_string()), (FALLBACK_OTHER_ID, "other".to_string())]);
    LabelMap::new(w, h, ids, palette).expect("fallback palette covers its ids")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::RasterImage;
    use proptest::prelude::*;

    fn palette(entries: &[(u8, &str)]) -> BTreeMap<u8, String> {
        entries.iter().map(|&(i, n)| (i, n.to_string())).collect()
    }

    fn rect_labels(w: usize, h: usize, f: impl Fn(usize, usize) -> u8, pal: &[(u8, &str)]) -> LabelMap {
        let ids = (0..w * h).map(|i| f(i % w, i / w)).collect();
        LabelMap::new(w, h, ids, palette(pal)).unwrap()
    }

    #[test]
    fn single_category_map_is_valid() {
        let l = rect_labels(8, 4, |_, _| 3, &[(3, "sky")]);
        assert_eq!(l.histogram(None).unwrap()[3], 32);
        assert_eq!(l.id_of("sky"), Some(3));
    }

    #[test]
    fn orphan_ids_are_listed() {
        let err = LabelMap::new(2, 1, vec![3, 7], palette(&[(3, "sky")])).unwrap_err();
        assert!(matches!(err, Error::OrphanLabels(ref v) if v == &[7]), "{err:?}");
        assert!(err.to_string().contains('7'));
        // unlabeled pixels need no entry
        assert!(LabelMap::new(2, 1, vec![3, UNLABELED], palette(&[(3, "sky")])).is_ok());
    }

    #[test]
    fn palette_and_ids_load_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let pal = dir.path().join("palette.txt");
        std::fs::write(&pal, "# id,name\n0, Sky\n1,tree\n\n2,building\n3,earth\n4,plant\n").unwrap();
        let ids = dir.path().join("ids.png");
        let map = rect_labels(6, 3, |x, _| (x % 5) as u8, &[(0, "sky"), (1, "tree"), (2, "building"), (3, "earth"), (4, "plant")]);
        write_labels(&map, &ids).unwrap();
        let back = load_labels(&ids, &pal).unwrap();
        assert_eq!(back, map);
        let names: Vec<&str> = back.palette().values().map(String::as_str).collect();
        assert_eq!(names, ["sky", "tree", "building", "earth", "plant"]);

        std::fs::write(&pal, "0,sky\n1\n").unwrap();
        assert!(matches!(read_palette(&pal), Err(Error::MalformedRow { line: 2, .. })));
        std::fs::write(&pal, "0,sky\n0,tree\n").unwrap();
        assert!(matches!(read_palette(&pal), Err(Error::MalformedRow { line: 2, .. })));
    }

    const PAL6: [(u8, &str); 7] = [
        (0, "sky"),
        (1, "tree"),
        (2, "building"),
        (3, "earth"),
        (4, "plant"),
        (5, "road"),
        (6, "water"),
    ];

    #[test]
    fn selection_follows_frequency() {
        // 50% sky, 30% tree, 20% building
        let l = rect_labels(10, 1, |x, _| [0, 0, 0, 0, 0, 1, 1, 1, 2, 2][x], &PAL6);
        let sel = select_categories(&l, &BitMask::full(10, 1)).unwrap();
        assert_eq!(sel, CategorySelection { sky_id: 0, kept_ids: vec![1, 2] });
    }

    #[test]
    fn at_most_four_kept_and_ties_prefer_smaller_id() {
        // counts: 1->2, 2->3, 3->3, 4->1, 5->3, 6->2
        let row = [1, 1, 2, 2, 2, 3, 3, 3, 4, 5, 5, 5, 6, 6, 0];
        let l = rect_labels(row.len(), 1, |x, _| row[x], &PAL6);
        let sel = select_categories(&l, &BitMask::full(row.len(), 1)).unwrap();
        assert_eq!(sel.kept_ids, vec![2, 3, 5, 1]);
    }

    #[test]
    fn missing_sky_is_an_error() {
        let l = rect_labels(2, 2, |_, _| 1, &[(1, "tree")]);
        assert!(matches!(select_categories(&l, &BitMask::full(2, 2)), Err(Error::MissingSky)));
    }

    #[test]
    fn category_masks() {
        let l = rect_labels(8, 4, |_, _| 2, &PAL6);
        assert!(!category_mask(&l, 1, None).unwrap().any());
        assert_eq!(category_mask(&l, 2, Some(&BitMask::full(8, 4))).unwrap().count(), 32);
        let left = BitMask::from_fn(8, 4, |x, _| x < 4);
        assert_eq!(category_mask(&l, 2, Some(&left)).unwrap(), left);
    }

    #[test]
    fn pairing_by_name_reports_unmatched() {
        let gen = rect_labels(4, 1, |x, _| x as u8, &[(0, "sky"), (1, "tree"), (2, "earth"), (3, "building")]);
        let pre = rect_labels(4, 1, |x, _| x as u8 + 10, &[(10, "sky"), (11, "building"), (12, "grass"), (13, "tree")]);
        let sel = select_categories(&gen, &BitMask::full(4, 1)).unwrap();
        let p = pair_categories(&gen, &sel, &pre);
        assert_eq!(p.sky, Some((0, 10)));
        let names: Vec<&str> = p.pairs.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["tree", "building"]);
        assert_eq!(p.pairs[0].pre_id, 13);
        assert_eq!(p.unmatched, vec!["earth".to_string()]);
    }

    proptest! {
        #[test]
        fn selection_ignores_uncovered_labels(
            ids in proptest::collection::vec(0u8..7, 64),
            noise in proptest::collection::vec(0u8..7, 64),
            cov in proptest::collection::vec(any::<bool>(), 64),
        ) {
            let cover = BitMask::from_vec(8, 8, cov.clone()).unwrap();
            let a = LabelMap::new(8, 8, ids.clone(), palette(&PAL6)).unwrap();
            let mixed: Vec<u8> = ids.iter().zip(&noise).zip(&cov).map(|((&i, &n), &c)| if c { i } else { n }).collect();
            let b = LabelMap::new(8, 8, mixed, palette(&PAL6)).unwrap();
            prop_assert_eq!(select_categories(&a, &cover).unwrap(), select_categories(&b, &cover).unwrap());
        }

        #[test]
        fn masks_partition_the_image(ids in proptest::collection::vec(prop_oneof![0u8..7, Just(UNLABELED)], 64)) {
            let l = LabelMap::new(8, 8, ids, palette(&PAL6)).unwrap();
            let full = BitMask::full(8, 8);
            let sel = select_categories(&l, &full).unwrap();
            let sky = category_mask(&l, sel.sky_id, None).unwrap();
            let kept: Vec<BitMask> = sel.kept_ids.iter().map(|&id| category_mask(&l, id, None).unwrap()).collect();
            let unlabeled = category_mask(&l, UNLABELED, None).unwrap();
            let mut assigned = sky.or(&unlabeled);
            for m in &kept {
                prop_assert!(!m.and(&assigned).any());
                assigned = assigned.or(m);
            }
            prop_assert!(!sky.and(&unlabeled).any());
            let residual = assigned.not();
            let mut count = vec![0u8; 64];
            for m in kept.iter().chain([&sky, &unlabeled, &residual]) {
                for i in m.iter_set() {
                    count[i] += 1;
                }
            }
            prop_assert!(count.iter().all(|&c| c == 1));
        }
    }

    fn rgb_image(w: usize, h: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> EquirectImage<f64> {
        EquirectImage::new(RasterImage::from_fn(w, h, 3, |x, y, p| p.copy_from_slice(&f(x, y))).unwrap()).unwrap()
    }

    #[test]
    fn fallback_blue_over_green() {
        let img = rgb_image(40, 20, |_, y| if y < 10 { [0.3, 0.5, 0.9] } else { [0.2, 0.6, 0.2] });
        let l = fallback_sky_segment(&img, None, &FallbackSkyParams::default());
        let sky = category_mask(&l, l.id_of("sky").unwrap(), None).unwrap();
        assert_eq!(sky, BitMask::from_fn(40, 20, |_, y| y < 10));
    }

    #[test]
    fn fallback_gray_stops_at_gradient() {
        // bright gray darkening by 0.005 per row, with a 0.18 drop into row 6
        let img = rgb_image(64, 32, |_, y| {
            let v = if y < 6 { 0.9 - 0.01 * y as f64 } else { 0.7 - 0.005 * y as f64 };
            [v; 3]
        });
        for (max_step, want) in [(0.005, 1), (0.02, 6), (0.17, 6), (0.19, 16)] {
            let params = FallbackSkyParams {
                max_step,
                ..FallbackSkyParams::default()
            };
            let l = fallback_sky_segment(&img, None, &params);
            for x in 0..16 {
                let rows = (0..32).filter(|&y| l.id(x, y) == FALLBACK_SKY_ID).count();
                assert_eq!(rows, want, "max_step {max_step}");
                assert!((0..want).all(|y| l.id(x, y) == FALLBACK_SKY_ID));
            }
        }
    }

    #[test]
    fn fallback_skips_uncovered_rows() {
        // black, uncovered cap over a blue sky
        let img = rgb_image(40, 20, |_, y| match y {
            0..3 => [0.0; 3],
            3..8 => [0.3, 0.5, 0.9],
            _ => [0.2, 0.6, 0.2],
        });
        let cover = BitMask::from_fn(40, 20, |_, y| y >= 3);
        let l = fallback_sky_segment(&img, None, &FallbackSkyParams::default());
        assert!(!category_mask(&l, FALLBACK_SKY_ID, None).unwrap().any());
        let l = fallback_sky_segment(&img, Some(&cover), &FallbackSkyParams::default());
        let sky = category_mask(&l, FALLBACK_SKY_ID, None).unwrap();
        assert_eq!(sky, BitMask::from_fn(40, 20, |_, y| (3..8).contains(&y)));
    }

    #[test]
    fn fallback_night_sky_is_empty() {
        let img = rgb_image(16, 8, |_, y| if y < 4 { [0.02, 0.02, 0.03] } else { [0.3, 0.3, 0.2] });
        let l = fallback_sky_segment(&img, None, &FallbackSkyParams::default());
        assert!(!category_mask(&l, FALLBACK_SKY_ID, None).unwrap().any());
    }

    #[test]
    fn resize_keeps_palette() {
        let l = rect_labels(4, 2, |x, _| (x / 2) as u8, &PAL6);
        let r = l.resize_nearest(8, 4);
        assert_eq!(r.id(3, 0), 0);
        assert_eq!(r.id(4, 3), 1);
        assert_eq!(r.palette(), l.palette());
    }
}
