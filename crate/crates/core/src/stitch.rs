//! Panorama from look-around frames under a pure-rotation camera model.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::correspond::CorrespondenceProvider;
use crate::error::{Error, Result};
use crate::linalg::{dot, symmetric_eigen4, Mat3, Vec3};
use crate::projection::{dir_from_equirect, PerspectiveView};
use crate::raster::{BitMask, EquirectImage, RasterImage, MAX_CHANNELS};
use crate::scalar::Real;

/// Ordered frames sharing one set of intrinsics.
#[derive(Debug, Clone)]
pub struct FrameSet<T> {
    frames: Vec<RasterImage<T>>,
    h_fov: T,
}

impl<T: Real> FrameSet<T> {
    pub fn new(frames: Vec<RasterImage<T>>, h_fov: T) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::invalid("frame set is empty"));
        };
        let dims = first.dims();
        for f in &frames[1..] {
            f.check_same_dims(dims)?;
            if f.channels() != first.channels() {
                return Err(Error::invalid("frames differ in channel count"));
            }
        }
        // validates the field of view
        PerspectiveView::new(T::zero(), T::zero(), T::zero(), h_fov, dims.0, dims.1)?;
        Ok(Self { frames, h_fov })
    }

    /// Every PNG in `dir`, in file-name order.
    pub fn load_dir(dir: impl AsRef<Path>, h_fov: T) -> Result<Self> {
        let dir = dir.as_ref();
        let entries = std::fs::read_dir(dir).map_err(|source| Error::Unreadable {
            path: dir.to_path_buf(),
            source,
        })?;
        let mut paths: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        paths.sort();
        let frames = paths.iter().map(crate::io::read_image).collect::<Result<Vec<_>>>()?;
        Self::new(frames, h_fov)
    }

    pub fn frames(&self) -> &[RasterImage<T>] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn h_fov(&self) -> T {
        self.h_fov
    }

    /// Keeps every `k`-th frame, starting with the first.
    pub fn every(&self, k: usize) -> Self {
        Self {
            frames: self.frames.iter().step_by(k.max(1)).cloned().collect(),
            h_fov: self.h_fov,
        }
    }

    fn view(&self, rotation: Mat3<T>) -> PerspectiveView<T> {
        let (w, h) = self.frames[0].dims();
        PerspectiveView::with_rotation(rotation, self.h_fov, w, h).expect("validated in new")
    }
}

/// World-from-camera rotation of every frame; frame 0 is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationChain<T> {
    pub rotations: Vec<Mat3<T>>,
    /// Inlier count of each consecutive pair.
    pub inliers: Vec<usize>,
}

impl<T: Real> RotationChain<T> {
    pub fn identity(n: usize) -> Self {
        Self {
            rotations: vec![Mat3::identity(); n],
            inliers: vec![0; n.saturating_sub(1)],
        }
    }

    /// `(yaw, pitch, roll)` of each frame.
    pub fn euler(&self) -> Vec<(T, T, T)> {
        self.rotations.iter().map(crate::projection::euler_from_rotation).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StitchParams {
    pub iters: usize,
    /// Inlier threshold in frame pixels.
    pub inlier_px: f64,
    pub min_inliers: usize,
    pub seed: u64,
    /// Linear blend weight ramp at frame edges; last-write when `false`.
    pub feather: bool,
}

impl Default for StitchParams {
    fn default() -> Self {
        Self {
            iters: 500,
            inlier_px: 1.0,
            min_inliers: 8,
            seed: 0x0057_17c4,
            feather: false,
        }
    }
}

/// Width of the blend ramp at frame edges, in frame pixels.
pub const FEATHER_PX: f64 = 32.0;

/// Least-squares rotation `R` with `a ~ R b` (Horn's quaternion method).
fn horn<T: Real>(pairs: &[(Vec3<T>, Vec3<T>)]) -> Mat3<T> {
    let mut s = [[T::zero(); 3]; 3];
    for (a, b) in pairs {
        for j in 0..3 {
            for k in 0..3 {
                s[j][k] += b[j] * a[k];
            }
        }
    }
    let [[xx, xy, xz], [yx, yy, yz], [zx, zy, zz]] = s;
    let n = [
        [xx + yy + zz, yz - zy, zx - xz, xy - yx],
        [yz - zy, xx - yy - zz, xy + yx, zx + xz],
        [zx - xz, xy + yx, -xx + yy - zz, yz + zy],
        [xy - yx, zx + xz, yz + zy, -xx - yy + zz],
    ];
    let (vals, vecs) = symmetric_eigen4(n);
    let best = (0..4).fold(0, |b, i| if vals[i] > vals[b] { i } else { b });
    Mat3::from_quaternion([vecs[0][best], vecs[1][best], vecs[2][best], vecs[3][best]])
}

fn inlier_set<T: Real>(r: &Mat3<T>, rays: &[(Vec3<T>, Vec3<T>)], cos_tol: T) -> Vec<bool> {
    rays.iter().map(|(a, b)| dot(*a, r.apply(*b)) >= cos_tol).collect()
}

/// Relative rotation mapping frame `b` camera rays into frame `a`.
fn relative_rotation<T: Real>(rays: &[(Vec3<T>, Vec3<T>)], focal: T, p: &StitchParams, rng: &mut ChaCha8Rng) -> (Mat3<T>, usize) {
    let cos_tol = (T::lit(p.inlier_px) / focal).cos();
    let n = rays.len();
    let mut best: (usize, Mat3<T>) = (0, Mat3::identity());
    if n >= 2 {
        for _ in 0..p.iters {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            // near-parallel rays pin down no rotation
            if i == j || dot(rays[i].0, rays[j].0) > T::lit(0.9999) {
                continue;
            }
            let r = horn(&[rays[i], rays[j]]);
            let count = inlier_set(&r, rays, cos_tol).iter().filter(|&&v| v).count();
            if count > best.0 {
                best = (count, r);
            }
        }
    }
    let mut r = best.1;
    let mut inl = inlier_set(&r, rays, cos_tol);
    for _ in 0..10 {
        let sel: Vec<_> = rays.iter().zip(&inl).filter(|(_, &k)| k).map(|(p, _)| *p).collect();
        if sel.len() < 2 {
            break;
        }
        r = horn(&sel);
        let next = inlier_set(&r, rays, cos_tol);
        if next == inl {
            break;
        }
        inl = next;
    }
    (r, inl.iter().filter(|&&v| v).count())
}

/// Chains pairwise pure-rotation fits over consecutive frames.
pub fn estimate_rotations<T: Real, M: CorrespondenceProvider<T> + ?Sized>(
    fs: &FrameSet<T>,
    matcher: &M,
    params: &StitchParams,
) -> Result<RotationChain<T>> {
    if fs.len() < 2 {
        return Err(Error::invalid("stitching needs at least two frames"));
    }
    let cam = fs.view(Mat3::identity());
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut chain = RotationChain {
        rotations: vec![Mat3::identity()],
        inliers: Vec::new(),
    };
    for k in 0..fs.len() - 1 {
        let matches = matcher.correspond(&fs.frames[k], None, &fs.frames[k + 1], None)?;
        let rays: Vec<_> = matches
            .iter()
            .map(|m| (cam.camera_ray(m.p.0, m.p.1), cam.camera_ray(m.q.0, m.q.1)))
            .collect();
        let (rel, inliers) = relative_rotation(&rays, cam.focal(), params, &mut rng);
        log::debug!("frames {k}-{}: {} matches, {inliers} inliers", k + 1, matches.len());
        if inliers < params.min_inliers {
            return Err(Error::StitchBreak {
                frame: k,
                next: k + 1,
                inliers,
                required: params.min_inliers,
            });
        }
        let prev = chain.rotations[k];
        chain.rotations.push(prev.mul(&rel));
        chain.inliers.push(inliers);
    }
    Ok(chain)
}

/// Step that makes consecutive kept frames about `target_deg` apart,
/// judged from the rotation between the first two frames.
pub fn auto_frame_step<T: Real, M: CorrespondenceProvider<T> + ?Sized>(
    fs: &FrameSet<T>,
    matcher: &M,
    params: &StitchParams,
    target_deg: f64,
) -> usize {
    if fs.len() < 3 {
        return 1;
    }
    let pair = FrameSet {
        frames: fs.frames[..2].to_vec(),
        h_fov: fs.h_fov,
    };
    match estimate_rotations(&pair, matcher, params) {
        Ok(chain) => {
            let step = chain.rotations[1].rotation_angle().as_f64().to_degrees();
            if step <= 1e-3 {
                return 1;
            }
            ((target_deg / step).round() as usize).clamp(1, fs.len() - 1)
        }
        Err(e) => {
            log::warn!("cannot judge frame spacing ({e}); keeping every frame");
            1
        }
    }
}

/// Maps every frame onto an equirect canvas of height `out_height`.
///
/// Without feathering each pixel takes the last frame covering it; with
/// feathering covering frames blend with weights rising linearly over
/// [`FEATHER_PX`] from each frame edge. Returns the panorama and coverage.
pub fn composite_panorama<T: Real>(
    fs: &FrameSet<T>,
    chain: &RotationChain<T>,
    out_height: usize,
    feather: bool,
) -> Result<(EquirectImage<T>, BitMask)> {
    if chain.rotations.len() != fs.len() {
        return Err(Error::invalid(format!(
            "rotation chain has {} entries for {} frames",
            chain.rotations.len(),
            fs.len()
        )));
    }
    if out_height == 0 {
        return Err(Error::invalid("output height must be positive"));
    }
    let (w, h) = (2 * out_height, out_height);
    let views: Vec<_> = chain.rotations.iter().map(|r| fs.view(*r)).collect();
    let c = fs.frames[0].channels();
    let (fw, fh) = fs.frames[0].dims();
    let mut img = RasterImage::new(w, h, c)?;
    let mut cover = BitMask::new(w, h);
    let mut px = [T::zero(); MAX_CHANNELS];
    let mut acc = [T::zero(); MAX_CHANNELS];
    let ramp = T::lit(FEATHER_PX);
    for v in 0..h {
        for u in 0..w {
            let d = dir_from_equirect(T::from_usize_lossy(u), T::from_usize_lossy(v), w, h);
            if !feather {
                let hit = views.iter().enumerate().rev().find_map(|(k, view)| view.project_inside(d).map(|xy| (k, xy)));
                if let Some((k, (x, y))) = hit {
                    fs.frames[k].sample_into(x, y, false, &mut px[..c]);
                    img.pixel_mut(u, v).copy_from_slice(&px[..c]);
                    cover.set(u, v, true);
                }
                continue;
            }
            acc[..c].iter_mut().for_each(|a| *a = T::zero());
            let mut wsum = T::zero();
            for (k, view) in views.iter().enumerate() {
                let Some((x, y)) = view.project_inside(d) else {
                    continue;
                };
                let half = T::lit(0.5);
                let edge = (x + half)
                    .min(T::from_usize_lossy(fw) - half - x)
                    .min(y + half)
                    .min(T::from_usize_lossy(fh) - half - y);
                let wt = (edge / ramp).min(T::one()).max(T::lit(1e-6));
                fs.frames[k].sample_into(x, y, false, &mut px[..c]);
                for i in 0..c {
                    acc[i] += wt * px[i];
                }
                wsum += wt;
            }
            if wsum > T::zero() {
                for (o, a) in img.pixel_mut(u, v).iter_mut().zip(&acc[..c]) {
                    *o = *a / wsum;
                }
                cover.set(u, v, true);
            }
        }
    }
    Ok((EquirectImage::new(img)?, cover))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correspond::{Correspondence, FeatureMatcher, FixedMatches};
    use crate::projection::{extract_perspective, insert_perspective};
    use rand::SeedableRng;

    fn deg(v: f64) -> f64 {
        v.to_radians()
    }

    /// Smooth random texture with wrap-around longitude.
    fn scene(h: usize, seed: u64) -> EquirectImage<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = RasterImage::from_fn(2 * h, h, 3, |_, _, p: &mut [f64]| {
            p.iter_mut().for_each(|v| *v = rng.random())
        })
        .unwrap();
        let px = h as f64 / 360.0;
        let fine = noise.gaussian_blur(1.2 * px, true);
        let coarse = noise.gaussian_blur(6.0 * px, true);
        let img = RasterImage::from_fn(2 * h, h, 3, |x, y, p| {
            for c in 0..3 {
                let v = 0.5 + 1.6 * px * (fine.get(x, y, c) - 0.5) + 4.0 * px * (coarse.get(x, y, c) - 0.5);
                p[c] = v.clamp(0.0, 1.0);
            }
        })
        .unwrap();
        EquirectImage::new(img).unwrap()
    }

    fn frames_at(src: &EquirectImage<f64>, yaws_deg: &[f64], hfov_deg: f64, w: usize, h: usize) -> FrameSet<f64> {
        let frames = yaws_deg
            .iter()
            .map(|&y| extract_perspective(src, &PerspectiveView::new(deg(y), 0.0, 0.0, deg(hfov_deg), w, h).unwrap()))
            .collect();
        FrameSet::new(frames, deg(hfov_deg)).unwrap()
    }

    #[test]
    fn horn_recovers_known_rotation() {
        let r = Mat3::rot_z(0.3).mul(&Mat3::rot_x(-0.2)).mul(&Mat3::rot_y(0.1));
        let bs: Vec<Vec3<f64>> = vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.3, 0.5, 0.8], [-0.2, 0.9, 0.1]];
        let pairs: Vec<_> = bs.iter().map(|b| (r.apply(*b), *b)).collect();
        let got = horn(&pairs);
        assert!(got.mul(&r.transpose()).rotation_angle() < 1e-9);
    }

    #[test]
    fn duplicate_frames_give_identity() {
        let src = scene(360, 1);
        let fs = frames_at(&src, &[20.0, 20.0], 60.0, 240, 180);
        let chain = estimate_rotations(&fs, &FeatureMatcher::default(), &StitchParams::default()).unwrap();
        assert!(chain.rotations[1].rotation_angle().to_degrees() < 0.1);
    }

    #[test]
    fn recovers_fifteen_degree_yaw() {
        let src = scene(360, 2);
        let fs = frames_at(&src, &[0.0, 15.0], 60.0, 240, 180);
        let chain = estimate_rotations(&fs, &FeatureMatcher::default(), &StitchParams::default()).unwrap();
        let (yaw, pitch, roll) = chain.euler()[1];
        assert!((yaw.to_degrees() - 15.0).abs() < 0.2, "yaw {}", yaw.to_degrees());
        assert!(pitch.to_degrees().abs() < 0.2 && roll.to_degrees().abs() < 0.2);
    }

    #[test]
    fn disjoint_frames_break_the_chain() {
        let src = scene(360, 3);
        let fs = frames_at(&src, &[0.0, 120.0], 60.0, 240, 180);
        let err = estimate_rotations(&fs, &FeatureMatcher::default(), &StitchParams::default()).unwrap_err();
        assert!(matches!(err, Error::StitchBreak { frame: 0, next: 1, .. }), "{err}");
    }

    #[test]
    fn too_few_fixed_matches_break_the_chain() {
        let m: Vec<Correspondence<f64>> = (0..5).map(|i| Correspondence::new((i as f64 * 10.0, 5.0), (i as f64 * 10.0, 5.0))).collect();
        let fs = FrameSet::new(vec![RasterImage::new(64, 48, 1).unwrap(); 3], deg(60.0)).unwrap();
        let err = estimate_rotations(&fs, &FixedMatches(m), &StitchParams::default()).unwrap_err();
        assert!(matches!(err, Error::StitchBreak { inliers: 5, required: 8, .. }));
    }

    #[test]
    fn single_frame_composite_equals_insert() {
        let frame = RasterImage::from_fn(80, 60, 3, |x, y, p: &mut [f64]| {
            p.copy_from_slice(&[x as f64 / 80.0, y as f64 / 60.0, 0.5])
        })
        .unwrap();
        let fs = FrameSet::new(vec![frame.clone()], deg(70.0)).unwrap();
        let (pano, cover) = composite_panorama(&fs, &RotationChain::identity(1), 100, false).unwrap();
        let blank = EquirectImage::new(RasterImage::new(200, 100, 3).unwrap()).unwrap();
        let view = PerspectiveView::new(0.0, 0.0, 0.0, deg(70.0), 80, 60).unwrap();
        let (ins, written) = insert_perspective(&blank, &frame, &view, &BitMask::full(80, 60)).unwrap();
        assert_eq!(cover, written);
        assert_eq!(pano, ins);
    }

    #[test]
    fn later_frame_wins_in_overlap() {
        let a = RasterImage::filled(80, 60, &[0.2]).unwrap();
        let b = RasterImage::filled(80, 60, &[0.7]).unwrap();
        let fs = FrameSet::new(vec![a, b], deg(60.0)).unwrap();
        let chain = RotationChain {
            rotations: vec![Mat3::identity(), Mat3::rot_z(-deg(30.0))],
            inliers: vec![0],
        };
        let (pano, cover) = composite_panorama(&fs, &chain, 90, false).unwrap();
        // longitude 15 degrees sits in both frustums
        let (u, v) = crate::projection::equirect_from_lon_lat(deg(15.0), 0.0, 180, 90);
        let (u, v) = (u.round() as usize, v.round() as usize);
        assert!(cover.get(u, v));
        assert_eq!(pano.pixel(u, v)[0], 0.7);
        // nothing behind the camera
        assert!(!cover.get(0, 45));
        let (blend, _) = composite_panorama(&fs, &chain, 90, true).unwrap();
        let mid = blend.pixel(u, v)[0];
        assert!(mid > 0.2 && mid < 0.7);
    }

    #[test]
    fn full_sweep_reconstructs_equator() {
        let src = scene(720, 4);
        let yaws: Vec<f64> = (0..12).map(|k| k as f64 * 30.0).collect();
        let fs = frames_at(&src, &yaws, 60.0, 240, 180);
        let chain = estimate_rotations(&fs, &FeatureMatcher::default(), &StitchParams::default()).unwrap();
        let (pano, cover) = composite_panorama(&fs, &chain, 720, false).unwrap();
        // +-15 degrees latitude is inside every frame's vertical reach
        for v in 300..420 {
            for u in 0..1440 {
                assert!(cover.get(u, v), "uncovered ({u}, {v})");
            }
        }
        let err: f64 = cover
            .iter_set()
            .flat_map(|i| pano.pixel_at(i).iter().zip(src.pixel_at(i)).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>())
            .sum::<f64>()
            / (3 * cover.count()) as f64;
        assert!(err < 3.0 / 255.0, "mean abs error {}", err * 255.0);
    }

    #[test]
    fn auto_step_targets_ten_degrees() {
        let src = scene(360, 5);
        let yaws: Vec<f64> = (0..8).map(|k| k as f64 * 2.5).collect();
        let fs = frames_at(&src, &yaws, 60.0, 240, 180);
        assert_eq!(auto_frame_step(&fs, &FeatureMatcher::default(), &StitchParams::default(), 10.0), 4);
        assert_eq!(fs.every(4).len(), 2);
    }
}
