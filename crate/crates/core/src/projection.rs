//! Equirectangular coordinates, view directions and pinhole views.
//!
//! World frame: `+Y` is the forward direction at longitude 0, `+X` points
//! right (increasing longitude) and `+Z` points up (the zenith).

use crate::error::{Error, Result};
use crate::linalg::{normalize, Mat3, Vec3};
use crate::raster::{BitMask, EquirectImage, RasterImage};
use crate::scalar::Real;

/// Longitude/latitude of a continuous equirect coordinate.
#[inline]
pub fn lon_lat<T: Real>(u: T, v: T, w: usize, h: usize) -> (T, T) {
    let half = T::lit(0.5);
    let lon = T::TAU() * (u + half) / T::from_usize_lossy(w) - T::PI();
    let lat = T::FRAC_PI_2() - T::PI() * (v + half) / T::from_usize_lossy(h);
    (lon, lat)
}

/// Continuous equirect coordinate of a longitude/latitude; `u` lies in `[-0.5, w-0.5)`.
#[inline]
pub fn equirect_from_lon_lat<T: Real>(lon: T, lat: T, w: usize, h: usize) -> (T, T) {
    let half = T::lit(0.5);
    let u = (lon + T::PI()) * T::from_usize_lossy(w) / T::TAU() - half;
    let v = (T::FRAC_PI_2() - lat) * T::from_usize_lossy(h) / T::PI() - half;
    (u, v)
}

#[inline]
pub fn dir_from_lon_lat<T: Real>(lon: T, lat: T) -> Vec3<T> {
    let (sl, cl) = lon.sin_cos();
    let (sp, cp) = lat.sin_cos();
    [cp * sl, cp * cl, sp]
}

/// Unit view direction of equirect pixel coordinate `(u, v)`.
#[inline]
pub fn dir_from_equirect<T: Real>(u: T, v: T, w: usize, h: usize) -> Vec3<T> {
    let (lon, lat) = lon_lat(u, v, w, h);
    dir_from_lon_lat(lon, lat)
}

/// Equirect coordinate `(u, v)` of a direction (need not be normalized).
#[inline]
pub fn equirect_from_dir<T: Real>(d: Vec3<T>, w: usize, h: usize) -> (T, T) {
    let lon = d[0].atan2(d[1]);
    let lat = d[2].atan2(d[0].hypot(d[1]));
    equirect_from_lon_lat(lon, lat, w, h)
}

/// A pinhole camera looking out from the sphere center.
///
/// The orientation is `Rz(-yaw) * Rx(pitch) * Ry(roll)`: yaw turns right
/// about the vertical axis, pitch raises the view, roll spins about the
/// view axis. Positive yaw points the view at longitude `yaw`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerspectiveView<T> {
    pub yaw: T,
    pub pitch: T,
    pub roll: T,
    pub h_fov: T,
    pub width: usize,
    pub height: usize,
    rotation: Mat3<T>,
}

impl<T: Real> PerspectiveView<T> {
    pub fn new(yaw: T, pitch: T, roll: T, h_fov: T, width: usize, height: usize) -> Result<Self> {
        let rotation = Mat3::rot_z(-yaw).mul(&Mat3::rot_x(pitch)).mul(&Mat3::rot_y(roll));
        Self::validate(h_fov, width, height)?;
        Ok(Self {
            yaw,
            pitch,
            roll,
            h_fov,
            width,
            height,
            rotation,
        })
    }

    /// View with an explicit world-from-camera rotation; the Euler fields
    /// are recovered for reporting only.
    pub fn with_rotation(rotation: Mat3<T>, h_fov: T, width: usize, height: usize) -> Result<Self> {
        Self::validate(h_fov, width, height)?;
        let (yaw, pitch, roll) = euler_from_rotation(&rotation);
        Ok(Self {
            yaw,
            pitch,
            roll,
            h_fov,
            width,
            height,
            rotation,
        })
    }

    fn validate(h_fov: T, width: usize, height: usize) -> Result<()> {
        if !(h_fov > T::zero() && h_fov < T::PI()) {
            return Err(Error::invalid(format!("h_fov must lie in (0, pi), got {h_fov}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::invalid("perspective view must be non-empty"));
        }
        Ok(())
    }

    /// Straight-up square view used for the polar sky region.
    pub fn zenith(h_fov: T, side: usize) -> Result<Self> {
        Self::new(T::zero(), T::FRAC_PI_2(), T::zero(), h_fov, side, side)
    }

    /// Focal length in pixels.
    #[inline]
    pub fn focal(&self) -> T {
        T::from_usize_lossy(self.width) * T::lit(0.5) / (self.h_fov * T::lit(0.5)).tan()
    }

    #[inline]
    pub fn rotation(&self) -> &Mat3<T> {
        &self.rotation
    }

    #[inline]
    fn center(&self) -> (T, T) {
        let half = T::lit(0.5);
        (
            T::from_usize_lossy(self.width - 1) * half,
            T::from_usize_lossy(self.height - 1) * half,
        )
    }

    /// Unit ray in camera coordinates through pixel `(x, y)`.
    #[inline]
    pub fn camera_ray(&self, x: T, y: T) -> Vec3<T> {
        let (cx, cy) = self.center();
        normalize([x - cx, self.focal(), cy - y])
    }

    /// Unit world direction through pixel `(x, y)`.
    #[inline]
    pub fn ray(&self, x: T, y: T) -> Vec3<T> {
        self.rotation.apply(self.camera_ray(x, y))
    }

    /// Pixel coordinate of a camera-frame direction, `None` behind the camera.
    #[inline]
    pub fn project_camera(&self, c: Vec3<T>) -> Option<(T, T)> {
        if c[1] <= T::zero() {
            return None;
        }
        let (cx, cy) = self.center();
        let f = self.focal();
        Some((cx + f * c[0] / c[1], cy - f * c[2] / c[1]))
    }

    /// Pixel coordinate of a world direction, `None` behind the camera.
    #[inline]
    pub fn project(&self, d: Vec3<T>) -> Option<(T, T)> {
        self.project_camera(self.rotation.transpose().apply(d))
    }

    /// Pixel coordinate if the direction falls inside the image rectangle
    /// `[-0.5, width-0.5] x [-0.5, height-0.5]`.
    pub fn project_inside(&self, d: Vec3<T>) -> Option<(T, T)> {
        let (x, y) = self.project(d)?;
        let half = T::lit(0.5);
        let inside = x >= -half
            && x <= T::from_usize_lossy(self.width) - half
            && y >= -half
            && y <= T::from_usize_lossy(self.height) - half;
        inside.then_some((x, y))
    }
}

/// Euler angles of `Rz(-yaw) * Rx(pitch) * Ry(roll)`.
pub fn euler_from_rotation<T: Real>(r: &Mat3<T>) -> (T, T, T) {
    let m = &r.0;
    // Column 1 is the forward axis: (sin yaw cos pitch, cos yaw cos pitch, sin pitch).
    let pitch = m[2][1].max(-T::one()).min(T::one()).asin();
    let yaw = m[0][1].atan2(m[1][1]);
    // Row 2 of Rx(pitch)Ry(roll) gives (-cos p sin r, sin p, cos p cos r).
    let roll = (-m[2][0]).atan2(m[2][2]);
    (yaw, pitch, roll)
}

/// Bilinear neighbors `(index, weight)` of continuous coordinate `(x, y)`,
/// clamped to the raster; zero-weight taps are dropped.
fn bilinear_taps<T: Real>(x: T, y: T, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let xc = x.max(T::zero()).min(T::from_usize_lossy(w - 1));
    let yc = y.max(T::zero()).min(T::from_usize_lossy(h - 1));
    let x0 = xc.floor().to_usize().unwrap_or(0).min(w - 1);
    let y0 = yc.floor().to_usize().unwrap_or(0).min(h - 1);
    let fx = xc - T::from_usize_lossy(x0);
    let fy = yc - T::from_usize_lossy(y0);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let z = T::zero();
    let taps = [
        (y0 * w + x0, true),
        (y0 * w + x1, fx > z),
        (y1 * w + x0, fy > z),
        (y1 * w + x1, fx > z && fy > z),
    ];
    taps.into_iter().filter(|t| t.1).map(|t| t.0)
}

/// Renders a perspective view of an equirect image (bilinear, wrapping longitude).
pub fn extract_perspective<T: Real>(src: &EquirectImage<T>, view: &PerspectiveView<T>) -> RasterImage<T> {
    let (w, h) = src.dims();
    RasterImage::from_fn(view.width, view.height, src.channels(), |x, y, px| {
        let d = view.ray(T::from_usize_lossy(x), T::from_usize_lossy(y));
        let (u, v) = equirect_from_dir(d, w, h);
        src.sample_into(u, v, true, px);
    })
    .expect("view dimensions are non-zero")
}

/// How a perspective pixel inherits an equirect mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskRule {
    /// Set when every bilinear tap is set.
    All,
    /// Set when any bilinear tap is set.
    Any,
}

/// Resamples an equirect mask into a perspective view.
pub fn extract_mask<T: Real>(mask: &BitMask, view: &PerspectiveView<T>, rule: MaskRule) -> BitMask {
    let (w, h) = mask.dims();
    BitMask::from_fn(view.width, view.height, |x, y| {
        let d = view.ray(T::from_usize_lossy(x), T::from_usize_lossy(y));
        let (u, v) = equirect_from_dir(d, w, h);
        let u = u.rem_euclid_real(T::from_usize_lossy(w));
        let mut taps = wrapped_taps(u, v, w, h);
        match rule {
            MaskRule::All => taps.all(|i| mask.bits()[i]),
            MaskRule::Any => taps.any(|i| mask.bits()[i]),
        }
    })
}

fn wrapped_taps<T: Real>(u: T, v: T, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let vc = v.max(T::zero()).min(T::from_usize_lossy(h - 1));
    let x0f = u.floor();
    let fx = u - x0f;
    let x0 = x0f.to_usize().unwrap_or(0) % w;
    let x1 = (x0 + 1) % w;
    let y0 = vc.floor().to_usize().unwrap_or(0).min(h - 1);
    let fy = vc - T::from_usize_lossy(y0);
    let y1 = (y0 + 1).min(h - 1);
    let z = T::zero();
    [
        (y0 * w + x0, true),
        (y0 * w + x1, fx > z),
        (y1 * w + x0, fy > z),
        (y1 * w + x1, fx > z && fy > z),
    ]
    .into_iter()
    .filter(|t| t.1)
    .map(|t| t.0)
}

/// Writes a perspective patch back into an equirect image.
///
/// Every destination pixel whose direction falls inside the view and whose
/// bilinear patch taps are all `valid` takes the bilinear patch sample;
/// other pixels are unchanged. Returns the new image and the written mask.
pub fn insert_perspective<T: Real>(
    dst: &EquirectImage<T>,
    patch: &RasterImage<T>,
    view: &PerspectiveView<T>,
    valid: &BitMask,
) -> Result<(EquirectImage<T>, BitMask)> {
    if patch.dims() != (view.width, view.height) {
        return Err(Error::DimensionMismatch {
            expected: (view.width, view.height),
            actual: patch.dims(),
        });
    }
    valid.check_dims(patch.dims())?;
    if patch.channels() != dst.channels() {
        return Err(Error::invalid("patch and destination channel counts differ"));
    }
    let (w, h) = dst.dims();
    let mut out = dst.clone();
    let mut written = BitMask::new(w, h);
    if !valid.any() {
        return Ok((out, written));
    }
    let rt = view.rotation().transpose();
    let ch = dst.channels();
    let mut px = [T::zero(); crate::raster::MAX_CHANNELS];
    for v in 0..h {
        for u in 0..w {
            let d = dir_from_equirect(T::from_usize_lossy(u), T::from_usize_lossy(v), w, h);
            let Some((x, y)) = view.project_camera(rt.apply(d)) else {
                continue;
            };
            let half = T::lit(0.5);
            if x < -half
                || y < -half
                || x > T::from_usize_lossy(view.width) - half
                || y > T::from_usize_lossy(view.height) - half
            {
                continue;
            }
            if !bilinear_taps(x, y, view.width, view.height).all(|i| valid.bits()[i]) {
                continue;
            }
            patch.sample_into(x, y, false, &mut px[..ch]);
            out.raster_mut().pixel_mut(u, v).copy_from_slice(&px[..ch]);
            written.set(u, v, true);
        }
    }
    Ok((out, written))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn smooth_equirect(w: usize, h: usize) -> EquirectImage<f64> {
        let img = RasterImage::from_fn(w, h, 3, |u, v, p| {
            let d = dir_from_equirect(u as f64, v as f64, w, h);
            p[0] = 0.5 + 0.3 * (1.3 * d[0] + 0.4 * d[2]).sin();
            p[1] = 0.5 + 0.25 * (2.0 * d[1] - d[2]).cos();
            p[2] = 0.4 + 0.2 * d[2] + 0.1 * (d[0] * d[1] * 3.0).sin();
        })
        .unwrap();
        EquirectImage::new(img).unwrap()
    }

    #[test]
    fn center_looks_forward_and_top_row_looks_up() {
        let (w, h) = (400, 200);
        let d = dir_from_equirect((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0, w, h);
        assert!(d[1] > 0.9999 && d[0].abs() < 1e-2 && d[2].abs() < 2e-2);
        let (lon, lat) = lon_lat((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0, w, h);
        assert!(lon.abs() < 2.0 * PI / w as f64 && lat.abs() < PI / h as f64);
        let (_, lat) = lon_lat(17.0, 0.0, w, h);
        assert!((lat - (PI / 2.0 - PI * 0.5 / h as f64)).abs() < 1e-12);
    }

    #[test]
    fn direction_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (w, h) = (1810, 906);
        for _ in 0..10_000 {
            let u: f64 = rng.random_range(0.0..w as f64 - 1.0);
            let v: f64 = rng.random_range(0.0..h as f64 - 1.0);
            let d = dir_from_equirect(u, v, w, h);
            assert!((crate::linalg::norm(d) - 1.0).abs() < 1e-9);
            let (u2, v2) = equirect_from_dir(d, w, h);
            assert!(crate::scalar::wrap_distance(u, u2, w as f64) < 1e-6);
            assert!((v - v2).abs() < 1e-6);
        }
    }

    #[test]
    fn yaw_points_at_longitude() {
        let view = PerspectiveView::new(0.7f64, 0.0, 0.0, 1.0, 101, 51).unwrap();
        let d = view.ray(50.0, 25.0);
        let (lon, lat) = (d[0].atan2(d[1]), d[2].asin());
        assert!((lon - 0.7).abs() < 1e-12 && lat.abs() < 1e-12);
        let up = PerspectiveView::zenith(2.0f64, 65).unwrap();
        assert!((up.ray(32.0, 32.0)[2] - 1.0).abs() < 1e-12);
        let (yaw, pitch, roll) = euler_from_rotation(&PerspectiveView::new(0.3f64, -0.2, 0.1, 1.0, 5, 5).unwrap().rotation);
        assert!((yaw - 0.3).abs() < 1e-12 && (pitch + 0.2).abs() < 1e-12 && (roll - 0.1).abs() < 1e-12);
    }

    #[test]
    fn view_validation() {
        assert!(PerspectiveView::new(0.0f64, 0.0, 0.0, PI, 10, 10).is_err());
        assert!(PerspectiveView::new(0.0f64, 0.0, 0.0, 0.0, 10, 10).is_err());
        assert!(PerspectiveView::new(0.0f64, 0.0, 0.0, 1.0, 0, 10).is_err());
    }

    #[test]
    fn constant_equirect_gives_constant_view() {
        let src = EquirectImage::new(RasterImage::filled(64, 32, &[0.25f64, 0.5, 0.75]).unwrap()).unwrap();
        let view = PerspectiveView::new(1.0, 0.4, 0.2, 1.5, 40, 30).unwrap();
        let out = extract_perspective(&src, &view);
        assert!(out.data().chunks(3).all(|p| p == [0.25, 0.5, 0.75]));
    }

    #[test]
    fn zenith_view_of_white_cap_is_a_disk() {
        let (w, h) = (800, 400);
        let cap_rows = h / 10;
        let src = EquirectImage::new(
            RasterImage::from_fn(w, h, 1, |_, v, p| p[0] = if v < cap_rows { 1.0 } else { 0.0 }).unwrap(),
        )
        .unwrap();
        let side = 201;
        let view = PerspectiveView::zenith(150f64.to_radians(), side).unwrap();
        let out = extract_perspective(&src, &view);
        // Row `cap_rows` starts at the cap boundary: pixel centers v < cap_rows - 0.5 are white,
        // i.e. zenith angle below pi * cap_rows / h.
        let theta = PI * cap_rows as f64 / h as f64;
        let radius = view.focal() * theta.tan();
        let c = (side as f64 - 1.0) / 2.0;
        let mut checked = 0;
        for y in 0..side {
            for x in 0..side {
                let r = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)).sqrt();
                let v = out.get(x, y, 0);
                if r < radius - 1.5 {
                    assert!(v > 0.999, "inside at r={r}: {v}");
                    checked += 1;
                } else if r > radius + 1.5 {
                    assert!(v < 1e-3, "outside at r={r}: {v}");
                }
            }
        }
        assert!(checked > 100);
    }

    fn psnr(a: &RasterImage<f64>, b: &RasterImage<f64>, mask: &BitMask) -> f64 {
        let mut se = 0.0;
        let mut n = 0usize;
        for i in mask.iter_set() {
            for (x, y) in a.pixel_at(i).iter().zip(b.pixel_at(i)) {
                se += (x - y).powi(2);
                n += 1;
            }
        }
        10.0 * (1.0 / (se / n as f64)).log10()
    }

    #[test]
    fn extract_insert_round_trip() {
        let src = smooth_equirect(512, 256);
        let view = PerspectiveView::new(0.5, 0.35, 0.1, 1.6, 300, 240).unwrap();
        let patch = extract_perspective(&src, &view);
        let blank = EquirectImage::new(RasterImage::new(512, 256, 3).unwrap()).unwrap();
        let (back, written) = insert_perspective(&blank, &patch, &view, &BitMask::full(300, 240)).unwrap();
        assert!(written.count() > 5000);
        let p = psnr(&back, &src, &written);
        assert!(p > 40.0, "psnr {p}");

        let (same, w2) = insert_perspective(&src, &patch, &view, &BitMask::full(300, 240)).unwrap();
        let mean: f64 = w2
            .iter_set()
            .flat_map(|i| same.pixel_at(i).iter().zip(src.pixel_at(i)).map(|(a, b)| (a - b).abs()))
            .sum::<f64>()
            / (3 * w2.count()) as f64;
        assert!(mean < 2.0 / 255.0, "mean {mean}");
    }

    #[test]
    fn empty_valid_mask_leaves_destination() {
        let src = smooth_equirect(128, 64);
        let view = PerspectiveView::new(0.0, 0.0, 0.0, 1.2, 50, 40).unwrap();
        let patch = RasterImage::new(50, 40, 3).unwrap();
        let (out, written) = insert_perspective(&src, &patch, &view, &BitMask::new(50, 40)).unwrap();
        assert_eq!(out, src);
        assert!(!written.any());
    }

    #[test]
    fn pixels_outside_the_frustum_are_untouched() {
        let (w, h) = (720, 360);
        let src = EquirectImage::new(RasterImage::filled(w, h, &[0.2f64]).unwrap()).unwrap();
        let fov = 60f64.to_radians();
        let view = PerspectiveView::new(0.0, 0.0, 0.0, fov, 120, 90).unwrap();
        let patch = RasterImage::filled(120, 90, &[0.9]).unwrap();
        let (out, _) = insert_perspective(&src, &patch, &view, &BitMask::full(120, 90)).unwrap();
        let row = h / 2;
        for u in 0..w {
            let (lon, _) = lon_lat(u as f64, row as f64, w, h);
            let v = out.get(u, row, 0);
            if lon.abs() > fov / 2.0 + 1e-3 {
                assert_eq!(v, 0.2, "lon {lon}");
            } else if lon.abs() < fov / 2.0 - 1e-2 {
                assert_eq!(v, 0.9, "lon {lon}");
            }
        }
    }

    #[test]
    fn yaw_matches_horizontal_shift() {
        let src = smooth_equirect(360, 180);
        let k = 45isize;
        let alpha = 2.0 * PI * k as f64 / 360.0;
        let shifted = EquirectImage::new(src.roll_x(k)).unwrap();
        let a = extract_perspective(&shifted, &PerspectiveView::new(alpha, 0.2, 0.0, 1.2, 80, 60).unwrap());
        let b = extract_perspective(&src, &PerspectiveView::new(0.0, 0.2, 0.0, 1.2, 80, 60).unwrap());
        let mean: f64 =
            a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data().len() as f64;
        assert!(mean < 2.0 / 255.0, "mean {mean}");
    }

    #[test]
    fn mask_rules() {
        let m = BitMask::from_fn(100, 50, |_, v| v < 10);
        let view = PerspectiveView::zenith(2.0f64, 41).unwrap();
        let all = extract_mask(&m, &view, MaskRule::All);
        let any = extract_mask(&m, &view, MaskRule::Any);
        assert!(all.count() <= any.count());
        assert!(all.get(20, 20));
        assert_eq!(all.minus(&any).count(), 0);
    }
}
