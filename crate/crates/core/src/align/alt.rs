use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{failed, RansacParams};
use crate::correspond::Correspondence;
use crate::error::{Error, Result};
use crate::linalg::{solve_dense, Mat3};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AltKind {
    Affine,
    Homography,
}

impl AltKind {
    fn min_points(self) -> usize {
        match self {
            AltKind::Affine => 3,
            AltKind::Homography => 4,
        }
    }
}

/// Affine or projective planar transform, without horizontal wrap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AltTransform<T> {
    pub kind: AltKind,
    /// Row-major; `m[2][2] == 1`, and the bottom row is `[0, 0, 1]` for affine.
    pub m: Mat3<T>,
}

impl<T: Real> AltTransform<T> {
    pub fn identity(kind: AltKind) -> Self {
        Self {
            kind,
            m: Mat3::identity(),
        }
    }

    pub fn apply(&self, x: T, y: T) -> (T, T) {
        let [u, v, w] = self.m.apply([x, y, T::one()]);
        (u / w, v / w)
    }
}

/// Smallest over largest eigenvalue of the 2x2 scatter matrix; zero for
/// collinear or coincident point sets.
fn spread_ratio<T: Real>(pts: impl Iterator<Item = (T, T)> + Clone) -> T {
    let n = T::from_usize_lossy(pts.clone().count());
    let (mx, my) = pts.clone().fold((T::zero(), T::zero()), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (mx / n, my / n);
    let (mut a, mut b, mut c) = (T::zero(), T::zero(), T::zero());
    for (x, y) in pts {
        let (dx, dy) = (x - mx, y - my);
        a += dx * dx;
        b += dx * dy;
        c += dy * dy;
    }
    let tr = a + c;
    if tr <= T::zero() {
        return T::zero();
    }
    let disc = ((a - c) * (a - c) + T::lit(4.0) * b * b).sqrt();
    let lmax = (tr + disc) * T::lit(0.5);
    let lmin = (a * c - b * b) / lmax;
    (lmin / lmax).max(T::zero())
}

fn collinear<T: Real>(pts: impl Iterator<Item = (T, T)> + Clone) -> bool {
    spread_ratio(pts) <= T::lit(1e-10)
}

/// Similarity that moves the centroid to the origin and the mean distance to sqrt(2).
fn normalizer<T: Real>(pts: &[(T, T)]) -> Mat3<T> {
    let n = T::from_usize_lossy(pts.len());
    let (mx, my) = pts.iter().fold((T::zero(), T::zero()), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (mx / n, my / n);
    let d = pts.iter().map(|p| (p.0 - mx).hypot(p.1 - my)).sum::<T>() / n;
    let s = if d > T::zero() { T::SQRT_2() / d } else { T::one() };
    let z = T::zero();
    Mat3([[s, z, -s * mx], [z, s, -s * my], [z, z, T::one()]])
}

fn least_squares<T: Real>(kind: AltKind, m: &[&Correspondence<T>]) -> Option<Mat3<T>> {
    let ps: Vec<(T, T)> = m.iter().map(|c| c.p).collect();
    let qs: Vec<(T, T)> = m.iter().map(|c| c.q).collect();
    let (na, nb) = (normalizer(&ps), normalizer(&qs));
    let norm = |t: &Mat3<T>, p: (T, T)| {
        let v = t.apply([p.0, p.1, T::one()]);
        (v[0], v[1])
    };
    let pairs: Vec<((T, T), (T, T))> = ps.iter().zip(&qs).map(|(&p, &q)| (norm(&na, p), norm(&nb, q))).collect();
    let tol = T::lit(1e-12);
    let z = T::zero();
    let hn = match kind {
        AltKind::Affine => {
            // the two output rows decouple into 3x3 systems
            let mut ata = vec![z; 9];
            let (mut bx, mut by) = (vec![z; 3], vec![z; 3]);
            for &((x, y), (u, v)) in &pairs {
                let r = [x, y, T::one()];
                for i in 0..3 {
                    for j in 0..3 {
                        ata[i * 3 + j] += r[i] * r[j];
                    }
                    bx[i] += r[i] * u;
                    by[i] += r[i] * v;
                }
            }
            let a = solve_dense(ata.clone(), bx, 3, tol)?;
            let b = solve_dense(ata, by, 3, tol)?;
            Mat3([[a[0], a[1], a[2]], [b[0], b[1], b[2]], [z, z, T::one()]])
        }
        AltKind::Homography => {
            let mut ata = vec![z; 64];
            let mut atb = vec![z; 8];
            for &((x, y), (u, v)) in &pairs {
                let o = T::one();
                let rows = [
                    ([x, y, o, z, z, z, -x * u, -y * u], u),
                    ([z, z, z, x, y, o, -x * v, -y * v], v),
                ];
                for (r, rhs) in rows {
                    for i in 0..8 {
                        for j in 0..8 {
                            ata[i * 8 + j] += r[i] * r[j];
                        }
                        atb[i] += r[i] * rhs;
                    }
                }
            }
            let h = solve_dense(ata, atb, 8, tol)?;
            Mat3([[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], T::one()]])
        }
    };
    let full = nb.inverse()?.mul(&hn).mul(&na);
    let s = full.0[2][2];
    if s.abs() <= T::epsilon() {
        return None;
    }
    let mut out = full;
    for row in out.0.iter_mut() {
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    if kind == AltKind::Affine {
        out.0[2] = [z, z, T::one()];
    }
    out.inverse()?;
    Some(out)
}

fn residual2<T: Real>(m: &Mat3<T>, c: &Correspondence<T>) -> T {
    let [u, v, w] = m.apply([c.p.0, c.p.1, T::one()]);
    if w.abs() <= T::epsilon() {
        return T::infinity();
    }
    let (dx, dy) = (u / w - c.q.0, v / w - c.q.1);
    dx * dx + dy * dy
}

fn sample_degenerate<T: Real>(s: &[&Correspondence<T>]) -> bool {
    // every triple must span the plane on both sides
    let n = s.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let t = [s[i], s[j], s[k]];
                if collinear(t.iter().map(|c| c.p)) || collinear(t.iter().map(|c| c.q)) {
                    return true;
                }
            }
        }
    }
    false
}

/// RANSAC plus least-squares fit of an affine map or a homography.
///
/// Residuals are plain Euclidean distances; the horizontal wrap is not
/// modelled. Collinear input is rejected before anything else.
pub fn fit_alt<T: Real>(matches: &[Correspondence<T>], kind: AltKind, params: &RansacParams) -> Result<AltTransform<T>> {
    if matches.len() >= 2 && (collinear(matches.iter().map(|c| c.p)) || collinear(matches.iter().map(|c| c.q))) {
        return Err(Error::DegenerateConfiguration("input points are collinear".into()));
    }
    let need = kind.min_points();
    if matches.len() < need {
        return Err(failed(format!("{} matches, {kind:?} needs at least {need}", matches.len())));
    }
    let thr2 = T::lit(params.inlier_px * params.inlier_px);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(Mat3<T>, usize, T)> = None;
    let evaluate = |m: &Mat3<T>| {
        matches.iter().fold((0usize, T::zero()), |(n, cost), c| {
            let r = residual2(m, c);
            if r <= thr2 {
                (n + 1, cost + r)
            } else {
                (n, cost)
            }
        })
    };
    for _ in 0..params.iters {
        let idx = sample(&mut rng, matches.len(), need);
        let s: Vec<&Correspondence<T>> = idx.iter().map(|i| &matches[i]).collect();
        if sample_degenerate(&s) {
            continue;
        }
        let Some(m) = least_squares(kind, &s) else { continue };
        let (n, cost) = evaluate(&m);
        if best.as_ref().is_none_or(|b| n > b.1 || (n == b.1 && cost < b.2)) {
            best = Some((m, n, cost));
        }
    }
    let (mut m, mut count, _) = best.ok_or_else(|| failed(format!("no non-degenerate {kind:?} sample")))?;
    if count < need {
        return Err(failed(format!("{count} inliers, {kind:?} needs at least {need}")));
    }
    for _ in 0..10 {
        let inl: Vec<&Correspondence<T>> = matches.iter().filter(|c| residual2(&m, c) <= thr2).collect();
        let Some(next) = least_squares(kind, &inl) else { break };
        let (n, _) = evaluate(&next);
        if n < count {
            break;
        }
        let same = n == count;
        m = next;
        count = n;
        if same {
            break;
        }
    }
    Ok(AltTransform { kind, m })
}
