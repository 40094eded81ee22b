//! Discrete Poisson equation on masked equirect regions, solved by
//! Jacobi-preconditioned conjugate gradients.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::raster::{BitMask, RasterImage};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PoissonParams {
    /// Target relative residual `||b - Ax|| / ||b||`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PoissonParams {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoissonStats {
    pub components: usize,
    pub unknowns: usize,
    /// Most CG iterations spent on any component and channel.
    pub iterations: usize,
    /// Largest true relative residual over components and channels.
    pub residual: f64,
    /// Components left untouched because nothing constrained them.
    pub skipped: usize,
    /// Components that had to take their boundary from the free mask.
    pub used_free: usize,
}

/// Sparse symmetric system for one connected component.
struct System {
    cells: Vec<usize>,
    diag: Vec<f64>,
    /// Unknown-index neighbors, at most 4 per row.
    nbr: Vec<[u32; 4]>,
    n_nbr: Vec<u8>,
    /// `(row, pixel)` pairs of Dirichlet contributions.
    dirichlet: Vec<(u32, usize)>,
    /// `(row, pixel)` pairs that carry guidance `g_p - g_q`.
    links: Vec<(u32, usize)>,
}

impl System {
    fn mul(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = self.diag[i] * x[i];
            for &j in &self.nbr[i][..self.n_nbr[i] as usize] {
                acc -= x[j as usize];
            }
            *o = acc;
        }
    }
}

/// 4-neighbors with horizontal wrap; rows beyond the top and bottom do not exist.
fn neighbors(i: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (i % w, i / w);
    let left = (w > 1).then(|| y * w + (x + w - 1) % w);
    let right = (w > 2).then(|| y * w + (x + 1) % w);
    let up = (y > 0).then(|| i - w);
    let down = (y + 1 < h).then(|| i + w);
    [left, right, up, down].into_iter().flatten()
}

fn components(region: &BitMask) -> Vec<Vec<usize>> {
    let (w, h) = region.dims();
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    for start in region.iter_set() {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            comp.push(i);
            for j in neighbors(i, w, h) {
                if region.bits()[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

fn build(cells: Vec<usize>, index: &[u32], region: &BitMask, free: Option<&BitMask>) -> System {
    let (w, h) = region.dims();
    let n = cells.len();
    let mut sys = System {
        diag: vec![0.0; n],
        nbr: vec![[0; 4]; n],
        n_nbr: vec![0; n],
        dirichlet: Vec::new(),
        links: Vec::new(),
        cells,
    };
    for (row, &p) in sys.cells.iter().enumerate() {
        for q in neighbors(p, w, h) {
            if region.bits()[q] {
                let k = sys.n_nbr[row] as usize;
                sys.nbr[row][k] = index[q];
                sys.n_nbr[row] += 1;
            } else if free.is_some_and(|f| f.bits()[q]) {
                continue;
            } else {
                sys.dirichlet.push((row as u32, q));
            }
            sys.diag[row] += 1.0;
            sys.links.push((row as u32, q));
        }
    }
    sys
}

/// Jacobi-preconditioned CG from the initial guess in `x`.
/// Returns iterations used and the true relative residual.
fn pcg(sys: &System, b: &[f64], x: &mut [f64], params: &PoissonParams) -> (usize, f64) {
    let n = b.len();
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return (0, 0.0);
    }
    let target = params.tol * bnorm;
    let mut r = vec![0.0; n];
    sys.mul(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut z: Vec<f64> = r.iter().zip(&sys.diag).map(|(ri, d)| ri / d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut iters = 0;
    while iters < params.max_iter {
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm <= target {
            break;
        }
        sys.mul(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] / sys.diag[i];
        }
        let rz_next: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        iters += 1;
    }
    sys.mul(x, &mut ap);
    let res = ap.iter().zip(b).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt() / bnorm;
    (iters, res)
}

/// What to do with a component that touches no boundary pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Unconstrained {
    Fail,
    Skip,
}

pub(crate) fn solve<T: Real>(
    img: &RasterImage<T>,
    region: &BitMask,
    free: Option<&BitMask>,
    guide: Option<&RasterImage<T>>,
    params: &PoissonParams,
    on_unconstrained: Unconstrained,
) -> Result<(RasterImage<T>, PoissonStats)> {
    region.check_dims(img.dims())?;
    if let Some(f) = free {
        f.check_dims(img.dims())?;
    }
    if let Some(g) = guide {
        g.check_same_dims(img.dims())?;
        if g.channels() != img.channels() {
            return Err(Error::invalid("guide and image channel counts differ"));
        }
    }
    let region = match free {
        Some(f) => region.minus(f),
        None => region.clone(),
    };
    let mut out = img.clone();
    let mut stats = PoissonStats::default();
    let mut index = vec![u32::MAX; region.bits().len()];
    let channels = img.channels();
    for comp in components(&region) {
        for (k, &p) in comp.iter().enumerate() {
            index[p] = k as u32;
        }
        let mut sys = build(comp, &index, &region, free);
        if sys.dirichlet.is_empty() && free.is_some() {
            // nothing but free pixels around it: let them constrain after all
            sys = build(sys.cells, &index, &region, None);
            if !sys.dirichlet.is_empty() {
                stats.used_free += 1;
            }
        }
        if sys.dirichlet.is_empty() {
            match on_unconstrained {
                Unconstrained::Fail => {
                    return Err(Error::UnconstrainedRegion {
                        pixels: sys.cells.len(),
                    })
                }
                Unconstrained::Skip => {
                    log::warn!("skipping unconstrained region of {} pixels", sys.cells.len());
                    stats.skipped += 1;
                    continue;
                }
            }
        }
        let n = sys.cells.len();
        stats.components += 1;
        stats.unknowns += n;
        for c in 0..channels {
            let mut b = vec![0.0; n];
            for &(row, q) in &sys.dirichlet {
                b[row as usize] += img.pixel_at(q)[c].as_f64();
            }
            if let Some(g) = guide {
                for &(row, q) in &sys.links {
                    let p = sys.cells[row as usize];
                    b[row as usize] += g.pixel_at(p)[c].as_f64() - g.pixel_at(q)[c].as_f64();
                }
            }
            let mut x: Vec<f64> = sys.cells.iter().map(|&p| img.pixel_at(p)[c].as_f64()).collect();
            let (it, res) = pcg(&sys, &b, &mut x, params);
            if res > params.tol {
                log::warn!("poisson solve stopped at relative residual {res:.3e} after {it} iterations");
            }
            stats.iterations = stats.iterations.max(it);
            stats.residual = stats.residual.max(res);
            for (&p, &v) in sys.cells.iter().zip(&x) {
                out.pixel_at_mut(p)[c] = T::lit(v);
            }
        }
        for &p in &sys.cells {
            index[p] = u32::MAX;
        }
    }
    Ok((out, stats))
}

/// Replaces `region` of `img` by the solution of the discrete Poisson
/// equation whose Laplacian follows `guide` (zero guidance when `None`)
/// and whose boundary values are the surrounding pixels of `img`.
///
/// The stencil wraps horizontally; the top and bottom image rows have no
/// neighbor beyond them. Each 4-connected component is solved on its own,
/// and one without any surrounding pixel is an error.
pub fn poisson_level<T: Real>(
    img: &RasterImage<T>,
    region: &BitMask,
    guide: Option<&RasterImage<T>>,
    params: &PoissonParams,
) -> Result<(RasterImage<T>, PoissonStats)> {
    solve(img, region, None, guide, params, Unconstrained::Fail)
}
