//! Derivative-free search and sphere nets used by the sup/inf quantities.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::space::NormedSpace;

#[derive(Clone, Copy, Debug)]
pub struct SearchOptions {
    pub max_evals: usize,
    pub initial_step: f64,
    pub min_step: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            max_evals: 2000,
            initial_step: 0.25,
            min_step: 1e-10,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SearchResult {
    pub point: Vec<f64>,
    pub value: f64,
    pub evals: usize,
}

/// Compass search maximizing `f` from `x0`; the step halves whenever a full sweep fails.
pub fn pattern_search<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: Vec<f64>,
    opts: &SearchOptions,
) -> SearchResult {
    let mut x = x0;
    let mut fx = f(&x);
    let mut evals = 1;
    if !fx.is_finite() {
        fx = f64::NEG_INFINITY;
    }
    let mut step = opts.initial_step;
    let n = x.len();
    while step >= opts.min_step && evals < opts.max_evals && n > 0 {
        let mut improved = false;
        for i in 0..n {
            for dir in [1.0, -1.0] {
                if evals >= opts.max_evals {
                    break;
                }
                let old = x[i];
                x[i] = old + dir * step;
                let v = f(&x);
                evals += 1;
                if v > fx {
                    fx = v;
                    improved = true;
                    break;
                }
                x[i] = old;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    SearchResult {
        point: x,
        value: fx,
        evals,
    }
}

/// Runs a search from every start and keeps the best, ties going to the earlier start.
pub fn multistart<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    starts: Vec<Vec<f64>>,
    opts: &SearchOptions,
) -> Option<(usize, SearchResult)> {
    let mut best: Option<(usize, SearchResult)> = None;
    for (i, s) in starts.into_iter().enumerate() {
        let r = pattern_search(&mut f, s, opts);
        let better = match &best {
            None => true,
            Some((_, b)) => r.value > b.value,
        };
        if better {
            best = Some((i, r));
        }
    }
    best
}

pub fn gaussian_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Enclosure of `sup { phi(u) : u in span(Q), ||u|| = 1 }` for convex, absolutely
/// homogeneous `phi`, from a grid on the faces of the coefficient cube.
///
/// A point `u` of a grid cell is a convex combination of the cell corners `c_i`, so
/// `phi(u) <= sum l_i phi(c_i)`, while `||u|| >= theta(u) = sum l_i theta(c_i)` for the
/// norming functional `theta` of the cell centre. The ratio is at most the largest
/// `phi(c_i) / theta(c_i)`.
pub fn convex_sup_on_sphere<F: FnMut(&DVector<f64>) -> f64>(
    space: &NormedSpace,
    q: &DMatrix<f64>,
    mut phi: F,
    intervals: usize,
) -> (f64, f64) {
    let k = q.ncols();
    if k == 0 {
        return (0.0, 0.0);
    }
    if k == 1 {
        let u = q.column(0).into_owned();
        let v = phi(&u) / space.norm(&u);
        return (v, v);
    }
    let m = intervals.max(1);
    let h = 2.0 / m as f64;
    let (alpha, _) = space.euclidean_constants();
    let reach = alpha * h * ((k - 1) as f64).sqrt() / 2.0;
    let side = m + 1;
    let cells_per_face = m.pow((k - 1) as u32);
    let points_per_face = side.pow((k - 1) as u32);
    let mut lo = 0.0f64;
    let mut hi = 0.0f64;
    // phi(-u) = phi(u), so the faces with a +1 coordinate suffice.
    for face in 0..k {
        let mut val = vec![0.0; points_per_face];
        let mut nrm = vec![0.0; points_per_face];
        let mut pts = Vec::with_capacity(points_per_face);
        for idx in 0..points_per_face {
            let mut c = DVector::zeros(k);
            let mut rem = idx;
            for j in 0..k {
                if j == face {
                    c[j] = 1.0;
                } else {
                    c[j] = -1.0 + h * (rem % side) as f64;
                    rem /= side;
                }
            }
            let y = q * c;
            let n = space.norm(&y);
            nrm[idx] = n;
            val[idx] = phi(&y);
            if n > 0.0 {
                lo = lo.max(val[idx] / n);
            }
            pts.push(y);
        }
        let mut corners = Vec::with_capacity(1 << (k - 1));
        for cell in 0..cells_per_face {
            let mut base = vec![0usize; k - 1];
            let mut rem = cell;
            for b in base.iter_mut() {
                *b = rem % m;
                rem /= m;
            }
            corners.clear();
            for corner in 0..(1usize << (k - 1)) {
                let mut idx = 0;
                let mut mul = 1;
                for (j, b) in base.iter().enumerate() {
                    idx += (b + ((corner >> j) & 1)) * mul;
                    mul *= side;
                }
                corners.push(idx);
            }
            let nmax = corners.iter().map(|&i| nrm[i]).fold(0.0f64, f64::max);
            let nmin = corners
                .iter()
                .map(|&i| nrm[i])
                .fold(f64::INFINITY, f64::min);
            let vmax = corners
                .iter()
                .map(|&i| {
                    if nrm[i] > 0.0 {
                        val[i] / nrm[i]
                    } else {
                        f64::INFINITY
                    }
                })
                .fold(0.0f64, f64::max);
            let floor = nmin - reach;
            let mut bound = if floor > 0.0 {
                vmax * nmax / floor
            } else {
                f64::INFINITY
            };
            let centre = corners
                .iter()
                .fold(DVector::zeros(space.dim()), |a, &i| a + &pts[i]);
            if let Ok(theta) = space.norming_functional(&centre) {
                let mut ratio = 0.0f64;
                for &i in &corners {
                    let b = theta.dot(&pts[i]);
                    ratio = if b > 0.0 {
                        ratio.max(val[i] / b)
                    } else {
                        f64::INFINITY
                    };
                }
                bound = bound.min(ratio);
            }
            hi = hi.max(bound);
        }
    }
    (lo, hi.max(lo))
}

/// Grid size per face edge so that a `k`-dimensional cube-surface grid has about `budget` points.
pub fn intervals_for_budget(k: usize, budget: usize) -> usize {
    if k <= 1 {
        return 1;
    }
    let per_face = (budget / k).max(1) as f64;
    (per_face.powf(1.0 / (k - 1) as f64).floor() as usize)
        .saturating_sub(1)
        .max(1)
}
