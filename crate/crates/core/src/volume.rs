//! Volume growth of linear maps between l^p spaces.
//!
//! `vol_k` is the product of successive distances to the span of the earlier vectors,
//! `D_k` its supremum over unit inputs, `E_k` the largest determinant
//! `det(theta_i(T x_j))` over unit vectors and unit functionals, and `F_k` the best
//! worst-case expansion over k-dimensional subspaces. Outside the Euclidean case the
//! suprema are reported as enclosures `[lo, hi]`: `lo` is always attained by an explicit
//! witness and `hi` is a proven bound.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    combinations, det, factorial, orthogonal_complement, orthonormal_basis, rng_for,
    singular_values, RANK_TOL,
};
use crate::optim::{
    convex_sup_on_sphere, gaussian_vec, intervals_for_budget, multistart, SearchOptions,
};
use crate::space::{NormedSpace, Subspace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    EuclideanExact,
    Optimize,
    Net,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeEnclosure {
    pub lo: f64,
    pub hi: f64,
    pub mode: Mode,
}

impl VolumeEnclosure {
    pub fn exact(v: f64, mode: Mode) -> Self {
        VolumeEnclosure { lo: v, hi: v, mode }
    }

    pub fn is_tight(&self, rel: f64) -> bool {
        self.hi - self.lo <= rel * self.hi.abs()
    }
}

/// Tuning for the search-based enclosures.
#[derive(Clone, Copy, Debug)]
pub struct VolumeOptions {
    /// Random starts in addition to the structured ones.
    pub random_starts: usize,
    /// Objective evaluations per start.
    pub max_evals: usize,
    /// Starts for the alternating maximization of `E_k`.
    pub alternating_starts: usize,
    pub alternating_iters: usize,
    /// Whether the searches may start from singular vectors.
    pub svd_start: bool,
    /// Grid points for certified bounds on spheres of subspaces.
    pub grid_budget: usize,
    /// Largest vertex-pair count for exact `E_k` enumeration.
    pub enumeration_limit: usize,
    pub seed: u64,
}

impl Default for VolumeOptions {
    fn default() -> Self {
        VolumeOptions {
            random_starts: 2,
            max_evals: 400,
            alternating_starts: 32,
            alternating_iters: 200,
            svd_start: true,
            grid_budget: 20_000,
            enumeration_limit: 2_000_000,
            seed: 0x5eed,
        }
    }
}

/// A linear map between l^p spaces, optionally restricted to a subspace of its domain.
#[derive(Clone, Debug)]
pub struct LinearMap {
    matrix: DMatrix<f64>,
    domain: NormedSpace,
    codomain: NormedSpace,
    restriction: Option<Subspace>,
}

impl LinearMap {
    pub fn new(matrix: DMatrix<f64>, domain: NormedSpace, codomain: NormedSpace) -> Result<Self> {
        if matrix.ncols() != domain.dim() {
            return Err(Error::DimensionMismatch {
                expected: domain.dim(),
                found: matrix.ncols(),
            });
        }
        if matrix.nrows() != codomain.dim() {
            return Err(Error::DimensionMismatch {
                expected: codomain.dim(),
                found: matrix.nrows(),
            });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix"));
        }
        Ok(LinearMap {
            matrix,
            domain,
            codomain,
            restriction: None,
        })
    }

    /// An operator on a single space.
    pub fn on(space: NormedSpace, matrix: DMatrix<f64>) -> Result<Self> {
        Self::new(matrix, space, space)
    }

    pub fn identity(space: NormedSpace) -> Self {
        Self::on(space, DMatrix::identity(space.dim(), space.dim())).unwrap()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn domain(&self) -> &NormedSpace {
        &self.domain
    }

    pub fn codomain(&self) -> &NormedSpace {
        &self.codomain
    }

    pub fn restriction(&self) -> Option<&Subspace> {
        self.restriction.as_ref()
    }

    /// `T|_V` for a subspace `V` of the domain.
    pub fn restrict(&self, v: &Subspace) -> Result<Self> {
        if v.space() != &self.domain {
            return Err(Error::Precondition(
                "restriction subspace must live in the domain".into(),
            ));
        }
        let v = match &self.restriction {
            Some(w) => w.intersect(v)?,
            None => v.clone(),
        };
        Ok(LinearMap {
            restriction: Some(v),
            ..self.clone()
        })
    }

    /// The adjoint: the transpose acting between the dual spaces.
    pub fn dual(&self) -> Result<Self> {
        if self.restriction.is_some() {
            return Err(Error::Precondition(
                "the adjoint of a restricted map is not supported".into(),
            ));
        }
        Ok(LinearMap {
            matrix: self.matrix.transpose(),
            domain: self.codomain.dual(),
            codomain: self.domain.dual(),
            restriction: None,
        })
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &LinearMap) -> Result<Self> {
        if other.codomain != self.domain {
            return Err(Error::Precondition(
                "composition spaces do not match".into(),
            ));
        }
        if self.restriction.is_some() {
            return Err(Error::Precondition(
                "outer map of a composition is restricted".into(),
            ));
        }
        Ok(LinearMap {
            matrix: &self.matrix * &other.matrix,
            domain: other.domain,
            codomain: self.codomain,
            restriction: other.restriction.clone(),
        })
    }

    pub fn scaled(&self, c: f64) -> Self {
        LinearMap {
            matrix: &self.matrix * c,
            ..self.clone()
        }
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }

    /// Orthonormal basis of the effective domain (identity when unrestricted).
    pub fn frame(&self) -> DMatrix<f64> {
        match &self.restriction {
            Some(v) => v.basis().clone(),
            None => DMatrix::identity(self.domain.dim(), self.domain.dim()),
        }
    }

    /// Dimension of the effective domain.
    pub fn rank_domain(&self) -> usize {
        self.restriction
            .as_ref()
            .map_or(self.domain.dim(), |v| v.dim())
    }

    fn reduced(&self) -> DMatrix<f64> {
        &self.matrix * self.frame()
    }

    /// Enclosure of the operator norm.
    pub fn op_norm(&self) -> (f64, f64) {
        let q = self.frame();
        let g = &self.matrix * &q;
        section_sup_norm(&self.domain, &q, &g, &self.codomain, 20_000)
    }

    /// `(a, b)` with `||Tx|| <= a ||Tx||_2` and `||x||_2 <= b ||x||` on the domain.
    fn comparison(&self) -> f64 {
        let (a, _) = self.codomain.euclidean_constants();
        let (_, b) = self.domain.euclidean_constants();
        a * b
    }
}

#[derive(Serialize, Deserialize)]
struct MapRepr {
    domain: NormedSpace,
    codomain: NormedSpace,
    matrix: Vec<Vec<f64>>,
}

impl Serialize for LinearMap {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MapRepr {
            domain: self.domain,
            codomain: self.codomain,
            matrix: self
                .matrix
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for LinearMap {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = MapRepr::deserialize(d)?;
        let m = matrix_from_rows(&r.matrix).map_err(D::Error::custom)?;
        LinearMap::new(m, r.domain, r.codomain).map_err(D::Error::custom)
    }
}

/// Row-major nested arrays to a matrix; rows must have equal length.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::Precondition("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

/// Enclosure of `sup { ||G c||_target : ||U c||_dom <= 1 }` for orthonormal `U`.
pub(crate) fn section_sup_norm(
    dom: &NormedSpace,
    u: &DMatrix<f64>,
    g: &DMatrix<f64>,
    target: &NormedSpace,
    budget: usize,
) -> (f64, f64) {
    let k = u.ncols();
    if k == 0 || g.amax() == 0.0 {
        return (0.0, 0.0);
    }
    let eval = |x: &DVector<f64>| target.norm(&(g * (u.transpose() * x)));
    if let Some(vs) = dom.section_vertices(u) {
        let v = vs.iter().map(eval).fold(0.0, f64::max);
        return (v, v);
    }
    let tp = target.p();
    if dom.p().is_two() {
        if tp.is_two() {
            let s = singular_values(g)[0];
            return (s, s);
        }
        if tp.is_inf() {
            let v = g.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
            return (v, v);
        }
        if tp.is_one() && g.nrows() <= 20 {
            let n = g.nrows();
            let mut best = 0.0f64;
            for mask in 0..(1usize << (n - 1)) {
                let s = DVector::from_fn(n, |i, _| {
                    if i > 0 && mask & (1 << (i - 1)) != 0 {
                        -1.0
                    } else {
                        1.0
                    }
                });
                best = best.max((g.transpose() * s).norm());
            }
            return (best, best);
        }
    }
    if tp.is_inf() {
        // Each output coordinate is a functional on span(U); its norm there is the
        // distance of any extension to the annihilator of span(U).
        let ann = orthogonal_complement(u);
        let dual = dom.dual();
        let v = g
            .row_iter()
            .map(|r| {
                let ext = u * r.transpose();
                dual.nearest_point(&ext, &ann).0
            })
            .fold(0.0, f64::max);
        return (v, v);
    }
    if k <= 4 {
        return convex_sup_on_sphere(dom, u, eval, intervals_for_budget(k, budget));
    }
    let (a, _) = target.euclidean_constants();
    let (_, b) = dom.euclidean_constants();
    let svd = g.clone().svd(false, true);
    let top = svd.v_t.unwrap().row(0).transpose();
    let x = u * top;
    let lo = eval(&x) / dom.norm(&x);
    (lo, a * b * svd.singular_values[0])
}

/// Product of successive distances of each vector to the span of the earlier ones.
pub fn vol_k(space: &NormedSpace, vectors: &[DVector<f64>]) -> Result<f64> {
    for v in vectors {
        space.check_vector(v)?;
    }
    Ok(volume(space, vectors))
}

/// `vol_k(T v_1, ..., T v_k)`.
pub fn d_k_t(t: &LinearMap, vectors: &[DVector<f64>]) -> Result<f64> {
    for v in vectors {
        t.domain.check_vector(v)?;
    }
    let images: Vec<_> = vectors.iter().map(|v| t.apply(v)).collect();
    Ok(volume(&t.codomain, &images))
}

pub(crate) fn volume(space: &NormedSpace, vectors: &[DVector<f64>]) -> f64 {
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(vectors.len());
    let mut prod = 1.0;
    for w in vectors {
        let wn = w.norm();
        if wn == 0.0 {
            return 0.0;
        }
        let mut r = w.clone();
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&r);
                r.axpy(-c, b, 1.0);
            }
        }
        let rn = r.norm();
        if rn <= 1e-13 * wn {
            return 0.0;
        }
        let factor = if space.p().is_two() {
            rn
        } else if basis.is_empty() {
            space.norm(w)
        } else {
            let q = DMatrix::from_columns(&basis);
            space.dist_enclosure(w, &q).0
        };
        prod *= factor;
        basis.push(r / rn);
    }
    prod
}

fn check_order(t: &LinearMap, k: usize) -> Result<()> {
    let dim = t.rank_domain();
    if k > dim {
        return Err(Error::OrderTooLarge { k, dim });
    }
    Ok(())
}

fn require_euclidean(t: &LinearMap) -> Result<()> {
    if t.domain.p().is_two() && t.codomain.p().is_two() {
        Ok(())
    } else {
        Err(Error::NotEuclidean)
    }
}

fn require_net(t: &LinearMap) -> Result<()> {
    if t.rank_domain() > 4 {
        return Err(Error::NetUnavailable {
            dim: t.rank_domain(),
            max: 4,
        });
    }
    Ok(())
}

fn top_singular_product(m: &DMatrix<f64>, k: usize) -> f64 {
    let sv = singular_values(m);
    (0..k).map(|i| sv.get(i).copied().unwrap_or(0.0)).product()
}

/// Upper bound for both `D_k` and `E_k` that needs no search: the k-th power of the
/// operator norm and the Euclidean singular-value product rescaled by norm comparison.
fn volume_upper_bound(t: &LinearMap, k: usize) -> f64 {
    let (_, norm_hi) = t.op_norm();
    let by_norm = norm_hi.powi(k as i32);
    let by_svd = t.comparison().powi(k as i32) * top_singular_product(&t.reduced(), k);
    by_norm.min(by_svd)
}

/// Points on the unit sphere of the domain in reduced coordinates, for starting searches.
fn normalized_columns(t: &LinearMap, coeffs: &[Vec<f64>]) -> Vec<DVector<f64>> {
    let q = t.frame();
    coeffs
        .iter()
        .map(|c| {
            let x = &q * DVector::from_column_slice(c);
            t.domain.normalize(&x).unwrap_or(x)
        })
        .collect()
}

/// Right singular vectors of the reduced matrix, as reduced coordinates.
fn singular_frame(t: &LinearMap, k: usize) -> Vec<Vec<f64>> {
    let m = t.rank_domain();
    let r = t.reduced();
    let r = if r.nrows() < m {
        let mut p = DMatrix::zeros(m, m);
        p.view_mut((0, 0), (r.nrows(), m)).copy_from(&r);
        p
    } else {
        r
    };
    let svd = r.svd(false, true);
    let vt = svd.v_t.unwrap();
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap()
    });
    idx.iter()
        .take(k)
        .map(|&i| vt.row(i).iter().copied().collect())
        .collect()
}

/// Greedy vertex choice: each next input maximizes the distance of its image from the
/// span of the earlier images, which for a polytope ball is attained at a vertex.
fn greedy_vertex_inputs(t: &LinearMap, k: usize) -> Option<Vec<DVector<f64>>> {
    let q = t.frame();
    let verts = t.domain.section_vertices(&q)?;
    let mut chosen: Vec<DVector<f64>> = Vec::new();
    for _ in 0..k {
        let images: Vec<DVector<f64>> = chosen.iter().map(|v| t.apply(v)).collect();
        let span = if images.is_empty() {
            DMatrix::zeros(t.codomain.dim(), 0)
        } else {
            orthonormal_basis(&DMatrix::from_columns(&images), RANK_TOL)
        };
        let mut best: Option<(f64, &DVector<f64>)> = None;
        for v in &verts {
            let val = t.codomain.nearest_point(&t.apply(v), &span).0;
            if best.map_or(true, |b| val > b.0) {
                best = Some((val, v));
            }
        }
        chosen.push(best?.1.clone());
    }
    Some(chosen)
}

/// Searches unit inputs for a large `vol_k` of the images; returns the best value and inputs.
pub fn volume_search(t: &LinearMap, k: usize, opts: &VolumeOptions) -> (f64, Vec<DVector<f64>>) {
    let m = t.rank_domain();
    let q = t.frame();
    let mut starts: Vec<Vec<f64>> = Vec::new();
    let flatten = |vs: &[DVector<f64>]| -> Vec<f64> {
        vs.iter()
            .flat_map(|v| (q.transpose() * v).iter().copied().collect::<Vec<_>>())
            .collect()
    };
    if opts.svd_start {
        starts.push(singular_frame(t, k).concat());
    }
    if let Some(vs) = greedy_vertex_inputs(t, k) {
        starts.push(flatten(&vs));
    }
    let mut rng = rng_for(opts.seed, (k as u64) << 8 | m as u64);
    for _ in 0..opts.random_starts {
        starts.push(gaussian_vec(&mut rng, m * k));
    }
    let inputs = |c: &[f64]| -> Option<Vec<DVector<f64>>> {
        (0..k)
            .map(|i| {
                let x = &q * DVector::from_column_slice(&c[i * m..(i + 1) * m]);
                t.domain.normalize(&x)
            })
            .collect()
    };
    let f = |c: &[f64]| -> f64 {
        match inputs(c) {
            Some(vs) => {
                let images: Vec<_> = vs.iter().map(|v| t.apply(v)).collect();
                volume(&t.codomain, &images)
            }
            None => 0.0,
        }
    };
    let search = SearchOptions {
        max_evals: opts.max_evals,
        initial_step: 0.25,
        min_step: 1e-11,
    };
    match multistart(f, starts, &search) {
        Some((_, r)) => {
            let vs = inputs(&r.point).unwrap_or_default();
            (r.value.max(0.0), vs)
        }
        None => (0.0, Vec::new()),
    }
}

/// `D_k(T)`: supremum of `vol_k(T v_1, ..., T v_k)` over unit `v_i`.
pub fn d_k(t: &LinearMap, k: usize, mode: Mode, opts: &VolumeOptions) -> Result<VolumeEnclosure> {
    check_order(t, k)?;
    if k == 0 {
        return Ok(VolumeEnclosure::exact(1.0, mode));
    }
    match mode {
        Mode::EuclideanExact => {
            require_euclidean(t)?;
            Ok(VolumeEnclosure::exact(
                top_singular_product(&t.reduced(), k),
                mode,
            ))
        }
        Mode::Optimize => {
            if k == 1 {
                let (lo, hi) = t.op_norm();
                return Ok(VolumeEnclosure { lo, hi, mode });
            }
            let (lo, _) = volume_search(t, k, opts);
            let hi = volume_upper_bound(t, k).max(lo);
            Ok(VolumeEnclosure { lo, hi, mode })
        }
        Mode::Net => {
            require_net(t)?;
            let (nlo, nhi) = t.op_norm();
            if k == 1 {
                return Ok(VolumeEnclosure {
                    lo: nlo,
                    hi: nhi,
                    mode,
                });
            }
            let lo = net_volume_lower(t, k, opts).max(volume_search(t, k, opts).0);
            let hi = volume_upper_bound(t, k).max(lo);
            Ok(VolumeEnclosure { lo, hi, mode })
        }
    }
}

/// Best `vol_k` over k-tuples drawn from a sphere grid sized to the tuple budget.
fn net_volume_lower(t: &LinearMap, k: usize, opts: &VolumeOptions) -> f64 {
    let m = t.rank_domain();
    let per = (opts.grid_budget as f64).powf(1.0 / k as f64).floor() as usize;
    let pts = sphere_grid(m, per.max(2));
    let xs = normalized_columns(t, &pts);
    let images: Vec<_> = xs.iter().map(|x| t.apply(x)).collect();
    let mut best = 0.0f64;
    let mut idx = vec![0usize; k];
    loop {
        let tuple: Vec<_> = idx.iter().map(|&i| images[i].clone()).collect();
        best = best.max(volume(&t.codomain, &tuple));
        let mut j = 0;
        while j < k {
            idx[j] += 1;
            if idx[j] < images.len() {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
        if j == k {
            break;
        }
    }
    best
}

/// About `count` directions in `R^m` from the faces of the unit cube.
fn sphere_grid(m: usize, count: usize) -> Vec<Vec<f64>> {
    if m == 1 {
        return vec![vec![1.0]];
    }
    let side = ((count as f64 / m as f64).powf(1.0 / (m - 1) as f64).floor() as usize).max(2);
    let per_face = side.pow((m - 1) as u32);
    let mut out = Vec::with_capacity(m * per_face);
    for face in 0..m {
        for idx in 0..per_face {
            let mut rem = idx;
            let c: Vec<f64> = (0..m)
                .map(|j| {
                    if j == face {
                        1.0
                    } else {
                        let v = -1.0 + 2.0 * (rem % side) as f64 / (side - 1) as f64;
                        rem /= side;
                        v
                    }
                })
                .collect();
            out.push(c);
        }
    }
    out
}

/// Cofactor matrix of a small square matrix.
fn cofactors(u: &DMatrix<f64>) -> DMatrix<f64> {
    let k = u.nrows();
    if k == 1 {
        return DMatrix::from_element(1, 1, 1.0);
    }
    DMatrix::from_fn(k, k, |i, j| {
        let minor = u.clone().remove_row(i).remove_column(j);
        let s = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
        s * det(&minor)
    })
}

/// Unit input maximizing `h(x)` over the effective domain.
fn best_input(t: &LinearMap, h: &DVector<f64>) -> Option<DVector<f64>> {
    match &t.restriction {
        None => t.domain.dual().norming_functional(h).ok(),
        Some(v) => {
            let perp = orthogonal_complement(v.basis());
            t.domain
                .dual()
                .annihilating_functional(h, &perp)
                .ok()
                .map(|(x, _)| x)
        }
    }
}

/// Witness for `E_k`: unit inputs, unit functionals and their determinant.
#[derive(Clone, Debug)]
pub struct DeterminantWitness {
    pub xs: Vec<DVector<f64>>,
    pub thetas: Vec<DVector<f64>>,
    pub value: f64,
}

fn pairing(t: &LinearMap, xs: &[DVector<f64>], thetas: &[DVector<f64>]) -> DMatrix<f64> {
    let k = xs.len();
    let images: Vec<_> = xs.iter().map(|x| t.apply(x)).collect();
    DMatrix::from_fn(k, k, |i, j| thetas[i].dot(&images[j]))
}

/// Alternating maximization of `|det(theta_i(T x_j))|`, one argument at a time.
fn alternating_max(
    t: &LinearMap,
    mut xs: Vec<DVector<f64>>,
    iters: usize,
) -> Option<DeterminantWitness> {
    let k = xs.len();
    let mut thetas: Vec<DVector<f64>> = xs
        .iter()
        .map(|x| {
            let y = t.apply(x);
            t.codomain
                .norming_functional(&y)
                .unwrap_or_else(|_| DVector::zeros(t.codomain.dim()))
        })
        .collect();
    let mut value = det(&pairing(t, &xs, &thetas)).abs();
    for _ in 0..iters {
        let before = value;
        for i in 0..k {
            let u = pairing(t, &xs, &thetas);
            let c = cofactors(&u);
            let mut g = DVector::zeros(t.codomain.dim());
            for j in 0..k {
                g.axpy(c[(i, j)], &t.apply(&xs[j]), 1.0);
            }
            if let Ok(th) = t.codomain.norming_functional(&g) {
                thetas[i] = th;
            }
        }
        for j in 0..k {
            let u = pairing(t, &xs, &thetas);
            let c = cofactors(&u);
            let mut s = DVector::zeros(t.codomain.dim());
            for i in 0..k {
                s.axpy(c[(i, j)], &thetas[i], 1.0);
            }
            let h = t.matrix.transpose() * s;
            if let Some(x) = best_input(t, &h) {
                xs[j] = x;
            }
        }
        value = det(&pairing(t, &xs, &thetas)).abs();
        if value <= before * (1.0 + 1e-12) {
            break;
        }
    }
    Some(DeterminantWitness { xs, thetas, value })
}

/// Exact `E_k` for polyhedral domain and codomain: a multilinear modulus on a product of
/// polytopes peaks at vertices. `None` when not applicable or too large.
fn e_k_enumerate(t: &LinearMap, k: usize, limit: usize) -> Option<DeterminantWitness> {
    let q = t.frame();
    let xv = t.domain.section_vertices(&q)?;
    let dual = t.codomain.dual();
    let tv = dual.section_vertices(&DMatrix::identity(dual.dim(), dual.dim()))?;
    let nx = crate::linalg::binomial(xv.len(), k);
    let nt = crate::linalg::binomial(tv.len(), k);
    if nx.saturating_mul(nt) > limit || nx == 0 || nt == 0 {
        return None;
    }
    let images: Vec<_> = xv.iter().map(|x| t.apply(x)).collect();
    let mut best = DeterminantWitness {
        xs: Vec::new(),
        thetas: Vec::new(),
        value: -1.0,
    };
    for xs in combinations(xv.len(), k) {
        let w = DMatrix::from_columns(&xs.iter().map(|&j| images[j].clone()).collect::<Vec<_>>());
        let rows: Vec<DVector<f64>> = tv.iter().map(|th| w.transpose() * th).collect();
        for ts in combinations(tv.len(), k) {
            let u = DMatrix::from_fn(k, k, |i, j| rows[ts[i]][j]);
            let v = det(&u).abs();
            if v > best.value {
                best = DeterminantWitness {
                    xs: xs.iter().map(|&j| xv[j].clone()).collect(),
                    thetas: ts.iter().map(|&i| tv[i].clone()).collect(),
                    value: v,
                };
            }
        }
    }
    Some(best)
}

/// Best determinant witness from the structured and random starts.
pub fn determinant_search(t: &LinearMap, k: usize, opts: &VolumeOptions) -> DeterminantWitness {
    if let Some(w) = e_k_enumerate(t, k, opts.enumeration_limit) {
        return w;
    }
    let m = t.rank_domain();
    let mut starts: Vec<Vec<DVector<f64>>> = Vec::new();
    if opts.svd_start {
        starts.push(normalized_columns(t, &singular_frame(t, k)));
    }
    let mut rng = rng_for(opts.seed ^ 0xe0, (k as u64) << 8 | m as u64);
    while starts.len() < opts.alternating_starts.max(1) {
        let cs: Vec<Vec<f64>> = (0..k).map(|_| gaussian_vec(&mut rng, m)).collect();
        starts.push(normalized_columns(t, &cs));
    }
    let mut best: Option<DeterminantWitness> = None;
    for s in starts {
        if let Some(w) = alternating_max(t, s, opts.alternating_iters) {
            if best.as_ref().map_or(true, |b| w.value > b.value) {
                best = Some(w);
            }
        }
    }
    best.unwrap()
}

/// `E_k(T)`: supremum of `|det(theta_i(T x_j))|` over unit vectors and unit functionals.
pub fn e_k(t: &LinearMap, k: usize, mode: Mode, opts: &VolumeOptions) -> Result<VolumeEnclosure> {
    check_order(t, k)?;
    if k == 0 {
        return Ok(VolumeEnclosure::exact(1.0, mode));
    }
    match mode {
        Mode::EuclideanExact => {
            require_euclidean(t)?;
            Ok(VolumeEnclosure::exact(
                top_singular_product(&t.reduced(), k),
                mode,
            ))
        }
        Mode::Optimize | Mode::Net => {
            if mode == Mode::Net {
                require_net(t)?;
            }
            if k == 1 {
                let (lo, hi) = t.op_norm();
                return Ok(VolumeEnclosure { lo, hi, mode });
            }
            if let Some(w) = e_k_enumerate(t, k, opts.enumeration_limit) {
                return Ok(VolumeEnclosure::exact(w.value, mode));
            }
            let lo = determinant_search(t, k, opts).value;
            // Hadamard: each column of (theta_i(T x_j)) has Euclidean norm <= sqrt(k) ||T||.
            let (_, nhi) = t.op_norm();
            let hadamard = ((k as f64).sqrt() * nhi).powi(k as i32);
            let hi = volume_upper_bound(t, k).min(hadamard).max(lo);
            Ok(VolumeEnclosure { lo, hi, mode })
        }
    }
}

/// Enclosure of `inf { ||T v|| : v in span(frame), ||v|| = 1 }` for orthonormal `frame`.
pub fn min_gain(t: &LinearMap, frame: &DMatrix<f64>, budget: usize) -> (f64, f64) {
    let k = frame.ncols();
    if k == 0 {
        return (f64::INFINITY, f64::INFINITY);
    }
    let tb = &t.matrix * frame;
    if k > tb.nrows() {
        return (0.0, 0.0);
    }
    let svd = tb.clone().svd(true, true);
    let sv = &svd.singular_values;
    let smax = sv.max();
    let smin = sv.min();
    if smax == 0.0 || smin <= 1e-13 * smax {
        return (0.0, 0.0);
    }
    if t.domain.p().is_two() && t.codomain.p().is_two() {
        return (smin, smin);
    }
    // The minimal gain is the reciprocal of the norm of the inverse on T(V).
    let u = svd.u.clone().unwrap();
    let pinv = svd.pseudo_inverse(0.0).unwrap();
    let g = frame * (pinv * &u);
    let (slo, shi) = section_sup_norm(&t.codomain, &u, &g, &t.domain, budget);
    let lo = if shi.is_finite() && shi > 0.0 {
        1.0 / shi
    } else {
        0.0
    };
    let hi = if slo > 0.0 { 1.0 / slo } else { f64::INFINITY };
    // Norm comparison gives an independent lower bound.
    let (ai, _) = t.domain.euclidean_constants();
    let (_, bo) = t.codomain.euclidean_constants();
    (lo.max(smin / (ai * bo)), hi)
}

/// Best frame found for `F_k` with its certified minimal gain.
#[derive(Clone, Debug)]
pub struct FrameWitness {
    pub frame: DMatrix<f64>,
    pub gain: f64,
}

/// Searches k-dimensional subspaces of the effective domain for a large certified minimal gain.
pub fn frame_search(t: &LinearMap, k: usize, opts: &VolumeOptions) -> FrameWitness {
    let m = t.rank_domain();
    let q = t.frame();
    let search_budget = (opts.grid_budget / 10).max(200);
    let frame_of = |c: &[f64]| -> Option<DMatrix<f64>> {
        let a = DMatrix::from_column_slice(m, k, c);
        let b = orthonormal_basis(&(&q * a), 1e-8);
        (b.ncols() == k).then_some(b)
    };
    let f = |c: &[f64]| -> f64 {
        match frame_of(c) {
            Some(b) => min_gain(t, &b, search_budget).0,
            None => 0.0,
        }
    };
    let mut starts: Vec<Vec<f64>> = Vec::new();
    if opts.svd_start {
        starts.push(singular_frame(t, k).concat());
    }
    if let Some(vs) = greedy_vertex_inputs(t, k) {
        starts.push(
            vs.iter()
                .flat_map(|v| (q.transpose() * v).iter().copied().collect::<Vec<_>>())
                .collect(),
        );
    }
    let mut rng = rng_for(opts.seed ^ 0xf0, (k as u64) << 8 | m as u64);
    for _ in 0..opts.random_starts {
        starts.push(gaussian_vec(&mut rng, m * k));
    }
    let search = SearchOptions {
        max_evals: opts.max_evals,
        initial_step: 0.25,
        min_step: 1e-11,
    };
    let exact_inner =
        (t.domain.p().is_two() && t.codomain.p().is_two()) || t.codomain.p().is_polyhedral();
    let (point, value) = match multistart(f, starts, &search) {
        Some((_, r)) => (r.point, r.value),
        None => (vec![0.0; m * k], 0.0),
    };
    match frame_of(&point) {
        Some(frame) => {
            let gain = if exact_inner {
                value
            } else {
                min_gain(t, &frame, opts.grid_budget).0.max(value)
            };
            FrameWitness { frame, gain }
        }
        None => FrameWitness {
            frame: DMatrix::zeros(t.domain.dim(), 0),
            gain: 0.0,
        },
    }
}

/// `F_k(T)`: supremum over k-dimensional subspaces of the minimal gain on their unit sphere.
pub fn f_k(t: &LinearMap, k: usize, mode: Mode, opts: &VolumeOptions) -> Result<VolumeEnclosure> {
    Ok(f_k_with_frame(t, k, mode, opts)?.0)
}

/// `F_k` together with the frame realizing the lower bound (empty when `k = 0`).
pub fn f_k_with_frame(
    t: &LinearMap,
    k: usize,
    mode: Mode,
    opts: &VolumeOptions,
) -> Result<(VolumeEnclosure, FrameWitness)> {
    check_order(t, k)?;
    if k == 0 {
        return Ok((
            VolumeEnclosure::exact(f64::INFINITY, mode),
            FrameWitness {
                frame: DMatrix::zeros(t.domain.dim(), 0),
                gain: f64::INFINITY,
            },
        ));
    }
    let sv = singular_values(&t.reduced());
    let sk = sv.get(k - 1).copied().unwrap_or(0.0);
    match mode {
        Mode::EuclideanExact => {
            require_euclidean(t)?;
            let q = t.frame();
            let v = singular_frame(t, k).concat();
            let frame =
                orthonormal_basis(&(&q * DMatrix::from_column_slice(q.ncols(), k, &v)), 1e-12);
            Ok((
                VolumeEnclosure::exact(sk, mode),
                FrameWitness { frame, gain: sk },
            ))
        }
        Mode::Optimize | Mode::Net => {
            if mode == Mode::Net {
                require_net(t)?;
            }
            let w = frame_search(t, k, opts);
            let (_, nhi) = t.op_norm();
            // Courant-Fischer in Euclidean terms, then norm comparison.
            let hi = nhi.min(t.comparison() * sk).max(w.gain);
            Ok((
                VolumeEnclosure {
                    lo: w.gain,
                    hi,
                    mode,
                },
                w,
            ))
        }
    }
}

/// `k!` as used by the primal/dual comparison constants.
pub fn k_factorial(k: usize) -> f64 {
    factorial(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::Exponent;

    fn space(d: usize, p: Exponent) -> NormedSpace {
        NormedSpace::new(d, p).unwrap()
    }

    fn diag(d: &[f64], p: Exponent) -> LinearMap {
        LinearMap::on(
            space(d.len(), p),
            DMatrix::from_diagonal(&DVector::from_column_slice(d)),
        )
        .unwrap()
    }

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn vol_examples() {
        let s3 = space(3, Exponent::TWO);
        assert_eq!(
            vol_k(&s3, &[v(&[1.0, 0.0, 0.0]), v(&[0.0, 2.0, 0.0])]).unwrap(),
            2.0
        );
        let s2 = space(2, Exponent::TWO);
        let vv = vol_k(&s2, &[v(&[1.0, 0.0]), v(&[1.0, 1.0])]).unwrap();
        assert!((vv - 1.0).abs() < 1e-15);
        assert_eq!(vol_k(&s2, &[v(&[1.0, 1.0]), v(&[2.0, 2.0])]).unwrap(), 0.0);
        assert!(vol_k(&s2, &[v(&[1.0, 0.0, 0.0])]).is_err());
    }

    #[test]
    fn vol_scales_multilinearly() {
        for p in [
            Exponent::ONE,
            Exponent::TWO,
            Exponent::INF,
            Exponent::new(3.0).unwrap(),
        ] {
            let s = space(3, p);
            let a = v(&[1.0, -0.4, 0.3]);
            let b = v(&[0.2, 1.0, 0.7]);
            let base = vol_k(&s, &[a.clone(), b.clone()]).unwrap();
            let scaled = vol_k(&s, &[&a * 2.0, &b * 3.0]).unwrap();
            assert!((scaled - 6.0 * base).abs() < 1e-9 * scaled, "p={p}");
        }
    }

    #[test]
    fn d_k_t_examples() {
        let t = diag(&[3.0, 2.0, 1.0], Exponent::TWO);
        let e = |i: usize| DVector::from_fn(3, |j, _| if i == j { 1.0 } else { 0.0 });
        assert_eq!(d_k_t(&t, &[e(0), e(1)]).unwrap(), 6.0);
        let z = t.scaled(0.0);
        assert_eq!(d_k_t(&z, &[e(0), e(1)]).unwrap(), 0.0);
        let id = LinearMap::identity(space(3, Exponent::ONE));
        let xs = [v(&[1.0, 2.0, 0.0]), v(&[0.0, 1.0, 1.0])];
        assert_eq!(d_k_t(&id, &xs).unwrap(), vol_k(id.codomain(), &xs).unwrap());
    }

    #[test]
    fn diagonal_quantities() {
        let opts = VolumeOptions::default();
        let t = diag(&[3.0, 2.0, 1.0], Exponent::TWO);
        for mode in [Mode::EuclideanExact, Mode::Optimize] {
            let d = d_k(&t, 2, mode, &opts).unwrap();
            let e = e_k(&t, 2, mode, &opts).unwrap();
            let f = f_k(&t, 2, mode, &opts).unwrap();
            assert!((d.lo - 6.0).abs() < 1e-9 && (d.hi - 6.0).abs() < 1e-9);
            assert!((e.lo - 6.0).abs() < 1e-9);
            assert!((f.lo - 2.0).abs() < 1e-9 && (f.hi - 2.0).abs() < 1e-9);
        }
        let z = t.scaled(0.0);
        assert_eq!(d_k(&z, 2, Mode::Optimize, &opts).unwrap().hi, 0.0);
        assert_eq!(e_k(&z, 2, Mode::Optimize, &opts).unwrap().hi, 0.0);
        assert!(d_k(&t, 4, Mode::Optimize, &opts).is_err());
        let t1 = diag(&[3.0, 2.0, 1.0], Exponent::ONE);
        assert_eq!(
            d_k(&t1, 2, Mode::EuclideanExact, &opts),
            Err(Error::NotEuclidean)
        );
    }

    #[test]
    fn identity_has_unit_volumes() {
        let opts = VolumeOptions::default();
        for p in [
            Exponent::ONE,
            Exponent::TWO,
            Exponent::INF,
            Exponent::new(1.5).unwrap(),
        ] {
            let id = LinearMap::identity(space(3, p));
            for k in 1..=3 {
                let d = d_k(&id, k, Mode::Optimize, &opts).unwrap();
                assert!(
                    d.lo <= 1.0 + 1e-12 && d.lo >= 1.0 - 1e-9,
                    "p={p} k={k}: {d:?}"
                );
                let f = f_k(&id, k, Mode::Optimize, &opts).unwrap();
                // Certified lower bounds for general p come from a grid and are first order in its spacing.
                let slack = if p.is_two() || p.is_polyhedral() {
                    1e-6
                } else {
                    1e-3
                };
                assert!(
                    f.lo <= 1.0 + 1e-12 && f.lo >= 1.0 - slack,
                    "p={p} k={k}: {f:?}"
                );
                assert!(f.hi >= 1.0 - 1e-12, "p={p} k={k}: {f:?}");
            }
            let e = e_k(&id, 1, Mode::Optimize, &opts).unwrap();
            assert!((e.lo - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rank_one_has_no_second_gain() {
        let opts = VolumeOptions::default();
        for p in [Exponent::ONE, Exponent::TWO, Exponent::INF] {
            let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 2.0, 4.0, 0.0, -1.0, -2.0, 0.0]);
            let t = LinearMap::on(space(3, p), m).unwrap();
            let f = f_k(&t, 2, Mode::Optimize, &opts).unwrap();
            assert_eq!(f.lo, 0.0);
            assert!(f.hi < 1e-12);
        }
    }

    #[test]
    fn polyhedral_operator_norms() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 3.0, 0.5]);
        let t1 = LinearMap::on(space(2, Exponent::ONE), m.clone()).unwrap();
        assert_eq!(t1.op_norm(), (4.0, 4.0));
        let ti = LinearMap::on(space(2, Exponent::INF), m).unwrap();
        assert_eq!(ti.op_norm(), (3.5, 3.5));
    }

    #[test]
    fn net_mode_brackets_and_refuses_large() {
        let opts = VolumeOptions {
            grid_budget: 2000,
            ..VolumeOptions::default()
        };
        let p3 = Exponent::new(3.0).unwrap();
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 0.0, 1.0, 0.5, 0.3, 0.0, 1.0]);
        let t = LinearMap::on(space(3, p3), m).unwrap();
        for k in 1..=2 {
            let net = d_k(&t, k, Mode::Net, &opts).unwrap();
            let opt = d_k(&t, k, Mode::Optimize, &opts).unwrap();
            assert!(
                net.lo <= net.hi
                    && opt.lo <= net.hi * (1.0 + 1e-9)
                    && net.lo <= opt.hi * (1.0 + 1e-9)
            );
        }
        let big = LinearMap::identity(space(5, p3));
        assert!(matches!(
            d_k(&big, 1, Mode::Net, &opts),
            Err(Error::NetUnavailable { .. })
        ));
    }

    #[test]
    fn restriction_reduces_domain() {
        let opts = VolumeOptions::default();
        let s = space(3, Exponent::TWO);
        let t = diag(&[4.0, 2.0, 1.0], Exponent::TWO);
        let v = Subspace::span(s, &[v(&[0.0, 1.0, 0.0]), v(&[0.0, 0.0, 1.0])]).unwrap();
        let r = t.restrict(&v).unwrap();
        assert!((d_k(&r, 2, Mode::EuclideanExact, &opts).unwrap().lo - 2.0).abs() < 1e-12);
        assert!((f_k(&r, 1, Mode::EuclideanExact, &opts).unwrap().lo - 2.0).abs() < 1e-12);
        assert!(d_k(&r, 3, Mode::Optimize, &opts).is_err());
    }
}
