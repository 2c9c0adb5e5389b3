//! Finite-dimensional l^p spaces: norms, best approximation, norming functionals,
//! annihilators and the gap metric on subspaces.
//!
//! Vectors and functionals are plain coordinate arrays; the `NormedSpace` they are
//! measured in decides the geometry. Functionals of a space are measured with the
//! dual exponent.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{
    binomial, combinations, null_space, orthogonal_complement, orthonormal_basis, rng_for,
    singular_values, solve_square, RANK_TOL,
};
use crate::lp;
use crate::optim::{gaussian_vec, multistart, SearchOptions};

/// A norm exponent in `[1, inf]`, with infinity represented exactly.
#[derive(Clone, Copy, Debug)]
pub struct Exponent(f64);

impl Exponent {
    pub const ONE: Exponent = Exponent(1.0);
    pub const TWO: Exponent = Exponent(2.0);
    pub const INF: Exponent = Exponent(f64::INFINITY);

    pub fn new(p: f64) -> Result<Self> {
        if p.is_nan() || p < 1.0 {
            return Err(Error::InvalidExponent(p));
        }
        Ok(Exponent(p))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_one(self) -> bool {
        self.0 == 1.0
    }

    pub fn is_two(self) -> bool {
        self.0 == 2.0
    }

    pub fn is_inf(self) -> bool {
        self.0.is_infinite()
    }

    /// l^1 and l^inf, whose unit balls are polytopes.
    pub fn is_polyhedral(self) -> bool {
        self.is_one() || self.is_inf()
    }

    /// Conjugate exponent `q` with `1/p + 1/q = 1`.
    pub fn dual(self) -> Exponent {
        if self.is_one() {
            Exponent::INF
        } else if self.is_inf() {
            Exponent::ONE
        } else if self.is_two() {
            Exponent::TWO
        } else {
            Exponent(self.0 / (self.0 - 1.0))
        }
    }

    /// `1/p`, zero for infinity.
    pub fn reciprocal(self) -> f64 {
        if self.is_inf() {
            0.0
        } else {
            1.0 / self.0
        }
    }
}

impl PartialEq for Exponent {
    fn eq(&self, other: &Self) -> bool {
        if self.is_inf() || other.is_inf() {
            return self.is_inf() && other.is_inf();
        }
        (self.0 - other.0).abs() <= 1e-12 * self.0.max(other.0)
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_inf() {
            write!(f, "inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl Serialize for Exponent {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_inf() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Exponent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        let p = match Raw::deserialize(d)? {
            Raw::Num(p) => p,
            Raw::Text(s) => match s.trim().to_ascii_lowercase().as_str() {
                "inf" | "infinity" => f64::INFINITY,
                other => other
                    .parse::<f64>()
                    .map_err(|_| serde::de::Error::custom(format!("invalid exponent {s:?}")))?,
            },
        };
        Exponent::new(p).map_err(serde::de::Error::custom)
    }
}

/// `R^dim` with the l^p norm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpace")]
pub struct NormedSpace {
    dim: usize,
    p: Exponent,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpace {
    dim: usize,
    p: Exponent,
}

impl TryFrom<RawSpace> for NormedSpace {
    type Error = Error;

    fn try_from(r: RawSpace) -> Result<Self> {
        NormedSpace::new(r.dim, r.p)
    }
}

impl NormedSpace {
    pub fn new(dim: usize, p: Exponent) -> Result<Self> {
        if dim == 0 {
            return Err(Error::EmptySpace);
        }
        Ok(NormedSpace { dim, p })
    }

    pub fn euclidean(dim: usize) -> Result<Self> {
        Self::new(dim, Exponent::TWO)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn p(&self) -> Exponent {
        self.p
    }

    /// The dual space, carrying the conjugate exponent.
    pub fn dual(&self) -> NormedSpace {
        NormedSpace {
            dim: self.dim,
            p: self.p.dual(),
        }
    }

    /// Constants `(a, b)` with `||x||_p <= a ||x||_2` and `||x||_2 <= b ||x||_p`.
    pub fn euclidean_constants(&self) -> (f64, f64) {
        let d = self.dim as f64;
        let r = self.p.reciprocal();
        (d.powf((r - 0.5).max(0.0)), d.powf((0.5 - r).max(0.0)))
    }

    pub fn check_vector(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vector"));
        }
        Ok(())
    }

    pub fn norm(&self, x: &DVector<f64>) -> f64 {
        lp_norm(self.p, x.as_slice())
    }

    /// Norm of a functional on this space, i.e. the conjugate-exponent norm.
    pub fn dual_norm(&self, theta: &DVector<f64>) -> f64 {
        lp_norm(self.p.dual(), theta.as_slice())
    }

    pub fn normalize(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        let n = self.norm(x);
        if n > 0.0 && n.is_finite() {
            Some(x / n)
        } else {
            None
        }
    }

    /// A functional of dual norm one with `theta(x) = ||x||`.
    pub fn norming_functional(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_vector(x)?;
        let n = self.norm(x);
        if n == 0.0 {
            return Err(Error::ZeroVector);
        }
        let p = self.p;
        let theta = if p.is_one() {
            x.map(|v| {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            })
        } else if p.is_inf() {
            let mut i_max = 0;
            for i in 1..x.len() {
                if x[i].abs() > x[i_max].abs() {
                    i_max = i;
                }
            }
            let mut t = DVector::zeros(x.len());
            t[i_max] = x[i_max].signum();
            t
        } else if p.is_two() {
            x / n
        } else {
            let e = p.value() - 1.0;
            x.map(|v| v.signum() * (v.abs() / n).powf(e))
        };
        Ok(theta)
    }

    /// Nearest point of `span(q)` to `x` for orthonormal `q`; returns (distance, point).
    pub fn nearest_point(&self, x: &DVector<f64>, q: &DMatrix<f64>) -> (f64, DVector<f64>) {
        let k = q.ncols();
        if k == 0 {
            return (self.norm(x), DVector::zeros(self.dim));
        }
        let p = self.p;
        if p.is_two() {
            let y = q * (q.transpose() * x);
            return (self.norm(&(x - &y)), y);
        }
        if p.is_polyhedral() {
            let (v, c) = if p.is_one() {
                lp::l1_fit(q, x)
            } else {
                lp::linf_fit(q, x)
            };
            return (v, q * c);
        }
        let s = self.norm(x);
        if s == 0.0 {
            return (0.0, DVector::zeros(self.dim));
        }
        let xs = x / s;
        let w = DVector::from_element(self.dim, 1.0);
        let c0 = q.transpose() * &xs;
        let c = power_fit(p.value(), q, &xs, &w, c0);
        let y = q * c;
        (self.norm(&(&xs - &y)) * s, y * s)
    }

    /// Enclosure `(lo, hi)` of `dist(x, span(q))`, `q` orthonormal. `hi` is attained by a
    /// point of the span; `lo` is the value of an annihilating functional of dual norm one.
    pub fn dist_enclosure(&self, x: &DVector<f64>, q: &DMatrix<f64>) -> (f64, f64) {
        let (hi, y) = self.nearest_point(x, q);
        if q.ncols() == 0 || self.p.is_two() || self.p.is_polyhedral() || hi == 0.0 {
            return (hi, hi);
        }
        let r = x - y;
        let Ok(raw) = self.norming_functional(&r) else {
            return (0.0, hi);
        };
        let theta = &raw - q * (q.transpose() * &raw);
        let n = self.dual_norm(&theta);
        if n == 0.0 {
            return (0.0, hi);
        }
        let lo = (theta.dot(x) / n).abs().min(hi);
        (lo, hi)
    }

    /// Distance from `x` to the span of the columns of `basis` (any rank).
    pub fn dist_to_span(&self, x: &DVector<f64>, basis: &DMatrix<f64>) -> f64 {
        let q = orthonormal_basis(basis, RANK_TOL);
        self.nearest_point(x, &q).0
    }

    pub fn dist_to_subspace(&self, x: &DVector<f64>, w: &Subspace) -> Result<f64> {
        self.check_vector(x)?;
        self.check_same(w.space())?;
        Ok(self.nearest_point(x, w.basis()).0)
    }

    /// Distance from `x` to the unit-ball section of `span(q)`, `q` orthonormal.
    pub fn dist_to_section(&self, x: &DVector<f64>, q: &DMatrix<f64>) -> f64 {
        if q.ncols() == 0 {
            return self.norm(x);
        }
        let (d0, y0) = self.nearest_point(x, q);
        let ny = self.norm(&y0);
        if ny <= 1.0 {
            return d0;
        }
        let p = self.p;
        if p.is_polyhedral() {
            return lp::section_distance(p.is_one(), q, x).min(self.norm(&(x - &y0 / ny)));
        }
        if p.is_two() {
            // Projection onto the disc of span(q) is radial from the orthogonal projection.
            let y = &y0 / ny;
            return self.norm(&(x - y));
        }
        // min ||x-y||^p + mu ||y||^p over y in span(q), with mu tuned until ||y|| = 1.
        let pv = p.value();
        let s = self.norm(x);
        let xs = x / s;
        let d = self.dim;
        let mut m = DMatrix::zeros(2 * d, q.ncols());
        m.view_mut((0, 0), (d, q.ncols())).copy_from(q);
        m.view_mut((d, 0), (d, q.ncols())).copy_from(q);
        let mut b = DVector::zeros(2 * d);
        b.rows_mut(0, d).copy_from(&xs);
        let solve = |mu: f64, c0: DVector<f64>| {
            let mut w = DVector::from_element(2 * d, 1.0);
            w.rows_mut(d, d).fill(mu);
            power_fit(pv, &m, &b, &w, c0)
        };
        let target = 1.0 / s;
        let mut c = q.transpose() * &xs;
        let mut hi = 1.0;
        let mut c_hi = solve(hi, c.clone());
        let mut guard = 0;
        while self.norm(&(q * &c_hi)) > target && guard < 60 {
            hi *= 4.0;
            c_hi = solve(hi, c_hi.clone());
            guard += 1;
        }
        let mut lo = 0.0;
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            c = solve(mid, c_hi.clone());
            if self.norm(&(q * &c)) > target {
                lo = mid;
            } else {
                hi = mid;
                c_hi = c.clone();
            }
            if hi - lo <= 1e-12 * hi {
                break;
            }
        }
        let mut y = q * c_hi;
        let ny = self.norm(&y) * s;
        if ny > 1.0 {
            y /= ny;
        }
        self.norm(&(&xs - y)) * s
    }

    /// Functional vanishing on `span(q)`, of dual norm one, with `theta(y) = dist(y, span(q))`.
    pub fn annihilating_functional(
        &self,
        y: &DVector<f64>,
        q: &DMatrix<f64>,
    ) -> Result<(DVector<f64>, f64)> {
        self.check_vector(y)?;
        let (dist, near) = self.nearest_point(y, q);
        if dist <= 1e-14 * self.norm(y).max(f64::MIN_POSITIVE) || dist == 0.0 {
            return Err(Error::ZeroVector);
        }
        let p = self.p;
        let raw = if p.is_polyhedral() && q.ncols() > 0 {
            match lp::annihilating_functional(p.is_one(), q, y) {
                Some(t) => t,
                None => return Err(Error::LinearProgram("functional".into())),
            }
        } else {
            self.norming_functional(&(y - near))?
        };
        let mut theta = &raw - q * (q.transpose() * &raw);
        let n = self.dual_norm(&theta);
        if n == 0.0 {
            return Err(Error::ZeroVector);
        }
        theta /= n;
        if theta.dot(y) < 0.0 {
            theta = -theta;
        }
        let value = theta.dot(y);
        Ok((theta, value))
    }

    fn check_same(&self, other: &NormedSpace) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        if self.p != other.p {
            return Err(Error::Precondition(format!(
                "exponents differ: {} vs {}",
                self.p, other.p
            )));
        }
        Ok(())
    }

    /// Vertices of the unit-ball section `span(q) ∩ B`, one per antipodal pair.
    /// `None` for non-polyhedral norms or when there are too many candidates.
    pub fn section_vertices(&self, q: &DMatrix<f64>) -> Option<Vec<DVector<f64>>> {
        let (d, k) = q.shape();
        if !self.p.is_polyhedral() {
            return None;
        }
        let mut out: Vec<DVector<f64>> = Vec::new();
        if k == 0 {
            return Some(out);
        }
        let push = |out: &mut Vec<DVector<f64>>, y: DVector<f64>| {
            // Canonical sign: first clearly nonzero entry positive.
            let lead = y.iter().find(|v| v.abs() > 1e-12).copied().unwrap_or(1.0);
            let y = if lead < 0.0 { -y } else { y };
            if !out.iter().any(|z| (z - &y).amax() < 1e-9) {
                out.push(y);
            }
        };
        if self.p.is_inf() {
            if binomial(d, k).saturating_mul(1 << (k - 1).min(30)) > 200_000 {
                return None;
            }
            for s in combinations(d, k) {
                let qs = DMatrix::from_fn(k, k, |i, j| q[(s[i], j)]);
                let lu = qs.lu();
                for mask in 0..(1usize << (k - 1)) {
                    let rhs = DVector::from_fn(k, |i, _| {
                        if i > 0 && mask & (1 << (i - 1)) != 0 {
                            -1.0
                        } else {
                            1.0
                        }
                    });
                    if let Some(c) = lu.solve(&rhs) {
                        if !c.iter().all(|v| v.is_finite()) {
                            continue;
                        }
                        let y = q * c;
                        if y.amax() <= 1.0 + 1e-9 {
                            push(&mut out, y);
                        }
                    }
                }
            }
        } else {
            if binomial(d, k - 1) > 200_000 {
                return None;
            }
            for z in combinations(d, k - 1) {
                let qz = DMatrix::from_fn(k - 1, k, |i, j| q[(z[i], j)]);
                let ns = null_space(&qz, 1e-9);
                if ns.ncols() != 1 {
                    continue;
                }
                let y = q * ns.column(0);
                let n = lp_norm(Exponent::ONE, y.as_slice());
                if n > 0.0 {
                    push(&mut out, y / n);
                }
            }
        }
        Some(out)
    }
}

/// The l^p norm of a slice, scaled to avoid overflow for large exponents.
pub fn lp_norm(p: Exponent, x: &[f64]) -> f64 {
    let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if p.is_inf() || m == 0.0 || !m.is_finite() {
        return m;
    }
    if p.is_one() {
        return x.iter().map(|v| v.abs()).sum();
    }
    if p.is_two() {
        return m * x.iter().map(|v| (v / m) * (v / m)).sum::<f64>().sqrt();
    }
    let pv = p.value();
    m * x
        .iter()
        .map(|v| (v.abs() / m).powf(pv))
        .sum::<f64>()
        .powf(1.0 / pv)
}

/// Newton's method for `min_c sum_i w_i |b_i - (M c)_i|^p` with `1 < p < inf`.
///
/// The kink of `|r|^p` at zero (for `p < 2`) stalls plain Newton, so the terms are
/// smoothed to `(r^2 + eps^2)^(p/2)` and `eps` is driven to zero with warm starts.
pub(crate) fn power_fit(
    p: f64,
    m: &DMatrix<f64>,
    b: &DVector<f64>,
    w: &DVector<f64>,
    c0: DVector<f64>,
) -> DVector<f64> {
    let k = m.ncols();
    let exact = |c: &DVector<f64>| -> f64 {
        let r = b - m * c;
        r.iter()
            .zip(w.iter())
            .map(|(ri, wi)| wi * ri.abs().powf(p))
            .sum()
    };
    let smooth = |c: &DVector<f64>, eps2: f64| -> f64 {
        let r = b - m * c;
        r.iter()
            .zip(w.iter())
            .map(|(ri, wi)| wi * (ri * ri + eps2).powf(0.5 * p))
            .sum()
    };
    let mut best_c = DVector::zeros(k);
    let mut best = exact(&best_c);
    let f0 = exact(&c0);
    if f0 < best {
        best = f0;
        best_c = c0.clone();
    }
    let scale = b.amax().max(f64::MIN_POSITIVE);
    let mut c = c0;
    let mut eps = if p < 2.0 { 1e-2 * scale } else { 0.0 };
    loop {
        let eps2 = eps * eps;
        let mut f = smooth(&c, eps2);
        for _ in 0..100 {
            let r = b - m * &c;
            let mut g = DVector::zeros(k);
            let mut h = DMatrix::zeros(k, k);
            for i in 0..r.len() {
                if w[i] == 0.0 {
                    continue;
                }
                let s2 = r[i] * r[i] + eps2;
                if s2 == 0.0 {
                    continue;
                }
                let gi = w[i] * p * r[i] * s2.powf(0.5 * p - 1.0);
                let hi = w[i] * p * s2.powf(0.5 * p - 2.0) * ((p - 1.0) * r[i] * r[i] + eps2);
                let row = m.row(i);
                for j in 0..k {
                    g[j] -= gi * row[j];
                    for l in 0..k {
                        h[(j, l)] += hi * row[j] * row[l];
                    }
                }
            }
            let tr = (0..k).map(|j| h[(j, j)]).sum::<f64>();
            let ridge = 1e-13 * tr.max(f64::MIN_POSITIVE);
            for j in 0..k {
                h[(j, j)] += ridge;
            }
            let step = solve_square(h, &(-&g)).unwrap_or_else(|| -&g);
            let slope = g.dot(&step);
            if slope >= 0.0 {
                break;
            }
            let mut t = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let trial = &c + &step * t;
                let ft = smooth(&trial, eps2);
                if ft <= f + 1e-4 * t * slope {
                    let gain = f - ft;
                    c = trial;
                    f = ft;
                    moved = gain > 1e-15 * f.max(f64::MIN_POSITIVE);
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
        }
        let fe = exact(&c);
        if fe < best {
            best = fe;
            best_c = c.clone();
        }
        if eps <= 1e-14 * scale {
            break;
        }
        eps *= 1e-2;
    }
    best_c
}

/// A linear subspace stored through an orthonormal (Euclidean) basis.
#[derive(Clone, Debug)]
pub struct Subspace {
    space: NormedSpace,
    basis: DMatrix<f64>,
}

impl Subspace {
    /// From a basis whose columns must be linearly independent.
    pub fn new(space: NormedSpace, basis: DMatrix<f64>) -> Result<Self> {
        if basis.nrows() != space.dim() {
            return Err(Error::DimensionMismatch {
                expected: space.dim(),
                found: basis.nrows(),
            });
        }
        if basis.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("basis"));
        }
        if basis.ncols() == 0 {
            return Ok(Self::zero(space));
        }
        let sv = singular_values(&basis);
        let smax = sv[0];
        let smin = if basis.ncols() > basis.nrows() {
            0.0
        } else {
            *sv.last().unwrap()
        };
        if smax == 0.0 || smin < RANK_TOL * smax {
            return Err(Error::RankDeficient {
                ratio: if smax > 0.0 { smin / smax } else { 0.0 },
            });
        }
        Ok(Subspace {
            space,
            basis: orthonormal_basis(&basis, RANK_TOL),
        })
    }

    /// Span of arbitrary columns; dependent directions are dropped.
    pub fn from_columns(space: NormedSpace, m: &DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), space.dim());
        Subspace {
            space,
            basis: orthonormal_basis(m, RANK_TOL),
        }
    }

    pub fn span(space: NormedSpace, vectors: &[DVector<f64>]) -> Result<Self> {
        for v in vectors {
            space.check_vector(v)?;
        }
        if vectors.is_empty() {
            return Ok(Self::zero(space));
        }
        Ok(Self::from_columns(space, &DMatrix::from_columns(vectors)))
    }

    pub fn zero(space: NormedSpace) -> Self {
        Subspace {
            space,
            basis: DMatrix::zeros(space.dim(), 0),
        }
    }

    pub fn full(space: NormedSpace) -> Self {
        Subspace {
            space,
            basis: DMatrix::identity(space.dim(), space.dim()),
        }
    }

    pub fn space(&self) -> &NormedSpace {
        &self.space
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn codim(&self) -> usize {
        self.space.dim() - self.dim()
    }

    pub fn vectors(&self) -> Vec<DVector<f64>> {
        self.basis.column_iter().map(|c| c.into_owned()).collect()
    }

    /// The same coordinates measured in another space of equal dimension.
    pub fn with_space(&self, space: NormedSpace) -> Result<Self> {
        if space.dim() != self.space.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.space.dim(),
                found: space.dim(),
            });
        }
        Ok(Subspace {
            space,
            basis: self.basis.clone(),
        })
    }

    /// Euclidean residual test `||x - Px||_2 <= tol ||x||_2`.
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        let r = x - &self.basis * (self.basis.transpose() * x);
        r.norm() <= tol * x.norm()
    }

    pub fn sum(&self, other: &Subspace) -> Result<Self> {
        self.space.check_same(&other.space)?;
        let mut m = DMatrix::zeros(self.space.dim(), self.dim() + other.dim());
        m.view_mut((0, 0), (self.space.dim(), self.dim()))
            .copy_from(&self.basis);
        m.view_mut((0, self.dim()), (self.space.dim(), other.dim()))
            .copy_from(&other.basis);
        Ok(Self::from_columns(self.space, &m))
    }

    /// Functionals (in the dual space) vanishing on this subspace.
    pub fn annihilator(&self) -> Subspace {
        Subspace {
            space: self.space.dual(),
            basis: orthogonal_complement(&self.basis),
        }
    }

    pub fn intersect(&self, other: &Subspace) -> Result<Subspace> {
        self.intersect_with_tol(other, RANK_TOL)
    }

    /// Intersection through the null space of `[Q_U, -Q_W]`; singular values below
    /// `tol * sigma_max` count as zero.
    pub fn intersect_with_tol(&self, other: &Subspace, tol: f64) -> Result<Subspace> {
        self.space.check_same(&other.space)?;
        let (ku, kw) = (self.dim(), other.dim());
        if ku == 0 || kw == 0 {
            return Ok(Self::zero(self.space));
        }
        let d = self.space.dim();
        let mut m = DMatrix::zeros(d, ku + kw);
        m.view_mut((0, 0), (d, ku)).copy_from(&self.basis);
        m.view_mut((0, ku), (d, kw)).copy_from(&(-&other.basis));
        let ns = null_space(&m, tol);
        if ns.ncols() == 0 {
            return Ok(Self::zero(self.space));
        }
        let vecs = &self.basis * ns.rows(0, ku);
        Ok(Self::from_columns(self.space, &vecs))
    }

    /// Hausdorff distance between the unit-ball sections of the two subspaces.
    pub fn grassmann_distance(&self, other: &Subspace) -> Result<f64> {
        self.space.check_same(&other.space)?;
        match (self.dim(), other.dim()) {
            (0, 0) => return Ok(0.0),
            (0, _) | (_, 0) => return Ok(1.0),
            _ => {}
        }
        let p = self.space.p();
        if p.is_two() {
            let a = &self.basis - &other.basis * (other.basis.transpose() * &self.basis);
            let b = &other.basis - &self.basis * (self.basis.transpose() * &other.basis);
            let ga = singular_values(&a)[0];
            let gb = singular_values(&b)[0];
            return Ok(ga.max(gb).min(1.0));
        }
        Ok(self
            .one_sided_gap(other)
            .max(other.one_sided_gap(self))
            .min(2.0))
    }

    /// `sup { dist(u, W ∩ B) : u in U, ||u|| = 1 }`.
    fn one_sided_gap(&self, other: &Subspace) -> f64 {
        let space = self.space;
        self.sup_on_sphere(|u| space.dist_to_section(u, &other.basis))
    }

    /// `sup { dist(u, W) : u in U, ||u|| = 1 }`, the relative distance of this subspace
    /// from `w`.
    pub fn gap_to(&self, w: &Subspace) -> Result<f64> {
        self.space.check_same(&w.space)?;
        if self.dim() == 0 {
            return Ok(0.0);
        }
        if w.dim() == 0 {
            return Ok(1.0);
        }
        if self.space.p().is_two() {
            let a = &self.basis - &w.basis * (w.basis.transpose() * &self.basis);
            return Ok(singular_values(&a)[0].min(1.0));
        }
        let space = self.space;
        Ok(self
            .sup_on_sphere(|u| space.dist_to_span(u, &w.basis))
            .min(1.0))
    }

    /// Maximum of a convex function over the unit sphere of this subspace: exact over the
    /// section vertices for polyhedral norms, multistart search otherwise.
    fn sup_on_sphere<F: Fn(&DVector<f64>) -> f64>(&self, f: F) -> f64 {
        let space = self.space;
        if let Some(vs) = space.section_vertices(&self.basis) {
            return vs.iter().map(&f).fold(0.0, f64::max);
        }
        let k = self.dim();
        let eval = |c: &[f64]| -> f64 {
            let u = &self.basis * DVector::from_column_slice(c);
            match space.normalize(&u) {
                Some(u) => f(&u),
                None => f64::NEG_INFINITY,
            }
        };
        let mut rng = rng_for(0x6a09e667, k as u64);
        let starts: Vec<Vec<f64>> = (0..32).map(|_| gaussian_vec(&mut rng, k)).collect();
        let opts = SearchOptions {
            max_evals: 300,
            initial_step: 0.25,
            min_step: 1e-8,
        };
        let mut best = multistart(eval, starts, &opts)
            .map(|(_, r)| r.value)
            .unwrap_or(0.0);
        if space.dim() <= 4 {
            let mut rng = rng_for(0xbb67ae85, k as u64);
            for _ in 0..10_000 {
                best = best.max(eval(&gaussian_vec(&mut rng, k)));
            }
        }
        best
    }

    /// A unit vector of this subspace as far as possible from `w`; returns (z, dist(z, w)).
    ///
    /// Requires `dim V > dim(V ∩ W)`. The distance reaches 1 whenever `dim V > dim W`.
    pub fn riesz_point(&self, w: &Subspace) -> Result<(DVector<f64>, f64)> {
        self.space.check_same(&w.space)?;
        let common = self.intersect(w)?;
        if self.dim() <= common.dim() {
            return Err(Error::Precondition(format!(
                "subspace of dimension {} lies inside the other ({} shared dimensions)",
                self.dim(),
                common.dim()
            )));
        }
        let space = self.space;
        if w.dim() == 0 {
            let z = space.normalize(&self.basis.column(0).into_owned()).unwrap();
            return Ok((z, 1.0));
        }
        let p = space.p();
        if p.is_two() {
            let a = &self.basis - &w.basis * (w.basis.transpose() * &self.basis);
            let svd = a.svd(false, true);
            let vt = svd.v_t.unwrap();
            let mut i_max = 0;
            for i in 1..svd.singular_values.len() {
                if svd.singular_values[i] > svd.singular_values[i_max] {
                    i_max = i;
                }
            }
            let z = &self.basis * vt.row(i_max).transpose();
            let z = space.normalize(&z).unwrap();
            let dist = space.nearest_point(&z, &w.basis).0;
            return Ok((z, dist));
        }
        let f = |z: &DVector<f64>| space.nearest_point(z, &w.basis).0;
        if let Some(vs) = space.section_vertices(&self.basis) {
            let mut best: Option<(DVector<f64>, f64)> = None;
            for v in vs {
                let val = f(&v);
                if best.as_ref().map_or(true, |b| val > b.1) {
                    best = Some((v, val));
                }
            }
            return best.ok_or(Error::Degenerate { k: self.dim() });
        }
        let k = self.dim();
        let eval = |c: &[f64]| -> f64 {
            let u = &self.basis * DVector::from_column_slice(c);
            match space.normalize(&u) {
                Some(u) => f(&u),
                None => f64::NEG_INFINITY,
            }
        };
        // Start from the Euclidean answer, then random directions.
        let euclid = self.with_space(NormedSpace::euclidean(space.dim())?)?;
        let (z2, _) = euclid.riesz_point(&w.with_space(euclid.space)?)?;
        let mut starts = vec![(self.basis.transpose() * z2).as_slice().to_vec()];
        let mut rng = rng_for(0x3c6ef372, k as u64);
        starts.extend((0..7).map(|_| gaussian_vec(&mut rng, k)));
        let (_, r) =
            multistart(eval, starts, &SearchOptions::default()).ok_or(Error::Degenerate { k })?;
        let z = space
            .normalize(&(&self.basis * DVector::from_vec(r.point)))
            .ok_or(Error::Degenerate { k })?;
        let dist = f(&z);
        Ok((z, dist))
    }
}

impl PartialEq for Subspace {
    /// Equal ambient space and the same span (projector difference below 1e-9).
    fn eq(&self, other: &Self) -> bool {
        if self.space != other.space || self.dim() != other.dim() {
            return false;
        }
        let pa = &self.basis * self.basis.transpose();
        let pb = &other.basis * other.basis.transpose();
        (pa - pb).amax() < 1e-9
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubspaceRepr {
    dim: usize,
    p: Exponent,
    k: usize,
    basis: Vec<Vec<f64>>,
}

impl Serialize for Subspace {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SubspaceRepr {
            dim: self.space.dim(),
            p: self.space.p(),
            k: self.dim(),
            basis: self
                .basis
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Subspace {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = SubspaceRepr::deserialize(d)?;
        let space = NormedSpace::new(r.dim, r.p).map_err(D::Error::custom)?;
        if r.basis.len() != r.dim || r.basis.iter().any(|row| row.len() != r.k) {
            return Err(D::Error::custom("basis shape does not match dim x k"));
        }
        let m = DMatrix::from_fn(r.dim, r.k, |i, j| r.basis[i][j]);
        Subspace::new(space, m).map_err(D::Error::custom)
    }
}

/// A point of the Grassmannian of subspaces with a fixed codimension.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GrassmannPoint {
    pub subspace: Subspace,
    pub codim: usize,
}

impl From<Subspace> for GrassmannPoint {
    fn from(subspace: Subspace) -> Self {
        let codim = subspace.codim();
        GrassmannPoint { subspace, codim }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sp(d: usize, p: Exponent) -> NormedSpace {
        NormedSpace::new(d, p).unwrap()
    }

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn span(s: NormedSpace, cols: &[&[f64]]) -> Subspace {
        Subspace::span(s, &cols.iter().map(|c| v(c)).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn norms_of_three_four() {
        assert_eq!(sp(2, Exponent::TWO).norm(&v(&[3.0, 4.0])), 5.0);
        assert_eq!(sp(2, Exponent::ONE).norm(&v(&[3.0, -4.0])), 7.0);
        assert_eq!(sp(2, Exponent::INF).norm(&v(&[3.0, -4.0])), 4.0);
        assert!(Exponent::new(0.5).is_err());
        assert!(NormedSpace::new(0, Exponent::TWO).is_err());
    }

    #[test]
    fn dual_exponents_pair_up() {
        assert!(Exponent::ONE.dual().is_inf());
        assert!(Exponent::INF.dual().is_one());
        let p = Exponent::new(3.0).unwrap();
        assert!((p.dual().value() - 1.5).abs() < 1e-15);
        assert_eq!(p.dual().dual(), p);
    }

    #[test]
    fn exponent_json_forms() {
        let s: NormedSpace = serde_json::from_str(r#"{"dim":3,"p":"inf"}"#).unwrap();
        assert!(s.p().is_inf());
        assert_eq!(serde_json::to_string(&s).unwrap(), r#"{"dim":3,"p":"inf"}"#);
        let s: NormedSpace = serde_json::from_str(r#"{"dim":2,"p":1.5}"#).unwrap();
        assert_eq!(s.p().value(), 1.5);
        assert!(serde_json::from_str::<NormedSpace>(r#"{"dim":2,"p":0.5}"#).is_err());
        assert!(serde_json::from_str::<NormedSpace>(r#"{"dim":2,"p":2,"q":1}"#).is_err());
    }

    #[test]
    fn distance_examples() {
        for p in [
            Exponent::ONE,
            Exponent::TWO,
            Exponent::INF,
            Exponent::new(3.0).unwrap(),
        ] {
            let s = sp(2, p);
            let w = span(s, &[&[1.0, 0.0]]);
            let d = s.dist_to_subspace(&v(&[1.0, 1.0]), &w).unwrap();
            assert!((d - 1.0).abs() < 1e-10, "p={p}: {d}");
            assert!(s.dist_to_subspace(&v(&[2.5, 0.0]), &w).unwrap() < 1e-12);
        }
        let s = sp(3, Exponent::TWO);
        assert!(s
            .dist_to_subspace(&v(&[1.0, 1.0]), &Subspace::zero(sp(2, Exponent::TWO)))
            .is_err());
    }

    #[test]
    fn general_exponent_distance_matches_scan() {
        // One-parameter problem: scan the coefficient finely as an oracle.
        let s = sp(2, Exponent::new(1.5).unwrap());
        let w = span(s, &[&[1.0, 2.0]]);
        let x = v(&[1.0, -0.3]);
        let d = s.dist_to_subspace(&x, &w).unwrap();
        let dir = v(&[1.0, 2.0]);
        let scan = (-200_000..200_000)
            .map(|i| s.norm(&(&x - &dir * (i as f64 * 1e-5))))
            .fold(f64::INFINITY, f64::min);
        assert!(d <= scan + 1e-12 && scan - d < 1e-8, "{d} vs {scan}");
    }

    #[test]
    fn norming_functional_examples() {
        let s = sp(2, Exponent::TWO);
        let t = s.norming_functional(&v(&[3.0, 4.0])).unwrap();
        assert!((t - v(&[0.6, 0.8])).amax() < 1e-15);
        let s1 = sp(2, Exponent::ONE);
        let x = v(&[3.0, -4.0]);
        let t = s1.norming_functional(&x).unwrap();
        assert_eq!(t, v(&[1.0, -1.0]));
        assert_eq!(s1.dual_norm(&t), 1.0);
        assert_eq!(t.dot(&x), 7.0);
        for p in [
            Exponent::ONE,
            Exponent::TWO,
            Exponent::INF,
            Exponent::new(4.0).unwrap(),
        ] {
            let s = sp(3, p);
            assert_eq!(
                s.norming_functional(&v(&[1.0, 0.0, 0.0])).unwrap(),
                v(&[1.0, 0.0, 0.0])
            );
            assert!(s.norming_functional(&v(&[0.0, 0.0, 0.0])).is_err());
        }
        // Ties in l^inf go to the lowest index.
        let si = sp(3, Exponent::INF);
        assert_eq!(
            si.norming_functional(&v(&[-2.0, 2.0, 1.0])).unwrap(),
            v(&[-1.0, 0.0, 0.0])
        );
    }

    #[test]
    fn annihilator_examples() {
        let s = sp(2, Exponent::ONE);
        let a = span(s, &[&[1.0, 0.0]]).annihilator();
        assert!(a.space().p().is_inf());
        assert_eq!(a, span(s.dual(), &[&[0.0, 1.0]]));
        let a = span(s, &[&[1.0, 1.0]]).annihilator();
        assert_eq!(a, span(s.dual(), &[&[1.0, -1.0]]));
        assert_eq!(Subspace::full(s).annihilator().dim(), 0);
        let w = span(s, &[&[1.0, 2.0]]);
        assert_eq!(w.annihilator().annihilator(), w);
    }

    #[test]
    fn intersection_examples() {
        let s = sp(3, Exponent::TWO);
        let e = |i: usize| {
            let mut x = [0.0; 3];
            x[i] = 1.0;
            x
        };
        let u = span(s, &[&e(0), &e(1)]);
        let w = span(s, &[&e(1), &e(2)]);
        assert_eq!(u.intersect(&w).unwrap(), span(s, &[&e(1)]));
        let s2 = sp(2, Exponent::TWO);
        assert_eq!(
            span(s2, &[&[1.0, 0.0]])
                .intersect(&span(s2, &[&[0.0, 1.0]]))
                .unwrap()
                .dim(),
            0
        );
        let u = span(s, &[&[1.0, 1.0, 0.0], &[1.0, 0.0, 0.0]]);
        let w = span(s, &[&[1.0, 1.0, 0.0], &[0.0, 1.0, 0.0]]);
        // Both are the xy-plane, so the intersection is the whole plane.
        assert_eq!(u.intersect(&w).unwrap().dim(), 2);
        let w = span(s, &[&[1.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        assert_eq!(u.intersect(&w).unwrap(), span(s, &[&[1.0, 1.0, 0.0]]));
    }

    #[test]
    fn grassmann_examples() {
        let s = sp(2, Exponent::TWO);
        let e1 = span(s, &[&[1.0, 0.0]]);
        let e2 = span(s, &[&[0.0, 1.0]]);
        assert_eq!(e1.grassmann_distance(&e1).unwrap(), 0.0);
        assert!((e1.grassmann_distance(&e2).unwrap() - 1.0).abs() < 1e-15);
        let a = 30f64.to_radians();
        let l = span(s, &[&[a.cos(), a.sin()]]);
        assert!((e1.grassmann_distance(&l).unwrap() - 0.5).abs() < 1e-12);
    }

    /// Brute force over a fine discretization of both unit-ball sections.
    fn brute_gap(s: NormedSpace, u: &DVector<f64>, w: &DVector<f64>) -> f64 {
        let pts = |dir: &DVector<f64>| -> Vec<DVector<f64>> {
            let n = s.norm(dir);
            (-2000..=2000)
                .map(|i| dir * (i as f64 / 2000.0 / n))
                .collect()
        };
        let (pu, pw) = (pts(u), pts(w));
        let side = |a: &[DVector<f64>], b: &[DVector<f64>]| {
            a.iter()
                .map(|x| {
                    b.iter()
                        .map(|y| s.norm(&(x - y)))
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(0.0, f64::max)
        };
        side(&pu, &pw).max(side(&pw, &pu))
    }

    #[test]
    fn grassmann_lines_match_brute_force() {
        let u = v(&[1.0, 0.3]);
        let w = v(&[0.2, 1.0]);
        for p in [
            Exponent::ONE,
            Exponent::TWO,
            Exponent::INF,
            Exponent::new(3.0).unwrap(),
        ] {
            let s = sp(2, p);
            let g = Subspace::span(s, &[u.clone()])
                .unwrap()
                .grassmann_distance(&Subspace::span(s, &[w.clone()]).unwrap())
                .unwrap();
            let b = brute_gap(s, &u, &w);
            assert!((g - b).abs() < 2e-3, "p={p}: {g} vs {b}");
        }
    }

    #[test]
    fn riesz_examples() {
        let s = sp(2, Exponent::TWO);
        let (z, d) = Subspace::full(s)
            .riesz_point(&span(s, &[&[1.0, 0.0]]))
            .unwrap();
        assert!(z[0].abs() < 1e-12 && (z[1].abs() - 1.0).abs() < 1e-12);
        assert!((d - 1.0).abs() < 1e-12);
        let (_, d) = Subspace::full(s).riesz_point(&Subspace::zero(s)).unwrap();
        assert_eq!(d, 1.0);
        let e1 = span(s, &[&[1.0, 0.0]]);
        assert!(e1.riesz_point(&e1).is_err());
        for p in [Exponent::ONE, Exponent::INF, Exponent::new(3.0).unwrap()] {
            let s = sp(3, p);
            let w = span(s, &[&[1.0, 2.0, -1.0]]);
            let vsp = span(s, &[&[1.0, 0.0, 1.0], &[0.0, 1.0, 1.0]]);
            let (z, d) = vsp.riesz_point(&w).unwrap();
            assert!((s.norm(&z) - 1.0).abs() < 1e-12 && vsp.contains(&z, 1e-12));
            assert!(d >= 1.0 - 1e-6, "p={p}: {d}");
        }
    }

    #[test]
    fn section_vertices_of_full_balls() {
        let s = sp(3, Exponent::INF);
        assert_eq!(
            s.section_vertices(&DMatrix::identity(3, 3)).unwrap().len(),
            4
        );
        let s = sp(3, Exponent::ONE);
        assert_eq!(
            s.section_vertices(&DMatrix::identity(3, 3)).unwrap().len(),
            3
        );
    }

    #[test]
    fn annihilating_functional_norms_residual() {
        for p in [
            Exponent::ONE,
            Exponent::TWO,
            Exponent::INF,
            Exponent::new(1.5).unwrap(),
        ] {
            let s = sp(3, p);
            let w = span(s, &[&[1.0, 1.0, 0.0]]);
            let y = v(&[0.3, -1.0, 2.0]);
            let (t, val) = s.annihilating_functional(&y, w.basis()).unwrap();
            let dist = s.dist_to_subspace(&y, &w).unwrap();
            assert!((s.dual_norm(&t) - 1.0).abs() < 1e-12);
            assert!((val - dist).abs() < 1e-8 * dist, "p={p}: {val} vs {dist}");
            assert!((w.basis().transpose() * &t).amax() < 1e-12);
        }
    }

    #[test]
    fn section_distance_general_exponent() {
        let s = sp(2, Exponent::new(3.0).unwrap());
        let q = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let d = s.dist_to_section(&v(&[3.0, 1.0]), &q);
        let expect = s.norm(&v(&[2.0, 1.0]));
        assert!((d - expect).abs() < 1e-8, "{d} vs {expect}");
    }
}
