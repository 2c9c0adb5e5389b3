//! Oseledets filtrations and splittings from consistent sequences of long products.
//!
//! The slow space of level `l` at the base point is approximated by the common kernel of
//! `theta_i o L^(n)` for the first `d_{l-1}` consistent functionals of the renormalized
//! product `L^(n)`. The fast spaces come from the same construction applied to the
//! adjoint cocycle over the reversed orbit.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cocycle::{
    cocycle_product, cocycle_products_at, dual_cocycle, extrapolate, products_table, Generator,
    GradedProduct, ScaledProduct, SpectrumOptions, SpectrumReport, Trajectory,
};
use crate::consistent::{build_with, ConsistentOptions};
use crate::error::{Error, Result};
use crate::linalg::{column_matrix, linear_fit, orthogonal_complement, rng_for, singular_values};
use crate::serde_ext::{float, floats};
use crate::space::{NormedSpace, Subspace};
use crate::volume::{LinearMap, Mode};

/// Distinct exponents `lambda_1 > lambda_2 > ...` with multiplicities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentGroups {
    #[serde(with = "floats")]
    pub lambdas: Vec<f64>,
    pub mults: Vec<usize>,
    /// Standard error of each group mean.
    #[serde(with = "floats")]
    pub ses: Vec<f64>,
}

impl ExponentGroups {
    pub fn r(&self) -> usize {
        self.lambdas.len()
    }

    /// `m_1 + ... + m_l` (zero for `l = 0`).
    pub fn cumulative(&self, l: usize) -> usize {
        self.mults[..l.min(self.mults.len())].iter().sum()
    }

    pub fn total(&self) -> usize {
        self.mults.iter().sum()
    }

    /// Smallest gap between consecutive finite exponents (`inf` with fewer than two).
    pub fn min_gap(&self) -> f64 {
        self.lambdas
            .windows(2)
            .map(|w| w[0] - w[1])
            .filter(|g| g.is_finite())
            .fold(f64::INFINITY, f64::min)
    }

    /// Default rate slack: a tenth of the smallest gap, or 0.1 for a single exponent.
    pub fn default_epsilon(&self) -> f64 {
        let g = self.min_gap();
        if g.is_finite() {
            0.1 * g
        } else {
            0.1
        }
    }
}

/// Clusters `mu_1 >= mu_2 >= ...` into distinct exponents; consecutive values closer than
/// `gap_threshold` merge.
pub fn group_exponents(report: &SpectrumReport, gap_threshold: f64) -> ExponentGroups {
    group_values(&report.mus(), &report.mu_ses(), gap_threshold)
}

pub fn group_values(mus: &[f64], ses: &[f64], gap_threshold: f64) -> ExponentGroups {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (k, &mu) in mus.iter().enumerate() {
        let joins = groups.last().map_or(false, |g| {
            let prev = mus[*g.last().unwrap()];
            (prev == f64::NEG_INFINITY && mu == f64::NEG_INFINITY)
                || (prev - mu).abs() < gap_threshold
        });
        if joins {
            groups.last_mut().unwrap().push(k);
        } else {
            groups.push(vec![k]);
        }
    }
    let mut out = ExponentGroups {
        lambdas: Vec::new(),
        mults: Vec::new(),
        ses: Vec::new(),
    };
    for g in groups {
        let m = g.len() as f64;
        let lambda = if mus[g[0]] == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            g.iter().map(|&k| mus[k]).sum::<f64>() / m
        };
        let se = (g
            .iter()
            .map(|&k| ses.get(k).copied().unwrap_or(0.0).powi(2))
            .sum::<f64>())
        .sqrt()
            / m;
        out.lambdas.push(lambda);
        out.mults.push(g.len());
        out.ses.push(se);
    }
    out
}

/// Longest product whose slow spaces up to `level` stay resolvable in floating point: the
/// ratio of the needed singular values, about `exp(-n (lambda_1 - lambda_{level-1}))`, must
/// stay above `exp(-nats)`. `None` when no bound applies.
pub fn resolvable_length(groups: &ExponentGroups, level: usize, nats: f64) -> Option<usize> {
    if level < 3 {
        return None;
    }
    let spread = groups.lambdas[0] - groups.lambdas[(level - 2).min(groups.r() - 1)];
    if spread > 0.0 && spread.is_finite() {
        Some(((nats / spread).floor() as usize).max(1))
    } else {
        None
    }
}

/// Levels with a slow space: `1..=r`, plus `r + 1` when the exponents do not cover the space.
pub fn level_count(groups: &ExponentGroups, dim: usize) -> usize {
    if groups.total() < dim {
        groups.r() + 1
    } else {
        groups.r()
    }
}

fn check_level(groups: &ExponentGroups, dim: usize, level: usize) -> Result<()> {
    if level == 0 || level > level_count(groups, dim) {
        return Err(Error::NoSuchLevel {
            level,
            r: groups.r(),
        });
    }
    Ok(())
}

/// Consistent-sequence data of one product: the pulled-back functionals `theta_i o M` and
/// the consistent vectors.
struct SlowData {
    functionals: Vec<DVector<f64>>,
    xs: Vec<DVector<f64>>,
}

fn slow_data(
    space: &NormedSpace,
    p: &ScaledProduct,
    k: usize,
    opts: &ConsistentOptions,
) -> Result<SlowData> {
    if k == 0 {
        return Ok(SlowData {
            functionals: Vec::new(),
            xs: Vec::new(),
        });
    }
    if p.is_zero() {
        return Err(Error::Degenerate { k: 1 });
    }
    let t = LinearMap::on(*space, p.matrix.clone())?;
    let seq = build_with(&t, k, opts)?;
    if let Some(k) = seq.degenerate_at {
        return Err(Error::Degenerate { k });
    }
    let mt = p.matrix.transpose();
    // Each pulled-back functional is normalized on its own; they stay well separated
    // because the i-th one vanishes on the earlier consistent vectors.
    let functionals = seq
        .thetas
        .iter()
        .map(|th| {
            let f = &mt * th;
            let n = f.norm();
            if n > 0.0 {
                Ok(f / n)
            } else {
                Err(Error::Degenerate { k })
            }
        })
        .collect::<Result<_>>()?;
    Ok(SlowData {
        functionals,
        xs: seq.xs,
    })
}

fn slow_from(space: &NormedSpace, data: &SlowData, codim: usize) -> Subspace {
    if codim == 0 {
        return Subspace::full(*space);
    }
    Subspace::from_columns(
        space.dual(),
        &column_matrix(space.dim(), &data.functionals[..codim]),
    )
    .annihilator()
}

/// The slow space of `level` for the product of length `n` starting at `start`.
pub fn approximate_slow_space_at(
    gen: &Generator,
    traj: &Trajectory,
    start: i64,
    n: usize,
    level: usize,
    groups: &ExponentGroups,
    opts: &ConsistentOptions,
) -> Result<Subspace> {
    check_level(groups, gen.dim(), level)?;
    let codim = groups.cumulative(level - 1);
    let p = cocycle_product(gen, traj, start, n)?;
    let data = slow_data(gen.space(), &p, codim, opts)?;
    Ok(slow_from(gen.space(), &data, codim))
}

/// Approximate slow space of `level` at the base point from the product of length `n`.
pub fn approximate_slow_space(
    gen: &Generator,
    traj: &Trajectory,
    n: usize,
    level: usize,
    groups: &ExponentGroups,
) -> Result<Subspace> {
    approximate_slow_space_at(
        gen,
        traj,
        0,
        n,
        level,
        groups,
        &FiltrationParams::default().consistent,
    )
}

/// `sup` over unit vectors `y` of `L_{start}(V)` of `dist(y, W)`, where `V` sits at the
/// point `start` and `W` at `start + 1`.
pub fn equivariance_residual(
    gen: &Generator,
    traj: &Trajectory,
    start: i64,
    here: &Subspace,
    next: &Subspace,
) -> Result<f64> {
    if here.codim() != next.codim() {
        return Err(Error::DimensionMismatch {
            expected: here.codim(),
            found: next.codim(),
        });
    }
    let p = cocycle_product(gen, traj, start, 1)?;
    let image = Subspace::from_columns(*gen.space(), &(&p.matrix * here.basis()));
    image.gap_to(next)
}

/// Growth of one vector along the orbit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthRate {
    /// Extrapolated limit of `(1/n) log ||L^(n) v||`.
    #[serde(with = "float")]
    pub rate: f64,
    #[serde(with = "float")]
    pub se: f64,
    /// `(1/n) log ||L^(n) v||` at each grid point.
    #[serde(with = "floats")]
    pub values: Vec<f64>,
    /// First step after which the vector is mapped to zero.
    pub zero_at: Option<usize>,
}

/// `log ||L^(n) v|| - log ||v||` at each `n` of an increasing grid.
fn log_growth(
    gen: &Generator,
    traj: &Trajectory,
    v: &DVector<f64>,
    n_grid: &[usize],
) -> Result<(Vec<f64>, Option<usize>)> {
    let space = gen.space();
    let mut y = space.normalize(v).ok_or(Error::ZeroVector)?;
    let n_max = n_grid.last().copied().unwrap_or(0);
    traj.check_window(0, n_max)?;
    let mut acc = 0.0;
    let mut zero_at = None;
    let mut out = Vec::with_capacity(n_grid.len());
    let mut gi = 0;
    for step in 0..=n_max {
        while gi < n_grid.len() && n_grid[gi] == step {
            out.push(acc);
            gi += 1;
        }
        if step == n_max {
            break;
        }
        if zero_at.is_none() {
            let s = traj.symbol(step as i64).expect("window checked");
            y = &gen.matrices()[s] * &y;
            let nrm = space.norm(&y);
            if nrm == 0.0 {
                zero_at = Some(step + 1);
                acc = f64::NEG_INFINITY;
            } else {
                acc += nrm.ln();
                y /= nrm;
            }
        }
    }
    Ok((out, zero_at))
}

pub fn growth_rate(
    gen: &Generator,
    traj: &Trajectory,
    v: &DVector<f64>,
    n_grid: &[usize],
) -> Result<GrowthRate> {
    gen.space().check_vector(v)?;
    if n_grid.is_empty() || n_grid[0] == 0 || n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition(
            "n_grid must be a non-empty strictly increasing list of positive lengths".into(),
        ));
    }
    let (logs, zero_at) = log_growth(gen, traj, v, n_grid)?;
    let values: Vec<f64> = logs
        .iter()
        .zip(n_grid)
        .map(|(l, &n)| l / n as f64)
        .collect();
    let (rate, se) = if zero_at.is_some() {
        (f64::NEG_INFINITY, 0.0)
    } else {
        extrapolate(n_grid, &values)
    };
    Ok(GrowthRate {
        rate,
        se,
        values,
        zero_at,
    })
}

#[derive(Clone, Debug)]
pub struct FiltrationParams {
    /// Product lengths for the approximate slow spaces; the last one defines the limit.
    pub n_grid: Vec<usize>,
    /// Lengths for growth measurements (defaults to the grid values up to half its maximum).
    pub growth_grid: Option<Vec<usize>>,
    /// Rate slack; defaults to a tenth of the smallest exponent gap.
    pub epsilon: Option<f64>,
    /// A level passes the Cauchy check when its decay slope is at most `-(gap - margin)`.
    pub slope_margin: f64,
    /// Distances below this are treated as converged when fitting decay slopes.
    pub distance_floor: f64,
    pub consistent: ConsistentOptions,
}

impl Default for FiltrationParams {
    fn default() -> Self {
        FiltrationParams {
            n_grid: (1..=20).collect(),
            growth_grid: None,
            epsilon: None,
            slope_margin: 0.2,
            distance_floor: 1e-11,
            consistent: ConsistentOptions {
                grid_budget: 2_000,
                ..ConsistentOptions::default()
            },
        }
    }
}

impl FiltrationParams {
    pub fn with_grid(n_grid: Vec<usize>) -> Self {
        FiltrationParams {
            n_grid,
            ..Self::default()
        }
    }

    fn growth_grid(&self) -> Vec<usize> {
        if let Some(g) = &self.growth_grid {
            return g.clone();
        }
        let n_max = self.n_grid.last().copied().unwrap_or(1);
        let g: Vec<usize> = self
            .n_grid
            .iter()
            .copied()
            .filter(|&n| 2 * n <= n_max)
            .collect();
        if g.is_empty() {
            vec![n_max]
        } else {
            g
        }
    }

    fn validate(&self) -> Result<()> {
        let g = &self.n_grid;
        if g.is_empty() || g[0] == 0 || g.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Precondition(
                "n_grid must be a non-empty strictly increasing list of positive lengths".into(),
            ));
        }
        Ok(())
    }
}

/// Growth check for vectors of `V_l` kept away from `V_{l+1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthProbe {
    /// `dist(v, V_{l+1})` of the probe vector.
    #[serde(with = "float")]
    pub distance: f64,
    pub rate: GrowthRate,
    /// First grid length from which `||L^(n) v|| >= a exp((lambda_l - eps) n)` holds on.
    pub lower_bound_from: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelFiltration {
    pub level: usize,
    pub codim: usize,
    /// Exponent of the level (`nan` for a tail level beyond the estimated exponents).
    #[serde(with = "float")]
    pub lambda: f64,
    /// `lambda_{l-1} - lambda_l` (`inf` for the first level).
    #[serde(with = "float")]
    pub gap: f64,
    /// Slow spaces, one per grid length.
    pub spaces: Vec<Subspace>,
    /// Spans of the first `d_l` consistent vectors, one per grid length.
    pub fast: Vec<Subspace>,
    /// Distances between slow spaces at consecutive grid lengths.
    #[serde(with = "floats")]
    pub cauchy: Vec<f64>,
    /// Equivariance residual of each slow space against the one at the next base point.
    #[serde(with = "floats")]
    pub equivariance: Vec<f64>,
    /// Slope of `log cauchy` against `n` (`-inf` when the spaces agree to rounding).
    #[serde(with = "float")]
    pub cauchy_slope: f64,
    #[serde(with = "float")]
    pub final_step: f64,
    pub cauchy_ok: bool,
    pub limit: Subspace,
    pub probe: Option<GrowthProbe>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproxFiltration {
    pub n_grid: Vec<usize>,
    pub groups: ExponentGroups,
    #[serde(with = "float")]
    pub epsilon: f64,
    pub levels: Vec<LevelFiltration>,
    /// Largest Euclidean residual of a basis vector of `V_{l+1}` against `V_l`.
    #[serde(with = "float")]
    pub nesting_residual: f64,
}

impl ApproxFiltration {
    pub fn limit(&self, level: usize) -> Option<&Subspace> {
        self.levels.get(level.checked_sub(1)?).map(|l| &l.limit)
    }

    pub fn r(&self) -> usize {
        self.groups.r()
    }
}

fn decay_slope(ns: &[usize], dists: &[f64], floor: f64) -> f64 {
    let (x, y): (Vec<f64>, Vec<f64>) = ns
        .iter()
        .zip(dists)
        .filter(|(_, &d)| d > floor)
        .map(|(&n, &d)| (n as f64, d.ln()))
        .unzip();
    if x.len() < 2 {
        return f64::NEG_INFINITY;
    }
    linear_fit(&x, &y).1
}

fn nesting_residual(outer: &Subspace, inner: &Subspace) -> f64 {
    let q = outer.basis();
    inner
        .vectors()
        .iter()
        .map(|v| (v - q * (q.transpose() * v)).norm())
        .fold(0.0, f64::max)
}

/// Approximate filtration at the base point over the length grid.
pub fn filtration(
    gen: &Generator,
    traj: &Trajectory,
    groups: &ExponentGroups,
    params: &FiltrationParams,
) -> Result<ApproxFiltration> {
    params.validate()?;
    let space = gen.space();
    let dim = gen.dim();
    let n_levels = level_count(groups, dim);
    let need = groups.cumulative(n_levels - 1);
    let epsilon = params.epsilon.unwrap_or_else(|| groups.default_epsilon());
    let grid = &params.n_grid;

    let here = cocycle_products_at(gen, traj, 0, grid)?;
    let next = cocycle_products_at(gen, traj, 1, grid)?;
    let build = |ps: &[ScaledProduct]| -> Result<Vec<SlowData>> {
        use rayon::prelude::*;
        ps.par_iter()
            .map(|p| slow_data(space, p, need, &params.consistent))
            .collect()
    };
    let data_here = build(&here)?;
    let data_next = build(&next)?;

    let growth_grid = params.growth_grid();
    let mut levels: Vec<LevelFiltration> = Vec::with_capacity(n_levels);
    let mut nesting = 0.0f64;
    for level in 1..=n_levels {
        let codim = groups.cumulative(level - 1);
        let fast_dim = groups.cumulative(level).min(need);
        let spaces: Vec<Subspace> = data_here
            .iter()
            .map(|d| slow_from(space, d, codim))
            .collect();
        let fast: Vec<Subspace> = data_here
            .iter()
            .map(|d| Subspace::from_columns(*space, &column_matrix(dim, &d.xs[..fast_dim])))
            .collect();
        let mut equivariance = Vec::with_capacity(grid.len());
        for (s, d) in spaces.iter().zip(&data_next) {
            let w = slow_from(space, d, codim);
            equivariance.push(equivariance_residual(gen, traj, 0, s, &w)?);
        }
        let cauchy: Vec<f64> = spaces
            .windows(2)
            .map(|w| w[0].grassmann_distance(&w[1]))
            .collect::<Result<_>>()?;
        let cauchy_slope = decay_slope(&grid[..grid.len() - 1], &cauchy, params.distance_floor);
        let lambda = groups.lambdas.get(level - 1).copied().unwrap_or(f64::NAN);
        let gap = if level == 1 {
            f64::INFINITY
        } else {
            groups.lambdas[level - 2] - lambda
        };
        let cauchy_ok =
            level == 1 || !gap.is_finite() || cauchy_slope <= -(gap - params.slope_margin);
        if let Some(prev) = levels.last() {
            nesting = nesting.max(nesting_residual(&prev.limit, spaces.last().unwrap()));
            for (o, i) in prev.spaces.iter().zip(&spaces) {
                nesting = nesting.max(nesting_residual(o, i));
            }
        }
        levels.push(LevelFiltration {
            level,
            codim,
            lambda,
            gap,
            final_step: cauchy.last().copied().unwrap_or(0.0),
            limit: spaces.last().unwrap().clone(),
            spaces,
            fast,
            cauchy,
            equivariance,
            cauchy_slope,
            cauchy_ok,
            probe: None,
        });
    }
    // Probe each level with a vector of V_l as far as possible from V_{l+1}.
    for l in 0..levels.len() {
        let lambda = levels[l].lambda;
        if !lambda.is_finite() {
            continue;
        }
        let inner = levels
            .get(l + 1)
            .map(|n| n.limit.clone())
            .unwrap_or_else(|| Subspace::zero(*space));
        let outer = &levels[l].limit;
        let (v, distance) = match outer.riesz_point(&inner) {
            Ok(x) => x,
            Err(_) => continue,
        };
        let rate = growth_rate(gen, traj, &v, &growth_grid)?;
        let (logs, _) = log_growth(gen, traj, &v, &growth_grid)?;
        let mut lower_bound_from = None;
        for (i, &n) in growth_grid.iter().enumerate().rev() {
            if logs[i] >= (lambda - epsilon) * n as f64 + distance.ln() {
                lower_bound_from = Some(n);
            } else {
                break;
            }
        }
        levels[l].probe = Some(GrowthProbe {
            distance,
            rate,
            lower_bound_from,
        });
    }
    Ok(ApproxFiltration {
        n_grid: grid.clone(),
        groups: groups.clone(),
        epsilon,
        levels,
        nesting_residual: nesting,
    })
}

/// The splitting into equivariant blocks `Z_l = Y_{l+1} ∩ V_l` plus the tail `V_{r+1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Splitting {
    pub blocks: Vec<Subspace>,
    pub tail: Subspace,
    #[serde(with = "floats")]
    pub lambdas: Vec<f64>,
    /// Forward growth rate measured on each block.
    #[serde(with = "floats")]
    pub block_rates: Vec<f64>,
    /// Slow spaces of the adjoint cocycle, levels `1..`.
    pub dual_slow: Vec<Subspace>,
    /// Annihilators of the adjoint slow spaces: `Y_1 = {0}, Y_2, ...`.
    pub fast: Vec<Subspace>,
    /// Smallest singular value of the stacked orthonormal block bases.
    #[serde(with = "float")]
    pub min_singular: f64,
    /// `grassmann_distance(Z_l + V_{l+1}, V_l)` per block.
    #[serde(with = "floats")]
    pub exactness: Vec<f64>,
    /// Distance between `Y_{l+1}` and the images of the leading consistent vectors of the
    /// past product, per block.
    #[serde(with = "floats")]
    pub duality_check: Vec<f64>,
    pub primal: ApproxFiltration,
    pub dual: ApproxFiltration,
}

/// Smallest singular value the stacked block bases may have.
pub const DIRECT_SUM_TOL: f64 = 1e-8;

pub fn splitting(
    gen: &Generator,
    traj: &Trajectory,
    groups: &ExponentGroups,
    params: &FiltrationParams,
) -> Result<Splitting> {
    let (dgen, dtraj) = dual_cocycle(gen, traj)?;
    let primal = filtration(gen, traj, groups, params)?;
    let dual = filtration(&dgen, &dtraj, groups, params)?;
    let space = *gen.space();
    let dim = gen.dim();
    let r = groups.r();

    let dual_slow: Vec<Subspace> = dual.levels.iter().map(|l| l.limit.clone()).collect();
    let mut fast: Vec<Subspace> = Vec::with_capacity(r + 1);
    for l in 1..=r + 1 {
        let y = match dual_slow.get(l - 1) {
            Some(v) => v.annihilator().with_space(space)?,
            None => Subspace::full(space),
        };
        fast.push(y);
    }
    let slow = |l: usize| -> Subspace {
        primal
            .limit(l)
            .cloned()
            .unwrap_or_else(|| Subspace::zero(space))
    };
    let mut blocks = Vec::with_capacity(r);
    let mut exactness = Vec::with_capacity(r);
    for l in 1..=r {
        let z = fast[l].intersect(&slow(l))?;
        exactness.push(z.sum(&slow(l + 1))?.grassmann_distance(&slow(l))?);
        blocks.push(z);
    }
    let tail = slow(r + 1);

    let mut stacked: Vec<DVector<f64>> = blocks.iter().flat_map(|b| b.vectors()).collect();
    stacked.extend(tail.vectors());
    let min_singular = if stacked.len() == dim {
        singular_values(&column_matrix(dim, &stacked))
            .last()
            .copied()
            .unwrap_or(0.0)
    } else {
        0.0
    };
    if min_singular < DIRECT_SUM_TOL {
        return Err(Error::RankDeficient {
            ratio: min_singular,
        });
    }

    // Fast directions straight from the past product.
    let n_max = *params.n_grid.last().unwrap();
    let past = cocycle_product(gen, traj, -(n_max as i64), n_max)?;
    let need = groups.cumulative(r).min(dim);
    let past_seq = if past.is_zero() || need == 0 {
        None
    } else {
        let t = LinearMap::on(space, past.matrix.clone())?;
        build_with(&t, need, &params.consistent).ok()
    };
    let mut duality_check = Vec::with_capacity(r);
    for l in 1..=r {
        let k = groups.cumulative(l);
        let d = match &past_seq {
            Some(seq) if seq.xs.len() >= k && k < dim => {
                let imgs: Vec<DVector<f64>> =
                    seq.xs[..k].iter().map(|x| &past.matrix * x).collect();
                let y = Subspace::from_columns(space, &column_matrix(dim, &imgs));
                if y.dim() == k {
                    y.grassmann_distance(&fast[l])?
                } else {
                    f64::NAN
                }
            }
            _ if k >= dim => 0.0,
            _ => f64::NAN,
        };
        duality_check.push(d);
    }

    let growth_grid = params.growth_grid();
    let mut block_rates = Vec::with_capacity(r);
    for b in &blocks {
        let rate = match b.vectors().first() {
            Some(v) => growth_rate(gen, traj, v, &growth_grid)?.rate,
            None => f64::NAN,
        };
        block_rates.push(rate);
    }
    Ok(Splitting {
        blocks,
        tail,
        lambdas: groups.lambdas.clone(),
        block_rates,
        dual_slow,
        fast,
        min_singular,
        exactness,
        duality_check,
        primal,
        dual,
    })
}

/// Slow spaces of one level at the points `sigma^i omega`, `i = 0..=steps`, each from a
/// product of `lookahead` steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlowSpaceSeries {
    pub level: usize,
    /// Number of exponents above the level.
    pub removed: usize,
    pub lookahead: usize,
    pub spaces: Vec<Subspace>,
}

pub fn slow_space_series(
    gen: &Generator,
    traj: &Trajectory,
    groups: &ExponentGroups,
    level: usize,
    steps: usize,
    lookahead: usize,
    opts: &ConsistentOptions,
) -> Result<SlowSpaceSeries> {
    use rayon::prelude::*;
    check_level(groups, gen.dim(), level)?;
    let spaces = (0..=steps as i64)
        .into_par_iter()
        .map(|i| approximate_slow_space_at(gen, traj, i, lookahead, level, groups, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(SlowSpaceSeries {
        level,
        removed: groups.cumulative(level - 1),
        lookahead,
        spaces,
    })
}

#[derive(Clone, Debug)]
pub struct ReducedOptions {
    /// Number of exponents to estimate (defaults to all available).
    pub kmax: Option<usize>,
    /// Product lengths for the exponent fit (defaults to `1..=steps`).
    pub n_grid: Option<Vec<usize>>,
    pub residual_threshold: f64,
    pub tolerance: f64,
    pub epsilon: f64,
    pub quotient_probes: usize,
    pub seed: u64,
}

impl Default for ReducedOptions {
    fn default() -> Self {
        ReducedOptions {
            kmax: None,
            n_grid: None,
            residual_threshold: 1e-6,
            tolerance: 2e-2,
            epsilon: 0.1,
            quotient_probes: 32,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedReport {
    pub level: usize,
    pub removed: usize,
    /// Exponents of the cocycle compressed to the moving slow space.
    #[serde(with = "floats")]
    pub mus: Vec<f64>,
    #[serde(with = "floats")]
    pub mu_ses: Vec<f64>,
    /// The full spectrum with the leading `removed` exponents dropped.
    #[serde(with = "floats")]
    pub expected: Vec<f64>,
    #[serde(with = "float")]
    pub max_deviation: f64,
    pub exponents_ok: bool,
    /// Largest equivariance residual along the series.
    #[serde(with = "float")]
    pub max_residual: f64,
    /// `(1/n) log` of the smallest observed expansion on the quotient by the slow space.
    #[serde(with = "float")]
    pub quotient_rate: f64,
    /// `lambda_{l-1} - epsilon`.
    #[serde(with = "float")]
    pub quotient_bound: f64,
    pub quotient_ok: bool,
}

impl ReducedReport {
    pub fn pass(&self) -> bool {
        self.exponents_ok && self.quotient_ok
    }
}

/// Estimates the exponents of the cocycle restricted to a moving slow space and checks
/// them against the tail of the full spectrum. Operators are compressed through orthonormal
/// bases of consecutive spaces; the equivariance residual bounds the compression error.
pub fn verify_reduced_cocycle(
    gen: &Generator,
    traj: &Trajectory,
    series: &SlowSpaceSeries,
    full_mus: &[f64],
    groups: &ExponentGroups,
    opts: &ReducedOptions,
) -> Result<ReducedReport> {
    let steps = series.spaces.len().saturating_sub(1);
    if steps == 0 {
        return Err(Error::Precondition(
            "series needs at least two base points".into(),
        ));
    }
    let mut max_residual = 0.0f64;
    for i in 0..steps {
        let r = equivariance_residual(
            gen,
            traj,
            i as i64,
            &series.spaces[i],
            &series.spaces[i + 1],
        )?;
        max_residual = max_residual.max(r);
    }
    if !(max_residual <= opts.residual_threshold) {
        return Err(Error::ResidualTooLarge {
            residual: max_residual,
            threshold: opts.residual_threshold,
        });
    }
    let m = series.spaces[0].dim();
    let available = full_mus.len().saturating_sub(series.removed).min(m);
    let kmax = opts.kmax.unwrap_or(available).min(m);
    let grid = opts.n_grid.clone().unwrap_or_else(|| (1..=steps).collect());
    if grid.is_empty() || *grid.last().unwrap() > steps || grid[0] == 0 {
        return Err(Error::Precondition(
            "reduced grid must lie in 1..=steps".into(),
        ));
    }

    let (mus, mu_ses) = if kmax == 0 || m == 0 {
        (Vec::new(), Vec::new())
    } else {
        let coords = NormedSpace::euclidean(m)?;
        let sopts = SpectrumOptions {
            mode: Mode::EuclideanExact,
            ..SpectrumOptions::default()
        };
        let mut prod = ScaledProduct::identity(m);
        let mut graded = GradedProduct::new(m);
        let mut prods = Vec::with_capacity(grid.len());
        let mut gradeds = Vec::with_capacity(grid.len());
        let mut gi = 0;
        for i in 0..steps {
            let s = traj.symbol(i as i64).ok_or(Error::OutOfRange {
                start: 0,
                end: steps as i64,
                lo: traj.range().0,
                hi: traj.range().1,
            })?;
            let a = series.spaces[i + 1].basis().transpose()
                * &gen.matrices()[s]
                * series.spaces[i].basis();
            prod.push(&a);
            graded.push(&a);
            while gi < grid.len() && grid[gi] == i + 1 {
                prods.push(prod.clone());
                gradeds.push(graded.clone());
                gi += 1;
            }
        }
        let (rows, _) = products_table(&coords, &prods, &grid, kmax, &sopts, |_| gradeds)?;
        let mut deltas = Vec::with_capacity(kmax);
        for k in 0..kmax {
            let ys: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            deltas.push(extrapolate(&grid, &ys));
        }
        let mus: Vec<f64> = (0..kmax)
            .map(|k| {
                if k == 0 {
                    deltas[0].0
                } else {
                    deltas[k].0 - deltas[k - 1].0
                }
            })
            .collect();
        let ses: Vec<f64> = (0..kmax)
            .map(|k| {
                let a = deltas[k].1;
                let b = if k == 0 { 0.0 } else { deltas[k - 1].1 };
                (a * a + b * b).sqrt()
            })
            .collect();
        (mus, ses)
    };
    let expected: Vec<f64> =
        full_mus[series.removed..series.removed + kmax.min(available)].to_vec();
    let max_deviation = mus
        .iter()
        .zip(&expected)
        .map(|(a, b)| if a == b { 0.0 } else { (a - b).abs() })
        .fold(0.0, f64::max);
    let exponents_ok = max_deviation <= opts.tolerance;

    // Expansion on the quotient by the slow space, measured by distances to it.
    let (quotient_rate, quotient_bound, quotient_ok) = if series.removed == 0 {
        (f64::INFINITY, f64::NEG_INFINITY, true)
    } else {
        let space = gen.space();
        let v0 = &series.spaces[0];
        let vn = &series.spaces[steps];
        let comp = orthogonal_complement(v0.basis());
        let mut rng = rng_for(opts.seed, 0);
        let mut probes: Vec<DVector<f64>> = comp.column_iter().map(|c| c.into_owned()).collect();
        for _ in 0..opts.quotient_probes {
            let c = DVector::from_fn(comp.ncols(), |_, _| rng.gen_range(-1.0..1.0));
            probes.push(&comp * c);
        }
        let prod = cocycle_product(gen, traj, 0, steps)?;
        let mut worst = f64::INFINITY;
        for w in &probes {
            let d0 = space.dist_to_subspace(w, v0)?;
            if d0 <= 0.0 {
                continue;
            }
            let image = &prod.matrix * w;
            let dn = space.dist_to_subspace(&image, vn)?;
            let rate = (dn.ln() + prod.logscale - d0.ln()) / steps as f64;
            worst = worst.min(rate);
        }
        let lambda_prev = groups.lambdas[series.level - 2];
        let bound = lambda_prev - opts.epsilon;
        (worst, bound, worst >= bound)
    };
    Ok(ReducedReport {
        level: series.level,
        removed: series.removed,
        mus,
        mu_ses,
        expected,
        max_deviation,
        exponents_ok,
        max_residual,
        quotient_rate,
        quotient_bound,
        quotient_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cocycle::{estimate_spectrum, trajectory, BaseProcess};
    use crate::space::Exponent;
    use nalgebra::DMatrix;

    fn fixed(space: NormedSpace, rows: &[f64]) -> (Generator, Trajectory) {
        let d = space.dim();
        let g = Generator::new(space, vec![DMatrix::from_row_slice(d, d, rows)]).unwrap();
        let t = trajectory(&BaseProcess::Fixed { seed: 0 }, 200, true).unwrap();
        (g, t)
    }

    fn jordan() -> (Generator, Trajectory) {
        fixed(NormedSpace::euclidean(2).unwrap(), &[2.0, 1.0, 0.0, 1.0])
    }

    fn span(v: &[&[f64]]) -> Subspace {
        let vs: Vec<DVector<f64>> = v.iter().map(|c| DVector::from_column_slice(c)).collect();
        Subspace::span(NormedSpace::euclidean(vs[0].len()).unwrap(), &vs).unwrap()
    }

    #[test]
    fn grouping() {
        let ln2 = 2f64.ln();
        let g = group_values(&[ln2, 0.0], &[0.0, 0.0], 0.1);
        assert_eq!(g.mults, vec![1, 1]);
        assert_eq!(g.lambdas, vec![ln2, 0.0]);
        let g = group_values(&[0.0, 0.0], &[0.0, 0.0], 0.05);
        assert_eq!((g.lambdas, g.mults), (vec![0.0], vec![2]));
        let g = group_values(&[1.0397, -1.3540], &[0.0, 0.0], 0.05);
        assert_eq!(g.r(), 2);
        let g = group_values(
            &[1.0, f64::NEG_INFINITY, f64::NEG_INFINITY],
            &[0.0; 3],
            0.05,
        );
        assert_eq!(g.mults, vec![1, 2]);
        assert_eq!(g.cumulative(1), 1);
    }

    #[test]
    fn jordan_slow_space() {
        let (g, t) = jordan();
        let groups = group_values(&[2f64.ln(), 0.0], &[0.0, 0.0], 0.05);
        let want = span(&[&[1.0, -1.0]]);
        let v = approximate_slow_space(&g, &t, 20, 2, &groups).unwrap();
        assert!(v.grassmann_distance(&want).unwrap() < 1e-3);
        assert_eq!(
            approximate_slow_space(&g, &t, 5, 1, &groups).unwrap().dim(),
            2
        );
        assert_eq!(
            approximate_slow_space(&g, &t, 5, 3, &groups),
            Err(Error::NoSuchLevel { level: 3, r: 2 })
        );
    }

    #[test]
    fn identity_has_one_level() {
        let (g, t) = fixed(NormedSpace::euclidean(2).unwrap(), &[1.0, 0.0, 0.0, 1.0]);
        let groups = group_values(&[0.0, 0.0], &[0.0, 0.0], 0.05);
        assert_eq!(
            approximate_slow_space(&g, &t, 5, 2, &groups),
            Err(Error::NoSuchLevel { level: 2, r: 1 })
        );
    }

    #[test]
    fn diagonal_slow_space_is_exact() {
        let s = NormedSpace::new(3, Exponent::ONE).unwrap();
        let (g, t) = fixed(s, &[3.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0]);
        let groups = group_values(&[3f64.ln(), 2f64.ln(), 0.0], &[0.0; 3], 0.05);
        for n in [1, 4, 9] {
            let v = approximate_slow_space(&g, &t, n, 2, &groups).unwrap();
            let want = span(&[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]])
                .with_space(s)
                .unwrap();
            assert!(v.grassmann_distance(&want).unwrap() < 1e-12, "{n}");
        }
    }

    #[test]
    fn jordan_filtration() {
        let (g, t) = jordan();
        let groups = group_values(&[2f64.ln(), 0.0], &[0.0, 0.0], 0.05);
        let f = filtration(&g, &t, &groups, &FiltrationParams::default()).unwrap();
        let l2 = &f.levels[1];
        assert!(l2.limit.grassmann_distance(&span(&[&[1.0, -1.0]])).unwrap() < 1e-3);
        assert!(l2.cauchy_slope <= -(2f64.ln() - 0.1), "{}", l2.cauchy_slope);
        assert!(l2.cauchy_ok);
        assert!(f.nesting_residual < 1e-8);
        let eq = &l2.equivariance;
        assert!(eq.last().unwrap() < &1e-5 && eq[0] > *eq.last().unwrap());
        let probe = l2.probe.as_ref().unwrap();
        assert!(probe.rate.rate.abs() < 2e-2, "{:?}", probe.rate);
        let p1 = f.levels[0].probe.as_ref().unwrap();
        assert!((p1.rate.rate - 2f64.ln()).abs() < 2e-2);
        assert!(p1.lower_bound_from.is_some());
    }

    #[test]
    fn jordan_equivariance_exact() {
        let (g, t) = jordan();
        let v = span(&[&[1.0, -1.0]]);
        assert!(equivariance_residual(&g, &t, 0, &v, &v).unwrap() < 1e-15);
    }

    #[test]
    fn growth_rates() {
        let (g, t) = jordan();
        let grid: Vec<usize> = (1..=10).map(|i| 10 * i).collect();
        let a = growth_rate(&g, &t, &DVector::from_vec(vec![1.0, 0.0]), &grid).unwrap();
        assert!((a.rate - 2f64.ln()).abs() < 1e-3);
        let b = growth_rate(&g, &t, &DVector::from_vec(vec![1.0, -1.0]), &grid).unwrap();
        assert!(b.rate.abs() < 1e-3);
        assert_eq!(
            growth_rate(&g, &t, &DVector::zeros(2), &grid),
            Err(Error::ZeroVector)
        );
        let (z, t) = fixed(NormedSpace::euclidean(2).unwrap(), &[0.0; 4]);
        let r = growth_rate(&z, &t, &DVector::from_vec(vec![1.0, 0.0]), &[1, 2]).unwrap();
        assert_eq!((r.rate, r.zero_at), (f64::NEG_INFINITY, Some(1)));
    }

    #[test]
    fn jordan_splitting() {
        let (g, t) = jordan();
        let groups = group_values(&[2f64.ln(), 0.0], &[0.0, 0.0], 0.05);
        let s = splitting(&g, &t, &groups, &FiltrationParams::default()).unwrap();
        let d = |a: &Subspace, b: &Subspace| a.grassmann_distance(b).unwrap();
        assert!(d(&s.blocks[0], &span(&[&[1.0, 0.0]])) < 1e-6);
        assert!(d(&s.blocks[1], &span(&[&[1.0, -1.0]])) < 1e-3);
        assert!(d(&s.dual_slow[1], &span(&[&[0.0, 1.0]])) < 1e-6);
        assert!(d(&s.fast[1], &span(&[&[1.0, 0.0]])) < 1e-6);
        assert_eq!(s.tail.dim(), 0);
        assert!(s.exactness.iter().all(|&e| e <= 1e-6));
        assert!(s.duality_check[0] <= 1e-6, "{:?}", s.duality_check);
        assert!((s.block_rates[0] - 2f64.ln()).abs() < 2e-2);
        assert!(s.block_rates[1].abs() < 2e-2);
        assert_eq!(
            splitting(
                &g,
                &Trajectory::one_sided(vec![0; 50]),
                &groups,
                &FiltrationParams::default()
            ),
            Err(Error::OneSided)
        );
    }

    #[test]
    fn identity_splitting_is_one_block() {
        let (g, t) = fixed(
            NormedSpace::new(2, Exponent::INF).unwrap(),
            &[1.0, 0.0, 0.0, 1.0],
        );
        let groups = group_values(&[0.0, 0.0], &[0.0, 0.0], 0.05);
        let s = splitting(&g, &t, &groups, &FiltrationParams::default()).unwrap();
        assert_eq!(s.blocks.len(), 1);
        assert_eq!(s.blocks[0].dim(), 2);
    }

    #[test]
    fn iid_diagonal_splitting() {
        let s = NormedSpace::euclidean(2).unwrap();
        let g = Generator::new(
            s,
            vec![
                DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0 / 3.0]),
                DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 0.2]),
            ],
        )
        .unwrap();
        let b = BaseProcess::Bernoulli {
            probabilities: vec![0.5, 0.5],
            seed: 11,
        };
        let t = trajectory(&b, 100, true).unwrap();
        let groups = group_values(&[1.5 * 2f64.ln(), -15f64.ln() / 2.0], &[0.0, 0.0], 0.05);
        let f = filtration(&g, &t, &groups, &FiltrationParams::default()).unwrap();
        for v in &f.levels[1].spaces {
            assert!(v.grassmann_distance(&span(&[&[0.0, 1.0]])).unwrap() < 1e-14);
        }
        let sp = splitting(&g, &t, &groups, &FiltrationParams::default()).unwrap();
        assert!(
            sp.blocks[0]
                .grassmann_distance(&span(&[&[1.0, 0.0]]))
                .unwrap()
                < 1e-12
        );
        assert!(
            sp.blocks[1]
                .grassmann_distance(&span(&[&[0.0, 1.0]]))
                .unwrap()
                < 1e-12
        );
    }

    #[test]
    fn upper_triangular_filtration() {
        let (g, t) = fixed(
            NormedSpace::euclidean(3).unwrap(),
            &[4.0, 1.0, 1.0, 0.0, 2.0, 1.0, 0.0, 0.0, 1.0],
        );
        let groups = group_values(&[4f64.ln(), 2f64.ln(), 0.0], &[0.0; 3], 0.05);
        let f = filtration(
            &g,
            &t,
            &groups,
            &FiltrationParams::with_grid((1..=25).collect()),
        )
        .unwrap();
        // Eigenvectors: 2 -> (1,-2,0), 1 -> (0,1,-1) + (1/3)(1,-2,0)... computed directly.
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 1.0, 0.0, 2.0, 1.0, 0.0, 0.0, 1.0]);
        let eig = |lam: f64| -> DVector<f64> {
            let a = &m - DMatrix::identity(3, 3) * lam;
            let v = crate::linalg::null_space(&a, 1e-12);
            v.column(0).into_owned()
        };
        let (e2, e1) = (eig(2.0), eig(1.0));
        let v2 = Subspace::span(
            NormedSpace::euclidean(3).unwrap(),
            &[e2.clone(), e1.clone()],
        )
        .unwrap();
        let v3 = Subspace::span(NormedSpace::euclidean(3).unwrap(), &[e1]).unwrap();
        assert!(f.levels[1].limit.grassmann_distance(&v2).unwrap() < 1e-3);
        assert!(f.levels[2].limit.grassmann_distance(&v3).unwrap() < 1e-3);
        assert!(f.levels.iter().all(|l| l.cauchy_ok));
    }

    #[test]
    fn reduced_cocycle_diagonal() {
        let s = NormedSpace::euclidean(3).unwrap();
        let (g, t) = fixed(s, &[4.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0]);
        let mus = [4f64.ln(), 2f64.ln(), 0.0];
        let groups = group_values(&mus, &[0.0; 3], 0.05);
        let series =
            slow_space_series(&g, &t, &groups, 2, 10, 10, &ConsistentOptions::default()).unwrap();
        let rep =
            verify_reduced_cocycle(&g, &t, &series, &mus, &groups, &ReducedOptions::default())
                .unwrap();
        assert!(
            (rep.mus[0] - 2f64.ln()).abs() < 1e-12 && rep.mus[1].abs() < 1e-12,
            "{:?}",
            rep.mus
        );
        assert!(rep.pass());
    }

    #[test]
    fn reduced_cocycle_upper_triangular() {
        let (g, t) = fixed(
            NormedSpace::euclidean(3).unwrap(),
            &[4.0, 1.0, 1.0, 0.0, 2.0, 1.0, 0.0, 0.0, 1.0],
        );
        let spec = estimate_spectrum(
            &g,
            &BaseProcess::Fixed { seed: 0 },
            3,
            &[25, 50, 75, 100],
            1,
        )
        .unwrap();
        let groups = group_exponents(&spec, 0.05);
        assert_eq!(groups.r(), 3);
        assert_eq!(resolvable_length(&groups, 3, 20.0), Some(28));
        assert_eq!(resolvable_length(&groups, 2, 20.0), None);
        for level in [2, 3] {
            let series = slow_space_series(
                &g,
                &t,
                &groups,
                level,
                50,
                25,
                &ConsistentOptions::default(),
            )
            .unwrap();
            let opts = ReducedOptions {
                epsilon: groups.default_epsilon(),
                ..ReducedOptions::default()
            };
            let rep = verify_reduced_cocycle(&g, &t, &series, &spec.mus(), &groups, &opts).unwrap();
            assert!(rep.exponents_ok, "{rep:?}");
            assert!(rep.quotient_ok, "{rep:?}");
        }
    }

    #[test]
    fn reduced_cocycle_rejects_bad_series() {
        let (g, t) = jordan();
        let groups = group_values(&[2f64.ln(), 0.0], &[0.0, 0.0], 0.05);
        let bad = SlowSpaceSeries {
            level: 2,
            removed: 1,
            lookahead: 0,
            spaces: vec![span(&[&[1.0, -0.9]]); 5],
        };
        let r = verify_reduced_cocycle(
            &g,
            &t,
            &bad,
            &[2f64.ln(), 0.0],
            &groups,
            &ReducedOptions::default(),
        );
        assert!(matches!(r, Err(Error::ResidualTooLarge { .. })));
    }
}
