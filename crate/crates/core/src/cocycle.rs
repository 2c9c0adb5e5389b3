//! Linear cocycles over finite-alphabet base processes.
//!
//! A trajectory is a symbol sequence indexed by the integers around a base point `omega`
//! (index `i` is the symbol at `sigma^i omega`). The cocycle over `n` steps from `start`
//! is `L_{start+n-1} ... L_{start}`, accumulated with periodic renormalization so that
//! long products neither overflow nor underflow.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{linear_fit, lstsq, mean_and_se, rng_for, singular_values, spectral_norm};
use crate::serde_ext::{float, floats, matrix};
use crate::space::NormedSpace;
use crate::volume::{d_k, LinearMap, Mode, VolumeOptions};

/// A stationary ergodic process on a finite alphabet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BaseProcess {
    /// Independent draws with the given probabilities.
    Bernoulli { probabilities: Vec<f64>, seed: u64 },
    /// A Markov chain started from its stationary law (or from `initial` when given).
    Markov {
        transition: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        initial: Option<usize>,
        seed: u64,
    },
    /// A single point fixed by the base map.
    Fixed {
        #[serde(default)]
        seed: u64,
    },
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidBase(format!("{what} is empty")));
    }
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidBase(format!(
            "{what} has a negative or non-finite entry"
        )));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidBase(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

fn draw<R: Rng>(rng: &mut R, p: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|v| *v > 0.0).unwrap_or(0)
}

impl BaseProcess {
    pub fn alphabet_size(&self) -> usize {
        match self {
            BaseProcess::Bernoulli { probabilities, .. } => probabilities.len(),
            BaseProcess::Markov { transition, .. } => transition.len(),
            BaseProcess::Fixed { .. } => 1,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            BaseProcess::Bernoulli { seed, .. }
            | BaseProcess::Markov { seed, .. }
            | BaseProcess::Fixed { seed } => *seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BaseProcess::Bernoulli { probabilities, .. } => {
                check_distribution(probabilities, "probability vector")
            }
            BaseProcess::Markov {
                transition,
                initial,
                ..
            } => {
                let n = transition.len();
                for (i, row) in transition.iter().enumerate() {
                    if row.len() != n {
                        return Err(Error::InvalidBase(format!(
                            "transition row {i} has {} entries, expected {n}",
                            row.len()
                        )));
                    }
                    check_distribution(row, &format!("transition row {i}"))?;
                }
                if n == 0 {
                    return Err(Error::InvalidBase("transition matrix is empty".into()));
                }
                if let Some(s) = initial {
                    if *s >= n {
                        return Err(Error::InvalidBase(format!(
                            "initial state {s} out of range"
                        )));
                    }
                }
                Ok(())
            }
            BaseProcess::Fixed { .. } => Ok(()),
        }
    }

    /// Stationary law of the Markov chain (`pi P = pi`, `sum pi = 1`).
    pub fn stationary(&self) -> Result<Vec<f64>> {
        match self {
            BaseProcess::Bernoulli { probabilities, .. } => Ok(probabilities.clone()),
            BaseProcess::Fixed { .. } => Ok(vec![1.0]),
            BaseProcess::Markov { transition, .. } => {
                let n = transition.len();
                let mut a = DMatrix::zeros(n + 1, n);
                for i in 0..n {
                    for j in 0..n {
                        a[(j, i)] = transition[i][j] - if i == j { 1.0 } else { 0.0 };
                    }
                    a[(n, i)] = 1.0;
                }
                let mut b = DVector::zeros(n + 1);
                b[n] = 1.0;
                let pi = lstsq(&a, &b);
                let pi: Vec<f64> = pi.iter().map(|v| v.max(0.0)).collect();
                let s: f64 = pi.iter().sum();
                if !(s > 0.0) {
                    return Err(Error::InvalidBase("no stationary distribution".into()));
                }
                Ok(pi.into_iter().map(|v| v / s).collect())
            }
        }
    }
}

/// Symbols along an orbit: `forward[i]` is the symbol at `sigma^i omega` and
/// `backward[j]` the symbol at `sigma^{-1-j} omega`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub forward: Vec<usize>,
    pub backward: Vec<usize>,
    pub seed: u64,
    pub two_sided: bool,
}

impl Trajectory {
    pub fn one_sided(forward: Vec<usize>) -> Self {
        Trajectory {
            forward,
            backward: Vec::new(),
            seed: 0,
            two_sided: false,
        }
    }

    pub fn two_sided(forward: Vec<usize>, backward: Vec<usize>) -> Self {
        Trajectory {
            forward,
            backward,
            seed: 0,
            two_sided: true,
        }
    }

    /// Valid indices `[lo, hi)`.
    pub fn range(&self) -> (i64, i64) {
        (-(self.backward.len() as i64), self.forward.len() as i64)
    }

    pub fn symbol(&self, i: i64) -> Option<usize> {
        if i >= 0 {
            self.forward.get(i as usize).copied()
        } else {
            self.backward.get((-1 - i) as usize).copied()
        }
    }

    pub(crate) fn check_window(&self, start: i64, n: usize) -> Result<()> {
        let (lo, hi) = self.range();
        let end = start + n as i64;
        if n > 0 && (start < lo || end > hi) {
            return Err(Error::OutOfRange { start, end, lo, hi });
        }
        Ok(())
    }

    /// The same orbit read under the inverse base map, with the one-step offset of the
    /// adjoint cocycle: index `j` of the result is index `-1-j` of `self`.
    pub fn reversed(&self) -> Result<Trajectory> {
        if !self.two_sided {
            return Err(Error::OneSided);
        }
        Ok(Trajectory {
            forward: self.backward.clone(),
            backward: self.forward.clone(),
            seed: self.seed,
            two_sided: true,
        })
    }
}

/// A trajectory of `n_max` forward symbols (and as many backward ones when two-sided).
pub fn trajectory(base: &BaseProcess, n_max: usize, two_sided: bool) -> Result<Trajectory> {
    sample_trajectory(base, n_max, two_sided, 0)
}

/// Trajectory number `index`, drawn from its own RNG stream so samples are independent
/// of evaluation order.
pub fn sample_trajectory(
    base: &BaseProcess,
    n_max: usize,
    two_sided: bool,
    index: u64,
) -> Result<Trajectory> {
    if n_max == 0 {
        return Err(Error::InvalidBase(
            "trajectory length must be at least 1".into(),
        ));
    }
    base.validate()?;
    let seed = base.seed();
    let mut rng = rng_for(seed, index);
    let back_len = if two_sided { n_max } else { 0 };
    let (forward, backward) = match base {
        BaseProcess::Fixed { .. } => (vec![0; n_max], vec![0; back_len]),
        BaseProcess::Bernoulli { probabilities, .. } => {
            let f = (0..n_max).map(|_| draw(&mut rng, probabilities)).collect();
            let b = (0..back_len)
                .map(|_| draw(&mut rng, probabilities))
                .collect();
            (f, b)
        }
        BaseProcess::Markov {
            transition,
            initial,
            ..
        } => {
            let pi = base.stationary()?;
            let s0 = match initial {
                Some(s) => *s,
                None => draw(&mut rng, &pi),
            };
            let mut f = Vec::with_capacity(n_max);
            let mut s = s0;
            f.push(s);
            while f.len() < n_max {
                s = draw(&mut rng, &transition[s]);
                f.push(s);
            }
            // The time reversal of the stationary chain has kernel pi_j P_ji / pi_i.
            let n = transition.len();
            let mut b = Vec::with_capacity(back_len);
            let mut s = s0;
            while b.len() < back_len {
                let row: Vec<f64> = if pi[s] > 0.0 {
                    (0..n).map(|j| pi[j] * transition[j][s] / pi[s]).collect()
                } else {
                    (0..n).map(|j| transition[j][s]).collect()
                };
                let total: f64 = row.iter().sum();
                if !(total > 0.0) {
                    return Err(Error::InvalidBase(format!("state {s} has no predecessor")));
                }
                let row: Vec<f64> = row.iter().map(|v| v / total).collect();
                s = draw(&mut rng, &row);
                b.push(s);
            }
            (f, b)
        }
    };
    Ok(Trajectory {
        forward,
        backward,
        seed,
        two_sided,
    })
}

/// Per-symbol operators on a common space, optionally block diagonal with the first
/// `head_dim` coordinates as the head block and the rest as the tail block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GeneratorRepr", into = "GeneratorRepr")]
pub struct Generator {
    space: NormedSpace,
    matrices: Vec<DMatrix<f64>>,
    head_dim: Option<usize>,
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeneratorRepr {
    space: NormedSpace,
    #[serde(with = "matrices_serde")]
    matrices: Vec<DMatrix<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    head_dim: Option<usize>,
}

mod matrices_serde {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(ms: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<Vec<f64>>> = ms
            .iter()
            .map(|m| m.row_iter().map(|r| r.iter().copied().collect()).collect())
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
        Vec::<Vec<Vec<f64>>>::deserialize(d)?
            .iter()
            .map(|r| crate::volume::matrix_from_rows(r).map_err(serde::de::Error::custom))
            .collect()
    }
}

impl TryFrom<GeneratorRepr> for Generator {
    type Error = Error;

    fn try_from(r: GeneratorRepr) -> Result<Self> {
        Generator::with_split(r.space, r.matrices, r.head_dim)
    }
}

impl From<Generator> for GeneratorRepr {
    fn from(g: Generator) -> Self {
        GeneratorRepr {
            space: g.space,
            matrices: g.matrices,
            head_dim: g.head_dim,
        }
    }
}

impl Generator {
    pub fn new(space: NormedSpace, matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        Self::with_split(space, matrices, None)
    }

    pub fn with_split(
        space: NormedSpace,
        matrices: Vec<DMatrix<f64>>,
        head_dim: Option<usize>,
    ) -> Result<Self> {
        let d = space.dim();
        if matrices.is_empty() {
            return Err(Error::Precondition(
                "generator needs at least one matrix".into(),
            ));
        }
        for m in &matrices {
            if m.nrows() != d || m.ncols() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: if m.nrows() != d { m.nrows() } else { m.ncols() },
                });
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("generator matrix"));
            }
        }
        if let Some(h) = head_dim {
            if h > d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: h,
                });
            }
            for (symbol, m) in matrices.iter().enumerate() {
                let off = (0..h).any(|i| (h..d).any(|j| m[(i, j)] != 0.0 || m[(j, i)] != 0.0));
                if off {
                    return Err(Error::SplitViolated { symbol });
                }
            }
        }
        Ok(Generator {
            space,
            matrices,
            head_dim,
        })
    }

    pub fn space(&self) -> &NormedSpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    pub fn alphabet_size(&self) -> usize {
        self.matrices.len()
    }

    pub fn head_dim(&self) -> Option<usize> {
        self.head_dim
    }

    pub fn map(&self, symbol: usize) -> LinearMap {
        LinearMap::on(self.space, self.matrices[symbol].clone()).expect("validated")
    }

    /// Transposed matrices acting on the dual space.
    pub fn dual(&self) -> Generator {
        Generator {
            space: self.space.dual(),
            matrices: self.matrices.iter().map(|m| m.transpose()).collect(),
            head_dim: self.head_dim,
        }
    }

    fn block(&self, lo: usize, hi: usize) -> Result<Option<Generator>> {
        if hi <= lo {
            return Ok(None);
        }
        let space = NormedSpace::new(hi - lo, self.space.p())?;
        let matrices = self
            .matrices
            .iter()
            .map(|m| m.view((lo, lo), (hi - lo, hi - lo)).into_owned())
            .collect();
        Ok(Some(Generator {
            space,
            matrices,
            head_dim: None,
        }))
    }

    /// The head block as its own generator (`None` when empty).
    pub fn head(&self) -> Result<Option<Generator>> {
        let h = self
            .head_dim
            .ok_or_else(|| Error::Precondition("generator declares no head/tail split".into()))?;
        self.block(0, h)
    }

    /// The tail block as its own generator (`None` when empty).
    pub fn tail(&self) -> Result<Option<Generator>> {
        let h = self
            .head_dim
            .ok_or_else(|| Error::Precondition("generator declares no head/tail split".into()))?;
        self.block(h, self.dim())
    }

    fn check_alphabet(&self, traj: &Trajectory) -> Result<()> {
        let a = self.alphabet_size();
        if let Some(&s) = traj.forward.iter().chain(&traj.backward).find(|&&s| s >= a) {
            return Err(Error::InvalidBase(format!(
                "symbol {s} outside the generator alphabet of size {a}"
            )));
        }
        Ok(())
    }
}

/// `exp(logscale) * matrix`, with the spectral norm of `matrix` kept in `[0.5, 2]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaledProduct {
    #[serde(with = "matrix")]
    pub matrix: DMatrix<f64>,
    #[serde(with = "float")]
    pub logscale: f64,
}

impl ScaledProduct {
    pub fn identity(d: usize) -> Self {
        ScaledProduct {
            matrix: DMatrix::identity(d, d),
            logscale: 0.0,
        }
    }

    fn renormalize(&mut self) {
        let d = self.matrix.nrows().min(self.matrix.ncols()).max(1) as f64;
        let fro = self.matrix.norm();
        // ||M||_2 lies in [fro / sqrt(d), fro]; only compute it when that is inconclusive.
        if fro <= 2.0 && fro / d.sqrt() >= 0.5 {
            return;
        }
        let s = spectral_norm(&self.matrix);
        if (0.5..=2.0).contains(&s) {
            return;
        }
        if s == 0.0 || !s.is_finite() {
            if s == 0.0 {
                self.logscale = f64::NEG_INFINITY;
            }
            return;
        }
        self.matrix /= s;
        self.logscale += s.ln();
    }

    /// Applies `m` after the current product.
    pub fn push(&mut self, m: &DMatrix<f64>) {
        if self.logscale == f64::NEG_INFINITY {
            return;
        }
        self.matrix = m * &self.matrix;
        self.renormalize();
    }

    /// `self ∘ earlier`.
    pub fn after(&self, earlier: &ScaledProduct) -> ScaledProduct {
        let mut out = ScaledProduct {
            matrix: &self.matrix * &earlier.matrix,
            logscale: self.logscale + earlier.logscale,
        };
        if out.logscale == f64::NEG_INFINITY || out.logscale.is_nan() {
            out.matrix.fill(0.0);
            out.logscale = f64::NEG_INFINITY;
            return out;
        }
        out.renormalize();
        out
    }

    /// The represented operator (may overflow for long products).
    pub fn represented(&self) -> DMatrix<f64> {
        if self.logscale == f64::NEG_INFINITY {
            return DMatrix::zeros(self.matrix.nrows(), self.matrix.ncols());
        }
        &self.matrix * self.logscale.exp()
    }

    pub fn is_zero(&self) -> bool {
        self.logscale == f64::NEG_INFINITY || self.matrix.amax() == 0.0
    }

    /// `||P - Q|| / ||Q||` in the max-entry norm after aligning the scales.
    pub fn relative_difference(&self, other: &ScaledProduct) -> f64 {
        if self.is_zero() || other.is_zero() {
            return if self.is_zero() && other.is_zero() {
                0.0
            } else {
                f64::INFINITY
            };
        }
        let a = &self.matrix * (self.logscale - other.logscale).exp();
        (a - &other.matrix).amax() / other.matrix.amax()
    }
}

/// `L_{start+n-1} ... L_{start}` along the trajectory.
pub fn cocycle_product(
    gen: &Generator,
    traj: &Trajectory,
    start: i64,
    n: usize,
) -> Result<ScaledProduct> {
    traj.check_window(start, n)?;
    gen.check_alphabet(traj)?;
    let mut p = ScaledProduct::identity(gen.dim());
    for i in 0..n as i64 {
        let s = traj.symbol(start + i).expect("window checked");
        p.push(&gen.matrices[s]);
    }
    Ok(p)
}

/// Products from `start` at every length in `lengths` (increasing), in one pass.
pub fn cocycle_products_at(
    gen: &Generator,
    traj: &Trajectory,
    start: i64,
    lengths: &[usize],
) -> Result<Vec<ScaledProduct>> {
    let n_max = lengths.iter().copied().max().unwrap_or(0);
    traj.check_window(start, n_max)?;
    gen.check_alphabet(traj)?;
    let mut out = Vec::with_capacity(lengths.len());
    let mut p = ScaledProduct::identity(gen.dim());
    let mut done = 0usize;
    for &n in lengths {
        if n < done {
            return Err(Error::Precondition("lengths must be increasing".into()));
        }
        while done < n {
            let s = traj.symbol(start + done as i64).expect("window checked");
            p.push(&gen.matrices[s]);
            done += 1;
        }
        out.push(p.clone());
    }
    Ok(out)
}

/// The adjoint cocycle: transposed matrices on the dual space over the reversed orbit, so
/// that its product over `n` steps from index `-n` is the transpose of the primal product
/// over `n` steps from index `0`.
pub fn dual_cocycle(gen: &Generator, traj: &Trajectory) -> Result<(Generator, Trajectory)> {
    Ok((gen.dual(), traj.reversed()?))
}

#[derive(Clone, Copy, Debug)]
pub struct SpectrumOptions {
    pub volume: VolumeOptions,
    pub mode: Mode,
    pub route: VolumeRoute,
    /// Smallest `sigma_k / sigma_1` of the renormalized product at which order `k` counts
    /// as resolvable in floating point.
    pub resolvable: f64,
    /// Whether trajectories carry a backward extension (needed for the adjoint system).
    pub two_sided: bool,
}

/// How `log D_k` of a long product is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolumeRoute {
    /// `k * logscale + log D_k(M)` on the renormalized product `M`.
    Norm,
    /// Sum of the leading `k` logarithmic diagonal entries of a QR-accumulated product
    /// started from a generic orthonormal frame. Differs from the norm route by a bounded
    /// amount, so the limits agree.
    Graded,
    /// `Norm` for every order the renormalized products resolve on the whole grid,
    /// `Graded` for the rest.
    Auto,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        SpectrumOptions {
            volume: VolumeOptions {
                random_starts: 0,
                max_evals: 200,
                alternating_starts: 4,
                ..VolumeOptions::default()
            },
            mode: Mode::Optimize,
            route: VolumeRoute::Auto,
            resolvable: 1e-8,
            two_sided: false,
        }
    }
}

/// Growth-rate estimates for one order `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumLevel {
    pub k: usize,
    /// Sample mean of `(1/n) log D_k` at each grid point.
    #[serde(with = "floats")]
    pub means: Vec<f64>,
    /// Limit of `(1/n) log D_k`, extrapolated linearly in `1/n`.
    #[serde(with = "float")]
    pub delta: f64,
    #[serde(with = "float")]
    pub delta_se: f64,
    /// `delta_k - delta_{k-1}`.
    #[serde(with = "float")]
    pub mu: f64,
    #[serde(with = "float")]
    pub mu_se: f64,
    /// Smallest grid mean; subadditivity makes it an upper bound for the limit.
    #[serde(with = "float")]
    pub fekete_bound: f64,
    /// Whether the extrapolated limit respects that bound within three standard errors.
    pub fekete_ok: bool,
    /// Samples evaluated through the graded route.
    pub graded_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub kmax: usize,
    pub n_grid: Vec<usize>,
    pub n_samples: usize,
    pub levels: Vec<SpectrumLevel>,
    /// `values[k-1][grid index][sample]` of `(1/n) log D_k`.
    #[serde(skip)]
    pub values: Vec<Vec<Vec<f64>>>,
}

impl SpectrumReport {
    pub fn mus(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.mu).collect()
    }

    pub fn mu_ses(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.mu_se).collect()
    }

    pub fn deltas(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.delta).collect()
    }

    /// Whether `mu_1 >= mu_2 >= ...` holds within `factor` combined standard errors.
    pub fn is_monotone(&self, factor: f64) -> bool {
        self.levels.windows(2).all(|w| {
            let (a, b) = (&w[0], &w[1]);
            if b.mu == f64::NEG_INFINITY || a.mu == f64::INFINITY {
                return true;
            }
            let se = (a.mu_se * a.mu_se + b.mu_se * b.mu_se).sqrt();
            b.mu <= a.mu + factor * se + 1e-9
        })
    }
}

fn check_grid(n_grid: &[usize]) -> Result<()> {
    if n_grid.is_empty() || n_grid[0] == 0 || n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition(
            "n_grid must be a non-empty strictly increasing list of positive lengths".into(),
        ));
    }
    Ok(())
}

/// `(1/n) log D_k` of the product for `k = 1..=kmax`.
fn log_volume(
    space: &NormedSpace,
    p: &ScaledProduct,
    n: usize,
    k: usize,
    opts: &SpectrumOptions,
) -> Result<f64> {
    if p.is_zero() {
        return Ok(f64::NEG_INFINITY);
    }
    let t = LinearMap::on(*space, p.matrix.clone())?;
    let d = d_k(&t, k, opts.mode, &opts.volume)?;
    Ok((k as f64 * p.logscale + d.lo.ln()) / n as f64)
}

/// A product `Q R` kept as an orthonormal frame and the running sums of `log |R_ii|`.
#[derive(Clone, Debug)]
pub struct GradedProduct {
    frame: DMatrix<f64>,
    logs: Vec<f64>,
}

impl GradedProduct {
    /// Starts from a fixed pseudo-random orthonormal frame, so no direction is special.
    pub fn new(d: usize) -> Self {
        let mut rng = rng_for(0x9e3779b97f4a7c15, d as u64);
        let g = DMatrix::from_fn(d, d, |_, _| {
            rng.sample::<f64, _>(rand_distr::StandardNormal)
        });
        GradedProduct {
            frame: g.qr().q(),
            logs: vec![0.0; d],
        }
    }

    pub fn push(&mut self, m: &DMatrix<f64>) {
        let qr = (m * &self.frame).qr();
        let r = qr.r();
        let mut q = qr.q();
        for i in 0..self.logs.len() {
            let rii = r[(i, i)];
            self.logs[i] += rii.abs().ln();
            if rii < 0.0 {
                q.column_mut(i).neg_mut();
            }
        }
        self.frame = q;
    }

    /// `log` of the k-volume growth of the leading frame directions.
    pub fn log_volume(&self, k: usize) -> f64 {
        self.logs[..k].iter().sum()
    }
}

/// `(1/n) log D_k` at every grid length, `values[grid][k-1]`, and which orders used the
/// graded route.
pub(crate) fn log_volume_table(
    gen: &Generator,
    traj: &Trajectory,
    start: i64,
    n_grid: &[usize],
    kmax: usize,
    opts: &SpectrumOptions,
) -> Result<(Vec<Vec<f64>>, Vec<bool>)> {
    let prods = cocycle_products_at(gen, traj, start, n_grid)?;
    products_table(gen.space(), &prods, n_grid, kmax, opts, |n| {
        let mut g = GradedProduct::new(gen.dim());
        let mut out = Vec::with_capacity(n.len());
        let mut done = 0usize;
        for &len in n {
            while done < len {
                let s = traj.symbol(start + done as i64).expect("window checked");
                g.push(&gen.matrices()[s]);
                done += 1;
            }
            out.push(g.clone());
        }
        out
    })
}

pub(crate) fn products_table<F: FnOnce(&[usize]) -> Vec<GradedProduct>>(
    space: &NormedSpace,
    prods: &[ScaledProduct],
    n_grid: &[usize],
    kmax: usize,
    opts: &SpectrumOptions,
    graded: F,
) -> Result<(Vec<Vec<f64>>, Vec<bool>)> {
    let use_graded: Vec<bool> = (1..=kmax)
        .map(|k| match opts.route {
            VolumeRoute::Norm => false,
            VolumeRoute::Graded => true,
            VolumeRoute::Auto => prods.iter().any(|p| {
                if p.is_zero() {
                    return false;
                }
                let sv = singular_values(&p.matrix);
                !(sv[k - 1] >= opts.resolvable * sv[0])
            }),
        })
        .collect();
    let graded = if use_graded.iter().any(|&g| g) {
        graded(n_grid)
    } else {
        Vec::new()
    };
    let mut table = Vec::with_capacity(n_grid.len());
    for (i, (p, &n)) in prods.iter().zip(n_grid).enumerate() {
        let row = (1..=kmax)
            .map(|k| {
                if use_graded[k - 1] {
                    Ok(graded[i].log_volume(k) / n as f64)
                } else {
                    log_volume(space, p, n, k, opts)
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        table.push(row);
    }
    Ok((table, use_graded))
}

/// Estimates from the values at grid points: the intercept of a fit in `1/n` over the
/// upper half of the grid.
pub(crate) fn extrapolate(n_grid: &[usize], ys: &[f64]) -> (f64, f64) {
    let lo = n_grid.len() / 2;
    let x: Vec<f64> = n_grid[lo..].iter().map(|&n| 1.0 / n as f64).collect();
    let y = &ys[lo..];
    if y.iter().any(|v| !v.is_finite()) {
        return (y[y.len() - 1], 0.0);
    }
    let (a, _, se) = linear_fit(&x, y);
    (a, se)
}

/// Spectrum estimate from explicit trajectories (one sample each), products from index 0.
pub fn estimate_spectrum_on(
    gen: &Generator,
    trajectories: &[Trajectory],
    kmax: usize,
    n_grid: &[usize],
    opts: &SpectrumOptions,
) -> Result<SpectrumReport> {
    check_grid(n_grid)?;
    if kmax == 0 || kmax > gen.dim() {
        return Err(Error::OrderTooLarge {
            k: kmax,
            dim: gen.dim(),
        });
    }
    if trajectories.is_empty() {
        return Err(Error::Precondition(
            "at least one trajectory is required".into(),
        ));
    }
    // per_sample[s][grid][k]
    let tables: Vec<(Vec<Vec<f64>>, Vec<bool>)> = trajectories
        .par_iter()
        .map(|traj| log_volume_table(gen, traj, 0, n_grid, kmax, opts))
        .collect::<Result<_>>()?;
    let graded_samples: Vec<usize> = (0..kmax)
        .map(|k| tables.iter().filter(|t| t.1[k]).count())
        .collect();
    let per_sample: Vec<Vec<Vec<f64>>> = tables.into_iter().map(|t| t.0).collect();
    let ns = trajectories.len();
    let values: Vec<Vec<Vec<f64>>> = (0..kmax)
        .map(|k| {
            (0..n_grid.len())
                .map(|g| (0..ns).map(|s| per_sample[s][g][k]).collect())
                .collect()
        })
        .collect();
    // Per-sample extrapolated limits of delta_k.
    let sample_delta: Vec<Vec<(f64, f64)>> = (0..ns)
        .map(|s| {
            (0..kmax)
                .map(|k| {
                    let ys: Vec<f64> = (0..n_grid.len()).map(|g| per_sample[s][g][k]).collect();
                    extrapolate(n_grid, &ys)
                })
                .collect()
        })
        .collect();
    let mut levels = Vec::with_capacity(kmax);
    for k in 0..kmax {
        let means: Vec<f64> = values[k].iter().map(|v| mean_and_se(v).0).collect();
        let deltas: Vec<f64> = sample_delta.iter().map(|d| d[k].0).collect();
        let mus: Vec<f64> = sample_delta
            .iter()
            .map(|d| if k == 0 { d[0].0 } else { d[k].0 - d[k - 1].0 })
            .collect();
        let (delta, mut delta_se) = mean_and_se(&deltas);
        let (mu, mut mu_se) = mean_and_se(&mus);
        if ns == 1 {
            delta_se = sample_delta[0][k].1;
            mu_se = if k == 0 {
                delta_se
            } else {
                let a = sample_delta[0][k - 1].1;
                (delta_se * delta_se + a * a).sqrt()
            };
        }
        let mu = if mu.is_nan() && delta == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            mu
        };
        let fekete_bound = means.iter().copied().fold(f64::INFINITY, f64::min);
        let fekete_ok = !(delta > fekete_bound + 3.0 * delta_se.max(0.0) + 1e-9);
        levels.push(SpectrumLevel {
            k: k + 1,
            means,
            delta,
            delta_se,
            mu,
            mu_se,
            fekete_bound,
            fekete_ok,
            graded_samples: graded_samples[k],
        });
    }
    Ok(SpectrumReport {
        kmax,
        n_grid: n_grid.to_vec(),
        n_samples: ns,
        levels,
        values,
    })
}

/// Independent sample trajectories long enough for the grid.
pub fn sample_trajectories(
    base: &BaseProcess,
    n_max: usize,
    n_samples: usize,
    two_sided: bool,
) -> Result<Vec<Trajectory>> {
    (0..n_samples as u64)
        .into_par_iter()
        .map(|i| sample_trajectory(base, n_max, two_sided, i))
        .collect()
}

pub fn estimate_spectrum(
    gen: &Generator,
    base: &BaseProcess,
    kmax: usize,
    n_grid: &[usize],
    n_samples: usize,
) -> Result<SpectrumReport> {
    estimate_spectrum_with(
        gen,
        base,
        kmax,
        n_grid,
        n_samples,
        &SpectrumOptions::default(),
    )
}

pub fn estimate_spectrum_with(
    gen: &Generator,
    base: &BaseProcess,
    kmax: usize,
    n_grid: &[usize],
    n_samples: usize,
    opts: &SpectrumOptions,
) -> Result<SpectrumReport> {
    check_grid(n_grid)?;
    if base.alphabet_size() != gen.alphabet_size() {
        return Err(Error::InvalidBase(format!(
            "base alphabet has {} symbols but the generator has {} matrices",
            base.alphabet_size(),
            gen.alphabet_size()
        )));
    }
    let n_max = *n_grid.last().unwrap();
    let n_samples = if matches!(base, BaseProcess::Fixed { .. }) {
        1
    } else {
        n_samples.max(1)
    };
    let trajs = sample_trajectories(base, n_max, n_samples, opts.two_sided)?;
    estimate_spectrum_on(gen, &trajs, kmax, n_grid, opts)
}

/// Spectrum of the adjoint cocycle, driven along the reversed halves of two-sided samples.
pub fn estimate_dual_spectrum_with(
    gen: &Generator,
    base: &BaseProcess,
    kmax: usize,
    n_grid: &[usize],
    n_samples: usize,
    opts: &SpectrumOptions,
) -> Result<SpectrumReport> {
    check_grid(n_grid)?;
    let n_max = *n_grid.last().unwrap();
    let n_samples = if matches!(base, BaseProcess::Fixed { .. }) {
        1
    } else {
        n_samples.max(1)
    };
    let trajs = sample_trajectories(base, n_max, n_samples, true)?;
    let dual = gen.dual();
    let reversed = trajs
        .iter()
        .map(Trajectory::reversed)
        .collect::<Result<Vec<_>>>()?;
    estimate_spectrum_on(&dual, &reversed, kmax, n_grid, opts)
}

/// Upper bound for the index-of-compactness rate: the top exponent of the tail block.
/// Covering the finite-dimensional head by finitely many balls of any radius leaves the
/// tail norm as the covering radius. `-inf` when the tail is empty.
pub fn kappa_upper(
    gen: &Generator,
    base: &BaseProcess,
    n_grid: &[usize],
    n_samples: usize,
) -> Result<f64> {
    Ok(kappa_upper_report(gen, base, n_grid, n_samples)?.0)
}

/// `kappa_upper` with its standard error.
pub fn kappa_upper_report(
    gen: &Generator,
    base: &BaseProcess,
    n_grid: &[usize],
    n_samples: usize,
) -> Result<(f64, f64)> {
    match gen.tail()? {
        None => Ok((f64::NEG_INFINITY, 0.0)),
        Some(tail) => {
            let r = estimate_spectrum(&tail, base, 1, n_grid, n_samples)?;
            Ok((r.levels[0].delta, r.levels[0].delta_se))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperednessReport {
    /// `max g(n)/n` over the tail window `n >= n_from`.
    #[serde(with = "float")]
    pub max_ratio: f64,
    pub n_from: usize,
    #[serde(with = "float")]
    pub threshold: f64,
    pub pass: bool,
    /// `max g(n)/n` over successive dyadic windows `[2^j, 2^{j+1})`.
    #[serde(with = "floats")]
    pub window_maxima: Vec<f64>,
}

/// Checks `g(n)/n -> 0` along a series `g(0), g(1), ...`: the maximum of `g(n)/n` over the
/// second half of the series must stay below `threshold`.
pub fn temperedness_diagnostic(series: &[f64], threshold: f64) -> TemperednessReport {
    let n = series.len();
    let n_from = (n / 2).max(1);
    let ratio = |i: usize| series[i] / i as f64;
    let max_ratio = (n_from..n).map(ratio).fold(f64::NEG_INFINITY, f64::max);
    let mut window_maxima = Vec::new();
    let mut lo = 1usize;
    while lo < n {
        let hi = (2 * lo).min(n);
        window_maxima.push((lo..hi).map(ratio).fold(f64::NEG_INFINITY, f64::max));
        lo = hi;
    }
    TemperednessReport {
        max_ratio,
        n_from,
        threshold,
        pass: max_ratio < threshold,
        window_maxima,
    }
}

/// `g(i) = max_{p >= 0} sum_{j=i}^{i+p-1} (log ||L_{sigma^j omega}|| - rate)` for
/// `i = 0..n`, truncated at the end of the trajectory. This dominates the excess growth
/// `sup_p log ||L^{(p)}_{sigma^i omega}|| - p rate` and satisfies
/// `g(i) <= max(h_i, 0) + g(i + 1)` with `h_i = log ||L_{sigma^i omega}|| - rate`.
pub fn excess_growth_series(
    gen: &Generator,
    traj: &Trajectory,
    rate: f64,
    n: usize,
) -> Result<Vec<f64>> {
    let len = traj.forward.len();
    if n > len {
        return Err(Error::OutOfRange {
            start: 0,
            end: n as i64,
            lo: 0,
            hi: len as i64,
        });
    }
    gen.check_alphabet(traj)?;
    let log_norms: Vec<f64> = (0..gen.alphabet_size())
        .map(|s| gen.map(s).op_norm().1.ln())
        .collect();
    let mut g = vec![0.0; len + 1];
    for i in (0..len).rev() {
        g[i] = (log_norms[traj.forward[i]] - rate + g[i + 1]).max(0.0);
    }
    g.truncate(n);
    Ok(g)
}
