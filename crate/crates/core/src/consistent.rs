//! Consistent sequences of unit vectors and unit functionals for one operator.
//!
//! At step `k` a k-dimensional subspace `V` with near-maximal minimal gain is chosen, `x_k`
//! is a unit vector of `V` whose image is as far as possible from the earlier images, and
//! `theta_k` vanishes on the earlier images while norming `T x_k`. The matrix
//! `(theta_i(T x_j))` is then lower triangular with diagonal `theta_k(T x_k)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::inequalities::{holds, InequalityCheck, InequalityReport};
use crate::linalg::{column_matrix, det, lstsq, orthonormal_basis};
use crate::serde_ext::vec_list;
use crate::space::Subspace;
use crate::volume::{f_k_with_frame, min_gain, LinearMap, Mode, VolumeEnclosure, VolumeOptions};

/// Consistent sequences with their determinant and expansion certificates; index `k - 1`
/// holds the values for the first `k` elements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistentSeq {
    #[serde(with = "vec_list")]
    pub xs: Vec<DVector<f64>>,
    #[serde(with = "vec_list")]
    pub thetas: Vec<DVector<f64>>,
    pub dets: Vec<f64>,
    pub expansion_certs: Vec<f64>,
    /// Enclosures of `F_1, F_2, ...` used for the guarantees.
    pub gains: Vec<VolumeEnclosure>,
    /// First order at which the operator has no k-dimensional expanding subspace.
    pub degenerate_at: Option<usize>,
}

impl ConsistentSeq {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// `2^-k prod_{i<=k} F_i.lo`.
    pub fn determinant_bound(&self, k: usize) -> f64 {
        0.5f64.powi(k as i32) * self.gains[..k].iter().map(|g| g.lo).product::<f64>()
    }

    /// `4^-k F_k.lo`.
    pub fn expansion_bound(&self, k: usize) -> f64 {
        0.25f64.powi(k as i32) * self.gains[k - 1].lo
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConsistentOptions {
    pub volume: VolumeOptions,
    /// Grid points for the certified minimal gains.
    pub grid_budget: usize,
}

impl Default for ConsistentOptions {
    fn default() -> Self {
        ConsistentOptions {
            volume: VolumeOptions::default(),
            grid_budget: 20_000,
        }
    }
}

fn gain_mode(t: &LinearMap) -> Mode {
    if t.domain().p().is_two() && t.codomain().p().is_two() {
        Mode::EuclideanExact
    } else {
        Mode::Optimize
    }
}

/// Lower bound of the minimal gain of `T` on `span(xs)`.
pub fn span_expansion(t: &LinearMap, xs: &[DVector<f64>], budget: usize) -> f64 {
    let dim = t.domain().dim();
    let q = orthonormal_basis(&column_matrix(dim, xs), 1e-12);
    if q.ncols() < xs.len() {
        return 0.0;
    }
    min_gain(t, &q, budget).0
}

pub fn build(t: &LinearMap, kmax: usize) -> Result<ConsistentSeq> {
    build_with(t, kmax, &ConsistentOptions::default())
}

pub fn build_with(t: &LinearMap, kmax: usize, opts: &ConsistentOptions) -> Result<ConsistentSeq> {
    if t.restriction().is_some() {
        return Err(Error::Precondition(
            "consistent sequences need an unrestricted map".into(),
        ));
    }
    let dim = t.domain().dim();
    if kmax == 0 || kmax > dim {
        return Err(Error::OrderTooLarge { k: kmax, dim });
    }
    let mode = gain_mode(t);
    let codomain = *t.codomain();
    let mut seq = ConsistentSeq {
        xs: Vec::new(),
        thetas: Vec::new(),
        dets: Vec::new(),
        expansion_certs: Vec::new(),
        gains: Vec::new(),
        degenerate_at: None,
    };
    let mut images: Vec<DVector<f64>> = Vec::new();
    for k in 1..=kmax {
        let (gain, witness) = f_k_with_frame(t, k, mode, &opts.volume)?;
        if gain.lo <= 0.0 || witness.frame.ncols() < k {
            seq.degenerate_at = Some(k);
            break;
        }
        let frame = witness.frame;
        let tq = t.matrix() * &frame;
        let image = Subspace::from_columns(codomain, &tq);
        let earlier = Subspace::from_columns(codomain, &column_matrix(codomain.dim(), &images));
        let (z, _) = image.riesz_point(&earlier)?;
        let x = &frame * lstsq(&tq, &z);
        let x = t.domain().normalize(&x).ok_or(Error::Degenerate { k })?;
        let tx = t.apply(&x);
        let (theta, _) = codomain.annihilating_functional(&tx, earlier.basis())?;
        seq.gains.push(gain);
        seq.xs.push(x);
        seq.thetas.push(theta);
        images.push(tx);
        seq.dets.push(det(&pairing(t, &seq.xs, &seq.thetas)));
        seq.expansion_certs
            .push(span_expansion(t, &seq.xs, opts.grid_budget));
    }
    Ok(seq)
}

/// The matrix `(theta_i(T x_j))`.
pub fn pairing(t: &LinearMap, xs: &[DVector<f64>], thetas: &[DVector<f64>]) -> DMatrix<f64> {
    let k = xs.len().min(thetas.len());
    let images: Vec<_> = xs[..k].iter().map(|x| t.apply(x)).collect();
    DMatrix::from_fn(k, k, |i, j| thetas[i].dot(&images[j]))
}

/// Recomputes every certificate of `seq` from scratch and checks the guarantees.
pub fn certify(t: &LinearMap, seq: &ConsistentSeq) -> InequalityReport {
    certify_with(t, seq, &ConsistentOptions::default())
}

pub fn certify_with(
    t: &LinearMap,
    seq: &ConsistentSeq,
    opts: &ConsistentOptions,
) -> InequalityReport {
    let mut checks = Vec::new();
    let mut push = |name: String, lhs: f64, rhs: f64, witnesses| {
        checks.push(InequalityCheck {
            pass: holds(lhs, rhs, 0.0),
            name,
            lhs,
            rhs,
            witnesses,
        });
    };
    let norm_t = t.op_norm().1;
    let n = seq.len().min(seq.thetas.len()).min(seq.gains.len());
    for k in 1..=n {
        let u = pairing(t, &seq.xs[..k], &seq.thetas[..k]);
        let d = det(&u);
        let stored = seq.dets.get(k - 1).copied().unwrap_or(f64::NAN);
        push(
            format!("determinant-recomputed[k={k}]"),
            (d - stored).abs(),
            1e-10 * d.abs().max(stored.abs()).max(f64::MIN_POSITIVE),
            json!({"k": k, "recomputed": d, "stored": stored}),
        );
        let bound = seq.determinant_bound(k);
        push(
            format!("determinant-bound[k={k}]"),
            bound,
            d,
            json!({"k": k, "gains_lo": seq.gains[..k].iter().map(|g| g.lo).collect::<Vec<_>>()}),
        );
        let x = &seq.xs[k - 1];
        push(
            format!("unit-vector[k={k}]"),
            (t.domain().norm(x) - 1.0).abs(),
            1e-10,
            json!({"k": k}),
        );
        let theta = &seq.thetas[k - 1];
        push(
            format!("unit-functional[k={k}]"),
            (t.codomain().dual_norm(theta) - 1.0).abs(),
            1e-10,
            json!({"k": k}),
        );
        let leak = (0..k - 1)
            .map(|j| u[(k - 1, j)].abs())
            .fold(0.0f64, f64::max);
        push(
            format!("annihilation[k={k}]"),
            leak,
            1e-10 * norm_t.max(f64::MIN_POSITIVE),
            json!({"k": k, "operator_norm": norm_t}),
        );
        let cert = span_expansion(t, &seq.xs[..k], opts.grid_budget);
        push(
            format!("expansion-bound[k={k}]"),
            seq.expansion_bound(k),
            cert,
            json!({"k": k, "recomputed": cert,
                   "stored": seq.expansion_certs.get(k - 1).copied().unwrap_or(f64::NAN)}),
        );
    }
    InequalityReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::singular_values;
    use crate::space::{Exponent, NormedSpace};

    fn op(p: Exponent, d: usize, rows: &[f64]) -> LinearMap {
        let s = NormedSpace::new(d, p).unwrap();
        LinearMap::on(s, DMatrix::from_row_slice(d, d, rows)).unwrap()
    }

    #[test]
    fn diagonal_sequences_are_coordinate_vectors() {
        let t = op(
            Exponent::TWO,
            3,
            &[3.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0],
        );
        let seq = build(&t, 3).unwrap();
        for i in 0..3 {
            let mut e = DVector::zeros(3);
            e[i] = 1.0;
            let sx = seq.xs[i].dot(&e).signum();
            let st = seq.thetas[i].dot(&e).signum();
            assert!((&seq.xs[i] * sx - &e).amax() < 1e-9, "{:?}", seq.xs[i]);
            assert!(
                (&seq.thetas[i] * st - &e).amax() < 1e-9,
                "{:?}",
                seq.thetas[i]
            );
        }
        for (d, want) in seq.dets.iter().zip([3.0, 6.0, 6.0]) {
            assert!((d.abs() - want).abs() < 1e-9, "{:?}", seq.dets);
        }
        assert!((seq.determinant_bound(3) - 0.75).abs() < 1e-12);
        let r = certify(&t, &seq);
        assert!(r.all_pass(), "{:?}", r.failures().collect::<Vec<_>>());
    }

    #[test]
    fn zero_map_is_degenerate() {
        let t = op(Exponent::TWO, 2, &[0.0; 4]);
        let seq = build(&t, 2).unwrap();
        assert_eq!(seq.degenerate_at, Some(1));
        assert!(seq.is_empty() && seq.dets.is_empty());
    }

    #[test]
    fn jordan_block_determinant() {
        let t = op(Exponent::TWO, 2, &[2.0, 1.0, 0.0, 1.0]);
        let seq = build(&t, 2).unwrap();
        assert!((seq.dets[1].abs() - 2.0).abs() < 1e-9);
        assert!((seq.determinant_bound(2) - 0.5).abs() < 1e-9);
        let s2 = singular_values(t.matrix())[1];
        assert!((seq.expansion_certs[1] - s2).abs() < 1e-9);
        let r = certify(&t, &seq);
        assert!(r.all_pass());
    }

    #[test]
    fn duplicated_vector_fails_certification() {
        let t = op(
            Exponent::TWO,
            3,
            &[3.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0],
        );
        let mut seq = build(&t, 3).unwrap();
        seq.xs[1] = seq.xs[0].clone();
        let r = certify(&t, &seq);
        let c = r
            .checks
            .iter()
            .find(|c| c.name == "determinant-bound[k=2]")
            .unwrap();
        assert!(!c.pass && c.rhs.abs() < 1e-12);
    }

    #[test]
    fn polyhedral_sequences_certify() {
        for p in [Exponent::ONE, Exponent::INF] {
            let t = op(p, 3, &[1.0, -2.0, 0.5, 0.3, 1.0, 1.0, 0.0, 0.7, -1.2]);
            let seq = build(&t, 3).unwrap();
            assert_eq!(seq.len(), 3);
            let r = certify(&t, &seq);
            assert!(
                r.all_pass(),
                "p={p}: {:?}",
                r.failures().collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn serializes_as_coordinate_arrays() {
        let t = op(Exponent::TWO, 2, &[2.0, 1.0, 0.0, 1.0]);
        let seq = build(&t, 2).unwrap();
        let v = serde_json::to_value(&seq).unwrap();
        assert_eq!(v["xs"].as_array().unwrap().len(), 2);
        let back: ConsistentSeq = serde_json::from_value(v).unwrap();
        assert_eq!(back, seq);
    }
}
