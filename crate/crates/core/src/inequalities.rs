//! The inequalities relating `D_k`, `E_k` and `F_k`, evaluated on concrete maps.
//!
//! Every check compares a certified lower bound on one side with a certified upper bound
//! on the other, so a failure is a genuine violation rather than optimizer slack.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::Result;
use crate::linalg::{column_matrix, factorial};
use crate::space::Subspace;
use crate::volume::{
    d_k, d_k_t, e_k, f_k_with_frame, LinearMap, Mode, VolumeEnclosure, VolumeOptions,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
    pub witnesses: Value,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub checks: Vec<InequalityCheck>,
}

impl InequalityReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &InequalityCheck> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct VerifyOptions {
    pub volume: VolumeOptions,
    pub mode: Mode,
    /// Relative slack allowed on the right-hand side for rounding.
    pub rel_slack: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            volume: VolumeOptions::default(),
            mode: Mode::Optimize,
            rel_slack: 1e-9,
        }
    }
}

/// `lhs <= rhs` up to the relative slack (negative slack tightens the test).
pub fn holds(lhs: f64, rhs: f64, rel_slack: f64) -> bool {
    if lhs.is_nan() || rhs.is_nan() {
        return false;
    }
    if rhs.is_infinite() && rhs > 0.0 {
        return true;
    }
    lhs <= rhs + rel_slack * rhs.abs() + rel_slack.max(0.0) * 1e-6
}

fn enc(e: &VolumeEnclosure) -> Value {
    json!([e.lo, e.hi])
}

struct Collector {
    slack: f64,
    checks: Vec<InequalityCheck>,
}

impl Collector {
    fn push(&mut self, name: String, lhs: f64, rhs: f64, witnesses: Value) {
        let pass = holds(lhs, rhs, self.slack);
        self.checks.push(InequalityCheck {
            name,
            lhs,
            rhs,
            pass,
            witnesses,
        });
    }
}

struct Quantities {
    d: Vec<VolumeEnclosure>,
    e: Vec<VolumeEnclosure>,
    f: Vec<VolumeEnclosure>,
    frames: Vec<DMatrix<f64>>,
}

fn quantities(t: &LinearMap, kmax: usize, opts: &VerifyOptions) -> Result<Quantities> {
    let mode = opts.mode;
    let o = &opts.volume;
    let mut q = Quantities {
        d: vec![VolumeEnclosure::exact(1.0, mode)],
        e: vec![VolumeEnclosure::exact(1.0, mode)],
        f: vec![VolumeEnclosure::exact(f64::INFINITY, mode)],
        frames: vec![DMatrix::zeros(t.domain().dim(), 0)],
    };
    for k in 1..=kmax {
        q.d.push(d_k(t, k, mode, o)?);
        q.e.push(e_k(t, k, mode, o)?);
        let (f, w) = f_k_with_frame(t, k, mode, o)?;
        q.f.push(f);
        q.frames.push(w.frame);
    }
    Ok(q)
}

/// Unit vectors `v_1, ..., v_k` spanning `span(frame)` with each at distance (close to)
/// one from the span of its predecessors; returns the chain and those distances.
fn distance_chain(t: &LinearMap, frame: &DMatrix<f64>) -> Result<(Vec<DVector<f64>>, Vec<f64>)> {
    let space = *t.domain();
    let v = Subspace::from_columns(space, frame);
    let mut chain = Vec::new();
    let mut dists = Vec::new();
    for _ in 0..v.dim() {
        let w = Subspace::from_columns(space, &column_matrix(space.dim(), &chain));
        let (z, _) = v.riesz_point(&w)?;
        let (dist, _) = space.dist_enclosure(&z, w.basis());
        chain.push(z);
        dists.push(dist.min(1.0));
    }
    Ok((chain, dists))
}

/// Evaluates the volume inequalities for `T`, `S` (composed as `S∘T`) and the restriction
/// of `T` to `V`, for orders `1..=kmax`.
pub fn verify_volume_inequalities(
    t: &LinearMap,
    s: &LinearMap,
    v: &Subspace,
    kmax: usize,
    opts: &VerifyOptions,
) -> Result<InequalityReport> {
    let kmax = kmax.min(t.rank_domain());
    let mode = opts.mode;
    let o = &opts.volume;
    let mut out = Collector {
        slack: opts.rel_slack,
        checks: Vec::new(),
    };
    let tq = quantities(t, kmax, opts)?;
    let ts = t.dual()?;
    let dual_mode = if mode == Mode::Net && ts.domain().dim() > 4 {
        Mode::Optimize
    } else {
        mode
    };
    let st = s.compose(t)?;
    let m = v.codim();
    let tv = t.restrict(v)?;

    for k in 1..=kmax {
        let kf = factorial(k);
        let (d, e, f) = (&tq.d[k], &tq.e[k], &tq.f[k]);

        // D_k(S∘T) <= D_k(S) D_k(T)
        if k <= s.rank_domain() {
            let dst = d_k(&st, k, mode, o)?;
            let ds = d_k(s, k, mode, o)?;
            out.push(
                format!("submultiplicativity[k={k}]"),
                dst.lo,
                ds.hi * d.hi,
                json!({"k": k, "D_k(ST)": enc(&dst), "D_k(S)": enc(&ds), "D_k(T)": enc(d)}),
            );
        }

        // A k-dimensional subspace expanded by at least M gives D_k >= M^k, realized by a
        // chain of unit vectors at unit distance from their predecessors.
        let frame = &tq.frames[k];
        if frame.ncols() == k && f.lo > 0.0 {
            let (chain, dists) = distance_chain(t, frame)?;
            let attained = d_k_t(t, &chain)?;
            let bound = f.lo.powi(k as i32) * dists.iter().product::<f64>();
            out.push(
                format!("uniform-expansion[k={k}]"),
                bound,
                attained,
                json!({"k": k, "M": f.lo, "chain_distances": dists,
                       "chain": chain.iter().map(|c| c.as_slice().to_vec()).collect::<Vec<_>>()}),
            );
            out.push(
                format!("uniform-expansion-sup[k={k}]"),
                attained,
                d.hi,
                json!({"k": k, "D_k(T)": enc(d)}),
            );
        }

        // D_k(T) <= E_k(T) <= k! D_k(T), and the same for the adjoint.
        out.push(
            format!("volume-below-determinant[k={k}]"),
            d.lo,
            e.hi,
            json!({"k": k, "D_k(T)": enc(d), "E_k(T)": enc(e)}),
        );
        out.push(
            format!("determinant-below-volume[k={k}]"),
            e.lo,
            kf * d.hi,
            json!({"k": k, "D_k(T)": enc(d), "E_k(T)": enc(e), "factor": kf}),
        );
        let ds = d_k(&ts, k, dual_mode, o)?;
        let es = e_k(&ts, k, dual_mode, o)?;
        out.push(
            format!("adjoint-volume-below-determinant[k={k}]"),
            ds.lo,
            e.hi,
            json!({"k": k, "D_k(T*)": enc(&ds), "E_k(T)": enc(e)}),
        );
        out.push(
            format!("determinant-below-adjoint-volume[k={k}]"),
            e.lo,
            kf * ds.hi,
            json!({"k": k, "D_k(T*)": enc(&ds), "E_k(T)": enc(e), "factor": kf}),
        );
        out.push(
            format!("adjoint-determinant-below-volume[k={k}]"),
            es.lo,
            kf * ds.hi,
            json!({"k": k, "D_k(T*)": enc(&ds), "E_k(T*)": enc(&es), "factor": kf}),
        );
        out.push(
            format!("adjoint-determinant-equal[k={k}]"),
            e.lo.max(es.lo),
            e.hi.min(es.hi),
            json!({"k": k, "E_k(T)": enc(e), "E_k(T*)": enc(&es)}),
        );
        out.push(
            format!("adjoint-volume-upper[k={k}]"),
            ds.lo,
            kf * d.hi,
            json!({"k": k, "D_k(T)": enc(d), "D_k(T*)": enc(&ds), "factor": kf}),
        );
        out.push(
            format!("adjoint-volume-lower[k={k}]"),
            d.lo,
            kf * ds.hi,
            json!({"k": k, "D_k(T)": enc(d), "D_k(T*)": enc(&ds), "factor": kf,
                   "ratio": if d.lo > 0.0 { ds.lo / d.lo } else { f64::NAN }}),
        );

        // E_{k-1} F_k <= E_k <= k 2^{k-1} E_{k-1} F_k
        let ep = &tq.e[k - 1];
        let c4 = k as f64 * 2f64.powi(k as i32 - 1);
        out.push(
            format!("determinant-gain-lower[k={k}]"),
            ep.lo * f.lo,
            e.hi,
            json!({"k": k, "E_{k-1}": enc(ep), "F_k": enc(f), "E_k": enc(e)}),
        );
        out.push(
            format!("determinant-gain-upper[k={k}]"),
            e.lo,
            c4 * ep.hi * f.hi,
            json!({"k": k, "E_{k-1}": enc(ep), "F_k": enc(f), "E_k": enc(e), "factor": c4}),
        );

        // Iterating the previous pair: prod F_i <= E_k <= k! 2^{k(k-1)/2} prod F_i.
        let plo: f64 = (1..=k).map(|i| tq.f[i].lo).product();
        let phi: f64 = (1..=k).map(|i| tq.f[i].hi).product();
        let cc = kf * 2f64.powi((k * (k - 1) / 2) as i32);
        out.push(
            format!("gain-product-below-determinant[k={k}]"),
            plo,
            e.hi,
            json!({"k": k, "prod_F": [plo, phi], "E_k": enc(e)}),
        );
        out.push(
            format!("determinant-below-gain-product[k={k}]"),
            e.lo,
            cc * phi,
            json!({"k": k, "prod_F": [plo, phi], "E_k": enc(e), "factor": cc}),
        );

        if k >= 2 {
            let fp = &tq.f[k - 1];
            out.push(
                format!("gain-monotone[k={k}]"),
                f.lo,
                fp.hi,
                json!({"k": k, "F_k": enc(f), "F_{k-1}": enc(fp)}),
            );
        }

        // D_k(T) <= C D_m(T) D_{k-m}(T|_V) for V of codimension m < k.
        if k > m && k - m <= tv.rank_domain() {
            let dm = &tq.d[m];
            let dv = d_k(&tv, k - m, mode, o)?;
            let c6 = (2.0 * ((m as f64).sqrt() + 2.0)).powi(k as i32) * kf;
            out.push(
                format!("finite-codimension[k={k}]"),
                d.lo,
                c6 * dm.hi * dv.hi,
                json!({"k": k, "m": m, "D_k(T)": enc(d), "D_m(T)": enc(dm),
                       "D_{k-m}(T|V)": enc(&dv), "factor": c6}),
            );
        }
    }
    Ok(InequalityReport { checks: out.checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{Exponent, NormedSpace};

    fn diag(d: &[f64], p: Exponent) -> LinearMap {
        let s = NormedSpace::new(d.len(), p).unwrap();
        LinearMap::on(s, DMatrix::from_diagonal(&DVector::from_column_slice(d))).unwrap()
    }

    #[test]
    fn diagonal_passes_everything() {
        let t = diag(&[3.0, 2.0, 1.0], Exponent::TWO);
        let v = Subspace::span(
            *t.domain(),
            &[
                DVector::from_column_slice(&[1.0, 0.0, 0.0]),
                DVector::from_column_slice(&[0.0, 1.0, 1.0]),
            ],
        )
        .unwrap();
        let r = verify_volume_inequalities(&t, &t, &v, 3, &VerifyOptions::default()).unwrap();
        for c in &r.checks {
            assert!(c.pass, "{c:?}");
        }
        assert!(r
            .checks
            .iter()
            .any(|c| c.name.starts_with("finite-codimension")));
    }

    #[test]
    fn expanding_plane_gives_volume_bound() {
        let t = diag(&[5.0, 5.0, 0.1], Exponent::TWO);
        let v = Subspace::full(*t.domain());
        let r = verify_volume_inequalities(&t, &t, &v, 2, &VerifyOptions::default()).unwrap();
        let c = r
            .checks
            .iter()
            .find(|c| c.name == "uniform-expansion[k=2]")
            .unwrap();
        assert!(
            c.pass && (c.lhs - 25.0).abs() < 1e-9 && c.rhs >= 25.0 - 1e-9,
            "{c:?}"
        );
    }

    #[test]
    fn operator_norm_matches_adjoint() {
        let s = NormedSpace::euclidean(2).unwrap();
        let t = LinearMap::on(s, DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 1.0])).unwrap();
        let v = Subspace::full(s);
        let r = verify_volume_inequalities(&t, &t, &v, 1, &VerifyOptions::default()).unwrap();
        let c = r
            .checks
            .iter()
            .find(|c| c.name == "adjoint-volume-lower[k=1]")
            .unwrap();
        assert!(c.pass);
        assert!((c.witnesses["ratio"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn negative_slack_exposes_tight_checks() {
        let t = diag(&[3.0, 2.0, 1.0], Exponent::TWO);
        let v = Subspace::full(*t.domain());
        let opts = VerifyOptions {
            rel_slack: -0.5,
            ..VerifyOptions::default()
        };
        let r = verify_volume_inequalities(&t, &t, &v, 2, &opts).unwrap();
        assert!(!r.all_pass());
    }

    #[test]
    fn polyhedral_spaces_pass() {
        for p in [Exponent::ONE, Exponent::INF] {
            let s = NormedSpace::new(3, p).unwrap();
            let t = LinearMap::on(
                s,
                DMatrix::from_row_slice(3, 3, &[1.0, -2.0, 0.5, 0.3, 1.0, 1.0, 0.0, 0.7, -1.2]),
            )
            .unwrap();
            let u = LinearMap::on(
                s,
                DMatrix::from_row_slice(3, 3, &[0.2, 1.0, 0.0, -1.0, 0.4, 0.9, 0.5, 0.0, 1.0]),
            )
            .unwrap();
            let v = Subspace::span(s, &[DVector::from_column_slice(&[1.0, 1.0, 0.0])])
                .unwrap()
                .annihilator()
                .with_space(s)
                .unwrap();
            let r = verify_volume_inequalities(&t, &u, &v, 3, &VerifyOptions::default()).unwrap();
            for c in &r.checks {
                assert!(c.pass, "p={p}: {c:?}");
            }
        }
    }
}
