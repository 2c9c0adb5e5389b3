//! Seeded sweep of the volume inequalities over random operators.

use met_core::inequalities::{verify_volume_inequalities, InequalityCheck, VerifyOptions};
use met_core::linalg::rng_for;
use met_core::{Exponent, LinearMap, NormedSpace, Subspace};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

pub const SELFCHECK_VERSION: u32 = 1;
pub const DEFAULT_OPS: usize = 200;
/// Failures listed with their witnesses; the rest are only counted.
const LISTED_FAILURES: usize = 10;

/// One random instance: `T`, `S` on `l^p(R^dim)`, a subspace `V` and the top order.
#[derive(Clone, Debug)]
pub struct RandomOp {
    pub index: usize,
    pub t: LinearMap,
    pub s: LinearMap,
    pub v: Subspace,
    pub kmax: usize,
}

impl RandomOp {
    pub fn p(&self) -> Exponent {
        self.t.domain().p()
    }

    pub fn dim(&self) -> usize {
        self.t.domain().dim()
    }
}

const EXPONENTS: [Exponent; 3] = [Exponent::ONE, Exponent::TWO, Exponent::INF];

fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// The `index`-th operator of the sweep for `seed`: `p` cycles through 1, 2, inf, the
/// dimension is at most `max_dim` and the order at most 3.
pub fn random_op(seed: u64, index: usize, max_dim: usize) -> RandomOp {
    let mut rng = rng_for(seed, index as u64);
    let space = NormedSpace::new(rng.gen_range(1..=max_dim), EXPONENTS[index % 3]).unwrap();
    let d = space.dim();
    let t = LinearMap::on(space, gaussian(&mut rng, d, d)).unwrap();
    let s = LinearMap::on(space, gaussian(&mut rng, d, d)).unwrap();
    let m = rng.gen_range(1..=d);
    let v = if m == d {
        Subspace::full(space)
    } else {
        let vs: Vec<DVector<f64>> = (0..m)
            .map(|_| gaussian(&mut rng, d, 1).column(0).into_owned())
            .collect();
        Subspace::span(space, &vs).unwrap()
    };
    let kmax = rng.gen_range(1..=d.min(3));
    RandomOp {
        index,
        t,
        s,
        v,
        kmax,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SelfcheckFailure {
    pub op: usize,
    pub p: Exponent,
    pub dim: usize,
    pub kmax: usize,
    pub check: InequalityCheck,
}

#[derive(Clone, Debug, Serialize)]
pub struct SelfcheckReport {
    pub format_version: u32,
    pub seed: u64,
    pub ops: usize,
    pub checks: usize,
    pub failure_count: usize,
    pub failures: Vec<SelfcheckFailure>,
    pub errors: Vec<String>,
    pub pass: bool,
}

impl SelfcheckReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Runs the sweep. `rel_slack` below zero tightens every comparison and is how a corrupted
/// tolerance is simulated.
pub fn selfcheck(seed: u64, ops: usize, rel_slack: f64) -> SelfcheckReport {
    let opts = VerifyOptions {
        rel_slack,
        ..VerifyOptions::default()
    };
    let results: Vec<_> = (0..ops)
        .into_par_iter()
        .map(|i| {
            let op = random_op(seed, i, 5);
            let r = verify_volume_inequalities(&op.t, &op.s, &op.v, op.kmax, &opts);
            (op, r)
        })
        .collect();
    let mut checks = 0;
    let mut failures = Vec::new();
    let mut failure_count = 0;
    let mut errors = Vec::new();
    for (op, r) in results {
        match r {
            Ok(rep) => {
                checks += rep.checks.len();
                for c in rep.failures() {
                    failure_count += 1;
                    if failures.len() < LISTED_FAILURES {
                        failures.push(SelfcheckFailure {
                            op: op.index,
                            p: op.p(),
                            dim: op.dim(),
                            kmax: op.kmax,
                            check: c.clone(),
                        });
                    }
                }
            }
            Err(e) => errors.push(format!("op {}: {e}", op.index)),
        }
    }
    SelfcheckReport {
        format_version: SELFCHECK_VERSION,
        seed,
        ops,
        checks,
        failure_count,
        pass: failure_count == 0 && errors.is_empty(),
        failures,
        errors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ops_are_reproducible_and_in_range() {
        for i in 0..30 {
            let a = random_op(9, i, 5);
            let b = random_op(9, i, 5);
            assert_eq!(a.t.matrix(), b.t.matrix());
            assert!(a.dim() <= 5 && a.kmax <= 3 && a.kmax <= a.dim());
            assert_eq!(a.p(), EXPONENTS[i % 3]);
        }
    }

    #[test]
    fn corrupted_tolerance_produces_witnessed_failures() {
        let r = selfcheck(1, 6, -0.5);
        assert!(!r.pass);
        assert!(r.failure_count > 0);
        assert!(!r.failures[0].check.witnesses.is_null());
    }
}
