//! Exact polyhedral subproblems for the l^1 and l^inf norms.
//!
//! Best approximation from a span is solved by enumerating the vertices the
//! linear program can stop at; the simplex solver from `microlp` handles the
//! ball-constrained variants and acts as the fallback when enumeration is too
//! large.

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};

use crate::linalg::{binomial, combinations, solve_square};

/// Above this many candidate vertices the simplex solver is used instead.
pub const ENUMERATION_LIMIT: usize = 20_000;

fn l1(v: &DVector<f64>) -> f64 {
    v.iter().map(|a| a.abs()).sum()
}

fn linf(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, a| m.max(a.abs()))
}

fn rows(b: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), b.ncols(), |i, j| b[(idx[i], j)])
}

fn least_squares_start(b: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    crate::linalg::lstsq(b, x)
}

/// `min_c ||x - B c||_1` for `B` of full column rank. Returns (value, c).
pub fn l1_fit(b: &DMatrix<f64>, x: &DVector<f64>) -> (f64, DVector<f64>) {
    let (d, k) = b.shape();
    if k == 0 {
        return (l1(x), DVector::zeros(0));
    }
    if binomial(d, k) > ENUMERATION_LIMIT {
        return lp_fit(true, b, x);
    }
    let mut best_c = least_squares_start(b, x);
    let mut best = l1(&(x - b * &best_c));
    // Some optimal vertex interpolates x on k independent rows.
    for s in combinations(d, k) {
        let bs = rows(b, &s);
        let xs = DVector::from_fn(k, |i, _| x[s[i]]);
        if let Some(c) = solve_square(bs, &xs) {
            let v = l1(&(x - b * &c));
            if v < best {
                best = v;
                best_c = c;
            }
        }
    }
    (best, best_c)
}

/// `min_c ||x - B c||_inf` for `B` of full column rank. Returns (value, c).
pub fn linf_fit(b: &DMatrix<f64>, x: &DVector<f64>) -> (f64, DVector<f64>) {
    let (d, k) = b.shape();
    if k == 0 {
        return (linf(x), DVector::zeros(0));
    }
    if k >= d {
        let c = least_squares_start(b, x);
        return (linf(&(x - b * &c)), c);
    }
    if binomial(d, k + 1).saturating_mul(1 << k.min(30)) > ENUMERATION_LIMIT {
        return lp_fit(false, b, x);
    }
    let mut best_c = least_squares_start(b, x);
    let mut best = linf(&(x - b * &best_c));
    // Vertices of {(c,t) : |x_i - B_i c| <= t} have k+1 active rows
    // B_i c + s_i t = x_i; the global sign of s only flips t.
    for s in combinations(d, k + 1) {
        for mask in 0..(1usize << k) {
            let mut a = DMatrix::zeros(k + 1, k + 1);
            let mut rhs = DVector::zeros(k + 1);
            for (r, &i) in s.iter().enumerate() {
                for j in 0..k {
                    a[(r, j)] = b[(i, j)];
                }
                let sign = if r == 0 || mask & (1 << (r - 1)) == 0 {
                    1.0
                } else {
                    -1.0
                };
                a[(r, k)] = sign;
                rhs[r] = x[i];
            }
            if let Some(sol) = solve_square(a, &rhs) {
                let c = sol.rows(0, k).into_owned();
                let v = linf(&(x - b * &c));
                if v < best {
                    best = v;
                    best_c = c;
                }
            }
        }
    }
    (best, best_c)
}

/// Simplex formulation of the same fits; `one` selects l^1, otherwise l^inf.
pub fn lp_fit(one: bool, b: &DMatrix<f64>, x: &DVector<f64>) -> (f64, DVector<f64>) {
    let (d, k) = b.shape();
    let mut pb = Problem::new(OptimizationDirection::Minimize);
    let c: Vec<_> = (0..k)
        .map(|_| pb.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY)))
        .collect();
    let t = if one {
        None
    } else {
        Some(pb.add_var(1.0, (0.0, f64::INFINITY)))
    };
    for i in 0..d {
        let slack = match t {
            Some(t) => t,
            None => pb.add_var(1.0, (0.0, f64::INFINITY)),
        };
        // x_i - B_i c <= slack  and  B_i c - x_i <= slack
        let mut lo: Vec<_> = (0..k).map(|j| (c[j], b[(i, j)])).collect();
        lo.push((slack, 1.0));
        pb.add_constraint(lo.as_slice(), ComparisonOp::Ge, x[i]);
        let mut hi: Vec<_> = (0..k).map(|j| (c[j], b[(i, j)])).collect();
        hi.push((slack, -1.0));
        pb.add_constraint(hi.as_slice(), ComparisonOp::Le, x[i]);
    }
    match pb.solve() {
        Ok(sol) => {
            let cv = DVector::from_fn(k, |j, _| sol[c[j]]);
            let r = x - b * &cv;
            let v = if one { l1(&r) } else { linf(&r) };
            (v, cv)
        }
        Err(_) => {
            let cv = least_squares_start(b, x);
            let r = x - b * &cv;
            (if one { l1(&r) } else { linf(&r) }, cv)
        }
    }
}

/// `min { ||x - Q c|| : ||Q c|| <= 1 }` in l^1 (`one`) or l^inf.
pub fn section_distance(one: bool, q: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    let (d, k) = q.shape();
    let norm = |v: &DVector<f64>| if one { l1(v) } else { linf(v) };
    if k == 0 {
        return norm(x);
    }
    let mut pb = Problem::new(OptimizationDirection::Minimize);
    let c: Vec<_> = (0..k)
        .map(|_| pb.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY)))
        .collect();
    let t = if one {
        None
    } else {
        Some(pb.add_var(1.0, (0.0, f64::INFINITY)))
    };
    let mut ball_terms = Vec::new();
    for i in 0..d {
        let row: Vec<_> = (0..k).map(|j| (c[j], q[(i, j)])).collect();
        let slack = match t {
            Some(t) => t,
            None => pb.add_var(1.0, (0.0, f64::INFINITY)),
        };
        let mut lo = row.clone();
        lo.push((slack, 1.0));
        pb.add_constraint(lo.as_slice(), ComparisonOp::Ge, x[i]);
        let mut hi = row.clone();
        hi.push((slack, -1.0));
        pb.add_constraint(hi.as_slice(), ComparisonOp::Le, x[i]);
        if one {
            let a = pb.add_var(0.0, (0.0, f64::INFINITY));
            let mut up = row.clone();
            up.push((a, -1.0));
            pb.add_constraint(up.as_slice(), ComparisonOp::Le, 0.0);
            let mut dn = row;
            dn.push((a, 1.0));
            pb.add_constraint(dn.as_slice(), ComparisonOp::Ge, 0.0);
            ball_terms.push((a, 1.0));
        } else {
            pb.add_constraint(row.as_slice(), ComparisonOp::Le, 1.0);
            pb.add_constraint(row.as_slice(), ComparisonOp::Ge, -1.0);
        }
    }
    if one {
        pb.add_constraint(ball_terms.as_slice(), ComparisonOp::Le, 1.0);
    }
    match pb.solve() {
        Ok(sol) => {
            let mut cv = DVector::from_fn(k, |j, _| sol[c[j]]);
            let y = q * &cv;
            // Pull tiny constraint violations back inside the ball.
            let ny = norm(&y);
            if ny > 1.0 {
                cv /= ny;
            }
            norm(&(x - q * &cv))
        }
        Err(_) => norm(x),
    }
}

/// A functional with dual-norm at most one, vanishing on span(Q), maximizing `theta . y`.
/// `one` means the primal norm is l^1 (so the functional lives in l^inf).
pub fn annihilating_functional(
    one: bool,
    q: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Option<DVector<f64>> {
    let (d, k) = q.shape();
    let mut pb = Problem::new(OptimizationDirection::Maximize);
    let theta: Vec<Vec<(microlp::Variable, f64)>> = if one {
        (0..d)
            .map(|i| vec![(pb.add_var(y[i], (-1.0, 1.0)), 1.0)])
            .collect()
    } else {
        (0..d)
            .map(|i| {
                let a = pb.add_var(y[i], (0.0, f64::INFINITY));
                let b = pb.add_var(-y[i], (0.0, f64::INFINITY));
                vec![(a, 1.0), (b, -1.0)]
            })
            .collect()
    };
    for j in 0..k {
        let expr: Vec<_> = (0..d)
            .flat_map(|i| theta[i].iter().map(move |&(v, s)| (v, s * q[(i, j)])))
            .collect();
        pb.add_constraint(expr.as_slice(), ComparisonOp::Eq, 0.0);
    }
    if !one {
        let expr: Vec<_> = theta
            .iter()
            .flat_map(|t| t.iter().map(|&(v, _)| (v, 1.0)))
            .collect();
        pb.add_constraint(expr.as_slice(), ComparisonOp::Le, 1.0);
    }
    let sol = pb.solve().ok()?;
    Some(DVector::from_fn(d, |i, _| {
        theta[i].iter().map(|&(v, s)| s * sol[v]).sum()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rng_for;
    use rand_distr::{Distribution, StandardNormal};

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_for(seed, 0);
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn enumeration_agrees_with_simplex() {
        for seed in 0..40 {
            let d = 2 + (seed as usize % 5);
            let k = 1 + (seed as usize % (d - 1));
            let b = random(d, k, seed);
            let x = random(d, 1, seed + 1000).column(0).into_owned();
            let (e1, _) = l1_fit(&b, &x);
            let (s1, _) = lp_fit(true, &b, &x);
            assert!((e1 - s1).abs() <= 1e-9 * (1.0 + s1), "l1 {e1} vs {s1}");
            let (ei, _) = linf_fit(&b, &x);
            let (si, _) = lp_fit(false, &b, &x);
            assert!((ei - si).abs() <= 1e-9 * (1.0 + si), "linf {ei} vs {si}");
        }
    }

    #[test]
    fn unit_square_examples() {
        let b = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let x = DVector::from_vec(vec![1.0, 1.0]);
        assert!((l1_fit(&b, &x).0 - 1.0).abs() < 1e-15);
        assert!((linf_fit(&b, &x).0 - 1.0).abs() < 1e-15);
        // Along the diagonal the l^inf residual can be split evenly.
        let b = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let x = DVector::from_vec(vec![1.0, 0.0]);
        assert!((linf_fit(&b, &x).0 - 0.5).abs() < 1e-15);
        assert!((l1_fit(&b, &x).0 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn section_distance_respects_ball() {
        let q = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let x = DVector::from_vec(vec![3.0, 0.0]);
        assert!((section_distance(false, &q, &x) - 2.0).abs() < 1e-12);
        assert!((section_distance(true, &q, &x) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn functional_attains_distance() {
        for seed in 0..20 {
            let d = 3 + (seed as usize % 3);
            let q = random(d, 2, seed);
            let y = random(d, 1, seed + 77).column(0).into_owned();
            for one in [true, false] {
                let th = annihilating_functional(one, &q, &y).unwrap();
                let dist = if one {
                    l1_fit(&q, &y).0
                } else {
                    linf_fit(&q, &y).0
                };
                assert!((th.dot(&y) - dist).abs() < 1e-8 * (1.0 + dist));
                assert!((q.transpose() * &th).norm() < 1e-9);
            }
        }
    }
}
