//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::process::Command;
use std::time::{Duration, Instant};

use met_cli::runner::{run, RunReport};
use met_cli::scenarios::find;
use met_cli::selfcheck::selfcheck;
use met_core::cocycle::{excess_growth_series, sample_trajectory, temperedness_diagnostic};
use met_core::consistent::{build, certify, pairing};
use met_core::linalg::rng_for;
use met_core::volume::{d_k, e_k, f_k};
use met_core::{Exponent, LinearMap, Mode, NormedSpace, Subspace, VolumeOptions};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn gaussian(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// Singular values from the eigenvalues of `T^T T`, descending.
fn singular_values_by_gram(t: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(t.transpose() * t)
        .eigenvalues
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

fn span(space: NormedSpace, vs: &[&[f64]]) -> Subspace {
    let vs: Vec<DVector<f64>> = vs.iter().map(|v| DVector::from_column_slice(v)).collect();
    Subspace::span(space, &vs).unwrap()
}

/// Null space of `a - lambda I` as the right singular vectors with vanishing singular value.
fn eigenspace(a: &DMatrix<f64>, lambda: f64) -> Vec<Vec<f64>> {
    let d = a.nrows();
    let m = a - DMatrix::identity(d, d) * lambda;
    let svd = m.svd(false, true);
    let vt = svd.v_t.unwrap();
    (0..d)
        .filter(|&i| svd.singular_values[i] < 1e-10)
        .map(|i| vt.row(i).iter().copied().collect())
        .collect()
}

fn scenario(name: &str) -> RunReport {
    run(&find(name).unwrap().config()).unwrap()
}

fn inequality_suite() -> Outcome {
    let r = selfcheck(20240601, 200, 1e-9);
    outcome(
        r.pass,
        format!(
            "{} checks over {} operators, {} failures, {} errors",
            r.checks,
            r.ops,
            r.failure_count,
            r.errors.len()
        ),
    )
}

fn euclidean_oracle() -> Outcome {
    let opts = VolumeOptions::default();
    let mut worst: f64 = 0.0;
    for i in 0..200u64 {
        let mut rng = rng_for(31, i);
        let d = rng.gen_range(1..=6);
        let m = gaussian(&mut rng, d, d);
        let t = LinearMap::on(NormedSpace::euclidean(d).unwrap(), m.clone()).unwrap();
        let sv = singular_values_by_gram(&m);
        for k in 1..=d {
            let prod: f64 = sv[..k].iter().product();
            let dk = d_k(&t, k, Mode::Optimize, &opts).unwrap().lo;
            let ek = e_k(&t, k, Mode::Optimize, &opts).unwrap().lo;
            let fk = f_k(&t, k, Mode::Optimize, &opts).unwrap().lo;
            worst = worst
                .max((dk - prod).abs() / prod)
                .max((ek - prod).abs() / prod)
                .max((fk - sv[k - 1]).abs() / sv[k - 1]);
        }
    }
    outcome(
        worst <= 1e-6,
        format!("largest relative deviation {worst:.3e} (limit 1e-6)"),
    )
}

fn consistent_certificates() -> Outcome {
    let ps = [Exponent::ONE, Exponent::TWO, Exponent::INF];
    let mut failures = 0;
    let mut checked = 0;
    for i in 0..100u64 {
        let mut rng = rng_for(47, i);
        let d = rng.gen_range(1..=4);
        let space = NormedSpace::new(d, ps[i as usize % 3]).unwrap();
        let t = LinearMap::on(space, gaussian(&mut rng, d, d)).unwrap();
        let seq = build(&t, d).unwrap();
        let rep = certify(&t, &seq);
        failures += rep.failures().count();
        for k in 1..=seq.len() {
            // Determinant bound 2^{-k} prod F_i, recomputed here from the pairing matrix.
            let det = pairing(&t, &seq.xs[..k], &seq.thetas[..k])
                .determinant()
                .abs();
            let prod: f64 = seq.gains[..k].iter().map(|g| g.lo).product();
            checked += 1;
            if det < 0.5f64.powi(k as i32) * prod * (1.0 - 1e-9) {
                failures += 1;
            }
        }
    }
    outcome(
        failures == 0,
        format!("{checked} orders certified, {failures} failures"),
    )
}

fn jordan_fixture() -> Outcome {
    let r = scenario("fixed-jordan");
    let j = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 1.0]);
    let space = NormedSpace::euclidean(2).unwrap();
    let mus = r.spectrum.mus();
    let e_mu = (mus[0] - 2f64.ln()).abs().max(mus[1].abs());
    let slow = eigenspace(&j, 1.0);
    let fast = eigenspace(&j, 2.0);
    let v2 = span(space, &[&slow[0]]);
    let d_v2 = r
        .filtration
        .as_ref()
        .unwrap()
        .limit(2)
        .unwrap()
        .grassmann_distance(&v2)
        .unwrap();
    let slope = r.filtration.as_ref().unwrap().levels[1].cauchy_slope;
    let split = r.splitting.as_ref().unwrap();
    let d_z1 = split.blocks[0]
        .grassmann_distance(&span(space, &[&fast[0]]))
        .unwrap();
    let d_z2 = split.blocks[1].grassmann_distance(&v2).unwrap();
    let residual = split.exactness.iter().copied().fold(0.0, f64::max);
    let pass = r.spectrum.n_grid.last() == Some(&100)
        && e_mu <= 1e-3
        && d_v2 <= 1e-3
        && slope <= -(2f64.ln() - 0.2)
        && d_z1 <= 1e-3
        && d_z2 <= 1e-3
        && residual <= 1e-6;
    outcome(
        pass,
        format!(
            "mu err {e_mu:.2e}, V2 dist {d_v2:.2e}, Cauchy slope {slope:.3}, Z1 {d_z1:.2e}, Z2 {d_z2:.2e}, direct-sum {residual:.2e}"
        ),
    )
}

fn iid_fixture() -> Outcome {
    let r = scenario("iid-diagonal");
    // Birkhoff averages of the log diagonal entries under the uniform choice.
    let want = [
        0.5 * (2f64.ln() + 4f64.ln()),
        0.5 * ((1.0f64 / 3.0).ln() + 0.2f64.ln()),
    ];
    let mus = r.spectrum.mus();
    let ses = r.spectrum.mu_ses();
    let dual = r.dual_spectrum.as_ref().unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..2 {
        worst = worst.max((mus[k] - want[k]).abs() / ses[k]);
        let se = (ses[k].powi(2) + dual.levels[k].mu_se.powi(2)).sqrt();
        worst = worst.max((dual.levels[k].mu - mus[k]).abs() / se);
    }
    let shape = r.spectrum.n_samples == 100 && r.spectrum.n_grid.last() == Some(&10_000);
    outcome(
        shape && worst <= 3.0,
        format!(
            "largest deviation {worst:.2} SE over {} trajectories",
            r.spectrum.n_samples
        ),
    )
}

fn quasicompact_fixture() -> Outcome {
    let r = scenario("quasicompact-block");
    let kappa = r.kappa.as_ref().unwrap();
    let e_kappa = (kappa.value - 0.1f64.ln()).abs();
    let count = r
        .spectrum
        .mus()
        .iter()
        .filter(|&&m| m > 0.1f64.ln() + 0.1)
        .count();
    let head = r.head_spectrum.as_ref().unwrap();
    let mus = r.spectrum.mus();
    let ses = r.spectrum.mu_ses();
    let mut worst: f64 = 0.0;
    for (k, l) in head.levels.iter().enumerate() {
        let se = (ses[k].powi(2) + l.mu_se.powi(2)).sqrt();
        worst = worst.max((mus[k] - l.mu).abs() / se);
    }
    outcome(
        e_kappa <= 1e-12 && count == 2 && worst <= 2.0,
        format!("kappa err {e_kappa:.2e}, {count} exponents above threshold (head 2), head deviation {worst:.2} SE"),
    )
}

fn reduced_fixture() -> Outcome {
    let r = scenario("upper-triangular-3d");
    let full = [4f64.ln(), 2f64.ln(), 0.0];
    let mut worst: f64 = 0.0;
    let mut ok = r.reduced.len() == 2;
    for e in &r.reduced {
        match &e.result {
            Some(rep) => {
                for (got, want) in rep.mus.iter().zip(&full[rep.removed..]) {
                    worst = worst.max((got - want).abs());
                }
                ok &= rep.mus.len() == 3 - rep.removed;
            }
            None => ok = false,
        }
    }
    let steps = r.config.run.reduced.as_ref().map(|c| c.steps);
    outcome(
        ok && steps == Some(50) && worst <= 2e-2,
        format!("levels 2 and 3 at n = 50, largest deviation {worst:.2e}"),
    )
}

fn temperedness() -> Outcome {
    let cfg = find("iid-diagonal").unwrap().config();
    let gen = cfg.generator();
    let traj = sample_trajectory(&cfg.base, 10_000, false, 1).unwrap();
    let rate = 1.5 * 2f64.ln() + 0.1;
    let g = excess_growth_series(&gen, &traj, rate, 10_000).unwrap();
    let fixture = temperedness_diagnostic(&g, 0.05);
    let linear: Vec<f64> = (0..10_000).map(|n| n as f64).collect();
    let control = temperedness_diagnostic(&linear, 0.05);
    outcome(
        fixture.pass && !control.pass,
        format!(
            "fixture max g(n)/n {:.3e}, linear control {:.3}",
            fixture.max_ratio, control.max_ratio
        ),
    )
}

fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_met");
    let once = || {
        Command::new(bin)
            .args(["selfcheck", "--seed", "7"])
            .output()
            .unwrap()
    };
    let (a, b) = (once(), once());
    let same = a.stdout == b.stdout && !a.stdout.is_empty();
    outcome(
        same && a.status.success(),
        format!("{} bytes, identical: {same}", a.stdout.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Option<Duration>); 9] = [
        (
            "volume inequality suite",
            inequality_suite,
            Some(Duration::from_secs(300)),
        ),
        (
            "euclidean oracle equivalence",
            euclidean_oracle,
            Some(Duration::from_secs(60)),
        ),
        (
            "consistent-sequence certificates",
            consistent_certificates,
            Some(Duration::from_secs(120)),
        ),
        (
            "fixed Jordan fixture",
            jordan_fixture,
            Some(Duration::from_secs(10)),
        ),
        (
            "iid-diagonal fixture",
            iid_fixture,
            Some(Duration::from_secs(120)),
        ),
        (
            "quasi-compact block fixture",
            quasicompact_fixture,
            Some(Duration::from_secs(120)),
        ),
        (
            "reduced cocycle",
            reduced_fixture,
            Some(Duration::from_secs(60)),
        ),
        ("temperedness diagnostic", temperedness, None),
        ("selfcheck determinism", determinism, None),
    ];
    let mut failed = 0;
    for (i, (name, f, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = f();
        let took = start.elapsed();
        let in_time = limit.map_or(true, |l| took <= l);
        let pass = o.pass && in_time;
        if !pass {
            failed += 1;
        }
        let budget = limit.map_or(String::new(), |l| format!(" / {}s", l.as_secs()));
        println!(
            "{} {}. {}: {} ({:.1}s{budget})",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            name,
            o.detail,
            took.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
