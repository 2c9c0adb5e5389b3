//! Executes a configured experiment: spectrum, grouping, filtration, splitting and the
//! optional diagnostics, then evaluates the declared oracle.

use met_core::cocycle::{
    estimate_dual_spectrum_with, estimate_spectrum_with, excess_growth_series, kappa_upper_report,
    sample_trajectory, temperedness_diagnostic, Generator, SpectrumOptions, SpectrumReport,
    TemperednessReport,
};
use met_core::inequalities::{verify_volume_inequalities, InequalityCheck, VerifyOptions};
use met_core::oseledets::{
    filtration, group_exponents, level_count, resolvable_length, slow_space_series, splitting,
    verify_reduced_cocycle, ApproxFiltration, ExponentGroups, FiltrationParams, ReducedOptions,
    ReducedReport, Splitting,
};
use met_core::serde_ext::float;
use met_core::{NormedSpace, Subspace};
use nalgebra::DVector;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::oracle::OracleCheck;

pub const REPORT_VERSION: u32 = 1;

/// Product lengths beyond which slow spaces lose floating-point resolution, in nats of
/// exponent spread.
const RESOLUTION_NATS: f64 = 18.0;

#[derive(Clone, Debug, Serialize)]
pub struct KappaSummary {
    #[serde(with = "float")]
    pub value: f64,
    #[serde(with = "float")]
    pub se: f64,
    #[serde(with = "float")]
    pub threshold: f64,
    /// Exponents above `threshold`.
    pub exceptional_count: usize,
    pub head_dim: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct TemperednessSummary {
    /// Reference growth rate subtracted at each step.
    #[serde(with = "float")]
    pub rate: f64,
    pub series: TemperednessReport,
    /// The linear series `g(n) = n`, which must fail.
    pub control: TemperednessReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReducedEntry {
    pub level: usize,
    pub lookahead: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<ReducedReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct InequalitySummary {
    pub kmax: usize,
    pub checks: usize,
    pub failures: Vec<InequalityCheck>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub format_version: u32,
    pub config: ExperimentConfig,
    pub spectrum: SpectrumReport,
    pub groups: ExponentGroups,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filtration: Option<ApproxFiltration>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filtration_error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub splitting: Option<Splitting>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub splitting_error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dual_spectrum: Option<SpectrumReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<KappaSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub head_spectrum: Option<SpectrumReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub euclidean_spectrum: Option<SpectrumReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperedness: Option<TemperednessSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub reduced: Vec<ReducedEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inequalities: Option<InequalitySummary>,
    pub checks: Vec<OracleCheck>,
    /// Every declared check passed.
    pub pass: bool,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn spectrum_options(cfg: &ExperimentConfig) -> SpectrumOptions {
    SpectrumOptions {
        route: cfg.run.route,
        two_sided: cfg.run.two_sided,
        ..SpectrumOptions::default()
    }
}

fn filtration_params(cfg: &ExperimentConfig, groups: &ExponentGroups) -> FiltrationParams {
    let grid = cfg.run.filtration_grid.clone().unwrap_or_else(|| {
        let levels = level_count(groups, cfg.space.dim);
        let n = resolvable_length(groups, levels, RESOLUTION_NATS)
            .unwrap_or(20)
            .clamp(2, 20);
        (1..=n).collect()
    });
    FiltrationParams {
        n_grid: grid,
        epsilon: cfg.run.epsilon,
        ..FiltrationParams::default()
    }
}

fn reduced_lookahead(cfg: &ExperimentConfig, groups: &ExponentGroups, level: usize) -> usize {
    cfg.run
        .reduced
        .as_ref()
        .and_then(|r| r.lookahead)
        .unwrap_or_else(|| {
            resolvable_length(groups, level, RESOLUTION_NATS)
                .unwrap_or(40)
                .clamp(2, 40)
        })
}

fn inequality_suite(gen: &Generator, kmax: usize) -> met_core::Result<InequalitySummary> {
    let space = *gen.space();
    let d = space.dim();
    let v = if d >= 2 {
        Subspace::span(space, &[DVector::from_element(d, 1.0)])?
            .annihilator()
            .with_space(space)?
    } else {
        Subspace::full(space)
    };
    let a = gen.alphabet_size();
    let mut checks = 0;
    let mut failures = Vec::new();
    for sym in 0..a {
        let t = gen.map(sym);
        let s = gen.map((sym + 1) % a);
        let r = verify_volume_inequalities(&t, &s, &v, kmax, &VerifyOptions::default())?;
        checks += r.checks.len();
        failures.extend(r.failures().cloned().map(|mut c| {
            c.name = format!("symbol {sym}: {}", c.name);
            c
        }));
    }
    Ok(InequalitySummary {
        kmax,
        checks,
        failures,
    })
}

/// Runs the experiment. Numerical failures of optional stages are recorded in the report;
/// only the spectrum itself is required.
pub fn run(cfg: &ExperimentConfig) -> met_core::Result<RunReport> {
    let gen = cfg.generator();
    let base = &cfg.base;
    let dim = cfg.space.dim;
    let opts = spectrum_options(cfg);
    let kmax = cfg.kmax();
    let spectrum =
        estimate_spectrum_with(&gen, base, kmax, &cfg.run.n_grid, cfg.run.n_samples, &opts)?;
    let groups = group_exponents(&spectrum, cfg.run.gap_threshold);
    let params = filtration_params(cfg, &groups);
    let epsilon = cfg.run.epsilon.unwrap_or_else(|| groups.default_epsilon());

    let n_filt = *params.n_grid.last().unwrap();
    let reduced_levels: Vec<usize> = match &cfg.run.reduced {
        Some(r) if !r.levels.is_empty() => r.levels.clone(),
        Some(_) => (2..=level_count(&groups, dim)).collect(),
        None => Vec::new(),
    };
    let reduced_need = reduced_levels
        .iter()
        .map(|&l| cfg.run.reduced.as_ref().unwrap().steps + reduced_lookahead(cfg, &groups, l))
        .max()
        .unwrap_or(0);
    let traj_len = (n_filt + 1).max(reduced_need + 1);
    let traj = sample_trajectory(base, traj_len, cfg.run.two_sided, 0)?;

    let (mut filt, mut filtration_error, mut split, mut splitting_error) = (None, None, None, None);
    if cfg.run.two_sided {
        match splitting(&gen, &traj, &groups, &params) {
            Ok(s) => {
                filt = Some(s.primal.clone());
                split = Some(s);
            }
            Err(e) => splitting_error = Some(e.to_string()),
        }
    }
    if filt.is_none() {
        match filtration(&gen, &traj, &groups, &params) {
            Ok(f) => filt = Some(f),
            Err(e) => filtration_error = Some(e.to_string()),
        }
    }

    let oracle = cfg.oracle.clone().unwrap_or_default();
    let dual_spectrum = if cfg.run.dual_spectrum || oracle.dual_exponents.is_some() {
        Some(estimate_dual_spectrum_with(
            &gen,
            base,
            kmax,
            &cfg.run.n_grid,
            cfg.run.n_samples,
            &opts,
        )?)
    } else {
        None
    };

    let (kappa, head_spectrum) = match gen.head_dim() {
        Some(h) => {
            let (value, se) = kappa_upper_report(&gen, base, &cfg.run.n_grid, cfg.run.n_samples)?;
            let margin = oracle.kappa.as_ref().map_or(0.1, |k| k.margin);
            let threshold = value + margin;
            let exceptional_count = spectrum.mus().iter().filter(|&&m| m > threshold).count();
            let head = match gen.head()? {
                Some(hg) => Some(estimate_spectrum_with(
                    &hg,
                    base,
                    h.min(kmax),
                    &cfg.run.n_grid,
                    cfg.run.n_samples,
                    &opts,
                )?),
                None => None,
            };
            (
                Some(KappaSummary {
                    value,
                    se,
                    threshold,
                    exceptional_count,
                    head_dim: h,
                }),
                head,
            )
        }
        None => (None, None),
    };

    let euclidean_spectrum = if oracle.norm_invariance.is_some() && !cfg.space.p.is_two() {
        let e = Generator::with_split(
            NormedSpace::euclidean(dim)?,
            gen.matrices().to_vec(),
            gen.head_dim(),
        )?;
        Some(estimate_spectrum_with(
            &e,
            base,
            kmax,
            &cfg.run.n_grid,
            cfg.run.n_samples,
            &opts,
        )?)
    } else {
        None
    };

    let temperedness = match &cfg.run.temperedness {
        Some(t) => {
            let rate = groups.lambdas[0] + epsilon;
            let tt = sample_trajectory(base, t.length, false, 1)?;
            let series = excess_growth_series(&gen, &tt, rate, t.length)?;
            let control: Vec<f64> = (0..t.length).map(|n| n as f64).collect();
            Some(TemperednessSummary {
                rate,
                series: temperedness_diagnostic(&series, t.threshold),
                control: temperedness_diagnostic(&control, t.threshold),
            })
        }
        None => None,
    };

    let mut reduced = Vec::new();
    if let Some(rc) = &cfg.run.reduced {
        for &level in &reduced_levels {
            let lookahead = reduced_lookahead(cfg, &groups, level);
            let ropts = ReducedOptions {
                tolerance: rc.tolerance,
                residual_threshold: rc.residual_threshold,
                epsilon,
                ..ReducedOptions::default()
            };
            let outcome = slow_space_series(
                &gen,
                &traj,
                &groups,
                level,
                rc.steps,
                lookahead,
                &params.consistent,
            )
            .and_then(|s| {
                verify_reduced_cocycle(&gen, &traj, &s, &spectrum.mus(), &groups, &ropts)
            });
            let (result, error) = match outcome {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            reduced.push(ReducedEntry {
                level,
                lookahead,
                result,
                error,
            });
        }
    }

    let ikmax = cfg.run.inequality_kmax.unwrap_or(dim.min(3)).min(dim);
    let inequalities = if ikmax > 0 {
        Some(inequality_suite(&gen, ikmax)?)
    } else {
        None
    };

    let mut report = RunReport {
        format_version: REPORT_VERSION,
        config: cfg.clone(),
        spectrum,
        groups,
        filtration: filt,
        filtration_error,
        splitting: split,
        splitting_error,
        dual_spectrum,
        kappa,
        head_spectrum,
        euclidean_spectrum,
        temperedness,
        reduced,
        inequalities,
        checks: Vec::new(),
        pass: true,
    };
    report.checks = evaluate_oracle(cfg, &report);
    report.pass = report.checks.iter().all(|c| c.pass);
    Ok(report)
}

fn combined(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

fn evaluate_oracle(cfg: &ExperimentConfig, r: &RunReport) -> Vec<OracleCheck> {
    let Some(o) = &cfg.oracle else {
        return Vec::new();
    };
    let space = cfg.normed_space();
    let mut out = Vec::new();
    let mus = r.spectrum.mus();
    let ses = r.spectrum.mu_ses();
    if let Some(e) = &o.exponents {
        let tol = e.tol();
        for (k, &want) in e.values.iter().enumerate() {
            let name = format!("exponent[{}]", k + 1);
            out.push(match mus.get(k) {
                Some(&got) => OracleCheck::close(name, got, want, tol.allowance(ses[k])),
                None => OracleCheck::missing(name),
            });
        }
    }
    if let Some(levels) = o.levels {
        out.push(OracleCheck::close(
            "levels",
            r.groups.r() as f64,
            levels as f64,
            0.0,
        ));
    }
    if let Some(tol) = &o.dual_exponents {
        match &r.dual_spectrum {
            Some(d) => {
                for (k, l) in d.levels.iter().enumerate() {
                    out.push(OracleCheck::close(
                        format!("dual-exponent[{}]", k + 1),
                        l.mu,
                        mus[k],
                        tol.allowance(combined(l.mu_se, ses[k])),
                    ));
                }
            }
            None => out.push(OracleCheck::missing("dual-exponents")),
        }
    }
    for s in &o.slow_spaces {
        let name = format!("slow-space[{}]", s.level);
        let got = r.filtration.as_ref().and_then(|f| f.limit(s.level));
        out.push(match (got, s.subspace(space)) {
            (Some(v), Ok(w)) => match v.grassmann_distance(&w) {
                Ok(d) => OracleCheck::at_most(name, d, s.tolerance),
                Err(_) => OracleCheck::missing(name),
            },
            _ => OracleCheck::missing(name),
        });
    }
    for b in &o.blocks {
        let name = format!("block[{}]", b.level);
        let got = r.splitting.as_ref().and_then(|s| s.blocks.get(b.level - 1));
        out.push(match (got, b.subspace(space)) {
            (Some(z), Ok(w)) => match z.grassmann_distance(&w) {
                Ok(d) => OracleCheck::at_most(name, d, b.tolerance),
                Err(_) => OracleCheck::missing(name),
            },
            _ => OracleCheck::missing(name),
        });
    }
    if let Some(tol) = o.direct_sum {
        out.push(match &r.splitting {
            Some(s) => OracleCheck::at_most(
                "direct-sum",
                s.exactness.iter().copied().fold(0.0, f64::max),
                tol,
            ),
            None => OracleCheck::missing("direct-sum"),
        });
    }
    if let Some(tol) = o.duality {
        out.push(match &r.splitting {
            Some(s) => OracleCheck::at_most(
                "duality",
                s.duality_check.iter().copied().fold(0.0, f64::max),
                tol,
            ),
            None => OracleCheck::missing("duality"),
        });
    }
    if let Some(margin) = o.cauchy_margin {
        match &r.filtration {
            Some(f) => {
                for l in f.levels.iter().skip(1).filter(|l| l.gap.is_finite()) {
                    out.push(OracleCheck::at_most(
                        format!("cauchy-slope[{}]", l.level),
                        l.cauchy_slope,
                        -(l.gap - margin),
                    ));
                }
            }
            None => out.push(OracleCheck::missing("cauchy-slope")),
        }
    }
    if let Some(k) = &o.kappa {
        match &r.kappa {
            Some(s) => {
                out.push(OracleCheck::close("kappa", s.value, k.value, k.tolerance));
                out.push(OracleCheck::close(
                    "exceptional-count",
                    s.exceptional_count as f64,
                    s.head_dim as f64,
                    0.0,
                ));
            }
            None => out.push(OracleCheck::missing("kappa")),
        }
    }
    if let Some(factor) = o.head_match {
        match &r.head_spectrum {
            Some(h) => {
                for (k, l) in h.levels.iter().enumerate() {
                    out.push(OracleCheck::close(
                        format!("head-exponent[{}]", k + 1),
                        mus[k],
                        l.mu,
                        factor * combined(l.mu_se, ses[k]) + 1e-9,
                    ));
                }
            }
            None => out.push(OracleCheck::missing("head-exponents")),
        }
    }
    if o.reduced {
        if r.reduced.is_empty() {
            out.push(OracleCheck::missing("reduced"));
        }
        for e in &r.reduced {
            let name = format!("reduced[{}]", e.level);
            match &e.result {
                Some(rep) => {
                    let tol = cfg.run.reduced.as_ref().map_or(2e-2, |c| c.tolerance);
                    out.push(OracleCheck::at_most(name.clone(), rep.max_deviation, tol));
                    out.push(OracleCheck {
                        name: format!("{name}-quotient"),
                        value: rep.quotient_rate,
                        expected: rep.quotient_bound,
                        tolerance: 0.0,
                        pass: rep.quotient_ok,
                    });
                }
                None => out.push(OracleCheck::missing(name)),
            }
        }
    }
    if o.inequalities {
        out.push(match &r.inequalities {
            Some(s) => OracleCheck::at_most("inequality-failures", s.failures.len() as f64, 0.0),
            None => OracleCheck::missing("inequality-failures"),
        });
    }
    if let Some(tol) = &o.norm_invariance {
        let other = r.euclidean_spectrum.as_ref().or(if cfg.space.p.is_two() {
            Some(&r.spectrum)
        } else {
            None
        });
        match other {
            Some(e) => {
                for (k, l) in e.levels.iter().enumerate() {
                    out.push(OracleCheck::close(
                        format!("euclidean-exponent[{}]", k + 1),
                        mus[k],
                        l.mu,
                        tol.allowance(combined(l.mu_se, ses[k])),
                    ));
                }
            }
            None => out.push(OracleCheck::missing("euclidean-exponents")),
        }
    }
    if o.temperedness {
        match &r.temperedness {
            Some(t) => {
                out.push(OracleCheck::at_most(
                    "tempered-series",
                    t.series.max_ratio,
                    t.series.threshold,
                ));
                out.push(OracleCheck::flag("linear-control-fails", !t.control.pass));
            }
            None => out.push(OracleCheck::missing("temperedness")),
        }
    }
    out
}
