//! Built-in experiments with known reference values.

use serde_json::{json, Value};

use crate::config::ExperimentConfig;

pub struct Scenario {
    pub name: &'static str,
    /// Where the oracle values come from.
    pub oracle: &'static str,
    pub description: &'static str,
    build: fn() -> Value,
}

impl Scenario {
    pub fn config(&self) -> ExperimentConfig {
        let v = (self.build)();
        ExperimentConfig::from_json(&v.to_string())
            .unwrap_or_else(|e| panic!("scenario {} is malformed: {e}", self.name))
    }
}

pub fn scenarios() -> &'static [Scenario] {
    &SCENARIOS
}

pub fn find(name: &str) -> Option<&'static Scenario> {
    SCENARIOS.iter().find(|s| s.name == name)
}

static SCENARIOS: [Scenario; 7] = [
    Scenario {
        name: "fixed-jordan",
        oracle: "eigen",
        description: "single Jordan-type map [[2,1],[0,1]] in l2",
        build: fixed_jordan,
    },
    Scenario {
        name: "iid-diagonal",
        oracle: "birkhoff",
        description: "iid choice between diag(2,1/3) and diag(4,1/5)",
        build: iid_diagonal,
    },
    Scenario {
        name: "upper-triangular-3d",
        oracle: "eigen",
        description: "single upper-triangular map with eigenvalues 4, 2, 1",
        build: upper_triangular,
    },
    Scenario {
        name: "quasicompact-block",
        oracle: "tail-norm",
        description: "random 2x2 head block over a tail contracting by exactly 0.1",
        build: quasicompact_block,
    },
    Scenario {
        name: "lp-volume-suite",
        oracle: "inequalities",
        description: "random pair of maps in l1 with the volume inequalities and norm invariance",
        build: lp_volume_suite,
    },
    Scenario {
        name: "identity",
        oracle: "trivial",
        description: "identity cocycle on l-infinity",
        build: identity,
    },
    Scenario {
        name: "markov-alternating",
        oracle: "birkhoff",
        description: "deterministic alternation of the two diagonal maps",
        build: markov_alternating,
    },
];

fn ln(x: f64) -> f64 {
    x.ln()
}

fn fixed_jordan() -> Value {
    json!({
        "name": "fixed-jordan",
        "space": {"dim": 2, "p": 2},
        "base": {"kind": "fixed"},
        "generator": {"matrices": [[[2.0, 1.0], [0.0, 1.0]]]},
        "run": {"n_grid": [10, 20, 30, 40, 50, 60, 70, 80, 90, 100]},
        "outputs": {"directory": "out/fixed-jordan"},
        "oracle": {
            "kind": "eigen",
            "exponents": {"values": [ln(2.0), 0.0], "tolerance": 1e-3},
            "levels": 2,
            "slow_spaces": [{"level": 2, "span": [[1.0, -1.0]], "tolerance": 1e-3}],
            "blocks": [
                {"level": 1, "span": [[1.0, 0.0]], "tolerance": 1e-6},
                {"level": 2, "span": [[1.0, -1.0]], "tolerance": 1e-3}
            ],
            "direct_sum": 1e-6,
            "duality": 1e-6,
            "cauchy_margin": 0.2,
            "inequalities": true
        }
    })
}

fn iid_diagonal() -> Value {
    json!({
        "name": "iid-diagonal",
        "space": {"dim": 2, "p": 2},
        "base": {"kind": "bernoulli", "probabilities": [0.5, 0.5], "seed": 7},
        "generator": {"matrices": [
            [[2.0, 0.0], [0.0, 1.0 / 3.0]],
            [[4.0, 0.0], [0.0, 0.2]]
        ]},
        "run": {
            "n_grid": [1250, 2500, 5000, 10000],
            "n_samples": 100,
            "temperedness": {"length": 10000}
        },
        "outputs": {"directory": "out/iid-diagonal"},
        "oracle": {
            "kind": "birkhoff",
            "exponents": {"values": [1.5 * ln(2.0), -ln(15.0) / 2.0], "se_factor": 3.0},
            "levels": 2,
            "dual_exponents": {"se_factor": 3.0},
            "blocks": [
                {"level": 1, "span": [[1.0, 0.0]], "tolerance": 1e-6},
                {"level": 2, "span": [[0.0, 1.0]], "tolerance": 1e-6}
            ],
            "direct_sum": 1e-6,
            "temperedness": true
        }
    })
}

fn upper_triangular() -> Value {
    json!({
        "name": "upper-triangular-3d",
        "space": {"dim": 3, "p": 2},
        "base": {"kind": "fixed"},
        "generator": {"matrices": [[[4.0, 1.0, 1.0], [0.0, 2.0, 1.0], [0.0, 0.0, 1.0]]]},
        "run": {
            "n_grid": [10, 20, 30, 40, 50, 60, 70, 80, 90, 100],
            "reduced": {"levels": [2, 3], "steps": 50, "tolerance": 2e-2}
        },
        "outputs": {"directory": "out/upper-triangular-3d"},
        "oracle": {
            "kind": "eigen",
            "exponents": {"values": [ln(4.0), ln(2.0), 0.0], "tolerance": 1e-3},
            "levels": 3,
            "slow_spaces": [
                {"level": 2, "span": [[1.0, -2.0, 0.0], [0.0, 1.0, -1.0]], "tolerance": 1e-3},
                {"level": 3, "span": [[0.0, 1.0, -1.0]], "tolerance": 1e-3}
            ],
            "cauchy_margin": 0.2,
            "reduced": true
        }
    })
}

fn rotation(scale: f64, angle: f64) -> [[f64; 2]; 2] {
    let (s, c) = angle.sin_cos();
    [[scale * c, -scale * s], [scale * s, scale * c]]
}

fn block(head: [[f64; 2]; 2], tail: [[f64; 2]; 2]) -> Value {
    json!([
        [head[0][0], head[0][1], 0.0, 0.0],
        [head[1][0], head[1][1], 0.0, 0.0],
        [0.0, 0.0, tail[0][0], tail[0][1]],
        [0.0, 0.0, tail[1][0], tail[1][1]]
    ])
}

fn quasicompact_block() -> Value {
    json!({
        "name": "quasicompact-block",
        "space": {"dim": 4, "p": 2},
        "base": {"kind": "bernoulli", "probabilities": [0.5, 0.5], "seed": 11},
        "generator": {
            "matrices": [
                block([[1.5, 0.3], [0.2, 0.8]], rotation(0.1, 0.7)),
                block([[0.9, -0.4], [0.5, 1.2]], rotation(0.1, 2.1))
            ],
            "head_dim": 2
        },
        "run": {"n_grid": [250, 500, 1000, 2000], "n_samples": 40},
        "outputs": {"directory": "out/quasicompact-block"},
        "oracle": {
            "kind": "tail-norm",
            "kappa": {"value": ln(0.1), "tolerance": 1e-12, "margin": 0.1},
            "head_match": 2.0
        }
    })
}

fn lp_volume_suite() -> Value {
    json!({
        "name": "lp-volume-suite",
        "space": {"dim": 3, "p": 1},
        "base": {"kind": "bernoulli", "probabilities": [0.5, 0.5], "seed": 3},
        "generator": {"matrices": [
            [[1.0, 0.5, -0.2], [0.3, 0.9, 0.4], [-0.1, 0.2, 0.7]],
            [[0.6, -0.3, 0.1], [0.2, 1.1, -0.5], [0.4, 0.0, 0.8]]
        ]},
        "run": {"n_grid": [100, 200, 400, 800], "n_samples": 20, "two_sided": false},
        "outputs": {"directory": "out/lp-volume-suite"},
        "oracle": {
            "kind": "inequalities",
            "inequalities": true,
            "norm_invariance": {"tolerance": 1e-2, "se_factor": 3.0}
        }
    })
}

fn identity() -> Value {
    json!({
        "name": "identity",
        "space": {"dim": 3, "p": "inf"},
        "base": {"kind": "fixed"},
        "generator": {"matrices": [[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]]},
        "run": {"n_grid": [5, 10, 20]},
        "outputs": {"directory": "out/identity"},
        "oracle": {
            "kind": "trivial",
            "exponents": {"values": [0.0, 0.0, 0.0], "tolerance": 1e-12},
            "levels": 1,
            "inequalities": true
        }
    })
}

fn markov_alternating() -> Value {
    json!({
        "name": "markov-alternating",
        "space": {"dim": 2, "p": 2},
        "base": {
            "kind": "markov",
            "transition": [[0.0, 1.0], [1.0, 0.0]],
            "seed": 5
        },
        "generator": {"matrices": [
            [[2.0, 0.0], [0.0, 1.0 / 3.0]],
            [[4.0, 0.0], [0.0, 0.2]]
        ]},
        "run": {"n_grid": [100, 200, 400, 800], "n_samples": 4},
        "outputs": {"directory": "out/markov-alternating"},
        "oracle": {
            "kind": "birkhoff",
            "exponents": {"values": [ln(8.0) / 2.0, -ln(15.0) / 2.0], "tolerance": 1e-2},
            "levels": 2
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_scenario_parses_and_declares_an_oracle() {
        assert!(scenarios().len() >= 5);
        for s in scenarios() {
            let cfg = s.config();
            assert_eq!(cfg.name.as_deref(), Some(s.name));
            assert_eq!(cfg.oracle.as_ref().unwrap().kind, s.oracle);
        }
    }
}
