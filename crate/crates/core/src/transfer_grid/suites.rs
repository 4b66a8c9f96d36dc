//! Randomized checks of the contraction and Lipschitz bounds of T_eps on
//! probability tail grids.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{geomspace, l_functional, triple_norm_diff, Operator, TailGrid, MODULE};
use crate::dist_models::{DistributionModel, OPERATOR_QUAD_ORDER};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub epsilon: f64,
    pub pairs: usize,
    pub nodes: usize,
    pub betas: Vec<f64>,
    pub seed: u64,
}

impl SuiteConfig {
    /// 100 pairs, beta in {0.1, ..., 0.9}.
    pub fn standard(epsilon: f64, seed: u64) -> Self {
        SuiteConfig {
            epsilon,
            pairs: 100,
            nodes: 160,
            betas: (1..10).map(|k| k as f64 / 10.0).collect(),
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteOutcome {
    pub checks: usize,
    pub violations: usize,
    /// Largest lhs / (rhs + slack) seen.
    pub worst_ratio: f64,
}

impl SuiteOutcome {
    fn new() -> Self {
        SuiteOutcome {
            checks: 0,
            violations: 0,
            worst_ratio: 0.0,
        }
    }

    fn record(&mut self, lhs: f64, bound: f64) {
        self.checks += 1;
        let r = if bound > 0.0 { lhs / bound } else if lhs > 0.0 { f64::INFINITY } else { 0.0 };
        self.worst_ratio = self.worst_ratio.max(r);
        if !(lhs <= bound) {
            self.violations += 1;
        }
    }
}

/// Random probability grid on [lo, hi]: sorted uniform values, an atom at
/// `lo` about half the time, zero at the last node.
pub fn random_probability_grid<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64, n: usize) -> Result<TailGrid> {
    let nodes = geomspace(lo, hi, n);
    let mut values: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    values.sort_by(|a, b| b.total_cmp(a));
    if rng.random::<bool>() {
        values[0] = 1.0;
    }
    values[n - 1] = 0.0;
    TailGrid::probability(nodes, values, 1.0)
}

fn pair_domain(model: &DistributionModel, eps: f64) -> (f64, f64) {
    let hi = if eps > 0.0 {
        (1.0 / (eps * eps)).min(1e4)
    } else {
        1e3
    };
    (model.c_minus(), hi.max(10.0 * model.c_plus()))
}

fn refined(nodes: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * nodes.len());
    for w in nodes.windows(2) {
        out.push(w[0]);
        out.push((w[0] * w[1]).sqrt());
    }
    out.push(nodes[nodes.len() - 1]);
    out
}

fn validate(cfg: &SuiteConfig) -> Result<()> {
    if cfg.pairs == 0 || cfg.nodes < 8 {
        return Err(invalid(MODULE, "suite needs at least one pair and 8 nodes"));
    }
    if cfg.betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
        return Err(invalid(MODULE, "suite betas must lie in (0, 1)"));
    }
    if !(cfg.epsilon >= 0.0 && cfg.epsilon < 1.0) {
        return Err(invalid(MODULE, "suite epsilon must lie in [0, 1)"));
    }
    Ok(())
}

/// |||T nu1 - T nu2|||_beta <= M(beta) |||nu1 - nu2|||_beta + slack, slack
/// being 10x the change of the left side under node doubling.
pub fn contraction_suite(model: &DistributionModel, cfg: &SuiteConfig) -> Result<SuiteOutcome> {
    validate(cfg)?;
    let op = Operator::new(model, cfg.epsilon, OPERATOR_QUAD_ORDER);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (lo, hi) = pair_domain(model, cfg.epsilon);
    let mut out = SuiteOutcome::new();
    for _ in 0..cfg.pairs {
        let a = random_probability_grid(&mut rng, lo, hi, cfg.nodes)?;
        let b = random_probability_grid(&mut rng, lo, hi, cfg.nodes)?;
        let (ta, tb) = (op.apply_t(&a)?, op.apply_t(&b)?);
        let fine = refined(ta.nodes());
        let (fa, fb) = (op.apply_t_on(&a, &fine)?, op.apply_t_on(&b, &fine)?);
        for &beta in &cfg.betas {
            let lhs = triple_norm_diff(&ta, &tb, beta)?;
            let slack = 10.0 * (lhs - triple_norm_diff(&fa, &fb, beta)?).abs();
            let rhs = model.mellin_real(beta) * triple_norm_diff(&a, &b, beta)?;
            out.record(lhs, rhs + slack + 1e-14);
        }
    }
    Ok(out)
}

/// |L_eps[nu1] - L_eps[nu2]| <= eps^(2 beta) |||nu1 - nu2|||_beta.
pub fn lipschitz_suite(model: &DistributionModel, cfg: &SuiteConfig) -> Result<SuiteOutcome> {
    validate(cfg)?;
    if !(cfg.epsilon > 0.0) {
        return Err(invalid(MODULE, "the L_eps bound needs eps > 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (lo, hi) = pair_domain(model, cfg.epsilon);
    let eps = cfg.epsilon;
    let mut out = SuiteOutcome::new();
    for _ in 0..cfg.pairs {
        let a = random_probability_grid(&mut rng, lo, hi, cfg.nodes)?;
        let b = random_probability_grid(&mut rng, lo, hi, cfg.nodes)?;
        let lhs = (l_functional(&a, eps) - l_functional(&b, eps)).abs();
        for &beta in &cfg.betas {
            let rhs = eps.powf(2.0 * beta) * triple_norm_diff(&a, &b, beta)?;
            out.record(lhs, rhs * (1.0 + 1e-12) + 1e-15);
        }
    }
    Ok(out)
}
