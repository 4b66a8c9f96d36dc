//! Monte Carlo estimators of L(eps): the projective sigma-chain, the rescaled
//! s-chain and the renormalized matrix product, plus the one-step maps.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist_models::DistributionModel;
use crate::error::{invalid, out_of_range, Result};

const MODULE: &str = "chain_sim";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapParams {
    pub epsilon: f64,
}

impl MapParams {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon.abs() < 1.0) {
            return Err(out_of_range(MODULE, format!("epsilon = {epsilon} outside (-1, 1)")));
        }
        Ok(MapParams { epsilon })
    }

    pub fn g(&self, s: f64) -> f64 {
        g_map(self.epsilon, s)
    }

    pub fn h(&self, sigma: f64) -> f64 {
        h_map(self.epsilon, sigma)
    }
}

/// g_eps(s) = (1 + s) / (1 + eps^2 s).
#[inline]
pub fn g_map(eps: f64, s: f64) -> f64 {
    (1.0 + s) / (1.0 + eps * eps * s)
}

/// h_eps(sigma) = (eps^2 + sigma) / (1 + sigma).
#[inline]
pub fn h_map(eps: f64, sigma: f64) -> f64 {
    (eps * eps + sigma) / (1.0 + sigma)
}

/// Inverse of `g_map` on [1, 1/eps^2).
pub fn g_inv(eps: f64, y: f64) -> Result<f64> {
    let e2 = eps * eps;
    if !(y >= 1.0) || (e2 > 0.0 && !(y * e2 < 1.0)) || !y.is_finite() {
        return Err(out_of_range(MODULE, format!("g_inv: y = {y} outside [1, 1/eps^2)")));
    }
    Ok(g_inv_unchecked(eps, y))
}

#[inline]
pub(crate) fn g_inv_unchecked(eps: f64, y: f64) -> f64 {
    (y - 1.0) / (1.0 - eps * eps * y)
}

/// Inverse of `h_map` on [eps^2, 1).
pub fn h_inv(eps: f64, y: f64) -> Result<f64> {
    let e2 = eps * eps;
    if !(y >= e2 && y < 1.0) {
        return Err(out_of_range(MODULE, format!("h_inv: y = {y} outside [eps^2, 1)")));
    }
    Ok(h_inv_unchecked(eps, y))
}

#[inline]
pub(crate) fn h_inv_unchecked(eps: f64, y: f64) -> f64 {
    (y - eps * eps) / (1.0 - y)
}

#[inline]
pub fn step_sigma(sigma: f64, z: f64, eps: f64) -> f64 {
    z * h_map(eps, sigma)
}

#[inline]
pub fn step_s(s: f64, z: f64, eps: f64) -> f64 {
    z * g_map(eps, s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub epsilon: f64,
    /// Total steps, burn-in included.
    pub n_steps: u64,
    pub burn_in: u64,
    pub seed: u64,
    pub n_batches: u64,
}

impl ChainConfig {
    /// `n_samples` post-burn-in steps split into 32 batches.
    pub fn with_samples(epsilon: f64, burn_in: u64, n_samples: u64, seed: u64) -> Self {
        ChainConfig {
            epsilon,
            n_steps: burn_in + n_samples,
            burn_in,
            seed,
            n_batches: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.abs() < 1.0) {
            return Err(out_of_range(MODULE, format!("epsilon = {} outside (-1, 1)", self.epsilon)));
        }
        if self.burn_in >= self.n_steps {
            return Err(invalid(MODULE, "burn_in must be below n_steps"));
        }
        if self.n_batches < 8 {
            return Err(invalid(MODULE, "n_batches must be at least 8"));
        }
        let n = self.n_steps - self.burn_in;
        if !n.is_multiple_of(self.n_batches) || n / self.n_batches < 2 {
            return Err(invalid(
                MODULE,
                format!("{n} samples do not split into {} equal batches", self.n_batches),
            ));
        }
        Ok(())
    }

    fn batch_len(&self) -> u64 {
        (self.n_steps - self.burn_in) / self.n_batches
    }
}

/// max(1e4, 10 / |E log Z|) steps.
pub fn default_burn_in(model: &DistributionModel) -> u64 {
    let e = model.mean_log().abs();
    let b = if e > 0.0 { (10.0 / e).ceil() } else { f64::INFINITY };
    b.clamp(1e4, 1e9) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SigmaChain,
    SChain,
    MatrixProduct,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::SigmaChain => "sigma_chain",
            Method::SChain => "s_chain",
            Method::MatrixProduct => "matrix_product",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    pub epsilon: f64,
    pub method: Method,
    pub mean: f64,
    pub std_error: f64,
    /// Effective sample size implied by the batch-means error.
    pub n_effective: u64,
    pub seed: u64,
    pub lag1_autocorrelation: f64,
    pub warnings: Vec<String>,
}

/// Random stream shared by all estimators for a given seed.
pub fn z_stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

struct BatchMeans {
    batch_len: u64,
    in_batch: u64,
    acc: f64,
    means: Vec<f64>,
    sum: f64,
    sum_sq: f64,
    n: u64,
}

impl BatchMeans {
    fn new(batch_len: u64) -> Self {
        BatchMeans {
            batch_len,
            in_batch: 0,
            acc: 0.0,
            means: Vec::new(),
            sum: 0.0,
            sum_sq: 0.0,
            n: 0,
        }
    }

    #[inline]
    fn push(&mut self, x: f64) {
        self.acc += x;
        self.sum += x;
        self.sum_sq += x * x;
        self.n += 1;
        self.in_batch += 1;
        if self.in_batch == self.batch_len {
            self.means.push(self.acc / self.batch_len as f64);
            self.acc = 0.0;
            self.in_batch = 0;
        }
    }

    fn finish(self, epsilon: f64, method: Method, seed: u64) -> LyapunovEstimate {
        let k = self.means.len() as f64;
        let mean = self.means.iter().sum::<f64>() / k;
        let var_b = self.means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (k - 1.0);
        let std_error = (var_b / k).sqrt();
        let rho = if var_b > 0.0 {
            self.means
                .windows(2)
                .map(|w| (w[0] - mean) * (w[1] - mean))
                .sum::<f64>()
                / ((k - 1.0) * var_b)
        } else {
            0.0
        };
        let n = self.n as f64;
        let var_x = (self.sum_sq / n - (self.sum / n).powi(2)).max(0.0);
        let n_effective = if std_error > 0.0 {
            (var_x / (std_error * std_error)).clamp(1.0, n)
        } else {
            n
        };
        let mut warnings = Vec::new();
        if rho.abs() >= 0.3 {
            warnings.push(format!(
                "{}: lag-1 autocorrelation of batch means is {rho:.3}; burn-in or batch length may be too short",
                method.as_str()
            ));
        }
        LyapunovEstimate {
            epsilon,
            method,
            mean,
            std_error,
            n_effective: n_effective.round() as u64,
            seed,
            lag1_autocorrelation: rho,
            warnings,
        }
    }
}

fn check_absorbing(model: &DistributionModel, eps: f64, sigma: f64) {
    if cfg!(debug_assertions) {
        let lo = model.c_minus() * eps * eps;
        let hi = model.c_plus();
        debug_assert!(
            sigma >= lo * (1.0 - 1e-12) && sigma <= hi * (1.0 + 1e-12),
            "sigma = {sigma} left [{lo}, {hi}]"
        );
    }
}

/// Batch-mean average of log(1 + sigma_n) along the projective chain.
pub fn lyapunov_mc(model: &DistributionModel, config: &ChainConfig) -> Result<LyapunovEstimate> {
    config.validate()?;
    let eps = config.epsilon;
    let mut rng = z_stream(config.seed);
    let mut sigma = 1.0;
    let mut bm = BatchMeans::new(config.batch_len());
    for n in 0..config.n_steps {
        sigma = step_sigma(sigma, model.sample(&mut rng), eps);
        if n >= 1 {
            check_absorbing(model, eps, sigma);
        }
        if n >= config.burn_in {
            bm.push(sigma.ln_1p());
        }
    }
    Ok(bm.finish(eps, Method::SigmaChain, config.seed))
}

/// Average of log(1 + eps^2 s_n) along the rescaled chain started at
/// s_0 = 1/eps^2.
pub fn lyapunov_s_chain(model: &DistributionModel, config: &ChainConfig) -> Result<LyapunovEstimate> {
    config.validate()?;
    let eps = config.epsilon;
    if eps == 0.0 {
        return Err(invalid(MODULE, "the s-chain does not estimate L(0)"));
    }
    let e2 = eps * eps;
    let mut rng = z_stream(config.seed);
    let mut s = 1.0 / e2;
    let mut bm = BatchMeans::new(config.batch_len());
    for n in 0..config.n_steps {
        s = step_s(s, model.sample(&mut rng), eps);
        if n >= config.burn_in {
            bm.push((e2 * s).ln_1p());
        }
    }
    Ok(bm.finish(eps, Method::SChain, config.seed))
}

/// Growth rate of the product M_n ... M_1, renormalized by its largest
/// entry every step.
pub fn lyapunov_matrix(model: &DistributionModel, config: &ChainConfig) -> Result<LyapunovEstimate> {
    config.validate()?;
    let eps = config.epsilon;
    let mut rng = z_stream(config.seed);
    let mut p = [1.0, 0.0, 0.0, 1.0];
    let mut bm = BatchMeans::new(config.batch_len());
    for n in 0..config.n_steps {
        let z = model.sample(&mut rng);
        let q = [
            p[0] + eps * p[2],
            p[1] + eps * p[3],
            eps * z * p[0] + z * p[2],
            eps * z * p[1] + z * p[3],
        ];
        let m = q.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        p = [q[0] / m, q[1] / m, q[2] / m, q[3] / m];
        if cfg!(debug_assertions) && eps > 0.0 && n >= 1 {
            debug_assert!(p.iter().all(|&v| v > 0.0), "non-positive entry in {p:?}");
        }
        if n >= config.burn_in {
            bm.push(m.ln());
        }
    }
    Ok(bm.finish(eps, Method::MatrixProduct, config.seed))
}

pub fn lyapunov(model: &DistributionModel, method: Method, config: &ChainConfig) -> Result<LyapunovEstimate> {
    match method {
        Method::SigmaChain => lyapunov_mc(model, config),
        Method::SChain => lyapunov_s_chain(model, config),
        Method::MatrixProduct => lyapunov_matrix(model, config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_split_is_validated() {
        let mut c = ChainConfig::with_samples(0.1, 10, 320, 1);
        assert!(c.validate().is_ok());
        c.n_steps += 1;
        assert!(c.validate().is_err());
        c.n_steps -= 1;
        c.n_batches = 4;
        assert!(c.validate().is_err());
    }
}
