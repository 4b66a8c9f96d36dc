//! The tail exponent alpha (root of M(u) = 1 in (0, 1)) and the root-free
//! strip to its right, found by counting zeros of 1 - M(u) with the
//! argument principle.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist_models::{DistributionModel, MellinRule};
use crate::error::{invalid, out_of_range, Error, Result};

const MODULE: &str = "alpha_delta";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaSolution {
    pub alpha: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Solves M(alpha) = 1 on (0, 1): bisection down to a bracket of width
/// 1e-3, then safeguarded Newton.
pub fn solve_alpha(model: &DistributionModel, tol: f64) -> Result<AlphaSolution> {
    let regime = model.validate_regime()?;
    if !regime.dh_ok {
        return Err(Error::RegimeViolation(regime.messages.join("; ")));
    }
    if !(tol > 0.0) {
        return Err(invalid(MODULE, "tolerance must be positive"));
    }
    let rule = model.mellin_rule();
    let f = |b: f64| rule.eval_real(b) - 1.0;
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut iterations = 0;
    while hi - lo > 1e-3 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    let mut x = 0.5 * (lo + hi);
    let mut best = (x, f(x).abs());
    for _ in 0..200 {
        iterations += 1;
        let fx = f(x);
        if fx.abs() < best.1 {
            best = (x, fx.abs());
        }
        if fx.abs() <= tol {
            return Ok(AlphaSolution {
                alpha: x,
                residual: fx.abs(),
                iterations,
            });
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let step = x - fx / rule.deriv_real(x);
        let next = if step > lo && step < hi {
            step
        } else {
            0.5 * (lo + hi)
        };
        if next == x || hi - lo <= f64::EPSILON * x {
            break;
        }
        x = next;
    }
    Err(Error::NoConvergence {
        module: MODULE,
        iterations,
        residual: best.1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub re_lo: f64,
    pub re_hi: f64,
    pub im_lo: f64,
    pub im_hi: f64,
}

impl Rect {
    pub fn new(re_lo: f64, re_hi: f64, im_lo: f64, im_hi: f64) -> Self {
        Rect {
            re_lo,
            re_hi,
            im_lo,
            im_hi,
        }
    }

    fn is_proper(&self) -> bool {
        [self.re_lo, self.re_hi, self.im_lo, self.im_hi]
            .iter()
            .all(|v| v.is_finite())
            && self.re_hi > self.re_lo
            && self.im_hi > self.im_lo
    }

    fn grown(&self, by: f64) -> Rect {
        Rect::new(
            self.re_lo - by,
            self.re_hi + by,
            self.im_lo - by,
            self.im_hi + by,
        )
    }

    fn center(&self) -> Complex64 {
        Complex64::new(
            0.5 * (self.re_lo + self.re_hi),
            0.5 * (self.im_lo + self.im_hi),
        )
    }

    fn contains(&self, z: Complex64) -> bool {
        z.re > self.re_lo && z.re < self.re_hi && z.im > self.im_lo && z.im < self.im_hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindingOptions {
    /// Initial boundary segment length.
    pub initial_step: f64,
    /// Largest accepted argument increment per segment.
    pub max_arg_step: f64,
    /// |1 - M| below this on the boundary counts as a boundary root.
    pub min_modulus: f64,
    pub retries: usize,
    /// Relative size of each rectangle perturbation.
    pub perturbation: f64,
    pub max_depth: usize,
}

impl Default for WindingOptions {
    fn default() -> Self {
        WindingOptions {
            initial_step: 0.25,
            max_arg_step: PI / 4.0,
            min_modulus: 1e-9,
            retries: 5,
            perturbation: 1e-6,
            max_depth: 48,
        }
    }
}

impl WindingOptions {
    /// Same options with twice the boundary resolution.
    pub fn refined(&self) -> Self {
        WindingOptions {
            initial_step: 0.5 * self.initial_step,
            max_arg_step: 0.5 * self.max_arg_step,
            ..*self
        }
    }
}

struct Tracker<'a> {
    rule: &'a MellinRule,
    opts: &'a WindingOptions,
    min_modulus: f64,
    failed: bool,
}

impl Tracker<'_> {
    fn f(&mut self, u: Complex64) -> Complex64 {
        let v = Complex64::new(1.0, 0.0) - self.rule.eval(u);
        let m = v.norm();
        if m < self.min_modulus {
            self.min_modulus = m;
        }
        v
    }

    fn segment(&mut self, a: Complex64, fa: Complex64, b: Complex64, fb: Complex64, depth: usize) -> f64 {
        let d = (fb / fa).arg();
        if d.abs() < self.opts.max_arg_step {
            return d;
        }
        if depth >= self.opts.max_depth {
            self.failed = true;
            return d;
        }
        let m = 0.5 * (a + b);
        let fm = self.f(m);
        if fm.norm() < self.opts.min_modulus {
            self.failed = true;
            return d;
        }
        self.segment(a, fa, m, fm, depth + 1) + self.segment(m, fm, b, fb, depth + 1)
    }

    fn edge(&mut self, a: Complex64, b: Complex64) -> f64 {
        let n = ((b - a).norm() / self.opts.initial_step).ceil().max(1.0) as usize;
        let mut total = 0.0;
        let mut z0 = a;
        let mut f0 = self.f(z0);
        for k in 1..=n {
            let z1 = if k == n {
                b
            } else {
                a + (b - a) * (k as f64 / n as f64)
            };
            let f1 = self.f(z1);
            if self.min_modulus < self.opts.min_modulus {
                self.failed = true;
                return total;
            }
            total += self.segment(z0, f0, z1, f1, 0);
            z0 = z1;
            f0 = f1;
        }
        total
    }

    fn winding(&mut self, r: &Rect) -> Option<usize> {
        let c = |x: f64, y: f64| Complex64::new(x, y);
        let mut total = 0.0;
        for (a, b) in [
            (c(r.re_lo, r.im_lo), c(r.re_hi, r.im_lo)),
            (c(r.re_hi, r.im_lo), c(r.re_hi, r.im_hi)),
            (c(r.re_hi, r.im_hi), c(r.re_lo, r.im_hi)),
            (c(r.re_lo, r.im_hi), c(r.re_lo, r.im_lo)),
        ] {
            total += self.edge(a, b);
            if self.failed {
                return None;
            }
        }
        let turns = total / (2.0 * PI);
        let n = turns.round();
        if (turns - n).abs() > 0.1 || n < 0.0 {
            return None;
        }
        Some(n as usize)
    }
}

/// Number of zeros of 1 - M(u) inside `rect`, with default options.
pub fn winding_count(model: &DistributionModel, rect: Rect) -> Result<usize> {
    winding_count_with(model.mellin_rule(), rect, &WindingOptions::default())
}

pub fn winding_count_with(rule: &MellinRule, rect: Rect, opts: &WindingOptions) -> Result<usize> {
    if !rect.is_proper() {
        return Err(invalid(MODULE, format!("degenerate rectangle {rect:?}")));
    }
    let scale = (rect.re_hi - rect.re_lo).max(rect.im_hi - rect.im_lo);
    let mut worst = f64::INFINITY;
    for attempt in 0..=opts.retries {
        let r = rect.grown(opts.perturbation * scale * attempt as f64);
        let mut tr = Tracker {
            rule,
            opts,
            min_modulus: f64::INFINITY,
            failed: false,
        };
        if let Some(n) = tr.winding(&r) {
            return Ok(n);
        }
        worst = worst.min(tr.min_modulus);
    }
    Err(Error::BoundaryRoot {
        retries: opts.retries,
        min_modulus: worst,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub delta: f64,
    /// min(delta_cap, alpha, 1 - alpha).
    pub upper: f64,
    pub eta: f64,
    pub im_max: f64,
    /// True when a root of 1 - M, not the cap, limits delta.
    pub limited_by_roots: bool,
    pub top_edge_min_modulus: f64,
    /// |1 - M| > 1/2 along the top edge of the strip.
    pub top_edge_root_free: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaOptions {
    pub winding: WindingOptions,
    /// Bisection resolution on delta.
    pub resolution: f64,
    /// Exclusion margin around Re u = alpha.
    pub eta: f64,
}

impl Default for DeltaOptions {
    fn default() -> Self {
        DeltaOptions {
            winding: WindingOptions::default(),
            resolution: 1e-4,
            eta: 1e-3,
        }
    }
}

pub fn find_delta(model: &DistributionModel, alpha: f64, im_max: f64, delta_cap: f64) -> Result<DeltaReport> {
    find_delta_with(model.mellin_rule(), alpha, im_max, delta_cap, &DeltaOptions::default())
}

pub fn find_delta_with(
    rule: &MellinRule,
    alpha: f64,
    im_max: f64,
    delta_cap: f64,
    opts: &DeltaOptions,
) -> Result<DeltaReport> {
    if !(delta_cap > 0.0) {
        return Err(invalid(MODULE, "delta_cap must be positive"));
    }
    if !(im_max > 0.0 && im_max.is_finite()) {
        return Err(invalid(MODULE, "im_max must be positive"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(MODULE, "alpha must lie in (0, 1)"));
    }
    let upper = delta_cap.min(alpha).min(1.0 - alpha);
    let eta = opts.eta.min(0.25 * upper);
    let count = |d: f64| {
        winding_count_with(
            rule,
            Rect::new(alpha + eta, alpha + d, -im_max, im_max),
            &opts.winding,
        )
    };
    let mut warnings = Vec::new();
    let (delta, limited) = if count(upper)? == 0 {
        (upper, false)
    } else {
        let (mut lo, mut hi) = (eta, upper);
        while hi - lo > opts.resolution {
            let mid = 0.5 * (lo + hi);
            if count(mid)? == 0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if lo <= eta + opts.resolution {
            return Err(Error::ScanInconclusive(format!(
                "roots of M(u) = 1 within {} of Re u = alpha (log-periodic case)",
                lo
            )));
        }
        warnings.push(format!(
            "complex root with real part near alpha + {hi:.4} limits delta below {upper:.4}; roots approach Re u = alpha"
        ));
        (lo, true)
    };
    let n = 256;
    let top_min = (0..=n)
        .map(|k| {
            let re = alpha + upper * k as f64 / n as f64;
            (Complex64::new(1.0, 0.0) - rule.eval(Complex64::new(re, im_max))).norm()
        })
        .fold(f64::INFINITY, f64::min);
    let top_free = top_min > 0.5;
    if !top_free {
        warnings.push(format!(
            "|1 - M| drops to {top_min:.3} on the top edge Im u = {im_max}; roots above the scanned strip are not excluded"
        ));
    }
    Ok(DeltaReport {
        delta,
        upper,
        eta,
        im_max,
        limited_by_roots: limited,
        top_edge_min_modulus: top_min,
        top_edge_root_free: top_free,
        warnings,
    })
}

/// Locates all zeros of 1 - M inside `rect` by recursive subdivision and
/// Newton polishing.
pub fn locate_roots(rule: &MellinRule, rect: Rect, opts: &WindingOptions) -> Result<Vec<Complex64>> {
    let mut out = Vec::new();
    locate_inner(rule, rect, opts, 0, &mut out)?;
    out.sort_by(|a, b| a.im.total_cmp(&b.im).then(a.re.total_cmp(&b.re)));
    Ok(out)
}

fn locate_inner(rule: &MellinRule, rect: Rect, opts: &WindingOptions, depth: usize, out: &mut Vec<Complex64>) -> Result<()> {
    let n = winding_count_with(rule, rect, opts)?;
    if n == 0 {
        return Ok(());
    }
    let diam = (rect.re_hi - rect.re_lo).hypot(rect.im_hi - rect.im_lo);
    if n == 1 || diam < 1e-6 || depth > 40 {
        if let Some(z) = newton_root(rule, rect.center()) {
            if rect.grown(1e-3 * diam).contains(z) {
                for _ in 0..n {
                    out.push(z);
                }
                return Ok(());
            }
        }
        if diam < 1e-6 || depth > 40 {
            for _ in 0..n {
                out.push(rect.center());
            }
            return Ok(());
        }
    }
    // Off-centre split keeps symmetric roots off the cut lines.
    let xm = rect.re_lo + 0.5137 * (rect.re_hi - rect.re_lo);
    let ym = rect.im_lo + 0.4871 * (rect.im_hi - rect.im_lo);
    for sub in [
        Rect::new(rect.re_lo, xm, rect.im_lo, ym),
        Rect::new(xm, rect.re_hi, rect.im_lo, ym),
        Rect::new(rect.re_lo, xm, ym, rect.im_hi),
        Rect::new(xm, rect.re_hi, ym, rect.im_hi),
    ] {
        locate_inner(rule, sub, opts, depth + 1, out)?;
    }
    Ok(())
}

fn newton_root(rule: &MellinRule, start: Complex64) -> Option<Complex64> {
    let mut z = start;
    for _ in 0..60 {
        let mut f = Complex64::new(-1.0, 0.0);
        let mut df = Complex64::new(0.0, 0.0);
        for (l, w) in rule.ln_t.iter().zip(&rule.w) {
            let v = (z * l).exp() * w;
            f += v;
            df += v * l;
        }
        let step = f / df;
        if !step.re.is_finite() || !step.im.is_finite() {
            return None;
        }
        z -= step;
        if step.norm() < 1e-14 * (1.0 + z.norm()) {
            return Some(z);
        }
    }
    None
}

/// c_beta = 1 / (1 - M(beta)) for 0 < beta < alpha.
pub fn c_beta(model: &DistributionModel, alpha: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(out_of_range(MODULE, format!("beta = {beta} must be positive")));
    }
    if beta >= alpha {
        return Err(out_of_range(MODULE, format!("beta = {beta} must be below alpha = {alpha}")));
    }
    let m = model.mellin_real(beta);
    if m >= 1.0 {
        return Err(out_of_range(MODULE, format!("M(beta) = {m} is not below 1")));
    }
    Ok(1.0 / (1.0 - m))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaOptions {
    pub tol: f64,
    pub im_max: f64,
    pub delta_cap: f64,
    /// Width of the strip right of alpha searched for roots.
    pub scan_width: f64,
    pub delta: DeltaOptions,
}

impl Default for AlphaOptions {
    fn default() -> Self {
        AlphaOptions {
            tol: 1e-12,
            im_max: 100.0,
            delta_cap: 1.0,
            scan_width: 1.0,
            delta: DeltaOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaReport {
    pub alpha: f64,
    pub residual: f64,
    pub delta: f64,
    pub roots: Vec<Complex64>,
    /// (re_lo, re_hi, im_max) of the root scan.
    pub scan_strip: (f64, f64, f64),
    pub delta_report: DeltaReport,
    pub warnings: Vec<String>,
}

/// alpha, delta and the located roots in one report.
pub fn alpha_report(model: &DistributionModel, opts: &AlphaOptions) -> Result<AlphaReport> {
    let sol = solve_alpha(model, opts.tol)?;
    let rule = model.mellin_rule();
    let dr = find_delta_with(rule, sol.alpha, opts.im_max, opts.delta_cap, &opts.delta)?;
    let re_lo = sol.alpha + dr.eta;
    let re_hi = sol.alpha + opts.scan_width;
    let chunk = 10.0;
    let n_chunks = (opts.im_max / chunk).ceil() as usize;
    let chunks: Vec<Rect> = (0..n_chunks)
        .map(|k| {
            let lo = k as f64 * chunk;
            Rect::new(re_lo, re_hi, lo, (lo + chunk).min(opts.im_max))
        })
        .collect();
    let found = chunks
        .par_iter()
        .map(|r| locate_roots(rule, *r, &opts.delta.winding))
        .collect::<Result<Vec<_>>>()?;
    let mut roots = Vec::new();
    for z in found.into_iter().flatten() {
        roots.push(z);
        if z.im.abs() > 1e-9 {
            roots.push(z.conj());
        }
    }
    roots.sort_by(|a, b| a.im.abs().total_cmp(&b.im.abs()).then(a.im.total_cmp(&b.im)));
    let mut warnings = dr.warnings.clone();
    if let Some(z) = roots.iter().find(|z| (z.re - sol.alpha).abs() < 1e-6) {
        warnings.push(format!("root {z} lies on Re u = alpha (log-periodic case, not modelled)"));
    }
    Ok(AlphaReport {
        alpha: sol.alpha,
        residual: sol.residual,
        delta: dr.delta,
        roots,
        scan_strip: (re_lo, re_hi, opts.im_max),
        delta_report: dr,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn root_count_of_rectangle_around_origin() {
        let m = DistributionModel::ref1();
        let n = winding_count(&m, Rect::new(-0.05, 0.05, -0.05, 0.05)).unwrap();
        assert_eq!(n, 1);
    }
}
