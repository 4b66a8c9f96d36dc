//! Acceptance run on the reference law: one PASS/FAIL line per criterion.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use dhlab_cli::cache::sha256_hex;
use dhlab_cli::ResultEnvelope;
use dhlab_core::alpha_delta::{alpha_report, AlphaOptions, AlphaReport};
use dhlab_core::chain_sim::{default_burn_in, lyapunov_matrix, lyapunov_mc, ChainConfig};
use dhlab_core::dh_asymptotics::*;
use dhlab_core::dist_models::DistributionModel;
use dhlab_core::transfer_grid::suites::{contraction_suite, lipschitz_suite, SuiteConfig};
use dhlab_core::transfer_grid::{fixed_point_nu, support_bound};

const EPS: [f64; 4] = [0.1, 0.05, 0.02, 0.01];
const SEED: u64 = 20240607;

struct Gate {
    results: Vec<bool>,
}

impl Gate {
    fn record(&mut self, id: usize, name: &str, pass: bool, detail: String) {
        println!("{} [{id:>2}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.results.push(pass);
    }

    fn guard(&mut self, id: usize, name: &str, f: impl FnOnce() -> Result<(bool, String), String>) {
        match f() {
            Ok((pass, detail)) => self.record(id, name, pass, detail),
            Err(e) => self.record(id, name, false, format!("error: {e}")),
        }
    }
}

fn main() {
    let t0 = Instant::now();
    let model = DistributionModel::ref1();
    let report = alpha_report(&model, &AlphaOptions::default()).expect("alpha report");
    let cfg = DhConfig::default();
    let inputs = prepare_inputs(&model, &report, &cfg).expect("limit measures");
    let chain = ChainSettings {
        n_samples: 10_000_000,
        burn_in: None,
        seed: SEED,
    };
    let sweep = scaling_sweep(&model, &inputs, &EPS, None, &chain, &cfg).expect("sweep");
    eprintln!("pipeline ready after {:.1} s", t0.elapsed().as_secs_f64());
    for r in &sweep.rows {
        eprintln!(
            "eps {:<5} L {:.7} +- {:.1e}  mc {:.7} +- {:.1e}  amp {:.4}  dev {:+.4}  defect {:.3e}  mass coef {:+.3}  paste {:.3}",
            r.epsilon,
            r.l_transfer,
            r.l_transfer_err,
            r.l_mc.unwrap_or(f64::NAN),
            r.l_mc_err.unwrap_or(f64::NAN),
            r.amplitude,
            r.relative_deviation,
            r.defect_norm,
            r.mass_defect_coefficient,
            r.paste_ratio
        );
    }

    let mut gate = Gate { results: Vec::new() };
    let rows_ok = sweep.rows.iter().all(|r| r.status == RowStatus::Ok);

    // 1
    let slope = sweep.fitted_global_exponent;
    let two_a = 2.0 * report.alpha;
    gate.record(
        1,
        "exponent law",
        rows_ok && (slope - two_a).abs() <= 0.1,
        format!("slope {slope:.4} vs 2 alpha {two_a:.4}, |diff| {:.4} <= 0.1", (slope - two_a).abs()),
    );

    // 2
    let devs: Vec<f64> = sweep.rows.iter().map(|r| r.relative_deviation.abs()).collect();
    let last = *devs.last().unwrap();
    let monotone = devs.windows(2).all(|w| w[1] < w[0]);
    gate.record(
        2,
        "amplitude",
        last <= 0.15 && monotone,
        format!(
            "C_mu {:.5}, |deviation| {} ; at eps = 0.01 {:.4} <= 0.15, decreasing: {monotone}",
            sweep.c_mu,
            devs.iter().map(|d| format!("{d:.4}")).collect::<Vec<_>>().join(" "),
            last
        ),
    );

    // 3
    let zs: Vec<f64> = sweep
        .rows
        .iter()
        .map(|r| {
            let se = (r.l_mc_err.unwrap_or(f64::NAN).powi(2) + r.l_transfer_err.powi(2)).sqrt();
            (r.l_mc.unwrap_or(f64::NAN) - r.l_transfer).abs() / se
        })
        .collect();
    gate.record(
        3,
        "cross-method",
        zs.iter().all(|z| *z <= 4.0),
        format!(
            "|L_mc - L_transfer| / combined SE at 1e7 steps: {}",
            zs.iter().map(|z| format!("{z:.2}")).collect::<Vec<_>>().join(" ")
        ),
    );

    // 4
    gate.guard(4, "contraction suite", || {
        let mut detail = Vec::new();
        let mut violations = 0;
        for eps in [0.0, 0.1, 0.01] {
            let o = contraction_suite(&model, &SuiteConfig::standard(eps, SEED)).map_err(|e| e.to_string())?;
            violations += o.violations;
            detail.push(format!("eps {eps}: {}/{} violations, worst ratio {:.3}", o.violations, o.checks, o.worst_ratio));
        }
        Ok((violations == 0, detail.join("; ")))
    });

    // 5
    gate.guard(5, "Lipschitz bound and distance to nu_eps", || {
        let mut violations = 0;
        let mut worst: f64 = 0.0;
        for &eps in &EPS {
            let o = lipschitz_suite(&model, &SuiteConfig::standard(eps, SEED + 1)).map_err(|e| e.to_string())?;
            violations += o.violations;
            worst = worst.max(o.worst_ratio);
        }
        let dist: Vec<f64> = sweep.rows.iter().map(|r| r.distance_to_fixed_point / r.distance_bound).collect();
        let dist_ok = dist.iter().all(|q| *q <= 1.0);
        Ok((
            violations == 0 && dist_ok,
            format!(
                "{violations} violations over {} eps (worst ratio {worst:.3}); dist / (c_beta defect): {}",
                EPS.len(),
                dist.iter().map(|q| format!("{q:.3}")).collect::<Vec<_>>().join(" ")
            ),
        ))
    });

    // 6
    gate.guard(6, "L(0) = max(0, E log Z) = 0", || {
        let c = ChainConfig::with_samples(0.0, default_burn_in(&model), 10_000_000, SEED);
        let s = lyapunov_mc(&model, &c).map_err(|e| e.to_string())?;
        let m = lyapunov_matrix(&model, &c).map_err(|e| e.to_string())?;
        let ok = |x: f64, se: f64| x.abs() <= 4.0 * se.max(1e-12);
        Ok((
            ok(s.mean, s.std_error) && ok(m.mean, m.std_error),
            format!("sigma chain {:.2e} (se {:.1e}), matrix {:.2e} (se {:.1e})", s.mean, s.std_error, m.mean, m.std_error),
        ))
    });

    // 7
    gate.guard(7, "eps <-> -eps symmetry", || {
        let mut worst: f64 = 0.0;
        for eps in [0.1, 0.01] {
            let c = ChainConfig::with_samples(eps, 0, 1_000_000, SEED);
            let p = lyapunov_matrix(&model, &c).map_err(|e| e.to_string())?;
            let n = lyapunov_matrix(&model, &ChainConfig { epsilon: -eps, ..c }).map_err(|e| e.to_string())?;
            worst = worst.max((p.mean - n.mean).abs());
        }
        Ok((worst <= 1e-12, format!("max |L(eps) - L(-eps)| = {worst:.1e} after 1e6 steps, eps in {{0.1, 0.01}}")))
    });

    // 8
    let d_prime = inputs.fit_nu.remainder_exponent;
    let fit_ok = (inputs.fit_nu.alpha_fit - report.alpha).abs() <= 0.05
        && (inputs.fit_omega.alpha_fit - report.alpha).abs() <= 0.05
        && d_prime.is_some_and(|d| d >= report.delta - 0.05);
    gate.record(
        8,
        "tail laws",
        fit_ok,
        format!(
            "alpha {:.5}; fit nu_0 {:.5}, fit omega_0 {:.5}; remainder exponent {:.3} >= delta - 0.05 = {:.3}",
            report.alpha,
            inputs.fit_nu.alpha_fit,
            inputs.fit_omega.alpha_fit,
            d_prime.unwrap_or(f64::NAN),
            report.delta - 0.05
        ),
    );

    // 9
    gate.guard(9, "support and structure", || structure(&model, &report, &inputs, &sweep));

    // 10
    let floor = two_a.min(report.alpha + report.delta) - sweep.beta_used - 0.15;
    gate.record(
        10,
        "defect scaling",
        rows_ok && sweep.defect_exponent >= floor,
        format!("defect exponent {:.3} >= {floor:.3} (beta {:.4})", sweep.defect_exponent, sweep.beta_used),
    );

    // 11
    gate.guard(11, "normalization invariance", || {
        let base = inputs.c_mu.c_mu;
        let y2 = 0.4;
        let om2 = compute_omega0(&model, report.alpha, &DhConfig { y: Some(y2), ..cfg }).map_err(|e| e.to_string())?;
        let fit2 = fit_head_omega0(&om2.grid, default_omega0_window(&om2.grid, y2), Some(report.alpha)).map_err(|e| e.to_string())?;
        let c2 = compute_c_mu(&om2.grid, (&inputs.fit_nu, &fit2)).map_err(|e| e.to_string())?.c_mu;
        let scaled = inputs.omega0.scaled(3.7);
        let fit3 = fit_head_omega0(&scaled, default_omega0_window(&scaled, inputs.y), Some(report.alpha)).map_err(|e| e.to_string())?;
        let c3 = compute_c_mu(&scaled, (&inputs.fit_nu, &fit3)).map_err(|e| e.to_string())?.c_mu;
        let (r2, r3) = ((c2 / base - 1.0).abs(), (c3 / base - 1.0).abs());
        Ok((
            r2 <= 0.01 && r3 <= 0.01,
            format!("C_mu {base:.5}; y = {} -> {y2}: {c2:.5} ({r2:.1e}); rescaled x3.7: {c3:.5} ({r3:.1e})", inputs.y),
        ))
    });

    // 12
    gate.guard(12, "determinism and cache", determinism);

    let failed = gate.results.iter().filter(|p| !**p).count();
    println!(
        "{} of {} criteria passed in {:.0} s",
        gate.results.len() - failed,
        gate.results.len(),
        t0.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

fn structure(
    model: &DistributionModel,
    report: &AlphaReport,
    inputs: &DhInputs,
    sweep: &PredictionReport,
) -> Result<(bool, String), String> {
    let eps = 0.1;
    let b = support_bound(model, eps).map_err(|e| e.to_string())?;
    let nu = fixed_point_nu(model, report.alpha, &DhConfig::default().nu_config(eps)).map_err(|e| e.to_string())?;
    let beyond = nu.grid.nodes().iter().zip(nu.grid.values()).filter(|(x, _)| **x > b).all(|(_, v)| *v == 0.0)
        && nu.grid.eval(b * (1.0 + 1e-9)) == 0.0
        && nu.grid.eval(2.0 * b) == 0.0;
    let reaches = nu.grid.eval(0.99 * b) > 0.0;
    let k = default_powergrowth_k(model, inputs.y);
    let pg = powergrowth_diagnostic(&inputs.omega0, model, inputs.y, k).map_err(|e| e.to_string())?;
    let coefs: Vec<f64> = sweep.rows.iter().map(|r| r.mass_defect_coefficient).collect();
    let sup = coefs.iter().fold(0.0f64, |a, c| a.max(c.abs()));
    let bounded = coefs.iter().all(|c| c.is_finite()) && sup <= 2.0 && coefs.last().unwrap().abs() <= 1.5 * coefs[0].abs();
    Ok((
        beyond && reaches && pg.holds && bounded,
        format!(
            "b_0.1 = {b:.5}, zero beyond: {beyond}, positive below: {reaches}; power growth at {} nodes (k {k:.3}, exponent {:.3}, worst ratio {:.3}): {}; (mass0 - 1)/eps^alpha {} bounded: {bounded}",
            pg.nodes_checked,
            pg.exponent,
            pg.max_violation_ratio,
            pg.holds,
            coefs.iter().map(|c| format!("{c:+.3}")).collect::<Vec<_>>().join(" ")
        ),
    ))
}

fn dh_verify(config: &Path, cache: &Path, out: &Path) -> Result<Option<i32>, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_dhlab"))
        .args(["dh-verify", "--config"])
        .arg(config)
        .arg("--cache")
        .arg(cache)
        .arg("--out")
        .arg(out)
        .args(["--grid", "512", "--eps", "0.1,0.05", "--steps", "64000"])
        .output()
        .map_err(|e| e.to_string())?;
    if !matches!(o.status.code(), Some(0) | Some(4)) {
        return Err(String::from_utf8_lossy(&o.stderr).into_owned());
    }
    Ok(o.status.code())
}

fn outputs(dir: &Path) -> Result<(Vec<(String, String)>, ResultEnvelope), String> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    let mut csv = Vec::new();
    let mut env = None;
    for p in files {
        let bytes = std::fs::read(&p).map_err(|e| e.to_string())?;
        match p.extension().and_then(|e| e.to_str()) {
            Some("csv") => csv.push((p.file_name().unwrap().to_string_lossy().into_owned(), sha256_hex(&bytes))),
            Some("json") => env = Some(serde_json::from_slice(&bytes).map_err(|e| e.to_string())?),
            _ => {}
        }
    }
    Ok((csv, env.ok_or("no envelope")?))
}

fn determinism() -> Result<(bool, String), String> {
    let d = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = d.path().join("ref1.json");
    let spec = serde_json::to_string(dhlab_core::dist_models::DistributionModel::ref1().spec()).unwrap();
    std::fs::write(&config, format!(r#"{{ "model": {spec}, "seed": {SEED} }}"#)).map_err(|e| e.to_string())?;
    let (cache_a, cache_b) = (d.path().join("cache_a"), d.path().join("cache_b"));
    let c1 = dh_verify(&config, &cache_a, &d.path().join("cold1"))?;
    let c2 = dh_verify(&config, &cache_b, &d.path().join("cold2"))?;
    let c3 = dh_verify(&config, &cache_a, &d.path().join("warm"))?;
    let (h1, e1) = outputs(&d.path().join("cold1"))?;
    let (h2, _) = outputs(&d.path().join("cold2"))?;
    let (h3, e3) = outputs(&d.path().join("warm"))?;
    let repeat = h1 == h2 && c1 == c2;
    let cached = h1 == h3 && c1 == c3 && e1.cache_hits.is_empty() && e3.cache_hits.len() == 2 && e1.payload == e3.payload;
    Ok((
        repeat && cached && !h1.is_empty(),
        format!(
            "{} CSV files; repeated cold runs identical: {repeat}; cache hit ({} entries) identical to cold: {cached}",
            h1.len(),
            e3.cache_hits.len()
        ),
    ))
}
