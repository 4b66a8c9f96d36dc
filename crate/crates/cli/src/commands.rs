use std::collections::BTreeMap;
use std::time::Instant;

use dhlab_core::alpha_delta::{alpha_report, AlphaOptions, AlphaReport};
use dhlab_core::chain_sim::{default_burn_in, lyapunov, ChainConfig, Method};
use dhlab_core::dh_asymptotics::{
    assemble_inputs, compute_nu0, compute_omega0, default_beta, scaling_sweep, ChainSettings, DhConfig, PredictionReport,
    RowStatus,
};
use dhlab_core::transfer_grid::{fixed_point_nu, l_functional, support_bound, FixedPoint, TailGrid};
use serde::Serialize;
use serde_json::json;

use crate::cache::{hash_json, Cache};
use crate::config::Resolved;
use crate::output::{Cell, Csv, ResultEnvelope, SCHEMA_VERSION};
use crate::{CliError, EXIT_OK, EXIT_THRESHOLD, EXIT_VALIDATION};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Validate,
    Alpha,
    Lyapunov,
    FixedPoint,
    DhVerify,
    Sweep,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Alpha => "alpha",
            Command::Lyapunov => "lyapunov",
            Command::FixedPoint => "fixed-point",
            Command::DhVerify => "dh-verify",
            Command::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub envelope: ResultEnvelope,
    /// (file suffix, CSV text); an empty suffix is the main table.
    pub tables: Vec<(String, String)>,
    pub exit_code: i32,
}

struct Ctx<'a> {
    res: &'a Resolved,
    cache: Option<Cache>,
    timings: BTreeMap<String, f64>,
    cache_hits: Vec<String>,
    warnings: Vec<String>,
}

impl Ctx<'_> {
    fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        *self.timings.entry(stage.to_string()).or_default() += t0.elapsed().as_secs_f64();
        out
    }

    /// Fixed point from the cache, or computed and stored.
    fn fixed_point(
        &mut self,
        op: &str,
        params: impl Serialize,
        compute: impl FnOnce() -> dhlab_core::Result<FixedPoint>,
    ) -> Result<Solved, CliError> {
        let key = hash_json(&(op, params));
        if let Some(cache) = &self.cache {
            if let Some((g, meta)) = cache.get(op, &key) {
                self.cache_hits.push(format!("{op}-{}", &key[..16]));
                return Ok((g, meta.iterations, meta.residual));
            }
        }
        let fp = self.timed(op, compute)?;
        if let Some(cache) = &self.cache {
            cache.put(op, &key, &fp.grid, fp.iterations, fp.residual)?;
        }
        Ok((fp.grid, fp.iterations, fp.residual))
    }
}

pub fn run(cmd: Command, res: &Resolved) -> Result<Outcome, CliError> {
    let model_hash = hash_json(&res.spec);
    let mut ctx = Ctx {
        res,
        cache: res.cache_root.clone().map(|r| Cache::new(r, &model_hash)),
        timings: BTreeMap::new(),
        cache_hits: Vec::new(),
        warnings: Vec::new(),
    };
    let (payload, tables, exit_code) = match cmd {
        Command::Validate => validate(&mut ctx)?,
        Command::Alpha => alpha(&mut ctx)?,
        Command::Lyapunov => lyapunov_rows(&mut ctx)?,
        Command::FixedPoint => fixed_points(&mut ctx)?,
        Command::DhVerify => dh(&mut ctx, true)?,
        Command::Sweep => dh(&mut ctx, false)?,
    };
    let mut config = res.config.clone();
    config.seed = Some(res.seed);
    Ok(Outcome {
        envelope: ResultEnvelope {
            schema_version: SCHEMA_VERSION,
            model_hash,
            command: cmd.name().to_string(),
            config,
            payload,
            timings: ctx.timings,
            cache_hits: ctx.cache_hits,
            warnings: ctx.warnings,
        },
        tables,
        exit_code,
    })
}

type Produced = (serde_json::Value, Vec<(String, String)>, i32);

fn validate(ctx: &mut Ctx) -> Result<Produced, CliError> {
    let r = ctx.timed("validate", || ctx.res.model.validate_regime())?;
    ctx.warnings.extend(r.messages.iter().cloned());
    let mut csv = Csv::new(&["key", "value"]);
    for (k, v) in [("e_z", r.e_z), ("e_log_z", r.e_log_z), ("c_minus", r.support.c_minus), ("c_plus", r.support.c_plus)] {
        csv.row(&[Cell::Text(k), Cell::Real(v)]);
    }
    csv.row(&[Cell::Text("dh_ok"), Cell::Bool(r.dh_ok)]);
    csv.row(&[Cell::Text("support_is_interval"), Cell::Bool(r.support_is_interval)]);
    let code = if r.dh_ok { EXIT_OK } else { EXIT_VALIDATION };
    Ok((serde_json::to_value(&r)?, vec![(String::new(), csv.into_string())], code))
}

fn alpha_opts(res: &Resolved) -> AlphaOptions {
    AlphaOptions {
        tol: res.config.tolerances.alpha,
        ..AlphaOptions::default()
    }
}

fn run_alpha(ctx: &mut Ctx) -> Result<AlphaReport, CliError> {
    let opts = alpha_opts(ctx.res);
    let r = ctx.timed("alpha", || alpha_report(&ctx.res.model, &opts))?;
    ctx.warnings.extend(r.warnings.iter().cloned());
    Ok(r)
}

fn alpha(ctx: &mut Ctx) -> Result<Produced, CliError> {
    let r = run_alpha(ctx)?;
    let mut csv = Csv::new(&["kind", "re", "im"]);
    csv.row(&[Cell::Text("alpha"), Cell::Real(r.alpha), Cell::Real(0.0)]);
    for z in &r.roots {
        csv.row(&[Cell::Text("root"), Cell::Real(z.re), Cell::Real(z.im)]);
    }
    Ok((serde_json::to_value(&r)?, vec![(String::new(), csv.into_string())], EXIT_OK))
}

fn lyapunov_rows(ctx: &mut Ctx) -> Result<Produced, CliError> {
    let res = ctx.res;
    if res.config.steps == 0 {
        return Err(CliError::Config("lyapunov needs steps > 0".into()));
    }
    let burn_in = res.config.burn_in.unwrap_or_else(|| default_burn_in(&res.model));
    let mut rows = Vec::new();
    for &eps in &res.config.eps {
        let cfg = ChainConfig::with_samples(eps, burn_in, res.config.steps, res.seed);
        for method in [Method::SigmaChain, Method::SChain, Method::MatrixProduct] {
            if method == Method::SChain && eps == 0.0 {
                ctx.warnings.push("s_chain skipped at eps = 0".into());
                continue;
            }
            let est = ctx.timed(method.as_str(), || lyapunov(&res.model, method, &cfg))?;
            ctx.warnings.extend(est.warnings.iter().map(|w| format!("eps = {eps}, {}: {w}", method.as_str())));
            rows.push(est);
        }
    }
    let mut csv = Csv::new(&["epsilon", "method", "mean", "std_error", "n_effective", "lag1_autocorrelation", "seed"]);
    for r in &rows {
        csv.row(&[
            Cell::Real(r.epsilon),
            Cell::Text(r.method.as_str()),
            Cell::Real(r.mean),
            Cell::Real(r.std_error),
            Cell::Int(r.n_effective),
            Cell::Real(r.lag1_autocorrelation),
            Cell::Int(r.seed),
        ]);
    }
    Ok((json!({ "rows": rows }), vec![(String::new(), csv.into_string())], EXIT_OK))
}

/// Grid, iterations, residual.
type Solved = (TailGrid, usize, f64);

/// nu_0 and omega_0, cached.
fn limit_grids(ctx: &mut Ctx, alpha: f64, cfg: &DhConfig) -> Result<(Solved, Solved, f64), CliError> {
    let model = &ctx.res.model;
    let y = cfg.y_for(model);
    let nu0 = ctx.fixed_point("nu0", (alpha, cfg.nu_config(0.0)), || compute_nu0(model, alpha, cfg))?;
    let om = ctx.fixed_point("omega0", (alpha, y, cfg.omega_config()), || compute_omega0(model, alpha, cfg))?;
    Ok((nu0, om, y))
}

fn fixed_points(ctx: &mut Ctx) -> Result<Produced, CliError> {
    let r = run_alpha(ctx)?;
    let cfg = ctx.res.dh_config();
    let ((nu0, it_n, res_n), (om, it_o, res_o), y) = limit_grids(ctx, r.alpha, &cfg)?;
    let mut tables = vec![("nu0".to_string(), nu0.to_csv()), ("omega0".to_string(), om.to_csv())];
    let mut eps_rows = Vec::new();
    let model = &ctx.res.model;
    for (k, &eps) in ctx.res.config.eps.clone().iter().enumerate() {
        if eps == 0.0 {
            continue;
        }
        let op_cfg = cfg.nu_config(eps);
        let (g, it, resid) = ctx.fixed_point("nu", (r.alpha, op_cfg), || fixed_point_nu(model, r.alpha, &op_cfg))?;
        eps_rows.push(json!({
            "epsilon": eps,
            "iterations": it,
            "residual": resid,
            "support_bound": support_bound(model, eps)?,
            "l_transfer": l_functional(&g, eps),
        }));
        tables.push((format!("nu_eps{k}"), g.to_csv()));
    }
    let payload = json!({
        "alpha": r.alpha,
        "y": y,
        "nu0": { "iterations": it_n, "residual": res_n, "meta": nu0.meta("") },
        "omega0": { "iterations": it_o, "residual": res_o, "meta": om.meta("") },
        "nu_eps": eps_rows,
    });
    Ok((payload, tables, EXIT_OK))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Threshold checks applied by dh-verify.
pub fn verify_checks(rep: &PredictionReport) -> Vec<Check> {
    let mut out = Vec::new();
    let two_a = 2.0 * rep.alpha;
    out.push(Check {
        name: "exponent_abs_error",
        value: (rep.fitted_global_exponent - two_a).abs(),
        threshold: 0.1,
        pass: (rep.fitted_global_exponent - two_a).abs() <= 0.1,
    });
    let last = rep.rows.last().map_or(f64::NAN, |r| r.relative_deviation.abs());
    out.push(Check {
        name: "amplitude_deviation_smallest_eps",
        value: last,
        threshold: 0.15,
        pass: last <= 0.15,
    });
    let failed = rep.rows.iter().filter(|r| r.status != RowStatus::Ok).count();
    out.push(Check {
        name: "failed_rows",
        value: failed as f64,
        threshold: 0.0,
        pass: failed == 0,
    });
    let over = rep.rows.iter().filter(|r| !r.budget_ok).count();
    out.push(Check {
        name: "rows_over_error_budget",
        value: over as f64,
        threshold: 0.0,
        pass: over == 0,
    });
    let disagree = rep.rows.iter().filter(|r| r.mc_agrees == Some(false)).count();
    out.push(Check {
        name: "rows_mc_disagreeing",
        value: disagree as f64,
        threshold: 0.0,
        pass: disagree == 0,
    });
    for (name, a) in [("alpha_fit_nu_abs_error", rep.alpha_fit_nu), ("alpha_fit_omega_abs_error", rep.alpha_fit_omega)] {
        let v = (a - rep.alpha).abs();
        out.push(Check {
            name,
            value: v,
            threshold: 0.05,
            pass: v <= 0.05,
        });
    }
    let d = rep.remainder_exponent_nu.unwrap_or(f64::NAN);
    out.push(Check {
        name: "remainder_exponent_nu",
        value: d,
        threshold: rep.delta - 0.05,
        pass: d >= rep.delta - 0.05,
    });
    let floor = two_a.min(rep.alpha + rep.delta) - rep.beta_used - 0.15;
    out.push(Check {
        name: "defect_exponent",
        value: rep.defect_exponent,
        threshold: floor,
        pass: rep.defect_exponent >= floor,
    });
    out
}

fn dh(ctx: &mut Ctx, verify: bool) -> Result<Produced, CliError> {
    let r = run_alpha(ctx)?;
    let cfg = ctx.res.dh_config();
    let ((nu0, _, _), (om, _, _), y) = limit_grids(ctx, r.alpha, &cfg)?;
    let model = &ctx.res.model;
    let inputs = ctx.timed("fits", || assemble_inputs(model, &r, y, nu0, om))?;
    let c = &ctx.res.config;
    if let Some(b) = c.beta {
        let lo = (r.alpha - r.delta).max(0.0);
        if !(b > lo && b < r.alpha) {
            return Err(CliError::Config(format!("beta = {b} outside ({lo}, {})", r.alpha)));
        }
    }
    let chain = ChainSettings {
        n_samples: c.steps,
        burn_in: c.burn_in,
        seed: ctx.res.seed,
    };
    let rep = ctx.timed("sweep", || scaling_sweep(model, &inputs, &c.eps, c.beta, &chain, &cfg))?;
    ctx.warnings.extend(rep.warnings.iter().cloned());
    let mut tables = vec![(String::new(), sweep_csv(&rep))];
    let (payload, code) = if verify {
        let checks = verify_checks(&rep);
        let mut csv = Csv::new(&["name", "value", "threshold", "pass"]);
        for k in &checks {
            csv.row(&[Cell::Text(k.name), Cell::Real(k.value), Cell::Real(k.threshold), Cell::Bool(k.pass)]);
        }
        tables.push(("checks".into(), csv.into_string()));
        let code = if checks.iter().all(|k| k.pass) { EXIT_OK } else { EXIT_THRESHOLD };
        (json!({ "report": rep, "checks": checks, "default_beta": default_beta(r.alpha, r.delta) }), code)
    } else {
        (json!({ "report": rep }), EXIT_OK)
    };
    Ok((payload, tables, code))
}

pub const SWEEP_COLUMNS: [&str; 21] = [
    "epsilon",
    "l_transfer",
    "l_transfer_err",
    "l_mc",
    "l_mc_err",
    "prediction",
    "amplitude",
    "relative_deviation",
    "defect_norm",
    "distance_to_fixed_point",
    "distance_bound",
    "budget",
    "budget_ok",
    "a_eps",
    "mass0",
    "mass_defect_coefficient",
    "paste_ratio",
    "nu_iterations",
    "nu_residual",
    "mc_agrees",
    "status",
];

fn sweep_csv(rep: &PredictionReport) -> String {
    let mut csv = Csv::new(&SWEEP_COLUMNS);
    for r in &rep.rows {
        let status = match &r.status {
            RowStatus::Ok => "ok".to_string(),
            RowStatus::Failed(m) => m.clone(),
        };
        csv.row(&[
            Cell::Real(r.epsilon),
            Cell::Real(r.l_transfer),
            Cell::Real(r.l_transfer_err),
            Cell::OptReal(r.l_mc),
            Cell::OptReal(r.l_mc_err),
            Cell::Real(r.prediction),
            Cell::Real(r.amplitude),
            Cell::Real(r.relative_deviation),
            Cell::Real(r.defect_norm),
            Cell::Real(r.distance_to_fixed_point),
            Cell::Real(r.distance_bound),
            Cell::Real(r.budget),
            Cell::Bool(r.budget_ok),
            Cell::Real(r.a_eps),
            Cell::Real(r.mass0),
            Cell::Real(r.mass_defect_coefficient),
            Cell::Real(r.paste_ratio),
            Cell::Int(r.nu_iterations as u64),
            Cell::Real(r.nu_residual),
            Cell::OptBool(r.mc_agrees),
            Cell::Text(&status),
        ]);
    }
    csv.into_string()
}
