use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dhlab_cli::cache::sha256_hex;
use dhlab_cli::config::{self, Overrides, RunConfig};
use dhlab_cli::ResultEnvelope;
use dhlab_core::transfer_grid::{GridMeta, TailGrid};

const REF1: &str = r#"{
  "mixture": {
    "weights": [0.6, 0.4],
    "components": [
      { "biweight_bump": { "a": 0.2, "b": 0.6 } },
      { "biweight_bump": { "a": 2.0, "b": 3.0 } }
    ]
  }
}"#;

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("run.json");
    std::fs::write(&p, body).unwrap();
    p
}

fn ref1_config(dir: &Path, extra: &str) -> PathBuf {
    write_config(dir, &format!(r#"{{ "model": {REF1}, "seed": 11 {extra} }}"#))
}

fn dhlab(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dhlab"));
    c.args(args).env_remove(config::CACHE_ENV);
    for (k, v) in envs {
        c.env(k, v);
    }
    c.output().unwrap()
}

fn files_with(dir: &Path, ext: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    v.sort();
    v
}

fn envelope(dir: &Path) -> ResultEnvelope {
    let f = files_with(dir, "json");
    assert_eq!(f.len(), 1);
    serde_json::from_slice(&std::fs::read(&f[0]).unwrap()).unwrap()
}

fn digest(files: &[PathBuf]) -> Vec<(String, String)> {
    files
        .iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), sha256_hex(&std::fs::read(p).unwrap())))
        .collect()
}

#[test]
fn validate_ref1() {
    let d = tempfile::tempdir().unwrap();
    let cfg = ref1_config(d.path(), "");
    let out = d.path().join("out");
    let o = dhlab(&["validate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let env = envelope(&out);
    assert_eq!(env.payload["dh_ok"], true);
    assert_eq!(env.command, "validate");
    // gapped support is reported, never dropped
    assert!(env.warnings.iter().any(|w| w.contains("gaps")));
    let csv = std::fs::read_to_string(&files_with(&out, "csv")[0]).unwrap();
    assert!(csv.starts_with("key,value\n"));
}

#[test]
fn invalid_regime_exits_with_2() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), r#"{ "model": { "biweight_bump": { "a": 1.5, "b": 3.0 } }, "seed": 1 }"#);
    let o = dhlab(&["alpha", "--config", cfg.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("alpha_delta.regime_violation"));
    let o = dhlab(&["validate", "--config", cfg.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_errors_exit_with_2() {
    let d = tempfile::tempdir().unwrap();
    let no_seed = write_config(d.path(), &format!(r#"{{ "model": {REF1} }}"#));
    let o = dhlab(&["validate", "--config", no_seed.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
    let o = dhlab(&["validate", "--config", no_seed.to_str().unwrap(), "--seed", "5"], &[]);
    assert_eq!(o.status.code(), Some(0));
    let cfg = ref1_config(d.path(), "");
    for bad in [["--eps", "0.1,1.5"], ["--grid", "63"], ["--steps", "100"], ["--beta", "1.2"]] {
        let o = dhlab(&["lyapunov", "--config", cfg.to_str().unwrap(), bad[0], bad[1]], &[]);
        assert_eq!(o.status.code(), Some(2), "{bad:?}");
    }
    let unknown = write_config(d.path(), &format!(r#"{{ "model": {REF1}, "seed": 1, "sead": 2 }}"#));
    assert_eq!(dhlab(&["validate", "--config", unknown.to_str().unwrap()], &[]).status.code(), Some(2));
    let not_c1 = write_config(
        d.path(),
        r#"{ "model": { "piecewise_polynomial_c1": { "breakpoints": [0.5, 2.5], "coefficients": [[0.5]] } }, "seed": 1 }"#,
    );
    assert_eq!(dhlab(&["validate", "--config", not_c1.to_str().unwrap()], &[]).status.code(), Some(2));
}

#[test]
fn non_convergence_exits_with_3() {
    let d = tempfile::tempdir().unwrap();
    let cfg = ref1_config(d.path(), r#", "max_iter": 3, "grid": 128, "eps": [0.1]"#);
    let o = dhlab(&["fixed-point", "--config", cfg.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_convergence"));
}

#[test]
fn model_file_is_resolved_relative_to_the_config() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("ref1.json"), REF1).unwrap();
    let cfg = write_config(d.path(), r#"{ "model": "ref1.json", "seed": 2 }"#);
    let a = config::load(&cfg, &Overrides::default()).unwrap();
    let inline: RunConfig = serde_json::from_str(&format!(r#"{{ "model": {REF1}, "seed": 2 }}"#)).unwrap();
    let b = config::resolve(inline, d.path(), &Overrides::default()).unwrap();
    assert_eq!(a.spec, b.spec);
    assert_eq!(a.seed, 2);
}

#[test]
fn flags_override_the_file() {
    let d = tempfile::tempdir().unwrap();
    let cfg = ref1_config(d.path(), r#", "eps": [0.3], "grid": 256, "steps": 64"#);
    let ov = Overrides {
        seed: Some(9),
        eps: Some(config::parse_eps_list("0.2, 0.1").unwrap()),
        grid: Some(512),
        steps: Some(320),
        ..Overrides::default()
    };
    let r = config::load(&cfg, &ov).unwrap();
    assert_eq!((r.seed, r.config.grid, r.config.steps), (9, 512, 320));
    assert_eq!(r.config.eps, vec![0.2, 0.1]);
    assert!(config::parse_eps_list("0.1,x").is_err());
}

#[test]
fn cache_flag_beats_environment() {
    let d = tempfile::tempdir().unwrap();
    let cfg = ref1_config(d.path(), r#", "grid": 128, "eps": [0.1]"#);
    let (env_root, flag_root) = (d.path().join("env"), d.path().join("flag"));
    let c = cfg.to_str().unwrap();
    let o = dhlab(&["fixed-point", "--config", c, "--cache", flag_root.to_str().unwrap()], &[(config::CACHE_ENV, &env_root)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(flag_root.exists() && !env_root.exists());
    let o = dhlab(&["fixed-point", "--config", c], &[(config::CACHE_ENV, &env_root)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(env_root.exists());
}

#[test]
fn fixed_point_grids_round_trip_and_cache_hits_match() {
    let d = tempfile::tempdir().unwrap();
    let cfg = ref1_config(d.path(), r#", "grid": 256, "eps": [0.1]"#);
    let cache = d.path().join("cache");
    let run = |out: &str| {
        let out = d.path().join(out);
        let o = dhlab(
            &["fixed-point", "--config", cfg.to_str().unwrap(), "--cache", cache.to_str().unwrap(), "--out", out.to_str().unwrap()],
            &[],
        );
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let cold = run("cold");
    let warm = run("warm");
    assert_eq!(digest(&files_with(&cold, "csv")), digest(&files_with(&warm, "csv")));
    let (ec, ew) = (envelope(&cold), envelope(&warm));
    assert!(ec.cache_hits.is_empty());
    assert_eq!(ew.cache_hits.len(), 3);
    assert_eq!(ec.payload, ew.payload);
    // grid CSVs parse back to the same reals
    let meta: GridMeta = serde_json::from_value(ec.payload["nu0"]["meta"].clone()).unwrap();
    let csv_path = files_with(&cold, "csv").into_iter().find(|p| p.to_string_lossy().ends_with("-nu0.csv")).unwrap();
    let text = std::fs::read_to_string(csv_path).unwrap();
    let g = TailGrid::from_csv(&text, &meta).unwrap();
    assert_eq!(g.to_csv(), text);
}

#[test]
fn envelope_round_trips() {
    let d = tempfile::tempdir().unwrap();
    let cfg = ref1_config(d.path(), "");
    let out = d.path().join("out");
    let o = dhlab(&["alpha", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&files_with(&out, "json")[0]).unwrap();
    let env: ResultEnvelope = serde_json::from_str(&text).unwrap();
    assert_eq!(serde_json::to_string_pretty(&env).unwrap(), text);
    let alpha = env.payload["alpha"].as_f64().unwrap();
    assert!((alpha - 0.4543762423557616).abs() < 1e-12);
    assert_eq!(env.schema_version, dhlab_cli::SCHEMA_VERSION);
}

#[test]
fn dh_verify_is_deterministic() {
    let d = tempfile::tempdir().unwrap();
    let cfg = ref1_config(d.path(), r#", "grid": 256, "eps": [0.1, 0.05], "steps": 32000"#);
    let cache = d.path().join("cache");
    let run = |out: &str| {
        let out = d.path().join(out);
        let o = dhlab(
            &["dh-verify", "--config", cfg.to_str().unwrap(), "--cache", cache.to_str().unwrap(), "--out", out.to_str().unwrap()],
            &[],
        );
        assert!(matches!(o.status.code(), Some(0) | Some(4)), "{}", String::from_utf8_lossy(&o.stderr));
        (out, o.status.code())
    };
    let (a, ca) = run("a");
    let (b, cb) = run("b");
    assert_eq!(ca, cb);
    let (fa, fb) = (files_with(&a, "csv"), files_with(&b, "csv"));
    assert_eq!(fa.len(), 2);
    assert_eq!(digest(&fa), digest(&fb));
    let rows = fa.iter().find(|p| !p.to_string_lossy().ends_with("-checks.csv")).unwrap();
    let header = std::fs::read_to_string(rows).unwrap();
    assert!(header.starts_with(&dhlab_cli::commands::SWEEP_COLUMNS.join(",")));
}

#[test]
fn schema_lists_every_command() {
    let o = dhlab(&["--schema"], &[]);
    assert_eq!(o.status.code(), Some(0));
    let s = String::from_utf8(o.stdout).unwrap();
    for cmd in ["validate", "alpha", "lyapunov", "fixed-point", "dh-verify", "sweep"] {
        assert!(s.contains(cmd), "{cmd}");
    }
}
