//! Result envelope and CSV emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cache::write_atomic;
use crate::config::RunConfig;
use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultEnvelope {
    pub schema_version: u32,
    pub model_hash: String,
    pub command: String,
    pub config: RunConfig,
    pub payload: serde_json::Value,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
    /// Cache entries served without recomputation.
    pub cache_hits: Vec<String>,
    pub warnings: Vec<String>,
}

impl ResultEnvelope {
    /// Short id of the run: hash of command and echoed config, output and
    /// cache locations left out.
    pub fn run_id(&self) -> String {
        let mut c = self.config.clone();
        c.out = None;
        c.cache = None;
        let h = crate::cache::hash_json(&(&self.command, &c));
        h[..8].to_string()
    }

    pub fn file_stem(&self) -> String {
        format!("{}-{}-{}", self.command, &self.model_hash[..16], self.run_id())
    }
}

/// One CSV cell.
pub enum Cell<'a> {
    Real(f64),
    OptReal(Option<f64>),
    Int(u64),
    Bool(bool),
    OptBool(Option<bool>),
    Text(&'a str),
}

impl Cell<'_> {
    fn write(&self, s: &mut String) {
        match self {
            Cell::Real(v) | Cell::OptReal(Some(v)) => write!(s, "{v:.16e}").unwrap(),
            Cell::OptReal(None) | Cell::OptBool(None) => {}
            Cell::Int(v) => write!(s, "{v}").unwrap(),
            Cell::Bool(v) | Cell::OptBool(Some(v)) => write!(s, "{v}").unwrap(),
            Cell::Text(t) => {
                if t.contains([',', '"', '\n']) {
                    write!(s, "\"{}\"", t.replace('"', "\"\"")).unwrap()
                } else {
                    s.push_str(t)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Csv {
    text: String,
    width: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Csv {
            text: header.join(",") + "\n",
            width: header.len(),
        }
    }

    pub fn row(&mut self, cells: &[Cell]) {
        assert_eq!(cells.len(), self.width, "row width");
        for (i, c) in cells.iter().enumerate() {
            if i > 0 {
                self.text.push(',');
            }
            c.write(&mut self.text);
        }
        self.text.push('\n');
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

/// Writes `<stem>.json` and one `<stem>[-<name>].csv` per table; returns the paths.
pub fn write_outputs(dir: &Path, envelope: &ResultEnvelope, tables: &[(String, String)]) -> Result<Vec<PathBuf>, CliError> {
    let stem = envelope.file_stem();
    let mut paths = Vec::new();
    let json = dir.join(format!("{stem}.json"));
    write_atomic(&json, &serde_json::to_vec_pretty(envelope)?)?;
    paths.push(json);
    for (name, csv) in tables {
        let file = if name.is_empty() {
            format!("{stem}.csv")
        } else {
            format!("{stem}-{name}.csv")
        };
        let p = dir.join(file);
        write_atomic(&p, csv.as_bytes())?;
        paths.push(p);
    }
    Ok(paths)
}

pub const SCHEMA: &str = "\
All reals are written as {:.16e}; empty cells mean not computed.

validate      key,value
              e_z, e_log_z, c_minus, c_plus, dh_ok, support_is_interval
alpha         kind,re,im
              one `alpha` row (im = 0) then one `root` row per located root of M(u) = 1
lyapunov      epsilon,method,mean,std_error,n_effective,lag1_autocorrelation,seed
              method: sigma_chain | s_chain | matrix_product
fixed-point   node,value, one file per grid: nu0, omega0, nu_eps<k> for the k-th eps
dh-verify     epsilon,l_transfer,l_transfer_err,l_mc,l_mc_err,prediction,amplitude,
sweep           relative_deviation,defect_norm,distance_to_fixed_point,distance_bound,
                budget,budget_ok,a_eps,mass0,mass_defect_coefficient,paste_ratio,
                nu_iterations,nu_residual,mc_agrees,status
              l_transfer_err: |L_N - L_(N/2)| between the grid and its half
              amplitude: l_transfer / eps^(2 alpha)
              prediction: C_mu eps^(2 alpha)
              budget: c_beta eps^(2 beta) defect_norm
              status: ok, or the error that stopped the row
dh-verify     a second file `-checks.csv`: name,value,threshold,pass
";
