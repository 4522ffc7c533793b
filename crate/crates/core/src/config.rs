//! Run configuration: a TOML document with `[system]`, `[sweep]`, `[solver]`
//! and an optional `[problem]` section, plus `key=value` overrides.
//!
//! Every key is optional; missing keys take the evaluation defaults. Powers
//! given in dB (`receive_snr_db`, `beta_star_db`, `power_cap_db`) are stored
//! as written and converted to linear only in [`Settings`], so writing the
//! resolved document back out and parsing it again reproduces the same
//! settings exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::allocator::{AllocationProblem, SolverOptions};
use crate::asymptotics::supportable_load;
use crate::cdma::Receiver;
use crate::channel::{db_to_linear, SystemConfig};
use crate::error::{Error, Result};
use crate::experiments::{LoadRegime, SweepSpec, SweptParameter};
use crate::rng::DEFAULT_SEED;

/// A scalar applied to every OFDMA user, or one value per user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerUser {
    All(f64),
    Each(Vec<f64>),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// CDMA load; the user count is `round(alpha N)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cp_len: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub receive_snr_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_star_db: Option<f64>,
    /// Per-user power cap relative to `sigma2`, in dB.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power_cap_db: Option<PerUser>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth_hz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub receiver: Option<Receiver>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parameter: Option<SweptParameter>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Load regime of the `trace` and `snapshot` commands.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regime: Option<LoadRegime>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap_tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recover_every: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local_search_max_n: Option<usize>,
}

/// An explicit allocation instance for the `allocate` command, all linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub gains: Vec<Vec<f64>>,
    pub noise_floor: f64,
    pub margin: f64,
    pub power_caps: Vec<f64>,
}

/// The on-disk document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigFile {
    pub system: SystemSection,
    pub sweep: SweepSection,
    pub solver: SolverSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemSection>,
}

const SECTIONS: [(&str, &[&str]); 4] = [
    (
        "system",
        &[
            "n",
            "alpha",
            "k",
            "paths",
            "cp_len",
            "receive_snr_db",
            "sigma2",
            "beta_star_db",
            "power_cap_db",
            "bandwidth_hz",
            "receiver",
        ],
    ),
    ("sweep", &["parameter", "grid", "trials", "seed", "regime"]),
    (
        "solver",
        &[
            "max_iterations",
            "gap_tolerance",
            "step_scale",
            "init_lambda",
            "init_delta",
            "recover_every",
            "local_search_max_n",
        ],
    ),
    ("problem", &["gains", "noise_floor", "margin", "power_caps"]),
];

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Resolves `key` or `section.key` to its section.
fn locate(key: &str) -> Result<(&'static str, String)> {
    if let Some((section, field)) = key.split_once('.') {
        return SECTIONS
            .iter()
            .find(|(s, keys)| *s == section && keys.contains(&field))
            .map(|(s, _)| (*s, field.to_string()))
            .ok_or_else(|| config_error(format!("unknown key `{key}`")));
    }
    SECTIONS
        .iter()
        .find(|(_, keys)| keys.contains(&key))
        .map(|(s, _)| (*s, key.to_string()))
        .ok_or_else(|| config_error(format!("unknown key `{key}`")))
}

/// Parses an override value as TOML, falling back to a bare string.
fn override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies `key=value` overrides to a parsed document.
pub fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> Result<()> {
    for item in overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| config_error(format!("override `{item}` is not of the form key=value")))?;
        let (section, field) = locate(key.trim())?;
        let entry = table
            .entry(section)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        let section_table = entry
            .as_table_mut()
            .ok_or_else(|| config_error(format!("`{section}` must be a section")))?;
        section_table.insert(field, override_value(value.trim()));
    }
    Ok(())
}

/// Fully resolved settings of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub system: SystemConfig,
    /// Load as configured; `system.users` is its rounding to whole users.
    pub alpha: f64,
    pub receiver: Receiver,
    pub parameter: SweptParameter,
    pub grid: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub regime: LoadRegime,
    pub solver: SolverOptions,
    pub problem: Option<AllocationProblem>,
    /// The same settings with every key explicit, as written to disk.
    pub resolved: ConfigFile,
}

impl Settings {
    pub fn sweep_spec(&self) -> SweepSpec {
        SweepSpec {
            swept: self.parameter,
            grid: self.grid.clone(),
            receiver: self.receiver,
            fixed: self.system.clone(),
            trials: self.trials,
            seed: self.seed,
            solver: self.solver.clone(),
        }
    }

    /// The resolved document as TOML text.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(&self.resolved).map_err(|e| config_error(e.to_string()))
    }
}

/// Reads `path` (if any), applies `overrides` and resolves defaults.
pub fn parse_config(path: Option<&Path>, overrides: &[String]) -> Result<Settings> {
    parse_config_with(path, &[], overrides)
}

/// Like [`parse_config`], with command-specific `key=value` defaults that
/// apply only where the document leaves the key unset.
pub fn parse_config_with(
    path: Option<&Path>,
    defaults: &[String],
    overrides: &[String],
) -> Result<Settings> {
    let text = match path {
        Some(p) => fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => String::new(),
    };
    parse_config_str_with(&text, defaults, overrides)
}

/// Same as [`parse_config`] on in-memory text.
pub fn parse_config_str(text: &str, overrides: &[String]) -> Result<Settings> {
    parse_config_str_with(text, &[], overrides)
}

fn parse_config_str_with(text: &str, defaults: &[String], overrides: &[String]) -> Result<Settings> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| config_error(e.to_string()))?;
    for item in defaults {
        let key = item.split_once('=').map_or(item.as_str(), |(k, _)| k.trim());
        let (section, field) = locate(key)?;
        let present = table
            .get(section)
            .and_then(toml::Value::as_table)
            .is_some_and(|t| t.contains_key(&field));
        if !present {
            apply_overrides(&mut table, std::slice::from_ref(item))?;
        }
    }
    apply_overrides(&mut table, overrides)?;
    let file: ConfigFile = ConfigFile::deserialize(toml::Value::Table(table))
        .map_err(|e| config_error(e.to_string()))?;
    resolve(file)
}

/// Default load-sweep grid: steps of 0.05 up to the supportable load, plus one
/// point beyond it.
fn default_alpha_grid(alpha_star: f64) -> Vec<f64> {
    let mut grid = Vec::new();
    let mut i = 1;
    loop {
        let a = 0.05 * i as f64;
        grid.push((a * 1e6).round() / 1e6);
        if a >= alpha_star {
            break;
        }
        i += 1;
    }
    grid
}

fn resolve(file: ConfigFile) -> Result<Settings> {
    let s = &file.system;
    let n = s.n.unwrap_or(256);
    if n == 0 {
        return Err(config_error("system.n must be at least 1"));
    }
    let paths = s.paths.unwrap_or((n / 8).max(1));
    let cp_len = s.cp_len.unwrap_or(paths.saturating_sub(1));
    let k = s.k.unwrap_or(2);
    let alpha = s.alpha.unwrap_or(0.2);
    let receive_snr_db = s.receive_snr_db.unwrap_or(20.0);
    let sigma2 = s.sigma2.unwrap_or(1.0);
    let beta_star_db = s.beta_star_db.unwrap_or(2.0);
    let power_cap_db = s.power_cap_db.clone().unwrap_or(PerUser::All(30.0));
    let bandwidth_hz = s.bandwidth_hz.unwrap_or(3.84e6);
    let receiver = s.receiver.unwrap_or(Receiver::Mf);
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(config_error("system.alpha must be finite and nonnegative"));
    }
    let caps_db = match &power_cap_db {
        PerUser::All(v) => vec![*v; k],
        PerUser::Each(v) => {
            if v.len() != k {
                return Err(config_error(format!(
                    "system.power_cap_db lists {} values for k = {k} users",
                    v.len()
                )));
            }
            v.clone()
        }
    };
    let system = SystemConfig {
        n,
        users: 0,
        k,
        paths,
        cp_len,
        q: sigma2 * db_to_linear(receive_snr_db),
        sigma2,
        beta_star: db_to_linear(beta_star_db),
        power_caps: caps_db.iter().map(|&c| sigma2 * db_to_linear(c)).collect(),
        bandwidth_hz,
    }
    .with_load(alpha);
    system
        .validate()
        .map_err(|e| config_error(format!("system: {e}")))?;

    let w = &file.sweep;
    let parameter = w.parameter.unwrap_or(SweptParameter::Alpha);
    let grid = match &w.grid {
        Some(g) => g.clone(),
        None => match parameter {
            SweptParameter::Alpha => default_alpha_grid(supportable_load(
                system.q,
                system.sigma2,
                system.beta_star,
                receiver,
            )),
            SweptParameter::ReceiveSnrDb => (0..=15).map(|i| 2.0 * i as f64).collect(),
        },
    };
    let trials = w.trials.unwrap_or(200);
    let seed = w.seed.unwrap_or(DEFAULT_SEED);
    let regime = w.regime.unwrap_or(LoadRegime::Light);
    if grid.is_empty() || grid.windows(2).any(|p| p[1] < p[0]) {
        return Err(config_error("sweep.grid must be nonempty and sorted"));
    }
    if trials < 1 {
        return Err(config_error("sweep.trials must be at least 1"));
    }

    let v = &file.solver;
    let defaults = SolverOptions::default();
    let solver = SolverOptions {
        max_iterations: v.max_iterations.unwrap_or(defaults.max_iterations),
        gap_tolerance: v.gap_tolerance.unwrap_or(defaults.gap_tolerance),
        step_scale: v.step_scale.unwrap_or(defaults.step_scale),
        init_lambda: v.init_lambda.unwrap_or(defaults.init_lambda),
        init_delta: v.init_delta.unwrap_or(defaults.init_delta),
        recover_every: v.recover_every.unwrap_or(defaults.recover_every),
        record_trace: false,
        local_search_max_n: v.local_search_max_n.unwrap_or(defaults.local_search_max_n),
    };
    if solver.max_iterations < 1 || solver.recover_every < 1 {
        return Err(config_error(
            "solver.max_iterations and solver.recover_every must be at least 1",
        ));
    }
    if !(solver.gap_tolerance >= 0.0) || !(solver.step_scale > 0.0) {
        return Err(config_error(
            "solver.gap_tolerance must be nonnegative and solver.step_scale positive",
        ));
    }
    if !(solver.init_lambda >= 0.0) || !(solver.init_delta >= 0.0) {
        return Err(config_error("solver initial multipliers must be nonnegative"));
    }

    let problem = file
        .problem
        .as_ref()
        .map(|p| {
            AllocationProblem::new(p.gains.clone(), p.noise_floor, p.margin, p.power_caps.clone())
                .map_err(|e| config_error(format!("problem: {e}")))
        })
        .transpose()?;

    let resolved = ConfigFile {
        system: SystemSection {
            n: Some(n),
            alpha: Some(alpha),
            k: Some(k),
            paths: Some(paths),
            cp_len: Some(cp_len),
            receive_snr_db: Some(receive_snr_db),
            sigma2: Some(sigma2),
            beta_star_db: Some(beta_star_db),
            power_cap_db: Some(power_cap_db),
            bandwidth_hz: Some(bandwidth_hz),
            receiver: Some(receiver),
        },
        sweep: SweepSection {
            parameter: Some(parameter),
            grid: Some(grid.clone()),
            trials: Some(trials),
            seed: Some(seed),
            regime: Some(regime),
        },
        solver: SolverSection {
            max_iterations: Some(solver.max_iterations),
            gap_tolerance: Some(solver.gap_tolerance),
            step_scale: Some(solver.step_scale),
            init_lambda: Some(solver.init_lambda),
            init_delta: Some(solver.init_delta),
            recover_every: Some(solver.recover_every),
            local_search_max_n: Some(solver.local_search_max_n),
        },
        problem: file.problem.clone(),
    };

    Ok(Settings {
        system,
        alpha,
        receiver,
        parameter,
        grid,
        trials,
        seed,
        regime,
        solver,
        problem,
        resolved,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let s = parse_config_str("", &[]).unwrap();
        assert_eq!(s.system.n, 256);
        assert_eq!(s.system.paths, 32);
        assert_eq!(s.system.cp_len, 31);
        assert_eq!(s.system.users, 51);
        assert_eq!(s.system.k, 2);
        assert!((s.system.q - 100.0).abs() < 1e-12);
        assert!((s.system.power_caps[0] - 1000.0).abs() < 1e-9);
        assert_eq!(s.receiver, Receiver::Mf);
        assert_eq!(s.trials, 200);
        assert_eq!(s.seed, DEFAULT_SEED);
        assert_eq!(*s.grid.last().unwrap(), 0.65);
    }

    #[test]
    fn overrides_accept_bare_and_dotted_keys() {
        let s = parse_config_str(
            "",
            &["alpha=0.3".into(), "receiver=mmse".into(), "solver.max_iterations=10".into()],
        )
        .unwrap();
        assert_eq!(s.system.users, 77);
        assert_eq!(s.receiver, Receiver::Mmse);
        assert_eq!(s.solver.max_iterations, 10);
        assert_eq!(s.sweep_spec().receiver, Receiver::Mmse);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = parse_config_str("", &["nn=256".into()]).unwrap_err();
        assert!(err.to_string().contains("nn"), "{err}");
        let err = parse_config_str("[system]\nnn = 256\n", &[]).unwrap_err();
        assert!(err.to_string().contains("nn"), "{err}");
        let err = parse_config_str("[bogus]\nx = 1\n", &[]).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn invariant_violations_are_reported() {
        let err = parse_config_str("[system]\npaths = 40\ncp_len = 10\n", &[]).unwrap_err();
        assert!(err.to_string().contains("cyclic prefix"), "{err}");
        let err = parse_config_str("[sweep]\ngrid = [0.3, 0.1]\n", &[]).unwrap_err();
        assert!(err.to_string().contains("sorted"), "{err}");
    }

    #[test]
    fn resolved_document_round_trips() {
        let s = parse_config_str(
            "[system]\nalpha = 0.35\npower_cap_db = [30.0, 27.5]\n[problem]\ngains = [[1.0, 0.5]]\nnoise_floor = 2.0\nmargin = 3.0\npower_caps = [4.0]\n",
            &["receive_snr_db=17.3".into()],
        )
        .unwrap();
        let again = parse_config_str(&s.to_toml().unwrap(), &[]).unwrap();
        assert_eq!(s, again);
    }
}
