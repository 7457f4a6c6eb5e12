//! Run configuration: the JSON file schema, flag overlay and model resolution.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::{Map, Value};
use viability_core::models::REGISTRY;
use viability_core::{
    build_model, hh_metadata, BoxRegion, CheckConfig, Error, HHParams, Interpretation, ModelOptions, Result, Scheme,
    SdeSystem, TimeGrid,
};

/// Environment variable consulted when no seed is given by flag or file.
pub const SEED_ENV: &str = "SDE_SEED";
pub const DEFAULT_DT: f64 = 0.01;

/// Every field is optional; absent fields fall back to model defaults.
/// Flags given on the command line replace the corresponding file fields.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub model: Option<String>,
    /// Partial [`HHParams`]; unnamed parameters keep their defaults.
    pub params: Option<Map<String, Value>>,
    pub sigma: Option<Vec<f64>>,
    /// `ito`, `stratonovich`, or `both` (ensemble only).
    pub interpretation: Option<String>,
    pub t0: Option<f64>,
    pub t_end: Option<f64>,
    pub n_steps: Option<usize>,
    pub dt: Option<f64>,
    pub x0: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub n_paths: Option<usize>,
    #[serde(rename = "box")]
    pub region: Option<BoxRegion>,
    pub scheme: Option<Scheme>,
    pub workers: Option<usize>,
    pub tol: Option<f64>,
    pub check: Option<CheckConfig>,
    pub out: Option<PathBuf>,
    pub plot: Option<bool>,
    pub dump_paths: Option<PathBuf>,
}

/// A user model: a registry model with parameter and noise overrides.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PluginModel {
    pub base: String,
    #[serde(default)]
    pub params: Map<String, Value>,
    pub sigma: Option<Vec<f64>>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Usage(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Usage(format!("invalid {what} {}: {e}", path.display())))
}

impl RunSpec {
    /// Loads a config file. A relative `model` path is taken relative to the file.
    pub fn load(path: &Path) -> Result<RunSpec> {
        let mut spec: RunSpec = read_json(path, "config file")?;
        if let (Some(model), Some(dir)) = (&spec.model, path.parent()) {
            let candidate = dir.join(model);
            if !REGISTRY.contains(&model.as_str()) && Path::new(model).is_relative() && candidate.is_file() {
                spec.model = Some(candidate.to_string_lossy().into_owned());
            }
        }
        Ok(spec)
    }

    /// Fields set in `flags` win over those in `self`.
    pub fn overlay(self, flags: RunSpec) -> RunSpec {
        // The grid step is given either way; flags choosing one form drop the file's.
        let (n_steps, dt) = if flags.n_steps.is_some() || flags.dt.is_some() {
            (flags.n_steps, flags.dt)
        } else {
            (self.n_steps, self.dt)
        };
        let params = match (self.params, flags.params) {
            (Some(mut base), Some(top)) => {
                base.extend(top);
                Some(base)
            }
            (a, b) => b.or(a),
        };
        RunSpec {
            model: flags.model.or(self.model),
            params,
            sigma: flags.sigma.or(self.sigma),
            interpretation: flags.interpretation.or(self.interpretation),
            t0: flags.t0.or(self.t0),
            t_end: flags.t_end.or(self.t_end),
            n_steps,
            dt,
            x0: flags.x0.or(self.x0),
            seed: flags.seed.or(self.seed),
            n_paths: flags.n_paths.or(self.n_paths),
            region: flags.region.or(self.region),
            scheme: flags.scheme.or(self.scheme),
            workers: flags.workers.or(self.workers),
            tol: flags.tol.or(self.tol),
            check: flags.check.or(self.check),
            out: flags.out.or(self.out),
            plot: flags.plot.or(self.plot),
            dump_paths: flags.dump_paths.or(self.dump_paths),
        }
    }

    pub fn seed(&self) -> Result<u64> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
            Err(_) => Ok(0),
        }
    }

    /// Interpretations requested; `both` yields Itô then Stratonovich.
    pub fn interpretations(&self, default: Interpretation, allow_both: bool) -> Result<Vec<Interpretation>> {
        match self.interpretation.as_deref() {
            None => Ok(vec![default]),
            Some(s) if s.eq_ignore_ascii_case("both") => {
                if allow_both {
                    Ok(vec![Interpretation::Ito, Interpretation::Stratonovich])
                } else {
                    Err(Error::Usage("`both` is only accepted by the ensemble command".into()))
                }
            }
            Some(s) => Ok(vec![s.parse()?]),
        }
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        let t0 = self.t0.unwrap_or(0.0);
        let t_end = self.t_end.unwrap_or(t0 + hh_metadata().horizon);
        match (self.n_steps, self.dt) {
            (Some(_), Some(_)) => Err(Error::Usage("give either n_steps or dt, not both".into())),
            (Some(n), None) => TimeGrid::new(t0, t_end, n),
            (None, dt) => TimeGrid::with_step(t0, t_end, dt.unwrap_or(DEFAULT_DT)),
        }
    }

    pub fn x0(&self) -> Vec<f64> {
        self.x0.clone().unwrap_or_else(|| hh_metadata().initial_state.to_vec())
    }

    pub fn region(&self) -> BoxRegion {
        self.region.clone().unwrap_or_else(|| hh_metadata().region)
    }

    pub fn check_config(&self) -> CheckConfig {
        self.check.clone().unwrap_or_default()
    }

    pub fn model(&self, interpretation: Interpretation) -> Result<ResolvedModel> {
        ResolvedModel::resolve(self, interpretation)
    }
}

/// The registry model a run actually uses, with its final options.
#[derive(Debug, Clone)]
pub struct ResolvedModel {
    pub base: String,
    pub opts: ModelOptions,
    pub system: SdeSystem,
}

impl ResolvedModel {
    fn resolve(spec: &RunSpec, interpretation: Interpretation) -> Result<ResolvedModel> {
        let given = spec
            .model
            .as_deref()
            .ok_or_else(|| Error::Usage(format!("no model given; available: {}", REGISTRY.join(", "))))?;
        let mut params = serde_json::to_value(HHParams::default())?
            .as_object()
            .cloned()
            .expect("parameters serialize to an object");
        let mut sigma = None;
        let base = if REGISTRY.contains(&given) {
            given.to_string()
        } else if Path::new(given).is_file() {
            let plugin: PluginModel = read_json(Path::new(given), "model config")?;
            params.extend(plugin.params);
            sigma = plugin.sigma;
            plugin.base
        } else {
            return Err(Error::Usage(format!(
                "unknown model `{given}`; available: {} (or a path to a model config file)",
                REGISTRY.join(", ")
            )));
        };
        if let Some(p) = &spec.params {
            params.extend(p.clone());
        }
        let known = serde_json::to_value(HHParams::default())?;
        if let Some(k) = params.keys().find(|k| known.get(k.as_str()).is_none()) {
            return Err(Error::Usage(format!("unknown model parameter `{k}`")));
        }
        let opts = ModelOptions {
            params: serde_json::from_value(Value::Object(params))
                .map_err(|e| Error::Usage(format!("invalid model parameters: {e}")))?,
            sigma: spec
                .sigma
                .clone()
                .or(sigma)
                .unwrap_or_else(|| ModelOptions::default().sigma),
            interpretation,
        };
        let system = build_model(&base, &opts)?;
        Ok(ResolvedModel { base, opts, system })
    }
}
