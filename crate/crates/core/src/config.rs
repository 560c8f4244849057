//! Flat JSON run configuration with defaults, key-level validation and a
//! canonical serialisation that is embedded in every output file.

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::integrators::SchemeId;
use crate::model::{AngularModel, ModelParams, Param};
use crate::montecarlo::{default_domain, whole_steps, BeamSpec, RunConfig, DEFAULT_LEVY_TERMS};
use crate::observables::{DepositMode, GridSpec, Kernel, MollifierSpec};
use crate::sensitivity::ParamSet;
use crate::sphere::{Dim, Direction};
use crate::vector::Vec3;

/// Fully resolved settings. Field order fixes the canonical JSON layout.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub alpha: f64,
    pub p: f64,
    pub kappa: f64,
    pub eps0: f64,
    pub angular_model: AngularModel,
    pub eps_bar: f64,
    pub eps_c: f64,
    pub e_min: f64,
    pub delta: f64,
    pub e0: f64,
    pub energy_spread_rel: f64,
    pub x0: f64,
    pub y0: f64,
    pub transverse_sigma: f64,
    pub nx: usize,
    pub ny: usize,
    pub extent: [f64; 4],
    pub h: f64,
    pub t_max: Option<f64>,
    pub n_paths: usize,
    pub seed: u64,
    pub scheme: SchemeId,
    pub sens: Vec<Param>,
    pub dim: usize,
    pub kernel: Kernel,
    pub levy_terms: usize,
    /// Execution setting only; results do not depend on it and it is left
    /// out of the canonical form.
    #[serde(skip)]
    pub workers: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            alpha: 0.0022,
            p: 1.77,
            kappa: 0.0,
            eps0: 0.005,
            angular_model: AngularModel::Constant,
            eps_bar: 19.3,
            eps_c: 5.0,
            e_min: 4.0,
            delta: 0.5,
            e0: 62.0,
            energy_spread_rel: 0.01,
            x0: 0.0,
            y0: 2.0,
            transverse_sigma: 0.1,
            nx: 200,
            ny: 50,
            extent: [0.0, 4.0, 0.0, 4.0],
            h: 0.005,
            t_max: None,
            n_paths: 200_000,
            seed: 1,
            scheme: SchemeId::MilsteinRkmk,
            sens: Vec::new(),
            dim: 2,
            kernel: Kernel::Nearest,
            levy_terms: DEFAULT_LEVY_TERMS,
            workers: 1,
        }
    }
}

pub const KEYS: [&str; 28] = [
    "alpha", "p", "kappa", "eps0", "angular_model", "eps_bar", "eps_c", "e_min", "delta", "e0",
    "energy_spread_rel", "x0", "y0", "transverse_sigma", "nx", "ny", "extent", "h", "t_max", "n_paths",
    "seed", "scheme", "workers", "sens", "dim", "kernel", "levy_terms", "_",
];

fn num(key: &str, v: &Value) -> Result<f64> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::config(key, format!("expected a number, got {v}")))
}

fn count(key: &str, v: &Value) -> Result<usize> {
    v.as_u64().map(|x| x as usize).ok_or_else(|| Error::config(key, format!("expected a non-negative integer, got {v}")))
}

fn text<'a>(key: &str, v: &'a Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| Error::config(key, format!("expected a string, got {v}")))
}

impl Settings {
    /// Applies the keys of a flat JSON object on top of `self`.
    pub fn apply(&mut self, obj: &Map<String, Value>) -> Result<()> {
        for (key, v) in obj {
            let k = key.as_str();
            match k {
                "alpha" => self.alpha = num(k, v)?,
                "p" => self.p = num(k, v)?,
                "kappa" => self.kappa = num(k, v)?,
                "eps0" => self.eps0 = num(k, v)?,
                "angular_model" => {
                    self.angular_model = match text(k, v)? {
                        "constant" => AngularModel::Constant,
                        "moliere" => AngularModel::Moliere,
                        o => return Err(Error::config(k, format!("expected \"constant\" or \"moliere\", got \"{o}\""))),
                    }
                }
                "eps_bar" => self.eps_bar = num(k, v)?,
                "eps_c" => self.eps_c = num(k, v)?,
                "e_min" => self.e_min = num(k, v)?,
                "delta" => self.delta = num(k, v)?,
                "e0" => self.e0 = num(k, v)?,
                "energy_spread_rel" => self.energy_spread_rel = num(k, v)?,
                "x0" => self.x0 = num(k, v)?,
                "y0" => self.y0 = num(k, v)?,
                "transverse_sigma" => self.transverse_sigma = num(k, v)?,
                "nx" => self.nx = count(k, v)?,
                "ny" => self.ny = count(k, v)?,
                "extent" => {
                    let arr = v.as_array().filter(|a| a.len() == 4).ok_or_else(|| {
                        Error::config(k, "expected an array [x_min, x_max, y_min, y_max]")
                    })?;
                    for (slot, x) in self.extent.iter_mut().zip(arr) {
                        *slot = num(k, x)?;
                    }
                }
                "h" => self.h = num(k, v)?,
                "t_max" => self.t_max = if v.is_null() { None } else { Some(num(k, v)?) },
                "n_paths" => self.n_paths = count(k, v)?,
                "seed" => self.seed = v.as_u64().ok_or_else(|| Error::config(k, format!("expected a 64-bit unsigned integer, got {v}")))?,
                "scheme" => self.scheme = text(k, v)?.parse()?,
                "workers" => self.workers = count(k, v)?,
                "sens" => {
                    let arr = v.as_array().ok_or_else(|| Error::config(k, "expected an array of parameter names"))?;
                    self.sens = arr
                        .iter()
                        .map(|x| text(k, x)?.parse::<Param>().map_err(|_| Error::config(k, format!("unknown parameter {x}"))))
                        .collect::<Result<Vec<_>>>()?;
                    self.sens.sort();
                    self.sens.dedup();
                }
                "dim" => self.dim = count(k, v)?,
                "kernel" => {
                    self.kernel = match text(k, v)? {
                        "nearest" => Kernel::Nearest,
                        "gaussian" => Kernel::Gaussian,
                        o => return Err(Error::config(k, format!("expected \"nearest\" or \"gaussian\", got \"{o}\""))),
                    }
                }
                "levy_terms" => self.levy_terms = count(k, v)?,
                other => return Err(Error::config(other, "unknown configuration key")),
            }
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let mut out = Settings::default();
        out.apply(&parse_object(s)?)?;
        Ok(out)
    }

    pub fn model_params(&self) -> ModelParams<f64> {
        ModelParams {
            alpha: self.alpha,
            p: self.p,
            kappa: self.kappa,
            eps0: self.eps0,
            eps_bar: self.eps_bar,
            eps_c: self.eps_c,
            e_min: self.e_min,
            delta: self.delta,
            angular_model: self.angular_model,
        }
    }

    /// Validates and builds the engine configuration. `t_max` defaults to
    /// 1.5 CSDA ranges rounded up to whole steps.
    pub fn to_run_config(&self) -> Result<RunConfig<f64>> {
        let params = self.model_params();
        params.validate()?;
        let dim = Dim::from_usize(self.dim)?;
        if !(self.h > 0.0) {
            return Err(Error::config("h", format!("must be > 0, got {}", self.h)));
        }
        if self.levy_terms == 0 {
            return Err(Error::config("levy_terms", "must be >= 1"));
        }
        if self.e0 <= self.e_min {
            return Err(Error::config("e0", format!("must exceed e_min = {}", self.e_min)));
        }
        let t_max = match self.t_max {
            Some(t) => t,
            None => whole_steps(1.5 * crate::model::csda_range(self.e0, &params)?, self.h),
        };
        let grid = GridSpec::new(self.nx, self.ny, self.extent)?;
        let cfg = RunConfig {
            scheme: self.scheme,
            n_paths: self.n_paths,
            h: self.h,
            t_max,
            seed: self.seed,
            dim,
            beam: BeamSpec {
                e0: self.e0,
                energy_spread_rel: self.energy_spread_rel,
                x0: Vec3::planar(self.x0, self.y0),
                transverse_sigma: self.transverse_sigma,
                direction: Direction::x_axis(dim),
            },
            grid,
            domain: default_domain(self.extent),
            params,
            sens: ParamSet::of(&self.sens),
            workers: self.workers,
            deposit: if self.kappa > 0.0 && !self.sens.is_empty() {
                DepositMode::Mollified(MollifierSpec::new(self.delta, self.e_min)?)
            } else {
                DepositMode::HardTau
            },
            kernel: self.kernel,
            levy_terms: self.levy_terms,
            options: Default::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical single-line JSON (fixed key order, t_max resolved).
    pub fn canonical_json(&self) -> Result<String> {
        let mut s = self.clone();
        if s.t_max.is_none() {
            s.t_max = Some(self.to_run_config()?.t_max);
        }
        serde_json::to_string(&s).map_err(|e| Error::Io(e.to_string()))
    }
}

pub fn parse_object(s: &str) -> Result<Map<String, Value>> {
    if s.trim().is_empty() {
        return Ok(Map::new());
    }
    match serde_json::from_str::<Value>(s) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(Error::config("<root>", "configuration must be a JSON object")),
        Err(e) => Err(Error::config("<root>", format!("invalid JSON: {e}"))),
    }
}

/// Parses `key=value` where value is JSON, falling back to a bare string.
pub fn parse_assignment(s: &str) -> Result<(String, Value)> {
    let (k, v) = s.split_once('=').ok_or_else(|| Error::config(s, "expected key=value"))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}
