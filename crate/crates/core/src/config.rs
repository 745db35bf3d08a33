//! Flat run configuration shared by every command.
//!
//! Values are layered: built-in defaults, then a TOML file, then `PACT_*`
//! environment variables, then command-line overrides. Each layer is a flat
//! table of `key = value` pairs; unknown keys are rejected.

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::beamform::{delay_range, BodyModel};
use crate::error::{Error, Result};
use crate::geometry::{water_sos, CircularMask, RingGeometry};
use crate::optimize::{OffsetSearch, TrainConfig, DEFAULT_LAMBDA_TV};
use crate::phantom::SimConfig;
use crate::raster::GridSpec;

pub const ENV_PREFIX: &str = "PACT_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Random seed for phantoms and network initialization.
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    /// Named phantom (`default`, `liver`, `twobody`, `empty`) or a TOML path.
    pub phantom: String,
    /// Image grid width and height, pixels.
    pub grid_size: usize,
    /// Pixel pitch, mm.
    pub grid_pitch: f64,
    pub n_transducers: usize,
    /// Ring radius, mm.
    pub ring_radius: f64,
    /// Water temperature, °C; sets the background SOS.
    pub temperature: f64,
    /// Explicit background SOS (m/s), overriding the temperature.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub background_sos: Option<f64>,
    pub mask_center_x: f64,
    pub mask_center_y: f64,
    pub mask_radius: f64,
    pub pulse_sigma_ns: f64,
    pub dt_ns: f64,
    pub spreading: bool,
    /// Ray quadrature step, mm.
    pub ray_step: f64,
    /// SOS assumed by DAS (m/s); background SOS when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v0: Option<f64>,
    /// Extra delay of a single DAS image, mm.
    pub delay: f64,
    pub delay_min: f64,
    pub delay_max: f64,
    pub delay_count: usize,
    pub patch_size: f64,
    pub overlap: f64,
    pub merge_fwhm: f64,
    pub eps_deconv: f64,
    pub n_angles: usize,
    pub body_center_x: f64,
    pub body_center_y: f64,
    pub body_radius: f64,
    pub body_sos: f64,
    pub hidden: usize,
    pub layers: usize,
    pub omega0: f64,
    pub out_scale: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub lambda_tv: f64,
    pub implicit_grad: bool,
    pub warm_start: bool,
    pub warm_start_min: f64,
    pub warm_start_max: f64,
    pub warm_start_step: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let w = OffsetSearch::default();
        RunConfig {
            seed: 0,
            workers: 0,
            phantom: "default".into(),
            grid_size: 256,
            grid_pitch: 0.1,
            n_transducers: 512,
            ring_radius: 50.0,
            temperature: 26.0,
            background_sos: None,
            mask_center_x: 0.0,
            mask_center_y: 0.0,
            mask_radius: 11.0,
            pulse_sigma_ns: 100.0,
            dt_ns: 25.0,
            spreading: false,
            ray_step: 0.05,
            v0: None,
            delay: 0.0,
            delay_min: -0.8,
            delay_max: 0.8,
            delay_count: 32,
            patch_size: t.patch_size,
            overlap: t.overlap,
            merge_fwhm: t.merge_fwhm,
            eps_deconv: t.eps_deconv,
            n_angles: t.n_angles,
            body_center_x: 0.0,
            body_center_y: 0.0,
            body_radius: 9.0,
            body_sos: 1561.0,
            hidden: t.hidden,
            layers: t.layers,
            omega0: t.omega0,
            out_scale: t.out_scale,
            epochs: t.epochs,
            steps_per_epoch: t.steps_per_epoch,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_eps: t.adam_eps,
            lambda_tv: DEFAULT_LAMBDA_TV,
            implicit_grad: t.implicit_grad,
            warm_start: true,
            warm_start_min: w.min,
            warm_start_max: w.max,
            warm_start_step: w.step,
        }
    }
}

/// Interpret a textual override as a TOML value, falling back to a string.
pub fn parse_value(text: &str) -> Value {
    match toml::from_str::<Table>(&format!("v = {text}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(text.to_string())),
        Err(_) => Value::String(text.to_string()),
    }
}

/// Builder that applies configuration layers in increasing precedence.
#[derive(Debug, Clone)]
pub struct ConfigLayers {
    table: Table,
}

impl Default for ConfigLayers {
    fn default() -> Self {
        Self::new()
    }
}

impl ConfigLayers {
    pub fn new() -> Self {
        let table = match Value::try_from(RunConfig::default()) {
            Ok(Value::Table(t)) => t,
            _ => Table::new(),
        };
        ConfigLayers { table }
    }

    fn known(key: &str) -> bool {
        matches!(key, "background_sos" | "v0") || Self::new().table.contains_key(key)
    }

    fn set(&mut self, key: &str, value: Value, source: &str) -> Result<()> {
        if !Self::known(key) {
            return Err(Error::config(format!("unknown configuration key `{key}` ({source})")));
        }
        self.table.insert(key.to_string(), value);
        Ok(())
    }

    /// Merge a TOML document.
    pub fn file_text(&mut self, text: &str, source: &str) -> Result<&mut Self> {
        let t: Table = toml::from_str(text).map_err(|e| Error::config(format!("{source}: {e}")))?;
        for (k, v) in t {
            self.set(&k, v, source)?;
        }
        Ok(self)
    }

    pub fn file(&mut self, path: &std::path::Path) -> Result<&mut Self> {
        let text = std::fs::read_to_string(path)?;
        self.file_text(&text, &path.display().to_string())
    }

    /// Merge `PACT_<KEY>` variables from an iterator of `(name, value)`.
    pub fn env_vars<I, K, V>(&mut self, vars: I) -> Result<&mut Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut pairs: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| {
                k.as_ref()
                    .strip_prefix(ENV_PREFIX)
                    .map(|key| (key.to_ascii_lowercase(), v.as_ref().to_string()))
            })
            .collect();
        pairs.sort();
        for (key, value) in pairs {
            self.set(&key, parse_value(&value), "environment")?;
        }
        Ok(self)
    }

    pub fn env(&mut self) -> Result<&mut Self> {
        self.env_vars(std::env::vars())
    }

    /// Merge one command-line override.
    pub fn flag(&mut self, key: &str, value: Value) -> Result<&mut Self> {
        self.set(key, value, "command line")?;
        Ok(self)
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        let cfg: RunConfig = Value::Table(self.table.clone())
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 8 {
            return Err(Error::config("grid_size must be at least 8"));
        }
        if !(self.grid_pitch > 0.0) || !(self.ring_radius > 0.0) || !(self.mask_radius > 0.0) {
            return Err(Error::config("grid_pitch, ring_radius and mask_radius must be positive"));
        }
        if !(self.pulse_sigma_ns > 0.0) || !(self.dt_ns > 0.0) || !(self.ray_step > 0.0) {
            return Err(Error::config("pulse_sigma_ns, dt_ns and ray_step must be positive"));
        }
        if let Some(v) = self.v0 {
            if !(v > 0.0) {
                return Err(Error::config(format!("v0 must be positive, got {v}")));
            }
        }
        self.background()?;
        self.delays()?;
        self.train_config()?.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }

    pub fn background(&self) -> Result<f64> {
        match self.background_sos {
            Some(v) if v > 0.0 => Ok(v),
            Some(v) => Err(Error::config(format!("background_sos must be positive, got {v}"))),
            None => water_sos(self.temperature),
        }
    }

    /// SOS assumed by conventional DAS.
    pub fn das_v0(&self) -> Result<f64> {
        self.v0.map_or_else(|| self.background(), Ok)
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::centered(self.grid_size, self.grid_size, self.grid_pitch)
    }

    pub fn geometry(&self) -> Result<RingGeometry> {
        RingGeometry::new(self.n_transducers, self.ring_radius, 0.0)
    }

    pub fn mask(&self) -> Result<CircularMask> {
        CircularMask::new([self.mask_center_x, self.mask_center_y], self.mask_radius)
    }

    pub fn delays(&self) -> Result<Vec<f64>> {
        delay_range(self.delay_min, self.delay_max, self.delay_count)
    }

    pub fn body(&self) -> Result<BodyModel> {
        BodyModel::new([self.body_center_x, self.body_center_y], self.body_radius, self.body_sos)
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            pulse_sigma: self.pulse_sigma_ns * 1e-9,
            dt: self.dt_ns * 1e-9,
            spreading: self.spreading,
            ray_step: self.ray_step,
            window: None,
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            grid: self.grid()?,
            mask: self.mask()?,
            v0: Some(self.background()?),
            delays: self.delays()?,
            patch_size: self.patch_size,
            overlap: self.overlap,
            merge_fwhm: self.merge_fwhm,
            eps_deconv: self.eps_deconv,
            n_angles: self.n_angles,
            ray_step: self.ray_step,
            hidden: self.hidden,
            layers: self.layers,
            omega0: self.omega0,
            out_scale: self.out_scale,
            epochs: self.epochs,
            steps_per_epoch: self.steps_per_epoch,
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_eps: self.adam_eps,
            lambda_tv: self.lambda_tv,
            seed: self.seed,
            implicit_grad: self.implicit_grad,
            warm_start: self.warm_start.then_some(OffsetSearch {
                min: self.warm_start_min,
                max: self.warm_start_max,
                step: self.warm_start_step,
            }),
        })
    }
}
