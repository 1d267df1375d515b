//! Run configuration, read from TOML or JSON. Every field has a default so
//! a config file only needs the keys it changes.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::Precoder;
use crate::em_channel::FREE_SPACE_IMPEDANCE;
use crate::error::{FcapaError, Result};
use crate::geometry::ShapePreset;
use crate::shape_optimizer::SolveOptions;

/// Box the users are drawn from: `x` in `[-half_x, half_x]`, `z` in
/// `[-half_z, half_z]`, `y` in `[y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UserRegion {
    pub half_x: f64,
    pub half_z: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Default for UserRegion {
    fn default() -> Self {
        UserRegion {
            half_x: 5.0,
            half_z: 5.0,
            y_min: 15.0,
            y_max: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub frequency_hz: f64,
    /// Aperture area in m²; the aperture is square.
    pub aperture_area: f64,
    /// Transmit power factor in A².
    pub transmit_power: f64,
    pub noise_var: f64,
    pub users: usize,
    pub impedance: f64,
    /// Gauss-Legendre points per axis.
    pub quadrature_order: usize,
    /// Shape grid points per axis.
    pub shape_grid: usize,
    pub reference_shape: ShapePreset,
    /// Optional `u,v,g` CSV overriding `reference_shape`.
    pub shape_file: Option<PathBuf>,
    /// Morphability range in wavelengths.
    pub morph_wavelengths: f64,
    pub region: UserRegion,
    pub precoder: Precoder,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            frequency_hz: 2.4e9,
            aperture_area: 0.25,
            transmit_power: 0.1,
            noise_var: 5.6e-3,
            users: 8,
            impedance: FREE_SPACE_IMPEDANCE,
            quadrature_order: 20,
            shape_grid: 64,
            reference_shape: ShapePreset::Paraboloid,
            shape_file: None,
            morph_wavelengths: 2.0,
            region: UserRegion::default(),
            precoder: Precoder::Fp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "fcapa")]
    Fcapa,
    #[serde(rename = "capa")]
    Capa,
    #[serde(rename = "mimo-flexible")]
    MimoFlexible,
    #[serde(rename = "mimo-conventional")]
    MimoConventional,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::Fcapa,
        Scheme::Capa,
        Scheme::MimoFlexible,
        Scheme::MimoConventional,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Fcapa => "fcapa",
            Scheme::Capa => "capa",
            Scheme::MimoFlexible => "mimo-flexible",
            Scheme::MimoConventional => "mimo-conventional",
        }
    }

    pub fn is_continuous(self) -> bool {
        matches!(self, Scheme::Fcapa | Scheme::Capa)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Scheme {
    type Err = FcapaError;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| FcapaError::InvalidConfig(format!("unknown scheme '{s}'")))
    }
}

/// Quantity varied by a sweep. Values are in m² (aperture), A² (power),
/// users, Hz (frequency) or wavelengths (morph).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParameter {
    Aperture,
    Power,
    Users,
    Frequency,
    Morph,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::Aperture => "aperture",
            SweepParameter::Power => "power",
            SweepParameter::Users => "users",
            SweepParameter::Frequency => "frequency",
            SweepParameter::Morph => "morph",
        }
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepParameter::Aperture => vec![0.1, 0.25, 0.5, 0.75, 1.0],
            SweepParameter::Power => vec![0.01, 0.05, 0.1, 0.5, 1.0],
            SweepParameter::Users => vec![2.0, 4.0, 8.0, 12.0, 16.0],
            SweepParameter::Frequency => vec![2.4e9, 6e9, 12e9, 24e9],
            SweepParameter::Morph => vec![0.0, 1.0, 2.0, 3.0, 4.0, 6.0],
        }
    }

    /// Returns `base` with this parameter set to `value`.
    pub fn apply(self, base: &SystemConfig, value: f64) -> Result<SystemConfig> {
        let mut sys = base.clone();
        match self {
            SweepParameter::Aperture => sys.aperture_area = value,
            SweepParameter::Power => sys.transmit_power = value,
            SweepParameter::Users => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(FcapaError::InvalidConfig(format!(
                        "user count must be a positive integer (got {value})"
                    )));
                }
                sys.users = value as usize;
            }
            SweepParameter::Frequency => sys.frequency_hz = value,
            SweepParameter::Morph => sys.morph_wavelengths = value,
        }
        Ok(sys)
    }
}

impl FromStr for SweepParameter {
    type Err = FcapaError;

    fn from_str(s: &str) -> Result<Self> {
        [
            SweepParameter::Aperture,
            SweepParameter::Power,
            SweepParameter::Users,
            SweepParameter::Frequency,
            SweepParameter::Morph,
        ]
        .into_iter()
        .find(|p| p.name() == s)
        .ok_or_else(|| FcapaError::InvalidConfig(format!("unknown sweep parameter '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepPlan {
    pub parameter: SweepParameter,
    /// Defaults to the built-in grid of `parameter` when absent.
    pub values: Option<Vec<f64>>,
}

impl Default for SweepPlan {
    fn default() -> Self {
        SweepPlan {
            parameter: SweepParameter::Aperture,
            values: None,
        }
    }
}

impl SweepPlan {
    pub fn values(&self) -> Vec<f64> {
        self.values.clone().unwrap_or_else(|| self.parameter.default_values())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub realizations: usize,
    pub schemes: Vec<Scheme>,
    /// Record wall-clock time per solve. Off gives byte-identical output
    /// across runs.
    pub record_timing: bool,
    /// Write per-iteration traces alongside sweep results.
    pub write_traces: bool,
    pub system: SystemConfig,
    pub solver: SolveOptions,
    pub sweep: SweepPlan,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            realizations: 200,
            schemes: Scheme::ALL.to_vec(),
            record_timing: true,
            write_traces: true,
            system: SystemConfig::default(),
            solver: SolveOptions::default(),
            sweep: SweepPlan::default(),
        }
    }
}

impl Config {
    /// Reads a `.toml` or `.json` file (by extension; TOML otherwise).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| FcapaError::io(path, e))?;
        let cfg: Config = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| FcapaError::parse(path, e))?,
            _ => toml::from_str(&text).map_err(|e| FcapaError::parse(path, e))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FcapaError::InvalidConfig(m));
        if self.realizations == 0 {
            return bad("realizations must be at least 1".into());
        }
        if self.schemes.is_empty() {
            return bad("at least one scheme is required".into());
        }
        if self.sweep.values().is_empty() {
            return bad("sweep values must not be empty".into());
        }
        let s = &self.system;
        if !(s.frequency_hz > 0.0 && s.aperture_area > 0.0 && s.transmit_power > 0.0 && s.noise_var > 0.0) {
            return bad("frequency, aperture area, transmit power and noise must be positive".into());
        }
        if s.users == 0 {
            return bad("at least one user is required".into());
        }
        if s.quadrature_order == 0 || s.shape_grid < 3 {
            return bad("quadrature order must be >= 1 and the shape grid >= 3".into());
        }
        if !(s.morph_wavelengths >= 0.0) {
            return bad("morph range must be non-negative".into());
        }
        let r = &s.region;
        if !(r.half_x >= 0.0 && r.half_z >= 0.0 && r.y_max >= r.y_min) {
            return bad("user region is empty".into());
        }
        let margin = (s.aperture_area / 2.0) + s.morph_wavelengths * crate::em_channel::SPEED_OF_LIGHT / s.frequency_hz;
        if !(r.y_min > margin) {
            return bad(format!(
                "users must stay in front of the aperture (y_min {} <= {margin:.3})",
                r.y_min
            ));
        }
        let o = &self.solver;
        if o.max_iters == 0 || !(o.armijo.shrink > 0.0 && o.armijo.shrink < 1.0) || !(o.armijo.initial_step > 0.0) {
            return bad("solver options out of range".into());
        }
        Ok(())
    }
}
