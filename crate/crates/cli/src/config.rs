//! Run configuration: JSON with a versioned schema.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use weaknull::asymptotics::AnalyzerOptions;
use weaknull::coefficients::{model_condition_h, CartesianCoefficients};
use weaknull::free_wave::FreeWave;
use weaknull::geometry::{InitialDataFunctions, Profile, RadialChart};
use weaknull::solver::SolverConfig;
use weaknull::system::{select_parameters, FuchsianParameters, DEFAULT_EPSILON};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub coefficients: CoefficientSpec,
    #[serde(default)]
    pub chart: ChartSpec,
    #[serde(default)]
    pub parameters: ParameterSpec,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub analyzer: AnalyzerOptions,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientSpec {
    Zero { n_fields: usize },
    /// All `16 N³` values in `[K][I][J][μ][ν]` order.
    Dense { n_fields: usize, values: Vec<f64> },
    /// `[K, I, J, μ, ν, value]` entries; the rest are zero.
    Sparse { n_fields: usize, entries: Vec<[f64; 6]> },
    ConditionH { ibar: Vec<Vec<f64>>, cbar: Vec<f64> },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChartSpec {
    pub m: u32,
    pub rho0: f64,
    /// Rescale `rho0` so that the peak of `χρ^m` is one (overrides `rho0`).
    pub unit_peak: bool,
}

impl Default for ChartSpec {
    fn default() -> Self {
        Self { m: 1, rho0: 1.0, unit_peak: false }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParameterSpec {
    pub epsilon: f64,
    pub z: Option<f64>,
    pub kappa: Option<f64>,
    pub nu: Option<f64>,
}

impl Default for ParameterSpec {
    fn default() -> Self {
        Self { epsilon: DEFAULT_EPSILON, z: None, kappa: None, nu: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSpec {
    /// Overall amplitude multiplying every field.
    pub delta: f64,
    /// One entry per field; missing fields get zero data.
    pub fields: Vec<FieldData>,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self { delta: 1.0, fields: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldData {
    Zero,
    /// Exact free wave `(F(r̄ − t̄) + G(r̄ + t̄))/r̄` evaluated at `t̄ = 0`.
    FreeWave { outgoing: Profile, #[serde(default = "zero_profile")] incoming: Profile },
    /// `(v̄, w̄) = (v(r̄), w(r̄))`.
    Radial { v: Profile, #[serde(default = "zero_profile")] w: Profile },
}

fn zero_profile() -> Profile {
    Profile::Zero
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { directory: PathBuf::from("out"), formats: vec![Format::Json, Format::Csv] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Parse {
                path: "schema_version".into(),
                message: format!("unsupported version {}, expected {SCHEMA_VERSION}", cfg.schema_version),
            });
        }
        Ok(cfg)
    }

    pub fn coefficients(&self) -> Result<CartesianCoefficients, ConfigError> {
        let inv = |path: &str, e: weaknull::Error| ConfigError::Parse { path: path.into(), message: e.to_string() };
        match &self.coefficients {
            CoefficientSpec::Zero { n_fields } => {
                check_fields(*n_fields)?;
                Ok(CartesianCoefficients::zeros(*n_fields))
            }
            CoefficientSpec::Dense { n_fields, values } => {
                check_fields(*n_fields)?;
                CartesianCoefficients::from_values(*n_fields, values.clone())
                    .map_err(|e| inv("coefficients.values", e))
            }
            CoefficientSpec::Sparse { n_fields, entries } => {
                let n = *n_fields;
                check_fields(n)?;
                let mut c = CartesianCoefficients::zeros(n);
                for (i, e) in entries.iter().enumerate() {
                    let idx: Vec<usize> = e[..5].iter().map(|x| *x as usize).collect();
                    let ok = e[..5].iter().all(|x| x.fract() == 0.0 && *x >= 0.0)
                        && idx[..3].iter().all(|&x| x < n)
                        && idx[3..].iter().all(|&x| x < 4);
                    if !ok {
                        return Err(ConfigError::Parse {
                            path: format!("coefficients.entries[{i}]"),
                            message: format!("indices must be K, I, J < {n} and mu, nu < 4"),
                        });
                    }
                    c.set(idx[0], idx[1], idx[2], idx[3], idx[4], e[5]);
                }
                Ok(c)
            }
            CoefficientSpec::ConditionH { ibar, cbar } => {
                let n = ibar.len();
                if ibar.iter().any(|r| r.len() != n) {
                    return Err(ConfigError::Parse {
                        path: "coefficients.ibar".into(),
                        message: "must be a square matrix".into(),
                    });
                }
                let m = DMatrix::from_fn(n, n, |i, j| ibar[i][j]);
                model_condition_h(&m, cbar).map_err(|e| inv("coefficients", e))
            }
        }
    }

    pub fn n_fields(&self) -> usize {
        match &self.coefficients {
            CoefficientSpec::Zero { n_fields }
            | CoefficientSpec::Dense { n_fields, .. }
            | CoefficientSpec::Sparse { n_fields, .. } => *n_fields,
            CoefficientSpec::ConditionH { ibar, .. } => ibar.len(),
        }
    }

    pub fn chart(&self) -> Result<RadialChart, ConfigError> {
        let c = if self.chart.unit_peak {
            RadialChart::with_unit_peak(self.chart.m)
        } else {
            RadialChart::new(self.chart.m, self.chart.rho0)
        };
        c.map_err(|e| ConfigError::Parse { path: "chart".into(), message: e.to_string() })
    }

    pub fn parameters(&self) -> Result<FuchsianParameters, ConfigError> {
        let p = &self.parameters;
        let r = match (p.kappa, p.nu) {
            (Some(k), Some(n)) => FuchsianParameters::new(p.epsilon, k, n, p.z.unwrap_or(p.epsilon)),
            (None, None) => select_parameters(p.epsilon, p.z),
            _ => {
                return Err(ConfigError::Parse {
                    path: "parameters".into(),
                    message: "kappa and nu must be given together".into(),
                })
            }
        };
        r.map_err(|e| ConfigError::Parse { path: "parameters".into(), message: e.to_string() })
    }

    /// Per-field data scaled by `delta`.
    pub fn initial_data(&self) -> Result<Vec<InitialDataFunctions>, ConfigError> {
        let n = self.n_fields();
        if self.data.fields.len() > n {
            return Err(ConfigError::Parse {
                path: "data.fields".into(),
                message: format!("{} entries for {n} fields", self.data.fields.len()),
            });
        }
        let d = self.data.delta;
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            let f = self.data.fields.get(k).copied().unwrap_or(FieldData::Zero);
            let check = |p: &Profile, what: &str| {
                p.validate().map_err(|e| ConfigError::Parse {
                    path: format!("data.fields[{k}].{what}"),
                    message: e.to_string(),
                })
            };
            out.push(match f {
                FieldData::Zero => InitialDataFunctions::zero(),
                FieldData::FreeWave { outgoing, incoming } => {
                    check(&outgoing, "outgoing")?;
                    check(&incoming, "incoming")?;
                    scaled_wave(outgoing, incoming, d).initial_data()
                }
                FieldData::Radial { v, w } => {
                    check(&v, "v")?;
                    check(&w, "w")?;
                    InitialDataFunctions::radial(v, w, d)
                }
            });
        }
        Ok(out)
    }

    /// The exact solution when every field is a free wave and the coefficients vanish.
    pub fn exact_free_waves(&self) -> Option<Vec<FreeWave>> {
        let zero = matches!(self.coefficients, CoefficientSpec::Zero { .. });
        if !zero {
            return None;
        }
        (0..self.n_fields())
            .map(|k| match self.data.fields.get(k).copied().unwrap_or(FieldData::Zero) {
                FieldData::Zero => Some(FreeWave::outgoing(Profile::Zero)),
                FieldData::FreeWave { outgoing, incoming } => Some(scaled_wave(outgoing, incoming, self.data.delta)),
                FieldData::Radial { .. } => None,
            })
            .collect()
    }
}

fn check_fields(n: usize) -> Result<(), ConfigError> {
    if n == 0 {
        return Err(ConfigError::Parse { path: "coefficients.n_fields".into(), message: "must be at least 1".into() });
    }
    Ok(())
}

fn scale_profile(p: Profile, s: f64) -> Profile {
    match p {
        Profile::Zero => Profile::Zero,
        Profile::GaussianInInverseR { amplitude, center, width } => {
            Profile::GaussianInInverseR { amplitude: s * amplitude, center, width }
        }
        Profile::PowerTail { amplitude, p_tail } => Profile::PowerTail { amplitude: s * amplitude, p_tail },
        Profile::GaussianInRootR { amplitude, center, width, root } => {
            Profile::GaussianInRootR { amplitude: s * amplitude, center, width, root }
        }
    }
}

fn scaled_wave(outgoing: Profile, incoming: Profile, d: f64) -> FreeWave {
    FreeWave { outgoing: scale_profile(outgoing, d), incoming: scale_profile(incoming, d) }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = r#"{"schema_version": 1, "coefficients": {"kind": "zero", "n_fields": 1}}"#;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = RunConfig::parse(MIN).unwrap();
        assert_eq!(c.solver, SolverConfig::default());
        assert_eq!(c.chart().unwrap(), RadialChart::new(1, 1.0).unwrap());
        let p = c.parameters().unwrap();
        assert_eq!((p.kappa, p.nu), (5.0 / 22.0, 1.0 / 11.0));
        assert!(c.exact_free_waves().is_some());
    }

    #[test]
    fn unknown_field_reports_json_path() {
        let text = r#"{"schema_version": 1, "coefficients": {"kind": "zero", "n_fields": 1},
            "solver": {"n_rho": 64, "dt": 0.1}}"#;
        match RunConfig::parse(text) {
            Err(ConfigError::Parse { path, message }) => {
                assert_eq!(path, "solver.dt");
                assert!(message.contains("unknown field"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schema_version_is_checked() {
        let text = MIN.replace("\"schema_version\": 1", "\"schema_version\": 7");
        assert!(matches!(RunConfig::parse(&text), Err(ConfigError::Parse { path, .. }) if path == "schema_version"));
    }

    #[test]
    fn sparse_and_condition_h_coefficients() {
        let text = r#"{"schema_version": 1, "coefficients": {"kind": "sparse", "n_fields": 1,
            "entries": [[0, 0, 0, 0, 0, 1.0]]}}"#;
        let c = RunConfig::parse(text).unwrap().coefficients().unwrap();
        assert_eq!(c.get(0, 0, 0, 0, 0), 1.0);
        let bad = text.replace("[0, 0, 0, 0, 0, 1.0]", "[0, 0, 0, 4, 0, 1.0]");
        assert!(RunConfig::parse(&bad).unwrap().coefficients().is_err());
        let h = r#"{"schema_version": 1, "coefficients": {"kind": "condition_h",
            "ibar": [[1, 0], [0, 1]], "cbar": [0, 0, 1, 0, -1, 0, 0, 0]}}"#;
        let c = RunConfig::parse(h).unwrap();
        assert_eq!(c.coefficients().unwrap().get(0, 1, 0, 0, 0), 1.0);
        let asym = h.replace("-1, 0, 0, 0", "1, 0, 0, 0");
        assert!(RunConfig::parse(&asym).unwrap().coefficients().is_err());
    }

    #[test]
    fn partial_parameters_are_rejected() {
        let text = MIN.replace("}}", "}, \"parameters\": {\"kappa\": 0.2}}");
        assert!(RunConfig::parse(&text).unwrap().parameters().is_err());
    }

    #[test]
    fn too_many_data_fields() {
        let text = MIN.replace("}}", "}, \"data\": {\"fields\": [{\"kind\": \"zero\"}, {\"kind\": \"zero\"}]}}");
        assert!(RunConfig::parse(&text).unwrap().initial_data().is_err());
    }
}
