//! Layered configuration.
//!
//! Values are resolved from, in increasing precedence: built-in defaults,
//! a TOML file, `BVE_*` environment variables and command-line flags. Key
//! names are unique across sections, so overrides address a key by its bare
//! name (`hfov`, `seed`, ...). A file may use the sections below or put keys
//! at the top level.
//!
//! ```toml
//! [simulation]
//! experiment = "E1"
//! runs = 100
//!
//! [restrictions]
//! hfov = 1.0
//! ```

use std::path::Path;
use std::str::FromStr;

use bve::constraints::{
    CameraFov, ConstraintParams, DistanceShell, FovSign, FruitBody, PlantWall, StepLimit, Workspace,
};
use bve::ekf::CovarianceForm;
use bve::simulation::{LossChoice, PriorSource};
use bve::{
    BveError, Covariance3, ExperimentId, PerpMode, ScenarioConfig, SigmoidParams, SolverSettings,
    Vec3,
};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{CliError, ConfigError};

pub const ENV_PREFIX: &str = "BVE_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Simulation {
    pub experiment: String,
    pub runs: u64,
    pub iterations: u64,
    pub seed: u64,
    /// Half-width of the per-axis uniform initial bias (m).
    pub initial_bias: f64,
    pub measurement_noise: bool,
}

/// Diagonal of the camera-frame observation covariance (m²).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Camera {
    pub sigma_xx: f64,
    pub sigma_yy: f64,
    pub sigma_zz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Objective {
    /// `default`, `dispersion`, `max-eig` or `approach`.
    pub loss: String,
    pub sigmoid_a: f64,
    pub sigmoid_b: f64,
    /// `fused` or `filter`.
    pub prior_source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Restrictions {
    pub r_m: f64,
    pub m_x: f64,
    pub m_y: f64,
    pub m_z: f64,
    pub r_k: f64,
    /// Horizontal field of view (rad).
    pub hfov: f64,
    pub wall_d: f64,
    pub r_d: f64,
    pub l_dist: f64,
    pub l_eps: f64,
    pub r_inner: f64,
    /// `corrected` or `paper`.
    pub fov_sign: String,
    /// `paper` or `orthogonal`.
    pub fov_perp_mode: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Filter {
    /// Isotropic process noise per step (m²).
    pub q: f64,
    /// `simple` or `joseph`.
    pub covariance_form: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Solver {
    pub max_iterations: u64,
    pub constraint_tolerance: f64,
    pub step_tolerance: f64,
    pub loss_tolerance: f64,
    pub multistart_count: u64,
    pub fd_step: f64,
}

/// Every user-facing setting, as written to and read from config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub simulation: Simulation,
    pub camera: Camera,
    pub objective: Objective,
    pub restrictions: Restrictions,
    pub filter: Filter,
    pub solver: Solver,
}

impl Default for Settings {
    fn default() -> Self {
        Self::from_scenario(&ScenarioConfig::default())
    }
}

fn label<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        other => panic!("expected a unit enum, got {other:?}"),
    }
}

fn parse_label<T: for<'de> Deserialize<'de>>(
    key: &str,
    s: &str,
    allowed: &str,
) -> Result<T, ConfigError> {
    serde_json::from_value(serde_json::Value::String(s.to_owned()))
        .map_err(|_| ConfigError::invalid(key, format!("`{s}` is not one of {allowed}")))
}

impl Settings {
    pub fn from_scenario(c: &ScenarioConfig) -> Self {
        let sc = c.sigma_c.diagonal();
        let p = &c.constraints;
        Self {
            simulation: Simulation {
                experiment: c.experiment.to_string(),
                runs: c.runs as u64,
                iterations: c.iterations as u64,
                seed: c.seed,
                initial_bias: c.initial_bias,
                measurement_noise: c.measurement_noise,
            },
            camera: Camera {
                sigma_xx: sc.x,
                sigma_yy: sc.y,
                sigma_zz: sc.z,
            },
            objective: Objective {
                loss: c.loss.map_or_else(|| "default".to_owned(), |l| label(&l)),
                sigmoid_a: c.sigmoid.a,
                sigmoid_b: c.sigmoid.b,
                prior_source: label(&c.prior_source),
            },
            restrictions: Restrictions {
                r_m: p.workspace.radius,
                m_x: p.workspace.center.x,
                m_y: p.workspace.center.y,
                m_z: p.workspace.center.z,
                r_k: p.fruit.radius,
                hfov: p.fov.hfov,
                wall_d: p.wall.standoff,
                r_d: p.step.radius,
                l_dist: p.shell.l_dist,
                l_eps: p.shell.epsilon,
                r_inner: p.reach_inner_radius,
                fov_sign: label(&p.fov_sign),
                fov_perp_mode: label(&p.perp_mode),
            },
            filter: Filter {
                q: c.process_noise,
                covariance_form: label(&c.covariance_form),
            },
            solver: Solver {
                max_iterations: c.solver.max_iterations as u64,
                constraint_tolerance: c.solver.constraint_tolerance,
                step_tolerance: c.solver.step_tolerance,
                loss_tolerance: c.solver.loss_tolerance,
                multistart_count: c.solver.multistart_count as u64,
                fd_step: c.solver.fd_step,
            },
        }
    }

    /// Builds and validates the simulation config.
    pub fn to_scenario(&self) -> Result<ScenarioConfig, ConfigError> {
        let s = &self.simulation;
        let r = &self.restrictions;
        let o = &self.objective;
        let experiment = ExperimentId::from_str(&s.experiment).map_err(|_| {
            ConfigError::invalid(
                "experiment",
                format!("unknown experiment `{}`", s.experiment),
            )
        })?;
        let loss = match o.loss.as_str() {
            "default" => None,
            other => Some(parse_label::<LossChoice>(
                "loss",
                other,
                "default, dispersion, max-eig, approach",
            )?),
        };
        let sigma_c = Covariance3::from_diagonal(
            self.camera.sigma_xx,
            self.camera.sigma_yy,
            self.camera.sigma_zz,
        )
        .map_err(|e| ConfigError::invalid("sigma_xx", e.to_string()))?;
        let sigmoid = SigmoidParams::new(o.sigmoid_a, o.sigmoid_b).map_err(core_error)?;
        let config = ScenarioConfig {
            experiment,
            runs: to_usize("runs", s.runs)?,
            iterations: to_usize("iterations", s.iterations)?,
            seed: s.seed,
            sigma_c,
            constraints: ConstraintParams {
                workspace: Workspace {
                    center: Vec3::new(r.m_x, r.m_y, r.m_z),
                    radius: r.r_m,
                },
                fruit: FruitBody { radius: r.r_k },
                fov: CameraFov { hfov: r.hfov },
                wall: PlantWall { standoff: r.wall_d },
                step: StepLimit { radius: r.r_d },
                shell: DistanceShell {
                    l_dist: r.l_dist,
                    epsilon: r.l_eps,
                },
                reach_inner_radius: r.r_inner,
                fov_sign: parse_label::<FovSign>("fov_sign", &r.fov_sign, "corrected, paper")?,
                perp_mode: parse_label::<PerpMode>(
                    "fov_perp_mode",
                    &r.fov_perp_mode,
                    "paper, orthogonal",
                )?,
            },
            loss,
            sigmoid,
            solver: SolverSettings {
                max_iterations: to_usize("max_iterations", self.solver.max_iterations)?,
                constraint_tolerance: self.solver.constraint_tolerance,
                step_tolerance: self.solver.step_tolerance,
                loss_tolerance: self.solver.loss_tolerance,
                multistart_count: to_usize("multistart_count", self.solver.multistart_count)?,
                fd_step: self.solver.fd_step,
            },
            process_noise: self.filter.q,
            covariance_form: parse_label::<CovarianceForm>(
                "covariance_form",
                &self.filter.covariance_form,
                "simple, joseph",
            )?,
            prior_source: parse_label::<PriorSource>(
                "prior_source",
                &o.prior_source,
                "fused, filter",
            )?,
            initial_bias: s.initial_bias,
            measurement_noise: s.measurement_noise,
            ..ScenarioConfig::default()
        };
        config.validate().map_err(core_error)?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("settings serialize to TOML")
    }

    /// Applies the layers on top of `self`, lowest precedence first.
    pub fn layered(
        &self,
        file: Option<&str>,
        env: &[(String, String)],
        flags: &[(String, String)],
    ) -> Result<Settings, ConfigError> {
        let mut table = Table::try_from(self).expect("settings serialize to a table");
        if let Some(text) = file {
            let doc: Table = text
                .parse()
                .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
            merge_file(&mut table, doc)?;
        }
        for (key, raw) in env.iter().chain(flags) {
            assign_raw(&mut table, key, raw)?;
        }
        Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))
    }

    /// Layers a config file read from disk.
    pub fn load(
        &self,
        path: Option<&Path>,
        env: &[(String, String)],
        flags: &[(String, String)],
    ) -> Result<Settings, CliError> {
        let text = path
            .map(|p| std::fs::read_to_string(p).map_err(|e| CliError::io(p, e)))
            .transpose()?;
        Ok(self.layered(text.as_deref(), env, flags)?)
    }
}

/// `BVE_HFOV=0.9` becomes `("hfov", "0.9")`; other variables are ignored.
pub fn env_overrides<I: IntoIterator<Item = (String, String)>>(vars: I) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = vars
        .into_iter()
        .filter_map(|(k, v)| {
            k.strip_prefix(ENV_PREFIX)
                .map(|key| (key.to_ascii_lowercase(), v))
        })
        .collect();
    out.sort();
    out
}

/// Splits `key=value`.
pub fn parse_assignment(s: &str) -> Result<(String, String), ConfigError> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_owned(), v.trim().to_owned())),
        _ => Err(ConfigError::invalid(s, "expected key=value")),
    }
}

fn core_error(e: BveError) -> ConfigError {
    match e {
        BveError::InvalidParameter { name, reason } => ConfigError::invalid(name, reason),
        other => ConfigError::invalid("config", other.to_string()),
    }
}

fn to_usize(key: &str, v: u64) -> Result<usize, ConfigError> {
    usize::try_from(v).map_err(|_| ConfigError::invalid(key, "out of range"))
}

fn section_of<'a>(table: &'a mut Table, key: &str) -> Option<&'a mut Table> {
    table
        .iter_mut()
        .map(|(_, v)| v)
        .filter_map(Value::as_table_mut)
        .find(|s| s.contains_key(key))
}

fn merge_file(table: &mut Table, doc: Table) -> Result<(), ConfigError> {
    for (name, value) in doc {
        match value {
            Value::Table(entries) => {
                let Some(section) = table.get_mut(&name).and_then(Value::as_table_mut) else {
                    return Err(ConfigError::UnknownKey(name));
                };
                for (key, v) in entries {
                    let Some(slot) = section.get_mut(&key) else {
                        return Err(ConfigError::UnknownKey(format!("{name}.{key}")));
                    };
                    *slot = coerce(&key, slot, v)?;
                }
            }
            v => assign(table, &name, v)?,
        }
    }
    Ok(())
}

fn assign(table: &mut Table, key: &str, v: Value) -> Result<(), ConfigError> {
    let section = section_of(table, key).ok_or_else(|| ConfigError::UnknownKey(key.to_owned()))?;
    let slot = section.get_mut(key).expect("section holds the key");
    *slot = coerce(key, slot, v)?;
    Ok(())
}

/// Assigns an unparsed value; string settings take the text verbatim.
fn assign_raw(table: &mut Table, key: &str, raw: &str) -> Result<(), ConfigError> {
    let section = section_of(table, key).ok_or_else(|| ConfigError::UnknownKey(key.to_owned()))?;
    let slot = section.get_mut(key).expect("section holds the key");
    let v = if slot.is_str() {
        Value::String(raw.to_owned())
    } else {
        let doc: Table = format!("v = {raw}")
            .parse()
            .map_err(|_| ConfigError::invalid(key, format!("cannot parse `{raw}`")))?;
        doc["v"].clone()
    };
    *slot = coerce(key, slot, v)?;
    Ok(())
}

fn coerce(key: &str, current: &Value, v: Value) -> Result<Value, ConfigError> {
    match (current, v) {
        (Value::Float(_), Value::Integer(i)) => Ok(Value::Float(i as f64)),
        (Value::Integer(_), Value::Integer(i)) if i < 0 => {
            Err(ConfigError::invalid(key, "must be non-negative"))
        }
        (cur, v) if cur.same_type(&v) => Ok(v),
        (cur, v) => Err(ConfigError::invalid(
            key,
            format!("expected {}, got {}", cur.type_str(), v.type_str()),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(k: &str, v: &str) -> (String, String) {
        (k.to_owned(), v.to_owned())
    }

    #[test]
    fn defaults_match_core() {
        assert_eq!(
            Settings::default().to_scenario().unwrap(),
            ScenarioConfig::default()
        );
    }

    #[test]
    fn raw_values_are_typed_by_key() {
        let s = Settings::default()
            .layered(
                None,
                &[],
                &[
                    kv("hfov", "1"),
                    kv("experiment", "E3"),
                    kv("loss", "max-eig"),
                ],
            )
            .unwrap();
        assert_eq!(s.restrictions.hfov, 1.0);
        let c = s.to_scenario().unwrap();
        assert_eq!(c.experiment, ExperimentId::E3);
        assert_eq!(c.loss, Some(LossChoice::MaxEig));
    }

    #[test]
    fn type_mismatch_names_the_key() {
        let err = Settings::default()
            .layered(None, &[], &[kv("runs", "many")])
            .unwrap_err();
        assert!(err.to_string().contains("runs"), "{err}");
        let err = Settings::default()
            .layered(None, &[], &[kv("runs", "-3")])
            .unwrap_err();
        assert!(err.to_string().contains("runs"), "{err}");
    }

    #[test]
    fn flat_and_sectioned_files() {
        let flat = Settings::default()
            .layered(Some("seed = 9\n"), &[], &[])
            .unwrap();
        let sect = Settings::default()
            .layered(Some("[simulation]\nseed = 9\n"), &[], &[])
            .unwrap();
        assert_eq!(flat, sect);
        assert_eq!(flat.simulation.seed, 9);
    }

    #[test]
    fn misplaced_key_is_unknown() {
        let err = Settings::default()
            .layered(Some("[camera]\nseed = 9\n"), &[], &[])
            .unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey(ref k) if k == "camera.seed"));
    }

    #[test]
    fn env_prefix() {
        let vars = vec![
            kv("BVE_HFOV", "0.9"),
            kv("HOME", "/root"),
            kv("BVE_SEED", "4"),
        ];
        assert_eq!(
            env_overrides(vars),
            vec![kv("hfov", "0.9"), kv("seed", "4")]
        );
    }

    #[test]
    fn assignment_syntax() {
        assert_eq!(parse_assignment("r_d = 0.3").unwrap(), kv("r_d", "0.3"));
        assert!(parse_assignment("r_d").is_err());
        assert!(parse_assignment("=1").is_err());
    }
}
