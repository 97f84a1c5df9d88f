//! TOML scenario files for the link-flooding game.
//!
//! ```toml
//! [scenario]
//! links = 2
//! n_rbf = 4
//!
//! [sim]
//! horizon = 10000.0
//! h = 0.05
//! seed = 1
//!
//! [[switches]]
//! time = 10000.0
//! weights = [1.0, 0.3333333333333333]
//!
//! [pe]
//! tau0 = 100.0
//! alpha0 = 1.0
//!
//! [dither]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ddos::{build_rbf_model, ddos_game, weight_switch, DdosScenario};
use crate::error::{Error, Result};
use crate::estimator::EstimatorParams;
use crate::game::{GameDefinition, ParameterizedModel, StrategySwitchSchedule};
use crate::sim::{DitherSpec, DitherTrigger, InitialPoint, PEConfig, SimConfig};

/// Bundled scenarios by name.
pub const BUNDLED: [(&str, &str); 5] = [
    ("l2_matched", include_str!("../../../configs/l2_matched.toml")),
    ("l2_switch", include_str!("../../../configs/l2_switch.toml")),
    ("l2_matched_pe", include_str!("../../../configs/l2_matched_pe.toml")),
    ("l3_mismatch", include_str!("../../../configs/l3_mismatch.toml")),
    ("l3_switch", include_str!("../../../configs/l3_switch.toml")),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub scenario: ScenarioSection,
    pub sim: SimSection,
    #[serde(default)]
    pub switches: Vec<SwitchSection>,
    pub pe: Option<PEConfig>,
    pub dither: Option<DitherSection>,
    #[serde(default)]
    pub output: OutputSection,
}

/// Game parameters. `r_total` defaults to `L c0 / 2`, `a_total` to its
/// ceiling and the weights to ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSection {
    #[serde(alias = "L")]
    pub links: usize,
    #[serde(default = "one")]
    pub c0: f64,
    pub r_total: Option<f64>,
    pub a_total: Option<f64>,
    pub weights: Option<Vec<f64>>,
    pub n_rbf: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSection {
    pub horizon: f64,
    pub h: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_lambda_theta")]
    pub lambda_theta: f64,
    #[serde(default = "default_lambda_r")]
    pub lambda_r: f64,
    #[serde(default = "default_eps_obs")]
    pub eps_obs: f64,
    #[serde(default = "default_eps_obs_prime")]
    pub eps_obs_prime: f64,
    #[serde(default)]
    pub initial_r: InitialValue,
    #[serde(default)]
    pub initial_theta: InitialValue,
}

/// `"random"` or an explicit vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialValue {
    Keyword(String),
    Values(Vec<f64>),
}

impl Default for InitialValue {
    fn default() -> Self {
        Self::Keyword("random".into())
    }
}

impl InitialValue {
    fn to_point(&self, what: &str) -> Result<InitialPoint> {
        match self {
            Self::Keyword(k) if k == "random" => Ok(InitialPoint::Random),
            Self::Keyword(k) => Err(Error::InvalidInput(format!("{what} = {k:?}: expected \"random\" or a vector"))),
            Self::Values(v) => Ok(InitialPoint::Given(v.clone())),
        }
    }
}

/// From `time` on, the attacker weights its links by `weights`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchSection {
    pub time: f64,
    pub weights: Vec<f64>,
}

/// Missing fields take the values of [`DitherSpec::default_for`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DitherSection {
    pub amplitude: Option<f64>,
    pub duration: Option<f64>,
    pub trigger: Option<DitherTrigger>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    /// Per-step CSV log.
    Trajectory,
    /// JSON run summary.
    Summary,
    /// One CSV per figure panel.
    Plots,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSection {
    /// Relative to the output root; defaults to the file stem.
    pub directory: Option<String>,
    #[serde(default = "all_formats")]
    pub formats: Vec<OutputFormat>,
    /// Keep every n-th record in the trajectory and plot files.
    #[serde(default = "default_every")]
    pub every: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { directory: None, formats: all_formats(), every: 1 }
    }
}

fn one() -> f64 {
    1.0
}
fn default_seed() -> u64 {
    1
}
fn default_lambda_theta() -> f64 {
    0.02
}
fn default_lambda_r() -> f64 {
    0.002
}
fn default_eps_obs() -> f64 {
    0.002
}
fn default_eps_obs_prime() -> f64 {
    0.001
}
fn default_every() -> usize {
    1
}
fn all_formats() -> Vec<OutputFormat> {
    vec![OutputFormat::Trajectory, OutputFormat::Summary, OutputFormat::Plots]
}

impl ScenarioFile {
    /// Parses and validates. Every unknown key is reported at once.
    pub fn parse(text: &str) -> Result<Self> {
        let value: toml::Value =
            text.parse::<toml::Table>().map(toml::Value::Table).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let mut unknown = Vec::new();
        let file: Self = serde_ignored::deserialize(value, |path| {
            unknown.push(path.to_string().split('.').filter(|seg| *seg != "?").collect::<Vec<_>>().join("."))
        })
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
        if !unknown.is_empty() {
            return Err(Error::UnknownKeys(unknown));
        }
        file.validate()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario files serialize")
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.sim.seed = seed;
        self
    }

    pub fn ddos_scenario(&self) -> Result<DdosScenario> {
        let s = &self.scenario;
        let r_total = s.r_total.unwrap_or(s.links as f64 * s.c0 / 2.0);
        let a_total = s.a_total.unwrap_or((s.links as f64 * s.c0 / 2.0).ceil());
        let weights = s.weights.clone().unwrap_or_else(|| vec![1.0; s.links]);
        DdosScenario::new(s.links, s.c0, r_total, a_total, weights)
    }

    pub fn estimator(&self) -> EstimatorParams {
        EstimatorParams {
            eps_obs: self.sim.eps_obs,
            eps_obs_prime: self.sim.eps_obs_prime,
            lambda_theta: self.sim.lambda_theta,
            flip_sign: false,
        }
    }

    pub fn game(&self) -> Result<GameDefinition> {
        ddos_game(&self.ddos_scenario()?, self.scenario.n_rbf)
    }

    pub fn switch_schedule(&self) -> Result<StrategySwitchSchedule> {
        let scn = self.ddos_scenario()?;
        let switches = self
            .switches
            .iter()
            .map(|s| weight_switch(&scn, self.scenario.n_rbf, s.time, s.weights.clone()))
            .collect::<Result<Vec<_>>>()?;
        StrategySwitchSchedule::new(switches)
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let scn = self.ddos_scenario()?;
        let dither = self.dither.as_ref().map(|d| {
            let base = DitherSpec::default_for(&scn.leader_set());
            DitherSpec {
                amplitude: d.amplitude.unwrap_or(base.amplitude),
                duration: d.duration.unwrap_or(base.duration),
                trigger: d.trigger.clone().unwrap_or(base.trigger),
            }
        });
        let cfg = SimConfig {
            horizon: self.sim.horizon,
            step: self.sim.h,
            seed: self.sim.seed,
            estimator: self.estimator(),
            lambda_r: self.sim.lambda_r,
            initial_r: self.sim.initial_r.to_point("sim.initial_r")?,
            initial_theta: self.sim.initial_theta.to_point("sim.initial_theta")?,
            switches: self.switch_schedule()?,
            pe: self.pe.clone(),
            dither,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Semantic checks; all problems are collected into one error.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut note = |r: Result<()>| {
            if let Err(e) = r {
                problems.push(match e {
                    Error::InvalidInput(m) => m,
                    other => other.to_string(),
                });
            }
        };
        let s = &self.scenario;
        if s.n_rbf == 0 {
            note(Err(Error::InvalidInput("scenario.n_rbf must be ≥ 1".into())));
        }
        match self.ddos_scenario() {
            Ok(scn) => {
                note(scn.flooded_links().map(|_| ()));
                for (i, sw) in self.switches.iter().enumerate() {
                    note(
                        scn.with_weights(sw.weights.clone())
                            .map(|_| ())
                            .map_err(|e| prefix(&format!("switches[{i}]"), e)),
                    );
                }
                if s.n_rbf > 0 {
                    note(self.check_initial_points(&scn));
                }
            }
            Err(e) => note(Err(e)),
        }
        note(self.switch_times());
        note(self.estimator().validate());
        if !(self.sim.horizon >= 0.0 && self.sim.horizon.is_finite()) {
            note(Err(Error::InvalidInput(format!("sim.horizon = {} must be finite and ≥ 0", self.sim.horizon))));
        }
        if !(self.sim.h > 0.0 && self.sim.h.is_finite()) {
            note(Err(Error::InvalidInput(format!("sim.h = {} must be > 0", self.sim.h))));
        }
        if !(self.sim.lambda_r > 0.0 && self.sim.lambda_r.is_finite()) {
            note(Err(Error::InvalidInput(format!("sim.lambda_r = {} must be > 0", self.sim.lambda_r))));
        }
        if let Some(pe) = &self.pe {
            note(pe.validate());
        }
        if let Some(d) = &self.dither {
            if d.amplitude.is_some_and(|a| !(a >= 0.0)) || d.duration.is_some_and(|a| !(a >= 0.0)) {
                note(Err(Error::InvalidInput("dither.amplitude and dither.duration must be ≥ 0".into())));
            }
        }
        if self.output.every == 0 {
            note(Err(Error::InvalidInput("output.every must be ≥ 1".into())));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput(problems.join("; ")))
        }
    }

    fn switch_times(&self) -> Result<()> {
        let times: Vec<f64> = self.switches.iter().map(|s| s.time).collect();
        if times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(format!("switch times {times:?} must be ≥ 0 and strictly increasing")));
        }
        Ok(())
    }

    fn check_initial_points(&self, scn: &DdosScenario) -> Result<()> {
        let model = build_rbf_model(scn.links, self.scenario.n_rbf, scn.c0)?;
        for (what, init, set) in [
            ("sim.initial_r", &self.sim.initial_r, scn.leader_set()),
            ("sim.initial_theta", &self.sim.initial_theta, model.theta_set().clone()),
        ] {
            if let InitialPoint::Given(v) = init.to_point(what)? {
                if v.len() != set.dim() {
                    return Err(Error::InvalidInput(format!("{what} has {} entries, expected {}", v.len(), set.dim())));
                }
                if !set.contains(&nalgebra::DVector::from_vec(v), crate::geometry::MEMBERSHIP_TOL) {
                    return Err(Error::InvalidInput(format!("{what} lies outside its set")));
                }
            }
        }
        Ok(())
    }
}

fn prefix(what: &str, e: Error) -> Error {
    match e {
        Error::InvalidInput(m) => Error::InvalidInput(format!("{what}: {m}")),
        other => Error::InvalidInput(format!("{what}: {other}")),
    }
}
