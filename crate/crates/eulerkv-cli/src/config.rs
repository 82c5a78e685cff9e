//! TOML run configuration. Every section defaults to the decaying-shear
//! reference scenario, so a minimal file overrides only what it names;
//! unknown keys are rejected rather than ignored. Validation happens on
//! the parsed document, before any grid is allocated, and names the rule
//! a value violates.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use eulerkv::constitutive::ParamError;
use eulerkv::{
    Domain, InitialDeformation, InitialVelocity, MaterialParams, Scenario, StoredEnergy,
    StoredEnergyKind,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Rule(String),
    #[error("invalid config: {0}")]
    Material(#[from] ParamError),
}

/// One runnable scenario plus its output policy, as written by the user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Basename of every file the run writes.
    pub name: String,
    pub domain: DomainSection,
    pub resolution: ResolutionSection,
    pub material: MaterialSection,
    pub energy: EnergySection,
    pub initial: InitialSection,
    pub time: TimeSection,
    pub output: OutputSection,
    /// Optional sweep declaration consumed by the sweep subcommands.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainSection {
    pub lx: f64,
    pub ly: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResolutionSection {
    /// Retained modes per axis.
    pub modes: [usize; 2],
    /// Collocation grid; omitted picks the smallest 3/2-rule grid.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<[usize; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialSection {
    pub rho: f64,
    pub d_lambda: f64,
    pub d_mu: f64,
    pub nu: f64,
    pub p: f64,
    pub bulk: f64,
    pub shear: f64,
    pub eta: f64,
    pub epsilon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergySection {
    pub kind: EnergyKindSpec,
    /// Coefficient of the additive `(1 - det F)^2` well; 0 disables it.
    pub det_penalty: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnergyKindSpec {
    Regularized,
    Svk,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    pub velocity: VelocitySpec,
    pub deformation: DeformationSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum VelocitySpec {
    Rest,
    /// One wall-compatible stream-function mode; `mode` indexes the sine
    /// pair, so each entry must lie in `1..modes`.
    StreamFunction { amplitude: f64, mode: [usize; 2] },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeformationSpec {
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSection {
    pub t_end: f64,
    pub dt: f64,
    /// Freeze v (prescribed-velocity transport studies) when false.
    pub evolve_velocity: bool,
    /// Freeze F when false.
    pub evolve_deformation: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Ledger rows are written every this many steps (the initial and
    /// final states are always rows).
    pub sample_stride: usize,
    /// Coefficient snapshots every this many steps; 0 writes none.
    pub snapshot_stride: usize,
    /// Track the inverse-deformation displacement and report its defect.
    pub track_return_map: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub sweep: SweepKindSpec,
    pub values: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKindSpec {
    /// Scale the bulk response of the viscous stress.
    ViscousBulk,
    /// Scale the determinant well of the stored energy.
    ElasticBulk,
    /// Vary the deformation-transport regularization.
    Epsilon,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "reference".into(),
            domain: DomainSection::default(),
            resolution: ResolutionSection::default(),
            material: MaterialSection::default(),
            energy: EnergySection::default(),
            initial: InitialSection::default(),
            time: TimeSection::default(),
            output: OutputSection::default(),
            experiment: None,
        }
    }
}

impl Default for DomainSection {
    fn default() -> Self {
        Self { lx: 1.0, ly: 1.0 }
    }
}

impl Default for ResolutionSection {
    fn default() -> Self {
        Self {
            modes: [24, 24],
            grid: None,
        }
    }
}

impl Default for MaterialSection {
    fn default() -> Self {
        let p = MaterialParams::reference();
        Self {
            rho: p.rho,
            d_lambda: p.d_lambda,
            d_mu: p.d_mu,
            nu: p.nu,
            p: p.p,
            bulk: p.bulk,
            shear: p.shear,
            eta: p.eta,
            epsilon: p.epsilon,
        }
    }
}

impl Default for EnergySection {
    fn default() -> Self {
        Self {
            kind: EnergyKindSpec::Regularized,
            det_penalty: 0.0,
        }
    }
}

impl Default for InitialSection {
    fn default() -> Self {
        Self {
            velocity: VelocitySpec::StreamFunction {
                amplitude: 1.0,
                mode: [1, 1],
            },
            deformation: DeformationSpec::Identity,
        }
    }
}

impl Default for TimeSection {
    fn default() -> Self {
        Self {
            t_end: 1.0,
            dt: 4e-3,
            evolve_velocity: true,
            evolve_deformation: true,
        }
    }
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            sample_stride: 1,
            snapshot_stride: 0,
            track_return_map: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.into(),
            source,
        })?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.into(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("a RunConfig always serializes")
    }

    pub fn material_params(&self) -> MaterialParams {
        let m = &self.material;
        MaterialParams {
            rho: m.rho,
            d_lambda: m.d_lambda,
            d_mu: m.d_mu,
            nu: m.nu,
            p: m.p,
            bulk: m.bulk,
            shear: m.shear,
            eta: m.eta,
            epsilon: m.epsilon,
        }
    }

    /// Reject bad values before anything is allocated. Each failure names
    /// the violated rule; material values defer to the solver's own
    /// parameter contract so the two never disagree.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let rule = |msg: String| Err(ConfigError::Rule(msg));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return rule(format!(
                "name must be a non-empty filename stem, got {:?}",
                self.name
            ));
        }
        for (axis, l) in [("lx", self.domain.lx), ("ly", self.domain.ly)] {
            if !(l.is_finite() && l > 0.0) {
                return rule(format!("domain.{axis} must be positive and finite, got {l}"));
            }
        }
        let [nx, ny] = self.resolution.modes;
        if nx < 2 || ny < 2 {
            return rule(format!(
                "resolution.modes needs at least 2 modes per axis, got [{nx}, {ny}]"
            ));
        }
        if let Some([mx, my]) = self.resolution.grid {
            let (dx, dy) = ((3 * nx + 1) / 2, (3 * ny + 1) / 2);
            if mx < dx || my < dy {
                return rule(format!(
                    "resolution.grid must be at least the 3/2-rule size [{dx}, {dy}], \
                     got [{mx}, {my}]"
                ));
            }
        }
        self.material_params().validate()?;
        if !(self.energy.det_penalty.is_finite() && self.energy.det_penalty >= 0.0) {
            return rule(format!(
                "energy.det_penalty must be nonnegative and finite, got {}",
                self.energy.det_penalty
            ));
        }
        if let VelocitySpec::StreamFunction { amplitude, mode } = &self.initial.velocity {
            if !amplitude.is_finite() {
                return rule(format!(
                    "initial.velocity amplitude must be finite, got {amplitude}"
                ));
            }
            for (axis, (m, n)) in [("x", (mode[0], nx)), ("y", (mode[1], ny))] {
                if m == 0 || m >= n {
                    return rule(format!(
                        "initial.velocity mode along {axis} must lie in 1..{n}, got {m}"
                    ));
                }
            }
        }
        if !(self.time.dt.is_finite() && self.time.dt > 0.0) {
            return rule(format!(
                "time.dt must be positive and finite, got {}",
                self.time.dt
            ));
        }
        if !(self.time.t_end.is_finite() && self.time.t_end >= 0.0) {
            return rule(format!(
                "time.t_end must be nonnegative and finite, got {}",
                self.time.t_end
            ));
        }
        if self.output.sample_stride == 0 {
            return rule("output.sample_stride must be at least 1, got 0".into());
        }
        if let Some(exp) = &self.experiment {
            if exp.values.is_empty() {
                return rule("experiment.values must not be empty".into());
            }
            for &v in &exp.values {
                let ok = match exp.sweep {
                    SweepKindSpec::ViscousBulk | SweepKindSpec::ElasticBulk => {
                        v.is_finite() && v > 0.0
                    }
                    SweepKindSpec::Epsilon => v.is_finite() && v >= 0.0,
                };
                if !ok {
                    return rule(format!(
                        "experiment.values entry {v} is out of range for {:?}",
                        exp.sweep
                    ));
                }
            }
        }
        Ok(())
    }

    /// Build the solver-side scenario. Loads (body force, traction) stay
    /// library-level closures; every configured run is unloaded.
    pub fn to_scenario(&self) -> Result<Scenario, ConfigError> {
        self.validate()?;
        let params = self.material_params();
        let kind = match self.energy.kind {
            EnergyKindSpec::Regularized => StoredEnergyKind::RegularizedSvk,
            EnergyKindSpec::Svk => StoredEnergyKind::Svk,
        };
        let energy =
            StoredEnergy::new(kind, &params).with_det_penalty(self.energy.det_penalty);
        let initial_velocity = match &self.initial.velocity {
            VelocitySpec::Rest => InitialVelocity::Rest,
            VelocitySpec::StreamFunction { amplitude, mode } => {
                InitialVelocity::StreamFunctionMode {
                    amplitude: *amplitude,
                    mode: (mode[0], mode[1]),
                }
            }
        };
        Ok(Scenario {
            domain: Domain::new(self.domain.lx, self.domain.ly)
                .map_err(|e| ConfigError::Rule(e.to_string()))?,
            modes: (self.resolution.modes[0], self.resolution.modes[1]),
            grid: self.resolution.grid.map(|[mx, my]| (mx, my)),
            params,
            energy,
            initial_velocity,
            initial_deformation: InitialDeformation::Identity,
            body_force: None,
            traction: Vec::new(),
            t_end: self.time.t_end,
            dt: self.time.dt,
            evolve_velocity: self.time.evolve_velocity,
            evolve_deformation: self.time.evolve_deformation,
            track_return_map: self.output.track_return_map,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn defaults_describe_the_reference_scenario() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let s = cfg.to_scenario().unwrap();
        assert_eq!(s.modes, (24, 24));
        assert_eq!(s.t_end, 1.0);
        assert_eq!(s.params, MaterialParams::reference());
        assert!(matches!(
            s.initial_velocity,
            InitialVelocity::StreamFunctionMode {
                amplitude,
                mode: (1, 1),
            } if amplitude == 1.0
        ));
    }

    #[test]
    fn serialization_round_trips_exactly() {
        let mut cfg = RunConfig::default();
        cfg.name = "round-trip".into();
        cfg.material.eta = 0.3;
        cfg.material.epsilon = 1.25e-3;
        cfg.resolution.grid = Some([40, 44]);
        cfg.initial.velocity = VelocitySpec::StreamFunction {
            amplitude: 0.7531,
            mode: [2, 3],
        };
        cfg.experiment = Some(ExperimentSection {
            sweep: SweepKindSpec::ViscousBulk,
            values: vec![1e2, 1e3, 1e4],
        });
        let text = cfg.to_toml();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml(), text);
    }

    #[test]
    fn a_minimal_file_inherits_every_default() {
        let cfg: RunConfig = toml::from_str("[material]\neta = 0.2\n").unwrap();
        assert_eq!(cfg.material.eta, 0.2);
        assert_eq!(cfg.material.nu, 1e-3);
        assert_eq!(cfg.resolution.modes, [24, 24]);
        assert_eq!(cfg.time.dt, 4e-3);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>("[material]\netaa = 0.2\n").unwrap_err();
        assert!(err.to_string().contains("etaa"), "{err}");
        let err = toml::from_str::<RunConfig>("turbo = true\n").unwrap_err();
        assert!(err.to_string().contains("turbo"), "{err}");
    }

    #[test]
    fn violations_name_their_rule() {
        let mut cfg = RunConfig::default();
        cfg.material.p = 2.0;
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("p"), "{msg}");
        assert!(msg.contains('2'), "{msg}");

        let mut cfg = RunConfig::default();
        cfg.time.dt = 0.0;
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("time.dt"), "{msg}");

        let mut cfg = RunConfig::default();
        cfg.initial.velocity = VelocitySpec::StreamFunction {
            amplitude: 1.0,
            mode: [24, 1],
        };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("mode"), "{msg}");

        let mut cfg = RunConfig::default();
        cfg.resolution.grid = Some([10, 40]);
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("3/2"), "{msg}");
    }

    /// Parsing arbitrary key soups and validating arbitrary numbers must
    /// produce errors, never panics.
    #[test]
    fn fuzzed_documents_never_panic() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
        let keys = [
            "name", "domain", "resolution", "material", "energy", "initial", "time",
            "output", "experiment", "lx", "ly", "modes", "grid", "rho", "d_lambda",
            "d_mu", "nu", "p", "bulk", "shear", "eta", "epsilon", "kind",
            "det_penalty", "velocity", "deformation", "t_end", "dt", "sample_stride",
            "snapshot_stride", "track_return_map", "sweep", "values", "bogus",
        ];
        for _ in 0..300 {
            let mut doc = String::new();
            if rng.gen_bool(0.5) {
                doc.push_str(&format!("[{}]\n", keys[rng.gen_range(0..keys.len())]));
            }
            for _ in 0..rng.gen_range(0..6) {
                let k = keys[rng.gen_range(0..keys.len())];
                match rng.gen_range(0..4) {
                    0 => doc.push_str(&format!("{k} = {}\n", rng.gen_range(-1e6..1e6))),
                    1 => doc.push_str(&format!("{k} = \"{k}\"\n")),
                    2 => doc.push_str(&format!("{k} = [{}, {}]\n", rng.gen::<u8>(), rng.gen::<u8>())),
                    _ => doc.push_str(&format!("{k} = true\n")),
                }
            }
            if let Ok(cfg) = toml::from_str::<RunConfig>(&doc) {
                let _ = cfg.validate();
                let _ = cfg.to_scenario();
            }
        }
        let mut cfg = RunConfig::default();
        for _ in 0..300 {
            cfg.material.p = rng.gen_range(-10.0..10.0);
            cfg.material.nu = rng.gen_range(-1.0..1.0);
            cfg.time.dt = rng.gen_range(-1.0..1.0);
            cfg.domain.lx = f64::NAN;
            assert!(cfg.validate().is_err());
            cfg.domain.lx = 1.0;
            let _ = cfg.validate();
        }
    }
}
