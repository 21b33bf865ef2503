//! TOML scenario files: everything a command needs, in one place.
//!
//! Relative paths inside a scenario resolve against the file's directory.
//! See `scenarios/` for annotated examples of both systems.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::conic::SolverSettings;
use crate::controller::{run_mission, InjectionError, MissionConfig, MissionLog, MissionSetup, TruthModel};
use crate::dynamics::Mat6;
use crate::error::{Error, Result};
use crate::halo::{build_reference_orbit, load_initial_guess, CorrectedOrbit, ReferenceOrbit};
use crate::integrator::Tolerances;
use crate::linearize::{discrete_jacobians, LinearizedModel};
use crate::riccati::{ellipsoid_shape, periodic_riccati, CostToGo, CostWeights};
use crate::safety::SafetyConfig;
use crate::stationkeeping::{ConstraintConfig, ConstraintVariant};
use crate::system::SystemParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub system: SystemSpec,
    pub orbit: OrbitSpec,
    pub constraints: ConstraintConfig,
    #[serde(default)]
    pub weights: WeightSpec,
    pub mission: MissionSpec,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub safety: Option<SafetyConfig>,
    #[serde(default)]
    pub manifolds: ManifoldSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
}

/// Either a named preset or a full set of constants. Explicit fields
/// override the preset's.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub preset: Option<String>,
    pub name: Option<String>,
    pub mu: Option<f64>,
    pub length_unit_km: Option<f64>,
    pub time_unit_days: Option<f64>,
    pub primary_radius_km: Option<f64>,
    pub secondary_radius_km: Option<f64>,
}

impl SystemSpec {
    pub fn resolve(&self) -> Result<SystemParams> {
        let base = match &self.preset {
            Some(name) => Some(
                SystemParams::preset(name)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown system preset {name:?}")))?,
            ),
            None => None,
        };
        let need = |field: Option<f64>, fallback: Option<f64>, what: &str| {
            field.or(fallback).ok_or_else(|| Error::InvalidArgument(format!("system block needs {what} or a preset")))
        };
        let params = SystemParams {
            name: self
                .name
                .clone()
                .or_else(|| base.as_ref().map(|b| b.name.clone()))
                .unwrap_or_else(|| "custom".into()),
            mu: need(self.mu, base.as_ref().map(|b| b.mu), "mu")?,
            length_unit_km: need(self.length_unit_km, base.as_ref().map(|b| b.length_unit_km), "length_unit_km")?,
            time_unit_days: need(self.time_unit_days, base.as_ref().map(|b| b.time_unit_days), "time_unit_days")?,
            primary_radius_km: self.primary_radius_km.or(base.as_ref().map(|b| b.primary_radius_km)).unwrap_or(0.0),
            secondary_radius_km: self
                .secondary_radius_km
                .or(base.as_ref().map(|b| b.secondary_radius_km))
                .unwrap_or(0.0),
        };
        params.validate()?;
        Ok(params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitSpec {
    pub initial_guess: PathBuf,
    /// Overrides the knot count in the guess file.
    #[serde(default)]
    pub knots: Option<usize>,
    #[serde(default = "default_corrector_tol")]
    pub corrector_tol: f64,
}

fn default_corrector_tol() -> f64 {
    1e-10
}

/// LQR weights behind the ellipsoid constraint, as multiples of identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightSpec {
    pub q: f64,
    pub r: f64,
    pub tol: f64,
    pub max_periods: usize,
}

impl Default for WeightSpec {
    fn default() -> Self {
        Self {
            q: 1e-3,
            r: 1e3,
            tol: 1e-8,
            max_periods: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissionSpec {
    pub revolutions: usize,
    #[serde(default)]
    pub truth: TruthModel,
    #[serde(default)]
    pub injection: InjectionError,
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub stride: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManifoldSpec {
    /// Seed offset along the unit manifold direction, LU.
    pub epsilon: f64,
    /// Propagation time in orbit periods.
    pub tau_periods: f64,
    /// Seed every `stride`-th knot.
    pub stride: usize,
}

impl Default for ManifoldSpec {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            tau_periods: 3.0,
            stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    /// Default output directory when `--out` is not given.
    pub dir: Option<PathBuf>,
}

/// Values of one constraint parameter to fly side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// One of `a`, `r_q`, `r_v`, `c`, `free_steps`, `half_space` (0 or 1).
    pub parameter: String,
    pub values: Vec<f64>,
}

impl Scenario {
    pub fn parse(text: &str, origin: &Path) -> Result<Scenario> {
        let mut s: Scenario = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            reason: e.to_string(),
        })?;
        // Absolute paths keep the resolved copy written next to the outputs
        // usable from anywhere.
        let base = origin.parent().unwrap_or(Path::new("."));
        let resolve = |p: &Path| {
            let joined = base.join(p);
            std::path::absolute(&joined).unwrap_or(joined)
        };
        s.orbit.initial_guess = resolve(&s.orbit.initial_guess);
        s.output.dir = s.output.dir.as_deref().map(resolve);
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.system.resolve()?;
        self.constraints.validate()?;
        if self.mission.revolutions == 0 {
            return Err(Error::InvalidArgument("mission.revolutions must be at least 1".into()));
        }
        if matches!(self.orbit.knots, Some(n) if n < 3) {
            return Err(Error::InvalidArgument("orbit.knots must be at least 3".into()));
        }
        if !(self.orbit.corrector_tol > 0.0) {
            return Err(Error::InvalidArgument("orbit.corrector_tol must be positive".into()));
        }
        if !(self.solver.tol > 0.0) || self.solver.max_iter == 0 {
            return Err(Error::InvalidArgument("solver needs a positive tolerance and iteration limit".into()));
        }
        if let Some(s) = &self.safety {
            s.validate()?;
        }
        let m = &self.manifolds;
        if !(m.epsilon >= 0.0) || !(m.tau_periods > 0.0) || m.stride == 0 {
            return Err(Error::InvalidArgument("manifolds need epsilon ≥ 0, tau_periods > 0, stride ≥ 1".into()));
        }
        if let Some(sw) = &self.sweep {
            if sw.values.is_empty() {
                return Err(Error::InvalidArgument("sweep.values is empty".into()));
            }
            for &v in &sw.values {
                self.with_parameter(&sw.parameter, v)?;
            }
        }
        Ok(())
    }

    /// Copy with one constraint parameter replaced.
    pub fn with_parameter(&self, name: &str, value: f64) -> Result<Scenario> {
        let mut s = self.clone();
        let c = &mut s.constraints;
        match name {
            "a" => c.a = value,
            "r_q" => c.r_q = value,
            "r_v" => c.r_v = value,
            "c" => c.c = value,
            "free_steps" if value >= 0.0 && value.fract() == 0.0 => c.free_steps = value as usize,
            "half_space" if value == 0.0 || value == 1.0 => c.half_space = value == 1.0,
            _ => return Err(Error::InvalidArgument(format!("cannot sweep {name} = {value}"))),
        }
        c.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).unwrap_or_else(|e| format!("# could not serialise scenario: {e}\n"))
    }

    pub fn mission_config(&self) -> MissionConfig {
        MissionConfig {
            truth: self.mission.truth,
            revolutions: self.mission.revolutions,
            injection: self.mission.injection,
            constraints: self.constraints.clone(),
            solver: self.solver,
            horizon: self.mission.horizon,
            stride: self.mission.stride,
        }
    }

    /// Builds the reference orbit only.
    pub fn build_orbit(&self) -> Result<(SystemParams, CorrectedOrbit, ReferenceOrbit)> {
        let params = self.system.resolve()?;
        let mut guess = load_initial_guess(&self.orbit.initial_guess)?;
        if let Some(n) = self.orbit.knots {
            guess.knots = n;
        }
        let (corrected, orbit) = build_reference_orbit(&guess, &params, self.orbit.corrector_tol, Tolerances::default())?;
        Ok((params, corrected, orbit))
    }

    /// Orbit, linearisation and (for the ellipsoid) cost-to-go.
    pub fn prepare(&self) -> Result<Prepared> {
        let (params, corrected, orbit) = self.build_orbit()?;
        let model = discrete_jacobians(&orbit)?;
        let (cost_to_go, shape) = match self.constraints.variant {
            ConstraintVariant::Ellipsoid => {
                let w = CostWeights::isotropic(self.weights.q, self.weights.r);
                let ctg = periodic_riccati(&model, &w, self.weights.tol, self.weights.max_periods)?;
                let shape = ellipsoid_shape(&ctg)?;
                (Some(ctg), Some(shape))
            }
            ConstraintVariant::EuclideanBall => (None, None),
        };
        Ok(Prepared {
            params,
            corrected,
            orbit,
            model,
            cost_to_go,
            shape,
        })
    }
}

/// Precomputed, mission-independent data for one scenario.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub params: SystemParams,
    pub corrected: CorrectedOrbit,
    pub orbit: ReferenceOrbit,
    pub model: LinearizedModel,
    pub cost_to_go: Option<CostToGo>,
    pub shape: Option<Vec<Mat6>>,
}

impl Prepared {
    pub fn setup(&self) -> MissionSetup<'_> {
        MissionSetup {
            orbit: &self.orbit,
            model: &self.model,
            shape: self.shape.as_deref(),
        }
    }

    pub fn run(&self, cfg: &MissionConfig) -> Result<MissionLog> {
        run_mission(self.setup(), cfg)
    }
}
