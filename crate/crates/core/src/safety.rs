//! Contingency check: where does the spacecraft go if the thrusters die?

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::MissionLog;
use crate::dynamics::State;
use crate::error::{Error, Result};
use crate::halo::{first_sphere_exit, ReferenceOrbit};
use crate::integrator::Tolerances;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    EscapeIntended,
    EscapeOpposite,
    ImpactSecondary,
    Bounded,
}

impl Verdict {
    pub fn label(self) -> &'static str {
        match self {
            Verdict::EscapeIntended => "escape-intended",
            Verdict::EscapeOpposite => "escape-opposite",
            Verdict::ImpactSecondary => "impact-secondary",
            Verdict::Bounded => "bounded",
        }
    }
}

/// Side of the libration point, along x, that counts as a safe exit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SafeSide {
    #[default]
    PositiveX,
    NegativeX,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitClassification {
    pub verdict: Verdict,
    /// Time of the sphere crossing (or of the impact, or the horizon).
    pub time: f64,
    pub closest_secondary: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyConfig {
    #[serde(default = "default_horizon")]
    pub horizon_periods: f64,
    /// Sphere radius about the libration point; defaults to five times the
    /// orbit's largest distance from it.
    #[serde(default)]
    pub boundary_radius: Option<f64>,
    #[serde(default)]
    pub safe_side: SafeSide,
    /// Inclusive revolution window (1-based) for the success rate.
    pub window: (usize, usize),
    /// Classify every `sample_stride`-th logged step.
    #[serde(default = "default_stride")]
    pub sample_stride: usize,
    /// Secondary impact radius in LU; defaults to the body radius.
    #[serde(default)]
    pub impact_radius: Option<f64>,
}

fn default_horizon() -> f64 {
    3.0
}

fn default_stride() -> usize {
    1
}

impl SafetyConfig {
    pub fn with_window(first: usize, last: usize) -> Self {
        Self {
            horizon_periods: default_horizon(),
            boundary_radius: None,
            safe_side: SafeSide::PositiveX,
            window: (first, last),
            sample_stride: 1,
            impact_radius: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon_periods > 0.0) || self.sample_stride == 0 || self.window.0 > self.window.1 {
            return Err(Error::InvalidArgument(
                "safety check needs a positive horizon, a stride of at least one and an ordered window".into(),
            ));
        }
        if matches!(self.boundary_radius, Some(r) if !(r > 0.0)) || matches!(self.impact_radius, Some(r) if !(r >= 0.0)) {
            return Err(Error::InvalidArgument("radii must be positive".into()));
        }
        Ok(())
    }
}

/// Propagates `x` without control and reports how it leaves the halo region.
/// The side of an escape is read where the trajectory first leaves the
/// boundary sphere shrunk to exclude the secondary, so a branch that loops
/// around the secondary before escaping still counts as the opposite one.
/// A propagation failure is treated as an impact.
pub fn classify_exit(
    x: &State,
    orbit: &ReferenceOrbit,
    horizon_periods: f64,
    boundary_radius: f64,
    safe_side: SafeSide,
    impact_radius: f64,
) -> ExitClassification {
    let t_max = horizon_periods * orbit.period;
    let mut params = orbit.params.clone();
    params.secondary_radius_km = impact_radius * params.length_unit_km;
    match first_sphere_exit(x, &params, &orbit.libration_point, boundary_radius, t_max, Tolerances::new(1e-10, 1e-12).expect("valid tolerances")) {
        Err(e) => ExitClassification {
            verdict: Verdict::ImpactSecondary,
            time: match e {
                Error::Propagation { time, .. } => time,
                _ => 0.0,
            },
            closest_secondary: 0.0,
        },
        Ok((_, closest)) if closest < impact_radius => ExitClassification {
            verdict: Verdict::ImpactSecondary,
            time: t_max,
            closest_secondary: closest,
        },
        Ok((None, closest)) => ExitClassification {
            verdict: Verdict::Bounded,
            time: t_max,
            closest_secondary: closest,
        },
        Ok((Some(exit), closest)) => {
            let right = exit.departs_positive_x(&orbit.libration_point);
            let intended = right == (safe_side == SafeSide::PositiveX);
            ExitClassification {
                verdict: if intended { Verdict::EscapeIntended } else { Verdict::EscapeOpposite },
                time: exit.time,
                closest_secondary: closest,
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepClassification {
    pub step: usize,
    pub revolution: usize,
    pub half_space: f64,
    pub exit: ExitClassification,
}

#[derive(Debug, Clone)]
pub struct SafetyReport {
    pub config: SafetyConfig,
    pub boundary_radius: f64,
    pub classifications: Vec<StepClassification>,
    /// Fraction of classified steps inside the window that escape as intended.
    pub success_rate: f64,
    pub window_samples: usize,
}

impl SafetyReport {
    pub fn count(&self, verdict: Verdict) -> usize {
        self.in_window().filter(|c| c.exit.verdict == verdict).count()
    }

    pub fn in_window(&self) -> impl Iterator<Item = &StepClassification> {
        let (a, b) = self.config.window;
        self.classifications.iter().filter(move |c| (a..=b).contains(&c.revolution))
    }

    /// Among intended escapes, the fraction whose half-space value Δx·d was
    /// non-negative at departure.
    pub fn margin_consistency(&self) -> f64 {
        let intended: Vec<_> = self.in_window().filter(|c| c.exit.verdict == Verdict::EscapeIntended).collect();
        if intended.is_empty() {
            return 1.0;
        }
        intended.iter().filter(|c| c.half_space >= 0.0).count() as f64 / intended.len() as f64
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e: csv::Error| Error::Io {
            path: path.to_path_buf(),
            source: e.into(),
        };
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(["step", "revolution", "verdict", "exit_time", "closest_secondary", "half_space"])
            .map_err(io)?;
        for c in &self.classifications {
            w.write_record([
                c.step.to_string(),
                c.revolution.to_string(),
                c.exit.verdict.label().to_string(),
                format!("{:?}", c.exit.time),
                format!("{:?}", c.exit.closest_secondary),
                format!("{:?}", c.half_space),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

/// Classifies every sampled step of a mission in parallel.
pub fn verify_mission(log: &MissionLog, orbit: &ReferenceOrbit, cfg: &SafetyConfig) -> Result<SafetyReport> {
    cfg.validate()?;
    let radius = cfg.boundary_radius.unwrap_or(5.0 * orbit.max_amplitude());
    let impact = cfg.impact_radius.unwrap_or(orbit.params.secondary_radius());
    let classifications: Vec<StepClassification> = log
        .steps
        .par_iter()
        .filter(|s| s.step % cfg.sample_stride == 0)
        .map(|s| StepClassification {
            step: s.step,
            revolution: log.revolution_of(s.step),
            half_space: s.half_space,
            exit: classify_exit(&s.state, orbit, cfg.horizon_periods, radius, cfg.safe_side, impact),
        })
        .collect();
    let mut report = SafetyReport {
        config: cfg.clone(),
        boundary_radius: radius,
        classifications,
        success_rate: 0.0,
        window_samples: 0,
    };
    report.window_samples = report.in_window().count();
    report.success_rate = if report.window_samples == 0 {
        0.0
    } else {
        report.count(Verdict::EscapeIntended) as f64 / report.window_samples as f64
    };
    Ok(report)
}
