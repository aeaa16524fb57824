//! JSON run configuration.
//!
//! Every section is optional and falls back to the defaults of the
//! corresponding module; unknown keys are rejected so that typos surface as
//! configuration errors instead of silently ignored settings.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cycle::CycleConfig;
use crate::error::{Error, Result};
use crate::malkin::MalkinConfig;
use crate::ode::IntegratorConfig;
use crate::scaling::{AuditThresholds, ContinuationOptions};
use crate::validator::ValidatorConfig;
use crate::vectorfield::{hopf_normal, HarmonicForcing, ProblemRegistry, VectorFieldPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Cycle,
    Malkin,
    Scaling,
    Validate,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Cycle, Stage::Malkin, Stage::Scaling, Stage::Validate];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Cycle => "cycle",
            Stage::Malkin => "malkin",
            Stage::Scaling => "scaling",
            Stage::Validate => "validate",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("stages: unknown stage `{s}` (expected cycle, malkin, scaling or validate)")))
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A registered problem by name, or a forced normal form given inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProblemSpec {
    Name(String),
    Inline(InlineProblem),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineProblem {
    /// Only `hopf-normal` is available inline; other right-hand sides must be
    /// registered in code.
    pub family: String,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub forcing: HarmonicForcing,
}

impl ProblemSpec {
    pub fn build(&self, registry: &ProblemRegistry) -> Result<VectorFieldPair> {
        match self {
            ProblemSpec::Name(n) => registry.get(n),
            ProblemSpec::Inline(p) => match p.family.as_str() {
                "hopf-normal" => hopf_normal(p.name.as_deref().unwrap_or("hopf-normal-inline"), p.forcing.clone()),
                other => Err(Error::Config(format!(
                    "problem.family: unknown family `{other}` (inline problems support `hopf-normal`)"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LongRunConfig {
    pub enabled: bool,
    pub periods: usize,
    pub perturbation: f64,
    /// Ladder entry used for the simulation.
    pub eps: f64,
}

impl Default for LongRunConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            periods: 50,
            perturbation: 1e-3,
            eps: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub guess: Vec<f64>,
    pub integrator: IntegratorConfig,
    pub cycle: CycleConfig,
    pub theta_grid: usize,
    pub malkin: MalkinConfig,
    pub audit: AuditThresholds,
    pub continuation: ContinuationOptions,
    pub validator: ValidatorConfig,
    pub long_run: LongRunConfig,
    /// Strictly decreasing, in `(0, 1]`.
    pub eps_ladder: Vec<f64>,
    pub outputs: PathBuf,
    pub stages: Vec<Stage>,
    pub seed: u64,
    /// Treat accuracy warnings as failures.
    pub strict: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: ProblemSpec::Name("hopf-normal-cosforce".into()),
            guess: vec![1.0, 0.0],
            integrator: IntegratorConfig::with_tolerance(1e-12),
            cycle: CycleConfig::default(),
            theta_grid: 128,
            malkin: MalkinConfig::default(),
            audit: AuditThresholds::default(),
            continuation: ContinuationOptions::default(),
            validator: ValidatorConfig::default(),
            long_run: LongRunConfig::default(),
            eps_ladder: vec![1e-1, 3e-2, 1e-2, 3e-3, 1e-3],
            outputs: PathBuf::from("out"),
            stages: Stage::ALL.to_vec(),
            seed: 0,
            strict: false,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
            Error::Config(format!("line {}, column {}: {e}", e.line(), e.column()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Malkin settings with the grid taken from `theta_grid`.
    pub fn malkin_config(&self) -> MalkinConfig {
        MalkinConfig {
            grid: self.theta_grid,
            ..self.malkin
        }
    }

    pub fn wants(&self, stage: Stage) -> bool {
        self.stages.contains(&stage)
    }

    /// The last requested stage; earlier ones run implicitly.
    pub fn deepest_stage(&self) -> Option<Stage> {
        self.stages.iter().copied().max()
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        if self.eps_ladder.is_empty() {
            return cfg_err("eps_ladder must not be empty".into());
        }
        for (i, e) in self.eps_ladder.iter().enumerate() {
            if !(*e > 0.0 && *e <= 1.0) {
                return cfg_err(format!("eps_ladder[{i}] = {e} must lie in (0, 1]"));
            }
        }
        if self.eps_ladder.windows(2).any(|w| w[1] >= w[0]) {
            return cfg_err("eps_ladder must be strictly decreasing".into());
        }
        if self.stages.is_empty() {
            return cfg_err("stages must name at least one stage".into());
        }
        if self.stages.windows(2).any(|w| w[1] <= w[0]) {
            return cfg_err("stages must be listed once each, in the order cycle, malkin, scaling, validate".into());
        }
        if self.theta_grid < 4 {
            return cfg_err(format!("theta_grid = {} must be at least 4", self.theta_grid));
        }
        if self.guess.iter().any(|g| !g.is_finite()) {
            return cfg_err("guess must be finite".into());
        }
        self.integrator
            .validate()
            .map_err(|e| Error::Config(format!("integrator: {e}")))?;
        self.malkin_config()
            .validate()
            .map_err(|e| Error::Config(format!("malkin: {e}")))?;
        let lr = &self.long_run;
        if lr.enabled && !(lr.eps > 0.0 && lr.perturbation > 0.0 && lr.periods > 0) {
            return cfg_err("long_run needs positive eps, perturbation and periods".into());
        }
        Ok(())
    }

    /// Builds the problem and checks the guess against its dimension.
    pub fn build_problem(&self, registry: &ProblemRegistry) -> Result<VectorFieldPair> {
        let vf = self.problem.build(registry)?;
        if self.guess.len() != vf.dim() {
            return Err(Error::Config(format!(
                "guess has {} entries but problem `{}` has dimension {}",
                self.guess.len(),
                vf.name(),
                vf.dim()
            )));
        }
        Ok(vf)
    }

    /// Every numeric setting that influences results, flattened for the
    /// manifest.
    pub fn tolerance_signature(&self) -> String {
        let c = &self.continuation;
        let v = &self.validator;
        format!(
            "{};cycle:{:e}/{};grid:{};zero:{:e};psi:{:e}/{:e};fixed:{:e}",
            self.integrator.signature(),
            self.cycle.tolerance,
            self.cycle.samples,
            self.theta_grid,
            self.malkin.zero_tolerance,
            c.newton.tolerance,
            c.phi_noise,
            v.fixed_point.tolerance
        )
    }
}
