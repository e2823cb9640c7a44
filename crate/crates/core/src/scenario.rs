//! File-driven scenario: plant, horizon, certificates, references, cost,
//! solver and simulation settings, and benchmark variants.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::contraction::{
    synthesize, ContractionCertificate, Degree, DegreeChoice, SynthesisProblem,
};
use crate::error::{Error, Result};
use crate::model::{BoxBounds, CoupledTank, PolynomialModel, ReferencePlan, State, SystemModel, TankParameters};
use crate::mpc::{build_schedule, MpcProblem, SolverOptions, StageCost, TimescaleSchedule};
use crate::par::Execution;
use crate::sim::{InfeasiblePolicy, SimOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantConfig {
    Tank {
        #[serde(default)]
        params: Option<TankParameters>,
    },
    Polynomial {
        model_file: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub tau_delta: f64,
    pub segments: Vec<(f64, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateConfig {
    pub tau: f64,
    pub beta: f64,
    /// Read from (and written to by `synthesize`) this file; synthesized
    /// in memory when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    /// 0 or 2; both are tried in order when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<u32>,
    /// Certified sub-box of the state box; the whole box when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<Vec<[f64; 2]>>,
    #[serde(default = "default_state_points")]
    pub state_points: usize,
    #[serde(default = "default_input_points")]
    pub input_points: usize,
    #[serde(default = "default_eta")]
    pub eta: f64,
}

fn default_state_points() -> usize {
    21
}

fn default_input_points() -> usize {
    5
}

fn default_eta() -> f64 {
    1e-4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    pub start: f64,
    pub end: f64,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub horizon: f64,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub on_infeasible: InfeasiblePolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantConfig {
    pub label: String,
    pub segments: Vec<(f64, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    /// Shorter horizon for timing runs; the simulation horizon when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    pub variants: Vec<VariantConfig>,
}

fn default_repetitions() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub plant: PlantConfig,
    pub schedule: ScheduleConfig,
    pub certificates: Vec<CertificateConfig>,
    pub reference: Vec<ReferenceConfig>,
    #[serde(default = "default_cost")]
    pub cost: StageCost,
    #[serde(default)]
    pub solver: SolverOptions,
    pub simulation: SimulationConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bench: Option<BenchConfig>,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_cost() -> StageCost {
    StageCost::InputEnergy
}

fn same_tau(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(1.0)
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Every timescale used by the main schedule or a benchmark variant.
    pub fn required_taus(&self) -> Vec<f64> {
        let mut taus: Vec<f64> = Vec::new();
        let lists = std::iter::once(&self.schedule.segments).chain(
            self.bench
                .iter()
                .flat_map(|b| b.variants.iter().map(|v| &v.segments)),
        );
        for segs in lists {
            for (tau, _) in segs {
                if !taus.iter().any(|t| same_tau(*t, *tau)) {
                    taus.push(*tau);
                }
            }
        }
        taus
    }

    pub fn validate(&self) -> Result<()> {
        build_schedule(self.schedule.tau_delta, &self.schedule.segments)?;
        for c in &self.certificates {
            if !(c.beta > 0.0 && c.beta <= 1.0) {
                return Err(Error::Config(format!(
                    "certificate for tau {}: beta must lie in (0, 1], got {}",
                    c.tau, c.beta
                )));
            }
            if !(c.tau > 0.0) {
                return Err(Error::Config(format!("certificate tau must be positive, got {}", c.tau)));
            }
            if let Some(d) = c.degree {
                Degree::from_u32(d).map_err(|e| Error::Config(e.to_string()))?;
            }
            if c.state_points == 0 || c.input_points == 0 || !(c.eta > 0.0) {
                return Err(Error::Config(format!(
                    "certificate for tau {}: grid sizes and eta must be positive",
                    c.tau
                )));
            }
        }
        for tau in self.required_taus() {
            let count = self.certificates.iter().filter(|c| same_tau(c.tau, tau)).count();
            if count != 1 {
                return Err(Error::Config(format!(
                    "expected exactly one certificate for tau {tau}, found {count}"
                )));
            }
        }
        if self.reference.is_empty() {
            return Err(Error::Config("reference plan is empty".into()));
        }
        if !(self.simulation.horizon >= 0.0) {
            return Err(Error::Config("simulation horizon must be non-negative".into()));
        }
        if let Some(b) = &self.bench {
            if b.variants.len() < 2 {
                return Err(Error::Config(format!(
                    "benchmark needs at least two variants, got {}",
                    b.variants.len()
                )));
            }
            if b.repetitions < 1 {
                return Err(Error::Config("benchmark needs at least one repetition".into()));
            }
            for v in &b.variants {
                build_schedule(self.schedule.tau_delta, &v.segments)?;
            }
        }
        if let Some(p) = self.solver_check() {
            return Err(Error::Config(p));
        }
        Ok(())
    }

    fn solver_check(&self) -> Option<String> {
        let s = &self.solver;
        if !(s.feasibility_tol > 0.0)
            || !(s.penalty_init > 0.0)
            || !(s.penalty_growth >= 1.0)
            || s.outer_rounds == 0
            || s.inner_iters == 0
            || !(s.fd_step > 0.0)
            || s.geodesic_segments == 0
        {
            return Some("solver options must be positive (penalty growth >= 1)".into());
        }
        None
    }

    pub fn plant(&self) -> Result<Arc<dyn SystemModel>> {
        Ok(match &self.plant {
            PlantConfig::Tank { params } => match params {
                Some(p) => Arc::new(CoupledTank::new(*p)?),
                None => Arc::new(CoupledTank::default()),
            },
            PlantConfig::Polynomial { model_file } => {
                Arc::new(PolynomialModel::from_file(&self.resolve(model_file))?)
            }
        })
    }

    pub fn schedule(&self) -> Result<TimescaleSchedule> {
        build_schedule(self.schedule.tau_delta, &self.schedule.segments)
    }

    pub fn plan(&self, plant: &dyn SystemModel) -> Result<ReferencePlan> {
        let targets: Vec<(f64, f64, State)> = self
            .reference
            .iter()
            .map(|r| (r.start, r.end, State::from_vec(r.target.clone())))
            .collect();
        if targets.iter().any(|t| t.2.len() != plant.state_dim()) {
            return Err(Error::Config("reference target dimension does not match the plant".into()));
        }
        ReferencePlan::new(plant, self.schedule.tau_delta, &targets)
    }

    pub fn synthesis_problem<'a>(
        &self,
        spec: &CertificateConfig,
        plant: &'a dyn SystemModel,
        execution: Execution,
    ) -> Result<SynthesisProblem<'a>> {
        let mut p = SynthesisProblem::new(plant, spec.tau, spec.beta)
            .with_seed(self.seed)
            .with_execution(execution);
        if let Some(r) = &spec.region {
            p = p.with_region(BoxBounds::from_intervals(r)?);
        }
        if let Some(d) = spec.degree {
            p = p.with_degree(DegreeChoice::Fixed(Degree::from_u32(d)?));
        }
        p.state_points = spec.state_points;
        p.input_points = spec.input_points;
        p.eta = spec.eta;
        Ok(p)
    }

    /// Reads certificate files, synthesizing those without a file entry.
    pub fn certificates(
        &self,
        plant: &dyn SystemModel,
        execution: Execution,
    ) -> Result<Vec<Arc<ContractionCertificate>>> {
        let mut out = Vec::with_capacity(self.certificates.len());
        for spec in &self.certificates {
            let cert = match &spec.file {
                Some(file) => {
                    let path = self.resolve(file);
                    if !path.exists() {
                        return Err(Error::Config(format!(
                            "certificate file {} does not exist (run `synthesize` first)",
                            path.display()
                        )));
                    }
                    let cert = ContractionCertificate::load(&path)?;
                    self.check_certificate(spec, &cert, plant)?;
                    cert
                }
                None => synthesize(&self.synthesis_problem(spec, plant, execution)?)?,
            };
            out.push(Arc::new(cert));
        }
        Ok(out)
    }

    pub fn check_certificate(
        &self,
        spec: &CertificateConfig,
        cert: &ContractionCertificate,
        plant: &dyn SystemModel,
    ) -> Result<()> {
        if !same_tau(cert.tau(), spec.tau) {
            return Err(Error::Config(format!(
                "certificate file is for tau {} but the entry says {}",
                cert.tau(),
                spec.tau
            )));
        }
        if cert.state_dim() != plant.state_dim() || cert.input_dim() != plant.input_dim() {
            return Err(Error::Config("certificate dimensions do not match the plant".into()));
        }
        Ok(())
    }

    pub fn problem_for(
        &self,
        segments: &[(f64, usize)],
        plant: Arc<dyn SystemModel>,
        certificates: &[Arc<ContractionCertificate>],
    ) -> Result<MpcProblem> {
        let plan = self.plan(plant.as_ref())?;
        MpcProblem::with_shared_model(
            build_schedule(self.schedule.tau_delta, segments)?,
            plant,
            certificates,
            plan,
            self.cost,
            self.solver.clone(),
        )
    }

    pub fn problem(
        &self,
        plant: Arc<dyn SystemModel>,
        certificates: &[Arc<ContractionCertificate>],
    ) -> Result<MpcProblem> {
        self.problem_for(&self.schedule.segments, plant, certificates)
    }

    pub fn sim_options(&self) -> SimOptions {
        SimOptions {
            horizon: self.simulation.horizon,
            x0: State::from_vec(self.simulation.x0.clone()),
            on_infeasible: self.simulation.on_infeasible,
            audit: false,
        }
    }

    pub fn bench_variants(
        &self,
        plant: Arc<dyn SystemModel>,
        certificates: &[Arc<ContractionCertificate>],
    ) -> Result<Vec<(String, MpcProblem)>> {
        let Some(b) = &self.bench else {
            return Err(Error::Config("no [bench] section".into()));
        };
        b.variants
            .iter()
            .map(|v| {
                Ok((
                    v.label.clone(),
                    self.problem_for(&v.segments, Arc::clone(&plant), certificates)?,
                ))
            })
            .collect()
    }

    /// Certificate output path for an entry: its `file`, or
    /// `<out>/cert_tau<τ>.toml`.
    pub fn certificate_path(&self, spec: &CertificateConfig, out: &Path) -> PathBuf {
        match &spec.file {
            Some(f) => self.resolve(f),
            None => out.join(format!("cert_tau{}.toml", spec.tau)),
        }
    }

    /// Named summary of the scenario.
    pub fn describe(&self) -> BTreeMap<&'static str, String> {
        let mut m = BTreeMap::new();
        m.insert("plant", match &self.plant {
            PlantConfig::Tank { .. } => "tank".to_string(),
            PlantConfig::Polynomial { model_file } => model_file.display().to_string(),
        });
        m.insert("segments", format!("{:?}", self.schedule.segments));
        m.insert("horizon", self.simulation.horizon.to_string());
        m
    }
}
