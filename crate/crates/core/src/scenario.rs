//! Declarative scenarios: TOML configuration, the built-in catalog, batch
//! runs writing trajectories and reports, and trajectory export.
//!
//! A scenario file looks like
//!
//! ```toml
//! name = "example3"
//! protocols = ["pairwise_comparison"]
//! rule = "fitness_difference"
//! closed_form = true
//!
//! [game]
//! kind = "pd"
//! R = 3.0
//! S = 0.0
//! T = 5.0
//! P = 1.0
//!
//! [coupling]
//! lambda = 2.0
//! epsilon = 0.1
//!
//! [integrator]
//! method = "rk45"
//! t_end = 30.0
//!
//! [[initial_conditions]]
//! x = [0.9]
//! n = 0.9
//!
//! [analyses]
//! fixed_points = true
//! jacobians = true
//! phase_grid = 11
//! oscillation = { window = 15.0 }
//! ```

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{ComparisonRule, PopulationState, Protocol, System, VectorField};
use crate::equilibrium::{
    catalog_fixed_points, detect_oscillation, find_fixed_points, jacobian, Catalog, FixedPointReport, JacobianMode,
    OscillationReport, SearchDomain,
};
use crate::error::Error;
use crate::game::{EnvCoupling, GameKind, GameSpec};
use crate::integrator::{integrate, sample_phase_grid, Component, IntegratorConfig, Method, Trajectory};

/// Names accepted by [`builtin`].
pub const BUILTINS: [&str; 5] = ["example1", "example2", "example3", "example4_rd", "example4_pcd"];

/// Seeds per axis for the numerical fixed-point search of a run.
pub const SEARCH_SEEDS: usize = 6;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("parse error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse { line: Option<usize>, message: String },

    #[error("invalid scenario ({context}): {source}")]
    Validation { context: String, source: Error },

    #[error("unknown builtin scenario {0:?}; available: {list}", list = BUILTINS.join(", "))]
    UnknownBuiltin(String),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("integration failed ({context}): {source}")]
    Integration { context: String, source: Error },

    #[error("analysis failed ({context}): {source}")]
    Analysis { context: String, source: Error },

    #[error("trajectory is empty")]
    EmptyTrajectory,
}

impl ScenarioError {
    /// Coarse category for exit codes and messages.
    pub fn category(&self) -> &'static str {
        match self {
            ScenarioError::Parse { .. } | ScenarioError::Validation { .. } | ScenarioError::UnknownBuiltin(_) => {
                "config"
            }
            ScenarioError::Io { .. } => "io",
            ScenarioError::Integration { .. } => "integration",
            ScenarioError::Analysis { .. } | ScenarioError::EmptyTrajectory => "analysis",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ScenarioError + '_ {
    move |source| ScenarioError::Io { path: path.to_path_buf(), source }
}

fn invalid(context: impl Into<String>) -> impl FnOnce(Error) -> ScenarioError {
    let context = context.into();
    move |source| ScenarioError::Validation { context, source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryFormat {
    #[default]
    Csv,
    Jsonl,
}

impl TrajectoryFormat {
    fn extension(self) -> &'static str {
        match self {
            TrajectoryFormat::Csv => "csv",
            TrajectoryFormat::Jsonl => "jsonl",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OscillationSpec {
    /// Length of the trailing window analysed.
    pub window: f64,
    #[serde(default = "default_component")]
    pub component: Component,
}

fn default_component() -> Component {
    Component::Strategy(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Analyses {
    pub fixed_points: bool,
    /// Compare analytic and finite-difference Jacobians at catalog points.
    pub jacobians: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oscillation: Option<OscillationSpec>,
    /// Lattice points per axis of the exported phase grid.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase_grid: Option<usize>,
}

impl Analyses {
    fn any(&self) -> bool {
        self.fixed_points || self.jacobians || self.oscillation.is_some() || self.phase_grid.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Every protocol listed is run on every initial condition.
    pub protocols: Vec<Protocol>,
    #[serde(default)]
    pub rule: ComparisonRule,
    /// Evaluate through the hand-simplified closed form of the system.
    #[serde(default)]
    pub closed_form: bool,
    /// Reject payoffs violating the dilemma ordering instead of warning.
    #[serde(default = "yes")]
    pub strict: bool,
    pub game: GameSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<EnvCoupling>,
    #[serde(default)]
    pub initial_conditions: Vec<PopulationState>,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub analyses: Analyses,
    #[serde(default)]
    pub trajectory_format: TrajectoryFormat,
}

fn yes() -> bool {
    true
}

impl Scenario {
    /// Parses and validates TOML text.
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1),
            message: e.message().to_string(),
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenarios always serialize")
    }

    /// Checks every nested invariant.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.game.validate(self.strict).map_err(invalid("game"))?;
        if let Some(c) = &self.coupling {
            c.validate().map_err(invalid("coupling"))?;
        }
        if self.protocols.is_empty() {
            return Err(ScenarioError::Validation {
                context: "protocols".into(),
                source: Error::InsufficientData("at least one protocol is required".into()),
            });
        }
        for (k, ic) in self.initial_conditions.iter().enumerate() {
            ic.validate(self.game.kind).map_err(invalid(format!("initial condition {k}")))?;
        }
        self.integrator.validate().map_err(invalid("integrator"))?;
        if self.initial_conditions.is_empty() && !self.analyses.any() {
            return Err(ScenarioError::Validation {
                context: "scenario".into(),
                source: Error::InsufficientData("no initial condition and no analysis requested".into()),
            });
        }
        if let Some(g) = self.analyses.phase_grid {
            if g < 2 {
                return Err(ScenarioError::Validation {
                    context: "analyses.phase_grid".into(),
                    source: Error::InsufficientData(format!("grid resolution must be at least 2, got {g}")),
                });
            }
        }
        if let Some(o) = &self.analyses.oscillation {
            if !(o.window > 0.0) {
                return Err(ScenarioError::Validation {
                    context: "analyses.oscillation.window".into(),
                    source: Error::InsufficientData(format!("window must be positive, got {}", o.window)),
                });
            }
        }
        for &p in &self.protocols {
            self.system(p)?;
        }
        Ok(())
    }

    /// The dynamical system for one of the scenario's protocols.
    pub fn system(&self, protocol: Protocol) -> Result<System, ScenarioError> {
        let game = self.game.validate(self.strict).map_err(invalid("game"))?;
        let mut sys = System::new(game, self.coupling, protocol).map_err(invalid("coupling"))?.with_rule(self.rule);
        if self.closed_form {
            sys = sys.with_closed_form().map_err(invalid("closed_form"))?;
        }
        Ok(sys)
    }
}

/// Loads a builtin by name, or otherwise a scenario file at that path.
pub fn load_scenario(name_or_path: &str) -> Result<Scenario, ScenarioError> {
    if let Some(s) = builtin(name_or_path) {
        return Ok(s);
    }
    let path = Path::new(name_or_path);
    if !path.exists() && !name_or_path.contains(['/', '.']) {
        return Err(ScenarioError::UnknownBuiltin(name_or_path.to_string()));
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Scenario::from_toml(&text)
}

/// The built-in reproductions of the worked examples.
pub fn builtin(name: &str) -> Option<Scenario> {
    let base = |name: &str, game: GameSpec| Scenario {
        name: name.to_string(),
        protocols: vec![Protocol::Replicator, Protocol::PairwiseComparison],
        rule: ComparisonRule::FitnessDifference,
        closed_form: false,
        strict: true,
        game,
        coupling: None,
        initial_conditions: Vec::new(),
        integrator: IntegratorConfig::rk45(1e-8, 30.0),
        analyses: Analyses { fixed_points: true, ..Analyses::default() },
        trajectory_format: TrajectoryFormat::Csv,
    };
    let pd = GameSpec::pd(3.0, 0.0, 5.0, 1.0);
    let opd = GameSpec::opd(3.0, 0.0, 5.0, 1.0, 2.0);
    let scenario = match name {
        "example1" => Scenario { initial_conditions: vec![PopulationState::pd(0.9, 1.0)], ..base(name, pd) },
        // cooperation is favoured here, so the dilemma ordering does not hold
        "example2" => Scenario {
            strict: false,
            initial_conditions: vec![PopulationState::pd(0.1, 1.0)],
            ..base(name, GameSpec::pd(5.0, 1.0, 3.0, 0.0))
        },
        "example3" => Scenario {
            protocols: vec![Protocol::PairwiseComparison],
            closed_form: true,
            coupling: Some(EnvCoupling { lambda: 2.0, epsilon: 0.1 }),
            initial_conditions: [(0.9, 0.9), (0.9, 0.7), (0.1, 0.3), (0.1, 0.1)]
                .map(|(x, n)| PopulationState::pd(x, n))
                .to_vec(),
            analyses: Analyses {
                fixed_points: true,
                jacobians: true,
                oscillation: Some(OscillationSpec { window: 15.0, component: Component::Strategy(0) }),
                phase_grid: Some(11),
            },
            ..base(name, pd)
        },
        "example4_rd" | "example4_pcd" => {
            let (protocol, rule) = if name == "example4_rd" {
                (Protocol::Replicator, ComparisonRule::FitnessDifference)
            } else {
                (Protocol::PairwiseComparison, ComparisonRule::EntrywiseExpectation)
            };
            Scenario {
                protocols: vec![protocol],
                rule,
                coupling: Some(EnvCoupling { lambda: 2.0, epsilon: 0.5 }),
                initial_conditions: vec![PopulationState::opd(0.9, 0.1, 0.1), PopulationState::opd(0.1, 0.9, 0.9)],
                integrator: IntegratorConfig::rk45(1e-8, 300.0),
                analyses: Analyses {
                    fixed_points: true,
                    jacobians: true,
                    oscillation: Some(OscillationSpec { window: 100.0, component: Component::Strategy(0) }),
                    phase_grid: Some(5),
                },
                ..base(name, opd)
            }
        }
        _ => return None,
    };
    Some(scenario)
}

/// Sample layout shared by the CSV and JSONL formats.
#[derive(Serialize, Deserialize)]
struct Record {
    t: f64,
    x1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x2: Option<f64>,
    n: f64,
}

impl Record {
    fn of(s: &PopulationState) -> Self {
        Record { t: s.t, x1: s.x[0], x2: s.x.get(1).copied(), n: s.n }
    }

    fn into_state(self) -> PopulationState {
        let mut x = vec![self.x1];
        x.extend(self.x2);
        PopulationState { x, n: self.n, t: self.t }
    }
}

fn csv_header(kind: GameKind) -> &'static str {
    match kind {
        GameKind::Pd => "t,x1,n",
        GameKind::Opd => "t,x1,x2,n",
    }
}

/// Full-precision (17 significant digit) decimal rendering, with -0 printed as 0.
fn num(v: f64) -> String {
    format!("{:.16e}", v + 0.0)
}

/// Writes the samples of `traj`: CSV with header `t,x1[,x2],n`, or one JSON
/// object per line.
pub fn export_trajectory(traj: &Trajectory, format: TrajectoryFormat, path: &Path) -> Result<(), ScenarioError> {
    if traj.is_empty() {
        return Err(ScenarioError::EmptyTrajectory);
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        match format {
            TrajectoryFormat::Csv => {
                writeln!(w, "{}", csv_header(traj.layout.kind))?;
                for s in &traj.samples {
                    let mut line = num(s.t);
                    for v in s.x.iter().chain([&s.n]) {
                        line.push(',');
                        line.push_str(&num(*v));
                    }
                    writeln!(w, "{line}")?;
                }
            }
            TrajectoryFormat::Jsonl => {
                for s in &traj.samples {
                    serde_json::to_writer(&mut w, &Record::of(s))?;
                    writeln!(w)?;
                }
            }
        }
        w.flush()
    };
    write().map_err(io_err(path))
}

/// Reads samples written by [`export_trajectory`] in JSONL format.
pub fn import_trajectory_jsonl(path: &Path) -> Result<Vec<PopulationState>, ScenarioError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line)
            .map_err(|e| ScenarioError::Parse { line: Some(k + 1), message: e.to_string() })?;
        out.push(rec.into_state());
    }
    Ok(out)
}

/// Overrides applied on top of a loaded scenario.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub method: Option<Method>,
    pub t_end: Option<f64>,
    pub grid: Option<usize>,
    pub rule: Option<ComparisonRule>,
}

impl Overrides {
    pub fn apply(&self, scenario: &mut Scenario) -> Result<(), ScenarioError> {
        if let Some(m) = self.method {
            scenario.integrator.method = m;
        }
        if let Some(t) = self.t_end {
            scenario.integrator.t_end = t;
        }
        if let Some(g) = self.grid {
            scenario.analyses.phase_grid = Some(g);
        }
        if let Some(r) = self.rule {
            scenario.rule = r;
        }
        scenario.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub protocol: Protocol,
    pub initial_condition: usize,
    pub initial: PopulationState,
    pub final_state: PopulationState,
    pub samples: usize,
    pub clamp_events: usize,
    pub clamp_total: f64,
    pub max_domain_violation: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oscillation: Option<OscillationReport>,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JacobianCheck {
    pub label: String,
    /// Largest entrywise gap between analytic and central-difference Jacobians.
    pub max_abs_diff: f64,
    pub nonsmooth: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPointSection {
    pub protocol: Protocol,
    pub catalog: Catalog,
    pub search: Vec<FixedPointReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub jacobian_checks: Vec<JacobianCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub warnings: Vec<String>,
    pub runs: Vec<RunRecord>,
    pub fixed_points: Vec<FixedPointSection>,
    pub files: Vec<String>,
}

fn protocol_tag(p: Protocol) -> &'static str {
    match p {
        Protocol::Replicator => "rd",
        Protocol::PairwiseComparison => "pcd",
    }
}

/// Fixed-point catalog, numerical search and Jacobian cross-checks for one
/// protocol of the scenario. No trajectories are integrated.
pub fn analyze(scenario: &Scenario, protocol: Protocol) -> Result<FixedPointSection, ScenarioError> {
    let sys = scenario.system(protocol)?;
    let catalog = catalog_fixed_points(&sys);
    let search = find_fixed_points(&sys, &SearchDomain::admissible(&sys.layout()), SEARCH_SEEDS)
        .map_err(|source| ScenarioError::Analysis { context: "fixed point search".into(), source })?;
    let mut jacobian_checks = Vec::new();
    if scenario.analyses.jacobians {
        for p in catalog.accepted.iter().filter(|p| p.in_domain) {
            let Ok(analytic) = jacobian(&sys, &p.coords, JacobianMode::Analytic) else { continue };
            let fd = jacobian(&sys, &p.coords, JacobianMode::FiniteDifference)
                .map_err(|source| ScenarioError::Analysis { context: "jacobian".into(), source })?;
            jacobian_checks.push(JacobianCheck {
                label: p.label.clone().unwrap_or_default(),
                max_abs_diff: analytic.matrix.max_abs_diff(&fd.matrix),
                nonsmooth: fd.nonsmooth,
            });
        }
    }
    Ok(FixedPointSection { protocol, catalog, search, jacobian_checks })
}

fn write_file(path: &Path, contents: &str) -> Result<(), ScenarioError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn fmt_point(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("({})", parts.join(", "))
}

/// Runs every protocol on every initial condition and the requested analyses,
/// writing into `out_dir`:
///
/// * `trajectory_<rd|pcd>_<k>.csv` (or `.jsonl`) per initial condition,
/// * `fixed_points.json` when fixed points or Jacobians are requested,
/// * `phase_grid_<rd|pcd>.csv` when a grid resolution is given,
/// * `summary.json` and a human-readable `run.log`.
///
/// Output depends only on the scenario, so repeated runs produce identical files.
pub fn run(scenario: &Scenario, out_dir: &Path) -> Result<RunSummary, ScenarioError> {
    scenario.validate()?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut log = String::new();
    let mut files = Vec::new();
    let game = scenario.game.validate(scenario.strict).map_err(invalid("game"))?;
    let warnings: Vec<String> = game.warnings().iter().map(|w| format!("payoff ordering {w} does not hold")).collect();
    let _ = writeln!(log, "scenario {}", scenario.name);
    for w in &warnings {
        let _ = writeln!(log, "warning: {w}");
    }

    let mut runs = Vec::new();
    let mut sections = Vec::new();
    for &protocol in &scenario.protocols {
        let tag = protocol_tag(protocol);
        let sys = scenario.system(protocol)?;
        let _ = writeln!(log, "[{tag}] {:?}, rule {:?}, closed form {:?}", protocol, sys.rule(), sys.closed_form());

        for (k, ic) in scenario.initial_conditions.iter().enumerate() {
            let traj = integrate(&sys, ic, &scenario.integrator).map_err(|source| ScenarioError::Integration {
                context: format!("{tag} initial condition {k}"),
                source,
            })?;
            let name = format!("trajectory_{tag}_{k}.{}", scenario.trajectory_format.extension());
            export_trajectory(&traj, scenario.trajectory_format, &out_dir.join(&name))?;
            let oscillation = match &scenario.analyses.oscillation {
                Some(o) => Some(detect_oscillation(&traj, o.component, o.window).map_err(|source| {
                    ScenarioError::Analysis { context: format!("oscillation, {tag} initial condition {k}"), source }
                })?),
                None => None,
            };
            let last = traj.final_state().cloned().ok_or(ScenarioError::EmptyTrajectory)?;
            let y0 = sys.layout().to_coords(ic);
            let yf = sys.layout().to_coords(&last);
            let _ = write!(
                log,
                "[{tag}] ic {k} {} -> {} at t = {}, {} samples",
                fmt_point(&y0),
                fmt_point(&yf),
                last.t,
                traj.samples.len()
            );
            if let Some(o) = &oscillation {
                let _ = write!(log, ", oscillating {} ({:?})", o.oscillating, o.amplitude_trend);
            }
            let _ = writeln!(log, ", clamp total {:.3e}", traj.total_clamp_magnitude());
            runs.push(RunRecord {
                protocol,
                initial_condition: k,
                initial: ic.clone(),
                final_state: last,
                samples: traj.samples.len(),
                clamp_events: traj.events.len(),
                clamp_total: traj.total_clamp_magnitude(),
                max_domain_violation: traj.max_domain_violation,
                oscillation,
                file: name.clone(),
            });
            files.push(name);
        }

        if let Some(res) = scenario.analyses.phase_grid {
            let grid = sample_phase_grid(&sys, res)
                .map_err(|source| ScenarioError::Analysis { context: "phase grid".into(), source })?;
            let names = sys.layout().coord_names();
            let mut csv = names.join(",");
            for n in &names {
                csv.push_str(&format!(",d{n}"));
            }
            csv.push('\n');
            for g in &grid {
                let row: Vec<String> = g.state.iter().chain(&g.derivative).map(|v| num(*v)).collect();
                csv.push_str(&row.join(","));
                csv.push('\n');
            }
            let name = format!("phase_grid_{tag}.csv");
            write_file(&out_dir.join(&name), &csv)?;
            let _ = writeln!(log, "[{tag}] phase grid: {} points", grid.len());
            files.push(name);
        }

        if scenario.analyses.fixed_points || scenario.analyses.jacobians {
            let section = analyze(scenario, protocol)?;
            for p in &section.catalog.accepted {
                let _ = writeln!(
                    log,
                    "[{tag}] catalog {}: {} {}{}{}",
                    p.label.as_deref().unwrap_or("?"),
                    fmt_point(&p.coords),
                    p.class,
                    if p.saddle { ", saddle" } else { "" },
                    if p.in_domain { "" } else { ", out of domain" }
                );
            }
            for r in &section.catalog.rejected {
                let _ = writeln!(log, "[{tag}] catalog {} rejected: {}", r.label, r.note);
            }
            for p in &section.search {
                let _ = writeln!(log, "[{tag}] search: {} {}", fmt_point(&p.coords), p.class);
            }
            for c in &section.jacobian_checks {
                let _ = writeln!(log, "[{tag}] jacobian check {}: max diff {:.3e}", c.label, c.max_abs_diff);
            }
            sections.push(section);
        }
    }

    if !sections.is_empty() {
        let json = serde_json::to_string_pretty(&sections).expect("reports serialize");
        write_file(&out_dir.join("fixed_points.json"), &json)?;
        files.push("fixed_points.json".into());
    }
    files.push("summary.json".into());
    files.push("run.log".into());
    let summary = RunSummary { scenario: scenario.name.clone(), warnings, runs, fixed_points: sections, files };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_file(&out_dir.join("summary.json"), &json)?;
    write_file(&out_dir.join("run.log"), &log)?;
    Ok(summary)
}
