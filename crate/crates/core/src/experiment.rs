//! Configuration-driven experiment suites: build, solve, simulate, and emit
//! machine-readable tables and policy-structure grids.
//!
//! A sweep varies exactly one parameter over a value list, solves whatever
//! tables the requested policies need at each point, evaluates every policy
//! on common random numbers, and writes one CSV row per (value, policy) plus
//! a JSON mirror. Infeasible points are recorded as per-point errors and the
//! run continues.
//!
//! Output determinism: data rows depend only on the spec and seeds. Wall
//! times (and the generation timestamp) live in `#` header comments and in
//! the JSON mirror, never in CSV data rows, so re-running a spec reproduces
//! a byte-identical CSV body.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::DistortionFn;
use crate::mdp::{
    build_aoi_mdp, build_aoii_perfect_mdp, build_distortion_mdp, check_communicating,
    restrict_to_recurrent_core, rvi_solve_with, MdpError, RviParams, SolveError, SystemConfig,
};
use crate::policy::{Policy, PolicyError, TabularPolicy};
use crate::sim::{evaluate, MetricKind, SimError};
use crate::source::{SourceError, SourceModel};
use crate::Action;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("bad experiment spec: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Objective a sweep optimizes and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    RealTimeError,
    GeneralDistortion,
    Aoii,
    Aoi,
}

impl Metric {
    pub fn readout(self) -> MetricKind {
        match self {
            Metric::RealTimeError => MetricKind::RealTimeError,
            Metric::GeneralDistortion => MetricKind::Distortion,
            Metric::Aoii => MetricKind::Aoii,
            Metric::Aoi => MetricKind::MonitorAoi,
        }
    }

    pub fn parse(s: &str) -> Result<Self, ExperimentError> {
        match s {
            "real_time_error" | "rte" => Ok(Metric::RealTimeError),
            "general_distortion" | "distortion" | "mse" => Ok(Metric::GeneralDistortion),
            "aoii" => Ok(Metric::Aoii),
            "aoi" => Ok(Metric::Aoi),
            other => Err(ExperimentError::BadSpec(format!("unknown metric {other}"))),
        }
    }
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::RealTimeError => "real_time_error",
            Metric::GeneralDistortion => "general_distortion",
            Metric::Aoii => "aoii",
            Metric::Aoi => "aoi",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The single parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    P,
    Q,
    Mu,
    BatteryCapacity,
    SampleCost,
    TransmitCost,
    AoiBound,
    StateCount,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::P => "p",
            SweepParam::Q => "q",
            SweepParam::Mu => "mu",
            SweepParam::BatteryCapacity => "E",
            SweepParam::SampleCost => "c_s",
            SweepParam::TransmitCost => "c_t",
            SweepParam::AoiBound => "N",
            SweepParam::StateCount => "M",
        }
    }

    pub fn parse(s: &str) -> Result<Self, ExperimentError> {
        match s {
            "p" => Ok(SweepParam::P),
            "q" => Ok(SweepParam::Q),
            "mu" => Ok(SweepParam::Mu),
            "E" | "battery" => Ok(SweepParam::BatteryCapacity),
            "c_s" | "cs" => Ok(SweepParam::SampleCost),
            "c_t" | "ct" => Ok(SweepParam::TransmitCost),
            "N" | "aoi_bound" => Ok(SweepParam::AoiBound),
            "M" | "states" => Ok(SweepParam::StateCount),
            other => Err(ExperimentError::BadSpec(format!(
                "unknown sweep parameter {other}"
            ))),
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which source model a spec runs against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SourceSpec {
    Binary,
    SymmetricM { states: usize },
    General { matrix: Vec<Vec<f64>> },
}

impl SourceSpec {
    pub fn build(&self, p: f64) -> Result<SourceModel, SourceError> {
        match self {
            SourceSpec::Binary => SourceModel::binary_symmetric(p),
            SourceSpec::SymmetricM { states } => SourceModel::symmetric_m_state(*states, p),
            SourceSpec::General { matrix } => SourceModel::general(matrix.clone()),
        }
    }
}

/// Policy identifiers accepted in specs and on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyKind {
    /// Solved table for the sweep's own metric.
    Optimal,
    /// Sample whenever the battery covers the combined cost.
    Baseline,
    /// Solved table for the freshness benchmark.
    AoiOptimal,
    /// Solved table for the real-time error, evaluated on the sweep metric.
    RtErrorOptimal,
    /// Horizon-limited belief heuristic (stand-in for a learned policy on
    /// unreliable channels).
    MyopicAoii,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Optimal => "optimal",
            PolicyKind::Baseline => "baseline",
            PolicyKind::AoiOptimal => "aoi_optimal",
            PolicyKind::RtErrorOptimal => "rte_optimal",
            PolicyKind::MyopicAoii => "myopic",
        }
    }

    pub fn parse(s: &str) -> Result<Self, ExperimentError> {
        match s {
            "optimal" => Ok(PolicyKind::Optimal),
            "baseline" => Ok(PolicyKind::Baseline),
            "aoi_optimal" | "aoi" => Ok(PolicyKind::AoiOptimal),
            "rte_optimal" | "rte" => Ok(PolicyKind::RtErrorOptimal),
            "myopic" => Ok(PolicyKind::MyopicAoii),
            other => Err(ExperimentError::BadSpec(format!("unknown policy {other}"))),
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A full sweep description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub metric: Metric,
    pub sweep: SweepParam,
    pub values: Vec<f64>,
    pub base: SystemConfig,
    pub source: SourceSpec,
    pub policies: Vec<PolicyKind>,
    pub horizon: u64,
    pub seeds: Vec<u64>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.values.is_empty() {
            return Err(ExperimentError::BadSpec("empty sweep value list".into()));
        }
        if self.policies.is_empty() {
            return Err(ExperimentError::BadSpec("no policies requested".into()));
        }
        if self.seeds.is_empty() {
            return Err(ExperimentError::BadSpec("no seeds given".into()));
        }
        Ok(())
    }
}

/// One emitted data row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    pub policy: String,
    pub metric: String,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub gain: Option<f64>,
    pub iterations: Option<u64>,
    pub residual: Option<f64>,
    pub config_hash: String,
}

/// A point that could not be produced; the sweep continues past it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointError {
    pub value: f64,
    pub policy: String,
    pub message: String,
}

/// Wall-clock solve time, kept out of the deterministic CSV body.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveNote {
    pub value: f64,
    pub policy: String,
    pub solve_ms: u128,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub spec: ExperimentSpec,
    pub rows: Vec<SweepRow>,
    pub point_errors: Vec<PointError>,
    pub solve_notes: Vec<SolveNote>,
}

/// Solver provenance carried next to a solved table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveInfo {
    pub gain: f64,
    pub iterations: u64,
    pub residual_span: f64,
    pub solve_ms: u128,
    pub states: usize,
    pub communicating: bool,
}

/// Which finite MDP a table is solved from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveObjective {
    Distortion,
    AoiiPerfect,
    AoiBenchmark,
}

/// Notes echoed into policy documents and sweep metadata.
pub fn standard_metadata(config: &SystemConfig, model: &SourceModel) -> BTreeMap<String, String> {
    let mut meta = BTreeMap::new();
    meta.insert("estimator".into(), "last_received_sample".into());
    if model.persistence().is_none() {
        meta.insert(
            "estimator_note".into(),
            "last-received-sample is a heuristic for general matrices; it is the \
             maximum-likelihood rule only for the symmetric families"
                .into(),
        );
    }
    meta.insert(
        "monitor_aoi_reset".into(),
        "on delivery, monitor AoI = transmitter AoI of the delivered sample + 1 slot \
         (fresh sample counts as age 1 at the decision slot)"
            .into(),
    );
    if config.distortion == DistortionFn::squared_error(model.num_states()) {
        meta.insert(
            "mse_definition".into(),
            "(x - x_hat)^2 over integer-labeled states".into(),
        );
    }
    meta
}

/// Build, trim to the recurrent core, verify the communicating property, and
/// solve with relative value iteration at the configured tolerance.
pub fn solve_table(
    objective: SolveObjective,
    config: &SystemConfig,
    model: &SourceModel,
) -> Result<(TabularPolicy, SolveInfo), ExperimentError> {
    let start = Instant::now();
    let mdp = match objective {
        SolveObjective::Distortion => build_distortion_mdp(config, model)?,
        SolveObjective::AoiiPerfect => build_aoii_perfect_mdp(config)?,
        SolveObjective::AoiBenchmark => build_aoi_mdp(config, model)?,
    };
    let mdp = restrict_to_recurrent_core(mdp)?;
    let communicating = check_communicating(&mdp);
    let solution = rvi_solve_with(
        &mdp,
        &RviParams {
            epsilon: config.epsilon,
            ref_state: 0,
            ..RviParams::default()
        },
    )?;
    let info = SolveInfo {
        gain: solution.gain,
        iterations: solution.iterations,
        residual_span: solution.residual_span,
        solve_ms: start.elapsed().as_millis(),
        states: mdp.num_states(),
        communicating,
    };
    let table = TabularPolicy::from_solution(
        &mdp,
        &solution,
        config,
        model,
        standard_metadata(config, model),
    );
    Ok((table, info))
}

fn as_integer(value: f64, what: &str) -> Result<u32, String> {
    if value < 0.0 || value.fract() != 0.0 || value > u32::MAX as f64 {
        return Err(format!("{what} must be a nonnegative integer, got {value}"));
    }
    Ok(value as u32)
}

fn resolve_distortion(metric: Metric, states: usize, base: &DistortionFn) -> DistortionFn {
    match metric {
        Metric::RealTimeError => DistortionFn::real_time_error(states),
        Metric::GeneralDistortion => {
            if base.num_states() == states {
                base.clone()
            } else {
                DistortionFn::squared_error(states)
            }
        }
        Metric::Aoii | Metric::Aoi => {
            if base.num_states() == states {
                base.clone()
            } else {
                DistortionFn::real_time_error(states)
            }
        }
    }
}

/// Apply one sweep value to the base config and build the matching source.
fn resolve_point(spec: &ExperimentSpec, value: f64) -> Result<(SystemConfig, SourceModel), String> {
    let mut config = spec.base.clone();
    let mut source = spec.source.clone();
    match spec.sweep {
        SweepParam::P => config.p = value,
        SweepParam::Q => config.q = value,
        SweepParam::Mu => config.mu = value,
        SweepParam::BatteryCapacity => config.battery_capacity = as_integer(value, "E")?,
        SweepParam::SampleCost => config.sample_cost = as_integer(value, "c_s")?,
        SweepParam::TransmitCost => config.transmit_cost = as_integer(value, "c_t")?,
        SweepParam::AoiBound => config.aoi_bound = as_integer(value, "N")?,
        SweepParam::StateCount => {
            let m = as_integer(value, "M")? as usize;
            source = SourceSpec::SymmetricM { states: m };
        }
    }
    let model = source.build(config.p).map_err(|e| e.to_string())?;
    config.distortion = resolve_distortion(spec.metric, model.num_states(), &spec.base.distortion);
    config.validate().map_err(|e| e.to_string())?;
    Ok((config, model))
}

/// Instantiate one requested policy at a resolved point.
fn build_policy(
    kind: PolicyKind,
    metric: Metric,
    config: &SystemConfig,
    model: &SourceModel,
) -> Result<(Policy, Option<SolveInfo>), String> {
    let solved = |objective, config: &SystemConfig| {
        solve_table(objective, config, model)
            .map(|(table, info)| (Policy::Tabular(table), Some(info)))
            .map_err(|e| e.to_string())
    };
    match kind {
        PolicyKind::Baseline => Ok((Policy::baseline(config), None)),
        PolicyKind::MyopicAoii => Ok((Policy::myopic(config), None)),
        PolicyKind::AoiOptimal => solved(SolveObjective::AoiBenchmark, config),
        PolicyKind::RtErrorOptimal => {
            let rte_config = SystemConfig {
                distortion: DistortionFn::real_time_error(model.num_states()),
                ..config.clone()
            };
            solved(SolveObjective::Distortion, &rte_config)
        }
        PolicyKind::Optimal => match metric {
            Metric::RealTimeError | Metric::GeneralDistortion => {
                solved(SolveObjective::Distortion, config)
            }
            Metric::Aoi => solved(SolveObjective::AoiBenchmark, config),
            Metric::Aoii => {
                if (config.q - 1.0).abs() < 1e-12 {
                    solved(SolveObjective::AoiiPerfect, config)
                } else {
                    Err(
                        "no finite-state optimal table for the AoII objective on an \
                         unreliable channel; request the myopic or rte_optimal policy instead"
                            .to_string(),
                    )
                }
            }
        },
    }
}

/// Does this policy's solve objective match the sweep metric, making its
/// gain the comparable column?
fn gain_is_comparable(kind: PolicyKind, metric: Metric) -> bool {
    match kind {
        PolicyKind::Optimal => true,
        PolicyKind::RtErrorOptimal => metric == Metric::RealTimeError,
        PolicyKind::AoiOptimal => metric == Metric::Aoi,
        PolicyKind::Baseline | PolicyKind::MyopicAoii => false,
    }
}

struct PointOutput {
    rows: Vec<SweepRow>,
    errors: Vec<PointError>,
    notes: Vec<SolveNote>,
}

fn run_point(spec: &ExperimentSpec, value: f64) -> PointOutput {
    let mut out = PointOutput {
        rows: Vec::new(),
        errors: Vec::new(),
        notes: Vec::new(),
    };
    let (config, model) = match resolve_point(spec, value) {
        Ok(pair) => pair,
        Err(message) => {
            out.errors.push(PointError {
                value,
                policy: "*".to_string(),
                message,
            });
            return out;
        }
    };
    let hash = format!("{:016x}", config.config_hash(&model.canonical_string()));
    for &kind in &spec.policies {
        let (policy, info) = match build_policy(kind, spec.metric, &config, &model) {
            Ok(pair) => pair,
            Err(message) => {
                out.errors.push(PointError {
                    value,
                    policy: kind.name().to_string(),
                    message,
                });
                continue;
            }
        };
        if let Some(info) = &info {
            out.notes.push(SolveNote {
                value,
                policy: kind.name().to_string(),
                solve_ms: info.solve_ms,
            });
        }
        let stats = match evaluate(&policy, &config, &model, spec.horizon, &spec.seeds) {
            Ok(stats) => stats,
            Err(e) => {
                out.errors.push(PointError {
                    value,
                    policy: kind.name().to_string(),
                    message: e.to_string(),
                });
                continue;
            }
        };
        let summary = stats.metric(spec.metric.readout());
        let comparable = gain_is_comparable(kind, spec.metric);
        out.rows.push(SweepRow {
            param: spec.sweep.name().to_string(),
            value,
            policy: kind.name().to_string(),
            metric: spec.metric.name().to_string(),
            mean: summary.mean,
            ci_low: summary.ci_low(),
            ci_high: summary.ci_high(),
            gain: info.as_ref().filter(|_| comparable).map(|i| i.gain),
            iterations: info.as_ref().map(|i| i.iterations),
            residual: info.as_ref().map(|i| i.residual_span),
            config_hash: hash.clone(),
        });
    }
    out
}

/// Run every sweep point (in parallel), evaluating all requested policies
/// with common random numbers. Output rows are ordered by sweep value then
/// policy, regardless of completion order.
pub fn run_sweep(spec: &ExperimentSpec) -> Result<SweepOutcome, ExperimentError> {
    spec.validate()?;
    let points: Vec<PointOutput> = spec
        .values
        .par_iter()
        .map(|&value| run_point(spec, value))
        .collect();
    let mut rows = Vec::new();
    let mut point_errors = Vec::new();
    let mut solve_notes = Vec::new();
    for point in points {
        rows.extend(point.rows);
        point_errors.extend(point.errors);
        solve_notes.extend(point.notes);
    }
    Ok(SweepOutcome {
        spec: spec.clone(),
        rows,
        point_errors,
        solve_notes,
    })
}

/// Versioned, fixed column order for sweep tables.
pub const SWEEP_CSV_SCHEMA: &str = "sweep/1";
pub const SWEEP_CSV_HEADER: &str =
    "param,value,policy,metric,mean,ci_low,ci_high,gain,iterations,residual,config_hash";

fn opt<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

/// CSV rendering. Header comments carry the timestamp and solve times; the
/// body below them is deterministic for a given spec.
pub fn sweep_to_csv(outcome: &SweepOutcome, timestamp: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(ts) = timestamp {
        out.push_str(&format!("# generated_at: {ts}\n"));
    }
    out.push_str(&format!("# schema: {SWEEP_CSV_SCHEMA}\n"));
    out.push_str(&format!("# experiment: {}\n", outcome.spec.name));
    for note in &outcome.solve_notes {
        out.push_str(&format!(
            "# solve_ms: value={} policy={} ms={}\n",
            note.value, note.policy, note.solve_ms
        ));
    }
    for err in &outcome.point_errors {
        out.push_str(&format!(
            "# point_error: value={} policy={} message={}\n",
            err.value,
            err.policy,
            err.message.replace('\n', " ")
        ));
    }
    out.push_str(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in &outcome.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.param,
            r.value,
            r.policy,
            r.metric,
            r.mean,
            r.ci_low,
            r.ci_high,
            opt(&r.gain),
            opt(&r.iterations),
            opt(&r.residual),
            r.config_hash,
        ));
    }
    out
}

/// The deterministic part of a CSV rendering (header line plus data rows).
pub fn csv_body(csv: &str) -> String {
    csv.lines()
        .filter(|l| !l.starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Write `<prefix>.csv` and `<prefix>.json`; returns the two paths.
pub fn write_sweep_outputs(
    outcome: &SweepOutcome,
    prefix: &std::path::Path,
    timestamp: Option<&str>,
) -> Result<(std::path::PathBuf, std::path::PathBuf), ExperimentError> {
    if let Some(dir) = prefix.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let csv_path = prefix.with_extension("csv");
    let json_path = prefix.with_extension("json");
    std::fs::write(&csv_path, sweep_to_csv(outcome, timestamp))?;
    let json = serde_json::to_string_pretty(outcome)
        .map_err(|e| ExperimentError::BadSpec(e.to_string()))?;
    std::fs::write(&json_path, json)?;
    Ok((csv_path, json_path))
}

// ---------------------------------------------------------------------------
// Policy structure grids

/// Action codes on a battery × AoI grid, one grid per slice.
#[derive(Debug, Clone)]
pub struct StructureGrid {
    pub slice: Option<(u32, u32)>,
    /// `rows[e][θ-1]`; `None` marks states outside the retained core.
    pub rows: Vec<Vec<Option<Action>>>,
}

/// Grid of action codes for a solved table, battery ascending by row and AoI
/// by column. Distortion tables need a `(buffer, estimate)` slice; the AoII
/// table takes none.
pub fn dump_policy_structure(
    policy: &TabularPolicy,
    slice: Option<(u32, u32)>,
) -> Result<StructureGrid, PolicyError> {
    Ok(StructureGrid {
        slice,
        rows: policy.action_grid(slice)?,
    })
}

impl StructureGrid {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        match self.slice {
            Some((b, e)) => out.push_str(&format!("# slice buffer={b} estimate={e}\n")),
            None => out.push_str("# single grid (no slice axis)\n"),
        }
        out.push_str("# rows: battery 0..E ascending; columns: AoI 1..N; codes 0=idle 1=retransmit 2=sample\n");
        for (e, row) in self.rows.iter().enumerate() {
            let cells: String = row
                .iter()
                .map(|c| c.map(Action::code).unwrap_or('.'))
                .collect();
            out.push_str(&format!("e={e:>2} {cells}\n"));
        }
        out
    }

    /// Some battery row acts (retransmit or sample) at a small AoI and idles
    /// at a larger one.
    pub fn has_active_to_idle_switch(&self) -> bool {
        self.rows.iter().any(|row| {
            let mut seen_active = false;
            for cell in row {
                match cell {
                    Some(Action::Retransmit) | Some(Action::Sample) => seen_active = true,
                    Some(Action::Idle) if seen_active => return true,
                    _ => {}
                }
            }
            false
        })
    }

    /// Some battery row idles at a small AoI and samples at a larger one.
    pub fn has_idle_to_sample_switch(&self) -> bool {
        self.rows.iter().any(|row| {
            let mut seen_idle = false;
            for cell in row {
                match cell {
                    Some(Action::Idle) => seen_idle = true,
                    Some(Action::Sample) if seen_idle => return true,
                    _ => {}
                }
            }
            false
        })
    }
}

// ---------------------------------------------------------------------------
// Flat key-value config files

/// Parse the flat `key = value` config grammar (`#` starts a comment).
///
/// Keys: `p`, `q`, `mu`, `c_s`, `c_t`, `E`, `N`, `epsilon`,
/// `distortion` (`rte` | `mse` | `weighted:c1,c2`),
/// `source` (`binary` | `symmetric:M` | `general:r00,r01;r10,r11;...`).
pub fn parse_config_text(text: &str) -> Result<(SystemConfig, SourceSpec), ExperimentError> {
    let mut config = SystemConfig::default();
    let mut source = SourceSpec::Binary;
    let mut distortion_spec: Option<String> = None;

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ExperimentError::BadSpec(format!(
                "line {}: expected key = value, got {raw:?}",
                lineno + 1
            )));
        };
        let key = key.trim();
        let value = value.trim();
        let bad = |what: &str| {
            ExperimentError::BadSpec(format!("line {}: bad {what}: {value:?}", lineno + 1))
        };
        match key {
            "p" => config.p = value.parse().map_err(|_| bad("p"))?,
            "q" => config.q = value.parse().map_err(|_| bad("q"))?,
            "mu" => config.mu = value.parse().map_err(|_| bad("mu"))?,
            "c_s" | "cs" => config.sample_cost = value.parse().map_err(|_| bad("c_s"))?,
            "c_t" | "ct" => config.transmit_cost = value.parse().map_err(|_| bad("c_t"))?,
            "E" | "battery" => config.battery_capacity = value.parse().map_err(|_| bad("E"))?,
            "N" | "aoi_bound" => config.aoi_bound = value.parse().map_err(|_| bad("N"))?,
            "epsilon" => config.epsilon = value.parse().map_err(|_| bad("epsilon"))?,
            "distortion" => distortion_spec = Some(value.to_string()),
            "source" => source = parse_source_spec(value).ok_or_else(|| bad("source"))?,
            other => {
                return Err(ExperimentError::BadSpec(format!(
                    "line {}: unknown key {other:?}",
                    lineno + 1
                )))
            }
        }
    }

    let states = match &source {
        SourceSpec::Binary => 2,
        SourceSpec::SymmetricM { states } => *states,
        SourceSpec::General { matrix } => matrix.len(),
    };
    config.distortion = match distortion_spec.as_deref() {
        None | Some("rte") => DistortionFn::real_time_error(states),
        Some("mse") => DistortionFn::squared_error(states),
        Some(spec) => {
            let weights = spec
                .strip_prefix("weighted:")
                .and_then(|rest| rest.split_once(','))
                .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)));
            let Some((c1, c2)) = weights else {
                return Err(ExperimentError::BadSpec(format!(
                    "bad distortion spec {spec:?}"
                )));
            };
            DistortionFn::weighted_binary(c1, c2)
                .map_err(|e| ExperimentError::BadSpec(e.to_string()))?
        }
    };
    Ok((config, source))
}

fn parse_source_spec(value: &str) -> Option<SourceSpec> {
    if value == "binary" {
        return Some(SourceSpec::Binary);
    }
    if let Some(m) = value.strip_prefix("symmetric:") {
        return Some(SourceSpec::SymmetricM {
            states: m.trim().parse().ok()?,
        });
    }
    if let Some(rows) = value.strip_prefix("general:") {
        let matrix: Option<Vec<Vec<f64>>> = rows
            .split(';')
            .map(|row| {
                row.split(',')
                    .map(|v| v.trim().parse::<f64>().ok())
                    .collect()
            })
            .collect();
        return Some(SourceSpec::General { matrix: matrix? });
    }
    None
}

// ---------------------------------------------------------------------------
// Experiment presets

/// Ready-made sweep suites mirroring the evaluation grids this toolkit is
/// benchmarked on. Horizons and seeds are chosen for table-quality output in
/// minutes; raise them for tighter intervals.
pub mod presets {
    use super::*;

    pub const DEFAULT_SEEDS: [u64; 5] = [101, 102, 103, 104, 105];

    fn base(p: f64, q: f64, mu: f64, battery: u32) -> SystemConfig {
        SystemConfig {
            p,
            q,
            mu,
            battery_capacity: battery,
            ..SystemConfig::default()
        }
    }

    fn spec(
        name: &str,
        metric: Metric,
        sweep: SweepParam,
        values: &[f64],
        config: SystemConfig,
        policies: &[PolicyKind],
    ) -> ExperimentSpec {
        ExperimentSpec {
            name: name.to_string(),
            metric,
            sweep,
            values: values.to_vec(),
            base: config,
            source: SourceSpec::Binary,
            policies: policies.to_vec(),
            horizon: 200_000,
            seeds: DEFAULT_SEEDS.to_vec(),
        }
    }

    const ERROR_POLICIES: [PolicyKind; 2] = [PolicyKind::Optimal, PolicyKind::Baseline];
    const AOII_POLICIES: [PolicyKind; 4] = [
        PolicyKind::Optimal,
        PolicyKind::RtErrorOptimal,
        PolicyKind::Baseline,
        PolicyKind::AoiOptimal,
    ];

    pub fn error_vs_source_persistence() -> ExperimentSpec {
        spec(
            "error_vs_source_persistence",
            Metric::RealTimeError,
            SweepParam::P,
            &[0.6, 0.7, 0.8, 0.9],
            base(0.8, 0.8, 0.5, 5),
            &ERROR_POLICIES,
        )
    }

    pub fn error_vs_energy_rate() -> ExperimentSpec {
        spec(
            "error_vs_energy_rate",
            Metric::RealTimeError,
            SweepParam::Mu,
            &[0.1, 0.3, 0.5, 0.7, 0.9],
            base(0.8, 0.7, 0.5, 5),
            &ERROR_POLICIES,
        )
    }

    pub fn error_vs_channel_reliability() -> ExperimentSpec {
        spec(
            "error_vs_channel_reliability",
            Metric::RealTimeError,
            SweepParam::Q,
            &[0.3, 0.5, 0.7, 0.9],
            base(0.7, 0.8, 0.5, 5),
            &ERROR_POLICIES,
        )
    }

    pub fn error_vs_battery_capacity() -> ExperimentSpec {
        spec(
            "error_vs_battery_capacity",
            Metric::RealTimeError,
            SweepParam::BatteryCapacity,
            &[2.0, 4.0, 6.0, 8.0, 10.0],
            base(0.8, 0.7, 0.5, 5),
            &ERROR_POLICIES,
        )
    }

    pub fn error_vs_transmission_cost() -> ExperimentSpec {
        spec(
            "error_vs_transmission_cost",
            Metric::RealTimeError,
            SweepParam::TransmitCost,
            &[1.0, 2.0, 3.0, 5.0, 7.0, 9.0],
            base(0.8, 0.7, 0.6, 10),
            &ERROR_POLICIES,
        )
    }

    pub fn error_vs_aoi_bound() -> ExperimentSpec {
        spec(
            "error_vs_aoi_bound",
            Metric::RealTimeError,
            SweepParam::AoiBound,
            &[5.0, 10.0, 20.0, 30.0, 45.0, 60.0],
            base(0.7, 0.6, 0.5, 10),
            &ERROR_POLICIES,
        )
    }

    pub fn aoii_vs_aoi_bound() -> ExperimentSpec {
        spec(
            "aoii_vs_aoi_bound",
            Metric::Aoii,
            SweepParam::AoiBound,
            &[5.0, 10.0, 20.0, 30.0, 45.0, 60.0],
            base(0.7, 1.0, 0.3, 10),
            &[PolicyKind::Optimal, PolicyKind::Baseline],
        )
    }

    pub fn aoii_vs_source_persistence() -> ExperimentSpec {
        spec(
            "aoii_vs_source_persistence",
            Metric::Aoii,
            SweepParam::P,
            &[0.6, 0.7, 0.8, 0.9],
            base(0.8, 1.0, 0.5, 5),
            &AOII_POLICIES,
        )
    }

    pub fn aoii_vs_energy_rate() -> ExperimentSpec {
        spec(
            "aoii_vs_energy_rate",
            Metric::Aoii,
            SweepParam::Mu,
            &[0.1, 0.3, 0.5, 0.7, 0.9],
            base(0.7, 1.0, 0.5, 5),
            &AOII_POLICIES,
        )
    }

    pub fn aoii_vs_channel_reliability() -> ExperimentSpec {
        spec(
            "aoii_vs_channel_reliability",
            Metric::Aoii,
            SweepParam::Q,
            &[0.4, 0.6, 0.8, 1.0],
            base(0.7, 1.0, 0.5, 5),
            // No finite optimal table off the perfect channel; the myopic
            // heuristic stands in and is labeled as such.
            &[
                PolicyKind::RtErrorOptimal,
                PolicyKind::MyopicAoii,
                PolicyKind::Baseline,
                PolicyKind::AoiOptimal,
            ],
        )
    }

    pub fn aoii_vs_sampling_cost() -> ExperimentSpec {
        spec(
            "aoii_vs_sampling_cost",
            Metric::Aoii,
            SweepParam::SampleCost,
            &[1.0, 2.0, 3.0, 4.0],
            base(0.7, 1.0, 0.7, 5),
            &AOII_POLICIES,
        )
    }

    pub fn aoii_vs_battery_capacity() -> ExperimentSpec {
        spec(
            "aoii_vs_battery_capacity",
            Metric::Aoii,
            SweepParam::BatteryCapacity,
            &[2.0, 3.0, 4.0, 6.0, 8.0, 10.0],
            base(0.8, 1.0, 0.6, 5),
            &AOII_POLICIES,
        )
    }

    pub fn mse_vs_state_count() -> ExperimentSpec {
        spec(
            "mse_vs_state_count",
            Metric::GeneralDistortion,
            SweepParam::StateCount,
            &[2.0, 3.0, 4.0, 5.0, 6.0],
            base(0.8, 0.5, 0.8, 5),
            &[
                PolicyKind::Optimal,
                PolicyKind::Baseline,
                PolicyKind::AoiOptimal,
            ],
        )
    }

    pub fn error_vs_state_count() -> ExperimentSpec {
        spec(
            "error_vs_state_count",
            Metric::RealTimeError,
            SweepParam::StateCount,
            &[2.0, 3.0, 4.0, 5.0, 6.0],
            base(0.8, 0.9, 0.3, 3),
            &[
                PolicyKind::Optimal,
                PolicyKind::Baseline,
                PolicyKind::AoiOptimal,
            ],
        )
    }

    /// Three-state asymmetric chain, squared-error objective, energy sweep.
    pub fn mse_vs_energy_rate_asymmetric() -> ExperimentSpec {
        let mut s = spec(
            "mse_vs_energy_rate_asymmetric",
            Metric::GeneralDistortion,
            SweepParam::Mu,
            &[0.2, 0.4, 0.6, 0.8],
            SystemConfig {
                p: 0.8, // unused by the general matrix; kept valid
                q: 0.7,
                mu: 0.5,
                battery_capacity: 5,
                distortion: DistortionFn::squared_error(3),
                ..SystemConfig::default()
            },
            &ERROR_POLICIES,
        );
        s.source = SourceSpec::General {
            matrix: asymmetric_three_state(),
        };
        s
    }

    /// The three-state asymmetric transition matrix used by
    /// [`mse_vs_energy_rate_asymmetric`].
    pub fn asymmetric_three_state() -> Vec<Vec<f64>> {
        vec![
            vec![0.1, 0.6, 0.3],
            vec![0.4, 0.0, 0.6],
            vec![0.8, 0.1, 0.1],
        ]
    }

    /// Settings whose solved real-time-error table shows the non-monotonic
    /// switching structure.
    pub fn error_structure_config() -> SystemConfig {
        base(0.8, 0.5, 0.2, 10)
    }

    /// Same structure study with sampling five times costlier than
    /// transmission.
    pub fn error_structure_high_sampling_cost_config() -> SystemConfig {
        SystemConfig {
            sample_cost: 5,
            ..base(0.8, 0.5, 0.8, 10)
        }
    }

    /// Perfect-channel AoII structure study.
    pub fn aoii_structure_config(mu: f64) -> SystemConfig {
        base(0.7, 1.0, mu, 10)
    }

    pub fn all() -> Vec<ExperimentSpec> {
        vec![
            error_vs_source_persistence(),
            error_vs_energy_rate(),
            error_vs_channel_reliability(),
            error_vs_battery_capacity(),
            error_vs_transmission_cost(),
            error_vs_aoi_bound(),
            aoii_vs_aoi_bound(),
            aoii_vs_source_persistence(),
            aoii_vs_energy_rate(),
            aoii_vs_channel_reliability(),
            aoii_vs_sampling_cost(),
            aoii_vs_battery_capacity(),
            mse_vs_state_count(),
            error_vs_state_count(),
            mse_vs_energy_rate_asymmetric(),
        ]
    }
}

// ---------------------------------------------------------------------------
// Verification suite (the `verify` CLI subcommand)

#[derive(Debug, Clone, Serialize)]
pub struct VerificationCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub checks: Vec<VerificationCheck>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Condensed oracle suite: exercises the independent correctness instruments
/// end to end in a few seconds.
pub fn run_verification() -> VerificationReport {
    use crate::belief::{aoii_belief_perfect, aoii_belief_update, belief_from_aoi, AoiiBelief};
    use crate::oracle::{brute_force_gain, exact_filter_step, JointFilterState, ValueFilter};
    use crate::policy::Policy;
    use crate::sim::{simulate_trace, verify_aoii_incremental};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    let mut checks = Vec::new();
    let mut check = |name: &str, result: Result<String, String>| {
        let (passed, detail) = match result {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        checks.push(VerificationCheck {
            name: name.to_string(),
            passed,
            detail,
        });
    };

    check("scalar belief matches the forward filter", {
        let mut worst = 0.0f64;
        for &p in &[0.6, 0.7, 0.8, 0.9] {
            let model = SourceModel::binary_symmetric(p).unwrap();
            for x_tilde in 0..2usize {
                let mut filter = ValueFilter::observed(&model, x_tilde);
                for theta in 1..=30u32 {
                    filter.predict(&model);
                    let closed = belief_from_aoi(x_tilde, theta, p).unwrap().value();
                    worst = worst.max((filter.prob_of(1) - closed).abs());
                }
            }
        }
        if worst < 1e-12 {
            Ok(format!("max deviation {worst:.2e}"))
        } else {
            Err(format!("max deviation {worst:.2e} exceeds 1e-12"))
        }
    });

    check("AoII filter matches the truncated updates", {
        let mut worst = 0.0f64;
        for &(p, q) in &[(0.7, 0.5), (0.8, 0.8), (0.6, 1.0)] {
            let mut rng = ChaCha12Rng::seed_from_u64(12345);
            for _ in 0..100 {
                let mut jf = JointFilterState::init_agreement(20);
                let mut bel = AoiiBelief::certain_zero(20);
                for _ in 0..50 {
                    let action = match rng.gen_range(0..3u8) {
                        0 => Action::Idle,
                        1 if jf.rho() == 1 => Action::Retransmit,
                        1 => Action::Idle,
                        _ => Action::Sample,
                    };
                    let p0 = jf.predictive_rho_zero(action, q).clamp(0.0, 1.0);
                    let rho_next = if rng.gen_bool(p0) { 0 } else { 1 };
                    jf = exact_filter_step(&jf, action, rho_next, p, q).unwrap();
                    bel = aoii_belief_update(&bel, action, rho_next, p).unwrap();
                    for (i, &w) in jf.aoii_marginal().iter().enumerate() {
                        worst = worst.max((w - bel.get(i)).abs());
                    }
                }
            }
        }
        if worst < 1e-9 {
            Ok(format!("max deviation {worst:.2e}"))
        } else {
            Err(format!("max deviation {worst:.2e} exceeds 1e-9"))
        }
    });

    check("perfect-channel belief equals iterated idle updates", {
        let mut worst = 0.0f64;
        for &p in &[0.6, 0.7, 0.8, 0.9] {
            let mut bel = AoiiBelief::certain_zero(30);
            for theta in 1..=30u32 {
                bel = aoii_belief_update(&bel, Action::Idle, 0, p).unwrap();
                let closed = aoii_belief_perfect(theta, p, 30).unwrap();
                worst = worst.max(bel.max_abs_diff(&closed));
            }
        }
        if worst < 1e-12 {
            Ok(format!("max deviation {worst:.2e}"))
        } else {
            Err(format!("max deviation {worst:.2e} exceeds 1e-12"))
        }
    });

    check("relative value iteration matches exhaustive search", {
        let cfg = SystemConfig {
            p: 0.8,
            q: 0.6,
            mu: 0.4,
            sample_cost: 0,
            transmit_cost: 1,
            battery_capacity: 1,
            aoi_bound: 2,
            ..SystemConfig::default()
        };
        let model = SourceModel::binary_symmetric(cfg.p).unwrap();
        (|| -> Result<String, String> {
            let mdp = restrict_to_recurrent_core(
                build_distortion_mdp(&cfg, &model).map_err(|e| e.to_string())?,
            )
            .map_err(|e| e.to_string())?;
            let sol = crate::mdp::rvi_solve(&mdp, 1e-10, 0).map_err(|e| e.to_string())?;
            let (brute, _) = brute_force_gain(&mdp).map_err(|e| e.to_string())?;
            let gap = (sol.gain - brute).abs();
            if gap < 1e-8 {
                Ok(format!("|rvi - brute| = {gap:.2e}"))
            } else {
                Err(format!("|rvi - brute| = {gap:.2e} exceeds 1e-8"))
            }
        })()
    });

    check("kernels are stochastic and communicating", {
        (|| -> Result<String, String> {
            let cfg = SystemConfig {
                p: 0.8,
                q: 0.5,
                mu: 0.3,
                battery_capacity: 4,
                aoi_bound: 6,
                ..SystemConfig::default()
            };
            let model = SourceModel::binary_symmetric(cfg.p).unwrap();
            let mut count = 0;
            for mdp in [
                build_distortion_mdp(&cfg, &model).map_err(|e| e.to_string())?,
                build_aoi_mdp(&cfg, &model).map_err(|e| e.to_string())?,
            ] {
                let core = restrict_to_recurrent_core(mdp).map_err(|e| e.to_string())?;
                core.validate().map_err(|e| e.to_string())?;
                if !check_communicating(&core) {
                    return Err("restricted core not communicating".to_string());
                }
                count += core.num_states();
            }
            Ok(format!("{count} states checked"))
        })()
    });

    check("incremental AoII equals the definitional recomputation", {
        let cfg = SystemConfig {
            p: 0.8,
            q: 0.5,
            mu: 0.3,
            battery_capacity: 4,
            ..SystemConfig::default()
        };
        let model = SourceModel::binary_symmetric(cfg.p).unwrap();
        match simulate_trace(&Policy::baseline(&cfg), &cfg, &model, 10_000, 77) {
            Ok(trace) if verify_aoii_incremental(&trace) => {
                Ok(format!("{} slots verified", trace.len() - 1))
            }
            Ok(_) => Err("definitional recomputation disagrees".to_string()),
            Err(e) => Err(e.to_string()),
        }
    });

    check("solved gain matches its simulated average", {
        (|| -> Result<String, String> {
            let cfg = SystemConfig {
                p: 0.8,
                q: 0.7,
                mu: 0.5,
                battery_capacity: 5,
                aoi_bound: 15,
                ..SystemConfig::default()
            };
            let model = SourceModel::binary_symmetric(cfg.p).unwrap();
            let (table, info) =
                solve_table(SolveObjective::Distortion, &cfg, &model).map_err(|e| e.to_string())?;
            let stats = evaluate(
                &Policy::Tabular(table),
                &cfg,
                &model,
                400_000,
                &[11, 12, 13, 14, 15],
            )
            .map_err(|e| e.to_string())?;
            let rel = (stats.real_time_error.mean - info.gain).abs() / info.gain;
            if rel < 0.02 {
                Ok(format!("relative gap {rel:.4}"))
            } else {
                Err(format!("relative gap {rel:.4} exceeds 2%"))
            }
        })()
    });

    VerificationReport { checks }
}
