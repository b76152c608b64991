//! Command-line front end: solve policy tables, simulate them, run sweeps,
//! dump structure grids, and run the verification suite.
//!
//! Exit codes: 0 on success, 2 when a sweep completed with per-point
//! failures recorded in the output, 1 on fatal errors.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use semtrack_core::experiment::{
    self, parse_config_text, presets, run_sweep, run_verification, solve_table, sweep_to_csv,
    write_sweep_outputs, ExperimentSpec, Metric, PolicyKind, SolveObjective, SourceSpec,
    SweepParam,
};
use semtrack_core::mdp::SystemConfig;
use semtrack_core::policy::{load_policy, save_policy, Policy};
use semtrack_core::sim::{evaluate, simulate_trace, trace_to_csv};

#[derive(Parser)]
#[command(
    name = "semtrack",
    about = "Sampling/transmission policy toolkit for remote tracking under energy harvesting",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat key-value config file (flags below override it).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long = "cs")]
    sample_cost: Option<u32>,
    #[arg(long = "ct")]
    transmit_cost: Option<u32>,
    /// Battery capacity E.
    #[arg(long = "battery", alias = "E")]
    battery: Option<u32>,
    /// AoI bound N.
    #[arg(long = "aoi-bound", alias = "N")]
    aoi_bound: Option<u32>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Source: `binary`, `symmetric:M`, or `general:r00,r01;r10,r11;...`.
    #[arg(long)]
    source: Option<String>,
}

impl ConfigArgs {
    /// Did the user supply a config file or any override flag?
    fn any_given(&self) -> bool {
        self.config.is_some()
            || self.p.is_some()
            || self.q.is_some()
            || self.mu.is_some()
            || self.sample_cost.is_some()
            || self.transmit_cost.is_some()
            || self.battery.is_some()
            || self.aoi_bound.is_some()
            || self.epsilon.is_some()
            || self.source.is_some()
    }

    /// Precedence: flags > file > defaults.
    fn resolve(&self) -> Result<(SystemConfig, SourceSpec)> {
        let mut text = String::new();
        if let Some(path) = &self.config {
            text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
        }
        if let Some(src) = &self.source {
            text.push_str(&format!("\nsource = {src}\n"));
        }
        let (mut config, source) = parse_config_text(&text)?;
        if let Some(v) = self.p {
            config.p = v;
        }
        if let Some(v) = self.q {
            config.q = v;
        }
        if let Some(v) = self.mu {
            config.mu = v;
        }
        if let Some(v) = self.sample_cost {
            config.sample_cost = v;
        }
        if let Some(v) = self.transmit_cost {
            config.transmit_cost = v;
        }
        if let Some(v) = self.battery {
            config.battery_capacity = v;
        }
        if let Some(v) = self.aoi_bound {
            config.aoi_bound = v;
        }
        if let Some(v) = self.epsilon {
            config.epsilon = v;
        }
        Ok((config, source))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build the finite MDP for a metric and solve it by relative value
    /// iteration; writes a policy JSON document.
    Solve {
        #[command(flatten)]
        config: ConfigArgs,
        /// Objective: real_time_error | general_distortion | aoii | aoi.
        #[arg(long, default_value = "real_time_error")]
        metric: String,
        /// Output path for the policy document.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a saved policy document in the slot-level simulator.
    Simulate {
        /// Policy JSON produced by `solve`.
        #[arg(long)]
        policy: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 200_000)]
        horizon: u64,
        /// Comma-separated seed list.
        #[arg(long, default_value = "101,102,103,104,105")]
        seeds: String,
        /// Write aggregate statistics JSON here (stdout otherwise).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also export the first seed's slot trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Sweep one parameter over a value list for a set of policies.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Run a named preset instead of an explicit sweep (see
        /// `--list-presets`).
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        list_presets: bool,
        #[arg(long)]
        metric: Option<String>,
        /// Swept parameter: p | q | mu | E | c_s | c_t | N | M.
        #[arg(long)]
        sweep: Option<String>,
        /// Comma-separated values.
        #[arg(long)]
        values: Option<String>,
        /// Comma-separated: optimal,baseline,aoi,rte,myopic.
        #[arg(long, default_value = "optimal,baseline")]
        policies: String,
        #[arg(long, default_value_t = 200_000)]
        horizon: u64,
        #[arg(long, default_value = "101,102,103,104,105")]
        seeds: String,
        /// Output prefix; writes `<out>.csv` and `<out>.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the battery × AoI action grid of a saved policy.
    Structure {
        #[arg(long)]
        policy: PathBuf,
        /// Slice `buffer,estimate` for distortion tables.
        #[arg(long)]
        slice: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the condensed oracle suite and report pass/fail per check.
    Verify,
}

fn parse_u64_list(text: &str) -> Result<Vec<u64>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|e| anyhow!("bad seed {s:?}: {e}"))
        })
        .collect()
}

fn parse_f64_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| anyhow!("bad value {s:?}: {e}"))
        })
        .collect()
}

fn timestamp() -> String {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("unix:{secs}")
}

fn objective_for(metric: Metric, config: &SystemConfig) -> Result<SolveObjective> {
    Ok(match metric {
        Metric::RealTimeError | Metric::GeneralDistortion => SolveObjective::Distortion,
        Metric::Aoi => SolveObjective::AoiBenchmark,
        Metric::Aoii => {
            if (config.q - 1.0).abs() < 1e-12 {
                SolveObjective::AoiiPerfect
            } else {
                bail!(
                    "no finite-state AoII table for q = {} < 1; \
                     use the myopic policy in sweeps instead",
                    config.q
                );
            }
        }
    })
}

fn cmd_solve(config_args: &ConfigArgs, metric: &str, out: &PathBuf) -> Result<()> {
    let metric = Metric::parse(metric)?;
    let (mut config, source) = config_args.resolve()?;
    let model = source.build(config.p)?;
    // Align the distortion table with the requested metric and source size.
    config.distortion = match metric {
        Metric::RealTimeError => {
            semtrack_core::belief::DistortionFn::real_time_error(model.num_states())
        }
        Metric::GeneralDistortion if config.distortion.num_states() != model.num_states() => {
            semtrack_core::belief::DistortionFn::squared_error(model.num_states())
        }
        _ => config.distortion,
    };
    let objective = objective_for(metric, &config)?;
    let (table, info) = solve_table(objective, &config, &model)?;
    let doc = save_policy(&table, &config, &model)?;
    std::fs::write(out, doc).with_context(|| format!("writing {}", out.display()))?;
    eprintln!(
        "solved {} states in {} sweeps ({} ms): gain {:.6}, residual {:.2e} -> {}",
        info.states,
        info.iterations,
        info.solve_ms,
        info.gain,
        info.residual_span,
        out.display()
    );
    Ok(())
}

fn cmd_simulate(
    policy_path: &PathBuf,
    config_args: &ConfigArgs,
    horizon: u64,
    seeds: &str,
    out: Option<&PathBuf>,
    trace: Option<&PathBuf>,
) -> Result<()> {
    let text = std::fs::read_to_string(policy_path)
        .with_context(|| format!("reading {}", policy_path.display()))?;
    let (table, embedded_config, model) = load_policy(&text)?;
    let (config, model) = if config_args.any_given() {
        let (config, source) = config_args.resolve()?;
        let model = source.build(config.p)?;
        table.ensure_matches(&config, &model)?;
        (config, model)
    } else {
        (embedded_config, model)
    };
    let seeds = parse_u64_list(seeds)?;
    let policy = Policy::Tabular(table);
    let stats = evaluate(&policy, &config, &model, horizon, &seeds)?;
    let rendered = serde_json::to_string_pretty(&stats)?;
    match out {
        Some(path) => {
            std::fs::write(path, rendered).with_context(|| format!("writing {}", path.display()))?
        }
        None => println!("{rendered}"),
    }
    if let Some(path) = trace {
        let rows = simulate_trace(&policy, &config, &model, horizon, seeds[0])?;
        std::fs::write(path, trace_to_csv(&rows))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn preset_by_name(name: &str) -> Option<ExperimentSpec> {
    presets::all().into_iter().find(|s| s.name == name)
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    config_args: &ConfigArgs,
    preset: Option<&str>,
    list: bool,
    metric: Option<&str>,
    sweep: Option<&str>,
    values: Option<&str>,
    policies: &str,
    horizon: u64,
    seeds: &str,
    out: Option<&PathBuf>,
) -> Result<ExitCode> {
    if list {
        for spec in presets::all() {
            println!(
                "{}  (metric {}, sweep {}, {} points)",
                spec.name,
                spec.metric,
                spec.sweep,
                spec.values.len()
            );
        }
        return Ok(ExitCode::SUCCESS);
    }

    let spec = if let Some(name) = preset {
        let mut spec = preset_by_name(name).ok_or_else(|| anyhow!("unknown preset {name:?}"))?;
        spec.horizon = horizon;
        spec.seeds = parse_u64_list(seeds)?;
        spec
    } else {
        let metric = Metric::parse(metric.ok_or_else(|| anyhow!("--metric required"))?)?;
        let sweep = SweepParam::parse(sweep.ok_or_else(|| anyhow!("--sweep required"))?)?;
        let values = parse_f64_list(values.ok_or_else(|| anyhow!("--values required"))?)?;
        let (base, source) = config_args.resolve()?;
        let policies = policies
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| PolicyKind::parse(s.trim()).map_err(|e| anyhow!("{e}")))
            .collect::<Result<Vec<_>>>()?;
        ExperimentSpec {
            name: format!("{}_{}_sweep", metric, sweep),
            metric,
            sweep,
            values,
            base,
            source,
            policies,
            horizon,
            seeds: parse_u64_list(seeds)?,
        }
    };

    let outcome = run_sweep(&spec)?;
    let ts = timestamp();
    match out {
        Some(prefix) => {
            let (csv, json) = write_sweep_outputs(&outcome, prefix, Some(&ts))?;
            eprintln!(
                "wrote {} rows to {} and {}",
                outcome.rows.len(),
                csv.display(),
                json.display()
            );
        }
        None => print!("{}", sweep_to_csv(&outcome, Some(&ts))),
    }
    for err in &outcome.point_errors {
        eprintln!(
            "point error: value={} policy={}: {}",
            err.value, err.policy, err.message
        );
    }
    Ok(if outcome.point_errors.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn cmd_structure(policy_path: &PathBuf, slice: Option<&str>, out: Option<&PathBuf>) -> Result<()> {
    let text = std::fs::read_to_string(policy_path)
        .with_context(|| format!("reading {}", policy_path.display()))?;
    let (table, _, _) = load_policy(&text)?;
    let slice = match slice {
        None => None,
        Some(s) => {
            let (a, b) = s
                .split_once(',')
                .ok_or_else(|| anyhow!("--slice wants `buffer,estimate`"))?;
            Some((a.trim().parse::<u32>()?, b.trim().parse::<u32>()?))
        }
    };
    let grid = experiment::dump_policy_structure(&table, slice)?;
    let rendered = grid.to_text();
    match out {
        Some(path) => {
            std::fs::write(path, rendered).with_context(|| format!("writing {}", path.display()))?
        }
        None => print!("{rendered}"),
    }
    Ok(())
}

fn cmd_verify() -> ExitCode {
    let report = run_verification();
    for check in &report.checks {
        let mark = if check.passed { "PASS" } else { "FAIL" };
        println!("{mark}  {} — {}", check.name, check.detail);
    }
    if report.passed() {
        println!("all checks passed");
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<ExitCode> = match &cli.command {
        Command::Solve {
            config,
            metric,
            out,
        } => cmd_solve(config, metric, out).map(|_| ExitCode::SUCCESS),
        Command::Simulate {
            policy,
            config,
            horizon,
            seeds,
            out,
            trace,
        } => cmd_simulate(
            policy,
            config,
            *horizon,
            seeds,
            out.as_ref(),
            trace.as_ref(),
        )
        .map(|_| ExitCode::SUCCESS),
        Command::Sweep {
            config,
            preset,
            list_presets,
            metric,
            sweep,
            values,
            policies,
            horizon,
            seeds,
            out,
        } => cmd_sweep(
            config,
            preset.as_deref(),
            *list_presets,
            metric.as_deref(),
            sweep.as_deref(),
            values.as_deref(),
            policies,
            *horizon,
            seeds,
            out.as_ref(),
        ),
        Command::Structure { policy, slice, out } => {
            cmd_structure(policy, slice.as_deref(), out.as_ref()).map(|_| ExitCode::SUCCESS)
        }
        Command::Verify => Ok(cmd_verify()),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
