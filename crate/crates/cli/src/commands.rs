use std::path::{Path, PathBuf};

use mfglab::analysis::{chaos_study, fit_rate, martingale_check, moment_check, nash_gap, Estimate, NashGapCurve};
use mfglab::io::{absorption_csv, flow_csv, record_csv, Matrix};
use mfglab::mfg::{consistency_residual, default_alpha, default_schedule, exit_positivity_check, picard_solve, PicardOptions};
use mfglab::model::{check_assumptions, ProbeRegion};
use mfglab::particle::{simulate_nplayer, Profile, SimConfig};
use mfglab::pde::{solve_killed_fp_with, FeedbackPolicy, MeanFieldInput};
use mfglab::{rng, Grids, Model, Policy, Report, Schedule};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, OUTPUT_DIR_ENV};
use crate::error::CliError;
use crate::output::{Artifacts, Manifest};

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    SolveMfg,
    SimulateNplayer,
    ChaosStudy,
    NashGap,
    Validate,
}

impl Command {
    pub const ALL: [Command; 5] =
        [Command::SolveMfg, Command::SimulateNplayer, Command::ChaosStudy, Command::NashGap, Command::Validate];

    pub fn name(self) -> &'static str {
        match self {
            Command::SolveMfg => "solve-mfg",
            Command::SimulateNplayer => "simulate-nplayer",
            Command::ChaosStudy => "chaos-study",
            Command::NashGap => "nash-gap",
            Command::Validate => "validate",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub directory: PathBuf,
    pub manifest: Manifest,
    pub summary: Value,
}

/// `explicit`, else `$MFGLAB_OUTPUT_DIR`, else the configured directory.
pub fn output_dir(config: &ExperimentConfig, explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(&config.output.directory),
    }
}

/// Runs `command` and writes its artifacts. A failed `validate` still writes
/// its report before returning [`CliError::ValidationFailed`].
pub fn run(command: Command, config: &ExperimentConfig, output: Option<&Path>) -> Result<RunOutcome, CliError> {
    let dir = output_dir(config, output);
    let model = config.model()?;
    let mut art = Artifacts::new(command.name(), &config.output);
    art.add(RESOLVED_CONFIG, config.to_toml());
    let ctx = |e: CliError| e.with_context(command.name());
    let (summary, failed) = match command {
        Command::SolveMfg => (solve_mfg(config, &model, &mut art).map_err(ctx)?, Vec::new()),
        Command::SimulateNplayer => (simulate(config, &model, &mut art).map_err(ctx)?, Vec::new()),
        Command::ChaosStudy => (chaos(config, &model, &mut art).map_err(ctx)?, Vec::new()),
        Command::NashGap => (nash(config, &model, &mut art).map_err(ctx)?, Vec::new()),
        Command::Validate => validate(config, &model, &mut art).map_err(ctx)?,
    };
    art.add_json("summary.json", &summary);
    let manifest = art.write(&dir)?;
    if !failed.is_empty() {
        return Err(CliError::ValidationFailed { failed });
    }
    Ok(RunOutcome { directory: dir, manifest, summary })
}

fn grids(config: &ExperimentConfig, model: &Model) -> Result<Grids, CliError> {
    let g = &config.grids;
    Ok(Grids::for_model(model, g.dt, g.cells, g.x_max).map_err(|e| e.context("grids"))?)
}

fn schedule(config: &ExperimentConfig, model: &Model, grids: &Grids) -> Result<Schedule, CliError> {
    Ok(match &config.mfg.schedule {
        Some(levels) => Schedule::new(levels.clone())?,
        None => default_schedule(model, grids, config.mfg.levels)?,
    })
}

fn options(config: &ExperimentConfig, model: &Model) -> PicardOptions<f64> {
    let m = &config.mfg;
    PicardOptions { damping: m.damping, tol: m.tol, max_iter: m.max_iter, alpha: m.alpha.unwrap_or(default_alpha(model)) }
}

fn solve(config: &ExperimentConfig, model: &Model, grids: Grids) -> Result<Report, CliError> {
    let schedule = schedule(config, model, &grids)?;
    Ok(picard_solve(model, &schedule, None, &options(config, model), grids)?)
}

/// Model at the last truncation level the fixed point used.
fn truncated(model: &Model, report: &Report) -> Result<Model, CliError> {
    Ok(match report.truncation_level_history.last() {
        Some(&k) => model.truncate(k)?,
        None => model.clone(),
    })
}

#[derive(Serialize)]
struct IterationLine {
    iteration: usize,
    truncation_level: f64,
    w1_sup: f64,
    mass_gap_sup: f64,
    weighted: f64,
}

fn report_summary(report: &Report) -> Value {
    let k = report.final_flow.rows() - 1;
    json!({
        "converged": report.converged,
        "iterations": report.iterations,
        "effective_iterations": report.effective_iterations(),
        "final_residual": report.last_residual(),
        "final_truncation_level": report.truncation_level_history.last(),
        "survivor_mass_at_horizon": report.final_flow.survivor_mass[k],
        "loss_at_horizon": report.final_flow.loss[k],
    })
}

fn solve_mfg(config: &ExperimentConfig, model: &Model, art: &mut Artifacts) -> Result<Value, CliError> {
    let g = grids(config, model)?;
    let report = solve(config, model, g)?;
    art.add_jsonl(
        "fixed_point.jsonl",
        report.residual_history.iter().zip(&report.truncation_level_history).enumerate().map(|(i, (r, &k))| {
            IterationLine {
                iteration: i + 1,
                truncation_level: k,
                w1_sup: r.w1_sup,
                mass_gap_sup: r.mass_gap_sup,
                weighted: r.weighted,
            }
        }),
    );
    art.add("flow.csv", flow_csv(&report.final_flow));
    art.add_matrix("density.bin", &Matrix::density(&report.final_flow));
    art.add_matrix("policy.bin", &Matrix::policy(&report.final_policy));
    art.add_matrix("value.bin", &Matrix::value(&report.final_value));
    art.add_matrix("slope.bin", &Matrix::slope(&report.final_value));
    Ok(report_summary(&report))
}

/// Policy named by `simulate.policy` and the model it is played in.
fn policy_for(config: &ExperimentConfig, model: &Model, g: Grids) -> Result<(Model, Policy, Option<Report>), CliError> {
    match config.simulate.policy.as_str() {
        "mfg" => {
            let report = solve(config, model, g)?;
            let m = truncated(model, &report)?;
            Ok((m, report.final_policy.clone(), Some(report)))
        }
        _ => Ok((model.clone(), FeedbackPolicy::uncontrolled(model, g), None)),
    }
}

fn simulate(config: &ExperimentConfig, model: &Model, art: &mut Artifacts) -> Result<Value, CliError> {
    let s = &config.simulate;
    let g = grids(config, model)?;
    let (m, policy, _) = policy_for(config, model, g)?;
    let base = SimConfig::new(s.n, config.grids.dt, config.seed).with_bridge(s.bridge);
    let record = simulate_nplayer(&m, Profile::Shared(&policy), &base.with_paths(s.store_paths))?;
    art.add("record.csv", record_csv(&record));
    art.add("absorption.csv", absorption_csv(&record));
    if let Some(p) = Matrix::paths(&record, config.seed) {
        art.add_matrix("paths.bin", &p);
    }
    let mut lines = String::from("replication,absorbed_fraction,bridge_hits\n");
    let mut fractions = Vec::with_capacity(s.replications);
    for r in 0..s.replications {
        let cfg = SimConfig { seed: rng::derive_seed(config.seed, r as u64), ..base };
        let rec = simulate_nplayer(&m, Profile::Shared(&policy), &cfg)
            .map_err(|e| e.context(format!("replication {r}")))?;
        let f = rec.absorbed_fraction();
        lines.push_str(&format!("{r},{f},{}\n", rec.bridge_hits));
        fractions.push(f);
    }
    art.add("replications.csv", lines);
    let e = Estimate::from_samples(&fractions);
    Ok(json!({
        "n": s.n,
        "policy": s.policy,
        "absorbed_fraction": record.absorbed_fraction(),
        "bridge_hits": record.bridge_hits,
        "replications": s.replications,
        "absorbed_fraction_mean": e.mean,
        "absorbed_fraction_se": e.se,
    }))
}

fn chaos(config: &ExperimentConfig, model: &Model, art: &mut Artifacts) -> Result<Value, CliError> {
    let g = grids(config, model)?;
    let report = solve(config, model, g)?;
    let m = truncated(model, &report)?;
    let st = &config.study;
    let table = chaos_study(
        &m,
        &report.final_policy,
        &report.final_flow,
        &st.n_list,
        config.simulate.replications,
        config.grids.dt,
        config.seed,
    )?;
    art.add("chaos.csv", table.to_csv());
    let fit = if table.rows.len() >= 3 { fit_rate(&table).ok() } else { None };
    Ok(json!({ "fixed_point": report_summary(&report), "rows": table.rows, "rate_fit": fit }))
}

fn nash(config: &ExperimentConfig, model: &Model, art: &mut Artifacts) -> Result<Value, CliError> {
    let g = grids(config, model)?;
    let report = solve(config, model, g)?;
    let mut curve = NashGapCurve { rows: Vec::new() };
    for (i, &n) in config.study.n_list.iter().enumerate() {
        let seed = rng::derive_seed(config.seed, i as u64);
        curve.rows.push(nash_gap(model, &report, n, config.simulate.replications, g, seed)?);
    }
    art.add("nash_gap.csv", curve.to_csv());
    Ok(json!({ "fixed_point": report_summary(&report), "rows": curve.rows }))
}

/// One entry of the validation report.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub anchor: &'static str,
    pub pass: bool,
    pub details: Value,
}

pub const ANCHOR_ASSUMPTIONS: &str = "standing assumptions: sub-linear growth, bounded control cost, Lipschitz drift";
pub const ANCHOR_MARTINGALE: &str = "stochastic exponential of the drift is a true martingale (mean one)";
pub const ANCHOR_MASS_BALANCE: &str = "killed forward equation: survivor mass + loss = 1";
pub const ANCHOR_ABSORPTION: &str = "absorbed fraction: forward equation against bridge-corrected particles";
pub const ANCHOR_CONSISTENCY: &str = "fixed point: law of the controlled state reproduces the flow";
pub const ANCHOR_EXIT: &str = "survivor mass stays positive up to the horizon";
pub const ANCHOR_MOMENTS: &str = "sup-norm moments bounded uniformly in the truncation level";

/// Balance tolerance per time step.
const BALANCE_PER_STEP: f64 = 1e-10;
/// Discretisation allowance between the forward equation and particles.
const ABSORPTION_SLACK: f64 = 0.01;
const CONSISTENCY_LIMIT: f64 = 0.05;
const MOMENT_SPREAD: f64 = 0.05;

fn validate(config: &ExperimentConfig, model: &Model, art: &mut Artifacts) -> Result<(Value, Vec<String>), CliError> {
    let g = grids(config, model)?;
    let s = &config.simulate;
    let seed = config.seed;
    let mut checks = Vec::new();

    let assumptions = check_assumptions(model, 2000, rng::derive_seed(seed, 1), ProbeRegion::default())?;
    checks.push(Check {
        name: "assumptions",
        anchor: ANCHOR_ASSUMPTIONS,
        pass: assumptions.all_pass(),
        details: json!(assumptions.checks),
    });

    let (m, policy, report) = policy_for(config, model, g)?;
    let killed = solve_killed_fp_with(&m, &policy, g, MeanFieldInput::SelfConsistent)?;
    let flow = &killed.flow;
    let kmax = g.time.steps;

    let mg = martingale_check(&m, &policy, flow, s.n_mc, rng::derive_seed(seed, 2))?;
    let dev = (mg.mean - 1.0).abs();
    checks.push(Check {
        name: "martingale",
        anchor: ANCHOR_MARTINGALE,
        pass: dev <= 3.0 * mg.se || dev <= 1e-12,
        details: json!(mg),
    });

    let bound = BALANCE_PER_STEP * kmax as f64;
    checks.push(Check {
        name: "mass_balance",
        anchor: ANCHOR_MASS_BALANCE,
        pass: killed.max_balance_error <= bound,
        details: json!({ "max_error": killed.max_balance_error, "bound": bound, "far_leak": killed.far_leak }),
    });

    let sim = SimConfig::new(s.n_mc, config.grids.dt, rng::derive_seed(seed, 3)).with_bridge(s.bridge);
    let record = simulate_nplayer(&m, Profile::Shared(&policy), &sim)?;
    let p_mc = record.absorbed_fraction();
    let p_fp = flow.loss[kmax];
    let se = (p_mc * (1.0 - p_mc) / s.n_mc as f64).sqrt();
    let tol = 4.0 * se + ABSORPTION_SLACK;
    checks.push(Check {
        name: "absorption_probability",
        anchor: ANCHOR_ABSORPTION,
        pass: (p_mc - p_fp).abs() <= tol,
        details: json!({ "particles": p_mc, "forward_equation": p_fp, "tolerance": tol }),
    });

    if let Some(report) = &report {
        let c = consistency_residual(&m, &report.final_policy, &report.final_flow, s.n_mc, rng::derive_seed(seed, 4))?;
        checks.push(Check {
            name: "fixed_point_consistency",
            anchor: ANCHOR_CONSISTENCY,
            pass: report.converged && c.total() <= CONSISTENCY_LIMIT,
            details: json!({ "converged": report.converged, "residual": c, "total": c.total(), "limit": CONSISTENCY_LIMIT }),
        });
    }

    checks.push(Check {
        name: "exit_positivity",
        anchor: ANCHOR_EXIT,
        pass: exit_positivity_check(flow),
        details: json!({ "survivor_mass_at_horizon": flow.survivor_mass[kmax] }),
    });

    let sched = schedule(config, model, &g)?;
    let moments = moment_check(
        model,
        Some(&policy),
        &sched,
        &config.study.alpha_list,
        s.n_mc,
        config.grids.dt,
        rng::derive_seed(seed, 5),
    )?;
    let mut moments_ok = true;
    let mut saturated_levels = 0;
    for &a in &config.study.alpha_list {
        let sat: Vec<f64> = moments.rows_for(a).filter(|r| r.saturated).map(|r| r.estimate).collect();
        saturated_levels = sat.len();
        if let (Some(first), Some(hi)) = (sat.first(), sat.iter().copied().reduce(f64::max)) {
            let lo = sat.iter().copied().fold(f64::INFINITY, f64::min);
            let identical = sat.iter().all(|v| v.to_bits() == first.to_bits());
            moments_ok &= identical && (hi - lo) <= MOMENT_SPREAD * hi.abs();
        }
    }
    checks.push(Check {
        name: "moments",
        anchor: ANCHOR_MOMENTS,
        pass: moments_ok,
        details: json!({ "saturated_levels": saturated_levels, "rows": moments.rows }),
    });

    art.add_jsonl("validation.jsonl", &checks);
    art.add("flow.csv", flow_csv(flow));
    let failed: Vec<String> = checks.iter().filter(|c| !c.pass).map(|c| c.name.to_string()).collect();
    let summary = json!({
        "checks": checks.iter().map(|c| json!({ "name": c.name, "anchor": c.anchor, "pass": c.pass })).collect::<Vec<_>>(),
        "all_pass": failed.is_empty(),
    });
    Ok((summary, failed))
}
