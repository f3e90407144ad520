use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use replicator_core::agents::{init_agents, run, write_series_csv, AgentConfig, PayoffMode};
use replicator_core::integrator::phase_portrait_observed;
use replicator_core::simplex::interior_grid;
use replicator_core::stability::Refusal;
use replicator_core::{
    csv_float, detect_convergence, find_target_equilibria, recommend_d, simulate,
    validate_scenario, ControlPolicy, Error, IntegrationConfig, Output, SamplingConfig, Scenario,
    ScenarioFile, StateCombination, TargetEquilibrium, Trajectory,
};
use serde::Serialize;

use crate::manifest::{AgentSettings, CommandKind, RunManifest};
use crate::output::{sha256_hex, write_csv, write_json, Meta};
use crate::{Common, Sampling, States};

pub const EXIT_INPUT: u8 = 1;
pub const EXIT_NUMERIC: u8 = 2;
pub const EXIT_INAPPLICABLE: u8 = 3;
pub const EXIT_AGENTS: u8 = 4;

const DEFAULT_OUT: &str = "out";
const DEFAULT_TOLERANCE: f64 = 1e-3;
const DEFAULT_SWEEP_GRID: usize = 5;
const DEFAULT_PORTRAIT_STRIDE: usize = 10;

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    fn input(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_INPUT,
            error: error.into(),
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::DomainViolation { .. } | Error::StepFailure { .. } | Error::OnTargetOutputSet(_) => {
            EXIT_NUMERIC
        }
        Error::Unsupported(_) => EXIT_INAPPLICABLE,
        Error::EmptyCarriedAction { .. } => EXIT_AGENTS,
        _ => EXIT_INPUT,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: exit_code(&e),
            error: e.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self::input(error)
    }
}

type CmdResult<T = ()> = Result<T, Failure>;

pub enum Request {
    Simulate {
        common: Common,
        states: States,
    },
    Portrait {
        common: Common,
        states: States,
    },
    Verify {
        common: Common,
        sampling: Sampling,
    },
    Sweep {
        common: Common,
        states: States,
        d_values: Vec<f64>,
        tolerance: Option<f64>,
    },
    Agents {
        common: Common,
        states: States,
        n_agents: Option<usize>,
        rounds: Option<usize>,
        rate: Option<f64>,
        sampled_match: bool,
    },
}

fn parse_values(text: &str) -> CmdResult<Vec<f64>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| Failure::input(anyhow!("--x0 value {v:?}: {e}")))
        })
        .collect()
}

fn read_scenario(path: &Path) -> CmdResult<(Scenario, String)> {
    let bytes = fs::read(path).with_context(|| format!("reading scenario {}", path.display()))?;
    let raw: ScenarioFile = serde_json::from_slice(&bytes)
        .map_err(|e| Failure::input(anyhow!("scenario {}: {e}", path.display())))?;
    let s = validate_scenario(raw)
        .map_err(|e| Failure::input(anyhow!("scenario {}: {e}", path.display())))?;
    Ok((s, sha256_hex(&bytes)))
}

fn read_policy(path: &Path) -> CmdResult<ControlPolicy> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading policy {}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::input(anyhow!("policy {}: {e}", path.display())))
}

/// Builds the manifest from the command line, or loads and checks a replayed
/// one. Explicit flags override replayed values.
fn resolve(kind: CommandKind, common: &Common) -> CmdResult<(RunManifest, Scenario)> {
    let mut manifest = match &common.manifest {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading manifest {}", path.display()))?;
            let m: RunManifest = serde_json::from_str(&text)
                .map_err(|e| Failure::input(anyhow!("manifest {}: {e}", path.display())))?;
            if m.command != kind {
                return Err(Failure::input(anyhow!(
                    "manifest {} was written by `{:?}`, not `{kind:?}`",
                    path.display(),
                    m.command
                )));
            }
            m
        }
        None => {
            let scenario = common
                .scenario
                .clone()
                .ok_or_else(|| Failure::input(anyhow!("--scenario is required")))?;
            let policy = common.policy.as_deref().map(read_policy).transpose()?;
            RunManifest {
                command: kind,
                scenario,
                scenario_sha256: String::new(),
                policy,
                x0: Vec::new(),
                grid: None,
                out: PathBuf::from(DEFAULT_OUT),
                seed: 0,
                integration: IntegrationConfig {
                    record_stride: if kind == CommandKind::Portrait {
                        DEFAULT_PORTRAIT_STRIDE
                    } else {
                        1
                    },
                    ..Default::default()
                },
                sampling: SamplingConfig::default(),
                d_values: Vec::new(),
                tolerance: DEFAULT_TOLERANCE,
                agents: AgentSettings {
                    n_agents: 10_000,
                    rounds: 1_000,
                    config: AgentConfig::default(),
                },
            }
        }
    };
    let (s, hash) = read_scenario(&manifest.scenario)?;
    if common.manifest.is_some() && hash != manifest.scenario_sha256 {
        return Err(Failure::input(anyhow!(
            "scenario {} changed since the manifest was written",
            manifest.scenario.display()
        )));
    }
    manifest.scenario_sha256 = hash;
    if let Some(out) = &common.out {
        manifest.out = out.clone();
    }
    if let Some(seed) = common.seed {
        manifest.seed = seed;
    }
    let cfg = &mut manifest.integration;
    if let Some(dt) = common.dt {
        cfg.dt = dt;
    }
    if let Some(t) = common.t_max {
        cfg.t_max = t;
    }
    if let Some(stride) = common.record_stride {
        cfg.record_stride = stride;
    }
    if common.no_early_stop {
        cfg.stop_on_convergence = false;
    }
    cfg.validate()?;
    if let Some(p) = &manifest.policy {
        p.validate_for(&s)?;
    }
    manifest.sampling.seed = manifest.seed;
    Ok((manifest, s))
}

fn apply_states(manifest: &mut RunManifest, states: &States) -> CmdResult {
    if !states.x0.is_empty() {
        manifest.x0 = states
            .x0
            .iter()
            .map(|v| parse_values(v))
            .collect::<CmdResult<_>>()?;
    }
    if states.grid.is_some() {
        manifest.grid = states.grid;
    }
    Ok(())
}

fn initial_states(manifest: &RunManifest, s: &Scenario) -> CmdResult<Vec<StateCombination>> {
    let (m, n) = (s.populations(), s.actions());
    let mut all = Vec::new();
    for values in &manifest.x0 {
        let x = if n == 2 && values.len() == m {
            StateCombination::from_first_action_shares(values)?
        } else if values.len() == m * n {
            StateCombination::from_flat(m, n, values.clone())?
        } else {
            return Err(Failure::input(anyhow!(
                "--x0 needs {} values ({m} populations × {n} actions){}, got {}",
                m * n,
                if n == 2 {
                    format!(" or {m} action-1 shares")
                } else {
                    String::new()
                },
                values.len()
            )));
        };
        s.check_state(&x)?;
        all.push(x);
    }
    if let Some(g) = manifest.grid {
        if g == 0 {
            return Err(Failure::input(anyhow!("--grid must be positive")));
        }
        all.extend(interior_grid(m, n, g));
    }
    Ok(all)
}

/// The policy actually applied: none when absent or `d = 0`.
fn effective_policy(manifest: &RunManifest, s: &Scenario) -> ControlPolicy {
    match &manifest.policy {
        Some(p) if !p.is_off() => p.clone(),
        _ => ControlPolicy::off(s.actions()),
    }
}

fn unique_target(s: &Scenario, policy: &ControlPolicy) -> Option<TargetEquilibrium> {
    if policy.is_off() {
        return None;
    }
    let set = find_target_equilibria(s, &policy.y_star).ok()?;
    set.is_unique().then(|| set.candidates[0].clone())
}

fn prepare_out(manifest: &RunManifest) -> CmdResult<Meta> {
    fs::create_dir_all(&manifest.out)
        .with_context(|| format!("creating output directory {}", manifest.out.display()))?;
    write_json(&manifest.out.join("manifest.json"), manifest)?;
    Ok(Meta::new(manifest.seed, &manifest.scenario_sha256))
}

fn first_error(runs: Vec<replicator_core::Result<Trajectory>>) -> CmdResult<Vec<Trajectory>> {
    runs.into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| Failure {
                code: exit_code(&e),
                error: anyhow!("initial state #{i}: {e}"),
            })
        })
        .collect()
}

#[derive(Serialize)]
struct TrajectorySummary {
    index: usize,
    file: String,
    x0: Vec<Vec<f64>>,
    converged: bool,
    converged_at: Option<f64>,
    final_time: f64,
    limit: Vec<Vec<f64>>,
    limit_output: Output,
    final_v: Option<f64>,
    distance_to_target: Option<f64>,
}

fn summarize(
    index: usize,
    file: String,
    x0: &StateCombination,
    traj: &Trajectory,
    cfg: &IntegrationConfig,
    target: Option<&TargetEquilibrium>,
) -> TrajectorySummary {
    let verdict = detect_convergence(traj, cfg);
    TrajectorySummary {
        index,
        file,
        x0: x0.to_rows(),
        converged: traj.converged_at.is_some() || verdict.converged,
        converged_at: traj.converged_at.or(verdict.since),
        final_time: traj.final_time(),
        limit: verdict.limit.to_rows(),
        limit_output: traj.final_output().clone(),
        final_v: traj
            .observables
            .as_ref()
            .and_then(|o| o.last())
            .map(|o| o.v),
        distance_to_target: target.map(|eq| verdict.limit.max_abs_diff(&eq.x_star)),
    }
}

/// Provenance, initial states, per-run summaries and the unique target, if any.
type Batch = (
    Meta,
    Vec<StateCombination>,
    Vec<TrajectorySummary>,
    Option<TargetEquilibrium>,
);

fn integrate_batch(manifest: &RunManifest, s: &Scenario, prefix: &str) -> CmdResult<Batch> {
    let starts = initial_states(manifest, s)?;
    if starts.is_empty() {
        return Err(Failure::input(anyhow!(
            "no initial states: give --x0 and/or --grid"
        )));
    }
    let policy = effective_policy(manifest, s);
    let target = unique_target(s, &policy);
    let meta = prepare_out(manifest)?;
    let runs = first_error(phase_portrait_observed(
        s,
        &policy,
        &starts,
        &manifest.integration,
        target.as_ref(),
    ))?;
    let mut summaries = Vec::with_capacity(runs.len());
    for (i, (x0, traj)) in starts.iter().zip(&runs).enumerate() {
        let file = format!("{prefix}_{i:04}.csv");
        write_csv(&manifest.out.join(&file), &meta, |w| traj.write_csv(w))?;
        summaries.push(summarize(
            i,
            file,
            x0,
            traj,
            &manifest.integration,
            target.as_ref(),
        ));
    }
    Ok((meta, starts, summaries, target))
}

fn cmd_simulate(common: Common, states: States) -> CmdResult {
    let (mut manifest, s) = resolve(CommandKind::Simulate, &common)?;
    apply_states(&mut manifest, &states)?;
    let (meta, _, summaries, target) = integrate_batch(&manifest, &s, "trajectory")?;

    #[derive(Serialize)]
    struct Summary<'a> {
        meta: &'a Meta,
        policy: Option<ControlPolicy>,
        target: Option<Vec<Vec<f64>>>,
        trajectories: &'a [TrajectorySummary],
    }
    let policy = effective_policy(&manifest, &s);
    write_json(
        &manifest.out.join("summary.json"),
        &Summary {
            meta: &meta,
            policy: (!policy.is_off()).then_some(policy),
            target: target.map(|eq| eq.x_star.to_rows()),
            trajectories: &summaries,
        },
    )?;
    for t in &summaries {
        println!(
            "{}: converged={} t={} limit={:?}",
            t.file, t.converged, t.final_time, t.limit
        );
    }
    Ok(())
}

fn cmd_portrait(common: Common, states: States) -> CmdResult {
    let (mut manifest, s) = resolve(CommandKind::Portrait, &common)?;
    apply_states(&mut manifest, &states)?;
    let (meta, starts, summaries, _) = integrate_batch(&manifest, &s, "trajectory")?;
    let (m, n) = (s.populations(), s.actions());
    write_csv(&manifest.out.join("index.csv"), &meta, |w| {
        let mut header = vec![
            "index".to_string(),
            "file".into(),
            "converged".into(),
            "t_final".into(),
        ];
        for prefix in ["start", "end"] {
            for k in 1..=m {
                for i in 1..=n {
                    header.push(format!("{prefix}_x_{i}^{k}"));
                }
            }
        }
        writeln!(w, "{}", header.join(","))?;
        for (x0, t) in starts.iter().zip(&summaries) {
            let mut row = vec![
                t.index.to_string(),
                t.file.clone(),
                t.converged.to_string(),
                csv_float(&t.final_time),
            ];
            row.extend(x0.as_slice().iter().map(csv_float));
            row.extend(t.limit.iter().flatten().map(csv_float));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    })?;
    println!(
        "{} trajectories written to {}",
        summaries.len(),
        manifest.out.display()
    );
    Ok(())
}

fn explain(refusal: &Refusal, y_star: &Output) -> String {
    match refusal {
        Refusal::EmptyTargetSet => format!(
            "no rest point of the free dynamics produces y* = {:?}; this target cannot be stabilized",
            y_star.0
        ),
        Refusal::NonUniqueTargetSet {
            candidates,
            continuum,
        } => format!(
            "{candidates} {} produce y* = {:?}; the stability condition needs exactly one",
            if *continuum { "vertices of a continuum of rest points" } else { "rest points" },
            y_star.0
        ),
        Refusal::NegativeF1 { f1_min } => format!(
            "F1 reaches {f1_min:e} < 0 on the target-output set; the stability condition does not apply"
        ),
    }
}

fn cmd_verify(common: Common, sampling: Sampling) -> CmdResult {
    let (mut manifest, s) = resolve(CommandKind::Verify, &common)?;
    let cfg = &mut manifest.sampling;
    if let Some(v) = sampling.grid_per_dim {
        cfg.grid_per_dim = v;
    }
    if let Some(v) = sampling.samples {
        cfg.random_samples = v;
    }
    if let Some(v) = sampling.ascent_iters {
        cfg.ascent_iters = v;
    }
    if let Some(v) = sampling.xbar_samples {
        cfg.xbar_samples = v;
    }
    let policy = manifest
        .policy
        .clone()
        .ok_or_else(|| Failure::input(anyhow!("verify needs --policy with a target y_star")))?;
    let meta = prepare_out(&manifest)?;
    let report = recommend_d(&s, &policy.y_star, &manifest.sampling)?;

    #[derive(Serialize)]
    struct ReportFile<'a> {
        meta: &'a Meta,
        applicable: bool,
        /// Whether the policy's own `d` exceeds the estimated supremum.
        policy_d: f64,
        policy_d_admitted: bool,
        report: &'a replicator_core::StabilityReport,
    }
    write_json(
        &manifest.out.join("report.json"),
        &ReportFile {
            meta: &meta,
            applicable: report.is_applicable(),
            policy_d: policy.d,
            policy_d_admitted: report.admits(policy.d),
            report: &report,
        },
    )?;
    if let Some(refusal) = &report.refusal {
        return Err(Failure {
            code: EXIT_INAPPLICABLE,
            error: anyhow!(explain(refusal, &policy.y_star)),
        });
    }
    println!(
        "x* = {:?}; sup d_bar ~ {:.6}; F1 min on target-output set {:.3e}; recommended d = {:.6}",
        report.x_star_candidates[0].x_star.to_rows(),
        report.sup_dbar_estimate.unwrap_or(f64::NAN),
        report.f1_min_on_xbar.unwrap_or(f64::NAN),
        report.recommended_d.unwrap_or(f64::NAN),
    );
    Ok(())
}

fn cmd_sweep(
    common: Common,
    states: States,
    d_values: Vec<f64>,
    tolerance: Option<f64>,
) -> CmdResult {
    let (mut manifest, s) = resolve(CommandKind::Sweep, &common)?;
    apply_states(&mut manifest, &states)?;
    if common.manifest.is_none() || !d_values.is_empty() {
        manifest.d_values = d_values;
    }
    if let Some(tol) = tolerance {
        manifest.tolerance = tol;
    }
    if manifest.x0.is_empty() && manifest.grid.is_none() {
        manifest.grid = Some(DEFAULT_SWEEP_GRID);
    }
    if let Some(d) = manifest
        .d_values
        .iter()
        .find(|d| !(d.is_finite() && **d >= 0.0))
    {
        return Err(Failure::input(anyhow!(
            "subsidy level {d} must be finite and non-negative"
        )));
    }
    let y_star = manifest
        .policy
        .as_ref()
        .map(|p| p.y_star.clone())
        .ok_or_else(|| Failure::input(anyhow!("sweep needs --policy with a target y_star")))?;
    let set = find_target_equilibria(&s, &y_star)?;
    if !set.is_unique() {
        return Err(Failure {
            code: EXIT_INAPPLICABLE,
            error: anyhow!(
                "sweep needs a unique target equilibrium for y* = {:?}, found {}{}",
                y_star.0,
                set.candidates.len(),
                if set.continuum { " (continuum)" } else { "" }
            ),
        });
    }
    let x_star = set.candidates[0].x_star.clone();
    let starts = initial_states(&manifest, &s)?;
    let meta = prepare_out(&manifest)?;
    // only the endpoint matters here
    let cfg = IntegrationConfig {
        record_stride: usize::MAX,
        ..manifest.integration.clone()
    };
    let mut rows = Vec::with_capacity(manifest.d_values.len());
    for &d in &manifest.d_values {
        let policy = if d == 0.0 {
            ControlPolicy::off(s.actions())
        } else {
            ControlPolicy::new(d, y_star.0.clone())?
        };
        let runs = first_error(phase_portrait_observed(&s, &policy, &starts, &cfg, None))?;
        let distances: Vec<f64> = runs
            .iter()
            .map(|t| t.final_state().max_abs_diff(&x_star))
            .collect();
        let hits = distances
            .iter()
            .filter(|v| **v < manifest.tolerance)
            .count();
        let max = distances.iter().copied().fold(0.0, f64::max);
        rows.push((d, hits as f64 / starts.len() as f64, max));
    }
    write_csv(&manifest.out.join("sweep.csv"), &meta, |w| {
        writeln!(w, "d,converged_fraction,max_final_distance")?;
        for (d, frac, max) in &rows {
            writeln!(w, "{},{},{}", csv_float(d), csv_float(frac), csv_float(max))?;
        }
        Ok(())
    })?;
    for (d, frac, max) in &rows {
        println!("d={d}: converged fraction {frac}, max final distance {max:e}");
    }
    Ok(())
}

fn cmd_agents(
    common: Common,
    states: States,
    n_agents: Option<usize>,
    rounds: Option<usize>,
    rate: Option<f64>,
    sampled_match: bool,
) -> CmdResult {
    let (mut manifest, s) = resolve(CommandKind::Agents, &common)?;
    apply_states(&mut manifest, &states)?;
    let settings = &mut manifest.agents;
    if let Some(v) = n_agents {
        settings.n_agents = v;
    }
    if let Some(v) = rounds {
        settings.rounds = v;
    }
    if let Some(v) = rate {
        settings.config.rate = v;
    }
    if sampled_match {
        settings.config.payoff_mode = PayoffMode::SampledMatch;
    }
    settings.config.validate()?;
    let starts = initial_states(&manifest, &s)?;
    let [x0] = starts.as_slice() else {
        return Err(Failure::input(anyhow!(
            "agents needs exactly one initial state (--x0), got {}",
            starts.len()
        )));
    };
    let policy = effective_policy(&manifest, &s);
    let settings = &manifest.agents;
    let mut pop = init_agents(&s, x0, settings.n_agents, manifest.seed)?;
    let meta = prepare_out(&manifest)?;
    let series = run(&mut pop, &s, &policy, settings.rounds, &settings.config)?;

    // mean-field reference on the agents' clock
    let dt = manifest.integration.dt;
    let horizon = pop.time();
    let reference = simulate(
        &s,
        &policy,
        x0,
        &IntegrationConfig {
            t_max: horizon.max(dt) + 2.0 * dt,
            stop_on_convergence: false,
            record_stride: 1,
            interior_floor: 0.0,
            ..manifest.integration.clone()
        },
    )?;
    let y_at = |t: f64| -> Vec<f64> {
        let pos = ((t / dt).floor() as usize).min(reference.len() - 2);
        let w = (t - reference.times[pos]) / dt;
        let (a, b) = (&reference.outputs[pos], &reference.outputs[pos + 1]);
        a.iter()
            .zip(b.iter())
            .map(|(p, q)| (1.0 - w) * p + w * q)
            .collect()
    };
    let mut max_dev = 0.0f64;
    let mut budget_err = 0.0f64;
    for st in &series {
        let y = y_at(st.time);
        max_dev = max_dev.max(st.empirical_y.max_abs_diff(&y));
        budget_err = budget_err.max((st.subsidy_paid() - st.total_subsidy).abs());
    }
    let last = series.last().expect("run returns at least one entry");

    write_csv(&manifest.out.join("agents.csv"), &meta, |w| {
        write_series_csv(&series, w)
    })?;
    #[derive(Serialize)]
    struct AgentSummary<'a> {
        meta: &'a Meta,
        n_agents: usize,
        population_sizes: &'a [usize],
        rounds: usize,
        config: &'a AgentConfig,
        final_time: f64,
        final_empirical_y: &'a Output,
        final_ode_y: Vec<f64>,
        /// `sup_t |ŷ(t) - y(t)|∞` against the mean-field ODE.
        max_deviation: f64,
        /// Largest per-round `|Σ p_i s_i - D|`.
        budget_error: f64,
    }
    write_json(
        &manifest.out.join("agents_summary.json"),
        &AgentSummary {
            meta: &meta,
            n_agents: pop.len(),
            population_sizes: pop.population_sizes(),
            rounds: settings.rounds,
            config: &settings.config,
            final_time: last.time,
            final_empirical_y: &last.empirical_y,
            final_ode_y: y_at(last.time),
            max_deviation: max_dev,
            budget_error: budget_err,
        },
    )?;
    println!(
        "{} rounds (t = {:.4}): final y_hat = {:?}, max deviation from ODE {:.4}",
        settings.rounds, last.time, last.empirical_y.0, max_dev
    );
    Ok(())
}

pub fn execute(request: Request) -> CmdResult {
    match request {
        Request::Simulate { common, states } => cmd_simulate(common, states),
        Request::Portrait { common, states } => cmd_portrait(common, states),
        Request::Verify { common, sampling } => cmd_verify(common, sampling),
        Request::Sweep {
            common,
            states,
            d_values,
            tolerance,
        } => cmd_sweep(common, states, d_values, tolerance),
        Request::Agents {
            common,
            states,
            n_agents,
            rounds,
            rate,
            sampled_match,
        } => cmd_agents(common, states, n_agents, rounds, rate, sampled_match),
    }
}
