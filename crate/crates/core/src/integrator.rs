//! Fixed-step RK4 integration on the product of simplices, trajectory
//! recording, convergence detection and batch (phase portrait) runs.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{field_into, ControlPolicy, Derivative};
use crate::error::{Error, Result};
use crate::game::{Output, Scenario, StateCombination, SIMPLEX_NEG_TOL};
use crate::stability::{decompose_vdot, lyapunov_v, TargetEquilibrium};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrationConfig {
    pub dt: f64,
    pub t_max: f64,
    /// Rows whose sum drifts from 1 by more than this are renormalized.
    pub renorm_tol: f64,
    /// Max-norm state change per step regarded as stationary.
    pub convergence_tol: f64,
    /// Consecutive stationary steps required to declare convergence.
    pub convergence_window: usize,
    /// Minimum coordinate of an admissible initial state. Zero admits boundary
    /// starts such as the target equilibrium itself.
    pub interior_floor: f64,
    /// Record every `record_stride`-th step (the final step is always kept).
    pub record_stride: usize,
    pub stop_on_convergence: bool,
    pub max_halvings: u32,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            t_max: 200.0,
            renorm_tol: 1e-12,
            convergence_tol: 1e-9,
            convergence_window: 100,
            interior_floor: 1e-6,
            record_stride: 1,
            stop_on_convergence: true,
            max_halvings: 20,
        }
    }
}

impl IntegrationConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!(
                    "{name} = {v} must be positive"
                )))
            }
        };
        positive("dt", self.dt)?;
        positive("renorm_tol", self.renorm_tol)?;
        positive("convergence_tol", self.convergence_tol)?;
        if !(self.t_max > self.dt) {
            return Err(Error::InvalidConfig(format!(
                "t_max = {} must exceed dt = {}",
                self.t_max, self.dt
            )));
        }
        if self.convergence_window == 0 || self.record_stride == 0 {
            return Err(Error::InvalidConfig(
                "convergence_window and record_stride must be at least 1".into(),
            ));
        }
        if !(self.interior_floor >= 0.0) {
            return Err(Error::InvalidConfig("interior_floor must be >= 0".into()));
        }
        Ok(())
    }
}

/// A vector field on the product of simplices.
pub trait VectorField: Sync {
    fn eval(&self, x: &StateCombination, out: &mut Derivative) -> Result<()>;
}

/// The subsidy-controlled replicator field; `d = 0` gives the free dynamics.
#[derive(Debug, Clone, Copy)]
pub struct ControlledField<'a> {
    pub scenario: &'a Scenario,
    pub policy: &'a ControlPolicy,
}

impl VectorField for ControlledField<'_> {
    fn eval(&self, x: &StateCombination, out: &mut Derivative) -> Result<()> {
        field_into(self.scenario, x, self.policy, out)
    }
}

impl<F> VectorField for F
where
    F: Fn(&StateCombination, &mut Derivative) -> Result<()> + Sync,
{
    fn eval(&self, x: &StateCombination, out: &mut Derivative) -> Result<()> {
        self(x, out)
    }
}

/// One classical RK4 step followed by clamping of round-off negatives and
/// per-row renormalization.
pub fn step_rk4<F: VectorField + ?Sized>(
    field: &F,
    x: &StateCombination,
    dt: f64,
    renorm_tol: f64,
) -> Result<StateCombination> {
    let (m, n) = (x.populations(), x.actions());
    let mut k1 = Derivative::zeros(m, n);
    let mut k2 = Derivative::zeros(m, n);
    let mut k3 = Derivative::zeros(m, n);
    let mut k4 = Derivative::zeros(m, n);

    field.eval(x, &mut k1)?;
    field.eval(&x.offset(k1.as_slice(), 0.5 * dt), &mut k2)?;
    field.eval(&x.offset(k2.as_slice(), 0.5 * dt), &mut k3)?;
    field.eval(&x.offset(k3.as_slice(), dt), &mut k4)?;

    let mut next = x.clone();
    for (idx, v) in next.as_mut_slice().iter_mut().enumerate() {
        *v += dt / 6.0
            * (k1.as_slice()[idx]
                + 2.0 * k2.as_slice()[idx]
                + 2.0 * k3.as_slice()[idx]
                + k4.as_slice()[idx]);
    }
    project(&mut next, renorm_tol)?;
    Ok(next)
}

fn project(x: &mut StateCombination, renorm_tol: f64) -> Result<()> {
    for k in 0..x.populations() {
        let row = x.row_mut(k);
        for (i, v) in row.iter_mut().enumerate() {
            if !v.is_finite() || *v < -SIMPLEX_NEG_TOL {
                return Err(Error::InvalidState(format!(
                    "x[{k}][{i}] = {v:e} left the simplex"
                )));
            }
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > renorm_tol {
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
    }
    Ok(())
}

/// Advances by `dt`, splitting the step in halves (up to `max_halvings`
/// times) when a stage leaves the field's domain.
fn advance<F: VectorField + ?Sized>(
    field: &F,
    x: &StateCombination,
    dt: f64,
    cfg: &IntegrationConfig,
    time: f64,
) -> Result<StateCombination> {
    let mut last_err = None;
    for halvings in 0..=cfg.max_halvings {
        let pieces = 1u64 << halvings;
        let sub = dt / pieces as f64;
        let mut cur = x.clone();
        let mut failed = false;
        for _ in 0..pieces {
            match step_rk4(field, &cur, sub, cfg.renorm_tol) {
                Ok(next) => cur = next,
                Err(e) => {
                    last_err = Some(e);
                    failed = true;
                    break;
                }
            }
        }
        if !failed {
            return Ok(cur);
        }
    }
    Err(Error::StepFailure {
        time,
        halvings: cfg.max_halvings,
        cause: last_err.map_or_else(String::new, |e| e.to_string()),
    })
}

/// Lyapunov quantities recorded alongside a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Observables {
    pub v: f64,
    pub vdot: f64,
    pub f1: f64,
    pub f2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StateCombination>,
    pub outputs: Vec<Output>,
    pub observables: Option<Vec<Observables>>,
    /// Time at which the online convergence window closed, if it did.
    pub converged_at: Option<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &StateCombination {
        self.states.last().expect("trajectories are never empty")
    }

    pub fn final_output(&self) -> &Output {
        self.outputs.last().expect("trajectories are never empty")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectories are never empty")
    }

    /// CSV with header `t,x_1^1,..,x_n^m,y_1,..,y_n[,V,Vdot,F1,F2]`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let (m, n) = match self.states.first() {
            Some(x) => (x.populations(), x.actions()),
            None => return Ok(()),
        };
        let mut header = vec!["t".to_string()];
        for k in 1..=m {
            for i in 1..=n {
                header.push(format!("x_{i}^{k}"));
            }
        }
        header.extend((1..=n).map(|i| format!("y_{i}")));
        if self.observables.is_some() {
            header.extend(["V", "Vdot", "F1", "F2"].map(String::from));
        }
        writeln!(w, "{}", header.join(","))?;
        for (idx, t) in self.times.iter().enumerate() {
            let mut fields: Vec<String> = vec![csv_float(t)];
            fields.extend(self.states[idx].as_slice().iter().map(csv_float));
            fields.extend(self.outputs[idx].iter().map(csv_float));
            if let Some(obs) = &self.observables {
                let o = obs[idx];
                fields.extend([o.v, o.vdot, o.f1, o.f2].iter().map(csv_float));
            }
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

/// Shortest round-trip form; switches to exponent notation for very small or
/// large magnitudes.
pub fn csv_float(x: &f64) -> String {
    format!("{x:?}")
}

fn observe(
    s: &Scenario,
    policy: &ControlPolicy,
    target: &TargetEquilibrium,
    x: &StateCombination,
) -> Observables {
    let v = lyapunov_v(x, target, s);
    match decompose_vdot(x, target, s, policy) {
        Ok(dec) => Observables {
            v,
            vdot: dec.vdot,
            f1: dec.f1,
            f2: dec.f2,
        },
        Err(_) => Observables {
            v,
            vdot: f64::NAN,
            f1: f64::NAN,
            f2: f64::NAN,
        },
    }
}

/// Integrates the controlled dynamics from `x0`.
pub fn simulate(
    s: &Scenario,
    policy: &ControlPolicy,
    x0: &StateCombination,
    cfg: &IntegrationConfig,
) -> Result<Trajectory> {
    simulate_observed(s, policy, x0, cfg, None)
}

/// As [`simulate`], additionally recording `V`, `V̇`, `F₁`, `F₂` relative to
/// `target` at every recorded step.
pub fn simulate_observed(
    s: &Scenario,
    policy: &ControlPolicy,
    x0: &StateCombination,
    cfg: &IntegrationConfig,
    target: Option<&TargetEquilibrium>,
) -> Result<Trajectory> {
    cfg.validate()?;
    policy.validate_for(s)?;
    s.check_state(x0)?;
    for k in 0..x0.populations() {
        for (i, &v) in x0.row(k).iter().enumerate() {
            if v < cfg.interior_floor {
                return Err(Error::NotInterior {
                    population: k,
                    action: i,
                    value: v,
                    floor: cfg.interior_floor,
                });
            }
        }
    }
    let field = ControlledField {
        scenario: s,
        policy,
    };
    // surfaces a start outside the controlled domain before any step is taken
    field.eval(x0, &mut Derivative::zeros(s.populations(), s.actions()))?;

    let steps = (cfg.t_max / cfg.dt - 1e-9).ceil() as usize;
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        outputs: Vec::new(),
        observables: target.map(|_| Vec::new()),
        converged_at: None,
    };
    let record = |traj: &mut Trajectory, t: f64, x: &StateCombination| {
        traj.times.push(t);
        traj.outputs.push(s.aggregate_output(x));
        if let (Some(obs), Some(eq)) = (traj.observables.as_mut(), target) {
            obs.push(observe(s, policy, eq, x));
        }
        traj.states.push(x.clone());
    };

    let mut x = x0.clone();
    record(&mut traj, 0.0, &x);
    let mut still = 0usize;
    for step in 1..=steps {
        let t_prev = (step - 1) as f64 * cfg.dt;
        let t = step as f64 * cfg.dt;
        let next = advance(&field, &x, cfg.dt, cfg, t_prev)?;
        if next.max_abs_diff(&x) < cfg.convergence_tol {
            still += 1;
        } else {
            still = 0;
        }
        x = next;
        let converged_now = still >= cfg.convergence_window && traj.converged_at.is_none();
        if converged_now {
            traj.converged_at = Some(t);
        }
        let stop = converged_now && cfg.stop_on_convergence;
        if step % cfg.record_stride == 0 || step == steps || stop {
            record(&mut traj, t, &x);
        }
        if stop {
            break;
        }
    }
    Ok(traj)
}

/// Result of [`detect_convergence`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceVerdict {
    pub converged: bool,
    /// Start of the trailing run of stationary steps.
    pub since: Option<f64>,
    pub limit: StateCombination,
}

/// A trajectory has converged when its trailing run of steps with max-norm
/// change below `convergence_tol` spans at least `convergence_window` steps,
/// or the whole trajectory if it is shorter than that.
pub fn detect_convergence(traj: &Trajectory, cfg: &IntegrationConfig) -> ConvergenceVerdict {
    let limit = traj.final_state().clone();
    let steps = traj.states.len().saturating_sub(1);
    let mut run = 0usize;
    for w in traj.states.windows(2).rev() {
        if w[1].max_abs_diff(&w[0]) < cfg.convergence_tol {
            run += 1;
        } else {
            break;
        }
    }
    let converged = run >= cfg.convergence_window.min(steps);
    ConvergenceVerdict {
        converged,
        since: converged.then(|| traj.times[steps - run]),
        limit,
    }
}

/// One trajectory per initial state, in input order. Trajectories run in
/// parallel; a failing start does not abort the batch.
pub fn phase_portrait(
    s: &Scenario,
    policy: &ControlPolicy,
    grid: &[StateCombination],
    cfg: &IntegrationConfig,
) -> Vec<Result<Trajectory>> {
    phase_portrait_observed(s, policy, grid, cfg, None)
}

pub fn phase_portrait_observed(
    s: &Scenario,
    policy: &ControlPolicy,
    grid: &[StateCombination],
    cfg: &IntegrationConfig,
    target: Option<&TargetEquilibrium>,
) -> Vec<Result<Trajectory>> {
    grid.par_iter()
        .map(|x0| simulate_observed(s, policy, x0, cfg, target))
        .collect()
}
