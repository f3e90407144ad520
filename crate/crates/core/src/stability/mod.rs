//! Global stabilization machinery: the Lyapunov function around a target
//! equilibrium, the split of its time derivative into a payoff-advantage term
//! `F₁` and a subsidy term `F₂`, the state-dependent gain bound `d̄ = -F₁/F₂`,
//! and a sampling verifier that recommends a stabilizing subsidy.
//!
//! For a target `x*` whose output is `y*`, every `d > max(0, sup d̄)` makes `x*`
//! globally asymptotically stable provided `x*` is the only equilibrium of
//! the free dynamics producing `y*` and `F₁ >= 0` on the set of states that
//! produce `y*`. The supremum is estimated by sampling, never certified.

mod local;
mod sup;
mod target_set;

pub use local::local_spectrum;
pub use sup::{estimate_sup_dbar, SupEstimate};
pub use target_set::{check_f1_on_xbar, find_target_equilibria, F1Check, TargetSet};

use serde::{Deserialize, Serialize};

use crate::dynamics::{field_uncontrolled, subsidy_weight, ControlPolicy};
use crate::error::{Error, Result};
use crate::game::{carrier, Output, Scenario, StateCombination};

/// Tolerance for membership of the target set `X*`.
pub const EQUILIBRIUM_TOL: f64 = 1e-9;
/// Below this `F₂` a state is treated as producing the target output.
pub const F2_FLOOR: f64 = 1e-12;
/// States with `|y - y*|∞` below this are excluded from the supremum.
pub const TUBE_RADIUS: f64 = 1e-6;
/// States with a carried aggregate share below this are excluded from the
/// supremum.
pub const BOUNDARY_MARGIN: f64 = 1e-6;
/// Relative inflation of the sup estimate.
pub const SAFETY_MARGIN: f64 = 0.1;
/// Absolute floor added to every recommendation.
pub const SAFETY_FLOOR: f64 = 1e-3;

/// An equilibrium of the free dynamics whose output is the target `y*`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetEquilibrium {
    pub x_star: StateCombination,
    pub y_star: Output,
    /// `C(x^{k*})` per population.
    pub carriers: Vec<Vec<usize>>,
}

impl TargetEquilibrium {
    /// Checks `aggregate_output(x*) = y*` and that `x*` is a rest point of the
    /// free dynamics, both within [`EQUILIBRIUM_TOL`].
    pub fn new(s: &Scenario, x_star: StateCombination, y_star: Output) -> Result<Self> {
        s.check_state(&x_star)?;
        if y_star.len() != s.actions() {
            return Err(Error::InvalidTarget(format!(
                "y* has {} entries, scenario has {} actions",
                y_star.len(),
                s.actions()
            )));
        }
        let gap = s.aggregate_output(&x_star).max_abs_diff(&y_star);
        if gap > EQUILIBRIUM_TOL {
            return Err(Error::InvalidTarget(format!(
                "x* aggregates to an output {gap:e} away from y*"
            )));
        }
        let residual = field_uncontrolled(s, &x_star).max_abs();
        if residual > EQUILIBRIUM_TOL {
            return Err(Error::InvalidTarget(format!(
                "x* is not a rest point of the free dynamics (|ẋ| = {residual:e})"
            )));
        }
        let carriers = x_star.rows().map(carrier).collect();
        Ok(Self {
            x_star,
            y_star,
            carriers,
        })
    }
}

/// `V(x) = Σ_k Σ_{i ∈ C(x^{k*})} -v^k x*_i log(x_i / x*_i)`; `+∞` when a
/// carried coordinate of `x` is zero.
pub fn lyapunov_v(x: &StateCombination, eq: &TargetEquilibrium, s: &Scenario) -> f64 {
    let mut v = 0.0;
    for (k, support) in eq.carriers.iter().enumerate() {
        for &i in support {
            let xi = x.get(k, i);
            if xi <= 0.0 {
                return f64::INFINITY;
            }
            let target = eq.x_star.get(k, i);
            v -= s.share(k) * target * (xi / target).ln();
        }
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VdotDecomposition {
    pub f1: f64,
    pub f2: f64,
    pub vdot: f64,
}

/// `F₁(x) = Σ_k v^k { u^k(x^{k*}, y) - u^k(x^k, y) }`.
pub fn payoff_advantage(x: &StateCombination, eq: &TargetEquilibrium, s: &Scenario) -> f64 {
    let y = s.aggregate_output(x);
    (0..s.populations())
        .map(|k| {
            s.share(k)
                * (s.average_payoff(k, eq.x_star.row(k), &y) - s.average_payoff(k, x.row(k), &y))
        })
        .sum()
}

/// `F₂(y) = Σ_{i ∈ C(y*)} (y*_i - y_i) y*_i / y_i`.
pub fn subsidy_gap(y: &[f64], y_star: &[f64]) -> Result<f64> {
    carrier(y_star)
        .into_iter()
        .map(|i| Ok((y_star[i] - y[i]) * subsidy_weight(y, y_star, i)?))
        .sum()
}

/// `V̇ = -F₁ - d F₂` along the controlled dynamics.
pub fn decompose_vdot(
    x: &StateCombination,
    eq: &TargetEquilibrium,
    s: &Scenario,
    policy: &ControlPolicy,
) -> Result<VdotDecomposition> {
    let f1 = payoff_advantage(x, eq, s);
    let f2 = subsidy_gap(&s.aggregate_output(x), &eq.y_star)?;
    Ok(VdotDecomposition {
        f1,
        f2,
        vdot: -f1 - policy.d * f2,
    })
}

/// The gain bound `d̄(x) = -F₁(x) / F₂(x)`, defined off the target-output set.
pub fn d_bar(x: &StateCombination, eq: &TargetEquilibrium, s: &Scenario) -> Result<f64> {
    let f2 = subsidy_gap(&s.aggregate_output(x), &eq.y_star)?;
    if f2 < F2_FLOOR {
        return Err(Error::OnTargetOutputSet(f2));
    }
    Ok(-payoff_advantage(x, eq, s) / f2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    /// Grid points per population edge for the sup search.
    pub grid_per_dim: usize,
    pub random_samples: usize,
    /// Coordinate-ascent sweeps from each of the best candidates.
    pub ascent_iters: usize,
    /// Hit-and-run samples on the target-output set.
    pub xbar_samples: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            grid_per_dim: 21,
            random_samples: 100_000,
            ascent_iters: 200,
            xbar_samples: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Refusal {
    /// No equilibrium of the free dynamics produces `y*`.
    EmptyTargetSet,
    /// More than one candidate (or a continuum) produces `y*`.
    NonUniqueTargetSet { candidates: usize, continuum: bool },
    /// `F₁` is negative somewhere on the target-output set.
    NegativeF1 { f1_min: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub seed: u64,
    pub grid_per_dim: usize,
    pub grid_points: usize,
    pub random_samples: usize,
    pub ascent_iters: usize,
    pub ascent_starts: usize,
    pub excluded_samples: usize,
    pub xbar_samples: usize,
    pub xbar_vertices: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub y_star: Output,
    pub x_star_candidates: Vec<TargetEquilibrium>,
    pub x_star_unique: bool,
    pub continuum: bool,
    pub sup_dbar_estimate: Option<f64>,
    pub argmax_state: Option<StateCombination>,
    pub f1_min_on_xbar: Option<f64>,
    pub f1_witness: Option<StateCombination>,
    pub recommended_d: Option<f64>,
    pub refusal: Option<Refusal>,
    pub margin: f64,
    pub floor: f64,
    pub provenance: Option<Provenance>,
}

impl StabilityReport {
    pub fn is_applicable(&self) -> bool {
        self.refusal.is_none()
    }

    /// Whether subsidy `d` meets the sufficient condition according to the
    /// estimated supremum (no safety margin applied).
    pub fn admits(&self, d: f64) -> bool {
        self.is_applicable() && self.sup_dbar_estimate.is_some_and(|sup| d > sup.max(0.0))
    }
}

/// `max(0, sup) * (1 + margin) + floor`.
pub fn inflate(sup_estimate: f64) -> f64 {
    sup_estimate.max(0.0) * (1.0 + SAFETY_MARGIN) + SAFETY_FLOOR
}

/// Finds the target equilibrium for `y_star`, checks the sign of `F₁` on the
/// target-output set, estimates `sup d̄` and recommends a subsidy. When the
/// sufficient condition cannot be applied the report carries a [`Refusal`]
/// and no recommendation.
pub fn recommend_d(s: &Scenario, y_star: &Output, cfg: &SamplingConfig) -> Result<StabilityReport> {
    let set = find_target_equilibria(s, y_star)?;
    let mut report = StabilityReport {
        y_star: y_star.clone(),
        x_star_unique: set.is_unique(),
        continuum: set.continuum,
        x_star_candidates: set.candidates.clone(),
        sup_dbar_estimate: None,
        argmax_state: None,
        f1_min_on_xbar: None,
        f1_witness: None,
        recommended_d: None,
        refusal: None,
        margin: SAFETY_MARGIN,
        floor: SAFETY_FLOOR,
        provenance: None,
    };
    if set.candidates.is_empty() {
        report.refusal = Some(Refusal::EmptyTargetSet);
        return Ok(report);
    }
    if !set.is_unique() {
        report.refusal = Some(Refusal::NonUniqueTargetSet {
            candidates: set.candidates.len(),
            continuum: set.continuum,
        });
        return Ok(report);
    }
    let eq = &set.candidates[0];

    let f1 = check_f1_on_xbar(eq, s, cfg.xbar_samples, cfg.seed)?;
    let sup = estimate_sup_dbar(eq, s, cfg);
    report.f1_min_on_xbar = Some(f1.f1_min);
    report.f1_witness = Some(f1.witness.clone());
    report.sup_dbar_estimate = Some(sup.value);
    report.argmax_state = sup.argmax.clone();
    report.provenance = Some(Provenance {
        seed: cfg.seed,
        grid_per_dim: cfg.grid_per_dim,
        grid_points: sup.grid_points,
        random_samples: sup.random_samples,
        ascent_iters: cfg.ascent_iters,
        ascent_starts: sup.ascent_starts,
        excluded_samples: sup.excluded,
        xbar_samples: f1.samples,
        xbar_vertices: f1.vertices,
    });
    if f1.f1_min < -EQUILIBRIUM_TOL {
        report.refusal = Some(Refusal::NegativeF1 { f1_min: f1.f1_min });
    } else {
        report.recommended_d = Some(inflate(sup.value));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::three_population_example;
    use approx::assert_abs_diff_eq;

    fn boundary_target(s: &Scenario) -> TargetEquilibrium {
        TargetEquilibrium::new(
            s,
            StateCombination::from_first_action_shares(&[1.0, 1.0, 1.0]).unwrap(),
            Output(vec![1.0, 0.0]),
        )
        .unwrap()
    }

    #[test]
    fn target_equilibrium_validation() {
        let s = three_population_example();
        let eq = boundary_target(&s);
        assert_eq!(eq.carriers, vec![vec![0], vec![0], vec![0]]);
        // wrong output
        assert!(TargetEquilibrium::new(
            &s,
            StateCombination::from_first_action_shares(&[1.0, 1.0, 1.0]).unwrap(),
            Output(vec![0.8, 0.2]),
        )
        .is_err());
        // right output, not a rest point
        let x = StateCombination::from_first_action_shares(&[0.5, 0.5, 0.5]).unwrap();
        assert!(TargetEquilibrium::new(&s, x, Output(vec![0.5, 0.5])).is_err());
    }

    #[test]
    fn lyapunov_examples() {
        let s = three_population_example();
        let eq = boundary_target(&s);
        assert_eq!(lyapunov_v(&eq.x_star, &eq, &s), 0.0);
        let half = StateCombination::uniform_rows(3, &[0.5, 0.5]);
        assert_abs_diff_eq!(lyapunov_v(&half, &eq, &s), 2f64.ln(), epsilon = 1e-15);
        let dead = StateCombination::from_first_action_shares(&[0.0, 0.5, 0.5]).unwrap();
        assert_eq!(lyapunov_v(&dead, &eq, &s), f64::INFINITY);
    }

    #[test]
    fn vdot_examples() {
        let s = three_population_example();
        let eq = boundary_target(&s);
        let p = ControlPolicy::new(1.2, vec![1.0, 0.0]).unwrap();
        let half = StateCombination::uniform_rows(3, &[0.5, 0.5]);
        let dec = decompose_vdot(&half, &eq, &s, &p).unwrap();
        assert_abs_diff_eq!(dec.f1, 0.15, epsilon = 1e-14);
        assert_abs_diff_eq!(dec.f2, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(dec.vdot, -1.35, epsilon = 1e-14);

        let at = decompose_vdot(&eq.x_star, &eq, &s, &p).unwrap();
        assert_eq!((at.f1, at.f2, at.vdot), (0.0, 0.0, 0.0));

        let interior = TargetEquilibrium::new(
            &s,
            StateCombination::from_first_action_shares(&[0.0, 1.0, 1.0]).unwrap(),
            Output(vec![0.8, 0.2]),
        )
        .unwrap();
        // another state producing y = (0.8, 0.2)
        let x = StateCombination::from_first_action_shares(&[1.0, 1.0, 0.6]).unwrap();
        let p = ControlPolicy::new(1.5, vec![0.8, 0.2]).unwrap();
        assert_eq!(decompose_vdot(&x, &interior, &s, &p).unwrap().f2, 0.0);
    }

    #[test]
    fn d_bar_examples() {
        let s = three_population_example();
        let eq = boundary_target(&s);
        let half = StateCombination::uniform_rows(3, &[0.5, 0.5]);
        assert_abs_diff_eq!(d_bar(&half, &eq, &s).unwrap(), -0.15, epsilon = 1e-14);
        assert!(matches!(
            d_bar(&eq.x_star, &eq, &s),
            Err(Error::OnTargetOutputSet(_))
        ));
        // approaching the target-output set along population 1 keeps d̄ bounded
        // near 1; along population 2 it tends to -1
        let near = StateCombination::from_first_action_shares(&[1.0 - 1e-7, 1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(d_bar(&near, &eq, &s).unwrap(), 1.0, epsilon = 1e-6);
        let near = StateCombination::from_first_action_shares(&[1.0, 1.0 - 1e-7, 1.0]).unwrap();
        assert_abs_diff_eq!(d_bar(&near, &eq, &s).unwrap(), -1.0, epsilon = 1e-6);
    }

    #[test]
    fn inflation() {
        assert_abs_diff_eq!(inflate(1.0), 1.101, epsilon = 1e-15);
        assert_eq!(inflate(-3.0), SAFETY_FLOOR);
    }
}
