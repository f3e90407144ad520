//! Replicator vector fields with and without the output-feedback subsidy, the
//! subsidy weights `f_i`, and the bounds that define the invariant region.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{carrier, Output, Scenario, StateCombination, CARRIER_TOL};

/// Below this aggregate share a carried action is treated as having left the
/// controlled domain.
pub const DOMAIN_TOL: f64 = 1e-12;

/// Target output `y*` and average subsidy per agent `d`. `d = 0` switches the
/// subsidy off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlPolicy {
    pub d: f64,
    pub y_star: Output,
}

impl ControlPolicy {
    pub fn new(d: f64, y_star: Vec<f64>) -> Result<Self> {
        let policy = Self {
            d,
            y_star: Output(y_star),
        };
        policy.validate()?;
        Ok(policy)
    }

    /// The uncontrolled dynamics. The target is irrelevant when `d = 0`.
    pub fn off(n: usize) -> Self {
        Self {
            d: 0.0,
            y_star: Output(vec![1.0 / n as f64; n]),
        }
    }

    pub fn is_off(&self) -> bool {
        self.d == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d.is_finite() && self.d >= 0.0) {
            return Err(Error::InvalidPolicy(format!(
                "subsidy d = {} must be finite and non-negative",
                self.d
            )));
        }
        Output::new(self.y_star.0.clone()).map(|_| ())
    }

    pub fn validate_for(&self, s: &Scenario) -> Result<()> {
        self.validate()?;
        if self.y_star.len() != s.actions() {
            return Err(Error::InvalidPolicy(format!(
                "y_star has {} entries, scenario has {} actions",
                self.y_star.len(),
                s.actions()
            )));
        }
        Ok(())
    }
}

/// `f_i(y) = y*_i / y_i` on the carrier of `y*`, zero elsewhere.
pub fn subsidy_weight(y: &[f64], y_star: &[f64], i: usize) -> Result<f64> {
    if y_star[i] <= CARRIER_TOL {
        return Ok(0.0);
    }
    if !(y[i] >= DOMAIN_TOL) {
        return Err(Error::DomainViolation {
            action: i,
            value: y[i],
        });
    }
    Ok(y_star[i] / y[i])
}

/// Subsidy received by one agent playing action `i`: `d f_i(y)`, the continuum
/// limit of `D y*_i / p_i`.
pub fn per_agent_subsidy(policy: &ControlPolicy, y: &[f64], i: usize) -> Result<f64> {
    Ok(policy.d * subsidy_weight(y, &policy.y_star, i)?)
}

/// Time derivative of a [`StateCombination`]; rows are tangent to the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivative {
    m: usize,
    n: usize,
    data: Vec<f64>,
}

impl Derivative {
    pub fn zeros(m: usize, n: usize) -> Self {
        Self {
            m,
            n,
            data: vec![0.0; m * n],
        }
    }

    pub fn populations(&self) -> usize {
        self.m
    }

    pub fn actions(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize) -> f64 {
        self.data[k * self.n + i]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.n..(k + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.data
            .chunks_exact(self.n)
            .map(|r| r.iter().sum())
            .collect()
    }

    /// `ẏ_i = sum_k v^k ẋ^k_i`.
    pub fn aggregate(&self, s: &Scenario) -> Vec<f64> {
        let mut dy = vec![0.0; self.n];
        for k in 0..self.m {
            for (d, dx) in dy.iter_mut().zip(self.row(k)) {
                *d += s.share(k) * dx;
            }
        }
        dy
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }
}

/// Writes the controlled field into `out`. With `policy.d == 0` this is the
/// uncontrolled replicator equation and never fails.
pub fn field_into(
    s: &Scenario,
    x: &StateCombination,
    policy: &ControlPolicy,
    out: &mut Derivative,
) -> Result<()> {
    let (m, n) = (s.populations(), s.actions());
    debug_assert_eq!((x.populations(), x.actions()), (m, n));
    debug_assert_eq!((out.m, out.n), (m, n));
    let y = s.aggregate_output(x);

    let weights = if policy.is_off() {
        None
    } else {
        Some(
            (0..n)
                .map(|i| subsidy_weight(&y, &policy.y_star, i))
                .collect::<Result<Vec<_>>>()?,
        )
    };

    let mut payoffs = vec![0.0; n];
    for k in 0..m {
        let xk = x.row(k);
        for (i, p) in payoffs.iter_mut().enumerate() {
            *p = s.expected_payoff(k, i, &y);
        }
        let avg: f64 = xk.iter().zip(&payoffs).map(|(a, b)| a * b).sum();
        let dx = &mut out.data[k * n..(k + 1) * n];
        for i in 0..n {
            dx[i] = (payoffs[i] - avg) * xk[i];
        }
        if let Some(f) = &weights {
            let mean_f: f64 = xk.iter().zip(f).map(|(a, b)| a * b).sum();
            for i in 0..n {
                dx[i] += policy.d * xk[i] * (f[i] - mean_f);
            }
        }
    }
    Ok(())
}

/// Replicator dynamics without subsidy.
pub fn field_uncontrolled(s: &Scenario, x: &StateCombination) -> Derivative {
    let mut out = Derivative::zeros(s.populations(), s.actions());
    field_into(s, x, &ControlPolicy::off(s.actions()), &mut out)
        .expect("uncontrolled field is total");
    out
}

/// Replicator dynamics with the output-feedback subsidy.
pub fn field_controlled(
    s: &Scenario,
    x: &StateCombination,
    policy: &ControlPolicy,
) -> Result<Derivative> {
    let mut out = Derivative::zeros(s.populations(), s.actions());
    field_into(s, x, policy, &mut out)?;
    Ok(out)
}

/// Payoff extremes, per-action thresholds `M_i` below which `ẏ_i > 0`, and the
/// margin `ε` of the invariant region.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionBounds {
    pub a_max: f64,
    pub a_min: f64,
    pub thresholds: Vec<f64>,
    pub epsilon: f64,
}

impl RegionBounds {
    /// Whether the aggregate output keeps every carried action at or above `ε`.
    pub fn contains(&self, y: &[f64], y_star: &[f64]) -> bool {
        carrier(y_star).into_iter().all(|i| y[i] >= self.epsilon)
    }
}

/// `ε` is half of the smallest threshold on the carrier of `y*`.
pub const EPSILON_FACTOR: f64 = 0.5;

pub fn region_bounds(s: &Scenario, policy: &ControlPolicy) -> Result<RegionBounds> {
    policy.validate_for(s)?;
    if policy.d <= 0.0 {
        return Err(Error::InvalidPolicy(
            "region bounds need a positive subsidy".into(),
        ));
    }
    let (a_max, a_min) = s.payoff_range();
    let scale = policy.d / (a_max - a_min + policy.d);
    let thresholds: Vec<f64> = policy
        .y_star
        .iter()
        .map(|&ys| if ys > CARRIER_TOL { scale * ys } else { 0.0 })
        .collect();
    let min_m = carrier(&policy.y_star)
        .into_iter()
        .map(|i| thresholds[i])
        .fold(f64::INFINITY, f64::min);
    Ok(RegionBounds {
        a_max,
        a_min,
        thresholds,
        epsilon: EPSILON_FACTOR * min_m,
    })
}
