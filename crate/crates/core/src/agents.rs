//! Finite-population Monte Carlo: agents with fixed population membership
//! receive per-action subsidies `D y*_i / p_i` and revise by proportional
//! imitation of a random member of their own population.
//!
//! An agent revising from action `j` to a peer's action `i` switches with
//! probability `max(0, π_i - π_j) / R`, where `π` includes the subsidy. The
//! expected one-round change of the shares is then `(rate / R)` times the
//! controlled replicator field, so each round advances the mean-field clock
//! by `rate / R`. `R` is `a_max - a_min + d`, raised to the current payoff
//! spread when subsidies on rare actions exceed it.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlPolicy, Derivative};
use crate::error::{Error, Result};
use crate::game::{Output, Scenario, StateCombination, CARRIER_TOL};
use crate::integrator::csv_float;

pub const MIN_AGENTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PayoffMode {
    /// Payoff against the empirical output (no matching noise).
    #[default]
    Expected,
    /// Payoff from one match against a uniformly drawn agent of any population.
    SampledMatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    /// Probability that an agent gets a revision opportunity in a round.
    pub rate: f64,
    pub payoff_mode: PayoffMode,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            rate: 0.05,
            payoff_mode: PayoffMode::Expected,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "revision rate {} must lie in (0, 1]",
                self.rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AgentPopulation {
    n_actions: usize,
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    membership: Vec<u32>,
    action: Vec<u32>,
    seed: u64,
    rng: ChaCha8Rng,
    round: usize,
    time: f64,
}

impl AgentPopulation {
    pub fn len(&self) -> usize {
        self.action.len()
    }

    pub fn is_empty(&self) -> bool {
        self.action.is_empty()
    }

    pub fn population_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn membership(&self) -> &[u32] {
        &self.membership
    }

    pub fn actions(&self) -> &[u32] {
        &self.action
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn round(&self) -> usize {
        self.round
    }

    /// Mean-field time elapsed so far.
    pub fn time(&self) -> f64 {
        self.time
    }

    /// Per-population action counts.
    pub fn counts(&self) -> Vec<Vec<usize>> {
        let mut counts = vec![vec![0usize; self.n_actions]; self.sizes.len()];
        for (&k, &a) in self.membership.iter().zip(&self.action) {
            counts[k as usize][a as usize] += 1;
        }
        counts
    }

    /// Empirical per-population shares.
    pub fn shares(&self) -> StateCombination {
        let counts = self.counts();
        let data = counts
            .iter()
            .zip(&self.sizes)
            .flat_map(|(row, &size)| row.iter().map(move |&c| c as f64 / size as f64))
            .collect();
        StateCombination::from_flat(self.sizes.len(), self.n_actions, data)
            .expect("shape is consistent")
    }
}

/// Rounds `weights * total` to integers summing to `total`, giving leftover
/// units to the largest fractional parts (earlier index on ties).
fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let raw: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut out: Vec<usize> = raw.iter().map(|r| r.floor().max(0.0) as usize).collect();
    let assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        out[i] += 1;
    }
    out
}

/// Discretizes `x0` into `n_agents` agents. Population sizes are `round(v^k N)`
/// with the rounding remainder given to the largest population; action counts
/// within a population use largest-remainder rounding.
pub fn init_agents(
    s: &Scenario,
    x0: &StateCombination,
    n_agents: usize,
    seed: u64,
) -> Result<AgentPopulation> {
    if n_agents < MIN_AGENTS {
        return Err(Error::TooFewAgents(n_agents));
    }
    s.check_state(x0)?;
    let m = s.populations();
    let n = s.actions();
    let mut sizes: Vec<usize> = s
        .shares()
        .iter()
        .map(|v| (v * n_agents as f64).round() as usize)
        .collect();
    let largest = (0..m)
        .max_by(|&a, &b| s.share(a).total_cmp(&s.share(b)).then(b.cmp(&a)))
        .expect("at least two populations");
    let assigned: usize = sizes.iter().sum();
    if assigned > n_agents {
        sizes[largest] -= assigned - n_agents;
    } else {
        sizes[largest] += n_agents - assigned;
    }

    let mut membership = Vec::with_capacity(n_agents);
    let mut action = Vec::with_capacity(n_agents);
    let mut offsets = Vec::with_capacity(m);
    for (k, &size) in sizes.iter().enumerate() {
        offsets.push(membership.len());
        let counts = largest_remainder(x0.row(k), size);
        for (i, &c) in counts.iter().enumerate() {
            if x0.get(k, i) > CARRIER_TOL && c == 0 {
                return Err(Error::CannotRepresent {
                    population: k,
                    action: i,
                    size,
                });
            }
            membership.extend(std::iter::repeat_n(k as u32, c));
            action.extend(std::iter::repeat_n(i as u32, c));
        }
    }
    Ok(AgentPopulation {
        n_actions: n,
        sizes,
        offsets,
        membership,
        action,
        seed,
        rng: ChaCha8Rng::seed_from_u64(seed),
        round: 0,
        time: 0.0,
    })
}

/// State of the population at the start of a round and the subsidies paid in it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundStats {
    pub round: usize,
    /// Mean-field time at the start of the round.
    pub time: f64,
    pub empirical_y: Output,
    /// Agents per action over all populations.
    pub counts: Vec<usize>,
    pub population_shares: StateCombination,
    /// `D = d N`.
    pub total_subsidy: f64,
    pub per_agent_subsidy: Vec<f64>,
}

impl RoundStats {
    /// Total paid out: `Σ_i p_i * per_agent_subsidy[i]`.
    pub fn subsidy_paid(&self) -> f64 {
        self.counts
            .iter()
            .zip(&self.per_agent_subsidy)
            .map(|(&p, s)| p as f64 * s)
            .sum()
    }
}

/// Current statistics without advancing the population.
pub fn observe(pop: &AgentPopulation, policy: &ControlPolicy) -> Result<RoundStats> {
    let n = pop.n_actions;
    policy.validate()?;
    if policy.y_star.len() != n {
        return Err(Error::InvalidPolicy(format!(
            "y_star has {} entries, agents play {n} actions",
            policy.y_star.len()
        )));
    }
    let total = pop.len();
    let mut counts = vec![0usize; n];
    for &a in &pop.action {
        counts[a as usize] += 1;
    }
    let budget = policy.d * total as f64;
    let mut per_agent = vec![0.0; n];
    if !policy.is_off() {
        for i in 0..n {
            if policy.y_star[i] > CARRIER_TOL {
                if counts[i] == 0 {
                    return Err(Error::EmptyCarriedAction { action: i });
                }
                per_agent[i] = budget * policy.y_star[i] / counts[i] as f64;
            }
        }
    }
    Ok(RoundStats {
        round: pop.round,
        time: pop.time,
        empirical_y: Output(counts.iter().map(|&c| c as f64 / total as f64).collect()),
        counts,
        population_shares: pop.shares(),
        total_subsidy: budget,
        per_agent_subsidy: per_agent,
    })
}

/// Expected payoff (subsidy included) of each action in each population.
fn action_payoffs(s: &Scenario, y: &[f64], subsidy: &[f64]) -> Vec<Vec<f64>> {
    (0..s.populations())
        .map(|k| {
            (0..s.actions())
                .map(|i| s.expected_payoff(k, i, y) + subsidy[i])
                .collect()
        })
        .collect()
}

/// `max(a_max - a_min + d, spread)`; `spread` is the largest payoff gap
/// between two actions that an imitation could actually compare.
fn normalization(s: &Scenario, policy: &ControlPolicy, spread: f64) -> f64 {
    let (a_max, a_min) = s.payoff_range();
    (a_max - a_min + policy.d).max(spread)
}

fn present_spread(payoffs: &[Vec<f64>], present: impl Fn(usize, usize) -> bool) -> f64 {
    payoffs
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let vals = row
                .iter()
                .enumerate()
                .filter(|(i, _)| present(k, *i))
                .map(|(_, v)| *v);
            let (hi, lo) = vals.fold((f64::NEG_INFINITY, f64::INFINITY), |(h, l), v| {
                (h.max(v), l.min(v))
            });
            if hi >= lo {
                hi - lo
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

/// Plays one round: computes subsidies from the start-of-round counts, then
/// lets every agent revise against the start-of-round snapshot.
pub fn run_round(
    pop: &mut AgentPopulation,
    s: &Scenario,
    policy: &ControlPolicy,
    cfg: &AgentConfig,
) -> Result<RoundStats> {
    cfg.validate()?;
    let stats = observe(pop, policy)?;
    let counts = pop.counts();
    let present = |k: usize, i: usize| counts[k][i] > 0;
    let table = action_payoffs(s, &stats.empirical_y, &stats.per_agent_subsidy);
    let snapshot = pop.action.clone();

    let (norm, realized) = match cfg.payoff_mode {
        PayoffMode::Expected => (
            normalization(s, policy, present_spread(&table, present)),
            None,
        ),
        PayoffMode::SampledMatch => {
            let total = pop.len();
            let realized: Vec<f64> = (0..total)
                .map(|a| {
                    let opponent = snapshot[pop.rng.random_range(0..total)] as usize;
                    let k = pop.membership[a] as usize;
                    let i = snapshot[a] as usize;
                    s.payoff(k, i, opponent) + stats.per_agent_subsidy[i]
                })
                .collect();
            let (a_max, a_min) = s.payoff_range();
            let subs = stats
                .per_agent_subsidy
                .iter()
                .enumerate()
                .filter(|(i, _)| stats.counts[*i] > 0)
                .map(|(_, v)| *v);
            let (hi, lo) = subs.fold((f64::NEG_INFINITY, f64::INFINITY), |(h, l), v| {
                (h.max(v), l.min(v))
            });
            (
                normalization(s, policy, a_max - a_min + (hi - lo).max(0.0)),
                Some(realized),
            )
        }
    };

    let payoff_of = |a: usize| -> f64 {
        match &realized {
            Some(r) => r[a],
            None => table[pop.membership[a] as usize][snapshot[a] as usize],
        }
    };
    let mut next = snapshot.clone();
    for a in 0..pop.len() {
        if pop.rng.random::<f64>() >= cfg.rate {
            continue;
        }
        let k = pop.membership[a] as usize;
        let peer = pop.offsets[k] + pop.rng.random_range(0..pop.sizes[k]);
        if snapshot[peer] == snapshot[a] && realized.is_none() {
            continue;
        }
        let gain = payoff_of(peer) - payoff_of(a);
        if gain > 0.0 && pop.rng.random::<f64>() < gain / norm {
            next[a] = snapshot[peer];
        }
    }
    pop.action = next;
    pop.round += 1;
    pop.time += cfg.rate / norm;
    Ok(stats)
}

/// `rounds` rounds; returns `rounds + 1` entries, the last one describing the
/// state after the final round.
pub fn run(
    pop: &mut AgentPopulation,
    s: &Scenario,
    policy: &ControlPolicy,
    rounds: usize,
    cfg: &AgentConfig,
) -> Result<Vec<RoundStats>> {
    let mut series = Vec::with_capacity(rounds + 1);
    for _ in 0..rounds {
        series.push(run_round(pop, s, policy, cfg)?);
    }
    series.push(observe(pop, policy)?);
    Ok(series)
}

/// Runs until the mean-field clock reaches `t_end`.
pub fn run_until(
    pop: &mut AgentPopulation,
    s: &Scenario,
    policy: &ControlPolicy,
    t_end: f64,
    cfg: &AgentConfig,
) -> Result<Vec<RoundStats>> {
    let mut series = Vec::new();
    while pop.time < t_end {
        series.push(run_round(pop, s, policy, cfg)?);
    }
    series.push(observe(pop, policy)?);
    Ok(series)
}

/// Expected one-round change of the shares under the expected-payoff
/// protocol, summed pair by pair over who imitates whom, together with the
/// normalization `R` in force at `x`.
pub fn protocol_drift(
    s: &Scenario,
    policy: &ControlPolicy,
    x: &StateCombination,
    rate: f64,
) -> Result<(Derivative, f64)> {
    let (m, n) = (s.populations(), s.actions());
    let y = s.aggregate_output(x);
    let subsidy: Vec<f64> = (0..n)
        .map(|i| crate::dynamics::per_agent_subsidy(policy, &y, i))
        .collect::<Result<_>>()?;
    let table = action_payoffs(s, &y, &subsidy);
    let norm = normalization(s, policy, present_spread(&table, |k, i| x.get(k, i) > 0.0));
    let switch = |gain: f64| gain.max(0.0) / norm;
    let mut drift = Derivative::zeros(m, n);
    for (k, row) in table.iter().enumerate().take(m) {
        for i in 0..n {
            let mut inflow = 0.0;
            let mut outflow = 0.0;
            for j in 0..n {
                if i == j {
                    continue;
                }
                // a j-player copies an i-player, or the reverse
                inflow += x.get(k, j) * x.get(k, i) * switch(row[i] - row[j]);
                outflow += x.get(k, i) * x.get(k, j) * switch(row[j] - row[i]);
            }
            drift.as_mut_slice()[k * n + i] = rate * (inflow - outflow);
        }
    }
    Ok((drift, norm))
}

/// CSV with header `round,y_1..y_n,p_1..p_n,total_subsidy,t`.
pub fn write_series_csv<W: Write>(series: &[RoundStats], mut w: W) -> io::Result<()> {
    let n = match series.first() {
        Some(s) => s.empirical_y.len(),
        None => return Ok(()),
    };
    let mut header = vec!["round".to_string()];
    header.extend((1..=n).map(|i| format!("y_{i}")));
    header.extend((1..=n).map(|i| format!("p_{i}")));
    header.push("total_subsidy".into());
    header.push("t".into());
    writeln!(w, "{}", header.join(","))?;
    for st in series {
        let mut row = vec![st.round.to_string()];
        row.extend(st.empirical_y.iter().map(csv_float));
        row.extend(st.counts.iter().map(usize::to_string));
        row.push(csv_float(&st.total_subsidy));
        row.push(csv_float(&st.time));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
