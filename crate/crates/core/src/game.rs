//! Static game structure: populations, payoff matrices, population states and
//! the aggregate output observed by the controller.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on `sum(v) == 1`.
pub const SHARE_SUM_TOL: f64 = 1e-12;
/// Absolute tolerance on simplex row sums.
pub const SIMPLEX_SUM_TOL: f64 = 1e-9;
/// Coordinates below `-SIMPLEX_NEG_TOL` are outside the simplex.
pub const SIMPLEX_NEG_TOL: f64 = 1e-12;
/// Strict-positivity threshold used by [`carrier`].
pub const CARRIER_TOL: f64 = 1e-12;

/// On-disk scenario description.
///
/// ```json
/// { "populations": [ { "share": 0.2, "payoff": [[2, 1], [3, 4]] }, ... ] }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub populations: Vec<PopulationSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    pub share: f64,
    pub payoff: Vec<Vec<f64>>,
}

/// A validated multipopulation game: `m` populations sharing `n` actions, each
/// with its own payoff matrix and population share.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScenarioFile", into = "ScenarioFile")]
pub struct Scenario {
    m: usize,
    n: usize,
    // row-major n x n per population
    payoff: Vec<Vec<f64>>,
    shares: Vec<f64>,
}

impl Scenario {
    /// Builds a scenario from payoff matrices and shares, checking every invariant.
    pub fn new(payoffs: Vec<Vec<Vec<f64>>>, shares: Vec<f64>) -> Result<Self> {
        let file = ScenarioFile {
            populations: payoffs
                .into_iter()
                .zip(shares.iter().copied().chain(std::iter::repeat(f64::NAN)))
                .map(|(payoff, share)| PopulationSpec { share, payoff })
                .collect(),
        };
        if file.populations.len() != shares.len() {
            return Err(Error::DimensionMismatch {
                population: file.populations.len().min(shares.len()),
                detail: format!(
                    "{} payoff matrices but {} shares",
                    file.populations.len(),
                    shares.len()
                ),
            });
        }
        validate_scenario(file)
    }

    pub fn populations(&self) -> usize {
        self.m
    }

    pub fn actions(&self) -> usize {
        self.n
    }

    pub fn share(&self, k: usize) -> f64 {
        self.shares[k]
    }

    pub fn shares(&self) -> &[f64] {
        &self.shares
    }

    /// Entry `a^k_{ij}`.
    #[inline]
    pub fn payoff(&self, k: usize, i: usize, j: usize) -> f64 {
        self.payoff[k][i * self.n + j]
    }

    /// Row `i` of `A^k`.
    #[inline]
    pub fn payoff_row(&self, k: usize, i: usize) -> &[f64] {
        &self.payoff[k][i * self.n..(i + 1) * self.n]
    }

    pub fn payoff_matrix(&self, k: usize) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| self.payoff_row(k, i).to_vec())
            .collect()
    }

    /// `(a_max, a_min)` over all entries of all payoff matrices.
    pub fn payoff_range(&self) -> (f64, f64) {
        self.payoff
            .iter()
            .flatten()
            .fold((f64::NEG_INFINITY, f64::INFINITY), |(hi, lo), &a| {
                (hi.max(a), lo.min(a))
            })
    }

    /// `u^k(e_i, y) = e_i^T A^k y`.
    #[inline]
    pub fn expected_payoff(&self, k: usize, i: usize, y: &[f64]) -> f64 {
        self.payoff_row(k, i)
            .iter()
            .zip(y)
            .map(|(a, y)| a * y)
            .sum()
    }

    /// `u^k(x^k, y) = (x^k)^T A^k y`.
    pub fn average_payoff(&self, k: usize, xk: &[f64], y: &[f64]) -> f64 {
        xk.iter()
            .enumerate()
            .map(|(i, &xi)| xi * self.expected_payoff(k, i, y))
            .sum()
    }

    /// Adds `b` to every entry of column `j` of `A^k`. Replicator dynamics are
    /// invariant under this transformation.
    pub fn local_shift(&self, k: usize, j: usize, b: f64) -> Scenario {
        let mut out = self.clone();
        for i in 0..self.n {
            out.payoff[k][i * self.n + j] += b;
        }
        out
    }

    /// The aggregate output `y_i = sum_k v^k x^k_i`.
    pub fn aggregate_output(&self, x: &StateCombination) -> Output {
        let mut y = vec![0.0; self.n];
        for k in 0..self.m {
            let v = self.shares[k];
            for (yi, xi) in y.iter_mut().zip(x.row(k)) {
                *yi += v * xi;
            }
        }
        Output(y)
    }

    /// Checks that `x` has this scenario's shape and lies in `Δ^m`.
    pub fn check_state(&self, x: &StateCombination) -> Result<()> {
        if x.populations() != self.m || x.actions() != self.n {
            return Err(Error::InvalidState(format!(
                "state is {}x{}, scenario is {}x{}",
                x.populations(),
                x.actions(),
                self.m,
                self.n
            )));
        }
        x.check_simplex()
    }

    pub fn to_file(&self) -> ScenarioFile {
        ScenarioFile::from(self.clone())
    }
}

impl From<Scenario> for ScenarioFile {
    fn from(s: Scenario) -> Self {
        ScenarioFile {
            populations: (0..s.m)
                .map(|k| PopulationSpec {
                    share: s.shares[k],
                    payoff: s.payoff_matrix(k),
                })
                .collect(),
        }
    }
}

impl TryFrom<ScenarioFile> for Scenario {
    type Error = Error;

    fn try_from(raw: ScenarioFile) -> Result<Self> {
        validate_scenario(raw)
    }
}

/// Validates a parsed scenario description.
pub fn validate_scenario(raw: ScenarioFile) -> Result<Scenario> {
    let m = raw.populations.len();
    if m < 2 {
        return Err(Error::TooFewPopulations(m));
    }
    let n = raw.populations[0].payoff.len();
    if n < 2 {
        return Err(Error::TooFewActions(n));
    }
    let mut payoff = Vec::with_capacity(m);
    let mut shares = Vec::with_capacity(m);
    for (k, pop) in raw.populations.into_iter().enumerate() {
        if pop.payoff.len() != n {
            return Err(Error::DimensionMismatch {
                population: k,
                detail: format!("expected {n} rows, found {}", pop.payoff.len()),
            });
        }
        let mut flat = Vec::with_capacity(n * n);
        for (i, row) in pop.payoff.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    population: k,
                    detail: format!("row {i} has {} entries, expected {n}", row.len()),
                });
            }
            for (j, &a) in row.iter().enumerate() {
                if !a.is_finite() {
                    return Err(Error::NonFinitePayoff {
                        population: k,
                        row: i,
                        col: j,
                    });
                }
            }
            flat.extend_from_slice(row);
        }
        if !(pop.share > 0.0 && pop.share < 1.0) {
            return Err(Error::ShareOutOfRange {
                population: k,
                share: pop.share,
            });
        }
        payoff.push(flat);
        shares.push(pop.share);
    }
    let total: f64 = shares.iter().sum();
    if (total - 1.0).abs() > SHARE_SUM_TOL {
        return Err(Error::SharesDoNotSumToOne(total));
    }
    Ok(Scenario {
        m,
        n,
        payoff,
        shares,
    })
}

/// Per-population action shares `x[k][i]`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct StateCombination {
    m: usize,
    n: usize,
    data: Vec<f64>,
}

impl StateCombination {
    /// Builds a state from rows. Rows must be non-empty and of equal length;
    /// simplex membership is not checked here (see [`Self::check_simplex`]).
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if m == 0 || n == 0 {
            return Err(Error::InvalidState("empty state".into()));
        }
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidState("rows have different lengths".into()));
        }
        Ok(Self {
            m,
            n,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn from_flat(m: usize, n: usize, data: Vec<f64>) -> Result<Self> {
        if m == 0 || n == 0 || data.len() != m * n {
            return Err(Error::InvalidState(format!(
                "{} values cannot form a {m}x{n} state",
                data.len()
            )));
        }
        Ok(Self { m, n, data })
    }

    /// Two-action shorthand: `first[k]` is the share of action 1 in population `k`.
    pub fn from_first_action_shares(first: &[f64]) -> Result<Self> {
        Self::new(first.iter().map(|&p| vec![p, 1.0 - p]).collect())
    }

    /// Every population plays the same mixed strategy `z`.
    pub fn uniform_rows(m: usize, z: &[f64]) -> Self {
        Self {
            m,
            n: z.len(),
            data: z.repeat(m),
        }
    }

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
    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.n..(k + 1) * self.n]
    }

    #[inline]
    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.n..(k + 1) * self.n]
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize) -> f64 {
        self.data[k * self.n + i]
    }

    #[inline]
    pub fn set(&mut self, k: usize, i: usize, value: f64) {
        self.data[k * self.n + i] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    /// Share of action 1 in each population.
    pub fn first_action_shares(&self) -> Vec<f64> {
        self.rows().map(|r| r[0]).collect()
    }

    /// `self + h * dir`, entrywise.
    pub fn offset(&self, dir: &[f64], h: f64) -> Self {
        let mut out = self.clone();
        for (o, d) in out.data.iter_mut().zip(dir) {
            *o += h * d;
        }
        out
    }

    /// Max-norm distance to another state of the same shape.
    pub fn max_abs_diff(&self, other: &StateCombination) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn min_coordinate(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Each row within `SIMPLEX_SUM_TOL` of 1, no coordinate below `-SIMPLEX_NEG_TOL`.
    pub fn check_simplex(&self) -> Result<()> {
        for (k, row) in self.rows().enumerate() {
            if let Some(i) = row
                .iter()
                .position(|&v| !v.is_finite() || v < -SIMPLEX_NEG_TOL)
            {
                return Err(Error::InvalidState(format!(
                    "x[{k}][{i}] = {} is negative or not finite",
                    row[i]
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_SUM_TOL {
                return Err(Error::InvalidState(format!(
                    "row {k} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }
}

impl TryFrom<Vec<Vec<f64>>> for StateCombination {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows)
    }
}

impl From<StateCombination> for Vec<Vec<f64>> {
    fn from(x: StateCombination) -> Self {
        x.to_rows()
    }
}

/// Aggregate action shares `y` over all populations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Output(pub Vec<f64>);

impl Output {
    /// Validates `y ∈ Δ` with the simplex tolerances.
    pub fn new(y: Vec<f64>) -> Result<Self> {
        if y.len() < 2 {
            return Err(Error::InvalidTarget(format!(
                "output has {} entries, need at least 2",
                y.len()
            )));
        }
        if let Some(i) = y
            .iter()
            .position(|&v| !v.is_finite() || v < -SIMPLEX_NEG_TOL)
        {
            return Err(Error::InvalidTarget(format!(
                "y[{i}] = {} is negative or not finite",
                y[i]
            )));
        }
        let sum: f64 = y.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_SUM_TOL {
            return Err(Error::InvalidTarget(format!("entries sum to {sum}")));
        }
        Ok(Self(y))
    }

    /// Pure output concentrated on action `i` of `n`.
    pub fn vertex(n: usize, i: usize) -> Self {
        let mut y = vec![0.0; n];
        y[i] = 1.0;
        Self(y)
    }

    pub fn max_abs_diff(&self, other: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Deref for Output {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Indices with strictly positive share (threshold [`CARRIER_TOL`]).
pub fn carrier(z: &[f64]) -> Vec<usize> {
    z.iter()
        .enumerate()
        .filter(|(_, &v)| v > CARRIER_TOL)
        .map(|(i, _)| i)
        .collect()
}

/// The three-population, two-action example game used throughout the docs
/// and tests.
pub fn three_population_example() -> Scenario {
    Scenario::new(
        vec![
            vec![vec![2.0, 1.0], vec![3.0, 4.0]],
            vec![vec![3.0, 1.0], vec![2.0, 4.0]],
            vec![vec![3.0, 4.0], vec![1.0, 2.0]],
        ],
        vec![0.2, 0.3, 0.5],
    )
    .expect("example scenario is valid")
}
