//! Random case generators and property checks shared by the proptest suite
//! and the acceptance gate. Each check draws one case from `rng` and returns
//! the number of non-vacuous assertions it made, or a description of the
//! first violation.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use replicator_core::dynamics::{field_controlled, field_uncontrolled, region_bounds};
use replicator_core::simplex::{sample_simplex, sample_state};
use replicator_core::stability::{decompose_vdot, lyapunov_v, subsidy_gap};
use replicator_core::{
    carrier, find_target_equilibria, simulate, ControlPolicy, Error, IntegrationConfig, Output,
    Scenario, StateCombination, TargetEquilibrium,
};

pub type Check = fn(&mut ChaCha8Rng) -> Result<usize, String>;

pub const FIELD_TOL: f64 = 1e-10;
pub const EQ_TOL: f64 = 1e-9;

pub fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.random_range(2..=4), rng.random_range(2..=4))
}

fn raw_payoffs(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Vec<Vec<Vec<f64>>> {
    (0..m)
        .map(|_| {
            (0..n)
                .map(|_| (0..n).map(|_| rng.random_range(-5.0..5.0)).collect())
                .collect()
        })
        .collect()
}

fn raw_shares(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..m).map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|v| v / total).collect()
}

/// Payoffs uniform on [-5, 5], population shares bounded away from zero.
pub fn random_scenario(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Scenario {
    Scenario::new(raw_payoffs(rng, m, n), raw_shares(rng, m)).unwrap()
}

/// A vertex, a face point with one zero coordinate, or an interior point.
pub fn random_target(rng: &mut ChaCha8Rng, n: usize) -> Output {
    match rng.random_range(0..3) {
        0 => Output::vertex(n, rng.random_range(0..n)),
        1 if n >= 3 => {
            let mut y = sample_simplex(rng, n);
            let drop = rng.random_range(0..n);
            y[drop] = 0.0;
            let total: f64 = y.iter().sum();
            Output(y.iter().map(|v| v / total).collect())
        }
        _ => Output(sample_simplex(rng, n)),
    }
}

pub fn random_policy(rng: &mut ChaCha8Rng, n: usize) -> ControlPolicy {
    ControlPolicy::new(rng.random_range(0.1..10.0), random_target(rng, n).0).unwrap()
}

/// A state with some coordinates possibly set to exactly zero.
pub fn state_with_faces(rng: &mut ChaCha8Rng, m: usize, n: usize) -> StateCombination {
    let mut x = sample_state(rng, m, n);
    for k in 0..m {
        if rng.random_bool(0.3) {
            let i = rng.random_range(0..n);
            let row = x.row_mut(k);
            row[i] = 0.0;
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= total);
        }
    }
    x
}

/// Random rest point of the free dynamics: a random support per population
/// with random weights, and payoff rows offset so that every supported action
/// earns the same payoff against the resulting output.
pub fn constructed_equilibrium(
    rng: &mut ChaCha8Rng,
    m: usize,
    n: usize,
) -> (Scenario, TargetEquilibrium) {
    let mut payoffs = raw_payoffs(rng, m, n);
    let shares = raw_shares(rng, m);
    let mut rows = Vec::with_capacity(m);
    for _ in 0..m {
        let size = rng.random_range(1..=n);
        let mut support: Vec<usize> = (0..n).collect();
        for i in 0..n {
            let j = rng.random_range(i..n);
            support.swap(i, j);
        }
        support.truncate(size);
        let w = sample_simplex(rng, size);
        let mut row = vec![0.0; n];
        for (&i, wi) in support.iter().zip(w) {
            row[i] = wi;
        }
        rows.push(row);
    }
    let y: Vec<f64> = (0..n)
        .map(|i| (0..m).map(|k| shares[k] * rows[k][i]).sum())
        .collect();
    for k in 0..m {
        let u: Vec<f64> = (0..n)
            .map(|i| payoffs[k][i].iter().zip(&y).map(|(a, b)| a * b).sum())
            .collect();
        let level = rng.random_range(-5.0..5.0);
        for i in carrier(&rows[k]) {
            for a in payoffs[k][i].iter_mut() {
                *a += level - u[i];
            }
        }
    }
    let s = Scenario::new(payoffs, shares).unwrap();
    let x_star = StateCombination::new(rows).unwrap();
    let y_star = s.aggregate_output(&x_star);
    let eq = TargetEquilibrium::new(&s, x_star, y_star).unwrap();
    (s, eq)
}

fn row_sum_violation(d: &replicator_core::Derivative) -> Option<f64> {
    d.row_sums().into_iter().find(|r| r.abs() >= FIELD_TOL)
}

/// Both fields are tangent to the simplex.
pub fn tangency(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let (m, n) = dims(rng);
    let s = random_scenario(rng, m, n);
    let x = state_with_faces(rng, m, n);
    let policy = random_policy(rng, n);
    if let Some(r) = row_sum_violation(&field_uncontrolled(&s, &x)) {
        return Err(format!("free field row sum {r:e}"));
    }
    match field_controlled(&s, &x, &policy) {
        Ok(f) => match row_sum_violation(&f) {
            Some(r) => Err(format!("controlled field row sum {r:e}")),
            None => Ok(2),
        },
        Err(Error::DomainViolation { .. }) => Ok(1),
        Err(e) => Err(e.to_string()),
    }
}

/// Adding a constant to one column of one payoff matrix leaves both fields
/// unchanged.
pub fn shift_invariance(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let (m, n) = dims(rng);
    let s = random_scenario(rng, m, n);
    let x = sample_state(rng, m, n);
    let policy = random_policy(rng, n);
    let (k, j, b) = (
        rng.random_range(0..m),
        rng.random_range(0..n),
        rng.random_range(-10.0..=10.0),
    );
    let shifted = s.local_shift(k, j, b);
    let pairs = [
        (field_uncontrolled(&s, &x), field_uncontrolled(&shifted, &x)),
        (
            field_controlled(&s, &x, &policy).map_err(|e| e.to_string())?,
            field_controlled(&shifted, &x, &policy).map_err(|e| e.to_string())?,
        ),
    ];
    for (a, b) in &pairs {
        for (p, q) in a.as_slice().iter().zip(b.as_slice()) {
            if (p - q).abs() >= FIELD_TOL {
                return Err(format!(
                    "shift of column {j} in population {k} moved {p} to {q}"
                ));
            }
        }
    }
    Ok(2)
}

/// Below its threshold `M_i`, a carried action's aggregate share grows.
/// Checked at `x` uniform on the state space with two to four actions.
pub fn growth_below_threshold(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let (m, n) = dims(rng);
    growth_case(rng, m, n, false)
}

/// As [`growth_below_threshold`] with two actions, half of the states pushed towards
/// the bottom of a carried action's range so that most cases are non-vacuous.
/// With three or more actions the statement can fail (see the properties
/// suite), so the boundary-biased sampler is only used where it holds.
pub fn growth_two_actions(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let m = rng.random_range(2..=4);
    growth_case(rng, m, 2, true)
}

fn growth_case(rng: &mut ChaCha8Rng, m: usize, n: usize, biased: bool) -> Result<usize, String> {
    let s = random_scenario(rng, m, n);
    let policy = random_policy(rng, n);
    let carried = carrier(&policy.y_star);
    let mut x = sample_state(rng, m, n);
    if biased && rng.random_bool(0.5) {
        let i = carried[rng.random_range(0..carried.len())];
        let scale = rng.random::<f64>().powi(3);
        for k in 0..m {
            let row = x.row_mut(k);
            row[i] *= scale;
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= total);
        }
    }
    let bounds = region_bounds(&s, &policy).map_err(|e| e.to_string())?;
    let y = s.aggregate_output(&x);
    let ydot = match field_controlled(&s, &x, &policy) {
        Ok(f) => f.aggregate(&s),
        // outside the controlled domain the statement is vacuous
        Err(Error::DomainViolation { .. }) => return Ok(0),
        Err(e) => return Err(e.to_string()),
    };
    let mut checked = 0;
    for &i in &carried {
        if y[i] < bounds.thresholds[i] {
            checked += 1;
            if ydot[i] <= 0.0 {
                let a = i + 1;
                return Err(format!(
                    "y_{a} = {} below M_{a} = {} but dy_{a}/dt = {}",
                    y[i], bounds.thresholds[i], ydot[i]
                ));
            }
        }
    }
    Ok(checked)
}

/// Trajectories started in the invariant region never leave it and stay on
/// the simplex.
pub fn confinement(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let (m, n) = (rng.random_range(2..=3), rng.random_range(2..=3));
    let s = random_scenario(rng, m, n);
    let policy = ControlPolicy::new(rng.random_range(0.5..10.0), random_target(rng, n).0).unwrap();
    let bounds = region_bounds(&s, &policy).map_err(|e| e.to_string())?;
    let carried = carrier(&policy.y_star);
    let mut x0 = sample_state(rng, m, n);
    if rng.random_bool(0.5) {
        // start a carried action just inside the region boundary
        let i = carried[rng.random_range(0..carried.len())];
        let t = bounds.epsilon * rng.random_range(1.0..2.0);
        for k in 0..m {
            let row = x0.row_mut(k);
            let rest: f64 = row
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, v)| v)
                .sum();
            for (j, v) in row.iter_mut().enumerate() {
                *v = if j == i { t } else { *v * (1.0 - t) / rest };
            }
        }
    }
    if x0.min_coordinate() < 1e-6 || !bounds.contains(&s.aggregate_output(&x0), &policy.y_star) {
        return Ok(0);
    }
    let cfg = IntegrationConfig {
        t_max: 5.0,
        stop_on_convergence: false,
        ..Default::default()
    };
    let traj = simulate(&s, &policy, &x0, &cfg).map_err(|e| e.to_string())?;
    for (t, (x, y)) in traj.times.iter().zip(traj.states.iter().zip(&traj.outputs)) {
        for &i in &carried {
            if y[i] < bounds.epsilon {
                return Err(format!(
                    "y_{i} = {} < eps = {} at t = {t}",
                    y[i], bounds.epsilon
                ));
            }
        }
        for row in x.rows() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() >= 1e-9 || row.iter().any(|v| *v < 0.0) {
                return Err(format!("left the simplex at t = {t}: {row:?}"));
            }
        }
    }
    Ok(traj.len())
}

/// A rest point of the free dynamics that produces `y*` is a rest point of
/// the controlled dynamics for every positive subsidy.
pub fn controlled_rest_point(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let (m, n) = dims(rng);
    let (s, eq) = constructed_equilibrium(rng, m, n);
    for d in [0.5, 1.0, 10.0] {
        let policy = ControlPolicy::new(d, eq.y_star.0.clone()).unwrap();
        let r = field_controlled(&s, &eq.x_star, &policy)
            .map_err(|e| e.to_string())?
            .max_abs();
        if r >= EQ_TOL {
            return Err(format!("|dx/dt| = {r:e} at x* with d = {d}"));
        }
    }
    Ok(3)
}

/// `F₂ ≥ 0`, vanishing only at `y = y*`.
pub fn jensen(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let n = rng.random_range(2..=4);
    let y_star = random_target(rng, n);
    let y: Vec<f64> = match rng.random_range(0..4) {
        0 => y_star.0.clone(),
        1 => {
            // small perturbation around the target
            let z = sample_simplex(rng, n);
            let h = 10f64.powf(rng.random_range(-5.0..-1.0));
            y_star
                .iter()
                .zip(&z)
                .map(|(a, b)| (1.0 - h) * a + h * b)
                .collect()
        }
        _ => sample_simplex(rng, n),
    };
    let f2 = match subsidy_gap(&y, &y_star) {
        Ok(v) => v,
        Err(Error::DomainViolation { .. }) => return Ok(0),
        Err(e) => return Err(e.to_string()),
    };
    let gap = y_star.max_abs_diff(&y);
    if f2 < -1e-12 {
        return Err(format!("F2 = {f2:e} < 0 at y = {y:?}"));
    }
    if f2 < 1e-12 && gap >= 1e-6 {
        return Err(format!("F2 = {f2:e} but |y - y*| = {gap:e}"));
    }
    Ok(1)
}

/// `Σ (y*_i - y_i) y*_i / y_i = Σ y*_i² / y_i - 1` on the carrier of `y*`.
pub fn f2_identity(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let n = rng.random_range(2..=4);
    let y_star = random_target(rng, n);
    let y = sample_simplex(rng, n);
    let f2 = subsidy_gap(&y, &y_star).map_err(|e| e.to_string())?;
    let squares: f64 = carrier(&y_star)
        .iter()
        .map(|&i| y_star[i] * y_star[i] / y[i])
        .sum();
    let alt = squares - 1.0;
    // both forms round at the scale of the largest term
    if (f2 - alt).abs() >= 1e-12 * (1.0 + squares) {
        return Err(format!("F2 forms differ: {f2} vs {alt}"));
    }
    Ok(1)
}

/// The analytic `V̇` matches a central difference of `V` along the field.
pub fn vdot_finite_difference(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let (m, n) = dims(rng);
    let (s, eq) = constructed_equilibrium(rng, m, n);
    let policy = ControlPolicy::new(rng.random_range(0.0..10.0), eq.y_star.0.clone()).unwrap();
    let x = loop {
        let x = sample_state(rng, m, n);
        if x.min_coordinate() >= 1e-4 {
            break x;
        }
    };
    let f = field_controlled(&s, &x, &policy).map_err(|e| e.to_string())?;
    let h = 1e-6;
    let numeric = (lyapunov_v(&x.offset(f.as_slice(), h), &eq, &s)
        - lyapunov_v(&x.offset(f.as_slice(), -h), &eq, &s))
        / (2.0 * h);
    let analytic = decompose_vdot(&x, &eq, &s, &policy)
        .map_err(|e| e.to_string())?
        .vdot;
    let scale = analytic.abs().max(numeric.abs());
    if (analytic - numeric).abs() > 1e-4 * scale + 1e-8 {
        return Err(format!(
            "V' analytic {analytic} vs finite difference {numeric}"
        ));
    }
    Ok(1)
}

/// Average payoff is linear in each argument; expected payoff is linear in y.
pub fn bilinearity(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let (m, n) = dims(rng);
    let s = random_scenario(rng, m, n);
    let k = rng.random_range(0..m);
    let (a, b) = (sample_simplex(rng, n), sample_simplex(rng, n));
    let (ya, yb) = (sample_simplex(rng, n), sample_simplex(rng, n));
    let l: f64 = rng.random();
    let mix = |p: &[f64], q: &[f64]| -> Vec<f64> {
        p.iter()
            .zip(q)
            .map(|(u, v)| l * u + (1.0 - l) * v)
            .collect()
    };
    let (ab, yab) = (mix(&a, &b), mix(&ya, &yb));
    let close = |u: f64, v: f64| (u - v).abs() < 1e-10;
    if !close(
        s.average_payoff(k, &ab, &ya),
        l * s.average_payoff(k, &a, &ya) + (1.0 - l) * s.average_payoff(k, &b, &ya),
    ) {
        return Err("average payoff not linear in the population state".into());
    }
    if !close(
        s.average_payoff(k, &a, &yab),
        l * s.average_payoff(k, &a, &ya) + (1.0 - l) * s.average_payoff(k, &a, &yb),
    ) {
        return Err("average payoff not linear in the output".into());
    }
    for i in 0..n {
        if !close(
            s.expected_payoff(k, i, &yab),
            l * s.expected_payoff(k, i, &ya) + (1.0 - l) * s.expected_payoff(k, i, &yb),
        ) {
            return Err(format!(
                "expected payoff of action {i} not linear in the output"
            ));
        }
    }
    Ok(n + 2)
}

/// Every payoff evaluation on mixed profiles lies within the payoff range.
pub fn payoff_bounds(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let (m, n) = dims(rng);
    let s = random_scenario(rng, m, n);
    let (a_max, a_min) = s.payoff_range();
    let x = state_with_faces(rng, m, n);
    let y = s.aggregate_output(&x);
    for k in 0..m {
        let mut values = vec![s.average_payoff(k, x.row(k), &y)];
        values.extend((0..n).map(|i| s.expected_payoff(k, i, &y)));
        if let Some(v) = values
            .iter()
            .find(|v| **v > a_max + 1e-12 || **v < a_min - 1e-12)
        {
            return Err(format!("payoff {v} outside [{a_min}, {a_max}]"));
        }
    }
    Ok(m)
}

/// The aggregate output is a point of the simplex.
pub fn output_on_simplex(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let (m, n) = dims(rng);
    let s = random_scenario(rng, m, n);
    let x = state_with_faces(rng, m, n);
    let y = s.aggregate_output(&x);
    let sum: f64 = y.iter().sum();
    if (sum - 1.0).abs() >= 1e-12 || y.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(format!("output {:?} off the simplex", y.0));
    }
    Ok(1)
}

/// Every enumerated target equilibrium is a rest point of both fields, and
/// every supported action earns the population-average payoff at `y*`.
pub fn target_set_soundness(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let m = rng.random_range(2..=4);
    let (s, eq) = constructed_equilibrium(rng, m, 2);
    let set = find_target_equilibria(&s, &eq.y_star).map_err(|e| e.to_string())?;
    if set.candidates.is_empty() {
        return Err(format!(
            "known equilibrium {:?} not found",
            eq.x_star.to_rows()
        ));
    }
    if !set.continuum
        && set
            .candidates
            .iter()
            .all(|c| c.x_star.max_abs_diff(&eq.x_star) > EQ_TOL)
    {
        return Err(format!(
            "known equilibrium {:?} missing from the isolated set",
            eq.x_star.to_rows()
        ));
    }
    for c in &set.candidates {
        let free = field_uncontrolled(&s, &c.x_star).max_abs();
        if free >= EQ_TOL {
            return Err(format!("candidate not a free rest point: {free:e}"));
        }
        for d in [0.5, 1.0, 10.0] {
            let policy = ControlPolicy::new(d, c.y_star.0.clone()).unwrap();
            let r = field_controlled(&s, &c.x_star, &policy)
                .map_err(|e| e.to_string())?
                .max_abs();
            if r >= EQ_TOL {
                return Err(format!(
                    "candidate not a controlled rest point at d = {d}: {r:e}"
                ));
            }
        }
        for (k, support) in c.carriers.iter().enumerate() {
            let avg = s.average_payoff(k, c.x_star.row(k), &c.y_star);
            for &i in support {
                let gap = (s.expected_payoff(k, i, &c.y_star) - avg).abs();
                if gap >= EQ_TOL {
                    return Err(format!(
                        "supported action {i} of population {k} off average by {gap:e}"
                    ));
                }
            }
        }
    }
    Ok(set.candidates.len())
}

/// Runs `check` on `cases` consecutive seeds starting at `base`.
pub fn sweep(check: Check, base: u64, cases: u64) -> Result<usize, String> {
    use rand::SeedableRng;
    let mut covered = 0;
    for seed in base..base + cases {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        covered += check(&mut rng).map_err(|e| format!("seed {seed}: {e}"))?;
    }
    Ok(covered)
}
