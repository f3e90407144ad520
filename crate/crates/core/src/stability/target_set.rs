use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{payoff_advantage, TargetEquilibrium, EQUILIBRIUM_TOL};
use crate::error::{Error, Result};
use crate::game::{carrier, Output, Scenario, StateCombination};

/// Hit-and-run steps discarded before recording samples.
pub const BURN_IN: usize = 1000;
const MAX_VERTEX_POPULATIONS: usize = 4;

/// Equilibria of the free dynamics that produce a given output.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSet {
    /// Isolated solutions, or the vertices of a solution continuum.
    pub candidates: Vec<TargetEquilibrium>,
    /// Some population is indifferent at `y*` and the solutions form a
    /// positive-dimensional set.
    pub continuum: bool,
}

impl TargetSet {
    pub fn is_unique(&self) -> bool {
        self.candidates.len() == 1 && !self.continuum
    }
}

fn push_unique(out: &mut Vec<StateCombination>, x: StateCombination) {
    if !out.iter().any(|o| o.max_abs_diff(&x) < EQUILIBRIUM_TOL) {
        out.push(x);
    }
}

/// Enumerates the target set `X*` for `y_star`.
///
/// With `y = y*` fixed, each population faces constant payoffs `c_i = u^k(e_i, y*)`
/// and is at rest exactly when its support lies inside one class of tied
/// payoffs. Two-action games are solved in full, including indifferent
/// populations whose share is then pinned (or left free) by the output
/// constraint. For more actions every population must have untied payoffs at
/// `y*`, so the candidates are the pure profiles that aggregate to `y*`.
pub fn find_target_equilibria(s: &Scenario, y_star: &Output) -> Result<TargetSet> {
    let (m, n) = (s.populations(), s.actions());
    let y_star = Output::new(y_star.0.clone())?;
    if y_star.len() != n {
        return Err(Error::InvalidTarget(format!(
            "y* has {} entries, scenario has {n} actions",
            y_star.len()
        )));
    }
    let mut found = Vec::new();
    let mut continuum = false;
    if n == 2 {
        let indifferent: Vec<bool> = (0..m)
            .map(|k| {
                (s.expected_payoff(k, 0, &y_star) - s.expected_payoff(k, 1, &y_star)).abs()
                    < EQUILIBRIUM_TOL
            })
            .collect();
        let fixed: Vec<usize> = (0..m).filter(|&k| !indifferent[k]).collect();
        let free: Vec<usize> = (0..m).filter(|&k| indifferent[k]).collect();
        let free_mass: f64 = free.iter().map(|&k| s.share(k)).sum();
        for mask in 0..(1u64 << fixed.len()) {
            let mut first = vec![0.0; m];
            let mut fixed_mass = 0.0;
            for (bit, &k) in fixed.iter().enumerate() {
                if mask >> bit & 1 == 1 {
                    first[k] = 1.0;
                    fixed_mass += s.share(k);
                }
            }
            let residual = y_star[0] - fixed_mass;
            if free.is_empty() {
                if residual.abs() < EQUILIBRIUM_TOL {
                    push_unique(
                        &mut found,
                        StateCombination::from_first_action_shares(&first)?,
                    );
                }
                continue;
            }
            if residual < -EQUILIBRIUM_TOL || residual > free_mass + EQUILIBRIUM_TOL {
                continue;
            }
            let pinned =
                residual.abs() < EQUILIBRIUM_TOL || (residual - free_mass).abs() < EQUILIBRIUM_TOL;
            if free.len() > 1 && !pinned {
                continuum = true;
            }
            // vertices of {x_F in [0,1]^F : sum v x = residual}
            for &k_solve in &free {
                let others: Vec<usize> = free.iter().copied().filter(|&k| k != k_solve).collect();
                for omask in 0..(1u64 << others.len()) {
                    let mut x = first.clone();
                    let mut mass = 0.0;
                    for (bit, &k) in others.iter().enumerate() {
                        if omask >> bit & 1 == 1 {
                            x[k] = 1.0;
                            mass += s.share(k);
                        }
                    }
                    let share = (residual - mass) / s.share(k_solve);
                    if (-EQUILIBRIUM_TOL..=1.0 + EQUILIBRIUM_TOL).contains(&share) {
                        x[k_solve] = share.clamp(0.0, 1.0);
                        push_unique(&mut found, StateCombination::from_first_action_shares(&x)?);
                    }
                }
            }
        }
    } else {
        for k in 0..m {
            let c: Vec<f64> = (0..n).map(|i| s.expected_payoff(k, i, &y_star)).collect();
            for i in 0..n {
                for j in i + 1..n {
                    if (c[i] - c[j]).abs() < EQUILIBRIUM_TOL {
                        return Err(Error::Unsupported(format!(
                            "population {k} is indifferent between actions {i} and {j} at y*; \
                             mixed target equilibria are only enumerated for two actions"
                        )));
                    }
                }
            }
        }
        let mut idx = vec![0usize; m];
        loop {
            let mut x = StateCombination::zeros(m, n);
            for (k, &i) in idx.iter().enumerate() {
                x.set(k, i, 1.0);
            }
            if s.aggregate_output(&x).max_abs_diff(&y_star) < EQUILIBRIUM_TOL {
                push_unique(&mut found, x);
            }
            let mut pos = m;
            loop {
                if pos == 0 {
                    break;
                }
                pos -= 1;
                idx[pos] += 1;
                if idx[pos] < n {
                    break;
                }
                idx[pos] = 0;
            }
            if idx.iter().all(|&i| i == 0) {
                break;
            }
        }
    }
    let candidates = found
        .into_iter()
        .map(|x| TargetEquilibrium::new(s, x, y_star.clone()))
        .collect::<Result<Vec<_>>>()?;
    Ok(TargetSet {
        candidates,
        continuum,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct F1Check {
    pub f1_min: f64,
    pub witness: StateCombination,
    /// Hit-and-run samples evaluated (after burn-in).
    pub samples: usize,
    /// Exactly enumerated vertices evaluated.
    pub vertices: usize,
    /// Dimension of the target-output set.
    pub dimension: usize,
}

/// Orthonormal basis of the directions that keep every row sum and the
/// aggregate output fixed, restricted to actions carried by `y*`.
fn tangent_basis(s: &Scenario, carried: &[usize]) -> Vec<Vec<f64>> {
    let (m, n) = (s.populations(), s.actions());
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let (i0, rest) = match carried.split_first() {
        Some(split) => split,
        None => return basis,
    };
    for k in 1..m {
        for &i in rest {
            let ratio = s.share(k) / s.share(0);
            let mut d = vec![0.0; m * n];
            d[k * n + i] += 1.0;
            d[k * n + i0] -= 1.0;
            d[i] -= ratio;
            d[*i0] += ratio;
            // Gram-Schmidt (twice for stability)
            for _ in 0..2 {
                for b in &basis {
                    let dot: f64 = d.iter().zip(b).map(|(a, b)| a * b).sum();
                    for (dv, bv) in d.iter_mut().zip(b) {
                        *dv -= dot * bv;
                    }
                }
            }
            let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                basis.push(d.into_iter().map(|v| v / norm).collect());
            }
        }
    }
    basis
}

/// Vertices of the target-output set for two actions: all populations but one
/// play a pure action and the remaining one absorbs the residual.
fn two_action_vertices(s: &Scenario, y1: f64) -> Vec<StateCombination> {
    let m = s.populations();
    let mut out = Vec::new();
    for solve in 0..m {
        for mask in 0..(1u64 << (m - 1)) {
            let mut first = vec![0.0; m];
            let mut mass = 0.0;
            for (bit, k) in (0..m).filter(|&k| k != solve).enumerate() {
                if mask >> bit & 1 == 1 {
                    first[k] = 1.0;
                    mass += s.share(k);
                }
            }
            let share = (y1 - mass) / s.share(solve);
            if (-1e-12..=1.0 + 1e-12).contains(&share) {
                first[solve] = share.clamp(0.0, 1.0);
                if let Ok(x) = StateCombination::from_first_action_shares(&first) {
                    push_unique(&mut out, x);
                }
            }
        }
    }
    out
}

/// Minimum of `F₁` over the set of states producing `y*`, sampled by
/// hit-and-run from the relative-interior point `x^k = y*` for every `k`, plus
/// the exact vertices when there are two actions and at most four populations.
///
/// The set is never empty for a valid `y*` (that starting point always lies in
/// it); an invalid `y*` is an error.
pub fn check_f1_on_xbar(
    eq: &TargetEquilibrium,
    s: &Scenario,
    samples: usize,
    seed: u64,
) -> Result<F1Check> {
    let (m, n) = (s.populations(), s.actions());
    let y_star = Output::new(eq.y_star.0.clone())?;
    let carried = carrier(&y_star);

    let start = StateCombination::uniform_rows(m, &y_star);
    let mut f1_min = payoff_advantage(&start, eq, s);
    let mut witness = start.clone();
    let consider = |x: &StateCombination, f1_min: &mut f64, witness: &mut StateCombination| {
        let f1 = payoff_advantage(x, eq, s);
        if f1 < *f1_min {
            *f1_min = f1;
            *witness = x.clone();
        }
    };

    let mut vertices = 0;
    if n == 2 && m <= MAX_VERTEX_POPULATIONS {
        for v in two_action_vertices(s, y_star[0]) {
            consider(&v, &mut f1_min, &mut witness);
            vertices += 1;
        }
    }

    let basis = tangent_basis(s, &carried);
    let mut drawn = 0;
    if !basis.is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = start.clone();
        let mut dir = vec![0.0; m * n];
        for step in 0..BURN_IN + samples {
            dir.fill(0.0);
            for b in &basis {
                let g: f64 = rng.sample(StandardNormal);
                for (d, bv) in dir.iter_mut().zip(b) {
                    *d += g * bv;
                }
            }
            let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
            for (&xi, &di) in x.as_slice().iter().zip(&dir) {
                if di > 1e-15 {
                    lo = lo.max(-xi / di);
                } else if di < -1e-15 {
                    hi = hi.min(-xi / di);
                }
            }
            if lo.is_finite() && hi.is_finite() && hi > lo {
                let t = rng.random_range(lo..=hi);
                for (xi, di) in x.as_mut_slice().iter_mut().zip(&dir) {
                    *xi = (*xi + t * di).max(0.0);
                }
            }
            if step >= BURN_IN {
                consider(&x, &mut f1_min, &mut witness);
                drawn += 1;
            }
        }
    }
    Ok(F1Check {
        f1_min,
        witness,
        samples: drawn,
        vertices,
        dimension: basis.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::three_population_example;

    fn first(v: &[f64]) -> StateCombination {
        StateCombination::from_first_action_shares(v).unwrap()
    }

    #[test]
    fn example_target_sets() {
        let s = three_population_example();
        let set = find_target_equilibria(&s, &Output(vec![1.0, 0.0])).unwrap();
        assert!(set.is_unique());
        assert_eq!(set.candidates[0].x_star, first(&[1.0, 1.0, 1.0]));

        let set = find_target_equilibria(&s, &Output(vec![0.8, 0.2])).unwrap();
        assert!(set.is_unique());
        assert_eq!(set.candidates[0].x_star, first(&[0.0, 1.0, 1.0]));

        let set = find_target_equilibria(&s, &Output(vec![0.99, 0.01])).unwrap();
        assert!(set.candidates.is_empty());
    }

    #[test]
    fn indifferent_populations_form_a_continuum() {
        // every population is indifferent at y = (0.5, 0.5)
        let a = vec![vec![-1.0, 2.0], vec![1.0, 0.0]];
        let s = Scenario::new(vec![a.clone(), a.clone(), a], vec![0.2, 0.3, 0.5]).unwrap();
        let set = find_target_equilibria(&s, &Output(vec![0.5, 0.5])).unwrap();
        assert!(set.continuum);
        assert!(!set.is_unique());
        assert!(set.candidates.len() > 1);
        for c in &set.candidates {
            assert!(s.aggregate_output(&c.x_star).max_abs_diff(&[0.5, 0.5]) < 1e-12);
        }

        // one indifferent population absorbs whatever the pure populations
        // leave over; the two mixed pure profiles give the same residual
        let b = vec![vec![2.0, 1.0], vec![3.0, 4.0]];
        let s = Scenario::new(
            vec![vec![vec![-1.0, 2.0], vec![1.0, 0.0]], b.clone(), b],
            vec![0.6, 0.2, 0.2],
        )
        .unwrap();
        let set = find_target_equilibria(&s, &Output(vec![0.5, 0.5])).unwrap();
        assert!(!set.continuum);
        let mut shares: Vec<f64> = set.candidates.iter().map(|c| c.x_star.get(0, 0)).collect();
        shares.sort_by(f64::total_cmp);
        let expected = [0.1 / 0.6, 0.3 / 0.6, 0.3 / 0.6, 0.5 / 0.6];
        assert_eq!(shares.len(), 4);
        for (a, b) in shares.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn three_action_pure_enumeration() {
        let coord = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 2.0, 0.0],
            vec![0.0, 0.0, 3.0],
        ];
        let s = Scenario::new(vec![coord.clone(), coord], vec![0.4, 0.6]).unwrap();
        // c = (0.6, 0.6, 0.3): actions 1 and 2 tie
        assert!(matches!(
            find_target_equilibria(&s, &Output(vec![0.6, 0.3, 0.1])),
            Err(Error::Unsupported(_))
        ));
        let set = find_target_equilibria(&s, &Output(vec![0.0, 0.4, 0.6])).unwrap();
        assert!(set.is_unique());
        assert_eq!(
            set.candidates[0].x_star.to_rows(),
            vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]
        );
    }

    #[test]
    fn xbar_is_a_point_for_a_vertex_target() {
        let s = three_population_example();
        let set = find_target_equilibria(&s, &Output(vec![1.0, 0.0])).unwrap();
        let check = check_f1_on_xbar(&set.candidates[0], &s, 1000, 7).unwrap();
        assert_eq!(check.dimension, 0);
        assert_eq!(check.f1_min, 0.0);
    }

    #[test]
    fn hit_and_run_stays_on_xbar() {
        let s = three_population_example();
        let set = find_target_equilibria(&s, &Output(vec![0.8, 0.2])).unwrap();
        let eq = &set.candidates[0];
        let check = check_f1_on_xbar(eq, &s, 2000, 11).unwrap();
        assert_eq!(check.dimension, 2);
        assert!(check.vertices >= 3);
        assert!(check.witness.check_simplex().is_ok());
        assert!(s.aggregate_output(&check.witness).max_abs_diff(&[0.8, 0.2]) < 1e-9);
    }

    #[test]
    fn vertex_enumeration() {
        let s = three_population_example();
        let v = two_action_vertices(&s, 0.8);
        // every vertex lies on the constraint and has at most one fractional share
        for x in &v {
            assert!((s.aggregate_output(x)[0] - 0.8).abs() < 1e-12);
            let fractional = x
                .first_action_shares()
                .iter()
                .filter(|&&p| p > 0.0 && p < 1.0)
                .count();
            assert!(fractional <= 1);
        }
        assert!(v.contains(&first(&[0.0, 1.0, 1.0])));
    }
}
