use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{d_bar, SamplingConfig, TargetEquilibrium, BOUNDARY_MARGIN, TUBE_RADIUS};
use crate::game::{carrier, Scenario, StateCombination};
use crate::simplex::{product_grid, sample_state, simplex_grid};

const CHUNK: usize = 4096;
const ASCENT_STARTS: usize = 10;
const ASCENT_STEP: f64 = 0.05;
const ASCENT_MIN_STEP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SupEstimate {
    /// Largest `d̄` found; `-∞` if every sample was excluded.
    pub value: f64,
    pub argmax: Option<StateCombination>,
    pub grid_points: usize,
    pub random_samples: usize,
    pub ascent_starts: usize,
    pub excluded: usize,
}

/// `d̄(x)` if `x` lies in the searched region: outside the tube of radius
/// [`TUBE_RADIUS`] around the target-output set and at least
/// [`BOUNDARY_MARGIN`] away from the singular boundary of the subsidy weights.
fn admissible_dbar(
    x: &StateCombination,
    eq: &TargetEquilibrium,
    s: &Scenario,
    carried: &[usize],
) -> Option<f64> {
    let y = s.aggregate_output(x);
    if y.max_abs_diff(&eq.y_star) < TUBE_RADIUS {
        return None;
    }
    if carried.iter().any(|&i| y[i] < BOUNDARY_MARGIN) {
        return None;
    }
    d_bar(x, eq, s).ok().filter(|v| v.is_finite())
}

/// Keeps the best `cap` candidates, ordered by value (ties keep the earlier).
fn push_candidate(
    best: &mut Vec<(f64, StateCombination)>,
    value: f64,
    x: &StateCombination,
    cap: usize,
) {
    if best.len() == cap && best.last().is_some_and(|(v, _)| value <= *v) {
        return;
    }
    let pos = best.partition_point(|(v, _)| *v >= value);
    best.insert(pos, (value, x.clone()));
    best.truncate(cap);
}

struct Scan {
    best: Vec<(f64, StateCombination)>,
    excluded: usize,
}

fn scan<'a, I>(states: I, eq: &TargetEquilibrium, s: &Scenario, carried: &[usize]) -> Scan
where
    I: IntoIterator<Item = &'a StateCombination>,
{
    let mut out = Scan {
        best: Vec::with_capacity(ASCENT_STARTS + 1),
        excluded: 0,
    };
    for x in states {
        match admissible_dbar(x, eq, s, carried) {
            Some(v) => push_candidate(&mut out.best, v, x, ASCENT_STARTS),
            None => out.excluded += 1,
        }
    }
    out
}

/// Coordinate ascent: moves probability mass between pairs of actions within
/// one population, halving the step when a full sweep brings no improvement.
fn ascend(
    start: (f64, StateCombination),
    eq: &TargetEquilibrium,
    s: &Scenario,
    carried: &[usize],
    iters: usize,
) -> (f64, StateCombination) {
    let (mut value, mut x) = start;
    let (m, n) = (x.populations(), x.actions());
    let mut step = ASCENT_STEP;
    for _ in 0..iters {
        let mut improved = false;
        for k in 0..m {
            for from in 0..n {
                for to in 0..n {
                    if from == to {
                        continue;
                    }
                    let delta = step.min(x.get(k, from));
                    if delta <= 0.0 {
                        continue;
                    }
                    let mut cand = x.clone();
                    cand.set(k, from, x.get(k, from) - delta);
                    cand.set(k, to, x.get(k, to) + delta);
                    if let Some(v) = admissible_dbar(&cand, eq, s, carried) {
                        if v > value {
                            value = v;
                            x = cand;
                            improved = true;
                        }
                    }
                }
            }
        }
        if !improved {
            step *= 0.5;
            if step < ASCENT_MIN_STEP {
                break;
            }
        }
    }
    (value, x)
}

/// Estimates `sup d̄` over the controlled domain minus the target-output set by
/// a uniform grid, uniform random samples and coordinate ascent from the best
/// candidates. Random samples are drawn in fixed-size chunks, each from its own
/// stream of a ChaCha generator seeded with `cfg.seed`, so the estimate does
/// not depend on the number of worker threads.
pub fn estimate_sup_dbar(
    eq: &TargetEquilibrium,
    s: &Scenario,
    cfg: &SamplingConfig,
) -> SupEstimate {
    let (m, n) = (s.populations(), s.actions());
    let carried = carrier(&eq.y_star);

    let grid = if cfg.grid_per_dim >= 2 {
        product_grid(m, &simplex_grid(n, cfg.grid_per_dim))
    } else {
        Vec::new()
    };
    let grid_scan = grid
        .par_chunks(CHUNK)
        .map(|chunk| scan(chunk, eq, s, &carried))
        .collect::<Vec<_>>();

    let chunks = cfg.random_samples.div_ceil(CHUNK);
    let random_scan = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(c as u64);
            let count = CHUNK.min(cfg.random_samples - c * CHUNK);
            let states: Vec<StateCombination> =
                (0..count).map(|_| sample_state(&mut rng, m, n)).collect();
            scan(&states, eq, s, &carried)
        })
        .collect::<Vec<_>>();

    let mut best = Vec::with_capacity(ASCENT_STARTS + 1);
    let mut excluded = 0;
    for part in grid_scan.into_iter().chain(random_scan) {
        excluded += part.excluded;
        for (v, x) in part.best {
            push_candidate(&mut best, v, &x, ASCENT_STARTS);
        }
    }
    let ascent_starts = best.len();
    let refined: Vec<(f64, StateCombination)> = best
        .into_par_iter()
        .map(|start| ascend(start, eq, s, &carried, cfg.ascent_iters))
        .collect();

    let mut value = f64::NEG_INFINITY;
    let mut argmax = None;
    for (v, x) in refined {
        if v > value {
            value = v;
            argmax = Some(x);
        }
    }
    SupEstimate {
        value,
        argmax,
        grid_points: grid.len(),
        random_samples: cfg.random_samples,
        ascent_starts,
        excluded,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{three_population_example, Output};

    #[test]
    fn candidates_stay_sorted_and_capped() {
        let x = StateCombination::uniform_rows(2, &[0.5, 0.5]);
        let mut best = Vec::new();
        for v in [1.0, 5.0, 3.0, 4.0, 2.0] {
            push_candidate(&mut best, v, &x, 3);
        }
        let values: Vec<f64> = best.iter().map(|(v, _)| *v).collect();
        assert_eq!(values, vec![5.0, 4.0, 3.0]);
    }

    #[test]
    fn estimate_is_thread_count_independent() {
        let s = three_population_example();
        let eq = TargetEquilibrium::new(
            &s,
            StateCombination::from_first_action_shares(&[0.0, 1.0, 1.0]).unwrap(),
            Output(vec![0.8, 0.2]),
        )
        .unwrap();
        let cfg = SamplingConfig {
            grid_per_dim: 5,
            random_samples: 10_000,
            ascent_iters: 20,
            ..Default::default()
        };
        let a = estimate_sup_dbar(&eq, &s, &cfg);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let b = pool.install(|| estimate_sup_dbar(&eq, &s, &cfg));
        assert_eq!(a, b);
        assert_eq!(a.grid_points, 125);
    }
}
