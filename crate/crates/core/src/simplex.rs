//! Grids and random sampling on products of simplices.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::game::StateCombination;

/// All compositions of `total` into `parts` non-negative integers, in
/// lexicographic order.
pub fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    fn rec(total: usize, parts: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts == 1 {
            prefix.push(total);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for first in 0..=total {
            prefix.push(first);
            rec(total - first, parts - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if parts > 0 {
        rec(total, parts, &mut Vec::with_capacity(parts), &mut out);
    }
    out
}

/// Grid on one simplex with `points_per_dim` points along each edge,
/// vertices included. `points_per_dim` must be at least 2.
pub fn simplex_grid(n: usize, points_per_dim: usize) -> Vec<Vec<f64>> {
    let steps = points_per_dim.max(2) - 1;
    compositions(steps, n)
        .into_iter()
        .map(|c| c.into_iter().map(|v| v as f64 / steps as f64).collect())
        .collect()
}

/// Grid strictly inside one simplex: coordinates `c_i / (resolution + 1)` with
/// every `c_i >= 1`. For two actions this is `resolution` evenly spaced points
/// `1/(r+1), ..., r/(r+1)`.
pub fn interior_simplex_grid(n: usize, resolution: usize) -> Vec<Vec<f64>> {
    let denom = (resolution + 1) as f64;
    if resolution + 1 < n {
        return Vec::new();
    }
    compositions(resolution + 1 - n, n)
        .into_iter()
        .map(|c| c.into_iter().map(|v| (v + 1) as f64 / denom).collect())
        .collect()
}

/// Cartesian product of one grid per population, first population varying
/// slowest.
pub fn product_grid(m: usize, per_population: &[Vec<f64>]) -> Vec<StateCombination> {
    let g = per_population.len();
    if g == 0 || m == 0 {
        return Vec::new();
    }
    let n = per_population[0].len();
    let total = g.pow(m as u32);
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; m];
    for _ in 0..total {
        let mut data = Vec::with_capacity(m * n);
        for &j in &idx {
            data.extend_from_slice(&per_population[j]);
        }
        out.push(StateCombination::from_flat(m, n, data).expect("grid rows share a length"));
        for pos in (0..m).rev() {
            idx[pos] += 1;
            if idx[pos] < g {
                break;
            }
            idx[pos] = 0;
        }
    }
    out
}

/// Uniform interior grid of initial states: `resolution` points per
/// population edge (so `resolution^m` states when `n = 2`).
pub fn interior_grid(m: usize, n: usize, resolution: usize) -> Vec<StateCombination> {
    product_grid(m, &interior_simplex_grid(n, resolution))
}

/// Uniform (flat Dirichlet) sample on the simplex of dimension `n - 1`.
pub fn sample_simplex<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut z: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = z.iter().sum();
    for v in &mut z {
        *v /= total;
    }
    z
}

/// Independent uniform sample on each population's simplex.
pub fn sample_state<R: Rng + ?Sized>(rng: &mut R, m: usize, n: usize) -> StateCombination {
    let data = (0..m).flat_map(|_| sample_simplex(rng, n)).collect();
    StateCombination::from_flat(m, n, data).expect("shape is consistent")
}
