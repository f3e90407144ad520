use nalgebra::DMatrix;

use crate::dynamics::{field_controlled, ControlPolicy};
use crate::error::Result;
use crate::game::{Scenario, StateCombination};

const JACOBIAN_STEP: f64 = 1e-6;

/// Eigenvalues `(re, im)` of the Jacobian of the controlled field at `x`, in
/// the reduced coordinates that drop the last action of every population.
/// Central differences; intended for rest points.
pub fn local_spectrum(
    s: &Scenario,
    policy: &ControlPolicy,
    x: &StateCombination,
) -> Result<Vec<(f64, f64)>> {
    let (m, n) = (s.populations(), s.actions());
    let r = n - 1;
    let dim = m * r;
    let mut jac = DMatrix::<f64>::zeros(dim, dim);
    for k in 0..m {
        for i in 0..r {
            // moving x[k][i] in reduced coordinates moves x[k][n-1] oppositely
            let mut dir = vec![0.0; m * n];
            dir[k * n + i] = 1.0;
            dir[k * n + r] = -1.0;
            let plus = field_controlled(s, &x.offset(&dir, JACOBIAN_STEP), policy)?;
            let minus = field_controlled(s, &x.offset(&dir, -JACOBIAN_STEP), policy)?;
            for kk in 0..m {
                for ii in 0..r {
                    jac[(kk * r + ii, k * r + i)] =
                        (plus.get(kk, ii) - minus.get(kk, ii)) / (2.0 * JACOBIAN_STEP);
                }
            }
        }
    }
    Ok(jac
        .complex_eigenvalues()
        .iter()
        .map(|z| (z.re, z.im))
        .collect())
}
