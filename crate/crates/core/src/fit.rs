//! Damped least squares (Levenberg-Marquardt) for small dense problems with a
//! forward-difference Jacobian.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Relative forward-difference step.
    pub rel_step: f64,
    /// Stop when the relative cost reduction of an accepted step falls below this.
    pub ftol: f64,
    /// Stop when every relative parameter change falls below this.
    pub xtol: f64,
    pub initial_damping: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            rel_step: 1e-6,
            ftol: 1e-12,
            xtol: 1e-10,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    pub sigmas: Vec<f64>,
    /// Euclidean norm of the final residual vector.
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn cost(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn clamp_into(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi);
    }
}

fn jacobian<F>(f: &F, x: &[f64], r0: &[f64], bounds: &[(f64, f64)], rel_step: f64) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let m = r0.len();
    let p = x.len();
    let mut j = DMatrix::zeros(m, p);
    let mut xp = x.to_vec();
    for k in 0..p {
        let mut h = rel_step * x[k].abs().max(1e-3);
        // step inward at an upper bound
        if x[k] + h > bounds[k].1 {
            h = -h;
        }
        xp[k] = x[k] + h;
        let rp = f(&xp);
        for i in 0..m {
            j[(i, k)] = (rp[i] - r0[i]) / h;
        }
        xp[k] = x[k];
    }
    j
}

/// Minimise `Σ r_i(x)²` within box bounds. Uncertainties are the square
/// roots of the diagonal of `(JᵀJ)⁻¹·RSS/(m−p)` at the solution.
pub fn levenberg_marquardt<F>(f: F, x0: &[f64], bounds: &[(f64, f64)], opts: LmOptions) -> LmOutcome
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let p = x0.len();
    assert_eq!(bounds.len(), p, "one bound pair per parameter");
    let mut x = x0.to_vec();
    clamp_into(&mut x, bounds);
    let mut r = f(&x);
    let m = r.len();
    let mut c = cost(&r);
    let mut lambda = opts.initial_damping;
    let mut converged = false;
    let mut iterations = 0;
    let mut jac = jacobian(&f, &x, &r, bounds, opts.rel_step);

    while iterations < opts.max_iterations {
        iterations += 1;
        if c == 0.0 {
            converged = true;
            break;
        }
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let grad = &jt * DVector::from_column_slice(&r);
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for k in 0..p {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-30);
            }
            let Some(delta) = a.lu().solve(&(-&grad)) else {
                lambda *= 10.0;
                continue;
            };
            let mut xn: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            clamp_into(&mut xn, bounds);
            let rn = f(&xn);
            let cn = cost(&rn);
            if cn.is_finite() && cn < c {
                let small_step = x
                    .iter()
                    .zip(&xn)
                    .all(|(a, b)| (a - b).abs() <= opts.xtol * a.abs().max(1e-12));
                let small_gain = (c - cn) <= opts.ftol * c;
                x = xn;
                r = rn;
                c = cn;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if small_step || small_gain {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No descent direction left at any damping: a stationary point.
            let gnorm = grad.amax();
            converged = gnorm.is_finite();
            break;
        }
        jac = jacobian(&f, &x, &r, bounds, opts.rel_step);
        if converged {
            break;
        }
    }

    let sigmas = covariance_sigmas(&jac, c, m, p);
    LmOutcome {
        params: x,
        sigmas,
        residual_norm: c.sqrt(),
        iterations,
        converged,
    }
}

pub(crate) fn covariance_sigmas(jac: &DMatrix<f64>, rss: f64, m: usize, p: usize) -> Vec<f64> {
    let jtj = jac.transpose() * jac;
    let dof = m.saturating_sub(p);
    match jtj.try_inverse() {
        Some(inv) if dof > 0 => {
            let s2 = rss / dof as f64;
            (0..p).map(|k| (inv[(k, k)].max(0.0) * s2).sqrt()).collect()
        }
        _ => vec![f64::INFINITY; p],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_exponential_exactly() {
        let t: Vec<f64> = (0..30).map(|i| i as f64 * 0.2).collect();
        let y: Vec<f64> = t.iter().map(|t| 2.5 * (-t / 1.7).exp()).collect();
        let out = levenberg_marquardt(
            |p| t.iter().zip(&y).map(|(t, y)| p[0] * (-t / p[1]).exp() - y).collect(),
            &[1.0, 1.0],
            &[(0.0, 10.0), (1e-3, 10.0)],
            LmOptions::default(),
        );
        assert!(out.converged);
        assert!((out.params[0] - 2.5).abs() < 1e-8);
        assert!((out.params[1] - 1.7).abs() < 1e-8);
        assert!(out.residual_norm < 1e-8);
    }

    #[test]
    fn respects_bounds() {
        let out = levenberg_marquardt(|p| vec![p[0] - 5.0], &[0.5], &[(0.0, 1.0)], LmOptions::default());
        assert!(out.params[0] <= 1.0);
    }
}
