//! Derivative-free simplex maximizer.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    /// Stop once the largest vertex distance from the best vertex is below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Offset of the initial vertices along each coordinate axis.
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 5000,
            initial_step: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Maximizes `objective` starting from `x0`. Non-finite values count as
/// `-∞`.
pub fn nelder_mead_maximize<F>(
    mut objective: F,
    x0: &[f64],
    opts: &NelderMeadOptions,
) -> Result<NelderMeadResult>
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = x0.len();
    // internally minimize f = -objective
    let mut f = |x: &[f64]| {
        let v = objective(x);
        if v.is_finite() {
            -v
        } else {
            f64::INFINITY
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..dim {
        let mut x = x0.to_vec();
        x[i] += opts.initial_step;
        let v = f(&x);
        simplex.push((x, v));
    }
    if simplex.iter().all(|(_, v)| !v.is_finite()) {
        return Err(Error::Optimizer(
            "objective is not finite at any initial vertex".into(),
        ));
    }

    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        // stable sort keeps earlier vertices ahead on ties
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if diameter(&simplex) < opts.tol {
            converged = true;
            break;
        }
        iterations += 1;

        let worst = dim;
        let centroid: Vec<f64> = (0..dim)
            .map(|k| simplex[..worst].iter().map(|(x, _)| x[k]).sum::<f64>() / dim as f64)
            .collect();
        let along = |coef: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[worst].0)
                .map(|(c, w)| c + coef * (c - w))
                .collect()
        };

        let xr = along(REFLECT);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = along(REFLECT * EXPAND);
            let fe = f(&xe);
            simplex[worst] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[worst - 1].1 {
            simplex[worst] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[worst].1 {
            let xc = along(REFLECT * CONTRACT);
            let fc = f(&xc);
            (xc, fc)
        } else {
            let xc = along(-CONTRACT);
            let fc = f(&xc);
            (xc, fc)
        };
        if fc < simplex[worst].1.min(fr) {
            simplex[worst] = (xc, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for v in simplex.iter_mut().skip(1) {
            for (x, b) in v.0.iter_mut().zip(&best) {
                *x = b + SHRINK * (*x - b);
            }
            v.1 = f(&v.0);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, v) = simplex.swap_remove(0);
    Ok(NelderMeadResult {
        x,
        value: -v,
        iterations,
        converged,
    })
}

fn diameter(simplex: &[(Vec<f64>, f64)]) -> f64 {
    let best = &simplex[0].0;
    simplex[1..]
        .iter()
        .map(|(x, _)| {
            x.iter()
                .zip(best)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl() {
        let r = nelder_mead_maximize(
            |x| -x.iter().map(|v| (v - 1.0) * (v - 1.0)).sum::<f64>(),
            &[0.0, 3.0, -2.0],
            &NelderMeadOptions::default(),
        )
        .unwrap();
        assert!(r.converged);
        assert!(r.x.iter().all(|v| (v - 1.0).abs() < 1e-5), "{:?}", r.x);
    }

    #[test]
    fn rosenbrock() {
        let rosen = |x: &[f64]| -((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2));
        let opts = NelderMeadOptions {
            tol: 1e-10,
            max_iter: 2000,
            initial_step: 0.1,
        };
        let r = nelder_mead_maximize(rosen, &[-1.2, 1.0], &opts).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-3 && (r.x[1] - 1.0).abs() < 1e-3, "{:?}", r.x);
    }

    #[test]
    fn constant_objective_returns_start() {
        let r = nelder_mead_maximize(|_| 4.0, &[0.3, -0.7], &NelderMeadOptions::default()).unwrap();
        assert_eq!(r.x, vec![0.3, -0.7]);
        assert!(r.converged);
    }

    #[test]
    fn all_nonfinite_is_an_error() {
        let r = nelder_mead_maximize(|_| f64::NAN, &[0.0], &NelderMeadOptions::default());
        assert!(matches!(r, Err(Error::Optimizer(_))));
    }

    #[test]
    fn nonfinite_regions_are_avoided() {
        // log barrier: undefined for x <= 0
        let r = nelder_mead_maximize(
            |x| if x[0] > 0.0 { x[0].ln() - x[0] } else { f64::NAN },
            &[0.05],
            &NelderMeadOptions::default(),
        )
        .unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-5);
    }
}
