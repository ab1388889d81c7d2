//! Gauge-transformed filter and smoother.
//!
//! With the diagonal process `Γ_t = exp(-∫(Λ - I)) Π Λ^{ΔY}`, the vectors
//! `q̄ = Γ⁻¹ q` and `v̄ = Γ v` solve linear ODEs with coefficients
//! `Γ⁻¹ A Γ` and `-Γ Aᵀ Γ⁻¹` and no observation term. `Γ` is kept in log
//! space; the off-diagonal coefficients `a_ij e^{log γ_j - log γ_i}` grow
//! exponentially in the spread of `log Γ`, which is what eventually breaks
//! the scheme. Each step reports that spread as `condition_log`.
//!
//! Steps freeze `Γ` at the substep midpoint and apply the exact exponential
//! of the frozen coefficient matrix.

use crate::error::{invalid, Error, Result};
use crate::linalg::{mat_exp, mat_vec_unchecked, SquareMatrix, DEFAULT_EXPM_TOL};
use crate::model::{eval_kernel, IntensityState, ModelSpec, RateMatrix};
use crate::simulate::EventTimes;

/// Coefficients are considered overflowed beyond `e^300`.
pub const DEFAULT_LOG_OVERFLOW: f64 = 300.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GammaProcess {
    pub t: f64,
    pub log_gamma: Vec<f64>,
}

impl GammaProcess {
    pub fn identity(n: usize) -> Self {
        Self {
            t: 0.0,
            log_gamma: vec![0.0; n],
        }
    }

    pub fn condition_log(&self) -> f64 {
        spread(&self.log_gamma)
    }
}

fn spread(v: &[f64]) -> f64 {
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    hi - lo
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustState {
    pub t: f64,
    pub qbar: Vec<f64>,
    pub vbar: Vec<f64>,
    pub condition_log: f64,
}

/// `log γ_i ← log γ_i - (λ_i - 1) dt`, plus `log λ_i` when an event closes
/// the interval.
pub fn gamma_update(g: &GammaProcess, dt: f64, lambda_at_start: &[f64], jump: bool) -> Result<GammaProcess> {
    if lambda_at_start.len() != g.log_gamma.len() {
        return invalid("intensity and Γ dimensions differ");
    }
    if let Some(l) = lambda_at_start.iter().find(|l| !(**l > 0.0)) {
        return Err(Error::InvalidState(format!("intensity {l} is not positive")));
    }
    let log_gamma = g
        .log_gamma
        .iter()
        .zip(lambda_at_start)
        .map(|(lg, &l)| lg - (l - 1.0) * dt + if jump { l.ln() } else { 0.0 })
        .collect();
    Ok(GammaProcess {
        t: g.t + dt,
        log_gamma,
    })
}

/// Builds `Γ⁻¹ A Γ` (or `Γ Aᵀ Γ⁻¹` when `transpose`), failing once any
/// entry would exceed `e^{log_overflow}`.
fn coefficient(g: &GammaProcess, a: &RateMatrix, transpose: bool, log_overflow: f64, t: f64, last_stable: f64) -> Result<SquareMatrix> {
    let n = a.n();
    let lg = &g.log_gamma;
    let mut c = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let aij = if transpose { a.matrix()[(j, i)] } else { a.matrix()[(i, j)] };
            if aij == 0.0 {
                continue;
            }
            let expo = if transpose { lg[i] - lg[j] } else { lg[j] - lg[i] };
            if aij.abs().ln() + expo > log_overflow {
                return Err(Error::Instability {
                    time: t,
                    last_stable_time: last_stable,
                    condition_log: g.condition_log(),
                });
            }
            c[(i, j)] = aij * expo.exp();
        }
    }
    Ok(c)
}

/// One forward step of `dq̄ = Γ⁻¹ A Γ q̄ dt` with `g` frozen.
pub fn robust_filter_step(
    s: &RobustState,
    g: &GammaProcess,
    a: &RateMatrix,
    dt: f64,
    log_overflow: f64,
) -> Result<RobustState> {
    let c = coefficient(g, a, false, log_overflow, s.t + dt, s.t)?;
    let e = mat_exp(&c.scaled(dt), DEFAULT_EXPM_TOL).map_err(|_| Error::Instability {
        time: s.t + dt,
        last_stable_time: s.t,
        condition_log: g.condition_log(),
    })?;
    let qbar = mat_vec_unchecked(&e, &s.qbar);
    if qbar.iter().any(|v| !v.is_finite()) {
        return Err(Error::Instability {
            time: s.t + dt,
            last_stable_time: s.t,
            condition_log: g.condition_log(),
        });
    }
    Ok(RobustState {
        t: s.t + dt,
        qbar,
        vbar: s.vbar.clone(),
        condition_log: g.condition_log(),
    })
}

/// One backward step of `dv̄ = -Γ Aᵀ Γ⁻¹ v̄ dt` with `g` frozen; `s` sits at
/// the end of the step.
pub fn robust_smoother_step(
    s: &RobustState,
    g: &GammaProcess,
    a: &RateMatrix,
    dt: f64,
    log_overflow: f64,
) -> Result<RobustState> {
    let c = coefficient(g, a, true, log_overflow, s.t - dt, s.t)?;
    let e = mat_exp(&c.scaled(dt), DEFAULT_EXPM_TOL).map_err(|_| Error::Instability {
        time: s.t - dt,
        last_stable_time: s.t,
        condition_log: g.condition_log(),
    })?;
    let vbar = mat_vec_unchecked(&e, &s.vbar);
    if vbar.iter().any(|v| !v.is_finite()) {
        return Err(Error::Instability {
            time: s.t - dt,
            last_stable_time: s.t,
            condition_log: g.condition_log(),
        });
    }
    Ok(RobustState {
        t: s.t - dt,
        qbar: s.qbar.clone(),
        vbar,
        condition_log: g.condition_log(),
    })
}

/// Forward run over event data, one row per step boundary.
#[derive(Debug, Clone)]
pub struct RobustRun {
    pub times: Vec<f64>,
    pub gammas: Vec<GammaProcess>,
    /// `Γ` frozen for step `k` (between boundaries `k` and `k + 1`).
    pub midpoints: Vec<GammaProcess>,
    pub qbar: Vec<Vec<f64>>,
    /// Set when the run stopped early; rows cover up to the last stable time.
    pub failure: Option<Error>,
}

impl RobustRun {
    /// `Γ_t q̄_t` at boundary `k`, which reproduces the unnormalized filter.
    pub fn unnormalized(&self, k: usize) -> Vec<f64> {
        self.qbar[k]
            .iter()
            .zip(&self.gammas[k].log_gamma)
            .map(|(q, lg)| q * lg.exp())
            .collect()
    }

    pub fn condition_log(&self) -> Vec<f64> {
        self.gammas.iter().map(GammaProcess::condition_log).collect()
    }
}

/// Runs the robust filter on `[0, horizon]` with substeps of at most
/// `max_substep`. Instability ends the run early rather than failing it.
pub fn robust_filter_events(
    model: &ModelSpec,
    events: &EventTimes,
    horizon: f64,
    max_substep: f64,
    log_overflow: f64,
) -> Result<RobustRun> {
    if !(max_substep > 0.0) {
        return invalid("max_substep must be positive");
    }
    let ev = events.as_slice();
    if let Some(&t) = ev.iter().find(|&&t| !(t > 0.0 && t <= horizon)) {
        return invalid(format!("event at {t} lies outside ]0, {horizon}]"));
    }
    let n = model.n();
    let params = &model.params;
    let a = &model.rate_matrix;
    let mut kernel = IntensityState::initial(params, 0.0);
    let mut g = GammaProcess::identity(n);
    let mut state = RobustState {
        t: 0.0,
        qbar: model.q0.clone(),
        vbar: vec![0.0; n],
        condition_log: 0.0,
    };
    let mut run = RobustRun {
        times: vec![0.0],
        gammas: vec![g.clone()],
        midpoints: Vec::new(),
        qbar: vec![state.qbar.clone()],
        failure: None,
    };

    let mut breakpoints: Vec<(f64, bool)> = ev.iter().map(|&t| (t, true)).collect();
    if ev.last().is_none_or(|&t| t < horizon) {
        breakpoints.push((horizon, false));
    }
    for (t_next, is_event) in breakpoints {
        let span = t_next - state.t;
        let n_sub = if span > 0.0 {
            ((span / max_substep) * (1.0 - 1e-12)).ceil().max(1.0) as usize
        } else {
            0
        };
        for k in 0..n_sub {
            let h = span / n_sub as f64;
            let lambda = eval_kernel(&kernel.k, params)?;
            let mid = gamma_update(&g, h / 2.0, &lambda, false)?;
            let last = k + 1 == n_sub;
            let stepped = robust_filter_step(&state, &mid, a, h, log_overflow);
            match stepped {
                Ok(mut s) => {
                    kernel.decay_in_place(params, h);
                    g = gamma_update(&g, h, &lambda, false)?;
                    if last {
                        s.t = t_next;
                        g.t = t_next;
                        if is_event {
                            // the jump factor uses λ(τ-), after the decay
                            let left = eval_kernel(&kernel.k, params)?;
                            g = gamma_update(&g, 0.0, &left, true)?;
                            kernel.jump_in_place(params);
                        }
                    }
                    s.condition_log = g.condition_log();
                    state = s;
                    run.times.push(state.t);
                    run.gammas.push(g.clone());
                    run.midpoints.push(mid);
                    run.qbar.push(state.qbar.clone());
                }
                Err(e) => {
                    run.failure = Some(e);
                    return Ok(run);
                }
            }
        }
    }
    Ok(run)
}

/// Backward sweep over a completed forward run; returns `v̄` at every
/// boundary, starting from `v̄_T = Γ_T 1`.
pub fn robust_smoother(run: &RobustRun, a: &RateMatrix, log_overflow: f64) -> Result<Vec<Vec<f64>>> {
    if let Some(e) = &run.failure {
        return Err(e.clone());
    }
    let nb = run.times.len();
    let last = &run.gammas[nb - 1];
    let mut s = RobustState {
        t: run.times[nb - 1],
        qbar: Vec::new(),
        vbar: last.log_gamma.iter().map(|lg| lg.exp()).collect(),
        condition_log: last.condition_log(),
    };
    let mut out = vec![Vec::new(); nb];
    out[nb - 1] = s.vbar.clone();
    for k in (0..nb - 1).rev() {
        let dt = run.times[k + 1] - run.times[k];
        s = robust_smoother_step(&s, &run.midpoints[k], a, dt, log_overflow)?;
        s.t = run.times[k];
        out[k] = s.vbar.clone();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HawkesParams;

    #[test]
    fn gamma_update_examples() {
        let g = GammaProcess::identity(2);
        let same = gamma_update(&g, 0.7, &[1.0, 1.0], true).unwrap();
        assert_eq!(same.log_gamma, vec![0.0, 0.0]);

        let g1 = gamma_update(&g, 1.0, &[6.0, 18.0], false).unwrap();
        assert_eq!(g1.log_gamma, vec![-5.0, -17.0]);
        assert_eq!(g1.condition_log(), 12.0);

        let e = std::f64::consts::E;
        let g2 = gamma_update(&GammaProcess::identity(1), 0.5, &[e], true).unwrap();
        assert!((g2.log_gamma[0] - (-(e - 1.0) * 0.5 + 1.0)).abs() < 1e-15);
        assert!(gamma_update(&g, 1.0, &[0.0, 1.0], false).is_err());
    }

    #[test]
    fn identity_gauge_reduces_to_chain_ode() {
        let a = RateMatrix::from_row_major(2, vec![-0.3, 0.2, 0.3, -0.2]).unwrap();
        let mut s = RobustState { t: 0.0, qbar: vec![1.0, 0.0], vbar: vec![1.0, 1.0], condition_log: 0.0 };
        let g = GammaProcess::identity(2);
        for _ in 0..10 {
            s = robust_filter_step(&s, &g, &a, 0.1, DEFAULT_LOG_OVERFLOW).unwrap();
        }
        let want = mat_vec_unchecked(&mat_exp(&a.matrix().scaled(1.0), 1e-12).unwrap(), &[1.0, 0.0]);
        assert!((s.qbar[0] - want[0]).abs() < 1e-12);

        let mut b = RobustState { t: 1.0, qbar: vec![], vbar: vec![1.0, 0.0], condition_log: 0.0 };
        b = robust_smoother_step(&b, &g, &a, 1.0, DEFAULT_LOG_OVERFLOW).unwrap();
        let want = mat_vec_unchecked(&mat_exp(&a.matrix().transpose(), 1e-12).unwrap(), &[1.0, 0.0]);
        assert!((b.vbar[1] - want[1]).abs() < 1e-12);
    }

    #[test]
    fn single_state_smoother_is_gamma() {
        let m = ModelSpec::new(
            RateMatrix::zero(1).unwrap(),
            HawkesParams::new(vec![3.0], vec![0.0], vec![1.0]).unwrap(),
            vec![1.0],
        )
        .unwrap();
        let run = robust_filter_events(&m, &EventTimes::default(), 2.0, 0.1, DEFAULT_LOG_OVERFLOW).unwrap();
        let v = robust_smoother(&run, &m.rate_matrix, DEFAULT_LOG_OVERFLOW).unwrap();
        // v̄ stays at Γ_T = e^{-(λ-1)T}
        assert!(v.iter().all(|x| (x[0] - (-4.0f64).exp()).abs() < 1e-15));
        assert_eq!(run.qbar.last().unwrap(), &vec![1.0]);
    }

    #[test]
    fn overflow_reports_last_stable_time() {
        let a = RateMatrix::two_state_symmetric(1.0).unwrap();
        let g = GammaProcess { t: 0.0, log_gamma: vec![0.0, 400.0] };
        let s = RobustState { t: 3.0, qbar: vec![1.0, 1.0], vbar: vec![], condition_log: 0.0 };
        match robust_filter_step(&s, &g, &a, 0.1, DEFAULT_LOG_OVERFLOW) {
            Err(Error::Instability { last_stable_time, condition_log, .. }) => {
                assert_eq!(last_stable_time, 3.0);
                assert_eq!(condition_log, 400.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn qbar_continuous_across_events() {
        let m = ModelSpec::with_stationary_q0(
            RateMatrix::two_state_symmetric(0.01).unwrap(),
            HawkesParams::new(vec![6.0, 18.0], vec![1.0, 0.01], vec![10.0 / 7.0, 0.1]).unwrap(),
        )
        .unwrap();
        let ev = EventTimes::new(vec![0.5]).unwrap();
        let run = robust_filter_events(&m, &ev, 1.0, 1e-3, DEFAULT_LOG_OVERFLOW).unwrap();
        let k = run.times.iter().position(|&t| t == 0.5).unwrap();
        let dq = (run.qbar[k][0] - run.qbar[k - 1][0]).abs();
        assert!(dq < 1e-4, "{dq}");
        // but Γ jumps by log λ
        let dg = run.gammas[k].log_gamma[0] - run.gammas[k - 1].log_gamma[0];
        assert!(dg > 1.0);
    }
}
