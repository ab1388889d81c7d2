//! Backward pass for fixed-interval smoothing.
//!
//! The backward vector `v_t` starts at `v_T = 1` and is propagated with the
//! transpose of each forward step: `exp((Aᵀ - (Λ - I)) h)` across intervals,
//! `diag(Λ)` across events and the combined exponent across count bins. The
//! smoothed posterior is `normalize(v_t ∘ p_t)`.
//!
//! `w` is renormalized every step. The log of the discarded factors is kept in
//! `log_scale` so that `log ⟨v_t, q_t⟩` can be reconstructed.

use crate::error::{invalid, Error, Result};
use crate::filter::{shifted_exp, step_diagonal, ForwardRecord, PosteriorPath, StepKind};
use crate::linalg::{mat_vec_unchecked, normalize_in_place};
use crate::model::{ModelSpec, RateMatrix};
use crate::simulate::CountSeries;

#[derive(Debug, Clone, PartialEq)]
pub struct SmootherState {
    pub t: f64,
    pub w: Vec<f64>,
    /// `v_t = e^{log_scale} w_t`.
    pub log_scale: f64,
}

pub fn smoother_init(n: usize, t: f64) -> SmootherState {
    SmootherState {
        t,
        w: vec![1.0 / n as f64; n],
        log_scale: (n as f64).ln(),
    }
}

fn renormalize(s: &mut SmootherState) -> Result<()> {
    let z = normalize_in_place(&mut s.w);
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::DegeneratePosterior(format!(
            "backward normalization {z} at t={}",
            s.t
        )));
    }
    s.log_scale += z.ln();
    Ok(())
}

/// Steps `w` back over an event-free interval of length `dt`.
pub fn smoother_step_interval_backward(
    s: &SmootherState,
    a: &RateMatrix,
    dt: f64,
    lambda_at_start: &[f64],
) -> Result<SmootherState> {
    if !(dt > 0.0) {
        return invalid(format!("interval length must be positive, got {dt}"));
    }
    backward_exp(s, a, dt, lambda_at_start, 0.0)
}

fn backward_exp(
    s: &SmootherState,
    a: &RateMatrix,
    dt: f64,
    lambda: &[f64],
    count: f64,
) -> Result<SmootherState> {
    if let Some(l) = lambda.iter().find(|l| !(**l > 0.0)) {
        return Err(Error::InvalidState(format!("intensity {l} is not positive")));
    }
    let base = a.matrix().transpose().scaled(dt);
    let (e, shift) = shifted_exp(&base, &step_diagonal(lambda, dt, count))?;
    let mut out = SmootherState {
        t: s.t - dt,
        w: mat_vec_unchecked(&e, &s.w),
        log_scale: s.log_scale + shift,
    };
    renormalize(&mut out)?;
    Ok(out)
}

/// Steps `w` back across an event: `v(τ-) = Λ(τ) v(τ)`.
pub fn smoother_step_jump_backward(
    s: &SmootherState,
    lambda_at_jump: &[f64],
) -> Result<SmootherState> {
    if let Some(l) = lambda_at_jump.iter().find(|l| !(**l > 0.0)) {
        return Err(Error::InvalidState(format!("intensity {l} is not positive")));
    }
    let mut out = SmootherState {
        t: s.t,
        w: s.w.iter().zip(lambda_at_jump).map(|(w, l)| w * l).collect(),
        log_scale: s.log_scale,
    };
    renormalize(&mut out)?;
    Ok(out)
}

/// `normalize(p ∘ w)`.
pub fn smooth_combine(filter_p: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    if filter_p.len() != w.len() {
        return invalid("posterior and backward vector dimensions differ");
    }
    let mut r: Vec<f64> = filter_p.iter().zip(w).map(|(p, w)| p * w).collect();
    let z = normalize_in_place(&mut r);
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::DegeneratePosterior(
            "filtered posterior and backward vector have disjoint support".into(),
        ));
    }
    Ok(r)
}

/// Runs the backward pass over a forward record and returns the smoother
/// state at every step boundary.
pub fn backward_states(model: &ModelSpec, record: &ForwardRecord) -> Result<Vec<SmootherState>> {
    let n = model.n();
    let nb = record.times.len();
    if record.steps.len() + 1 != nb || record.probs.len() != nb {
        return invalid("forward record is inconsistent");
    }
    let mut states = vec![smoother_init(n, record.times[nb - 1]); nb];
    for k in (0..record.steps.len()).rev() {
        let step = &record.steps[k];
        if step.lambda.len() != n {
            return invalid("forward record dimension does not match the model");
        }
        let next = &states[k + 1];
        let mut s = match step.kind {
            StepKind::Interval { dt } => backward_exp(next, &model.rate_matrix, dt, &step.lambda, 0.0)?,
            StepKind::Jump => smoother_step_jump_backward(next, &step.lambda)?,
            StepKind::Bin { dt, count } => {
                backward_exp(next, &model.rate_matrix, dt, &step.lambda, count)?
            }
        };
        s.t = record.times[k];
        states[k] = s;
    }
    Ok(states)
}

/// Smoothed posterior at the recorded points of a forward pass.
pub fn smooth(model: &ModelSpec, record: &ForwardRecord) -> Result<PosteriorPath> {
    let states = backward_states(model, record)?;
    let probs = record
        .recorded
        .iter()
        .map(|&i| smooth_combine(&record.probs[i], &states[i].w))
        .collect::<Result<Vec<_>>>()?;
    Ok(PosteriorPath {
        times: record.recorded.iter().map(|&i| record.times[i]).collect(),
        probs,
        log_evidence: *record.log_evidence.last().unwrap(),
    })
}

/// Backward sweep for count data, checking that the record was produced
/// from `counts`.
pub fn smooth_counts_backward(
    model: &ModelSpec,
    counts: &CountSeries,
    forward: &ForwardRecord,
) -> Result<PosteriorPath> {
    if forward.steps.len() != counts.len() {
        return invalid(format!(
            "forward record has {} steps for {} bins",
            forward.steps.len(),
            counts.len()
        ));
    }
    for (i, (step, &c)) in forward.steps.iter().zip(&counts.counts).enumerate() {
        match step.kind {
            StepKind::Bin { dt, count } if count == c && (dt - counts.dt).abs() <= 1e-12 * counts.dt => {}
            _ => return invalid(format!("forward record step {i} does not match bin {i}")),
        }
    }
    smooth(model, forward)
}

/// Filtered and smoothed paths for count data.
pub fn filter_smooth_counts(
    model: &ModelSpec,
    counts: &CountSeries,
) -> Result<(PosteriorPath, PosteriorPath)> {
    let rec = crate::filter::filter_counts_recorded(model, counts)?;
    let smoothed = smooth_counts_backward(model, counts, &rec)?;
    Ok((rec.filtered_path(), smoothed))
}
