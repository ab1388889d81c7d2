//! Forward pass: normalized filtered posterior `P(X_t = e_i | Y_s, s <= t)`
//! with the log of the discarded normalization constants tracked as the
//! log-evidence (log-likelihood relative to a unit-rate Poisson reference).
//!
//! Between events the unnormalized density obeys `dq = (A - (Λ - I)) q dt`
//! and is advanced with the exponential of that matrix, `Λ` frozen at the
//! start of each substep. At an event `q ← Λ(t-) q`, after which the kernel
//! absorbs the jump. In count mode each bin applies one combined exponent
//! `(A - (Λ - I))Δ + δY log Λ` using the kernel value at the bin start.

use crate::error::{invalid, Error, Result};
use crate::linalg::{mat_exp, mat_vec_unchecked, normalize_in_place, SquareMatrix, DEFAULT_EXPM_TOL};
use crate::model::{eval_kernel, IntensityState, ModelSpec, RateMatrix};
use crate::simulate::{CountSeries, EventTimes};

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub t: f64,
    /// Normalized posterior.
    pub p: Vec<f64>,
    /// `log ⟨q_t, 1⟩`.
    pub log_evidence: f64,
    pub kernel: IntensityState,
}

impl FilterState {
    /// Unnormalized density `q_t = e^{log_evidence} p_t`.
    pub fn unnormalized(&self) -> Vec<f64> {
        let s = self.log_evidence.exp();
        self.p.iter().map(|p| p * s).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorPath {
    pub times: Vec<f64>,
    pub probs: Vec<Vec<f64>>,
    pub log_evidence: f64,
}

impl PosteriorPath {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_states(&self) -> usize {
        self.probs.first().map_or(0, Vec::len)
    }

    /// Most probable state at each recorded time.
    pub fn argmax(&self) -> Vec<usize> {
        self.probs
            .iter()
            .map(|p| {
                p.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map_or(0, |(i, _)| i)
            })
            .collect()
    }
}

/// Default substep: `min(0.1, 1 / max γ)`.
pub fn default_max_substep(model: &ModelSpec) -> f64 {
    let gmax = model.params.gamma.iter().copied().fold(0.0, f64::max);
    if gmax > 0.0 {
        (1.0 / gmax).min(0.1)
    } else {
        0.1
    }
}

pub fn filter_init(model: &ModelSpec) -> FilterState {
    FilterState {
        t: 0.0,
        p: model.q0.clone(),
        log_evidence: 0.0,
        kernel: IntensityState::initial(&model.params, 0.0),
    }
}

/// Exponential of `base + diag(d)`, shifted by the largest diagonal entry so
/// large exponents stay finite. Returns the matrix and the shift.
pub(crate) fn shifted_exp(base: &SquareMatrix, d: &[f64]) -> Result<(SquareMatrix, f64)> {
    let mut m = base.clone();
    m.add_diag(d);
    let shift = m.diag().into_iter().fold(f64::NEG_INFINITY, f64::max);
    m.add_diag(&vec![-shift; d.len()]);
    Ok((mat_exp(&m, DEFAULT_EXPM_TOL)?, shift))
}

/// Diagonal of the exponent for an interval of length `h` carrying `count`
/// events: `(1 - λ_i) h + count · log λ_i`.
pub(crate) fn step_diagonal(lambda: &[f64], h: f64, count: f64) -> Vec<f64> {
    lambda
        .iter()
        .map(|&l| {
            let mut d = (1.0 - l) * h;
            if count != 0.0 {
                d += count * l.ln();
            }
            d
        })
        .collect()
}

fn check_positive(lambda: &[f64]) -> Result<()> {
    if let Some((i, l)) = lambda.iter().enumerate().find(|(_, l)| !(**l > 0.0)) {
        return Err(Error::InvalidState(format!("intensity lambda[{i}] = {l} is not positive")));
    }
    Ok(())
}

/// Applies `exp(base + diag)` to `p`, renormalizes, and returns the log of
/// the normalization factor.
fn apply_step(base: &SquareMatrix, diag: &[f64], p: &mut Vec<f64>) -> Result<f64> {
    let (e, shift) = shifted_exp(base, diag)?;
    *p = mat_vec_unchecked(&e, p);
    let s = normalize_in_place(p);
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::DegeneratePosterior(format!("normalization factor {s}")));
    }
    Ok(shift + s.ln())
}

/// Kind of one forward computation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepKind {
    /// Interval without events, integrated with `Λ` frozen at its start.
    Interval { dt: f64 },
    /// Observed event; `Λ` is the left limit.
    Jump,
    /// Count bin.
    Bin { dt: f64, count: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardStep {
    pub t_start: f64,
    pub kind: StepKind,
    pub lambda: Vec<f64>,
}

/// Everything the backward pass needs: each step with its intensity, and the
/// filter state at every step boundary (`boundaries.len() == steps.len() + 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardRecord {
    pub steps: Vec<ForwardStep>,
    pub times: Vec<f64>,
    pub probs: Vec<Vec<f64>>,
    pub log_evidence: Vec<f64>,
    /// Boundary indices that appear in the output path.
    pub recorded: Vec<usize>,
}

impl ForwardRecord {
    fn new(s: &FilterState) -> Self {
        Self {
            steps: Vec::new(),
            times: vec![s.t],
            probs: vec![s.p.clone()],
            log_evidence: vec![s.log_evidence],
            recorded: vec![0],
        }
    }

    fn push(&mut self, step: ForwardStep, s: &FilterState) {
        self.steps.push(step);
        self.times.push(s.t);
        self.probs.push(s.p.clone());
        self.log_evidence.push(s.log_evidence);
    }

    fn mark(&mut self) {
        let last = self.times.len() - 1;
        if self.recorded.last() != Some(&last) {
            self.recorded.push(last);
        }
    }

    pub fn filtered_path(&self) -> PosteriorPath {
        PosteriorPath {
            times: self.recorded.iter().map(|&i| self.times[i]).collect(),
            probs: self.recorded.iter().map(|&i| self.probs[i].clone()).collect(),
            log_evidence: *self.log_evidence.last().unwrap(),
        }
    }
}

/// Advances over an event-free interval of length `dt`.
pub fn filter_step_interval(
    model: &ModelSpec,
    s: &FilterState,
    dt: f64,
    max_substep: f64,
) -> Result<FilterState> {
    let mut out = s.clone();
    interval_in_place(model, &mut out, dt, max_substep, None)?;
    Ok(out)
}

fn interval_in_place(
    model: &ModelSpec,
    s: &mut FilterState,
    dt: f64,
    max_substep: f64,
    mut record: Option<&mut ForwardRecord>,
) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return invalid(format!("interval length must be positive, got {dt}"));
    }
    if !(max_substep > 0.0) {
        return invalid(format!("max_substep must be positive, got {max_substep}"));
    }
    let n_sub = ((dt / max_substep) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let h = dt / n_sub as f64;
    let base = model.rate_matrix.matrix().scaled(h);
    let t_end = s.t + dt;
    for k in 0..n_sub {
        let lambda = eval_kernel(&s.kernel.k, &model.params)?;
        let t_start = s.t;
        s.log_evidence += apply_step(&base, &step_diagonal(&lambda, h, 0.0), &mut s.p)?;
        s.kernel.decay_in_place(&model.params, h);
        s.t = if k + 1 == n_sub { t_end } else { t_start + h };
        s.kernel.t = s.t;
        if let Some(r) = record.as_deref_mut() {
            r.push(
                ForwardStep {
                    t_start,
                    kind: StepKind::Interval { dt: h },
                    lambda,
                },
                s,
            );
        }
    }
    Ok(())
}

/// Conditions on an event at the current time.
pub fn filter_step_jump(model: &ModelSpec, s: &FilterState) -> Result<FilterState> {
    let mut out = s.clone();
    jump_in_place(model, &mut out, None)?;
    Ok(out)
}

fn jump_in_place(
    model: &ModelSpec,
    s: &mut FilterState,
    record: Option<&mut ForwardRecord>,
) -> Result<()> {
    let lambda = eval_kernel(&s.kernel.k, &model.params)?;
    check_positive(&lambda)?;
    for (p, l) in s.p.iter_mut().zip(&lambda) {
        *p *= l;
    }
    let z = normalize_in_place(&mut s.p);
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::DegeneratePosterior(format!("jump normalization {z}")));
    }
    s.log_evidence += z.ln();
    s.kernel.jump_in_place(&model.params);
    if let Some(r) = record {
        r.push(
            ForwardStep {
                t_start: s.t,
                kind: StepKind::Jump,
                lambda,
            },
            s,
        );
    }
    Ok(())
}

/// Filters exact event times on `[0, horizon]`, recording the posterior at
/// time 0, every `output_grid` time, every event (after conditioning on it)
/// and the horizon.
pub fn filter_events(
    model: &ModelSpec,
    events: &EventTimes,
    horizon: f64,
    output_grid: &[f64],
    max_substep: f64,
) -> Result<PosteriorPath> {
    Ok(filter_events_recorded(model, events, horizon, output_grid, max_substep)?.filtered_path())
}

pub fn filter_events_recorded(
    model: &ModelSpec,
    events: &EventTimes,
    horizon: f64,
    output_grid: &[f64],
    max_substep: f64,
) -> Result<ForwardRecord> {
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return invalid(format!("horizon must be finite and nonnegative, got {horizon}"));
    }
    let ev = events.as_slice();
    if let Some(&t) = ev.iter().find(|&&t| !(t > 0.0 && t <= horizon)) {
        return invalid(format!("event at {t} lies outside ]0, {horizon}]"));
    }
    if output_grid.windows(2).any(|w| w[0] > w[1]) {
        return invalid("output grid must be sorted");
    }

    // merge events and grid into (time, is_event) breakpoints
    let mut grid: Vec<f64> = output_grid
        .iter()
        .copied()
        .filter(|&t| t > 0.0 && t <= horizon)
        .collect();
    grid.push(horizon);
    let mut points: Vec<(f64, bool)> = Vec::with_capacity(ev.len() + grid.len());
    let (mut i, mut j) = (0, 0);
    while i < ev.len() || j < grid.len() {
        if j >= grid.len() || (i < ev.len() && ev[i] <= grid[j]) {
            if j < grid.len() && ev[i] == grid[j] {
                j += 1;
            }
            points.push((ev[i], true));
            i += 1;
        } else {
            if points.last().is_none_or(|p| p.0 < grid[j]) {
                points.push((grid[j], false));
            }
            j += 1;
        }
    }

    let mut s = filter_init(model);
    let mut rec = ForwardRecord::new(&s);
    for (t, is_event) in points {
        if t > s.t {
            let gap = t - s.t;
            interval_in_place(model, &mut s, gap, max_substep, Some(&mut rec))?;
        }
        if is_event {
            jump_in_place(model, &mut s, Some(&mut rec))?;
        }
        rec.mark();
    }
    Ok(rec)
}

/// Filters binned counts. The path holds `counts.len() + 1` points: the
/// grid start and the right edge of every bin.
pub fn filter_counts(model: &ModelSpec, counts: &CountSeries) -> Result<PosteriorPath> {
    Ok(filter_counts_recorded(model, counts)?.filtered_path())
}

pub fn filter_counts_recorded(model: &ModelSpec, counts: &CountSeries) -> Result<ForwardRecord> {
    if let Some(c) = counts.counts.iter().find(|c| !(**c >= 0.0)) {
        return invalid(format!("negative count {c}"));
    }
    let dt = counts.dt;
    let base = model.rate_matrix.matrix().scaled(dt);
    let mut s = filter_init(model);
    s.t = counts.t0;
    s.kernel.t = counts.t0;
    let mut rec = ForwardRecord::new(&s);
    for (i, &count) in counts.counts.iter().enumerate() {
        let lambda = eval_kernel(&s.kernel.k, &model.params)?;
        check_positive(&lambda)?;
        let t_start = s.t;
        s.log_evidence += apply_step(&base, &step_diagonal(&lambda, dt, count), &mut s.p)?;
        s.kernel.discrete_update_in_place(&model.params, dt, count);
        s.t = counts.bin_end(i);
        s.kernel.t = s.t;
        rec.push(
            ForwardStep {
                t_start,
                kind: StepKind::Bin { dt, count },
                lambda,
            },
            &s,
        );
        rec.mark();
    }
    Ok(rec)
}

/// Propagates a posterior `s` time units ahead with no further observations.
pub fn predict(p: &[f64], a: &RateMatrix, s: f64) -> Result<Vec<f64>> {
    if !(s >= 0.0 && s.is_finite()) {
        return invalid(format!("prediction horizon must be nonnegative, got {s}"));
    }
    if p.len() != a.n() {
        return invalid("posterior and rate matrix dimensions differ");
    }
    let e = mat_exp(&a.matrix().scaled(s), DEFAULT_EXPM_TOL)?;
    let mut out = mat_vec_unchecked(&e, p);
    normalize_in_place(&mut out);
    Ok(out)
}
