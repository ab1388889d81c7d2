//! Sample paths of the hidden chain and of the modulated self-exciting
//! counting process.
//!
//! Every sampler draws from a `ChaCha8Rng` seeded with the caller's seed; the
//! chain uses stream 0 and segment `s` of an event sampler uses stream
//! `s + 1`, so results do not depend on how many draws other parts consumed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};

use crate::error::{invalid, Error, Result};
use crate::model::{eval_kernel, IntensityState, ModelSpec, RateMatrix};

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Right-continuous piecewise-constant path of the hidden chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainPath {
    pub jump_times: Vec<f64>,
    /// `states[0]` is the initial state; `states[k]` holds on
    /// `[jump_times[k-1], jump_times[k])`.
    pub states: Vec<usize>,
}

impl ChainPath {
    pub fn constant(state: usize) -> Self {
        Self {
            jump_times: Vec::new(),
            states: vec![state],
        }
    }

    /// A path that switches at the given times.
    pub fn from_changepoints(changepoints: &[f64], labels: &[usize]) -> Result<Self> {
        if labels.len() != changepoints.len() + 1 {
            return invalid(format!(
                "{} changepoints need {} labels, got {}",
                changepoints.len(),
                changepoints.len() + 1,
                labels.len()
            ));
        }
        if changepoints.windows(2).any(|w| !(w[0] < w[1])) {
            return invalid("changepoints must be strictly increasing");
        }
        Ok(Self {
            jump_times: changepoints.to_vec(),
            states: labels.to_vec(),
        })
    }

    pub fn state_at(&self, t: f64) -> usize {
        let k = self.jump_times.partition_point(|&s| s <= t);
        self.states[k]
    }

    /// State in force just before `t` (the one modulating an event at `t`).
    pub fn state_before(&self, t: f64) -> usize {
        let k = self.jump_times.partition_point(|&s| s < t);
        self.states[k]
    }

    /// `(start, end, state)` pieces covering `[0, horizon]`.
    pub fn segments(&self, horizon: f64) -> Vec<(f64, f64, usize)> {
        let mut out = Vec::new();
        let mut start = 0.0;
        for (k, &state) in self.states.iter().enumerate() {
            let end = self.jump_times.get(k).copied().unwrap_or(horizon).min(horizon);
            if end > start {
                out.push((start, end, state));
            }
            start = start.max(end);
            if start >= horizon {
                break;
            }
        }
        out
    }
}

/// Strictly increasing event times.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventTimes {
    times: Vec<f64>,
}

impl EventTimes {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if let Some(t) = times.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
            return invalid(format!("event time {t} is not a finite nonnegative number"));
        }
        if let Some(w) = times.windows(2).find(|w| !(w[0] < w[1])) {
            return invalid(format!(
                "event times must be strictly increasing ({} then {})",
                w[0], w[1]
            ));
        }
        Ok(Self { times })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Event counts on the uniform grid `]t0 + (i-1)dt, t0 + i dt]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CountSeries {
    pub t0: f64,
    pub dt: f64,
    /// Real-valued so that rescaled counts fit.
    pub counts: Vec<f64>,
}

impl CountSeries {
    pub fn new(t0: f64, dt: f64, counts: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return invalid(format!("bin width must be positive, got {dt}"));
        }
        if let Some(c) = counts.iter().find(|c| !(**c >= 0.0 && c.is_finite())) {
            return invalid(format!("count {c} must be finite and nonnegative"));
        }
        Ok(Self { t0, dt, counts })
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Right edge of bin `i` (0-based).
    pub fn bin_end(&self, i: usize) -> f64 {
        self.t0 + (i + 1) as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.t0 + self.counts.len() as f64 * self.dt
    }
}

/// Where the chain starts.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    State(usize),
    Law(Vec<f64>),
}

/// Continuous-time simulation of the hidden chain on `[0, horizon]`.
pub fn simulate_chain(
    a: &RateMatrix,
    x0: &InitialState,
    horizon: f64,
    seed: u64,
) -> Result<ChainPath> {
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return invalid(format!("horizon must be finite and nonnegative, got {horizon}"));
    }
    let n = a.n();
    let mut rng = rng_for(seed, 0);
    let mut state = match x0 {
        InitialState::State(s) if *s < n => *s,
        InitialState::State(s) => return invalid(format!("initial state {s} out of range")),
        InitialState::Law(p) => {
            if p.len() != n {
                return invalid("initial law has wrong length");
            }
            sample_index(&mut rng, p, p.iter().sum())
        }
    };
    let mut path = ChainPath::constant(state);
    let mut t = 0.0;
    loop {
        let rate = a.exit_rate(state);
        if rate <= 0.0 {
            break;
        }
        t += Exp::new(rate).unwrap().sample(&mut rng);
        if t > horizon {
            break;
        }
        let weights: Vec<f64> = (0..n)
            .map(|i| if i == state { 0.0 } else { a.rate(state, i) })
            .collect();
        state = sample_index(&mut rng, &weights, rate);
        path.jump_times.push(t);
        path.states.push(state);
    }
    Ok(path)
}

fn sample_index(rng: &mut ChaCha8Rng, weights: &[f64], total: f64) -> usize {
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Ogata thinning along a given chain path.
///
/// Between events every kernel relaxes monotonically toward `α`, so the
/// intensity just after the last event (or segment start) dominates the
/// intensity until the next event and serves as the thinning bound.
/// Kernels of all states are carried across chain jumps. `intensity_cap`,
/// when given, replaces the adaptive bound with a fixed dominating rate and
/// errors if the intensity ever exceeds it.
pub fn simulate_events_thinning(
    model: &ModelSpec,
    chain: &ChainPath,
    horizon: f64,
    seed: u64,
    intensity_cap: Option<f64>,
) -> Result<EventTimes> {
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return invalid(format!("horizon must be finite and nonnegative, got {horizon}"));
    }
    if let Some(c) = intensity_cap {
        if !(c > 0.0 && c.is_finite()) {
            return invalid(format!("intensity cap must be positive, got {c}"));
        }
    }
    let params = &model.params;
    let mut kernel = IntensityState::initial(params, 0.0);
    let mut times = Vec::new();

    for (seg, (start, end, state)) in chain.segments(horizon).into_iter().enumerate() {
        if state >= params.n() {
            return invalid(format!("chain state {state} out of range"));
        }
        let mut rng = rng_for(seed, seg as u64 + 1);
        let mut t = start;
        loop {
            let current = eval_kernel(&kernel.k, params)?[state];
            let bound = match intensity_cap {
                Some(c) if current > c => {
                    return invalid(format!(
                        "intensity {current} exceeds the supplied cap {c} at t={t}"
                    ))
                }
                Some(c) => c,
                None => current,
            };
            let cand = t + Exp::new(bound).unwrap().sample(&mut rng);
            if cand >= end {
                kernel.decay_in_place(params, end - t);
                break;
            }
            kernel.decay_in_place(params, cand - t);
            t = cand;
            let lam = eval_kernel(&kernel.k, params)?[state];
            if rng.random::<f64>() * bound <= lam {
                times.push(t);
                kernel.jump_in_place(params);
            }
        }
    }
    EventTimes::new(times)
}

/// Output of the cluster sampler together with its offspring tally.
#[derive(Debug, Clone)]
pub struct BranchingSample {
    pub events: EventTimes,
    /// Events whose offspring were drawn.
    pub parents: usize,
    /// Offspring drawn in total, including those falling past the segment end.
    pub offspring: usize,
}

/// Cluster (immigrant plus offspring) sampler, run independently on each
/// chain segment; excitation crossing a segment boundary is dropped.
pub fn simulate_events_branching(
    model: &ModelSpec,
    chain: &ChainPath,
    horizon: f64,
    seed: u64,
) -> Result<EventTimes> {
    Ok(simulate_branching_with_stats(model, chain, horizon, seed)?.events)
}

pub fn simulate_branching_with_stats(
    model: &ModelSpec,
    chain: &ChainPath,
    horizon: f64,
    seed: u64,
) -> Result<BranchingSample> {
    let params = &model.params;
    if !params.is_linear() {
        return Err(Error::Unsupported(
            "the cluster representation needs zeta = 1".into(),
        ));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return invalid(format!("horizon must be finite and nonnegative, got {horizon}"));
    }
    let mut times = Vec::new();
    let (mut parents, mut offspring) = (0usize, 0usize);

    for (seg, (start, end, state)) in chain.segments(horizon).into_iter().enumerate() {
        let (a, b, g) = (params.alpha[state], params.beta[state], params.gamma[state]);
        if b > 0.0 && b >= g {
            return Err(Error::NonStationary(format!(
                "state {state}: clusters are infinite when beta {b} >= gamma {g}"
            )));
        }
        let mut rng = rng_for(seed, seg as u64 + 1);
        let n_imm = Poisson::new(a * (end - start)).unwrap().sample(&mut rng) as usize;
        let mut generation: Vec<f64> = (0..n_imm)
            .map(|_| start + rng.random::<f64>() * (end - start))
            .collect();
        let branch = (b > 0.0).then(|| (Poisson::new(b / g).unwrap(), Exp::new(g).unwrap()));
        let mut seg_times = Vec::new();
        while !generation.is_empty() {
            let mut next = Vec::new();
            if let Some((n_dist, delay)) = &branch {
                for &parent in &generation {
                    parents += 1;
                    let k = n_dist.sample(&mut rng) as usize;
                    offspring += k;
                    for _ in 0..k {
                        let child = parent + delay.sample(&mut rng);
                        if child < end {
                            next.push(child);
                        }
                    }
                }
            }
            seg_times.extend(generation);
            generation = next;
        }
        seg_times.sort_by(f64::total_cmp);
        seg_times.dedup();
        times.extend(seg_times.into_iter().filter(|&t| t > 0.0));
    }
    Ok(BranchingSample {
        events: EventTimes::new(times)?,
        parents,
        offspring,
    })
}

/// Counts events into `n_bins` bins of width `dt` starting at `t0`.
pub fn bin_counts(events: &EventTimes, t0: f64, dt: f64, n_bins: usize) -> Result<CountSeries> {
    if !(dt > 0.0 && dt.is_finite()) {
        return invalid(format!("bin width must be positive, got {dt}"));
    }
    let mut counts = vec![0.0; n_bins];
    for &t in events.as_slice() {
        if t <= t0 {
            continue;
        }
        let idx = ((t - t0) / dt).ceil() as usize;
        if idx >= 1 && idx <= n_bins {
            counts[idx - 1] += 1.0;
        }
    }
    CountSeries::new(t0, dt, counts)
}
