//! Likelihoods, EM calibration of the intensity parameters, and the
//! rate-matrix EM fixed point.

use crate::error::{invalid, Error, Result};
use crate::filter::PosteriorPath;
use crate::linalg::SquareMatrix;
use crate::model::{HawkesParams, IntensityState, ModelSpec, RateMatrix};
use crate::nelder_mead::{nelder_mead_maximize, NelderMeadOptions};
use crate::simulate::{ChainPath, CountSeries, EventTimes};
use crate::smoother::filter_smooth_counts;

/// Floor applied to `β` and `γ` before taking logs.
const LOG_FLOOR: f64 = 1e-12;

/// Unconstrained packing of [`HawkesParams`]: componentwise logs of
/// `α`, `β`, `γ` and optionally `ζ`, state-major within each block.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    n: usize,
    fit_zeta: bool,
}

impl ParamVector {
    pub fn encode(params: &HawkesParams, fit_zeta: bool) -> Self {
        let mut values: Vec<f64> = params.alpha.iter().map(|a| a.ln()).collect();
        values.extend(params.beta.iter().map(|b| b.max(LOG_FLOOR).ln()));
        values.extend(params.gamma.iter().map(|g| g.max(LOG_FLOOR).ln()));
        if fit_zeta {
            values.extend(params.zeta.iter().map(|z| z.ln()));
        }
        Self {
            values,
            n: params.n(),
            fit_zeta,
        }
    }

    /// Decodes `values`; `fixed_zeta` supplies ζ when it is not packed.
    pub fn decode_values(&self, values: &[f64], fixed_zeta: &[f64]) -> Result<HawkesParams> {
        let n = self.n;
        let block = |b: usize| values[b * n..(b + 1) * n].iter().map(|v| v.exp()).collect::<Vec<_>>();
        let zeta = if self.fit_zeta { block(3) } else { fixed_zeta.to_vec() };
        HawkesParams::with_zeta(block(0), block(1), block(2), zeta)
    }

    pub fn decode(&self, fixed_zeta: &[f64]) -> Result<HawkesParams> {
        self.decode_values(&self.values, fixed_zeta)
    }
}

/// `log` of the intensity at events minus its integral, given the full
/// state path. Exact for `ζ = 1`; composite Simpson with panels of at most
/// `0.01` otherwise.
pub fn loglik_complete(
    params: &HawkesParams,
    chain: &ChainPath,
    events: &EventTimes,
    horizon: f64,
) -> Result<f64> {
    if let Some(&s) = chain.states.iter().find(|&&s| s >= params.n()) {
        return invalid(format!("chain state {s} out of range"));
    }
    let mut breaks: Vec<(f64, bool)> = chain
        .jump_times
        .iter()
        .filter(|&&t| t > 0.0 && t < horizon)
        .map(|&t| (t, false))
        .collect();
    breaks.extend(events.as_slice().iter().filter(|&&t| t <= horizon).map(|&t| (t, true)));
    breaks.push((horizon, false));
    breaks.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut kernel = IntensityState::initial(params, 0.0);
    let mut t = 0.0;
    let mut total = 0.0;
    for (b, is_event) in breaks {
        if b > t {
            let s = chain.state_at(t);
            total -= segment_integral(params, s, kernel.k[s], b - t);
            kernel.decay_in_place(params, b - t);
            t = b;
        }
        if is_event {
            let s = chain.state_before(t);
            let k = kernel.k[s];
            let lam = if params.zeta[s] == 1.0 { k } else { k.powf(params.zeta[s]) };
            if !(lam > 0.0) {
                return Ok(f64::NEG_INFINITY);
            }
            total += lam.ln();
            kernel.jump_in_place(params);
        }
    }
    Ok(total)
}

/// `∫_0^len (α + (k - α) e^{-γu})^ζ du` for state `s`.
fn segment_integral(params: &HawkesParams, s: usize, k: f64, len: f64) -> f64 {
    let (a, g, z) = (params.alpha[s], params.gamma[s], params.zeta[s]);
    let excess = k - a;
    if z == 1.0 {
        let decay_part = if g > 0.0 {
            excess * -(-g * len).exp_m1() / g
        } else {
            excess * len
        };
        return a * len + decay_part;
    }
    let panels = ((len / 0.01).ceil() as usize).max(1) * 2;
    let h = len / panels as f64;
    let f = |u: f64| (a + excess * (-g * u).exp()).powf(z);
    let mut acc = f(0.0) + f(len);
    for i in 1..panels {
        acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

fn check_aligned(rhat: &PosteriorPath, counts: &CountSeries) -> Result<()> {
    if rhat.len() != counts.len() + 1 {
        return invalid(format!(
            "posterior path has {} points; {} bins need {}",
            rhat.len(),
            counts.len(),
            counts.len() + 1
        ));
    }
    for (i, &t) in rhat.times.iter().enumerate() {
        let want = counts.t0 + i as f64 * counts.dt;
        if (t - want).abs() > 1e-9 * want.abs().max(1.0) {
            return invalid(format!("posterior time {t} does not match grid point {want}"));
        }
    }
    Ok(())
}

/// `Σ_i ⟨r̂(t_i), δY_i log λ(t_{i-1}) - λ(t_{i-1}) Δ⟩` with the kernel driven
/// by the observed counts under `params`.
pub fn loglik_partial_discrete(
    params: &HawkesParams,
    rhat: &PosteriorPath,
    counts: &CountSeries,
) -> Result<f64> {
    check_aligned(rhat, counts)?;
    if rhat.n_states() != params.n() {
        return invalid("posterior and parameter dimensions differ");
    }
    Ok(partial_unchecked(params, rhat, counts))
}

fn partial_unchecked(params: &HawkesParams, rhat: &PosteriorPath, counts: &CountSeries) -> f64 {
    let n = params.n();
    let dt = counts.dt;
    let decay: Vec<f64> = params.gamma.iter().map(|g| (-g * dt).exp()).collect();
    let spread: Vec<f64> = (0..n)
        .map(|i| params.beta[i] * crate::model::uniform_spread_factor(params.gamma[i] * dt))
        .collect();
    let mut k = params.alpha.clone();
    let mut total = 0.0;
    for (i, &c) in counts.counts.iter().enumerate() {
        let r = &rhat.probs[i + 1];
        for s in 0..n {
            let z = params.zeta[s];
            let (lam, log_lam) = if z == 1.0 {
                (k[s], k[s].ln())
            } else {
                let ll = z * k[s].ln();
                (ll.exp(), ll)
            };
            let mut term = -lam * dt;
            if c != 0.0 {
                term += c * log_lam;
            }
            total += r[s] * term;
            k[s] = params.alpha[s] + decay[s] * (k[s] - params.alpha[s]) + spread[s] * c;
        }
    }
    total
}

/// Hard posterior that is constant between changepoints. Bin `i` takes the
/// label of the segment containing its midpoint, so boundaries snap to the
/// nearest bin edge.
pub fn initial_clustering(
    counts: &CountSeries,
    changepoints: &[f64],
    labels: &[usize],
    n_states: usize,
) -> Result<PosteriorPath> {
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
    if let Some(&l) = labels.iter().find(|&&l| l >= n_states) {
        return invalid(format!("label {l} out of range for {n_states} states"));
    }
    let onehot = |l: usize| {
        let mut v = vec![0.0; n_states];
        v[l] = 1.0;
        v
    };
    let label_at = |t: f64| labels[changepoints.partition_point(|&c| c <= t)];
    let mut times = vec![counts.t0];
    let mut probs = vec![onehot(label_at(counts.t0 + 0.5 * counts.dt))];
    for i in 0..counts.len() {
        times.push(counts.bin_end(i));
        probs.push(onehot(label_at(counts.bin_end(i) - 0.5 * counts.dt)));
    }
    Ok(PosteriorPath {
        times,
        probs,
        log_evidence: f64::NAN,
    })
}

/// Which posterior weights the M-step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    #[default]
    Smoothed,
    Filtered,
}

#[derive(Debug, Clone)]
pub struct EmOptions {
    pub weighting: Weighting,
    pub fit_zeta: bool,
    pub optimizer: NelderMeadOptions,
    /// Simplex restarts from the best point per M-step.
    pub restarts: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            weighting: Weighting::Smoothed,
            fit_zeta: false,
            optimizer: NelderMeadOptions {
                tol: 1e-7,
                max_iter: 4000,
                initial_step: 0.1,
            },
            restarts: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmIteration {
    pub params: HawkesParams,
    /// M-step objective: partial log-likelihood of `params` under the weights
    /// it was fitted to.
    pub objective: f64,
    /// Partial log-likelihood of `params` under its own posterior.
    pub loglik: f64,
    /// Log-likelihood of the observations alone (the filter's log-evidence)
    /// under `params`. EM does not decrease it.
    pub log_evidence: f64,
}

fn posterior_for(model: &ModelSpec, counts: &CountSeries, w: Weighting) -> Result<(PosteriorPath, f64)> {
    let (f, s) = filter_smooth_counts(model, counts)?;
    let ev = f.log_evidence;
    Ok((if w == Weighting::Smoothed { s } else { f }, ev))
}

/// Maximizes the partial log-likelihood over the packed parameters,
/// starting from `start`.
pub fn m_step(
    start: &HawkesParams,
    rhat: &PosteriorPath,
    counts: &CountSeries,
    opts: &EmOptions,
) -> Result<(HawkesParams, f64)> {
    check_aligned(rhat, counts)?;
    let packed = ParamVector::encode(start, opts.fit_zeta);
    let fixed_zeta = start.zeta.clone();
    let objective = |x: &[f64]| match packed.decode_values(x, &fixed_zeta) {
        Ok(p) => partial_unchecked(&p, rhat, counts),
        Err(_) => f64::NAN,
    };
    let mut x = packed.values.clone();
    let mut best = objective(&x);
    for _ in 0..=opts.restarts {
        let r = nelder_mead_maximize(objective, &x, &opts.optimizer)?;
        let improved = r.value - best;
        if r.value >= best {
            x = r.x;
            best = r.value;
        }
        if improved.abs() < 1e-9 {
            break;
        }
    }
    Ok((packed.decode_values(&x, &fixed_zeta)?, best))
}

/// EM over the intensity parameters with the rate matrix held fixed.
/// Starts from `r0` (for example [`initial_clustering`]) or, when absent,
/// from the posterior under `model0`. Returns one entry per M-step.
pub fn em_calibrate(
    model0: &ModelSpec,
    counts: &CountSeries,
    r0: Option<PosteriorPath>,
    iters: usize,
    opts: &EmOptions,
) -> Result<Vec<EmIteration>> {
    if iters == 0 {
        return invalid("at least one EM iteration is required");
    }
    let mut rhat = match r0 {
        Some(r) => r,
        None => posterior_for(model0, counts, opts.weighting)?.0,
    };
    let mut params = model0.params.clone();
    let mut out = Vec::with_capacity(iters);
    for it in 1..=iters {
        let (next, objective) = m_step(&params, &rhat, counts, opts).map_err(|e| {
            Error::Optimizer(format!("EM iteration {it} aborted: {e}"))
        })?;
        params = next;
        let model = ModelSpec::new(model0.rate_matrix.clone(), params.clone(), model0.q0.clone())?;
        let (r, log_evidence) = posterior_for(&model, counts, opts.weighting)?;
        let loglik = partial_unchecked(&params, &r, counts);
        rhat = r;
        out.push(EmIteration {
            params: params.clone(),
            objective,
            loglik,
            log_evidence,
        });
    }
    Ok(out)
}

/// Expected occupation times and transition counts.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationStats {
    /// `E[K]`: expected time spent in each state.
    pub occupation: Vec<f64>,
    /// `E[J]`: entry `(i, j)` counts transitions `i → j`; diagonal is the
    /// negated off-diagonal row sum.
    pub transitions: SquareMatrix,
}

/// One EM update of the rate matrix from a posterior path. The expected
/// transition counts are `diag(E[K]) Âᵀ`, so the update `E[J]ᵀ diag(E[K])⁻¹`
/// returns `Â` itself.
pub fn em_rate_matrix_step(
    a_hat: &RateMatrix,
    rhat: &PosteriorPath,
) -> Result<(OccupationStats, RateMatrix)> {
    let n = a_hat.n();
    if rhat.n_states() != n || rhat.len() < 2 {
        return invalid("posterior path must have the rate matrix's dimension and two or more points");
    }
    let mut occ = vec![0.0; n];
    for w in 0..rhat.len() - 1 {
        let h = rhat.times[w + 1] - rhat.times[w];
        if !(h >= 0.0) {
            return invalid("posterior times must be increasing");
        }
        for i in 0..n {
            occ[i] += 0.5 * h * (rhat.probs[w][i] + rhat.probs[w + 1][i]);
        }
    }
    if let Some(i) = occ.iter().position(|&k| !(k > 0.0)) {
        return Err(Error::InvalidState(format!(
            "state {i} has zero expected occupation; the update divides by it"
        )));
    }
    let j = SquareMatrix::from_diag(&occ).matmul(&a_hat.matrix().transpose());
    let inv = SquareMatrix::from_diag(&occ.iter().map(|k| 1.0 / k).collect::<Vec<_>>());
    let updated = RateMatrix::new(j.transpose().matmul(&inv))?;
    Ok((
        OccupationStats {
            occupation: occ,
            transitions: j,
        },
        updated,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneRow {
    pub epsilon: f64,
    pub switches: usize,
    pub mean_dwell: f64,
    pub min_dwell: f64,
    pub max_dwell: f64,
    pub log_evidence: f64,
}

/// Sweeps the symmetric two-state family `ε [[-1, 1], [1, -1]]`, reporting
/// how often the smoothed most-probable state changes and how long it stays.
pub fn tune_epsilon(
    epsilons: &[f64],
    counts: &CountSeries,
    model_base: &ModelSpec,
) -> Result<Vec<TuneRow>> {
    if model_base.n() != 2 {
        return invalid("epsilon tuning is defined for two-state models");
    }
    epsilons
        .iter()
        .map(|&eps| {
            let model = ModelSpec::new(
                RateMatrix::two_state_symmetric(eps)?,
                model_base.params.clone(),
                model_base.q0.clone(),
            )?;
            let (f, s) = filter_smooth_counts(&model, counts)?;
            let labels = s.argmax();
            let mut dwell = Vec::new();
            let mut start = s.times[0];
            for k in 1..labels.len() {
                if labels[k] != labels[k - 1] {
                    dwell.push(s.times[k] - start);
                    start = s.times[k];
                }
            }
            dwell.push(*s.times.last().unwrap() - start);
            let switches = dwell.len() - 1;
            Ok(TuneRow {
                epsilon: eps,
                switches,
                mean_dwell: dwell.iter().sum::<f64>() / dwell.len() as f64,
                min_dwell: dwell.iter().copied().fold(f64::INFINITY, f64::min),
                max_dwell: dwell.iter().copied().fold(0.0, f64::max),
                log_evidence: f.log_evidence,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{bin_counts, simulate_events_thinning};

    fn table_params() -> HawkesParams {
        HawkesParams::new(vec![6.0, 18.0], vec![1.0, 0.01], vec![10.0 / 7.0, 0.1]).unwrap()
    }

    #[test]
    fn param_vector_round_trip() {
        let p = HawkesParams::with_zeta(vec![1.5, 2.0], vec![0.3, 0.0], vec![1.0, 0.2], vec![0.9, 0.7]).unwrap();
        let v = ParamVector::encode(&p, true);
        assert_eq!(v.values.len(), 8);
        let back = v.decode(&[]).unwrap();
        assert!((back.alpha[0] - 1.5).abs() < 1e-14);
        assert!(back.beta[1] > 0.0 && back.beta[1] < 1e-11);
        assert!((back.zeta[1] - 0.7).abs() < 1e-14);
        let v = ParamVector::encode(&p, false);
        assert_eq!(v.decode(&p.zeta).unwrap().zeta, p.zeta);
    }

    #[test]
    fn any_packed_vector_decodes_to_valid_params() {
        use proptest::prelude::*;
        let p = table_params();
        let packed = ParamVector::encode(&p, true);
        proptest!(|(x in proptest::collection::vec(-30.0f64..30.0, 8))| {
            let d = packed.decode_values(&x, &[]).unwrap();
            prop_assert!(d.alpha.iter().chain(&d.zeta).all(|v| *v > 0.0));
            prop_assert!(d.beta.iter().chain(&d.gamma).all(|v| *v >= 0.0));
        });
    }

    #[test]
    fn complete_poisson_closed_form() {
        let p = HawkesParams::new(vec![2.5], vec![0.0], vec![1.0]).unwrap();
        let ev = EventTimes::new(vec![0.3, 1.1, 2.0, 4.7]).unwrap();
        let ll = loglik_complete(&p, &ChainPath::constant(0), &ev, 5.0).unwrap();
        assert!((ll - (4.0 * 2.5f64.ln() - 2.5 * 5.0)).abs() < 1e-12);
    }

    #[test]
    fn complete_argmax_ignores_constant_offset() {
        let ev = EventTimes::new(vec![0.3, 1.1, 2.0, 4.7, 4.8]).unwrap();
        let grid: Vec<f64> = (1..60).map(|i| i as f64 * 0.05).collect();
        let best = |offset: f64| {
            grid.iter()
                .copied()
                .max_by(|&a, &b| {
                    let f = |x: f64| {
                        let p = HawkesParams::new(vec![x], vec![0.0], vec![1.0]).unwrap();
                        loglik_complete(&p, &ChainPath::constant(0), &ev, 5.0).unwrap() + offset
                    };
                    f(a).total_cmp(&f(b))
                })
                .unwrap()
        };
        assert_eq!(best(0.0), best(1234.5));
        assert!((best(0.0) - 1.0).abs() < 0.05);
    }

    /// Independent quadrature: λ evaluated from the raw event sum, midpoint
    /// rule with steps of at most 1e-4 between consecutive breakpoints.
    fn brute_complete(p: &HawkesParams, chain: &ChainPath, ev: &[f64], horizon: f64) -> f64 {
        let lam = |t: f64, s: usize| {
            let exc: f64 = ev
                .iter()
                .filter(|&&u| u < t)
                .map(|&u| (-p.gamma[s] * (t - u)).exp())
                .sum();
            (p.alpha[s] + p.beta[s] * exc).powf(p.zeta[s])
        };
        let mut pts: Vec<f64> = ev.to_vec();
        pts.extend(chain.jump_times.iter().copied().filter(|&t| t < horizon));
        pts.push(0.0);
        pts.push(horizon);
        pts.sort_by(f64::total_cmp);
        let mut integral = 0.0;
        for w in pts.windows(2) {
            let len = w[1] - w[0];
            if len <= 0.0 {
                continue;
            }
            let m = (len / 1e-4).ceil() as usize;
            let h = len / m as f64;
            let s = chain.state_at(w[0]);
            for i in 0..m {
                integral += lam(w[0] + (i as f64 + 0.5) * h, s) * h;
            }
        }
        let logs: f64 = ev.iter().map(|&t| lam(t, chain.state_before(t)).ln()).sum();
        logs - integral
    }

    #[test]
    fn complete_matches_quadrature() {
        let params = table_params();
        let chain = ChainPath::from_changepoints(&[1.3, 2.2], &[0, 1, 0]).unwrap();
        let model = ModelSpec::new(RateMatrix::two_state_symmetric(0.01).unwrap(), params.clone(), vec![0.5, 0.5]).unwrap();
        let ev = simulate_events_thinning(&model, &chain, 3.0, 17, None).unwrap();
        assert!(ev.len() > 10);
        let exact = loglik_complete(&params, &chain, &ev, 3.0).unwrap();
        let brute = brute_complete(&params, &chain, ev.as_slice(), 3.0);
        assert!(((exact - brute) / brute).abs() < 1e-6, "{exact} {brute}");

        let powered = HawkesParams::with_zeta(params.alpha.clone(), params.beta.clone(), params.gamma.clone(), vec![0.9, 0.7]).unwrap();
        let exact = loglik_complete(&powered, &chain, &ev, 3.0).unwrap();
        let brute = brute_complete(&powered, &chain, ev.as_slice(), 3.0);
        assert!(((exact - brute) / brute).abs() < 1e-6, "{exact} {brute}");
    }

    #[test]
    fn complete_merging_identical_segments() {
        let params = table_params();
        let ev = EventTimes::new(vec![0.2, 0.9, 1.0, 2.4, 2.5]).unwrap();
        let split = ChainPath { jump_times: vec![1.5, 2.0], states: vec![1, 1, 1] };
        let merged = ChainPath::constant(1);
        let a = loglik_complete(&params, &split, &ev, 3.0).unwrap();
        let b = loglik_complete(&params, &merged, &ev, 3.0).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn partial_poisson_reduction() {
        let p = HawkesParams::new(vec![3.0], vec![0.0], vec![1.0]).unwrap();
        let counts = CountSeries::new(0.0, 0.5, vec![1.0, 0.0, 4.0]).unwrap();
        let r = initial_clustering(&counts, &[], &[0], 1).unwrap();
        let ll = loglik_partial_discrete(&p, &r, &counts).unwrap();
        let want = 5.0 * 3f64.ln() - 3.0 * 1.5;
        assert!((ll - want).abs() < 1e-12);
    }

    #[test]
    fn partial_with_hard_weights_is_discrete_complete() {
        let params = table_params();
        let counts = CountSeries::new(0.0, 0.1, vec![2.0, 0.0, 1.0, 3.0, 1.0, 0.0]).unwrap();
        let r = initial_clustering(&counts, &[0.3], &[1, 0], 2).unwrap();
        let ll = loglik_partial_discrete(&params, &r, &counts).unwrap();
        let mut k = IntensityState::initial(&params, 0.0);
        let mut want = 0.0;
        for (i, &c) in counts.counts.iter().enumerate() {
            let s = if i < 3 { 1 } else { 0 };
            want += c * k.k[s].ln() - k.k[s] * 0.1;
            k.discrete_update_in_place(&params, 0.1, c);
        }
        assert!((ll - want).abs() < 1e-12);
    }

    #[test]
    fn partial_relabeling_invariance() {
        let params = table_params();
        let counts = CountSeries::new(0.0, 0.1, vec![2.0, 0.0, 1.0, 3.0]).unwrap();
        let mut r = initial_clustering(&counts, &[], &[0], 2).unwrap();
        for (i, p) in r.probs.iter_mut().enumerate() {
            let x = 0.1 + 0.15 * i as f64;
            *p = vec![x, 1.0 - x];
        }
        let swapped_params = HawkesParams::new(
            params.alpha.iter().rev().copied().collect(),
            params.beta.iter().rev().copied().collect(),
            params.gamma.iter().rev().copied().collect(),
        )
        .unwrap();
        let mut swapped_r = r.clone();
        swapped_r.probs.iter_mut().for_each(|p| p.reverse());
        let a = loglik_partial_discrete(&params, &r, &counts).unwrap();
        let b = loglik_partial_discrete(&swapped_params, &swapped_r, &counts).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn partial_rejects_misaligned_grid() {
        let counts = CountSeries::new(0.0, 0.1, vec![1.0, 2.0]).unwrap();
        let r = initial_clustering(&counts, &[], &[0], 2).unwrap();
        let other = CountSeries::new(0.0, 0.2, vec![1.0, 2.0]).unwrap();
        assert!(loglik_partial_discrete(&table_params(), &r, &other).is_err());
        let longer = CountSeries::new(0.0, 0.1, vec![1.0, 2.0, 0.0]).unwrap();
        assert!(loglik_partial_discrete(&table_params(), &r, &longer).is_err());
    }

    #[test]
    fn clustering_examples() {
        let counts = CountSeries::new(0.0, 0.1, vec![0.0; 10_000]).unwrap();
        let r = initial_clustering(&counts, &[], &[1], 2).unwrap();
        assert!(r.probs.iter().all(|p| p == &vec![0.0, 1.0]));

        let cps = [50.0, 200.0, 250.0, 300.0, 400.0, 650.0, 950.0];
        let labels = [0, 1, 0, 1, 0, 1, 0, 1];
        let r = initial_clustering(&counts, &cps, &labels, 2).unwrap();
        let a = r.argmax();
        let segments = 1 + a.windows(2).filter(|w| w[0] != w[1]).count();
        assert_eq!(segments, 8);
        assert!(r.probs.iter().all(|p| p.iter().sum::<f64>() == 1.0));
        // the switch at 50 falls on the bin edge at 50.0
        assert_eq!(a[500], 0);
        assert_eq!(a[501], 1);

        // a changepoint inside a bin snaps to the nearer edge
        let c = CountSeries::new(0.0, 1.0, vec![0.0; 4]).unwrap();
        let r = initial_clustering(&c, &[1.4], &[0, 1], 2).unwrap();
        assert_eq!(r.argmax(), vec![0, 0, 1, 1, 1]);
        let r = initial_clustering(&c, &[1.6], &[0, 1], 2).unwrap();
        assert_eq!(r.argmax(), vec![0, 0, 0, 1, 1]);

        assert!(initial_clustering(&c, &[1.0, 2.0], &[0, 1], 2).is_err());
        assert!(initial_clustering(&c, &[2.0, 1.0], &[0, 1, 0], 2).is_err());
    }

    #[test]
    fn rate_matrix_em_is_a_fixed_point() {
        let a = RateMatrix::from_row_major(3, vec![-0.5, 0.2, 0.1, 0.3, -0.4, 0.6, 0.2, 0.2, -0.7]).unwrap();
        let counts = CountSeries::new(0.0, 0.5, vec![0.0; 40]).unwrap();
        let mut r = initial_clustering(&counts, &[], &[0], 3).unwrap();
        for (i, p) in r.probs.iter_mut().enumerate() {
            let x = (i as f64 * 0.37).sin().abs();
            *p = vec![0.2 + 0.5 * x, 0.3, 0.5 - 0.5 * x];
        }
        let (stats, a1) = em_rate_matrix_step(&a, &r).unwrap();
        let rel = a1.matrix().max_abs_diff(a.matrix()) / a.matrix().norm1();
        assert!(rel < 1e-10);
        assert!((stats.occupation.iter().sum::<f64>() - 20.0).abs() < 1e-9);
        for i in 0..3 {
            let row: f64 = (0..3).map(|j| stats.transitions[(i, j)]).sum();
            assert!(row.abs() < 1e-12);
        }
    }

    #[test]
    fn rate_matrix_em_uniform_occupation() {
        let a = RateMatrix::two_state_symmetric(0.01).unwrap();
        let counts = CountSeries::new(0.0, 0.1, vec![0.0; 100]).unwrap();
        let mut r = initial_clustering(&counts, &[], &[0], 2).unwrap();
        r.probs.iter_mut().for_each(|p| *p = vec![0.5, 0.5]);
        let (stats, _) = em_rate_matrix_step(&a, &r).unwrap();
        assert!((stats.occupation[0] - 5.0).abs() < 1e-12);
        assert!((stats.occupation[1] - 5.0).abs() < 1e-12);

        let hard = initial_clustering(&counts, &[], &[0], 2).unwrap();
        assert!(matches!(em_rate_matrix_step(&a, &hard), Err(Error::InvalidState(_))));
    }

    #[test]
    fn em_with_identical_states_stays_symmetric() {
        let truth = HawkesParams::new(vec![5.0, 5.0], vec![0.5, 0.5], vec![1.0, 1.0]).unwrap();
        let model = ModelSpec::new(RateMatrix::two_state_symmetric(0.01).unwrap(), truth, vec![0.5, 0.5]).unwrap();
        let ev = simulate_events_thinning(&model, &ChainPath::constant(0), 200.0, 3, None).unwrap();
        let counts = bin_counts(&ev, 0.0, 0.1, 2000).unwrap();
        let start = ModelSpec::new(
            model.rate_matrix.clone(),
            HawkesParams::new(vec![4.0, 4.0], vec![0.4, 0.4], vec![1.2, 1.2]).unwrap(),
            vec![0.5, 0.5],
        )
        .unwrap();
        let trace = em_calibrate(&start, &counts, None, 2, &EmOptions::default()).unwrap();
        let p = &trace.last().unwrap().params;
        assert!((p.alpha[0] - p.alpha[1]).abs() < 1e-3 * p.alpha[0], "{p:?}");
        assert!((p.gamma[0] - p.gamma[1]).abs() < 1e-3 * p.gamma[0], "{p:?}");
    }

    #[test]
    fn tune_without_rates_never_switches() {
        let params = table_params();
        let model = ModelSpec::new(RateMatrix::two_state_symmetric(0.01).unwrap(), params, vec![0.5, 0.5]).unwrap();
        let chain = ChainPath::from_changepoints(&[50.0], &[0, 1]).unwrap();
        let ev = simulate_events_thinning(&model, &chain, 100.0, 2, None).unwrap();
        let counts = bin_counts(&ev, 0.0, 0.1, 1000).unwrap();
        let rows = tune_epsilon(&[0.0, 1e-3, 1e-2, 1e-1], &counts, &model).unwrap();
        assert_eq!(rows[0].switches, 0);
        assert!((rows[0].max_dwell - 100.0).abs() < 1e-9);
        assert!(rows[3].switches >= rows[1].switches);
    }
}
