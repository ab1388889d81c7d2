//! Hidden chain generator, state-conditional Hawkes intensity, and the
//! per-state exciting kernel.
//!
//! Rate matrices use the column convention throughout: entry `(i, j)` is the
//! rate of jumping from state `j` to state `i`, so every column sums to zero
//! and `d/dt P(X_t = e_i) = (A p)_i`.

use crate::error::{invalid, Error, Result};
use crate::linalg::{solve, SquareMatrix};

/// Column sums of a generator must vanish to within this tolerance.
pub const COLUMN_SUM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix(SquareMatrix);

impl RateMatrix {
    pub fn new(m: SquareMatrix) -> Result<Self> {
        let n = m.n();
        for j in 0..n {
            let mut col = 0.0;
            for i in 0..n {
                let v = m[(i, j)];
                if i != j && v < 0.0 {
                    return invalid(format!("rate matrix entry ({i},{j}) = {v} is negative"));
                }
                col += v;
            }
            if col.abs() > COLUMN_SUM_TOL {
                return invalid(format!(
                    "rate matrix column {j} sums to {col:e}; columns must sum to zero \
                     (entry (i,j) is the rate from state j to state i)"
                ));
            }
        }
        Ok(Self(m))
    }

    pub fn from_row_major(n: usize, entries: Vec<f64>) -> Result<Self> {
        Self::new(SquareMatrix::from_row_major(n, entries)?)
    }

    /// `eps · [[-1, 1], [1, -1]]`.
    pub fn two_state_symmetric(eps: f64) -> Result<Self> {
        if !(eps >= 0.0 && eps.is_finite()) {
            return invalid(format!("epsilon must be finite and nonnegative, got {eps}"));
        }
        Self::from_row_major(2, vec![-eps, eps, eps, -eps])
    }

    pub fn zero(n: usize) -> Result<Self> {
        Self::new(SquareMatrix::zeros(n))
    }

    pub fn n(&self) -> usize {
        self.0.n()
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.0
    }

    /// Rate of leaving state `j`.
    pub fn exit_rate(&self, j: usize) -> f64 {
        -self.0[(j, j)]
    }

    pub fn rate(&self, from: usize, to: usize) -> f64 {
        self.0[(to, from)]
    }
}

/// Per-state coefficients of the intensity
/// `λ_i(t) = (α_i + β_i Σ_{s<t} e^{-γ_i (t - s)})^{ζ_i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct HawkesParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub zeta: Vec<f64>,
}

impl HawkesParams {
    /// Linear intensity (ζ = 1 in every state).
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>, gamma: Vec<f64>) -> Result<Self> {
        let n = alpha.len();
        Self::with_zeta(alpha, beta, gamma, vec![1.0; n])
    }

    pub fn with_zeta(
        alpha: Vec<f64>,
        beta: Vec<f64>,
        gamma: Vec<f64>,
        zeta: Vec<f64>,
    ) -> Result<Self> {
        let n = alpha.len();
        if n == 0 {
            return invalid("at least one state is required");
        }
        if beta.len() != n || gamma.len() != n || zeta.len() != n {
            return invalid(format!(
                "parameter vectors must share one length: alpha {n}, beta {}, gamma {}, zeta {}",
                beta.len(),
                gamma.len(),
                zeta.len()
            ));
        }
        for i in 0..n {
            if !(alpha[i] > 0.0 && alpha[i].is_finite()) {
                return invalid(format!("alpha[{i}] = {} must be positive", alpha[i]));
            }
            if !(beta[i] >= 0.0 && beta[i].is_finite()) {
                return invalid(format!("beta[{i}] = {} must be nonnegative", beta[i]));
            }
            if !(gamma[i] >= 0.0 && gamma[i].is_finite()) {
                return invalid(format!("gamma[{i}] = {} must be nonnegative", gamma[i]));
            }
            if !(zeta[i] > 0.0 && zeta[i].is_finite()) {
                return invalid(format!("zeta[{i}] = {} must be positive", zeta[i]));
            }
        }
        Ok(Self {
            alpha,
            beta,
            gamma,
            zeta,
        })
    }

    pub fn n(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_linear(&self) -> bool {
        self.zeta.iter().all(|&z| z == 1.0)
    }

    /// Checks `β_i < γ_i` in every state.
    pub fn assert_stable(&self) -> Result<()> {
        for i in 0..self.n() {
            if self.beta[i] > 0.0 && self.beta[i] >= self.gamma[i] {
                return Err(Error::NonStationary(format!(
                    "state {i}: beta {} >= gamma {}",
                    self.beta[i], self.gamma[i]
                )));
            }
        }
        Ok(())
    }

    /// Restricts to a single state.
    pub fn state(&self, i: usize) -> HawkesParams {
        HawkesParams {
            alpha: vec![self.alpha[i]],
            beta: vec![self.beta[i]],
            gamma: vec![self.gamma[i]],
            zeta: vec![self.zeta[i]],
        }
    }
}

/// Per-state kernel values `k_i(t) = α_i + β_i Σ_{s<t} e^{-γ_i (t-s)}`.
///
/// `k` is the value after all events at times `<= t` have been absorbed,
/// i.e. the left limit of the intensity an instant after `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityState {
    pub t: f64,
    pub k: Vec<f64>,
}

impl IntensityState {
    /// Empty history at time `t`: `k = α`.
    pub fn initial(params: &HawkesParams, t: f64) -> Self {
        Self {
            t,
            k: params.alpha.clone(),
        }
    }

    pub fn decay_in_place(&mut self, params: &HawkesParams, dt: f64) {
        for i in 0..self.k.len() {
            let g = params.gamma[i];
            if g > 0.0 {
                let a = params.alpha[i];
                self.k[i] = a + (-g * dt).exp() * (self.k[i] - a);
            }
        }
        self.t += dt;
    }

    pub fn jump_in_place(&mut self, params: &HawkesParams) {
        for (k, b) in self.k.iter_mut().zip(&params.beta) {
            *k += b;
        }
    }

    pub fn discrete_update_in_place(&mut self, params: &HawkesParams, dt: f64, count: f64) {
        for i in 0..self.k.len() {
            let (a, b, g) = (params.alpha[i], params.beta[i], params.gamma[i]);
            let x = g * dt;
            let decay = (-x).exp();
            self.k[i] = a + decay * (self.k[i] - a) + b * uniform_spread_factor(x) * count;
        }
        self.t += dt;
    }
}

/// `(1 - e^{-x}) / x`, with the limit 1 near zero.
pub fn uniform_spread_factor(x: f64) -> f64 {
    if x < 1e-12 {
        1.0
    } else {
        -(-x).exp_m1() / x
    }
}

/// Relaxes the kernel toward `α` over `dt`.
pub fn intensity_decay(
    s: &IntensityState,
    params: &HawkesParams,
    dt: f64,
) -> Result<IntensityState> {
    if !(dt >= 0.0) {
        return invalid(format!("decay step must be nonnegative, got {dt}"));
    }
    let mut out = s.clone();
    out.decay_in_place(params, dt);
    Ok(out)
}

/// Absorbs one event: `k += β`.
pub fn intensity_jump(s: &IntensityState, params: &HawkesParams) -> IntensityState {
    let mut out = s.clone();
    out.jump_in_place(params);
    out
}

/// `λ_i = k_i^{ζ_i}`.
pub fn intensity_eval(s: &IntensityState, params: &HawkesParams) -> Result<Vec<f64>> {
    eval_kernel(&s.k, params)
}

pub(crate) fn eval_kernel(k: &[f64], params: &HawkesParams) -> Result<Vec<f64>> {
    k.iter()
        .zip(&params.zeta)
        .enumerate()
        .map(|(i, (&k, &z))| {
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::InvalidState(format!("kernel value k[{i}] = {k}")));
            }
            Ok(if z == 1.0 { k } else { k.powf(z) })
        })
        .collect()
}

/// Bin update assuming the bin's events are spread uniformly over it.
pub fn intensity_discrete_update(
    s: &IntensityState,
    params: &HawkesParams,
    dt: f64,
    count: f64,
) -> Result<IntensityState> {
    if !(dt > 0.0) {
        return invalid(format!("bin width must be positive, got {dt}"));
    }
    if !(count >= 0.0) {
        return invalid(format!("count must be nonnegative, got {count}"));
    }
    let mut out = s.clone();
    out.discrete_update_in_place(params, dt, count);
    Ok(out)
}

/// Stationary mean event rate per state, `α / (1 - β/γ)`.
pub fn long_run_rate(params: &HawkesParams) -> Result<Vec<f64>> {
    if !params.is_linear() {
        return Err(Error::Unsupported(
            "long-run rate requires zeta = 1 in every state".into(),
        ));
    }
    (0..params.n())
        .map(|i| {
            let (a, b, g) = (params.alpha[i], params.beta[i], params.gamma[i]);
            if b == 0.0 {
                Ok(a)
            } else if b >= g {
                Err(Error::NonStationary(format!(
                    "state {i}: beta {b} >= gamma {g}"
                )))
            } else {
                Ok(a / (1.0 - b / g))
            }
        })
        .collect()
}

/// Unique probability vector `π` with `A π = 0`.
pub fn stationary_distribution(a: &RateMatrix) -> Result<Vec<f64>> {
    let n = a.n();
    if n == 1 {
        return Ok(vec![1.0]);
    }
    if !is_irreducible(a) {
        return Err(Error::Ambiguous(
            "rate matrix is reducible; stationary distribution is not unique or not positive"
                .into(),
        ));
    }
    let mut m = a.matrix().clone();
    for j in 0..n {
        m[(n - 1, j)] = 1.0;
    }
    let mut rhs = vec![0.0; n];
    rhs[n - 1] = 1.0;
    let mut pi = solve(&m, &rhs)
        .ok_or_else(|| Error::Ambiguous("singular stationary system".into()))?;
    for p in pi.iter_mut() {
        if *p < 0.0 {
            *p = 0.0;
        }
    }
    let s: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= s);
    Ok(pi)
}

fn is_irreducible(a: &RateMatrix) -> bool {
    let n = a.n();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(j) = stack.pop() {
            for i in 0..n {
                let r = if forward { a.rate(j, i) } else { a.rate(i, j) };
                if i != j && r > 0.0 && !seen[i] {
                    seen[i] = true;
                    stack.push(i);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Initial law of the hidden chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub rate_matrix: RateMatrix,
    pub params: HawkesParams,
    pub q0: Vec<f64>,
}

impl ModelSpec {
    pub fn new(rate_matrix: RateMatrix, params: HawkesParams, q0: Vec<f64>) -> Result<Self> {
        let n = rate_matrix.n();
        if params.n() != n || q0.len() != n {
            return invalid(format!(
                "dimension mismatch: rate matrix {n}, params {}, q0 {}",
                params.n(),
                q0.len()
            ));
        }
        if q0.iter().any(|&p| !(p >= 0.0)) || (q0.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return invalid("q0 must be a probability vector");
        }
        Ok(Self {
            rate_matrix,
            params,
            q0,
        })
    }

    /// Uses the stationary distribution of the chain as the initial law.
    pub fn with_stationary_q0(rate_matrix: RateMatrix, params: HawkesParams) -> Result<Self> {
        let q0 = stationary_distribution(&rate_matrix)?;
        Self::new(rate_matrix, params, q0)
    }

    /// Chain started in a known state.
    pub fn with_initial_state(
        rate_matrix: RateMatrix,
        params: HawkesParams,
        state: usize,
    ) -> Result<Self> {
        let n = rate_matrix.n();
        if state >= n {
            return invalid(format!("initial state {state} out of range for {n} states"));
        }
        let mut q0 = vec![0.0; n];
        q0[state] = 1.0;
        Self::new(rate_matrix, params, q0)
    }

    pub fn n(&self) -> usize {
        self.rate_matrix.n()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table_params() -> HawkesParams {
        HawkesParams::new(vec![6.0, 18.0], vec![1.0, 0.01], vec![10.0 / 7.0, 0.1]).unwrap()
    }

    #[test]
    fn decay_examples() {
        let p = HawkesParams::new(vec![6.0], vec![1.0], vec![0.0]).unwrap();
        let s = IntensityState { t: 0.0, k: vec![9.0] };
        assert_eq!(intensity_decay(&s, &p, 123.0).unwrap().k, vec![9.0]);

        let p = HawkesParams::new(vec![6.0], vec![1.0], vec![10.0 / 7.0]).unwrap();
        let far = intensity_decay(&s, &p, 1e3).unwrap();
        assert!((far.k[0] - 6.0).abs() < 1e-12);

        let s = IntensityState { t: 0.0, k: vec![7.0] };
        let d = intensity_decay(&s, &p, 0.7).unwrap();
        assert!((d.k[0] - (6.0 + (-1.0f64).exp())).abs() < 1e-14);
        assert!((d.k[0] - 6.3679).abs() < 1e-4);
        assert!((d.t - 0.7).abs() < 1e-15);

        assert!(intensity_decay(&s, &p, -0.1).is_err());
    }

    #[test]
    fn jump_examples() {
        let p = table_params();
        let s = IntensityState {
            t: 1.0,
            k: vec![6.0, 18.0],
        };
        let j = intensity_jump(&s, &p);
        assert_eq!(j.k, vec![7.0, 18.01]);
        assert_eq!(j.t, 1.0);
        let j2 = intensity_jump(&j, &p);
        assert!((j2.k[0] - 8.0).abs() < 1e-15 && (j2.k[1] - 18.02).abs() < 1e-12);

        let zero_beta = HawkesParams::new(vec![1.0], vec![0.0], vec![1.0]).unwrap();
        let s = IntensityState { t: 0.0, k: vec![3.0] };
        assert_eq!(intensity_jump(&s, &zero_beta).k, vec![3.0]);
    }

    #[test]
    fn eval_examples() {
        let p = table_params();
        let s = IntensityState::initial(&p, 0.0);
        assert_eq!(intensity_eval(&s, &p).unwrap(), vec![6.0, 18.0]);

        let p = HawkesParams::with_zeta(vec![1.0], vec![0.0], vec![1.0], vec![0.5]).unwrap();
        let s = IntensityState { t: 0.0, k: vec![4.0] };
        assert!((intensity_eval(&s, &p).unwrap()[0] - 2.0).abs() < 1e-15);

        let s = IntensityState { t: 0.0, k: vec![0.0] };
        assert!(matches!(intensity_eval(&s, &p), Err(Error::InvalidState(_))));
    }

    #[test]
    fn discrete_update_examples() {
        let p = table_params();
        let s = IntensityState {
            t: 0.0,
            k: vec![9.0, 19.0],
        };
        let a = intensity_discrete_update(&s, &p, 0.1, 0.0).unwrap();
        let b = intensity_decay(&s, &p, 0.1).unwrap();
        assert_eq!(a, b);

        // gamma = 0.1, dt = 0.1
        let f = uniform_spread_factor(0.1 * 0.1);
        assert!((f - 0.995_017).abs() < 1e-6);
        assert_eq!(uniform_spread_factor(1e-13), 1.0);

        let c = intensity_discrete_update(&s, &p, 0.1, 3.0).unwrap();
        let want = 18.0 + (-0.01f64).exp() * 1.0 + 0.01 * f * 3.0;
        assert!((c.k[1] - want).abs() < 1e-12);

        assert!(intensity_discrete_update(&s, &p, 0.0, 1.0).is_err());
        assert!(intensity_discrete_update(&s, &p, 0.1, -1.0).is_err());
    }

    #[test]
    fn discrete_update_split_is_first_order() {
        // count m placed in the second half vs the single-step update
        let p = HawkesParams::new(vec![6.0], vec![1.0], vec![10.0 / 7.0]).unwrap();
        let s = IntensityState { t: 0.0, k: vec![9.0] };
        let m = 4.0;
        let err = |dt: f64| {
            let one = intensity_discrete_update(&s, &p, dt, m).unwrap();
            let half = intensity_discrete_update(&s, &p, dt / 2.0, 0.0).unwrap();
            let two = intensity_discrete_update(&half, &p, dt / 2.0, m).unwrap();
            (one.k[0] - two.k[0]).abs()
        };
        let (e1, e2) = (err(0.2), err(0.1));
        assert!(e1 > 0.0 && e1 / e2 >= 1.5, "{e1} {e2}");
    }

    #[test]
    fn long_run_rate_examples() {
        let r = long_run_rate(&table_params()).unwrap();
        assert!((r[0] - 20.0).abs() < 1e-12 && (r[1] - 20.0).abs() < 1e-12);
        let poisson = HawkesParams::new(vec![3.5], vec![0.0], vec![0.0]).unwrap();
        assert_eq!(long_run_rate(&poisson).unwrap(), vec![3.5]);
        let explosive = HawkesParams::new(vec![1.0], vec![2.0], vec![1.0]).unwrap();
        assert!(matches!(
            long_run_rate(&explosive),
            Err(Error::NonStationary(_))
        ));
        let no_decay = HawkesParams::new(vec![1.0], vec![0.5], vec![0.0]).unwrap();
        assert!(long_run_rate(&no_decay).is_err());
        let powered =
            HawkesParams::with_zeta(vec![1.0], vec![0.1], vec![1.0], vec![0.9]).unwrap();
        assert!(matches!(long_run_rate(&powered), Err(Error::Unsupported(_))));
    }

    #[test]
    fn stationary_examples() {
        let pi = stationary_distribution(&RateMatrix::two_state_symmetric(0.3).unwrap()).unwrap();
        assert!((pi[0] - 0.5).abs() < 1e-15 && (pi[1] - 0.5).abs() < 1e-15);

        // (0,1) is rate 1 from state 1 to 0; (1,0) is rate 2 from state 0 to 1
        let a = RateMatrix::from_row_major(2, vec![-2.0, 1.0, 2.0, -1.0]).unwrap();
        let pi = stationary_distribution(&a).unwrap();
        assert!((pi[0] - 1.0 / 3.0).abs() < 1e-14 && (pi[1] - 2.0 / 3.0).abs() < 1e-14);

        assert_eq!(
            stationary_distribution(&RateMatrix::zero(1).unwrap()).unwrap(),
            vec![1.0]
        );
        assert!(matches!(
            stationary_distribution(&RateMatrix::zero(2).unwrap()),
            Err(Error::Ambiguous(_))
        ));
        // transient state 0 drains into absorbing state 1
        let a = RateMatrix::from_row_major(2, vec![-1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!(stationary_distribution(&a).is_err());
    }

    #[test]
    fn rate_matrix_validation() {
        // row convention (rows summing to zero) is rejected
        assert!(RateMatrix::from_row_major(2, vec![-2.0, 2.0, 1.0, -1.0]).is_err());
        assert!(RateMatrix::from_row_major(2, vec![-1.0, -1.0, 1.0, 1.0]).is_err());
        assert!(RateMatrix::from_row_major(2, vec![-1.0, 1.0, 1.0 + 1e-9, -1.0]).is_err());
        let a = RateMatrix::from_row_major(2, vec![-2.0, 1.0, 2.0, -1.0]).unwrap();
        assert_eq!(a.rate(0, 1), 2.0);
        assert_eq!(a.exit_rate(1), 1.0);
    }

    #[test]
    fn params_validation() {
        assert!(HawkesParams::new(vec![0.0], vec![0.0], vec![0.0]).is_err());
        assert!(HawkesParams::new(vec![1.0], vec![-0.1], vec![0.0]).is_err());
        assert!(HawkesParams::new(vec![1.0, 2.0], vec![0.0], vec![0.0]).is_err());
        assert!(HawkesParams::with_zeta(vec![1.0], vec![0.0], vec![0.0], vec![0.0]).is_err());
        assert!(table_params().assert_stable().is_ok());
    }

    proptest! {
        #[test]
        fn decay_semigroup(k in 0.0f64..50.0, a in 0.0f64..3.0, b in 0.0f64..3.0, g in 0.0f64..5.0) {
            let p = HawkesParams::new(vec![2.0], vec![1.0], vec![g]).unwrap();
            let s = IntensityState { t: 0.0, k: vec![2.0 + k] };
            let two = intensity_decay(&intensity_decay(&s, &p, a).unwrap(), &p, b).unwrap();
            let one = intensity_decay(&s, &p, a + b).unwrap();
            prop_assert!((two.k[0] - one.k[0]).abs() <= 1e-12 * one.k[0]);
        }

        #[test]
        fn kernel_never_below_alpha(steps in proptest::collection::vec((0.0f64..2.0, proptest::bool::ANY), 1..60)) {
            let p = table_params();
            let mut s = IntensityState::initial(&p, 0.0);
            for (dt, jump) in steps {
                s.decay_in_place(&p, dt);
                if jump { s.jump_in_place(&p); }
                for i in 0..2 {
                    prop_assert!(s.k[i] >= p.alpha[i] && s.k[i].is_finite());
                }
            }
        }
    }
}
