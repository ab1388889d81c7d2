//! Flat `key = value` run configuration.
//!
//! One setting per line; `#` starts a comment; lists are comma-separated.
//! Recognised keys:
//!
//! | key | value |
//! |-----|-------|
//! | `n` | number of hidden states |
//! | `rate_matrix` | `n·n` entries, row-major, column convention (entry `(i,j)` is the rate `j → i`) |
//! | `epsilon` | two-state symmetric family `ε [[-1,1],[1,-1]]`, instead of `rate_matrix` |
//! | `alpha`, `beta`, `gamma`, `zeta` | per-state intensity parameters (`zeta` defaults to 1) |
//! | `q0` | `stationary`, `state:K` or `n` probabilities |
//! | `mode` | `events` or `counts` |
//! | `bin_width` | bin width for counting events |
//! | `max_substep` | largest integration substep |
//! | `seed` | RNG seed |
//! | `horizon` | end of the observation window |
//! | `rescale` | divisor applied to input counts |
//! | `output_step` | spacing of the posterior grid in event mode |
//! | `changepoints`, `labels` | fixed chain path for `simulate` and initial clustering for `calibrate` |
//! | `iters` | EM iterations |
//! | `weighting` | `smoothed` or `filtered` M-step weights |
//! | `fit_zeta` | `true` to estimate `zeta` as well |
//! | `ahead` | prediction lead time |
//! | `epsilons` | values swept by `tune` |
//! | `replications` | independent simulated paths |
//! | `log_overflow` | log-scale threshold of the robust filter |

use std::path::Path;

use crate::error::{Error, Result};
use crate::estimate::Weighting;
use crate::model::{stationary_distribution, HawkesParams, ModelSpec, RateMatrix};

#[derive(Debug, Clone, PartialEq)]
pub enum Q0Spec {
    Stationary,
    State(usize),
    Probs(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservationMode {
    Events,
    Counts,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub n: Option<usize>,
    pub rate_matrix: Option<Vec<f64>>,
    pub epsilon: Option<f64>,
    pub alpha: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
    pub gamma: Option<Vec<f64>>,
    pub zeta: Option<Vec<f64>>,
    pub q0: Option<Q0Spec>,
    pub mode: Option<ObservationMode>,
    pub bin_width: Option<f64>,
    pub max_substep: Option<f64>,
    pub seed: Option<u64>,
    pub horizon: Option<f64>,
    pub rescale: Option<f64>,
    pub output_step: Option<f64>,
    pub changepoints: Option<Vec<f64>>,
    pub labels: Option<Vec<usize>>,
    pub iters: Option<usize>,
    pub weighting: Option<Weighting>,
    pub fit_zeta: Option<bool>,
    pub ahead: Option<f64>,
    pub epsilons: Option<Vec<f64>>,
    pub replications: Option<usize>,
    pub log_overflow: Option<f64>,
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
    v.trim()
        .parse()
        .map_err(|_| format!("`{key}`: cannot parse `{}`", v.trim()))
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<Vec<T>, String> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| num(key, x)).collect()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: k + 1,
                message: format!("expected `key = value`, found `{line}`"),
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|message| Error::Parse { line: k + 1, message })?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        match key {
            "n" => self.n = Some(num(key, v)?),
            "rate_matrix" => self.rate_matrix = Some(list(key, v)?),
            "epsilon" => self.epsilon = Some(num(key, v)?),
            "alpha" => self.alpha = Some(list(key, v)?),
            "beta" => self.beta = Some(list(key, v)?),
            "gamma" => self.gamma = Some(list(key, v)?),
            "zeta" => self.zeta = Some(list(key, v)?),
            "q0" => {
                self.q0 = Some(match v {
                    "stationary" => Q0Spec::Stationary,
                    s if s.starts_with("state:") => Q0Spec::State(num(key, &s[6..])?),
                    s => Q0Spec::Probs(list(key, s)?),
                })
            }
            "mode" => {
                self.mode = Some(match v {
                    "events" => ObservationMode::Events,
                    "counts" => ObservationMode::Counts,
                    _ => return Err(format!("`mode` must be `events` or `counts`, got `{v}`")),
                })
            }
            "bin_width" => self.bin_width = Some(num(key, v)?),
            "max_substep" => self.max_substep = Some(num(key, v)?),
            "seed" => self.seed = Some(num(key, v)?),
            "horizon" => self.horizon = Some(num(key, v)?),
            "rescale" => {
                let r: f64 = num(key, v)?;
                if !(r > 0.0 && r.is_finite()) {
                    return Err(format!("`rescale` must be positive, got {r}"));
                }
                self.rescale = Some(r)
            }
            "output_step" => self.output_step = Some(num(key, v)?),
            "changepoints" => self.changepoints = Some(list(key, v)?),
            "labels" => self.labels = Some(list(key, v)?),
            "iters" => self.iters = Some(num(key, v)?),
            "weighting" => {
                self.weighting = Some(match v {
                    "smoothed" => Weighting::Smoothed,
                    "filtered" => Weighting::Filtered,
                    _ => return Err(format!("`weighting` must be `smoothed` or `filtered`, got `{v}`")),
                })
            }
            "fit_zeta" => self.fit_zeta = Some(num(key, v)?),
            "ahead" => self.ahead = Some(num(key, v)?),
            "epsilons" => self.epsilons = Some(list(key, v)?),
            "replications" => self.replications = Some(num(key, v)?),
            "log_overflow" => self.log_overflow = Some(num(key, v)?),
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    fn state_count(&self) -> Result<usize> {
        self.n
            .or_else(|| self.alpha.as_ref().map(Vec::len))
            .ok_or_else(|| Error::InvalidInput("configuration needs `n` or `alpha`".into()))
    }

    pub fn rate_matrix(&self) -> Result<RateMatrix> {
        let n = self.state_count()?;
        match (&self.rate_matrix, self.epsilon) {
            (Some(_), Some(_)) => Err(Error::InvalidInput(
                "set either `rate_matrix` or `epsilon`, not both".into(),
            )),
            (Some(m), None) => RateMatrix::from_row_major(n, m.clone()),
            (None, Some(eps)) => {
                if n != 2 {
                    return Err(Error::InvalidInput("`epsilon` needs n = 2".into()));
                }
                RateMatrix::two_state_symmetric(eps)
            }
            (None, None) => Err(Error::InvalidInput(
                "configuration needs `rate_matrix` or `epsilon`".into(),
            )),
        }
    }

    pub fn params(&self) -> Result<HawkesParams> {
        let need = |v: &Option<Vec<f64>>, k: &str| {
            v.clone()
                .ok_or_else(|| Error::InvalidInput(format!("configuration needs `{k}`")))
        };
        let alpha = need(&self.alpha, "alpha")?;
        let zeta = self.zeta.clone().unwrap_or_else(|| vec![1.0; alpha.len()]);
        let p = HawkesParams::with_zeta(alpha, need(&self.beta, "beta")?, need(&self.gamma, "gamma")?, zeta)?;
        if let Some(n) = self.n {
            if p.n() != n {
                return Err(Error::InvalidInput(format!(
                    "parameter vectors have {} states but n = {n}",
                    p.n()
                )));
            }
        }
        Ok(p)
    }

    pub fn model_with(&self, a: RateMatrix) -> Result<ModelSpec> {
        let params = self.params()?;
        let n = a.n();
        let q0 = match self.q0.clone().unwrap_or(Q0Spec::Stationary) {
            Q0Spec::Stationary => match stationary_distribution(&a) {
                Ok(p) => p,
                Err(Error::Ambiguous(_)) => vec![1.0 / n as f64; n],
                Err(e) => return Err(e),
            },
            Q0Spec::State(k) => {
                if k >= n {
                    return Err(Error::InvalidInput(format!("q0 state {k} out of range")));
                }
                let mut q = vec![0.0; n];
                q[k] = 1.0;
                q
            }
            Q0Spec::Probs(p) => p,
        };
        ModelSpec::new(a, params, q0)
    }

    /// Model with the configured rate matrix. A reducible chain with
    /// `q0 = stationary` starts from the uniform law.
    pub fn model(&self) -> Result<ModelSpec> {
        self.model_with(self.rate_matrix()?)
    }
}
