//! The `mmhp` command line.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{ObservationMode, RunConfig};
use crate::error::{Error, Result};
use crate::estimate::{
    em_calibrate, em_rate_matrix_step, initial_clustering, tune_epsilon,
    EmOptions,
};
use crate::filter::{
    default_max_substep, filter_counts, filter_events, filter_events_recorded, predict,
    PosteriorPath,
};
use crate::io::{
    counts_table, detect_input_kind, events_table, read_counts_csv, read_events_csv, write_table,
    InputKind, ResultTable,
};
use crate::model::{ModelSpec, RateMatrix};
use crate::robust::{robust_filter_events, DEFAULT_LOG_OVERFLOW};
use crate::simulate::{
    bin_counts, simulate_chain, simulate_events_thinning, ChainPath, CountSeries, EventTimes,
    InitialState,
};
use crate::smoother::{filter_smooth_counts, smooth};

#[derive(Debug, Parser)]
#[command(name = "mmhp", version, about = "Markov-modulated Hawkes filtering, smoothing and calibration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Run configuration (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output CSV; standard output when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Observation CSV with header `t` (events) or `t,count` (counts).
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Divide input counts by this factor.
    #[arg(long, global = true)]
    pub rescale: Option<f64>,
    #[arg(long, global = true)]
    pub bin_width: Option<f64>,
    #[arg(long, global = true)]
    pub max_substep: Option<f64>,
    /// Override a configuration key, e.g. `--set horizon=50`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the hidden chain and the event times.
    Simulate {
        /// Also write bin counts here (needs a bin width).
        #[arg(long)]
        counts_out: Option<PathBuf>,
        /// Also write the chain path (`t,state`) here.
        #[arg(long)]
        chain_out: Option<PathBuf>,
        /// Independent paths; replication `k` uses seed `seed + k`.
        #[arg(long)]
        replications: Option<usize>,
    },
    /// Filtered posterior.
    Filter,
    /// Filtered and smoothed posteriors.
    Smooth,
    /// EM calibration of the intensity parameters.
    Calibrate {
        #[arg(long)]
        iters: Option<usize>,
    },
    /// One rate-matrix EM update and its relative change.
    EmDemo,
    /// Growth of the robust filter's gauge.
    RobustDemo,
    /// Posterior at the end of the data and `ahead` time units later.
    Predict {
        #[arg(long)]
        ahead: Option<f64>,
    },
    /// Sweep of the two-state rate scale.
    Tune {
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
    },
}

enum Observations {
    Events { events: EventTimes, horizon: f64 },
    Counts(CountSeries),
}

struct Context {
    cfg: RunConfig,
    common: CommonArgs,
}

impl Context {
    fn new(common: CommonArgs) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        for o in &common.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::InvalidInput(format!("`--set {o}`: expected KEY=VALUE")))?;
            cfg.set(k.trim(), v.trim()).map_err(Error::InvalidInput)?;
        }
        let flag = |name: &str, v: Option<String>, cfg: &mut RunConfig| -> Result<()> {
            if let Some(v) = v {
                cfg.set(name, &v).map_err(Error::InvalidInput)?;
            }
            Ok(())
        };
        flag("seed", common.seed.map(|v| v.to_string()), &mut cfg)?;
        flag("rescale", common.rescale.map(|v| v.to_string()), &mut cfg)?;
        flag("bin_width", common.bin_width.map(|v| v.to_string()), &mut cfg)?;
        flag("max_substep", common.max_substep.map(|v| v.to_string()), &mut cfg)?;
        Ok(Self { cfg, common })
    }

    fn seed(&self) -> u64 {
        self.cfg.seed.unwrap_or(0)
    }

    fn max_substep(&self, model: &ModelSpec) -> f64 {
        self.cfg.max_substep.unwrap_or_else(|| default_max_substep(model))
    }

    fn horizon(&self) -> Result<f64> {
        self.cfg
            .horizon
            .ok_or_else(|| Error::InvalidInput("configuration needs `horizon`".into()))
    }

    fn bins_for(&self, horizon: f64) -> Result<(f64, usize)> {
        let w = self
            .cfg
            .bin_width
            .ok_or_else(|| Error::InvalidInput("counting events needs `bin_width`".into()))?;
        if !(w > 0.0) {
            return Err(Error::InvalidInput(format!("bin width must be positive, got {w}")));
        }
        Ok((w, (horizon / w + 1e-9).floor() as usize))
    }

    fn observations(&self) -> Result<Observations> {
        let path = self
            .common
            .input
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("this subcommand needs `--input`".into()))?;
        match detect_input_kind(path)? {
            InputKind::Counts => Ok(Observations::Counts(read_counts_csv(
                path,
                self.cfg.rescale.unwrap_or(1.0),
            )?)),
            InputKind::Events => {
                let events = read_events_csv(path)?;
                let horizon = match self.cfg.horizon {
                    Some(h) => h,
                    None => *events.as_slice().last().ok_or_else(|| {
                        Error::InvalidInput("empty event file and no `horizon`".into())
                    })?,
                };
                if self.cfg.mode == Some(ObservationMode::Counts) {
                    let (w, n) = self.bins_for(horizon)?;
                    Ok(Observations::Counts(bin_counts(&events, 0.0, w, n)?))
                } else {
                    Ok(Observations::Events { events, horizon })
                }
            }
        }
    }

    fn counts(&self) -> Result<CountSeries> {
        match self.observations()? {
            Observations::Counts(c) => Ok(c),
            Observations::Events { events, horizon } => {
                let (w, n) = self.bins_for(horizon)?;
                bin_counts(&events, 0.0, w, n)
            }
        }
    }

    fn chain(&self, model: &ModelSpec, horizon: f64, seed: u64) -> Result<ChainPath> {
        match (&self.cfg.changepoints, &self.cfg.labels) {
            (Some(c), Some(l)) => ChainPath::from_changepoints(c, l),
            (None, None) => simulate_chain(
                &model.rate_matrix,
                &InitialState::Law(model.q0.clone()),
                horizon,
                seed,
            ),
            _ => Err(Error::InvalidInput(
                "`changepoints` and `labels` must be given together".into(),
            )),
        }
    }

    fn emit(&self, table: &ResultTable, stdout: &mut dyn Write) -> Result<()> {
        match &self.common.out {
            Some(p) => write_table(table, p),
            None => table.write(stdout),
        }
    }
}

fn posterior_columns(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}_{i}")).collect()
}

fn posterior_table(paths: &[&PosteriorPath], prefixes: &[&str]) -> Result<ResultTable> {
    let n = paths[0].n_states();
    let mut cols = vec!["t".to_string()];
    for p in prefixes {
        cols.extend(posterior_columns(p, n));
    }
    let mut table = ResultTable::new(cols);
    for k in 0..paths[0].len() {
        let mut row = vec![paths[0].times[k]];
        for p in paths {
            row.extend_from_slice(&p.probs[k]);
        }
        table.push(row)?;
    }
    Ok(table)
}

fn with_suffix(path: &Path, k: usize) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_{k}.{}", ext.to_string_lossy()),
        None => format!("{stem}_{k}"),
    };
    path.with_file_name(name)
}

/// Runs one parsed invocation. Tables go to `--out` or `stdout`; summaries
/// go to `stderr`.
pub fn run(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let ctx = Context::new(cli.common)?;
    match cli.command {
        Command::Simulate {
            counts_out,
            chain_out,
            replications,
        } => {
            let reps = replications.or(ctx.cfg.replications).unwrap_or(1);
            if reps == 0 {
                return Err(Error::InvalidInput("replications must be positive".into()));
            }
            let model = ctx.cfg.model()?;
            let horizon = ctx.horizon()?;
            let base = ctx.seed();
            let one = |k: usize| -> Result<(ChainPath, EventTimes, Option<CountSeries>)> {
                let seed = base.wrapping_add(k as u64);
                let chain = ctx.chain(&model, horizon, seed)?;
                let events = simulate_events_thinning(&model, &chain, horizon, seed, None)?;
                let counts = match ctx.cfg.bin_width {
                    Some(_) => {
                        let (w, n) = ctx.bins_for(horizon)?;
                        Some(bin_counts(&events, 0.0, w, n)?)
                    }
                    None => None,
                };
                Ok((chain, events, counts))
            };
            let runs: Vec<_> = (0..reps).into_par_iter().map(one).collect::<Result<_>>()?;
            let pick = |p: &Path, k: usize| if reps == 1 { p.to_path_buf() } else { with_suffix(p, k) };
            if reps > 1 && ctx.common.out.is_none() {
                return Err(Error::InvalidInput("several replications need `--out`".into()));
            }
            for (k, (chain, events, counts)) in runs.iter().enumerate() {
                match &ctx.common.out {
                    Some(p) => write_table(&events_table(events), &pick(p, k))?,
                    None => events_table(events).write(&mut *stdout)?,
                }
                if let Some(p) = &counts_out {
                    let c = counts.as_ref().ok_or_else(|| {
                        Error::InvalidInput("`--counts-out` needs a bin width".into())
                    })?;
                    write_table(&counts_table(c), &pick(p, k))?;
                }
                if let Some(p) = &chain_out {
                    write_table(&chain_table(chain), &pick(p, k))?;
                }
                writeln!(stderr, "replication {k}: {} events, {} chain jumps", events.len(), chain.jump_times.len())?;
            }
            Ok(())
        }
        Command::Filter => {
            let model = ctx.cfg.model()?;
            let path = match ctx.observations()? {
                Observations::Counts(c) => filter_counts(&model, &c)?,
                Observations::Events { events, horizon } => {
                    let grid = output_grid(ctx.cfg.output_step, horizon);
                    filter_events(&model, &events, horizon, &grid, ctx.max_substep(&model))?
                }
            };
            ctx.emit(&posterior_table(&[&path], &["p"])?, stdout)?;
            writeln!(stderr, "log_evidence {:?}", path.log_evidence)?;
            Ok(())
        }
        Command::Smooth => {
            let model = ctx.cfg.model()?;
            let (f, s) = match ctx.observations()? {
                Observations::Counts(c) => filter_smooth_counts(&model, &c)?,
                Observations::Events { events, horizon } => {
                    let grid = output_grid(ctx.cfg.output_step, horizon);
                    let rec = filter_events_recorded(&model, &events, horizon, &grid, ctx.max_substep(&model))?;
                    (rec.filtered_path(), smooth(&model, &rec)?)
                }
            };
            ctx.emit(&posterior_table(&[&f, &s], &["p", "p_smooth"])?, stdout)?;
            writeln!(stderr, "log_evidence {:?}", f.log_evidence)?;
            Ok(())
        }
        Command::Calibrate { iters } => {
            let model = ctx.cfg.model()?;
            let counts = ctx.counts()?;
            let iters = iters.or(ctx.cfg.iters).unwrap_or(4);
            let r0 = match (&ctx.cfg.changepoints, &ctx.cfg.labels) {
                (Some(c), Some(l)) => Some(initial_clustering(&counts, c, l, model.n())?),
                (None, None) => None,
                _ => {
                    return Err(Error::InvalidInput(
                        "`changepoints` and `labels` must be given together".into(),
                    ))
                }
            };
            let opts = EmOptions {
                weighting: ctx.cfg.weighting.unwrap_or_default(),
                fit_zeta: ctx.cfg.fit_zeta.unwrap_or(false),
                ..EmOptions::default()
            };
            let start_r = match &r0 {
                Some(r) => r.clone(),
                None => {
                    let (f, s) = filter_smooth_counts(&model, &counts)?;
                    if opts.weighting == crate::estimate::Weighting::Filtered { f } else { s }
                }
            };
            let start_ll = filter_counts(&model, &counts)?.log_evidence;
            let trace = em_calibrate(&model, &counts, Some(start_r), iters, &opts)?;
            let n = model.n();
            let mut cols = vec!["iter".to_string()];
            for name in ["alpha", "beta", "gamma"] {
                cols.extend(posterior_columns(name, n));
            }
            if opts.fit_zeta {
                cols.extend(posterior_columns("zeta", n));
            }
            cols.push("loglik".into());
            let mut table = ResultTable::new(cols);
            let row = |k: usize, p: &crate::model::HawkesParams, ll: f64| {
                let mut r = vec![k as f64];
                r.extend(&p.alpha);
                r.extend(&p.beta);
                r.extend(&p.gamma);
                if opts.fit_zeta {
                    r.extend(&p.zeta);
                }
                r.push(ll);
                r
            };
            table.push(row(0, &model.params, start_ll))?;
            for (k, it) in trace.iter().enumerate() {
                table.push(row(k + 1, &it.params, it.log_evidence))?;
                writeln!(stderr, "iteration {}: m-step objective {:?}", k + 1, it.objective)?;
            }
            ctx.emit(&table, stdout)
        }
        Command::EmDemo => {
            let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed());
            let a0 = if ctx.cfg.rate_matrix.is_some() || ctx.cfg.epsilon.is_some() {
                ctx.cfg.rate_matrix()?
            } else {
                random_rate_matrix(ctx.cfg.n.unwrap_or(3), &mut rng)?
            };
            let rhat = if ctx.common.input.is_some() {
                let model = ctx.cfg.model_with(a0.clone())?;
                filter_smooth_counts(&model, &ctx.counts()?)?.1
            } else {
                random_posterior(a0.n(), 1000, 0.1, &mut rng)
            };
            let (_, a1) = em_rate_matrix_step(&a0, &rhat)?;
            let rel = a1.matrix().add(&a0.matrix().scaled(-1.0)).norm1() / a0.matrix().norm1();
            writeln!(stdout, "relative_change {rel:e}")?;
            Ok(())
        }
        Command::RobustDemo => {
            let model = ctx.cfg.model()?;
            let (events, horizon) = match &ctx.common.input {
                Some(_) => match ctx.observations()? {
                    Observations::Events { events, horizon } => (events, horizon),
                    Observations::Counts(_) => {
                        return Err(Error::InvalidInput("robust-demo needs event times".into()))
                    }
                },
                None => {
                    let horizon = ctx.horizon()?;
                    let chain = ctx.chain(&model, horizon, ctx.seed())?;
                    (simulate_events_thinning(&model, &chain, horizon, ctx.seed(), None)?, horizon)
                }
            };
            let run = robust_filter_events(
                &model,
                &events,
                horizon,
                ctx.max_substep(&model),
                ctx.cfg.log_overflow.unwrap_or(DEFAULT_LOG_OVERFLOW),
            )?;
            let mut table = ResultTable::new(vec!["t".into(), "condition_log".into(), "max_abs_qbar".into()]);
            for (k, &t) in run.times.iter().enumerate() {
                let q = run.qbar[k].iter().fold(0.0f64, |m, v| m.max(v.abs()));
                table.push(vec![t, run.gammas[k].condition_log(), q])?;
            }
            ctx.emit(&table, stdout)?;
            match run.failure {
                Some(e) => Err(e),
                None => Ok(()),
            }
        }
        Command::Predict { ahead } => {
            let model = ctx.cfg.model()?;
            let ahead = ahead.or(ctx.cfg.ahead).unwrap_or(1.0);
            let (t, p) = if ctx.common.input.is_some() {
                let path = match ctx.observations()? {
                    Observations::Counts(c) => filter_counts(&model, &c)?,
                    Observations::Events { events, horizon } => {
                        filter_events(&model, &events, horizon, &[], ctx.max_substep(&model))?
                    }
                };
                (*path.times.last().unwrap(), path.probs.last().unwrap().clone())
            } else {
                (0.0, model.q0.clone())
            };
            let ahead_p = predict(&p, &model.rate_matrix, ahead)?;
            let mut table = ResultTable::new(
                std::iter::once("t".to_string()).chain(posterior_columns("p", model.n())).collect(),
            );
            table.push(std::iter::once(t).chain(p).collect())?;
            table.push(std::iter::once(t + ahead).chain(ahead_p).collect())?;
            ctx.emit(&table, stdout)
        }
        Command::Tune { eps } => {
            let epsilons = eps
                .or_else(|| ctx.cfg.epsilons.clone())
                .unwrap_or_else(|| vec![0.0, 1e-7, 1e-5, 1e-3, 1e-2, 1e-1]);
            let base = ctx.cfg.model_with(RateMatrix::two_state_symmetric(1.0)?)?;
            let rows = tune_epsilon(&epsilons, &ctx.counts()?, &base)?;
            let mut table = ResultTable::new(
                ["epsilon", "switches", "mean_dwell", "min_dwell", "max_dwell", "log_evidence"]
                    .map(String::from)
                    .to_vec(),
            );
            for r in rows {
                table.push(vec![
                    r.epsilon,
                    r.switches as f64,
                    r.mean_dwell,
                    r.min_dwell,
                    r.max_dwell,
                    r.log_evidence,
                ])?;
            }
            ctx.emit(&table, stdout)
        }
    }
}

fn output_grid(step: Option<f64>, horizon: f64) -> Vec<f64> {
    match step {
        Some(h) if h > 0.0 => (1..)
            .map(|k| k as f64 * h)
            .take_while(|&t| t < horizon)
            .collect(),
        _ => Vec::new(),
    }
}

pub fn chain_table(chain: &ChainPath) -> ResultTable {
    let mut rows = vec![vec![0.0, chain.states[0] as f64]];
    rows.extend(
        chain
            .jump_times
            .iter()
            .zip(&chain.states[1..])
            .map(|(&t, &s)| vec![t, s as f64]),
    );
    ResultTable {
        columns: vec!["t".into(), "state".into()],
        rows,
    }
}

fn random_rate_matrix(n: usize, rng: &mut ChaCha8Rng) -> Result<RateMatrix> {
    if n == 0 {
        return Err(Error::InvalidInput("n must be positive".into()));
    }
    let mut data = vec![0.0; n * n];
    for j in 0..n {
        let mut col = 0.0;
        for i in (0..n).filter(|&i| i != j) {
            let r = rng.random_range(0.05..1.0);
            data[i * n + j] = r;
            col += r;
        }
        data[j * n + j] = -col;
    }
    RateMatrix::from_row_major(n, data)
}

/// Random strictly positive posterior on a uniform grid.
fn random_posterior(n: usize, points: usize, dt: f64, rng: &mut ChaCha8Rng) -> PosteriorPath {
    let probs = (0..points)
        .map(|_| {
            let mut p: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = p.iter().sum();
            p.iter_mut().for_each(|v| *v /= s);
            p
        })
        .collect();
    PosteriorPath {
        times: (0..points).map(|k| k as f64 * dt).collect(),
        probs,
        log_evidence: f64::NAN,
    }
}
