//! Block coordinate DC algorithms: plain, proximal and stochastic proximal.

pub mod inner;
pub mod plan;
pub mod smoothness;

use std::time::Instant;

use rand::Rng;

use crate::block::{norm2, BlockVector};
use crate::error::{BdcError, Result};
use crate::fmt::fmt_f64;
use crate::model::{residual_upper, surrogate_value, BdcProblem, SampleHandle, StochasticBdc};
use crate::rng::substream;
pub use inner::{InnerOptions, InnerReport, InnerStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BlockRule {
    #[default]
    Uniform,
    Cyclic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub iters: usize,
    pub rho: f64,
    pub inner: InnerOptions,
    pub seed: u64,
    pub block_rule: BlockRule,
    /// Minibatch size; only read by the stochastic loop.
    pub batch_size: usize,
    /// Record wall-clock milliseconds. Off by default so traces replay byte for byte.
    pub timing: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            iters: 100,
            rho: 0.0,
            inner: InnerOptions::default(),
            seed: 0,
            block_rule: BlockRule::Uniform,
            batch_size: 32,
            timing: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rho < 0.0 || !self.rho.is_finite() {
            return Err(BdcError::InvalidArgument("rho must be finite and nonnegative".into()));
        }
        if self.inner.budget == 0 {
            return Err(BdcError::InvalidArgument("inner budget must be at least 1".into()));
        }
        Ok(())
    }
}

/// Outcome of one block update.
#[derive(Debug, Clone)]
pub struct Step {
    pub theta: BlockVector,
    pub block: usize,
    /// `s - u` at the old point for the surrogate that was minimised.
    pub z: Vec<f64>,
    pub step_norm: f64,
    pub inner_iters: usize,
    pub inner_status: InnerStatus,
    pub surrogate_start: f64,
    pub surrogate_end: f64,
}

impl Step {
    /// `(2 / rho) ||z||`, infinite when `rho = 0`.
    pub fn step_bound(&self, rho: f64) -> f64 {
        if rho > 0.0 {
            2.0 / rho * norm2(&self.z)
        } else {
            f64::INFINITY
        }
    }
}

fn block_update<P: BdcProblem + ?Sized>(
    p: &P,
    theta: &BlockVector,
    block: usize,
    rho: f64,
    opts: &InnerOptions,
) -> Result<Step> {
    p.partition().check_index(block)?;
    let u = p.subgrad_h_block(block, theta);
    let z = p.block_residual(block, theta);
    let report = p.solve_surrogate(block, theta, &u, rho, opts)?;
    let start = surrogate_value(p, block, theta, theta.block(block), &u, rho)?;
    let end = surrogate_value(p, block, theta, &report.x, &u, rho)?;
    if !end.is_finite() {
        return Err(BdcError::NonFinite("surrogate"));
    }
    if end > start + 1e-10 * (1.0 + start.abs()) {
        return Err(BdcError::InnerDivergence { block, start, end });
    }
    let next = theta.replace_block(block, &report.x)?;
    Ok(Step {
        step_norm: next.distance(theta),
        theta: next,
        block,
        z,
        inner_iters: report.iters,
        inner_status: report.status,
        surrogate_start: start,
        surrogate_end: end,
    })
}

/// Minimise `g_i - <u_i, .>` over block `i`.
pub fn bdca_step<P: BdcProblem + ?Sized>(
    p: &P,
    theta: &BlockVector,
    block: usize,
    opts: &InnerOptions,
) -> Result<Step> {
    block_update(p, theta, block, 0.0, opts)
}

/// Proximal update with weight `rho > 0`.
pub fn prox_bdca_step<P: BdcProblem + ?Sized>(
    p: &P,
    theta: &BlockVector,
    block: usize,
    rho: f64,
    opts: &InnerOptions,
) -> Result<Step> {
    if rho.is_nan() || rho <= 0.0 {
        return Err(BdcError::InvalidArgument("proximal step needs rho > 0".into()));
    }
    block_update(p, theta, block, rho, opts)
}

/// Proximal update on the minibatch view given by `handle`.
pub fn stoch_prox_bdca_step<S: StochasticBdc + ?Sized>(
    p: &S,
    theta: &BlockVector,
    block: usize,
    rho: f64,
    handle: &SampleHandle,
    opts: &InnerOptions,
) -> Result<Step> {
    let view = p.sampled(handle);
    prox_bdca_step(view.as_ref(), theta, block, rho, opts)
}

/// One row of the iteration trace. Values are taken at `theta^k`, before the update.
#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    pub k: usize,
    pub block: usize,
    pub f: f64,
    pub g_block: f64,
    pub h_block: f64,
    pub residual_upper: f64,
    pub step_norm: f64,
    pub inner_iters: usize,
    pub wall_ms: f64,
    pub step_bound: f64,
    /// `h_{i_k}(theta^k) - h_{i_0}(theta^0)`, for auditing boundedness of h.
    pub h_offset: f64,
    pub sample_id: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct IterTrace {
    pub records: Vec<IterRecord>,
    pub final_theta: BlockVector,
    pub final_f: f64,
}

pub const TRACE_HEADER: &str = "k,block,f,g_block,h_block,residual_upper,step_norm,inner_iters,wall_ms";
pub const AUDIT_HEADER: &str = "k,block,step_norm,step_bound,h_offset,sample_id";

impl IterTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_HEADER);
        out.push('\n');
        for r in &self.records {
            let row = [
                r.k.to_string(),
                r.block.to_string(),
                fmt_f64(r.f),
                fmt_f64(r.g_block),
                fmt_f64(r.h_block),
                fmt_f64(r.residual_upper),
                fmt_f64(r.step_norm),
                r.inner_iters.to_string(),
                fmt_f64(r.wall_ms),
            ];
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn audit_csv(&self) -> String {
        let mut out = String::from(AUDIT_HEADER);
        out.push('\n');
        for r in &self.records {
            let sample = r.sample_id.map(|s| s.to_string()).unwrap_or_default();
            let bound = if r.step_bound.is_finite() { fmt_f64(r.step_bound) } else { "inf".into() };
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.k,
                r.block,
                fmt_f64(r.step_norm),
                bound,
                fmt_f64(r.h_offset),
                sample
            ));
        }
        out
    }

    /// Iterations whose step exceeds `(2/rho)||z|| + slack`.
    pub fn step_bound_violations(&self, slack: f64) -> Vec<usize> {
        self.records.iter().filter(|r| r.step_norm > r.step_bound + slack).map(|r| r.k).collect()
    }

    pub fn total_inner_iters(&self) -> usize {
        self.records.iter().map(|r| r.inner_iters).sum()
    }
}

/// Block schedule drawn from its own substream.
pub struct BlockSchedule {
    rule: BlockRule,
    n: usize,
    k: usize,
    rng: rand_chacha::ChaCha8Rng,
}

impl BlockSchedule {
    pub fn new(rule: BlockRule, n: usize, seed: u64) -> Self {
        Self { rule, n, k: 0, rng: substream(seed, "blocks") }
    }
}

impl Iterator for BlockSchedule {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        let i = match self.rule {
            BlockRule::Uniform => self.rng.random_range(0..self.n),
            BlockRule::Cyclic => self.k % self.n,
        };
        self.k += 1;
        Some(i)
    }
}

/// Per-step hook: `(k, theta^k, step)`. Used for audits such as smoothness probes.
pub type Observer<'a> = dyn FnMut(usize, &BlockVector, &Step) + 'a;

/// Deterministic loop; `rho = 0` gives plain BDCA, `rho > 0` the proximal variant.
pub fn run<P: BdcProblem + ?Sized>(p: &P, theta0: BlockVector, cfg: &SolverConfig) -> Result<IterTrace> {
    run_observed(p, theta0, cfg, &mut |_, _, _| {})
}

pub fn run_observed<P: BdcProblem + ?Sized>(
    p: &P,
    theta0: BlockVector,
    cfg: &SolverConfig,
    observer: &mut Observer<'_>,
) -> Result<IterTrace> {
    cfg.validate()?;
    let schedule = BlockSchedule::new(cfg.block_rule, p.n_blocks(), cfg.seed);
    drive(p, theta0, cfg, schedule, observer, |theta, block| {
        let step = if cfg.rho > 0.0 {
            prox_bdca_step(p, theta, block, cfg.rho, &cfg.inner)?
        } else {
            bdca_step(p, theta, block, &cfg.inner)?
        };
        Ok((step, None))
    })
}

/// Stochastic proximal loop. Blocks and minibatches come from separate substreams.
pub fn run_stochastic<S: StochasticBdc + ?Sized>(
    p: &S,
    theta0: BlockVector,
    cfg: &SolverConfig,
    observer: &mut Observer<'_>,
) -> Result<IterTrace> {
    cfg.validate()?;
    if cfg.batch_size == 0 {
        return Err(BdcError::InvalidArgument("batch size must be at least 1".into()));
    }
    let schedule = BlockSchedule::new(cfg.block_rule, p.n_blocks(), cfg.seed);
    let mut batches = substream(cfg.seed, "minibatches");
    let population = p.population();
    let mut draws = 0u64;
    drive(p, theta0, cfg, schedule, observer, |theta, block| {
        let handle = SampleHandle::draw(draws, population, cfg.batch_size, &mut batches);
        draws += 1;
        let step = stoch_prox_bdca_step(p, theta, block, cfg.rho, &handle, &cfg.inner)?;
        Ok((step, Some(handle.id)))
    })
}

fn drive<P, F>(
    p: &P,
    theta0: BlockVector,
    cfg: &SolverConfig,
    schedule: BlockSchedule,
    observer: &mut Observer<'_>,
    mut update: F,
) -> Result<IterTrace>
where
    P: BdcProblem + ?Sized,
    F: FnMut(&BlockVector, usize) -> Result<(Step, Option<u64>)>,
{
    let mut theta = theta0;
    let mut records = Vec::with_capacity(cfg.iters);
    let mut h0 = None;
    for (k, block) in schedule.take(cfg.iters).enumerate() {
        let clock = Instant::now();
        let f = p.eval_f(&theta);
        let g_block = p.eval_g(block, &theta);
        let h_block = p.eval_h(block, &theta);
        let resid = residual_upper(p, &theta);
        let h_start = *h0.get_or_insert(h_block);
        let (step, sample_id) = update(&theta, block)?;
        observer(k, &theta, &step);
        let wall_ms = if cfg.timing { clock.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
        records.push(IterRecord {
            k,
            block,
            f,
            g_block,
            h_block,
            residual_upper: resid,
            step_norm: step.step_norm,
            inner_iters: step.inner_iters,
            wall_ms,
            step_bound: step.step_bound(cfg.rho),
            h_offset: h_block - h_start,
            sample_id,
        });
        theta = step.theta;
    }
    let final_f = p.eval_f(&theta);
    Ok(IterTrace { records, final_theta: theta, final_f })
}
