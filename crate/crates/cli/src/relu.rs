//! Toy ReLU network training with the block DC solvers, plus the empirical
//! smoothness probe.

use bdc_core::block::norm2;
use bdc_core::fmt::fmt_f64;
use bdc_core::problems::mlp::{blobs_dataset, sine_dataset, MlpProblem, MlpTask};
use bdc_core::relu::{LossKind, MlpParams};
use bdc_core::rng::substream;
use bdc_core::solvers::inner::InnerOptions;
use bdc_core::solvers::plan::theory_preset;
use bdc_core::solvers::smoothness::smoothness_estimate;
use bdc_core::solvers::{run_observed, run_stochastic, BlockRule, IterTrace, SolverConfig};
use bdc_core::{BdcProblem, BlockVector, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Regression,
    Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    /// Stochastic proximal BDCA on minibatches.
    Stochastic,
    /// Full-batch proximal BDCA.
    Proximal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReluSettings {
    pub task: TaskKind,
    pub solver: SolverKind,
    pub samples: usize,
    pub classes: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Overrides the theory preset when set.
    pub rho: Option<f64>,
    pub batch_size: Option<usize>,
    pub c_rho: f64,
    pub c_batch: f64,
    pub inner_budget: usize,
    pub delta: f64,
    pub stride: usize,
}

impl Default for ReluSettings {
    fn default() -> Self {
        Self {
            task: TaskKind::Classification,
            solver: SolverKind::Stochastic,
            samples: 240,
            classes: 3,
            hidden: vec![16, 16],
            epochs: 30,
            steps_per_epoch: 20,
            rho: None,
            batch_size: None,
            c_rho: 1.0,
            c_batch: 1.0,
            inner_budget: 10,
            delta: 0.25,
            stride: 1,
        }
    }
}

impl ReluSettings {
    pub fn total_iters(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }

    /// `(rho, batch)` after applying the preset `rho = c sqrt(K)`.
    pub fn rho_and_batch(&self) -> (f64, usize) {
        let (rho, batch) = theory_preset(self.total_iters().max(1), self.c_rho, self.c_batch);
        (self.rho.unwrap_or(rho), self.batch_size.unwrap_or(batch).clamp(1, self.samples.max(1)))
    }

    pub fn widths(&self) -> Vec<usize> {
        let (input, output) = match self.task {
            TaskKind::Regression => (1, 1),
            TaskKind::Classification => (2, self.classes),
        };
        let mut w = vec![input];
        w.extend(&self.hidden);
        w.push(output);
        w
    }
}

pub fn build_problem(s: &ReluSettings, seed: u64) -> Result<MlpProblem> {
    let widths = s.widths();
    let net = MlpParams::random(&widths, 0.1, &mut substream(seed, "init"))?;
    let task = match s.task {
        TaskKind::Regression => MlpTask::new(sine_dataset(s.samples, 1.5, 0.05, seed), net, LossKind::Mse)?,
        TaskKind::Classification => {
            MlpTask::new(blobs_dataset(s.samples, s.classes, 3.0, 1.0, seed)?, net, LossKind::Ce)?
        }
    };
    MlpProblem::new(task)
}

/// One smoothness sample along an accepted step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterPoint {
    pub log_g: f64,
    pub log_lhat: f64,
    pub t: usize,
    pub block: usize,
}

#[derive(Debug, Clone)]
pub struct ReluRun {
    pub seed: u64,
    pub rho: f64,
    pub batch: usize,
    pub trace: IterTrace,
    pub losses: Vec<f64>,
    pub scatter: Vec<ScatterPoint>,
    pub final_loss: f64,
    pub accuracy: Option<f64>,
}

pub fn run_seed(s: &ReluSettings, seed: u64) -> Result<ReluRun> {
    let p = build_problem(s, seed)?;
    let (rho, batch) = s.rho_and_batch();
    let cfg = SolverConfig {
        iters: s.total_iters(),
        rho,
        inner: InnerOptions { budget: s.inner_budget, tol_factor: 1e-8 },
        seed,
        block_rule: BlockRule::Uniform,
        batch_size: batch,
        timing: false,
    };
    let mut losses = Vec::with_capacity(cfg.iters);
    let mut scatter = Vec::new();
    let stride = s.stride.max(1);
    let mut observe = |k: usize, theta: &BlockVector, step: &bdc_core::solvers::Step| {
        losses.push(p.training_loss(theta));
        if k.is_multiple_of(stride) && step.step_norm > 0.0 {
            let grad = norm2(&p.grad_g_block(step.block, theta));
            let lhat = smoothness_estimate(&p, theta, &step.theta, step.block, s.delta);
            if grad > 0.0 && lhat > 0.0 && lhat.is_finite() {
                scatter.push(ScatterPoint { log_g: grad.ln(), log_lhat: lhat.ln(), t: k, block: step.block });
            }
        }
    };
    let theta0 = p.initial();
    let trace = match s.solver {
        SolverKind::Stochastic => run_stochastic(&p, theta0, &cfg, &mut observe)?,
        SolverKind::Proximal => run_observed(&p, theta0, &cfg, &mut observe)?,
    };
    let final_loss = p.training_loss(&trace.final_theta);
    losses.push(final_loss);
    let accuracy = p.accuracy(&trace.final_theta);
    Ok(ReluRun { seed, rho, batch, trace, losses, scatter, final_loss, accuracy })
}

/// Least-squares line through `(x, y)`; `None` with fewer than two distinct x.
pub fn ls_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((my - slope * mx, slope))
}

/// Trailing moving average with window `w`.
pub fn smooth(v: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    let mut out = Vec::with_capacity(v.len());
    let mut acc = 0.0;
    for (i, x) in v.iter().enumerate() {
        acc += x;
        if i >= w {
            acc -= v[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}

pub const LOSS_HEADER: &str = "k,train_loss";
pub const SCATTER_HEADER: &str = "logG,logLhat,t,block";

pub fn loss_csv(run: &ReluRun) -> String {
    let mut s = format!("{LOSS_HEADER}\n");
    if run.trace.records.is_empty() {
        return s;
    }
    for (k, l) in run.losses.iter().enumerate() {
        s += &format!("{k},{}\n", fmt_f64(*l));
    }
    s
}

pub fn scatter_csv(points: &[ScatterPoint]) -> String {
    let mut s = format!("{SCATTER_HEADER}\n");
    for p in points {
        s += &format!("{},{},{},{}\n", fmt_f64(p.log_g), fmt_f64(p.log_lhat), p.t, p.block + 1);
    }
    s
}
