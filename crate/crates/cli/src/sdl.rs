//! Sparse dictionary learning experiment: l1 against l1 - lQ, plus the joint
//! gradient baseline.

use bdc_core::fmt::fmt_f64;
use bdc_core::problems::sdl::{
    gd_baseline_sdl, sdl_init, sdl_synthetic, sparsity, GdRecord, SdlProblem, SdlVariant, D_BLOCK,
};
use bdc_core::solvers::inner::InnerOptions;
use bdc_core::solvers::{run_observed, BlockRule, IterTrace, SolverConfig};
use bdc_core::{BdcProblem, BlockVector, Result};
use rayon::prelude::*;

use crate::stats::{mean, median, sample_sd};

/// Magnitude under which GD codes count as zero.
pub const GD_ZERO: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct SdlSettings {
    pub m: usize,
    pub l: usize,
    pub n: usize,
    pub k: usize,
    pub alpha: f64,
    pub q: usize,
    pub iters: usize,
    pub rho: f64,
    pub inner_budget: usize,
    pub inner_tol: f64,
}

impl Default for SdlSettings {
    fn default() -> Self {
        Self { m: 10, l: 32, n: 100, k: 5, alpha: 0.1, q: 5, iters: 700, rho: 1e-3, inner_budget: 10, inner_tol: 1e-9 }
    }
}

impl SdlSettings {
    pub fn true_sparsity(&self) -> f64 {
        1.0 - self.k as f64 / self.l as f64
    }
}

pub fn variant_tag(v: SdlVariant) -> &'static str {
    match v {
        SdlVariant::L1 => "L1",
        SdlVariant::L1MinusLq => "LQ",
    }
}

/// Per-sweep metrics of one seed and variant.
#[derive(Debug, Clone)]
pub struct SdlRun {
    pub seed: u64,
    pub variant: SdlVariant,
    pub rec_errors: Vec<f64>,
    pub sparsities: Vec<f64>,
    pub max_column_norm: f64,
    pub trace: IterTrace,
}

impl SdlRun {
    pub fn final_rec(&self) -> f64 {
        *self.rec_errors.last().expect("at least one sweep")
    }

    pub fn final_sparsity(&self) -> f64 {
        *self.sparsities.last().expect("at least one sweep")
    }
}

pub fn problem(s: &SdlSettings, seed: u64, variant: SdlVariant) -> Result<(SdlProblem, BlockVector)> {
    let data = sdl_synthetic(s.m, s.l, s.n, s.k, seed)?;
    let mut p = SdlProblem::new(data.y, s.l, s.alpha, s.q, variant)?;
    p.fw_tol = s.inner_tol;
    let (d0, x0) = sdl_init(s.m, s.l, s.n, seed);
    let theta = p.pack(&d0, &x0)?;
    Ok((p, theta))
}

/// One sweep updates X then D; metrics are recorded after every D update.
pub fn run_seed(s: &SdlSettings, seed: u64, variant: SdlVariant) -> Result<SdlRun> {
    let (p, theta0) = problem(s, seed, variant)?;
    let cfg = SolverConfig {
        iters: 2 * s.iters,
        rho: s.rho,
        inner: InnerOptions { budget: s.inner_budget, tol_factor: s.inner_tol },
        seed,
        block_rule: BlockRule::Cyclic,
        ..Default::default()
    };
    let (mut rec, mut spar) = (Vec::with_capacity(s.iters), Vec::with_capacity(s.iters));
    let mut max_col: f64 = 0.0;
    let trace = run_observed(&p, theta0, &cfg, &mut |_, _, step| {
        if step.block == D_BLOCK {
            rec.push(p.reconstruction_error(&step.theta));
            spar.push(sparsity(&p.codes(&step.theta), 0.0));
            let d = p.dictionary(&step.theta);
            max_col = d.column_iter().map(|c| c.norm()).fold(max_col, f64::max);
        }
    })?;
    Ok(SdlRun { seed, variant, rec_errors: rec, sparsities: spar, max_column_norm: max_col, trace })
}

pub fn run_seeds(s: &SdlSettings, seeds: &[u64], variant: SdlVariant) -> Result<Vec<SdlRun>> {
    seeds.par_iter().map(|&seed| run_seed(s, seed, variant)).collect()
}

/// Block gradient evaluations spent by a BDCA run. Each inner iteration
/// evaluates one block gradient of the smooth term.
pub fn oracle_calls(run: &SdlRun) -> usize {
    run.trace.total_inner_iters()
}

#[derive(Debug, Clone)]
pub struct GdRun {
    pub seed: u64,
    pub records: Vec<GdRecord>,
    pub final_objective: f64,
    pub final_sparsity: f64,
}

/// Joint gradient baseline with `calls` block gradient evaluations; each
/// joint step evaluates both blocks, so it runs `calls / 2` iterations.
pub fn gd_run(s: &SdlSettings, seed: u64, variant: SdlVariant, calls: usize) -> Result<GdRun> {
    let (p, theta0) = problem(s, seed, variant)?;
    let (records, end) = gd_baseline_sdl(&p, p.dictionary(&theta0), p.codes(&theta0), calls / 2)?;
    Ok(GdRun { seed, final_objective: p.eval_f(&end), final_sparsity: sparsity(&p.codes(&end), GD_ZERO), records })
}

/// Mean, min/max and mean +- 2 sd of one metric across seeds, per sweep.
fn band_columns(runs: &[SdlRun], metric: fn(&SdlRun) -> &[f64], sweep: usize) -> [f64; 5] {
    let v: Vec<f64> = runs.iter().map(|r| metric(r)[sweep]).collect();
    let m = mean(&v);
    let sd = sample_sd(&v);
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    [m, lo, hi, m - 2.0 * sd, m + 2.0 * sd]
}

/// `iter, rec_errors_<V>..., sparsities_<V>..., <metric>_<V>_{min,max,lo2sd,hi2sd}..., true_sparsity`.
pub fn summary_csv(s: &SdlSettings, groups: &[(SdlVariant, Vec<SdlRun>)]) -> String {
    type Metric = (&'static str, fn(&SdlRun) -> &[f64]);
    let metrics: [Metric; 2] = [("rec_errors", |r| &r.rec_errors), ("sparsities", |r| &r.sparsities)];
    let mut header = vec!["iter".to_string()];
    for (name, _) in &metrics {
        for (v, _) in groups {
            header.push(format!("{name}_{}", variant_tag(*v)));
        }
    }
    for (name, _) in &metrics {
        for (v, _) in groups {
            for band in ["min", "max", "lo2sd", "hi2sd"] {
                header.push(format!("{name}_{}_{band}", variant_tag(*v)));
            }
        }
    }
    header.push("true_sparsity".into());
    let mut out = header.join(",") + "\n";
    let sweeps = groups.iter().map(|(_, r)| r.first().map_or(0, |x| x.rec_errors.len())).min().unwrap_or(0);
    for k in 0..sweeps {
        let mut row = vec![(k + 1).to_string()];
        let mut bands = Vec::new();
        for (_, metric) in &metrics {
            for (_, runs) in groups {
                let [m, lo, hi, l2, h2] = band_columns(runs, *metric, k);
                row.push(fmt_f64(m));
                bands.extend([lo, hi, l2, h2].map(fmt_f64));
            }
        }
        row.extend(bands);
        row.push(fmt_f64(s.true_sparsity()));
        out += &(row.join(",") + "\n");
    }
    out
}

pub fn gd_csv(run: &GdRun) -> String {
    let mut out = String::from("iter,objective,step\n");
    for r in &run.records {
        out += &format!("{},{},{}\n", r.iter + 1, fmt_f64(r.objective), fmt_f64(r.step));
    }
    out
}

/// Medians of the final metrics of one variant.
pub fn final_medians(runs: &[SdlRun]) -> (f64, f64) {
    let rec: Vec<f64> = runs.iter().map(SdlRun::final_rec).collect();
    let spar: Vec<f64> = runs.iter().map(SdlRun::final_sparsity).collect();
    (median(&rec), median(&spar))
}
