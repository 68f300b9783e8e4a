//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use bdc_cli::relu::{self, ReluRun, ReluSettings};
use bdc_cli::sdl::{self, SdlRun, SdlSettings};
use bdc_core::block::norm2;
use bdc_core::monomial::{
    bdc_block_decompose, dc_atom_bounds, explicit_nine_atom_product, polarize, verify_identity, Monomial,
};
use bdc_core::problems::cp::{cp_random_tensor, CpProblem};
use bdc_core::problems::quadratic::PiecewiseQuadratic;
use bdc_core::problems::sdl::SdlVariant;
use bdc_core::relu::{
    batch_split, block_grad, direct_loss, forward_split, forward_standard, hidden_activations, kink_margin, loss_split,
    LabeledSample, MlpParams, Part, Target,
};
use bdc_core::rng::substream;
use bdc_core::solvers::plan::{compute_e, plan_rho};
use bdc_core::solvers::{run, run_observed, BlockRule, SolverConfig};
use bdc_core::{BdcProblem, BlockVector, SampleHandle, StochasticBdc};
use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng as Rng64;
use rayon::prelude::*;

type Check = Result<String, String>;

/// Guard that turns a failed condition into a criterion failure message.
fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn normal(rng: &mut Rng64) -> f64 {
    rng.sample::<f64, _>(rand_distr::StandardNormal)
}

fn random_net(rng: &mut Rng64, max_layers: usize, max_width: usize, outputs: usize) -> MlpParams {
    let layers = rng.random_range(1..=max_layers);
    let mut widths: Vec<usize> = (0..layers).map(|_| rng.random_range(1..=max_width)).collect();
    widths.push(outputs);
    MlpParams::random(&widths, 1.0, rng).expect("valid widths")
}

fn random_input(rng: &mut Rng64, dim: usize) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| 1.5 * normal(rng))
}

fn random_target(rng: &mut Rng64, outputs: usize) -> Target {
    if outputs == 1 {
        Target::Value(rng.random_range(0.0..3.0))
    } else {
        Target::Class(rng.random_range(0..outputs))
    }
}

fn sup_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

fn rel_gap(approx: f64, exact: f64) -> f64 {
    (approx - exact).abs() / exact.abs().max(1.0)
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

// ---------------------------------------------------------------- monomials

fn c01_bounds() -> Check {
    let m = Monomial::new(vec![1, 1, 2, 4]).map_err(|e| e.to_string())?;
    let b = dc_atom_bounds(&m);
    ensure(b.lower == 30 && b.upper == 30, || format!("bounds ({}, {})", b.lower, b.upper))?;
    let dec = bdc_block_decompose(&m, &[vec![0, 1], vec![2, 3]]).map_err(|e| e.to_string())?;
    let counts = dec.counts();
    ensure(dec.total_atoms() == 9 && counts == vec![2, 7], || format!("block atoms {counts:?}"))?;
    Ok(format!("bounds=({}, {}) block atoms {}+{}={}", b.lower, b.upper, counts[0], counts[1], dec.total_atoms()))
}

fn c02_explicit() -> Check {
    let m = Monomial::new(vec![1, 1, 2, 4]).map_err(|e| e.to_string())?;
    let v = verify_identity(&explicit_nine_atom_product(), &m, 1000, 1e-6, 2);
    ensure(v.pass, || format!("max_rel_err={:e}", v.max_rel_err))?;
    Ok(format!("max_rel_err={:.2e} over 1000 points", v.max_rel_err))
}

fn exponent_vectors(n: usize, max_deg: u32) -> Vec<Vec<u32>> {
    fn rec(n: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for b in 1..=left.saturating_sub((n - cur.len() - 1) as u32) {
            cur.push(b);
            rec(n, left - b, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, max_deg, &mut Vec::new(), &mut out);
    out
}

fn c03_polarization() -> Check {
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for n in 1..=4 {
        for b in exponent_vectors(n, 8) {
            let m = Monomial::new(b.clone()).map_err(|e| e.to_string())?;
            let dec = polarize(&m);
            let v = verify_identity(&dec, &m, 200, 1e-6, checked);
            ensure(v.pass, || format!("{b:?}: max_rel_err={:e}", v.max_rel_err))?;
            worst = worst.max(v.max_rel_err);
            let full: usize = b.iter().map(|&x| x as usize + 1).product();
            if m.degree() % 2 == 0 {
                ensure(dec.len() <= full / 2, || format!("{b:?}: {} atoms > {}", dec.len(), full / 2))?;
            } else {
                ensure(dec.len() == full, || format!("{b:?}: {} atoms != {full}", dec.len()))?;
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} monomials, worst rel err {worst:.2e}"))
}

// ------------------------------------------------------------------- ReLU nets

fn c04_split_equivalence() -> Check {
    let mut rng = substream(4, "acceptance");
    let (mut out_err, mut layer_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..200 {
        let outputs = rng.random_range(1..=16);
        let p = random_net(&mut rng, 4, 16, outputs);
        for _ in 0..50 {
            let x = random_input(&mut rng, p.input_dim());
            let s = forward_split(&p, &x).map_err(|e| e.to_string())?;
            out_err = out_err.max(sup_diff(&s.output(), &forward_standard(&p, &x)));
            let acts = hidden_activations(&p, &x);
            ensure(acts.len() == s.z_plus.len(), || "hidden layer count mismatch".into())?;
            for (l, a) in acts.iter().enumerate() {
                ensure(s.z_plus[l].min() >= 0.0 && s.z_minus[l].min() >= 0.0, || "negative split part".into())?;
                layer_err = layer_err.max(sup_diff(&(&s.z_plus[l] - &s.z_minus[l]), a));
            }
        }
    }
    ensure(out_err <= 1e-10 && layer_err <= 1e-10, || format!("output err {out_err:e}, layer err {layer_err:e}"))?;
    Ok(format!("10000 evaluations, output err {out_err:.1e}, layer err {layer_err:.1e}"))
}

fn c05_loss_identities() -> Check {
    let mut rng = substream(5, "acceptance");
    let (mut worst_mse, mut worst_ce): (f64, f64) = (0.0, 0.0);
    for t in 0..10_000 {
        let outputs = if t % 2 == 0 { 1 } else { rng.random_range(2..=6) };
        let p = random_net(&mut rng, 4, 12, outputs);
        let x = random_input(&mut rng, p.input_dim());
        let y = random_target(&mut rng, outputs);
        let s = forward_split(&p, &x).map_err(|e| e.to_string())?;
        let (g, h) = loss_split(&s, y).map_err(|e| e.to_string())?;
        let err = rel_gap(g - h, direct_loss(&forward_standard(&p, &x), y));
        if outputs == 1 {
            worst_mse = worst_mse.max(err);
        } else {
            worst_ce = worst_ce.max(err);
        }
    }
    ensure(worst_mse <= 1e-9 && worst_ce <= 1e-9, || format!("mse {worst_mse:e}, ce {worst_ce:e}"))?;
    Ok(format!("mse rel err {worst_mse:.1e}, ce rel err {worst_ce:.1e}"))
}

/// All quantities that must be convex in each block: coordinates of A and B, then g and h.
fn convex_parts(p: &MlpParams, x: &DVector<f64>, y: Target) -> Vec<f64> {
    let s = forward_split(p, x).expect("input fits");
    let (g, h) = loss_split(&s, y).expect("valid target");
    s.a.iter().chain(s.b.iter()).copied().chain([g, h]).collect()
}

fn c06_blockwise_convexity() -> Check {
    let mut rng = substream(6, "acceptance");
    let mut worst: f64 = 0.0;
    for t in 0..10_000 {
        let outputs = if t % 2 == 0 { 1 } else { rng.random_range(2..=5) };
        let p = random_net(&mut rng, 4, 10, outputs);
        let widths = p.widths();
        let part = Arc::new(p.partition());
        let theta = p.to_block_vector(part.clone()).map_err(|e| e.to_string())?;
        let block = rng.random_range(0..p.n_layers());
        let dim = part.block_dims()[block];
        let mut draw = || -> Vec<f64> { (0..dim).map(|_| normal(&mut rng)).collect() };
        let (ua, ub) = (draw(), draw());
        let um: Vec<f64> = ua.iter().zip(&ub).map(|(a, b)| 0.5 * (a + b)).collect();
        let at = |u: &[f64]| {
            let th = theta.replace_block(block, u).expect("block length");
            MlpParams::from_block_vector(&widths, &th).expect("same widths")
        };
        let x = random_input(&mut rng, p.input_dim());
        let y = random_target(&mut rng, outputs);
        let (va, vb, vm) =
            (convex_parts(&at(&ua), &x, y), convex_parts(&at(&ub), &x, y), convex_parts(&at(&um), &x, y));
        for ((a, b), m) in va.iter().zip(&vb).zip(&vm) {
            let violation = (m - 0.5 * (a + b)) / a.abs().max(b.abs()).max(1.0);
            worst = worst.max(violation);
        }
    }
    ensure(worst <= 1e-9, || format!("max violation {worst:e}"))?;
    Ok(format!("10000 triples, max violation {worst:.1e}"))
}

const KINK_MARGIN: f64 = 1e-3;
const FD_STEP: f64 = 1e-5;

fn c07_gradient_checks() -> Check {
    let mut rng = substream(7, "acceptance");
    let (mut cases, mut rejected) = (0, 0);
    let mut worst: f64 = 0.0;
    while cases < 500 {
        let outputs = if cases % 2 == 0 { 1 } else { rng.random_range(2..=4) };
        let p = random_net(&mut rng, 4, 8, outputs);
        let batch: Vec<LabeledSample> = (0..rng.random_range(1..=3))
            .map(|_| LabeledSample { x: random_input(&mut rng, p.input_dim()), y: random_target(&mut rng, outputs) })
            .collect();
        let margin = batch.iter().map(|s| kink_margin(&p, &s.x).unwrap_or(0.0)).fold(f64::INFINITY, f64::min);
        if margin < KINK_MARGIN {
            rejected += 1;
            continue;
        }
        let refs: Vec<&LabeledSample> = batch.iter().collect();
        let widths = p.widths();
        let part = Arc::new(p.partition());
        let theta = p.to_block_vector(part.clone()).map_err(|e| e.to_string())?;
        let layer = rng.random_range(0..p.n_layers());
        let which = if rng.random_bool(0.5) { Part::G } else { Part::H };
        let analytic = block_grad(&p, &refs, which, layer).map_err(|e| e.to_string())?;
        let value = |th: &BlockVector| {
            let q = MlpParams::from_block_vector(&widths, th).expect("same widths");
            let (g, h) = batch_split(&q, &refs).expect("valid batch");
            if which == Part::G {
                g
            } else {
                h
            }
        };
        let u = theta.block(layer).to_vec();
        let fd: Vec<f64> = (0..u.len())
            .map(|j| {
                let mut up = u.clone();
                let mut dn = u.clone();
                up[j] += FD_STEP;
                dn[j] -= FD_STEP;
                let f = |v: &[f64]| value(&theta.replace_block(layer, v).expect("block length"));
                (f(&up) - f(&dn)) / (2.0 * FD_STEP)
            })
            .collect();
        let diff: Vec<f64> = fd.iter().zip(&analytic).map(|(a, b)| a - b).collect();
        let err = norm2(&diff) / norm2(&analytic).max(norm2(&fd)).max(1e-12);
        worst = worst.max(err);
        cases += 1;
    }
    ensure(worst <= 1e-5, || format!("max rel err {worst:e}"))?;
    Ok(format!("500 cases ({rejected} rejected near kinks), max rel err {worst:.1e}"))
}

// ------------------------------------------------------------ shared runs

#[derive(Default)]
struct Shared {
    sdl: Option<(Vec<SdlRun>, Vec<SdlRun>, Duration)>,
    relu: Option<(Vec<ReluRun>, Duration)>,
}

const SDL_SEEDS: u64 = 10;
const RELU_SEEDS: u64 = 5;

impl Shared {
    fn sdl(&mut self) -> Result<&(Vec<SdlRun>, Vec<SdlRun>, Duration), String> {
        if self.sdl.is_none() {
            let s = SdlSettings::default();
            let seeds: Vec<u64> = (0..SDL_SEEDS).collect();
            let clock = Instant::now();
            let l1 = sdl::run_seeds(&s, &seeds, SdlVariant::L1).map_err(|e| e.to_string())?;
            let lq = sdl::run_seeds(&s, &seeds, SdlVariant::L1MinusLq).map_err(|e| e.to_string())?;
            self.sdl = Some((l1, lq, clock.elapsed()));
        }
        Ok(self.sdl.as_ref().expect("just filled"))
    }

    fn relu(&mut self) -> Result<&(Vec<ReluRun>, Duration), String> {
        if self.relu.is_none() {
            let s = ReluSettings::default();
            let clock = Instant::now();
            let runs: Result<Vec<ReluRun>, _> =
                (0..RELU_SEEDS).into_par_iter().map(|seed| relu::run_seed(&s, seed)).collect();
            self.relu = Some((runs.map_err(|e| e.to_string())?, clock.elapsed()));
        }
        Ok(self.relu.as_ref().expect("just filled"))
    }
}

fn c08_step_bound(sh: &mut Shared) -> Check {
    let mut audited = 0;
    let mut bad = Vec::new();
    let (l1, lq, _) = sh.sdl()?;
    for r in l1.iter().chain(lq) {
        audited += r.trace.records.len();
        let v = r.trace.step_bound_violations(1e-9);
        if !v.is_empty() {
            bad.push(format!("sdl {} seed {} at k={:?}", sdl::variant_tag(r.variant), r.seed, &v[..v.len().min(3)]));
        }
    }
    let (runs, _) = sh.relu()?;
    for r in runs {
        audited += r.trace.records.len();
        let v = r.trace.step_bound_violations(1e-9);
        if !v.is_empty() {
            bad.push(format!("mlp seed {} at k={:?}", r.seed, &v[..v.len().min(3)]));
        }
    }
    ensure(bad.is_empty(), || bad.join("; "))?;
    Ok(format!("{audited} iterations audited, 0 violations"))
}

fn c09_sdl_ordering(sh: &mut Shared) -> Check {
    let truth = SdlSettings::default().true_sparsity();
    let (l1, lq, took) = sh.sdl()?;
    let (rec1, sp1) = sdl::final_medians(l1);
    let (recq, spq) = sdl::final_medians(lq);
    let detail = format!(
        "rec L1={rec1:.4} LQ={recq:.4}, sparsity L1={sp1:.4} LQ={spq:.4}, true sparsity {truth}, {:.0}s",
        took.as_secs_f64()
    );
    ensure(recq < rec1 && spq > sp1, || detail.clone())?;
    ensure(took.as_secs() < 300, || format!("too slow: {detail}"))?;
    ensure(truth == 0.84375, || format!("true sparsity {truth}"))?;
    Ok(detail)
}

fn c10_bdca_vs_gd(sh: &mut Shared) -> Check {
    let s = SdlSettings::default();
    let (_, lq, _) = sh.sdl()?;
    let picked: Vec<&SdlRun> = lq.iter().filter(|r| r.seed < 3).collect();
    let gd: Result<Vec<_>, _> =
        picked.par_iter().map(|r| sdl::gd_run(&s, r.seed, SdlVariant::L1MinusLq, sdl::oracle_calls(r))).collect();
    let gd = gd.map_err(|e| e.to_string())?;
    let bdca_med = median(&picked.iter().map(|r| r.trace.final_f).collect::<Vec<_>>());
    let gd_med = median(&gd.iter().map(|g| g.final_objective).collect::<Vec<_>>());
    let calls: Vec<usize> = picked.iter().map(|r| sdl::oracle_calls(r)).collect();
    let detail = format!("median objective BDCA={bdca_med:.5} GD={gd_med:.5}, budgets {calls:?}");
    ensure(bdca_med <= gd_med, || detail.clone())?;
    Ok(detail)
}

// --------------------------------------------------------------- theory

fn c11_rate_audit() -> Check {
    let mut parts = Vec::new();
    for k in [100usize, 400] {
        let (mut lhs, mut rhs) = (0.0, 0.0);
        for seed in 0..20u64 {
            let p = PiecewiseQuadratic::random(&[3, 3, 3, 3], 8, seed).map_err(|e| e.to_string())?;
            let lhat = p.block_lipschitz().into_iter().fold(0.0, f64::max);
            let mut rng = substream(seed, "init");
            let data: Vec<f64> = (0..12).map(|_| 3.0 * normal(&mut rng)).collect();
            let theta0 = BlockVector::new(p.partition().clone(), data).map_err(|e| e.to_string())?;
            let cfg = SolverConfig { iters: k, rho: 0.0, seed, block_rule: BlockRule::Uniform, ..Default::default() };
            let tr = run(&p, theta0, &cfg).map_err(|e| e.to_string())?;
            let min_res = tr.records.iter().map(|r| r.residual_upper * r.residual_upper).fold(f64::INFINITY, f64::min);
            lhs += min_res / 20.0;
            rhs += 2.0 * lhat * 4.0 / k as f64 * (tr.records[0].f - tr.final_f) / 20.0;
        }
        ensure(lhs <= 1.1 * rhs, || format!("K={k}: {lhs:e} > 1.1 * {rhs:e}"))?;
        parts.push(format!("K={k}: {lhs:.2e} <= 1.1*{rhs:.2e}"));
    }
    Ok(parts.join(", "))
}

fn c12_planner() -> Check {
    let (l0, g) = (2.0, 3.0);
    let e = compute_e(|_| l0, g).map_err(|e| e.to_string())?;
    let want = (2.0 * l0 * g).sqrt();
    ensure((e - want).abs() / want <= 1e-8, || format!("constant E={e} want {want}"))?;
    let (a0, a1, g2) = (1.0, 0.5, 2.0);
    let plan = plan_rho(|u| a0 + a1 * u, g2, 0.0).map_err(|e| e.to_string())?;
    let closed = 2.0 * a1 * g2 + (4.0 * a1 * a1 * g2 * g2 + 2.0 * a0 * g2).sqrt();
    ensure((plan.e - closed).abs() / closed <= 1e-8, || format!("affine E={} want {closed}", plan.e))?;
    ensure((plan.l_eff - (a0 + 2.0 * a1 * closed)).abs() <= 1e-8 * plan.l_eff, || "affine L_eff".into())?;
    ensure((plan.rho_min - 2.0 * plan.l_eff).abs() <= 1e-12 * plan.rho_min, || format!("rho_min {}", plan.rho_min))?;
    let with_r = plan_rho(|_| l0, g, 1.5).map_err(|e| e.to_string())?;
    ensure((with_r.rho_min - l0 * 2.0 * (with_r.e + 1.5) / with_r.e).abs() <= 1e-12 * with_r.rho_min, || {
        "rho_min with R > 0".into()
    })?;
    Ok(format!("E const={e:.10} affine={:.10} rho_min={:.6}", plan.e, plan.rho_min))
}

fn c13_stochastic_oracle() -> Check {
    let p = relu::build_problem(&ReluSettings::default(), 0).map_err(|e| e.to_string())?;
    let theta = p.initial();
    let pop = p.population();
    let block = 1;
    let full_grad = p.grad_g_block(block, &theta);
    let full_f = p.eval_f(&theta);
    let mut rng = substream(13, "acceptance");
    let mut estimates = |batch: usize, draws: usize| -> (Vec<Vec<f64>>, Vec<f64>) {
        (0..draws)
            .map(|id| {
                let view = p.sampled(&SampleHandle::draw(id as u64, pop, batch, &mut rng));
                (view.grad_g_block(block, &theta), view.eval_f(&theta))
            })
            .unzip()
    };
    let moments = |v: &[Vec<f64>]| -> (Vec<f64>, Vec<f64>) {
        let n = v.len() as f64;
        let d = v[0].len();
        let mean: Vec<f64> = (0..d).map(|j| v.iter().map(|x| x[j]).sum::<f64>() / n).collect();
        let var: Vec<f64> =
            (0..d).map(|j| v.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / (n - 1.0)).collect();
        (mean, var)
    };

    // unbiasedness: chi-square statistic of the coordinate means, z-score of f
    let draws = 2000;
    let (grads, fs) = estimates(4, draws);
    let (mean, var) = moments(&grads);
    let mut stat = 0.0;
    let mut dof = 0usize;
    for j in 0..mean.len() {
        let dev = mean[j] - full_grad[j];
        if var[j] > 1e-24 {
            stat += draws as f64 * dev * dev / var[j];
            dof += 1;
        } else {
            ensure(dev.abs() <= 1e-12, || format!("coordinate {j} deterministic but biased by {dev:e}"))?;
        }
    }
    let bound = dof as f64 + 5.0 * (2.0 * dof as f64).sqrt();
    ensure(stat <= bound, || format!("chi-square {stat:.1} > {bound:.1} ({dof} dof)"))?;
    let (fm, fv) = moments(&fs.iter().map(|x| vec![*x]).collect::<Vec<_>>());
    let z = (fm[0] - full_f).abs() / (fv[0] / draws as f64).sqrt();
    ensure(z <= 4.0, || format!("f z-score {z:.2}"))?;

    // variance against 1/batch
    let batches = [1usize, 2, 4, 8, 16, 32];
    let (xs, ys): (Vec<f64>, Vec<f64>) = batches
        .iter()
        .map(|&b| {
            let (g, _) = estimates(b, 500);
            (1.0 / b as f64, moments(&g).1.iter().sum::<f64>())
        })
        .unzip();
    let (a, slope) = relu::ls_fit(&xs, &ys).ok_or("degenerate variance fit")?;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - a - slope * x).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r2 = 1.0 - ss_res / ss_tot;
    ensure(r2 >= 0.95 && slope > 0.0, || format!("R^2 {r2:.4}, slope {slope:e}"))?;
    Ok(format!("chi-square {stat:.1} on {dof} dof (bound {bound:.1}), f z={z:.2}, variance R^2={r2:.4}"))
}

fn c14_stochastic_descent(sh: &mut Shared) -> Check {
    let (runs, took) = sh.relu()?;
    let mut parts = Vec::new();
    for r in runs {
        let smoothed = *relu::smooth(&r.losses, 50).last().ok_or("empty loss trace")?;
        let ks: Vec<f64> = r.trace.records.iter().map(|x| x.k as f64).collect();
        let res: Vec<f64> = r.trace.records.iter().map(|x| x.residual_upper).collect();
        let (_, slope) = relu::ls_fit(&ks, &res).ok_or("residual fit not computable")?;
        ensure(smoothed < r.losses[0] && slope < 0.0, || {
            format!("seed {}: loss {:.4} -> {:.4}, residual slope {slope:e}", r.seed, r.losses[0], smoothed)
        })?;
        parts.push(format!("{:.3}->{:.3}", r.losses[0], smoothed));
    }
    ensure(took.as_secs() < 300, || format!("too slow: {:.0}s", took.as_secs_f64()))?;
    let (rho, batch) = ReluSettings::default().rho_and_batch();
    Ok(format!("rho={rho:.2} batch={batch}, smoothed loss {}, {:.0}s", parts.join(" "), took.as_secs_f64()))
}

fn c15_cp_recovery() -> Check {
    let (t, _) = cp_random_tensor(&[4, 5, 6], 2, 0).map_err(|e| e.to_string())?;
    let p = CpProblem::new(t, 2).map_err(|e| e.to_string())?;
    let n = p.n_blocks();
    let cfg = SolverConfig { iters: 200 * n, block_rule: BlockRule::Cyclic, ..Default::default() };
    let mut prev = f64::INFINITY;
    let mut increases = 0;
    let mut reached: Option<usize> = None;
    let tr = run_observed(&p, p.init(0), &cfg, &mut |k, _, step| {
        let f = p.eval_f(&step.theta);
        if f > prev + 1e-12 * (1.0 + prev.abs()) {
            increases += 1;
        }
        prev = f;
        if reached.is_none() && k % n == n - 1 && p.relative_error(&step.theta) <= 1e-6 {
            reached = Some(k / n + 1);
        }
    })
    .map_err(|e| e.to_string())?;
    let err = p.relative_error(&tr.final_theta);
    ensure(increases == 0, || format!("{increases} objective increases"))?;
    let sweeps = reached.ok_or_else(|| format!("not recovered, rel err {err:e}"))?;
    Ok(format!("rel err <= 1e-6 after {sweeps} sweeps, final {err:.1e}, monotone"))
}

// ----------------------------------------------------------------- CLI

fn bdc(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_bdc"))
        .args(args)
        .arg("--out-dir")
        .arg(dir)
        .env_remove("BDC_OUT_DIR")
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    if !out.status.success() {
        return Err(format!(
            "bdc {} exited {:?}: {stdout}{}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(stdout)
}

fn c16_scatter() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    bdc(dir.path(), &["relu", "--task", "regression", "--epochs", "10", "--seed", "3"])?;
    let text = std::fs::read_to_string(dir.path().join("relu_scatter_seed3.csv")).map_err(|e| e.to_string())?;
    let mut lines = text.lines();
    ensure(lines.next() == Some(relu::SCATTER_HEADER), || "scatter header".into())?;
    let blocks = ReluSettings::default().hidden.len() + 1;
    let mut per_block = vec![0usize; blocks];
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        ensure(f.len() == 4, || format!("malformed row '{line}'"))?;
        let lg: f64 = f[0].parse().map_err(|_| format!("bad logG in '{line}'"))?;
        let ll: f64 = f[1].parse().map_err(|_| format!("bad logLhat in '{line}'"))?;
        let b: usize = f[3].parse().map_err(|_| format!("bad block in '{line}'"))?;
        ensure(lg.is_finite() && ll.is_finite() && ll.exp() > 0.0, || format!("non-finite row '{line}'"))?;
        ensure((1..=blocks).contains(&b), || format!("block {b} out of range"))?;
        per_block[b - 1] += 1;
        xs.push(lg);
        ys.push(ll);
    }
    ensure(per_block.iter().all(|&c| c > 0), || format!("rows per block {per_block:?}"))?;
    let (_, slope) = relu::ls_fit(&xs, &ys).ok_or("fit not computable")?;
    ensure(slope.is_finite(), || "fit slope not finite".into())?;
    Ok(format!("{} rows, per block {per_block:?}, fit slope {slope:.3}", xs.len()))
}

fn csv_files(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        if path.extension().is_some_and(|e| e == "csv") {
            let name = path.file_name().expect("file").to_string_lossy().into_owned();
            out.insert(name, std::fs::read(&path).map_err(|e| e.to_string())?);
        }
    }
    Ok(out)
}

fn c17_determinism() -> Check {
    let cases: [&[&str]; 5] = [
        &["monomial", "--b", "1,1,2,4", "--polarize", "--merge", "--csv"],
        &["sdl", "--m", "6", "--l", "10", "--n", "20", "--k", "2", "--iters", "20", "--seeds", "2", "--gd-seeds", "1"],
        &[
            "relu",
            "--task",
            "classification",
            "--hidden",
            "6",
            "--epochs",
            "3",
            "--steps-per-epoch",
            "10",
            "--seeds",
            "2",
        ],
        &["tensor", "--sweeps", "20", "--seed", "5"],
        &["plan-rho", "--ell", "affine", "--l1", "0.5", "--g", "2"],
    ];
    let mut total = 0;
    for args in cases {
        let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
        bdc(a.path(), args)?;
        bdc(b.path(), args)?;
        let (fa, fb) = (csv_files(a.path())?, csv_files(b.path())?);
        ensure(!fa.is_empty(), || format!("{} wrote no CSV", args[0]))?;
        ensure(fa.keys().eq(fb.keys()), || format!("{}: different file sets", args[0]))?;
        for (name, bytes) in &fa {
            ensure(fb[name] == *bytes, || format!("{}: {name} differs between runs", args[0]))?;
        }
        total += fa.len();
    }
    Ok(format!("5 subcommands, {total} CSV files byte-identical"))
}

// ---------------------------------------------------------------- driver

enum Criterion {
    Plain(fn() -> Check),
    Shared(fn(&mut Shared) -> Check),
}

fn main() -> ExitCode {
    use Criterion::{Plain, Shared as Sh};
    let table: [(&str, Option<u64>, Criterion); 17] = [
        ("monomial atom bounds", Some(1), Plain(c01_bounds)),
        ("explicit nine-atom identity", Some(1), Plain(c02_explicit)),
        ("polarization soundness", Some(10), Plain(c03_polarization)),
        ("ReLU split equivalence", Some(30), Plain(c04_split_equivalence)),
        ("loss identities", Some(10), Plain(c05_loss_identities)),
        ("blockwise convexity", Some(60), Plain(c06_blockwise_convexity)),
        ("gradient checks", Some(60), Plain(c07_gradient_checks)),
        ("proximal step bound", None, Sh(c08_step_bound)),
        ("SDL ordering", None, Sh(c09_sdl_ordering)),
        ("BDCA vs GD on SDL", Some(300), Sh(c10_bdca_vs_gd)),
        ("rate audit", Some(120), Plain(c11_rate_audit)),
        ("rho planner", Some(1), Plain(c12_planner)),
        ("stochastic oracle", Some(120), Plain(c13_stochastic_oracle)),
        ("stochastic training descent", None, Sh(c14_stochastic_descent)),
        ("CP recovery", Some(30), Plain(c15_cp_recovery)),
        ("smoothness scatter", None, Plain(c16_scatter)),
        ("determinism", None, Plain(c17_determinism)),
    ];
    let mut shared = Shared::default();
    let mut failed = 0;
    for (i, (name, limit, crit)) in table.into_iter().enumerate() {
        let clock = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| match crit {
            Plain(f) => f(),
            Sh(f) => f(&mut shared),
        }))
        .unwrap_or_else(|_| Err("panicked".into()));
        let secs = clock.elapsed().as_secs_f64();
        let outcome = match (outcome, limit) {
            (Ok(d), Some(l)) if secs >= l as f64 => Err(format!("{d}; exceeded {l}s")),
            (o, _) => o,
        };
        match outcome {
            Ok(d) => println!("PASS {:>2} {name}: {d} [{secs:.2}s]", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {d} [{secs:.2}s]", i + 1);
            }
        }
    }
    println!("{} of 17 criteria passed", 17 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
