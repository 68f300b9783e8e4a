//! Subcommand bodies. Each takes a resolved config and an active run, writes
//! its CSV files through the run and returns the report lines for stdout.

use bdc_core::fmt::fmt_f64;
use bdc_core::monomial::{bdc_block_decompose, dc_atom_bounds, fmt_error, polarize, verify_identity, Monomial};
use bdc_core::problems::cp::{cp_random_tensor, CpProblem};
use bdc_core::problems::sdl::SdlVariant;
use bdc_core::solvers::plan::plan_rho;
use bdc_core::solvers::{run_observed, BlockRule, SolverConfig};
use bdc_core::{BdcError, BdcProblem};
use rayon::prelude::*;

use crate::config::Config;
use crate::error::CliError;
use crate::manifest::Run;
use crate::relu::{self, ls_fit, ReluSettings, SolverKind, TaskKind};
use crate::sdl::{self, SdlSettings};
use crate::stats::median;

pub type Report = Vec<String>;

pub const MONOMIAL_DEFAULTS: &[(&str, &str)] = &[
    ("b", ""),
    ("group", ""),
    ("bounds", "false"),
    ("polarize", "false"),
    ("verify", "false"),
    ("merge", "false"),
    ("csv", "false"),
    ("trials", "1000"),
    ("tol", "1e-6"),
    ("seed", "0"),
    ("out_dir", "out"),
];

pub const SDL_DEFAULTS: &[(&str, &str)] = &[
    ("m", "10"),
    ("l", "32"),
    ("n", "100"),
    ("k", "5"),
    ("alpha", "0.1"),
    ("q", "5"),
    ("iters", "700"),
    ("rho", "1e-3"),
    ("inner_budget", "10"),
    ("inner_tol", "1e-9"),
    ("variant", "both"),
    ("seed", "0"),
    ("seeds", "10"),
    ("gd_seeds", "3"),
    ("traces", "true"),
    ("out_dir", "out"),
];

pub const RELU_DEFAULTS: &[(&str, &str)] = &[
    ("task", "classification"),
    ("solver", "stochastic"),
    ("samples", "240"),
    ("classes", "3"),
    ("hidden", "16,16"),
    ("epochs", "30"),
    ("steps_per_epoch", "20"),
    ("rho", ""),
    ("batch_size", ""),
    ("c_rho", "1"),
    ("c_batch", "1"),
    ("inner_budget", "10"),
    ("delta", "0.25"),
    ("stride", "1"),
    ("seed", "0"),
    ("seeds", "1"),
    ("out_dir", "out"),
];

pub const TENSOR_DEFAULTS: &[(&str, &str)] = &[
    ("dims", "4,5,6"),
    ("rank", "2"),
    ("true_rank", ""),
    ("sweeps", "200"),
    ("seed", "0"),
    ("tol", "1e-6"),
    ("out_dir", "out"),
];

pub const PLAN_DEFAULTS: &[(&str, &str)] =
    &[("ell", "constant"), ("l0", "1"), ("l1", "0"), ("power", "1"), ("g", "1"), ("r", "0"), ("out_dir", "out")];

pub fn defaults(subcommand: &str) -> &'static [(&'static str, &'static str)] {
    match subcommand {
        "monomial" => MONOMIAL_DEFAULTS,
        "sdl" => SDL_DEFAULTS,
        "relu" => RELU_DEFAULTS,
        "tensor" => TENSOR_DEFAULTS,
        "plan-rho" => PLAN_DEFAULTS,
        other => panic!("unknown subcommand {other}"),
    }
}

/// Seeds `seed, seed + 1, ...` for the keys present in the config.
pub fn seed_list(cfg: &Config) -> Result<Vec<u64>, CliError> {
    if !cfg.entries().contains_key("seed") {
        return Ok(Vec::new());
    }
    let base: u64 = cfg.get("seed")?;
    let count: u64 = if cfg.entries().contains_key("seeds") { cfg.get("seeds")? } else { 1 };
    Ok((base..base + count).collect())
}

fn usage(e: BdcError) -> CliError {
    CliError::Usage(e.to_string())
}

/// `"1,2|3,4"` with 1-based indices.
pub fn parse_grouping(text: &str) -> Result<Vec<Vec<usize>>, CliError> {
    text.split('|')
        .map(|g| {
            g.split(',')
                .map(|t| match t.trim().parse::<usize>() {
                    Ok(i) if i >= 1 => Ok(i - 1),
                    _ => Err(CliError::Usage(format!("invalid variable index '{t}' in grouping"))),
                })
                .collect()
        })
        .collect()
}

pub fn cmd_monomial(cfg: &Config, run: &mut Run) -> Result<Report, CliError> {
    let b: Vec<u32> = cfg.list("b")?;
    if b.is_empty() {
        return Err(CliError::Usage("--b is required".into()));
    }
    let m = Monomial::new(b).map_err(usage)?;
    let group = cfg.str("group").trim().to_string();
    let (mut bounds, mut pol, mut verify) = (cfg.flag("bounds")?, cfg.flag("polarize")?, cfg.flag("verify")?);
    if !bounds && !pol && !verify && group.is_empty() {
        (bounds, pol, verify) = (true, true, true);
    }
    let trials: usize = cfg.get("trials")?;
    let tol: f64 = cfg.get("tol")?;
    let seed: u64 = cfg.get("seed")?;
    let mut out = Vec::new();
    let mut failed = false;
    if bounds {
        let bd = dc_atom_bounds(&m);
        out.push(format!("lower={} upper={}", bd.lower, bd.upper));
        run.note("lower", bd.lower);
        run.note("upper", bd.upper);
    }
    if !group.is_empty() {
        let grouping = parse_grouping(&group)?;
        let dec = bdc_block_decompose(&m, &grouping).map_err(usage)?;
        let counts: Vec<String> = dec.counts().iter().map(|c| c.to_string()).collect();
        out.push(format!("atoms={} ({})", dec.total_atoms(), counts.join("+")));
        run.note("block_atoms", dec.total_atoms());
        if verify {
            let v = verify_identity(&dec, &m, trials, tol, seed);
            out.push(format!("verify_blocks {} max_rel_err={}", pass_word(v.pass), fmt_error(v.max_rel_err)));
            failed |= !v.pass;
        }
    }
    if pol || verify {
        let mut dec = polarize(&m);
        if cfg.flag("merge")? {
            dec = dec.merge_proportional();
        }
        if pol {
            let (g, h) = dec.split_counts();
            out.push(format!("atoms={} g={g} h={h}", dec.len()));
            run.note("atoms", dec.len());
        }
        if cfg.flag("csv")? {
            run.write("monomial_atoms.csv", &dec.to_csv())?;
        }
        if verify {
            let v = verify_identity(&dec, &m, trials, tol, seed);
            out.push(format!("verify {} max_rel_err={}", pass_word(v.pass), fmt_error(v.max_rel_err)));
            run.note("max_rel_err", fmt_error(v.max_rel_err));
            failed |= !v.pass;
        }
    }
    if failed {
        return Err(CliError::Gate("verify".into()));
    }
    Ok(out)
}

fn pass_word(p: bool) -> &'static str {
    if p {
        "pass"
    } else {
        "fail"
    }
}

pub fn sdl_settings(cfg: &Config) -> Result<SdlSettings, CliError> {
    Ok(SdlSettings {
        m: cfg.get("m")?,
        l: cfg.get("l")?,
        n: cfg.get("n")?,
        k: cfg.get("k")?,
        alpha: cfg.get("alpha")?,
        q: cfg.get("q")?,
        iters: cfg.get("iters")?,
        rho: cfg.get("rho")?,
        inner_budget: cfg.get("inner_budget")?,
        inner_tol: cfg.get("inner_tol")?,
    })
}

pub fn sdl_variants(cfg: &Config) -> Result<Vec<SdlVariant>, CliError> {
    match cfg.str("variant") {
        "both" => Ok(vec![SdlVariant::L1, SdlVariant::L1MinusLq]),
        "l1" => Ok(vec![SdlVariant::L1]),
        "lq" => Ok(vec![SdlVariant::L1MinusLq]),
        other => Err(CliError::Usage(format!("variant must be both, l1 or lq, got '{other}'"))),
    }
}

pub fn cmd_sdl(cfg: &Config, run: &mut Run) -> Result<Report, CliError> {
    let s = sdl_settings(cfg)?;
    if s.iters == 0 {
        return Err(CliError::Usage("iters must be positive".into()));
    }
    let variants = sdl_variants(cfg)?;
    let seeds = seed_list(cfg)?;
    if seeds.is_empty() {
        return Err(CliError::Usage("seeds must be positive".into()));
    }
    let mut groups = Vec::new();
    for &v in &variants {
        groups.push((v, sdl::run_seeds(&s, &seeds, v).map_err(usage)?));
    }
    run.write("sdl_summary.csv", &sdl::summary_csv(&s, &groups))?;
    let mut out = Vec::new();
    let mut violations = 0;
    let mut infeasible = false;
    for (v, runs) in &groups {
        let tag = sdl::variant_tag(*v);
        for r in runs {
            violations += r.trace.step_bound_violations(1e-9).len();
            infeasible |= r.max_column_norm > 1.0 + 1e-10;
            if cfg.flag("traces")? {
                run.write(&format!("sdl_{tag}_seed{}_trace.csv", r.seed), &r.trace.to_csv())?;
                run.write(&format!("sdl_{tag}_seed{}_audit.csv", r.seed), &r.trace.audit_csv())?;
            }
        }
        let (rec, spar) = sdl::final_medians(runs);
        out.push(format!("median_rec_{tag}={} median_sparsity_{tag}={}", fmt_f64(rec), fmt_f64(spar)));
        run.note(&format!("median_rec_{tag}"), fmt_f64(rec));
        run.note(&format!("median_sparsity_{tag}"), fmt_f64(spar));
    }
    out.push(format!("true_sparsity={}", fmt_f64(s.true_sparsity())));
    // the baseline follows the nonconvex variant when it was run
    let gd_variant = *variants.last().expect("at least one variant");
    let bdca = &groups.last().expect("at least one variant").1;
    let gd_seeds: usize = cfg.get("gd_seeds")?;
    let gd: Vec<sdl::GdRun> = bdca
        .par_iter()
        .take(gd_seeds)
        .map(|r| sdl::gd_run(&s, r.seed, gd_variant, sdl::oracle_calls(r)))
        .collect::<bdc_core::Result<_>>()
        .map_err(usage)?;
    if !gd.is_empty() {
        for g in &gd {
            run.write(&format!("sdl_gd_seed{}.csv", g.seed), &sdl::gd_csv(g))?;
        }
        let gd_med = median(&gd.iter().map(|g| g.final_objective).collect::<Vec<_>>());
        let bd_med = median(&bdca.iter().take(gd.len()).map(|r| r.trace.final_f).collect::<Vec<_>>());
        out.push(format!("gd_median_objective={} bdca_median_objective={}", fmt_f64(gd_med), fmt_f64(bd_med)));
        run.note("gd_median_objective", fmt_f64(gd_med));
        run.note("bdca_median_objective", fmt_f64(bd_med));
    }
    run.note("step_bound_violations", violations);
    if violations > 0 {
        return Err(CliError::Gate("step_bound".into()));
    }
    if infeasible {
        return Err(CliError::Gate("dictionary_feasibility".into()));
    }
    Ok(out)
}

pub fn relu_settings(cfg: &Config) -> Result<ReluSettings, CliError> {
    let task = match cfg.str("task") {
        "classification" => TaskKind::Classification,
        "regression" => TaskKind::Regression,
        other => return Err(CliError::Usage(format!("task must be classification or regression, got '{other}'"))),
    };
    let solver = match cfg.str("solver") {
        "stochastic" => SolverKind::Stochastic,
        "proximal" => SolverKind::Proximal,
        other => return Err(CliError::Usage(format!("solver must be stochastic or proximal, got '{other}'"))),
    };
    let s = ReluSettings {
        task,
        solver,
        samples: cfg.get("samples")?,
        classes: cfg.get("classes")?,
        hidden: cfg.list("hidden")?,
        epochs: cfg.get("epochs")?,
        steps_per_epoch: cfg.get("steps_per_epoch")?,
        rho: cfg.opt("rho")?,
        batch_size: cfg.opt("batch_size")?,
        c_rho: cfg.get("c_rho")?,
        c_batch: cfg.get("c_batch")?,
        inner_budget: cfg.get("inner_budget")?,
        delta: cfg.get("delta")?,
        stride: cfg.get("stride")?,
    };
    if !(s.delta > 0.0 && s.delta <= 1.0) {
        return Err(CliError::Usage("delta must lie in (0, 1]".into()));
    }
    if s.samples == 0 || s.hidden.contains(&0) {
        return Err(CliError::Usage("samples and hidden widths must be positive".into()));
    }
    Ok(s)
}

pub fn cmd_relu(cfg: &Config, run: &mut Run) -> Result<Report, CliError> {
    let s = relu_settings(cfg)?;
    let seeds = seed_list(cfg)?;
    let runs: Vec<relu::ReluRun> =
        seeds.par_iter().map(|&seed| relu::run_seed(&s, seed)).collect::<bdc_core::Result<_>>().map_err(usage)?;
    let mut out = Vec::new();
    let mut violations = 0;
    for r in &runs {
        run.write(&format!("relu_loss_seed{}.csv", r.seed), &relu::loss_csv(r))?;
        run.write(&format!("relu_scatter_seed{}.csv", r.seed), &relu::scatter_csv(&r.scatter))?;
        run.write(&format!("relu_trace_seed{}.csv", r.seed), &r.trace.to_csv())?;
        run.write(&format!("relu_audit_seed{}.csv", r.seed), &r.trace.audit_csv())?;
        violations += r.trace.step_bound_violations(1e-9).len();
        let acc = r.accuracy.map_or_else(String::new, |a| format!(" accuracy={}", fmt_f64(a)));
        out.push(format!(
            "seed={} rho={} batch={} final_loss={}{acc}",
            r.seed,
            fmt_f64(r.rho),
            r.batch,
            fmt_f64(r.final_loss)
        ));
        let xs: Vec<f64> = r.scatter.iter().map(|p| p.log_g).collect();
        let ys: Vec<f64> = r.scatter.iter().map(|p| p.log_lhat).collect();
        match ls_fit(&xs, &ys) {
            Some((a, b)) => {
                out.push(format!("seed={} scatter_fit intercept={} slope={}", r.seed, fmt_f64(a), fmt_f64(b)))
            }
            None => out.push(format!("seed={} scatter_fit none", r.seed)),
        }
    }
    run.note("step_bound_violations", violations);
    if violations > 0 {
        return Err(CliError::Gate("step_bound".into()));
    }
    Ok(out)
}

pub const TENSOR_HEADER: &str = "sweep,block,objective,rel_error";

pub fn cmd_tensor(cfg: &Config, run: &mut Run) -> Result<Report, CliError> {
    let dims: Vec<usize> = cfg.list("dims")?;
    let rank: usize = cfg.get("rank")?;
    let true_rank: usize = cfg.opt("true_rank")?.unwrap_or(rank);
    let sweeps: usize = cfg.get("sweeps")?;
    let seed: u64 = cfg.get("seed")?;
    let tol: f64 = cfg.get("tol")?;
    if true_rank == 0 {
        return Err(CliError::Usage("rank must be positive".into()));
    }
    let (t, _) = cp_random_tensor(&dims, true_rank, seed).map_err(usage)?;
    let p = CpProblem::new(t, rank).map_err(usage)?;
    let n = p.n_blocks();
    let solver = SolverConfig { iters: sweeps * n, block_rule: BlockRule::Cyclic, seed, ..Default::default() };
    let mut csv = format!("{TENSOR_HEADER}\n");
    let mut prev = f64::INFINITY;
    let mut increases = 0;
    let trace = run_observed(&p, p.init(seed), &solver, &mut |k, _, step| {
        let f = p.eval_f(&step.theta);
        if f > prev + 1e-12 * (1.0 + prev.abs()) {
            increases += 1;
        }
        prev = f;
        let e = p.relative_error(&step.theta);
        csv += &format!("{},{},{},{}\n", k / n + 1, step.block + 1, fmt_f64(f), fmt_f64(e));
    })
    .map_err(usage)?;
    run.write("tensor_trace.csv", &csv)?;
    let err = p.relative_error(&trace.final_theta);
    run.note("final_rel_error", fmt_f64(err));
    run.note("objective_increases", increases);
    let mut out = vec![format!("sweeps={sweeps} final_rel_error={} recovered={}", fmt_f64(err), err <= tol)];
    out.push(format!("monotone={}", increases == 0));
    if increases > 0 {
        return Err(CliError::Gate("objective_increase".into()));
    }
    Ok(out)
}

pub fn cmd_plan_rho(cfg: &Config, run: &mut Run) -> Result<Report, CliError> {
    let l0: f64 = cfg.get("l0")?;
    let l1: f64 = cfg.get("l1")?;
    let power: f64 = cfg.get("power")?;
    let g: f64 = cfg.get("g")?;
    let r: f64 = cfg.get("r")?;
    if l0.is_nan() || l0 <= 0.0 || l1 < 0.0 || power < 0.0 || r < 0.0 {
        return Err(CliError::Usage("need l0 > 0 and nonnegative l1, power, r".into()));
    }
    let ell: Box<dyn Fn(f64) -> f64> = match cfg.str("ell") {
        "constant" => Box::new(move |_| l0),
        "affine" => Box::new(move |u| l0 + l1 * u),
        "power" => Box::new(move |u: f64| l0 + l1 * u.powf(power)),
        other => return Err(CliError::Usage(format!("ell must be constant, affine or power, got '{other}'"))),
    };
    let plan = match plan_rho(ell, g, r) {
        Ok(p) => p,
        Err(BdcError::NotSubquadratic) => return Err(CliError::Gate("not_subquadratic".into())),
        Err(e) => return Err(usage(e)),
    };
    run.note("E", fmt_f64(plan.e));
    run.note("L_eff", fmt_f64(plan.l_eff));
    run.note("rho_min", fmt_f64(plan.rho_min));
    let csv = format!(
        "G,R,E,L_eff,rho_min\n{},{},{},{},{}\n",
        fmt_f64(plan.g),
        fmt_f64(plan.r),
        fmt_f64(plan.e),
        fmt_f64(plan.l_eff),
        fmt_f64(plan.rho_min)
    );
    run.write("plan_rho.csv", &csv)?;
    Ok(vec![format!("E={} L_eff={} rho_min={}", fmt_f64(plan.e), fmt_f64(plan.l_eff), fmt_f64(plan.rho_min))])
}

/// Resolve, run and finalize one subcommand.
pub fn execute(
    subcommand: &str,
    file: Option<&std::path::Path>,
    flags: Vec<(String, String)>,
) -> Result<Report, CliError> {
    let cfg = Config::resolve(defaults(subcommand), file, flags)?;
    let seeds = seed_list(&cfg)?;
    let dir = crate::manifest::resolve_out_dir(cfg.str("out_dir"));
    let mut run = Run::start(subcommand, &cfg, seeds, dir)?;
    let result = match subcommand {
        "monomial" => cmd_monomial(&cfg, &mut run),
        "sdl" => cmd_sdl(&cfg, &mut run),
        "relu" => cmd_relu(&cfg, &mut run),
        "tensor" => cmd_tensor(&cfg, &mut run),
        "plan-rho" => cmd_plan_rho(&cfg, &mut run),
        other => Err(CliError::Usage(format!("unknown subcommand '{other}'"))),
    };
    run.finish(result.as_ref().err().map(ToString::to_string))?;
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    fn in_tmp(sub: &str, pairs: &[(&str, &str)]) -> (tempfile::TempDir, Result<Report, CliError>) {
        let dir = tempfile::tempdir().unwrap();
        let mut f = flags(pairs);
        f.push(("out_dir".into(), dir.path().to_string_lossy().into_owned()));
        let r = execute(sub, None, f);
        (dir, r)
    }

    #[test]
    fn monomial_reports() {
        let (_d, r) = in_tmp("monomial", &[("b", "1,1,2,4"), ("bounds", "true")]);
        assert_eq!(r.unwrap(), vec!["lower=30 upper=30"]);
        let (_d, r) = in_tmp("monomial", &[("b", "1,1,2,4"), ("group", "1,2|3,4")]);
        assert_eq!(r.unwrap(), vec!["atoms=9 (2+7)"]);
        let (_d, r) = in_tmp("monomial", &[("b", "1,1"), ("verify", "true")]);
        assert!(r.unwrap()[0].starts_with("verify pass"));
        let (_d, r) = in_tmp("monomial", &[("b", "1,1"), ("group", "1|3")]);
        assert!(matches!(r, Err(CliError::Usage(_))));
    }

    #[test]
    fn grouping_parser() {
        assert_eq!(parse_grouping("1,2|3,4").unwrap(), vec![vec![0, 1], vec![2, 3]]);
        assert!(parse_grouping("0,1").is_err());
        assert!(parse_grouping("1,,2").is_err());
    }

    #[test]
    fn tensor_bad_dims_is_usage() {
        let (_d, r) = in_tmp("tensor", &[("dims", "4,0,6")]);
        assert!(matches!(r, Err(CliError::Usage(_))));
        let (_d, r) = in_tmp("tensor", &[("dims", "4,x")]);
        assert!(matches!(r, Err(CliError::Usage(_))));
    }

    #[test]
    fn tensor_one_sweep_is_monotone() {
        let (d, r) = in_tmp("tensor", &[("sweeps", "1")]);
        assert!(r.unwrap().contains(&"monotone=true".to_string()));
        let csv = std::fs::read_to_string(d.path().join("tensor_trace.csv")).unwrap();
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn plan_rho_constant() {
        let (_d, r) = in_tmp("plan-rho", &[("l0", "2"), ("g", "3")]);
        let line = &r.unwrap()[0];
        assert!(line.starts_with(&format!("E={}", fmt_f64(12f64.sqrt()))[..8]), "{line}");
        let (_d, r) = in_tmp("plan-rho", &[("ell", "power"), ("l1", "1"), ("power", "3")]);
        assert!(matches!(r, Err(CliError::Gate(t)) if t == "not_subquadratic"));
    }

    #[test]
    fn sdl_single_variant() {
        let (d, r) = in_tmp(
            "sdl",
            &[
                ("variant", "l1"),
                ("m", "5"),
                ("l", "8"),
                ("n", "12"),
                ("k", "2"),
                ("iters", "5"),
                ("seeds", "2"),
                ("gd_seeds", "1"),
            ],
        );
        let lines = r.unwrap();
        assert!(lines[0].starts_with("median_rec_L1="));
        let head = std::fs::read_to_string(d.path().join("sdl_summary.csv")).unwrap();
        assert!(!head.contains("_LQ"));
        assert!(d.path().join("sdl_gd_seed0.csv").exists());
    }
}
