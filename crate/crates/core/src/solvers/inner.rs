//! Solvers for the convex block subproblems.

use nalgebra::DMatrix;

use crate::block::{dot, BlockVector};
use crate::error::{BdcError, Result};
use crate::model::{BdcProblem, Domain};
use crate::sets::{Ball, ConvexSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerOptions {
    pub budget: usize,
    /// Stop once the first-order residual is below `tol_factor * (1 + |F|)`.
    pub tol_factor: f64,
}

impl Default for InnerOptions {
    fn default() -> Self {
        Self { budget: 200, tol_factor: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerStatus {
    Converged,
    BudgetExhausted,
    /// Backtracking could not find a decrease; the best point is returned.
    Stalled,
    ClosedForm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerReport {
    pub x: Vec<f64>,
    pub iters: usize,
    pub status: InnerStatus,
}

/// Nonsmooth part of a composite objective.
#[derive(Debug, Clone, Copy)]
pub enum Prox<'a> {
    None,
    L1 { weight: f64 },
    Project(&'a dyn ConvexSet),
}

impl Prox<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        match self {
            Prox::L1 { weight } => weight * x.iter().map(|v| v.abs()).sum::<f64>(),
            _ => 0.0,
        }
    }

    fn apply(&self, x: &mut [f64], step: f64) {
        match self {
            Prox::None => {}
            Prox::L1 { weight } => x.iter_mut().for_each(|v| *v = soft_threshold(*v, weight * step)),
            Prox::Project(set) => set.project(x),
        }
    }
}

pub fn soft_threshold(z: f64, lambda: f64) -> f64 {
    z.signum() * (z.abs() - lambda).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// Known Lipschitz constant; still doubled if the upper bound fails.
    Fixed { lipschitz: f64 },
    /// Estimate that may shrink after each accepted step.
    Backtracking { initial: f64 },
}

const MAX_LIPSCHITZ: f64 = 1e30;

/// Proximal gradient on `s(x) + r(x)` with `r` given by `prox`.
///
/// Every accepted step satisfies the quadratic upper bound, so the composite
/// objective never increases.
pub fn inner_prox_gradient<F, G>(
    mut value: F,
    mut grad: G,
    prox: Prox<'_>,
    x0: &[f64],
    opts: &InnerOptions,
    rule: StepRule,
) -> Result<InnerReport>
where
    F: FnMut(&[f64]) -> f64,
    G: FnMut(&[f64]) -> Vec<f64>,
{
    let (mut lip, adaptive) = match rule {
        StepRule::Fixed { lipschitz } => (lipschitz, false),
        StepRule::Backtracking { initial } => (initial, true),
    };
    if !(lip > 0.0 && lip.is_finite()) {
        return Err(BdcError::InvalidArgument("step constant must be positive".into()));
    }
    let mut x = x0.to_vec();
    let mut sx = value(&x);
    if !sx.is_finite() {
        return Err(BdcError::NonFinite("inner objective"));
    }
    for it in 0..opts.budget {
        let g = grad(&x);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(BdcError::NonFinite("inner gradient"));
        }
        let fx = sx + prox.value(&x);
        let (y, sy) = loop {
            let mut y: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - b / lip).collect();
            prox.apply(&mut y, 1.0 / lip);
            let d: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
            let sy = value(&y);
            let bound = sx + dot(&g, &d) + 0.5 * lip * dot(&d, &d) + 1e-14 * sx.abs();
            if sy.is_finite() && sy <= bound && sy + prox.value(&y) <= fx {
                break (y, sy);
            }
            lip *= 2.0;
            if lip > MAX_LIPSCHITZ {
                return Ok(InnerReport { x, iters: it, status: InnerStatus::Stalled });
            }
        };
        let mapping = lip * y.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        x = y;
        sx = sy;
        if mapping <= opts.tol_factor * (1.0 + fx.abs()) {
            return Ok(InnerReport { x, iters: it + 1, status: InnerStatus::Converged });
        }
        if adaptive {
            lip *= 0.5;
        }
    }
    Ok(InnerReport { x, iters: opts.budget, status: InnerStatus::BudgetExhausted })
}

/// Default block solver: backtracking (projected) gradient on the surrogate
/// `g_i(x) - <u, x> + rho/2 ||x - theta_i||^2`.
pub fn generic_surrogate<P: BdcProblem + ?Sized>(
    p: &P,
    block: usize,
    theta: &BlockVector,
    u: &[f64],
    rho: f64,
    opts: &InnerOptions,
) -> Result<InnerReport> {
    let center = theta.extract_block(block)?.to_vec();
    let domain = p.domain(block);
    let prox = match &domain {
        Domain::Unconstrained => Prox::None,
        Domain::Set(s) => Prox::Project(s.as_ref()),
    };
    let value = |x: &[f64]| {
        let w = theta.replace_block(block, x).expect("block length fixed");
        p.eval_g(block, &w) - dot(u, x) + 0.5 * rho * x.iter().zip(&center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>()
    };
    let grad = |x: &[f64]| {
        let w = theta.replace_block(block, x).expect("block length fixed");
        p.grad_g_block(block, &w)
            .iter()
            .zip(u)
            .zip(x.iter().zip(&center))
            .map(|((g, u), (a, c))| g - u + rho * (a - c))
            .collect::<Vec<_>>()
    };
    inner_prox_gradient(value, grad, prox, &center, opts, StepRule::Backtracking { initial: 1.0 })
}

/// Result of the dictionary-block Frank-Wolfe solve.
#[derive(Debug, Clone)]
pub struct FrankWolfeReport {
    pub d: DMatrix<f64>,
    pub iters: usize,
    pub gap_start: f64,
    pub gap_end: f64,
}

/// Frank-Wolfe on `1/2 ||Y - D X||^2 + rho/2 ||D - C||^2` over columns of `D`
/// in Euclidean balls of radius `radius`, with exact line search.
#[allow(clippy::too_many_arguments)]
pub fn inner_frank_wolfe_ball_product(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    rho: f64,
    center: &DMatrix<f64>,
    d0: DMatrix<f64>,
    radius: f64,
    budget: usize,
    tol_factor: f64,
) -> FrankWolfeReport {
    let ball = Ball { radius };
    let xxt = x * x.transpose();
    let yxt = y * x.transpose();
    let mut d = d0;
    let mut gap_start = f64::NAN;
    let mut gap = f64::NAN;
    let mut iters = 0;
    for it in 0..=budget {
        let grad = &d * &xxt - &yxt + (&d - center) * rho;
        let mut s = d.clone();
        for j in 0..d.ncols() {
            let col = ball.lmo(grad.column(j).as_slice(), d.column(j).as_slice());
            s.column_mut(j).copy_from_slice(&col);
        }
        let delta = &s - &d;
        gap = -grad.dot(&delta);
        if it == 0 {
            gap_start = gap;
        }
        let resid = y - &d * x;
        let obj = 0.5 * resid.norm_squared() + 0.5 * rho * (&d - center).norm_squared();
        if it == budget || gap <= tol_factor * (1.0 + obj) {
            break;
        }
        // column-wise sweep with exact line search; columns only couple through X X^T
        for j in 0..d.ncols() {
            let gj = &d * xxt.column(j) - yxt.column(j) + (d.column(j) - center.column(j)) * rho;
            let sj = ball.lmo(gj.as_slice(), d.column(j).as_slice());
            let dj = nalgebra::DVector::from_column_slice(&sj) - d.column(j);
            let gap_j = -gj.dot(&dj);
            let a = dj.norm_squared() * (xxt[(j, j)] + rho);
            if gap_j <= 0.0 || a <= 0.0 {
                continue;
            }
            let gamma = (gap_j / a).min(1.0);
            let mut col = d.column_mut(j);
            col += dj * gamma;
        }
        iters = it + 1;
    }
    FrankWolfeReport { d, iters, gap_start, gap_end: gap }
}

/// `||A||_2^2` from the smaller Gram matrix.
pub fn spectral_norm_sq(a: &DMatrix<f64>) -> f64 {
    if a.ncols() == 0 || a.nrows() == 0 {
        return 0.0;
    }
    let gram = if a.nrows() < a.ncols() { a * a.transpose() } else { a.transpose() * a };
    gram.symmetric_eigenvalues().max().max(0.0)
}
