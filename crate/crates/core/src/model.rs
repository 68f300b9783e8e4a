//! The multi-block DC capability and the constructions that preserve it.
//!
//! A problem exposes, for every block `i`, a split `f = g_i - h_i` where both
//! parts are convex in block `i` once the other blocks are frozen. Solvers only
//! talk to problems through [`BdcProblem`].

use std::sync::Arc;

use crate::block::{norm2, BlockPartition, BlockVector};
use crate::error::{check_len, BdcError, Result};
use crate::sets::ConvexSet;
use crate::solvers::inner::{generic_surrogate, InnerOptions, InnerReport};

/// Feasible set of one block.
#[derive(Debug, Clone, Default)]
pub enum Domain {
    #[default]
    Unconstrained,
    Set(Arc<dyn ConvexSet>),
}

impl Domain {
    pub fn project(&self, x: &mut [f64]) {
        if let Domain::Set(s) = self {
            s.project(x);
        }
    }
}

pub trait BdcProblem: Send + Sync {
    fn partition(&self) -> &Arc<BlockPartition>;

    fn n_blocks(&self) -> usize {
        self.partition().n_blocks()
    }

    fn domain(&self, _block: usize) -> Domain {
        Domain::Unconstrained
    }

    fn eval_f(&self, theta: &BlockVector) -> f64;

    fn eval_g(&self, block: usize, theta: &BlockVector) -> f64;

    fn eval_h(&self, block: usize, theta: &BlockVector) -> f64;

    /// A (sub)gradient of `g_block` with respect to the block.
    fn grad_g_block(&self, block: usize, theta: &BlockVector) -> Vec<f64>;

    /// One deterministic element of the block subdifferential of `h_block`.
    fn subgrad_h_block(&self, block: usize, theta: &BlockVector) -> Vec<f64>;

    /// The stationarity vector `z_i = s_i - u_i` with `s_i` a subgradient of
    /// `g_i` and `u_i = subgrad_h_block(i)`. Problems whose `g_i` carries a
    /// nonsmooth term may pick the element of smallest norm.
    fn block_residual(&self, block: usize, theta: &BlockVector) -> Vec<f64> {
        let g = self.grad_g_block(block, theta);
        let u = self.subgrad_h_block(block, theta);
        g.iter().zip(&u).map(|(a, b)| a - b).collect()
    }

    /// Approximately minimise `g_i(x) - <u, x> + rho/2 ||x - theta_i||^2`
    /// over the block domain. The returned point never has a larger surrogate
    /// value than `theta_i`.
    fn solve_surrogate(
        &self,
        block: usize,
        theta: &BlockVector,
        u: &[f64],
        rho: f64,
        opts: &InnerOptions,
    ) -> Result<InnerReport> {
        generic_surrogate(self, block, theta, u, rho, opts)
    }
}

/// Identifies one stochastic draw. Evaluations through the same handle are
/// replayable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleHandle {
    pub id: u64,
    pub indices: Vec<usize>,
}

impl SampleHandle {
    /// Batch of `batch` indices drawn uniformly with replacement.
    pub fn draw<R: rand::Rng>(id: u64, population: usize, batch: usize, rng: &mut R) -> Self {
        let indices = (0..batch).map(|_| rng.random_range(0..population)).collect();
        Self { id, indices }
    }

    pub fn full(population: usize) -> Self {
        Self { id: u64::MAX, indices: (0..population).collect() }
    }
}

/// Problems of the form `f = E_s[g_i(.; s) - h_i(.; s)]` with minibatch views.
pub trait StochasticBdc: BdcProblem {
    fn population(&self) -> usize;

    /// The problem restricted to the draw; its `f`, `g`, `h` and derivatives
    /// are unbiased estimates of the full ones.
    fn sampled<'a>(&'a self, handle: &SampleHandle) -> Box<dyn BdcProblem + 'a>;
}

/// `||stack_i z_i||`, an upper bound on the Clarke residual.
pub fn residual_upper<P: BdcProblem + ?Sized>(p: &P, theta: &BlockVector) -> f64 {
    (0..p.n_blocks())
        .map(|i| {
            let z = p.block_residual(i, theta);
            z.iter().map(|v| v * v).sum::<f64>()
        })
        .sum::<f64>()
        .sqrt()
}

/// Value of the block surrogate `g_i(x) - <u, x> + rho/2 ||x - theta_i||^2`.
pub fn surrogate_value<P: BdcProblem + ?Sized>(
    p: &P,
    block: usize,
    theta: &BlockVector,
    x: &[f64],
    u: &[f64],
    rho: f64,
) -> Result<f64> {
    let work = theta.replace_block(block, x)?;
    let center = theta.block(block);
    let lin: f64 = u.iter().zip(x).map(|(a, b)| a * b).sum();
    let prox: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
    Ok(p.eval_g(block, &work) - lin + 0.5 * rho * prox)
}

fn shared_partition(problems: &[Arc<dyn BdcProblem>]) -> Result<Arc<BlockPartition>> {
    let first =
        problems.first().ok_or_else(|| BdcError::InvalidArgument("empty problem list".into()))?.partition().clone();
    if problems.iter().any(|p| **p.partition() != *first) {
        return Err(BdcError::PartitionMismatch);
    }
    Ok(first)
}

fn axpy(acc: &mut [f64], a: f64, x: &[f64]) {
    if a != 0.0 {
        acc.iter_mut().zip(x).for_each(|(y, v)| *y += a * v);
    }
}

/// `sum_r alpha_r f_r` with the sign-split decomposition.
pub struct LinearCombination {
    partition: Arc<BlockPartition>,
    terms: Vec<(f64, Arc<dyn BdcProblem>)>,
}

pub fn combine_linear(problems: Vec<Arc<dyn BdcProblem>>, alpha: &[f64]) -> Result<LinearCombination> {
    check_len(problems.len(), alpha.len())?;
    let partition = shared_partition(&problems)?;
    Ok(LinearCombination { partition, terms: alpha.iter().copied().zip(problems).collect() })
}

impl BdcProblem for LinearCombination {
    fn partition(&self) -> &Arc<BlockPartition> {
        &self.partition
    }

    fn domain(&self, block: usize) -> Domain {
        self.terms[0].1.domain(block)
    }

    fn eval_f(&self, theta: &BlockVector) -> f64 {
        self.terms.iter().map(|(a, p)| a * p.eval_f(theta)).sum()
    }

    fn eval_g(&self, block: usize, theta: &BlockVector) -> f64 {
        self.terms
            .iter()
            .map(|(a, p)| if *a >= 0.0 { a * p.eval_g(block, theta) } else { -a * p.eval_h(block, theta) })
            .sum()
    }

    fn eval_h(&self, block: usize, theta: &BlockVector) -> f64 {
        self.terms
            .iter()
            .map(|(a, p)| if *a >= 0.0 { a * p.eval_h(block, theta) } else { -a * p.eval_g(block, theta) })
            .sum()
    }

    fn grad_g_block(&self, block: usize, theta: &BlockVector) -> Vec<f64> {
        let mut out = vec![0.0; self.partition.block_dims()[block]];
        for (a, p) in &self.terms {
            if *a >= 0.0 {
                axpy(&mut out, *a, &p.grad_g_block(block, theta));
            } else {
                axpy(&mut out, -a, &p.subgrad_h_block(block, theta));
            }
        }
        out
    }

    fn subgrad_h_block(&self, block: usize, theta: &BlockVector) -> Vec<f64> {
        let mut out = vec![0.0; self.partition.block_dims()[block]];
        for (a, p) in &self.terms {
            if *a >= 0.0 {
                axpy(&mut out, *a, &p.subgrad_h_block(block, theta));
            } else {
                axpy(&mut out, -a, &p.grad_g_block(block, theta));
            }
        }
        out
    }
}

/// Pointwise maximum: `g_i = max_r (g_r + sum_{s != r} h_s)`, `h_i = sum_k h_k`.
pub struct PointwiseMax {
    partition: Arc<BlockPartition>,
    parts: Vec<Arc<dyn BdcProblem>>,
}

pub fn combine_max(problems: Vec<Arc<dyn BdcProblem>>) -> Result<PointwiseMax> {
    let partition = shared_partition(&problems)?;
    Ok(PointwiseMax { partition, parts: problems })
}

/// `min_r f_r = -max_r(-f_r)`.
pub fn combine_min(problems: Vec<Arc<dyn BdcProblem>>) -> Result<LinearCombination> {
    let negated = problems
        .into_iter()
        .map(|p| Ok(Arc::new(combine_linear(vec![p], &[-1.0])?) as Arc<dyn BdcProblem>))
        .collect::<Result<Vec<_>>>()?;
    let max = Arc::new(combine_max(negated)?) as Arc<dyn BdcProblem>;
    combine_linear(vec![max], &[-1.0])
}

impl PointwiseMax {
    /// Branch values `g_r + sum_{s != r} h_s`, the total `sum h`, and the
    /// individual `h_r`.
    fn branches(&self, block: usize, theta: &BlockVector) -> (Vec<f64>, f64, Vec<f64>) {
        let gs: Vec<f64> = self.parts.iter().map(|p| p.eval_g(block, theta)).collect();
        let hs: Vec<f64> = self.parts.iter().map(|p| p.eval_h(block, theta)).collect();
        let total: f64 = hs.iter().sum();
        let br = gs.iter().zip(&hs).map(|(g, h)| g + (total - h)).collect();
        (br, total, hs)
    }

    fn active(values: &[f64]) -> usize {
        let mut best = 0;
        for (k, v) in values.iter().enumerate() {
            if *v > values[best] {
                best = k;
            }
        }
        best
    }
}

impl BdcProblem for PointwiseMax {
    fn partition(&self) -> &Arc<BlockPartition> {
        &self.partition
    }

    fn domain(&self, block: usize) -> Domain {
        self.parts[0].domain(block)
    }

    fn eval_f(&self, theta: &BlockVector) -> f64 {
        self.parts.iter().map(|p| p.eval_f(theta)).fold(f64::NEG_INFINITY, f64::max)
    }

    fn eval_g(&self, block: usize, theta: &BlockVector) -> f64 {
        let (br, _, _) = self.branches(block, theta);
        br.into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    fn eval_h(&self, block: usize, theta: &BlockVector) -> f64 {
        self.parts.iter().map(|p| p.eval_h(block, theta)).sum()
    }

    fn grad_g_block(&self, block: usize, theta: &BlockVector) -> Vec<f64> {
        let (br, _, _) = self.branches(block, theta);
        let r = Self::active(&br);
        let mut out = self.parts[r].grad_g_block(block, theta);
        for (s, p) in self.parts.iter().enumerate() {
            if s != r {
                axpy(&mut out, 1.0, &p.subgrad_h_block(block, theta));
            }
        }
        out
    }

    fn subgrad_h_block(&self, block: usize, theta: &BlockVector) -> Vec<f64> {
        let mut out = vec![0.0; self.partition.block_dims()[block]];
        for p in &self.parts {
            axpy(&mut out, 1.0, &p.subgrad_h_block(block, theta));
        }
        out
    }
}

/// A vector map `E(theta)` with, for every block `i`, a split `E = a_i - b_i`
/// whose components are convex in block `i`.
pub trait SplitMap: Send + Sync {
    fn partition(&self) -> &Arc<BlockPartition>;

    fn out_dim(&self) -> usize;

    fn split(&self, block: usize, theta: &BlockVector) -> (Vec<f64>, Vec<f64>);

    /// `sum_j wa_j da_j + wb_j db_j` with respect to the block. Callers only
    /// pass nonnegative weights, so any subgradient selection is valid.
    fn split_vjp(&self, block: usize, theta: &BlockVector, wa: &[f64], wb: &[f64]) -> Vec<f64>;
}

/// `f*(t) = max_{u in U} <u, t> - f(u)` together with a maximiser.
pub trait ConjugateOracle: Send + Sync {
    fn value(&self, t: &[f64]) -> f64;
    fn maximizer(&self, t: &[f64]) -> Vec<f64>;
}

/// Log-sum-exp, the conjugate of negative entropy on the simplex.
#[derive(Debug, Clone, Copy, Default)]
pub struct LogSumExp;

impl ConjugateOracle for LogSumExp {
    fn value(&self, t: &[f64]) -> f64 {
        log_sum_exp(t)
    }

    fn maximizer(&self, t: &[f64]) -> Vec<f64> {
        softmax(t)
    }
}

impl LogSumExp {
    /// Coordinate bounds of the simplex.
    pub fn bounds(dim: usize) -> Vec<(f64, f64)> {
        vec![(0.0, 1.0); dim]
    }
}

/// Conjugate over a singleton `U = {u0}` with `f(u0) = offset`: `<u0, t> - offset`.
#[derive(Debug, Clone)]
pub struct SingletonConjugate {
    pub point: Vec<f64>,
    pub offset: f64,
}

impl ConjugateOracle for SingletonConjugate {
    fn value(&self, t: &[f64]) -> f64 {
        self.point.iter().zip(t).map(|(u, x)| u * x).sum::<f64>() - self.offset
    }

    fn maximizer(&self, _t: &[f64]) -> Vec<f64> {
        self.point.clone()
    }
}

pub fn log_sum_exp(t: &[f64]) -> f64 {
    let m = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + t.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(t: &[f64]) -> Vec<f64> {
    let m = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = t.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `f* o E` with `h_i = <c+, a_i> + <d+, b_i>` and `g_i = f*(E) + h_i`.
pub struct ConjugateComposite {
    map: Arc<dyn SplitMap>,
    conjugate: Arc<dyn ConjugateOracle>,
    c_plus: Vec<f64>,
    d_plus: Vec<f64>,
}

pub fn conjugate_compose(
    map: Arc<dyn SplitMap>,
    conjugate: Arc<dyn ConjugateOracle>,
    u_bounds: &[(f64, f64)],
) -> Result<ConjugateComposite> {
    check_len(map.out_dim(), u_bounds.len())?;
    if u_bounds.iter().any(|(lo, hi)| !lo.is_finite() || !hi.is_finite() || lo > hi) {
        return Err(BdcError::InvalidArgument("conjugate domain bounds must be finite".into()));
    }
    let c_plus = u_bounds.iter().map(|(lo, _)| (-lo).max(0.0)).collect();
    let d_plus = u_bounds.iter().map(|(_, hi)| hi.max(0.0)).collect();
    Ok(ConjugateComposite { map, conjugate, c_plus, d_plus })
}

impl ConjugateComposite {
    pub fn c_plus(&self) -> &[f64] {
        &self.c_plus
    }

    pub fn d_plus(&self) -> &[f64] {
        &self.d_plus
    }

    fn parts(&self, block: usize, theta: &BlockVector) -> (Vec<f64>, f64) {
        let (a, b) = self.map.split(block, theta);
        let e: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let h = self.c_plus.iter().zip(&a).map(|(c, x)| c * x).sum::<f64>()
            + self.d_plus.iter().zip(&b).map(|(d, y)| d * y).sum::<f64>();
        (e, h)
    }
}

impl BdcProblem for ConjugateComposite {
    fn partition(&self) -> &Arc<BlockPartition> {
        self.map.partition()
    }

    fn eval_f(&self, theta: &BlockVector) -> f64 {
        let (e, _) = self.parts(0, theta);
        self.conjugate.value(&e)
    }

    fn eval_g(&self, block: usize, theta: &BlockVector) -> f64 {
        let (e, h) = self.parts(block, theta);
        self.conjugate.value(&e) + h
    }

    fn eval_h(&self, block: usize, theta: &BlockVector) -> f64 {
        self.parts(block, theta).1
    }

    fn grad_g_block(&self, block: usize, theta: &BlockVector) -> Vec<f64> {
        let (e, _) = self.parts(block, theta);
        let u = self.conjugate.maximizer(&e);
        let wa: Vec<f64> = u.iter().zip(&self.c_plus).map(|(u, c)| u + c).collect();
        let wb: Vec<f64> = u.iter().zip(&self.d_plus).map(|(u, d)| d - u).collect();
        self.map.split_vjp(block, theta, &wa, &wb)
    }

    fn subgrad_h_block(&self, block: usize, theta: &BlockVector) -> Vec<f64> {
        self.map.split_vjp(block, theta, &self.c_plus, &self.d_plus)
    }
}

/// Norm of the difference of two equally sized slices.
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    norm2(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>())
}
