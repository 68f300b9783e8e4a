//! Sparse dictionary learning
//!
//! ```text
//! min_{D in C, X} 1/2 ||Y - D X||_F^2 + alpha sum_i (||x_i||_1 - ||x_i||_Q)
//! ```
//!
//! with `C` the product of unit balls over dictionary columns. The `L1`
//! variant drops the largest-Q term. Blocks are ordered `(X, D)`, so a
//! cyclic sweep updates the codes first and the dictionary second.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::block::{BlockPartition, BlockVector};
use crate::error::{check_len, BdcError, Result};
use crate::model::{BdcProblem, Domain};
use crate::rng::substream;
use crate::sets::ColumnBalls;
use crate::solvers::inner::{
    inner_frank_wolfe_ball_product, inner_prox_gradient, spectral_norm_sq, InnerOptions, InnerReport, InnerStatus,
    Prox, StepRule,
};

pub const X_BLOCK: usize = 0;
pub const D_BLOCK: usize = 1;

/// Indices of the `q` largest magnitudes, ties to the lowest index.
fn top_q(x: &[f64], q: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[b].abs().total_cmp(&x[a].abs()).then(a.cmp(&b)));
    idx.truncate(q);
    idx
}

fn check_q(x: &[f64], q: usize) -> Result<()> {
    if q == 0 || q > x.len() {
        return Err(BdcError::InvalidArgument(format!("Q = {q} outside 1..={}", x.len())));
    }
    Ok(())
}

/// Sum of the `q` largest absolute entries.
pub fn lq_norm(x: &[f64], q: usize) -> Result<f64> {
    check_q(x, q)?;
    Ok(top_q(x, q).into_iter().map(|i| x[i].abs()).sum())
}

/// `sign(x_j)` on the selected top-Q set, zero elsewhere; a selected zero gets +1.
pub fn lq_subgrad(x: &[f64], q: usize) -> Result<Vec<f64>> {
    check_q(x, q)?;
    let mut u = vec![0.0; x.len()];
    for i in top_q(x, q) {
        u[i] = if x[i] < 0.0 { -1.0 } else { 1.0 };
    }
    Ok(u)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdlVariant {
    L1,
    L1MinusLq,
}

#[derive(Debug, Clone)]
pub struct SdlData {
    pub y: DMatrix<f64>,
    pub d_true: DMatrix<f64>,
    pub x_true: DMatrix<f64>,
}

fn normalize_columns(d: &mut DMatrix<f64>) {
    for mut c in d.column_iter_mut() {
        let n = c.norm();
        if n > 0.0 {
            c /= n;
        }
    }
}

/// `Y = D* X*` with unit-norm Gaussian dictionary columns and exactly
/// `k_nonzero` standard normal entries per code column.
pub fn sdl_synthetic(m: usize, l: usize, n: usize, k_nonzero: usize, seed: u64) -> Result<SdlData> {
    if k_nonzero > l {
        return Err(BdcError::InvalidArgument("k_nonzero exceeds the number of atoms".into()));
    }
    let mut rng = substream(seed, "data");
    let mut d_true = DMatrix::from_fn(m, l, |_, _| rng.sample::<f64, _>(StandardNormal));
    normalize_columns(&mut d_true);
    let mut x_true = DMatrix::zeros(l, n);
    for j in 0..n {
        for i in sample(&mut rng, l, k_nonzero).into_iter() {
            x_true[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    let y = &d_true * &x_true;
    Ok(SdlData { y, d_true, x_true })
}

/// Random unit-column dictionary and zero codes.
pub fn sdl_init(m: usize, l: usize, n: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut rng = substream(seed, "init");
    let mut d = DMatrix::from_fn(m, l, |_, _| rng.sample::<f64, _>(StandardNormal));
    normalize_columns(&mut d);
    (d, DMatrix::zeros(l, n))
}

#[derive(Debug, Clone)]
pub struct SdlProblem {
    y: DMatrix<f64>,
    atoms: usize,
    alpha: f64,
    q: usize,
    variant: SdlVariant,
    partition: Arc<BlockPartition>,
    balls: Arc<ColumnBalls>,
    /// Frank-Wolfe stopping factor on the duality gap.
    pub fw_tol: f64,
}

impl SdlProblem {
    pub fn new(y: DMatrix<f64>, atoms: usize, alpha: f64, q: usize, variant: SdlVariant) -> Result<Self> {
        let (m, n) = y.shape();
        if atoms == 0 || m == 0 || n == 0 {
            return Err(BdcError::InvalidArgument("empty SDL instance".into()));
        }
        if alpha < 0.0 {
            return Err(BdcError::InvalidArgument("alpha must be nonnegative".into()));
        }
        if variant == SdlVariant::L1MinusLq && (q == 0 || q > atoms) {
            return Err(BdcError::InvalidArgument(format!("Q = {q} outside 1..={atoms}")));
        }
        let partition = Arc::new(BlockPartition::new(vec![atoms * n, m * atoms])?);
        let balls = Arc::new(ColumnBalls { rows: m, cols: atoms, radius: 1.0 });
        Ok(Self { y, atoms, alpha, q, variant, partition, balls, fw_tol: 1e-10 })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.y.nrows(), self.atoms, self.y.ncols())
    }

    pub fn pack(&self, d: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<BlockVector> {
        let (m, l, n) = self.dims();
        check_len(m * l, d.len())?;
        check_len(l * n, x.len())?;
        let mut data = x.as_slice().to_vec();
        data.extend_from_slice(d.as_slice());
        BlockVector::new(self.partition.clone(), data)
    }

    pub fn codes(&self, theta: &BlockVector) -> DMatrix<f64> {
        let (_, l, n) = self.dims();
        DMatrix::from_column_slice(l, n, theta.block(X_BLOCK))
    }

    pub fn dictionary(&self, theta: &BlockVector) -> DMatrix<f64> {
        let (m, l, _) = self.dims();
        DMatrix::from_column_slice(m, l, theta.block(D_BLOCK))
    }

    /// `||Y - D X||_F^2`.
    pub fn reconstruction_error(&self, theta: &BlockVector) -> f64 {
        (&self.y - self.dictionary(theta) * self.codes(theta)).norm_squared()
    }

    fn penalty(&self, x: &DMatrix<f64>) -> f64 {
        let l1: f64 = x.iter().map(|v| v.abs()).sum();
        self.alpha * (l1 - self.lq_total(x))
    }

    fn lq_total(&self, x: &DMatrix<f64>) -> f64 {
        match self.variant {
            SdlVariant::L1 => 0.0,
            SdlVariant::L1MinusLq => x.column_iter().map(|c| lq_norm(c.as_slice(), self.q).expect("Q checked")).sum(),
        }
    }

    fn smooth_grad_x(&self, theta: &BlockVector) -> DMatrix<f64> {
        let d = self.dictionary(theta);
        d.transpose() * (&d * self.codes(theta) - &self.y)
    }
}

/// Fraction of exact zeros (or entries at most `threshold` in magnitude).
pub fn sparsity(x: &DMatrix<f64>, threshold: f64) -> f64 {
    x.iter().filter(|v| v.abs() <= threshold).count() as f64 / x.len() as f64
}

impl BdcProblem for SdlProblem {
    fn partition(&self) -> &Arc<BlockPartition> {
        &self.partition
    }

    fn domain(&self, block: usize) -> Domain {
        if block == D_BLOCK {
            Domain::Set(self.balls.clone())
        } else {
            Domain::Unconstrained
        }
    }

    fn eval_f(&self, theta: &BlockVector) -> f64 {
        0.5 * self.reconstruction_error(theta) + self.penalty(&self.codes(theta))
    }

    fn eval_g(&self, block: usize, theta: &BlockVector) -> f64 {
        let x = self.codes(theta);
        let fit = 0.5 * self.reconstruction_error(theta);
        if block == X_BLOCK {
            fit + self.alpha * x.iter().map(|v| v.abs()).sum::<f64>()
        } else {
            // the code penalty is constant in D and rides along in g
            fit + self.penalty(&x)
        }
    }

    fn eval_h(&self, block: usize, theta: &BlockVector) -> f64 {
        if block == X_BLOCK {
            self.alpha * self.lq_total(&self.codes(theta))
        } else {
            0.0
        }
    }

    fn grad_g_block(&self, block: usize, theta: &BlockVector) -> Vec<f64> {
        if block == X_BLOCK {
            let x = self.codes(theta);
            let g = self.smooth_grad_x(theta) + x.map(|v| if v == 0.0 { 0.0 } else { self.alpha * v.signum() });
            g.as_slice().to_vec()
        } else {
            let x = self.codes(theta);
            ((self.dictionary(theta) * &x - &self.y) * x.transpose()).as_slice().to_vec()
        }
    }

    fn subgrad_h_block(&self, block: usize, theta: &BlockVector) -> Vec<f64> {
        let dim = self.partition.block_dims()[block];
        if block == D_BLOCK || self.variant == SdlVariant::L1 {
            return vec![0.0; dim];
        }
        let x = self.codes(theta);
        let mut u = Vec::with_capacity(dim);
        for c in x.column_iter() {
            u.extend(lq_subgrad(c.as_slice(), self.q).expect("Q checked").into_iter().map(|s| self.alpha * s));
        }
        u
    }

    /// On zero codes the l1 subgradient is chosen to minimise the residual.
    fn block_residual(&self, block: usize, theta: &BlockVector) -> Vec<f64> {
        if block == D_BLOCK {
            return self.grad_g_block(block, theta);
        }
        let x = theta.block(X_BLOCK);
        let smooth = self.smooth_grad_x(theta);
        let u = self.subgrad_h_block(block, theta);
        x.iter()
            .zip(smooth.iter())
            .zip(&u)
            .map(|((&xj, &s), &uj)| {
                let t = if xj != 0.0 {
                    xj.signum()
                } else if self.alpha > 0.0 {
                    ((uj - s) / self.alpha).clamp(-1.0, 1.0)
                } else {
                    0.0
                };
                s + self.alpha * t - uj
            })
            .collect()
    }

    fn solve_surrogate(
        &self,
        block: usize,
        theta: &BlockVector,
        u: &[f64],
        rho: f64,
        opts: &InnerOptions,
    ) -> Result<InnerReport> {
        let (m, l, n) = self.dims();
        let d = self.dictionary(theta);
        if block == X_BLOCK {
            let dtd = d.transpose() * &d;
            let dty = d.transpose() * &self.y;
            let yy = 0.5 * self.y.norm_squared();
            let center = theta.block(X_BLOCK).to_vec();
            let quad = |x: &DMatrix<f64>| {
                let gx = &dtd * x;
                (0.5 * x.dot(&gx) - x.dot(&dty) + yy, gx)
            };
            let value = |v: &[f64]| {
                let x = DMatrix::from_column_slice(l, n, v);
                let lin: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
                let prox: f64 = v.iter().zip(&center).map(|(a, c)| (a - c) * (a - c)).sum();
                quad(&x).0 - lin + 0.5 * rho * prox
            };
            let grad = |v: &[f64]| {
                let x = DMatrix::from_column_slice(l, n, v);
                let (_, gx) = quad(&x);
                (gx - &dty)
                    .iter()
                    .zip(u)
                    .zip(v.iter().zip(&center))
                    .map(|((g, u), (a, c))| g - u + rho * (a - c))
                    .collect()
            };
            let lip = spectral_norm_sq(&d) + rho;
            if lip == 0.0 {
                // D = 0 and rho = 0: only the l1 and linear terms remain
                return Ok(InnerReport { x: center, iters: 0, status: InnerStatus::Stalled });
            }
            inner_prox_gradient(
                value,
                grad,
                Prox::L1 { weight: self.alpha },
                &center,
                opts,
                StepRule::Fixed { lipschitz: lip },
            )
        } else {
            if u.iter().any(|&v| v != 0.0) {
                return Err(BdcError::InvalidArgument("dictionary block has h = 0".into()));
            }
            let x = self.codes(theta);
            let fw = inner_frank_wolfe_ball_product(&self.y, &x, rho, &d, d.clone(), 1.0, opts.budget, self.fw_tol);
            let _ = m;
            Ok(InnerReport { x: fw.d.as_slice().to_vec(), iters: fw.iters.max(1), status: InnerStatus::Converged })
        }
    }
}

/// One row of the joint gradient baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GdRecord {
    pub iter: usize,
    pub objective: f64,
    pub step: f64,
}

/// Joint full-batch (sub)gradient descent on `(D, X)` with step
/// `1 / (||D||_2^2 + ||X||_2^2)` and column projection of `D`.
pub fn gd_baseline_sdl(
    p: &SdlProblem,
    d0: DMatrix<f64>,
    x0: DMatrix<f64>,
    iters: usize,
) -> Result<(Vec<GdRecord>, BlockVector)> {
    let mut theta = p.pack(&d0, &x0)?;
    let mut out = Vec::with_capacity(iters);
    for iter in 0..iters {
        let d = p.dictionary(&theta);
        let x = p.codes(&theta);
        let denom = spectral_norm_sq(&d) + spectral_norm_sq(&x);
        let eta = if denom > 0.0 { 1.0 / denom } else { 0.0 };
        let gx = DMatrix::from_column_slice(x.nrows(), x.ncols(), &p.grad_g_block(X_BLOCK, &theta))
            - DMatrix::from_column_slice(x.nrows(), x.ncols(), &p.subgrad_h_block(X_BLOCK, &theta));
        let gd = DMatrix::from_column_slice(d.nrows(), d.ncols(), &p.grad_g_block(D_BLOCK, &theta));
        let xn = &x - gx * eta;
        let mut dn = &d - gd * eta;
        normalize_over(&mut dn);
        theta = p.pack(&dn, &xn)?;
        out.push(GdRecord { iter, objective: p.eval_f(&theta), step: eta });
    }
    Ok((out, theta))
}

fn normalize_over(d: &mut DMatrix<f64>) {
    for mut c in d.column_iter_mut() {
        let n = c.norm();
        if n > 1.0 {
            c /= n;
        }
    }
}
