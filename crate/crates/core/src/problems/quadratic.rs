//! Smooth-minus-polyhedral test problems.
//!
//! `f(theta) = 1/2 theta^T Q theta + c^T theta - sum_j w_j |a_j^T theta + beta_j|`
//! with `Q` positive definite and `w_j >= 0`. Every block uses the same split
//! (g the quadratic, h the polyhedral part), so g is `L`-smooth in each block
//! and h is Lipschitz.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::block::{BlockPartition, BlockVector};
use crate::error::{check_len, Result};
use crate::model::BdcProblem;
use crate::rng::substream;
use crate::solvers::inner::{InnerOptions, InnerReport, InnerStatus};

#[derive(Debug, Clone)]
pub struct PiecewiseQuadratic {
    partition: Arc<BlockPartition>,
    q: DMatrix<f64>,
    c: DVector<f64>,
    /// One row per polyhedral piece.
    a: DMatrix<f64>,
    beta: DVector<f64>,
    w: DVector<f64>,
}

impl PiecewiseQuadratic {
    pub fn new(
        block_dims: Vec<usize>,
        q: DMatrix<f64>,
        c: DVector<f64>,
        a: DMatrix<f64>,
        beta: DVector<f64>,
        w: DVector<f64>,
    ) -> Result<Self> {
        let partition = Arc::new(BlockPartition::new(block_dims)?);
        let d = partition.total_dim();
        check_len(d, q.nrows())?;
        check_len(d, q.ncols())?;
        check_len(d, c.len())?;
        check_len(d, a.ncols())?;
        check_len(a.nrows(), beta.len())?;
        check_len(a.nrows(), w.len())?;
        Ok(Self { partition, q, c, a, beta, w })
    }

    /// Random instance with `Q = M^T M / d + I` and `pieces` absolute-value terms.
    pub fn random(block_dims: &[usize], pieces: usize, seed: u64) -> Result<Self> {
        let d: usize = block_dims.iter().sum();
        let mut rng = substream(seed, "data");
        let mut normal = || rng.sample::<f64, _>(StandardNormal);
        let m = DMatrix::from_fn(d, d, |_, _| normal());
        let q = m.transpose() * &m / d as f64 + DMatrix::identity(d, d);
        let c = DVector::from_fn(d, |_, _| normal());
        let a = DMatrix::from_fn(pieces, d, |_, _| normal());
        let beta = DVector::from_fn(pieces, |_, _| normal());
        let w = DVector::from_fn(pieces, |_, _| normal().abs());
        Self::new(block_dims.to_vec(), q, c, a, beta, w)
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// Largest eigenvalue of each diagonal block of `Q`.
    pub fn block_lipschitz(&self) -> Vec<f64> {
        (0..self.partition.n_blocks())
            .map(|i| {
                let r = self.partition.range(i).expect("valid block");
                let qi = self.q.view((r.start, r.start), (r.len(), r.len())).into_owned();
                qi.symmetric_eigenvalues().max()
            })
            .collect()
    }

    fn quad(&self, theta: &BlockVector) -> f64 {
        let t = DVector::from_column_slice(theta.data());
        0.5 * t.dot(&(&self.q * &t)) + self.c.dot(&t)
    }

    fn poly(&self, theta: &BlockVector) -> f64 {
        let t = DVector::from_column_slice(theta.data());
        let s = &self.a * t + &self.beta;
        s.iter().zip(self.w.iter()).map(|(v, w)| w * v.abs()).sum()
    }

    pub fn full_gradient_of_g(&self, theta: &BlockVector) -> Vec<f64> {
        let t = DVector::from_column_slice(theta.data());
        (&self.q * t + &self.c).as_slice().to_vec()
    }
}

impl BdcProblem for PiecewiseQuadratic {
    fn partition(&self) -> &Arc<BlockPartition> {
        &self.partition
    }

    fn eval_f(&self, theta: &BlockVector) -> f64 {
        self.quad(theta) - self.poly(theta)
    }

    fn eval_g(&self, _block: usize, theta: &BlockVector) -> f64 {
        self.quad(theta)
    }

    fn eval_h(&self, _block: usize, theta: &BlockVector) -> f64 {
        self.poly(theta)
    }

    fn grad_g_block(&self, block: usize, theta: &BlockVector) -> Vec<f64> {
        let r = self.partition.range(block).expect("valid block");
        self.full_gradient_of_g(theta)[r].to_vec()
    }

    /// `sum_j w_j sign(a_j^T theta + beta_j) a_j` restricted to the block, with sign(0) = +1.
    fn subgrad_h_block(&self, block: usize, theta: &BlockVector) -> Vec<f64> {
        let r = self.partition.range(block).expect("valid block");
        let t = DVector::from_column_slice(theta.data());
        let s = &self.a * t + &self.beta;
        let mut out = vec![0.0; r.len()];
        for j in 0..self.a.nrows() {
            let sign = if s[j] >= 0.0 { 1.0 } else { -1.0 };
            for (o, col) in out.iter_mut().zip(r.clone()) {
                *o += self.w[j] * sign * self.a[(j, col)];
            }
        }
        out
    }

    fn solve_surrogate(
        &self,
        block: usize,
        theta: &BlockVector,
        u: &[f64],
        rho: f64,
        _opts: &InnerOptions,
    ) -> Result<InnerReport> {
        let r = self.partition.range(block)?;
        let n = r.len();
        let t = DVector::from_column_slice(theta.data());
        let own = DVector::from_column_slice(&theta.data()[r.clone()]);
        // Q_{i,.} theta without the diagonal block contribution
        let cross = self.q.rows(r.start, n) * &t - self.q.view((r.start, r.start), (n, n)) * &own;
        let lhs = self.q.view((r.start, r.start), (n, n)) + DMatrix::identity(n, n) * rho;
        let rhs = DVector::from_column_slice(u) - self.c.rows(r.start, n) - cross + own * rho;
        let x = lhs.cholesky().expect("diagonal block of Q is positive definite").solve(&rhs);
        Ok(InnerReport { x: x.as_slice().to_vec(), iters: 1, status: InnerStatus::ClosedForm })
    }
}
