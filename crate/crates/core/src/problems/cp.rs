//! Canonical polyadic decomposition by alternating least squares.
//!
//! `f(theta) = 1/2 ||T - [[theta_1, ..., theta_n]]||_F^2`, one factor per
//! block. Each block is a linear least-squares problem, so `h = 0` and the
//! block step has a closed form.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::block::{BlockPartition, BlockVector};
use crate::error::{check_len, BdcError, Result};
use crate::model::BdcProblem;
use crate::rng::substream;
use crate::solvers::inner::{InnerOptions, InnerReport, InnerStatus};

const MAX_ORDER: usize = 4;
const MAX_DIM: usize = 32;

/// Dense tensor, first mode varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_ORDER || dims.iter().any(|&m| m == 0 || m > MAX_DIM) {
            return Err(BdcError::InvalidArgument(format!(
                "tensor dims {dims:?} outside order 1..={MAX_ORDER}, sizes 1..={MAX_DIM}"
            )));
        }
        check_len(dims.iter().product(), data.len())?;
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `[[A_1, ..., A_n]]` for factor matrices with a shared column count.
    pub fn from_factors(factors: &[DMatrix<f64>]) -> Result<Self> {
        let r = factors.first().map_or(0, |f| f.ncols());
        if factors.iter().any(|f| f.ncols() != r) {
            return Err(BdcError::InvalidArgument("factor ranks differ".into()));
        }
        let dims: Vec<usize> = factors.iter().map(|f| f.nrows()).collect();
        let total: usize = dims.iter().product();
        let mut data = vec![0.0; total];
        let mut idx = vec![0usize; dims.len()];
        for v in data.iter_mut() {
            *v = (0..r).map(|c| factors.iter().zip(&idx).map(|(f, &i)| f[(i, c)]).product::<f64>()).sum();
            advance(&mut idx, &dims);
        }
        Self::new(dims, data)
    }
}

fn advance(idx: &mut [usize], dims: &[usize]) {
    for (i, d) in idx.iter_mut().zip(dims) {
        *i += 1;
        if *i < *d {
            return;
        }
        *i = 0;
    }
}

/// Exact rank-`r` tensor from Gaussian factors, plus the factors.
pub fn cp_random_tensor(dims: &[usize], r: usize, seed: u64) -> Result<(DenseTensor, Vec<DMatrix<f64>>)> {
    let mut rng = substream(seed, "data");
    let factors: Vec<DMatrix<f64>> =
        dims.iter().map(|&m| DMatrix::from_fn(m, r, |_, _| rng.sample::<f64, _>(StandardNormal))).collect();
    Ok((DenseTensor::from_factors(&factors)?, factors))
}

#[derive(Debug, Clone)]
pub struct CpProblem {
    tensor: DenseTensor,
    rank: usize,
    partition: Arc<BlockPartition>,
}

impl CpProblem {
    pub fn new(tensor: DenseTensor, rank: usize) -> Result<Self> {
        if rank == 0 {
            return Err(BdcError::InvalidArgument("rank must be positive".into()));
        }
        let partition = Arc::new(BlockPartition::new(tensor.dims.iter().map(|m| m * rank).collect())?);
        Ok(Self { tensor, rank, partition })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn tensor(&self) -> &DenseTensor {
        &self.tensor
    }

    /// Gaussian factors scaled so the initial model has the tensor's magnitude.
    pub fn init(&self, seed: u64) -> BlockVector {
        let mut rng = substream(seed, "init");
        let n = self.tensor.dims.len() as f64;
        let scale = (self.tensor.norm() / (self.rank as f64).sqrt()).max(1e-12).powf(1.0 / n)
            / self.tensor.dims.iter().map(|&m| (m as f64).sqrt()).product::<f64>().powf(1.0 / n);
        let data = (0..self.partition.total_dim()).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        BlockVector::new(self.partition.clone(), data).expect("sized by partition")
    }

    pub fn factors(&self, theta: &BlockVector) -> Vec<DMatrix<f64>> {
        self.tensor
            .dims
            .iter()
            .enumerate()
            .map(|(i, &m)| DMatrix::from_column_slice(m, self.rank, theta.block(i)))
            .collect()
    }

    pub fn reconstruct(&self, theta: &BlockVector) -> DenseTensor {
        DenseTensor::from_factors(&self.factors(theta)).expect("factors match the tensor")
    }

    /// `||T - [[theta]]|| / ||T||`, or the absolute error for a zero tensor.
    pub fn relative_error(&self, theta: &BlockVector) -> f64 {
        let rec = self.reconstruct(theta);
        let err = rec.data.iter().zip(&self.tensor.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let n = self.tensor.norm();
        if n > 0.0 {
            err / n
        } else {
            err
        }
    }

    /// Tensor times the Khatri-Rao product of every factor except `mode`.
    fn mttkrp(&self, factors: &[DMatrix<f64>], mode: usize) -> DMatrix<f64> {
        let dims = &self.tensor.dims;
        let mut out = DMatrix::zeros(dims[mode], self.rank);
        let mut idx = vec![0usize; dims.len()];
        for &t in &self.tensor.data {
            if t != 0.0 {
                for c in 0..self.rank {
                    let w: f64 = factors
                        .iter()
                        .zip(&idx)
                        .enumerate()
                        .filter(|(j, _)| *j != mode)
                        .map(|(_, (f, &i))| f[(i, c)])
                        .product();
                    out[(idx[mode], c)] += t * w;
                }
            }
            advance(&mut idx, dims);
        }
        out
    }

    /// Hadamard product of the Gram matrices of every factor except `mode`.
    fn gram(&self, factors: &[DMatrix<f64>], mode: usize) -> DMatrix<f64> {
        let mut v = DMatrix::from_element(self.rank, self.rank, 1.0);
        for (j, f) in factors.iter().enumerate() {
            if j != mode {
                v.component_mul_assign(&(f.transpose() * f));
            }
        }
        v
    }
}

impl BdcProblem for CpProblem {
    fn partition(&self) -> &Arc<BlockPartition> {
        &self.partition
    }

    fn eval_f(&self, theta: &BlockVector) -> f64 {
        let rec = self.reconstruct(theta);
        0.5 * rec.data.iter().zip(&self.tensor.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    }

    fn eval_g(&self, _block: usize, theta: &BlockVector) -> f64 {
        self.eval_f(theta)
    }

    fn eval_h(&self, _block: usize, _theta: &BlockVector) -> f64 {
        0.0
    }

    fn grad_g_block(&self, block: usize, theta: &BlockVector) -> Vec<f64> {
        let f = self.factors(theta);
        (&f[block] * self.gram(&f, block) - self.mttkrp(&f, block)).as_slice().to_vec()
    }

    fn subgrad_h_block(&self, block: usize, _theta: &BlockVector) -> Vec<f64> {
        vec![0.0; self.partition.block_dims()[block]]
    }

    /// `(MTTKRP + rho theta_i + u)(V + rho I)^{-1}`, pseudo-inverse when singular.
    fn solve_surrogate(
        &self,
        block: usize,
        theta: &BlockVector,
        u: &[f64],
        rho: f64,
        _opts: &InnerOptions,
    ) -> Result<InnerReport> {
        let f = self.factors(theta);
        let m = f[block].nrows();
        check_len(m * self.rank, u.len())?;
        let lhs = self.gram(&f, block) + DMatrix::identity(self.rank, self.rank) * rho;
        let rhs = self.mttkrp(&f, block) + &f[block] * rho + DMatrix::from_column_slice(m, self.rank, u);
        // solve X lhs = rhs through lhs X^T = rhs^T (lhs is symmetric)
        let rt = rhs.transpose();
        let xt = match lhs.clone().cholesky() {
            Some(ch) => ch.solve(&rt),
            None => lhs.svd(true, true).solve(&rt, 1e-12).map_err(|e| BdcError::InvalidArgument(e.into()))?,
        };
        Ok(InnerReport { x: xt.transpose().as_slice().to_vec(), iters: 1, status: InnerStatus::ClosedForm })
    }
}
