//! Toy ReLU network training as a multi-block problem.
//!
//! The objective is the mean split loss over the dataset, one block per layer.
//! Minibatch views average over the drawn indices, so their values and
//! subgradients are unbiased for the full objective.

use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Normal, StandardNormal};

use crate::block::{BlockPartition, BlockVector};
use crate::error::{BdcError, Result};
use crate::model::{BdcProblem, SampleHandle, StochasticBdc};
use crate::relu::{
    batch_split, block_grad, direct_loss, forward_standard, label_shift, LabeledSample, LossKind, MlpParams, Part,
    Target,
};
use crate::rng::substream;

#[derive(Debug, Clone)]
pub struct MlpTask {
    pub dataset: Vec<LabeledSample>,
    pub net: MlpParams,
    pub loss: LossKind,
    /// Constant added to regression labels so they are nonnegative.
    pub label_shift: f64,
}

/// `y = sin(x) + offset` on `x ~ U[-pi, pi]`; the offset keeps labels positive.
pub fn sine_dataset(n: usize, offset: f64, noise: f64, seed: u64) -> Vec<LabeledSample> {
    let mut rng = substream(seed, "data");
    (0..n)
        .map(|_| {
            let x = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let e: f64 = rng.sample(StandardNormal);
            LabeledSample { x: DVector::from_element(1, x), y: Target::Value(x.sin() + offset + noise * e) }
        })
        .collect()
}

/// `classes` isotropic Gaussian blobs in the plane with centers on a circle
/// of radius `spread`; labels cycle through the classes.
pub fn blobs_dataset(n: usize, classes: usize, spread: f64, std: f64, seed: u64) -> Result<Vec<LabeledSample>> {
    if !(2..=3).contains(&classes) {
        return Err(BdcError::InvalidArgument(format!("blobs need 2 or 3 classes, got {classes}")));
    }
    let noise = Normal::new(0.0, std).map_err(|e| BdcError::InvalidArgument(e.to_string()))?;
    let mut rng = substream(seed, "data");
    Ok((0..n)
        .map(|k| {
            let c = k % classes;
            let angle = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
            let x = DVector::from_vec(vec![
                spread * angle.cos() + rng.sample(noise),
                spread * angle.sin() + rng.sample(noise),
            ]);
            LabeledSample { x, y: Target::Class(c) }
        })
        .collect())
}

impl MlpTask {
    /// Validates labels against the loss and records the regression shift.
    pub fn new(mut dataset: Vec<LabeledSample>, net: MlpParams, loss: LossKind) -> Result<Self> {
        if dataset.is_empty() {
            return Err(BdcError::InvalidArgument("empty dataset".into()));
        }
        let mut shift = 0.0;
        match loss {
            LossKind::Mse => {
                if net.output_dim() != 1 {
                    return Err(BdcError::InvalidArgument("squared loss needs a scalar output".into()));
                }
                let ys: Vec<f64> = dataset
                    .iter()
                    .map(|s| match s.y {
                        Target::Value(v) => Ok(v),
                        Target::Class(_) => Err(BdcError::InvalidArgument("class label under squared loss".into())),
                    })
                    .collect::<Result<_>>()?;
                shift = label_shift(&ys);
                for s in dataset.iter_mut() {
                    if let Target::Value(v) = &mut s.y {
                        *v += shift;
                    }
                }
            }
            LossKind::Ce => {
                let c = net.output_dim();
                if dataset.iter().any(|s| !matches!(s.y, Target::Class(k) if k < c)) || c < 2 {
                    return Err(BdcError::InvalidArgument(format!("labels must be classes below {c}")));
                }
            }
        }
        if dataset.iter().any(|s| s.x.len() != net.input_dim()) {
            return Err(BdcError::DimensionMismatch { expected: net.input_dim(), got: dataset[0].x.len() });
        }
        Ok(Self { dataset, net, loss, label_shift: shift })
    }
}

#[derive(Debug, Clone)]
pub struct MlpProblem {
    task: MlpTask,
    widths: Vec<usize>,
    partition: Arc<BlockPartition>,
}

/// Shared evaluation over a subset of samples.
struct View<'a> {
    widths: &'a [usize],
    partition: &'a Arc<BlockPartition>,
    batch: Vec<&'a LabeledSample>,
}

impl View<'_> {
    fn params(&self, theta: &BlockVector) -> MlpParams {
        MlpParams::from_block_vector(self.widths, theta).expect("theta uses the task partition")
    }

    fn split(&self, theta: &BlockVector) -> (f64, f64) {
        let (g, h) = batch_split(&self.params(theta), &self.batch).expect("validated dataset");
        let n = self.batch.len() as f64;
        (g / n, h / n)
    }

    fn grad(&self, block: usize, theta: &BlockVector, part: Part) -> Vec<f64> {
        let n = self.batch.len() as f64;
        let mut v = block_grad(&self.params(theta), &self.batch, part, block).expect("validated dataset");
        v.iter_mut().for_each(|x| *x /= n);
        v
    }
}

impl BdcProblem for View<'_> {
    fn partition(&self) -> &Arc<BlockPartition> {
        self.partition
    }

    fn eval_f(&self, theta: &BlockVector) -> f64 {
        let (g, h) = self.split(theta);
        g - h
    }

    fn eval_g(&self, _block: usize, theta: &BlockVector) -> f64 {
        self.split(theta).0
    }

    fn eval_h(&self, _block: usize, theta: &BlockVector) -> f64 {
        self.split(theta).1
    }

    fn grad_g_block(&self, block: usize, theta: &BlockVector) -> Vec<f64> {
        self.grad(block, theta, Part::G)
    }

    fn subgrad_h_block(&self, block: usize, theta: &BlockVector) -> Vec<f64> {
        self.grad(block, theta, Part::H)
    }
}

impl MlpProblem {
    pub fn new(task: MlpTask) -> Result<Self> {
        let widths = task.net.widths();
        let partition = Arc::new(MlpParams::partition_for(&widths)?);
        Ok(Self { task, widths, partition })
    }

    pub fn task(&self) -> &MlpTask {
        &self.task
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// The task's initial network as a block vector.
    pub fn initial(&self) -> BlockVector {
        self.task.net.to_block_vector(self.partition.clone()).expect("same widths")
    }

    pub fn params(&self, theta: &BlockVector) -> Result<MlpParams> {
        MlpParams::from_block_vector(&self.widths, theta)
    }

    fn view(&self, indices: Option<&[usize]>) -> View<'_> {
        let batch = match indices {
            Some(idx) => idx.iter().map(|&i| &self.task.dataset[i]).collect(),
            None => self.task.dataset.iter().collect(),
        };
        View { widths: &self.widths, partition: &self.partition, batch }
    }

    /// Mean loss of the standard forward pass, on the original label scale.
    pub fn training_loss(&self, theta: &BlockVector) -> f64 {
        let p = self.params(theta).expect("task partition");
        let n = self.task.dataset.len() as f64;
        self.task
            .dataset
            .iter()
            .map(|s| {
                let f = forward_standard(&p, &s.x);
                direct_loss(&f, s.y)
            })
            .sum::<f64>()
            / n
    }

    /// Fraction of correctly classified samples; `None` under squared loss.
    pub fn accuracy(&self, theta: &BlockVector) -> Option<f64> {
        if self.task.loss != LossKind::Ce {
            return None;
        }
        let p = self.params(theta).ok()?;
        let hits = self
            .task
            .dataset
            .iter()
            .filter(|s| {
                let f = forward_standard(&p, &s.x);
                matches!(s.y, Target::Class(c) if f.argmax().0 == c)
            })
            .count();
        Some(hits as f64 / self.task.dataset.len() as f64)
    }
}

impl BdcProblem for MlpProblem {
    fn partition(&self) -> &Arc<BlockPartition> {
        &self.partition
    }

    fn eval_f(&self, theta: &BlockVector) -> f64 {
        self.view(None).eval_f(theta)
    }

    fn eval_g(&self, block: usize, theta: &BlockVector) -> f64 {
        self.view(None).eval_g(block, theta)
    }

    fn eval_h(&self, block: usize, theta: &BlockVector) -> f64 {
        self.view(None).eval_h(block, theta)
    }

    fn grad_g_block(&self, block: usize, theta: &BlockVector) -> Vec<f64> {
        self.view(None).grad_g_block(block, theta)
    }

    fn subgrad_h_block(&self, block: usize, theta: &BlockVector) -> Vec<f64> {
        self.view(None).subgrad_h_block(block, theta)
    }
}

impl StochasticBdc for MlpProblem {
    fn population(&self) -> usize {
        self.task.dataset.len()
    }

    fn sampled<'a>(&'a self, handle: &SampleHandle) -> Box<dyn BdcProblem + 'a> {
        Box::new(self.view(Some(&handle.indices)))
    }
}
