//! Split forward recursion for ReLU networks.
//!
//! Each activation is written as `a_l = Z_l^+ - Z_l^-` with both parts
//! nonnegative and convex in every single layer block. The output is
//! `F = A - B` with `A`, `B` of the same kind, which gives DC splits of the
//! squared and cross-entropy losses per layer.
//!
//! Block `l` holds `W_l` in row-major order followed by `b_l`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::block::{BlockPartition, BlockVector};
use crate::error::{check_len, BdcError, Result};
use crate::fmt::fmt_f64;
use crate::model::{log_sum_exp, softmax};

#[inline]
fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// Derivative selection with `sigma'(0) = 0`.
#[inline]
fn relu_d(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(BdcError::InvalidArgument("network needs at least one layer".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            check_len(l.w.nrows(), l.b.len())?;
            if k > 0 {
                check_len(layers[k - 1].w.nrows(), l.w.ncols())?;
            }
        }
        Ok(Self { layers })
    }

    /// He-style Gaussian initialisation; `widths = [d_0, d_1, ..., d_L]`.
    pub fn random<R: Rng>(widths: &[usize], bias_scale: f64, rng: &mut R) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(BdcError::InvalidArgument("widths need an input and at least one layer".into()));
        }
        let layers = widths
            .windows(2)
            .map(|d| {
                let s = (2.0 / d[0] as f64).sqrt();
                Layer {
                    w: DMatrix::from_fn(d[1], d[0], |_, _| s * rng.sample::<f64, _>(StandardNormal)),
                    b: DVector::from_fn(d[1], |_, _| bias_scale * rng.sample::<f64, _>(StandardNormal)),
                }
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].w.ncols()];
        w.extend(self.layers.iter().map(|l| l.w.nrows()));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").w.nrows()
    }

    pub fn partition_for(widths: &[usize]) -> Result<BlockPartition> {
        BlockPartition::new(widths.windows(2).map(|d| d[1] * d[0] + d[1]).collect())
    }

    pub fn partition(&self) -> BlockPartition {
        Self::partition_for(&self.widths()).expect("valid widths")
    }

    pub fn to_block_vector(&self, partition: Arc<BlockPartition>) -> Result<BlockVector> {
        let mut data = Vec::with_capacity(partition.total_dim());
        for l in &self.layers {
            data.extend(l.w.transpose().iter());
            data.extend(l.b.iter());
        }
        BlockVector::new(partition, data)
    }

    pub fn from_block_vector(widths: &[usize], theta: &BlockVector) -> Result<Self> {
        let part = Self::partition_for(widths)?;
        if part != **theta.partition() {
            return Err(BdcError::PartitionMismatch);
        }
        let layers =
            widths.windows(2).enumerate().map(|(k, d)| Layer::from_block(d[0], d[1], theta.block(k))).collect();
        Self::new(layers)
    }

    /// Checkpoint text: a header naming the shapes, then one CSV row of all blocks.
    pub fn to_checkpoint(&self) -> String {
        let shapes: Vec<String> = self
            .layers
            .iter()
            .enumerate()
            .map(|(k, l)| format!("W{}:{}x{};b{}:{}", k + 1, l.w.nrows(), l.w.ncols(), k + 1, l.b.len()))
            .collect();
        let theta = self.to_block_vector(Arc::new(self.partition())).expect("own partition");
        format!("# {}\n{}\n", shapes.join(";"), theta.to_csv_row())
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let bad = || BdcError::InvalidArgument("malformed checkpoint".into());
        let mut lines = text.lines();
        let header = lines.next().and_then(|h| h.strip_prefix("# ")).ok_or_else(bad)?;
        let mut widths = Vec::new();
        for part in header.split(';').filter(|p| p.starts_with('W')) {
            let (_, shape) = part.split_once(':').ok_or_else(bad)?;
            let (r, c) = shape.split_once('x').ok_or_else(bad)?;
            let (r, c): (usize, usize) = (r.parse().map_err(|_| bad())?, c.parse().map_err(|_| bad())?);
            if widths.is_empty() {
                widths.push(c);
            }
            widths.push(r);
        }
        let data = lines
            .next()
            .ok_or_else(bad)?
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        let theta = BlockVector::new(Arc::new(Self::partition_for(&widths)?), data)?;
        Self::from_block_vector(&widths, &theta)
    }
}

impl Layer {
    fn from_block(d_in: usize, d_out: usize, block: &[f64]) -> Self {
        Layer {
            w: DMatrix::from_row_slice(d_out, d_in, &block[..d_in * d_out]),
            b: DVector::from_column_slice(&block[d_in * d_out..]),
        }
    }
}

/// Standard forward pass `F = W_L a_{L-1} + b_L`.
pub fn forward_standard(p: &MlpParams, x: &DVector<f64>) -> DVector<f64> {
    let l = p.n_layers();
    let mut a = x.clone();
    for (k, layer) in p.layers.iter().enumerate() {
        let z = &layer.w * &a + &layer.b;
        a = if k + 1 < l { z.map(relu) } else { z };
    }
    a
}

/// Activations of the hidden layers of the standard pass.
pub fn hidden_activations(p: &MlpParams, x: &DVector<f64>) -> Vec<DVector<f64>> {
    let mut out = Vec::new();
    let mut a = x.clone();
    for layer in &p.layers[..p.n_layers() - 1] {
        a = (&layer.w * &a + &layer.b).map(relu);
        out.push(a.clone());
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitState {
    /// `Z_l^+` for the hidden layers `l = 1..L-1`.
    pub z_plus: Vec<DVector<f64>>,
    pub z_minus: Vec<DVector<f64>>,
    /// Pre-max vectors `p_l` (layer 1 stores `W_1 x + b_1`).
    pub p: Vec<DVector<f64>>,
    pub a: DVector<f64>,
    pub b: DVector<f64>,
}

impl SplitState {
    pub fn output(&self) -> DVector<f64> {
        &self.a - &self.b
    }
}

fn pos_neg(w: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    (w.map(relu), w.map(|v| relu(-v)))
}

/// Input of layer `l` as a split pair; the raw input is `x = sigma(x) - sigma(-x)`.
fn layer_input(state: &SplitState, x: &DVector<f64>, l: usize) -> (DVector<f64>, DVector<f64>) {
    if l == 0 {
        (x.map(relu), x.map(|v| relu(-v)))
    } else {
        (state.z_plus[l - 1].clone(), state.z_minus[l - 1].clone())
    }
}

pub fn forward_split(p: &MlpParams, x: &DVector<f64>) -> Result<SplitState> {
    check_len(p.input_dim(), x.len())?;
    let l_total = p.n_layers();
    let mut state = SplitState {
        z_plus: Vec::with_capacity(l_total - 1),
        z_minus: Vec::with_capacity(l_total - 1),
        p: Vec::with_capacity(l_total - 1),
        a: DVector::zeros(0),
        b: DVector::zeros(0),
    };
    for (k, layer) in p.layers[..l_total - 1].iter().enumerate() {
        if k == 0 {
            let pre = &layer.w * x + &layer.b;
            state.z_plus.push(pre.map(relu));
            state.z_minus.push(DVector::zeros(pre.len()));
            state.p.push(pre);
        } else {
            let (wp, wn) = pos_neg(&layer.w);
            let (zp, zm) = (&state.z_plus[k - 1], &state.z_minus[k - 1]);
            let pre = &wp * zp + &wn * zm + &layer.b;
            let minus = &wp * zm + &wn * zp;
            let plus = pre.zip_map(&minus, f64::max);
            state.p.push(pre);
            state.z_plus.push(plus);
            state.z_minus.push(minus);
        }
    }
    let out = &p.layers[l_total - 1];
    let (wp, wn) = pos_neg(&out.w);
    let (zp, zm) = layer_input(&state, x, l_total - 1);
    state.a = &wp * &zp + &wn * &zm + out.b.map(relu);
    state.b = &wp * &zm + &wn * &zp + out.b.map(|v| relu(-v));
    Ok(state)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    /// Regression label, nonnegative after the harness shift.
    Value(f64),
    /// Class index, 0-based.
    Class(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub x: DVector<f64>,
    pub y: Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    Ce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    G,
    H,
}

/// `(g, h)` with `g - h = (F - y)^2`. Requires `y >= 0` and a scalar output.
pub fn mse_bdc(state: &SplitState, y: f64) -> Result<(f64, f64)> {
    if y < 0.0 {
        return Err(BdcError::InvalidArgument(
            "squared-loss split needs y >= 0; shift labels and outputs by a constant first".into(),
        ));
    }
    check_len(1, state.a.len())?;
    let (a, b) = (state.a[0], state.b[0]);
    Ok((2.0 * (a * a + (b + y) * (b + y)), (a + b + y) * (a + b + y)))
}

/// `(g, h)` with `g - h = LSE(F) - F_y`.
pub fn ce_bdc(state: &SplitState, class: usize) -> Result<(f64, f64)> {
    let c = state.a.len();
    if c < 2 || class >= c {
        return Err(BdcError::InvalidArgument(format!("class {class} invalid for {c} outputs")));
    }
    let f = state.output();
    let sum_b: f64 = state.b.iter().sum();
    Ok((log_sum_exp(f.as_slice()) + sum_b + state.b[class], state.a[class] + sum_b))
}

pub fn loss_split(state: &SplitState, y: Target) -> Result<(f64, f64)> {
    match y {
        Target::Value(v) => mse_bdc(state, v),
        Target::Class(c) => ce_bdc(state, c),
    }
}

/// Plain loss of the standard output.
pub fn direct_loss(f: &DVector<f64>, y: Target) -> f64 {
    match y {
        Target::Value(v) => (f[0] - v) * (f[0] - v),
        Target::Class(c) => log_sum_exp(f.as_slice()) - f[c],
    }
}

/// Nonnegative output adjoints `(dA, dB)` of the chosen part.
fn output_adjoint(state: &SplitState, y: Target, part: Part) -> (DVector<f64>, DVector<f64>) {
    let c = state.a.len();
    match (y, part) {
        (Target::Value(v), Part::G) => (state.a.map(|a| 4.0 * a), state.b.map(|b| 4.0 * (b + v))),
        (Target::Value(v), Part::H) => {
            let s = 2.0 * (state.a[0] + state.b[0] + v);
            (DVector::from_element(1, s), DVector::from_element(1, s))
        }
        (Target::Class(k), Part::G) => {
            let prob = DVector::from_vec(softmax(state.output().as_slice()));
            let mut db = prob.map(|q| 1.0 - q);
            db[k] += 1.0;
            (prob, db)
        }
        (Target::Class(k), Part::H) => {
            let mut da = DVector::zeros(c);
            da[k] = 1.0;
            (da, DVector::from_element(c, 1.0))
        }
    }
}

/// Gradient block of `sigma(W) P + sigma(-W) M` type maps: for output
/// adjoints `(pi, nu)` flowing into `(sigma(W) zp + sigma(-W) zm, sigma(W) zm + sigma(-W) zp)`.
fn weight_grad(
    w: &DMatrix<f64>,
    pi: &DVector<f64>,
    nu: &DVector<f64>,
    zp: &DVector<f64>,
    zm: &DVector<f64>,
) -> DMatrix<f64> {
    DMatrix::from_fn(w.nrows(), w.ncols(), |j, k| {
        let v = w[(j, k)];
        relu_d(v) * (pi[j] * zp[k] + nu[j] * zm[k]) - relu_d(-v) * (pi[j] * zm[k] + nu[j] * zp[k])
    })
}

fn pack(dw: &DMatrix<f64>, db: &DVector<f64>) -> Vec<f64> {
    let mut out: Vec<f64> = dw.transpose().iter().copied().collect();
    out.extend(db.iter());
    out
}

/// Subgradient of `sum_j (dA_j A_j + dB_j B_j)` with respect to layer `layer`,
/// for nonnegative adjoints. Only layers `>= layer` are traversed.
pub fn backprop_block(
    p: &MlpParams,
    state: &SplitState,
    x: &DVector<f64>,
    da: &DVector<f64>,
    dbv: &DVector<f64>,
    layer: usize,
) -> Vec<f64> {
    let l_total = p.n_layers();
    let out = &p.layers[l_total - 1];
    let (zp, zm) = layer_input(state, x, l_total - 1);
    if layer == l_total - 1 {
        let dw = weight_grad(&out.w, da, dbv, &zp, &zm);
        let db = DVector::from_fn(out.b.len(), |j, _| da[j] * relu_d(out.b[j]) - dbv[j] * relu_d(-out.b[j]));
        return pack(&dw, &db);
    }
    let (wp, wn) = pos_neg(&out.w);
    let mut zeta_p = wp.tr_mul(da) + wn.tr_mul(dbv);
    let mut zeta_m = wn.tr_mul(da) + wp.tr_mul(dbv);
    for k in (layer..l_total - 1).rev() {
        let lw = &p.layers[k];
        if k == 0 {
            let pre = &state.p[0];
            let gate = DVector::from_fn(pre.len(), |j, _| zeta_p[j] * relu_d(pre[j]));
            let dw = &gate * x.transpose();
            return pack(&dw, &gate);
        }
        // ties in max(p, Z^-) go to p
        let take_p = state.p[k].zip_map(&state.z_minus[k], |a, b| if a >= b { 1.0 } else { 0.0 });
        let pi = zeta_p.component_mul(&take_p);
        let nu = &zeta_m + zeta_p.component_mul(&take_p.map(|t| 1.0 - t));
        let (zp, zm) = (&state.z_plus[k - 1], &state.z_minus[k - 1]);
        if k == layer {
            let dw = weight_grad(&lw.w, &pi, &nu, zp, zm);
            return pack(&dw, &pi);
        }
        let (wp, wn) = pos_neg(&lw.w);
        zeta_p = wp.tr_mul(&pi) + wn.tr_mul(&nu);
        zeta_m = wn.tr_mul(&pi) + wp.tr_mul(&nu);
    }
    unreachable!("layer index below the traversed range")
}

/// Subgradient of `g` (or `h`) of one sample's loss with respect to layer `layer`.
pub fn sample_block_grad(p: &MlpParams, sample: &LabeledSample, part: Part, layer: usize) -> Result<Vec<f64>> {
    if layer >= p.n_layers() {
        return Err(BdcError::BlockIndex { index: layer, n_blocks: p.n_layers() });
    }
    let state = forward_split(p, &sample.x)?;
    let (da, db) = output_adjoint(&state, sample.y, part);
    Ok(backprop_block(p, &state, &sample.x, &da, &db, layer))
}

/// Batch-summed `(g, h)`.
pub fn batch_split(p: &MlpParams, batch: &[&LabeledSample]) -> Result<(f64, f64)> {
    let mut acc = (0.0, 0.0);
    for s in batch {
        let (g, h) = loss_split(&forward_split(p, &s.x)?, s.y)?;
        acc.0 += g;
        acc.1 += h;
    }
    Ok(acc)
}

/// Batch-summed block subgradient of `g` or `h`.
pub fn block_grad(p: &MlpParams, batch: &[&LabeledSample], part: Part, layer: usize) -> Result<Vec<f64>> {
    let mut acc: Option<Vec<f64>> = None;
    for s in batch {
        let g = sample_block_grad(p, s, part, layer)?;
        match acc.as_mut() {
            Some(a) => a.iter_mut().zip(&g).for_each(|(x, y)| *x += y),
            None => acc = Some(g),
        }
    }
    let dim = p.partition().block_dims()[layer];
    Ok(acc.unwrap_or_else(|| vec![0.0; dim]))
}

/// Distance of the sample from every kink of the selection rules; zero means
/// some selection was made at a tie.
pub fn kink_margin(p: &MlpParams, x: &DVector<f64>) -> Result<f64> {
    let state = forward_split(p, x)?;
    let mut m = f64::INFINITY;
    for (k, pre) in state.p.iter().enumerate() {
        let gap = if k == 0 { pre.abs() } else { (pre - &state.z_minus[k]).abs() };
        m = m.min(gap.min());
    }
    for layer in &p.layers[1..] {
        m = m.min(layer.w.abs().min());
    }
    let out = p.layers.last().expect("nonempty");
    m = m.min(out.b.abs().min());
    if p.n_layers() == 1 {
        m = m.min(out.w.abs().min());
    }
    Ok(m)
}

/// `c = max(0, -min y)`, the shift that makes regression labels nonnegative.
pub fn label_shift(ys: &[f64]) -> f64 {
    ys.iter().copied().fold(0.0f64, |acc, y| acc.max(-y))
}

pub fn fmt_vector(v: &DVector<f64>) -> String {
    v.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(",")
}
