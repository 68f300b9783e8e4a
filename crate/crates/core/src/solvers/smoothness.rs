//! Empirical block smoothness along an update direction.

use crate::block::{norm2, BlockVector};
use crate::model::BdcProblem;

/// `max_gamma ||grad(x + gamma d) - grad(x)|| / (gamma ||d||)` over the grid
/// `gamma in {delta, 2 delta, ..., floor(1/delta) delta}`.
pub fn smoothness_along<G: FnMut(&[f64]) -> Vec<f64>>(mut grad: G, x: &[f64], d: &[f64], delta: f64) -> f64 {
    let dn = norm2(d);
    if dn == 0.0 {
        return 0.0;
    }
    assert!(delta > 0.0 && delta <= 1.0, "delta must lie in (0, 1]");
    let g0 = grad(x);
    let steps = ((1.0 / delta) + 1e-9).floor() as usize;
    let mut best: f64 = 0.0;
    for j in 1..=steps {
        let gamma = j as f64 * delta;
        let y: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + gamma * b).collect();
        let diff: Vec<f64> = grad(&y).iter().zip(&g0).map(|(a, b)| a - b).collect();
        best = best.max(norm2(&diff) / (gamma * dn));
    }
    best
}

/// Estimate for block `i` of `g_i` between two consecutive iterates.
pub fn smoothness_estimate<P: BdcProblem + ?Sized>(
    p: &P,
    theta_k: &BlockVector,
    theta_next: &BlockVector,
    block: usize,
    delta: f64,
) -> f64 {
    let x = theta_k.block(block);
    let d: Vec<f64> = theta_next.block(block).iter().zip(x).map(|(a, b)| a - b).collect();
    let grad = |y: &[f64]| p.grad_g_block(block, &theta_k.replace_block(block, y).expect("block length fixed"));
    smoothness_along(grad, x, &d, delta)
}
