//! Closed convex sets with projection and linear-minimization oracles.

use std::fmt::Debug;

use crate::block::norm2;

pub trait ConvexSet: Send + Sync + Debug {
    fn project(&self, x: &mut [f64]);

    /// A minimiser of `<grad, s>` over the set.
    fn lmo(&self, grad: &[f64], current: &[f64]) -> Vec<f64>;

    fn contains(&self, x: &[f64], tol: f64) -> bool;
}

/// Euclidean ball `{x : ||x|| <= radius}`.
#[derive(Debug, Clone, Copy)]
pub struct Ball {
    pub radius: f64,
}

impl ConvexSet for Ball {
    fn project(&self, x: &mut [f64]) {
        let n = norm2(x);
        if n > self.radius {
            let s = self.radius / n;
            x.iter_mut().for_each(|v| *v *= s);
        }
    }

    fn lmo(&self, grad: &[f64], current: &[f64]) -> Vec<f64> {
        let n = norm2(grad);
        if n == 0.0 {
            return current.to_vec();
        }
        grad.iter().map(|g| -self.radius * g / n).collect()
    }

    fn contains(&self, x: &[f64], tol: f64) -> bool {
        norm2(x) <= self.radius + tol
    }
}

/// Product of Euclidean balls over the columns of a column-major `rows x cols`
/// matrix. This is the dictionary constraint `||d_j|| <= radius` for all `j`.
#[derive(Debug, Clone, Copy)]
pub struct ColumnBalls {
    pub rows: usize,
    pub cols: usize,
    pub radius: f64,
}

impl ConvexSet for ColumnBalls {
    fn project(&self, x: &mut [f64]) {
        let ball = Ball { radius: self.radius };
        for col in x.chunks_mut(self.rows) {
            ball.project(col);
        }
    }

    fn lmo(&self, grad: &[f64], current: &[f64]) -> Vec<f64> {
        let ball = Ball { radius: self.radius };
        grad.chunks(self.rows).zip(current.chunks(self.rows)).flat_map(|(g, c)| ball.lmo(g, c)).collect()
    }

    fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.chunks(self.rows).all(|c| norm2(c) <= self.radius + tol)
    }
}
