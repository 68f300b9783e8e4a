//! Constants of the generalized-smoothness theory: the gradient bound `E`,
//! the effective smoothness `L = ell(2E)` and the proximal weight floor.

use crate::error::{BdcError, Result};
use crate::model::Domain;

const MAX_DOUBLINGS: usize = 1024;

/// `sup { u > 0 : u^2 <= 2 ell(2u) G }`, located as the boundary crossing by a
/// doubling bracket followed by bisection.
pub fn compute_e<F: Fn(f64) -> f64>(ell: F, g: f64) -> Result<f64> {
    if !(g > 0.0 && g.is_finite()) {
        return Err(BdcError::InvalidArgument("G must be positive and finite".into()));
    }
    let excess = |u: f64| u * u - 2.0 * ell(2.0 * u) * g;
    let (mut lo, mut hi) = (0.0, 1.0);
    if excess(hi) > 0.0 {
        // shrink until the inequality holds; it does near 0 because ell > 0
        let mut u = 1.0;
        for _ in 0..MAX_DOUBLINGS {
            u *= 0.5;
            if excess(u) <= 0.0 {
                break;
            }
        }
        if excess(u) > 0.0 {
            return Err(BdcError::NotSubquadratic);
        }
        lo = u;
    } else {
        let mut found = false;
        for _ in 0..MAX_DOUBLINGS {
            lo = hi;
            hi *= 2.0;
            let e = excess(hi);
            if !hi.is_finite() || e.is_nan() {
                return Err(BdcError::NotSubquadratic);
            }
            if e > 0.0 {
                found = true;
                break;
            }
        }
        if !found {
            return Err(BdcError::NotSubquadratic);
        }
    }
    while hi - lo > 1e-13 * hi {
        let mid = 0.5 * (lo + hi);
        if excess(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `rho_min = L 2(E + R) / E`.
pub fn rho_from(e: f64, l_eff: f64, r: f64) -> f64 {
    l_eff * 2.0 * (e + r) / e
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoPlan {
    pub g: f64,
    pub r: f64,
    pub e: f64,
    pub l_eff: f64,
    pub rho_min: f64,
}

pub fn plan_rho<F: Fn(f64) -> f64>(ell: F, g: f64, r: f64) -> Result<RhoPlan> {
    let e = compute_e(&ell, g)?;
    let l_eff = ell(2.0 * e);
    Ok(RhoPlan { g, r, e, l_eff, rho_min: rho_from(e, l_eff, r) })
}

/// Stochastic scaling `rho = c sqrt(K)`, `batch = ceil(c' sqrt(K))`.
pub fn theory_preset(k: usize, c_rho: f64, c_batch: f64) -> (f64, usize) {
    let root = (k as f64).sqrt();
    (c_rho * root, ((c_batch * root).ceil() as usize).max(1))
}

/// `max_{x in M} <z, theta - x> - L/2 ||x - theta||^2`, attained at
/// `Proj_M(theta - z / L)`.
pub fn gap_l(domain: &Domain, theta: &[f64], z: &[f64], l: f64) -> f64 {
    let mut x: Vec<f64> = theta.iter().zip(z).map(|(t, g)| t - g / l).collect();
    domain.project(&mut x);
    let lin: f64 = z.iter().zip(theta.iter().zip(&x)).map(|(g, (t, x))| g * (t - x)).sum();
    let quad: f64 = x.iter().zip(theta).map(|(x, t)| (x - t) * (x - t)).sum();
    lin - 0.5 * l * quad
}
