//! DC and block-DC representations of monomials as signed sums of powers of
//! affine forms.
//!
//! The construction is the polarization identity
//!
//! ```text
//! prod_i theta_i^{b_i} = 1/(S! 2^S) sum_v (-1)^{|v|} prod_i C(b_i, v_i) (sum_i (b_i - 2 v_i) theta_i)^S
//! ```
//!
//! over the grid `0 <= v <= b`. Complementary grid points `v` and `b - v` give
//! the same even power, so they are merged. For odd degree a homogenizing
//! variable `t` with exponent 1 is added and then set to 1, which turns the
//! forms affine.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use num_integer::Integer;
use num_rational::Ratio;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;

use crate::error::{BdcError, Result};
use crate::fmt::fmt_f64;
use crate::rng::substream;

pub type Rational = Ratio<i128>;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Monomial {
    exponents: Vec<u32>,
}

impl Monomial {
    pub fn new(exponents: Vec<u32>) -> Result<Self> {
        if exponents.iter().all(|&b| b == 0) {
            return Err(BdcError::InvalidArgument("monomial needs a positive exponent".into()));
        }
        Ok(Self { exponents })
    }

    pub fn exponents(&self) -> &[u32] {
        &self.exponents
    }

    pub fn n_vars(&self) -> usize {
        self.exponents.len()
    }

    pub fn degree(&self) -> u32 {
        self.exponents.iter().sum()
    }

    pub fn eval(&self, theta: &[f64]) -> f64 {
        self.exponents.iter().zip(theta).map(|(&b, t)| t.powi(b as i32)).product()
    }
}

/// `weight * (form . theta + shift)^power`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Atom {
    pub weight: Rational,
    pub form: Vec<i64>,
    pub shift: i64,
    pub power: u32,
}

impl Atom {
    pub fn eval(&self, theta: &[f64]) -> f64 {
        let lin: f64 = self.form.iter().zip(theta).map(|(&u, t)| u as f64 * t).sum::<f64>() + self.shift as f64;
        ratio_to_f64(&self.weight) * lin.powi(self.power as i32)
    }

    pub fn is_convex(&self) -> bool {
        self.power.is_multiple_of(2) || self.power == 1
    }
}

fn ratio_to_f64(r: &Rational) -> f64 {
    r.to_f64().expect("rational fits in f64")
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtomDecomposition {
    pub target: Monomial,
    pub atoms: Vec<Atom>,
    /// Common factor already folded into every weight, kept for reporting.
    pub scale: Rational,
}

pub trait Evaluate {
    fn eval(&self, theta: &[f64]) -> f64;
}

impl Evaluate for AtomDecomposition {
    fn eval(&self, theta: &[f64]) -> f64 {
        self.atoms.iter().map(|a| a.eval(theta)).sum()
    }
}

impl AtomDecomposition {
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Positive-weight atoms form `g`, negative-weight atoms form `h`.
    pub fn split_counts(&self) -> (usize, usize) {
        let pos = self.atoms.iter().filter(|a| a.weight.is_positive()).count();
        (pos, self.atoms.len() - pos)
    }

    pub fn to_csv(&self) -> String {
        let n = self.target.n_vars();
        let mut out = String::from("weight_num,weight_den");
        for i in 1..=n {
            out.push_str(&format!(",u_{i}"));
        }
        out.push_str(",kappa,power\n");
        for a in &self.atoms {
            out.push_str(&format!("{},{}", a.weight.numer(), a.weight.denom()));
            for u in &a.form {
                out.push_str(&format!(",{u}"));
            }
            out.push_str(&format!(",{},{}\n", a.shift, a.power));
        }
        out
    }

    /// Merge atoms whose affine parts are proportional, e.g. `(2x)^6` and `x^6`.
    pub fn merge_proportional(&self) -> Self {
        let mut order: Vec<(Vec<i64>, u32)> = Vec::new();
        let mut weights: HashMap<(Vec<i64>, u32), Rational> = HashMap::new();
        for a in &self.atoms {
            let mut v = a.form.clone();
            v.push(a.shift);
            let g = v.iter().fold(0i64, |acc, x| acc.gcd(x));
            let (prim, g) = if g == 0 { (v, 1) } else { (v.iter().map(|x| x / g).collect(), g) };
            let (prim, flip) = canonical_sign(prim);
            // (g * prim)^p = g^p prim^p, and for odd p the sign flip matters
            let mut w = a.weight * Rational::from_integer((g as i128).pow(a.power));
            if flip && a.power % 2 == 1 {
                w = -w;
            }
            let key = (prim, a.power);
            match weights.get_mut(&key) {
                Some(acc) => *acc += w,
                None => {
                    order.push(key.clone());
                    weights.insert(key, w);
                }
            }
        }
        let atoms = order
            .into_iter()
            .filter_map(|key| {
                let w = weights[&key];
                if w.is_zero() {
                    return None;
                }
                let (mut form, power) = key;
                let shift = form.pop().expect("shift slot");
                Some(Atom { weight: w, form, shift, power })
            })
            .collect();
        Self { target: self.target.clone(), atoms, scale: self.scale }
    }
}

/// First nonzero entry made positive; returns whether the vector was negated.
fn canonical_sign(v: Vec<i64>) -> (Vec<i64>, bool) {
    match v.iter().find(|&&x| x != 0) {
        Some(&x) if x < 0 => (v.into_iter().map(|x| -x).collect(), true),
        _ => (v, false),
    }
}

fn factorial(n: u32) -> i128 {
    (1..=n as i128).product()
}

fn binomial(n: u32, k: u32) -> i128 {
    let k = k.min(n - k) as i128;
    let n = n as i128;
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// Polarization of `m`; exact as a polynomial identity.
pub fn polarize(m: &Monomial) -> AtomDecomposition {
    let b = m.exponents();
    let s = m.degree();
    let odd = s % 2 == 1;
    // homogenizing exponent sits last so forms keep variable order
    let mut bb: Vec<u32> = b.to_vec();
    if odd {
        bb.push(1);
    }
    let big_s = if odd { s + 1 } else { s };
    let scale = Rational::new(1, factorial(big_s) * (1i128 << big_s));

    let mut order: Vec<Vec<i64>> = Vec::new();
    let mut weights: HashMap<Vec<i64>, Rational> = HashMap::new();
    let mut v = vec![0u32; bb.len()];
    loop {
        let w: Vec<i64> = bb.iter().zip(&v).map(|(&bi, &vi)| bi as i64 - 2 * vi as i64).collect();
        if w.iter().any(|&x| x != 0) {
            let parity: u32 = v.iter().sum();
            let sign = if parity.is_multiple_of(2) { 1 } else { -1 };
            let coef: i128 = bb.iter().zip(&v).map(|(&bi, &vi)| binomial(bi, vi)).product();
            let (key, _) = canonical_sign(w);
            let term = scale * Rational::from_integer(sign * coef);
            match weights.get_mut(&key) {
                Some(acc) => *acc += term,
                None => {
                    order.push(key.clone());
                    weights.insert(key, term);
                }
            }
        }
        // odometer over the grid
        let mut k = 0;
        loop {
            if k == v.len() {
                let atoms = order
                    .into_iter()
                    .filter_map(|mut form| {
                        let weight = weights[&form];
                        if weight.is_zero() {
                            return None;
                        }
                        let shift = if odd { form.pop().expect("t slot") } else { 0 };
                        Some(Atom { weight, form, shift, power: big_s })
                    })
                    .collect();
                return AtomDecomposition { target: m.clone(), atoms, scale };
            }
            if v[k] < bb[k] {
                v[k] += 1;
                break;
            }
            v[k] = 0;
            k += 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AtomBounds {
    pub lower: u64,
    pub upper: u64,
}

/// Bounds on the minimum DC atom count. Zero exponents are ignored.
pub fn dc_atom_bounds(m: &Monomial) -> AtomBounds {
    let mut b: Vec<u64> = m.exponents().iter().filter(|&&x| x > 0).map(|&x| x as u64).collect();
    b.sort_unstable();
    let full: u64 = b.iter().map(|x| x + 1).product();
    if m.degree() % 2 == 1 {
        AtomBounds { lower: full, upper: full }
    } else {
        let lower = b.iter().skip(1).map(|x| x + 1).product();
        AtomBounds { lower, upper: full / 2 }
    }
}

/// A factor of a block product: a decomposition over the variables `vars`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockFactor {
    pub vars: Vec<usize>,
    pub decomposition: AtomDecomposition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockDecomposition {
    pub target: Monomial,
    pub factors: Vec<BlockFactor>,
}

impl BlockDecomposition {
    pub fn counts(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.decomposition.len()).collect()
    }

    pub fn total_atoms(&self) -> usize {
        self.counts().iter().sum()
    }
}

impl Evaluate for BlockDecomposition {
    fn eval(&self, theta: &[f64]) -> f64 {
        self.factors
            .iter()
            .map(|f| {
                let local: Vec<f64> = f.vars.iter().map(|&i| theta[i]).collect();
                f.decomposition.eval(&local)
            })
            .product()
    }
}

/// Decompose each group of variables separately; the product of the factors
/// is the monomial. A group holding one variable with exponent 1 or an even
/// exponent is already a convex atom and is kept as is.
pub fn bdc_block_decompose(m: &Monomial, grouping: &[Vec<usize>]) -> Result<BlockDecomposition> {
    let n = m.n_vars();
    let mut seen = vec![false; n];
    for g in grouping {
        if g.is_empty() {
            return Err(BdcError::InvalidArgument("empty group".into()));
        }
        for &i in g {
            if i >= n {
                return Err(BdcError::InvalidArgument(format!("variable {} out of range", i + 1)));
            }
            if seen[i] {
                return Err(BdcError::InvalidArgument(format!("variable {} in two groups", i + 1)));
            }
            seen[i] = true;
        }
    }
    if let Some(i) = (0..n).find(|&i| !seen[i] && m.exponents()[i] > 0) {
        return Err(BdcError::InvalidArgument(format!("variable {} not covered by the grouping", i + 1)));
    }
    let factors = grouping
        .iter()
        .map(|g| {
            let sub = Monomial::new(g.iter().map(|&i| m.exponents()[i]).collect())
                .map_err(|_| BdcError::InvalidArgument("group has no variable with a positive exponent".into()))?;
            let decomposition = match sub.exponents() {
                [b] if *b == 1 || b % 2 == 0 => AtomDecomposition {
                    target: sub.clone(),
                    atoms: vec![Atom { weight: Rational::one(), form: vec![1], shift: 0, power: *b }],
                    scale: Rational::one(),
                },
                _ => polarize(&sub),
            };
            Ok(BlockFactor { vars: g.clone(), decomposition })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BlockDecomposition { target: m.clone(), factors })
}

/// Hand-written two-block decomposition of `theta1 theta2 theta3^2 theta4^4`:
///
/// ```text
/// 1/14400 [(t1+t2)^2 - (t1-t2)^2] x [5((t3+t4)^6 + (t3-t4)^6) + 3((t3+3t4)^6 + (t3-3t4)^6)
///                                      - 8((t3+2t4)^6 + (t3-2t4)^6 + 420 t4^6)]
/// ```
pub fn explicit_nine_atom_product() -> BlockDecomposition {
    let r = |n: i128, d: i128| Rational::new(n, d);
    let atom = |w: Rational, form: [i64; 2], power| Atom { weight: w, form: form.to_vec(), shift: 0, power };
    let target = Monomial::new(vec![1, 1, 2, 4]).expect("valid");
    let first = AtomDecomposition {
        target: Monomial::new(vec![1, 1]).expect("valid"),
        atoms: vec![atom(r(1, 14400), [1, 1], 2), atom(r(-1, 14400), [1, -1], 2)],
        scale: r(1, 14400),
    };
    let second = AtomDecomposition {
        target: Monomial::new(vec![2, 4]).expect("valid"),
        atoms: vec![
            atom(r(5, 1), [1, 1], 6),
            atom(r(5, 1), [1, -1], 6),
            atom(r(3, 1), [1, 3], 6),
            atom(r(3, 1), [1, -3], 6),
            atom(r(-8, 1), [1, 2], 6),
            atom(r(-8, 1), [1, -2], 6),
            atom(r(-8 * 420, 1), [0, 1], 6),
        ],
        scale: Rational::one(),
    };
    BlockDecomposition {
        target,
        factors: vec![
            BlockFactor { vars: vec![0, 1], decomposition: first },
            BlockFactor { vars: vec![2, 3], decomposition: second },
        ],
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verification {
    pub pass: bool,
    pub max_rel_err: f64,
}

/// Compare `dec` with `m` at `trials` uniform points of `[-2, 2]^n`, scaling
/// errors by `max(1, |m(theta)|)`.
pub fn verify_identity<E: Evaluate + ?Sized>(
    dec: &E,
    m: &Monomial,
    trials: usize,
    tol: f64,
    seed: u64,
) -> Verification {
    let mut rng = substream(seed, "verify");
    let n = m.n_vars();
    let mut worst: f64 = 0.0;
    let mut theta = vec![0.0; n];
    for _ in 0..trials.max(1) {
        theta.iter_mut().for_each(|t| *t = rng.random_range(-2.0..=2.0));
        let exact = m.eval(&theta);
        let err = (dec.eval(&theta) - exact).abs() / exact.abs().max(1.0);
        worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
    }
    Verification { pass: worst <= tol, max_rel_err: worst }
}

/// Exact polynomial of a decomposition as exponent vector -> coefficient.
pub fn expand(dec: &AtomDecomposition) -> BTreeMap<Vec<u32>, Rational> {
    let n = dec.target.n_vars();
    let mut total: BTreeMap<Vec<u32>, Rational> = BTreeMap::new();
    for a in &dec.atoms {
        let mut poly: BTreeMap<Vec<u32>, Rational> = BTreeMap::new();
        poly.insert(vec![0; n], a.weight);
        for _ in 0..a.power {
            let mut next: BTreeMap<Vec<u32>, Rational> = BTreeMap::new();
            for (mono, c) in &poly {
                if a.shift != 0 {
                    *next.entry(mono.clone()).or_insert_with(Rational::zero) +=
                        *c * Rational::from_integer(a.shift as i128);
                }
                for (i, &u) in a.form.iter().enumerate() {
                    if u != 0 {
                        let mut e = mono.clone();
                        e[i] += 1;
                        *next.entry(e).or_insert_with(Rational::zero) += *c * Rational::from_integer(u as i128);
                    }
                }
            }
            poly = next;
        }
        for (mono, c) in poly {
            *total.entry(mono).or_insert_with(Rational::zero) += c;
        }
    }
    total.retain(|_, c| !c.is_zero());
    total
}

/// `true` when the expansion is exactly the target monomial.
pub fn symbolic_check(dec: &AtomDecomposition) -> bool {
    let e = expand(dec);
    e.len() == 1 && e.get(dec.target.exponents()) == Some(&Rational::one())
}

fn fmt_ratio(r: &Rational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut inner = String::new();
        for (i, &u) in self.form.iter().enumerate() {
            if u == 0 {
                continue;
            }
            let mag = u.unsigned_abs();
            let coef = if mag == 1 { String::new() } else { format!("{mag}*") };
            if inner.is_empty() {
                inner.push_str(if u < 0 { "-" } else { "" });
            } else {
                inner.push_str(if u < 0 { " - " } else { " + " });
            }
            inner.push_str(&format!("{coef}θ{}", i + 1));
        }
        if self.shift != 0 {
            let sep = if self.shift < 0 { " - " } else { " + " };
            inner.push_str(&format!("{sep}{}", self.shift.unsigned_abs()));
        }
        write!(f, "{} * ({})^{}", fmt_ratio(&self.weight), inner, self.power)
    }
}

/// Max relative error as printed by reports.
pub fn fmt_error(v: f64) -> String {
    fmt_f64(v)
}
