use std::collections::BTreeMap;

use super::{check_coords, DensePathMeasure, FiniteMeasure, MarkovPathMeasure};
use crate::error::{Error, Result};
use crate::guard;
use crate::tensor;

/// Tolerance for the product test in [`superadditivity_check`].
pub const PRODUCT_TOL: f64 = 1e-10;

/// Densifies a chain: `weight(ω) = init(ω_0) · Π_k kernel[k][ω_k][ω_{k+1}]`.
pub fn markov_to_dense(m: &MarkovPathMeasure, limit: usize) -> Result<DensePathMeasure> {
    let n = m.space().len();
    let k = m.grid().len();
    let cells = guard::ensure_cells(guard::cell_count(n, k), limit)?;
    // prefix weights, extended one coordinate at a time
    let mut w = m.init().to_vec();
    for step in 0..k - 1 {
        let kernel = &m.kernels()[step];
        let mut next = vec![0.0; w.len() * n];
        for (prefix, &pw) in w.iter().enumerate() {
            if pw == 0.0 {
                continue;
            }
            let last = prefix % n;
            for y in 0..n {
                next[prefix * n + y] = pw * kernel[last * n + y];
            }
        }
        w = next;
    }
    debug_assert_eq!(w.len(), cells);
    let measure = FiniteMeasure::from_parts(vec![n; k], w)?;
    DensePathMeasure::from_measure(m.space().clone(), m.grid().clone(), measure)
}

/// Law of the selected grid coordinates.
pub fn marginal(q: &DensePathMeasure, coords: &[usize]) -> Result<FiniteMeasure> {
    q.marginal(coords)
}

/// A measure split into the law of some coordinates and the conditional law of the rest.
#[derive(Debug, Clone, PartialEq)]
pub struct Disintegration {
    shape: Vec<usize>,
    phi_coords: Vec<usize>,
    rest_coords: Vec<usize>,
    pub pushforward: FiniteMeasure,
    /// Conditional probability of the remaining coordinates (ascending order),
    /// keyed by the value of the conditioning coordinates. Present exactly where
    /// the pushforward is positive.
    pub kernels: BTreeMap<Vec<usize>, FiniteMeasure>,
}

impl Disintegration {
    pub fn phi_coords(&self) -> &[usize] {
        &self.phi_coords
    }

    pub fn rest_coords(&self) -> &[usize] {
        &self.rest_coords
    }

    pub fn kernel(&self, b: &[usize]) -> Option<&FiniteMeasure> {
        self.kernels.get(b)
    }

    /// `Σ_b kernel(b) · pushforward(b)` in the original coordinates.
    pub fn reconstruct(&self) -> FiniteMeasure {
        let mut out = vec![0.0; tensor::numel(&self.shape)];
        let mut full = vec![0; self.shape.len()];
        for (b, kernel) in &self.kernels {
            let mass = self.pushforward.get(b);
            for (c, &v) in self.phi_coords.iter().zip(b) {
                full[*c] = v;
            }
            for (flat, &w) in kernel.weights().iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let rest = kernel.index(flat);
                for (c, &v) in self.rest_coords.iter().zip(&rest) {
                    full[*c] = v;
                }
                out[tensor::ravel(&full, &self.shape)] += w * mass;
            }
        }
        FiniteMeasure { shape: self.shape.clone(), weights: out }
    }
}

/// Disintegrates `q` with respect to the projection onto `phi_coords`.
pub fn disintegrate(q: &FiniteMeasure, phi_coords: &[usize]) -> Result<Disintegration> {
    check_coords(phi_coords, q.rank())?;
    let rest_coords: Vec<usize> = (0..q.rank()).filter(|c| !phi_coords.contains(c)).collect();
    let pushforward = q.marginal(phi_coords)?;
    let rest_shape = tensor::sub_shape(q.shape(), &rest_coords);
    let rest_len = tensor::numel(&rest_shape);
    let mut raw: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
    let mut idx = vec![0; q.rank()];
    for (flat, &w) in q.weights().iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        tensor::unravel_into(flat, q.shape(), &mut idx);
        let b: Vec<usize> = phi_coords.iter().map(|&c| idx[c]).collect();
        let r = tensor::ravel_sub(&idx, &rest_coords, q.shape());
        raw.entry(b).or_insert_with(|| vec![0.0; rest_len])[r] += w;
    }
    let mut kernels = BTreeMap::new();
    for (b, weights) in raw {
        let mass = pushforward.get(&b);
        if mass <= 0.0 {
            continue;
        }
        let weights = weights.into_iter().map(|w| w / mass).collect();
        kernels.insert(b, FiniteMeasure { shape: rest_shape.clone(), weights });
    }
    Ok(Disintegration {
        shape: q.shape().to_vec(),
        phi_coords: phi_coords.to_vec(),
        rest_coords,
        pushforward,
        kernels,
    })
}

/// `H(P|R) = Σ P log(P/R)`, `+∞` unless `P ≪ R`.
pub fn relative_entropy(p: &FiniteMeasure, r: &FiniteMeasure) -> Result<f64> {
    p.ensure_same_shape(r)?;
    p.ensure_probability()?;
    let mut h = 0.0;
    for (&pw, &rw) in p.weights().iter().zip(r.weights()) {
        if pw == 0.0 {
            continue;
        }
        if rw == 0.0 {
            return Ok(f64::INFINITY);
        }
        h += pw * (pw / rw).ln();
    }
    Ok(h)
}

impl DensePathMeasure {
    pub fn relative_entropy(&self, r: &DensePathMeasure) -> Result<f64> {
        self.same_frame(r)?;
        relative_entropy(self.measure(), r.measure())
    }
}

/// Support inclusion `supp(p) ⊆ supp(q)`.
pub fn abs_continuous(p: &FiniteMeasure, q: &FiniteMeasure) -> Result<bool> {
    p.ensure_same_shape(q)?;
    Ok(first_uncovered(p, q).is_none())
}

pub(crate) fn first_uncovered(p: &FiniteMeasure, q: &FiniteMeasure) -> Option<usize> {
    p.weights().iter().zip(q.weights()).position(|(&a, &b)| a > 0.0 && b == 0.0)
}

fn equivalent(p: &FiniteMeasure, q: &FiniteMeasure) -> bool {
    p.weights().iter().zip(q.weights()).all(|(&a, &b)| (a > 0.0) == (b > 0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConditioningViolation {
    /// The two sides of the absolute-continuity equivalence disagree.
    Equivalence { joint: bool, split: bool },
    /// The product hypothesis holds but the conditional law given `y` is not equivalent to the marginal.
    ConditioningTrick { y: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningReport {
    /// `p ≪ q`.
    pub joint_ac: bool,
    /// `φ♯p ≪ φ♯q`.
    pub pushforward_ac: bool,
    /// Values `b ∈ supp(φ♯p)` with `p^{φ=b} ≪̸ q^{φ=b}`.
    pub failing_fibers: Vec<Vec<usize>>,
    /// `q_X ⊗ q_Y` and `q` are mutually absolutely continuous, where `Y` is
    /// the conditioning coordinates and `X` the rest.
    pub product_equivalent: bool,
    /// Values `y ∈ supp(q_Y)` whose conditional law `q_X^{Y=y}` is not equivalent to `q_X`.
    pub ct_witnesses: Vec<Vec<usize>>,
    pub violations: Vec<ConditioningViolation>,
}

impl ConditioningReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Exhaustively checks the conditioning equivalence and the conditioning trick.
pub fn check_conditioning(p: &FiniteMeasure, q: &FiniteMeasure, phi_coords: &[usize]) -> Result<ConditioningReport> {
    p.ensure_same_shape(q)?;
    let dp = disintegrate(p, phi_coords)?;
    let dq = disintegrate(q, phi_coords)?;

    let joint_ac = first_uncovered(p, q).is_none();
    let pushforward_ac = first_uncovered(&dp.pushforward, &dq.pushforward).is_none();
    let mut failing_fibers = Vec::new();
    for (b, kp) in &dp.kernels {
        match dq.kernels.get(b) {
            Some(kq) if first_uncovered(kp, kq).is_none() => {}
            _ => failing_fibers.push(b.clone()),
        }
    }
    let split = pushforward_ac && failing_fibers.is_empty();

    let mut violations = Vec::new();
    if joint_ac != split {
        violations.push(ConditioningViolation::Equivalence { joint: joint_ac, split });
    }

    // conditioning trick with X = rest, Y = phi
    let rest = dq.rest_coords().to_vec();
    let mut order = rest.clone();
    order.extend_from_slice(phi_coords);
    let q_xy = q.permuted(&order)?;
    let q_x = q.marginal(&rest)?;
    let q_y = &dq.pushforward;
    let product = q_x.product(q_y);
    let product_equivalent = equivalent(&product, &q_xy);

    let mut ct_witnesses = Vec::new();
    if q.mass() > 0.0 {
        let q_x_norm = q_x.normalized()?;
        for (y, kernel) in &dq.kernels {
            if !equivalent(kernel, &q_x_norm) {
                ct_witnesses.push(y.clone());
            }
        }
    }
    if product_equivalent {
        for y in &ct_witnesses {
            violations.push(ConditioningViolation::ConditioningTrick { y: y.clone() });
        }
    }

    Ok(ConditioningReport { joint_ac, pushforward_ac, failing_fibers, product_equivalent, ct_witnesses, violations })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Superadditivity {
    /// `H(π | r1 ⊗ r2)`.
    pub lhs: f64,
    /// `H(π_1 | r1) + H(π_2 | r2)`.
    pub rhs: f64,
    pub gap: f64,
    /// `π` equals the product of its marginals within [`PRODUCT_TOL`] in total variation.
    pub is_product: bool,
}

/// Compares the entropy of a coupling with the entropies of its two marginals.
/// The first `r1.rank()` coordinates of `pi` belong to the first factor.
pub fn superadditivity_check(pi: &FiniteMeasure, r1: &FiniteMeasure, r2: &FiniteMeasure) -> Result<Superadditivity> {
    let reference = r1.product(r2);
    pi.ensure_same_shape(&reference)?;
    pi.ensure_probability()?;
    if let Some(flat) = first_uncovered(pi, &reference) {
        return Err(Error::NotAbsolutelyContinuous { cell: pi.index(flat) });
    }
    let k1 = r1.rank();
    let first: Vec<usize> = (0..k1).collect();
    let second: Vec<usize> = (k1..pi.rank()).collect();
    let pi1 = pi.marginal(&first)?;
    let pi2 = pi.marginal(&second)?;
    let lhs = relative_entropy(pi, &reference)?;
    let rhs = relative_entropy(&pi1, r1)? + relative_entropy(&pi2, r2)?;
    let is_product = pi.tv_distance(&pi1.product(&pi2))? <= PRODUCT_TOL;
    Ok(Superadditivity { lhs, rhs, gap: lhs - rhs, is_product })
}
