//! Structural checks on path measures: Markov, reciprocal and irreducibility
//! properties, transition densities and conditional factorizations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{check_coords, first_uncovered, DensePathMeasure, FiniteMeasure};
use crate::tensor::{self, MultiIndex};

/// Default tolerance for conditional-independence residuals.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Reconstruction tolerance for [`conditional_factorize`].
pub const FACTORIZE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    Markov,
    Reciprocal,
    IrreducibleMarkov,
    IrreducibleReciprocal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub time_indices: Vec<usize>,
    pub states: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub property: Property,
    pub holds: bool,
    pub worst_residual: f64,
    pub witness: Option<Witness>,
}

/// Worst conditional-independence defect of `A ⫫ B | C` under `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct CiResidual {
    pub residual: f64,
    /// Value of the `C` coordinates where the residual is attained.
    pub at: Option<Vec<usize>>,
}

/// Max over conditioning values `c` with positive mass of the total-variation
/// distance between the conditional law of `(A, B)` and the product of its
/// conditional marginals. Empty `A` or `B` gives 0.
pub fn ci_residual(m: &FiniteMeasure, a: &[usize], b: &[usize], c: &[usize]) -> Result<CiResidual> {
    let mut order = c.to_vec();
    order.extend_from_slice(a);
    order.extend_from_slice(b);
    check_coords(&order, m.rank())?;
    if a.is_empty() || b.is_empty() {
        return Ok(CiResidual { residual: 0.0, at: None });
    }
    let joint = m.marginal(&order)?;
    let shape = m.shape();
    let na: usize = a.iter().map(|&i| shape[i]).product();
    let nb: usize = b.iter().map(|&i| shape[i]).product();
    let c_shape = tensor::sub_shape(shape, c);
    let block = na * nb;
    let mut worst = CiResidual { residual: 0.0, at: None };
    let mut row = vec![0.0; na];
    let mut col = vec![0.0; nb];
    for (ci, cw) in joint.weights().chunks(block).enumerate() {
        let mass: f64 = cw.iter().sum();
        if mass <= 0.0 {
            continue;
        }
        row.iter_mut().for_each(|v| *v = 0.0);
        col.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..na {
            for j in 0..nb {
                let w = cw[i * nb + j] / mass;
                row[i] += w;
                col[j] += w;
            }
        }
        let mut tv = 0.0;
        for i in 0..na {
            for j in 0..nb {
                tv += (cw[i * nb + j] / mass - row[i] * col[j]).abs();
            }
        }
        let tv = 0.5 * tv;
        if tv > worst.residual {
            worst = CiResidual { residual: tv, at: Some(tensor::unravel(ci, &c_shape)) };
        }
    }
    Ok(worst)
}

fn witness(q: &DensePathMeasure, times: Vec<usize>, states: &[usize]) -> Witness {
    Witness {
        time_indices: times,
        states: states.iter().map(|&s| q.space().label(s).to_string()).collect(),
    }
}

fn report(property: Property, worst: f64, witness: Option<Witness>, tol: f64) -> StructureReport {
    StructureReport { property, holds: worst <= tol, worst_residual: worst, witness }
}

/// Past and future are conditionally independent given the present at every interior grid index.
pub fn is_markov(q: &DensePathMeasure, tol: f64) -> Result<StructureReport> {
    let k = q.n_times();
    let m = q.measure();
    let mut worst = 0.0;
    let mut wit = None;
    for t in 1..k.saturating_sub(1) {
        let past: Vec<usize> = (0..t).collect();
        let future: Vec<usize> = (t + 1..k).collect();
        let r = ci_residual(m, &past, &future, &[t])?;
        if r.residual > worst {
            worst = r.residual;
            wit = r.at.map(|s| witness(q, vec![t], &s));
        }
    }
    Ok(report(Property::Markov, worst, wit, tol))
}

/// Inside and outside of every grid window are conditionally independent given its endpoints.
pub fn is_reciprocal(q: &DensePathMeasure, tol: f64) -> Result<StructureReport> {
    let k = q.n_times();
    let mut worst = 0.0;
    let mut wit = None;
    for s in 0..k {
        for t in s + 1..k {
            let r = window_residual(q.measure(), s, t)?;
            if r.residual > worst {
                worst = r.residual;
                wit = r.at.map(|st| witness(q, vec![s, t], &st));
            }
        }
    }
    Ok(report(Property::Reciprocal, worst, wit, tol))
}

/// CI residual of `(X_{s+1..t-1}) ⫫ (X_{<s}, X_{>t}) | (X_s, X_t)`.
pub fn window_residual(m: &FiniteMeasure, s: usize, t: usize) -> Result<CiResidual> {
    let k = m.rank();
    let inside: Vec<usize> = (s + 1..t).collect();
    let outside: Vec<usize> = (0..s).chain(t + 1..k).collect();
    ci_residual(m, &inside, &outside, &[s, t])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IrreducibilityMode {
    MarkovPairs,
    ReciprocalTriples,
}

/// Exact support comparison of pair (or triple) marginals with the product of
/// one-time supports. The residual counts the mismatched cells.
pub fn is_irreducible(r: &DensePathMeasure, mode: IrreducibilityMode, tol: f64) -> Result<StructureReport> {
    let k = r.n_times();
    let sets: Vec<Vec<usize>> = match mode {
        IrreducibilityMode::MarkovPairs => (0..k).flat_map(|s| (s + 1..k).map(move |t| vec![s, t])).collect(),
        IrreducibilityMode::ReciprocalTriples => (0..k)
            .flat_map(|s| (s + 1..k).flat_map(move |u| (u + 1..k).map(move |t| vec![s, u, t])))
            .collect(),
    };
    let mut count = 0usize;
    let mut wit = None;
    for coords in sets {
        let mismatches = support_mismatches(r.measure(), &coords)?;
        if wit.is_none() {
            if let Some(cell) = mismatches.first() {
                wit = Some(witness(r, coords.clone(), cell));
            }
        }
        count += mismatches.len();
    }
    let property = match mode {
        IrreducibilityMode::MarkovPairs => Property::IrreducibleMarkov,
        IrreducibilityMode::ReciprocalTriples => Property::IrreducibleReciprocal,
    };
    let mut rep = report(property, count as f64, wit, tol);
    rep.holds = count == 0;
    Ok(rep)
}

/// Cells where `supp(m_coords)` and `⊗ supp(m_i)` disagree.
pub fn support_mismatches(m: &FiniteMeasure, coords: &[usize]) -> Result<Vec<Vec<usize>>> {
    let joint = m.marginal(coords)?;
    let singles: Vec<Vec<bool>> = coords
        .iter()
        .map(|&c| m.marginal(&[c]).map(|x| x.support()))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (cell, &w) in MultiIndex::new(joint.shape()).zip(joint.weights()) {
        let in_product = cell.iter().zip(&singles).all(|(&x, s)| s[x]);
        if in_product != (w > 0.0) {
            out.push(cell);
        }
    }
    Ok(out)
}

/// `dR_{s,t} / d(R_s ⊗ R_t)` on a pair of grid indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionDensity {
    pub s_index: usize,
    pub t_index: usize,
    pub n: usize,
    /// Row-major `n × n`, indexed `[x * n + y]`.
    pub values: Vec<f64>,
}

impl TransitionDensity {
    pub fn value(&self, x: usize, y: usize) -> f64 {
        self.values[x * self.n + y]
    }
}

pub fn transition_density(r: &DensePathMeasure, s: usize, t: usize) -> Result<TransitionDensity> {
    if s == t {
        return Err(Error::BadCoords(format!("transition density needs distinct indices, got {s} twice")));
    }
    let pair = r.marginal(&[s, t])?;
    let rs = r.marginal(&[s])?;
    let rt = r.marginal(&[t])?;
    let n = r.n_states();
    let mut values = vec![0.0; n * n];
    for x in 0..n {
        for y in 0..n {
            let d = rs.weights()[x] * rt.weights()[y];
            if d > 0.0 {
                values[x * n + y] = pair.weights()[x * n + y] / d;
            }
        }
    }
    Ok(TransitionDensity { s_index: s, t_index: t, n, values })
}

/// `dp/dr = α(A, C) · β(B, C) · γ(C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    shape: Vec<usize>,
    a: Vec<usize>,
    b: Vec<usize>,
    c: Vec<usize>,
    /// Indexed by `(A, C)` in that coordinate order.
    pub alpha: Vec<f64>,
    /// Indexed by `(B, C)`.
    pub beta: Vec<f64>,
    /// Indexed by `C`.
    pub gamma: Vec<f64>,
}

impl Factorization {
    fn sub(&self, cell: &[usize], first: &[usize]) -> usize {
        let mut coords = first.to_vec();
        coords.extend_from_slice(&self.c);
        tensor::ravel_sub(cell, &coords, &self.shape)
    }

    pub fn alpha_at(&self, cell: &[usize]) -> f64 {
        self.alpha[self.sub(cell, &self.a)]
    }

    pub fn beta_at(&self, cell: &[usize]) -> f64 {
        self.beta[self.sub(cell, &self.b)]
    }

    pub fn gamma_at(&self, cell: &[usize]) -> f64 {
        self.gamma[tensor::ravel_sub(cell, &self.c, &self.shape)]
    }

    /// `α · β · γ` on every cell.
    pub fn reconstruct(&self) -> Vec<f64> {
        MultiIndex::new(&self.shape)
            .map(|cell| self.alpha_at(&cell) * self.beta_at(&cell) * self.gamma_at(&cell))
            .collect()
    }
}

/// Radon-Nikodym derivative `p/r`, zero off the support of `r`.
pub fn density(p: &FiniteMeasure, r: &FiniteMeasure) -> Result<Vec<f64>> {
    p.ensure_same_shape(r)?;
    if let Some(flat) = first_uncovered(p, r) {
        return Err(Error::NotAbsolutelyContinuous { cell: p.index(flat) });
    }
    Ok(p.weights()
        .iter()
        .zip(r.weights())
        .map(|(&a, &b)| if b > 0.0 { a / b } else { 0.0 })
        .collect())
}

/// Splits the density of `p` with respect to `r` along a conditional independence `A ⫫ B | C` of `r`.
pub fn conditional_factorize(
    p: &FiniteMeasure,
    r: &FiniteMeasure,
    a: &[usize],
    b: &[usize],
    c: &[usize],
) -> Result<Factorization> {
    p.ensure_same_shape(r)?;
    let mut all = a.to_vec();
    all.extend_from_slice(b);
    all.extend_from_slice(c);
    check_coords(&all, p.rank())?;
    if all.len() != p.rank() {
        return Err(Error::BadCoords("A, B and C must partition the coordinates".into()));
    }
    p.ensure_probability()?;
    if let Some(flat) = first_uncovered(p, r) {
        return Err(Error::NotAbsolutelyContinuous { cell: p.index(flat) });
    }
    let ci = ci_residual(r, a, b, c)?;
    if ci.residual > DEFAULT_TOL {
        return Err(Error::NotConditionallyIndependent { residual: ci.residual });
    }
    let ratio = |coords: &[usize]| -> Result<Vec<f64>> {
        let pm = p.marginal(coords)?;
        let rm = r.marginal(coords)?;
        Ok(pm
            .weights()
            .iter()
            .zip(rm.weights())
            .map(|(&x, &y)| if y > 0.0 { x / y } else { 0.0 })
            .collect())
    };
    let gamma = ratio(c)?;
    let c_shape = tensor::sub_shape(p.shape(), c);
    let c_len = tensor::numel(&c_shape);
    let divide = |mut v: Vec<f64>| {
        for (i, x) in v.iter_mut().enumerate() {
            let g = gamma[i % c_len];
            *x = if g > 0.0 { *x / g } else { 0.0 };
        }
        v
    };
    let ac: Vec<usize> = a.iter().chain(c).copied().collect();
    let bc: Vec<usize> = b.iter().chain(c).copied().collect();
    let alpha = divide(ratio(&ac)?);
    let beta = divide(ratio(&bc)?);
    Ok(Factorization {
        shape: p.shape().to_vec(),
        a: a.to_vec(),
        b: b.to_vec(),
        c: c.to_vec(),
        alpha,
        beta,
        gamma,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorizationReport {
    pub indices: Vec<usize>,
    /// State tuples where the joint support and the product of supports disagree.
    pub violations: Vec<Vec<usize>>,
}

impl TensorizationReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// For a reciprocal, triple-irreducible `R`, the joint support at any set of
/// times is the product of the one-time supports.
pub fn tensorization_check(r: &DensePathMeasure, indices: &[usize]) -> Result<TensorizationReport> {
    let rec = is_reciprocal(&r.normalize()?, DEFAULT_TOL)?;
    if !rec.holds {
        return Err(Error::PreconditionFailed(format!(
            "reference is not reciprocal (residual {:e})",
            rec.worst_residual
        )));
    }
    let irr = is_irreducible(r, IrreducibilityMode::ReciprocalTriples, 0.0)?;
    if !irr.holds {
        return Err(Error::PreconditionFailed("reference is not irreducible on triples".into()));
    }
    let violations = support_mismatches(r.measure(), indices)?;
    Ok(TensorizationReport { indices: indices.to_vec(), violations })
}

/// `Q` conditioned on `X_0 = a, X_{K-1} = b`, normalized.
pub fn bridge(q: &DensePathMeasure, a: usize, b: usize) -> Result<DensePathMeasure> {
    let last = q.n_times() - 1;
    let conditioned = q.reweighted(|p| if p[0] == a && p[last] == b { 1.0 } else { 0.0 })?;
    conditioned.normalize()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{MarkovPathMeasure, StateSpace, TimeGrid};

    fn chain() -> DensePathMeasure {
        MarkovPathMeasure::new(
            StateSpace::indexed(2).unwrap(),
            TimeGrid::uniform(4).unwrap(),
            vec![0.3, 0.7],
            vec![vec![0.6, 0.4, 0.1, 0.9], vec![0.5, 0.5, 0.2, 0.8], vec![0.3, 0.7, 0.9, 0.1]],
        )
        .unwrap()
        .to_dense(1 << 10)
        .unwrap()
    }

    #[test]
    fn chain_is_markov_and_reciprocal() {
        let q = chain();
        let m = is_markov(&q, DEFAULT_TOL).unwrap();
        assert!(m.holds && m.worst_residual <= 1e-12);
        assert!(is_reciprocal(&q, DEFAULT_TOL).unwrap().holds);
        let irr = is_irreducible(&q, IrreducibilityMode::ReciprocalTriples, 0.0).unwrap();
        assert!(irr.holds);
        assert!(tensorization_check(&q, &[0, 1, 2, 3]).unwrap().holds());
    }

    #[test]
    fn endpoint_mixture_is_reciprocal_not_markov() {
        let q = chain();
        let last = q.n_times() - 1;
        let mixed = q.reweighted(|p| if p[0] == p[last] { 5.0 } else { 1.0 }).unwrap().normalize().unwrap();
        assert!(!is_markov(&mixed, DEFAULT_TOL).unwrap().holds);
        assert!(is_reciprocal(&mixed, DEFAULT_TOL).unwrap().holds);
        let b = bridge(&mixed, 0, 1).unwrap();
        assert!(is_markov(&b, DEFAULT_TOL).unwrap().holds);
    }

    #[test]
    fn density_of_deterministic_coupling() {
        let q = DensePathMeasure::new(
            StateSpace::indexed(2).unwrap(),
            TimeGrid::uniform(2).unwrap(),
            vec![0.5, 0.0, 0.0, 0.5],
        )
        .unwrap();
        let d = transition_density(&q, 0, 1).unwrap();
        assert_eq!(d.values, vec![2.0, 0.0, 0.0, 2.0]);
        assert!(transition_density(&q, 1, 1).is_err());
    }

    #[test]
    fn factorization_of_product_density() {
        let r = FiniteMeasure::new(vec![2, 3, 2], vec![1.0 / 12.0; 12]).unwrap();
        let u = [1.0, 3.0];
        let v = [2.0, 1.0];
        let mut w = Vec::new();
        for cell in MultiIndex::new(&[2, 3, 2]) {
            w.push(u[cell[0]] * v[cell[2]]);
        }
        let total: f64 = w.iter().sum();
        let p = FiniteMeasure::new(vec![2, 3, 2], w.iter().map(|x| x / total).collect()).unwrap();
        let f = conditional_factorize(&p, &r, &[0], &[2], &[1]).unwrap();
        let d = density(&p, &r).unwrap();
        for (x, y) in f.reconstruct().iter().zip(&d) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((f.alpha[1 * 3] / f.alpha[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn factorization_rejects_dependent_reference() {
        let r = FiniteMeasure::new(vec![2, 2], vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        let res = conditional_factorize(&r, &r, &[0], &[1], &[]);
        assert!(matches!(res, Err(Error::NotConditionallyIndependent { .. })));
    }
}
