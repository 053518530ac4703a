//! Slow, direct minimizer of `H(Q|R)` over all path measures, used to cross-check
//! the fitting solvers on small problems.
//!
//! Variables are the charged paths that no zero target excludes. The constraints
//! `A q = b` are the positive-target categories of every block; Newton steps on
//! the KKT system of `Σ q log(q/r)` are taken from a feasible-interior guess and
//! damped by backtracking on the residual norm.

use nalgebra::{DMatrix, DVector};

use super::{ensure_feasible, ProblemSpec};
use crate::error::{Error, Result};
use crate::measure::{DensePathMeasure, FiniteMeasure};

/// Stopping threshold on the Euclidean norm of the KKT residual.
pub const ORACLE_TOL: f64 = 1e-11;
const MAX_STEPS: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub p: DensePathMeasure,
    pub objective: f64,
    pub kkt_residual: f64,
    pub steps: usize,
}

fn kkt_residual(a: &DMatrix<f64>, b: &DVector<f64>, r: &DVector<f64>, p: &DVector<f64>, nu: &DVector<f64>) -> (DVector<f64>, f64) {
    let g = p.zip_map(r, |p, r| (p / r).ln() + 1.0);
    let dual = &g + a.transpose() * nu;
    let primal = a * p - b;
    let norm = (dual.norm_squared() + primal.norm_squared()).sqrt();
    (g, norm)
}

/// Minimizes `H(Q|R)` subject to every constraint of `spec`. `limit` caps the
/// number of path cells.
pub fn oracle_minimize(spec: &ProblemSpec, limit: usize) -> Result<OracleSolution> {
    ensure_feasible(spec, limit)?;
    let rd = spec.dense_reference(limit)?;
    let blocks = spec.block_maps();

    let mut vars = Vec::new();
    let mut cats: Vec<Vec<usize>> = Vec::new();
    for (flat, path) in rd.paths() {
        if rd.weights()[flat] == 0.0 {
            continue;
        }
        let sig: Vec<usize> = blocks.iter().map(|(stat, _)| stat.category(&path)).collect();
        if sig.iter().zip(&blocks).any(|(&c, (_, t))| t[c] == 0.0) {
            continue;
        }
        vars.push(flat);
        cats.push(sig);
    }
    let mut rows: Vec<(usize, usize, f64)> = Vec::new();
    for (b, (_, target)) in blocks.iter().enumerate() {
        rows.extend(target.iter().enumerate().filter(|(_, &t)| t > 0.0).map(|(c, &t)| (b, c, t)));
    }
    let nv = vars.len();
    let a = if rows.is_empty() {
        DMatrix::from_element(1, nv, 1.0)
    } else {
        DMatrix::from_fn(rows.len(), nv, |i, j| if cats[j][rows[i].0] == rows[i].1 { 1.0 } else { 0.0 })
    };
    let b = if rows.is_empty() { DVector::from_element(1, 1.0) } else { DVector::from_iterator(rows.len(), rows.iter().map(|r| r.2)) };
    let r = DVector::from_iterator(nv, vars.iter().map(|&i| rd.weights()[i]));

    let mut p = &r / r.sum();
    let mut nu = DVector::zeros(a.nrows());
    let (mut g, mut norm) = kkt_residual(&a, &b, &r, &p, &nu);
    let mut steps = 0;
    while norm > ORACLE_TOL && steps < MAX_STEPS {
        steps += 1;
        let ax = DMatrix::from_fn(a.nrows(), nv, |i, j| a[(i, j)] * p[j]);
        let m = &ax * a.transpose();
        let rhs = (&a * &p - &b) - &ax * &g;
        let svd = m.svd(true, true);
        let cutoff = 1e-13 * svd.singular_values.max();
        let w = svd.solve(&rhs, cutoff).map_err(|e| Error::Internal(format!("oracle solve failed: {e}")))?;
        let dp = -(&g + a.transpose() * &w).component_mul(&p);
        let dnu = &w - &nu;
        let mut t = 1.0;
        loop {
            let cand = &p + &dp * t;
            if cand.iter().all(|&x| x > 0.0) {
                let cnu = &nu + &dnu * t;
                let (cg, cnorm) = kkt_residual(&a, &b, &r, &cand, &cnu);
                if cnorm <= (1.0 - 0.01 * t) * norm || (cnorm < norm && t < 1e-3) {
                    p = cand;
                    nu = cnu;
                    g = cg;
                    norm = cnorm;
                    break;
                }
            }
            t *= 0.5;
            if t < 1e-14 {
                // no further progress is possible at machine precision
                return finish(&rd, &vars, &p, norm, steps);
            }
        }
    }
    finish(&rd, &vars, &p, norm, steps)
}

fn finish(rd: &DensePathMeasure, vars: &[usize], p: &DVector<f64>, norm: f64, steps: usize) -> Result<OracleSolution> {
    let mut weights = vec![0.0; rd.weights().len()];
    for (&i, &v) in vars.iter().zip(p.iter()) {
        weights[i] = v;
    }
    let mass: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= mass;
    }
    let measure = FiniteMeasure::from_parts(rd.measure().shape().to_vec(), weights)?;
    let p = DensePathMeasure::from_measure(rd.space().clone(), rd.grid().clone(), measure)?;
    let objective = p.relative_entropy(rd)?;
    Ok(OracleSolution { p, objective, kkt_residual: norm, steps })
}
