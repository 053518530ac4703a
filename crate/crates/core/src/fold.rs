//! Folding a path at time `λ` into a pair of legs, one running forward from 0
//! and one running backward from 1.
//!
//! On a finite grid the legs move as staircases: at folded time `τ` the
//! forward leg sits at the last grid time `≤ λτ` and the backward leg at the
//! first grid time `≥ 1 - (1-λ)τ`. The folded grid consists of the folded
//! times where either leg jumps, plus 0 and 1. A window `(f, b)` visited by the
//! legs is exactly a reciprocal conditioning pair, so the folded measure is
//! Markov at that step iff the inside and outside of `(f, b)` are
//! conditionally independent given its endpoints.

use num_rational::Rational64;

use crate::error::{Error, Result};
use crate::guard;
use crate::markov::{is_markov, is_reciprocal, StructureReport};
use crate::measure::{DensePathMeasure, FiniteMeasure, StateSpace, TimeGrid};
use crate::tensor::{self, MultiIndex};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldParameters {
    lambda: Rational64,
    original: TimeGrid,
    folded: TimeGrid,
    /// `(forward index, backward index)` into the original grid for each folded index.
    index_map: Vec<(usize, usize)>,
}

impl FoldParameters {
    pub fn new(grid: &TimeGrid, lambda: Rational64) -> Result<Self> {
        let zero = Rational64::from_integer(0);
        let one = Rational64::from_integer(1);
        if lambda <= zero || lambda >= one {
            return Err(Error::BadFoldGrid(format!("lambda {lambda} is not in (0, 1)")));
        }
        let mut taus = vec![zero, one];
        for &t in grid.times() {
            if t <= lambda {
                taus.push(t / lambda);
            }
            if t >= lambda {
                taus.push((one - t) / (one - lambda));
            }
        }
        taus.sort();
        taus.dedup();
        let index_map = taus
            .iter()
            .map(|&tau| {
                let fwd = grid.times().iter().rposition(|&t| t <= lambda * tau).unwrap_or(0);
                let target = one - (one - lambda) * tau;
                let bwd = grid.times().iter().position(|&t| t >= target).unwrap_or(grid.len() - 1);
                (fwd, bwd)
            })
            .collect();
        Ok(Self { lambda, original: grid.clone(), folded: TimeGrid::new(taus)?, index_map })
    }

    /// Validates a caller-supplied index map against the one `λ` induces.
    pub fn from_index_map(grid: &TimeGrid, lambda: Rational64, index_map: Vec<(usize, usize)>) -> Result<Self> {
        let params = Self::new(grid, lambda)?;
        let k = grid.len();
        let mut covered = vec![false; k];
        for &(f, b) in &index_map {
            if f >= k || b >= k {
                return Err(Error::BadFoldGrid(format!("index pair ({f}, {b}) out of range")));
            }
            covered[f] = true;
            covered[b] = true;
        }
        if let Some(j) = covered.iter().position(|c| !c) {
            return Err(Error::BadFoldGrid(format!("original index {j} is not covered")));
        }
        if index_map != params.index_map {
            return Err(Error::BadFoldGrid(format!(
                "index map {:?} does not match lambda {lambda} (expected {:?})",
                index_map, params.index_map
            )));
        }
        Ok(params)
    }

    pub fn lambda(&self) -> Rational64 {
        self.lambda
    }

    pub fn original_grid(&self) -> &TimeGrid {
        &self.original
    }

    pub fn folded_grid(&self) -> &TimeGrid {
        &self.folded
    }

    pub fn index_map(&self) -> &[(usize, usize)] {
        &self.index_map
    }

    /// Folded index at which each original index is first visited, with the leg (`true` = forward).
    pub fn first_visit(&self) -> Vec<(usize, bool)> {
        let mut out = vec![None; self.original.len()];
        for (j, &(f, b)) in self.index_map.iter().enumerate() {
            if out[f].is_none() {
                out[f] = Some((j, true));
            }
            if out[b].is_none() {
                out[b] = Some((j, false));
            }
        }
        out.into_iter().map(|v| v.expect("every index is covered")).collect()
    }
}

/// A set of `λ` whose folds together visit every window `(k, l)`, `k < l`, of the grid.
pub fn admissible_lambdas(grid: &TimeGrid) -> Vec<Rational64> {
    let one = Rational64::from_integer(1);
    let two = Rational64::from_integer(2);
    let t = grid.times();
    let k = t.len();
    let mut out = vec![t[1] / two, (one + t[k - 2]) / two];
    for a in 1..k {
        for b in a + 1..k - 1 {
            out.push(t[a] / (one - (t[b] - t[a])));
        }
    }
    out.sort();
    out.dedup();
    out
}

fn pair_space(space: &StateSpace) -> StateSpace {
    space.paired()
}

/// Pushforward of `q` under the fold.
pub fn fold(q: &DensePathMeasure, params: &FoldParameters, limit: usize) -> Result<DensePathMeasure> {
    if q.grid() != params.original_grid() {
        return Err(Error::BadFoldGrid("fold parameters were built for a different grid".into()));
    }
    let n = q.n_states();
    let kf = params.folded.len();
    guard::ensure_cells(guard::cell_count(n * n, kf), limit)?;
    let shape = vec![n * n; kf];
    let mut weights = vec![0.0; tensor::numel(&shape)];
    let mut cell = vec![0; kf];
    for (flat, path) in q.paths() {
        let w = q.weights()[flat];
        if w == 0.0 {
            continue;
        }
        for (j, &(f, b)) in params.index_map.iter().enumerate() {
            cell[j] = path[f] * n + path[b];
        }
        weights[tensor::ravel(&cell, &shape)] += w;
    }
    DensePathMeasure::from_measure(
        pair_space(q.space()),
        params.folded.clone(),
        FiniteMeasure::from_parts(shape, weights)?,
    )
}

/// The original path encoded by a folded path, if the legs agree.
pub fn unfold_path(cell: &[usize], n: usize, params: &FoldParameters) -> Option<Vec<usize>> {
    let mut path: Vec<Option<usize>> = vec![None; params.original.len()];
    for (j, &(f, b)) in params.index_map.iter().enumerate() {
        let (x, y) = (cell[j] / n, cell[j] % n);
        for (i, s) in [(f, x), (b, y)] {
            match path[i] {
                None => path[i] = Some(s),
                Some(v) if v == s => {}
                Some(_) => return None,
            }
        }
    }
    path.into_iter().collect()
}

/// Inverse of [`fold`] on its image.
pub fn unfold(qf: &DensePathMeasure, space: &StateSpace, params: &FoldParameters) -> Result<DensePathMeasure> {
    let n = space.len();
    if qf.n_states() != n * n || qf.grid() != params.folded_grid() {
        return Err(Error::BadFoldGrid("folded measure does not match the fold parameters".into()));
    }
    let k = params.original.len();
    let shape = vec![n; k];
    let mut weights = vec![0.0; tensor::numel(&shape)];
    for (cell, &w) in MultiIndex::new(qf.measure().shape()).zip(qf.weights()) {
        if w == 0.0 {
            continue;
        }
        let path = unfold_path(&cell, n, params).ok_or(Error::InconsistentSupport { cell: cell.clone() })?;
        let folded_back: Vec<usize> = params.index_map.iter().map(|&(f, b)| path[f] * n + path[b]).collect();
        if folded_back != cell {
            return Err(Error::InconsistentSupport { cell });
        }
        weights[tensor::ravel(&path, &shape)] += w;
    }
    DensePathMeasure::from_measure(space.clone(), params.original.clone(), FiniteMeasure::from_parts(shape, weights)?)
}

/// Reciprocity decided through folding: every admissible fold must be Markov.
pub fn reciprocal_by_folding(q: &DensePathMeasure, tol: f64, limit: usize) -> Result<bool> {
    for lambda in admissible_lambdas(q.grid()) {
        let params = FoldParameters::new(q.grid(), lambda)?;
        if !is_markov(&fold(q, &params, limit)?, tol)?.holds {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Markov report of every admissible fold alongside the direct reciprocity report.
pub fn fold_reports(q: &DensePathMeasure, tol: f64, limit: usize) -> Result<(StructureReport, Vec<(Rational64, StructureReport)>)> {
    let direct = is_reciprocal(q, tol)?;
    let mut folds = Vec::new();
    for lambda in admissible_lambdas(q.grid()) {
        let params = FoldParameters::new(q.grid(), lambda)?;
        folds.push((lambda, is_markov(&fold(q, &params, limit)?, tol)?));
    }
    Ok((direct, folds))
}
