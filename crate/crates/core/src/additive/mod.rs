//! Interval-additive path functionals and their reduction to per-time potentials.

mod decompose;
mod potentials;

pub use decompose::{split_on_support, sum_decompose, CycleCertificate, SumDecomposition};
pub use potentials::{
    decompose_to_potentials, density_measurability_check, localize_functional, Localized,
    MeasurabilityReport, Potentials,
};

use crate::error::{Error, Result};
use crate::markov::{is_markov, DEFAULT_TOL};
use crate::measure::{first_uncovered, DensePathMeasure};
use crate::tensor;

/// Relative tolerance for the content identities.
pub const CONTENT_TOL: f64 = 1e-9;

/// Equality on `[-∞, ∞)` with a relative tolerance; `-∞` only equals `-∞`.
pub fn ext_close(a: f64, b: f64, tol: f64) -> bool {
    if a == f64::NEG_INFINITY || b == f64::NEG_INFINITY {
        return a == b;
    }
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// `a - b` where a `-∞` minuend absorbs.
fn ext_sub(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        a
    } else {
        a - b
    }
}

/// An interval of grid indices; `Open(k, l)` is the open time interval `(t_k, t_l)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interval {
    Closed(usize, usize),
    Open(usize, usize),
    /// `(t_k, t_l]`
    LeftOpen(usize, usize),
    /// `[t_k, t_l)`
    RightOpen(usize, usize),
}

impl Interval {
    /// Covered slots: `2k` is the point `t_k`, `2k + 1` the gap `(t_k, t_{k+1})`.
    fn slots(self) -> std::ops::Range<usize> {
        match self {
            Interval::Closed(k, l) if k <= l => 2 * k..2 * l + 1,
            Interval::Open(k, l) if k < l => 2 * k + 1..2 * l,
            Interval::LeftOpen(k, l) if k < l => 2 * k + 1..2 * l + 1,
            Interval::RightOpen(k, l) if k < l => 2 * k..2 * l,
            _ => 0..0,
        }
    }
}

/// Values of a content on one path, determined by its values on closed grid intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct Content {
    k: usize,
    closed: Vec<f64>,
}

impl Content {
    pub fn n_times(&self) -> usize {
        self.k
    }

    pub fn closed(&self, k: usize, l: usize) -> f64 {
        self.closed[k * self.k + l]
    }

    pub fn value(&self, iv: Interval) -> f64 {
        match iv {
            Interval::Closed(k, l) if k <= l => self.closed(k, l),
            Interval::Open(k, l) if k < l => {
                ext_sub(ext_sub(self.closed(k, l), self.closed(k, k)), self.closed(l, l))
            }
            Interval::LeftOpen(k, l) if k < l => ext_sub(self.closed(k, l), self.closed(k, k)),
            Interval::RightOpen(k, l) if k < l => ext_sub(self.closed(k, l), self.closed(l, l)),
            _ => 0.0,
        }
    }

    /// Value on a union of pairwise disjoint intervals.
    pub fn value_of_union(&self, ivs: &[Interval]) -> Result<f64> {
        let mut used = vec![false; 2 * self.k];
        for iv in ivs {
            for slot in iv.slots() {
                if slot >= used.len() {
                    return Err(Error::BadCoords(format!("{iv:?} is outside the grid")));
                }
                if used[slot] {
                    return Err(Error::InvalidInput(format!("{iv:?} overlaps another interval")));
                }
                used[slot] = true;
            }
        }
        Ok(ivs.iter().map(|&iv| self.value(iv)).sum())
    }
}

/// Builds a content from closed-interval values `values[k * K + l]`, `k ≤ l`,
/// after checking the quadruple rule
/// `A[s,t] + A[u,v] = A[s,v] + A[u,t]` for all `s ≤ u ≤ v ≤ t`.
pub fn content_from_closed(n_times: usize, values: &[f64]) -> Result<Content> {
    let k = n_times;
    if values.len() != k * k {
        return Err(Error::InvalidInput(format!("expected {} closed values, got {}", k * k, values.len())));
    }
    if values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::InvalidInput("content values must lie in [-inf, inf)".into()));
    }
    let a = |i: usize, j: usize| values[i * k + j];
    for s in 0..k {
        for u in s..k {
            for v in u..k {
                for t in v..k {
                    let lhs = a(s, t) + a(u, v);
                    let rhs = a(s, v) + a(u, t);
                    let bad = if a(u, v) == f64::NEG_INFINITY {
                        [a(s, v), a(u, t), a(s, t)].iter().any(|&x| x != f64::NEG_INFINITY)
                    } else {
                        !ext_close(lhs, rhs, CONTENT_TOL)
                    };
                    if bad {
                        return Err(Error::IncompatibleValues { quadruple: [s, u, v, t], lhs, rhs });
                    }
                }
            }
        }
    }
    let mut closed = vec![0.0; k * k];
    for i in 0..k {
        for j in i..k {
            closed[i * k + j] = a(i, j);
        }
    }
    Ok(Content { k, closed })
}

fn interval_id(k: usize, l: usize, n_times: usize) -> usize {
    // intervals ordered by left end, then right end
    k * n_times - k * k.saturating_sub(1) / 2 - k + l
}

/// A content per path where `A([t_k, t_l])` is a function of `ω_k, …, ω_l`.
/// The table layout makes measurability with respect to the closed interval hold by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdditiveFunctional {
    n: usize,
    k: usize,
    tables: Vec<Vec<f64>>,
}

impl AdditiveFunctional {
    /// Tabulates `value(k, l, segment)` on every segment `ω_k..=ω_l`.
    pub fn from_fn(n: usize, n_times: usize, mut value: impl FnMut(usize, usize, &[usize]) -> f64) -> Self {
        let mut tables = Vec::new();
        for k in 0..n_times {
            for l in k..n_times {
                let shape = vec![n; l - k + 1];
                tables.push(tensor::MultiIndex::new(&shape).map(|seg| value(k, l, &seg)).collect());
            }
        }
        Self { n, k: n_times, tables }
    }

    /// `A([t_k, t_l]) = Σ_{k ≤ j ≤ l} node[j](ω_j) + Σ_{k ≤ j < l} edge[j](ω_j, ω_{j+1})`.
    pub fn from_local_terms(n: usize, node: &[Vec<f64>], edge: &[Vec<f64>]) -> Result<Self> {
        let k = node.len();
        if k < 2 || edge.len() + 1 != k || node.iter().any(|v| v.len() != n) || edge.iter().any(|e| e.len() != n * n) {
            return Err(Error::InvalidInput("local terms have inconsistent sizes".into()));
        }
        Ok(Self::from_fn(n, k, |a, _b, seg| {
            let mut v: f64 = seg.iter().enumerate().map(|(i, &x)| node[a + i][x]).sum();
            for i in 0..seg.len() - 1 {
                v += edge[a + i][seg[i] * n + seg[i + 1]];
            }
            v
        }))
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn n_times(&self) -> usize {
        self.k
    }

    fn table(&self, k: usize, l: usize) -> &[f64] {
        &self.tables[interval_id(k, l, self.k)]
    }

    /// `A([t_k, t_l])` given only the segment `ω_k..=ω_l`.
    pub fn closed_segment(&self, k: usize, l: usize, seg: &[usize]) -> f64 {
        debug_assert_eq!(seg.len(), l - k + 1);
        self.table(k, l)[seg.iter().fold(0, |acc, &x| acc * self.n + x)]
    }

    pub fn closed(&self, path: &[usize], k: usize, l: usize) -> f64 {
        self.closed_segment(k, l, &path[k..=l])
    }

    pub fn total(&self, path: &[usize]) -> f64 {
        self.closed(path, 0, self.k - 1)
    }

    pub fn content(&self, path: &[usize]) -> Content {
        let k = self.k;
        let mut closed = vec![0.0; k * k];
        for i in 0..k {
            for j in i..k {
                closed[i * k + j] = self.closed(path, i, j);
            }
        }
        Content { k, closed }
    }

    pub fn value(&self, path: &[usize], iv: Interval) -> f64 {
        self.content(path).value(iv)
    }

    /// Checks the content identities on every path charged by `r`.
    pub fn check_additivity(&self, r: &DensePathMeasure) -> Result<()> {
        for (flat, path) in r.paths() {
            if r.weights()[flat] > 0.0 {
                let c = self.content(&path);
                content_from_closed(self.k, &c.closed)?;
            }
        }
        Ok(())
    }

    /// Whether `A([t_k, t_l])` depends only on the listed coordinates (all in `k..=l`).
    pub fn depends_only_on(&self, k: usize, l: usize, coords: &[usize]) -> bool {
        let table = self.table(k, l);
        let shape = vec![self.n; l - k + 1];
        let mut seen: std::collections::HashMap<Vec<usize>, f64> = std::collections::HashMap::new();
        for (seg, &v) in tensor::MultiIndex::new(&shape).zip(table) {
            let key: Vec<usize> = coords.iter().map(|&c| seg[c - k]).collect();
            match seen.get(&key) {
                Some(&w) if !ext_close(v, w, CONTENT_TOL) => return false,
                Some(_) => {}
                None => {
                    seen.insert(key, v);
                }
            }
        }
        true
    }

    /// The probability `exp(A([0,1])) · R`, normalized.
    pub fn tilt(&self, r: &DensePathMeasure) -> Result<DensePathMeasure> {
        r.reweighted(|p| self.total(p).exp())?.normalize()
    }
}

/// `A([t_k, t_l]) = log E_R[dP/dR | X_k..X_l] = log(P_{k..l} / R_{k..l})`,
/// zero where the reference segment has no mass.
pub fn extract_additive_functional(p: &DensePathMeasure, r: &DensePathMeasure) -> Result<AdditiveFunctional> {
    p.same_frame(r)?;
    p.measure().ensure_probability()?;
    if let Some(flat) = first_uncovered(p.measure(), r.measure()) {
        return Err(Error::NotAbsolutelyContinuous { cell: p.path(flat) });
    }
    let mp = is_markov(p, DEFAULT_TOL)?;
    if !mp.holds {
        return Err(Error::NotMarkov { which: "P".into(), residual: mp.worst_residual });
    }
    let mr = is_markov(&r.normalize()?, DEFAULT_TOL)?;
    if !mr.holds {
        return Err(Error::NotMarkov { which: "R".into(), residual: mr.worst_residual });
    }
    let k = p.n_times();
    let mut tables = Vec::new();
    for a in 0..k {
        for b in a..k {
            let coords: Vec<usize> = (a..=b).collect();
            let pm = p.marginal(&coords)?;
            let rm = r.marginal(&coords)?;
            tables.push(
                pm.weights()
                    .iter()
                    .zip(rm.weights())
                    .map(|(&x, &y)| {
                        if y == 0.0 {
                            0.0
                        } else if x == 0.0 {
                            f64::NEG_INFINITY
                        } else {
                            (x / y).ln()
                        }
                    })
                    .collect(),
            );
        }
    }
    Ok(AdditiveFunctional { n: p.n_states(), k, tables })
}
