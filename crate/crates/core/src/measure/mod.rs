//! Finite path measures and their marginals.
//!
//! Every measure is stored as a dense nonnegative tensor. Path measures over
//! `K` grid times and `n` states have shape `[n; K]`; coordinate `k` is the
//! state at grid index `k`.

mod ops;

pub(crate) use ops::first_uncovered;
pub use ops::{
    abs_continuous, check_conditioning, disintegrate, marginal, markov_to_dense,
    relative_entropy, superadditivity_check, ConditioningReport, ConditioningViolation,
    Disintegration, Superadditivity,
};

use std::fmt;

use num_rational::Rational64;

use crate::error::{Error, Result};
use crate::guard;
use crate::tensor::{self, MultiIndex};

/// Weights below this are treated as exact zeros when a measure is ingested.
pub const SNAP_THRESHOLD: f64 = 1e-15;

/// Tolerance on total mass for the `normalized` flag.
pub const MASS_TOL: f64 = 1e-12;

/// Tolerance on total mass when an operation requires a probability.
pub const PROBABILITY_TOL: f64 = 1e-9;

/// Ordered, distinct state labels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StateSpace {
    labels: Vec<String>,
}

impl StateSpace {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(Error::InvalidInput("state space needs at least one label".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate state label {l:?}")));
            }
        }
        Ok(Self { labels })
    }

    /// States labelled `s0, s1, ...`.
    pub fn indexed(n: usize) -> Result<Self> {
        Self::new((0..n).map(|i| format!("s{i}")))
    }

    /// The paired space `X × X` with labels `(a,b)`; pair `(i, j)` has index `i * n + j`.
    pub fn paired(&self) -> Self {
        let labels = self
            .labels
            .iter()
            .flat_map(|a| self.labels.iter().map(move |b| format!("({a},{b})")))
            .collect();
        Self { labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// Strictly increasing rational times from 0 to 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TimeGrid {
    times: Vec<Rational64>,
}

impl TimeGrid {
    pub fn new(times: Vec<Rational64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidInput("time grid needs at least two times".into()));
        }
        if times[0] != Rational64::from_integer(0) || *times.last().unwrap() != Rational64::from_integer(1) {
            return Err(Error::InvalidInput("time grid must start at 0 and end at 1".into()));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("time grid must be strictly increasing".into()));
        }
        Ok(Self { times })
    }

    /// `k` equally spaced times `0, 1/(k-1), ..., 1`.
    pub fn uniform(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidInput("time grid needs at least two times".into()));
        }
        let d = (k - 1) as i64;
        Self::new((0..k as i64).map(|i| Rational64::new(i, d)).collect())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[Rational64] {
        &self.times
    }

    pub fn time(&self, k: usize) -> Rational64 {
        self.times[k]
    }

    pub fn position(&self, t: Rational64) -> Option<usize> {
        self.times.binary_search(&t).ok()
    }
}

/// Parses `"1/4"`, `"0.25"` or `"1"` into a rational.
pub fn parse_time(s: &str) -> Result<Rational64> {
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: i64 = n.trim().parse().map_err(|_| Error::Parse(format!("bad time {s:?}")))?;
        let d: i64 = d.trim().parse().map_err(|_| Error::Parse(format!("bad time {s:?}")))?;
        if d == 0 {
            return Err(Error::Parse(format!("bad time {s:?}")));
        }
        return Ok(Rational64::new(n, d));
    }
    if let Ok(i) = s.parse::<i64>() {
        return Ok(Rational64::from_integer(i));
    }
    let f: f64 = s.parse().map_err(|_| Error::Parse(format!("bad time {s:?}")))?;
    time_from_f64(f)
}

pub fn time_from_f64(f: f64) -> Result<Rational64> {
    Rational64::approximate_float(f).ok_or_else(|| Error::Parse(format!("time {f} is not representable")))
}

pub fn format_time(t: Rational64) -> String {
    if *t.denom() == 1 {
        t.numer().to_string()
    } else {
        format!("{}/{}", t.numer(), t.denom())
    }
}

/// A nonnegative weight tensor over a finite product of coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMeasure {
    shape: Vec<usize>,
    weights: Vec<f64>,
}

impl FiniteMeasure {
    /// Validates and ingests weights; entries below [`SNAP_THRESHOLD`] become exact zeros.
    pub fn new(shape: Vec<usize>, mut weights: Vec<f64>) -> Result<Self> {
        for w in weights.iter_mut() {
            if *w < SNAP_THRESHOLD && *w > -SNAP_THRESHOLD {
                *w = 0.0;
            }
        }
        Self::from_parts(shape, weights)
    }

    /// Like [`FiniteMeasure::new`] without the zero snap.
    pub fn from_parts(shape: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidInput(format!("empty coordinate in shape {shape:?}")));
        }
        if tensor::numel(&shape) != weights.len() {
            return Err(Error::InvalidInput(format!(
                "shape {shape:?} needs {} weights, got {}",
                tensor::numel(&shape),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidInput(format!("weight {w} is negative or not finite")));
        }
        let m = Self { shape, weights };
        if !m.mass().is_finite() {
            return Err(Error::InvalidInput("total mass is not finite".into()));
        }
        Ok(m)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = tensor::numel(&shape);
        Self { shape, weights: vec![0.0; n] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.weights[tensor::ravel(idx, &self.shape)]
    }

    pub fn index(&self, flat: usize) -> Vec<usize> {
        tensor::unravel(flat, &self.shape)
    }

    pub fn cells(&self) -> impl Iterator<Item = Vec<usize>> {
        MultiIndex::new(&self.shape)
    }

    pub fn is_probability(&self) -> bool {
        (self.mass() - 1.0).abs() <= PROBABILITY_TOL
    }

    pub fn ensure_probability(&self) -> Result<()> {
        if self.is_probability() {
            Ok(())
        } else {
            Err(Error::NotProbability { mass: self.mass() })
        }
    }

    pub fn ensure_same_shape(&self, other: &FiniteMeasure) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(self.shape.clone(), other.shape.clone()));
        }
        Ok(())
    }

    /// Divides by the total mass. Fails on the zero measure.
    pub fn normalized(&self) -> Result<Self> {
        let m = self.mass();
        if m <= 0.0 {
            return Err(Error::InvalidInput("cannot normalize the zero measure".into()));
        }
        Ok(Self { shape: self.shape.clone(), weights: self.weights.iter().map(|w| w / m).collect() })
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { shape: self.shape.clone(), weights: self.weights.iter().map(|w| w * c).collect() }
    }

    /// Pushforward onto `coords`, in the given order.
    pub fn marginal(&self, coords: &[usize]) -> Result<Self> {
        check_coords(coords, self.rank())?;
        let sub = tensor::sub_shape(&self.shape, coords);
        let mut out = vec![0.0; tensor::numel(&sub)];
        let mut idx = vec![0; self.rank()];
        for (flat, &w) in self.weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            tensor::unravel_into(flat, &self.shape, &mut idx);
            out[tensor::ravel_sub(&idx, coords, &self.shape)] += w;
        }
        Ok(Self { shape: sub, weights: out })
    }

    /// Outer product `self ⊗ other`.
    pub fn product(&self, other: &FiniteMeasure) -> Self {
        let mut shape = self.shape.clone();
        shape.extend_from_slice(&other.shape);
        let weights = self
            .weights
            .iter()
            .flat_map(|a| other.weights.iter().map(move |b| a * b))
            .collect();
        Self { shape, weights }
    }

    /// Product of the one-coordinate marginals.
    pub fn product_of_marginals(&self) -> Result<Self> {
        let mut out = FiniteMeasure { shape: vec![], weights: vec![1.0] };
        for c in 0..self.rank() {
            out = out.product(&self.marginal(&[c])?);
        }
        Ok(out)
    }

    pub fn tv_distance(&self, other: &FiniteMeasure) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(0.5 * self.weights.iter().zip(&other.weights).map(|(a, b)| (a - b).abs()).sum::<f64>())
    }

    pub fn support(&self) -> Vec<bool> {
        self.weights.iter().map(|&w| w > 0.0).collect()
    }

    /// Permutes coordinates: output coordinate `i` is input coordinate `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.rank() {
            return Err(Error::BadCoords(format!("permutation {order:?} has the wrong length")));
        }
        self.marginal(order)
    }
}

pub(crate) fn check_coords(coords: &[usize], rank: usize) -> Result<()> {
    let mut seen = vec![false; rank];
    for &c in coords {
        if c >= rank {
            return Err(Error::BadCoords(format!("coordinate {c} out of range for rank {rank}")));
        }
        if seen[c] {
            return Err(Error::BadCoords(format!("coordinate {c} repeated")));
        }
        seen[c] = true;
    }
    Ok(())
}

/// A weight for every path in `X^K`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensePathMeasure {
    space: StateSpace,
    grid: TimeGrid,
    measure: FiniteMeasure,
    normalized: bool,
}

impl DensePathMeasure {
    /// Ingests path weights (row-major, coordinate 0 slowest).
    pub fn new(space: StateSpace, grid: TimeGrid, weights: Vec<f64>) -> Result<Self> {
        let shape = vec![space.len(); grid.len()];
        Self::from_measure(space, grid, FiniteMeasure::new(shape, weights)?)
    }

    pub fn from_measure(space: StateSpace, grid: TimeGrid, measure: FiniteMeasure) -> Result<Self> {
        let shape = vec![space.len(); grid.len()];
        if measure.shape() != shape.as_slice() {
            return Err(Error::ShapeMismatch(measure.shape().to_vec(), shape));
        }
        let normalized = (measure.mass() - 1.0).abs() <= MASS_TOL;
        Ok(Self { space, grid, measure, normalized })
    }

    /// Builds a measure by evaluating `weight` on every path.
    pub fn from_fn(
        space: StateSpace,
        grid: TimeGrid,
        limit: usize,
        mut weight: impl FnMut(&[usize]) -> f64,
    ) -> Result<Self> {
        let cells = guard::ensure_cells(guard::cell_count(space.len(), grid.len()), limit)?;
        let shape = vec![space.len(); grid.len()];
        let mut weights = Vec::with_capacity(cells);
        for path in MultiIndex::new(&shape) {
            weights.push(weight(&path));
        }
        Self::from_measure(space, grid, FiniteMeasure::from_parts(shape, weights)?)
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn measure(&self) -> &FiniteMeasure {
        &self.measure
    }

    pub fn weights(&self) -> &[f64] {
        self.measure.weights()
    }

    pub fn n_states(&self) -> usize {
        self.space.len()
    }

    pub fn n_times(&self) -> usize {
        self.grid.len()
    }

    pub fn mass(&self) -> f64 {
        self.measure.mass()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn normalize(&self) -> Result<Self> {
        Self::from_measure(self.space.clone(), self.grid.clone(), self.measure.normalized()?)
    }

    pub fn weight(&self, path: &[usize]) -> f64 {
        self.measure.get(path)
    }

    pub fn path(&self, flat: usize) -> Vec<usize> {
        self.measure.index(flat)
    }

    /// Iterates `(flat index, path)` over all paths.
    pub fn paths(&self) -> impl Iterator<Item = (usize, Vec<usize>)> {
        MultiIndex::new(self.measure.shape()).enumerate()
    }

    pub fn marginal(&self, coords: &[usize]) -> Result<FiniteMeasure> {
        self.measure.marginal(coords)
    }

    /// Law of `X_{t_k}` as a vector over states.
    pub fn time_marginal(&self, k: usize) -> Result<Vec<f64>> {
        Ok(self.measure.marginal(&[k])?.weights().to_vec())
    }

    /// Multiplies every path weight by `factor(path)`.
    pub fn reweighted(&self, mut factor: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let shape = self.measure.shape().to_vec();
        let weights = MultiIndex::new(&shape)
            .zip(self.weights())
            .map(|(p, &w)| if w == 0.0 { 0.0 } else { w * factor(&p) })
            .collect();
        Self::from_measure(self.space.clone(), self.grid.clone(), FiniteMeasure::from_parts(shape, weights)?)
    }

    pub fn same_frame(&self, other: &DensePathMeasure) -> Result<()> {
        if self.space != other.space || self.grid != other.grid {
            return Err(Error::ShapeMismatch(
                self.measure.shape().to_vec(),
                other.measure.shape().to_vec(),
            ));
        }
        Ok(())
    }
}

/// Initial weights plus one transition kernel per grid step.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovPathMeasure {
    space: StateSpace,
    grid: TimeGrid,
    init: Vec<f64>,
    kernels: Vec<Vec<f64>>,
}

/// Row sums of kernels must be 1 within this tolerance (or exactly 0).
pub const KERNEL_ROW_TOL: f64 = 1e-9;

impl MarkovPathMeasure {
    /// `kernels[k]` is a row-major `n × n` matrix for the step `t_k → t_{k+1}`.
    pub fn new(space: StateSpace, grid: TimeGrid, init: Vec<f64>, kernels: Vec<Vec<f64>>) -> Result<Self> {
        let n = space.len();
        if init.len() != n {
            return Err(Error::InvalidInput(format!("init has {} entries for {n} states", init.len())));
        }
        if kernels.len() + 1 != grid.len() {
            return Err(Error::InvalidInput(format!(
                "{} kernels for a grid of {} times",
                kernels.len(),
                grid.len()
            )));
        }
        let snap = |w: f64| if w.abs() < SNAP_THRESHOLD { 0.0 } else { w };
        let init: Vec<f64> = init.into_iter().map(snap).collect();
        if init.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidInput("init weights must be finite and nonnegative".into()));
        }
        let kernels: Vec<Vec<f64>> = kernels
            .into_iter()
            .map(|k| k.into_iter().map(snap).collect())
            .collect();
        for (step, k) in kernels.iter().enumerate() {
            if k.len() != n * n {
                return Err(Error::InvalidInput(format!("kernel {step} is not {n}×{n}")));
            }
            if k.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(Error::InvalidInput(format!("kernel {step} has a negative entry")));
            }
            for x in 0..n {
                let s: f64 = k[x * n..(x + 1) * n].iter().sum();
                if s != 0.0 && (s - 1.0).abs() > KERNEL_ROW_TOL {
                    return Err(Error::InvalidInput(format!(
                        "kernel {step} row {x} sums to {s}, expected 0 or 1"
                    )));
                }
            }
        }
        // every reachable state must be able to move on
        let mut reach: Vec<bool> = init.iter().map(|&w| w > 0.0).collect();
        for (step, k) in kernels.iter().enumerate() {
            let mut next = vec![false; n];
            for x in (0..n).filter(|&x| reach[x]) {
                let row = &k[x * n..(x + 1) * n];
                if row.iter().all(|&w| w == 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "state {} is reachable at step {step} but kernel row is zero",
                        space.label(x)
                    )));
                }
                for (y, &w) in row.iter().enumerate() {
                    if w > 0.0 {
                        next[y] = true;
                    }
                }
            }
            reach = next;
        }
        Ok(Self { space, grid, init, kernels })
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn init(&self) -> &[f64] {
        &self.init
    }

    pub fn kernels(&self) -> &[Vec<f64>] {
        &self.kernels
    }

    pub fn kernel(&self, step: usize, x: usize, y: usize) -> f64 {
        let n = self.space.len();
        self.kernels[step][x * n + y]
    }

    pub fn mass(&self) -> f64 {
        self.init.iter().sum()
    }

    /// Law of `X_{t_k}` by forward propagation.
    pub fn time_marginal(&self, k: usize) -> Vec<f64> {
        let n = self.space.len();
        let mut m = self.init.clone();
        for step in 0..k {
            let mut next = vec![0.0; n];
            for x in 0..n {
                if m[x] == 0.0 {
                    continue;
                }
                for (y, nx) in next.iter_mut().enumerate() {
                    *nx += m[x] * self.kernel(step, x, y);
                }
            }
            m = next;
        }
        m
    }

    pub fn to_dense(&self, limit: usize) -> Result<DensePathMeasure> {
        markov_to_dense(self, limit)
    }
}

impl fmt::Display for StateSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.labels.join(", "))
    }
}
