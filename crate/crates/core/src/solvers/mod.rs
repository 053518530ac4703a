//! Relative-entropy minimization under time-marginal and endpoint constraints.

mod feasibility;
pub mod ipfp;
mod oracle;

pub use feasibility::{check_feasibility, Feasibility, Infeasibility};
pub use ipfp::{Block, CycleRecord, Ipfp, RunOutcome};
pub use oracle::{oracle_minimize, OracleSolution, ORACLE_TOL};

use std::borrow::Cow;

use num_rational::Rational64;

use crate::additive::Potentials;
use crate::error::{Error, Result};
use crate::fold::{admissible_lambdas, fold, unfold, FoldParameters};
use crate::guard;
use crate::measure::{DensePathMeasure, FiniteMeasure, MarkovPathMeasure, StateSpace, TimeGrid, SNAP_THRESHOLD};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// Targets must sum to 1 within this tolerance; they are then renormalized exactly.
pub const TARGET_MASS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    Markov(MarkovPathMeasure),
    Dense(DensePathMeasure),
}

impl Reference {
    pub fn space(&self) -> &StateSpace {
        match self {
            Reference::Markov(m) => m.space(),
            Reference::Dense(d) => d.space(),
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        match self {
            Reference::Markov(m) => m.grid(),
            Reference::Dense(d) => d.grid(),
        }
    }

    pub fn to_dense(&self, limit: usize) -> Result<Cow<'_, DensePathMeasure>> {
        match self {
            Reference::Markov(m) => Ok(Cow::Owned(m.to_dense(limit)?)),
            Reference::Dense(d) => {
                guard::ensure_cells(d.weights().len() as u128, limit)?;
                Ok(Cow::Borrowed(d))
            }
        }
    }
}

/// Prescribed law `target` of the state at grid index `index`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub index: usize,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    reference: Reference,
    constraints: Vec<Constraint>,
    /// Joint law of `(X_0, X_{K-1})`, row-major `n × n`.
    endpoint: Option<Vec<f64>>,
}

fn clean_target(mut t: Vec<f64>, len: usize, what: &str) -> Result<Vec<f64>> {
    if t.len() != len {
        return Err(Error::InvalidInput(format!("{what} has {} entries, expected {len}", t.len())));
    }
    if t.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidInput(format!("{what} has a negative or non-finite entry")));
    }
    for x in t.iter_mut() {
        if *x < SNAP_THRESHOLD {
            *x = 0.0;
        }
    }
    let mass: f64 = t.iter().sum();
    if (mass - 1.0).abs() > TARGET_MASS_TOL {
        return Err(Error::NotProbability { mass });
    }
    Ok(t.into_iter().map(|x| x / mass).collect())
}

impl ProblemSpec {
    pub fn new(reference: Reference, mut constraints: Vec<Constraint>, endpoint: Option<Vec<f64>>) -> Result<Self> {
        let n = reference.space().len();
        let k = reference.grid().len();
        if constraints.windows(2).any(|w| w[0].index >= w[1].index) {
            return Err(Error::InvalidInput("constraint indices must be distinct and increasing".into()));
        }
        for c in constraints.iter_mut() {
            if c.index >= k {
                return Err(Error::BadCoords(format!("constraint index {} is outside the grid", c.index)));
            }
            c.target = clean_target(std::mem::take(&mut c.target), n, &format!("target at index {}", c.index))?;
        }
        let endpoint = endpoint.map(|pi| clean_target(pi, n * n, "endpoint target")).transpose()?;
        if let Some(pi) = &endpoint {
            for c in &constraints {
                let implied: Vec<f64> = if c.index == 0 {
                    (0..n).map(|a| (0..n).map(|b| pi[a * n + b]).sum()).collect()
                } else if c.index == k - 1 {
                    (0..n).map(|b| (0..n).map(|a| pi[a * n + b]).sum()).collect()
                } else {
                    continue;
                };
                if implied.iter().zip(&c.target).any(|(x, y)| (x - y).abs() > TARGET_MASS_TOL) {
                    return Err(Error::InvalidInput(format!(
                        "endpoint target disagrees with the target at index {}",
                        c.index
                    )));
                }
            }
        }
        Ok(Self { reference, constraints, endpoint })
    }

    pub fn reference(&self) -> &Reference {
        &self.reference
    }

    pub fn markov_reference(&self) -> Option<&MarkovPathMeasure> {
        match &self.reference {
            Reference::Markov(m) => Some(m),
            Reference::Dense(_) => None,
        }
    }

    pub fn dense_reference(&self, limit: usize) -> Result<Cow<'_, DensePathMeasure>> {
        self.reference.to_dense(limit)
    }

    pub fn space(&self) -> &StateSpace {
        self.reference.space()
    }

    pub fn grid(&self) -> &TimeGrid {
        self.reference.grid()
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn endpoint(&self) -> Option<&[f64]> {
        self.endpoint.as_deref()
    }

    pub fn times(&self) -> Vec<usize> {
        self.constraints.iter().map(|c| c.index).collect()
    }

    /// Blocks in update order: constraints by ascending time, then the endpoint.
    pub(crate) fn block_maps(&self) -> Vec<(Statistic, Vec<f64>)> {
        let n = self.space().len();
        let last = self.grid().len() - 1;
        let mut out: Vec<(Statistic, Vec<f64>)> = self
            .constraints
            .iter()
            .map(|c| (Statistic::State { index: c.index, n }, c.target.clone()))
            .collect();
        if let Some(pi) = &self.endpoint {
            out.push((Statistic::Pair { first: 0, last, n }, pi.clone()));
        }
        out
    }
}

/// A category-valued function of a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Statistic {
    State { index: usize, n: usize },
    Pair { first: usize, last: usize, n: usize },
    /// One leg of a folded pair state.
    Leg { index: usize, forward: bool, n: usize },
    /// The whole folded pair state.
    Folded { index: usize },
}

impl Statistic {
    pub(crate) fn category(&self, path: &[usize]) -> usize {
        match *self {
            Statistic::State { index, .. } => path[index],
            Statistic::Pair { first, last, n } => path[first] * n + path[last],
            Statistic::Leg { index, forward, n } => {
                if forward {
                    path[index] / n
                } else {
                    path[index] % n
                }
            }
            Statistic::Folded { index } => path[index],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Cell limit for dense tensors.
    pub limit: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER, limit: guard::default_cell_limit() }
    }
}

impl SolveOptions {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidInput(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidInput("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub p: DensePathMeasure,
    pub potentials: Potentials,
    pub iterations: usize,
    /// Worst total-variation error over all constraint blocks.
    pub residual: f64,
    pub converged: bool,
    /// `H(P|R)`.
    pub objective: f64,
    pub diagnostics: Vec<CycleRecord>,
}

struct EngineRun {
    weights: Vec<f64>,
    pot: Vec<Vec<f64>>,
    outcome: RunOutcome,
    diagnostics: Vec<CycleRecord>,
}

fn run_engine(
    r: &DensePathMeasure,
    stats: &[(Statistic, Vec<f64>)],
    opts: &SolveOptions,
    on_cycle: &mut dyn FnMut(&CycleRecord),
) -> Result<EngineRun> {
    let support: Vec<usize> = (0..r.weights().len()).filter(|&i| r.weights()[i] > 0.0).collect();
    let paths: Vec<Vec<usize>> = support.iter().map(|&i| r.path(i)).collect();
    let blocks = stats
        .iter()
        .map(|(stat, target)| Block { categories: paths.iter().map(|p| stat.category(p)).collect(), target: target.clone() })
        .collect();
    let mut engine = Ipfp::new(support.iter().map(|&i| r.weights()[i]).collect(), blocks)?;
    let mut diagnostics = Vec::new();
    let outcome = engine.run(opts.tol, opts.max_iter, |rec| {
        on_cycle(rec);
        diagnostics.push(*rec);
    })?;
    let z = engine.mass();
    let mut weights = vec![0.0; r.weights().len()];
    for (&i, &w) in support.iter().zip(engine.weights()) {
        weights[i] = w / z;
    }
    let mut pot = engine.potentials().to_vec();
    // fold the normalization into the potentials
    if let Some(first) = pot.first_mut() {
        for v in first.iter_mut() {
            *v -= z.ln();
        }
    }
    Ok(EngineRun { weights, pot, outcome, diagnostics })
}

fn ensure_feasible(spec: &ProblemSpec, limit: usize) -> Result<()> {
    match check_feasibility(spec, limit)? {
        Feasibility::Feasible => Ok(()),
        Feasibility::Infeasible { witness } => Err(Error::InfeasibleProblem(
            serde_json::to_string(&witness).unwrap_or_else(|_| format!("{witness:?}")),
        )),
    }
}

fn finish(
    spec: &ProblemSpec,
    r: &DensePathMeasure,
    weights: Vec<f64>,
    f: Vec<Vec<f64>>,
    eta: Option<Vec<f64>>,
    outcome: RunOutcome,
    diagnostics: Vec<CycleRecord>,
) -> Result<Solution> {
    let n = r.n_states();
    let measure = FiniteMeasure::from_parts(r.measure().shape().to_vec(), weights)?;
    let p = DensePathMeasure::from_measure(r.space().clone(), r.grid().clone(), measure)?;
    let mut potentials = Potentials {
        times: spec.times(),
        f,
        eta: eta.map(|e| e.chunks(n).map(|row| row.to_vec()).collect()),
        constant: 0.0,
    };
    if potentials.f.is_empty() && potentials.eta.is_none() {
        potentials.constant = -r.mass().ln();
    }
    let marginals: Vec<Vec<f64>> = spec.constraints().iter().map(|c| c.target.clone()).collect();
    potentials.gauge_fix(&marginals);
    let objective = p.relative_entropy(r)?;
    Ok(Solution {
        p,
        potentials,
        iterations: outcome.iterations,
        residual: outcome.residual,
        converged: outcome.converged,
        objective,
        diagnostics,
    })
}

/// Solves with or without the endpoint block, whichever the spec asks for.
pub fn solve(spec: &ProblemSpec, opts: &SolveOptions) -> Result<Solution> {
    solve_with(spec, opts, &mut |_| {})
}

/// Like [`solve`], reporting every cycle to `on_cycle`.
pub fn solve_with(spec: &ProblemSpec, opts: &SolveOptions, on_cycle: &mut dyn FnMut(&CycleRecord)) -> Result<Solution> {
    opts.validate()?;
    ensure_feasible(spec, opts.limit)?;
    let r = spec.dense_reference(opts.limit)?;
    let stats = spec.block_maps();
    let run = run_engine(&r, &stats, opts, on_cycle)?;
    let m = spec.constraints().len();
    let mut pot = run.pot;
    let eta = if spec.endpoint().is_some() { pot.pop() } else { None };
    if m == 0 && eta.is_none() {
        debug_assert!(pot.is_empty());
    }
    finish(spec, &r, run.weights, pot, eta, run.outcome, run.diagnostics)
}

/// Marginal constraints only.
pub fn solve_schrodinger(spec: &ProblemSpec, opts: &SolveOptions) -> Result<Solution> {
    if spec.endpoint().is_some() {
        return Err(Error::InvalidInput("spec has an endpoint target; use solve_brodinger".into()));
    }
    solve(spec, opts)
}

/// Marginal constraints plus the endpoint law.
pub fn solve_brodinger(spec: &ProblemSpec, opts: &SolveOptions) -> Result<Solution> {
    if spec.endpoint().is_none() {
        return Err(Error::InvalidInput("spec has no endpoint target".into()));
    }
    solve(spec, opts)
}

/// Default fold time: past every interior grid point, so that all interior
/// constraints sit on the forward leg.
pub fn default_lambda(grid: &TimeGrid) -> Rational64 {
    *admissible_lambdas(grid).last().expect("grids have at least two points")
}

/// Solves the endpoint problem as a marginal problem for the folded process:
/// the endpoint law becomes the law of the folded state at time 0 and each
/// marginal constraint becomes a law of one leg at the folded time it is reached.
pub fn solve_brodinger_via_folding(spec: &ProblemSpec, lambda: Option<Rational64>, opts: &SolveOptions) -> Result<Solution> {
    opts.validate()?;
    let Some(pi) = spec.endpoint() else {
        return Err(Error::InvalidInput("spec has no endpoint target".into()));
    };
    ensure_feasible(spec, opts.limit)?;
    let r = spec.dense_reference(opts.limit)?;
    let n = r.n_states();
    let lambda = lambda.unwrap_or_else(|| default_lambda(r.grid()));
    let params = FoldParameters::new(r.grid(), lambda)?;
    let rf = fold(&r, &params, opts.limit)?;
    let visits = params.first_visit();
    let mut stats: Vec<(usize, Statistic, Vec<f64>)> = spec
        .constraints()
        .iter()
        .map(|c| {
            let (index, forward) = visits[c.index];
            (index, Statistic::Leg { index, forward, n }, c.target.clone())
        })
        .collect();
    stats.push((0, Statistic::Folded { index: 0 }, pi.to_vec()));
    // folded time order; the endpoint block leads at folded time 0
    stats.sort_by_key(|(index, stat, _)| (*index, !matches!(stat, Statistic::Folded { .. })));
    let order: Vec<Statistic> = stats.iter().map(|s| s.1).collect();
    let blocks: Vec<(Statistic, Vec<f64>)> = stats.into_iter().map(|(_, s, t)| (s, t)).collect();
    let run = run_engine(&rf, &blocks, opts, &mut |_| {})?;

    let pf = DensePathMeasure::from_measure(
        rf.space().clone(),
        rf.grid().clone(),
        FiniteMeasure::from_parts(rf.measure().shape().to_vec(), run.weights)?,
    )?;
    let p = unfold(&pf, r.space(), &params)?;
    let mut f = Vec::with_capacity(spec.constraints().len());
    for c in spec.constraints() {
        let (index, forward) = visits[c.index];
        let b = order
            .iter()
            .position(|s| *s == Statistic::Leg { index, forward, n })
            .expect("every constraint has a block");
        f.push(run.pot[b].clone());
    }
    let b = order.iter().position(|s| matches!(s, Statistic::Folded { .. })).expect("endpoint block");
    let eta = run.pot[b].clone();
    finish(spec, &r, p.weights().to_vec(), f, Some(eta), run.outcome, run.diagnostics)
}

/// Total-variation distance between two path measures on the same frame.
pub fn tv_distance(a: &DensePathMeasure, b: &DensePathMeasure) -> Result<f64> {
    a.same_frame(b)?;
    a.measure().tv_distance(b.measure())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_2x2() -> Reference {
        Reference::Dense(
            DensePathMeasure::new(StateSpace::indexed(2).unwrap(), TimeGrid::uniform(2).unwrap(), vec![0.25; 4]).unwrap(),
        )
    }

    #[test]
    fn product_reference_gives_product_solution() {
        let spec = ProblemSpec::new(
            uniform_2x2(),
            vec![Constraint { index: 0, target: vec![0.5, 0.5] }, Constraint { index: 1, target: vec![0.9, 0.1] }],
            None,
        )
        .unwrap();
        let sol = solve_schrodinger(&spec, &SolveOptions::default()).unwrap();
        assert!(sol.converged);
        for (got, want) in sol.p.weights().iter().zip([0.45, 0.05, 0.45, 0.05]) {
            assert!((got - want).abs() < 1e-12);
        }
        let h = |m: &[f64]| m.iter().map(|x| x * (x / 0.5).ln()).sum::<f64>();
        assert!((sol.objective - h(&[0.5, 0.5]) - h(&[0.9, 0.1])).abs() < 1e-12);
        sol.potentials.check_reconstruction(&sol.p, &spec.dense_reference(100).unwrap(), 1e-9).unwrap();
    }

    #[test]
    fn own_marginals_need_no_iterations() {
        let spec = ProblemSpec::new(uniform_2x2(), vec![Constraint { index: 1, target: vec![0.5, 0.5] }], None).unwrap();
        let sol = solve(&spec, &SolveOptions::default()).unwrap();
        assert_eq!(sol.iterations, 0);
        assert!(sol.potentials.f[0].iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn ingestion_checks() {
        assert!(ProblemSpec::new(uniform_2x2(), vec![Constraint { index: 0, target: vec![0.5, 0.4] }], None).is_err());
        assert!(ProblemSpec::new(uniform_2x2(), vec![Constraint { index: 2, target: vec![0.5, 0.5] }], None).is_err());
        let c = vec![Constraint { index: 0, target: vec![0.5, 0.5] }];
        assert!(ProblemSpec::new(uniform_2x2(), c.clone(), Some(vec![1.0, 0.0, 0.0, 0.0])).is_err());
        assert!(ProblemSpec::new(uniform_2x2(), c, Some(vec![0.5, 0.0, 0.0, 0.5])).is_ok());
    }

    #[test]
    fn infeasible_target_is_reported() {
        let r = DensePathMeasure::new(StateSpace::indexed(2).unwrap(), TimeGrid::uniform(2).unwrap(), vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        let spec = ProblemSpec::new(Reference::Dense(r), vec![Constraint { index: 0, target: vec![0.5, 0.5] }], None).unwrap();
        assert!(matches!(solve(&spec, &SolveOptions::default()), Err(Error::InfeasibleProblem(_))));
    }

    #[test]
    fn folding_route_matches_direct_solve() {
        let space = StateSpace::indexed(2).unwrap();
        let weights: Vec<f64> = (0..16).map(|i| 1.0 + ((i * 5) % 7) as f64).collect();
        let total: f64 = weights.iter().sum();
        let r = DensePathMeasure::new(space, TimeGrid::uniform(4).unwrap(), weights.iter().map(|w| w / total).collect()).unwrap();
        let spec = ProblemSpec::new(
            Reference::Dense(r),
            vec![Constraint { index: 1, target: vec![0.3, 0.7] }, Constraint { index: 2, target: vec![0.6, 0.4] }],
            Some(vec![0.4, 0.1, 0.2, 0.3]),
        )
        .unwrap();
        let opts = SolveOptions::default();
        let direct = solve_brodinger(&spec, &opts).unwrap();
        for lambda in admissible_lambdas(spec.grid()) {
            let folded = solve_brodinger_via_folding(&spec, Some(lambda), &opts).unwrap();
            assert!(folded.converged);
            assert!(tv_distance(&direct.p, &folded.p).unwrap() < 1e-9);
            let r = spec.dense_reference(opts.limit).unwrap();
            folded.potentials.check_reconstruction(&folded.p, &r, 1e-8).unwrap();
        }
    }
}
