//! Canonical instances: two measures on which a pair function that splits over
//! a middle time still cannot split over its endpoints, and seeded generators.

use std::collections::BTreeMap;

use num_rational::Rational64;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::additive::{sum_decompose, SumDecomposition};
use crate::error::{Error, Result};
use crate::measure::{DensePathMeasure, MarkovPathMeasure, StateSpace, TimeGrid};
use crate::solvers::{Constraint, ProblemSpec, Reference};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expected {
    SumDecomposeInfeasible,
}

/// A reference `r` and `f(X_s, X_t) = a(X_{s..=u}) + b(X_{u..=t})` on its support.
/// Segments missing from `a` or `b` have value 0.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterexampleFixture {
    pub name: String,
    pub r: DensePathMeasure,
    /// Row-major `n × n` table over `(X_s, X_t)`.
    pub f: Vec<f64>,
    pub s: usize,
    pub u: usize,
    pub t: usize,
    pub a: BTreeMap<Vec<usize>, f64>,
    pub b: BTreeMap<Vec<usize>, f64>,
    pub expected: Expected,
}

impl CounterexampleFixture {
    pub fn a_value(&self, seg: &[usize]) -> f64 {
        self.a.get(seg).copied().unwrap_or(0.0)
    }

    pub fn b_value(&self, seg: &[usize]) -> f64 {
        self.b.get(seg).copied().unwrap_or(0.0)
    }

    /// `(path, f(X_s, X_t), a + b)` for every charged path.
    pub fn premise_values(&self) -> Vec<(Vec<usize>, f64, f64)> {
        let n = self.r.n_states();
        self.r
            .paths()
            .filter(|(flat, _)| self.r.weights()[*flat] > 0.0)
            .map(|(_, path)| {
                let lhs = self.f[path[self.s] * n + path[self.t]];
                let rhs = self.a_value(&path[self.s..=self.u]) + self.b_value(&path[self.u..=self.t]);
                (path, lhs, rhs)
            })
            .collect()
    }

    pub fn decompose(&self) -> Result<SumDecomposition> {
        sum_decompose(&self.f, &self.r, self.s, self.u, self.t, |seg| self.a_value(seg), |seg| self.b_value(seg))
    }
}

fn grid(times: &[(i64, i64)]) -> TimeGrid {
    TimeGrid::new(times.iter().map(|&(p, q)| Rational64::new(p, q)).collect()).expect("valid grid")
}

/// Four equally likely paths through one shared state at time 1/2; the
/// beginnings through `x1` differ only at time 1/4. Neither Markov nor reciprocal.
pub fn shared_midpoint() -> CounterexampleFixture {
    let space = StateSpace::new(["x1", "x2", "a1", "â", "a2", "m", "z1", "z2"]).expect("distinct labels");
    let g = grid(&[(0, 1), (1, 4), (1, 2), (1, 1)]);
    let [x1, x2, a1, ah, a2, m, z1, z2] = [0, 1, 2, 3, 4, 5, 6, 7];
    let paths = [[x1, a1, m, z2], [x1, ah, m, z1], [x2, a2, m, z1], [x2, a2, m, z2]];
    let n = space.len();
    let r = DensePathMeasure::from_fn(space, g, usize::MAX, |p| if paths.iter().any(|q| q == p) { 0.25 } else { 0.0 })
        .expect("small tensor");
    let mut f = vec![0.0; n * n];
    f[x1 * n + z1] = 1.0;
    CounterexampleFixture {
        name: "shared-midpoint".into(),
        r,
        f,
        s: 0,
        u: 2,
        t: 3,
        a: BTreeMap::from([(vec![x1, ah, m], 1.0)]),
        b: BTreeMap::new(),
        expected: Expected::SumDecomposeInfeasible,
    }
}

/// A Markov chain through two middle states whose end states do not overlap,
/// so consecutive pairs are not supported on a product set.
pub fn reducible_chain() -> CounterexampleFixture {
    let space = StateSpace::new(["x1", "x2", "m1", "m2", "z1", "z2", "z3"]).expect("distinct labels");
    let n = space.len();
    let [x1, x2, m1, m2, z1, z2, z3] = [0, 1, 2, 3, 4, 5, 6];
    let mut init = vec![0.0; n];
    init[x1] = 0.5;
    init[x2] = 0.5;
    let mut k0 = vec![0.0; n * n];
    for x in [x1, x2] {
        k0[x * n + m1] = 0.5;
        k0[x * n + m2] = 0.5;
    }
    let mut k1 = vec![0.0; n * n];
    k1[m1 * n + z1] = 1.0;
    k1[m2 * n + z2] = 0.5;
    k1[m2 * n + z3] = 0.5;
    let chain = MarkovPathMeasure::new(space, grid(&[(0, 1), (1, 2), (1, 1)]), init, vec![k0, k1]).expect("valid chain");
    let r = chain.to_dense(usize::MAX).expect("small tensor");
    let a = BTreeMap::from([(vec![x1, m1], 1.0), (vec![x1, m2], 0.0), (vec![x2, m1], 1.0), (vec![x2, m2], 1.0)]);
    let b = BTreeMap::from([(vec![m1, z1], 1.0), (vec![m2, z2], 2.0), (vec![m2, z3], 3.0)]);
    let table = [[2.0, 2.0, 3.0], [2.0, 3.0, 4.0]];
    let mut f = vec![0.0; n * n];
    for (i, x) in [x1, x2].into_iter().enumerate() {
        for (j, z) in [z1, z2, z3].into_iter().enumerate() {
            f[x * n + z] = table[i][j];
        }
    }
    CounterexampleFixture { name: "reducible-chain".into(), r, f, s: 0, u: 1, t: 2, a, b, expected: Expected::SumDecomposeInfeasible }
}

/// Random version of [`reducible_chain`]: 2 or 3 start states, two middle
/// states with disjoint sets of end states, random positive kernels and a
/// random `a` whose mixed difference across the middle states is at least 1/2.
pub fn planted_violation(seed: u64) -> CounterexampleFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nx = rng.gen_range(2..=3);
    let nz = rng.gen_range(2..=4);
    let n = nx + 2 + nz;
    let space = StateSpace::indexed(n).expect("nonempty");
    let mids = [nx, nx + 1];
    // every end state hangs off one middle state; both middle states get one
    let owner: Vec<usize> = (0..nz).map(|j| if j < 2 { j } else { rng.gen_range(0..2) }).collect();
    let mut init = vec![0.0; n];
    for w in init.iter_mut().take(nx) {
        *w = rng.gen_range(0.2..1.0);
    }
    let total: f64 = init.iter().sum();
    init.iter_mut().for_each(|w| *w /= total);
    let mut k0 = vec![0.0; n * n];
    for x in 0..nx {
        let p = rng.gen_range(0.2..0.8);
        k0[x * n + mids[0]] = p;
        k0[x * n + mids[1]] = 1.0 - p;
    }
    let mut k1 = vec![0.0; n * n];
    for (mi, &m) in mids.iter().enumerate() {
        let ends: Vec<usize> = (0..nz).filter(|&j| owner[j] == mi).collect();
        let w: Vec<f64> = ends.iter().map(|_| rng.gen_range(0.2..1.0)).collect();
        let s: f64 = w.iter().sum();
        for (&j, wj) in ends.iter().zip(w) {
            k1[m * n + nx + 2 + j] = wj / s;
        }
    }
    let chain = MarkovPathMeasure::new(space, TimeGrid::uniform(3).expect("grid"), init, vec![k0, k1]).expect("valid chain");
    let r = chain.to_dense(usize::MAX).expect("small tensor");

    let mut a = BTreeMap::new();
    let mut a_tab = vec![[0.0f64; 2]; nx];
    for (x, row) in a_tab.iter_mut().enumerate() {
        for (mi, &m) in mids.iter().enumerate() {
            row[mi] = rng.gen_range(-1.0..1.0);
            a.insert(vec![x, m], row[mi]);
        }
    }
    let mixed = (a_tab[0][0] - a_tab[1][0]) - (a_tab[0][1] - a_tab[1][1]);
    if mixed.abs() < 0.5 {
        let bump = 0.5 + rng.gen_range(0.0..0.5);
        a_tab[1][1] += if mixed >= 0.0 { bump } else { -bump };
        a.insert(vec![1, mids[1]], a_tab[1][1]);
    }
    let mut b = BTreeMap::new();
    let mut f = vec![0.0; n * n];
    for j in 0..nz {
        let z = nx + 2 + j;
        let m = mids[owner[j]];
        let bv = rng.gen_range(-1.0..1.0);
        b.insert(vec![m, z], bv);
        for x in 0..nx {
            f[x * n + z] = a_tab[x][owner[j]] + bv;
        }
    }
    CounterexampleFixture { name: "planted-violation".into(), r, f, s: 0, u: 1, t: 2, a, b, expected: Expected::SumDecomposeInfeasible }
}

fn random_row(rng: &mut ChaCha8Rng, n: usize, zero_rate: f64) -> Vec<f64> {
    let mut row: Vec<f64> = (0..n).map(|_| if rng.gen_bool(zero_rate) { 0.0 } else { rng.gen_range(0.1..1.0) }).collect();
    if row.iter().all(|&w| w == 0.0) {
        let j = rng.gen_range(0..n);
        row[j] = rng.gen_range(0.1..1.0);
    }
    let s: f64 = row.iter().sum();
    row.iter_mut().for_each(|w| *w /= s);
    row
}

fn check_sizes(n: usize, k: usize, min_k: usize) -> Result<()> {
    if n < 2 || k < min_k {
        return Err(Error::InvalidInput(format!("need n ≥ 2 and K ≥ {min_k}, got n = {n}, K = {k}")));
    }
    Ok(())
}

/// Seeded chain on `s0, s1, …` over a uniform grid of `k` times. Each kernel
/// entry is zeroed with probability `zero_rate` (keeping every row nonzero);
/// the initial law is strictly positive.
pub fn random_chain(seed: u64, n: usize, k: usize, zero_rate: f64) -> Result<MarkovPathMeasure> {
    check_sizes(n, k, 2)?;
    if !(0.0..=1.0).contains(&zero_rate) {
        return Err(Error::InvalidInput(format!("zero rate {zero_rate} is not in [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = random_row(&mut rng, n, 0.0);
    let kernels = (0..k - 1).map(|_| (0..n).flat_map(|_| random_row(&mut rng, n, zero_rate)).collect()).collect();
    MarkovPathMeasure::new(StateSpace::indexed(n)?, TimeGrid::uniform(k)?, init, kernels)
}

/// Chain with the same initial and kernel supports as `r` and fresh random weights.
pub fn random_chain_within(seed: u64, r: &MarkovPathMeasure) -> Result<MarkovPathMeasure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = r.space().len();
    let mut redraw = |row: &[f64]| -> Vec<f64> {
        let mut out: Vec<f64> = row.iter().map(|&w| if w > 0.0 { rng.gen_range(0.1..1.0) } else { 0.0 }).collect();
        let s: f64 = out.iter().sum();
        if s > 0.0 {
            out.iter_mut().for_each(|w| *w /= s);
        }
        out
    };
    let init = redraw(r.init());
    let kernels = r.kernels().iter().map(|k| k.chunks(n).flat_map(&mut redraw).collect()).collect();
    MarkovPathMeasure::new(r.space().clone(), r.grid().clone(), init, kernels)
}

/// A seeded full-support chain reweighted by a random `g(X_0, X_{K-1})` and normalized.
pub fn random_reciprocal(seed: u64, n: usize, k: usize, limit: usize) -> Result<DensePathMeasure> {
    check_sizes(n, k, 3)?;
    let chain = random_chain(seed, n, k, 0.0)?.to_dense(limit)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let g: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0.1..2.0)).collect();
    chain.reweighted(|p| g[p[0] * n + p[p.len() - 1]])?.normalize()
}

/// A feasible problem whose targets are the laws of a random chain `P ≪ R`.
/// `R` is [`random_chain`] with `zero_rate`; `n_constraints` distinct times
/// are drawn, and the endpoint target is `P_{0,K-1}` when `endpoint` is set.
pub fn random_problem(
    seed: u64,
    n: usize,
    k: usize,
    n_constraints: usize,
    endpoint: bool,
    zero_rate: f64,
    limit: usize,
) -> Result<ProblemSpec> {
    check_sizes(n, k, 2)?;
    if n_constraints > k {
        return Err(Error::InvalidInput(format!("{n_constraints} constraints for {k} times")));
    }
    let r = random_chain(seed, n, k, zero_rate)?;
    let p = random_chain_within(seed.wrapping_add(1), &r)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let mut times = sample(&mut rng, k, n_constraints).into_vec();
    times.sort_unstable();
    let constraints = times.into_iter().map(|index| Constraint { index, target: p.time_marginal(index) }).collect();
    let pi = if endpoint {
        Some(p.to_dense(limit)?.marginal(&[0, k - 1])?.weights().to_vec())
    } else {
        None
    };
    ProblemSpec::new(Reference::Markov(r), constraints, pi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::{is_markov, is_reciprocal};

    #[test]
    fn counterexamples_satisfy_their_premise() {
        for fx in [shared_midpoint(), reducible_chain()] {
            for (path, lhs, rhs) in fx.premise_values() {
                assert_eq!(lhs, rhs, "{} at {path:?}", fx.name);
            }
            assert!(matches!(fx.decompose().unwrap(), SumDecomposition::Infeasible(_)));
        }
        let fx = shared_midpoint();
        let mut vals: Vec<f64> = fx.premise_values().into_iter().map(|v| v.1).collect();
        vals.sort_by(f64::total_cmp);
        assert_eq!(vals, [0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(random_chain(7, 3, 4, 0.3).unwrap(), random_chain(7, 3, 4, 0.3).unwrap());
        assert_ne!(random_chain(7, 3, 4, 0.3).unwrap(), random_chain(8, 3, 4, 0.3).unwrap());
        let q = random_reciprocal(3, 2, 4, 1000).unwrap();
        assert!(is_reciprocal(&q, 1e-10).unwrap().holds);
        assert!(!is_markov(&q, 1e-10).unwrap().holds);
    }

    #[test]
    fn planted_violations_hold_their_premise() {
        for seed in 0..20 {
            let fx = planted_violation(seed);
            for (_, lhs, rhs) in fx.premise_values() {
                assert!((lhs - rhs).abs() < 1e-15);
            }
            assert!(matches!(fx.decompose().unwrap(), SumDecomposition::Infeasible(_)), "seed {seed}");
        }
    }
}
