//! Exact existence checks for a probability `Q ≪ R` meeting all constraints.

use std::collections::{HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::ProblemSpec;
use crate::error::Result;
use crate::measure::MarkovPathMeasure;

const FLOW_EPS: f64 = 1e-15;
const FLOW_TOL: f64 = 1e-12;
const LP_EPS: f64 = 1e-12;
const LP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Infeasibility {
    /// A target charges a state the reference never visits at that time.
    TargetOutsideSupport { time_index: usize, state: String },
    /// The endpoint target charges a pair the reference never joins.
    EndpointOutsideSupport { first: String, last: String },
    /// No coupling of two consecutive targets lives on the reference's pair support.
    /// `states` at `from_index` carry more target mass than their reachable set at `to_index`.
    NoCoupling { from_index: usize, to_index: usize, states: Vec<String> },
    /// The linear system of all constraints has no nonnegative solution on the reference support.
    NoPathMeasure { deficit: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Feasibility {
    Feasible,
    Infeasible { witness: Infeasibility },
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Feasibility::Feasible)
    }
}

pub fn check_feasibility(spec: &ProblemSpec, limit: usize) -> Result<Feasibility> {
    let space = spec.space().clone();
    let n = space.len();
    let last = spec.grid().len() - 1;
    if let (Some(markov), None) = (spec.markov_reference(), spec.endpoint()) {
        let marg: Vec<Vec<f64>> = (0..=last).map(|k| markov.time_marginal(k)).collect();
        for c in spec.constraints() {
            if let Some(x) = (0..n).find(|&x| c.target[x] > 0.0 && marg[c.index][x] == 0.0) {
                return Ok(infeasible(Infeasibility::TargetOutsideSupport {
                    time_index: c.index,
                    state: space.label(x).to_string(),
                }));
            }
        }
        for pair in spec.constraints().windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            let reach = reachability(markov, a.index, b.index, &marg[a.index]);
            if let Some(set) = hall_violation(&a.target, &b.target, &reach, n) {
                return Ok(infeasible(Infeasibility::NoCoupling {
                    from_index: a.index,
                    to_index: b.index,
                    states: set.into_iter().map(|x| space.label(x).to_string()).collect(),
                }));
            }
        }
        return Ok(Feasibility::Feasible);
    }

    let r = spec.dense_reference(limit)?;
    for c in spec.constraints() {
        let marg = r.time_marginal(c.index)?;
        if let Some(x) = (0..n).find(|&x| c.target[x] > 0.0 && marg[x] == 0.0) {
            return Ok(infeasible(Infeasibility::TargetOutsideSupport {
                time_index: c.index,
                state: space.label(x).to_string(),
            }));
        }
    }
    if let Some(pi) = spec.endpoint() {
        let ends = r.marginal(&[0, last])?;
        if let Some(c) = (0..n * n).find(|&c| pi[c] > 0.0 && ends.weights()[c] == 0.0) {
            return Ok(infeasible(Infeasibility::EndpointOutsideSupport {
                first: space.label(c / n).to_string(),
                last: space.label(c % n).to_string(),
            }));
        }
    }
    // aggregate charged paths by their constraint signature
    let blocks = spec.block_maps();
    let mut columns: HashSet<Vec<usize>> = HashSet::new();
    let mut order = Vec::new();
    for (flat, path) in r.paths() {
        if r.weights()[flat] == 0.0 {
            continue;
        }
        let sig: Vec<usize> = blocks.iter().map(|(stat, _)| stat.category(&path)).collect();
        if sig.iter().zip(&blocks).any(|(&c, (_, t))| t[c] == 0.0) {
            continue;
        }
        if columns.insert(sig.clone()) {
            order.push(sig);
        }
    }
    let mut rows: Vec<(usize, usize, f64)> = Vec::new();
    for (b, (_, target)) in blocks.iter().enumerate() {
        for (c, &t) in target.iter().enumerate() {
            if t > 0.0 {
                rows.push((b, c, t));
            }
        }
    }
    if rows.is_empty() {
        return Ok(if order.is_empty() { infeasible(Infeasibility::NoPathMeasure { deficit: 1.0 }) } else { Feasibility::Feasible });
    }
    let a: Vec<Vec<f64>> = rows
        .iter()
        .map(|&(b, c, _)| order.iter().map(|sig| if sig[b] == c { 1.0 } else { 0.0 }).collect())
        .collect();
    let rhs: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let deficit = phase_one(&a, &rhs);
    Ok(if deficit <= LP_TOL { Feasibility::Feasible } else { infeasible(Infeasibility::NoPathMeasure { deficit }) })
}

fn infeasible(witness: Infeasibility) -> Feasibility {
    Feasibility::Infeasible { witness }
}

/// `reach[x * n + z]`: the chain can go from `x` at `from` to `z` at `to`, with `x` charged at `from`.
fn reachability(m: &MarkovPathMeasure, from: usize, to: usize, marg_from: &[f64]) -> Vec<bool> {
    let n = m.space().len();
    let mut reach = vec![false; n * n];
    for x in 0..n {
        if marg_from[x] > 0.0 {
            reach[x * n + x] = true;
        }
    }
    for step in from..to {
        let mut next = vec![false; n * n];
        for x in 0..n {
            for y in (0..n).filter(|&y| reach[x * n + y]) {
                for z in 0..n {
                    if m.kernel(step, y, z) > 0.0 {
                        next[x * n + z] = true;
                    }
                }
            }
        }
        reach = next;
    }
    reach
}

/// Max-flow check for a coupling of `mu` and `nu` on the allowed pairs.
/// Returns a set of source states whose mass exceeds that of their neighbourhood.
pub(crate) fn hall_violation(mu: &[f64], nu: &[f64], allowed: &[bool], n: usize) -> Option<Vec<usize>> {
    let nodes = 2 * n + 2;
    let (src, sink) = (0, 2 * n + 1);
    let mut cap = vec![0.0; nodes * nodes];
    let total: f64 = mu.iter().sum();
    for x in 0..n {
        cap[src * nodes + 1 + x] = mu[x];
        cap[(1 + n + x) * nodes + sink] = nu[x];
        for z in 0..n {
            if allowed[x * n + z] {
                cap[(1 + x) * nodes + 1 + n + z] = f64::INFINITY;
            }
        }
    }
    let mut flow = 0.0;
    loop {
        let mut prev = vec![usize::MAX; nodes];
        prev[src] = src;
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            for v in 0..nodes {
                if prev[v] == usize::MAX && cap[u * nodes + v] > FLOW_EPS {
                    prev[v] = u;
                    queue.push_back(v);
                }
            }
        }
        if prev[sink] == usize::MAX {
            let set: Vec<usize> = (0..n).filter(|&x| prev[1 + x] != usize::MAX && mu[x] > 0.0).collect();
            return if flow >= total - FLOW_TOL { None } else { Some(set) };
        }
        let mut bottleneck = f64::INFINITY;
        let mut v = sink;
        while v != src {
            let u = prev[v];
            bottleneck = bottleneck.min(cap[u * nodes + v]);
            v = u;
        }
        let mut v = sink;
        while v != src {
            let u = prev[v];
            cap[u * nodes + v] -= bottleneck;
            cap[v * nodes + u] += bottleneck;
            v = u;
        }
        flow += bottleneck;
    }
}

/// Phase-one simplex with Bland's rule for `A p = b, p ≥ 0`. Returns the
/// minimal total artificial mass (0 iff feasible).
pub(crate) fn phase_one(a: &[Vec<f64>], b: &[f64]) -> f64 {
    let m = a.len();
    let nv = a.first().map_or(0, |r| r.len());
    let cols = nv + m;
    let mut t: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let mut row = a[i].clone();
            row.extend((0..m).map(|k| if k == i { 1.0 } else { 0.0 }));
            row.push(b[i]);
            row
        })
        .collect();
    let mut basis: Vec<usize> = (nv..cols).collect();
    let mut obj = vec![0.0; cols + 1];
    for row in &t {
        for j in 0..nv {
            obj[j] += row[j];
        }
        obj[cols] += row[cols];
    }
    loop {
        let Some(enter) = (0..cols).find(|&j| obj[j] > LP_EPS) else { break };
        let mut leave: Option<usize> = None;
        for i in 0..m {
            if t[i][enter] > LP_EPS {
                let better = match leave {
                    None => true,
                    Some(l) => {
                        let (ri, rl) = (t[i][cols] / t[i][enter], t[l][cols] / t[l][enter]);
                        ri < rl - LP_EPS || ((ri - rl).abs() <= LP_EPS && basis[i] < basis[l])
                    }
                };
                if better {
                    leave = Some(i);
                }
            }
        }
        let Some(l) = leave else { break };
        let piv = t[l][enter];
        for v in t[l].iter_mut() {
            *v /= piv;
        }
        let prow = t[l].clone();
        for (i, row) in t.iter_mut().enumerate() {
            if i != l && row[enter] != 0.0 {
                let f = row[enter];
                for (v, p) in row.iter_mut().zip(&prow) {
                    *v -= f * p;
                }
            }
        }
        let f = obj[enter];
        for (v, p) in obj.iter_mut().zip(&prow) {
            *v -= f * p;
        }
        basis[l] = enter;
    }
    obj[cols].max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flow_detects_blocked_coupling() {
        // 0 can only go to 0, but the second law has no mass on 0
        let allowed = vec![true, false, true, true];
        assert_eq!(hall_violation(&[0.5, 0.5], &[0.0, 1.0], &allowed, 2), Some(vec![0]));
        assert_eq!(hall_violation(&[0.5, 0.5], &[0.5, 0.5], &allowed, 2), None);
    }

    #[test]
    fn phase_one_simple_systems() {
        // p0 + p1 = 1, p0 = 0.3
        let a = vec![vec![1.0, 1.0], vec![1.0, 0.0]];
        assert!(phase_one(&a, &[1.0, 0.3]) < 1e-12);
        // p0 = 1 and p0 = 0.5 cannot both hold
        let a = vec![vec![1.0], vec![1.0]];
        assert!(phase_one(&a, &[1.0, 0.5]) > 0.1);
    }
}
