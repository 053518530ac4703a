use serde::{Deserialize, Serialize};

use super::{
    ext_close, extract_additive_functional, split_on_support, sum_decompose, AdditiveFunctional, SumDecomposition,
};
use crate::error::{Error, Result};
use crate::markov::{bridge, is_irreducible, is_reciprocal, IrreducibilityMode, DEFAULT_TOL};
use crate::measure::{first_uncovered, DensePathMeasure};

/// Relative tolerance when comparing reconstructed and actual densities.
pub const RECONSTRUCTION_TOL: f64 = 1e-9;

/// Relative tolerance for the measurability check.
pub const MEASURABILITY_TOL: f64 = 1e-10;

/// `log dP/dR (ω) = Σ_i f_i(ω_{t_i}) + η(ω_0, ω_{K-1}) + constant`.
///
/// `-∞` entries encode zero density. `constant` is only nonzero when there
/// is no potential to absorb it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Potentials {
    pub times: Vec<usize>,
    #[serde(with = "crate::serde_ext::vec_vec")]
    pub f: Vec<Vec<f64>>,
    #[serde(default, with = "crate::serde_ext::opt_vec_vec", skip_serializing_if = "Option::is_none")]
    pub eta: Option<Vec<Vec<f64>>>,
    #[serde(default, with = "crate::serde_ext::scalar")]
    pub constant: f64,
}

impl Potentials {
    pub fn log_density(&self, path: &[usize]) -> f64 {
        let mut v = self.constant;
        for (i, &t) in self.times.iter().enumerate() {
            v += self.f[i][path[t]];
        }
        if let Some(eta) = &self.eta {
            v += eta[path[0]][path[path.len() - 1]];
        }
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }

    /// Worst relative error of `exp(log_density)` against `dP/dR` on the support of `r`.
    pub fn reconstruction_error(&self, p: &DensePathMeasure, r: &DensePathMeasure) -> Result<(f64, Option<Vec<usize>>)> {
        p.same_frame(r)?;
        let mut worst = 0.0;
        let mut at = None;
        for (flat, path) in r.paths() {
            let rw = r.weights()[flat];
            if rw == 0.0 {
                continue;
            }
            let d = p.weights()[flat] / rw;
            let e = self.log_density(&path).exp();
            let err = if d > 0.0 {
                (e - d).abs() / d
            } else if e == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            if err > worst {
                worst = err;
                at = Some(path);
            }
        }
        Ok((worst, at))
    }

    pub fn check_reconstruction(&self, p: &DensePathMeasure, r: &DensePathMeasure, tol: f64) -> Result<()> {
        let (error, at) = self.reconstruction_error(p, r)?;
        if error > tol {
            return Err(Error::ReconstructionFailed { cell: at.unwrap_or_default(), error });
        }
        Ok(())
    }

    /// Shifts each `f_i` to zero mean under `marginals[i]`. Without `η` the last
    /// potential absorbs the shifts and the constant; with `η` every `f_i` is
    /// centred and `η` absorbs everything.
    pub fn gauge_fix(&mut self, marginals: &[Vec<f64>]) {
        let m = self.f.len();
        let centred = if self.eta.is_some() { m } else { m.saturating_sub(1) };
        let mut shift = self.constant;
        for i in 0..centred {
            let mu = &marginals[i];
            let mass: f64 = mu.iter().sum();
            if mass <= 0.0 {
                continue;
            }
            let mean: f64 = self.f[i].iter().zip(mu).filter(|(_, &w)| w > 0.0).map(|(v, &w)| v * w).sum::<f64>() / mass;
            if !mean.is_finite() {
                continue;
            }
            for v in self.f[i].iter_mut() {
                *v -= mean;
            }
            shift += mean;
        }
        if let Some(eta) = self.eta.as_mut() {
            for v in eta.iter_mut().flatten() {
                *v += shift;
            }
            self.constant = 0.0;
        } else if m > 0 {
            for v in self.f[m - 1].iter_mut() {
                *v += shift;
            }
            self.constant = 0.0;
        }
    }
}

/// A functional that vanishes on every interval avoiding the constrained
/// times, together with the per-time terms it is built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Localized {
    pub times: Vec<usize>,
    /// `Ã([t_k, t_l]) = Σ_{t_i ∈ [t_k, t_l]} f[i](ω_{t_i})`.
    pub f: Vec<Vec<f64>>,
    pub functional: AdditiveFunctional,
}

fn check_times(times: &[usize], k: usize) -> Result<()> {
    if times.windows(2).any(|w| w[0] >= w[1]) || times.iter().any(|&t| t >= k) {
        return Err(Error::BadCoords(format!("constrained times {times:?} must be increasing and below {k}")));
    }
    Ok(())
}

fn not_irreducible(r: &DensePathMeasure, mode: IrreducibilityMode) -> Result<()> {
    let rep = is_irreducible(r, mode, 0.0)?;
    if !rep.holds {
        let w = rep.witness.map(|w| format!(" at times {:?}, states {:?}", w.time_indices, w.states)).unwrap_or_default();
        return Err(Error::NotIrreducible(format!("{} support mismatches{w}", rep.worst_residual)));
    }
    Ok(())
}

/// Rewrites `A` so that it charges only the constrained times, keeping `A([0,1])`.
///
/// Each gap `(τ_{i-1}, τ_i)` between consecutive constrained times is split as
/// `α_i(X_{τ_{i-1}}) + β_i(X_{τ_i})`, by [`sum_decompose`] around the middle
/// grid index when the gap holds one, and directly otherwise. The decompositions
/// run under `P`, whose support is where the values are finite.
pub fn localize_functional(
    a: &AdditiveFunctional,
    p: &DensePathMeasure,
    r: &DensePathMeasure,
    times: &[usize],
) -> Result<Localized> {
    let k = p.n_times();
    let n = p.n_states();
    check_times(times, k)?;
    if times.is_empty() {
        return Err(Error::PreconditionFailed("localization needs at least one constrained time".into()));
    }
    not_irreducible(r, IrreducibilityMode::MarkovPairs)?;
    let m = times.len();
    let mut alpha = vec![vec![0.0; n]; m + 1];
    let mut beta = vec![vec![0.0; n]; m + 1];
    for i in 1..m {
        let (s, t) = (times[i - 1], times[i]);
        // f(x, z) = A((s, t)) read off any charged path
        let mut f = vec![0.0; n * n];
        let mut support = vec![false; n * n];
        for (flat, path) in p.paths() {
            if p.weights()[flat] > 0.0 && !support[path[s] * n + path[t]] {
                let c = path[s] * n + path[t];
                support[c] = true;
                f[c] = a.value(&path, super::Interval::Open(s, t));
            }
        }
        let (al, be) = if t - s >= 2 {
            let u = (s + t) / 2;
            let left = |seg: &[usize]| a.closed_segment(s, u, seg) - a.closed_segment(s, s, &seg[..1]);
            let right = |seg: &[usize]| {
                let len = seg.len();
                a.closed_segment(u, t, seg) - a.closed_segment(u, u, &seg[..1]) - a.closed_segment(t, t, &seg[len - 1..])
            };
            match sum_decompose(&f, p, s, u, t, left, right)? {
                SumDecomposition::Split { f_s, f_t, .. } => (f_s, f_t),
                SumDecomposition::Infeasible(cert) => {
                    return Err(Error::Internal(format!("gap ({s}, {t}) does not split: cycle {:?}", cert.edges)))
                }
            }
        } else {
            split_on_support(&f, &support, n)
                .map_err(|cert| Error::Internal(format!("gap ({s}, {t}) does not split: cycle {:?}", cert.edges)))?
        };
        alpha[i] = al;
        beta[i] = be;
    }
    let mut f = Vec::with_capacity(m);
    for (i, &t) in times.iter().enumerate() {
        let marg = p.time_marginal(t)?;
        let row: Vec<f64> = (0..n)
            .map(|x| {
                if marg[x] <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let mut v = a.closed_segment(t, t, &[x]);
                if i > 0 {
                    v += beta[i][x];
                }
                if i + 1 < m {
                    v += alpha[i + 1][x];
                }
                v
            })
            .collect();
        f.push(row);
    }
    let functional = AdditiveFunctional::from_fn(n, k, |lo, hi, seg| {
        times
            .iter()
            .enumerate()
            .filter(|(_, &t)| lo <= t && t <= hi)
            .map(|(i, &t)| f[i][seg[t - lo]])
            .sum()
    });
    for (flat, path) in r.paths() {
        if r.weights()[flat] == 0.0 {
            continue;
        }
        let (want, got) = (a.total(&path), functional.total(&path));
        if !ext_close(want, got, RECONSTRUCTION_TOL) {
            let error = if want.is_finite() && got.is_finite() { (want - got).abs() } else { f64::INFINITY };
            return Err(Error::ReconstructionFailed { cell: path, error });
        }
    }
    Ok(Localized { times: times.to_vec(), f, functional })
}

/// Ungauged per-time terms for a Markov pair, or the constant log-density when no time is constrained.
fn raw_potentials(p: &DensePathMeasure, r: &DensePathMeasure, times: &[usize]) -> Result<Potentials> {
    if times.is_empty() {
        let mut constant = None;
        for (flat, path) in r.paths() {
            let rw = r.weights()[flat];
            if rw == 0.0 {
                continue;
            }
            let d = (p.weights()[flat] / rw).ln();
            match constant {
                None => constant = Some(d),
                Some(c) if ext_close(c, d, RECONSTRUCTION_TOL) => {}
                Some(c) => {
                    let error = if c.is_finite() && d.is_finite() { (c - d).abs() } else { f64::INFINITY };
                    return Err(Error::ReconstructionFailed { cell: path, error });
                }
            }
        }
        return Ok(Potentials { times: vec![], f: vec![], eta: None, constant: constant.unwrap_or(0.0) });
    }
    let a = extract_additive_functional(p, r)?;
    let loc = localize_functional(&a, p, r, times)?;
    Ok(Potentials { times: times.to_vec(), f: loc.f, eta: None, constant: 0.0 })
}

/// Potentials of an entropy minimizer `P` with respect to `R`, gauge-fixed and
/// checked to reconstruct `dP/dR`.
///
/// With `endpoint`, the density additionally carries `η(X_0, X_{K-1})`. The
/// per-time terms come from one endpoint bridge (the pair of largest reference
/// mass), and `η` is read off pathwise from the remaining log-density.
pub fn decompose_to_potentials(p: &DensePathMeasure, r: &DensePathMeasure, times: &[usize], endpoint: bool) -> Result<Potentials> {
    p.same_frame(r)?;
    p.measure().ensure_probability()?;
    check_times(times, p.n_times())?;
    if let Some(flat) = first_uncovered(p.measure(), r.measure()) {
        return Err(Error::NotAbsolutelyContinuous { cell: p.path(flat) });
    }
    let marginals: Vec<Vec<f64>> = times.iter().map(|&t| p.time_marginal(t)).collect::<Result<_>>()?;
    let mut pot = if endpoint {
        endpoint_potentials(p, r, times)?
    } else {
        if !times.is_empty() {
            not_irreducible(r, IrreducibilityMode::MarkovPairs)?;
        }
        raw_potentials(p, r, times)?
    };
    pot.gauge_fix(&marginals);
    pot.check_reconstruction(p, r, RECONSTRUCTION_TOL)?;
    Ok(pot)
}

fn endpoint_potentials(p: &DensePathMeasure, r: &DensePathMeasure, times: &[usize]) -> Result<Potentials> {
    let k = p.n_times();
    let n = p.n_states();
    let last = k - 1;
    let rec = is_reciprocal(&r.normalize()?, DEFAULT_TOL)?;
    if !rec.holds {
        return Err(Error::PreconditionFailed(format!("reference is not reciprocal (residual {:e})", rec.worst_residual)));
    }
    not_irreducible(r, IrreducibilityMode::ReciprocalTriples)?;
    let p_ends = p.marginal(&[0, last])?;
    let r_ends = r.marginal(&[0, last])?;
    let pivot = (0..n * n)
        .filter(|&c| p_ends.weights()[c] > 0.0)
        .max_by(|&c, &d| r_ends.weights()[c].total_cmp(&r_ends.weights()[d]).then(d.cmp(&c)))
        .ok_or_else(|| Error::InvalidInput("P has no mass".into()))?;
    let (a0, b0) = (pivot / n, pivot % n);
    let interior: Vec<usize> = times.iter().copied().filter(|&t| t > 0 && t < last).collect();
    let inner = raw_potentials(&bridge(p, a0, b0)?, &bridge(r, a0, b0)?, &interior)?;

    let mut f = Vec::with_capacity(times.len());
    let mut j = 0;
    for &t in times {
        if t == 0 || t == last {
            let marg = p.time_marginal(t)?;
            f.push(marg.iter().map(|&w| if w > 0.0 { 0.0 } else { f64::NEG_INFINITY }).collect());
        } else {
            f.push(inner.f[j].clone());
            j += 1;
        }
    }
    let mut pot = Potentials { times: times.to_vec(), f, eta: None, constant: 0.0 };
    let mut eta: Vec<Vec<Option<f64>>> = vec![vec![None; n]; n];
    for (flat, path) in r.paths() {
        let rw = r.weights()[flat];
        let pw = p.weights()[flat];
        if rw == 0.0 || pw == 0.0 {
            continue;
        }
        let v = (pw / rw).ln() - pot.log_density(&path);
        let slot = &mut eta[path[0]][path[last]];
        match *slot {
            None => *slot = Some(v),
            Some(e) if ext_close(e, v, RECONSTRUCTION_TOL) => {}
            Some(e) => {
                let error = if e.is_finite() && v.is_finite() { (e - v).abs() } else { f64::INFINITY };
                return Err(Error::ReconstructionFailed { cell: path, error });
            }
        }
    }
    pot.eta = Some(eta.into_iter().map(|row| row.into_iter().map(|v| v.unwrap_or(f64::NEG_INFINITY)).collect()).collect());
    Ok(pot)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurabilityReport {
    /// `dP/dR` is constant on classes of charged paths agreeing on the coordinates.
    pub holds: bool,
    /// Two charged paths in one class with different densities.
    pub witness: Option<(Vec<usize>, Vec<usize>)>,
    /// `P(·|S) = R(·|S)` for every value of `S` charged by `P`.
    pub conditionals_agree: bool,
    /// When `holds`, the class value equals `d(S♯P)/d(S♯R)`.
    pub matches_pushforward: bool,
}

impl MeasurabilityReport {
    /// The two characterizations agree, as they must.
    pub fn consistent(&self) -> bool {
        self.holds == self.conditionals_agree && (!self.holds || self.matches_pushforward)
    }
}

/// Whether `dP/dR` is a function of the listed coordinates.
pub fn density_measurability_check(p: &DensePathMeasure, r: &DensePathMeasure, coords: &[usize]) -> Result<MeasurabilityReport> {
    p.same_frame(r)?;
    p.measure().ensure_probability()?;
    if let Some(flat) = first_uncovered(p.measure(), r.measure()) {
        return Err(Error::NotAbsolutelyContinuous { cell: p.path(flat) });
    }
    let ps = p.marginal(coords)?;
    let rs = r.marginal(coords)?;
    let key = |path: &[usize]| coords.iter().fold(0, |acc, &c| acc * p.n_states() + path[c]);
    let mut class: Vec<Option<(f64, Vec<usize>)>> = vec![None; ps.len()];
    let mut holds = true;
    let mut witness = None;
    let mut matches_pushforward = true;
    let mut tv = vec![0.0; ps.len()];
    for (flat, path) in r.paths() {
        let rw = r.weights()[flat];
        if rw == 0.0 {
            continue;
        }
        let pw = p.weights()[flat];
        let d = pw / rw;
        let c = key(&path);
        let (pm, rm) = (ps.weights()[c], rs.weights()[c]);
        if pm > 0.0 {
            tv[c] += 0.5 * (pw / pm - rw / rm).abs();
        }
        match &class[c] {
            None => class[c] = Some((d, path)),
            Some((v, other)) => {
                if holds && (d - v).abs() > MEASURABILITY_TOL * d.max(*v) {
                    holds = false;
                    witness = Some((other.clone(), path));
                }
            }
        }
        let push = pm / rm;
        if (d - push).abs() > MEASURABILITY_TOL * d.max(push).max(f64::MIN_POSITIVE) {
            matches_pushforward = false;
        }
    }
    let conditionals_agree = tv.iter().all(|&v| v <= MEASURABILITY_TOL);
    Ok(MeasurabilityReport { holds, witness, conditionals_agree, matches_pushforward: holds && matches_pushforward })
}
