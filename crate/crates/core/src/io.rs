//! JSON documents for measures, problems, solutions and fixtures.
//!
//! Times are written as exact strings (`"1/4"`); numbers are also accepted on
//! input. Infinite values appear only in potentials, as `"-inf"`.

use std::fs;
use std::io::Write;
use std::path::Path;

use num_rational::Rational64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::additive::{CycleCertificate, Potentials};
use crate::error::{Error, Result};
use crate::fixtures::CounterexampleFixture;
use crate::guard;
use crate::measure::{format_time, parse_time, time_from_f64, DensePathMeasure, MarkovPathMeasure, StateSpace, TimeGrid};
use crate::solvers::{Constraint, ProblemSpec, Reference, Solution};

mod time_list {
    use super::*;

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Text(String),
        Number(f64),
    }

    pub fn serialize<S: Serializer>(times: &[Rational64], s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(times.iter().map(|&t| format_time(t)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Rational64>, D::Error> {
        Vec::<Raw>::deserialize(d)?
            .into_iter()
            .map(|raw| match raw {
                Raw::Text(s) => parse_time(&s),
                Raw::Number(f) => time_from_f64(f),
            })
            .collect::<Result<_>>()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureBody {
    /// `kernels[k][x][y]` for the step from the k-th to the next grid time.
    Markov { init: Vec<f64>, kernels: Vec<Vec<Vec<f64>>> },
    /// Row-major weights over `n^K` paths, first time slowest.
    Dense { weights: Vec<f64> },
}

impl MeasureBody {
    pub fn from_dense(m: &DensePathMeasure) -> Self {
        MeasureBody::Dense { weights: m.weights().to_vec() }
    }

    pub fn from_markov(m: &MarkovPathMeasure) -> Self {
        let n = m.space().len();
        MeasureBody::Markov {
            init: m.init().to_vec(),
            kernels: m.kernels().iter().map(|k| k.chunks(n).map(|r| r.to_vec()).collect()).collect(),
        }
    }

    pub fn from_reference(r: &Reference) -> Self {
        match r {
            Reference::Markov(m) => Self::from_markov(m),
            Reference::Dense(d) => Self::from_dense(d),
        }
    }

    /// Builds the measure; dense input is checked against `limit` first.
    pub fn load(self, space: StateSpace, grid: TimeGrid, limit: usize) -> Result<Reference> {
        match self {
            MeasureBody::Markov { init, kernels } => {
                let n = space.len();
                let mut flat = Vec::with_capacity(kernels.len());
                for (step, k) in kernels.into_iter().enumerate() {
                    if k.len() != n || k.iter().any(|row| row.len() != n) {
                        return Err(Error::InvalidInput(format!("kernel {step} is not {n}×{n}")));
                    }
                    flat.push(k.into_iter().flatten().collect());
                }
                Ok(Reference::Markov(MarkovPathMeasure::new(space, grid, init, flat)?))
            }
            MeasureBody::Dense { weights } => {
                guard::ensure_cells(guard::cell_count(space.len(), grid.len()), limit)?;
                Ok(Reference::Dense(DensePathMeasure::new(space, grid, weights)?))
            }
        }
    }
}

/// A single path measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathDoc {
    pub states: Vec<String>,
    #[serde(with = "time_list")]
    pub times: Vec<Rational64>,
    #[serde(flatten)]
    pub measure: MeasureBody,
}

impl PathDoc {
    pub fn new(space: &StateSpace, grid: &TimeGrid, measure: MeasureBody) -> Self {
        Self { states: space.labels().to_vec(), times: grid.times().to_vec(), measure }
    }

    pub fn load(self, limit: usize) -> Result<Reference> {
        self.measure.load(StateSpace::new(self.states)?, TimeGrid::new(self.times)?, limit)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintDoc {
    pub index: usize,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemDoc {
    pub states: Vec<String>,
    #[serde(with = "time_list")]
    pub times: Vec<Rational64>,
    pub reference: MeasureBody,
    #[serde(default)]
    pub constraints: Vec<ConstraintDoc>,
    /// Joint law of the first and last positions, `endpoint[x][z]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<Vec<Vec<f64>>>,
}

impl ProblemDoc {
    pub fn from_spec(spec: &ProblemSpec) -> Self {
        let n = spec.space().len();
        Self {
            states: spec.space().labels().to_vec(),
            times: spec.grid().times().to_vec(),
            reference: MeasureBody::from_reference(spec.reference()),
            constraints: spec.constraints().iter().map(|c| ConstraintDoc { index: c.index, target: c.target.clone() }).collect(),
            endpoint: spec.endpoint().map(|pi| pi.chunks(n).map(|r| r.to_vec()).collect()),
        }
    }

    pub fn load(self, limit: usize) -> Result<ProblemSpec> {
        let space = StateSpace::new(self.states)?;
        let n = space.len();
        let reference = self.reference.load(space, TimeGrid::new(self.times)?, limit)?;
        let endpoint = match self.endpoint {
            Some(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::InvalidInput(format!("endpoint target is not {n}×{n}")));
                }
                Some(rows.into_iter().flatten().collect())
            }
            None => None,
        };
        let constraints = self.constraints.into_iter().map(|c| Constraint { index: c.index, target: c.target }).collect();
        ProblemSpec::new(reference, constraints, endpoint)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Direct,
    Folding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionDoc {
    pub route: Route,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<String>,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
    pub objective: f64,
    pub solution: PathDoc,
    pub potentials: Potentials,
}

impl SolutionDoc {
    pub fn new(sol: &Solution, route: Route, lambda: Option<Rational64>) -> Self {
        Self {
            route,
            lambda: lambda.map(format_time),
            converged: sol.converged,
            iterations: sol.iterations,
            residual: sol.residual,
            objective: sol.objective,
            solution: PathDoc::new(sol.p.space(), sol.p.grid(), MeasureBody::from_dense(&sol.p)),
            potentials: sol.potentials.clone(),
        }
    }
}

/// Input of `decompose` for a given density: `p ≪ reference`, constrained times,
/// and whether an endpoint potential is allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityDoc {
    pub states: Vec<String>,
    #[serde(with = "time_list")]
    pub times: Vec<Rational64>,
    pub reference: MeasureBody,
    pub p: MeasureBody,
    #[serde(default)]
    pub constrained: Vec<usize>,
    #[serde(default)]
    pub endpoint: bool,
}

impl DensityDoc {
    pub fn load(self, limit: usize) -> Result<(DensePathMeasure, DensePathMeasure, Vec<usize>, bool)> {
        let space = StateSpace::new(self.states)?;
        let grid = TimeGrid::new(self.times)?;
        let r = self.reference.load(space.clone(), grid.clone(), limit)?.to_dense(limit)?.into_owned();
        let p = self.p.load(space, grid, limit)?.to_dense(limit)?.into_owned();
        Ok((p, r, self.constrained, self.endpoint))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentValue {
    pub segment: Vec<String>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureDoc {
    pub name: String,
    pub states: Vec<String>,
    #[serde(with = "time_list")]
    pub times: Vec<Rational64>,
    pub reference: MeasureBody,
    pub s: usize,
    pub u: usize,
    pub t: usize,
    /// `f[x][z]` over the states at `s` and `t`.
    pub f: Vec<Vec<f64>>,
    pub a: Vec<SegmentValue>,
    pub b: Vec<SegmentValue>,
}

impl FixtureDoc {
    pub fn from_fixture(fx: &CounterexampleFixture) -> Self {
        let space = fx.r.space();
        let n = space.len();
        let segments = |m: &std::collections::BTreeMap<Vec<usize>, f64>| {
            m.iter()
                .map(|(seg, &value)| SegmentValue { segment: seg.iter().map(|&x| space.label(x).to_string()).collect(), value })
                .collect()
        };
        Self {
            name: fx.name.clone(),
            states: space.labels().to_vec(),
            times: fx.r.grid().times().to_vec(),
            reference: MeasureBody::from_dense(&fx.r),
            s: fx.s,
            u: fx.u,
            t: fx.t,
            f: fx.f.chunks(n).map(|r| r.to_vec()).collect(),
            a: segments(&fx.a),
            b: segments(&fx.b),
        }
    }

    pub fn load(self, limit: usize) -> Result<CounterexampleFixture> {
        let space = StateSpace::new(self.states)?;
        let n = space.len();
        let grid = TimeGrid::new(self.times)?;
        if self.f.len() != n || self.f.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput(format!("f is not {n}×{n}")));
        }
        let index = |seg: Vec<String>| -> Result<Vec<usize>> {
            seg.iter().map(|l| space.index_of(l).ok_or_else(|| Error::InvalidInput(format!("unknown state {l}")))).collect()
        };
        let mut a = std::collections::BTreeMap::new();
        for sv in self.a {
            a.insert(index(sv.segment)?, sv.value);
        }
        let mut b = std::collections::BTreeMap::new();
        for sv in self.b {
            b.insert(index(sv.segment)?, sv.value);
        }
        let r = self.reference.load(space, grid, limit)?.to_dense(limit)?.into_owned();
        Ok(CounterexampleFixture {
            name: self.name,
            r,
            f: self.f.into_iter().flatten().collect(),
            s: self.s,
            u: self.u,
            t: self.t,
            a,
            b,
            expected: crate::fixtures::Expected::SumDecomposeInfeasible,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateDoc {
    /// Alternating cycle of `(first, last)` state pairs.
    pub edges: Vec<(String, String)>,
    pub imbalance: f64,
}

impl CertificateDoc {
    pub fn new(cert: &CycleCertificate, space: &StateSpace) -> Self {
        Self {
            edges: cert.edges.iter().map(|&(x, z)| (space.label(x).to_string(), space.label(z).to_string())).collect(),
            imbalance: cert.imbalance,
        }
    }
}

/// Reads and parses a JSON document.
pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes `value` as pretty JSON, through a temporary file in the same
/// directory that is renamed into place.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::InvalidInput(format!("{}: {e}", dir.display())))?;
    serde_json::to_writer_pretty(&mut tmp, value)?;
    tmp.write_all(b"\n").map_err(|e| Error::Internal(e.to_string()))?;
    tmp.persist(path).map_err(|e| Error::InvalidInput(format!("{}: {}", path.display(), e.error)))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn problem_round_trip() {
        let spec = fixtures::random_problem(4, 3, 4, 2, true, 0.25, 1 << 12).unwrap();
        let doc = ProblemDoc::from_spec(&spec);
        let text = serde_json::to_string(&doc).unwrap();
        let back: ProblemDoc = serde_json::from_str(&text).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.load(1 << 12).unwrap(), spec);
    }

    #[test]
    fn times_accept_numbers_and_fractions() {
        let doc: PathDoc =
            serde_json::from_str(r#"{"states":["a","b"],"times":[0,"1/3",1],"dense":{"weights":[0.25,0.25,0.25,0.25,0,0,0,0]}}"#)
                .unwrap();
        assert_eq!(doc.times[1], Rational64::new(1, 3));
        assert!(doc.clone().load(4).is_err());
        assert!(doc.load(8).is_ok());
    }

    #[test]
    fn fixture_round_trip() {
        let fx = fixtures::shared_midpoint();
        let doc = FixtureDoc::from_fixture(&fx);
        let text = serde_json::to_string(&doc).unwrap();
        let back: FixtureDoc = serde_json::from_str(&text).unwrap();
        assert_eq!(back.load(1 << 16).unwrap(), fx);
    }

}
