use std::collections::VecDeque;

use super::ext_close;
use crate::error::{Error, Result};
use crate::measure::DensePathMeasure;

/// Tolerance for validating `f(x, z) = f_s(x) + f_t(z)`.
pub const SPLIT_TOL: f64 = 1e-10;

/// A cycle `(x_0, z_0), (x_0, z_1), (x_1, z_1), …` in the support of a pair
/// law along which `f` cannot split: the alternating sum
/// `f(e_0) - f(e_1) + f(e_2) - …` equals `imbalance ≠ 0`, whereas every
/// `g(x) + h(z)` sums to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleCertificate {
    pub edges: Vec<(usize, usize)>,
    pub imbalance: f64,
}

impl CycleCertificate {
    /// Recomputes the alternating sum from `f`.
    pub fn alternating_sum(&self, f: &[f64], n: usize) -> f64 {
        self.edges
            .iter()
            .enumerate()
            .map(|(i, &(x, z))| if i % 2 == 0 { f[x * n + z] } else { -f[x * n + z] })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SumDecomposition {
    /// `f(x, z) = f_s(x) + f_t(z)` on the support. `pivot` is the middle state used,
    /// or `None` when the split came from a spanning tree of the support.
    Split { f_s: Vec<f64>, f_t: Vec<f64>, pivot: Option<usize> },
    Infeasible(CycleCertificate),
}

/// Splits `f(X_s, X_t)` into `f_s(X_s) + f_t(X_t)` given that
/// `f(X_s, X_t) = a(X_{s..=u}) + b(X_{u..=t})` on the support of `r`.
///
/// Pivots `y` are tried by decreasing `R_u` mass (ties by index), with
/// `f_s(x) = E[a | X_s = x, X_u = y]` and `f_t(z) = E[b | X_u = y, X_t = z]`.
/// When no pivot validates, a cycle certificate is searched on the support of `R_{s,t}`.
pub fn sum_decompose(
    f: &[f64],
    r: &DensePathMeasure,
    s: usize,
    u: usize,
    t: usize,
    a: impl Fn(&[usize]) -> f64,
    b: impl Fn(&[usize]) -> f64,
) -> Result<SumDecomposition> {
    let n = r.n_states();
    if !(s < u && u < t && t < r.n_times()) {
        return Err(Error::BadCoords(format!("need s < u < t within the grid, got {s}, {u}, {t}")));
    }
    if f.len() != n * n {
        return Err(Error::InvalidInput(format!("f must be {n}×{n}")));
    }
    // conditional sums of a given (x, y) and of b given (y, z)
    let mut a_num = vec![0.0; n * n];
    let mut a_den = vec![0.0; n * n];
    let mut b_num = vec![0.0; n * n];
    let mut b_den = vec![0.0; n * n];
    let mut support = vec![false; n * n];
    let mut mass_u = vec![0.0; n];
    for (flat, path) in r.paths() {
        let w = r.weights()[flat];
        if w == 0.0 {
            continue;
        }
        let (x, y, z) = (path[s], path[u], path[t]);
        let av = a(&path[s..=u]);
        let bv = b(&path[u..=t]);
        let lhs = f[x * n + z];
        if !lhs.is_finite() {
            return Err(Error::InvalidInput(format!("f({x}, {z}) is not finite on the support")));
        }
        if !ext_close(lhs, av + bv, SPLIT_TOL) {
            return Err(Error::PremiseViolated { path, lhs, rhs: av + bv });
        }
        a_num[x * n + y] += w * av;
        a_den[x * n + y] += w;
        b_num[y * n + z] += w * bv;
        b_den[y * n + z] += w;
        support[x * n + z] = true;
        mass_u[y] += w;
    }
    let rows: Vec<bool> = (0..n).map(|x| (0..n).any(|z| support[x * n + z])).collect();
    let cols: Vec<bool> = (0..n).map(|z| (0..n).any(|x| support[x * n + z])).collect();

    let mut pivots: Vec<usize> = (0..n).filter(|&y| mass_u[y] > 0.0).collect();
    pivots.sort_by(|&p, &q| mass_u[q].total_cmp(&mass_u[p]).then(p.cmp(&q)));
    'pivot: for y in pivots {
        let mut f_s = vec![0.0; n];
        let mut f_t = vec![0.0; n];
        for x in (0..n).filter(|&x| rows[x]) {
            if a_den[x * n + y] == 0.0 {
                continue 'pivot;
            }
            f_s[x] = a_num[x * n + y] / a_den[x * n + y];
        }
        for z in (0..n).filter(|&z| cols[z]) {
            if b_den[y * n + z] == 0.0 {
                continue 'pivot;
            }
            f_t[z] = b_num[y * n + z] / b_den[y * n + z];
        }
        let ok = (0..n * n)
            .filter(|&c| support[c])
            .all(|c| ext_close(f[c], f_s[c / n] + f_t[c % n], SPLIT_TOL));
        if ok {
            return Ok(SumDecomposition::Split { f_s, f_t, pivot: Some(y) });
        }
    }

    if let Some(cert) = four_cycle(f, &support, n) {
        return Ok(SumDecomposition::Infeasible(cert));
    }
    Ok(match split_on_support(f, &support, n) {
        Ok((f_s, f_t)) => SumDecomposition::Split { f_s, f_t, pivot: None },
        Err(cert) => SumDecomposition::Infeasible(cert),
    })
}

/// First rectangle `x < x'`, `z < z'` in the support violating
/// `f(x,z) + f(x',z') = f(x,z') + f(x',z)`, in lexicographic order.
fn four_cycle(f: &[f64], support: &[bool], n: usize) -> Option<CycleCertificate> {
    for x in 0..n {
        for x2 in x + 1..n {
            for z in 0..n {
                for z2 in z + 1..n {
                    let cells = [(x, z), (x, z2), (x2, z2), (x2, z)];
                    if cells.iter().all(|&(i, j)| support[i * n + j]) {
                        let cert = CycleCertificate { edges: cells.to_vec(), imbalance: 0.0 };
                        let imbalance = cert.alternating_sum(f, n);
                        if !ext_close(imbalance, 0.0, SPLIT_TOL) {
                            return Some(CycleCertificate { imbalance, ..cert });
                        }
                    }
                }
            }
        }
    }
    None
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Node {
    Row(usize),
    Col(usize),
}

/// Solves `f(x, z) = g(x) + h(z)` on the support edges through a spanning forest
/// of the bipartite support graph, or returns an alternating cycle that violates it.
/// Each component is anchored with `g = 0` at its smallest row.
pub fn split_on_support(f: &[f64], support: &[bool], n: usize) -> std::result::Result<(Vec<f64>, Vec<f64>), CycleCertificate> {
    let mut g = vec![None; n];
    let mut h = vec![None; n];
    let mut parent_row = vec![None; n]; // column a row was reached from
    let mut parent_col = vec![None; n]; // row a column was reached from
    for root in 0..n {
        if g[root].is_some() || !(0..n).any(|z| support[root * n + z]) {
            continue;
        }
        g[root] = Some(0.0);
        let mut queue = VecDeque::from([Node::Row(root)]);
        while let Some(node) = queue.pop_front() {
            match node {
                Node::Row(x) => {
                    for z in (0..n).filter(|&z| support[x * n + z]) {
                        if h[z].is_none() {
                            h[z] = Some(f[x * n + z] - g[x].unwrap());
                            parent_col[z] = Some(x);
                            queue.push_back(Node::Col(z));
                        }
                    }
                }
                Node::Col(z) => {
                    for x in (0..n).filter(|&x| support[x * n + z]) {
                        if g[x].is_none() {
                            g[x] = Some(f[x * n + z] - h[z].unwrap());
                            parent_row[x] = Some(z);
                            queue.push_back(Node::Row(x));
                        }
                    }
                }
            }
        }
    }
    for x in 0..n {
        for z in 0..n {
            if !support[x * n + z] {
                continue;
            }
            let (gx, hz) = (g[x].unwrap(), h[z].unwrap());
            if !ext_close(f[x * n + z], gx + hz, SPLIT_TOL) {
                return Err(tree_cycle(f, n, x, z, &parent_row, &parent_col));
            }
        }
    }
    Ok((g.into_iter().map(|v| v.unwrap_or(0.0)).collect(), h.into_iter().map(|v| v.unwrap_or(0.0)).collect()))
}

fn root_path(start: Node, parent_row: &[Option<usize>], parent_col: &[Option<usize>]) -> Vec<Node> {
    let mut path = vec![start];
    let mut cur = start;
    loop {
        let next = match cur {
            Node::Row(x) => parent_row[x].map(Node::Col),
            Node::Col(z) => parent_col[z].map(Node::Row),
        };
        match next {
            Some(p) => {
                path.push(p);
                cur = p;
            }
            None => return path,
        }
    }
}

/// The cycle closing edge `(x, z)` through the spanning tree.
fn tree_cycle(
    f: &[f64],
    n: usize,
    x: usize,
    z: usize,
    parent_row: &[Option<usize>],
    parent_col: &[Option<usize>],
) -> CycleCertificate {
    let mut px = root_path(Node::Row(x), parent_row, parent_col);
    let mut pz = root_path(Node::Col(z), parent_row, parent_col);
    // strip the shared part above the lowest common ancestor
    while px.len() > 1 && pz.len() > 1 && px[px.len() - 2] == pz[pz.len() - 2] {
        px.pop();
        pz.pop();
    }
    // node walk: z -> ... -> lca -> ... -> x, then back to z through the closing edge
    let mut walk = pz.clone();
    walk.extend(px.iter().rev().skip(1));
    walk.push(Node::Col(z));
    let edges: Vec<(usize, usize)> = walk
        .windows(2)
        .map(|w| match (w[0], w[1]) {
            (Node::Row(a), Node::Col(b)) | (Node::Col(b), Node::Row(a)) => (a, b),
            _ => unreachable!("bipartite walk alternates"),
        })
        .collect();
    let cert = CycleCertificate { edges, imbalance: 0.0 };
    let imbalance = cert.alternating_sum(f, n);
    CycleCertificate { imbalance, ..cert }
}
