//! Cyclic proportional fitting over an explicit list of charged paths.
//!
//! Each block is a statistic mapping a path to a category, with a target law
//! over categories. The iterate is `w = r · exp(Σ_b pot_b(cat_b))`; updating a
//! block adds `log target - log (current block law)` to its potential, which
//! also restores total mass 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    /// Category of every support path.
    pub categories: Vec<usize>,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    pub residual: f64,
    pub objective: f64,
    /// Value of the concave dual `Σ_b <target_b, pot_b> - log Σ r exp(Σ_b pot_b)`.
    pub dual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOutcome {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct Ipfp {
    r: Vec<f64>,
    blocks: Vec<Block>,
    pot: Vec<Vec<f64>>,
    w: Vec<f64>,
}

impl Ipfp {
    pub fn new(r: Vec<f64>, blocks: Vec<Block>) -> Result<Self> {
        if r.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::Internal("support weights must be positive".into()));
        }
        for b in &blocks {
            if b.categories.len() != r.len() || b.categories.iter().any(|&c| c >= b.target.len()) {
                return Err(Error::Internal("block categories do not match the support".into()));
            }
        }
        let pot = blocks.iter().map(|b| vec![0.0; b.target.len()]).collect();
        let w = r.clone();
        Ok(Self { r, blocks, pot, w })
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn potentials(&self) -> &[Vec<f64>] {
        &self.pot
    }

    pub fn mass(&self) -> f64 {
        self.w.iter().sum()
    }

    /// Current (unnormalized) law of block `b`.
    pub fn marginal(&self, b: usize) -> Vec<f64> {
        let block = &self.blocks[b];
        let mut m = vec![0.0; block.target.len()];
        for (&c, &w) in block.categories.iter().zip(&self.w) {
            m[c] += w;
        }
        m
    }

    /// Recomputes the iterate from the potentials, discarding accumulated rounding.
    pub fn refresh(&mut self) {
        for (p, w) in self.w.iter_mut().enumerate() {
            let mut s = 0.0;
            for (b, block) in self.blocks.iter().enumerate() {
                s += self.pot[b][block.categories[p]];
            }
            *w = if s == f64::NEG_INFINITY { 0.0 } else { self.r[p] * s.exp() };
        }
    }

    pub fn update_block(&mut self, b: usize) -> Result<()> {
        let m = self.marginal(b);
        let block = &self.blocks[b];
        let mut ratio = vec![1.0; m.len()];
        for c in 0..m.len() {
            let target = block.target[c];
            if target == 0.0 {
                ratio[c] = 0.0;
                self.pot[b][c] = f64::NEG_INFINITY;
            } else if m[c] > 0.0 {
                ratio[c] = target / m[c];
                self.pot[b][c] += target.ln() - m[c].ln();
            } else {
                return Err(Error::InfeasibleProblem(format!(
                    "block {b} category {c} has target {target} but no remaining mass"
                )));
            }
        }
        for (w, &c) in self.w.iter_mut().zip(&block.categories) {
            *w *= ratio[c];
        }
        Ok(())
    }

    /// Worst total-variation distance between a normalized block law and its target.
    pub fn residual(&self) -> f64 {
        let z = self.mass();
        if z <= 0.0 {
            return f64::INFINITY;
        }
        (0..self.blocks.len())
            .map(|b| {
                let m = self.marginal(b);
                0.5 * m.iter().zip(&self.blocks[b].target).map(|(x, t)| (x / z - t).abs()).sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// `H(P|R)` for the normalized iterate.
    pub fn objective(&self) -> f64 {
        let z = self.mass();
        self.w
            .iter()
            .zip(&self.r)
            .filter(|(&w, _)| w > 0.0)
            .map(|(&w, &r)| {
                let p = w / z;
                p * (p / r).ln()
            })
            .sum()
    }

    pub fn dual(&self) -> f64 {
        let mut lin = 0.0;
        for (b, block) in self.blocks.iter().enumerate() {
            for (c, &t) in block.target.iter().enumerate() {
                if t > 0.0 {
                    lin += t * self.pot[b][c];
                }
            }
        }
        let z: f64 = (0..self.w.len())
            .map(|p| {
                let s: f64 = self.blocks.iter().enumerate().map(|(b, bl)| self.pot[b][bl.categories[p]]).sum();
                if s == f64::NEG_INFINITY {
                    0.0
                } else {
                    self.r[p] * s.exp()
                }
            })
            .sum();
        lin - z.ln()
    }

    /// Runs full cycles until the residual at the start of a cycle is at most `tol`.
    pub fn run(&mut self, tol: f64, max_iter: usize, mut on_cycle: impl FnMut(&CycleRecord)) -> Result<RunOutcome> {
        let mut cycle = 0;
        loop {
            self.refresh();
            let residual = self.residual();
            on_cycle(&CycleRecord { cycle, residual, objective: self.objective(), dual: self.dual() });
            if residual <= tol {
                return Ok(RunOutcome { iterations: cycle, residual, converged: true });
            }
            if cycle >= max_iter {
                return Ok(RunOutcome { iterations: cycle, residual, converged: false });
            }
            for b in 0..self.blocks.len() {
                self.update_block(b)?;
            }
            cycle += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two() -> Ipfp {
        // paths (x, y) over 2 × 2 with uniform reference
        let r = vec![0.25; 4];
        let rows = Block { categories: vec![0, 0, 1, 1], target: vec![0.5, 0.5] };
        let cols = Block { categories: vec![0, 1, 0, 1], target: vec![0.9, 0.1] };
        Ipfp::new(r, vec![rows, cols]).unwrap()
    }

    #[test]
    fn product_reference_converges_to_product() {
        let mut e = two_by_two();
        let out = e.run(1e-12, 100, |_| {}).unwrap();
        assert!(out.converged);
        let w = e.weights();
        for (got, want) in w.iter().zip([0.45, 0.05, 0.45, 0.05]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn block_update_matches_target() {
        let mut e = two_by_two();
        e.update_block(1).unwrap();
        let m = e.marginal(1);
        assert!((m[0] - 0.9).abs() < 1e-12 && (m[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn zero_target_gives_minus_infinity() {
        let r = vec![0.5, 0.5];
        let b = Block { categories: vec![0, 1], target: vec![1.0, 0.0] };
        let mut e = Ipfp::new(r, vec![b]).unwrap();
        e.run(1e-12, 10, |_| {}).unwrap();
        assert_eq!(e.potentials()[0][1], f64::NEG_INFINITY);
        assert_eq!(e.weights()[1], 0.0);
    }
}
