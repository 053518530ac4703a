//! Row-major multi-index helpers. Coordinate 0 varies slowest.

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn unravel_into(mut flat: usize, shape: &[usize], out: &mut [usize]) {
    for i in (0..shape.len()).rev() {
        out[i] = flat % shape[i];
        flat /= shape[i];
    }
}

pub(crate) fn unravel(flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut out = vec![0; shape.len()];
    unravel_into(flat, shape, &mut out);
    out
}

pub(crate) fn ravel(idx: &[usize], shape: &[usize]) -> usize {
    idx.iter().zip(shape).fold(0, |acc, (&i, &s)| acc * s + i)
}

/// Flat index of the sub-tensor cell picked out by `coords` from a full multi-index.
pub(crate) fn ravel_sub(idx: &[usize], coords: &[usize], shape: &[usize]) -> usize {
    coords.iter().fold(0, |acc, &c| acc * shape[c] + idx[c])
}

pub(crate) fn sub_shape(shape: &[usize], coords: &[usize]) -> Vec<usize> {
    coords.iter().map(|&c| shape[c]).collect()
}

/// Iterates all multi-indices of `shape` in row-major order.
pub(crate) struct MultiIndex {
    shape: Vec<usize>,
    current: Vec<usize>,
    done: bool,
}

impl MultiIndex {
    pub(crate) fn new(shape: &[usize]) -> Self {
        let done = shape.contains(&0);
        Self {
            shape: shape.to_vec(),
            current: vec![0; shape.len()],
            done,
        }
    }

    fn advance(&mut self) {
        for i in (0..self.shape.len()).rev() {
            self.current[i] += 1;
            if self.current[i] < self.shape[i] {
                return;
            }
            self.current[i] = 0;
        }
        self.done = true;
    }
}

impl Iterator for MultiIndex {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.current.clone();
        self.advance();
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ravel_roundtrip() {
        let shape = [2, 3, 4];
        for flat in 0..24 {
            let idx = unravel(flat, &shape);
            assert_eq!(ravel(&idx, &shape), flat);
        }
        assert_eq!(unravel(5, &shape), vec![0, 1, 1]);
    }

    #[test]
    fn multi_index_order() {
        let all: Vec<_> = MultiIndex::new(&[2, 2]).collect();
        assert_eq!(all, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
        assert_eq!(MultiIndex::new(&[]).count(), 1);
        assert_eq!(MultiIndex::new(&[3, 0]).count(), 0);
    }

    #[test]
    fn sub_ravel() {
        let shape = [2, 3, 4];
        let idx = [1, 2, 3];
        assert_eq!(ravel_sub(&idx, &[2, 0], &shape), 3 * 2 + 1);
        assert_eq!(sub_shape(&shape, &[2, 0]), vec![4, 2]);
    }
}
