//! Cell-count limits for dense path tensors.

use crate::error::{Error, Result};

/// Environment variable overriding [`DEFAULT_CELL_LIMIT`].
pub const SIZE_GUARD_ENV: &str = "BRIDGEKIT_SIZE_GUARD";

pub const DEFAULT_CELL_LIMIT: usize = 1 << 24;

/// Default limit for the brute-force oracle.
pub const ORACLE_CELL_LIMIT: usize = 4096;

/// The default dense-tensor limit, honouring `BRIDGEKIT_SIZE_GUARD`.
pub fn default_cell_limit() -> usize {
    std::env::var(SIZE_GUARD_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&v| v > 0)
        .unwrap_or(DEFAULT_CELL_LIMIT)
}

/// Number of cells of an `n^k` tensor, saturating instead of overflowing.
pub fn cell_count(n: usize, k: usize) -> u128 {
    let mut cells: u128 = 1;
    for _ in 0..k {
        cells = cells.saturating_mul(n as u128);
    }
    cells
}

pub fn ensure_cells(cells: u128, limit: usize) -> Result<usize> {
    if cells > limit as u128 {
        return Err(Error::SizeGuard { cells, limit });
    }
    Ok(cells as usize)
}
