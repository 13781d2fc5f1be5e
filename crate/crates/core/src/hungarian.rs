//! Minimum-cost bipartite assignment.
//!
//! Shortest-augmenting-path formulation with dual potentials, operating
//! directly on float costs. Rectangular matrices are handled by solving
//! the transposed problem when rows outnumber columns; the result always
//! pairs min(m, n) rows with distinct columns at minimum total cost.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum HungarianError {
    #[error("cost matrix is empty")]
    Empty,
    #[error("cost matrix is ragged: row {row} has {got} columns, expected {expected}")]
    Ragged {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("non-finite cost at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
}

/// Optimal assignment: `pairs` holds (row, col) sorted by row, `total`
/// their summed cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
    pub total: f64,
}

pub fn hungarian(cost: &[Vec<f64>]) -> Result<Assignment, HungarianError> {
    if cost.is_empty() || cost[0].is_empty() {
        return Err(HungarianError::Empty);
    }
    let rows = cost.len();
    let cols = cost[0].len();
    for (r, row) in cost.iter().enumerate() {
        if row.len() != cols {
            return Err(HungarianError::Ragged {
                row: r,
                got: row.len(),
                expected: cols,
            });
        }
        for (c, v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(HungarianError::NonFinite { row: r, col: c });
            }
        }
    }

    let transposed = rows > cols;
    let (n, m) = if transposed { (cols, rows) } else { (rows, cols) };
    let at = |i: usize, j: usize| -> f64 {
        if transposed {
            cost[j][i]
        } else {
            cost[i][j]
        }
    };

    // Potentials u (rows), v (cols); p[j] = row matched to column j, with
    // index 0 as the virtual unmatched slot. One-based throughout.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let reduced = at(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        // Walk the augmenting path back, flipping matches.
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs = Vec::with_capacity(n);
    for j in 1..=m {
        if p[j] != 0 {
            let (row, col) = if transposed { (j - 1, p[j] - 1) } else { (p[j] - 1, j - 1) };
            pairs.push((row, col));
        }
    }
    pairs.sort_unstable();
    let total = pairs.iter().map(|&(r, c)| cost[r][c]).sum();
    Ok(Assignment { pairs, total })
}
