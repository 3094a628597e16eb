//! Minimum-cost rectangular assignment (shortest augmenting path with
//! potentials, O(n^2 m)).

use super::TrackerError;

/// Result of [`hungarian`]. Every row is assigned when rows <= cols, every
/// column when cols <= rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub row_to_col: Vec<Option<usize>>,
    pub cols: usize,
    pub total_cost: f64,
}

impl Assignment {
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.row_to_col
            .iter()
            .enumerate()
            .filter_map(|(r, c)| c.map(|c| (r, c)))
    }

    pub fn unmatched_rows(&self) -> Vec<usize> {
        self.row_to_col
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_none())
            .map(|(r, _)| r)
            .collect()
    }

    pub fn unmatched_cols(&self) -> Vec<usize> {
        let mut used = vec![false; self.cols];
        for (_, c) in self.pairs() {
            used[c] = true;
        }
        (0..self.cols).filter(|&c| !used[c]).collect()
    }
}

/// Solves `min sum cost[r][c]` over partial permutations of size
/// `min(rows, cols)`. `cost` must be rectangular and finite.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Assignment, TrackerError> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if cost.iter().any(|r| r.len() != cols) {
        return Err(TrackerError::Cost("ragged cost matrix".into()));
    }
    if cost.iter().flatten().any(|v| !v.is_finite()) {
        return Err(TrackerError::Cost("non-finite cost".into()));
    }
    if rows == 0 || cols == 0 {
        return Ok(Assignment {
            row_to_col: vec![None; rows],
            cols,
            total_cost: 0.0,
        });
    }
    let row_to_col = if rows <= cols {
        solve(rows, cols, |r, c| cost[r][c])
    } else {
        let col_to_row = solve(cols, rows, |r, c| cost[c][r]);
        let mut out = vec![None; rows];
        for (c, r) in col_to_row.into_iter().enumerate() {
            out[r.expect("every column assigned")] = Some(c);
        }
        out
    };
    let total_cost = row_to_col
        .iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| cost[r][c]))
        .sum();
    Ok(Assignment {
        row_to_col,
        cols,
        total_cost,
    })
}

/// `n <= m`; returns the column of each row.
fn solve(n: usize, m: usize, a: impl Fn(usize, usize) -> f64) -> Vec<Option<usize>> {
    // 1-based with index 0 as the virtual source
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
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
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = Some(j - 1);
        }
    }
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive minimum over all partial permutations of size min(rows, cols).
    pub(crate) fn brute_force(cost: &[Vec<f64>]) -> f64 {
        let rows = cost.len();
        let cols = cost.first().map_or(0, Vec::len);
        fn rec(cost: &[Vec<f64>], r: usize, used: &mut Vec<bool>, left: usize, acc: f64, best: &mut f64) {
            if left == 0 {
                *best = best.min(acc);
                return;
            }
            if cost.len() - r < left {
                return;
            }
            // row r unassigned (only possible when rows exceed what is needed)
            if cost.len() - r > left {
                rec(cost, r + 1, used, left, acc, best);
            }
            for c in 0..used.len() {
                if !used[c] {
                    used[c] = true;
                    rec(cost, r + 1, used, left - 1, acc + cost[r][c], best);
                    used[c] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, 0, &mut vec![false; cols], rows.min(cols), 0.0, &mut best);
        if rows.min(cols) == 0 {
            0.0
        } else {
            best
        }
    }

    #[test]
    fn two_by_two_example() {
        let a = hungarian(&[vec![4.0, 1.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!(a.row_to_col, vec![Some(1), Some(0)]);
        assert_eq!(a.total_cost, 3.0);
    }

    #[test]
    fn diagonal_preference_gives_identity() {
        let n = 5;
        let cost: Vec<Vec<f64>> = (0..n)
            .map(|r| (0..n).map(|c| if r == c { 0.0 } else { 1.0 }).collect())
            .collect();
        let a = hungarian(&cost).unwrap();
        assert_eq!(a.row_to_col, (0..n).map(Some).collect::<Vec<_>>());
    }

    #[test]
    fn rectangular_reports_unmatched() {
        let wide = hungarian(&[vec![5.0, 1.0, 3.0]]).unwrap();
        assert_eq!(wide.row_to_col, vec![Some(1)]);
        assert_eq!(wide.unmatched_cols(), vec![0, 2]);
        let tall = hungarian(&[vec![5.0], vec![1.0], vec![3.0]]).unwrap();
        assert_eq!(tall.row_to_col, vec![None, Some(0), None]);
        assert_eq!(tall.unmatched_rows(), vec![0, 2]);
        assert!(hungarian(&[]).unwrap().row_to_col.is_empty());
        assert!(hungarian(&[vec![1.0], vec![]]).is_err());
        assert!(hungarian(&[vec![f64::NAN]]).is_err());
    }

    #[test]
    fn matches_all_720_permutations() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let cost: Vec<Vec<f64>> = (0..6)
                .map(|_| (0..6).map(|_| rng.random_range(0.0..10.0)).collect())
                .collect();
            let a = hungarian(&cost).unwrap();
            assert!((a.total_cost - brute_force(&cost)).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn optimal_on_random_matrices(
            rows in 1usize..=7,
            cols in 1usize..=7,
            seed in any::<u64>(),
            integral in any::<bool>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let cost: Vec<Vec<f64>> = (0..rows)
                .map(|_| (0..cols).map(|_| if integral { rng.random_range(0..4) as f64 } else { rng.random_range(-5.0..5.0) }).collect())
                .collect();
            let a = hungarian(&cost).unwrap();
            let mut seen = vec![false; cols];
            for (_, c) in a.pairs() {
                prop_assert!(!seen[c]);
                seen[c] = true;
            }
            prop_assert_eq!(a.pairs().count(), rows.min(cols));
            prop_assert!((a.total_cost - brute_force(&cost)).abs() < 1e-9);
        }
    }
}
