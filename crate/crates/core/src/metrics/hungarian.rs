//! Minimum-cost assignment (Kuhn-Munkres with potentials).

/// Column assigned to each row of a rectangular `cost` matrix, minimising the
/// total. Rows outnumbering columns get `None`.
pub fn min_cost_assignment(cost: &[Vec<i64>]) -> Vec<Option<usize>> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if rows == 0 {
        return Vec::new();
    }
    let n = rows.max(cols);
    let at = |i: usize, j: usize| if i < rows && j < cols { cost[i][j] } else { 0 };
    // 1-based arrays as in the classic formulation; p[j] is the row matched to column j
    let inf = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
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
    let mut out = vec![None; rows];
    for j in 1..=n {
        if p[j] >= 1 && p[j] <= rows && j <= cols {
            out[p[j] - 1] = Some(j - 1);
        }
    }
    out
}

/// Exhaustive minimum over all injective row-to-column maps (square or wide).
#[cfg(test)]
pub(crate) fn brute_force_min(cost: &[Vec<i64>]) -> i64 {
    fn go(cost: &[Vec<i64>], row: usize, used: &mut Vec<bool>) -> i64 {
        if row == cost.len() {
            return 0;
        }
        let mut best = i64::MAX;
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                best = best.min(cost[row][j] + go(cost, row + 1, used));
                used[j] = false;
            }
        }
        best
    }
    go(cost, 0, &mut vec![false; cost[0].len()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn total(cost: &[Vec<i64>], a: &[Option<usize>]) -> i64 {
        a.iter().enumerate().filter_map(|(i, j)| j.map(|j| cost[i][j])).sum()
    }

    #[test]
    fn small_known_case() {
        let cost = vec![vec![4, 1, 3], vec![2, 0, 5], vec![3, 2, 2]];
        let a = min_cost_assignment(&cost);
        assert_eq!(total(&cost, &a), 5);
    }

    #[test]
    fn tall_matrix_leaves_rows_unassigned() {
        let cost = vec![vec![5], vec![1], vec![3]];
        assert_eq!(min_cost_assignment(&cost), vec![None, Some(0), None]);
    }

    proptest! {
        #[test]
        fn matches_brute_force(n in 1usize..6, extra in 0usize..3, seed in prop::collection::vec(-50i64..50, 64)) {
            let cols = n + extra;
            let cost: Vec<Vec<i64>> = (0..n).map(|i| (0..cols).map(|j| seed[(i * cols + j) % 64] * (1 + (i as i64 + j as i64) % 3)).collect()).collect();
            let a = min_cost_assignment(&cost);
            let mut seen = std::collections::HashSet::new();
            prop_assert!(a.iter().all(|j| j.is_some_and(|j| seen.insert(j))));
            prop_assert_eq!(total(&cost, &a), brute_force_min(&cost));
        }
    }
}
