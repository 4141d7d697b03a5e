//! Minimum-cost rectangular assignment (Hungarian method with potentials,
//! O(n²m) for n ≤ m).

/// Solves the assignment problem for a dense `rows × cols` cost matrix given
/// as row slices. Returns, for each row, the column it is assigned to; when
/// there are more rows than columns some rows stay unassigned.
pub fn solve(costs: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = costs.len();
    if rows == 0 {
        return Vec::new();
    }
    let cols = costs[0].len();
    debug_assert!(costs.iter().all(|r| r.len() == cols));
    if cols == 0 {
        return vec![None; rows];
    }
    if rows <= cols {
        solve_wide(rows, cols, |i, j| costs[i][j])
    } else {
        let by_col = solve_wide(cols, rows, |i, j| costs[j][i]);
        let mut out = vec![None; rows];
        for (c, r) in by_col.into_iter().enumerate() {
            if let Some(r) = r {
                out[r] = Some(c);
            }
        }
        out
    }
}

fn solve_wide(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<Option<usize>> {
    // 1-based potentials; column 0 is a virtual source
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
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
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
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

pub fn total_cost(costs: &[Vec<f64>], assignment: &[Option<usize>]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| costs[i][j]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive minimum over all injective maps from the smaller side.
    fn brute(costs: &[Vec<f64>]) -> f64 {
        let rows = costs.len();
        let cols = costs[0].len();
        fn rec(costs: &[Vec<f64>], i: usize, used: &mut Vec<bool>, transpose: bool) -> f64 {
            let n = if transpose { costs[0].len() } else { costs.len() };
            if i == n {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..used.len() {
                if used[j] {
                    continue;
                }
                used[j] = true;
                let c = if transpose { costs[j][i] } else { costs[i][j] };
                best = best.min(c + rec(costs, i + 1, used, transpose));
                used[j] = false;
            }
            best
        }
        if rows <= cols {
            rec(costs, 0, &mut vec![false; cols], false)
        } else {
            rec(costs, 0, &mut vec![false; rows], true)
        }
    }

    #[test]
    fn small_cases() {
        assert_eq!(solve(&[vec![0.1]]), vec![Some(0)]);
        let c = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let a = solve(&c);
        assert_eq!(total_cost(&c, &a), 5.0);
        assert!(solve(&[]).is_empty());
        assert_eq!(solve(&[vec![], vec![]]), vec![None, None]);
    }

    #[test]
    fn tall_matrix_leaves_rows_unassigned() {
        let c = vec![vec![1.0], vec![0.5], vec![2.0]];
        assert_eq!(solve(&c), vec![None, Some(0), None]);
    }

    proptest! {
        #[test]
        fn matches_exhaustive_search(rows in 1usize..7, cols in 1usize..7, vals in prop::collection::vec(0.0f64..1.0, 36)) {
            let c: Vec<Vec<f64>> = (0..rows).map(|i| vals[i * 6..i * 6 + cols].to_vec()).collect();
            let a = solve(&c);
            let assigned = a.iter().filter(|x| x.is_some()).count();
            prop_assert_eq!(assigned, rows.min(cols));
            let mut seen = std::collections::HashSet::new();
            prop_assert!(a.iter().flatten().all(|j| seen.insert(*j)));
            prop_assert!((total_cost(&c, &a) - brute(&c)).abs() < 1e-9);
        }
    }
}
