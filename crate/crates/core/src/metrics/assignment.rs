//! Maximum-weight perfect matching on small square matrices.

/// Largest size solved by subset dynamic programming; larger instances use
/// the Hungarian method. Both are exact.
pub const EXHAUSTIVE_MAX: usize = 8;

/// Returns the optimal total weight and `assign[row] = column`.
pub fn max_weight_assignment(weights: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let n = weights.len();
    debug_assert!(weights.iter().all(|r| r.len() == n));
    match n {
        0 => (0.0, Vec::new()),
        1 => (weights[0][0], vec![0]),
        _ if n <= EXHAUSTIVE_MAX => subset_dp(weights),
        _ => hungarian_max(weights),
    }
}

/// `best[mask]`: best weight placing rows `0..popcount(mask)` into the
/// columns of `mask`.
fn subset_dp(w: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let n = w.len();
    let full = 1usize << n;
    let mut best = vec![f64::NEG_INFINITY; full];
    let mut choice = vec![usize::MAX; full];
    best[0] = 0.0;
    for mask in 1..full {
        let row = mask.count_ones() as usize - 1;
        for col in 0..n {
            let bit = 1 << col;
            if mask & bit != 0 {
                let v = best[mask ^ bit] + w[row][col];
                if v > best[mask] {
                    best[mask] = v;
                    choice[mask] = col;
                }
            }
        }
    }
    let mut assign = vec![0; n];
    let mut mask = full - 1;
    for row in (0..n).rev() {
        let col = choice[mask];
        assign[row] = col;
        mask ^= 1 << col;
    }
    (best[full - 1], assign)
}

/// Hungarian method with potentials, O(n^3), on costs `-w`.
pub fn hungarian_max(w: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let n = w.len();
    let cost = |i: usize, j: usize| -w[i - 1][j - 1];
    // 1-based arrays; p[j] = row matched to column j
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
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
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    let total = assign.iter().enumerate().map(|(i, &j)| w[i][j]).sum();
    (total, assign)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Factorial enumeration via Heap's algorithm.
    fn brute_force(w: &[Vec<f64>]) -> f64 {
        let n = w.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let score = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| w[i][j]).sum::<f64>();
        let mut best = score(&perm);
        let mut c = vec![0; n];
        let mut i = 0;
        while i < n {
            if c[i] < i {
                if i % 2 == 0 {
                    perm.swap(0, i);
                } else {
                    perm.swap(c[i], i);
                }
                best = best.max(score(&perm));
                c[i] += 1;
                i = 0;
            } else {
                c[i] = 0;
                i += 1;
            }
        }
        best
    }

    fn matrix(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(0.0f64..1.0, n), n)
    }

    #[test]
    fn known_instance() {
        let w = vec![vec![0.9, 0.1, 0.0], vec![0.8, 0.7, 0.0], vec![0.0, 0.6, 0.5]];
        let (total, assign) = max_weight_assignment(&w);
        assert!((total - (0.9 + 0.7 + 0.5)).abs() < 1e-12);
        assert_eq!(assign, vec![0, 1, 2]);
    }

    proptest! {
        #[test]
        fn dp_matches_enumeration(w in (1usize..=6).prop_flat_map(matrix)) {
            let (total, assign) = max_weight_assignment(&w);
            prop_assert!((total - brute_force(&w)).abs() < 1e-12);
            let mut cols = assign.clone();
            cols.sort();
            prop_assert_eq!(cols, (0..w.len()).collect::<Vec<_>>());
        }

        #[test]
        fn hungarian_matches_dp(w in (2usize..=8).prop_flat_map(matrix)) {
            let (h, _) = hungarian_max(&w);
            let (d, _) = subset_dp(&w);
            prop_assert!((h - d).abs() < 1e-9);
        }
    }

    #[test]
    fn large_instances_use_hungarian() {
        let n = 12;
        let w: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == (j + 5) % n { 1.0 } else { 0.1 }).collect())
            .collect();
        let (total, _) = max_weight_assignment(&w);
        assert!((total - n as f64).abs() < 1e-12);
    }
}
