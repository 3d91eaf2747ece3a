//! Square linear assignment by the shortest augmenting path Hungarian method.

use nalgebra::DMatrix;

/// Minimizes `sum_i cost[(i, perm[i])]` over permutations. Returns the optimal
/// value and `perm`. Rows are inserted in index order and columns scanned in
/// index order, so equal-cost optima resolve identically on every call.
pub fn solve(cost: &DMatrix<f64>) -> (f64, Vec<usize>) {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "assignment needs a square cost matrix");
    if n == 0 {
        return (0.0, Vec::new());
    }
    // 1-based potentials; column 0 is the virtual start
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[row_of[j] - 1] = j - 1;
    }
    let total = (0..n).map(|i| cost[(i, perm[i])]).sum();
    (total, perm)
}

/// Every permutation of `0..n` in lexicographic order.
#[cfg(test)]
pub(crate) fn all_perms(n: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                cur.push(j);
                rec(cur, used, out);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for n in 1..=6 {
            for _ in 0..30 {
                let c = DMatrix::from_fn(n, n, |_, _| rng.random_range(0..5) as f64 * 0.5);
                let (val, perm) = solve(&c);
                let best = all_perms(n)
                    .iter()
                    .map(|p| (0..n).map(|i| c[(i, p[i])]).sum::<f64>())
                    .fold(f64::INFINITY, f64::min);
                assert!((val - best).abs() < 1e-12);
                let mut seen = perm.clone();
                seen.sort();
                assert_eq!(seen, (0..n).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn identity_on_zero_diagonal() {
        let c = DMatrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 1.0 });
        assert_eq!(solve(&c), (0.0, vec![0, 1, 2, 3]));
        assert_eq!(solve(&DMatrix::zeros(0, 0)).0, 0.0);
    }
}
