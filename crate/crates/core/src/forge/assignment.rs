//! Square linear assignment for point matching.

/// Sets up to this size are matched exactly; larger ones use [`greedy_nearest`].
pub const EXACT_LIMIT: usize = 128;

/// Minimum-cost perfect matching on a square cost matrix (row-major, `n × n`).
///
/// Returns `perm` with row `i` assigned to column `perm[i]`. Shortest
/// augmenting paths with potentials, `O(n³)`.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n × n");
    if n == 0 {
        return Vec::new();
    }
    // 1-based potentials; column 0 is the virtual source
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
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
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
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[p[j] - 1] = j - 1;
    }
    perm
}

/// Each row in order takes its cheapest unused column.
pub fn greedy_nearest(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n × n");
    let mut used = vec![false; n];
    (0..n)
        .map(|i| {
            let row = &cost[i * n..(i + 1) * n];
            let j = (0..n)
                .filter(|&j| !used[j])
                .min_by(|&a, &b| row[a].total_cmp(&row[b]))
                .expect("a free column remains");
            used[j] = true;
            j
        })
        .collect()
}

fn sq_dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Matches two equal-size point sets by total squared distance.
pub fn match_points(a: &[[f64; 3]], b: &[[f64; 3]]) -> Vec<usize> {
    assert_eq!(a.len(), b.len(), "point sets must have equal size");
    let n = a.len();
    let cost: Vec<f64> = a.iter().flat_map(|&p| b.iter().map(move |&q| sq_dist(p, q))).collect();
    if n <= EXACT_LIMIT {
        hungarian(&cost, n)
    } else {
        greedy_nearest(&cost, n)
    }
}

pub fn assignment_cost(cost: &[f64], n: usize, perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_instance() {
        let cost = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let perm = hungarian(&cost, 3);
        assert_eq!(perm, vec![1, 0, 2]);
        assert_eq!(assignment_cost(&cost, 3, &perm), 5.0);
    }

    #[test]
    fn empty_and_single() {
        assert!(hungarian(&[], 0).is_empty());
        assert_eq!(hungarian(&[7.0], 1), vec![0]);
    }

    #[test]
    fn obvious_point_matching() {
        let a = [[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [0.0, 10.0, 0.0]];
        let b = [[0.0, 10.1, 0.0], [0.1, 0.0, 0.0], [10.0, 0.2, 0.0]];
        assert_eq!(match_points(&a, &b), vec![1, 2, 0]);
    }

    #[test]
    fn greedy_is_a_permutation() {
        let cost: Vec<f64> = (0..25).map(|i| ((i * 7) % 11) as f64).collect();
        let mut p = greedy_nearest(&cost, 5);
        p.sort_unstable();
        assert_eq!(p, vec![0, 1, 2, 3, 4]);
    }
}
