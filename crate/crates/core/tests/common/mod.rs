//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random strictly positive weights summing to one.
pub fn random_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw.iter().map(|v| v / s).collect();
    // make the sum exactly representable as 1 in the last slot
    let head: f64 = w[..n - 1].iter().sum();
    w[n - 1] = 1.0 - head;
    w
}

pub fn random_cost(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, m), |_| rng.random_range(0.0..1.0))
}

/// Minimum transport cost by enumerating every basis of the transportation
/// polytope: each spanning tree of the bipartite cell graph determines a
/// unique solution by leaf peeling; feasible ones are the vertices.
pub fn vertex_enumeration_min(p: &[f64], q: &[f64], c: &Array2<f64>) -> (f64, Array2<f64>) {
    let (n, m) = (p.len(), q.len());
    let cells: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
    let k = n + m - 1;
    let mut best = (f64::INFINITY, Array2::zeros((n, m)));
    let mut subset: Vec<usize> = (0..k).collect();
    loop {
        if let Some(gamma) = basis_solution(p, q, &cells, &subset) {
            if gamma.iter().all(|&g| g >= -1e-12) {
                let cost: f64 = gamma.iter().zip(c.iter()).map(|(g, c)| g * c).sum();
                if cost < best.0 {
                    best = (cost, gamma);
                }
            }
        }
        // next k-combination of the cells in lexicographic order
        let total = cells.len();
        let mut i = k;
        while i > 0 && subset[i - 1] == total - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return best;
        }
        subset[i - 1] += 1;
        for j in i..k {
            subset[j] = subset[j - 1] + 1;
        }
    }
}

fn basis_solution(
    p: &[f64],
    q: &[f64],
    cells: &[(usize, usize)],
    subset: &[usize],
) -> Option<Array2<f64>> {
    let (n, m) = (p.len(), q.len());
    // spanning-tree check with union-find
    let mut parent: Vec<usize> = (0..n + m).collect();
    fn find(parent: &mut Vec<usize>, x: usize) -> usize {
        let mut r = x;
        while parent[r] != r {
            r = parent[r];
        }
        parent[x] = r;
        r
    }
    for &s in subset {
        let (i, j) = cells[s];
        let (a, b) = (find(&mut parent, i), find(&mut parent, n + j));
        if a == b {
            return None;
        }
        parent[a] = b;
    }
    let mut remaining: Vec<f64> = p.iter().chain(q.iter()).copied().collect();
    let mut active: Vec<(usize, usize)> = subset.iter().map(|&s| cells[s]).collect();
    let mut gamma = Array2::zeros((n, m));
    while !active.is_empty() {
        let mut degree = vec![0usize; n + m];
        for &(i, j) in &active {
            degree[i] += 1;
            degree[n + j] += 1;
        }
        let pos = active
            .iter()
            .position(|&(i, j)| degree[i] == 1 || degree[n + j] == 1)
            .expect("a tree always has a leaf");
        let (i, j) = active.remove(pos);
        let v = if degree[i] == 1 { remaining[i] } else { remaining[n + j] };
        gamma[[i, j]] = v;
        remaining[i] -= v;
        remaining[n + j] -= v;
    }
    Some(gamma)
}

/// All permutations of `0..n`.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method
/// with row/column potentials, O(n³)).
pub fn hungarian_min(c: &Array2<f64>) -> f64 {
    let n = c.nrows();
    assert_eq!(n, c.ncols());
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
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
                    let cur = c[[i0 - 1, j - 1]] - u[i0] - v[j];
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
    (1..=n).map(|j| c[[p[j] - 1, j - 1]]).sum()
}
