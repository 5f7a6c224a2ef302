use ndarray::{Array2, ArrayView2};

use crate::error::{BmsError, Result};

/// Largest sample count accepted by the exact solver.
pub const W2_MAX_SAMPLES: usize = 4096;

/// Minimum-cost perfect matching of a square cost matrix by the Hungarian
/// method with potentials, `O(n³)`. Returns the column assigned to each row.
pub fn optimal_assignment(cost: ArrayView2<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "assignment needs a square cost matrix");
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
                    let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
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
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    assignment
}

/// Squared Euclidean distances between the rows of `a` and `b`.
pub fn squared_distances(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.nrows(), b.nrows()), |(i, j)| {
        a.row(i).iter().zip(b.row(j)).map(|(x, y)| (x - y) * (x - y)).sum()
    })
}

/// Exact `W2` between two equal-size empirical measures:
/// `√(min_π (1/n) Σ_i ‖a_i − b_π(i)‖²)`.
pub fn wasserstein2(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(BmsError::SizeMismatch(format!("W2 needs equal sample sets, got {:?} and {:?}", a.dim(), b.dim())));
    }
    let n = a.nrows();
    if n > W2_MAX_SAMPLES {
        return Err(BmsError::InvalidParameter(format!(
            "exact W2 supports at most {W2_MAX_SAMPLES} samples, got {n}"
        )));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let cost = squared_distances(a, b);
    let assignment = optimal_assignment(cost.view());
    // summed in sorted order so that swapping the arguments is bitwise symmetric
    let mut matched: Vec<f64> = assignment.iter().enumerate().map(|(i, &j)| cost[[i, j]]).collect();
    matched.sort_by(f64::total_cmp);
    let total: f64 = matched.iter().sum();
    Ok((total.max(0.0) / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(cost: &Array2<f64>) -> f64 {
        fn rec(cost: &Array2<f64>, row: usize, used: &mut Vec<bool>, perm: &mut Vec<usize>, best: &mut f64) {
            let n = cost.nrows();
            if row == n {
                let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum();
                if total < *best {
                    *best = total;
                }
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    perm.push(j);
                    rec(cost, row + 1, used, perm, best);
                    perm.pop();
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, 0, &mut vec![false; cost.nrows()], &mut Vec::new(), &mut best);
        best
    }

    /// Re-sums the brute-force optimum in sorted order, as the solver does.
    fn sorted_sum(cost: &Array2<f64>, best: f64) -> f64 {
        let n = cost.nrows();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut found = None;
        permute(&mut perm, 0, &mut |p| {
            let total: f64 = p.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum();
            if total == best && found.is_none() {
                let mut v: Vec<f64> = p.iter().enumerate().map(|(i, &j)| cost[[i, j]]).collect();
                v.sort_by(f64::total_cmp);
                found = Some(v.iter().sum());
            }
        });
        found.expect("optimum is attained")
    }

    fn permute(p: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
        if k == p.len() {
            f(p);
            return;
        }
        for i in k..p.len() {
            p.swap(k, i);
            permute(p, k + 1, f);
            p.swap(k, i);
        }
    }

    #[test]
    fn trivial_cases() {
        let a = array![[0.0], [1.0]];
        assert_eq!(wasserstein2(a.view(), a.view()).unwrap(), 0.0);
        assert_eq!(wasserstein2(a.view(), array![[1.0], [0.0]].view()).unwrap(), 0.0);
        assert!(wasserstein2(a.view(), array![[1.0]].view()).is_err());
        let big = Array2::<f64>::zeros((W2_MAX_SAMPLES + 1, 1));
        assert!(wasserstein2(big.view(), big.view()).is_err());
    }

    #[test]
    fn matches_brute_force_on_small_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let a = Array2::from_shape_fn((6, 2), |_| rng.gen_range(-1.0..1.0));
            let b = Array2::from_shape_fn((6, 2), |_| rng.gen_range(-1.0..1.0));
            let best = brute_force(&squared_distances(a.view(), b.view()));
            let best = sorted_sum(&squared_distances(a.view(), b.view()), best);
            assert_eq!(wasserstein2(a.view(), b.view()).unwrap(), (best / 6.0).sqrt());
        }
    }

    #[test]
    fn one_dimensional_matching_is_sorted() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a: Vec<f64> = (0..200).map(|_| rng.gen()).collect();
        let b: Vec<f64> = (0..200).map(|_| rng.gen::<f64>() * 2.0).collect();
        let (mut sa, mut sb) = (a.clone(), b.clone());
        sa.sort_by(f64::total_cmp);
        sb.sort_by(f64::total_cmp);
        let sorted = (sa.iter().zip(&sb).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / 200.0).sqrt();
        let am = Array2::from_shape_vec((200, 1), a).unwrap();
        let bm = Array2::from_shape_vec((200, 1), b).unwrap();
        assert!((wasserstein2(am.view(), bm.view()).unwrap() - sorted).abs() < 1e-12);
    }
}
