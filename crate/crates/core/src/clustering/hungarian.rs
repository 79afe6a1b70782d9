use crate::error::{Result, TflowError};

/// Maximum-weight perfect matching on a square matrix (Kuhn-Munkres with
/// potentials, `O(n^3)`). Returns the column assigned to each row.
pub fn max_weight_assignment(weights: &[Vec<i64>]) -> Vec<usize> {
    let n = weights.len();
    if n == 0 {
        return Vec::new();
    }
    // Minimize negated weights; 1-based arrays with a sentinel column 0.
    let cost = |i: usize, j: usize| -weights[i - 1][j - 1];
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = i64::MAX;
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
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Fraction of samples matched under the best one-to-one mapping between
/// predicted cluster ids and true class ids.
pub fn hungarian_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(TflowError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(TflowError::EmptyFile);
    }
    let n = 1 + pred.iter().chain(truth).copied().max().unwrap_or(0);
    let mut contingency = vec![vec![0i64; n]; n];
    for (&p, &t) in pred.iter().zip(truth) {
        contingency[p][t] += 1;
    }
    let assignment = max_weight_assignment(&contingency);
    let matched: i64 = assignment
        .iter()
        .enumerate()
        .map(|(p, &t)| contingency[p][t])
        .sum();
    Ok(matched as f64 / pred.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force_best(weights: &[Vec<i64>]) -> i64 {
        fn go(row: usize, used: &mut Vec<bool>, w: &[Vec<i64>]) -> i64 {
            if row == w.len() {
                return 0;
            }
            let mut best = i64::MIN;
            for j in 0..w.len() {
                if !used[j] {
                    used[j] = true;
                    best = best.max(w[row][j] + go(row + 1, used, w));
                    used[j] = false;
                }
            }
            best
        }
        go(0, &mut vec![false; weights.len()], weights)
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(hungarian_accuracy(&[0, 1, 2, 2], &[0, 1, 2, 2]).unwrap(), 1.0);
        assert_eq!(hungarian_accuracy(&[2, 0, 1, 1], &[0, 1, 2, 2]).unwrap(), 1.0);
        // Either mapping of {0,1} matches exactly 2 of 4.
        assert_eq!(hungarian_accuracy(&[0, 1, 0, 1], &[0, 0, 1, 1]).unwrap(), 0.5);
        assert!(matches!(
            hungarian_accuracy(&[0, 1], &[0]),
            Err(TflowError::LengthMismatch(2, 1))
        ));
    }

    #[test]
    fn more_clusters_than_classes() {
        // Cluster 2 cannot be matched to a real class.
        assert_eq!(hungarian_accuracy(&[0, 0, 1, 2], &[0, 0, 1, 1]).unwrap(), 0.75);
    }

    proptest! {
        #[test]
        fn assignment_is_optimal(
            w in (1usize..6).prop_flat_map(|n| prop::collection::vec(prop::collection::vec(0i64..50, n), n))
        ) {
            let a = max_weight_assignment(&w);
            let mut cols = a.clone();
            cols.sort();
            prop_assert_eq!(cols, (0..w.len()).collect::<Vec<_>>());
            let got: i64 = a.iter().enumerate().map(|(i, &j)| w[i][j]).sum();
            prop_assert_eq!(got, brute_force_best(&w));
        }

        #[test]
        fn invariant_to_relabeling(
            truth in prop::collection::vec(0usize..4, 1..40),
            pred in prop::collection::vec(0usize..4, 40),
            perm in Just([0usize, 1, 2, 3]).prop_shuffle(),
        ) {
            let pred = &pred[..truth.len()];
            let permuted: Vec<usize> = pred.iter().map(|&p| perm[p]).collect();
            prop_assert_eq!(
                hungarian_accuracy(pred, &truth).unwrap(),
                hungarian_accuracy(&permuted, &truth).unwrap()
            );
        }
    }
}
