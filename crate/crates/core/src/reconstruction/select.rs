//! Density-based clustering of mode entropies.

/// Cluster label of each point (`None` for noise) from DBSCAN on 1D values.
/// A point's neighbourhood includes itself.
pub fn dbscan_1d(values: &[f64], eps: f64, min_samples: usize) -> Vec<Option<usize>> {
    let n = values.len();
    let neighbours: Vec<Vec<usize>> =
        (0..n).map(|i| (0..n).filter(|&j| (values[i] - values[j]).abs() <= eps).collect()).collect();
    let core: Vec<bool> = neighbours.iter().map(|nb| nb.len() >= min_samples).collect();
    let mut label = vec![None; n];
    let mut next = 0;
    for start in 0..n {
        if !core[start] || label[start].is_some() {
            continue;
        }
        let id = next;
        next += 1;
        label[start] = Some(id);
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            for &j in &neighbours[i] {
                if label[j].is_none() {
                    label[j] = Some(id);
                    if core[j] {
                        stack.push(j);
                    }
                }
            }
        }
    }
    label
}

/// Mean gap between neighbouring values in sorted order, i.e. the spacing
/// the values would have if spread evenly over their range.
pub fn mean_adjacent_gap(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (hi - lo) / (values.len() - 1) as f64
}

/// Informative modes: the entropy cluster holding the lowest-entropy mode.
/// If that mode is itself unclustered, every unclustered mode below the
/// lowest cluster is kept; with no clusters at all, the most energetic mode.
pub fn select_modes(entropies: &[f64], eigenvalues: &[f64]) -> Vec<usize> {
    let n = entropies.len();
    if n == 0 {
        return Vec::new();
    }
    let labels = dbscan_1d(entropies, mean_adjacent_gap(entropies), 2);
    let lowest = (0..n).min_by(|&a, &b| entropies[a].total_cmp(&entropies[b])).unwrap();
    if let Some(c) = labels[lowest] {
        return (0..n).filter(|&i| labels[i] == Some(c)).collect();
    }
    let cluster_floor = (0..n)
        .filter(|&i| labels[i].is_some())
        .map(|i| entropies[i])
        .fold(f64::INFINITY, f64::min);
    if cluster_floor.is_finite() {
        return (0..n).filter(|&i| labels[i].is_none() && entropies[i] < cluster_floor).collect();
    }
    let top = (0..n).max_by(|&a, &b| eigenvalues[a].total_cmp(&eigenvalues[b])).unwrap();
    vec![top]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_point_example() {
        let e = [1.0, 1.1, 5.0, 5.1];
        assert!((mean_adjacent_gap(&e) - 4.1 / 3.0).abs() < 1e-12);
        let l = dbscan_1d(&e, mean_adjacent_gap(&e), 2);
        assert_eq!(l[0], l[1]);
        assert_eq!(l[2], l[3]);
        assert_ne!(l[0], l[2]);
        assert_eq!(select_modes(&e, &[4.0, 3.0, 2.0, 1.0]), vec![0, 1]);
    }

    #[test]
    fn single_and_uniform_cases() {
        assert_eq!(select_modes(&[2.3], &[1.0]), vec![0]);
        assert_eq!(select_modes(&[0.7; 5], &[5.0, 4.0, 3.0, 2.0, 1.0]), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn isolated_low_entropy_mode() {
        // mode 0 sits far below a tight block of noise modes
        let e = [1.0, 6.0, 6.1, 6.2, 6.25];
        assert_eq!(select_modes(&e, &[9.0, 1.0, 1.0, 1.0, 1.0]), vec![0]);
    }

    #[test]
    fn spread_noise_plateau_stays_one_cluster() {
        // two coherent modes below a ragged block of noise modes
        let e = [2.53, 4.80, 9.49, 9.73, 9.72, 9.77, 9.78, 9.78, 9.77, 9.79];
        assert_eq!(select_modes(&e, &[10.0, 9.0, 8.0, 7.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0]), vec![0, 1]);
    }

    #[test]
    fn explicit_eps_can_leave_only_noise() {
        let labels = dbscan_1d(&[0.0, 5.0, 20.0], 1.0, 2);
        assert!(labels.iter().all(|l| l.is_none()));
        // some gap is always at most the mean gap, so the energy fallback
        // only triggers for a lone mode
        assert_eq!(select_modes(&[3.0], &[0.5]), vec![0]);
    }
}
