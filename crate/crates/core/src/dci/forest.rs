//! Bagged CART regression trees with impurity-decrease importances.

use ndarray::{ArrayView1, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Per-feature importances of one tree, normalized to sum to 1 (all zeros if
/// the tree never split).
pub(crate) fn tree_importances(x: ArrayView2<f64>, y: ArrayView1<f64>, max_depth: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let rows = x.nrows();
    let sample: Vec<usize> = (0..rows).map(|_| rng.random_range(0..rows)).collect();
    let mut imp = vec![0.0; x.ncols()];
    grow(x, y, sample, 0, max_depth, &mut imp);
    let total: f64 = imp.iter().sum();
    if total > 0.0 {
        imp.iter_mut().for_each(|v| *v /= total);
    }
    imp
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Sum of squared deviations of `y` over `idx`.
fn sse(y: ArrayView1<f64>, idx: &[usize]) -> f64 {
    let n = idx.len() as f64;
    let mean = idx.iter().map(|&i| y[i]).sum::<f64>() / n;
    idx.iter().map(|&i| (y[i] - mean) * (y[i] - mean)).sum()
}

fn best_split(x: ArrayView2<f64>, y: ArrayView1<f64>, idx: &[usize], parent: f64) -> Option<Split> {
    let n = idx.len();
    let total: f64 = idx.iter().map(|&i| y[i]).sum();
    let total_sq: f64 = idx.iter().map(|&i| y[i] * y[i]).sum();
    let mut best: Option<Split> = None;
    let mut order = idx.to_vec();
    for f in 0..x.ncols() {
        order.sort_unstable_by(|&a, &b| x[(a, f)].total_cmp(&x[(b, f)]));
        let (mut ls, mut lsq) = (0.0, 0.0);
        for k in 0..n - 1 {
            let yi = y[order[k]];
            ls += yi;
            lsq += yi * yi;
            let (lo, hi) = (x[(order[k], f)], x[(order[k + 1], f)]);
            if lo == hi {
                continue;
            }
            let nl = (k + 1) as f64;
            let nr = (n - k - 1) as f64;
            let rs = total - ls;
            let rsq = total_sq - lsq;
            let child = (lsq - ls * ls / nl) + (rsq - rs * rs / nr);
            let gain = parent - child;
            if gain > best.as_ref().map_or(0.0, |b| b.gain) {
                best = Some(Split {
                    feature: f,
                    threshold: 0.5 * (lo + hi),
                    gain,
                });
            }
        }
    }
    best
}

fn grow(x: ArrayView2<f64>, y: ArrayView1<f64>, idx: Vec<usize>, depth: usize, max_depth: usize, imp: &mut [f64]) {
    if depth >= max_depth || idx.len() < 2 {
        return;
    }
    let parent = sse(y, &idx);
    if parent <= 0.0 {
        return;
    }
    let Some(split) = best_split(x, y, &idx, parent) else {
        return;
    };
    // gain is already the weighted impurity decrease times the node size
    imp[split.feature] += split.gain;
    let (left, right): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| x[(i, split.feature)] <= split.threshold);
    grow(x, y, left, depth + 1, max_depth, imp);
    grow(x, y, right, depth + 1, max_depth, imp);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};
    use ndarray::{Array1, Array2};

    #[test]
    fn uses_only_the_informative_feature() {
        let mut rng = substream(1, Stream::Custom(1), 0);
        let x = Array2::from_shape_simple_fn((300, 3), || rng.random_range(-1.0..1.0));
        let y: Array1<f64> = x.column(1).mapv(|v| v * v * v);
        let imp = tree_importances(x.view(), y.view(), 8, &mut rng);
        assert!(imp[1] > 0.99, "{imp:?}");
        assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_target_gives_no_splits() {
        let mut rng = substream(2, Stream::Custom(1), 0);
        let x = Array2::from_shape_simple_fn((50, 2), || rng.random_range(-1.0..1.0));
        let y = Array1::from_elem(50, 3.0);
        assert_eq!(tree_importances(x.view(), y.view(), 8, &mut rng), vec![0.0, 0.0]);
    }

    #[test]
    fn split_gain_matches_direct_sse() {
        let x = Array2::from_shape_vec((4, 1), vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let y = Array1::from(vec![0.0, 0.0, 10.0, 10.0]);
        let idx = [0, 1, 2, 3];
        let s = best_split(x.view(), y.view(), &idx, sse(y.view(), &idx)).unwrap();
        assert_eq!(s.feature, 0);
        assert_eq!(s.threshold, 1.5);
        assert!((s.gain - 100.0).abs() < 1e-12);
    }
}
