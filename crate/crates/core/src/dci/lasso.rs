//! L1-penalized least squares by cyclic coordinate descent.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

/// Absolute coefficients of a lasso fit of standardized `y` on standardized `x`.
/// Constant features get coefficient 0.
pub(crate) fn lasso_importances(x: ArrayView2<f64>, y: ArrayView1<f64>, alpha: f64, max_iter: usize, tol: f64) -> Vec<f64> {
    let rows = x.nrows() as f64;
    let p = x.ncols();
    let standardize = |col: ArrayView1<f64>| {
        let mean = col.sum() / rows;
        let sd = (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / rows).sqrt();
        col.mapv(|v| if sd > 0.0 { (v - mean) / sd } else { 0.0 })
    };
    let mut xs = Array2::zeros(x.dim());
    for (j, col) in x.axis_iter(Axis(1)).enumerate() {
        xs.column_mut(j).assign(&standardize(col));
    }
    let ys = standardize(y);
    let norms: Vec<f64> = (0..p).map(|j| xs.column(j).dot(&xs.column(j)) / rows).collect();
    let mut beta = vec![0.0; p];
    let mut resid = ys.clone();
    for _ in 0..max_iter {
        let mut max_delta: f64 = 0.0;
        for j in 0..p {
            if norms[j] == 0.0 {
                continue;
            }
            let col = xs.column(j);
            let rho = col.dot(&resid) / rows + norms[j] * beta[j];
            let new = soft_threshold(rho, alpha) / norms[j];
            let delta = new - beta[j];
            if delta != 0.0 {
                resid.scaled_add(-delta, &col);
                beta[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        if max_delta < tol {
            break;
        }
    }
    beta.iter().map(|b| b.abs()).collect()
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    #[test]
    fn recovers_sparse_linear_weights() {
        let x = Array2::from_shape_fn((200, 3), |(i, j)| ((i * (j + 3)) % 17) as f64 - 8.0 + j as f64 * 0.1 * i as f64);
        let y: Array1<f64> = x.column(0).mapv(|v| 2.0 * v);
        let imp = lasso_importances(x.view(), y.view(), 0.0, 10_000, 1e-12);
        assert!((imp[0] - 1.0).abs() < 1e-6, "{imp:?}");
        assert!(imp[1] < 1e-6 && imp[2] < 1e-6);
    }

    #[test]
    fn soft_threshold_shrinks() {
        assert_eq!(soft_threshold(0.5, 0.25), 0.25);
        assert_eq!(soft_threshold(-0.05, 0.1), 0.0);
    }
}
