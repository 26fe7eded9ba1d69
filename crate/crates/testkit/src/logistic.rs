//! Plain fixed-effects logistic regression via textbook IRLS.
//!
//! Small dense implementation with its own Gaussian-elimination solver;
//! used to cross-check the mixed-model fitter when all variance
//! components are pinned to zero.

/// Result of an IRLS run.
#[derive(Debug, Clone)]
pub struct IrlsFit {
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Fits `y ~ Bernoulli(invlogit(X beta))` by iteratively reweighted least
/// squares. `rows` holds one covariate vector per observation (without an
/// intercept column; one is prepended here). `y` entries must be 0 or 1.
pub fn fit_logistic(rows: &[Vec<f64>], y: &[f64], tol: f64, max_iter: usize) -> IrlsFit {
    assert_eq!(rows.len(), y.len());
    let p = rows.first().map_or(0, |r| r.len()) + 1;
    let mut beta = vec![0.0; p];
    let mut last_dev = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=max_iter {
        iterations = iter;
        let mut xtwx = vec![vec![0.0; p]; p];
        let mut xtwz = vec![0.0; p];
        let mut deviance = 0.0;
        for (row, &yi) in rows.iter().zip(y) {
            let mut xi = Vec::with_capacity(p);
            xi.push(1.0);
            xi.extend_from_slice(row);
            let eta: f64 = xi.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let mu = 1.0 / (1.0 + (-eta).exp());
            let mu = mu.clamp(1e-12, 1.0 - 1e-12);
            let w = mu * (1.0 - mu);
            let z = eta + (yi - mu) / w;
            for a in 0..p {
                for b in 0..p {
                    xtwx[a][b] += w * xi[a] * xi[b];
                }
                xtwz[a] += w * xi[a] * z;
            }
            deviance -= 2.0 * (yi * mu.ln() + (1.0 - yi) * (1.0 - mu).ln());
        }
        beta = solve(xtwx, xtwz);
        if (deviance - last_dev).abs() < tol {
            converged = true;
            break;
        }
        last_dev = deviance;
    }

    IrlsFit {
        coefficients: beta,
        converged,
        iterations,
    }
}

/// Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let d = a[col][col];
        for row in (col + 1)..n {
            let f = a[row][col] / d;
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in (row + 1)..n {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intercept_only_matches_logit_of_rate() {
        // 30 successes out of 100 -> beta0 = logit(0.3)
        let rows: Vec<Vec<f64>> = (0..100).map(|_| vec![]).collect();
        let y: Vec<f64> = (0..100).map(|i| if i < 30 { 1.0 } else { 0.0 }).collect();
        let fit = fit_logistic(&rows, &y, 1e-12, 50);
        let expected = (0.3f64 / 0.7).ln();
        assert!(fit.converged);
        assert!((fit.coefficients[0] - expected).abs() < 1e-8);
    }
}
