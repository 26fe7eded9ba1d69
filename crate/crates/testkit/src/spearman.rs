//! O(n²) average-rank Spearman correlation, computed from first principles.

/// Average (fractional) rank of each element, by pairwise counting.
///
/// The rank of `v[i]` is `1 + #{j : v[j] < v[i]}` plus half the number of
/// other elements equal to it, which is the mean of the positions a tie
/// block occupies in a sorted ordering.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut ranks = vec![0.0; n];
    for i in 0..n {
        let mut less = 0usize;
        let mut equal = 0usize;
        for j in 0..n {
            if v[j] < v[i] {
                less += 1;
            } else if v[j] == v[i] {
                equal += 1; // counts i itself
            }
        }
        ranks[i] = less as f64 + (equal as f64 + 1.0) / 2.0;
    }
    ranks
}

/// Spearman rho as the Pearson correlation of average ranks.
///
/// Returns `None` when either vector is constant (correlation undefined)
/// or the lengths differ or n < 3.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 3 {
        return None;
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    pearson(&rx, &ry)
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_with_ties_average() {
        // sorted positions of the two 2s are 2 and 3 -> average 2.5
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 4.0]), vec![1.0, 2.5, 2.5, 4.0]);
    }

    #[test]
    fn perfect_monotone_is_one() {
        let x = [1.0, 2.0, 3.0, 5.0];
        let y = [10.0, 20.0, 21.0, 100.0];
        assert!((spearman_rho(&x, &y).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_vector_is_undefined() {
        assert!(spearman_rho(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_none());
    }
}
