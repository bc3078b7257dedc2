//! Order-independent summaries of Monte Carlo draws.

use nalgebra::DMatrix;

/// Pairwise summation; the result depends only on the order of `xs`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

pub fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Mean, covariance and Monte Carlo standard errors of a set of draws.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawSummary {
    pub draws: usize,
    pub mean: Vec<f64>,
    pub mean_se: Vec<f64>,
    /// Sample covariance with divisor `n − 1`.
    pub cov: DMatrix<f64>,
    /// Standard error of each covariance entry, from the spread of the
    /// centred cross products.
    pub cov_se: DMatrix<f64>,
}

/// Summarises draws given as one row per draw.
pub fn summarize(rows: &[Vec<f64>]) -> DrawSummary {
    let n = rows.len();
    let p = rows.first().map_or(0, |r| r.len());
    let column = |j: usize| rows.iter().map(|r| r[j]).collect::<Vec<_>>();
    let cols: Vec<Vec<f64>> = (0..p).map(column).collect();
    let means: Vec<f64> = cols.iter().map(|c| mean(c)).collect();
    let centred: Vec<Vec<f64>> = cols
        .iter()
        .zip(&means)
        .map(|(c, m)| c.iter().map(|x| x - m).collect())
        .collect();
    let mut cov = DMatrix::zeros(p, p);
    let mut cov_se = DMatrix::zeros(p, p);
    let nf = n as f64;
    for i in 0..p {
        for j in i..p {
            let prod: Vec<f64> = centred[i].iter().zip(&centred[j]).map(|(a, b)| a * b).collect();
            let s = pairwise_sum(&prod);
            let c = s / (nf - 1.0);
            let m = s / nf;
            let dev: Vec<f64> = prod.iter().map(|x| (x - m) * (x - m)).collect();
            let se = (pairwise_sum(&dev) / (nf - 1.0) / nf).sqrt();
            cov[(i, j)] = c;
            cov[(j, i)] = c;
            cov_se[(i, j)] = se;
            cov_se[(j, i)] = se;
        }
    }
    let mean_se = (0..p).map(|i| (cov[(i, i)] / nf).sqrt()).collect();
    DrawSummary { draws: n, mean: means, mean_se, cov, cov_se }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_exact_values() {
        let xs: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 500500.0);
    }

    #[test]
    fn summary_of_small_table() {
        let rows = vec![vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 7.0]];
        let s = summarize(&rows);
        assert_eq!(s.mean, vec![2.0, 13.0 / 3.0]);
        assert!((s.cov[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((s.cov[(0, 1)] - 2.5).abs() < 1e-14);
    }
}
