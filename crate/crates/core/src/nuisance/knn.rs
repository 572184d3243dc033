use nalgebra::DMatrix;

use super::Standardizer;
use crate::error::{Error, Result};

/// k-nearest-neighbour regressor on standardized covariates.
#[derive(Debug, Clone)]
pub struct KnnFit {
    std: Standardizer,
    z: DMatrix<f64>,
    y: Vec<f64>,
    pub k: usize,
}

pub fn fit_knn(x: &DMatrix<f64>, y: &[f64], k: Option<usize>) -> Result<KnnFit> {
    let n = y.len();
    if n == 0 {
        return Err(Error::EmptyInput("knn training set"));
    }
    if x.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x.nrows(),
        });
    }
    let k = k
        .unwrap_or_else(|| (n as f64).sqrt().ceil() as usize)
        .clamp(1, n);
    let std = Standardizer::fit(x);
    let z = std.transform(x);
    Ok(KnnFit {
        std,
        z,
        y: y.to_vec(),
        k,
    })
}

impl KnnFit {
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let q = self.std.transform(x);
        let n = self.y.len();
        let mut dist: Vec<(f64, usize)> = Vec::with_capacity(n);
        (0..q.nrows())
            .map(|i| {
                dist.clear();
                for r in 0..n {
                    let mut d = 0.0;
                    for j in 0..q.ncols() {
                        let diff = q[(i, j)] - self.z[(r, j)];
                        d += diff * diff;
                    }
                    dist.push((d, r));
                }
                if self.k < n {
                    dist.select_nth_unstable_by(self.k - 1, |a, b| {
                        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
                    });
                }
                dist[..self.k].iter().map(|&(_, r)| self.y[r]).sum::<f64>() / self.k as f64
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_equal_n_gives_mean() {
        let x = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        let y = [1.0, 2.0, 3.0, 6.0];
        let f = fit_knn(&x, &y, Some(4)).unwrap();
        let q = DMatrix::from_column_slice(2, 1, &[-5.0, 10.0]);
        assert_eq!(f.predict(&q), vec![3.0, 3.0]);
    }

    #[test]
    fn default_k_is_ceil_sqrt() {
        let x = DMatrix::from_fn(10, 1, |i, _| i as f64);
        let f = fit_knn(&x, &[0.0; 10], None).unwrap();
        assert_eq!(f.k, 4);
    }

    #[test]
    fn nearest_neighbour_interpolates() {
        let x = DMatrix::from_column_slice(3, 1, &[0.0, 10.0, 20.0]);
        let f = fit_knn(&x, &[1.0, 2.0, 3.0], Some(1)).unwrap();
        let q = DMatrix::from_column_slice(2, 1, &[9.0, 19.0]);
        assert_eq!(f.predict(&q), vec![2.0, 3.0]);
    }
}
