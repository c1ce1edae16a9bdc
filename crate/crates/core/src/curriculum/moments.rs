//! Mean/covariance fit and Mahalanobis distance through a Cholesky factor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Ridge {
    /// `1e-6 * trace(S) / dim`, or `1e-12` when the trace is zero.
    Auto,
    Fixed(f64),
}

/// Moments of a latent sample: mean, sample covariance and the lower Cholesky
/// factor `L` of `S + lambda I`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentModel {
    pub mean: Vec<f64>,
    pub covariance: Matrix,
    pub ridge: f64,
    pub factor: Matrix,
}

/// Column means and `n - 1` sample covariance, then factor `S + lambda I`.
pub fn fit_moments(latent: &Matrix, ridge: Ridge) -> Result<MomentModel> {
    let (n, k) = latent.shape();
    if n < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            available: n,
        });
    }
    let mean = latent.column_means();
    let mut cov = Matrix::zeros(k, k);
    let mut centered = vec![0.0; k];
    for row in latent.row_iter() {
        for ((c, x), m) in centered.iter_mut().zip(row).zip(&mean) {
            *c = x - m;
        }
        for i in 0..k {
            let ci = centered[i];
            let cov_row = cov.row_mut(i);
            for j in 0..=i {
                cov_row[j] += ci * centered[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..k {
        for j in 0..=i {
            let v = cov.get(i, j) / denom;
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    MomentModel::from_parts(mean, cov, ridge)
}

impl MomentModel {
    pub fn from_parts(mean: Vec<f64>, covariance: Matrix, ridge: Ridge) -> Result<Self> {
        let k = mean.len();
        if covariance.shape() != (k, k) {
            return Err(Error::dim("covariance size", k * k, covariance.data().len()));
        }
        for i in 0..k {
            for j in 0..i {
                if (covariance.get(i, j) - covariance.get(j, i)).abs() > 1e-9 {
                    return Err(Error::Numeric(format!("covariance not symmetric at ({i}, {j})")));
                }
            }
        }
        let ridge = match ridge {
            Ridge::Fixed(l) if l >= 0.0 => l,
            Ridge::Fixed(l) => return Err(Error::Config(format!("ridge must be >= 0, got {l}"))),
            Ridge::Auto => {
                let trace: f64 = (0..k).map(|i| covariance.get(i, i)).sum();
                if trace > 0.0 {
                    1e-6 * trace / k as f64
                } else {
                    1e-12
                }
            }
        };
        let mut regularised = covariance.clone();
        for i in 0..k {
            let v = regularised.get(i, i) + ridge;
            regularised.set(i, i, v);
        }
        let factor = cholesky(&regularised)?;
        Ok(MomentModel {
            mean,
            covariance,
            ridge,
            factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `(x - mu)^T (S + lambda I)^{-1} (x - mu)`, by forward substitution on `L`.
    pub fn squared_mahalanobis(&self, x: &[f64]) -> Result<f64> {
        let k = self.dim();
        if x.len() != k {
            return Err(Error::dim("mahalanobis input", k, x.len()));
        }
        // solve L z = x - mu; result is |z|^2
        let mut z = vec![0.0; k];
        for i in 0..k {
            let row = self.factor.row(i);
            let mut acc = x[i] - self.mean[i];
            for j in 0..i {
                acc -= row[j] * z[j];
            }
            z[i] = acc / row[i];
        }
        Ok(z.iter().map(|v| v * v).sum())
    }

    pub fn mahalanobis(&self, x: &[f64]) -> Result<f64> {
        Ok(self.squared_mahalanobis(x)?.sqrt())
    }

    /// Distance of every row.
    pub fn score_rows(&self, data: &Matrix) -> Result<Vec<f64>> {
        data.row_iter().map(|r| self.mahalanobis(r)).collect()
    }
}

/// Lower-triangular `L` with `L L^T = a`.
fn cholesky(a: &Matrix) -> Result<Matrix> {
    let k = a.rows();
    let mut l = Matrix::zeros(k, k);
    for i in 0..k {
        for j in 0..=i {
            let mut sum = a.get(i, j);
            for p in 0..j {
                sum -= l.get(i, p) * l.get(j, p);
            }
            if i == j {
                if !(sum > 0.0) || !sum.is_finite() {
                    return Err(Error::Numeric(format!(
                        "covariance + ridge is not positive definite: pivot {i} = {sum:e}"
                    )));
                }
                l.set(i, i, sum.sqrt());
            } else {
                l.set(i, j, sum / l.get(j, j));
            }
        }
    }
    Ok(l)
}

/// `1 - cos(x_i, reference)` per row; zero rows score 1.
pub fn cosine_scores(features: &Matrix, reference: &[f64]) -> Result<Vec<f64>> {
    if reference.len() != features.cols() {
        return Err(Error::dim("cosine reference", features.cols(), reference.len()));
    }
    let ref_norm = reference.iter().map(|x| x * x).sum::<f64>().sqrt();
    if ref_norm == 0.0 {
        return Err(Error::Precondition("cosine reference vector is zero".into()));
    }
    Ok(features
        .row_iter()
        .map(|row| {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 1.0;
            }
            let dot: f64 = row.iter().zip(reference).map(|(a, b)| a * b).sum();
            1.0 - (dot / (norm * ref_norm)).clamp(-1.0, 1.0)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_rows_give_zero_covariance_and_distance() {
        let latent = Matrix::from_rows(&vec![vec![1.5, -2.0, 0.25]; 6]).unwrap();
        let m = fit_moments(&latent, Ridge::Auto).unwrap();
        assert_eq!(m.covariance.max_abs(), 0.0);
        assert!(m.ridge > 0.0);
        assert_eq!(m.mahalanobis(&[1.5, -2.0, 0.25]).unwrap(), 0.0);
    }

    #[test]
    fn mean_of_square_corners() {
        let latent = Matrix::from_rows(&[vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 2.0], vec![2.0, 2.0]]).unwrap();
        let m = fit_moments(&latent, Ridge::Auto).unwrap();
        assert_eq!(m.mean, vec![1.0, 1.0]);
    }

    #[test]
    fn covariance_matches_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..500)
            .map(|_| {
                let a: f64 = rng.random_range(-1.0..1.0);
                let b: f64 = rng.random_range(-1.0..1.0);
                vec![a, 0.5 * a + b, 3.0 - b + rng.random_range(-0.1..0.1)]
            })
            .collect();
        let m = fit_moments(&Matrix::from_rows(&rows).unwrap(), Ridge::Auto).unwrap();
        // pass 1: means, pass 2: centred products
        let n = rows.len() as f64;
        let mu: Vec<f64> = (0..3).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        for i in 0..3 {
            for j in 0..3 {
                let s: f64 = rows.iter().map(|r| (r[i] - mu[i]) * (r[j] - mu[j])).sum::<f64>() / (n - 1.0);
                assert!((s - m.covariance.get(i, j)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn distance_at_mean_is_zero_and_identity_is_euclidean() {
        let m = MomentModel::from_parts(vec![1.0, -1.0], Matrix::identity(2), Ridge::Fixed(0.0)).unwrap();
        assert_eq!(m.mahalanobis(&[1.0, -1.0]).unwrap(), 0.0);
        let d = m.mahalanobis(&[4.0, 3.0]).unwrap();
        assert!((d - 5.0).abs() < 1e-15);
    }

    #[test]
    fn diagonal_covariance_hand_value() {
        let s = Matrix::from_rows(&[vec![4.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let m = MomentModel::from_parts(vec![0.0, 0.0], s, Ridge::Fixed(0.0)).unwrap();
        let d = m.mahalanobis(&[2.0, 3.0]).unwrap();
        assert!((d - 10f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn dimension_and_definiteness_errors() {
        let m = MomentModel::from_parts(vec![0.0, 0.0], Matrix::identity(2), Ridge::Fixed(0.0)).unwrap();
        assert!(matches!(m.mahalanobis(&[1.0]), Err(Error::Dimension { .. })));
        let singular = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(
            MomentModel::from_parts(vec![0.0, 0.0], singular, Ridge::Fixed(0.0)),
            Err(Error::Numeric(_))
        ));
        assert!(fit_moments(&Matrix::zeros(1, 2), Ridge::Auto).is_err());
    }

    #[test]
    fn cosine_conventions() {
        let f = Matrix::from_rows(&[vec![2.0, 4.0], vec![-1.0, -2.0], vec![-2.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let s = cosine_scores(&f, &[1.0, 2.0]).unwrap();
        assert!(s[0].abs() < 1e-15);
        assert!((s[1] - 2.0).abs() < 1e-15);
        assert!((s[2] - 1.0).abs() < 1e-15);
        assert_eq!(s[3], 1.0);
        assert!(cosine_scores(&f, &[0.0, 0.0]).is_err());
    }
}
