//! Thin-plate-spline interpolation with a constant polynomial tail.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// `φ(r) = r² ln r`, continuously extended by `φ(0) = 0`.
#[inline]
pub fn thin_plate(r: f64) -> f64 {
    if r > 0.0 {
        r * r * r.ln()
    } else {
        0.0
    }
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbfModel {
    pub centers: Vec<Vec<f64>>,
    /// `coefficients[i][j]`: weight of center `i` for output component `j`.
    pub coefficients: Vec<Vec<f64>>,
    pub poly_const: Vec<f64>,
}

impl RbfModel {
    /// Solves
    ///
    /// ```text
    /// [ Φ  1 ] [ w ]   [ A ]
    /// [ 1ᵀ 0 ] [ c ] = [ 0 ]
    /// ```
    ///
    /// with `Φ_ij = φ(|μ_i - μ_j|)` for all output components at once.
    pub fn fit(centers: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<Self> {
        let n = centers.len();
        if n == 0 {
            return Err(Error::Empty("interpolation centers"));
        }
        check_len(n, targets.len(), "targets per center")?;
        let p = centers[0].len();
        let r = targets[0].len();
        for (c, t) in centers.iter().zip(targets) {
            check_len(p, c.len(), "center dimension")?;
            check_len(r, t.len(), "target width")?;
        }
        for i in 0..n {
            for j in 0..i {
                if distance(&centers[i], &centers[j]) == 0.0 {
                    return Err(Error::Singular("duplicate interpolation centers"));
                }
            }
        }
        let mut system = DMatrix::zeros(n + 1, n + 1);
        for i in 0..n {
            for j in 0..i {
                let v = thin_plate(distance(&centers[i], &centers[j]));
                system[(i, j)] = v;
                system[(j, i)] = v;
            }
            system[(i, n)] = 1.0;
            system[(n, i)] = 1.0;
        }
        // Solve for targets shifted by their midrange so a constant component
        // gives a zero right-hand side and is reproduced without rounding.
        let shift: Vec<f64> = (0..r)
            .map(|j| {
                let (lo, hi) = targets.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| {
                    (lo.min(t[j]), hi.max(t[j]))
                });
                0.5 * lo + 0.5 * hi
            })
            .collect();
        let rhs = DMatrix::from_fn(n + 1, r, |i, j| if i < n { targets[i][j] - shift[j] } else { 0.0 });
        let sol = system
            .lu()
            .solve(&rhs)
            .filter(|s| s.iter().all(|v| v.is_finite()))
            .ok_or(Error::Singular("thin-plate interpolation system"))?;
        Ok(Self {
            centers: centers.to_vec(),
            coefficients: (0..n).map(|i| sol.row(i).iter().copied().collect()).collect(),
            poly_const: sol.row(n).iter().zip(&shift).map(|(c, s)| c + s).collect(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.centers[0].len()
    }

    pub fn output_dim(&self) -> usize {
        self.poly_const.len()
    }

    pub fn predict(&self, mu: &[f64]) -> Result<Vec<f64>> {
        check_len(self.input_dim(), mu.len(), "parameter vector")?;
        let mut out = self.poly_const.clone();
        for (c, w) in self.centers.iter().zip(&self.coefficients) {
            let phi = thin_plate(distance(mu, c));
            for (o, wj) in out.iter_mut().zip(w) {
                *o += wj * phi;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kernel_limit_at_zero() {
        assert_eq!(thin_plate(0.0), 0.0);
        assert!(thin_plate(1e-12).abs() < 1e-20);
        assert_eq!(thin_plate(1.0), 0.0);
        assert!((thin_plate(2.0) - 4.0 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn interpolates_parabola_samples() {
        let centers = vec![vec![0.0], vec![1.0], vec![2.0]];
        let targets = vec![vec![0.0], vec![1.0], vec![4.0]];
        let m = RbfModel::fit(&centers, &targets).unwrap();
        for (c, t) in centers.iter().zip(&targets) {
            assert!((m.predict(c).unwrap()[0] - t[0]).abs() < 1e-10);
        }
        assert!(m.predict(&[1.5]).unwrap()[0].is_finite());
    }

    #[test]
    fn reproduces_constants() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let centers: Vec<Vec<f64>> = (0..9).map(|_| vec![rng.gen(), rng.gen()]).collect();
        let targets = vec![vec![2.5, -1.0]; 9];
        let m = RbfModel::fit(&centers, &targets).unwrap();
        assert!((m.poly_const[0] - 2.5).abs() < 1e-12 && (m.poly_const[1] + 1.0).abs() < 1e-12);
        assert!(m.coefficients.iter().flatten().all(|w| w.abs() < 1e-10));
        for _ in 0..10 {
            let p = m.predict(&[rng.gen_range(-1.0..2.0), rng.gen_range(-1.0..2.0)]).unwrap();
            assert!((p[0] - 2.5).abs() < 1e-10 && (p[1] + 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn duplicate_centers_are_rejected() {
        let centers = vec![vec![0.0], vec![0.5], vec![0.5]];
        let targets = vec![vec![1.0], vec![2.0], vec![3.0]];
        assert!(matches!(RbfModel::fit(&centers, &targets), Err(Error::Singular(_))));
    }

    #[test]
    fn matches_dense_gaussian_elimination() {
        // independent solve of the same augmented system by partial-pivot elimination
        fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
            let n = b.len();
            for k in 0..n {
                let piv = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
                a.swap(k, piv);
                b.swap(k, piv);
                for i in k + 1..n {
                    let f = a[i][k] / a[k][k];
                    for j in k..n {
                        a[i][j] -= f * a[k][j];
                    }
                    b[i] -= f * b[k];
                }
            }
            let mut x = vec![0.0; n];
            for k in (0..n).rev() {
                let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
                x[k] = (b[k] - s) / a[k][k];
            }
            x
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let centers: Vec<Vec<f64>> = (0..8).map(|_| vec![rng.gen(), rng.gen()]).collect();
        let targets: Vec<Vec<f64>> = (0..8).map(|_| vec![rng.gen_range(-1.0..1.0)]).collect();
        let m = RbfModel::fit(&centers, &targets).unwrap();
        let mut a = vec![vec![0.0; 9]; 9];
        let mut b = vec![0.0; 9];
        for i in 0..8 {
            for j in 0..8 {
                let d = ((centers[i][0] - centers[j][0]).powi(2) + (centers[i][1] - centers[j][1]).powi(2)).sqrt();
                a[i][j] = if d > 0.0 { d * d * d.ln() } else { 0.0 };
            }
            a[i][8] = 1.0;
            a[8][i] = 1.0;
            b[i] = targets[i][0];
        }
        let x = solve(a, b);
        for i in 0..8 {
            assert!((m.coefficients[i][0] - x[i]).abs() < 1e-9 * x[i].abs().max(1.0));
        }
        assert!((m.poly_const[0] - x[8]).abs() < 1e-9 * x[8].abs().max(1.0));
        let q = [0.3, 0.7];
        let direct: f64 = (0..8)
            .map(|i| {
                let d = ((q[0] - centers[i][0]).powi(2) + (q[1] - centers[i][1]).powi(2)).sqrt();
                x[i] * d * d * d.ln()
            })
            .sum::<f64>()
            + x[8];
        assert!((m.predict(&q).unwrap()[0] - direct).abs() < 1e-9 * direct.abs().max(1.0));
    }
}
