//! Tridiagonal and cyclic tridiagonal direct solvers.

use crate::error::{Error, Result};

/// A (possibly cyclic) tridiagonal matrix. Row `i` reads
/// `lower[i]·x[i−1] + diag[i]·x[i] + upper[i]·x[i+1]`; in the cyclic case
/// `lower[0]` couples to `x[N−1]` and `upper[N−1]` to `x[0]`, otherwise
/// those two entries are ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
    pub cyclic: bool,
}

impl Tridiagonal {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut v = self.diag[i] * x[i];
                if i > 0 {
                    v += self.lower[i] * x[i - 1];
                } else if self.cyclic {
                    v += self.lower[0] * x[n - 1];
                }
                if i + 1 < n {
                    v += self.upper[i] * x[i + 1];
                } else if self.cyclic {
                    v += self.upper[n - 1] * x[0];
                }
                v
            })
            .collect()
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.len() {
            return Err(Error::invalid("right-hand side length mismatch"));
        }
        if self.cyclic {
            solve_cyclic(&self.lower, &self.diag, &self.upper, rhs)
        } else {
            thomas(&self.lower, &self.diag, &self.upper, rhs)
        }
    }
}

/// Thomas algorithm; `lower[0]` and `upper[N−1]` are ignored.
pub fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    let mut pivot = diag[0];
    check_pivot(pivot, 0)?;
    cp[0] = upper[0] / pivot;
    dp[0] = rhs[0] / pivot;
    for i in 1..n {
        pivot = diag[i] - lower[i] * cp[i - 1];
        check_pivot(pivot, i)?;
        cp[i] = if i + 1 < n { upper[i] / pivot } else { 0.0 };
        dp[i] = (rhs[i] - lower[i] * dp[i - 1]) / pivot;
    }
    let mut x = dp;
    for i in (0..n - 1).rev() {
        x[i] -= cp[i] * x[i + 1];
    }
    Ok(x)
}

fn check_pivot(p: f64, row: usize) -> Result<()> {
    if !p.is_finite() || p.abs() < 1e-300 {
        return Err(Error::Singular(format!("zero pivot {p:e} at row {row}")));
    }
    Ok(())
}

/// Cyclic tridiagonal solve by the Sherman–Morrison correction.
pub fn solve_cyclic(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if n < 3 {
        return Err(Error::invalid("cyclic system needs at least three rows"));
    }
    let alpha = upper[n - 1];
    let beta = lower[0];
    let gamma = -diag[0];
    let mut b = diag.to_vec();
    b[0] -= gamma;
    b[n - 1] -= alpha * beta / gamma;
    let x = thomas(lower, &b, upper, rhs)?;
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = alpha;
    let z = thomas(lower, &b, upper, &u)?;
    let num = x[0] + beta * x[n - 1] / gamma;
    let den = 1.0 + z[0] + beta * z[n - 1] / gamma;
    check_pivot(den, n)?;
    let fact = num / den;
    Ok(x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn system(n: usize, cyclic: bool, seed: &[f64]) -> Tridiagonal {
        let lower: Vec<f64> = (0..n).map(|i| -0.3 - seed[i % seed.len()].abs()).collect();
        let upper: Vec<f64> = (0..n)
            .map(|i| -0.2 - seed[(i + 1) % seed.len()].abs())
            .collect();
        let diag = (0..n)
            .map(|i| 1.0 + lower[i].abs() + upper[i].abs())
            .collect();
        Tridiagonal {
            lower,
            diag,
            upper,
            cyclic,
        }
    }

    proptest! {
        #[test]
        fn solves_diagonally_dominant(
            n in 3usize..60,
            cyclic in any::<bool>(),
            seed in prop::collection::vec(-2.0f64..2.0, 1..8),
            rhs_seed in prop::collection::vec(-5.0f64..5.0, 60),
        ) {
            let a = system(n, cyclic, &seed);
            let rhs = &rhs_seed[..n];
            let x = a.solve(rhs).unwrap();
            let back = a.apply(&x);
            for (b, r) in back.iter().zip(rhs) {
                prop_assert!((b - r).abs() < 1e-12 * (1.0 + r.abs()));
            }
        }

        #[test]
        fn m_matrix_preserves_positivity(
            n in 3usize..40,
            seed in prop::collection::vec(-2.0f64..2.0, 1..8),
            rhs in prop::collection::vec(1e-6f64..5.0, 40),
        ) {
            let a = system(n, false, &seed);
            let x = a.solve(&rhs[..n]).unwrap();
            prop_assert!(x.iter().all(|v| *v > 0.0));
        }
    }

    #[test]
    fn singular_reports_row() {
        let err = thomas(&[0.0, 1.0], &[0.0, 1.0], &[1.0, 0.0], &[1.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::Singular(_)));
    }
}
