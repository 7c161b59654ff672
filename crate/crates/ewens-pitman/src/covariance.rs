//! Limit covariance matrices for the deviation vectors of size counts, and
//! the triangular-transport identity connecting them.
//!
//! With p the size masses, the self-normalized deviations have limit
//! covariance diag(p) - p p^T. The same matrix factors through the
//! raw-count machinery as J L J^T, where
//!
//! ```text
//! L_{ij} = (-1)^{i+j} binom(i+j, i) p_{i+j},
//! J_{ij} = (j - a)^(i-j) / (i-j)!   for i >= j, zero above the diagonal
//! ```
//!
//! (1-based sizes). Entries of L grow combinatorially (about 7e13 at
//! d = 30), so verifying the identity to small absolute error is a job for
//! the exact backend; the generic code makes that a type choice.

use crate::numerics::{
    binomial_in, factorial_in, ln_gamma, ln_gamma_signed, rising_in, NumericsError,
};
use crate::scalar::Scalar;
use crate::sibuya;
use crate::Exact;
use num_bigint::{BigInt, BigUint};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CovError {
    #[error("matrix dimension must be >= 1")]
    BadDimension,
    #[error("{0}")]
    Domain(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Dense row-major square matrix; indices are 0-based, so entry (i, j)
/// refers to block sizes i+1 and j+1.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix<T> {
    d: usize,
    entries: Vec<T>,
}

impl<T: Scalar> SquareMatrix<T> {
    /// Builds from a closure receiving 1-based size pairs.
    pub fn from_sizes(d: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut entries = Vec::with_capacity(d * d);
        for i in 1..=d {
            for j in 1..=d {
                entries.push(f(i, j));
            }
        }
        SquareMatrix { d, entries }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn get(&self, i: usize, j: usize) -> &T {
        &self.entries[i * self.d + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.entries[i * self.d + j] = v;
    }

    /// self * other * self^T in one pass.
    pub fn sandwich(&self, inner: &SquareMatrix<T>) -> SquareMatrix<T> {
        let d = self.d;
        assert_eq!(d, inner.d, "dimension mismatch");
        // tmp = inner * self^T
        let mut tmp = SquareMatrix {
            d,
            entries: vec![T::zero(); d * d],
        };
        for i in 0..d {
            for j in 0..d {
                let mut acc = T::zero();
                for k in 0..d {
                    acc = acc + inner.get(i, k).clone() * self.get(j, k).clone();
                }
                tmp.set(i, j, acc);
            }
        }
        let mut out = SquareMatrix {
            d,
            entries: vec![T::zero(); d * d],
        };
        for i in 0..d {
            for j in 0..d {
                let mut acc = T::zero();
                for k in 0..d {
                    acc = acc + self.get(i, k).clone() * tmp.get(k, j).clone();
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    /// Largest |self - other| entry.
    pub fn max_abs_diff(&self, other: &SquareMatrix<T>) -> T {
        assert_eq!(self.d, other.d, "dimension mismatch");
        let mut worst = T::zero();
        for (a, b) in self.entries.iter().zip(&other.entries) {
            let diff = (a.clone() - b.clone()).abs();
            if diff > worst {
                worst = diff;
            }
        }
        worst
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(&T) -> U) -> SquareMatrix<U> {
        SquareMatrix {
            d: self.d,
            entries: self.entries.iter().map(f).collect(),
        }
    }

    pub fn trace(&self) -> T {
        let mut acc = T::zero();
        for i in 0..self.d {
            acc = acc + self.get(i, i).clone();
        }
        acc
    }
}

fn check_dim(d: usize) -> Result<(), CovError> {
    if d == 0 {
        return Err(CovError::BadDimension);
    }
    Ok(())
}

fn check_alpha<T: Scalar>(alpha: &T) -> Result<(), CovError> {
    let a = alpha.to_f64();
    if !(a > 0.0 && a < 1.0) {
        return Err(CovError::Domain(format!(
            "alpha must lie in (0,1), got {a}"
        )));
    }
    Ok(())
}

/// L_{ij} = (-1)^{i+j} binom(i+j, i) p_{i+j}.
pub fn lambda_matrix<T: Scalar>(d: usize, alpha: &T) -> Result<SquareMatrix<T>, CovError> {
    check_dim(d)?;
    check_alpha(alpha)?;
    Ok(SquareMatrix::from_sizes(d, |i, j| {
        let v = binomial_in::<T>((i + j) as u64, i as u64)
            * sibuya::pmf_in(alpha, (i + j) as u64);
        if (i + j) % 2 == 0 {
            v
        } else {
            -v
        }
    }))
}

/// Lower-triangular transport J_{ij} = (j - a)^(i-j) / (i-j)!.
pub fn j_matrix<T: Scalar>(d: usize, alpha: &T) -> Result<SquareMatrix<T>, CovError> {
    check_dim(d)?;
    check_alpha(alpha)?;
    Ok(SquareMatrix::from_sizes(d, |i, j| {
        if i < j {
            T::zero()
        } else {
            rising_in(&(T::from_usize(j) - alpha.clone()), i - j)
                / factorial_in::<T>(i - j)
        }
    }))
}

/// diag(p) - p p^T, the closed form of the proportion-deviation covariance.
pub fn gamma_closed_form<T: Scalar>(d: usize, alpha: &T) -> Result<SquareMatrix<T>, CovError> {
    check_dim(d)?;
    check_alpha(alpha)?;
    let p: Vec<T> = (1..=d as u64).map(|r| sibuya::pmf_in(alpha, r)).collect();
    Ok(SquareMatrix::from_sizes(d, |i, j| {
        let cross = p[i - 1].clone() * p[j - 1].clone();
        if i == j {
            p[i - 1].clone() - cross
        } else {
            -cross
        }
    }))
}

/// J L J^T, the same covariance assembled through the transport identity.
pub fn gamma_via_product<T: Scalar>(d: usize, alpha: &T) -> Result<SquareMatrix<T>, CovError> {
    Ok(j_matrix(d, alpha)?.sandwich(&lambda_matrix(d, alpha)?))
}

/// Largest entrywise gap between the two routes to the covariance; exactly
/// zero over the rationals.
pub fn transport_identity_gap<T: Scalar>(d: usize, alpha: &T) -> Result<T, CovError> {
    Ok(gamma_via_product(d, alpha)?.max_abs_diff(&gamma_closed_form(d, alpha)?))
}

/// The same gap computed by clearing denominators once and running the
/// triple product over the integers. Rational matmul reduces through a gcd
/// on every operation, which dominates at d = 30; this path does one exact
/// division at the end instead and finishes in milliseconds.
pub fn transport_identity_gap_exact(d: usize, alpha: &Exact) -> Result<Exact, CovError> {
    check_dim(d)?;
    check_alpha(alpha)?;
    let (jz, dj, lz, dl, gz, dg) = scaled_transport_parts(d, alpha);

    // tmp = Lz Jz^T, then g1 = Jz tmp; Jz is lower triangular and the
    // output symmetric, so sums stop at the triangle and j <= i suffices
    let zero = BigInt::from(0);
    let mut tmp = vec![zero.clone(); d * d];
    for i in 0..d {
        for j in 0..d {
            let mut acc = zero.clone();
            for k in 0..=j {
                acc += &lz[i * d + k] * &jz[j * d + k];
            }
            tmp[i * d + j] = acc;
        }
    }
    let d1 = &dl * &dj * &dj;
    let mut worst = BigUint::ZERO;
    for i in 0..d {
        for j in 0..=i {
            let mut acc = zero.clone();
            for k in 0..=i {
                acc += &jz[i * d + k] * &tmp[k * d + j];
            }
            // compare g1/d1 against gz/dg by cross-multiplication
            let diff = (acc * &dg - &gz[i * d + j] * &d1).magnitude().clone();
            if diff > worst {
                worst = diff;
            }
        }
    }
    Ok(Exact::new(BigInt::from(worst), d1 * dg))
}

/// Integer-scaled J, Lambda, and closed-form matrices with their common
/// denominators: J q^(d-1) (d-1)!, Lambda q^(2d) (2d)!, Gamma (q^d d!)^2,
/// where alpha = p/q in lowest terms.
#[allow(clippy::type_complexity)]
fn scaled_transport_parts(
    d: usize,
    alpha: &Exact,
) -> (Vec<BigInt>, BigInt, Vec<BigInt>, BigInt, Vec<BigInt>, BigInt) {
    let p = alpha.numer();
    let q = alpha.denom();
    let mut qpow = vec![BigInt::from(1)];
    for _ in 0..2 * d {
        qpow.push(qpow.last().unwrap() * q);
    }
    let mut fact = vec![BigInt::from(1)];
    for m in 1..=2 * d {
        fact.push(fact.last().unwrap() * BigInt::from(m as u64));
    }
    // prod_neg[k] = prod_{m=1}^{k} (q m - p), so that the scaled mass
    // q^d d! p_r comes out as p prod_neg[r-1] q^(d-r) d!/r!
    let mut prod_neg = vec![BigInt::from(1)];
    for m in 1..2 * d {
        prod_neg.push(prod_neg.last().unwrap() * (q * BigInt::from(m as u64) - p));
    }

    let mut jz = vec![BigInt::from(0); d * d];
    for j in 1..=d {
        let mut rising = BigInt::from(1);
        for i in j..=d {
            let k = i - j;
            if k > 0 {
                rising *= q * BigInt::from((i - 1) as u64) - p;
            }
            jz[(i - 1) * d + (j - 1)] = &rising * &qpow[d - 1 - k] * (&fact[d - 1] / &fact[k]);
        }
    }
    let dj = &qpow[d - 1] * &fact[d - 1];

    let mut lz = vec![BigInt::from(0); d * d];
    for i in 1..=d {
        for j in 1..=d {
            let r = i + j;
            let binom = &fact[r] / (&fact[i] * &fact[j]);
            let v = binom * (&fact[2 * d] / &fact[r]) * &qpow[2 * d - r] * p * &prod_neg[r - 1];
            lz[(i - 1) * d + (j - 1)] = if r % 2 == 0 { v } else { -v };
        }
    }
    let dl = &qpow[2 * d] * &fact[2 * d];

    let mass: Vec<BigInt> = (1..=d)
        .map(|r| p * &prod_neg[r - 1] * &qpow[d - r] * (&fact[d] / &fact[r]))
        .collect();
    let half = &qpow[d] * &fact[d];
    let mut gz = vec![BigInt::from(0); d * d];
    for i in 0..d {
        for j in 0..d {
            let cross = &mass[i] * &mass[j];
            gz[i * d + j] = if i == j { &mass[i] * &half - cross } else { -cross };
        }
    }
    (jz, dj, lz, dl, gz, &half * &half)
}

/// Limit covariance of the raw-count deviations on the n^(a/2) scale,
/// L_{ij} G(a+t-i+1) G(a+t-j+1) / G(t+1)^2.
///
/// Errors when a+t-i+1 hits a gamma pole for some i <= d.
pub fn sigma_matrix(d: usize, alpha: f64, theta: f64) -> Result<SquareMatrix<f64>, CovError> {
    check_dim(d)?;
    check_alpha(&alpha)?;
    if theta <= -alpha {
        return Err(CovError::Domain(format!(
            "theta must exceed -alpha, got {theta}"
        )));
    }
    let ln_gt1 = ln_gamma(theta + 1.0);
    let mut weights = Vec::with_capacity(d);
    for i in 1..=d {
        let (ln, sign) = ln_gamma_signed(alpha + theta - i as f64 + 1.0)?;
        weights.push((ln - ln_gt1, sign));
    }
    let lambda = lambda_matrix::<f64>(d, &alpha)?;
    Ok(SquareMatrix::from_sizes(d, |i, j| {
        let (ln_i, sign_i) = weights[i - 1];
        let (ln_j, sign_j) = weights[j - 1];
        lambda.get(i - 1, j - 1) * (ln_i + ln_j).exp() * (sign_i * sign_j) as f64
    }))
}

/// Pivoted Cholesky test: true when the matrix is positive semidefinite up
/// to `tol` times its largest diagonal entry.
pub fn is_positive_semidefinite(m: &SquareMatrix<f64>, tol: f64) -> bool {
    let d = m.dim();
    let mut a = vec![0.0f64; d * d];
    for i in 0..d {
        for j in 0..d {
            a[i * d + j] = *m.get(i, j);
        }
    }
    let scale = (0..d)
        .map(|i| a[i * d + i].abs())
        .fold(0.0f64, f64::max)
        .max(1.0);
    let cut = tol * scale;
    let mut perm: Vec<usize> = (0..d).collect();
    for step in 0..d {
        // bring the largest remaining diagonal entry to the pivot
        let (best, best_val) = (step..d)
            .map(|i| (i, a[perm[i] * d + perm[i]]))
            .fold((step, f64::NEG_INFINITY), |acc, cur| {
                if cur.1 > acc.1 {
                    cur
                } else {
                    acc
                }
            });
        perm.swap(step, best);
        let piv = perm[step];
        if best_val < -cut {
            return false;
        }
        if best_val <= cut {
            // the rest of the diagonal is at most best_val; the block is
            // PSD iff everything left is negligible
            return (step..d).all(|i| {
                (step..d).all(|j| a[perm[i] * d + perm[j]].abs() <= (d as f64) * cut.max(f64::MIN_POSITIVE))
            });
        }
        // eliminate
        for i in (step + 1)..d {
            let li = a[perm[i] * d + piv] / best_val;
            for j in (step + 1)..d {
                a[perm[i] * d + perm[j]] -= li * a[perm[j] * d + piv];
            }
        }
    }
    true
}

/// Matrix payload as the command line prints it.
#[derive(Debug, Clone, Serialize)]
pub struct MatrixReport {
    pub d: usize,
    pub alpha: f64,
    pub entries: Vec<Vec<f64>>,
}

impl MatrixReport {
    pub fn new(m: &SquareMatrix<f64>, alpha: f64) -> Self {
        let d = m.dim();
        MatrixReport {
            d,
            alpha,
            entries: (0..d)
                .map(|i| (0..d).map(|j| *m.get(i, j)).collect())
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{exact, Exact};
    use num_traits::Zero;

    #[test]
    fn frozen_entries_at_one_half() {
        let l = lambda_matrix::<f64>(2, &0.5).unwrap();
        assert!((l.get(0, 0) - 0.25).abs() < 1e-15);
        assert!((l.get(0, 1) - (-0.1875)).abs() < 1e-15);
        assert!((l.get(1, 1) - 0.234375).abs() < 1e-15);
        let j = j_matrix::<f64>(3, &0.5).unwrap();
        assert_eq!(*j.get(0, 1), 0.0);
        assert!((j.get(1, 0) - 0.5).abs() < 1e-15);
        assert!((j.get(2, 0) - 0.375).abs() < 1e-15);
        assert!((j.get(2, 1) - 1.5).abs() < 1e-15);
        let g = gamma_closed_form::<f64>(2, &0.5).unwrap();
        assert!((g.get(1, 1) - 0.109375).abs() < 1e-15);
        assert!((g.get(0, 1) - (-0.0625)).abs() < 1e-15);
    }

    #[test]
    fn transport_identity_is_exact_over_rationals() {
        for num in [1i64, 3, 5, 9] {
            let alpha = exact(num, 10);
            let gap = transport_identity_gap::<Exact>(12, &alpha).unwrap();
            assert!(gap.is_zero(), "alpha={num}/10: gap {gap}");
        }
    }

    #[test]
    fn integer_scaling_reproduces_the_rational_matrices() {
        let d = 7;
        let alpha = exact(3, 7);
        let (jz, dj, lz, dl, gz, dg) = scaled_transport_parts(d, &alpha);
        let j = j_matrix::<Exact>(d, &alpha).unwrap();
        let l = lambda_matrix::<Exact>(d, &alpha).unwrap();
        let g = gamma_closed_form::<Exact>(d, &alpha).unwrap();
        for i in 0..d {
            for k in 0..d {
                assert_eq!(
                    Exact::new(jz[i * d + k].clone(), dj.clone()),
                    *j.get(i, k),
                    "J ({i},{k})"
                );
                assert_eq!(
                    Exact::new(lz[i * d + k].clone(), dl.clone()),
                    *l.get(i, k),
                    "Lambda ({i},{k})"
                );
                assert_eq!(
                    Exact::new(gz[i * d + k].clone(), dg.clone()),
                    *g.get(i, k),
                    "Gamma ({i},{k})"
                );
            }
        }
        assert_eq!(
            transport_identity_gap_exact(d, &alpha).unwrap(),
            transport_identity_gap::<Exact>(d, &alpha).unwrap()
        );
    }

    #[test]
    fn transport_identity_in_floats_degrades_with_dimension() {
        // small d is fine in f64
        let gap = transport_identity_gap::<f64>(4, &0.5).unwrap();
        assert!(gap < 1e-12, "{gap}");
        // by d = 30 the combinatorial growth eats the mantissa; this pins
        // why the exact backend exists
        let gap = transport_identity_gap::<f64>(30, &0.5).unwrap();
        assert!(gap > 1e-10, "{gap}");
    }

    #[test]
    fn covariance_shape_and_trace() {
        for alpha in [0.1, 0.5, 0.9] {
            let g = gamma_closed_form::<f64>(8, &alpha).unwrap();
            for i in 0..8 {
                assert!(*g.get(i, i) > 0.0);
                for j in 0..8 {
                    if i != j {
                        assert!(*g.get(i, j) < 0.0, "off-diagonal sign at ({i},{j})");
                        assert_eq!(g.get(i, j), g.get(j, i));
                    }
                }
            }
            // trace = sum p_r (1 - p_r) < sum p_r < 1
            assert!(g.trace() < 1.0);
        }
    }

    #[test]
    fn limit_matrices_are_positive_semidefinite() {
        for (d, alpha) in [(3usize, 0.3), (8, 0.5), (12, 0.85)] {
            let g = gamma_closed_form::<f64>(d, &alpha).unwrap();
            assert!(is_positive_semidefinite(&g, 1e-12), "gamma d={d} a={alpha}");
            let l = lambda_matrix::<f64>(d, &alpha).unwrap();
            assert!(is_positive_semidefinite(&l, 1e-12), "lambda d={d} a={alpha}");
        }
        let s = sigma_matrix(5, 0.5, 0.75).unwrap();
        assert!(is_positive_semidefinite(&s, 1e-12));
    }

    #[test]
    fn definiteness_test_rejects_and_accepts() {
        let mut m = SquareMatrix::from_sizes(2, |_, _| 0.0f64);
        m.set(0, 0, 1.0);
        m.set(1, 1, 1.0);
        m.set(0, 1, 2.0);
        m.set(1, 0, 2.0);
        assert!(!is_positive_semidefinite(&m, 1e-12));
        // rank-1 PSD with a zero pivot on the path
        let mut r1 = SquareMatrix::from_sizes(2, |_, _| 0.0f64);
        r1.set(0, 0, 0.0);
        r1.set(1, 1, 4.0);
        r1.set(0, 1, 0.0);
        r1.set(1, 0, 0.0);
        assert!(is_positive_semidefinite(&r1, 1e-12));
        // zero matrix
        let z = SquareMatrix::from_sizes(3, |_, _| 0.0f64);
        assert!(is_positive_semidefinite(&z, 1e-12));
    }

    #[test]
    fn scaled_limit_matrix_reference_and_poles() {
        // a+t-i+1 crosses zero at i = 2 when a+t = 1
        assert!(matches!(
            sigma_matrix(2, 0.5, 0.5),
            Err(CovError::Numerics(NumericsError::GammaPole(_)))
        ));
        // d = 1: Sigma_11 = L_11 G(a+t)^2 / G(t+1)^2
        let s = sigma_matrix(1, 0.5, 0.5).unwrap();
        let want = 0.25 * (1.0 / ln_gamma(1.5).exp()).powi(2);
        assert!((s.get(0, 0) - want).abs() < 1e-14 * want);
        // generic parameters: finite, symmetric
        let s = sigma_matrix(6, 0.6, 0.85).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert!(s.get(i, j).is_finite());
                assert!((s.get(i, j) - s.get(j, i)).abs() < 1e-12 * s.get(i, j).abs().max(1e-300));
            }
        }
        assert!(sigma_matrix(0, 0.5, 0.75).is_err());
        assert!(sigma_matrix(3, 0.5, -0.6).is_err());
    }

    #[test]
    fn report_serializes_in_order() {
        let g = gamma_closed_form::<f64>(2, &0.5).unwrap();
        let text = serde_json::to_string(&MatrixReport::new(&g, 0.5)).unwrap();
        assert!(text.starts_with("{\"d\":2,\"alpha\":0.5,\"entries\":[["), "{text}");
    }
}
