//! Closed-form moments of the block count K and the size-r counts, generic
//! over the scalar backend: exact rationals for small n, log-space floats
//! for n in the hundreds.
//!
//! Every sum here has nonnegative terms once the shared sign factors are
//! pulled out, so the log-space backend never cancels. Ratios of the form
//! (t/a)^(i) / (t)^(n) are computed with the common factor t cancelled,
//! which keeps t = 0 inside the parameter domain.

use crate::numerics::{factorial_in, falling_in, rising_in, stirling2, GfcTriangle, NumericsError};
use crate::scalar::Scalar;
use crate::sibuya;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MomentError {
    #[error("{0}")]
    Domain(String),
    #[error("n must lie in 1..={max}, got {n}")]
    OutOfRange { n: usize, max: usize },
    #[error("conditioning on K = {k} blocks is impossible at n = {n}")]
    BadConditional { k: usize, n: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Moment calculator for a fixed (alpha, theta), usable up to a fixed n.
///
/// Construction precomputes the triangle of generalized factorial
/// coefficients, O(n_max^2) space; each query is then O(n) or cheaper,
/// except [`Self::joint_moment`] which is O(p n).
#[derive(Debug, Clone)]
pub struct MomentEngine<T: Scalar> {
    alpha: T,
    theta: T,
    triangle: GfcTriangle<T>,
}

impl<T: Scalar> MomentEngine<T> {
    pub fn new(alpha: T, theta: T, n_max: usize) -> Result<Self, MomentError> {
        if theta <= -alpha.clone() {
            return Err(MomentError::Domain(format!(
                "theta must exceed -alpha, got theta = {:?}",
                theta
            )));
        }
        // alpha in (0,1) is enforced by the triangle
        let triangle = GfcTriangle::build(n_max, alpha.clone())?;
        Ok(MomentEngine {
            alpha,
            theta,
            triangle,
        })
    }

    pub fn alpha(&self) -> &T {
        &self.alpha
    }

    pub fn theta(&self) -> &T {
        &self.theta
    }

    pub fn n_max(&self) -> usize {
        self.triangle.n_max()
    }

    fn check_n(&self, n: usize) -> Result<(), MomentError> {
        if n == 0 || n > self.n_max() {
            return Err(MomentError::OutOfRange {
                n,
                max: self.n_max(),
            });
        }
        Ok(())
    }

    /// Mass of the one-block-of-size-r class, a (1-a)^(r-1) / r!.
    pub fn size_mass(&self, r: usize) -> T {
        sibuya::pmf_in(&self.alpha, r as u64)
    }

    /// (t/a)^(i) / (t)^(n) for i >= 1, n >= 1, with the shared factor t
    /// cancelled: (1/a) (t/a + 1)^(i-1) / (t + 1)^(n-1).
    fn ratio_rising(&self, i: usize, n: usize) -> T {
        debug_assert!(i >= 1 && n >= 1);
        let shifted = self.theta.clone() / self.alpha.clone() + T::one();
        rising_in(&shifted, i - 1)
            / (self.alpha.clone() * rising_in(&(self.theta.clone() + T::one()), n - 1))
    }

    /// P(K_n = k); zero outside 1..=n.
    pub fn block_count_pmf(&self, n: usize, k: usize) -> Result<T, MomentError> {
        self.check_n(n)?;
        if k == 0 || k > n {
            return Ok(T::zero());
        }
        Ok(self.ratio_rising(k, n) * self.triangle.value(n, k))
    }

    /// E[K_n] = ((a+t)/a) (a+t+1)^(n-1) / (t+1)^(n-1) - t/a.
    pub fn block_count_mean(&self, n: usize) -> Result<T, MomentError> {
        self.check_n(n)?;
        let at = self.alpha.clone() + self.theta.clone();
        let grow = rising_in(&(at.clone() + T::one()), n - 1)
            / rising_in(&(self.theta.clone() + T::one()), n - 1);
        Ok((at * grow - self.theta.clone()) / self.alpha.clone())
    }

    /// E[K_{r,n}] = p_r (n)_(r) (t/a) (a+t)^(n-r) / (t)^(n); zero for r > n.
    pub fn size_count_mean(&self, n: usize, r: usize) -> Result<T, MomentError> {
        self.size_count_factorial_moment(n, r, 1)
    }

    /// E[(K_{r,n})_(p)] = p_r^p (n)_(pr) (t/a)^(p) (pa+t)^(n-pr) / (t)^(n)
    /// for p >= 1; zero when pr > n.
    pub fn size_count_factorial_moment(
        &self,
        n: usize,
        r: usize,
        p: usize,
    ) -> Result<T, MomentError> {
        self.check_n(n)?;
        if p == 0 {
            return Ok(T::one());
        }
        if r == 0 {
            return Err(MomentError::Domain("block size r must be >= 1".into()));
        }
        if p * r > n {
            return Ok(T::zero());
        }
        let pa_t = self.alpha.clone() * T::from_usize(p) + self.theta.clone();
        Ok(self.size_mass(r).powi(p as i64)
            * falling_in(&T::from_usize(n), p * r)
            * self.ratio_rising(p, n)
            * rising_in(&pa_t, n - p * r))
    }

    /// E[K_{r,n}^p K_n^q] for integer q (negative allowed; K_n >= 1 always).
    ///
    /// Expands the ordinary power through factorial moments and, for each
    /// Stirling term, sums the conditional block-count distribution of the
    /// remaining n - ir elements.
    pub fn joint_moment(&self, n: usize, r: usize, p: u32, q: i64) -> Result<T, MomentError> {
        self.check_n(n)?;
        if r == 0 {
            return Err(MomentError::Domain("block size r must be >= 1".into()));
        }
        if p == 0 {
            // E[K_n^q]
            let mut acc = T::zero();
            for l in 1..=n {
                acc = acc
                    + T::from_usize(l).powi(q)
                        * self.ratio_rising(l, n)
                        * self.triangle.value(n, l);
            }
            return Ok(acc);
        }
        let p = p as usize;
        let mut acc = T::zero();
        for i in 1..=p {
            if i * r > n {
                break;
            }
            let m = n - i * r;
            let stirling: T = stirling2(p, i)?;
            if stirling.to_f64() == 0.0 {
                continue;
            }
            // sum over K of the remainder: at m = 0 the block count is
            // exactly i; the (t + ia)^(m) normalizer cancels against the
            // conditional weights, so the inner sum is left unnormalized
            let inner = if m == 0 {
                T::from_usize(i).powi(q)
            } else {
                let shifted = self.theta.clone() / self.alpha.clone() + T::from_usize(i);
                let mut sum = T::zero();
                let mut shifted_rising = T::one();
                for l in 1..=m {
                    shifted_rising =
                        shifted_rising * (shifted.clone() + T::from_usize(l - 1));
                    sum = sum
                        + T::from_usize(l + i).powi(q)
                            * shifted_rising.clone()
                            * self.triangle.value(m, l);
                }
                sum
            };
            acc = acc
                + stirling
                    * self.size_mass(r).powi(i as i64)
                    * falling_in(&T::from_usize(n), i * r)
                    * self.ratio_rising(i, n)
                    * inner;
        }
        Ok(acc)
    }

    /// E[(K_{r,n})_(p) | K_n = k] = p_r^p (n)_(pr) C(n-pr, k-p) / C(n, k).
    pub fn conditional_factorial_moment(
        &self,
        n: usize,
        r: usize,
        p: usize,
        k: usize,
    ) -> Result<T, MomentError> {
        self.check_n(n)?;
        if k == 0 || k > n {
            return Err(MomentError::BadConditional { k, n });
        }
        if r == 0 {
            return Err(MomentError::Domain("block size r must be >= 1".into()));
        }
        if p == 0 {
            return Ok(T::one());
        }
        if p * r > n || p > k || k - p > n - p * r {
            return Ok(T::zero());
        }
        Ok(self.size_mass(r).powi(p as i64)
            * falling_in(&T::from_usize(n), p * r)
            * self.triangle.value(n - p * r, k - p)
            / self.triangle.value(n, k))
    }

    /// E[K_{r,n}^p | K_n = k], ordinary power via the factorial expansion.
    pub fn conditional_moment(
        &self,
        n: usize,
        r: usize,
        p: usize,
        k: usize,
    ) -> Result<T, MomentError> {
        if p == 0 {
            self.check_n(n)?;
            if k == 0 || k > n {
                return Err(MomentError::BadConditional { k, n });
            }
            return Ok(T::one());
        }
        let mut acc = T::zero();
        for i in 1..=p {
            let s: T = stirling2(p, i)?;
            acc = acc + s * self.conditional_factorial_moment(n, r, i, k)?;
        }
        Ok(acc)
    }
}

/// P(X_1 + ... + X_k = n) for iid draws from the size distribution,
/// k! C(n, k; a) / n!. Zero for n < k.
pub fn sibuya_sum_pmf<T: Scalar>(n: usize, k: usize, alpha: &T) -> Result<T, NumericsError> {
    if k == 0 {
        return Ok(if n == 0 { T::one() } else { T::zero() });
    }
    if n < k {
        return Ok(T::zero());
    }
    let c = crate::numerics::gfc(n, k, alpha)?;
    Ok(factorial_in::<T>(k) * c / factorial_in::<T>(n))
}
