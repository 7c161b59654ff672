//! Sibuya distribution on {1, 2, ...}: pmf p(r) = a (1-a)^(r-1) / r! for a
//! tail parameter a in (0, 1) (rising factorial in the numerator).
//!
//! The distribution is heavy tailed (no finite mean), which drives two
//! implementation choices: the survival function has the closed form
//! (1-a)^(r) / r!, and sampling inverts the CDF with a sequential scan only
//! over a short head, then a binary search on the closed-form survival. A
//! plain sequential search would need E[min(X, cap)] ~ cap^(1-a) iterations
//! per draw, which is unusable at the default cap.

use crate::numerics::ln_gamma;
use crate::scalar::Scalar;
use rand::Rng;
use thiserror::Error;

/// Draws larger than this are reported as an error by [`SibuyaDist::sample`].
pub const SAMPLE_CAP: u64 = 1 << 31;

/// Sequential-scan length before switching to binary search.
const HEAD: u64 = 32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SibuyaError {
    #[error("tail parameter must lie in (0, 1), got {0}")]
    BadAlpha(f64),
    #[error("support index must be >= 1")]
    ZeroIndex,
    #[error("pgf argument must satisfy |s| < 1, got {0}")]
    BadPgfArgument(f64),
    #[error("draw exceeded cap {cap} (tail mass {tail_mass:.3e})")]
    CapExceeded { cap: u64, tail_mass: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SibuyaDist {
    alpha: f64,
}

impl SibuyaDist {
    pub fn new(alpha: f64) -> Result<Self, SibuyaError> {
        if !alpha.is_finite() || alpha <= 0.0 || alpha >= 1.0 {
            return Err(SibuyaError::BadAlpha(alpha));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// p(r), through the stable recurrence p(1) = a,
    /// p(r+1) = p(r) (r - a) / (r + 1). All factors lie in (0, 1).
    pub fn pmf(&self, r: u64) -> Result<f64, SibuyaError> {
        if r == 0 {
            return Err(SibuyaError::ZeroIndex);
        }
        let mut p = self.alpha;
        for k in 1..r {
            p *= (k as f64 - self.alpha) / (k + 1) as f64;
        }
        Ok(p)
    }

    /// P(X > r) = (1-a)^(r) / r!; survival(0) = 1.
    pub fn survival(&self, r: u64) -> f64 {
        let mut s = 1.0;
        for k in 1..=r {
            s *= (k as f64 - self.alpha) / k as f64;
        }
        s
    }

    fn ln_survival(&self, r: u64) -> f64 {
        // ln Gamma(r + 1 - a) - ln Gamma(1 - a) - ln Gamma(r + 1)
        ln_gamma(r as f64 + 1.0 - self.alpha) - ln_gamma(1.0 - self.alpha)
            - ln_gamma(r as f64 + 1.0)
    }

    /// Probability generating function E[s^X] = 1 - (1 - s)^a for |s| < 1.
    pub fn pgf(&self, s: f64) -> Result<f64, SibuyaError> {
        if !s.is_finite() || s.abs() >= 1.0 {
            return Err(SibuyaError::BadPgfArgument(s));
        }
        Ok(1.0 - (1.0 - s).powf(self.alpha))
    }

    /// Inverse-CDF draw; errors when the draw exceeds [`SAMPLE_CAP`], which
    /// happens with probability survival(cap) (the tail is heavy enough that
    /// this is not always negligible, e.g. ~1e-5 at a = 1/2).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<u64, SibuyaError> {
        match self.sample_min(rng, SAMPLE_CAP) {
            r if r >= SAMPLE_CAP => Err(SibuyaError::CapExceeded {
                cap: SAMPLE_CAP,
                tail_mass: self.ln_survival(SAMPLE_CAP).exp(),
            }),
            r => Ok(r),
        }
    }

    /// min(X, cap) for an inverse-CDF draw X; total function used where a
    /// truncated draw is enough (tail cells, truncated means).
    pub fn sample_min<R: Rng + ?Sized>(&self, rng: &mut R, cap: u64) -> u64 {
        debug_assert!(cap >= 1);
        let u: f64 = rng.random();
        // X = min { r >= 1 : survival(r) <= v }, v = 1 - u in (0, 1]
        let v = 1.0 - u;
        let mut s = 1.0;
        let head = HEAD.min(cap);
        for r in 1..=head {
            s *= (r as f64 - self.alpha) / r as f64;
            if s <= v {
                return r;
            }
        }
        if head == cap {
            return cap;
        }
        // binary search on the monotone closed-form survival;
        // invariant: survival(lo) > v >= survival(hi)
        let ln_v = v.ln();
        if self.ln_survival(cap) > ln_v {
            return cap;
        }
        let (mut lo, mut hi) = (head, cap);
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.ln_survival(mid) <= ln_v {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }
}

/// pmf in an arbitrary scalar (exact for rational tail parameters).
pub fn pmf_in<T: Scalar>(alpha: &T, r: u64) -> T {
    debug_assert!(r >= 1);
    let mut p = alpha.clone();
    for k in 1..r {
        p = p * (T::from_integer(k as i64) - alpha.clone())
            / T::from_integer((k + 1) as i64);
    }
    p
}

/// Survival P(X > r) in an arbitrary scalar.
pub fn survival_in<T: Scalar>(alpha: &T, r: u64) -> T {
    let mut s = T::one();
    for k in 1..=r {
        s = s * (T::from_integer(k as i64) - alpha.clone()) / T::from_integer(k as i64);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Exact;
    use num_traits::{One, Zero};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const TOL: f64 = 1e-12;

    #[test]
    fn pmf_reference_values() {
        let d = SibuyaDist::new(0.5).unwrap();
        assert_eq!(d.pmf(1).unwrap(), 0.5);
        assert!((d.pmf(2).unwrap() - 0.125).abs() < TOL);
        assert!((d.pmf(4).unwrap() - 0.0390625).abs() < TOL);
        assert!(d.pmf(0).is_err());
        assert!(SibuyaDist::new(0.0).is_err());
        assert!(SibuyaDist::new(1.0).is_err());
    }

    #[test]
    fn survival_telescopes_pmf() {
        for &alpha in &[0.1, 0.5, 0.9] {
            let d = SibuyaDist::new(alpha).unwrap();
            assert_eq!(d.survival(0), 1.0);
            for r in 1..200u64 {
                let gap = d.survival(r - 1) - d.survival(r);
                assert!((gap - d.pmf(r).unwrap()).abs() < TOL, "alpha={alpha} r={r}");
            }
        }
    }

    #[test]
    fn exact_mass_accounting() {
        // sum_{r<=R} p(r) + survival(R) = 1 exactly in rationals
        let alpha = crate::exact(3, 7);
        let mut acc = Exact::zero();
        for r in 1..=40u64 {
            acc += pmf_in(&alpha, r);
        }
        assert_eq!(acc + survival_in(&alpha, 40), Exact::one());
    }

    #[test]
    fn ln_survival_matches_recurrence() {
        let d = SibuyaDist::new(0.37).unwrap();
        for &r in &[1u64, 5, 32, 100, 1000] {
            let rec = d.survival(r).ln();
            let cf = d.ln_survival(r);
            assert!((rec - cf).abs() < 1e-11, "r={r}: {rec} vs {cf}");
        }
    }

    #[test]
    fn pgf_values_and_truncated_series() {
        let d = SibuyaDist::new(0.5).unwrap();
        assert!((d.pgf(0.75).unwrap() - 0.5).abs() < TOL);
        assert_eq!(d.pgf(0.0).unwrap(), 0.0);
        assert!(d.pgf(1.0).is_err());
        assert!(d.pgf(-1.5).is_err());
        // |G(s) - sum_{r<=N} p(r) s^r| <= survival(N) s^(N+1)
        for &alpha in &[0.25, 0.6] {
            let d = SibuyaDist::new(alpha).unwrap();
            for &s in &[0.3, 0.8, -0.6] {
                let n = 400u64;
                let mut acc = 0.0;
                let mut p = alpha;
                let mut sp = s;
                for r in 1..=n {
                    acc += p * sp;
                    p *= (r as f64 - alpha) / (r + 1) as f64;
                    sp *= s;
                }
                let bound = d.survival(n) * s.abs().powi(n as i32 + 1) + 1e-12;
                assert!((d.pgf(s).unwrap() - acc).abs() <= bound, "alpha={alpha} s={s}");
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_and_respects_caps() {
        let d = SibuyaDist::new(0.5).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            assert_eq!(d.sample_min(&mut a, SAMPLE_CAP), d.sample_min(&mut b, SAMPLE_CAP));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert!(d.sample_min(&mut rng, 10) <= 10);
        }
    }

    #[test]
    fn sample_frequencies_track_pmf() {
        let d = SibuyaDist::new(0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 200_000u64;
        let mut counts = [0u64; 4];
        for _ in 0..n {
            let x = d.sample_min(&mut rng, SAMPLE_CAP);
            if x <= 3 {
                counts[x as usize] += 1;
            }
        }
        for r in 1..=3u64 {
            let expected = d.pmf(r).unwrap();
            let got = counts[r as usize] as f64 / n as f64;
            let se = (expected * (1.0 - expected) / n as f64).sqrt();
            assert!((got - expected).abs() < 5.0 * se, "r={r}: {got} vs {expected}");
        }
    }
}
