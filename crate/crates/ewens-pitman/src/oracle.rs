//! Brute-force ground truth at small n: the full law of the block-size
//! counts, enumerated over exact rationals.
//!
//! The law is supported on integer partitions of n (counts vectors), not on
//! set partitions, so the support stays tiny (22 points at n = 8). The
//! probability of a counts vector (k_1, ..., k_n) with s = sum k_i is
//!
//! ```text
//! n! * (t/a)^(s) / (t)^(n) * prod_i ( w_i^{k_i} / k_i! ),
//! w_i = a (1-a)^(i-1) / i!
//! ```
//!
//! (rising factorials throughout). Everything here is computed directly from
//! this formula with rational arithmetic; none of the recurrences used by the
//! production modules are involved, so agreement is evidence, not tautology.

use crate::numerics::{factorial_in, rising_in};
use crate::scalar::Scalar;
use crate::Exact;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("{0}")]
    Domain(String),
    #[error("enumeration is intended for n <= {max}, got {n}")]
    TooLarge { n: usize, max: usize },
    #[error("conditioning event has probability zero")]
    EmptyConditional,
}

/// Largest n the enumeration accepts.
pub const MAX_N: usize = 10;

/// Counts vectors use index = block size: `counts[r]` is the number of blocks
/// of size r, `counts[0]` is always 0 and the length is n + 1.
pub type Counts = Vec<u64>;

/// Exact law of the counts vector at a fixed n.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactLaw {
    n: usize,
    support: Vec<(Counts, Exact)>,
}

fn check_params(alpha: &Exact, theta: &Exact) -> Result<(), OracleError> {
    if !(alpha > &Exact::zero() && alpha < &Exact::one()) {
        return Err(OracleError::Domain(format!(
            "alpha must lie in (0,1), got {alpha}"
        )));
    }
    if theta <= &(-alpha.clone()) {
        return Err(OracleError::Domain(format!(
            "theta must exceed -alpha, got {theta}"
        )));
    }
    Ok(())
}

/// All integer partitions of n as counts vectors (index = part size).
fn partitions(n: usize) -> Vec<Counts> {
    fn rec(remaining: usize, max_part: usize, counts: &mut Counts, out: &mut Vec<Counts>) {
        if remaining == 0 {
            out.push(counts.clone());
            return;
        }
        for part in (1..=remaining.min(max_part)).rev() {
            counts[part] += 1;
            rec(remaining - part, part, counts, out);
            counts[part] -= 1;
        }
    }
    let mut out = Vec::new();
    rec(n, n, &mut vec![0; n + 1], &mut out);
    out
}

/// Enumerates the exact law at n; probabilities sum to one exactly.
pub fn enumerate_law(n: usize, alpha: &Exact, theta: &Exact) -> Result<ExactLaw, OracleError> {
    check_params(alpha, theta)?;
    if n == 0 || n > MAX_N {
        return Err(OracleError::TooLarge { n, max: MAX_N });
    }
    // w[i] = a (1-a)^(i-1) / i!
    let mut w = vec![Exact::zero(); n + 1];
    for (i, slot) in w.iter_mut().enumerate().skip(1) {
        *slot = alpha.clone() * rising_in(&(Exact::one() - alpha.clone()), i - 1)
            / factorial_in::<Exact>(i);
    }
    let n_fact = factorial_in::<Exact>(n);
    // (t/a)^(s) / (t)^(n) with the shared leading factor cancelled, so t = 0
    // stays finite: (1/a) (t/a + 1)^(s-1) / (t + 1)^(n-1). Every partition
    // has s >= 1 blocks.
    let theta_rising_tail = rising_in(&(theta.clone() + Exact::one()), n - 1);
    let ratio_shifted = theta.clone() / alpha.clone() + Exact::one();
    let mut support = Vec::new();
    let mut total = Exact::zero();
    for counts in partitions(n) {
        let s: u64 = counts.iter().sum();
        let mut prob = n_fact.clone() * rising_in(&ratio_shifted, s as usize - 1)
            / (alpha.clone() * theta_rising_tail.clone());
        for (i, &k) in counts.iter().enumerate().skip(1) {
            if k > 0 {
                prob = prob * w[i].powi(k as i64) / factorial_in::<Exact>(k as usize);
            }
        }
        total += prob.clone();
        support.push((counts, prob));
    }
    assert!(total.is_one(), "oracle law does not sum to 1: {total}");
    ExactLaw { n, support }.validated()
}

impl ExactLaw {
    fn validated(self) -> Result<Self, OracleError> {
        debug_assert!(self.support.iter().all(|(_, p)| !p.is_negative()));
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn support(&self) -> &[(Counts, Exact)] {
        &self.support
    }

    /// E[f(counts)] exactly.
    pub fn moment(&self, f: impl Fn(&[u64]) -> Exact) -> Exact {
        self.support
            .iter()
            .map(|(c, p)| f(c) * p.clone())
            .fold(Exact::zero(), |acc, x| acc + x)
    }

    /// P(K = k) for k = 1..n.
    pub fn block_count_marginal(&self) -> Vec<(u64, Exact)> {
        (1..=self.n as u64)
            .map(|k| {
                let mass = self
                    .support
                    .iter()
                    .filter(|(c, _)| c.iter().sum::<u64>() == k)
                    .map(|(_, p)| p.clone())
                    .fold(Exact::zero(), |acc, x| acc + x);
                (k, mass)
            })
            .collect()
    }

    /// Law conditioned on K = k.
    pub fn conditional_on_block_count(&self, k: u64) -> Result<ExactLaw, OracleError> {
        let mass = self
            .support
            .iter()
            .filter(|(c, _)| c.iter().sum::<u64>() == k)
            .map(|(_, p)| p.clone())
            .fold(Exact::zero(), |acc, x| acc + x);
        if mass.is_zero() {
            return Err(OracleError::EmptyConditional);
        }
        let support = self
            .support
            .iter()
            .filter(|(c, _)| c.iter().sum::<u64>() == k)
            .map(|(c, p)| (c.clone(), p.clone() / mass.clone()))
            .collect();
        ExactLaw {
            n: self.n,
            support,
        }
        .validated()
    }
}

/// Statistic selectors for [`ExactLaw::moment`].
pub mod selectors {
    use super::*;

    pub fn block_count() -> impl Fn(&[u64]) -> Exact {
        |c| Exact::from_integer(c.iter().sum::<u64>().into())
    }

    pub fn count_of_size(r: usize) -> impl Fn(&[u64]) -> Exact {
        move |c| Exact::from_integer(c.get(r).copied().unwrap_or(0).into())
    }

    /// K_r / K.
    pub fn proportion(r: usize) -> impl Fn(&[u64]) -> Exact {
        move |c| {
            let k: u64 = c.iter().sum();
            Exact::from_ratio(c.get(r).copied().unwrap_or(0) as i64, k as i64)
        }
    }

    /// K_r^p K^q; q may be negative (K >= 1 always).
    pub fn joint(r: usize, p: u32, q: i64) -> impl Fn(&[u64]) -> Exact {
        move |c| {
            let kr = Exact::from_integer(c.get(r).copied().unwrap_or(0).into());
            let k = Exact::from_integer(c.iter().sum::<u64>().into());
            let kr_pow = if p == 0 { Exact::one() } else { kr.powi(p as i64) };
            kr_pow * k.powi(q)
        }
    }

    /// (K_n / n^a)^(-q) is not rational for fractional a; scaled negative
    /// moments are exposed as K^(-q) with the n^(a q) factor left to callers.
    pub fn block_count_power(q: i64) -> impl Fn(&[u64]) -> Exact {
        move |c| Exact::from_integer(c.iter().sum::<u64>().into()).powi(q)
    }

    /// The scaled martingale statistic M_r evaluated on a counts vector
    /// (n is recovered as sum i k_i).
    pub fn martingale_m(r: usize, alpha: Exact, theta: Exact) -> impl Fn(&[u64]) -> Exact {
        move |c| martingale_m_exact(c, r, &alpha, &theta)
    }
}

/// Sibuya mass a (1-a)^(r-1) / r!, direct formula.
pub fn sibuya_mass(alpha: &Exact, r: usize) -> Exact {
    alpha.clone() * rising_in(&(Exact::one() - alpha.clone()), r - 1) / factorial_in::<Exact>(r)
}

/// b_{r,i} = (-1)^{r-i} (i-a)^(r-i) / (r-i)!, direct formula.
pub fn coeff_b_exact(r: usize, i: usize, alpha: &Exact) -> Exact {
    let v = rising_in(&(Exact::from_usize(i) - alpha.clone()), r - i)
        / factorial_in::<Exact>(r - i);
    if (r - i) % 2 == 0 {
        v
    } else {
        -v
    }
}

/// a_{r,n} = prod_{k=r}^{n-1} (k+t)/(k+a+t-r); 1 for n <= r.
pub fn coeff_a_exact(r: usize, n: usize, alpha: &Exact, theta: &Exact) -> Exact {
    let mut acc = Exact::one();
    for k in r..n {
        acc = acc * (Exact::from_usize(k) + theta.clone())
            / (Exact::from_usize(k) + alpha.clone() + theta.clone() - Exact::from_usize(r));
    }
    acc
}

/// M_r on a counts vector, from the defining formula in exact arithmetic.
pub fn martingale_m_exact(counts: &[u64], r: usize, alpha: &Exact, theta: &Exact) -> Exact {
    let n: u64 = counts
        .iter()
        .enumerate()
        .map(|(i, &k)| i as u64 * k)
        .sum();
    let k_total: u64 = counts.iter().sum();
    let p_r = sibuya_mass(alpha, r);
    let sign = if r % 2 == 0 { Exact::one() } else { -Exact::one() };
    let mut s = sign.clone() * p_r.clone() * Exact::from_integer(k_total.into());
    for i in 1..=r.min(counts.len() - 1) {
        s += coeff_b_exact(r, i, alpha) * Exact::from_integer(counts[i].into());
    }
    let shift = sign * p_r * theta.clone() / alpha.clone();
    coeff_a_exact(r, n as usize, alpha, theta) * (s + shift)
}

/// E[M_r at n+1 | counts at n], by exact transition enumeration: a new block
/// with probability (a K + t)/(n + t), otherwise a block of size s grows with
/// probability (s - a) K_s / (n + t).
pub fn one_step_m_expectation(
    counts: &[u64],
    r: usize,
    alpha: &Exact,
    theta: &Exact,
) -> Exact {
    let n: u64 = counts
        .iter()
        .enumerate()
        .map(|(i, &k)| i as u64 * k)
        .sum();
    let k_total: u64 = counts.iter().sum();
    let denom = Exact::from_integer(n.into()) + theta.clone();
    let mut next = counts.to_vec();
    next.resize(counts.len().max(counts.iter().rposition(|&c| c > 0).unwrap_or(0) + 2), 0);

    let mut acc;
    {
        // new block
        next[1] += 1;
        let p_new = (alpha.clone() * Exact::from_integer(k_total.into()) + theta.clone())
            / denom.clone();
        acc = p_new * martingale_m_exact(&next, r, alpha, theta);
        next[1] -= 1;
    }
    for s in 1..next.len() - 1 {
        let c = next[s];
        if c == 0 {
            continue;
        }
        let p_join = (Exact::from_usize(s) - alpha.clone())
            * Exact::from_integer(c.into())
            / denom.clone();
        next[s] -= 1;
        next[s + 1] += 1;
        acc += p_join * martingale_m_exact(&next, r, alpha, theta);
        next[s] += 1;
        next[s + 1] -= 1;
    }
    acc
}
