//! Scalar kernels: sign-tracking log-space arithmetic, factorial ladders,
//! Stirling numbers and generalized factorial coefficients.
//!
//! The generalized factorial coefficient C(n, k; a) is defined by the
//! triangular recurrence
//!
//! ```text
//! C(0, 0; a) = 1,
//! C(n + 1, k; a) = (n - k a) C(n, k; a) + a C(n, k - 1; a),
//! ```
//!
//! with C(n, k; a) = 0 outside 0 <= k <= n. For a in (0, 1) every entry with
//! 1 <= k <= n is strictly positive, so the recurrence involves no
//! cancellation; [`GfcTriangle`] instantiated at [`LogScalar`] therefore stays
//! accurate for n in the thousands where linear f64 storage would overflow.
//! The alternating-sum form [`gfc_alternating`] is kept as an independent
//! validation path and is only trustworthy on exact scalars.

use crate::scalar::Scalar;
use num_traits::{One, Zero};
use std::cmp::Ordering;
use std::f64::consts::PI;
use std::ops::{Add, Div, Mul, Neg, Sub};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("gamma pole at {0}")]
    GammaPole(f64),
}

/// Nonzero real stored as (ln |x|, sign); zero is (-inf, 0).
///
/// Multiplication and division are exact in the log representation; addition
/// uses signed log-sum-exp. The positive-term recurrences in this crate never
/// subtract nearly-equal values, so the representation loses nothing there.
#[derive(Debug, Clone, Copy)]
pub struct LogScalar {
    ln_abs: f64,
    sign: i8,
}

impl LogScalar {
    pub fn from_value(x: f64) -> Self {
        if x == 0.0 {
            return Self::zero();
        }
        Self {
            ln_abs: x.abs().ln(),
            sign: if x < 0.0 { -1 } else { 1 },
        }
    }

    /// Builds `sign * exp(ln_abs)` without evaluating the exponential.
    pub fn from_ln(ln_abs: f64, negative: bool) -> Self {
        Self {
            ln_abs,
            sign: if negative { -1 } else { 1 },
        }
    }

    /// Collapses to f64; overflows to +-inf for |ln_abs| beyond ~709.
    pub fn value(&self) -> f64 {
        self.sign as f64 * self.ln_abs.exp()
    }

    pub fn ln_abs(&self) -> f64 {
        self.ln_abs
    }

    pub fn sign(&self) -> i8 {
        self.sign
    }
}

impl Zero for LogScalar {
    fn zero() -> Self {
        Self {
            ln_abs: f64::NEG_INFINITY,
            sign: 0,
        }
    }

    fn is_zero(&self) -> bool {
        self.sign == 0
    }
}

impl One for LogScalar {
    fn one() -> Self {
        Self {
            ln_abs: 0.0,
            sign: 1,
        }
    }
}

impl Add for LogScalar {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        if self.sign == 0 {
            return rhs;
        }
        if rhs.sign == 0 {
            return self;
        }
        let (hi, lo) = if self.ln_abs >= rhs.ln_abs {
            (self, rhs)
        } else {
            (rhs, self)
        };
        let d = (lo.ln_abs - hi.ln_abs).exp(); // in [0, 1]
        if self.sign == rhs.sign {
            Self {
                ln_abs: hi.ln_abs + d.ln_1p(),
                sign: hi.sign,
            }
        } else if d == 1.0 {
            Self::zero()
        } else {
            Self {
                ln_abs: hi.ln_abs + (-d).ln_1p(),
                sign: hi.sign,
            }
        }
    }
}

impl Sub for LogScalar {
    type Output = Self;

    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

impl Mul for LogScalar {
    type Output = Self;

    fn mul(self, rhs: Self) -> Self {
        if self.sign == 0 || rhs.sign == 0 {
            return Self::zero();
        }
        Self {
            ln_abs: self.ln_abs + rhs.ln_abs,
            sign: self.sign * rhs.sign,
        }
    }
}

impl Div for LogScalar {
    type Output = Self;

    fn div(self, rhs: Self) -> Self {
        assert!(rhs.sign != 0, "LogScalar division by zero");
        if self.sign == 0 {
            return Self::zero();
        }
        Self {
            ln_abs: self.ln_abs - rhs.ln_abs,
            sign: self.sign * rhs.sign,
        }
    }
}

impl Neg for LogScalar {
    type Output = Self;

    fn neg(self) -> Self {
        Self {
            ln_abs: self.ln_abs,
            sign: -self.sign,
        }
    }
}

impl PartialEq for LogScalar {
    fn eq(&self, other: &Self) -> bool {
        self.sign == other.sign && (self.sign == 0 || self.ln_abs == other.ln_abs)
    }
}

impl PartialOrd for LogScalar {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.sign.cmp(&other.sign) {
            Ordering::Equal => match self.sign {
                0 => Some(Ordering::Equal),
                1 => self.ln_abs.partial_cmp(&other.ln_abs),
                _ => other.ln_abs.partial_cmp(&self.ln_abs),
            },
            ord => Some(ord),
        }
    }
}

impl Scalar for LogScalar {
    fn from_integer(n: i64) -> Self {
        Self::from_value(n as f64)
    }

    fn from_ratio(num: i64, den: i64) -> Self {
        assert!(den != 0, "zero denominator");
        let sign = (num.signum() * den.signum()) as i8;
        if sign == 0 {
            return Self::zero();
        }
        Self {
            ln_abs: (num.abs() as f64).ln() - (den.abs() as f64).ln(),
            sign,
        }
    }

    fn to_f64(&self) -> f64 {
        self.value()
    }

    fn abs(&self) -> Self {
        Self {
            ln_abs: self.ln_abs,
            sign: self.sign.abs(),
        }
    }
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// ln Gamma(x) for x > 0, Lanczos approximation (relative error ~1e-15).
pub fn ln_gamma(x: f64) -> f64 {
    debug_assert!(x > 0.0, "ln_gamma requires x > 0, got {x}");
    if x < 0.5 {
        // reflection keeps the series argument above 1/2
        return PI.ln() - (PI * x).sin().ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// sin(pi x) with the integer part handled exactly.
fn sin_pi(x: f64) -> f64 {
    let n = x.floor();
    let f = x - n;
    let s = (PI * f).sin();
    if (n as i64) % 2 == 0 {
        s
    } else {
        -s
    }
}

/// (ln |Gamma(x)|, sign) for any non-pole real x.
pub fn ln_gamma_signed(x: f64) -> Result<(f64, i8), NumericsError> {
    if x > 0.0 {
        return Ok((ln_gamma(x), 1));
    }
    if x == x.floor() {
        return Err(NumericsError::GammaPole(x));
    }
    // Gamma(x) Gamma(1 - x) = pi / sin(pi x)
    let s = sin_pi(x);
    let ln_abs = PI.ln() - s.abs().ln() - ln_gamma(1.0 - x);
    Ok((ln_abs, if s < 0.0 { -1 } else { 1 }))
}

/// Regularized lower incomplete gamma P(a, x), a > 0, x >= 0.
pub fn gamma_p(a: f64, x: f64) -> Result<f64, NumericsError> {
    Ok(1.0 - gamma_q(a, x)?)
}

/// Regularized upper incomplete gamma Q(a, x) = Gamma(a, x) / Gamma(a).
///
/// Series for the lower tail, Lentz continued fraction for the upper; the
/// crossover at x = a + 1 keeps both expansions in their convergent range.
pub fn gamma_q(a: f64, x: f64) -> Result<f64, NumericsError> {
    if !(a > 0.0) || !(x >= 0.0) {
        return Err(NumericsError::Domain(format!(
            "gamma_q requires a > 0 and x >= 0, got a = {a}, x = {x}"
        )));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    let ln_prefactor = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        let mut ap = a;
        let mut term = 1.0 / a;
        let mut sum = term;
        for _ in 0..500 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * f64::EPSILON {
                break;
            }
        }
        Ok(1.0 - (ln_prefactor + sum.ln()).exp())
    } else {
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < f64::EPSILON {
                break;
            }
        }
        Ok(ln_prefactor.exp() * h)
    }
}

/// Rising factorial a (a+1) ... (a+n-1); empty product for n = 0.
///
/// The stretch of factors below 1 is multiplied term by term (tracking sign
/// changes); the remaining positive tail collapses to a log-gamma difference,
/// so the cost is O(max(1, -a)) rather than O(n).
pub fn rising_factorial(a: f64, n: u64) -> LogScalar {
    let mut ln = 0.0f64;
    let mut negative = false;
    let mut k = 0u64;
    while k < n {
        let f = a + k as f64;
        if f == 0.0 {
            return LogScalar::zero();
        }
        if f >= 1.0 {
            break;
        }
        if f < 0.0 {
            negative = !negative;
        }
        ln += f.abs().ln();
        k += 1;
    }
    if k < n {
        ln += ln_gamma(a + n as f64) - ln_gamma(a + k as f64);
    }
    LogScalar::from_ln(ln, negative)
}

/// Falling factorial a (a-1) ... (a-n+1).
pub fn falling_factorial(a: f64, n: u64) -> LogScalar {
    rising_factorial(a - n as f64 + 1.0, n)
}

/// Rising factorial in an arbitrary scalar, as a plain O(n) product.
pub fn rising_in<T: Scalar>(a: &T, n: usize) -> T {
    let mut acc = T::one();
    for k in 0..n {
        acc = acc * (a.clone() + T::from_usize(k));
    }
    acc
}

/// Falling factorial in an arbitrary scalar.
pub fn falling_in<T: Scalar>(a: &T, n: usize) -> T {
    let mut acc = T::one();
    for k in 0..n {
        acc = acc * (a.clone() - T::from_usize(k));
    }
    acc
}

/// Binomial coefficient as a scalar, via the stepwise product
/// prod_i (n - k + i) / i. Exact on rational scalars; the factorials are
/// never materialized, so nothing overflows on float scalars either.
pub fn binomial_in<T: Scalar>(n: u64, k: u64) -> T {
    if k > n {
        return T::zero();
    }
    let k = k.min(n - k);
    let mut acc = T::one();
    for i in 1..=k {
        acc = acc * T::from_integer((n - k + i) as i64) / T::from_integer(i as i64);
    }
    acc
}

/// Factorial as a scalar.
pub fn factorial_in<T: Scalar>(n: usize) -> T {
    let mut acc = T::one();
    for i in 2..=n {
        acc = acc * T::from_usize(i);
    }
    acc
}

/// Stirling number of the second kind {p over i} via the additive triangular
/// recurrence S(p, i) = i S(p-1, i) + S(p-1, i-1).
pub fn stirling2<T: Scalar>(p: usize, i: usize) -> Result<T, NumericsError> {
    if i > p {
        return Err(NumericsError::Domain(format!(
            "stirling2 requires i <= p, got p={p} i={i}"
        )));
    }
    // row[j] = S(m, j) for the current m
    let mut row = vec![T::zero(); i + 1];
    row[0] = T::one();
    for m in 1..=p {
        let hi = m.min(i);
        for j in (1..=hi).rev() {
            row[j] = T::from_usize(j) * row[j].clone() + row[j - 1].clone();
        }
        row[0] = T::zero();
    }
    Ok(row[i].clone())
}

/// Validation path for [`stirling2`]: (1/i!) sum_j (-1)^(i-j) C(i,j) j^p.
/// Alternating, so meaningful on exact scalars only.
pub fn stirling2_alternating<T: Scalar>(p: usize, i: usize) -> T {
    let mut acc = T::zero();
    for j in 0..=i {
        let term = binomial_in::<T>(i as u64, j as u64) * T::from_usize(j).powi(p as i64);
        acc = if (i - j) % 2 == 0 { acc + term } else { acc - term };
    }
    acc / factorial_in::<T>(i)
}

/// Cached triangle of generalized factorial coefficients C(m, k; a) for
/// 0 <= k <= m <= n_max, built once per (n_max, a).
#[derive(Debug, Clone)]
pub struct GfcTriangle<T> {
    alpha: T,
    rows: Vec<Vec<T>>,
}

impl<T: Scalar> GfcTriangle<T> {
    /// Builds the full triangle; O(n_max^2) time and space.
    pub fn build(n_max: usize, alpha: T) -> Result<Self, NumericsError> {
        let a = alpha.to_f64();
        if !(0.0..1.0).contains(&a) || a == 0.0 {
            return Err(NumericsError::Domain(format!(
                "generalized factorial coefficients need alpha in (0,1), got {a}"
            )));
        }
        let mut rows: Vec<Vec<T>> = Vec::with_capacity(n_max + 1);
        rows.push(vec![T::one()]);
        for m in 0..n_max {
            let prev = &rows[m];
            let mut next = vec![T::zero(); m + 2];
            for k in 1..=m + 1 {
                // C(m+1, k) = (m - k a) C(m, k) + a C(m, k-1)
                let mut v = alpha.clone() * prev[k - 1].clone();
                if k <= m {
                    v = v + (T::from_usize(m) - T::from_usize(k) * alpha.clone())
                        * prev[k].clone();
                }
                next[k] = v;
            }
            rows.push(next);
        }
        Ok(Self { alpha, rows })
    }

    pub fn n_max(&self) -> usize {
        self.rows.len() - 1
    }

    pub fn alpha(&self) -> &T {
        &self.alpha
    }

    /// C(n, k; a); zero outside the triangle. Requires n <= n_max.
    pub fn value(&self, n: usize, k: usize) -> T {
        if k > n {
            return T::zero();
        }
        self.rows[n][k].clone()
    }
}

/// One-off C(n, k; a) through a freshly built triangle.
pub fn gfc<T: Scalar>(n: usize, k: usize, alpha: &T) -> Result<T, NumericsError> {
    Ok(GfcTriangle::build(n, alpha.clone())?.value(n, k))
}

/// Validation path for [`gfc`]:
/// C(n, k; a) = (1/k!) sum_i C(k,i) (-1)^i (-i a)^(n) (rising factorial).
/// Alternating, so meaningful on exact scalars only.
pub fn gfc_alternating<T: Scalar>(n: usize, k: usize, alpha: &T) -> T {
    let mut acc = T::zero();
    for i in 0..=k {
        let base = -(T::from_usize(i) * alpha.clone());
        let term = binomial_in::<T>(k as u64, i as u64) * rising_in(&base, n);
        acc = if i % 2 == 0 { acc + term } else { acc - term };
    }
    acc / factorial_in::<T>(k)
}

/// Checks sum_{k=0}^{n} (-1)^k C(n,k) (b)^(k) / (a)^(k)  =  (a-b)^(n) / (a)^(n)
/// to 1e-12 relative. Errors when (a)^(k) would hit a zero factor.
pub fn chu_vandermonde_check<T: Scalar>(n: usize, a: &T, b: &T) -> Result<bool, NumericsError> {
    for k in 0..n {
        if (a.clone() + T::from_usize(k)).is_zero() {
            return Err(NumericsError::Domain(format!(
                "rising factorial of a = {:?} hits zero within {} steps",
                a, n
            )));
        }
    }
    let mut lhs = T::zero();
    let mut rising_b = T::one();
    let mut rising_a = T::one();
    for k in 0..=n {
        let term = binomial_in::<T>(n as u64, k as u64) * rising_b.clone() / rising_a.clone();
        lhs = if k % 2 == 0 { lhs + term } else { lhs - term };
        rising_b = rising_b * (b.clone() + T::from_usize(k));
        rising_a = rising_a * (a.clone() + T::from_usize(k));
    }
    let rhs = rising_in(&(a.clone() - b.clone()), n) / rising_in(a, n);
    let gap = (lhs.clone() - rhs.clone()).abs().to_f64();
    let scale = 1.0f64.max(rhs.abs().to_f64());
    Ok(gap <= 1e-12 * scale)
}
