//! Estimation and self-normalized statistics read off an observed partition.
//!
//! The point estimate of the discount parameter is the singleton proportion
//! K_1 / K. Its Wald interval uses K as the effective sample size, which is
//! what the fluctuation theory for proportions justifies; the interval is
//! clipped to [0, 1] and flagged when that happens.

use crate::sampler::PartitionState;
use crate::sampler::ModelParams;
use crate::sibuya;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatError {
    #[error("confidence level gamma must lie in (0,1), got {0}")]
    BadGamma(f64),
    #[error("depth must be >= 1")]
    BadDepth,
    #[error("proportion statistics need alpha > 0 (the block count must grow polynomially)")]
    DegenerateRegime,
    #[error("{0}")]
    Domain(String),
}

/// Standard normal quantile and distribution function.
pub mod normal {
    use super::StatError;
    use crate::numerics::gamma_q;

    const A: [f64; 8] = [
        3.387_132_872_796_366_608,
        133.141_667_891_784_377_45,
        1_971.590_950_306_551_442_7,
        13_731.693_765_509_461_125,
        45_921.953_931_549_871_457,
        67_265.770_927_008_700_853,
        33_430.575_583_588_128_105,
        2_509.080_928_730_122_672_7,
    ];
    const B: [f64; 8] = [
        1.0,
        42.313_330_701_600_911_252,
        687.187_007_492_057_908_3,
        5_394.196_021_424_751_107_7,
        21_213.794_301_586_595_867,
        39_307.895_800_092_710_61,
        28_729.085_735_721_942_674,
        5_226.495_278_852_854_561,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_577_34,
        4.630_337_846_156_545_295_9,
        5.769_497_221_460_691_405_5,
        3.647_848_324_763_204_605_04,
        1.270_458_252_452_368_382_58,
        0.241_780_725_177_450_611_77,
        0.022_723_844_989_269_184_583_3,
        0.000_774_545_014_278_341_407_64,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_821_87,
        1.676_384_830_183_803_849_4,
        0.689_767_334_985_100_004_55,
        0.148_103_976_427_480_074_59,
        0.015_198_666_563_616_457_196_6,
        0.000_547_593_808_499_534_494_6,
        1.050_750_071_644_416_843_24e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_777_2,
        5.463_784_911_164_114_369_9,
        1.784_826_539_917_291_335_8,
        0.296_560_571_828_504_891_23,
        0.026_532_189_526_576_123_093,
        0.001_242_660_947_388_078_438_6,
        2.711_555_568_743_487_578_15e-5,
        2.010_334_399_292_288_132_65e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        0.599_832_206_555_887_937_69,
        0.136_929_880_922_735_805_31,
        0.014_875_361_290_850_614_852_5,
        0.000_786_869_131_145_613_259_1,
        1.846_318_317_510_054_681_8e-5,
        1.421_511_758_316_445_888_7e-7,
        2.044_263_103_389_939_785_64e-15,
    ];

    fn rational(coef_num: &[f64; 8], coef_den: &[f64; 8], r: f64) -> f64 {
        let mut num = coef_num[7];
        let mut den = coef_den[7];
        for i in (0..7).rev() {
            num = num * r + coef_num[i];
            den = den * r + coef_den[i];
        }
        num / den
    }

    /// Inverse of the standard normal distribution function (Wichura's
    /// PPND16 rational approximations, |error| below 1e-15).
    pub fn quantile(p: f64) -> Result<f64, StatError> {
        if !(p > 0.0 && p < 1.0) {
            return Err(StatError::BadGamma(p));
        }
        let q = p - 0.5;
        if q.abs() <= 0.425 {
            let r = 0.180_625 - q * q;
            return Ok(q * rational(&A, &B, r));
        }
        let tail = if q < 0.0 { p } else { 1.0 - p };
        let mut r = (-tail.ln()).sqrt();
        let v = if r <= 5.0 {
            r -= 1.6;
            rational(&C, &D, r)
        } else {
            r -= 5.0;
            rational(&E, &F, r)
        };
        Ok(if q < 0.0 { -v } else { v })
    }

    /// Standard normal distribution function, through the incomplete gamma
    /// identity erfc(y) = Q(1/2, y^2).
    pub fn cdf(x: f64) -> f64 {
        let y = x / std::f64::consts::SQRT_2;
        let q = gamma_q(0.5, y * y).expect("0.5 and y^2 are in-domain");
        if x >= 0.0 {
            1.0 - 0.5 * q
        } else {
            0.5 * q
        }
    }
}

/// Two-sided interval for the discount parameter; `clipped` records whether
/// the raw Wald endpoints left [0, 1], `degenerate` that the plug-in
/// variance vanished (all blocks singletons, or none).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfidenceInterval {
    pub low: f64,
    pub high: f64,
    pub clipped: bool,
    pub degenerate: bool,
}

/// K_1 / K, the fraction of singleton blocks.
pub fn alpha_hat(state: &PartitionState) -> f64 {
    state.count_of_size(1) as f64 / state.k_total() as f64
}

/// K_r / K for r = 1..=depth.
pub fn proportions(state: &PartitionState, depth: usize) -> Result<Vec<f64>, StatError> {
    if depth == 0 {
        return Err(StatError::BadDepth);
    }
    let k = state.k_total() as f64;
    Ok((1..=depth)
        .map(|r| state.count_of_size(r as u64) as f64 / k)
        .collect())
}

/// Wald interval alpha_hat +- z_{1-gamma/2} sqrt(alpha_hat(1-alpha_hat)/K).
pub fn alpha_interval(
    state: &PartitionState,
    gamma: f64,
) -> Result<ConfidenceInterval, StatError> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(StatError::BadGamma(gamma));
    }
    let est = alpha_hat(state);
    let k = state.k_total() as f64;
    let z = normal::quantile(1.0 - gamma / 2.0)?;
    let half_width = z * (est * (1.0 - est) / k).sqrt();
    let (raw_low, raw_high) = (est - half_width, est + half_width);
    Ok(ConfidenceInterval {
        low: raw_low.max(0.0),
        high: raw_high.min(1.0),
        clipped: raw_low < 0.0 || raw_high > 1.0,
        degenerate: half_width == 0.0,
    })
}

/// sqrt(K) (K_r / K - p_r) for r = 1..=depth, the self-normalized deviation
/// vector whose limit covariance is the proportion matrix.
pub fn self_normalized_deviations(
    state: &PartitionState,
    params: &ModelParams,
    depth: usize,
) -> Result<Vec<f64>, StatError> {
    if depth == 0 {
        return Err(StatError::BadDepth);
    }
    if !params.asymptotic_regime() {
        return Err(StatError::DegenerateRegime);
    }
    let k = state.k_total() as f64;
    let scale = k.sqrt();
    let dist = sibuya::SibuyaDist::new(params.alpha())
        .map_err(|e| StatError::Domain(e.to_string()))?;
    (1..=depth)
        .map(|r| {
            let p = dist
                .pmf(r as u64)
                .map_err(|e| StatError::Domain(e.to_string()))?;
            Ok(scale * (state.count_of_size(r as u64) as f64 / k - p))
        })
        .collect()
}

/// (K_r - p_r K) / n^(alpha/2) for r = 1..=depth, the raw-count deviation
/// vector on the polynomial scale.
pub fn scaled_deviations(
    state: &PartitionState,
    params: &ModelParams,
    depth: usize,
) -> Result<Vec<f64>, StatError> {
    if depth == 0 {
        return Err(StatError::BadDepth);
    }
    if !params.asymptotic_regime() {
        return Err(StatError::DegenerateRegime);
    }
    let k = state.k_total() as f64;
    let scale = (state.n() as f64).powf(-0.5 * params.alpha());
    let dist = sibuya::SibuyaDist::new(params.alpha())
        .map_err(|e| StatError::Domain(e.to_string()))?;
    (1..=depth)
        .map(|r| {
            let p = dist
                .pmf(r as u64)
                .map_err(|e| StatError::Domain(e.to_string()))?;
            Ok(scale * (state.count_of_size(r as u64) as f64 - p * k))
        })
        .collect()
}

/// Point estimate plus interval, in the shape the command line prints.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateSummary {
    pub n: u64,
    #[serde(rename = "K")]
    pub k: u64,
    pub alpha_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub gamma: f64,
}

impl EstimateSummary {
    pub fn from_state(state: &PartitionState, gamma: f64) -> Result<Self, StatError> {
        let ci = alpha_interval(state, gamma)?;
        Ok(EstimateSummary {
            n: state.n(),
            k: state.k_total(),
            alpha_hat: alpha_hat(state),
            ci_low: ci.low,
            ci_high: ci.high,
            gamma,
        })
    }
}
