//! Replicated simulation experiments with scheduling-independent results.
//!
//! Each replicate gets its own ChaCha stream (`master_seed` fixes the key,
//! the replicate index picks the stream), workers collect in replicate
//! order, and every reduction afterwards is sequential. Consequently the
//! output is byte-identical whatever the thread count.

use crate::covariance::SquareMatrix;
use crate::sampler::{ModelParams, PartitionState, SamplerError};
use crate::statistics::{self, StatError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum McError {
    #[error("{0}")]
    BadPlan(String),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Statistics(#[from] StatError),
    #[error("thread pool: {0}")]
    Pool(String),
}

/// One replicated experiment: grow to `n_target`, read off the deviation
/// vectors and the interval, `replicates` times.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub params: ModelParams,
    pub n_target: u64,
    pub replicates: usize,
    pub depth: usize,
    pub gamma: f64,
    pub master_seed: u64,
    pub parallelism: usize,
}

impl ExperimentPlan {
    fn validate(&self) -> Result<(), McError> {
        if self.n_target == 0 {
            return Err(McError::BadPlan("n_target must be >= 1".into()));
        }
        // replicates run the block-resolved sampler, which tokens elements
        if self.n_target > u32::MAX as u64 {
            return Err(McError::BadPlan(format!(
                "n_target {} exceeds the element cap {}",
                self.n_target,
                u32::MAX
            )));
        }
        if self.replicates < 2 {
            return Err(McError::BadPlan("need at least 2 replicates".into()));
        }
        if self.depth == 0 {
            return Err(McError::BadPlan("depth must be >= 1".into()));
        }
        if self.parallelism == 0 {
            return Err(McError::BadPlan("parallelism must be >= 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(McError::BadPlan(format!(
                "gamma must lie in (0,1), got {}",
                self.gamma
            )));
        }
        if !self.params.asymptotic_regime() {
            return Err(McError::BadPlan(
                "deviation statistics need alpha > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Final-state readout of one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRow {
    pub k_total: u64,
    pub alpha_hat: f64,
    pub covered: bool,
    /// sqrt(K) (K_r/K - p_r)
    pub q: Vec<f64>,
    /// (K_r - p_r K) / n^(a/2)
    pub scaled: Vec<f64>,
}

fn replicate_rng(master_seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(replicate as u64);
    rng
}

fn pool(parallelism: usize) -> Result<rayon::ThreadPool, McError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| McError::Pool(e.to_string()))
}

fn run_one(plan: &ExperimentPlan, replicate: usize) -> Result<ReplicateRow, McError> {
    let mut rng = replicate_rng(plan.master_seed, replicate);
    let mut state = PartitionState::init(&plan.params);
    while state.n() < plan.n_target {
        state.step(&plan.params, &mut rng);
    }
    let q = statistics::self_normalized_deviations(&state, &plan.params, plan.depth)?;
    let scaled = statistics::scaled_deviations(&state, &plan.params, plan.depth)?;
    let ci = statistics::alpha_interval(&state, plan.gamma)?;
    let alpha = plan.params.alpha();
    Ok(ReplicateRow {
        k_total: state.k_total(),
        alpha_hat: statistics::alpha_hat(&state),
        covered: ci.low <= alpha && alpha <= ci.high,
        q,
        scaled,
    })
}

/// Runs the plan; row i is always replicate i.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<Vec<ReplicateRow>, McError> {
    plan.validate()?;
    pool(plan.parallelism)?.install(|| {
        (0..plan.replicates)
            .into_par_iter()
            .map(|rep| run_one(plan, rep))
            .collect()
    })
}

/// Sequentially reduced sample statistics of an experiment's rows.
#[derive(Debug, Clone)]
pub struct EmpiricalSummary {
    pub replicates: usize,
    pub depth: usize,
    pub mean_q: Vec<f64>,
    /// Uncentered E[Q_r^2] per coordinate.
    pub second_moments_q: Vec<f64>,
    pub cov_q: SquareMatrix<f64>,
    pub cov_scaled: SquareMatrix<f64>,
    /// Sample variance of sqrt(K) (alpha_hat - alpha).
    pub var_alpha_dev: f64,
    pub ci_coverage: f64,
}

fn mean_and_cov(vectors: &[Vec<f64>], depth: usize) -> (Vec<f64>, SquareMatrix<f64>) {
    let r = vectors.len();
    let mut mean = vec![0.0; depth];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    for m in mean.iter_mut() {
        *m /= r as f64;
    }
    let mut cov = SquareMatrix::from_sizes(depth, |_, _| 0.0);
    for v in vectors {
        for i in 0..depth {
            for j in 0..depth {
                let add = (v[i] - mean[i]) * (v[j] - mean[j]);
                cov.set(i, j, cov.get(i, j) + add);
            }
        }
    }
    for i in 0..depth {
        for j in 0..depth {
            cov.set(i, j, cov.get(i, j) / (r as f64 - 1.0));
        }
    }
    (mean, cov)
}

pub fn summarize(rows: &[ReplicateRow], params: &ModelParams) -> Result<EmpiricalSummary, McError> {
    if rows.len() < 2 {
        return Err(McError::BadPlan("need at least 2 rows".into()));
    }
    let depth = rows[0].q.len();
    let qs: Vec<Vec<f64>> = rows.iter().map(|r| r.q.clone()).collect();
    let scaleds: Vec<Vec<f64>> = rows.iter().map(|r| r.scaled.clone()).collect();
    let (mean_q, cov_q) = mean_and_cov(&qs, depth);
    let (_, cov_scaled) = mean_and_cov(&scaleds, depth);
    let mut second_moments_q = vec![0.0; depth];
    for q in &qs {
        for (acc, x) in second_moments_q.iter_mut().zip(q) {
            *acc += x * x;
        }
    }
    for acc in second_moments_q.iter_mut() {
        *acc /= qs.len() as f64;
    }

    let alpha = params.alpha();
    let devs: Vec<f64> = rows
        .iter()
        .map(|r| (r.k_total as f64).sqrt() * (r.alpha_hat - alpha))
        .collect();
    let mean_dev = devs.iter().sum::<f64>() / devs.len() as f64;
    let var_alpha_dev = devs.iter().map(|x| (x - mean_dev) * (x - mean_dev)).sum::<f64>()
        / (devs.len() as f64 - 1.0);

    let covered = rows.iter().filter(|r| r.covered).count();
    Ok(EmpiricalSummary {
        replicates: rows.len(),
        depth,
        mean_q,
        second_moments_q,
        cov_q,
        cov_scaled,
        var_alpha_dev,
        ci_coverage: covered as f64 / rows.len() as f64,
    })
}

/// Entrywise comparison of an empirical covariance against a limit matrix:
/// the gap must fit inside `se_mult` jackknife standard errors plus a
/// finite-n allowance of n^(-a/2).
#[derive(Debug, Clone)]
pub struct CovComparison {
    pub gaps: SquareMatrix<f64>,
    pub jackknife_se: SquareMatrix<f64>,
    pub allowance: SquareMatrix<f64>,
    pub worst_ratio: f64,
    pub ok: bool,
}

/// Delete-one-replicate covariance spread, O(replicates * depth^2) via
/// running sums.
pub fn compare_covariance(
    rows: &[ReplicateRow],
    limit: &SquareMatrix<f64>,
    params: &ModelParams,
    n_target: u64,
    se_mult: f64,
) -> Result<CovComparison, McError> {
    let depth = limit.dim();
    let r = rows.len();
    if r < 3 {
        return Err(McError::BadPlan("need at least 3 rows".into()));
    }
    if rows.iter().any(|row| row.q.len() < depth) {
        return Err(McError::BadPlan("rows shallower than the limit matrix".into()));
    }
    let rf = r as f64;
    let mut s1 = vec![0.0; depth];
    let mut s2 = SquareMatrix::from_sizes(depth, |_, _| 0.0);
    for row in rows {
        for i in 0..depth {
            s1[i] += row.q[i];
            for j in 0..depth {
                s2.set(i, j, s2.get(i, j) + row.q[i] * row.q[j]);
            }
        }
    }
    let full_cov = |s1: &[f64], s2: &SquareMatrix<f64>, m: f64, i: usize, j: usize| {
        (s2.get(i, j) - s1[i] * s1[j] / m) / (m - 1.0)
    };
    // jackknife: mean and spread of the delete-one covariances
    let mut jack_mean = SquareMatrix::from_sizes(depth, |_, _| 0.0);
    let mut jack_sq = SquareMatrix::from_sizes(depth, |_, _| 0.0);
    for row in rows {
        for i in 0..depth {
            for j in 0..depth {
                let s1i = s1[i] - row.q[i];
                let s1j = s1[j] - row.q[j];
                let s2ij = s2.get(i, j) - row.q[i] * row.q[j];
                let c = (s2ij - s1i * s1j / (rf - 1.0)) / (rf - 2.0);
                jack_mean.set(i, j, jack_mean.get(i, j) + c);
                jack_sq.set(i, j, jack_sq.get(i, j) + c * c);
            }
        }
    }
    let bias_allowance = (n_target as f64).powf(-0.5 * params.alpha());
    let mut gaps = SquareMatrix::from_sizes(depth, |_, _| 0.0);
    let mut se = SquareMatrix::from_sizes(depth, |_, _| 0.0);
    let mut allowance = SquareMatrix::from_sizes(depth, |_, _| 0.0);
    let mut worst_ratio = 0.0f64;
    let mut ok = true;
    for i in 0..depth {
        for j in 0..depth {
            let mean = jack_mean.get(i, j) / rf;
            let var = (rf - 1.0) / rf * (jack_sq.get(i, j) - rf * mean * mean).max(0.0);
            let se_ij = var.sqrt();
            let gap = (full_cov(&s1, &s2, rf, i, j) - limit.get(i, j)).abs();
            let allow = se_mult * se_ij + bias_allowance;
            gaps.set(i, j, gap);
            se.set(i, j, se_ij);
            allowance.set(i, j, allow);
            let ratio = gap / allow;
            if ratio > worst_ratio {
                worst_ratio = ratio;
            }
            if gap > allow {
                ok = false;
            }
        }
    }
    Ok(CovComparison {
        gaps,
        jackknife_se: se,
        allowance,
        worst_ratio,
        ok,
    })
}

/// Histogram of final block-size count vectors (index 1..=largest) over
/// replicates; the returned pairs are sorted by counts vector.
pub fn partition_census(
    params: &ModelParams,
    n_target: u64,
    replicates: usize,
    master_seed: u64,
    parallelism: usize,
) -> Result<Vec<(Vec<u64>, u64)>, McError> {
    if n_target == 0 || replicates == 0 {
        return Err(McError::BadPlan("empty census".into()));
    }
    if n_target > u32::MAX as u64 {
        return Err(McError::BadPlan("census n_target exceeds the element cap".into()));
    }
    let map = pool(parallelism)?.install(|| {
        (0..replicates)
            .into_par_iter()
            .fold(BTreeMap::<Vec<u64>, u64>::new, |mut acc, rep| {
                let mut rng = replicate_rng(master_seed, rep);
                let mut state = PartitionState::init(params);
                while state.n() < n_target {
                    state.step(params, &mut rng);
                }
                let counts: Vec<u64> = (1..=state.largest_size())
                    .map(|s| state.count_of_size(s))
                    .collect();
                *acc.entry(counts).or_insert(0) += 1;
                acc
            })
            .reduce(BTreeMap::new, |mut a, b| {
                for (k, v) in b {
                    *a.entry(k).or_insert(0) += v;
                }
                a
            })
    });
    Ok(map.into_iter().collect())
}

/// Monte Carlo scan of E[(K_n / n^a)^(-q)] along growing n.
#[derive(Debug, Clone)]
pub struct NegMomentScan {
    pub q: f64,
    pub targets: Vec<u64>,
    pub means: Vec<f64>,
    pub standard_errors: Vec<f64>,
    /// max mean / min mean across targets
    pub spread: f64,
}

/// Each replicate runs one trajectory through all targets. Requires t > 0
/// and 0 < q < 1 + t/a, the window in which the scaled negative moment
/// stays bounded.
pub fn negative_moment_scan(
    params: &ModelParams,
    q: f64,
    targets: &[u64],
    replicates: usize,
    master_seed: u64,
    parallelism: usize,
) -> Result<NegMomentScan, McError> {
    if params.theta() <= 0.0 {
        return Err(McError::BadPlan(
            "negative-moment scan needs theta > 0".into(),
        ));
    }
    if !params.asymptotic_regime() {
        return Err(McError::BadPlan("scan needs alpha > 0".into()));
    }
    let q_cap = 1.0 + params.theta() / params.alpha();
    if !(q > 0.0 && q < q_cap) {
        return Err(McError::BadPlan(format!(
            "q must lie in (0, {q_cap}), got {q}"
        )));
    }
    if targets.is_empty() || targets.windows(2).any(|w| w[0] >= w[1]) || targets[0] == 0 {
        return Err(McError::BadPlan(
            "targets must be strictly increasing and positive".into(),
        ));
    }
    if *targets.last().unwrap() > u32::MAX as u64 {
        return Err(McError::BadPlan("scan target exceeds the element cap".into()));
    }
    if replicates < 2 {
        return Err(McError::BadPlan("need at least 2 replicates".into()));
    }
    let alpha = params.alpha();
    let per_rep: Vec<Vec<f64>> = pool(parallelism)?.install(|| {
        (0..replicates)
            .into_par_iter()
            .map(|rep| {
                let mut rng = replicate_rng(master_seed, rep);
                let mut state = PartitionState::init(params);
                targets
                    .iter()
                    .map(|&t| {
                        while state.n() < t {
                            state.step(params, &mut rng);
                        }
                        let ln_val = -q
                            * ((state.k_total() as f64).ln() - alpha * (t as f64).ln());
                        ln_val.exp()
                    })
                    .collect()
            })
            .collect()
    });
    let rf = replicates as f64;
    let mut means = Vec::with_capacity(targets.len());
    let mut ses = Vec::with_capacity(targets.len());
    for t_idx in 0..targets.len() {
        let mean = per_rep.iter().map(|v| v[t_idx]).sum::<f64>() / rf;
        let var = per_rep
            .iter()
            .map(|v| (v[t_idx] - mean) * (v[t_idx] - mean))
            .sum::<f64>()
            / (rf - 1.0);
        means.push(mean);
        ses.push((var / rf).sqrt());
    }
    let max = means.iter().cloned().fold(f64::MIN, f64::max);
    let min = means.iter().cloned().fold(f64::MAX, f64::min);
    Ok(NegMomentScan {
        q,
        targets: targets.to_vec(),
        means,
        standard_errors: ses,
        spread: max / min,
    })
}

/// Goodness-of-fit pieces shared by the verification commands.
pub mod gof {
    use crate::numerics::{gamma_q, NumericsError};

    /// Kolmogorov-Smirnov distance between a sample and a distribution
    /// function.
    pub fn ks_distance(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
        samples.sort_by(|a, b| a.partial_cmp(b).expect("NaN in KS sample"));
        let n = samples.len() as f64;
        let mut d = 0.0f64;
        for (i, &x) in samples.iter().enumerate() {
            let f = cdf(x);
            d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
        }
        d
    }

    /// Asymptotic two-sided critical distance sqrt(-ln(s/2)/2) / sqrt(r);
    /// about 1.94947 / sqrt(r) at s = 0.001.
    pub fn ks_critical(replicates: usize, significance: f64) -> f64 {
        (-(significance / 2.0).ln() / 2.0).sqrt() / (replicates as f64).sqrt()
    }

    /// sum (observed - total p)^2 / (total p).
    pub fn chi_square_statistic(observed: &[u64], probs: &[f64]) -> f64 {
        assert_eq!(observed.len(), probs.len(), "category count mismatch");
        let total: u64 = observed.iter().sum();
        observed
            .iter()
            .zip(probs)
            .map(|(&o, &p)| {
                let e = total as f64 * p;
                (o as f64 - e) * (o as f64 - e) / e
            })
            .sum()
    }

    /// Upper tail of the chi-square distribution.
    pub fn chi_square_pvalue(stat: f64, df: usize) -> Result<f64, NumericsError> {
        gamma_q(df as f64 / 2.0, stat / 2.0)
    }
}
