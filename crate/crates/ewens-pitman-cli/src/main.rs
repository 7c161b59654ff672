//! `ep`: simulate, estimate, verify, and report on Ewens-Pitman partitions.
//!
//! Exit codes: 0 success, 1 a requested check failed, 2 usage or input error.
//! Every float in JSON output is printed with 17 significant digits so values
//! round-trip exactly. All commands are deterministic given their flags.

use clap::{Args, Parser, Subcommand, ValueEnum};
use ewens_pitman::covariance::{gamma_closed_form, transport_identity_gap, SquareMatrix};
use ewens_pitman::martingale::{self, MartingaleTracker};
use ewens_pitman::moments::MomentEngine;
use ewens_pitman::montecarlo::{
    compare_covariance, negative_moment_scan, run_experiment, summarize, ExperimentPlan,
};
use ewens_pitman::oracle::{self, selectors};
use ewens_pitman::sampler::{self, SamplerMode};
use ewens_pitman::statistics::EstimateSummary;
use ewens_pitman::{exact, CheckpointSchedule, Exact, ModelParams, PartitionState, Scalar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Read as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "ep", version, about = "Ewens-Pitman partitions: simulate, estimate, verify")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Grow one partition and write its trajectory as CSV
    Simulate(SimulateArgs),
    /// Report alpha_hat with a Wald interval, from a file or a fresh simulation
    Estimate(EstimateArgs),
    /// Compare empirical Cov(Q) from replicated runs against the limit matrix
    VerifyCov(VerifyCovArgs),
    /// Fuzz the one-step martingale identity on simulated states
    VerifyMartingale(VerifyMartingaleArgs),
    /// Query one block-count or size-count moment
    Moments(MomentsArgs),
    /// Run the exact-enumeration validation suite
    OracleCheck(OracleCheckArgs),
    /// Measure confidence interval coverage over replicated experiments
    CiCoverage(CiCoverageArgs),
    /// Trace the scaled negative moment of the block count along growing n
    NegMoments(NegMomentsArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    alpha: f64,
    #[arg(long, allow_negative_numbers = true)]
    theta: f64,
    /// Number of elements to insert
    #[arg(long)]
    n: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Depth of the reported prefix K_1..K_d
    #[arg(long = "d", default_value_t = 5)]
    depth: usize,
    /// "geometric", "final", or comma separated times like "1,10,100"
    #[arg(long, default_value = "geometric")]
    checkpoints: String,
    /// Keep individual blocks instead of the size histogram only
    #[arg(long)]
    track_blocks: bool,
    /// Write the trajectory CSV here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also dump the final state as "size,count" lines to this path
    #[arg(long)]
    emit_counts: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    /// "size,count" file, one block size per line, "#" comments; "-" reads stdin
    #[arg(long, conflicts_with_all = ["alpha", "theta", "n"])]
    input: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    theta: Option<f64>,
    #[arg(long)]
    n: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Miscoverage level of the interval
    #[arg(long, default_value_t = 0.05)]
    gamma: f64,
}

#[derive(Args)]
struct VerifyCovArgs {
    #[arg(long)]
    alpha: f64,
    #[arg(long, allow_negative_numbers = true)]
    theta: f64,
    /// Elements per replicate
    #[arg(long)]
    n: u64,
    #[arg(long, default_value_t = 2000)]
    replicates: usize,
    /// Dimension of the compared covariance block
    #[arg(long = "d", default_value_t = 3)]
    depth: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = default_threads())]
    threads: usize,
    /// Jackknife standard error multiplier in the pass rule
    #[arg(long, default_value_t = 3.0)]
    se_mult: f64,
}

#[derive(Args)]
struct VerifyMartingaleArgs {
    #[arg(long)]
    alpha: f64,
    #[arg(long, allow_negative_numbers = true)]
    theta: f64,
    /// Number of fuzzed states
    #[arg(long, default_value_t = 1000)]
    states: usize,
    /// Check orders r = 1..=max_order
    #[arg(long, default_value_t = 8)]
    max_order: usize,
    /// Fuzzed state sizes are drawn uniformly from [min_n, max_n]
    #[arg(long, default_value_t = 10)]
    min_n: u64,
    #[arg(long, default_value_t = 400)]
    max_n: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Relative tolerance of the pass rule
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Track one long trajectory and dump n,r,S,M_scaled,qv_normalized rows here
    #[arg(long)]
    qv_csv: Option<PathBuf>,
    /// Length of the dumped trajectory
    #[arg(long, default_value_t = 1 << 14)]
    qv_n: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Stat {
    /// E[K_n]
    #[value(name = "mean-K")]
    MeanK,
    /// P(K_n = k), needs --k
    #[value(name = "pmf-K")]
    PmfK,
    /// E[K_{r,n}], needs --r
    #[value(name = "mean-Kr")]
    MeanKr,
    /// Falling factorial moment E[(K_{r,n})_p], needs --r --p
    #[value(name = "factorial-Kr")]
    FactorialKr,
    /// E[K_{r,n}^p K_n^q], needs --r --p --q
    #[value(name = "joint")]
    Joint,
    /// E[K_{r,n}^p | K_n = k], needs --r --p --k
    #[value(name = "conditional-Kr")]
    ConditionalKr,
}

impl Stat {
    fn name(self) -> &'static str {
        match self {
            Stat::MeanK => "mean-K",
            Stat::PmfK => "pmf-K",
            Stat::MeanKr => "mean-Kr",
            Stat::FactorialKr => "factorial-Kr",
            Stat::Joint => "joint",
            Stat::ConditionalKr => "conditional-Kr",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Backend {
    Exact,
    Float,
}

#[derive(Args)]
struct MomentsArgs {
    /// Which moment to compute
    #[arg(long)]
    stat: Stat,
    /// Decimal like 0.5 or ratio like 1/2; kept exact on the exact backend
    #[arg(long)]
    alpha: String,
    #[arg(long, allow_hyphen_values = true)]
    theta: String,
    #[arg(long)]
    n: usize,
    /// Block size
    #[arg(long)]
    r: Option<usize>,
    /// Power of K_{r,n}
    #[arg(long)]
    p: Option<u32>,
    /// Power of K_n, may be negative
    #[arg(long, allow_negative_numbers = true)]
    q: Option<i64>,
    /// Block count to condition on or evaluate the pmf at
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum, default_value_t = Backend::Float)]
    backend: Backend,
}

#[derive(Args)]
struct OracleCheckArgs {
    /// Enumerate every partition law up to this n (at most 10)
    #[arg(long, default_value_t = 6)]
    n_max: usize,
    /// Single grid point like 1/2; the default covers a 3x3 parameter grid
    #[arg(long, requires = "theta")]
    alpha: Option<String>,
    #[arg(long, requires = "alpha", allow_hyphen_values = true)]
    theta: Option<String>,
    /// Tolerance for the floating-point checks; exact checks must be exactly 0
    #[arg(long, default_value_t = 1e-10)]
    float_tol: f64,
}

#[derive(Args)]
struct CiCoverageArgs {
    #[arg(long)]
    alpha: f64,
    #[arg(long, allow_negative_numbers = true)]
    theta: f64,
    /// Elements per replicate
    #[arg(long)]
    n: u64,
    #[arg(long, default_value_t = 1000)]
    replicates: usize,
    /// Depth of the recorded deviation vectors
    #[arg(long = "d", default_value_t = 3)]
    depth: usize,
    #[arg(long, default_value_t = 0.05)]
    gamma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = default_threads())]
    threads: usize,
    /// Write per-replicate "alpha_hat,Q1..Qd" rows here
    #[arg(long)]
    dump_replicates: Option<PathBuf>,
    /// Coverage pass window like "0.94,0.96"; report-only when absent
    #[arg(long)]
    expect_coverage: Option<String>,
    /// Relative pass window around the limit variance alpha(1-alpha)
    #[arg(long)]
    expect_var_rel: Option<f64>,
}

#[derive(Args)]
struct NegMomentsArgs {
    #[arg(long)]
    alpha: f64,
    #[arg(long, allow_negative_numbers = true)]
    theta: f64,
    /// Negative moment order; needs 0 < q < 1 + theta/alpha
    #[arg(long, default_value_t = 1.0)]
    q: f64,
    /// Comma separated target sizes, strictly increasing
    #[arg(long, default_value = "100,1000,10000")]
    targets: String,
    #[arg(long, default_value_t = 400)]
    replicates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = default_threads())]
    threads: usize,
    /// Fail (exit 1) when the max/min ratio across targets exceeds this
    #[arg(long)]
    max_spread: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.cmd {
        Cmd::Simulate(a) => cmd_simulate(a),
        Cmd::Estimate(a) => cmd_estimate(a),
        Cmd::VerifyCov(a) => cmd_verify_cov(a),
        Cmd::VerifyMartingale(a) => cmd_verify_martingale(a),
        Cmd::Moments(a) => cmd_moments(a),
        Cmd::OracleCheck(a) => cmd_oracle_check(a),
        Cmd::CiCoverage(a) => cmd_ci_coverage(a),
        Cmd::NegMoments(a) => cmd_neg_moments(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

// ---------- output helpers ----------

/// 17 significant digits; non-finite values become JSON null.
fn jf(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "null".to_string()
    }
}

fn jf_vec(xs: &[f64]) -> String {
    let cells: Vec<String> = xs.iter().map(|&x| jf(x)).collect();
    format!("[{}]", cells.join(","))
}

fn ju_vec(xs: &[u64]) -> String {
    let cells: Vec<String> = xs.iter().map(u64::to_string).collect();
    format!("[{}]", cells.join(","))
}

fn jmat(m: &SquareMatrix<f64>) -> String {
    let rows: Vec<String> = (0..m.dim())
        .map(|i| {
            let row: Vec<f64> = (0..m.dim()).map(|j| *m.get(i, j)).collect();
            jf_vec(&row)
        })
        .collect();
    format!("[{}]", rows.join(","))
}

fn jopt<T: std::fmt::Display>(x: &Option<T>) -> String {
    x.as_ref().map_or("null".to_string(), T::to_string)
}

fn write_text(path: &Path, text: &str) -> Result<(), String> {
    std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

// ---------- shared parsing ----------

/// Decimal ("0.125", "-2") or small ratio ("-1/8") to an exact rational.
fn parse_exact(text: &str) -> Result<Exact, String> {
    let s = text.trim();
    let bad = || format!("cannot parse '{text}' as a decimal or num/den ratio");
    if let Some((num, den)) = s.split_once('/') {
        let n: i64 = num.trim().parse().map_err(|_| bad())?;
        let d: i64 = den.trim().parse().map_err(|_| bad())?;
        if d == 0 {
            return Err(format!("zero denominator in '{text}'"));
        }
        return Ok(exact(n, d));
    }
    let (sign, digits) = match s.strip_prefix('-') {
        Some(rest) => (-1i64, rest),
        None => (1, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part.chars().all(|c| c.is_ascii_digit())
        || !frac_part.chars().all(|c| c.is_ascii_digit())
    {
        return Err(bad());
    }
    if int_part.len() + frac_part.len() > 18 {
        return Err(format!("'{text}' has too many digits; pass a num/den ratio instead"));
    }
    let scale = 10i64.pow(frac_part.len() as u32);
    let int_v: i64 = if int_part.is_empty() { 0 } else { int_part.parse().map_err(|_| bad())? };
    let frac_v: i64 = if frac_part.is_empty() { 0 } else { frac_part.parse().map_err(|_| bad())? };
    Ok(exact(sign * (int_v * scale + frac_v), scale))
}

fn parse_checkpoints(text: &str) -> Result<CheckpointSchedule, String> {
    match text {
        "geometric" => Ok(CheckpointSchedule::geometric()),
        "final" => Ok(CheckpointSchedule::FinalOnly),
        list => {
            let pts: Vec<u64> = list
                .split(',')
                .map(|t| t.trim().parse())
                .collect::<Result<_, _>>()
                .map_err(|_| {
                    format!(
                        "checkpoints must be 'geometric', 'final', or comma separated \
                         integers, got '{text}'"
                    )
                })?;
            Ok(CheckpointSchedule::Explicit(pts))
        }
    }
}

fn parse_u64_list(text: &str, what: &str) -> Result<Vec<u64>, String> {
    text.split(',')
        .map(|t| t.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| format!("{what} must be comma separated integers, got '{text}'"))
}

/// "size,count" rows. Comments with '#', blank lines skipped, sizes unique.
fn parse_size_counts(text: &str) -> Result<Vec<(u64, u64)>, String> {
    let mut seen = BTreeSet::new();
    let mut rows = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let (a, b) = line
            .split_once(',')
            .ok_or_else(|| format!("line {lineno}: expected 'size,count'"))?;
        let size: u64 = a
            .trim()
            .parse()
            .map_err(|e| format!("line {lineno}: bad size: {e}"))?;
        let count: u64 = b
            .trim()
            .parse()
            .map_err(|e| format!("line {lineno}: bad count: {e}"))?;
        if !seen.insert(size) {
            return Err(format!("line {lineno}: size {size} listed twice"));
        }
        rows.push((size, count));
    }
    if rows.is_empty() {
        return Err("no data rows".to_string());
    }
    Ok(rows)
}

fn model(alpha: f64, theta: f64) -> Result<ModelParams, String> {
    ModelParams::new(alpha, theta).map_err(|e| e.to_string())
}

// ---------- subcommands ----------

fn cmd_simulate(a: SimulateArgs) -> Result<bool, String> {
    let params = model(a.alpha, a.theta)?;
    let schedule = parse_checkpoints(&a.checkpoints)?;
    let mode = if a.track_blocks { SamplerMode::Full } else { SamplerMode::CountsOnly };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let (record, state) = sampler::run(&params, a.n, &schedule, a.depth, mode, &mut rng)
        .map_err(|e| e.to_string())?;

    let mut csv = Vec::new();
    record.write_csv(&mut csv).map_err(|e| e.to_string())?;
    match &a.out {
        Some(path) => std::fs::write(path, &csv).map_err(|e| format!("{}: {e}", path.display()))?,
        None => print!("{}", String::from_utf8_lossy(&csv)),
    }

    if let Some(path) = &a.emit_counts {
        let mut buf = String::new();
        for r in 1..=state.largest_size() {
            let c = state.count_of_size(r);
            if c > 0 {
                let _ = writeln!(buf, "{r},{c}");
            }
        }
        write_text(path, &buf)?;
    }
    Ok(true)
}

fn cmd_estimate(a: EstimateArgs) -> Result<bool, String> {
    let state = match (&a.input, a.alpha, a.theta, a.n) {
        (Some(src), None, None, None) => {
            let text = if src == "-" {
                let mut buf = String::new();
                std::io::stdin()
                    .read_to_string(&mut buf)
                    .map_err(|e| format!("stdin: {e}"))?;
                buf
            } else {
                std::fs::read_to_string(src).map_err(|e| format!("{src}: {e}"))?
            };
            let rows = parse_size_counts(&text)?;
            PartitionState::from_size_counts(rows).map_err(|e| e.to_string())?
        }
        (None, Some(alpha), Some(theta), Some(n)) => {
            let params = model(alpha, theta)?;
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            sampler::run(
                &params,
                n,
                &CheckpointSchedule::FinalOnly,
                1,
                SamplerMode::CountsOnly,
                &mut rng,
            )
            .map_err(|e| e.to_string())?
            .1
        }
        _ => return Err("pass either --input, or all of --alpha --theta --n".to_string()),
    };
    let s = EstimateSummary::from_state(&state, a.gamma).map_err(|e| e.to_string())?;
    println!(
        "{{\"n\":{},\"K\":{},\"alpha_hat\":{},\"ci_low\":{},\"ci_high\":{},\"gamma\":{}}}",
        s.n,
        s.k,
        jf(s.alpha_hat),
        jf(s.ci_low),
        jf(s.ci_high),
        jf(s.gamma)
    );
    Ok(true)
}

fn cmd_verify_cov(a: VerifyCovArgs) -> Result<bool, String> {
    let params = model(a.alpha, a.theta)?;
    let plan = ExperimentPlan {
        params,
        n_target: a.n,
        replicates: a.replicates,
        depth: a.depth,
        gamma: 0.05,
        master_seed: a.seed,
        parallelism: a.threads,
    };
    let rows = run_experiment(&plan).map_err(|e| e.to_string())?;
    let summary = summarize(&rows, &plan.params).map_err(|e| e.to_string())?;
    let limit = gamma_closed_form::<f64>(a.depth, &a.alpha).map_err(|e| e.to_string())?;
    let cmp = compare_covariance(&rows, &limit, &plan.params, a.n, a.se_mult)
        .map_err(|e| e.to_string())?;
    println!(
        "{{\"alpha\":{},\"theta\":{},\"n\":{},\"replicates\":{},\"d\":{},\"seed\":{},\
         \"threads\":{},\"limit\":{},\"cov_q\":{},\"gaps\":{},\"jackknife_se\":{},\
         \"allowance\":{},\"se_mult\":{},\"worst_ratio\":{},\"pass\":{}}}",
        jf(a.alpha),
        jf(a.theta),
        a.n,
        a.replicates,
        a.depth,
        a.seed,
        a.threads,
        jmat(&limit),
        jmat(&summary.cov_q),
        jmat(&cmp.gaps),
        jmat(&cmp.jackknife_se),
        jmat(&cmp.allowance),
        jf(a.se_mult),
        jf(cmp.worst_ratio),
        cmp.ok
    );
    Ok(cmp.ok)
}

fn cmd_verify_martingale(a: VerifyMartingaleArgs) -> Result<bool, String> {
    let params = model(a.alpha, a.theta)?;
    if a.max_order == 0 {
        return Err("max_order must be >= 1".to_string());
    }
    if a.min_n == 0 || a.max_n < a.min_n {
        return Err("need 1 <= min_n <= max_n".to_string());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut worst = 0.0f64;
    let mut worst_n = 0u64;
    let mut worst_r = 0usize;
    for _ in 0..a.states {
        let n_i = rng.random_range(a.min_n..=a.max_n);
        let (_, state) = sampler::run(
            &params,
            n_i,
            &CheckpointSchedule::FinalOnly,
            1,
            SamplerMode::CountsOnly,
            &mut rng,
        )
        .map_err(|e| e.to_string())?;
        for r in 1..=a.max_order {
            let stepped = martingale::one_step_expectation(&state, r, &params)
                .map_err(|e| e.to_string())?;
            let direct = martingale::statistic_m(&state, r, &params).map_err(|e| e.to_string())?;
            let rel = (stepped - direct).abs() / direct.abs().max(1.0);
            if rel > worst {
                worst = rel;
                worst_n = n_i;
                worst_r = r;
            }
        }
    }
    let pass = worst <= a.tol;

    if let Some(path) = &a.qv_csv {
        let mut rng2 = ChaCha8Rng::seed_from_u64(a.seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut state = PartitionState::init_counts_only(&params);
        let mut trackers: Vec<MartingaleTracker> = (1..=a.max_order)
            .map(|r| MartingaleTracker::new(&state, r, &params))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let points = CheckpointSchedule::geometric()
            .points(a.qv_n)
            .map_err(|e| e.to_string())?;
        let mut rows = Vec::new();
        for &p in &points {
            while state.n() < p {
                let outcome = state.step(&params, &mut rng2);
                for t in trackers.iter_mut() {
                    t.observe(outcome);
                }
            }
            for t in &trackers {
                rows.push((
                    t.n(),
                    t.order(),
                    t.statistic(),
                    t.value(),
                    t.normalized_quadratic_variation(),
                ));
            }
        }
        let mut out = Vec::new();
        martingale::write_diagnostics_csv(&mut out, &rows).map_err(|e| e.to_string())?;
        std::fs::write(path, &out).map_err(|e| format!("{}: {e}", path.display()))?;
    }

    println!(
        "{{\"alpha\":{},\"theta\":{},\"states\":{},\"max_order\":{},\"min_n\":{},\"max_n\":{},\
         \"tol\":{},\"max_rel_gap\":{},\"worst_n\":{},\"worst_r\":{},\"pass\":{}}}",
        jf(a.alpha),
        jf(a.theta),
        a.states,
        a.max_order,
        a.min_n,
        a.max_n,
        jf(a.tol),
        jf(worst),
        worst_n,
        worst_r,
        pass
    );
    Ok(pass)
}

fn eval_stat<T: Scalar>(a: &MomentsArgs, alpha: T, theta: T) -> Result<T, String> {
    let engine = MomentEngine::new(alpha, theta, a.n).map_err(|e| e.to_string())?;
    let need_r = || a.r.ok_or(format!("--stat {} needs --r", a.stat.name()));
    let need_p = || a.p.ok_or(format!("--stat {} needs --p", a.stat.name()));
    let need_q = || a.q.ok_or(format!("--stat {} needs --q", a.stat.name()));
    let need_k = || a.k.ok_or(format!("--stat {} needs --k", a.stat.name()));
    let value = match a.stat {
        Stat::MeanK => engine.block_count_mean(a.n),
        Stat::PmfK => engine.block_count_pmf(a.n, need_k()?),
        Stat::MeanKr => engine.size_count_mean(a.n, need_r()?),
        Stat::FactorialKr => {
            engine.size_count_factorial_moment(a.n, need_r()?, need_p()? as usize)
        }
        Stat::Joint => engine.joint_moment(a.n, need_r()?, need_p()?, need_q()?),
        Stat::ConditionalKr => {
            engine.conditional_moment(a.n, need_r()?, need_p()? as usize, need_k()?)
        }
    };
    value.map_err(|e| e.to_string())
}

fn cmd_moments(a: MomentsArgs) -> Result<bool, String> {
    let alpha = parse_exact(&a.alpha)?;
    let theta = parse_exact(&a.theta)?;
    let (value, backend) = match a.backend {
        Backend::Exact => (eval_stat::<Exact>(&a, alpha, theta)?.to_f64(), "exact"),
        Backend::Float => (eval_stat::<f64>(&a, alpha.to_f64(), theta.to_f64())?, "float"),
    };
    println!(
        "{{\"stat\":\"{}\",\"n\":{},\"r\":{},\"p\":{},\"q\":{},\"k\":{},\"value\":{},\
         \"backend\":\"{}\"}}",
        a.stat.name(),
        a.n,
        jopt(&a.r),
        jopt(&a.p),
        jopt(&a.q),
        jopt(&a.k),
        jf(value),
        backend
    );
    Ok(true)
}

/// One named validation check: worst absolute error seen, pass under `tol`.
/// Exact checks keep the rational gap and pass only when it is exactly zero.
struct CheckAgg {
    name: &'static str,
    max_err: f64,
    tol: f64,
    pass: bool,
}

impl CheckAgg {
    fn exact(name: &'static str) -> Self {
        CheckAgg { name, max_err: 0.0, tol: 0.0, pass: true }
    }

    fn float(name: &'static str, tol: f64) -> Self {
        CheckAgg { name, max_err: 0.0, tol, pass: true }
    }

    fn see_exact(&mut self, gap: &Exact) {
        let abs = gap.to_f64().abs();
        if abs > self.max_err {
            self.max_err = abs;
        }
        use num_traits::Zero;
        self.pass &= gap.is_zero();
    }

    fn see_float(&mut self, gap: f64) {
        let abs = gap.abs();
        if abs > self.max_err {
            self.max_err = abs;
        }
        self.pass &= abs <= self.tol;
    }

    fn to_json(&self) -> String {
        format!(
            "{{\"name\":\"{}\",\"max_abs_error\":{},\"tol\":{},\"pass\":{}}}",
            self.name,
            jf(self.max_err),
            jf(self.tol),
            self.pass
        )
    }
}

fn state_from_oracle_counts(counts: &[u64]) -> Result<PartitionState, String> {
    let pairs = counts
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, c)| **c > 0)
        .map(|(r, c)| (r as u64, *c));
    PartitionState::from_size_counts(pairs).map_err(|e| e.to_string())
}

fn cmd_oracle_check(a: OracleCheckArgs) -> Result<bool, String> {
    if a.n_max == 0 || a.n_max > oracle::MAX_N {
        return Err(format!("n_max must lie in [1, {}]", oracle::MAX_N));
    }
    let grid: Vec<(Exact, Exact)> = match (&a.alpha, &a.theta) {
        (Some(al), Some(th)) => vec![(parse_exact(al)?, parse_exact(th)?)],
        _ => {
            let alphas = [exact(1, 4), exact(1, 2), exact(3, 4)];
            let thetas = [exact(-1, 8), exact(1, 2), exact(2, 1)];
            alphas
                .iter()
                .flat_map(|al| thetas.iter().map(move |th| (al.clone(), th.clone())))
                .collect()
        }
    };

    let mut normalization = CheckAgg::exact("law_normalization");
    let mut pmf = CheckAgg::exact("pmf_block_count");
    let mut mean_k = CheckAgg::exact("mean_block_count");
    let mut mean_kr = CheckAgg::exact("mean_size_count");
    let mut fact = CheckAgg::exact("factorial_size_count");
    let mut joint = CheckAgg::exact("joint_moment");
    let mut cond = CheckAgg::exact("conditional_moment");
    let mut mart = CheckAgg::float("martingale_statistic", a.float_tol);
    let mut one_step = CheckAgg::float("martingale_one_step", a.float_tol);
    let mut transport = CheckAgg::exact("covariance_transport_identity");

    use num_traits::{One, Zero};
    for (alpha, theta) in &grid {
        let engine = MomentEngine::<Exact>::new(alpha.clone(), theta.clone(), a.n_max)
            .map_err(|e| e.to_string())?;
        let alpha_f = alpha.to_f64();
        let theta_f = theta.to_f64();
        let params = model(alpha_f, theta_f)?;
        for n in 1..=a.n_max {
            let law = oracle::enumerate_law(n, alpha, theta).map_err(|e| e.to_string())?;
            let total: Exact = law.support().iter().map(|(_, p)| p.clone()).sum();
            normalization.see_exact(&(total - Exact::one()));

            let marginal = law.block_count_marginal();
            for k in 1..=n {
                let engine_pmf = engine.block_count_pmf(n, k).map_err(|e| e.to_string())?;
                let law_pmf = marginal
                    .iter()
                    .find(|(kk, _)| *kk == k as u64)
                    .map(|(_, p)| p.clone())
                    .unwrap_or_else(Exact::zero);
                pmf.see_exact(&(engine_pmf - law_pmf));
            }

            let engine_mean = engine.block_count_mean(n).map_err(|e| e.to_string())?;
            mean_k.see_exact(&(engine_mean - law.moment(selectors::block_count())));

            for r in 1..=3.min(n) {
                let engine_val = engine.size_count_mean(n, r).map_err(|e| e.to_string())?;
                mean_kr.see_exact(&(engine_val - law.moment(selectors::count_of_size(r))));
                for p in 1..=3usize {
                    let ev = engine
                        .size_count_factorial_moment(n, r, p)
                        .map_err(|e| e.to_string())?;
                    let falling = law.moment(|counts| {
                        let x = Exact::from_integer(counts[r].into());
                        (0..p as i64).fold(Exact::one(), |acc, j| {
                            acc * (x.clone() - Exact::from_integer(j.into()))
                        })
                    });
                    fact.see_exact(&(ev - falling));
                }
                for p in 1..=2u32 {
                    for q in [-1i64, 0, 1, 2] {
                        let ev = engine.joint_moment(n, r, p, q).map_err(|e| e.to_string())?;
                        joint.see_exact(&(ev - law.moment(selectors::joint(r, p, q))));
                    }
                }
            }

            for r in 1..=2.min(n) {
                for p in 1..=2usize {
                    for k in 1..=n {
                        let ev = engine
                            .conditional_moment(n, r, p, k)
                            .map_err(|e| e.to_string())?;
                        let cond_law =
                            law.conditional_on_block_count(k as u64).map_err(|e| e.to_string())?;
                        cond.see_exact(&(ev - cond_law.moment(selectors::joint(r, p as u32, 0))));
                    }
                }
            }

            for (counts, _) in law.support() {
                let state = state_from_oracle_counts(counts)?;
                for r in 1..=4usize {
                    let direct =
                        martingale::statistic_m(&state, r, &params).map_err(|e| e.to_string())?;
                    let truth =
                        oracle::martingale_m_exact(counts, r, alpha, theta).to_f64();
                    mart.see_float((direct - truth) / truth.abs().max(1.0));
                    let stepped = martingale::one_step_expectation(&state, r, &params)
                        .map_err(|e| e.to_string())?;
                    let truth_step =
                        oracle::one_step_m_expectation(counts, r, alpha, theta).to_f64();
                    one_step.see_float((stepped - truth_step) / truth_step.abs().max(1.0));
                }
            }
        }
    }

    let mut seen_alphas: Vec<Exact> = Vec::new();
    for (alpha, _) in &grid {
        if !seen_alphas.contains(alpha) {
            seen_alphas.push(alpha.clone());
            let gap = transport_identity_gap::<Exact>(12, alpha).map_err(|e| e.to_string())?;
            transport.see_exact(&gap);
        }
    }

    let checks = [
        normalization,
        pmf,
        mean_k,
        mean_kr,
        fact,
        joint,
        cond,
        mart,
        one_step,
        transport,
    ];
    let all = checks.iter().all(|c| c.pass);
    let grid_cells: Vec<String> = grid
        .iter()
        .map(|(al, th)| format!("[\"{al}\",\"{th}\"]"))
        .collect();
    let body: Vec<String> = checks.iter().map(CheckAgg::to_json).collect();
    println!(
        "{{\"n_max\":{},\"grid\":[{}],\"checks\":[{}],\"pass\":{}}}",
        a.n_max,
        grid_cells.join(","),
        body.join(","),
        all
    );
    Ok(all)
}

fn cmd_ci_coverage(a: CiCoverageArgs) -> Result<bool, String> {
    let params = model(a.alpha, a.theta)?;
    let plan = ExperimentPlan {
        params,
        n_target: a.n,
        replicates: a.replicates,
        depth: a.depth,
        gamma: a.gamma,
        master_seed: a.seed,
        parallelism: a.threads,
    };
    let rows = run_experiment(&plan).map_err(|e| e.to_string())?;
    let summary = summarize(&rows, &plan.params).map_err(|e| e.to_string())?;

    if let Some(path) = &a.dump_replicates {
        let mut buf = String::from("alpha_hat");
        for r in 1..=a.depth {
            let _ = write!(buf, ",Q{r}");
        }
        buf.push('\n');
        for row in &rows {
            let _ = write!(buf, "{:.16e}", row.alpha_hat);
            for x in &row.q {
                let _ = write!(buf, ",{x:.16e}");
            }
            buf.push('\n');
        }
        write_text(path, &buf)?;
    }

    let mut checks = Vec::new();
    let mut all = true;
    if let Some(win) = &a.expect_coverage {
        let (lo, hi) = win
            .split_once(',')
            .ok_or("expect-coverage must look like '0.94,0.96'")?;
        let lo: f64 = lo.trim().parse().map_err(|_| "bad expect-coverage low end")?;
        let hi: f64 = hi.trim().parse().map_err(|_| "bad expect-coverage high end")?;
        let pass = summary.ci_coverage >= lo && summary.ci_coverage <= hi;
        all &= pass;
        checks.push(format!(
            "{{\"name\":\"ci_coverage_window\",\"low\":{},\"high\":{},\"observed\":{},\"pass\":{}}}",
            jf(lo),
            jf(hi),
            jf(summary.ci_coverage),
            pass
        ));
    }
    if let Some(rel) = a.expect_var_rel {
        let target = a.alpha * (1.0 - a.alpha);
        let pass = (summary.var_alpha_dev - target).abs() <= rel * target;
        all &= pass;
        checks.push(format!(
            "{{\"name\":\"alpha_dev_variance_window\",\"target\":{},\"rel_tol\":{},\
             \"observed\":{},\"pass\":{}}}",
            jf(target),
            jf(rel),
            jf(summary.var_alpha_dev),
            pass
        ));
    }

    println!(
        "{{\"alpha\":{},\"theta\":{},\"n\":{},\"replicates\":{},\"d\":{},\"gamma\":{},\
         \"seed\":{},\"threads\":{},\"mean_q\":{},\"second_moments_q\":{},\"cov_q\":{},\
         \"cov_scaled\":{},\"var_alpha_dev\":{},\"ci_coverage\":{},\"checks\":[{}],\"pass\":{}}}",
        jf(a.alpha),
        jf(a.theta),
        a.n,
        a.replicates,
        a.depth,
        jf(a.gamma),
        a.seed,
        a.threads,
        jf_vec(&summary.mean_q),
        jf_vec(&summary.second_moments_q),
        jmat(&summary.cov_q),
        jmat(&summary.cov_scaled),
        jf(summary.var_alpha_dev),
        jf(summary.ci_coverage),
        checks.join(","),
        all
    );
    Ok(all)
}

fn cmd_neg_moments(a: NegMomentsArgs) -> Result<bool, String> {
    let params = model(a.alpha, a.theta)?;
    let targets = parse_u64_list(&a.targets, "targets")?;
    let scan = negative_moment_scan(&params, a.q, &targets, a.replicates, a.seed, a.threads)
        .map_err(|e| e.to_string())?;
    let pass = a.max_spread.is_none_or(|m| scan.spread < m);
    println!(
        "{{\"alpha\":{},\"theta\":{},\"q\":{},\"replicates\":{},\"targets\":{},\"means\":{},\
         \"standard_errors\":{},\"spread\":{},\"max_spread\":{},\"pass\":{}}}",
        jf(a.alpha),
        jf(a.theta),
        jf(a.q),
        a.replicates,
        ju_vec(&scan.targets),
        jf_vec(&scan.means),
        jf_vec(&scan.standard_errors),
        jf(scan.spread),
        a.max_spread.map_or("null".to_string(), jf),
        pass
    );
    Ok(pass)
}
