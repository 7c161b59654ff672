//! Sequential construction of the random partition.
//!
//! Element n+1 starts a new block with probability (a K + t) / (n + t) and
//! otherwise joins an existing block of size s with probability
//! proportional to s - a, where (a, t) are the model parameters, n the number
//! of elements placed so far and K the number of blocks.
//!
//! Two storage modes:
//!
//! * **full**: an element -> block table plus per-block sizes. Joining is a
//!   rejection loop (propose a uniform element's block, accept with
//!   probability (s - a)/s), O(1) amortized per step with expected round
//!   count n / (n - a K) <= 1/(1 - a).
//! * **counts-only**: only the size histogram K_r is kept, and the join step
//!   scans size classes with weights K_r (r - a). O(distinct sizes) per step
//!   but O(max size) memory, for n far beyond what the table can hold.
//!
//! Both modes draw different amounts of randomness, so they agree in
//! distribution but not path-by-path.

use rand::Rng;
use std::io::{self, Write};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplerError {
    #[error("alpha must lie in [0, 1), got {0}")]
    BadAlpha(f64),
    #[error("theta must exceed -alpha, got theta={theta} alpha={alpha}")]
    BadTheta { alpha: f64, theta: f64 },
    #[error("target size must be >= 1")]
    ZeroTarget,
    #[error("full mode holds at most u32::MAX elements, got {0}; use counts-only")]
    TargetTooLargeForFullMode(u64),
    #[error("bad checkpoint schedule: {0}")]
    BadSchedule(String),
    #[error("bad partition data: {0}")]
    BadPartitionData(String),
}

/// Validated model parameters: alpha in [0, 1), theta > -alpha.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    alpha: f64,
    theta: f64,
}

impl ModelParams {
    pub fn new(alpha: f64, theta: f64) -> Result<Self, SamplerError> {
        if !alpha.is_finite() || !(0.0..1.0).contains(&alpha) {
            return Err(SamplerError::BadAlpha(alpha));
        }
        if !theta.is_finite() || theta <= -alpha {
            return Err(SamplerError::BadTheta { alpha, theta });
        }
        Ok(Self { alpha, theta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// True when the power-law block-count regime applies (alpha > 0 and
    /// alpha + theta > 0); the scaled-statistics machinery requires it.
    pub fn asymptotic_regime(&self) -> bool {
        self.alpha > 0.0 && self.alpha + self.theta > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerMode {
    Full,
    CountsOnly,
}

#[derive(Debug, Clone)]
struct BlockTable {
    /// element index -> block id, in insertion order
    element_block: Vec<u32>,
    /// block id -> current size; blocks never shrink or vanish
    block_sizes: Vec<u32>,
}

/// What a single sampler step did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    NewBlock,
    /// An existing block grew; `size` is its size before the step.
    Joined { size: u64 },
}

/// Partition of {1, ..., n} tracked through its block-size histogram
/// (`size_counts[r]` = number of blocks of size r) and, in full mode, the
/// element -> block table.
#[derive(Debug, Clone)]
pub struct PartitionState {
    n: u64,
    k_total: u64,
    size_counts: Vec<u64>,
    blocks: Option<BlockTable>,
}

impl PartitionState {
    /// Single element in a single block, with the element table.
    pub fn init(_params: &ModelParams) -> Self {
        Self {
            n: 1,
            k_total: 1,
            size_counts: vec![0, 1],
            blocks: Some(BlockTable {
                element_block: vec![0],
                block_sizes: vec![1],
            }),
        }
    }

    /// Single element, histogram only.
    pub fn init_counts_only(_params: &ModelParams) -> Self {
        Self {
            n: 1,
            k_total: 1,
            size_counts: vec![0, 1],
            blocks: None,
        }
    }

    /// Histogram-only state from (size, count) pairs, e.g. ingested data.
    pub fn from_size_counts(
        pairs: impl IntoIterator<Item = (u64, u64)>,
    ) -> Result<Self, SamplerError> {
        let mut size_counts = vec![0u64];
        let mut n = 0u64;
        let mut k_total = 0u64;
        for (size, count) in pairs {
            if size == 0 {
                return Err(SamplerError::BadPartitionData(
                    "block size 0 is meaningless".into(),
                ));
            }
            if count == 0 {
                continue;
            }
            if size_counts.len() <= size as usize {
                size_counts.resize(size as usize + 1, 0);
            }
            size_counts[size as usize] += count;
            n += size * count;
            k_total += count;
        }
        if n == 0 {
            return Err(SamplerError::BadPartitionData("empty partition".into()));
        }
        Ok(Self {
            n,
            k_total,
            size_counts,
            blocks: None,
        })
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    /// Total number of blocks K.
    pub fn k_total(&self) -> u64 {
        self.k_total
    }

    /// Number of blocks of size r (0 for r = 0 or beyond the largest block).
    pub fn count_of_size(&self, r: u64) -> u64 {
        self.size_counts.get(r as usize).copied().unwrap_or(0)
    }

    /// K_1, ..., K_d.
    pub fn size_prefix(&self, d: usize) -> Vec<u64> {
        (1..=d as u64).map(|r| self.count_of_size(r)).collect()
    }

    pub fn largest_size(&self) -> u64 {
        (self.size_counts.len() as u64).saturating_sub(1)
    }

    pub fn mode(&self) -> SamplerMode {
        if self.blocks.is_some() {
            SamplerMode::Full
        } else {
            SamplerMode::CountsOnly
        }
    }

    /// Full consistency check: histogram sums match (n, K) and, in full mode,
    /// the histogram matches the block table. O(n + K); run at checkpoints
    /// and in tests, not per step.
    pub fn validate(&self) -> Result<(), SamplerError> {
        let mass: u64 = self
            .size_counts
            .iter()
            .enumerate()
            .map(|(r, c)| r as u64 * c)
            .sum();
        let blocks: u64 = self.size_counts.iter().sum();
        if mass != self.n || blocks != self.k_total || self.size_counts[0] != 0 {
            return Err(SamplerError::BadPartitionData(format!(
                "histogram sums (n={mass}, K={blocks}) disagree with state (n={}, K={})",
                self.n, self.k_total
            )));
        }
        if let Some(bt) = &self.blocks {
            if bt.element_block.len() as u64 != self.n || bt.block_sizes.len() as u64 != self.k_total
            {
                return Err(SamplerError::BadPartitionData(
                    "block table dimensions disagree with state".into(),
                ));
            }
            let mut hist = vec![0u64; self.size_counts.len()];
            for &s in &bt.block_sizes {
                hist[s as usize] += 1;
            }
            if hist != self.size_counts {
                return Err(SamplerError::BadPartitionData(
                    "block table histogram disagrees with size counts".into(),
                ));
            }
            let mut sizes = vec![0u32; bt.block_sizes.len()];
            for &b in &bt.element_block {
                sizes[b as usize] += 1;
            }
            if sizes != bt.block_sizes {
                return Err(SamplerError::BadPartitionData(
                    "element table disagrees with block sizes".into(),
                ));
            }
        }
        Ok(())
    }

    /// Places element n+1 and reports which transition happened (`Joined`
    /// carries the grown block's size before the step).
    pub fn step<R: Rng + ?Sized>(&mut self, params: &ModelParams, rng: &mut R) -> StepOutcome {
        let alpha = params.alpha;
        let theta = params.theta;
        let n_f = self.n as f64;
        // new block iff u (n + t) < a K + t
        let u: f64 = rng.random();
        let outcome = if u * (n_f + theta) < alpha * self.k_total as f64 + theta {
            self.push_new_block();
            StepOutcome::NewBlock
        } else {
            let size = match &self.blocks {
                Some(_) => self.choose_block_full(alpha, rng),
                None => self.choose_size_counts_only(alpha, rng),
            };
            self.grow_block(size);
            StepOutcome::Joined { size }
        };
        self.n += 1;
        outcome
    }

    fn push_new_block(&mut self) {
        self.size_counts[1] += 1;
        self.k_total += 1;
        if let Some(bt) = &mut self.blocks {
            let id = bt.block_sizes.len() as u32;
            bt.block_sizes.push(1);
            bt.element_block.push(id);
        }
    }

    /// Picks an existing block with probability (s - a) / (n - a K),
    /// increments its size in the table, and returns its previous size.
    fn choose_block_full<R: Rng + ?Sized>(&mut self, alpha: f64, rng: &mut R) -> u64 {
        let bt = self.blocks.as_mut().expect("full mode");
        // When blocks are many and alpha is close to 1 the rejection loop's
        // 1/(1-a) expected rounds can exceed a direct O(K) weighted scan.
        if (1.0 - alpha) * (self.k_total as f64) < 0.34 {
            let total = self.n as f64 - alpha * self.k_total as f64;
            let mut t = rng.random::<f64>() * total;
            let mut chosen = bt.block_sizes.len() - 1;
            for (b, &s) in bt.block_sizes.iter().enumerate() {
                t -= s as f64 - alpha;
                if t < 0.0 {
                    chosen = b;
                    break;
                }
            }
            let s = bt.block_sizes[chosen];
            bt.block_sizes[chosen] = s + 1;
            bt.element_block.push(chosen as u32);
            return s as u64;
        }
        loop {
            let j = rng.random_range(0..self.n) as usize;
            let b = bt.element_block[j] as usize;
            let s = bt.block_sizes[b];
            // accept with probability (s - a) / s
            if rng.random::<f64>() * (s as f64) < s as f64 - alpha {
                bt.block_sizes[b] = s + 1;
                bt.element_block.push(b as u32);
                return s as u64;
            }
        }
    }

    /// Picks a size class with probability K_s (s - a) / (n - a K) and
    /// returns the size.
    fn choose_size_counts_only<R: Rng + ?Sized>(&mut self, alpha: f64, rng: &mut R) -> u64 {
        let total = self.n as f64 - alpha * self.k_total as f64;
        let mut t = rng.random::<f64>() * total;
        let mut fallback = 1u64;
        for (s, &c) in self.size_counts.iter().enumerate().skip(1) {
            if c == 0 {
                continue;
            }
            fallback = s as u64;
            t -= c as f64 * (s as f64 - alpha);
            if t < 0.0 {
                return s as u64;
            }
        }
        // float rounding exhausted the budget: largest nonempty class
        fallback
    }

    fn grow_block(&mut self, size: u64) {
        debug_assert!(self.size_counts[size as usize] > 0);
        self.size_counts[size as usize] -= 1;
        let up = size as usize + 1;
        if self.size_counts.len() <= up {
            self.size_counts.resize(up + 1, 0);
        }
        self.size_counts[up] += 1;
    }
}

/// Checkpoint times for a trajectory; always includes the target n.
#[derive(Debug, Clone, PartialEq)]
pub enum CheckpointSchedule {
    /// ceil(first * ratio^j) for j = 0, 1, ...; ratio > 1.
    Geometric { first: u64, ratio: f64 },
    /// Strictly increasing, within [1, n_target].
    Explicit(Vec<u64>),
    FinalOnly,
}

impl CheckpointSchedule {
    /// Doubling schedule from 1.
    pub fn geometric() -> Self {
        CheckpointSchedule::Geometric {
            first: 1,
            ratio: 2.0,
        }
    }

    /// Sorted checkpoint times for a given target.
    pub fn points(&self, n_target: u64) -> Result<Vec<u64>, SamplerError> {
        let mut pts = match self {
            CheckpointSchedule::Geometric { first, ratio } => {
                if *first == 0 || !ratio.is_finite() || *ratio <= 1.0 {
                    return Err(SamplerError::BadSchedule(format!(
                        "geometric schedule needs first >= 1 and ratio > 1, got ({first}, {ratio})"
                    )));
                }
                let mut pts = Vec::new();
                let mut x = *first as f64;
                while (x.ceil() as u64) < n_target {
                    pts.push(x.ceil() as u64);
                    x *= ratio;
                }
                pts
            }
            CheckpointSchedule::Explicit(pts) => {
                if pts.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(SamplerError::BadSchedule(
                        "explicit checkpoints must be strictly increasing".into(),
                    ));
                }
                if pts.first().is_some_and(|&p| p == 0) || pts.last().is_some_and(|&p| p > n_target)
                {
                    return Err(SamplerError::BadSchedule(format!(
                        "explicit checkpoints must lie in [1, {n_target}]"
                    )));
                }
                pts.iter().copied().filter(|&p| p < n_target).collect()
            }
            CheckpointSchedule::FinalOnly => Vec::new(),
        };
        pts.push(n_target);
        Ok(pts)
    }
}

/// One recorded time point: n, K and the dense prefix K_1..K_d.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub n: u64,
    pub k_total: u64,
    pub size_prefix: Vec<u64>,
}

/// Trajectory observed at schedule times.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub depth: usize,
    pub checkpoints: Vec<Checkpoint>,
}

impl TrajectoryRecord {
    /// CSV with header `n,K,K1,...,Kd`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "n,K")?;
        for r in 1..=self.depth {
            write!(w, ",K{r}")?;
        }
        writeln!(w)?;
        for c in &self.checkpoints {
            write!(w, "{},{}", c.n, c.k_total)?;
            for v in &c.size_prefix {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Runs the construction to n_target, recording checkpoints; returns the
/// record together with the final state. Deterministic given the rng stream.
pub fn run<R: Rng + ?Sized>(
    params: &ModelParams,
    n_target: u64,
    schedule: &CheckpointSchedule,
    depth: usize,
    mode: SamplerMode,
    rng: &mut R,
) -> Result<(TrajectoryRecord, PartitionState), SamplerError> {
    if n_target == 0 {
        return Err(SamplerError::ZeroTarget);
    }
    if mode == SamplerMode::Full && n_target > u32::MAX as u64 {
        return Err(SamplerError::TargetTooLargeForFullMode(n_target));
    }
    let points = schedule.points(n_target)?;
    let mut state = match mode {
        SamplerMode::Full => PartitionState::init(params),
        SamplerMode::CountsOnly => PartitionState::init_counts_only(params),
    };
    let mut checkpoints = Vec::with_capacity(points.len());
    for &p in &points {
        while state.n < p {
            state.step(params, rng);
        }
        state
            .validate()
            .expect("sampler invariant violated at checkpoint");
        checkpoints.push(Checkpoint {
            n: state.n,
            k_total: state.k_total,
            size_prefix: state.size_prefix(depth),
        });
    }
    Ok((TrajectoryRecord { depth, checkpoints }, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn params_reject_bad_regimes() {
        assert!(ModelParams::new(0.5, 1.0).is_ok());
        assert!(ModelParams::new(0.0, 2.0).is_ok());
        assert!(ModelParams::new(0.25, -0.125).is_ok());
        assert!(ModelParams::new(-0.1, 1.0).is_err());
        assert!(ModelParams::new(1.0, 1.0).is_err());
        assert!(ModelParams::new(0.25, -0.25).is_err());
        assert!(ModelParams::new(0.5, f64::NAN).is_err());
        assert!(ModelParams::new(0.5, 1.0).unwrap().asymptotic_regime());
        assert!(!ModelParams::new(0.0, 1.0).unwrap().asymptotic_regime());
    }

    #[test]
    fn init_and_invariants_hold_along_a_path() {
        let params = ModelParams::new(0.5, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for mode in [SamplerMode::Full, SamplerMode::CountsOnly] {
            let mut st = match mode {
                SamplerMode::Full => PartitionState::init(&params),
                SamplerMode::CountsOnly => PartitionState::init_counts_only(&params),
            };
            assert_eq!(st.n(), 1);
            assert_eq!(st.k_total(), 1);
            assert_eq!(st.count_of_size(1), 1);
            st.validate().unwrap();
            for i in 0..3000 {
                st.step(&params, &mut rng);
                if i % 250 == 0 {
                    st.validate().unwrap();
                }
            }
            st.validate().unwrap();
            assert_eq!(st.n(), 3001);
        }
    }

    #[test]
    fn extreme_alphas_stay_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(alpha, theta) in &[(0.0, 1.0), (0.97, 0.5), (0.5, -0.4), (0.99, 2.0)] {
            let params = ModelParams::new(alpha, theta).unwrap();
            let mut st = PartitionState::init(&params);
            for _ in 0..2000 {
                st.step(&params, &mut rng);
            }
            st.validate().unwrap();
            if alpha == 0.97 || alpha == 0.99 {
                // near-1 alpha favors singletons heavily
                assert!(st.count_of_size(1) > st.k_total() / 2);
            }
        }
    }

    #[test]
    fn run_records_geometric_checkpoints() {
        let params = ModelParams::new(0.5, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (rec, st) = run(
            &params,
            1000,
            &CheckpointSchedule::geometric(),
            3,
            SamplerMode::Full,
            &mut rng,
        )
        .unwrap();
        let ns: Vec<u64> = rec.checkpoints.iter().map(|c| c.n).collect();
        assert_eq!(ns, vec![1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1000]);
        assert_eq!(st.n(), 1000);
        assert_eq!(rec.depth, 3);
        assert!(rec.checkpoints.iter().all(|c| c.size_prefix.len() == 3));
    }

    #[test]
    fn run_on_trivial_target() {
        let params = ModelParams::new(0.5, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (rec, _) = run(
            &params,
            1,
            &CheckpointSchedule::geometric(),
            2,
            SamplerMode::Full,
            &mut rng,
        )
        .unwrap();
        assert_eq!(rec.checkpoints.len(), 1);
        assert_eq!(rec.checkpoints[0].n, 1);
        assert_eq!(rec.checkpoints[0].k_total, 1);
        assert_eq!(rec.checkpoints[0].size_prefix, vec![1, 0]);
    }

    #[test]
    fn schedules_validate() {
        assert!(CheckpointSchedule::Explicit(vec![1, 5, 3]).points(10).is_err());
        assert!(CheckpointSchedule::Explicit(vec![0, 3]).points(10).is_err());
        assert!(CheckpointSchedule::Explicit(vec![3, 20]).points(10).is_err());
        assert_eq!(
            CheckpointSchedule::Explicit(vec![2, 5]).points(10).unwrap(),
            vec![2, 5, 10]
        );
        assert_eq!(CheckpointSchedule::FinalOnly.points(7).unwrap(), vec![7]);
        assert!(
            CheckpointSchedule::Geometric { first: 1, ratio: 1.0 }
                .points(10)
                .is_err()
        );
        assert!(run(
            &ModelParams::new(0.5, 1.0).unwrap(),
            0,
            &CheckpointSchedule::FinalOnly,
            1,
            SamplerMode::Full,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .is_err());
    }

    #[test]
    fn identical_seeds_reproduce_trajectories() {
        let params = ModelParams::new(0.3, 0.7).unwrap();
        let mk = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            run(
                &params,
                5000,
                &CheckpointSchedule::geometric(),
                5,
                SamplerMode::Full,
                &mut rng,
            )
            .unwrap()
            .0
        };
        assert_eq!(mk(), mk());
    }

    #[test]
    fn csv_layout() {
        let rec = TrajectoryRecord {
            depth: 2,
            checkpoints: vec![Checkpoint {
                n: 4,
                k_total: 2,
                size_prefix: vec![0, 2],
            }],
        };
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "n,K,K1,K2\n4,2,0,2\n");
    }

    #[test]
    fn ingested_histograms() {
        let st = PartitionState::from_size_counts([(3, 2), (1, 1)]).unwrap();
        assert_eq!(st.n(), 7);
        assert_eq!(st.k_total(), 3);
        assert_eq!(st.count_of_size(3), 2);
        st.validate().unwrap();
        assert!(PartitionState::from_size_counts([(0, 2)]).is_err());
        assert!(PartitionState::from_size_counts([(2, 0)]).is_err());
    }

    #[test]
    fn new_block_rate_matches_two_element_law() {
        // P(second element opens a new block) = (a + t) / (1 + t)
        let params = ModelParams::new(0.5, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let runs = 200_000;
        let mut singles = 0u64;
        for _ in 0..runs {
            let mut st = PartitionState::init(&params);
            st.step(&params, &mut rng);
            if st.k_total() == 2 {
                singles += 1;
            }
        }
        let p = (params.alpha() + params.theta()) / (1.0 + params.theta());
        let got = singles as f64 / runs as f64;
        let se = (p * (1.0 - p) / runs as f64).sqrt();
        assert!((got - p).abs() < 5.0 * se, "{got} vs {p}");
    }
}
