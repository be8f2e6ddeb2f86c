//! Self-checks of the closed-form routines against exhaustive enumeration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::crf::{brute_force_decode, brute_force_log_partition, random_scores};
use crate::exec::Exec;
use crate::insertion::{brute_force_marginals, random_instance, tree_marginals, BRUTE_FORCE_MAX_NODES};
use crate::{Error, Result};

pub const ORACLE_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleReport {
    pub n_max: usize,
    pub trials: usize,
    pub tree_instances: usize,
    pub tree_max_deviation: f64,
    pub head_or_root_max_violation: f64,
    pub crf_instances: usize,
    pub crf_decode_mismatches: usize,
    pub crf_log_partition_max_deviation: f64,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.tree_max_deviation < ORACLE_TOLERANCE
            && self.head_or_root_max_violation < ORACLE_TOLERANCE
            && self.crf_decode_mismatches == 0
            && self.crf_log_partition_max_deviation < ORACLE_TOLERANCE
    }
}

fn instance_rng(seed: u64, salt: u64, n: usize, trial: usize) -> ChaCha8Rng {
    let mix = seed ^ salt ^ ((n as u64) << 40) ^ (trial as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    ChaCha8Rng::seed_from_u64(mix)
}

/// Max deviation and head-or-root violation for one Matrix-Tree instance.
pub fn tree_check(n: usize, trial: usize, seed: u64) -> Result<(f64, f64)> {
    let (p, r) = random_instance(n, 2.0, &mut instance_rng(seed, 0x7e3e, n, trial));
    let fast = tree_marginals(&p, &r)?;
    let slow = brute_force_marginals(&p, &r)?;
    Ok((fast.max_abs_diff(&slow), fast.head_or_root_violation()))
}

/// Whether Viterbi matched the exhaustive argmax, and the log-partition gap.
pub fn crf_check(n: usize, trial: usize, seed: u64) -> (bool, f64) {
    let s = random_scores(n, 2.0, &mut instance_rng(seed, 0xc4f, n, trial));
    let same = s.viterbi() == brute_force_decode(&s);
    (same, (s.log_partition() - brute_force_log_partition(&s)).abs())
}

/// Matrix-Tree instances use `n ∈ 2..=n_max`, CRF instances `n ∈ 1..=n_max`.
pub fn run(n_max: usize, trials: usize, seed: u64, exec: Exec) -> Result<OracleReport> {
    if !(2..=BRUTE_FORCE_MAX_NODES).contains(&n_max) {
        return Err(Error::Argument(format!(
            "n_max must be in 2..={BRUTE_FORCE_MAX_NODES}, got {n_max}"
        )));
    }
    if trials == 0 {
        return Err(Error::Argument("trials must be at least 1".into()));
    }
    let tree_jobs: Vec<(usize, usize)> = (2..=n_max).flat_map(|n| (0..trials).map(move |t| (n, t))).collect();
    let tree = exec.try_map(&tree_jobs, |&(n, t)| tree_check(n, t, seed))?;
    let crf_jobs: Vec<(usize, usize)> = (1..=n_max).flat_map(|n| (0..trials).map(move |t| (n, t))).collect();
    let crf = exec.map(&crf_jobs, |&(n, t)| crf_check(n, t, seed));
    Ok(OracleReport {
        n_max,
        trials,
        tree_instances: tree.len(),
        tree_max_deviation: tree.iter().map(|x| x.0).fold(0.0, f64::max),
        head_or_root_max_violation: tree.iter().map(|x| x.1).fold(0.0, f64::max),
        crf_instances: crf.len(),
        crf_decode_mismatches: crf.iter().filter(|x| !x.0).count(),
        crf_log_partition_max_deviation: crf.iter().map(|x| x.1).fold(0.0, f64::max),
    })
}
