//! Randomized falsification of the coarsening theorem on exact systems.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::discrete::DiscreteMlSystem;
use crate::error::{Error, Result};
use crate::exec;
use crate::partition::{is_coarsening, Partition};
use crate::rng::seeded;

/// Systems whose seeds are listed in a report, at most.
const LISTED_VIOLATIONS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CctReport {
    pub n_systems: usize,
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub tol: f64,
    /// Draws the sampler could not satisfy; not counted as systems.
    pub infeasible: usize,
    /// Systems whose causal I-partition does not coarsen the observational one.
    pub violations_i: usize,
    pub violations_j: usize,
    /// Per-system seeds of the first violating systems.
    pub violating_seeds: Vec<u64>,
}

impl CctReport {
    pub fn violations(&self) -> usize {
        self.violations_i + self.violations_j
    }
}

/// Uniformly random number of cells, then uniform labels.
pub fn random_partition<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Partition {
    let cells = rng.random_range(1..=n.max(1));
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..cells)).collect();
    Partition::from_labels(&labels)
}

/// One system with a random requested observational J-partition. Returns
/// whether each side coarsens, or `None` if the draw was infeasible.
fn check_one(m: usize, n: usize, k: usize, seed: u64, tol: f64) -> Result<Option<(bool, bool)>> {
    let mut rng = seeded(seed);
    let requested = random_partition(&mut rng, n);
    let sys = match DiscreteMlSystem::sample_with_obs_partition(&requested, m, k, rng.random()) {
        Ok(s) => s,
        Err(Error::InfeasibleConstraints { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let gt = sys.ground_truth_partitions(tol)?;
    Ok(Some((
        is_coarsening(&gt.causal_i, &gt.obs_i)?,
        is_coarsening(&gt.causal_j, &gt.obs_j)?,
    )))
}

/// Samples `n_systems` systems with the observational-partition sampler and
/// counts those whose exact causal partitions fail to coarsen the
/// observational ones.
pub fn validate_cct(n_systems: usize, m: usize, n: usize, k: usize, seed: u64, tol: f64) -> Result<CctReport> {
    if m == 0 || n == 0 || k == 0 {
        return Err(Error::invalid("M, N and K must all be positive"));
    }
    if m > 64 || n > 64 || k > 64 {
        return Err(Error::ResourceLimit {
            what: "exact system dimensions".into(),
            cap: 64,
        });
    }
    let seeds: Vec<u64> = (0..n_systems as u64).map(|s| exec::split_seed(seed, s)).collect();
    let outcomes = exec::map_slice(&seeds, |&s| check_one(m, n, k, s, tol));
    let mut report = CctReport {
        n_systems,
        m,
        n,
        k,
        seed,
        tol,
        infeasible: 0,
        violations_i: 0,
        violations_j: 0,
        violating_seeds: Vec::new(),
    };
    for (&s, outcome) in seeds.iter().zip(outcomes) {
        match outcome? {
            None => report.infeasible += 1,
            Some((ok_i, ok_j)) => {
                report.violations_i += usize::from(!ok_i);
                report.violations_j += usize::from(!ok_j);
                if (!ok_i || !ok_j) && report.violating_seeds.len() < LISTED_VIOLATIONS {
                    report.violating_seeds.push(s);
                }
            }
        }
    }
    Ok(report)
}
