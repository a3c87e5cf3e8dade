//! Macro-level tables and similarity-based merging of over-clustered labels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Additive smoothing applied before taking KL divergences.
pub const KL_SMOOTHING: f64 = 1e-6;
pub const DEFAULT_MERGE_THRESHOLD: f64 = 0.1;

/// Co-occurrence counts of cause and effect clusters and the two
/// normalizations used for merging.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroTables {
    /// `counts[c][e]`: samples with cause cluster `c` and effect cluster `e`.
    pub counts: Vec<Vec<f64>>,
}

impl MacroTables {
    /// Counts from per-sample labels. Labels must be canonical (every value
    /// in `0..n` used).
    pub fn from_labels(cause: &[usize], effect: &[usize]) -> Result<Self> {
        if cause.len() != effect.len() {
            return Err(Error::invalid("label vectors differ in length"));
        }
        let sc = cause.iter().max().map_or(0, |m| m + 1);
        let se = effect.iter().max().map_or(0, |m| m + 1);
        let mut counts = vec![vec![0.0; se]; sc];
        for (&c, &e) in cause.iter().zip(effect) {
            counts[c][e] += 1.0;
        }
        Ok(MacroTables { counts })
    }

    pub fn n_causes(&self) -> usize {
        self.counts.len()
    }

    pub fn n_effects(&self) -> usize {
        self.counts.first().map_or(0, |r| r.len())
    }

    /// Rows `P(e | c)`.
    pub fn effect_profiles(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let s: f64 = row.iter().sum();
                row.iter().map(|v| if s > 0.0 { v / s } else { 0.0 }).collect()
            })
            .collect()
    }

    /// For each effect cluster, `P(c | e)` over cause clusters.
    pub fn cause_profiles(&self) -> Vec<Vec<f64>> {
        (0..self.n_effects())
            .map(|e| {
                let s: f64 = self.counts.iter().map(|r| r[e]).sum();
                self.counts
                    .iter()
                    .map(|r| if s > 0.0 { r[e] / s } else { 0.0 })
                    .collect()
            })
            .collect()
    }
}

/// `KL(p||q) + KL(q||p)` after additive smoothing.
pub fn symmetric_kl(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len() as f64;
    let z = 1.0 + n * KL_SMOOTHING;
    p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            let a = (a + KL_SMOOTHING) / z;
            let b = (b + KL_SMOOTHING) / z;
            (a - b) * (a / b).ln()
        })
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Cause,
    Effect,
}

/// One merge decision, in terms of the cluster indices current at that step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeStep {
    pub side: Side,
    pub kept: usize,
    pub absorbed: usize,
    pub divergence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeOutcome {
    /// Final cause cell of each input cause cluster (canonical).
    pub cause_map: Vec<usize>,
    pub effect_map: Vec<usize>,
    pub log: Vec<MergeStep>,
    pub tables: MacroTables,
}

fn closest_pair(profiles: &[Vec<f64>]) -> Option<(usize, usize, f64)> {
    let mut best: Option<(usize, usize, f64)> = None;
    for a in 0..profiles.len() {
        for b in (a + 1)..profiles.len() {
            let d = symmetric_kl(&profiles[a], &profiles[b]);
            if best.is_none_or(|(_, _, bd)| d < bd) {
                best = Some((a, b, d));
            }
        }
    }
    best
}

/// Pairwise divergence tables (cause rows, effect columns) for human review.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeReport {
    pub cause_divergence: Vec<Vec<f64>>,
    pub effect_divergence: Vec<Vec<f64>>,
}

pub fn merge_report(tables: &MacroTables) -> MergeReport {
    let pairwise = |profiles: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        profiles
            .iter()
            .map(|a| profiles.iter().map(|b| symmetric_kl(a, b)).collect())
            .collect()
    };
    MergeReport {
        cause_divergence: pairwise(tables.effect_profiles()),
        effect_divergence: pairwise(tables.cause_profiles()),
    }
}

/// Greedily merges the closest pair of clusters (on either side) while its
/// symmetrized KL divergence is below `threshold`, recomputing the tables
/// after every merge.
///
/// Cause clusters are compared by `P(E' | c)` rows and effect clusters by
/// `P(C' | e)` columns. Since the sequence of merges does not depend on the
/// threshold, only on where it stops, a larger threshold always yields a
/// coarsening of the result for a smaller one.
pub fn merge_clusters(tables: &MacroTables, threshold: f64) -> Result<MergeOutcome> {
    if !(threshold > 0.0) {
        return Err(Error::invalid("merge threshold must be positive"));
    }
    let mut counts = tables.counts.clone();
    // members[c]: input clusters currently merged into c.
    let mut cause_members: Vec<Vec<usize>> = (0..tables.n_causes()).map(|c| vec![c]).collect();
    let mut effect_members: Vec<Vec<usize>> = (0..tables.n_effects()).map(|e| vec![e]).collect();
    let mut log = Vec::new();
    loop {
        let current = MacroTables { counts: counts.clone() };
        let c_best = closest_pair(&current.effect_profiles());
        let e_best = closest_pair(&current.cause_profiles());
        let pick = match (c_best, e_best) {
            (Some(c), Some(e)) => {
                if e.2 < c.2 {
                    (Side::Effect, e)
                } else {
                    (Side::Cause, c)
                }
            }
            (Some(c), None) => (Side::Cause, c),
            (None, Some(e)) => (Side::Effect, e),
            (None, None) => break,
        };
        let (side, (a, b, d)) = pick;
        if d >= threshold {
            break;
        }
        match side {
            Side::Cause => {
                let absorbed = counts.remove(b);
                counts[a].iter_mut().zip(&absorbed).for_each(|(x, y)| *x += y);
                let m = cause_members.remove(b);
                cause_members[a].extend(m);
            }
            Side::Effect => {
                for row in counts.iter_mut() {
                    let y = row.remove(b);
                    row[a] += y;
                }
                let m = effect_members.remove(b);
                effect_members[a].extend(m);
            }
        }
        log.push(MergeStep {
            side,
            kept: a,
            absorbed: b,
            divergence: d,
        });
    }
    let to_map = |members: &[Vec<usize>], n: usize| {
        let mut map = vec![0; n];
        for (cell, ms) in members.iter().enumerate() {
            for &m in ms {
                map[m] = cell;
            }
        }
        crate::partition::Partition::from_labels(&map).labels().to_vec()
    };
    Ok(MergeOutcome {
        cause_map: to_map(&cause_members, tables.n_causes()),
        effect_map: to_map(&effect_members, tables.n_effects()),
        log,
        tables: MacroTables { counts },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_is_symmetric_and_zero_on_equal() {
        let p = [0.2, 0.8, 0.0];
        let q = [0.5, 0.4, 0.1];
        assert_eq!(symmetric_kl(&p, &p), 0.0);
        assert!((symmetric_kl(&p, &q) - symmetric_kl(&q, &p)).abs() < 1e-15);
        assert!(symmetric_kl(&p, &q) > 0.0);
    }

    #[test]
    fn tables_from_labels() {
        let t = MacroTables::from_labels(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap();
        assert_eq!(t.counts, vec![vec![1.0, 1.0], vec![0.0, 2.0]]);
        assert_eq!(t.effect_profiles()[0], vec![0.5, 0.5]);
        assert_eq!(t.cause_profiles()[1], vec![1.0 / 3.0, 2.0 / 3.0]);
        let single = MacroTables::from_labels(&[0, 0], &[0, 0]).unwrap();
        assert_eq!(single.effect_profiles(), vec![vec![1.0]]);
    }

    #[test]
    fn identical_rows_merge() {
        let t = MacroTables {
            counts: vec![vec![10.0, 30.0], vec![20.0, 60.0], vec![40.0, 0.0]],
        };
        let out = merge_clusters(&t, 0.1).unwrap();
        assert_eq!(out.cause_map, vec![0, 0, 1]);
        assert_eq!(out.effect_map, vec![0, 1]);
        assert_eq!(out.log.len(), 1);
    }

    #[test]
    fn infinite_threshold_merges_everything() {
        let t = MacroTables {
            counts: vec![vec![10.0, 0.0, 3.0], vec![0.0, 60.0, 1.0]],
        };
        let out = merge_clusters(&t, f64::INFINITY).unwrap();
        assert!(out.cause_map.iter().all(|&c| c == 0));
        assert!(out.effect_map.iter().all(|&e| e == 0));
        assert_eq!(out.tables.counts, vec![vec![74.0]]);
        assert!(merge_clusters(&t, 0.0).is_err());
    }

    #[test]
    fn report_is_symmetric() {
        let t = MacroTables {
            counts: vec![vec![1.0, 3.0], vec![2.0, 2.0]],
        };
        let r = merge_report(&t);
        assert_eq!(r.cause_divergence[0][1], r.cause_divergence[1][0]);
        assert_eq!(r.effect_divergence[0][0], 0.0);
    }
}
