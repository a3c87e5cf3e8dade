//! Subsidiary macro-variables: coarsenings of a fundamental cause/effect pair
//! that still admit unambiguous manipulations, and their composition.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::partition::{enumerate_partitions_capped, partition_from_equivalence, product, Partition};

/// Equality tolerance for exact tables.
pub const EXACT_TOL: f64 = 1e-6;
/// Equality tolerance for tables estimated from samples.
pub const ESTIMATED_TOL: f64 = 0.05;
/// Largest effect range whose coarsenings are enumerated.
pub const EFFECT_CAP: usize = 10;

const ROW_SUM_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsidiaryPair {
    /// Partition of the fundamental cause values.
    pub cause_coarsening: Partition,
    /// Partition of the fundamental effect values.
    pub effect_coarsening: Partition,
    /// `table[c̄][ē]`: mean over the members of cause cell `c̄` of the
    /// marginalized effect distribution.
    pub table: Vec<Vec<f64>>,
    /// Some cause cell joins values whose marginalized rows differ by more
    /// than the tolerance (the tolerance closure chained them together).
    pub ambiguous: bool,
    /// The cause coarsening keeps every fundamental cause value apart.
    pub cause_not_strict: bool,
}

impl SubsidiaryPair {
    /// Strict on both sides and unambiguous.
    pub fn is_strict(&self) -> bool {
        !self.ambiguous && !self.cause_not_strict && self.effect_coarsening.n_cells() < self.effect_coarsening.size()
    }

    pub fn is_trivial(&self) -> bool {
        self.effect_coarsening.n_cells() == 1
    }

    /// Fundamental table implied by this pair when effect mass is spread
    /// evenly over the members of each effect cell.
    pub fn reconstruct(&self) -> Vec<Vec<f64>> {
        let sizes = self.effect_coarsening.cell_sizes();
        (0..self.cause_coarsening.size())
            .map(|c| {
                let row = &self.table[self.cause_coarsening.label(c)];
                (0..self.effect_coarsening.size())
                    .map(|e| {
                        let g = self.effect_coarsening.label(e);
                        row[g] / sizes[g] as f64
                    })
                    .collect()
            })
            .collect()
    }
}

/// Every pair found for one fundamental table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsidiarySearch {
    /// The pair obtained from the identity coarsening of the effect.
    pub fundamental: SubsidiaryPair,
    /// Pairs for every strict coarsening of the effect, coarsest first.
    pub pairs: Vec<SubsidiaryPair>,
}

impl SubsidiarySearch {
    /// Pairs that coarsen both sides strictly and unambiguously.
    pub fn strict(&self) -> impl Iterator<Item = &SubsidiaryPair> {
        self.pairs.iter().filter(|p| p.is_strict())
    }
}

fn check_table(table: &[Vec<f64>]) -> Result<usize> {
    let n_e = table.first().map_or(0, |r| r.len());
    if table.is_empty() || n_e == 0 {
        return Err(Error::invalid("table must be non-empty"));
    }
    for (c, row) in table.iter().enumerate() {
        if row.len() != n_e {
            return Err(Error::DimensionMismatch {
                expected: n_e,
                got: row.len(),
            });
        }
        if row.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::invalid(format!("row {c} has a negative or NaN entry")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::invalid(format!("row {c} sums to {s}, not 1")));
        }
    }
    Ok(n_e)
}

fn check_size(p: &Partition, n: usize) -> Result<()> {
    if p.size() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: p.size(),
        });
    }
    Ok(())
}

/// `P(ē | do(C = c))` for every fundamental cause value.
pub fn marginalize(table: &[Vec<f64>], effect: &Partition) -> Vec<Vec<f64>> {
    table
        .iter()
        .map(|row| {
            let mut out = vec![0.0; effect.n_cells()];
            for (e, &p) in row.iter().enumerate() {
                out[effect.label(e)] += p;
            }
            out
        })
        .collect()
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn cell_means(rows: &[Vec<f64>], cells: &Partition) -> Vec<Vec<f64>> {
    let width = rows.first().map_or(0, |r| r.len());
    let mut out = vec![vec![0.0; width]; cells.n_cells()];
    for (c, row) in rows.iter().enumerate() {
        crate::linalg::axpy(1.0, row, &mut out[cells.label(c)]);
    }
    for (mean, &n) in out.iter_mut().zip(&cells.cell_sizes()) {
        mean.iter_mut().for_each(|x| *x /= n as f64);
    }
    out
}

fn any_cell_split(rows: &[Vec<f64>], cells: &Partition, tol: f64) -> bool {
    cells.cells().iter().any(|members| {
        members
            .iter()
            .enumerate()
            .any(|(k, &a)| members[k + 1..].iter().any(|&b| sup_distance(&rows[a], &rows[b]) > tol))
    })
}

fn pair_for(table: &[Vec<f64>], effect: Partition, tol: f64) -> SubsidiaryPair {
    let rows = marginalize(table, &effect);
    let cause = partition_from_equivalence(rows.len(), |a, b| sup_distance(&rows[a], &rows[b]) <= tol);
    SubsidiaryPair {
        table: cell_means(&rows, &cause),
        ambiguous: any_cell_split(&rows, &cause, tol),
        cause_not_strict: cause.n_cells() == cause.size(),
        cause_coarsening: cause,
        effect_coarsening: effect,
    }
}

/// Enumerates every coarsening of the effect range, marginalizes the table
/// over its cells and groups cause values whose marginal rows agree within
/// `tol`.
///
/// The identity coarsening yields the fundamental pair, reported apart from
/// the rest. Remaining pairs are sorted by the number of effect cells, then
/// by effect and cause labels.
pub fn find_subsidiaries(table: &[Vec<f64>], tol: f64) -> Result<SubsidiarySearch> {
    find_subsidiaries_capped(table, tol, EFFECT_CAP)
}

pub fn find_subsidiaries_capped(table: &[Vec<f64>], tol: f64, cap: usize) -> Result<SubsidiarySearch> {
    if !(tol >= 0.0) {
        return Err(Error::invalid("tolerance must be non-negative"));
    }
    let n_e = check_table(table)?;
    let coarsenings: Vec<Partition> = enumerate_partitions_capped(n_e, cap)?
        .filter(|p| p.n_cells() < n_e)
        .collect();
    let mut pairs = exec::map_slice(&coarsenings, |e| pair_for(table, e.clone(), tol));
    pairs.sort_by(|a, b| {
        a.effect_coarsening
            .n_cells()
            .cmp(&b.effect_coarsening.n_cells())
            .then_with(|| a.effect_coarsening.labels().cmp(b.effect_coarsening.labels()))
            .then_with(|| a.cause_coarsening.labels().cmp(b.cause_coarsening.labels()))
    });
    Ok(SubsidiarySearch {
        fundamental: pair_for(table, Partition::discrete(n_e), tol),
        pairs,
    })
}

/// Whether manipulating a cell of `cause` has an effect on the cells of
/// `effect` that depends on which fundamental value realizes it.
pub fn check_ambiguous(cause: &Partition, effect: &Partition, table: &[Vec<f64>], tol: f64) -> Result<bool> {
    let n_e = check_table(table)?;
    check_size(cause, table.len())?;
    check_size(effect, n_e)?;
    Ok(any_cell_split(&marginalize(table, effect), cause, tol))
}

/// Whether the joint effect of two pairs factorizes: for every non-empty
/// product cause cell `(c1, c2)` and non-empty product effect cell
/// `(e1, e2)`, `P(e1, e2 | do(c1, c2)) = P(e1 | do c1) P(e2 | do c2)` within
/// `tol`. All three distributions are marginalized from `table`.
pub fn non_interacting(p1: &SubsidiaryPair, p2: &SubsidiaryPair, table: &[Vec<f64>], tol: f64) -> Result<bool> {
    let n_e = check_table(table)?;
    for p in [p1, p2] {
        check_size(&p.cause_coarsening, table.len())?;
        check_size(&p.effect_coarsening, n_e)?;
    }
    let cause = product(&p1.cause_coarsening, &p2.cause_coarsening)?;
    let effect = product(&p1.effect_coarsening, &p2.effect_coarsening)?;
    let joint = cell_means(&marginalize(table, &effect), &cause);
    let m1 = cell_means(&marginalize(table, &p1.effect_coarsening), &p1.cause_coarsening);
    let m2 = cell_means(&marginalize(table, &p2.effect_coarsening), &p2.cause_coarsening);
    // A representative of every non-empty product cell fixes its coordinates.
    let cause_reps: Vec<usize> = cause.cells().iter().map(|c| c[0]).collect();
    let effect_reps: Vec<usize> = effect.cells().iter().map(|c| c[0]).collect();
    for (c, &ci) in cause_reps.iter().enumerate() {
        let (c1, c2) = (p1.cause_coarsening.label(ci), p2.cause_coarsening.label(ci));
        for (e, &ej) in effect_reps.iter().enumerate() {
            let (e1, e2) = (p1.effect_coarsening.label(ej), p2.effect_coarsening.label(ej));
            if (joint[c][e] - m1[c1][e1] * m2[c2][e2]).abs() > tol {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Pairwise [`non_interacting`] results; the diagonal tests each pair
/// against itself.
pub fn interaction_matrix(pairs: &[SubsidiaryPair], table: &[Vec<f64>], tol: f64) -> Result<Vec<Vec<bool>>> {
    pairs
        .iter()
        .map(|a| pairs.iter().map(|b| non_interacting(a, b, table, tol)).collect())
        .collect()
}

/// Cause and effect partitions of the composed macro-variables.
pub fn compose(p1: &SubsidiaryPair, p2: &SubsidiaryPair) -> Result<(Partition, Partition)> {
    Ok((
        product(&p1.cause_coarsening, &p2.cause_coarsening)?,
        product(&p1.effect_coarsening, &p2.effect_coarsening)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuro::ground_truth_table;

    fn p(labels: &[usize]) -> Partition {
        Partition::from_labels(labels)
    }

    // Cause and effect orders: none/neither, h-bar/pulse, v-bar/rhythm, both.
    const H_BAR: [usize; 4] = [0, 1, 0, 1];
    const V_BAR: [usize; 4] = [0, 0, 1, 1];

    fn find_pair<'a>(s: &'a SubsidiarySearch, effect: &[usize]) -> &'a SubsidiaryPair {
        s.pairs.iter().find(|x| x.effect_coarsening == p(effect)).expect("pair present")
    }

    #[test]
    fn single_cell_effect_gives_single_cell_cause() {
        let s = find_subsidiaries(&ground_truth_table(), EXACT_TOL).unwrap();
        let first = &s.pairs[0];
        assert!(first.is_trivial());
        assert_eq!(first.cause_coarsening.n_cells(), 1);
        assert_eq!(first.table, vec![vec![1.0]]);
    }

    #[test]
    fn bars_drive_their_own_features() {
        let t = ground_truth_table();
        let s = find_subsidiaries(&t, EXACT_TOL).unwrap();
        let pulse = find_pair(&s, &H_BAR);
        assert_eq!(pulse.cause_coarsening, p(&H_BAR));
        assert!(pulse.is_strict());
        assert!((pulse.table[1][1] - 0.8).abs() < 1e-12);
        assert_eq!(pulse.table[0][1], 0.0);
        let rhythm = find_pair(&s, &V_BAR);
        assert_eq!(rhythm.cause_coarsening, p(&V_BAR));
        assert!((rhythm.table[1][1] - 0.8).abs() < 1e-12);

        assert!(check_ambiguous(&p(&V_BAR), &p(&H_BAR), &t, EXACT_TOL).unwrap());
        assert!(!check_ambiguous(&p(&H_BAR), &p(&H_BAR), &t, EXACT_TOL).unwrap());
        assert!(!check_ambiguous(&Partition::discrete(4), &p(&H_BAR), &t, EXACT_TOL).unwrap());

        assert!(non_interacting(pulse, rhythm, &t, EXACT_TOL).unwrap());
        let (c, e) = compose(pulse, rhythm).unwrap();
        assert_eq!(c, s.fundamental.cause_coarsening);
        assert_eq!(e, s.fundamental.effect_coarsening);
        assert_eq!(c, Partition::discrete(4));
    }

    #[test]
    fn compose_with_trivial_and_itself() {
        let t = ground_truth_table();
        let s = find_subsidiaries(&t, EXACT_TOL).unwrap();
        let pulse = find_pair(&s, &H_BAR);
        let trivial = &s.pairs[0];
        let expect = (pulse.cause_coarsening.clone(), pulse.effect_coarsening.clone());
        assert_eq!(compose(pulse, trivial).unwrap(), expect);
        assert_eq!(compose(pulse, pulse).unwrap(), expect);
        let short = SubsidiaryPair {
            cause_coarsening: Partition::trivial(3),
            ..trivial.clone()
        };
        assert!(compose(pulse, &short).is_err());
    }

    #[test]
    fn self_interaction_requires_a_deterministic_table() {
        let det = vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]];
        let s = find_subsidiaries(&det, EXACT_TOL).unwrap();
        let f = &s.fundamental;
        assert!(non_interacting(f, f, &det, EXACT_TOL).unwrap());
        let soft = vec![vec![0.5, 0.5, 0.0], vec![0.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]];
        let f = &find_subsidiaries(&soft, EXACT_TOL).unwrap().fundamental;
        assert!(!non_interacting(f, f, &soft, EXACT_TOL).unwrap());
    }

    #[test]
    fn correlated_joint_effect_interacts() {
        // Same marginals as the bar table, but "both" fires both features
        // together: P(both | do both) = 0.8 instead of 0.64.
        let t = vec![
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.2, 0.8, 0.0, 0.0],
            vec![0.2, 0.0, 0.8, 0.0],
            vec![0.2, 0.0, 0.0, 0.8],
        ];
        let s = find_subsidiaries(&t, EXACT_TOL).unwrap();
        let pulse = find_pair(&s, &H_BAR);
        let rhythm = find_pair(&s, &V_BAR);
        assert_eq!(pulse.cause_coarsening, p(&H_BAR));
        assert!(!non_interacting(pulse, rhythm, &t, EXACT_TOL).unwrap());
    }

    #[test]
    fn generic_table_has_only_the_trivial_subsidiary() {
        use crate::rng::{dirichlet_uniform, seeded};
        let mut rng = seeded(7);
        let t: Vec<Vec<f64>> = (0..5).map(|_| dirichlet_uniform(&mut rng, 5)).collect();
        let s = find_subsidiaries(&t, EXACT_TOL).unwrap();
        assert_eq!(s.pairs.len(), 51);
        let strict: Vec<_> = s.strict().collect();
        assert_eq!(strict.len(), 1);
        assert!(strict[0].is_trivial());
        assert!(s.pairs.iter().filter(|x| x.cause_coarsening.n_cells() < 5).all(|x| x.is_trivial()));
        assert!(s.fundamental.cause_not_strict);
    }

    #[test]
    fn tolerance_closure_is_flagged_ambiguous() {
        // Rows 0-1 and 1-2 are within tolerance, 0-2 are not.
        let t = vec![vec![0.5, 0.5], vec![0.53, 0.47], vec![0.56, 0.44], vec![0.0, 1.0]];
        let s = find_subsidiaries(&t, 0.04).unwrap();
        assert!(s.fundamental.ambiguous);
        assert_eq!(s.fundamental.cause_coarsening, p(&[0, 0, 0, 1]));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(find_subsidiaries(&[vec![0.5, 0.4]], EXACT_TOL).is_err());
        assert!(find_subsidiaries(&[], EXACT_TOL).is_err());
        let wide = vec![vec![1.0 / 11.0; 11]];
        assert!(matches!(find_subsidiaries(&wide, EXACT_TOL), Err(Error::ResourceLimit { .. })));
        assert!(check_ambiguous(&Partition::trivial(3), &p(&H_BAR), &ground_truth_table(), EXACT_TOL).is_err());
    }

    #[test]
    fn strict_pairs_lose_information() {
        let t = ground_truth_table();
        let s = find_subsidiaries(&t, EXACT_TOL).unwrap();
        for pair in s.strict() {
            let r = pair.reconstruct();
            let worst = t.iter().flatten().zip(r.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(worst > EXACT_TOL);
        }
        let r = s.fundamental.reconstruct();
        assert_eq!(r, t);
    }
}
