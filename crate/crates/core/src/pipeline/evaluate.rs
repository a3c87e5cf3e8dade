//! Comparison of learned macro-variables with the simulator's ground truth.
//! Only report code calls into this module.

use serde::{Deserialize, Serialize};

use crate::dataset::TruthTable;
use crate::error::{Error, Result};
use crate::learner::MacroModel;
use crate::neuro::{ground_truth_table_for, Cause, NeuronParams};
use crate::partition::Partition;
use crate::subsidiary::{check_ambiguous, compose, find_subsidiaries, non_interacting, SubsidiarySearch};

/// Beyond this many cells on either side matching falls back to greedy.
const EXACT_MATCH_LIMIT: usize = 8;

/// Injective assignment of rows to columns maximizing the matched total.
/// Rows left over when there are more rows than columns get `None`.
pub fn best_matching(counts: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = counts.len();
    let cols = counts.first().map_or(0, |r| r.len());
    if rows > EXACT_MATCH_LIMIT || cols > EXACT_MATCH_LIMIT {
        return greedy_matching(counts);
    }
    let row_max: Vec<f64> = counts.iter().map(|r| r.iter().copied().fold(0.0, f64::max)).collect();
    let mut best = (f64::NEG_INFINITY, vec![None; rows]);
    let mut current = vec![None; rows];
    let mut used = vec![false; cols];
    #[allow(clippy::too_many_arguments)]
    fn search(
        r: usize,
        total: f64,
        counts: &[Vec<f64>],
        row_max: &[f64],
        current: &mut Vec<Option<usize>>,
        used: &mut Vec<bool>,
        best: &mut (f64, Vec<Option<usize>>),
    ) {
        if r == counts.len() {
            if total > best.0 {
                *best = (total, current.clone());
            }
            return;
        }
        let bound: f64 = total + row_max[r..].iter().sum::<f64>();
        if bound <= best.0 {
            return;
        }
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                current[r] = Some(c);
                search(r + 1, total + counts[r][c], counts, row_max, current, used, best);
                used[c] = false;
            }
        }
        let free_cols = used.iter().filter(|u| !**u).count();
        if counts.len() - r > free_cols {
            current[r] = None;
            search(r + 1, total, counts, row_max, current, used, best);
        }
    }
    search(0, 0.0, counts, &row_max, &mut current, &mut used, &mut best);
    best.1
}

fn greedy_matching(counts: &[Vec<f64>]) -> Vec<Option<usize>> {
    let mut cells: Vec<(f64, usize, usize)> = counts
        .iter()
        .enumerate()
        .flat_map(|(r, row)| row.iter().enumerate().map(move |(c, &v)| (v, r, c)))
        .collect();
    cells.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = vec![None; counts.len()];
    let mut used = vec![false; counts.first().map_or(0, |r| r.len())];
    for (_, r, c) in cells {
        if out[r].is_none() && !used[c] {
            out[r] = Some(c);
            used[c] = true;
        }
    }
    out
}

/// `counts[learned][truth]` for per-sample labels.
pub fn contingency(learned: &[usize], truth: &[usize], n_truth: usize) -> Vec<Vec<usize>> {
    let n_learned = learned.iter().max().map_or(0, |m| m + 1);
    let mut out = vec![vec![0; n_truth]; n_learned];
    for (&l, &t) in learned.iter().zip(truth) {
        out[l][t] += 1;
    }
    out
}

/// Share of each learned cell taken by its most common true class.
pub fn purity(counts: &[Vec<usize>]) -> Vec<f64> {
    counts
        .iter()
        .map(|row| {
            let total: usize = row.iter().sum();
            let top = row.iter().copied().max().unwrap_or(0);
            if total == 0 {
                0.0
            } else {
                top as f64 / total as f64
            }
        })
        .collect()
}

/// Subsidiary findings on a learned table, expressed in true-class terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsidiaryEvaluation {
    /// `P(pulse | do(h-bar present))` from the pair whose effect is pulse
    /// presence, when that pair's cause is exactly h-bar presence.
    pub hbar_pulse: Option<f64>,
    pub vbar_rhythm: Option<f64>,
    /// v-bar presence is an ambiguous manipulation of pulse presence.
    pub vbar_pulse_ambiguous: bool,
    pub non_interacting: bool,
    pub composes_to_fundamental: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuroEvaluation {
    /// `cause_counts[c][k]`: samples in learned cause cell `c` with true cause `k`.
    pub cause_counts: Vec<Vec<usize>>,
    /// Same for effects; true class is `pulse + 2 rhythm`.
    pub effect_counts: Vec<Vec<usize>>,
    pub cause_purity: Vec<f64>,
    pub effect_purity: Vec<f64>,
    pub cause_match: Vec<Option<usize>>,
    pub effect_match: Vec<Option<usize>>,
    /// Largest entry-wise gap to the true table after matching; `None`
    /// unless both sides match four-to-four.
    pub table_error: Option<f64>,
    pub subsidiary: Option<SubsidiaryEvaluation>,
}

impl NeuroEvaluation {
    pub fn min_purity(&self) -> f64 {
        self.cause_purity
            .iter()
            .chain(&self.effect_purity)
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

fn truth_column(truth: &TruthTable, name: &str) -> Result<Vec<usize>> {
    truth
        .column(name)
        .ok_or_else(|| Error::invalid(format!("truth table lacks column {name:?}")))
        .map(|c| c.into_iter().map(|v| v.max(0) as usize).collect())
}

fn as_f64(counts: &[Vec<usize>]) -> Vec<Vec<f64>> {
    counts.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect()
}

/// Bijective matching onto four true classes, if there is one.
fn four_to_four(m: &[Option<usize>]) -> Option<Vec<usize>> {
    if m.len() != 4 {
        return None;
    }
    m.iter().copied().collect()
}

pub fn evaluate(model: &MacroModel, truth: &TruthTable, params: &NeuronParams, tol: f64) -> Result<NeuroEvaluation> {
    let cause = truth_column(truth, "cause")?;
    let pulse = truth_column(truth, "pulse")?;
    let rhythm = truth_column(truth, "rhythm")?;
    let effect: Vec<usize> = pulse.iter().zip(&rhythm).map(|(p, r)| p + 2 * r).collect();
    let learned_c = model.cause.partition.labels();
    let learned_e = model.effect.partition.labels();
    if learned_c.len() != cause.len() {
        return Err(Error::DimensionMismatch {
            expected: learned_c.len(),
            got: cause.len(),
        });
    }
    let cause_counts = contingency(learned_c, &cause, 4);
    let effect_counts = contingency(learned_e, &effect, 4);
    let cause_match = best_matching(&as_f64(&cause_counts));
    let effect_match = best_matching(&as_f64(&effect_counts));
    let truth_table = ground_truth_table_for(params.p_pulse, params.p_rhythm);
    let (table_error, subsidiary) = match (four_to_four(&cause_match), four_to_four(&effect_match)) {
        (Some(cm), Some(em)) => {
            let mut err: f64 = 0.0;
            for (c, row) in model.table.iter().enumerate() {
                for (e, &v) in row.iter().enumerate() {
                    err = err.max((v - truth_table[cm[c]][em[e]]).abs());
                }
            }
            (Some(err), Some(evaluate_subsidiaries(&model.table, &cm, &em, tol)?))
        }
        _ => (None, None),
    };
    Ok(NeuroEvaluation {
        cause_purity: purity(&cause_counts),
        effect_purity: purity(&effect_counts),
        cause_counts,
        effect_counts,
        cause_match,
        effect_match,
        table_error,
        subsidiary,
    })
}

/// `cm[c]` is the true cause of learned cause cell `c`; `em[e]` the true
/// effect class (`pulse + 2 rhythm`) of learned effect cell `e`.
pub fn evaluate_subsidiaries(table: &[Vec<f64>], cm: &[usize], em: &[usize], tol: f64) -> Result<SubsidiaryEvaluation> {
    let search: SubsidiarySearch = find_subsidiaries(table, tol)?;
    let true_cause = |c: usize| Cause::from_index(cm[c]).expect("cause index < 4");
    let h_part = Partition::from_labels(&(0..cm.len()).map(|c| true_cause(c).has_hbar()).collect::<Vec<_>>());
    let v_part = Partition::from_labels(&(0..cm.len()).map(|c| true_cause(c).has_vbar()).collect::<Vec<_>>());
    let pulse_part = Partition::from_labels(&em.iter().map(|&e| e & 1 == 1).collect::<Vec<_>>());
    let rhythm_part = Partition::from_labels(&em.iter().map(|&e| e & 2 == 2).collect::<Vec<_>>());
    let cell_of = |pred: &dyn Fn(usize) -> bool, n: usize| (0..n).find(|&k| pred(k)).expect("present");
    let h_cell = cell_of(&|c| true_cause(c).has_hbar(), cm.len());
    let v_cell = cell_of(&|c| true_cause(c).has_vbar(), cm.len());
    let pulse_cell = cell_of(&|e| em[e] & 1 == 1, em.len());
    let rhythm_cell = cell_of(&|e| em[e] & 2 == 2, em.len());

    let pair = |effect: &Partition| search.pairs.iter().find(|p| &p.effect_coarsening == effect);
    let marginal = |effect: &Partition, cause: &Partition, c: usize, e: usize| -> Option<f64> {
        pair(effect)
            .filter(|p| &p.cause_coarsening == cause)
            .map(|p| p.table[p.cause_coarsening.label(c)][p.effect_coarsening.label(e)])
    };
    let hp = pair(&pulse_part).filter(|p| p.cause_coarsening == h_part);
    let vr = pair(&rhythm_part).filter(|p| p.cause_coarsening == v_part);
    let (non_int, composes) = match (hp, vr) {
        (Some(a), Some(b)) => {
            let (c, e) = compose(a, b)?;
            (
                non_interacting(a, b, table, tol)?,
                c == search.fundamental.cause_coarsening && e == search.fundamental.effect_coarsening,
            )
        }
        _ => (false, false),
    };
    Ok(SubsidiaryEvaluation {
        hbar_pulse: marginal(&pulse_part, &h_part, h_cell, pulse_cell),
        vbar_rhythm: marginal(&rhythm_part, &v_part, v_cell, rhythm_cell),
        vbar_pulse_ambiguous: check_ambiguous(&v_part, &pulse_part, table, tol)?,
        non_interacting: non_int,
        composes_to_fundamental: composes,
    })
}
