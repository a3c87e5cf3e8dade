//! Experiment design from observational data: learn the observational
//! partitions, manipulate a few representatives per cell, and merge the
//! observational cells that respond alike.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{CausalDataset, Mode};
use crate::density::ConditionalDensity;
use crate::discrete::{decode_one_hot, DiscreteMlSystem};
use crate::error::{Error, Result};
use crate::exec;
use crate::learner::{learn, LearnConfig, Labeler, MacroModel, MacroVariable, MacroTables, Provenance};
use crate::linalg::sq_dist;
use crate::neuro::NeuroSimulator;
use crate::partition::{partition_from_equivalence, Partition};

pub const DEFAULT_MERGE_TOL: f64 = 0.05;
pub const DEFAULT_MIN_SAMPLES: usize = 200;

/// Candidates scored per cell when searching for medoids.
const MEDOID_CANDIDATES: usize = 256;
/// Members each candidate is compared against.
const MEDOID_SUPPORT: usize = 2048;

/// Macro-variables learned from observational data, with one medoid sample
/// per cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationalModel {
    pub model: MacroModel,
    pub cause_representatives: Vec<usize>,
    pub effect_representatives: Vec<usize>,
}

/// A micro-value chosen to stand for an observational cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedPoint {
    pub cell: usize,
    /// Index of the observational sample it was taken from.
    pub sample: usize,
    pub value: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub per_cell: usize,
    /// Causes to manipulate, grouped by observational cause cell.
    pub interventions: Vec<PlannedPoint>,
    /// Effect representatives, grouped by observational effect cell.
    pub probes: Vec<PlannedPoint>,
}

impl ExperimentPlan {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergeConfig {
    /// Sup-norm tolerance on response profiles over observational cells.
    pub tol: f64,
    /// Fewest result samples accepted per intervention.
    pub min_samples: usize,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig {
            tol: DEFAULT_MERGE_TOL,
            min_samples: DEFAULT_MIN_SAMPLES,
        }
    }
}

/// Runs the learner on observational data, so the density stands for
/// `P(J | I)` rather than `P(J | man(I))`.
pub fn learn_observational(data: &CausalDataset, density: &dyn ConditionalDensity, cfg: &LearnConfig) -> Result<ObservationalModel> {
    if data.mode() != Mode::Observational {
        return Err(Error::invalid("observational data required"));
    }
    let mut model = learn(data, density, cfg)?.model;
    model.provenance.mode = Some(Mode::Observational);
    let cause_representatives = medoids(&model.cause, data.causes(), 1)?.into_iter().map(|c| c[0]).collect();
    let effect_representatives = medoids(&model.effect, data.effects(), 1)?.into_iter().map(|c| c[0]).collect();
    Ok(ObservationalModel {
        model,
        cause_representatives,
        effect_representatives,
    })
}

/// Up to `count` samples per cell, most central first in the embedding.
/// Samples repeating an already chosen micro-value are skipped.
fn medoids(var: &MacroVariable, rows: &[f32], count: usize) -> Result<Vec<Vec<usize>>> {
    let width = var.embedding.input_dim();
    let (z, dim) = var.embedding.apply_rows(rows)?;
    let point = |s: usize| &z[s * dim..(s + 1) * dim];
    let raw = |s: usize| &rows[s * width..(s + 1) * width];
    let cells = var.partition.cells();
    let picks = exec::map_slice(&cells, |members| {
        let spread = |limit: usize| -> Vec<usize> {
            let step = members.len().div_ceil(limit).max(1);
            members.iter().step_by(step).copied().collect()
        };
        let support = spread(MEDOID_SUPPORT);
        let mut scored: Vec<(f64, usize)> = spread(MEDOID_CANDIDATES)
            .into_iter()
            .map(|c| (support.iter().map(|&s| sq_dist(point(c), point(s)).sqrt()).sum(), c))
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut chosen: Vec<usize> = Vec::new();
        for (_, c) in scored {
            if chosen.len() == count {
                break;
            }
            if chosen.iter().all(|&p| raw(p) != raw(c)) {
                chosen.push(c);
            }
        }
        chosen
    });
    Ok(picks)
}

/// Picks `per_cell` medoids of every observational cell on both sides.
pub fn plan_experiments(obs: &ObservationalModel, data: &CausalDataset, per_cell: usize) -> Result<ExperimentPlan> {
    if per_cell == 0 {
        return Err(Error::invalid("per_cell must be at least 1"));
    }
    if obs.model.cause.partition.size() != data.len() {
        return Err(Error::DimensionMismatch {
            expected: obs.model.cause.partition.size(),
            got: data.len(),
        });
    }
    let points = |var: &MacroVariable, rows: &[f32], width: usize| -> Result<Vec<PlannedPoint>> {
        let mut out = Vec::new();
        for (cell, picks) in medoids(var, rows, per_cell)?.into_iter().enumerate() {
            if picks.is_empty() {
                log::warn!("observational cell {cell} is empty; no representative");
            }
            out.extend(picks.into_iter().map(|s| PlannedPoint {
                cell,
                sample: s,
                value: rows[s * width..(s + 1) * width].to_vec(),
            }));
        }
        Ok(out)
    };
    Ok(ExperimentPlan {
        per_cell,
        interventions: points(&obs.model.cause, data.causes(), data.d_i())?,
        probes: points(&obs.model.effect, data.effects(), data.d_j())?,
    })
}

/// Something that can manipulate the cause and report effects.
pub trait ExperimentRunner: Sync {
    /// Flattened effects of `n` trials with the cause set to `value`.
    fn run(&self, value: &[f32], n: usize, seed: u64) -> Result<Vec<f32>>;

    fn effect_dim(&self) -> usize;

    /// Whether [`run`](Self::run) may be called from several threads at once.
    fn parallel_safe(&self) -> bool {
        false
    }
}

impl ExperimentRunner for DiscreteMlSystem {
    fn run(&self, value: &[f32], n: usize, seed: u64) -> Result<Vec<f32>> {
        if value.len() != self.card_i() {
            return Err(Error::DimensionMismatch {
                expected: self.card_i(),
                got: value.len(),
            });
        }
        let i = decode_one_hot(value);
        let pairs = self.sample_values(n, Mode::Experimental, Some(&[i]), seed)?;
        let mut out = vec![0.0; n * self.card_j()];
        for (s, &(_, j)) in pairs.iter().enumerate() {
            out[s * self.card_j() + j] = 1.0;
        }
        Ok(out)
    }

    fn effect_dim(&self) -> usize {
        self.card_j()
    }

    fn parallel_safe(&self) -> bool {
        true
    }
}

impl ExperimentRunner for NeuroSimulator {
    fn run(&self, value: &[f32], n: usize, seed: u64) -> Result<Vec<f32>> {
        let side = self.stimulus_config().side;
        if value.len() != side * side {
            return Err(Error::DimensionMismatch {
                expected: side * side,
                got: value.len(),
            });
        }
        Ok((0..n)
            .flat_map(|t| self.simulate_pixels(value, exec::split_seed(seed, t as u64)).activity)
            .collect())
    }

    fn effect_dim(&self) -> usize {
        self.response_dim()
    }

    fn parallel_safe(&self) -> bool {
        true
    }
}

/// Runs `n` trials of every planned intervention; trial seeds derive from
/// `seed` and the intervention's position in the plan.
pub fn execute_plan(plan: &ExperimentPlan, runner: &dyn ExperimentRunner, n: usize, seed: u64) -> Result<CausalDataset> {
    let d_i = plan
        .interventions
        .first()
        .map(|p| p.value.len())
        .ok_or_else(|| Error::invalid("plan has no interventions"))?;
    let run = |k: usize| runner.run(&plan.interventions[k].value, n, exec::split_seed(seed, k as u64));
    let results: Vec<Result<Vec<f32>>> = if runner.parallel_safe() {
        exec::map_range(plan.interventions.len(), run)
    } else {
        (0..plan.interventions.len()).map(run).collect()
    };
    let mut causes = Vec::with_capacity(plan.interventions.len() * n * d_i);
    let mut effects = Vec::new();
    for (p, r) in plan.interventions.iter().zip(results) {
        effects.extend(r?);
        for _ in 0..n {
            causes.extend_from_slice(&p.value);
        }
    }
    CausalDataset::new(Mode::Experimental, seed, d_i, runner.effect_dim(), causes, effects)
}

fn value_key(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| if *x == 0.0 { 0 } else { x.to_bits() }).collect()
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn remap_labeler(l: &Labeler, map: &[usize]) -> Labeler {
    match l {
        Labeler::Knn { k, dim, points, labels } => Labeler::Knn {
            k: *k,
            dim: *dim,
            points: points.clone(),
            labels: labels.iter().map(|&x| map[x]).collect(),
        },
        Labeler::Table { cells } => Labeler::Table {
            cells: cells.iter().map(|c| c.map(|x| map[x])).collect(),
        },
    }
}

fn merged_variable(var: &MacroVariable, map: &[usize]) -> Result<MacroVariable> {
    Ok(MacroVariable {
        partition: var.partition.merge_cells(map)?,
        embedding: var.embedding.clone(),
        labeler: remap_labeler(&var.labeler, map),
    })
}

/// Merges observational cells using the results of a plan.
///
/// Each intervention's effects are labelled with the observational effect
/// variable. Cause cells merge when their mean response distributions over
/// effect cells agree within `tol` (sup-norm). Effect cells merge when their
/// normalized response profiles across cause cells agree within `tol`. The
/// returned table is estimated from the pooled results.
pub fn merge_by_experiments(obs: &ObservationalModel, plan: &ExperimentPlan, results: &CausalDataset, cfg: &MergeConfig) -> Result<MacroModel> {
    if !(cfg.tol >= 0.0) {
        return Err(Error::invalid("tolerance must be non-negative"));
    }
    let n_ic = obs.model.n_causes();
    let n_jc = obs.model.n_effects();
    let index: HashMap<Vec<u32>, usize> = plan
        .interventions
        .iter()
        .enumerate()
        .map(|(k, p)| (value_key(&p.value), k))
        .collect();
    let mut rows_of: Vec<Vec<usize>> = vec![Vec::new(); plan.interventions.len()];
    for s in 0..results.len() {
        let k = index
            .get(&value_key(results.cause(s)))
            .ok_or_else(|| Error::invalid(format!("result row {s} matches no planned intervention")))?;
        rows_of[*k].push(s);
    }
    if let Some((k, rows)) = rows_of.iter().enumerate().find(|(_, r)| r.len() < cfg.min_samples) {
        return Err(Error::SampleSize(format!(
            "intervention {k} has {} result samples, at least {} required",
            rows.len(),
            cfg.min_samples
        )));
    }
    let effect_rows: Vec<&[f32]> = (0..results.len()).map(|s| results.effect(s)).collect();
    let effect_cells: Vec<usize> = exec::map_slice(&effect_rows, |e| obs.model.effect.label(e))
        .into_iter()
        .collect::<Result<_>>()?;

    // profile[c][l]: mean over the interventions of cause cell c of P(effect cell l).
    let mut profile = vec![vec![0.0; n_jc]; n_ic];
    let mut covered = vec![0usize; n_ic];
    for (p, rows) in plan.interventions.iter().zip(&rows_of) {
        if p.cell >= n_ic {
            return Err(Error::invalid(format!("planned cell {} out of range", p.cell)));
        }
        covered[p.cell] += 1;
        for &s in rows {
            profile[p.cell][effect_cells[s]] += 1.0 / rows.len() as f64;
        }
    }
    for (row, &n) in profile.iter_mut().zip(&covered) {
        row.iter_mut().for_each(|x| *x /= n.max(1) as f64);
    }
    if let Some(c) = covered.iter().position(|&n| n == 0) {
        return Err(Error::invalid(format!("cause cell {c} has no intervention in the plan")));
    }
    let cause_map = partition_from_equivalence(n_ic, |a, b| sup_distance(&profile[a], &profile[b]) <= cfg.tol);

    let columns: Vec<Option<Vec<f64>>> = (0..n_jc)
        .map(|l| {
            let col: Vec<f64> = profile.iter().map(|r| r[l]).collect();
            let s: f64 = col.iter().sum();
            (s > 0.0).then(|| col.iter().map(|x| x / s).collect())
        })
        .collect();
    let effect_map = partition_from_equivalence(n_jc, |a, b| match (&columns[a], &columns[b]) {
        (Some(x), Some(y)) => sup_distance(x, y) <= cfg.tol,
        _ => false,
    });

    let mut result_cause = Vec::with_capacity(results.len());
    let mut result_effect = Vec::with_capacity(results.len());
    for (p, rows) in plan.interventions.iter().zip(&rows_of) {
        for &s in rows {
            result_cause.push(cause_map.label(p.cell));
            result_effect.push(effect_map.label(effect_cells[s]));
        }
    }
    let mut counts = vec![vec![0.0; effect_map.n_cells()]; cause_map.n_cells()];
    for (&c, &e) in result_cause.iter().zip(&result_effect) {
        counts[c][e] += 1.0;
    }
    let table = MacroTables { counts }.effect_profiles();
    Ok(MacroModel {
        cause: merged_variable(&obs.model.cause, cause_map.labels())?,
        effect: merged_variable(&obs.model.effect, effect_map.labels())?,
        table,
        provenance: Provenance {
            mode: Some(Mode::Experimental),
            pre_merge_causes: n_ic,
            pre_merge_effects: n_jc,
            merge_threshold: cfg.tol,
            ..Provenance::default()
        },
    })
}

impl ObservationalModel {
    const REPRESENTATIVES_FILE: &'static str = "representatives.json";

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.model.save(dir)?;
        let path = dir.join(Self::REPRESENTATIVES_FILE);
        let reps = (&self.cause_representatives, &self.effect_representatives);
        fs::write(&path, serde_json::to_vec_pretty(&reps)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let model = MacroModel::load(dir)?;
        let path = dir.join(Self::REPRESENTATIVES_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let (cause_representatives, effect_representatives) = serde_json::from_slice(&bytes)?;
        Ok(ObservationalModel {
            model,
            cause_representatives,
            effect_representatives,
        })
    }
}

/// Partition of the values `0..n` of a one-hot variable, or `None` when the
/// variable does not use a table labeler or some value was never seen.
pub fn value_partition(var: &MacroVariable) -> Option<Partition> {
    match &var.labeler {
        Labeler::Table { cells } => {
            let labels: Option<Vec<usize>> = cells.iter().copied().collect();
            labels.map(|l| Partition::from_labels(&l))
        }
        Labeler::Knn { .. } => None,
    }
}
