use std::collections::HashMap;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::ConditionalDensity;
use crate::dataset::CausalDataset;
use crate::error::{Error, Result};
use crate::rng::seeded;

/// Which samples index the rows and columns of an intervention matrix.
///
/// Exact duplicate micro-vectors share one row (or column) carrying their
/// multiplicity as weight, so a weighted matrix over distinct vectors is
/// equivalent to the full `N × N` matrix. When there are more distinct
/// vectors than `cap`, a seeded subset of them serves as landmarks and the
/// remaining samples are labeled later by the classifiers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixAxes {
    pub row_reps: Vec<usize>,
    pub row_weights: Vec<f64>,
    /// Row index of each sample, `None` for samples outside the landmark set.
    pub row_of_sample: Vec<Option<usize>>,
    pub col_reps: Vec<usize>,
    pub col_weights: Vec<f64>,
    pub col_of_sample: Vec<Option<usize>>,
}

/// Groups identical rows; returns (first sample of each group, group of each sample).
fn group_duplicates(values: &[f32], width: usize, n: usize) -> (Vec<usize>, Vec<usize>) {
    let mut seen: HashMap<Vec<u32>, usize> = HashMap::new();
    let mut reps = Vec::new();
    let mut group = Vec::with_capacity(n);
    for s in 0..n {
        let key: Vec<u32> = values[s * width..(s + 1) * width]
            .iter()
            .map(|v| if *v == 0.0 { 0 } else { v.to_bits() })
            .collect();
        let next = reps.len();
        let g = *seen.entry(key).or_insert(next);
        if g == next {
            reps.push(s);
        }
        group.push(g);
    }
    (reps, group)
}

fn build_axis(values: &[f32], width: usize, n: usize, cap: usize, seed: u64) -> (Vec<usize>, Vec<f64>, Vec<Option<usize>>) {
    let (reps, group) = group_duplicates(values, width, n);
    let chosen: Vec<usize> = if reps.len() > cap {
        let mut rng = seeded(seed);
        let mut idx = sample(&mut rng, reps.len(), cap).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..reps.len()).collect()
    };
    let mut slot = vec![None; reps.len()];
    for (k, &g) in chosen.iter().enumerate() {
        slot[g] = Some(k);
    }
    let mut weights = vec![0.0; chosen.len()];
    let of_sample: Vec<Option<usize>> = group.iter().map(|&g| slot[g]).collect();
    for k in of_sample.iter().flatten() {
        weights[*k] += 1.0;
    }
    (chosen.iter().map(|&g| reps[g]).collect(), weights, of_sample)
}

impl MatrixAxes {
    pub fn build(data: &CausalDataset, cap: usize, seed: u64) -> Result<Self> {
        if cap == 0 {
            return Err(Error::invalid("landmark cap must be positive"));
        }
        let n = data.len();
        let (row_reps, row_weights, row_of_sample) = build_axis(data.causes(), data.d_i(), n, cap, seed);
        let (col_reps, col_weights, col_of_sample) =
            build_axis(data.effects(), data.d_j(), n, cap, seed.wrapping_add(1));
        Ok(MatrixAxes {
            row_reps,
            row_weights,
            row_of_sample,
            col_reps,
            col_weights,
            col_of_sample,
        })
    }

    /// One row and one column per sample, unit weights.
    pub fn full(n: usize) -> Self {
        MatrixAxes {
            row_reps: (0..n).collect(),
            row_weights: vec![1.0; n],
            row_of_sample: (0..n).map(Some).collect(),
            col_reps: (0..n).collect(),
            col_weights: vec![1.0; n],
            col_of_sample: (0..n).map(Some).collect(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.row_reps.len()
    }

    pub fn n_cols(&self) -> usize {
        self.col_reps.len()
    }
}

/// Estimated `P(j_l | man(i_k))` with rows indexed by causes and columns by
/// effects. Row `k` is the micro-level effect signature of `i_k`, column `l`
/// the micro-level cause signature of `j_l`.
#[derive(Clone, Debug, PartialEq)]
pub struct InterventionMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    row_weights: Vec<f64>,
    col_weights: Vec<f64>,
}

impl InterventionMatrix {
    /// Scores every landmark cause against every landmark effect. Each row
    /// leaves its own training sample out of the estimate when the density
    /// was fitted on `data`.
    pub fn compute(density: &dyn ConditionalDensity, data: &CausalDataset, axes: &MatrixAxes) -> Result<Self> {
        if data.d_i() != density.cause_dim() {
            return Err(Error::DimensionMismatch {
                expected: density.cause_dim(),
                got: data.d_i(),
            });
        }
        if data.d_j() != density.effect_dim() {
            return Err(Error::DimensionMismatch {
                expected: density.effect_dim(),
                got: data.d_j(),
            });
        }
        let causes: Vec<&[f32]> = axes.row_reps.iter().map(|&s| data.cause(s)).collect();
        let effects: Vec<&[f32]> = axes.col_reps.iter().map(|&s| data.effect(s)).collect();
        let holdout: Vec<Option<usize>> = axes.row_reps.iter().map(|&s| Some(s)).collect();
        let values = density.score_matrix_holdout(&causes, &effects, &holdout)?;
        Self::new(
            causes.len(),
            effects.len(),
            values,
            axes.row_weights.clone(),
            axes.col_weights.clone(),
        )
    }

    pub fn new(rows: usize, cols: usize, values: Vec<f64>, row_weights: Vec<f64>, col_weights: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols || row_weights.len() != rows || col_weights.len() != cols {
            return Err(Error::invalid("matrix shape and weight lengths disagree"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("matrix entries must be finite and nonnegative"));
        }
        if row_weights.iter().chain(&col_weights).any(|w| !(*w > 0.0)) {
            return Err(Error::invalid("weights must be positive"));
        }
        Ok(InterventionMatrix {
            rows,
            cols,
            values,
            row_weights,
            col_weights,
        })
    }

    /// Unweighted square matrix, as if each row/column were one sample.
    pub fn unweighted(n_rows: usize, n_cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(n_rows, n_cols, values, vec![1.0; n_rows], vec![1.0; n_cols])
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn row_weights(&self) -> &[f64] {
        &self.row_weights
    }

    pub fn col_weights(&self) -> &[f64] {
        &self.col_weights
    }

    /// Rows scaled so that `Σ_l w_l M[k, l] = 1` (all-zero rows become uniform).
    pub fn row_normalized(&self) -> Vec<f64> {
        let total_w: f64 = self.col_weights.iter().sum();
        let mut out = self.values.clone();
        for row in out.chunks_exact_mut(self.cols.max(1)) {
            let s: f64 = row.iter().zip(&self.col_weights).map(|(v, w)| v * w).sum();
            if s > 0.0 {
                row.iter_mut().for_each(|v| *v /= s);
            } else {
                row.iter_mut().for_each(|v| *v = 1.0 / total_w);
            }
        }
        out
    }

    /// Columns scaled so that `Σ_k w_k M[k, l] = 1`, returned transposed
    /// (`cols × rows`).
    pub fn col_normalized(&self) -> Vec<f64> {
        let total_w: f64 = self.row_weights.iter().sum();
        let mut out = vec![0.0; self.rows * self.cols];
        for c in 0..self.cols {
            let s: f64 = (0..self.rows).map(|r| self.get(r, c) * self.row_weights[r]).sum();
            for r in 0..self.rows {
                out[c * self.rows + r] = if s > 0.0 { self.get(r, c) / s } else { 1.0 / total_w };
            }
        }
        out
    }

    /// Row-normalized rows with column `l` scaled by `sqrt(w_l)`, so that
    /// Euclidean distances equal those between the expanded per-sample rows.
    pub fn row_features(&self) -> Vec<f64> {
        let sw: Vec<f64> = self.col_weights.iter().map(|w| w.sqrt()).collect();
        let mut out = self.row_normalized();
        for row in out.chunks_exact_mut(self.cols.max(1)) {
            row.iter_mut().zip(&sw).for_each(|(v, s)| *v *= s);
        }
        out
    }

    /// Column analogue of [`row_features`](Self::row_features), `cols × rows`.
    pub fn col_features(&self) -> Vec<f64> {
        let sw: Vec<f64> = self.row_weights.iter().map(|w| w.sqrt()).collect();
        let mut out = self.col_normalized();
        for col in out.chunks_exact_mut(self.rows.max(1)) {
            col.iter_mut().zip(&sw).for_each(|(v, s)| *v *= s);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Mode;
    use crate::discrete::DiscreteMlSystem;

    #[test]
    fn single_sample_normalizes_to_one() {
        let m = InterventionMatrix::unweighted(1, 1, vec![0.37]).unwrap();
        assert_eq!(m.row_normalized(), vec![1.0]);
        assert_eq!(m.col_normalized(), vec![1.0]);
    }

    #[test]
    fn zero_rows_become_uniform() {
        let m = InterventionMatrix::unweighted(2, 2, vec![0.0, 0.0, 1.0, 3.0]).unwrap();
        assert_eq!(m.row_normalized(), vec![0.5, 0.5, 0.25, 0.75]);
    }

    #[test]
    fn weighted_features_match_expanded_matrix() {
        // Column 1 stands for two identical samples.
        let m = InterventionMatrix::new(2, 2, vec![1.0, 2.0, 3.0, 1.0], vec![1.0, 1.0], vec![1.0, 2.0]).unwrap();
        let full = InterventionMatrix::unweighted(2, 3, vec![1.0, 2.0, 2.0, 3.0, 1.0, 1.0]).unwrap();
        let f = m.row_features();
        let g = full.row_features();
        let d_w = crate::linalg::sq_dist(&f[0..2], &f[2..4]);
        let d_full = crate::linalg::sq_dist(&g[0..3], &g[3..6]);
        assert!((d_w - d_full).abs() < 1e-12);
    }

    #[test]
    fn axes_deduplicate_and_cap() {
        let sys = DiscreteMlSystem::random(3, 5, 2, 1).unwrap();
        let data = sys.sample(600, Mode::Experimental, Some(&[0, 1, 2]), 2).unwrap();
        let axes = MatrixAxes::build(&data, 100, 0).unwrap();
        assert_eq!(axes.n_rows(), 3);
        assert_eq!(axes.row_weights.iter().sum::<f64>(), 600.0);
        assert!(axes.row_of_sample.iter().all(|r| r.is_some()));
        let capped = MatrixAxes::build(&data, 2, 0).unwrap();
        assert_eq!(capped.n_rows(), 2);
        assert!(capped.row_of_sample.iter().any(|r| r.is_none()));
    }

    #[test]
    fn exact_two_cause_system_gives_two_distinct_rows() {
        let alpha = vec![vec![vec![0.2, 0.2, 0.7]], vec![vec![0.8, 0.8, 0.3]]];
        let sys = DiscreteMlSystem::new(alpha, vec![vec![0.3], vec![0.3], vec![0.4]], vec![1.0]).unwrap();
        let data = sys.sample(300, Mode::Experimental, Some(&[0, 1, 2]), 4).unwrap();
        let dens = sys.oracle_density(Mode::Experimental);
        let axes = MatrixAxes::build(&data, 1000, 0).unwrap();
        let m = InterventionMatrix::compute(&dens, &data, &axes).unwrap();
        let rows = m.row_normalized();
        let cols = m.n_cols();
        let mut distinct: Vec<&[f64]> = Vec::new();
        for r in rows.chunks_exact(cols) {
            if !distinct.contains(&r) {
                distinct.push(r);
            }
        }
        assert_eq!(distinct.len(), 2);
    }
}
