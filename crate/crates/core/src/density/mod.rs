//! Conditional density estimation and the intervention matrix.

mod kde;
mod matrix;
pub mod pca;

pub use kde::{DensityConfig, DensityModel};
pub use matrix::{InterventionMatrix, MatrixAxes};
pub use pca::Reducer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coordinates in which micro-vectors are compared by the classifiers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Embedding {
    Identity { dim: usize },
    Linear { reducer: Reducer },
}

impl Embedding {
    pub fn input_dim(&self) -> usize {
        match self {
            Embedding::Identity { dim } => *dim,
            Embedding::Linear { reducer } => reducer.input_dim(),
        }
    }

    pub fn apply(&self, x: &[f32]) -> Result<Vec<f64>> {
        match self {
            Embedding::Identity { dim } => {
                if x.len() != *dim {
                    return Err(Error::DimensionMismatch {
                        expected: *dim,
                        got: x.len(),
                    });
                }
                Ok(x.iter().map(|&v| v as f64).collect())
            }
            Embedding::Linear { reducer } => reducer.project(x),
        }
    }

    /// Embeds every row of `data`; returns `n × out_dim` row-major and `out_dim`.
    pub fn apply_rows(&self, data: &[f32]) -> Result<(Vec<f64>, usize)> {
        match self {
            Embedding::Identity { dim } => Ok((data.iter().map(|&v| v as f64).collect(), *dim)),
            Embedding::Linear { reducer } => Ok((reducer.project_rows(data)?, reducer.dim())),
        }
    }
}

/// Weighted assignment of the entries of one matrix axis to groups.
#[derive(Clone, Copy, Debug)]
pub struct AxisGroups<'a> {
    pub weights: &'a [f64],
    pub groups: &'a [usize],
    pub n_groups: usize,
}

impl AxisGroups<'_> {
    fn check(&self, len: usize) -> Result<()> {
        if self.weights.len() != len || self.groups.len() != len {
            return Err(crate::error::Error::invalid("one weight and group per axis entry required"));
        }
        if self.groups.iter().any(|&g| g >= self.n_groups) {
            return Err(crate::error::Error::invalid("group index out of range"));
        }
        Ok(())
    }
}

const GROUP_CHUNK: usize = 64;

/// A (possibly unnormalized) estimate of `P(j | man(i))` over micro-vectors.
///
/// Scores only need to be comparable across `j` for a fixed `i`.
pub trait ConditionalDensity: Sync {
    fn cause_dim(&self) -> usize;
    fn effect_dim(&self) -> usize;

    fn cause_embedding(&self) -> Embedding;
    fn effect_embedding(&self) -> Embedding;

    fn score(&self, i: &[f32], j: &[f32]) -> Result<f64>;

    /// Scores for every (cause, effect) pair, row-major `causes.len() × effects.len()`.
    fn score_matrix(&self, causes: &[&[f32]], effects: &[&[f32]]) -> Result<Vec<f64>> {
        let cols = effects.len();
        let rows: Vec<Result<Vec<f64>>> = crate::exec::map_slice(causes, |i| {
            effects.iter().map(|j| self.score(i, j)).collect()
        });
        let mut out = Vec::with_capacity(causes.len() * cols);
        for r in rows {
            out.extend(r?);
        }
        Ok(out)
    }

    /// Like [`score_matrix`](Self::score_matrix), but row `r` may leave out
    /// training sample `holdout[r]` when `causes[r]` is that sample, so a
    /// training point's own effect does not dominate its estimated row.
    /// Estimators without per-sample structure ignore `holdout`.
    fn score_matrix_holdout(&self, causes: &[&[f32]], effects: &[&[f32]], holdout: &[Option<usize>]) -> Result<Vec<f64>> {
        let _ = holdout;
        self.score_matrix(causes, effects)
    }

    /// Score sums over groups of effects: entry `(r, g)` of the
    /// `causes.len() × n_groups` result is `Σ w_l score(causes[r], effects[l])`
    /// over effects `l` in group `g`, with the holdout rule of
    /// [`score_matrix_holdout`](Self::score_matrix_holdout).
    fn effect_group_scores(
        &self,
        causes: &[&[f32]],
        holdout: &[Option<usize>],
        effects: &[&[f32]],
        groups: AxisGroups<'_>,
    ) -> Result<Vec<f64>> {
        groups.check(effects.len())?;
        let g_n = groups.n_groups;
        let mut out = vec![0.0; causes.len() * g_n];
        for (c, chunk) in causes.chunks(GROUP_CHUNK).enumerate() {
            let start = c * GROUP_CHUNK;
            let m = self.score_matrix_holdout(chunk, effects, &holdout[start..start + chunk.len()])?;
            for (r, row) in m.chunks_exact(effects.len().max(1)).enumerate() {
                let acc = &mut out[(start + r) * g_n..(start + r + 1) * g_n];
                for (l, v) in row.iter().enumerate() {
                    acc[groups.groups[l]] += groups.weights[l] * v;
                }
            }
        }
        Ok(out)
    }

    /// Score sums over groups of causes: entry `(l, g)` of the
    /// `effects.len() × n_groups` result is `Σ w_r score(causes[r], effects[l])`
    /// over causes `r` in group `g`, each cause row using its holdout.
    fn cause_group_scores(
        &self,
        causes: &[&[f32]],
        holdout: &[Option<usize>],
        groups: AxisGroups<'_>,
        effects: &[&[f32]],
    ) -> Result<Vec<f64>> {
        groups.check(causes.len())?;
        let g_n = groups.n_groups;
        let cols = effects.len();
        let mut out = vec![0.0; cols * g_n];
        for (c, chunk) in causes.chunks(GROUP_CHUNK).enumerate() {
            let start = c * GROUP_CHUNK;
            let m = self.score_matrix_holdout(chunk, effects, &holdout[start..start + chunk.len()])?;
            for (r, row) in m.chunks_exact(cols.max(1)).enumerate() {
                let (g, w) = (groups.groups[start + r], groups.weights[start + r]);
                for (l, v) in row.iter().enumerate() {
                    out[l * g_n + g] += w * v;
                }
            }
        }
        Ok(out)
    }
}
