//! Labelers that extend a partition of training samples to new micro-points.

use serde::{Deserialize, Serialize};

use crate::density::Embedding;
use crate::discrete::decode_one_hot;
use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::sq_dist;
use crate::partition::Partition;

pub const DEFAULT_KNN_K: usize = 5;

/// Total function from an embedded micro-point to a cell index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Labeler {
    /// Majority vote of the `k` nearest training points (Euclidean).
    Knn {
        k: usize,
        dim: usize,
        /// Training points, `labels.len() × dim`; persisted separately.
        #[serde(skip)]
        points: Vec<f64>,
        labels: Vec<usize>,
    },
    /// One-hot micro-vectors: cell of each value index (`None` if unseen).
    Table { cells: Vec<Option<usize>> },
}

/// Labels of the `k` nearest points, nearest first; ties broken by index.
fn neighbors(points: &[f64], dim: usize, z: &[f64], k: usize) -> Vec<usize> {
    let n = points.len().checked_div(dim).unwrap_or(0);
    let mut d: Vec<(f64, usize)> = (0..n)
        .map(|m| (sq_dist(z, &points[m * dim..(m + 1) * dim]), m))
        .collect();
    let k = k.min(n);
    if k == 0 {
        return Vec::new();
    }
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < n {
        d.select_nth_unstable_by(k - 1, cmp);
        d.truncate(k);
    }
    d.sort_by(cmp);
    d.into_iter().map(|(_, m)| m).collect()
}

/// Majority label among the `k` nearest training points; a tie goes to the
/// label whose member appears first in nearest-first order.
pub fn knn_vote(points: &[f64], dim: usize, labels: &[usize], z: &[f64], k: usize) -> Option<usize> {
    if dim == 0 {
        // Every point is at distance zero; vote over the first k.
        return majority(labels.iter().take(k.max(1)).copied());
    }
    majority(neighbors(points, dim, z, k).into_iter().map(|m| labels[m]))
}

fn majority(ordered: impl Iterator<Item = usize>) -> Option<usize> {
    let mut tally: Vec<(usize, usize)> = Vec::new();
    for l in ordered {
        match tally.iter_mut().find(|(x, _)| *x == l) {
            Some(t) => t.1 += 1,
            None => tally.push((l, 1)),
        }
    }
    let best = tally.iter().map(|t| t.1).max()?;
    tally.into_iter().find(|t| t.1 == best).map(|t| t.0)
}

impl Labeler {
    pub fn label_embedded(&self, z: &[f64]) -> Result<usize> {
        self.label_embedded_with_k(z, None)
    }

    fn label_embedded_with_k(&self, z: &[f64], k_override: Option<usize>) -> Result<usize> {
        match self {
            Labeler::Knn { k, dim, points, labels } => {
                if z.len() != *dim {
                    return Err(Error::DimensionMismatch {
                        expected: *dim,
                        got: z.len(),
                    });
                }
                knn_vote(points, *dim, labels, z, k_override.unwrap_or(*k))
                    .ok_or_else(|| Error::invalid("labeler has no training points"))
            }
            Labeler::Table { cells } => {
                if z.len() != cells.len() {
                    return Err(Error::DimensionMismatch {
                        expected: cells.len(),
                        got: z.len(),
                    });
                }
                let v: Vec<f32> = z.iter().map(|&x| x as f32).collect();
                let idx = decode_one_hot(&v);
                cells[idx].ok_or_else(|| Error::invalid(format!("value {idx} was not seen in training")))
            }
        }
    }
}

/// A macro-variable: a partition of the training samples together with a
/// labeler extending it to arbitrary micro-points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroVariable {
    pub partition: Partition,
    pub embedding: Embedding,
    pub labeler: Labeler,
}

impl MacroVariable {
    pub fn n_cells(&self) -> usize {
        self.partition.n_cells()
    }

    pub fn label(&self, x: &[f32]) -> Result<usize> {
        let z = self.embedding.apply(x)?;
        self.labeler.label_embedded(&z)
    }

    /// Labels with an explicit neighbor count (ignored by table labelers).
    pub fn label_with_k(&self, x: &[f32], k: usize) -> Result<usize> {
        let z = self.embedding.apply(x)?;
        self.labeler.label_embedded_with_k(&z, Some(k))
    }

    /// Labels each `width`-sized row of `data`.
    pub fn label_rows(&self, data: &[f32]) -> Result<Vec<usize>> {
        let width = self.embedding.input_dim();
        if width == 0 || !data.len().is_multiple_of(width) {
            return Err(Error::DimensionMismatch {
                expected: width,
                got: data.len() % width.max(1),
            });
        }
        let rows: Vec<&[f32]> = data.chunks_exact(width).collect();
        exec::map_slice(&rows, |r| self.label(r)).into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn knn(k: usize) -> Labeler {
        Labeler::Knn {
            k,
            dim: 1,
            points: vec![0.0, 0.1, 0.2, 5.0, 5.1],
            labels: vec![0, 0, 0, 1, 1],
        }
    }

    #[test]
    fn knn_votes() {
        assert_eq!(knn(3).label_embedded(&[4.9]).unwrap(), 1);
        assert_eq!(knn(5).label_embedded(&[4.9]).unwrap(), 0);
        assert_eq!(knn(1).label_embedded(&[0.2]).unwrap(), 0);
        assert!(knn(1).label_embedded(&[0.2, 0.0]).is_err());
    }

    #[test]
    fn knn_tie_goes_to_nearest() {
        let l = Labeler::Knn {
            k: 2,
            dim: 1,
            points: vec![0.0, 1.0],
            labels: vec![3, 4],
        };
        assert_eq!(l.label_embedded(&[0.9]).unwrap(), 4);
    }

    #[test]
    fn table_labeler() {
        let l = Labeler::Table {
            cells: vec![Some(1), None, Some(0)],
        };
        assert_eq!(l.label_embedded(&[0.0, 0.0, 1.0]).unwrap(), 0);
        assert!(l.label_embedded(&[0.0, 1.0, 0.0]).is_err());
    }
}
