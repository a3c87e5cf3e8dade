//! Macro-variable learning from an intervention matrix.
//!
//! Rows of the matrix (micro-level effect signatures of causes) and columns
//! (micro-level cause signatures of effects) are over-clustered with
//! k-means, the clusters are merged by similarity of their macro-level
//! probability profiles, and classifiers extend the resulting partitions to
//! unseen micro-points.

mod classify;
mod kmeans;
mod merge;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use classify::{knn_vote, Labeler, MacroVariable, DEFAULT_KNN_K};
pub use kmeans::{absorb_small_clusters, kmeans, KMeansFit};
pub use merge::{
    merge_clusters, merge_report, symmetric_kl, MacroTables, MergeOutcome, MergeReport, MergeStep, Side,
    DEFAULT_MERGE_THRESHOLD, KL_SMOOTHING,
};

use crate::dataset::{CausalDataset, Mode};
use crate::density::{AxisGroups, ConditionalDensity, InterventionMatrix, MatrixAxes};
use crate::discrete::decode_one_hot;
use crate::error::{Error, Result};
use crate::partition::Partition;

pub const DEFAULT_MIN_CLUSTER_FRACTION: f64 = 0.01;

/// How trained macro-variables label new micro-points.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelerKind {
    Knn,
    /// Lookup by one-hot value index (discrete data).
    OneHot,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnConfig {
    /// Number of k-means clusters; should exceed the true cell count.
    pub k_max: usize,
    pub restarts: usize,
    /// Row or column clusters holding less than this share of the total
    /// weight are dissolved into their nearest neighbor cluster.
    pub min_cluster_fraction: f64,
    pub merge_threshold: f64,
    /// Maximum distinct causes (rows) and effects (columns) in the matrix.
    pub landmark_cap: usize,
    pub knn_k: usize,
    pub labeler: LabelerKind,
    pub seed: u64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            k_max: 16,
            restarts: 10,
            min_cluster_fraction: DEFAULT_MIN_CLUSTER_FRACTION,
            merge_threshold: DEFAULT_MERGE_THRESHOLD,
            landmark_cap: 2000,
            knn_k: DEFAULT_KNN_K,
            labeler: LabelerKind::Knn,
            seed: 0,
        }
    }
}

impl LearnConfig {
    /// Settings for exact categorical densities on one-hot data: clusters are
    /// never dissolved for being small and only numerically identical
    /// profiles merge, since the matrix carries no estimation noise.
    pub fn exact_density() -> Self {
        LearnConfig {
            labeler: LabelerKind::OneHot,
            min_cluster_fraction: 0.0,
            merge_threshold: EXACT_MERGE_THRESHOLD,
            ..LearnConfig::default()
        }
    }
}

/// Merge threshold of [`LearnConfig::exact_density`].
pub const EXACT_MERGE_THRESHOLD: f64 = 1e-9;

/// Clustering and merging diagnostics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub mode: Option<Mode>,
    pub matrix_rows: usize,
    pub matrix_cols: usize,
    pub pre_merge_causes: usize,
    pub pre_merge_effects: usize,
    pub merge_threshold: f64,
    pub merge_log: Vec<MergeStep>,
    pub dropped_cause_classes: usize,
    pub dropped_effect_classes: usize,
}

/// Learned cause and effect macro-variables with `P(E | do(C))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroModel {
    pub cause: MacroVariable,
    pub effect: MacroVariable,
    /// `table[c][e]`; rows sum to one.
    pub table: Vec<Vec<f64>>,
    pub provenance: Provenance,
}

/// Everything produced by [`learn`], including intermediate results used by
/// reports.
#[derive(Clone, Debug)]
pub struct LearnOutput {
    pub model: MacroModel,
    pub axes: MatrixAxes,
    pub matrix: InterventionMatrix,
    pub pre_merge_cause: Vec<usize>,
    pub pre_merge_effect: Vec<usize>,
    pub pre_merge_tables: MacroTables,
}

/// k-means on row-normalized rows and, separately, on column-normalized
/// columns, followed by [`absorb_small_clusters`]. Returns partitions of the
/// rows and of the columns.
pub fn cluster_rows_cols(
    m: &InterventionMatrix,
    k_max: usize,
    restarts: usize,
    min_fraction: f64,
    seed: u64,
) -> Result<(Partition, Partition)> {
    let side = |features: Vec<f64>, dim: usize, weights: &[f64], seed: u64| -> Result<Partition> {
        let fit = kmeans(&features, dim, weights, k_max, restarts, seed)?;
        Ok(absorb_small_clusters(&features, dim, weights, &fit.partition, min_fraction))
    };
    let rows = side(m.row_features(), m.n_cols(), m.row_weights(), seed)?;
    let cols = side(m.col_features(), m.n_rows(), m.col_weights(), seed.wrapping_add(1))?;
    Ok((rows, cols))
}

/// Normalizes `v` to sum one in place; an all-zero vector becomes uniform.
fn normalize(v: &mut [f64]) {
    let total: f64 = v.iter().sum();
    if total > 0.0 {
        v.iter_mut().for_each(|x| *x /= total);
    } else if !v.is_empty() {
        let u = 1.0 / v.len() as f64;
        v.iter_mut().for_each(|x| *x = u);
    }
}

/// Group signatures of the matrix rows (`transpose = false`) or columns:
/// the share of each entry's weighted score mass falling in each group of
/// the opposite axis. Returns `entries × n_groups`, row-major.
fn matrix_signatures(m: &InterventionMatrix, opposite: &Partition, transpose: bool) -> Vec<f64> {
    let g_n = opposite.n_cells();
    let (entries, across) = if transpose { (m.n_cols(), m.n_rows()) } else { (m.n_rows(), m.n_cols()) };
    let w = if transpose { m.row_weights() } else { m.col_weights() };
    let mut out = vec![0.0; entries * g_n];
    for (e, sig) in out.chunks_exact_mut(g_n.max(1)).enumerate() {
        for a in 0..across {
            let v = if transpose { m.get(a, e) } else { m.get(e, a) };
            sig[opposite.label(a)] += w[a] * v;
        }
        normalize(sig);
    }
    out
}

/// Weighted mean signature of each cluster.
fn centroids(sigs: &[f64], dim: usize, weights: &[f64], clusters: &Partition) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; clusters.n_cells()];
    let mut mass = vec![0.0; clusters.n_cells()];
    for (e, &w) in weights.iter().enumerate() {
        let c = clusters.label(e);
        mass[c] += w;
        crate::linalg::axpy(w, &sigs[e * dim..(e + 1) * dim], &mut sums[c]);
    }
    for (s, m) in sums.iter_mut().zip(&mass) {
        if *m > 0.0 {
            s.iter_mut().for_each(|x| *x /= m);
        }
    }
    sums
}

fn nearest_centroid(sig: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = crate::linalg::sq_dist(sig, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

/// Per-sample cause and effect cluster labels. Samples on the matrix axes
/// take their row (column) cluster. Any other cause is scored against the
/// landmark effects, its score mass summed per column cluster, and it joins
/// the row cluster with the nearest mean signature; effects likewise.
fn extend_labels(
    data: &CausalDataset,
    density: &dyn ConditionalDensity,
    axes: &MatrixAxes,
    m: &InterventionMatrix,
    rows: &Partition,
    cols: &Partition,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = data.len();
    let cause_out: Vec<usize> = (0..n).filter(|&s| axes.row_of_sample[s].is_none()).collect();
    let effect_out: Vec<usize> = (0..n).filter(|&s| axes.col_of_sample[s].is_none()).collect();
    let landmark_causes: Vec<&[f32]> = axes.row_reps.iter().map(|&s| data.cause(s)).collect();
    let landmark_effects: Vec<&[f32]> = axes.col_reps.iter().map(|&s| data.effect(s)).collect();

    let mut cause_labels: Vec<usize> = axes.row_of_sample.iter().map(|a| a.map_or(0, |r| rows.label(r))).collect();
    if !cause_out.is_empty() {
        let g_n = cols.n_cells();
        let centers = centroids(&matrix_signatures(m, cols, false), g_n, m.row_weights(), rows);
        let causes: Vec<&[f32]> = cause_out.iter().map(|&s| data.cause(s)).collect();
        let holdout: Vec<Option<usize>> = cause_out.iter().map(|&s| Some(s)).collect();
        let groups = AxisGroups {
            weights: m.col_weights(),
            groups: cols.labels(),
            n_groups: g_n,
        };
        let mut sigs = density.effect_group_scores(&causes, &holdout, &landmark_effects, groups)?;
        for (k, sig) in sigs.chunks_exact_mut(g_n).enumerate() {
            normalize(sig);
            cause_labels[cause_out[k]] = nearest_centroid(sig, &centers);
        }
    }

    let mut effect_labels: Vec<usize> = axes.col_of_sample.iter().map(|a| a.map_or(0, |c| cols.label(c))).collect();
    if !effect_out.is_empty() {
        let g_n = rows.n_cells();
        let centers = centroids(&matrix_signatures(m, rows, true), g_n, m.col_weights(), cols);
        let effects: Vec<&[f32]> = effect_out.iter().map(|&s| data.effect(s)).collect();
        let holdout: Vec<Option<usize>> = axes.row_reps.iter().map(|&s| Some(s)).collect();
        let groups = AxisGroups {
            weights: m.row_weights(),
            groups: rows.labels(),
            n_groups: g_n,
        };
        let mut sigs = density.cause_group_scores(&landmark_causes, &holdout, groups, &effects)?;
        for (k, sig) in sigs.chunks_exact_mut(g_n).enumerate() {
            normalize(sig);
            effect_labels[effect_out[k]] = nearest_centroid(sig, &centers);
        }
    }
    Ok((cause_labels, effect_labels))
}

/// Samples of classes with fewer than two members are reassigned to their
/// nearest-neighbor class among the rest. Returns canonical labels and the
/// number of dropped classes.
fn drop_small_classes(labels: &[usize], emb: &[f64], dim: usize, k: usize) -> Result<(Vec<usize>, usize)> {
    let p = Partition::from_labels(labels);
    let sizes = p.cell_sizes();
    let small: Vec<bool> = sizes.iter().map(|&s| s < 2).collect();
    let dropped = small.iter().filter(|&&s| s).count();
    if dropped == 0 {
        return Ok((p.labels().to_vec(), 0));
    }
    if dropped == sizes.len() {
        return Err(Error::SampleSize("every class has fewer than two samples".into()));
    }
    log::warn!("dropping {dropped} class(es) with fewer than two samples");
    let keep: Vec<usize> = (0..labels.len()).filter(|&s| !small[p.label(s)]).collect();
    let points: Vec<f64> = keep.iter().flat_map(|&s| emb[s * dim..(s + 1) * dim].iter().copied()).collect();
    let kept_labels: Vec<usize> = keep.iter().map(|&s| p.label(s)).collect();
    let relabeled: Vec<usize> = (0..labels.len())
        .map(|s| {
            if small[p.label(s)] {
                knn_vote(&points, dim, &kept_labels, &emb[s * dim..(s + 1) * dim], k).expect("non-empty")
            } else {
                p.label(s)
            }
        })
        .collect();
    Ok((Partition::from_labels(&relabeled).labels().to_vec(), dropped))
}

fn build_labeler(kind: LabelerKind, k: usize, data: &[f32], width: usize, emb: Vec<f64>, dim: usize, labels: &[usize]) -> Result<Labeler> {
    match kind {
        LabelerKind::Knn => Ok(Labeler::Knn {
            k,
            dim,
            points: emb,
            labels: labels.to_vec(),
        }),
        LabelerKind::OneHot => {
            let mut cells: Vec<Option<usize>> = vec![None; width];
            for (row, &l) in data.chunks_exact(width).zip(labels) {
                let v = decode_one_hot(row);
                match cells[v] {
                    Some(prev) if prev != l => {
                        return Err(Error::invalid(format!("value {v} carries two labels")));
                    }
                    _ => cells[v] = Some(l),
                }
            }
            Ok(Labeler::Table { cells })
        }
    }
}

fn table_from_labels(cause: &[usize], effect: &[usize]) -> Result<Vec<Vec<f64>>> {
    Ok(MacroTables::from_labels(cause, effect)?.effect_profiles())
}

/// Builds the macro-variables and `P(E | do(C))` from final per-sample labels.
pub fn train_classifiers(
    data: &CausalDataset,
    density: &dyn ConditionalDensity,
    labels_c: &[usize],
    labels_e: &[usize],
    cfg: &LearnConfig,
) -> Result<MacroModel> {
    let n = data.len();
    if labels_c.len() != n || labels_e.len() != n {
        return Err(Error::invalid("one label per sample required"));
    }
    if n == 0 {
        return Err(Error::SampleSize("no samples".into()));
    }
    let cause_emb = density.cause_embedding();
    let effect_emb = density.effect_embedding();
    let (zc, dc) = cause_emb.apply_rows(data.causes())?;
    let (ze, de) = effect_emb.apply_rows(data.effects())?;
    let (lc, dropped_c) = if n >= 2 { drop_small_classes(labels_c, &zc, dc, cfg.knn_k)? } else { (vec![0], 0) };
    let (le, dropped_e) = if n >= 2 { drop_small_classes(labels_e, &ze, de, cfg.knn_k)? } else { (vec![0], 0) };
    let table = table_from_labels(&lc, &le)?;
    let cause = MacroVariable {
        partition: Partition::from_labels(&lc),
        labeler: build_labeler(cfg.labeler, cfg.knn_k, data.causes(), data.d_i(), zc, dc, &lc)?,
        embedding: cause_emb,
    };
    let effect = MacroVariable {
        partition: Partition::from_labels(&le),
        labeler: build_labeler(cfg.labeler, cfg.knn_k, data.effects(), data.d_j(), ze, de, &le)?,
        embedding: effect_emb,
    };
    Ok(MacroModel {
        cause,
        effect,
        table,
        provenance: Provenance {
            mode: Some(data.mode()),
            dropped_cause_classes: dropped_c,
            dropped_effect_classes: dropped_e,
            ..Provenance::default()
        },
    })
}

/// Runs the full learning procedure on `data` with the given density.
pub fn learn(data: &CausalDataset, density: &dyn ConditionalDensity, cfg: &LearnConfig) -> Result<LearnOutput> {
    if data.is_empty() {
        return Err(Error::SampleSize("no samples".into()));
    }
    let axes = MatrixAxes::build(data, cfg.landmark_cap, cfg.seed)?;
    let matrix = InterventionMatrix::compute(density, data, &axes)?;
    log::info!("intervention matrix {} x {}", matrix.n_rows(), matrix.n_cols());
    let (rows, cols) = cluster_rows_cols(&matrix, cfg.k_max, cfg.restarts, cfg.min_cluster_fraction, cfg.seed)?;

    let (lc, le) = extend_labels(data, density, &axes, &matrix, &rows, &cols)?;
    let pre_c = Partition::from_labels(&lc);
    let pre_e = Partition::from_labels(&le);
    let tables = MacroTables::from_labels(pre_c.labels(), pre_e.labels())?;
    let outcome = merge_clusters(&tables, cfg.merge_threshold)?;
    log::info!(
        "clusters {} x {} merged to {} x {}",
        tables.n_causes(),
        tables.n_effects(),
        outcome.tables.n_causes(),
        outcome.tables.n_effects()
    );
    let post_c: Vec<usize> = pre_c.labels().iter().map(|&c| outcome.cause_map[c]).collect();
    let post_e: Vec<usize> = pre_e.labels().iter().map(|&e| outcome.effect_map[e]).collect();
    let mut model = train_classifiers(data, density, &post_c, &post_e, cfg)?;
    model.provenance.matrix_rows = matrix.n_rows();
    model.provenance.matrix_cols = matrix.n_cols();
    model.provenance.pre_merge_causes = tables.n_causes();
    model.provenance.pre_merge_effects = tables.n_effects();
    model.provenance.merge_threshold = cfg.merge_threshold;
    model.provenance.merge_log = outcome.log;
    Ok(LearnOutput {
        model,
        axes,
        matrix,
        pre_merge_cause: pre_c.labels().to_vec(),
        pre_merge_effect: pre_e.labels().to_vec(),
        pre_merge_tables: tables,
    })
}

const MODEL_FILE: &str = "model.json";
const CAUSE_POINTS_FILE: &str = "cause_classifier.f64";
const EFFECT_POINTS_FILE: &str = "effect_classifier.f64";

fn write_points(l: &Labeler, path: &Path) -> Result<()> {
    if let Labeler::Knn { points, .. } = l {
        let bytes: Vec<u8> = points.iter().flat_map(|p| p.to_le_bytes()).collect();
        fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn restore_points(l: &mut Labeler, path: &Path) -> Result<()> {
    if let Labeler::Knn { dim, labels, points, .. } = l {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() != *dim * labels.len() * 8 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                detail: format!("expected {} values, found {} bytes", *dim * labels.len(), bytes.len()),
            });
        }
        *points = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
    }
    Ok(())
}

impl MacroModel {
    pub fn n_causes(&self) -> usize {
        self.cause.n_cells()
    }

    pub fn n_effects(&self) -> usize {
        self.effect.n_cells()
    }

    /// Writes `model.json` plus binary classifier points into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(MODEL_FILE);
        fs::write(&path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(&path, e))?;
        write_points(&self.cause.labeler, &dir.join(CAUSE_POINTS_FILE))?;
        write_points(&self.effect.labeler, &dir.join(EFFECT_POINTS_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MODEL_FILE);
        let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let mut model: MacroModel = serde_json::from_slice(&text)?;
        restore_points(&mut model.cause.labeler, &dir.join(CAUSE_POINTS_FILE))?;
        restore_points(&mut model.effect.labeler, &dir.join(EFFECT_POINTS_FILE))?;
        Ok(model)
    }
}
