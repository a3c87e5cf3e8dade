//! Configuration and end-to-end runs on the simulated neuron experiment.

mod cct;
pub mod evaluate;
pub mod figures;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cct::{random_partition, validate_cct, CctReport};
pub use evaluate::{evaluate, NeuroEvaluation, SubsidiaryEvaluation};

use crate::dataset::{CausalDataset, TruthTable};
use crate::density::{DensityConfig, DensityModel};
use crate::error::{Error, Result};
use crate::learner::{learn, LearnConfig, LearnOutput, MacroModel};
use crate::neuro::{NeuroSimulator, NeuronParams};
use crate::subsidiary::{find_subsidiaries, interaction_matrix, SubsidiarySearch, ESTIMATED_TOL};

pub const MANIFEST_FILE: &str = "run_manifest.json";
pub const METRICS_FILE: &str = "metrics.json";

/// Everything that determines a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Master seed; copied into the density and learner seeds by
    /// [`resolved`](Self::resolved).
    pub seed: u64,
    pub n_per_class: usize,
    pub neuron: NeuronParams,
    pub density: DensityConfig,
    pub learn: LearnConfig,
    /// Equality tolerance for subsidiary search on the learned table.
    pub subsidiary_tol: f64,
    /// Landmarks per axis drawn in the heatmap.
    pub heatmap_size: usize,
}

impl Default for RunConfig {
    /// Settings for the neuron experiment: 20 cause and 4 effect principal
    /// components, triple Silverman bandwidths, otherwise library defaults.
    fn default() -> Self {
        RunConfig {
            seed: 1,
            n_per_class: 2500,
            neuron: NeuronParams::default(),
            density: DensityConfig {
                d_i: 20,
                d_j: 4,
                bandwidth_factor: 3.0,
                ..DensityConfig::default()
            },
            learn: LearnConfig::default(),
            subsidiary_tol: ESTIMATED_TOL,
            heatmap_size: 120,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// The config with every nested seed set from the master seed.
    pub fn resolved(&self) -> RunConfig {
        let mut c = self.clone();
        c.density.seed = c.seed;
        c.learn.seed = c.seed;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_per_class == 0 {
            return Err(Error::invalid("n_per_class must be at least 1"));
        }
        if !(self.subsidiary_tol >= 0.0) {
            return Err(Error::invalid("subsidiary_tol must be non-negative"));
        }
        if self.learn.k_max == 0 || self.learn.restarts == 0 {
            return Err(Error::invalid("k_max and restarts must be positive"));
        }
        self.neuron.validate()
    }

    /// SHA-256 of the resolved config's JSON, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.resolved()).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Written first into every run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub config: RunConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub config_hash: String,
    pub seed: u64,
    pub n_samples: usize,
    pub n_causes: usize,
    pub n_effects: usize,
    pub pre_merge_causes: usize,
    pub pre_merge_effects: usize,
    pub table: Vec<Vec<f64>>,
    pub evaluation: NeuroEvaluation,
    pub strict_subsidiaries: usize,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct PipelineReport {
    pub out_dir: PathBuf,
    pub metrics: Metrics,
    pub data: CausalDataset,
    pub truth: TruthTable,
    pub learned: LearnOutput,
    pub subsidiaries: Option<SubsidiarySearch>,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Simulates the balanced neuron experiment.
pub fn simulate(cfg: &RunConfig) -> Result<(CausalDataset, TruthTable)> {
    NeuroSimulator::new(cfg.neuron.clone(), cfg.seed)?.run_experiment(cfg.n_per_class, cfg.seed)
}

/// Fits the conditional density of `data` (interventional on experimental
/// data, observational otherwise), shrinking the reduced dimensions when
/// there are fewer than ten samples per dimension. Returns the model and any
/// warnings.
pub fn fit_density(data: &CausalDataset, cfg: &DensityConfig) -> Result<(DensityModel, Vec<String>)> {
    let mut cfg = cfg.clone();
    let mut warnings = Vec::new();
    let cap = data.len() / 10;
    if cfg.d_i > cap || cfg.d_j > cap {
        let msg = format!(
            "{} samples: reduced dimensions clamped from {}/{} to {}/{}",
            data.len(),
            cfg.d_i,
            cfg.d_j,
            cfg.d_i.min(cap),
            cfg.d_j.min(cap)
        );
        log::warn!("{msg}");
        warnings.push(msg);
        cfg.d_i = cfg.d_i.min(cap);
        cfg.d_j = cfg.d_j.min(cap);
    }
    Ok((DensityModel::fit_conditional(data, &cfg)?, warnings))
}

/// Thinned, cell-ordered view of the landmark matrix.
struct Heatmap {
    /// Row-normalized values, row-major `rows.len() × cols.len()`.
    values: Vec<f64>,
    rows: Vec<usize>,
    cols: Vec<usize>,
    row_groups: Vec<usize>,
    col_groups: Vec<usize>,
}

/// Landmark matrix ordered by learned cells, thinned to `size` per axis.
fn heatmap(learned: &LearnOutput, size: usize) -> Heatmap {
    let m = &learned.matrix;
    let ax = &learned.axes;
    let cause = learned.model.cause.partition.labels();
    let effect = learned.model.effect.partition.labels();
    let mut rows: Vec<usize> = (0..m.n_rows()).collect();
    rows.sort_by_key(|&r| (cause[ax.row_reps[r]], r));
    let mut cols: Vec<usize> = (0..m.n_cols()).collect();
    cols.sort_by_key(|&c| (effect[ax.col_reps[c]], c));
    let rows: Vec<usize> = figures::spread(rows.len(), size).into_iter().map(|k| rows[k]).collect();
    let cols: Vec<usize> = figures::spread(cols.len(), size).into_iter().map(|k| cols[k]).collect();
    let norm = m.row_normalized();
    let values = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .map(|(r, c)| norm[r * m.n_cols() + c])
        .collect();
    let row_groups = rows.iter().map(|&r| cause[ax.row_reps[r]]).collect();
    let col_groups = cols.iter().map(|&c| effect[ax.col_reps[c]]).collect();
    Heatmap {
        values,
        rows,
        cols,
        row_groups,
        col_groups,
    }
}

fn emit_figures(out: &Path, learned: &LearnOutput, ev: &NeuroEvaluation, size: usize) -> Result<()> {
    let Heatmap {
        values,
        rows,
        cols,
        row_groups: rg,
        col_groups: cg,
    } = heatmap(learned, size);
    let svg = figures::heatmap_svg(&values, rows.len(), cols.len(), &rg, &cg, "intervention matrix (row-normalized)");
    write_text(&out.join("matrix.svg"), &svg)?;
    let ax = &learned.axes;
    let mut lines = Vec::with_capacity(rows.len() * cols.len());
    for (a, &r) in rows.iter().enumerate() {
        for (b, &c) in cols.iter().enumerate() {
            lines.push(vec![
                ax.row_reps[r].to_string(),
                ax.col_reps[c].to_string(),
                rg[a].to_string(),
                cg[b].to_string(),
                format!("{:e}", values[a * cols.len() + b]),
            ]);
        }
    }
    let header = ["cause_sample", "effect_sample", "cause_cell", "effect_cell", "value"];
    write_text(&out.join("matrix.csv"), &figures::csv(&header, lines))?;

    let table = &learned.model.table;
    let header: Vec<String> = std::iter::once("cause_cell".to_string())
        .chain((0..learned.model.n_effects()).map(|e| format!("effect_{e}")))
        .collect();
    let lines = table
        .iter()
        .enumerate()
        .map(|(c, row)| std::iter::once(c.to_string()).chain(row.iter().map(|v| v.to_string())).collect());
    write_text(&out.join("table.csv"), &figures::csv(&header, lines))?;

    let purity_lines = [("cause", &ev.cause_counts), ("effect", &ev.effect_counts)]
        .into_iter()
        .flat_map(|(side, counts)| {
            counts.iter().enumerate().flat_map(move |(cell, row)| {
                row.iter()
                    .enumerate()
                    .map(move |(k, n)| vec![side.to_string(), cell.to_string(), k.to_string(), n.to_string()])
            })
        });
    let header = ["side", "learned_cell", "true_class", "count"];
    write_text(&out.join("purity.csv"), &figures::csv(&header, purity_lines))
}

/// Simulate, fit the density, learn, search for subsidiaries and write the
/// report bundle into `out`. A failing stage is named in the error; files
/// written before it are kept.
pub fn run_full_pipeline(cfg: &RunConfig, out: &Path) -> Result<PipelineReport> {
    let cfg = cfg.resolved();
    stage("config", cfg.validate())?;
    let hash = cfg.hash();
    stage("config", fs::create_dir_all(out).map_err(|e| Error::io(out, e)))?;
    stage(
        "config",
        write_json(
            &out.join(MANIFEST_FILE),
            &RunManifest {
                config_hash: hash.clone(),
                seed: cfg.seed,
                config: cfg.clone(),
            },
        ),
    )?;
    let mut warnings = Vec::new();

    let (data, truth) = stage("simulate", simulate(&cfg))?;
    let data_dir = out.join("data");
    stage("simulate", data.write_dir(&data_dir, Some(hash.clone())))?;
    stage("simulate", truth.write(&data_dir))?;
    log::info!("simulated {} trials", data.len());

    let (density, w) = stage("fit-density", fit_density(&data, &cfg.density))?;
    warnings.extend(w);
    stage("fit-density", density.save(&out.join("density.bin")))?;

    let learned = stage("learn", learn(&data, &density, &cfg.learn))?;
    stage("learn", learned.model.save(&out.join("model")))?;
    if learned.model.n_causes() == 1 || learned.model.n_effects() == 1 {
        warnings.push("learned a single-cell macro-variable".into());
    }

    let subsidiaries = match find_subsidiaries(&learned.model.table, cfg.subsidiary_tol) {
        Ok(s) => {
            let strict: Vec<_> = s.strict().cloned().collect();
            let interactions = stage("subsidiary", interaction_matrix(&strict, &learned.model.table, cfg.subsidiary_tol))?;
            stage(
                "subsidiary",
                write_json(
                    &out.join("subsidiary.json"),
                    &serde_json::json!({ "config_hash": hash, "search": s, "strict": strict, "non_interacting": interactions }),
                ),
            )?;
            Some(s)
        }
        Err(Error::ResourceLimit { what, cap }) => {
            let msg = format!("subsidiary search skipped: {what} exceeds cap {cap}");
            log::warn!("{msg}");
            warnings.push(msg);
            None
        }
        Err(e) => return Err(stage::<()>("subsidiary", Err(e)).unwrap_err()),
    };

    let ev = stage("report", evaluate(&learned.model, &truth, &cfg.neuron, cfg.subsidiary_tol))?;
    stage("report", emit_figures(out, &learned, &ev, cfg.heatmap_size))?;
    let metrics = Metrics {
        config_hash: hash,
        seed: cfg.seed,
        n_samples: data.len(),
        n_causes: learned.model.n_causes(),
        n_effects: learned.model.n_effects(),
        pre_merge_causes: learned.model.provenance.pre_merge_causes,
        pre_merge_effects: learned.model.provenance.pre_merge_effects,
        table: learned.model.table.clone(),
        evaluation: ev,
        strict_subsidiaries: subsidiaries.as_ref().map_or(0, |s| s.strict().count()),
        warnings,
    };
    stage("report", write_json(&out.join(METRICS_FILE), &metrics))?;
    Ok(PipelineReport {
        out_dir: out.to_path_buf(),
        metrics,
        data,
        truth,
        learned,
        subsidiaries,
    })
}

/// Loads a model saved by a run.
pub fn load_model(run_dir: &Path) -> Result<MacroModel> {
    MacroModel::load(&run_dir.join("model"))
}
