use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pca::Reducer;
use super::{AxisGroups, ConditionalDensity, Embedding};
use crate::dataset::{CausalDataset, Mode};
use crate::error::{Error, Result};
use crate::exec;

const MAGIC: &[u8; 8] = b"MCDENS01";
/// Training points whose log-weight falls this far below the row maximum are
/// skipped when building intervention matrices (relative weight < 1e-13).
const LOG_WEIGHT_CUTOFF: f64 = 30.0;
const COLUMN_BLOCK: usize = 2048;
const CAUSE_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensityConfig {
    pub d_i: usize,
    pub d_j: usize,
    /// Global multiplier on the Silverman bandwidths.
    pub bandwidth_factor: f64,
    /// Rows used to estimate principal directions.
    pub fit_cap: usize,
    pub seed: u64,
}

impl Default for DensityConfig {
    fn default() -> Self {
        DensityConfig {
            d_i: 10,
            d_j: 10,
            bandwidth_factor: 1.0,
            fit_cap: 1000,
            seed: 0,
        }
    }
}

/// Kernel conditional density estimate in principal-subspace coordinates:
/// `P(j | man(i)) ≈ Σ_m K_I(i, i_m) K_J(j, j_m) / Σ_m K_I(i, i_m)` with
/// product Gaussian kernels normalized to `K(x, x) = 1`.
///
/// The estimate assumes `P(j | man(i))` varies smoothly in both arguments at
/// the scale of the bandwidths.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityModel {
    config: DensityConfig,
    mode: Mode,
    reducer_i: Reducer,
    reducer_j: Reducer,
    bw_i: Vec<f64>,
    bw_j: Vec<f64>,
    proj_i: Vec<f64>,
    proj_j: Vec<f64>,
    n: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: DensityConfig,
    mode: Mode,
    n: usize,
    input_dim_i: usize,
    input_dim_j: usize,
    dim_i: usize,
    dim_j: usize,
}

/// Per-dimension Silverman bandwidths for `n` points in `d` dimensions.
pub fn silverman_bandwidths(proj: &[f64], n: usize, d: usize, factor: f64) -> Vec<f64> {
    if d == 0 || n == 0 {
        return Vec::new();
    }
    let rule = (4.0 / ((d as f64 + 2.0) * n as f64)).powf(1.0 / (d as f64 + 4.0));
    (0..d)
        .map(|c| {
            let mean = (0..n).map(|r| proj[r * d + c]).sum::<f64>() / n as f64;
            let var = (0..n).map(|r| (proj[r * d + c] - mean).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64;
            (var.sqrt() * rule * factor).max(f64::MIN_POSITIVE)
        })
        .collect()
}

fn log_kernel(z: &[f64], p: &[f64], bw: &[f64]) -> f64 {
    let mut s = 0.0;
    for ((a, b), h) in z.iter().zip(p).zip(bw) {
        let u = (a - b) / h;
        s += u * u;
    }
    -0.5 * s
}

impl DensityModel {
    /// Fits `P(J | man(I))` on experimental data.
    pub fn fit(data: &CausalDataset, config: &DensityConfig) -> Result<Self> {
        if data.mode() != Mode::Experimental {
            return Err(Error::invalid(
                "interventional density needs experimental data; use fit_conditional for observational data",
            ));
        }
        Self::fit_conditional(data, config)
    }

    /// Fits the conditional `P(J | I)` of whatever data is given. On
    /// observational data this is the observational conditional.
    pub fn fit_conditional(data: &CausalDataset, config: &DensityConfig) -> Result<Self> {
        let n = data.len();
        let need = 10 * config.d_i.max(config.d_j);
        if n < need.max(1) {
            return Err(Error::SampleSize(format!(
                "{n} samples; at least {need} needed for d_i={}, d_j={}",
                config.d_i, config.d_j
            )));
        }
        if !(config.bandwidth_factor > 0.0) {
            return Err(Error::invalid("bandwidth factor must be positive"));
        }
        let reducer_i = Reducer::fit(data.causes(), data.d_i(), config.d_i, config.fit_cap, config.seed)?;
        let reducer_j = Reducer::fit(
            data.effects(),
            data.d_j(),
            config.d_j,
            config.fit_cap,
            config.seed.wrapping_add(1),
        )?;
        let proj_i = reducer_i.project_rows(data.causes())?;
        let proj_j = reducer_j.project_rows(data.effects())?;
        let bw_i = silverman_bandwidths(&proj_i, n, reducer_i.dim(), config.bandwidth_factor);
        let bw_j = silverman_bandwidths(&proj_j, n, reducer_j.dim(), config.bandwidth_factor);
        log::debug!(
            "density fit: n={n}, reduced dims {}/{}",
            reducer_i.dim(),
            reducer_j.dim()
        );
        Ok(DensityModel {
            config: config.clone(),
            mode: data.mode(),
            reducer_i,
            reducer_j,
            bw_i,
            bw_j,
            proj_i,
            proj_j,
            n,
        })
    }

    pub fn config(&self) -> &DensityConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn n_train(&self) -> usize {
        self.n
    }

    pub fn reducer_i(&self) -> &Reducer {
        &self.reducer_i
    }

    pub fn reducer_j(&self) -> &Reducer {
        &self.reducer_j
    }

    pub fn bandwidths_i(&self) -> &[f64] {
        &self.bw_i
    }

    pub fn bandwidths_j(&self) -> &[f64] {
        &self.bw_j
    }

    /// Reduced coordinates of the training causes, `n × dim_i`.
    pub fn training_projections_i(&self) -> &[f64] {
        &self.proj_i
    }

    pub fn training_projections_j(&self) -> &[f64] {
        &self.proj_j
    }

    fn di(&self) -> usize {
        self.reducer_i.dim()
    }

    fn dj(&self) -> usize {
        self.reducer_j.dim()
    }

    /// Estimate at reduced coordinates.
    pub fn evaluate_reduced(&self, zi: &[f64], zj: &[f64]) -> f64 {
        let (di, dj) = (self.di(), self.dj());
        let logs: Vec<f64> = (0..self.n)
            .map(|m| log_kernel(zi, &self.proj_i[m * di..(m + 1) * di], &self.bw_i))
            .collect();
        let qmax = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut num = 0.0;
        let mut den = 0.0;
        for (m, &q) in logs.iter().enumerate() {
            let w = (q - qmax).exp();
            den += w;
            if w > 0.0 {
                num += w * log_kernel(zj, &self.proj_j[m * dj..(m + 1) * dj], &self.bw_j).exp();
            }
        }
        num / den
    }

    pub fn evaluate(&self, i: &[f32], j: &[f32]) -> Result<f64> {
        let zi = self.reducer_i.project(i)?;
        let zj = self.reducer_j.project(j)?;
        Ok(self.evaluate_reduced(&zi, &zj))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            config: self.config.clone(),
            mode: self.mode,
            n: self.n,
            input_dim_i: self.reducer_i.input_dim(),
            input_dim_j: self.reducer_j.input_dim(),
            dim_i: self.di(),
            dim_j: self.dj(),
        };
        let json = serde_json::to_vec(&header)?;
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
        put(MAGIC)?;
        put(&(json.len() as u64).to_le_bytes())?;
        put(&json)?;
        for arr in [
            self.reducer_i.mean(),
            self.reducer_i.components(),
            self.reducer_i.variances(),
            &self.bw_i,
            self.reducer_j.mean(),
            self.reducer_j.components(),
            self.reducer_j.variances(),
            &self.bw_j,
            &self.proj_i,
            &self.proj_j,
        ] {
            for v in arr {
                put(&v.to_le_bytes())?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let bad = |detail: &str| Error::Format {
            path: path.to_path_buf(),
            detail: detail.to_string(),
        };
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
        if &magic != MAGIC {
            return Err(bad("not a density model file"));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(|_| bad("truncated header length"))?;
        let len = u64::from_le_bytes(len) as usize;
        if len > 1 << 20 {
            return Err(bad("header too large"));
        }
        let mut json = vec![0u8; len];
        r.read_exact(&mut json).map_err(|_| bad("truncated header"))?;
        let h: Header = serde_json::from_slice(&json).map_err(|e| bad(&e.to_string()))?;
        let mut read = |count: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; count * 8];
            r.read_exact(&mut buf).map_err(|_| bad("truncated array data"))?;
            Ok(buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect())
        };
        let mean_i = read(h.input_dim_i)?;
        let comp_i = read(h.dim_i * h.input_dim_i)?;
        let var_i = read(h.dim_i)?;
        let bw_i = read(h.dim_i)?;
        let mean_j = read(h.input_dim_j)?;
        let comp_j = read(h.dim_j * h.input_dim_j)?;
        let var_j = read(h.dim_j)?;
        let bw_j = read(h.dim_j)?;
        let proj_i = read(h.n * h.dim_i)?;
        let proj_j = read(h.n * h.dim_j)?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
        if !rest.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(DensityModel {
            config: h.config,
            mode: h.mode,
            reducer_i: Reducer::from_parts(h.input_dim_i, mean_i, comp_i, var_i)?,
            reducer_j: Reducer::from_parts(h.input_dim_j, mean_j, comp_j, var_j)?,
            bw_i,
            bw_j,
            proj_i,
            proj_j,
            n: h.n,
        })
    }
}

impl ConditionalDensity for DensityModel {
    fn cause_dim(&self) -> usize {
        self.reducer_i.input_dim()
    }

    fn effect_dim(&self) -> usize {
        self.reducer_j.input_dim()
    }

    fn cause_embedding(&self) -> Embedding {
        Embedding::Linear {
            reducer: self.reducer_i.clone(),
        }
    }

    fn effect_embedding(&self) -> Embedding {
        Embedding::Linear {
            reducer: self.reducer_j.clone(),
        }
    }

    fn score(&self, i: &[f32], j: &[f32]) -> Result<f64> {
        self.evaluate(i, j)
    }

    fn score_matrix(&self, causes: &[&[f32]], effects: &[&[f32]]) -> Result<Vec<f64>> {
        self.matrix_impl(causes, effects, None)
    }

    fn score_matrix_holdout(&self, causes: &[&[f32]], effects: &[&[f32]], holdout: &[Option<usize>]) -> Result<Vec<f64>> {
        self.matrix_impl(causes, effects, Some(holdout))
    }

    fn effect_group_scores(
        &self,
        causes: &[&[f32]],
        holdout: &[Option<usize>],
        effects: &[&[f32]],
        groups: AxisGroups<'_>,
    ) -> Result<Vec<f64>> {
        groups.check(effects.len())?;
        let (zi, skip) = self.project_causes(causes, holdout)?;
        let zj = self.project_effects(effects)?;
        let g_n = groups.n_groups;
        let dj = self.dj();
        // s[m][g]: weighted effect kernel mass of group g at training point m.
        let mut s = vec![0.0; self.n * g_n];
        exec::for_each_row_mut(&mut s, g_n.max(1), |m, row| {
            let pm = &self.proj_j[m * dj..(m + 1) * dj];
            for (l, z) in zj.iter().enumerate() {
                row[groups.groups[l]] += groups.weights[l] * log_kernel(z, pm, &self.bw_j).exp();
            }
        });
        let rows = exec::map_range(causes.len(), |r| {
            let mut acc = vec![0.0; g_n];
            if let Some(a) = self.cause_weights(&zi[r], skip[r]) {
                for (m, &w) in a.iter().enumerate() {
                    if w > 0.0 {
                        crate::linalg::axpy(w, &s[m * g_n..(m + 1) * g_n], &mut acc);
                    }
                }
            }
            acc
        });
        Ok(rows.into_iter().flatten().collect())
    }

    fn cause_group_scores(
        &self,
        causes: &[&[f32]],
        holdout: &[Option<usize>],
        groups: AxisGroups<'_>,
        effects: &[&[f32]],
    ) -> Result<Vec<f64>> {
        groups.check(causes.len())?;
        let (zi, skip) = self.project_causes(causes, holdout)?;
        let zj = self.project_effects(effects)?;
        let g_n = groups.n_groups;
        let dj = self.dj();
        // b[g][m]: weighted cause-kernel share of training point m in group g.
        let mut b = vec![0.0; g_n * self.n];
        for start in (0..causes.len()).step_by(CAUSE_CHUNK) {
            let end = (start + CAUSE_CHUNK).min(causes.len());
            let weights = exec::map_range(end - start, |r| self.cause_weights(&zi[start + r], skip[start + r]));
            for (r, a) in weights.into_iter().enumerate() {
                let Some(a) = a else { continue };
                let (g, w) = (groups.groups[start + r], groups.weights[start + r]);
                crate::linalg::axpy(w, &a, &mut b[g * self.n..(g + 1) * self.n]);
            }
        }
        let cols = exec::map_range(effects.len(), |l| {
            let k: Vec<f64> = (0..self.n)
                .map(|m| log_kernel(&zj[l], &self.proj_j[m * dj..(m + 1) * dj], &self.bw_j).exp())
                .collect();
            (0..g_n)
                .map(|g| crate::linalg::dot(&b[g * self.n..(g + 1) * self.n], &k))
                .collect::<Vec<f64>>()
        });
        Ok(cols.into_iter().flatten().collect())
    }
}

impl DensityModel {
    fn project_effects(&self, effects: &[&[f32]]) -> Result<Vec<Vec<f64>>> {
        exec::map_slice(effects, |e| self.reducer_j.project(e)).into_iter().collect()
    }

    /// Reduced causes plus the training point each row leaves out. A holdout
    /// only applies when the row really is that training point.
    #[allow(clippy::type_complexity)]
    fn project_causes(&self, causes: &[&[f32]], holdout: &[Option<usize>]) -> Result<(Vec<Vec<f64>>, Vec<Option<usize>>)> {
        if holdout.len() != causes.len() {
            return Err(Error::invalid("one holdout entry per cause required"));
        }
        let di = self.di();
        let zi: Vec<Vec<f64>> = exec::map_slice(causes, |c| self.reducer_i.project(c))
            .into_iter()
            .collect::<Result<_>>()?;
        let skip = (0..causes.len())
            .map(|r| holdout[r].filter(|&m| m < self.n && self.proj_i[m * di..(m + 1) * di] == zi[r][..]))
            .collect();
        Ok((zi, skip))
    }

    /// Normalized cause-kernel weights of every training point for reduced
    /// cause `z`; `None` when no training point is left.
    fn cause_weights(&self, z: &[f64], skip: Option<usize>) -> Option<Vec<f64>> {
        let di = self.di();
        let mut w: Vec<f64> = (0..self.n)
            .map(|m| {
                if skip == Some(m) {
                    f64::NEG_INFINITY
                } else {
                    log_kernel(z, &self.proj_i[m * di..(m + 1) * di], &self.bw_i)
                }
            })
            .collect();
        let qmax = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if qmax == f64::NEG_INFINITY {
            return None;
        }
        w.iter_mut().for_each(|q| *q = (*q - qmax).exp());
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|q| *q /= total);
        Some(w)
    }

    fn matrix_impl(&self, causes: &[&[f32]], effects: &[&[f32]], holdout: Option<&[Option<usize>]>) -> Result<Vec<f64>> {
        let (di, dj) = (self.di(), self.dj());
        let none = vec![None; causes.len()];
        let (zi, skip) = self.project_causes(causes, holdout.unwrap_or(&none))?;
        let zj = self.project_effects(effects)?;
        let cols = effects.len();
        let mut out = vec![0.0; causes.len() * cols];
        if cols == 0 {
            return Ok(out);
        }
        for start in (0..cols).step_by(COLUMN_BLOCK) {
            let end = (start + COLUMN_BLOCK).min(cols);
            let width = end - start;
            // kj[m][l]: effect kernel between training point m and column l.
            let mut kj = vec![0.0; self.n * width];
            exec::for_each_row_mut(&mut kj, width, |m, row| {
                let pm = &self.proj_j[m * dj..(m + 1) * dj];
                for (l, v) in row.iter_mut().enumerate() {
                    *v = log_kernel(&zj[start + l], pm, &self.bw_j).exp();
                }
            });
            let block = exec::map_range(causes.len(), |r| {
                let logs: Vec<f64> = (0..self.n)
                    .map(|m| {
                        if skip[r] == Some(m) {
                            f64::NEG_INFINITY
                        } else {
                            log_kernel(&zi[r], &self.proj_i[m * di..(m + 1) * di], &self.bw_i)
                        }
                    })
                    .collect();
                let qmax = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut acc = vec![0.0; width];
                if qmax == f64::NEG_INFINITY {
                    // Nothing left after the holdout; the row normalizes to uniform.
                    return acc;
                }
                let mut den = 0.0;
                for (m, &q) in logs.iter().enumerate() {
                    let w = (q - qmax).exp();
                    den += w;
                    if q > qmax - LOG_WEIGHT_CUTOFF {
                        crate::linalg::axpy(w, &kj[m * width..(m + 1) * width], &mut acc);
                    }
                }
                acc.iter_mut().for_each(|a| *a /= den);
                acc
            });
            for (r, row) in block.into_iter().enumerate() {
                out[r * cols + start..r * cols + end].copy_from_slice(&row);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discrete::DiscreteMlSystem;

    fn one_hot_data() -> (DiscreteMlSystem, CausalDataset) {
        let sys = DiscreteMlSystem::random(4, 4, 2, 3).unwrap();
        let iv: Vec<usize> = (0..4).collect();
        let data = sys.sample(10_000, Mode::Experimental, Some(&iv), 8).unwrap();
        (sys, data)
    }

    fn one_hot(k: usize, n: usize) -> Vec<f32> {
        let mut v = vec![0.0; n];
        v[k] = 1.0;
        v
    }

    #[test]
    fn one_hot_estimate_matches_exact_table() {
        let (sys, data) = one_hot_data();
        let model = DensityModel::fit(&data, &DensityConfig::default()).unwrap();
        for i in 0..4 {
            let exact = sys.interventional(i).unwrap();
            for j in 0..4 {
                let est = model.evaluate(&one_hot(i, 4), &one_hot(j, 4)).unwrap();
                assert!((est - exact[j]).abs() < 0.05, "i={i} j={j}: {est} vs {}", exact[j]);
            }
        }
    }

    #[test]
    fn matrix_agrees_with_pointwise_scores() {
        let (_, data) = one_hot_data();
        let model = DensityModel::fit(&data, &DensityConfig::default()).unwrap();
        let causes: Vec<&[f32]> = (0..7).map(|k| data.cause(k)).collect();
        let effects: Vec<&[f32]> = (0..5).map(|k| data.effect(k * 3)).collect();
        let fast = model.score_matrix(&causes, &effects).unwrap();
        for (r, c) in causes.iter().enumerate() {
            for (l, e) in effects.iter().enumerate() {
                let slow = model.score(c, e).unwrap();
                assert!((fast[r * 5 + l] - slow).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn holdout_rows_leave_the_training_point_out() {
        use rand::Rng;
        let mut rng = crate::rng::seeded(12);
        let n = 60;
        let causes: Vec<f32> = (0..n * 3).map(|_| rng.random::<f32>()).collect();
        let effects: Vec<f32> = (0..n * 2).map(|_| rng.random::<f32>()).collect();
        let data = CausalDataset::new(Mode::Experimental, 0, 3, 2, causes, effects).unwrap();
        let cfg = DensityConfig { d_i: 3, d_j: 2, ..Default::default() };
        let model = DensityModel::fit(&data, &cfg).unwrap();
        let rows: Vec<&[f32]> = (0..4).map(|k| data.cause(k)).collect();
        let cols: Vec<&[f32]> = (0..n).map(|k| data.effect(k)).collect();
        let holdout: Vec<Option<usize>> = (0..4).map(Some).collect();
        let got = model.score_matrix_holdout(&rows, &cols, &holdout).unwrap();
        let (pi, pj) = (model.training_projections_i(), model.training_projections_j());
        let k = |a: &[f64], b: &[f64], bw: &[f64]| log_kernel(a, b, bw).exp();
        for r in 0..4 {
            for l in 0..n {
                let (mut num, mut den) = (0.0, 0.0);
                for m in (0..n).filter(|&m| m != r) {
                    let ki = k(&pi[r * 3..r * 3 + 3], &pi[m * 3..m * 3 + 3], model.bandwidths_i());
                    num += ki * k(&pj[l * 2..l * 2 + 2], &pj[m * 2..m * 2 + 2], model.bandwidths_j());
                    den += ki;
                }
                assert!((got[r * n + l] - num / den).abs() < 1e-9 * (1.0 + num / den));
            }
        }
        // A row that is not the named training point is left alone.
        let shifted = [0.5f32, 0.5, 0.5];
        let a = model.score_matrix_holdout(&[&shifted], &cols, &[Some(0)]).unwrap();
        assert_eq!(a, model.score_matrix(&[&shifted], &cols).unwrap());
    }

    /// Forwards everything but the group sums, so the trait defaults run.
    struct Plain<'a>(&'a DensityModel);

    impl ConditionalDensity for Plain<'_> {
        fn cause_dim(&self) -> usize {
            self.0.cause_dim()
        }
        fn effect_dim(&self) -> usize {
            self.0.effect_dim()
        }
        fn cause_embedding(&self) -> Embedding {
            self.0.cause_embedding()
        }
        fn effect_embedding(&self) -> Embedding {
            self.0.effect_embedding()
        }
        fn score(&self, i: &[f32], j: &[f32]) -> Result<f64> {
            self.0.score(i, j)
        }
        fn score_matrix_holdout(&self, c: &[&[f32]], e: &[&[f32]], h: &[Option<usize>]) -> Result<Vec<f64>> {
            self.0.score_matrix_holdout(c, e, h)
        }
    }

    #[test]
    fn group_sums_match_the_full_matrix() {
        use rand::Rng;
        let mut rng = crate::rng::seeded(31);
        let n = 150;
        let causes: Vec<f32> = (0..n * 4).map(|_| rng.random::<f32>()).collect();
        let effects: Vec<f32> = (0..n * 3).map(|_| rng.random::<f32>()).collect();
        let data = CausalDataset::new(Mode::Experimental, 0, 4, 3, causes, effects).unwrap();
        let cfg = DensityConfig { d_i: 3, d_j: 2, ..Default::default() };
        let model = DensityModel::fit(&data, &cfg).unwrap();
        let rows: Vec<&[f32]> = (0..90).map(|k| data.cause(k)).collect();
        let cols: Vec<&[f32]> = (20..n).map(|k| data.effect(k)).collect();
        let holdout: Vec<Option<usize>> = (0..90).map(|k| (k % 3 != 0).then_some(k)).collect();
        let rw: Vec<f64> = (0..rows.len()).map(|_| rng.random::<f64>()).collect();
        let rg: Vec<usize> = (0..rows.len()).map(|k| k % 4).collect();
        let cw: Vec<f64> = (0..cols.len()).map(|_| rng.random::<f64>()).collect();
        let cg: Vec<usize> = (0..cols.len()).map(|k| (k * 7) % 5).collect();
        let eg = AxisGroups { weights: &cw, groups: &cg, n_groups: 5 };
        let cgrp = AxisGroups { weights: &rw, groups: &rg, n_groups: 4 };
        let close = |a: &[f64], b: &[f64]| {
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-9 * (1.0 + y.abs()), "{x} vs {y}");
            }
        };
        close(
            &model.effect_group_scores(&rows, &holdout, &cols, eg).unwrap(),
            &Plain(&model).effect_group_scores(&rows, &holdout, &cols, eg).unwrap(),
        );
        close(
            &model.cause_group_scores(&rows, &holdout, cgrp, &cols).unwrap(),
            &Plain(&model).cause_group_scores(&rows, &holdout, cgrp, &cols).unwrap(),
        );
        assert!(model.effect_group_scores(&rows, &holdout, &cols, cgrp).is_err());
    }

    #[test]
    fn rejects_small_or_observational_data() {
        let sys = DiscreteMlSystem::random(3, 3, 1, 0).unwrap();
        let small = sys.sample(50, Mode::Experimental, Some(&[0, 1, 2]), 0).unwrap();
        assert!(matches!(
            DensityModel::fit(&small, &DensityConfig::default()),
            Err(Error::SampleSize(_))
        ));
        let obs = sys.sample(500, Mode::Observational, None, 0).unwrap();
        assert!(DensityModel::fit(&obs, &DensityConfig::default()).is_err());
        assert!(DensityModel::fit_conditional(&obs, &DensityConfig::default()).is_ok());
    }

    #[test]
    fn repeated_pair_scores_maximal_at_itself() {
        let i = [0.3f32, 0.7];
        let j = [1.0f32, 2.0, 3.0];
        let causes: Vec<f32> = i.repeat(100);
        let effects: Vec<f32> = j.repeat(100);
        let data = CausalDataset::new(Mode::Experimental, 0, 2, 3, causes, effects).unwrap();
        let model = DensityModel::fit(&data, &DensityConfig::default()).unwrap();
        let at = model.evaluate(&i, &j).unwrap();
        for probe in [[0.0f32, 0.0, 0.0], [5.0, -1.0, 2.0], [1.0, 2.0, 3.5]] {
            assert!(at >= model.evaluate(&i, &probe).unwrap());
        }
    }

    #[test]
    fn persistence_round_trip() {
        let (_, data) = one_hot_data();
        let model = DensityModel::fit(&data.subset(&(0..500).collect::<Vec<_>>()), &DensityConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("density.bin");
        model.save(&path).unwrap();
        let back = DensityModel::load(&path).unwrap();
        assert_eq!(back, model);
        std::fs::write(&path, b"MCDENS01garbage").unwrap();
        assert!(DensityModel::load(&path).is_err());
    }
}
