//! Exact finite ml-systems.
//!
//! A [`DiscreteMlSystem`] stores the joint `P(J, I, H)` through its factors
//! `alpha[j][h][i] = P(J=j | H=h, I=i)`, `beta[i][h] = P(I=i | H=h)` and
//! `gamma[h] = P(H=h)`. Noise variables are already marginalized into these
//! conditionals. Everything here is exact up to float rounding and serves as
//! ground truth for the estimators.

use serde::{Deserialize, Serialize};

use crate::dataset::{CausalDataset, Mode};
use crate::density::{ConditionalDensity, Embedding};
use crate::error::{Error, Result};
use crate::exec;
use crate::partition::{partition_from_equivalence, Partition};
use crate::rng::{categorical, dirichlet_uniform, seeded};

/// Tolerance on stochastic-slice sums.
pub const SIMPLEX_TOL: f64 = 1e-12;
/// Default probability-equality tolerance for exact systems.
pub const EXACT_TOL: f64 = 1e-9;
/// Retry cap for the observational-partition sampler.
pub const FEASIBILITY_RETRIES: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SystemRepr", into = "SystemRepr")]
pub struct DiscreteMlSystem {
    m: usize,
    n: usize,
    k: usize,
    // alpha[(j * k + h) * m + i]
    alpha: Vec<f64>,
    // beta[i * k + h]
    beta: Vec<f64>,
    gamma: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[allow(non_snake_case)]
struct SystemRepr {
    M: usize,
    N: usize,
    K: usize,
    alpha: Vec<Vec<Vec<f64>>>,
    beta: Vec<Vec<f64>>,
    gamma: Vec<f64>,
}

impl TryFrom<SystemRepr> for DiscreteMlSystem {
    type Error = Error;

    fn try_from(r: SystemRepr) -> Result<Self> {
        let sys = DiscreteMlSystem::new(r.alpha, r.beta, r.gamma)?;
        if (sys.m, sys.n, sys.k) != (r.M, r.N, r.K) {
            return Err(Error::invalid(format!(
                "declared M,N,K = {},{},{} but arrays have {},{},{}",
                r.M, r.N, r.K, sys.m, sys.n, sys.k
            )));
        }
        Ok(sys)
    }
}

impl From<DiscreteMlSystem> for SystemRepr {
    fn from(s: DiscreteMlSystem) -> Self {
        SystemRepr {
            M: s.m,
            N: s.n,
            K: s.k,
            alpha: (0..s.n)
                .map(|j| {
                    (0..s.k)
                        .map(|h| (0..s.m).map(|i| s.alpha(j, h, i)).collect())
                        .collect()
                })
                .collect(),
            beta: (0..s.m)
                .map(|i| (0..s.k).map(|h| s.beta(i, h)).collect())
                .collect(),
            gamma: s.gamma.clone(),
        }
    }
}

/// Exact causal and observational partitions of the value sets of I and J.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub causal_i: Partition,
    pub causal_j: Partition,
    pub obs_i: Partition,
    pub obs_j: Partition,
    /// Values of I with `P(I=i) = 0`; each sits alone in its observational cell.
    pub undefined_obs_i: Vec<usize>,
}

fn check_simplex(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|&x| !(0.0..=1.0).contains(&x) || x.is_nan()) {
        return Err(Error::invalid(format!("{what} has entries outside [0, 1]")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::invalid(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

impl DiscreteMlSystem {
    /// `alpha[j][h][i]`, `beta[i][h]`, `gamma[h]`.
    pub fn new(alpha: Vec<Vec<Vec<f64>>>, beta: Vec<Vec<f64>>, gamma: Vec<f64>) -> Result<Self> {
        let n = alpha.len();
        let k = gamma.len();
        let m = beta.len();
        if n == 0 || k == 0 || m == 0 {
            return Err(Error::invalid("M, N and K must all be positive"));
        }
        let mut flat_alpha = vec![0.0; n * k * m];
        for (j, per_h) in alpha.iter().enumerate() {
            if per_h.len() != k {
                return Err(Error::invalid(format!("alpha[{j}] has {} rows, K={k}", per_h.len())));
            }
            for (h, per_i) in per_h.iter().enumerate() {
                if per_i.len() != m {
                    return Err(Error::invalid(format!(
                        "alpha[{j}][{h}] has {} entries, M={m}",
                        per_i.len()
                    )));
                }
                for (i, &v) in per_i.iter().enumerate() {
                    flat_alpha[(j * k + h) * m + i] = v;
                }
            }
        }
        let mut flat_beta = vec![0.0; m * k];
        for (i, row) in beta.iter().enumerate() {
            if row.len() != k {
                return Err(Error::invalid(format!("beta[{i}] has {} entries, K={k}", row.len())));
            }
            flat_beta[i * k..(i + 1) * k].copy_from_slice(row);
        }
        Self::from_flat(m, n, k, flat_alpha, flat_beta, gamma)
    }

    fn from_flat(
        m: usize,
        n: usize,
        k: usize,
        alpha: Vec<f64>,
        beta: Vec<f64>,
        gamma: Vec<f64>,
    ) -> Result<Self> {
        let sys = DiscreteMlSystem {
            m,
            n,
            k,
            alpha,
            beta,
            gamma,
        };
        sys.validate()?;
        Ok(sys)
    }

    fn validate(&self) -> Result<()> {
        check_simplex(&self.gamma, "gamma")?;
        for h in 0..self.k {
            let col: Vec<f64> = (0..self.m).map(|i| self.beta(i, h)).collect();
            check_simplex(&col, &format!("beta[.][{h}]"))?;
            for i in 0..self.m {
                let slice: Vec<f64> = (0..self.n).map(|j| self.alpha(j, h, i)).collect();
                check_simplex(&slice, &format!("alpha[.][{h}][{i}]"))?;
            }
        }
        Ok(())
    }

    /// Generic system with every conditional slice drawn from Dirichlet(1).
    pub fn random(m: usize, n: usize, k: usize, seed: u64) -> Result<Self> {
        if m == 0 || n == 0 || k == 0 {
            return Err(Error::invalid("M, N and K must all be positive"));
        }
        let mut rng = seeded(seed);
        let gamma = dirichlet_uniform(&mut rng, k);
        let mut beta = vec![0.0; m * k];
        for h in 0..k {
            for (i, p) in dirichlet_uniform(&mut rng, m).into_iter().enumerate() {
                beta[i * k + h] = p;
            }
        }
        let mut alpha = vec![0.0; n * k * m];
        for h in 0..k {
            for i in 0..m {
                for (j, p) in dirichlet_uniform(&mut rng, n).into_iter().enumerate() {
                    alpha[(j * k + h) * m + i] = p;
                }
            }
        }
        Self::from_flat(m, n, k, alpha, beta, gamma)
    }

    /// Samples a system whose observational partition of J is (at least as
    /// coarse as) `obs_j`.
    ///
    /// `gamma`, `beta` and the `alpha` slices at every `h != h*` are free
    /// Dirichlet(1) draws; for each `i` the slice at
    /// `h* = argmax_h beta[i][h] gamma[h]` is then solved from the
    /// observational constraints
    /// `alpha[j][h*][i] = (p_l P(i) - sum_{h != h*} alpha[j][h][i] beta[i][h] gamma[h]) / (beta[i][h*] gamma[h*])`,
    /// where `p_l` is the shared value of `P(j | i)` over cell `l` of `obs_j`.
    /// Draws that put a solved entry outside `[0, 1]` are rejected and redrawn.
    pub fn sample_with_obs_partition(obs_j: &Partition, m: usize, k: usize, seed: u64) -> Result<Self> {
        let n = obs_j.size();
        if m == 0 || n == 0 || k == 0 {
            return Err(Error::invalid("M, N and K must all be positive"));
        }
        let cells = obs_j.cells();
        let sizes = obs_j.cell_sizes();
        let mut rng = seeded(seed);
        let gamma = dirichlet_uniform(&mut rng, k);
        let mut beta = vec![0.0; m * k];
        for h in 0..k {
            for (i, p) in dirichlet_uniform(&mut rng, m).into_iter().enumerate() {
                beta[i * k + h] = p;
            }
        }
        let mut alpha = vec![0.0; n * k * m];
        for i in 0..m {
            let w: Vec<f64> = (0..k).map(|h| beta[i * k + h] * gamma[h]).collect();
            let p_i: f64 = w.iter().sum();
            let h_star = (0..k)
                .max_by(|&a, &b| w[a].total_cmp(&w[b]))
                .expect("k > 0");
            if w[h_star] <= 0.0 {
                return Err(Error::UndefinedConditional(format!("P(I={i}) = 0")));
            }
            let mut accepted = false;
            let mut slices = vec![vec![0.0; n]; k];
            for _ in 0..FEASIBILITY_RETRIES {
                for (h, slice) in slices.iter_mut().enumerate() {
                    if h != h_star {
                        *slice = dirichlet_uniform(&mut rng, n);
                    }
                }
                let cell_mass = dirichlet_uniform(&mut rng, cells.len());
                let mut ok = true;
                for j in 0..n {
                    let l = obs_j.label(j);
                    let p_l = cell_mass[l] / sizes[l] as f64;
                    let others: f64 = (0..k)
                        .filter(|&h| h != h_star)
                        .map(|h| slices[h][j] * w[h])
                        .sum();
                    let v = (p_l * p_i - others) / w[h_star];
                    // Round-off around the simplex boundary.
                    let v = if v.abs() < 1e-15 { 0.0 } else { v };
                    if !(0.0..=1.0).contains(&v) {
                        ok = false;
                        break;
                    }
                    slices[h_star][j] = v;
                }
                if ok {
                    accepted = true;
                    break;
                }
            }
            if !accepted {
                return Err(Error::InfeasibleConstraints {
                    attempts: FEASIBILITY_RETRIES,
                    detail: format!("no feasible alpha slice for I={i}"),
                });
            }
            // The solved slice sums to one analytically; remove accumulated rounding.
            let s: f64 = slices[h_star].iter().sum();
            slices[h_star].iter_mut().for_each(|x| *x /= s);
            for (h, slice) in slices.iter().enumerate() {
                for (j, &v) in slice.iter().enumerate() {
                    alpha[(j * k + h) * m + i] = v;
                }
            }
        }
        Self::from_flat(m, n, k, alpha, beta, gamma)
    }

    /// System with planted structure: `alpha` is shared inside each cell of
    /// `spec.causal_i` and constant inside each cell of `spec.causal_j`, and
    /// the hidden-state profile `P(H | i)` is shared inside each cell of
    /// `spec.obs_i` (which must refine `spec.causal_i`).
    pub fn planted(spec: &PlantedSpec, seed: u64) -> Result<Self> {
        let m = spec.causal_i.size();
        let n = spec.causal_j.size();
        let k = spec.k;
        if m == 0 || n == 0 || k == 0 {
            return Err(Error::invalid("M, N and K must all be positive"));
        }
        if spec.obs_i.size() != m || !spec.causal_i.coarsens(&spec.obs_i)? {
            return Err(Error::invalid("obs_i must refine causal_i"));
        }
        let mut rng = seeded(seed);
        let j_cells = spec.causal_j.n_cells();
        let j_sizes = spec.causal_j.cell_sizes();
        let mut alpha = vec![0.0; n * k * m];
        for c in 0..spec.causal_i.n_cells() {
            for h in 0..k {
                let mass = dirichlet_uniform(&mut rng, j_cells);
                for i in (0..m).filter(|&i| spec.causal_i.label(i) == c) {
                    for j in 0..n {
                        let l = spec.causal_j.label(j);
                        alpha[(j * k + h) * m + i] = mass[l] / j_sizes[l] as f64;
                    }
                }
            }
        }
        let profiles: Vec<Vec<f64>> = (0..spec.obs_i.n_cells())
            .map(|_| dirichlet_uniform(&mut rng, k))
            .collect();
        let p_i = dirichlet_uniform(&mut rng, m);
        let joint: Vec<f64> = (0..m)
            .flat_map(|i| {
                let prof = &profiles[spec.obs_i.label(i)];
                let pi = p_i[i];
                (0..k).map(move |h| pi * prof[h])
            })
            .collect();
        let gamma: Vec<f64> = (0..k).map(|h| (0..m).map(|i| joint[i * k + h]).sum()).collect();
        let mut beta = vec![0.0; m * k];
        for h in 0..k {
            let col: f64 = (0..m).map(|i| joint[i * k + h]).sum();
            for i in 0..m {
                beta[i * k + h] = joint[i * k + h] / col;
            }
        }
        renormalize(&mut beta, m, k);
        let gsum: f64 = gamma.iter().sum();
        let gamma = gamma.iter().map(|g| g / gsum).collect();
        Self::from_flat(m, n, k, alpha, beta, gamma)
    }

    pub fn card_i(&self) -> usize {
        self.m
    }

    pub fn card_j(&self) -> usize {
        self.n
    }

    pub fn card_h(&self) -> usize {
        self.k
    }

    pub fn alpha(&self, j: usize, h: usize, i: usize) -> f64 {
        self.alpha[(j * self.k + h) * self.m + i]
    }

    pub fn beta(&self, i: usize, h: usize) -> f64 {
        self.beta[i * self.k + h]
    }

    pub fn gamma(&self, h: usize) -> f64 {
        self.gamma[h]
    }

    /// `P(I = i) = sum_h beta[i][h] gamma[h]`.
    pub fn marginal_i(&self, i: usize) -> f64 {
        (0..self.k).map(|h| self.beta(i, h) * self.gamma[h]).sum()
    }

    fn check_i(&self, i: usize) -> Result<()> {
        if i >= self.m {
            return Err(Error::invalid(format!("I value {i} out of range 0..{}", self.m)));
        }
        Ok(())
    }

    /// `P(J | man(I=i)) = sum_h P(J | i, h) P(h)`.
    pub fn interventional(&self, i: usize) -> Result<Vec<f64>> {
        self.check_i(i)?;
        Ok((0..self.n)
            .map(|j| (0..self.k).map(|h| self.alpha(j, h, i) * self.gamma[h]).sum())
            .collect())
    }

    /// `P(J | I=i)`, with the hidden state weighted by `P(h | i)`.
    pub fn observational(&self, i: usize) -> Result<Vec<f64>> {
        self.check_i(i)?;
        let p_i = self.marginal_i(i);
        if p_i <= 0.0 {
            return Err(Error::UndefinedConditional(format!("P(I={i}) = 0")));
        }
        Ok((0..self.n)
            .map(|j| {
                (0..self.k)
                    .map(|h| self.alpha(j, h, i) * self.beta(i, h) * self.gamma[h])
                    .sum::<f64>()
                    / p_i
            })
            .collect())
    }

    /// M × N table of `P(j | man(i))`.
    pub fn interventional_table(&self) -> Vec<Vec<f64>> {
        (0..self.m)
            .map(|i| self.interventional(i).expect("i in range"))
            .collect()
    }

    /// Rows of `P(J | i)`; `None` where `P(i) = 0`.
    pub fn observational_table(&self) -> Vec<Option<Vec<f64>>> {
        (0..self.m).map(|i| self.observational(i).ok()).collect()
    }

    pub fn ground_truth_partitions(&self, tol: f64) -> Result<GroundTruth> {
        if !(tol >= 0.0) {
            return Err(Error::invalid("tolerance must be non-negative"));
        }
        let inter = self.interventional_table();
        let obs = self.observational_table();
        let causal_i =
            partition_from_equivalence(self.m, |a, b| sup_distance(&inter[a], &inter[b]) <= tol);
        let causal_j = partition_from_equivalence(self.n, |a, b| {
            inter.iter().all(|row| (row[a] - row[b]).abs() <= tol)
        });
        let obs_i = partition_from_equivalence(self.m, |a, b| match (&obs[a], &obs[b]) {
            (Some(x), Some(y)) => sup_distance(x, y) <= tol,
            _ => false,
        });
        let obs_j = partition_from_equivalence(self.n, |a, b| {
            obs.iter().flatten().all(|row| (row[a] - row[b]).abs() <= tol)
        });
        let undefined_obs_i = (0..self.m).filter(|&i| obs[i].is_none()).collect();
        Ok(GroundTruth {
            causal_i,
            causal_j,
            obs_i,
            obs_j,
            undefined_obs_i,
        })
    }

    /// Draws `n` value pairs `(i, j)`.
    ///
    /// Experimental mode requires `interventions` (cycled when shorter than
    /// `n`) and draws `j ~ P(J | man(i))`; observational mode draws from the
    /// joint. Samples are generated in fixed-size chunks with split seeds, so
    /// the output does not depend on thread count.
    pub fn sample_values(
        &self,
        n: usize,
        mode: Mode,
        interventions: Option<&[usize]>,
        seed: u64,
    ) -> Result<Vec<(usize, usize)>> {
        if mode == Mode::Experimental {
            let iv = interventions
                .ok_or_else(|| Error::invalid("experimental sampling needs intervention values"))?;
            if iv.is_empty() && n > 0 {
                return Err(Error::invalid("empty intervention list"));
            }
            for &i in iv {
                self.check_i(i)?;
            }
        }
        const CHUNK: usize = 4096;
        let n_chunks = n.div_ceil(CHUNK);
        let beta_cols: Vec<Vec<f64>> = (0..self.k)
            .map(|h| (0..self.m).map(|i| self.beta(i, h)).collect())
            .collect();
        let chunks = exec::map_range(n_chunks, |c| {
            let mut rng = seeded(exec::split_seed(seed, c as u64));
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            let mut slice = vec![0.0; self.n];
            (lo..hi)
                .map(|s| {
                    let h = categorical(&mut rng, &self.gamma);
                    let i = match (mode, interventions) {
                        (Mode::Experimental, Some(iv)) => iv[s % iv.len()],
                        _ => categorical(&mut rng, &beta_cols[h]),
                    };
                    for (j, x) in slice.iter_mut().enumerate() {
                        *x = self.alpha(j, h, i);
                    }
                    (i, categorical(&mut rng, &slice))
                })
                .collect::<Vec<_>>()
        });
        Ok(chunks.into_iter().flatten().collect())
    }

    /// Samples as a one-hot embedded dataset (`d_i = M`, `d_j = N`).
    pub fn sample(
        &self,
        n: usize,
        mode: Mode,
        interventions: Option<&[usize]>,
        seed: u64,
    ) -> Result<CausalDataset> {
        let pairs = self.sample_values(n, mode, interventions, seed)?;
        Ok(self.embed_pairs(&pairs, mode, seed))
    }

    pub fn embed_pairs(&self, pairs: &[(usize, usize)], mode: Mode, seed: u64) -> CausalDataset {
        let mut causes = vec![0.0f32; pairs.len() * self.m];
        let mut effects = vec![0.0f32; pairs.len() * self.n];
        for (s, &(i, j)) in pairs.iter().enumerate() {
            causes[s * self.m + i] = 1.0;
            effects[s * self.n + j] = 1.0;
        }
        CausalDataset::new(mode, seed, self.m, self.n, causes, effects).expect("shapes agree")
    }

    /// Exact conditional density over one-hot vectors.
    pub fn oracle_density(&self, mode: Mode) -> CategoricalDensity {
        let table = match mode {
            Mode::Experimental => self.interventional_table(),
            Mode::Observational => self
                .observational_table()
                .into_iter()
                .map(|r| r.unwrap_or_else(|| vec![0.0; self.n]))
                .collect(),
        };
        CategoricalDensity { table }
    }

    /// Smallest sup-norm gap between distinct causal classes on either side.
    pub fn causal_separation(&self, tol: f64) -> Result<f64> {
        let gt = self.ground_truth_partitions(tol)?;
        let inter = self.interventional_table();
        let mut gap = f64::INFINITY;
        for a in 0..self.m {
            for b in (a + 1)..self.m {
                if !gt.causal_i.same_cell(a, b) {
                    gap = gap.min(sup_distance(&inter[a], &inter[b]));
                }
            }
        }
        for a in 0..self.n {
            for b in (a + 1)..self.n {
                if !gt.causal_j.same_cell(a, b) {
                    let d = inter.iter().map(|r| (r[a] - r[b]).abs()).fold(0.0, f64::max);
                    gap = gap.min(d);
                }
            }
        }
        Ok(gap)
    }
}

fn renormalize(beta: &mut [f64], m: usize, k: usize) {
    for h in 0..k {
        let s: f64 = (0..m).map(|i| beta[i * k + h]).sum();
        for i in 0..m {
            beta[i * k + h] /= s;
        }
    }
}

/// Structure planted by [`DiscreteMlSystem::planted`].
#[derive(Clone, Debug)]
pub struct PlantedSpec {
    pub causal_i: Partition,
    pub obs_i: Partition,
    pub causal_j: Partition,
    pub k: usize,
}

/// Decodes a one-hot vector to its index (argmax).
pub fn decode_one_hot(v: &[f32]) -> usize {
    v.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(k, _)| k)
}

/// Value pairs of a one-hot embedded dataset.
pub fn decode_pairs(data: &CausalDataset) -> Vec<(usize, usize)> {
    (0..data.len())
        .map(|s| (decode_one_hot(data.cause(s)), decode_one_hot(data.effect(s))))
        .collect()
}

/// Exact categorical `P(j | i)` table exposed as a [`ConditionalDensity`]
/// over one-hot micro-vectors.
#[derive(Clone, Debug)]
pub struct CategoricalDensity {
    table: Vec<Vec<f64>>,
}

impl CategoricalDensity {
    pub fn from_table(table: Vec<Vec<f64>>) -> Self {
        CategoricalDensity { table }
    }

    pub fn table(&self) -> &[Vec<f64>] {
        &self.table
    }
}

impl ConditionalDensity for CategoricalDensity {
    fn cause_dim(&self) -> usize {
        self.table.len()
    }

    fn effect_dim(&self) -> usize {
        self.table.first().map_or(0, |r| r.len())
    }

    fn cause_embedding(&self) -> Embedding {
        Embedding::Identity {
            dim: self.cause_dim(),
        }
    }

    fn effect_embedding(&self) -> Embedding {
        Embedding::Identity {
            dim: self.effect_dim(),
        }
    }

    fn score(&self, i: &[f32], j: &[f32]) -> Result<f64> {
        if i.len() != self.cause_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.cause_dim(),
                got: i.len(),
            });
        }
        if j.len() != self.effect_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.effect_dim(),
                got: j.len(),
            });
        }
        Ok(self.table[decode_one_hot(i)][decode_one_hot(j)])
    }
}
