//! Principal-subspace reducers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::{dot, orthonormalize_columns, symmetric_eigen};
use crate::rng::seeded;
use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};

/// Eigenvalues below this fraction of the largest one count as zero variance.
const RELATIVE_RANK_TOL: f64 = 1e-9;
const SUBSPACE_ITERATIONS: usize = 20;
const OVERSAMPLING: usize = 8;

/// Linear projection `z = W (x - mean)` onto the top principal directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reducer {
    input_dim: usize,
    mean: Vec<f64>,
    /// `dim × input_dim`, rows orthonormal.
    components: Vec<f64>,
    variances: Vec<f64>,
}

impl Reducer {
    /// Fits on the rows of `data` (`n × input_dim`, row-major), keeping at most
    /// `d` directions. Directions with numerically zero variance are dropped,
    /// so the fitted dimension may be smaller than `d` (possibly zero).
    ///
    /// Directions are estimated from at most `fit_cap` rows chosen with
    /// `seed`; the mean uses all rows.
    pub fn fit(data: &[f32], input_dim: usize, d: usize, fit_cap: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::invalid("input dimension must be positive"));
        }
        if !data.len().is_multiple_of(input_dim) {
            return Err(Error::DimensionMismatch {
                expected: input_dim,
                got: data.len() % input_dim,
            });
        }
        let n = data.len() / input_dim;
        if n == 0 {
            return Err(Error::SampleSize("cannot fit a reducer on zero rows".into()));
        }
        let mut mean = vec![0.0; input_dim];
        for row in data.chunks_exact(input_dim) {
            for (m, &x) in mean.iter_mut().zip(row) {
                *m += x as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);

        let rows: Vec<usize> = if n > fit_cap.max(2) {
            let mut rng = seeded(seed);
            let mut idx = sample(&mut rng, n, fit_cap.max(2)).into_vec();
            idx.sort_unstable();
            idx
        } else {
            (0..n).collect()
        };
        let ns = rows.len();
        let mut x = vec![0.0; ns * input_dim];
        for (r, &src) in rows.iter().enumerate() {
            let row = &data[src * input_dim..(src + 1) * input_dim];
            for (k, &v) in row.iter().enumerate() {
                x[r * input_dim + k] = v as f64 - mean[k];
            }
        }

        let p = (d + OVERSAMPLING).min(ns).min(input_dim);
        if d == 0 || p == 0 {
            return Ok(Reducer {
                input_dim,
                mean,
                components: Vec::new(),
                variances: Vec::new(),
            });
        }

        // Starting block X^T R: mixing over samples keeps the result
        // equivariant under permutations of the input coordinates.
        let mut rng = seeded(seed ^ 0x5eed);
        let r: Vec<f64> = (0..ns * p).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut v = xt_times(&x, ns, input_dim, &r, p);
        orthonormalize_columns(&mut v, input_dim, p);
        for _ in 0..SUBSPACE_ITERATIONS {
            let y = x_times(&x, ns, input_dim, &v, p);
            v = xt_times(&x, ns, input_dim, &y, p);
            orthonormalize_columns(&mut v, input_dim, p);
        }

        // Rayleigh-Ritz on the converged block.
        let y = x_times(&x, ns, input_dim, &v, p);
        let denom = (ns.max(2) - 1) as f64;
        let mut b = vec![0.0; p * p];
        for row in y.chunks_exact(p) {
            for a in 0..p {
                for c in 0..p {
                    b[a * p + c] += row[a] * row[c];
                }
            }
        }
        b.iter_mut().for_each(|e| *e /= denom);
        let (vals, vecs) = symmetric_eigen(&b, p);
        let top = vals.first().copied().unwrap_or(0.0);
        let keep: Vec<usize> = (0..p.min(d))
            .filter(|&k| vals[k] > 0.0 && vals[k] > RELATIVE_RANK_TOL * top)
            .collect();

        let mut components = Vec::with_capacity(keep.len() * input_dim);
        let mut variances = Vec::with_capacity(keep.len());
        for &k in &keep {
            let q = &vecs[k * p..(k + 1) * p];
            let mut comp: Vec<f64> = (0..input_dim).map(|row| dot(&v[row * p..(row + 1) * p], q)).collect();
            let norm = dot(&comp, &comp).sqrt();
            comp.iter_mut().for_each(|c| *c /= norm);
            // Sign convention: the largest-magnitude entry is positive.
            let pivot = comp
                .iter()
                .copied()
                .fold(0.0f64, |best, c| if c.abs() > best.abs() { c } else { best });
            if pivot < 0.0 {
                comp.iter_mut().for_each(|c| *c = -*c);
            }
            components.extend(comp);
            variances.push(vals[k]);
        }
        Ok(Reducer {
            input_dim,
            mean,
            components,
            variances,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Number of retained directions.
    pub fn dim(&self) -> usize {
        self.variances.len()
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub(crate) fn from_parts(input_dim: usize, mean: Vec<f64>, components: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if mean.len() != input_dim || components.len() != variances.len() * input_dim {
            return Err(Error::invalid("inconsistent reducer arrays"));
        }
        Ok(Reducer {
            input_dim,
            mean,
            components,
            variances,
        })
    }

    pub fn project(&self, x: &[f32]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(&v, m)| v as f64 - m).collect();
        Ok(self
            .components
            .chunks_exact(self.input_dim)
            .map(|c| dot(c, &centered))
            .collect())
    }

    /// Projects every row of `data`; returns `n × dim` row-major.
    pub fn project_rows(&self, data: &[f32]) -> Result<Vec<f64>> {
        if !data.len().is_multiple_of(self.input_dim) {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: data.len() % self.input_dim,
            });
        }
        let rows: Vec<&[f32]> = data.chunks_exact(self.input_dim).collect();
        let out = exec::map_slice(&rows, |r| self.project(r).expect("row width checked"));
        Ok(out.into_iter().flatten().collect())
    }
}

/// `X V` for `X: n × dim`, `V: dim × p`.
fn x_times(x: &[f64], n: usize, dim: usize, v: &[f64], p: usize) -> Vec<f64> {
    let rows = exec::map_range(n, |r| {
        let mut out = vec![0.0; p];
        let xr = &x[r * dim..(r + 1) * dim];
        for (k, &xv) in xr.iter().enumerate() {
            if xv != 0.0 {
                crate::linalg::axpy(xv, &v[k * p..(k + 1) * p], &mut out);
            }
        }
        out
    });
    rows.into_iter().flatten().collect()
}

/// `X^T Y` for `X: n × dim`, `Y: n × p`.
fn xt_times(x: &[f64], n: usize, dim: usize, y: &[f64], p: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim * p];
    exec::for_each_row_mut(&mut out, p, |k, row| {
        for r in 0..n {
            let xv = x[r * dim + k];
            if xv != 0.0 {
                crate::linalg::axpy(xv, &y[r * p..(r + 1) * p], row);
            }
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn anisotropic(n: usize, seed: u64) -> Vec<f32> {
        // Variances 9, 4, 1, 0 along axes 2, 0, 3, 1.
        let mut rng = seeded(seed);
        let mut out = Vec::with_capacity(n * 4);
        for _ in 0..n {
            let g: [f64; 3] = [
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            ];
            out.extend([2.0 * g[0], 0.0, 3.0 * g[1], g[2]].map(|v| v as f32 + 1.0));
        }
        out
    }

    #[test]
    fn recovers_axes_and_drops_constant_dims() {
        let data = anisotropic(4000, 3);
        let red = Reducer::fit(&data, 4, 4, 4000, 1).unwrap();
        assert_eq!(red.dim(), 3);
        let c = red.components();
        assert!((c[2] - 1.0).abs() < 0.05);
        assert!((c[4] - 1.0).abs() < 0.05);
        assert!((c[8 + 3] - 1.0).abs() < 0.05);
        assert!((red.variances()[0] - 9.0).abs() < 0.6);
        assert!((red.mean()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn components_orthonormal() {
        let mut rng = seeded(9);
        let data: Vec<f32> = (0..300 * 12).map(|_| rng.random::<f32>()).collect();
        let red = Reducer::fit(&data, 12, 5, 300, 2).unwrap();
        let c = red.components();
        for a in 0..5 {
            for b in 0..5 {
                let d = dot(&c[a * 12..(a + 1) * 12], &c[b * 12..(b + 1) * 12]);
                assert!((d - if a == b { 1.0 } else { 0.0 }).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn constant_data_has_zero_dims() {
        let data = vec![0.5f32; 50 * 3];
        let red = Reducer::fit(&data, 3, 2, 100, 0).unwrap();
        assert_eq!(red.dim(), 0);
        assert!(red.project(&[1.0, 2.0, 3.0]).unwrap().is_empty());
    }

    #[test]
    fn coordinate_permutation_is_equivariant() {
        let data = anisotropic(500, 5);
        let perm = [3usize, 0, 2, 1];
        let permuted: Vec<f32> = data
            .chunks_exact(4)
            .flat_map(|r| perm.map(|p| r[p]))
            .collect();
        let a = Reducer::fit(&data, 4, 3, 500, 7).unwrap();
        let b = Reducer::fit(&permuted, 4, 3, 500, 7).unwrap();
        let pa = a.project_rows(&data).unwrap();
        let pb = b.project_rows(&permuted).unwrap();
        for (x, y) in pa.iter().zip(&pb) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn project_checks_width() {
        let red = Reducer::fit(&anisotropic(50, 1), 4, 2, 50, 0).unwrap();
        assert!(red.project(&[0.0; 3]).is_err());
    }
}
