//! Paired micro-level samples and their on-disk format.
//!
//! A dataset directory holds `manifest.json`, two row-major little-endian
//! float32 files (`stimuli.f32` for I, `responses.f32` for J) and optionally a
//! ground-truth sidecar `truth.csv`. The sidecar is a separate type; nothing
//! that takes a [`CausalDataset`] can see it.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const STIMULI_FILE: &str = "stimuli.f32";
pub const RESPONSES_FILE: &str = "responses.f32";
pub const TRUTH_FILE: &str = "truth.csv";

/// How the samples were generated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// `i` chosen by the experimenter, `j ~ P(J | man(i))`.
    Experimental,
    /// `(i, j) ~ P(I, J)`.
    Observational,
}

/// N paired samples `(i_k, j_k)` of flattened micro-vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct CausalDataset {
    mode: Mode,
    seed: u64,
    d_i: usize,
    d_j: usize,
    causes: Vec<f32>,
    effects: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub n: usize,
    pub d_i: usize,
    pub d_j: usize,
    pub dtype: String,
    pub mode: Mode,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl CausalDataset {
    pub fn new(
        mode: Mode,
        seed: u64,
        d_i: usize,
        d_j: usize,
        causes: Vec<f32>,
        effects: Vec<f32>,
    ) -> Result<Self> {
        let n_i = causes.len().checked_div(d_i).unwrap_or(0);
        let n_j = effects.len().checked_div(d_j).unwrap_or(0);
        if d_i == 0 || d_j == 0 {
            if !causes.is_empty() || !effects.is_empty() {
                return Err(Error::invalid("zero-width micro-vectors with data"));
            }
        } else if !causes.len().is_multiple_of(d_i) || !effects.len().is_multiple_of(d_j) || n_i != n_j {
            return Err(Error::invalid(format!(
                "row counts differ: {} cause values (d_i={d_i}), {} effect values (d_j={d_j})",
                causes.len(),
                effects.len()
            )));
        }
        Ok(CausalDataset {
            mode,
            seed,
            d_i,
            d_j,
            causes,
            effects,
        })
    }

    pub fn empty(mode: Mode, seed: u64, d_i: usize, d_j: usize) -> Self {
        CausalDataset {
            mode,
            seed,
            d_i,
            d_j,
            causes: Vec::new(),
            effects: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.causes.len().checked_div(self.d_i).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn d_i(&self) -> usize {
        self.d_i
    }

    pub fn d_j(&self) -> usize {
        self.d_j
    }

    pub fn cause(&self, k: usize) -> &[f32] {
        &self.causes[k * self.d_i..(k + 1) * self.d_i]
    }

    pub fn effect(&self, k: usize) -> &[f32] {
        &self.effects[k * self.d_j..(k + 1) * self.d_j]
    }

    /// All cause vectors, row-major.
    pub fn causes(&self) -> &[f32] {
        &self.causes
    }

    pub fn effects(&self) -> &[f32] {
        &self.effects
    }

    /// A new dataset holding the given rows, in order.
    pub fn subset(&self, rows: &[usize]) -> CausalDataset {
        let mut causes = Vec::with_capacity(rows.len() * self.d_i);
        let mut effects = Vec::with_capacity(rows.len() * self.d_j);
        for &k in rows {
            causes.extend_from_slice(self.cause(k));
            effects.extend_from_slice(self.effect(k));
        }
        CausalDataset {
            causes,
            effects,
            ..*self
        }
    }

    /// Applies one fixed permutation to the coordinates of every effect vector:
    /// new coordinate `c` takes old coordinate `perm[c]`.
    pub fn permute_effect_coordinates(&self, perm: &[usize]) -> Result<CausalDataset> {
        check_permutation(perm, self.d_j)?;
        let mut effects = Vec::with_capacity(self.effects.len());
        for k in 0..self.len() {
            let row = self.effect(k);
            effects.extend(perm.iter().map(|&p| row[p]));
        }
        Ok(CausalDataset {
            effects,
            causes: self.causes.clone(),
            ..*self
        })
    }

    /// Concatenates datasets with matching shapes and mode.
    pub fn concat(parts: &[CausalDataset]) -> Result<CausalDataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("nothing to concatenate"))?;
        let mut causes = Vec::new();
        let mut effects = Vec::new();
        for p in parts {
            if p.d_i != first.d_i || p.d_j != first.d_j || p.mode != first.mode {
                return Err(Error::invalid("datasets differ in shape or mode"));
            }
            causes.extend_from_slice(&p.causes);
            effects.extend_from_slice(&p.effects);
        }
        Ok(CausalDataset {
            causes,
            effects,
            ..*first
        })
    }

    pub fn manifest(&self, config_hash: Option<String>) -> Manifest {
        Manifest {
            n: self.len(),
            d_i: self.d_i,
            d_j: self.d_j,
            dtype: "f32le".to_string(),
            mode: self.mode,
            seed: self.seed,
            config_hash,
        }
    }

    /// Writes manifest and binaries into `dir` (created if missing).
    pub fn write_dir(&self, dir: &Path, config_hash: Option<String>) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = self.manifest(config_hash);
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
        write_f32_le(&dir.join(STIMULI_FILE), &self.causes)?;
        write_f32_le(&dir.join(RESPONSES_FILE), &self.effects)?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<CausalDataset> {
        let path = dir.join(MANIFEST_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_slice(&bytes)?;
        if manifest.dtype != "f32le" {
            return Err(Error::Format {
                path,
                detail: format!("unsupported dtype {:?}", manifest.dtype),
            });
        }
        let causes = read_f32_le(&dir.join(STIMULI_FILE), manifest.n * manifest.d_i)?;
        let effects = read_f32_le(&dir.join(RESPONSES_FILE), manifest.n * manifest.d_j)?;
        CausalDataset::new(
            manifest.mode,
            manifest.seed,
            manifest.d_i,
            manifest.d_j,
            causes,
            effects,
        )
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: perm.len(),
        });
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::invalid("not a permutation"));
        }
    }
    Ok(())
}

pub fn write_f32_le(path: &Path, values: &[f32]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for v in values {
        w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_f32_le(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 4 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("expected {} bytes, found {}", expected * 4, bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Integer-valued ground-truth labels, one row per sample.
///
/// Only evaluation and report code reads these.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TruthTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<i64>>,
}

impl TruthTable {
    pub fn new(columns: &[&str]) -> Self {
        TruthTable {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, row: Vec<i64>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::DimensionMismatch {
                expected: self.columns.len(),
                got: row.len(),
            });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<Vec<i64>> {
        let c = self.columns.iter().position(|x| x == name)?;
        Some(self.rows.iter().map(|r| r[c]).collect())
    }

    pub fn subset(&self, rows: &[usize]) -> TruthTable {
        TruthTable {
            columns: self.columns.clone(),
            rows: rows.iter().map(|&k| self.rows[k].clone()).collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for r in &self.rows {
            let line: Vec<String> = r.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<TruthTable> {
        let bad = |detail: String| Error::Format {
            path: TRUTH_FILE.into(),
            detail,
        };
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let columns: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        let mut rows = Vec::new();
        for (ln, line) in lines.enumerate() {
            let row: std::result::Result<Vec<i64>, _> =
                line.split(',').map(|s| s.trim().parse::<i64>()).collect();
            let row = row.map_err(|e| bad(format!("line {}: {e}", ln + 2)))?;
            if row.len() != columns.len() {
                return Err(bad(format!("line {}: wrong column count", ln + 2)));
            }
            rows.push(row);
        }
        Ok(TruthTable { columns, rows })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(TRUTH_FILE);
        fs::write(&path, self.to_csv()).map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<TruthTable> {
        let path = dir.join(TRUTH_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        TruthTable::from_csv(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> CausalDataset {
        CausalDataset::new(
            Mode::Experimental,
            9,
            2,
            3,
            vec![1.0, 2.0, 3.0, 4.0],
            vec![0.5, 0.25, -1.0, 7.0, 8.0, 9.0],
        )
        .unwrap()
    }

    #[test]
    fn shape_checks() {
        let d = toy();
        assert_eq!(d.len(), 2);
        assert_eq!(d.cause(1), &[3.0, 4.0]);
        assert_eq!(d.effect(0), &[0.5, 0.25, -1.0]);
        assert!(CausalDataset::new(Mode::Experimental, 0, 2, 3, vec![1.0; 4], vec![1.0; 9]).is_err());
        assert!(CausalDataset::empty(Mode::Observational, 0, 2, 2).is_empty());
    }

    #[test]
    fn disk_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let d = toy();
        d.write_dir(dir.path(), Some("abc".into())).unwrap();
        let back = CausalDataset::read_dir(dir.path()).unwrap();
        assert_eq!(back, d);
        let manifest: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(manifest["dtype"], "f32le");
        assert_eq!(manifest["mode"], "experimental");
        assert_eq!(manifest["n"], 2);
        assert_eq!(fs::read(dir.path().join(STIMULI_FILE)).unwrap().len(), 16);
        assert_eq!(&fs::read(dir.path().join(STIMULI_FILE)).unwrap()[..4], &1.0f32.to_le_bytes());
    }

    #[test]
    fn truncated_binary_rejected() {
        let dir = tempfile::tempdir().unwrap();
        toy().write_dir(dir.path(), None).unwrap();
        fs::write(dir.path().join(RESPONSES_FILE), [0u8; 10]).unwrap();
        assert!(matches!(
            CausalDataset::read_dir(dir.path()),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn permutation_and_subset() {
        let d = toy();
        let p = d.permute_effect_coordinates(&[2, 0, 1]).unwrap();
        assert_eq!(p.effect(0), &[-1.0, 0.5, 0.25]);
        assert!(d.permute_effect_coordinates(&[0, 0, 1]).is_err());
        let s = d.subset(&[1]);
        assert_eq!(s.len(), 1);
        assert_eq!(s.effect(0), &[7.0, 8.0, 9.0]);
    }

    #[test]
    fn truth_csv() {
        let mut t = TruthTable::new(&["index", "cause"]);
        t.rows.push(vec![0, 3]);
        t.rows.push(vec![1, -1]);
        let back = TruthTable::from_csv(&t.to_csv()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.column("cause").unwrap(), vec![3, -1]);
        assert!(TruthTable::from_csv("a,b\n1\n").is_err());
    }
}
