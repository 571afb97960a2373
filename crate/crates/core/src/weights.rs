//! Sparse spatial weight matrices.
//!
//! Weights are stored as sorted `(row, col, w)` triplets with no diagonal
//! entries. Row sums are always recomputed from the entries. The module also
//! provides the per-unit attenuation `δ_i(ρ) = 1 − ρ·w_i·` used by the
//! likelihoods and the solve `(I − ρW)x = v` used by the simulation.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, StsfaError};

/// Margin keeping `δ` strictly positive at the edge of the admissible ρ range.
pub const RHO_MARGIN: f64 = 1e-6;

const DENSE_SOLVE_MAX_N: usize = 500;
const SOLVE_TOL: f64 = 1e-10;
const SOLVE_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialWeights {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
    row_sums: Vec<f64>,
    standardized: bool,
    unit_ids: Option<Vec<String>>,
}

impl SpatialWeights {
    /// Validates and canonicalizes a triplet list. Duplicate `(i, j)` pairs are
    /// rejected rather than summed.
    pub fn from_triplets(n: usize, mut entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        for &(i, j, w) in &entries {
            if i >= n || j >= n {
                return Err(StsfaError::Invalid(format!(
                    "entry ({i},{j}) out of range for n={n}"
                )));
            }
            if i == j {
                return Err(StsfaError::Invalid(format!("diagonal entry at unit {i}")));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(StsfaError::Invalid(format!(
                    "weight {w} at ({i},{j}) is not finite and >= 0"
                )));
            }
        }
        entries.retain(|&(_, _, w)| w != 0.0);
        entries.sort_by_key(|&(i, j, _)| (i, j));
        if let Some(pair) = entries
            .windows(2)
            .find(|p| (p[0].0, p[0].1) == (p[1].0, p[1].1))
        {
            return Err(StsfaError::Invalid(format!(
                "duplicate entry ({},{})",
                pair[0].0, pair[0].1
            )));
        }
        let row_sums = row_sums(n, &entries);
        Ok(SpatialWeights {
            n,
            entries,
            row_sums,
            standardized: false,
            unit_ids: None,
        })
    }

    /// Attaches unit identifiers used for alignment checks against a panel.
    pub fn with_unit_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.n {
            return Err(StsfaError::Shape(format!(
                "{} unit ids for a {}-unit weight matrix",
                ids.len(),
                self.n
            )));
        }
        self.unit_ids = Some(ids);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn row_sums(&self) -> &[f64] {
        &self.row_sums
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    pub fn unit_ids(&self) -> Option<&[String]> {
        self.unit_ids.as_deref()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries
            .binary_search_by(|e| (e.0, e.1).cmp(&(i, j)))
            .map(|k| self.entries[k].2)
            .unwrap_or(0.0)
    }

    pub fn row(&self, i: usize) -> &[(usize, usize, f64)] {
        let start = self.entries.partition_point(|e| e.0 < i);
        let end = self.entries.partition_point(|e| e.0 <= i);
        &self.entries[start..end]
    }

    /// Units with no neighbours.
    pub fn empty_rows(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| self.row_sums[i] == 0.0).collect()
    }

    pub fn is_symmetric(&self) -> bool {
        self.entries.iter().all(|&(i, j, w)| self.get(j, i) == w)
    }

    /// Divides every nonempty row by its sum. Empty rows stay empty.
    pub fn row_standardize(&self) -> SpatialWeights {
        let entries = self
            .entries
            .iter()
            .map(|&(i, j, w)| (i, j, w / self.row_sums[i]))
            .collect::<Vec<_>>();
        let row_sums = row_sums(self.n, &entries);
        SpatialWeights {
            n: self.n,
            entries,
            row_sums,
            standardized: true,
            unit_ids: self.unit_ids.clone(),
        }
    }

    /// `δ_i(ρ) = 1 − ρ·w_i·`; errors name every unit with `δ_i ≤ 0`.
    pub fn delta(&self, rho: f64) -> Result<Vec<f64>> {
        let d: Vec<f64> = self.row_sums.iter().map(|&s| 1.0 - rho * s).collect();
        let bad: Vec<usize> = d
            .iter()
            .enumerate()
            .filter(|(_, &v)| !(v > 0.0))
            .map(|(i, _)| i)
            .collect();
        if bad.is_empty() {
            Ok(d)
        } else {
            Err(StsfaError::DeltaDomain { rho, units: bad })
        }
    }

    /// Open interval of ρ values for which every `δ_i` stays at least
    /// `RHO_MARGIN` away from zero and |ρ| < 1.
    pub fn rho_bounds(&self) -> (f64, f64) {
        let max_sum = self.row_sums.iter().cloned().fold(0.0, f64::max);
        let hi = (1.0 - RHO_MARGIN) / max_sum.max(1.0);
        (-hi, hi)
    }

    /// True when every unit has the same row sum, so δ is the same scalar for
    /// all units and ρ enters the likelihood only through `σ²_ũ/δ²`.
    pub fn has_uniform_delta(&self) -> bool {
        let first = self.row_sums.first().copied().unwrap_or(0.0);
        self.row_sums
            .iter()
            .all(|&s| (s - first).abs() <= 1e-12 * first.abs().max(1.0))
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for &(i, j, w) in &self.entries {
            out[i] += w * v[j];
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for &(i, j, w) in &self.entries {
            m[(i, j)] = w;
        }
        m
    }

    /// Solves `(I − ρW)x = v`. Dense LU up to 500 units, fixed-point iteration
    /// `x ← v + ρWx` above that.
    pub fn spatial_inverse_apply(&self, rho: f64, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.n {
            return Err(StsfaError::Shape(format!(
                "vector of length {} for n={}",
                v.len(),
                self.n
            )));
        }
        if rho == 0.0 || self.entries.is_empty() {
            return Ok(v.to_vec());
        }
        let x = if self.n <= DENSE_SOLVE_MAX_N {
            let a = DMatrix::identity(self.n, self.n) - self.to_dense() * rho;
            let b = DVector::from_column_slice(v);
            a.lu()
                .solve(&b)
                .ok_or_else(|| StsfaError::Solve(format!("I - ρW singular at ρ={rho}")))?
                .as_slice()
                .to_vec()
        } else {
            self.iterative_solve(rho, v)?
        };
        let resid = self.residual_norm(rho, &x, v);
        let scale = norm(v).max(f64::MIN_POSITIVE);
        if resid > SOLVE_TOL * scale && resid > 0.0 {
            return Err(StsfaError::Solve(format!(
                "relative residual {:.3e} exceeds {SOLVE_TOL:e}",
                resid / scale
            )));
        }
        Ok(x)
    }

    fn iterative_solve(&self, rho: f64, v: &[f64]) -> Result<Vec<f64>> {
        let mut x = v.to_vec();
        let scale = norm(v).max(f64::MIN_POSITIVE);
        for _ in 0..SOLVE_MAX_ITER {
            let wx = self.mul_vec(&x);
            let next: Vec<f64> = v.iter().zip(&wx).map(|(vi, wi)| vi + rho * wi).collect();
            let step = norm(&next.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>());
            x = next;
            if step <= 0.1 * SOLVE_TOL * scale {
                return Ok(x);
            }
        }
        Err(StsfaError::Solve(format!(
            "fixed-point iteration did not converge in {SOLVE_MAX_ITER} steps at ρ={rho}"
        )))
    }

    fn residual_norm(&self, rho: f64, x: &[f64], v: &[f64]) -> f64 {
        let wx = self.mul_vec(x);
        let r: Vec<f64> = (0..self.n).map(|i| x[i] - rho * wx[i] - v[i]).collect();
        norm(&r)
    }

    /// Moran's I of `v` under these weights.
    pub fn moran_i(&self, v: &[f64]) -> f64 {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let z: Vec<f64> = v.iter().map(|x| x - mean).collect();
        let s0: f64 = self.entries.iter().map(|e| e.2).sum();
        let zz: f64 = z.iter().map(|x| x * x).sum();
        if s0 == 0.0 || zz == 0.0 {
            return 0.0;
        }
        let zwz: f64 = self.entries.iter().map(|&(i, j, w)| w * z[i] * z[j]).sum();
        n / s0 * zwz / zz
    }

    /// Reorders units consistently with [`crate::panel::PanelDataset::permute_units`].
    pub fn permute(&self, perm: &[usize]) -> SpatialWeights {
        let mut inv = vec![0; self.n];
        for (k, &old) in perm.iter().enumerate() {
            inv[old] = k;
        }
        let entries = self
            .entries
            .iter()
            .map(|&(i, j, w)| (inv[i], inv[j], w))
            .collect();
        let mut out =
            SpatialWeights::from_triplets(self.n, entries).expect("permutation keeps validity");
        out.standardized = self.standardized;
        out.unit_ids = self
            .unit_ids
            .as_ref()
            .map(|ids| perm.iter().map(|&old| ids[old].clone()).collect());
        out
    }

    /// Block-diagonal `I_T ⊗ W` laid out unit-major, matching
    /// [`crate::panel::PanelDataset::pooled`].
    pub fn replicate_over_periods(&self, t: usize) -> SpatialWeights {
        let entries = self
            .entries
            .iter()
            .flat_map(|&(i, j, w)| (0..t).map(move |k| (i * t + k, j * t + k, w)))
            .collect();
        let mut out =
            SpatialWeights::from_triplets(self.n * t, entries).expect("replication keeps validity");
        out.standardized = self.standardized;
        out
    }

    /// Checks these weights against the panel's unit order.
    pub fn check_alignment(&self, units: &[String]) -> Result<()> {
        if units.len() != self.n {
            return Err(StsfaError::Misaligned(format!(
                "weights have {} units, data has {}",
                self.n,
                units.len()
            )));
        }
        if let Some(ids) = &self.unit_ids {
            let mismatches: Vec<String> = ids
                .iter()
                .zip(units)
                .enumerate()
                .filter(|(_, (a, b))| a != b)
                .take(10)
                .map(|(k, (a, b))| format!("row {k}: weights `{a}` vs data `{b}`"))
                .collect();
            if !mismatches.is_empty() {
                return Err(StsfaError::Misaligned(mismatches.join("; ")));
            }
        }
        Ok(())
    }

    /// Writes `i,j,w` triplets with a header line.
    pub fn write_triplets<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["i", "j", "w"])?;
        for &(i, j, v) in &self.entries {
            w.write_record(&[i.to_string(), j.to_string(), format!("{v}")])?;
        }
        w.flush().map_err(|e| StsfaError::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn summary(&self) -> WeightsSummary {
        let (min, max) = self
            .row_sums
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| {
                (lo.min(s), hi.max(s))
            });
        WeightsSummary {
            n: self.n,
            nnz: self.nnz(),
            min_row_sum: min,
            max_row_sum: max,
            empty_rows: self.empty_rows().len(),
            standardized: self.standardized,
            symmetric: self.is_symmetric(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsSummary {
    pub n: usize,
    pub nnz: usize,
    pub min_row_sum: f64,
    pub max_row_sum: f64,
    pub empty_rows: usize,
    pub standardized: bool,
    pub symmetric: bool,
}

fn row_sums(n: usize, entries: &[(usize, usize, f64)]) -> Vec<f64> {
    let mut s = vec![0.0; n];
    for &(i, _, w) in entries {
        s[i] += w;
    }
    s
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// k-nearest-neighbour weights with unit entries. Distance ties go to the
/// lower unit index.
pub fn knn_weights(coords: &[[f64; 2]], k: usize) -> Result<SpatialWeights> {
    let n = coords.len();
    if k == 0 {
        return Err(StsfaError::Invalid("k must be positive".into()));
    }
    if k >= n {
        return Err(StsfaError::Invalid(format!(
            "k={k} must be below the number of units {n}"
        )));
    }
    if coords.iter().flatten().any(|c| !c.is_finite()) {
        return Err(StsfaError::Invalid("non-finite coordinate".into()));
    }
    let mut entries = Vec::with_capacity(n * k);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        cand.clear();
        for j in (0..n).filter(|&j| j != i) {
            let dx = coords[i][0] - coords[j][0];
            let dy = coords[i][1] - coords[j][1];
            cand.push((dx * dx + dy * dy, j));
        }
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        entries.extend(cand[..k].iter().map(|&(_, j)| (i, j, 1.0)));
    }
    SpatialWeights::from_triplets(n, entries)
}

/// Weights linking every pair of distinct units sharing a group label.
/// Singleton groups give empty rows, reported in the returned warnings.
pub fn group_contiguity_weights<S: AsRef<str>>(
    groups: &[S],
) -> Result<(SpatialWeights, Vec<String>)> {
    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        members.entry(g.as_ref()).or_default().push(i);
    }
    if !members.values().any(|m| m.len() >= 2) {
        return Err(StsfaError::Invalid("no group has two or more units".into()));
    }
    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    for (label, m) in &members {
        if m.len() == 1 {
            warnings.push(format!(
                "group `{label}` has a single unit ({}); its row is empty",
                m[0]
            ));
        }
        for &i in m {
            entries.extend(m.iter().filter(|&&j| j != i).map(|&j| (i, j, 1.0)));
        }
    }
    Ok((
        SpatialWeights::from_triplets(groups.len(), entries)?,
        warnings,
    ))
}

fn is_header(rec: &csv::StringRecord) -> bool {
    rec.get(0)
        .map(|f| f.trim().parse::<f64>().is_err())
        .unwrap_or(false)
}

fn parse_num<T: std::str::FromStr>(s: &str, row: usize, col: &str) -> Result<T> {
    s.trim().parse::<T>().map_err(|_| StsfaError::NonNumeric {
        column: col.to_string(),
        row,
        value: s.to_string(),
    })
}

fn open(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| StsfaError::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file))
}

/// Reads a 0-based `i,j,w` triplet file (header optional). `n` defaults to the
/// largest index plus one.
pub fn read_triplets(path: &Path, n: Option<usize>) -> Result<SpatialWeights> {
    let mut rdr = open(path)?;
    let mut entries = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if row == 0 && is_header(&rec) {
            continue;
        }
        if rec.len() != 3 {
            return Err(StsfaError::Invalid(format!(
                "triplet row {row} has {} fields",
                rec.len()
            )));
        }
        entries.push((
            parse_num::<usize>(&rec[0], row, "i")?,
            parse_num::<usize>(&rec[1], row, "j")?,
            parse_num::<f64>(&rec[2], row, "w")?,
        ));
    }
    let inferred = entries.iter().map(|e| e.0.max(e.1) + 1).max().unwrap_or(0);
    let n = n.unwrap_or(inferred);
    SpatialWeights::from_triplets(n, entries)
}

/// Reads a `unit_id,group` file (header optional) and builds group-contiguity
/// weights carrying the unit ids in file order.
pub fn read_groups(path: &Path) -> Result<(SpatialWeights, Vec<String>)> {
    let mut rdr = open(path)?;
    let mut ids = Vec::new();
    let mut groups = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if row == 0 && rec.get(0).map(|s| s.trim()) == Some("unit_id") {
            continue;
        }
        if rec.len() != 2 {
            return Err(StsfaError::Invalid(format!(
                "group row {row} has {} fields",
                rec.len()
            )));
        }
        ids.push(rec[0].trim().to_string());
        groups.push(rec[1].trim().to_string());
    }
    let (w, warnings) = group_contiguity_weights(&groups)?;
    Ok((w.with_unit_ids(ids)?, warnings))
}

/// Reads a dense square matrix with no header.
pub fn read_dense(path: &Path) -> Result<SpatialWeights> {
    let mut rdr = open(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        rows.push(
            rec.iter()
                .map(|s| parse_num::<f64>(s, row, "dense"))
                .collect::<Result<_>>()?,
        );
    }
    let n = rows.len();
    if n > DENSE_SOLVE_MAX_N {
        return Err(StsfaError::Invalid(format!(
            "dense weight files are limited to {DENSE_SOLVE_MAX_N} units"
        )));
    }
    let mut entries = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != n {
            return Err(StsfaError::Shape(format!(
                "dense row {i} has {} columns, expected {n}",
                r.len()
            )));
        }
        entries.extend(
            r.iter()
                .enumerate()
                .filter(|(_, &w)| w != 0.0)
                .map(|(j, &w)| (i, j, w)),
        );
    }
    SpatialWeights::from_triplets(n, entries)
}

/// Reads `unit_id,x,y` coordinates (header optional).
pub fn read_coords(path: &Path) -> Result<(Vec<String>, Vec<[f64; 2]>)> {
    let mut rdr = open(path)?;
    let mut ids = Vec::new();
    let mut coords = Vec::new();
    let mut seen = HashMap::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(StsfaError::Invalid(format!(
                "coordinate row {row} has {} fields",
                rec.len()
            )));
        }
        if row == 0 && rec[1].trim().parse::<f64>().is_err() {
            continue;
        }
        let id = rec[0].trim().to_string();
        if seen.insert(id.clone(), ()).is_some() {
            return Err(StsfaError::Invalid(format!("duplicate unit id `{id}`")));
        }
        ids.push(id);
        coords.push([parse_num(&rec[1], row, "x")?, parse_num(&rec[2], row, "y")?]);
    }
    Ok((ids, coords))
}
