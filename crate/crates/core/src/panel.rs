//! Balanced panel datasets: CSV ingestion, balance validation and the
//! regression design (output matrix and input array with optional intercept).
//!
//! Storage is row-major over units then periods: `y[i * T + t]` and
//! `x[(i * T + t) * P + p]`. Unit order is first-appearance order in the
//! source file and is the canonical order that spatial weights must follow.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, StsfaError};

pub const INTERCEPT: &str = "(Intercept)";

/// Column-role mapping used by [`load_panel_csv`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelSchema {
    pub unit: String,
    pub time: String,
    pub output: String,
    pub inputs: Vec<String>,
    pub intercept: bool,
}

/// One parsed CSV record before the panel is assembled.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub unit: String,
    pub time: String,
    pub y: f64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub n_units: usize,
    pub n_periods: usize,
    pub missing_cells: Vec<(String, String)>,
    pub duplicate_cells: Vec<(String, String)>,
}

impl BalanceReport {
    pub fn is_balanced(&self) -> bool {
        self.missing_cells.is_empty() && self.duplicate_cells.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    unit_ids: Vec<String>,
    time_ids: Vec<String>,
    output_name: String,
    column_names: Vec<String>,
    y: Vec<f64>,
    x: Vec<f64>,
}

impl PanelDataset {
    /// Builds a dataset from row-major buffers, checking every invariant.
    pub fn new(
        unit_ids: Vec<String>,
        time_ids: Vec<String>,
        output_name: impl Into<String>,
        column_names: Vec<String>,
        y: Vec<f64>,
        x: Vec<f64>,
    ) -> Result<Self> {
        let n = unit_ids.len();
        let t = time_ids.len();
        let p = column_names.len();
        if n < 1 || t < 1 || p < 1 {
            return Err(StsfaError::Invalid(format!(
                "panel needs N >= 1, T >= 1, P >= 1 (got N={n}, T={t}, P={p})"
            )));
        }
        if y.len() != n * t {
            return Err(StsfaError::Shape(format!(
                "y has {} values, expected {}",
                y.len(),
                n * t
            )));
        }
        if x.len() != n * t * p {
            return Err(StsfaError::Shape(format!(
                "x has {} values, expected {}",
                x.len(),
                n * t * p
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(StsfaError::Invalid(format!(
                "non-finite output at cell {i}"
            )));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(StsfaError::Invalid(format!(
                "non-finite input at position {i}"
            )));
        }
        check_distinct(&unit_ids, "unit")?;
        check_distinct(&time_ids, "time")?;
        if !is_strictly_increasing(&time_ids) {
            return Err(StsfaError::Invalid(
                "time ids are not strictly increasing".into(),
            ));
        }
        Ok(PanelDataset {
            unit_ids,
            time_ids,
            output_name: output_name.into(),
            column_names,
            y,
            x,
        })
    }

    pub fn n(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn t(&self) -> usize {
        self.time_ids.len()
    }

    pub fn p(&self) -> usize {
        self.column_names.len()
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn time_ids(&self) -> &[String] {
        &self.time_ids
    }

    pub fn output_name(&self) -> &str {
        &self.output_name
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    /// Output matrix, row-major N×T.
    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Input array, row-major N×T×P.
    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y_at(&self, i: usize, t: usize) -> f64 {
        self.y[i * self.t() + t]
    }

    pub fn x_row(&self, i: usize, t: usize) -> &[f64] {
        let p = self.p();
        let start = (i * self.t() + t) * p;
        &self.x[start..start + p]
    }

    pub fn has_intercept(&self) -> bool {
        self.column_names.first().map(String::as_str) == Some(INTERCEPT)
    }

    /// Treats every (unit, period) cell as its own unit with a single period.
    pub fn pooled(&self) -> PanelDataset {
        let mut unit_ids = Vec::with_capacity(self.n() * self.t());
        for u in &self.unit_ids {
            for t in &self.time_ids {
                unit_ids.push(format!("{u}@{t}"));
            }
        }
        PanelDataset {
            unit_ids,
            time_ids: vec!["pooled".to_string()],
            output_name: self.output_name.clone(),
            column_names: self.column_names.clone(),
            y: self.y.clone(),
            x: self.x.clone(),
        }
    }

    /// Applies natural logs to the named columns (the output column may be
    /// named too). Every other column passes through unchanged.
    pub fn design_matrix(&self, log_columns: &[String]) -> Result<PanelDataset> {
        let mut out = self.clone();
        for name in log_columns {
            if name == &self.output_name {
                for v in out.y.iter_mut() {
                    *v = checked_ln(*v, name)?;
                }
                continue;
            }
            let col = self
                .column_names
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| StsfaError::MissingColumn(name.clone()))?;
            let p = self.p();
            for cell in out.x.chunks_mut(p) {
                cell[col] = checked_ln(cell[col], name)?;
            }
        }
        Ok(out)
    }

    /// Multiplies one input column by `factor`.
    pub fn scale_column(&self, col: usize, factor: f64) -> PanelDataset {
        let mut out = self.clone();
        let p = self.p();
        for cell in out.x.chunks_mut(p) {
            cell[col] *= factor;
        }
        out
    }

    /// Reorders units: new unit `k` is old unit `perm[k]`.
    pub fn permute_units(&self, perm: &[usize]) -> PanelDataset {
        let t = self.t();
        let p = self.p();
        let mut out = self.clone();
        for (k, &old) in perm.iter().enumerate() {
            out.unit_ids[k] = self.unit_ids[old].clone();
            out.y[k * t..(k + 1) * t].copy_from_slice(&self.y[old * t..(old + 1) * t]);
            out.x[k * t * p..(k + 1) * t * p]
                .copy_from_slice(&self.x[old * t * p..(old + 1) * t * p]);
        }
        out
    }

    /// Writes `unit,time,output,inputs...` rows. The intercept column is not
    /// written; reload with `intercept = true` to restore it.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| StsfaError::io(path, e))?;
        self.write_csv_to(file)
    }

    pub fn write_csv_to<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let skip = usize::from(self.has_intercept());
        let mut header = vec![
            "unit".to_string(),
            "time".to_string(),
            self.output_name.clone(),
        ];
        header.extend(self.column_names[skip..].iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.n() {
            for t in 0..self.t() {
                let mut rec = vec![
                    self.unit_ids[i].clone(),
                    self.time_ids[t].clone(),
                    format!("{}", self.y_at(i, t)),
                ];
                rec.extend(self.x_row(i, t)[skip..].iter().map(|v| format!("{v}")));
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| StsfaError::io("<csv writer>", e))?;
        Ok(())
    }

    /// Schema matching the layout produced by [`PanelDataset::write_csv`].
    pub fn written_schema(&self) -> PanelSchema {
        let skip = usize::from(self.has_intercept());
        PanelSchema {
            unit: "unit".into(),
            time: "time".into(),
            output: self.output_name.clone(),
            inputs: self.column_names[skip..].to_vec(),
            intercept: self.has_intercept(),
        }
    }

    pub fn to_json(&self) -> PanelJson {
        let (n, t, p) = (self.n(), self.t(), self.p());
        let mut y = Vec::with_capacity(n * t);
        for tt in 0..t {
            for i in 0..n {
                y.push(self.y_at(i, tt));
            }
        }
        let mut x = Vec::with_capacity(n * t * p);
        for pp in 0..p {
            for tt in 0..t {
                for i in 0..n {
                    x.push(self.x_row(i, tt)[pp]);
                }
            }
        }
        PanelJson {
            n,
            t,
            p,
            unit_ids: self.unit_ids.clone(),
            time_ids: self.time_ids.clone(),
            output_name: self.output_name.clone(),
            column_names: self.column_names.clone(),
            y,
            x,
        }
    }

    pub fn from_json(json: &PanelJson) -> Result<PanelDataset> {
        let (n, t, p) = (json.n, json.t, json.p);
        if json.y.len() != n * t || json.x.len() != n * t * p {
            return Err(StsfaError::Shape(
                "panel json arrays do not match dims".into(),
            ));
        }
        let mut y = vec![0.0; n * t];
        let mut x = vec![0.0; n * t * p];
        for tt in 0..t {
            for i in 0..n {
                y[i * t + tt] = json.y[i + n * tt];
                for pp in 0..p {
                    x[(i * t + tt) * p + pp] = json.x[i + n * (tt + t * pp)];
                }
            }
        }
        PanelDataset::new(
            json.unit_ids.clone(),
            json.time_ids.clone(),
            json.output_name.clone(),
            json.column_names.clone(),
            y,
            x,
        )
    }
}

/// Canonical JSON form. Numeric arrays are column-major: `y[i + N·t]` and
/// `x[i + N·(t + T·p)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelJson {
    pub n: usize,
    pub t: usize,
    pub p: usize,
    pub unit_ids: Vec<String>,
    pub time_ids: Vec<String>,
    pub output_name: String,
    pub column_names: Vec<String>,
    pub y: Vec<f64>,
    pub x: Vec<f64>,
}

fn checked_ln(v: f64, column: &str) -> Result<f64> {
    if v > 0.0 {
        Ok(v.ln())
    } else {
        Err(StsfaError::NonPositiveLog {
            column: column.to_string(),
            value: v,
        })
    }
}

fn check_distinct(ids: &[String], what: &str) -> Result<()> {
    let mut seen = HashMap::with_capacity(ids.len());
    for id in ids {
        if seen.insert(id.as_str(), ()).is_some() {
            return Err(StsfaError::Invalid(format!("duplicate {what} id `{id}`")));
        }
    }
    Ok(())
}

/// Time labels order numerically when every label parses as a number,
/// lexicographically otherwise.
fn time_order(ids: &[String]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..ids.len()).collect();
    let numeric: Option<Vec<f64>> = ids.iter().map(|s| s.trim().parse::<f64>().ok()).collect();
    match numeric {
        Some(vals) => idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b])),
        None => idx.sort_by(|&a, &b| ids[a].cmp(&ids[b])),
    }
    idx
}

fn is_strictly_increasing(ids: &[String]) -> bool {
    let order = time_order(ids);
    order.iter().enumerate().all(|(k, &i)| k == i)
}

/// Lists every missing and duplicated (unit, time) cell. Units are reported in
/// first-appearance order, periods in their declared ordering.
pub fn validate_balance(rows: &[RawRow]) -> BalanceReport {
    let mut units: Vec<String> = Vec::new();
    let mut unit_pos: HashMap<&str, usize> = HashMap::new();
    let mut times: Vec<String> = Vec::new();
    let mut time_pos: HashMap<&str, usize> = HashMap::new();
    for r in rows {
        if !unit_pos.contains_key(r.unit.as_str()) {
            unit_pos.insert(&r.unit, units.len());
            units.push(r.unit.clone());
        }
        if !time_pos.contains_key(r.time.as_str()) {
            time_pos.insert(&r.time, times.len());
            times.push(r.time.clone());
        }
    }
    let mut counts = vec![0usize; units.len() * times.len()];
    for r in rows {
        counts[unit_pos[r.unit.as_str()] * times.len() + time_pos[r.time.as_str()]] += 1;
    }
    let order = time_order(&times);
    let mut report = BalanceReport {
        n_units: units.len(),
        n_periods: times.len(),
        ..Default::default()
    };
    for (i, u) in units.iter().enumerate() {
        for &t in &order {
            match counts[i * times.len() + t] {
                0 => report.missing_cells.push((u.clone(), times[t].clone())),
                1 => {}
                _ => report.duplicate_cells.push((u.clone(), times[t].clone())),
            }
        }
    }
    report
}

/// Assembles a validated panel from parsed rows.
pub fn assemble(rows: &[RawRow], schema: &PanelSchema) -> Result<PanelDataset> {
    let report = validate_balance(rows);
    if !report.is_balanced() {
        return Err(StsfaError::Unbalanced(report));
    }
    let mut units: Vec<String> = Vec::new();
    let mut unit_pos: HashMap<&str, usize> = HashMap::new();
    let mut raw_times: Vec<String> = Vec::new();
    let mut seen_t: HashMap<&str, ()> = HashMap::new();
    for r in rows {
        if !unit_pos.contains_key(r.unit.as_str()) {
            unit_pos.insert(&r.unit, units.len());
            units.push(r.unit.clone());
        }
        if seen_t.insert(&r.time, ()).is_none() {
            raw_times.push(r.time.clone());
        }
    }
    let order = time_order(&raw_times);
    let times: Vec<String> = order.iter().map(|&k| raw_times[k].clone()).collect();
    let time_pos: HashMap<&str, usize> = times
        .iter()
        .enumerate()
        .map(|(k, s)| (s.as_str(), k))
        .collect();

    let n = units.len();
    let t = times.len();
    let k_in = schema.inputs.len();
    let p = k_in + usize::from(schema.intercept);
    let mut y = vec![0.0; n * t];
    let mut x = vec![0.0; n * t * p];
    for r in rows {
        let i = unit_pos[r.unit.as_str()];
        let tt = time_pos[r.time.as_str()];
        y[i * t + tt] = r.y;
        let base = (i * t + tt) * p;
        let mut off = 0;
        if schema.intercept {
            x[base] = 1.0;
            off = 1;
        }
        x[base + off..base + off + k_in].copy_from_slice(&r.x);
    }
    let mut names = Vec::with_capacity(p);
    if schema.intercept {
        names.push(INTERCEPT.to_string());
    }
    names.extend(schema.inputs.iter().cloned());
    PanelDataset::new(units, times, schema.output.clone(), names, y, x)
}

/// Parses CSV rows according to the schema without checking balance.
pub fn read_rows<R: std::io::Read>(reader: R, schema: &PanelSchema) -> Result<Vec<RawRow>> {
    if schema.inputs.is_empty() {
        return Err(StsfaError::Invalid(
            "schema needs at least one input column".into(),
        ));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| StsfaError::MissingColumn(name.to_string()))
    };
    let ui = find(&schema.unit)?;
    let ti = find(&schema.time)?;
    let yi = find(&schema.output)?;
    let xi: Vec<usize> = schema
        .inputs
        .iter()
        .map(|c| find(c))
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |col: usize, name: &str| -> Result<f64> {
            let raw = rec.get(col).unwrap_or("");
            raw.parse::<f64>().map_err(|_| StsfaError::NonNumeric {
                column: name.to_string(),
                row: line + 1,
                value: raw.to_string(),
            })
        };
        let y = num(yi, &schema.output)?;
        let x = xi
            .iter()
            .zip(&schema.inputs)
            .map(|(&c, name)| num(c, name))
            .collect::<Result<Vec<_>>>()?;
        rows.push(RawRow {
            unit: rec.get(ui).unwrap_or("").to_string(),
            time: rec.get(ti).unwrap_or("").to_string(),
            y,
            x,
        });
    }
    Ok(rows)
}

pub fn load_panel_csv(path: &Path, schema: &PanelSchema) -> Result<PanelDataset> {
    let file = std::fs::File::open(path).map_err(|e| StsfaError::io(path, e))?;
    let rows = read_rows(file, schema)?;
    assemble(&rows, schema)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> PanelSchema {
        PanelSchema {
            unit: "id".into(),
            time: "t".into(),
            output: "y".into(),
            inputs: vec!["x".into()],
            intercept: true,
        }
    }

    fn rows(cells: &[(&str, &str)]) -> Vec<RawRow> {
        cells
            .iter()
            .map(|(u, t)| RawRow {
                unit: u.to_string(),
                time: t.to_string(),
                y: 1.0,
                x: vec![2.0],
            })
            .collect()
    }

    #[test]
    fn loads_three_by_two() {
        let csv = "id,t,y,x\nA,1,1.0,0.5\nA,2,1.5,0.7\nB,1,2.0,0.1\nB,2,2.5,0.2\nC,1,3.0,0.3\nC,2,3.5,0.4\n";
        let rows = read_rows(csv.as_bytes(), &schema()).unwrap();
        let ds = assemble(&rows, &schema()).unwrap();
        assert_eq!((ds.n(), ds.t(), ds.p()), (3, 2, 2));
        assert_eq!(ds.x_row(1, 1), &[1.0, 0.2]);
        assert_eq!(ds.y_at(2, 0), 3.0);
    }

    #[test]
    fn units_keep_first_appearance_order() {
        let csv = "id,t,y,x\nZ,2,1,1\nA,1,1,1\nZ,1,1,1\nA,2,1,1\n";
        let rows = read_rows(csv.as_bytes(), &schema()).unwrap();
        let ds = assemble(&rows, &schema()).unwrap();
        assert_eq!(ds.unit_ids(), &["Z".to_string(), "A".to_string()]);
        assert_eq!(ds.time_ids(), &["1".to_string(), "2".to_string()]);
    }

    #[test]
    fn duplicate_row_is_reported() {
        let csv = "id,t,y,x\nA,1,1,1\nA,1,1,1\nA,2,1,1\nB,1,1,1\nB,2,1,1\n";
        let rows = read_rows(csv.as_bytes(), &schema()).unwrap();
        match assemble(&rows, &schema()) {
            Err(StsfaError::Unbalanced(rep)) => {
                assert_eq!(
                    rep.duplicate_cells,
                    vec![("A".to_string(), "1".to_string())]
                );
                assert!(rep.missing_cells.is_empty());
            }
            other => panic!("expected unbalanced error, got {other:?}"),
        }
    }

    #[test]
    fn balance_reports() {
        let full = rows(&[("A", "1"), ("A", "2"), ("B", "1"), ("B", "2")]);
        assert!(validate_balance(&full).is_balanced());

        let missing = rows(&[("A", "1"), ("A", "2"), ("B", "1")]);
        let rep = validate_balance(&missing);
        assert_eq!(rep.missing_cells, vec![("B".to_string(), "2".to_string())]);
        assert_eq!(validate_balance(&missing), rep);

        let dup = rows(&[("A", "1"), ("A", "1"), ("A", "2"), ("B", "1"), ("B", "2")]);
        assert_eq!(
            validate_balance(&dup).duplicate_cells,
            vec![("A".to_string(), "1".to_string())]
        );
    }

    #[test]
    fn missing_column_and_non_numeric() {
        let csv = "id,t,y\nA,1,1\n";
        assert!(matches!(
            read_rows(csv.as_bytes(), &schema()),
            Err(StsfaError::MissingColumn(c)) if c == "x"
        ));
        let csv = "id,t,y,x\nA,1,1,abc\n";
        assert!(matches!(
            read_rows(csv.as_bytes(), &schema()),
            Err(StsfaError::NonNumeric { .. })
        ));
    }

    #[test]
    fn log_transform() {
        let e = std::f64::consts::E;
        let csv = format!("id,t,y,x\nA,1,1,{e}\nB,1,2,{e}\n");
        let ds = assemble(&read_rows(csv.as_bytes(), &schema()).unwrap(), &schema()).unwrap();
        assert_eq!(ds.design_matrix(&[]).unwrap(), ds);
        let logged = ds.design_matrix(&["x".to_string()]).unwrap();
        for i in 0..2 {
            assert!((logged.x_row(i, 0)[1] - 1.0).abs() < 1e-15);
            assert_eq!(logged.x_row(i, 0)[0], 1.0);
        }
        let csv = "id,t,y,x\nA,1,1,0\nB,1,2,1\n";
        let ds = assemble(&read_rows(csv.as_bytes(), &schema()).unwrap(), &schema()).unwrap();
        assert!(matches!(
            ds.design_matrix(&["x".to_string()]),
            Err(StsfaError::NonPositiveLog { .. })
        ));
    }

    #[test]
    fn json_round_trip() {
        let csv = "id,t,y,x\nA,1,1.0,0.5\nA,2,1.5,0.7\nB,1,2.0,0.1\nB,2,2.5,0.2\n";
        let ds = assemble(&read_rows(csv.as_bytes(), &schema()).unwrap(), &schema()).unwrap();
        let json = ds.to_json();
        // column-major: second entry of y is unit B, period 1
        assert_eq!(json.y[1], 2.0);
        let text = serde_json::to_string(&json).unwrap();
        let back: PanelJson = serde_json::from_str(&text).unwrap();
        assert_eq!(PanelDataset::from_json(&back).unwrap(), ds);
    }
}
