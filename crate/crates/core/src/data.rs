//! Cell tables, per-sample point clouds, and label handling.
//!
//! A [`CellTable`] holds one row per cell: categorical metadata (patient,
//! replicate, treatment, ...) and a vector of marker intensities. Grouping
//! by metadata columns yields one [`PointCloud`] per sample with uniform
//! weights.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-column transform applied to marker values at ingest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Transform {
    #[default]
    Identity,
    Arcsinh {
        cofactor: f64,
    },
    Log1p,
}

impl Transform {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Arcsinh { cofactor } => (x / cofactor).asinh(),
            Transform::Log1p => x.ln_1p(),
        }
    }
}

/// Which CSV columns are metadata and which are markers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub meta_columns: Vec<String>,
    pub marker_columns: Vec<String>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default)]
    pub transforms: BTreeMap<String, Transform>,
}

fn default_delimiter() -> char {
    ','
}

impl Schema {
    pub fn new(meta_columns: &[&str], marker_columns: &[&str]) -> Self {
        Schema {
            meta_columns: meta_columns.iter().map(|s| s.to_string()).collect(),
            marker_columns: marker_columns.iter().map(|s| s.to_string()).collect(),
            delimiter: ',',
            transforms: BTreeMap::new(),
        }
    }
}

/// Cells × (metadata, markers). Metadata values are interned per column.
#[derive(Debug, Clone, PartialEq)]
pub struct CellTable {
    marker_names: Vec<String>,
    meta_schema: Vec<String>,
    levels: Vec<Vec<String>>,
    level_index: Vec<HashMap<String, u32>>,
    codes: Vec<u32>,
    values: Vec<f64>,
}

impl CellTable {
    pub fn new(meta_schema: Vec<String>, marker_names: Vec<String>) -> Self {
        let k = meta_schema.len();
        CellTable {
            marker_names,
            meta_schema,
            levels: vec![Vec::new(); k],
            level_index: vec![HashMap::new(); k],
            codes: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn push_row<S: AsRef<str>>(&mut self, meta: &[S], markers: &[f64]) -> Result<()> {
        if meta.len() != self.meta_schema.len() {
            return Err(Error::Dimension(format!(
                "row has {} metadata values, table expects {}",
                meta.len(),
                self.meta_schema.len()
            )));
        }
        if markers.len() != self.marker_names.len() {
            return Err(Error::Dimension(format!(
                "row has {} marker values, table expects {}",
                markers.len(),
                self.marker_names.len()
            )));
        }
        if let Some(k) = markers.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parse {
                row: self.n_rows(),
                column: self.marker_names[k].clone(),
                message: "non-finite marker value".into(),
            });
        }
        for (col, value) in meta.iter().enumerate() {
            let value = value.as_ref();
            let code = match self.level_index[col].get(value) {
                Some(&c) => c,
                None => {
                    let c = self.levels[col].len() as u32;
                    self.levels[col].push(value.to_string());
                    self.level_index[col].insert(value.to_string(), c);
                    c
                }
            };
            self.codes.push(code);
        }
        self.values.extend_from_slice(markers);
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        if self.marker_names.is_empty() {
            self.codes.len() / self.meta_schema.len().max(1)
        } else {
            self.values.len() / self.marker_names.len()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows() == 0
    }

    pub fn n_markers(&self) -> usize {
        self.marker_names.len()
    }

    pub fn marker_names(&self) -> &[String] {
        &self.marker_names
    }

    pub fn meta_schema(&self) -> &[String] {
        &self.meta_schema
    }

    pub fn meta_column(&self, name: &str) -> Result<usize> {
        self.meta_schema
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Schema(format!("metadata column '{name}' not in table")))
    }

    pub fn meta(&self, row: usize, col: usize) -> &str {
        let code = self.codes[row * self.meta_schema.len() + col];
        &self.levels[col][code as usize]
    }

    pub fn markers(&self, row: usize) -> &[f64] {
        let d = self.marker_names.len();
        &self.values[row * d..(row + 1) * d]
    }

    fn markers_mut(&mut self, row: usize) -> &mut [f64] {
        let d = self.marker_names.len();
        &mut self.values[row * d..(row + 1) * d]
    }

    fn row_meta(&self, row: usize) -> Vec<&str> {
        (0..self.meta_schema.len()).map(|c| self.meta(row, c)).collect()
    }

    /// Per-marker mean and population standard deviation over all rows.
    pub fn marker_moments(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.n_markers();
        let n = self.n_rows().max(1) as f64;
        let mut mean = vec![0.0; d];
        for r in 0..self.n_rows() {
            for (m, v) in mean.iter_mut().zip(self.markers(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in 0..self.n_rows() {
            for k in 0..d {
                let dv = self.markers(r)[k] - mean[k];
                var[k] += dv * dv;
            }
        }
        (mean, var.into_iter().map(|v| (v / n).sqrt()).collect())
    }

    /// Standardizes every marker to zero mean and unit variance in place.
    /// Constant markers are centered only.
    pub fn standardize_markers(&mut self) -> (Vec<f64>, Vec<f64>) {
        let (mean, sd) = self.marker_moments();
        for r in 0..self.n_rows() {
            for (k, v) in self.markers_mut(r).iter_mut().enumerate() {
                *v -= mean[k];
                if sd[k] > 0.0 {
                    *v /= sd[k];
                }
            }
        }
        (mean, sd)
    }

    /// Writes the canonical one-row-per-cell CSV (metadata columns, then markers).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<&str> = self
            .meta_schema
            .iter()
            .chain(self.marker_names.iter())
            .map(String::as_str)
            .collect();
        w.write_record(&header)?;
        for r in 0..self.n_rows() {
            let mut record: Vec<String> = self.row_meta(r).into_iter().map(String::from).collect();
            record.extend(self.markers(r).iter().map(|v| format!("{v}")));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One sample's cells as a weighted empirical distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    /// n × d, one row per cell.
    pub points: DMatrix<f64>,
    pub weights: Vec<f64>,
    /// Ordered (column, value) pairs identifying the sample.
    pub group_key: Vec<(String, String)>,
    /// Raw label as read from the table.
    pub label: Option<String>,
    /// Binary class after [`binarize_labels`].
    pub class: Option<u8>,
}

impl PointCloud {
    /// Cloud with uniform weights.
    pub fn uniform(points: DMatrix<f64>) -> Result<Self> {
        let n = points.nrows();
        if n == 0 {
            return Err(Error::InvalidInput("point cloud must contain at least one point".into()));
        }
        Self::weighted(points, vec![1.0 / n as f64; n])
    }

    pub fn weighted(points: DMatrix<f64>, weights: Vec<f64>) -> Result<Self> {
        let cloud = PointCloud {
            points,
            weights,
            group_key: Vec::new(),
            label: None,
            class: None,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn with_key(mut self, key: Vec<(String, String)>) -> Self {
        self.group_key = key;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.points.nrows();
        if n == 0 {
            return Err(Error::InvalidInput("point cloud must contain at least one point".into()));
        }
        if self.weights.len() != n {
            return Err(Error::Dimension(format!(
                "{} weights for {} points",
                self.weights.len(),
                n
            )));
        }
        if self.points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("point cloud contains non-finite values".into()));
        }
        check_probability(&self.weights, "point cloud weights")
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    /// Key rendered as `value1|value2|...`.
    pub fn key_string(&self) -> String {
        key_string(&self.group_key)
    }
}

pub fn key_string(key: &[(String, String)]) -> String {
    key.iter().map(|(_, v)| v.as_str()).collect::<Vec<_>>().join("|")
}

pub(crate) fn check_probability(w: &[f64], what: &str) -> Result<()> {
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidInput(format!("{what} must be finite and nonnegative")));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("{what} sum to {s}, expected 1")));
    }
    Ok(())
}

/// Reads a cell table from a CSV file.
pub fn load_cells_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<CellTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::from(e).context(format!("opening {}", path.display())))?;
    read_cells_csv(file, schema)
}

pub fn read_cells_csv<R: Read>(reader: R, schema: &Schema) -> Result<CellTable> {
    if !schema.delimiter.is_ascii() {
        return Err(Error::Schema("delimiter must be a single ASCII character".into()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("declared column '{name}' missing from CSV header")))
    };
    let meta_idx: Vec<usize> = schema.meta_columns.iter().map(|c| find(c)).collect::<Result<_>>()?;
    let marker_idx: Vec<usize> = schema.marker_columns.iter().map(|c| find(c)).collect::<Result<_>>()?;
    for name in schema.transforms.keys() {
        if !schema.marker_columns.contains(name) {
            return Err(Error::Schema(format!("transform declared for unknown marker '{name}'")));
        }
    }
    let transforms: Vec<Transform> = schema
        .marker_columns
        .iter()
        .map(|c| schema.transforms.get(c).copied().unwrap_or_default())
        .collect();

    let mut table = CellTable::new(schema.meta_columns.clone(), schema.marker_columns.clone());
    let mut markers = vec![0.0; marker_idx.len()];
    let mut meta: Vec<String> = vec![String::new(); meta_idx.len()];
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        for (slot, &i) in meta.iter_mut().zip(&meta_idx) {
            slot.clear();
            slot.push_str(record.get(i).unwrap_or("").trim());
        }
        for (k, &i) in marker_idx.iter().enumerate() {
            let raw = record.get(i).unwrap_or("").trim();
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                row,
                column: schema.marker_columns[k].clone(),
                message: format!("'{raw}' is not a number"),
            })?;
            let v = transforms[k].apply(v);
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: schema.marker_columns[k].clone(),
                    message: format!("'{raw}' is not finite after transform"),
                });
            }
            markers[k] = v;
        }
        table.push_row(&meta, &markers)?;
    }
    Ok(table)
}

/// Splits the table into one point cloud per distinct key tuple, sorted by key.
pub fn group_point_clouds(table: &CellTable, keys: &[&str]) -> Result<Vec<PointCloud>> {
    group_impl(table, keys, None)
}

/// As [`group_point_clouds`], also attaching the (group-constant) value of
/// `label_column` as the raw label.
pub fn group_point_clouds_labeled(
    table: &CellTable,
    keys: &[&str],
    label_column: &str,
) -> Result<Vec<PointCloud>> {
    group_impl(table, keys, Some(label_column))
}

fn group_impl(table: &CellTable, keys: &[&str], label_column: Option<&str>) -> Result<Vec<PointCloud>> {
    if keys.is_empty() {
        return Err(Error::Usage("grouping requires at least one key column".into()));
    }
    let key_cols: Vec<usize> = keys.iter().map(|k| table.meta_column(k)).collect::<Result<_>>()?;
    let label_col = label_column.map(|c| table.meta_column(c)).transpose()?;

    let mut groups: BTreeMap<Vec<&str>, Vec<usize>> = BTreeMap::new();
    for r in 0..table.n_rows() {
        let key: Vec<&str> = key_cols.iter().map(|&c| table.meta(r, c)).collect();
        groups.entry(key).or_default().push(r);
    }

    let d = table.n_markers();
    let mut clouds = Vec::with_capacity(groups.len());
    for (key, rows) in groups {
        let points = DMatrix::from_fn(rows.len(), d, |i, k| table.markers(rows[i])[k]);
        let mut cloud = PointCloud::uniform(points)?;
        cloud.group_key = keys
            .iter()
            .zip(&key)
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        if let Some(lc) = label_col {
            let first = table.meta(rows[0], lc);
            if let Some(&r) = rows.iter().find(|&&r| table.meta(r, lc) != first) {
                return Err(Error::InvalidInput(format!(
                    "label column '{}' is not constant within group {} (row {r})",
                    label_column.unwrap_or_default(),
                    key.join("|")
                )));
            }
            cloud.label = Some(first.to_string());
        }
        clouds.push(cloud);
    }
    Ok(clouds)
}

/// Drops rows whose `replicate_column` value is in `exclude`.
pub fn filter_replicates<S: AsRef<str>>(
    table: &CellTable,
    replicate_column: &str,
    exclude: &[S],
) -> Result<CellTable> {
    let col = table.meta_column(replicate_column)?;
    let mut out = CellTable::new(table.meta_schema.clone(), table.marker_names.clone());
    for r in 0..table.n_rows() {
        let rep = table.meta(r, col);
        if exclude.iter().any(|e| e.as_ref() == rep) {
            continue;
        }
        out.push_row(&table.row_meta(r), table.markers(r))?;
    }
    Ok(out)
}

/// Raw label → binary class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMap {
    pub mapping: BTreeMap<String, u8>,
    #[serde(default = "default_negative")]
    pub negative_name: String,
    #[serde(default = "default_positive")]
    pub positive_name: String,
}

fn default_negative() -> String {
    "negative".into()
}

fn default_positive() -> String {
    "positive".into()
}

impl LabelMap {
    pub fn new<S: AsRef<str>>(pairs: &[(S, u8)], negative: &str, positive: &str) -> Self {
        LabelMap {
            mapping: pairs.iter().map(|(k, v)| (k.as_ref().to_string(), *v)).collect(),
            negative_name: negative.into(),
            positive_name: positive.into(),
        }
    }

    pub fn class_name(&self, class: u8) -> &str {
        if class == 0 {
            &self.negative_name
        } else {
            &self.positive_name
        }
    }
}

/// Assigns binary classes; clouds with a missing or unmapped label are dropped.
/// Returns the retained clouds and the number dropped.
pub fn binarize_labels(samples: Vec<PointCloud>, map: &LabelMap) -> (Vec<PointCloud>, usize) {
    let mut dropped = 0;
    let mut kept = Vec::with_capacity(samples.len());
    for mut cloud in samples {
        match cloud.label.as_deref().and_then(|l| map.mapping.get(l)) {
            Some(&class) => {
                cloud.class = Some(class);
                kept.push(cloud);
            }
            None => dropped += 1,
        }
    }
    (kept, dropped)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_csv() -> &'static str {
        "Patient,Label,CD3,CD4\nP1,HCW,1.0,2.0\nP1,HCW,1.5,2.5\nP2,1.0,3.0,4.0\n"
    }

    #[test]
    fn loads_three_rows_two_markers() {
        let schema = Schema::new(&["Patient", "Label"], &["CD3", "CD4"]);
        let t = read_cells_csv(toy_csv().as_bytes(), &schema).unwrap();
        assert_eq!(t.n_rows(), 3);
        assert_eq!(t.n_markers(), 2);
        assert_eq!(t.markers(2), &[3.0, 4.0]);
        assert_eq!(t.meta(1, 0), "P1");
    }

    #[test]
    fn missing_declared_column_names_it() {
        let schema = Schema::new(&["Patient"], &["CD3", "CD8"]);
        let err = read_cells_csv(toy_csv().as_bytes(), &schema).unwrap_err();
        assert!(matches!(&err, Error::Schema(m) if m.contains("CD8")), "{err}");
    }

    #[test]
    fn non_numeric_marker_reports_row() {
        let csv = "Patient,CD3\nP1,1.0\nP1,abc\n";
        let schema = Schema::new(&["Patient"], &["CD3"]);
        match read_cells_csv(csv.as_bytes(), &schema).unwrap_err() {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 1);
                assert_eq!(column, "CD3");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn sixteen_marker_schema() {
        let markers = [
            "CD14", "CD183/CXCR3", "CD196/CCR6", "CD3", "CD4", "CD8", "FSC", "Fixable Aqua",
            "Granzyme B", "IFN-g", "IL-2", "IL-6", "IL-17A", "IL-4", "SSC", "TNF-a",
        ];
        let mut csv = String::from("Patient");
        for m in &markers {
            csv.push(',');
            csv.push_str(m);
        }
        csv.push('\n');
        csv.push_str("P1");
        for i in 0..16 {
            csv.push_str(&format!(",{i}"));
        }
        csv.push('\n');
        let schema = Schema::new(&["Patient"], &markers);
        let t = read_cells_csv(csv.as_bytes(), &schema).unwrap();
        assert_eq!(t.marker_names().len(), 16);
    }

    #[test]
    fn custom_delimiter_and_transform() {
        let csv = "P;X\na;5.0\n";
        let mut schema = Schema::new(&["P"], &["X"]);
        schema.delimiter = ';';
        schema.transforms.insert("X".into(), Transform::Arcsinh { cofactor: 5.0 });
        let t = read_cells_csv(csv.as_bytes(), &schema).unwrap();
        assert!((t.markers(0)[0] - 1f64.asinh()).abs() < 1e-15);
    }

    fn six_rows() -> CellTable {
        let mut t = CellTable::new(vec!["Patient".into(), "Replicate".into()], vec!["A".into()]);
        for (i, (p, r)) in [("P1", "R1"), ("P2", "AA"), ("P1", "R1"), ("P2", "R2"), ("P1", "BB"), ("P2", "R2")]
            .iter()
            .enumerate()
        {
            t.push_row(&[*p, *r], &[i as f64]).unwrap();
        }
        t
    }

    #[test]
    fn groups_by_patient() {
        let clouds = group_point_clouds(&six_rows(), &["Patient"]).unwrap();
        assert_eq!(clouds.len(), 2);
        assert!(clouds.iter().all(|c| c.len() == 3));
        assert_eq!(clouds[0].group_key, vec![("Patient".to_string(), "P1".to_string())]);
        // Row order preserved within the group.
        assert_eq!(clouds[0].points.column(0).as_slice(), &[0.0, 2.0, 4.0]);
        assert!((clouds[0].weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn singleton_group() {
        let mut t = CellTable::new(vec!["S".into()], vec!["A".into()]);
        t.push_row(&["x"], &[1.0]).unwrap();
        let clouds = group_point_clouds(&t, &["S"]).unwrap();
        assert_eq!(clouds.len(), 1);
        assert_eq!(clouds[0].weights, vec![1.0]);
    }

    #[test]
    fn empty_keys_is_usage_error() {
        assert!(matches!(group_point_clouds(&six_rows(), &[]), Err(Error::Usage(_))));
    }

    #[test]
    fn unknown_key_is_schema_error() {
        assert!(matches!(group_point_clouds(&six_rows(), &["Culture"]), Err(Error::Schema(_))));
    }

    #[test]
    fn filter_replicates_cases() {
        let t = six_rows();
        let same = filter_replicates::<&str>(&t, "Replicate", &[]).unwrap();
        assert_eq!(same, t);
        let f = filter_replicates(&t, "Replicate", &["AA", "BB", "CC"]).unwrap();
        assert_eq!(f.n_rows(), 4);
        assert_eq!(f.markers(1), &[2.0]);
        let none = filter_replicates(&t, "Replicate", &["R1", "R2", "AA", "BB"]).unwrap();
        assert!(none.is_empty());
        assert!(group_point_clouds(&none, &["Patient"]).unwrap().is_empty());
        assert!(filter_replicates(&t, "Rep", &["AA"]).is_err());
    }

    #[test]
    fn labels_binarized_and_unmapped_dropped() {
        let map = LabelMap::new(&[("HCW", 0), ("0.0", 1), ("1.0", 1)], "healthy", "sick");
        let mut clouds = Vec::new();
        for i in 0..150 {
            let mut c = PointCloud::uniform(DMatrix::from_element(1, 1, i as f64)).unwrap();
            c.label = match i {
                0 => Some("unknown".into()),
                1 => None,
                i if i % 3 == 0 => Some("HCW".into()),
                i if i % 3 == 1 => Some("0.0".into()),
                _ => Some("1.0".into()),
            };
            clouds.push(c);
        }
        let (kept, dropped) = binarize_labels(clouds, &map);
        assert_eq!(kept.len(), 148);
        assert_eq!(dropped, 2);
        assert!(kept.iter().all(|c| c.class.is_some()));
        assert_eq!(kept[1].class, Some(0)); // i = 3, HCW

        let (empty, dropped) = binarize_labels(Vec::new(), &map);
        assert!(empty.is_empty());
        assert_eq!(dropped, 0);
    }

    #[test]
    fn identity_label_map_keeps_binary_labels() {
        let map = LabelMap::new(&[("0", 0), ("1", 1)], "neg", "pos");
        let mut a = PointCloud::uniform(DMatrix::zeros(1, 1)).unwrap();
        a.label = Some("1".into());
        let (kept, _) = binarize_labels(vec![a], &map);
        assert_eq!(kept[0].class, Some(1));
        assert_eq!(kept[0].label.as_deref(), Some("1"));
    }

    #[test]
    fn labeled_grouping_requires_constant_label() {
        let mut t = CellTable::new(vec!["P".into(), "L".into()], vec!["A".into()]);
        t.push_row(&["p", "x"], &[0.0]).unwrap();
        t.push_row(&["p", "y"], &[0.0]).unwrap();
        assert!(group_point_clouds_labeled(&t, &["P"], "L").is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let t = six_rows();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let schema = Schema::new(&["Patient", "Replicate"], &["A"]);
        assert_eq!(read_cells_csv(buf.as_slice(), &schema).unwrap(), t);
    }
}
