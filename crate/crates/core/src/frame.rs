//! Column-oriented patient table with an explicit per-cell missing mask.
//!
//! Every stage of the pipeline passes [`PatientFrame`]s around. Missingness is
//! tracked as a mask rather than a sentinel so that genuinely missing
//! measurements stay distinguishable from deliberate zero fills.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use chrono::NaiveDateTime;
use thiserror::Error;

pub const SUBJECT_ID: &str = "subject_id";
pub const HADM_ID: &str = "hadm_id";
pub const STAY_ID: &str = "stay_id";

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("join key `{0}` missing from one of the frames")]
    KeyMissing(String),
    #[error("column `{0}` is not numeric")]
    NonNumericColumn(String),
    #[error("column `{name}` has {got} rows, expected {expected}")]
    LengthMismatch { name: String, expected: usize, got: usize },
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("join spec has no keys")]
    EmptyJoinKeys,
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
    #[error("csv failure: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, FrameError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Numeric,
    Text,
    /// Parsed into hours since the Unix epoch. Plain numbers are taken as hours.
    Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

impl ColumnSpec {
    pub fn numeric(name: &str) -> Self {
        Self { name: name.to_string(), kind: ColumnKind::Numeric }
    }

    pub fn text(name: &str) -> Self {
        Self { name: name.to_string(), kind: ColumnKind::Text }
    }

    pub fn timestamp(name: &str) -> Self {
        Self { name: name.to_string(), kind: ColumnKind::Timestamp }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<f64>),
    Text(Vec<String>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Text(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A named column plus its missing mask. Masked numeric cells hold `NaN`,
/// masked text cells hold an empty string. Equality ignores masked cells.
#[derive(Debug, Clone)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
    pub missing: Vec<bool>,
}

impl Column {
    pub fn numeric(name: impl Into<String>, values: Vec<f64>) -> Self {
        let missing = values.iter().map(|v| !v.is_finite()).collect();
        let values = values.into_iter().map(|v| if v.is_finite() { v } else { f64::NAN }).collect();
        Self { name: name.into(), data: ColumnData::Numeric(values), missing }
    }

    pub fn numeric_opt(name: impl Into<String>, values: Vec<Option<f64>>) -> Self {
        Self::numeric(name, values.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect())
    }

    pub fn text(name: impl Into<String>, values: Vec<String>) -> Self {
        let missing = values.iter().map(|v| v.is_empty()).collect();
        Self { name: name.into(), data: ColumnData::Text(values), missing }
    }

    pub fn len(&self) -> usize {
        self.missing.len()
    }

    pub fn is_empty(&self) -> bool {
        self.missing.is_empty()
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self.data, ColumnData::Numeric(_))
    }

    pub fn as_numeric(&self) -> Option<&[f64]> {
        match &self.data {
            ColumnData::Numeric(v) => Some(v),
            ColumnData::Text(_) => None,
        }
    }

    pub fn as_text(&self) -> Option<&[String]> {
        match &self.data {
            ColumnData::Text(v) => Some(v),
            ColumnData::Numeric(_) => None,
        }
    }

    /// Value at `row`, `None` when masked.
    pub fn get(&self, row: usize) -> Option<f64> {
        if self.missing[row] {
            return None;
        }
        self.as_numeric().map(|v| v[row])
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    fn take(&self, rows: &[Option<usize>]) -> Column {
        let missing = rows.iter().map(|r| r.is_none_or(|i| self.missing[i])).collect();
        let data = match &self.data {
            ColumnData::Numeric(v) => ColumnData::Numeric(
                rows.iter().map(|r| r.map_or(f64::NAN, |i| v[i])).collect(),
            ),
            ColumnData::Text(v) => ColumnData::Text(
                rows.iter().map(|r| r.map_or_else(String::new, |i| v[i].clone())).collect(),
            ),
        };
        Column { name: self.name.clone(), data, missing }
    }

    fn renamed(mut self, name: String) -> Column {
        self.name = name;
        self
    }
}

impl PartialEq for Column {
    fn eq(&self, other: &Self) -> bool {
        if self.name != other.name || self.missing != other.missing {
            return false;
        }
        let live = |i: &usize| !self.missing[*i];
        match (&self.data, &other.data) {
            (ColumnData::Numeric(a), ColumnData::Numeric(b)) => {
                (0..a.len()).filter(live).all(|i| a[i] == b[i])
            }
            (ColumnData::Text(a), ColumnData::Text(b)) => (0..a.len()).filter(live).all(|i| a[i] == b[i]),
            _ => false,
        }
    }
}

/// Identity of a row in MIMIC-shaped tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RowKey {
    pub subject_id: i64,
    pub hadm_id: i64,
    pub stay_id: Option<i64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PatientFrame {
    columns: Vec<Column>,
    index: HashMap<String, usize>,
    rows: usize,
}

impl PatientFrame {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        let rows = columns.first().map_or(0, Column::len);
        let mut index = HashMap::with_capacity(columns.len());
        for (i, c) in columns.iter().enumerate() {
            if c.len() != rows || c.data.len() != rows {
                return Err(FrameError::LengthMismatch {
                    name: c.name.clone(),
                    expected: rows,
                    got: c.len(),
                });
            }
            if index.insert(c.name.clone(), i).is_some() {
                return Err(FrameError::DuplicateColumn(c.name.clone()));
            }
        }
        Ok(Self { columns, index, rows })
    }

    /// A frame with `rows` rows and no columns yet.
    pub fn empty(rows: usize) -> Self {
        Self { columns: Vec::new(), index: HashMap::new(), rows }
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.index
            .get(name)
            .map(|&i| &self.columns[i])
            .ok_or_else(|| FrameError::MissingColumn(name.to_string()))
    }

    pub fn numeric(&self, name: &str) -> Result<&[f64]> {
        self.column(name)?
            .as_numeric()
            .ok_or_else(|| FrameError::NonNumericColumn(name.to_string()))
    }

    pub fn text(&self, name: &str) -> Result<&[String]> {
        self.column(name)?
            .as_text()
            .ok_or_else(|| FrameError::MissingColumn(name.to_string()))
    }

    pub fn mask(&self, name: &str) -> Result<&[bool]> {
        Ok(&self.column(name)?.missing)
    }

    /// Numeric value at `(row, name)`, `None` when masked.
    pub fn value(&self, row: usize, name: &str) -> Result<Option<f64>> {
        let col = self.column(name)?;
        if !col.is_numeric() {
            return Err(FrameError::NonNumericColumn(name.to_string()));
        }
        Ok(col.get(row))
    }

    /// Adds a column, replacing any existing one with the same name in place.
    pub fn with_column(mut self, column: Column) -> Result<Self> {
        if self.columns.is_empty() && self.rows == 0 {
            self.rows = column.len();
        }
        if column.len() != self.rows {
            return Err(FrameError::LengthMismatch {
                got: column.len(),
                name: column.name,
                expected: self.rows,
            });
        }
        match self.index.get(&column.name) {
            Some(&i) => self.columns[i] = column,
            None => {
                self.index.insert(column.name.clone(), self.columns.len());
                self.columns.push(column);
            }
        }
        Ok(self)
    }

    pub fn without_columns(&self, names: &[&str]) -> Self {
        let cols = self.columns.iter().filter(|c| !names.contains(&c.name.as_str())).cloned().collect();
        let mut f = PatientFrame::new(cols).expect("subset of a valid frame");
        f.rows = self.rows;
        f
    }

    pub fn select_columns(&self, names: &[&str]) -> Result<Self> {
        let cols = names.iter().map(|n| self.column(n).cloned()).collect::<Result<Vec<_>>>()?;
        let mut f = PatientFrame::new(cols)?;
        f.rows = self.rows;
        Ok(f)
    }

    pub fn rename(mut self, from: &str, to: &str) -> Result<Self> {
        let i = *self.index.get(from).ok_or_else(|| FrameError::MissingColumn(from.to_string()))?;
        if from == to {
            return Ok(self);
        }
        if self.index.contains_key(to) {
            return Err(FrameError::DuplicateColumn(to.to_string()));
        }
        self.index.remove(from);
        self.index.insert(to.to_string(), i);
        self.columns[i].name = to.to_string();
        Ok(self)
    }

    /// New frame containing `rows` in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let picks: Vec<Option<usize>> = rows.iter().map(|&r| Some(r)).collect();
        self.take_rows(&picks)
    }

    fn take_rows(&self, rows: &[Option<usize>]) -> Self {
        let columns = self.columns.iter().map(|c| c.take(rows)).collect();
        PatientFrame { columns, index: self.index.clone(), rows: rows.len() }
    }

    pub fn filter_rows(&self, mut keep: impl FnMut(usize) -> bool) -> Self {
        let rows: Vec<usize> = (0..self.rows).filter(|&r| keep(r)).collect();
        self.select_rows(&rows)
    }

    /// Row identities read from the `subject_id` / `hadm_id` / `stay_id`
    /// columns. Absent or masked keys read as `-1` (`None` for stay_id).
    pub fn row_keys(&self) -> Vec<RowKey> {
        let read = |name: &str| self.column(name).ok().filter(|c| c.is_numeric());
        let (s, h, st) = (read(SUBJECT_ID), read(HADM_ID), read(STAY_ID));
        (0..self.rows)
            .map(|r| RowKey {
                subject_id: s.and_then(|c| c.get(r)).map_or(-1, |v| v as i64),
                hadm_id: h.and_then(|c| c.get(r)).map_or(-1, |v| v as i64),
                stay_id: st.and_then(|c| c.get(r)).map(|v| v as i64),
            })
            .collect()
    }

    /// Row indices ordered by the numeric column `name` (masked last), ties by position.
    pub fn argsort_by(&self, name: &str) -> Result<Vec<usize>> {
        let col = self.column(name)?;
        let vals = col.as_numeric().ok_or_else(|| FrameError::NonNumericColumn(name.to_string()))?;
        let mut idx: Vec<usize> = (0..self.rows).collect();
        idx.sort_by(|&a, &b| match (col.missing[a], col.missing[b]) {
            (false, false) => vals[a].total_cmp(&vals[b]),
            (ma, mb) => ma.cmp(&mb),
        });
        Ok(idx)
    }

    pub fn sort_by(&self, name: &str) -> Result<Self> {
        Ok(self.select_rows(&self.argsort_by(name)?))
    }
}

fn parse_timestamp(s: &str) -> Option<f64> {
    if let Ok(v) = s.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    let dt = NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S"))
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M"))
        .ok()?;
    Some(dt.and_utc().timestamp() as f64 / 3600.0)
}

fn parse_cell(raw: &str, kind: ColumnKind) -> Option<f64> {
    let s = raw.trim();
    if s.is_empty() {
        return None;
    }
    match kind {
        ColumnKind::Numeric => s.parse::<f64>().ok().filter(|v| v.is_finite()),
        ColumnKind::Timestamp => parse_timestamp(s),
        ColumnKind::Text => None,
    }
}

fn build_column(name: &str, kind: ColumnKind, raw: Vec<String>) -> Column {
    match kind {
        ColumnKind::Text => Column::text(name, raw),
        _ => Column::numeric_opt(name, raw.iter().map(|s| parse_cell(s, kind)).collect()),
    }
}

fn read_records(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let file = File::open(path)?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(file);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut cols: Vec<Vec<String>> = vec![Vec::new(); header.len()];
    for rec in rdr.records() {
        let rec = rec?;
        for (j, cell) in rec.iter().enumerate() {
            cols[j].push(cell.to_string());
        }
    }
    Ok((header, cols))
}

/// Reads a CSV file, keeping only the columns named in `schema` (in schema
/// order). Blank or unparseable numeric cells are masked.
pub fn read_csv(path: impl AsRef<Path>, schema: &[ColumnSpec]) -> Result<PatientFrame> {
    let (header, mut raw) = read_records(path.as_ref())?;
    let mut columns = Vec::with_capacity(schema.len());
    for spec in schema {
        let j = header
            .iter()
            .position(|h| h == &spec.name)
            .ok_or_else(|| FrameError::MissingColumn(spec.name.clone()))?;
        columns.push(build_column(&spec.name, spec.kind, std::mem::take(&mut raw[j])));
    }
    let rows = columns.first().map_or(0, Column::len);
    let mut f = PatientFrame::new(columns)?;
    f.rows = rows;
    Ok(f)
}

/// Reads every column; a column is numeric when each non-blank cell parses as
/// a number, text otherwise.
pub fn read_csv_inferred(path: impl AsRef<Path>) -> Result<PatientFrame> {
    let (header, raw) = read_records(path.as_ref())?;
    let columns = header
        .iter()
        .zip(raw)
        .map(|(name, cells)| {
            let numeric = cells.iter().all(|c| c.trim().is_empty() || c.trim().parse::<f64>().is_ok());
            let kind = if numeric { ColumnKind::Numeric } else { ColumnKind::Text };
            build_column(name, kind, cells)
        })
        .collect();
    PatientFrame::new(columns)
}

pub fn format_number(v: f64) -> String {
    if v == 0.0 {
        // avoids "-0"
        "0".to_string()
    } else {
        format!("{v}")
    }
}

/// Serializes a frame as comma-separated UTF-8, masked cells blank.
pub fn write_csv_to<W: Write>(frame: &PatientFrame, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(out);
    w.write_record(frame.columns.iter().map(|c| c.name.as_str()))?;
    let mut record: Vec<String> = Vec::with_capacity(frame.n_cols());
    for r in 0..frame.rows {
        record.clear();
        for c in &frame.columns {
            if c.missing[r] {
                record.push(String::new());
                continue;
            }
            record.push(match &c.data {
                ColumnData::Numeric(v) => format_number(v[r]),
                ColumnData::Text(v) => v[r].clone(),
            });
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(frame: &PatientFrame, path: impl AsRef<Path>) -> Result<()> {
    crate::io::write_atomic(path.as_ref(), |f| write_csv_to(frame, f))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JoinKind {
    Inner,
    Left,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinSpec {
    pub keys: Vec<String>,
    pub kind: JoinKind,
}

impl JoinSpec {
    pub fn new(keys: &[&str], kind: JoinKind) -> Self {
        Self { keys: keys.iter().map(|k| k.to_string()).collect(), kind }
    }
}

fn key_tuples(frame: &PatientFrame, keys: &[String]) -> Result<Vec<Option<Vec<i64>>>> {
    let cols = keys
        .iter()
        .map(|k| {
            let c = frame.column(k).map_err(|_| FrameError::KeyMissing(k.clone()))?;
            if !c.is_numeric() {
                return Err(FrameError::KeyMissing(k.clone()));
            }
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..frame.rows)
        .map(|r| cols.iter().map(|c| c.get(r).map(|v| v as i64)).collect::<Option<Vec<_>>>())
        .collect())
}

/// Relational join on integer key columns. Right-side key columns are
/// dropped; other right names colliding with the left get an `_r` suffix.
pub fn join(left: &PatientFrame, right: &PatientFrame, spec: &JoinSpec) -> Result<PatientFrame> {
    if spec.keys.is_empty() {
        return Err(FrameError::EmptyJoinKeys);
    }
    let lk = key_tuples(left, &spec.keys)?;
    let rk = key_tuples(right, &spec.keys)?;
    let mut lookup: HashMap<&[i64], Vec<usize>> = HashMap::new();
    for (i, k) in rk.iter().enumerate() {
        if let Some(k) = k {
            lookup.entry(k.as_slice()).or_default().push(i);
        }
    }
    let mut lrows = Vec::new();
    let mut rrows = Vec::new();
    for (i, k) in lk.iter().enumerate() {
        match k.as_ref().and_then(|k| lookup.get(k.as_slice())) {
            Some(matches) => {
                for &j in matches {
                    lrows.push(Some(i));
                    rrows.push(Some(j));
                }
            }
            None if spec.kind == JoinKind::Left => {
                lrows.push(Some(i));
                rrows.push(None);
            }
            None => {}
        }
    }
    let mut columns: Vec<Column> = left.columns.iter().map(|c| c.take(&lrows)).collect();
    let mut taken: std::collections::HashSet<String> = columns.iter().map(|c| c.name.clone()).collect();
    for c in &right.columns {
        if spec.keys.contains(&c.name) {
            continue;
        }
        let mut name = c.name.clone();
        while taken.contains(&name) {
            name.push_str("_r");
        }
        taken.insert(name.clone());
        columns.push(c.take(&rrows).renamed(name));
    }
    let n = lrows.len();
    let mut f = PatientFrame::new(columns)?;
    f.rows = n;
    Ok(f)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stat {
    Mean,
    Min,
    Max,
}

impl Stat {
    pub fn suffix(self) -> &'static str {
        match self {
            Stat::Mean => "mean",
            Stat::Min => "min",
            Stat::Max => "max",
        }
    }
}

/// One output row per distinct (unmasked) key value, ascending. Each target
/// column yields `{name}_{stat}`; masked cells are skipped and all-masked
/// groups produce masked statistics.
pub fn aggregate_by_key(
    frame: &PatientFrame,
    key: &str,
    targets: &[&str],
    stats: &[Stat],
) -> Result<PatientFrame> {
    let key_col = frame.column(key)?;
    if !key_col.is_numeric() {
        return Err(FrameError::NonNumericColumn(key.to_string()));
    }
    let target_cols = targets
        .iter()
        .map(|t| {
            let c = frame.column(t)?;
            c.as_numeric().ok_or_else(|| FrameError::NonNumericColumn(t.to_string()))?;
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut groups: std::collections::BTreeMap<i64, Vec<usize>> = std::collections::BTreeMap::new();
    for r in 0..frame.rows {
        if let Some(k) = key_col.get(r) {
            groups.entry(k as i64).or_default().push(r);
        }
    }
    let keys: Vec<f64> = groups.keys().map(|&k| k as f64).collect();
    let mut columns = vec![Column::numeric(key, keys)];
    for col in &target_cols {
        let mut per_stat: Vec<Vec<f64>> = vec![Vec::with_capacity(groups.len()); stats.len()];
        for rows in groups.values() {
            let vals: Vec<f64> = rows.iter().filter_map(|&r| col.get(r)).collect();
            for (s, out) in stats.iter().zip(per_stat.iter_mut()) {
                out.push(if vals.is_empty() {
                    f64::NAN
                } else {
                    match s {
                        Stat::Mean => vals.iter().sum::<f64>() / vals.len() as f64,
                        Stat::Min => vals.iter().copied().fold(f64::INFINITY, f64::min),
                        Stat::Max => vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    }
                });
            }
        }
        for (s, vals) in stats.iter().zip(per_stat) {
            columns.push(Column::numeric(format!("{}_{}", col.name, s.suffix()), vals));
        }
    }
    PatientFrame::new(columns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tmp_csv(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn lab_schema() -> Vec<ColumnSpec> {
        vec![ColumnSpec::numeric("subject_id"), ColumnSpec::numeric("hadm_id"), ColumnSpec::numeric("valuenum")]
    }

    #[test]
    fn blank_cell_becomes_masked() {
        let f = tmp_csv("subject_id,hadm_id,valuenum\n1,10,5.5\n2,20,\n3,30,7\n");
        let frame = read_csv(f.path(), &lab_schema()).unwrap();
        assert_eq!(frame.n_rows(), 3);
        let masked: usize = frame.columns().iter().map(Column::missing_count).sum();
        assert_eq!(masked, 1);
        assert!(frame.mask("valuenum").unwrap()[1]);
    }

    #[test]
    fn unparseable_numeric_is_masked_not_zero() {
        let f = tmp_csv("subject_id,hadm_id,valuenum\n1,10,abc\n");
        let frame = read_csv(f.path(), &lab_schema()).unwrap();
        assert_eq!(frame.value(0, "valuenum").unwrap(), None);
    }

    #[test]
    fn header_only_file_gives_zero_rows() {
        let f = tmp_csv("subject_id,hadm_id,valuenum\n");
        let frame = read_csv(f.path(), &lab_schema()).unwrap();
        assert_eq!(frame.n_rows(), 0);
        assert_eq!(frame.n_cols(), 3);
    }

    #[test]
    fn missing_schema_column_is_reported() {
        let f = tmp_csv("subject_id,valuenum\n1,2\n");
        match read_csv(f.path(), &lab_schema()) {
            Err(FrameError::MissingColumn(c)) => assert_eq!(c, "hadm_id"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn timestamps_parse_to_hours() {
        let f = tmp_csv("t\n2180-01-01 01:00:00\n2180-01-01 03:30:00\n");
        let frame = read_csv(f.path(), &[ColumnSpec::timestamp("t")]).unwrap();
        let t = frame.numeric("t").unwrap();
        assert!((t[1] - t[0] - 2.5).abs() < 1e-9);
    }

    fn keyed(hadm: &[f64], name: &str, vals: &[f64]) -> PatientFrame {
        PatientFrame::new(vec![Column::numeric("hadm_id", hadm.to_vec()), Column::numeric(name, vals.to_vec())])
            .unwrap()
    }

    #[test]
    fn inner_join_keeps_matches_only() {
        let l = keyed(&[1.0, 2.0], "a", &[10.0, 20.0]);
        let r = keyed(&[2.0], "b", &[5.0]);
        let j = join(&l, &r, &JoinSpec::new(&["hadm_id"], JoinKind::Inner)).unwrap();
        assert_eq!(j.n_rows(), 1);
        assert_eq!(j.value(0, "a").unwrap(), Some(20.0));
        assert_eq!(j.value(0, "b").unwrap(), Some(5.0));
    }

    #[test]
    fn left_join_masks_unmatched_right_cells() {
        let l = keyed(&[2.0, 1.0], "a", &[20.0, 10.0]);
        let r = keyed(&[2.0], "b", &[5.0]);
        let j = join(&l, &r, &JoinSpec::new(&["hadm_id"], JoinKind::Left)).unwrap();
        assert_eq!(j.n_rows(), 2);
        assert_eq!(j.value(1, "b").unwrap(), None);
        assert_eq!(j.value(1, "a").unwrap(), Some(10.0));
    }

    #[test]
    fn disjoint_inner_join_is_empty() {
        let l = keyed(&[1.0], "a", &[1.0]);
        let r = keyed(&[2.0], "b", &[1.0]);
        let j = join(&l, &r, &JoinSpec::new(&["hadm_id"], JoinKind::Inner)).unwrap();
        assert_eq!(j.n_rows(), 0);
    }

    #[test]
    fn join_suffixes_collisions_and_checks_keys() {
        let l = keyed(&[1.0], "a", &[1.0]);
        let r = keyed(&[1.0], "a", &[2.0]);
        let j = join(&l, &r, &JoinSpec::new(&["hadm_id"], JoinKind::Inner)).unwrap();
        assert_eq!(j.names(), vec!["hadm_id", "a", "a_r"]);
        let err = join(&l, &r, &JoinSpec::new(&["stay_id"], JoinKind::Inner)).unwrap_err();
        assert!(matches!(err, FrameError::KeyMissing(_)));
    }

    #[test]
    fn aggregate_mean_min_max() {
        let f = PatientFrame::new(vec![
            Column::numeric("stay_id", vec![1.0, 1.0, 2.0, 3.0]),
            Column::numeric("hr", vec![60.0, 80.0, f64::NAN, 98.6]),
        ])
        .unwrap();
        let a = aggregate_by_key(&f, "stay_id", &["hr"], &[Stat::Mean, Stat::Min, Stat::Max]).unwrap();
        assert_eq!(a.n_rows(), 3);
        assert_eq!(a.value(0, "hr_mean").unwrap(), Some(70.0));
        assert_eq!(a.value(0, "hr_min").unwrap(), Some(60.0));
        assert_eq!(a.value(0, "hr_max").unwrap(), Some(80.0));
        for s in ["hr_mean", "hr_min", "hr_max"] {
            assert_eq!(a.value(1, s).unwrap(), None);
            assert_eq!(a.value(2, s).unwrap(), Some(98.6));
        }
    }

    #[test]
    fn aggregate_rejects_text_target() {
        let f = PatientFrame::new(vec![
            Column::numeric("stay_id", vec![1.0]),
            Column::text("note", vec!["x".into()]),
        ])
        .unwrap();
        assert!(matches!(
            aggregate_by_key(&f, "stay_id", &["note"], &[Stat::Mean]),
            Err(FrameError::NonNumericColumn(_))
        ));
    }

    fn arb_frame() -> impl Strategy<Value = PatientFrame> {
        (1usize..40).prop_flat_map(|n| {
            (
                proptest::collection::vec(proptest::option::weighted(0.8, -1e6f64..1e6), n),
                proptest::collection::vec(proptest::option::weighted(0.8, "[a-z ,\"]{0,8}"), n),
                proptest::collection::vec(0i64..8, n),
            )
                .prop_map(|(nums, texts, keys)| {
                    PatientFrame::new(vec![
                        Column::numeric("stay_id", keys.into_iter().map(|k| k as f64).collect()),
                        Column::numeric_opt("x", nums),
                        Column::text("s", texts.into_iter().map(|t| t.unwrap_or_default()).collect()),
                    ])
                    .unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_idempotent(frame in arb_frame()) {
            let schema = [ColumnSpec::numeric("stay_id"), ColumnSpec::numeric("x"), ColumnSpec::text("s")];
            let dir = tempfile::tempdir().unwrap();
            let p1 = dir.path().join("a.csv");
            write_csv(&frame, &p1).unwrap();
            let once = read_csv(&p1, &schema).unwrap();
            let p2 = dir.path().join("b.csv");
            write_csv(&once, &p2).unwrap();
            let twice = read_csv(&p2, &schema).unwrap();
            prop_assert_eq!(&once.columns().iter().map(|c| c.missing.clone()).collect::<Vec<_>>(),
                            &twice.columns().iter().map(|c| c.missing.clone()).collect::<Vec<_>>());
            prop_assert_eq!(once.numeric("x").unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            twice.numeric("x").unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(once.text("s").unwrap(), twice.text("s").unwrap());
            prop_assert_eq!(once.numeric("x").unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            frame.numeric("x").unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }

        #[test]
        fn aggregate_matches_brute_force(frame in arb_frame()) {
            let a = aggregate_by_key(&frame, "stay_id", &["x"], &[Stat::Mean, Stat::Min, Stat::Max]).unwrap();
            let keys = frame.numeric("stay_id").unwrap();
            let x = frame.column("x").unwrap();
            for (row, &k) in a.numeric("stay_id").unwrap().iter().enumerate() {
                let vals: Vec<f64> = (0..frame.n_rows()).filter(|&r| keys[r] == k).filter_map(|r| x.get(r)).collect();
                if vals.is_empty() {
                    prop_assert_eq!(a.value(row, "x_mean").unwrap(), None);
                } else {
                    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!((a.value(row, "x_mean").unwrap().unwrap() - mean).abs() <= 1e-9 * (1.0 + mean.abs()));
                    prop_assert_eq!(a.value(row, "x_min").unwrap(), Some(lo));
                    prop_assert_eq!(a.value(row, "x_max").unwrap(), Some(hi));
                }
            }
        }

        #[test]
        fn inner_join_bounded_by_smaller_side(
            lk in proptest::collection::btree_set(0u32..50, 0..30),
            rk in proptest::collection::btree_set(0u32..50, 0..30),
        ) {
            let lk: Vec<f64> = lk.into_iter().map(f64::from).collect();
            let rk: Vec<f64> = rk.into_iter().map(f64::from).collect();
            let l = keyed(&lk, "a", &vec![1.0; lk.len()]);
            let r = keyed(&rk, "b", &vec![2.0; rk.len()]);
            let j = join(&l, &r, &JoinSpec::new(&["hadm_id"], JoinKind::Inner)).unwrap();
            prop_assert!(j.n_rows() <= lk.len().min(rk.len()));
        }
    }
}
