//! CSV files for populations, samples and margins.
//!
//! Schemas (header row mandatory, UTF-8, `.` decimal separator):
//!
//! * B: `unit_id,y,x[,z]`
//! * S: `unit_id,pi[,y][,x][,z]`
//! * margins: `x,N_x` or `t_component,total`
//! * population: `unit_id,y,x,z,p_true,mu` with `z` and `mu` possibly empty
//!
//! Floats are written with the shortest representation that parses back to
//! the same value, so an export followed by an ingest is exact.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs::File;
use std::path::{Path, PathBuf};

use nonprob_core::popgen::{DesignInfo, DesignKind, NonProbSample, Population, ProbSample};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: column {column}: {message}")]
    Field { path: PathBuf, line: u64, column: String, message: String },
    #[error("{path}:{line}: {message}")]
    Row { path: PathBuf, line: u64, message: String },
    #[error("{path}: {message}")]
    Schema { path: PathBuf, message: String },
    #[error("{path}:{line}: unit {unit} appears in both B and S but S is declared on U minus B")]
    Overlap { path: PathBuf, line: u64, unit: u64 },
    #[error(transparent)]
    Core(#[from] nonprob_core::Error),
}

impl DataError {
    pub fn kind(&self) -> &'static str {
        match self {
            DataError::Io { .. } => "io",
            DataError::Field { .. } | DataError::Row { .. } => "parse",
            DataError::Schema { .. } => "schema",
            DataError::Overlap { .. } => "frame_violation",
            DataError::Core(e) => e.kind(),
        }
    }
}

/// A parsed CSV table with the header and 1-based file line of every row.
struct Table {
    path: PathBuf,
    header: Vec<String>,
    rows: Vec<(u64, csv::StringRecord)>,
}

impl Table {
    fn read(path: &Path) -> Result<Self, DataError> {
        let file = File::open(path).map_err(|source| DataError::Io { path: path.into(), source })?;
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| csv_error(path, e))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.iter().all(String::is_empty) {
            return Err(DataError::Schema { path: path.into(), message: "missing header row".into() });
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let line = rec.position().map_or(0, |p| p.line());
            rows.push((line, rec));
        }
        Ok(Table { path: path.into(), header, rows })
    }

    fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    fn require(&self, name: &str) -> Result<usize, DataError> {
        self.column(name).ok_or_else(|| DataError::Schema {
            path: self.path.clone(),
            message: format!("missing column {name} (header is {})", self.header.join(",")),
        })
    }

    fn only(&self, allowed: &[&str]) -> Result<(), DataError> {
        for h in &self.header {
            if !allowed.contains(&h.as_str()) {
                return Err(DataError::Schema {
                    path: self.path.clone(),
                    message: format!("unexpected column {h}; allowed: {}", allowed.join(",")),
                });
            }
        }
        let mut seen: Vec<&String> = self.header.iter().collect();
        seen.sort();
        if let Some(w) = seen.windows(2).find(|w| w[0] == w[1]) {
            return Err(DataError::Schema { path: self.path.clone(), message: format!("duplicate column {}", w[0]) });
        }
        Ok(())
    }

    fn field<T: std::str::FromStr>(&self, line: u64, rec: &csv::StringRecord, col: usize, what: &str) -> Result<T, DataError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = rec.get(col).unwrap_or("");
        raw.parse::<T>().map_err(|e| DataError::Field {
            path: self.path.clone(),
            line,
            column: self.header[col].clone(),
            message: format!("cannot parse {raw:?} as {what}: {e}"),
        })
    }

    fn float(&self, line: u64, rec: &csv::StringRecord, col: usize) -> Result<f64, DataError> {
        let v: f64 = self.field(line, rec, col, "a number")?;
        if !v.is_finite() {
            return Err(DataError::Field {
                path: self.path.clone(),
                line,
                column: self.header[col].clone(),
                message: format!("{v} is not finite"),
            });
        }
        Ok(v)
    }

    fn text(&self, line: u64, rec: &csv::StringRecord, col: usize) -> Result<String, DataError> {
        let raw = rec.get(col).unwrap_or("");
        if raw.is_empty() {
            return Err(DataError::Field {
                path: self.path.clone(),
                line,
                column: self.header[col].clone(),
                message: "empty value".into(),
            });
        }
        Ok(raw.to_string())
    }

    fn row_error(&self, line: u64, message: String) -> DataError {
        DataError::Row { path: self.path.clone(), line, message }
    }
}

fn csv_error(path: &Path, e: csv::Error) -> DataError {
    let line = e.position().map_or(0, |p| p.line());
    DataError::Row { path: path.into(), line, message: e.to_string() }
}

/// Rows of a B file, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct BRows {
    pub lines: Vec<u64>,
    pub unit_id: Vec<u64>,
    pub y: Vec<f64>,
    pub x: Vec<String>,
    pub z: Option<Vec<f64>>,
}

/// Rows of an S file, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct SRows {
    pub lines: Vec<u64>,
    pub unit_id: Vec<u64>,
    pub pi: Vec<f64>,
    pub y: Option<Vec<f64>>,
    pub x: Option<Vec<String>>,
    pub z: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Margins {
    /// `N_x` per cell label, in file order.
    Cells(Vec<(String, usize)>),
    /// Known totals per calibration component, in file order.
    Totals(Vec<(String, f64)>),
}

fn check_unique_ids(table: &Table, lines: &[u64], ids: &[u64]) -> Result<(), DataError> {
    let mut seen: HashMap<u64, u64> = HashMap::new();
    for (&line, &id) in lines.iter().zip(ids) {
        if let Some(first) = seen.insert(id, line) {
            return Err(table.row_error(line, format!("duplicate unit_id {id} (first seen on line {first})")));
        }
    }
    Ok(())
}

pub fn read_b(path: &Path) -> Result<BRows, DataError> {
    let t = Table::read(path)?;
    t.only(&["unit_id", "y", "x", "z"])?;
    let (ci, cy, cx) = (t.require("unit_id")?, t.require("y")?, t.require("x")?);
    let cz = t.column("z");
    let mut out = BRows { lines: Vec::new(), unit_id: Vec::new(), y: Vec::new(), x: Vec::new(), z: cz.map(|_| Vec::new()) };
    for (line, rec) in &t.rows {
        out.lines.push(*line);
        out.unit_id.push(t.field(*line, rec, ci, "a non-negative integer")?);
        out.y.push(t.float(*line, rec, cy)?);
        out.x.push(t.text(*line, rec, cx)?);
        if let (Some(c), Some(z)) = (cz, out.z.as_mut()) {
            z.push(t.float(*line, rec, c)?);
        }
    }
    check_unique_ids(&t, &out.lines, &out.unit_id)?;
    Ok(out)
}

pub fn read_s(path: &Path) -> Result<SRows, DataError> {
    let t = Table::read(path)?;
    t.only(&["unit_id", "pi", "y", "x", "z"])?;
    let (ci, cp) = (t.require("unit_id")?, t.require("pi")?);
    let (cy, cx, cz) = (t.column("y"), t.column("x"), t.column("z"));
    let mut out = SRows {
        lines: Vec::new(),
        unit_id: Vec::new(),
        pi: Vec::new(),
        y: cy.map(|_| Vec::new()),
        x: cx.map(|_| Vec::new()),
        z: cz.map(|_| Vec::new()),
    };
    for (line, rec) in &t.rows {
        out.lines.push(*line);
        out.unit_id.push(t.field(*line, rec, ci, "a non-negative integer")?);
        let pi = t.float(*line, rec, cp)?;
        if !(pi > 0.0 && pi <= 1.0) {
            return Err(DataError::Field {
                path: t.path.clone(),
                line: *line,
                column: "pi".into(),
                message: format!("inclusion probability {pi} outside (0, 1]"),
            });
        }
        out.pi.push(pi);
        if let (Some(c), Some(y)) = (cy, out.y.as_mut()) {
            y.push(t.float(*line, rec, c)?);
        }
        if let (Some(c), Some(x)) = (cx, out.x.as_mut()) {
            x.push(t.text(*line, rec, c)?);
        }
        if let (Some(c), Some(z)) = (cz, out.z.as_mut()) {
            z.push(t.float(*line, rec, c)?);
        }
    }
    check_unique_ids(&t, &out.lines, &out.unit_id)?;
    Ok(out)
}

pub fn read_margins(path: &Path) -> Result<Margins, DataError> {
    let t = Table::read(path)?;
    let mut seen: HashMap<String, u64> = HashMap::new();
    let mut dup = |line: u64, key: &str| -> Result<(), DataError> {
        match seen.insert(key.to_string(), line) {
            Some(first) => Err(t.row_error(line, format!("duplicate label {key} (first seen on line {first})"))),
            None => Ok(()),
        }
    };
    if t.column("N_x").is_some() {
        t.only(&["x", "N_x"])?;
        let (cx, cn) = (t.require("x")?, t.require("N_x")?);
        let mut cells = Vec::new();
        for (line, rec) in &t.rows {
            let label = t.text(*line, rec, cx)?;
            dup(*line, &label)?;
            cells.push((label, t.field(*line, rec, cn, "a non-negative integer")?));
        }
        Ok(Margins::Cells(cells))
    } else if t.column("t_component").is_some() {
        t.only(&["t_component", "total"])?;
        let (cc, ct) = (t.require("t_component")?, t.require("total")?);
        let mut totals = Vec::new();
        for (line, rec) in &t.rows {
            let name = t.text(*line, rec, cc)?;
            dup(*line, &name)?;
            totals.push((name, t.float(*line, rec, ct)?));
        }
        Ok(Margins::Totals(totals))
    } else {
        Err(DataError::Schema {
            path: path.into(),
            message: format!("margins header must be x,N_x or t_component,total, got {}", t.header.join(",")),
        })
    }
}

/// Mapping from cell labels in the files to cell indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CellLabels {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl CellLabels {
    pub fn new(labels: Vec<String>) -> Self {
        let index = labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        CellLabels { labels, index }
    }

    /// Labels that all parse as integers map to themselves, `0..=max`;
    /// anything else is sorted lexicographically.
    pub fn infer<'a>(observed: impl IntoIterator<Item = &'a String>) -> Self {
        let mut set: Vec<&String> = observed.into_iter().collect();
        set.sort();
        set.dedup();
        let ints: Option<Vec<usize>> = set.iter().map(|l| l.parse::<usize>().ok().filter(|v| v.to_string() == **l)).collect();
        match ints {
            Some(v) if !v.is_empty() => {
                let max = *v.iter().max().unwrap_or(&0);
                CellLabels::new((0..=max).map(|i| i.to_string()).collect())
            }
            _ => CellLabels::new(set.into_iter().cloned().collect()),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, cell: usize) -> &str {
        &self.labels[cell]
    }
}

/// Which frame S was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SFrame {
    #[default]
    Full,
    /// `U \ B`: any unit in both files is an error.
    Complement,
}

/// Validated inputs for estimation and diagnostics.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub b: NonProbSample,
    pub s: Option<ProbSample>,
    /// S carried an `x` column.
    pub s_has_x: bool,
    pub margins: Option<Margins>,
    pub labels: CellLabels,
}

impl Ingested {
    /// `N_x` per cell when the margins give cell counts.
    pub fn cell_sizes(&self) -> Option<Vec<usize>> {
        match &self.margins {
            Some(Margins::Cells(cells)) => {
                let mut sizes = vec![0; self.labels.len()];
                for (label, n) in cells {
                    sizes[self.labels.get(label)?] = *n;
                }
                Some(sizes)
            }
            _ => None,
        }
    }
}

fn to_cells(path: &Path, lines: &[u64], labels: &CellLabels, x: &[String]) -> Result<Vec<usize>, DataError> {
    x.iter()
        .zip(lines)
        .map(|(l, &line)| {
            labels.get(l).ok_or_else(|| DataError::Field {
                path: path.into(),
                line,
                column: "x".into(),
                message: format!("cell label {l} is not among the margins"),
            })
        })
        .collect()
}

/// Order of rows by unit id.
fn order(ids: &[u64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..ids.len()).collect();
    idx.sort_by_key(|&i| ids[i]);
    idx
}

fn unit(path: &Path, line: u64, id: u64) -> Result<usize, DataError> {
    usize::try_from(id).map_err(|_| DataError::Field {
        path: path.into(),
        line,
        column: "unit_id".into(),
        message: format!("unit_id {id} out of range"),
    })
}

/// Reads and cross-validates the input files. Rows are reordered by unit id.
pub fn ingest(b_path: &Path, s_path: Option<&Path>, margins_path: Option<&Path>, frame: SFrame) -> Result<Ingested, DataError> {
    let b_rows = read_b(b_path)?;
    let s_rows = s_path.map(read_s).transpose()?;
    let margins = margins_path.map(read_margins).transpose()?;
    let labels = match &margins {
        Some(Margins::Cells(cells)) => CellLabels::new(cells.iter().map(|c| c.0.clone()).collect()),
        _ => {
            let s_labels = s_rows.as_ref().and_then(|s| s.x.as_ref());
            CellLabels::infer(b_rows.x.iter().chain(s_labels.into_iter().flatten()))
        }
    };

    let bx = to_cells(b_path, &b_rows.lines, &labels, &b_rows.x)?;
    let ob = order(&b_rows.unit_id);
    let members = ob.iter().map(|&i| unit(b_path, b_rows.lines[i], b_rows.unit_id[i])).collect::<Result<Vec<_>, _>>()?;
    let b = NonProbSample::new(
        members,
        ob.iter().map(|&i| b_rows.y[i]).collect(),
        ob.iter().map(|&i| bx[i]).collect(),
        b_rows.z.as_ref().map(|z| ob.iter().map(|&i| z[i]).collect()),
    )?;

    let mut s_has_x = false;
    let s = match (s_rows, s_path) {
        (Some(rows), Some(path)) => {
            if frame == SFrame::Complement {
                let in_b: std::collections::HashSet<u64> = b_rows.unit_id.iter().copied().collect();
                if let Some((line, id)) = rows.lines.iter().zip(&rows.unit_id).find(|(_, id)| in_b.contains(id)) {
                    return Err(DataError::Overlap { path: path.into(), line: *line, unit: *id });
                }
            }
            let sx = match &rows.x {
                Some(x) => {
                    s_has_x = true;
                    to_cells(path, &rows.lines, &labels, x)?
                }
                None => vec![0; rows.unit_id.len()],
            };
            let os = order(&rows.unit_id);
            let members = os.iter().map(|&i| unit(path, rows.lines[i], rows.unit_id[i])).collect::<Result<Vec<_>, _>>()?;
            let n = members.len();
            let sum_d: f64 = rows.pi.iter().map(|p| 1.0 / p).sum();
            Some(ProbSample::new(
                members,
                os.iter().map(|&i| rows.pi[i]).collect(),
                vec![0; n],
                os.iter().map(|&i| sx[i]).collect(),
                rows.z.as_ref().map(|z| os.iter().map(|&i| z[i]).collect()),
                rows.y.as_ref().map(|y| os.iter().map(|&i| y[i]).collect()),
                DesignInfo { kind: DesignKind::Poisson, frame_sizes: vec![sum_d.round() as usize], sample_sizes: vec![n] },
            )?)
        }
        _ => None,
    };
    Ok(Ingested { b, s, s_has_x, margins, labels })
}

fn push_opt(out: &mut String, v: Option<f64>) {
    if let Some(v) = v {
        let _ = write!(out, "{v}");
    }
}

pub fn population_csv(pop: &Population) -> String {
    let mut out = String::from("unit_id,y,x,z,p_true,mu\n");
    for i in 0..pop.size() {
        let _ = write!(out, "{i},{},{},", pop.y[i], pop.x[i]);
        push_opt(&mut out, pop.z.as_ref().map(|z| z[i]));
        let _ = write!(out, ",{},", pop.p_true[i]);
        push_opt(&mut out, pop.mu.as_ref().map(|m| m[i]));
        out.push('\n');
    }
    out
}

pub fn b_csv(b: &NonProbSample) -> String {
    let mut out = String::from(if b.z.is_some() { "unit_id,y,x,z\n" } else { "unit_id,y,x\n" });
    for i in 0..b.len() {
        let _ = write!(out, "{},{},{}", b.members[i], b.y[i], b.x[i]);
        if let Some(z) = &b.z {
            let _ = write!(out, ",{}", z[i]);
        }
        out.push('\n');
    }
    out
}

pub fn s_csv(s: &ProbSample) -> String {
    let mut out = String::from("unit_id,pi");
    if s.y.is_some() {
        out.push_str(",y");
    }
    out.push_str(",x");
    if s.z.is_some() {
        out.push_str(",z");
    }
    out.push('\n');
    for i in 0..s.len() {
        let _ = write!(out, "{},{}", s.members[i], s.pi[i]);
        if let Some(y) = &s.y {
            let _ = write!(out, ",{}", y[i]);
        }
        let _ = write!(out, ",{}", s.x[i]);
        if let Some(z) = &s.z {
            let _ = write!(out, ",{}", z[i]);
        }
        out.push('\n');
    }
    out
}

/// `x,N_x` margins of a population.
pub fn margins_csv(pop: &Population) -> String {
    let mut out = String::from("x,N_x\n");
    for (c, n) in pop.stratum_sizes().iter().enumerate() {
        let _ = writeln!(out, "{c},{n}");
    }
    out
}

pub fn read_population(path: &Path) -> Result<Population, DataError> {
    let t = Table::read(path)?;
    t.only(&["unit_id", "y", "x", "z", "p_true", "mu"])?;
    let (ci, cy, cx, cp) = (t.require("unit_id")?, t.require("y")?, t.require("x")?, t.require("p_true")?);
    let (cz, cm) = (t.column("z"), t.column("mu"));
    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut p = Vec::new();
    let mut z: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut present: BTreeMap<&str, bool> = BTreeMap::new();
    for (r, (line, rec)) in t.rows.iter().enumerate() {
        let id: u64 = t.field(*line, rec, ci, "a non-negative integer")?;
        if id != r as u64 {
            return Err(t.row_error(*line, format!("population unit_id must run 0, 1, 2, ...; expected {r}, found {id}")));
        }
        y.push(t.float(*line, rec, cy)?);
        x.push(t.field(*line, rec, cx, "a cell index")?);
        let pt = t.float(*line, rec, cp)?;
        if !(0.0..=1.0).contains(&pt) {
            return Err(DataError::Field {
                path: t.path.clone(),
                line: *line,
                column: "p_true".into(),
                message: format!("propensity {pt} outside [0, 1]"),
            });
        }
        p.push(pt);
        for (name, col) in [("z", cz), ("mu", cm)] {
            let Some(col) = col else { continue };
            let has = !rec.get(col).unwrap_or("").is_empty();
            match present.get(name) {
                Some(&was) if was != has => {
                    return Err(t.row_error(*line, format!("column {name} must be filled in every row or in none")));
                }
                _ => {
                    present.insert(name, has);
                }
            }
            if has {
                z.entry(name).or_default().push(t.float(*line, rec, col)?);
            }
        }
    }
    let pop = Population::new(y, x, z.remove("z"), p, z.remove("mu"))?;
    Ok(pop)
}
