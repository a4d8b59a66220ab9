//! Repeated cross-sectional data: layout, ingestion and cell aggregation.
//!
//! Groups and periods are stored as zero-based positions. Control groups
//! occupy positions `0..k_co` and treated groups the last `k_tr` positions;
//! pre-treatment periods occupy `0..t_pre`. Original labels are retained for
//! reporting and for writing data back out.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::numeric::CompensatedSum;
use crate::{Error, Result};

/// Shape of a group-by-period design with a single adoption date.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelLayout {
    k_co: usize,
    k_tr: usize,
    t_pre: usize,
    t_post: usize,
}

impl PanelLayout {
    pub fn new(k_co: usize, k_tr: usize, t_pre: usize, t_post: usize) -> Result<Self> {
        if k_co < 1 || k_tr < 1 {
            return Err(Error::Validation(format!(
                "need at least one control and one treated group (got K_co={k_co}, K_tr={k_tr})"
            )));
        }
        if t_pre < 1 || t_post < 1 {
            return Err(Error::Validation(format!(
                "need at least one pre-treatment and one post-treatment period \
                 (got T_pre={t_pre}, T_post={t_post})"
            )));
        }
        Ok(Self {
            k_co,
            k_tr,
            t_pre,
            t_post,
        })
    }

    pub fn k_co(&self) -> usize {
        self.k_co
    }

    pub fn k_tr(&self) -> usize {
        self.k_tr
    }

    pub fn t_pre(&self) -> usize {
        self.t_pre
    }

    pub fn t_post(&self) -> usize {
        self.t_post
    }

    /// Total number of groups.
    pub fn k(&self) -> usize {
        self.k_co + self.k_tr
    }

    /// Total number of periods.
    pub fn t(&self) -> usize {
        self.t_pre + self.t_post
    }

    pub fn is_treated_group(&self, group: usize) -> bool {
        group >= self.k_co
    }

    pub fn is_post(&self, time: usize) -> bool {
        time >= self.t_pre
    }

    /// Treatment indicator `W_{k,t}`.
    pub fn treatment(&self, group: usize, time: usize) -> bool {
        self.is_treated_group(group) && self.is_post(time)
    }
}

/// One individual observed once, in group `group` at period `time`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub group: usize,
    pub time: usize,
    pub outcome: f64,
}

/// Individual-level repeated cross-sections.
#[derive(Debug, Clone, PartialEq)]
pub struct RCDataset {
    layout: PanelLayout,
    rows: Vec<Observation>,
    group_labels: Vec<String>,
    time_labels: Vec<String>,
}

fn positional_labels(n: usize) -> Vec<String> {
    (1..=n).map(|i| i.to_string()).collect()
}

impl RCDataset {
    /// Builds a dataset whose labels are the 1-based positions.
    pub fn new(layout: PanelLayout, rows: Vec<Observation>) -> Result<Self> {
        let group_labels = positional_labels(layout.k());
        let time_labels = positional_labels(layout.t());
        Self::with_labels(layout, rows, group_labels, time_labels)
    }

    pub fn with_labels(
        layout: PanelLayout,
        rows: Vec<Observation>,
        group_labels: Vec<String>,
        time_labels: Vec<String>,
    ) -> Result<Self> {
        if group_labels.len() != layout.k() || time_labels.len() != layout.t() {
            return Err(Error::Validation(format!(
                "label counts ({} groups, {} periods) do not match layout ({} groups, {} periods)",
                group_labels.len(),
                time_labels.len(),
                layout.k(),
                layout.t()
            )));
        }
        let data = Self {
            layout,
            rows,
            group_labels,
            time_labels,
        };
        data.validate()?;
        Ok(data)
    }

    fn validate(&self) -> Result<()> {
        let (k, t) = (self.layout.k(), self.layout.t());
        let mut counts = DMatrix::<u64>::zeros(k, t);
        for (i, row) in self.rows.iter().enumerate() {
            if row.group >= k || row.time >= t {
                return Err(Error::Validation(format!(
                    "row {} references cell ({},{}) outside a {k}x{t} layout",
                    i + 1,
                    row.group + 1,
                    row.time + 1
                )));
            }
            if !row.outcome.is_finite() {
                return Err(Error::Validation(format!("row {} has a non-finite outcome", i + 1)));
            }
            counts[(row.group, row.time)] += 1;
        }
        // period-major so the first reported hole is the earliest period
        for tt in 0..t {
            for kk in 0..k {
                if counts[(kk, tt)] == 0 {
                    return Err(Error::Validation(format!(
                        "empty cell ({},{})",
                        self.group_labels[kk], self.time_labels[tt]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> &PanelLayout {
        &self.layout
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    /// Total number of individuals `N`.
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn group_labels(&self) -> &[String] {
        &self.group_labels
    }

    pub fn time_labels(&self) -> &[String] {
        &self.time_labels
    }

    /// Applies `f` to every outcome, keeping layout and labels.
    pub fn map_outcomes(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            layout: self.layout,
            rows: self
                .rows
                .iter()
                .map(|r| Observation {
                    outcome: f(r.outcome),
                    ..*r
                })
                .collect(),
            group_labels: self.group_labels.clone(),
            time_labels: self.time_labels.clone(),
        }
    }
}

/// Cell means `Ybar_{k,t}` and counts `N_{k,t}` on a `K x T` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedPanel {
    layout: PanelLayout,
    means: DMatrix<f64>,
    counts: DMatrix<u64>,
}

impl AggregatedPanel {
    pub fn from_parts(layout: PanelLayout, means: DMatrix<f64>, counts: DMatrix<u64>) -> Result<Self> {
        let shape = (layout.k(), layout.t());
        if means.shape() != shape || counts.shape() != shape {
            return Err(Error::Validation(format!(
                "cell matrices must be {}x{} (means {:?}, counts {:?})",
                shape.0,
                shape.1,
                means.shape(),
                counts.shape()
            )));
        }
        if let Some((idx, _)) = counts.iter().enumerate().find(|(_, &n)| n == 0) {
            let (kk, tt) = (idx % shape.0, idx / shape.0);
            return Err(Error::Validation(format!("empty cell ({},{})", kk + 1, tt + 1)));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::Validation("non-finite cell mean".into()));
        }
        Ok(Self {
            layout,
            means,
            counts,
        })
    }

    pub fn layout(&self) -> &PanelLayout {
        &self.layout
    }

    /// `K x T` matrix of cell means (groups on rows).
    pub fn means(&self) -> &DMatrix<f64> {
        &self.means
    }

    /// `K x T` matrix of cell counts.
    pub fn counts(&self) -> &DMatrix<u64> {
        &self.counts
    }

    pub fn mean(&self, group: usize, time: usize) -> f64 {
        self.means[(group, time)]
    }

    pub fn count(&self, group: usize, time: usize) -> u64 {
        self.counts[(group, time)]
    }

    pub fn total_count(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Same counts, means replaced by `f(mean)`.
    pub fn map_means(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            layout: self.layout,
            means: self.means.map(f),
            counts: self.counts.clone(),
        }
    }
}

/// Collapses individual rows into cell means with compensated summation.
///
/// Within each cell rows are accumulated in dataset order.
pub fn aggregate(data: &RCDataset) -> AggregatedPanel {
    let layout = *data.layout();
    let (k, t) = (layout.k(), layout.t());
    let mut sums = vec![CompensatedSum::new(); k * t];
    let mut counts = DMatrix::<u64>::zeros(k, t);
    for row in data.rows() {
        sums[row.time * k + row.group].add(row.outcome);
        counts[(row.group, row.time)] += 1;
    }
    let means = DMatrix::from_fn(k, t, |kk, tt| {
        sums[tt * k + kk].value() / counts[(kk, tt)] as f64
    });
    AggregatedPanel {
        layout,
        means,
        counts,
    }
}

/// Column names in a long-format CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    pub group: String,
    pub time: String,
    pub outcome: String,
    /// Optional 0/1 column, constant within group, marking treated groups.
    pub treated: Option<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            group: "group".into(),
            time: "time".into(),
            outcome: "outcome".into(),
            treated: None,
        }
    }
}

/// How the treated groups and the adoption date are determined on load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutSpec {
    /// Number of control groups. When absent the schema's treated column decides.
    #[serde(default)]
    pub k_co: Option<usize>,
    pub t_pre: usize,
}

impl LayoutSpec {
    /// The first `k_co` groups in label order are controls, the rest treated.
    pub fn control_count(k_co: usize, t_pre: usize) -> Self {
        Self {
            k_co: Some(k_co),
            t_pre,
        }
    }

    /// Treated groups come from the schema's treated column.
    pub fn treated_column(t_pre: usize) -> Self {
        Self { k_co: None, t_pre }
    }

    /// Path of the JSON sidecar that accompanies `csv_path`: `<stem>.layout.json`.
    pub fn sidecar_path(csv_path: &Path) -> std::path::PathBuf {
        csv_path.with_extension("layout.json")
    }

    /// Reads `{"k_co": .., "t_pre": ..}` from the sidecar next to `csv_path`.
    pub fn from_sidecar(csv_path: &Path) -> Result<Self> {
        let path = Self::sidecar_path(csv_path);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Sorts labels numerically when every label parses as a number, else lexically.
fn sorted_labels<'a>(labels: impl Iterator<Item = &'a String>) -> Vec<String> {
    let mut unique: Vec<String> = labels.cloned().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let numeric: Option<Vec<f64>> = unique.iter().map(|s| s.trim().parse::<f64>().ok()).collect();
    if let Some(values) = numeric {
        let mut paired: Vec<(f64, String)> = values.into_iter().zip(unique).collect();
        paired.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        unique = paired.into_iter().map(|(_, s)| s).collect();
    }
    unique
}

fn parse_flag(value: &str, row: usize) -> Result<bool> {
    match value.trim() {
        "1" | "1.0" | "true" | "TRUE" | "True" => Ok(true),
        "0" | "0.0" | "false" | "FALSE" | "False" => Ok(false),
        other => Err(Error::Parse {
            row,
            message: format!("treated flag {other:?} is not 0/1"),
        }),
    }
}

/// Loads a long-format CSV (one row per individual) from `path`.
pub fn load_long_csv(path: impl AsRef<Path>, schema: &CsvSchema, spec: &LayoutSpec) -> Result<RCDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_long_csv(file, schema, spec)
}

/// Reads a long-format CSV from any reader. See [`load_long_csv`].
pub fn read_long_csv<R: Read>(reader: R, schema: &CsvSchema, spec: &LayoutSpec) -> Result<RCDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column {name:?}")))
    };
    let group_col = column(&schema.group)?;
    let time_col = column(&schema.time)?;
    let outcome_col = column(&schema.outcome)?;
    let treated_col = schema.treated.as_deref().map(column).transpose()?;

    let mut raw: Vec<(String, String, f64)> = Vec::new();
    let mut treated_flags: HashMap<String, bool> = HashMap::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let field = |c: usize| record.get(c).unwrap_or("");
        let outcome_text = field(outcome_col);
        let outcome: f64 = outcome_text.parse().map_err(|_| Error::Parse {
            row,
            message: format!("outcome {outcome_text:?} is not numeric"),
        })?;
        if !outcome.is_finite() {
            return Err(Error::Parse {
                row,
                message: format!("outcome {outcome_text:?} is not finite"),
            });
        }
        let group = field(group_col).to_string();
        if let Some(c) = treated_col {
            let flag = parse_flag(field(c), row)?;
            if let Some(&prev) = treated_flags.get(&group) {
                if prev != flag {
                    return Err(Error::Validation(format!(
                        "treated flag is not constant within group {group:?} (row {row})"
                    )));
                }
            } else {
                treated_flags.insert(group.clone(), flag);
            }
        }
        raw.push((group, field(time_col).to_string(), outcome));
    }
    if raw.is_empty() {
        return Err(Error::Validation("no data rows".into()));
    }

    let groups_sorted = sorted_labels(raw.iter().map(|r| &r.0));
    let time_labels = sorted_labels(raw.iter().map(|r| &r.1));

    let group_labels: Vec<String> = match (treated_col, spec.k_co) {
        (Some(_), Some(_)) => {
            return Err(Error::Config(
                "treated groups given both by a treated column and by a control count".into(),
            ))
        }
        (Some(_), None) => {
            let (treated, control): (Vec<String>, Vec<String>) =
                groups_sorted.into_iter().partition(|g| treated_flags[g]);
            control.into_iter().chain(treated).collect()
        }
        (None, Some(_)) => groups_sorted,
        (None, None) => {
            return Err(Error::Config(
                "no treated assignment: pass a control-group count or a treated column".into(),
            ))
        }
    };
    let k = group_labels.len();
    let k_co = match spec.k_co {
        Some(k_co) => k_co,
        None => group_labels.iter().filter(|g| !treated_flags[*g]).count(),
    };
    if k_co >= k {
        return Err(Error::Validation(format!(
            "K_co={k_co} leaves no treated group among {k} groups"
        )));
    }
    if spec.t_pre >= time_labels.len() {
        return Err(Error::Validation(format!(
            "T_pre={} leaves no post-treatment period among {} periods",
            spec.t_pre,
            time_labels.len()
        )));
    }
    let layout = PanelLayout::new(k_co, k - k_co, spec.t_pre, time_labels.len() - spec.t_pre)?;

    let group_index: BTreeMap<&str, usize> =
        group_labels.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let time_index: BTreeMap<&str, usize> =
        time_labels.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let rows = raw
        .iter()
        .map(|(g, t, y)| Observation {
            group: group_index[g.as_str()],
            time: time_index[t.as_str()],
            outcome: *y,
        })
        .collect();
    RCDataset::with_labels(layout, rows, group_labels, time_labels)
}

/// Writes `group,time,outcome,treated` rows using the dataset's labels.
///
/// Outcomes are printed in shortest round-trip form, so reading the file back
/// reproduces every value exactly.
pub fn write_long_csv_to<W: Write>(data: &RCDataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["group", "time", "outcome", "treated"])?;
    let layout = data.layout();
    for row in data.rows() {
        let treated = if layout.is_treated_group(row.group) { "1" } else { "0" };
        wtr.write_record([
            data.group_labels()[row.group].as_str(),
            data.time_labels()[row.time].as_str(),
            &row.outcome.to_string(),
            treated,
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn write_long_csv(data: &RCDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_long_csv_to(data, std::io::BufWriter::new(file))
}
