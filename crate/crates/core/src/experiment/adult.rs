//! UCI Adult preprocessing for the logistic-regression experiment.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Example;

/// Column order of the raw `adult.data` / `adult.test` files.
pub const ADULT_COLUMNS: [&str; 15] = [
    "age",
    "workclass",
    "fnlwgt",
    "education",
    "education-num",
    "marital-status",
    "occupation",
    "relationship",
    "race",
    "sex",
    "capital-gain",
    "capital-loss",
    "hours-per-week",
    "native-country",
    "income",
];

const DROPPED: [&str; 3] = ["education-num", "native-country", "relationship"];
const CONTINUOUS: [&str; 5] = ["age", "fnlwgt", "capital-gain", "capital-loss", "hours-per-week"];
const CATEGORICAL: [&str; 6] = ["workclass", "education", "marital-status", "occupation", "race", "sex"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub features: Vec<String>,
    pub feature_count: usize,
    pub dropped_columns: Vec<String>,
    pub train_rows: usize,
    pub test_rows: usize,
    pub dropped_train_rows: usize,
    pub dropped_test_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdultData {
    pub train: Vec<Example>,
    pub test: Vec<Example>,
    pub manifest: FeatureManifest,
}

struct RawTable {
    rows: Vec<BTreeMap<&'static str, String>>,
    label: Vec<bool>,
    dropped: usize,
}

/// `>50K` (with optional trailing `.` and whitespace) is positive, `<=50K` / `≤50K` negative.
pub fn parse_income(s: &str) -> Option<bool> {
    let t = s.trim().trim_end_matches('.').trim();
    match t {
        ">50K" => Some(true),
        "<=50K" | "≤50K" => Some(false),
        _ => None,
    }
}

fn parse_table(text: &str) -> Result<RawTable> {
    let mut lines = text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('|'))
        .peekable();
    // optional header; otherwise the fixed UCI layout
    let mut index: Vec<usize> = (0..ADULT_COLUMNS.len()).collect();
    if let Some(first) = lines.peek() {
        let cells: Vec<String> = first.split(',').map(|c| c.trim().to_string()).collect();
        if cells.iter().any(|c| c == "age") {
            index = ADULT_COLUMNS
                .iter()
                .map(|name| {
                    cells
                        .iter()
                        .position(|c| c == name)
                        .ok_or_else(|| Error::MissingColumn((*name).to_string()))
                })
                .collect::<Result<_>>()?;
            lines.next();
        }
    }
    let mut rows = Vec::new();
    let mut label = Vec::new();
    let mut dropped = 0;
    'row: for line in lines {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let mut row = BTreeMap::new();
        for (name, &i) in ADULT_COLUMNS.iter().zip(&index) {
            match cells.get(i) {
                Some(v) if !v.is_empty() && *v != "?" => {
                    row.insert(*name, (*v).to_string());
                }
                _ => {
                    dropped += 1;
                    continue 'row;
                }
            }
        }
        let ok_numbers = CONTINUOUS.iter().all(|c| row[c].parse::<f64>().is_ok());
        match (ok_numbers, parse_income(&row["income"])) {
            (true, Some(y)) => {
                rows.push(row);
                label.push(y);
            }
            _ => dropped += 1,
        }
    }
    Ok(RawTable { rows, label, dropped })
}

struct Encoder {
    ranges: Vec<(f64, f64)>,
    categories: Vec<Vec<String>>,
}

impl Encoder {
    fn fit(table: &RawTable) -> Self {
        let ranges = CONTINUOUS
            .iter()
            .map(|c| {
                table
                    .rows
                    .iter()
                    .map(|r| r[c].parse::<f64>().expect("checked"))
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
            })
            .collect();
        let categories = CATEGORICAL
            .iter()
            .map(|c| {
                let set: BTreeSet<&str> = table.rows.iter().map(|r| r[c].as_str()).collect();
                set.into_iter().map(str::to_string).collect()
            })
            .collect();
        Self { ranges, categories }
    }

    fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = CONTINUOUS.iter().map(|c| (*c).to_string()).collect();
        for (c, cats) in CATEGORICAL.iter().zip(&self.categories) {
            names.extend(cats.iter().map(|v| format!("{c}={v}")));
        }
        names
    }

    fn encode(&self, table: &RawTable) -> Vec<Example> {
        table
            .rows
            .iter()
            .zip(&table.label)
            .map(|(r, &y)| {
                let mut x = Vec::new();
                for (c, &(lo, hi)) in CONTINUOUS.iter().zip(&self.ranges) {
                    let v: f64 = r[c].parse().expect("checked");
                    // degenerate range maps to the midpoint
                    x.push(if hi > lo {
                        ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
                    } else {
                        0.5
                    });
                }
                for (c, cats) in CATEGORICAL.iter().zip(&self.categories) {
                    x.extend(cats.iter().map(|v| if *v == r[c] { 1.0 } else { 0.0 }));
                }
                Example {
                    x,
                    y: if y { 1.0 } else { 0.0 },
                }
            })
            .collect()
    }
}

/// Encodes raw Adult text. Categories and min-max ranges are fitted on `train`
/// and reused for `test`.
pub fn ingest_adult_text(train: &str, test: Option<&str>) -> Result<AdultData> {
    let tr = parse_table(train)?;
    if tr.rows.is_empty() {
        return Err(Error::Parse("no usable rows in the Adult training file".into()));
    }
    let te = match test {
        Some(t) => parse_table(t)?,
        None => RawTable {
            rows: Vec::new(),
            label: Vec::new(),
            dropped: 0,
        },
    };
    let enc = Encoder::fit(&tr);
    let features = enc.names();
    let manifest = FeatureManifest {
        feature_count: features.len(),
        features,
        dropped_columns: DROPPED.iter().map(|c| (*c).to_string()).collect(),
        train_rows: tr.rows.len(),
        test_rows: te.rows.len(),
        dropped_train_rows: tr.dropped,
        dropped_test_rows: te.dropped,
    };
    Ok(AdultData {
        train: enc.encode(&tr),
        test: enc.encode(&te),
        manifest,
    })
}

/// Reads `raw` (a file, or a directory holding `adult.data` and optionally
/// `adult.test`) and writes `train.csv`, `test.csv` and `features.json` to `out`.
pub fn ingest_adult(raw: impl AsRef<Path>, out: impl AsRef<Path>) -> Result<FeatureManifest> {
    let raw = raw.as_ref();
    let out = out.as_ref();
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
    let (train, test) = if raw.is_dir() {
        let test_path = raw.join("adult.test");
        (
            read(&raw.join("adult.data"))?,
            test_path.exists().then(|| read(&test_path)).transpose()?,
        )
    } else {
        (read(raw)?, None)
    };
    let data = ingest_adult_text(&train, test.as_deref())?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_dataset_csv(out.join("train.csv"), &data.manifest.features, &data.train)?;
    write_dataset_csv(out.join("test.csv"), &data.manifest.features, &data.test)?;
    let mp = out.join("features.json");
    let body = serde_json::to_string_pretty(&data.manifest).expect("serializable") + "\n";
    std::fs::write(&mp, body).map_err(|e| Error::io(&mp, e))?;
    Ok(data.manifest)
}

/// Feature columns followed by a `label` column.
pub fn write_dataset_csv(path: impl AsRef<Path>, names: &[String], data: &[Example]) -> Result<()> {
    let path = path.as_ref();
    let mut s = names.join(",");
    s.push_str(",label\n");
    for e in data {
        for v in &e.x {
            let _ = write!(s, "{v},");
        }
        let _ = writeln!(s, "{}", e.y);
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_dataset_csv(path: impl AsRef<Path>) -> Result<Vec<Example>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse(format!("{}: empty file", path.display())))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.last() != Some(&"label") {
        return Err(Error::MissingColumn("label".into()));
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let vals = l
                .split(',')
                .map(|c| c.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|_| Error::Parse(format!("{}: row {}", path.display(), i + 2)))?;
            if vals.len() != cols.len() {
                return Err(Error::Parse(format!(
                    "{}: row {} has {} cells",
                    path.display(),
                    i + 2,
                    vals.len()
                )));
            }
            let (x, y) = vals.split_at(vals.len() - 1);
            Ok(Example { x: x.to_vec(), y: y[0] })
        })
        .collect()
}
