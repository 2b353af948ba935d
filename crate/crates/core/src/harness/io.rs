//! Dataset CSV files and their JSON sidecar.
//!
//! The CSV header is fixed:
//! `id,gender,school,city,zip,truth,loss_reject,loss_accept`. `truth` and the
//! two losses are either all present or all empty.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{AttributeSchema, Dataset, GroundTruthEntry, Label, Value};
use crate::error::{Error, Result};
use crate::scenario::{hiring_schema, ScenarioConfig};

pub const CSV_HEADER: [&str; 8] = [
    "id",
    "gender",
    "school",
    "city",
    "zip",
    "truth",
    "loss_reject",
    "loss_accept",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub id: u64,
    pub gender: String,
    pub school: u64,
    pub city: String,
    pub zip: String,
    pub truth: Option<u8>,
    pub loss_reject: Option<f64>,
    pub loss_accept: Option<f64>,
}

/// Sidecar describing how a dataset was generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub cities: Vec<String>,
    /// ZIP -> group.
    pub zip_groups: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub generator: String,
}

impl DatasetMeta {
    pub fn for_scenario(cfg: &ScenarioConfig) -> Self {
        DatasetMeta {
            cities: cfg.cities.clone(),
            zip_groups: cfg.zip_table().into_iter().collect(),
            scenario: Some(cfg.clone()),
            seed: Some(cfg.seed),
            generator: concat!("fairfolio ", env!("CARGO_PKG_VERSION")).to_string(),
        }
    }

    pub fn schema(&self) -> Result<Arc<AttributeSchema>> {
        let zips: Vec<(String, String)> = self.zip_groups.clone().into_iter().collect();
        hiring_schema(&self.cities, &zips)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Json {
            context: path.display().to_string(),
            source: e,
        })?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// `data.csv` -> `data.meta.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

pub fn read_rows(path: &Path) -> Result<Vec<CsvRow>> {
    let csv_err = |e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let header = reader.headers().map_err(csv_err)?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: format!("expected header `{}`", CSV_HEADER.join(",")),
        });
    }
    reader
        .deserialize()
        .map(|r| r.map_err(csv_err))
        .collect()
}

/// Schema inferred from the values present; every ZIP is its own group.
pub fn infer_schema<'a>(rows: impl IntoIterator<Item = &'a CsvRow>) -> Result<Arc<AttributeSchema>> {
    let mut cities: Vec<String> = Vec::new();
    let mut zips: BTreeMap<String, String> = BTreeMap::new();
    for r in rows {
        if !cities.contains(&r.city) {
            cities.push(r.city.clone());
        }
        zips.insert(r.zip.clone(), r.zip.clone());
    }
    if cities.is_empty() {
        return Err(Error::EmptyData("no rows to infer a schema from".into()));
    }
    hiring_schema(&cities, &zips.into_iter().collect::<Vec<_>>())
}

pub fn rows_to_dataset(path: &Path, rows: &[CsvRow], schema: Arc<AttributeSchema>) -> Result<Dataset> {
    let parse_err = |id: u64, m: String| Error::Parse {
        path: path.to_path_buf(),
        message: format!("row {id}: {m}"),
    };
    let mut ds = Dataset::new(schema.clone());
    for r in rows {
        let school = r.school.to_string();
        let inst = schema.parse_instance(r.id, &[&r.gender, &school, &r.city, &r.zip])?;
        let truth = match (r.truth, r.loss_reject, r.loss_accept) {
            (None, None, None) => None,
            (Some(t), Some(l0), Some(l1)) => {
                let desired = Label::try_from(t).map_err(|m| parse_err(r.id, m))?;
                Some(GroundTruthEntry::new(r.id, desired, l0, l1)?)
            }
            _ => {
                return Err(parse_err(
                    r.id,
                    "losses must be present iff truth is present".into(),
                ))
            }
        };
        ds.push(inst, truth)?;
    }
    Ok(ds)
}

/// Read a dataset file against a known schema.
pub fn read_dataset(path: &Path, schema: Arc<AttributeSchema>) -> Result<Dataset> {
    let rows = read_rows(path)?;
    rows_to_dataset(path, &rows, schema)
}

/// Schema from an explicit sidecar, the default sidecar next to `csv`, or
/// inference over `rows`.
pub fn resolve_schema(csv: &Path, meta: Option<&Path>, rows: &[&CsvRow]) -> Result<Arc<AttributeSchema>> {
    let implicit = sidecar_path(csv);
    match meta {
        Some(m) => DatasetMeta::load(m)?.schema(),
        None if implicit.exists() => DatasetMeta::load(&implicit)?.schema(),
        None => infer_schema(rows.iter().copied()),
    }
}

/// Read a dataset, resolving its schema from the sidecar when present.
pub fn load_dataset(path: &Path, meta: Option<&Path>) -> Result<Dataset> {
    let rows = read_rows(path)?;
    let refs: Vec<&CsvRow> = rows.iter().collect();
    let schema = resolve_schema(path, meta, &refs)?;
    rows_to_dataset(path, &rows, schema)
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let csv_err = |e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    };
    let schema = data.schema();
    let attr = |name: &str| schema.require(name);
    let (g, s, c, z) = (attr("gender")?, attr("school")?, attr("city")?, attr("zip")?);
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for i in data.instances() {
        let school = match i.values[s] {
            Value::Num(x) if x >= 0.0 && x.fract() == 0.0 => format!("{}", x as u64),
            other => {
                return Err(Error::Schema(format!(
                    "instance {}: school must be a whole number of years, got {other:?}",
                    i.id
                )))
            }
        };
        let (t, l0, l1) = match data.truth(i.id) {
            Some(t) => (
                t.desired.as_u8().to_string(),
                format!("{}", t.loss_reject),
                format!("{}", t.loss_accept),
            ),
            None => (String::new(), String::new(), String::new()),
        };
        w.write_record([
            i.id.to_string(),
            schema.render(g, i.values[g]),
            school,
            schema.render(c, i.values[c]),
            schema.render(z, i.values[z]),
            t,
            l0,
            l1,
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
