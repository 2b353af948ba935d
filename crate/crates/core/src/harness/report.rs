use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::enhance::EnhancementOutcome;
use crate::error::{Error, Result};
use crate::selector::{PortfolioState, SelectionRecord};

use super::config::RunConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based.
    pub step: u64,
    #[serde(flatten)]
    pub selection: SelectionRecord,
    /// Loss of the emitted label, once the ground truth has arrived.
    pub revealed_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub framework_loss: f64,
    /// Cumulative loss of every function seen so far, including removed ones.
    pub function_loss: BTreeMap<String, f64>,
    pub regret: Option<f64>,
    pub rolling_accuracy: Option<f64>,
    /// Acceptance-rate gap of emitted decisions, one per `gap_columns` entry.
    pub gaps: Vec<Option<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Audit {
        step: u64,
        function_id: String,
        unfair: bool,
        low_support: bool,
        flip_rate: Option<f64>,
        gaps: BTreeMap<String, Option<f64>>,
        reasons: Vec<String>,
    },
    Prune {
        step: u64,
        function_id: String,
        weight: f64,
        reasons: Vec<String>,
    },
    Enhancement {
        step: u64,
        outcome: Box<EnhancementOutcome>,
        /// Excluded from the canonical serialization.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        wall_time_ms: Option<f64>,
    },
    Reinsert {
        step: u64,
        function_id: String,
        weight: f64,
    },
    /// The instance stream ran out before the requested number of steps.
    Truncated { step: u64, requested: usize },
}

impl Event {
    pub fn step(&self) -> u64 {
        match self {
            Event::Audit { step, .. }
            | Event::Prune { step, .. }
            | Event::Enhancement { step, .. }
            | Event::Reinsert { step, .. }
            | Event::Truncated { step, .. } => *step,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub generator: String,
    pub config: RunConfig,
    pub steps_requested: usize,
    pub steps_executed: usize,
    pub truncated: bool,
    /// Names of the parity metric columns, e.g. `gap_gender`.
    pub gap_columns: Vec<String>,
    pub steps: Vec<StepRecord>,
    pub metrics: Vec<MetricsRow>,
    pub events: Vec<Event>,
    pub final_portfolio: PortfolioState,
}

impl RunReport {
    /// The report with wall-clock timings removed.
    pub fn canonical(&self) -> RunReport {
        let mut out = self.clone();
        for e in &mut out.events {
            if let Event::Enhancement { wall_time_ms, .. } = e {
                *wall_time_ms = None;
            }
        }
        out
    }

    pub fn to_canonical_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.canonical()).map_err(|e| Error::Json {
            context: "run report".into(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_canonical_json()?).map_err(|e| Error::io(path, e))
    }

    /// Final value of a parity column, e.g. `gap_zipgroup`.
    pub fn final_gap(&self, column: &str) -> Option<f64> {
        let k = self.gap_columns.iter().position(|c| c == column)?;
        self.metrics.last()?.gaps[k]
    }

    pub fn last_metrics(&self) -> Option<&MetricsRow> {
        self.metrics.last()
    }

    /// Write `metrics.csv` and `events.json` (with timings) into `dir`.
    pub fn export_metrics(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("metrics.csv");
        let csv_err = |e| Error::Csv {
            path: path.clone(),
            source: e,
        };
        let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
        let mut header = vec![
            "step".to_string(),
            "framework_loss".into(),
            "regret".into(),
            "rolling_accuracy".into(),
        ];
        header.extend(self.gap_columns.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for m in &self.metrics {
            let mut rec = vec![
                m.step.to_string(),
                m.framework_loss.to_string(),
                opt(m.regret),
                opt(m.rolling_accuracy),
            ];
            rec.extend(m.gaps.iter().map(|g| opt(*g)));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let events = dir.join("events.json");
        let text = serde_json::to_string_pretty(&self.events).map_err(|e| Error::Json {
            context: events.display().to_string(),
            source: e,
        })?;
        std::fs::write(&events, text).map_err(|e| Error::io(&events, e))
    }

    /// `report.json`, `metrics.csv` and `events.json`.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        self.export_metrics(dir)?;
        self.save(&dir.join("report.json"))
    }
}
