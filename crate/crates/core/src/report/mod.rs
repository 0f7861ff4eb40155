//! Run configuration, versioned JSON reports and their CSV/SVG views.

mod config;
mod output;
mod run;
mod svg;

pub use config::{
    CommandConfig, InputConfig, MechanismConfig, OutputFormat, RunConfig, StatisticConfig,
};
pub use output::{render_csv_tables, render_files, write_files, RenderedFile};
pub use run::{execute, execute_on, resolve, run, run_with_threads, RunOutcome};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{FalsificationReport, WindowSelectionResult};
use crate::inference::{CIResult, JointResult, TestResult};
use crate::panel::{OutcomeTransform, PanelDataset};
use crate::statistics::DetrendFit;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub generator: String,
    pub config: RunConfig,
    pub panel: PanelSummary,
    pub blocks: Vec<ResultBlock>,
}

impl Report {
    pub fn to_json(&self) -> crate::Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> crate::Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn tests(&self) -> impl Iterator<Item = &TestEntry> {
        self.blocks.iter().flat_map(|b| match b {
            ResultBlock::Test { entries } => entries.as_slice(),
            _ => &[],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelSummary {
    pub n_units: usize,
    pub n_periods: usize,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub source: Option<String>,
    pub filter: Option<String>,
    /// Unit-days absent from the input and counted as zero.
    pub zero_filled_cells: usize,
    pub transform: OutcomeTransform,
}

impl PanelSummary {
    pub fn of(panel: &PanelDataset) -> Self {
        let meta = panel.metadata();
        PanelSummary {
            n_units: panel.n_units(),
            n_periods: panel.n_periods(),
            start: panel.start_date(),
            end: panel.end_date(),
            source: meta.source.clone(),
            filter: meta.filter.clone(),
            zero_filled_cells: meta.zero_filled_cells,
            transform: meta.transform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum ResultBlock {
    Test {
        entries: Vec<TestEntry>,
    },
    Joint {
        results: Vec<JointResult>,
    },
    SelectWindow {
        result: WindowSelectionResult,
    },
    Falsify {
        report: FalsificationReport,
        labels: Vec<String>,
    },
    Detrend {
        fit: DetrendFit,
        unit_ids: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestEntry {
    /// Column label of the mechanism in tabular output, e.g. `tr` or `at`.
    pub label: String,
    pub test: TestResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci: Option<CIResult>,
    pub summary: Summary,
}

/// Effect expressed in totals over the window and relative to the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub estimate: f64,
    pub control_baseline: f64,
    pub n_units: usize,
    pub days_per_side: usize,
    /// `100 * estimate / baseline`; absent when the baseline is zero.
    pub relative_effect_pct: Option<f64>,
    pub pre_total: f64,
    pub post_total: f64,
}

impl Summary {
    pub fn pre_total_rounded(&self) -> i64 {
        self.pre_total.round() as i64
    }

    pub fn post_total_rounded(&self) -> i64 {
        self.post_total.round() as i64
    }
}

pub fn summarize(
    estimate: f64,
    control_baseline: f64,
    n_units: usize,
    days_per_side: usize,
) -> Summary {
    let scale = (n_units * days_per_side) as f64;
    Summary {
        estimate,
        control_baseline,
        n_units,
        days_per_side,
        relative_effect_pct: (control_baseline != 0.0).then(|| 100.0 * estimate / control_baseline),
        pre_total: control_baseline * scale,
        post_total: (control_baseline + estimate) * scale,
    }
}

pub fn derive_summary(result: &TestResult, n_units: usize, days_per_side: usize) -> Summary {
    summarize(
        result.observed_stat,
        result.control_baseline,
        n_units,
        days_per_side,
    )
}
