//! Unit-by-period outcome panels, adoption times, analysis windows and
//! per-unit treated/control averages.
//!
//! Periods are 1-based day indices: period 1 is the panel's anchor date and
//! period `T` its last day. A window of half-length `tau` around adoption
//! period `a0` covers periods `a0 - tau ..= a0 + tau - 1`; the adoption day
//! itself is the first treated period.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::assignment::{expand, AssignmentDraw, AssignmentMatrix};
use crate::error::{Error, Result};

/// How the outcome values were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OutcomeTransform {
    Raw,
    Detrended { halfwidth: usize, pre_only: bool },
}

impl OutcomeTransform {
    pub fn is_adjusted(&self) -> bool {
        !matches!(self, OutcomeTransform::Raw)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelMetadata {
    pub source: Option<String>,
    pub filter: Option<String>,
    /// Cells that had no input row and were set to zero.
    pub zero_filled_cells: usize,
    pub transform: OutcomeTransform,
}

impl Default for PanelMetadata {
    fn default() -> Self {
        PanelMetadata {
            source: None,
            filter: None,
            zero_filled_cells: 0,
            transform: OutcomeTransform::Raw,
        }
    }
}

/// Dense `n x T` grid of observed outcomes, one row per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    unit_ids: Vec<String>,
    start: NaiveDate,
    periods: usize,
    outcomes: Vec<f64>,
    metadata: PanelMetadata,
}

impl PanelDataset {
    /// Builds a panel from a row-major outcome matrix (`unit_ids.len()` rows of
    /// `periods` values each).
    pub fn new(
        unit_ids: Vec<String>,
        start: NaiveDate,
        periods: usize,
        outcomes: Vec<f64>,
    ) -> Result<Self> {
        Self::with_metadata(unit_ids, start, periods, outcomes, PanelMetadata::default())
    }

    pub fn with_metadata(
        unit_ids: Vec<String>,
        start: NaiveDate,
        periods: usize,
        outcomes: Vec<f64>,
        metadata: PanelMetadata,
    ) -> Result<Self> {
        if unit_ids.is_empty() {
            return Err(Error::InvalidArgument("panel has no units".into()));
        }
        if periods < 2 {
            return Err(Error::PanelTooShort {
                needed: 2,
                found: periods,
            });
        }
        if outcomes.len() != unit_ids.len() * periods {
            return Err(Error::InvalidArgument(format!(
                "outcome matrix has {} cells, expected {} x {}",
                outcomes.len(),
                unit_ids.len(),
                periods
            )));
        }
        if let Some(pos) = outcomes.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite outcome for unit `{}` at period {}",
                unit_ids[pos / periods],
                pos % periods + 1
            )));
        }
        Ok(PanelDataset {
            unit_ids,
            start,
            periods,
            outcomes,
            metadata,
        })
    }

    /// Convenience constructor for synthetic panels with labels `u000`, `u001`, ...
    pub fn from_rows(start: NaiveDate, rows: &[Vec<f64>]) -> Result<Self> {
        let periods = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != periods) {
            return Err(Error::InvalidArgument("ragged outcome rows".into()));
        }
        let width = rows.len().to_string().len().max(3);
        let ids = (0..rows.len()).map(|i| format!("u{i:0width$}")).collect();
        Self::new(ids, start, periods, rows.concat())
    }

    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn n_periods(&self) -> usize {
        self.periods
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn start_date(&self) -> NaiveDate {
        self.start
    }

    pub fn end_date(&self) -> NaiveDate {
        self.date_of(self.periods)
    }

    pub fn metadata(&self) -> &PanelMetadata {
        &self.metadata
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    /// Outcome of unit `unit` (0-based) at 1-based `period`.
    pub fn outcome(&self, unit: usize, period: usize) -> f64 {
        self.outcomes[unit * self.periods + period - 1]
    }

    pub fn row(&self, unit: usize) -> &[f64] {
        &self.outcomes[unit * self.periods..(unit + 1) * self.periods]
    }

    /// Calendar date of a 1-based period index.
    pub fn date_of(&self, period: usize) -> NaiveDate {
        self.start + Duration::days(period as i64 - 1)
    }

    /// 1-based period index of a calendar date.
    pub fn period_of(&self, date: NaiveDate) -> Result<usize> {
        let offset = (date - self.start).num_days();
        if offset < 0 || offset as usize >= self.periods {
            return Err(Error::DateOutOfRange(date.to_string()));
        }
        Ok(offset as usize + 1)
    }

    pub fn adoption_on(&self, date: NaiveDate) -> Result<AdoptionTime> {
        self.adoption_at(self.period_of(date)?)
    }

    pub fn adoption_at(&self, period: usize) -> Result<AdoptionTime> {
        if period <= 1 || period > self.periods {
            return Err(Error::InvalidAdoption { a0: period });
        }
        Ok(AdoptionTime {
            period,
            date: self.date_of(period),
        })
    }

    /// Same panel with every outcome replaced by `f(unit, period, value)`.
    pub fn map_outcomes(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Result<Self> {
        let outcomes = self
            .outcomes
            .iter()
            .enumerate()
            .map(|(k, &v)| f(k / self.periods, k % self.periods + 1, v))
            .collect();
        Self::with_metadata(
            self.unit_ids.clone(),
            self.start,
            self.periods,
            outcomes,
            self.metadata.clone(),
        )
    }

    /// Reorders units by the given permutation of row indices, keeping labels attached.
    pub fn permute_units(&self, order: &[usize]) -> Result<Self> {
        let ids = order.iter().map(|&i| self.unit_ids[i].clone()).collect();
        let outcomes = order
            .iter()
            .flat_map(|&i| self.row(i).iter().copied())
            .collect();
        Self::with_metadata(
            ids,
            self.start,
            self.periods,
            outcomes,
            self.metadata.clone(),
        )
    }
}

/// The period at which the policy took effect; the adoption day is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdoptionTime {
    pub period: usize,
    pub date: NaiveDate,
}

/// Column names used when reading a panel from delimited text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PanelSchema {
    pub unit: String,
    pub date: String,
    pub count: String,
    pub category: Option<String>,
}

impl Default for PanelSchema {
    fn default() -> Self {
        PanelSchema {
            unit: "unit".into(),
            date: "date".into(),
            count: "count".into(),
            category: None,
        }
    }
}

/// Keeps only rows whose category column equals one of `values`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryFilter {
    pub values: Vec<String>,
}

impl CategoryFilter {
    pub fn describe(&self, column: &str) -> String {
        format!("{column} in [{}]", self.values.join(", "))
    }

    fn matches(&self, value: &str) -> bool {
        self.values.iter().any(|v| v == value)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingPolicy {
    /// Absent (unit, day) cells mean zero events that day.
    #[default]
    ZeroFill,
    /// Absent cells are an error.
    Strict,
}

fn detect_delimiter(text: &str) -> u8 {
    let header = text.lines().next().unwrap_or("");
    if header.matches('\t').count() > header.matches(',').count() {
        b'\t'
    } else {
        b','
    }
}

/// Reads a long-format `(unit, date, count[, category])` table into a dense panel.
///
/// Units and the calendar range come from every row of the input; the category
/// filter only decides which counts are summed into cells, so category slices
/// share one grid. Units are sorted by label.
pub fn load_panel<R: Read>(
    mut source: R,
    schema: &PanelSchema,
    filter: Option<&CategoryFilter>,
    missing: MissingPolicy,
) -> Result<PanelDataset> {
    let mut text = String::new();
    source.read_to_string(&mut text).map_err(|e| Error::Parse {
        line: 0,
        message: format!("reading input: {e}"),
    })?;

    let mut reader = csv::ReaderBuilder::new()
        .delimiter(detect_delimiter(&text))
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let unit_col = column(&schema.unit)?;
    let date_col = column(&schema.date)?;
    let count_col = column(&schema.count)?;
    let category_col = match (&schema.category, filter) {
        (Some(name), _) => Some(column(name)?),
        (None, Some(_)) => {
            return Err(Error::InvalidArgument(
                "category filter given without a category column".into(),
            ))
        }
        (None, None) => None,
    };

    let mut units = BTreeSet::new();
    let mut cells: BTreeMap<(String, NaiveDate), f64> = BTreeMap::new();
    let mut range: Option<(NaiveDate, NaiveDate)> = None;
    let mut kept_rows = 0usize;

    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |idx: usize, what: &str| {
            record.get(idx).ok_or_else(|| Error::Parse {
                line,
                message: format!("missing {what} field"),
            })
        };
        let unit = field(unit_col, "unit")?;
        if unit.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty unit label".into(),
            });
        }
        let raw_date = field(date_col, "date")?;
        let date = NaiveDate::parse_from_str(raw_date, "%Y-%m-%d").map_err(|e| Error::Parse {
            line,
            message: format!("bad date `{raw_date}`: {e}"),
        })?;
        let raw_count = field(count_col, "count")?;
        let count: f64 = raw_count
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| Error::Parse {
                line,
                message: format!("non-numeric count `{raw_count}`"),
            })?;

        units.insert(unit.to_string());
        range = Some(match range {
            None => (date, date),
            Some((lo, hi)) => (lo.min(date), hi.max(date)),
        });

        if let (Some(f), Some(col)) = (filter, category_col) {
            if !f.matches(field(col, "category")?) {
                continue;
            }
        }
        kept_rows += 1;
        *cells.entry((unit.to_string(), date)).or_insert(0.0) += count;
    }

    let filter_desc = filter.map(|f| f.describe(schema.category.as_deref().unwrap_or("category")));
    let Some((first, last)) = range.filter(|_| kept_rows > 0) else {
        return Err(Error::EmptyInput {
            filter: filter_desc,
        });
    };
    let periods = (last - first).num_days() as usize + 1;
    if periods < 2 {
        return Err(Error::PanelTooShort {
            needed: 2,
            found: periods,
        });
    }

    let unit_ids: Vec<String> = units.into_iter().collect();
    let mut outcomes = vec![0.0; unit_ids.len() * periods];
    let mut filled = vec![false; outcomes.len()];
    let index: BTreeMap<&str, usize> = unit_ids
        .iter()
        .enumerate()
        .map(|(i, u)| (u.as_str(), i))
        .collect();
    for ((unit, date), value) in &cells {
        let k = index[unit.as_str()] * periods + (*date - first).num_days() as usize;
        outcomes[k] = *value;
        filled[k] = true;
    }
    let zero_filled = filled.iter().filter(|f| !**f).count();
    if missing == MissingPolicy::Strict && zero_filled > 0 {
        let k = filled.iter().position(|f| !*f).unwrap();
        return Err(Error::MissingCell {
            unit: unit_ids[k / periods].clone(),
            date: (first + Duration::days((k % periods) as i64)).to_string(),
        });
    }
    if zero_filled > 0 {
        log::info!("zero-filled {zero_filled} unit-days with no input rows");
    }

    PanelDataset::with_metadata(
        unit_ids,
        first,
        periods,
        outcomes,
        PanelMetadata {
            source: None,
            filter: filter_desc,
            zero_filled_cells: zero_filled,
            transform: OutcomeTransform::Raw,
        },
    )
}

pub fn load_panel_path(
    path: &Path,
    schema: &PanelSchema,
    filter: Option<&CategoryFilter>,
    missing: MissingPolicy,
) -> Result<PanelDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut panel = load_panel(file, schema, filter, missing)?;
    panel.metadata.source = Some(path.display().to_string());
    Ok(panel)
}

/// The `2 tau` periods around an adoption time, sliced out of a panel.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowView {
    tau: usize,
    adoption: usize,
    n_units: usize,
    slab: Vec<f64>,
    transform: OutcomeTransform,
}

impl WindowView {
    /// Builds a view directly from an `n x 2tau` slab, row-major.
    pub fn from_slab(tau: usize, adoption: usize, slab: Vec<f64>) -> Result<Self> {
        if tau == 0 {
            return Err(Error::ZeroTau);
        }
        if slab.is_empty() || !slab.len().is_multiple_of(2 * tau) {
            return Err(Error::InvalidArgument(format!(
                "slab of {} cells is not a multiple of window width {}",
                slab.len(),
                2 * tau
            )));
        }
        Ok(WindowView {
            tau,
            adoption,
            n_units: slab.len() / (2 * tau),
            slab,
            transform: OutcomeTransform::Raw,
        })
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn width(&self) -> usize {
        2 * self.tau
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn adoption_period(&self) -> usize {
        self.adoption
    }

    /// Panel periods covered, in order.
    pub fn periods(&self) -> std::ops::RangeInclusive<usize> {
        self.adoption - self.tau..=self.adoption + self.tau - 1
    }

    pub fn transform(&self) -> OutcomeTransform {
        self.transform
    }

    pub fn slab(&self) -> &[f64] {
        &self.slab
    }

    pub fn row(&self, unit: usize) -> &[f64] {
        &self.slab[unit * self.width()..(unit + 1) * self.width()]
    }

    /// Same window with `f(unit, column, value)` applied to every cell.
    pub fn map_cells(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Self {
        let w = self.width();
        WindowView {
            slab: self
                .slab
                .iter()
                .enumerate()
                .map(|(k, &v)| f(k / w, k % w, v))
                .collect(),
            ..self.clone()
        }
    }
}

/// Slices the window of half-length `tau` around `a0`.
pub fn window(panel: &PanelDataset, a0: AdoptionTime, tau: usize) -> Result<WindowView> {
    if tau == 0 {
        return Err(Error::ZeroTau);
    }
    let first = a0.period as i64 - tau as i64;
    let last = a0.period as i64 + tau as i64 - 1;
    if first < 1 || last > panel.n_periods() as i64 {
        return Err(Error::WindowOutOfBounds {
            tau,
            a0: a0.period,
            first,
            last,
            periods: panel.n_periods(),
        });
    }
    let lo = first as usize - 1;
    let slab = (0..panel.n_units())
        .flat_map(|i| panel.row(i)[lo..lo + 2 * tau].iter().copied())
        .collect();
    Ok(WindowView {
        tau,
        adoption: a0.period,
        n_units: panel.n_units(),
        slab,
        transform: panel.metadata().transform,
    })
}

/// Per-unit treated and control means under one assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitAverages {
    pub tau: usize,
    pub adjusted: bool,
    pub treated_mean: Vec<f64>,
    pub control_mean: Vec<f64>,
    pub treated_count: Vec<usize>,
    pub control_count: Vec<usize>,
}

impl UnitAverages {
    pub fn n_units(&self) -> usize {
        self.treated_mean.len()
    }
}

pub fn unit_averages(view: &WindowView, draw: &AssignmentDraw) -> Result<UnitAverages> {
    let matrix = expand(draw, view)?;
    unit_averages_from_matrix(view, &matrix)
}

pub fn unit_averages_from_matrix(
    view: &WindowView,
    matrix: &AssignmentMatrix,
) -> Result<UnitAverages> {
    if matrix.n_units() != view.n_units() || matrix.width() != view.width() {
        return Err(Error::DrawLength {
            expected: view.n_units(),
            found: matrix.n_units(),
        });
    }
    let n = view.n_units();
    let mut avgs = UnitAverages {
        tau: view.tau(),
        adjusted: view.transform().is_adjusted(),
        treated_mean: Vec::with_capacity(n),
        control_mean: Vec::with_capacity(n),
        treated_count: Vec::with_capacity(n),
        control_count: Vec::with_capacity(n),
    };
    for i in 0..n {
        let (mut sum1, mut sum0, mut n1, mut n0) = (0.0, 0.0, 0usize, 0usize);
        for (&y, &d) in view.row(i).iter().zip(matrix.row(i)) {
            if d == 1 {
                sum1 += y;
                n1 += 1;
            } else {
                sum0 += y;
                n0 += 1;
            }
        }
        if n1 == 0 {
            return Err(Error::DegenerateAssignment {
                unit: i,
                missing: "treated",
            });
        }
        if n0 == 0 {
            return Err(Error::DegenerateAssignment {
                unit: i,
                missing: "control",
            });
        }
        avgs.treated_mean.push(sum1 / n1 as f64);
        avgs.control_mean.push(sum0 / n0 as f64);
        avgs.treated_count.push(n1);
        avgs.control_count.push(n0);
    }
    Ok(avgs)
}
