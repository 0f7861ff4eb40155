//! Placebo-cutoff window selection and falsification scans over artificial
//! adoption times. Both are thin drivers over [`crate::inference`]: every
//! cell is an ordinary randomization test with its own derived seed.

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::assignment::MechanismKind;
use crate::error::{Error, Result};
use crate::inference::{randomization_test, Design, MechanismFamily, StatisticMode, TestSettings};
use crate::panel::{AdoptionTime, PanelDataset};
use crate::rng::derive_seed;

pub const DEFAULT_SELECTION_THRESHOLD: f64 = 0.15;
pub const DEFAULT_FLAG_LEVEL: f64 = 0.05;

fn date_key(date: NaiveDate) -> u64 {
    date.num_days_from_ce() as u64
}

fn kind_key(kind: MechanismKind) -> u64 {
    match kind {
        MechanismKind::Tr => 1,
        MechanismKind::At => 2,
    }
}

/// Seed of one diagnostic cell; adding cells to a scan never changes others.
pub fn cell_seed(master: u64, date: NaiveDate, tau: usize, kind: MechanismKind) -> u64 {
    derive_seed(master, &[date_key(date), tau as u64, kind_key(kind)])
}

/// A placebo adoption time given as a date or as a day offset from the true adoption.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlaceboTime {
    Date(NaiveDate),
    OffsetDays(i64),
}

impl PlaceboTime {
    pub fn resolve(&self, true_adoption: NaiveDate) -> NaiveDate {
        match *self {
            PlaceboTime::Date(d) => d,
            PlaceboTime::OffsetDays(k) => true_adoption + Duration::days(k),
        }
    }
}

impl std::str::FromStr for PlaceboTime {
    type Err = Error;

    /// Accepts `YYYY-MM-DD`, `-28d` or `-28`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
            return Ok(PlaceboTime::Date(d));
        }
        s.trim_end_matches('d')
            .parse::<i64>()
            .map(PlaceboTime::OffsetDays)
            .map_err(|_| {
                Error::InvalidArgument(format!("placebo `{s}` is neither a date nor a day offset"))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowPoint {
    pub tau: usize,
    pub estimate: f64,
    pub p_value: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSelectionResult {
    pub placebo: AdoptionTime,
    pub mechanism: MechanismKind,
    pub threshold: f64,
    pub curve: Vec<WindowPoint>,
    /// Largest tau whose p-value and all smaller windows' p-values reach the
    /// threshold; 0 when the smallest window already falls below it.
    pub selected_tau_star: usize,
}

impl WindowSelectionResult {
    pub fn tau_max(&self) -> usize {
        self.curve.len()
    }
}

/// Applies the stopping rule to p-values ordered by tau = 1, 2, ...
pub fn select_tau(p_values: &[f64], threshold: f64) -> usize {
    p_values.iter().take_while(|&&p| p >= threshold).count()
}

#[derive(Debug, Clone)]
pub struct SelectionRequest {
    pub placebo: NaiveDate,
    pub tau_max: usize,
    pub family: MechanismFamily,
    pub threshold: f64,
    pub statistic: StatisticMode,
}

/// Runs the test at a pre-adoption placebo time for every tau up to `tau_max`.
pub fn select_window(
    panel: &PanelDataset,
    true_adoption: NaiveDate,
    request: &SelectionRequest,
    settings: &TestSettings,
) -> Result<WindowSelectionResult> {
    if request.tau_max == 0 {
        return Err(Error::ZeroTau);
    }
    let a0 = panel.adoption_on(true_adoption)?;
    let placebo = panel.adoption_on(request.placebo)?;
    if placebo.period + request.tau_max > a0.period {
        return Err(Error::Contaminated(format!(
            "placebo {} with tau_max={} reaches the true adoption {}",
            placebo.date, request.tau_max, a0.date
        )));
    }
    let design = Design::new(panel, request.placebo, request.statistic)?;
    let kind = request.family.kind();
    let curve = (1..=request.tau_max)
        .map(|tau| {
            let seed = cell_seed(settings.seed, placebo.date, tau, kind);
            let spec = request.family.spec_for(tau)?;
            let r = randomization_test(&design, tau, &spec, &settings.with_seed(seed))?;
            Ok(WindowPoint {
                tau,
                estimate: r.observed_stat,
                p_value: r.p_value,
                seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let p: Vec<f64> = curve.iter().map(|c| c.p_value).collect();
    let selected = select_tau(&p, request.threshold);
    if selected == 0 {
        log::warn!(
            "no validated window: p(1) below threshold {}",
            request.threshold
        );
    }
    Ok(WindowSelectionResult {
        placebo,
        mechanism: kind,
        threshold: request.threshold,
        curve,
        selected_tau_star: selected,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlaceboMode {
    /// Same month and day in another year.
    SameDate,
    /// Same occurrence of the same weekday in the same month (e.g. first Wednesday of November).
    SameWeekday,
}

/// The artificial adoption date in `year` corresponding to `true_date`.
pub fn artificial_date(true_date: NaiveDate, year: i32, mode: PlaceboMode) -> Result<NaiveDate> {
    match mode {
        PlaceboMode::SameDate => NaiveDate::from_ymd_opt(year, true_date.month(), true_date.day())
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "{}-{:02}-{:02} does not exist",
                    year,
                    true_date.month(),
                    true_date.day()
                ))
            }),
        PlaceboMode::SameWeekday => {
            let nth = (true_date.day0() / 7 + 1) as u8;
            nth_weekday(year, true_date.month(), true_date.weekday(), nth).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "no occurrence {nth} of {:?} in {year}-{:02}",
                    true_date.weekday(),
                    true_date.month()
                ))
            })
        }
    }
}

fn nth_weekday(year: i32, month: u32, weekday: Weekday, nth: u8) -> Option<NaiveDate> {
    NaiveDate::from_weekday_of_month_opt(year, month, weekday, nth)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalsificationCell {
    pub year: i32,
    pub artificial: AdoptionTime,
    pub tau: usize,
    pub mechanism: MechanismKind,
    pub estimate: f64,
    pub p_value: f64,
    pub seed: u64,
    pub degenerate: bool,
    /// `p <= flag_level`: a potential assumption violation.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalsificationReport {
    pub mode: PlaceboMode,
    pub true_adoption: NaiveDate,
    pub flag_level: f64,
    pub cells: Vec<FalsificationCell>,
}

impl FalsificationReport {
    pub fn flagged(&self) -> impl Iterator<Item = &FalsificationCell> {
        self.cells.iter().filter(|c| c.flagged)
    }
}

#[derive(Debug, Clone)]
pub struct FalsificationRequest {
    pub mode: PlaceboMode,
    pub years: Vec<i32>,
    pub taus: Vec<usize>,
    pub families: Vec<MechanismFamily>,
    pub statistic: StatisticMode,
    pub flag_level: f64,
}

/// Checks that an artificial window lies entirely on one side of the true adoption.
pub fn check_artificial_window(artificial: usize, tau: usize, true_adoption: usize) -> Result<()> {
    if artificial == true_adoption {
        return Err(Error::Contaminated(
            "artificial time equals the true adoption time".into(),
        ));
    }
    let first = artificial as i64 - tau as i64;
    let last = artificial as i64 + tau as i64 - 1;
    let a0 = true_adoption as i64;
    if first < a0 && a0 <= last {
        return Err(Error::Contaminated(format!(
            "window tau={tau} around period {artificial} crosses the true adoption period {true_adoption}"
        )));
    }
    Ok(())
}

/// Full grid of tests at artificial adoption times in other years.
pub fn falsification_scan(
    panel: &PanelDataset,
    true_adoption: NaiveDate,
    request: &FalsificationRequest,
    settings: &TestSettings,
) -> Result<FalsificationReport> {
    let a0 = panel.adoption_on(true_adoption)?;
    let mut cells = Vec::new();
    for &year in &request.years {
        let date = artificial_date(true_adoption, year, request.mode)?;
        let artificial = panel.adoption_on(date)?;
        for &tau in &request.taus {
            check_artificial_window(artificial.period, tau, a0.period)?;
        }
        let design = Design::new(panel, date, request.statistic)?;
        for &tau in &request.taus {
            for family in &request.families {
                let kind = family.kind();
                let seed = cell_seed(settings.seed, date, tau, kind);
                let spec = family.spec_for(tau)?;
                let r = randomization_test(&design, tau, &spec, &settings.with_seed(seed))?;
                cells.push(FalsificationCell {
                    year,
                    artificial,
                    tau,
                    mechanism: kind,
                    estimate: r.observed_stat,
                    p_value: r.p_value,
                    seed,
                    degenerate: r.degenerate,
                    flagged: !r.degenerate && r.p_value <= request.flag_level,
                });
            }
        }
    }
    for c in cells.iter().filter(|c| c.flagged) {
        log::warn!(
            "{} tau={} {}: p={:.3} with {} estimate {:.3}",
            c.artificial.date,
            c.tau,
            c.mechanism,
            c.p_value,
            if c.estimate < 0.0 {
                "negative"
            } else {
                "positive"
            },
            c.estimate
        );
    }
    Ok(FalsificationReport {
        mode: request.mode,
        true_adoption,
        flag_level: request.flag_level,
        cells,
    })
}
