//! Randomization inference for before-and-after studies on panel data.
//!
//! Units are observed daily around an adoption time `a0`. A window of
//! half-length `tau` compares the `tau` days before `a0` with the `tau` days
//! from `a0` on. Two assignment mechanisms are supported:
//!
//! * time reversal (TR): each unit's window is either in its factual order
//!   or reversed, with probability one half;
//! * adoption timing (AT): each unit's adoption is shifted by an offset drawn
//!   uniformly from a support of days around `a0`.
//!
//! The test statistic is the average over units of the treated-period mean
//! minus the control-period mean, and p-values are computed exactly or by
//! Monte Carlo under the sharp null of no effect.
//!
//! ```
//! use rinfer_core::{PanelDataset, Design, MechanismSpec, TestSettings, randomization_test};
//! use chrono::NaiveDate;
//!
//! let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
//! let panel = PanelDataset::from_rows(start, &[vec![0.0, 1.0], vec![0.0, 3.0]]).unwrap();
//! let a0 = panel.adoption_at(2).unwrap();
//! let design = Design::raw(&panel, a0);
//! let r = randomization_test(&design, 1, &MechanismSpec::Tr, &TestSettings::exact()).unwrap();
//! assert_eq!(r.observed_stat, 2.0);
//! assert_eq!(r.p_value, 0.5);
//! ```

pub use chrono;

pub mod assignment;
pub mod diagnostics;
pub mod error;
pub mod inference;
pub mod panel;
pub mod report;
pub mod rng;
pub mod statistics;

pub use assignment::{
    enumerate_draws, expand, factual_draw, sample_draw, AssignmentDraw, AssignmentMatrix,
    MechanismKind, MechanismSpec, StreamSeed,
};
pub use diagnostics::{
    artificial_date, falsification_scan, select_tau, select_window, FalsificationCell,
    FalsificationReport, FalsificationRequest, PlaceboMode, PlaceboTime, SelectionRequest,
    WindowPoint, WindowSelectionResult,
};
pub use error::{Error, Result};
pub use inference::{
    confidence_interval, confidence_interval_window, joint_test, randomization_test, test_window,
    CIResult, CiSettings, ContrastTable, CountingRule, Design, DrawSummary, EndpointStatus,
    InferenceMode, JointResult, JointSettings, MechanismFamily, StatisticMode, TestResult,
    TestSettings,
};
pub use panel::{
    load_panel, load_panel_path, unit_averages, window, AdoptionTime, CategoryFilter,
    MissingPolicy, PanelDataset, PanelSchema, UnitAverages, WindowView,
};
pub use report::{derive_summary, Report, RunConfig, Summary};
pub use statistics::{
    combine, detrend, diff_in_means, Combiner, DetrendFit, DetrendOptions, StatisticValue,
};
