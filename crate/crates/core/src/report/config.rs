use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::assignment::{MechanismKind, MechanismSpec};
use crate::diagnostics::{
    PlaceboMode, PlaceboTime, DEFAULT_FLAG_LEVEL, DEFAULT_SELECTION_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::inference::{
    CiSettings, CountingRule, InferenceMode, JointSettings, MechanismFamily, StatisticMode,
    TestSettings, DEFAULT_CI_RESOLUTION, DEFAULT_N_SIM,
};
use crate::panel::{CategoryFilter, MissingPolicy, PanelSchema};
use crate::statistics::{Combiner, DEFAULT_DETREND_HALFWIDTH};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub path: PathBuf,
    pub unit_column: String,
    pub date_column: String,
    pub count_column: String,
    pub category_column: Option<String>,
    /// Keep only rows whose category is one of these.
    pub category: Vec<String>,
    pub strict_missing: bool,
}

impl Default for InputConfig {
    fn default() -> Self {
        let schema = PanelSchema::default();
        InputConfig {
            path: PathBuf::new(),
            unit_column: schema.unit,
            date_column: schema.date,
            count_column: schema.count,
            category_column: None,
            category: Vec::new(),
            strict_missing: false,
        }
    }
}

impl InputConfig {
    pub fn schema(&self) -> PanelSchema {
        PanelSchema {
            unit: self.unit_column.clone(),
            date: self.date_column.clone(),
            count: self.count_column.clone(),
            category: self.category_column.clone(),
        }
    }

    pub fn filter(&self) -> Option<CategoryFilter> {
        (!self.category.is_empty()).then(|| CategoryFilter {
            values: self.category.clone(),
        })
    }

    pub fn missing(&self) -> MissingPolicy {
        if self.strict_missing {
            MissingPolicy::Strict
        } else {
            MissingPolicy::ZeroFill
        }
    }
}

/// `mechanism = "tr"`, or `mechanism = "at"` with `backdate = k` or an explicit
/// `at_support`; AT without either uses `{-(tau-1), ..., 0}` in each window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismConfig {
    pub mechanism: MechanismKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backdate: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at_support: Option<Vec<i64>>,
}

impl MechanismConfig {
    pub fn tr() -> Self {
        MechanismConfig {
            mechanism: MechanismKind::Tr,
            backdate: None,
            at_support: None,
        }
    }

    pub fn at() -> Self {
        MechanismConfig {
            mechanism: MechanismKind::At,
            backdate: None,
            at_support: None,
        }
    }

    pub fn family(&self) -> Result<MechanismFamily> {
        match (self.mechanism, self.backdate, &self.at_support) {
            (MechanismKind::Tr, None, None) => Ok(MechanismFamily::Tr),
            (MechanismKind::Tr, _, _) => Err(Error::config(
                "mechanisms",
                "backdate/at_support only apply to mechanism = \"at\"",
            )),
            (MechanismKind::At, Some(_), Some(_)) => Err(Error::config(
                "mechanisms",
                "give either backdate or at_support, not both",
            )),
            (MechanismKind::At, Some(k), None) => Ok(MechanismFamily::AtSupport {
                support: MechanismSpec::backdate(k).support().to_vec(),
            }),
            (MechanismKind::At, None, Some(s)) => {
                let spec = MechanismSpec::at(s.iter().copied())
                    .map_err(|e| Error::config("mechanisms.at_support", e.to_string()))?;
                Ok(MechanismFamily::AtSupport {
                    support: spec.support().to_vec(),
                })
            }
            (MechanismKind::At, None, None) => Ok(MechanismFamily::AtBackdate),
        }
    }

    pub fn label(&self) -> String {
        self.mechanism.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatisticConfig {
    /// `raw` or `detrended`.
    pub kind: String,
    pub detrend_halfwidth: usize,
    pub detrend_preonly: bool,
}

impl Default for StatisticConfig {
    fn default() -> Self {
        StatisticConfig {
            kind: "raw".into(),
            detrend_halfwidth: DEFAULT_DETREND_HALFWIDTH,
            detrend_preonly: false,
        }
    }
}

impl StatisticConfig {
    pub fn mode(&self) -> Result<StatisticMode> {
        match self.kind.as_str() {
            "raw" => Ok(StatisticMode::Raw),
            "detrended" => Ok(StatisticMode::Detrended {
                halfwidth: self.detrend_halfwidth,
                pre_only: self.detrend_preonly,
            }),
            other => Err(Error::config(
                "statistic.kind",
                format!("expected raw or detrended, got `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CommandConfig {
    Test {
        taus: Vec<usize>,
        #[serde(default)]
        ci: bool,
    },
    Ci {
        taus: Vec<usize>,
    },
    Joint {
        /// One joint test per entry K, over tau = 1..K (TR) or 2..K (AT).
        tau_max: Vec<usize>,
        #[serde(default = "default_combiners")]
        combiners: Vec<Combiner>,
        #[serde(default)]
        coupled: bool,
    },
    SelectWindow {
        /// Date (`YYYY-MM-DD`) or day offset from adoption (`-28d`).
        placebo: String,
        tau_max: usize,
        #[serde(default = "default_threshold")]
        threshold: f64,
    },
    Falsify {
        mode: PlaceboMode,
        years: Vec<i32>,
        taus: Vec<usize>,
        #[serde(default = "default_flag_level")]
        flag_level: f64,
    },
    Detrend {},
}

fn default_combiners() -> Vec<Combiner> {
    Combiner::ALL.to_vec()
}

fn default_threshold() -> f64 {
    DEFAULT_SELECTION_THRESHOLD
}

fn default_flag_level() -> f64 {
    DEFAULT_FLAG_LEVEL
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
    Svg,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            "svg" => Ok(OutputFormat::Svg),
            other => Err(Error::config(
                "formats",
                format!("unknown format `{other}`"),
            )),
        }
    }
}

/// Everything needed to reproduce a run. Embedded verbatim in every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: InputConfig,
    /// Adoption date, `YYYY-MM-DD`; the adoption day is the first treated day.
    pub adoption: String,
    pub mechanisms: Vec<MechanismConfig>,
    pub n_sim: usize,
    pub seed: Option<u64>,
    pub alpha: f64,
    pub engine: InferenceMode,
    pub counting: CountingRule,
    pub enumeration_cap: u64,
    pub ci_resolution: f64,
    pub statistic: StatisticConfig,
    pub output_dir: PathBuf,
    pub formats: Vec<OutputFormat>,
    pub commands: Vec<CommandConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: InputConfig::default(),
            adoption: String::new(),
            mechanisms: vec![MechanismConfig::tr()],
            n_sim: DEFAULT_N_SIM,
            seed: None,
            alpha: 0.05,
            engine: InferenceMode::Auto,
            counting: CountingRule::Plain,
            enumeration_cap: crate::assignment::DEFAULT_ENUMERATION_CAP,
            ci_resolution: DEFAULT_CI_RESOLUTION,
            statistic: StatisticConfig::default(),
            output_dir: PathBuf::from("rinfer-out"),
            formats: vec![OutputFormat::Json, OutputFormat::Csv],
            commands: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            Error::config(
                e.span().map_or_else(
                    || "config".to_string(),
                    |s| format!("config @ bytes {}..{}", s.start, s.end),
                ),
                e.message().to_string(),
            )
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn adoption_date(&self) -> Result<NaiveDate> {
        NaiveDate::parse_from_str(self.adoption.trim(), "%Y-%m-%d").map_err(|e| {
            Error::config(
                "adoption",
                format!("`{}` is not a YYYY-MM-DD date: {e}", self.adoption),
            )
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn families(&self) -> Result<Vec<MechanismFamily>> {
        if self.mechanisms.is_empty() {
            return Err(Error::config(
                "mechanisms",
                "at least one mechanism is required",
            ));
        }
        self.mechanisms
            .iter()
            .map(MechanismConfig::family)
            .collect()
    }

    pub fn test_settings(&self) -> TestSettings {
        TestSettings {
            n_sim: self.n_sim,
            seed: self.seed(),
            mode: self.engine,
            counting: self.counting,
            enumeration_cap: self.enumeration_cap,
        }
    }

    pub fn ci_settings(&self) -> CiSettings {
        CiSettings {
            alpha: self.alpha,
            resolution: self.ci_resolution,
            ..CiSettings::default()
        }
    }

    pub fn joint_settings(&self, coupled: bool) -> JointSettings {
        JointSettings {
            n_sim: self.n_sim,
            seed: self.seed(),
            counting: self.counting,
            coupled,
        }
    }

    /// Field-level validation; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        self.adoption_date()?;
        if self.input.path.as_os_str().is_empty() {
            return Err(Error::config("input.path", "no input file given"));
        }
        if self.n_sim == 0 {
            return Err(Error::config("n_sim", "must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 0.5) {
            return Err(Error::config(
                "alpha",
                format!("must lie in (0, 0.5], got {}", self.alpha),
            ));
        }
        if self.ci_resolution.is_nan() || self.ci_resolution <= 0.0 {
            return Err(Error::config("ci_resolution", "must be positive"));
        }
        self.statistic.mode()?;
        self.families()?;
        if self.commands.is_empty() {
            return Err(Error::config("commands", "nothing to run"));
        }
        for (k, cmd) in self.commands.iter().enumerate() {
            let field = |name: &str| format!("commands[{k}].{name}");
            match cmd {
                CommandConfig::Test { taus, .. } | CommandConfig::Ci { taus } => {
                    check_taus(taus, &field("taus"))?
                }
                CommandConfig::Joint {
                    tau_max, combiners, ..
                } => {
                    check_taus(tau_max, &field("tau_max"))?;
                    if combiners.is_empty() {
                        return Err(Error::config(
                            field("combiners"),
                            "at least one combiner is required",
                        ));
                    }
                }
                CommandConfig::SelectWindow {
                    placebo,
                    tau_max,
                    threshold,
                } => {
                    placebo
                        .parse::<PlaceboTime>()
                        .map_err(|e| Error::config(field("placebo"), e.to_string()))?;
                    if *tau_max == 0 {
                        return Err(Error::config(field("tau_max"), "must be positive"));
                    }
                    if !(0.0..=1.0).contains(threshold) {
                        return Err(Error::config(field("threshold"), "must lie in [0, 1]"));
                    }
                }
                CommandConfig::Falsify {
                    years,
                    taus,
                    flag_level,
                    ..
                } => {
                    if years.is_empty() {
                        return Err(Error::config(
                            field("years"),
                            "at least one year is required",
                        ));
                    }
                    check_taus(taus, &field("taus"))?;
                    if !(0.0..=1.0).contains(flag_level) {
                        return Err(Error::config(field("flag_level"), "must lie in [0, 1]"));
                    }
                }
                CommandConfig::Detrend {} => {
                    if !matches!(self.statistic.mode()?, StatisticMode::Detrended { .. }) {
                        return Err(Error::config(
                            field("command"),
                            "detrend needs statistic.kind = \"detrended\"",
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_taus(taus: &[usize], field: &str) -> Result<()> {
    if taus.is_empty() {
        return Err(Error::config(field, "at least one window is required"));
    }
    if taus.contains(&0) {
        return Err(Error::config(field, "window half-lengths must be positive"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
adoption = "2017-11-01"
n_sim = 2000
seed = 7
formats = ["json", "csv", "svg"]

[input]
path = "crimes.csv"
unit_column = "barrio"

[[mechanisms]]
mechanism = "tr"

[[mechanisms]]
mechanism = "at"
backdate = 6

[[commands]]
command = "test"
taus = [1, 7, 14]
ci = true

[[commands]]
command = "joint"
tau_max = [7, 14]
combiners = ["max", "hotelling", "mean"]

[[commands]]
command = "select-window"
placebo = "-28d"
tau_max = 21

[[commands]]
command = "falsify"
mode = "same-weekday"
years = [2015, 2016, 2018]
taus = [1, 7, 14]
"#;

    #[test]
    fn parses_and_validates() {
        let cfg = RunConfig::from_toml_str(SAMPLE).unwrap();
        assert_eq!(cfg.n_sim, 2000);
        assert_eq!(cfg.input.unit_column, "barrio");
        assert_eq!(cfg.input.date_column, "date");
        assert_eq!(cfg.commands.len(), 4);
        cfg.validate().unwrap();
        let families = cfg.families().unwrap();
        assert_eq!(
            families[1],
            MechanismFamily::AtSupport {
                support: (-6..=0).collect()
            }
        );
    }

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::from_toml_str(SAMPLE).unwrap();
        let again = RunConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn errors_name_fields() {
        let mut cfg = RunConfig::from_toml_str(SAMPLE).unwrap();
        cfg.adoption = "2017-13-01".into();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("`adoption`"), "{err}");

        let mut cfg = RunConfig::from_toml_str(SAMPLE).unwrap();
        cfg.alpha = 0.9;
        assert!(cfg.validate().unwrap_err().to_string().contains("`alpha`"));

        let mut cfg = RunConfig::from_toml_str(SAMPLE).unwrap();
        cfg.mechanisms[0].backdate = Some(2);
        assert!(cfg.validate().is_err());

        assert!(RunConfig::from_toml_str("bogus = 1").is_err());
    }
}
