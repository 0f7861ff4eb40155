use std::path::PathBuf;

use crate::assignment::MechanismKind;
use crate::diagnostics::{
    falsification_scan, select_window, FalsificationRequest, PlaceboTime, SelectionRequest,
};
use crate::error::{Error, Result};
use crate::inference::{
    confidence_interval, joint_test, randomization_test, Design, MechanismFamily,
};
use crate::panel::{load_panel_path, PanelDataset};

use super::output::{render_files, write_files, RenderedFile};
use super::{
    derive_summary, CommandConfig, PanelSummary, Report, ResultBlock, RunConfig, TestEntry,
    SCHEMA_VERSION,
};

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: Report,
    pub files: Vec<RenderedFile>,
    pub written: Vec<PathBuf>,
}

/// Column labels for the configured mechanisms; repeats get a numeric suffix.
pub(crate) fn mechanism_labels(config: &RunConfig) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(config.mechanisms.len());
    for (k, m) in config.mechanisms.iter().enumerate() {
        let seen = config.mechanisms[..k]
            .iter()
            .filter(|p| p.mechanism == m.mechanism)
            .count();
        out.push(if seen == 0 {
            m.label()
        } else {
            format!("{}_{}", m.label(), seen + 1)
        });
    }
    out
}

/// The config as it will be echoed: the seed is made explicit.
pub fn resolve(config: &RunConfig) -> RunConfig {
    let mut c = config.clone();
    c.seed = Some(config.seed());
    c
}

/// Loads the input named in the config and runs every command.
pub fn execute(config: &RunConfig) -> Result<Report> {
    config.validate()?;
    let panel = load_panel_path(
        &config.input.path,
        &config.input.schema(),
        config.input.filter().as_ref(),
        config.input.missing(),
    )?;
    execute_on(config, &panel)
}

/// Runs every command against an already loaded panel.
pub fn execute_on(config: &RunConfig, panel: &PanelDataset) -> Result<Report> {
    let config = resolve(config);
    let adoption = config.adoption_date()?;
    let statistic = config.statistic.mode()?;
    let families = config.families()?;
    let labels = mechanism_labels(&config);
    let settings = config.test_settings();

    let needs_design = config.commands.iter().any(|c| {
        !matches!(
            c,
            CommandConfig::SelectWindow { .. } | CommandConfig::Falsify { .. }
        )
    });
    let design = if needs_design {
        Some(Design::new(panel, adoption, statistic)?)
    } else {
        None
    };

    let mut blocks = Vec::with_capacity(config.commands.len());
    for (k, cmd) in config.commands.iter().enumerate() {
        let at = |e: Error| Error::config(format!("commands[{k}]"), e.to_string());
        let block = match cmd {
            CommandConfig::Test { taus, ci } => {
                let design = design.as_ref().expect("design built for test");
                test_block(&config, design, &families, &labels, taus, *ci).map_err(at)?
            }
            CommandConfig::Ci { taus } => {
                let design = design.as_ref().expect("design built for ci");
                test_block(&config, design, &families, &labels, taus, true).map_err(at)?
            }
            CommandConfig::Joint {
                tau_max,
                combiners,
                coupled,
            } => {
                let design = design.as_ref().expect("design built for joint");
                let js = config.joint_settings(*coupled);
                let mut results = Vec::new();
                for family in &families {
                    let first = if family.kind() == MechanismKind::At {
                        2
                    } else {
                        1
                    };
                    for &kmax in tau_max {
                        let taus: Vec<usize> = (first..=kmax).collect();
                        if taus.is_empty() {
                            return Err(Error::config(
                                format!("commands[{k}].tau_max"),
                                format!("no windows in {first}..={kmax}"),
                            ));
                        }
                        results
                            .extend(joint_test(design, &taus, family, combiners, &js).map_err(at)?);
                    }
                }
                ResultBlock::Joint { results }
            }
            CommandConfig::SelectWindow {
                placebo,
                tau_max,
                threshold,
            } => {
                let placebo: PlaceboTime = placebo.parse().map_err(|e: Error| {
                    Error::config(format!("commands[{k}].placebo"), e.to_string())
                })?;
                let family = families
                    .iter()
                    .find(|f| matches!(f, MechanismFamily::Tr))
                    .unwrap_or(&families[0])
                    .clone();
                let request = SelectionRequest {
                    placebo: placebo.resolve(adoption),
                    tau_max: *tau_max,
                    family,
                    threshold: *threshold,
                    statistic,
                };
                ResultBlock::SelectWindow {
                    result: select_window(panel, adoption, &request, &settings).map_err(at)?,
                }
            }
            CommandConfig::Falsify {
                mode,
                years,
                taus,
                flag_level,
            } => {
                let request = FalsificationRequest {
                    mode: *mode,
                    years: years.clone(),
                    taus: taus.clone(),
                    families: families.clone(),
                    statistic,
                    flag_level: *flag_level,
                };
                ResultBlock::Falsify {
                    report: falsification_scan(panel, adoption, &request, &settings).map_err(at)?,
                    labels: labels.clone(),
                }
            }
            CommandConfig::Detrend {} => {
                let design = design.as_ref().expect("design built for detrend");
                let fit = design.detrend_fit().cloned().ok_or_else(|| {
                    Error::config(format!("commands[{k}]"), "statistic is not detrended")
                })?;
                ResultBlock::Detrend {
                    fit,
                    unit_ids: panel.unit_ids().to_vec(),
                }
            }
        };
        blocks.push(block);
    }

    Ok(Report {
        schema_version: SCHEMA_VERSION,
        generator: format!("rinfer {}", env!("CARGO_PKG_VERSION")),
        config,
        panel: PanelSummary::of(panel),
        blocks,
    })
}

fn test_block(
    config: &RunConfig,
    design: &Design<'_>,
    families: &[MechanismFamily],
    labels: &[String],
    taus: &[usize],
    with_ci: bool,
) -> Result<ResultBlock> {
    let settings = config.test_settings();
    let n = design.panel().n_units();
    let mut entries = Vec::new();
    for &tau in taus {
        for (family, label) in families.iter().zip(labels) {
            let spec = family.spec_for(tau)?;
            let test = randomization_test(design, tau, &spec, &settings)?;
            let ci = if with_ci && !test.degenerate {
                Some(confidence_interval(
                    design,
                    tau,
                    &spec,
                    &settings,
                    &config.ci_settings(),
                )?)
            } else {
                None
            };
            let summary = derive_summary(&test, n, tau);
            entries.push(TestEntry {
                label: label.clone(),
                test,
                ci,
                summary,
            });
        }
    }
    Ok(ResultBlock::Test { entries })
}

/// Runs the config and writes the requested files to `config.output_dir`.
/// Files are rendered in full before anything is written.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    let report = execute(config)?;
    let files = render_files(&report)?;
    let written = write_files(&report.config.output_dir, &files)?;
    Ok(RunOutcome {
        report,
        files,
        written,
    })
}

/// As [`run`], on a dedicated pool of `threads` workers. Results do not
/// depend on the thread count.
pub fn run_with_threads(config: &RunConfig, threads: usize) -> Result<RunOutcome> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| {
            Error::InvalidArgument(format!("cannot start {threads} worker threads: {e}"))
        })?;
    pool.install(|| run(config))
}
