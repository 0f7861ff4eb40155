use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use rinfer_core::report::{
    run_with_threads, summarize, CommandConfig, MechanismConfig, OutputFormat, Report, ResultBlock,
    RunConfig,
};
use rinfer_core::{Combiner, CountingRule, InferenceMode, MechanismKind, PlaceboMode};

const SEED_ENV: &str = "RINFER_SEED";

#[derive(Parser)]
#[command(
    name = "rinfer",
    version,
    about = "Randomization inference for before-and-after panel studies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test for no effect in windows of the given half-lengths.
    Test {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required_unless_present = "config")]
        tau: Vec<usize>,
        /// Also invert the test into a confidence interval.
        #[arg(long)]
        ci: bool,
    },
    /// Confidence intervals for a constant additive effect.
    Ci {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required_unless_present = "config")]
        tau: Vec<usize>,
    },
    /// Joint test over the windows 1..K (TR) or 2..K (AT).
    Joint {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required_unless_present = "config")]
        tau_max: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "max,hotelling,mean")]
        combine: Vec<Combiner>,
        /// Share one draw sequence across windows instead of independent ones.
        #[arg(long)]
        joint_coupled: bool,
    },
    /// Choose the window by testing at a placebo adoption time.
    SelectWindow {
        #[command(flatten)]
        common: Common,
        /// `YYYY-MM-DD` or a day offset from adoption such as `-28d`.
        #[arg(long, allow_hyphen_values = true, required_unless_present = "config")]
        placebo: Option<String>,
        #[arg(long, required_unless_present = "config")]
        tau_max: Option<usize>,
        #[arg(long, default_value_t = 0.15)]
        threshold: f64,
    },
    /// Test at artificial adoption times in other years.
    Falsify {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "date")]
        mode: Mode,
        #[arg(long, value_delimiter = ',', required_unless_present = "config")]
        years: Vec<i32>,
        #[arg(long, value_delimiter = ',', required_unless_present = "config")]
        tau: Vec<usize>,
        #[arg(long, default_value_t = 0.05)]
        flag_level: f64,
    },
    /// Fit and report the per-unit linear trends.
    Detrend {
        #[command(flatten)]
        common: Common,
    },
    /// Run every command listed in a config file.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Recompute the derived summaries of a JSON report.
    Summarize { report: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Date,
    Weekday,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mechanism {
    Tr,
    At,
}

#[derive(Clone, Copy, ValueEnum)]
enum Engine {
    Auto,
    Exact,
    Mc,
}

#[derive(Clone, Copy, ValueEnum)]
enum Counting {
    Plain,
    AddOne,
}

#[derive(Clone, Copy, ValueEnum)]
enum Statistic {
    Raw,
    Detrended,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
    Svg,
}

/// Options shared by every analysis command. Each one overrides the
/// matching field of `--config`.
#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Long-format CSV or TSV with one row per unit, day (and category).
    #[arg(long, short)]
    input: Option<PathBuf>,
    #[arg(long)]
    unit_column: Option<String>,
    #[arg(long)]
    date_column: Option<String>,
    #[arg(long)]
    count_column: Option<String>,
    #[arg(long)]
    category_column: Option<String>,
    /// Keep only these categories.
    #[arg(long, value_delimiter = ',')]
    category: Vec<String>,
    /// Fail on missing unit-days instead of counting them as zero.
    #[arg(long)]
    strict_missing: bool,
    /// First treated day, `YYYY-MM-DD`.
    #[arg(long)]
    adoption: Option<String>,
    #[arg(long, value_enum, value_delimiter = ',')]
    mechanism: Vec<Mechanism>,
    /// AT support `{-k, ..., 0}` for every window.
    #[arg(long)]
    backdate: Option<usize>,
    /// Explicit AT support, e.g. `-6,-3,0`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    at_support: Vec<i64>,
    #[arg(long)]
    nsim: Option<usize>,
    /// Master seed; defaults to the config, then $RINFER_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_enum)]
    engine: Option<Engine>,
    #[arg(long, value_enum)]
    counting: Option<Counting>,
    #[arg(long)]
    enumeration_cap: Option<u64>,
    #[arg(long)]
    ci_resolution: Option<f64>,
    #[arg(long, value_enum)]
    statistic: Option<Statistic>,
    #[arg(long)]
    detrend_halfwidth: Option<usize>,
    /// Fit trends on pre-adoption days only.
    #[arg(long)]
    detrend_preonly: bool,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',')]
    format: Vec<Format>,
}

impl Common {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        let input = &mut cfg.input;
        if let Some(p) = &self.input {
            input.path = p.clone();
        }
        if let Some(c) = &self.unit_column {
            input.unit_column = c.clone();
        }
        if let Some(c) = &self.date_column {
            input.date_column = c.clone();
        }
        if let Some(c) = &self.count_column {
            input.count_column = c.clone();
        }
        if let Some(c) = &self.category_column {
            input.category_column = Some(c.clone());
        }
        if !self.category.is_empty() {
            input.category = self.category.clone();
        }
        if self.strict_missing {
            input.strict_missing = true;
        }
        if let Some(a) = &self.adoption {
            cfg.adoption = a.clone();
        }
        if !self.mechanism.is_empty() {
            cfg.mechanisms = self
                .mechanism
                .iter()
                .map(|m| match m {
                    Mechanism::Tr => MechanismConfig::tr(),
                    Mechanism::At => MechanismConfig::at(),
                })
                .collect();
        }
        if self.backdate.is_some() || !self.at_support.is_empty() {
            let mut any = false;
            for m in cfg
                .mechanisms
                .iter_mut()
                .filter(|m| m.mechanism == MechanismKind::At)
            {
                m.backdate = self.backdate;
                m.at_support = (!self.at_support.is_empty()).then(|| self.at_support.clone());
                any = true;
            }
            if !any {
                bail!("--backdate and --at-support need --mechanism at");
            }
        }
        if let Some(n) = self.nsim {
            cfg.n_sim = n;
        }
        cfg.seed = match (self.seed, cfg.seed) {
            (Some(s), _) => Some(s),
            (None, Some(s)) => Some(s),
            (None, None) => match std::env::var(SEED_ENV) {
                Ok(v) => Some(
                    v.trim()
                        .parse()
                        .with_context(|| format!("${SEED_ENV}={v:?} is not a u64 seed"))?,
                ),
                Err(_) => None,
            },
        };
        if let Some(a) = self.alpha {
            cfg.alpha = a;
        }
        if let Some(e) = self.engine {
            cfg.engine = match e {
                Engine::Auto => InferenceMode::Auto,
                Engine::Exact => InferenceMode::Exact,
                Engine::Mc => InferenceMode::MonteCarlo,
            };
        }
        if let Some(c) = self.counting {
            cfg.counting = match c {
                Counting::Plain => CountingRule::Plain,
                Counting::AddOne => CountingRule::AddOne,
            };
        }
        if let Some(c) = self.enumeration_cap {
            cfg.enumeration_cap = c;
        }
        if let Some(r) = self.ci_resolution {
            cfg.ci_resolution = r;
        }
        if let Some(s) = self.statistic {
            cfg.statistic.kind = match s {
                Statistic::Raw => "raw",
                Statistic::Detrended => "detrended",
            }
            .into();
        }
        if let Some(h) = self.detrend_halfwidth {
            cfg.statistic.detrend_halfwidth = h;
        }
        if self.detrend_preonly {
            cfg.statistic.detrend_preonly = true;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if !self.format.is_empty() {
            cfg.formats = self
                .format
                .iter()
                .map(|f| match f {
                    Format::Json => OutputFormat::Json,
                    Format::Csv => OutputFormat::Csv,
                    Format::Svg => OutputFormat::Svg,
                })
                .collect();
        }
        Ok(cfg)
    }
}

fn analysis(common: &Common, command: Option<CommandConfig>) -> anyhow::Result<()> {
    let mut cfg = common.resolve()?;
    if let Some(c) = command {
        cfg.commands = vec![c];
    }
    if matches!(cfg.commands.as_slice(), [CommandConfig::Detrend {}]) && cfg.statistic.kind == "raw"
    {
        cfg.statistic.kind = "detrended".into();
    }
    let threads = common.threads.unwrap_or(0);
    let outcome = run_with_threads(&cfg, threads)?;
    for block in &outcome.report.blocks {
        print_block(block);
    }
    for path in &outcome.written {
        log::info!("wrote {}", path.display());
    }
    eprintln!(
        "{} file(s) written to {}",
        outcome.written.len(),
        outcome.report.config.output_dir.display()
    );
    Ok(())
}

fn fmt_p(p: f64, degenerate: bool) -> String {
    if degenerate {
        "-".into()
    } else {
        format!("{p:.3}")
    }
}

fn print_block(block: &ResultBlock) {
    match block {
        ResultBlock::Test { entries } => {
            println!(
                "{:>5} {:>6} {:>10} {:>10} {:>8} {:>20}",
                "tau", "mech", "estimate", "control", "p", "ci"
            );
            for e in entries {
                let ci = e.ci.as_ref().map_or_else(
                    || "-".into(),
                    |c| format!("[{:.3}, {:.3}]", c.lower, c.upper),
                );
                println!(
                    "{:>5} {:>6} {:>10.3} {:>10.3} {:>8} {:>20}",
                    e.test.tau,
                    e.label,
                    e.test.observed_stat,
                    e.test.control_baseline,
                    fmt_p(e.test.p_value, e.test.degenerate),
                    ci
                );
            }
        }
        ResultBlock::Joint { results } => {
            println!(
                "{:>5} {:>9} {:>10} {:>12} {:>8}",
                "mech", "windows", "combiner", "statistic", "p"
            );
            for r in results {
                let w = format!("{}..{}", r.taus[0], r.taus[r.taus.len() - 1]);
                println!(
                    "{:>5} {:>9} {:>10} {:>12.3} {:>8.3}",
                    r.mechanism.to_string(),
                    w,
                    r.combiner.name(),
                    r.observed_stat,
                    r.p_value
                );
            }
        }
        ResultBlock::SelectWindow { result } => {
            println!("placebo {} ({})", result.placebo.date, result.mechanism);
            for p in &result.curve {
                println!("{:>5} {:>10.3} {:>8.3}", p.tau, p.estimate, p.p_value);
            }
            if result.selected_tau_star == 0 {
                println!("no validated window: p(1) < {}", result.threshold);
            } else {
                println!("selected tau* = {}", result.selected_tau_star);
            }
        }
        ResultBlock::Falsify { report, .. } => {
            println!(
                "{:>6} {:>12} {:>5} {:>5} {:>10} {:>8}",
                "year", "date", "tau", "mech", "estimate", "p"
            );
            for c in &report.cells {
                println!(
                    "{:>6} {:>12} {:>5} {:>5} {:>10.3} {:>8}{}",
                    c.year,
                    c.artificial.date.to_string(),
                    c.tau,
                    c.mechanism.to_string(),
                    c.estimate,
                    fmt_p(c.p_value, c.degenerate),
                    if c.flagged { "  *" } else { "" }
                );
            }
        }
        ResultBlock::Detrend { fit, unit_ids } => {
            println!(
                "fit periods {}..={}{}",
                fit.fit_periods.0,
                fit.fit_periods.1,
                if fit.clipped {
                    " (clipped to the panel)"
                } else {
                    ""
                }
            );
            for (u, (a, b)) in unit_ids.iter().zip(fit.intercepts.iter().zip(&fit.slopes)) {
                println!("{u:>12} {a:>12.4} {b:>12.6}");
            }
        }
    }
}

fn summarize_report(path: &PathBuf) -> anyhow::Result<()> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let report = Report::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
    println!(
        "{:>5} {:>6} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "tau", "mech", "estimate", "control", "effect %", "pre", "post"
    );
    let mut stale = 0;
    for e in report.tests() {
        let s = summarize(
            e.test.observed_stat,
            e.test.control_baseline,
            report.panel.n_units,
            e.test.tau,
        );
        if s != e.summary {
            stale += 1;
        }
        let pct = s
            .relative_effect_pct
            .map_or_else(|| "undefined".into(), |v| format!("{v:+.1}"));
        println!(
            "{:>5} {:>6} {:>10.3} {:>10.3} {:>10} {:>10} {:>10}",
            e.test.tau,
            e.label,
            s.estimate,
            s.control_baseline,
            pct,
            s.pre_total_rounded(),
            s.post_total_rounded()
        );
    }
    if stale > 0 {
        return Err(anyhow!(
            "{stale} stored summary block(s) disagree with their test results"
        ));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Test { common, tau, ci } => analysis(
            common,
            (!tau.is_empty()).then(|| CommandConfig::Test {
                taus: tau.clone(),
                ci: *ci,
            }),
        ),
        Command::Ci { common, tau } => analysis(
            common,
            (!tau.is_empty()).then(|| CommandConfig::Ci { taus: tau.clone() }),
        ),
        Command::Joint {
            common,
            tau_max,
            combine,
            joint_coupled,
        } => analysis(
            common,
            (!tau_max.is_empty()).then(|| CommandConfig::Joint {
                tau_max: tau_max.clone(),
                combiners: combine.clone(),
                coupled: *joint_coupled,
            }),
        ),
        Command::SelectWindow {
            common,
            placebo,
            tau_max,
            threshold,
        } => analysis(
            common,
            placebo
                .as_ref()
                .zip(*tau_max)
                .map(|(p, t)| CommandConfig::SelectWindow {
                    placebo: p.clone(),
                    tau_max: t,
                    threshold: *threshold,
                }),
        ),
        Command::Falsify {
            common,
            mode,
            years,
            tau,
            flag_level,
        } => analysis(
            common,
            (!years.is_empty() && !tau.is_empty()).then(|| CommandConfig::Falsify {
                mode: match mode {
                    Mode::Date => PlaceboMode::SameDate,
                    Mode::Weekday => PlaceboMode::SameWeekday,
                },
                years: years.clone(),
                taus: tau.clone(),
                flag_level: *flag_level,
            }),
        ),
        Command::Detrend { common } => analysis(common, Some(CommandConfig::Detrend {})),
        Command::Run { common } => {
            if common.config.is_none() {
                Err(anyhow!("run needs --config"))
            } else {
                analysis(common, None)
            }
        }
        Command::Summarize { report } => summarize_report(report),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
