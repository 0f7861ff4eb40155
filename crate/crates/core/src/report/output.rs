use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::inference::JointResult;
use crate::statistics::Combiner;

use super::svg;
use super::{OutputFormat, Report, ResultBlock, TestEntry};
use crate::diagnostics::{FalsificationReport, WindowSelectionResult};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedFile {
    pub name: String,
    pub contents: String,
}

const MISSING: &str = "-";

fn num(x: f64) -> String {
    format!("{x}")
}

/// Write `rows` as CSV using the csv crate's quoting rules.
fn csv_text(header: &[String], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

/// Test results, one row per window: estimate, control mean, then p-value
/// and CI per mechanism. Degenerate cells are `-`.
pub fn tests_table(entries: &[TestEntry]) -> String {
    let mut labels: Vec<&str> = Vec::new();
    let mut by_tau: BTreeMap<usize, Vec<&TestEntry>> = BTreeMap::new();
    for e in entries {
        if !labels.contains(&e.label.as_str()) {
            labels.push(&e.label);
        }
        by_tau.entry(e.test.tau).or_default().push(e);
    }
    let mut header: Vec<String> = ["tau", "estimate", "control_mean"]
        .map(String::from)
        .to_vec();
    for l in &labels {
        header.extend([
            format!("{l}_p_value"),
            format!("{l}_ci_lower"),
            format!("{l}_ci_upper"),
        ]);
    }
    let rows: Vec<Vec<String>> = by_tau
        .iter()
        .map(|(tau, es)| {
            let mut row = vec![
                tau.to_string(),
                num(es[0].test.observed_stat),
                num(es[0].test.control_baseline),
            ];
            for l in &labels {
                match es.iter().find(|e| e.label == *l) {
                    Some(e) if !e.test.degenerate => {
                        row.push(num(e.test.p_value));
                        match &e.ci {
                            Some(ci) => row.extend([num(ci.lower), num(ci.upper)]),
                            None => row.extend([MISSING.into(), MISSING.into()]),
                        }
                    }
                    _ => row.extend([MISSING.into(), MISSING.into(), MISSING.into()]),
                }
            }
            row
        })
        .collect();
    csv_text(&header, &rows)
}

pub fn summary_table(entries: &[TestEntry]) -> String {
    let header = [
        "tau",
        "mechanism",
        "estimate",
        "control_mean",
        "relative_effect_pct",
        "pre_total",
        "post_total",
        "pre_total_rounded",
        "post_total_rounded",
    ]
    .map(String::from);
    let rows: Vec<Vec<String>> = entries
        .iter()
        .map(|e| {
            let s = &e.summary;
            vec![
                e.test.tau.to_string(),
                e.label.clone(),
                num(s.estimate),
                num(s.control_baseline),
                s.relative_effect_pct
                    .map_or_else(|| "undefined".into(), num),
                num(s.pre_total),
                num(s.post_total),
                s.pre_total_rounded().to_string(),
                s.post_total_rounded().to_string(),
            ]
        })
        .collect();
    csv_text(&header, &rows)
}

/// Joint tests, one row per mechanism and window set; statistic and
/// p-value per combiner.
pub fn joint_table(results: &[JointResult]) -> String {
    let mut combiners: Vec<Combiner> = Vec::new();
    let mut groups: Vec<(&JointResult, Vec<&JointResult>)> = Vec::new();
    for r in results {
        if !combiners.contains(&r.combiner) {
            combiners.push(r.combiner);
        }
        match groups.iter_mut().find(|(k, _)| {
            k.mechanism == r.mechanism && k.taus == r.taus && k.supports == r.supports
        }) {
            Some((_, g)) => g.push(r),
            None => groups.push((r, vec![r])),
        }
    }
    let mut header: Vec<String> = ["mechanism", "tau_from", "tau_to", "k"]
        .map(String::from)
        .to_vec();
    for c in &combiners {
        header.extend([
            format!("{}_statistic", c.name()),
            format!("{}_p_value", c.name()),
        ]);
    }
    let rows: Vec<Vec<String>> = groups
        .iter()
        .map(|(key, g)| {
            let mut row = vec![
                key.mechanism.to_string(),
                key.taus[0].to_string(),
                key.taus[key.taus.len() - 1].to_string(),
                key.taus.len().to_string(),
            ];
            for c in &combiners {
                match g.iter().find(|r| r.combiner == *c) {
                    Some(r) => row.extend([num(r.observed_stat), num(r.p_value)]),
                    None => row.extend([MISSING.into(), MISSING.into()]),
                }
            }
            row
        })
        .collect();
    csv_text(&header, &rows)
}

pub fn selection_table(result: &WindowSelectionResult) -> String {
    let header = ["tau", "estimate", "p_value", "seed", "selected"].map(String::from);
    let rows: Vec<Vec<String>> = result
        .curve
        .iter()
        .map(|p| {
            vec![
                p.tau.to_string(),
                num(p.estimate),
                num(p.p_value),
                p.seed.to_string(),
                (p.tau <= result.selected_tau_star).to_string(),
            ]
        })
        .collect();
    csv_text(&header, &rows)
}

/// Falsification grid, one row per window; for each year the estimate and a
/// p-value per mechanism.
pub fn falsify_table(report: &FalsificationReport, labels: &[String]) -> String {
    let mut years: Vec<i32> = Vec::new();
    let mut taus: Vec<usize> = Vec::new();
    for c in &report.cells {
        if !years.contains(&c.year) {
            years.push(c.year);
        }
        if !taus.contains(&c.tau) {
            taus.push(c.tau);
        }
    }
    let mut header = vec!["tau".to_string()];
    for y in &years {
        header.push(format!("{y}_estimate"));
        for l in labels {
            header.push(format!("{y}_{l}_p_value"));
        }
    }
    let rows: Vec<Vec<String>> = taus
        .iter()
        .map(|&tau| {
            let mut row = vec![tau.to_string()];
            for &y in &years {
                let cells: Vec<_> = report
                    .cells
                    .iter()
                    .filter(|c| c.year == y && c.tau == tau)
                    .collect();
                row.push(
                    cells
                        .first()
                        .map_or_else(|| MISSING.into(), |c| num(c.estimate)),
                );
                for j in 0..labels.len() {
                    row.push(match cells.get(j) {
                        Some(c) if !c.degenerate => num(c.p_value),
                        _ => MISSING.into(),
                    });
                }
            }
            row
        })
        .collect();
    csv_text(&header, &rows)
}

pub fn flagged_table(report: &FalsificationReport) -> String {
    let header = [
        "year",
        "artificial_date",
        "tau",
        "mechanism",
        "estimate",
        "sign",
        "p_value",
    ]
    .map(String::from);
    let rows: Vec<Vec<String>> = report
        .flagged()
        .map(|c| {
            vec![
                c.year.to_string(),
                c.artificial.date.to_string(),
                c.tau.to_string(),
                c.mechanism.to_string(),
                num(c.estimate),
                if c.estimate < 0.0 {
                    "negative"
                } else {
                    "positive"
                }
                .into(),
                num(c.p_value),
            ]
        })
        .collect();
    csv_text(&header, &rows)
}

pub fn detrend_table(fit: &crate::statistics::DetrendFit, unit_ids: &[String]) -> String {
    let header = ["unit", "intercept", "slope"].map(String::from);
    let rows: Vec<Vec<String>> = unit_ids
        .iter()
        .zip(fit.intercepts.iter().zip(&fit.slopes))
        .map(|(u, (a, b))| vec![u.clone(), num(*a), num(*b)])
        .collect();
    csv_text(&header, &rows)
}

struct Namer(BTreeMap<&'static str, usize>);

impl Namer {
    fn name(&mut self, stem: &'static str, ext: &str) -> String {
        let k = self.0.entry(stem).or_insert(0);
        *k += 1;
        if *k == 1 {
            format!("{stem}.{ext}")
        } else {
            format!("{stem}_{k}.{ext}")
        }
    }
}

pub fn render_csv_tables(report: &Report) -> Vec<RenderedFile> {
    render(report, &[OutputFormat::Csv]).unwrap_or_default()
}

fn render(report: &Report, formats: &[OutputFormat]) -> Result<Vec<RenderedFile>> {
    let csv = formats.contains(&OutputFormat::Csv);
    let plot = formats.contains(&OutputFormat::Svg);
    let mut files = Vec::new();
    if formats.contains(&OutputFormat::Json) {
        files.push(RenderedFile {
            name: "report.json".into(),
            contents: report.to_json()?,
        });
    }
    let mut csv_names = Namer(BTreeMap::new());
    let mut svg_names = Namer(BTreeMap::new());
    let mut push = |names: &mut Namer, stem: &'static str, ext: &str, contents: String| {
        files.push(RenderedFile {
            name: names.name(stem, ext),
            contents,
        })
    };
    for block in &report.blocks {
        match block {
            ResultBlock::Test { entries } => {
                if csv {
                    push(&mut csv_names, "tests", "csv", tests_table(entries));
                    push(&mut csv_names, "summary", "csv", summary_table(entries));
                }
                if plot {
                    push(
                        &mut svg_names,
                        "tests",
                        "svg",
                        svg::estimate_bars(&test_series(entries), "Estimates by window"),
                    );
                }
            }
            ResultBlock::Joint { results } => {
                if csv {
                    push(&mut csv_names, "joint", "csv", joint_table(results));
                }
            }
            ResultBlock::SelectWindow { result } => {
                if csv {
                    push(
                        &mut csv_names,
                        "select_window",
                        "csv",
                        selection_table(result),
                    );
                }
                if plot {
                    push(&mut svg_names, "select_window", "svg", svg::p_curve(result));
                }
            }
            ResultBlock::Falsify { report: f, labels } => {
                if csv {
                    push(&mut csv_names, "falsify", "csv", falsify_table(f, labels));
                    push(&mut csv_names, "falsify_flagged", "csv", flagged_table(f));
                }
                if plot {
                    push(
                        &mut svg_names,
                        "falsify",
                        "svg",
                        svg::estimate_bars(&falsify_series(f, labels), "Artificial adoption times"),
                    );
                }
            }
            ResultBlock::Detrend { fit, unit_ids } => {
                if csv {
                    push(
                        &mut csv_names,
                        "detrend",
                        "csv",
                        detrend_table(fit, unit_ids),
                    );
                }
            }
        }
    }
    Ok(files)
}

/// Renders every requested file in memory; nothing touches the disk.
pub fn render_files(report: &Report) -> Result<Vec<RenderedFile>> {
    render(report, &report.config.formats)
}

fn test_series(entries: &[TestEntry]) -> Vec<svg::Series> {
    let mut out: Vec<svg::Series> = Vec::new();
    for e in entries {
        let point = svg::Point {
            tau: e.test.tau,
            estimate: e.test.observed_stat,
            p_value: (!e.test.degenerate).then_some(e.test.p_value),
        };
        match out.iter_mut().find(|s| s.name == e.label) {
            Some(s) => s.points.push(point),
            None => out.push(svg::Series {
                name: e.label.clone(),
                points: vec![point],
            }),
        }
    }
    out
}

fn falsify_series(report: &FalsificationReport, labels: &[String]) -> Vec<svg::Series> {
    let mut out: Vec<svg::Series> = Vec::new();
    let mut seen: BTreeMap<(i32, usize), usize> = BTreeMap::new();
    for c in &report.cells {
        let j = seen.entry((c.year, c.tau)).or_insert(0);
        let label = labels
            .get(*j)
            .cloned()
            .unwrap_or_else(|| c.mechanism.to_string());
        *j += 1;
        let name = format!("{} {label}", c.artificial.date);
        let point = svg::Point {
            tau: c.tau,
            estimate: c.estimate,
            p_value: (!c.degenerate).then_some(c.p_value),
        };
        match out.iter_mut().find(|s| s.name == name) {
            Some(s) => s.points.push(point),
            None => out.push(svg::Series {
                name,
                points: vec![point],
            }),
        }
    }
    out
}

/// Writes all files under `dir`, creating it if needed. Every file is
/// written to a temporary name first and renamed once all writes succeed.
pub fn write_files(dir: &Path, files: &[RenderedFile]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut staged = Vec::with_capacity(files.len());
    for f in files {
        let tmp = dir.join(format!(".{}.partial", f.name));
        if let Err(e) = std::fs::write(&tmp, &f.contents) {
            for (t, _) in &staged {
                let _ = std::fs::remove_file(t);
            }
            return Err(Error::io(&tmp, e));
        }
        staged.push((tmp, dir.join(&f.name)));
    }
    let mut written = Vec::with_capacity(staged.len());
    for (tmp, dest) in staged {
        std::fs::rename(&tmp, &dest).map_err(|e| Error::io(&dest, e))?;
        written.push(dest);
    }
    Ok(written)
}
