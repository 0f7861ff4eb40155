#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Poisson};
use rinfer_core::chrono::{Duration, NaiveDate};
use rinfer_core::{
    diff_in_means, enumerate_draws, unit_averages, AssignmentDraw, MechanismSpec, PanelDataset,
    WindowView,
};

pub fn start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2017, 1, 1).unwrap()
}

/// i.i.d. Poisson(`rate`) counts with `effect` added from period `a0` on.
pub fn poisson_panel(
    n: usize,
    periods: usize,
    rate: f64,
    a0: usize,
    effect: f64,
    seed: u64,
) -> PanelDataset {
    let mut rng = StdRng::seed_from_u64(seed);
    let pois = Poisson::new(rate).unwrap();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (1..=periods)
                .map(|t| pois.sample(&mut rng) + if t >= a0 { effect } else { 0.0 })
                .collect()
        })
        .collect();
    PanelDataset::from_rows(start(), &rows).unwrap()
}

pub fn uniform_panel(n: usize, periods: usize, seed: u64) -> PanelDataset {
    let mut rng = StdRng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..periods).map(|_| rng.random_range(-5.0..5.0)).collect())
        .collect();
    PanelDataset::from_rows(start(), &rows).unwrap()
}

/// `|s| >= |observed|`, with rounding-level slack for ties.
pub fn as_extreme(s: f64, observed: f64) -> bool {
    s.abs() >= observed.abs() - 1e-9 * observed.abs().max(1.0)
}

/// Brute-force p-value: every admissible draw, statistic from per-unit
/// averages of the expanded assignment.
pub fn brute_force_p(view: &WindowView, spec: &MechanismSpec) -> f64 {
    let n = view.n_units();
    let observed = stat(view, &rinfer_core::factual_draw(spec, n).unwrap());
    let mut hits = 0usize;
    let mut total = 0usize;
    for d in enumerate_draws(spec, n, 1 << 20).unwrap() {
        total += 1;
        if as_extreme(stat(view, &d), observed) {
            hits += 1;
        }
    }
    hits as f64 / total as f64
}

pub fn stat(view: &WindowView, draw: &AssignmentDraw) -> f64 {
    diff_in_means(&unit_averages(view, draw).unwrap()).value
}

/// Writes a long-format `unit,date,count` file for a panel starting on `first`.
pub fn write_csv(path: &Path, panel: &PanelDataset, first: NaiveDate) {
    let mut text = String::from("unit,date,count\n");
    for i in 0..panel.n_units() {
        for t in 1..=panel.n_periods() {
            let date = first + Duration::days(t as i64 - 1);
            text.push_str(&format!("u{i:02},{date},{}\n", panel.outcome(i, t)));
        }
    }
    std::fs::write(path, text).unwrap();
}

/// Twelve units, daily 2015-01-01 to 2018-12-31, effect 0.5 from 2017-11-01.
pub fn write_input(dir: &Path) -> PathBuf {
    let panel = poisson_panel(12, 1461, 5.0, 1035, 0.5, 4);
    let path = dir.join("panel.csv");
    write_csv(&path, &panel, NaiveDate::from_ymd_opt(2015, 1, 1).unwrap());
    path
}
