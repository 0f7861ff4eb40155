//! Synthetic panels for benchmarking.

use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Poisson};
use rinfer_core::chrono::NaiveDate;
use rinfer_core::PanelDataset;

/// `n` units by `periods` days of Poisson(`rate`) counts, with `effect` added
/// from period `a0` on.
pub fn poisson_panel(
    n: usize,
    periods: usize,
    rate: f64,
    a0: usize,
    effect: f64,
    seed: u64,
) -> PanelDataset {
    let mut rng = StdRng::seed_from_u64(seed);
    let pois = Poisson::new(rate).expect("positive rate");
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (1..=periods)
                .map(|t| pois.sample(&mut rng) + if t >= a0 { effect } else { 0.0 })
                .collect()
        })
        .collect();
    PanelDataset::from_rows(NaiveDate::from_ymd_opt(2017, 1, 1).unwrap(), &rows)
        .expect("valid panel")
}
