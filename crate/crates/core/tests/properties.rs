mod common;

use proptest::prelude::*;
use rinfer_core::{
    combine, confidence_interval, expand, joint_test, randomization_test, sample_draw, select_tau,
    unit_averages, window, CiSettings, Combiner, Design, EndpointStatus, JointSettings,
    MechanismFamily, MechanismSpec, PanelDataset, StreamSeed, TestSettings,
};

const PERIODS: usize = 10;
const A0: usize = 6;

fn panel_of(rows: &[Vec<f64>]) -> PanelDataset {
    PanelDataset::from_rows(common::start(), rows).unwrap()
}

/// Small integer-valued panels, so ties are common.
fn counts(max_units: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(
        prop::collection::vec((0u8..12).prop_map(f64::from), PERIODS),
        2..=max_units,
    )
}

fn reals(max_units: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(
        prop::collection::vec(-20.0..20.0f64, PERIODS),
        2..=max_units,
    )
}

fn spec_for(tau: usize, at: bool) -> MechanismSpec {
    if at {
        MechanismSpec::backdate(tau - 1)
    } else {
        MechanismSpec::Tr
    }
}

fn ci_settings() -> CiSettings {
    CiSettings {
        resolution: 0.01,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn counts_cover_the_window(rows in counts(8), tau in 1usize..=5, at in any::<bool>(), sim in 0u64..1 << 40) {
        let panel = panel_of(&rows);
        let view = window(&panel, panel.adoption_at(A0).unwrap(), tau).unwrap();
        let spec = spec_for(tau, at && tau > 1);
        let draw = sample_draw(&spec, rows.len(), StreamSeed::new(7, sim)).unwrap();
        let avgs = unit_averages(&view, &draw).unwrap();
        let total: usize = avgs.treated_count.iter().chain(&avgs.control_count).sum();
        prop_assert_eq!(total, 2 * tau * rows.len());

        let matrix = expand(&draw, &view).unwrap();
        for i in 0..rows.len() {
            let expected = match &draw {
                rinfer_core::AssignmentDraw::Reversal(_) => tau,
                rinfer_core::AssignmentDraw::Adoption(a) => (tau as i64 - a[i]) as usize,
            };
            prop_assert_eq!(matrix.row_sum(i), expected);
        }
    }

    #[test]
    fn exact_p_is_a_share_of_the_space(rows in counts(7), tau in 1usize..=4, at in any::<bool>()) {
        let panel = panel_of(&rows);
        let design = Design::raw(&panel, panel.adoption_at(A0).unwrap());
        let spec = spec_for(tau, at && tau > 1);
        let r = randomization_test(&design, tau, &spec, &TestSettings::exact()).unwrap();
        let space = spec.space_size(rows.len()).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.p_value));
        prop_assert_eq!(r.draws.count(), space);
        prop_assert_eq!(r.p_value, r.exceed_count as f64 / space as f64);
        prop_assert!(r.exceed_count >= 1);
    }

    #[test]
    fn location_shift_moves_estimate_and_interval(
        rows in counts(6),
        tau in 1usize..=4,
        at in any::<bool>(),
        c in -5i32..=5,
    ) {
        let c = c as f64;
        let spec = spec_for(tau, at && tau > 1);
        let panel = panel_of(&rows);
        let shifted = panel.map_outcomes(|_, t, v| if t >= A0 { v + c } else { v }).unwrap();
        let d0 = Design::raw(&panel, panel.adoption_at(A0).unwrap());
        let d1 = Design::raw(&shifted, shifted.adoption_at(A0).unwrap());
        let r0 = randomization_test(&d0, tau, &spec, &TestSettings::exact()).unwrap();
        let r1 = randomization_test(&d1, tau, &spec, &TestSettings::exact()).unwrap();
        prop_assert!((r1.observed_stat - r0.observed_stat - c).abs() <= 1e-9);
        if r0.degenerate {
            return Ok(());
        }
        let ci0 = confidence_interval(&d0, tau, &spec, &TestSettings::exact(), &ci_settings()).unwrap();
        let ci1 = confidence_interval(&d1, tau, &spec, &TestSettings::exact(), &ci_settings()).unwrap();
        // open ends mark the search edge of an unbounded side, not an endpoint
        prop_assert_eq!(ci0.lower_status, ci1.lower_status);
        prop_assert_eq!(ci0.upper_status, ci1.upper_status);
        if ci0.lower_status != EndpointStatus::Open {
            prop_assert!((ci1.lower - ci0.lower - c).abs() <= 1e-6, "{:?} {:?}", ci0, ci1);
        }
        if ci0.upper_status != EndpointStatus::Open {
            prop_assert!((ci1.upper - ci0.upper - c).abs() <= 1e-6, "{:?} {:?}", ci0, ci1);
        }
    }

    #[test]
    fn scaling_keeps_p_values(rows in reals(6), tau in 1usize..=4, at in any::<bool>(), k in 0.05..20.0f64) {
        let spec = spec_for(tau, at && tau > 1);
        let panel = panel_of(&rows);
        let scaled = panel.map_outcomes(|_, _, v| v * k).unwrap();
        let d0 = Design::raw(&panel, panel.adoption_at(A0).unwrap());
        let d1 = Design::raw(&scaled, scaled.adoption_at(A0).unwrap());
        for settings in [TestSettings::exact(), TestSettings::monte_carlo(500, 11)] {
            let r0 = randomization_test(&d0, tau, &spec, &settings).unwrap();
            let r1 = randomization_test(&d1, tau, &spec, &settings).unwrap();
            prop_assert_eq!(r0.p_value, r1.p_value);
            prop_assert!((r1.observed_stat - k * r0.observed_stat).abs() <= 1e-9 * k.max(1.0) * 20.0);
        }
        if spec.is_degenerate() {
            return Ok(());
        }
        // each endpoint is within one lattice step of the true boundary
        let res = ci_settings().resolution;
        let ci0 = confidence_interval(&d0, tau, &spec, &TestSettings::exact(), &ci_settings()).unwrap();
        let ci1 = confidence_interval(&d1, tau, &spec, &TestSettings::exact(), &ci_settings()).unwrap();
        if ci0.lower_status != EndpointStatus::Open && ci1.lower_status != EndpointStatus::Open {
            prop_assert!((ci1.lower - k * ci0.lower).abs() <= res * (1.0 + k) + 1e-9);
        }
        if ci0.upper_status != EndpointStatus::Open && ci1.upper_status != EndpointStatus::Open {
            prop_assert!((ci1.upper - k * ci0.upper).abs() <= res * (1.0 + k) + 1e-9);
        }
    }

    #[test]
    fn unit_order_does_not_matter(rows in counts(7), tau in 1usize..=4, at in any::<bool>(), seed in any::<u64>()) {
        let spec = spec_for(tau, at && tau > 1);
        let panel = panel_of(&rows);
        let mut order: Vec<usize> = (0..rows.len()).collect();
        let mut state = seed;
        for i in (1..order.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (state >> 33) as usize % (i + 1));
        }
        let permuted = panel.permute_units(&order).unwrap();
        let d0 = Design::raw(&panel, panel.adoption_at(A0).unwrap());
        let d1 = Design::raw(&permuted, permuted.adoption_at(A0).unwrap());
        let r0 = randomization_test(&d0, tau, &spec, &TestSettings::exact()).unwrap();
        let r1 = randomization_test(&d1, tau, &spec, &TestSettings::exact()).unwrap();
        prop_assert_eq!(r0.p_value, r1.p_value);
        prop_assert!((r0.observed_stat - r1.observed_stat).abs() <= 1e-12);
    }

    #[test]
    fn interval_holds_the_estimate_on_the_lattice(rows in reals(6), tau in 1usize..=4, at in any::<bool>()) {
        let spec = spec_for(tau, at && tau > 1);
        let panel = panel_of(&rows);
        let design = Design::raw(&panel, panel.adoption_at(A0).unwrap());
        let settings = ci_settings();
        let ci = confidence_interval(&design, tau, &spec, &TestSettings::exact(), &settings).unwrap();
        prop_assert!(ci.lower <= ci.estimate && ci.estimate <= ci.upper);
        for end in [ci.lower, ci.upper] {
            let steps = (end - ci.estimate) / settings.resolution;
            prop_assert!((steps - steps.round()).abs() <= 1e-6, "{} off the lattice", end);
        }
    }

    #[test]
    fn hotelling_ignores_common_scale(
        reference in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 3), 8..20),
        observed in prop::collection::vec(-3.0..3.0f64, 3),
        k in 0.01..100.0f64,
    ) {
        let a = combine(&observed, &reference, Combiner::Hotelling).unwrap();
        let scaled_ref: Vec<Vec<f64>> = reference.iter().map(|r| r.iter().map(|v| v * k).collect()).collect();
        let scaled_obs: Vec<f64> = observed.iter().map(|v| v * k).collect();
        let b = combine(&scaled_obs, &scaled_ref, Combiner::Hotelling).unwrap();
        prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0), "{} vs {}", a, b);
    }

    #[test]
    fn joint_windows_match_single_tests(rows in counts(8), at in any::<bool>(), seed in any::<u64>()) {
        let panel = panel_of(&rows);
        let design = Design::raw(&panel, panel.adoption_at(A0).unwrap());
        let (family, taus) = if at {
            (MechanismFamily::AtBackdate, vec![2, 3, 4])
        } else {
            (MechanismFamily::Tr, vec![1, 2, 3, 4])
        };
        let js = JointSettings { n_sim: 200, seed, ..Default::default() };
        let results = joint_test(&design, &taus, &family, &[Combiner::Max], &js).unwrap();
        for (tau, s) in taus.iter().zip(&results[0].per_window) {
            let single = randomization_test(&design, *tau, &family.spec_for(*tau).unwrap(), &TestSettings::exact()).unwrap();
            prop_assert_eq!(*s, single.observed_stat);
        }
    }

    #[test]
    fn selection_stops_at_first_small_p(p in prop::collection::vec(0.0..1.0f64, 1..30), threshold in 0.0..1.0f64) {
        let tau_star = select_tau(&p, threshold);
        let first_small = p.iter().position(|&v| v < threshold).unwrap_or(p.len());
        prop_assert_eq!(tau_star, first_small);
        prop_assert!(p[..tau_star].iter().all(|&v| v >= threshold));
        prop_assert_eq!(select_tau(&p, 0.0), p.len());
    }
}
