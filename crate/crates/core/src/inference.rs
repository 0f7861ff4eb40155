//! Randomization p-values, confidence intervals by test inversion, and
//! joint tests over several windows.
//!
//! All reference distributions are computed by re-evaluating the difference
//! in means on the same observed window under each hypothetical assignment.
//! Simulations run in parallel, but every simulation reads its own counter-based
//! stream and results are reduced in simulation-index order, so the output is
//! identical for any number of worker threads.

use std::borrow::Cow;
use std::collections::BTreeMap;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::{
    checked_space, factual_draw, options_at_index, AssignmentDraw, MechanismKind, MechanismSpec,
    DEFAULT_ENUMERATION_CAP,
};
use crate::error::{Error, Result};
use crate::panel::{window, AdoptionTime, PanelDataset, WindowView};
use crate::rng::{fill_options, StreamFactory};
use crate::statistics::{
    detrend, Combiner, DetrendFit, DetrendOptions, FittedCombiner, DEFAULT_DETREND_HALFWIDTH,
};

pub const DEFAULT_N_SIM: usize = 10_000;
/// Reference statistics within this fraction of the largest per-unit
/// contrast of the observed one count as ties, so that equalities that hold
/// exactly in real arithmetic survive rounding.
pub const TIE_TOLERANCE: f64 = 1e-9;

pub const DEFAULT_CI_RESOLUTION: f64 = 1e-3;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InferenceMode {
    /// Exact enumeration when the assignment space fits under the cap.
    #[default]
    Auto,
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountingRule {
    /// Share of simulated draws at least as extreme.
    #[default]
    Plain,
    /// `(1 + count) / (1 + n_sim)`.
    AddOne,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StatisticMode {
    #[default]
    Raw,
    Detrended {
        halfwidth: usize,
        pre_only: bool,
    },
}

impl StatisticMode {
    pub fn detrended() -> Self {
        StatisticMode::Detrended {
            halfwidth: DEFAULT_DETREND_HALFWIDTH,
            pre_only: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestSettings {
    pub n_sim: usize,
    pub seed: u64,
    pub mode: InferenceMode,
    pub counting: CountingRule,
    pub enumeration_cap: u64,
}

impl Default for TestSettings {
    fn default() -> Self {
        TestSettings {
            n_sim: DEFAULT_N_SIM,
            seed: 0,
            mode: InferenceMode::Auto,
            counting: CountingRule::Plain,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
        }
    }
}

impl TestSettings {
    pub fn monte_carlo(n_sim: usize, seed: u64) -> Self {
        TestSettings {
            n_sim,
            seed,
            mode: InferenceMode::MonteCarlo,
            ..Default::default()
        }
    }

    pub fn exact() -> Self {
        TestSettings {
            mode: InferenceMode::Exact,
            ..Default::default()
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        TestSettings { seed, ..self }
    }
}

/// A panel prepared for testing around one adoption time: raw outcomes, or
/// residuals of the per-unit linear detrend fitted around that time.
#[derive(Debug, Clone)]
pub struct Design<'a> {
    panel: Cow<'a, PanelDataset>,
    adoption: AdoptionTime,
    fit: Option<DetrendFit>,
}

impl<'a> Design<'a> {
    pub fn raw(panel: &'a PanelDataset, adoption: AdoptionTime) -> Self {
        Design {
            panel: Cow::Borrowed(panel),
            adoption,
            fit: None,
        }
    }

    pub fn new(
        panel: &'a PanelDataset,
        adoption_date: NaiveDate,
        statistic: StatisticMode,
    ) -> Result<Self> {
        let adoption = panel.adoption_on(adoption_date)?;
        match statistic {
            StatisticMode::Raw => Ok(Self::raw(panel, adoption)),
            StatisticMode::Detrended {
                halfwidth,
                pre_only,
            } => {
                let (residuals, fit) =
                    detrend(panel, adoption, halfwidth, DetrendOptions { pre_only })?;
                let adoption = residuals.adoption_on(adoption_date)?;
                Ok(Design {
                    panel: Cow::Owned(residuals),
                    adoption,
                    fit: Some(fit),
                })
            }
        }
    }

    pub fn panel(&self) -> &PanelDataset {
        &self.panel
    }

    pub fn adoption(&self) -> AdoptionTime {
        self.adoption
    }

    pub fn detrend_fit(&self) -> Option<&DetrendFit> {
        self.fit.as_ref()
    }

    pub fn window(&self, tau: usize) -> Result<WindowView> {
        window(&self.panel, self.adoption, tau)
    }
}

/// Per-unit treated-minus-control contrast for every assignment option.
///
/// Under any draw the difference in means equals the average over units of
/// the contrast selected by that unit's option, so the table turns each
/// reference statistic into `n` lookups.
#[derive(Debug, Clone)]
pub struct ContrastTable {
    n_units: usize,
    n_options: usize,
    values: Vec<f64>,
    factual: usize,
    factual_control: Vec<f64>,
    scale: f64,
}

impl ContrastTable {
    pub fn new(view: &WindowView, spec: &MechanismSpec) -> Result<Self> {
        spec.validate(view.tau())?;
        let factual = spec.factual_option()?;
        let tau = view.tau();
        let n = view.n_units();
        let j = spec.n_options();
        let mut values = Vec::with_capacity(n * j);
        let mut factual_control = Vec::with_capacity(n);
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        for i in 0..n {
            let row = view.row(i);
            let pre = mean(&row[..tau]);
            let post = mean(&row[tau..]);
            factual_control.push(pre);
            match spec {
                MechanismSpec::Tr => {
                    values.push(pre - post);
                    values.push(post - pre);
                }
                MechanismSpec::At { support } => {
                    for &delta in support {
                        let split = (tau as i64 + delta) as usize;
                        values.push(mean(&row[split..]) - mean(&row[..split]));
                    }
                }
            }
        }
        let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(ContrastTable {
            n_units: n,
            n_options: j,
            values,
            factual,
            factual_control,
            scale,
        })
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_options(&self) -> usize {
        self.n_options
    }

    #[inline]
    pub fn statistic(&self, options: &[u16]) -> f64 {
        let j = self.n_options;
        let sum: f64 = options
            .iter()
            .enumerate()
            .map(|(i, &o)| self.values[i * j + o as usize])
            .sum();
        sum / self.n_units as f64
    }

    pub fn observed(&self) -> f64 {
        self.statistic(&vec![self.factual as u16; self.n_units])
    }

    /// Largest absolute per-unit contrast; bounds every statistic.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Slack below the observed value within which a statistic counts as a tie.
    pub fn tie_margin(&self) -> f64 {
        TIE_TOLERANCE * self.scale
    }

    /// Mean control outcome under the factual assignment.
    pub fn control_baseline(&self) -> f64 {
        self.factual_control.iter().sum::<f64>() / self.n_units as f64
    }
}

/// How the reference distribution was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum DrawSummary {
    Exact { space: u64 },
    MonteCarlo { n_sim: usize },
}

impl DrawSummary {
    pub fn count(&self) -> u64 {
        match *self {
            DrawSummary::Exact { space } => space,
            DrawSummary::MonteCarlo { n_sim } => n_sim as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub tau: usize,
    pub adoption: AdoptionTime,
    pub mechanism: MechanismSpec,
    pub adjusted: bool,
    pub observed_stat: f64,
    pub control_baseline: f64,
    pub p_value: f64,
    /// Reference draws with `|S| >= |s_obs|`.
    pub exceed_count: u64,
    pub draws: DrawSummary,
    pub seed: u64,
    pub counting: CountingRule,
    pub reference_mean: f64,
    pub reference_sd: f64,
    /// Every admissible draw equals the factual one (p = 1 by construction).
    pub degenerate: bool,
    pub factual: AssignmentDraw,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl TestResult {
    pub fn kind(&self) -> MechanismKind {
        self.mechanism.kind()
    }
}

fn resolve_draws(spec: &MechanismSpec, n: usize, settings: &TestSettings) -> Result<DrawSummary> {
    match settings.mode {
        InferenceMode::Exact => Ok(DrawSummary::Exact {
            space: checked_space(spec, n, settings.enumeration_cap)?,
        }),
        InferenceMode::MonteCarlo => Ok(DrawSummary::MonteCarlo {
            n_sim: settings.n_sim,
        }),
        InferenceMode::Auto => Ok(match checked_space(spec, n, settings.enumeration_cap) {
            Ok(space) => DrawSummary::Exact { space },
            Err(_) => DrawSummary::MonteCarlo {
                n_sim: settings.n_sim,
            },
        }),
    }
}

/// Applies `f` to every draw, in draw-index order.
fn map_draws<T, F>(n: usize, j: usize, draws: DrawSummary, seed: u64, lane: u16, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&[u16]) -> T + Sync,
{
    match draws {
        DrawSummary::Exact { space } => (0..space)
            .into_par_iter()
            .map_init(
                || vec![0u16; n],
                |buf, k| {
                    options_at_index(k, j, buf);
                    f(buf)
                },
            )
            .collect(),
        DrawSummary::MonteCarlo { n_sim } => {
            let factory = StreamFactory::new(seed);
            (0..n_sim as u64)
                .into_par_iter()
                .map_init(
                    || vec![0u16; n],
                    |buf, sim| {
                        let mut rng = factory.stream(sim, lane);
                        fill_options(&mut rng, j, buf);
                        f(buf)
                    },
                )
                .collect()
        }
    }
}

/// Reference statistics in draw-index order.
pub fn reference_statistics(
    table: &ContrastTable,
    draws: DrawSummary,
    seed: u64,
    lane: u16,
) -> Vec<f64> {
    map_draws(table.n_units(), table.n_options(), draws, seed, lane, |d| {
        table.statistic(d)
    })
}

fn p_from_count(count: u64, draws: DrawSummary, counting: CountingRule) -> f64 {
    match (draws, counting) {
        (DrawSummary::Exact { space }, _) => count as f64 / space as f64,
        (DrawSummary::MonteCarlo { n_sim }, CountingRule::Plain) => count as f64 / n_sim as f64,
        (DrawSummary::MonteCarlo { n_sim }, CountingRule::AddOne) => {
            (count + 1) as f64 / (n_sim + 1) as f64
        }
    }
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    (m, var.sqrt())
}

/// Randomization test on an already-sliced window.
pub fn test_window(
    view: &WindowView,
    adoption: AdoptionTime,
    spec: &MechanismSpec,
    settings: &TestSettings,
) -> Result<TestResult> {
    let table = ContrastTable::new(view, spec)?;
    let n = view.n_units();
    let draws = resolve_draws(spec, n, settings)?;
    let mut warnings = Vec::new();
    if let DrawSummary::MonteCarlo { n_sim } = draws {
        if n_sim == 0 {
            return Err(Error::InvalidArgument("n_sim must be positive".into()));
        }
        if n_sim < 100 {
            let msg = format!("only {n_sim} simulations; p-values will be coarse");
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    let degenerate = spec.is_degenerate();
    if degenerate {
        let msg = format!(
            "mechanism {} has a single assignment for tau={}; p = 1 by construction",
            spec.label(),
            view.tau()
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let observed = table.observed();
    let reference = reference_statistics(&table, draws, settings.seed, 0);
    let threshold = observed.abs() - table.tie_margin();
    let exceed = reference.iter().filter(|s| s.abs() >= threshold).count() as u64;
    let (reference_mean, reference_sd) = mean_sd(&reference);

    Ok(TestResult {
        tau: view.tau(),
        adoption,
        mechanism: spec.clone(),
        adjusted: view.transform().is_adjusted(),
        observed_stat: observed,
        control_baseline: table.control_baseline(),
        p_value: p_from_count(exceed, draws, settings.counting),
        exceed_count: exceed,
        draws,
        seed: settings.seed,
        counting: settings.counting,
        reference_mean,
        reference_sd,
        degenerate,
        factual: factual_draw(spec, n)?,
        warnings,
    })
}

/// Tests the sharp null of no effect in the window of half-length `tau`.
pub fn randomization_test(
    design: &Design<'_>,
    tau: usize,
    spec: &MechanismSpec,
    settings: &TestSettings,
) -> Result<TestResult> {
    let view = design.window(tau)?;
    test_window(&view, design.adoption(), spec, settings)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiSettings {
    pub alpha: f64,
    /// Spacing of the lattice `estimate + k * resolution` on which endpoints lie.
    pub resolution: f64,
    /// Coarse grid points on each side of the estimate.
    pub coarse_points: usize,
    /// Coarse grid half-span in reference standard deviations.
    pub span_sds: f64,
}

impl Default for CiSettings {
    fn default() -> Self {
        CiSettings {
            alpha: 0.05,
            resolution: DEFAULT_CI_RESOLUTION,
            coarse_points: 40,
            span_sds: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EndpointStatus {
    /// Found by bisection between an accepted and a rejected grid point.
    Closed,
    /// Accepted at the edge of the widest search grid; the interval may be
    /// unbounded on this side.
    Open,
    /// Coarse p-values were not monotone; endpoint found by exhaustive scan.
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CIResult {
    pub tau: usize,
    pub mechanism: MechanismSpec,
    pub alpha: f64,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub grid_resolution: f64,
    pub lower_status: EndpointStatus,
    pub upper_status: EndpointStatus,
    pub evaluations: usize,
}

/// Window with `theta0` removed from every factually treated cell.
pub fn adjust_for_effect(view: &WindowView, theta0: f64) -> WindowView {
    let tau = view.tau();
    view.map_cells(|_, c, v| if c >= tau { v - theta0 } else { v })
}

const MAX_WIDENINGS: usize = 30;

/// The statistic of a window with `theta0` removed from the factually treated
/// cells is `a - theta0 * b`, where `a` is the statistic of the raw window and
/// `b` that of the treated-cell indicator, both under the same draw.
struct Inverter {
    pairs: Vec<(f64, f64)>,
    observed: (f64, f64),
    scales: (f64, f64),
    draws: DrawSummary,
    counting: CountingRule,
    estimate: f64,
    resolution: f64,
    alpha: f64,
    cache: BTreeMap<i64, f64>,
}

impl Inverter {
    fn theta(&self, k: i64) -> f64 {
        self.estimate + k as f64 * self.resolution
    }

    fn p_at(&mut self, k: i64) -> Result<f64> {
        if let Some(&p) = self.cache.get(&k) {
            return Ok(p);
        }
        let theta = self.theta(k);
        let margin = TIE_TOLERANCE * (self.scales.0 + theta.abs() * self.scales.1);
        let threshold = (self.observed.0 - theta * self.observed.1).abs() - margin;
        let count = self
            .pairs
            .par_iter()
            .filter(|(a, b)| (a - theta * b).abs() >= threshold)
            .count() as u64;
        let p = p_from_count(count, self.draws, self.counting);
        self.cache.insert(k, p);
        Ok(p)
    }

    fn accepted(&mut self, k: i64) -> Result<bool> {
        Ok(self.p_at(k)? > self.alpha)
    }

    /// p-value as the effect grows without bound: only draws whose indicator
    /// statistic is at least as large as the factual one stay as extreme.
    fn limit_p(&self) -> f64 {
        let threshold = self.observed.1.abs() - TIE_TOLERANCE * self.scales.1;
        let count = self
            .pairs
            .iter()
            .filter(|(_, b)| b.abs() >= threshold)
            .count() as u64;
        p_from_count(count, self.draws, self.counting)
    }

    /// Outermost accepted lattice index on one side (`dir` = +1 or -1). The
    /// grid is widened while its edge is accepted, unless the interval is
    /// unbounded on that side.
    fn endpoint(
        &mut self,
        dir: i64,
        mut step: i64,
        points: usize,
    ) -> Result<(i64, EndpointStatus)> {
        let bounded = self.limit_p() <= self.alpha;
        let mut widenings = 0;
        let (accepted, last) = loop {
            let mut accepted = Vec::with_capacity(points);
            for j in 1..=points as i64 {
                accepted.push(self.accepted(dir * j * step)?);
            }
            let last = accepted.iter().rposition(|&a| a).map_or(0, |p| p + 1) as i64;
            if last < points as i64 {
                break (accepted, last);
            }
            if !bounded || widenings == MAX_WIDENINGS || step > i64::MAX / 4 / points as i64 {
                return Ok((dir * last * step, EndpointStatus::Open));
            }
            step *= 2;
            widenings += 1;
        };
        let monotone = accepted[..last as usize].iter().all(|&a| a);
        let (mut lo, hi) = (last * step, (last + 1) * step);
        if monotone {
            let mut hi = hi;
            while hi - lo > 1 {
                let mid = lo + (hi - lo) / 2;
                if self.accepted(dir * mid)? {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Ok((dir * lo, EndpointStatus::Closed))
        } else {
            log::warn!(
                "non-monotone p-values while inverting the test; scanning the bracket exhaustively"
            );
            for k in (lo + 1..hi).rev() {
                if self.accepted(dir * k)? {
                    lo = k;
                    break;
                }
            }
            Ok((dir * lo, EndpointStatus::Exhaustive))
        }
    }
}

/// Confidence interval for a constant additive effect, by inverting the
/// randomization test over a lattice of hypothesized effects.
pub fn confidence_interval_window(
    view: &WindowView,
    adoption: AdoptionTime,
    spec: &MechanismSpec,
    settings: &TestSettings,
    ci: &CiSettings,
) -> Result<CIResult> {
    if !(ci.alpha > 0.0 && ci.alpha <= 0.5) {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in (0, 0.5], got {}",
            ci.alpha
        )));
    }
    if ci.resolution.is_nan() || ci.resolution <= 0.0 || ci.coarse_points == 0 {
        return Err(Error::InvalidArgument(
            "grid resolution and coarse points must be positive".into(),
        ));
    }
    let base = test_window(view, adoption, spec, settings)?;
    let estimate = base.observed_stat;
    let tau = view.tau();
    let raw = ContrastTable::new(view, spec)?;
    let indicator = ContrastTable::new(
        &view.map_cells(|_, c, _| if c >= tau { 1.0 } else { 0.0 }),
        spec,
    )?;
    let pairs = map_draws(
        raw.n_units(),
        raw.n_options(),
        base.draws,
        settings.seed,
        0,
        |d| (raw.statistic(d), indicator.statistic(d)),
    );
    let mut inv = Inverter {
        pairs,
        observed: (raw.observed(), indicator.observed()),
        scales: (raw.scale(), indicator.scale()),
        draws: base.draws,
        counting: settings.counting,
        estimate,
        resolution: ci.resolution,
        alpha: ci.alpha,
        cache: BTreeMap::new(),
    };
    if !inv.accepted(0)? {
        return Err(Error::EmptyAcceptance(format!(
            "no effect value accepted at alpha={}; try a finer grid or more simulations",
            ci.alpha
        )));
    }

    let mut span = ci.span_sds * base.reference_sd;
    if !(span.is_finite() && span > 0.0) {
        span = (ci.span_sds * estimate.abs()).max(ci.coarse_points as f64 * ci.resolution);
    }
    let step = ((span / (ci.coarse_points as f64 * ci.resolution)).ceil() as i64).max(1);
    let (lo, lower_status) = inv.endpoint(-1, step, ci.coarse_points)?;
    let (hi, upper_status) = inv.endpoint(1, step, ci.coarse_points)?;

    Ok(CIResult {
        tau: view.tau(),
        mechanism: spec.clone(),
        alpha: ci.alpha,
        estimate,
        lower: inv.theta(lo),
        upper: inv.theta(hi),
        grid_resolution: ci.resolution,
        lower_status,
        upper_status,
        evaluations: inv.cache.len(),
    })
}

pub fn confidence_interval(
    design: &Design<'_>,
    tau: usize,
    spec: &MechanismSpec,
    settings: &TestSettings,
    ci: &CiSettings,
) -> Result<CIResult> {
    let view = design.window(tau)?;
    confidence_interval_window(&view, design.adoption(), spec, settings, ci)
}

/// A mechanism defined for every window length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MechanismFamily {
    Tr,
    /// Adoption timing with support `{-(tau-1), ..., 0}` in each window.
    AtBackdate,
    /// Adoption timing with the same support in every window.
    AtSupport {
        support: Vec<i64>,
    },
    /// Adoption timing with an explicit support per window length.
    AtExplicit {
        supports: BTreeMap<usize, Vec<i64>>,
    },
}

impl MechanismFamily {
    pub fn kind(&self) -> MechanismKind {
        match self {
            MechanismFamily::Tr => MechanismKind::Tr,
            _ => MechanismKind::At,
        }
    }

    pub fn spec_for(&self, tau: usize) -> Result<MechanismSpec> {
        let spec = match self {
            MechanismFamily::Tr => MechanismSpec::Tr,
            MechanismFamily::AtBackdate => MechanismSpec::backdate(tau.saturating_sub(1)),
            MechanismFamily::AtSupport { support } => MechanismSpec::at(support.iter().copied())?,
            MechanismFamily::AtExplicit { supports } => MechanismSpec::at(
                supports
                    .get(&tau)
                    .ok_or_else(|| {
                        Error::InvalidMechanism(format!("no support configured for tau={tau}"))
                    })?
                    .iter()
                    .copied(),
            )?,
        };
        spec.validate(tau)?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointSettings {
    pub n_sim: usize,
    pub seed: u64,
    pub counting: CountingRule,
    /// Reuse one stream for every window instead of independent sub-streams.
    pub coupled: bool,
}

impl Default for JointSettings {
    fn default() -> Self {
        JointSettings {
            n_sim: DEFAULT_N_SIM,
            seed: 0,
            counting: CountingRule::Plain,
            coupled: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointResult {
    pub taus: Vec<usize>,
    pub mechanism: MechanismKind,
    pub supports: Vec<MechanismSpec>,
    pub combiner: Combiner,
    pub observed_stat: f64,
    pub p_value: f64,
    pub exceed_count: u64,
    pub per_window: Vec<f64>,
    pub n_sim: usize,
    pub seed: u64,
    pub counting: CountingRule,
    pub coupled: bool,
}

/// Joint test of no effect in every listed window, one result per combiner.
pub fn joint_test(
    design: &Design<'_>,
    taus: &[usize],
    family: &MechanismFamily,
    combiners: &[Combiner],
    settings: &JointSettings,
) -> Result<Vec<JointResult>> {
    if taus.is_empty() {
        return Err(Error::InvalidArgument(
            "joint test needs at least one window".into(),
        ));
    }
    if taus.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "window list must be strictly ascending".into(),
        ));
    }
    if family.kind() == MechanismKind::At && taus[0] < 2 {
        return Err(Error::InvalidArgument(
            "adoption-timing joint tests start at tau=2".into(),
        ));
    }
    if taus.len() > crate::rng::MAX_LANES as usize {
        return Err(Error::InvalidArgument("too many windows".into()));
    }
    let dim = taus.len();
    if combiners.contains(&Combiner::Hotelling) && settings.n_sim < dim + 2 {
        return Err(Error::Combine(format!(
            "hotelling over {dim} windows needs n_sim >= {}, got {}",
            dim + 2,
            settings.n_sim
        )));
    }
    if settings.n_sim == 0 {
        return Err(Error::InvalidArgument("n_sim must be positive".into()));
    }

    let mut specs = Vec::with_capacity(dim);
    let mut tables = Vec::with_capacity(dim);
    for &tau in taus {
        let spec = family.spec_for(tau)?;
        tables.push(ContrastTable::new(&design.window(tau)?, &spec)?);
        specs.push(spec);
    }
    let observed: Vec<f64> = tables.iter().map(ContrastTable::observed).collect();
    let n = design.panel().n_units();

    let factory = StreamFactory::new(settings.seed);
    let simulated: Vec<Vec<f64>> = (0..settings.n_sim as u64)
        .into_par_iter()
        .map_init(
            || vec![0u16; n],
            |buf, sim| {
                tables
                    .iter()
                    .enumerate()
                    .map(|(l, table)| {
                        let lane = if settings.coupled { 0 } else { l as u16 };
                        let mut rng = factory.stream(sim, lane);
                        fill_options(&mut rng, table.n_options(), buf);
                        table.statistic(buf)
                    })
                    .collect()
            },
        )
        .collect();

    let draws = DrawSummary::MonteCarlo {
        n_sim: settings.n_sim,
    };
    let scale = tables.iter().fold(0.0f64, |m, t| m.max(t.scale()));
    combiners
        .iter()
        .map(|&combiner| {
            let fitted = FittedCombiner::fit(combiner, dim, &simulated)?;
            let obs = fitted.apply(&observed);
            let margin = match combiner {
                Combiner::Max | Combiner::Mean => TIE_TOLERANCE * scale,
                Combiner::Hotelling => TIE_TOLERANCE * obs.abs(),
            };
            let exceed = simulated
                .iter()
                .filter(|s| fitted.apply(s) >= obs - margin)
                .count() as u64;
            Ok(JointResult {
                taus: taus.to_vec(),
                mechanism: family.kind(),
                supports: specs.clone(),
                combiner,
                observed_stat: obs,
                p_value: p_from_count(exceed, draws, settings.counting),
                exceed_count: exceed,
                per_window: observed.clone(),
                n_sim: settings.n_sim,
                seed: settings.seed,
                counting: settings.counting,
                coupled: settings.coupled,
            })
        })
        .collect()
}
