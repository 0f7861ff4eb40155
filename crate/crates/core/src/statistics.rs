//! Test statistics: the difference in means, the per-unit linear detrend
//! used for the time-adjusted statistic, and joint combiners across windows.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{AdoptionTime, OutcomeTransform, PanelDataset, PanelMetadata, UnitAverages};

/// Default half-width (days each side of adoption) of the detrend fit.
pub const DEFAULT_DETREND_HALFWIDTH: usize = 300;

/// Relative eigenvalue cut for the Hotelling pseudo-inverse.
pub const PINV_RELATIVE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatisticValue {
    pub value: f64,
    pub tau: usize,
    pub adjusted: bool,
}

/// Mean treated outcome minus mean control outcome, averaged over units.
pub fn diff_in_means(avgs: &UnitAverages) -> StatisticValue {
    let n = avgs.n_units() as f64;
    let treated = avgs.treated_mean.iter().sum::<f64>() / n;
    let control = avgs.control_mean.iter().sum::<f64>() / n;
    StatisticValue {
        value: treated - control,
        tau: avgs.tau,
        adjusted: avgs.adjusted,
    }
}

/// Per-unit OLS fit of the outcome on an intercept and a linear trend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetrendFit {
    pub halfwidth: usize,
    pub pre_only: bool,
    /// First and last panel periods used in the fit.
    pub fit_periods: (usize, usize),
    /// Panel periods covered by the returned residual panel.
    pub residual_periods: (usize, usize),
    pub clipped: bool,
    /// Fitted value of unit `i` at period `t` is `intercepts[i] + slopes[i] * t`.
    pub intercepts: Vec<f64>,
    pub slopes: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetrendOptions {
    /// Fit on pre-adoption days only and extrapolate across the adoption.
    pub pre_only: bool,
}

/// Removes a unit-specific intercept and linear trend fitted over
/// `[a0 - H, a0 + H - 1]` (clipped to the panel). Returns the residual panel
/// over that range together with the fit.
pub fn detrend(
    panel: &PanelDataset,
    a0: AdoptionTime,
    halfwidth: usize,
    options: DetrendOptions,
) -> Result<(PanelDataset, DetrendFit)> {
    if halfwidth < 2 {
        return Err(Error::InvalidArgument(format!(
            "detrend half-width must be at least 2, got {halfwidth}"
        )));
    }
    let want_lo = a0.period as i64 - halfwidth as i64;
    let want_hi = a0.period as i64 + halfwidth as i64 - 1;
    let lo = want_lo.max(1) as usize;
    let hi = (want_hi.min(panel.n_periods() as i64)) as usize;
    let clipped = want_lo < 1 || want_hi > panel.n_periods() as i64;
    if clipped {
        log::warn!("detrend window [{want_lo}, {want_hi}] clipped to panel periods [{lo}, {hi}]");
    }
    let fit_hi = if options.pre_only { a0.period - 1 } else { hi };
    if fit_hi < lo || fit_hi - lo + 1 < 3 {
        return Err(Error::DetrendWindow {
            periods: (fit_hi + 1).saturating_sub(lo),
        });
    }

    let origin = a0.period as f64;
    let xs: Vec<f64> = (lo..=fit_hi).map(|t| t as f64 - origin).collect();
    let x_mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::RankDeficient);
    }

    let width = hi - lo + 1;
    let n = panel.n_units();
    let mut residuals = Vec::with_capacity(n * width);
    let mut intercepts = Vec::with_capacity(n);
    let mut slopes = Vec::with_capacity(n);
    for i in 0..n {
        let row = panel.row(i);
        let ys = &row[lo - 1..fit_hi];
        let y_mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let sxy: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| (x - x_mean) * (y - y_mean))
            .sum();
        let slope = sxy / sxx;
        for t in lo..=hi {
            let x = t as f64 - origin;
            residuals.push((row[t - 1] - y_mean) - slope * (x - x_mean));
        }
        slopes.push(slope);
        intercepts.push(y_mean - slope * (x_mean + origin));
    }

    let metadata = PanelMetadata {
        transform: OutcomeTransform::Detrended {
            halfwidth,
            pre_only: options.pre_only,
        },
        ..panel.metadata().clone()
    };
    let residual_panel = PanelDataset::with_metadata(
        panel.unit_ids().to_vec(),
        panel.date_of(lo),
        width,
        residuals,
        metadata,
    )?;
    Ok((
        residual_panel,
        DetrendFit {
            halfwidth,
            pre_only: options.pre_only,
            fit_periods: (lo, fit_hi),
            residual_periods: (lo, hi),
            clipped,
            intercepts,
            slopes,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combiner {
    Max,
    Mean,
    Hotelling,
}

impl Combiner {
    pub const ALL: [Combiner; 3] = [Combiner::Max, Combiner::Hotelling, Combiner::Mean];

    pub fn name(&self) -> &'static str {
        match self {
            Combiner::Max => "max",
            Combiner::Mean => "mean",
            Combiner::Hotelling => "hotelling",
        }
    }
}

impl std::str::FromStr for Combiner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "max" => Ok(Combiner::Max),
            "mean" => Ok(Combiner::Mean),
            "hotelling" | "t2" => Ok(Combiner::Hotelling),
            other => Err(Error::InvalidArgument(format!(
                "unknown combiner `{other}`"
            ))),
        }
    }
}

/// A combiner with its reference-set parameters resolved, ready to be
/// applied to the observed vector and to every simulated vector.
#[derive(Debug, Clone)]
pub enum FittedCombiner {
    Max,
    Mean,
    Hotelling {
        center: DVector<f64>,
        precision: DMatrix<f64>,
    },
}

impl FittedCombiner {
    pub fn fit(method: Combiner, dim: usize, reference: &[Vec<f64>]) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Combine("need at least one statistic".into()));
        }
        match method {
            Combiner::Max => Ok(FittedCombiner::Max),
            Combiner::Mean => Ok(FittedCombiner::Mean),
            Combiner::Hotelling => {
                if reference.len() < dim + 2 {
                    return Err(Error::Combine(format!(
                        "hotelling with {dim} statistics needs at least {} reference draws, got {}",
                        dim + 2,
                        reference.len()
                    )));
                }
                if reference.iter().any(|r| r.len() != dim) {
                    return Err(Error::Combine(
                        "reference draws have mismatched length".into(),
                    ));
                }
                let (center, cov) = mean_and_covariance(reference, dim);
                Ok(FittedCombiner::Hotelling {
                    center,
                    precision: pseudo_inverse(cov)?,
                })
            }
        }
    }

    pub fn apply(&self, stats: &[f64]) -> f64 {
        match self {
            FittedCombiner::Max => stats.iter().fold(0.0, |m, s| f64::max(m, s.abs())),
            FittedCombiner::Mean => (stats.iter().sum::<f64>() / stats.len() as f64).abs(),
            FittedCombiner::Hotelling { center, precision } => {
                let d = DVector::from_iterator(stats.len(), stats.iter().copied()) - center;
                (d.transpose() * precision * &d)[(0, 0)]
            }
        }
    }
}

/// Combines one vector of per-window statistics into a scalar. Hotelling
/// centres and scales by the mean and covariance of `reference`.
pub fn combine(stats: &[f64], reference: &[Vec<f64>], method: Combiner) -> Result<f64> {
    Ok(FittedCombiner::fit(method, stats.len(), reference)?.apply(stats))
}

fn mean_and_covariance(rows: &[Vec<f64>], dim: usize) -> (DVector<f64>, DMatrix<f64>) {
    let m = rows.len() as f64;
    let mut mean = DVector::zeros(dim);
    for r in rows {
        for (k, v) in r.iter().enumerate() {
            mean[k] += v;
        }
    }
    mean /= m;
    let mut cov = DMatrix::zeros(dim, dim);
    for r in rows {
        for a in 0..dim {
            let da = r[a] - mean[a];
            for b in a..dim {
                cov[(a, b)] += da * (r[b] - mean[b]);
            }
        }
    }
    for a in 0..dim {
        for b in a..dim {
            let v = cov[(a, b)] / (m - 1.0);
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    (mean, cov)
}

/// Moore-Penrose inverse of a symmetric positive semi-definite matrix,
/// dropping eigenvalues below `PINV_RELATIVE_TOLERANCE * max eigenvalue`.
pub fn pseudo_inverse(cov: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let dim = cov.nrows();
    let eig = SymmetricEigen::new(cov);
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if top == 0.0 || !top.is_finite() {
        return Err(Error::DegenerateReference);
    }
    let cut = PINV_RELATIVE_TOLERANCE * top;
    let mut pinv = DMatrix::zeros(dim, dim);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > cut {
            let v = eig.eigenvectors.column(k);
            pinv += (v * v.transpose()) / lambda;
        }
    }
    Ok(pinv)
}
