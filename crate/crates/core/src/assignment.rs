//! Hypothetical assignment mechanisms over a window.
//!
//! * Treatment reversal (TR): each unit independently keeps the factual
//!   assignment (post block treated, `Z = 1`) or has it reversed (pre block
//!   treated, `Z = 0`), each with probability 1/2.
//! * Adoption timing (AT): each unit's adoption is moved by an offset drawn
//!   uniformly from a support of offsets relative to the true adoption.
//!
//! Both are represented internally as "options per unit": TR has options
//! `[Z=0, Z=1]`, AT has one option per support offset in ascending order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::WindowView;
use crate::rng::{fill_options, StreamFactory};

/// Largest assignment space enumerated exactly unless overridden.
pub const DEFAULT_ENUMERATION_CAP: u64 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MechanismKind {
    Tr,
    At,
}

impl std::fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MechanismKind::Tr => "tr",
            MechanismKind::At => "at",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MechanismSpec {
    Tr,
    At { support: Vec<i64> },
}

impl MechanismSpec {
    /// Adoption-timing mechanism over the given offsets (sorted, deduplicated).
    pub fn at(support: impl IntoIterator<Item = i64>) -> Result<Self> {
        let mut support: Vec<i64> = support.into_iter().collect();
        support.sort_unstable();
        support.dedup();
        if support.is_empty() {
            return Err(Error::InvalidMechanism(
                "empty adoption-timing support".into(),
            ));
        }
        Ok(MechanismSpec::At { support })
    }

    /// Adoption timing with offsets `-k..=0`.
    pub fn backdate(k: usize) -> Self {
        MechanismSpec::At {
            support: (-(k as i64)..=0).collect(),
        }
    }

    pub fn kind(&self) -> MechanismKind {
        match self {
            MechanismSpec::Tr => MechanismKind::Tr,
            MechanismSpec::At { .. } => MechanismKind::At,
        }
    }

    /// AT offsets in ascending order; empty for TR.
    pub fn support(&self) -> &[i64] {
        match self {
            MechanismSpec::Tr => &[],
            MechanismSpec::At { support } => support,
        }
    }

    /// Options per unit: 2 for TR, `J` for AT.
    pub fn n_options(&self) -> usize {
        match self {
            MechanismSpec::Tr => 2,
            MechanismSpec::At { support } => support.len(),
        }
    }

    /// Option index of the real-world assignment.
    pub fn factual_option(&self) -> Result<usize> {
        match self {
            MechanismSpec::Tr => Ok(1),
            MechanismSpec::At { support } => support
                .iter()
                .position(|&d| d == 0)
                .ok_or_else(|| Error::FactualNotInSupport(support.clone())),
        }
    }

    /// Checks that every option leaves each unit at least one treated and one
    /// untreated period in a window of half-length `tau`.
    pub fn validate(&self, tau: usize) -> Result<()> {
        if tau == 0 {
            return Err(Error::ZeroTau);
        }
        let MechanismSpec::At { support } = self else {
            return Ok(());
        };
        if support.is_empty() {
            return Err(Error::InvalidMechanism(
                "empty adoption-timing support".into(),
            ));
        }
        if support.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidMechanism(
                "support must be strictly increasing".into(),
            ));
        }
        let bound = tau as i64 - 1;
        for &d in support {
            if d == tau as i64 {
                return Err(Error::InvalidMechanism(format!(
                    "offset +{tau} leaves no treated period in a window with tau={tau}; forward-dating is capped at tau-1={bound}"
                )));
            }
            if d < -bound || d > bound {
                return Err(Error::InvalidMechanism(format!(
                    "offset {d} outside [{}, {bound}] for tau={tau}",
                    -bound
                )));
            }
        }
        Ok(())
    }

    /// True when every draw equals the factual one.
    pub fn is_degenerate(&self) -> bool {
        self.n_options() == 1
    }

    /// `2^n` or `J^n`, `None` on overflow.
    pub fn space_size(&self, n: usize) -> Option<u64> {
        (self.n_options() as u64).checked_pow(u32::try_from(n).ok()?)
    }

    pub fn draw_from_options(&self, options: &[u16]) -> AssignmentDraw {
        match self {
            MechanismSpec::Tr => {
                AssignmentDraw::Reversal(options.iter().map(|&o| o == 1).collect())
            }
            MechanismSpec::At { support } => {
                AssignmentDraw::Adoption(options.iter().map(|&o| support[o as usize]).collect())
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            MechanismSpec::Tr => "tr".into(),
            MechanismSpec::At { support } => format!(
                "at{{{}}}",
                support
                    .iter()
                    .map(i64::to_string)
                    .collect::<Vec<_>>()
                    .join(",")
            ),
        }
    }
}

/// One realization of the randomization.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "lowercase")]
pub enum AssignmentDraw {
    /// Reversal bits: `true` means the post-adoption block is treated.
    Reversal(Vec<bool>),
    /// Adoption offsets relative to the true adoption period.
    Adoption(Vec<i64>),
}

impl AssignmentDraw {
    pub fn len(&self) -> usize {
        match self {
            AssignmentDraw::Reversal(z) => z.len(),
            AssignmentDraw::Adoption(a) => a.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reversal draw with every bit flipped; adoption draws are returned unchanged.
    pub fn complement(&self) -> AssignmentDraw {
        match self {
            AssignmentDraw::Reversal(z) => AssignmentDraw::Reversal(z.iter().map(|b| !b).collect()),
            other => other.clone(),
        }
    }
}

/// The real-world assignment: all units adopt at `a0`.
pub fn factual_draw(spec: &MechanismSpec, n: usize) -> Result<AssignmentDraw> {
    spec.factual_option()?;
    Ok(match spec {
        MechanismSpec::Tr => AssignmentDraw::Reversal(vec![true; n]),
        MechanismSpec::At { .. } => AssignmentDraw::Adoption(vec![0; n]),
    })
}

/// Position of a draw in the randomization stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamSeed {
    pub master: u64,
    pub sim: u64,
    pub lane: u16,
}

impl StreamSeed {
    pub fn new(master: u64, sim: u64) -> Self {
        StreamSeed {
            master,
            sim,
            lane: 0,
        }
    }
}

pub fn sample_draw(spec: &MechanismSpec, n: usize, seed: StreamSeed) -> Result<AssignmentDraw> {
    if spec.n_options() == 0 {
        return Err(Error::InvalidMechanism(
            "empty adoption-timing support".into(),
        ));
    }
    let factory = StreamFactory::new(seed.master);
    let mut rng = factory.stream(seed.sim, seed.lane);
    let mut options = vec![0u16; n];
    fill_options(&mut rng, spec.n_options(), &mut options);
    Ok(spec.draw_from_options(&options))
}

/// Decodes draw number `index` (lexicographic, unit 0 most significant).
pub fn options_at_index(mut index: u64, n_options: usize, out: &mut [u16]) {
    for slot in out.iter_mut().rev() {
        *slot = (index % n_options as u64) as u16;
        index /= n_options as u64;
    }
}

/// Lazy lexicographic enumeration of every admissible draw.
#[derive(Debug, Clone)]
pub struct DrawEnumerator {
    spec: MechanismSpec,
    n: usize,
    next: u64,
    space: u64,
}

impl DrawEnumerator {
    pub fn space(&self) -> u64 {
        self.space
    }
}

impl Iterator for DrawEnumerator {
    type Item = AssignmentDraw;

    fn next(&mut self) -> Option<AssignmentDraw> {
        if self.next >= self.space {
            return None;
        }
        let mut options = vec![0u16; self.n];
        options_at_index(self.next, self.spec.n_options(), &mut options);
        self.next += 1;
        Some(self.spec.draw_from_options(&options))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.space - self.next) as usize;
        (left, Some(left))
    }
}

/// Size of the assignment space, or an error when it exceeds `cap`.
pub fn checked_space(spec: &MechanismSpec, n: usize, cap: u64) -> Result<u64> {
    match spec.space_size(n) {
        Some(space) if space <= cap => Ok(space),
        Some(space) => Err(Error::EnumerationCap {
            space: space.to_string(),
            cap,
        }),
        None => Err(Error::EnumerationCap {
            space: format!("{}^{n}", spec.n_options()),
            cap,
        }),
    }
}

pub fn enumerate_draws(spec: &MechanismSpec, n: usize, cap: u64) -> Result<DrawEnumerator> {
    let space = checked_space(spec, n, cap)?;
    Ok(DrawEnumerator {
        spec: spec.clone(),
        n,
        next: 0,
        space,
    })
}

/// The `n x 2tau` binary treatment matrix over a window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentMatrix {
    n_units: usize,
    width: usize,
    cells: Vec<u8>,
}

impl AssignmentMatrix {
    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, unit: usize) -> &[u8] {
        &self.cells[unit * self.width..(unit + 1) * self.width]
    }

    pub fn row_sum(&self, unit: usize) -> usize {
        self.row(unit).iter().map(|&d| d as usize).sum()
    }
}

/// Expands a draw into treatment indicators over the view's periods.
pub fn expand(draw: &AssignmentDraw, view: &WindowView) -> Result<AssignmentMatrix> {
    if draw.len() != view.n_units() {
        return Err(Error::DrawLength {
            expected: view.n_units(),
            found: draw.len(),
        });
    }
    let tau = view.tau() as i64;
    let width = view.width();
    let mut cells = Vec::with_capacity(draw.len() * width);
    // column c is the period a0 + (c - tau)
    match draw {
        AssignmentDraw::Reversal(z) => {
            for &zi in z {
                cells.extend((0..width as i64).map(|c| u8::from((c - tau >= 0) == zi)));
            }
        }
        AssignmentDraw::Adoption(a) => {
            for &delta in a {
                cells.extend((0..width as i64).map(|c| u8::from(c - tau >= delta)));
            }
        }
    }
    Ok(AssignmentMatrix {
        n_units: draw.len(),
        width,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn view(n: usize, tau: usize) -> WindowView {
        WindowView::from_slab(tau, tau + 1, vec![0.0; n * 2 * tau]).unwrap()
    }

    #[test]
    fn factual_draws() {
        assert_eq!(
            factual_draw(&MechanismSpec::Tr, 3).unwrap(),
            AssignmentDraw::Reversal(vec![true; 3])
        );
        let at = MechanismSpec::at([-2, -1, 0]).unwrap();
        assert_eq!(
            factual_draw(&at, 2).unwrap(),
            AssignmentDraw::Adoption(vec![0, 0])
        );
        let err = factual_draw(&MechanismSpec::at([-2, -1]).unwrap(), 2).unwrap_err();
        assert!(matches!(err, Error::FactualNotInSupport(_)));
    }

    #[test]
    fn validation_bounds() {
        assert!(MechanismSpec::backdate(6).validate(7).is_ok());
        assert!(MechanismSpec::backdate(7).validate(7).is_err());
        assert!(MechanismSpec::at([-1, 0, 1]).unwrap().validate(2).is_ok());
        let err = MechanismSpec::at([0, 2]).unwrap().validate(2).unwrap_err();
        assert!(err.to_string().contains("capped"), "{err}");
        assert!(MechanismSpec::at([-6, -3, 0]).unwrap().validate(7).is_ok());
        assert!(MechanismSpec::at(Vec::<i64>::new()).is_err());
        assert!(MechanismSpec::Tr.validate(1).is_ok());
        assert!(MechanismSpec::backdate(0).is_degenerate());
    }

    #[test]
    fn expand_rows() {
        let v = view(1, 2);
        let m = expand(&AssignmentDraw::Reversal(vec![false]), &v).unwrap();
        assert_eq!(m.row(0), [1, 1, 0, 0]);
        let m = expand(&AssignmentDraw::Reversal(vec![true]), &v).unwrap();
        assert_eq!(m.row(0), [0, 0, 1, 1]);
        let m = expand(&AssignmentDraw::Adoption(vec![1]), &v).unwrap();
        assert_eq!(m.row(0), [0, 0, 0, 1]);
        let m = expand(&AssignmentDraw::Adoption(vec![-1]), &v).unwrap();
        assert_eq!(m.row(0), [0, 1, 1, 1]);
        assert!(expand(&AssignmentDraw::Adoption(vec![0, 0]), &v).is_err());
    }

    #[test]
    fn row_sums_follow_offsets() {
        let tau = 5;
        let v = view(1, tau);
        for delta in -(tau as i64 - 1)..=(tau as i64 - 1) {
            let m = expand(&AssignmentDraw::Adoption(vec![delta]), &v).unwrap();
            assert_eq!(m.row_sum(0) as i64, tau as i64 - delta);
            assert!(m.row(0).windows(2).all(|w| w[0] <= w[1]));
        }
        for z in [false, true] {
            let m = expand(&AssignmentDraw::Reversal(vec![z]), &v).unwrap();
            assert_eq!(m.row_sum(0), tau);
        }
    }

    #[test]
    fn factual_expansion_is_post_indicator() {
        let v = view(3, 3);
        for spec in [MechanismSpec::Tr, MechanismSpec::backdate(2)] {
            let m = expand(&factual_draw(&spec, 3).unwrap(), &v).unwrap();
            for i in 0..3 {
                assert_eq!(m.row(i), [0, 0, 0, 1, 1, 1]);
            }
        }
    }

    #[test]
    fn enumeration_order_and_size() {
        let draws: Vec<_> = enumerate_draws(&MechanismSpec::Tr, 2, DEFAULT_ENUMERATION_CAP)
            .unwrap()
            .collect();
        assert_eq!(
            draws,
            [
                AssignmentDraw::Reversal(vec![false, false]),
                AssignmentDraw::Reversal(vec![false, true]),
                AssignmentDraw::Reversal(vec![true, false]),
                AssignmentDraw::Reversal(vec![true, true]),
            ]
        );
        let at = MechanismSpec::at([-1, 0]).unwrap();
        assert_eq!(
            enumerate_draws(&at, 2, DEFAULT_ENUMERATION_CAP)
                .unwrap()
                .count(),
            4
        );
        let at3 = MechanismSpec::backdate(2);
        let all: HashSet<_> = enumerate_draws(&at3, 4, DEFAULT_ENUMERATION_CAP)
            .unwrap()
            .collect();
        assert_eq!(all.len(), 81);
        let err = enumerate_draws(&MechanismSpec::Tr, 62, DEFAULT_ENUMERATION_CAP).unwrap_err();
        assert!(matches!(err, Error::EnumerationCap { .. }));
        assert!(enumerate_draws(&MechanismSpec::Tr, 20, DEFAULT_ENUMERATION_CAP).is_ok());
        assert!(enumerate_draws(&MechanismSpec::Tr, 21, DEFAULT_ENUMERATION_CAP).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = MechanismSpec::backdate(3);
        let a = sample_draw(&spec, 10, StreamSeed::new(9, 4)).unwrap();
        let b = sample_draw(&spec, 10, StreamSeed::new(9, 4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_draw(&spec, 10, StreamSeed::new(9, 5)).unwrap());
    }

    #[test]
    fn sampling_hits_every_tr_draw() {
        let seen: HashSet<_> = (0..160)
            .map(|s| sample_draw(&MechanismSpec::Tr, 4, StreamSeed::new(2024, s)).unwrap())
            .collect();
        assert_eq!(seen.len(), 16);
    }

    #[test]
    fn tr_bits_are_fair() {
        let ones = (0..100_000)
            .filter(|&s| {
                sample_draw(&MechanismSpec::Tr, 1, StreamSeed::new(11, s)).unwrap()
                    == AssignmentDraw::Reversal(vec![true])
            })
            .count();
        let frac = ones as f64 / 100_000.0;
        assert!((0.495..=0.505).contains(&frac), "{frac}");
    }

    #[test]
    fn at_offsets_are_uniform() {
        let spec = MechanismSpec::at([-1, 0]).unwrap();
        let zeros = (0..100_000)
            .filter(|&s| {
                sample_draw(&spec, 1, StreamSeed::new(12, s)).unwrap()
                    == AssignmentDraw::Adoption(vec![0])
            })
            .count();
        let frac = zeros as f64 / 100_000.0;
        assert!((0.495..=0.505).contains(&frac), "{frac}");
    }

    #[test]
    fn complement_flips_bits() {
        let d = AssignmentDraw::Reversal(vec![true, false]);
        assert_eq!(d.complement(), AssignmentDraw::Reversal(vec![false, true]));
    }
}
