//! Disjointness classification from norm curvature.
//!
//! A pair `(x, y)` is probed through `N(alpha) = |x + alpha y|`: on spaces
//! that reflect disjointness, `x` and `y` are disjoint exactly when
//! `N'(0) = 0` and `N''(alpha)` vanishes as `alpha -> 0`. The limit is read
//! off a geometric grid `alpha_i = 2^-i`; since the curves behave like
//! power laws `c * alpha^s` near zero, the classification keys on the
//! log-log slope of the tail rather than on raw magnitudes.

use rayon::prelude::*;
use serde::Serialize;

use crate::curve::{ls_slope, DerivativeValue, NormCurve};
use crate::error::{Error, Result};
use crate::sample;
use crate::space::{disjoint, Element, SpaceSpec};

/// Zero threshold for `N'(0)`: `|N'(0)| <= 1e-8 * |y|`.
pub const N_PRIME_ZERO_TOL: f64 = 1e-8;

/// Geometric grid exponents: `alpha_i = 2^-i` for `i = GRID_LO..=GRID_HI`.
pub const GRID_LO: u32 = 3;
pub const GRID_HI: u32 = 20;

/// Tail length used for the limit classification.
const TAIL: usize = 5;

/// Grid limit of `N''(alpha)` as `alpha -> 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LimitClass {
    Zero,
    Nonzero,
    Divergent,
    Inconclusive,
}

/// One grid sample of the second derivative.
#[derive(Debug, Clone, Serialize)]
pub struct GridSample {
    pub alpha: f64,
    pub n_double: DerivativeValue,
}

/// Classifies the tail of nonsingular samples, ordered by decreasing alpha.
///
/// Returns the class and, when a power-law fit was possible, the log-log
/// slope of the tail.
pub fn classify_limit(samples: &[GridSample]) -> (LimitClass, Option<f64>) {
    let clean: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| !s.n_double.singular && s.n_double.value.is_finite())
        .map(|s| (s.alpha, s.n_double.value.max(0.0)))
        .collect();
    if clean.len() < TAIL {
        return (LimitClass::Inconclusive, None);
    }
    let tail = &clean[clean.len() - TAIL..];
    // Exact or cancellation-level zeros.
    if tail.iter().all(|&(_, v)| v <= 1e-9) {
        return (LimitClass::Zero, None);
    }
    // Fast path of the divergence rule: huge and still growing.
    if tail.iter().all(|&(_, v)| v >= 1e6)
        && tail.windows(2).all(|w| w[1].1 >= w[0].1)
    {
        let slope = fit_slope(tail);
        return (LimitClass::Divergent, slope);
    }
    if tail.iter().any(|&(_, v)| v <= 0.0) {
        return (LimitClass::Inconclusive, None);
    }
    let slope = match fit_slope(tail) {
        Some(s) => s,
        None => return (LimitClass::Inconclusive, None),
    };
    if slope >= 0.25 {
        // Decaying power law.
        (LimitClass::Zero, Some(slope))
    } else if slope <= -0.25 {
        (LimitClass::Divergent, Some(slope))
    } else {
        let mut vals: Vec<f64> = tail.iter().map(|&(_, v)| v).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = vals[vals.len() / 2];
        if median > 1e-7 {
            (LimitClass::Nonzero, Some(slope))
        } else {
            (LimitClass::Zero, Some(slope))
        }
    }
}

fn fit_slope(tail: &[(f64, f64)]) -> Option<f64> {
    let mut ln_a = Vec::with_capacity(tail.len());
    let mut ln_v = Vec::with_capacity(tail.len());
    for &(a, v) in tail {
        if v > 0.0 && v.is_finite() {
            ln_a.push(a.ln());
            ln_v.push(v.ln());
        }
    }
    if ln_a.len() < 3 {
        return None;
    }
    Some(ls_slope(&ln_a, &ln_v))
}

/// Samples `N''` on the geometric grid, skipping nothing; singular samples
/// carry their flag and are filtered by the classifier.
pub fn second_derivative_grid(curve: &NormCurve) -> Vec<GridSample> {
    (GRID_LO..=GRID_HI)
        .map(|i| {
            let alpha = 2f64.powi(-(i as i32));
            let n_double = curve
                .n_double_prime(alpha)
                .unwrap_or_else(|_| DerivativeValue::infinite());
            GridSample { alpha, n_double }
        })
        .collect()
}

/// Outcome of the second-derivative disjointness probe for one pair.
#[derive(Debug, Clone, Serialize)]
pub struct DisjointnessVerdict {
    pub x: Element,
    pub y: Element,
    pub n_prime_at_0: f64,
    pub n_double_limit: LimitClass,
    /// Log-log slope of the grid tail, when a fit was possible.
    pub tail_slope: Option<f64>,
    /// Populated only when the limit is conclusive and `N'(0) = 0`.
    pub inferred_disjoint: Option<bool>,
    /// From exact constructed supports, never from thresholded numerics.
    pub ground_truth_disjoint: bool,
}

/// Runs the probe on one pair. The pair must be non-collinear.
pub fn classify_pair(space: SpaceSpec, x: &Element, y: &Element) -> Result<DisjointnessVerdict> {
    if x.space != space || y.space != space {
        return Err(Error::SpaceMismatch(x.space, space));
    }
    x.check_same_space(y)?;
    if collinear(x, y) {
        return Err(Error::InvalidPair("x lies in span{y}".into()));
    }
    let ground_truth = disjoint(x, y)?;
    let curve = NormCurve::new(x.clone(), y.clone())?;
    let n_prime_at_0 = curve.n_prime(0.0)?.value;
    let grid = second_derivative_grid(&curve);
    let (limit, tail_slope) = classify_limit(&grid);
    let inferred = if n_prime_at_0.abs() <= N_PRIME_ZERO_TOL * y.norm() {
        match limit {
            LimitClass::Zero => Some(true),
            LimitClass::Nonzero | LimitClass::Divergent => Some(false),
            LimitClass::Inconclusive => None,
        }
    } else {
        None
    };
    Ok(DisjointnessVerdict {
        x: x.clone(),
        y: y.clone(),
        n_prime_at_0,
        n_double_limit: limit,
        tail_slope,
        inferred_disjoint: inferred,
        ground_truth_disjoint: ground_truth,
    })
}

fn collinear(x: &Element, y: &Element) -> bool {
    let xx: f64 = x.coords.iter().map(|c| c * c).sum();
    let yy: f64 = y.coords.iter().map(|c| c * c).sum();
    if xx == 0.0 || yy == 0.0 {
        return xx == 0.0;
    }
    let xy: f64 = x.coords.iter().zip(&y.coords).map(|(a, b)| a * b).sum();
    (xy * xy - xx * yy).abs() <= 1e-12 * xx * yy
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn misclassifications(&self) -> usize {
        self.fp + self.fn_
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub space: SpaceSpec,
    /// Space in which the classifier actually ran (the dual when both
    /// exponents are below 2).
    pub classified_in: SpaceSpec,
    pub dual_reduced: bool,
    pub trials: usize,
    pub seed: u64,
    pub confusion: Confusion,
    pub failures: Vec<DisjointnessVerdict>,
}

/// Samples `trials` pairs (alternating disjoint / overlapping by
/// construction), classifies them, and tallies the confusion matrix.
///
/// Overlapping pairs are tangent-projected so `N'(0) = 0` and the second
/// derivative branch is the one under test; pairs with `N'(0) != 0` count
/// as predicted non-disjoint. When both exponents lie in `(1, 2)` the
/// classification runs on the dual exponents.
pub fn reflects_disjointness_audit(space: SpaceSpec, trials: usize, seed: u64) -> AuditReport {
    let (classified_in, dual_reduced) = audit_space(space);
    let verdicts: Vec<Option<DisjointnessVerdict>> = (0..trials)
        .into_par_iter()
        .map(|t| audit_trial(space, classified_in, seed, t as u64))
        .collect();
    let mut confusion = Confusion::default();
    let mut failures = Vec::new();
    for v in verdicts.into_iter().flatten() {
        let predicted = matches!(v.inferred_disjoint, Some(true));
        match (v.ground_truth_disjoint, predicted) {
            (true, true) => confusion.tp += 1,
            (false, false) => confusion.tn += 1,
            (false, true) => confusion.fp += 1,
            (true, false) => confusion.fn_ += 1,
        }
        if v.ground_truth_disjoint != predicted {
            failures.push(v);
        }
    }
    AuditReport {
        space,
        classified_in,
        dual_reduced,
        trials,
        seed,
        confusion,
        failures,
    }
}

fn audit_space(space: SpaceSpec) -> (SpaceSpec, bool) {
    match space {
        SpaceSpec::Lp { p, .. } if p < 2.0 => (space.dual().expect("lp dual"), true),
        SpaceSpec::LpLq { p, q, .. } if p < 2.0 && q < 2.0 => {
            (space.dual().expect("lplq dual"), true)
        }
        _ => (space, false),
    }
}

fn audit_trial(
    space: SpaceSpec,
    classified_in: SpaceSpec,
    seed: u64,
    trial: u64,
) -> Option<DisjointnessVerdict> {
    let mut rng = sample::trial_rng(seed, trial);
    let make_disjoint = trial % 2 == 0;
    for _ in 0..100 {
        let (x, y) = if make_disjoint {
            sample::random_disjoint_pair(space, &mut rng)
        } else {
            let (x, y0) = sample::random_overlapping_pair(space, &mut rng);
            let y = match sample::tangent_project(&x, &y0) {
                Ok(y) => y,
                Err(_) => continue,
            };
            (x, y)
        };
        // Reinterpret the same coordinates in the classification space.
        let xc = Element {
            space: classified_in,
            coords: x.coords.clone(),
        };
        let yc = Element {
            space: classified_in,
            coords: y.coords.clone(),
        };
        if y.norm() <= 1e-6 {
            continue;
        }
        if !make_disjoint && disjoint(&x, &y).expect("same space") {
            // The tangent projection accidentally produced a disjoint pair.
            continue;
        }
        if let Ok(v) = classify_pair(classified_in, &xc, &yc) {
            return Some(v);
        }
    }
    None
}

/// Clauses of the mixed-case behavior catalogue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CatalogueClause {
    /// Nested, non-disjoint, `N'(0) = 0`: the limit must not be zero.
    B,
    /// Nested and disjoint: `N'(0) = 0` and zero limit.
    C,
    /// Nested with `2 sigma(y(k)) < sigma(x(k))` on `vs(x)`: bounded `N''`.
    D,
    /// `vs(y)` not contained in `vs(x)`: divergent `N''`.
    E,
}

/// Behavior record for one mixed-case pair.
#[derive(Debug, Clone, Serialize)]
pub struct Prop44Record {
    pub labels: Vec<CatalogueClause>,
    /// The disjointness inference is only defined for nested vector
    /// supports; overlapping-but-not-nested pairs are out of catalogue.
    pub in_catalogue: bool,
    pub n_prime_at_0: f64,
    pub limit: LimitClass,
    pub tail_slope: Option<f64>,
    /// Largest finite `N''` over the sampled grids (dyadic and uniform).
    pub max_sampled: f64,
    /// Whether any sampled point was singular or infinite.
    pub hit_singularity: bool,
    /// Numerical behavior matches every assigned label.
    pub matches: bool,
    pub mismatches: Vec<String>,
}

/// Labels a pair according to the mixed-case catalogue and verifies the
/// expected numerical behavior. Requires outer `p` in `(1,2)` and inner
/// `q > 2`.
pub fn prop44_catalogue(space: SpaceSpec, x: &Element, y: &Element) -> Result<Prop44Record> {
    match space {
        SpaceSpec::LpLq { p, q, .. } if p > 1.0 && p < 2.0 && q > 2.0 => {}
        _ => {
            return Err(Error::InvalidSpace(
                "catalogue requires lplq with p in (1,2) and q > 2".into(),
            ))
        }
    }
    if x.space != space || y.space != space {
        return Err(Error::SpaceMismatch(x.space, space));
    }
    if collinear(x, y) {
        return Err(Error::InvalidPair("x lies in span{y}".into()));
    }

    let vs_x = x.vector_support();
    let vs_y = y.vector_support();
    let nested = vs_y.is_subset(&vs_x);
    let disj = disjoint(x, y)?;
    let norm_cond = nested
        && vs_x.iter().all(|&k| {
            2.0 * y.inner_norm(k).expect("in range") < x.inner_norm(k).expect("in range")
        });

    let curve = NormCurve::new(x.clone(), y.clone())?;
    let n_prime_at_0 = curve.n_prime(0.0)?.value;
    let n_prime_zero = n_prime_at_0.abs() <= N_PRIME_ZERO_TOL * y.norm();

    let mut labels = Vec::new();
    if nested && !disj && n_prime_zero {
        labels.push(CatalogueClause::B);
    }
    if nested && disj {
        labels.push(CatalogueClause::C);
    }
    if norm_cond {
        labels.push(CatalogueClause::D);
    }
    if !nested {
        labels.push(CatalogueClause::E);
    }

    let grid = second_derivative_grid(&curve);
    let (limit, tail_slope) = classify_limit(&grid);

    // Uniform sweep of [1/64, 1] for the boundedness clause.
    let mut max_sampled = 0.0f64;
    let mut hit_singularity = false;
    let mut record = |s: &DerivativeValue| {
        if s.value.is_finite() {
            max_sampled = max_sampled.max(s.value);
        }
        if s.singular || s.value.is_infinite() {
            hit_singularity = true;
        }
    };
    for s in &grid {
        record(&s.n_double);
    }
    for j in 1..=64 {
        let alpha = j as f64 / 64.0;
        let v = curve
            .n_double_prime(alpha)
            .unwrap_or_else(|_| DerivativeValue::infinite());
        record(&v);
    }

    let mut mismatches = Vec::new();
    for label in &labels {
        match label {
            CatalogueClause::B => {
                if limit != LimitClass::Nonzero {
                    mismatches.push(format!("clause b expected nonzero limit, got {limit:?}"));
                }
            }
            CatalogueClause::C => {
                if !n_prime_zero {
                    mismatches.push("clause c expected N'(0) = 0".into());
                }
                if limit != LimitClass::Zero {
                    mismatches.push(format!("clause c expected zero limit, got {limit:?}"));
                }
            }
            CatalogueClause::D => {
                if hit_singularity {
                    mismatches.push("clause d expected bounded N'' on the grid".into());
                }
            }
            CatalogueClause::E => {
                if limit != LimitClass::Divergent {
                    mismatches.push(format!("clause e expected divergence, got {limit:?}"));
                }
            }
        }
    }
    let matches = mismatches.is_empty();
    // Overlapping-but-not-nested vector supports fall outside the
    // catalogue's disjointness clauses; only the divergence label applies.
    let vs_overlap = vs_y.iter().any(|k| vs_x.contains(k));
    Ok(Prop44Record {
        labels,
        in_catalogue: nested || !vs_overlap,
        n_prime_at_0,
        limit,
        tail_slope,
        max_sampled,
        hit_singularity,
        matches,
        mismatches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::Element;

    #[test]
    fn plain_l3_disjoint_pair_classifies_disjoint() {
        let s = SpaceSpec::lp(3.0, 3).unwrap();
        let v = classify_pair(s, &Element::basis(s, 0), &Element::basis(s, 1)).unwrap();
        assert_eq!(v.n_double_limit, LimitClass::Zero);
        assert_eq!(v.inferred_disjoint, Some(true));
        assert!(v.ground_truth_disjoint);
    }

    #[test]
    fn plain_l3_overlapping_tangent_pair_classifies_nonzero() {
        // x = (1,1,0)/2^{1/3}, y = (1,-1,0)/2^{1/3}: N'(0) = 0 and the
        // curvature stays bounded away from zero.
        let s = SpaceSpec::lp(3.0, 3).unwrap();
        let scale = 2f64.powf(-1.0 / 3.0);
        let x = Element::new(s, vec![scale, scale, 0.0]).unwrap();
        let y = Element::new(s, vec![scale, -scale, 0.0]).unwrap();
        let v = classify_pair(s, &x, &y).unwrap();
        assert!(v.n_prime_at_0.abs() <= 1e-12);
        assert_eq!(v.n_double_limit, LimitClass::Nonzero);
        assert_eq!(v.inferred_disjoint, Some(false));
        assert!(!v.ground_truth_disjoint);
    }

    #[test]
    fn mixed_space_fails_on_disjoint_blocks() {
        // lplq(1.5, 4): disjoint blocks diverge, so the probe wrongly
        // reports non-disjoint; the mixed space does not reflect
        // disjointness.
        let s = SpaceSpec::lplq(1.5, 4.0, 2, 2).unwrap();
        let v = classify_pair(s, &Element::basis_kj(s, 0, 0), &Element::basis_kj(s, 1, 0))
            .unwrap();
        assert_eq!(v.n_double_limit, LimitClass::Divergent);
        assert_eq!(v.inferred_disjoint, Some(false));
        assert!(v.ground_truth_disjoint);
    }

    #[test]
    fn collinear_pair_rejected() {
        let s = SpaceSpec::lp(3.0, 2).unwrap();
        let x = Element::new(s, vec![1.0, 2.0]).unwrap();
        let y = Element::new(s, vec![-0.5, -1.0]).unwrap();
        assert!(matches!(
            classify_pair(s, &x, &y),
            Err(Error::InvalidPair(_))
        ));
    }

    #[test]
    fn l2_control_sees_round_sphere() {
        let s = SpaceSpec::lp(2.0, 3).unwrap();
        let x = Element::new(s, vec![1.0, 0.0, 0.0]).unwrap();
        let y = Element::new(s, vec![0.0, 1.0, 0.0]).unwrap();
        let v = classify_pair(s, &x, &y).unwrap();
        // Disjoint, but the round sphere has no flat directions.
        assert_eq!(v.n_double_limit, LimitClass::Nonzero);
        assert_eq!(v.inferred_disjoint, Some(false));
    }

    #[test]
    fn unmixed_audits_have_zero_confusion() {
        for space in [
            SpaceSpec::lp(3.0, 5).unwrap(),
            SpaceSpec::lplq(3.0, 4.0, 3, 3).unwrap(),
            SpaceSpec::lplq(2.5, 2.5, 2, 3).unwrap(),
        ] {
            let report = reflects_disjointness_audit(space, 60, 7);
            assert_eq!(
                report.confusion.misclassifications(),
                0,
                "space {space}: {:?}",
                report.confusion
            );
            assert!(!report.dual_reduced);
        }
    }

    #[test]
    fn below_two_exponents_reduce_through_duality() {
        let space = SpaceSpec::lplq(1.5, 1.25, 2, 2).unwrap();
        let report = reflects_disjointness_audit(space, 60, 11);
        assert!(report.dual_reduced);
        assert_eq!(report.classified_in, space.dual().unwrap());
        assert_eq!(report.confusion.misclassifications(), 0);
    }

    #[test]
    fn catalogue_clause_e_diverges_with_rate() {
        let s = SpaceSpec::lplq(1.5, 3.0, 3, 3).unwrap();
        let mut x = Element::zeros(s);
        x.coords[0] = 1.0;
        x.coords[1] = 0.5;
        let mut y = Element::zeros(s);
        y.coords[3] = 0.8; // block 1: outside vs(x)
        y.coords[0] = 0.3;
        let rec = prop44_catalogue(s, &x, &y).unwrap();
        assert!(rec.labels.contains(&CatalogueClause::E));
        assert_eq!(rec.limit, LimitClass::Divergent);
        let slope = rec.tail_slope.unwrap();
        // Divergence rate alpha^{p-2}: slope within 15% of p - 2 = -0.5.
        assert!((slope - (-0.5)).abs() <= 0.15 * 0.5, "slope {slope}");
        assert!(rec.matches, "{:?}", rec.mismatches);
    }

    #[test]
    fn catalogue_clause_c_zero_limit() {
        let s = SpaceSpec::lplq(1.5, 3.0, 2, 3).unwrap();
        let mut x = Element::zeros(s);
        x.coords[0] = 1.0; // (0,0)
        x.coords[3] = 0.7; // (1,0)
        let mut y = Element::zeros(s);
        y.coords[1] = 0.5; // (0,1): same block, disjoint inner support
        let rec = prop44_catalogue(s, &x, &y).unwrap();
        assert!(rec.labels.contains(&CatalogueClause::C));
        assert!(rec.matches, "{:?}", rec.mismatches);
    }

    #[test]
    fn catalogue_rejects_wrong_space() {
        let s = SpaceSpec::lplq(3.0, 4.0, 2, 2).unwrap();
        let x = Element::basis_kj(s, 0, 0);
        let y = Element::basis_kj(s, 1, 0);
        assert!(prop44_catalogue(s, &x, &y).is_err());
    }
}
