//! Linear operators on a space: contractiveness, semi-band preservation,
//! averaging decompositions, block bases and support-family laws.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::sample;
use crate::space::{norming_functional, Element, Functional, SpaceSpec, SUPPORT_TRUNCATION};

/// Entrywise tolerance for the idempotence defect of a projection.
pub const IDEMPOTENCE_TOL: f64 = 1e-9;

/// Default tolerance on the operator-norm estimate for contractiveness.
pub const CONTRACTIVE_TOL: f64 = 1e-6;

/// Default number of multistart restarts for the norm estimator.
pub const DEFAULT_RESTARTS: usize = 64;

/// A dense linear operator on a space.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionOperator {
    pub space: SpaceSpec,
    pub matrix: DMatrix<f64>,
}

impl Serialize for ProjectionOperator {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("ProjectionOperator", 2)?;
        s.serialize_field("space", &self.space)?;
        let flat: Vec<f64> = (0..self.matrix.nrows())
            .flat_map(|r| (0..self.matrix.ncols()).map(move |c| (r, c)))
            .map(|(r, c)| self.matrix[(r, c)])
            .collect();
        s.serialize_field("matrix", &flat)?;
        s.end()
    }
}

impl ProjectionOperator {
    pub fn new(space: SpaceSpec, matrix: DMatrix<f64>) -> Result<Self> {
        space.validate()?;
        let dim = space.dim();
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: matrix.nrows() * matrix.ncols(),
            });
        }
        Ok(ProjectionOperator { space, matrix })
    }

    pub fn from_row_major(space: SpaceSpec, flat: Vec<f64>) -> Result<Self> {
        let dim = space.dim();
        if flat.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: flat.len(),
            });
        }
        Ok(ProjectionOperator {
            space,
            matrix: DMatrix::from_row_slice(dim, dim, &flat),
        })
    }

    pub fn identity(space: SpaceSpec) -> Self {
        let dim = space.dim();
        ProjectionOperator {
            space,
            matrix: DMatrix::identity(dim, dim),
        }
    }

    pub fn zero(space: SpaceSpec) -> Self {
        let dim = space.dim();
        ProjectionOperator {
            space,
            matrix: DMatrix::zeros(dim, dim),
        }
    }

    /// Coordinate restriction `x -> x . chi_A` for a flat index set.
    pub fn band(space: SpaceSpec, keep: &BTreeSet<usize>) -> Self {
        let dim = space.dim();
        let mut matrix = DMatrix::zeros(dim, dim);
        for &i in keep {
            matrix[(i, i)] = 1.0;
        }
        ProjectionOperator { space, matrix }
    }

    /// Rank-one projection `x -> f(x) u` with `f` the norming functional of
    /// the normalized `u`; contractive by construction.
    pub fn rank_one_aligned(u: &Element) -> Result<Self> {
        let unit = u.normalized()?;
        let f = norming_functional(&unit)?;
        let dim = unit.dim();
        let mut matrix = DMatrix::zeros(dim, dim);
        for r in 0..dim {
            for c in 0..dim {
                matrix[(r, c)] = unit.coords[r] * f.coeffs[c];
            }
        }
        Ok(ProjectionOperator {
            space: u.space,
            matrix,
        })
    }

    /// `Sum_i u_i v_i^T` from averaging pairs.
    pub fn from_pairs(space: SpaceSpec, pairs: &[(Element, Functional)]) -> Result<Self> {
        let dim = space.dim();
        let mut matrix = DMatrix::zeros(dim, dim);
        for (u, v) in pairs {
            if u.space != space || v.space != space {
                return Err(Error::SpaceMismatch(u.space, space));
            }
            for r in 0..dim {
                if u.coords[r] == 0.0 {
                    continue;
                }
                for c in 0..dim {
                    matrix[(r, c)] += u.coords[r] * v.coeffs[c];
                }
            }
        }
        Ok(ProjectionOperator { space, matrix })
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn apply(&self, x: &Element) -> Result<Element> {
        if x.space != self.space {
            return Err(Error::SpaceMismatch(x.space, self.space));
        }
        let v = nalgebra::DVector::from_column_slice(&x.coords);
        let out = &self.matrix * v;
        Ok(Element {
            space: self.space,
            coords: out.iter().copied().collect(),
        })
    }

    /// Column `j` as an element (the image of the j-th basis vector).
    pub fn column(&self, j: usize) -> Element {
        Element {
            space: self.space,
            coords: self.matrix.column(j).iter().copied().collect(),
        }
    }

    /// Entrywise max norm of `P^2 - P`.
    pub fn idempotence_defect(&self) -> f64 {
        let sq = &self.matrix * &self.matrix;
        (sq - &self.matrix).iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_projection(&self, tol: f64) -> bool {
        self.idempotence_defect() <= tol
    }

    /// Rank of an (assumed) projection: `trace(P)` rounded.
    pub fn projection_rank(&self) -> usize {
        self.matrix.trace().round().max(0.0) as usize
    }

    fn columns_with_support(&self) -> Vec<(usize, Element, BTreeSet<usize>)> {
        (0..self.dim())
            .map(|j| {
                let col = self.column(j);
                let supp = col.support_with_tol();
                (j, col, supp)
            })
            .filter(|(_, _, supp)| !supp.is_empty())
            .collect()
    }

    /// Union of `vs(P e_i)` over the coordinate basis: the vector-support
    /// range of the operator.
    pub fn vs_range(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        for (_, col, _) in self.columns_with_support() {
            out.extend(col.vector_support_with_tol());
        }
        out
    }
}

/// Serde helper mirror of the wire format `{space, matrix: row-major}`.
#[derive(serde::Deserialize)]
struct OperatorWire {
    space: SpaceSpec,
    matrix: Vec<f64>,
}

impl<'de> serde::Deserialize<'de> for ProjectionOperator {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        let wire = OperatorWire::deserialize(deserializer)?;
        ProjectionOperator::from_row_major(wire.space, wire.matrix)
            .map_err(serde::de::Error::custom)
    }
}

/// How an operator-norm estimate was certified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NormCertificate {
    Bruteforce,
    Multistart,
}

/// A lower bound on the operator norm with its maximizer.
#[derive(Debug, Clone, Serialize)]
pub struct NormEstimate {
    pub value: f64,
    pub maximizer: Element,
    pub certificate: NormCertificate,
    pub restarts: usize,
}

struct Ascent<'a> {
    op: &'a ProjectionOperator,
}

impl<'a> Ascent<'a> {
    fn ratio(&self, x: &Element) -> f64 {
        let nx = x.norm();
        if nx == 0.0 {
            return 0.0;
        }
        self.op.apply(x).expect("same space").norm() / nx
    }

    /// Renormalized gradient ascent of `|Px|` on the unit sphere.
    fn run(&self, start: &Element) -> (f64, Element) {
        self.run_capped(start, 2000)
    }

    fn run_capped(&self, start: &Element, max_iters: usize) -> (f64, Element) {
        let mut x = match start.normalized() {
            Ok(x) => x,
            Err(_) => return (0.0, start.clone()),
        };
        let mut best = self.ratio(&x);
        let mut step = 0.5;
        let mut stall = 0usize;
        for _ in 0..max_iters {
            let px = self.op.apply(&x).expect("same space");
            let grad = match norming_functional(&px) {
                Ok(f) => {
                    let g = self.op.matrix.transpose()
                        * nalgebra::DVector::from_column_slice(&f.coeffs);
                    Element {
                        space: self.op.space,
                        coords: g.iter().copied().collect(),
                    }
                }
                Err(_) => break,
            };
            let cand = match x.add_scaled(step, &grad) {
                Ok(c) => match c.normalized() {
                    Ok(c) => c,
                    Err(_) => break,
                },
                Err(_) => break,
            };
            let val = self.ratio(&cand);
            if val > best * (1.0 + 1e-16) {
                let improvement = (val - best) / best.max(1e-300);
                x = cand;
                best = val;
                stall = if improvement < 1e-12 { stall + 1 } else { 0 };
            } else {
                step *= 0.5;
                stall += 1;
                if step < 1e-18 {
                    break;
                }
            }
            if stall >= 50 {
                break;
            }
        }
        (best, x)
    }
}

fn brute_force_grid(op: &ProjectionOperator) -> (f64, Element) {
    let dim = op.dim();
    let ascent = Ascent { op };
    let mut best = (0.0f64, Element::zeros(op.space));
    let mut probe = |coords: &[f64]| {
        if coords.iter().all(|&c| c == 0.0) {
            return;
        }
        let x = Element {
            space: op.space,
            coords: coords.to_vec(),
        };
        let v = ascent.ratio(&x);
        if v > best.0 {
            best = (v, x);
        }
    };
    // 41 points per axis on [-1, 1], sign-symmetric.
    let mut coords = vec![0.0; dim];
    fn sweep(
        axis: usize,
        dim: usize,
        center: &[f64],
        half: f64,
        steps: usize,
        coords: &mut Vec<f64>,
        probe: &mut impl FnMut(&[f64]),
    ) {
        if axis == dim {
            probe(coords);
            return;
        }
        for s in 0..steps {
            let t = -1.0 + 2.0 * s as f64 / (steps - 1) as f64;
            coords[axis] = center[axis] + half * t;
            sweep(axis + 1, dim, center, half, steps, coords, probe);
        }
    }
    sweep(0, dim, &vec![0.0; dim], 1.0, 41, &mut coords, &mut probe);
    // Two refinement rounds around the best cell.
    for round in 0..2 {
        let center = best.1.coords.clone();
        let half = 0.05 / 2f64.powi(round);
        sweep(0, dim, &center, half, 9, &mut coords, &mut probe);
    }
    let (_, x) = best.clone();
    let polished = ascent.run(&x);
    if polished.0 > best.0 {
        best = polished;
    }
    best
}

/// Lower bound on `sup |Px| / |x|` by multistart ascent on the unit sphere,
/// with a deterministic brute-force grid certificate at total dimension <= 4.
///
/// Start points: the normalized nonzero columns of `P` first (so idempotent
/// operators always report at least 1), then seeded random directions.
/// Monotone in `restarts`; deterministic given `(restarts, seed)`.
pub fn operator_norm(op: &ProjectionOperator, restarts: usize, seed: u64) -> NormEstimate {
    let ascent = Ascent { op };
    let columns: Vec<Element> = op
        .columns_with_support()
        .into_iter()
        .map(|(_, col, _)| col)
        .collect();
    let results: Vec<(f64, Element)> = (0..restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let start = if r < columns.len() {
                columns[r].clone()
            } else {
                let mut rng = sample::trial_rng(seed, r as u64);
                sample::random_unit(op.space, &mut rng)
            };
            ascent.run(&start)
        })
        .collect();
    let mut best = (0.0f64, Element::zeros(op.space));
    for (v, x) in results {
        if v > best.0 {
            best = (v, x);
        }
    }
    let mut certificate = NormCertificate::Multistart;
    if op.dim() <= 4 {
        certificate = NormCertificate::Bruteforce;
        let grid = brute_force_grid(op);
        if grid.0 > best.0 {
            best = grid;
        }
    }
    // Recompute the value exactly at the maximizer so that
    // |P x*| / |x*| == value up to round-off.
    let value = if best.1.is_zero() {
        0.0
    } else {
        ascent.ratio(&best.1)
    };
    NormEstimate {
        value,
        maximizer: best.1,
        certificate,
        restarts: restarts.max(1),
    }
}

/// One capped ascent run from `start`; used for warm-started inner
/// estimates during the hunt's descent.
pub fn ascend_capped(
    op: &ProjectionOperator,
    start: &Element,
    max_iters: usize,
) -> (f64, Element) {
    Ascent { op }.run_capped(start, max_iters)
}

/// Contractiveness verdict: the estimate is a lower bound, so `false` is a
/// certificate and `true` is evidence graded by the restart count.
pub fn is_contractive(
    op: &ProjectionOperator,
    tol: f64,
    restarts: usize,
    seed: u64,
) -> Result<(bool, NormEstimate)> {
    if !op.is_projection(IDEMPOTENCE_TOL) {
        return Err(Error::NotAProjection(format!(
            "idempotence defect {:.3e} exceeds {IDEMPOTENCE_TOL:.0e}",
            op.idempotence_defect()
        )));
    }
    let estimate = operator_norm(op, restarts, seed);
    Ok((estimate.value <= 1.0 + tol, estimate))
}

/// Witness for a semi-band violation: `P x` and `y` are disjoint but
/// `P x` and `P y` are not.
#[derive(Debug, Clone, Serialize)]
pub struct SemiBandWitness {
    pub x: Element,
    pub y: Element,
}

/// Checks semi-band preservation over the finite sufficient set: `x` over
/// the coordinate basis (so `Px` spans the range columns), `y` over the
/// coordinate vectors disjoint from `Px`.
pub fn semi_band_preserving(op: &ProjectionOperator) -> (bool, Option<SemiBandWitness>) {
    let cols = op.columns_with_support();
    for (j, _, supp_j) in &cols {
        for i in 0..op.dim() {
            if supp_j.contains(&i) {
                continue;
            }
            // e_i is disjoint from P e_j; require P e_i disjoint from P e_j.
            let supp_i = op.column(i).support_with_tol();
            if !supp_i.is_disjoint(supp_j) {
                return (
                    false,
                    Some(SemiBandWitness {
                        x: Element::basis(op.space, *j),
                        y: Element::basis(op.space, i),
                    }),
                );
            }
        }
    }
    (true, None)
}

/// An averaging decomposition `P = sum_i v_i(.) u_i` with mutually disjoint
/// `u_i`, mutually disjoint `v_i`, and `v_i(u_j) = delta_ij`.
#[derive(Debug, Clone, Serialize)]
pub struct AveragingForm {
    pub pairs: Vec<(Element, Functional)>,
}

impl AveragingForm {
    pub fn to_operator(&self, space: SpaceSpec) -> Result<ProjectionOperator> {
        ProjectionOperator::from_pairs(space, &self.pairs)
    }
}

/// Attempts the averaging decomposition of an idempotent operator.
///
/// Range supports are clustered into minimal disjoint blocks via connected
/// components of the column-support overlap graph; each block yields one
/// `(u_i, v_i)` pair. Succeeds iff the reconstruction matches `P` within
/// `tol` entrywise and the disjointness/biorthogonality invariants hold.
pub fn extract_averaging_form(op: &ProjectionOperator, tol: f64) -> Option<AveragingForm> {
    let cols = op.columns_with_support();
    if cols.is_empty() {
        return Some(AveragingForm { pairs: Vec::new() });
    }
    // Union-find over column indices by support overlap.
    let k = cols.len();
    let mut parent: Vec<usize> = (0..k).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let root = find(parent, parent[i]);
            parent[i] = root;
        }
        parent[i]
    }
    for a in 0..k {
        for b in a + 1..k {
            if !cols[a].2.is_disjoint(&cols[b].2) {
                let ra = find(&mut parent, a);
                let rb = find(&mut parent, b);
                parent[ra] = rb;
            }
        }
    }
    let mut components: Vec<Vec<usize>> = Vec::new();
    let mut roots: Vec<usize> = Vec::new();
    for i in 0..k {
        let r = find(&mut parent, i);
        match roots.iter().position(|&x| x == r) {
            Some(pos) => components[pos].push(i),
            None => {
                roots.push(r);
                components.push(vec![i]);
            }
        }
    }

    let mut pairs = Vec::new();
    for comp in &components {
        // Generator: the component column of largest norm (ties: lowest
        // column index, which is the iteration order).
        let (_, gen_col, _) = comp
            .iter()
            .map(|&i| &cols[i])
            .max_by(|a, b| {
                a.1.norm()
                    .partial_cmp(&b.1.norm())
                    .expect("norms are finite")
            })?;
        let u = gen_col.normalized().ok()?;
        // Row functional: read v off the row of the largest coordinate.
        let (row, _) = u
            .coords
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).expect("finite"))?;
        let scale = u.coords[row];
        let coeffs: Vec<f64> = (0..op.dim())
            .map(|c| op.matrix[(row, c)] / scale)
            .collect();
        let v = Functional {
            space: op.space,
            coeffs,
        };
        pairs.push((u, v));
    }

    // Invariants.
    for a in 0..pairs.len() {
        let (ua, va) = &pairs[a];
        if (va.apply(ua).ok()? - 1.0).abs() > 1e-6 {
            return None;
        }
        for b in 0..pairs.len() {
            if a == b {
                continue;
            }
            let (ub, vb) = &pairs[b];
            if !ua.support_with_tol().is_disjoint(&ub.support_with_tol()) {
                return None;
            }
            let va_supp: BTreeSet<usize> = va
                .coeffs
                .iter()
                .enumerate()
                .filter(|(_, c)| c.abs() > SUPPORT_TRUNCATION)
                .map(|(i, _)| i)
                .collect();
            let vb_supp: BTreeSet<usize> = vb
                .coeffs
                .iter()
                .enumerate()
                .filter(|(_, c)| c.abs() > SUPPORT_TRUNCATION)
                .map(|(i, _)| i)
                .collect();
            if !va_supp.is_disjoint(&vb_supp) {
                return None;
            }
            if va.apply(ub).ok()?.abs() > 1e-9 {
                return None;
            }
        }
    }

    // Reconstruction.
    let rebuilt = ProjectionOperator::from_pairs(op.space, &pairs).ok()?;
    let defect = (&rebuilt.matrix - &op.matrix)
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if defect > tol {
        return None;
    }
    Some(AveragingForm { pairs })
}

/// Mutually disjoint basis of the range, when the component decomposition
/// provides one.
pub fn range_block_basis(op: &ProjectionOperator, tol: f64) -> Option<Vec<Element>> {
    let form = extract_averaging_form(op, tol)?;
    let rank = op.projection_rank();
    if form.pairs.len() != rank {
        return None;
    }
    Some(form.pairs.into_iter().map(|(u, _)| u).collect())
}

/// Outcome of a sampled lemma check.
#[derive(Debug, Clone, Serialize)]
pub struct LemmaCheckReport {
    pub trials: usize,
    pub violations: usize,
    /// Trials that could not be generated (degenerate samples).
    pub skipped: usize,
    /// No admissible sample exists (e.g. empty complement).
    pub vacuous: bool,
}

/// Lemma check: if `vs(y) <= vs(Px)` and `sigma(y(k)) <= sigma(Px(k))`,
/// then `vs(Py) <= vs(Px)`.
pub fn support_absorption_check(
    op: &ProjectionOperator,
    trials: usize,
    seed: u64,
) -> LemmaCheckReport {
    let results: Vec<Option<bool>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = sample::trial_rng(seed, t as u64);
            for _ in 0..50 {
                let x = sample::random_element(op.space, &mut rng);
                let px = op.apply(&x).expect("same space");
                if px.norm() <= 1e-9 {
                    continue;
                }
                let a = px.vector_support_with_tol();
                if a.is_empty() {
                    continue;
                }
                let raw = sample::random_element(op.space, &mut rng);
                let mut y = raw.restrict_blocks(&a);
                if y.is_zero() {
                    continue;
                }
                // Per-block rescale to sigma(y(k)) <= sigma(Px(k)).
                let n = op.space.inner_dim();
                for &k in &a {
                    let sy = y.inner_norm(k).expect("in range");
                    if sy == 0.0 {
                        continue;
                    }
                    let spx = px.inner_norm(k).expect("in range");
                    let scale = (0.9 * spx / sy).min(1.0);
                    for j in 0..n {
                        y.coords[k * n + j] *= scale;
                    }
                }
                let py = op.apply(&y).expect("same space");
                let ok = py.vector_support_with_tol().is_subset(&a);
                return Some(ok);
            }
            None
        })
        .collect();
    summarize(results, false)
}

/// Lemma check: `y` supported outside the union of all `vs(Pu)` implies
/// `|Py| <= 1e-6 |y|`.
pub fn annihilation_check(op: &ProjectionOperator, trials: usize, seed: u64) -> LemmaCheckReport {
    let range_blocks = op.vs_range();
    let complement: BTreeSet<usize> = (0..op.space.blocks())
        .filter(|k| !range_blocks.contains(k))
        .collect();
    if complement.is_empty() {
        return LemmaCheckReport {
            trials,
            violations: 0,
            skipped: 0,
            vacuous: true,
        };
    }
    let results: Vec<Option<bool>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = sample::trial_rng(seed, t as u64);
            for _ in 0..50 {
                let y = sample::random_element(op.space, &mut rng).restrict_blocks(&complement);
                if y.norm() <= 1e-9 {
                    continue;
                }
                let py = op.apply(&y).expect("same space");
                return Some(py.norm() <= 1e-6 * y.norm());
            }
            None
        })
        .collect();
    summarize(results, false)
}

fn summarize(results: Vec<Option<bool>>, vacuous: bool) -> LemmaCheckReport {
    let trials = results.len();
    let mut violations = 0;
    let mut skipped = 0;
    for r in results {
        match r {
            Some(true) => {}
            Some(false) => violations += 1,
            None => skipped += 1,
        }
    }
    LemmaCheckReport {
        trials,
        violations,
        skipped,
        vacuous,
    }
}

/// One observed vector support of the range, with a witness pre-image.
#[derive(Debug, Clone, Serialize)]
pub struct SupportSet {
    pub blocks: BTreeSet<usize>,
    pub witness: Element,
}

/// The observed family `Sigma_P = { vs(Pu) }`, closed under the
/// intersection construction `w = (Pu) . chi_{A cap B}`.
#[derive(Debug, Clone, Serialize)]
pub struct SupportFamily {
    pub sets: Vec<SupportSet>,
    pub budget_exhausted: bool,
}

impl SupportFamily {
    pub fn contains(&self, blocks: &BTreeSet<usize>) -> bool {
        self.sets.iter().any(|s| &s.blocks == blocks)
    }

    /// Every pairwise intersection of observed sets is itself observed.
    pub fn is_intersection_closed(&self) -> bool {
        for a in &self.sets {
            for b in &self.sets {
                let inter: BTreeSet<usize> =
                    a.blocks.intersection(&b.blocks).copied().collect();
                if !self.contains(&inter) {
                    return false;
                }
            }
        }
        true
    }

    /// Lemma 4.9(b)-style witnesses: for observed `A`, `B` and
    /// `a in A \ B`, search the family for `D` with `a in D <= A \ B`.
    /// Misses are flagged, never treated as refutations.
    pub fn separation_misses(&self) -> Vec<(BTreeSet<usize>, BTreeSet<usize>, usize)> {
        let mut misses = Vec::new();
        for a in &self.sets {
            for b in &self.sets {
                let diff: BTreeSet<usize> =
                    a.blocks.difference(&b.blocks).copied().collect();
                for &el in &diff {
                    let found = self
                        .sets
                        .iter()
                        .any(|d| d.blocks.contains(&el) && d.blocks.is_subset(&diff));
                    if !found {
                        misses.push((a.blocks.clone(), b.blocks.clone(), el));
                    }
                }
            }
        }
        misses
    }
}

/// Collects `vs(Pu)` over the coordinate basis and over range generators
/// restricted by block indicators (exhaustive for up to 6 range blocks,
/// sampled within `budget` otherwise), then closes under the pairwise
/// intersection construction.
pub fn support_family(op: &ProjectionOperator, budget: usize, seed: u64) -> SupportFamily {
    let mut sets: Vec<SupportSet> = Vec::new();
    let mut ops = 0usize;
    let mut push = |u: Element, op: &ProjectionOperator, sets: &mut Vec<SupportSet>| {
        let pu = op.apply(&u).expect("same space");
        let blocks = pu.vector_support_with_tol();
        if !sets.iter().any(|s| s.blocks == blocks) {
            sets.push(SupportSet { blocks, witness: u });
        }
    };

    for i in 0..op.dim() {
        push(Element::basis(op.space, i), op, &mut sets);
        ops += 1;
    }

    let generators: Vec<Element> = op
        .columns_with_support()
        .into_iter()
        .map(|(_, col, _)| col)
        .collect();
    let range_blocks: Vec<usize> = op.vs_range().into_iter().collect();
    if range_blocks.len() <= 6 {
        for mask in 0..(1usize << range_blocks.len()) {
            let keep: BTreeSet<usize> = range_blocks
                .iter()
                .enumerate()
                .filter(|(bit, _)| mask & (1 << bit) != 0)
                .map(|(_, &k)| k)
                .collect();
            for g in &generators {
                push(g.restrict_blocks(&keep), op, &mut sets);
                ops += 1;
            }
        }
    } else {
        let mut rng = sample::trial_rng(seed, u64::MAX);
        while ops < budget {
            let keep = sample::random_block_subset(op.space.blocks(), &mut rng);
            let g = &generators[rng.gen_range(0..generators.len())];
            push(g.restrict_blocks(&keep), op, &mut sets);
            ops += 1;
        }
    }

    // Closure pass: realize A cap B through w = (P witness_A) chi_{A cap B}.
    let mut exhausted = false;
    loop {
        let mut added = false;
        let snapshot: Vec<(BTreeSet<usize>, Element)> = sets
            .iter()
            .map(|s| (s.blocks.clone(), s.witness.clone()))
            .collect();
        'outer: for (a_blocks, a_witness) in &snapshot {
            for (b_blocks, _) in &snapshot {
                let inter: BTreeSet<usize> =
                    a_blocks.intersection(b_blocks).copied().collect();
                if sets.iter().any(|s| s.blocks == inter) {
                    continue;
                }
                if ops >= budget.max(4096) {
                    exhausted = true;
                    break 'outer;
                }
                let pa = op.apply(a_witness).expect("same space");
                let w = pa.restrict_blocks(&inter);
                push(w, op, &mut sets);
                ops += 1;
                added = true;
            }
        }
        if !added || exhausted {
            break;
        }
    }

    sets.sort_by(|a, b| a.blocks.cmp(&b.blocks));
    SupportFamily {
        sets,
        budget_exhausted: exhausted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn lplq34() -> SpaceSpec {
        SpaceSpec::lplq(3.0, 4.0, 2, 2).unwrap()
    }

    #[test]
    fn identity_norm_is_one() {
        let op = ProjectionOperator::identity(lplq34());
        let est = operator_norm(&op, 8, 1);
        assert_abs_diff_eq!(est.value, 1.0, epsilon = 1e-9);
        assert_eq!(est.certificate, NormCertificate::Bruteforce);
    }

    #[test]
    fn zero_operator_norm_is_zero() {
        let op = ProjectionOperator::zero(lplq34());
        let est = operator_norm(&op, 4, 1);
        assert_eq!(est.value, 0.0);
    }

    #[test]
    fn band_projection_is_contractive() {
        let s = lplq34();
        let op = ProjectionOperator::band(s, &BTreeSet::from([0, 3]));
        let (ok, est) = is_contractive(&op, CONTRACTIVE_TOL, 16, 3).unwrap();
        assert!(ok, "estimate {}", est.value);
        assert_abs_diff_eq!(est.value, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn rank_one_aligned_is_contractive() {
        let s = lplq34();
        let u = Element::new(s, vec![0.8, -0.3, 0.5, 0.2]).unwrap();
        let op = ProjectionOperator::rank_one_aligned(&u).unwrap();
        assert!(op.is_projection(1e-12));
        let (ok, est) = is_contractive(&op, CONTRACTIVE_TOL, 16, 5).unwrap();
        assert!(ok, "estimate {}", est.value);
    }

    #[test]
    fn non_idempotent_rejected() {
        let s = SpaceSpec::lp(3.0, 2).unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let op = ProjectionOperator::new(s, m).unwrap();
        assert!(matches!(
            is_contractive(&op, 1e-6, 4, 1),
            Err(Error::NotAProjection(_))
        ));
    }

    #[test]
    fn norm_estimate_is_sound_lower_bound() {
        let s = SpaceSpec::lp(3.0, 3).unwrap();
        let m = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.4, 0.0, 0.0, 0.0, 0.0, 0.2, 0.0, 1.0],
        );
        let op = ProjectionOperator::new(s, m).unwrap();
        let est = operator_norm(&op, 32, 9);
        let mut rng = sample::trial_rng(99, 0);
        for _ in 0..200 {
            let x = sample::random_unit(op.space, &mut rng);
            let ratio = op.apply(&x).unwrap().norm() / x.norm();
            assert!(est.value >= ratio - 1e-9);
        }
        // The invariant relating value and maximizer.
        let ratio = op.apply(&est.maximizer).unwrap().norm() / est.maximizer.norm();
        assert!((est.value - ratio).abs() <= 1e-12 * (1.0 + ratio));
    }

    #[test]
    fn semi_band_identity_and_violator() {
        let s = SpaceSpec::lp(3.0, 2).unwrap();
        let (ok, _) = semi_band_preserving(&ProjectionOperator::identity(s));
        assert!(ok);
        // T: e1 -> e1, e2 -> e1 is not semi-band preserving.
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        let op = ProjectionOperator::new(s, m).unwrap();
        let (ok, witness) = semi_band_preserving(&op);
        assert!(!ok);
        let w = witness.unwrap();
        assert_eq!(w.x.support(), BTreeSet::from([0]));
        assert_eq!(w.y.support(), BTreeSet::from([1]));
    }

    #[test]
    fn band_projection_averaging_form() {
        let s = lplq34();
        let keep = BTreeSet::from([0, 3]);
        let op = ProjectionOperator::band(s, &keep);
        let form = extract_averaging_form(&op, 1e-9).unwrap();
        assert_eq!(form.pairs.len(), 2);
        let rebuilt = form.to_operator(s).unwrap();
        assert_eq!(rebuilt.matrix, op.matrix);
        let basis = range_block_basis(&op, 1e-9).unwrap();
        assert_eq!(basis.len(), 2);
    }

    #[test]
    fn full_range_block_basis_is_coordinate_basis() {
        let s = SpaceSpec::lp(3.0, 2).unwrap();
        let op = ProjectionOperator::identity(s);
        let basis = range_block_basis(&op, 1e-9).unwrap();
        assert_eq!(basis.len(), 2);
        assert!(basis.iter().all(|u| u.support().len() == 1));
    }

    #[test]
    fn averaging_extraction_accepts_rank_one_and_rejects_mixed_columns() {
        let s = SpaceSpec::lp(3.0, 2).unwrap();
        // Rank-one projections are averaging operators.
        let m = DMatrix::from_row_slice(2, 2, &[2.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0]);
        let op = ProjectionOperator::new(s, m).unwrap();
        assert!(op.is_projection(1e-12));
        assert!(extract_averaging_form(&op, 1e-9).is_some());
        // Rank two with overlapping non-proportional columns is not.
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 0.5]);
        let op = ProjectionOperator::new(s, m).unwrap();
        assert!(op.is_projection(1e-12));
        assert!(extract_averaging_form(&op, 1e-9).is_none());
    }

    #[test]
    fn band_projection_lemma_checks() {
        let s = SpaceSpec::lplq(1.5, 3.0, 3, 2).unwrap();
        let keep = BTreeSet::from([0, 1]); // block 0 only
        let op = ProjectionOperator::band(s, &keep);
        let absorb = support_absorption_check(&op, 50, 2);
        assert_eq!(absorb.violations, 0);
        let annih = annihilation_check(&op, 50, 2);
        assert_eq!(annih.violations, 0);
        assert!(!annih.vacuous);
    }

    #[test]
    fn rank_one_support_family() {
        let s = SpaceSpec::lplq(1.5, 3.0, 3, 2).unwrap();
        // u supported on blocks {0, 1}.
        let u = Element::new(s, vec![0.7, 0.0, 0.0, 0.5, 0.0, 0.0]).unwrap();
        let op = ProjectionOperator::rank_one_aligned(&u).unwrap();
        let family = support_family(&op, 4096, 1);
        assert!(family.is_intersection_closed());
        for set in &family.sets {
            assert!(set.blocks.is_empty() || set.blocks == BTreeSet::from([0, 1]));
        }
    }

    #[test]
    fn operator_serde_round_trip() {
        let op = ProjectionOperator::band(lplq34(), &BTreeSet::from([1]));
        let json = serde_json::to_string(&op).unwrap();
        let back: ProjectionOperator = serde_json::from_str(&json).unwrap();
        assert_eq!(back, op);
        assert!(json.contains("\"matrix\""));
    }
}
