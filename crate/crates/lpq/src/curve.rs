//! The norm curve `N(alpha) = |x + alpha y|` and its analytic derivatives.
//!
//! For the p-sum spaces the first and second derivatives of
//! `tau(alpha) = N(alpha)^p` decompose over blocks,
//!
//! ```text
//! tau'  = sum_{k in vs(x) cap vs(y)} p N_k^{p-1} N_k'
//!       + p |a|^{p-1} sign(a) sum_{k in vs(y) \ vs(x)} sigma(y(k))^p
//! tau'' = sum_{k in vs(x) cap vs(y)} ( p(p-1) N_k^{p-2} N_k'^2 + p N_k^{p-1} N_k'' )
//!       + p(p-1) |a|^{p-2} sum_{k in vs(y) \ vs(x)} sigma(y(k))^p
//! ```
//!
//! and `N'`, `N''` are recovered from `tau' = p N^{p-1} N'` and
//! `tau'' = p(p-1) N^{p-2} N'^2 + p N^{p-1} N''`. Divergence (the
//! `|a|^{p-2}` term with `p < 2`, or an inner second derivative blowing up
//! for `q < 2`) is reported in-band as `+inf`, not as an error: it is a
//! classification outcome. The sum norm differentiates componentwise.

use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::space::{disjoint, norming_functional, Element, SpaceSpec};

/// An extended-real derivative value with a singularity flag.
///
/// `singular` is set when the value is `+inf` or when the evaluation point
/// hits a non-differentiability (a block vanishing, or a coordinate zero
/// with sub-quadratic exponent).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeValue {
    pub value: f64,
    pub singular: bool,
}

impl DerivativeValue {
    pub fn finite(value: f64) -> Self {
        DerivativeValue {
            value,
            singular: false,
        }
    }

    pub fn infinite() -> Self {
        DerivativeValue {
            value: f64::INFINITY,
            singular: true,
        }
    }

    pub fn is_infinite(&self) -> bool {
        self.value.is_infinite()
    }
}

impl Serialize for DerivativeValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("DerivativeValue", 2)?;
        if self.value.is_finite() {
            s.serialize_field("value", &self.value)?;
        } else {
            s.serialize_field("value", "inf")?;
        }
        s.serialize_field("singular", &self.singular)?;
        s.end()
    }
}

/// Central difference `(f(x+h) - f(x-h)) / 2h`.
pub fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Second central difference `(f(x+h) - 2 f(x) + f(x-h)) / h^2`.
pub fn central_second_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)
}

/// Least-squares slope of `y` against `x`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

/// Inner norm of a block: absolute value for scalar blocks, `l_q` otherwise.
#[derive(Debug, Clone, Copy)]
enum InnerNorm {
    Abs,
    Lq { q: f64 },
}

impl InnerNorm {
    fn norm(&self, z: &[f64]) -> f64 {
        match *self {
            InnerNorm::Abs => z[0].abs(),
            InnerNorm::Lq { q } => z.iter().map(|c| c.abs().powf(q)).sum::<f64>().powf(1.0 / q),
        }
    }

    /// Directional derivative of the inner norm at `z != 0` in direction `h`.
    fn dderiv(&self, z: &[f64], h: &[f64]) -> f64 {
        match *self {
            InnerNorm::Abs => z[0].signum() * h[0],
            InnerNorm::Lq { q } => {
                let sigma = self.norm(z);
                let mut acc = 0.0;
                for (&zj, &hj) in z.iter().zip(h) {
                    if zj != 0.0 {
                        acc += zj.abs().powf(q - 1.0) * zj.signum() * hj;
                    }
                }
                sigma.powf(1.0 - q) * acc
            }
        }
    }

    /// Second directional derivative `D^2 sigma(z)(h, h)` at `z != 0`.
    fn second(&self, z: &[f64], h: &[f64]) -> DerivativeValue {
        match *self {
            InnerNorm::Abs => DerivativeValue::finite(0.0),
            InnerNorm::Lq { q } => {
                let t: f64 = z.iter().map(|c| c.abs().powf(q)).sum();
                let mut quad = 0.0;
                let mut cross = 0.0;
                for (&zj, &hj) in z.iter().zip(h) {
                    if zj == 0.0 {
                        if hj != 0.0 && q < 2.0 {
                            return DerivativeValue::infinite();
                        }
                        continue;
                    }
                    let w = zj.abs().powf(q - 2.0);
                    quad += w * hj * hj;
                    cross += w * zj * hj;
                }
                let value = (q - 1.0) * t.powf(1.0 / q - 1.0) * (quad - cross * cross / t);
                DerivativeValue::finite(value)
            }
        }
    }
}

/// Second derivative of the inner `l_q` norm at `z` in direction `h`:
/// `(q-1) T^{1/q-1} [ sum |z_j|^{q-2} h_j^2 - T^{-1} (sum |z_j|^{q-2} z_j h_j)^2 ]`
/// with `T = sum |z_j|^q`; `+inf` when `q < 2` and a zero coordinate of `z`
/// meets a nonzero coordinate of `h`.
pub fn inner_second_derivative(z: &[f64], h: &[f64], q: f64) -> Result<DerivativeValue> {
    if z.iter().all(|&c| c == 0.0) {
        return Err(Error::DegeneratePoint("inner norm at zero block".into()));
    }
    if z.len() != h.len() {
        return Err(Error::DimensionMismatch {
            expected: z.len(),
            got: h.len(),
        });
    }
    Ok(InnerNorm::Lq { q }.second(z, h))
}

struct PsumStructure {
    p: f64,
    inner: InnerNorm,
    n: usize,
    /// Blocks in `vs(x) cap vs(y)`.
    both: Vec<usize>,
    /// Blocks in `vs(y) \ vs(x)`.
    only_y: Vec<usize>,
    /// `sum_{k in vs(y) \ vs(x)} sigma(y(k))^p`.
    outside_mass: f64,
}

impl PsumStructure {
    fn new(p: f64, inner: InnerNorm, n: usize, x: &Element, y: &Element) -> Self {
        let vs_x = x.vector_support();
        let vs_y = y.vector_support();
        let both = vs_x.intersection(&vs_y).copied().collect();
        let only_y: Vec<usize> = vs_y.difference(&vs_x).copied().collect();
        let outside_mass = only_y
            .iter()
            .map(|&k| inner.norm(&y.coords[k * n..(k + 1) * n]).powf(p))
            .sum();
        PsumStructure {
            p,
            inner,
            n,
            both,
            only_y,
            outside_mass,
        }
    }

    fn tau(&self, x: &Element, y: &Element, alpha: f64) -> f64 {
        let mut acc = 0.0;
        let n = self.n;
        for k in x.vector_support().union(&y.vector_support()) {
            let z: Vec<f64> = x.coords[k * n..(k + 1) * n]
                .iter()
                .zip(&y.coords[k * n..(k + 1) * n])
                .map(|(a, b)| a + alpha * b)
                .collect();
            acc += self.inner.norm(&z).powf(self.p);
        }
        acc
    }

    fn tau_prime(&self, x: &Element, y: &Element, alpha: f64) -> DerivativeValue {
        let p = self.p;
        let n = self.n;
        let mut acc = 0.0;
        let mut singular = false;
        for &k in &self.both {
            let h = &y.coords[k * n..(k + 1) * n];
            let z: Vec<f64> = x.coords[k * n..(k + 1) * n]
                .iter()
                .zip(h)
                .map(|(a, b)| a + alpha * b)
                .collect();
            let nk = self.inner.norm(&z);
            if nk == 0.0 {
                // The block collapses at this alpha: N_k has a cusp but
                // N_k^p stays C^1 with derivative 0 there.
                singular = true;
                continue;
            }
            acc += p * nk.powf(p - 1.0) * self.inner.dderiv(&z, h);
        }
        if !self.only_y.is_empty() {
            acc += p * alpha.abs().powf(p - 1.0) * alpha.signum() * self.outside_mass;
        }
        DerivativeValue {
            value: acc,
            singular,
        }
    }

    fn tau_double_prime(&self, x: &Element, y: &Element, alpha: f64) -> DerivativeValue {
        let p = self.p;
        let n = self.n;
        let mut acc = 0.0;
        let mut singular = false;
        for &k in &self.both {
            let h = &y.coords[k * n..(k + 1) * n];
            let z: Vec<f64> = x.coords[k * n..(k + 1) * n]
                .iter()
                .zip(h)
                .map(|(a, b)| a + alpha * b)
                .collect();
            let nk = self.inner.norm(&z);
            if nk == 0.0 {
                singular = true;
                let sig_h = self.inner.norm(h);
                let term = p * (p - 1.0) * 0f64.powf(p - 2.0) * sig_h.powf(p);
                if term.is_infinite() {
                    return DerivativeValue::infinite();
                }
                acc += term;
                continue;
            }
            let nk_prime = self.inner.dderiv(&z, h);
            let nk_second = self.inner.second(&z, h);
            if nk_second.is_infinite() {
                return DerivativeValue::infinite();
            }
            singular |= nk_second.singular;
            acc += p * (p - 1.0) * nk.powf(p - 2.0) * nk_prime * nk_prime
                + p * nk.powf(p - 1.0) * nk_second.value;
        }
        if !self.only_y.is_empty() {
            let term = p * (p - 1.0) * alpha.abs().powf(p - 2.0) * self.outside_mass;
            if term.is_infinite() {
                return DerivativeValue::infinite();
            }
            if alpha == 0.0 {
                singular = true;
            }
            acc += term;
        }
        DerivativeValue {
            value: acc,
            singular,
        }
    }
}

enum CurveKind {
    /// Plain `l_p` and `l_p(l_q)`: a single p-sum.
    Psum(PsumStructure),
    /// Sum norm: two plain p-sums sharing the coordinates.
    SumOfTwo(PsumStructure, PsumStructure),
}

/// Evaluator for `N(alpha) = |x + alpha y|` with analytic derivatives.
///
/// The block structure (vector supports and the outside mass
/// `sigma(y(k))^p` sums) is cached at construction; evaluation is read-only
/// afterwards.
pub struct NormCurve {
    x: Element,
    y: Element,
    kind: CurveKind,
}

impl NormCurve {
    pub fn new(x: Element, y: Element) -> Result<Self> {
        x.check_same_space(&y)?;
        let kind = match x.space {
            SpaceSpec::Lp { p, .. } => {
                CurveKind::Psum(PsumStructure::new(p, InnerNorm::Abs, 1, &x, &y))
            }
            SpaceSpec::LpLq { p, q, n, .. } => {
                CurveKind::Psum(PsumStructure::new(p, InnerNorm::Lq { q }, n, &x, &y))
            }
            SpaceSpec::SumPq { p, q, .. } => CurveKind::SumOfTwo(
                PsumStructure::new(p, InnerNorm::Abs, 1, &x, &y),
                PsumStructure::new(q, InnerNorm::Abs, 1, &x, &y),
            ),
        };
        Ok(NormCurve { x, y, kind })
    }

    pub fn x(&self) -> &Element {
        &self.x
    }

    pub fn y(&self) -> &Element {
        &self.y
    }

    /// `N(alpha) = |x + alpha y|`.
    pub fn eval(&self, alpha: f64) -> f64 {
        self.x.add_scaled(alpha, &self.y).expect("same space").norm()
    }

    /// `tau(alpha) = N(alpha)^p` for the p-sum spaces.
    pub fn tau(&self, alpha: f64) -> Result<f64> {
        match &self.kind {
            CurveKind::Psum(s) => Ok(s.tau(&self.x, &self.y, alpha)),
            CurveKind::SumOfTwo(..) => Err(Error::Unsupported(
                "tau is defined for the p-sum spaces only".into(),
            )),
        }
    }

    pub fn tau_prime(&self, alpha: f64) -> Result<DerivativeValue> {
        match &self.kind {
            CurveKind::Psum(s) => Ok(s.tau_prime(&self.x, &self.y, alpha)),
            CurveKind::SumOfTwo(..) => Err(Error::Unsupported(
                "tau is defined for the p-sum spaces only".into(),
            )),
        }
    }

    pub fn tau_double_prime(&self, alpha: f64) -> Result<DerivativeValue> {
        match &self.kind {
            CurveKind::Psum(s) => Ok(s.tau_double_prime(&self.x, &self.y, alpha)),
            CurveKind::SumOfTwo(..) => Err(Error::Unsupported(
                "tau is defined for the p-sum spaces only".into(),
            )),
        }
    }

    /// `N'(alpha)`, solved from `tau' = p N^{p-1} N'`.
    pub fn n_prime(&self, alpha: f64) -> Result<DerivativeValue> {
        match &self.kind {
            CurveKind::Psum(s) => psum_n_prime(s, &self.x, &self.y, alpha),
            CurveKind::SumOfTwo(a, b) => {
                let da = psum_n_prime(a, &self.x, &self.y, alpha)?;
                let db = psum_n_prime(b, &self.x, &self.y, alpha)?;
                Ok(DerivativeValue {
                    value: da.value + db.value,
                    singular: da.singular || db.singular,
                })
            }
        }
    }

    /// `N''(alpha)`, solved from `tau'' = p(p-1) N^{p-2} N'^2 + p N^{p-1} N''`.
    /// Divergence propagates as `+inf`.
    pub fn n_double_prime(&self, alpha: f64) -> Result<DerivativeValue> {
        match &self.kind {
            CurveKind::Psum(s) => psum_n_double_prime(s, &self.x, &self.y, alpha),
            CurveKind::SumOfTwo(a, b) => {
                let da = psum_n_double_prime(a, &self.x, &self.y, alpha)?;
                let db = psum_n_double_prime(b, &self.x, &self.y, alpha)?;
                if da.is_infinite() || db.is_infinite() {
                    return Ok(DerivativeValue::infinite());
                }
                Ok(DerivativeValue {
                    value: da.value + db.value,
                    singular: da.singular || db.singular,
                })
            }
        }
    }
}

fn psum_n_prime(
    s: &PsumStructure,
    x: &Element,
    y: &Element,
    alpha: f64,
) -> Result<DerivativeValue> {
    let tau = s.tau(x, y, alpha);
    let nval = tau.powf(1.0 / s.p);
    if nval == 0.0 {
        return Err(Error::DegeneratePoint("N(alpha) = 0".into()));
    }
    let tp = s.tau_prime(x, y, alpha);
    Ok(DerivativeValue {
        value: tp.value / (s.p * nval.powf(s.p - 1.0)),
        singular: tp.singular,
    })
}

fn psum_n_double_prime(
    s: &PsumStructure,
    x: &Element,
    y: &Element,
    alpha: f64,
) -> Result<DerivativeValue> {
    let tau = s.tau(x, y, alpha);
    let nval = tau.powf(1.0 / s.p);
    if nval == 0.0 {
        return Err(Error::DegeneratePoint("N(alpha) = 0".into()));
    }
    let tpp = s.tau_double_prime(x, y, alpha);
    if tpp.is_infinite() {
        return Ok(DerivativeValue::infinite());
    }
    let np = psum_n_prime(s, x, y, alpha)?;
    let p = s.p;
    let value = (tpp.value - p * (p - 1.0) * nval.powf(p - 2.0) * np.value * np.value)
        / (p * nval.powf(p - 1.0));
    Ok(DerivativeValue {
        value,
        singular: tpp.singular || np.singular,
    })
}

/// Normal curvature of the unit sphere at `x` in the tangent direction `y`:
/// `kappa = N''_{xy}(0) / |grad rho(x)|_2`.
#[derive(Debug, Clone, Serialize)]
pub struct CurvatureReport {
    /// The base point, normalized to the unit sphere.
    pub x: Element,
    /// The direction after tangent projection and normalization.
    pub y: Element,
    pub kappa: DerivativeValue,
    /// Euclidean norm of the norm gradient at `x`.
    pub grad_euclid_norm: f64,
    /// Exact-support disjointness of the projected pair.
    pub disjoint: bool,
}

/// Computes the curvature report, projecting `y` onto the tangent space at
/// `x/|x|` (Gram-Schmidt against the norming functional) and normalizing.
pub fn curvature(x: &Element, y: &Element) -> Result<CurvatureReport> {
    x.check_same_space(y)?;
    let xhat = x.normalized().map_err(|_| Error::DegeneratePoint("x = 0".into()))?;
    let f = norming_functional(&xhat)?;
    let along = f.apply(y)?;
    let tangent = y.add_scaled(-along, &xhat)?;
    let tnorm = tangent.norm();
    if tnorm <= 1e-12 * y.norm() {
        return Err(Error::DegeneratePoint(
            "direction is collinear with x after tangent projection".into(),
        ));
    }
    let yhat = tangent.scale(1.0 / tnorm);
    let curve = NormCurve::new(xhat.clone(), yhat.clone())?;
    let npp = curve.n_double_prime(0.0)?;
    let grad = Functional {
        space: f.space,
        coeffs: f.coeffs.clone(),
    };
    let grad_euclid: f64 = grad.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
    let kappa = if npp.is_infinite() {
        DerivativeValue::infinite()
    } else {
        DerivativeValue {
            value: npp.value / grad_euclid,
            singular: npp.singular,
        }
    };
    let disj = disjoint(&xhat, &yhat)?;
    Ok(CurvatureReport {
        x: xhat,
        y: yhat,
        kappa,
        grad_euclid_norm: grad_euclid,
        disjoint: disj,
    })
}

use crate::space::Functional;

/// Number of intervals of the probe grid on `[0, 1]`.
pub const LEMMA35_GRID: usize = 1 << 12;

/// A convex curve sampled on the uniform grid `j / 4096`, `j = 0..=4096`.
#[derive(Debug, Clone)]
pub struct SampledCurve {
    pub values: Vec<f64>,
}

impl SampledCurve {
    pub fn from_fn(f: impl Fn(f64) -> f64) -> Self {
        let step = 1.0 / LEMMA35_GRID as f64;
        SampledCurve {
            values: (0..=LEMMA35_GRID).map(|j| f(j as f64 * step)).collect(),
        }
    }

    fn step() -> f64 {
        1.0 / LEMMA35_GRID as f64
    }

    /// One-sided derivative at 0, second order:
    /// `(-3 f(0) + 4 f(h) - f(2h)) / 2h`.
    fn right_derivative_at_zero(&self) -> f64 {
        let h = Self::step();
        (-3.0 * self.values[0] + 4.0 * self.values[1] - self.values[2]) / (2.0 * h)
    }

    /// Grid second derivative at interior index `j`.
    fn second_at(&self, j: usize) -> f64 {
        let h = Self::step();
        (self.values[j + 1] - 2.0 * self.values[j] + self.values[j - 1]) / (h * h)
    }
}

/// Diagnostics for a convex pair `phi <= psi` with `phi(0) = psi(0)`.
#[derive(Debug, Clone, Serialize)]
pub struct Lemma35Report {
    /// |one-sided phi'(0) - one-sided psi'(0)|.
    pub derivative_gap: f64,
    /// For each dyadic interval `(0, 2^-d)`, the fraction of interior grid
    /// points where the second difference of phi is <= that of psi.
    pub dyadic_fractions: Vec<(f64, f64)>,
    /// Whether the grid second derivative of phi diverges at 0 (power-law
    /// growth toward the origin).
    pub phi_diverges: bool,
    /// Bound used for the boundedness fraction, half the grid sup of psi''.
    pub c_used: Option<f64>,
    /// Fraction of `[0, 1]` where psi'' <= c_used; meaningful when phi
    /// diverges (must then be < 1).
    pub psi_fraction_below_c: Option<f64>,
}

/// Compares second-difference behavior of two sampled convex curves.
///
/// Preconditions: `phi(0) = psi(0)`, `phi <= psi` on the grid, both convex
/// on the grid; violations yield an invalid-pair error.
pub fn lemma35_probe(phi: &SampledCurve, psi: &SampledCurve) -> Result<Lemma35Report> {
    let n = LEMMA35_GRID;
    if phi.values.len() != n + 1 || psi.values.len() != n + 1 {
        return Err(Error::InvalidPair("curves must use the probe grid".into()));
    }
    let scale = phi
        .values
        .iter()
        .chain(&psi.values)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if (phi.values[0] - psi.values[0]).abs() > 1e-9 * (1.0 + scale) {
        return Err(Error::InvalidPair("phi(0) != psi(0)".into()));
    }
    for j in 0..=n {
        if phi.values[j] > psi.values[j] + 1e-10 * (1.0 + scale) {
            return Err(Error::InvalidPair("phi > psi on the grid".into()));
        }
    }
    // Grid second differences carry round-off of order eps * scale / h^2.
    for c in [phi, psi] {
        for j in 1..n {
            if c.second_at(j) < -1e-6 * (1.0 + scale) {
                return Err(Error::InvalidPair("curve is not convex on the grid".into()));
            }
        }
    }

    let derivative_gap =
        (phi.right_derivative_at_zero() - psi.right_derivative_at_zero()).abs();

    let mut dyadic_fractions = Vec::new();
    for d in 0..=9 {
        let upper = n >> d;
        let idx = 1..upper.min(n);
        let count = idx.len();
        if count == 0 {
            break;
        }
        let good = idx
            .filter(|&j| phi.second_at(j) <= psi.second_at(j) + 1e-9 * (1.0 + scale))
            .count();
        dyadic_fractions.push(((upper as f64) / n as f64, good as f64 / count as f64));
    }

    // Divergence of phi'' at 0: log-log slope of the grid second derivative
    // over the first dyadic points.
    let probe_idx = [1usize, 2, 4, 8, 16, 32, 64];
    let mut ln_a = Vec::new();
    let mut ln_v = Vec::new();
    for &j in &probe_idx {
        let v = phi.second_at(j);
        if v > 0.0 {
            ln_a.push((j as f64 / n as f64).ln());
            ln_v.push(v.ln());
        }
    }
    let phi_diverges = ln_a.len() >= 4 && ls_slope(&ln_a, &ln_v) <= -0.25;

    let (c_used, psi_fraction_below_c) = if phi_diverges {
        let sup = (1..n).map(|j| psi.second_at(j)).fold(f64::MIN, f64::max);
        let c = 0.5 * sup;
        let below = (1..n).filter(|&j| psi.second_at(j) <= c).count();
        (Some(c), Some(below as f64 / (n - 1) as f64))
    } else {
        (None, None)
    };

    Ok(Lemma35Report {
        derivative_gap,
        dyadic_fractions,
        phi_diverges,
        c_used,
        psi_fraction_below_c,
    })
}
