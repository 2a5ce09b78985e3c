//! Space family, elements, supports, norms and norming functionals.
//!
//! Three kinds of finite sequence spaces are supported: plain `l_p^m`, the
//! vector-valued `l_p^m(l_q^n)` with blockwise inner norm, and the sum-norm
//! space with `|x| = |x|_p + |x|_q`. All exponents are restricted to the
//! smooth range `> 1`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative threshold for supports of computed vectors: a coordinate counts
/// as zero when `|c| <= SUPPORT_TRUNCATION * norm(x)`.
pub const SUPPORT_TRUNCATION: f64 = 1e-10;

/// A finite sequence space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SpaceSpec {
    /// Plain `l_p^m`.
    Lp { p: f64, m: usize },
    /// `l_p^m(l_q^n)`: m outer blocks, each measured in `l_q^n`.
    LpLq { p: f64, q: f64, m: usize, n: usize },
    /// `R^m` with `|x| = |x|_p + |x|_q`.
    #[serde(rename = "sumpq")]
    SumPq { p: f64, q: f64, m: usize },
}

impl SpaceSpec {
    pub fn lp(p: f64, m: usize) -> Result<Self> {
        let s = SpaceSpec::Lp { p, m };
        s.validate()?;
        Ok(s)
    }

    pub fn lplq(p: f64, q: f64, m: usize, n: usize) -> Result<Self> {
        let s = SpaceSpec::LpLq { p, q, m, n };
        s.validate()?;
        Ok(s)
    }

    pub fn sumpq(p: f64, q: f64, m: usize) -> Result<Self> {
        let s = SpaceSpec::SumPq { p, q, m };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpace(msg));
        match *self {
            SpaceSpec::Lp { p, m } => {
                if !(p > 1.0) || !p.is_finite() {
                    return bad(format!("exponent p must be finite and > 1, got {p}"));
                }
                if m < 1 {
                    return bad("dimension m must be >= 1".into());
                }
            }
            SpaceSpec::LpLq { p, q, m, n } => {
                if !(p > 1.0) || !p.is_finite() || !(q > 1.0) || !q.is_finite() {
                    return bad(format!("exponents must be finite and > 1, got p={p}, q={q}"));
                }
                if m < 1 || n < 1 {
                    return bad("dimensions m, n must be >= 1".into());
                }
            }
            SpaceSpec::SumPq { p, q, m } => {
                if !(p > 1.0) || !p.is_finite() || !(q > 1.0) || !q.is_finite() {
                    return bad(format!("exponents must be finite and > 1, got p={p}, q={q}"));
                }
                if m < 1 {
                    return bad("dimension m must be >= 1".into());
                }
            }
        }
        Ok(())
    }

    /// Total number of scalar coordinates.
    pub fn dim(&self) -> usize {
        match *self {
            SpaceSpec::Lp { m, .. } => m,
            SpaceSpec::LpLq { m, n, .. } => m * n,
            SpaceSpec::SumPq { m, .. } => m,
        }
    }

    /// Number of outer blocks (= dim for plain and sum-norm spaces).
    pub fn blocks(&self) -> usize {
        match *self {
            SpaceSpec::Lp { m, .. } => m,
            SpaceSpec::LpLq { m, .. } => m,
            SpaceSpec::SumPq { m, .. } => m,
        }
    }

    /// Coordinates per block.
    pub fn inner_dim(&self) -> usize {
        match *self {
            SpaceSpec::LpLq { n, .. } => n,
            _ => 1,
        }
    }

    pub fn outer_exponent(&self) -> f64 {
        match *self {
            SpaceSpec::Lp { p, .. } | SpaceSpec::LpLq { p, .. } | SpaceSpec::SumPq { p, .. } => p,
        }
    }

    pub fn inner_exponent(&self) -> Option<f64> {
        match *self {
            SpaceSpec::LpLq { q, .. } => Some(q),
            _ => None,
        }
    }

    /// Dual space: conjugate exponents, identical dimensions.
    ///
    /// The sum norm is excluded: the dual of `|.|_p + |.|_q` is an infimal
    /// convolution, not another sum norm.
    pub fn dual(&self) -> Result<SpaceSpec> {
        let conj = |r: f64| r / (r - 1.0);
        match *self {
            SpaceSpec::Lp { p, m } => Ok(SpaceSpec::Lp { p: conj(p), m }),
            SpaceSpec::LpLq { p, q, m, n } => Ok(SpaceSpec::LpLq {
                p: conj(p),
                q: conj(q),
                m,
                n,
            }),
            SpaceSpec::SumPq { .. } => Err(Error::Unsupported(
                "dual of the sum norm is not a sum norm".into(),
            )),
        }
    }

    /// Flat index of coordinate `(k, j)` (block `k`, inner position `j`).
    pub fn flat(&self, k: usize, j: usize) -> usize {
        k * self.inner_dim() + j
    }

    /// Block and inner position of a flat index.
    pub fn unflat(&self, i: usize) -> (usize, usize) {
        let n = self.inner_dim();
        (i / n, i % n)
    }
}

impl fmt::Display for SpaceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            SpaceSpec::Lp { p, m } => write!(f, "lp:{p}:{m}"),
            SpaceSpec::LpLq { p, q, m, n } => write!(f, "lplq:{p},{q}:{m}x{n}"),
            SpaceSpec::SumPq { p, q, m } => write!(f, "sumpq:{p},{q}:{m}"),
        }
    }
}

impl FromStr for SpaceSpec {
    type Err = Error;

    /// Parses the command-line syntax `lp:<p>:<n>`, `lplq:<p>,<q>:<m>x<n>`,
    /// `sumpq:<p>,<q>:<n>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidSpace(format!("cannot parse space `{s}`"));
        let mut parts = s.split(':');
        let kind = parts.next().ok_or_else(bad)?;
        let exps = parts.next().ok_or_else(bad)?;
        let dims = parts.next().ok_or_else(bad)?;
        if parts.next().is_some() {
            return Err(bad());
        }
        let parse_f = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
        let parse_u = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
        match kind {
            "lp" => SpaceSpec::lp(parse_f(exps)?, parse_u(dims)?),
            "lplq" => {
                let (pe, qe) = exps.split_once(',').ok_or_else(bad)?;
                let (me, ne) = dims.split_once('x').ok_or_else(bad)?;
                SpaceSpec::lplq(parse_f(pe)?, parse_f(qe)?, parse_u(me)?, parse_u(ne)?)
            }
            "sumpq" => {
                let (pe, qe) = exps.split_once(',').ok_or_else(bad)?;
                SpaceSpec::sumpq(parse_f(pe)?, parse_f(qe)?, parse_u(dims)?)
            }
            _ => Err(bad()),
        }
    }
}

fn lp_norm(coords: &[f64], p: f64) -> f64 {
    coords.iter().map(|c| c.abs().powf(p)).sum::<f64>().powf(1.0 / p)
}

/// A point of a space, with support and vector-support views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub space: SpaceSpec,
    pub coords: Vec<f64>,
}

impl Element {
    pub fn new(space: SpaceSpec, coords: Vec<f64>) -> Result<Self> {
        space.validate()?;
        if coords.len() != space.dim() {
            return Err(Error::DimensionMismatch {
                expected: space.dim(),
                got: coords.len(),
            });
        }
        Ok(Element { space, coords })
    }

    pub fn zeros(space: SpaceSpec) -> Self {
        let dim = space.dim();
        Element {
            space,
            coords: vec![0.0; dim],
        }
    }

    /// Unit basis vector at flat index `i`.
    pub fn basis(space: SpaceSpec, i: usize) -> Self {
        let mut e = Element::zeros(space);
        e.coords[i] = 1.0;
        e
    }

    /// Unit basis vector `e_{kj}` at block `k`, inner position `j`.
    pub fn basis_kj(space: SpaceSpec, k: usize, j: usize) -> Self {
        let i = space.flat(k, j);
        Element::basis(space, i)
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn is_zero(&self) -> bool {
        self.coords.iter().all(|&c| c == 0.0)
    }

    /// Coordinates of block `k`.
    pub fn block(&self, k: usize) -> Result<&[f64]> {
        let m = self.space.blocks();
        if k >= m {
            return Err(Error::BlockOutOfRange { k, m });
        }
        let n = self.space.inner_dim();
        Ok(&self.coords[k * n..(k + 1) * n])
    }

    /// Exact support: flat indices of nonzero coordinates.
    pub fn support(&self) -> BTreeSet<usize> {
        self.coords
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    /// Support of a computed vector, truncated at `1e-10 * norm(x)`.
    pub fn support_with_tol(&self) -> BTreeSet<usize> {
        let tol = SUPPORT_TRUNCATION * self.norm();
        self.coords
            .iter()
            .enumerate()
            .filter(|(_, &c)| c.abs() > tol)
            .map(|(i, _)| i)
            .collect()
    }

    /// Exact vector support: indices of nonzero blocks.
    pub fn vector_support(&self) -> BTreeSet<usize> {
        let n = self.space.inner_dim();
        (0..self.space.blocks())
            .filter(|&k| self.coords[k * n..(k + 1) * n].iter().any(|&c| c != 0.0))
            .collect()
    }

    /// Vector support with the computed-vector truncation.
    pub fn vector_support_with_tol(&self) -> BTreeSet<usize> {
        let tol = SUPPORT_TRUNCATION * self.norm();
        let n = self.space.inner_dim();
        (0..self.space.blocks())
            .filter(|&k| {
                self.coords[k * n..(k + 1) * n]
                    .iter()
                    .any(|&c| c.abs() > tol)
            })
            .collect()
    }

    /// Multiplication by the indicator of a flat-index set.
    pub fn restrict_flat(&self, keep: &BTreeSet<usize>) -> Element {
        let coords = self
            .coords
            .iter()
            .enumerate()
            .map(|(i, &c)| if keep.contains(&i) { c } else { 0.0 })
            .collect();
        Element {
            space: self.space,
            coords,
        }
    }

    /// Multiplication by the indicator of a block set.
    pub fn restrict_blocks(&self, keep: &BTreeSet<usize>) -> Element {
        let n = self.space.inner_dim();
        let coords = self
            .coords
            .iter()
            .enumerate()
            .map(|(i, &c)| if keep.contains(&(i / n)) { c } else { 0.0 })
            .collect();
        Element {
            space: self.space,
            coords,
        }
    }

    pub fn scale(&self, t: f64) -> Element {
        Element {
            space: self.space,
            coords: self.coords.iter().map(|c| t * c).collect(),
        }
    }

    pub fn add(&self, other: &Element) -> Result<Element> {
        self.check_same_space(other)?;
        Ok(Element {
            space: self.space,
            coords: self
                .coords
                .iter()
                .zip(&other.coords)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Element) -> Result<Element> {
        self.check_same_space(other)?;
        Ok(Element {
            space: self.space,
            coords: self
                .coords
                .iter()
                .zip(&other.coords)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    /// x + t*y.
    pub fn add_scaled(&self, t: f64, other: &Element) -> Result<Element> {
        self.check_same_space(other)?;
        Ok(Element {
            space: self.space,
            coords: self
                .coords
                .iter()
                .zip(&other.coords)
                .map(|(a, b)| a + t * b)
                .collect(),
        })
    }

    pub fn check_same_space(&self, other: &Element) -> Result<()> {
        if self.space != other.space {
            return Err(Error::SpaceMismatch(self.space, other.space));
        }
        Ok(())
    }

    /// The space norm.
    pub fn norm(&self) -> f64 {
        match self.space {
            SpaceSpec::Lp { p, .. } => lp_norm(&self.coords, p),
            SpaceSpec::LpLq { p, q, m, n } => {
                let mut acc = 0.0;
                for k in 0..m {
                    let sigma = lp_norm(&self.coords[k * n..(k + 1) * n], q);
                    acc += sigma.powf(p);
                }
                acc.powf(1.0 / p)
            }
            SpaceSpec::SumPq { p, q, .. } => lp_norm(&self.coords, p) + lp_norm(&self.coords, q),
        }
    }

    /// Inner norm `sigma(x(k))` of block `k`.
    pub fn inner_norm(&self, k: usize) -> Result<f64> {
        let block = self.block(k)?;
        match self.space {
            SpaceSpec::LpLq { q, .. } => Ok(lp_norm(block, q)),
            // Single-coordinate blocks: the inner norm is the absolute value.
            _ => Ok(block[0].abs()),
        }
    }

    /// Normalized copy; errors on the zero vector.
    pub fn normalized(&self) -> Result<Element> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::ZeroVector);
        }
        Ok(self.scale(1.0 / n))
    }

    pub fn euclid_norm(&self) -> f64 {
        self.coords.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}

/// `true` iff the exact supports are disjoint.
pub fn disjoint(x: &Element, y: &Element) -> Result<bool> {
    x.check_same_space(y)?;
    Ok(x
        .coords
        .iter()
        .zip(&y.coords)
        .all(|(a, b)| *a == 0.0 || *b == 0.0))
}

/// A linear functional on a space, stored by its coefficients against the
/// coordinate basis. `space` is the predual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Functional {
    pub space: SpaceSpec,
    pub coeffs: Vec<f64>,
}

impl Functional {
    pub fn new(space: SpaceSpec, coeffs: Vec<f64>) -> Result<Self> {
        space.validate()?;
        if coeffs.len() != space.dim() {
            return Err(Error::DimensionMismatch {
                expected: space.dim(),
                got: coeffs.len(),
            });
        }
        Ok(Functional { space, coeffs })
    }

    /// The action `f(x)`.
    pub fn apply(&self, x: &Element) -> Result<f64> {
        if self.space != x.space {
            return Err(Error::SpaceMismatch(self.space, x.space));
        }
        Ok(self
            .coeffs
            .iter()
            .zip(&x.coords)
            .map(|(a, b)| a * b)
            .sum())
    }

    /// Norm of the coefficients in the dual space (conjugate exponents).
    pub fn dual_norm(&self) -> Result<f64> {
        let dual = self.space.dual()?;
        Ok(Element {
            space: dual,
            coords: self.coeffs.clone(),
        }
        .norm())
    }

    pub fn support(&self) -> BTreeSet<usize> {
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn scale(&self, t: f64) -> Functional {
        Functional {
            space: self.space,
            coeffs: self.coeffs.iter().map(|c| t * c).collect(),
        }
    }
}

fn lp_gradient(coords: &[f64], p: f64, norm: f64) -> Vec<f64> {
    let scale = norm.powf(1.0 - p);
    coords
        .iter()
        .map(|&c| scale * c.abs().powf(p - 1.0) * c.signum() * if c == 0.0 { 0.0 } else { 1.0 })
        .collect()
}

/// Norming functional (gradient of the norm) at `x != 0`.
///
/// For `l_p(l_q)` the coefficient at `(k, j)` is
/// `|x|^{1-p} * sigma(x(k))^{p-q} * |x(k)_j|^{q-1} * sign(x(k)_j)`,
/// with vanished blocks contributing zero. Satisfies `f(x) = |x|` and, for
/// the p-sum spaces, dual norm 1.
pub fn norming_functional(x: &Element) -> Result<Functional> {
    if x.is_zero() {
        return Err(Error::ZeroVector);
    }
    let coeffs = match x.space {
        SpaceSpec::Lp { p, .. } => lp_gradient(&x.coords, p, x.norm()),
        SpaceSpec::LpLq { p, q, m, n } => {
            let norm = x.norm();
            let scale = norm.powf(1.0 - p);
            let mut coeffs = vec![0.0; x.dim()];
            for k in 0..m {
                let block = &x.coords[k * n..(k + 1) * n];
                let sigma = lp_norm(block, q);
                if sigma == 0.0 {
                    continue;
                }
                let bscale = scale * sigma.powf(p - q);
                for (j, &c) in block.iter().enumerate() {
                    if c != 0.0 {
                        coeffs[k * n + j] = bscale * c.abs().powf(q - 1.0) * c.signum();
                    }
                }
            }
            coeffs
        }
        SpaceSpec::SumPq { p, q, .. } => {
            let gp = lp_gradient(&x.coords, p, lp_norm(&x.coords, p));
            let gq = lp_gradient(&x.coords, q, lp_norm(&x.coords, q));
            gp.iter().zip(&gq).map(|(a, b)| a + b).collect()
        }
    };
    Functional::new(x.space, coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn lplq34() -> SpaceSpec {
        SpaceSpec::lplq(3.0, 4.0, 2, 2).unwrap()
    }

    #[test]
    fn unit_basis_vector_has_norm_one() {
        let s = lplq34();
        assert_eq!(Element::basis_kj(s, 0, 0).norm(), 1.0);
    }

    #[test]
    fn two_disjoint_unit_blocks() {
        let s = lplq34();
        let x = Element::basis_kj(s, 0, 0)
            .add(&Element::basis_kj(s, 1, 0))
            .unwrap();
        assert_abs_diff_eq!(x.norm(), 2f64.powf(1.0 / 3.0), epsilon = 1e-15);
    }

    #[test]
    fn single_block_reduces_to_inner_norm() {
        let s = SpaceSpec::lplq(4.0, 2.0, 2, 2).unwrap();
        let x = Element::new(s, vec![3.0, 4.0, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(x.norm(), 5.0, epsilon = 1e-15);
    }

    #[test]
    fn inner_norm_basics() {
        let s = lplq34();
        let x = Element::basis_kj(s, 0, 0);
        assert_eq!(x.inner_norm(0).unwrap(), 1.0);
        assert_eq!(x.inner_norm(1).unwrap(), 0.0);
        assert!(x.inner_norm(2).is_err());
        let y = Element::new(s, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(y.inner_norm(0).unwrap(), 2f64.powf(0.25), epsilon = 1e-15);
    }

    #[test]
    fn disjoint_basis_vectors() {
        let s = lplq34();
        let e11 = Element::basis_kj(s, 0, 0);
        let e12 = Element::basis_kj(s, 0, 1);
        // Distinct basis vectors are disjoint even inside the same block.
        assert!(disjoint(&e11, &e12).unwrap());
        assert!(!disjoint(&e11, &e11).unwrap());
        let x = e11.add(&Element::basis_kj(s, 1, 0)).unwrap();
        let y = e12.sub(&Element::basis_kj(s, 1, 1)).unwrap();
        assert!(disjoint(&x, &y).unwrap());
    }

    #[test]
    fn vector_support_empty_iff_zero() {
        let s = lplq34();
        assert!(Element::zeros(s).vector_support().is_empty());
        let x = Element::basis_kj(s, 1, 1);
        assert_eq!(x.vector_support(), BTreeSet::from([1]));
    }

    #[test]
    fn norming_functional_basis_direction() {
        let s = SpaceSpec::lp(3.0, 2).unwrap();
        let x = Element::new(s, vec![1.0, 0.0]).unwrap();
        let f = norming_functional(&x).unwrap();
        assert_eq!(f.coeffs, vec![1.0, 0.0]);
    }

    #[test]
    fn norming_functional_diagonal_direction() {
        // l_3, x = (1,1): f = (2^{-2/3}, 2^{-2/3}) and f(x) = 2^{1/3} = |x|.
        let s = SpaceSpec::lp(3.0, 2).unwrap();
        let x = Element::new(s, vec![1.0, 1.0]).unwrap();
        let f = norming_functional(&x).unwrap();
        let expected = 2f64.powf(-2.0 / 3.0);
        assert_abs_diff_eq!(f.coeffs[0], expected, epsilon = 1e-15);
        assert_abs_diff_eq!(f.coeffs[1], expected, epsilon = 1e-15);
        assert_abs_diff_eq!(f.apply(&x).unwrap(), 2f64.powf(1.0 / 3.0), epsilon = 1e-15);
        // Cross-check each coefficient against a central difference of the norm.
        let h = 1e-6;
        for i in 0..2 {
            let mut up = x.clone();
            up.coords[i] += h;
            let mut dn = x.clone();
            dn.coords[i] -= h;
            let fd = (up.norm() - dn.norm()) / (2.0 * h);
            assert_abs_diff_eq!(f.coeffs[i], fd, epsilon = 1e-9);
        }
    }

    #[test]
    fn norming_functional_rejects_zero() {
        let s = lplq34();
        assert!(matches!(
            norming_functional(&Element::zeros(s)),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn sumpq_norming_functional_attains_norm() {
        let s = SpaceSpec::sumpq(3.0, 4.0, 3).unwrap();
        let x = Element::new(s, vec![0.5, -1.2, 0.3]).unwrap();
        let f = norming_functional(&x).unwrap();
        assert_abs_diff_eq!(f.apply(&x).unwrap(), x.norm(), epsilon = 1e-12);
    }

    #[test]
    fn space_parse_round_trip() {
        for s in [
            "lp:3:5",
            "lplq:3,4:2x2",
            "lplq:1.5,3:3x3",
            "sumpq:3,4:5",
        ] {
            let spec: SpaceSpec = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
        }
        assert!("lp:1:4".parse::<SpaceSpec>().is_err());
        assert!("lplq:3:2x2".parse::<SpaceSpec>().is_err());
        assert!("weird:3:2".parse::<SpaceSpec>().is_err());
    }

    #[test]
    fn dual_exponents_are_conjugate() {
        let s = SpaceSpec::lplq(1.5, 3.0, 3, 3).unwrap();
        if let SpaceSpec::LpLq { p, q, m, n } = s.dual().unwrap() {
            assert_abs_diff_eq!(1.0 / 1.5 + 1.0 / p, 1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(1.0 / 3.0 + 1.0 / q, 1.0, epsilon = 1e-15);
            assert_eq!((m, n), (3, 3));
        } else {
            panic!("dual changed the kind");
        }
        assert!(SpaceSpec::sumpq(3.0, 4.0, 2).unwrap().dual().is_err());
    }

    #[test]
    fn element_json_schema() {
        let s = lplq34();
        let x = Element::new(s, vec![1.0, 0.0, 2.0, 0.0]).unwrap();
        let json = serde_json::to_string(&x).unwrap();
        assert!(json.contains("\"kind\":\"lplq\""));
        let back: Element = serde_json::from_str(&json).unwrap();
        assert_eq!(back, x);
    }

    fn small_coords(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, dim)
    }

    proptest! {
        #[test]
        fn triangle_and_homogeneity(a in small_coords(4), b in small_coords(4), t in -5.0f64..5.0) {
            let s = SpaceSpec::lplq(3.0, 4.0, 2, 2).unwrap();
            let x = Element::new(s, a).unwrap();
            let y = Element::new(s, b).unwrap();
            let lhs = x.add(&y).unwrap().norm();
            let rhs = x.norm() + y.norm();
            prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-300);
            let scaled = x.scale(t).norm();
            prop_assert!((scaled - t.abs() * x.norm()).abs() <= 1e-12 * (1.0 + scaled));
        }

        #[test]
        fn sign_flips_leave_norm_unchanged(a in small_coords(6), mask in 0usize..64) {
            let s = SpaceSpec::lplq(2.5, 3.0, 2, 3).unwrap();
            let x = Element::new(s, a).unwrap();
            let flipped = Element::new(
                s,
                x.coords.iter().enumerate()
                    .map(|(i, &c)| if mask & (1 << i) != 0 { -c } else { c })
                    .collect(),
            ).unwrap();
            // 1-unconditionality is exact, not approximate.
            prop_assert_eq!(x.norm().to_bits(), flipped.norm().to_bits());
        }

        #[test]
        fn dual_pairing(a in small_coords(6)) {
            for spec in [SpaceSpec::lplq(3.0, 4.0, 3, 2).unwrap(), SpaceSpec::lp(2.5, 6).unwrap()] {
                let x = Element::new(spec, a.clone()).unwrap();
                if x.norm() > 1e-6 {
                    let f = norming_functional(&x).unwrap();
                    let dn = f.dual_norm().unwrap();
                    prop_assert!((dn - 1.0).abs() <= 1e-9);
                    prop_assert!((f.apply(&x).unwrap() - x.norm()).abs() <= 1e-12 * (1.0 + x.norm()));
                }
            }
        }

        #[test]
        fn disjoint_blocks_p_sum(a in small_coords(2), b in small_coords(2)) {
            let s = SpaceSpec::lplq(3.0, 4.0, 2, 2).unwrap();
            let x = Element::new(s, vec![a[0], a[1], 0.0, 0.0]).unwrap();
            let y = Element::new(s, vec![0.0, 0.0, b[0], b[1]]).unwrap();
            let p = 3.0;
            let lhs = x.add(&y).unwrap().norm().powf(p);
            let rhs = x.norm().powf(p) + y.norm().powf(p);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs));
        }
    }
}
