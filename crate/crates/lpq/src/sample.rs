//! Seeded random generators for elements, pairs, compliant bases and
//! subspaces. Every generator is deterministic given `(seed, stream)`; the
//! stream index separates parallel trials.

use std::collections::BTreeSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::space::{norming_functional, Element, SpaceSpec};
use crate::subspace::SubspaceBasis;

/// Per-trial RNG: one base seed, one stream per trial.
pub fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform coordinates in `[-1, 1]`.
pub fn random_element(space: SpaceSpec, rng: &mut ChaCha8Rng) -> Element {
    let coords = (0..space.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Element { space, coords }
}

/// Coordinates bounded away from zero: `|c| in [0.2, 1.2]`.
pub fn random_solid_element(space: SpaceSpec, rng: &mut ChaCha8Rng) -> Element {
    let coords = (0..space.dim())
        .map(|_| {
            let mag = rng.gen_range(0.2..1.2);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Element { space, coords }
}

pub fn random_unit(space: SpaceSpec, rng: &mut ChaCha8Rng) -> Element {
    loop {
        let x = random_element(space, rng);
        if x.norm() > 1e-3 {
            return x.normalized().expect("nonzero");
        }
    }
}

/// A disjoint pair built from a random split of the flat indices; both sides
/// nonempty, entries bounded away from zero.
pub fn random_disjoint_pair(space: SpaceSpec, rng: &mut ChaCha8Rng) -> (Element, Element) {
    let dim = space.dim();
    loop {
        let mut to_x = Vec::new();
        let mut to_y = Vec::new();
        for i in 0..dim {
            if rng.gen_bool(0.5) {
                to_x.push(i);
            } else {
                to_y.push(i);
            }
        }
        if to_x.is_empty() || to_y.is_empty() {
            continue;
        }
        let mut x = Element::zeros(space);
        let mut y = Element::zeros(space);
        for &i in &to_x {
            let mag = rng.gen_range(0.2..1.2);
            x.coords[i] = if rng.gen_bool(0.5) { mag } else { -mag };
        }
        for &i in &to_y {
            let mag = rng.gen_range(0.2..1.2);
            y.coords[i] = if rng.gen_bool(0.5) { mag } else { -mag };
        }
        return (x, y);
    }
}

/// An overlapping pair with at least one shared coordinate of solid size.
pub fn random_overlapping_pair(space: SpaceSpec, rng: &mut ChaCha8Rng) -> (Element, Element) {
    let dim = space.dim();
    let mut x = random_element(space, rng);
    let mut y = random_element(space, rng);
    let i = rng.gen_range(0..dim);
    let solid = |rng: &mut ChaCha8Rng| {
        let mag = rng.gen_range(0.3..1.0);
        if rng.gen_bool(0.5) {
            mag
        } else {
            -mag
        }
    };
    x.coords[i] = solid(rng);
    y.coords[i] = solid(rng);
    (x, y)
}

/// Projects `y` onto the tangent space at `x/|x|`, so `N'(0) = 0`.
pub fn tangent_project(x: &Element, y: &Element) -> Result<Element> {
    let f = norming_functional(x)?;
    let along = f.apply(y)? / x.norm();
    y.add_scaled(-along, x)
}

/// Random basis satisfying the structural characterization: classes of
/// vectors that either live on disjoint block sets or share a block set
/// with per-block disjoint inner supports and equal inner norms.
///
/// Needs `n >= 2` for classes of size two or more.
pub fn random_compliant_basis(
    space: SpaceSpec,
    rng: &mut ChaCha8Rng,
    max_vectors: usize,
) -> SubspaceBasis {
    let (m, n) = (space.blocks(), space.inner_dim());
    // Partition a random nonempty subset of blocks into class block-sets.
    let mut blocks: Vec<usize> = (0..m).collect();
    for i in (1..blocks.len()).rev() {
        blocks.swap(i, rng.gen_range(0..=i));
    }
    let used = rng.gen_range(1..=m);
    blocks.truncate(used);

    let mut classes: Vec<Vec<usize>> = Vec::new();
    let mut cur = Vec::new();
    for &b in &blocks {
        cur.push(b);
        if rng.gen_bool(0.5) && !cur.is_empty() {
            classes.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        classes.push(cur);
    }

    let mut vectors: Vec<Element> = Vec::new();
    for class in &classes {
        if vectors.len() >= max_vectors {
            break;
        }
        let budget = max_vectors - vectors.len();
        let r = rng.gen_range(1..=n.min(budget));
        // Common per-block inner norms for the class.
        let t: Vec<f64> = class.iter().map(|_| rng.gen_range(0.4..1.4)).collect();
        // Per block: disjoint inner index groups, one per class member.
        let mut member_coords = vec![vec![0.0; space.dim()]; r];
        for (bi, &k) in class.iter().enumerate() {
            let mut idx: Vec<usize> = (0..n).collect();
            for i in (1..idx.len()).rev() {
                idx.swap(i, rng.gen_range(0..=i));
            }
            // First r inner coordinates go one to each member; the rest are
            // distributed at random.
            let mut groups: Vec<Vec<usize>> = vec![Vec::new(); r];
            for (pos, &j) in idx.iter().enumerate() {
                if pos < r {
                    groups[pos].push(j);
                } else if rng.gen_bool(0.5) {
                    groups[rng.gen_range(0..r)].push(j);
                }
            }
            for (g, group) in groups.iter().enumerate() {
                let mut block = vec![0.0; n];
                for &j in group {
                    let mag = rng.gen_range(0.3..1.0);
                    block[j] = if rng.gen_bool(0.5) { mag } else { -mag };
                }
                let q = space.inner_exponent().unwrap_or(space.outer_exponent());
                let sigma = block.iter().map(|c| c.abs().powf(q)).sum::<f64>().powf(1.0 / q);
                let scale = t[bi] / sigma;
                for &j in group {
                    member_coords[g][space.flat(k, j)] = block[j] * scale;
                }
            }
        }
        for coords in member_coords {
            vectors.push(Element { space, coords });
        }
    }
    SubspaceBasis::new(space, vectors).expect("constructed basis is independent")
}

/// Random spanning set of a `dim`-dimensional subspace.
pub fn random_subspace(space: SpaceSpec, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Element> {
    loop {
        let vectors: Vec<Element> = (0..dim).map(|_| random_element(space, rng)).collect();
        if SubspaceBasis::new(space, vectors.clone()).is_ok() {
            return vectors;
        }
    }
}

/// Random nonempty subset of `0..m`.
pub fn random_block_subset(m: usize, rng: &mut ChaCha8Rng) -> BTreeSet<usize> {
    loop {
        let s: BTreeSet<usize> = (0..m).filter(|_| rng.gen_bool(0.5)).collect();
        if !s.is_empty() {
            return s;
        }
    }
}
