//! Seeded instance generators for the solver benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scfo_core::fj::fj_form;
use scfo_core::linalg::dot;
use scfo_core::{BoxBounds, DecisionVector, HalfspaceSet};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `rows` random halfspaces on the unit box in `n` dimensions. Every row
/// keeps the box centre feasible with a margin, so the set is nonempty.
pub fn halfspaces(rng: &mut ChaCha8Rng, n: usize, rows: usize) -> HalfspaceSet {
    let centre = vec![0.5; n];
    let anchor: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let rel: Vec<f64> = centre.iter().zip(&anchor).map(|(c, a)| c - a).collect();
    let mut normals = Vec::with_capacity(rows);
    let mut offsets = Vec::with_capacity(rows);
    while normals.len() < rows {
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if dot(&a, &a) < 1e-2 {
            continue;
        }
        offsets.push(dot(&a, &rel) + rng.gen_range(0.05..0.5));
        normals.push(a);
    }
    let bounds = BoxBounds::new(vec![0.0; n], vec![1.0; n]).expect("unit box");
    HalfspaceSet::new(normals, offsets, DecisionVector::new(anchor).expect("finite"), bounds)
        .expect("valid rows")
}

/// Target point drawn from a region larger than the unit box.
pub fn target(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..2.0)).collect()
}

/// Row-major FJ quadratic form with `d` multipliers in `n_u` dimensions.
pub fn fj_matrix(rng: &mut ChaCha8Rng, n_u: usize, d: usize) -> Vec<f64> {
    let cols: Vec<Vec<f64>> = (0..d)
        .map(|_| (0..n_u).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let s: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..0.0)).collect();
    fj_form(&cols, &s)
}
