#![allow(dead_code)]

use std::collections::BTreeSet;

use logo_core::dependence::{tau_b_from_counts, DependenceKind, DependenceMatrix};
use logo_core::forest::{CliqueForest, Separator};
use logo_core::observation::ObservationMatrix;
use nalgebra::{DMatrix, DVector};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random chordal clique forest on `p` vertices. Each new vertex attaches
/// to a random subset of a random existing clique; a full subset grows that
/// clique, an empty one starts a new component. Separator sets are never
/// repeated.
pub fn random_forest<R: Rng>(rng: &mut R, p: usize) -> CliqueForest {
    let mut order: Vec<usize> = (0..p).collect();
    order.shuffle(rng);
    let mut cliques: Vec<Vec<usize>> = vec![vec![order[0]]];
    let mut separators: Vec<Separator> = Vec::new();
    let mut used: BTreeSet<Vec<usize>> = BTreeSet::new();
    for &v in &order[1..] {
        loop {
            let c = rng.random_range(0..cliques.len());
            let clique = cliques[c].clone();
            let size = rng.random_range(0..=clique.len());
            let mut subset: Vec<usize> = clique.choose_multiple(rng, size).copied().collect();
            subset.sort_unstable();
            if size == clique.len() {
                cliques[c].push(v);
                break;
            }
            if size == 0 {
                cliques.push(vec![v]);
                break;
            }
            if used.insert(subset.clone()) {
                let mut new = subset.clone();
                new.push(v);
                cliques.push(new);
                separators.push(Separator {
                    vertices: subset,
                    parent: c,
                    child: cliques.len() - 1,
                });
                break;
            }
        }
    }
    let max = cliques.iter().map(Vec::len).max().unwrap();
    CliqueForest::new(p, max, cliques, separators).expect("generated forest is valid")
}

/// Random symmetric positive definite matrix with entries of order one.
pub fn random_spd<R: Rng>(rng: &mut R, p: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(p, p + 2, |_, _| rng.random_range(-1.0..1.0));
    let m = &a * a.transpose() + DMatrix::identity(p, p) * 0.1;
    (&m + m.transpose()) * 0.5
}

pub fn covariance(m: DMatrix<f64>) -> DependenceMatrix {
    let scale = DVector::from_fn(m.nrows(), |i, _| m[(i, i)].sqrt());
    DependenceMatrix::new(DependenceKind::PearsonCovariance, m, scale).unwrap()
}

pub fn dense_log_det(m: &DMatrix<f64>) -> f64 {
    let chol = m.clone().cholesky().expect("positive definite");
    let l = chol.l();
    2.0 * (0..m.nrows()).map(|k| l[(k, k)].ln()).sum::<f64>()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// O(q^2) tau-b from explicit pair counts.
pub fn brute_force_tau_b(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mut s, mut untied_x, mut untied_y) = (0i64, 0i64, 0i64);
    for a in 0..n {
        for b in a + 1..n {
            let dx = (x[a] - x[b]).signum() as i64 * (x[a] != x[b]) as i64;
            let dy = (y[a] - y[b]).signum() as i64 * (y[a] != y[b]) as i64;
            s += dx * dy;
            untied_x += (dx != 0) as i64;
            untied_y += (dy != 0) as i64;
        }
    }
    tau_b_from_counts(s, untied_x, untied_y)
}

pub fn observations(values: DMatrix<f64>) -> ObservationMatrix {
    ObservationMatrix::from_matrix(values).unwrap()
}
