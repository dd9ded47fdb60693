//! Maximally filtered clique forest construction.
//!
//! Vertices are added one at a time. Each new vertex forms a clique with the
//! best-scoring separator taken from an existing clique; the score is the sum
//! of squared correlations between the vertex and the separator members.
//! Separators are used at most once and all cliques reach the maximum size.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dependence::DependenceMatrix;
use crate::error::{Error, Result};
use crate::forest::{CliqueForest, Separator};

/// Smallest clique the builder emits (an edge).
pub const MIN_CLIQUE_SIZE: usize = 2;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainFunction {
    #[default]
    SumSquaredCorrelation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub max_clique_size: usize,
    #[serde(default)]
    pub gain: GainFunction,
}

impl BuildConfig {
    pub fn new(max_clique_size: usize) -> Self {
        Self {
            max_clique_size,
            gain: GainFunction::SumSquaredCorrelation,
        }
    }
}

/// `sum_{u in sep} corr(v, u)^2`, summed in the order of `sep`.
pub fn gain(v: usize, sep: &[usize], corr: &DependenceMatrix) -> f64 {
    debug_assert!(!sep.contains(&v));
    sep.iter().map(|&u| corr.get(v, u).powi(2)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainEntry {
    pub subset: Vec<usize>,
    pub gain: f64,
}

/// Best available separator per (outside vertex, clique).
#[derive(Debug, Clone, Default)]
pub struct GainTable {
    entries: BTreeMap<(usize, usize), GainEntry>,
}

impl GainTable {
    pub fn get(&self, vertex: usize, clique: usize) -> Option<&GainEntry> {
        self.entries.get(&(vertex, clique))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize), &GainEntry)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn refresh(
        &mut self,
        vertex: usize,
        clique_id: usize,
        clique: &[usize],
        sep_size: usize,
        used: &BTreeSet<Vec<usize>>,
        corr: &DependenceMatrix,
    ) {
        match best_separator(vertex, clique, sep_size, used, corr) {
            Some(entry) => {
                self.entries.insert((vertex, clique_id), entry);
            }
            None => {
                self.entries.remove(&(vertex, clique_id));
            }
        }
    }

    /// Highest gain, ties to the smallest (vertex, clique, subset).
    fn best(&self) -> Option<((usize, usize), &GainEntry)> {
        let mut best: Option<((usize, usize), &GainEntry)> = None;
        for (&key, entry) in &self.entries {
            match best {
                Some((_, b)) if entry.gain <= b.gain => {}
                _ => best = Some((key, entry)),
            }
        }
        best
    }
}

/// Highest-gain unused subset of `clique` of size `sep_size`. Cliques hold
/// at most `sep_size + 1` vertices, so candidates are the clique itself or
/// the clique minus one vertex.
fn best_separator(
    v: usize,
    clique: &[usize],
    sep_size: usize,
    used: &BTreeSet<Vec<usize>>,
    corr: &DependenceMatrix,
) -> Option<GainEntry> {
    let candidates: Vec<Vec<usize>> = if clique.len() <= sep_size {
        vec![clique.to_vec()]
    } else {
        assert_eq!(
            clique.len(),
            sep_size + 1,
            "builder cliques exceed the maximum size"
        );
        (0..clique.len())
            .map(|drop| {
                clique
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != drop)
                    .map(|(_, &u)| u)
                    .collect()
            })
            .collect()
    };
    candidates
        .into_iter()
        .filter(|s| !used.contains(s))
        .map(|subset| {
            let g = gain(v, &subset, corr);
            GainEntry { subset, gain: g }
        })
        .fold(None, |best: Option<GainEntry>, cand| match best {
            Some(b) if cand.gain < b.gain || (cand.gain == b.gain && cand.subset >= b.subset) => {
                Some(b)
            }
            _ => Some(cand),
        })
}

/// Learns a clique forest from a correlation matrix.
pub fn build_mfcf(corr: &DependenceMatrix, cfg: &BuildConfig) -> Result<CliqueForest> {
    if !corr.kind().is_correlation() {
        return Err(Error::Config(
            "the network is learned from a correlation matrix".into(),
        ));
    }
    let p = corr.p();
    let r = cfg.max_clique_size;
    if p < 2 {
        return Err(Error::Config(format!("need at least 2 variables, got {p}")));
    }
    if r < MIN_CLIQUE_SIZE {
        return Err(Error::Config(format!(
            "max clique size must be at least {MIN_CLIQUE_SIZE}, got {r}"
        )));
    }
    if r > p {
        return Err(Error::Config(format!(
            "max clique size {r} exceeds the number of variables {p}"
        )));
    }

    // Seed: strongest pair, grown greedily to size r.
    let mut seed_pair = (0, 1);
    let mut seed_gain = f64::NEG_INFINITY;
    for a in 0..p {
        for b in a + 1..p {
            let g = corr.get(a, b).powi(2);
            if g > seed_gain {
                seed_gain = g;
                seed_pair = (a, b);
            }
        }
    }
    let mut seed = vec![seed_pair.0, seed_pair.1];
    let mut outside: BTreeSet<usize> = (0..p).filter(|&v| v != seed_pair.0 && v != seed_pair.1).collect();
    while seed.len() < r {
        let mut best: Option<(usize, f64)> = None;
        for &v in &outside {
            let mut members = seed.clone();
            members.sort_unstable();
            let g = gain(v, &members, corr);
            if best.is_none_or(|(_, bg)| g > bg) {
                best = Some((v, g));
            }
        }
        let (v, _) = best.expect("outside vertices remain while seed < r <= p");
        outside.remove(&v);
        seed.push(v);
    }
    seed.sort_unstable();

    let sep_size = r - 1;
    let mut cliques = vec![seed];
    let mut separators: Vec<Separator> = Vec::new();
    let mut used: BTreeSet<Vec<usize>> = BTreeSet::new();
    let mut table = GainTable::default();
    for &v in &outside {
        table.refresh(v, 0, &cliques[0], sep_size, &used, corr);
    }

    while !outside.is_empty() {
        let ((v, parent), entry) = table
            .best()
            .map(|(k, e)| (k, e.clone()))
            .ok_or_else(|| Error::InvalidForest("no admissible separator left".into()))?;

        let mut clique = entry.subset.clone();
        clique.push(v);
        clique.sort_unstable();
        let child = cliques.len();
        cliques.push(clique);
        separators.push(Separator {
            vertices: entry.subset.clone(),
            parent,
            child,
        });
        used.insert(entry.subset.clone());
        outside.remove(&v);

        let stale: Vec<(usize, usize)> = table
            .iter()
            .filter(|(&(w, _), e)| w == v || e.subset == entry.subset)
            .map(|(&k, _)| k)
            .collect();
        for (w, c) in stale {
            if w == v {
                table.entries.remove(&(w, c));
            } else {
                table.refresh(w, c, &cliques[c], sep_size, &used, corr);
            }
        }
        for &w in &outside {
            table.refresh(w, child, &cliques[child], sep_size, &used, corr);
        }
    }

    CliqueForest::new(p, r, cliques, separators)
}

/// Edge count of a forest whose cliques all have size `r` and whose
/// separators have size `r - 1`.
pub fn expected_edge_count(p: usize, r: usize) -> usize {
    if r >= p {
        p * p.saturating_sub(1) / 2
    } else {
        r * (r - 1) / 2 + (p - r) * (r - 1)
    }
}
