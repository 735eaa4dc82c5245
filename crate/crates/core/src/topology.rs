//! 0-dimensional persistent homology of 1-D signals.
//!
//! A signal of length `N` is the filtering function on the 1-D cubical complex
//! with vertices `0..N` and edges between consecutive vertices. Components are
//! tracked through the superlevel-set filtration `f^-1([v, inf))` for decreasing
//! `v`: they are born at local maxima and die when they merge into a component
//! with a higher birth (elder rule). The component that never dies is assigned
//! the global minimum as its death.
//!
//! Runs of equal adjacent values enter the filtration together, so a plateau
//! maximum yields exactly one pair, owned by the leftmost index of the run.

use serde::Serialize;

use crate::error::{Error, Result};

/// A finite, non-empty sequence of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal(Vec<f64>);

impl Signal {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        validate(&values)?;
        Ok(Signal(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for Signal {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Signal::new(values)
    }
}

pub(crate) fn validate(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::EmptySignal);
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!(
            "signal value at index {i} is not finite ({})",
            values[i]
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BirthDeathPair {
    pub birth: f64,
    pub death: f64,
    pub birth_index: usize,
    pub death_index: usize,
}

impl BirthDeathPair {
    pub fn persistence(&self) -> f64 {
        self.birth - self.death
    }
}

/// Birth-death pairs of connected components, ordered by `birth_index`.
///
/// The position of a pair in [`PersistenceDiagram::pairs`] is its pair id.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PersistenceDiagram {
    pub pairs: Vec<BirthDeathPair>,
    pub signal_length: usize,
}

impl PersistenceDiagram {
    pub fn empty(signal_length: usize) -> Self {
        PersistenceDiagram {
            pairs: Vec::new(),
            signal_length,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn total_persistence(&self) -> f64 {
        self.pairs.iter().map(BirthDeathPair::persistence).sum()
    }

    /// `(birth, death)` values sorted lexicographically, for multiset comparison.
    pub fn sorted_values(&self) -> Vec<(f64, f64)> {
        let mut v: Vec<_> = self.pairs.iter().map(|p| (p.birth, p.death)).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        v
    }

    /// Pairs sorted by descending persistence, ties by `birth_index`.
    pub fn by_persistence(&self) -> Vec<BirthDeathPair> {
        let mut v = self.pairs.clone();
        v.sort_by(|a, b| {
            b.persistence()
                .total_cmp(&a.persistence())
                .then(a.birth_index.cmp(&b.birth_index))
        });
        v
    }
}

/// A maximal run of equal adjacent values.
#[derive(Debug, Clone, Copy)]
struct Run {
    value: f64,
    start: usize,
}

fn plateau_runs(values: &[f64]) -> Vec<Run> {
    let mut runs: Vec<Run> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        match runs.last() {
            Some(r) if r.value == v => {}
            _ => runs.push(Run { value: v, start: i }),
        }
    }
    runs
}

fn global_min(values: &[f64]) -> (f64, usize) {
    values
        .iter()
        .enumerate()
        .fold((f64::INFINITY, 0), |(best, bi), (i, &v)| {
            if v < best {
                (v, i)
            } else {
                (best, bi)
            }
        })
}

/// Disjoint-set forest over plateau runs. Each root carries the birth of
/// its component.
struct Components {
    parent: Vec<usize>,
    birth: Vec<(f64, usize)>,
}

impl Components {
    fn new(n: usize) -> Self {
        Components {
            parent: (0..n).collect(),
            birth: vec![(f64::NAN, 0); n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
}

/// True when `a` survives a merge with `b`: higher birth wins, equal births
/// go to the smaller birth index.
fn elder(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Birth-death pairs of the superlevel filtration, without input validation.
pub(crate) fn superlevel_pairs(values: &[f64]) -> Vec<BirthDeathPair> {
    if values.is_empty() {
        return Vec::new();
    }
    let runs = plateau_runs(values);
    let mut order: Vec<usize> = (0..runs.len()).collect();
    order.sort_by(|&a, &b| {
        runs[b]
            .value
            .total_cmp(&runs[a].value)
            .then(runs[a].start.cmp(&runs[b].start))
    });

    let mut uf = Components::new(runs.len());
    let mut inserted = vec![false; runs.len()];
    let mut pairs = Vec::new();

    for &r in &order {
        let Run { value, start } = runs[r];
        inserted[r] = true;
        // Adjacent runs have distinct values, so an inserted neighbor is strictly higher.
        let left = (r > 0 && inserted[r - 1]).then(|| uf.find(r - 1));
        let right = (r + 1 < runs.len() && inserted[r + 1]).then(|| uf.find(r + 1));
        match (left, right) {
            (None, None) => uf.birth[r] = (value, start),
            (Some(root), None) | (None, Some(root)) => uf.parent[r] = root,
            (Some(a), Some(b)) => {
                let (survivor, dying) = if elder(uf.birth[a], uf.birth[b]) {
                    (a, b)
                } else {
                    (b, a)
                };
                let (birth, birth_index) = uf.birth[dying];
                pairs.push(BirthDeathPair {
                    birth,
                    death: value,
                    birth_index,
                    death_index: start,
                });
                uf.parent[dying] = survivor;
                uf.parent[r] = survivor;
            }
        }
    }

    let root = uf.find(0);
    let (birth, birth_index) = uf.birth[root];
    let (death, death_index) = global_min(values);
    pairs.push(BirthDeathPair {
        birth,
        death,
        birth_index,
        death_index,
    });
    pairs.sort_by_key(|p| p.birth_index);
    pairs
}

/// Computes the 0-dimensional persistence diagram of `signal` under the
/// superlevel-set filtration.
pub fn compute_pairs(signal: &Signal) -> PersistenceDiagram {
    PersistenceDiagram {
        pairs: superlevel_pairs(signal.values()),
        signal_length: signal.len(),
    }
}

/// Validating variant of [`compute_pairs`] for raw slices.
pub fn compute_pairs_slice(values: &[f64]) -> Result<PersistenceDiagram> {
    validate(values)?;
    Ok(PersistenceDiagram {
        pairs: superlevel_pairs(values),
        signal_length: values.len(),
    })
}

/// Reference implementation that materializes the superlevel set at every
/// distinct value and relabels its connected runs from scratch.
///
/// Quadratic in the signal length; intended as a test oracle for
/// [`compute_pairs`].
pub fn brute_force_pairs(signal: &Signal) -> PersistenceDiagram {
    let values = signal.values();
    let n = values.len();
    let mut thresholds: Vec<f64> = values.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();

    // Birth of the component each vertex belonged to at the previous threshold.
    let mut label: Vec<Option<(f64, usize)>> = vec![None; n];
    let mut pairs = Vec::new();

    for &v in &thresholds {
        let included: Vec<bool> = values.iter().map(|&x| x >= v).collect();
        let mut next = vec![None; n];
        let mut i = 0;
        while i < n {
            if !included[i] {
                i += 1;
                continue;
            }
            let mut j = i;
            while j < n && included[j] {
                j += 1;
            }
            // Component [i, j): collect the previous components it contains,
            // each with the vertex span it occupied.
            let mut previous: Vec<((f64, usize), usize, usize)> = Vec::new();
            let mut k = i;
            while k < j {
                match label[k] {
                    Some(b) => {
                        let s = k;
                        while k < j && label[k] == Some(b) {
                            k += 1;
                        }
                        previous.push((b, s, k));
                    }
                    None => k += 1,
                }
            }
            let survivor = if previous.is_empty() {
                // Every vertex in a new component has value v.
                (v, i)
            } else {
                let mut best = previous[0].0;
                for &(b, _, _) in &previous[1..] {
                    if elder(b, best) {
                        best = b;
                    }
                }
                for &(b, s, e) in &previous {
                    if b == best {
                        continue;
                    }
                    let death_index = if s > i { s - 1 } else { e };
                    pairs.push(BirthDeathPair {
                        birth: b.0,
                        death: v,
                        birth_index: b.1,
                        death_index,
                    });
                }
                best
            };
            for slot in &mut next[i..j] {
                *slot = Some(survivor);
            }
            i = j;
        }
        label = next;
    }

    let (birth, birth_index) = label[0].expect("lowest threshold includes every vertex");
    let (death, death_index) = global_min(values);
    pairs.push(BirthDeathPair {
        birth,
        death,
        birth_index,
        death_index,
    });
    pairs.sort_by_key(|p| p.birth_index);
    PersistenceDiagram {
        pairs,
        signal_length: n,
    }
}

/// Number of plateau runs strictly higher than both neighbors (missing
/// neighbors at the ends count as lower).
pub fn count_local_maxima(values: &[f64]) -> usize {
    let runs = plateau_runs(values);
    (0..runs.len())
        .filter(|&r| {
            let v = runs[r].value;
            (r == 0 || runs[r - 1].value < v) && (r + 1 == runs.len() || runs[r + 1].value < v)
        })
        .count()
}
