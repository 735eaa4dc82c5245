//! Persistence landscapes sampled on a uniform grid.
//!
//! Each birth-death pair `(b, d)` contributes the tent function
//!
//! ```text
//! f(x) = 0        if x not in (d, b)
//!        x - d    if x in (d, (d+b)/2]
//!        b - x    if x in ((d+b)/2, b)
//! ```
//!
//! and `lambda_k(x)` is the k-th largest tent value at `x`. Sampled entries are
//! linear in a single birth or death value, so every entry records which
//! signal index it depends on and with which sign. That route is the whole
//! backward pass.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{BirthDeathPair, PersistenceDiagram};

/// Sampling range `(c0, c1)`, number of landscape pieces, and grid size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandscapeSpec {
    pub c0: f64,
    pub c1: f64,
    pub num_pieces: usize,
    pub num_samples: usize,
}

impl Default for LandscapeSpec {
    fn default() -> Self {
        LandscapeSpec {
            c0: 0.0,
            c1: 5.0,
            num_pieces: 5,
            num_samples: 10,
        }
    }
}

impl LandscapeSpec {
    pub fn new(c0: f64, c1: f64, num_pieces: usize, num_samples: usize) -> Result<Self> {
        let spec = LandscapeSpec {
            c0,
            c1,
            num_pieces,
            num_samples,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.c0.is_finite() && self.c1.is_finite()) {
            v.push(format!("landscape range ({}, {}) must be finite", self.c0, self.c1));
        } else if self.c1 <= self.c0 {
            v.push(format!(
                "landscape range requires c1 > c0, got ({}, {})",
                self.c0, self.c1
            ));
        }
        if self.num_pieces == 0 {
            v.push("landscape num_pieces must be >= 1".into());
        }
        if self.num_samples == 0 {
            v.push("landscape num_samples must be >= 1".into());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }

    /// Values per landscape block, `P * Q`.
    pub fn block_len(&self) -> usize {
        self.num_pieces * self.num_samples
    }

    /// Endpoint-inclusive uniform grid; a single sample sits at the midpoint.
    pub fn grid(&self) -> Vec<f64> {
        let q = self.num_samples;
        if q == 1 {
            return vec![0.5 * (self.c0 + self.c1)];
        }
        let step = (self.c1 - self.c0) / (q - 1) as f64;
        (0..q).map(|i| self.c0 + i as f64 * step).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Birth,
    Death,
}

/// Which piece of a tent function a point falls on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Piece {
    Zero,
    /// `x - d`: depends on the death with slope -1.
    Rising,
    /// `b - x`: depends on the birth with slope +1.
    Falling,
}

impl Piece {
    pub fn side(self) -> Option<(Side, f64)> {
        match self {
            Piece::Zero => None,
            Piece::Rising => Some((Side::Death, -1.0)),
            Piece::Falling => Some((Side::Birth, 1.0)),
        }
    }
}

/// Gradient route of one sampled entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Route {
    pub pair_id: usize,
    pub side: Side,
    pub sign: f64,
    /// Signal index owning the birth or death value named by `side`.
    pub index: usize,
}

/// Evaluates the tent function of `pair` at `x`.
pub fn triangle_eval(pair: &BirthDeathPair, x: f64) -> (f64, Piece) {
    let (b, d) = (pair.birth, pair.death);
    if !(x > d && x < b) {
        return (0.0, Piece::Zero);
    }
    if x <= 0.5 * (d + b) {
        (x - d, Piece::Rising)
    } else {
        (b - x, Piece::Falling)
    }
}

fn route_for(pairs: &[BirthDeathPair], pair_id: usize, piece: Piece) -> Option<Route> {
    piece.side().map(|(side, sign)| {
        let p = &pairs[pair_id];
        Route {
            pair_id,
            side,
            sign,
            index: match side {
                Side::Birth => p.birth_index,
                Side::Death => p.death_index,
            },
        }
    })
}

/// Positive tent values at `x`, sorted descending with ties by pair id.
fn ranked_at(pairs: &[BirthDeathPair], x: f64, out: &mut Vec<(f64, usize, Piece)>) {
    out.clear();
    for (id, p) in pairs.iter().enumerate() {
        let (v, piece) = triangle_eval(p, x);
        if v > 0.0 {
            out.push((v, id, piece));
        }
    }
    out.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
}

/// `lambda_k(x)` for `k >= 1`, with the route of the tent supplying it.
pub fn landscape_value(diagram: &PersistenceDiagram, k: usize, x: f64) -> Result<(f64, Option<Route>)> {
    if k == 0 {
        return Err(Error::invalid("landscape piece index k starts at 1"));
    }
    let mut ranked = Vec::new();
    ranked_at(&diagram.pairs, x, &mut ranked);
    Ok(match ranked.get(k - 1) {
        Some(&(v, id, piece)) => (v, route_for(&diagram.pairs, id, piece)),
        None => (0.0, None),
    })
}

/// A `P x Q` sampled landscape, row `k` holding `lambda_{k+1}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LandscapeMatrix {
    pub num_pieces: usize,
    pub num_samples: usize,
    pub values: Vec<f64>,
    pub routes: Vec<Option<Route>>,
}

impl LandscapeMatrix {
    pub fn zeros(num_pieces: usize, num_samples: usize) -> Self {
        LandscapeMatrix {
            num_pieces,
            num_samples,
            values: vec![0.0; num_pieces * num_samples],
            routes: vec![None; num_pieces * num_samples],
        }
    }

    pub fn get(&self, k: usize, q: usize) -> f64 {
        self.values[k * self.num_samples + q]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.num_samples..(k + 1) * self.num_samples]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.num_samples)
    }

    /// One CSV line per landscape piece.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in self.rows() {
            push_csv_row(&mut s, row);
        }
        s
    }

    /// All `P * Q` values on a single row-major CSV line.
    pub fn to_csv_row(&self) -> String {
        let mut s = String::new();
        push_csv_row(&mut s, &self.values);
        s
    }
}

fn push_csv_row(s: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{v}");
    }
    s.push('\n');
}

/// Samples `lambda_1..lambda_P` on the grid of `spec`.
pub fn sample_landscape(diagram: &PersistenceDiagram, spec: &LandscapeSpec) -> LandscapeMatrix {
    sample_pairs(&diagram.pairs, spec)
}

pub(crate) fn sample_pairs(pairs: &[BirthDeathPair], spec: &LandscapeSpec) -> LandscapeMatrix {
    let (p, q) = (spec.num_pieces, spec.num_samples);
    let mut m = LandscapeMatrix::zeros(p, q);
    let mut ranked = Vec::with_capacity(pairs.len());
    for (qi, x) in spec.grid().into_iter().enumerate() {
        ranked_at(pairs, x, &mut ranked);
        for (k, &(v, id, piece)) in ranked.iter().take(p).enumerate() {
            m.values[k * q + qi] = v;
            m.routes[k * q + qi] = route_for(pairs, id, piece);
        }
    }
    m
}

/// Scatters `upstream` (same shape as `matrix`) onto the signal indices that
/// own the sampled births and deaths.
pub fn landscape_backward(matrix: &LandscapeMatrix, upstream: &[f64], signal_length: usize) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; signal_length];
    accumulate_backward(matrix, upstream, &mut grad)?;
    Ok(grad)
}

pub(crate) fn accumulate_backward(matrix: &LandscapeMatrix, upstream: &[f64], grad: &mut [f64]) -> Result<()> {
    if upstream.len() != matrix.values.len() {
        return Err(Error::invalid(format!(
            "upstream gradient has {} entries, landscape matrix has {}x{}",
            upstream.len(),
            matrix.num_pieces,
            matrix.num_samples
        )));
    }
    let len = grad.len();
    for (route, &g) in matrix.routes.iter().zip(upstream) {
        if let Some(r) = route {
            let slot = grad.get_mut(r.index).ok_or_else(|| {
                Error::invalid(format!(
                    "route index {} outside signal of length {}",
                    r.index, len
                ))
            })?;
            *slot += r.sign * g;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{compute_pairs, Signal};

    fn pair(b: f64, d: f64) -> BirthDeathPair {
        BirthDeathPair {
            birth: b,
            death: d,
            birth_index: 0,
            death_index: 1,
        }
    }

    fn diagram(pairs: &[(f64, f64)]) -> PersistenceDiagram {
        PersistenceDiagram {
            pairs: pairs
                .iter()
                .enumerate()
                .map(|(i, &(b, d))| BirthDeathPair {
                    birth: b,
                    death: d,
                    birth_index: 2 * i,
                    death_index: 2 * i + 1,
                })
                .collect(),
            signal_length: 2 * pairs.len(),
        }
    }

    #[test]
    fn triangle_pieces() {
        let p = pair(2.0, 0.0);
        assert_eq!(triangle_eval(&p, 1.0), (1.0, Piece::Rising));
        assert_eq!(triangle_eval(&p, 1.5), (0.5, Piece::Falling));
        assert_eq!(triangle_eval(&p, 0.0), (0.0, Piece::Zero));
        assert_eq!(triangle_eval(&p, 2.0), (0.0, Piece::Zero));
        assert_eq!(triangle_eval(&p, -3.0), (0.0, Piece::Zero));
        assert_eq!(Piece::Rising.side(), Some((Side::Death, -1.0)));
        assert_eq!(Piece::Falling.side(), Some((Side::Birth, 1.0)));
        for x in [-1.0, 0.0, 0.7, 3.0] {
            assert_eq!(triangle_eval(&pair(0.7, 0.7), x), (0.0, Piece::Zero));
        }
    }

    #[test]
    fn kth_value() {
        let one = diagram(&[(2.0, 0.0)]);
        assert_eq!(landscape_value(&one, 1, 1.0).unwrap().0, 1.0);
        assert_eq!(landscape_value(&one, 2, 1.0).unwrap(), (0.0, None));
        let two = diagram(&[(2.0, 0.0), (1.0, 0.0)]);
        let (v, route) = landscape_value(&two, 2, 0.5).unwrap();
        assert_eq!(v, 0.5);
        // Tied values: lambda_1 takes pair 0, lambda_2 takes pair 1.
        assert_eq!(route.unwrap().pair_id, 1);
        assert_eq!(landscape_value(&two, 1, 0.5).unwrap().1.unwrap().pair_id, 0);
        assert!(landscape_value(&two, 0, 0.5).is_err());
    }

    #[test]
    fn grid_endpoints() {
        assert_eq!(LandscapeSpec::new(0.0, 2.0, 1, 3).unwrap().grid(), vec![0.0, 1.0, 2.0]);
        assert_eq!(LandscapeSpec::new(1.0, 2.0, 1, 1).unwrap().grid(), vec![1.5]);
        let g = LandscapeSpec::default().grid();
        assert_eq!(g.len(), 10);
        assert_eq!((g[0], g[9]), (0.0, 5.0));
    }

    #[test]
    fn invalid_specs() {
        assert!(LandscapeSpec::new(1.0, 1.0, 1, 1).is_err());
        assert!(LandscapeSpec::new(0.0, 1.0, 0, 1).is_err());
        assert!(LandscapeSpec::new(0.0, 1.0, 1, 0).is_err());
        match LandscapeSpec::new(2.0, 1.0, 0, 0) {
            Err(Error::InvalidConfig(v)) => assert_eq!(v.len(), 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sampled_single_pair() {
        let m = sample_landscape(&diagram(&[(2.0, 0.0)]), &LandscapeSpec::new(0.0, 2.0, 1, 3).unwrap());
        assert_eq!(m.values, vec![0.0, 1.0, 0.0]);
        assert_eq!(m.routes[0], None);
        assert_eq!(m.routes[1].unwrap().side, Side::Death);
    }

    #[test]
    fn sampled_two_pairs() {
        let m = sample_landscape(
            &diagram(&[(2.0, 0.0), (1.0, 0.0)]),
            &LandscapeSpec::new(0.0, 2.0, 2, 5).unwrap(),
        );
        assert_eq!(m.row(0), &[0.0, 0.5, 1.0, 0.5, 0.0]);
        assert_eq!(m.row(1), &[0.0, 0.5, 0.0, 0.0, 0.0]);
        assert_eq!(m.to_csv(), "0,0.5,1,0.5,0\n0,0.5,0,0,0\n");
        assert_eq!(m.to_csv_row(), "0,0.5,1,0.5,0,0,0.5,0,0,0\n");
    }

    #[test]
    fn empty_diagram_samples_to_zero() {
        let m = sample_landscape(&PersistenceDiagram::empty(4), &LandscapeSpec::default());
        assert!(m.values.iter().all(|&v| v == 0.0));
        assert!(m.routes.iter().all(Option::is_none));
    }

    #[test]
    fn backward_hits_only_extrema() {
        let s = Signal::new(vec![0.0, 2.0, 0.0, 1.0, 0.0]).unwrap();
        let m = sample_landscape(&compute_pairs(&s), &LandscapeSpec::new(0.0, 2.0, 2, 5).unwrap());
        let g = landscape_backward(&m, &vec![1.0; 10], 5).unwrap();
        // Routes: death index 0 (essential) and 2 (minor pair); birth index 1.
        assert_eq!(g, vec![-2.0, 1.0, -1.0, 0.0, 0.0]);
    }

    #[test]
    fn apex_routes_to_death() {
        let s = Signal::new(vec![0.5, 2.5, 0.5]).unwrap();
        let spec = LandscapeSpec::new(0.0, 3.0, 1, 7).unwrap();
        let m = sample_landscape(&compute_pairs(&s), &spec);
        // Apex at x = 1.5 is grid point 3.
        let mut up = vec![0.0; 7];
        up[3] = 1.0;
        assert_eq!(m.values[3], 1.0);
        assert_eq!(landscape_backward(&m, &up, 3).unwrap(), vec![-1.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_shape_mismatch() {
        let m = LandscapeMatrix::zeros(2, 3);
        assert!(landscape_backward(&m, &[0.0; 5], 4).is_err());
    }
}
