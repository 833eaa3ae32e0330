//! Dirichlet weight vectors on bounded jumps and the scalar parameters derived
//! from them.
//!
//! A model is a pair of jump ranges `L, R >= 1` together with a concentration
//! `alpha_i >= 0` for every offset `i` in `[-L, R]`. The walk at site `x` jumps
//! to `x + i` with a probability drawn, independently per site, from the
//! Dirichlet law with these concentrations.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphs::{self, WeightedDigraph};

/// Relative tolerance used to decide that `kappa1` vanishes.
pub const RECURRENCE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("jump range must be at least 1 on both sides (L={left}, R={right})")]
    EmptySide { left: i64, right: i64 },
    #[error("endpoint weight alpha_{offset} must be positive")]
    EndpointZero { offset: i64 },
    #[error("weight alpha_{offset} = {weight} is negative")]
    NegativeWeight { offset: i64, weight: f64 },
    #[error("weight alpha_{offset} = {weight} is not finite")]
    NonFinite { offset: i64, weight: f64 },
    #[error("offset {offset} lies outside [-{left}, {right}]")]
    OffsetOutOfRange { offset: i64, left: i64, right: i64 },
    #[error("gcd of the support offsets is {gcd}, expected 1")]
    GcdViolation { gcd: u64 },
    #[error("no interval of length <= {cap} is strongly connected")]
    CapExceeded { cap: usize },
    #[error("cannot parse weight map: {0}")]
    Parse(String),
}

impl ModelError {
    /// Stable machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            ModelError::EmptySide { .. } => "EmptySide",
            ModelError::EndpointZero { .. } => "EndpointZero",
            ModelError::NegativeWeight { .. } => "NegativeWeight",
            ModelError::NonFinite { .. } => "NonFinite",
            ModelError::OffsetOutOfRange { .. } => "OffsetOutOfRange",
            ModelError::GcdViolation { .. } => "GcdViolation",
            ModelError::CapExceeded { .. } => "CapExceeded",
            ModelError::Parse(_) => "Parse",
        }
    }
}

/// Validated Dirichlet concentrations for jumps in `[-L, R]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletParams {
    left: usize,
    right: usize,
    /// `weights[i + left]` is `alpha_i`.
    weights: Vec<f64>,
}

impl DirichletParams {
    /// Validates `(L, R, alphas)`. Offsets missing from `alphas` get weight 0.
    pub fn new<I>(left: i64, right: i64, alphas: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = (i64, f64)>,
    {
        if left < 1 || right < 1 {
            return Err(ModelError::EmptySide { left, right });
        }
        let mut weights = vec![0.0; (left + right + 1) as usize];
        for (offset, weight) in alphas {
            if offset < -left || offset > right {
                return Err(ModelError::OffsetOutOfRange {
                    offset,
                    left,
                    right,
                });
            }
            if !weight.is_finite() {
                return Err(ModelError::NonFinite { offset, weight });
            }
            if weight < 0.0 {
                return Err(ModelError::NegativeWeight { offset, weight });
            }
            weights[(offset + left) as usize] += weight;
        }
        let params = DirichletParams {
            left: left as usize,
            right: right as usize,
            weights,
        };
        if params.alpha(-left) <= 0.0 {
            return Err(ModelError::EndpointZero { offset: -left });
        }
        if params.alpha(right) <= 0.0 {
            return Err(ModelError::EndpointZero { offset: right });
        }
        let gcd = params
            .jump_offsets()
            .fold(0u64, |g, i| gcd(g, i.unsigned_abs()));
        if gcd != 1 {
            return Err(ModelError::GcdViolation { gcd });
        }
        Ok(params)
    }

    /// Nearest-neighbour model with `alpha_{-1} = left_weight`, `alpha_1 = right_weight`.
    pub fn nearest_neighbor(left_weight: f64, right_weight: f64) -> Result<Self, ModelError> {
        Self::new(1, 1, [(-1, left_weight), (1, right_weight)])
    }

    pub fn left(&self) -> i64 {
        self.left as i64
    }

    pub fn right(&self) -> i64 {
        self.right as i64
    }

    /// `alpha_i`, zero outside `[-L, R]`.
    pub fn alpha(&self, offset: i64) -> f64 {
        if offset < -self.left() || offset > self.right() {
            0.0
        } else {
            self.weights[(offset + self.left()) as usize]
        }
    }

    /// All offsets with positive weight, ascending, including 0 when `alpha_0 > 0`.
    pub fn support(&self) -> impl Iterator<Item = i64> + '_ {
        (-self.left()..=self.right()).filter(move |&i| self.alpha(i) > 0.0)
    }

    /// Support offsets other than 0 (the ones that actually move the walk).
    pub fn jump_offsets(&self) -> impl Iterator<Item = i64> + '_ {
        self.support().filter(|&i| i != 0)
    }

    /// `(offset, weight)` pairs on the support, ascending.
    pub fn weights(&self) -> Vec<(i64, f64)> {
        self.support().map(|i| (i, self.alpha(i))).collect()
    }

    /// Sum of all concentrations; the total out-weight of every site of the lattice graph.
    pub fn total_weight(&self) -> f64 {
        kahan_sum(self.support().map(|i| self.alpha(i)))
    }

    /// Smallest positive weight.
    pub fn min_positive_weight(&self) -> f64 {
        self.support()
            .map(|i| self.alpha(i))
            .fold(f64::INFINITY, f64::min)
    }

    /// Mirror image `alpha'_i = alpha_{-i}`.
    pub fn reflect(&self) -> DirichletParams {
        let mut weights = self.weights.clone();
        weights.reverse();
        DirichletParams {
            left: self.right,
            right: self.left,
            weights,
        }
    }

    /// Derives `d±`, `c±`, `kappa1` and `m0`.
    pub fn derive(&self) -> DerivedParams {
        derive_params(self)
    }
}

impl fmt::Display for DirichletParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .weights()
            .into_iter()
            .map(|(i, w)| format!("{i}:{w}"))
            .collect();
        f.write_str(&parts.join(","))
    }
}

/// Parses the `offset:weight,offset:weight,...` syntax. `L` and `R` are taken
/// from the most negative and most positive offsets listed.
impl FromStr for DirichletParams {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let map = parse_weight_map(s)?;
        let left = map.keys().next().map_or(0, |&k| (-k).max(0));
        let right = map.keys().next_back().map_or(0, |&k| k.max(0));
        DirichletParams::new(left, right, map)
    }
}

/// Parses `offset:weight` pairs separated by commas. Duplicate offsets are rejected.
pub fn parse_weight_map(s: &str) -> Result<BTreeMap<i64, f64>, ModelError> {
    let mut map = BTreeMap::new();
    for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let (offset, weight) = item
            .split_once(':')
            .ok_or_else(|| ModelError::Parse(format!("expected offset:weight, got {item:?}")))?;
        let offset: i64 = offset
            .trim()
            .parse()
            .map_err(|_| ModelError::Parse(format!("bad offset in {item:?}")))?;
        let weight: f64 = weight
            .trim()
            .parse()
            .map_err(|_| ModelError::Parse(format!("bad weight in {item:?}")))?;
        if map.insert(offset, weight).is_some() {
            return Err(ModelError::Parse(format!("offset {offset} listed twice")));
        }
    }
    if map.is_empty() {
        return Err(ModelError::Parse("empty weight map".into()));
    }
    Ok(map)
}

/// Scalar parameters of a model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedParams {
    pub d_plus: f64,
    pub d_minus: f64,
    pub c_plus: f64,
    pub c_minus: f64,
    pub kappa1: f64,
    pub m0: usize,
}

impl DerivedParams {
    /// `kappa1 == 0` up to `RECURRENCE_TOLERANCE * (d+ + d-)`.
    pub fn is_recurrent(&self) -> bool {
        self.kappa1.abs() <= RECURRENCE_TOLERANCE * (self.d_plus + self.d_minus)
    }
}

pub fn validate_params(
    left: i64,
    right: i64,
    alphas: &BTreeMap<i64, f64>,
) -> Result<DirichletParams, ModelError> {
    DirichletParams::new(left, right, alphas.iter().map(|(&k, &v)| (k, v)))
}

pub fn derive_params(p: &DirichletParams) -> DerivedParams {
    let d_plus = kahan_sum((1..=p.right()).map(|i| i as f64 * p.alpha(i)));
    let d_minus = kahan_sum((-p.left()..=-1).map(|i| (-i) as f64 * p.alpha(i)));
    let c_plus = kahan_sum((1..=p.right()).map(|i| p.alpha(i)));
    let c_minus = kahan_sum((-p.left()..=-1).map(|i| p.alpha(i)));
    let m0 = compute_m0(p).expect("gcd condition guarantees a strongly connected interval");
    DerivedParams {
        d_plus,
        d_minus,
        c_plus,
        c_minus,
        kappa1: d_plus - d_minus,
        m0,
    }
}

/// Smallest `m >= max(L, R)` such that every interval of length `m` is
/// strongly connected (distinct-pair reachability inside the interval).
pub fn compute_m0(p: &DirichletParams) -> Result<usize, ModelError> {
    let start = p.left().max(p.right()) as usize;
    let cap = 4 * (p.left() + p.right()).pow(2) as usize;
    for m in start..=cap.max(start) {
        if m <= 1 {
            return Ok(m.max(1));
        }
        let window = graphs::build_window(p, 0, m as i64 - 1);
        let vertices: Vec<i64> = (0..m as i64).collect();
        if graphs::mutually_reachable(&window, &vertices) {
            return Ok(m);
        }
    }
    Err(ModelError::CapExceeded { cap })
}

pub fn reflect(p: &DirichletParams) -> DirichletParams {
    p.reflect()
}

/// The lattice graph restricted to `[a, b]`.
pub fn window(p: &DirichletParams, a: i64, b: i64) -> WeightedDigraph {
    graphs::build_window(p, a, b)
}

/// Compensated summation in iteration order.
pub(crate) fn kahan_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for v in values {
        let y = v - carry;
        let t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    sum
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b7() -> DirichletParams {
        DirichletParams::new(
            16,
            5,
            [(-16, 1.0 / 67.0), (2, 15.0 / 67.0), (5, 5.0 / 67.0)],
        )
        .unwrap()
    }

    #[test]
    fn minimal_nearest_neighbor_is_valid() {
        let p = DirichletParams::new(1, 1, [(-1, 1.0), (1, 2.0)]).unwrap();
        assert_eq!(p.alpha(-1), 1.0);
        assert_eq!(p.alpha(1), 2.0);
        assert_eq!(p.alpha(0), 0.0);
    }

    #[test]
    fn rejects_even_support() {
        let err = DirichletParams::new(2, 2, [(-2, 1.0), (2, 1.0)]).unwrap_err();
        assert_eq!(err, ModelError::GcdViolation { gcd: 2 });
    }

    #[test]
    fn rejects_zero_endpoint() {
        let err = DirichletParams::new(1, 2, [(-1, 1.0), (1, 1.0), (2, 0.0)]).unwrap_err();
        assert_eq!(err, ModelError::EndpointZero { offset: 2 });
    }

    #[test]
    fn rejects_negative_and_empty_side() {
        assert!(matches!(
            DirichletParams::new(1, 1, [(-1, 1.0), (0, -0.5), (1, 1.0)]),
            Err(ModelError::NegativeWeight { offset: 0, .. })
        ));
        assert!(matches!(
            DirichletParams::new(0, 1, [(1, 1.0)]),
            Err(ModelError::EmptySide { .. })
        ));
        assert!(matches!(
            DirichletParams::new(1, 1, [(-1, 1.0), (3, 1.0)]),
            Err(ModelError::OffsetOutOfRange { offset: 3, .. })
        ));
    }

    #[test]
    fn nearest_neighbor_kappa1() {
        let d = DirichletParams::nearest_neighbor(1.5, 4.0)
            .unwrap()
            .derive();
        assert_eq!(d.kappa1, 4.0 - 1.5);
        assert_eq!(d.c_plus, 4.0);
        assert_eq!(d.d_minus, 1.5);
        assert_eq!(d.m0, 1);
    }

    #[test]
    fn example_b7_kappa1() {
        let d = b7().derive();
        assert!((d.kappa1 - 39.0 / 67.0).abs() < 1e-15);
        assert!((d.d_plus + d.d_minus - 71.0 / 67.0).abs() < 1e-15);
        let r = b7().reflect().derive();
        assert!((r.kappa1 + 39.0 / 67.0).abs() < 1e-15);
    }

    #[test]
    fn symmetric_weights_are_recurrent() {
        let d = DirichletParams::nearest_neighbor(0.3, 0.3)
            .unwrap()
            .derive();
        assert_eq!(d.kappa1, 0.0);
        assert!(d.is_recurrent());
        let p: DirichletParams = "-2:0.1,-1:0.2,1:0.2,2:0.1".parse().unwrap();
        assert!(p.derive().is_recurrent());
    }

    #[test]
    fn m0_small_cases() {
        assert_eq!(
            compute_m0(&DirichletParams::nearest_neighbor(1.0, 1.0).unwrap()),
            Ok(1)
        );
        let p = DirichletParams::new(1, 2, [(-1, 1.0), (2, 1.0)]).unwrap();
        assert_eq!(compute_m0(&p), Ok(3));
    }

    #[test]
    fn reflect_is_involution() {
        let p = DirichletParams::new(1, 1, [(-1, 1.0), (1, 2.0)]).unwrap();
        let r = p.reflect();
        assert_eq!(r.alpha(-1), 2.0);
        assert_eq!(r.alpha(1), 1.0);
        assert_eq!(r.reflect(), p);
        assert_eq!(b7().reflect().reflect(), b7());
    }

    #[test]
    fn parses_weight_syntax() {
        let p: DirichletParams = "-16:0.014925, 2:0.223881,5:0.074627".parse().unwrap();
        assert_eq!(p.left(), 16);
        assert_eq!(p.right(), 5);
        assert_eq!(p.alpha(2), 0.223881);
        assert!(matches!(
            "1:2".parse::<DirichletParams>(),
            Err(ModelError::EmptySide { .. })
        ));
        assert!(matches!(
            "-1:1,1".parse::<DirichletParams>(),
            Err(ModelError::Parse(_))
        ));
        assert!(matches!(
            "-1:1,-1:2,1:1".parse::<DirichletParams>(),
            Err(ModelError::Parse(_))
        ));
        assert_eq!(p.to_string().parse::<DirichletParams>().unwrap(), p);
    }
}
