//! Finitely supported signed weight functions and Mochon's f-assignments.
//!
//! An assignment is a function `t = sum_i p_i [[x_i]]` on `[0, oo)` with
//! finitely many nonzero weights. Mochon's f-assignments arise from a
//! coordinate set and a polynomial `f` through the Lagrange-style product
//! formula `p_i = -f(x_i) / prod_{j != i} (x_j - x_i)`; they are the valid
//! moves underlying the point games this crate solves.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Relative spacing below which two coordinates are treated as coincident.
pub const COORD_SPACING_TOL: f64 = 1e-8;

/// A finitely supported signed weight function, stored as sorted
/// `(coordinate, weight)` pairs with no zero weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    points: Vec<Point>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub p: f64,
}

impl Assignment {
    /// Builds an assignment from `(x, p)` pairs. Zero weights are dropped,
    /// coordinates must be non-negative and strictly increasing after the
    /// drop.
    pub fn new(pairs: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let mut points: Vec<Point> = pairs
            .into_iter()
            .filter(|&(_, p)| p != 0.0)
            .map(|(x, p)| Point { x, p })
            .collect();
        points.sort_by(|a, b| a.x.total_cmp(&b.x));
        for pt in &points {
            if !(pt.x >= 0.0) || !pt.x.is_finite() || !pt.p.is_finite() {
                return Err(Error::DegenerateCoordinates(format!(
                    "point ({}, {})",
                    pt.x, pt.p
                )));
            }
        }
        let span = points
            .last()
            .map(|l| l.x - points[0].x)
            .unwrap_or(0.0)
            .max(1.0);
        for w in points.windows(2) {
            if w[1].x - w[0].x <= COORD_SPACING_TOL * span {
                return Err(Error::DegenerateCoordinates(format!(
                    "{} and {} closer than {:e} of span",
                    w[0].x, w[1].x, COORD_SPACING_TOL
                )));
            }
        }
        Ok(Assignment { points })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn coords(&self) -> Vec<f64> {
        self.points.iter().map(|pt| pt.x).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.points.iter().map(|pt| pt.p).collect()
    }

    /// Weight at coordinate `x`, or zero off the support.
    pub fn weight_at(&self, x: f64) -> f64 {
        self.points
            .iter()
            .find(|pt| pt.x == x)
            .map(|pt| pt.p)
            .unwrap_or(0.0)
    }

    /// `h - g` recombination of two disjoint positive parts.
    pub fn from_parts(h: &Assignment, g: &Assignment) -> Result<Assignment> {
        let pairs = h
            .points
            .iter()
            .map(|pt| (pt.x, pt.p))
            .chain(g.points.iter().map(|pt| (pt.x, -pt.p)));
        Assignment::new(pairs)
    }
}

/// Polynomial specification for an f-assignment, in the factored form
/// `f(x) = prod_i (a_i - x) * (-x)^k`. An empty spec is the constant `f = 1`
/// (the f0 case), a bare power is a monomial assignment, and the mixed form
/// appears transiently while peeling roots off an inverted problem. Any such
/// `f` satisfies `f(-lambda) >= 0` for `lambda >= 0`, which is the
/// admissibility requirement for a valid move.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PolySpec {
    pub roots: Vec<f64>,
    pub monomial_power: usize,
}

impl PolySpec {
    pub fn f0() -> Self {
        PolySpec::default()
    }

    pub fn monomial(k: usize) -> Self {
        PolySpec {
            roots: Vec::new(),
            monomial_power: k,
        }
    }

    pub fn from_roots(roots: impl Into<Vec<f64>>) -> Self {
        PolySpec {
            roots: roots.into(),
            monomial_power: 0,
        }
    }

    pub fn with_power(roots: impl Into<Vec<f64>>, k: usize) -> Self {
        PolySpec {
            roots: roots.into(),
            monomial_power: k,
        }
    }

    pub fn degree(&self) -> usize {
        self.roots.len() + self.monomial_power
    }

    /// Evaluates `f(x)`.
    pub fn eval(&self, x: f64) -> f64 {
        let prod: f64 = self.roots.iter().map(|r| r - x).product();
        prod * (-x).powi(self.monomial_power as i32)
    }
}

/// Computes Mochon's f-assignment weights on the given coordinates:
/// `p_i = -f(x_i) / prod_{j != i} (x_j - x_i)`.
///
/// The denominator is accumulated in log magnitude so that large coordinate
/// sets do not overflow.
pub fn lagrange_weights(coords: &[f64], f: &PolySpec) -> Result<Assignment> {
    let n = coords.len();
    if n < 2 {
        return Err(Error::DegenerateCoordinates(format!(
            "need at least 2 coordinates, got {n}"
        )));
    }
    validate_coords(coords)?;
    if f.degree() > n - 2 {
        return Err(Error::DegreeTooHigh {
            degree: f.degree(),
            points: n,
            max: n - 2,
        });
    }
    for &r in &f.roots {
        if coords.iter().any(|&x| x == r) {
            return Err(Error::RootPlacement(format!(
                "root {r} coincides with a coordinate"
            )));
        }
    }

    let mut pairs = Vec::with_capacity(n);
    for (i, &xi) in coords.iter().enumerate() {
        let mut log_mag = 0.0f64;
        let mut sign = 1.0f64;
        for (j, &xj) in coords.iter().enumerate() {
            if j == i {
                continue;
            }
            let d = xj - xi;
            log_mag += d.abs().ln();
            if d < 0.0 {
                sign = -sign;
            }
        }
        let fx = f.eval(xi);
        let p = -fx * sign * (-log_mag).exp();
        pairs.push((xi, p));
    }
    Assignment::new(pairs)
}

/// Splits an assignment into its positive part `h` and negated negative part
/// `g`, so that `t = h - g` with disjoint supports and positive weights on
/// both sides.
pub fn split_h_g(t: &Assignment) -> (Assignment, Assignment) {
    let h = Assignment {
        points: t.points.iter().copied().filter(|pt| pt.p > 0.0).collect(),
    };
    let g = Assignment {
        points: t
            .points
            .iter()
            .filter(|pt| pt.p < 0.0)
            .map(|pt| Point { x: pt.x, p: -pt.p })
            .collect(),
    };
    (h, g)
}

/// `<x^k> = sum_i p_i x_i^k`. Negative `k` is allowed when every coordinate
/// is strictly positive.
pub fn moment(t: &Assignment, k: i64) -> Result<f64> {
    if k < 0 && t.points.iter().any(|pt| pt.x == 0.0) {
        return Err(Error::NegativeMomentAtZero);
    }
    Ok(t.points
        .iter()
        .map(|pt| pt.p * pt.x.powi(k as i32))
        .sum())
}

/// Closed-form transfer function `-f(-lambda) / prod_i (lambda + x_i)` of a
/// Mochon assignment. Serves as an independent oracle for the sampled sum
/// `sum_i p_i / (lambda + x_i)` produced by `lagrange_weights`.
pub fn transfer_oracle(coords: &[f64], f: &PolySpec, lambda: f64) -> Result<f64> {
    let mut log_mag = 0.0f64;
    let mut sign = 1.0f64;
    for &x in coords {
        let d = lambda + x;
        if d == 0.0 {
            return Err(Error::SingularUpdate(d));
        }
        log_mag += d.abs().ln();
        if d < 0.0 {
            sign = -sign;
        }
    }
    Ok(-f.eval(-lambda) * sign * (-log_mag).exp())
}

/// Sampled transfer value `sum_i p_i / (lambda + x_i)`.
pub fn transfer_value(t: &Assignment, lambda: f64) -> f64 {
    t.points.iter().map(|pt| pt.p / (lambda + pt.x)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Valid,
    Invalid,
    Inconclusive,
}

/// Outcome of the two validity conditions `sum t(x) = 0` and
/// `sum t(x)/(lambda + x) <= 0 for all lambda >= 0`, checked on a sampled
/// grid with asymptotic endpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidityReport {
    pub sum_zero_residual: f64,
    /// Most positive sampled transfer value (the worst case for validity).
    pub min_transfer_value: f64,
    pub grid: Vec<f64>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy)]
pub struct GridConfig {
    pub samples: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub tol: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            samples: 512,
            lambda_min: 1e-6,
            lambda_max: 1e6,
            tol: 1e-9,
        }
    }
}

/// Checks validity of `t` on a log-spaced lambda grid.
///
/// The `lambda -> 0` end is handled by a one-sided limit when the support
/// contains 0 (the transfer diverges with the sign of the weight there), and
/// `lambda -> oo` reduces to the conditions `sum p = 0` and `sum p x >= 0`.
/// The grid check is a heuristic for the universally quantified condition, so
/// near-threshold cases are reported as `Inconclusive`.
pub fn check_validity(t: &Assignment, cfg: &GridConfig) -> ValidityReport {
    let weight_scale = t
        .points
        .iter()
        .map(|pt| pt.p.abs())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);

    let sum: f64 = t.points.iter().map(|pt| pt.p).sum();
    let sum_residual = sum.abs();

    let mut grid = Vec::with_capacity(cfg.samples + 1);
    let (lo, hi) = (cfg.lambda_min.ln(), cfg.lambda_max.ln());
    for i in 0..cfg.samples {
        let f = i as f64 / (cfg.samples - 1) as f64;
        grid.push((lo + f * (hi - lo)).exp());
    }

    // Worst (most positive) transfer value, normalised per-lambda against the
    // absolute-weight sum so the verdict is scale free.
    let mut worst_raw = f64::NEG_INFINITY;
    let mut worst_norm = f64::NEG_INFINITY;
    let mut consider = |t_val: f64, abs_val: f64| {
        worst_raw = worst_raw.max(t_val);
        worst_norm = worst_norm.max(t_val / abs_val.max(f64::MIN_POSITIVE));
    };

    for &lambda in &grid {
        let val = transfer_value(t, lambda);
        let abs: f64 = t.points.iter().map(|pt| pt.p.abs() / (lambda + pt.x)).sum();
        consider(val, abs);
    }

    // lambda -> 0 endpoint.
    if let Some(first) = t.points.first() {
        if first.x == 0.0 {
            // Transfer ~ p_1 / lambda: the sign of the weight at zero decides.
            consider(first.p, first.p.abs());
        } else {
            let val = transfer_value(t, 0.0);
            let abs: f64 = t.points.iter().map(|pt| pt.p.abs() / pt.x).sum();
            consider(val, abs);
        }
    }

    // lambda -> oo endpoint: with sum p = 0 the leading term is
    // -<x^1>/lambda^2, so <x^1> must be non-negative.
    let first_moment: f64 = t.points.iter().map(|pt| pt.p * pt.x).sum();
    let abs_first: f64 = t.points.iter().map(|pt| (pt.p * pt.x).abs()).sum();
    consider(-first_moment, abs_first);

    let verdict = if sum_residual > cfg.tol * weight_scale {
        Verdict::Invalid
    } else if worst_norm <= cfg.tol {
        Verdict::Valid
    } else if worst_norm < 10.0 * cfg.tol {
        Verdict::Inconclusive
    } else {
        Verdict::Invalid
    };

    ValidityReport {
        sum_zero_residual: sum_residual,
        min_transfer_value: worst_raw,
        grid,
        verdict,
    }
}

/// Packages the key 1/10-bias move: five coordinates `x0 < .. < x4` and
/// three roots `l1, r1, r2` with the interleaving
/// `x0 < l1 < x1 < x2 < x3 < x4 < r1 < r2`.
#[allow(clippy::too_many_arguments)]
pub fn one_tenth_move(
    x0: f64,
    l1: f64,
    x1: f64,
    x2: f64,
    x3: f64,
    x4: f64,
    r1: f64,
    r2: f64,
) -> Result<(Vec<f64>, PolySpec)> {
    let seq = [x0, l1, x1, x2, x3, x4, r1, r2];
    for w in seq.windows(2) {
        if !(w[0] < w[1]) {
            return Err(Error::OrderingViolated(format!(
                "expected {} < {}",
                w[0], w[1]
            )));
        }
    }
    if x0 < 0.0 {
        return Err(Error::OrderingViolated(format!("x0 = {x0} negative")));
    }
    Ok((vec![x0, x1, x2, x3, x4], PolySpec::from_roots(vec![l1, r1, r2])))
}

fn validate_coords(coords: &[f64]) -> Result<()> {
    if coords.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::DegenerateCoordinates(format!("{coords:?}")));
    }
    let span = (coords[coords.len() - 1] - coords[0]).max(1.0);
    for w in coords.windows(2) {
        if w[1] - w[0] <= COORD_SPACING_TOL * span {
            return Err(Error::DegenerateCoordinates(format!(
                "{} and {} too close",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f0_weights(coords: &[f64]) -> Vec<f64> {
        lagrange_weights(coords, &PolySpec::f0()).unwrap().weights()
    }

    #[test]
    fn f0_on_four_points() {
        let w = f0_weights(&[0.0, 1.0, 2.0, 3.0]);
        let expect = [-1.0 / 6.0, 0.5, -0.5, 1.0 / 6.0];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15, "{w:?}");
        }
    }

    #[test]
    fn f0_on_two_points() {
        let w = f0_weights(&[1.25, 4.5]);
        let d = 4.5 - 1.25;
        assert!((w[0] + 1.0 / d).abs() < 1e-15);
        assert!((w[1] - 1.0 / d).abs() < 1e-15);
    }

    #[test]
    fn merge_weights() {
        let w = f0_weights(&[0.0, 1.0, 2.0]);
        assert_eq!(w, vec![-0.5, 1.0, -0.5]);
    }

    #[test]
    fn linear_root_weights() {
        let t = lagrange_weights(&[0.0, 1.0, 2.0], &PolySpec::from_roots(vec![3.0])).unwrap();
        let expect = [-1.5, 2.0, -0.5];
        for (a, b) in t.weights().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn f0_signs_alternate_starting_negative() {
        let t = lagrange_weights(&[0.3, 0.9, 2.7, 5.1, 6.0], &PolySpec::f0()).unwrap();
        for (i, pt) in t.points().iter().enumerate() {
            let expect_neg = i % 2 == 0;
            assert_eq!(pt.p < 0.0, expect_neg, "index {i}: {}", pt.p);
        }
    }

    #[test]
    fn degree_too_high_rejected() {
        let err = lagrange_weights(&[0.0, 1.0], &PolySpec::monomial(1)).unwrap_err();
        assert!(matches!(err, Error::DegreeTooHigh { .. }));
    }

    #[test]
    fn degenerate_coordinates_rejected() {
        assert!(lagrange_weights(&[1.0, 1.0], &PolySpec::f0()).is_err());
        assert!(lagrange_weights(&[5.0, 5.0 + 1e-12], &PolySpec::f0()).is_err());
    }

    #[test]
    fn split_worked_example() {
        let t = lagrange_weights(&[0.0, 1.0, 2.0, 3.0], &PolySpec::f0()).unwrap();
        let (h, g) = split_h_g(&t);
        assert_eq!(h.coords(), vec![1.0, 3.0]);
        assert!((h.weight_at(1.0) - 0.5).abs() < 1e-15);
        assert!((h.weight_at(3.0) - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(g.coords(), vec![0.0, 2.0]);
        assert!((g.weight_at(0.0) - 1.0 / 6.0).abs() < 1e-15);
        assert!((g.weight_at(2.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn split_all_positive_gives_empty_g() {
        let t = Assignment::new([(1.0, 0.25), (2.0, 0.75)]).unwrap();
        let (h, g) = split_h_g(&t);
        assert_eq!(h.len(), 2);
        assert!(g.is_empty());
    }

    #[test]
    fn split_merge_example() {
        let t = lagrange_weights(&[0.0, 1.0, 2.0], &PolySpec::f0()).unwrap();
        let (h, g) = split_h_g(&t);
        assert_eq!(h.coords(), vec![1.0]);
        assert_eq!(g.coords(), vec![0.0, 2.0]);
        let back = Assignment::from_parts(&h, &g).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn moments_vanish_up_to_n_minus_2() {
        let t = lagrange_weights(&[0.0, 1.0, 2.0, 3.0], &PolySpec::f0()).unwrap();
        assert!(moment(&t, 2).unwrap().abs() < 1e-14);
        assert!((moment(&t, 3).unwrap() - 1.0).abs() < 1e-12);
        let sum: f64 = t.weights().iter().sum();
        assert!((moment(&t, 0).unwrap() - sum).abs() < 1e-15);
    }

    #[test]
    fn negative_moment_requires_positive_support() {
        let t = lagrange_weights(&[0.0, 1.0, 2.0], &PolySpec::f0()).unwrap();
        assert!(matches!(
            moment(&t, -1),
            Err(Error::NegativeMomentAtZero)
        ));
        let t = lagrange_weights(&[1.0, 2.0, 3.0], &PolySpec::f0()).unwrap();
        assert!(moment(&t, -1).is_ok());
    }

    #[test]
    fn transfer_oracle_examples() {
        // Two points: -1 / ((l + x1)(l + x2)).
        let val = transfer_oracle(&[1.0, 2.0], &PolySpec::f0(), 0.5).unwrap();
        assert!((val + 1.0 / (1.5 * 2.5)).abs() < 1e-15);
        // Worked four point case at lambda = 1.
        let val = transfer_oracle(&[0.0, 1.0, 2.0, 3.0], &PolySpec::f0(), 1.0).unwrap();
        assert!((val + 1.0 / 24.0).abs() < 1e-15);
        // Root of f: f(-lambda) = 0 at lambda = r with f = (r - x) evaluated
        // via eval(-r) = r - (-r)... the transfer vanishes where -f(-l) does.
        let f = PolySpec::from_roots(vec![2.0]);
        assert!(f.eval(2.0).abs() < 1e-15);
    }

    #[test]
    fn transfer_matches_sampled_sum() {
        // The sampled sum cancels many digits at large lambda, so agreement
        // is judged against the absolute-term magnitude, not the result.
        let coords = [0.0, 1.0, 2.0, 3.0];
        let f = PolySpec::f0();
        let t = lagrange_weights(&coords, &f).unwrap();
        for &l in &[1e-3, 0.1, 1.0, 17.0, 1e3] {
            let a = transfer_value(&t, l);
            let b = transfer_oracle(&coords, &f, l).unwrap();
            let base: f64 = t.points().iter().map(|pt| pt.p.abs() / (l + pt.x)).sum();
            assert!((a - b).abs() <= 1e-10 * base, "lambda {l}");
        }
    }

    #[test]
    fn validity_worked_cases() {
        let t = lagrange_weights(&[0.0, 1.0, 2.0, 3.0], &PolySpec::f0()).unwrap();
        assert_eq!(check_validity(&t, &GridConfig::default()).verdict, Verdict::Valid);

        let lone = Assignment::new([(1.0, 1.0)]).unwrap();
        assert_eq!(
            check_validity(&lone, &GridConfig::default()).verdict,
            Verdict::Invalid
        );

        let merge = lagrange_weights(&[0.0, 1.0, 2.0], &PolySpec::f0()).unwrap();
        assert_eq!(
            check_validity(&merge, &GridConfig::default()).verdict,
            Verdict::Valid
        );
    }

    #[test]
    fn near_threshold_is_inconclusive() {
        // Start from a valid merge and nudge one weight so the transfer peaks
        // barely above zero.
        let merge = lagrange_weights(&[0.0, 1.0, 2.0], &PolySpec::f0()).unwrap();
        let cfg = GridConfig::default();
        let mut bump = 1e-10;
        loop {
            let t = Assignment::new([
                (0.0, merge.weight_at(0.0)),
                (1.0, merge.weight_at(1.0) + bump),
                (2.0, merge.weight_at(2.0) - bump),
            ])
            .unwrap();
            let rep = check_validity(&t, &cfg);
            match rep.verdict {
                Verdict::Inconclusive => break,
                Verdict::Valid => bump *= 1.3,
                Verdict::Invalid => panic!("skipped the inconclusive band"),
            }
            assert!(bump < 1.0, "never left the valid band");
        }
    }

    #[test]
    fn one_tenth_move_packaging() {
        let (coords, f) = one_tenth_move(0.0, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0).unwrap();
        assert_eq!(coords, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(f.roots, vec![0.5, 5.0, 6.0]);
        assert!(one_tenth_move(1.0, 0.5, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0).is_err());

        let t = lagrange_weights(&coords, &f).unwrap();
        assert_eq!(
            check_validity(&t, &GridConfig::default()).verdict,
            Verdict::Valid
        );
    }

    #[test]
    fn assignment_json_shape() {
        let t = Assignment::new([(0.0, -0.5), (2.0, 0.5)]).unwrap();
        let js = serde_json::to_string(&t).unwrap();
        assert_eq!(js, r#"{"points":[{"x":0.0,"p":-0.5},{"x":2.0,"p":0.5}]}"#);
        let back: Assignment = serde_json::from_str(&js).unwrap();
        assert_eq!(back, t);
    }
}
