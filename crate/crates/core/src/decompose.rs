//! Decomposition of f-assignments into solvable pieces.
//!
//! A root `r` of the polynomial is a *right-root* when some coordinate lies
//! below it; splitting `(r - x) = (r - x_p) + (x_p - x)` peels it off into
//! two child assignments with positive coefficients. Roots below every
//! coordinate are *left-roots*; mapping `x -> 1/x` turns them into
//! right-roots at the cost of a monomial factor, after which peeling
//! finishes the job. The result is `t = sum_i alpha_i t_i` with every
//! `alpha_i > 0` and every `t_i` an f0, monomial or effectively monomial
//! assignment, each of which the solvers handle analytically.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::assignments::{lagrange_weights, Assignment, PolySpec};
use crate::error::Error;
use crate::solvers::{
    solve_effectively_monomial, solve_f0_balanced, solve_f0_unbalanced, solve_monomial,
};
use crate::verify::SolutionCertificate;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TermKind {
    F0,
    Monomial,
    EffectivelyMonomial,
}

/// One recorded transformation on the way from the input to a term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum TransformOp {
    Peel { root: f64, coordinate: f64 },
    Invert,
    Shift { c: f64 },
}

/// A positively weighted piece of the decomposition. `subset` lists the
/// original coordinates carrying the piece; for an effectively monomial
/// piece `power` is the monomial power of the reciprocal-coordinate
/// problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecompositionTerm {
    pub coefficient: f64,
    pub subset: Vec<f64>,
    pub kind: TermKind,
    pub power: usize,
    pub transform_chain: Vec<TransformOp>,
}

impl DecompositionTerm {
    /// The weight function of the piece (without the coefficient), on its
    /// own support.
    pub fn evaluate(&self) -> Result<Assignment> {
        match self.kind {
            TermKind::F0 => lagrange_weights(&self.subset, &PolySpec::f0()),
            TermKind::Monomial => lagrange_weights(&self.subset, &PolySpec::monomial(self.power)),
            TermKind::EffectivelyMonomial => {
                let mut omega: Vec<f64> = self.subset.iter().map(|x| 1.0 / x).collect();
                omega.reverse();
                let u = lagrange_weights(&omega, &PolySpec::monomial(self.power))?;
                // t(x_i) = -u(1/x_i): the reciprocal problem enters with a
                // sign flip.
                Assignment::new(
                    self.subset
                        .iter()
                        .map(|&x| (x, -u.weight_at(1.0 / x))),
                )
            }
        }
    }
}

/// Pointwise `sum_i alpha_i t_i` over the original support.
pub fn recombine(terms: &[DecompositionTerm]) -> Result<Assignment> {
    let mut acc: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
    for term in terms {
        let t = term.evaluate()?;
        for pt in t.points() {
            let e = acc.entry(pt.x.to_bits()).or_insert((pt.x, 0.0));
            e.1 += term.coefficient * pt.p;
        }
    }
    Assignment::new(acc.into_values())
}

/// The reciprocal-coordinate problem produced by turning left-roots into
/// right-roots. Solutions of the transformed problem are transposed on the
/// way back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertedProblem {
    pub omega: Vec<f64>,
    pub roots: Vec<f64>,
    pub monomial_power: usize,
}

/// Maps a problem whose roots all sit below the support to its reciprocal
/// form: coordinates `1/x` (re-sorted ascending), roots `1/l` (now above
/// every coordinate) and the residual monomial power `n - 2 - k - p` where
/// `p` is the incoming power.
pub fn invert_coordinates(
    coords: &[f64],
    left_roots: &[f64],
    residual_power: usize,
) -> Result<InvertedProblem> {
    let n = coords.len();
    let k = left_roots.len();
    if coords.iter().any(|&x| x <= 0.0) {
        return Err(Error::ZeroCoordinate(
            coords.iter().copied().fold(f64::INFINITY, f64::min),
        ));
    }
    for &l in left_roots {
        if l <= 0.0 || l >= coords[0] {
            return Err(Error::RootPlacement(format!(
                "{l} is not strictly inside (0, {})",
                coords[0]
            )));
        }
    }
    if k + residual_power > n - 2 {
        return Err(Error::DegreeTooHigh {
            degree: k + residual_power,
            points: n,
            max: n - 2,
        });
    }
    let mut omega: Vec<f64> = coords.iter().map(|x| 1.0 / x).collect();
    omega.reverse();
    let mut roots: Vec<f64> = left_roots.iter().map(|l| 1.0 / l).collect();
    roots.sort_by(f64::total_cmp);
    Ok(InvertedProblem {
        omega,
        roots,
        monomial_power: n - 2 - k - residual_power,
    })
}

/// Shifts all coordinates and roots by `c`; the assignment weights are
/// unchanged (the shifts cancel in every product difference), so the solver
/// output for the shifted problem is declared the solution of the original.
pub fn shift_origin(coords: &[f64], roots: &[f64], c: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if c < 0.0 || (c == 0.0 && coords.first() == Some(&0.0) && !roots.is_empty()) {
        return Err(Error::OrderingViolated(format!("shift {c} inadmissible")));
    }
    Ok((
        coords.iter().map(|x| x + c).collect(),
        roots.iter().map(|r| r + c).collect(),
    ))
}

/// Greedy maximal pairing: roots in ascending order each take the smallest
/// unused coordinate below them. Returns the coordinate index per root (in
/// the given root order), `None` for unmatched roots.
fn right_root_matching(coords: &[f64], roots: &[f64]) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..roots.len()).collect();
    order.sort_by(|&a, &b| roots[a].total_cmp(&roots[b]));
    let mut used = vec![false; coords.len()];
    let mut by_root = vec![None; roots.len()];
    for ri in order {
        let r = roots[ri];
        for (ci, &x) in coords.iter().enumerate() {
            if !used[ci] && x < r {
                used[ci] = true;
                by_root[ri] = Some(ci);
                break;
            }
        }
    }
    by_root
}

struct Node {
    /// Indices into the original coordinate list, ascending in x.
    idx: Vec<usize>,
    /// Roots in the current frame, ascending.
    roots: Vec<f64>,
    power: usize,
    inverted: bool,
    alpha: f64,
    chain: Vec<TransformOp>,
}

struct Decomposer<'a> {
    original: &'a [f64],
    allow_invert: bool,
    out: Vec<(Vec<usize>, TermKind, usize, f64, Vec<TransformOp>)>,
}

impl Decomposer<'_> {
    /// Coordinates of a node in its current frame, ascending.
    fn frame_coords(&self, node: &Node) -> Vec<f64> {
        if node.inverted {
            node.idx
                .iter()
                .rev()
                .map(|&i| 1.0 / self.original[i])
                .collect()
        } else {
            node.idx.iter().map(|&i| self.original[i]).collect()
        }
    }

    fn recurse(&mut self, node: Node) -> Result<()> {
        if node.roots.is_empty() {
            let kind = match (node.inverted, node.power) {
                (false, 0) => TermKind::F0,
                (false, _) => TermKind::Monomial,
                (true, _) => TermKind::EffectivelyMonomial,
            };
            self.out
                .push((node.idx, kind, node.power, node.alpha, node.chain));
            return Ok(());
        }

        let coords = self.frame_coords(&node);
        if node.roots.len() + node.power > coords.len().saturating_sub(2) {
            return Err(Error::DegreeTooHigh {
                degree: node.roots.len() + node.power,
                points: coords.len(),
                max: coords.len().saturating_sub(2),
            });
        }
        let matching = right_root_matching(&coords, &node.roots);

        // Peel the largest matched root against its paired coordinate.
        let peel = matching
            .iter()
            .enumerate()
            .filter_map(|(ri, m)| m.map(|ci| (ri, ci)))
            .max_by(|a, b| node.roots[a.0].total_cmp(&node.roots[b.0]));

        if let Some((ri, ci)) = peel {
            let root = node.roots[ri];
            let coordinate = coords[ci];
            let mut rest = node.roots.clone();
            rest.remove(ri);
            let mut chain = node.chain.clone();
            chain.push(TransformOp::Peel { root, coordinate });

            // Frame index -> original index: an inverted frame lists the
            // points in reverse.
            let drop_pos = if node.inverted {
                node.idx.len() - 1 - ci
            } else {
                ci
            };

            // Left child: all points, coefficient (r - x_p).
            self.recurse(Node {
                idx: node.idx.clone(),
                roots: rest.clone(),
                power: node.power,
                inverted: node.inverted,
                alpha: node.alpha * (root - coordinate),
                chain: chain.clone(),
            })?;
            // Right child: the paired point drops out.
            let mut idx = node.idx.clone();
            idx.remove(drop_pos);
            self.recurse(Node {
                idx,
                roots: rest,
                power: node.power,
                inverted: node.inverted,
                alpha: node.alpha,
                chain,
            })?;
            return Ok(());
        }

        // No root matchable: every root sits below the whole support.
        if !self.allow_invert {
            return Err(Error::RootPlacement(format!(
                "left-roots {:?} remain; route through invert_coordinates",
                node.roots
            )));
        }
        if node.inverted {
            return Err(Error::RootPlacement(
                "left-roots after inversion; inadmissible input".into(),
            ));
        }
        let inv = invert_coordinates(&coords, &node.roots, node.power)?;
        // Positive factor prod(l) / prod(x) pulled out by the reciprocal
        // substitution.
        let c: f64 = node.roots.iter().product::<f64>()
            / coords.iter().product::<f64>();
        let mut chain = node.chain;
        chain.push(TransformOp::Invert);
        self.recurse(Node {
            idx: node.idx,
            roots: inv.roots,
            power: inv.monomial_power,
            inverted: true,
            alpha: node.alpha * c,
            chain,
        })
    }
}

fn run_decomposition(
    coords: &[f64],
    roots: &[f64],
    allow_invert: bool,
) -> Result<Vec<DecompositionTerm>> {
    let n = coords.len();
    if n < 2 {
        return Err(Error::DegenerateCoordinates("fewer than two points".into()));
    }
    if coords.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::DegenerateCoordinates(format!("{coords:?}")));
    }
    if roots.len() > n - 2 {
        return Err(Error::DegreeTooHigh {
            degree: roots.len(),
            points: n,
            max: n - 2,
        });
    }
    for &r in roots {
        if r < 0.0 {
            return Err(Error::RootPlacement(format!("negative root {r}")));
        }
        if coords.contains(&r) {
            return Err(Error::RootPlacement(format!(
                "root {r} coincides with a coordinate"
            )));
        }
    }
    let mut sorted_roots = roots.to_vec();
    sorted_roots.sort_by(f64::total_cmp);

    let mut dec = Decomposer {
        original: coords,
        allow_invert,
        out: Vec::new(),
    };
    dec.recurse(Node {
        idx: (0..n).collect(),
        roots: sorted_roots,
        power: 0,
        inverted: false,
        alpha: 1.0,
        chain: Vec::new(),
    })?;

    // Merge identical leaves (same support, kind and power), summing the
    // coefficients; the first-seen chain documents the route.
    let mut merged: BTreeMap<(Vec<usize>, TermKind, usize), (f64, Vec<TransformOp>)> =
        BTreeMap::new();
    for (idx, kind, power, alpha, chain) in dec.out {
        merged
            .entry((idx, kind, power))
            .and_modify(|e| e.0 += alpha)
            .or_insert((alpha, chain));
    }
    Ok(merged
        .into_iter()
        .map(|((idx, kind, power), (alpha, chain))| DecompositionTerm {
            coefficient: alpha,
            subset: idx.iter().map(|&i| coords[i]).collect(),
            kind,
            power,
            transform_chain: chain,
        })
        .collect())
}

/// Peels right-roots only; errors when a left-root remains, directing the
/// caller to the inversion path.
pub fn peel_right_roots(coords: &[f64], roots: &[f64]) -> Result<Vec<DecompositionTerm>> {
    run_decomposition(coords, roots, false)
}

/// Full reduction: right-roots peel off; residual all-left leaves pass
/// through the reciprocal transform and peel again. Requires strictly
/// positive coordinates (shift the origin first when needed).
pub fn decompose_f_assignment(coords: &[f64], roots: &[f64]) -> Result<Vec<DecompositionTerm>> {
    if coords.first().is_some_and(|&x| x <= 0.0) {
        return Err(Error::ZeroCoordinate(coords[0]));
    }
    run_decomposition(coords, roots, true)
}

/// One solved decomposition piece.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolvedPiece {
    pub term: DecompositionTerm,
    pub o: Vec<Vec<f64>>,
    pub certificate: SolutionCertificate,
}

/// End-to-end driver: decomposes `t` and dispatches each piece to its
/// solver (transposing back the effectively monomial ones). A zero first
/// coordinate is shifted away by `c = 1` up front; the shift leaves both
/// the weights and the solving matrices unchanged.
///
/// For protocol use, the per-piece matrices suffice: a scaled-down
/// application against a catalyst weight realises the original function.
/// Assembling that catalyst sequence is outside this crate.
pub fn solve_f_assignment(coords: &[f64], roots: &[f64]) -> Result<Vec<SolvedPiece>> {
    let (coords, roots, shift) = if coords.first().is_some_and(|&x| x == 0.0) {
        let (c, r) = shift_origin(coords, roots, 1.0)?;
        (c, r, Some(1.0))
    } else {
        (coords.to_vec(), roots.to_vec(), None)
    };
    let mut terms = decompose_f_assignment(&coords, &roots)?;
    if let Some(c) = shift {
        for term in &mut terms {
            term.transform_chain.insert(0, TransformOp::Shift { c });
        }
    }

    let mut pieces = Vec::with_capacity(terms.len());
    for term in terms {
        let t = term.evaluate()?;
        let (o, certificate): (DMatrix<f64>, SolutionCertificate) = match term.kind {
            TermKind::F0 => {
                if t.len() % 2 == 0 {
                    solve_f0_balanced(&t)?
                } else {
                    solve_f0_unbalanced(&t)?
                }
            }
            TermKind::Monomial => solve_monomial(&t, term.power)?,
            TermKind::EffectivelyMonomial => solve_effectively_monomial(&t)?,
        };
        pieces.push(SolvedPiece {
            term,
            o: (0..o.nrows())
                .map(|i| (0..o.ncols()).map(|j| o[(i, j)]).collect())
                .collect(),
            certificate,
        });
    }
    Ok(pieces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assignments::{check_validity, GridConfig, Verdict};

    fn max_residual(coords: &[f64], roots: &[f64], terms: &[DecompositionTerm]) -> f64 {
        let t = lagrange_weights(coords, &PolySpec::from_roots(roots.to_vec())).unwrap();
        let back = recombine(terms).unwrap();
        let scale = t.weights().iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        coords
            .iter()
            .map(|&x| (t.weight_at(x) - back.weight_at(x)).abs())
            .fold(0.0, f64::max)
            / scale
    }

    #[test]
    fn peel_single_right_root() {
        let terms = peel_right_roots(&[0.0, 1.0, 2.0], &[3.0]).unwrap();
        assert_eq!(terms.len(), 2);
        let full = terms.iter().find(|t| t.subset.len() == 3).unwrap();
        let reduced = terms.iter().find(|t| t.subset.len() == 2).unwrap();
        assert!((full.coefficient - 3.0).abs() < 1e-15);
        assert!((reduced.coefficient - 1.0).abs() < 1e-15);
        assert_eq!(reduced.subset, vec![1.0, 2.0]);
        assert!(terms.iter().all(|t| t.kind == TermKind::F0));
        // Recombined weights reproduce (-3/2, 2, -1/2).
        let back = recombine(&terms).unwrap();
        assert!((back.weight_at(0.0) + 1.5).abs() < 1e-14);
        assert!((back.weight_at(1.0) - 2.0).abs() < 1e-14);
        assert!((back.weight_at(2.0) + 0.5).abs() < 1e-14);
    }

    #[test]
    fn no_roots_is_identity() {
        let terms = peel_right_roots(&[0.5, 1.5, 3.0], &[]).unwrap();
        assert_eq!(terms.len(), 1);
        assert_eq!(terms[0].kind, TermKind::F0);
        assert!((terms[0].coefficient - 1.0).abs() < 1e-15);
    }

    #[test]
    fn one_tenth_move_peels_to_f0() {
        let coords = [1.0, 2.0, 3.0, 4.0, 5.0];
        let roots = [1.5, 6.0, 7.0];
        let terms = decompose_f_assignment(&coords, &roots).unwrap();
        assert!(terms.len() <= 8, "at most 2^3 leaves, got {}", terms.len());
        assert!(terms.iter().all(|t| t.kind == TermKind::F0));
        assert!(terms.iter().all(|t| t.subset.len() >= 2));
        assert!(terms.iter().all(|t| t.coefficient > 0.0));
        assert!(max_residual(&coords, &roots, &terms) < 1e-12);
    }

    #[test]
    fn left_root_forces_inversion_path() {
        let err = peel_right_roots(&[1.0, 2.0, 3.0], &[0.5]).unwrap_err();
        assert!(matches!(err, Error::RootPlacement(_)));

        // The reciprocal problem has one right-root left to peel, giving
        // two reciprocal-side pieces.
        let terms = decompose_f_assignment(&[1.0, 2.0, 3.0], &[0.5]).unwrap();
        assert_eq!(terms.len(), 2);
        for term in &terms {
            assert_eq!(term.kind, TermKind::EffectivelyMonomial);
            assert_eq!(term.power, 0);
            assert!(term.coefficient > 0.0);
            assert!(term
                .transform_chain
                .iter()
                .any(|op| matches!(op, TransformOp::Invert)));
        }
        assert!(max_residual(&[1.0, 2.0, 3.0], &[0.5], &terms) < 1e-12);
    }

    #[test]
    fn invert_worked_example() {
        let inv = invert_coordinates(&[1.0, 2.0, 3.0], &[0.5], 0).unwrap();
        assert_eq!(inv.omega, vec![1.0 / 3.0, 0.5, 1.0]);
        assert_eq!(inv.roots, vec![2.0]);
        assert_eq!(inv.monomial_power, 0);
        // The worked weights of the left-root problem.
        let t = lagrange_weights(&[1.0, 2.0, 3.0], &PolySpec::from_roots(vec![0.5])).unwrap();
        let expect = [0.25, -1.5, 1.25];
        for (a, b) in t.weights().iter().zip(expect) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(t.weights().iter().sum::<f64>().abs() < 1e-14);
    }

    #[test]
    fn double_inversion_is_identity() {
        let inv = invert_coordinates(&[1.0, 2.0, 4.0, 8.0], &[0.25, 0.5], 0).unwrap();
        let back = invert_coordinates(&inv.omega, &[], 0);
        // Roots moved to the right; inverting the coordinates again (no
        // roots any more) recovers the original support.
        let omega_back: Vec<f64> = back.unwrap().omega;
        for (a, b) in omega_back.iter().zip([1.0, 2.0, 4.0, 8.0]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn reciprocal_weight_identity() {
        // m_0 weights on the reciprocals equal the negated top-power
        // weights on the originals, up to the global positive factor.
        let coords = [1.0, 2.0, 3.0, 4.0];
        let p_top = lagrange_weights(&coords, &PolySpec::monomial(2)).unwrap();
        let mut omega: Vec<f64> = coords.iter().map(|x| 1.0 / x).collect();
        omega.reverse();
        let q0 = lagrange_weights(&omega, &PolySpec::f0()).unwrap();
        let ratio = -q0.weight_at(1.0) / p_top.weight_at(1.0);
        assert!(ratio > 0.0);
        for &x in &coords {
            let lhs = q0.weight_at(1.0 / x);
            let rhs = -ratio * p_top.weight_at(x);
            assert!((lhs - rhs).abs() < 1e-12 * ratio, "x = {x}");
        }
    }

    #[test]
    fn shift_origin_identities() {
        let (c, r) = shift_origin(&[0.0, 1.0, 2.0, 3.0], &[], 1.0).unwrap();
        assert_eq!(c, vec![1.0, 2.0, 3.0, 4.0]);
        assert!(r.is_empty());
        let w0 = lagrange_weights(&[0.0, 1.0, 2.0, 3.0], &PolySpec::f0()).unwrap();
        let w1 = lagrange_weights(&c, &PolySpec::f0()).unwrap();
        assert_eq!(w0.weights(), w1.weights());

        let (c, _) = shift_origin(&[1.0, 2.0], &[], 0.0).unwrap();
        assert_eq!(c, vec![1.0, 2.0]);
    }

    #[test]
    fn split_shape_produces_non_f0_term() {
        // Seven points with four right-roots and one left-root: the split
        // configuration, not expressible by f0 pieces alone.
        let coords = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
        let roots = [0.5, 2.5, 3.5, 4.5, 5.5];
        let terms = decompose_f_assignment(&coords, &roots).unwrap();
        assert!(terms.iter().any(|t| t.kind != TermKind::F0));
        assert!(terms.iter().all(|t| t.coefficient > 0.0));
        assert!(max_residual(&coords, &roots, &terms) < 1e-10);
    }

    #[test]
    fn terms_are_individually_valid() {
        let coords = [1.0, 2.0, 3.0, 4.0, 5.0];
        let roots = [0.5, 6.0];
        let terms = decompose_f_assignment(&coords, &roots).unwrap();
        for term in &terms {
            let t = term.evaluate().unwrap();
            let rep = check_validity(&t, &GridConfig::default());
            assert_eq!(rep.verdict, Verdict::Valid, "term {term:?}");
        }
    }

    #[test]
    fn solve_pipeline_trivial_f0() {
        let pieces = solve_f_assignment(&[0.0, 1.0, 2.0, 3.0], &[]).unwrap();
        assert_eq!(pieces.len(), 1);
        assert!(pieces[0].certificate.passed());
        // The shift leaves the solving matrix alone.
        let t = lagrange_weights(&[0.0, 1.0, 2.0, 3.0], &PolySpec::f0()).unwrap();
        let (o, _) = solve_f0_balanced(&t).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((pieces[0].o[i][j] - o[(i, j)]).abs() < 1e-9);
            }
        }
        assert_eq!(
            pieces[0].term.transform_chain,
            vec![TransformOp::Shift { c: 1.0 }]
        );
    }

    #[test]
    fn solve_pipeline_one_tenth_move() {
        let pieces = solve_f_assignment(&[0.0, 1.0, 2.0, 3.0, 4.0], &[0.5, 5.0, 6.0]).unwrap();
        assert!(!pieces.is_empty());
        for p in &pieces {
            assert_eq!(p.term.kind, TermKind::F0);
            assert!(p.certificate.passed(), "term {:?}", p.term);
        }
    }

    #[test]
    fn solve_pipeline_with_inversion() {
        let pieces = solve_f_assignment(&[1.0, 2.0, 3.0], &[0.5]).unwrap();
        assert_eq!(pieces.len(), 2);
        for p in &pieces {
            assert_eq!(p.term.kind, TermKind::EffectivelyMonomial);
            assert!(p.certificate.passed(), "term {:?}", p.term);
        }
    }
}
