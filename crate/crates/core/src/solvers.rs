//! Schedule planning and end-to-end construction of the solving matrix.
//!
//! Every solvable assignment family comes with an exact plan: which map to
//! apply at which rank, and which moment `<x^mu>` of the underlying weights
//! controls the contact and component conditions at each step. The planner
//! derives the plan from the point count and monomial power alone; the
//! executor applies the maps, records one rank-one slice of the solution per
//! iteration, and asserts at every step that the measured gaps vanish (or
//! stay away from zero) exactly where the power bookkeeping predicts.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::assignments::{lagrange_weights, split_h_g, Assignment, PolySpec};
use crate::ellipsoid::orth_component_vector;
use crate::error::Error;
use crate::instances::{
    build_instance, flip, normal_init, weingarten_iterate, wiggle_iterate_v, wiggle_iterate_w,
    wiggle_normal_init_v, wiggle_normal_init_w, ExtendedMatrixInstance, InstanceShape,
};
use crate::verify::{verify_solution, SolutionCertificate, VerifyConfig};
use crate::Result;

/// Measured gap below this multiple of the local scale counts as "vanishes".
pub const GAP_ZERO_TOL: f64 = 1e-9;
/// Measured gap above this multiple of the local scale counts as "bounded
/// away from zero" at a predicted failure step.
pub const GAP_NONZERO_MIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapTag {
    U,
    W,
    Uw,
    Uv,
    Ww,
    Wv,
    F,
    Terminal,
}

impl MapTag {
    pub fn as_str(self) -> &'static str {
        match self {
            MapTag::U => "U",
            MapTag::W => "W",
            MapTag::Uw => "U_w",
            MapTag::Uv => "U_v",
            MapTag::Ww => "W_w",
            MapTag::Wv => "W_v",
            MapTag::F => "F",
            MapTag::Terminal => "terminal",
        }
    }
}

/// One planned map application. Normal-initialisation steps carry the
/// moment exponents that control the gaps of the instance they act on,
/// together with the prediction of whether each moment vanishes.
///
/// `gap_checked` is cleared on steps downstream of a wiggle iteration:
/// from then on the vanishing-eps family's vectors carry sqrt(eps)
/// components along the padded directions, so the finite-part gaps of the
/// limit instance stop measuring the family's contact and component values.
/// The tilt feasibility check inside the wiggle initialisations carries the
/// contact identity in the limit instead.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleStep {
    pub op: MapTag,
    pub rank: usize,
    pub contact_power: Option<i64>,
    pub component_power: Option<i64>,
    pub contact_zero: bool,
    pub component_zero: bool,
    pub gap_checked: bool,
}

impl ScheduleStep {
    fn plain(op: MapTag, rank: usize) -> Self {
        ScheduleStep {
            op,
            rank,
            contact_power: None,
            component_power: None,
            contact_zero: false,
            component_zero: false,
            gap_checked: false,
        }
    }

    fn init(op: MapTag, rank: usize, contact: i64, component: i64, n_points: usize) -> Self {
        let zero = |p: i64| p >= 0 && p <= n_points as i64 - 2;
        ScheduleStep {
            op,
            rank,
            contact_power: Some(contact),
            component_power: Some(component),
            contact_zero: zero(contact),
            component_zero: zero(component),
            gap_checked: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleCase {
    F0Balanced,
    F0Unbalanced,
    MonomialAligned,
    MonomialMisaligned,
    MonomialUnbalancedWv,
    MonomialUnbalancedWw,
    SimplestMonomial,
}

/// Planned sequence of map applications with predicted moment powers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationSchedule {
    pub case: ScheduleCase,
    pub n_points: usize,
    pub m: usize,
    pub dim: usize,
    pub shape: InstanceShape,
    pub steps: Vec<ScheduleStep>,
}

impl IterationSchedule {
    /// Number of rank-one terms the execution will record.
    pub fn term_count(&self) -> usize {
        let from_iters = self
            .steps
            .iter()
            .filter(|s| matches!(s.op, MapTag::W | MapTag::Ww | MapTag::Wv))
            .count();
        let terminal = match self.steps.last() {
            Some(s) if s.op == MapTag::Terminal => {
                if s.rank == 1 {
                    1
                } else {
                    2
                }
            }
            _ => 0,
        };
        from_iters + terminal
    }
}

/// Plans the exact map chain for a case. `n_points` is the support size of
/// the assignment and `m` the monomial power (0 for the f0 cases).
pub fn plan_schedule(case: ScheduleCase, n_points: usize, m: usize) -> Result<IterationSchedule> {
    let np = n_points;
    let mut steps = Vec::new();
    let (dim, shape) = match case {
        ScheduleCase::F0Balanced => {
            if np < 2 || np % 2 != 0 || m != 0 {
                return Err(Error::PowerOutOfRange { m, points: np });
            }
            let n = np / 2;
            for r in (1..=n).rev() {
                let kappa = (n - r) as i64;
                steps.push(ScheduleStep::init(MapTag::U, r, 2 * kappa + 1, 2 * kappa + 2, np));
                if r > 1 {
                    steps.push(ScheduleStep::plain(MapTag::W, r));
                }
            }
            steps.push(ScheduleStep::plain(MapTag::Terminal, 1));
            (n, InstanceShape::Balanced)
        }
        ScheduleCase::F0Unbalanced => {
            if np < 3 || np % 2 != 1 || m != 0 {
                return Err(Error::PowerOutOfRange { m, points: np });
            }
            let n = (np + 1) / 2;
            for r in (3..=n).rev() {
                let kappa = (n - r) as i64;
                steps.push(ScheduleStep::init(MapTag::U, r, 2 * kappa + 1, 2 * kappa + 2, np));
                steps.push(ScheduleStep::plain(MapTag::W, r));
            }
            let kappa = (n - 2) as i64;
            steps.push(ScheduleStep::init(MapTag::Uw, 2, 2 * kappa + 1, 2 * kappa + 2, np));
            steps.push(ScheduleStep::plain(MapTag::Terminal, 2));
            (n, InstanceShape::PadHInfinite)
        }
        ScheduleCase::SimplestMonomial => {
            if np < 2 || np % 2 != 0 || m != np - 2 {
                return Err(Error::PowerOutOfRange { m, points: np });
            }
            let n = np / 2;
            let mi = m as i64;
            steps.push(ScheduleStep::plain(MapTag::F, n));
            for r in (1..=n).rev() {
                let l = (n - r) as i64;
                steps.push(ScheduleStep::init(MapTag::U, r, mi - 2 * l - 1, mi - 2 * l - 2, np));
                if r > 1 {
                    steps.push(ScheduleStep::plain(MapTag::W, r));
                }
            }
            steps.push(ScheduleStep::plain(MapTag::Terminal, 1));
            (n, InstanceShape::Balanced)
        }
        ScheduleCase::MonomialAligned => {
            let n = np / 2;
            if np % 2 != 0 || m % 2 != 0 || m == 0 || m >= np - 2 {
                return Err(Error::PowerOutOfRange { m, points: np });
            }
            let mi = m as i64;
            let k = (np - 2 - m) / 2;
            for kappa in 0..k {
                let r = n - kappa;
                let ki = kappa as i64;
                steps.push(ScheduleStep::init(MapTag::U, r, mi + 2 * ki + 1, mi + 2 * ki + 2, np));
                steps.push(ScheduleStep::plain(MapTag::W, r));
            }
            steps.push(ScheduleStep::plain(MapTag::F, n - k));
            for r in (1..=(n - k)).rev() {
                let l = (n - k - r) as i64;
                steps.push(ScheduleStep::init(MapTag::U, r, mi - 2 * l - 1, mi - 2 * l - 2, np));
                if r > 1 {
                    steps.push(ScheduleStep::plain(MapTag::W, r));
                }
            }
            steps.push(ScheduleStep::plain(MapTag::Terminal, 1));
            (n, InstanceShape::Balanced)
        }
        ScheduleCase::MonomialMisaligned => {
            let n = np / 2;
            if np % 2 != 0 || m % 2 != 1 || m >= np - 2 {
                return Err(Error::PowerOutOfRange { m, points: np });
            }
            let eta = n + 1;
            let mi = m as i64;
            let k = (np - 3 - m) / 2;
            for kappa in 0..k {
                let r = eta - kappa;
                let ki = kappa as i64;
                steps.push(ScheduleStep::init(MapTag::U, r, mi + 2 * ki + 1, mi + 2 * ki + 2, np));
                steps.push(ScheduleStep::plain(MapTag::W, r));
            }
            steps.push(ScheduleStep::plain(MapTag::F, eta - k));
            for r in (4..=(eta - k)).rev() {
                let l = (eta - k - r) as i64;
                steps.push(ScheduleStep::init(MapTag::U, r, mi - 2 * l - 1, mi - 2 * l - 2, np));
                steps.push(ScheduleStep::plain(MapTag::W, r));
            }
            let l3 = (eta - k - 3) as i64;
            steps.push(ScheduleStep::init(MapTag::Uv, 3, mi - 2 * l3 - 1, mi - 2 * l3 - 2, np));
            steps.push(ScheduleStep::plain(MapTag::Wv, 3));
            steps.push(ScheduleStep::plain(MapTag::F, 2));
            let ki = k as i64;
            steps.push(ScheduleStep::init(MapTag::Uw, 2, 2 * ki + mi + 1, 2 * ki + mi + 2, np));
            steps.push(ScheduleStep::plain(MapTag::Terminal, 2));
            (eta, InstanceShape::PadBoth)
        }
        ScheduleCase::MonomialUnbalancedWv => {
            let n = (np + 1) / 2;
            if np % 2 != 1 || m % 2 != 1 || m + 2 >= np {
                return Err(Error::PowerOutOfRange { m, points: np });
            }
            let mi = m as i64;
            let k = (np - 2 - m) / 2;
            for kappa in 0..k {
                let r = n - kappa;
                let ki = kappa as i64;
                steps.push(ScheduleStep::init(MapTag::U, r, mi + 2 * ki + 1, mi + 2 * ki + 2, np));
                steps.push(ScheduleStep::plain(MapTag::W, r));
            }
            steps.push(ScheduleStep::plain(MapTag::F, n - k));
            for r in (3..=(n - k)).rev() {
                let l = (n - k - r) as i64;
                steps.push(ScheduleStep::init(MapTag::U, r, mi - 2 * l - 1, mi - 2 * l - 2, np));
                steps.push(ScheduleStep::plain(MapTag::W, r));
            }
            let l2 = (n - k - 2) as i64;
            steps.push(ScheduleStep::init(MapTag::Uv, 2, mi - 2 * l2 - 1, mi - 2 * l2 - 2, np));
            steps.push(ScheduleStep::plain(MapTag::Terminal, 2));
            (n, InstanceShape::PadGZero)
        }
        ScheduleCase::MonomialUnbalancedWw => {
            let n = (np + 1) / 2;
            if np % 2 != 1 || m % 2 != 0 || m == 0 || m + 2 >= np {
                return Err(Error::PowerOutOfRange { m, points: np });
            }
            let mi = m as i64;
            let k = m / 2;
            steps.push(ScheduleStep::plain(MapTag::F, n));
            for kappa in 0..k {
                let r = n - kappa;
                let ki = kappa as i64;
                steps.push(ScheduleStep::init(MapTag::U, r, mi - 2 * ki - 1, mi - 2 * ki - 2, np));
                steps.push(ScheduleStep::plain(MapTag::W, r));
            }
            steps.push(ScheduleStep::plain(MapTag::F, n - k));
            for r in (3..=(n - k)).rev() {
                let l = (n - k - r) as i64;
                steps.push(ScheduleStep::init(MapTag::U, r, mi + 2 * l + 1, mi + 2 * l + 2, np));
                steps.push(ScheduleStep::plain(MapTag::W, r));
            }
            let l2 = (n - k - 2) as i64;
            steps.push(ScheduleStep::init(MapTag::Uw, 2, mi + 2 * l2 + 1, mi + 2 * l2 + 2, np));
            steps.push(ScheduleStep::plain(MapTag::Terminal, 2));
            (n, InstanceShape::PadHInfinite)
        }
    };
    // Finite-part gaps are only faithful until the first wiggle iteration.
    let mut wiggled = false;
    for step in &mut steps {
        if wiggled {
            step.gap_checked = false;
        }
        if matches!(step.op, MapTag::Ww | MapTag::Wv) {
            wiggled = true;
        }
    }
    let schedule = IterationSchedule {
        case,
        n_points: np,
        m,
        dim,
        shape,
        steps,
    };
    debug_assert_eq!(schedule.term_count(), dim, "one term per rank");
    Ok(schedule)
}

/// One executed step, with the gaps measured right before the map ran.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub op: String,
    pub rank: usize,
    pub contact_gap: f64,
    pub component_gap: f64,
}

/// Walks a schedule over an instance, recording one `|u_h><u_g|` slice per
/// iteration step, and returns the assembled matrix with the step log.
pub fn execute_schedule(
    schedule: &IterationSchedule,
    base: &ExtendedMatrixInstance,
) -> Result<(DMatrix<f64>, Vec<StepRecord>)> {
    let dim = base.dim();
    let mut inst = base.clone();
    let mut terms: Vec<(nalgebra::DVector<f64>, nalgebra::DVector<f64>)> = Vec::new();
    let mut log = Vec::new();

    for (idx, step) in schedule.steps.iter().enumerate() {
        let fail = |detail: String| Error::ScheduleAssertion {
            step: idx,
            op: step.op.as_str().into(),
            rank: step.rank,
            detail,
        };
        if inst.rank != step.rank {
            return Err(fail(format!("instance rank is {}", inst.rank)));
        }
        match step.op {
            MapTag::U => {
                inst = normal_init(&inst)?;
                check_gaps(&inst, step, idx)?;
                log.push(record(&inst, step.op));
            }
            MapTag::Uw => {
                inst = wiggle_normal_init_w(&inst)?;
                check_gaps(&inst, step, idx)?;
                log.push(record(&inst, step.op));
            }
            MapTag::Uv => {
                inst = wiggle_normal_init_v(&inst)?;
                check_gaps(&inst, step, idx)?;
                log.push(record(&inst, step.op));
            }
            MapTag::W => {
                push_term(&mut terms, &inst, idx, step)?;
                inst = weingarten_iterate(&inst)?;
            }
            MapTag::Ww => {
                push_term(&mut terms, &inst, idx, step)?;
                inst = wiggle_iterate_w(&inst)?;
            }
            MapTag::Wv => {
                push_term(&mut terms, &inst, idx, step)?;
                inst = wiggle_iterate_v(&inst)?;
            }
            MapTag::F => {
                inst = flip(&inst);
                log.push(record(&inst, step.op));
            }
            MapTag::Terminal => {
                push_term(&mut terms, &inst, idx, step)?;
                if step.rank == 2 {
                    let (u_h, u_g) = (
                        terms.last().expect("just pushed").0.clone(),
                        terms.last().expect("just pushed").1.clone(),
                    );
                    let last_h = orth_component_vector(&u_h, &inst.w)?;
                    let last_g = orth_component_vector(&u_g, &inst.v)?;
                    terms.push((last_h, last_g));
                }
                log.push(record(&inst, step.op));
            }
        }
    }

    if terms.len() != dim {
        return Err(Error::ScheduleAssertion {
            step: schedule.steps.len(),
            op: "assemble".into(),
            rank: 0,
            detail: format!("{} terms for dimension {dim}", terms.len()),
        });
    }
    let mut o = DMatrix::zeros(dim, dim);
    for (u_h, u_g) in &terms {
        o += u_h * u_g.transpose();
    }
    let orth = (o.transpose() * &o - DMatrix::identity(dim, dim)).amax();
    if orth > 1e-10 {
        return Err(Error::ScheduleAssertion {
            step: schedule.steps.len(),
            op: "assemble".into(),
            rank: 0,
            detail: format!("orthogonality residual {orth:.3e}"),
        });
    }
    Ok((o, log))
}

fn record(inst: &ExtendedMatrixInstance, op: MapTag) -> StepRecord {
    StepRecord {
        op: op.as_str().into(),
        rank: inst.rank,
        contact_gap: inst.contact_gap(),
        component_gap: inst.component_gap(),
    }
}

fn push_term(
    terms: &mut Vec<(nalgebra::DVector<f64>, nalgebra::DVector<f64>)>,
    inst: &ExtendedMatrixInstance,
    idx: usize,
    step: &ScheduleStep,
) -> Result<()> {
    match (&inst.u_h, &inst.u_g) {
        (Some(a), Some(b)) => {
            terms.push((a.clone(), b.clone()));
            Ok(())
        }
        _ => Err(Error::ScheduleAssertion {
            step: idx,
            op: step.op.as_str().into(),
            rank: step.rank,
            detail: "normals not initialised before iteration".into(),
        }),
    }
}

/// Asserts the measured gaps against the planned moment predictions: a gap
/// whose controlling moment vanishes must measure ~0, and the first
/// predicted failure must be bounded away from zero.
fn check_gaps(inst: &ExtendedMatrixInstance, step: &ScheduleStep, idx: usize) -> Result<()> {
    if !step.gap_checked {
        return Ok(());
    }
    let scale = inst.gap_scale();
    let checks = [
        ("contact", inst.contact_gap(), step.contact_zero),
        ("component", inst.component_gap(), step.component_zero),
    ];
    for (name, gap, expect_zero) in checks {
        let ok = if expect_zero {
            gap.abs() <= GAP_ZERO_TOL * scale
        } else {
            gap.abs() > GAP_NONZERO_MIN * scale
        };
        if !ok {
            return Err(Error::ScheduleAssertion {
                step: idx,
                op: step.op.as_str().into(),
                rank: step.rank,
                detail: format!(
                    "{name} gap {gap:.3e} vs scale {scale:.3e} (expected {})",
                    if expect_zero { "zero" } else { "nonzero" }
                ),
            });
        }
    }
    Ok(())
}

/// A solved decomposition piece: the matrix, its certificate and the case
/// that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolvedTerm {
    pub case: ScheduleCase,
    pub o: Vec<Vec<f64>>,
    pub certificate: SolutionCertificate,
}

/// Checks that `t` matches the assignment generated by `f` on its own
/// support up to a positive multiplicative factor, returning that factor.
fn match_pattern(t: &Assignment, f: &PolySpec) -> Result<f64> {
    let expected = lagrange_weights(&t.coords(), f)?;
    if expected.len() != t.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{f:?}"),
            detail: "a weight vanished on the support".into(),
        });
    }
    let scale = t.points()[0].p / expected.points()[0].p;
    if !(scale > 0.0) {
        return Err(Error::ShapeMismatch {
            expected: format!("{f:?}"),
            detail: format!("negative or zero scale {scale}"),
        });
    }
    let emax = expected
        .weights()
        .iter()
        .fold(0.0f64, |a, &b| a.max(b.abs()));
    for (tp, ep) in t.points().iter().zip(expected.points()) {
        if (tp.p - scale * ep.p).abs() > 1e-9 * scale * emax {
            return Err(Error::ShapeMismatch {
                expected: format!("{f:?}"),
                detail: format!("weight {} at {} off pattern", tp.p, tp.x),
            });
        }
    }
    Ok(scale)
}

fn run_case(
    t: &Assignment,
    case: ScheduleCase,
    m: usize,
) -> Result<(DMatrix<f64>, SolutionCertificate)> {
    let schedule = plan_schedule(case, t.len(), m)?;
    let inst = monomial_instance(t, schedule.shape, m)?;
    let (o, log) = execute_schedule(&schedule, &inst)?;
    let mut cert = verify_solution(&inst, &o, &VerifyConfig::default())?;
    cert.step_log = log;
    Ok((o, cert))
}

/// Builds the instance for a power-`m` assignment `t`. The probability
/// vectors carry `sqrt(p x^m)` where `p` are the underlying power-zero
/// magnitudes, i.e. exactly the square roots of `|t|`.
fn monomial_instance(
    t: &Assignment,
    shape: InstanceShape,
    m: usize,
) -> Result<ExtendedMatrixInstance> {
    let (h_t, g_t) = split_h_g(t);
    let base = |part: &Assignment| {
        Assignment::new(
            part.points()
                .iter()
                .map(|pt| (pt.x, pt.p / pt.x.powi(m as i32))),
        )
    };
    let (h, g) = if m == 0 {
        (h_t, g_t)
    } else {
        (base(&h_t)?, base(&g_t)?)
    };
    build_instance(&h, &g, shape, m)
}

/// Solves a balanced f0 assignment (even point count, alternating signs).
pub fn solve_f0_balanced(t: &Assignment) -> Result<(DMatrix<f64>, SolutionCertificate)> {
    match_pattern(t, &PolySpec::f0())?;
    if t.len() % 2 != 0 {
        return Err(Error::ShapeMismatch {
            expected: "balanced f0 (even point count)".into(),
            detail: format!("{} points", t.len()),
        });
    }
    run_case(t, ScheduleCase::F0Balanced, 0)
}

/// Solves an unbalanced f0 assignment (odd point count); the solution and
/// its certificate hold in the vanishing-eps limit.
pub fn solve_f0_unbalanced(t: &Assignment) -> Result<(DMatrix<f64>, SolutionCertificate)> {
    match_pattern(t, &PolySpec::f0())?;
    if t.len() % 2 != 1 {
        return Err(Error::ShapeMismatch {
            expected: "unbalanced f0 (odd point count)".into(),
            detail: format!("{} points", t.len()),
        });
    }
    run_case(t, ScheduleCase::F0Unbalanced, 0)
}

/// Solves a balanced monomial assignment of power `m`. The boundary powers
/// 0 and `2n-2` reduce to the f0 routes (the latter through the reciprocal
/// transpose equivalence).
pub fn solve_monomial_balanced(
    t: &Assignment,
    m: usize,
) -> Result<(DMatrix<f64>, SolutionCertificate)> {
    let np = t.len();
    if np % 2 != 0 || m > np - 2 {
        return Err(Error::PowerOutOfRange { m, points: np });
    }
    if m == 0 {
        return solve_f0_balanced(t);
    }
    match_pattern(t, &PolySpec::monomial(m))?;
    require_positive(t)?;
    if m == np - 2 {
        return solve_via_reciprocal(t, m);
    }
    let case = if m % 2 == 0 {
        ScheduleCase::MonomialAligned
    } else {
        ScheduleCase::MonomialMisaligned
    };
    run_case(t, case, m)
}

/// Solves an unbalanced monomial assignment of power `m`; ends delegate to
/// the f0 routes as in the balanced case.
pub fn solve_monomial_unbalanced(
    t: &Assignment,
    m: usize,
) -> Result<(DMatrix<f64>, SolutionCertificate)> {
    let np = t.len();
    if np % 2 != 1 || m > np - 2 {
        return Err(Error::PowerOutOfRange { m, points: np });
    }
    if m == 0 {
        return solve_f0_unbalanced(t);
    }
    match_pattern(t, &PolySpec::monomial(m))?;
    require_positive(t)?;
    if m == np - 2 {
        return solve_via_reciprocal(t, m);
    }
    let case = if m % 2 == 1 {
        ScheduleCase::MonomialUnbalancedWv
    } else {
        ScheduleCase::MonomialUnbalancedWw
    };
    run_case(t, case, m)
}

/// Power-dispatching front end over the monomial and f0 routes.
pub fn solve_monomial(t: &Assignment, m: usize) -> Result<(DMatrix<f64>, SolutionCertificate)> {
    if t.len() % 2 == 0 {
        solve_monomial_balanced(t, m)
    } else {
        solve_monomial_unbalanced(t, m)
    }
}

/// Solves the top-power balanced monomial (`m = 2n-2`) by descending with
/// the inverted matrices instead of delegating to the reciprocal transpose.
/// The two routes agree; this one exists as the independent construction.
pub fn solve_simplest_monomial(t: &Assignment) -> Result<(DMatrix<f64>, SolutionCertificate)> {
    let np = t.len();
    if np % 2 != 0 {
        return Err(Error::ShapeMismatch {
            expected: "balanced top-power monomial".into(),
            detail: format!("{np} points"),
        });
    }
    let m = np - 2;
    if m > 0 {
        match_pattern(t, &PolySpec::monomial(m))?;
        require_positive(t)?;
    } else {
        match_pattern(t, &PolySpec::f0())?;
    }
    run_case(t, ScheduleCase::SimplestMonomial, m)
}

/// Solves an effectively monomial assignment: the weight pattern
/// `(-1/x_i)^k / prod(1/x_j - 1/x_i)`, which coincides with the monomial of
/// power `n - 2 - k` on the original coordinates. The construction solves
/// the power-`k` monomial on the reciprocal coordinates and transposes.
pub fn solve_effectively_monomial(t: &Assignment) -> Result<(DMatrix<f64>, SolutionCertificate)> {
    require_positive(t)?;
    let np = t.len();
    // The reciprocal power is recoverable from the weight pattern.
    let mut matched = None;
    for m in 0..=np.saturating_sub(2) {
        if match_pattern(t, &PolySpec::monomial(m)).is_ok() {
            matched = Some(m);
            break;
        }
    }
    let m = matched.ok_or_else(|| Error::ShapeMismatch {
        expected: "effectively monomial weight pattern".into(),
        detail: "no reciprocal power matches".into(),
    })?;
    solve_via_reciprocal(t, m)
}

fn require_positive(t: &Assignment) -> Result<()> {
    if let Some(pt) = t.points().first() {
        if pt.x <= 0.0 {
            return Err(Error::ZeroCoordinate(pt.x));
        }
    }
    Ok(())
}

/// Solves `t` (a power-`m` monomial on `x`) through its reciprocal problem:
/// the power-`(n-2-m)` monomial on `1/x` is solved directly and the result
/// is transposed and re-indexed back onto the instance built from `t`.
fn solve_via_reciprocal(t: &Assignment, m: usize) -> Result<(DMatrix<f64>, SolutionCertificate)> {
    require_positive(t)?;
    let np = t.len();
    let k = np - 2 - m;
    let mut omega: Vec<f64> = t.coords().iter().map(|x| 1.0 / x).collect();
    omega.reverse();
    let u = lagrange_weights(&omega, &PolySpec::monomial(k))?;

    let (o_w, cert_w) = if u.len() % 2 == 0 {
        if k == 0 {
            run_case(&u, ScheduleCase::F0Balanced, 0)?
        } else if k == np - 2 {
            run_case(&u, ScheduleCase::SimplestMonomial, k)?
        } else if k % 2 == 0 {
            run_case(&u, ScheduleCase::MonomialAligned, k)?
        } else {
            run_case(&u, ScheduleCase::MonomialMisaligned, k)?
        }
    } else if k == 0 {
        run_case(&u, ScheduleCase::F0Unbalanced, 0)?
    } else if k % 2 == 1 {
        run_case(&u, ScheduleCase::MonomialUnbalancedWv, k)?
    } else {
        run_case(&u, ScheduleCase::MonomialUnbalancedWw, k)?
    };

    // Build the instance for t itself and re-express the transpose in its
    // bases. The reciprocal problem enumerates points in ascending omega,
    // i.e. descending x, and swaps the roles of the two sides.
    let (h_t, g_t) = split_h_g(t);
    let shape = instance_shape_for(&h_t, &g_t)?;
    let inst_t = monomial_instance(t, shape, m)?;
    let dim = inst_t.dim();

    let (h_u, g_u) = split_h_g(&u);
    if h_u.len() != g_t.len() || g_u.len() != h_t.len() {
        return Err(Error::ShapeMismatch {
            expected: "reciprocal side swap".into(),
            detail: format!(
                "u split {}/{} vs t split {}/{}",
                h_u.len(),
                g_u.len(),
                h_t.len(),
                g_t.len()
            ),
        });
    }

    // t-side h index i <-> u-side g index (n_h - 1 - i); pad slots map to
    // themselves at the tail.
    let o_t = DMatrix::from_fn(dim, dim, |i, j| {
        let row = if i < h_t.len() { g_u.len() - 1 - i } else { i };
        let col = if j < g_t.len() { h_u.len() - 1 - j } else { j };
        o_w[(col, row)]
    });

    let mut cert = verify_solution(&inst_t, &o_t, &VerifyConfig::default())?;
    cert.step_log = cert_w.step_log.clone();
    Ok((o_t, cert))
}

fn instance_shape_for(h: &Assignment, g: &Assignment) -> Result<InstanceShape> {
    match (h.len(), g.len()) {
        (a, b) if a == b => Ok(InstanceShape::Balanced),
        (a, b) if a + 1 == b => Ok(InstanceShape::PadHInfinite),
        (a, b) if a == b + 1 => Ok(InstanceShape::PadGZero),
        (a, b) => Err(Error::ShapeMismatch {
            expected: "split sizes differing by at most one".into(),
            detail: format!("{a} vs {b}"),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f0(coords: &[f64]) -> Assignment {
        lagrange_weights(coords, &PolySpec::f0()).unwrap()
    }

    fn monomial(coords: &[f64], m: usize) -> Assignment {
        lagrange_weights(coords, &PolySpec::monomial(m)).unwrap()
    }

    #[test]
    fn schedule_f0_balanced_four_points() {
        let s = plan_schedule(ScheduleCase::F0Balanced, 4, 0).unwrap();
        let tags: Vec<MapTag> = s.steps.iter().map(|st| st.op).collect();
        assert_eq!(tags, vec![MapTag::U, MapTag::W, MapTag::U, MapTag::Terminal]);
        let contact: Vec<i64> = s
            .steps
            .iter()
            .filter_map(|st| st.contact_power)
            .collect();
        assert_eq!(contact, vec![1, 3]);
        // Rank-2 instance must iterate cleanly; the rank-1 contact fails.
        assert!(s.steps[0].contact_zero && s.steps[0].component_zero);
        assert!(!s.steps[2].contact_zero);
        assert_eq!(s.term_count(), 2);
    }

    #[test]
    fn schedule_f0_unbalanced_three_points() {
        let s = plan_schedule(ScheduleCase::F0Unbalanced, 3, 0).unwrap();
        let tags: Vec<MapTag> = s.steps.iter().map(|st| st.op).collect();
        assert_eq!(tags, vec![MapTag::Uw, MapTag::Terminal]);
        assert_eq!(s.steps[0].contact_power, Some(1));
        assert!(s.steps[0].contact_zero);
        assert!(!s.steps[0].component_zero);
    }

    #[test]
    fn schedule_monomial_flip_position() {
        let s = plan_schedule(ScheduleCase::MonomialAligned, 10, 4).unwrap();
        let up_w = s
            .steps
            .iter()
            .take_while(|st| st.op != MapTag::F)
            .filter(|st| st.op == MapTag::W)
            .count();
        assert_eq!(up_w, 2, "flip after k = 2 up-steps");
        assert_eq!(s.term_count(), 5);
    }

    #[test]
    fn schedule_misaligned_matches_literal_indices() {
        // 2n = 10, m = 3: the wiggle tail sits at ranks 3 and 2.
        let s = plan_schedule(ScheduleCase::MonomialMisaligned, 10, 3).unwrap();
        let uv = s.steps.iter().find(|st| st.op == MapTag::Uv).unwrap();
        assert_eq!(uv.rank, 3);
        assert_eq!(uv.contact_power, Some(0));
        assert!(uv.contact_zero && !uv.component_zero);
        let uw = s.steps.iter().find(|st| st.op == MapTag::Uw).unwrap();
        assert_eq!(uw.rank, 2);
        assert_eq!(uw.contact_power, Some(8));
        assert!(uw.contact_zero && !uw.component_zero);
        assert_eq!(s.term_count(), 6);
    }

    #[test]
    fn worked_balanced_f0_solution() {
        let t = f0(&[0.0, 1.0, 2.0, 3.0]);
        let (o, cert) = solve_f0_balanced(&t).unwrap();
        let s3 = 3.0f64.sqrt();
        let expect = DMatrix::from_row_slice(2, 2, &[s3 / 2.0, 0.5, -0.5, s3 / 2.0]);
        assert!((o.clone() - expect).amax() < 1e-10, "{o}");
        assert_eq!(cert.verdict, crate::verify::CertVerdict::Pass);
    }

    #[test]
    fn balanced_f0_two_points() {
        let t = f0(&[0.7, 2.4]);
        let (o, cert) = solve_f0_balanced(&t).unwrap();
        assert_eq!(o.nrows(), 1);
        assert!((o[(0, 0)] - 1.0).abs() < 1e-12);
        assert_eq!(cert.verdict, crate::verify::CertVerdict::Pass);
    }

    #[test]
    fn worked_merge_solution() {
        let t = f0(&[0.0, 1.0, 2.0]);
        let (o, cert) = solve_f0_unbalanced(&t).unwrap();
        let r = 0.5f64.sqrt();
        let expect = DMatrix::from_row_slice(2, 2, &[r, r, -r, r]);
        assert!((o.clone() - expect).amax() < 1e-10, "{o}");
        // O|v> = |w> at the floating point level.
        let v = nalgebra::DVector::from_row_slice(&[r, r]);
        let w = nalgebra::DVector::from_row_slice(&[1.0, 0.0]);
        assert!((o * v - w).norm() < 1e-14);
        assert_eq!(cert.verdict, crate::verify::CertVerdict::Pass);
    }

    #[test]
    fn eigenvalues_of_worked_difference() {
        let t = f0(&[0.0, 1.0, 2.0, 3.0]);
        let (o, _) = solve_f0_balanced(&t).unwrap();
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]);
        let g = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 2.0]);
        let diff = crate::ellipsoid::SymMatrix::new(h - &o * g * o.transpose()).unwrap();
        let ev = diff.eigenvalues();
        assert!(ev[0].abs() < 1e-9 && (ev[1] - 2.0).abs() < 1e-9, "{ev:?}");
    }

    #[test]
    fn rejects_non_f0_input() {
        // Sums to zero but is not proportional to the f0 weights.
        let t = Assignment::new([(0.0, -0.3), (1.0, 0.8), (2.0, -0.5)]).unwrap();
        assert!(solve_f0_unbalanced(&t).is_err());
    }

    #[test]
    fn scaled_weights_give_same_solution() {
        let t = f0(&[0.0, 1.0, 2.0, 3.0]);
        let scaled = Assignment::new(t.points().iter().map(|pt| (pt.x, 3.7 * pt.p))).unwrap();
        let (o1, _) = solve_f0_balanced(&t).unwrap();
        let (o2, _) = solve_f0_balanced(&scaled).unwrap();
        assert!((o1 - o2).amax() < 1e-12);
    }

    #[test]
    fn simplest_monomial_small_cases() {
        let t = monomial(&[1.0, 2.0, 3.0, 4.0], 2);
        let (o, cert) = solve_simplest_monomial(&t).unwrap();
        assert_eq!(cert.verdict, crate::verify::CertVerdict::Pass);
        // Cross-route agreement with the reciprocal transpose.
        let (o2, cert2) = solve_via_reciprocal(&t, 2).unwrap();
        assert_eq!(cert2.verdict, crate::verify::CertVerdict::Pass);
        assert!((o - o2).amax() < 1e-8);
    }

    #[test]
    fn monomial_balanced_aligned_case() {
        let t = monomial(&[0.5, 1.0, 2.0, 3.0, 4.5, 6.0], 2);
        let (_, cert) = solve_monomial_balanced(&t, 2).unwrap();
        assert_eq!(cert.verdict, crate::verify::CertVerdict::Pass);
    }

    #[test]
    fn monomial_balanced_misaligned_case() {
        let t = monomial(&[1.0, 2.0, 3.0, 4.0], 1);
        let (_, cert) = solve_monomial_balanced(&t, 1).unwrap();
        assert_eq!(cert.verdict, crate::verify::CertVerdict::Pass);
    }

    #[test]
    fn monomial_unbalanced_both_parities() {
        let t = monomial(&[1.0, 2.0, 3.0, 4.0, 5.0], 1);
        let (_, cert) = solve_monomial_unbalanced(&t, 1).unwrap();
        assert_eq!(cert.verdict, crate::verify::CertVerdict::Pass);

        let t = monomial(&[1.0, 2.0, 3.0, 4.0, 5.0], 2);
        let (_, cert) = solve_monomial_unbalanced(&t, 2).unwrap();
        assert_eq!(cert.verdict, crate::verify::CertVerdict::Pass);
    }

    #[test]
    fn monomial_delegation_at_ends() {
        let coords = [1.0, 2.0, 3.0, 4.0];
        let t0 = monomial(&coords, 0);
        let (o_a, _) = solve_monomial_balanced(&t0, 0).unwrap();
        let (o_b, _) = solve_f0_balanced(&t0).unwrap();
        assert!((o_a - o_b).amax() < 1e-12);

        let t_top = monomial(&coords, 2);
        let (_, cert) = solve_monomial_balanced(&t_top, 2).unwrap();
        assert_eq!(cert.verdict, crate::verify::CertVerdict::Pass);
    }

    #[test]
    fn effectively_monomial_round_trip() {
        // Power 2 on four points; the reciprocal route must match the
        // direct solver output.
        let t = monomial(&[1.0, 2.0, 3.0, 4.0], 2);
        let (o, cert) = solve_effectively_monomial(&t).unwrap();
        assert_eq!(cert.verdict, crate::verify::CertVerdict::Pass);
        let (o_direct, _) = solve_simplest_monomial(&t).unwrap();
        assert!((o - o_direct).amax() < 1e-8);
    }
}
