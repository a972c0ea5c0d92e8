//! Matrix instances and the iteration maps that shrink them.
//!
//! An extended matrix instance is the tuple `(H, G, |w>, |v>, H', G',
//! |u_h>, |u_g>)` of two PSD quadratic forms, two equal-norm probability
//! vectors, the positive inverses and (optionally) the two contact normals.
//! An orthogonal `O` *solves* the instance when `H >= O G O^T` and
//! `O|v> = |w>`; the maps here peel one rank-one slice `|u_h><u_g|` off a
//! solution per application.
//!
//! Divergent and vanishing eigenvalues are never represented numerically.
//! A `LimitSymMatrix` carries the finite block plus two orthonormal
//! direction sets: `infinite_dirs` (eigenvalue growing as `1/eps`) and
//! `limit_zero_dirs` (eigenvalue shrinking as `eps`). Every map below is the
//! exact `eps -> 0` limit; a numeric `eps` appears only in `materialize`,
//! which exists for verification sweeps.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::assignments::Assignment;
use crate::ellipsoid::{
    normal, orth_component_matrix, orth_component_vector, positive_inverse, reverse_weingarten,
    weingarten, SymMatrix, RANK_TOL,
};
use crate::error::Error;
use crate::Result;

mod serde_vecs {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }

    pub mod opt {
        use super::*;

        pub fn serialize<S: Serializer>(
            v: &Option<DVector<f64>>,
            s: S,
        ) -> Result<S::Ok, S::Error> {
            v.as_ref().map(|v| v.as_slice().to_vec()).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(
            d: D,
        ) -> Result<Option<DVector<f64>>, D::Error> {
            Ok(Option::<Vec<f64>>::deserialize(d)?.map(DVector::from_vec))
        }
    }

    pub mod list {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[DVector<f64>], s: S) -> Result<S::Ok, S::Error> {
            v.iter()
                .map(|v| v.as_slice().to_vec())
                .collect::<Vec<_>>()
                .serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(
            d: D,
        ) -> Result<Vec<DVector<f64>>, D::Error> {
            Ok(Vec::<Vec<f64>>::deserialize(d)?
                .into_iter()
                .map(DVector::from_vec)
                .collect())
        }
    }
}

/// Symmetric operator with exact bookkeeping of directions whose eigenvalue
/// diverges or vanishes in the `eps -> 0` limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitSymMatrix {
    pub finite: SymMatrix,
    #[serde(with = "serde_vecs::list")]
    pub infinite_dirs: Vec<DVector<f64>>,
    #[serde(with = "serde_vecs::list")]
    pub limit_zero_dirs: Vec<DVector<f64>>,
}

impl LimitSymMatrix {
    pub fn finite_only(finite: SymMatrix) -> Self {
        LimitSymMatrix {
            finite,
            infinite_dirs: Vec::new(),
            limit_zero_dirs: Vec::new(),
        }
    }

    pub fn new(
        finite: SymMatrix,
        infinite_dirs: Vec<DVector<f64>>,
        limit_zero_dirs: Vec<DVector<f64>>,
    ) -> Result<Self> {
        let m = LimitSymMatrix {
            finite,
            infinite_dirs,
            limit_zero_dirs,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.finite.dim()
    }

    pub fn has_limits(&self) -> bool {
        !self.infinite_dirs.is_empty() || !self.limit_zero_dirs.is_empty()
    }

    /// Checks that the direction sets are orthonormal, mutually orthogonal
    /// and annihilated by the finite block.
    pub fn validate(&self) -> Result<()> {
        let dirs: Vec<&DVector<f64>> = self
            .infinite_dirs
            .iter()
            .chain(self.limit_zero_dirs.iter())
            .collect();
        for (i, d) in dirs.iter().enumerate() {
            if (d.norm() - 1.0).abs() > 1e-10 {
                return Err(Error::DimensionMismatch(format!(
                    "limit direction {i} not unit (norm {})",
                    d.norm()
                )));
            }
            for e in dirs.iter().skip(i + 1) {
                if d.dot(e).abs() > 1e-10 {
                    return Err(Error::DimensionMismatch(
                        "limit directions not mutually orthogonal".into(),
                    ));
                }
            }
            let fd = self.finite.apply(d);
            let scale = self.finite.matrix().amax().max(1.0);
            if fd.norm() > 1e-9 * scale {
                return Err(Error::DimensionMismatch(
                    "finite block does not annihilate a limit direction".into(),
                ));
            }
        }
        Ok(())
    }

    /// Numeric stand-in at a concrete `eps`, for verification sweeps only.
    pub fn materialize(&self, eps: f64) -> SymMatrix {
        let mut m = self.finite.matrix().clone();
        for d in &self.infinite_dirs {
            m += d * d.transpose() / eps;
        }
        for z in &self.limit_zero_dirs {
            m += d_outer(z) * eps;
        }
        SymMatrix::new(m).expect("materialized matrix stays symmetric")
    }

    /// Positive inverse in the limit sense: the finite block is inverted on
    /// its support and the divergent/vanishing roles swap.
    pub fn positive_inverse_limit(&self) -> Self {
        LimitSymMatrix {
            finite: positive_inverse(&self.finite, RANK_TOL),
            infinite_dirs: self.limit_zero_dirs.clone(),
            limit_zero_dirs: self.infinite_dirs.clone(),
        }
    }
}

fn d_outer(d: &DVector<f64>) -> DMatrix<f64> {
    d * d.transpose()
}

/// Padding layout used when turning an `(h, g)` pair into matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceShape {
    /// Equal point counts, no padding.
    Balanced,
    /// `h` is one point short; its matrix gains a divergent slot.
    PadHInfinite,
    /// `g` is one point short; its matrix gains a vanishing slot.
    PadGZero,
    /// Equal counts but one extra dimension carrying a divergent slot in
    /// `H` and a vanishing slot in `G` (the misaligned layout).
    PadBoth,
}

/// The 8-tuple `(H, G, |w>, |v>, H', G', |u_h>, |u_g>)` plus rank and
/// support-frame bookkeeping.
///
/// The support frames are orthonormal bases of the ranges of the finite
/// blocks. They shrink by exactly one vector per iteration and let the maps
/// keep the positive inverses clean without ever re-diagonalising.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtendedMatrixInstance {
    pub h: LimitSymMatrix,
    pub g: LimitSymMatrix,
    #[serde(with = "serde_vecs")]
    pub w: DVector<f64>,
    #[serde(with = "serde_vecs")]
    pub v: DVector<f64>,
    pub h_pinv: LimitSymMatrix,
    pub g_pinv: LimitSymMatrix,
    #[serde(with = "serde_vecs::opt")]
    pub u_h: Option<DVector<f64>>,
    #[serde(with = "serde_vecs::opt")]
    pub u_g: Option<DVector<f64>>,
    pub rank: usize,
    /// Monomial power baked into the probability vectors at build time.
    pub moment_power: usize,
    #[serde(with = "serde_vecs::list")]
    h_support: Vec<DVector<f64>>,
    #[serde(with = "serde_vecs::list")]
    g_support: Vec<DVector<f64>>,
}

impl ExtendedMatrixInstance {
    /// Assembles a finite instance (no limit directions) from explicit
    /// matrices and vectors. Positive inverses and support frames come from
    /// eigendecompositions, so this constructor belongs to verification and
    /// test code, not to the iteration path.
    pub fn from_finite(
        h: SymMatrix,
        g: SymMatrix,
        w: DVector<f64>,
        v: DVector<f64>,
    ) -> Result<Self> {
        if h.dim() != g.dim() || h.dim() != w.len() || w.len() != v.len() {
            return Err(Error::DimensionMismatch(format!(
                "h {}x{}, g {}x{}, w {}, v {}",
                h.dim(),
                h.dim(),
                g.dim(),
                g.dim(),
                w.len(),
                v.len()
            )));
        }
        let support_of = |m: &SymMatrix| {
            let eig = m.matrix().clone().symmetric_eigen();
            let cut = RANK_TOL
                * eig
                    .eigenvalues
                    .iter()
                    .fold(0.0f64, |a, &b| a.max(b.abs()))
                    .max(f64::MIN_POSITIVE);
            let mut frame = Vec::new();
            for (i, &lam) in eig.eigenvalues.iter().enumerate() {
                if lam > cut {
                    frame.push(eig.eigenvectors.column(i).into_owned());
                }
            }
            frame
        };
        let inst = ExtendedMatrixInstance {
            h_pinv: LimitSymMatrix::finite_only(positive_inverse(&h, RANK_TOL)),
            g_pinv: LimitSymMatrix::finite_only(positive_inverse(&g, RANK_TOL)),
            h_support: support_of(&h),
            g_support: support_of(&g),
            rank: h.dim(),
            moment_power: 0,
            h: LimitSymMatrix::finite_only(h),
            g: LimitSymMatrix::finite_only(g),
            w,
            v,
            u_h: None,
            u_g: None,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn dim(&self) -> usize {
        self.h.dim()
    }

    pub fn completely_specified(&self) -> bool {
        self.u_h.is_some() && self.u_g.is_some()
    }

    /// Structural invariants: probability vectors orthogonal to every limit
    /// direction, equal norms, positive inverses consistent with the
    /// primaries on their supports.
    pub fn validate(&self) -> Result<()> {
        self.h.validate()?;
        self.g.validate()?;
        self.h_pinv.validate()?;
        self.g_pinv.validate()?;
        let wn = self.w.norm();
        let vn = self.v.norm();
        if (wn - vn).abs() > 1e-10 * wn.max(vn).max(1.0) {
            return Err(Error::DimensionMismatch(format!(
                "|w| = {wn} differs from |v| = {vn}"
            )));
        }
        for (vec, side) in [(&self.w, &self.h), (&self.v, &self.g)] {
            for d in side.infinite_dirs.iter().chain(&side.limit_zero_dirs) {
                if vec.dot(d).abs() > 1e-9 * wn.max(1.0) {
                    return Err(Error::DimensionMismatch(
                        "probability vector overlaps a limit direction".into(),
                    ));
                }
            }
        }
        for (side, pinv, frame) in [
            (&self.h, &self.h_pinv, &self.h_support),
            (&self.g, &self.g_pinv, &self.g_support),
        ] {
            if side.infinite_dirs.len() != pinv.limit_zero_dirs.len()
                || side.limit_zero_dirs.len() != pinv.infinite_dirs.len()
            {
                return Err(Error::DimensionMismatch(
                    "positive inverse does not swap the limit direction sets".into(),
                ));
            }
            // On the support frame, M * M' must act as the identity.
            for f in frame {
                let back = pinv.finite.apply(&side.finite.apply(f));
                if (&back - f).norm() > 1e-8 {
                    return Err(Error::DimensionMismatch(
                        "positive inverse inconsistent on the support frame".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// `<w|H|w> - <v|G|v>`, exact in the limit because the vectors carry no
    /// component along any divergent or vanishing direction.
    pub fn contact_gap(&self) -> f64 {
        self.h.finite.expectation(&self.w, 1) - self.g.finite.expectation(&self.v, 1)
    }

    /// `<w|H^2|w> - <v|G^2|v>`.
    pub fn component_gap(&self) -> f64 {
        self.h.finite.expectation(&self.w, 2) - self.g.finite.expectation(&self.v, 2)
    }

    /// Scale against which the gaps are judged.
    pub fn gap_scale(&self) -> f64 {
        let c = self
            .h
            .finite
            .expectation(&self.w, 1)
            .abs()
            .max(self.g.finite.expectation(&self.v, 1).abs());
        let k = self
            .h
            .finite
            .expectation(&self.w, 2)
            .abs()
            .max(self.g.finite.expectation(&self.v, 2).abs());
        c.max(k).max(1e-30)
    }

    /// First divergent direction of `H` with no overlap against `w`, if any.
    /// Ties broken by construction order.
    pub fn wiggle_room_w(&self) -> Option<&DVector<f64>> {
        let tol = 1e-9 * self.w.norm().max(1.0);
        self.h
            .infinite_dirs
            .iter()
            .find(|d| self.w.dot(d).abs() <= tol)
    }

    /// Mirror image of `wiggle_room_w` on the `(G, v)` side.
    pub fn wiggle_room_v(&self) -> Option<&DVector<f64>> {
        let tol = 1e-9 * self.v.norm().max(1.0);
        self.g
            .infinite_dirs
            .iter()
            .find(|d| self.v.dot(d).abs() <= tol)
    }

    /// Materialized `(H(eps), G(eps))` pair for verification sweeps.
    pub fn materialize(&self, eps: f64) -> (SymMatrix, SymMatrix) {
        (self.h.materialize(eps), self.g.materialize(eps))
    }

    pub fn has_limits(&self) -> bool {
        self.h.has_limits() || self.g.has_limits()
    }
}

/// Builds the diagonal matrix instance for a split assignment, with the
/// padding demanded by `shape` and the probability vectors premultiplied by
/// the `moment_power/2`-th matrix power: entries `sqrt(p_i * x_i^m)`.
pub fn build_instance(
    h: &Assignment,
    g: &Assignment,
    shape: InstanceShape,
    moment_power: usize,
) -> Result<ExtendedMatrixInstance> {
    let (nh, ng) = (h.len(), g.len());
    let dim = match shape {
        InstanceShape::Balanced if nh == ng => nh,
        InstanceShape::PadHInfinite if nh + 1 == ng => ng,
        InstanceShape::PadGZero if ng + 1 == nh => nh,
        InstanceShape::PadBoth if nh == ng => nh + 1,
        _ => {
            return Err(Error::ShapeMismatch {
                expected: format!("{shape:?}"),
                detail: format!("n_h = {nh}, n_g = {ng}"),
            })
        }
    };
    for pt in h.points().iter().chain(g.points()) {
        if pt.p <= 0.0 {
            return Err(Error::ShapeMismatch {
                expected: "positive part weights".into(),
                detail: format!("weight {} at {}", pt.p, pt.x),
            });
        }
    }
    if h.points().iter().any(|a| g.points().iter().any(|b| a.x == b.x)) {
        return Err(Error::ShapeMismatch {
            expected: "disjoint supports".into(),
            detail: "h and g share a coordinate".into(),
        });
    }

    let basis = |i: usize| {
        let mut e = DVector::zeros(dim);
        e[i] = 1.0;
        e
    };

    let side = |part: &Assignment, pad_infinite: bool, pad_zero: bool| {
        let mut diag = vec![0.0; dim];
        let mut vecdat = vec![0.0; dim];
        let mut support = Vec::new();
        for (i, pt) in part.points().iter().enumerate() {
            diag[i] = pt.x;
            vecdat[i] = (pt.p * pt.x.powi(moment_power as i32)).sqrt();
            if pt.x > 0.0 {
                support.push(basis(i));
            }
        }
        let finite = SymMatrix::from_diagonal(&diag);
        let pinv_diag: Vec<f64> = diag
            .iter()
            .map(|&x| if x > 0.0 { 1.0 / x } else { 0.0 })
            .collect();
        let pinv_finite = SymMatrix::from_diagonal(&pinv_diag);
        let pad_dir = basis(dim - 1);
        let (inf, zero) = match (pad_infinite, pad_zero) {
            (true, false) => (vec![pad_dir], Vec::new()),
            (false, true) => (Vec::new(), vec![pad_dir]),
            (false, false) => (Vec::new(), Vec::new()),
            (true, true) => unreachable!("a side is padded one way"),
        };
        let mat = LimitSymMatrix {
            finite,
            infinite_dirs: inf.clone(),
            limit_zero_dirs: zero.clone(),
        };
        let pinv = LimitSymMatrix {
            finite: pinv_finite,
            infinite_dirs: zero,
            limit_zero_dirs: inf,
        };
        (mat, pinv, DVector::from_vec(vecdat), support)
    };

    let h_pad_inf = matches!(shape, InstanceShape::PadHInfinite | InstanceShape::PadBoth);
    let g_pad_zero = matches!(shape, InstanceShape::PadGZero | InstanceShape::PadBoth);
    let (hm, h_pinv, w, h_support) = side(h, h_pad_inf, false);
    let (gm, g_pinv, v, g_support) = side(g, false, g_pad_zero);

    let inst = ExtendedMatrixInstance {
        h: hm,
        g: gm,
        w,
        v,
        h_pinv,
        g_pinv,
        u_h: None,
        u_g: None,
        rank: dim,
        moment_power,
        h_support,
        g_support,
    };
    inst.validate()?;
    Ok(inst)
}

/// Normal initialisation: fills `u_h := u(H, w)` and `u_g := u(G, v)`,
/// leaving everything else untouched. Idempotent.
///
/// At rank one the normals are forced by orthogonality of the assembled
/// solution, so a side whose finite block has been exhausted falls back to
/// the normalized probability vector (the two coincide whenever the formula
/// is defined).
pub fn normal_init(inst: &ExtendedMatrixInstance) -> Result<ExtendedMatrixInstance> {
    let mut out = inst.clone();
    out.u_h = Some(init_normal_side(&inst.h.finite, &inst.w, inst.rank)?);
    out.u_g = Some(init_normal_side(&inst.g.finite, &inst.v, inst.rank)?);
    Ok(out)
}

fn init_normal_side(m: &SymMatrix, vec: &DVector<f64>, rank: usize) -> Result<DVector<f64>> {
    match normal(m, vec) {
        Ok(u) => Ok(u),
        Err(Error::ZeroNormal(_)) if rank == 1 => {
            let n = vec.norm();
            if n <= 0.0 {
                return Err(Error::ZeroNormal(n));
            }
            Ok(vec / n)
        }
        Err(e) => Err(e),
    }
}

/// One Weingarten iteration: vectors move to their tangential components,
/// matrices to their curvature operators, positive inverses via the reverse
/// Weingarten map, rank drops by one and the normals are blanked.
///
/// Divergent and vanishing directions pass through unchanged: they are
/// orthogonal to the probability vectors, so none of the rank-one
/// corrections in the curvature formulas touch them.
pub fn weingarten_iterate(inst: &ExtendedMatrixInstance) -> Result<ExtendedMatrixInstance> {
    if inst.rank == 0 {
        return Err(Error::DimensionMismatch("iterating a rank-0 instance".into()));
    }
    if inst.rank == 1 {
        return Ok(exhausted(inst));
    }
    let mut out = inst.clone();
    out.w = orth_component_matrix(&inst.h.finite, &inst.w, &inst.w)?;
    out.v = orth_component_matrix(&inst.g.finite, &inst.v, &inst.v)?;
    let (h, h_pinv, h_support) =
        iterate_side(&inst.h, &inst.h_pinv, &inst.h_support, &inst.w)?;
    let (g, g_pinv, g_support) =
        iterate_side(&inst.g, &inst.g_pinv, &inst.g_support, &inst.v)?;
    out.h = h;
    out.h_pinv = h_pinv;
    out.h_support = h_support;
    out.g = g;
    out.g_pinv = g_pinv;
    out.g_support = g_support;
    out.u_h = None;
    out.u_g = None;
    out.rank -= 1;
    Ok(out)
}

/// Curvature step for one side, evaluated at the contact direction.
/// Returns the new primary, positive inverse and support frame.
fn iterate_side(
    side: &LimitSymMatrix,
    pinv: &LimitSymMatrix,
    support: &[DVector<f64>],
    contact: &DVector<f64>,
) -> Result<(LimitSymMatrix, LimitSymMatrix, Vec<DVector<f64>>)> {
    let consumed = normal(&side.finite, contact)?;
    let new_finite = weingarten(&side.finite, contact)?;
    let new_pinv_raw = reverse_weingarten(&side.finite, &pinv.finite, contact)?;
    let new_support = remove_direction(support, &consumed)?;
    let projector = frame_projector(&new_support, side.dim());
    let new_finite = SymMatrix::new(&projector * new_finite.matrix() * &projector)?;
    let new_pinv = SymMatrix::new(&projector * new_pinv_raw.matrix() * &projector)?;
    Ok((
        LimitSymMatrix {
            finite: new_finite,
            infinite_dirs: side.infinite_dirs.clone(),
            limit_zero_dirs: side.limit_zero_dirs.clone(),
        },
        LimitSymMatrix {
            finite: new_pinv,
            infinite_dirs: pinv.infinite_dirs.clone(),
            limit_zero_dirs: pinv.limit_zero_dirs.clone(),
        },
        new_support,
    ))
}

fn exhausted(inst: &ExtendedMatrixInstance) -> ExtendedMatrixInstance {
    let dim = inst.dim();
    let zero = LimitSymMatrix::finite_only(SymMatrix::zeros(dim));
    ExtendedMatrixInstance {
        h: LimitSymMatrix {
            finite: SymMatrix::zeros(dim),
            infinite_dirs: inst.h.infinite_dirs.clone(),
            limit_zero_dirs: inst.h.limit_zero_dirs.clone(),
        },
        g: LimitSymMatrix {
            finite: SymMatrix::zeros(dim),
            infinite_dirs: inst.g.infinite_dirs.clone(),
            limit_zero_dirs: inst.g.limit_zero_dirs.clone(),
        },
        w: DVector::zeros(dim),
        v: DVector::zeros(dim),
        h_pinv: LimitSymMatrix {
            finite: SymMatrix::zeros(dim),
            infinite_dirs: inst.h_pinv.infinite_dirs.clone(),
            limit_zero_dirs: inst.h_pinv.limit_zero_dirs.clone(),
        },
        g_pinv: zero,
        u_h: None,
        u_g: None,
        rank: 0,
        moment_power: inst.moment_power,
        h_support: Vec::new(),
        g_support: Vec::new(),
    }
}

/// Wiggle-w normal initialisation. Requires a divergent direction `t_h` in
/// `H` with no overlap against `w`; the `H`-side normal is tilted into it by
/// the angle that restores the contact identity:
/// `cos(theta) = <v|u(G,v)> / <w|u(H,w)>`.
pub fn wiggle_normal_init_w(inst: &ExtendedMatrixInstance) -> Result<ExtendedMatrixInstance> {
    let t_h = inst.wiggle_room_w().ok_or(Error::NoWiggleRoom)?.clone();
    let u_h_fin = normal(&inst.h.finite, &inst.w)?;
    let u_g = normal(&inst.g.finite, &inst.v)?;
    let cos = inst.v.dot(&u_g) / inst.w.dot(&u_h_fin);
    let cos = clamp_cos(cos)?;
    let sin = (1.0 - cos * cos).max(0.0).sqrt();
    let mut out = inst.clone();
    out.u_h = Some(&u_h_fin * cos + t_h * sin);
    out.u_g = Some(u_g);
    Ok(out)
}

/// Mirror image of `wiggle_normal_init_w`: tilts the `G`-side normal with
/// `cos(theta) = <w|u(H,w)> / <v|u(G,v)>`.
pub fn wiggle_normal_init_v(inst: &ExtendedMatrixInstance) -> Result<ExtendedMatrixInstance> {
    let t_g = inst.wiggle_room_v().ok_or(Error::NoWiggleRoom)?.clone();
    let u_h = normal(&inst.h.finite, &inst.w)?;
    let u_g_fin = normal(&inst.g.finite, &inst.v)?;
    let cos = inst.w.dot(&u_h) / inst.v.dot(&u_g_fin);
    let cos = clamp_cos(cos)?;
    let sin = (1.0 - cos * cos).max(0.0).sqrt();
    let mut out = inst.clone();
    out.u_h = Some(u_h);
    out.u_g = Some(&u_g_fin * cos + t_g * sin);
    Ok(out)
}

fn clamp_cos(cos: f64) -> Result<f64> {
    if cos.abs() <= 1.0 {
        Ok(cos)
    } else if cos.abs() <= 1.0 + 1e-10 {
        Ok(cos.signum())
    } else {
        Err(Error::GeometryInfeasible(cos))
    }
}

/// Wiggle-w iteration. The wiggled side reconstructs its contact direction
/// from the tilted normal through the positive inverse
/// (`y = N(H' u_h)`, finite because `H'` vanishes on the divergent
/// direction in the limit) and iterates there; the plain side iterates as in
/// the ordinary Weingarten map. The new `w` is the component of the old one
/// orthogonal to the tilted normal.
pub fn wiggle_iterate_w(inst: &ExtendedMatrixInstance) -> Result<ExtendedMatrixInstance> {
    let (u_h, _) = require_specified(inst)?;
    let contact_h = pinv_contact(&inst.h_pinv.finite, u_h)?;
    let mut out = inst.clone();
    out.w = orth_component_vector(u_h, &inst.w)?;
    out.v = orth_component_matrix(&inst.g.finite, &inst.v, &inst.v)?;
    let (h, h_pinv, h_support) = wiggle_side(&inst.h, &inst.h_pinv, &inst.h_support, &contact_h)?;
    let (g, g_pinv, g_support) =
        iterate_side(&inst.g, &inst.g_pinv, &inst.g_support, &inst.v)?;
    out.h = h;
    out.h_pinv = h_pinv;
    out.h_support = h_support;
    out.g = g;
    out.g_pinv = g_pinv;
    out.g_support = g_support;
    out.u_h = None;
    out.u_g = None;
    out.rank -= 1;
    Ok(out)
}

/// Mirror image of `wiggle_iterate_w` on the `(G, v)` side.
pub fn wiggle_iterate_v(inst: &ExtendedMatrixInstance) -> Result<ExtendedMatrixInstance> {
    let (_, u_g) = require_specified(inst)?;
    let contact_g = pinv_contact(&inst.g_pinv.finite, u_g)?;
    let mut out = inst.clone();
    out.v = orth_component_vector(u_g, &inst.v)?;
    out.w = orth_component_matrix(&inst.h.finite, &inst.w, &inst.w)?;
    let (g, g_pinv, g_support) = wiggle_side(&inst.g, &inst.g_pinv, &inst.g_support, &contact_g)?;
    let (h, h_pinv, h_support) =
        iterate_side(&inst.h, &inst.h_pinv, &inst.h_support, &inst.w)?;
    out.h = h;
    out.h_pinv = h_pinv;
    out.h_support = h_support;
    out.g = g;
    out.g_pinv = g_pinv;
    out.g_support = g_support;
    out.u_h = None;
    out.u_g = None;
    out.rank -= 1;
    Ok(out)
}

fn require_specified(
    inst: &ExtendedMatrixInstance,
) -> Result<(&DVector<f64>, &DVector<f64>)> {
    match (&inst.u_h, &inst.u_g) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(Error::NotCompletelySpecified),
    }
}

/// `N(M' u)`: the finite part of the positive inverse applied to a tilted
/// normal. The divergent component of `u` is annihilated in the limit.
fn pinv_contact(pinv_finite: &SymMatrix, u: &DVector<f64>) -> Result<DVector<f64>> {
    let y = pinv_finite.apply(u);
    let n = y.norm();
    if n <= 1e-13 * pinv_finite.matrix().amax().max(1.0) {
        return Err(Error::ZeroNormal(n));
    }
    Ok(y / n)
}

fn wiggle_side(
    side: &LimitSymMatrix,
    pinv: &LimitSymMatrix,
    support: &[DVector<f64>],
    contact: &DVector<f64>,
) -> Result<(LimitSymMatrix, LimitSymMatrix, Vec<DVector<f64>>)> {
    // Same algebra as the plain side, evaluated at the reconstructed
    // contact direction; the divergent slot survives untouched.
    iterate_side(side, pinv, support, contact)
}

/// Flip map: each matrix trades places with its positive inverse, reversing
/// the semidefinite ordering. Vectors and normals stay; the divergent and
/// vanishing direction sets swap roles through the stored inverses.
/// An involution.
pub fn flip(inst: &ExtendedMatrixInstance) -> ExtendedMatrixInstance {
    let mut out = inst.clone();
    std::mem::swap(&mut out.h, &mut out.h_pinv);
    std::mem::swap(&mut out.g, &mut out.g_pinv);
    out
}

/// Removes one direction from an orthonormal frame, re-orthonormalising the
/// remainder. The direction must lie in the frame's span.
fn remove_direction(frame: &[DVector<f64>], dir: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
    if frame.is_empty() {
        return Err(Error::DimensionMismatch(
            "removing a direction from an empty frame".into(),
        ));
    }
    let mut kept: Vec<DVector<f64>> = Vec::with_capacity(frame.len() - 1);
    for f in frame {
        if kept.len() == frame.len() - 1 {
            break;
        }
        let mut r = f - dir * dir.dot(f);
        for k in &kept {
            r -= k * k.dot(&r);
        }
        let n = r.norm();
        if n > 1e-8 {
            kept.push(r / n);
        }
    }
    if kept.len() != frame.len() - 1 {
        return Err(Error::DimensionMismatch(format!(
            "support frame dropped from {} to {} vectors",
            frame.len(),
            kept.len()
        )));
    }
    Ok(kept)
}

fn frame_projector(frame: &[DVector<f64>], dim: usize) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(dim, dim);
    for f in frame {
        p += f * f.transpose();
    }
    p
}
