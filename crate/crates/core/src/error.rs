use thiserror::Error;

/// Errors surfaced by assignment construction, the iteration maps and the
/// solvers. Numerical tolerance failures inside a planned schedule are
/// reported as `ScheduleAssertion` with the offending step spelled out.
#[derive(Debug, Error)]
pub enum Error {
    #[error("coordinates must be strictly increasing and non-negative: {0}")]
    DegenerateCoordinates(String),

    #[error("polynomial degree {degree} too high for {points} points (max {max})")]
    DegreeTooHigh {
        degree: usize,
        points: usize,
        max: usize,
    },

    #[error("operation requires strictly positive coordinates (found {0})")]
    ZeroCoordinate(f64),

    #[error("ordering constraint violated: {0}")]
    OrderingViolated(String),

    #[error("point lies in the null cone of the quadratic form (<v|G|v> = {0:.3e})")]
    NullCone(f64),

    #[error("zero normal: |G v| = {0:.3e}")]
    ZeroNormal(f64),

    #[error("target vector is parallel to the reference direction (residual {0:.3e})")]
    ParallelVectors(f64),

    #[error("singular denominator in rank-one update ({0:.3e})")]
    SingularUpdate(f64),

    #[error("no divergent direction with zero overlap against the probability vector")]
    NoWiggleRoom,

    #[error("wiggle geometry infeasible: |cos theta| = {0} exceeds 1")]
    GeometryInfeasible(f64),

    #[error("assignment does not match the {expected} weight pattern: {detail}")]
    ShapeMismatch { expected: String, detail: String },

    #[error("monomial power {m} out of range for {points} points")]
    PowerOutOfRange { m: usize, points: usize },

    #[error("schedule assertion failed at step {step} ({op} at rank {rank}): {detail}")]
    ScheduleAssertion {
        step: usize,
        op: String,
        rank: usize,
        detail: String,
    },

    #[error("invalid root placement: {0}")]
    RootPlacement(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("negative moment requires strictly positive coordinates")]
    NegativeMomentAtZero,

    #[error("instance is not completely specified (missing normals)")]
    NotCompletelySpecified,
}
