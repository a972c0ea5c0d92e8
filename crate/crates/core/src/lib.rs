//! Constructive solver for Mochon-style weak coin flipping assignments.
//!
//! Given a finitely supported signed weight function (an f-assignment), this
//! crate decomposes it into positively weighted f0 / monomial pieces, builds
//! the associated matrix instances, runs the ellipsoid-geometry iteration to
//! assemble the orthogonal matrix solving each piece, and emits machine
//! checkable certificates for the semidefinite and vector constraints.

pub mod assignments;
pub mod decompose;
pub mod ellipsoid;
pub mod error;
pub mod instances;
pub mod solvers;
pub mod verify;

pub use assignments::{Assignment, PolySpec, ValidityReport, Verdict};
pub use error::Error;
pub use instances::{ExtendedMatrixInstance, InstanceShape, LimitSymMatrix};
pub use solvers::{IterationSchedule, ScheduleCase, SolvedTerm};
pub use verify::{CertVerdict, SolutionCertificate, VerifyConfig};

pub type Result<T> = std::result::Result<T, Error>;
